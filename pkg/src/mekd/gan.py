"""Stage 1: adversarial training of the generator against real data.

The outer loop alternates k discriminator updates with one generator
update.  Two variants are supported: the vanilla cross-entropy game and
wgan-gp, whose gradient penalty is built by unrolling the input-gradient
of the critic as explicit graph operations (exact for MLPs: smooth
activation derivatives are expressed through the activation values,
piecewise-linear ones contribute constant masks).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .data import Dataset, batches
from .nets import Network
from .optim import SGD, TrainingDiverged, multistep_lr

EPS = 1e-7

PRIOR_KINDS = ("gaussian", "uniform", "simplex-dirichlet")
VARIANTS = ("vanilla", "wgan-gp")
GENERATOR_LOSS_MODES = ("minimize-log1m", "non-saturating")


@dataclass(frozen=True)
class NoisePrior:
    kind: str = "gaussian"
    dim: int = 2

    def __post_init__(self):
        if self.kind not in PRIOR_KINDS:
            raise ValueError(f"unknown noise prior {self.kind!r}; expected one of {PRIOR_KINDS}")
        if self.dim < 2:
            raise ValueError(f"noise dimension must be >= 2, got {self.dim}")


@dataclass(frozen=True)
class GanConfig:
    m: int = 64
    k: int = 1
    lr_G: float = 0.05
    lr_D: float = 0.05
    epochs: int = 200
    variant: str = "vanilla"
    gp_lambda: float = 10.0
    generator_loss_mode: str = "non-saturating"
    momentum: float = 0.5
    milestones: tuple[int, ...] = ()
    gamma: float = 0.1
    clip_norm: float | None = None

    def __post_init__(self):
        if self.m < 1 or self.k < 1 or self.epochs < 0:
            raise ValueError("m and k must be >= 1 and epochs >= 0")
        if self.lr_G <= 0 or self.lr_D <= 0:
            raise ValueError("learning rates must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown GAN variant {self.variant!r}")
        if self.generator_loss_mode not in GENERATOR_LOSS_MODES:
            raise ValueError(f"unknown generator loss mode {self.generator_loss_mode!r}")
        if self.gp_lambda < 0:
            raise ValueError("gp_lambda must be >= 0")
        if self.clip_norm is not None and self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive when set")


def sample_noise(prior: NoisePrior, m: int, rng: np.random.Generator) -> np.ndarray:
    if prior.kind == "gaussian":
        return rng.standard_normal((m, prior.dim))
    if prior.kind == "uniform":
        return rng.uniform(-1.0, 1.0, size=(m, prior.dim))
    return rng.dirichlet(np.ones(prior.dim), size=m)


# -- losses ---------------------------------------------------------------


def _clamped(d: Tensor) -> Tensor:
    return ad.clip(d, EPS, 1.0 - EPS)


def discriminator_loss(D: Network, G: Network, x_batch, z_batch) -> Tensor:
    """L_D = -(1/m) sum[ log D(x) + log(1 - D(G(z))) ]."""
    x_data = x_batch.data if isinstance(x_batch, Tensor) else np.asarray(x_batch)
    if len(x_data) != len(z_batch):
        raise ValueError(f"batch size mismatch: {len(x_data)} real vs {len(z_batch)} noise")
    with no_grad():
        fake = G.generate(ad.constant(z_batch))
    d_real = _clamped(D.discriminate(x_batch))
    d_fake = _clamped(D.discriminate(fake))
    return -(ad.log(d_real).mean() + ad.log(1.0 - d_fake).mean())


def generator_loss(D: Network, G: Network, z_batch, mode: str) -> Tensor:
    if mode not in GENERATOR_LOSS_MODES:
        raise ValueError(f"unknown generator loss mode {mode!r}")
    fake = G.generate(ad.constant(z_batch))
    d_fake = _clamped(D.discriminate(fake))
    if mode == "minimize-log1m":
        return ad.log(1.0 - d_fake).mean()
    return -ad.log(d_fake).mean()


def score_and_input_gradient(D: Network, x: Tensor) -> tuple[Tensor, Tensor]:
    """Critic score s(x) and d s/d x, both as graph nodes.

    The input-gradient is unrolled layer by layer so the result stays
    differentiable with respect to the critic's parameters; this is what
    lets the gradient penalty train by ordinary backprop.
    """
    act = D.spec.activation
    t = x
    hidden: list[tuple[Tensor, Tensor]] = []  # (pre-activation, activation)
    for i, (w, b) in enumerate(D.layers):
        a = ad.matmul(t, w) + b
        if i < len(D.layers) - 1:
            if act == "relu":
                h = ad.relu(a)
            elif act == "leaky_relu":
                h = ad.leaky_relu(a, 0.2)
            elif act == "tanh":
                h = ad.tanh(a)
            else:
                h = ad.sigmoid(a)
            hidden.append((a, h))
            t = h
        else:
            score = a

    m = x.data.shape[0]
    delta = ad.constant(np.ones((m, 1)))
    for i in reversed(range(len(D.layers))):
        w, _ = D.layers[i]
        gamma = ad.matmul(delta, ad.transpose(w))
        if i == 0:
            return score, gamma
        a_prev, h_prev = hidden[i - 1]
        if act == "relu":
            delta = gamma * ad.constant((a_prev.data > 0).astype(float))
        elif act == "leaky_relu":
            delta = gamma * ad.constant(np.where(a_prev.data > 0, 1.0, 0.2))
        elif act == "tanh":
            delta = gamma * (1.0 - ad.square(h_prev))
        else:
            delta = gamma * (h_prev * (1.0 - h_prev))
    raise AssertionError("unreachable: network has at least one layer")


def gradient_penalty(D: Network, x_real: np.ndarray, x_fake: np.ndarray,
                     rng: np.random.Generator) -> Tensor:
    """(1/m) sum (||grad_xhat D(xhat)||_2 - 1)^2 on random interpolates."""
    m = len(x_real)
    t = rng.uniform(size=(m, 1))
    xhat = ad.constant(t * x_real + (1.0 - t) * x_fake)
    _, grad = score_and_input_gradient(D, xhat)
    norms = ad.sqrt(ad.reduce_sum(ad.square(grad), axis=1))
    return ad.reduce_mean(ad.square(norms - 1.0))


def wgan_discriminator_loss(D: Network, G: Network, x_batch: np.ndarray,
                            z_batch: np.ndarray, gp_lambda: float,
                            rng: np.random.Generator) -> tuple[Tensor, Tensor]:
    with no_grad():
        fake = G.generate(ad.constant(z_batch))
    loss = D.score(fake).mean() - D.score(ad.constant(x_batch)).mean()
    gp = gradient_penalty(D, np.asarray(x_batch), fake.data, rng)
    return loss + gp * gp_lambda, gp


def wgan_generator_loss(D: Network, G: Network, z_batch: np.ndarray) -> Tensor:
    fake = G.generate(ad.constant(z_batch))
    return -D.score(fake).mean()


# -- training loop --------------------------------------------------------


def _epoch_rng(seed, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(21, epoch, stream)))


def run_gan_epoch(G: Network, D: Network, ds: Dataset, cfg: GanConfig,
                  prior: NoisePrior, seed, epoch: int,
                  opt_G: SGD, opt_D: SGD) -> list[dict]:
    """One epoch of Alg.-style alternation; returns this epoch's log rows."""
    shuffle_rng = _epoch_rng(seed, epoch, 0)
    noise_rng = _epoch_rng(seed, epoch, 1)
    gp_rng = _epoch_rng(seed, epoch, 2)
    idx_batches = batches(ds, min(cfg.m, len(ds)), seed=shuffle_rng, shuffle=True)

    rows = []
    step = 0
    for group_start in range(0, len(idx_batches), cfg.k):
        group = idx_batches[group_start:group_start + cfg.k]
        loss_d = gp_value = float("nan")
        for idx in group:
            x_batch = ds.samples[idx]
            z_batch = sample_noise(prior, len(idx), noise_rng)
            opt_D.zero_grad()
            opt_G.zero_grad()
            if cfg.variant == "vanilla":
                loss = discriminator_loss(D, G, x_batch, z_batch)
                gp_value = 0.0
            else:
                loss, gp = wgan_discriminator_loss(D, G, x_batch, z_batch,
                                                   cfg.gp_lambda, gp_rng)
                gp_value = gp.item()
            loss.backward()
            opt_D.step()
            loss_d = loss.item()

        z_batch = sample_noise(prior, cfg.m, noise_rng)
        opt_D.zero_grad()
        opt_G.zero_grad()
        if cfg.variant == "vanilla":
            loss_g = generator_loss(D, G, z_batch, cfg.generator_loss_mode)
        else:
            loss_g = wgan_generator_loss(D, G, z_batch)
        loss_g.backward()
        opt_G.step()

        rows.append({"epoch": epoch, "step": step, "L_D": loss_d,
                     "L_G": loss_g.item(), "gp": gp_value})
        step += 1
    return rows


def train_gan(G: Network, D: Network, ds: Dataset, cfg: GanConfig,
              prior: NoisePrior, seed, epoch_callback=None) -> tuple[Network, list[dict]]:
    """Train G against D on ds; returns (frozen G, per-step log rows)."""
    if G.spec.role != "generator" or D.spec.role != "discriminator":
        raise ValueError("train_gan needs a generator and a discriminator")
    if G.spec.input_dim != ds.num_classes:
        raise ValueError(
            f"generator latent width {G.spec.input_dim} != class count {ds.num_classes}; "
            f"the latent dimension must equal the category count")
    if prior.dim != ds.num_classes:
        raise ValueError(f"noise prior dim {prior.dim} != class count {ds.num_classes}")
    if G.spec.output_dim != ds.n:
        raise ValueError(f"generator output width {G.spec.output_dim} != sample width {ds.n}")

    opt_G = SGD(G.params, cfg.lr_G, momentum=cfg.momentum, clip_norm=cfg.clip_norm)
    opt_D = SGD(D.params, cfg.lr_D, momentum=cfg.momentum, clip_norm=cfg.clip_norm)
    log: list[dict] = []
    for epoch in range(cfg.epochs):
        opt_G.lr = multistep_lr(epoch, cfg.lr_G, list(cfg.milestones), cfg.gamma)
        opt_D.lr = multistep_lr(epoch, cfg.lr_D, list(cfg.milestones), cfg.gamma)
        try:
            rows = run_gan_epoch(G, D, ds, cfg, prior, seed, epoch, opt_G, opt_D)
        except ad.NonFiniteError as e:
            raise TrainingDiverged(
                f"non-finite value in GAN training at epoch {epoch} "
                f"(op {e.op!r}; last logged rows: {log[-2:]})") from e
        log.extend(rows)
        if epoch_callback is not None:
            epoch_callback(epoch, G, D, rows)
    G.freeze()
    return G, log
