"""Experiment driver: teacher -> GAN -> distill -> eval, all reproducible.

Every stage derives its randomness from the single run seed through
disjoint spawn-key families, so a config (which embeds the seed) fully
determines every checkpoint byte and every CSV row.  Outputs live in the
config's out_dir:

    teacher.ckpt, generator.ckpt, generator_epoch*.ckpt, student_<method>.ckpt
    teacher_log.csv, gan_log.csv, gan_summary.csv,
    distill_<method>_log.csv, results.csv, ablation.csv, gradient_profiles.csv
"""

from __future__ import annotations

import logging
import os
import re

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .autodiff import no_grad
from .config import ConfigError, RunConfig
from .data import Dataset, augment, batches, parse_idx, synth_blobs
from .distill import BlindTeacher, DistillConfig, baseline_kd, distill, generation_distance, kld_loss
from .gan import GanConfig, NoisePrior, sample_noise, train_gan
from .metrics import accuracy, frechet_distance, record_logit_gradients, supervised_ce_loss
from .nets import Network, NetworkSpec, build_network
from .optim import SGD, multistep_lr

log = logging.getLogger("mekd")

# Spawn-key namespaces (first element) for the run seed.
KEY_DATA_TRAIN = 1
KEY_DATA_TEST = 2
KEY_TEACHER_EPOCH = 41      # (41, epoch)
KEY_FID_NOISE = 51          # (51, tag)
KEY_PROFILE = 61
INIT_TEACHER = 201
INIT_STUDENT = 202
INIT_GENERATOR = 203
INIT_DISCRIMINATOR = 204


def _seq(seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(seed, spawn_key=tuple(key))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


def write_csv(path, header: list[str], rows: list[list]) -> None:
    """Write atomically: temp file in place, then rename."""
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    os.replace(tmp, path)


def append_results_row(path, header: list[str], row: list) -> None:
    rows = []
    if os.path.exists(path):
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        rows = [line.split(",") for line in lines[1:] if line]
    rows.append([_fmt(v) for v in row])
    write_csv(path, header, rows)


# -- datasets ---------------------------------------------------------------


def load_dataset(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    kind = cfg.get("data", "kind")
    seed = cfg.get("run", "seed")
    lo, hi = cfg.get("data", "value_lo"), cfg.get("data", "value_hi")
    if kind == "blobs":
        train = synth_blobs(cfg.get("data", "num_classes"), cfg.get("data", "n"),
                            cfg.get("data", "per_class"), cfg.get("data", "spread"),
                            seed=_seq(seed, KEY_DATA_TRAIN),
                            centroid_seed=cfg.get("data", "centroid_seed"))
        test = synth_blobs(cfg.get("data", "num_classes"), cfg.get("data", "n"),
                           cfg.get("data", "per_class_test"), cfg.get("data", "spread"),
                           seed=_seq(seed, KEY_DATA_TEST),
                           centroid_seed=cfg.get("data", "centroid_seed"))
    elif kind == "mnist":
        train, test = _load_mnist(cfg)
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    if (lo, hi) != (0.0, 1.0):
        train, test = train.rescale((lo, hi)), test.rescale((lo, hi))
    return train, test


MNIST_FILES = ("train-images-idx3-ubyte", "train-labels-idx1-ubyte",
               "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte")


def mnist_available(cfg: RunConfig) -> bool:
    d = cfg.get("data", "mnist_dir")
    return bool(d) and all(os.path.exists(os.path.join(d, f)) for f in MNIST_FILES)


def _load_mnist(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    d = cfg.get("data", "mnist_dir")
    if not mnist_available(cfg):
        raise ConfigError(
            f"mnist files not found under {d!r}; expected {', '.join(MNIST_FILES)}")
    def read(name):
        with open(os.path.join(d, name), "rb") as fh:
            return fh.read()
    train = parse_idx(read(MNIST_FILES[0]), read(MNIST_FILES[1]), num_classes=10)
    test = parse_idx(read(MNIST_FILES[2]), read(MNIST_FILES[3]), num_classes=10)
    return (train.take(np.arange(cfg.get("data", "train_subset"))),
            test.take(np.arange(cfg.get("data", "test_subset"))))


def gan_and_distill_splits(cfg: RunConfig, train: Dataset) -> tuple[Dataset, Dataset]:
    """Which samples stage 1 and stage 2 each see; 'same' shares everything."""
    mode = cfg.get("data", "split")
    if mode == "same":
        return train, train
    if mode == "disjoint":
        half = len(train) // 2
        return train.take(np.arange(half)), train.take(np.arange(half, len(train)))
    raise ConfigError(f"unknown data split {mode!r}")


# -- network construction ----------------------------------------------------


def _spec(cfg: RunConfig, which: str, n: int, num_classes: int) -> NetworkSpec:
    hidden = cfg.get(which, "hidden")
    activation = cfg.get(which, "activation")
    rng_range = (cfg.get("data", "value_lo"), cfg.get("data", "value_hi"))
    if which in ("teacher", "student"):
        return NetworkSpec("classifier", n, hidden, num_classes, activation)
    if which == "generator":
        return NetworkSpec("generator", num_classes, hidden, n, activation,
                           output_range=rng_range)
    return NetworkSpec("discriminator", n, hidden, 1, activation)


def build_role(cfg: RunConfig, which: str, n: int, num_classes: int) -> Network:
    init_key = {"teacher": INIT_TEACHER, "student": INIT_STUDENT,
                "generator": INIT_GENERATOR, "discriminator": INIT_DISCRIMINATOR}[which]
    return build_network(_spec(cfg, which, n, num_classes), num_classes,
                         _seq(cfg.get("run", "seed"), init_key))


def _load_role(cfg: RunConfig, which: str, n: int, num_classes: int, path) -> Network:
    net = build_role(cfg, which, n, num_classes)
    try:
        net.load_state_dict(checkpoint.load(path))
    except FileNotFoundError:
        raise ConfigError(f"missing checkpoint {path}; run the earlier stage first") from None
    return net


def gan_config(cfg: RunConfig) -> GanConfig:
    return GanConfig(m=cfg.get("gan", "m"), k=cfg.get("gan", "k"),
                     lr_G=cfg.get("gan", "lr_g"), lr_D=cfg.get("gan", "lr_d"),
                     epochs=cfg.get("gan", "epochs"), variant=cfg.get("gan", "variant"),
                     gp_lambda=cfg.get("gan", "gp_lambda"),
                     generator_loss_mode=cfg.get("gan", "generator_loss_mode"),
                     momentum=cfg.get("gan", "momentum"),
                     milestones=cfg.get("gan", "milestones"), gamma=cfg.get("gan", "gamma"),
                     clip_norm=cfg.get("gan", "clip_norm") or None)


def distill_config(cfg: RunConfig, method: str) -> DistillConfig:
    base = dict(p_norm=cfg.get("distill", "p_norm"), alpha=cfg.get("distill", "alpha"),
                beta=cfg.get("distill", "beta"), tau=cfg.get("distill", "tau"),
                gen_tau=cfg.get("distill", "gen_tau"), gen_input=cfg.get("distill", "gen_input"),
                m=cfg.get("distill", "m"), epochs=cfg.get("distill", "epochs"),
                lr=cfg.get("distill", "lr"), momentum=cfg.get("distill", "momentum"),
                milestones=cfg.get("distill", "milestones"), gamma=cfg.get("distill", "gamma"),
                cache_teacher=cfg.get("distill", "cache_teacher"))
    if method == "kd":
        base.update(alpha=0.0, tau=cfg.get("distill", "kd_tau"))
    elif method != "mekd":
        raise ConfigError(f"unknown method {method!r}; expected mekd or kd")
    return DistillConfig(**base)


# -- stage: teacher ----------------------------------------------------------


def train_teacher(cfg: RunConfig, train: Dataset, test: Dataset) -> tuple[Network, list[dict]]:
    seed = cfg.get("run", "seed")
    net = build_role(cfg, "teacher", train.n, train.num_classes)
    opt = SGD(net.params, cfg.get("teacher", "lr"), momentum=cfg.get("teacher", "momentum"))
    labels = train.labels  # supervised pre-training is the teacher's privilege
    use_hflip = cfg.get("teacher", "hflip")
    crop_pad = cfg.get("teacher", "crop_pad")
    rows = []
    for epoch in range(cfg.get("teacher", "epochs")):
        lr = multistep_lr(epoch, cfg.get("teacher", "lr"),
                          list(cfg.get("teacher", "milestones")), cfg.get("teacher", "gamma"))
        opt.lr = lr
        rng = np.random.default_rng(_seq(seed, KEY_TEACHER_EPOCH, epoch))
        total = 0.0
        idx_batches = batches(train, min(cfg.get("teacher", "m"), len(train)),
                              seed=rng, shuffle=True)
        for idx in idx_batches:
            xb = train.samples[idx]
            if use_hflip or crop_pad > 0:
                xb = np.stack([
                    augment(row, hflip_flag=use_hflip and rng.random() < 0.5,
                            crop_pad=crop_pad, rng=rng)
                    for row in xb])
            onehot = np.zeros((len(idx), train.num_classes))
            onehot[np.arange(len(idx)), labels[idx]] = 1.0
            probs = net.classify(ad.constant(xb))
            picked = (probs * ad.constant(onehot)).sum(axis=1)
            loss = -ad.log(ad.clip(picked, 1e-12, 1.0)).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += loss.item()
        rows.append({"epoch": epoch, "loss": total / len(idx_batches),
                     "train_acc": accuracy(net, train), "test_acc": accuracy(net, test),
                     "lr": lr})
        log.debug("teacher epoch %d: %s", epoch, rows[-1])
    return net, rows


def run_train_teacher(cfg: RunConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    train, test = load_dataset(cfg)
    net, rows = train_teacher(cfg, train, test)
    checkpoint.save(os.path.join(out_dir, "teacher.ckpt"), net.state_dict())
    write_csv(os.path.join(out_dir, "teacher_log.csv"),
              ["epoch", "loss", "train_acc", "test_acc", "lr"],
              [[r["epoch"], r["loss"], r["train_acc"], r["test_acc"], r["lr"]] for r in rows])
    summary = {"teacher_train_acc": rows[-1]["train_acc"] if rows else None,
               "teacher_test_acc": rows[-1]["test_acc"] if rows else accuracy(net, test)}
    log.info("teacher: train_acc=%s test_acc=%s", summary["teacher_train_acc"],
             summary["teacher_test_acc"])
    return summary


# -- stage: GAN ---------------------------------------------------------------


def generator_fid(cfg: RunConfig, G: Network, real: Dataset, tag: int = 0) -> float:
    """Fréchet distance between noise-generated images and the real set."""
    seed = cfg.get("run", "seed")
    prior = NoisePrior(cfg.get("gan", "prior"), real.num_classes)
    rng = np.random.default_rng(_seq(seed, KEY_FID_NOISE, tag))
    count = min(len(real), 2000)
    z = sample_noise(prior, count, rng)
    with no_grad():
        fake = G.generate(ad.constant(z)).data
    return frechet_distance(fake, real.samples[:count])


def run_train_gan(cfg: RunConfig, out_dir: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    train, _ = load_dataset(cfg)
    gan_ds, _ = gan_and_distill_splits(cfg, train)
    seed = cfg.get("run", "seed")
    G = build_role(cfg, "generator", train.n, train.num_classes)
    D = build_role(cfg, "discriminator", train.n, train.num_classes)
    prior = NoisePrior(cfg.get("gan", "prior"), train.num_classes)
    snapshots = set(cfg.get("gan", "snapshot_epochs"))

    def on_epoch(epoch, G_now, _D, _rows):
        if epoch in snapshots:
            path = os.path.join(out_dir, f"generator_epoch{epoch:04d}.ckpt")
            checkpoint.save(path, G_now.state_dict())

    G, gan_log = train_gan(G, D, gan_ds, gan_config(cfg), prior, seed,
                           epoch_callback=on_epoch)
    checkpoint.save(os.path.join(out_dir, "generator.ckpt"), G.state_dict())
    write_csv(os.path.join(out_dir, "gan_log.csv"),
              ["epoch", "step", "L_D", "L_G", "gp"],
              [[r["epoch"], r["step"], r["L_D"], r["L_G"], r["gp"]] for r in gan_log])
    fid = generator_fid(cfg, G, gan_ds)
    write_csv(os.path.join(out_dir, "gan_summary.csv"),
              ["gen_fid", "epochs", "config_hash"],
              [[fid, cfg.get("gan", "epochs"), cfg.hash()]])
    log.info("generator FID: %s", fid)
    return {"gen_fid": fid}


def _read_gan_fid(out_dir: str) -> float | None:
    path = os.path.join(out_dir, "gan_summary.csv")
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    return float(lines[1].split(",")[0]) if len(lines) > 1 else None


# -- stage: distillation -------------------------------------------------------


RESULTS_HEADER = ["method", "seed", "teacher_acc", "student_acc", "gen_fid",
                  "alpha", "beta", "p_norm", "tau", "config_hash"]


def run_distill(cfg: RunConfig, out_dir: str, method: str) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    train, test = load_dataset(cfg)
    _, distill_ds = gan_and_distill_splits(cfg, train)
    seed = cfg.get("run", "seed")
    dcfg = distill_config(cfg, method)

    teacher = _load_role(cfg, "teacher", train.n, train.num_classes,
                         os.path.join(out_dir, "teacher.ckpt"))
    teacher.freeze()
    blind = BlindTeacher.from_network(teacher, cache=dcfg.cache_teacher)
    student = build_role(cfg, "student", train.n, train.num_classes)

    if method == "kd":
        student, d_log = baseline_kd(student, blind, distill_ds, dcfg, seed,
                                     eval_train=train, eval_test=test)
    else:
        G = None
        if dcfg.alpha > 0:
            G = _load_role(cfg, "generator", train.n, train.num_classes,
                           os.path.join(out_dir, "generator.ckpt"))
            G.freeze()
        student, d_log = distill(student, blind, G, distill_ds, dcfg, seed,
                                 eval_train=train, eval_test=test)

    checkpoint.save(os.path.join(out_dir, f"student_{method}.ckpt"), student.state_dict())
    write_csv(os.path.join(out_dir, f"distill_{method}_log.csv"),
              ["epoch", "L_total", "L_distance", "L_kld", "train_acc", "test_acc", "lr"],
              [[r["epoch"], r["L_total"], r["L_distance"], r["L_kld"],
                r["train_acc"], r["test_acc"], r["lr"]] for r in d_log])

    teacher_acc = accuracy(teacher, test)
    student_acc = accuracy(student, test)
    gen_fid = _read_gan_fid(out_dir) if method == "mekd" else None
    row = [method, seed, teacher_acc, student_acc, gen_fid,
           dcfg.alpha, dcfg.beta, dcfg.p_norm, dcfg.tau, cfg.hash()]
    append_results_row(os.path.join(out_dir, "results.csv"), RESULTS_HEADER, row)
    log.info("distill[%s]: teacher_acc=%s student_acc=%s", method, teacher_acc, student_acc)
    return {"method": method, "teacher_acc": teacher_acc, "student_acc": student_acc,
            "gen_fid": gen_fid, "queries": blind.query_count}


# -- stage: FID ablation --------------------------------------------------------


def run_ablation_fid(cfg: RunConfig, out_dir: str) -> list[dict]:
    train, test = load_dataset(cfg)
    _, distill_ds = gan_and_distill_splits(cfg, train)
    seed = cfg.get("run", "seed")
    pattern = re.compile(r"generator_epoch(\d+)\.ckpt$")
    found = sorted((int(m.group(1)), os.path.join(out_dir, name))
                   for name in os.listdir(out_dir) if (m := pattern.search(name)))
    if len(found) < 2:
        raise ConfigError(
            f"FID ablation needs >= 2 generator snapshots in {out_dir}; found {len(found)} "
            f"(set [gan] snapshot_epochs and rerun train-gan)")

    teacher = _load_role(cfg, "teacher", train.n, train.num_classes,
                         os.path.join(out_dir, "teacher.ckpt"))
    teacher.freeze()
    dcfg = distill_config(cfg, "mekd")

    entries = []
    for epoch, path in found:
        G = _load_role(cfg, "generator", train.n, train.num_classes, path)
        G.freeze()
        entries.append((generator_fid(cfg, G, distill_ds, tag=epoch), epoch, G))
    entries.sort(key=lambda t: t[0])

    rows = []
    for fid, epoch, G in entries:
        blind = BlindTeacher.from_network(teacher, cache=dcfg.cache_teacher)
        student = build_role(cfg, "student", train.n, train.num_classes)
        student, _ = distill(student, blind, G, distill_ds, dcfg, seed)
        rows.append({"gen_fid": fid, "gan_epoch": epoch,
                     "student_acc": accuracy(student, test), "seed": seed,
                     "config_hash": cfg.hash()})
    write_csv(os.path.join(out_dir, "ablation.csv"),
              ["gen_fid", "gan_epoch", "student_acc", "seed", "config_hash"],
              [[r["gen_fid"], r["gan_epoch"], r["student_acc"], r["seed"], r["config_hash"]]
               for r in rows])
    return rows


# -- stage: eval and profiles ----------------------------------------------------


def run_eval(cfg: RunConfig, out_dir: str) -> dict:
    train, test = load_dataset(cfg)
    out: dict = {}
    teacher = _load_role(cfg, "teacher", train.n, train.num_classes,
                         os.path.join(out_dir, "teacher.ckpt"))
    out["teacher_acc"] = accuracy(teacher, test)
    for method in ("mekd", "kd"):
        path = os.path.join(out_dir, f"student_{method}.ckpt")
        if os.path.exists(path):
            student = _load_role(cfg, "student", train.n, train.num_classes, path)
            out[f"student_acc_{method}"] = accuracy(student, test)
    gen_path = os.path.join(out_dir, "generator.ckpt")
    if os.path.exists(gen_path):
        G = _load_role(cfg, "generator", train.n, train.num_classes, gen_path)
        gan_ds, _ = gan_and_distill_splits(cfg, train)
        out["gen_fid"] = generator_fid(cfg, G, gan_ds)
    for key, value in out.items():
        log.info("eval %s = %s", key, value)
    return out


def run_grad_profile(cfg: RunConfig, out_dir: str, samples: int = 8) -> list[list]:
    """Per-sample logit-gradient profiles for CE / KD / MEKD-L1 / MEKD-L2."""
    train, test = load_dataset(cfg)
    seed = cfg.get("run", "seed")
    teacher = _load_role(cfg, "teacher", train.n, train.num_classes,
                         os.path.join(out_dir, "teacher.ckpt"))
    teacher.freeze()
    blind = BlindTeacher.from_network(teacher)
    G = _load_role(cfg, "generator", train.n, train.num_classes,
                   os.path.join(out_dir, "generator.ckpt"))
    G.freeze()
    student_path = os.path.join(out_dir, "student_mekd.ckpt")
    student = build_role(cfg, "student", train.n, train.num_classes)
    if os.path.exists(student_path):
        student.load_state_dict(checkpoint.load(student_path))
    kd_tau = cfg.get("distill", "kd_tau")
    alpha, beta = cfg.get("distill", "alpha"), cfg.get("distill", "beta")

    rng = np.random.default_rng(_seq(seed, KEY_PROFILE))
    picks = rng.choice(len(test), size=min(samples, len(test)), replace=False)
    label_values = test.labels  # ground-truth ordering is part of the figure
    rows = []
    for i in picks:
        x = test.samples[i]
        k = int(label_values[i])
        p_t = blind.classify(x.reshape(1, -1))

        def kd_loss(logits):
            return kld_loss(p_t, ad.softmax(logits), tau=kd_tau)

        def mekd_loss(logits, p_norm):
            dist = generation_distance(G, ad.softmax(logits), p_t, p_norm)
            return dist * alpha + kld_loss(p_t, ad.softmax(logits), tau=1.0) * beta

        evaluators = [
            ("ce", lambda lg: supervised_ce_loss(lg, k)),
            ("kd", kd_loss),
            ("mekd-l1", lambda lg: mekd_loss(lg, 1)),
            ("mekd-l2", lambda lg: mekd_loss(lg, 2)),
        ]
        for name, fn in evaluators:
            profile = record_logit_gradients(student, fn, x, k)
            rows.append([name, int(i), k] + [float(v) for v in profile])
    header = (["evaluator", "sample_index", "true_class"]
              + [f"g{j}" for j in range(test.num_classes)])
    write_csv(os.path.join(out_dir, "gradient_profiles.csv"), header, rows)
    return rows
