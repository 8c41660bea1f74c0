"""Flat INI run configuration: every key has a default, order is canonical.

The serialized form materializes every key in schema order, so two
configs are equal iff their serializations are byte-identical; the
sha256 of that text is the provenance hash embedded in results rows.
"""

from __future__ import annotations

import configparser
import hashlib
import io


class ConfigError(ValueError):
    """Invalid, unknown, or uncoercible configuration values."""


# (section, key) -> (default, kind); kind drives parsing and formatting.
SCHEMA: dict[str, dict[str, tuple[object, str]]] = {
    "run": {
        "seed": (0, "int"),
        "out_dir": ("runs/default", "str"),
    },
    "data": {
        "kind": ("blobs", "str"),                # blobs | mnist
        "num_classes": (4, "int"),
        "n": (64, "int"),
        "per_class": (500, "int"),
        "per_class_test": (100, "int"),
        "spread": (0.05, "float"),
        "centroid_seed": (7, "int"),
        "value_lo": (0.0, "float"),
        "value_hi": (1.0, "float"),
        "mnist_dir": ("", "str"),
        "train_subset": (5000, "int"),
        "test_subset": (1000, "int"),
        "split": ("same", "str"),                # same | disjoint (GAN vs distill data)
    },
    "teacher": {
        "hidden": ((128, 64), "ints"),
        "activation": ("relu", "str"),
        "epochs": (60, "int"),
        "m": (64, "int"),
        "lr": (0.2, "float"),
        "momentum": (0.9, "float"),
        "milestones": ((40, 52), "ints"),
        "gamma": (0.1, "float"),
        "hflip": (False, "bool"),
        "crop_pad": (0, "int"),
    },
    "student": {
        "hidden": ((32,), "ints"),
        "activation": ("relu", "str"),
    },
    "generator": {
        "hidden": ((64, 128), "ints"),
        "activation": ("relu", "str"),
    },
    "discriminator": {
        "hidden": ((128, 64), "ints"),
        "activation": ("leaky_relu", "str"),
    },
    "gan": {
        "m": (64, "int"),
        "k": (1, "int"),
        "lr_g": (0.05, "float"),
        "lr_d": (0.05, "float"),
        "epochs": (150, "int"),
        "variant": ("wgan-gp", "str"),   # vanilla is available but collapses modes at this scale
        "gp_lambda": (10.0, "float"),
        "generator_loss_mode": ("non-saturating", "str"),
        "momentum": (0.5, "float"),
        "milestones": ((100, 130), "ints"),
        "gamma": (0.1, "float"),
        "prior": ("gaussian", "str"),
        "snapshot_epochs": ((10, 60, 149), "ints"),
        "clip_norm": (5.0, "float"),
    },
    "distill": {
        "p_norm": (1, "int"),
        "alpha": (1.0, "float"),
        "beta": (1.0, "float"),
        "tau": (1.0, "float"),
        "kd_tau": (4.0, "float"),
        "gen_tau": (1.0, "float"),
        "gen_input": ("probs", "str"),
        "m": (64, "int"),
        "epochs": (50, "int"),
        "lr": (0.1, "float"),
        "momentum": (0.9, "float"),
        "milestones": ((30, 42), "ints"),
        "gamma": (0.1, "float"),
        "cache_teacher": (True, "bool"),
    },
}


def _parse_value(raw: str, kind: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if kind == "ints":
            return tuple(int(part) for part in raw.split(",") if part.strip() != "")
        return raw
    except ValueError:
        raise ConfigError(f"cannot parse {where} = {raw!r} as {kind}") from None


def _format_value(value, kind: str) -> str:
    if kind == "bool":
        return "true" if value else "false"
    if kind == "float":
        return repr(float(value))
    if kind == "ints":
        return ",".join(str(v) for v in value)
    return str(value)


class RunConfig:
    """Immutable view over a fully-defaulted {section: {key: value}} table."""

    def __init__(self, values: dict[str, dict[str, object]]):
        self._values = values

    @classmethod
    def defaults(cls) -> "RunConfig":
        return cls({s: {k: d for k, (d, _) in keys.items()} for s, keys in SCHEMA.items()})

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None)
        try:
            parser.read_string(text)
        except configparser.Error as e:
            raise ConfigError(f"malformed config: {e}") from None
        values = cls.defaults()._values
        values = {s: dict(keys) for s, keys in values.items()}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ConfigError(f"unknown config section [{section}]")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"unknown config key {key!r} in section [{section}]")
                kind = SCHEMA[section][key][1]
                values[section][key] = _parse_value(raw, kind, f"[{section}] {key}")
        return cls(values)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                return cls.from_ini(fh.read())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None

    def get(self, section: str, key: str):
        try:
            return self._values[section][key]
        except KeyError:
            raise KeyError(f"no config entry [{section}] {key}") from None

    def replace(self, section: str, key: str, value) -> "RunConfig":
        if section not in SCHEMA or key not in SCHEMA[section]:
            raise ConfigError(f"unknown config entry [{section}] {key}")
        values = {s: dict(keys) for s, keys in self._values.items()}
        values[section][key] = value
        return RunConfig(values)

    def serialize(self) -> str:
        out = io.StringIO()
        for section, keys in SCHEMA.items():
            out.write(f"[{section}]\n")
            for key, (_, kind) in keys.items():
                out.write(f"{key} = {_format_value(self._values[section][key], kind)}\n")
            out.write("\n")
        return out.getvalue()

    def hash(self) -> str:
        """Provenance hash; out_dir is excluded so relocating a run keeps it."""
        lines = [ln for ln in self.serialize().splitlines()
                 if not ln.startswith("out_dir = ")]
        return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]

    def __eq__(self, other):
        return isinstance(other, RunConfig) and self._values == other._values

    def __repr__(self):
        return f"RunConfig(hash={self.hash()})"
