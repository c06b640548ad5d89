"""Flat key=value run configuration.

One UTF-8 text file, ``#`` comments, dotted keys for grouping. Unknown keys
are rejected; missing keys take the documented defaults; the fully resolved
mapping is echoed next to every run so a run can be reproduced from its own
output directory.
"""
from __future__ import annotations

from .layers import ACTIVATIONS, VARIANTS
from .odeint import METHODS
from .training import GRAD_MODES


class ConfigError(Exception):
    pass


def _bool(text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ValueError(f"expected true or false, got {text!r}")


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


# key -> (parser, default, help)
KEYS = {
    "seed": (int, 0, "master seed for init and data order"),
    "variant": (str, "bfno", f"ODE-function body, one of {VARIANTS}"),
    "N": (int, 2, "number of spectral layers"),
    "L": (int, 2, "parallel kernels per spectral layer"),
    "dim_g": (int, 16, "encoded channel width"),
    "dim_h": (int, 0, "state channel width; 0 derives data channels + augment"),
    "augment": (int, 0, "extra zero-initialized state channels"),
    "activation": (str, "relu", f"layer activation, one of {ACTIVATIONS}"),
    "kernel_sharing": (str, "per-channel", "spectral kernels per-channel or shared"),
    "fno_modes": (int, 4, "kept modes per axis for the fno variant"),
    "conv_width": (int, 0, "conv-variant hidden channels; 0 uses dim_g"),
    "solver.method": (str, "rk4", f"one of {METHODS}"),
    "solver.t0": (float, 0.0, "integration start time"),
    "solver.t1": (float, 1.0, "integration end time"),
    "solver.fixed_steps": (int, 4, "step count for euler/rk4"),
    "solver.rtol": (float, 0.001, "dopri5 relative tolerance"),
    "solver.atol": (float, 0.001, "dopri5 absolute tolerance"),
    "solver.h_init": (float, 0.0, "dopri5 initial step; 0 uses (t1-t0)/100"),
    "solver.max_steps": (int, 10000, "dopri5 attempt cap"),
    "train.lr": (float, 0.001, "Adam learning rate"),
    "train.beta1": (float, 0.9, "Adam first-moment decay"),
    "train.beta2": (float, 0.999, "Adam second-moment decay"),
    "train.eps": (float, 1e-08, "Adam denominator fuzz"),
    "train.batch_size": (int, 64, "minibatch size"),
    "train.epochs": (int, 3, "training epochs"),
    "train.grad_mode": (str, "discrete", f"one of {GRAD_MODES}"),
    "data.dataset": (str, "gaussians", "mnist, rings, or gaussians"),
    "data.dir": (str, "./data", "root directory holding <name>/ IDX files"),
    "data.train_n": (int, 0, "stratified train subset size; 0 keeps all"),
    "data.test_n": (int, 0, "stratified test subset size; 0 keeps all"),
    "metrics.wall_clock": (_bool, False, "record wall seconds in metrics files "
                                         "(breaks byte-reproducibility)"),
}


def parse_config_text(text: str) -> dict:
    """Parse key=value lines into raw string values; unknown keys rejected."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key=value, got {line.strip()!r}")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve_config(raw: dict) -> dict:
    """Typed values for every key, defaults filled in."""
    values = {}
    for key, (parser, default, _) in KEYS.items():
        if key in raw:
            try:
                values[key] = parser(raw[key])
            except ValueError as exc:
                raise ConfigError(f"key {key!r}: {exc}") from exc
        else:
            values[key] = default
    _validate(values)
    return values


def _validate(values: dict):
    checks = [
        ("variant", VARIANTS),
        ("activation", ACTIVATIONS),
        ("kernel_sharing", ("per-channel", "shared")),
        ("solver.method", METHODS),
        ("train.grad_mode", GRAD_MODES),
        ("data.dataset", ("mnist", "rings", "gaussians")),
    ]
    for key, allowed in checks:
        if values[key] not in allowed:
            raise ConfigError(f"key {key!r}: {values[key]!r} not in {allowed}")
    for key in ("N", "L", "dim_g", "train.batch_size", "train.epochs"):
        if values[key] < 1:
            raise ConfigError(f"key {key!r} must be >= 1")
    for key in ("augment", "dim_h", "data.train_n", "data.test_n"):
        if values[key] < 0:
            raise ConfigError(f"key {key!r} must be >= 0")
    if values["train.lr"] <= 0:
        raise ConfigError("key 'train.lr' must be positive")
    if not values["solver.t1"] > values["solver.t0"]:
        raise ConfigError("need solver.t1 > solver.t0")


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return resolve_config(parse_config_text(text))


def render_config(values: dict) -> str:
    """Echo every effective value; the result parses back to the same run."""
    lines = [f"{key}={_fmt(values[key])}" for key in sorted(KEYS)]
    return "\n".join(lines) + "\n"
