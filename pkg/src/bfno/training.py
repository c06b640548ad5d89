"""Classifier head, loss, Adam, and the train/eval loops.

A model is the learned derivative field plus a flatten-and-affine head on
the terminal state. Gradients come in two flavors: ``discrete`` backprop
through the unrolled solver on one tape, or the O(1)-memory ``adjoint``
backward solve that re-integrates the state alongside the adjoint.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .data import Dataset
from .layers import OdeFunction, OdeFunctionConfig
from .odeint import SolverConfig, adjoint_backward, integrate
from .tensor import ParamStore, Prng, init_param

GRAD_MODES = ("discrete", "adjoint")


@dataclass
class TrainConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 64
    epochs: int = 3
    seed: int = 0
    grad_mode: str = "discrete"

    def validate(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.grad_mode not in GRAD_MODES:
            raise ValueError(f"unknown grad_mode {self.grad_mode!r}")


@dataclass
class MetricsRow:
    epoch: int
    train_loss: float
    test_acc: float
    nfe_fwd: float
    nfe_bwd: float
    wall_s: float


# ------------------------------------------------------------ head and loss


def classify_head(h1: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Flatten the terminal state and map it to class logits."""
    flat = h1.reshape(h1.shape[0], -1)
    return flat @ weight.T + bias


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(logits: np.ndarray, label: int) -> float:
    """Single-sample negative log softmax probability of the true class."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= label < logits.shape[-1]:
        raise ValueError(f"label {label} out of range for {logits.shape[-1]} classes")
    z = logits - logits.max()
    return float(np.log(np.exp(z).sum()) - z[label])


# ------------------------------------------------------------ optimizer


class AdamState:
    def __init__(self, store: ParamStore):
        self.m = {name: np.zeros_like(v) for name, v in store.items()}
        self.v = {name: np.zeros_like(v) for name, v in store.items()}
        self.step_count = 0


def adam_step(store: ParamStore, grads: dict, state: AdamState, cfg: TrainConfig):
    """Bias-corrected Adam update, in place."""
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, _ in store.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(store[name])
        if g.shape != store[name].shape:
            raise ValueError(f"gradient shape mismatch for {name!r}")
        m = state.m[name] = cfg.beta1 * state.m[name] + (1 - cfg.beta1) * g
        v = state.v[name] = cfg.beta2 * state.v[name] + (1 - cfg.beta2) * g * g
        store[name] = store[name] - cfg.lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


# ------------------------------------------------------------ model


class Model:
    """Derivative field + classification head over a fixed dataset geometry."""

    def __init__(self, func_config: OdeFunctionConfig, image_shape: tuple[int, int, int],
                 num_classes: int, seed: int):
        c, h, w = image_shape
        if func_config.state_channels != c + func_config.augment:
            raise ValueError(
                f"config state_channels={func_config.state_channels} does not match "
                f"{c} data channels + {func_config.augment} augmented"
            )
        self.image_shape = image_shape
        self.num_classes = num_classes
        self.func = OdeFunction(func_config, (func_config.state_channels, h, w))
        self.params = ParamStore()
        rng = Prng(seed)
        self.func.build_params(self.params, rng)
        head_dim = func_config.state_channels * h * w
        self.params.add("head.weight", init_param((num_classes, head_dim), head_dim, rng))
        self.params.add("head.bias", init_param((num_classes,), head_dim, rng))
        self._func_names = [n for n in self.params.names() if not n.startswith("head.")]

    @property
    def param_count(self) -> int:
        return self.params.total_size

    def lift(self, x: np.ndarray) -> np.ndarray:
        """Initial state: the input image plus zero-filled augmented channels."""
        aug = self.func.config.augment
        if aug == 0:
            return np.asarray(x, dtype=np.float64)
        b, c, h, w = x.shape
        h0 = np.zeros((b, c + aug, h, w))
        h0[:, :c] = x
        return h0

    # ---------------------------------------------------- plain inference

    def logits(self, x: np.ndarray, solver_cfg: SolverConfig):
        run = integrate(lambda h, t: self.func.rhs(self.params, h, t),
                        self.lift(x), solver_cfg)
        out = classify_head(run.h1, self.params["head.weight"], self.params["head.bias"])
        return out, run

    # ---------------------------------------------------- gradients

    def loss_and_grads(self, x: np.ndarray, y: np.ndarray, solver_cfg: SolverConfig,
                       grad_mode: str):
        if grad_mode == "discrete":
            return self._grads_discrete(x, y, solver_cfg)
        if grad_mode == "adjoint":
            return self._grads_adjoint(x, y, solver_cfg)
        raise ValueError(f"unknown grad_mode {grad_mode!r}")

    def _grads_discrete(self, x, y, solver_cfg):
        tape = Tape()
        pnodes = self.func.bind(self.params, tape)
        run = integrate(lambda h, t: self.func.rhs_graph(pnodes, h, t),
                        tape.leaf(self.lift(x)), solver_cfg)
        logits = ad.affine(ad.flatten_spatial(run.h1), pnodes["head.weight"], pnodes["head.bias"])
        loss = ad.cross_entropy_mean(logits, y)
        tape.backward(loss)
        grads = {
            name: (pnodes[name].grad if pnodes[name].grad is not None
                   else np.zeros_like(self.params[name]))
            for name in self.params.names()
        }
        loss_value = float(loss.value)
        tape.release()
        return loss_value, grads, run.nfe_forward, 0

    def _rhs_vjp(self, h, t, a):
        tape = Tape()
        pnodes = self.func.bind(self.params, tape)
        h_leaf = tape.leaf(h)
        out = self.func.rhs_graph(pnodes, h_leaf, t)
        tape.backward(out, a)
        grads = {
            name: (pnodes[name].grad if pnodes[name].grad is not None
                   else np.zeros_like(self.params[name]))
            for name in self._func_names
        }
        h_grad = h_leaf.grad if h_leaf.grad is not None else np.zeros_like(h)
        out_value = out.value
        tape.release()
        return out_value, h_grad, grads

    def _grads_adjoint(self, x, y, solver_cfg):
        run = integrate(lambda h, t: self.func.rhs(self.params, h, t),
                        self.lift(x), solver_cfg)
        # head gradients and the terminal-state cotangent on a small tape
        tape = Tape()
        h1 = tape.leaf(run.h1)
        wn, bn = tape.leaf(self.params["head.weight"]), tape.leaf(self.params["head.bias"])
        loss = ad.cross_entropy_mean(ad.affine(ad.flatten_spatial(h1), wn, bn), y)
        tape.backward(loss)
        shapes = {name: self.params[name].shape for name in self._func_names}
        _, func_grads = adjoint_backward(self._rhs_vjp, run, h1.grad, solver_cfg, shapes)
        grads = dict(func_grads)
        grads["head.weight"] = wn.grad
        grads["head.bias"] = bn.grad
        loss_value = float(loss.value)
        tape.release()
        return loss_value, grads, run.nfe_forward, run.nfe_backward


# ------------------------------------------------------------ loops


def train_epoch(model: Model, ds: Dataset, solver_cfg: SolverConfig,
                cfg: TrainConfig, rng: Prng, state: AdamState):
    """One pass over the data; returns (mean_loss, nfe_fwd_mean, nfe_bwd_mean)."""
    order = rng.shuffle(np.arange(len(ds)))
    losses, nfes_f, nfes_b = [], [], []
    for start in range(0, len(ds), cfg.batch_size):
        idx = order[start : start + cfg.batch_size]
        loss, grads, nfe_f, nfe_b = model.loss_and_grads(
            ds.images[idx], ds.labels[idx], solver_cfg, cfg.grad_mode
        )
        adam_step(model.params, grads, state, cfg)
        losses.append(loss)
        nfes_f.append(nfe_f)
        nfes_b.append(nfe_b)
    return float(np.mean(losses)), float(np.mean(nfes_f)), float(np.mean(nfes_b))


def evaluate(model: Model, ds: Dataset, solver_cfg: SolverConfig,
             batch_size: int = 512) -> float:
    """Argmax accuracy; mutates nothing."""
    correct = 0
    for start in range(0, len(ds), batch_size):
        x = ds.images[start : start + batch_size]
        y = ds.labels[start : start + batch_size]
        logits, _ = model.logits(x, solver_cfg)
        correct += int((logits.argmax(axis=1) == y).sum())
    return correct / len(ds)


def fit(model: Model, train_ds: Dataset, test_ds: Dataset, solver_cfg: SolverConfig,
        cfg: TrainConfig, log=None) -> list[MetricsRow]:
    cfg.validate()
    solver_cfg.validate()
    rng = Prng(cfg.seed + 1)  # data order; parameter init consumed Prng(seed)
    state = AdamState(model.params)
    rows = []
    for epoch in range(cfg.epochs):
        t0 = time.monotonic()
        loss, nfe_f, nfe_b = train_epoch(model, train_ds, solver_cfg, cfg, rng, state)
        acc = evaluate(model, test_ds, solver_cfg)
        wall = time.monotonic() - t0
        row = MetricsRow(epoch, loss, acc, nfe_f, nfe_b, wall)
        rows.append(row)
        if log:
            log(
                f"epoch {epoch}: train_loss={loss:.4f} test_acc={acc:.4f} "
                f"nfe_fwd={nfe_f:.1f} nfe_bwd={nfe_b:.1f} wall_s={wall:.1f}"
            )
    return rows


# ------------------------------------------------------------ metrics files

METRICS_COLUMNS = ("epoch", "train_loss", "test_acc", "nfe_fwd", "nfe_bwd", "wall_s")


def _row_values(row: MetricsRow, wall_clock: bool):
    # wall-clock seconds are nondeterministic; they are zeroed by default so
    # repeated runs produce byte-identical artifacts (opt back in via config)
    wall = row.wall_s if wall_clock else 0.0
    return (row.epoch, row.train_loss, row.test_acc, row.nfe_fwd, row.nfe_bwd, wall)


def write_metrics_csv(rows: list[MetricsRow], path, wall_clock: bool = False):
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_COLUMNS) + "\n")
        for row in rows:
            vals = _row_values(row, wall_clock)
            fh.write(",".join(f"{v:.12g}" for v in vals) + "\n")


def write_metrics_jsonl(rows: list[MetricsRow], path, wall_clock: bool = False):
    with open(path, "w") as fh:
        for row in rows:
            vals = _row_values(row, wall_clock)
            fh.write(json.dumps(dict(zip(METRICS_COLUMNS, vals))) + "\n")
