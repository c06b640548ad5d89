"""Command-line surface: train, eval, gradcheck, ablate.

Exit codes: 0 success, 1 configuration problems (including snapshot length
mismatches and guard violations), 2 dataset problems, 3 solver failures,
4 gradient-check threshold breaches.
"""
from __future__ import annotations

import argparse
import os
import struct
import sys
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .tensor import Prng
from .config import ConfigError, load_config, render_config
from .data import DataError, load_dataset
from .layers import OdeFunctionConfig
from .odeint import IntegrationError, SolverConfig
from .training import (
    Model,
    TrainConfig,
    evaluate,
    fit,
    write_metrics_csv,
    write_metrics_jsonl,
)

GRADCHECK_FD_THRESHOLD = 1e-5
GRADCHECK_ADJOINT_THRESHOLD = 1e-3
GRADCHECK_DIM_LIMIT = 16


class GradcheckFailure(Exception):
    pass


# ------------------------------------------------------------ config plumbing


def _solver_config(values: dict) -> SolverConfig:
    return SolverConfig(
        method=values["solver.method"],
        t0=values["solver.t0"],
        t1=values["solver.t1"],
        fixed_steps=values["solver.fixed_steps"],
        rtol=values["solver.rtol"],
        atol=values["solver.atol"],
        h_init=values["solver.h_init"],
        max_steps=values["solver.max_steps"],
    )


def _train_config(values: dict) -> TrainConfig:
    return TrainConfig(
        lr=values["train.lr"],
        beta1=values["train.beta1"],
        beta2=values["train.beta2"],
        eps=values["train.eps"],
        batch_size=values["train.batch_size"],
        epochs=values["train.epochs"],
        seed=values["seed"],
        grad_mode=values["train.grad_mode"],
    )


def _func_config(values: dict, data_channels: int) -> OdeFunctionConfig:
    state_channels = data_channels + values["augment"]
    if values["dim_h"] and values["dim_h"] != state_channels:
        raise ConfigError(
            f"dim_h={values['dim_h']} does not match data channels {data_channels} "
            f"+ augment {values['augment']}"
        )
    return OdeFunctionConfig(
        variant=values["variant"],
        num_layers=values["N"],
        branches=values["L"],
        hidden_channels=values["dim_g"],
        state_channels=state_channels,
        augment=values["augment"],
        activation=values["activation"],
        kernel_sharing=values["kernel_sharing"],
        fno_modes=values["fno_modes"],
        conv_channels=values["conv_width"],
    )


def _data_dir(values: dict) -> str:
    return os.environ.get("BFNO_DATA_DIR", values["data.dir"])


def _load_splits(values: dict):
    name = values["data.dataset"]
    root = _data_dir(values)
    seed = values["seed"]
    train = load_dataset(name, root, "train", seed=seed, n=values["data.train_n"])
    test = load_dataset(name, root, "test", seed=seed, n=values["data.test_n"])
    return train, test


def _build_model(values: dict, dataset) -> Model:
    cfg = _func_config(values, dataset.image_shape[0])
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    return Model(cfg, dataset.image_shape, dataset.num_classes, values["seed"])


# ------------------------------------------------------------ snapshot format


def write_snapshot(flat: np.ndarray, path):
    """Length-prefixed little-endian float64 parameter dump."""
    flat = np.asarray(flat, dtype=np.float64)
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", flat.size))
        fh.write(flat.astype("<f8").tobytes())


def read_snapshot(path) -> np.ndarray:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read parameter snapshot {path}: {exc}") from exc
    if len(blob) < 8:
        raise ConfigError(f"snapshot {path} is too short for a length header")
    (count,) = struct.unpack("<Q", blob[:8])
    if len(blob) != 8 + 8 * count:
        raise ConfigError(
            f"snapshot {path} declares {count} values but holds {(len(blob) - 8) // 8}"
        )
    return np.frombuffer(blob[8:], dtype="<f8").astype(np.float64)


# ------------------------------------------------------------ commands


def cmd_train(args) -> int:
    values = load_config(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = _load_splits(values)
    model = _build_model(values, train_ds)
    print(f"dataset {train_ds.name}: {len(train_ds)} train / {len(test_ds)} test")
    print(f"model {values['variant']}: {model.param_count} parameters")
    rows = fit(model, train_ds, test_ds, _solver_config(values), _train_config(values),
               log=print)
    wall_clock = values["metrics.wall_clock"]
    write_metrics_csv(rows, out / "metrics.csv", wall_clock)
    write_metrics_jsonl(rows, out / "metrics.jsonl", wall_clock)
    (out / "resolved_config").write_text(render_config(values), encoding="utf-8")
    write_snapshot(model.params.flatten(), out / "params.bin")
    print(f"wrote metrics.csv metrics.jsonl resolved_config params.bin to {out}")
    return 0


def cmd_eval(args) -> int:
    values = load_config(args.config)
    flat = read_snapshot(args.params)
    _, test_ds = _load_splits(values)
    model = _build_model(values, test_ds)
    if flat.size != model.param_count:
        raise ConfigError(
            f"snapshot holds {flat.size} values but the configured model has "
            f"{model.param_count} parameters"
        )
    model.params.load_flat(flat)
    acc = evaluate(model, test_ds, _solver_config(values))
    print(f"test_accuracy={acc:.6f}")
    return 0


def _gradcheck_model(values: dict):
    """Small hermetic geometry for gradient checking (8x8 white-noise batch).

    White noise puts energy in every frequency bin, so every kernel
    coordinate carries a gradient well above finite-difference noise; smooth
    inputs would leave high-frequency gradients near zero and the relative
    metric ill-conditioned.
    """
    from .data import Dataset

    rng = Prng(values["seed"])
    x = rng.uniform(-1.0, 1.0, (4, 1, 8, 8))
    y = np.array([rng.next_below(10) for _ in range(4)], dtype=np.int64)
    ds = Dataset(np.clip(x, 0, 1), y, "probe", "train", 10)
    check_values = dict(values)
    if values["activation"] == "relu":
        # subgradient kinks make central differences ill-posed; check smooth
        print("note: substituting tanh for relu in the finite-difference check")
        check_values["activation"] = "tanh"
    model = _build_model(check_values, ds)
    return model, x, y


def _fd_gradcheck(model: Model, x, y, eps=1e-6):
    """Full-model loss(head(f(h, t))) checked coordinate-wise against FD."""
    t_probe = 0.3
    store = model.params

    def run(theta, need_grad):
        store.load_flat(theta)
        tape = Tape(recording=need_grad)
        pnodes = model.func.bind(store, tape)
        out = model.func.rhs_graph(pnodes, tape.leaf(model.lift(x)), t_probe)
        logits = ad.affine(ad.flatten_spatial(out), pnodes["head.weight"], pnodes["head.bias"])
        loss = ad.cross_entropy_mean(logits, y)
        if not need_grad:
            return float(loss.value), None
        tape.backward(loss)
        grads = np.concatenate([
            (pnodes[name].grad if pnodes[name].grad is not None
             else np.zeros_like(store[name])).ravel()
            for name in store.names()
        ])
        tape.release()
        return float(loss.value), grads

    theta0 = store.flatten()
    errs = ad.finite_diff_errors(run, theta0, eps, relative_to="magnitude")
    store.load_flat(theta0)
    return float(errs.max()), store.name_at(int(errs.argmax()))


def _adjoint_gradcheck(model: Model, x, y, steps=20):
    solver = SolverConfig(method="rk4", fixed_steps=steps)
    _, gd, *_ = model.loss_and_grads(x, y, solver, "discrete")
    _, ga, *_ = model.loss_and_grads(x, y, solver, "adjoint")
    worst, worst_name = 0.0, ""
    for name in model.params.names():
        denom = float(np.linalg.norm(gd[name])) + 1e-12
        rel = float(np.linalg.norm(ga[name] - gd[name])) / denom
        if rel > worst:
            worst, worst_name = rel, name
    flat_d = np.concatenate([gd[n].ravel() for n in model.params.names()])
    flat_a = np.concatenate([ga[n].ravel() for n in model.params.names()])
    overall = float(np.linalg.norm(flat_a - flat_d) / (np.linalg.norm(flat_d) + 1e-12))
    return overall, worst, worst_name


def cmd_gradcheck(args) -> int:
    values = load_config(args.config)
    if values["dim_g"] > GRADCHECK_DIM_LIMIT:
        raise ConfigError(
            f"gradcheck is limited to dim_g <= {GRADCHECK_DIM_LIMIT}, got {values['dim_g']}"
        )
    fault = os.environ.get("BFNO_TEST_CORRUPT_VJP")
    if fault:
        ad.set_vjp_fault(float(fault))
        print(f"fault injection active: activation VJPs scaled by {fault}")
    try:
        model, x, y = _gradcheck_model(values)
        fd_err, fd_name = _fd_gradcheck(model, x, y)
        print(f"finite_difference_max_rel_err={fd_err:.3e} (worst: {fd_name})")
        adj_err, adj_worst, adj_name = _adjoint_gradcheck(model, x, y)
        print(f"adjoint_vs_discrete_rel_err={adj_err:.3e} (worst tensor: {adj_name} {adj_worst:.3e})")
    finally:
        ad.set_vjp_fault(1.0)
    if fd_err >= GRADCHECK_FD_THRESHOLD:
        raise GradcheckFailure(
            f"finite-difference error {fd_err:.3e} >= {GRADCHECK_FD_THRESHOLD} on {fd_name}"
        )
    if adj_err >= GRADCHECK_ADJOINT_THRESHOLD:
        raise GradcheckFailure(
            f"adjoint disagreement {adj_err:.3e} >= {GRADCHECK_ADJOINT_THRESHOLD} on {adj_name}"
        )
    print("gradcheck passed")
    return 0


def _parse_sweep(spec: str):
    if "=" not in spec:
        raise ConfigError(f"sweep must look like L=1,2,4 or variant=bfno,fno, got {spec!r}")
    key, _, items = spec.partition("=")
    key = key.strip()
    points = [item.strip() for item in items.split(",") if item.strip()]
    if not points:
        raise ConfigError("sweep has no points")
    if key == "L":
        try:
            return key, [int(p) for p in points]
        except ValueError as exc:
            raise ConfigError(f"sweep over L needs integers: {exc}") from exc
    if key == "variant":
        return key, [p.lower() for p in points]
    raise ConfigError(f"sweep key must be L or variant, got {key!r}")


def cmd_ablate(args) -> int:
    values = load_config(args.config)
    key, points = _parse_sweep(args.sweep)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = _load_splits(values)
    summary = []
    for point in points:
        run_values = dict(values)
        run_values[key] = point
        run_dir = out / f"{key}_{point}"
        run_dir.mkdir(parents=True, exist_ok=True)
        model = _build_model(run_values, train_ds)
        print(f"[{key}={point}] {model.param_count} parameters")
        rows = fit(model, train_ds, test_ds, _solver_config(run_values),
                   _train_config(run_values), log=lambda m: print(f"[{key}={point}] {m}"))
        wall_clock = run_values["metrics.wall_clock"]
        write_metrics_csv(rows, run_dir / "metrics.csv", wall_clock)
        write_metrics_jsonl(rows, run_dir / "metrics.jsonl", wall_clock)
        (run_dir / "resolved_config").write_text(render_config(run_values), encoding="utf-8")
        write_snapshot(model.params.flatten(), run_dir / "params.bin")
        mean_nfe = float(np.mean([r.nfe_fwd for r in rows]))
        summary.append((f"{key}={point}", rows[-1].test_acc, model.param_count, mean_nfe))
    with open(out / "summary.csv", "w") as fh:
        fh.write("point,final_test_acc,param_count,mean_nfe\n")
        for point, acc, count, nfe in summary:
            fh.write(f"{point},{acc:.12g},{count},{nfe:.12g}\n")
    print(f"wrote {out / 'summary.csv'}")
    return 0


# ------------------------------------------------------------ entry points


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="bfno", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a model and write run artifacts")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_eval = sub.add_parser("eval", help="evaluate a parameter snapshot")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--params", required=True)
    p_eval.set_defaults(func=cmd_eval)

    p_grad = sub.add_parser("gradcheck", help="verify gradients on a small model")
    p_grad.add_argument("--config", required=True)
    p_grad.set_defaults(func=cmd_gradcheck)

    p_abl = sub.add_parser("ablate", help="sweep L or variant with matched seeds")
    p_abl.add_argument("--config", required=True)
    p_abl.add_argument("--sweep", required=True)
    p_abl.add_argument("--out", required=True)
    p_abl.set_defaults(func=cmd_ablate)
    return parser


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except IntegrationError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except GradcheckFailure as exc:
        print(f"gradcheck failure: {exc}", file=sys.stderr)
        return 4


def entry():
    sys.exit(main())
