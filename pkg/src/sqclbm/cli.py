"""``sqclbm`` command line: gen-data, train, evaluate, gate-count, simulate, compare.

Value precedence is command-line override > ``--config`` file > built-in
defaults.  Every command writes ``manifest.json`` into its output directory
recording the resolved configuration, the overrides, the seed and the tool
version.

Exit status: 0 on success, 2 for invalid configuration or input files,
1 for any other failure.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .circuit import LAYER_GATE_COUNTS, LayerKind, decompose, format_gate_listing, total_gate_count
from .config import ConfigError, parse_config
from .hybrid import SQCBackend, centerline_profiles, error_fields, make_backend, run
from .persistence import (
    PersistenceError,
    load_checkpoint,
    read_dataset,
    read_field_dump,
    save_checkpoint,
    write_csv,
    write_dataset,
    write_field_csv,
    write_field_dump,
    write_loss_curve,
)
from .losses import mse_loss
from .qstate import embed, physical
from .training import RELATIVE_MOMENTUM_LOSS_DEFINITION, generate_dataset, predict, relative_momentum_loss, train

log = logging.getLogger("sqclbm")

TRAIN_FILE = "train.sqcd"
TEST_FILE = "test.sqcd"
CHECKPOINT_FILE = "checkpoint.json"
MANIFEST_FILE = "manifest.json"


class UsageError(Exception):
    pass


# --- plumbing -----------------------------------------------------------------


def _threads(value):
    """Apply ``--threads`` (or ``SQC_THREADS``) to the compiled kernels; returns the count used."""
    import numba

    if value is None:
        env = os.environ.get("SQC_THREADS")
        if not env:
            return numba.get_num_threads()
        try:
            value = int(env)
        except ValueError:
            raise UsageError(f"SQC_THREADS must be an integer, got {env!r}") from None
    if value < 1:
        raise UsageError(f"--threads must be at least 1, got {value}")
    limit = numba.config.NUMBA_NUM_THREADS
    if value > limit:
        log.warning("requested %d threads, only %d available", value, limit)
        value = limit
    numba.set_num_threads(value)
    return value


def _resolve(args, command):
    """Config file + overrides -> (RunConfig, dict of applied overrides)."""
    cfg = parse_config(args.config)
    if cfg.mode is not None and cfg.mode != command:
        raise ConfigError(f"config file is for mode {cfg.mode!r}, not {command!r}")
    cfg.mode = command
    overrides = {}
    for key, value in _overrides(args).items():
        if value is not None:
            cfg.set(key, value)
            overrides[key] = value
    cfg.validate()
    return cfg, overrides


def _overrides(args):
    names = {
        "seed": "seed",
        "n_samples": "n_samples",
        "test_split": "test_split",
        "iterations": "iterations",
        "alpha_max": "alpha_max",
        "n_blocks": "n_blocks",
        "block": "block",
        "tail": "tail",
        "learning_rate": "learning_rate",
        "batch_size": "batch_size",
        "backend": "backend",
        "case": "case",
        "steps": "steps",
        "nx": "nx",
        "ny": "ny",
        "snapshot_every": "snapshot_every",
        "surplus": "surplus",
    }
    out = {key: getattr(args, attr, None) for key, attr in names.items()}
    if getattr(args, "command", None) == "simulate":
        out["checkpoint"] = args.checkpoint
    return out


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_manifest(out, command, cfg, overrides, threads, outputs, extra=None):
    doc = {
        "tool": "sqclbm",
        "version": __version__,
        "command": command,
        "seed": cfg.seed,
        "threads": threads,
        "overrides": overrides,
        "config": cfg.to_dict(),
        "outputs": sorted(str(p) for p in outputs),
    }
    if extra:
        doc.update(extra)
    (out / MANIFEST_FILE).write_text(json.dumps(doc, indent=2, default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _dataset_paths(path):
    """``--data`` may name a gen-data output directory or a single dataset file."""
    path = Path(path)
    if path.is_dir():
        train_p, test_p = path / TRAIN_FILE, path / TEST_FILE
        if not train_p.exists():
            raise UsageError(f"{path} holds no {TRAIN_FILE}")
        return train_p, (test_p if test_p.exists() else None)
    if not path.exists():
        raise UsageError(f"no such dataset: {path}")
    return path, None


def _metrics_rows(acc, rml, mse):
    rows = [(f"accuracy_f{i}", float(a)) for i, a in enumerate(acc)]
    rows += [("relative_momentum_loss", rml), ("test_mse", mse)]
    return rows


def _print_metrics(rows):
    for name, value in rows:
        print(f"{name:24s} {value:.6g}")


# --- commands -------------------------------------------------------------------


def cmd_gen_data(args, threads):
    cfg, overrides = _resolve(args, "gen-data")
    out = _out_dir(args)
    train_set, test_set = generate_dataset(cfg.datagen)
    outputs = [out / TRAIN_FILE, out / TEST_FILE]
    write_dataset(outputs[0], train_set)
    write_dataset(outputs[1], test_set)
    n_rej = train_set.info["n_rejected"]
    print(f"train samples {len(train_set)}  test samples {len(test_set)}  rejected {n_rej}")
    _write_manifest(out, "gen-data", cfg, overrides, threads, outputs,
                    {"n_train": len(train_set), "n_test": len(test_set), "n_rejected": n_rej})


def cmd_train(args, threads):
    cfg, overrides = _resolve(args, "train")
    out = _out_dir(args)
    train_p, test_p = _dataset_paths(args.data)
    data = read_dataset(train_p)
    test = read_dataset(test_p) if test_p is not None else None
    resume = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if resume is not None and args.block is None and args.n_blocks is None and args.tail is None:
        # resuming without an explicit architecture keeps the checkpoint's layers
        cfg.train.block, cfg.train.n_blocks, cfg.train.tail = str(resume.architecture), 1, ""
    ckpt, report = train(cfg.train, data, test=test, resume=resume)
    if test is None:
        log.info("no test file next to the training data; metrics use the validation slice")
    ckpt_p, curve_p, metrics_p = out / CHECKPOINT_FILE, out / "loss_curve.csv", out / "metrics.csv"
    save_checkpoint(ckpt_p, ckpt)
    write_loss_curve(curve_p, report)
    rows = _metrics_rows(report.accuracy, report.relative_momentum_loss, report.test_mse)
    rows += [("initial_val_mse", report.initial_val_mse), ("final_val_mse", report.final_val_mse)]
    write_csv(metrics_p, ["metric", "value"], rows)
    _print_metrics(rows)
    print(f"checkpoint at iteration {ckpt.iteration} written to {ckpt_p}")
    _write_manifest(out, "train", cfg, overrides, threads, [ckpt_p, curve_p, metrics_p],
                    {"resumed_from": str(args.checkpoint) if args.checkpoint else None,
                     "start_iteration": resume.iteration if resume else 0,
                     "end_iteration": ckpt.iteration,
                     "relative_momentum_loss_definition": RELATIVE_MOMENTUM_LOSS_DEFINITION})


def cmd_evaluate(args, threads):
    cfg, overrides = _resolve(args, "evaluate")
    out = _out_dir(args)
    if not args.checkpoint:
        raise UsageError("evaluate needs --checkpoint")
    ckpt = load_checkpoint(args.checkpoint)
    path = Path(args.data)
    test_p = path / TEST_FILE if path.is_dir() else path
    test = read_dataset(test_p)
    arch, theta = ckpt.architecture, ckpt.theta
    pred = predict(test, arch, theta)
    acc = np.mean(np.abs(physical(pred) - test.f_post) < cfg.train.epsilon_acc, axis=0)
    rows = _metrics_rows(acc, relative_momentum_loss(test, arch, pred=physical(pred)),
                         mse_loss(pred, embed(test.f_post)))
    metrics_p = out / "metrics.csv"
    write_csv(metrics_p, ["metric", "value"], rows)
    _print_metrics(rows)
    _write_manifest(out, "evaluate", cfg, overrides, threads, [metrics_p],
                    {"checkpoint": str(args.checkpoint), "test_file": str(test_p),
                     "relative_momentum_loss_definition": RELATIVE_MOMENTUM_LOSS_DEFINITION})


def gate_count_table(arch):
    """Text table: one row per layer kind present, then the circuit total."""
    lines = [f"{'Layer':8s} {'RZ':>6s} {'SX':>6s} {'CZ':>6s} {'Total':>7s} {'Uses':>5s}"]
    for kind in LayerKind:
        uses = arch.layers.count(kind)
        if not uses:
            continue
        c = LAYER_GATE_COUNTS[kind]
        lines.append(f"{kind.value:8s} {c.rz:6d} {c.sx:6d} {c.cz:6d} {c.total:7d} {uses:5d}")
    t = total_gate_count(arch)
    lines.append(f"{'Circuit':8s} {t.rz:6d} {t.sx:6d} {t.cz:6d} {t.total:7d} {len(arch):5d}")
    return "\n".join(lines) + "\n"


def cmd_gate_count(args, threads):
    cfg, overrides = _resolve(args, "gate-count")
    out = _out_dir(args)
    if args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        arch, theta = ckpt.architecture, ckpt.theta
    else:
        arch = cfg.train.architecture
        theta = np.zeros(arch.n_params)
    table = gate_count_table(arch)
    print(table, end="")
    table_p = out / "gate_count.txt"
    table_p.write_text(table)
    outputs = [table_p]
    if args.emit_gates:
        gates_p = out / "gates.txt"
        gates_p.write_text(format_gate_listing(decompose(arch, theta)))
        outputs.append(gates_p)
    t = total_gate_count(arch)
    _write_manifest(out, "gate-count", cfg, overrides, threads, outputs,
                    {"architecture": str(arch), "counts": {"rz": t.rz, "sx": t.sx, "cz": t.cz, "total": t.total}})


def _u_ref(sim):
    return sim.u0 if sim.case == "taylor_green" else sim.u_lid


def cmd_simulate(args, threads):
    cfg, overrides = _resolve(args, "simulate")
    out = _out_dir(args)
    sim = cfg.sim
    backend = make_backend(sim)
    snaps, metrics = run(sim, backend)
    outputs = []
    for snap in snaps:
        stem = out / f"field_{snap.t:06d}"
        write_field_dump(stem.with_suffix(".sqcf"), snap)
        write_field_csv(stem.with_suffix(".csv"), snap)
        outputs += [stem.with_suffix(".sqcf"), stem.with_suffix(".csv")]
    horiz, vert = centerline_profiles(snaps[-1], _u_ref(sim))
    for name, rows, coord in (("horizontal", horiz, "x"), ("vertical", vert, "y")):
        p = out / f"centerline_{name}.csv"
        write_csv(p, [coord, "ux_norm", "uy_norm"], rows)
        outputs.append(p)
    mass_p = out / "mass_audit.csv"
    mass = metrics["mass"]
    write_csv(mass_p, ["t", "total_mass", "rel_drift"],
              [(t, m, (m - mass[0]) / mass[0]) for t, m in enumerate(mass)])
    outputs.append(mass_p)
    if sim.case == "taylor_green":
        decay_p = out / "decay.csv"
        write_csv(decay_p, ["t", "peak_speed"], list(enumerate(metrics["peak_speed"])))
        outputs.append(decay_p)
    summary = {k: v for k, v in metrics.items() if not isinstance(v, np.ndarray)}
    summary_p = out / "metrics.csv"
    write_csv(summary_p, ["metric", "value"], sorted(summary.items()))
    outputs.append(summary_p)
    print(f"{sim.case} / {backend.name}: {sim.steps} steps on {sim.nx}x{sim.ny}, tau={metrics['tau']:.6g}")
    print(f"mass drift (relative)   {metrics['mass_drift_rel']:.3e}")
    if isinstance(backend, SQCBackend):
        print(f"max node mass defect    {metrics['max_node_mass_defect']:.3e}")
    if "decay_rate_fit" in metrics:
        print(f"decay rate fit          {metrics['decay_rate_fit']:.6e}")
        print(f"decay rate analytic     {metrics['decay_rate_analytic']:.6e}")
        print(f"relative error          {metrics['decay_rate_rel_error']:.3e}")
    _write_manifest(out, "simulate", cfg, overrides, threads, outputs,
                    {"u_ref": _u_ref(sim), "final_step": snaps[-1].t, "metrics": summary})


def _final_field(run_dir, t=None):
    run_dir = Path(run_dir)
    if run_dir.is_file():
        return read_field_dump(run_dir), None
    dumps = sorted(run_dir.glob("field_*.sqcf"))
    if t is not None:
        dumps = [p for p in dumps if p.name == f"field_{t:06d}.sqcf"]
    if not dumps:
        raise UsageError(f"no field dump{'' if t is None else f' for t={t}'} in {run_dir}")
    manifest = run_dir / MANIFEST_FILE
    u_ref = json.loads(manifest.read_text()).get("u_ref") if manifest.exists() else None
    return read_field_dump(dumps[-1]), u_ref


def cmd_compare(args, threads):
    cfg, overrides = _resolve(args, "compare")
    out = _out_dir(args)
    a, u_ref_a = _final_field(args.run_a, args.t)
    b, u_ref_b = _final_field(args.run_b, args.t)
    if a.shape != b.shape:
        raise UsageError(f"grid shapes differ: {a.shape} vs {b.shape}")
    if a.t != b.t:
        log.warning("comparing different time steps: %d vs %d", a.t, b.t)
    rel, absolute = error_fields(a, b)
    fluid = b.rho > 0  # solid nodes carry rho = 0 in field dumps
    nx, ny = a.shape
    x, y = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    err_p = out / "error_fields.csv"
    write_csv(err_p, ["x", "y", "rel_error", "abs_error"],
              np.column_stack([x.ravel(), y.ravel(), rel.ravel(), absolute.ravel()]))
    rows = []
    for name, field in (("rel", rel), ("abs", absolute)):
        masked = np.where(fluid, field, -np.inf)
        i, j = np.unravel_index(np.argmax(masked), field.shape)
        rows += [(f"{name}_mean", float(field[fluid].mean())), (f"{name}_max", float(field[i, j])),
                 (f"{name}_max_x", int(i)), (f"{name}_max_y", int(j))]
    summary_p = out / "summary.csv"
    write_csv(summary_p, ["metric", "value"], rows)
    u_ref = args.u_ref or u_ref_b or u_ref_a or 1.0
    outputs = [err_p, summary_p]
    ha, va = centerline_profiles(a, u_ref)
    hb, vb = centerline_profiles(b, u_ref)
    for name, pa, pb, coord in (("horizontal", ha, hb, "x"), ("vertical", va, vb, "y")):
        p = out / f"centerline_{name}_overlay.csv"
        write_csv(p, [coord, "ux_a", "uy_a", "ux_b", "uy_b"], np.column_stack([pa, pb[:, 1:]]))
        outputs.append(p)
    for name, value in rows:
        print(f"{name:12s} {value:.6g}" if isinstance(value, float) else f"{name:12s} {value}")
    _write_manifest(out, "compare", cfg, overrides, threads, outputs,
                    {"run_a": str(args.run_a), "run_b": str(args.run_b), "t": a.t, "u_ref": u_ref})


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "gate-count": cmd_gate_count,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
}


# --- parser -------------------------------------------------------------------


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", default=".", help="output directory (default: current)")
    common.add_argument("--threads", type=int, help="worker threads (fallback: SQC_THREADS)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="sqclbm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="generate BGK training/test datasets")
    p.add_argument("--n-samples", type=int)
    p.add_argument("--test-split", type=float)

    def arch_flags(p):
        p.add_argument("--block", help="comma-separated layer kinds of one block")
        p.add_argument("--n-blocks", type=int)
        p.add_argument("--tail", help="layer kinds appended after the blocks")

    p = sub.add_parser("train", parents=[common], help="train circuit angles by gradient descent")
    p.add_argument("--data", required=True, help="gen-data output directory or dataset file")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--iterations", type=int)
    p.add_argument("--alpha-max", type=float)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--batch-size", type=int)
    arch_flags(p)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a test set")
    p.add_argument("--data", required=True, help="gen-data output directory or test dataset file")
    p.add_argument("--checkpoint", required=True)

    p = sub.add_parser("gate-count", parents=[common], help="native RZ/SX/CZ gate counts")
    p.add_argument("--checkpoint", help="take the architecture (and angles) from a checkpoint")
    p.add_argument("--emit-gates", action="store_true", help="also write the full gate listing")
    arch_flags(p)

    p = sub.add_parser("simulate", parents=[common], help="run a benchmark flow")
    p.add_argument("--case", choices=["taylor_green", "lid_cavity"])
    p.add_argument("--backend", choices=["bgk", "sqc"])
    p.add_argument("--checkpoint", help="trained checkpoint for the sqc backend")
    p.add_argument("--steps", type=int)
    p.add_argument("--nx", type=int)
    p.add_argument("--ny", type=int)
    p.add_argument("--snapshot-every", type=int)
    p.add_argument("--surplus", choices=["persist", "fold", "drop"])

    p = sub.add_parser("compare", parents=[common], help="velocity error fields between two runs")
    p.add_argument("run_a", help="simulate output directory (or field dump) under test")
    p.add_argument("run_b", help="reference simulate output directory (or field dump)")
    p.add_argument("--t", type=int, help="time step to compare (default: last dump)")
    p.add_argument("--u-ref", type=float, help="centerline normalisation (default: from manifests)")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        threads = _threads(args.threads)
        COMMANDS[args.command](args, threads)
    except (ConfigError, PersistenceError, UsageError) as exc:
        print(f"sqclbm {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, FloatingPointError) as exc:
        print(f"sqclbm {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
