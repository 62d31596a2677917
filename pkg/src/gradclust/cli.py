"""Command-line front end: single runs, repeated experiments with mean/std
aggregation, fixed-point certificate verification, and IDX-to-CSV conversion.

Configs are strict JSON documents (unknown keys are rejected) and every
summary echoes the fully materialized config, so a summary can always be
re-run byte-identically from its own echo. Repetition i uses seed
base_seed + i; repetitions are independent and can run concurrently up to
GRADCLUST_THREADS, with aggregation performed after a deterministic join in
repetition order.

Exit codes: 0 success / fixed point, 1 verification failed, 2 stopped at the
iteration budget, 64 bad config, 65 bad data, 70 internal error.
"""

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import dataio, engine
from .core import (
    Assignment,
    Centers,
    ClusteringError,
    ConfigError,
    DataSet,
    EvalError,
    StepConfig,
)
from .diagnostics import check_fixed_point
from .divergences import PAIR_KINDS, Mahalanobis, make_pair

EXIT_OK = 0
EXIT_NOT_FIXED_POINT = 1
EXIT_MAX_ITERS = 2
EXIT_CONFIG = 64
EXIT_DATA = 65
EXIT_INTERNAL = 70


# ---------------------------------------------------------------------------
# Config handling
# ---------------------------------------------------------------------------

_TOP_DEFAULTS = {
    "seed": 0,
    "repetitions": 1,
    "init": "uniform_random",
    "k": None,
    "pair": None,
    "noise": None,
    "step": None,
}
_STEP_DEFAULTS = {
    "alpha": None,
    "alpha_mode": "theory",
    "safety": 1.0,
    "max_iters": 10_000,
    "grad_tol": None,
    "update_rule": "gradient",
    "unsafe_alpha": False,
    "reseed_empty": False,
}
_NOISE_DEFAULTS = {"fraction": 0.0, "variance": 0.0}
_DATA_DEFAULTS = {
    "synthetic": {"k": 2, "dim": 5, "per_cluster": 100,
                  "separation": 6.0, "stddev": 1.0},
    "synthetic_simplex": {"k": 2, "dim": 5, "per_cluster": 100,
                          "epsilon": 0.05, "concentration": 30.0},
    "idx": {"images": None, "labels": None, "classes": None, "counts": None},
    "csv": {"path": None, "weights": None, "classes": None, "counts": None},
}
_DATA_REQUIRED = {
    "synthetic": (),
    "synthetic_simplex": (),
    "idx": ("images", "labels", "classes", "counts"),
    "csv": ("path",),
}
_PAIR_DEFAULTS = {
    "sqeuclid": {},
    "huber": {"delta": 1.0},
    "js": {"epsilon": 0.05},
    "mahalanobis": {"matrix": None},
}


def _merge_section(name: str, doc, defaults: dict, required=()) -> dict:
    if doc is None:
        doc = {}
    if not isinstance(doc, dict):
        raise ConfigError(f"section {name!r} must be an object")
    unknown = set(doc) - set(defaults)
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    merged = {**defaults, **doc}
    for key in required:
        if merged.get(key) is None:
            raise ConfigError(f"missing required key {name}.{key}")
    return merged


def materialize_config(doc: dict) -> dict:
    """Validate a config document and fill in every default."""
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(doc) - (set(_TOP_DEFAULTS) | {"data"})
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    if "data" not in doc:
        raise ConfigError("missing required key 'data'")

    data_doc = doc["data"]
    if not isinstance(data_doc, dict) or "kind" not in data_doc:
        raise ConfigError("data section must be an object with a 'kind'")
    kind = data_doc["kind"]
    if kind not in _DATA_DEFAULTS:
        raise ConfigError(f"unknown data kind {kind!r}")
    data = _merge_section(
        "data", {k: v for k, v in data_doc.items() if k != "kind"},
        _DATA_DEFAULTS[kind], _DATA_REQUIRED[kind])
    data["kind"] = kind

    pair_doc = doc.get("pair") or {"kind": "sqeuclid"}
    if not isinstance(pair_doc, dict) or "kind" not in pair_doc:
        raise ConfigError("pair section must be an object with a 'kind'")
    pkind = pair_doc["kind"]
    if pkind not in _PAIR_DEFAULTS:
        raise ConfigError(f"unknown pair kind {pkind!r}; expected {PAIR_KINDS}")
    pair = _merge_section(
        "pair", {k: v for k, v in pair_doc.items() if k != "kind"},
        _PAIR_DEFAULTS[pkind],
        ("matrix",) if pkind == "mahalanobis" else ())
    pair["kind"] = pkind

    step = _merge_section("step", doc.get("step"), _STEP_DEFAULTS)
    if step["alpha_mode"] not in ("theory", "paper_mnist"):
        raise ConfigError(f"unknown alpha_mode {step['alpha_mode']!r}")
    if step["update_rule"] not in ("gradient", "lloyd"):
        raise ConfigError(f"unknown update_rule {step['update_rule']!r}")
    noise = _merge_section("noise", doc.get("noise"), _NOISE_DEFAULTS)

    init = doc.get("init", _TOP_DEFAULTS["init"])
    if init not in dataio.INIT_STRATEGIES:
        raise ConfigError(f"unknown init strategy {init!r}")

    return {
        "seed": int(doc.get("seed", 0)),
        "repetitions": int(doc.get("repetitions", 1)),
        "init": init,
        "k": doc.get("k"),
        "data": data,
        "pair": pair,
        "noise": noise,
        "step": step,
    }


def load_config(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise ConfigError(f"cannot read config: {e}") from e
    except json.JSONDecodeError as e:
        raise ConfigError(f"config is not valid JSON: {e}") from e
    return materialize_config(doc)


def build_pair(pair_cfg: dict):
    kind = pair_cfg["kind"]
    if kind == "mahalanobis":
        matrix = pair_cfg["matrix"]
        if isinstance(matrix, str):
            matrix = np.loadtxt(matrix, delimiter=",", ndmin=2)
        return Mahalanobis(matrix)
    return make_pair(kind, delta=pair_cfg.get("delta"),
                     epsilon=pair_cfg.get("epsilon"))


def _subseed(seed: int, tag: int) -> int:
    return int(np.random.SeedSequence((int(seed), tag)).generate_state(1)[0])


def build_base_dataset(cfg: dict, rep_seed: int) -> DataSet:
    """Clean dataset for one repetition (synthetic kinds resample per rep)."""
    d = cfg["data"]
    kind = d["kind"]
    if kind == "synthetic":
        return dataio.synth_mixture(d["k"], d["dim"], d["per_cluster"],
                                    d["separation"], d["stddev"],
                                    _subseed(rep_seed, 0))
    if kind == "synthetic_simplex":
        return dataio.synth_simplex_mixture(d["k"], d["dim"], d["per_cluster"],
                                            d["epsilon"], d["concentration"],
                                            _subseed(rep_seed, 0))
    if kind == "idx":
        raw = dataio.load_idx(d["images"], d["labels"])
        return dataio.prepare(raw, d["classes"], d["counts"])
    raw, weights = dataio.load_csv(d["path"], d["weights"])
    if d["classes"] is not None:
        return dataio.prepare(raw, d["classes"], d["counts"])
    from .core import make_dataset

    return make_dataset(raw.points, weights, raw.labels)


def _cluster_count(cfg: dict, data: DataSet) -> int:
    if cfg["k"] is not None:
        return int(cfg["k"])
    d = cfg["data"]
    if d["kind"] in ("synthetic", "synthetic_simplex"):
        return int(d["k"])
    if d.get("classes"):
        return len(d["classes"])
    if data.labels is not None:
        return int(np.unique(data.labels).size)
    raise ConfigError("cluster count is not derivable; set top-level 'k'")


def resolve_alpha(step_cfg: dict, pair, data: DataSet) -> float:
    if step_cfg["alpha"] is not None:
        return float(step_cfg["alpha"])
    return engine.estimate_step_size(pair, data, mode=step_cfg["alpha_mode"],
                                     safety=step_cfg["safety"])


def single_run(cfg: dict, rep_seed: int):
    """Execute one seeded repetition; returns (RunResult, DataSet, pair, StepConfig)."""
    pair = build_pair(cfg["pair"])
    data = build_base_dataset(cfg, rep_seed)
    if cfg["noise"]["fraction"] > 0 and cfg["noise"]["variance"] > 0:
        data = dataio.inject_noise(data, cfg["noise"]["fraction"],
                                   cfg["noise"]["variance"], _subseed(rep_seed, 1))
    k = _cluster_count(cfg, data)
    init = dataio.init_centers(cfg["init"], data, k, _subseed(rep_seed, 2), pair)
    step = cfg["step"]
    config = StepConfig(
        alpha=resolve_alpha(step, pair, data),
        max_iters=int(step["max_iters"]),
        grad_tol=step["grad_tol"],
        seed=rep_seed,
        update_rule=step["update_rule"],
        unsafe_alpha=bool(step["unsafe_alpha"]),
        reseed_empty=bool(step["reseed_empty"]),
    )
    result = engine.run(data, pair, init, config)
    return result, data, pair, config


def resolved_grad_tol(result: engine.RunResult, config: StepConfig) -> float:
    if config.grad_tol is not None:
        return float(config.grad_tol)
    return 1e-8 * (1.0 + float(result.trace.cost[0]))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.bool_):
        return bool(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o)}")


def dump_json(obj, path) -> None:
    text = json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)


def write_trace_csv(path, trace) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iter", "cost", "grad_norm", "reassigned", "accuracy"])
        for t in range(len(trace)):
            acc = "" if trace.accuracy is None else repr(float(trace.accuracy[t]))
            writer.writerow([t, repr(float(trace.cost[t])),
                             repr(float(trace.grad_norm[t])),
                             int(trace.reassigned[t]), acc])


def _pair_artifact(pair) -> dict:
    out = {"kind": pair.kind}
    if pair.kind == "huber":
        out["delta"] = pair.delta
    elif pair.kind == "js":
        out["epsilon"] = pair.epsilon
    elif pair.kind == "mahalanobis":
        out["matrix_values"] = pair.matrix.tolist()
    return out


def result_artifact(cfg: dict, result: engine.RunResult, data: DataSet,
                    pair, config: StepConfig) -> dict:
    """Self-contained run record: enough to re-verify the certificate offline."""
    trace = result.trace
    report = check_fixed_point(result.final_centers, result.final_assignment,
                               data, pair, grad_tol=resolved_grad_tol(result, config))
    return {
        "config": cfg,
        "alpha_used": result.alpha_used,
        "L_bound_used": result.L_bound_used,
        "grad_tol_used": resolved_grad_tol(result, config),
        "termination_reason": trace.termination_reason,
        "pair": _pair_artifact(pair),
        "dataset": {
            "points": data.points.tolist(),
            "weights": data.weights.tolist(),
            "labels": None if data.labels is None else data.labels.tolist(),
        },
        "final_centers": result.final_centers.vectors.tolist(),
        "final_assignment": result.final_assignment.cluster_of.tolist(),
        "trace": {
            "cost": trace.cost.tolist(),
            "grad_norm": trace.grad_norm.tolist(),
            "reassigned": trace.reassigned.tolist(),
            "accuracy": None if trace.accuracy is None else trace.accuracy.tolist(),
            "projections": list(trace.projections),
        },
        "fixed_point_report": report_dict(report),
    }


def report_dict(report) -> dict:
    return {
        "voronoi_ok": report.voronoi_ok,
        "worst_margin": report.worst_margin,
        "grad_norm": report.grad_norm,
        "is_fixed_point": report.is_fixed_point,
        "assign_tol": report.assign_tol,
        "grad_tol": report.grad_tol,
        "centroidal_ok": report.centroidal_ok,
        "centroidal_deviation": report.centroidal_deviation,
    }


def load_artifact(path):
    """Rebuild (centers, assignment, data, pair, grad_tol) from a run artifact."""
    try:
        with open(path, encoding="utf-8") as f:
            doc = json.load(f)
        pair_doc = doc["pair"]
        pair = make_pair(
            pair_doc["kind"],
            delta=pair_doc.get("delta"),
            epsilon=pair_doc.get("epsilon"),
            matrix=pair_doc.get("matrix_values"),
        )
        ds = doc["dataset"]
        data = DataSet(
            points=np.array(ds["points"], dtype=np.float64),
            weights=np.array(ds["weights"], dtype=np.float64),
            labels=None if ds["labels"] is None else np.array(ds["labels"]),
        )
        centers = Centers(np.array(doc["final_centers"], dtype=np.float64))
        assignment = Assignment(np.array(doc["final_assignment"]), centers.k)
        grad_tol = float(doc["grad_tol_used"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise ClusteringError(f"unreadable run artifact: {e}") from e
    return centers, assignment, data, pair, grad_tol


# ---------------------------------------------------------------------------
# Experiments
# ---------------------------------------------------------------------------

def _pad_series(series: list[np.ndarray]) -> np.ndarray:
    """Stack unequal-length accuracy series, carrying final values forward."""
    width = max(len(s) for s in series)
    out = np.empty((len(series), width))
    for i, s in enumerate(series):
        out[i, : len(s)] = s
        out[i, len(s):] = s[-1]
    return out


def run_repetitions(cfg: dict):
    """Run the configured repetitions and aggregate accuracy per iteration.

    Returns (summary dict, list of traces). Deterministic for a fixed base
    seed regardless of how many worker threads execute the repetitions.
    """
    reps = int(cfg["repetitions"])
    if reps < 1:
        raise ConfigError("repetitions must be >= 1")
    seeds = [int(cfg["seed"]) + i for i in range(reps)]
    threads = max(1, int(os.environ.get("GRADCLUST_THREADS", "1")))

    def job(seed):
        result, data, pair, config = single_run(cfg, seed)
        return result

    if threads == 1 or reps == 1:
        results = [job(s) for s in seeds]
    else:
        with ThreadPoolExecutor(max_workers=min(threads, reps)) as pool:
            results = list(pool.map(job, seeds))

    for r in results:
        if r.trace.accuracy is None:
            raise EvalError("experiment aggregation needs labeled data")

    acc = _pad_series([r.trace.accuracy for r in results])
    mean = acc.mean(axis=0)
    std = acc.std(axis=0, ddof=1) if reps > 1 else np.zeros(acc.shape[1])

    summary = {
        "config": cfg,
        "repetitions": reps,
        "seeds": seeds,
        "per_repetition": [
            {
                "seed": s,
                "final_accuracy": float(r.trace.accuracy[-1]),
                "final_cost": float(r.trace.cost[-1]),
                "iterations": len(r.trace) - 1,
                "termination_reason": r.trace.termination_reason,
                "projections": len(r.trace.projections),
            }
            for s, r in zip(seeds, results)
        ],
        "accuracy_mean": mean.tolist(),
        "accuracy_std": std.tolist(),
        "final_accuracy_mean": float(mean[-1]),
        "final_accuracy_std": float(std[-1]),
    }
    return summary, results


def write_series_csv(path, mean, std) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iter", "accuracy_mean", "accuracy_std"])
        for t, (m, s) in enumerate(zip(mean, std)):
            writer.writerow([t, repr(float(m)), repr(float(s))])


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def _apply_overrides(cfg: dict, args) -> dict:
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.update is not None:
        cfg["step"]["update_rule"] = args.update
    if args.alpha is not None:
        cfg["step"]["alpha"] = args.alpha
    if args.alpha_mode is not None:
        cfg["step"]["alpha_mode"] = args.alpha_mode
    if args.unsafe_alpha:
        cfg["step"]["unsafe_alpha"] = True
    if args.pair is not None:
        cfg["pair"] = {"kind": args.pair}
        if args.pair == "huber":
            cfg["pair"]["delta"] = args.delta if args.delta is not None else 1.0
        if args.pair == "js":
            cfg["pair"]["epsilon"] = args.epsilon if args.epsilon is not None else 0.05
    elif args.delta is not None and cfg["pair"]["kind"] == "huber":
        cfg["pair"]["delta"] = args.delta
    elif args.epsilon is not None and cfg["pair"]["kind"] == "js":
        cfg["pair"]["epsilon"] = args.epsilon
    return materialize_config(cfg)


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    os.makedirs(args.out_dir, exist_ok=True)
    result, data, pair, config = single_run(cfg, int(cfg["seed"]))
    write_trace_csv(os.path.join(args.out_dir, "trace.csv"), result.trace)
    artifact = result_artifact(cfg, result, data, pair, config)
    dump_json(artifact, os.path.join(args.out_dir, "result.json"))
    trace = result.trace
    print(f"termination={trace.termination_reason} iterations={len(trace) - 1} "
          f"cost={float(trace.cost[-1])!r} grad_norm={float(trace.grad_norm[-1])!r}")
    return EXIT_OK if trace.termination_reason == "fixed_point" else EXIT_MAX_ITERS


def cmd_experiment(args) -> int:
    cfg = _apply_overrides(load_config(args.config), args)
    os.makedirs(args.out_dir, exist_ok=True)
    summary, results = run_repetitions(cfg)
    for i, r in enumerate(results):
        write_trace_csv(os.path.join(args.out_dir, f"rep_{i:03d}.csv"), r.trace)
    dump_json(summary, os.path.join(args.out_dir, "summary.json"))
    write_series_csv(os.path.join(args.out_dir, "series.csv"),
                     summary["accuracy_mean"], summary["accuracy_std"])
    print(f"repetitions={summary['repetitions']} "
          f"final_accuracy_mean={summary['final_accuracy_mean']!r} "
          f"final_accuracy_std={summary['final_accuracy_std']!r}")
    return EXIT_OK


def cmd_verify(args) -> int:
    centers, assignment, data, pair, grad_tol = load_artifact(args.artifact)
    if args.grad_tol is not None:
        grad_tol = args.grad_tol
    report = check_fixed_point(centers, assignment, data, pair,
                               assign_tol=args.assign_tol, grad_tol=grad_tol)
    doc = report_dict(report)
    if args.out is not None:
        dump_json(doc, args.out)
    print(json.dumps(doc, sort_keys=True, default=_json_default))
    return EXIT_OK if report.is_fixed_point else EXIT_NOT_FIXED_POINT


def cmd_convert(args) -> int:
    raw = dataio.load_idx(args.images, args.labels)
    dataio.write_csv(args.out, raw.points, raw.labels)
    print(f"wrote {raw.points.shape[0]} rows to {args.out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradclust",
        description="Metric-assignment clustering with gradient center updates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--config", required=True, help="JSON config path")
        p.add_argument("--out-dir", default=".", help="output directory")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--alpha-mode", choices=["theory", "paper_mnist"], default=None)
        p.add_argument("--unsafe-alpha", action="store_true")
        p.add_argument("--update", choices=["gradient", "lloyd"], default=None)
        p.add_argument("--pair", choices=list(PAIR_KINDS), default=None)
        p.add_argument("--delta", type=float, default=None)
        p.add_argument("--epsilon", type=float, default=None)

    p_run = sub.add_parser("run", help="one clustering run; writes trace.csv and result.json")
    add_common(p_run)
    p_run.set_defaults(func=cmd_run)

    p_exp = sub.add_parser("experiment", help="seeded repetitions with aggregation")
    add_common(p_exp)
    p_exp.set_defaults(func=cmd_experiment)

    p_ver = sub.add_parser("verify", help="check a saved run's fixed-point certificate")
    p_ver.add_argument("artifact", help="result.json from a run")
    p_ver.add_argument("--assign-tol", type=float, default=None)
    p_ver.add_argument("--grad-tol", type=float, default=None)
    p_ver.add_argument("--out", default=None, help="write the report JSON here")
    p_ver.set_defaults(func=cmd_verify)

    p_conv = sub.add_parser("convert", help="IDX image/label pair to CSV")
    p_conv.add_argument("images")
    p_conv.add_argument("labels")
    p_conv.add_argument("out")
    p_conv.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ClusteringError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:  # noqa: BLE001 - keep the contractual exit code
        print(f"internal error: {e}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
