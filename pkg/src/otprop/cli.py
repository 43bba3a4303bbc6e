"""Command-line front end: simulate, estimate, transfer, evaluate, wgrid.

Exit codes: 0 success, 2 invalid input, 3 numerical abort. Errors are also
written to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .core import NumericalAbort, ProbabilityVector, SolverConfig, ValidationError
from .data import (
    PRESETS,
    ShiftMap,
    label_proportions,
    load_csv,
    load_labels,
    preprocess,
    random_mixture,
    simulate_pair,
    two_class_mixture,
    write_csv,
    write_labels,
)
from .evaluation import (
    bland_altman_points,
    bland_altman_svg,
    error_summary,
    kl_divergence,
    write_bland_altman_csv,
    write_summary_json,
)
from .proportions import DESC_ASC, MINMAX, estimate, profile_two_class, select_best_source
from .transfer import transfer_labels

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 2, 3

FAST_PROFILE = {"n_out": 1000, "n": 2000}

# flag dest -> SolverConfig field
CONFIG_FLAGS = {
    "epsilon": "epsilon",
    "lam": "lam",
    "n_out": "n_out",
    "n_in": "n_in",
    "n": "n",
    "eta": "eta",
    "seed": "seed",
    "step_scale": "step_scale",
    "step_exponent": "step_exponent",
    "cost_budget": "cost_budget",
}

_FIELD_TYPES = {"epsilon": float, "lam": float, "step_scale": float, "step_exponent": float,
                "eta": float, "plateau_rtol": float, "n_out": int, "n_in": int, "n": int,
                "seed": int, "plateau_window": int, "cost_budget": int}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config file {path}: {exc.strerror}") from None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        key = "lam" if key == "lambda" else key
        if key not in _FIELD_TYPES:
            raise ValidationError(f"{path}:{lineno}: unknown setting {key!r}")
        if value.lower() == "none":
            out[key] = None
            continue
        try:
            out[key] = _FIELD_TYPES[key](value)
        except ValueError:
            raise ValidationError(f"{path}:{lineno}: bad value {value!r} for {key}") from None
    return out


def resolve_config(args, solver: str) -> SolverConfig:
    """Preset for ``solver``, then ``--fast``, then the config file, then explicit flags."""
    overrides = {}
    if getattr(args, "fast", False):
        overrides.update(FAST_PROFILE)
    if getattr(args, "config", None):
        overrides.update(read_config_file(args.config))
    for dest, name in CONFIG_FLAGS.items():
        val = getattr(args, dest, None)
        if val is not None:
            overrides[name] = val
    return SolverConfig.for_solver(solver, **overrides)


def _config_json(config: SolverConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}


def _dump_json(obj, path) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True) + "\n"
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _load_labelled(path, label_col, do_preprocess):
    sample, partition, markers = load_csv(path, label_col)
    if partition is None:
        raise ValidationError(f"{path}: label column {label_col!r} is required")
    record = None
    if do_preprocess:
        sample, record = preprocess(sample)
    return sample, partition, markers, record


def _load_target(path, label_col, do_preprocess):
    # a label column in the target file is ignored, never used for fitting
    sample, _, markers = load_csv(path)
    if label_col in markers:
        sample, _, markers = load_csv(path, label_col)
    record = None
    if do_preprocess:
        sample, record = preprocess(sample)
    return sample, markers, record


def _check_markers(src_markers, tgt_markers, src_path, tgt_path):
    if len(src_markers) != len(tgt_markers):
        raise ValidationError(f"dimension mismatch: {src_path} has d={len(src_markers)} markers, "
                              f"{tgt_path} has d={len(tgt_markers)}")


def _benchmark(path, column, names):
    labels, _ = load_labels(path, column, names)
    return label_proportions(labels, len(names)), labels


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_simulate(args) -> int:
    params = dict(k=args.k, d=args.d, i=args.i, j=args.j)
    if args.preset:
        params = {**PRESETS[args.preset], **{k: v for k, v in params.items() if v is not None}}
    params = {**dict(k=10, d=10, i=5000, j=5000), **{k: v for k, v in params.items() if v is not None}}
    K, d, I, J = params["k"], params["d"], params["i"], params["j"]
    if args.preset == "two-class":
        if (K, d) != (2, 2):
            raise ValidationError("the two-class preset is fixed at k=2, d=2")
        spec, pi = two_class_mixture()
    else:
        spec, pi = random_mixture(K, d, args.seed)
    if args.no_shift:
        shift = ShiftMap.identity(d)
    else:
        shift = ShiftMap(np.full(d, args.translation), np.full(d, args.scale), np.full(d, args.quad))
    pair = simulate_pair(spec, pi, shift, I, J, args.seed, preprocess_data=not args.no_preprocess,
                         joint_scaling=args.joint_scaling)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    markers = [f"x{m}" for m in range(d)]
    write_csv(out / "source.csv", pair.source.points, markers, pair.partition.labels, spec.names)
    write_csv(out / "target.csv", pair.target.points, markers)
    write_labels(out / "target_labels.csv", pair.target_labels, spec.names)
    meta = {
        "k": K, "d": d, "i": I, "j": J, "seed": args.seed, "preset": args.preset,
        "mixture": spec.as_dict(),
        "target_proportions": pi.tolist(),
        "shift": shift.as_dict(),
        "source_counts": pair.source_counts.tolist(),
        "target_counts": pair.target_counts.tolist(),
        "joint_scaling": args.joint_scaling,
        "scaling": None if pair.source_scaling is None else {
            "source": pair.source_scaling.as_dict(markers),
            "target": pair.target_scaling.as_dict(markers),
        },
    }
    _dump_json(meta, out / "spec.json")
    return EXIT_OK


def cmd_estimate(args) -> int:
    config = resolve_config(args, args.solver)
    do_pre = not args.no_preprocess
    target, tgt_markers, tgt_rec = _load_target(args.target, args.label_col, do_pre)
    candidates, records, sources = [], [], list(args.source)
    for path in sources:
        src, part, src_markers, rec = _load_labelled(path, args.label_col, do_pre)
        _check_markers(src_markers, tgt_markers, path, args.target)
        candidates.append((src, part))
        records.append(rec)

    result = {"solver": args.solver, "config": _config_json(config), "target": str(args.target)}
    kwargs = {"trace_every": args.trace_every}
    if len(candidates) == 1:
        chosen = 0
        source, partition = candidates[0]
        bench = None
        if args.benchmark:
            bench, _ = _benchmark(args.benchmark, args.benchmark_col, partition.class_names)
        est = estimate(source, partition, target, config, args.solver, bench, **kwargs)
    else:
        chosen, est, scores = select_best_source(candidates, target, config, args.solver, args.workers)
        partition = candidates[chosen][1]
        result["source_scores"] = [float(s) for s in scores]
        if args.benchmark:
            bench, _ = _benchmark(args.benchmark, args.benchmark_col, partition.class_names)
            result["benchmark_kl"] = kl_divergence(est.proportions, bench, warn=False)
    names = partition.class_names
    result.update({
        "source": sources[chosen],
        "selected_source": chosen,
        "classes": list(names),
        "proportions": dict(zip(names, est.proportions.tolist())),
        "converged": est.converged,
        "trace": [{"iteration": t.iteration, "proportions": list(t.proportions), "kl": t.kl}
                  for t in est.trace],
        "scaling": None if not do_pre else {
            "source": records[chosen].as_dict(tgt_markers),
            "target": tgt_rec.as_dict(tgt_markers),
        },
    })
    _dump_json(result, args.out)
    return EXIT_OK


def _parse_proportions(text: str, names) -> ProbabilityVector:
    """``name=value,...`` in any order, or bare values in class order."""
    parts = [p.strip() for p in text.split(",")]
    try:
        if all("=" in p for p in parts):
            pairs = dict((k.strip(), float(v)) for k, v in (p.split("=", 1) for p in parts))
            if set(pairs) != set(names):
                raise ValidationError(f"--proportions names {sorted(pairs)} do not match classes {sorted(names)}")
            vals = [pairs[n] for n in names]
        else:
            vals = [float(p) for p in parts]
    except ValueError:
        raise ValidationError(f"bad --proportions {text!r}") from None
    if len(vals) != len(names):
        raise ValidationError(f"{len(vals)} proportions for {len(names)} classes")
    return ProbabilityVector(vals)


def _proportions_from(args, names):
    if args.estimate:
        try:
            data = json.loads(Path(args.estimate).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read estimate {args.estimate}: {exc}") from None
        props = data.get("proportions")
        if not isinstance(props, dict) or set(props) != set(names):
            raise ValidationError(f"estimate classes {sorted(props or {})} do not match source classes {sorted(names)}")
        return ProbabilityVector([props[n] for n in names])
    if args.proportions:
        return _parse_proportions(args.proportions, names)
    raise ValidationError("re-weighting needs --estimate or --proportions (or pass --no-reweight)")


def cmd_transfer(args) -> int:
    config = resolve_config(args, "transfer")
    do_pre = not args.no_preprocess
    source, partition, src_markers, _ = _load_labelled(args.source, args.label_col, do_pre)
    target, tgt_markers, _ = _load_target(args.target, args.label_col, do_pre)
    _check_markers(src_markers, tgt_markers, args.source, args.target)
    names = partition.class_names
    props = None if args.no_reweight else _proportions_from(args, names)
    soft, hard, _ = transfer_labels(source, partition, target, config, props)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_labels(out / "labels.csv", hard, names)
    with open(out / "soft.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(list(names))
        for row in soft.probabilities:
            writer.writerow([repr(float(x)) for x in row])
    summary = {
        "config": _config_json(config),
        "classes": list(names),
        "reweighted": props is not None,
        "proportions": None if props is None else dict(zip(names, props.tolist())),
        "label_counts": dict(zip(names, np.bincount(hard, minlength=len(names)).tolist())),
    }
    if args.benchmark:
        _, truth = _benchmark(args.benchmark, args.benchmark_col, names)
        if truth.shape[0] != target.size:
            raise ValidationError(f"benchmark has {truth.shape[0]} labels for {target.size} target points")
        summary["accuracy"] = float(np.mean(truth == hard))
    _dump_json(summary, out / "transfer.json")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if len(args.estimate) != len(args.benchmark):
        raise ValidationError(f"{len(args.estimate)} estimates but {len(args.benchmark)} benchmarks")
    tags = args.tag or [f"dataset{m}" for m in range(len(args.estimate))]
    if len(tags) != len(args.estimate):
        raise ValidationError("one --tag per estimate required")
    points, datasets = [], []
    for tag, est_path, bench_path in zip(tags, args.estimate, args.benchmark):
        try:
            data = json.loads(Path(est_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ValidationError(f"cannot read estimate {est_path}: {exc}") from None
        props = data.get("proportions")
        if not isinstance(props, dict) or not props:
            raise ValidationError(f"{est_path}: no proportions object")
        names = tuple(data.get("classes") or props)
        if set(names) != set(props):
            raise ValidationError(f"{est_path}: class list and proportions disagree")
        p_hat = ProbabilityVector([props[n] for n in names])
        p, _ = _benchmark(bench_path, args.label_col, names)
        points.extend(bland_altman_points(p_hat, p, tag, names))
        datasets.append({"dataset": tag, "kl": kl_divergence(p_hat, p),
                         "estimate": p_hat.tolist(), "benchmark": p.tolist(), "classes": list(names)})
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_bland_altman_csv(points, out / "bland_altman.csv")
    write_summary_json({"datasets": datasets, "summary": error_summary(points)}, out / "metrics.json")
    if args.svg:
        Path(args.svg).write_text(bland_altman_svg(points), encoding="utf-8")
    return EXIT_OK


def wgrid_points(step: float):
    if not 0 < step <= 1:
        raise ValidationError(f"grid step must lie in (0, 1], got {step!r}")
    n = int(round(1.0 / step))
    if abs(n * step - 1.0) > 1e-9:
        raise ValidationError(f"grid step {step!r} does not divide [0, 1] evenly")
    return [round(k / n, 12) for k in range(n + 1)]


def cmd_wgrid(args) -> int:
    config = resolve_config(args, DESC_ASC)
    do_pre = not args.no_preprocess
    source, partition, src_markers, _ = _load_labelled(args.source, args.label_col, do_pre)
    target, tgt_markers, _ = _load_target(args.target, args.label_col, do_pre)
    _check_markers(src_markers, tgt_markers, args.source, args.target)
    if args.grid:
        try:
            grid = [float(x) for x in args.grid.split(",")]
        except ValueError:
            raise ValidationError(f"bad --grid {args.grid!r}") from None
    else:
        grid = wgrid_points(args.step)
    values = profile_two_class(source, partition, target, grid, config, workers=args.workers)
    lines = ["h1,w_hat"] + [f"{h!r},{float(w)!r}" for h, w in zip(grid, values)]
    text = "\n".join(lines) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(args.out).write_text(text, encoding="utf-8")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _solver_flags(p, n_out=True):
    g = p.add_argument_group("solver settings (override --config and presets)")
    g.add_argument("--config", help="key=value settings file")
    g.add_argument("--fast", action="store_true", help="short budgets (n_out=1000, n=2000)")
    g.add_argument("--epsilon", type=float)
    g.add_argument("--lambda", dest="lam", type=float)
    if n_out:
        g.add_argument("--n-out", dest="n_out", type=int)
        g.add_argument("--n-in", dest="n_in", type=int)
        g.add_argument("--eta", type=float)
    g.add_argument("--n", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--step-scale", dest="step_scale", type=float)
    g.add_argument("--step-exponent", dest="step_exponent", type=float)
    g.add_argument("--cost-budget", dest="cost_budget", type=int,
                   help="largest I*J for which the cost table is precomputed")


def _io_flags(p, multi_source=False):
    if multi_source:
        p.add_argument("--source", action="append", required=True,
                       help="labelled source CSV; repeat to select the closest of several")
    else:
        p.add_argument("--source", required=True, help="labelled source CSV")
    p.add_argument("--target", required=True, help="target CSV")
    p.add_argument("--label-col", default="label")
    p.add_argument("--no-preprocess", action="store_true",
                   help="skip clamping at zero and per-marker scaling")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otprop", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic source/target pair")
    p.add_argument("--preset", choices=sorted(PRESETS))
    p.add_argument("--k", type=int)
    p.add_argument("--d", type=int)
    p.add_argument("--i", type=int)
    p.add_argument("--j", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--translation", type=float, default=0.2)
    p.add_argument("--scale", type=float, default=0.9)
    p.add_argument("--quad", type=float, default=0.15)
    p.add_argument("--no-shift", action="store_true", help="use the identity map for the target")
    p.add_argument("--no-preprocess", action="store_true")
    p.add_argument("--joint-scaling", action="store_true", help="scale source and target by shared divisors")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate target class proportions")
    _io_flags(p, multi_source=True)
    p.add_argument("--solver", choices=[DESC_ASC, MINMAX], default=DESC_ASC)
    _solver_flags(p)
    p.add_argument("--benchmark", help="CSV of true target labels, used only for the KL trace")
    p.add_argument("--benchmark-col", default="label")
    p.add_argument("--trace-every", type=int, default=100)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output JSON (default stdout)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("transfer", help="transfer source labels to the target")
    _io_flags(p)
    _solver_flags(p, n_out=False)
    p.add_argument("--estimate", help="JSON written by 'estimate'")
    p.add_argument("--proportions", help="class proportions as name=value pairs, or bare values in class order")
    p.add_argument("--no-reweight", action="store_true", help="keep the source's own class weights")
    p.add_argument("--benchmark", help="CSV of true target labels; adds accuracy to the summary")
    p.add_argument("--benchmark-col", default="label")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("evaluate", help="compare estimates with benchmark labels")
    p.add_argument("--estimate", action="append", required=True)
    p.add_argument("--benchmark", action="append", required=True)
    p.add_argument("--tag", action="append")
    p.add_argument("--label-col", default="label")
    p.add_argument("--svg", help="write a Bland-Altman scatter")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("wgrid", help="entropic cost against the first class weight (two classes)")
    _io_flags(p)
    _solver_flags(p, n_out=False)
    p.add_argument("--step", type=float, default=0.05)
    p.add_argument("--grid", help="explicit comma-separated grid, overrides --step")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="output CSV (default stdout)")
    p.set_defaults(func=cmd_wgrid)
    return parser


def _fail(code: int, kind: str, message: str, **extra) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, **extra}, sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        return _fail(EXIT_INVALID, "validation", str(exc))
    except NumericalAbort as exc:
        return _fail(EXIT_NUMERIC, "numerical", str(exc), iteration=exc.iteration, index=exc.index)
    except OSError as exc:
        return _fail(EXIT_INVALID, "io", f"{exc.filename}: {exc.strerror}")


if __name__ == "__main__":
    sys.exit(main())
