"""Command-line entry point: ``multising {classify,recur,splitting,verify,validate}``.

Exit codes: 0 pass, 1 failed verdict, 2 unknown, 3 configuration error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import warnings
from pathlib import Path
from typing import Any

import numpy as np

from . import __version__
from . import config as cfgmod
from . import recurrence as rec
from . import splitting as sp
from .cocycle import CocycleEvaluator, CocycleSpec

SCHEMA_VERSION = 1
EXIT_PASS, EXIT_FAIL, EXIT_UNKNOWN, EXIT_CONFIG = 0, 1, 2, 3

log = logging.getLogger("multising")


def _clean(value: Any) -> Any:
    """JSON-safe copy: arrays to lists, non-finite floats to strings, tuples to lists."""
    if isinstance(value, dict):
        return {str(k): _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    if isinstance(value, np.ndarray):
        return _clean(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else ("inf" if v > 0 else "-inf" if v < 0 else "nan")
    if isinstance(value, complex):
        return [_clean(value.real), _clean(value.imag)]
    return value


def _flatten(prefix: str, value: Any, rows: list[tuple[str, Any]]) -> None:
    if isinstance(value, dict):
        for k in sorted(value):
            _flatten(f"{prefix}.{k}" if prefix else str(k), value[k], rows)
    elif isinstance(value, list) and any(isinstance(v, (dict, list)) for v in value):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, rows)
    else:
        rows.append((prefix, json.dumps(value) if isinstance(value, list) else value))


def render(report: dict, fmt: str) -> str:
    report = _clean(report)
    if fmt == "json":
        return json.dumps(report, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
    rows: list[tuple[str, Any]] = []
    _flatten("", report, rows)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["key", "value"])
    w.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# pipelines


def _class_report(c: sp.SingularityClass) -> dict:
    return {
        "name": c.name,
        "position": c.position,
        "eigenvalues_real": c.eigenvalues.real,
        "eigenvalues_imag": c.eigenvalues.imag,
        "index": c.index,
        "saddle_value": c.saddle_value,
        "lorenz_like": c.lorenz_like,
        "splitting_dims": list(c.strong_dims),
    }


def _verdict_config(cfg: cfgmod.AnalysisConfig) -> sp.VerdictConfig:
    return sp.VerdictConfig(
        horizon=cfg.horizon, buffer=cfg.buffer, t_dom=cfg.t_dom, tol=cfg.tol, gap_tol=cfg.gap_tol,
        delta_rate=cfg.delta_rate, eig_tol=cfg.eig_tol, escape_horizon=cfg.escape_horizon, grid=cfg.grid,
        eps=cfg.eps, t_max=cfg.t_max, samples_per_box=cfg.samples_per_box, directions=cfg.directions,
        n_regular=cfg.n_regular, spacing=cfg.spacing, transient=cfg.transient, seed=cfg.seed,
    )


def run_classify(spec, cfg) -> tuple[dict, int]:
    region = np.asarray(cfg.region, float)
    out = []
    for s in spec.singularities:
        entry: dict[str, Any] = {"name": s.name, "hyperbolic": s.hyperbolic}
        if not s.hyperbolic:
            out.append(entry)
            continue
        c = sp.classify_singularity(spec, s, cfg.eig_tol)
        entry.update(_class_report(c))
        inside = bool(np.all((s.position >= region[:, 0]) & (s.position <= region[:, 1])))
        entry["in_region"] = inside
        if inside:
            esc = {}
            for j in c.stable_gaps:
                esc[f"stable_{j}"] = sp.escaping_manifold_test(spec, s, j, region, cfg.escape_horizon, "stable",
                                                               tol=cfg.tol, seed=cfg.seed)
            for j in c.unstable_gaps:
                esc[f"unstable_{j}"] = sp.escaping_manifold_test(spec, s, j, region, cfg.escape_horizon,
                                                                 "unstable", tol=cfg.tol, seed=cfg.seed)
            entry["escaping"] = esc
        out.append(entry)
    unknown = any(v is None for e in out for v in e.get("escaping", {}).values())
    return {"singularities": out}, (EXIT_UNKNOWN if unknown else EXIT_PASS)


def _graph(spec, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", rec.ResolutionWarning)
        cover = rec.BoxCover(np.asarray(cfg.region, float), cfg.grid, cfg.eps, cfg.t_max)
    return rec.build_chain_graph(spec, cover, cfg.samples_per_box, cfg.seed)


def run_recur(spec, cfg, out_dir: Path | None) -> tuple[dict, int]:
    graph = _graph(spec, cfg)
    classes = rec.chain_classes(graph)
    levels = rec.class_levels(graph)
    centers = graph.cover.centers()
    report = {
        "n_boxes": graph.cover.n_boxes,
        "n_edges": int(len(graph.edges)),
        "n_classes": len(classes),
        "classes": [
            {
                "boxes": int(c.size),
                "level": int(levels[k]),
                "centroid": centers[c].mean(axis=0),
                "singularities": [s.name for s in rec.singularities_in_class(spec, graph, k)],
            }
            for k, c in enumerate(classes)
        ],
    }
    if out_dir is not None:
        rec.write_adjacency(graph, out_dir / "chain_graph.txt")
        rec.write_class_levels(graph, out_dir / "class_levels.csv")
    return report, EXIT_PASS


def _write_rates(verdict: sp.Verdict, spec, out_dir: Path) -> None:
    est = verdict.estimate
    if est is None:
        return
    sig = {s.name: s for s in spec.singularities}
    h_E = CocycleEvaluator(spec, CocycleSpec.over(spec, [sig[n] for n in verdict.S_E]), est.tol)
    h_F = CocycleEvaluator(spec, CocycleSpec.over(spec, [sig[n] for n in verdict.S_F]), est.tol)
    rE, rF = sp.reparam_rate_arrays(est, h_E, h_F)
    with open(out_dir / "rates.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        d = spec.dimension
        w.writerow(["anchor", "owner"] + [f"x{i}" for i in range(d)] + [f"u{i}" for i in range(d)]
                   + ["plain_rate_E", "plain_rate_F", "rate_E", "rate_F"])
        for k, a in enumerate(est.anchors):
            w.writerow([k, a.owner or ""] + [repr(float(v)) for v in a.line.base]
                       + [repr(float(v)) for v in a.line.direction]
                       + [repr(float(est.rates_E[k])), repr(float(est.rates_F[k])), repr(float(rE[k])),
                          repr(float(rF[k]))])


def describe(verdict: sp.Verdict) -> str:
    flag = verdict.multisingular
    if flag is None:
        return "unknown: " + ", ".join(verdict.failing)
    if not flag:
        return "not multisingular hyperbolic: failing " + ", ".join(verdict.failing)
    if verdict.estimate is None:
        return "multisingular hyperbolic (empty sampled set)"
    if not verdict.S_E and not verdict.S_F:
        return "hyperbolic (no singularities in the class)"
    if not verdict.S_E:
        return "singular hyperbolic (S_E empty)"
    return f"multisingular, S_E={{{', '.join(verdict.S_E)}}}, S_F={{{', '.join(verdict.S_F)}}}"


def verdict_report(verdict: sp.Verdict) -> dict:
    est = verdict.estimate
    return {
        "verdict": describe(verdict),
        "multisingular": verdict.multisingular,
        "clauses": verdict.clauses,
        "failing": verdict.failing,
        "S_E": verdict.S_E,
        "S_F": verdict.S_F,
        "excluded": verdict.excluded,
        "superset": verdict.superset,
        "singularities": [_class_report(c) for c in verdict.classes],
        "center_dims": {k: c.dims for k, c in verdict.centers.items()},
        "escaping": verdict.escapes,
        "margins": verdict.margins,
        "splitting": None if est is None else {
            "dims": list(est.dims), "horizon": est.horizon, "n_anchors": len(est.anchors),
        },
        "notes": verdict.notes,
    }


def run_verify(spec, cfg, out_dir: Path | None) -> tuple[dict, int]:
    verdict = sp.check_multisingular(spec, np.asarray(cfg.region, float), _verdict_config(cfg))
    if out_dir is not None:
        _write_rates(verdict, spec, out_dir)
    flag = verdict.multisingular
    code = EXIT_PASS if flag else EXIT_UNKNOWN if flag is None else EXIT_FAIL
    return verdict_report(verdict), code


def run_splitting(spec, cfg, out_dir: Path | None) -> tuple[dict, int]:
    """The verdict pipeline, reporting only the splitting part; the exit code follows domination."""
    verdict = sp.check_multisingular(spec, np.asarray(cfg.region, float), _verdict_config(cfg))
    if out_dir is not None:
        _write_rates(verdict, spec, out_dir)
    full = verdict_report(verdict)
    keys = ("splitting", "margins", "S_E", "S_F", "notes")
    report = {k: full[k] for k in keys}
    report["dominated"] = verdict.dominated
    code = EXIT_PASS if verdict.dominated else EXIT_UNKNOWN if verdict.dominated is None else EXIT_FAIL
    return report, code


RUNNERS = {"classify": run_classify, "recur": run_recur, "splitting": run_splitting, "verify": run_verify}


# ---------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multising", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("classify", "recur", "splitting", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--flow", help="builtin flow name")
        p.add_argument("--config", help="TOML configuration file")
        p.add_argument("--preset", help="named parameter set of the flow")
        p.add_argument("--region", help="lo:hi per axis, comma separated")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="directory for the report and CSV exports")
        p.add_argument("--format", choices=("json", "csv"))
        p.add_argument("-v", "--verbose", action="store_true")
    p = sub.add_parser("validate")
    p.add_argument("config", help="TOML configuration file")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    return parser


def _assemble(args) -> tuple[cfgmod.AnalysisConfig, list[str]]:
    problems: list[str] = []
    if args.config:
        try:
            cfg, problems = cfgmod.load(args.config)
        except (OSError, ValueError) as exc:
            return cfgmod.AnalysisConfig(), [f"config: cannot read {args.config}: {exc}"]
    else:
        cfg = cfgmod.AnalysisConfig()
    cfg.command = args.command
    if args.flow:
        cfg.flow = args.flow
    if args.preset:
        cfg.preset = args.preset
    if args.region:
        try:
            cfg.region = cfgmod.parse_region(args.region)
        except ValueError as exc:
            problems.append(f"region: {exc}")
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out:
        cfg.out = args.out
    if args.format:
        cfg.format = args.format
    return cfg, problems


def _join_region(argv: list[str]) -> list[str]:
    """Glue ``--region VALUE`` into one token so values like ``-25:25,...`` are not read as options."""
    out, i = [], 0
    while i < len(argv):
        if argv[i] == "--region" and i + 1 < len(argv):
            out.append(f"--region={argv[i + 1]}")
            i += 2
        else:
            out.append(argv[i])
            i += 1
    return out


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(_join_region(list(sys.argv[1:] if argv is None else argv)))
    if args.command == "validate":
        try:
            cfg, problems = cfgmod.load(args.config)
        except OSError as exc:
            sys.stderr.write(f"cannot read {args.config}: {exc}\n")
            return EXIT_CONFIG
        except ValueError as exc:
            problems = [f"config: {exc}"]
        else:
            problems = problems + cfgmod.validate(cfg)
        sys.stdout.write(render({"schema_version": SCHEMA_VERSION, "diagnostics": problems}, args.format))
        return EXIT_CONFIG if problems else EXIT_PASS

    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg, problems = _assemble(args)
    problems += cfgmod.validate(cfg)
    if problems:
        for p in problems:
            sys.stderr.write(f"config error: {p}\n")
        return EXIT_CONFIG
    cfg = cfg.resolved()
    spec = cfgmod.build_flow(cfg)
    out_dir = Path(cfg.out) if cfg.out else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    log.info("running %s on %s", cfg.command, cfg.flow)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        results, code = RUNNERS[cfg.command](spec, cfg, out_dir) if cfg.command != "classify" \
            else run_classify(spec, cfg)
    report = {
        "schema_version": SCHEMA_VERSION,
        "command": cfg.command,
        "flow": cfg.flow,
        "preset": cfg.preset,
        "seed": cfg.seed,
        "config": cfg.as_dict(),
        "results": results,
        "exit_code": code,
    }
    text = render(report, cfg.format)
    if out_dir is not None:
        (out_dir / f"report.{cfg.format}").write_text(text)
    sys.stdout.write(text)
    return code


if __name__ == "__main__":
    sys.exit(main())
