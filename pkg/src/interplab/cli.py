"""Command-line front end.

Exit codes: 0 success, 1 usage error (bad flags), 2 data or computation
error (bad checkpoints, incompatible shapes, failed evaluation, I/O).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from . import interp, report
from .errors import InterplabError
from .grid import (
    EvaluatorBinding,
    GridSpec,
    build_grid_1d,
    build_grid_2d,
    evaluate_grid_1d,
    evaluate_grid_2d,
)
from .tensor_store import SubsetFilter, load_checkpoint, save_checkpoint
from .toylab import ToyTaskConfig, evaluate_accuracy, generate_task, run_transfer_experiment


class _Parser(argparse.ArgumentParser):
    """argparse exits with status 2 on usage errors; this front end uses 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _load_grid(arg: str, kind: str) -> GridSpec:
    if arg == "default":
        return GridSpec(kind=kind)
    doc = json.loads(Path(arg).read_text("utf-8"))
    doc.setdefault("kind", kind)
    return GridSpec.from_dict(doc)


def _load_eval_binding(path):
    """Eval spec JSON: {"config": {...}, "seed": int, "source_domain": "src",
    "target_domain": "tgt", "task": "toyclass"}. The two dev sets are
    regenerated deterministically from the toy config."""
    doc = json.loads(Path(path).read_text("utf-8"))
    if not isinstance(doc, dict):
        raise ValueError("eval spec must be a JSON object")
    cfg = ToyTaskConfig.from_dict(doc.get("config", {}))
    if "seed" in doc:
        cfg = dataclasses.replace(cfg, seed=int(doc["seed"]))
    source = doc.get("source_domain", "src")
    target = doc.get("target_domain", "tgt")
    for d in (source, target):
        if d not in ("src", "tgt"):
            raise ValueError(f"domain must be 'src' or 'tgt', got {d!r}")
    data = generate_task(cfg)
    binding = EvaluatorBinding(
        evaluate=evaluate_accuracy,
        source_dev=data[source]["dev"],
        target_dev=data[target]["dev"],
        metric="acc",
        source_id=f"seed{cfg.seed}:{source}-dev",
        target_id=f"seed{cfg.seed}:{target}-dev",
    )
    return binding, (source, target), doc.get("task", "toyclass"), cfg.seed


def cmd_interp1d(args) -> int:
    theta0 = load_checkpoint(args.a)
    theta1 = load_checkpoint(args.b)
    filt = SubsetFilter(args.subset)
    grid = build_grid_1d(_load_grid(args.grid, "one_d"))
    binding, pair, task, seed = _load_eval_binding(args.eval)
    records = evaluate_grid_1d(theta0, theta1, grid, binding, filt,
                               pair=pair, task=task, seed=seed)
    Path(args.out).write_text(report.emit_records_csv(records), "utf-8")
    return 0


def cmd_interp2d(args) -> int:
    theta_bi = load_checkpoint(args.bi)
    theta_src = load_checkpoint(args.src)
    theta_tgt = load_checkpoint(args.tgt)
    filt = SubsetFilter(args.subset)
    grid = build_grid_2d(_load_grid(args.grid, "two_d"))
    binding, pair, task, seed = _load_eval_binding(args.eval)
    records = evaluate_grid_2d(theta_bi, theta_src, theta_tgt, grid, binding, filt,
                               pair=pair, task=task, seed=seed)
    Path(args.out).write_text(report.emit_records_csv(records), "utf-8")
    return 0


def cmd_diag(args) -> int:
    theta_src = load_checkpoint(args.src)
    theta_tgt = load_checkpoint(args.tgt)
    theta_bi = load_checkpoint(args.bi)
    d_src = interp.compute_delta(theta_src, theta_bi)
    d_tgt = interp.compute_delta(theta_tgt, theta_bi)
    modes = [args.subset] if args.subset else ["all", "encoder"]
    doc = {}
    for mode in modes:
        d = interp.direction_diagnostics(d_src, d_tgt, SubsetFilter(mode))
        doc[mode] = {
            "norm_src": d.norm_a,
            "norm_tgt": d.norm_b,
            "norm_ratio": d.norm_ratio,
            "angle_deg": d.angle_deg,
        }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_analogy(args) -> int:
    theta_a = load_checkpoint(args.a)
    theta_b = load_checkpoint(args.b)
    theta_c = load_checkpoint(args.c)
    save_checkpoint(interp.model_analogy(theta_c, theta_b, theta_a), args.out)
    return 0


def cmd_toy_run(args) -> int:
    cfg = ToyTaskConfig.from_file(args.config) if args.config else ToyTaskConfig()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    progress = (lambda msg: print(msg, file=sys.stderr)) if not args.quiet else None
    result = run_transfer_experiment(cfg, args.seeds, out_dir=out, progress=progress)

    (out / "records.csv").write_text(report.emit_records_csv(result.records), "utf-8")
    docs = [
        report.aggregates_to_doc("one_d", "per_pair", result.aggregates["one_d:per_pair"]),
        report.aggregates_to_doc("one_d", "pooled", result.aggregates["one_d:pooled"]),
        report.aggregates_to_doc("two_d", "pooled", result.aggregates["two_d:pooled"]),
    ]
    (out / "aggregates.json").write_text(report.emit_aggregates_json(docs), "utf-8")

    line = report.line_spec_from_aggregates(
        result.aggregates["one_d:per_pair"],
        title="Interpolation paths: monolingual to bilingual",
        x_label="mixing coefficient",
        y_label="normalized accuracy",
    )
    (out / "fig-1d.svg").write_text(report.emit_line_plot(line), "utf-8")
    heatmaps = {}
    for side in ("source", "target"):
        spec = report.heatmap_spec_from_aggregates(
            result.aggregates["two_d:pooled"], side,
            title=f"{side} accuracy over the interpolation plane",
        )
        heatmaps[side] = spec
        (out / f"fig-2d-{side}.svg").write_text(report.emit_heatmap(spec), "utf-8")

    # Raster companions to the SVG artifacts.
    from . import figures

    figures.render_line_png(line, out / "fig-1d.png")
    for side, spec in heatmaps.items():
        figures.render_heatmap_png(spec, out / f"fig-2d-{side}.png")
    return 0


def cmd_aggregate(args) -> int:
    records = report.parse_records_csv(Path(args.infile).read_text("utf-8"))
    if any(r.normalized is None for r in records):
        from .aggregate import normalize_by_reference

        records = normalize_by_reference(records)
    from .aggregate import aggregate_records

    docs = []
    for kind in ("one_d", "two_d"):
        subset = [r for r in records if r.kind == kind]
        if subset:
            docs.append(report.aggregates_to_doc(kind, args.scope, aggregate_records(subset, args.scope)))
    Path(args.out).write_text(report.emit_aggregates_json(docs), "utf-8")
    return 0


def cmd_plot(args) -> int:
    docs = report.parse_aggregates_json(Path(args.infile).read_text("utf-8"))
    want_kind = "one_d" if args.style == "line" else "two_d"
    chosen = None
    for doc in docs:
        if doc["kind"] != want_kind:
            continue
        if args.scope is not None and doc["scope"] != args.scope:
            continue
        chosen = doc
        break
    if chosen is None:
        raise ValueError(f"no {want_kind} aggregates in {args.infile}")
    if args.style == "line":
        spec = report.line_spec_from_aggregates(chosen["records"])
        text = report.emit_line_plot(spec)
    else:
        spec = report.heatmap_spec_from_aggregates(chosen["records"], args.side)
        text = report.emit_heatmap(spec)
    Path(args.out).write_text(text, "utf-8")
    if args.png:
        from . import figures

        if args.style == "line":
            figures.render_line_png(spec, args.png)
        else:
            figures.render_heatmap_png(spec, args.png)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="interplab",
                     description="Checkpoint interpolation and transfer-surface analysis")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("interp1d", help="sweep the 1D interpolation path between two checkpoints")
    p.add_argument("--a", required=True, help="endpoint checkpoint at alpha=0 (monolingual)")
    p.add_argument("--b", required=True, help="endpoint checkpoint at alpha=1 (bilingual)")
    p.add_argument("--subset", choices=["all", "encoder", "head"], default="all")
    p.add_argument("--grid", default="default", help="'default' or a grid spec JSON file")
    p.add_argument("--eval", required=True, help="eval spec JSON (toy dev sets)")
    p.add_argument("--out", required=True, help="records CSV path")
    p.set_defaults(func=cmd_interp1d)

    p = sub.add_parser("interp2d", help="sweep the 2D interpolation plane")
    p.add_argument("--bi", required=True, help="bilingual checkpoint (plane origin)")
    p.add_argument("--src", required=True, help="source-only checkpoint (alpha1=1)")
    p.add_argument("--tgt", required=True, help="target-only checkpoint (alpha2=1)")
    p.add_argument("--subset", choices=["all", "encoder", "head"], default="all")
    p.add_argument("--grid", default="default", help="'default' or a grid spec JSON file")
    p.add_argument("--eval", required=True, help="eval spec JSON (toy dev sets)")
    p.add_argument("--out", required=True, help="records CSV path")
    p.set_defaults(func=cmd_interp2d)

    p = sub.add_parser("diag", help="norms and angle between the two delta directions")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--bi", required=True)
    p.add_argument("--subset", choices=["all", "encoder", "head"], default=None,
                   help="restrict to one filter (default: report all and encoder)")
    p.set_defaults(func=cmd_diag)

    p = sub.add_parser("analogy", help="encoder arithmetic c + b - a, head reused from c")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--c", required=True)
    p.add_argument("--out", required=True, help="output checkpoint path")
    p.set_defaults(func=cmd_analogy)

    p = sub.add_parser("toy-run", help="full synthetic transfer experiment")
    p.add_argument("--config", default=None, help="toy config JSON (defaults when omitted)")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(func=cmd_toy_run)

    p = sub.add_parser("aggregate", help="normalize and aggregate a records CSV")
    p.add_argument("--in", dest="infile", required=True, help="records CSV")
    p.add_argument("--scope", choices=["pooled", "per_pair", "per_task"], default="pooled")
    p.add_argument("--out", required=True, help="aggregates JSON path")
    p.set_defaults(func=cmd_aggregate)

    p = sub.add_parser("plot", help="render an aggregates JSON as SVG")
    p.add_argument("style", choices=["line", "heatmap"])
    p.add_argument("--in", dest="infile", required=True, help="aggregates JSON")
    p.add_argument("--out", required=True, help="output SVG path")
    p.add_argument("--side", choices=["source", "target"], default="target",
                   help="heatmap eval side")
    p.add_argument("--scope", default=None, help="pick the document with this scope")
    p.add_argument("--png", default=None, help="also render a PNG to this path")
    p.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (InterplabError, OSError, ValueError, json.JSONDecodeError) as e:
        print(f"interplab: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
