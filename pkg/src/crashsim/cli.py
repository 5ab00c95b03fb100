"""Command-line entry point: generate datasets, evaluate configurations, sweep degradations, render tables."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from collections import Counter
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .bev_motion import horizon_steps
from .evaluate import EvalSettings, evaluate_logs
from .formats import (
    DataError,
    DatasetManifest,
    ManifestEntry,
    dumps_report,
    read_log,
    read_manifest,
    read_report,
    write_log,
    write_manifest,
)
from .scenario_gen import SCENARIO_TYPES, ScenarioConfig, ScenarioError, spawn_scenario, split_dataset
from .sim_kernel import run_scenario
from .v2x import CONFIGS, FUSION_MODES

ENV_DATA = "CRASHSIM_DATA"
EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 2, 3
TABLE_COLUMNS = ("mIOU", "VPQ", "APA", "id err", "pos err", "time err", "mAP")


class UsageError(Exception):
    pass


def _parse_types(text: str) -> List[int]:
    out: List[int] = []
    for part in text.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part:
            a, b = part.split("-", 1)
            out.extend(range(int(a), int(b) + 1))
        else:
            out.append(int(part))
    bad = [t for t in out if t not in SCENARIO_TYPES]
    if not out or bad:
        raise UsageError(f"scenario types must be within {min(SCENARIO_TYPES)}-{max(SCENARIO_TYPES)}: {text!r}")
    return out


def _parse_floats(text: str) -> List[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise UsageError("empty value list")
    return vals


def _parse_configs(text: str) -> List[str]:
    names = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in names if c not in CONFIGS]
    if not names or bad:
        raise UsageError(f"unknown configuration(s) {bad}; choose from {', '.join(CONFIGS)}")
    return names


def scenario_seed(base: int, index: int, attempt: int = 0) -> int:
    return int(np.random.SeedSequence([int(base), int(index), int(attempt)]).generate_state(1)[0] & 0x7FFFFFFF)


def generate_dataset(n: int, types: Sequence[int], seed: int, out: Path, log=print) -> DatasetManifest:
    """Simulate `n` scenarios (types cycled) into `out`, with a stratified split and manifest."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "logs").mkdir(exist_ok=True)
    rows = []
    for i in range(n):
        typ = types[i % len(types)]
        for attempt in range(20):
            s = scenario_seed(seed, i, attempt)
            cfg = ScenarioConfig.sample(typ, s)
            m = cfg.build_map()
            try:
                plan = spawn_scenario(cfg, m)
                break
            except ScenarioError:
                continue
        else:
            raise DataError(f"scenario {i} (type {typ}) could not be spawned")
        result = run_scenario(plan, cfg, m)
        sid = f"s{i:05d}"
        rel = f"logs/{sid}.jsonl"
        write_log(result, out / rel)
        rows.append((sid, typ, s, rel, result))
    train, val, test = split_dataset([r[0] for r in rows], [r[1] for r in rows], seed=seed)
    split_of = {**{k: "train" for k in train}, **{k: "val" for k in val}, **{k: "test" for k in test}}
    entries = [
        ManifestEntry(sid, typ, s, split_of[sid], rel, r.termination_reason, r.collision.t if r.collision else None)
        for sid, typ, s, rel, r in rows
    ]
    manifest = DatasetManifest(__version__, entries, seed=seed)
    write_manifest(manifest, out / "manifest.json")

    by_type = Counter(e.type for e in entries)
    coll = Counter(e.type for e in entries if e.termination_reason == "collision")
    log(f"generated {n} scenarios into {out}")
    for t in sorted(by_type):
        log(f"  type {t:2d}: {by_type[t]:4d} scenarios, {coll[t]:4d} collisions")
    acc = [e for e in entries if e.type != 0]
    if acc:
        rate = sum(e.termination_reason == "collision" for e in acc) / len(acc)
        log(f"  accident-scenario collision rate: {rate:.3f}")
    log(f"  split: {manifest.split_counts()}")
    return manifest


def _dataset_root(arg: Optional[str]) -> Path:
    root = arg or os.environ.get(ENV_DATA)
    if not root:
        raise UsageError(f"no dataset given (use --dataset or set {ENV_DATA})")
    return Path(root)


def load_split(root: Path, split: str):
    manifest = read_manifest(root / "manifest.json")
    entries = manifest.split(split)
    if not entries:
        raise DataError(f"split {split!r} of {root} is empty")
    for e in entries:
        try:
            yield e.id, read_log(root / e.path)
        except DataError as exc:
            raise DataError(f"{e.path}: {exc}") from None


def _settings_from(args, config: str, **over) -> EvalSettings:
    kw = dict(
        config=config,
        horizon=horizon_steps(args.horizon),
        samples=args.samples,
        noise=args.noise,
        latency=args.latency,
        seed=args.seed,
        fusion=args.fusion,
    )
    kw.update(over)
    return EvalSettings(**kw)


def _progress(quiet: bool):
    if quiet:
        return None

    def show(n, sid):
        print(f"\r  evaluated {n} scenarios ({sid})", end="", file=sys.stderr, flush=True)

    return show


def run_reports(root: Path, split: str, settings: Sequence[EvalSettings], quiet: bool = True) -> List[dict]:
    accs = evaluate_logs(load_split(root, split), settings, progress=_progress(quiet))
    if not quiet:
        print(file=sys.stderr)
    out = []
    for s in settings:
        rep = accs[s].report()
        rep["dataset"] = {"split": split}
        out.append(rep)
    return out


# --------------------------------------------------------------------------- plots and tables


def svg_line_plot(xs: Sequence[float], series: dict, xlabel: str, ylabel: str, title: str = "") -> str:
    """Minimal self-contained SVG line chart, one polyline per series."""
    W, H, L, R, T, B = 640, 400, 60, 150, 30, 50
    ys = [v for vals in series.values() for v in vals if v is not None]
    y0, y1 = (min(ys), max(ys)) if ys else (0.0, 1.0)
    if y1 - y0 < 1e-9:
        y0, y1 = y0 - 1.0, y1 + 1.0
    x0, x1 = min(xs), max(xs)
    if x1 - x0 < 1e-12:
        x1 = x0 + 1.0
    px = lambda x: L + (x - x0) / (x1 - x0) * (W - L - R)  # noqa: E731
    py = lambda y: H - B - (y - y0) / (y1 - y0) * (H - T - B)  # noqa: E731
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">',
        f'<rect width="{W}" height="{H}" fill="white"/>',
        f'<line x1="{L}" y1="{H - B}" x2="{W - R}" y2="{H - B}" stroke="black"/>',
        f'<line x1="{L}" y1="{T}" x2="{L}" y2="{H - B}" stroke="black"/>',
        f'<text x="{(L + W - R) / 2}" y="{H - 12}" text-anchor="middle">{xlabel}</text>',
        f'<text x="16" y="{(T + H - B) / 2}" text-anchor="middle" transform="rotate(-90 16 {(T + H - B) / 2})">{ylabel}</text>',
    ]
    if title:
        parts.append(f'<text x="{(L + W - R) / 2}" y="18" text-anchor="middle">{title}</text>')
    for x in xs:
        parts.append(f'<text x="{px(x):.1f}" y="{H - B + 16}" text-anchor="middle">{x:g}</text>')
    for k in range(5):
        y = y0 + (y1 - y0) * k / 4
        parts.append(f'<text x="{L - 6}" y="{py(y) + 4:.1f}" text-anchor="end">{y:.1f}</text>')
    for n, (name, vals) in enumerate(series.items()):
        color = palette[n % len(palette)]
        pts = " ".join(f"{px(x):.1f},{py(v):.1f}" for x, v in zip(xs, vals) if v is not None)
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = T + 16 * n + 10
        parts.append(f'<line x1="{W - R + 10}" y1="{ly}" x2="{W - R + 30}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{W - R + 34}" y="{ly + 4}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _pct(v) -> str:
    return "-" if v is None else f"{100.0 * v:.1f}"


def _num(v) -> str:
    return "-" if v is None else f"{v:.2f}"


def render_table(reports: Sequence[dict]) -> str:
    """Markdown comparison table, one row per report, metrics in percent except error columns."""
    lines = ["| Config | " + " | ".join(TABLE_COLUMNS) + " |", "|---" * (len(TABLE_COLUMNS) + 1) + "|"]
    for r in reports:
        s = r["settings"]
        name = s["config"]
        extra = []
        if s.get("noise"):
            extra.append(f"noise {s['noise']:g} m")
        if s.get("latency"):
            extra.append(f"latency {s['latency']:g} s")
        if s.get("horizon", 4) != 4:
            extra.append(f"horizon {s['horizon'] * 0.5:g} s")
        if extra:
            name += " (" + ", ".join(extra) + ")"
        a = r["accident"]
        cells = [
            _pct(r["motion"]["miou"]),
            _pct(r["motion"]["vpq"]),
            _pct(a["apa"]),
            _num(a["id_err"]),
            _num(a["pos_err"]),
            _num(a["time_err"]),
            _pct(r["detection"]["map"]),
        ]
        lines.append(f"| {name} | " + " | ".join(cells) + " |")
    out = "\n".join(lines) + "\n"
    ttc_rows = [r for r in reports if "ttc" in r]
    if ttc_rows:
        out += "\n| Config | horizon | TTC 1s | TTC 2s | TTC 3s | TTC 4s |\n|---|---|---|---|---|---|\n"
        for r in ttc_rows:
            cells = [("none" if r["ttc"][k]["apa"] is None else f"{100 * r['ttc'][k]['apa']:.1f}") for k in ("1", "2", "3", "4")]
            out += f"| {r['settings']['config']} | {r['settings']['horizon'] * 0.5:g}s | " + " | ".join(cells) + " |\n"
    return out


# --------------------------------------------------------------------------- commands


def cmd_generate(args) -> int:
    if args.scenarios < 1:
        raise UsageError("--scenarios must be >= 1")
    generate_dataset(args.scenarios, _parse_types(args.types), args.seed, Path(args.out), log=print)
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.config not in CONFIGS:
        raise UsageError(f"unknown configuration {args.config!r}; choose from {', '.join(CONFIGS)}")
    root = _dataset_root(args.dataset)
    (rep,) = run_reports(root, args.split, [_settings_from(args, args.config)], quiet=args.quiet)
    text = dumps_report(rep)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    a = rep["accident"]
    print(
        f"{args.config}: windows={rep['samples']['windows']} APA={_pct(a['apa'])} "
        f"mIOU={_pct(rep['motion']['miou'])} VPQ={_pct(rep['motion']['vpq'])} mAP={_pct(rep['detection']['map'])}"
    )
    return EXIT_OK


def sweep_rows(reports: Sequence[dict], param: str) -> List[dict]:
    rows = []
    for r in reports:
        s = r["settings"]
        rows.append(
            {
                "config": s["config"],
                param: s[param],
                "apa": r["accident"]["apa"],
                "miou": r["motion"]["miou"],
                "vpq": r["motion"]["vpq"],
                "map": r["detection"]["map"],
                "windows": r["samples"]["windows"],
            }
        )
    return rows


def rows_to_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def cmd_sweep(args) -> int:
    values = _parse_floats(args.values)
    if any(v < 0 for v in values):
        raise UsageError("sweep values must be >= 0")
    configs = _parse_configs(args.configs)
    root = _dataset_root(args.dataset)
    settings = [_settings_from(args, c, **{args.param: v}) for c in configs for v in values]
    reports = run_reports(root, args.split, settings, quiet=args.quiet)
    rows = sweep_rows(reports, args.param)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"sweep_{args.param}.csv").write_text(rows_to_csv(rows), encoding="utf-8")
    series = {c: [100.0 * r["apa"] for r in rows if r["config"] == c] for c in configs}
    unit = "m" if args.param == "noise" else "s"
    label = "pose noise mean" if args.param == "noise" else "latency"
    (out / f"sweep_{args.param}.svg").write_text(svg_line_plot(values, series, f"{label} ({unit})", "APA (%)"), encoding="utf-8")
    for r in rows:
        print(f"{r['config']:>18s} {args.param}={r[args.param]:<5g} APA={100 * r['apa']:.1f}")
    return EXIT_OK


def cmd_report(args) -> int:
    reports = [read_report(p) for p in args.inputs]
    text = render_table(reports)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="crashsim", description=__doc__)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate scenarios into a dataset directory")
    g.add_argument("--scenarios", type=int, required=True)
    g.add_argument("--types", default="1-12", help="scenario types, e.g. '1-12' or '0,1,5' (0 = normal)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def eval_opts(sp):
        sp.add_argument("--dataset", default=None, help=f"dataset directory (default ${ENV_DATA})")
        sp.add_argument("--horizon", choices=("2s", "3s", "4s"), default="2s")
        sp.add_argument("--samples", type=int, default=5)
        sp.add_argument("--noise", type=float, default=0.0, help="pose-noise mean (m) for non-ego rigs")
        sp.add_argument("--latency", type=float, default=0.0, help="latency (s) for non-ego rigs")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--split", choices=("train", "val", "test", "all"), default="val")
        sp.add_argument("--fusion", choices=FUSION_MODES, default="object", help="how rig predictions are combined")
        sp.add_argument("--quiet", action="store_true")

    e = sub.add_parser("evaluate", help="evaluate one configuration on a dataset split")
    eval_opts(e)
    e.add_argument("--config", default="single")
    e.add_argument("--out", default=None, help="write the JSON report here")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("sweep", help="APA versus pose noise or latency for several configurations")
    eval_opts(s)
    s.add_argument("--param", choices=("noise", "latency"), required=True)
    s.add_argument("--values", required=True)
    s.add_argument("--configs", default="ego+infra,4vehicles+infra")
    s.add_argument("--out", default="sweep_out", help="output directory for CSV and SVG")
    s.set_defaults(func=cmd_sweep)

    r = sub.add_parser("report", help="render evaluation reports as a markdown table")
    r.add_argument("--inputs", nargs="+", required=True)
    r.add_argument("--out", default=None)
    r.set_defaults(func=cmd_report)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "samples", 0) < 0:
            raise UsageError("--samples must be >= 0")
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"crashsim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"crashsim: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
