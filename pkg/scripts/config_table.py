"""Compare all cooperative configurations on a seeded occluded batch.

    python scripts/config_table.py --scenarios 200 --out results/configs.md
"""

import argparse
import json
import time
from pathlib import Path

from crashsim.cli import render_table
from crashsim.evaluate import EvalSettings, evaluate_logs, scenario_batch
from crashsim.v2x import CONFIGS


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--samples", type=int, default=5)
    ap.add_argument("--configs", default=",".join(CONFIGS))
    ap.add_argument("--fusion", default="object")
    ap.add_argument("--out", default="results/configs.md")
    args = ap.parse_args()

    t = time.time()
    logs = scenario_batch(args.scenarios, seed=args.seed, occluded=True)
    settings = [EvalSettings(config=c, samples=args.samples, fusion=args.fusion) for c in args.configs.split(",")]
    accs = evaluate_logs(logs, settings)
    reports = [accs[s].report() for s in settings]

    lines = [render_table(reports), "", "| Config | visible APA | invisible APA | visible windows | invisible windows |", "|---|---|---|---|---|"]
    for r in reports:
        v, i = r["visibility"]["visible"], r["visibility"]["invisible"]
        f = lambda x: "-" if x is None else f"{100 * x:.1f}"  # noqa: E731
        lines.append(f"| {r['settings']['config']} | {f(v['apa'])} | {f(i['apa'])} | {v['windows']} | {i['windows']} |")
    text = "\n".join(lines) + "\n"

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    out.with_suffix(".json").write_text(json.dumps(reports, indent=1, sort_keys=True))
    print(text)
    print(f"{len(logs)} scenarios in {time.time() - t:.0f} s")


if __name__ == "__main__":
    main()
