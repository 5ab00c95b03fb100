"""APA against prediction horizon, overall and by time-to-collision.

    python scripts/horizon_study.py --scenarios 200 --config single
"""

import argparse
import time
from pathlib import Path

from crashsim.cli import render_table
from crashsim.evaluate import EvalSettings, evaluate_logs, scenario_batch


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenarios", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", default="single")
    ap.add_argument("--out", default="results/horizon.md")
    args = ap.parse_args()

    t = time.time()
    logs = scenario_batch(args.scenarios, seed=args.seed, occluded=True)
    settings = [EvalSettings(config=args.config, horizon=h) for h in (4, 6, 8)]
    accs = evaluate_logs(logs, settings)
    text = render_table([accs[s].report() for s in settings])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(text)
    print(text)
    print(f"{len(logs)} scenarios in {time.time() - t:.0f} s")


if __name__ == "__main__":
    main()
