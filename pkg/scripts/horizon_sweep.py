"""Test-year MCC as a function of the prediction horizon k.

    python3 scripts/horizon_sweep.py --n-pipes 20000 --horizons 1 2 3 4
"""

import argparse
import time
from pathlib import Path

from piperisk.boosting import GbtParams
from piperisk.evaluation import SCORE_COLUMNS, CvScheme, evaluate_on_test, run_temporal_cv
from piperisk.pipeline import PipelineConfig
from piperisk.synth import GeneratorConfig, generate_panel


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n-pipes", type=int, default=20_000)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--horizons", type=int, nargs="+", default=[1, 2, 3, 4])
    parser.add_argument("--n-folds", type=int, default=5)
    parser.add_argument("--n-trees", type=int, default=50)
    parser.add_argument("--learning-rate", type=float, default=0.3)
    parser.add_argument("--threads", type=int, default=1)
    parser.add_argument("--out", default="out/horizon_sweep.csv")
    args = parser.parse_args()

    panel = generate_panel(GeneratorConfig(n_pipes=args.n_pipes, seed=args.seed)).panel
    params = GbtParams(n_trees=args.n_trees, learning_rate=args.learning_rate)
    lines = [",".join(["horizon_k", *SCORE_COLUMNS])]
    for k in args.horizons:
        t0 = time.perf_counter()
        cfg = PipelineConfig(model="gbt", horizon_k=k, gbt=params)
        report = run_temporal_cv(panel, cfg, CvScheme(k, n_folds=args.n_folds), threads=args.threads)
        final = evaluate_on_test(panel, cfg, panel.year_range[1] - k, report.selected_threshold)
        row = final.scores.as_row()
        lines.append(",".join([str(k)] + [repr(round(float(row[c]), 10)) for c in SCORE_COLUMNS]))
        print(f"k={k}: threshold {final.threshold:.2f} MCC {final.scores.mcc:.3f} AUC {final.scores.auc:.3f} "
              f"({time.perf_counter() - t0:.0f} s)")
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {out}")


if __name__ == "__main__":
    main()
