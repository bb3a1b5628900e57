#!/usr/bin/env python3
"""How much does the number of seen domains matter?

Trains one desk-scale model per value of --m-values on the same corpus
(capping the seen side via m_limit, unseen side untouched) and reports
attribute-mode translation accuracy and ZSL top-1 against the domain
count.  Each run is a full training; budget about 25 minutes per value
at the default iteration count, or pass --iters 1000 for a rough cut.
"""

import argparse
import json
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from zstrans.checkpoint import load_checkpoint
from zstrans.config import LossWeights, NetConfig, TrainConfig
from zstrans.data import apply_m_limit, load_dataset, save_dataset
from zstrans.evaluation import eval_translation, eval_zsl, train_judge
from zstrans.seeding import derive_seed
from zstrans.synthetic import SyntheticSpec, make_synthetic
from zstrans.training import train


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/m_sweep")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=5000)
    p.add_argument("--m-values", type=int, nargs="+", default=[3, 5, 8],
                   help="seen-domain caps to train (corpus has 8 seen)")
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    out = Path(args.out)
    data_dir = out / "data"
    if not (data_dir / "manifest.json").exists():
        save_dataset(make_synthetic(SyntheticSpec(), 50, args.seed), data_dir)
    dataset = load_dataset(data_dir, 32)

    rows = []
    for m in args.m_values:
        run_dir = out / f"m_{m:02d}"
        final = run_dir / "ckpt_final.ckpt"
        if not final.exists():
            print(f"training with {m} seen domains ...", flush=True)
            cfg = TrainConfig(total_iters=args.iters, seed=args.seed,
                              m_limit=m, weights=LossWeights(lambda_r=20.0))
            final, _ = train(dataset, NetConfig.desk(), cfg, run_dir)
        bundle, _, _ = load_checkpoint(final)
        # the checkpoint was trained on a relabeled m-domain view; the
        # judge and the scoring must use the same view so labels line up
        view = apply_m_limit(dataset, m)
        judge = train_judge(view, derive_seed(args.seed, "judge"))
        rep = eval_translation(bundle, view, judge, "attribute")
        zsl = eval_zsl(bundle, view, n_synth_per_class=200)
        rows.append((m, rep.metrics["top1"], zsl.metrics["zsl_top1"]))
        print(f"m={m}: translation top-1 {rows[-1][1]:.1f}  "
              f"zsl top-1 {rows[-1][2]:.1f}", flush=True)

    report = [{"m": m, "translation_top1": t, "zsl_top1": z}
              for m, t, z in rows]
    (out / "report.json").write_text(
        json.dumps(report, indent=2) + "\n", encoding="utf-8")
    print(f"\nseen domains | translation top-1 | zsl top-1")
    for m, t, z in rows:
        print(f"{m:12d} | {t:17.1f} | {z:9.1f}")
    print(f"\nreport written to {out / 'report.json'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
