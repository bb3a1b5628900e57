#!/usr/bin/env python3
"""Desk-scale experiment: synthesize a corpus, train the full model,
and score every evaluation protocol.

Roughly half an hour end to end on one CPU core; pass --iters 500 for
a coffee-break version (the numbers will be worse).  All stages are
seeded, so rerunning with the same arguments reproduces the report.
"""

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from zstrans.checkpoint import load_checkpoint
from zstrans.config import LossWeights, NetConfig, TrainConfig
from zstrans.data import load_dataset, save_dataset
from zstrans.evaluation import (cross_modal_retrieval, eval_gzsl,
                                eval_translation, eval_zsl,
                                self_reconstruction_l1, train_judge)
from zstrans.seeding import derive_seed
from zstrans.synthetic import SyntheticSpec, make_synthetic
from zstrans.training import train


def parse_args(argv):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk_experiment",
                   help="working directory (data, checkpoints, report)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--iters", type=int, default=5000,
                   help="training iterations (constant learning rate)")
    p.add_argument("--domains", type=int, default=12)
    p.add_argument("--per-domain", type=int, default=50)
    p.add_argument("--lambda-r", type=float, default=20.0,
                   help="reconstruction weight (desk recipe default)")
    return p.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    data_dir = out / "data"
    if not (data_dir / "manifest.json").exists():
        print(f"[1/4] synthesizing {args.domains} domains "
              f"x {args.per_domain} images ...", flush=True)
        spec = SyntheticSpec(n_domains=args.domains)
        save_dataset(make_synthetic(spec, args.per_domain, args.seed), data_dir)
    else:
        print(f"[1/4] reusing dataset at {data_dir}", flush=True)
    dataset = load_dataset(data_dir, 32)

    net = NetConfig.desk()
    cfg = TrainConfig(total_iters=args.iters, seed=args.seed,
                      weights=LossWeights(lambda_r=args.lambda_r))
    run_dir = out / "train"
    final = run_dir / "ckpt_final.ckpt"
    if final.exists():
        print(f"[2/4] reusing checkpoint {final}", flush=True)
    else:
        print(f"[2/4] training {cfg.run_length} iterations "
              f"(about {cfg.run_length * 0.3 / 60:.0f} min on one core) ...",
              flush=True)
        started = time.perf_counter()
        final, _ = train(dataset, net, cfg, run_dir)
        print(f"      done in {(time.perf_counter() - started) / 60:.1f} min",
              flush=True)

    bundle, iteration, _ = load_checkpoint(final)
    print(f"[3/4] training the judge classifier ...", flush=True)
    judge = train_judge(dataset, derive_seed(args.seed, "judge"))

    print(f"[4/4] evaluating ...", flush=True)
    report = {"iteration": iteration, "seed": args.seed}
    for mode in ("vision", "attribute"):
        rep = eval_translation(bundle, dataset, judge, mode)
        report[f"translation_{mode}"] = rep.metrics
    report["zsl"] = eval_zsl(bundle, dataset, n_synth_per_class=200).metrics
    report["gzsl"] = eval_gzsl(bundle, dataset, n_synth_per_class=200).metrics
    report["retrieval"] = cross_modal_retrieval(bundle, dataset)
    report["self_reconstruction_l1"] = self_reconstruction_l1(bundle, dataset)

    path = out / "report.json"
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n",
                    encoding="utf-8")

    t = report["translation_vision"]
    print(f"\ntranslation (vision mode):    top-1 {t['top1']:5.1f}  "
          f"top-5 {t['top5']:5.1f}  fid {t['fid']:.2f}")
    t = report["translation_attribute"]
    print(f"translation (attribute mode): top-1 {t['top1']:5.1f}  "
          f"top-5 {t['top5']:5.1f}  fid {t['fid']:.2f}")
    print(f"zsl top-1 {report['zsl']['zsl_top1']:.1f}    gzsl "
          f"U {report['gzsl']['gzsl_u']:.1f} / S {report['gzsl']['gzsl_s']:.1f} "
          f"/ H {report['gzsl']['gzsl_h']:.1f}")
    print(f"cross-modal retrieval {report['retrieval']:.1f}")
    print(f"self-reconstruction L1 {report['self_reconstruction_l1']:.4f}")
    print(f"\nreport written to {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
