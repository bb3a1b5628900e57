"""Command-line interface.

Subcommands: make-synthetic, train, translate, interpolate, eval,
export-embeddings.  Every run writes a JSON manifest beside its outputs
holding the resolved configuration, the seed, and format versions (no
timestamps), so rerunning from a manifest reproduces outputs bit for
bit.  Exit codes: 0 success, 2 usage error, 1 runtime failure; errors
go to stderr as single ``zstrans: error: ...`` lines.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .checkpoint import FORMAT_VERSION, load_checkpoint
from .config import (config_to_flat_dict, format_config_text, net_config_hash,
                     parse_config_text, resolve_configs)
from .data import DomainDataset, load_dataset, read_attribute_vec, save_dataset
from .evaluation import (EvalReport, cross_modal_retrieval, eval_gzsl,
                         eval_translation, eval_zsl, export_embeddings,
                         train_judge)
from .networks import ModelBundle, interpolate_styles, translate_attr, translate_vision
from .seeding import derive_seed
from .synthetic import SyntheticSpec, make_synthetic
from .training import _randn, train


class UsageError(Exception):
    """Bad flag combination detected after argparse."""


def _write_manifest(path: Path, command: str, seed: int, **extra) -> None:
    manifest = {
        "tool": "zstrans",
        "version": __version__,
        "command": command,
        "seed": seed,
        "checkpoint_format": FORMAT_VERSION,
        **extra,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")


def _save_image(arr: np.ndarray, path: Path) -> None:
    """(H, W, 3) float [0,1] -> 8-bit PNG."""
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data).save(path)


def _load_image_tensor(path: Path, resolution: int) -> torch.Tensor:
    if not path.is_file():
        raise FileNotFoundError(f"image not found: {path}")
    with Image.open(path) as img:
        img = img.convert("RGB")
        if img.size != (resolution, resolution):
            img = img.resize((resolution, resolution), Image.BILINEAR)
        arr = np.asarray(img, dtype=np.float32) / 255.0
    return torch.from_numpy(arr).permute(2, 0, 1).unsqueeze(0).contiguous()


def _resolve_configs_from_args(args) -> tuple:
    file_values = {}
    if args.config:
        cfg_path = Path(args.config)
        if not cfg_path.is_file():
            raise FileNotFoundError(f"config file not found: {cfg_path}")
        file_values = parse_config_text(cfg_path.read_text(encoding="utf-8"))
    for item in args.set or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, _, val = item.partition("=")
        file_values[key.strip()] = val.strip()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    for name in args.ablate or []:
        if name == "gan_s":
            overrides["disable_gan_s"] = True
        elif name == "cls":
            overrides["disable_cls"] = True
        else:
            raise UsageError(f"unknown ablation {name!r} (valid: gan_s, cls)")
    return resolve_configs(file_values, overrides)


def cmd_make_synthetic(args) -> int:
    spec = SyntheticSpec(n_domains=args.domains, resolution=args.res,
                         attr_dim=args.attr_dim,
                         attr_noise_sigma=args.attr_noise)
    dataset = make_synthetic(spec, args.per_domain, args.seed or 0)
    out = Path(args.out)
    save_dataset(dataset, out)
    _write_manifest(out / "manifest.json", "make-synthetic", args.seed or 0,
                    spec={"n_domains": spec.n_domains, "resolution": spec.resolution,
                          "attr_dim": spec.attr_dim,
                          "attr_noise_sigma": spec.attr_noise_sigma,
                          "attr_margin": spec.attr_margin},
                    per_domain=args.per_domain,
                    n_samples=len(dataset),
                    n_seen=dataset.split.n_seen, n_unseen=dataset.split.n_unseen)
    print(f"wrote {len(dataset)} samples "
          f"({dataset.split.n_seen} seen / {dataset.split.n_unseen} unseen domains) to {out}")
    return 0


def cmd_train(args) -> int:
    net_config, train_config = _resolve_configs_from_args(args)
    if args.print_config:
        sys.stdout.write(format_config_text(net_config, train_config))
        return 0
    if not args.data:
        raise UsageError("train requires --data")
    if not args.out:
        raise UsageError("train requires --out")
    dataset = load_dataset(args.data, net_config.resolution)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out / "manifest.json", "train", train_config.seed,
                    config=config_to_flat_dict(net_config, train_config),
                    data=str(args.data), resume=str(args.resume) if args.resume else None)

    total = train_config.run_length
    def progress(iteration, report):
        if (iteration + 1) % 250 == 0 or iteration + 1 == total:
            print(f"iter {iteration + 1}/{total} "
                  f"gen={report.obj_generator:.4f} "
                  f"feat_critic={report.obj_feat_critic:.4f} "
                  f"rec_s={report.rec_s:.4f}", flush=True)

    final_path, records = train(dataset, net_config, train_config, out,
                                resume_from=args.resume, progress=progress)
    print(f"finished {len(records)} iterations; final checkpoint {final_path}")
    return 0


def _style_from_condition(bundle: ModelBundle, cond: str,
                          dataset: DomainDataset | None,
                          z: torch.Tensor) -> torch.Tensor:
    """A condition is an image path, a .vec attribute file, or a class
    name to be resolved against --data (class-mean attribute)."""
    path = Path(cond)
    if path.suffix.lower() in (".png", ".jpg", ".jpeg"):
        img = _load_image_tensor(path, bundle.config.resolution)
        return bundle.vision_enc(img)
    if path.suffix.lower() == ".vec":
        if not path.is_file():
            raise FileNotFoundError(f"attribute file not found: {path}")
        attr = torch.from_numpy(read_attribute_vec(path)).unsqueeze(0)
        return bundle.attr_enc(attr, z)
    if dataset is None:
        raise UsageError(
            f"condition {cond!r} is a class name; pass --data to resolve it")
    label = dataset.label_of(cond)
    attr = torch.from_numpy(dataset.class_mean_attribute(label)).unsqueeze(0)
    return bundle.attr_enc(attr, z)


def cmd_translate(args) -> int:
    bundle, iteration, _ = load_checkpoint(args.ckpt)
    bundle.eval_mode()
    seed = args.seed or 0
    x1 = _load_image_tensor(Path(args.source), bundle.config.resolution)
    with torch.no_grad():
        if args.target_img:
            x2 = _load_image_tensor(Path(args.target_img), bundle.config.resolution)
            out_img = translate_vision(bundle, x1, x2)
            mode = "vision"
        else:
            dataset = load_dataset(args.data, bundle.config.resolution) if args.data else None
            z = _randn((1, bundle.config.noise_dim), derive_seed(seed, "translate_z"))
            target = Path(args.target_attr)
            if target.suffix.lower() == ".vec":
                attr = torch.from_numpy(read_attribute_vec(target)).unsqueeze(0)
            else:
                if dataset is None:
                    raise UsageError(
                        f"--target-attr {args.target_attr!r} is a class name; pass --data")
                attr = torch.from_numpy(
                    dataset.class_mean_attribute(dataset.label_of(args.target_attr))).unsqueeze(0)
            out_img = translate_attr(bundle, x1, attr, z)
            mode = "attribute"
    out = Path(args.out)
    _save_image(out_img[0].permute(1, 2, 0).numpy(), out)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "translate", seed,
                    mode=mode, ckpt=str(args.ckpt), ckpt_iteration=iteration,
                    source=str(args.source),
                    target=str(args.target_img or args.target_attr),
                    net_config_hash=net_config_hash(bundle.config))
    print(f"wrote {out}")
    return 0


def cmd_interpolate(args) -> int:
    if args.steps < 2:
        raise UsageError("--steps must be at least 2")
    bundle, iteration, _ = load_checkpoint(args.ckpt)
    bundle.eval_mode()
    seed = args.seed or 0
    dataset = load_dataset(args.data, bundle.config.resolution) if args.data else None
    x1 = _load_image_tensor(Path(args.source), bundle.config.resolution)
    with torch.no_grad():
        # one noise draw shared by both attribute conditions, so the
        # endpoint frames match cmd_translate outputs for the same seed
        z = _randn((1, bundle.config.noise_dim), derive_seed(seed, "translate_z"))
        style_a = _style_from_condition(bundle, args.cond_a, dataset, z)
        style_b = _style_from_condition(bundle, args.cond_b, dataset, z)
        frames = interpolate_styles(bundle, x1, style_a, style_b, args.steps)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    arrays = [frames[i].permute(1, 2, 0).numpy() for i in range(args.steps)]
    for i, arr in enumerate(arrays):
        _save_image(arr, out_dir / f"frame_{i:02d}.png")
    _save_image(np.concatenate(arrays, axis=1), out_dir / "montage.png")
    _write_manifest(out_dir / "manifest.json", "interpolate", seed,
                    ckpt=str(args.ckpt), ckpt_iteration=iteration,
                    source=str(args.source), cond_a=args.cond_a, cond_b=args.cond_b,
                    steps=args.steps, net_config_hash=net_config_hash(bundle.config))
    print(f"wrote {args.steps} frames and montage to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    bundle, iteration, _ = load_checkpoint(args.ckpt)
    bundle.eval_mode()
    seed = args.seed or 0
    dataset = load_dataset(args.data, bundle.config.resolution)
    if args.protocol == "translation":
        judge = train_judge(dataset, derive_seed(seed, "judge"))
        report = eval_translation(bundle, dataset, judge, args.mode,
                                  n_batches=args.n_batches,
                                  batch_size=args.batch_size, seed=seed)
    elif args.protocol == "zsl":
        report = eval_zsl(bundle, dataset, args.n_synth, seed=seed,
                          class_mean_attrs=args.class_mean_attrs)
    elif args.protocol == "gzsl":
        report = eval_gzsl(bundle, dataset, args.n_synth, seed=seed,
                           class_mean_attrs=args.class_mean_attrs)
    else:  # retrieval; argparse restricts the choices
        value = cross_modal_retrieval(bundle, dataset, seed=seed)
        report = EvalReport({"cross_modal_retrieval": value},
                            {"protocol": "retrieval", "seed": seed})
    report.protocol["ckpt"] = str(args.ckpt)
    report.protocol["ckpt_iteration"] = iteration
    sys.stdout.write(report.to_json())
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.to_json(), encoding="utf-8")
        extra = {}
        if args.protocol == "translation":
            extra = dict(mode=args.mode, n_batches=args.n_batches,
                         batch_size=args.batch_size)
        elif args.protocol in ("zsl", "gzsl"):
            extra = dict(n_synth=args.n_synth,
                         class_mean_attrs=args.class_mean_attrs)
        _write_manifest(out.with_name(out.name + ".manifest.json"), "eval", seed,
                        protocol=args.protocol, ckpt=str(args.ckpt),
                        ckpt_iteration=iteration, data=str(args.data),
                        net_config_hash=net_config_hash(bundle.config), **extra)
    return 0


def cmd_export_embeddings(args) -> int:
    bundle, iteration, _ = load_checkpoint(args.ckpt)
    bundle.eval_mode()
    seed = args.seed or 0
    dataset = load_dataset(args.data, bundle.config.resolution)
    if args.labels == "seen":
        labels = sorted(dataset.split.seen_labels)
    elif args.labels == "unseen":
        labels = sorted(dataset.split.unseen_labels)
    else:
        labels = None
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    count = export_embeddings(bundle, dataset, args.which, out, seed=seed,
                              class_mean=args.class_mean, labels=labels)
    _write_manifest(out.with_name(out.name + ".manifest.json"), "export-embeddings",
                    seed, which=args.which, labels=args.labels,
                    class_mean=bool(args.class_mean), n_records=count,
                    ckpt=str(args.ckpt), ckpt_iteration=iteration)
    print(f"wrote {count} records to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zstrans",
        description="Zero-shot image-to-image translation: train, translate, evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate the attributed-shapes dataset")
    p.add_argument("--domains", type=int, default=12)
    p.add_argument("--per-domain", type=int, default=50)
    p.add_argument("--res", type=int, default=32)
    p.add_argument("--attr-dim", type=int, default=32)
    p.add_argument("--attr-noise", type=float, default=0.02,
                   help="per-image attribute noise sigma")
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_synthetic)

    p = sub.add_parser("train", help="run the training loop")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override one config key (repeatable)")
    p.add_argument("--ablate", action="append", choices=["gan_s", "cls"],
                   help="disable a loss group (repeatable)")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--out", help="output directory for checkpoints and logs")
    p.add_argument("--seed", type=int, help="master RNG seed (overrides config)")
    p.add_argument("--resume", help="checkpoint to continue from")
    p.add_argument("--print-config", action="store_true",
                   help="print the resolved config and exit")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("translate", help="translate one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--source", required=True, help="source image (content)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--target-img", help="style read from this image")
    group.add_argument("--target-attr",
                       help="style synthesized from a .vec file or class name")
    p.add_argument("--data", help="dataset directory (to resolve class names)")
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", required=True, help="output image path")
    p.set_defaults(func=cmd_translate)

    p = sub.add_parser("interpolate", help="interpolate between two style conditions")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--cond-a", required=True, help="image, .vec file, or class name")
    p.add_argument("--cond-b", required=True, help="image, .vec file, or class name")
    p.add_argument("--steps", type=int, default=8)
    p.add_argument("--data", help="dataset directory (to resolve class names)")
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_interpolate)

    p = sub.add_parser("eval", help="run an evaluation protocol")
    p.add_argument("--protocol", required=True,
                   choices=["translation", "zsl", "gzsl", "retrieval"])
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--mode", choices=["vision", "attribute"], default="vision",
                   help="translation protocol: style source")
    p.add_argument("--n-synth", type=int, default=100,
                   help="synthesized features per class (zsl/gzsl)")
    p.add_argument("--class-mean-attrs", action="store_true",
                   help="condition synthesis on class-mean attributes "
                        "instead of per-image vectors (zsl/gzsl)")
    p.add_argument("--n-batches", type=int, default=16)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", help="write the report JSON here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-embeddings", help="dump encoder features as JSONL")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--which", required=True, choices=["v", "a"])
    p.add_argument("--labels", choices=["seen", "unseen", "all"], default="all")
    p.add_argument("--class-mean", action="store_true",
                   help="one record per class from its mean attribute and fixed noise")
    p.add_argument("--seed", type=int, default=0, help="master RNG seed")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    torch.set_num_threads(1)  # bitwise reproducibility across host core counts
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"zstrans: usage error: {exc}", file=sys.stderr)
        return 2
    except (FileNotFoundError, ValueError, KeyError, RuntimeError, OSError) as exc:
        print(f"zstrans: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
