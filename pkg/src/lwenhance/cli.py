"""Command-line interface: enhance, retouch, dataset, train, eval, serve."""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import datasetgen, imgcore, metrics, nn
from . import enhance as enhance_mod
from . import report as report_mod
from . import retouch as retouch_mod
from . import train as train_mod
from .errors import ConfigurationError

_IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")


def _gamma(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError(f"must be in [0, 1], got {text}")
    return v


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _list_images(directory: Path) -> list[Path]:
    files = sorted(p for p in directory.iterdir()
                   if p.suffix.lower() in _IMAGE_SUFFIXES)
    if not files:
        raise ConfigurationError(f"no images under {directory}")
    return files


def _write_image(img, path: Path) -> None:
    if path.suffix.lower() in (".jpg", ".jpeg"):
        path.write_bytes(imgcore.encode_jpeg(img, 95))
    else:
        imgcore.write_png(img, path)


def _load_weights_arg(path: str | None) -> nn.WeightStore:
    if path is None:
        return train_mod.init_full_weights(0)
    return nn.load_weights(path)


# ---------------------------------------------------------------------------
# Subcommand handlers
# ---------------------------------------------------------------------------


def cmd_enhance(args) -> int:
    img = imgcore.ensure_rgb(imgcore.read_image(args.input))
    ws = _load_weights_arg(args.weights)
    gammas = (args.g1, args.g2, args.g3)
    if any(g is not None for g in gammas):
        params = enhance_mod.EnhanceParams(
            gamma1=args.g1 if args.g1 is not None else 1.0,
            gamma2=args.g2 if args.g2 is not None else 1.0,
            gamma3=args.g3 if args.g3 is not None else 1.0,
        )
        out = enhance_mod.interactive_enhance(img, ws, params)
    else:
        out, _ = enhance_mod.enhance(img, ws)
    _write_image(out, Path(args.output))
    print(f"wrote {args.output}")
    return 0


def cmd_retouch(args) -> int:
    img = imgcore.ensure_rgb(imgcore.read_image(args.input))
    coeffs = retouch_mod.RetouchCoefficients.from_json(
        Path(args.coeffs).read_text(encoding="utf-8"))
    out = retouch_mod.retouch(img, coeffs)
    _write_image(out, Path(args.output))
    print(f"wrote {args.output}")
    return 0


def cmd_dataset_cluster(args) -> int:
    files = _list_images(Path(args.input))
    hists = [datasetgen.histogram(imgcore.ensure_rgb(imgcore.read_image(p))) for p in files]
    model = datasetgen.cluster(hists, args.k, seed=args.seed)
    payload = model.to_dict()
    payload["files"] = [p.name for p in files]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                   encoding="utf-8")
    sizes = [model.assignments.count(c) for c in range(model.k)]
    print(f"wrote {out} ({len(files)} images, "
          f"sizes {' '.join(str(s) for s in sizes)})")
    return 0


def _load_coeffs_map(path: Path) -> dict[int, retouch_mod.RetouchCoefficients]:
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, dict) or "theta1" in data:
        raise ConfigurationError(
            "coefficients file must map cluster id -> coefficients object")
    return {int(k): retouch_mod.RetouchCoefficients.from_dict(v)
            for k, v in data.items()}


def cmd_dataset_build(args) -> int:
    files = _list_images(Path(args.input))
    images = [imgcore.ensure_rgb(imgcore.read_image(p)) for p in files]
    model_dict = json.loads(Path(args.clusters).read_text(encoding="utf-8"))
    model = datasetgen.ClusterModel.from_dict(model_dict)
    coeffs = _load_coeffs_map(Path(args.coeffs))
    ranges = datasetgen.DegradeRanges(
        sigma_c=tuple(args.sigma_c),
        sigma_s=tuple(args.sigma_s),
        jpeg_quality=tuple(args.jpeg_q),
        seed=args.seed,
    )
    manifest = datasetgen.build_pairs(images, model, coeffs, ranges, args.out)
    print(f"wrote {Path(args.out) / 'manifest.json'} "
          f"({len(manifest.entries)} pairs)")
    return 0


def cmd_train(args) -> int:
    cfg = train_mod.TrainConfig(
        stage=args.stage,
        alpha=args.lr,
        batch_size=args.batch_size,
        patch=args.patch,
        epochs=args.epochs,
        seed=args.seed,
        augmentation=not args.no_augmentation,
        perceptual=not args.no_perceptual,
        steps_per_epoch=args.steps_per_epoch,
    )
    if args.stage == 1:
        _, rep = train_mod.train_stage1(args.manifest, cfg, weights_out=args.out)
    else:
        if args.stage1_weights is None:
            raise ConfigurationError("--stage 2 requires --stage1-weights")
        _, rep = train_mod.train_stage2(args.manifest, args.stage1_weights,
                                        cfg, weights_out=args.out)
    report_json = Path(args.report) if args.report else \
        Path(args.out).with_suffix(".report.json")
    paths = report_mod.write_train_report(rep, report_json)
    print(f"stage {args.stage}: loss {rep.initial_loss:.6f} -> "
          f"{rep.final_loss:.6f} over {len(rep.epoch_losses)} epochs")
    print(f"wrote {args.out}")
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def cmd_eval(args) -> int:
    ws = nn.load_weights(args.weights)
    rep = metrics.evaluate_manifest(args.manifest, ws)
    paths = report_mod.write_eval_report(rep, args.out)
    d = rep.to_dict()
    print(f"evaluated {d['count']} pairs: "
          f"psnr {d['mean_psnr']} ssim {d['mean_ssim']} loe {d['mean_loe']}")
    for p in paths.values():
        print(f"wrote {p}")
    return 0


def cmd_serve(args) -> int:
    from . import service  # heavy import kept off the other subcommands

    workdir = os.environ.get("LWE_WORKDIR", args.workdir)
    service.run(port=args.port, weights_path=args.weights, workdir=workdir)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lwe",
        description="Light-weight enhancement of non-uniformly lit images.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("enhance", help="enhance one image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--weights", help="weights file (default: seeded init)")
    p.add_argument("--g1", type=_gamma, help="under-exposure boost in [0, 1]")
    p.add_argument("--g2", type=_gamma, help="over-exposure suppression in [0, 1]")
    p.add_argument("--g3", type=_gamma, help="noise removal amount in [0, 1]")
    p.set_defaults(func=cmd_enhance)

    p = sub.add_parser("retouch", help="apply a retouch recipe to one image")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--coeffs", required=True, help="coefficients JSON file")
    p.set_defaults(func=cmd_retouch)

    pd = sub.add_parser("dataset", help="dataset preparation")
    dsub = pd.add_subparsers(dest="dataset_command", required=True)

    p = dsub.add_parser("cluster", help="cluster images by brightness histogram")
    p.add_argument("--input", required=True, help="directory of images")
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="cluster model JSON path")
    p.set_defaults(func=cmd_dataset_cluster)

    p = dsub.add_parser("build", help="render degraded/retouched training pairs")
    p.add_argument("--input", required=True, help="directory of images")
    p.add_argument("--clusters", required=True, help="cluster model JSON")
    p.add_argument("--coeffs", required=True,
                   help="JSON mapping cluster id -> coefficients")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--sigma-c", nargs=2, type=float, default=[0.0, 0.06],
                   metavar=("LO", "HI"))
    p.add_argument("--sigma-s", nargs=2, type=float, default=[0.0, 0.03],
                   metavar=("LO", "HI"))
    p.add_argument("--jpeg-q", nargs=2, type=int, default=[60, 95],
                   metavar=("LO", "HI"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_dataset_build)

    p = sub.add_parser("train", help="train stage 1 or stage 2")
    p.add_argument("--stage", type=int, choices=(1, 2), required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="weights output path")
    p.add_argument("--stage1-weights", help="frozen stage-1 weights (stage 2)")
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--batch-size", type=_positive_int, default=8)
    p.add_argument("--patch", type=_positive_int, default=64)
    p.add_argument("--lr", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--steps-per-epoch", type=_positive_int)
    p.add_argument("--no-augmentation", action="store_true")
    p.add_argument("--no-perceptual", action="store_true")
    p.add_argument("--report", help="report JSON path (default: next to weights)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a manifest and write a report")
    p.add_argument("--manifest", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True, help="report JSON path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--port", type=_positive_int, default=8000)
    p.add_argument("--weights", help="weights file (default: seeded init)")
    p.add_argument("--workdir", default=".",
                   help="state directory (LWE_WORKDIR overrides)")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse printed the message already
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
