"""Command-line entry point: ``dasgate {train,eval,count,gradcam,sfd,ablate}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import config as C
from .ablation import ablation_csv, run_ablation
from .analysis import RegionMask, count_macs, grad_cam, infer_B, sfd_details
from .checkpoint import CheckpointError, load_checkpoint, restore, save_checkpoint
from .data import DatasetSpec, gen_synthetic, load_dataset
from .gate import Variant
from .models import build_model
from .pnm import read_heatmap, read_mask, read_ppm, write_map_csv, write_pgm
from .training import evaluate, train


def _model_for_data(cfg, args, spec: DatasetSpec, **extra):
    defaults = dict(num_classes=100 if spec.kind == "cifar100" else spec.n_classes,
                    input_size=(spec.image_size, spec.image_size) if spec.kind == "synthetic" else (32, 32))
    defaults.update(extra)
    if args.seed is not None:
        defaults["seed"] = args.seed
    return C.model_config(cfg, **defaults)


def _data(cfg, args, eval_split=False):
    spec = C.dataset_spec(cfg)
    seed = args.seed or 0
    if eval_split:
        if spec.kind == "cifar100":
            path = cfg.get("data.eval_path")
            if not path:
                return spec, None, None
            spec.path = path
        else:
            spec.n_samples = int(cfg.get("data.eval_samples", max(spec.n_classes * 10, spec.n_samples // 3)))
            X, y = gen_synthetic(spec, seed + 1)
            return spec, X, y
    X, y = load_dataset(spec, seed)
    return spec, X, y


def cmd_train(args, cfg):
    spec, X, y = _data(cfg, args)
    _, Xe, ye = _data(cfg, args, eval_split=True)
    net = build_model(_model_for_data(cfg, args, spec))
    tdefaults = {"seed": args.seed} if args.seed is not None else {}
    tcfg = C.train_config(cfg, **tdefaults)
    result = train(net, X, y, tcfg, Xe, ye)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "train_log.csv"), "w") as fh:
        fh.write(result.to_csv())
    ckpt = os.path.join(args.out_dir, "checkpoint.bin")
    save_checkpoint(ckpt, net, result.optimizer, epoch=tcfg.epochs)
    sys.stdout.write(result.to_csv())
    print(f"checkpoint written to {ckpt}", file=sys.stderr)
    return 0


def cmd_eval(args, cfg):
    spec, X, y = _data(cfg, args)
    net = build_model(_model_for_data(cfg, args, spec))
    restore(net, load_checkpoint(args.checkpoint))
    print(f"accuracy,{evaluate(net, X, y):.6f}")
    return 0


def cmd_count(args, cfg):
    mcfg = C.model_config(cfg)
    size = tuple(args.input_size) if args.input_size else mcfg.input_size
    rep = count_macs(build_model(mcfg), size)
    sys.stdout.write(rep.to_csv())
    return 0


def cmd_gradcam(args, cfg):
    img = read_ppm(args.image)
    h, w = img.shape[1:]
    extra = {"input_size": (h, w)} if "model.input_size" not in cfg else {}
    if args.seed is not None:
        extra["seed"] = args.seed
    ckpt = load_checkpoint(args.checkpoint) if args.checkpoint else None
    if ckpt is not None and "fc.weight" in ckpt.params:
        extra["num_classes"] = ckpt.params["fc.weight"].shape[0]
    net = build_model(C.model_config(cfg, **extra))
    if ckpt is not None:
        restore(net, ckpt)
    sal = grad_cam(net, img, args.class_idx, args.layer)
    os.makedirs(args.out_dir, exist_ok=True)
    write_pgm(os.path.join(args.out_dir, "gradcam.pgm"), sal.weights)
    write_map_csv(os.path.join(args.out_dir, "gradcam.csv"), sal.weights)
    print(f"gradcam map for class {args.class_idx} at {args.layer} written to {args.out_dir}")
    return 0


def cmd_sfd(args, cfg):
    weights = read_heatmap(args.heatmap)
    R = read_mask(args.region)
    if args.box:
        mask = RegionMask(R, read_mask(args.box) | R)
    else:
        mask = infer_B(weights, R, args.threshold)
    res = sfd_details(weights, mask)
    print("sfd,w_r,w_n,degenerate")
    print(f"{res.score:.6f},{res.w_r:.6f},{res.w_n:.6f},{int(res.degenerate)}")
    return 0


def cmd_ablate(args, cfg):
    spec = C.dataset_spec(cfg, n_samples=90)
    variants = args.variants.split(",") if args.variants else list(Variant)
    rows = run_ablation(variants, epochs=args.epochs, data=spec,
                        base_gate=C.gate_config(cfg), seed=args.seed or 0, width=args.width)
    text = ablation_csv(rows)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "ablation.csv"), "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return 0


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key = value configuration file")
    shared.add_argument("--seed", type=int, default=None)
    shared.add_argument("--out-dir", default="out")
    shared.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dasgate", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("train", parents=[shared], help="train a model and write a checkpoint")
    ev = sub.add_parser("eval", parents=[shared], help="accuracy of a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    cnt = sub.add_parser("count", parents=[shared], help="parameter / MAC table as CSV")
    cnt.add_argument("--input-size", type=int, nargs=2, metavar=("H", "W"))
    gc = sub.add_parser("gradcam", parents=[shared], help="gradCAM heatmap of a PPM image")
    gc.add_argument("--image", required=True)
    gc.add_argument("--checkpoint")
    gc.add_argument("--layer", default="layer4")
    gc.add_argument("--class", dest="class_idx", type=int, default=0)
    sf = sub.add_parser("sfd", parents=[shared], help="salient feature detection score")
    sf.add_argument("--heatmap", required=True, help="PGM or CSV saliency map")
    sf.add_argument("--region", required=True, help="PGM/PBM mask of the relevant region R")
    sf.add_argument("--box", help="PGM/PBM mask of B; inferred from --threshold if omitted")
    sf.add_argument("--threshold", type=float, default=0.5)
    ab = sub.add_parser("ablate", parents=[shared], help="train every gate variant briefly")
    ab.add_argument("--epochs", type=int, default=2)
    ab.add_argument("--variants", help="comma-separated subset, e.g. a,b,c")
    ab.add_argument("--width", type=int, default=16)
    return p


COMMANDS = {
    "train": cmd_train, "eval": cmd_eval, "count": cmd_count,
    "gradcam": cmd_gradcam, "sfd": cmd_sfd, "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = C.load_config(args.config)
        return COMMANDS[args.command](args, cfg)
    except (ValueError, KeyError, IndexError, OSError, CheckpointError) as exc:
        print(f"dasgate {args.command}: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
