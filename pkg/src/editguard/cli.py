"""Command line interface.

Subcommands: train, embed, verify, evaluate, degrade, attribute. Every run
writes ``config.json`` (the resolved arguments) into its output directory.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from pathlib import Path

import numpy as np
import torch

from . import forensics
from .bitcodec import ConfigurationError
from .checkpoint import CheckpointBundle, CheckpointError, file_sha256
from .degradation import DegradationSpec
from .inn import NumericError
from .training import TrainingError
from .validation import DataError

log = logging.getLogger("editguard")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
PAD_PATTERN = (1, 0)  # short payloads are filled with 1010...


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# payloads

_HEX = re.compile(r"^(?:[0-9a-fA-F]{2})+$")


def payload_bytes(text: str) -> bytes:
    """``hex:...`` and ``utf8:...`` are explicit; otherwise an even-length hex string is hex, anything else UTF-8."""
    if text.startswith("hex:"):
        body = text[4:]
        if not _HEX.match(body):
            raise UsageError(f"invalid hex payload {body!r}")
        return bytes.fromhex(body)
    if text.startswith("utf8:"):
        return text[5:].encode("utf-8")
    return bytes.fromhex(text) if _HEX.match(text) else text.encode("utf-8")


def payload_bits(text: str, n_bits: int, truncate=False) -> np.ndarray:
    """MSB-first bits of the payload, padded with ``PAD_PATTERN`` to ``n_bits``."""
    bits = np.unpackbits(np.frombuffer(payload_bytes(text), dtype=np.uint8))
    if len(bits) > n_bits:
        if not truncate:
            raise UsageError(f"payload has {len(bits)} bits but the model carries {n_bits}; pass --truncate to cut it")
        bits = bits[:n_bits]
    pad = n_bits - len(bits)
    fill = np.resize(np.array(PAD_PATTERN, dtype=np.uint8), pad)
    return np.concatenate([bits, fill]).astype(np.uint8)


# I/O helpers

def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))


def _echo_config(out_dir, args, **extra):
    cfg = {k: v for k, v in vars(args).items() if k != "func"}
    cfg.update(extra)
    _write_json(Path(out_dir) / "config.json", cfg)


def _load_ckpt(path):
    if not path:
        raise UsageError("--ckpt is required")
    bundle = CheckpointBundle.load(path)
    return bundle, bundle.build_model().eval()


def _read_image(path, size=None):
    from .harness.data import read_rgb, resize_square

    path = Path(path)
    if not path.is_file():
        raise DataError(f"no image at {path}")
    try:
        img = read_rgb(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if size and img.shape[:2] != (size, size):
        img = resize_square(img, size)
    return img


def _to_tensor(img):
    from .harness.data import to_tensor

    return to_tensor(img)


def _save_png(path, tensor_or_array):
    from .harness.data import to_uint8, write_rgb

    arr = tensor_or_array
    if torch.is_tensor(arr):
        arr = to_uint8(arr)[0]
    write_rgb(path, arr)


def _save_mask(path, mask):
    from PIL import Image

    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray((np.asarray(mask, dtype=np.uint8) * 255)).save(path, format="PNG")


def _watermark(path, size):
    return None if not path else _to_tensor(_read_image(path, size))


def _model_size(model, args):
    size = model.config.image_size
    if args.size and args.size != size:
        raise ConfigurationError(f"--size {args.size} does not match the checkpoint's {size}")
    return size


def _check_bits_flag(model, args):
    if args.bits and args.bits != model.config.n_bits:
        raise ConfigurationError(f"--bits {args.bits} does not match the checkpoint's {model.config.n_bits}")


# subcommands

def _dataset(args):
    from .harness.data import load_image_dir, sample_patches, to_tensor

    if args.inp in (None, "builtin"):
        return to_tensor(sample_patches(args.n_images, args.size or 64, seed=args.seed))
    d = Path(args.inp)
    if not d.is_dir():
        raise DataError(f"dataset directory {d} does not exist")
    images, _ = load_image_dir(d, size=args.size or 64)
    if not images:
        raise DataError(f"no readable images in {d}")
    return to_tensor(np.stack(images))


def cmd_train(args):
    from .model import ModelConfig
    from .training import TrainConfig, train_phase1, train_phase2

    out = Path(args.out)
    images = _dataset(args)
    over = {"seed": args.seed}
    p1_cfg = TrainConfig.desk("bitcodec", **over, **({"iterations": args.phase1_iters} if args.phase1_iters else {}))
    p2_cfg = TrainConfig.desk("inn", **over, **({"iterations": args.phase2_iters} if args.phase2_iters else {}))
    mc = ModelConfig.desk(image_size=args.size or 64, n_bits=args.bits or 16)
    _echo_config(out, args, model_config=mc.to_dict(), phase1=p1_cfg.to_dict(), phase2=p2_cfg.to_dict(),
                 n_images=len(images))

    resume = CheckpointBundle.load(args.resume) if args.resume else None
    p1_path, final_path = out / "phase1.safetensors", out / "model.safetensors"
    p1 = None
    if args.phase in ("all", "bitcodec"):
        if resume is not None and resume.phase == "inn":
            p1 = resume
        else:
            p1 = train_phase1(p1_cfg, images, mc, resume=resume, log_path=out / "phase1.jsonl")
            p1.save(p1_path)
            resume = None
    if args.phase in ("all", "inn"):
        if p1 is None:
            if resume is not None and resume.phase == "inn":
                p1 = resume
            elif args.ckpt:
                p1 = CheckpointBundle.load(args.ckpt)
            else:
                raise UsageError("phase inn needs --ckpt (a phase-1 checkpoint) or --resume")
        resume2 = resume if resume is not None and resume.phase == "inn" else None
        bundle = train_phase2(p2_cfg, images, p1, resume=resume2, log_path=out / "phase2.jsonl")
        bundle.save(final_path)
    print(json.dumps({"out": str(out), "checkpoint": str(final_path if args.phase != "bitcodec" else p1_path)}))
    return EXIT_OK


def cmd_embed(args):
    bundle, model = _load_ckpt(args.ckpt)
    size = _model_size(model, args)
    _check_bits_flag(model, args)
    if args.payload is None:
        raise UsageError("--payload is required")
    bits = payload_bits(args.payload, model.config.n_bits, args.truncate)
    src = Path(args.inp)
    out = Path(args.out)
    x = _to_tensor(_read_image(src, size))
    container = forensics.embed(model, x, torch.from_numpy(bits.astype(np.int64)), _watermark(args.watermark, size))
    png = out / f"{src.stem}.png"
    _save_png(png, container)
    meta = {
        "watermark": args.watermark or "blue", "n_bits": model.config.n_bits, "tau": args.tau,
        "checkpoint": str(args.ckpt), "checkpoint_sha256": file_sha256(args.ckpt),
        "payload_hex": forensics.bits_to_hex(bits), "payload_bits": "".join(map(str, bits)),
        "image_size": size, "source": str(src),
    }
    _write_json(out / f"{src.stem}.json", meta)
    _echo_config(out, args)
    print(json.dumps({"container": str(png), **meta}))
    return EXIT_OK


def _reference_bits(args, n_bits):
    if args.payload is not None:
        return payload_bits(args.payload, n_bits, args.truncate)
    if args.sidecar:
        meta = json.loads(Path(args.sidecar).read_text())
        return np.array([int(c) for c in meta["payload_bits"]], dtype=np.uint8)
    raise UsageError("verify needs --payload or --sidecar for the reference copyright")


def cmd_verify(args):
    bundle, model = _load_ckpt(args.ckpt)
    size = _model_size(model, args)
    _check_bits_flag(model, args)
    ref = _reference_bits(args, model.config.n_bits)
    x = _to_tensor(_read_image(args.inp, size))
    verdict = forensics.verify(model, x, ref, _watermark(args.watermark, size), args.tau, args.theta_bits,
                               args.theta_mask, cleanup=args.cleanup)
    out = Path(args.out)
    stem = Path(args.inp).stem
    _save_mask(out / f"{stem}_mask.png", verdict.mask)
    record = verdict.to_record()
    record.update({"tau": args.tau, "theta_bits": args.theta_bits, "theta_mask": args.theta_mask,
                   "reference_hex": forensics.bits_to_hex(ref), "checkpoint_sha256": file_sha256(args.ckpt)})
    _write_json(out / f"{stem}_verdict.json", record)
    _echo_config(out, args)
    print(json.dumps(record, sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args):
    from .harness.data import load_image_dir, to_tensor
    from .harness.evaluate import evaluate

    bundle, model = _load_ckpt(args.ckpt)
    size = _model_size(model, args)
    if args.inp == "builtin":
        from .harness.data import sample_patches

        images, names = sample_patches(args.n_images, size, seed=args.seed), None
    else:
        d = Path(args.inp)
        if not d.is_dir():
            raise DataError(f"dataset directory {d} does not exist")
        images, names = load_image_dir(d, size=size)
        if not images:
            raise DataError(f"no readable images in {d}")
        images = np.stack(images)
    degs = args.degrade or ["clean:0:0"]
    report = evaluate(model, to_tensor(images), degs, args.shape, args.area, args.cases, args.seed, args.tau,
                      _watermark(args.watermark, size), names=names)
    report.config["checkpoint_sha256"] = file_sha256(args.ckpt)
    out = Path(args.out)
    report.save(out / "report.json")
    _echo_config(out, args)
    print(json.dumps(report.aggregate(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_degrade(args):
    spec = DegradationSpec.from_text(args.degrade[0] if args.degrade else "clean:0:0")
    img = _read_image(args.inp, args.size)
    out = Path(args.out)
    target = out if out.suffix.lower() == ".png" else out / f"{Path(args.inp).stem}.png"
    if spec.kind == "clean":
        _save_png(target, img)
    else:
        from .forensics import quantize_8bit

        _save_png(target, quantize_8bit(spec.apply(_to_tensor(img))))
    _echo_config(target.parent, args)
    print(json.dumps({"out": str(target), "degradation": spec.to_text()}))
    return EXIT_OK


def cmd_attribute(args):
    from .harness.attribution import attribution_map, point_set

    bundle, model = _load_ckpt(args.ckpt)
    size = _model_size(model, args)
    x = _to_tensor(_read_image(args.inp, size))
    try:
        r, c = (int(v) for v in args.point.split(","))
    except ValueError as exc:
        raise UsageError("--point must be 'row,col'") from exc
    if not (0 <= r < size and 0 <= c < size):
        raise UsageError(f"--point {r},{c} outside a {size}x{size} image")
    pts = [(i, j) for i, j in point_set((r, c), args.set_size) if 0 <= i < size and 0 <= j < size]
    attr = attribution_map(model, x, pts)
    out = Path(args.out)
    heat = attr / attr.max() if attr.max() > 0 else attr
    from PIL import Image

    out.mkdir(parents=True, exist_ok=True)
    png = out / f"{Path(args.inp).stem}_attribution.png"
    Image.fromarray(np.round(heat * 255).astype(np.uint8)).save(png, format="PNG")
    np.save(out / f"{Path(args.inp).stem}_attribution.npy", attr)
    _echo_config(out, args)
    print(json.dumps({"out": str(png), "point": [r, c], "set_size": args.set_size}))
    return EXIT_OK


def build_parser():
    p = _Parser(prog="editguard", description="Dual image/bit watermarking for tamper localization and copyright.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, ckpt=True):
        if ckpt:
            sp.add_argument("--ckpt", help="checkpoint file")
        sp.add_argument("--in", dest="inp", help="input image or directory")
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--size", type=int, help="image side; must match the checkpoint")
        sp.add_argument("--bits", type=int, help="payload length L; must match the checkpoint")

    def thresholds(sp):
        sp.add_argument("--tau", type=float, default=forensics.DEFAULT_TAU)
        sp.add_argument("--theta-bits", type=float, default=forensics.DEFAULT_THETA_BITS)
        sp.add_argument("--theta-mask", type=float, default=forensics.DEFAULT_THETA_MASK)
        sp.add_argument("--watermark", help="localization watermark image (default: pure blue)")

    sp = sub.add_parser("train", help="train both phases")
    common(sp)
    sp.add_argument("--phase", choices=("all", "bitcodec", "inn"), default="all")
    sp.add_argument("--resume", help="checkpoint to continue from (keeps the iteration count)")
    sp.add_argument("--phase1-iters", type=int)
    sp.add_argument("--phase2-iters", type=int)
    sp.add_argument("--n-images", type=int, default=16, help="patches for --in builtin")
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("embed", help="embed both watermarks into an image")
    common(sp)
    thresholds(sp)
    sp.add_argument("--payload", help="copyright payload, hex or UTF-8")
    sp.add_argument("--truncate", action="store_true", help="cut payloads longer than L bits")
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("verify", help="locate tampering and check the copyright")
    common(sp)
    thresholds(sp)
    sp.add_argument("--payload", help="reference payload")
    sp.add_argument("--sidecar", help="metadata file written by embed")
    sp.add_argument("--truncate", action="store_true")
    sp.add_argument("--cleanup", action="store_true", help="morphological opening/closing of the mask")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("evaluate", help="robustness report over a dataset")
    common(sp)
    thresholds(sp)
    sp.add_argument("--degrade", action="append", help="kind:param:seed, repeatable")
    sp.add_argument("--shape", choices=("rectangle", "ellipse", "freeform"), default="rectangle")
    sp.add_argument("--area", type=float, default=0.25)
    sp.add_argument("--cases", type=int, default=1, help="tamper cases per image")
    sp.add_argument("--n-images", type=int, default=16)
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("degrade", help="apply one channel degradation to a PNG")
    common(sp, ckpt=False)
    sp.add_argument("--degrade", action="append", help="kind:param:seed")
    sp.set_defaults(func=cmd_degrade)

    sp = sub.add_parser("attribute", help="gradient attribution heat map")
    common(sp)
    sp.add_argument("--point", default="32,32", help="row,col centre of the point set")
    sp.add_argument("--set-size", type=int, default=7)
    sp.set_defaults(func=cmd_attribute)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if args.command in ("embed", "verify", "degrade", "attribute") and not args.inp:
        parser.error(f"{args.command} needs --in")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"editguard: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, ConfigurationError, CheckpointError, FileNotFoundError) as exc:
        print(f"editguard: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"editguard: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericError, FloatingPointError) as exc:
        print(f"editguard: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except TrainingError as exc:
        print(f"editguard: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
