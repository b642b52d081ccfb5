"""Command-line surface.

Subcommands:

    encode         image -> encoder output as raw tensor file(s)
    export-planes  image -> eight per-bit PGM visualizations
    infer          model + image -> logits on stdout
    cost           first-layer MAC/weight comparison table
    selftest       built-in verification suites

Exit codes for `infer`: 2 = model load failure, 3 = shape mismatch,
4 = runtime fault.  Everything else: 0 on success, 1 on failure, 2 on
usage errors (argparse).  BPBN_THREADS caps internal parallelism.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .errors import BpbnError, ModelFormatError, ShapeError
from .tensors import write_tensor_file
from .binops import BinaryKernel, FixedAffine
from .encoders import bit_rearrange, encode_bil, encode_dbid, encode_thermometer
from .model import load_model
from .pgm import read_image, write_image
from .runtime import run_inference
from .selftest import run_selftest
from .costmodel import (
    FirstLayerCostInputs,
    TABLE1_DEFAULTS,
    render_machine,
    render_text,
    report,
)


def _fail(msg: str, code: int = 1) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def cmd_encode(args) -> int:
    try:
        img = read_image(args.image)
    except (OSError, BpbnError) as e:
        return _fail(str(e))
    try:
        if args.method == "bitplane":
            out_dir = Path(args.out)
            out_dir.mkdir(parents=True, exist_ok=True)
            stack = bit_rearrange(img, args.planes)
            for (c, bp), plane in sorted(stack.planes.items()):
                write_tensor_file(out_dir / f"plane_c{c}_bp{bp}.bpt", plane)
            print(f"wrote {len(stack.planes)} plane tensors to {out_dir}")
        elif args.method == "dbid":
            t = encode_dbid(img, args.planes)
            write_tensor_file(args.out, t)
            print(f"wrote {t.dims[2]}-channel tensor to {args.out}")
        elif args.method == "thermometer":
            t = encode_thermometer(img, args.expansion)
            write_tensor_file(args.out, t)
            print(f"wrote {t.dims[2]}-channel tensor to {args.out}")
        else:  # bil
            c = img.shape[2]
            cp = c * args.planes
            rng = np.random.default_rng(args.seed)
            # no trained weights on the command line: draw a deterministic
            # +-1 pointwise bank from the seed and use identity affines
            w = rng.choice(np.array([-1, 1], dtype=np.int8), size=(1, 1, cp, args.expansion))
            bn = [FixedAffine.identity() for _ in range(args.expansion)]
            t = encode_bil(img, args.planes, BinaryKernel(w), bn)
            write_tensor_file(args.out, t)
            print(
                f"wrote {t.dims[2]}-channel tensor to {args.out} "
                f"(seed-{args.seed} pointwise weights)"
            )
    except BpbnError as e:
        return _fail(str(e))
    return 0


def cmd_export_planes(args) -> int:
    try:
        img = read_image(args.image)
    except (OSError, BpbnError) as e:
        return _fail(str(e))
    if not 0 <= args.channel < img.shape[2]:
        return _fail(f"channel {args.channel} out of range for {img.shape[2]}-channel image")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    chan = img[:, :, args.channel]
    for bp in range(8):
        # visualization rule: set bit -> 255, unset bit -> 0
        plane = (((chan >> bp) & 1) * 255).astype(np.uint8)
        write_image(out_dir / f"plane_bp{bp}.pgm", plane)
    print(f"wrote 8 bit-plane images to {out_dir}")
    return 0


def cmd_infer(args) -> int:
    try:
        manifest = load_model(args.model)
    except (OSError, ModelFormatError) as e:
        return _fail(f"model load failed: {e}", 2)
    try:
        img = read_image(args.image)
    except (OSError, BpbnError) as e:
        return _fail(str(e), 4)
    try:
        if args.path in ("production", "both"):
            prod = run_inference(manifest, img, path="production", trace=args.trace)
        if args.path in ("reference", "both"):
            ref = run_inference(manifest, img, path="reference", trace=args.trace)
    except ShapeError as e:
        return _fail(f"shape mismatch: {e}", 3)
    except (BpbnError, ValueError) as e:
        return _fail(f"runtime fault: {e}", 4)

    def show(tag, res):
        print(tag + " " + " ".join(repr(float(v)) for v in res.logits))
        if args.trace and res.trace:
            for i, t in enumerate(res.trace):
                out = t.get("output")
                desc = "skipped" if out is None else f"shape {tuple(np.shape(out))}"
                print(f"# trace[{i}] {t['kind']}: {desc}")

    if args.path == "production":
        show("logits:", prod)
    elif args.path == "reference":
        show("logits:", ref)
    else:
        show("production:", prod)
        show("reference: ", ref)
        delta = float(np.max(np.abs(prod.logits - ref.logits)))
        agree = prod.argmax() == ref.argmax()
        print(f"max |delta| = {delta:.6g}; argmax agreement: {agree}")
    return 0


def cmd_cost(args) -> int:
    if args.preset == "table1":
        inputs = TABLE1_DEFAULTS
    else:
        try:
            inputs = FirstLayerCostInputs(
                h=args.height, w=args.width, c=args.channels, f=args.kernel,
                f1=args.filters, m=args.bits, k=args.expansion,
                n2=args.n2, binary_speedup=args.binary_speedup,
            )
        except BpbnError as e:
            return _fail(str(e))
    rep = report(inputs)
    print(render_machine(rep) if args.format == "machine" else render_text(rep))
    return 0


def cmd_selftest(args) -> int:
    results = run_selftest(seed=args.seed, corrupt_sign_tie=args.corrupt_sign_tie)
    failed = [r for r in results if not r.passed]
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name}: {r.detail}")
    if failed:
        print(f"{len(failed)} suite(s) failed: " + ", ".join(r.name for r in failed))
        return 1
    print(f"all {len(results)} suites passed (seed {args.seed})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bpbn",
        description="bit-plane input binarization engine for binary neural networks",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    enc = sub.add_parser("encode", help="encode an image with an input encoder")
    enc.add_argument("image", help="binary PGM/PPM input")
    enc.add_argument(
        "--method", required=True, choices=["bitplane", "dbid", "bil", "thermometer"]
    )
    enc.add_argument("--planes", type=int, default=8, help="bit planes P (1..8)")
    enc.add_argument("--expansion", type=int, default=32, help="expansion K")
    enc.add_argument("--seed", type=int, default=0, help="seed for BIL weights")
    enc.add_argument("--out", required=True, help="output file (directory for bitplane)")
    enc.set_defaults(fn=cmd_encode)

    exp = sub.add_parser("export-planes", help="write per-bit PGM visualizations")
    exp.add_argument("image")
    exp.add_argument("--channel", type=int, default=0)
    exp.add_argument("--out", required=True, help="output directory")
    exp.set_defaults(fn=cmd_export_planes)

    inf = sub.add_parser("infer", help="run a model on an image")
    inf.add_argument("model")
    inf.add_argument("image")
    inf.add_argument(
        "--path", choices=["production", "reference", "both"], default="production"
    )
    inf.add_argument("--trace", action="store_true", help="print per-layer trace")
    inf.set_defaults(fn=cmd_infer)

    cost = sub.add_parser("cost", help="first-layer MAC/weight cost report")
    cost.add_argument("--preset", choices=["table1"], default=None)
    cost.add_argument("--format", choices=["text", "machine"], default="text")
    cost.add_argument("--height", type=int, default=32)
    cost.add_argument("--width", type=int, default=32)
    cost.add_argument("--channels", type=int, default=3)
    cost.add_argument("--kernel", type=int, default=3)
    cost.add_argument("--filters", type=int, default=128)
    cost.add_argument("--bits", type=int, default=8)
    cost.add_argument("--expansion", type=int, default=32)
    cost.add_argument("--n2", type=int, default=32)
    cost.add_argument("--binary-speedup", type=float, default=9.0)
    cost.set_defaults(fn=cmd_cost)

    st = sub.add_parser("selftest", help="run the built-in verification suites")
    st.add_argument("--seed", type=int, default=0)
    st.add_argument(
        "--corrupt-sign-tie",
        action="store_true",
        help="negative control: simulate a build with a flipped sign tie rule",
    )
    st.set_defaults(fn=cmd_selftest)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
