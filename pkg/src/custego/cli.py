"""Command-line front end.

Machine-readable results go to stdout as JSON, human notes to stderr.
Exit codes: 0 ok, 1 other failure, 2 format error, 3 capacity error,
4 extraction failure.
"""

from __future__ import annotations

import argparse
import glob
import io
import json
import os
import sys

import numpy as np

from . import __version__
from .cbssm import FEATURE_NAMES, frame_feature_rows, restoration_analysis, write_features_csv
from .codec import decode_video, encode_video, write_stream
from .errors import CapacityError, ExtractionError, FormatError, InfeasibleError
from .evaluation import ExperimentConfig, jsonable, baseline_tew_embed, run_experiment, video_psnr
from .frame_io import VideoSequence, load_video, pad_to_ctu, parse_synth_spec, synth_frame, synth_video, synthetic_corpus, write_raw, write_y4m
from .quadtree import serialize_structures
from .stc import StcParams
from .stego import StegoPackage, bits_to_bytes, bytes_to_bits, capacity, embed_prepared, extract, prepare_cover

EXIT_OK, EXIT_FAIL, EXIT_FORMAT, EXIT_CAPACITY, EXIT_EXTRACT = 0, 1, 2, 3, 4


def _default_seed() -> int:
    env = os.environ.get("CUSTEGO_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise SystemExit(f"CUSTEGO_SEED must be an integer, got {env!r}")


def _emit(obj) -> None:
    sys.stdout.write(json.dumps(jsonable(obj), sort_keys=True) + "\n")


def _note(msg: str) -> None:
    print(msg, file=sys.stderr)


def _load_input(args) -> VideoSequence:
    """File path, or ``synth:KIND[:ARG]`` for a generated clip."""
    if args.input.startswith("synth:"):
        kw = parse_synth_spec(args.input[len("synth:") :])
        w, h = args.width or 64, args.height or 64
        n = args.max_frames or 1
        if kw["kind"] == "scene":
            return synth_video(w, h, n, seed=kw.get("seed", 0))
        f = synth_frame(kw.pop("kind"), w, h, **kw)
        return VideoSequence([f] * n, args.input)
    return load_video(args.input, args.format, args.width, args.height, args.chroma, args.max_frames)


def _padded(video: VideoSequence) -> list:
    return [pad_to_ctu(f) for f in video]


def _write_frames(path: str, frames) -> None:
    if path.endswith(".y4m"):
        write_y4m(path, frames)
    else:
        write_raw(path, frames)


def cmd_encode(args) -> int:
    video = _load_input(args)
    frames = _padded(video)
    coded, data = encode_video(frames, args.qp)
    with open(args.output, "wb") as fh:
        fh.write(data)
    _emit(
        {
            "frames": len(frames),
            "width": frames[0].width,
            "height": frames[0].height,
            "qp": args.qp,
            "bits": 8 * len(data),
            "psnr": video_psnr(frames, [c.recon for c in coded]),
        }
    )
    return EXIT_OK


def cmd_decode(args) -> int:
    with open(args.input, "rb") as fh:
        data = fh.read()
    dv = decode_video(data)
    _write_frames(args.output, dv.frames)
    if args.structure_out:
        with open(args.structure_out, "wb") as fh:
            fh.write(serialize_structures(dv.structures))
    out = {"frames": len(dv.frames), "width": dv.width, "height": dv.height, "qp": dv.qp, "bits": 8 * len(data)}
    if args.reference:
        ref = load_video(args.reference, args.format, args.width, args.height, args.chroma, len(dv.frames))
        out["psnr"] = video_psnr(_padded(ref), dv.frames)
    _emit(out)
    return EXIT_OK


def _message_bits(args) -> np.ndarray:
    if args.message_file is not None:
        with open(args.message_file, "rb") as fh:
            return bytes_to_bits(fh.read())
    rng = np.random.default_rng(args.seed)
    return rng.integers(0, 2, args.random_bits, dtype=np.uint8)


def cmd_embed(args) -> int:
    video = _load_input(args)
    frames = _padded(video)
    message = _message_bits(args)
    params = StcParams(args.h, None, args.seed)
    if args.scheme == "tew":
        pkg = baseline_tew_embed(frames, message, args.qp)
        summary = {"scheme": "tew", "carriers": pkg.header.carrier_counts, "embedded": int(len(message))}
    else:
        analyses = prepare_cover(frames, args.qp, args.scheme)
        counts = [a.carriers.q for a in analyses]
        available = capacity(counts, args.payload)
        if len(message) > available:
            raise CapacityError(f"capacity exceeded: required {len(message)} bits, available {available}")
        res = embed_prepared(analyses, message, args.payload, params, args.scheme)
        pkg = res.package
        summary = {
            "scheme": args.scheme,
            "carriers": counts,
            "frame_bits": pkg.header.frame_bits,
            "capacity": available,
            "embedded": int(len(message)),
            "changed": res.n_changed,
        }
    if args.scheme == "8x8":
        pkg.side_info = None
    pkg.save(args.output, args.sideinfo)
    if pkg.side_info is not None and args.sideinfo is None:
        _note("warning: no --sideinfo path given; extraction will need the original video")
    summary["bits"] = 8 * len(pkg.bitstream)
    _emit(summary)
    return EXIT_OK


def cmd_extract(args) -> int:
    pkg = StegoPackage.load(args.input, args.sideinfo, args.header)
    if args.h is not None or args.seed is not None:
        old = pkg.header.stc
        pkg.header.stc = StcParams(
            old.h if args.h is None else args.h,
            old.hhat if args.h is None else None,
            old.seed if args.seed is None else args.seed,
        )
    original = None
    if args.original:
        original = _padded(load_video(args.original, args.format, args.width, args.height, args.chroma))
    bits = extract(pkg, original)
    with open(args.output, "wb") as fh:
        fh.write(bits_to_bytes(bits))
    _emit({"scheme": pkg.header.scheme, "bits": int(len(bits))})
    return EXIT_OK


def cmd_analyze(args) -> int:
    """CBSSM features per frame plus the restoration report.

    A CUSG stream is analysed as coded; any other input is encoded at
    ``--qp`` first.
    """
    data = None
    if not args.input.startswith("synth:"):
        with open(args.input, "rb") as fh:
            head = fh.read(4)
        if head == b"CUSG":
            with open(args.input, "rb") as fh:
                data = fh.read()
    if data is None:
        if args.qp is None:
            raise ValueError("--qp is required when the input is not a CUSG stream")
        frames = _padded(_load_input(args))
        data = encode_video(frames, args.qp)[1]
        dv = None
    else:
        dv = decode_video(data)
        frames = dv.frames
    qp = args.qp if args.qp is not None else dv.qp
    n = min(args.frames or len(frames), len(frames))
    rows = frame_feature_rows(data, qp, n)
    buf = io.StringIO()
    write_features_csv(buf, [(os.path.basename(args.input), i, r) for i, r in enumerate(rows)])
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(buf.getvalue())
    report = restoration_analysis(frames[:n], qp).to_dict()
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(jsonable(report), fh, indent=2, sort_keys=True)
            fh.write("\n")
    mean = np.mean([r.as_array() for r in rows], axis=0)
    _emit(
        {
            "frames": n,
            "qp": qp,
            "features": dict(zip(FEATURE_NAMES, map(float, mean))),
            "mean_bsim": float(np.mean(mean[4:])),
            "restoration": {k: v for k, v in report.items() if k != "per_frame"},
        }
    )
    if not args.csv:
        sys.stderr.write(buf.getvalue())
    return EXIT_OK


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t)


def _ints(text: str) -> tuple:
    return tuple(int(t) for t in text.split(",") if t)


def cmd_experiment(args) -> int:
    if args.corpus:
        paths = sorted(glob.glob(os.path.join(args.corpus, "*.y4m")))
        if not paths:
            raise FormatError(f"no .y4m files in {args.corpus}")
        corpus = [load_video(p, max_frames=args.frames) for p in paths]
    else:
        corpus = synthetic_corpus(args.synthetic, args.frames or 2, args.size, args.size, args.seed)
    cfg = ExperimentConfig(
        qps=_ints(args.qps),
        payloads=_floats(args.payloads),
        schemes=tuple(args.schemes.split(",")),
        seed=args.seed,
        repeats=args.repeats,
        stc=StcParams(args.h, None, args.seed),
        restoration=not args.no_restoration,
        jobs=args.jobs,
    )
    result = run_experiment(corpus, cfg, args.out)
    summary = result.summary()
    _emit({"out": args.out, "n_videos": summary["n_videos"], "detection": result.detection})
    return EXIT_OK


def _add_input(p) -> None:
    p.add_argument("input", help="video file, CUSG stream or synth:KIND[:ARG]")
    p.add_argument("--format", choices=("y4m", "raw"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--chroma", choices=("420", "400"))
    p.add_argument("--max-frames", type=int)


def build_parser() -> argparse.ArgumentParser:
    seed = _default_seed()
    ap = argparse.ArgumentParser(prog="custego", description="CU-partition steganography toolkit")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a video to a CUSG stream")
    _add_input(p)
    p.add_argument("output")
    p.add_argument("--qp", type=int, default=32)
    p.set_defaults(func=cmd_encode)

    p = sub.add_parser("decode", help="decode a CUSG stream")
    p.add_argument("input")
    p.add_argument("output", help="reconstruction (.y4m or raw luma)")
    p.add_argument("--structure-out", help="write the partitions as CUSI records")
    p.add_argument("--reference", help="source video for a PSNR report")
    p.add_argument("--format", choices=("y4m", "raw"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--chroma", choices=("420", "400"))
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("embed", help="hide a message in the CU partitions")
    _add_input(p)
    p.add_argument("output")
    msg = p.add_mutually_exclusive_group(required=True)
    msg.add_argument("--message-file")
    msg.add_argument("--random-bits", type=int)
    p.add_argument("--qp", type=int, default=32)
    p.add_argument("--payload", type=float, default=0.5, help="message bits per carrier")
    p.add_argument("--scheme", choices=("full", "8x8", "tew"), default="full")
    p.add_argument("--h", type=int, default=7)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--sideinfo", help="where to write the original partitions (full scheme)")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("extract", help="recover a message")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--sideinfo")
    p.add_argument("--header", help="header JSON (default: INPUT.json)")
    p.add_argument("--original", help="original video instead of side info")
    p.add_argument("--h", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--format", choices=("y4m", "raw"))
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--chroma", choices=("420", "400"))
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("analyze", help="CBSSM features and restoration report")
    _add_input(p)
    p.add_argument("--qp", type=int)
    p.add_argument("--frames", type=int)
    p.add_argument("--csv", help="feature CSV path (default: stderr)")
    p.add_argument("--json", help="restoration report path")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("experiment", help="run the evaluation grid")
    p.add_argument("--corpus", help="directory of .y4m files (default: synthetic)")
    p.add_argument("--synthetic", type=int, default=20, help="number of synthetic videos")
    p.add_argument("--size", type=int, default=128)
    p.add_argument("--frames", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--qps", default="26,32,38")
    p.add_argument("--payloads", default="0.1,0.3,0.5")
    p.add_argument("--schemes", default="full,8x8,tew")
    p.add_argument("--repeats", type=int, default=100)
    p.add_argument("--h", type=int, default=7)
    p.add_argument("--seed", type=int, default=seed)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--no-restoration", action="store_true")
    p.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FormatError as exc:
        _note(f"error: {exc}")
        return EXIT_FORMAT
    except CapacityError as exc:
        _note(f"error: {exc}")
        return EXIT_CAPACITY
    except (ExtractionError, InfeasibleError) as exc:
        _note(f"error: {exc}")
        return EXIT_EXTRACT
    except (OSError, ValueError) as exc:
        _note(f"error: {exc}")
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
