"""Command-line pipeline: detect -> reconstruct -> evaluate.

Subcommands, with the defaults gamma=0.6, lambda1=20, lambda2=0.5:

    detect       frames -> occlusion mask images
    reconstruct  frames + mask -> reconstructed frames
    simulate     clean frames -> cloudy frames + ground-truth mask
    evaluate     two sequences -> relative reconstruction error
    pipeline     detect + reconstruct (+ evaluate against --truth)

Sequence arguments accept either a frame directory or a ``.tcrm`` raw tensor
file; outputs follow the same rule.  A flat ``key = value`` config file can
supply any flag default; explicit flags win.  Exit codes: 0 success, 2 usage,
3 bad/missing input, 4 solver divergence, 5 unexpected failure.

Set DECLOUD_THREADS to pin the BLAS thread count (exported before numpy is
loaded); runs with the same seed and thread count are byte-identical.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

__all__ = ["cli_main"]

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DIVERGED = 4
EXIT_FAILURE = 5

DEFAULTS = {
    "gamma": 0.6,
    "k": None,
    "method": "tecromac",
    "algorithm": "ipg",
    "lambda1": 20.0,
    "lambda2": 0.5,
    "rank": 20,
    "seed": 0,
    "pattern": "*.png",
    "channels": None,
    "bit_depth": 8,
    "coverage": 0.4,
    "blob_scale": 0.25,
    "max_outer": None,
    "primal_tol": None,
}

_CASTS = {
    "gamma": float, "lambda1": float, "lambda2": float, "coverage": float,
    "blob_scale": float, "primal_tol": float,
    "k": int, "rank": int, "seed": int, "channels": int, "bit_depth": int,
    "max_outer": int,
    "method": str, "algorithm": str, "pattern": str,
}


def _set_thread_env():
    threads = os.environ.get("DECLOUD_THREADS")
    if not threads:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(var, threads)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decloud",
        description="Remove cloud occlusions from image sequences and "
                    "reconstruct the hidden scene.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_frame_flags(p):
        p.add_argument("--pattern", help="frame glob (default *.png)")
        p.add_argument("--channels", type=int, choices=(1, 3),
                       help="frame channels (default: inferred from first frame)")
        p.add_argument("--bit-depth", type=int, choices=(8, 16), dest="bit_depth",
                       help="frame bit depth (default 8)")
        p.add_argument("--config", help="key = value file supplying flag defaults")

    p = sub.add_parser("detect", help="estimate the occlusion mask")
    p.add_argument("frames", help="cloudy frames (directory or .tcrm)")
    p.add_argument("-o", "--out", required=True, help="mask output directory")
    p.add_argument("--gamma", type=float, help="dark-channel threshold (default 0.6)")
    p.add_argument("--k", type=int, help="frames rescued per always-white pixel")
    add_frame_flags(p)

    p = sub.add_parser("reconstruct", help="recover the occluded scene")
    p.add_argument("frames", help="cloudy frames (directory or .tcrm)")
    p.add_argument("-o", "--out", required=True, help="output (directory or .tcrm)")
    p.add_argument("--mask", required=True, help="observation mask directory")
    p.add_argument("--method", choices=("tecromac", "tecmac", "mc", "rmc", "interp"))
    p.add_argument("--algorithm", choices=("ipg", "alt"))
    p.add_argument("--lambda1", type=float, help="low-rank weight (default 20)")
    p.add_argument("--lambda2", type=float, help="time-smoothness weight (default 0.5)")
    p.add_argument("--rank", type=int, help="factor rank for --algorithm alt (default 20)")
    p.add_argument("--seed", type=int)
    p.add_argument("--max-outer", type=int, dest="max_outer")
    p.add_argument("--primal-tol", type=float, dest="primal_tol")
    p.add_argument("--step-eta", type=float, dest="step_eta",
                   help="fixed factor step size (default: line search)")
    p.add_argument("--scale-lambdas", action="store_true",
                   help="multiply both weights by the observed fraction")
    p.add_argument("--trace", help="write the iteration trace table here")
    add_frame_flags(p)

    p = sub.add_parser("simulate", help="composite synthetic clouds over clean frames")
    p.add_argument("frames", help="clean frames (directory or .tcrm)")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--coverage", type=float, help="target cloud fraction (default 0.4)")
    p.add_argument("--blobs", type=int, nargs=2, metavar=("LO", "HI"),
                   help="cloud blobs per frame (default 2 5)")
    p.add_argument("--blob-scale", type=float, dest="blob_scale")
    p.add_argument("--intensity", type=float, nargs=2, metavar=("LO", "HI"),
                   help="cloud whiteness range (default 0.8 1.0)")
    p.add_argument("--full-cover", default="", help="comma-separated frame indices "
                   "forced fully cloudy")
    p.add_argument("--seed", type=int)
    add_frame_flags(p)

    p = sub.add_parser("evaluate", help="relative reconstruction error of one "
                       "sequence against another")
    p.add_argument("estimate", help="estimated sequence (directory or .tcrm)")
    p.add_argument("truth", help="reference sequence (directory or .tcrm)")
    p.add_argument("-o", "--out", help="also write the report to this file")
    add_frame_flags(p)

    p = sub.add_parser("pipeline", help="detect + reconstruct (+ evaluate)")
    p.add_argument("frames", help="cloudy frames (directory or .tcrm)")
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.add_argument("--truth", help="clean frames for scoring (directory or .tcrm)")
    p.add_argument("--gamma", type=float)
    p.add_argument("--k", type=int)
    p.add_argument("--method", choices=("tecromac", "tecmac", "mc", "rmc", "interp"))
    p.add_argument("--algorithm", choices=("ipg", "alt"))
    p.add_argument("--lambda1", type=float)
    p.add_argument("--lambda2", type=float)
    p.add_argument("--rank", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-outer", type=int, dest="max_outer")
    p.add_argument("--primal-tol", type=float, dest="primal_tol")
    p.add_argument("--scale-lambdas", action="store_true")
    add_frame_flags(p)

    return parser


def _resolve(args, key):
    """Explicit flag > config file > built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    cfg = getattr(args, "_config_values", {})
    if key in cfg:
        cast = _CASTS.get(key, str)
        return cast(cfg[key])
    return DEFAULTS.get(key)


def _load_sequence(path, args):
    from . import frameio

    p = Path(path)
    if p.suffix == frameio.RAW_SUFFIX:
        return frameio.load_raw(p)
    pattern = _resolve(args, "pattern")
    channels = _resolve(args, "channels")
    bit_depth = _resolve(args, "bit_depth")
    if channels is None:
        channels = _peek_channels(p, pattern)
    spec = frameio.FrameDirSpec(p, pattern=pattern, channels=channels,
                                bit_depth=bit_depth)
    return frameio.load_frames(spec)


def _peek_channels(root: Path, pattern: str) -> int:
    import cv2

    if not root.is_dir():
        raise FileNotFoundError(f"frame directory not found: {root}")
    files = sorted(root.glob(pattern))
    if not files:
        raise FileNotFoundError(f"no frames matching {pattern!r} in {root}")
    img = cv2.imread(str(files[0]), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise OSError(f"unreadable image: {files[0]}")
    return 1 if img.ndim == 2 else img.shape[2]


def _save_sequence(seq, path, args):
    from . import frameio

    p = Path(path)
    if p.suffix == frameio.RAW_SUFFIX:
        p.parent.mkdir(parents=True, exist_ok=True)
        frameio.save_raw(seq, p)
        return
    spec = frameio.FrameDirSpec(
        p,
        pattern=_resolve(args, "pattern"),
        channels=seq.channels,
        bit_depth=_resolve(args, "bit_depth"),
    )
    frameio.save_frames(seq, spec)


def _detector_config(args):
    from .detection import DetectorConfig

    return DetectorConfig(gamma=_resolve(args, "gamma"),
                          k_neighbors=_resolve(args, "k"))


def _reconstruct(seq, mask, args):
    """Shared by the reconstruct and pipeline subcommands."""
    import numpy as np

    from .simulation import run_method
    from .tensor_ops import DataMatrix, reshape_to_matrix, reshape_to_sequence

    y = reshape_to_matrix(seq)
    method = _resolve(args, "method")
    lam1 = _resolve(args, "lambda1")
    lam2 = _resolve(args, "lambda2")
    if getattr(args, "scale_lambdas", False):
        s = float(mask.to_matrix(seq.channels).mean())
        lam1 *= s
        lam2 *= s
    overrides = {}
    if method != "interp":
        overrides["algorithm"] = _resolve(args, "algorithm")
        overrides["seed"] = _resolve(args, "seed")
        if overrides["algorithm"] == "alt":
            overrides["rank"] = min(_resolve(args, "rank"), min(y.values.shape))
            step_eta = getattr(args, "step_eta", None)
            if step_eta is not None:
                overrides["step_eta"] = step_eta
        for key in ("max_outer", "primal_tol"):
            value = _resolve(args, key)
            if value is not None:
                overrides[key] = value
    x_mat, sol = run_method(method, y, mask, lam1, lam2, **overrides)
    recon = reshape_to_sequence(DataMatrix(np.clip(x_mat, 0.0, 1.0), seq.dims))
    return recon, sol


def _cmd_detect(args) -> int:
    from . import frameio
    from .detection import detect_clouds

    seq = _load_sequence(args.frames, args)
    report = detect_clouds(seq, _detector_config(args))
    frameio.save_mask(report.mask, args.out)
    frac = report.mask.count / report.mask.observed.size
    print(f"observed fraction = {frac:.6f}")
    print(f"always_white pixels = {len(report.always_white)}")
    print(f"rescued entries = {report.rescued}")
    return EXIT_OK


def _cmd_reconstruct(args) -> int:
    from . import frameio

    seq = _load_sequence(args.frames, args)
    mask = frameio.load_mask(args.mask)
    if mask.observed.shape != (seq.dims[0], seq.dims[1], seq.dims[3]):
        raise ValueError(
            f"mask shape {mask.observed.shape} does not match frames "
            f"{(seq.dims[0], seq.dims[1], seq.dims[3])}"
        )
    recon, sol = _reconstruct(seq, mask, args)
    _save_sequence(recon, args.out, args)
    if sol is not None:
        print(f"iterations = {sol.outer_iterations}  converged = {sol.converged}")
        print(f"residual = {sol.primal_residual:.3e}")
        if args.trace:
            Path(args.trace).write_text(sol.trace_table())
    return EXIT_OK


def _cmd_simulate(args) -> int:
    from . import frameio
    from .simulation import CloudSimParams, composite_clouds, generate_cloud_alpha

    seq = _load_sequence(args.frames, args)
    full = tuple(int(tok) for tok in str(_resolve_str(args, "full_cover")).split(",") if tok != "")
    params = CloudSimParams(
        coverage=_resolve(args, "coverage"),
        n_blobs_per_frame=tuple(args.blobs) if args.blobs else (2, 5),
        blob_scale=_resolve(args, "blob_scale"),
        cloud_intensity=tuple(args.intensity) if args.intensity else (0.8, 1.0),
        full_cover_frames=full,
        seed=_resolve(args, "seed"),
    )
    alpha = generate_cloud_alpha((seq.dims[0], seq.dims[1], seq.dims[3]), params)
    cloudy, truth = composite_clouds(seq, alpha, params.cloud_intensity,
                                     seed=params.seed + 1)
    out = Path(args.out)
    _save_sequence(cloudy, out / "cloudy", args)
    frameio.save_mask(truth, out / "truth_mask")
    print(f"cloudy frames -> {out / 'cloudy'}")
    print(f"truth mask    -> {out / 'truth_mask'}")
    print(f"occluded fraction = {1.0 - truth.count / truth.observed.size:.6f}")
    return EXIT_OK


def _resolve_str(args, key):
    value = getattr(args, key, None)
    if value not in (None, ""):
        return value
    return getattr(args, "_config_values", {}).get(key, "")


def _cmd_evaluate(args) -> int:
    from .simulation import rre

    est = _load_sequence(args.estimate, args)
    tru = _load_sequence(args.truth, args)
    value = rre(est, tru)
    line = f"rre = {value:.10g}"
    print(line)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(line + "\n")
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    from . import frameio
    from .detection import detect_clouds
    from .simulation import rre

    seq = _load_sequence(args.frames, args)
    out = Path(args.out)
    t0 = time.perf_counter()
    report = detect_clouds(seq, _detector_config(args))
    t_detect = time.perf_counter() - t0
    frameio.save_mask(report.mask, out / "mask")

    t0 = time.perf_counter()
    recon, sol = _reconstruct(seq, report.mask, args)
    t_solve = time.perf_counter() - t0
    _save_sequence(recon, out / "recon", args)

    lines = [
        f"method = {_resolve(args, 'method')}",
        f"algorithm = {_resolve(args, 'algorithm')}",
        f"gamma = {_resolve(args, 'gamma'):.10g}",
        f"lambda1 = {_resolve(args, 'lambda1'):.10g}",
        f"lambda2 = {_resolve(args, 'lambda2'):.10g}",
        f"seed = {_resolve(args, 'seed')}",
        f"observed_fraction = {report.mask.count / report.mask.observed.size:.10g}",
        f"always_white = {len(report.always_white)}",
        f"rescued = {report.rescued}",
    ]
    if sol is not None:
        lines.append(f"iterations = {sol.outer_iterations}")
        lines.append(f"converged = {sol.converged}")
        lines.append(f"residual = {sol.primal_residual:.10g}")
    if args.truth:
        truth_seq = _load_sequence(args.truth, args)
        lines.append(f"rre = {rre(recon, truth_seq):.10g}")
    # Timings go to stdout only, so report files are byte-identical across
    # runs with the same seed.
    (out / "report.kv").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"detect seconds = {t_detect:.3f}")
    print(f"solve seconds = {t_solve:.3f}")
    return EXIT_OK


_COMMANDS = {
    "detect": _cmd_detect,
    "reconstruct": _cmd_reconstruct,
    "simulate": _cmd_simulate,
    "evaluate": _cmd_evaluate,
    "pipeline": _cmd_pipeline,
}


def cli_main(argv=None) -> int:
    _set_thread_env()
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    if getattr(args, "config", None):
        from .frameio import read_config

        try:
            args._config_values = read_config(args.config)
        except (OSError, ValueError) as exc:
            print(f"decloud: {exc}", file=sys.stderr)
            return EXIT_INPUT
    else:
        args._config_values = {}
    try:
        return _COMMANDS[args.command](args)
    except (FileNotFoundError, OSError, ValueError) as exc:
        print(f"decloud: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - map to exit codes at the boundary
        from .solver import DivergenceError

        if isinstance(exc, DivergenceError):
            print(f"decloud: solver diverged: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        print(f"decloud: unexpected failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(cli_main())
