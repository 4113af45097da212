"""Command-line interface: synth, train, eval, dehaze, gradcheck.

Exit codes: 0 success, 2 config/validation error, 3 I/O error, 4 numeric
failure.  All randomness flows from --seed (or the config seed).  The
HAZELAB_THREADS environment variable caps BLAS parallelism and is applied
before numpy loads, so heavy imports stay inside the command handlers.
"""

from __future__ import annotations

import argparse
import os
import sys


def _cap_threads():
    cap = os.environ.get("HAZELAB_THREADS")
    if not cap:
        return
    for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hazelab",
        description="Haze synthesis, semantic dehazing model training, and evaluation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON run configuration file")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--out", help="override the config output directory")

    p_synth = sub.add_parser("synth", help="emit procedural sources or a static hazy set")
    common(p_synth)
    p_synth.add_argument(
        "--preset",
        choices=("sources", "testsetA", "testsetB"),
        default="testsetA",
        help="'sources' writes RGB-D inputs; testsetA/B write hazy sample triples",
    )
    p_synth.add_argument("--count", type=int, help="override procedural test-source count")

    p_train = sub.add_parser("train", help="train the model (or the ablation baseline)")
    common(p_train)
    p_train.add_argument("--resume", help="checkpoint file to continue from")
    p_train.add_argument(
        "--ablation", action="store_true", help="train the no-semantics baseline instead"
    )

    p_eval = sub.add_parser("eval", help="evaluate a method over a testset protocol")
    common(p_eval)
    p_eval.add_argument("--weights", help="HZW1 weights file (model or baseline)")
    p_eval.add_argument("--method", choices=("dcp", "identity"), help="reference method")
    p_eval.add_argument(
        "--ablation", action="store_true",
        help="evaluate baseline weights with ground-truth illumination",
    )
    p_eval.add_argument("--protocol", choices=("testsetA", "testsetB", "custom"),
                        default="testsetA")
    p_eval.add_argument("--triptychs", type=int, default=0,
                        help="also write N side-by-side hazy|pred|clean images")

    p_dehaze = sub.add_parser("dehaze", help="dehaze a single image file")
    common(p_dehaze)
    p_dehaze.add_argument("--weights", required=True)
    p_dehaze.add_argument("image", help="input PPM image")
    p_dehaze.add_argument("output", help="output PPM path")
    p_dehaze.add_argument("--dump-trace", metavar="DIR",
                          help="write confidence map and global features as HZT1")

    p_grad = sub.add_parser("gradcheck", help="finite-difference oracle over all engine ops")
    p_grad.add_argument("--seeds", type=int, default=5)
    p_grad.add_argument("--tolerance", type=float, default=1e-2)

    return parser


def _load_config(args):
    from .config import load_run_config

    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    return load_run_config(args.config, overrides)


def cmd_synth(args) -> int:
    from .datasets import write_procedural_sources, write_static_set

    cfg = _load_config(args)
    data = cfg.raw["data"]
    if args.preset == "sources":
        counts = {
            "train": data["procedural_train"],
            "val": data["procedural_val"],
            "test": data["procedural_test"],
        }
        manifest = write_procedural_sources(cfg.out_dir, counts, cfg.seed, cfg.image_size,
                                            data["max_depth"])
        print(f"wrote {manifest}")
        return 0
    sources = cfg.sources("test")
    if args.count is not None:
        sources = sources[: args.count]
    index = write_static_set(cfg.out_dir, sources, args.preset, cfg.seed, cfg.betas)
    print(f"wrote {index}")
    return 0


def cmd_train(args) -> int:
    from .network import save_weights
    from .training import train

    cfg = _load_config(args)
    kind = "baseline" if args.ablation else "full"
    model_config = cfg.model_config(kind)
    weights, state = train(
        model_config,
        cfg.sources("train"),
        cfg.sources("val"),
        cfg.train_config(),
        cfg.out_dir,
        resume_path=args.resume,
        log_fn=print,
    )
    weights_path = os.path.join(cfg.out_dir, "weights.hzw")
    save_weights(weights, weights_path)
    print(
        f"done: {state.epoch} epochs, best val loss {state.best_val_loss:.6f} "
        f"(epoch {state.best_val_epoch}); weights at {weights_path}"
    )
    return 0


def cmd_eval(args) -> int:
    from .errors import ConfigError

    cfg = _load_config(args)
    sources = cfg.sources("test")

    if args.method is not None:
        if args.weights or args.ablation:
            raise ConfigError("eval: --method excludes --weights/--ablation")
        from .evaluate import dcp_method, identity_method

        method = dcp_method if args.method == "dcp" else identity_method
        weights_hash = ""
        label = args.method
    else:
        if not args.weights:
            raise ConfigError("eval: provide --weights or --method")
        from .evaluate import baseline_method, model_method
        from .formats import sha256_file
        from .network import BaselineModel, Model, load_weights

        kind = "baseline" if args.ablation else "full"
        model_config = cfg.model_config(kind)
        weights = load_weights(args.weights, model_config)
        model = (BaselineModel if args.ablation else Model)(model_config, weights)
        method = baseline_method(model) if args.ablation else model_method(model)
        weights_hash = sha256_file(args.weights)
        label = "baseline" if args.ablation else "model"

    from .evaluate import evaluate_set
    from .metrics import emit_report

    report, images = evaluate_set(
        method, sources, args.protocol, cfg.seed, cfg.betas,
        weights_hash=weights_hash, collect_images=args.triptychs,
    )
    csv_path, json_path = emit_report(report, cfg.out_dir, images if args.triptychs else None)
    s = report.summary()
    print(
        f"{label} on {args.protocol}: {s['rows']} samples, "
        f"mse={s['mse']:.6f} psnr={s['psnr']:.3f} ssim={s['ssim']:.4f}"
    )
    print(f"wrote {csv_path} and {json_path}")
    return 0


def cmd_dehaze(args) -> int:
    import numpy as np

    from .formats import read_ppm, write_hzt, write_ppm
    from .network import Model, load_weights
    from .synthesis import resize_bilinear
    from .tensor import Tensor

    cfg = _load_config(args)
    model_config = cfg.model_config("full")
    weights = load_weights(args.weights, model_config)
    model = Model(model_config, weights)

    image = read_ppm(args.image)
    orig_hw = image.shape[:2]
    work = image
    if orig_hw != cfg.image_size:
        work = resize_bilinear(image, cfg.image_size)
    trace = model.forward(Tensor(work.transpose(2, 0, 1)[None]))
    pred = np.clip(trace.prediction.data[0].transpose(1, 2, 0), 0.0, 1.0)
    if pred.shape[:2] != orig_hw:
        pred = resize_bilinear(pred, orig_hw)
    write_ppm(args.output, pred)
    if args.dump_trace:
        os.makedirs(args.dump_trace, exist_ok=True)
        write_hzt(os.path.join(args.dump_trace, "confidence.hzt"), trace.confidence.data)
        write_hzt(os.path.join(args.dump_trace, "global_features.hzt"),
                  trace.global_features.data)
    print(f"wrote {args.output}")
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(range(args.seeds), tolerance=args.tolerance)
    failed = False
    for res in sorted(results, key=lambda r: r.name):
        print(res.line())
        failed = failed or not res.passed
    if failed:
        print("gradcheck FAILED", file=sys.stderr)
        return 4
    print(f"all {len(results)} ops pass at tolerance {args.tolerance:g} over {args.seeds} seeds")
    return 0


_HANDLERS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "eval": cmd_eval,
    "dehaze": cmd_dehaze,
    "gradcheck": cmd_gradcheck,
}


def main(argv=None) -> int:
    _cap_threads()
    args = build_parser().parse_args(argv)

    from .errors import ConfigError, DataError, FormatError, NumericError, ShapeError

    try:
        return _HANDLERS[args.command](args)
    except (ConfigError, DataError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (FormatError, FileNotFoundError, IsADirectoryError, PermissionError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except NumericError as e:
        print(f"error: {e}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
