"""Command-line entry point: ``conformer forward | verify | params``.

Machine-readable reports go to stdout, human-oriented logging to stderr.
Exit codes: 0 ok, 1 failed verification, 2 config error, 3 I/O error,
4 numeric error (non-finite output).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time

import numpy as np

from . import tensor as tt
from .errors import ConfigError, DimensionError, FormatError, NumericError
from .frontend import FeatureMatrix, log_mel, read_wav, spec_augment
from .models import (PRESET_TARGETS_M, apply_ablation, build_model, conformer_encode,
                     contextnet_encode, count_params, get_preset)
from .runconfig import RunConfig, load_run_config
from .tensor.io import payload_bytes, save_tensor

log = logging.getLogger("conformer")

EXIT_OK, EXIT_FAILED, EXIT_CONFIG, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3, 4

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    h = FNV_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


def tensor_summary(array):
    array = np.asarray(array)
    return {
        "shape": list(array.shape),
        "dtype": str(array.dtype),
        "mean": float(array.mean()) if array.size else 0.0,
        "std": float(array.std()) if array.size else 0.0,
        "checksum": f"{fnv1a64(payload_bytes(array)):016x}",
    }


def _config_echo(run: RunConfig):
    echo = {"kind": run.kind, "precision": run.precision}
    model = dataclasses.asdict(run.model)
    if run.kind == "contextnet":
        model["blocks"] = len(run.model.blocks)
        model["channels"] = run.model.channels
    echo["model"] = model
    return echo


def write_csv_matrix(path, array):
    array = np.asarray(array)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"c{i}" for i in range(array.shape[1])])
        for row in array:
            writer.writerow([repr(float(v)) for v in row])


def load_features(run: RunConfig, args, rng):
    if args.wav:
        return log_mel(read_wav(args.wav), run.features)
    return FeatureMatrix(rng.standard_normal((args.synthetic, run.model.n_mels)))


def cmd_forward(args):
    run = load_run_config(args.config) if args.config else RunConfig()
    seed = args.seed
    tt.set_default_dtype(run.precision)
    start = time.perf_counter()
    streams = np.random.SeedSequence(seed).spawn(3)
    input_rng, aug_rng, dropout_rng = (np.random.default_rng(s) for s in streams)
    features = load_features(run, args, input_rng)
    if args.mode == "train" and run.spec_augment is not None:
        features = spec_augment(features, run.spec_augment, rng=aug_rng)
    log.info("features %s, building %s model (seed %d)", features.shape, run.kind, seed)
    model = build_model(run.model, seed)
    x = features.data.astype(tt.default_dtype())
    with tt.no_grad(), tt.detect_anomaly():
        if run.kind == "conformer":
            y = conformer_encode(x, model, mode=args.mode, rng=dropout_rng)
        else:
            y = contextnet_encode(x, model, mode=args.mode)
    elapsed = (time.perf_counter() - start) * 1000.0
    if args.out:
        if args.format == "csv":
            write_csv_matrix(args.out, y.data)
        else:
            save_tensor(args.out, y)
    report = {
        "command": "forward",
        "config": _config_echo(run),
        "input": args.wav or f"synthetic:{args.synthetic}",
        "mode": args.mode,
        "output": tensor_summary(y.data),
        "timing_ms": round(elapsed, 3),
        "seed": seed,
    }
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_verify(args):
    from .verify.suites import run_suite
    start = time.perf_counter()
    results = run_suite(args.suite, args.scale, jobs=args.jobs)
    elapsed = (time.perf_counter() - start) * 1000.0
    width = max(len(r.name) for r in results)
    for r in results:
        flag = "ok" if r.passed else "FAIL"
        print(f"{r.suite:<9} {r.name:<{width}}  max_err={r.max_err:.3e}  tol={r.tol:.0e}  "
              f"runs={r.runs}  {flag}", file=sys.stderr)
    failed = [r.name for r in results if not r.passed]
    report = {
        "command": "verify",
        "suite": args.suite,
        "scale": args.scale,
        "checks": [{"suite": r.suite, "name": r.name, "max_err": r.max_err, "tol": r.tol,
                    "runs": r.runs, "passed": r.passed} for r in results],
        "failed": failed,
        "timing_ms": round(elapsed, 3),
        "seed": 0,
    }
    print(json.dumps(report, indent=2))
    return EXIT_FAILED if failed else EXIT_OK


PARAMS_HEADER = ["config", "ablation", "encoder", "decoder", "total", "target_m", "deviation_pct",
                 "delta"]


def params_rows(names, ablations, base_cfg=None):
    rows = []
    targets = []
    if base_cfg is not None:
        targets.append(("config", base_cfg, None))
    for name in names:
        targets.append((name.upper(), get_preset(name), PRESET_TARGETS_M.get(name.upper())))
    for label, cfg, target in targets:
        base = count_params(cfg)
        dev = "" if target is None else f"{100.0 * (base.total / 1e6 - target) / target:.2f}"
        rows.append([label, "", base.encoder, base.decoder_analytic, base.total,
                     "" if target is None else target, dev, 0])
        for row in ablations:
            c = count_params(apply_ablation(cfg, row))
            rows.append([label, row, c.encoder, c.decoder_analytic, c.total, "", "",
                         c.total - base.total])
    return rows


def cmd_params(args):
    base_cfg = None
    if args.config:
        run = load_run_config(args.config)
        if run.kind != "conformer":
            c = count_params(run.model)
            rows = [["contextnet", "", c.encoder, 0, c.total, "", "", 0]]
            _print_csv(rows)
            return EXIT_OK
        base_cfg = run.model
    names = args.presets or ([] if base_cfg is not None else ["S", "M", "L"])
    _print_csv(params_rows(names, args.ablation, base_cfg))
    return EXIT_OK


def _print_csv(rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PARAMS_HEADER)
    writer.writerows(rows)
    sys.stdout.write(buf.getvalue())


def build_parser():
    parser = argparse.ArgumentParser(prog="conformer", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    fwd = sub.add_parser("forward", help="run an encoder and write its output")
    fwd.add_argument("--config", help="YAML run config (default: preset S)")
    src = fwd.add_mutually_exclusive_group(required=True)
    src.add_argument("--wav", help="PCM16 mono WAV input")
    src.add_argument("--synthetic", type=int, metavar="T",
                     help="standard-normal T x n_mels features drawn from the seed")
    fwd.add_argument("--seed", type=int, default=0)
    fwd.add_argument("--mode", choices=("train", "infer"), default="infer")
    fwd.add_argument("--out", help="where to write the encoder output")
    fwd.add_argument("--format", choices=("cfkt", "csv"), default="cfkt")
    fwd.set_defaults(func=cmd_forward)

    ver = sub.add_parser("verify", help="run gradient checks and loop oracles")
    ver.add_argument("--suite", choices=("gradcheck", "oracle", "all"), default="all")
    ver.add_argument("--scale", choices=("small", "full"), default="small")
    ver.add_argument("--jobs", type=int, default=1, help="worker threads")
    ver.set_defaults(func=cmd_verify)

    par = sub.add_parser("params", help="parameter counts against the reported model sizes")
    par.add_argument("presets", nargs="*", metavar="PRESET", help="S, M and/or L")
    par.add_argument("--config", help="count a YAML run config instead of / besides presets")
    par.add_argument("--ablation", action="append", default=[], metavar="ROW",
                     help="ablation row, e.g. relu or kernel(3); repeatable")
    par.set_defaults(func=cmd_params)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if getattr(args, "synthetic", None) is not None and args.synthetic < 1:
        parser.error("--synthetic must be a positive frame count")
    try:
        return args.func(args)
    except (ConfigError, DimensionError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    finally:
        tt.set_default_dtype("float64")


if __name__ == "__main__":
    sys.exit(main())
