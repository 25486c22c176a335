"""Command-line surface: gradcheck, bench, train, eval, detect, report.

Every subcommand is deterministic given its config and seed. Machine
outputs are JSON (sorted keys) or CSV; exit codes are stable and documented:

    0   success
    2   configuration error (bad arguments, bad values, unknown filter)
    3   gradient check failed
    4   required file missing
    5   config / net-spec parse error (message carries the line number)
    6   weights checksum mismatch
    7   weights format version mismatch
    8   unreadable or unsupported image
    9   malformed or truncated data file
    10  training diverged
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import fields, replace
from fractions import Fraction
from pathlib import Path

from . import gradcheck as gradcheck_mod
from .config import ParseError, parse_kv_file
from .cost import CostReport, model_cost
from .dataset import synth_dataset
from .imageio import ImageFormatError, draw_boxes, read_image, to_channels, write_image
from .losses import BBox
from .metrics import evaluate, pr_curve_csv
from .model import ToyNetSpec, cost_layers, net_forward
from .postprocess import (
    box_from_letterboxed,
    decode,
    detections_to_json,
    letterbox,
    nms,
)
from .tensor import ConfigError, set_checked, verify_mode_forced
from .train import TrainConfig, TrainingDiverged, train_toy
from .weights_io import (
    WeightsChecksumError,
    WeightsError,
    WeightsTruncatedError,
    WeightsVersionError,
    load_weights,
    save_weights,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_GRADCHECK = 3
EXIT_MISSING = 4
EXIT_PARSE = 5
EXIT_CHECKSUM = 6
EXIT_VERSION = 7
EXIT_IMAGE = 8
EXIT_FORMAT = 9
EXIT_DIVERGED = 10

_NET_SCHEMA = {
    "image_size": "int",
    "in_channels": "int",
    "stem_channels": "int",
    "num_classes": "int",
    "stride": "int",
    "cp_fraction": "float",
    "pconv_kernel": "int",
    "expansion": "float",
    "spp_windows": "int_tuple",
    "cbam_reduction": "int",
    "cbam_spatial_kernel": "int",
    "cbam_composition": "str",
    "cbam_channel_mlp": "str",
    "activation": "str",
}

_RUN_SCHEMA = dict(_NET_SCHEMA, **{
    "seed": "int",
    "epochs": "int",
    "batch_size": "int",
    "lr_max": "float",
    "lr_min": "float",
    "weight_decay": "float",
    "loss_variant": "str",
    "freeze_fraction": "float",
    "dataset_count": "int",
    "box_weight": "float",
    "obj_weight": "float",
    "cls_weight": "float",
    "score_threshold": "float",
    "nms_iou": "float",
    "eval_iou": "float",
    "checked": "bool",
    "dtype": "str",
})

_RUN_DEFAULTS = {"score_threshold": 0.25, "nms_iou": 0.45, "eval_iou": 0.5, "checked": True}


def _load_net_spec(values: dict) -> ToyNetSpec:
    net_keys = {f.name for f in fields(ToyNetSpec)} & values.keys()
    return ToyNetSpec(**{k: values[k] for k in net_keys})


def _load_run_config(path) -> tuple[TrainConfig, dict]:
    values = dict(_RUN_DEFAULTS)
    if path is not None:
        values.update(parse_kv_file(path, _RUN_SCHEMA))
    net = _load_net_spec(values)
    train_keys = {f.name for f in fields(TrainConfig)} - {"net"}
    cfg_kwargs = {k: values[k] for k in train_keys & values.keys()}
    if "image_size" in values:
        cfg_kwargs["image_size"] = values["image_size"]
    if "num_classes" in values:
        cfg_kwargs["num_classes"] = values["num_classes"]
    cfg = TrainConfig(net=net, **cfg_kwargs)
    return cfg, values


def _require_file(path, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} not found: {p}")
    return p


def _json_dump(obj, path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_gradcheck(args) -> int:
    results = gradcheck_mod.run_suites(args.filter, cases=args.cases, seed=args.seed)
    width = max(len(r.name) for r in results)
    failed = []
    for r in results:
        status = "pass" if r.passed else "FAIL"
        print(f"{r.name.ljust(width)}  cases={r.cases:<4d} max_rel_err={r.max_err!r}  {status}")
        if not r.passed:
            failed.append(r.name)
    if failed:
        print(f"gradient check FAILED for: {', '.join(failed)}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def _bench_rows(spec: ToyNetSpec):
    pconv_report = model_cost(cost_layers(replace(spec, use_pconv=True)))
    full_report = model_cost(cost_layers(replace(spec, use_pconv=False)))
    rows = []
    for pl, fl in zip(pconv_report.layers, full_report.layers):
        ratio = Fraction(pl.mem_access_approx, fl.mem_access_approx) if fl.mem_access_approx else Fraction(1)
        rows.append({
            "layer": pl.name,
            "full_params": fl.params, "pconv_params": pl.params,
            "full_macs": fl.macs, "pconv_macs": pl.macs,
            "full_mem_approx": fl.mem_access_approx, "pconv_mem_approx": pl.mem_access_approx,
            "feature_access_ratio": float(ratio),
        })
    return rows, pconv_report, full_report


def cmd_bench(args) -> int:
    values = parse_kv_file(args.spec, _NET_SCHEMA) if args.spec else {}
    spec = _load_net_spec(values)
    if args.cp_fraction is not None:
        spec = replace(spec, cp_fraction=args.cp_fraction)
    rows, pconv_report, full_report = _bench_rows(spec)

    header = f"{'layer':<16} {'full_params':>12} {'pconv_params':>12} {'full_macs':>12} {'pconv_macs':>12} {'ratio':>8}"
    print(header)
    print("-" * len(header))
    for r in rows:
        print(f"{r['layer']:<16} {r['full_params']:>12} {r['pconv_params']:>12} "
              f"{r['full_macs']:>12} {r['pconv_macs']:>12} {r['feature_access_ratio']:>8.4f}")
    print(f"{'TOTAL':<16} {full_report.total_params:>12} {pconv_report.total_params:>12} "
          f"{full_report.total_macs:>12} {pconv_report.total_macs:>12}")

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _json_dump({
        "rows": rows,
        "totals": {
            "full_params": full_report.total_params,
            "pconv_params": pconv_report.total_params,
            "full_macs": full_report.total_macs,
            "pconv_macs": pconv_report.total_macs,
            "full_mem_approx": full_report.total_mem_approx,
            "pconv_mem_approx": pconv_report.total_mem_approx,
        },
    }, out_dir / "bench.json")
    lines = ["layer,full_params,pconv_params,full_macs,pconv_macs,full_mem_approx,pconv_mem_approx,feature_access_ratio"]
    for r in rows:
        lines.append(",".join(str(r[k]) for k in (
            "layer", "full_params", "pconv_params", "full_macs", "pconv_macs",
            "full_mem_approx", "pconv_mem_approx", "feature_access_ratio")))
    lines.append(f"TOTAL,{full_report.total_params},{pconv_report.total_params},"
                 f"{full_report.total_macs},{pconv_report.total_macs},"
                 f"{full_report.total_mem_approx},{pconv_report.total_mem_approx},")
    (out_dir / "bench.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_report(args) -> int:
    values = parse_kv_file(args.spec, _NET_SCHEMA) if args.spec else {}
    spec = _load_net_spec(values)
    report: CostReport = model_cost(cost_layers(spec))
    print(report.to_table(), end="")
    if args.json_out:
        _json_dump(report.to_json_dict(), args.json_out)
    if args.csv_out:
        Path(args.csv_out).write_text(report.to_csv(), encoding="utf-8")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg, values = _load_run_config(args.config)
    if verify_mode_forced():
        cfg = replace(cfg, dtype="float64")
    elif not values.get("checked", True):
        set_checked(False)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    params, stats = train_toy(cfg)
    save_weights(params, out_dir / "weights.dkw")
    with open(out_dir / "stats.jsonl", "w", encoding="utf-8") as fh:
        for st in stats:
            fh.write(st.to_json_line() + "\n")
    print(f"trained {cfg.epochs} epochs; weights -> {out_dir / 'weights.dkw'}")
    if stats:
        print(f"final loss {stats[-1].total_loss!r}")
    return EXIT_OK


def _run_model_on_dataset(cfg: TrainConfig, values: dict, params):
    dspec = cfg.net.decode_spec(values.get("score_threshold", 0.25))
    nms_iou = values.get("nms_iou", 0.45)
    data = synth_dataset(cfg.seed, cfg.dataset_count, cfg.image_size, cfg.num_classes)
    all_dets, all_gts = [], []
    for image, targets in data:
        head, _ = net_forward(params, cfg.net, image)
        dets = nms(decode(head, dspec), nms_iou)
        all_dets.append(dets)
        all_gts.append(targets)
    return all_dets, all_gts


def cmd_eval(args) -> int:
    cfg, values = _load_run_config(args.config)
    weights_path = _require_file(args.weights, "weights file")
    params = load_weights(weights_path)
    all_dets, all_gts = _run_model_on_dataset(cfg, values, params)
    report = model_cost(cost_layers(cfg.net))
    summary, curve, per_class = evaluate(
        all_dets, all_gts,
        iou_thr=values.get("eval_iou", 0.5),
        model_size_mb=report.model_size_bytes(8) / 1e6,
        computation_macs=report.total_macs,
    )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = summary.to_json_dict()
    payload["per_class_ap"] = {str(k): v for k, v in per_class.items()}
    _json_dump(payload, out_dir / "summary.json")
    (out_dir / "pr_curve.csv").write_text(pr_curve_csv(curve), encoding="utf-8")
    print(json.dumps(payload, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg, values = _load_run_config(args.config)
    weights_path = _require_file(args.weights, "weights file")
    image_path = _require_file(args.image, "image file")
    params = load_weights(weights_path)
    image = read_image(image_path)
    orig_h, orig_w = image.h, image.w
    model_in = to_channels(image, cfg.net.in_channels)
    boxed, scale, pads = letterbox(model_in, cfg.net.image_size, cfg.net.image_size)
    head, _ = net_forward(params, cfg.net, boxed)
    dspec = cfg.net.decode_spec(values.get("score_threshold", 0.25))
    dets = nms(decode(head, dspec), values.get("nms_iou", 0.45))

    mapped = []
    for d in dets:
        raw = box_from_letterboxed(d.bbox, scale, pads)
        clamped = BBox(
            min(max(raw.x1, 0.0), orig_w), min(max(raw.y1, 0.0), orig_h),
            min(max(raw.x2, 0.0), orig_w), min(max(raw.y2, 0.0), orig_h),
        )
        mapped.append(type(d)(clamped, d.score, d.class_id))
    text = detections_to_json(mapped)
    Path(args.out).write_text(text + "\n", encoding="utf-8")
    print(text)
    if args.overlay:
        write_image(args.overlay, draw_boxes(image, [d.bbox for d in mapped]))
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="detkit",
        description="Verification-first detection toolkit (set DETKIT_VERIFY=1 "
                    "to force checked 64-bit execution)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="run finite-difference gradient suites")
    g.add_argument("--filter", default="*", help="glob over suite names")
    g.add_argument("--cases", type=int, default=100)
    g.add_argument("--seed", type=int, default=0)
    g.set_defaults(fn=cmd_gradcheck)

    b = sub.add_parser("bench", help="compare full-conv vs partial-conv cost")
    b.add_argument("--spec", default=None, help="net spec file (key = value)")
    b.add_argument("--cp-fraction", type=float, default=None, dest="cp_fraction")
    b.add_argument("--out-dir", default="bench_out")
    b.set_defaults(fn=cmd_bench)

    r = sub.add_parser("report", help="emit the cost report for one net")
    r.add_argument("--spec", default=None)
    r.add_argument("--json-out", default=None)
    r.add_argument("--csv-out", default=None)
    r.set_defaults(fn=cmd_report)

    t = sub.add_parser("train", help="train the toy detector on synthetic shapes")
    t.add_argument("--config", default=None, help="run config file (key = value)")
    t.add_argument("--out-dir", default="train_out")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate weights on the configured dataset")
    e.add_argument("--config", default=None)
    e.add_argument("--weights", required=True)
    e.add_argument("--out-dir", default="eval_out")
    e.set_defaults(fn=cmd_eval)

    d = sub.add_parser("detect", help="run detection on one PGM/PPM image")
    d.add_argument("--config", default=None)
    d.add_argument("--weights", required=True)
    d.add_argument("--image", required=True)
    d.add_argument("--out", default="detections.json")
    d.add_argument("--overlay", default=None, help="write a box overlay image here")
    d.set_defaults(fn=cmd_detect)
    return parser


def main(argv=None) -> int:
    if verify_mode_forced():
        set_checked(True)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except WeightsChecksumError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKSUM
    except WeightsVersionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VERSION
    except (WeightsTruncatedError, WeightsError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ImageFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IMAGE
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
