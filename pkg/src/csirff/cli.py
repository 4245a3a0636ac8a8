"""Command-line interface.

Commands: synth, augment, extract, distances, train, eval, fuse, inspect.
Machine-readable output goes to ``--out``; a one-line summary goes to stdout.

Exit codes:
    0  success
    1  unexpected internal error
    2  bad command line (argparse)
    3  invalid input value or configuration
    4  malformed data or checkpoint file
    5  file not found or not readable/writable
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_INVALID, EXIT_FORMAT, EXIT_IO = 0, 1, 2, 3, 4, 5


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _channel_types(text: str) -> list[list]:
    """``"Flat,B-LoS,C-NLoS"`` -> ``[["Flat", True], ["B", True], ["C", False]]``."""
    out = []
    for tok in (t.strip() for t in text.split(",") if t.strip()):
        tag, _, cond = tok.partition("-")
        if cond not in ("", "LoS", "NLoS"):
            raise ValueError(f"bad channel type {tok!r}")
        out.append([tag, cond != "NLoS"])
    return out


def _load_config(args):
    from .io import RunConfig

    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg.values["seed"] = args.seed
    return cfg


def _write_text(path, text: str) -> None:
    if path is None:
        return
    with open(path, "w") as fh:
        fh.write(text)


# --- commands --------------------------------------------------------------------------

def cmd_synth(args) -> str:
    from .channels import compose_filter, default_pulse_filter, flat_channel, model_spec, sample_channel
    from .core import CsiDataset, NoiseSpec, add_noise, derive_seed, plant_fingerprint
    from .io import CsirWriter

    spec = None if args.model == "Flat" else model_spec(args.model, not args.nlos, allow_extreme=args.allow_extreme)
    filt = default_pulse_filter() if not args.no_filter else None
    chan_seed = args.seed if args.channel_seed is None else args.channel_seed
    noise_snr = np.inf if args.snr is None else args.snr
    streams = args.positions * args.rx
    if args.positions > 256 or args.rx > 256:
        raise ValueError("positions and rx chains are limited to 256")
    with CsirWriter(args.out, args.devices * args.count) as writer:
        for d in range(args.devices):
            fp = plant_fingerprint(args.seed, args.sigma_f, d)
            rows = []
            for i in range(args.count):
                s = i % streams
                pos, rx = divmod(s, args.rx)
                index = i if args.fading else s
                ch = flat_channel() if spec is None else sample_channel(spec, derive_seed(chan_seed, 0x5E, d), index)
                if filt is not None:
                    ch = compose_filter(ch, filt)
                noise = NoiseSpec(noise_snr, derive_seed(args.seed, 0x2E, d, i))
                rows.append((add_noise(ch.freq_response * (1.0 + fp.deviation), noise), pos, rx, ch.tag_byte))
            csi, pos, rx, tag = zip(*rows)
            writer.write(CsiDataset(np.stack(csi), np.full(args.count, d), pos, rx, tag,
                                    np.full(args.count, noise_snr)))
    return f"synth: wrote {args.devices * args.count} records to {args.out}"


def cmd_augment(args) -> str:
    from .augment import AugmentPlan, BaseCsi, build_dataset
    from .core import denoise
    from .extraction import extract_ss
    from .io import read_csir

    cfg = _load_config(args)
    aug = dict(cfg["augment"])
    if args.types:
        aug["channel_types"] = _channel_types(args.types)
    if args.snr:
        aug["snr_grid_db"] = _floats(args.snr)
    if args.realizations:
        aug["realizations_per_type"] = args.realizations
    if args.strategy:
        aug["strategy"] = args.strategy
    window = args.window or aug["denoise_window"]
    plan = AugmentPlan.from_dict(dict(aug, base_seed=cfg["seed"]))
    data = read_csir(args.bases)
    keys = np.stack([data.device_id, data.position_id, data.rx_index], axis=1)
    bases = []
    for key in np.unique(keys, axis=0):
        idx = np.flatnonzero((keys == key).all(axis=1))
        base = denoise(list(data[idx].records()), window)
        if plan.strategy == "fingerprint":
            base = 1.0 + extract_ss(base)
        bases.append(BaseCsi(base, *map(int, key)))
    manifest = build_dataset(bases, plan, args.out)
    return f"augment: {len(bases)} bases -> {manifest['written']} records in {args.out}"


def cmd_extract(args) -> str:
    from .core import CsiDataset
    from .extraction import ExtractionConfig, extract
    from .io import read_csir, write_csir

    data = read_csir(args.input)
    cfg = ExtractionConfig(method=args.method, gate_taps=args.gate_taps, dwt_level=args.level,
                           strict=args.strict)
    fhat = np.stack([extract(c, cfg) for c in data.csi]) if len(data) else data.csi
    write_csir(args.out, CsiDataset(fhat, data.device_id, data.position_id, data.rx_index,
                                    data.channel_tag, data.snr_db))
    return f"extract: {len(data)} fingerprint estimates ({args.method}) -> {args.out}"


def cmd_distances(args) -> str:
    from .extraction import distance_study, stats_to_text
    from .io import read_csir

    data = read_csir(args.input)
    stats = distance_study(list(data.csi), list(data.device_id))
    _write_text(args.out, stats_to_text(stats, args.emit))
    intra = [s for s in stats if s.class_pair == "intra"]
    median = intra[0].median if intra else float("nan")
    return f"distances: {len(stats)} class pairs, intra-class median {median:.6g}"


def cmd_train(args) -> str:
    from .augment import split
    from .io import load_checkpoint, read_csir, save_checkpoint
    from .net import FingerprintNet
    from .training import train_stage1, train_stage2, transfer_extractor

    cfg = _load_config(args)
    t = cfg.values["train"]
    for key in ("epochs", "batch_size", "lr"):
        val = getattr(args, key)
        if val is not None:
            t["max_epochs" if key == "epochs" else key] = val
    if args.normalize_input:
        cfg.values["network"]["normalize_input"] = True
    tcfg = cfg.train_config()
    data = read_csir(args.train)
    if args.val:
        train, val = data, read_csir(args.val)
    else:
        parts = split(data, tuple(t["split"]), cfg["seed"])
        train, val = data[parts.train], data[parts.val]
    num_classes = args.num_classes or int(max(train.device_id.max(), val.device_id.max())) + 1
    ncfg = cfg.network_config(num_classes)
    dtype = np.float32 if tcfg.float32 else np.float64
    net = FingerprintNet(ncfg, seed=tcfg.seed, dtype=dtype)
    if args.init:
        src, _ = load_checkpoint(args.init)
        transfer_extractor(src, net)
    log_rows = []
    stages = {"1": (1,), "2": (2,), "both": (1, 2)}[args.stage]
    if args.stage == "both" and not t["use_supcon"]:
        stages = (2,)
    for stage in stages:
        fn = train_stage1 if stage == 1 else train_stage2
        log_rows += fn(net, train, val, tcfg).log
    save_checkpoint(args.out, net, {"stages": list(stages), "train": tcfg.to_dict()})
    if args.log:
        _write_text(args.log, "".join(json.dumps(r, sort_keys=True) + "\n" for r in log_rows))
    last = log_rows[-1] if log_rows else {}
    return f"train: stages {list(stages)}, {len(log_rows)} epochs, last val loss {last.get('val_loss', float('nan')):.4f} -> {args.out}"


def cmd_eval(args) -> str:
    from .fusion import SLICE_KEYS, evaluate
    from .io import load_checkpoint, read_csir

    model, _ = load_checkpoint(args.ckpt)
    data = read_csir(args.data)
    fusion = "ap" if args.fusion == "none" else args.fusion
    n_csi, n_rx = (1, 1) if args.fusion == "none" else (args.n_csi, args.n_rx)
    report = evaluate(model, data, fusion, n_csi, n_rx, SLICE_KEYS)
    _write_text(args.out, report.to_csv() if args.emit == "csv" else report.to_json() + "\n")
    return "eval: " + report.summary()


def cmd_fuse(args) -> str:
    from .fusion import FusionGroup, fuse

    probs = np.load(args.probs) if args.probs.endswith(".npy") else np.loadtxt(args.probs, delimiter=",", ndmin=2)
    decision = fuse(FusionGroup(probs), args.method)
    out = {"method": args.method, "n_c": int(np.atleast_2d(probs).shape[0]), "label": decision.label,
           "probs": decision.probs.tolist()}
    _write_text(args.out, json.dumps(out, indent=2) + "\n")
    return f"fuse: {args.method} over {out['n_c']} decisions -> class {decision.label}"


def cmd_inspect(args) -> str:
    from .channels import tag_name
    from .io import CKPT_MAGIC, MAGIC, RunConfig, iter_csir, load_checkpoint, read_header

    with open(args.input, "rb") as fh:
        head = fh.read(len(CKPT_MAGIC))
    if head.startswith(MAGIC):
        count = read_header(args.input)
        devices, tags, snrs = {}, {}, {}
        for chunk in iter_csir(args.input):
            for col, acc, fmt in ((chunk.device_id, devices, int), (chunk.channel_tag, tags, tag_name),
                                  (chunk.snr_db, snrs, lambda v: f"{v:g}")):
                vals, counts = np.unique(col, return_counts=True)
                for v, c in zip(vals, counts):
                    key = str(fmt(v))
                    acc[key] = acc.get(key, 0) + int(c)
        info = {"kind": "csir", "records": count, "devices": devices, "channel_tags": tags, "snr_db": snrs}
        summary = f"inspect: CSIR file, {count} records, {len(devices)} devices"
    elif head == CKPT_MAGIC:
        model, manifest = load_checkpoint(args.input)
        info = dict(manifest)
        if manifest["kind"] == "net":
            info["parameters"] = model.num_parameters()
        summary = f"inspect: {manifest['kind']} checkpoint"
    else:
        cfg = RunConfig.load(args.input)
        info = {"kind": "config", "config": json.loads(cfg.serialize())}
        summary = "inspect: valid run configuration"
    _write_text(args.out, json.dumps(info, indent=2, sort_keys=True) + "\n")
    return summary


# --- parser ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="csirff", description="CSI-based RF fingerprinting toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="synthesize CSI records of planted devices")
    s.add_argument("--devices", type=int, default=5)
    s.add_argument("--count", type=int, default=1000, help="records per device")
    s.add_argument("--model", default="D", help="Flat, B, C, D or F")
    s.add_argument("--nlos", action="store_true")
    s.add_argument("--allow-extreme", action="store_true", help="permit model F")
    s.add_argument("--snr", type=float, default=None, help="SNR in dB (omit for noiseless)")
    s.add_argument("--sigma-f", type=float, default=0.02)
    s.add_argument("--positions", type=int, default=1)
    s.add_argument("--rx", type=int, default=1, help="receive chains per position")
    s.add_argument("--fading", action="store_true", help="fresh channel for every record")
    s.add_argument("--no-filter", action="store_true", help="omit the pulse-shaping filter")
    s.add_argument("--channel-seed", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("augment", help="augment denoised bases over channel and SNR grids")
    s.add_argument("--bases", required=True, help="CSIR file of repeated base measurements")
    s.add_argument("--config")
    s.add_argument("--types", help="e.g. Flat,B-LoS,B-NLoS,C-LoS,C-NLoS")
    s.add_argument("--snr", help="comma-separated SNR grid in dB")
    s.add_argument("--realizations", type=int)
    s.add_argument("--strategy", choices=("denoised", "fingerprint"))
    s.add_argument("--window", type=int, help="records averaged per base")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("extract", help="estimate fingerprints with SS or DWT")
    s.add_argument("--input", required=True)
    s.add_argument("--method", choices=("SS", "DWT"), default="SS")
    s.add_argument("--gate-taps", type=int, default=8)
    s.add_argument("--level", type=int, default=3)
    s.add_argument("--strict", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_extract)

    s = sub.add_parser("distances", help="intra/inter-class fingerprint distance statistics")
    s.add_argument("--input", required=True)
    s.add_argument("--emit", choices=("json", "csv"), default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_distances)

    s = sub.add_parser("train", help="train stage 1, stage 2 or both")
    s.add_argument("--train", required=True)
    s.add_argument("--val")
    s.add_argument("--stage", choices=("1", "2", "both"), default="both")
    s.add_argument("--init", help="checkpoint whose extractor initializes the network")
    s.add_argument("--config")
    s.add_argument("--num-classes", type=int)
    s.add_argument("--epochs", type=int)
    s.add_argument("--batch-size", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--normalize-input", action="store_true")
    s.add_argument("--seed", type=int)
    s.add_argument("--log", help="JSON-lines epoch log")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint with optional fusion")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--fusion", choices=("none", "ap", "mv", "bc", "data"), default="none")
    s.add_argument("--n-csi", type=int, default=1)
    s.add_argument("--n-rx", type=int, default=1)
    s.add_argument("--emit", choices=("json", "csv"), default="json")
    s.add_argument("--out")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("fuse", help="fuse a matrix of per-measurement probabilities")
    s.add_argument("--probs", required=True, help=".npy or CSV, one row per measurement")
    s.add_argument("--method", choices=("ap", "mv", "bc"), default="ap")
    s.add_argument("--out")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("inspect", help="summarize a CSIR file, checkpoint or config")
    s.add_argument("--input", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    from .core import ValidationError
    from .io import CsirError

    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:  # argparse exits on --help and on usage errors
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        print(args.func(args))
    except CsirError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (ValidationError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        print(f"error: internal: {exc!r}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
