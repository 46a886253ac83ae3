"""Command-line entry point wiring the library into reproducible experiments.

Exit codes: 0 success, 2 usage error, 3 data/format error, 4 verification
failure. Every command prints the hash of its resolved configuration, and
every output artifact records that hash (reports and manifests inline,
volumes via a JSON sidecar).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import phantom, verify
from .estimator import (CheckpointFormatError, TrainableEstimator, TrainingConfig,
                        load_checkpoint, save_checkpoint, train)
from .metrics import evaluate
from .sampler import SamplerConfig, ista_sample, naive_sample
from .schedule import ScheduleParams, build_schedule
from .style_key import StyleKey, average_style_keys, compute_style_key
from .volume import (Volume, VolumeFormatError, load_volume, min_max_normalize,
                     reslice, save_pgm, save_volume)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_VERIFY = 4


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def _announce(name: str, config: dict) -> str:
    h = config_hash(config)
    seed = config.get("seed", "-")
    print(f"[{name}] config hash {h} seed {seed}")
    return h


def _write_sidecar(volume_path: Path, payload: dict) -> None:
    volume_path.with_suffix(volume_path.suffix + ".json").write_text(
        json.dumps(payload, sort_keys=True, indent=2))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# experiment config files


DEFAULT_CONFIG = {
    "schedule": {"T": 1000, "s": 1.0},
    "data": {"manifest": None},
    "train": {"batch_size": 16, "iterations": 2000, "lr": 1e-4, "seed": 0,
              "weighted_loss": False, "use_style": True, "bins": 128,
              "half_width": 1, "base_width": 32},
    "sample": {"n_steps": 100, "ista": False, "M": 1, "lambda": 0.5,
               "threads": 1},
    "eval": {"out": None},
}


def load_experiment_config(path: str | None) -> dict:
    """Config file merged over documented defaults; unknown keys rejected."""
    merged = json.loads(json.dumps(DEFAULT_CONFIG))
    if path is None:
        return merged
    user = json.loads(Path(path).read_text())
    for section, values in user.items():
        if section not in merged:
            raise ValueError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise ValueError(f"config section {section!r} must be an object")
        for k, v in values.items():
            if k not in merged[section]:
                raise ValueError(f"unknown config key {section}.{k}")
            merged[section][k] = v
    return merged


def _load_manifest(path: str) -> tuple[dict, Path]:
    p = Path(path)
    manifest = json.loads(p.read_text())
    return manifest, p.parent


def _load_dataset(manifest: dict, root: Path):
    data = []
    for item in manifest["items"]:
        source = load_volume(root / item["source"])
        target = load_volume(root / item["target"])
        key = StyleKey.from_json((root / item["style_key"]).read_text())
        data.append((source, target, key))
    return data


def _resolve_style_key(spec: str, bins: int, manifest_path: str | None) -> StyleKey:
    if spec == "avg":
        if manifest_path is None:
            raise ValueError("--style-key avg requires --manifest")
        manifest, root = _load_manifest(manifest_path)
        keys = [StyleKey.from_json((root / item["style_key"]).read_text())
                for item in manifest["items"]]
        return average_style_keys(keys)
    p = Path(spec)
    if p.suffix == ".rvol":
        return compute_style_key(min_max_normalize(load_volume(p)), bins)
    return StyleKey.from_json(p.read_text())


# ---------------------------------------------------------------------------
# commands


def cmd_gen_phantoms(args) -> int:
    config = {"n": args.n, "size": args.size, "n_shells": args.n_shells,
              "noise_sigma": args.noise_sigma, "seed": args.seed,
              "style_seed": args.style_seed}
    h = _announce("gen-phantoms", config)
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        print(f"error: output directory {out} is non-empty; "
              "pass --force to overwrite", file=sys.stderr)
        return EXIT_DATA
    out.mkdir(parents=True, exist_ok=True)

    base = phantom.PhantomConfig(size=tuple(args.size), n_shells=args.n_shells,
                                 noise_sigma=args.noise_sigma, seed=args.seed)
    items = []
    for k, (source, target, key, cfg) in enumerate(
            phantom.generate_dataset(args.n, base, args.style_seed)):
        src_name, tgt_name, key_name = (f"src_{k:03d}.rvol", f"tgt_{k:03d}.rvol",
                                        f"key_{k:03d}.json")
        save_volume(source, out / src_name)
        save_volume(target, out / tgt_name)
        (out / key_name).write_text(key.to_json())
        items.append({"index": k, "source": src_name, "target": tgt_name,
                      "style_key": key_name, "geometry_seed": cfg.seed,
                      "style": {"gamma": cfg.style.gamma,
                                "contrast": cfg.style.contrast,
                                "offset": cfg.style.offset},
                      "source_sha256": _sha256(out / src_name),
                      "target_sha256": _sha256(out / tgt_name)})
    manifest = {"config_hash": h, "seed": args.seed,
                "style_seed": args.style_seed, "size": list(args.size),
                "n_shells": args.n_shells, "noise_sigma": args.noise_sigma,
                "items": items}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2))
    print(f"wrote {args.n} pairs to {out}")
    return EXIT_OK


def cmd_verify_math(args) -> int:
    config = {"T": args.T, "s": args.s, "corrupt_delta_cond": args.corrupt_delta_cond}
    _announce("verify-math", config)
    report = verify.run_battery(ScheduleParams(T=args.T, s=args.s),
                                corrupt_delta_cond=args.corrupt_delta_cond)
    for c in report.checks:
        status = "pass" if c.passed else "FAIL"
        print(f"  {status}  {c.name}: error {c.measured_error:.3e} "
              f"(tolerance {c.tolerance:.0e})")
    if args.json:
        Path(args.json).write_text(report.to_json())
    if not report.all_passed:
        print("verification FAILED", file=sys.stderr)
        return EXIT_VERIFY
    print("all checks passed")
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_experiment_config(args.config)
    if args.manifest:
        config["data"]["manifest"] = args.manifest
    if args.iterations is not None:
        config["train"]["iterations"] = args.iterations
    if args.seed is not None:
        config["train"]["seed"] = args.seed
    if args.no_skc:
        config["train"]["use_style"] = False
    if config["data"]["manifest"] is None:
        raise ValueError("a dataset manifest is required (--manifest or config)")
    h = _announce("train", {**config, "seed": config["train"]["seed"]})

    manifest, root = _load_manifest(config["data"]["manifest"])
    dataset = _load_dataset(manifest, root)
    tc = config["train"]
    schedule = build_schedule(ScheduleParams(T=config["schedule"]["T"],
                                             s=config["schedule"]["s"]))
    est = TrainableEstimator(bins=tc["bins"], half_width=tc["half_width"],
                             base_width=tc["base_width"],
                             use_style=tc["use_style"], seed=tc["seed"])
    print(f"model parameters: {est.parameter_count()}")
    losses = train(est, dataset, schedule,
                   TrainingConfig(batch_size=tc["batch_size"],
                                  iterations=tc["iterations"], lr=tc["lr"],
                                  seed=tc["seed"],
                                  weighted_loss=tc["weighted_loss"]),
                   progress=lambda s, l: print(f"  step {s}: loss {l:.5f}"))
    save_checkpoint(est, args.out,
                    meta={"config_hash": h, "seed": tc["seed"],
                          "schedule": config["schedule"],
                          "final_loss": losses[-1] if losses else None})
    if args.loss_curve:
        Path(args.loss_curve).write_text(json.dumps(
            {"config_hash": h, "losses": losses}))
    if losses:
        print(f"final loss {losses[-1]:.5f} after {len(losses)} iterations")
    return EXIT_OK


def cmd_translate(args) -> int:
    config = {"input": args.input, "checkpoint": args.checkpoint,
              "style_key": args.style_key, "steps": args.steps,
              "ista": args.ista, "naive": args.naive, "M": args.M,
              "lambda": args.lam, "threads": args.threads, "T": args.T,
              "s": args.s, "seed": 0}
    h = _announce("translate", config)
    est, meta = load_checkpoint(args.checkpoint)
    schedule = build_schedule(ScheduleParams(T=args.T, s=args.s))
    source = load_volume(args.input)
    key = _resolve_style_key(args.style_key, est.bins, args.manifest)
    sc = SamplerConfig(n_steps=args.steps, ista=args.ista, M=args.M,
                       lam=args.lam, threads=args.threads)
    if args.naive:
        out = naive_sample(source, key, sc, est, schedule)
        diag = {}
    elif args.ista:
        out, diag = ista_sample(source, key, sc, est, schedule)
    else:
        out, diag = ista_sample(source, key,
                                SamplerConfig(n_steps=args.steps, M=0,
                                              threads=args.threads),
                                est, schedule)
    out_path = Path(args.out)
    save_volume(out, out_path)
    _write_sidecar(out_path, {"config_hash": h, "checkpoint_meta": meta,
                              "mode": ("naive" if args.naive else
                                       "ista" if args.ista else "cp-only")})
    if args.diagnostics:
        Path(args.diagnostics).write_text(json.dumps(
            {"config_hash": h, **diag}))
    print(f"wrote {out_path}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = {"pred": args.pred, "target": args.target,
              "style_key": args.style_key}
    h = _announce("evaluate", config)
    pred = load_volume(args.pred)
    target = load_volume(args.target)
    key = _resolve_style_key(args.style_key, args.bins, args.manifest)
    report = evaluate(pred, target, key)
    payload = json.loads(report.to_json())
    payload["config_hash"] = h
    text = json.dumps(payload, sort_keys=True, indent=2)
    if args.out:
        Path(args.out).write_text(text)
    print(text)
    return EXIT_OK


def cmd_style_key(args) -> int:
    if args.sk_command == "extract":
        config = {"volume": args.volume, "bins": args.bins}
        _announce("style-key extract", config)
        vol = min_max_normalize(load_volume(args.volume))
        Path(args.out).write_text(compute_style_key(vol, args.bins).to_json())
    else:
        config = {"keys": args.keys}
        _announce("style-key average", config)
        keys = [StyleKey.from_json(Path(p).read_text()) for p in args.keys]
        Path(args.out).write_text(average_style_keys(keys).to_json())
    print(f"wrote {args.out}")
    return EXIT_OK


def cmd_export_slices(args) -> int:
    config = {"input": args.input, "axis": args.axis, "every": args.every}
    _announce("export-slices", config)
    vol = load_volume(args.input)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    slices = reslice(vol, args.axis)
    lo, hi = float(slices.min()), float(slices.max())
    span = hi - lo if hi > lo else 1.0
    n = 0
    for idx in range(0, slices.shape[0], args.every):
        save_pgm((slices[idx] - lo) / span, out / f"{args.axis}_{idx:03d}.pgm")
        n += 1
    print(f"wrote {n} slices to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="slicebridge",
                                description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-phantoms", help="generate a paired phantom dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--size", type=int, nargs=3, default=[32, 32, 32])
    g.add_argument("--n-shells", type=int, default=3)
    g.add_argument("--noise-sigma", type=float, default=0.02)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--style-seed", type=int, default=1)
    g.add_argument("--force", action="store_true")
    g.set_defaults(func=cmd_gen_phantoms)

    v = sub.add_parser("verify-math", help="run the analytic verification battery")
    v.add_argument("--T", type=int, default=1000)
    v.add_argument("--s", type=float, default=1.0)
    v.add_argument("--json", help="write the report as JSON")
    v.add_argument("--corrupt-delta-cond", action="store_true",
                   help=argparse.SUPPRESS)  # negative-control test hook
    v.set_defaults(func=cmd_verify_math)

    t = sub.add_parser("train", help="train the noise estimator")
    t.add_argument("--config", help="experiment config JSON")
    t.add_argument("--manifest", help="dataset manifest (overrides config)")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--no-skc", action="store_true",
                   help="train without style-key conditioning")
    t.add_argument("--loss-curve", help="write the loss curve as JSON")
    t.set_defaults(func=cmd_train)

    tr = sub.add_parser("translate", help="translate a source volume")
    tr.add_argument("--input", required=True)
    tr.add_argument("--checkpoint", required=True)
    tr.add_argument("--style-key", default="avg",
                    help='"avg", a key JSON, or a reference .rvol volume')
    tr.add_argument("--manifest", help="needed for --style-key avg")
    tr.add_argument("--steps", type=int, default=100)
    tr.add_argument("--ista", action="store_true")
    tr.add_argument("--naive", action="store_true",
                    help="independent per-slice sampling baseline")
    tr.add_argument("--M", type=int, default=1)
    tr.add_argument("--lambda", dest="lam", type=float, default=0.5)
    tr.add_argument("--threads", type=int, default=1)
    tr.add_argument("--T", type=int, default=1000)
    tr.add_argument("--s", type=float, default=1.0)
    tr.add_argument("--out", required=True)
    tr.add_argument("--diagnostics", help="write per-step diagnostics JSON")
    tr.set_defaults(func=cmd_translate)

    e = sub.add_parser("evaluate", help="metric report for a translated volume")
    e.add_argument("--pred", required=True)
    e.add_argument("--target", required=True)
    e.add_argument("--style-key", required=True)
    e.add_argument("--manifest")
    e.add_argument("--bins", type=int, default=128)
    e.add_argument("--out")
    e.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("style-key", help="extract or average style keys")
    ssub = s.add_subparsers(dest="sk_command", required=True)
    se = ssub.add_parser("extract")
    se.add_argument("--volume", required=True)
    se.add_argument("--bins", type=int, default=128)
    se.add_argument("--out", required=True)
    sa = ssub.add_parser("average")
    sa.add_argument("keys", nargs="+")
    sa.add_argument("--out", required=True)
    s.set_defaults(func=cmd_style_key)

    x = sub.add_parser("export-slices", help="export PGM slice images")
    x.add_argument("--input", required=True)
    x.add_argument("--axis", choices=["z", "y", "x"], default="z")
    x.add_argument("--every", type=int, default=1)
    x.add_argument("--out-dir", required=True)
    x.set_defaults(func=cmd_export_slices)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (VolumeFormatError, CheckpointFormatError, FileNotFoundError,
            json.JSONDecodeError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ValueError, IndexError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
