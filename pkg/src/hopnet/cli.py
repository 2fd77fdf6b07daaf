"""Command-line entry point: ``hopnet {generate,train,rollout,eval,config}``.

Dataset manifests are JSON documents::

    {"format": "hopnet-manifest", "version": 1,
     "config": {...full config snapshot...},
     "trajectories": [{"path": "train/0000.traj", "split": "train",
                       "seed": 0, "frames": 66, "objects": 4,
                       "sha256": "..."}, ...]}

Paths are relative to the manifest. Loading verifies every checksum.
Rollout scene exports are CSV files with one row per (frame, object):
``frame,object_id,x,y,z,qw,qx,qy,qz``.
"""

import argparse
import csv
import json
import os
import sys
import warnings
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import checkpoint, engine, evaluate, formats
from . import trajectory as trajectory_io
from .config import Config
from .errors import ChecksumMismatch, ConfigError, FormatError, HopnetError, IoError
from .sim import simulate_trajectory

MANIFEST_FORMAT = "hopnet-manifest"
MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
TEST_SEED_OFFSET = 1_000_000


# ---------------------------------------------------------------------------
# helpers


def resolve_threads(requested):
    """``--threads`` wins, then ``HOPNET_THREADS``, then 1."""
    if requested is not None:
        value = requested
    else:
        raw = os.environ.get("HOPNET_THREADS", "").strip()
        try:
            value = int(raw) if raw else 1
        except ValueError:
            raise ConfigError(f"HOPNET_THREADS must be an integer, got {raw!r}") from None
    if value < 1:
        raise ConfigError("thread count must be at least 1")
    return value


def _parallel_map(fn, items, threads):
    """Map in worker processes; results come back in input order."""
    if threads <= 1 or len(items) <= 1:
        return [fn(*item) for item in items]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, *zip(*items)))


def _read_bytes(path):
    try:
        return formats.read_file(path)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from None


def _write_bytes(path, blob):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        return formats.write_file(path, blob)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from None


def _write_text(path, text):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from None


def load_config(path):
    if path is None:
        return Config()
    try:
        return Config.load(path)
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc.strerror or exc}") from None


def load_trajectory(path):
    return trajectory_io.from_bytes(_read_bytes(path))


# ---------------------------------------------------------------------------
# manifests


def _split_seeds(dataset):
    train = [("train", dataset.seed + i) for i in range(dataset.num_train)]
    test = [("test", dataset.seed + TEST_SEED_OFFSET + i) for i in range(dataset.num_test)]
    return train + test


def _simulate_bytes(seed, dataset):
    return trajectory_io.to_bytes(simulate_trajectory(seed, dataset))


def generate_dataset(config, out_dir, threads=1):
    """Simulate every train/test trajectory and write them with a manifest."""
    out_dir = Path(out_dir)
    jobs = _split_seeds(config.dataset)
    blobs = _parallel_map(_simulate_bytes, [(seed, config.dataset) for _, seed in jobs], threads)
    entries = []
    counters = {"train": 0, "test": 0}
    for (split, seed), blob in zip(jobs, blobs):
        rel = f"{split}/{counters[split]:04d}.traj"
        counters[split] += 1
        digest = _write_bytes(out_dir / rel, blob)
        traj = trajectory_io.from_bytes(blob)
        entries.append(
            {
                "path": rel,
                "split": split,
                "seed": seed,
                "frames": traj.num_frames,
                "objects": traj.num_objects,
                "sha256": digest,
            }
        )
    manifest = {
        "format": MANIFEST_FORMAT,
        "version": MANIFEST_VERSION,
        "config": config.to_dict(),
        "trajectories": entries,
    }
    _write_text(out_dir / MANIFEST_NAME, json.dumps(manifest, indent=2) + "\n")
    return manifest


def _manifest_path(path):
    path = Path(path)
    return path / MANIFEST_NAME if path.is_dir() else path


def load_manifest(path):
    """Parse a manifest and check every listed file against its checksum."""
    path = _manifest_path(path)
    try:
        manifest = json.loads(_read_bytes(path).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path} is not a JSON manifest: {exc}") from None
    if manifest.get("format") != MANIFEST_FORMAT:
        raise FormatError(f"{path} is not a dataset manifest")
    if manifest.get("version", 0) > MANIFEST_VERSION:
        raise FormatError(f"manifest version {manifest.get('version')} is newer than supported {MANIFEST_VERSION}")
    for entry in manifest["trajectories"]:
        digest = formats.sha256_bytes(_read_bytes(path.parent / entry["path"]))
        if digest != entry["sha256"]:
            raise ChecksumMismatch(f"{entry['path']}: checksum {digest} does not match manifest {entry['sha256']}")
    return manifest


def manifest_trajectories(path, split=None):
    path = _manifest_path(path)
    manifest = load_manifest(path)
    return [
        load_trajectory(path.parent / e["path"])
        for e in manifest["trajectories"]
        if split is None or e["split"] == split
    ]


# ---------------------------------------------------------------------------
# edits and exports


def _parse_id_value(text, flag, size=None):
    try:
        ident, value = text.split(":", 1)
        numbers = [float(v) for v in value.split(",")]
        ident = int(ident)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{flag} expects ID:VALUE, got {text!r}") from None
    if size is not None and len(numbers) != size:
        raise argparse.ArgumentTypeError(f"{flag} expects {size} comma-separated numbers, got {text!r}")
    return ident, numbers


def mass_edit(text):
    ident, numbers = _parse_id_value(text, "--set-mass", 1)
    return evaluate.SetMass(ident, numbers[0])


def velocity_edit(text):
    ident, numbers = _parse_id_value(text, "--set-velocity", 3)
    return evaluate.SetVelocity(ident, tuple(numbers))


def export_poses(path, traj):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "object_id", "x", "y", "z", "qw", "qx", "qy", "qz"])
            for t in range(traj.num_frames):
                for k, oid in enumerate(traj.object_ids):
                    writer.writerow(
                        [t, oid] + [repr(float(v)) for v in traj.positions[t, k]]
                        + [repr(float(v)) for v in traj.quaternions[t, k]]
                    )
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror or exc}") from None


# ---------------------------------------------------------------------------
# commands


def cmd_config(args):
    text = Config().dump() if args.dump_defaults else load_config(args.config).dump()
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


def cmd_generate(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.dataset.seed = args.seed
    manifest = generate_dataset(config, args.out, resolve_threads(args.threads))
    print(f"wrote {len(manifest['trajectories'])} trajectories to {args.out}")
    return 0


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config.model.seed = args.seed
        config.training.seed = args.seed
    resolve_threads(args.threads)
    trajectories = manifest_trajectories(args.dataset, split="train")
    if not trajectories:
        raise ConfigError("dataset has no training trajectories")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out}: {exc.strerror or exc}") from None

    def report(rec):
        print(json.dumps(rec), flush=True)

    params, log = engine.train(trajectories, config, out_dir=out, progress=report)
    _write_bytes(out / "model.ckpt", checkpoint.to_bytes(params, {"step": log.steps}))
    try:
        log.write(out / "log.jsonl")
    except OSError as exc:
        raise IoError(f"cannot write log: {exc.strerror or exc}") from None
    _write_text(out / "config.yaml", config.dump())
    print(json.dumps(log.summary()))
    return 0


def cmd_rollout(args):
    resolve_threads(args.threads)
    params, _ = checkpoint.from_bytes(_read_bytes(args.checkpoint))
    initial = load_trajectory(args.trajectory)
    edits = [evaluate.RemoveObject(i) for i in args.remove_object]
    edits += list(args.set_mass) + list(args.set_velocity)
    if edits:
        initial = evaluate.apply_counterfactuals(initial, edits)
    result = engine.rollout(initial, params, horizon=args.horizon)
    predicted = result.to_trajectory()
    _write_bytes(args.out, trajectory_io.to_bytes(predicted))
    export = args.export or str(Path(args.out).with_suffix(".poses.csv"))
    export_poses(export, predicted)
    print(f"wrote {predicted.num_frames} frames to {args.out} and {export}")
    return 0


def cmd_eval(args):
    config = load_config(args.config)
    pred = load_trajectory(args.pred)
    truth = load_trajectory(args.truth)
    horizons = args.horizon or list(config.evaluation.horizons)
    mode = args.metric_mode or config.evaluation.metric_mode
    report = evaluate.metric_report(
        pred, truth, horizons, mode, dataset_id=str(args.truth), checkpoint_id=str(args.pred)
    )
    text = json.dumps(report, indent=2) + "\n"
    if args.out:
        _write_text(args.out, text)
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# parser


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _add_threads(p):
    p.add_argument(
        "--threads", type=_positive_int, metavar="N",
        help="worker processes (default: $HOPNET_THREADS, else 1); output does not depend on it",
    )


def build_parser():
    parser = argparse.ArgumentParser(prog="hopnet", description="Learned rigid-body collision dynamics.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("generate", help="simulate a dataset", description="Simulate train/test trajectories.")
    p.add_argument("--config", metavar="PATH", help="YAML config file (default: built-in defaults)")
    p.add_argument("--seed", type=int, metavar="N", help="override dataset.seed")
    p.add_argument("--out", required=True, metavar="PATH", help="output directory")
    _add_threads(p)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model", description="Train on the train split of a dataset.")
    p.add_argument("--config", metavar="PATH", help="YAML config file (default: built-in defaults)")
    p.add_argument("--dataset", required=True, metavar="PATH", help="dataset directory or manifest file")
    p.add_argument("--seed", type=int, metavar="N", help="override model.seed and training.seed")
    p.add_argument("--out", required=True, metavar="PATH", help="output directory for checkpoints and log")
    _add_threads(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("rollout", help="roll a model forward", description="Autoregressive rollout from two frames.")
    p.add_argument("--checkpoint", required=True, metavar="PATH", help="model checkpoint file")
    p.add_argument("--trajectory", required=True, metavar="PATH", help="trajectory supplying frames 0 and 1")
    p.add_argument("--horizon", type=_positive_int, default=50, metavar="N", help="frames to predict (default: 50)")
    p.add_argument("--out", required=True, metavar="PATH", help="predicted trajectory file")
    p.add_argument("--export", metavar="PATH", help="pose CSV (default: OUT with .poses.csv suffix)")
    p.add_argument(
        "--remove-object", type=int, action="append", default=[], metavar="ID", help="remove an object (repeatable)"
    )
    p.add_argument(
        "--set-mass", type=mass_edit, action="append", default=[], metavar="ID:V", help="set an object's mass in kg"
    )
    p.add_argument(
        "--set-velocity", type=velocity_edit, action="append", default=[], metavar="ID:X,Y,Z",
        help="set an object's velocity in m/step",
    )
    _add_threads(p)
    p.set_defaults(func=cmd_rollout)

    p = sub.add_parser("eval", help="score a predicted trajectory", description="Position and orientation errors.")
    p.add_argument("--pred", required=True, metavar="PATH", help="predicted trajectory file")
    p.add_argument("--truth", required=True, metavar="PATH", help="ground-truth trajectory file")
    p.add_argument("--config", metavar="PATH", help="YAML config supplying default horizons and metric mode")
    p.add_argument(
        "--horizon", type=_positive_int, action="append", metavar="N", help="evaluation horizon (repeatable)"
    )
    p.add_argument("--metric-mode", choices=("paper", "squared"), help="orientation error convention")
    p.add_argument("--out", metavar="PATH", help="write the JSON report here instead of stdout")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("config", help="print a configuration", description="Print a resolved configuration as YAML.")
    p.add_argument("--dump-defaults", action="store_true", help="print every default value")
    p.add_argument("--config", metavar="PATH", help="YAML config file to resolve against the defaults")
    p.add_argument("--out", metavar="PATH", help="write here instead of stdout")
    p.set_defaults(func=cmd_config)
    return parser


def _show_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


def main(argv=None):
    args = build_parser().parse_args(argv)
    previous = warnings.showwarning
    warnings.showwarning = _show_warning
    try:
        return args.func(args)
    except HopnetError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    finally:
        warnings.showwarning = previous


if __name__ == "__main__":
    sys.exit(main())
