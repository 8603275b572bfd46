"""Command-line interface: encode, train, eval, inspect, synth.

Every command that writes artifacts emits a ``manifest.json`` with config and
dataset digests; failures print one machine-parsable ``error[code]: ...`` line
on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np

from . import body as body_mod
from . import configfile, dataset as dataset_mod, network, skeletons, training
from .encoding import encode_sequence, export_png, read_image_cache, write_image_cache
from .errors import ConfigError, F2CError
from .features import mean_bone_lengths
from .runio import RunManifest, atomic_write_text

SBU_CROP_MARGIN = 26  # pre-crop images are (input + 26) per side, e.g. 224 -> 250


def _arch_from_args(args) -> network.ArchConfig:
    if getattr(args, "arch_config", None):
        return network.load_arch_config(args.arch_config)
    return network.named_arch(getattr(args, "arch", None) or "default")


def _body_from_args(args, kind: str, joint_count: int | None = None) -> body_mod.BodyModel:
    if getattr(args, "body_config", None):
        return body_mod.load_body_config(args.body_config)
    return body_mod.body_for_kind(kind, joint_count)


def _bundled_blocklist() -> Path:
    with resources.as_file(
        resources.files("f2cskel").joinpath("data", "ntu_missing_samples.txt")
    ) as path:
        return Path(path)


# --------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seqs = skeletons.synth_generate(
        classes=args.classes,
        per_class=args.per_class,
        frames=args.frames,
        joint_count=args.joints,
        seed=args.seed,
        subjects=args.subjects,
    )
    for seq in seqs:
        skeletons.save_sequence(seq, out / f"{seq.name}.f2cs")
    manifest = RunManifest(command="synth", seed=args.seed).start()
    manifest.config_digest = configfile.config_digest(
        {
            "classes": str(args.classes),
            "per_class": str(args.per_class),
            "frames": str(args.frames),
            "joints": str(args.joints),
            "subjects": str(args.subjects),
            "seed": str(args.seed),
        }
    )
    manifest.notes["sequences"] = len(seqs)
    manifest.finish().write(out / "manifest.json")
    print(f"wrote {len(seqs)} sequences to {out}")
    return 0


# --------------------------------------------------------------------------
# encode


def _discover_ntu(root: Path) -> list[tuple[str, Path]]:
    return sorted((p.stem, p) for p in root.rglob("*.skeleton"))


def _discover_sbu(root: Path) -> list[tuple[str, int, int, Path]]:
    """(pair, action, take, path) for every nested skeleton_pos.txt."""
    found = []
    for p in sorted(root.rglob("skeleton_pos.txt")):
        parts = p.parts
        if len(parts) < 4:
            raise ConfigError(f"{p}: expected <pair>/<action>/<take>/skeleton_pos.txt layout")
        pair, action_s, take_s = parts[-4], parts[-3], parts[-2]
        try:
            found.append((pair, int(action_s), int(take_s), p))
        except ValueError:
            raise ConfigError(f"{p}: action/take directories must be numeric") from None
    return found


def _load_sequences(args, kind: str) -> list[skeletons.SkeletonSequence]:
    root = Path(args.dataset_dir)
    if not root.is_dir():
        raise ConfigError(f"dataset directory {root} does not exist", code="bad-dataset-dir")
    workers = max(1, args.threads)
    if kind == "ntu":
        entries = _discover_ntu(root)
        if not entries:
            raise ConfigError(f"no .skeleton files under {root}", code="bad-dataset-dir")

        def parse_one(entry):
            name, path = entry
            try:
                return skeletons.parse_ntu_file(path.read_bytes(), name)
            except F2CError as exc:
                raise type(exc)(f"{path}: {exc}") from None

        with ThreadPoolExecutor(max_workers=workers) as pool:
            seqs = list(pool.map(parse_one, entries))
        blocklist_path = Path(args.blocklist) if args.blocklist else _bundled_blocklist()
        blocklist = skeletons.load_blocklist(blocklist_path)
        return skeletons.filter_missing(seqs, blocklist)
    if kind == "sbu":
        entries = _discover_sbu(root)
        if not entries:
            raise ConfigError(f"no skeleton_pos.txt files under {root}", code="bad-dataset-dir")

        def parse_one(entry):
            pair, action, take, path = entry
            try:
                return skeletons.parse_sbu_file(path.read_bytes(), pair, action, take)
            except F2CError as exc:
                raise type(exc)(f"{path}: {exc}") from None

        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(parse_one, entries))
    if kind == "synth":
        paths = sorted(root.glob("*.f2cs"))
        if not paths:
            raise ConfigError(f"no .f2cs caches under {root}", code="bad-dataset-dir")
        return [skeletons.load_sequence(p) for p in paths]
    raise ConfigError(f"unknown dataset kind {kind!r}", code="bad-kind")


def cmd_encode(args) -> int:
    kind = args.kind
    arch = _arch_from_args(args)
    manifest = RunManifest(command="encode", seed=args.seed).start()

    seqs = _load_sequences(args, kind)
    joint_count = seqs[0].joint_count
    body = _body_from_args(args, kind, joint_count)
    split = skeletons.split(seqs, args.protocol, seed=args.seed, fold=args.fold)
    role = {name: "train" for name in split.train}
    role.update({name: "test" for name in split.test})

    train_seqs = [s for s in seqs if role[s.name] == "train"]
    table = mean_bone_lengths(train_seqs, body.topology)

    pair_swap = kind == "sbu" and not args.no_pair_swap
    if pair_swap:
        swapped = []
        for seq in seqs:
            sw = skeletons.SkeletonSequence(
                name=f"{seq.name}__swap",
                joints=seq.joints[:, ::-1],
                label=seq.label,
                subject_id=seq.subject_id,
                camera_id=seq.camera_id,
                setup_id=seq.setup_id,
                replication_id=seq.replication_id,
            )
            role[sw.name] = role[seq.name]
            swapped.append(sw)
        seqs = seqs + swapped

    out_h, out_w = arch.image_h, arch.image_w
    if kind == "sbu":
        out_h += SBU_CROP_MARGIN
        out_w += SBU_CROP_MARGIN

    out = Path(args.out)
    (out / dataset_mod.IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    normalize_bp = not args.no_limb_normalize_bp

    def encode_one(seq):
        images = encode_sequence(
            seq, body, table, out_h=out_h, out_w=out_w, normalize_bp=normalize_bp
        )
        write_image_cache(dataset_mod.image_path(out, seq.name), images)
        return seq.name

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        list(pool.map(encode_one, seqs))

    rows = sorted((seq.name, seq.label, role[seq.name]) for seq in seqs)
    dataset_mod.write_index(out, rows)

    table_lines = ["edge\tmean_length"]
    for (parent, child), length in zip(body.topology.edges, table.lengths):
        table_lines.append(f"{child}:{parent}\t{length!r}")
    atomic_write_text(out / "bone_table.tsv", "\n".join(table_lines) + "\n")

    if args.preview:
        preview_dir = out / "preview"
        preview_dir.mkdir(exist_ok=True)
        for name, _, _ in rows[: args.preview]:
            for img in read_image_cache(dataset_mod.image_path(out, name)):
                export_png(img, preview_dir / f"{name}.{img.basis}_{img.kind}.png")

    manifest.config_digest = configfile.config_digest(
        {
            "arch": network.arch_digest(arch),
            "kind": kind,
            "protocol": args.protocol,
            "fold": str(args.fold),
            "pair_swap": str(pair_swap),
            "normalize_bp": str(normalize_bp),
            "image_h": str(out_h),
            "image_w": str(out_w),
        }
    )
    manifest.dataset_digest = dataset_mod.dataset_digest(out)
    manifest.notes["sequences"] = len(seqs)
    manifest.notes["train"] = sum(1 for r in rows if r[2] == "train")
    manifest.notes["test"] = sum(1 for r in rows if r[2] == "test")
    if kind == "sbu":
        manifest.notes["pair_swap"] = (
            "each sequence is encoded twice, original and with subject roles swapped; "
            "with the seeded crop augmentation (crops_per_sample, default 20) this "
            "doubles the corpus, e.g. 282 sequences -> 11,280 training samples"
            if pair_swap
            else "disabled"
        )
    manifest.finish().write(out / "manifest.json")
    print(f"encoded {len(seqs)} sequences ({out_h}x{out_w}) into {out}")
    print(f"dataset digest {manifest.dataset_digest}")
    return 0


# --------------------------------------------------------------------------
# train


def cmd_train(args) -> int:
    cache_dir = Path(args.cache_dir)
    arch = _arch_from_args(args)
    cfg = training.load_train_config(args.config) if args.config else training.TrainConfig()
    overrides = {
        "base_lr": args.lr,
        "decay": args.decay,
        "epochs": args.epochs,
        "batch_size": args.batch,
        "val_fraction": args.val_fraction,
        "crops_per_sample": args.crops,
    }
    fields = {k: v for k, v in overrides.items() if v is not None}
    if args.seed is not None:
        fields["seed"] = args.seed
    if args.precision is not None:
        fields["precision"] = args.precision
    if fields:
        base = training.train_config_to_dict(cfg)
        cfg = training.TrainConfig(
            base_lr=float(fields.get("base_lr", base["base_lr"])),
            decay=float(fields.get("decay", base["decay"])),
            epochs=int(fields.get("epochs", base["epochs"])),
            batch_size=int(fields.get("batch_size", base["batch_size"])),
            seed=int(fields.get("seed", base["seed"])),
            precision=str(fields.get("precision", base["precision"])),
            val_fraction=float(fields.get("val_fraction", base["val_fraction"])),
            crops_per_sample=int(fields.get("crops_per_sample", base["crops_per_sample"])),
        )

    manifest = RunManifest(command="train", seed=cfg.seed).start()
    data = dataset_mod.load_image_dataset(cache_dir)
    train_names = [n for n, r in zip(data.names, data.roles) if r == "train"]
    result = training.train(data, train_names, cfg, arch)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = network.arch_digest(arch)
    network.save_checkpoint(out / "checkpoint.f2cp", result.params, digest)
    training.write_metrics(out / "metrics.tsv", result.metrics)
    for row in result.metrics:
        print(
            f"epoch {row.epoch:3d}  lr {row.lr:.6g}  loss {row.train_loss:.4f}"
            f"  train_acc {row.train_acc:.4f}  val_acc {row.val_acc:.4f}"
        )
    print(f"best epoch {result.best_epoch}")

    train_cfg_dict = training.train_config_to_dict(cfg)
    train_cfg_dict["arch"] = digest
    manifest.config_digest = configfile.config_digest(train_cfg_dict)
    manifest.dataset_digest = dataset_mod.dataset_digest(cache_dir)
    manifest.notes["best_epoch"] = result.best_epoch
    manifest.notes["num_classes"] = result.num_classes
    manifest.finish().write(out / "manifest.json")
    return 0


# --------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    arch = _arch_from_args(args)
    params, digest = network.load_checkpoint(args.checkpoint)
    expected = network.arch_digest(arch)
    if digest != expected:
        raise ConfigError(
            f"checkpoint was trained with a different architecture (digest {digest[:12]}..., "
            f"expected {expected[:12]}...); pass the matching --arch/--arch-config",
            code="arch-mismatch",
        )
    data = dataset_mod.load_image_dataset(args.cache_dir)
    indices = data.indices_for_role(args.split)
    if len(indices) == 0:
        raise ConfigError(f"no samples with role {args.split!r} in {args.cache_dir}")
    cfg = training.TrainConfig(seed=args.seed or 0)
    report = training.evaluate(params, arch, data, indices, cfg)
    sys.stdout.write(training.format_report_human(report))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_text(out / "report.txt", training.format_report_human(report))
        atomic_write_text(out / "report.tsv", training.format_report(report))
        manifest = RunManifest(command="eval", seed=args.seed or 0).start()
        manifest.config_digest = expected
        manifest.dataset_digest = dataset_mod.dataset_digest(args.cache_dir)
        manifest.notes["split"] = args.split
        manifest.notes["accuracy"] = report.accuracy
        manifest.finish().write(out / "manifest.json")
    return 0


# --------------------------------------------------------------------------
# inspect


def cmd_inspect(args) -> int:
    arch = _arch_from_args(args)
    print(f"arch {arch.name}")
    for label, count, dims in arch.ledger():
        dims_s = "x".join(str(d) for d in dims)
        print(f"{label} {count} {dims_s}")
    for key, count in network.param_count_table(arch, args.classes):
        print(f"params {key} {count}")
    return 0


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="f2cskel",
        description="Skeleton-image action recognition with a fine-to-coarse fusion CNN",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=None, help="run seed")
        p.add_argument("--threads", type=int, default=1, help="worker threads for encoding")
        p.add_argument("--precision", choices=["f32", "f64"], default=None)
        p.add_argument("--arch", choices=["default", "mini"], default=None)
        p.add_argument("--arch-config", help="path to an arch config file (overrides --arch)")

    p = sub.add_parser("synth", help="generate a synthetic skeleton dataset")
    add_common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--classes", type=int, default=8)
    p.add_argument("--per-class", type=int, default=8)
    p.add_argument("--frames", type=int, default=64)
    p.add_argument("--joints", type=int, default=25)
    p.add_argument("--subjects", type=int, default=1)
    p.set_defaults(func=cmd_synth, seed_default=1)

    p = sub.add_parser("encode", help="parse a dataset and encode skeleton images")
    add_common(p)
    p.add_argument("dataset_dir")
    p.add_argument("--kind", required=True, choices=["ntu", "sbu", "synth"])
    p.add_argument("--protocol", default="all", choices=["cs", "cv", "sbu-5fold", "all"])
    p.add_argument("--fold", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--blocklist", help="missing-sample blocklist (NTU); default: bundled file")
    p.add_argument("--body-config", help="override the bundled skeleton layout config")
    p.add_argument("--preview", type=int, default=0, help="write PNG previews for N sequences")
    p.add_argument("--no-pair-swap", action="store_true", help="SBU: skip subject-role swap")
    p.add_argument(
        "--no-limb-normalize-bp", action="store_true",
        help="restrict limb normalization to whole-body grids",
    )
    p.set_defaults(func=cmd_encode, seed_default=0)

    p = sub.add_parser("train", help="train on an encoded image cache")
    add_common(p)
    p.add_argument("cache_dir")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="train config file")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--val-fraction", type=float)
    p.add_argument("--crops", type=int)
    p.set_defaults(func=cmd_train, seed_default=0)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a cache split")
    add_common(p)
    p.add_argument("checkpoint")
    p.add_argument("cache_dir")
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out", help="write report files and a manifest here")
    p.set_defaults(func=cmd_eval, seed_default=0)

    p = sub.add_parser("inspect", help="print the shape ledger and parameter counts")
    add_common(p)
    p.add_argument("--classes", type=int, default=60)
    p.set_defaults(func=cmd_inspect, seed_default=0)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.seed is None:
        args.seed = getattr(args, "seed_default", 0)
    try:
        return args.func(args)
    except F2CError as exc:
        sys.stderr.write(f"error[{exc.code}]: {exc}\n")
        return 1
    except OSError as exc:
        sys.stderr.write(f"error[io]: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
