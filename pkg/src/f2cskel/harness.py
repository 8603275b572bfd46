"""Desk-scale experiment harnesses shared by scripts and the acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import dataset as dataset_mod
from . import skeletons, training
from .body import body_for_kind
from .encoding import encode_sequence, write_image_cache
from .features import mean_bone_lengths
from .network import ArchConfig, default_arch, mini_arch


def encode_synthetic_cache(
    out_dir: str | Path,
    arch: ArchConfig,
    classes: int = 8,
    per_class: int = 8,
    frames: int = 64,
    joints: int = 25,
    seed: int = 1,
    protocol: str = "all",
) -> dataset_mod.ImageDataset:
    """Generate, split, and encode a synthetic dataset into a cache directory."""
    out = Path(out_dir)
    seqs = skeletons.synth_generate(classes, per_class, frames, joints, seed)
    body = body_for_kind("synth", joints)
    sp = skeletons.split(seqs, protocol)
    role = {n: "train" for n in sp.train}
    role.update({n: "test" for n in sp.test})
    table = mean_bone_lengths([s for s in seqs if role[s.name] == "train"], body.topology)
    (out / dataset_mod.IMAGES_DIR).mkdir(parents=True, exist_ok=True)
    for seq in seqs:
        images = encode_sequence(seq, body, table, out_h=arch.image_h, out_w=arch.image_w)
        write_image_cache(dataset_mod.image_path(out, seq.name), images)
    dataset_mod.write_index(out, sorted((s.name, s.label, role[s.name]) for s in seqs))
    return dataset_mod.load_image_dataset(out)


@dataclass
class OverfitResult:
    seed: int
    best_train_acc: float
    reached_epoch: int  # first epoch with train_acc >= target, -1 if never


def run_overfit(
    workdir: str | Path,
    train_seeds=(0, 1, 2, 3, 4),
    dataset_seed: int = 1,
    epochs: int = 50,
    lr: float = 1e-3,
    decay: float = 0.95,
    target: float = 0.95,
    batch_size: int = 1,  # 64-sample set: small batches buy enough Adam steps
    verbose: bool = False,
) -> list[OverfitResult]:
    """Overfit the mini network on the 8-class synthetic set, one run per seed."""
    arch = mini_arch()
    data = encode_synthetic_cache(Path(workdir) / "cache", arch, seed=dataset_seed)
    results = []
    for seed in train_seeds:
        cfg = training.TrainConfig(
            base_lr=lr, decay=decay, epochs=epochs, batch_size=batch_size, seed=seed
        )
        result = training.train(data, list(data.names), cfg, arch)
        accs = [row.train_acc for row in result.metrics]
        reached = next((i for i, a in enumerate(accs) if a >= target), -1)
        results.append(OverfitResult(seed, max(accs), reached))
        if verbose:
            print(
                f"seed {seed}: best train_acc {max(accs):.3f}"
                + (f", target hit at epoch {reached}" if reached >= 0 else ", target missed")
            )
    return results


@dataclass
class SmokeResult:
    losses: list[float]
    val_accs: list[float]
    finite: bool
    val_above_chance: bool


def run_sbu_smoke(
    corpus_dir: str | Path,
    workdir: str | Path,
    arch: ArchConfig,
    fold: int = 0,
    epochs: int = 3,
    batch_size: int = 8,
    crops: int = 20,
    precision: str = "f64",
    max_train_sequences: int | None = None,
    seed: int = 0,
) -> SmokeResult:
    """Train a few epochs on one fold of an SBU-layout corpus; stability check.

    Uses the encode CLI path (pair swap on, +26 crop margin) and reports
    whether all per-epoch losses stayed finite and the best validation
    accuracy beat the 1/8 chance level. ``max_train_sequences`` subsamples
    the train fold for reduced desk runs; the full criterion uses None.
    """
    from .cli import main as cli_main
    from .configfile import write_config
    from .network import arch_to_config

    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    arch_path = workdir / "arch.cfg"
    write_config(arch_path, arch_to_config(arch))
    cache = workdir / "cache"
    rc = cli_main(
        [
            "encode", str(corpus_dir), "--kind", "sbu", "--protocol", "sbu-5fold",
            "--fold", str(fold), "--out", str(cache), "--arch-config", str(arch_path),
        ]
    )
    if rc != 0:
        raise RuntimeError("encode step failed")
    data = dataset_mod.load_image_dataset(cache)
    train_names = [n for n, r in zip(data.names, data.roles) if r == "train"]
    if max_train_sequences is not None:
        train_names = train_names[: max_train_sequences]
    cfg = training.TrainConfig(
        base_lr=1e-3, decay=0.9, epochs=epochs, batch_size=batch_size,
        seed=seed, precision=precision, crops_per_sample=crops,
    )
    result = training.train(data, train_names, cfg, arch)
    losses = [row.train_loss for row in result.metrics]
    val_accs = [row.val_acc for row in result.metrics]
    finite = all(np.isfinite(losses)) and all(np.isfinite(val_accs))
    return SmokeResult(
        losses=losses,
        val_accs=val_accs,
        finite=finite,
        val_above_chance=bool(max(val_accs) > 1.0 / 8.0),
    )


def write_synthetic_sbu_corpus(
    out_dir: str | Path, seed: int = 7, frames: int = 24
) -> int:
    """A 282-sequence two-person corpus in the nested SBU file layout.

    21 participant pairs x 8 interaction classes, with extra takes spread
    round-robin to reach the corpus size; motion is synthetic but shapes,
    counts, and metadata match the real layout so the full pipeline can be
    exercised without the original recordings.
    """
    out = Path(out_dir)
    combos = [(pair, action) for pair in skeletons.SBU_PAIRS for action in range(1, 9)]
    extra = 282 - len(combos)
    rng = np.random.default_rng(seed)
    written = 0
    for idx, (pair, action) in enumerate(combos):
        takes = 1 + (1 if idx < extra else 0)
        for take in range(1, takes + 1):
            seqs = skeletons.synth_generate(
                classes=8,
                per_class=1,
                frames=frames,
                joint_count=skeletons.SBU_JOINTS,
                seed=int(rng.integers(0, 2**31)),
                subjects=2,
            )
            seq = seqs[action - 1]  # the take for this interaction class
            rows = []
            for t in range(seq.frame_count):
                coords = seq.joints[t].reshape(-1)
                rows.append(",".join([str(t + 1)] + [f"{v:.6f}" for v in coords]))
            path = out / pair / f"{action:02d}" / f"{take:03d}" / "skeleton_pos.txt"
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("\n".join(rows) + "\n", encoding="utf-8")
            written += 1
    return written
