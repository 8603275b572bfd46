"""Acceptance gate: every criterion at its stated tolerance.

Each test prints one ``ACCEPTANCE <name>: PASS`` line (run pytest with -s to
see them as they complete). The SBU-scale smoke train is excluded from the
default run via the ``slow`` marker; see the README for how to launch it and
what it costs.
"""

import hashlib
import time

import numpy as np
import pytest

from f2cskel import cli, harness, skeletons
from f2cskel.body import ntu_body
from f2cskel.dataset import load_image_dataset
from f2cskel.encoding import STREAMS, cubic_resize, encode_sequence, minmax_to_rgb
from f2cskel.features import (
    BoneLengthTable,
    build_bp_grid,
    build_wb_grid,
    limb_normalize,
    mean_bone_lengths,
)
from f2cskel.network import default_arch, mini_arch
from f2cskel.runio import read_manifest
from f2cskel.training import (
    TrainConfig,
    _SampleView,
    format_report,
    metrics_from_confusion,
    parse_report,
)

from gradcheck import full_network_fd_check, random_params
from helpers import lattice_joints, make_sequence
from test_features import all_angles, bone_lengths, bone_table_for, random_skeleton

# sha256 over the four encoded images of the fixture sequence (see
# test_encoding_invariants); frozen from the reference run.
GOLDEN_ENCODE_DIGEST = "c83d5f14d22bd3de7debc1bfb5f3317adfc5837970b648c7e1c900c81575baf2"


def _report(name: str, ok: bool = True):
    print(f"\nACCEPTANCE {name}: {'PASS' if ok else 'FAIL'}")


def test_shape_ledger_conformance(capsys):
    start = time.perf_counter()
    assert cli.main(["inspect", "--arch", "default"]) == 0
    out = capsys.readouterr().out
    rows = {}
    for line in out.splitlines():
        parts = line.split()
        if len(parts) == 3 and parts[1].isdigit():
            rows[parts[0]] = (int(parts[1]), parts[2])
    # zero tolerance against the published configuration table
    assert rows["stage0"] == (35, "3x32x44")
    assert rows["stage1_fused"] == (24, "3x64x88")
    assert rows["stage2_fused"] == (10, "64x32x44")
    assert rows["stage3_fused"] == (4, "128x16x22")
    assert rows["flatten"] == (4, "5120")
    assert default_arch().stream_feature_dim() == 4 * 5120
    elapsed = time.perf_counter() - start
    assert elapsed < 1.0, f"inspect took {elapsed:.2f}s"
    with capsys.disabled():
        _report("shape-ledger")


def test_gradient_oracle():
    # mini architecture, 4 classes; EVERY parameter against central
    # finite differences: 1e-4 relative, 1e-7 absolute floor, f64.
    start = time.perf_counter()
    arch = mini_arch()
    assert (arch.temporal_segments, arch.slice_h, arch.slice_w) == (3, 8, 10)
    assert arch.filters == (2, 3, 4)
    gen = np.random.default_rng(2024)
    params = random_params(arch, 4, gen)
    xs = {s: gen.random((2, 3, arch.image_h, arch.image_w)) for s in STREAMS}
    labels = np.array([1, 3])
    worst, worst_in, checked = full_network_fd_check(
        arch, 4, params, xs, labels, step=1e-5, rtol=1e-4, atol=1e-7
    )
    from f2cskel.network import param_spec

    total = sum(int(np.prod(shape)) for _, shape, _ in param_spec(arch, 4))
    assert checked == total, "gradient check must cover every parameter"
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"gradient oracle took {elapsed:.0f}s"
    _report("gradient-oracle")
    print(f"  checked {checked} parameters, worst above-floor rel err {worst:.2e} "
          f"(inputs {worst_in:.2e}), {elapsed:.0f}s")


def test_overfit_harness(tmp_path):
    # synthetic 8-class set (64 sequences, seed 1), mini arch, Adam lr 1e-3,
    # decay 0.95: train accuracy >= 95% within 50 epochs for >= 4 of 5 seeds
    start = time.perf_counter()
    results = harness.run_overfit(tmp_path, train_seeds=(0, 1, 2, 3, 4),
                                  dataset_seed=1, epochs=50, lr=1e-3, decay=0.95)
    reached = sum(1 for r in results if r.best_train_acc >= 0.95)
    detail = ", ".join(f"seed {r.seed}: {r.best_train_acc:.3f}" for r in results)
    assert reached >= 4, f"only {reached}/5 seeds reached 95% ({detail})"
    _report("overfit-harness")
    print(f"  {reached}/5 seeds ({detail}), {time.perf_counter() - start:.0f}s")


def test_geometry_invariants():
    body = ntu_body()
    rng = np.random.default_rng(77)
    table = bone_table_for(body, rng, jitter=0.6)
    # limb normalization on 100 randomized skeletons
    for _ in range(100):
        joints = random_skeleton(rng, body)
        out = limb_normalize(joints, body.topology, table)
        np.testing.assert_allclose(
            bone_lengths(out, body.topology), table.lengths, rtol=0, atol=1e-9
        )
        np.testing.assert_allclose(
            all_angles(out, body.topology), all_angles(joints, body.topology),
            rtol=1e-6, atol=0,
        )
    # WB/BP translation invariance, bit-exact (lattice translation is exact
    # in the float32 storage, differences then agree bit for bit)
    base = lattice_joints(rng, (6, 2, 25, 3))
    delta = (np.array([731, -250, 64]) * 2.0 ** -10).astype(np.float32)
    seq_a = make_sequence(base, name="a")
    seq_b = make_sequence(base + delta[None, None, None, :], name="b")
    for build in (build_wb_grid, build_bp_grid):
        pa, va = build(seq_a, body, table)
        pb, vb = build(seq_b, body, table)
        assert pa.values.tobytes() == pb.values.tobytes()
        assert va.values.tobytes() == vb.values.tobytes()
    # velocity of constant motion is exactly zero
    joints = np.tile(random_skeleton(rng, body)[None, None], (7, 1, 1, 1))
    _, vel = build_wb_grid(make_sequence(joints, name="c"), body, table)
    assert (vel.values == 0).all()
    _report("geometry-invariants")


def test_encoding_invariants():
    rng = np.random.default_rng(5)
    # min-max projection maps channel extremes to exactly 0 and 255
    from f2cskel.features import FeatureGrid

    grid = FeatureGrid(values=rng.standard_normal((9, 6, 3)), kind="position", basis="wb")
    rgb = minmax_to_rgb(grid)
    for c in range(3):
        v, o = grid.values[..., c].ravel(), rgb[..., c].ravel()
        assert o[v.argmin()] == 0 and o[v.argmax()] == 255
    # cubic resize is the exact identity at equal dims
    img = rng.integers(0, 256, size=(28, 33, 3), dtype=np.uint8)
    assert cubic_resize(img, 28, 33).tobytes() == img.tobytes()
    # full encode of the fixture sequence is byte-identical across runs;
    # the digest is committed from the reference run
    seq = skeletons.synth_generate(2, 1, 12, 25, seed=42)[0]
    body = ntu_body()
    table = mean_bone_lengths([seq], body.topology)
    digests = []
    for _ in range(2):
        h = hashlib.sha256()
        for image in encode_sequence(seq, body, table):
            h.update(image.pixels.tobytes())
        digests.append(h.hexdigest())
    assert digests[0] == digests[1] == GOLDEN_ENCODE_DIGEST
    _report("encoding-invariants")


def test_table3_metric_machinery():
    # hand-built 3-class confusion fixture; hand-computed exact fractions
    confusion = np.array([
        [8, 1, 1],   # class 0: support 10
        [2, 6, 2],   # class 1: support 10
        [0, 3, 7],   # class 2: support 10
    ])
    rep = metrics_from_confusion(confusion)
    assert rep.accuracy == 21 / 30
    np.testing.assert_array_equal(rep.precision, [8 / 10, 6 / 10, 7 / 10])
    np.testing.assert_array_equal(rep.recall, [8 / 10, 6 / 10, 7 / 10])
    # asymmetric fixture: precision != recall
    confusion2 = np.array([
        [5, 0, 0],
        [3, 4, 1],
        [2, 0, 6],
    ])
    rep2 = metrics_from_confusion(confusion2)
    np.testing.assert_array_equal(rep2.precision, [5 / 10, 4 / 4, 6 / 7])
    np.testing.assert_array_equal(rep2.recall, [5 / 5, 4 / 8, 6 / 8])
    # report format parses round-trip, exactly
    for r in (rep, rep2):
        back = parse_report(format_report(r))
        assert back.accuracy == r.accuracy
        np.testing.assert_array_equal(back.precision, r.precision)
        np.testing.assert_array_equal(back.recall, r.recall)
        np.testing.assert_array_equal(back.confusion, r.confusion)
    _report("table3-metrics")


def test_sbu_augmentation_count(tmp_path):
    # 282 sequences, default flags -> exactly 11,280 augmented samples
    corpus = tmp_path / "corpus"
    written = harness.write_synthetic_sbu_corpus(corpus, seed=7, frames=12)
    assert written == 282
    cache = tmp_path / "cache"
    rc = cli.main([
        "encode", str(corpus), "--kind", "sbu", "--protocol", "sbu-5fold",
        "--fold", "0", "--out", str(cache), "--arch", "mini",
    ])
    assert rc == 0
    data = load_image_dataset(cache)
    assert len(data.names) == 2 * 282  # pair swap doubles the corpus
    view = _SampleView(data, mini_arch(), TrainConfig(seed=0, crops_per_sample=20))
    samples = view.train_samples(np.arange(len(data.names)))
    assert len(samples) == 11280
    manifest = read_manifest(cache / "manifest.json")
    assert "swapped" in manifest["notes"]["pair_swap"]
    _report("sbu-augmentation-count")
    print(f"  282 sequences -> {len(samples)} samples")


@pytest.mark.slow
def test_sbu_scale_smoke_train(tmp_path):
    # full architecture, one fold, 3 epochs on a full-size synthetic corpus
    # in the SBU layout: losses stay finite, validation beats 12.5% chance.
    # This is the optional/slow criterion: expect multi-day runtime on a
    # desktop CPU (the full architecture costs ~15 GMAC per sample forward).
    corpus = tmp_path / "corpus"
    harness.write_synthetic_sbu_corpus(corpus, seed=7)
    result = harness.run_sbu_smoke(
        corpus, tmp_path / "run", default_arch(), fold=0, epochs=3
    )
    assert result.finite, f"non-finite losses: {result.losses}"
    assert result.val_above_chance, f"val accuracy never beat chance: {result.val_accs}"
    _report("sbu-smoke")
