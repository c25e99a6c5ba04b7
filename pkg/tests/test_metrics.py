import json

import numpy as np
import pytest
import torch
from scipy import linalg as sla

from duetmotion.body_model import (
    KinematicTree,
    Pose,
    ShapeParams,
    axisangle_to_matrix,
    matrix_to_axisangle,
)
from duetmotion.interaction_data import MotionSequence, SynthParams, sequence_to_array, synth_dataset
from duetmotion.metrics import (
    AutoencoderConfig,
    MetricReport,
    autoencoder_checkpoint,
    contact_ratio,
    diversity,
    frechet_distance,
    frechet_from_stats,
    gaussian_stats,
    load_autoencoder,
    mmodality,
    penetration,
    precision_recall,
    train_autoencoder,
)

TINY_AE = AutoencoderConfig(feature_dim=8, hidden_dim=32, train_steps=20)


def synth_clips(count=8, length=30, seed=0):
    return synth_dataset(SynthParams(count=count, length=length), seed)


# ---------------------------------------------------------------------------
# autoencoder features
# ---------------------------------------------------------------------------


def test_autoencoder_rejects_single_clip():
    clips = synth_clips(count=1)
    with pytest.raises(ValueError, match="at least 2"):
        train_autoencoder(clips, TINY_AE, torch.Generator().manual_seed(0))


def test_feature_width_default():
    clips = synth_clips(count=3)
    cfg = AutoencoderConfig(train_steps=2)
    fx, curve = train_autoencoder(clips, cfg, torch.Generator().manual_seed(1))
    feats = fx.encode(clips)
    assert feats.shape == (3, 64)
    assert feats.dtype == np.float64
    assert len(curve) == 2 and curve[0]["step"] == 0


def test_autoencoder_deterministic():
    clips = synth_clips(count=4)
    fa, _ = train_autoencoder(clips, TINY_AE, torch.Generator().manual_seed(7))
    fb, _ = train_autoencoder(clips, TINY_AE, torch.Generator().manual_seed(7))
    fc, _ = train_autoencoder(clips, TINY_AE, torch.Generator().manual_seed(8))
    assert np.array_equal(fa.encode(clips), fb.encode(clips))
    assert not np.array_equal(fa.encode(clips), fc.encode(clips))


def test_autoencoder_reconstruction_improves():
    clips = synth_clips(count=8)
    fx, curve = train_autoencoder(
        clips, AutoencoderConfig(), torch.Generator().manual_seed(3)
    )
    assert curve[-1]["loss"] < 0.2 * curve[0]["loss"]
    assert fx.encode(clips).shape == (8, 64)


def test_autoencoder_divergence_abort():
    clips = synth_clips(count=4)
    cfg = AutoencoderConfig(feature_dim=8, hidden_dim=32, train_steps=50, divergence_factor=1e-9)
    with pytest.raises(RuntimeError, match="diverged at step"):
        train_autoencoder(clips, cfg, torch.Generator().manual_seed(0))


def test_autoencoder_mixed_lengths_rejected():
    clips = synth_clips(count=2, length=30) + synth_clips(count=2, length=40)
    with pytest.raises(ValueError, match="same frame count"):
        train_autoencoder(clips, TINY_AE, torch.Generator().manual_seed(0))


def test_encode_width_mismatch_rejected():
    fx, _ = train_autoencoder(synth_clips(count=2, length=30), TINY_AE, torch.Generator().manual_seed(0))
    with pytest.raises(ValueError, match="trained size"):
        fx.encode(synth_clips(count=2, length=40))


def test_autoencoder_checkpoint_round_trip():
    clips = synth_clips(count=3)
    fx, _ = train_autoencoder(clips, TINY_AE, torch.Generator().manual_seed(5))
    ckpt = autoencoder_checkpoint(fx)
    assert ckpt["kind"] == "autoencoder" and ckpt["version"] == 1
    fx2 = load_autoencoder(ckpt)
    assert np.array_equal(fx.encode(clips), fx2.encode(clips))
    with pytest.raises(ValueError, match="kind"):
        load_autoencoder({**ckpt, "kind": "animator"})
    with pytest.raises(ValueError, match="version"):
        load_autoencoder({**ckpt, "version": 99})


# ---------------------------------------------------------------------------
# Frechet distance
# ---------------------------------------------------------------------------


def test_frechet_population_oracle():
    # unit-covariance Gaussians one unit apart: distance is exactly 1
    res = frechet_from_stats(np.zeros(2), np.eye(2), np.array([1.0, 0.0]), np.eye(2))
    assert abs(res.value - 1.0) < 1e-12
    assert not res.regularized


def test_frechet_identical_sets_near_zero():
    feats = np.random.default_rng(0).normal(size=(20, 5))
    assert frechet_distance(feats, feats.copy()) <= 1e-8


def test_frechet_swap_symmetric_bitwise():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(30, 6))
    b = rng.normal(size=(25, 6)) + 0.3
    assert frechet_distance(a, b) == frechet_distance(b, a)


def test_frechet_grows_with_shift():
    rng = np.random.default_rng(2)
    a = rng.normal(size=(50, 4))
    near = frechet_distance(a, a + 0.5)
    far = frechet_distance(a, a + 2.0)
    assert 0 < near < far


def test_frechet_regularizer_reported():
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(3, 5))  # rank-deficient covariance
    mu, cov = gaussian_stats(feats)
    with pytest.warns(RuntimeWarning, match="regulariz"):
        res = frechet_from_stats(mu, cov, mu + 1.0, cov)
    assert res.regularized
    assert np.isfinite(res.value) and res.value >= 0


def test_frechet_matches_sqrtm_oracle():
    rng = np.random.default_rng(4)
    d = 6
    mu1, mu2 = rng.normal(size=d), rng.normal(size=d)
    a1, a2 = rng.normal(size=(d, d)), rng.normal(size=(d, d))
    cov1 = a1 @ a1.T + 0.5 * np.eye(d)
    cov2 = a2 @ a2.T + 0.5 * np.eye(d)

    cross = sla.sqrtm(cov1 @ cov2)
    if np.iscomplexobj(cross):
        cross = cross.real
    ref = ((mu1 - mu2) ** 2).sum() + np.trace(cov1) + np.trace(cov2) - 2 * np.trace(cross)

    got = frechet_from_stats(mu1, cov1, mu2, cov2).value
    assert abs(got - ref) < 1e-8


def test_frechet_input_validation():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError, match="at least 2"):
        gaussian_stats(rng.normal(size=(1, 4)))
    with pytest.raises(ValueError, match="dimensions"):
        frechet_from_stats(np.zeros(2), np.eye(2), np.zeros(3), np.eye(3))


# ---------------------------------------------------------------------------
# precision / recall
# ---------------------------------------------------------------------------


def _pr_reference(real, gen, k):
    """Independent brute-force version: plain loops, no vectorization."""

    def radius(x, i):
        ds = sorted(np.linalg.norm(x[i] - x[j]) for j in range(len(x)) if j != i)
        return ds[k - 1]

    def covered(points, manifold):
        hits = 0
        for p in points:
            if any(np.linalg.norm(p - manifold[i]) < radius(manifold, i) for i in range(len(manifold))):
                hits += 1
        return hits / len(points)

    return covered(gen, real), covered(real, gen)


def test_pr_identical_sets():
    feats = np.random.default_rng(0).normal(size=(10, 3))
    assert precision_recall(feats, feats.copy()) == (1.0, 1.0)


def test_pr_far_apart_zero():
    feats = np.random.default_rng(1).normal(size=(8, 3))
    assert precision_recall(feats, feats + 1000.0) == (0.0, 0.0)


def test_pr_matches_brute_force():
    rng = np.random.default_rng(2)
    for trial in range(5):
        real = rng.normal(size=(5, 2))
        gen = rng.normal(size=(5, 2)) * 1.5 + 0.4
        assert precision_recall(real, gen, k=3) == _pr_reference(real, gen, 3)


def test_pr_exchange_symmetric():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(9, 4))
    b = rng.normal(size=(7, 4)) + 0.2
    p, r = precision_recall(a, b)
    assert precision_recall(b, a) == (r, p)


def test_pr_duplicate_points_zero_radius():
    # collapsed real set: every k-NN ball has radius 0 and the strict
    # inequality admits nothing, even a generated point on top of it
    real = np.zeros((5, 2))
    gen = np.vstack([np.zeros((1, 2)), np.random.default_rng(4).normal(size=(4, 2))])
    p, _ = precision_recall(real, gen, k=3)
    assert p == 0.0


def test_pr_subset_precision_one():
    real = np.random.default_rng(5).normal(size=(8, 3))
    p, _ = precision_recall(real, real[:4].copy(), k=3)
    assert p == 1.0


def test_pr_min_count_rejected():
    small = np.random.default_rng(6).normal(size=(3, 2))
    big = np.random.default_rng(7).normal(size=(10, 2))
    with pytest.raises(ValueError, match="k\\+1"):
        precision_recall(small, big, k=3)
    with pytest.raises(ValueError, match="k\\+1"):
        precision_recall(big, small, k=3)


# ---------------------------------------------------------------------------
# diversity / multimodality
# ---------------------------------------------------------------------------


def test_diversity_two_points_exact():
    feats = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert diversity(feats, 64, np.random.default_rng(0)) == 5.0


def test_diversity_identical_points_zero():
    feats = np.ones((6, 3))
    assert diversity(feats, 100, np.random.default_rng(1)) == 0.0


def test_diversity_matches_full_pair_average():
    feats = np.random.default_rng(2).normal(size=(10, 4))
    full = np.mean(
        [np.linalg.norm(feats[i] - feats[j]) for i in range(10) for j in range(10) if i != j]
    )
    mc = diversity(feats, 200_000, np.random.default_rng(3))
    assert abs(mc - full) < 0.01 * full


def test_diversity_seeded():
    feats = np.random.default_rng(4).normal(size=(12, 3))
    a = diversity(feats, 50, np.random.default_rng(9))
    b = diversity(feats, 50, np.random.default_rng(9))
    c = diversity(feats, 50, np.random.default_rng(10))
    assert a == b and a != c


def test_diversity_needs_two():
    with pytest.raises(ValueError, match="at least 2"):
        diversity(np.ones((1, 3)), 10, np.random.default_rng(0))


def test_mmodality_single_set_equals_diversity():
    feats = np.random.default_rng(5).normal(size=(8, 4))
    a = mmodality([feats], 40, np.random.default_rng(11))
    b = diversity(feats, 40, np.random.default_rng(11))
    assert a == b


def test_mmodality_averages_over_texts():
    pair = lambda d: np.array([[0.0, 0.0], [d, 0.0]])
    got = mmodality([pair(2.0), pair(4.0)], 16, np.random.default_rng(0))
    assert got == 3.0


def test_mmodality_empty_rejected():
    with pytest.raises(ValueError, match="at least one"):
        mmodality([], 10, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# geometric metrics
# ---------------------------------------------------------------------------


def bar_tree():
    """Straight chain along +y with uniform 0.1 sphere radii.

    Two identity-posed copies separated along x by dx have minimal
    body-to-body distance exactly dx - 0.2, which makes penetration depths
    exact constants.
    """
    n = 22
    offsets = np.zeros((n, 3))
    offsets[1:, 1] = 0.05
    radii = np.full(n, 0.1)
    radii[0] = 0.0
    return KinematicTree(
        joint_names=[f"j{i}" for i in range(n)],
        parents=np.arange(-1, n - 1),
        base_offsets=offsets,
        shape_basis=np.zeros((n, 10)),
        proxy_radii=radii,
        samples_per_bone=2,
    )


def bar_motion(dx_per_frame):
    zero = ShapeParams(np.zeros(10))
    poses_a, poses_b = [], []
    for dx in dx_per_frame:
        poses_a.append(Pose(np.zeros(3), np.zeros((21, 3)), np.zeros(3)))
        poses_b.append(Pose(np.zeros(3), np.zeros((21, 3)), np.array([dx, 0.0, 0.0])))
    return MotionSequence(poses_a, poses_b, zero, zero, fps=10.0)


def test_contact_ratio_exact_fraction():
    # 12 touching frames out of 30
    motion = bar_motion([0.15] * 12 + [1.0] * 18)
    assert contact_ratio(motion, tree=bar_tree()) == 40.0


def test_contact_ratio_threshold_strict():
    tree = bar_tree()
    near = bar_motion([0.2125, 0.2125])   # gap 0.0125 < 0.013
    far = bar_motion([0.2135, 0.2135])    # gap 0.0135 > 0.013
    assert contact_ratio(near, tree=tree) == 100.0
    assert contact_ratio(far, tree=tree) == 0.0
    assert contact_ratio(far, threshold=0.5, tree=tree) == 100.0


def test_penetration_exact_depth():
    # spheres of radius 0.1 with centers 0.15 apart overlap by 5 cm
    motion = bar_motion([0.15] * 30)
    assert abs(penetration(motion, tree=bar_tree()) - 5.0) < 1e-9


def test_penetration_zero_when_separated():
    motion = bar_motion([1.0] * 10)
    assert penetration(motion, tree=bar_tree()) == 0.0


def test_penetration_partial_frames():
    # half the frames overlap by 5 cm, half are clear: mean is 2.5 cm
    motion = bar_motion([0.15] * 5 + [1.0] * 5)
    assert abs(penetration(motion, tree=bar_tree()) - 2.5) < 1e-9


def _rigidly_moved(motion, rotvec, shift):
    R = axisangle_to_matrix(rotvec)

    def move(p):
        return Pose(
            matrix_to_axisangle(R @ axisangle_to_matrix(p.global_orient)),
            p.joint_rotations,
            R @ p.translation + shift,
        )

    return MotionSequence(
        [move(p) for p in motion.poses_a],
        [move(p) for p in motion.poses_b],
        motion.shape_a,
        motion.shape_b,
        motion.fps,
    )


def test_geometric_metrics_rigid_invariant():
    motion = synth_dataset(SynthParams(count=1, length=30), 42)[0]
    moved = _rigidly_moved(motion, np.array([0.3, -1.1, 0.7]), np.array([2.0, -1.0, 0.5]))
    assert abs(contact_ratio(motion) - contact_ratio(moved)) < 1e-9
    assert abs(penetration(motion) - penetration(moved)) < 1e-9
    # and it actually has contact to preserve
    assert contact_ratio(motion) > 0.0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def make_report(**overrides):
    base = dict(
        fid=1.25,
        precision=0.8,
        recall=0.6,
        diversity=2.0,
        contact_ratio=40.0,
        penetration=0.3,
        mmodality=1.1,
        num_real=32,
        num_gen=16,
        seed=7,
    )
    base.update(overrides)
    return MetricReport(**base)


def test_report_json_round_trip():
    report = make_report()
    again = MetricReport.from_json(report.to_json())
    assert again == report
    doc = json.loads(report.to_json())
    assert doc["version"] == 1
    assert doc["num_real"] == 32 and doc["seed"] == 7


def test_report_validation():
    with pytest.raises(ValueError, match="non-negative"):
        make_report(fid=-0.1)
    with pytest.raises(ValueError, match="\\[0, 1\\]"):
        make_report(precision=1.5)


def test_report_version_rejected():
    doc = json.loads(make_report().to_json())
    doc["version"] = 99
    with pytest.raises(ValueError, match="version"):
        MetricReport.from_json(json.dumps(doc))
