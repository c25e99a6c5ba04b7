"""Evaluation suite for two-person motion.

Distribution metrics run on features from a small reconstruction-trained
motion autoencoder, so absolute values are meaningful only within one feature
space; geometric metrics (contact ratio, penetration) run directly on the
sphere-proxy bodies. Everything is deterministic given explicit random
streams, and the report records sizes and seeds next to the numbers.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
import torch
from torch import nn

from .body_model import KinematicTree, body_proxy, default_tree, min_body_distance
from .denoiser_net import init_params_
from .interaction_data import InteractionClip, MotionSequence, sequence_to_array

REPORT_VERSION = 1
AE_CHECKPOINT_VERSION = 1


# =============================================================================
# feature autoencoder
# =============================================================================


@dataclass
class AutoencoderConfig:
    feature_dim: int = 64
    hidden_dim: int = 512
    lr: float = 1e-3
    weight_decay: float = 0.0
    train_steps: int = 400
    batch_size: int = 8
    divergence_factor: float = 1e3


class MotionAutoencoder(nn.Module):
    def __init__(self, in_dim: int, cfg: AutoencoderConfig):
        super().__init__()
        self.encoder = nn.Sequential(
            nn.Linear(in_dim, cfg.hidden_dim), nn.GELU(),
            nn.Linear(cfg.hidden_dim, cfg.feature_dim),
        )
        self.decoder = nn.Sequential(
            nn.Linear(cfg.feature_dim, cfg.hidden_dim), nn.GELU(),
            nn.Linear(cfg.hidden_dim, in_dim),
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.decoder(self.encoder(x))


def _clips_to_matrix(clips: Sequence[InteractionClip | MotionSequence | np.ndarray]) -> np.ndarray:
    rows = []
    for c in clips:
        if isinstance(c, InteractionClip):
            arr = sequence_to_array(c.sequence)
        elif isinstance(c, MotionSequence):
            arr = sequence_to_array(c)
        else:
            arr = np.asarray(c, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != 2 or arr.shape[2] != 69:
            raise ValueError("clips must be (2, N, 69) arrays or sequences")
        rows.append(arr.reshape(-1))
    if len({r.shape for r in rows}) > 1:
        raise ValueError("all clips must have the same frame count")
    return np.stack(rows)


class FeatureExtractor:
    """Frozen encoder mapping same-length clips to fixed-width features."""

    def __init__(self, model: MotionAutoencoder, in_dim: int, cfg: AutoencoderConfig):
        self.model = model.eval()
        self.in_dim = in_dim
        self.cfg = cfg

    @torch.no_grad()
    def encode(self, clips: Sequence) -> np.ndarray:
        mat = _clips_to_matrix(clips)
        if mat.shape[1] != self.in_dim:
            raise ValueError(f"clip size {mat.shape[1]} != trained size {self.in_dim}")
        feats = self.model.encoder(torch.from_numpy(mat).to(torch.float32))
        return feats.numpy().astype(np.float64)


def train_autoencoder(
    clips: Sequence, cfg: AutoencoderConfig, rng: torch.Generator, log_every: int = 0
) -> tuple[FeatureExtractor, list[dict]]:
    """Reconstruction-train the feature space; returns (extractor, loss curve)."""
    mat = _clips_to_matrix(clips)
    m, in_dim = mat.shape
    if m < 2:
        raise ValueError("autoencoder training needs at least 2 clips")
    model = MotionAutoencoder(in_dim, cfg)
    init_params_(model, rng)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    data = torch.from_numpy(mat).to(torch.float32)

    curve: list[dict] = []
    initial = None
    for step in range(cfg.train_steps):
        idx = torch.randint(0, m, (min(cfg.batch_size, m),), generator=rng)
        batch = data[idx]
        loss = ((model(batch) - batch) ** 2).mean()
        val = float(loss.detach())
        if not np.isfinite(val):
            raise FloatingPointError(f"non-finite reconstruction loss at step {step}")
        if initial is None:
            initial = val
        if val > cfg.divergence_factor * max(initial, 1e-8):
            raise RuntimeError(
                f"autoencoder diverged at step {step}: loss {val:.4g} vs initial {initial:.4g}"
            )
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        curve.append({"step": step, "loss": val})
        if log_every and step % log_every == 0:
            print(f"ae step {step:6d}  recon {val:.6f}")
    return FeatureExtractor(model, in_dim, cfg), curve


def autoencoder_checkpoint(extractor: FeatureExtractor) -> dict:
    return {
        "kind": "autoencoder",
        "version": AE_CHECKPOINT_VERSION,
        "in_dim": extractor.in_dim,
        "config": asdict(extractor.cfg),
        "state_dict": extractor.model.state_dict(),
    }


def load_autoencoder(checkpoint: dict) -> FeatureExtractor:
    if checkpoint.get("kind") != "autoencoder":
        raise ValueError(f"not an autoencoder checkpoint: kind={checkpoint.get('kind')!r}")
    if checkpoint.get("version") != AE_CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {checkpoint.get('version')!r}")
    cfg = AutoencoderConfig(**checkpoint["config"])
    model = MotionAutoencoder(checkpoint["in_dim"], cfg)
    model.load_state_dict(checkpoint["state_dict"])
    return FeatureExtractor(model, checkpoint["in_dim"], cfg)


# =============================================================================
# Frechet distance
# =============================================================================


class FrechetResult(NamedTuple):
    value: float
    regularized: bool


def gaussian_stats(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    feats = np.asarray(feats, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[0] < 2:
        raise ValueError("need at least 2 feature vectors")
    mu = feats.mean(axis=0)
    cov = np.cov(feats, rowvar=False)
    return mu, np.atleast_2d(cov)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    sym = (mat + mat.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, 0.0)
    return (vecs * np.sqrt(vals)) @ vecs.T


def frechet_from_stats(
    mu1: np.ndarray, cov1: np.ndarray, mu2: np.ndarray, cov2: np.ndarray, eps: float = 1e-6
) -> FrechetResult:
    """||mu1-mu2||^2 + Tr(C1 + C2 - 2 (C1 C2)^{1/2}) between Gaussian fits.

    The cross term is evaluated as Tr sqrt(sqrt(C1) C2 sqrt(C1)) with
    symmetric eigendecompositions floored at zero. Near-singular covariances
    get an eps diagonal before the product and the result says so. Arguments
    are ordered canonically first, so swapping the sides returns the identical
    float.
    """
    mu1, mu2 = np.asarray(mu1, dtype=np.float64), np.asarray(mu2, dtype=np.float64)
    cov1 = np.atleast_2d(np.asarray(cov1, dtype=np.float64))
    cov2 = np.atleast_2d(np.asarray(cov2, dtype=np.float64))
    if mu1.shape != mu2.shape or cov1.shape != cov2.shape:
        raise ValueError("feature dimensions must match")
    if (mu1.tobytes(), cov1.tobytes()) > (mu2.tobytes(), cov2.tobytes()):
        mu1, mu2, cov1, cov2 = mu2, mu1, cov2, cov1

    regularized = False
    d = mu1.shape[0]
    if min(np.linalg.eigvalsh((cov1 + cov1.T) / 2)[0], np.linalg.eigvalsh((cov2 + cov2.T) / 2)[0]) < eps:
        cov1 = cov1 + eps * np.eye(d)
        cov2 = cov2 + eps * np.eye(d)
        regularized = True
        warnings.warn("near-singular covariance, applying diagonal regularizer", RuntimeWarning)

    s1 = _psd_sqrt(cov1)
    cross = _psd_sqrt(s1 @ cov2 @ s1)
    value = float(((mu1 - mu2) ** 2).sum() + np.trace(cov1) + np.trace(cov2) - 2.0 * np.trace(cross))
    return FrechetResult(max(value, 0.0), regularized)


def frechet_distance(feats_real: np.ndarray, feats_gen: np.ndarray) -> float:
    mu1, cov1 = gaussian_stats(feats_real)
    mu2, cov2 = gaussian_stats(feats_gen)
    return frechet_from_stats(mu1, cov1, mu2, cov2).value


# =============================================================================
# k-NN precision / recall
# =============================================================================


def _pairwise(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(-1))


def _knn_radii(x: np.ndarray, k: int) -> np.ndarray:
    d = _pairwise(x, x)
    return np.sort(d, axis=1)[:, k]  # column 0 is the self distance


def precision_recall(
    feats_real: np.ndarray, feats_gen: np.ndarray, k: int = 3
) -> tuple[float, float]:
    """Manifold estimate: a point counts when it falls strictly inside any
    k-NN ball of the other set. Duplicate-collapsed balls have radius 0 and
    accept nothing."""
    real = np.asarray(feats_real, dtype=np.float64)
    gen = np.asarray(feats_gen, dtype=np.float64)
    if real.shape[0] < k + 1 or gen.shape[0] < k + 1:
        raise ValueError(f"both sets need at least k+1 = {k + 1} samples")

    def covered(points, manifold, radii):
        return float((_pairwise(points, manifold) < radii[None, :]).any(axis=1).mean())

    precision = covered(gen, real, _knn_radii(real, k))
    recall = covered(real, gen, _knn_radii(gen, k))
    return precision, recall


# =============================================================================
# diversity / multimodality
# =============================================================================


def _distinct_pairs(n: int, num_pairs: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    i = rng.integers(0, n, size=num_pairs)
    j = (i + 1 + rng.integers(0, n - 1, size=num_pairs)) % n
    return i, j


def diversity(feats: np.ndarray, num_pairs: int, rng: np.random.Generator) -> float:
    """Mean Euclidean distance over random distinct index pairs."""
    feats = np.asarray(feats, dtype=np.float64)
    if feats.shape[0] < 2:
        raise ValueError("diversity needs at least 2 features")
    i, j = _distinct_pairs(feats.shape[0], num_pairs, rng)
    return float(np.linalg.norm(feats[i] - feats[j], axis=1).mean())


def mmodality(
    per_text_sets: Sequence[np.ndarray], pairs_per_text: int, rng: np.random.Generator
) -> float:
    """Within-condition diversity averaged over text conditions."""
    if not per_text_sets:
        raise ValueError("mmodality needs at least one condition set")
    return float(np.mean([diversity(s, pairs_per_text, rng) for s in per_text_sets]))


# =============================================================================
# geometric metrics
# =============================================================================


def _frame_min_distances(motion: MotionSequence, tree: KinematicTree) -> np.ndarray:
    out = np.empty(len(motion))
    for f in range(len(motion)):
        pa = body_proxy(motion.poses_a[f], motion.shape_a, tree)
        pb = body_proxy(motion.poses_b[f], motion.shape_b, tree)
        out[f] = min_body_distance(pa, pb)
    return out


def contact_ratio(
    motion: MotionSequence, threshold: float = 0.013, tree: KinematicTree | None = None
) -> float:
    """Percent of frames whose minimal body-to-body distance is below threshold."""
    tree = tree or default_tree()
    dmin = _frame_min_distances(motion, tree)
    return 100.0 * int((dmin < threshold).sum()) / len(motion)


def penetration(motion: MotionSequence, tree: KinematicTree | None = None) -> float:
    """Mean overlap depth across frames, in centimeters; 0 without overlap."""
    tree = tree or default_tree()
    dmin = _frame_min_distances(motion, tree)
    return float(np.maximum(0.0, -dmin).mean() * 100.0)


# =============================================================================
# report
# =============================================================================


@dataclass
class MetricReport:
    fid: float
    precision: float
    recall: float
    diversity: float
    contact_ratio: float
    penetration: float
    mmodality: float | None = None
    fid_regularized: bool = False
    num_real: int = 0
    num_gen: int = 0
    seed: int | None = None
    version: int = REPORT_VERSION
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.fid < 0 or self.diversity < 0 or self.penetration < 0:
            raise ValueError("fid, diversity, and penetration must be non-negative")
        if not (0 <= self.precision <= 1 and 0 <= self.recall <= 1):
            raise ValueError("precision and recall must lie in [0, 1]")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        doc = json.loads(text)
        if doc.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {doc.get('version')!r}")
        return cls(**doc)
