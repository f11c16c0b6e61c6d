"""Synthetic odometry benchmark, KITTI pose file IO, and the teacher cache.

The synthetic benchmark stands in for real visual odometry data at desk
scale: car-like trajectories (dominant forward translation, yaw-heavy
rotation, bounded curvature) whose per-frame motion is embedded through a
fixed random nonlinear map into feature vectors, with heteroscedastic
noise so that some samples are systematically harder than others. Pose is
learnable from the features but not perfectly linearly decodable.

The teacher cache stores, per sample, the teacher's prediction, its
hint-layer representation, and its squared error against ground truth
split into translation/rotation groups, plus the per-group trust weights
derived from the training-split error spread.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ShapeError
from .geometry import orthonormalize

DATASET_MAGIC = "posedistill-dataset v1"
CACHE_FORMAT = "posedistill-cache-v1"
SPLITS = ("train", "val", "test")

# typical per-dimension motion magnitudes; used to standardize deltas
# before the feature embedding so every input dimension is O(1)
_DELTA_SCALE = np.array([0.5, 0.02, 0.02, 0.01, 0.01, 0.12])


def format_float(x: float) -> str:
    """Shortest round-trip decimal form of a float (bit-exact on re-read)."""
    return repr(float(x))


@dataclass(frozen=True)
class NoiseSpec:
    """Heteroscedastic feature corruption.

    Every sample carries additive noise at ``base`` level. With probability
    ``outlier_prob`` a sample is corrupted: its features describe a decoy
    motion displaced from the truth by roughly ``outlier_scale`` standard
    motion units, the way a tracking failure reports a confident but wrong
    motion. Corrupted samples are unpredictable from their features, so a
    teacher's errors split into a low clean cluster and a high corrupted
    cluster, which is the structure the trust weights detect. ``base = 0``
    disables corruption as well.
    """

    base: float = 0.12
    outlier_prob: float = 0.3
    outlier_scale: float = 2.5

    def to_dict(self):
        return {
            "base": self.base,
            "outlier_prob": self.outlier_prob,
            "outlier_scale": self.outlier_scale,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Sequence:
    name: str
    split: str
    features: np.ndarray  # (length, feature_dim)
    deltas: np.ndarray  # (length, 6) ground-truth relative poses
    ids: np.ndarray  # (length,) globally unique sample ids

    def __len__(self):
        return self.features.shape[0]


@dataclass
class SequenceDataset:
    feature_dim: int
    sequences: list = field(default_factory=list)

    def split(self, tag: str):
        return [s for s in self.sequences if s.split == tag]

    def flat(self, tag: str):
        """Concatenated (features, deltas, ids) over all sequences in a split."""
        seqs = self.split(tag)
        if not seqs:
            raise DataError(f"dataset has no '{tag}' sequences")
        feats = np.concatenate([s.features for s in seqs], axis=0)
        deltas = np.concatenate([s.deltas for s in seqs], axis=0)
        ids = np.concatenate([s.ids for s in seqs], axis=0)
        return feats, deltas, ids

    def all_flat(self):
        feats = np.concatenate([s.features for s in self.sequences], axis=0)
        deltas = np.concatenate([s.deltas for s in self.sequences], axis=0)
        ids = np.concatenate([s.ids for s in self.sequences], axis=0)
        splits = np.concatenate(
            [np.full(len(s), s.split, dtype=object) for s in self.sequences]
        )
        return feats, deltas, ids, splits


def _simulate_deltas(length: int, rng: np.random.Generator) -> np.ndarray:
    """Car-like relative motion: smooth forward speed, yaw-heavy turning."""
    deltas = np.empty((length, 6))
    speed = 0.5
    yaw_rate = 0.0
    pitch = 0.0
    roll = 0.0
    for i in range(length):
        speed = np.clip(speed + 0.05 * rng.standard_normal(), 0.2, 0.9)
        yaw_rate = np.clip(0.95 * yaw_rate + 0.03 * rng.standard_normal(), -0.2, 0.2)
        pitch = 0.9 * pitch + 0.004 * rng.standard_normal()
        roll = 0.9 * roll + 0.004 * rng.standard_normal()
        deltas[i] = (
            speed,
            0.02 * rng.standard_normal(),
            0.02 * rng.standard_normal(),
            roll,
            pitch,
            yaw_rate,
        )
    return deltas


def _embed_features(deltas, basis, noise: NoiseSpec, rng) -> np.ndarray:
    lin, mix, post = basis
    n = deltas.shape[0]
    u = deltas / _DELTA_SCALE
    if noise.outlier_prob > 0.0 and noise.base > 0.0:
        corrupted = rng.random(n) < noise.outlier_prob
        # decoy motion at a roughly fixed distance: corrupted-sample errors
        # cluster near the top of the range instead of thinning into a tail
        direction = rng.standard_normal((n, 6))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        magnitude = noise.outlier_scale * (0.8 + 0.4 * rng.random(n))
        u = u + np.where(corrupted, magnitude, 0.0)[:, None] * direction
    # the 0.5 keeps feature variance inside the teacher's tanh linear zone
    clean = 0.5 * (u @ lin.T + 0.6 * np.tanh(u @ mix.T) @ post.T)
    return clean + 0.5 * noise.base * rng.standard_normal(clean.shape)


def generate_synthetic(
    seed: int,
    num_train: int = 12,
    num_val: int = 2,
    num_test: int = 2,
    length: int = 500,
    feature_dim: int = 32,
    noise: NoiseSpec = NoiseSpec(),
) -> SequenceDataset:
    """Deterministic synthetic benchmark; identical seeds give identical bits."""
    if length < 2 or feature_dim < 6 or min(num_train, num_val, num_test) < 1:
        raise DataError(
            f"generate_synthetic: invalid dims (train={num_train}, val={num_val}, "
            f"test={num_test}, length={length}, feature_dim={feature_dim})"
        )
    # one embedding shared by every sequence; depends only on the seed
    basis_rng = np.random.default_rng(np.random.SeedSequence((seed, 0)))
    lin = basis_rng.standard_normal((feature_dim, 6)) / np.sqrt(6.0)
    mix = basis_rng.standard_normal((8, 6))
    post = basis_rng.standard_normal((feature_dim, 8)) / np.sqrt(8.0)
    basis = (lin, mix, post)

    dataset = SequenceDataset(feature_dim=feature_dim)
    counts = (("train", num_train), ("val", num_val), ("test", num_test))
    next_id = 0
    seq_idx = 0
    for split, count in counts:
        for k in range(count):
            rng = np.random.default_rng(np.random.SeedSequence((seed, 1000 + seq_idx)))
            deltas = _simulate_deltas(length, rng)
            features = _embed_features(deltas, basis, noise, rng)
            ids = np.arange(next_id, next_id + length)
            next_id += length
            dataset.sequences.append(
                Sequence(f"{split}{k:02d}", split, features, deltas, ids)
            )
            seq_idx += 1
    return dataset


def save_dataset(dataset: SequenceDataset, path) -> None:
    """Line-oriented text format; floats use shortest round-trip decimals."""
    with open(path, "w") as f:
        f.write(DATASET_MAGIC + "\n")
        f.write(f"feature_dim {dataset.feature_dim}\n")
        f.write(f"sequences {len(dataset.sequences)}\n")
        for seq in dataset.sequences:
            f.write(f"sequence {seq.name} {seq.split} {len(seq)}\n")
            for i in range(len(seq)):
                row = [str(int(seq.ids[i]))]
                row += [format_float(v) for v in seq.features[i]]
                row += [format_float(v) for v in seq.deltas[i]]
                f.write(" ".join(row) + "\n")


def load_dataset(path) -> SequenceDataset:
    with open(path) as f:
        lines = f.read().splitlines()
    if not lines or lines[0] != DATASET_MAGIC:
        raise DataError(f"{path}: not a dataset file (bad magic)")
    try:
        feature_dim = int(lines[1].split()[1])
        num_sequences = int(lines[2].split()[1])
    except (IndexError, ValueError) as exc:
        raise DataError(f"{path}: malformed header: {exc}") from exc
    dataset = SequenceDataset(feature_dim=feature_dim)
    lineno = 3
    seen_ids = set()
    for _ in range(num_sequences):
        parts = lines[lineno].split()
        if len(parts) != 4 or parts[0] != "sequence":
            raise DataError(f"{path}:{lineno + 1}: expected sequence header")
        name, split, length = parts[1], parts[2], int(parts[3])
        if split not in SPLITS:
            raise DataError(f"{path}:{lineno + 1}: unknown split {split!r}")
        lineno += 1
        features = np.empty((length, feature_dim))
        deltas = np.empty((length, 6))
        ids = np.empty(length, dtype=np.int64)
        for i in range(length):
            toks = lines[lineno].split()
            if len(toks) != 1 + feature_dim + 6:
                raise DataError(
                    f"{path}:{lineno + 1}: expected {1 + feature_dim + 6} fields, "
                    f"got {len(toks)}"
                )
            try:
                ids[i] = int(toks[0])
                vals = [float(t) for t in toks[1:]]
            except ValueError as exc:
                raise DataError(f"{path}:{lineno + 1}: {exc}") from exc
            features[i] = vals[:feature_dim]
            deltas[i] = vals[feature_dim:]
            lineno += 1
        dup = set(ids.tolist()) & seen_ids
        if dup:
            raise DataError(f"{path}: duplicate sample ids {sorted(dup)[:5]}")
        seen_ids.update(ids.tolist())
        if not np.all(np.isfinite(deltas)):
            raise DataError(f"{path}: non-finite ground-truth pose in {name}")
        dataset.sequences.append(Sequence(name, split, features, deltas, ids))
    return dataset


def load_kitti_poses(path) -> np.ndarray:
    """Read a KITTI pose file: 12 reals per line, row-major 3x4 [R|t].

    Rotation blocks off by more than 1e-3 from orthonormal are warned about
    and re-orthonormalized; anything closer is kept bit-exact.
    """
    poses = []
    with open(path) as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            toks = line.split()
            if len(toks) != 12:
                raise DataError(f"{path}:{lineno}: expected 12 values, got {len(toks)}")
            try:
                vals = np.array([float(t) for t in toks])
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
            T = np.eye(4)
            T[:3, :4] = vals.reshape(3, 4)
            R = T[:3, :3]
            dev = np.max(np.abs(R @ R.T - np.eye(3)))
            if dev > 1e-3:
                warnings.warn(
                    f"{path}:{lineno}: rotation off by {dev:.2e}, re-orthonormalizing"
                )
                T[:3, :3] = orthonormalize(R)
            poses.append(T)
    if not poses:
        raise DataError(f"{path}: empty pose file")
    return np.array(poses)


def save_kitti_poses(traj, path) -> None:
    traj = np.asarray(traj, dtype=np.float64)
    if traj.ndim != 3 or traj.shape[1:] != (4, 4):
        raise ShapeError(f"save_kitti_poses: expected (n, 4, 4), got {traj.shape}")
    with open(path, "w") as f:
        for T in traj:
            f.write(" ".join(format_float(v) for v in T[:3, :4].ravel()) + "\n")


@dataclass
class TeacherCache:
    """Per-sample teacher outputs and trust weights, keyed by sample id.

    ``eta_t``/``eta_r`` are the spread (max - min) of the squared teacher
    errors over the *training* split only; trust weights for every sample
    use those training-split extrema, so validation and test data never
    leak into the normalization.
    """

    ids: np.ndarray  # (N,)
    splits: np.ndarray  # (N,) object array of split tags
    pred: np.ndarray  # (N, 6) teacher pose predictions
    rep: np.ndarray  # (N, hint_width) teacher hint representations
    err_t: np.ndarray  # (N,) squared translation error vs ground truth
    err_r: np.ndarray  # (N,) squared rotation error vs ground truth
    eta_t: float
    eta_r: float
    phi_t: np.ndarray  # (N,)
    phi_r: np.ndarray  # (N,)

    def __post_init__(self):
        self._pos = {int(i): k for k, i in enumerate(self.ids)}

    def positions(self, ids) -> np.ndarray:
        try:
            return np.array([self._pos[int(i)] for i in ids])
        except KeyError as exc:
            raise DataError(f"sample id {exc} missing from teacher cache") from exc


def _phi_from_errors(errors: np.ndarray, eta: float) -> np.ndarray:
    if eta > 0.0:
        return 1.0 - errors / eta
    return np.ones_like(errors)  # zero spread: trust every sample equally


def build_teacher_cache(teacher, dataset: SequenceDataset) -> TeacherCache:
    """Run the teacher over the full dataset and derive trust weights.

    Normalizers come from training-split extrema; the degenerate zero-spread
    case assigns full trust everywhere.
    """
    feats, deltas, ids, splits = dataset.all_flat()
    pred, rep = teacher.predict(feats)
    if not (np.all(np.isfinite(pred)) and np.all(np.isfinite(rep))):
        raise DataError("teacher produced non-finite predictions; is it trained?")
    err_t = np.sum((pred[:, :3] - deltas[:, :3]) ** 2, axis=1)
    err_r = np.sum((pred[:, 3:] - deltas[:, 3:]) ** 2, axis=1)
    train_mask = splits == "train"
    if not np.any(train_mask):
        raise DataError("dataset has no training split; cannot normalize")
    eta_t = float(np.max(err_t[train_mask]) - np.min(err_t[train_mask]))
    eta_r = float(np.max(err_r[train_mask]) - np.min(err_r[train_mask]))
    return TeacherCache(
        ids=ids,
        splits=splits,
        pred=pred,
        rep=rep,
        err_t=err_t,
        err_r=err_r,
        eta_t=eta_t,
        eta_r=eta_r,
        phi_t=_phi_from_errors(err_t, eta_t),
        phi_r=_phi_from_errors(err_r, eta_r),
    )


def save_cache(cache: TeacherCache, path) -> None:
    with open(path, "wb") as f:
        np.savez(
            f,
            format=np.array(CACHE_FORMAT),
            ids=cache.ids,
            splits=np.array([str(s) for s in cache.splits]),
            pred=cache.pred,
            rep=cache.rep,
            err_t=cache.err_t,
            err_r=cache.err_r,
            eta=np.array([cache.eta_t, cache.eta_r]),
            phi_t=cache.phi_t,
            phi_r=cache.phi_r,
        )


def load_cache(path) -> TeacherCache:
    with np.load(path, allow_pickle=False) as data:
        if str(data["format"]) != CACHE_FORMAT:
            raise DataError(f"unsupported cache format: {data['format']}")
        return TeacherCache(
            ids=data["ids"],
            splits=np.array([str(s) for s in data["splits"]], dtype=object),
            pred=data["pred"],
            rep=data["rep"],
            err_t=data["err_t"],
            err_r=data["err_r"],
            eta_t=float(data["eta"][0]),
            eta_r=float(data["eta"][1]),
            phi_t=data["phi_t"],
            phi_r=data["phi_r"],
        )


def histogram_right_closed(values, num_bins: int):
    """Histogram with right-closed bins over [min, max]; first bin includes
    its left edge. All-equal input collapses to a single bin."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = float(np.min(values)), float(np.max(values))
    if lo == hi:
        return np.array([lo, hi]), np.array([values.size])
    edges = np.linspace(lo, hi, num_bins + 1)
    idx = np.clip(np.searchsorted(edges, values, side="left") - 1, 0, num_bins - 1)
    counts = np.bincount(idx, minlength=num_bins)
    return edges, counts


def export_error_distribution(cache: TeacherCache, path, num_bins: int = 30) -> None:
    """Write teacher error histograms (translation and rotation) as CSV.

    Squared errors are what the trust weights use; unsquared errors are
    exported alongside for inspection.
    """
    tables = []
    for group, err in (("translation", cache.err_t), ("rotation", cache.err_r)):
        for kind, vals in (("squared", err), ("unsquared", np.sqrt(err))):
            edges, counts = histogram_right_closed(vals, num_bins)
            for b in range(len(counts)):
                tables.append((group, kind, edges[b], edges[b + 1], counts[b]))
    with open(path, "w") as f:
        f.write("group,kind,bin_left,bin_right,count\n")
        for group, kind, left, right, count in tables:
            f.write(f"{group},{kind},{format_float(left)},{format_float(right)},{int(count)}\n")
