"""Keyframe selection: frame scoring, candidate filtering and histogram K-means.

The pipeline mirrors what common keyframe extractors do: score every frame
by its difference from the previous frame, its mean brightness and its
intensity entropy, drop the frames that fail any threshold, then cluster the
survivors' 64-bin intensity histograms and keep the frame nearest each
centroid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .errors import DimensionMismatch, KTooLarge, ParseError

N_BINS = 64
FRAME_EXTENSIONS = (".png", ".pgm")


@dataclass(frozen=True)
class Frame:
    index: int
    pixels: np.ndarray  # (height, width) uint8

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @classmethod
    def from_array(cls, arr, index: int = 0) -> "Frame":
        return cls(index, check_pixels(arr))


@dataclass(frozen=True)
class FrameScore:
    diff: float
    brightness: float
    entropy: float


@dataclass
class ClusterModel:
    k: int
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


@dataclass(frozen=True)
class KeyframeConfig:
    min_diff: float = 2.0
    min_brightness: float = 10.0
    max_brightness: float = 245.0
    min_entropy: float = 0.5


# -- validation helpers ----------------------------------------------------------


def check_pixels(arr) -> np.ndarray:
    """Coerce ``arr`` to a 2-D uint8 luma array, converting RGB(A) if needed."""
    arr = np.asarray(arr)
    if arr.ndim == 3 and arr.shape[2] in (3, 4):
        arr = rgb_to_luma(arr[..., :3])
    if arr.ndim != 2 or arr.size == 0:
        raise ValueError(f"expected a non-empty 2-D frame, got shape {arr.shape}")
    if arr.dtype != np.uint8:
        if np.any(arr < 0) or np.any(arr > 255) or not np.all(np.equal(np.mod(arr, 1), 0)):
            raise ValueError("pixel intensities must be integers in [0, 255]")
        arr = arr.astype(np.uint8)
    return arr


def check_frames(frames) -> list[Frame]:
    frames = [f if isinstance(f, Frame) else Frame.from_array(f, i) for i, f in enumerate(frames)]
    if not frames:
        raise ValueError("at least one frame is required")
    return frames


def check_features(features) -> np.ndarray:
    X = np.asarray([getattr(f, "bins", f) for f in features], dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError(f"expected a non-empty 2-D feature matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("features must be finite")
    return X


def rgb_to_luma(rgb) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    luma = 0.299 * rgb[..., 0] + 0.587 * rgb[..., 1] + 0.114 * rgb[..., 2]
    return np.clip(np.floor(luma + 0.5), 0, 255).astype(np.uint8)


# -- frame I/O -------------------------------------------------------------------


def list_frame_files(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frames directory not found: {directory}")
    return sorted(p for p in directory.iterdir() if p.suffix.lower() in FRAME_EXTENSIONS)


def load_frame(path, index: int = 0) -> Frame:
    with Image.open(path) as img:
        if img.mode == "L":
            arr = np.asarray(img)
        elif img.mode in ("RGB", "RGBA", "P", "LA"):
            arr = rgb_to_luma(np.asarray(img.convert("RGB")))
        elif img.mode == "1":
            arr = np.asarray(img.convert("L"))
        else:
            raise ParseError(f"{path}: unsupported image mode {img.mode!r} (8-bit stills only)")
    return Frame(index, np.ascontiguousarray(arr, dtype=np.uint8))


def load_frames(directory) -> tuple[list[Path], list[Frame]]:
    paths = list_frame_files(directory)
    if not paths:
        raise FileNotFoundError(f"no .png/.pgm frames in {directory}")
    return paths, [load_frame(p, i) for i, p in enumerate(paths)]


# -- scores ----------------------------------------------------------------------


def frame_difference(a: Frame, b: Frame) -> float:
    if a.pixels.shape != b.pixels.shape:
        raise DimensionMismatch(f"{a.pixels.shape} vs {b.pixels.shape}")
    return float(np.abs(a.pixels.astype(np.int16) - b.pixels.astype(np.int16)).mean())


def brightness(f: Frame) -> float:
    return float(f.pixels.mean())


def entropy(f: Frame) -> float:
    """Shannon entropy in bits of the 256-level intensity distribution."""
    counts = np.bincount(f.pixels.ravel(), minlength=256)
    p = counts[counts > 0] / f.pixels.size
    h = float(-(p * np.log2(p)).sum())
    return min(max(h, 0.0), 8.0)


def score_frames(frames: Sequence[Frame]) -> list[FrameScore]:
    scores = []
    for i, f in enumerate(frames):
        diff = math.inf if i == 0 else frame_difference(frames[i - 1], f)
        scores.append(FrameScore(diff, brightness(f), entropy(f)))
    return scores


def candidate_filter(frames: Sequence[Frame], cfg: KeyframeConfig | None = None) -> list[int]:
    """Indices passing all thresholds; every index when none pass."""
    cfg = cfg or KeyframeConfig()
    frames = check_frames(frames)
    keep = [
        i
        for i, s in enumerate(score_frames(frames))
        if s.diff >= cfg.min_diff
        and cfg.min_brightness <= s.brightness <= cfg.max_brightness
        and s.entropy >= cfg.min_entropy
    ]
    return keep or list(range(len(frames)))


@dataclass(frozen=True)
class HistogramFeature:
    bins: np.ndarray


def histogram64(f: Frame) -> HistogramFeature:
    counts = np.bincount(f.pixels.ravel() >> 2, minlength=N_BINS)
    return HistogramFeature(counts / f.pixels.size)


# -- K-means ---------------------------------------------------------------------


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def _sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=2)


def _kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_distances(X, X[chosen]).min(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every point coincides with a centre already
            idx = next(i for i in range(n) if i not in chosen)
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_distances(X, X[[idx]])[:, 0])
    return X[chosen].copy()


def _transfer_moves(X: np.ndarray, labels: np.ndarray, k: int) -> tuple[np.ndarray, list[float]]:
    """Move single points between clusters while any move lowers the inertia.

    Moving x from cluster a (size na, mean ca) to b (size nb, mean cb)
    changes the inertia by nb/(nb+1)|x-cb|^2 - na/(na-1)|x-ca|^2.  Returns
    the new labels and the inertia after each pass that moved something.
    """
    labels = labels.copy()
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, X.shape[1]))
    np.add.at(sums, labels, X)
    history: list[float] = []
    moved = True
    while moved:
        moved = False
        for i in range(X.shape[0]):
            a = labels[i]
            if counts[a] <= 1:
                continue
            nonempty = counts > 0
            means = np.divide(sums, counts[:, None], out=np.zeros_like(sums), where=nonempty[:, None])
            d = ((X[i] - means) ** 2).sum(axis=1)
            remove = counts[a] / (counts[a] - 1) * d[a]
            add = np.where(nonempty, counts / (counts + 1) * d, 0.0)
            add[a] = np.inf
            b = int(add.argmin())
            if add[b] < remove * (1 - 1e-12):
                labels[i] = b
                counts[a] -= 1
                counts[b] += 1
                sums[a] -= X[i]
                sums[b] += X[i]
                moved = True
        if moved:
            history.append(_partition_inertia(X, labels, k))
    return labels, history


def _partition_inertia(X: np.ndarray, labels: np.ndarray, k: int) -> float:
    total = 0.0
    for j in range(k):
        members = X[labels == j]
        if len(members):
            total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


class HistogramKMeans(ClusterMixin, BaseEstimator):
    """Lloyd's K-means with seeded k-means++ initialisation.

    Initialisation draws from a Philox counter-based generator keyed by
    ``random_state`` so a given seed reproduces bit for bit.  Assignment
    ties resolve to the lowest cluster index.  A cluster that empties is
    reseeded on the point farthest from its current centroid.

    With ``refine`` (the default) the converged partition is polished by
    single-point transfers, which escape many of the poor fixed points
    Lloyd's iteration stops at on small inputs.  Every transfer lowers the
    inertia, so the history stays non-increasing.

    Attributes
    ----------
    cluster_centers_ : ndarray of shape (n_clusters, n_features)
    labels_ : ndarray of shape (n_samples,)
    inertia_ : float
    inertia_history_ : list of float
        Inertia after every assignment step; non-increasing.
    n_iter_ : int
    """

    def __init__(self, n_clusters: int = 2, random_state: int = 0, max_iter: int = 100, refine: bool = True):
        self.n_clusters = n_clusters
        self.random_state = random_state
        self.max_iter = max_iter
        self.refine = refine

    def fit(self, X, y=None):
        X = check_features(X)
        k = int(self.n_clusters)
        if k < 1:
            raise ValueError("n_clusters must be >= 1")
        if k > X.shape[0]:
            raise KTooLarge(f"k={k} exceeds {X.shape[0]} features")
        centroids = _kmeans_plusplus(X, k, _rng(self.random_state))
        history: list[float] = []
        labels = None
        rows = np.arange(X.shape[0])
        n_iter = 0
        for n_iter in range(1, self.max_iter + 1):
            d2 = _sq_distances(X, centroids)
            new_labels = d2.argmin(axis=1)
            history.append(float(d2[rows, new_labels].sum()))
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            self._update(X, labels, centroids, d2[rows, labels])
        else:
            d2 = _sq_distances(X, centroids)
            labels = d2.argmin(axis=1)
            history.append(float(d2[rows, labels].sum()))
        if self.refine and k > 1:
            labels, extra = _transfer_moves(X, labels, k)
            if extra:
                for j in range(k):
                    if (labels == j).any():
                        centroids[j] = X[labels == j].mean(axis=0)
                history.extend(extra)
        self.cluster_centers_ = centroids
        self.labels_ = labels
        self.inertia_ = history[-1]
        self.inertia_history_ = history
        self.n_iter_ = n_iter
        return self

    @staticmethod
    def _update(X, labels, centroids, point_d2):
        used = set()
        for j in range(centroids.shape[0]):
            members = labels == j
            if members.any():
                centroids[j] = X[members].mean(axis=0)
                continue
            order = np.argsort(-point_d2, kind="stable")
            far = next((int(i) for i in order if int(i) not in used), None)
            if far is not None and point_d2[far] > 0:
                used.add(far)
                centroids[j] = X[far]

    def predict(self, X):
        check_is_fitted(self)
        return _sq_distances(check_features(X), self.cluster_centers_).argmin(axis=1)


def kmeans(features, k: int, seed: int = 0, max_iter: int = 100, refine: bool = True) -> ClusterModel:
    km = HistogramKMeans(n_clusters=k, random_state=seed, max_iter=max_iter, refine=refine).fit(features)
    return ClusterModel(k, km.cluster_centers_, km.labels_, km.inertia_, km.inertia_history_)


# -- selection -------------------------------------------------------------------


class KeyframeSelector(TransformerMixin, BaseEstimator):
    """Pick up to ``n_keyframes`` representative frames from one video.

    ``fit`` takes the video's frames in temporal order and stores the
    chosen positions in ``keyframe_indices_`` (ascending).  ``transform``
    returns the chosen frames.
    """

    def __init__(self, n_keyframes: int = 2, min_diff: float = 2.0, min_brightness: float = 10.0,
                 max_brightness: float = 245.0, min_entropy: float = 0.5, random_state: int = 0):
        self.n_keyframes = n_keyframes
        self.min_diff = min_diff
        self.min_brightness = min_brightness
        self.max_brightness = max_brightness
        self.min_entropy = min_entropy
        self.random_state = random_state

    @property
    def config(self) -> KeyframeConfig:
        return KeyframeConfig(self.min_diff, self.min_brightness, self.max_brightness, self.min_entropy)

    def fit(self, frames, y=None):
        if self.n_keyframes < 1:
            raise ValueError("n_keyframes must be >= 1")
        frames = check_frames(frames)
        candidates = candidate_filter(frames, self.config)
        X = check_features([histogram64(frames[i]) for i in candidates])
        k = min(self.n_keyframes, len(candidates))
        km = HistogramKMeans(n_clusters=k, random_state=self.random_state).fit(X)
        chosen = set()
        for j in range(k):
            members = np.flatnonzero(km.labels_ == j)
            if members.size == 0:
                members = np.arange(len(candidates))
            d2 = ((X[members] - km.cluster_centers_[j]) ** 2).sum(axis=1)
            # members are ascending, so argmin's first hit is the lowest index
            chosen.add(candidates[int(members[int(np.argmin(d2))])])
        self.n_frames_ = len(frames)
        self.candidates_ = candidates
        self.kmeans_ = km
        self.keyframe_indices_ = sorted(chosen)
        return self

    def transform(self, frames):
        check_is_fitted(self)
        frames = check_frames(frames)
        if len(frames) != self.n_frames_:
            raise ValueError(f"fitted on {self.n_frames_} frames, got {len(frames)}")
        return [frames[i] for i in self.keyframe_indices_]


def select_keyframes(frames: Sequence[Frame], k: int, cfg: KeyframeConfig | None = None,
                     seed: int = 0) -> list[int]:
    cfg = cfg or KeyframeConfig()
    selector = KeyframeSelector(n_keyframes=k, min_diff=cfg.min_diff, min_brightness=cfg.min_brightness,
                                max_brightness=cfg.max_brightness, min_entropy=cfg.min_entropy,
                                random_state=seed)
    return selector.fit(frames).keyframe_indices_
