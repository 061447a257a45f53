"""Toyota Smarthome evaluation protocols and Mean Class Accuracy."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import ActivityLabel, Manifest, VideoRecord

CS_TRAIN_SUBJECTS = frozenset({3, 4, 6, 7, 9, 12, 13, 15, 17, 19, 25})
CV_TEST_CAMERA = 2
CV_TRAIN_CAMERAS = {"CV1": frozenset({1}), "CV2": frozenset({1, 3, 4, 6, 7})}
REFERENCE_CV_CLASSES = 19


@dataclass(frozen=True)
class SplitSpec:
    name: str
    train_subject_ids: frozenset[int] = frozenset()
    train_camera_ids: frozenset[int] = frozenset()
    test_camera_id: int | None = None


SPLITS = {
    "CS": SplitSpec("CS", train_subject_ids=CS_TRAIN_SUBJECTS),
    "CV1": SplitSpec("CV1", train_camera_ids=CV_TRAIN_CAMERAS["CV1"], test_camera_id=CV_TEST_CAMERA),
    "CV2": SplitSpec("CV2", train_camera_ids=CV_TRAIN_CAMERAS["CV2"], test_camera_id=CV_TEST_CAMERA),
}


@dataclass
class SplitResult:
    name: str
    train: list[VideoRecord]
    test: list[VideoRecord]
    restricted_taxonomy: frozenset[ActivityLabel] | None = None
    flags: list[str] = field(default_factory=list)


def split_cs(manifest: Manifest | Iterable[VideoRecord]) -> SplitResult:
    records = list(manifest)
    train = [r for r in records if r.subject_id in CS_TRAIN_SUBJECTS]
    test = [r for r in records if r.subject_id not in CS_TRAIN_SUBJECTS]
    result = SplitResult("CS", train, test)
    absent = sorted(CS_TRAIN_SUBJECTS - {r.subject_id for r in train})
    if absent:
        result.flags.append(f"train subjects absent from manifest: {absent}")
    if not test:
        result.flags.append("test split is empty")
    return result


def cv_taxonomy(manifest: Manifest | Iterable[VideoRecord]) -> frozenset[ActivityLabel]:
    """Labels recorded by both camera 1 and camera 2."""
    seen: dict[int, set] = defaultdict(set)
    for r in manifest:
        seen[r.camera_id].add(r.label)
    return frozenset(seen[1] & seen[CV_TEST_CAMERA])


def split_cv(manifest: Manifest | Iterable[VideoRecord], variant: str = "CV1") -> SplitResult:
    if variant not in CV_TRAIN_CAMERAS:
        raise ValueError(f"unknown cross-view variant {variant!r}")
    records = list(manifest)
    taxonomy = cv_taxonomy(records)
    cameras = CV_TRAIN_CAMERAS[variant]
    admitted = [r for r in records if r.label in taxonomy]
    train = [r for r in admitted if r.camera_id in cameras]
    test = [r for r in admitted if r.camera_id == CV_TEST_CAMERA]
    result = SplitResult(variant, train, test, taxonomy)
    if len(taxonomy) != REFERENCE_CV_CLASSES:
        result.flags.append(
            f"cross-view taxonomy has {len(taxonomy)} classes (reference dataset: {REFERENCE_CV_CLASSES})"
        )
    if not test:
        result.flags.append("test split is empty")
    return result


def make_split(manifest, name: str) -> SplitResult:
    if name == "CS":
        return split_cs(manifest)
    return split_cv(manifest, name)


def sample_per_class(manifest: Manifest | Iterable[VideoRecord], n: int,
                     seed: int = 0) -> tuple[list[VideoRecord], list[str]]:
    """Draw up to ``n`` videos per label without replacement.

    Returns the sample (grouped by label, manifest order within a label) and
    a list of labels that had fewer than ``n`` videos.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    by_label: dict[str, list[VideoRecord]] = defaultdict(list)
    for r in manifest:
        by_label[r.label].append(r)
    rng = np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))
    picked, underfilled = [], []
    for label in sorted(by_label):
        pool = by_label[label]
        if len(pool) <= n:
            if len(pool) < n:
                underfilled.append(label)
            picked.extend(pool)
            continue
        idx = np.sort(rng.choice(len(pool), size=n, replace=False))
        picked.extend(pool[i] for i in idx)
    return picked, underfilled


@dataclass(frozen=True)
class ClassTally:
    total: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.total


@dataclass
class MCAReport:
    per_class: dict[ActivityLabel, ClassTally]
    mca: float

    def to_dict(self) -> dict:
        return {
            "mca": self.mca,
            "per_class": {
                label: {"total": t.total, "correct": t.correct, "accuracy": t.accuracy}
                for label, t in sorted(self.per_class.items())
            },
        }


def tally(verdicts: Iterable[tuple[str, ActivityLabel, bool]]) -> dict[ActivityLabel, ClassTally]:
    counts: dict[str, list[int]] = defaultdict(lambda: [0, 0])
    for _video_id, label, correct in verdicts:
        counts[label][0] += 1
        counts[label][1] += bool(correct)
    return {label: ClassTally(t, c) for label, (t, c) in counts.items()}


def mca_from_tallies(per_class: dict[ActivityLabel, ClassTally]) -> MCAReport:
    present = [t for t in per_class.values() if t.total > 0]
    mean = math.fsum(t.accuracy for t in present) / len(present) if present else 0.0
    return MCAReport(dict(per_class), mean)


def mca(verdicts: Sequence[tuple[str, ActivityLabel, bool]]) -> MCAReport:
    """Per-class accuracy, then the unweighted mean over classes that have samples."""
    return mca_from_tallies(tally(verdicts))
