import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from harcap.dataset import Manifest, VideoRecord
from harcap.protocol import (
    CS_TRAIN_SUBJECTS,
    ClassTally,
    cv_taxonomy,
    make_split,
    mca,
    mca_from_tallies,
    sample_per_class,
    split_cs,
    split_cv,
    tally,
)
from harcap.synthetic import DEMO_SUBJECTS


def rec(i, label="A", subject=3, camera=1):
    return VideoRecord(f"v{i:04d}", label, subject, camera, f"f/{i}")


def manifest(rows):
    return Manifest.from_records(rec(i, *row) for i, row in enumerate(rows))


records_strategy = st.lists(
    st.tuples(st.sampled_from("ABCDE"), st.integers(0, 30), st.integers(1, 7)), max_size=60
)


class TestCrossSubject:
    def test_eighteen_subjects(self):
        m = manifest([("A", s, 1) for s in DEMO_SUBJECTS])
        res = split_cs(m)
        assert len(res.train) == 11 and len(res.test) == 7
        assert {r.subject_id for r in res.train} == CS_TRAIN_SUBJECTS
        assert not {r.subject_id for r in res.test} & CS_TRAIN_SUBJECTS
        assert res.flags == []

    def test_only_two_subjects(self):
        res = split_cs(manifest([("A", 3, 1), ("A", 4, 1)]))
        assert len(res.train) == 2 and len(res.test) == 0 and res.flags

    def test_empty(self):
        res = split_cs(Manifest.from_records([]))
        assert res.train == [] and res.test == [] and res.flags

    @given(records_strategy)
    def test_disjoint_exhaustive(self, rows):
        m = manifest(rows)
        res = split_cs(m)
        ids_train = {r.video_id for r in res.train}
        ids_test = {r.video_id for r in res.test}
        assert not ids_train & ids_test
        assert ids_train | ids_test == {r.video_id for r in m}
        assert {r.subject_id for r in res.train} <= CS_TRAIN_SUBJECTS


class TestCrossView:
    def test_taxonomy_computed(self):
        m = manifest([("A", 1, 1), ("A", 1, 2), ("B", 1, 1), ("B", 1, 2), ("C", 1, 1), ("C", 1, 3)])
        res = split_cv(m, "CV1")
        assert res.restricted_taxonomy == {"A", "B"}
        assert all(r.label != "C" for r in res.train + res.test)

    def test_adversarial_other_cameras_do_not_count(self):
        # D on cameras 2 and 3 only, E on 1 and 4 only: neither qualifies
        m = manifest([("D", 1, 2), ("D", 1, 3), ("E", 1, 1), ("E", 1, 4), ("A", 1, 1), ("A", 2, 2)])
        assert cv_taxonomy(m) == {"A"}

    def test_train_cameras(self):
        rows = [(lab, 1, cam) for lab in "AB" for cam in (1, 2, 3)]
        m = manifest(rows)
        cv1, cv2 = split_cv(m, "CV1"), split_cv(m, "CV2")
        assert {r.camera_id for r in cv1.train} == {1}
        assert {r.camera_id for r in cv2.train} == {1, 3}
        assert {r.camera_id for r in cv1.test} == {r.camera_id for r in cv2.test} == {2}
        assert [r.video_id for r in cv1.test] == [r.video_id for r in cv2.test]

    def test_flags_class_count(self):
        res = split_cv(manifest([("A", 1, 1), ("A", 1, 2)]), "CV2")
        assert any("19" in f for f in res.flags)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            split_cv(manifest([]), "CV3")

    @given(records_strategy, st.sampled_from(["CV1", "CV2"]))
    def test_disjoint_exhaustive(self, rows, variant):
        m = manifest(rows)
        res = make_split(m, variant)
        tax = cv_taxonomy(m)
        allowed = {1} if variant == "CV1" else {1, 3, 4, 6, 7}
        admitted = {r.video_id for r in m if r.label in tax and (r.camera_id in allowed or r.camera_id == 2)}
        train = {r.video_id for r in res.train}
        test = {r.video_id for r in res.test}
        assert not train & test and train | test == admitted
        # brute-force oracle for the restriction
        oracle = {lab for lab in "ABCDE"
                  if any(r.label == lab and r.camera_id == 1 for r in m)
                  and any(r.label == lab and r.camera_id == 2 for r in m)}
        assert res.restricted_taxonomy == oracle


class TestSamplePerClass:
    def test_full_classes(self):
        m = manifest([(f"L{c:02d}", 1, 1) for c in range(31) for _ in range(12)])
        picked, under = sample_per_class(m, 10, seed=0)
        assert len(picked) == 310 and under == []
        assert len({r.video_id for r in picked}) == 310

    def test_underfilled(self):
        m = manifest([("A", 1, 1)] * 4 + [("B", 1, 1)] * 12)
        picked, under = sample_per_class(m, 10, seed=3)
        assert under == ["A"]
        assert sum(r.label == "A" for r in picked) == 4 and sum(r.label == "B" for r in picked) == 10

    def test_deterministic(self):
        m = manifest([("A", 1, 1)] * 30)
        assert sample_per_class(m, 5, seed=7) == sample_per_class(m, 5, seed=7)
        assert sample_per_class(m, 5, seed=7) != sample_per_class(m, 5, seed=8)

    def test_bad_n(self):
        with pytest.raises(ValueError):
            sample_per_class(manifest([]), 0)


def random_verdicts(rng, n):
    return [(f"v{i}", rng.choice("ABCD"), rng.random() < 0.6) for i in range(n)]


class TestMCA:
    def test_hand_fixture(self):
        report = mca([("v1", "A", True), ("v2", "A", False), ("v3", "B", True)])
        assert report.mca == 0.75
        assert report.per_class["A"].accuracy == 0.5 and report.per_class["B"].accuracy == 1.0
        assert report.to_dict()["per_class"]["A"] == {"total": 2, "correct": 1, "accuracy": 0.5}

    def test_all_correct(self):
        assert mca([("v", "A", True), ("w", "B", True)]).mca == 1.0

    def test_unweighted(self):
        verdicts = [("a", "A", True)] + [(f"b{i}", "B", True) for i in range(1000)]
        assert mca(verdicts).mca == 1.0
        verdicts = [("a", "A", False)] + [(f"b{i}", "B", True) for i in range(1000)]
        assert mca(verdicts).mca == 0.5

    def test_empty(self):
        assert mca([]).mca == 0.0 and mca([]).per_class == {}

    def test_absent_class_excluded(self):
        assert mca_from_tallies({"A": ClassTally(2, 2), "B": ClassTally(0, 0)}).mca == 1.0

    def test_invariances(self):
        rng = random.Random(0)
        for _ in range(200):
            v = random_verdicts(rng, rng.randint(1, 40))
            base = mca(v).mca
            shuffled = v[:]
            rng.shuffle(shuffled)
            assert mca(shuffled).mca == base
            assert mca(v + v).mca == base
            perm = dict(zip("ABCD", rng.sample("WXYZ", 4)))
            assert mca([(i, perm[lab], c) for i, lab, c in v]).mca == base

    def test_concatenation_equals_merged_tallies(self):
        rng = random.Random(1)
        for _ in range(100):
            a, b = random_verdicts(rng, 15), random_verdicts(rng, 20)
            ta, tb = tally(a), tally(b)
            merged = {k: ClassTally(ta.get(k, ClassTally(0, 0)).total + tb.get(k, ClassTally(0, 0)).total,
                                    ta.get(k, ClassTally(0, 0)).correct + tb.get(k, ClassTally(0, 0)).correct)
                      for k in set(ta) | set(tb)}
            assert mca(a + b).mca == mca_from_tallies(merged).mca
