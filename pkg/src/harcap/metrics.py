"""Caption scorers: keyword matching, cosine similarity, token precision and VLM-as-judge.

Thresholded scorers call a caption correct only when the score is strictly
above the threshold, so a score sitting exactly on it fails.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .dataset import KeywordLexicon, keyword_hits
from .errors import AmbiguousJudgeOutput, DimensionMismatch, EmptyTokenization, ZeroVector
from .providers import ChatMessage, ChatProvider, EmbeddingVector, ImagePart, TextEmbedder, TokenEmbedder

logger = logging.getLogger(__name__)

METRIC_NAMES = ("keywords", "cosine", "bert_precision", "vlm_judge")


@dataclass(frozen=True)
class MetricConfig:
    cosine_threshold: float = 0.5
    bert_threshold: float = 0.9

    def __post_init__(self):
        for name in ("cosine_threshold", "bert_threshold"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")


@dataclass(frozen=True)
class MetricVerdict:
    metric: str
    correct: bool
    score: Optional[float] = None
    threshold: Optional[float] = None
    detail: str = ""
    video_id: str = ""
    model_id: str = ""

    def to_dict(self) -> dict:
        return {"video_id": self.video_id, "metric": self.metric, "correct": self.correct,
                "score": self.score, "threshold": self.threshold, "detail": self.detail,
                "model_id": self.model_id}

    @classmethod
    def from_dict(cls, d: dict) -> "MetricVerdict":
        return cls(metric=d["metric"], correct=bool(d["correct"]), score=d.get("score"),
                   threshold=d.get("threshold"), detail=d.get("detail", ""),
                   video_id=d.get("video_id", ""), model_id=d.get("model_id", ""))


def exceeds(score: float, threshold: float) -> bool:
    return score > threshold


# -- keyword matching ----------------------------------------------------------------


def eval_keywords(generated: str, label: str, lexicon: KeywordLexicon) -> MetricVerdict:
    hits = keyword_hits(generated, lexicon[label])
    return MetricVerdict("keywords", bool(hits), detail=",".join(hits))


# -- cosine similarity ---------------------------------------------------------------


def _values(v) -> np.ndarray:
    return np.asarray(v.values if isinstance(v, EmbeddingVector) else v, dtype=np.float64)


def cosine_similarity(a, b) -> float:
    a, b = _values(a), _values(b)
    if a.shape != b.shape:
        raise DimensionMismatch(f"{a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def eval_cosine(ground_truth: str, generated: str, embedder: TextEmbedder,
                cfg: MetricConfig = MetricConfig()) -> MetricVerdict:
    if not ground_truth or not generated:
        raise ValueError("both captions must be non-empty")
    a, b = embedder.embed_text([ground_truth, generated])
    score = cosine_similarity(a, b)
    return MetricVerdict("cosine", exceeds(score, cfg.cosine_threshold), score, cfg.cosine_threshold,
                         model_id=embedder.model_id)


# -- token-embedding precision ---------------------------------------------------------


def _unit_rows(vectors: Sequence[EmbeddingVector]) -> np.ndarray:
    M = np.asarray([_values(v) for v in vectors], dtype=np.float64)
    norms = np.linalg.norm(M, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ZeroVector("token embedding with zero norm")
    return M / norms


def bert_score(reference: str, candidate: str, token_embedder: TokenEmbedder) -> tuple[float, float, float]:
    """Greedy-matching precision, recall and F1 over token embeddings.

    No IDF weighting and no baseline rescaling.
    """
    if not reference or not candidate:
        raise ValueError("both captions must be non-empty")
    ref = token_embedder.embed_tokens(reference)
    cand = token_embedder.embed_tokens(candidate)
    if not ref.vectors or not cand.vectors:
        raise EmptyTokenization("a caption produced no tokens")
    sim = np.clip(_unit_rows(cand.vectors) @ _unit_rows(ref.vectors).T, -1.0, 1.0)
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    f1 = 0.0 if precision + recall <= 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def bert_precision(reference: str, candidate: str, token_embedder: TokenEmbedder) -> float:
    return bert_score(reference, candidate, token_embedder)[0]


def eval_bert(ground_truth: str, generated: str, token_embedder: TokenEmbedder,
              cfg: MetricConfig = MetricConfig()) -> MetricVerdict:
    p, r, f = bert_score(ground_truth, generated, token_embedder)
    return MetricVerdict("bert_precision", exceeds(p, cfg.bert_threshold), p, cfg.bert_threshold,
                         detail=f"recall={r:.6f} f1={f:.6f}", model_id=token_embedder.model_id)


# -- VLM as judge ----------------------------------------------------------------------

JUDGE_SYSTEM = (
    "You are evaluating an activity-recognition model. Look at the frames, compare the "
    "generated caption with the ground-truth caption and decide whether the generated caption "
    "describes the same activity. Output only True or False."
)
JUDGE_SYSTEM_STRICT = (
    JUDGE_SYSTEM + " Your entire reply must be the single word True or the single word False, "
    "with no explanation."
)


def build_judge_prompt(images: Sequence[ImagePart], ground_truth: str, generated: str,
                       strict: bool = False) -> list[ChatMessage]:
    if not images:
        raise ValueError("the judge needs at least one image")
    text = (
        f"Ground-truth caption: {ground_truth}\n"
        f"Generated caption: {generated}\n"
        "Is the generated caption a valid description of the activity? Output only True or False."
    )
    system = JUDGE_SYSTEM_STRICT if strict else JUDGE_SYSTEM
    return [ChatMessage("system", (system,)), ChatMessage("user", (*images, text))]


_STRIP = " \t\r\n.,;:!?\"'`*()[]{}"


def parse_judge(raw: str) -> bool:
    word = raw.strip(_STRIP).lower()
    if word == "true":
        return True
    if word == "false":
        return False
    raise AmbiguousJudgeOutput(raw)


def eval_judge(ground_truth: str, generated: str, chat: ChatProvider,
               keyframes: Sequence[ImagePart]) -> MetricVerdict:
    """Ask the judge once, retry once with a stricter instruction, else abstain."""
    raw = ""
    for strict in (False, True):
        raw = chat.chat_complete(build_judge_prompt(keyframes, ground_truth, generated, strict))
        try:
            return MetricVerdict("vlm_judge", parse_judge(raw), detail=raw.strip(),
                                 model_id=chat.params.model_id)
        except AmbiguousJudgeOutput:
            logger.info("ambiguous judge output %r (strict=%s)", raw, strict)
    return MetricVerdict("vlm_judge", False, detail="abstain", model_id=chat.params.model_id)


# -- estimator-style wrappers ----------------------------------------------------------


@dataclass(frozen=True)
class Sample:
    """One scoring case: the reference caption and a model's output for a video."""
    video_id: str
    label: str
    ground_truth: str
    generated: str
    images: tuple[ImagePart, ...] = ()


class _Evaluator(BaseEstimator):
    name = ""

    def evaluate(self, sample: Sample) -> MetricVerdict:
        raise NotImplementedError

    def fit(self, X=None, y=None):
        return self

    def verdicts(self, samples: Sequence[Sample]) -> list[MetricVerdict]:
        out = []
        for s in samples:
            v = self.evaluate(s)
            out.append(MetricVerdict(v.metric, v.correct, v.score, v.threshold, v.detail, s.video_id, v.model_id))
        return out

    def predict(self, samples: Sequence[Sample]) -> np.ndarray:
        return np.array([v.correct for v in self.verdicts(samples)], dtype=bool)


class KeywordEvaluator(_Evaluator):
    name = "keywords"

    def __init__(self, lexicon: KeywordLexicon | None = None):
        self.lexicon = lexicon

    def evaluate(self, sample):
        return eval_keywords(sample.generated, sample.label, self.lexicon)


class CosineEvaluator(_Evaluator):
    name = "cosine"

    def __init__(self, embedder: TextEmbedder | None = None, threshold: float = 0.5):
        self.embedder = embedder
        self.threshold = threshold

    def evaluate(self, sample):
        return eval_cosine(sample.ground_truth, sample.generated, self.embedder,
                           MetricConfig(cosine_threshold=self.threshold))


class BertPrecisionEvaluator(_Evaluator):
    name = "bert_precision"

    def __init__(self, token_embedder: TokenEmbedder | None = None, threshold: float = 0.9):
        self.token_embedder = token_embedder
        self.threshold = threshold

    def evaluate(self, sample):
        return eval_bert(sample.ground_truth, sample.generated, self.token_embedder,
                         MetricConfig(bert_threshold=self.threshold))


class JudgeEvaluator(_Evaluator):
    name = "vlm_judge"

    def __init__(self, chat: ChatProvider | None = None):
        self.chat = chat

    def evaluate(self, sample):
        return eval_judge(sample.ground_truth, sample.generated, self.chat, sample.images)
