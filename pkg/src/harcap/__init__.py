"""Ground-truth caption building and caption scoring for activity-recognition VLM benchmarks."""

from .captiongen import PromptTemplate, generate_caption, verify_dataset
from .dataset import (
    CaptionRecord,
    KeywordLexicon,
    Manifest,
    VideoRecord,
    keyword_hits,
    load_captions,
    load_lexicon,
    load_manifest,
    normalize_tokens,
    save_captions,
)
from .keyframe import HistogramKMeans, KeyframeSelector, kmeans, select_keyframes
from .metrics import (
    BertPrecisionEvaluator,
    CosineEvaluator,
    JudgeEvaluator,
    KeywordEvaluator,
    MetricConfig,
    MetricVerdict,
    bert_precision,
    cosine_similarity,
)
from .protocol import mca, sample_per_class, split_cs, split_cv

__version__ = "0.1.0"
