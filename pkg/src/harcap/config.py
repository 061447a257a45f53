"""Run configuration loaded from a TOML file.

Relative paths in the file resolve against the file's own directory.  The
demo written by ``python -m harcap.synthetic DIR`` uses every supported key.
"""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .captiongen import DEFAULT_MAX_ATTEMPTS
from .errors import ConfigError
from .keyframe import KeyframeConfig
from .metrics import METRIC_NAMES, MetricConfig
from .providers import HashEmbedder, OpenAIChat, OpenAIEmbedder, RuleChat

DEFAULT_CANDIDATE_PROMPT = "Describe the activity the person is performing, in one sentence."
PROTOCOL_NAMES = ("CS", "CV", "phase1", "all")

_TOP_KEYS = {
    "manifest", "lexicon", "templates", "seed", "parallelism", "frames_per_prompt", "max_attempts",
    "cache_dir", "out", "metrics", "protocols", "phase1_per_class", "candidate_prompt",
    "decoder_command", "thresholds", "keyframe", "providers", "candidates",
}
_PROVIDER_KINDS = ("openai", "mock")


@dataclass(frozen=True)
class ProviderSpec:
    kind: str
    model: str = ""
    base_url: str = ""
    max_tokens: int = 256
    temperature: float = 0.0
    dimension: int = 384
    frames: int | None = None
    rules: tuple[tuple[str, Any], ...] = ()
    default: str = ""

    @classmethod
    def from_dict(cls, name: str, d: dict) -> "ProviderSpec":
        if not isinstance(d, dict):
            raise ConfigError(f"provider {name!r} must be a table")
        unknown = set(d) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"provider {name!r}: unknown key(s) {sorted(unknown)}")
        kind = d.get("kind", "")
        if kind not in _PROVIDER_KINDS:
            raise ConfigError(f"provider {name!r}: kind must be one of {_PROVIDER_KINDS}")
        if kind == "openai" and not (d.get("base_url") and d.get("model")):
            raise ConfigError(f"provider {name!r}: openai providers need base_url and model")
        rules = []
        for rule in d.get("rules", []):
            if not (isinstance(rule, list) and len(rule) == 2 and isinstance(rule[0], str)):
                raise ConfigError(f"provider {name!r}: each rule is [pattern, reply or [replies]]")
            rules.append((rule[0], rule[1] if isinstance(rule[1], str) else tuple(rule[1])))
        spec = cls(**{**d, "rules": tuple(rules)})
        if spec.frames is not None and spec.frames < 1:
            raise ConfigError(f"provider {name!r}: frames must be >= 1")
        return spec

    def chat(self, parallelism: int = 4):
        if self.kind == "openai":
            return OpenAIChat(self.base_url, self.model, max_tokens=self.max_tokens,
                              temperature=self.temperature, max_in_flight=parallelism)
        return RuleChat([(p, list(r) if isinstance(r, tuple) else r) for p, r in self.rules],
                        default=self.default, model_id=self.model or "mock-chat",
                        max_in_flight=parallelism)

    def embedder(self, parallelism: int = 4):
        if self.kind == "openai":
            return OpenAIEmbedder(self.base_url, self.model, max_in_flight=parallelism)
        return HashEmbedder(self.dimension, model_id=self.model or None, max_in_flight=parallelism)


@dataclass(frozen=True)
class RunConfig:
    manifest: Path
    lexicon: Path
    templates: Path | None = None
    seed: int = 0
    parallelism: int = 4
    frames_per_prompt: int = 2
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    cache_dir: Path = Path("cache")
    out: Path = Path("out")
    metrics: tuple[str, ...] = ("keywords", "cosine")
    protocols: tuple[str, ...] = ("CS", "CV")
    phase1_per_class: int = 10
    candidate_prompt: str = DEFAULT_CANDIDATE_PROMPT
    decoder_command: str = ""
    thresholds: MetricConfig = MetricConfig()
    keyframe: KeyframeConfig = KeyframeConfig()
    providers: dict[str, ProviderSpec] = field(default_factory=dict)
    candidates: dict[str, ProviderSpec] = field(default_factory=dict)
    base_dir: Path = Path(".")
    raw: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        unknown = set(self.metrics) - set(METRIC_NAMES)
        if unknown:
            raise ConfigError(f"unknown metric(s) {sorted(unknown)}; choose from {METRIC_NAMES}")
        bad = set(self.protocols) - set(PROTOCOL_NAMES)
        if bad:
            raise ConfigError(f"unknown protocol(s) {sorted(bad)}; choose from {PROTOCOL_NAMES}")
        if self.frames_per_prompt not in (1, 2):
            raise ConfigError("frames_per_prompt must be 1 or 2")
        if self.parallelism < 1:
            raise ConfigError("parallelism must be >= 1")
        if self.max_attempts < 1:
            raise ConfigError("max_attempts must be >= 1")
        if self.phase1_per_class < 1:
            raise ConfigError("phase1_per_class must be >= 1")

    def with_overrides(self, **kw) -> "RunConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        for key in ("cache_dir", "out"):
            if key in kw:
                kw[key] = Path(kw[key]).resolve()
        return replace(self, **kw) if kw else self

    def provider(self, name: str) -> ProviderSpec:
        try:
            return self.providers[name]
        except KeyError:
            raise ConfigError(f"config has no [providers.{name}] table") from None

    def candidate(self, name: str) -> ProviderSpec:
        try:
            return self.candidates[name]
        except KeyError:
            raise ConfigError(f"config has no [candidates.{name}] table; known: {sorted(self.candidates)}") from None

    def snapshot(self) -> dict:
        """Everything that influences results, with paths as written in the file.

        Output and cache locations and the worker count are left out: they
        change where and how fast artifacts are produced, not their content.
        """
        snap = {k: v for k, v in self.raw.items() if k not in ("out", "cache_dir", "parallelism")}
        snap.update(
            seed=self.seed,
            frames_per_prompt=self.frames_per_prompt,
            max_attempts=self.max_attempts,
            metrics=list(self.metrics),
            protocols=list(self.protocols),
            phase1_per_class=self.phase1_per_class,
            candidate_prompt=self.candidate_prompt,
            thresholds=asdict(self.thresholds),
            keyframe=asdict(self.keyframe),
        )
        return snap


def _path(base: Path, value) -> Path:
    p = Path(value)
    return p if p.is_absolute() else (base / p).resolve()


def config_from_dict(raw: dict, base_dir: Path = Path(".")) -> RunConfig:
    unknown = set(raw) - _TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s) {sorted(unknown)}")
    for key in ("manifest", "lexicon"):
        if key not in raw:
            raise ConfigError(f"config needs a {key!r} path")
    try:
        th = raw.get("thresholds", {})
        unknown_th = set(th) - {"cosine", "bert"}
        if unknown_th:
            raise ConfigError(f"unknown threshold(s) {sorted(unknown_th)}")
        thresholds = MetricConfig(th.get("cosine", 0.5), th.get("bert", 0.9))
        keyframe = KeyframeConfig(**raw.get("keyframe", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    providers = {n: ProviderSpec.from_dict(n, d) for n, d in raw.get("providers", {}).items()}
    candidates = {n: ProviderSpec.from_dict(n, d) for n, d in raw.get("candidates", {}).items()}
    return RunConfig(
        manifest=_path(base_dir, raw["manifest"]),
        lexicon=_path(base_dir, raw["lexicon"]),
        templates=_path(base_dir, raw["templates"]) if raw.get("templates") else None,
        seed=int(raw.get("seed", 0)),
        parallelism=int(raw.get("parallelism", 4)),
        frames_per_prompt=int(raw.get("frames_per_prompt", 2)),
        max_attempts=int(raw.get("max_attempts", DEFAULT_MAX_ATTEMPTS)),
        cache_dir=_path(base_dir, raw.get("cache_dir", "cache")),
        out=_path(base_dir, raw.get("out", "out")),
        metrics=tuple(raw.get("metrics", ("keywords", "cosine"))),
        protocols=tuple(raw.get("protocols", ("CS", "CV"))),
        phase1_per_class=int(raw.get("phase1_per_class", 10)),
        candidate_prompt=raw.get("candidate_prompt", DEFAULT_CANDIDATE_PROMPT),
        decoder_command=raw.get("decoder_command", ""),
        thresholds=thresholds,
        keyframe=keyframe,
        providers=providers,
        candidates=candidates,
        base_dir=base_dir,
        raw=raw,
    )


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(raw, path.resolve().parent)
