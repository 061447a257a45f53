"""Domain records, manifest/lexicon/caption file I/O and keyword matching.

Keyword matching is token based. Both the caption and the keyword are run
through :func:`normalize_tokens`, which lowercases, splits on anything that
is not a letter or digit and strips a small set of English inflection
suffixes.  Stems are then compared with a trailing silent ``e`` folded away,
so ``wiping``, ``wiped``, ``wipes`` and ``wipe`` all meet on ``wip``.
"""

from __future__ import annotations

import csv
import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .errors import DuplicateId, DuplicateKeyword, EmptyEntry, MissingLexiconEntry, ParseError

ActivityLabel = str

MANIFEST_COLUMNS = ("video_id", "label", "subject_id", "camera_id", "frames_uri")
CAPTION_STATUSES = ("verified", "exhausted")

_SUFFIXES = ("ing", "ed", "es", "s")
_SIBILANT_ENDINGS = ("s", "x", "z", "ch", "sh")
_MIN_STEM = 3
_TOKEN_RE = re.compile(r"[^\W_]+")


@dataclass(frozen=True)
class VideoRecord:
    video_id: str
    label: ActivityLabel
    subject_id: int
    camera_id: int
    frames_uri: str

    def __post_init__(self):
        if not self.video_id:
            raise ParseError("video_id must be non-empty")
        if not self.label:
            raise ParseError(f"{self.video_id}: label must be non-empty")
        if self.subject_id < 0 or self.camera_id < 0:
            raise ParseError(f"{self.video_id}: subject_id and camera_id must be non-negative")
        if not self.frames_uri:
            raise ParseError(f"{self.video_id}: frames_uri must be non-empty")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VideoRecord":
        missing = [c for c in MANIFEST_COLUMNS if c not in d or d[c] in (None, "")]
        if missing:
            raise ParseError(f"missing field(s) {missing} in {d!r}")
        try:
            return cls(
                video_id=str(d["video_id"]),
                label=str(d["label"]),
                subject_id=int(d["subject_id"]),
                camera_id=int(d["camera_id"]),
                frames_uri=str(d["frames_uri"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad field in {d!r}: {exc}") from exc


@dataclass(frozen=True)
class Manifest:
    records: tuple[VideoRecord, ...] = ()
    taxonomy: frozenset[ActivityLabel] = frozenset()

    def __post_init__(self):
        seen = set()
        for r in self.records:
            if r.video_id in seen:
                raise DuplicateId(r.video_id)
            seen.add(r.video_id)
            if r.label not in self.taxonomy:
                raise ParseError(f"{r.video_id}: label {r.label!r} not in taxonomy")

    @classmethod
    def from_records(cls, records: Iterable[VideoRecord]) -> "Manifest":
        records = tuple(records)
        return cls(records, frozenset(r.label for r in records))

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[VideoRecord]:
        return iter(self.records)

    def by_id(self) -> dict[str, VideoRecord]:
        return {r.video_id: r for r in self.records}


@dataclass(frozen=True)
class KeywordLexicon:
    entries: dict[ActivityLabel, tuple[str, ...]] = field(default_factory=dict)

    def __getitem__(self, label: ActivityLabel) -> tuple[str, ...]:
        try:
            return self.entries[label]
        except KeyError:
            raise MissingLexiconEntry(label) from None

    def __contains__(self, label: object) -> bool:
        return label in self.entries

    def __len__(self) -> int:
        return len(self.entries)


@dataclass(frozen=True)
class CaptionRecord:
    video_id: str
    label: ActivityLabel
    caption: str
    matched_keywords: tuple[str, ...]
    attempts: int
    status: str

    def __post_init__(self):
        object.__setattr__(self, "matched_keywords", tuple(self.matched_keywords))
        if self.status not in CAPTION_STATUSES:
            raise ParseError(f"{self.video_id}: unknown status {self.status!r}")
        if self.attempts < 1:
            raise ParseError(f"{self.video_id}: attempts must be >= 1")
        if (self.status == "verified") != bool(self.matched_keywords):
            raise ParseError(
                f"{self.video_id}: status {self.status!r} inconsistent with "
                f"matched_keywords {list(self.matched_keywords)}"
            )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["matched_keywords"] = list(self.matched_keywords)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CaptionRecord":
        try:
            return cls(
                video_id=str(d["video_id"]),
                label=str(d["label"]),
                caption=str(d["caption"]),
                matched_keywords=tuple(str(k) for k in d["matched_keywords"]),
                attempts=int(d["attempts"]),
                status=str(d["status"]),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ParseError):
                raise
            raise ParseError(f"bad caption record {d!r}: {exc}") from exc


# -- tokens and keyword matching ---------------------------------------------


def _stem(token: str) -> str:
    while True:
        for suffix in _SUFFIXES:
            if not token.endswith(suffix) or len(token) - len(suffix) < _MIN_STEM:
                continue
            stem = token[: -len(suffix)]
            if suffix == "es" and not stem.endswith(_SIBILANT_ENDINGS):
                continue
            if suffix == "s" and stem.endswith("s"):
                continue
            token = stem
            break
        else:
            return token


def normalize_tokens(text: str) -> list[str]:
    """Lowercase ``text``, split it into alphanumeric runs and stem each run.

    >>> normalize_tokens("The person is cleaning dishes.")
    ['the', 'person', 'is', 'clean', 'dish']
    """
    return [_stem(t) for t in _TOKEN_RE.findall(text.lower()) if t]


def _fold(stem: str) -> str:
    if len(stem) > _MIN_STEM and stem.endswith("e"):
        return stem[:-1]
    return stem


def _match_keys(text: str) -> list[str]:
    return [_fold(t) for t in normalize_tokens(text)]


def _contains_run(haystack: Sequence[str], needle: Sequence[str]) -> bool:
    n = len(needle)
    if n == 0:
        return False
    return any(list(haystack[i : i + n]) == list(needle) for i in range(len(haystack) - n + 1))


def keyword_hits(caption: str, keywords: Sequence[str]) -> list[str]:
    """Keywords found in ``caption``, in lexicon order and without repeats."""
    caption_keys = _match_keys(caption)
    hits: list[str] = []
    for kw in keywords:
        if kw in hits:
            continue
        if _contains_run(caption_keys, _match_keys(kw)):
            hits.append(kw)
    return hits


# -- manifest I/O ----------------------------------------------------------------


def _detect_format(path: Path, fmt: str | None) -> str:
    if fmt is None:
        fmt = "jsonl" if path.suffix.lower() in (".jsonl", ".json") else "csv"
    if fmt not in ("csv", "jsonl"):
        raise ParseError(f"unknown manifest format {fmt!r}")
    return fmt


def load_manifest(path, format: str | None = None) -> Manifest:
    path = Path(path)
    fmt = _detect_format(path, format)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            text = fh.read()
            if not text.strip():
                return Manifest()
            reader = csv.DictReader(text.splitlines())
            missing = [c for c in MANIFEST_COLUMNS if c not in (reader.fieldnames or [])]
            if missing:
                raise ParseError(f"{path}: header lacks column(s) {missing}")
            for lineno, row in enumerate(reader, start=2):
                if None in row:
                    raise ParseError(f"{path}:{lineno}: too many fields")
                try:
                    records.append(VideoRecord.from_dict(row))
                except ParseError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
        else:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
                if not isinstance(obj, dict):
                    raise ParseError(f"{path}:{lineno}: expected a JSON object")
                try:
                    records.append(VideoRecord.from_dict(obj))
                except ParseError as exc:
                    raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return Manifest.from_records(records)


def save_manifest(manifest: Manifest | Iterable[VideoRecord], path, format: str | None = None,
                  extra: dict[str, dict[str, str]] | None = None) -> None:
    """Write a manifest; ``extra`` maps column name -> {video_id: value}."""
    path = Path(path)
    fmt = _detect_format(path, format)
    records = list(manifest)
    extra = extra or {}
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if fmt == "csv":
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(list(MANIFEST_COLUMNS) + list(extra))
            for r in records:
                writer.writerow(
                    [r.video_id, r.label, r.subject_id, r.camera_id, r.frames_uri]
                    + [extra[col][r.video_id] for col in extra]
                )
        else:
            for r in records:
                row = r.to_dict()
                for col in extra:
                    row[col] = extra[col][r.video_id]
                fh.write(json.dumps(row) + "\n")


# -- lexicon I/O -----------------------------------------------------------------


def lexicon_from_mapping(mapping: dict) -> KeywordLexicon:
    """Validate and lowercase a label -> keyword list mapping.

    A keyword repeated verbatim is kept as listed.  Two spellings that only
    collide after lowercasing are rejected.
    """
    if not isinstance(mapping, dict):
        raise ParseError("lexicon must be a JSON object mapping label -> list of keywords")
    entries = {}
    for label, words in mapping.items():
        if not label:
            raise ParseError("lexicon label must be non-empty")
        if not isinstance(words, list) or not all(isinstance(w, str) for w in words):
            raise ParseError(f"lexicon entry {label!r} must be a list of strings")
        if not words:
            raise EmptyEntry(label)
        spelled: dict[str, str] = {}
        out = []
        for raw in words:
            kw = raw.strip().lower()
            if not kw or any(ch.isspace() for ch in kw):
                raise ParseError(f"lexicon entry {label!r}: bad keyword {raw!r}")
            if kw in spelled and spelled[kw] != raw:
                raise DuplicateKeyword(f"{label!r}: {spelled[kw]!r} and {raw!r}")
            spelled[kw] = raw
            out.append(kw)
        entries[str(label)] = tuple(out)
    return KeywordLexicon(entries)


def load_lexicon(path) -> KeywordLexicon:
    try:
        with open(path, encoding="utf-8") as fh:
            mapping = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return lexicon_from_mapping(mapping)


def save_lexicon(lexicon: KeywordLexicon, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({k: list(v) for k, v in lexicon.entries.items()}, fh, indent=2)
        fh.write("\n")


# -- caption I/O -----------------------------------------------------------------


def dump_jsonl(rows: Iterable[dict], path) -> None:
    """Write rows as JSONL via a temp file and an atomic rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    os.replace(tmp, path)


def read_jsonl(path) -> list[dict]:
    rows = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
    return rows


def save_captions(records: Iterable[CaptionRecord], path) -> None:
    dump_jsonl((r.to_dict() for r in records), path)


def load_captions(path) -> list[CaptionRecord]:
    return [CaptionRecord.from_dict(d) for d in read_jsonl(path)]
