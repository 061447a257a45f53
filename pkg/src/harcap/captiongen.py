"""Ground-truth caption generation with keyword-driven refinement."""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .dataset import CaptionRecord, KeywordLexicon, VideoRecord, keyword_hits
from .errors import ParseError, TooManyImages
from .providers import ChatMessage, ChatProvider, ImagePart

DEFAULT_MAX_ATTEMPTS = 5
DEFAULT_MAX_IMAGES = 2

_SLOTS = ("label", "keywords", "previous")


@dataclass(frozen=True)
class PromptTemplate:
    system_text: str
    initial_user_text: str
    refine_user_text: str

    def __post_init__(self):
        for name in ("initial_user_text", "refine_user_text"):
            if "{keywords}" not in getattr(self, name):
                raise ParseError(f"{name} must reference the {{keywords}} slot")
        if self.initial_user_text == self.refine_user_text:
            raise ParseError("refine template must differ from the initial template")


DEFAULT_TEMPLATE = PromptTemplate(
    system_text=(
        "You write short, factual ground-truth captions for videos of people doing everyday "
        "activities at home. Describe only the activity."
    ),
    initial_user_text=(
        "The frames above come from a video labelled {label}. Write one sentence describing "
        "what the person is doing. Relevant keywords: {keywords}."
    ),
    refine_user_text=(
        "The frames above come from a video labelled {label}. Write one sentence describing "
        "what the person is doing. Your sentence MUST contain at least one of these exact "
        "keywords: {keywords}. Your previous caption used none of them: \"{previous}\""
    ),
)


def fill(template: str, **values: str) -> str:
    """Substitute ``{label}``/``{keywords}``/``{previous}``; other braces are left alone."""
    out = template
    for slot in _SLOTS:
        if slot in values:
            out = out.replace("{" + slot + "}", values[slot])
    return out


def parse_templates(text: str) -> PromptTemplate:
    """Parse a template file made of ``[system]``, ``[initial]`` and ``[refine]`` sections."""
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.splitlines():
        m = re.fullmatch(r"\[(\w+)\]\s*", line)
        if m:
            current = m.group(1).lower()
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif line.strip() and not line.lstrip().startswith("#"):
            raise ParseError("template text found before the first [section] header")
    missing = [s for s in ("system", "initial", "refine") if s not in sections]
    if missing:
        raise ParseError(f"template file lacks section(s) {missing}")
    body = {k: "\n".join(v).strip() for k, v in sections.items()}
    return PromptTemplate(body["system"], body["initial"], body["refine"])


def load_templates(path) -> PromptTemplate:
    return parse_templates(Path(path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class Attempt:
    prompt_text: str
    response_text: str
    matched_keywords: tuple[str, ...]


@dataclass
class GenerationTrace:
    video_id: str
    attempts: list[Attempt] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "attempts": [
                {"prompt_text": a.prompt_text, "response_text": a.response_text,
                 "matched_keywords": list(a.matched_keywords)}
                for a in self.attempts
            ],
        }


def _keyword_text(keywords: Sequence[str]) -> str:
    return ", ".join(dict.fromkeys(keywords))


def _user_message(images: Sequence[ImagePart], text: str, max_images: int) -> ChatMessage:
    if not images:
        raise ValueError("at least one image is required")
    if len(images) > max_images:
        raise TooManyImages(f"{len(images)} images given, at most {max_images} allowed")
    return ChatMessage("user", (*images, text))


def build_initial_prompt(label: str, keywords: Sequence[str], images: Sequence[ImagePart],
                         tpl: PromptTemplate = DEFAULT_TEMPLATE,
                         max_images: int = DEFAULT_MAX_IMAGES) -> list[ChatMessage]:
    if not keywords:
        raise ValueError("keywords must be non-empty")
    text = fill(tpl.initial_user_text, label=label, keywords=_keyword_text(keywords))
    return [ChatMessage("system", (tpl.system_text,)), _user_message(images, text, max_images)]


def build_refine_prompt(label: str, keywords: Sequence[str], images: Sequence[ImagePart],
                        previous: str, tpl: PromptTemplate = DEFAULT_TEMPLATE,
                        max_images: int = DEFAULT_MAX_IMAGES) -> list[ChatMessage]:
    if not keywords:
        raise ValueError("keywords must be non-empty")
    text = fill(tpl.refine_user_text, label=label, keywords=_keyword_text(keywords), previous=previous)
    return [ChatMessage("system", (tpl.system_text,)), _user_message(images, text, max_images)]


def generate_caption(video: VideoRecord, lexicon: KeywordLexicon, chat: ChatProvider,
                     images: Sequence[ImagePart], tpl: PromptTemplate = DEFAULT_TEMPLATE,
                     max_attempts: int = DEFAULT_MAX_ATTEMPTS,
                     max_images: int = DEFAULT_MAX_IMAGES) -> tuple[CaptionRecord, GenerationTrace]:
    """Ask ``chat`` for a caption until it mentions one of the label's keywords.

    The first request uses the initial template; every later one uses the
    refine template.  After ``max_attempts`` misses the last caption comes
    back with status ``exhausted``.  Provider errors propagate.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    keywords = lexicon[video.label]
    trace = GenerationTrace(video.video_id)
    caption = ""
    for n in range(1, max_attempts + 1):
        if n == 1:
            messages = build_initial_prompt(video.label, keywords, images, tpl, max_images)
        else:
            messages = build_refine_prompt(video.label, keywords, images, caption, tpl, max_images)
        caption = chat.chat_complete(messages).strip()
        hits = keyword_hits(caption, keywords)
        trace.attempts.append(Attempt(messages[-1].text, caption, tuple(hits)))
        if hits:
            return CaptionRecord(video.video_id, video.label, caption, tuple(hits), n, "verified"), trace
    return CaptionRecord(video.video_id, video.label, caption, (), max_attempts, "exhausted"), trace


@dataclass(frozen=True)
class CoverageReport:
    total: int
    verified: int
    coverage_fraction: float
    offending_ids: list[str]
    empty: bool = False

    def to_dict(self) -> dict:
        return {"total": self.total, "verified": self.verified, "coverage_fraction": self.coverage_fraction,
                "offending_ids": list(self.offending_ids), "empty": self.empty}


def verify_dataset(records: Sequence[CaptionRecord], lexicon: KeywordLexicon) -> CoverageReport:
    """Recount keyword coverage from the caption text, ignoring stored hits."""
    offending = [r.video_id for r in records
                 if r.label not in lexicon or not keyword_hits(r.caption, lexicon[r.label])]
    total = len(records)
    if total == 0:
        return CoverageReport(0, 0, 1.0, [], empty=True)
    verified = total - len(offending)
    return CoverageReport(total, verified, verified / total, offending)
