"""Batch commands behind the CLI: keyframes, build-captions, evaluate, split, report.

Every command is resumable.  Per-video results are written atomically as
they finish, finished work is skipped on rerun, provider calls go through
the response cache, and final artifacts are sorted before writing so the
worker schedule never shows up in the output.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from PIL import Image

from . import captiongen, protocol
from .cache import CachedChat, CachedEmbedder, ResponseCache
from .captiongen import CaptionRecord, PromptTemplate
from .config import RunConfig
from .dataset import (
    Manifest,
    VideoRecord,
    dump_jsonl,
    load_captions,
    load_lexicon,
    load_manifest,
    read_jsonl,
    save_captions,
    save_manifest,
)
from .errors import ConfigError, HarcapError, MissingArtifacts, ParseError
from .keyframe import KeyframeSelector, load_frames
from .metrics import (
    BertPrecisionEvaluator,
    CosineEvaluator,
    JudgeEvaluator,
    KeywordEvaluator,
    MetricVerdict,
    Sample,
)
from .providers import ChatMessage, ImagePart

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_COVERAGE = 3
EXIT_PROVIDER = 4

REPORT_COLUMNS = ("phase1", "CS", "CV1", "CV2", "all")
_COLUMN_TITLES = {"phase1": "Phase1", "CS": "CS", "CV1": "CV1", "CV2": "CV2", "all": "All"}


def safe_name(video_id: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]", "_", video_id)


def write_json(obj, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    os.replace(tmp, path)


def write_text(text: str, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.{os.getpid()}.tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class Providers:
    """Uncached provider handles; ``None`` means build from the config."""
    caption: object = None
    judge: object = None
    embedding: object = None
    token_embedding: object = None
    candidates: dict = field(default_factory=dict)


@dataclass
class CommandResult:
    exit_code: int
    summary: dict


class Workspace:
    """Resolved inputs, output layout and cached providers for one config."""

    def __init__(self, cfg: RunConfig, providers: Providers | None = None):
        self.cfg = cfg
        self.raw = providers or Providers()
        self.cache = ResponseCache(cfg.cache_dir)
        self.out = Path(cfg.out)
        self._manifest = None
        self._lexicon = None

    # inputs
    @property
    def manifest(self) -> Manifest:
        if self._manifest is None:
            self._manifest = load_manifest(self.cfg.manifest)
        return self._manifest

    @property
    def lexicon(self):
        if self._lexicon is None:
            self._lexicon = load_lexicon(self.cfg.lexicon)
        return self._lexicon

    @property
    def template(self) -> PromptTemplate:
        if self.cfg.templates is None:
            return captiongen.DEFAULT_TEMPLATE
        return captiongen.load_templates(self.cfg.templates)

    def frames_dir(self, video: VideoRecord) -> Path:
        p = Path(video.frames_uri)
        return p if p.is_absolute() else Path(self.cfg.manifest).parent / p

    # outputs
    def keyframe_file(self, video: VideoRecord) -> Path:
        return self.out / "keyframes" / f"{safe_name(video.video_id)}.txt"

    def keyframe_images(self, video: VideoRecord, n: int | None = None) -> list[ImagePart]:
        path = self.keyframe_file(video)
        if not path.exists():
            raise MissingArtifacts(f"no keyframes for {video.video_id}; run `harcap keyframes` first")
        names = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln]
        if n is not None:
            names = names[:n]
        return [image_part(self.frames_dir(video) / name) for name in names]

    # providers
    def caption_chat(self):
        self.raw.caption = self.raw.caption or self.cfg.provider("caption").chat(self.cfg.parallelism)
        return CachedChat(self.raw.caption, self.cache, "caption")

    def judge_chat(self):
        self.raw.judge = self.raw.judge or self.cfg.provider("judge").chat(self.cfg.parallelism)
        return CachedChat(self.raw.judge, self.cache, "judge")

    def candidate_chat(self, name: str):
        spec = self.cfg.candidate(name)
        if name not in self.raw.candidates:
            self.raw.candidates[name] = spec.chat(self.cfg.parallelism)
        return CachedChat(self.raw.candidates[name], self.cache, f"candidate:{name}")

    def embedder(self):
        self.raw.embedding = self.raw.embedding or self.cfg.provider("embedding").embedder(self.cfg.parallelism)
        return CachedEmbedder(self.raw.embedding, self.cache)

    def token_embedder(self):
        if self.raw.token_embedding is None:
            self.raw.token_embedding = self.cfg.provider("token_embedding").embedder(self.cfg.parallelism)
        return CachedEmbedder(self.raw.token_embedding, self.cache)


def image_part(path: Path) -> ImagePart:
    """Read a still for a prompt; anything that is not PNG/JPEG is re-encoded as PNG."""
    data = path.read_bytes()
    suffix = path.suffix.lower()
    if suffix == ".png":
        return ImagePart(data, "image/png")
    if suffix in (".jpg", ".jpeg"):
        return ImagePart(data, "image/jpeg")
    with Image.open(io.BytesIO(data)) as img:
        buf = io.BytesIO()
        img.save(buf, format="PNG")
    return ImagePart(buf.getvalue(), "image/png")


def _run_pool(fn: Callable, items: Iterable, parallelism: int) -> list:
    items = list(items)
    if parallelism == 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        futures = [pool.submit(fn, x) for x in items]
        return [f.result() for f in futures]


# -- keyframes ---------------------------------------------------------------------


def cmd_keyframes(cfg: RunConfig, providers: Providers | None = None) -> CommandResult:
    ws = Workspace(cfg, providers)
    kf = cfg.keyframe

    def work(video: VideoRecord):
        target = ws.keyframe_file(video)
        if target.exists():
            return "skipped", None
        try:
            paths, frames = load_frames(ws.frames_dir(video))
            selector = KeyframeSelector(n_keyframes=cfg.frames_per_prompt, min_diff=kf.min_diff,
                                        min_brightness=kf.min_brightness, max_brightness=kf.max_brightness,
                                        min_entropy=kf.min_entropy, random_state=cfg.seed)
            idx = selector.fit(frames).keyframe_indices_
        except (OSError, HarcapError, ValueError) as exc:
            logger.warning("keyframes failed for %s: %s", video.video_id, exc)
            return "failed", f"{type(exc).__name__}: {exc}"
        write_text("".join(paths[i].name + "\n" for i in idx), target)
        return "computed", None

    results = _run_pool(work, ws.manifest.records, cfg.parallelism)
    summary = {"computed": 0, "skipped": 0, "failed": {}}
    for video, (status, err) in zip(ws.manifest.records, results):
        if status == "failed":
            summary["failed"][video.video_id] = err
        else:
            summary[status] += 1
    write_json(summary["failed"], ws.out / "keyframes" / "_failures.json")
    return CommandResult(EXIT_COVERAGE if summary["failed"] else EXIT_OK, summary)


# -- caption building --------------------------------------------------------------


def cmd_build_captions(cfg: RunConfig, providers: Providers | None = None) -> CommandResult:
    ws = Workspace(cfg, providers)
    lexicon = ws.lexicon
    tpl = ws.template
    chat = ws.caption_chat()
    done_dir = ws.out / "captions.d"
    missing = [r.label for r in ws.manifest if r.label not in lexicon]
    if missing:
        raise ConfigError(f"lexicon lacks entries for label(s) {sorted(set(missing))}")

    def work(video: VideoRecord):
        path = done_dir / f"{safe_name(video.video_id)}.json"
        if path.exists():
            saved = json.loads(path.read_text(encoding="utf-8"))
            if saved["record"]["status"] == "verified":
                return "reused", saved, None
        try:
            images = ws.keyframe_images(video, cfg.frames_per_prompt)
            record, trace = captiongen.generate_caption(video, lexicon, chat, images, tpl, cfg.max_attempts,
                                                        max_images=cfg.frames_per_prompt)
        except (OSError, HarcapError) as exc:
            logger.warning("caption generation failed for %s: %s", video.video_id, exc)
            return "failed", None, f"{type(exc).__name__}: {exc}"
        saved = {"record": record.to_dict(), "trace": trace.to_dict()}
        write_json(saved, path)
        return "generated", saved, None

    results = _run_pool(work, ws.manifest.records, cfg.parallelism)
    saved_rows, failures = [], {}
    counts = {"generated": 0, "reused": 0}
    for video, (status, saved, err) in zip(ws.manifest.records, results):
        if status == "failed":
            failures[video.video_id] = err
            continue
        counts[status] += 1
        saved_rows.append(saved)
    saved_rows.sort(key=lambda s: s["record"]["video_id"])
    records = [CaptionRecord.from_dict(s["record"]) for s in saved_rows]
    save_captions(records, ws.out / "captions.jsonl")
    dump_jsonl((s["trace"] for s in saved_rows), ws.out / "traces.jsonl")

    cov = captiongen.verify_dataset(records, lexicon)
    total = cov.total + len(failures)
    offending = sorted(set(cov.offending_ids) | set(failures))
    coverage = {
        "total": total,
        "verified": cov.verified,
        "coverage_fraction": 1.0 if total == 0 else cov.verified / total,
        "offending_ids": offending,
        "empty": total == 0,
        "provider_failures": dict(sorted(failures.items())),
    }
    write_json(coverage, ws.out / "coverage.json")
    summary = {**counts, **coverage}
    if failures:
        code = EXIT_PROVIDER
    elif coverage["coverage_fraction"] < 1.0:
        code = EXIT_COVERAGE
    else:
        code = EXIT_OK
    return CommandResult(code, summary)


# -- evaluation --------------------------------------------------------------------


def protocol_records(ws: Workspace, name: str) -> tuple[list[VideoRecord], list[str]]:
    cfg = ws.cfg
    if name == "CS":
        split = protocol.split_cs(ws.manifest)
        return split.test, split.flags
    if name == "CV":
        split = protocol.split_cv(ws.manifest, "CV1")
        return split.test, split.flags
    if name == "phase1":
        picked, under = protocol.sample_per_class(ws.manifest, cfg.phase1_per_class, cfg.seed)
        return picked, [f"under-filled classes: {under}"] if under else []
    return list(ws.manifest.records), []


def _evaluators(ws: Workspace) -> dict:
    cfg = ws.cfg
    out = {}
    for name in cfg.metrics:
        if name == "keywords":
            out[name] = KeywordEvaluator(ws.lexicon)
        elif name == "cosine":
            out[name] = CosineEvaluator(ws.embedder(), cfg.thresholds.cosine_threshold)
        elif name == "bert_precision":
            out[name] = BertPrecisionEvaluator(ws.token_embedder(), cfg.thresholds.bert_threshold)
        elif name == "vlm_judge":
            out[name] = JudgeEvaluator(ws.judge_chat())
    return out


def candidate_prompt(text: str, images: list[ImagePart]) -> list[ChatMessage]:
    return [ChatMessage("user", (*images, text))]


def cmd_evaluate(cfg: RunConfig, model: str, providers: Providers | None = None,
                 protocols: Iterable[str] | None = None) -> CommandResult:
    """Caption the test videos with candidate ``model`` and score every configured metric."""
    started = time.monotonic()
    ws = Workspace(cfg, providers)
    spec = cfg.candidate(model)
    protocols = tuple(protocols or cfg.protocols)
    bad = set(protocols) - {"CS", "CV", "phase1", "all"}
    if bad:
        raise ConfigError(f"unknown protocol(s) {sorted(bad)}")
    captions_path = ws.out / "captions.jsonl"
    if not captions_path.exists():
        raise MissingArtifacts(f"{captions_path} not found; run `harcap build-captions` first")
    truth = {r.video_id: r for r in load_captions(captions_path) if r.status == "verified"}
    evaluators = _evaluators(ws)
    chat = ws.candidate_chat(model)
    n_frames = min(spec.frames or cfg.frames_per_prompt, cfg.frames_per_prompt)

    sets, flags, excluded = {}, {}, {}
    for name in protocols:
        records, fl = protocol_records(ws, name)
        flags[name] = fl
        excluded[name] = sorted(r.video_id for r in records if r.video_id not in truth)
        sets[name] = [r for r in records if r.video_id in truth]
    videos = {r.video_id: r for recs in sets.values() for r in recs}

    def work(video: VideoRecord):
        gt = truth[video.video_id].caption
        try:
            images = ws.keyframe_images(video, cfg.frames_per_prompt)
            generated = chat.chat_complete(candidate_prompt(cfg.candidate_prompt, images[:n_frames])).strip()
        except (OSError, HarcapError) as exc:
            err = f"error: {type(exc).__name__}: {exc}"
            return None, {m: MetricVerdict(m, False, detail=err, video_id=video.video_id, model_id=model)
                          for m in evaluators}
        sample = Sample(video.video_id, video.label, gt, generated, tuple(images))
        verdicts = {}
        for m, ev in evaluators.items():
            try:
                v = ev.evaluate(sample)
                verdicts[m] = MetricVerdict(v.metric, v.correct, v.score, v.threshold, v.detail,
                                            video.video_id, v.model_id or model)
            except (HarcapError, ValueError) as exc:
                verdicts[m] = MetricVerdict(m, False, detail=f"error: {type(exc).__name__}: {exc}",
                                            video_id=video.video_id, model_id=model)
        return generated, verdicts

    ordered = sorted(videos)
    results = dict(zip(ordered, _run_pool(lambda vid: work(videos[vid]), ordered, cfg.parallelism)))

    model_dir = ws.out / "verdicts" / safe_name(model)
    dump_jsonl(({"video_id": vid, "caption": results[vid][0]} for vid in ordered if results[vid][0] is not None),
               model_dir / "candidates.jsonl")
    failures = {}
    reports = {}
    for name, recs in sets.items():
        ids = sorted(r.video_id for r in recs)
        reports[name] = {}
        for m in evaluators:
            rows = [results[vid][1][m] for vid in ids]
            dump_jsonl((v.to_dict() for v in rows), model_dir / name / f"{m}.jsonl")
            label = {r.video_id: r.label for r in recs}
            reports[name][m] = protocol.mca([(v.video_id, label[v.video_id], v.correct) for v in rows]).to_dict()
            failures.setdefault(m, set()).update(v.video_id for v in rows if v.detail.startswith("error:"))
    run_record = {
        "run_id": hashlib.sha256(json.dumps({"config": cfg.snapshot(), "model": model}, sort_keys=True)
                                 .encode()).hexdigest()[:16],
        "model": model,
        "config": cfg.snapshot(),
        "mca": reports,
        "flags": flags,
        "excluded_without_ground_truth": excluded,
        "failures": {m: sorted(v) for m, v in failures.items()},
        "counts": {name: len(recs) for name, recs in sets.items()},
    }
    write_json(run_record, model_dir / "run.json")
    elapsed = time.monotonic() - started
    write_json({"wall_clock_seconds": elapsed}, ws.out / "timings" / f"evaluate-{safe_name(model)}.json")
    n_fail = sum(len(v) for v in failures.values())
    summary = {"model": model, "counts": run_record["counts"], "failures": n_fail,
               "mca": {p: {m: r["mca"] for m, r in per.items()} for p, per in reports.items()}}
    return CommandResult(EXIT_PROVIDER if n_fail else EXIT_OK, summary)


# -- splits ------------------------------------------------------------------------


def cmd_split(cfg: RunConfig, name: str = "all", providers: Providers | None = None) -> CommandResult:
    ws = Workspace(cfg, providers)
    names = ("CS", "CV1", "CV2", "phase1") if name == "all" else (name,)
    summary = {}
    for n in names:
        if n == "phase1":
            picked, under = protocol.sample_per_class(ws.manifest, cfg.phase1_per_class, cfg.seed)
            save_manifest(picked, ws.out / "splits" / "phase1.csv", "csv",
                          extra={"split": {r.video_id: "test" for r in picked}})
            summary[n] = {"test": len(picked), "flags": [f"under-filled classes: {under}"] if under else []}
            continue
        if n not in ("CS", "CV1", "CV2"):
            raise ConfigError(f"unknown protocol {n!r}; choose CS, CV1, CV2, phase1 or all")
        split = protocol.make_split(ws.manifest, n)
        rows = split.train + split.test
        tag = {r.video_id: "train" for r in split.train} | {r.video_id: "test" for r in split.test}
        save_manifest(rows, ws.out / "splits" / f"{n}.csv", "csv", extra={"split": tag})
        if split.restricted_taxonomy is not None:
            write_text("".join(f"{lab}\n" for lab in sorted(split.restricted_taxonomy)),
                       ws.out / "splits" / "cv_taxonomy.txt")
        summary[n] = {"train": len(split.train), "test": len(split.test), "flags": split.flags}
    return CommandResult(EXIT_OK, summary)


# -- report ------------------------------------------------------------------------


def collect_verdicts(out: Path) -> dict:
    """{(model, metric): {protocol_dir: [MetricVerdict, ...]}} from ``out/verdicts``."""
    found: dict = {}
    root = Path(out) / "verdicts"
    if not root.is_dir():
        return found
    for model_dir in sorted(p for p in root.iterdir() if p.is_dir()):
        for proto_dir in sorted(p for p in model_dir.iterdir() if p.is_dir()):
            for f in sorted(proto_dir.glob("*.jsonl")):
                rows = [MetricVerdict.from_dict(d) for d in read_jsonl(f)]
                if rows:
                    found.setdefault((model_dir.name, f.stem), {})[proto_dir.name] = rows
    return found


def build_report(found: dict, labels: dict[str, str]) -> dict:
    rows = []
    for (model, metric), by_proto in sorted(found.items()):
        cells, per_class = {}, {}
        for proto, verdicts in by_proto.items():
            try:
                rep = protocol.mca([(v.video_id, labels[v.video_id], v.correct) for v in verdicts])
            except KeyError as exc:
                raise ParseError(f"verdict for unknown video {exc.args[0]!r}") from None
            cols = ("CV1", "CV2") if proto == "CV" else (proto,)
            for col in cols:
                cells[col] = rep.mca
            per_class[proto] = rep.to_dict()["per_class"]
        rows.append({"model": model, "metric": metric, "mca": cells, "per_class": per_class})
    columns = [c for c in REPORT_COLUMNS if any(c in r["mca"] for r in rows)]
    notes = []
    if any("CV1" in r["mca"] for r in rows):
        notes.append("CV1 and CV2 share the camera-2 test set; untrained models score identically on both.")
    return {"columns": columns, "rows": rows, "notes": notes}


def render_table(report: dict) -> str:
    cols = report["columns"]
    header = ["Model", "Metric"] + [_COLUMN_TITLES[c] for c in cols]
    body = [[r["model"], r["metric"]] + [f"{100 * r['mca'][c]:.1f}" if c in r["mca"] else "-" for c in cols]
            for r in report["rows"]]
    widths = [max(len(row[i]) for row in [header] + body) for i in range(len(header))]

    def line(cells):
        return "  ".join(c.ljust(w) if i < 2 else c.rjust(w) for i, (c, w) in enumerate(zip(cells, widths))).rstrip()

    out = [line(header), "  ".join("-" * w for w in widths)] + [line(b) for b in body]
    if report["notes"]:
        out += [""] + [f"Note: {n}" for n in report["notes"]]
    out.append("")
    out.append("Per-class accuracy (%)")
    for r in report["rows"]:
        for proto, classes in sorted(r["per_class"].items()):
            out.append(f"[{r['model']} / {r['metric']} / {proto}]")
            w = max(len(c) for c in classes)
            for cls, t in classes.items():
                out.append(f"  {cls.ljust(w)}  {100 * t['accuracy']:5.1f}  ({t['correct']}/{t['total']})")
    return "\n".join(out) + "\n"


def cmd_report(cfg: RunConfig, providers: Providers | None = None) -> CommandResult:
    ws = Workspace(cfg, providers)
    found = collect_verdicts(ws.out)
    if not found:
        raise MissingArtifacts(f"no verdict files under {ws.out / 'verdicts'}; run `harcap evaluate` first")
    labels = {r.video_id: r.label for r in ws.manifest}
    report = build_report(found, labels)
    write_json(report, ws.out / "report.json")
    text = render_table(report)
    write_text(text, ws.out / "report.txt")
    return CommandResult(EXIT_OK, {"table": text.split("\n\nPer-class")[0]})
