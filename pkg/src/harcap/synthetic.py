"""Synthetic frames and a self-contained offline demo project.

``python -m harcap.synthetic DIR`` writes a small fake dataset (PNG frame
folders, manifest, lexicon, templates) and a config wired to the mock
providers, so the whole CLI can run without network access or licensed
videos.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from .captiongen import DEFAULT_TEMPLATE
from .keyframe import Frame

# Cook_Cleanup is a real curated entry (note the repeated "wipe"); the others are made up.
COOK_CLEANUP_KEYWORDS = [
    "cook", "organize", "wipe", "dish", "dishwasher", "load", "clean", "area", "counter", "table",
    "stove", "tidy", "kitchen", "scrub", "wipe", "disinfect", "spotless", "neat",
]

DEMO_LEXICON = {
    "Cook_Cleanup": COOK_CLEANUP_KEYWORDS,
    "Drink_Fromcup": ["drink", "sip", "cup", "mug", "beverage"],
    "Readbook": ["read", "book", "page", "novel"],
    "Usetelephone": ["phone", "telephone", "call", "talk", "dial"],
}

# scene brightness per label, so different activities look different
_SCENE_BASE = {"Cook_Cleanup": 70, "Drink_Fromcup": 120, "Readbook": 170, "Usetelephone": 95}

DEMO_SUBJECTS = (2, 3, 4, 5, 6, 7, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 25)


def textured_frame(rng: np.random.Generator, base: int, shape=(24, 32), texture=None,
                   jitter: int = 8) -> np.ndarray:
    if texture is None:
        texture = rng.integers(-40, 41, size=shape)
    noise = rng.integers(-jitter, jitter + 1, size=shape)
    return np.clip(base + texture + noise, 0, 255).astype(np.uint8)


def scene_frames(bases, per_scene: int, seed: int = 0, shape=(24, 32)) -> list[Frame]:
    """Consecutive static textured scenes with per-frame sensor noise."""
    rng = np.random.default_rng(seed)
    frames = []
    for base in bases:
        texture = rng.integers(-40, 41, size=shape)
        for _ in range(per_scene):
            frames.append(Frame(len(frames), textured_frame(rng, base, shape, texture)))
    return frames


def two_scene_frames(seed: int = 0) -> list[Frame]:
    """Ten frames: 0-4 a dark textured scene, 5-9 a bright textured one."""
    return scene_frames((60, 190), 5, seed)


def demo_config_text() -> str:
    return """\
# Offline demo: every provider is a deterministic mock.
manifest = "manifest.csv"
lexicon = "lexicon.json"
templates = "templates.txt"
seed = 0
parallelism = 4
frames_per_prompt = 2
max_attempts = 5
cache_dir = "cache"
out = "out"
metrics = ["keywords", "cosine", "bert_precision", "vlm_judge"]
protocols = ["CS", "CV", "phase1"]
phase1_per_class = 3
candidate_prompt = "Describe the activity the person is performing, in one sentence."

[thresholds]
cosine = 0.5
bert = 0.9

[keyframe]
min_diff = 2.0
min_brightness = 10.0
max_brightness = 245.0
min_entropy = 0.5

[providers.caption]
kind = "mock"
model = "mock-captioner"
rules = [
  ["labelled Cook_Cleanup.*MUST", "The person wipes the kitchen counter."],
  ["labelled Cook_Cleanup", "A person stands in the room."],
  ["labelled Drink_Fromcup", "The person is drinking from a cup."],
  ["labelled Readbook", "The person is reading a book on the sofa."],
  ["labelled Usetelephone.*MUST", "The person is talking on the phone."],
  ["labelled Usetelephone", "Someone sits near a table."],
]

[providers.judge]
kind = "mock"
model = "mock-judge"
rules = [["Generated caption: [^\\n]*(wip|drink|read|phone)", "True"]]
default = "False"

[providers.embedding]
kind = "mock"
dimension = 384

[providers.token_embedding]
kind = "mock"
dimension = 384

[candidates.mock-vlm]
kind = "mock"
model = "mock-vlm"
rules = [["Describe the activity", [
  "The person is wiping the kitchen counter.",
  "The person is drinking from a cup.",
  "The person is reading a book.",
  "The person is talking on the phone.",
  "The person is sleeping.",
]]]

[candidates.mock-terse]
kind = "mock"
model = "mock-terse"
frames = 1
rules = [["Describe the activity", ["A person.", "The person is drinking."]]]
"""


def template_text(tpl=DEFAULT_TEMPLATE) -> str:
    return f"[system]\n{tpl.system_text}\n\n[initial]\n{tpl.initial_user_text}\n\n[refine]\n{tpl.refine_user_text}\n"


def write_demo_project(root, frames_per_video: int = 6, seed: int = 0) -> Path:
    """Write the demo dataset and config under ``root``; returns the config path.

    Every subject records each activity once, alternating cameras 1, 2 and 3,
    except that Usetelephone is never seen by camera 1 so the cross-view
    taxonomy drops it.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    rows = ["video_id,label,subject_id,camera_id,frames_uri"]
    labels = sorted(DEMO_LEXICON)
    for i, subject in enumerate(DEMO_SUBJECTS):
        for j, label in enumerate(labels):
            camera = (i + j) % 3 + 1
            if label == "Usetelephone" and camera == 1:
                camera = 3
            video_id = f"{label}_p{subject:02d}_c{camera:02d}"
            frames_dir = root / "frames" / video_id
            frames_dir.mkdir(parents=True, exist_ok=True)
            base = _SCENE_BASE[label]
            # two shots per video: the second is brighter
            half = frames_per_video // 2
            texture_a = rng.integers(-40, 41, size=(24, 32))
            texture_b = rng.integers(-40, 41, size=(24, 32))
            for k in range(frames_per_video):
                texture, shift = (texture_a, 0) if k < half else (texture_b, 40)
                arr = textured_frame(rng, base + shift, texture=texture)
                Image.fromarray(arr).save(frames_dir / f"{k:05d}.png")
            rows.append(f"{video_id},{label},{subject},{camera},frames/{video_id}")
    (root / "manifest.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    (root / "lexicon.json").write_text(json.dumps(DEMO_LEXICON, indent=2) + "\n", encoding="utf-8")
    (root / "templates.txt").write_text(template_text(), encoding="utf-8")
    config = root / "config.toml"
    config.write_text(demo_config_text(), encoding="utf-8")
    return config


if __name__ == "__main__":
    if len(sys.argv) != 2:
        sys.exit("usage: python -m harcap.synthetic DIR")
    print(write_demo_project(sys.argv[1]))
