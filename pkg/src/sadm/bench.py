"""Benchmark suite format, loading/validation, and the evaluation runner.

A suite file is a UTF-8 JSON array of case objects with fields: characters
(exactly 4 unique code points), font_type, category (one of five themes),
prompt, language (en/zh/ja/ko), optional desk_class mapping the prompt onto
a texture class, and the prompt template retained for interoperability with
full-scale models. Character masks are external bitmaps resolved as
``<mask_dir>/<font_type>/<codepoint hex, 4+ digits>.png``.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from .canvas import CanvasMask, load_mask_png
from .errors import BenchmarkFormatError, MaskResolutionError
from .metrics import m_sim_ext, m_sim_int, style_consistency
from .pipeline import font_effect_generate, select_reference
from .rng import derive_seed
from .synthdata import N_CLASSES

CATEGORIES = ("Nature", "Material", "Food", "Animal", "Landscape")
LANGUAGES = ("en", "zh", "ja", "ko")
FULL_SUITE_SIZE = 145
FULL_SUITE_LANGUAGE_COUNTS = {"en": 100, "zh": 15, "ja": 15, "ko": 15}


@dataclass(frozen=True)
class BenchmarkCase:
    characters: str
    font_type: str
    category: str
    prompt: str
    language: str
    desk_class: int | None = None
    prompt_template: str = "a shape fully made of {prompt}, artistic, trending on artstation."

    def validate(self, index: int) -> None:
        problems = []
        if len(self.characters) != 4 or len(set(self.characters)) != 4:
            problems.append(f"characters must be 4 unique code points, got {self.characters!r}")
        if self.category not in CATEGORIES:
            problems.append(f"category {self.category!r} not in {CATEGORIES}")
        if self.language not in LANGUAGES:
            problems.append(f"language {self.language!r} not in {LANGUAGES}")
        if not self.font_type:
            problems.append("font_type must be non-empty")
        if self.desk_class is not None and not (0 <= int(self.desk_class) < N_CLASSES):
            problems.append(f"desk_class {self.desk_class} outside [0, {N_CLASSES})")
        if problems:
            raise BenchmarkFormatError(f"case {index}: " + "; ".join(problems))


@dataclass(frozen=True)
class BenchmarkSuite:
    cases: tuple[BenchmarkCase, ...]

    def language_counts(self) -> dict[str, int]:
        counts = {lang: 0 for lang in LANGUAGES}
        for case in self.cases:
            counts[case.language] += 1
        return counts

    def is_full_suite(self) -> bool:
        return (len(self.cases) == FULL_SUITE_SIZE
                and self.language_counts() == FULL_SUITE_LANGUAGE_COUNTS)


def load_suite(path) -> BenchmarkSuite:
    """Parse and validate a suite file; an empty list is a valid subset."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise BenchmarkFormatError(f"{path}: {exc}") from exc
    if not isinstance(raw, list):
        raise BenchmarkFormatError(f"{path}: suite must be a JSON array")
    cases = []
    for i, entry in enumerate(raw):
        if not isinstance(entry, dict):
            raise BenchmarkFormatError(f"case {i}: expected an object")
        known = {f for f in BenchmarkCase.__dataclass_fields__}
        unknown = set(entry) - known
        if unknown:
            raise BenchmarkFormatError(f"case {i}: unknown fields {sorted(unknown)}")
        try:
            case = BenchmarkCase(**entry)
        except TypeError as exc:
            raise BenchmarkFormatError(f"case {i}: {exc}") from exc
        case.validate(i)
        cases.append(case)
    return BenchmarkSuite(tuple(cases))


def save_suite(suite: BenchmarkSuite, path) -> None:
    payload = [asdict(c) for c in suite.cases]
    Path(path).write_text(json.dumps(payload, ensure_ascii=False, indent=1) + "\n",
                          encoding="utf-8")


def shipped_suite() -> BenchmarkSuite:
    """The transcribed 145-case suite bundled with the package."""
    with resources.as_file(resources.files("sadm") / "data" / "generative_font.json") as p:
        return load_suite(p)


def mask_filename(character: str) -> str:
    return f"{ord(character):04x}.png"


def resolve_masks(case: BenchmarkCase, mask_dir) -> list[CanvasMask]:
    """Load the four per-character masks in case order, validated."""
    mask_dir = Path(mask_dir)
    masks = []
    for ch in case.characters:
        path = mask_dir / case.font_type / mask_filename(ch)
        if not path.exists():
            raise MaskResolutionError(
                f"no mask for character {ch!r} (U+{ord(ch):04X}) at {path}")
        mask = load_mask_png(path)
        mask.require_condition()
        masks.append(mask)
    return masks


def run_benchmark(denoiser, ae, embedder, prototypes, suite: BenchmarkSuite,
                  mask_dir, seed: int, *, use_saet: bool = True,
                  use_saa: bool = True, **pipeline_kwargs) -> dict:
    """Generate and score every desk-mapped case; skip the rest with warnings.

    Per case: the four masks drive the set-to-set pipeline with the case's
    texture class as prompt and a case-local seed; scores are the mean
    interior/exterior similarities over the four letters plus their pairwise
    style consistency.
    """
    case_rows = []
    skipped = []
    for index, case in enumerate(suite.cases):
        if case.desk_class is None:
            skipped.append({"index": index, "characters": case.characters,
                            "reason": "no desk_class mapping for prompt"})
            continue
        masks = resolve_masks(case, mask_dir)
        results = font_effect_generate(
            denoiser, ae, masks, int(case.desk_class),
            derive_seed(seed, "case", index), use_saet=use_saet, use_saa=use_saa,
            **pipeline_kwargs)
        ints = [m_sim_int(embedder, prototypes, r.image, r.source_mask, r.prompt)
                for r in results]
        exts = [m_sim_ext(embedder, prototypes, r.image, r.source_mask, r.prompt)
                for r in results]
        cons = style_consistency(embedder, [r.image for r in results])
        case_rows.append({
            "index": index,
            "characters": case.characters,
            "category": case.category,
            "language": case.language,
            "desk_class": int(case.desk_class),
            "reference": select_reference(masks),
            "m_sim_int": float(np.mean(ints)),
            "m_sim_ext": float(np.mean(exts)),
            "style_consistency": float(cons),
        })
    return {
        "seed": int(seed),
        "cases": case_rows,
        "skipped": skipped,
        "aggregates": aggregate_scores(case_rows),
    }


METRIC_KEYS = ("m_sim_int", "m_sim_ext", "style_consistency")


def aggregate_scores(case_rows) -> dict:
    """Exact arithmetic means per category and overall."""
    out: dict = {"overall": _mean_row(case_rows), "by_category": {}}
    for cat in CATEGORIES:
        rows = [r for r in case_rows if r["category"] == cat]
        if rows:
            out["by_category"][cat] = _mean_row(rows)
    return out


def _mean_row(rows) -> dict:
    if not rows:
        return {"n": 0}
    agg = {"n": len(rows)}
    for key in METRIC_KEYS:
        agg[key] = float(np.mean([r[key] for r in rows]))
    return agg
