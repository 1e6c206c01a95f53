"""Tolerant parsing of free-text model output into typed results.

The verdict lexicon lives in a data file (prompt_data/lexicon.json) so the
refusal/affirmation/negation word lists can evolve without code changes.
Polarity is defined against the question "is this image fake?": affirmation
words vote Yes (fake), negation words vote No (real), and the first match
scanning from the start of the text wins.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from importlib import resources
from typing import Optional

from .errors import JudgeParseError


class VerdictValue(str, Enum):
    YES = "yes"
    NO = "no"
    REJECT = "reject"


@dataclass(frozen=True)
class Verdict:
    value: VerdictValue
    # True when the text was neither a refusal nor parseable yes/no.
    unparseable: bool = False


class Method(str, Enum):
    GAN = "gan"
    DIFFUSION = "diffusion"
    UNKNOWN = "unknown"


class ForgeryType(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    UNKNOWN = "unknown"


@dataclass
class AnalysisReport:
    location_absolute: str = ""
    location_relative: str = ""
    contents: str = ""
    visible_details: list[str] = field(default_factory=list)
    method: Method = Method.UNKNOWN
    forgery_type: ForgeryType = ForgeryType.UNKNOWN
    missing_sections: list[str] = field(default_factory=list)
    diagnostics: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "location_absolute": self.location_absolute,
            "location_relative": self.location_relative,
            "contents": self.contents,
            "visible_details": list(self.visible_details),
            "method": self.method.value,
            "forgery_type": self.forgery_type.value,
            "missing_sections": list(self.missing_sections),
            "diagnostics": list(self.diagnostics),
        }


@lru_cache(maxsize=1)
def _lexicon() -> dict:
    text = resources.files("llmforensics.prompt_data").joinpath("lexicon.json").read_text(
        encoding="utf-8"
    )
    return json.loads(text)


def normalize(text: str) -> str:
    """Strip markdown decoration and collapse whitespace."""
    text = re.sub(r"[*_`#>]+", " ", text)
    return re.sub(r"\s+", " ", text).strip()


_WORD_RE = re.compile(r"[a-z]+(?:-[a-z]+)*")


def parse_verdict(raw_text: str) -> Verdict:
    """Total function from arbitrary text to Yes / No / Reject.

    Refusal phrases (and empty text) map to Reject; otherwise the first
    affirmation or negation word from the lexicon decides. Text with
    neither is Reject with the unparseable flag set.
    """
    lowered = normalize(raw_text).lower()
    if not lowered:
        return Verdict(VerdictValue.REJECT)
    lex = _lexicon()
    for phrase in lex["refusal_phrases"]:
        if phrase in lowered:
            return Verdict(VerdictValue.REJECT)
    affirm = set(lex["affirm_words"])
    negate = set(lex["negate_words"])
    for word in _WORD_RE.findall(lowered):
        if word in affirm:
            return Verdict(VerdictValue.YES)
        if word in negate:
            return Verdict(VerdictValue.NO)
    return Verdict(VerdictValue.REJECT, unparseable=True)


# Section headers are matched fuzzily: any line mentioning the task's key
# noun counts, tolerating numbering, markdown, and bold labels.
_SECTION_PATTERNS = {
    "location": re.compile(r"location|tampering area|tampered area.{0,20}position", re.I),
    "contents": re.compile(r"contents?\b", re.I),
    "details": re.compile(r"visible details|details\b|anomalies", re.I),
    "method": re.compile(r"generation method|method and type|method\b", re.I),
}
_SECTION_TITLES = {
    "location": "Location of the Tampering Area",
    "contents": "Contents of the Tampered Area",
    "details": "Visible Details in the Tampered Area",
    "method": "Generation Method and Type of the Image",
}

_HEADERISH_RE = re.compile(r"^\s*(?:[-*>]|\d+[.)]|#+)?\s*[*_]*\s*(.{0,90}?)[*_]*\s*:?\s*$")


def _split_sections(raw_text: str) -> dict[str, str]:
    """Split the response into the four task sections by fuzzy header lines."""
    lines = raw_text.splitlines()
    hits: list[tuple[int, str, str]] = []  # (line index, section key, trailing text)
    claimed: set[str] = set()
    for i, line in enumerate(lines):
        stripped = re.sub(r"[*_`#]+", "", line).strip()
        if not stripped or len(stripped) > 120:
            continue
        # Header lines are short; a trailing body after ':' is kept.
        head, _, tail = stripped.partition(":")
        for key, pat in _SECTION_PATTERNS.items():
            if key not in claimed and pat.search(head):
                hits.append((i, key, tail.strip()))
                claimed.add(key)
                break
    sections: dict[str, str] = {}
    for n, (i, key, tail) in enumerate(hits):
        end = hits[n + 1][0] if n + 1 < len(hits) else len(lines)
        body = "\n".join(lines[i + 1 : end]).strip()
        text = f"{tail}\n{body}".strip() if tail else body
        if not text and ":" not in lines[i]:
            # Prose line that matched a section pattern without a label
            # colon ("The tampering area is in the top left."): the line
            # itself is the content, not a bare title.
            text = re.sub(r"[*_`#]+", "", lines[i]).strip()
        sections[key] = text
    return sections


_ABS_RE = re.compile(
    r"absolute(?:\s+position)?\s*:?\s*(.+?)(?=relative(?:\s+position)?\s*:|$)",
    re.I | re.S,
)
_REL_RE = re.compile(r"relative(?:\s+position)?\s*:?\s*(.+)$", re.I | re.S)
_BULLET_RE = re.compile(r"^\s*(?:[-*•]|\d+[.)])\s*(.+)$")


def _split_details(text: str) -> list[str]:
    items = []
    for line in text.splitlines():
        m = _BULLET_RE.match(line)
        if m and m.group(1).strip():
            items.append(normalize(m.group(1)))
    if items:
        return items
    # No bullet structure: fall back to sentence-ish splitting.
    flat = normalize(text)
    return [s.strip() for s in re.split(r"(?<=[.;])\s+", flat) if s.strip()]


def _first_keyword(text: str, keywords: tuple[str, ...]) -> tuple[Optional[str], bool]:
    """Return (first keyword mentioned, both-present flag)."""
    lowered = text.lower()
    positions = {k: lowered.find(k) for k in keywords}
    found = {k: p for k, p in positions.items() if p >= 0}
    if not found:
        return None, False
    first = min(found, key=found.get)
    return first, len(found) > 1


def parse_report(raw_text: str) -> AnalysisReport:
    """Extract the four-task structured analysis from free text.

    Never raises: absent sections are listed in missing_sections and the
    corresponding fields stay empty/Unknown.
    """
    report = AnalysisReport()
    sections = _split_sections(raw_text)
    for key in _SECTION_PATTERNS:
        if key not in sections or not sections[key].strip():
            report.missing_sections.append(_SECTION_TITLES[key])

    loc = normalize(sections.get("location", ""))
    if loc:
        abs_m = _ABS_RE.search(loc)
        rel_m = _REL_RE.search(loc)
        if abs_m:
            report.location_absolute = abs_m.group(1).strip()
        if rel_m:
            report.location_relative = rel_m.group(1).strip()
        if not abs_m and not rel_m:
            report.location_absolute = loc

    contents = sections.get("contents", "")
    if contents.strip():
        report.contents = normalize(contents)

    details = sections.get("details", "")
    if details.strip():
        report.visible_details = _split_details(details)

    method_text = sections.get("method", "")
    if method_text.strip():
        method, ambiguous = _first_keyword(method_text, ("gan", "diffusion"))
        if method:
            report.method = Method(method)
            if ambiguous:
                report.diagnostics.append("method section mentions both gan and diffusion")
        ftype, ambiguous = _first_keyword(method_text, ("global", "local"))
        if ftype:
            report.forgery_type = ForgeryType(ftype)
            if ambiguous:
                report.diagnostics.append("method section mentions both global and local")
    return report


RUBRIC_NAMES = (
    "absolute_position_accuracy",
    "relative_position_accuracy",
    "readability",
    "completeness",
)

_RUBRIC_PATTERNS = {
    "absolute_position_accuracy": re.compile(r"absolute(?:\s+position)?(?:\s+accuracy)?", re.I),
    "relative_position_accuracy": re.compile(r"relative(?:\s+position)?(?:\s+accuracy)?", re.I),
    "readability": re.compile(r"readability", re.I),
    "completeness": re.compile(r"completeness", re.I),
}
# A score is the first number after the rubric name, tolerating "4/5",
# "4 out of 5", decimals, and intervening filler words.
_SCORE_RE = re.compile(r"(\d+(?:\.\d+)?)(?:\s*/\s*5|\s+out\s+of\s+5)?")


@dataclass(frozen=True)
class JudgeParse:
    scores: tuple[float, float, float, float]  # rubric order as in RUBRIC_NAMES
    clamped: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return dict(zip(RUBRIC_NAMES, self.scores))


def parse_judge_scores(raw_text: str) -> JudgeParse:
    """Locate the four rubric names and their 0-5 scores, clamping outliers."""
    text = normalize(raw_text)
    scores: dict[str, float] = {}
    clamped: list[str] = []
    for name, pat in _RUBRIC_PATTERNS.items():
        m = pat.search(text)
        if not m:
            continue
        sm = _SCORE_RE.search(text, m.end())
        if not sm:
            continue
        value = float(sm.group(1))
        if value < 0 or value > 5:
            clamped.append(name)
            value = min(5.0, max(0.0, value))
        scores[name] = value
    missing = [n for n in RUBRIC_NAMES if n not in scores]
    if missing:
        raise JudgeParseError(f"rubric scores not found for: {missing}")
    return JudgeParse(
        scores=tuple(scores[n] for n in RUBRIC_NAMES),
        clamped=tuple(clamped),
    )
