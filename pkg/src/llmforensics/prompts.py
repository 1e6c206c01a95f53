"""Prompt construction from principle blocks, plus k-shot exemplar injection.

Prompts are data, not code: each stage ships as an editable text file with
named block headers ([profile], [goal], [constraint], [workflow], [style])
and a final [user] instruction. The detection stage ships a five-rung
ladder of files that add blocks (and tokens) rung by rung; rank 4 is the
default used for real runs.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Optional

from .dataset import ImageSample, Label, encode_image
from .errors import KTooLargeError, MissingFileError, PromptError


class Stage(str, Enum):
    DETECT = "detect"
    ANALYZE = "analyze"
    JUDGE = "judge"


class PrincipleKind(str, Enum):
    PROFILE = "profile"
    GOAL = "goal"
    CONSTRAINT = "constraint"
    WORKFLOW = "workflow"
    STYLE = "style"


_BLOCK_ORDER = list(PrincipleKind)

DEFAULT_LADDER_RANK = 4
DEFAULT_K = 2


@dataclass(frozen=True)
class PrincipleBlock:
    kind: PrincipleKind
    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise PromptError(f"empty {self.kind.value} block")


@dataclass(frozen=True)
class PromptSpec:
    stage: Stage
    blocks: tuple[PrincipleBlock, ...]
    user_instruction: str
    ladder_rank: Optional[int] = None

    def __post_init__(self):
        if self.ladder_rank is not None and not 1 <= self.ladder_rank <= 5:
            raise PromptError(f"ladder_rank must be in 1..5, got {self.ladder_rank}")
        kinds = [b.kind for b in self.blocks]
        order = [_BLOCK_ORDER.index(k) for k in kinds]
        if order != sorted(order) or len(set(kinds)) != len(kinds):
            raise PromptError(
                "blocks must appear at most once, in profile/goal/constraint/"
                f"workflow/style order; got {[k.value for k in kinds]}"
            )
        if not self.user_instruction.strip():
            raise PromptError("user_instruction must be non-empty")

    @property
    def system_text(self) -> str:
        return "\n\n".join(b.text for b in self.blocks)

    def token_count(self) -> int:
        """Whitespace token count of the system text (ladder ordering key)."""
        return len(self.system_text.split())


@dataclass(frozen=True)
class Exemplar:
    id: str
    image_path: Path
    assistant_answer: str
    label: Label


@dataclass(frozen=True)
class ShotConfig:
    k: int
    pool: tuple[Exemplar, ...] = ()
    seed: int = 0

    def __post_init__(self):
        if self.k < 0:
            raise PromptError(f"k must be >= 0, got {self.k}")


_HEADER_RE = re.compile(r"^\[(profile|goal|constraint|workflow|style|user)\]\s*$")


def parse_prompt_text(text: str, stage: Stage, ladder_rank: Optional[int] = None) -> PromptSpec:
    """Parse the block-header prompt file format into a PromptSpec."""
    sections: dict[str, list[str]] = {}
    current: Optional[str] = None
    for line in text.splitlines():
        m = _HEADER_RE.match(line.strip())
        if m:
            current = m.group(1)
            if current in sections:
                raise PromptError(f"duplicate [{current}] header")
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif line.strip():
            raise PromptError(f"text before first block header: {line!r}")
    if "user" not in sections:
        raise PromptError("prompt file lacks a [user] section")
    blocks = tuple(
        PrincipleBlock(kind, "\n".join(sections[kind.value]).strip())
        for kind in _BLOCK_ORDER
        if kind.value in sections
    )
    if not blocks:
        raise PromptError("prompt file needs at least one principle block")
    user = "\n".join(sections["user"]).strip()
    return PromptSpec(stage=stage, blocks=blocks, user_instruction=user, ladder_rank=ladder_rank)


def load_prompt_file(path: str | Path, stage: Stage, ladder_rank: Optional[int] = None) -> PromptSpec:
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"prompt file not found: {path}")
    return parse_prompt_text(path.read_text(encoding="utf-8"), stage, ladder_rank)


def load_builtin_prompt(stage: Stage, ladder_rank: Optional[int] = None) -> PromptSpec:
    """Load one of the prompt files shipped with the package.

    Detection takes a ladder rank (default 4); analyze and judge ship a
    single prompt each.
    """
    if stage is Stage.DETECT:
        rank = DEFAULT_LADDER_RANK if ladder_rank is None else ladder_rank
        name = f"detect_rank{rank}.txt"
    else:
        rank = None
        name = f"{stage.value}.txt"
    text = resources.files("llmforensics.prompt_data").joinpath(name).read_text(encoding="utf-8")
    return parse_prompt_text(text, stage, rank)


def load_exemplar_pool(path: str | Path) -> tuple[Exemplar, ...]:
    """Load a JSONL exemplar pool; image paths resolve against the file's dir."""
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"exemplar pool not found: {path}")
    pool = []
    for line in path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        pool.append(
            Exemplar(
                id=obj["id"],
                image_path=path.parent / obj["image_path"],
                assistant_answer=obj["assistant_answer"],
                label=Label(obj["label"]),
            )
        )
    return tuple(pool)


def sample_shots(config: ShotConfig) -> list[Exemplar]:
    """Draw k distinct exemplars, uniform over k-subsets, stable in the seed."""
    if config.k > len(config.pool):
        raise KTooLargeError(
            f"k={config.k} exceeds exemplar pool of {len(config.pool)}"
        )
    if config.k == 0:
        return []
    rng = random.Random(config.seed)
    return rng.sample(list(config.pool), config.k)


def _image_part(path: Path, max_edge: Optional[int]) -> dict:
    payload = encode_image(path, max_edge)
    return {"type": "image_url", "image_url": {"url": payload.data_url}}


def _user_message(instruction: str, image_paths: list[Path], max_edge: Optional[int]) -> dict:
    parts = [_image_part(p, max_edge) for p in image_paths]
    parts.append({"type": "text", "text": instruction})
    return {"role": "user", "content": parts}


def build_prompt(
    spec: PromptSpec,
    shots: ShotConfig,
    target: ImageSample,
    extra_images: tuple[Path, ...] = (),
    instruction_suffix: str = "",
    max_edge: Optional[int] = None,
) -> list[dict]:
    """Assemble the chat message sequence for one query.

    Order: one system message (concatenated principle blocks), then for each
    sampled exemplar a user turn (exemplar image + instruction) followed by
    an assistant turn (the exemplar's answer), then the final user turn with
    the target image. extra_images appear after the target image (the judge
    passes GT and mask this way); instruction_suffix is appended to the
    user instruction verbatim.
    """
    instruction = spec.user_instruction
    if instruction_suffix:
        instruction = f"{instruction}\n{instruction_suffix}"
    messages: list[dict] = [{"role": "system", "content": spec.system_text}]
    for ex in sample_shots(shots):
        messages.append(_user_message(spec.user_instruction, [ex.image_path], max_edge))
        messages.append({"role": "assistant", "content": ex.assistant_answer})
    messages.append(
        _user_message(instruction, [target.image_path, *extra_images], max_edge)
    )
    return messages
