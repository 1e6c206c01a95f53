"""Evaluation manifest loading and image payload encoding.

A manifest is JSON-Lines, one sample per line, with lowercase enum values
and optional fields omitted rather than null. All referenced files are
validated eagerly at load time so a bad manifest fails before any API
budget is spent.
"""

from __future__ import annotations

import base64
import io
import json
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache
from pathlib import Path
from typing import Optional

from PIL import Image, UnidentifiedImageError

from .errors import DecodeError, DuplicateIdError, MissingFileError, SchemaError


class Label(str, Enum):
    REAL = "real"
    FAKE = "fake"


class Generator(str, Enum):
    NONE = "none"
    GAN = "gan"
    DIFFUSION = "diffusion"


class Scope(str, Enum):
    NONE = "none"
    GLOBAL = "global"
    LOCAL = "local"


class Content(str, Enum):
    GENERAL = "general"
    FACE = "face"


@dataclass(frozen=True)
class ImageSample:
    """One evaluated image plus its label/taxonomy and optional GT companions."""

    id: str
    image_path: Path
    label: Label
    generator: Generator = Generator.NONE
    scope: Scope = Scope.NONE
    content: Content = Content.GENERAL
    dataset_name: str = ""
    gt_path: Optional[Path] = None
    mask_path: Optional[Path] = None

    def validate(self) -> None:
        if not self.id:
            raise SchemaError("sample id must be non-empty")
        if self.label is Label.REAL:
            if self.generator is not Generator.NONE or self.scope is not Scope.NONE:
                raise SchemaError(
                    f"{self.id}: real samples must have generator=none and scope=none"
                )
            if self.gt_path is not None or self.mask_path is not None:
                raise SchemaError(f"{self.id}: real samples carry no gt/mask")
        if self.scope is Scope.LOCAL and self.mask_path is None:
            raise SchemaError(
                f"{self.id}: local-scope fakes require a mask for judge evaluation"
            )


@dataclass(frozen=True)
class Manifest:
    entries: tuple[ImageSample, ...]
    source_path: Path

    def __len__(self) -> int:
        return len(self.entries)

    def by_id(self, sample_id: str) -> ImageSample:
        return self._index()[sample_id]

    def _index(self) -> dict[str, ImageSample]:
        return {s.id: s for s in self.entries}

    def dataset_of(self) -> dict[str, str]:
        """Map sample id -> dataset_name (used by per-dataset metrics)."""
        return {s.id: s.dataset_name for s in self.entries}


_REQUIRED_FIELDS = {"id", "image_path", "label"}
_KNOWN_FIELDS = _REQUIRED_FIELDS | {
    "generator",
    "scope",
    "content",
    "dataset_name",
    "gt_path",
    "mask_path",
}


def _parse_enum(cls, value, field, sample_id):
    try:
        return cls(value)
    except ValueError:
        raise SchemaError(
            f"{sample_id}: bad value {value!r} for {field} "
            f"(expected one of {[e.value for e in cls]})"
        ) from None


def _sample_from_obj(obj: dict, base: Path) -> ImageSample:
    missing = _REQUIRED_FIELDS - obj.keys()
    if missing:
        raise SchemaError(f"manifest line missing fields: {sorted(missing)}")
    unknown = obj.keys() - _KNOWN_FIELDS
    if unknown:
        raise SchemaError(f"{obj.get('id')}: unknown fields {sorted(unknown)}")
    sid = obj["id"]
    if not isinstance(sid, str):
        raise SchemaError(f"id must be a string, got {sid!r}")

    def resolve(key):
        return (base / obj[key]) if key in obj else None

    sample = ImageSample(
        id=sid,
        image_path=base / obj["image_path"],
        label=_parse_enum(Label, obj["label"], "label", sid),
        generator=_parse_enum(Generator, obj.get("generator", "none"), "generator", sid),
        scope=_parse_enum(Scope, obj.get("scope", "none"), "scope", sid),
        content=_parse_enum(Content, obj.get("content", "general"), "content", sid),
        dataset_name=obj.get("dataset_name", ""),
        gt_path=resolve("gt_path"),
        mask_path=resolve("mask_path"),
    )
    sample.validate()
    return sample


def load_manifest(path: str | Path) -> Manifest:
    """Load and eagerly validate a JSONL manifest.

    Relative image/gt/mask paths are resolved against the manifest's
    directory. Raises SchemaError, DuplicateIdError, or MissingFileError.
    """
    path = Path(path)
    if not path.is_file():
        raise MissingFileError(f"manifest not found: {path}")
    base = path.parent
    entries: list[ImageSample] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from None
        if not isinstance(obj, dict):
            raise SchemaError(f"{path}:{lineno}: expected a JSON object")
        sample = _sample_from_obj(obj, base)
        if sample.id in seen:
            raise DuplicateIdError(f"duplicate sample id {sample.id!r}")
        seen.add(sample.id)
        for p in (sample.image_path, sample.gt_path, sample.mask_path):
            if p is not None and not p.is_file():
                raise MissingFileError(f"{sample.id}: referenced file missing: {p}")
        entries.append(sample)
    if not entries:
        raise SchemaError(f"manifest is empty: {path}")
    return Manifest(entries=tuple(entries), source_path=path)


_MEDIA_TYPES = {
    "JPEG": "image/jpeg",
    "PNG": "image/png",
    "WEBP": "image/webp",
    "GIF": "image/gif",
    "BMP": "image/bmp",
}


@dataclass(frozen=True)
class EncodedImage:
    media_type: str
    b64: str

    @property
    def data_url(self) -> str:
        return f"data:{self.media_type};base64,{self.b64}"


@lru_cache(maxsize=256)
def encode_image(path: str | Path, max_edge: Optional[int] = None) -> EncodedImage:
    """Base64-encode an image for a vision-chat request.

    Without max_edge the original bytes pass through untouched (resizing
    changes forensic content, so it is opt-in). With max_edge set, larger
    images are downscaled preserving aspect ratio and re-encoded as PNG.
    Deterministic for identical inputs.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
        with Image.open(io.BytesIO(raw)) as img:
            fmt = img.format
            width, height = img.size
            if fmt not in _MEDIA_TYPES:
                raise DecodeError(f"unsupported image format {fmt!r}: {path}")
            if max_edge is not None and max(width, height) > max_edge:
                scale = max_edge / max(width, height)
                new_size = (
                    max(1, round(width * scale)),
                    max(1, round(height * scale)),
                )
                resized = img.convert("RGB").resize(new_size, Image.LANCZOS)
                buf = io.BytesIO()
                resized.save(buf, format="PNG")
                return EncodedImage("image/png", base64.b64encode(buf.getvalue()).decode())
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode image {path}: {exc}") from None
    return EncodedImage(_MEDIA_TYPES[fmt], base64.b64encode(raw).decode())
