import json
from pathlib import Path

import pytest
from PIL import Image

DATA_DIR = Path(__file__).parent / "data"
MOCK_SCRIPT = DATA_DIR / "mock_script_10.jsonl"


def write_png(path: Path, color=(100, 20, 30), size=(8, 8)):
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.new("RGB", size, color).save(path)


def make_bundle(root: Path) -> Path:
    """The bundled 10-sample mock fixture: 5 fakes (3 local w/ gt+mask,
    2 global), 5 reals. Returns the manifest path."""
    lines = []
    for i, sid in enumerate(["m001", "m002", "m003"]):
        write_png(root / f"img/{sid}.png", (10 + i, 0, 0))
        write_png(root / f"gt/{sid}.png", (0, 10 + i, 0))
        write_png(root / f"mask/{sid}.png", (255, 255, 255))
        lines.append(
            {
                "id": sid,
                "image_path": f"img/{sid}.png",
                "label": "fake",
                "generator": "diffusion",
                "scope": "local",
                "content": "general",
                "dataset_name": "autosplice",
                "gt_path": f"gt/{sid}.png",
                "mask_path": f"mask/{sid}.png",
            }
        )
    for i, sid in enumerate(["m004", "m005"]):
        write_png(root / f"img/{sid}.png", (0, 0, 40 + i))
        lines.append(
            {
                "id": sid,
                "image_path": f"img/{sid}.png",
                "label": "fake",
                "generator": "gan",
                "scope": "global",
                "content": "general",
                "dataset_name": "stylegan",
            }
        )
    for i, sid in enumerate(["m006", "m007", "m008", "m009", "m010"]):
        write_png(root / f"img/{sid}.png", (60 + i, 60, 60))
        lines.append(
            {
                "id": sid,
                "image_path": f"img/{sid}.png",
                "label": "real",
                "dataset_name": "caltech",
            }
        )
    manifest = root / "manifest.jsonl"
    manifest.write_text("\n".join(json.dumps(l) for l in lines) + "\n", encoding="utf-8")
    return manifest


def make_pool(root: Path, n: int = 10) -> Path:
    """Exemplar pool JSONL with n tiny images, alternating fake/real answers."""
    lines = []
    for i in range(n):
        sid = f"ex{i:02d}"
        write_png(root / f"pool/{sid}.png", (i * 20 % 255, 5, 5))
        label = "fake" if i % 2 == 0 else "real"
        lines.append(
            {
                "id": sid,
                "image_path": f"{sid}.png",
                "assistant_answer": "Yes." if label == "fake" else "No.",
                "label": label,
            }
        )
    pool = root / "pool/exemplars.jsonl"
    pool.write_text("\n".join(json.dumps(l) for l in lines) + "\n", encoding="utf-8")
    return pool


@pytest.fixture
def bundle(tmp_path):
    return make_bundle(tmp_path)


@pytest.fixture
def pool_file(tmp_path):
    return make_pool(tmp_path)
