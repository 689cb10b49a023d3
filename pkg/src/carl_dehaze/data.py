"""Dataset construction and on-disk layout.

Layout under a dataset root:
    clean/<stem>.png
    hazy/<stem>__b<beta>.png
    dcp/<stem>__b<beta>.png
    manifest.json

Also provides a procedural clean-scene generator for desk-scale corpora
and an adapter for RESIDE-ITS-style ``<id>_<k>_<beta>.png`` names.
"""

from __future__ import annotations

import json
import re
import shutil
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imagecore import Image, load_image, save_image
from .hazesynth import DensityLadder, HazeParams, apply_scattering
from .dcp import DcpConfig, dehaze_dcp, negative_config


def _beta_tag(beta: float) -> str:
    return format(beta, "g")


def hazy_name(stem: str, beta: float) -> str:
    return f"{stem}__b{_beta_tag(beta)}.png"


def make_scene(height: int, width: int, seed: int) -> Image:
    """Procedural clean scene: smooth background plus colored rectangles.

    Includes dark rectangles so the dark-channel prior has something to
    latch onto.  Deterministic given seed.
    """
    rng = np.random.default_rng(seed)
    # low-frequency background from upsampled coarse noise
    coarse = rng.uniform(0.2, 0.9, size=(4, 4, 3))
    ys = np.linspace(0, 3, height)
    xs = np.linspace(0, 3, width)
    yi, xi = np.floor(ys).astype(int), np.floor(xs).astype(int)
    yf, xf = ys - yi, xs - xi
    yi1 = np.minimum(yi + 1, 3)
    xi1 = np.minimum(xi + 1, 3)
    bg = (
        coarse[yi][:, xi] * (1 - yf)[:, None, None] * (1 - xf)[None, :, None]
        + coarse[yi1][:, xi] * yf[:, None, None] * (1 - xf)[None, :, None]
        + coarse[yi][:, xi1] * (1 - yf)[:, None, None] * xf[None, :, None]
        + coarse[yi1][:, xi1] * yf[:, None, None] * xf[None, :, None]
    )
    img = bg
    n_rects = int(rng.integers(4, 9))
    for r in range(n_rects):
        rh = int(rng.integers(height // 8, height // 2))
        rw = int(rng.integers(width // 8, width // 2))
        top = int(rng.integers(0, height - rh + 1))
        left = int(rng.integers(0, width - rw + 1))
        if r % 2 == 0:
            color = rng.uniform(0.0, 0.15, size=3)  # dark patch
        else:
            color = rng.uniform(0.0, 1.0, size=3)
        img[top : top + rh, left : left + rw, :] = color
    return Image(np.clip(img, 0.0, 1.0))


def build_clean_corpus(out_dir, count: int, size: int, seed: int) -> list:
    """Write `count` procedural scenes as clean/<stem>.png; returns stems."""
    out_dir = Path(out_dir)
    (out_dir / "clean").mkdir(parents=True, exist_ok=True)
    stems = []
    for i in range(count):
        stem = f"scene{i:03d}"
        save_image(make_scene(size, size, seed + i), out_dir / "clean" / f"{stem}.png")
        stems.append(stem)
    return stems


def synthesize_dataset(
    root,
    ladder: DensityLadder,
    airlight,
    seed: int = 0,
    clean_dir=None,
    with_dcp: bool = True,
    dcp_config: DcpConfig | None = None,
) -> dict:
    """Synthesize the hazy ladder (and optional DCP outputs) for every clean
    image under root/clean, writing a manifest.  Returns the manifest dict."""
    root = Path(root)
    clean_dir = Path(clean_dir) if clean_dir else root / "clean"
    if clean_dir != root / "clean":
        (root / "clean").mkdir(parents=True, exist_ok=True)
        for p in sorted(clean_dir.glob("*.png")):
            shutil.copy(p, root / "clean" / p.name)
        clean_dir = root / "clean"
    (root / "hazy").mkdir(parents=True, exist_ok=True)
    if with_dcp:
        (root / "dcp").mkdir(parents=True, exist_ok=True)
    # default to the crude config: dataset DCP outputs serve as poor-quality
    # contrastive negatives, not as a best-effort baseline
    cfg = dcp_config or negative_config()
    scenes = []
    for clean_path in sorted(clean_dir.glob("*.png")):
        stem = clean_path.stem
        clean = load_image(clean_path)
        entry = {"stem": stem, "clean": f"clean/{stem}.png", "hazy": []}
        for label, beta in zip(ladder.labels, ladder.betas):
            params = HazeParams(airlight=tuple(airlight), beta=beta)
            hazy = apply_scattering(clean, params)
            name = hazy_name(stem, beta)
            save_image(hazy, root / "hazy" / name)
            rec = {
                "path": f"hazy/{name}",
                "beta": beta,
                "airlight": list(airlight),
                "label": label,
            }
            if with_dcp:
                dehazed, info = dehaze_dcp(hazy, cfg)
                save_image(dehazed, root / "dcp" / name)
                rec["dcp"] = f"dcp/{name}"
                (root / "dcp" / f"{stem}__b{_beta_tag(beta)}.json").write_text(
                    json.dumps(info, indent=2)
                )
            entry["hazy"].append(rec)
        scenes.append(entry)
    manifest = {
        "betas": list(ladder.betas),
        "labels": list(ladder.labels),
        "airlight": list(airlight),
        "seed": seed,
        "scenes": scenes,
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


_RESIDE_RE = re.compile(r"^(?P<id>[^_]+)_(?P<k>\d+)_(?P<beta>[\d.]+?)\.png$")


def ingest_reside_its(hazy_src, clean_src, root) -> dict:
    """Map RESIDE-ITS style names (<id>_<k>_<beta>.png hazy, <id>.png clean)
    onto the standard layout, then write a manifest (no DCP outputs)."""
    root = Path(root)
    (root / "clean").mkdir(parents=True, exist_ok=True)
    (root / "hazy").mkdir(parents=True, exist_ok=True)
    scenes: dict[str, dict] = {}
    betas = set()
    for p in sorted(Path(hazy_src).glob("*.png")):
        m = _RESIDE_RE.match(p.name)
        if not m:
            continue
        sid, beta = m.group("id"), float(m.group("beta"))
        clean_path = Path(clean_src) / f"{sid}.png"
        if not clean_path.exists():
            continue
        if sid not in scenes:
            shutil.copy(clean_path, root / "clean" / f"{sid}.png")
            scenes[sid] = {"stem": sid, "clean": f"clean/{sid}.png", "hazy": []}
        name = hazy_name(sid, beta)
        shutil.copy(p, root / "hazy" / name)
        scenes[sid]["hazy"].append({"path": f"hazy/{name}", "beta": beta,
                                    "airlight": None, "label": f"b{_beta_tag(beta)}"})
        betas.add(beta)
    for entry in scenes.values():
        entry["hazy"].sort(key=lambda r: r["beta"])
    manifest = {
        "betas": sorted(betas),
        "labels": [f"b{_beta_tag(b)}" for b in sorted(betas)],
        "airlight": None,
        "seed": 0,
        "scenes": list(scenes.values()),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2))
    return manifest


@dataclass
class SceneRecord:
    stem: str
    clean: Image
    betas: list
    hazy: list  # Image per beta, ascending
    dcp: list  # Image per beta or None
    airlight: tuple | None


class DatasetIndex:
    """In-memory view of a dataset root; images cached eagerly (desk scale)."""

    def __init__(self, root):
        self.root = Path(root)
        manifest = json.loads((self.root / "manifest.json").read_text())
        self.betas = list(manifest["betas"])
        self.airlight = (
            tuple(manifest["airlight"]) if manifest["airlight"] else None
        )
        self.scenes = []
        for entry in manifest["scenes"]:
            hazy, dcp_imgs, betas = [], [], []
            for rec in entry["hazy"]:
                betas.append(rec["beta"])
                hazy.append(load_image(self.root / rec["path"]))
                dcp_imgs.append(
                    load_image(self.root / rec["dcp"]) if rec.get("dcp") else None
                )
            self.scenes.append(
                SceneRecord(
                    stem=entry["stem"],
                    clean=load_image(self.root / entry["clean"]),
                    betas=betas,
                    hazy=hazy,
                    dcp=dcp_imgs,
                    airlight=self.airlight,
                )
            )
        if not self.scenes:
            raise ValueError(f"empty dataset at {self.root}")

    def __len__(self):
        return len(self.scenes)
