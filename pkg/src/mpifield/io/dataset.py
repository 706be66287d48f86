"""Scene datasets: posed photos with masks, loaded from a cameras.json tree.

Directory layout::

    scene/
      cameras.json
      images/<file>.png
      masks/<file>.png        (optional; missing mask means all-static)

cameras.json schema::

    {
      "reference": "<image id>",
      "near": 1.0,                  // optional; else derived from points
      "far": 20.0,                  // optional
      "points": [d0, d1, ...],      // optional sparse scene-point depths
                                    // in the reference camera frame
      "split": {"test": ["id", ...]},   // optional explicit test split
      "images": [
        {"id": "v000", "file": "images/v000.png",
         "fx": 90.0, "fy": 90.0, "cx": 48.0, "cy": 32.0,
         "width": 96, "height": 64,
         "R": [9 row-major floats, world-to-camera],
         "t": [3 floats],
         "mask": "masks/v000.png"}   // optional
      ]
    }

Rotations further than 1e-4 from orthonormal are rejected; smaller
drift (e.g. from text round-tripping) is projected back onto SO(3).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .. import defaults
from ..errors import DataError, GeometryError
from ..geometry import CameraView, Intrinsics, nearest_rotation, percentile_depth_range
from .images import load_image, load_mask, save_image, save_mask


@dataclass
class ScenePhoto:
    id: str
    cam: CameraView
    image: np.ndarray                 # [3,H,W]
    mask: np.ndarray                  # [1,H,W], 1 = static scene

    def __post_init__(self):
        h, w = self.image.shape[1:]
        if (w, h) != (self.cam.intrinsics.width, self.cam.intrinsics.height):
            raise DataError(f"photo '{self.id}': image is {w}x{h} but intrinsics "
                            f"say {self.cam.intrinsics.width}x{self.cam.intrinsics.height}")
        if self.mask.shape != (1, h, w):
            raise DataError(f"photo '{self.id}': mask shape {self.mask.shape} "
                            f"does not match image")


@dataclass
class SceneDataset:
    root: Optional[Path]
    photos: list[ScenePhoto]
    reference_id: str
    near: float
    far: float
    train_ids: list[str]
    test_ids: list[str]
    points: list[float] = field(default_factory=list)

    def __post_init__(self):
        ids = [p.id for p in self.photos]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate photo ids")
        if self.reference_id not in ids:
            raise DataError(f"reference id '{self.reference_id}' is not a photo")
        overlap = set(self.train_ids) & set(self.test_ids)
        if overlap:
            raise DataError(f"train/test split overlaps: {sorted(overlap)}")
        if not 0 < self.near < self.far:
            raise DataError(f"invalid depth range near={self.near}, far={self.far}")

    def __len__(self):
        return len(self.photos)

    def photo(self, pid):
        for p in self.photos:
            if p.id == pid:
                return p
        raise DataError(f"no photo with id '{pid}'")

    @property
    def reference(self):
        return self.photo(self.reference_id)

    @property
    def ref_cam(self):
        return self.reference.cam

    def train_photos(self):
        return [self.photo(i) for i in self.train_ids]

    def test_photos(self):
        return [self.photo(i) for i in self.test_ids]


def _parse_image_entry(entry, root, index):
    ctx = f"images[{index}]"
    for key in ("id", "file", "fx", "fy", "cx", "cy", "width", "height", "R", "t"):
        if key not in entry:
            raise DataError(f"{ctx}: missing field '{key}'")
    pid = entry["id"]
    try:
        intr = Intrinsics(float(entry["fx"]), float(entry["fy"]),
                          float(entry["cx"]), float(entry["cy"]),
                          int(entry["width"]), int(entry["height"]))
    except GeometryError as e:
        raise DataError(f"{ctx} ('{pid}'): {e}") from e
    R = np.asarray(entry["R"], dtype=np.float64)
    if R.size != 9:
        raise DataError(f"{ctx} ('{pid}'): R must have 9 entries, got {R.size}")
    R = R.reshape(3, 3)
    err = np.abs(R @ R.T - np.eye(3)).max()
    if err > 1e-4:
        raise DataError(f"{ctx} ('{pid}'): rotation not orthonormal "
                        f"(max deviation {err:.2e})")
    R = nearest_rotation(R)
    t = np.asarray(entry["t"], dtype=np.float64)
    if t.size != 3:
        raise DataError(f"{ctx} ('{pid}'): t must have 3 entries, got {t.size}")
    cam = CameraView(intr, R, t)

    image = load_image(root / entry["file"])
    mask_rel = entry.get("mask")
    if mask_rel is not None and (root / mask_rel).exists():
        mask = load_mask(root / mask_rel)
    else:
        mask = np.ones((1,) + image.shape[1:], dtype=np.float32)
    return ScenePhoto(pid, cam, image, mask)


def split_ids(ids, train_fraction=defaults.TRAIN_FRACTION, seed=0):
    """Deterministic random split; at least one photo always trains."""
    ids = sorted(ids)
    if len(ids) == 1:
        return list(ids), []
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ids))
    n_train = max(1, int(round(len(ids) * train_fraction)))
    n_train = min(n_train, len(ids) - 1) if len(ids) > 1 else n_train
    train = sorted(ids[i] for i in perm[:n_train])
    test = sorted(ids[i] for i in perm[n_train:])
    return train, test


def load_scene(path, split_seed=0):
    """Load and validate a scene directory (see module docstring)."""
    root = Path(path)
    cams_file = root / "cameras.json"
    if not cams_file.exists():
        raise DataError(f"{cams_file} not found")
    try:
        meta = json.loads(cams_file.read_text())
    except json.JSONDecodeError as e:
        raise DataError(f"{cams_file}: invalid JSON: {e}") from e
    if "images" not in meta or not meta["images"]:
        raise DataError("cameras.json: 'images' must be a non-empty list")
    if "reference" not in meta:
        raise DataError("cameras.json: missing 'reference'")

    photos = [_parse_image_entry(e, root, i) for i, e in enumerate(meta["images"])]
    ids = [p.id for p in photos]

    points = [float(d) for d in meta.get("points", [])]
    near = meta.get("near")
    far = meta.get("far")
    if near is None or far is None:
        if not points:
            raise DataError("cameras.json: need explicit near/far or a 'points' list")
        pnear, pfar = percentile_depth_range(
            points, defaults.NEAR_PERCENTILE, defaults.FAR_PERCENTILE)
        near = pnear if near is None else float(near)
        far = pfar if far is None else float(far)

    split = meta.get("split", {})
    if "test" in split:
        test_ids = list(split["test"])
        unknown = set(test_ids) - set(ids)
        if unknown:
            raise DataError(f"split.test names unknown ids: {sorted(unknown)}")
        train_ids = [i for i in ids if i not in set(test_ids)]
    else:
        train_ids, test_ids = split_ids(ids, seed=split_seed)

    return SceneDataset(root, photos, meta["reference"], float(near), float(far),
                        sorted(train_ids), sorted(test_ids), points)


def save_scene(dataset, path):
    """Write a dataset to disk in the cameras.json layout."""
    root = Path(path)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for p in dataset.photos:
        img_rel = f"images/{p.id}.png"
        save_image(root / img_rel, p.image)
        entry = {
            "id": p.id, "file": img_rel,
            "fx": p.cam.intrinsics.fx, "fy": p.cam.intrinsics.fy,
            "cx": p.cam.intrinsics.cx, "cy": p.cam.intrinsics.cy,
            "width": p.cam.intrinsics.width, "height": p.cam.intrinsics.height,
            "R": [float(v) for v in p.cam.rotation.reshape(-1)],
            "t": [float(v) for v in p.cam.translation],
        }
        if not np.all(p.mask == 1.0):
            mask_rel = f"masks/{p.id}.png"
            save_mask(root / mask_rel, p.mask)
            entry["mask"] = mask_rel
        entries.append(entry)
    meta = {
        "reference": dataset.reference_id,
        "near": dataset.near,
        "far": dataset.far,
        "points": [float(d) for d in dataset.points],
        "split": {"test": list(dataset.test_ids)},
        "images": entries,
    }
    (root / "cameras.json").write_text(json.dumps(meta, indent=1))
    return root / "cameras.json"
