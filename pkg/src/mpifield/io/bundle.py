"""Viewer bundle export: baked appearance slices as premultiplied PNGs.

Bundle directory layout::

    manifest.json
    slice_<s>_plane_<d>.png      premultiplied RGBA, 8-bit
    golden_slice_<s>.png         optional per-slice reference composite

The manifest records the reference camera, plane depths, slice labels
(the interpolation parameter of each baked slice), and orbit bounds for
the interactive viewer.  All slices share the stage-1 alpha; only the
decoded colors differ, so the viewer can crossfade adjacent slices to
approximate latent-space interpolation with short segments.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import defaults
from ..errors import DataError
from ..mpi import composite
from .images import save_image

MANIFEST_VERSION = 1
DEFAULT_FRUSTUM = {"azimuth_deg": 8.0, "elevation_deg": 5.0,
                   "dolly": [-0.25, 0.25], "orbit_radius": 2.0}


def export_viewer_bundle(model, z_endpoints, out_dir, slices=defaults.BUNDLE_SLICES,
                         frustum=None, goldens=True):
    """Bake appearance slices along the path between z endpoints.

    model: fitted AppearanceModel (with mpi_).  z_endpoints: >= 2
    appearance vectors; slices interpolate piecewise-linearly between
    them with labels t in [0,1].  Returns the manifest path.
    """
    if getattr(model, "iterations_done_", 0) <= 0:
        raise DataError("appearance checkpoint is untrained; refusing to export")
    zs = [np.asarray(z, dtype=np.float32) for z in z_endpoints]
    if len(zs) < 2:
        raise DataError("need at least two appearance endpoints")
    if slices < 1:
        raise DataError("need at least one slice")
    mpi = model.mpi_
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    alpha = mpi.alpha[:, 0]                     # [D,H,W]
    slice_meta = []
    for s in range(slices):
        t = s / (slices - 1) if slices > 1 else 0.0
        z = _interp_path(zs, t)
        colors = model.decode_reference_planes(z)   # [D,3,H,W]
        for d in range(mpi.depth_count):
            rgba = np.concatenate([colors[d] * alpha[d][None], alpha[d][None]], axis=0)
            save_image(out / f"slice_{s:02d}_plane_{d:02d}.png", rgba)
        slice_meta.append({"index": s, "t": round(t, 6), "label": f"t={t:.2f}"})
        if goldens:
            composed = composite(colors, mpi.alpha)
            save_image(out / f"golden_slice_{s:02d}.png", composed)

    k = mpi.ref_cam.intrinsics
    manifest = {
        "version": MANIFEST_VERSION,
        "width": mpi.width,
        "height": mpi.height,
        "planes": mpi.depth_count,
        "depths": [float(d) for d in mpi.planes.depths],
        "reference": {
            "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height,
            "R": [float(v) for v in mpi.ref_cam.rotation.reshape(-1)],
            "t": [float(v) for v in mpi.ref_cam.translation],
        },
        "slices": slice_meta,
        "plane_files": "slice_{slice:02d}_plane_{plane:02d}.png",
        "goldens": "golden_slice_{slice:02d}.png" if goldens else None,
        "frustum": frustum or DEFAULT_FRUSTUM,
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1))
    return path


def _interp_path(zs, t):
    if t >= 1.0:
        return zs[-1]
    pos = t * (len(zs) - 1)
    i = int(pos)
    s = pos - i
    return (1.0 - s) * zs[i] + s * zs[i + 1]


def composite_premultiplied(rgba_planes):
    """Reference compositor for baked slices: front-to-back premultiplied over.

    rgba_planes: [D,4,H,W] premultiplied straight from the PNGs (in [0,1]),
    nearest plane first.  Matches what the viewer's blending computes.
    """
    out = np.zeros((3,) + rgba_planes.shape[2:], dtype=np.float64)
    trans = np.ones(rgba_planes.shape[2:], dtype=np.float64)
    for d in range(rgba_planes.shape[0]):
        out += trans * rgba_planes[d, :3]
        trans = trans * (1.0 - rgba_planes[d, 3])
    return out.astype(np.float32)
