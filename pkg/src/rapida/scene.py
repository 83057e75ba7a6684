"""Scene description loading: static geometry, camera, and spawn regions."""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass

import numpy as np

from .kvio import KVParseError, floats, parse_kv_file, parse_kv_text
from .observe import Camera
from .physics import StaticGeometry


@dataclass
class Scene:
    geometry: StaticGeometry
    camera: Camera
    object_region: tuple   # xmin, xmax, ymin, ymax
    object_spacing: float
    gripper_region: tuple
    workspace: tuple | None = None  # gripper position bounds, same layout


def _builtin_scene_text(name):
    ref = importlib.resources.files("rapida") / "scenes" / f"{name}.scene"
    return ref.read_text(encoding="utf-8")


def load_scene(source):
    """Load a scene from a file path or a builtin name ('insert', 'cover')."""
    source = str(source)
    if source in ("insert", "cover"):
        kv = parse_kv_text(_builtin_scene_text(source), path=f"<builtin:{source}>")
        path = f"<builtin:{source}>"
    else:
        kv = parse_kv_file(source)
        path = source
    return scene_from_kv(kv, path)


def scene_from_kv(kv, path="<scene>"):
    segs = []
    i = 0
    while f"segment.{i}" in kv:
        vals = floats(kv[f"segment.{i}"])
        if len(vals) not in (4, 5):
            raise KVParseError(path, 0, f"segment.{i}: expected 4 or 5 numbers")
        if len(vals) == 4:
            vals.append(0.2)
        segs.append(vals)
        i += 1
    if not segs:
        raise KVParseError(path, 0, "scene defines no segments")

    poly = np.asarray(floats(kv["container"])).reshape(-1, 2)
    xl, xr, y = floats(kv["opening"])
    geometry = StaticGeometry(np.asarray(segs), poly, (xl, xr, y))

    camera = Camera(
        origin=floats(kv["camera.origin"]),
        fan_center_angle=float(kv["camera.center_angle"]),
        fan_half_angle=float(kv["camera.half_angle"]),
        max_range=float(kv["camera.max_range"]),
    )
    return Scene(
        geometry=geometry,
        camera=camera,
        object_region=tuple(floats(kv["object.region"])),
        object_spacing=float(kv["object.spacing"]),
        gripper_region=tuple(floats(kv["gripper.region"])),
        workspace=tuple(floats(kv["gripper.workspace"])) if "gripper.workspace" in kv else None,
    )
