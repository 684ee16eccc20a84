"""On-disk formats: cameras, PLY points, PFM maps, PNG previews, manifests and checkpoints."""

from __future__ import annotations

import json
import re
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import EmptyPointCloud, FormatError, IoFailure
from .medium import FIELDS, MediumGrid
from .scene import Bounds, Camera, Scene

MANIFEST_VERSION = 1
CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"MSPLATCK"


def _read_bytes(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise IoFailure(f"cannot read {path}: {e}") from e


def _write_bytes(path, data: bytes):
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_bytes(data)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


# cameras ---------------------------------------------------------------------------

def format_camera(cam: Camera) -> str:
    lines = [f"fx {cam.fx!r}", f"fy {cam.fy!r}", f"cx {cam.cx!r}", f"cy {cam.cy!r}",
             f"width {cam.width}", f"height {cam.height}",
             "rotation " + " ".join(repr(float(v)) for v in cam.rotation.ravel()),
             "translation " + " ".join(repr(float(v)) for v in cam.translation)]
    return "\n".join(lines) + "\n"


def parse_camera(text: str, path=None) -> Camera:
    expected = {"fx": 1, "fy": 1, "cx": 1, "cy": 1, "width": 1, "height": 1,
                "rotation": 9, "translation": 3}
    vals = {}
    offset = 0
    for line in text.splitlines(keepends=True):
        parts = line.split()
        if parts:
            key = parts[0]
            if key not in expected:
                raise FormatError(f"unknown camera key {key!r}", offset, path)
            if len(parts) - 1 != expected[key]:
                raise FormatError(f"{key!r} expects {expected[key]} values", offset, path)
            try:
                vals[key] = [float(p) for p in parts[1:]]
            except ValueError:
                raise FormatError(f"non-numeric value in {key!r}", offset, path) from None
        offset += len(line.encode())
    missing = set(expected) - set(vals)
    if missing:
        raise FormatError(f"missing camera keys {sorted(missing)}", offset, path)
    return Camera(vals["fx"][0], vals["fy"][0], vals["cx"][0], vals["cy"][0],
                  np.array(vals["rotation"]).reshape(3, 3), np.array(vals["translation"]),
                  int(vals["width"][0]), int(vals["height"][0]))


def write_camera(path, cam: Camera):
    _write_bytes(path, format_camera(cam).encode())


def read_camera(path) -> Camera:
    return parse_camera(_read_bytes(path).decode(), path)


# PLY ---------------------------------------------------------------------------------

def write_ply(path, points, colors):
    """ASCII PLY with float xyz and uchar rgb; ``colors`` in [0, 1] or uint8."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    cols = np.asarray(colors)
    if cols.dtype != np.uint8:
        cols = np.clip(np.round(np.asarray(cols, float) * 255), 0, 255).astype(np.uint8)
    cols = cols.reshape(-1, 3)
    head = ["ply", "format ascii 1.0", f"element vertex {len(pts)}", "property double x",
            "property double y", "property double z", "property uchar red",
            "property uchar green", "property uchar blue", "end_header"]
    body = [f"{p[0]!r} {p[1]!r} {p[2]!r} {c[0]} {c[1]} {c[2]}"
            for p, c in zip(pts.tolist(), cols.tolist())]
    _write_bytes(path, ("\n".join(head + body) + "\n").encode())


def read_ply(path, require_points: bool = True):
    """Returns ``(points (M, 3), colors (M, 3) in [0, 1])``."""
    data = _read_bytes(path)
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError("not an ASCII PLY file", 0, path)
    header = data[:end].decode(errors="replace").splitlines()
    if not any(h.strip() == "format ascii 1.0" for h in header):
        raise FormatError("only ASCII PLY is supported", 0, path)
    count, props, in_vertex = None, [], False
    for h in header:
        parts = h.split()
        if parts[:1] == ["element"]:
            in_vertex = parts[1] == "vertex"
            if in_vertex:
                count = int(parts[2])
        elif parts[:1] == ["property"] and in_vertex:
            props.append(parts[-1])
    if count is None:
        raise FormatError("no vertex element", 0, path)
    for need in ("x", "y", "z"):
        if need not in props:
            raise FormatError(f"vertex property {need!r} missing", 0, path)
    body_start = data.index(b"\n", end) + 1
    rows = data[body_start:].split(b"\n")
    pts, cols = [], []
    offset = body_start
    for i in range(count):
        if i >= len(rows) or not rows[i].strip():
            raise FormatError(f"expected {count} vertices, found {i}", offset, path)
        parts = rows[i].split()
        if len(parts) < len(props):
            raise FormatError(f"vertex {i} has {len(parts)} fields", offset, path)
        rec = dict(zip(props, parts))
        try:
            pts.append([float(rec["x"]), float(rec["y"]), float(rec["z"])])
            cols.append([int(rec.get(c, 128)) for c in ("red", "green", "blue")])
        except ValueError:
            raise FormatError(f"bad number in vertex {i}", offset, path) from None
        offset += len(rows[i]) + 1
    if require_points and count == 0:
        raise EmptyPointCloud(f"{path} contains no vertices")
    return np.array(pts).reshape(-1, 3), np.array(cols, dtype=np.float64).reshape(-1, 3) / 255.0


# PFM --------------------------------------------------------------------------------

def write_pfm(path, arr):
    """Little-endian PFM (scale -1.0): (H, W) -> 'Pf', (H, W, 3) -> 'PF'; stored as float32."""
    a = np.asarray(arr, dtype="<f4")
    if a.ndim == 2:
        tag = b"Pf"
    elif a.ndim == 3 and a.shape[2] == 3:
        tag = b"PF"
    else:
        raise ValueError(f"PFM needs (H, W) or (H, W, 3), got {a.shape}")
    h, w = a.shape[:2]
    header = tag + b"\n" + f"{w} {h}\n".encode() + b"-1.0\n"
    _write_bytes(path, header + np.ascontiguousarray(a[::-1]).tobytes())


_TOKEN = re.compile(rb"\S+")


def read_pfm(path) -> np.ndarray:
    data = _read_bytes(path)
    tokens = []
    pos = 0
    for _ in range(4):
        m = _TOKEN.search(data, pos)
        if m is None:
            raise FormatError("truncated PFM header", pos, path)
        tokens.append((m.group(), m.start()))
        pos = m.end()
    (tag, t0), (ws, t1), (hs, t2), (sc, t3) = tokens
    if tag not in (b"PF", b"Pf"):
        raise FormatError(f"bad PFM magic {tag!r}", t0, path)
    try:
        w, h = int(ws), int(hs)
    except ValueError:
        bad, off = (ws, t1) if not ws.isdigit() else (hs, t2)
        raise FormatError(f"bad PFM dimension {bad!r}", off, path) from None
    if w <= 0 or h <= 0:
        raise FormatError(f"bad PFM dimensions {w}x{h}", t1, path)
    try:
        scale = float(sc)
    except ValueError:
        raise FormatError(f"bad PFM scale {sc!r}", t3, path) from None
    if scale == 0:
        raise FormatError("PFM scale must be non-zero", t3, path)
    start = pos + 1
    ch = 3 if tag == b"PF" else 1
    n = w * h * ch
    if len(data) - start < 4 * n:
        raise FormatError(f"PFM payload too short ({len(data) - start} < {4 * n} bytes)", start, path)
    dt = "<f4" if scale < 0 else ">f4"
    a = np.frombuffer(data, dtype=dt, count=n, offset=start).astype(np.float32)
    a = a.reshape((h, w, 3) if ch == 3 else (h, w))[::-1]
    return np.ascontiguousarray(a)


def write_png(path, img):
    from PIL import Image

    a = np.asarray(img, dtype=np.float64)
    u8 = np.clip(np.round(a * 255), 0, 255).astype(np.uint8)
    try:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(u8).save(path)
    except OSError as e:
        raise IoFailure(f"cannot write {path}: {e}") from e


def write_image(stem, img):
    """Float sidecar ``<stem>.pfm`` (metric-exact) plus ``<stem>.png`` preview."""
    stem = Path(stem)
    write_pfm(stem.with_suffix(".pfm"), img)
    write_png(stem.with_suffix(".png"), img)


# manifest / dataset ---------------------------------------------------------------

@dataclass
class ViewRecord:
    id: str
    camera_path: str
    degraded_path: str
    split: str = "train"
    clean_path: Optional[str] = None
    depth_path: Optional[str] = None
    pseudo_depth_path: Optional[str] = None
    path_t: Optional[float] = None


@dataclass
class DatasetManifest:
    views: list
    bounds: dict
    version: int = MANIFEST_VERSION
    preset: Optional[dict] = None
    points_path: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        return json.dumps(d, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        d = json.loads(text)
        if d.get("version") != MANIFEST_VERSION:
            raise FormatError(f"unsupported manifest version {d.get('version')!r}", 0)
        d["views"] = [ViewRecord(**v) for v in d["views"]]
        return cls(**d)


def write_manifest(path, manifest: DatasetManifest):
    _write_bytes(path, manifest.to_json().encode())


def read_manifest(path) -> DatasetManifest:
    try:
        return DatasetManifest.from_json(_read_bytes(path).decode())
    except json.JSONDecodeError as e:
        raise FormatError(f"invalid JSON: {e.msg}", e.pos, path) from None


@dataclass
class View:
    id: str
    camera: Camera
    image: np.ndarray
    split: str = "train"
    clean: Optional[np.ndarray] = None
    depth: Optional[np.ndarray] = None
    pseudo_depth: Optional[np.ndarray] = None


@dataclass
class Dataset:
    views: list
    bounds: Bounds
    points: Optional[np.ndarray] = None
    point_colors: Optional[np.ndarray] = None
    preset: Optional[dict] = None

    def split(self, name: str) -> list:
        return [v for v in self.views if v.split == name]


def load_dataset(root, disparity: bool = False) -> Dataset:
    """Read a dataset directory. ``disparity=True`` inverts pseudo-depth maps on ingestion."""
    root = Path(root)
    man = read_manifest(root / "manifest.json")
    views = []
    for rec in man.views:
        def opt(p, _root=root):
            return None if p is None else read_pfm(_root / p).astype(np.float64)

        pseudo = opt(rec.pseudo_depth_path)
        if pseudo is not None and disparity:
            pseudo = 1.0 / np.maximum(pseudo, 1e-12)
        views.append(View(rec.id, read_camera(root / rec.camera_path),
                          read_pfm(root / rec.degraded_path).astype(np.float64), rec.split,
                          opt(rec.clean_path), opt(rec.depth_path), pseudo))
    pts = cols = None
    if man.points_path:
        pts, cols = read_ply(root / man.points_path)
    return Dataset(views, Bounds(man.bounds["lo"], man.bounds["hi"]), pts, cols, man.preset)


# checkpoints ----------------------------------------------------------------------

@dataclass
class Checkpoint:
    step: int
    scene: Scene
    medium: MediumGrid
    config: dict
    adam: Optional[dict] = None   # {"step": int, "m": {name: arr}, "v": {name: arr}}
    version: int = CHECKPOINT_VERSION


def _blob_items(ck: Checkpoint):
    items = [(f"scene/{k}", getattr(ck.scene, k)) for k in Scene.PARAM_NAMES]
    items += [(f"medium/{k}", getattr(ck.medium, k)) for k in FIELDS]
    if ck.adam is not None:
        for moment in ("m", "v"):
            for k in sorted(ck.adam[moment]):
                items.append((f"adam/{moment}/{k}", ck.adam[moment][k]))
    return items


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    blobs, table, offset = [], [], 0
    for name, arr in _blob_items(ck):
        raw = np.ascontiguousarray(arr, dtype="<f8").tobytes()
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset,
                      "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = {
        "version": ck.version, "step": int(ck.step), "config": ck.config,
        "scene_bounds": {"lo": ck.scene.bounds.lo.tolist(), "hi": ck.scene.bounds.hi.tolist()},
        "medium_bounds": {"lo": ck.medium.bounds.lo.tolist(), "hi": ck.medium.bounds.hi.tolist()},
        "medium_mode": ck.medium.mode,
        "adam_step": None if ck.adam is None else int(ck.adam["step"]),
        "blobs": table,
    }
    hb = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(hb)) + hb + b"".join(blobs)


def checkpoint_from_bytes(data: bytes, path=None) -> Checkpoint:
    if data[:8] != CHECKPOINT_MAGIC:
        raise FormatError("bad checkpoint magic", 0, path)
    if len(data) < 16:
        raise FormatError("truncated checkpoint", len(data), path)
    (hlen,) = struct.unpack("<Q", data[8:16])
    try:
        header = json.loads(data[16:16 + hlen])
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise FormatError(f"bad checkpoint header: {e}", 16, path) from None
    if header.get("version") != CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {header.get('version')!r}", 16, path)
    base = 16 + hlen
    arrs = {}
    for b in header["blobs"]:
        start = base + b["offset"]
        if start + b["nbytes"] > len(data):
            raise FormatError(f"blob {b['name']} runs past end of file", start, path)
        arrs[b["name"]] = np.frombuffer(data, "<f8", count=b["nbytes"] // 8,
                                        offset=start).reshape(b["shape"]).astype(np.float64)
    sb, mb = header["scene_bounds"], header["medium_bounds"]
    scene = Scene(*(arrs[f"scene/{k}"] for k in Scene.PARAM_NAMES), bounds=Bounds(sb["lo"], sb["hi"]))
    medium = MediumGrid(*(arrs[f"medium/{k}"] for k in FIELDS), bounds=Bounds(mb["lo"], mb["hi"]),
                        mode=header["medium_mode"])
    adam = None
    if header["adam_step"] is not None:
        adam = {"step": header["adam_step"], "m": {}, "v": {}}
        for name, a in arrs.items():
            if name.startswith("adam/"):
                _, moment, key = name.split("/", 2)
                adam[moment][key] = a
    return Checkpoint(header["step"], scene, medium, header["config"], adam, header["version"])


def save_checkpoint(path, ck: Checkpoint):
    _write_bytes(path, checkpoint_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    return checkpoint_from_bytes(_read_bytes(path), path)
