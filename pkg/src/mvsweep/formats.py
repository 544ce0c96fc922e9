"""On-disk formats: camera text files, PFM, PPM/PGM, PLY, weights.

Formats follow the conventions common in multi-view stereo datasets:

``cam.txt``
    Three blocks: an ``extrinsic`` 4x4 world-to-camera matrix, an
    ``intrinsic`` 3x3 matrix, and a final line ``d_min d_interval
    [count d_max]`` describing the swept depth range.

``.pfm``
    Grayscale portable float map: ``Pf``, ``width height``, scale line
    whose sign encodes endianness (negative = little-endian, the only
    kind written or accepted), then float32 rows bottom-to-top.
    Invalid pixels are stored as NaN.

``.ppm`` / ``.pgm``
    Binary P6/P5, maxval 255.

``.ply``
    Point clouds, ascii or binary little-endian, float32 positions and
    optional uchar colors.

weights
    A one-line JSON manifest (names, shapes, per-tensor byte offsets)
    followed by raw little-endian float32 data.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BigEndianUnsupportedError,
    NonRigidRotationWarning,
    ParseError,
)
from .fusion import PointCloud
from .geometry import Camera

__all__ = [
    "DepthRange",
    "ProjectLayout",
    "load_tensors",
    "read_cam",
    "read_image",
    "read_pfm",
    "read_ply",
    "save_tensors",
    "write_cam",
    "write_image",
    "write_pfm",
    "write_ply",
]


# ---------------------------------------------------------------------------
# Camera text files


@dataclass(frozen=True)
class DepthRange:
    """The swept range advertised by a camera file."""

    d_min: float
    d_interval: float
    count: int | None = None
    d_max: float | None = None


def _nearest_rotation(r: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(r)
    fix = np.diag([1.0, 1.0, np.sign(np.linalg.det(u @ vt))])
    return u @ fix @ vt


def read_cam(path) -> tuple[Camera, DepthRange]:
    """Parse a camera file; malformed content raises :class:`ParseError`.

    Rotations that fail orthonormality are replaced by the nearest
    rotation; failures worse than 1e-3 additionally emit
    :class:`NonRigidRotationWarning`.
    """
    path = Path(path)
    lines = path.read_text().splitlines()

    def want(idx: int, token: str) -> None:
        if idx >= len(lines) or lines[idx].strip() != token:
            raise ParseError(f"expected {token!r}", path, idx + 1)

    def matrix(start: int, rows: int, cols: int) -> np.ndarray:
        out = np.zeros((rows, cols))
        for r in range(rows):
            idx = start + r
            if idx >= len(lines):
                raise ParseError("unexpected end of file", path, len(lines))
            parts = lines[idx].split()
            if len(parts) != cols:
                raise ParseError(f"expected {cols} numbers", path, idx + 1)
            try:
                out[r] = [float(p) for p in parts]
            except ValueError as exc:
                raise ParseError(str(exc), path, idx + 1) from exc
        return out

    want(0, "extrinsic")
    extrinsic = matrix(1, 4, 4)
    if np.max(np.abs(extrinsic[3] - [0, 0, 0, 1])) > 1e-9:
        raise ParseError("extrinsic last row must be 0 0 0 1", path, 5)
    want(6, "intrinsic")
    intrinsic = matrix(7, 3, 3)
    range_idx = 11
    if range_idx >= len(lines):
        raise ParseError("missing depth range line", path, len(lines))
    parts = lines[range_idx].split()
    if len(parts) not in (2, 4):
        raise ParseError("depth range line needs 2 or 4 numbers", path, range_idx + 1)
    try:
        nums = [float(p) for p in parts]
    except ValueError as exc:
        raise ParseError(str(exc), path, range_idx + 1) from exc
    if len(parts) == 2:
        depth_range = DepthRange(nums[0], nums[1])
    else:
        depth_range = DepthRange(nums[0], nums[1], int(nums[2]), nums[3])

    rotation = extrinsic[:3, :3]
    failure = np.max(np.abs(rotation.T @ rotation - np.eye(3)))
    if failure > 1e-9 or np.linalg.det(rotation) < 0:
        fixed = _nearest_rotation(rotation)
        if failure > 1e-3:
            warnings.warn(
                f"{path}: rotation fails orthonormality by {failure:.2e}; "
                "re-orthonormalized", NonRigidRotationWarning)
        rotation = fixed
    camera = Camera(intrinsic=intrinsic, rotation=rotation,
                    translation=extrinsic[:3, 3])
    return camera, depth_range


def write_cam(path, cam: Camera, depth_range: DepthRange) -> None:
    def row(values) -> str:
        return " ".join(f"{v:.13g}" for v in values)

    extrinsic = np.eye(4)
    extrinsic[:3, :3] = cam.rotation
    extrinsic[:3, 3] = cam.translation
    lines = ["extrinsic"]
    lines += [row(extrinsic[r]) for r in range(4)]
    lines.append("")
    lines.append("intrinsic")
    lines += [row(cam.intrinsic[r]) for r in range(3)]
    lines.append("")
    if depth_range.count is not None:
        lines.append(
            f"{depth_range.d_min:.13g} {depth_range.d_interval:.13g} "
            f"{depth_range.count} {depth_range.d_max:.13g}")
    else:
        lines.append(f"{depth_range.d_min:.13g} {depth_range.d_interval:.13g}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# PFM depth / confidence maps


def read_pfm(path) -> np.ndarray:
    """Read a grayscale PFM into a float32 array (NaN marks invalid)."""
    path = Path(path)
    raw = path.read_bytes()

    def token(pos: int) -> tuple[bytes, int]:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        if pos == end:
            raise ParseError("truncated header", path)
        return raw[pos:end], end

    magic, pos = token(0)
    if magic == b"PF":
        raise ParseError("color PFM is not supported", path, 1)
    if magic != b"Pf":
        raise ParseError(f"bad magic {magic!r}", path, 1)
    wtok, pos = token(pos)
    htok, pos = token(pos)
    stok, pos = token(pos)
    try:
        width, height, scale = int(wtok), int(htok), float(stok)
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc
    if width <= 0 or height <= 0:
        raise ParseError(f"bad dimensions {width}x{height}", path)
    if scale > 0:
        raise BigEndianUnsupportedError("big-endian PFM is not supported", path)
    if scale == 0:
        raise ParseError("scale must be non-zero", path)
    data_start = pos + 1  # exactly one whitespace byte after the scale
    expected = width * height * 4
    payload = raw[data_start:data_start + expected]
    if len(payload) != expected:
        raise ParseError(
            f"expected {expected} data bytes, found {len(payload)}", path)
    rows = np.frombuffer(payload, dtype="<f4").reshape(height, width)
    return rows[::-1].copy()  # stored bottom-to-top


def write_pfm(path, data: np.ndarray, mask: np.ndarray | None = None) -> None:
    """Write a float map; masked-out pixels become NaN."""
    arr = np.asarray(data, dtype="<f4")
    if arr.ndim != 2:
        raise ValueError(f"PFM data must be 2-d, got shape {arr.shape}")
    if mask is not None:
        arr = np.where(np.asarray(mask, dtype=bool), arr, np.float32(np.nan))
    height, width = arr.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    Path(path).write_bytes(header + arr[::-1].tobytes())


# ---------------------------------------------------------------------------
# PPM / PGM images


def write_image(path, image: np.ndarray) -> None:
    """Write [0, 1] floats as binary P5 (2-d input) or P6 (3-channel)."""
    arr = np.asarray(image, dtype=np.float64)
    quantized = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    if arr.ndim == 2:
        magic = b"P5"
    elif arr.ndim == 3 and arr.shape[2] == 3:
        magic = b"P6"
    else:
        raise ValueError(f"expected (H, W) or (H, W, 3), got {arr.shape}")
    height, width = arr.shape[:2]
    header = magic + f"\n{width} {height}\n255\n".encode("ascii")
    Path(path).write_bytes(header + quantized.tobytes())


def read_image(path) -> np.ndarray:
    """Read binary P5/P6 into floats in [0, 1]."""
    path = Path(path)
    raw = path.read_bytes()
    pos = 0
    fields = []
    while len(fields) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":  # comment runs to end of line
            while pos < len(raw) and raw[pos:pos + 1] != b"\n":
                pos += 1
            continue
        end = pos
        while end < len(raw) and not raw[end:end + 1].isspace():
            end += 1
        if pos == end:
            raise ParseError("truncated header", path)
        fields.append(raw[pos:end])
        pos = end
    magic, wtok, htok, mtok = fields
    if magic not in (b"P5", b"P6"):
        raise ParseError(f"bad magic {magic!r}", path, 1)
    try:
        width, height, maxval = int(wtok), int(htok), int(mtok)
    except ValueError as exc:
        raise ParseError(str(exc), path) from exc
    if maxval != 255:
        raise ParseError(f"only maxval 255 is supported, got {maxval}", path)
    channels = 3 if magic == b"P6" else 1
    expected = width * height * channels
    payload = raw[pos + 1:pos + 1 + expected]
    if len(payload) != expected:
        raise ParseError(
            f"expected {expected} data bytes, found {len(payload)}", path)
    arr = np.frombuffer(payload, dtype=np.uint8).astype(np.float64) / 255.0
    if channels == 3:
        return arr.reshape(height, width, 3)
    return arr.reshape(height, width)


# ---------------------------------------------------------------------------
# PLY point clouds


def write_ply(path, cloud: PointCloud, mode: str = "binary") -> None:
    """Write a point cloud; ``mode`` is ``"ascii"`` or ``"binary"``.

    Positions are float32; colors, when present, uchar red/green/blue.
    """
    if mode not in ("ascii", "binary"):
        raise ValueError(f"unknown mode {mode!r}")
    fmt = "ascii 1.0" if mode == "ascii" else "binary_little_endian 1.0"
    header = [
        "ply",
        f"format {fmt}",
        f"element vertex {len(cloud)}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if cloud.rgb is not None:
        header += [
            "property uchar red",
            "property uchar green",
            "property uchar blue",
        ]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")
    xyz = cloud.xyz.astype("<f4")
    if mode == "ascii":
        lines = []
        for i in range(len(cloud)):
            parts = [f"{v:.9g}" for v in xyz[i]]
            if cloud.rgb is not None:
                parts += [str(int(v)) for v in cloud.rgb[i]]
            lines.append(" ".join(parts))
        body = ("\n".join(lines) + "\n").encode("ascii") if lines else b""
        Path(path).write_bytes(head + body)
        return
    if cloud.rgb is not None:
        record = np.zeros(len(cloud), dtype=[("xyz", "<f4", 3), ("rgb", "u1", 3)])
        record["xyz"] = xyz
        record["rgb"] = cloud.rgb
    else:
        record = np.zeros(len(cloud), dtype=[("xyz", "<f4", 3)])
        record["xyz"] = xyz
    Path(path).write_bytes(head + record.tobytes())


def read_ply(path) -> PointCloud:
    """Read the subset of PLY written by :func:`write_ply`."""
    path = Path(path)
    raw = path.read_bytes()
    end = raw.find(b"end_header\n")
    if end < 0:
        raise ParseError("missing end_header", path)
    header_lines = raw[:end].decode("ascii", errors="replace").splitlines()
    body = raw[end + len(b"end_header\n"):]
    if not header_lines or header_lines[0] != "ply":
        raise ParseError("not a PLY file", path, 1)
    fmt = None
    count = None
    props: list[tuple[str, str]] = []
    for lineno, line in enumerate(header_lines[1:], start=2):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            if parts[1] != "vertex":
                raise ParseError(f"unsupported element {parts[1]!r}", path, lineno)
            count = int(parts[2])
        elif parts[0] == "property":
            props.append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise ParseError(f"unsupported format {fmt!r}", path)
    if count is None:
        raise ParseError("missing vertex element", path)
    names = [name for _, name in props]
    if names[:3] != ["x", "y", "z"]:
        raise ParseError("first three properties must be x, y, z", path)
    has_rgb = names[3:6] == ["red", "green", "blue"]
    if fmt == "ascii":
        rows = body.decode("ascii").split()
        stride = len(props)
        if len(rows) != count * stride:
            raise ParseError(
                f"expected {count * stride} values, found {len(rows)}", path)
        table = np.array(rows, dtype=np.float64).reshape(count, stride) if count else np.zeros((0, stride))
        xyz = table[:, :3]
        rgb = table[:, 3:6].astype(np.uint8) if has_rgb else None
        return PointCloud(xyz, rgb)
    dtype = [("xyz", "<f4", 3)]
    if has_rgb:
        dtype.append(("rgb", "u1", 3))
    record = np.frombuffer(body, dtype=dtype, count=count)
    rgb = record["rgb"].copy() if has_rgb else None
    return PointCloud(record["xyz"].astype(np.float64), rgb)


# ---------------------------------------------------------------------------
# Weight container


def save_tensors(path, tensors: dict[str, np.ndarray]) -> None:
    """Write named float tensors: one JSON manifest line, then raw data.

    Data is little-endian float32, concatenated in manifest order.
    """
    entries = []
    blobs = []
    offset = 0
    for name, arr in tensors.items():
        arr32 = np.ascontiguousarray(arr, dtype="<f4")
        entries.append({
            "name": name,
            "shape": list(arr32.shape),
            "offset": offset,
        })
        blobs.append(arr32.tobytes())
        offset += len(blobs[-1])
    manifest = json.dumps(
        {"magic": "mvsweep-tensors", "version": 1, "dtype": "<f4",
         "tensors": entries})
    Path(path).write_bytes(manifest.encode("ascii") + b"\n" + b"".join(blobs))


def load_tensors(path) -> dict[str, np.ndarray]:
    """Read a tensor container back into float64 arrays."""
    path = Path(path)
    raw = path.read_bytes()
    newline = raw.find(b"\n")
    if newline < 0:
        raise ParseError("missing manifest line", path, 1)
    try:
        manifest = json.loads(raw[:newline].decode("ascii"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"bad manifest: {exc}", path, 1) from exc
    if manifest.get("magic") != "mvsweep-tensors":
        raise ParseError("not a tensor container", path, 1)
    if manifest.get("dtype") != "<f4":
        raise ParseError(f"unsupported dtype {manifest.get('dtype')!r}", path, 1)
    body = raw[newline + 1:]
    out: dict[str, np.ndarray] = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) * 4 if shape else 4
        chunk = body[entry["offset"]:entry["offset"] + size]
        if len(chunk) != size:
            raise ParseError(f"tensor {entry['name']!r} is truncated", path)
        out[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float64)
    return out


# ---------------------------------------------------------------------------
# Project directory layout


@dataclass(frozen=True)
class ProjectLayout:
    """File naming inside a reconstruction working directory.

    ``images/NNNNNNNN.ppm``, ``cams/NNNNNNNN_cam.txt``,
    ``depths/NNNNNNNN.pfm`` (+ ``_conf.pfm``), ``pair.txt``, and
    ``cloud.ply``, with 8-digit zero-padded view indices.
    """

    root: Path

    def __post_init__(self) -> None:
        object.__setattr__(self, "root", Path(self.root))

    def image(self, index: int) -> Path:
        return self.root / "images" / f"{index:08d}.ppm"

    def cam(self, index: int) -> Path:
        return self.root / "cams" / f"{index:08d}_cam.txt"

    def depth(self, index: int) -> Path:
        return self.root / "depths" / f"{index:08d}.pfm"

    def confidence(self, index: int) -> Path:
        return self.root / "depths" / f"{index:08d}_conf.pfm"

    def gt_depth(self, index: int) -> Path:
        return self.root / "gt_depths" / f"{index:08d}.pfm"

    @property
    def pair(self) -> Path:
        return self.root / "pair.txt"

    @property
    def cloud(self) -> Path:
        return self.root / "cloud.ply"

    @property
    def gt_cloud(self) -> Path:
        return self.root / "gt.ply"

    def view_count(self) -> int:
        images = sorted((self.root / "images").glob("*.ppm"))
        return len(images)

    def make_dirs(self, with_gt: bool = False) -> None:
        for sub in ("images", "cams", "depths") + (("gt_depths",) if with_gt else ()):
            (self.root / sub).mkdir(parents=True, exist_ok=True)

    def write_pairs(self, pairs: dict[int, list[int]]) -> None:
        """pair.txt: first line is the view count; then per line the
        reference index followed by its source indices in match order."""
        lines = [str(len(pairs))]
        for ref in sorted(pairs):
            lines.append(" ".join(str(v) for v in [ref] + list(pairs[ref])))
        self.pair.write_text("\n".join(lines) + "\n")

    def read_pairs(self) -> dict[int, list[int]]:
        lines = self.pair.read_text().splitlines()
        if not lines:
            raise ParseError("empty pair file", self.pair, 1)
        try:
            count = int(lines[0])
        except ValueError as exc:
            raise ParseError(str(exc), self.pair, 1) from exc
        pairs: dict[int, list[int]] = {}
        for lineno, line in enumerate(lines[1:count + 1], start=2):
            parts = [int(p) for p in line.split()]
            if not parts:
                raise ParseError("empty pair line", self.pair, lineno)
            pairs[parts[0]] = parts[1:]
        return pairs
