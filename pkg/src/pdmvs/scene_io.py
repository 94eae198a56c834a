"""Scene loading and file formats.

Formats:
  * cameras: plain text, one block per view (image name, 9 K entries,
    9 R entries, 3 T entries, width, height)
  * depth / normal maps: PFM, little-endian, bottom-up scanlines,
    scale header -1.0, invalid pixels encoded as -1.0
  * point clouds: binary little-endian PLY with x,y,z,nx,ny,nz[,r,g,b]
  * images: 8-bit PNG/PPM, converted to [0,1] grayscale luminance
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

INVALID_DEPTH = -1.0

# BT.601 luma weights
_LUMA = np.array([0.299, 0.587, 0.114])


class SceneParseError(Exception):
    """Raised for any malformed scene input file."""


@dataclass
class CameraModel:
    """Pinhole camera: pixel = K (R X + T) for world point X."""

    K: np.ndarray
    R: np.ndarray
    T: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.T = np.asarray(self.T, dtype=np.float64).reshape(3)

    def validate(self, index: int = -1) -> None:
        tag = f"camera {index}" if index >= 0 else "camera"
        err = np.abs(self.R.T @ self.R - np.eye(3)).max()
        if err > 1e-6:
            raise SceneParseError(
                f"{tag}: rotation not orthonormal (max |R'R - I| = {err:.3g})"
            )
        if self.K[0, 0] <= 0 or self.K[1, 1] <= 0:
            raise SceneParseError(f"{tag}: non-positive focal length")
        if abs(self.K[1, 0]) > 0 or abs(self.K[2, 0]) > 0 or abs(self.K[2, 1]) > 0:
            raise SceneParseError(f"{tag}: K has non-zero lower triangle")
        if self.width < 11 or self.height < 11:
            raise SceneParseError(f"{tag}: image smaller than patch size")

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.R.T @ self.T


@dataclass
class DepthMapBuffer:
    """Per-pixel depth with a validity mask.

    ``values`` holds depth for valid pixels and is ignored where
    ``valid`` is False.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        self.valid = np.asarray(self.valid, dtype=bool)
        if self.values.shape != self.valid.shape or self.values.ndim != 2:
            raise ValueError("values/valid must be matching 2D arrays")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_values(cls, values: np.ndarray) -> "DepthMapBuffer":
        """Treat non-positive or non-finite entries as invalid."""
        values = np.asarray(values, dtype=np.float32)
        valid = np.isfinite(values) & (values > 0)
        return cls(values, valid)


@dataclass
class PointCloud:
    positions: np.ndarray
    normals: np.ndarray
    colors: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float32).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float32).reshape(-1, 3)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(-1, 3)

    def __len__(self) -> int:
        return self.positions.shape[0]


# ---------------------------------------------------------------------------
# images

def load_gray_image(path: Path | str) -> np.ndarray:
    """Load an 8-bit image as [0,1] float32 luminance."""
    with Image.open(path) as img:
        arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., :3] @ _LUMA
    return np.clip(arr / 255.0, 0.0, 1.0).astype(np.float32)


def save_gray_image(values: np.ndarray, path: Path | str) -> None:
    arr = np.clip(np.asarray(values) * 255.0, 0, 255).astype(np.uint8)
    Image.fromarray(arr, mode="L").save(path)


# ---------------------------------------------------------------------------
# cameras

def _tokenize(text: str) -> list[str]:
    return re.split(r"\s+", text.strip())


def load_cameras(path: Path | str) -> tuple[list[CameraModel], list[str]]:
    """Parse the plain-text camera file; returns (cameras, image names)."""
    path = Path(path)
    if not path.is_file():
        raise SceneParseError(f"camera file not found: {path}")
    tokens = _tokenize(path.read_text())
    if tokens == [""]:
        raise SceneParseError(f"empty camera file: {path}")
    cams: list[CameraModel] = []
    names: list[str] = []
    pos = 0
    while pos < len(tokens):
        if pos + 24 > len(tokens):
            raise SceneParseError(
                f"camera {len(cams)}: truncated block at token {pos}"
            )
        name = tokens[pos]
        try:
            nums = [float(t) for t in tokens[pos + 1 : pos + 24]]
        except ValueError as exc:
            raise SceneParseError(f"camera {len(cams)}: bad number: {exc}") from exc
        K = np.array(nums[0:9]).reshape(3, 3)
        R = np.array(nums[9:18]).reshape(3, 3)
        T = np.array(nums[18:21])
        width, height = int(nums[21]), int(nums[22])
        cam = CameraModel(K, R, T, width, height)
        cam.validate(len(cams))
        cams.append(cam)
        names.append(name)
        pos += 24
    return cams, names


def save_cameras(cams: list[CameraModel], names: list[str], path: Path | str) -> None:
    lines = []
    for cam, name in zip(cams, names):
        lines.append(name)
        lines.append(" ".join(repr(float(v)) for v in cam.K.ravel()))
        lines.append(" ".join(repr(float(v)) for v in cam.R.ravel()))
        lines.append(" ".join(repr(float(v)) for v in cam.T.ravel()))
        lines.append(f"{cam.width} {cam.height}")
        lines.append("")
    Path(path).write_text("\n".join(lines))


def load_scene(
    camera_file_path: Path | str, image_dir: Path | str
) -> tuple[list[CameraModel], list[np.ndarray]]:
    """Load cameras plus one grayscale image per camera entry."""
    cams, names = load_cameras(camera_file_path)
    image_dir = Path(image_dir)
    images = []
    for i, (cam, name) in enumerate(zip(cams, names)):
        img_path = image_dir / name
        if not img_path.is_file():
            raise SceneParseError(f"camera {i}: missing image {img_path}")
        img = load_gray_image(img_path)
        if img.shape != (cam.height, cam.width):
            raise SceneParseError(
                f"camera {i}: image {name} is {img.shape[1]}x{img.shape[0]}, "
                f"camera says {cam.width}x{cam.height}"
            )
        images.append(img)
    return cams, images


# ---------------------------------------------------------------------------
# PFM depth / normal maps

def _write_pfm(data: np.ndarray, path: Path | str) -> None:
    data = np.asarray(data, dtype=np.float32)
    channels = 1 if data.ndim == 2 else data.shape[2]
    header = b"Pf\n" if channels == 1 else b"PF\n"
    h, w = data.shape[:2]
    with open(path, "wb") as f:
        f.write(header)
        f.write(f"{w} {h}\n".encode())
        f.write(b"-1.0\n")
        f.write(np.ascontiguousarray(data[::-1]).tobytes())


def _read_pfm(path: Path | str) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise SceneParseError(f"PFM file not found: {path}")
    with open(path, "rb") as f:
        magic = f.readline().strip()
        if magic not in (b"Pf", b"PF"):
            raise SceneParseError(f"{path}: bad PFM magic {magic!r}")
        channels = 1 if magic == b"Pf" else 3
        dims = f.readline().split()
        if len(dims) != 2:
            raise SceneParseError(f"{path}: malformed PFM dimension line")
        try:
            w, h = int(dims[0]), int(dims[1])
        except ValueError as exc:
            raise SceneParseError(f"{path}: malformed PFM dimensions") from exc
        if w <= 0 or h <= 0 or w * h > 10**8:
            raise SceneParseError(f"{path}: PFM dimensions out of range ({w}x{h})")
        try:
            scale = float(f.readline())
        except ValueError as exc:
            raise SceneParseError(f"{path}: malformed PFM scale line") from exc
        count = w * h * channels
        raw = f.read(count * 4)
        if len(raw) != count * 4:
            raise SceneParseError(f"{path}: truncated PFM payload")
        data = np.frombuffer(raw, dtype="<f4" if scale < 0 else ">f4")
    data = data.astype(np.float32).reshape(h, w, channels)[::-1]
    return data[..., 0] if channels == 1 else data


def write_depth_map(buffer: DepthMapBuffer, path: Path | str) -> None:
    out = np.where(buffer.valid, buffer.values, np.float32(INVALID_DEPTH))
    _write_pfm(out, path)


def read_depth_map(path: Path | str) -> DepthMapBuffer:
    data = _read_pfm(path)
    if data.ndim != 2:
        raise SceneParseError(f"{path}: expected single-channel depth PFM")
    valid = np.isfinite(data) & (data > 0)
    return DepthMapBuffer(data, valid)


def write_normal_map(normals: np.ndarray, path: Path | str) -> None:
    _write_pfm(np.asarray(normals, dtype=np.float32), path)


def read_normal_map(path: Path | str) -> np.ndarray:
    data = _read_pfm(path)
    if data.ndim != 3:
        raise SceneParseError(f"{path}: expected 3-channel normal PFM")
    return data


# ---------------------------------------------------------------------------
# PLY point clouds

def write_point_cloud(cloud: PointCloud, path: Path | str) -> None:
    n = len(cloud)
    props = [
        "property float x", "property float y", "property float z",
        "property float nx", "property float ny", "property float nz",
    ]
    if cloud.colors is not None:
        props += ["property uchar red", "property uchar green", "property uchar blue"]
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {n}\n" + "\n".join(props) + "\nend_header\n"
    )
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        if cloud.colors is None:
            rec = np.hstack([cloud.positions, cloud.normals]).astype("<f4")
            f.write(rec.tobytes())
        else:
            rec = np.zeros(
                n,
                dtype=[("pos", "<f4", 3), ("nrm", "<f4", 3), ("rgb", "u1", 3)],
            )
            rec["pos"] = cloud.positions
            rec["nrm"] = cloud.normals
            rec["rgb"] = cloud.colors
            f.write(rec.tobytes())


def read_point_cloud(path: Path | str) -> PointCloud:
    with open(path, "rb") as f:
        if f.readline().strip() != b"ply":
            raise SceneParseError(f"{path}: not a PLY file")
        n = None
        props: list[str] = []
        while True:
            line = f.readline()
            if not line:
                raise SceneParseError(f"{path}: unterminated PLY header")
            line = line.strip()
            if line == b"end_header":
                break
            parts = line.split()
            if parts[:2] == [b"element", b"vertex"]:
                n = int(parts[2])
            elif parts and parts[0] == b"property":
                props.append(parts[1].decode())
        if n is None:
            raise SceneParseError(f"{path}: missing vertex element")
        has_color = "uchar" in props
        itemsize = 24 + (3 if has_color else 0)
        raw = f.read(n * itemsize)
        if len(raw) != n * itemsize:
            raise SceneParseError(f"{path}: truncated PLY payload")
    if has_color:
        rec = np.frombuffer(
            raw, dtype=[("pos", "<f4", 3), ("nrm", "<f4", 3), ("rgb", "u1", 3)]
        )
        return PointCloud(rec["pos"].copy(), rec["nrm"].copy(), rec["rgb"].copy())
    rec = np.frombuffer(raw, dtype="<f4").reshape(n, 6)
    return PointCloud(rec[:, :3].copy(), rec[:, 3:].copy())
