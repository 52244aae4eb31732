"""File formats and dataset handling.

* Color files: 8-bit-per-channel PNG, mapped to linear radiance by
  ``value / 255`` (gamma handling is out of scope).
* Depth files: 16-bit single-channel PNG; raw units are converted to
  meters by a per-dataset scale (Kinect-convention 0.001 m per unit by
  default).  Raw value 0 encodes "missing".
* Dataset manifests and checkpoints are plain text (checkpoints carry a
  raw little-endian float32 blob after the header).

All writes are atomic: content is staged to a temporary file in the same
directory and renamed into place, so interrupted runs never leave
truncated artifacts.
"""

from __future__ import annotations

import csv
import io as _io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np

from .discriminator import Discriminator
from .exceptions import DataError
from .fitting import TrainReport, model_to_theta
from .physics import PARAM_NAMES, RenderModel
from .validation import as_depth, as_image

__all__ = [
    "FIT_HEIGHT",
    "FIT_WIDTH",
    "load_image",
    "save_image",
    "load_depth",
    "save_depth",
    "resample_image",
    "resample_depth",
    "ManifestEntry",
    "DatasetManifest",
    "load_manifest",
    "save_manifest",
    "save_checkpoint",
    "load_checkpoint",
    "save_train_report",
    "save_table",
    "write_bytes_atomic",
    "write_text_atomic",
    "write_json_atomic",
]

#: Fit resolution (height, width) used by adversarial training.
FIT_HEIGHT = 48
FIT_WIDTH = 64

_DEFAULT_DEPTH_SCALE = 0.001  # meters per raw 16-bit unit


def write_bytes_atomic(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_text_atomic(path, text: str) -> None:
    write_bytes_atomic(path, text.encode("utf-8"))


def write_json_atomic(path, obj) -> None:
    write_text_atomic(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# Images and depth maps
# ---------------------------------------------------------------------------

def load_image(path) -> np.ndarray:
    """Read an 8-bit color PNG as a linear [0, 1] RGB image."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"image file not found: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if raw is None:
        raise DataError(f"unreadable or unsupported image file: {path}")
    if raw.shape[0] < 1 or raw.shape[1] < 1:
        raise DataError(f"image has a zero dimension: {path}")
    rgb = cv2.cvtColor(raw, cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float64) / 255.0


def save_image(img, path) -> None:
    """Write a [0, 1] RGB image as an 8-bit PNG (round-to-nearest)."""
    img = as_image(img)
    quantized = np.round(img * 255.0).astype(np.uint8)
    bgr = cv2.cvtColor(quantized, cv2.COLOR_RGB2BGR)
    ok, buf = cv2.imencode(".png", bgr)
    if not ok:
        raise DataError(f"failed to encode image for {path}")
    write_bytes_atomic(path, buf.tobytes())


def load_depth(path, scale: float = _DEFAULT_DEPTH_SCALE) -> np.ndarray:
    """Read a 16-bit single-channel PNG as a depth map in meters."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"depth file not found: {path}")
    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        raise DataError(f"unreadable or unsupported depth file: {path}")
    if raw.ndim != 2:
        raise DataError(f"depth file must be single-channel, got shape {raw.shape}: {path}")
    if raw.shape[0] < 1 or raw.shape[1] < 1:
        raise DataError(f"depth file has a zero dimension: {path}")
    if scale <= 0:
        raise DataError(f"depth scale must be > 0, got {scale}")
    return raw.astype(np.float64) * scale


def save_depth(depth, path, scale: float = _DEFAULT_DEPTH_SCALE) -> None:
    """Write a depth map in meters as a 16-bit PNG with the given unit scale."""
    depth = as_depth(depth)
    if scale <= 0:
        raise DataError(f"depth scale must be > 0, got {scale}")
    raw = np.clip(np.round(depth / scale), 0, np.iinfo(np.uint16).max).astype(np.uint16)
    ok, buf = cv2.imencode(".png", raw)
    if not ok:
        raise DataError(f"failed to encode depth for {path}")
    write_bytes_atomic(path, buf.tobytes())


def resample_image(img, height: int, width: int) -> np.ndarray:
    """Resize a color image: area averaging down, bicubic up."""
    img = as_image(img)
    h, w = img.shape[:2]
    if (height, width) == (h, w):
        return img
    if height <= h and width <= w:
        interp = cv2.INTER_AREA
    else:
        interp = cv2.INTER_CUBIC
    out = cv2.resize(img, (width, height), interpolation=interp)
    return np.clip(out, 0.0, 1.0)


def resample_depth(depth, height: int, width: int) -> np.ndarray:
    """Resize a depth map with nearest-neighbor (preserves missing zeros)."""
    depth = as_depth(depth)
    if (height, width) == depth.shape:
        return depth
    return cv2.resize(depth, (width, height), interpolation=cv2.INTER_NEAREST)


# ---------------------------------------------------------------------------
# Dataset manifests
# ---------------------------------------------------------------------------

@dataclass
class ManifestEntry:
    color: Path
    depth: Optional[Path] = None
    underwater: Optional[Path] = None


@dataclass
class DatasetManifest:
    """Paths and conventions for one image set.

    ``pairs`` lists RGB-D entries (optionally with an aligned underwater
    image); ``images`` lists unpaired color images (e.g. a real underwater
    sample set).  ``resolution`` is ``"source"``, ``"fit"``, or ``"HxW"``.
    """

    root: Path
    pairs: List[ManifestEntry] = field(default_factory=list)
    images: List[Path] = field(default_factory=list)
    depth_scale: float = _DEFAULT_DEPTH_SCALE
    max_altitude: float = 2.0
    resolution: str = "source"

    def resolve(self, p: Path) -> Path:
        return p if p.is_absolute() else self.root / p

    def target_size(self, h: int, w: int) -> Tuple[int, int]:
        if self.resolution == "source":
            return h, w
        if self.resolution == "fit":
            return FIT_HEIGHT, FIT_WIDTH
        try:
            th, tw = self.resolution.lower().split("x")
            return int(th), int(tw)
        except ValueError:
            raise DataError(f"bad resolution spec '{self.resolution}'") from None

    def load_pair(self, entry: ManifestEntry):
        """Load, convert, and resample one entry to the manifest policy."""
        img = load_image(self.resolve(entry.color))
        th, tw = self.target_size(*img.shape[:2])
        img = resample_image(img, th, tw)
        depth = None
        if entry.depth is not None:
            depth = resample_depth(load_depth(self.resolve(entry.depth),
                                              self.depth_scale), th, tw)
            if depth.shape != img.shape[:2]:
                raise DataError(
                    f"entry {entry.color}: depth grid {depth.shape} does not match "
                    f"color grid {img.shape[:2]}"
                )
        uw = None
        if entry.underwater is not None:
            uw = resample_image(load_image(self.resolve(entry.underwater)), th, tw)
        return img, depth, uw


def load_manifest(path) -> DatasetManifest:
    """Parse a dataset manifest and check every referenced file exists."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"manifest file not found: {path}")
    manifest = DatasetManifest(root=path.parent)
    for line_no, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise DataError(f"{path}:{line_no}: expected 'key = value', got '{line}'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "root":
            p = Path(value)
            manifest.root = p if p.is_absolute() else path.parent / p
        elif key == "depth_scale":
            manifest.depth_scale = float(value)
        elif key == "max_altitude":
            manifest.max_altitude = float(value)
        elif key == "resolution":
            manifest.resolution = value
        elif key == "pair":
            parts = value.split()
            if len(parts) not in (2, 3):
                raise DataError(
                    f"{path}:{line_no}: pair needs 'color depth [underwater]'"
                )
            manifest.pairs.append(ManifestEntry(
                color=Path(parts[0]),
                depth=Path(parts[1]),
                underwater=Path(parts[2]) if len(parts) == 3 else None,
            ))
        elif key == "image":
            manifest.images.append(Path(value))
        else:
            raise DataError(f"{path}:{line_no}: unknown manifest key '{key}'")
    if not manifest.pairs and not manifest.images:
        raise DataError(f"{path}: manifest lists no entries")
    for entry in manifest.pairs:
        for p in (entry.color, entry.depth, entry.underwater):
            if p is not None and not manifest.resolve(p).is_file():
                raise DataError(f"{path}: referenced file not found: {manifest.resolve(p)}")
    for p in manifest.images:
        if not manifest.resolve(p).is_file():
            raise DataError(f"{path}: referenced file not found: {manifest.resolve(p)}")
    return manifest


def save_manifest(manifest: DatasetManifest, path) -> None:
    lines = ["# aquarender dataset manifest"]
    lines.append(f"depth_scale = {manifest.depth_scale!r}")
    lines.append(f"max_altitude = {manifest.max_altitude!r}")
    lines.append(f"resolution = {manifest.resolution}")
    for e in manifest.pairs:
        parts = [str(e.color), str(e.depth)]
        if e.underwater is not None:
            parts.append(str(e.underwater))
        lines.append("pair = " + " ".join(parts))
    for p in manifest.images:
        lines.append(f"image = {p}")
    write_text_atomic(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

_CKPT_MAGIC = "aquarender-checkpoint 1"
_CKPT_SEP = b"\n---\n"


def save_checkpoint(path, model: RenderModel,
                    disc: Optional[Discriminator] = None) -> None:
    """Write a model (and optional discriminator state) to one file.

    Plain-text header with the parameters in both the natural and the
    reparameterized domain, followed by a raw little-endian float32 blob
    holding the listed arrays.
    """
    lines = [_CKPT_MAGIC]
    nat = model.param_vector()
    for name, value in zip(PARAM_NAMES, nat):
        lines.append(f"{name} = {value!r}")
    lines.append(f"noise_sigma = {model.noise_sigma!r}")
    lines.append(f"max_altitude = {model.max_altitude!r}")
    theta = model_to_theta(model)
    lines.append("theta = " + " ".join(repr(v) for v in theta))
    arrays: List[Tuple[str, np.ndarray]] = disc.state_arrays() if disc is not None else []
    if disc is not None:
        lines.append(f"adam_t = {disc.adam_t}")
    blob = _io.BytesIO()
    for name, arr in arrays:
        lines.append(f"array = {name} " + " ".join(str(d) for d in arr.shape))
        blob.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    payload = blob.getvalue()
    lines.append(f"blob_bytes = {len(payload)}")
    write_bytes_atomic(path, "\n".join(lines).encode("ascii") + _CKPT_SEP + payload)


def load_checkpoint(path) -> Tuple[RenderModel, Optional[Discriminator]]:
    path = Path(path)
    if not path.is_file():
        raise DataError(f"checkpoint file not found: {path}")
    data = path.read_bytes()
    sep = data.find(_CKPT_SEP)
    if sep < 0:
        raise DataError(f"malformed checkpoint (missing separator): {path}")
    header = data[:sep].decode("ascii", errors="replace").splitlines()
    payload = data[sep + len(_CKPT_SEP):]
    if not header or header[0] != _CKPT_MAGIC:
        raise DataError(f"not an aquarender checkpoint: {path}")
    values: Dict[str, str] = {}
    array_specs: List[Tuple[str, Tuple[int, ...]]] = []
    for line in header[1:]:
        if not line.strip():
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key == "array":
            parts = value.split()
            array_specs.append((parts[0], tuple(int(d) for d in parts[1:])))
        else:
            values[key] = value
    try:
        nat = np.array([float(values[name]) for name in PARAM_NAMES])
        model = RenderModel.from_param_vector(
            nat,
            noise_sigma=float(values.get("noise_sigma", 0.0)),
            max_altitude=float(values.get("max_altitude", 2.0)),
        )
    except KeyError as e:
        raise DataError(f"checkpoint missing parameter {e}: {path}") from None
    expected = int(values.get("blob_bytes", len(payload)))
    if len(payload) != expected:
        raise DataError(
            f"checkpoint blob truncated: expected {expected} bytes, got {len(payload)}"
        )
    disc = None
    if array_specs:
        arrays: Dict[str, np.ndarray] = {}
        offset = 0
        for name, shape in array_specs:
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(payload, dtype="<f4", count=count, offset=offset)
            offset += count * 4
            arrays[name] = arr.reshape(shape).astype(np.float64)
        disc = Discriminator(seed=0)
        try:
            disc.load_state_arrays(arrays, adam_t=int(values.get("adam_t", 0)))
        except Exception as e:
            raise DataError(f"checkpoint discriminator state invalid: {e}") from e
    return model, disc


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

def _csv_text(rows: Sequence[Sequence[object]]) -> str:
    buf = _io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def save_train_report(report: TrainReport, path) -> None:
    """One CSV row per epoch: losses, held-out accuracy, parameter snapshot."""
    write_text_atomic(path, _csv_text(report.rows()))


def save_table(rows: Sequence[Sequence[object]], path) -> None:
    write_text_atomic(path, _csv_text(rows))
