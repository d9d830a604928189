"""Checkpoints, image files, and config loading.

Checkpoint layout (all integers little-endian):
  magic "DGAN" | u32 version | u32 tensor count
  per tensor: u16 name length | UTF-8 name | u8 ndim | u64 per dim | f64 payload

The layout is self-describing, so any well-formed file loads regardless
of which model produced it. A JSON metadata blob (model/run settings)
rides along as a reserved tensor named "__meta__/json" whose payload is
the UTF-8 bytes widened to float64; it stays inside the normative
format and round-trips bit-exactly like everything else.
"""

from __future__ import annotations

import dataclasses
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError, ValidationError
from .tensor import Tensor

MAGIC = b"DGAN"
VERSION = 1
META_NAME = "__meta__/json"


@dataclass
class Checkpoint:
    tensors: dict  # name -> np.ndarray (float64)
    version: int = VERSION
    meta: dict | None = None

    def __post_init__(self):
        clean = {}
        for name, arr in self.tensors.items():
            if name == META_NAME:
                raise ValidationError(f"tensor name {META_NAME!r} is reserved")
            if isinstance(arr, Tensor):
                arr = arr.numpy().copy()
            arr = np.asarray(arr, dtype=np.float64)
            # ascontiguousarray would widen 0-d to 1-d; keep rank
            clean[str(name)] = arr if arr.ndim == 0 else np.ascontiguousarray(arr)
        self.tensors = clean


def checkpoint_from_params(named: dict, meta: dict | None = None) -> Checkpoint:
    """Snapshot a {name: Tensor} mapping into a checkpoint."""
    return Checkpoint(tensors={k: v.numpy().copy() for k, v in named.items()}, meta=meta)


def load_params_into(named: dict, ckpt: Checkpoint):
    """Write checkpoint values into live parameter tensors, in place."""
    missing = sorted(set(named) - set(ckpt.tensors))
    extra = sorted(set(ckpt.tensors) - set(named))
    if missing or extra:
        raise FormatError(
            f"parameter names disagree with checkpoint (missing {missing[:3]}, unexpected {extra[:3]})"
        )
    for name, param in named.items():
        arr = ckpt.tensors[name]
        if arr.shape != param.shape:
            raise FormatError(f"tensor {name!r} has shape {arr.shape}, expected {param.shape}")
        param.data[...] = arr


def save_checkpoint(ckpt: Checkpoint, path: str):
    """Atomic write: assemble in a temp file, rename into place."""
    items = list(ckpt.tensors.items())
    if ckpt.meta is not None:
        blob = json.dumps(ckpt.meta, sort_keys=True).encode()
        items.append((META_NAME, np.frombuffer(blob, dtype=np.uint8).astype(np.float64)))
    chunks = [MAGIC, struct.pack("<I", ckpt.version), struct.pack("<I", len(items))]
    for name, arr in items:
        name_b = name.encode()
        if len(name_b) > 0xFFFF:
            raise ValidationError(f"tensor name too long: {name[:40]}...")
        if arr.ndim > 0xFF:
            raise ValidationError(f"tensor {name!r} has too many dims")
        chunks.append(struct.pack("<H", len(name_b)))
        chunks.append(name_b)
        chunks.append(struct.pack("<B", arr.ndim))
        for d in arr.shape:
            chunks.append(struct.pack("<Q", d))
        chunks.append(arr.astype("<f8").tobytes())
    payload = b"".join(chunks)

    dirname = os.path.dirname(os.path.abspath(path))
    os.makedirs(dirname, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=dirname, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.buf):
            raise FormatError(
                f"truncated checkpoint: needed {n} bytes for {what} at offset {self.pos}, "
                f"file has {len(self.buf)}"
            )
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u64(self, what):
        return struct.unpack("<Q", self.take(8, what))[0]


def load_checkpoint(path: str) -> Checkpoint:
    try:
        with open(path, "rb") as fh:
            buf = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read checkpoint {path}: {exc}") from exc
    r = _Reader(buf)
    magic = r.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r} at offset 0 in {path}")
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"unsupported version {version} at offset 4 in {path}")
    count = r.u32("tensor count")
    tensors: dict = {}
    for i in range(count):
        at = r.pos
        name_len = r.u16(f"name length of tensor {i}")
        name = r.take(name_len, f"name of tensor {i}").decode("utf-8", errors="strict")
        if name in tensors:
            raise FormatError(f"duplicate tensor name {name!r} at offset {at}")
        ndim = r.u8(f"ndim of {name!r}")
        shape = tuple(r.u64(f"dim {d} of {name!r}") for d in range(ndim))
        n_elem = 1
        for d in shape:
            n_elem *= d
        raw = r.take(8 * n_elem, f"payload of {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).astype(np.float64)
    if r.pos != len(buf):
        raise FormatError(f"{len(buf) - r.pos} trailing bytes at offset {r.pos} in {path}")
    meta = None
    if META_NAME in tensors:
        blob = tensors.pop(META_NAME)
        try:
            meta = json.loads(blob.astype(np.uint8).tobytes().decode())
        except (ValueError, UnicodeDecodeError) as exc:
            raise FormatError(f"corrupt metadata blob in {path}: {exc}") from exc
    return Checkpoint(tensors=tensors, version=version, meta=meta)


# -- images -----------------------------------------------------------------


def to_uint8(img: np.ndarray) -> np.ndarray:
    """Clamp [0,1] and quantize to 8-bit (round-half-away handled by rint)."""
    return np.rint(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def image_write(img, path: str):
    """Write one 3,H,W float image as PNG."""
    arr = img.numpy() if isinstance(img, Tensor) else np.asarray(img)
    if arr.ndim != 3 or arr.shape[0] != 3:
        raise ValidationError(f"image_write expects 3,H,W, got {arr.shape}")
    data = np.moveaxis(to_uint8(arr), 0, -1)
    try:
        Image.fromarray(data, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise FormatError(f"cannot write image {path}: {exc}") from exc


def image_read(path: str) -> Tensor:
    """Read a PNG back as a 3,H,W float tensor in [0,1]."""
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except OSError as exc:
        raise FormatError(f"cannot read image {path}: {exc}") from exc
    return Tensor(np.moveaxis(arr, -1, 0))


def write_grid(images, path: str) -> tuple[int, int]:
    """Tile N images into a ceil(sqrt(N))-column mosaic; returns (rows, cols)."""
    arr = images.numpy() if isinstance(images, Tensor) else np.asarray(images)
    if arr.ndim != 4 or arr.shape[1] != 3:
        raise ValidationError(f"write_grid expects N,3,H,W, got {arr.shape}")
    n, _, h, w = arr.shape
    cols = int(np.ceil(np.sqrt(n)))
    rows = int(np.ceil(n / cols))
    canvas = np.zeros((3, rows * h, cols * w))
    for i in range(n):
        r, c = divmod(i, cols)
        canvas[:, r * h : (r + 1) * h, c * w : (c + 1) * w] = arr[i]
    image_write(canvas, path)
    return rows, cols


# -- config loading ---------------------------------------------------------


def _build_dataclass(cls, payload: dict, where: str):
    if not isinstance(payload, dict):
        raise ValidationError(f"{where} must be an object, got {type(payload).__name__}")
    field_names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(payload) - field_names)
    if unknown:
        raise ValidationError(f"unknown key {unknown[0]!r} in {where}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in payload:
            continue
        val = payload[f.name]
        if isinstance(val, list):
            val = tuple(val)
        kwargs[f.name] = val
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid {where}: {exc}") from exc


@dataclass
class SampleConfig:
    psi: float = 0.7

    def __post_init__(self):
        if not 0.0 <= self.psi <= 1.0:
            raise ValidationError(f"psi must lie in [0,1], got {self.psi}")


@dataclass
class ConfigBundle:
    generator: object
    train: object
    synth: object
    ppl: object
    sample: SampleConfig


def load_config(path: str | None) -> ConfigBundle:
    """Parse and validate a JSON config; unknown keys are rejected.

    Sections: generator, train (with nested weights), synth, ppl,
    sample. Every section and key is optional; omissions take the
    defaults baked into the dataclasses.
    """
    # local imports: training pulls this module in for checkpoints
    from .data import SynthSpec
    from .losses import LossWeights
    from .metrics import PPLConfig
    from .networks import GeneratorSpec
    from .training import TrainConfig

    if path is None:
        doc = {}
    else:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise FormatError(f"cannot read config {path}: {exc}") from exc
        try:
            doc = json.loads(text) if text.strip() else {}
        except json.JSONDecodeError as exc:
            raise ValidationError(
                f"config parse error in {path} at line {exc.lineno}, column {exc.colno}: {exc.msg}"
            ) from exc
    if not isinstance(doc, dict):
        raise ValidationError("config root must be a JSON object")
    known = {"generator", "train", "synth", "ppl", "sample"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ValidationError(f"unknown config section {unknown[0]!r}")

    train_payload = doc.get("train", {})
    if not isinstance(train_payload, dict):
        raise ValidationError(f"train must be an object, got {type(train_payload).__name__}")
    train_payload = dict(train_payload)
    weights_payload = train_payload.pop("weights", {})
    train = _build_dataclass(TrainConfig, train_payload, "train")
    train.weights = _build_dataclass(LossWeights, weights_payload, "train.weights")

    return ConfigBundle(
        generator=_build_dataclass(GeneratorSpec, doc.get("generator", {}), "generator"),
        train=train,
        synth=_build_dataclass(SynthSpec, doc.get("synth", {}), "synth"),
        ppl=_build_dataclass(PPLConfig, doc.get("ppl", {}), "ppl"),
        sample=_build_dataclass(SampleConfig, doc.get("sample", {}), "sample"),
    )
