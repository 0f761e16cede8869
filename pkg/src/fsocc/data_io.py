"""Dataset and checkpoint serialization, ingestion and preprocessing.

Two binary containers, both fixed little-endian regardless of platform:

OCCB (class-indexed dataset)
    magic "OCCB", version u16, class_count u32, per-class counts u32[],
    example rank u16, extents u16[], payload f32 in [0,1], row-major,
    classes concatenated. Class ids are positions 0..C-1.

OCCK (encoder checkpoint)
    magic "OCCK", version u16, architecture string, head string,
    input-shape rank u16 + extents u32[], feature_dim u32, hidden_dim u32,
    step u64, best validation mean/ci-low f64, then named f32 blocks for
    weights and batch-norm running statistics (name, rank u16, dims u32[],
    data).

Strings are u16 length + UTF-8 bytes. Loaders reject malformed input with
a parse error carrying the byte offset; nothing is ever coerced.
"""

import struct

import numpy as np

from .encoder import ARCHITECTURES, EncoderParams
from .episodes import SPLIT_TAGS, ClassIndexedDataset, split_by_class, take_classes
from .errors import ConfigError, ContractError, ParseError
from .heads import HEADS

OCCB_MAGIC = b"OCCB"
OCCB_VERSION = 1
OCCK_MAGIC = b"OCCK"
OCCK_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class _Reader:
    def __init__(self, data, label):
        self.data = data
        self.pos = 0
        self.label = label

    def take(self, count, what):
        if self.pos + count > len(self.data):
            raise ParseError(
                f"{self.label}: truncated while reading {what}: "
                f"need {count} bytes, have {len(self.data) - self.pos}",
                offset=self.pos,
            )
        out = self.data[self.pos:self.pos + count]
        self.pos += count
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))

    def string(self, what):
        (length,) = self.unpack("<H", what + " length")
        raw = self.take(length, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(
                f"{self.label}: {what} is not UTF-8", offset=self.pos - length
            ) from exc

    def finish(self):
        if self.pos != len(self.data):
            raise ParseError(
                f"{self.label}: {len(self.data) - self.pos} trailing bytes",
                offset=self.pos,
            )


def _put_str(buf, text):
    raw = text.encode("utf-8")
    buf += struct.pack("<H", len(raw))
    buf += raw


# ---------------------------------------------------------------------------
# OCCB dataset container


def dumps_occb(dataset):
    shape = dataset.example_shape
    if any(s >= 1 << 16 for s in shape):
        raise ContractError(f"example extents {shape} exceed the u16 format field")
    for cid, arr in zip(dataset.class_ids, dataset.classes):
        a = np.asarray(arr)
        if not np.all(np.isfinite(a)) or a.min() < 0.0 or a.max() > 1.0:
            raise ContractError(f"class {cid} holds values outside [0, 1]")
    buf = bytearray()
    buf += OCCB_MAGIC
    buf += struct.pack("<H", OCCB_VERSION)
    buf += struct.pack("<I", dataset.class_count)
    buf += struct.pack(f"<{dataset.class_count}I", *dataset.per_class_count)
    buf += struct.pack("<H", len(shape))
    buf += struct.pack(f"<{len(shape)}H", *shape)
    for arr in dataset.classes:
        buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    return bytes(buf)


def loads_occb(data, split_tag="train", label="occb data"):
    r = _Reader(data, label)
    magic = r.take(4, "magic")
    if magic != OCCB_MAGIC:
        raise ParseError(f"{label}: bad magic {magic!r}, expected {OCCB_MAGIC!r}", offset=0)
    (version,) = r.unpack("<H", "version")
    if version != OCCB_VERSION:
        raise ParseError(f"{label}: unsupported version {version}", offset=4)
    (class_count,) = r.unpack("<I", "class count")
    if class_count == 0:
        raise ParseError(f"{label}: zero classes", offset=6)
    counts = r.unpack(f"<{class_count}I", "per-class counts")
    (rank,) = r.unpack("<H", "shape rank")
    shape = r.unpack(f"<{rank}H", "shape extents")
    item = int(np.prod(shape)) if rank else 1
    classes = []
    for count in counts:
        raw = r.take(count * item * 4, f"class payload ({count} examples)")
        classes.append(np.frombuffer(raw, dtype="<f4").reshape((count,) + shape).copy())
    r.finish()
    return ClassIndexedDataset(tuple(classes), tuple(range(class_count)), split_tag)


def save_occb(dataset, path):
    with open(path, "wb") as fh:
        fh.write(dumps_occb(dataset))


def load_occb(path, split_tag="train"):
    with open(path, "rb") as fh:
        data = fh.read()
    return loads_occb(data, split_tag=split_tag, label=str(path))


# ---------------------------------------------------------------------------
# OCCK checkpoints


def _put_blocks(buf, blocks):
    buf += struct.pack("<H", len(blocks))
    for name, arr in blocks.items():
        _put_str(buf, name)
        a = np.ascontiguousarray(arr, dtype="<f4")
        buf += struct.pack("<H", a.ndim)
        buf += struct.pack(f"<{a.ndim}I", *a.shape)
        buf += a.tobytes()


def _read_blocks(r, what):
    (count,) = r.unpack("<H", f"{what} count")
    blocks = {}
    for _ in range(count):
        name = r.string(f"{what} name")
        (rank,) = r.unpack("<H", f"{name} rank")
        shape = r.unpack(f"<{rank}I", f"{name} shape")
        item = int(np.prod(shape)) if rank else 1
        raw = r.take(item * 4, f"{name} data")
        blocks[name] = (
            np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
        )
    return blocks


def dumps_checkpoint(params, head, step=0, best_validation=(float("nan"), float("nan"))):
    if head not in HEADS:
        raise ConfigError(f"head must be one of {HEADS}, got {head!r}")
    buf = bytearray()
    buf += OCCK_MAGIC
    buf += struct.pack("<H", OCCK_VERSION)
    _put_str(buf, params.architecture)
    _put_str(buf, head)
    buf += struct.pack("<H", len(params.input_shape))
    buf += struct.pack(f"<{len(params.input_shape)}I", *params.input_shape)
    buf += struct.pack("<II", params.feature_dim, params.hidden_dim)
    buf += struct.pack("<Q", step)
    buf += struct.pack("<dd", *best_validation)
    _put_blocks(buf, params.weights)
    _put_blocks(buf, params.bn_stats)
    return bytes(buf)


def loads_checkpoint(data, label="checkpoint data"):
    r = _Reader(data, label)
    magic = r.take(4, "magic")
    if magic != OCCK_MAGIC:
        raise ParseError(f"{label}: bad magic {magic!r}, expected {OCCK_MAGIC!r}", offset=0)
    (version,) = r.unpack("<H", "version")
    if version != OCCK_VERSION:
        raise ParseError(f"{label}: unsupported version {version}", offset=4)
    architecture = r.string("architecture")
    if architecture not in ARCHITECTURES:
        raise ParseError(f"{label}: unknown architecture {architecture!r}", offset=r.pos)
    head = r.string("head")
    if head not in HEADS:
        raise ParseError(f"{label}: unknown head {head!r}", offset=r.pos)
    (rank,) = r.unpack("<H", "input shape rank")
    input_shape = r.unpack(f"<{rank}I", "input shape")
    feature_dim, hidden_dim = r.unpack("<II", "feature/hidden dims")
    (step,) = r.unpack("<Q", "step")
    best_validation = r.unpack("<dd", "best validation")
    weights = _read_blocks(r, "weight")
    bn_stats = _read_blocks(r, "batch-norm stat")
    r.finish()
    params = EncoderParams(
        architecture=architecture,
        input_shape=tuple(int(s) for s in input_shape),
        feature_dim=int(feature_dim),
        hidden_dim=int(hidden_dim),
        weights=weights,
        bn_stats=bn_stats,
    )
    return params, head, {"step": int(step), "best_validation": best_validation}


def save_checkpoint(path, params, head, step=0, best_validation=(float("nan"), float("nan"))):
    with open(path, "wb") as fh:
        fh.write(dumps_checkpoint(params, head, step, best_validation))


def load_checkpoint(path):
    with open(path, "rb") as fh:
        data = fh.read()
    return loads_checkpoint(data, label=str(path))


# ---------------------------------------------------------------------------
# IDX ingestion


def _read_idx(path, expected_magic, what):
    with open(path, "rb") as fh:
        data = fh.read()
    r = _Reader(data, str(path))
    (magic,) = r.unpack(">I", "magic")
    if magic != expected_magic:
        raise ParseError(
            f"{path}: bad {what} magic 0x{magic:08x}, expected 0x{expected_magic:08x}",
            offset=0,
        )
    ndim = magic & 0xFF
    dims = r.unpack(f">{ndim}I", "dimensions")
    payload = r.take(int(np.prod(dims)), "payload")
    r.finish()
    return np.frombuffer(payload, dtype=np.uint8).reshape(dims)


def ingest_idx(images_path, labels_path):
    """Load an IDX image/label pair into a class-indexed dataset.

    Pixels are scaled to [0,1] float32 and given an explicit channel axis.
    """
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise ParseError(
            f"{images_path}: {images.shape[0]} images but {labels.shape[0]} labels"
        )
    scaled = (images.astype(np.float32) / np.float32(255.0))[..., None]
    return split_by_class((scaled[i], int(labels[i])) for i in range(len(labels)))


# ---------------------------------------------------------------------------
# preprocessing


def augment_rotations(dataset):
    """Spawn 4 classes per class: 0/90/180/270 degree exact rotations.

    Rotated class ids are original*4 + quarter_turns.
    """
    h, w = dataset.example_shape[0], dataset.example_shape[1]
    if h != w:
        raise ConfigError(f"rotation augmentation needs square examples, got {h}x{w}")
    classes, ids = [], []
    for cid, arr in zip(dataset.class_ids, dataset.classes):
        for quarter in range(4):
            classes.append(np.ascontiguousarray(np.rot90(arr, k=quarter, axes=(1, 2))))
            ids.append(cid * 4 + quarter)
    return ClassIndexedDataset(tuple(classes), tuple(ids), dataset.split_tag)


def resize_bilinear(dataset, target_h, target_w):
    """Bilinear resize with half-pixel centers; identity when sizes match."""
    if target_h < 1 or target_w < 1:
        raise ConfigError("target extents must be >= 1")
    h, w = dataset.example_shape[0], dataset.example_shape[1]

    def axis_coords(target, source):
        coords = (np.arange(target) + 0.5) * (source / target) - 0.5
        coords = np.clip(coords, 0.0, source - 1.0)
        lo = np.floor(coords).astype(int)
        hi = np.minimum(lo + 1, source - 1)
        return lo, hi, coords - lo

    y0, y1, wy = axis_coords(target_h, h)
    x0, x1, wx = axis_coords(target_w, w)
    wy = wy[:, None, None]
    wx = wx[None, :, None]

    classes = []
    for arr in dataset.classes:
        a = np.asarray(arr, dtype=np.float64)
        top = a[:, y0][:, :, x0] * (1 - wx) + a[:, y0][:, :, x1] * wx
        bottom = a[:, y1][:, :, x0] * (1 - wx) + a[:, y1][:, :, x1] * wx
        out = top * (1 - wy) + bottom * wy
        classes.append(np.clip(out, 0.0, 1.0).astype(arr.dtype))
    return ClassIndexedDataset(tuple(classes), dataset.class_ids, dataset.split_tag)


# ---------------------------------------------------------------------------
# split manifests


def save_split_manifest(path, splits):
    """Write `split <name>` headers followed by one class id per line."""
    unknown = set(splits) - set(SPLIT_TAGS)
    if unknown:
        raise ConfigError(f"unknown split names {sorted(unknown)}; use {SPLIT_TAGS}")
    lines = []
    for name in SPLIT_TAGS:
        if name not in splits:
            continue
        lines.append(f"split {name}")
        lines.extend(str(int(cid)) for cid in splits[name])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_split_manifest(path):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    splits, current = {}, None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("split "):
            name = line[len("split "):].strip()
            if name not in SPLIT_TAGS:
                raise ParseError(f"{path}:{lineno}: unknown split name {name!r}")
            if name in splits:
                raise ParseError(f"{path}:{lineno}: duplicate split {name!r}")
            splits[name] = []
            current = name
        else:
            if current is None:
                raise ParseError(f"{path}:{lineno}: class id before any split header")
            try:
                splits[current].append(int(line))
            except ValueError:
                raise ParseError(f"{path}:{lineno}: not a class id: {line!r}") from None
    if not splits:
        raise ParseError(f"{path}: no split headers found")
    return splits


def load_split_datasets(dataset, manifest_path):
    """Partition one dataset into tagged splits per the manifest."""
    manifest = load_split_manifest(manifest_path)
    seen = []
    for ids in manifest.values():
        seen.extend(ids)
    if len(seen) != len(set(seen)):
        raise ConfigError(f"{manifest_path}: a class id appears in more than one split")
    return {
        name: take_classes(dataset, ids, name) for name, ids in manifest.items()
    }
