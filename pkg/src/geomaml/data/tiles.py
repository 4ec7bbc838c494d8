"""Labeled tiles, region datasets and the binary tile / text index formats.

Tile file layout (little-endian)::

    b"GTIL" | u32 version=1 | u32 C | u32 H | u32 W | u8 has_pixel_labels
    | f32 pixels[C*H*W] | (u8 pixel_labels[H*W] if flagged) | u8 tile_label

Index file: one ``region_id<TAB>season<TAB>relative_path<TAB>tile_label``
record per line; lines starting with ``#`` are ignored.
"""
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"GTIL"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIB")

META_TRAIN = "meta-train"
META_VAL = "meta-val"
META_TEST = "meta-test"
META_SETS = (META_TRAIN, META_VAL, META_TEST)


class TileFormatError(ValueError):
    """A tile file is malformed; ``offset`` is the byte where parsing failed."""

    def __init__(self, path, offset, message):
        super().__init__(f"{path}: byte {offset}: {message}")
        self.path = str(path)
        self.offset = offset


class TileMissingError(FileNotFoundError):
    """The index references a tile file that does not exist."""


class LabelError(ValueError):
    """A class label is out of range or inconsistent with the pixel labels."""


def majority_label(pixel_labels):
    """Most frequent class in a label grid; ties go to the lowest class index."""
    flat = np.asarray(pixel_labels).reshape(-1)
    if flat.size == 0:
        raise ValueError("majority_label of an empty grid")
    counts = np.bincount(flat.astype(np.int64))
    return int(np.argmax(counts))


@dataclass(frozen=True, eq=False)
class LabeledTile:
    pixels: np.ndarray
    tile_label: int
    region_id: str
    season: str = "all"
    pixel_labels: np.ndarray = None

    def __post_init__(self):
        if self.pixels.ndim != 3:
            raise ValueError(f"tile pixels must be [C,H,W], got {self.pixels.shape}")
        if self.pixel_labels is not None:
            if self.pixel_labels.shape != self.pixels.shape[1:]:
                raise ValueError("pixel label grid does not match tile size")
            if majority_label(self.pixel_labels) != self.tile_label:
                raise LabelError(
                    f"tile_label {self.tile_label} is not the majority pixel label "
                    f"{majority_label(self.pixel_labels)}")

    def same_as(self, other):
        if (self.tile_label, self.region_id, self.season) != (other.tile_label, other.region_id, other.season):
            return False
        if not np.array_equal(self.pixels, other.pixels):
            return False
        if (self.pixel_labels is None) != (other.pixel_labels is None):
            return False
        return self.pixel_labels is None or np.array_equal(self.pixel_labels, other.pixel_labels)


@dataclass(frozen=True, eq=False)
class RegionDataset:
    """Region-tagged tiles with a per-region meta-set and support/query partition.

    ``is_support[i]`` places tile ``i`` in its region's support partition
    (``False`` means query). ``split`` maps each region to one meta-set name.
    """

    tiles: tuple
    is_support: np.ndarray
    split: dict
    num_classes: int
    _groups: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(self.is_support) != len(self.tiles):
            raise ValueError("support/query assignment length does not match tile count")
        for r, s in self.split.items():
            if s not in META_SETS:
                raise ValueError(f"region {r}: unknown meta-set {s!r}")
        missing = {t.region_id for t in self.tiles} - set(self.split)
        if missing:
            raise ValueError(f"regions without a meta-set: {sorted(missing)[:5]}")
        for t in self.tiles:
            if not 0 <= t.tile_label < self.num_classes:
                raise LabelError(f"tile label {t.tile_label} out of range [0, {self.num_classes})")

    def __len__(self):
        return len(self.tiles)

    @property
    def region_ids(self):
        return sorted({t.region_id for t in self.tiles})

    def regions_in(self, meta_set):
        return [r for r in self.region_ids if self.split[r] == meta_set]

    def with_split(self, split):
        """Copy with a new ``region -> meta-set`` map."""
        return RegionDataset(self.tiles, self.is_support, dict(split), self.num_classes)

    def groups(self):
        """``(region, season) -> class -> (support indices, query indices)``, cached."""
        if self._groups is None:
            groups = {}
            for i, t in enumerate(self.tiles):
                per_class = groups.setdefault((t.region_id, t.season), {})
                sup, qry = per_class.setdefault(t.tile_label, ([], []))
                (sup if self.is_support[i] else qry).append(i)
            frozen = {
                key: {c: (np.array(s, dtype=np.int64), np.array(q, dtype=np.int64))
                      for c, (s, q) in sorted(per_class.items())}
                for key, per_class in sorted(groups.items())
            }
            object.__setattr__(self, "_groups", frozen)
        return self._groups

    def indices(self, meta_set=None):
        if meta_set is None:
            return np.arange(len(self.tiles))
        return np.array([i for i, t in enumerate(self.tiles) if self.split[t.region_id] == meta_set],
                        dtype=np.int64)

    def stack(self, idx):
        """Pixel batch ``[N,C,H,W]`` and tile labels for the given tile indices."""
        x = np.stack([self.tiles[i].pixels for i in idx]).astype(np.float64)
        y = np.array([self.tiles[i].tile_label for i in idx], dtype=np.int64)
        return x, y

    def stack_pixel_labels(self, idx):
        return np.stack([self.tiles[i].pixel_labels for i in idx]).astype(np.int64)


def assign_partitions(tiles, support_fraction=0.5, seed=0):
    """Random support/query assignment, stratified by (region, season, class)."""
    rng = np.random.default_rng(seed)
    is_support = np.zeros(len(tiles), dtype=bool)
    groups = {}
    for i, t in enumerate(tiles):
        groups.setdefault((t.region_id, t.season, t.tile_label), []).append(i)
    for key in sorted(groups):
        idx = np.array(groups[key])
        rng.shuffle(idx)
        n_sup = int(np.ceil(len(idx) * support_fraction))
        is_support[idx[:n_sup]] = True
    return is_support


# ---------------------------------------------------------------------------
# binary tile files
# ---------------------------------------------------------------------------

def encode_tile(tile):
    C, H, W = tile.pixels.shape
    has_px = tile.pixel_labels is not None
    parts = [_HEADER.pack(MAGIC, VERSION, C, H, W, int(has_px)),
             np.asarray(tile.pixels, dtype="<f4").tobytes()]
    if has_px:
        parts.append(np.asarray(tile.pixel_labels, dtype=np.uint8).tobytes())
    parts.append(struct.pack("<B", tile.tile_label))
    return b"".join(parts)


def write_tile(path, tile):
    Path(path).write_bytes(encode_tile(tile))


def decode_tile(buf, path="<bytes>", region_id="", season="all"):
    if len(buf) < 4 or buf[:4] != MAGIC:
        raise TileFormatError(path, 0, f"bad magic {bytes(buf[:4])!r}, expected {MAGIC!r}")
    if len(buf) < _HEADER.size:
        raise TileFormatError(path, len(buf), "truncated header")
    _, version, C, H, W, has_px = _HEADER.unpack_from(buf, 0)
    if version != VERSION:
        raise TileFormatError(path, 4, f"unsupported tile version {version}")
    if has_px not in (0, 1):
        raise TileFormatError(path, 20, f"invalid pixel-label flag {has_px}")
    pos = _HEADER.size
    n_px = C * H * W * 4
    need = pos + n_px + (H * W if has_px else 0) + 1
    if len(buf) < need:
        raise TileFormatError(path, len(buf), f"truncated tile: {len(buf)} of {need} bytes")
    if len(buf) > need:
        raise TileFormatError(path, need, f"{len(buf) - need} trailing bytes")
    pixels = np.frombuffer(buf, dtype="<f4", count=C * H * W, offset=pos).astype(np.float64)
    pixels = pixels.reshape(C, H, W)
    pos += n_px
    pixel_labels = None
    if has_px:
        pixel_labels = np.frombuffer(buf, dtype=np.uint8, count=H * W, offset=pos)
        pixel_labels = pixel_labels.astype(np.int64).reshape(H, W)
        pos += H * W
    label = buf[pos]
    if pixel_labels is not None and majority_label(pixel_labels) != label:
        raise LabelError(f"{path}: tile_label {label} is not the majority pixel label")
    return LabeledTile(pixels, int(label), region_id, season, pixel_labels)


def read_tile(path, region_id="", season="all"):
    path = Path(path)
    if not path.exists():
        raise TileMissingError(f"tile file not found: {path}")
    return decode_tile(path.read_bytes(), path, region_id, season)


# ---------------------------------------------------------------------------
# index files
# ---------------------------------------------------------------------------

def tile_relpath(region_id, season, i):
    return f"tiles/{region_id}/{season}_{i:05d}.gtil"


def write_tiles(dataset, directory):
    """Write every tile plus ``index.tsv`` under ``directory``; returns the index path."""
    directory = Path(directory)
    lines = []
    counters = {}
    for t in dataset.tiles:
        i = counters.get(t.region_id, 0)
        counters[t.region_id] = i + 1
        rel = tile_relpath(t.region_id, t.season, i)
        target = directory / rel
        target.parent.mkdir(parents=True, exist_ok=True)
        write_tile(target, t)
        lines.append(f"{t.region_id}\t{t.season}\t{rel}\t{t.tile_label}")
    index = directory / "index.tsv"
    index.write_text("\n".join(lines) + "\n")
    return index


def load_tiles(index_path, num_classes=None, support_fraction=0.5, seed=0):
    """Read an index file and its tiles into a :class:`RegionDataset`.

    All regions start in meta-train; apply a split with
    :meth:`RegionDataset.with_split`. Support/query partitions are drawn with
    :func:`assign_partitions`.
    """
    index_path = Path(index_path)
    if not index_path.exists():
        raise TileMissingError(f"index file not found: {index_path}")
    base = index_path.parent
    tiles = []
    for lineno, line in enumerate(index_path.read_text().splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ValueError(f"{index_path}:{lineno}: expected 4 tab-separated fields, got {len(fields)}")
        region, season, rel, label = fields
        try:
            label = int(label)
        except ValueError:
            raise LabelError(f"{index_path}:{lineno}: tile label {label!r} is not an integer") from None
        tile = read_tile(base / rel, region, season)
        if tile.tile_label != label:
            raise LabelError(f"{index_path}:{lineno}: index label {label} != file label {tile.tile_label}")
        if num_classes is not None and not 0 <= label < num_classes:
            raise LabelError(f"{index_path}:{lineno}: label {label} out of range [0, {num_classes})")
        tiles.append(tile)
    if not tiles:
        raise ValueError(f"{index_path}: no tiles listed")
    if num_classes is None:
        num_classes = 1 + max(t.tile_label for t in tiles)
    split = {t.region_id: META_TRAIN for t in tiles}
    return RegionDataset(tuple(tiles), assign_partitions(tiles, support_fraction, seed), split, num_classes)


def file_digest(directory):
    """Stable listing ``relative path -> bytes`` for byte-level comparisons."""
    directory = Path(directory)
    out = {}
    for root, _, files in os.walk(directory):
        for f in sorted(files):
            p = Path(root) / f
            out[str(p.relative_to(directory))] = p.read_bytes()
    return out
