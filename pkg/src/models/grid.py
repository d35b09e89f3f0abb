import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple, Union

import numpy as np

from src.models.errors import DimensionMismatchError, GridFormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

MATRIX_MAGIC = b'GPDM'
LABEL_MAGIC = b'GPDL'
FORMAT_VERSION = 1
# rows*cols above this is treated as a corrupt header
MAX_PIXELS = 1 << 31

_MATRIX_HEADER = struct.Struct('<4sIII')
_LABEL_HEADER = struct.Struct('<4sIIII')


class ImageGrid:
    """
    Dense real-valued 2D field stored row-major, origin top-left.
    Pixel index i = r * cols + c. The wrapped array is read-only.
    """

    __slots__ = ('_data',)

    def __init__(self, data):
        arr = np.array(data, dtype=np.float64, copy=True)
        if arr.ndim != 2:
            raise DimensionMismatchError(f"ImageGrid needs a 2D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GridFormatError("empty dimension")
        if not np.all(np.isfinite(arr)):
            raise GridFormatError("non-finite payload")
        arr.setflags(write=False)
        self._data = arr

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def rows(self) -> int:
        return self._data.shape[0]

    @property
    def cols(self) -> int:
        return self._data.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self._data.shape

    @property
    def size(self) -> int:
        return self._data.size

    def to_array(self) -> np.ndarray:
        return self._data.copy()

    def __eq__(self, other) -> bool:
        if not isinstance(other, ImageGrid):
            return NotImplemented
        return self.dims == other.dims and self._data.tobytes() == other._data.tobytes()

    def __repr__(self) -> str:
        return f"ImageGrid({self.rows}x{self.cols})"


class LabelField:
    """Per-pixel class assignment z in {1..K}, same layout as ImageGrid"""

    __slots__ = ('_labels', 'k_classes')

    def __init__(self, labels, k_classes: int):
        arr = np.array(labels, dtype=np.int64, copy=True)
        if arr.ndim != 2:
            raise DimensionMismatchError(f"LabelField needs a 2D array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GridFormatError("empty dimension")
        if k_classes < 1:
            raise GridFormatError(f"K must be >= 1, got {k_classes}")
        if arr.min() < 1 or arr.max() > k_classes:
            raise GridFormatError("label out of range")
        arr.setflags(write=False)
        self._labels = arr
        self.k_classes = int(k_classes)

    @classmethod
    def from_zero_based(cls, z: np.ndarray, k_classes: int) -> 'LabelField':
        return cls(np.asarray(z) + 1, k_classes)

    @property
    def labels(self) -> np.ndarray:
        return self._labels

    @property
    def rows(self) -> int:
        return self._labels.shape[0]

    @property
    def cols(self) -> int:
        return self._labels.shape[1]

    @property
    def dims(self) -> Tuple[int, int]:
        return self._labels.shape

    def zero_based(self) -> np.ndarray:
        return self._labels - 1

    def matches(self, grid: ImageGrid) -> bool:
        return self.dims == grid.dims

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelField):
            return NotImplemented
        return (self.k_classes == other.k_classes and self.dims == other.dims
                and np.array_equal(self._labels, other._labels))

    def __repr__(self) -> str:
        return f"LabelField({self.rows}x{self.cols}, K={self.k_classes})"


@dataclass(frozen=True)
class RegionMask:
    """Axis-aligned rectangle (row0, col0, height, width) in pixels"""
    row0: int
    col0: int
    height: int
    width: int

    @classmethod
    def parse(cls, text: str) -> 'RegionMask':
        parts = [int(p) for p in text.replace(',', ' ').split()]
        if len(parts) != 4:
            raise GridFormatError(f"region needs 'row0,col0,height,width', got {text!r}")
        return cls(*parts)

    @property
    def area(self) -> int:
        return self.height * self.width

    def fits(self, dims: Tuple[int, int]) -> bool:
        rows, cols = dims
        return (self.row0 >= 0 and self.col0 >= 0 and self.height >= 1 and self.width >= 1
                and self.row0 + self.height <= rows and self.col0 + self.width <= cols)

    def slices(self) -> Tuple[slice, slice]:
        return (slice(self.row0, self.row0 + self.height),
                slice(self.col0, self.col0 + self.width))

    def overlaps(self, other: 'RegionMask') -> bool:
        return not (self.row0 + self.height <= other.row0 or other.row0 + other.height <= self.row0
                    or self.col0 + self.width <= other.col0 or other.col0 + other.width <= self.col0)


def _read_header(blob: bytes, header: struct.Struct, magic: bytes, path: PathLike):
    if len(blob) < header.size:
        raise GridFormatError(f"{path}: truncated header")
    fields = header.unpack_from(blob)
    if fields[0] != magic:
        raise GridFormatError(f"{path}: bad magic {fields[0]!r}")
    if fields[1] != FORMAT_VERSION:
        raise GridFormatError(f"{path}: unsupported version {fields[1]}")
    rows, cols = fields[2], fields[3]
    if rows == 0 or cols == 0:
        raise GridFormatError("empty dimension")
    if rows * cols > MAX_PIXELS:
        raise GridFormatError(f"{path}: dimension overflow {rows}x{cols}")
    return fields


def read_matrix(path: PathLike) -> ImageGrid:
    """
    Read a GPDM file: magic, u32 version, u32 rows, u32 cols, float64 LE payload.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise GridFormatError(f"{path}: {e}") from e
    _, _, rows, cols = _read_header(blob, _MATRIX_HEADER, MATRIX_MAGIC, path)
    expected = rows * cols * 8
    payload = blob[_MATRIX_HEADER.size:]
    if len(payload) != expected:
        raise GridFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    data = np.frombuffer(payload, dtype='<f8').reshape(rows, cols)
    return ImageGrid(data)


def write_matrix(path: PathLike, grid: ImageGrid) -> None:
    header = _MATRIX_HEADER.pack(MATRIX_MAGIC, FORMAT_VERSION, grid.rows, grid.cols)
    payload = np.ascontiguousarray(grid.data, dtype='<f8').tobytes()
    Path(path).write_bytes(header + payload)


def read_labels(path: PathLike) -> LabelField:
    """
    Read a GPDL file: magic, u32 version, u32 rows, u32 cols, u32 K, u32 payload.
    """
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise GridFormatError(f"{path}: {e}") from e
    _, _, rows, cols, k_classes = _read_header(blob, _LABEL_HEADER, LABEL_MAGIC, path)
    expected = rows * cols * 4
    payload = blob[_LABEL_HEADER.size:]
    if len(payload) != expected:
        raise GridFormatError(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    labels = np.frombuffer(payload, dtype='<u4').reshape(rows, cols)
    return LabelField(labels, k_classes)


def write_labels(path: PathLike, field: LabelField) -> None:
    header = _LABEL_HEADER.pack(LABEL_MAGIC, FORMAT_VERSION, field.rows, field.cols, field.k_classes)
    payload = np.ascontiguousarray(field.labels, dtype='<u4').tobytes()
    Path(path).write_bytes(header + payload)


def write_csv(path: PathLike, grid: Union[ImageGrid, LabelField]) -> None:
    """One line per grid row, comma-separated, 17 significant digits."""
    values = grid.data if isinstance(grid, ImageGrid) else grid.labels
    fmt = '%.17g' if isinstance(grid, ImageGrid) else '%d'
    np.savetxt(path, values, fmt=fmt, delimiter=',')


def extract_region(grid: ImageGrid, mask: RegionMask) -> Tuple[float, float]:
    """
    Sample mean and (n-1)-normalised standard deviation inside the mask.
    """
    if not mask.fits(grid.dims):
        raise GridFormatError(f"region {mask} out of bounds for {grid.rows}x{grid.cols}")
    if mask.area < 2:
        raise GridFormatError("region area must be >= 2")
    values = grid.data[mask.slices()]
    return float(values.mean()), float(values.std(ddof=1))
