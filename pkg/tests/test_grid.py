import math
import struct

import numpy as np
import pytest

from src.models.errors import GridFormatError
from src.models.grid import (
    ImageGrid,
    LabelField,
    RegionMask,
    extract_region,
    read_labels,
    read_matrix,
    write_csv,
    write_labels,
    write_matrix,
)


def test_matrix_file_preserves_bytes(tmp_path, random_grid):
    path = tmp_path / 'g.gpdm'
    write_matrix(path, random_grid)
    assert read_matrix(path) == random_grid
    assert path.stat().st_size == 16 + 8 * 64


def test_label_file_keeps_k(tmp_path):
    field = LabelField(np.array([[1, 2], [3, 1]]), 3)
    path = tmp_path / 'z.gpdl'
    write_labels(path, field)
    loaded = read_labels(path)
    assert loaded == field
    assert loaded.k_classes == 3


def test_truncated_payload_is_rejected(tmp_path, random_grid):
    path = tmp_path / 'g.gpdm'
    write_matrix(path, random_grid)
    path.write_bytes(path.read_bytes()[:-8])
    with pytest.raises(GridFormatError, match='payload'):
        read_matrix(path)


def test_zero_dimension_header(tmp_path):
    path = tmp_path / 'empty.gpdm'
    path.write_bytes(struct.pack('<4sIII', b'GPDM', 1, 0, 4))
    with pytest.raises(GridFormatError, match='empty dimension'):
        read_matrix(path)


def test_bad_magic(tmp_path):
    path = tmp_path / 'bad.gpdm'
    path.write_bytes(struct.pack('<4sIII', b'XXXX', 1, 1, 1) + b'\0' * 8)
    with pytest.raises(GridFormatError, match='magic'):
        read_matrix(path)


def test_label_out_of_range():
    with pytest.raises(GridFormatError, match='label out of range'):
        LabelField(np.array([[0, 1]]), 2)
    with pytest.raises(GridFormatError, match='label out of range'):
        LabelField(np.array([[3, 1]]), 2)


def test_non_finite_payload():
    with pytest.raises(GridFormatError, match='non-finite'):
        ImageGrid(np.array([[1.0, math.nan]]))


def test_grid_is_read_only(random_grid):
    with pytest.raises(ValueError):
        random_grid.data[0, 0] = 1.0


def test_extract_region_statistics():
    grid = ImageGrid(np.arange(16, dtype=float).reshape(4, 4))
    mean, std = extract_region(grid, RegionMask(0, 0, 2, 2))
    assert mean == pytest.approx(2.5)
    assert std == pytest.approx(np.std([0, 1, 4, 5], ddof=1))


def test_extract_region_errors():
    grid = ImageGrid(np.ones((4, 4)))
    with pytest.raises(GridFormatError):
        extract_region(grid, RegionMask(3, 3, 2, 2))
    with pytest.raises(GridFormatError, match='area'):
        extract_region(grid, RegionMask(0, 0, 1, 1))


def test_region_parse_and_overlap():
    a = RegionMask.parse('0,0,2,2')
    b = RegionMask.parse('2 2 2 2')
    assert a == RegionMask(0, 0, 2, 2)
    assert not a.overlaps(b)
    assert a.overlaps(RegionMask(1, 1, 2, 2))
    with pytest.raises(GridFormatError):
        RegionMask.parse('1,2,3')


def test_csv_export(tmp_path):
    write_csv(tmp_path / 'z.csv', LabelField(np.array([[1, 2], [2, 1]]), 2))
    assert (tmp_path / 'z.csv').read_text().splitlines() == ['1,2', '2,1']
