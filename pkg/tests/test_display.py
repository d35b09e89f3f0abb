import numpy as np
import pytest

from src.models.display import bmode_render
from src.models.errors import InvalidParameterError, NumericFailure
from src.models.grid import ImageGrid


def test_constant_magnitude_renders_white():
    rendered = bmode_render(ImageGrid(np.array([[2.0, -2.0], [2.0, -2.0]])))
    assert np.all(rendered.data == 1.0)


def test_log_compression_levels():
    grid = ImageGrid(np.array([[1.0, 0.1, 0.01, 0.001, 0.0]]))
    rendered = bmode_render(grid, 40.0).data[0]
    assert rendered[:3].tolist() == pytest.approx([1.0, 0.5, 0.0])
    assert rendered[3] == 0.0 and rendered[4] == 0.0


def test_scale_invariance(np_rng):
    g = np_rng.normal(size=(8, 8))
    assert np.allclose(bmode_render(ImageGrid(g)).data, bmode_render(ImageGrid(-7.5 * g)).data)


def test_bad_inputs():
    with pytest.raises(NumericFailure):
        bmode_render(ImageGrid(np.zeros((3, 3))))
    with pytest.raises(InvalidParameterError):
        bmode_render(ImageGrid(np.ones((3, 3))), 0.0)
