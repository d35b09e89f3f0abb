import numpy as np

from src.models.errors import InvalidParameterError, NumericFailure
from src.models.grid import ImageGrid

DEFAULT_DYNAMIC_RANGE_DB = 40.0


def bmode_render(grid: ImageGrid, dynamic_range_db: float = DEFAULT_DYNAMIC_RANGE_DB) -> ImageGrid:
    """
    Log-compressed display: clip(1 + 20 log10(|g| / max|g|) / DR, 0, 1).
    Zero pixels map to 0; the brightest pixel maps to 1.
    """
    if not (dynamic_range_db > 0.0):
        raise InvalidParameterError(f"dynamic range must be > 0 dB, got {dynamic_range_db}")
    magnitude = np.abs(grid.data)
    peak = float(magnitude.max())
    if peak == 0.0:
        raise NumericFailure("cannot log-compress an all-zero image")
    with np.errstate(divide='ignore'):
        decibels = 20.0 * np.log10(magnitude / peak)
    return ImageGrid(np.clip(1.0 + decibels / dynamic_range_db, 0.0, 1.0))
