import logging
import threading
from typing import Tuple, TypeVar, Union

import numpy as np

from src.models.errors import DimensionMismatchError, InvalidParameterError
from src.models.grid import ImageGrid

logger = logging.getLogger(__name__)

GridLike = TypeVar('GridLike', np.ndarray, ImageGrid)


class CyclicBlurOperator:
    """
    Block-circulant blur H acting on rows x cols images through the 2D FFT.

    The PSF is zero-padded to the grid and its centre sample ((size-1)//2 in
    each axis) is rolled to index (0, 0), so forward() is a centred cyclic
    convolution. Instances are immutable apart from the FFT usage counters.
    """

    def __init__(self, psf: ImageGrid, grid_dims: Tuple[int, int], normalize: bool = True):
        rows, cols = int(grid_dims[0]), int(grid_dims[1])
        if psf.rows > rows or psf.cols > cols:
            raise DimensionMismatchError(
                f"PSF {psf.rows}x{psf.cols} larger than grid {rows}x{cols}")
        kernel = psf.to_array()
        if normalize:
            total = kernel.sum()
            if total == 0.0:
                raise InvalidParameterError("PSF sums to zero and cannot be normalised")
            kernel = kernel / total
        self.psf = ImageGrid(kernel)
        self.grid_dims = (rows, cols)
        padded = np.zeros(self.grid_dims)
        padded[:psf.rows, :psf.cols] = kernel
        center = ((psf.rows - 1) // 2, (psf.cols - 1) // 2)
        padded = np.roll(padded, (-center[0], -center[1]), axis=(0, 1))
        self.otf = np.fft.rfft2(padded)
        self.otf.setflags(write=False)
        self._otf_conj = np.conj(self.otf)
        self._lock = threading.Lock()
        self.forward_calls = 0
        self.adjoint_calls = 0

    @property
    def n_pixels(self) -> int:
        return self.grid_dims[0] * self.grid_dims[1]

    def _check(self, arr: np.ndarray) -> None:
        if arr.shape != self.grid_dims:
            raise DimensionMismatchError(
                f"operator built for {self.grid_dims}, got array of shape {arr.shape}")

    def _apply(self, x: GridLike, response: np.ndarray) -> GridLike:
        arr = x.data if isinstance(x, ImageGrid) else np.asarray(x, dtype=float)
        self._check(arr)
        out = np.fft.irfft2(response * np.fft.rfft2(arr), s=self.grid_dims)
        return ImageGrid(out) if isinstance(x, ImageGrid) else out

    def forward(self, x: GridLike) -> GridLike:
        with self._lock:
            self.forward_calls += 1
        return self._apply(x, self.otf)

    def adjoint(self, y: GridLike) -> GridLike:
        with self._lock:
            self.adjoint_calls += 1
        return self._apply(y, self._otf_conj)

    def normal(self, x: GridLike) -> GridLike:
        """H^T H x in a single pass."""
        with self._lock:
            self.forward_calls += 1
            self.adjoint_calls += 1
        return self._apply(x, np.abs(self.otf) ** 2)

    def spectral_norm_sq(self) -> float:
        """||H||_2^2, exact for a BCCB matrix: max |OTF|^2."""
        return float(np.max(np.abs(self.otf) ** 2))

    def reset_counters(self) -> None:
        with self._lock:
            self.forward_calls = 0
            self.adjoint_calls = 0

    def __repr__(self) -> str:
        return f"CyclicBlurOperator(psf={self.psf.rows}x{self.psf.cols}, grid={self.grid_dims})"


def make_operator(psf: ImageGrid, grid_dims: Tuple[int, int], normalize: bool = True) -> CyclicBlurOperator:
    return CyclicBlurOperator(psf, grid_dims, normalize=normalize)


def forward(op: CyclicBlurOperator, x: GridLike) -> GridLike:
    return op.forward(x)


def adjoint(op: CyclicBlurOperator, y: GridLike) -> GridLike:
    return op.adjoint(y)


def gaussian_psf(size: int, variance: float) -> ImageGrid:
    """
    Isotropic Gaussian on a size x size lattice, unit sum.
    `variance` is sigma_b^2 (the argument is not a standard deviation).
    """
    if size < 1 or size % 2 == 0:
        raise InvalidParameterError(f"PSF size must be odd and >= 1, got {size}")
    if not (variance > 0.0):
        raise InvalidParameterError(f"PSF variance must be > 0, got {variance}")
    half = (size - 1) / 2.0
    u = np.arange(size) - half
    rr, cc = np.meshgrid(u, u, indexing='ij')
    kernel = np.exp(-(rr ** 2 + cc ** 2) / (2.0 * variance))
    return ImageGrid(kernel / kernel.sum())


def direct_cyclic_convolution(psf: Union[ImageGrid, np.ndarray], x: np.ndarray) -> np.ndarray:
    """
    O(N * P) reference implementation with the same centring convention
    as CyclicBlurOperator (no normalisation).
    """
    h = psf.data if isinstance(psf, ImageGrid) else np.asarray(psf, dtype=float)
    x = np.asarray(x, dtype=float)
    cr, cc = (h.shape[0] - 1) // 2, (h.shape[1] - 1) // 2
    out = np.zeros_like(x)
    for i in range(h.shape[0]):
        for j in range(h.shape[1]):
            out += h[i, j] * np.roll(x, (i - cr, j - cc), axis=(0, 1))
    return out
