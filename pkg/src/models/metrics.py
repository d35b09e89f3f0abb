import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.models.errors import DimensionMismatchError, InvalidParameterError, NumericFailure
from src.models.grid import ImageGrid, LabelField, RegionMask, extract_region

logger = logging.getLogger(__name__)

SSIM_WINDOW = 8
RG_THRESHOLD = 0.5

GridOrArray = Union[ImageGrid, np.ndarray]


def _arr(g: GridOrArray) -> np.ndarray:
    return g.data if isinstance(g, ImageGrid) else np.asarray(g, dtype=float)


def _same_shape(*arrays: np.ndarray) -> None:
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"metric inputs differ in shape: {sorted(shapes)}")


@dataclass
class MetricsReport:
    isnr: Optional[float] = None
    nrmse: Optional[float] = None
    psnr: Optional[float] = None
    mssim: Optional[float] = None
    oa: Optional[float] = None
    cnr: Optional[float] = None
    rg: Optional[float] = None
    flags: List[str] = field(default_factory=list)

    def as_dict(self) -> Dict[str, float]:
        names = ('isnr', 'nrmse', 'psnr', 'mssim', 'oa', 'cnr', 'rg')
        return {n: getattr(self, n) for n in names if getattr(self, n) is not None}

    def write_csv(self, path: Union[str, Path]) -> None:
        lines = ['metric,value']
        lines += [f"{name},{value!r}" for name, value in self.as_dict().items()]
        lines += [f"flag,{flag}" for flag in self.flags]
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')

    def to_text(self) -> str:
        units = {'isnr': ' dB', 'psnr': ' dB'}
        out = [f"{name.upper():>6}: {value:.4f}{units.get(name, '')}" for name, value in self.as_dict().items()]
        if self.flags:
            out.append(f" flags: {', '.join(self.flags)}")
        return '\n'.join(out)


def isnr(x: GridOrArray, y: GridOrArray, x_hat: GridOrArray) -> float:
    """10 log10(||x - y||^2 / ||x - x_hat||^2); +inf for a perfect reconstruction."""
    x, y, x_hat = _arr(x), _arr(y), _arr(x_hat)
    _same_shape(x, y, x_hat)
    num = float(np.sum((x - y) ** 2))
    den = float(np.sum((x - x_hat) ** 2))
    if den == 0.0:
        logger.warning("ISNR of a perfect reconstruction is infinite")
        return math.inf
    if num == 0.0:
        return -math.inf
    return 10.0 * math.log10(num / den)


def nrmse(x: GridOrArray, x_hat: GridOrArray) -> float:
    x, x_hat = _arr(x), _arr(x_hat)
    _same_shape(x, x_hat)
    norm = float(np.linalg.norm(x))
    if norm == 0.0:
        return math.inf
    return float(np.linalg.norm(x - x_hat)) / norm


def psnr(x: GridOrArray, x_hat: GridOrArray) -> float:
    """
    10 log10(peak^2 / MSE) with peak the global maximum over both images.
    """
    x, x_hat = _arr(x), _arr(x_hat)
    _same_shape(x, x_hat)
    mse = float(np.mean((x - x_hat) ** 2))
    if mse == 0.0:
        return math.inf
    peak = max(float(x.max()), float(x_hat.max()))
    if peak <= 0.0:
        raise NumericFailure("PSNR peak must be positive")
    return 10.0 * math.log10(peak ** 2 / mse)


def ssim_window(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    mu_a, mu_b = a.mean(), b.mean()
    var_a, var_b = a.var(ddof=1), b.var(ddof=1)
    cov = np.sum((a - mu_a) * (b - mu_b)) / (a.size - 1)
    return float(((2 * mu_a * mu_b + c1) * (2 * cov + c2))
                 / ((mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)))


def mssim(x: GridOrArray, x_hat: GridOrArray, window: int = SSIM_WINDOW) -> float:
    """
    Mean SSIM over non-overlapping window x window tiles (partial tiles at the
    right/bottom edge are dropped). C1 = (0.01 L)^2, C2 = (0.03 L)^2 with L the
    dynamic range of x.
    """
    x, x_hat = _arr(x), _arr(x_hat)
    _same_shape(x, x_hat)
    rows, cols = x.shape
    if rows < window or cols < window:
        raise InvalidParameterError(f"images smaller than the {window}x{window} SSIM window")
    dynamic_range = float(x.max() - x.min())
    if dynamic_range == 0.0:
        raise NumericFailure("MSSIM undefined for an image with zero dynamic range")
    c1 = (0.01 * dynamic_range) ** 2
    c2 = (0.03 * dynamic_range) ** 2
    scores = [ssim_window(x[r:r + window, c:c + window], x_hat[r:r + window, c:c + window], c1, c2)
              for r in range(0, rows - window + 1, window)
              for c in range(0, cols - window + 1, window)]
    return float(np.mean(scores))


def align_labels(z_true: LabelField, z_hat: LabelField) -> Tuple[List[int], int]:
    """
    Best class permutation: perm[k] is the true class matched to estimated
    class k (both zero-based); also returns the number of matching pixels.
    """
    if z_true.k_classes != z_hat.k_classes:
        raise InvalidParameterError(f"K mismatch: {z_true.k_classes} vs {z_hat.k_classes}")
    if z_true.dims != z_hat.dims:
        raise DimensionMismatchError("label fields differ in shape")
    k = z_true.k_classes
    confusion = np.zeros((k, k), dtype=np.int64)
    np.add.at(confusion, (z_hat.zero_based().ravel(), z_true.zero_based().ravel()), 1)
    est, true = linear_sum_assignment(confusion, maximize=True)
    perm = [0] * k
    for e, t in zip(est, true):
        perm[e] = int(t)
    return perm, int(confusion[est, true].sum())


def overall_accuracy(z_true: LabelField, z_hat: LabelField) -> float:
    """Fraction of correctly labelled pixels after the best class permutation."""
    _, matched = align_labels(z_true, z_hat)
    return matched / z_true.labels.size


def relabel(z_hat: LabelField, perm: Sequence[int]) -> LabelField:
    mapping = np.asarray(perm)
    return LabelField.from_zero_based(mapping[z_hat.zero_based()], z_hat.k_classes)


def cnr(grid: ImageGrid, region1: RegionMask, region2: RegionMask) -> float:
    """|mu1 - mu2| / sqrt(sigma1^2 + sigma2^2)"""
    if region1.overlaps(region2):
        raise InvalidParameterError("CNR regions must be disjoint")
    mu1, s1 = extract_region(grid, region1)
    mu2, s2 = extract_region(grid, region2)
    spread = math.sqrt(s1 ** 2 + s2 ** 2)
    if spread == 0.0:
        raise NumericFailure("CNR undefined: both regions have zero standard deviation")
    return abs(mu1 - mu2) / spread


def autocorrelation_area(g: GridOrArray, threshold: float = RG_THRESHOLD) -> int:
    """
    Pixels where the mean-removed, peak-normalised cyclic autocorrelation
    exceeds `threshold` (0.5 is -3 dB in power).
    """
    arr = _arr(g)
    centred = arr - arr.mean()
    power = np.abs(np.fft.fft2(centred)) ** 2
    ac = np.real(np.fft.ifft2(power))
    if not (ac[0, 0] > 0.0):
        raise NumericFailure("autocorrelation of a zero-energy image")
    return int(np.count_nonzero(ac / ac[0, 0] > threshold))


def resolution_gain(y: GridOrArray, x_hat: GridOrArray, threshold: float = RG_THRESHOLD) -> float:
    y, x_hat = _arr(y), _arr(x_hat)
    _same_shape(y, x_hat)
    return autocorrelation_area(y, threshold) / autocorrelation_area(x_hat, threshold)


def compute_report(x_hat: GridOrArray, y: Optional[GridOrArray] = None, x: Optional[GridOrArray] = None,
                   z_true: Optional[LabelField] = None, z_hat: Optional[LabelField] = None,
                   cnr_regions: Optional[Tuple[RegionMask, RegionMask]] = None,
                   rg_threshold: float = RG_THRESHOLD) -> MetricsReport:
    """
    Every metric the supplied inputs allow; degenerate cases are flagged.
    """
    report = MetricsReport()
    if x is not None:
        if y is not None:
            report.isnr = isnr(x, y, x_hat)
            if math.isinf(report.isnr):
                report.flags.append('isnr_infinite')
        report.nrmse = nrmse(x, x_hat)
        if math.isinf(report.nrmse):
            report.flags.append('nrmse_zero_reference')
        report.psnr = psnr(x, x_hat)
        if math.isinf(report.psnr):
            report.flags.append('psnr_infinite')
        report.mssim = mssim(x, x_hat)
        report.flags.append('psnr_peak_global_max')
    if z_true is not None and z_hat is not None:
        report.oa = overall_accuracy(z_true, z_hat)
    if cnr_regions is not None:
        report.cnr = cnr(ImageGrid(_arr(x_hat)), *cnr_regions)
    if y is not None:
        report.rg = resolution_gain(y, x_hat, rg_threshold)
    return report
