import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

from src.models.errors import InvalidParameterError
from src.models.grid import LabelField

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PottsConfig:
    """
    Potts MRF prior with a first-order (N, S, E, W) neighbourhood.
    Neighbourhoods are truncated at the image border (no wrap-around).
    """
    beta: float = 1.0
    k_classes: int = 2

    def __post_init__(self):
        if not (self.beta >= 0.0):
            raise InvalidParameterError(f"Potts beta must be >= 0, got {self.beta}")
        if self.k_classes < 1:
            raise InvalidParameterError(f"K must be >= 1, got {self.k_classes}")


def neighbors(n: int, dims: Tuple[int, int]) -> List[int]:
    """
    In-bounds first-order neighbours of pixel index n = r * cols + c,
    in N, S, W, E order.
    """
    rows, cols = dims
    if not (0 <= n < rows * cols):
        raise IndexError(f"pixel index {n} outside {rows}x{cols} grid")
    r, c = divmod(n, cols)
    out = []
    if r > 0:
        out.append(n - cols)
    if r < rows - 1:
        out.append(n + cols)
    if c > 0:
        out.append(n - 1)
    if c < cols - 1:
        out.append(n + 1)
    return out


def local_log_weight(n: int, k: int, z: LabelField, cfg: PottsConfig) -> float:
    """beta * number of neighbours of n carrying label k (k is 1-based)."""
    if not (1 <= k <= cfg.k_classes):
        raise InvalidParameterError(f"class {k} outside 1..{cfg.k_classes}")
    flat = z.labels.ravel()
    agree = sum(1 for m in neighbors(n, z.dims) if flat[m] == k)
    return cfg.beta * agree


def neighbor_class_counts(z0: np.ndarray, k_classes: int) -> np.ndarray:
    """
    counts[k, r, c] = number of first-order neighbours of (r, c) with
    zero-based label k. Border pixels see fewer neighbours.
    """
    counts = np.zeros((k_classes,) + z0.shape, dtype=np.int64)
    for k in range(k_classes):
        hit = (z0 == k).astype(np.int64)
        counts[k, 1:, :] += hit[:-1, :]
        counts[k, :-1, :] += hit[1:, :]
        counts[k, :, 1:] += hit[:, :-1]
        counts[k, :, :-1] += hit[:, 1:]
    return counts


def agreeing_pairs(z0: np.ndarray) -> int:
    """Number of unordered neighbour pairs with equal labels."""
    vertical = np.count_nonzero(z0[1:, :] == z0[:-1, :])
    horizontal = np.count_nonzero(z0[:, 1:] == z0[:, :-1])
    return int(vertical + horizontal)


def potts_energy(z: LabelField, cfg: PottsConfig) -> float:
    """
    sum_n sum_{n' in V(n)} beta * delta(z_n - z_n'), ordered pairs, so
    every agreeing edge is counted twice.
    """
    return cfg.beta * 2.0 * agreeing_pairs(z.labels)


def potts_log_prior(z: LabelField, cfg: PottsConfig) -> float:
    """
    Unnormalised log prior whose full conditionals are exactly
    local_log_weight: beta per agreeing unordered edge, i.e. half the
    ordered-pair energy.
    """
    return 0.5 * potts_energy(z, cfg)
