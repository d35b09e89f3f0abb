import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Union

import numpy as np

from src.models.convolution import CyclicBlurOperator
from src.models.errors import ConvergenceError, InvalidParameterError
from src.models.grid import ImageGrid

logger = logging.getLogger(__name__)

# relative objective increase tolerated before ISTA is declared divergent
DIVERGENCE_TOL = 1e-10


@dataclass
class L1Result:
    x: ImageGrid
    objective: List[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False

    def write_trace_csv(self, path: Union[str, Path]) -> None:
        lines = ['iter,objective'] + [f"{i},{v!r}" for i, v in enumerate(self.objective)]
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def _arr(g) -> np.ndarray:
    return g.data if isinstance(g, ImageGrid) else np.asarray(g, dtype=float)


def l2_deconvolve(y, op: CyclicBlurOperator, lam: float) -> ImageGrid:
    """
    x = (H^T H + lam I)^-1 H^T y, solved exactly per frequency:
    X(f) = conj(H(f)) Y(f) / (|H(f)|^2 + lam).
    """
    if not (lam > 0.0):
        raise InvalidParameterError(f"l2 regularisation must be > 0, got {lam}")
    y = _arr(y)
    if y.shape != op.grid_dims:
        raise InvalidParameterError(f"observation {y.shape} does not match operator {op.grid_dims}")
    response = np.conj(op.otf) / (np.abs(op.otf) ** 2 + lam)
    return ImageGrid(np.fft.irfft2(response * np.fft.rfft2(y), s=op.grid_dims))


def soft_threshold(v: np.ndarray, thresh: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - thresh, 0.0)


def l1_objective(x: np.ndarray, y: np.ndarray, op: CyclicBlurOperator, lam: float) -> float:
    residual = op.forward(x) - y
    return 0.5 * float(np.sum(residual ** 2)) + lam * float(np.sum(np.abs(x)))


def auto_lambda(y, op: CyclicBlurOperator) -> float:
    """0.1 ||H^T y||_inf"""
    return 0.1 * float(np.max(np.abs(op.adjoint(_arr(y)))))


def l1_deconvolve(y, op: CyclicBlurOperator, lam: float, max_iter: int = 500, tol: float = 1e-6,
                  accelerated: bool = False) -> L1Result:
    """
    Minimise 1/2 ||y - Hx||^2 + lam ||x||_1 by iterative shrinkage with step
    1 / ||H||^2, optionally with Nesterov momentum. Stops once the relative
    objective decrease drops below tol or after max_iter iterations.
    """
    if not (lam > 0.0):
        raise InvalidParameterError(f"l1 regularisation must be > 0, got {lam}")
    y = _arr(y)
    step = 1.0 / op.spectral_norm_sq()
    x = np.zeros_like(y)
    momentum_point = x
    t_k = 1.0
    objective = [l1_objective(x, y, op, lam)]
    converged = False
    for it in range(1, max_iter + 1):
        grad = op.adjoint(op.forward(momentum_point) - y)
        x_next = soft_threshold(momentum_point - step * grad, step * lam)
        if accelerated:
            t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_k ** 2))
            momentum_point = x_next + ((t_k - 1.0) / t_next) * (x_next - x)
            t_k = t_next
        else:
            momentum_point = x_next
        x = x_next
        value = l1_objective(x, y, op, lam)
        previous = objective[-1]
        objective.append(value)
        if not accelerated and value > previous + DIVERGENCE_TOL * max(abs(previous), 1.0):
            raise ConvergenceError(
                f"ISTA objective increased from {previous!r} to {value!r} at iteration {it}",
                iterate=ImageGrid(x))
        if not math.isfinite(value):
            raise ConvergenceError(f"ISTA objective became non-finite at iteration {it}", iterate=None)
        if previous > 0 and (previous - value) / previous < tol and value <= previous:
            converged = True
            break
    logger.info("l1 solver stopped after %d iterations, objective %.6g", it, objective[-1])
    return L1Result(x=ImageGrid(x), objective=objective, iterations=it, converged=converged)
