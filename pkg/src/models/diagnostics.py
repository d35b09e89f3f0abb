import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np

from src.models.errors import InvalidParameterError, NumericFailure
from src.models.gibbs import ChainTraces

logger = logging.getLogger(__name__)

PSRF_THRESHOLD = 1.2


class MultiChainTraces:
    """C chains x M retained samples of one scalar variable"""

    def __init__(self, chains: Union[np.ndarray, Sequence[Sequence[float]]]):
        arr = np.asarray(chains, dtype=float)
        if arr.ndim != 2:
            raise InvalidParameterError("chains must be a C x M array")
        n_chains, n_samples = arr.shape
        if n_chains < 2 or n_samples < 2:
            raise InvalidParameterError(f"PSRF needs C >= 2 and M >= 2, got {n_chains}x{n_samples}")
        self.values = arr

    @property
    def n_chains(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]


def psrf(traces: MultiChainTraces) -> float:
    """
    (M-1)/M + (C+1)/(C M) * B/W with B = M/(C-1) sum_c (vbar - vbar_c)^2 and
    W the mean within-chain (n-1)-normalised variance.
    """
    v = traces.values
    c, m = v.shape
    chain_means = v.mean(axis=1)
    grand_mean = chain_means.mean()
    between = m / (c - 1.0) * np.sum((grand_mean - chain_means) ** 2)
    within = np.mean(np.var(v, axis=1, ddof=1))
    if not (within > 0.0):
        raise NumericFailure("zero within-chain variance: degenerate (constant) traces")
    return float((m - 1.0) / m + (c + 1.0) / (c * m) * between / within)


@dataclass
class PsrfRow:
    variable: str
    value: float

    @property
    def passed(self) -> bool:
        return self.value < PSRF_THRESHOLD


def psrf_table(chain_traces: List[ChainTraces]) -> List[PsrfRow]:
    """
    PSRF for sigma2, every xi_k, gamma_k and the potential energy U(x).
    Constant traces (e.g. a class that stayed empty) are reported as NaN.
    """
    if len(chain_traces) < 2:
        raise InvalidParameterError("PSRF needs at least two chains")
    rows = []
    for name in chain_traces[0].scalar_names():
        series = [t.series(name) for t in chain_traces]
        m = min(len(s) for s in series)
        try:
            value = psrf(MultiChainTraces([s[:m] for s in series]))
        except NumericFailure:
            logger.warning("PSRF of %s undefined: constant traces", name)
            value = float('nan')
        rows.append(PsrfRow(name, value))
    return rows


def all_converged(rows: List[PsrfRow]) -> bool:
    return all(row.passed for row in rows)


def write_psrf_csv(path: Union[str, Path], rows: List[PsrfRow]) -> None:
    lines = ['variable,psrf,pass']
    for row in rows:
        lines.append(f"{row.variable},{row.value!r},{'pass' if row.passed else 'fail'}")
    Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


def psrf_summary(rows: List[PsrfRow]) -> Dict[str, float]:
    return {row.variable: row.value for row in rows}
