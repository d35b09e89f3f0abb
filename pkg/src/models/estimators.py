import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Sequence, Union

import numpy as np
from scipy.optimize import linear_sum_assignment

from src.models.distributions import GgdClassParams
from src.models.errors import InvalidParameterError, NumericFailure
from src.models.gibbs import ChainResult, ChainState, ChainTraces, PosteriorAccumulators
from src.models.grid import ImageGrid, LabelField

logger = logging.getLogger(__name__)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def write_csv(self, path: Union[str, Path]) -> None:
        lines = ['bin_lo,bin_hi,count']
        for lo, hi, n in zip(self.edges[:-1], self.edges[1:], self.counts):
            lines.append(f"{float(lo)!r},{float(hi)!r},{int(n)}")
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


@dataclass
class ScalarEstimate:
    mean: float
    std: float


@dataclass
class PosteriorEstimates:
    x_hat: ImageGrid
    z_hat: LabelField
    sigma2_hat: float
    classes: List[GgdClassParams]
    scalars: Dict[str, ScalarEstimate] = field(default_factory=dict)
    histograms: Dict[str, Histogram] = field(default_factory=dict)
    fallback_pixels: int = 0
    label_ties: int = 0


def map_labels(acc: PosteriorAccumulators) -> LabelField:
    """
    Marginal MAP labels: argmax_k count(n, k); ties go to the smallest k.
    """
    if acc.retained < 1:
        raise InvalidParameterError("no retained iterations in the accumulators")
    z0 = np.argmax(acc.label_counts, axis=0)
    ties = count_label_ties(acc)
    if ties:
        logger.info("%d pixel(s) had tied label counts, resolved to the smallest class", ties)
    return LabelField.from_zero_based(z0, acc.k_classes)


def count_label_ties(acc: PosteriorAccumulators) -> int:
    counts = acc.label_counts
    best = np.max(counts, axis=0)
    return int(np.count_nonzero((counts == best[None]).sum(axis=0) > 1))


def mmse_reflectivity(acc: PosteriorAccumulators, z_hat: LabelField, lenient: bool = False) -> ImageGrid:
    """
    x_hat_n = mean of x_n over retained iterations with z_n equal to z_hat_n.

    Pixels never observed in their MAP class raise NumericFailure, or fall
    back to the unconditioned mean when lenient is set.
    """
    if acc.retained < 1:
        raise InvalidParameterError("no retained iterations in the accumulators")
    z0 = z_hat.zero_based()
    rows, cols = np.indices(z0.shape)
    counts = acc.label_counts[z0, rows, cols]
    sums = acc.x_sum[z0, rows, cols]
    missing = counts == 0
    if np.any(missing):
        pixels = np.argwhere(missing)
        if not lenient:
            raise NumericFailure(
                f"{len(pixels)} pixel(s) never visited their MAP class, first {pixels[:5].tolist()}; "
                "run a longer chain or use lenient mode")
        logger.warning("%d pixel(s) fall back to the unconditioned mean", len(pixels))
    with np.errstate(invalid='ignore', divide='ignore'):
        x_hat = np.where(missing, acc.unconditional_mean(), sums / np.maximum(counts, 1))
    return ImageGrid(x_hat)


def mmse_scalars(traces: Union[ChainTraces, Dict[str, Sequence[float]]]) -> Dict[str, ScalarEstimate]:
    """
    Posterior mean and (n-1)-normalised std of each retained scalar trace.
    """
    series = traces.retained() if isinstance(traces, ChainTraces) else traces
    out = {}
    for name, values in series.items():
        values = np.asarray(values, dtype=float)
        if values.size == 0:
            raise InvalidParameterError(f"trace {name!r} is empty")
        std = float(values.std(ddof=1)) if values.size > 1 else 0.0
        out[name] = ScalarEstimate(float(values.mean()), std)
    return out


def histogram(trace: Sequence[float], n_bins: int) -> Histogram:
    """Equal-width bins spanning [min, max] of the trace."""
    if n_bins < 1:
        raise InvalidParameterError("n_bins must be >= 1")
    values = np.asarray(trace, dtype=float)
    if values.size == 0:
        raise InvalidParameterError("cannot histogram an empty trace")
    counts, edges = np.histogram(values, bins=n_bins)
    return Histogram(edges=edges, counts=counts)


def estimate_posterior(acc: PosteriorAccumulators, traces: Union[ChainTraces, List[ChainTraces]],
                       n_bins: int = 30, lenient: bool = False) -> PosteriorEstimates:
    """
    Point estimates from (possibly merged) accumulators and one or more
    chains' traces; scalar summaries pool the retained samples of all chains.
    """
    trace_list = traces if isinstance(traces, list) else [traces]
    pooled: Dict[str, np.ndarray] = {}
    for name in trace_list[0].scalar_names():
        pooled[name] = np.concatenate([t.series(name) for t in trace_list])
    scalars = mmse_scalars(pooled)
    z_hat = map_labels(acc)
    x_hat = mmse_reflectivity(acc, z_hat, lenient=lenient)
    z0 = z_hat.zero_based()
    rows, cols = np.indices(z0.shape)
    fallback = int(np.count_nonzero(acc.label_counts[z0, rows, cols] == 0))
    k = acc.k_classes
    classes = [GgdClassParams(scalars[f'xi_{i + 1}'].mean, scalars[f'gamma_{i + 1}'].mean)
               for i in range(k)]
    hists = {name: histogram(values, n_bins) for name, values in pooled.items()}
    return PosteriorEstimates(
        x_hat=x_hat, z_hat=z_hat, sigma2_hat=scalars['sigma2'].mean, classes=classes,
        scalars=scalars, histograms=hists, fallback_pixels=fallback,
        label_ties=count_label_ties(acc),
    )


def permute_classes(acc: PosteriorAccumulators, perm: Sequence[int]) -> PosteriorAccumulators:
    """Reorder the class axis: new class i is old class perm[i]."""
    perm = list(perm)
    if sorted(perm) != list(range(acc.k_classes)):
        raise InvalidParameterError(f"{perm} is not a permutation of 0..{acc.k_classes - 1}")
    return PosteriorAccumulators(
        k_classes=acc.k_classes, dims=acc.dims,
        x_sum=acc.x_sum[perm].copy(), label_counts=acc.label_counts[perm].copy(),
        retained=acc.retained,
        hmc_accepted=acc.hmc_accepted, hmc_attempts=acc.hmc_attempts, hmc_nonfinite=acc.hmc_nonfinite,
        rwmh_accepted=acc.rwmh_accepted[perm].copy(), rwmh_attempts=acc.rwmh_attempts[perm].copy(),
        rwmh_numeric=acc.rwmh_numeric,
    )


def permute_traces(traces: ChainTraces, perm: Sequence[int]) -> ChainTraces:
    """Apply the permute_classes convention to the per-class traces."""
    perm = list(perm)
    if sorted(perm) != list(range(traces.k_classes)):
        raise InvalidParameterError(f"{perm} is not a permutation of 0..{traces.k_classes - 1}")
    return replace(
        traces,
        sigma2=list(traces.sigma2),
        xi=[v[perm].copy() for v in traces.xi],
        gamma=[v[perm].copy() for v in traces.gamma],
        accept_hmc=list(traces.accept_hmc),
        accept_rwmh=[v[perm].copy() for v in traces.accept_rwmh],
        potential=list(traces.potential),
        hmc_eps=list(traces.hmc_eps),
        rwmh_delta=[v[perm].copy() for v in traces.rwmh_delta],
    )


def permute_state(state: ChainState, perm: Sequence[int]) -> ChainState:
    perm = np.asarray(perm)
    inverse = np.argsort(perm)
    return replace(state, x=state.x.copy(), z=inverse[state.z], xi=state.xi[perm].copy(),
                   gamma=state.gamma[perm].copy(), rwmh_delta=state.rwmh_delta[perm].copy())


def chain_permutation(reference: PosteriorAccumulators, acc: PosteriorAccumulators) -> List[int]:
    """
    Class permutation that best matches acc's MAP labels to the reference's:
    class i of the aligned chain is class perm[i] of acc.
    """
    if reference.k_classes != acc.k_classes or tuple(reference.dims) != tuple(acc.dims):
        raise InvalidParameterError("chains differ in K or grid size")
    k = acc.k_classes
    overlap = np.zeros((k, k), dtype=np.int64)
    ref_map = np.argmax(reference.label_counts, axis=0).ravel()
    own_map = np.argmax(acc.label_counts, axis=0).ravel()
    np.add.at(overlap, (ref_map, own_map), 1)
    _, perm = linear_sum_assignment(overlap, maximize=True)
    return [int(p) for p in perm]


def align_chains(results: Sequence[ChainResult]) -> List[ChainResult]:
    """
    Relabel every chain's classes onto chain 0's so accumulators can be
    merged and traces pooled. Chain 0 is returned unchanged.
    """
    results = list(results)
    if not results:
        raise InvalidParameterError("no chains to align")
    reference = results[0].accumulators
    aligned = [results[0]]
    for result in results[1:]:
        perm = chain_permutation(reference, result.accumulators)
        if perm == sorted(perm):
            aligned.append(result)
            continue
        logger.info("chain %d classes relabelled as %s to match chain 0",
                    result.stream_id, [p + 1 for p in perm])
        aligned.append(replace(
            result,
            accumulators=permute_classes(result.accumulators, perm),
            traces=permute_traces(result.traces, perm),
            final_state=permute_state(result.final_state, perm),
        ))
    return aligned
