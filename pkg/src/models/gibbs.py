import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from src.models.convolution import CyclicBlurOperator
from src.models.distributions import (
    XI_MAX,
    GgdClassParams,
    InverseGammaParams,
    RngStream,
    draw_index,
    ggd_log_normalizer,
    inverse_gamma_sample,
    softmax_log_weights,
    truncated_normal_log_pdf,
    truncated_normal_sample,
)
from src.models.errors import (
    DimensionMismatchError,
    InvalidParameterError,
    NumericFailure,
    SamplerAborted,
)
from src.models.grid import ImageGrid, LabelField
from src.models.potts import PottsConfig, neighbor_class_counts

logger = logging.getLogger(__name__)

LABEL_ORDERS = ('raster', 'checkerboard')


@dataclass
class ModelHyperparams:
    """
    Fixed hyperparameters of the hierarchical model: inverse-gamma noise
    prior (alpha, nu), Potts granularity beta, number of classes K and the
    |x| smoothing constant used by the HMC energy.
    """
    alpha: float = 0.1
    nu: float = 0.1
    beta: float = 1.0
    k_classes: int = 2
    eps_smooth: float = 1e-8

    def __post_init__(self):
        if not (self.alpha > 0 and self.nu > 0):
            raise InvalidParameterError(f"noise hyperprior needs alpha, nu > 0, got {self.alpha}, {self.nu}")
        if self.eps_smooth < 0:
            raise InvalidParameterError("eps_smooth must be >= 0")
        PottsConfig(self.beta, self.k_classes)

    @property
    def potts(self) -> PottsConfig:
        return PottsConfig(beta=self.beta, k_classes=self.k_classes)


@dataclass
class SamplerConfig:
    n_iter: int = 6000
    n_burnin: int = 2000
    leapfrog_min: int = 50
    leapfrog_max: int = 70
    eps_init: float = 1e-5
    delta_init: float = 0.05
    adapt_window: int = 100
    accept_low: float = 0.30
    accept_high: float = 0.90
    adapt_factor: float = 0.20
    seed: int = 0
    omit_hastings_term: bool = False
    inverted_adaptation: bool = False
    label_order: str = 'raster'
    progress: bool = False

    def __post_init__(self):
        if not (0 <= self.n_burnin < self.n_iter):
            raise InvalidParameterError(
                f"need 0 <= n_burnin < n_iter, got burn-in {self.n_burnin}, iterations {self.n_iter}")
        if not (1 <= self.leapfrog_min <= self.leapfrog_max):
            raise InvalidParameterError(
                f"need 1 <= L_lo <= L_hi, got [{self.leapfrog_min}, {self.leapfrog_max}]")
        if not (self.eps_init > 0 and self.delta_init > 0):
            raise InvalidParameterError("initial step sizes must be > 0")
        if self.adapt_window < 1:
            raise InvalidParameterError("adapt_window must be >= 1")
        if not (0.0 <= self.accept_low < self.accept_high <= 1.0):
            raise InvalidParameterError("acceptance band must satisfy 0 <= low < high <= 1")
        if not (0.0 < self.adapt_factor < 1.0):
            raise InvalidParameterError("adapt_factor must lie in (0, 1)")
        if self.label_order not in LABEL_ORDERS:
            raise InvalidParameterError(f"label_order must be one of {LABEL_ORDERS}")

    @property
    def n_retained(self) -> int:
        return self.n_iter - self.n_burnin


@dataclass
class ChainState:
    """
    One Gibbs iteration's variables. z is zero-based internally; use
    labels() for the 1-based LabelField.
    """
    x: np.ndarray
    z: np.ndarray
    sigma2: float
    xi: np.ndarray
    gamma: np.ndarray
    rwmh_delta: np.ndarray
    hmc_eps: float
    iteration: int = 0

    @property
    def k_classes(self) -> int:
        return self.xi.size

    def classes(self) -> List[GgdClassParams]:
        return [GgdClassParams(float(a), float(b)) for a, b in zip(self.xi, self.gamma)]

    def image(self) -> ImageGrid:
        return ImageGrid(self.x)

    def labels(self) -> LabelField:
        return LabelField.from_zero_based(self.z, self.k_classes)

    def copy(self) -> 'ChainState':
        return ChainState(self.x.copy(), self.z.copy(), self.sigma2, self.xi.copy(),
                          self.gamma.copy(), self.rwmh_delta.copy(), self.hmc_eps, self.iteration)

    def validate(self) -> None:
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise NumericFailure(f"sigma2 left its support: {self.sigma2}")
        try:
            self.classes()
        except InvalidParameterError as e:
            raise NumericFailure(f"class parameters left their support: {e}") from e
        if np.any(self.rwmh_delta <= 0) or not (self.hmc_eps > 0):
            raise NumericFailure("adaptive step sizes must stay positive")

    def summary(self) -> Dict[str, object]:
        return {
            'iteration': self.iteration,
            'sigma2': self.sigma2,
            'xi': self.xi.tolist(),
            'gamma': self.gamma.tolist(),
            'rwmh_delta': self.rwmh_delta.tolist(),
            'hmc_eps': self.hmc_eps,
            'x_finite': bool(np.all(np.isfinite(self.x))),
        }


@dataclass
class PosteriorAccumulators:
    """
    Post-burn-in running sums: per-pixel per-class sums of x over iterations
    where z_n = k, per-pixel label counts, and move acceptance counters.
    """
    k_classes: int
    dims: Tuple[int, int]
    x_sum: Optional[np.ndarray] = None
    label_counts: Optional[np.ndarray] = None
    retained: int = 0
    hmc_accepted: int = 0
    hmc_attempts: int = 0
    hmc_nonfinite: int = 0
    rwmh_accepted: Optional[np.ndarray] = None
    rwmh_attempts: Optional[np.ndarray] = None
    rwmh_numeric: int = 0

    def __post_init__(self):
        shape = (self.k_classes,) + tuple(self.dims)
        if self.x_sum is None:
            self.x_sum = np.zeros(shape)
        if self.label_counts is None:
            self.label_counts = np.zeros(shape, dtype=np.int64)
        if self.rwmh_accepted is None:
            self.rwmh_accepted = np.zeros(self.k_classes, dtype=np.int64)
        if self.rwmh_attempts is None:
            self.rwmh_attempts = np.zeros(self.k_classes, dtype=np.int64)

    def record(self, state: ChainState) -> None:
        for k in range(self.k_classes):
            hit = state.z == k
            self.label_counts[k] += hit
            self.x_sum[k] += np.where(hit, state.x, 0.0)
        self.retained += 1

    def unconditional_mean(self) -> np.ndarray:
        return self.x_sum.sum(axis=0) / self.retained

    def merge(self, other: 'PosteriorAccumulators') -> 'PosteriorAccumulators':
        if other.k_classes != self.k_classes or tuple(other.dims) != tuple(self.dims):
            raise DimensionMismatchError("cannot merge accumulators of different shapes")
        return PosteriorAccumulators(
            k_classes=self.k_classes,
            dims=self.dims,
            x_sum=self.x_sum + other.x_sum,
            label_counts=self.label_counts + other.label_counts,
            retained=self.retained + other.retained,
            hmc_accepted=self.hmc_accepted + other.hmc_accepted,
            hmc_attempts=self.hmc_attempts + other.hmc_attempts,
            hmc_nonfinite=self.hmc_nonfinite + other.hmc_nonfinite,
            rwmh_accepted=self.rwmh_accepted + other.rwmh_accepted,
            rwmh_attempts=self.rwmh_attempts + other.rwmh_attempts,
            rwmh_numeric=self.rwmh_numeric + other.rwmh_numeric,
        )


@dataclass
class ChainTraces:
    """
    Per-iteration scalar traces, burn-in included. accept_rwmh holds 1/0 for
    accepted/rejected proposals and -1 when the class was empty.
    """
    k_classes: int
    n_burnin: int
    sigma2: List[float] = field(default_factory=list)
    xi: List[np.ndarray] = field(default_factory=list)
    gamma: List[np.ndarray] = field(default_factory=list)
    accept_hmc: List[int] = field(default_factory=list)
    accept_rwmh: List[np.ndarray] = field(default_factory=list)
    potential: List[float] = field(default_factory=list)
    hmc_eps: List[float] = field(default_factory=list)
    rwmh_delta: List[np.ndarray] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.sigma2)

    def append(self, state: ChainState, hmc_accepted: bool, rwmh: np.ndarray, potential: float) -> None:
        self.sigma2.append(state.sigma2)
        self.xi.append(state.xi.copy())
        self.gamma.append(state.gamma.copy())
        self.accept_hmc.append(int(hmc_accepted))
        self.accept_rwmh.append(rwmh.copy())
        self.potential.append(potential)
        self.hmc_eps.append(state.hmc_eps)
        self.rwmh_delta.append(state.rwmh_delta.copy())

    def scalar_names(self) -> List[str]:
        names = ['sigma2']
        names += [f'xi_{k + 1}' for k in range(self.k_classes)]
        names += [f'gamma_{k + 1}' for k in range(self.k_classes)]
        return names + ['potential']

    def series(self, name: str, retained_only: bool = True) -> np.ndarray:
        if name == 'sigma2':
            values = np.asarray(self.sigma2)
        elif name == 'potential':
            values = np.asarray(self.potential)
        elif name.startswith('xi_'):
            values = np.asarray(self.xi)[:, int(name[3:]) - 1]
        elif name.startswith('gamma_'):
            values = np.asarray(self.gamma)[:, int(name[6:]) - 1]
        else:
            raise KeyError(name)
        return values[self.n_burnin:] if retained_only else values

    def retained(self) -> Dict[str, np.ndarray]:
        return {name: self.series(name) for name in self.scalar_names()}

    def header(self) -> List[str]:
        k_range = range(1, self.k_classes + 1)
        return (['iter', 'sigma2'] + [f'xi_{k}' for k in k_range] + [f'gamma_{k}' for k in k_range]
                + ['accept_hmc'] + [f'accept_rwmh_{k}' for k in k_range] + ['potential'])

    def write_csv(self, path: Union[str, Path]) -> None:
        lines = [','.join(self.header())]
        for t in range(len(self)):
            row = [str(t), repr(float(self.sigma2[t]))]
            row += [repr(float(v)) for v in self.xi[t]]
            row += [repr(float(v)) for v in self.gamma[t]]
            row.append(str(self.accept_hmc[t]))
            row += [str(int(v)) for v in self.accept_rwmh[t]]
            row.append(repr(float(self.potential[t])))
            lines.append(','.join(row))
        Path(path).write_text('\n'.join(lines) + '\n', encoding='utf-8')


@dataclass
class ChainResult:
    accumulators: PosteriorAccumulators
    traces: ChainTraces
    final_state: ChainState
    stream_id: int
    leapfrog_steps: int = 0


# ---------------------------------------------------------------- helpers

def _as_array(v: Union[np.ndarray, ImageGrid]) -> np.ndarray:
    return v.data if isinstance(v, ImageGrid) else np.asarray(v, dtype=float)


def _accept(log_ratio: float, u: float) -> bool:
    return u < math.exp(min(0.0, log_ratio))


def class_log_likelihood(x: np.ndarray, xi: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """ll[k, r, c] = log a_k - |x|^xi_k / gamma_k"""
    abs_x = np.abs(x)[None, :, :]
    log_a = ggd_log_normalizer(xi, gamma)
    return log_a[:, None, None] - abs_x ** xi[:, None, None] / gamma[:, None, None]


def initial_state(y: np.ndarray, hyper: ModelHyperparams, config: SamplerConfig,
                  rng: RngStream, fixed_labels: Optional[LabelField] = None) -> ChainState:
    """
    x^(0) = y, labels uniform at random (or the fixed labels), xi_k = 1,
    gamma_k = mean |y|. sigma2 is drawn first in every iteration so its
    starting value only matters for manually driven moves.
    """
    k = hyper.k_classes
    if fixed_labels is not None:
        z = fixed_labels.zero_based().copy()
    else:
        z = rng.integers(0, k - 1, size=y.shape).astype(np.int64)
    scale = float(np.mean(np.abs(y))) or 1.0
    sigma2 = float(np.var(y)) or 1.0
    return ChainState(
        x=y.copy(), z=z, sigma2=sigma2,
        xi=np.full(k, 1.0), gamma=np.full(k, scale),
        rwmh_delta=np.full(k, config.delta_init), hmc_eps=config.eps_init,
    )


# ---------------------------------------------------------------- moves

def sample_noise_variance(state: ChainState, y, op: CyclicBlurOperator,
                          hyper: ModelHyperparams, rng: RngStream) -> float:
    """
    sigma2 ~ IG(alpha + N/2, nu + ||y - Hx||^2 / 2)
    """
    y = _as_array(y)
    residual = y - op.forward(state.x)
    rss = float(np.sum(residual ** 2))
    if not math.isfinite(rss):
        raise NumericFailure("non-finite residual in noise-variance move")
    params = InverseGammaParams(hyper.alpha + 0.5 * y.size, hyper.nu + 0.5 * rss)
    return inverse_gamma_sample(params, rng)


def shape_log_target(xi: float, gamma: float, abs_x: np.ndarray) -> float:
    """log of a_k^N_k exp(-||x_k||_xi^xi / gamma) on (0, 3]"""
    if not (0.0 < xi <= XI_MAX):
        return -math.inf
    return float(abs_x.size * ggd_log_normalizer(xi, gamma) - np.sum(abs_x ** xi) / gamma)


def rwmh_shape_step(state: ChainState, k: int, config: SamplerConfig,
                    rng: RngStream) -> Tuple[float, bool]:
    """
    Random-walk MH on xi_k with a truncated-normal proposal on (0, 3).
    Empty classes are skipped and keep their value. The Hastings term for
    the truncated proposal is included unless omit_hastings_term is set.
    """
    xi, accepted, _ = _rwmh_move(state, k, config, rng)
    return xi, accepted


def _rwmh_move(state: ChainState, k: int, config: SamplerConfig,
               rng: RngStream) -> Tuple[float, bool, bool]:
    abs_x = np.abs(state.x[state.z == k])
    current = float(state.xi[k])
    if abs_x.size == 0:
        return current, False, False
    delta = float(state.rwmh_delta[k])
    gamma = float(state.gamma[k])
    proposal = truncated_normal_sample(current, delta, 0.0, XI_MAX, rng)
    u = float(rng.uniform())
    with np.errstate(over='ignore', invalid='ignore'):
        log_ratio = shape_log_target(proposal, gamma, abs_x) - shape_log_target(current, gamma, abs_x)
    if not config.omit_hastings_term:
        log_ratio += (truncated_normal_log_pdf(current, proposal, delta, 0.0, XI_MAX)
                      - truncated_normal_log_pdf(proposal, current, delta, 0.0, XI_MAX))
    if math.isnan(log_ratio):
        logger.debug("xi_%d proposal %.4g rejected on numeric overflow", k + 1, proposal)
        return current, False, True
    if _accept(log_ratio, u):
        return proposal, True, False
    return current, False, False


def sample_scale(state: ChainState, k: int, rng: RngStream) -> float:
    """
    gamma_k ~ IG(N_k / xi_k, ||x_k||_xi^xi). Holds the previous value when
    the class is empty or the class pixels are all zero.
    """
    abs_x = np.abs(state.x[state.z == k])
    xi = float(state.xi[k])
    if abs_x.size == 0:
        return float(state.gamma[k])
    total = float(np.sum(abs_x ** xi))
    if not (total > 0.0):
        logger.debug("class %d has zero l_xi mass, holding gamma", k + 1)
        return float(state.gamma[k])
    return inverse_gamma_sample(InverseGammaParams(abs_x.size / xi, total), rng)


def _raster_sweep(z0: np.ndarray, ll: np.ndarray, beta: float, rng: RngStream) -> np.ndarray:
    rows, cols = z0.shape
    n_classes = ll.shape[0]
    z = z0.ravel().tolist()
    ll_rows = ll.reshape(n_classes, -1).T.tolist()
    uniforms = rng.uniform(rows * cols).tolist()
    exp = math.exp
    for n in range(rows * cols):
        r, c = divmod(n, cols)
        w = list(ll_rows[n])
        if r > 0:
            w[z[n - cols]] += beta
        if r < rows - 1:
            w[z[n + cols]] += beta
        if c > 0:
            w[z[n - 1]] += beta
        if c < cols - 1:
            w[z[n + 1]] += beta
        m = max(w)
        if m == -math.inf or m != m:
            raise NumericFailure(f"label weights at pixel {n} are all -inf")
        p = [exp(v - m) for v in w]
        s = sum(p)
        z[n] = draw_index([q / s for q in p], uniforms[n])
    return np.asarray(z, dtype=np.int64).reshape(rows, cols)


def _checkerboard_sweep(z0: np.ndarray, ll: np.ndarray, beta: float, rng: RngStream) -> np.ndarray:
    # pixels of one colour are conditionally independent under a 4-neighbourhood
    z = z0.copy()
    n_classes = ll.shape[0]
    rr, cc = np.indices(z.shape)
    for colour in (0, 1):
        mask = (rr + cc) % 2 == colour
        counts = neighbor_class_counts(z, n_classes)
        log_w = ll[:, mask] + beta * counts[:, mask]
        if np.any(np.isnan(log_w)):
            raise NumericFailure("NaN label weights")
        probs = softmax_log_weights(log_w, axis=0)
        cdf = np.cumsum(probs, axis=0)
        u = rng.uniform(int(mask.sum()))
        z[mask] = np.minimum((u[None, :] >= cdf).sum(axis=0), n_classes - 1)
    return z


def _sweep(state: ChainState, hyper: ModelHyperparams, order: str, rng: RngStream) -> np.ndarray:
    if hyper.k_classes == 1:
        return state.z.copy()
    with np.errstate(over='ignore'):
        ll = class_log_likelihood(state.x, state.xi, state.gamma)
    if np.any(np.isnan(ll)):
        raise NumericFailure("NaN class log-likelihoods")
    if order == 'checkerboard':
        return _checkerboard_sweep(state.z, ll, hyper.beta, rng)
    return _raster_sweep(state.z, ll, hyper.beta, rng)


def sweep_labels(state: ChainState, hyper: ModelHyperparams, rng: RngStream,
                 order: str = 'raster') -> LabelField:
    """
    One Gibbs sweep over the labels, each z_n drawn from
    pi_nk ∝ a_k exp(-|x_n|^xi_k / gamma_k) exp(beta * #{neighbours with label k}).
    """
    if order not in LABEL_ORDERS:
        raise InvalidParameterError(f"unknown label order {order!r}")
    return LabelField.from_zero_based(_sweep(state, hyper, order, rng), hyper.k_classes)


class PotentialEnergy:
    """
    U(x) = ||y - Hx||^2 / (2 sigma2) + sum_n (x_n^2 + eps)^(xi_zn / 2) / gamma_zn
    together with its gradient H^T(Hx - y) / sigma2 + xi x (x^2 + eps)^(xi/2 - 1) / gamma.
    """

    def __init__(self, y: np.ndarray, op: CyclicBlurOperator, sigma2: float,
                 z: np.ndarray, xi: np.ndarray, gamma: np.ndarray, eps_smooth: float):
        self.y = y
        self.op = op
        self.sigma2 = sigma2
        self.xi_map = xi[z]
        self.gamma_map = gamma[z]
        self.eps_smooth = eps_smooth

    @classmethod
    def from_state(cls, state: ChainState, y: np.ndarray, op: CyclicBlurOperator,
                   hyper: ModelHyperparams) -> 'PotentialEnergy':
        return cls(y, op, state.sigma2, state.z, state.xi, state.gamma, hyper.eps_smooth)

    def value(self, x: np.ndarray) -> float:
        residual = self.op.forward(x) - self.y
        smooth = x ** 2 + self.eps_smooth
        return float(0.5 * np.sum(residual ** 2) / self.sigma2
                     + np.sum(smooth ** (0.5 * self.xi_map) / self.gamma_map))

    def value_and_gradient(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        residual = self.op.forward(x) - self.y
        smooth = x ** 2 + self.eps_smooth
        half_xi = 0.5 * self.xi_map
        u = 0.5 * np.sum(residual ** 2) / self.sigma2 + np.sum(smooth ** half_xi / self.gamma_map)
        grad = (self.op.adjoint(residual) / self.sigma2
                + self.xi_map * x * smooth ** (half_xi - 1.0) / self.gamma_map)
        return float(u), grad

    def gradient(self, x: np.ndarray) -> np.ndarray:
        return self.value_and_gradient(x)[1]


def leapfrog(x: np.ndarray, p: np.ndarray, eps: float, n_steps: int,
             value_and_gradient: Callable[[np.ndarray], Tuple[float, np.ndarray]],
             grad0: Optional[np.ndarray] = None) -> Tuple[np.ndarray, np.ndarray, float]:
    """
    n_steps leapfrog steps of size eps; returns (x, p, U(x)) at the end.
    Costs n_steps + 1 gradient evaluations (n_steps if grad0 is supplied).
    """
    if grad0 is None:
        _, grad0 = value_and_gradient(x)
    x = x.copy()
    p = p - 0.5 * eps * grad0
    u = math.nan
    for i in range(n_steps):
        x = x + eps * p
        u, grad = value_and_gradient(x)
        if i < n_steps - 1:
            p = p - eps * grad
    p = p - 0.5 * eps * grad
    return x, p, u


class HmcOutcome(NamedTuple):
    x: np.ndarray
    accepted: bool
    potential: float
    finite: bool
    n_steps: int


def _hmc_move(state: ChainState, y: np.ndarray, op: CyclicBlurOperator, hyper: ModelHyperparams,
              config: SamplerConfig, rng: RngStream) -> HmcOutcome:
    energy = PotentialEnergy.from_state(state, y, op, hyper)
    momentum = rng.normal(state.x.shape)
    n_steps = int(rng.integers(config.leapfrog_min, config.leapfrog_max))
    u = float(rng.uniform())
    u_old, grad_old = energy.value_and_gradient(state.x)
    if not math.isfinite(u_old):
        raise NumericFailure(f"non-finite potential energy at the current state: {u_old}")
    with np.errstate(over='ignore', invalid='ignore'):
        x_new, p_new, u_new = leapfrog(state.x, momentum, state.hmc_eps, n_steps,
                                       energy.value_and_gradient, grad0=grad_old)
        h_old = u_old + 0.5 * float(np.sum(momentum ** 2))
        h_new = u_new + 0.5 * float(np.sum(p_new ** 2))
    if not (math.isfinite(h_new) and np.all(np.isfinite(x_new))):
        return HmcOutcome(state.x, False, u_old, False, n_steps)
    if _accept(h_old - h_new, u):
        return HmcOutcome(x_new, True, u_new, True, n_steps)
    return HmcOutcome(state.x, False, u_old, True, n_steps)


def hmc_reflectivity_step(state: ChainState, y, op: CyclicBlurOperator, hyper: ModelHyperparams,
                          config: SamplerConfig, rng: RngStream) -> Tuple[ImageGrid, bool]:
    """
    Hamiltonian move on x: momentum ~ N(0, I), L ~ U{L_lo..L_hi} leapfrog
    steps of size eps, accepted with min(1, exp(H_old - H_new)). A
    non-finite trajectory is rejected.
    """
    outcome = _hmc_move(state, _as_array(y), op, hyper, config, rng)
    return ImageGrid(outcome.x), outcome.accepted


def adapt_step(value: float, acceptance: float, config: SamplerConfig) -> float:
    """
    Acceptance above the band enlarges the step, below shrinks it.
    inverted_adaptation swaps the two.
    """
    grow, shrink = 1.0 + config.adapt_factor, 1.0 - config.adapt_factor
    if config.inverted_adaptation:
        grow, shrink = shrink, grow
    if acceptance > config.accept_high:
        return value * grow
    if acceptance < config.accept_low:
        return value * shrink
    return value


# ---------------------------------------------------------------- driver

def run_chain(y, op: CyclicBlurOperator, hyper: ModelHyperparams, config: SamplerConfig,
              init: Optional[ChainState] = None, fixed_labels: Optional[LabelField] = None,
              stream_id: int = 0) -> ChainResult:
    """
    Hybrid Gibbs sampler. Each iteration draws sigma2, xi_k (RWMH), gamma_k,
    the labels (skipped when fixed_labels is given) and x (HMC), in that
    order. Step sizes adapt every adapt_window iterations during burn-in
    only; statistics accumulate after burn-in.
    """
    y = _as_array(y)
    if y.shape != op.grid_dims:
        raise DimensionMismatchError(f"observation {y.shape} does not match operator {op.grid_dims}")
    k_classes = hyper.k_classes
    if fixed_labels is not None:
        if fixed_labels.dims != y.shape or fixed_labels.k_classes != k_classes:
            raise DimensionMismatchError("fixed labels do not match the observation or K")
    rng = RngStream(config.seed, stream_id)
    state = init.copy() if init is not None else initial_state(y, hyper, config, rng, fixed_labels)
    if state.x.shape != y.shape or state.xi.size != k_classes:
        raise DimensionMismatchError("initial state does not match the observation or K")

    acc = PosteriorAccumulators(k_classes=k_classes, dims=y.shape)
    traces = ChainTraces(k_classes=k_classes, n_burnin=config.n_burnin)
    window_hmc = 0
    window_rwmh = np.zeros(k_classes, dtype=np.int64)
    window_rwmh_tries = np.zeros(k_classes, dtype=np.int64)
    leapfrog_total = 0

    iterations = tqdm(range(config.n_iter), desc=f"chain {stream_id}", disable=not config.progress,
                      leave=False)
    for t in iterations:
        move = 'sigma2'
        try:
            state.sigma2 = sample_noise_variance(state, y, op, hyper, rng)

            move = 'xi'
            rwmh = np.full(k_classes, -1, dtype=np.int64)
            for k in range(k_classes):
                if not np.any(state.z == k):
                    continue
                state.xi[k], accepted, overflow = _rwmh_move(state, k, config, rng)
                rwmh[k] = int(accepted)
                acc.rwmh_numeric += int(overflow)

            move = 'gamma'
            for k in range(k_classes):
                state.gamma[k] = sample_scale(state, k, rng)

            move = 'labels'
            if fixed_labels is None:
                state.z = _sweep(state, hyper, config.label_order, rng)

            move = 'x'
            outcome = _hmc_move(state, y, op, hyper, config, rng)
            state.x = outcome.x
            state.validate()
        except (NumericFailure, InvalidParameterError) as e:
            logger.error("chain %d aborted at iteration %d in %s move: %s", stream_id, t, move, e)
            raise SamplerAborted(f"{move} move failed at iteration {t}: {e}", state=state.copy(),
                                 move=move) from e

        state.iteration = t + 1
        leapfrog_total += outcome.n_steps
        if not outcome.finite:
            acc.hmc_nonfinite += 1

        tried = rwmh >= 0
        window_hmc += int(outcome.accepted)
        window_rwmh += np.where(tried, rwmh, 0)
        window_rwmh_tries += tried
        acc.hmc_attempts += 1
        acc.hmc_accepted += int(outcome.accepted)
        acc.rwmh_attempts += tried
        acc.rwmh_accepted += np.where(tried, rwmh, 0)

        if t < config.n_burnin and (t + 1) % config.adapt_window == 0:
            state.hmc_eps = adapt_step(state.hmc_eps, window_hmc / config.adapt_window, config)
            for k in range(k_classes):
                if window_rwmh_tries[k] > 0:
                    rate = window_rwmh[k] / window_rwmh_tries[k]
                    state.rwmh_delta[k] = adapt_step(state.rwmh_delta[k], rate, config)
            logger.debug("iteration %d: eps=%.3g, delta=%s", t + 1, state.hmc_eps, state.rwmh_delta)
            window_hmc = 0
            window_rwmh[:] = 0
            window_rwmh_tries[:] = 0

        traces.append(state, outcome.accepted, rwmh, outcome.potential)
        if t >= config.n_burnin:
            acc.record(state)

    logger.info("chain %d done: HMC acceptance %.2f, final eps %.3g", stream_id,
                acc.hmc_accepted / max(acc.hmc_attempts, 1), state.hmc_eps)
    return ChainResult(accumulators=acc, traces=traces, final_state=state, stream_id=stream_id,
                       leapfrog_steps=leapfrog_total)


def run_chains(y, op: CyclicBlurOperator, hyper: ModelHyperparams, config: SamplerConfig,
               n_chains: int = 1, fixed_labels: Optional[LabelField] = None) -> List[ChainResult]:
    """
    Independent chains on disjoint streams (stream id = chain index), one
    worker thread each. Results come back in chain order.
    """
    if n_chains < 1:
        raise InvalidParameterError("need at least one chain")
    if n_chains == 1:
        return [run_chain(y, op, hyper, config, fixed_labels=fixed_labels, stream_id=0)]
    with ThreadPoolExecutor(max_workers=n_chains) as pool:
        futures = [pool.submit(run_chain, y, op, hyper, config, None, fixed_labels, c)
                   for c in range(n_chains)]
        return [f.result() for f in futures]


def merge_accumulators(results: List[ChainResult]) -> PosteriorAccumulators:
    merged = results[0].accumulators
    for result in results[1:]:
        merged = merged.merge(result.accumulators)
    return merged


def describe_config(hyper: ModelHyperparams, config: SamplerConfig) -> Dict[str, object]:
    values = {f'model.{k}': v for k, v in asdict(hyper).items()}
    values.update({f'sampler.{k}': v for k, v in asdict(config).items()})
    return values
