import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from src.models.convolution import CyclicBlurOperator, gaussian_psf, make_operator
from src.models.distributions import GgdClassParams, RngStream, ggd_sample
from src.models.errors import GridFormatError, InvalidParameterError, NumericFailure
from src.models.grid import ImageGrid, LabelField

logger = logging.getLogger(__name__)

SHAPE_KINDS = ('background', 'disc', 'rectangle', 'ellipse')


@dataclass(frozen=True)
class Shape:
    """
    One geometry primitive in pixel units; `label` is 1-based.

      background: ()
      disc:       (center_row, center_col, radius)
      rectangle:  (row0, col0, height, width)
      ellipse:    (center_row, center_col, semi_rows, semi_cols)
    """
    kind: str
    params: Tuple[float, ...]
    label: int

    def __post_init__(self):
        if self.kind not in SHAPE_KINDS:
            raise InvalidParameterError(f"unknown shape {self.kind!r}")
        expected = {'background': 0, 'disc': 3, 'rectangle': 4, 'ellipse': 4}[self.kind]
        if len(self.params) != expected:
            raise InvalidParameterError(f"{self.kind} takes {expected} parameters, got {len(self.params)}")

    def mask(self, dims: Tuple[int, int]) -> np.ndarray:
        rr, cc = np.indices(dims, dtype=float)
        if self.kind == 'background':
            return np.ones(dims, dtype=bool)
        if self.kind == 'disc':
            r0, c0, radius = self.params
            return (rr - r0) ** 2 + (cc - c0) ** 2 <= radius ** 2
        if self.kind == 'rectangle':
            r0, c0, h, w = self.params
            return (rr >= r0) & (rr < r0 + h) & (cc >= c0) & (cc < c0 + w)
        r0, c0, a, b = self.params
        return ((rr - r0) / a) ** 2 + ((cc - c0) / b) ** 2 <= 1.0


@dataclass
class PhantomSpec:
    """
    Ground-truth recipe: later shapes overwrite earlier ones and every pixel
    must end up covered.
    """
    dims: Tuple[int, int]
    classes: List[GgdClassParams]
    geometry: List[Shape]
    seed: int = 0
    psf_size: int = 5
    psf_var: float = 3.0
    bsnr_db: float = 30.0
    name: str = 'custom'

    @property
    def k_classes(self) -> int:
        return len(self.classes)

    def __post_init__(self):
        if self.dims[0] < 1 or self.dims[1] < 1:
            raise InvalidParameterError(f"bad phantom dims {self.dims}")
        for shape in self.geometry:
            if not (1 <= shape.label <= self.k_classes):
                raise InvalidParameterError(f"shape label {shape.label} outside 1..{self.k_classes}")

    def describe(self) -> Dict[str, object]:
        values = {
            'phantom.name': self.name,
            'phantom.dims': f"{self.dims[0]}x{self.dims[1]}",
            'phantom.seed': self.seed,
            'phantom.psf_size': self.psf_size,
            'phantom.psf_var': self.psf_var,
            'phantom.bsnr_db': self.bsnr_db,
        }
        for k, p in enumerate(self.classes, start=1):
            values[f'phantom.class_{k}'] = f"{p.xi!r} {p.gamma!r}"
        for i, s in enumerate(self.geometry):
            params = ''.join(f" {float(v)!r}" for v in s.params)
            values[f'phantom.shape_{i}'] = f"{s.kind}{params} {s.label}"
        return values


def spec_from_config(values: Dict[str, str]) -> PhantomSpec:
    """
    Build a PhantomSpec from flat config keys (the `phantom.` prefix written
    in manifests is optional):

      dims = 64x64          class_1 = <xi> <gamma>
      seed = 7              shape_0 = background 1
      bsnr_db = 30          shape_1 = disc <row> <col> <radius> <label>
    """
    plain = {k[len('phantom.'):] if k.startswith('phantom.') else k: v for k, v in values.items()}
    try:
        dims = parse_dims(plain['dims'])
        class_keys = sorted((k for k in plain if k.startswith('class_')), key=lambda k: int(k[6:]))
        shape_keys = sorted((k for k in plain if k.startswith('shape_')), key=lambda k: int(k[6:]))
        classes = []
        for key in class_keys:
            xi, gamma = (float(v) for v in plain[key].split())
            classes.append(GgdClassParams(xi, gamma))
        geometry = []
        for key in shape_keys:
            parts = plain[key].split()
            geometry.append(Shape(parts[0], tuple(float(v) for v in parts[1:-1]), int(parts[-1])))
    except (KeyError, ValueError, IndexError) as e:
        raise GridFormatError(f"malformed phantom spec: {e}") from e
    if not classes or not geometry:
        raise GridFormatError("phantom spec needs at least one class_N and one shape_N")
    return PhantomSpec(
        dims=dims, classes=classes, geometry=geometry,
        seed=int(plain.get('seed', 0)),
        psf_size=int(plain.get('psf_size', 5)),
        psf_var=float(plain.get('psf_var', 3.0)),
        bsnr_db=float(plain.get('bsnr_db', 30.0)),
        name=plain.get('name', 'custom'),
    )


def parse_dims(text: str) -> Tuple[int, int]:
    parts = text.lower().replace('×', 'x').split('x')
    if len(parts) != 2:
        raise GridFormatError(f"dims must look like 64x64, got {text!r}")
    rows, cols = int(parts[0]), int(parts[1])
    if rows < 1 or cols < 1:
        raise GridFormatError("empty dimension")
    return rows, cols


@dataclass
class Phantom:
    spec: PhantomSpec
    x: ImageGrid
    z: LabelField
    y: ImageGrid
    psf: ImageGrid
    sigma2: float
    operator: CyclicBlurOperator = field(repr=False, default=None)


def render_labels(spec: PhantomSpec) -> LabelField:
    """Rasterise the geometry; disc membership is centre distance <= radius."""
    labels = np.zeros(spec.dims, dtype=np.int64)
    for shape in spec.geometry:
        labels[shape.mask(spec.dims)] = shape.label
    uncovered = int(np.count_nonzero(labels == 0))
    if uncovered:
        raise GridFormatError(f"uncovered pixel(s): {uncovered} not assigned by the geometry")
    return LabelField(labels, spec.k_classes)


def draw_trf(labels: LabelField, classes: List[GgdClassParams], rng: RngStream) -> ImageGrid:
    """Each pixel drawn independently from its class GGD, classes in order."""
    if len(classes) != labels.k_classes:
        raise InvalidParameterError(f"{len(classes)} class parameter sets for K={labels.k_classes}")
    x = np.zeros(labels.dims)
    for k, params in enumerate(classes, start=1):
        mask = labels.labels == k
        n = int(mask.sum())
        if n:
            x[mask] = ggd_sample(params, rng, size=n)
    return ImageGrid(x)


def blurred_signal_power(hx: np.ndarray) -> float:
    return float(np.sum((hx - hx.mean()) ** 2))


def degrade(x: ImageGrid, op: CyclicBlurOperator, bsnr_db: float, rng: RngStream) -> Tuple[ImageGrid, float]:
    """
    y = Hx + n with n ~ N(0, sigma2) i.i.d. and
    sigma2 = ||Hx - mean(Hx)||^2 / (N 10^(BSNR/10)). BSNR = +inf is noiseless.
    """
    if math.isnan(bsnr_db) or bsnr_db == -math.inf:
        raise InvalidParameterError(f"BSNR must be finite or +inf, got {bsnr_db}")
    hx = op.forward(x.data)
    power = blurred_signal_power(hx)
    if power == 0.0:
        raise NumericFailure("blurred image is constant; BSNR undefined")
    if bsnr_db == math.inf:
        return ImageGrid(hx), 0.0
    sigma2 = power / (hx.size * 10.0 ** (bsnr_db / 10.0))
    noise = math.sqrt(sigma2) * rng.normal(hx.shape)
    return ImageGrid(hx + noise), sigma2


def measured_bsnr(hx: np.ndarray, noise: np.ndarray) -> float:
    return 10.0 * math.log10(blurred_signal_power(hx) / (hx.size * float(np.var(noise))))


def make_phantom(spec: PhantomSpec) -> Phantom:
    """
    Labels, TRF, Gaussian PSF and the degraded observation, all drawn from
    stream (spec.seed, 0).
    """
    rng = RngStream(spec.seed, 0)
    z = render_labels(spec)
    x = draw_trf(z, spec.classes, rng)
    psf = gaussian_psf(spec.psf_size, spec.psf_var)
    op = make_operator(psf, spec.dims)
    y, sigma2 = degrade(x, op, spec.bsnr_db, rng)
    logger.info("phantom %s %dx%d: sigma2=%.4g", spec.name, spec.dims[0], spec.dims[1], sigma2)
    return Phantom(spec=spec, x=x, z=z, y=y, psf=op.psf, sigma2=sigma2, operator=op)


# ---------------------------------------------------------------- presets

PRESET_DIMS = {
    'group1': (128, 128),
    'group2': (100, 100),
    'group3': (275, 75),
    'oa-sweep': (128, 128),
    'oa-sweep-scale': (128, 128),
    'iid-gauss': (50, 50),
    'iid-mid': (50, 50),
    'iid-heavy': (50, 50),
}

IID_PARAMS = {
    'iid-gauss': GgdClassParams(2.0, 2.0),
    'iid-mid': GgdClassParams(1.5, 1.26),
    'iid-heavy': GgdClassParams(0.6, 0.37),
}

PRESETS = tuple(PRESET_DIMS)


def preset(name: str, dims: Optional[Tuple[int, int]] = None, seed: int = 0,
           ratio: float = 2.0, bsnr_db: Optional[float] = None) -> PhantomSpec:
    """
    Named phantom recipes, geometry scaled to `dims`:

      group1          one bright disc (0.6, 1) in (1.8, 2)
      group2          two dark discs (0.8, 10) in (1.5, 1)
      group3          skin band (1, 30), tumour ellipse (1.8, 2), tissue (0.5, 1)
      oa-sweep        two bands, gamma = 20, xi_2 / xi_1 = ratio (xi_1 = 1)
      oa-sweep-scale  two bands, xi = 1, gamma_2 / gamma_1 = ratio (gamma_1 = 20)
      iid-*           single-class i.i.d. fields at BSNR 40 dB
    """
    if name not in PRESET_DIMS:
        raise InvalidParameterError(f"unknown preset {name!r}; choose from {', '.join(PRESETS)}")
    rows, cols = dims or PRESET_DIMS[name]
    short = min(rows, cols)
    bg = Shape('background', (), 1)
    if name == 'group1':
        classes = [GgdClassParams(1.8, 2.0), GgdClassParams(0.6, 1.0)]
        geometry = [bg, Shape('disc', (rows / 2.0, cols / 2.0, 0.25 * short), 2)]
    elif name == 'group2':
        classes = [GgdClassParams(1.5, 1.0), GgdClassParams(0.8, 10.0)]
        radius = 0.15 * short
        geometry = [bg,
                    Shape('disc', (rows / 2.0, 0.28 * cols, radius), 2),
                    Shape('disc', (rows / 2.0, 0.72 * cols, radius), 2)]
    elif name == 'group3':
        classes = [GgdClassParams(0.5, 1.0), GgdClassParams(1.0, 30.0), GgdClassParams(1.8, 2.0)]
        geometry = [bg,
                    Shape('rectangle', (0.0, 0.0, round(0.2 * rows), cols), 2),
                    Shape('ellipse', (0.45 * rows, 0.5 * cols, 0.15 * rows, 0.3 * cols), 3)]
    elif name in ('oa-sweep', 'oa-sweep-scale'):
        if not ratio >= 1.0:
            raise InvalidParameterError(f"sweep ratio must be >= 1, got {ratio}")
        if name == 'oa-sweep':
            if ratio > 3.0:
                raise InvalidParameterError("shape ratio above 3 leaves the xi support")
            classes = [GgdClassParams(1.0, 20.0), GgdClassParams(ratio, 20.0)]
        else:
            classes = [GgdClassParams(1.0, 20.0), GgdClassParams(1.0, 20.0 * ratio)]
        geometry = [bg, Shape('rectangle', (rows // 2, 0.0, rows - rows // 2, cols), 2)]
    else:
        classes = [IID_PARAMS[name]]
        geometry = [bg]
    default_bsnr = 40.0 if name.startswith('iid-') else 30.0
    return PhantomSpec(dims=(rows, cols), classes=classes, geometry=geometry, seed=seed,
                       bsnr_db=default_bsnr if bsnr_db is None else bsnr_db, name=name)
