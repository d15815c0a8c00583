"""Spectral basis functions, the polyenergetic forward model and the weighted data term."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .geometry import ImageGrid, SystemMatrix

log = logging.getLogger(__name__)

ELECTRON_REST_KEV = 510.95
ENERGY_GRID = np.arange(20.0, 141.0, 1.0)  # keV


def _kn_series_coefficients(n_terms: int) -> np.ndarray:
    """Taylor coefficients of f_KN in alpha, from exact rational arithmetic.

    Expands 1/(1+2a), 1/(1+2a)^2 and log(1+2a)/a term by term and combines
    them the same way as the closed form.
    """
    n = n_terms + 2
    inv = [Fraction(-2) ** k for k in range(n)]
    inv2 = [(k + 1) * Fraction(-2) ** k for k in range(n)]
    log_a = [Fraction((-1) ** k * 2 ** (k + 1), k + 1) for k in range(n)]
    # 2(1+a)/(1+2a) - log(1+2a)/a starts at a^2.
    bracket = [2 * inv[k] + (2 * inv[k - 1] if k else 0) - log_a[k] for k in range(n)][2:]
    out = []
    for k in range(n_terms):
        first = bracket[k] + (bracket[k - 1] if k else 0)
        last = inv2[k] + (3 * inv2[k - 1] if k else 0)
        out.append(float(first + log_a[k] / 2 - last))
    return np.array(out)


# The closed form cancels catastrophically as alpha -> 0 (relative error
# ~1e-16 / alpha^3); below this switch point the series is used instead.
_KN_SERIES_MAX_ALPHA = 0.05
_KN_SERIES = _kn_series_coefficients(18)


def klein_nishina(E):
    """Klein-Nishina energy dependence of Compton scatter (unitless).

    ``E`` in keV, scalar or array. Small ``alpha = E / 510.95`` uses a
    Taylor series because the closed form loses precision there.
    """
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        raise ValueError("energy must be positive")
    a = E / ELECTRON_REST_KEV
    small = a < _KN_SERIES_MAX_ALPHA
    with np.errstate(divide="ignore", invalid="ignore"):
        l2 = np.log1p(2 * a)
        closed = ((1 + a) / a**2 * (2 * (1 + a) / (1 + 2 * a) - l2 / a)
                  + l2 / (2 * a) - (1 + 3 * a) / (1 + 2 * a) ** 2)
    series = np.polynomial.polynomial.polyval(np.where(small, a, 0.0), _KN_SERIES)
    out = np.where(small, series, closed)
    return float(out) if out.ndim == 0 else out


def photoelectric_basis(E):
    """Photoelectric energy dependence ``E**-3`` (E in keV)."""
    E = np.asarray(E, dtype=float)
    if np.any(E <= 0):
        raise ValueError("energy must be positive")
    out = E ** -3.0
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class Spectrum:
    """Normalised discrete source spectrum on a keV grid."""

    energies: np.ndarray
    weights: np.ndarray
    name: str = ""

    def __post_init__(self):
        e = np.asarray(self.energies, dtype=float).reshape(-1)
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if e.shape != w.shape or e.size == 0:
            raise ValueError("energies and weights must be non-empty and the same length")
        if np.any(e <= 0) or np.any(np.diff(e) <= 0):
            raise ValueError("energies must be positive and strictly increasing")
        if np.any(w < 0):
            raise ValueError("spectrum weights must be non-negative")
        total = w.sum()
        if not total > 0:
            raise ValueError("spectrum has zero total weight")
        if abs(total - 1.0) > 1e-12:
            w = w / total
        object.__setattr__(self, "energies", e)
        object.__setattr__(self, "weights", w)

    def support(self) -> "Spectrum":
        """Drop zero-weight bins; they never contribute to the forward model."""
        nz = self.weights > 0
        return Spectrum(self.energies[nz], self.weights[nz], self.name)

    def mean_basis(self) -> tuple[float, float]:
        """Spectrum-averaged (f_KN, f_p), i.e. the zero-attenuation sensitivities."""
        return (float(self.weights @ klein_nishina(self.energies)),
                float(self.weights @ photoelectric_basis(self.energies)))


def aluminum_transmission(E, thickness_cm: float):
    # Lazy import: phantom depends on this module for the basis functions.
    from .phantom import material_coefficients
    al = material_coefficients("aluminum")
    return np.exp(-thickness_cm * (al.c * klein_nishina(E) + al.p * photoelectric_basis(E)))


def kramers_spectrum(kvp: float, energies=ENERGY_GRID, filter_mm_al: float = 2.5,
                     name: str = "") -> Spectrum:
    """Kramers-law bremsstrahlung photon spectrum with aluminium pre-filtration.

    Photon number per bin is ``(kvp - E) / E`` for ``E < kvp``, attenuated by
    ``filter_mm_al`` of aluminium.
    """
    E = np.asarray(energies, dtype=float)
    shape = np.clip(kvp - E, 0.0, None) / E
    if filter_mm_al > 0:
        shape = shape * aluminum_transmission(E, filter_mm_al / 10.0)
    return Spectrum(E, shape, name or f"{kvp:g}kVp")


def default_spectra() -> tuple[Spectrum, Spectrum]:
    """Low (95 kVp) and high (130 kVp) tube settings."""
    return kramers_spectrum(95.0, name="low"), kramers_spectrum(130.0, name="high")


def load_spectrum(path, name: str = "") -> Spectrum:
    """Read a two-column ``energy_keV weight`` text file ('#' comments)."""
    data = np.loadtxt(path, comments="#", ndmin=2)
    if data.shape[1] != 2:
        raise ValueError(f"{path}: expected two columns, found {data.shape[1]}")
    total = data[:, 1].sum()
    if abs(total - 1.0) > 1e-6:
        log.warning("%s: spectrum weights sum to %.6g, renormalising", path, total)
    return Spectrum(data[:, 0], data[:, 1], name or Path(path).stem)


def save_spectrum(spec: Spectrum, path) -> None:
    np.savetxt(path, np.column_stack([spec.energies, spec.weights]),
               header="energy_keV weight", fmt="%.10g")


@dataclass
class ImagePair:
    """Compton (cm^-1) and photoelectric (keV cm^-1) images on one grid."""

    grid: ImageGrid
    c: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).reshape(self.grid.shape)
        self.p = np.asarray(self.p, dtype=float).reshape(self.grid.shape)
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.p))):
            raise ValueError("image pair contains non-finite values")

    @classmethod
    def zeros(cls, grid: ImageGrid) -> "ImagePair":
        return cls(grid, np.zeros(grid.shape), np.zeros(grid.shape))

    def theta(self) -> np.ndarray:
        """Stacked parameter vector [c; p]."""
        return np.concatenate([self.c.ravel(), self.p.ravel()])

    def copy(self) -> "ImagePair":
        return ImagePair(self.grid, self.c.copy(), self.p.copy())


@dataclass(frozen=True)
class NoiseModel:
    """Poisson counting noise plus Gaussian electronics noise (std in counts)."""

    sigma_e: float = 0.0
    seed: int | None = 0

    def __post_init__(self):
        if self.sigma_e < 0:
            raise ValueError("sigma_e must be >= 0")

    @classmethod
    def from_snr_db(cls, y0: float, snr_db: float, seed: int | None = 0) -> "NoiseModel":
        """Electronics noise with ``20 log10(y0 / sigma_e) = snr_db``."""
        return cls(y0 * 10.0 ** (-snr_db / 20.0), seed)


def log_transform(counts, y0: float):
    """Return ``(m, valid)`` with ``m = -ln(counts / y0)``; zero counts are masked."""
    if not y0 > 0:
        raise ValueError("y0 must be positive")
    counts = np.asarray(counts, dtype=float)
    valid = counts > 0
    m = np.zeros_like(counts)
    m[valid] = -np.log(counts[valid] / y0)
    return m, valid


@dataclass
class DualSinogram:
    """Low/high energy measurements for M rays.

    Counts are the raw data; log-domain values and Sauer-Bouman weights
    (the measured counts, zero where a ray is masked) are derived from them.
    """

    counts_low: np.ndarray
    counts_high: np.ndarray
    y0: float
    m_low: np.ndarray = field(init=False)
    m_high: np.ndarray = field(init=False)
    w_low: np.ndarray = field(init=False)
    w_high: np.ndarray = field(init=False)

    def __post_init__(self):
        self.counts_low = np.asarray(self.counts_low, dtype=float).reshape(-1)
        self.counts_high = np.asarray(self.counts_high, dtype=float).reshape(-1)
        if self.counts_low.shape != self.counts_high.shape:
            raise ValueError("low and high sinograms differ in length")
        if np.any(self.counts_low < 0) or np.any(self.counts_high < 0):
            raise ValueError("counts must be non-negative")
        self.m_low, ok_l = log_transform(self.counts_low, self.y0)
        self.m_high, ok_h = log_transform(self.counts_high, self.y0)
        self.w_low = np.where(ok_l, self.counts_low, 0.0)
        self.w_high = np.where(ok_h, self.counts_high, 0.0)

    @property
    def n_rays(self) -> int:
        return self.counts_low.size

    @property
    def valid(self) -> np.ndarray:
        """Rays usable by both energies."""
        return (self.counts_low > 0) & (self.counts_high > 0)

    def take_rays(self, idx) -> "DualSinogram":
        return DualSinogram(self.counts_low[idx], self.counts_high[idx], self.y0)


def _line_integrals(A: SystemMatrix, c, p):
    return A.forward(np.ravel(c)), A.forward(np.ravel(p))


def _attenuation_terms(spec: Spectrum, lc, lp):
    """Per-ray, per-bin products ``S(E) exp(-f_KN lc - f_p lp)`` over the spectrum support."""
    s = spec.support()
    fk = klein_nishina(s.energies)
    fp = photoelectric_basis(s.energies)
    expo = -(np.multiply.outer(lc, fk) + np.multiply.outer(lp, fp))
    return s.weights * np.exp(expo), fk, fp


def expected_transmission(spec: Spectrum, lc, lp) -> np.ndarray:
    """``sum_E S(E) exp(-f_KN(E) lc - f_p(E) lp)`` for line integrals lc, lp."""
    terms, _, _ = _attenuation_terms(spec, np.asarray(lc, float), np.asarray(lp, float))
    return terms.sum(axis=-1)


def forward_expected_counts(A: SystemMatrix, img: ImagePair, spec: Spectrum, y0: float) -> np.ndarray:
    """Mean detected counts per ray for one source spectrum."""
    if not y0 > 0:
        raise ValueError("y0 must be positive")
    if img.grid.n_pixels != A.n_pixels:
        raise ValueError(f"image has {img.grid.n_pixels} pixels, matrix expects {A.n_pixels}")
    lc, lp = _line_integrals(A, img.c, img.p)
    return y0 * expected_transmission(spec, lc, lp)


def model_log_measurements(spec: Spectrum, lc, lp):
    """Model ``m = -ln(sum S exp(...))`` and its derivatives w.r.t. lc and lp.

    The derivatives are the spectrum-and-attenuation weighted means of
    f_KN and f_p along each ray.
    """
    terms, fk, fp = _attenuation_terms(spec, np.asarray(lc, float), np.asarray(lp, float))
    total = terms.sum(axis=-1)
    m = -np.log(total)
    dm_dc = (terms @ fk) / total
    dm_dp = (terms @ fp) / total
    return m, dm_dc, dm_dp


def simulate_measurements(expected, noise: NoiseModel) -> np.ndarray:
    """Poisson draw around ``expected`` plus Gaussian electronics noise, clamped at 0."""
    expected = np.asarray(expected, dtype=float)
    if np.any(expected < 0):
        raise ValueError("expected counts must be non-negative")
    rng = np.random.default_rng(noise.seed)
    y = rng.poisson(expected).astype(float)
    if noise.sigma_e > 0:
        y += rng.normal(0.0, noise.sigma_e, size=expected.shape)
    return np.maximum(y, 0.0)


def simulate_dual_scan(A: SystemMatrix, truth: ImagePair, spec_low: Spectrum, spec_high: Spectrum,
                       y0: float, noise: NoiseModel | None) -> DualSinogram:
    """Expected counts for both spectra, optionally with noise.

    The two energies draw from independent child streams of ``noise.seed``.
    """
    mean_l = forward_expected_counts(A, truth, spec_low, y0)
    mean_h = forward_expected_counts(A, truth, spec_high, y0)
    if noise is None:
        return DualSinogram(mean_l, mean_h, y0)
    seq_l, seq_h = np.random.SeedSequence(noise.seed).spawn(2)
    y_l = simulate_measurements(mean_l, NoiseModel(noise.sigma_e, seq_l))
    y_h = simulate_measurements(mean_h, NoiseModel(noise.sigma_e, seq_h))
    return DualSinogram(y_l, y_h, y0)


class DataFidelity:
    """Weighted least-squares data term over both energies.

    ``0.5 * sum_e sum_i w_ei (y_ei - m_ei(c, p))**2``. Jacobian products
    are formed on the fly as ``diag(per-ray factor) @ A`` and never stored.
    """

    def __init__(self, A: SystemMatrix, sino: DualSinogram, spec_low: Spectrum, spec_high: Spectrum):
        if sino.n_rays != A.n_rays:
            raise ValueError(f"sinogram has {sino.n_rays} rays, matrix expects {A.n_rays}")
        self.A = A
        self.specs = (spec_low.support(), spec_high.support())
        self.y = (sino.m_low, sino.m_high)
        self.w = (sino.w_low, sino.w_high)
        self._A2 = None

    def linearize(self, c, p) -> "Linearization":
        lc, lp = _line_integrals(self.A, c, p)
        parts = []
        for spec, y, w in zip(self.specs, self.y, self.w):
            m, gc, gp = model_log_measurements(spec, lc, lp)
            parts.append((y - m, gc, gp, w))
        return Linearization(self, parts)

    def value(self, c, p) -> float:
        return self.linearize(c, p).value

    def __call__(self, c, p):
        """Return ``(value, grad_c, grad_p)``."""
        lin = self.linearize(c, p)
        gc, gp = lin.gradient()
        return lin.value, gc, gp

    @property
    def A_squared(self):
        if self._A2 is None:
            self._A2 = self.A.squared()
        return self._A2


class Linearization:
    """Residuals and per-ray sensitivities of the data term at one (c, p)."""

    def __init__(self, term: DataFidelity, parts):
        self.term = term
        self.parts = parts  # [(residual, dm/dlc, dm/dlp, weight)] per energy
        self.value = 0.5 * sum(float(np.sum(w * r * r)) for r, _, _, w in parts)

    def _sens(self, block: str):
        return [(gc if block == "c" else gp) for _, gc, gp, _ in self.parts]

    def gradient(self, block: str | None = None):
        """Gradient w.r.t. c and/or p: ``-A^T sum_e w r dm/dl``."""
        A = self.term.A
        out = []
        for b in ("c", "p") if block is None else (block,):
            acc = sum(-w * r * g for (r, _, _, w), g in zip(self.parts, self._sens(b)))
            out.append(A.adjoint(acc))
        return tuple(out) if block is None else out[0]

    def gauss_newton_matvec(self, block: str, x: np.ndarray) -> np.ndarray:
        """``J_b^T W J_b x`` in two steps: ray-space product then back-projection."""
        A = self.term.A
        ax = A.forward(x)
        acc = sum(w * g * g * ax for (_, _, _, w), g in zip(self.parts, self._sens(block)))
        return A.adjoint(acc)

    def gauss_newton_diagonal(self, block: str) -> np.ndarray:
        A2 = self.term.A_squared
        acc = sum(w * g * g for (_, _, _, w), g in zip(self.parts, self._sens(block)))
        return A2.T @ acc


def data_fidelity(theta: ImagePair, sino: DualSinogram, A: SystemMatrix,
                  spec_low: Spectrum, spec_high: Spectrum):
    """Value and gradients (image-shaped) of the weighted data term."""
    value, gc, gp = DataFidelity(A, sino, spec_low, spec_high)(theta.c, theta.p)
    shape = theta.grid.shape
    return value, gc.reshape(shape), gp.reshape(shape)


def effective_attenuation_scale(spec: Spectrum) -> float:
    """Spectrum-averaged f_KN, used to turn an FBP of -ln(Y/Y0) into a Compton estimate."""
    return spec.mean_basis()[0]


__all__ = [
    "ELECTRON_REST_KEV", "ENERGY_GRID", "klein_nishina", "photoelectric_basis", "Spectrum",
    "kramers_spectrum", "default_spectra", "load_spectrum", "save_spectrum", "ImagePair",
    "NoiseModel", "DualSinogram", "log_transform", "forward_expected_counts",
    "model_log_measurements", "expected_transmission", "simulate_measurements",
    "simulate_dual_scan", "DataFidelity", "data_fidelity", "effective_attenuation_scale",
]
