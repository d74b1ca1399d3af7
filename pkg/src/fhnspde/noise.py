"""Reproducible lattice noise and stochastic convolutions.

Space-time white noise lives on a uniform lattice over [0, T_end] x the unit
torus.  Every random number is a pure function of (seed, global cell index)
through a counter-based generator, so ensemble members, grid slices, and
re-runs are bit-for-bit reproducible regardless of traversal or chunking.

Mollification happens in two factors, mirroring the separable mollifier:
direct convolution in time, Fourier multiplication by the radial profile
transform in space (which on the torus is automatically the periodised
convolution).  Stochastic convolutions come in two flavours: the heat
semigroup acting mode-by-mode as an exact Ornstein-Uhlenbeck recursion, and
direct space-time convolution with a compactly supported kernel slice stack.
The latter also yields exact discrete covariance predictions, used as the
lattice-adjusted centring constants for Wick powers.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np
from numpy.random import Philox
from scipy.signal import fftconvolve
from scipy.special import j0

from .kernels import MollifiedKernel, MollifierSpec, panel_grid

__all__ = [
    "Lattice",
    "NoiseField",
    "Field",
    "ResolutionError",
    "counter_gaussians",
    "sample_white_noise",
    "mollify_noise",
    "mollifier_transform",
    "radial_fourier",
    "kernel_slice_transforms",
    "stochastic_convolution",
    "heat_convolution",
    "kernel_convolution",
    "slow_channel_convolution",
    "lattice_covariance",
    "lattice_chi_constant",
    "wick_square",
    "wick_cube",
    "save_field",
    "load_field",
]

GENERATOR_ID = "philox4x64-boxmuller-v1"
FORMAT_VERSION = 1


class ResolutionError(ValueError):
    """Mollification scale below what the lattice can carry."""


# ---------------------------------------------------------------------------
# lattice
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lattice:
    """Uniform grid: n_time slices of a d-dimensional n_space^d torus.

    Time slice i covers [i*dt, (i+1)*dt); spatial site j sits at j*dx on the
    unit torus.
    """

    d: int
    n_space: int
    n_time: int
    t_end: float

    def __post_init__(self):
        if self.d not in (1, 2, 3):
            raise ValueError("spatial dimension must be 1, 2, or 3")
        if self.n_space < 2 or self.n_time < 1 or self.t_end <= 0:
            raise ValueError("degenerate lattice")

    @property
    def dt(self) -> float:
        return self.t_end / self.n_time

    @property
    def dx(self) -> float:
        return 1.0 / self.n_space

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n_time,) + (self.n_space,) * self.d

    @property
    def cells(self) -> int:
        return self.n_time * self.n_space ** self.d

    @property
    def cell_volume(self) -> float:
        return self.dt * self.dx ** self.d

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_time)

    def k_magnitudes(self) -> np.ndarray:
        """|k| on the rfftn frequency lattice (integer wavenumbers)."""
        axes = [np.fft.fftfreq(self.n_space, d=self.dx)
                for _ in range(self.d - 1)]
        axes.append(np.fft.rfftfreq(self.n_space, d=self.dx))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.sqrt(sum(np.square(a) for a in mesh))


@dataclass(frozen=True)
class NoiseField:
    """White-noise densities: iid N(0, 1/cell_volume) per cell."""

    lattice: Lattice
    values: np.ndarray
    seed: int
    generator_id: str = GENERATOR_ID

    def checksum(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
        h.update(json.dumps([self.lattice.shape, self.seed,
                             self.generator_id]).encode())
        return h.hexdigest()


@dataclass(frozen=True)
class Field:
    """A deterministic function of some NoiseField on the same lattice."""

    lattice: Lattice
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field contains non-finite values")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def _raw_words(seed: int, start: int, count: int) -> np.ndarray:
    # Philox counts in blocks of four 64-bit words; align to the block
    # containing `start` so the word at global index m never depends on how
    # the request was chunked.
    bitgen = Philox(key=np.uint64(seed))
    block, offset = divmod(start, 4)
    if block:
        bitgen.advance(block)
    return bitgen.random_raw(offset + count)[offset:]


def counter_gaussians(seed: int, start: int, count: int) -> np.ndarray:
    """Standard normals indexed by (seed, position), order-independent.

    Value i consumes raw words 2i and 2i+1 through a Box-Muller map, so any
    contiguous range can be regenerated in isolation.
    """
    w = _raw_words(seed, 2 * start, 2 * count)
    u1 = ((w[0::2] >> np.uint64(11)) + np.uint64(1)) * 2.0 ** -53  # (0, 1]
    u2 = (w[1::2] >> np.uint64(11)) * 2.0 ** -53                   # [0, 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * math.pi * u2)


def sample_white_noise(lattice: Lattice, seed: int) -> NoiseField:
    """Cellwise iid N(0, 1/(dt dx^d)), keyed on the global cell index."""
    sigma = 1.0 / math.sqrt(lattice.cell_volume)
    vals = sigma * counter_gaussians(seed, 0, lattice.cells)
    return NoiseField(lattice=lattice, values=vals.reshape(lattice.shape),
                      seed=seed)


# ---------------------------------------------------------------------------
# radial Fourier transforms
# ---------------------------------------------------------------------------

def radial_fourier(fn: Callable, r_max: float, k: np.ndarray, d: int,
                   n_panels: int = 64, order: int = 8) -> np.ndarray:
    """Transform int f(|x|) e^{-2 pi i k.x} dx of a radial function.

    ``k`` is an array of frequency magnitudes; the quadrature resolves the
    fastest oscillation present.
    """
    k = np.atleast_1d(np.asarray(k, dtype=float))
    k_top = float(np.max(k))
    need = max(n_panels, int(6 * k_top * r_max) + 8)
    g = panel_grid(list(np.linspace(0.0, r_max, need + 1)), order)
    s, w = g.nodes, g.weights
    f = fn(s)
    arg = 2.0 * math.pi * np.outer(k, s)
    if d == 2:
        mat = j0(arg) * (2.0 * math.pi * s * f * w)
    elif d == 3:
        mat = np.sinc(2.0 * np.outer(k, s)) * (4.0 * math.pi * s ** 2 * f * w)
    else:
        mat = np.cos(arg) * (2.0 * f * w)
    return mat.sum(axis=1)


def _unique_eval(fn: Callable, mags: np.ndarray) -> np.ndarray:
    flat = np.round(mags.ravel(), 9)
    uniq, inverse = np.unique(flat, return_inverse=True)
    return fn(uniq)[inverse].reshape(mags.shape)


def mollifier_transform(spec: MollifierSpec, eps: float,
                        k_mags: np.ndarray) -> np.ndarray:
    """Spatial-profile transform at scale eps: rho_eps^x -> rho_hat(eps |k|)."""
    return _unique_eval(
        lambda u: radial_fourier(spec.x_profile, spec.x_radius, u, spec.d),
        eps * k_mags)


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

def _temporal_weights(spec: MollifierSpec, eps: float, dt: float
                      ) -> np.ndarray:
    """Cell averages of the scaled temporal profile.

    Integrating over each dt cell (rather than sampling) keeps the weight
    sum at exactly the profile mass for every eps / dt combination; when the
    profile is narrower than one cell the filter degenerates to the discrete
    identity instead of a mis-normalised spike.
    """
    half = spec.t_halfwidth * eps ** 2
    m = int(math.floor(half / dt + 0.5)) + 1
    cell_edges = dt * (np.arange(-m, m + 2) - 0.5)
    support = np.linspace(-half, half, 33)
    edges = np.unique(np.concatenate([
        cell_edges, support[(support > cell_edges[0])
                            & (support < cell_edges[-1])]]))
    g = panel_grid(list(edges), 6)
    vals = g.weights * spec.scaled_t(g.nodes, eps)
    cells = np.clip(np.round(g.nodes / dt).astype(int) + m, 0, 2 * m)
    out = np.zeros(2 * m + 1)
    np.add.at(out, cells, vals)
    return out


def mollify_noise(xi: NoiseField, eps: float,
                  spec: Optional[MollifierSpec] = None) -> Field:
    """Discrete rho_eps * xi: direct in time, Fourier (periodised) in space."""
    lat = xi.lattice
    if eps < 2.0 * lat.dx:
        raise ResolutionError(
            "eps=%g below the lattice guard 2*dx=%g" % (eps, 2 * lat.dx))
    spec = spec or MollifierSpec(lat.d)
    wt = _temporal_weights(spec, eps, lat.dt)
    shape = (len(wt),) + (1,) * lat.d
    smooth_t = fftconvolve(xi.values, wt.reshape(shape), mode="same", axes=0)
    rho_hat = mollifier_transform(spec, eps, lat.k_magnitudes())
    spectral = np.fft.rfftn(smooth_t, axes=tuple(range(1, lat.d + 1)))
    out = np.fft.irfftn(spectral * rho_hat,
                        s=(lat.n_space,) * lat.d,
                        axes=tuple(range(1, lat.d + 1)))
    return Field(lattice=lat, values=out,
                 meta={"eps": eps, "kind": spec.kind, "seed": xi.seed})


# ---------------------------------------------------------------------------
# stochastic convolutions
# ---------------------------------------------------------------------------

def heat_convolution(forcing: Union[Field, NoiseField]) -> Field:
    """chi(t) = int_0^t e^{(t-s) Laplacian} forcing(s) ds, zero initial data.

    Exact per spatial mode for slice-constant forcing: an OU recursion with
    rates (2 pi |k|)^2.  Output slice i holds chi(i*dt); slice 0 is zero.
    """
    lat = forcing.lattice
    ax = tuple(range(1, lat.d + 1))
    lam = (2.0 * math.pi * lat.k_magnitudes()) ** 2
    decay = np.exp(-lam * lat.dt)
    with np.errstate(invalid="ignore"):
        gain = np.where(lam > 0, -np.expm1(-lam * lat.dt) / np.where(
            lam > 0, lam, 1.0), lat.dt)
    f_hat = np.fft.rfftn(forcing.values, axes=ax)
    out = np.empty(lat.shape)
    acc = np.zeros_like(f_hat[0])
    out[0] = 0.0
    for i in range(1, lat.n_time):
        acc = decay * acc + gain * f_hat[i - 1]
        out[i] = np.fft.irfftn(acc, s=(lat.n_space,) * lat.d, axes=tuple(
            range(0, lat.d)))
    meta = dict(getattr(forcing, "meta", {}))
    meta["convolution"] = "heat"
    return Field(lattice=lat, values=out, meta=meta)


def kernel_slice_transforms(kernel: MollifiedKernel, lattice: Lattice,
                            order: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Sample K(tau_j, .) at slice lags and transform each slice radially.

    Returns (taus, K_hat) with K_hat[j] on the rfftn frequency lattice; the
    torus aliasing of integer frequencies is exactly the periodisation of
    the compactly supported kernel.  The oscillatory quadrature matrix is
    shared across slices.
    """
    t_lo, t_hi = kernel.t_support
    m0 = int(math.floor(t_lo / lattice.dt))
    m1 = int(math.ceil(t_hi / lattice.dt)) - 1
    # lag cell m covers (m dt, (m+1) dt]; midpoint sampling represents the
    # cell average of K against slice-constant noise to second order
    taus = lattice.dt * (np.arange(m0, m1 + 1) + 0.5)
    mags = lattice.k_magnitudes()
    flat = np.round(mags.ravel(), 9)
    uniq, inverse = np.unique(flat, return_inverse=True)
    r_top = kernel.r_support
    k_top = float(uniq[-1])
    need = max(48, int(6 * k_top * r_top) + 8)
    g = panel_grid(list(np.linspace(0.0, r_top, need + 1)), order)
    s, w = g.nodes, g.weights
    d = lattice.d
    if d == 2:
        mat = j0(2.0 * math.pi * np.outer(uniq, s)) * (2.0 * math.pi * s * w)
    elif d == 3:
        mat = np.sinc(2.0 * np.outer(uniq, s)) * (4.0 * math.pi * s ** 2 * w)
    else:
        mat = np.cos(2.0 * math.pi * np.outer(uniq, s)) * (2.0 * w)
    hats = np.zeros((len(taus),) + mags.shape)
    for j, tau in enumerate(taus):
        vals = kernel(tau, s)
        if np.any(vals):
            hats[j] = (mat @ vals)[inverse].reshape(mags.shape)
    return taus, hats


def kernel_convolution(xi: Union[Field, NoiseField],
                       kernel: MollifiedKernel,
                       out_slices: Sequence[int],
                       transforms: Optional[tuple] = None) -> np.ndarray:
    """chi(t_i) = (K * xi)(t_i) by lag-summed Fourier multiplication.

    Noise outside [0, t_end] is taken as zero, so outputs within the kernel's
    time width of either end are boundary-affected.  Returns the stack of
    requested slices.
    """
    lat = xi.lattice
    ax = tuple(range(1, lat.d + 1))
    taus, hats = transforms or kernel_slice_transforms(kernel, lat)
    m0 = int(round(taus[0] / lat.dt - 0.5))
    f_hat = np.fft.rfftn(xi.values, axes=ax)
    out = np.empty((len(out_slices),) + (lat.n_space,) * lat.d)
    for n, i in enumerate(out_slices):
        acc = np.zeros_like(f_hat[0])
        for j in range(len(taus)):
            s = i - 1 - (m0 + j)
            if 0 <= s < lat.n_time:
                acc += hats[j] * f_hat[s]
        out[n] = lat.dt * np.fft.irfftn(acc, s=(lat.n_space,) * lat.d,
                                        axes=tuple(range(0, lat.d)))
    return out


def stochastic_convolution(xi: Union[Field, NoiseField],
                           kernel="heat",
                           out_slices: Optional[Sequence[int]] = None):
    """Dispatch: "heat" for the semigroup recursion, a kernel object for
    direct space-time convolution (requires ``out_slices``)."""
    if isinstance(kernel, str):
        if kernel != "heat":
            raise ValueError("unknown convolution kind: %r" % kernel)
        return heat_convolution(xi)
    if out_slices is None:
        raise ValueError("kernel convolution needs explicit output slices")
    return kernel_convolution(xi, kernel, out_slices)


def slow_channel_convolution(chi: Field, Q: Callable) -> Field:
    """chi^Q(t) = int_0^t Q(t-s) chi(s) ds along the time axis (Q causal).

    Trapezoid-corrected rectangle sum: second order for slice-sampled chi.
    """
    lat = chi.lattice
    lags = lat.dt * np.arange(lat.n_time)
    qv = np.asarray(Q(lags), dtype=float)
    wq = lat.dt * qv
    shape = (len(wq),) + (1,) * lat.d
    full = fftconvolve(chi.values, wq.reshape(shape), mode="full", axes=0)
    out = full[:lat.n_time]
    out = out - 0.5 * lat.dt * qv[0] * chi.values
    out = out - 0.5 * lat.dt * qv.reshape(shape) * chi.values[0]
    meta = dict(chi.meta)
    meta["convolution"] = "slow-channel"
    return Field(lattice=lat, values=out, meta=meta)


# ---------------------------------------------------------------------------
# exact lattice covariances and Wick powers
# ---------------------------------------------------------------------------

def lattice_covariance(kernel: MollifiedKernel, lattice: Lattice,
                       lag_slices: int = 0,
                       space_lag: Optional[Sequence[int]] = None,
                       transforms: Optional[tuple] = None) -> float:
    """Exact E[chi(t, x) chi(t + lag, x + z)] for chi = K * xi on the lattice.

    Stationary value (all boundary slices available); the Fourier machinery
    here is the same one `kernel_convolution` applies to samples, so the
    prediction matches the simulated field identically.
    """
    lat = lattice
    taus, hats = transforms or kernel_slice_transforms(kernel, lat)
    n_half = lat.n_space // 2 + 1
    # weights of the rfftn representation: conjugate-pair modes count twice
    mult = np.full(hats.shape[1:], 2.0)
    sl = [slice(None)] * (lat.d - 1) + [0]
    mult[tuple(sl)] = 1.0
    if lat.n_space % 2 == 0:
        sl[-1] = n_half - 1
        mult[tuple(sl)] = 1.0
    if space_lag is None:
        phase = np.ones(hats.shape[1:])
    else:
        axes = [np.fft.fftfreq(lat.n_space, d=lat.dx)
                for _ in range(lat.d - 1)]
        axes.append(np.fft.rfftfreq(lat.n_space, d=lat.dx))
        mesh = np.meshgrid(*axes, indexing="ij")
        ang = sum(2.0 * math.pi * m * (l * lat.dx)
                  for m, l in zip(mesh, space_lag))
        phase = np.cos(ang)
    total = 0.0
    n = len(taus)
    for j in range(n):
        jj = j + lag_slices
        if 0 <= jj < n:
            total += float(np.sum(mult * phase * hats[j] * hats[jj]))
    return lat.dt * total


def lattice_chi_constant(kernel: MollifiedKernel, lattice: Lattice,
                         transforms: Optional[tuple] = None) -> float:
    """Lattice-adjusted Var(chi): the centring constant for Wick powers."""
    return lattice_covariance(kernel, lattice, 0, None, transforms)


def wick_square(chi: np.ndarray, c: float) -> np.ndarray:
    """Second Wick power: chi^2 - c with the matched variance constant."""
    return np.square(chi) - c


def wick_cube(chi: np.ndarray, c: float) -> np.ndarray:
    """Third Wick power: chi^3 - 3 c chi."""
    return chi ** 3 - 3.0 * c * chi


# ---------------------------------------------------------------------------
# field files
# ---------------------------------------------------------------------------

def save_field(path, obj: Union[Field, NoiseField]) -> Path:
    """Flat little-endian float64, row-major, time slowest; sidecar manifest."""
    base = Path(path)
    bin_path = base.with_suffix(".bin")
    arr = np.ascontiguousarray(obj.values, dtype="<f8")
    bin_path.write_bytes(arr.tobytes())
    lat = obj.lattice
    manifest = {
        "format_version": FORMAT_VERSION,
        "dims": list(obj.values.shape),
        "d": lat.d,
        "n_space": lat.n_space,
        "n_time": lat.n_time,
        "t_end": lat.t_end,
        "dt": lat.dt,
        "dx": lat.dx,
        "seed": getattr(obj, "seed", None),
        "generator_id": getattr(obj, "generator_id", None),
        "meta": getattr(obj, "meta", {}),
        "eps": getattr(obj, "meta", {}).get("eps"),
    }
    base.with_suffix(".json").write_text(json.dumps(manifest, indent=2))
    return bin_path


def load_field(path) -> Field:
    base = Path(path)
    manifest = json.loads(base.with_suffix(".json").read_text())
    if manifest["format_version"] != FORMAT_VERSION:
        raise ValueError("unsupported field format version")
    vals = np.frombuffer(base.with_suffix(".bin").read_bytes(),
                         dtype="<f8").reshape(manifest["dims"])
    lat = Lattice(d=manifest["d"], n_space=manifest["n_space"],
                  n_time=manifest["n_time"], t_end=manifest["t_end"])
    return Field(lattice=lat, values=vals.copy(),
                 meta=manifest.get("meta", {}))
