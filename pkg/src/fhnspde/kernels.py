"""Numerical kernels: truncated heat kernel, mollification, constants.

Geometry conventions.  Space-time points are (t, x) with parabolic gauge
q(z) = |x|^2 + |t|; all spatial dependence is radial, so every kernel is
represented by its profile on a graded (t, r) tensor grid built from
Gauss-Legendre panels refined geometrically toward the singular scales.

The truncated kernel agrees with the heat kernel on the inner region
{q <= inner}, is supported in {q <= outer, t > 0}, and carries smooth annulus
corrections making the moments against {1, t, |x|^2} vanish exactly (degree-2
parabolic renormalisability).  Mollification is by a separable compactly
supported bump (or truncated Gaussian for cross-checks) in two passes: a 1-d
convolution in t, then a radial convolution in x.  The slow-channel kernel is
a time convolution against an exponential-decay weight, tapered to zero at a
finite horizon.

Constants delivered: C1(eps) = int K_eps^2, the correlation functions
Q0, Q1, Q2 (eps-mollified, at the origin and as space-time functions),
C2(eps) = 2 int K * Q0^2, and the kernel integrals Iij = int K * Qi * Qj.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.special import gamma as gamma_fn

__all__ = [
    "heat_kernel",
    "heat_l2",
    "sphere_area",
    "Grid1D",
    "panel_grid",
    "geometric_edges",
    "radial_integral",
    "RadialProfile",
    "radial_convolve",
    "MollifierSpec",
    "TruncatedKernel",
    "build_truncated_kernel",
    "kernel_moments",
    "KernelConstructionError",
    "Resolution",
    "MollifiedKernel",
    "mollify_kernel",
    "g_eps_squared",
    "kq_exact",
    "kq_kernel",
    "ou_weight",
    "matrix_weight",
    "smooth_taper",
    "correlate",
    "KernelConstants",
    "kernel_constants",
    "CounterTerms",
    "assemble_C",
    "BoundCheck",
    "verify_appendix_bounds",
]


# ---------------------------------------------------------------------------
# Closed forms
# ---------------------------------------------------------------------------

def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2.0) / gamma_fn(d / 2.0)


def heat_kernel(t, r, d: int):
    """G(t, x) = (4 pi t)^(-d/2) exp(-r^2 / 4t) for t > 0, else 0."""
    t = np.asarray(t, dtype=float)
    r = np.asarray(r, dtype=float)
    out = np.zeros(np.broadcast(t, r).shape)
    pos = t > 0
    tp = np.where(pos, t, 1.0)
    np.copyto(out, (4.0 * math.pi * tp) ** (-d / 2.0)
              * np.exp(-np.square(r) / (4.0 * tp)), where=pos)
    return out


def heat_l2(t: float, d: int) -> float:
    """int G(t, x)^2 dx = (8 pi t)^(-d/2)  (exact)."""
    return (8.0 * math.pi * t) ** (-d / 2.0)


# ---------------------------------------------------------------------------
# Graded quadrature grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Grid1D:
    nodes: np.ndarray
    weights: np.ndarray

    def integrate(self, vals: np.ndarray, axis: int = -1) -> np.ndarray:
        return np.tensordot(vals, self.weights, axes=([axis], [0])) \
            if vals.ndim > 1 else float(vals @ self.weights)


def geometric_edges(lo: float, hi: float, h_min: float,
                    ratio: float = 2.0) -> np.ndarray:
    """Panel edges on [lo, hi] refined geometrically toward lo."""
    if hi <= lo:
        raise ValueError("empty interval")
    edges = [lo]
    h = min(h_min, hi - lo)
    x = lo
    while x + h < hi:
        x += h
        edges.append(x)
        h *= ratio
    edges.append(hi)
    return np.array(edges)


def panel_grid(edges: Sequence[float], order: int = 8) -> Grid1D:
    """Composite Gauss-Legendre rule over consecutive panels."""
    xg, wg = leggauss(order)
    nodes, weights = [], []
    edges = np.asarray(edges, dtype=float)
    for a, b in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (a + b), 0.5 * (b - a)
        nodes.append(mid + half * xg)
        weights.append(half * wg)
    return Grid1D(np.concatenate(nodes), np.concatenate(weights))


def _two_sided_edges(lo: float, hi: float, h_min: float,
                     ratio: float = 2.0) -> np.ndarray:
    """Edges on [lo, hi] (lo < 0 < hi) refined toward 0 from both sides."""
    left = -geometric_edges(0.0, -lo, h_min, ratio)[::-1]
    right = geometric_edges(0.0, hi, h_min, ratio)
    return np.concatenate([left[:-1], right])


def radial_integral(vals: np.ndarray, grid: Grid1D, d: int) -> float:
    """int f(|x|) dx over R^d for a radial profile sampled on the grid."""
    return float(sphere_area(d)
                 * np.sum(grid.weights * grid.nodes ** (d - 1) * vals))


# ---------------------------------------------------------------------------
# Mollifiers
# ---------------------------------------------------------------------------

def _bump_norm_x(d: int) -> float:
    # int_{|x| <= 1/2} (1 - 4 |x|^2)^4 dx = pi^(d/2) * 4! / (2^d Gamma(d/2+5))
    return math.pi ** (d / 2.0) * 24.0 / (2 ** d * gamma_fn(d / 2.0 + 5))


@dataclass(frozen=True)
class MollifierSpec:
    """Separable space-time mollifier on the unit parabolic cylinder.

    kind = "bump": rho(t, x) = c_t (1 - 16 t^2)^4_+ . c_x (1 - 4 |x|^2)^4_+,
    supported in |t| <= 1/4, |x| <= 1/2, C^3, integral one in each factor.
    kind = "gauss": truncated Gaussians on the same support (the truncation
    tails are ~1e-9 for the default widths), for closed-form cross-checks.
    The scaled family is rho_eps(t, x) = eps^-(d+2) rho(t/eps^2, x/eps).
    """

    d: int
    kind: str = "bump"
    gauss_sigma_t: float = 0.05
    gauss_sigma_x: float = 0.09

    def __post_init__(self) -> None:
        if self.kind not in ("bump", "gauss"):
            raise ValueError(f"unknown mollifier kind {self.kind!r}")

    @property
    def t_halfwidth(self) -> float:
        return 0.25

    @property
    def x_radius(self) -> float:
        return 0.5

    def t_profile(self, tau) -> np.ndarray:
        tau = np.asarray(tau, dtype=float)
        if self.kind == "bump":
            core = np.clip(1.0 - 16.0 * tau ** 2, 0.0, None) ** 4
            return (315.0 / 64.0) * core
        core = np.where(np.abs(tau) <= self.t_halfwidth,
                        np.exp(-tau ** 2 / (2 * self.gauss_sigma_t ** 2)), 0.0)
        norm = self._gauss_norm_1d(self.gauss_sigma_t, self.t_halfwidth)
        return core / norm

    def x_profile(self, s) -> np.ndarray:
        """Radial spatial factor, normalised so its R^d integral is one."""
        s = np.asarray(s, dtype=float)
        if self.kind == "bump":
            core = np.clip(1.0 - 4.0 * s ** 2, 0.0, None) ** 4
            return core / _bump_norm_x(self.d)
        core = np.where(np.abs(s) <= self.x_radius,
                        np.exp(-s ** 2 / (2 * self.gauss_sigma_x ** 2)), 0.0)
        grid = panel_grid(np.linspace(0, self.x_radius, 40), 8)
        norm = radial_integral(
            np.exp(-grid.nodes ** 2 / (2 * self.gauss_sigma_x ** 2)),
            grid, self.d)
        return core / norm

    @staticmethod
    def _gauss_norm_1d(sigma: float, half: float) -> float:
        from scipy.special import erf
        return sigma * math.sqrt(2 * math.pi) * erf(half / (sigma * math.sqrt(2)))

    def scaled_t(self, tau, eps: float) -> np.ndarray:
        return self.t_profile(np.asarray(tau) / eps ** 2) / eps ** 2

    def scaled_x(self, s, eps: float) -> np.ndarray:
        return self.x_profile(np.asarray(s) / eps) / eps ** self.d


# ---------------------------------------------------------------------------
# Truncated heat kernel with vanishing moments
# ---------------------------------------------------------------------------

def _smoothstep_c3(s) -> np.ndarray:
    """C^3 monotone step: 0 at 0, 1 at 1 (35 s^4 - 84 s^5 + 70 s^6 - 20 s^7)."""
    s = np.clip(np.asarray(s, dtype=float), 0.0, 1.0)
    return s ** 4 * (35.0 - 84.0 * s + 70.0 * s ** 2 - 20.0 * s ** 3)


@dataclass(frozen=True)
class TruncatedKernel:
    """K(t, r): heat kernel on the inner region, compact support, flat moments.

    Callable with numpy broadcasting.  ``bump_coeffs`` weight the annulus
    shapes {1, t, r^2}; ``moment_residuals`` are the achieved moments against
    the constrained monomials (quadrature-exact zeros).
    """

    d: int
    zeta: int = 2
    inner: float = 0.5
    outer: float = 1.0
    bump_coeffs: tuple[float, ...] = ()
    moment_residuals: tuple[float, ...] = ()

    def cutoff(self, q) -> np.ndarray:
        s = (np.asarray(q, dtype=float) - self.inner) / (self.outer - self.inner)
        return 1.0 - _smoothstep_c3(s)

    def annulus_bump(self, q) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        mid = (q - self.inner) * (self.outer - q)
        width = (self.outer - self.inner) / 2.0
        core = np.clip(mid, 0.0, None) / width ** 2
        return core ** 4

    def _bump_shapes(self, t, r) -> list[np.ndarray]:
        q = np.square(r) + np.abs(t)
        base = self.annulus_bump(q) * (np.asarray(t) > 0)
        shapes = [base]
        if self.zeta >= 2:
            shapes += [base * t, base * np.square(r)]
        return shapes

    def __call__(self, t, r) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        q = np.square(r) + np.abs(t)
        out = heat_kernel(t, r, self.d) * self.cutoff(q)
        for c, shape in zip(self.bump_coeffs, self._bump_shapes(t, r)):
            out = out + c * shape
        return np.where((t > 0) & (q < self.outer), out, 0.0)

    def remainder(self, t, r) -> np.ndarray:
        """The smooth leftover R = G - K (vanishes on the inner region)."""
        return heat_kernel(t, r, self.d) - self(t, r)


class KernelConstructionError(RuntimeError):
    """Moment cancellation failed; carries the achieved residuals."""

    def __init__(self, residuals: tuple[float, ...], tol: float):
        self.residuals = residuals
        self.tol = tol
        super().__init__(
            "moment residuals %s exceed tolerance %.1e" % (
                ", ".join("%.3e" % v for v in residuals), tol))


def _moment_monomials(zeta: int) -> list[Callable]:
    mono = [lambda t, r: np.ones_like(np.broadcast_to(t * r, np.shape(t * r)))]
    if zeta >= 2:
        mono += [lambda t, r: t + 0 * r, lambda t, r: np.square(r) + 0 * t]
    return mono


def _insert_edges(edges: Sequence[float], points: Iterable[float],
                  eps: float = 1e-12) -> list[float]:
    out = sorted(edges)
    for p in points:
        if out[0] + eps < p < out[-1] - eps and \
                min(abs(p - e) for e in out) > eps:
            out.append(p)
    return sorted(out)


def _row_r_grid(t: float, r_top: float, order: int = 10,
                n_core: int = 6, n_tail: int = 6,
                breaks: Iterable[float] = ()) -> Grid1D:
    """Radial panels for one t slice: resolve the width-sqrt(t) heat core,
    then the O(1) cutoff annulus.  ``breaks`` are radii of limited
    integrand smoothness; panels never straddle them."""
    cut = min(6.0 * math.sqrt(max(t, 1e-300)), r_top)
    edges = list(np.linspace(0.0, cut, n_core + 1))
    if cut < r_top:
        edges += list(np.linspace(cut, r_top, n_tail + 1)[1:])
    return panel_grid(_insert_edges(edges, breaks), order)


def kernel_moments(kernel: TruncatedKernel, order: int = 9,
                   t_min: float = 1e-10, ratio: float = 1.5,
                   n_core: int = 8) -> tuple[float, ...]:
    """Moments of K against the constrained monomials, row-wise quadrature.

    Defaults deliberately differ from the construction grid, so the result is
    an independent estimate of the continuum moments.
    """
    monos = _moment_monomials(kernel.zeta)
    return _kernel_moments(lambda t, r: kernel(t, r), kernel.d, kernel.outer,
                           monos, order, t_min, ratio, n_core, kernel.inner)


def _kernel_moments(func: Callable, d: int, outer: float,
                    monos: Sequence[Callable], order: int, t_min: float,
                    ratio: float, n_core: int,
                    inner: float) -> tuple[float, ...]:
    t_edges = _insert_edges(geometric_edges(0.0, outer, t_min, ratio), [inner])
    tg = panel_grid(t_edges, order)
    r_top = math.sqrt(outer)
    out = np.zeros(len(monos))
    for t, wt in zip(tg.nodes, tg.weights):
        breaks = [math.sqrt(v - t) for v in (inner, outer) if v > t]
        rg = _row_r_grid(t, r_top, order, n_core, breaks=breaks)
        shell = sphere_area(d) * rg.weights * rg.nodes ** (d - 1)
        vals = func(np.full_like(rg.nodes, t), rg.nodes)
        for j, m in enumerate(monos):
            out[j] += wt * float(shell @ (vals * m(t, rg.nodes)))
    return tuple(float(v) for v in out)


def build_truncated_kernel(d: int, zeta: int = 2, inner: float = 0.5,
                           outer: float = 1.0,
                           tol: float = 1e-6) -> TruncatedKernel:
    """Solve the annulus-correction weights for exactly vanishing moments.

    Raises :class:`KernelConstructionError` when the achieved residuals
    exceed ``tol``.
    """
    if zeta not in (0, 1, 2):
        raise ValueError("supported moment degrees: 0, 1, 2")
    raw = TruncatedKernel(d=d, zeta=zeta, inner=inner, outer=outer)
    monos = _moment_monomials(zeta)

    def base(t, r):
        return heat_kernel(t, r, d) * raw.cutoff(np.square(r) + np.abs(t))

    shape_funcs = [
        (lambda t, r, i=i: raw._bump_shapes(t, r)[i])
        for i in range(len(raw._bump_shapes(np.array(0.3), np.array(0.3))))
    ]
    A = np.array([
        _kernel_moments(sh, d, outer, monos, 10, 1e-9, 1.8, 6, inner)
        for sh in shape_funcs
    ]).T
    g = np.array(_kernel_moments(base, d, outer, monos, 10, 1e-9, 1.8, 6, inner))
    coeffs = np.linalg.solve(A, -g)
    kernel = replace(raw, bump_coeffs=tuple(coeffs))
    residuals = kernel_moments(kernel)
    if max(abs(v) for v in residuals) > tol:
        raise KernelConstructionError(residuals, tol)
    return replace(kernel, moment_residuals=residuals)


# ---------------------------------------------------------------------------
# Radial convolution
# ---------------------------------------------------------------------------

class RadialProfile:
    """Radial function samples with cached splines for convolution reuse."""

    def __init__(self, d: int, nodes: np.ndarray, vals: np.ndarray):
        self.d = d
        self.nodes = np.asarray(nodes, dtype=float)
        self.vals = np.asarray(vals, dtype=float)
        self.top = float(self.nodes[-1])
        u = np.concatenate([[0.0], self.nodes])
        self._value = CubicSpline(u, np.concatenate([[self.vals[0]],
                                                     self.vals]))
        if d == 3:
            self._cum = CubicSpline(
                u, np.concatenate([[0.0], self.nodes * self.vals])
            ).antiderivative()

    def value(self, x: np.ndarray) -> np.ndarray:
        return np.where(x <= self.top, self._value(np.clip(x, 0.0, self.top)),
                        0.0)

    def cumulative(self, x: np.ndarray) -> np.ndarray:
        return self._cum(np.clip(x, 0.0, self.top))


def _radial_convolve_d3(f: RadialProfile, s_grid: Grid1D, g_vals: np.ndarray,
                        rho: np.ndarray) -> np.ndarray:
    """(f * g)(rho) in R^3: shell identity with the cumulative of u f(u).

    int f(|x-y|) g(|y|) dy
        = (2 pi / rho) int s g(s) [F(s + rho) - F(|s - rho|)] ds,
    F(R) = int_0^R u f(u) du; at rho = 0 it degenerates to 4 pi int s^2 f g.
    """
    s = s_grid.nodes
    out = np.empty_like(rho)
    pos = rho > 0
    rp = rho[pos]
    val = (f.cumulative(s[None, :] + rp[:, None])
           - f.cumulative(np.abs(s[None, :] - rp[:, None])))
    out[pos] = (2.0 * math.pi / rp) * ((s_grid.weights * s * g_vals) @ val.T)
    if np.any(~pos):
        out[~pos] = 4.0 * math.pi * float(
            np.sum(s_grid.weights * s ** 2 * g_vals * f.value(s)))
    return out


def _radial_convolve_d2(f: RadialProfile, s_grid: Grid1D, g_vals: np.ndarray,
                        rho: np.ndarray, n_theta: int = 24) -> np.ndarray:
    """(f * g)(rho) in R^2 by Gauss-Legendre in the polar angle."""
    xt, wt = leggauss(n_theta)
    theta = 0.5 * math.pi * (xt + 1.0)
    wth = 0.5 * math.pi * wt  # half circle; integrand is even in theta
    s = s_grid.nodes
    dist = np.sqrt(np.maximum(
        rho[:, None, None] ** 2 + s[None, :, None] ** 2
        - 2.0 * rho[:, None, None] * s[None, :, None]
        * np.cos(theta)[None, None, :], 0.0))
    ang = 2.0 * (f.value(dist) @ wth)   # full-circle angular integral
    return (s_grid.weights * s * g_vals) @ ang.T


def radial_convolve(d: int, f_nodes, f_vals, s_grid: Grid1D, g_vals,
                    rho, n_theta: int = 24) -> np.ndarray:
    """Radial convolution (f * g)(|x|) in R^d, d in {2, 3}."""
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    f = f_nodes if isinstance(f_nodes, RadialProfile) \
        else RadialProfile(d, f_nodes, f_vals)
    if d == 3:
        return _radial_convolve_d3(f, s_grid, np.asarray(g_vals), rho)
    if d == 2:
        return _radial_convolve_d2(f, s_grid, np.asarray(g_vals), rho,
                                   n_theta)
    raise ValueError("spatial dimension must be 2 or 3")


# ---------------------------------------------------------------------------
# Mollified kernels on grids
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Resolution:
    """Grid-quality knobs shared by the kernel pipelines."""

    order: int = 8            # Gauss-Legendre order per panel
    ratio: float = 2.0        # geometric panel growth
    t_frac: float = 0.125     # smallest t panel, in units of eps^2
    r_frac: float = 0.125     # smallest r panel, in units of eps
    conv_nodes: int = 24      # quadrature nodes across the mollifier support
    theta_nodes: int = 24     # angular nodes (d = 2)

    def coarser(self) -> "Resolution":
        return replace(self, order=max(4, self.order - 3),
                       conv_nodes=max(10, self.conv_nodes // 2),
                       t_frac=self.t_frac * 2, r_frac=self.r_frac * 2)


@dataclass
class MollifiedKernel:
    """A space-time kernel profile held on a graded (t, r) grid."""

    d: int
    t_grid: Grid1D
    r_grid: Grid1D
    vals: np.ndarray                      # (Nt, Nr)
    t_support: tuple[float, float]
    r_support: float
    _spline: RectBivariateSpline = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._spline = RectBivariateSpline(
            self.t_grid.nodes, self.r_grid.nodes, self.vals, kx=3, ky=3)

    def __call__(self, t, r) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        tt = np.clip(t, self.t_grid.nodes[0], self.t_grid.nodes[-1])
        rr = np.clip(r, self.r_grid.nodes[0], self.r_grid.nodes[-1])
        out = self._spline(tt, rr, grid=False)
        mask = ((t >= self.t_support[0]) & (t <= self.t_support[1])
                & (r <= self.r_support))
        return np.where(mask, out, 0.0)

    def profile(self, t: float) -> np.ndarray:
        """Radial slice on the native r nodes (zero outside the t support)."""
        if not self.t_support[0] <= t <= self.t_support[1]:
            return np.zeros_like(self.r_grid.nodes)
        return self._spline(t, self.r_grid.nodes, grid=False)

    def squared_integral(self) -> float:
        shell = (sphere_area(self.d)
                 * self.r_grid.weights * self.r_grid.nodes ** (self.d - 1))
        return float(self.t_grid.weights @ (self.vals ** 2 @ shell))


def _mollifier_t_grid(eps: float, rho: MollifierSpec,
                      res: Resolution) -> Grid1D:
    half = rho.t_halfwidth * eps ** 2
    return panel_grid(np.linspace(-half, half, max(2, res.conv_nodes // 6)),
                      res.order)


def _mollifier_s_grid(eps: float, rho: MollifierSpec,
                      res: Resolution) -> Grid1D:
    rad = rho.x_radius * eps
    return panel_grid(np.linspace(0.0, rad, max(2, res.conv_nodes // 6)),
                      res.order)


def mollify_kernel(kernel: TruncatedKernel, eps: float,
                   rho: Optional[MollifierSpec] = None,
                   res: Resolution = Resolution()) -> MollifiedKernel:
    """K_eps = K * rho_eps by a t pass then a radial x pass on graded grids."""
    d = kernel.d
    if rho is None:
        rho = MollifierSpec(d)
    t_half = rho.t_halfwidth * eps ** 2
    x_rad = rho.x_radius * eps
    t_lo, t_hi = -t_half, kernel.outer + t_half
    r_hi = math.sqrt(kernel.outer) + x_rad

    t_grid = panel_grid(
        _two_sided_edges(t_lo, t_hi, res.t_frac * eps ** 2, res.ratio),
        res.order)
    r_grid = panel_grid(
        geometric_edges(0.0, r_hi, res.r_frac * eps, res.ratio), res.order)

    # pass 1: temporal convolution on every radial node
    tau = _mollifier_t_grid(eps, rho, res)
    rho_t = rho.scaled_t(tau.nodes, eps)
    kt = np.zeros((t_grid.nodes.size, r_grid.nodes.size))
    for tq, wq, pq in zip(tau.nodes, tau.weights, rho_t):
        kt += wq * pq * kernel(t_grid.nodes[:, None] - tq,
                               r_grid.nodes[None, :])

    # pass 2: radial convolution against the spatial factor, row by row
    sg = _mollifier_s_grid(eps, rho, res)
    gs = rho.scaled_x(sg.nodes, eps)
    vals = np.empty_like(kt)
    for i in range(t_grid.nodes.size):
        vals[i] = radial_convolve(d, r_grid.nodes, kt[i], sg, gs,
                                  r_grid.nodes, res.theta_nodes)
    return MollifiedKernel(d=d, t_grid=t_grid, r_grid=r_grid, vals=vals,
                           t_support=(t_lo, t_hi), r_support=r_hi)


def g_eps_squared(d: int, eps: float, rho: Optional[MollifierSpec] = None,
                  t_window: float = 1.0,
                  res: Resolution = Resolution()) -> float:
    """int_{t <= t_window} int (G * rho_eps)^2 dx dt for the free heat kernel.

    The time window makes the outer integral finite; the small-eps behaviour
    (the 1/eps rate in d = 3, the (1/4 pi) log(1/eps) slope in d = 2) is
    window-independent because it comes from the origin.
    """
    if rho is None:
        rho = MollifierSpec(d)
    t_half = rho.t_halfwidth * eps ** 2
    x_rad = rho.x_radius * eps
    r_hi = 6.0 * math.sqrt(t_window) + x_rad
    t_grid = panel_grid(
        _two_sided_edges(-t_half, t_window, res.t_frac * eps ** 2, res.ratio),
        res.order)
    r_grid = panel_grid(
        geometric_edges(0.0, r_hi, res.r_frac * eps, res.ratio), res.order)

    tau = _mollifier_t_grid(eps, rho, res)
    rho_t = rho.scaled_t(tau.nodes, eps)
    gt = np.zeros((t_grid.nodes.size, r_grid.nodes.size))
    for tq, wq, pq in zip(tau.nodes, tau.weights, rho_t):
        gt += wq * pq * heat_kernel(t_grid.nodes[:, None] - tq,
                                    r_grid.nodes[None, :], d)
    sg = _mollifier_s_grid(eps, rho, res)
    gs = rho.scaled_x(sg.nodes, eps)
    shell = (sphere_area(d) * r_grid.weights * r_grid.nodes ** (d - 1))
    total = 0.0
    for i, wt in enumerate(t_grid.weights):
        row = radial_convolve(d, r_grid.nodes, gt[i], sg, gs, r_grid.nodes,
                              res.theta_nodes)
        total += wt * float(shell @ row ** 2)
    return total


# ---------------------------------------------------------------------------
# Slow-channel weight and kernel
# ---------------------------------------------------------------------------

def smooth_taper(s, T: float) -> np.ndarray:
    """C^2 cutoff: 1 on [0, T], smooth descent to 0 at 2T, 0 beyond."""
    s = np.asarray(s, dtype=float)
    x = np.clip((s - T) / T, 0.0, 1.0)
    step = x ** 3 * (10.0 - 15.0 * x + 6.0 * x ** 2)
    return np.where(s < 0, 0.0, 1.0 - step)


def ou_weight(decay: float, gain: float = 1.0,
              T: float = 0.5) -> Callable[[np.ndarray], np.ndarray]:
    """Scalar relaxation weight Q(s) = gain * exp(-decay s), tapered at 2T."""
    def Q(s):
        s = np.asarray(s, dtype=float)
        return gain * np.exp(-decay * np.clip(s, 0.0, None)) \
            * smooth_taper(s, T)
    return Q


def matrix_weight(A1: np.ndarray, A2: np.ndarray, channel: int,
                  T: float = 0.5) -> Callable[[np.ndarray], np.ndarray]:
    """Channel weight Q_i(s) = (e^{s A2} A1)_i, tapered at 2T.

    ``A1`` is the (n,) coupling of the fast variable into the slow channels,
    ``A2`` the (n, n) relaxation matrix (eigendecomposed once).
    """
    A1 = np.atleast_1d(np.asarray(A1, dtype=float))
    A2 = np.atleast_2d(np.asarray(A2, dtype=float))
    lam, P = np.linalg.eig(A2)
    c = np.linalg.solve(P, A1.astype(complex))

    def Q(s):
        s = np.asarray(s, dtype=float)
        es = np.exp(np.multiply.outer(np.clip(s, 0.0, None), lam))
        vals = np.real(es @ (P[channel, :] * c))
        return vals * smooth_taper(s, T)
    return Q


def _graded_span(a: float, b: float, h_min: float,
                 ratio: float = 2.0) -> np.ndarray:
    """Panel edges on [a, b] refined toward u = 0 (or the endpoint nearest it)."""
    if b - a <= h_min:
        return np.array([a, b])
    if a < 0.0 < b:
        return _two_sided_edges(a, b, h_min, ratio)
    if a >= 0.0:
        return a + geometric_edges(0.0, b - a, h_min, ratio)
    return b - geometric_edges(0.0, b - a, h_min, ratio)[::-1]


def kq_exact(kernel: TruncatedKernel, Q: Callable,
             T: float = 0.5, order: int = 10
             ) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Unmollified K^Q(t, r) = int_0^{2T} Q(s) K(t - s, r) ds, pointwise.

    Substituting u = t - s, the integrand K(u, r) is sharply peaked at
    u ~ r^2/6, so each point gets a u grid graded toward 0.
    """
    def KQ(t, r):
        t = np.asarray(t, dtype=float)
        r = np.asarray(r, dtype=float)
        tb, rb = np.broadcast_arrays(t, r)
        out = np.zeros(tb.shape)
        flat_t, flat_r = tb.ravel(), rb.ravel()
        res = out.ravel()
        for i, (ti, ri) in enumerate(zip(flat_t, flat_r)):
            lo, hi = max(ti - 2.0 * T, 0.0), min(ti, kernel.outer)
            if hi <= lo:
                continue
            h = max(min(ri ** 2 / 24.0, hi - lo), 1e-12)
            g = panel_grid(_graded_span(lo, hi, h), order)
            res[i] = float(np.sum(
                g.weights * np.asarray(Q(ti - g.nodes), dtype=float)
                * kernel(g.nodes, ri)))
        return res.reshape(tb.shape)

    return KQ


def kq_kernel(keps: MollifiedKernel, Q: Callable, T: float = 0.5,
              res: Resolution = Resolution()) -> MollifiedKernel:
    """K^Q_eps(t, x) = int_0^{2T} Q(s) K_eps(t - s, x) ds on the same r grid.

    In the variable u = t - s the integrand K_eps(u, .) carries all its fine
    structure at scales >= eps^2 near u = 0 (mollification floors the heat
    peak width), so the per-row u grids are graded toward 0.
    """
    t_lo = keps.t_support[0]
    t_hi = keps.t_support[1] + 2.0 * T
    eps_scale = max(keps.t_grid.nodes[0] - t_lo, 1e-12)
    h_min = eps_scale / 4.0
    t_grid = panel_grid(_two_sided_edges(t_lo, t_hi, eps_scale, res.ratio),
                        res.order)
    vals = np.zeros((t_grid.nodes.size, keps.r_grid.nodes.size))
    for i, ti in enumerate(t_grid.nodes):
        lo = max(ti - 2.0 * T, keps.t_support[0])
        hi = min(ti, keps.t_support[1])
        if hi <= lo:
            continue
        g = panel_grid(_graded_span(lo, hi, h_min, res.ratio), res.order)
        qs = np.asarray(Q(ti - g.nodes), dtype=float)
        vals[i] = (g.weights * qs) @ keps(g.nodes[:, None],
                                          keps.r_grid.nodes[None, :])
    return MollifiedKernel(d=keps.d, t_grid=t_grid, r_grid=keps.r_grid,
                           vals=vals, t_support=(t_lo, t_hi),
                           r_support=keps.r_support)


# ---------------------------------------------------------------------------
# Correlation functions Q_m
# ---------------------------------------------------------------------------

def correlate(A: MollifiedKernel, B: MollifiedKernel,
              t_out: np.ndarray, rho_out: np.ndarray) -> np.ndarray:
    """(A star B)(t, x) = int A(z1) B(z1 - z) dz1 on an output (t, r) grid.

    Radial in x; the t1 integral runs over A's native grid, the spatial
    cross-correlation uses the shell identity with A's radial samples as the
    cumulative factor and B's slice as the compact factor.
    """
    d = A.d
    t_out = np.atleast_1d(np.asarray(t_out, dtype=float))
    rho_out = np.atleast_1d(np.asarray(rho_out, dtype=float))
    sg = Grid1D(B.r_grid.nodes, B.r_grid.weights)
    out = np.zeros((t_out.size, rho_out.size))
    for t1, w1, a_row in zip(A.t_grid.nodes, A.t_grid.weights, A.vals):
        ts = t1 - t_out
        inside = (ts >= B.t_support[0]) & (ts <= B.t_support[1])
        if not np.any(inside):
            continue
        prof = RadialProfile(d, A.r_grid.nodes, a_row)
        for j in np.nonzero(inside)[0]:
            b_slice = B.profile(ts[j])
            out[j] += w1 * radial_convolve(d, prof, None, sg, b_slice,
                                           rho_out)
    return out


# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

@dataclass
class KernelConstants:
    """Renormalisation constants at one mollification scale."""

    d: int
    eps: float
    C1: float
    Q1_0: float
    Q2_0: float
    C2: Optional[float] = None
    I: dict = field(default_factory=dict)     # (i, j) -> int K Qi Qj
    errors: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {"d": self.d, "eps": self.eps, "C1": self.C1,
               "Q1_0": self.Q1_0, "Q2_0": self.Q2_0, "C2": self.C2,
               "I": {f"I{i}{j}": v for (i, j), v in self.I.items()},
               "errors": self.errors}
        return out


def _output_grids(kernel: TruncatedKernel, eps: float,
                  res: Resolution) -> tuple[Grid1D, Grid1D]:
    tg = panel_grid(geometric_edges(0.0, kernel.outer,
                                    res.t_frac * eps ** 2, res.ratio),
                    res.order)
    rg = panel_grid(geometric_edges(0.0, math.sqrt(kernel.outer),
                                    res.r_frac * eps, res.ratio), res.order)
    return tg, rg


def kernel_constants(d: int, eps: float,
                     kernel: Optional[TruncatedKernel] = None,
                     rho: Optional[MollifierSpec] = None,
                     Q: Optional[Callable] = None,
                     T: float = 0.5,
                     res: Resolution = Resolution(),
                     full: Optional[bool] = None,
                     estimate_errors: bool = False) -> KernelConstants:
    """Compute the renormalisation constants at scale eps.

    ``full`` (default: d == 3) adds the correlation functions on the kernel
    support and the integrals C2 and Iij; otherwise only C1 and the origin
    values Q1(0), Q2(0) are computed.  ``estimate_errors`` repeats the whole
    computation on a coarser grid and reports the differences.
    """
    if kernel is None:
        kernel = build_truncated_kernel(d)
    if rho is None:
        rho = MollifierSpec(d)
    if Q is None:
        Q = ou_weight(1.0, 1.0, T)
    if full is None:
        full = d == 3

    keps = mollify_kernel(kernel, eps, rho, res)
    kq = kq_kernel(keps, Q, T, res)
    C1 = keps.squared_integral()
    origin_t = np.array([0.0])
    origin_r = np.array([0.0])
    Q1_0 = float(correlate(keps, kq, origin_t, origin_r)[0, 0])
    Q2_0 = float(correlate(kq, kq, origin_t, origin_r)[0, 0])

    C2 = None
    I: dict = {}
    if full:
        tg, rg = _output_grids(kernel, eps, res)
        TT, RR = np.meshgrid(tg.nodes, rg.nodes, indexing="ij")
        w2 = (tg.weights[:, None] * rg.weights[None, :]
              * sphere_area(d) * RR ** (d - 1))
        kv = kernel(TT, RR)
        q0 = correlate(keps, keps, tg.nodes, rg.nodes)
        q1 = correlate(keps, kq, tg.nodes, rg.nodes)
        q2 = correlate(kq, kq, tg.nodes, rg.nodes)
        C2 = 2.0 * float(np.sum(w2 * kv * q0 ** 2))
        I[(0, 0)] = float(np.sum(w2 * kv * q0 * q0))
        I[(0, 1)] = float(np.sum(w2 * kv * q0 * q1))
        I[(1, 1)] = float(np.sum(w2 * kv * q1 * q1))
        I[(0, 2)] = float(np.sum(w2 * kv * q0 * q2))
        I[(1, 2)] = float(np.sum(w2 * kv * q1 * q2))
        I[(2, 2)] = float(np.sum(w2 * kv * q2 * q2))

    out = KernelConstants(d=d, eps=eps, C1=C1, Q1_0=Q1_0, Q2_0=Q2_0,
                          C2=C2, I=I)
    if estimate_errors:
        coarse = kernel_constants(d, eps, kernel, rho, Q, T, res.coarser(),
                                  full, estimate_errors=False)
        out.errors = {"C1": abs(C1 - coarse.C1),
                      "Q1_0": abs(Q1_0 - coarse.Q1_0),
                      "Q2_0": abs(Q2_0 - coarse.Q2_0)}
        if full and coarse.C2 is not None:
            out.errors["C2"] = abs(C2 - coarse.C2)
            out.errors.update({f"I{i}{j}": abs(I[(i, j)] - coarse.I[(i, j)])
                               for (i, j) in I})
    return out


# ---------------------------------------------------------------------------
# Counterterm assembly
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CounterTerms:
    """Numeric counterterm coefficients: F + C0 + C1_sys u + sum C2_i v_i."""

    C0: float
    C1_sys: float
    C2_sys: tuple[float, ...]
    C_eps: float


def assemble_C(beta1: float, gamma1: float, gamma2: Sequence[float],
               consts: KernelConstants) -> CounterTerms:
    """Counterterms (-beta1/3, -gamma1, -gamma2_i/3) * C(eps).

    C(eps) = 3 C1 + 9 gamma1 C2 in three dimensions (C2 = 2 int K Q0^2)
    and 3 C1 in two.
    """
    C2 = consts.C2 if consts.C2 is not None else 0.0
    C_eps = 3.0 * consts.C1 + 9.0 * float(gamma1) * C2
    return CounterTerms(C0=-float(beta1) / 3.0 * C_eps,
                        C1_sys=-float(gamma1) * C_eps,
                        C2_sys=tuple(-float(g) / 3.0 * C_eps for g in gamma2),
                        C_eps=C_eps)


# ---------------------------------------------------------------------------
# Bound verification
# ---------------------------------------------------------------------------

@dataclass
class BoundCheck:
    """Worst-case ratio table for one kernel estimate across a scale sweep.

    ``ratios[i]`` is the supremum of |quantity| divided by the claimed bound
    shape at ``eps[i]``; ``trend`` is the fitted slope of log ratio against
    log(1/eps).  The bound passes when the ratios show no upward trend as
    eps -> 0 (trend <= ``trend_tol``).
    """

    name: str
    eps: list
    ratios: list
    constant: float
    trend: float
    passed: bool
    detail: str = ""


def _trend(eps: Sequence[float], ratios: Sequence[float]) -> float:
    # fitted on the finer half of the sweep: the asymptotic claim is eps -> 0,
    # and the coarsest scales sit outside its regime.  Scales whose ratio is
    # zero (nothing certified above the numerical floor) carry no growth
    # information and are skipped; an all-quiet tail is trivially trend-free.
    eps = np.asarray(eps, dtype=float)
    ratios = np.asarray(ratios, dtype=float)
    keep = max(3, (eps.size + 1) // 2)
    order = np.argsort(eps)[:keep]
    e, r = eps[order], ratios[order]
    pos = r > 0
    if np.count_nonzero(pos) < 2:
        return 0.0
    return float(np.polyfit(np.log(1.0 / e[pos]), np.log(r[pos]), 1)[0])


def _shell_samples(eps_min: float, n_lam: int = 24,
                   n_ang: int = 7) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic parabolic-shell sample set covering the kernel support."""
    lam = np.exp(np.linspace(math.log(eps_min / 8.0), math.log(1.2), n_lam))
    ang = np.linspace(0.02, 0.98, n_ang)
    L, A = np.meshgrid(lam, ang, indexing="ij")
    return (L ** 2 * A).ravel(), (L * np.sqrt(1.0 - A)).ravel()


def verify_appendix_bounds(d: int, eps_list: Sequence[float],
                           res: Resolution = Resolution(),
                           T: float = 0.5, theta: float = 0.25,
                           trend_tol: float = 0.1) -> list[BoundCheck]:
    """Ratio tables for the kernel estimates behind the constants.

    Verified shapes: the pointwise growth |K_eps| <= A (|z|_s + eps)^-d;
    the square-integral rate (eps * int K_eps^2 bounded in d = 3, the
    log(1/eps) slope in d = 2); int (K^Q_eps)^2 bounded; and the stability
    sup |K^Q - K^Q_eps| |x|^(1+theta) eps^(-theta) bounded.  Each check
    passes iff its ratio sequence has no upward trend as eps -> 0
    (log-log slope <= ``trend_tol``).
    """
    kernel = build_truncated_kernel(d)
    rho = MollifierSpec(d)
    Q = ou_weight(1.0, 1.0, T)
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    KQ0 = kq_exact(kernel, Q, T)

    point_r, rate_r, kqsq_r, stab_r = [], [], [], []
    # stability sample set: fixed across scales so the eps-dependence is real,
    # with radii reaching below every eps so the x ~ eps core is always probed
    xs = np.exp(np.linspace(math.log(0.005), math.log(0.9), 22))
    ts = np.linspace(0.0, 1.0 + 2 * T, 14)
    TS, XS = np.meshgrid(ts, xs, indexing="ij")
    kq_ref = KQ0(TS, XS)
    for eps in eps_list:
        keps = mollify_kernel(kernel, eps, rho, res)
        kq = kq_kernel(keps, Q, T, res)
        t, r = _shell_samples(eps)
        lam = np.sqrt(r ** 2 + np.abs(t))
        point_r.append(float(np.max(np.abs(keps(t, r)) * (lam + eps) ** d)))
        C1 = keps.squared_integral()
        rate_r.append(eps * C1 if d == 3 else C1 / math.log(1.0 / eps))
        kqsq_r.append(kq.squared_integral())
        # certify only differences resolvable above the grid error, estimated
        # pointwise from a coarser rerun -- else eps^-theta amplifies noise
        kq_coarse = kq_kernel(
            mollify_kernel(kernel, eps, rho, res.coarser()), Q, T,
            res.coarser())
        kq_vals = kq(TS, XS)
        noise = np.abs(kq_vals - kq_coarse(TS, XS)) + 1e-12
        diff = np.abs(kq_ref - kq_vals)
        certified = np.where(diff > 4.0 * noise, diff, 0.0)
        stab_r.append(float(np.max(certified * XS ** (1 + theta)
                                   / eps ** theta)))

    def check(name, ratios, detail=""):
        tr = _trend(eps_list, ratios)
        return BoundCheck(name=name, eps=list(eps_list),
                          ratios=[float(x) for x in ratios],
                          constant=float(np.max(ratios)), trend=tr,
                          passed=tr <= trend_tol, detail=detail)

    rate_name = ("eps * int K_eps^2 bounded" if d == 3
                 else "int K_eps^2 / log(1/eps) bounded")
    return [
        check(f"|K_eps| <= A (|z|_s + eps)^-{d}", point_r,
              "parabolic-shell samples"),
        check(rate_name, rate_r),
        check("int (K^Q_eps)^2 bounded", kqsq_r),
        check(f"sup |K^Q - K^Q_eps| |x|^{1 + theta} eps^-{theta} bounded",
              stab_r, "fixed space-time sample set"),
    ]
