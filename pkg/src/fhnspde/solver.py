"""Time integration of the renormalised fast-slow systems.

The fast channel is advanced by a first-order exponential (ETD) integrator in
Fourier space: the heat part is exact per mode, the nonlinearity enters
through the phi1 weight, and cubic terms are evaluated pseudo-spectrally with
2/3 dealiasing.  The slow channel is updated exactly per site for frozen u
via the matrix series Phi(dt, A) = sum dt^{m+1} A^m / (m+1)!, which needs no
invertibility of A.  A stochastic-convolution channel chi is co-integrated
with the same mode weights, so u = chi + phi holds to rounding and remainder
norms come for free.

Sweeps over the mollification scale share one white-noise realisation; each
scale applies its own separable mollifier as a spectral FIR filter, and all
runs advance in lockstep so cross-scale differences can be recorded at
matching times without storing trajectories.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional, Sequence

import numpy as np
import sympy
from scipy.linalg import expm

from .kernels import (
    CounterTerms,
    KernelConstants,
    MollifierSpec,
    TruncatedKernel,
    assemble_C,
    build_truncated_kernel,
    kernel_constants,
    matrix_weight,
    mollify_kernel,
    panel_grid,
)
from .noise import (
    Lattice,
    counter_gaussians,
    mollifier_transform,
    mollify_noise,
    sample_white_noise,
    _temporal_weights,
)
from .renorm import CubicPolynomial

__all__ = [
    "QSpec",
    "SystemSpec",
    "RunConfig",
    "RunResult",
    "SweepReport",
    "phi_series",
    "initial_data",
    "spectral_sigma",
    "Stepper",
    "run",
    "counterterms_for",
    "epsilon_sweep",
    "koper_system",
]


# ---------------------------------------------------------------------------
# system description
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QSpec:
    """Slow-channel coupling dv = (u A1 + A2 v) dt and its memory kernel."""

    A1: tuple[float, ...]
    A2: tuple[tuple[float, ...], ...]
    T: float = 0.5

    def __post_init__(self):
        n = len(self.A1)
        if n < 1 or any(len(row) != n for row in self.A2) \
                or len(self.A2) != n:
            raise ValueError("A1 must be a length-n vector and A2 an n x n "
                             "matrix")

    @property
    def n(self) -> int:
        return len(self.A1)

    def weight(self, channel: int = 0) -> Callable:
        return matrix_weight(list(self.A1),
                             [list(r) for r in self.A2], channel, self.T)

    def l1_norm(self) -> float:
        """max_i int_0^{2T} |Q_i(s)| ds for the tapered memory kernel."""
        g = panel_grid(list(np.linspace(0.0, 2 * self.T, 129)), 6)
        best = 0.0
        for i in range(self.n):
            q = np.abs(np.asarray(self.weight(i)(g.nodes), dtype=float))
            best = max(best, float(np.sum(g.weights * q)))
        return best


@dataclass(frozen=True)
class SystemSpec:
    """What to integrate: dimension, nonlinearity, coupling, counterterms."""

    d: int
    F: CubicPolynomial
    Q: QSpec
    renorm: Optional[CounterTerms] = None
    formulation: str = "direct"

    def __post_init__(self):
        if self.formulation not in ("direct", "remainder"):
            raise ValueError("formulation must be 'direct' or 'remainder'")
        if self.F.n_channels != self.Q.n:
            raise ValueError("nonlinearity channels != coupling channels")
        if self.d == 3 and self.renorm is not None:
            bad = [i for i in range(1, self.Q.n + 1)
                   if sympy.simplify(self.F.gamma2(i)) != 0]
            if bad:
                raise ValueError(
                    "d = 3 with renormalisation requires vanishing u^2 v_i "
                    "coefficients; nonzero in channels %s" % bad)


@dataclass(frozen=True)
class RunConfig:
    n_space: int
    dt: float
    t_end: float
    eps: float
    seed: int
    cutoff: float = 1e3
    eta: float = -0.6
    gamma: float = 1.5
    noise_amplitude: float = 1.0
    u0: Optional[Callable] = None
    v0: Optional[Callable] = None
    record_every: int = 10
    snapshot_times: tuple[float, ...] = ()

    def validate(self, d: int) -> None:
        if self.cutoff <= 0 or self.dt <= 0 or self.t_end <= 0:
            raise ValueError("cutoff, dt, and t_end must be positive")
        if self.eps < 2.0 / self.n_space:
            raise ValueError("eps=%g below the resolution guard 2*dx=%g"
                             % (self.eps, 2.0 / self.n_space))
        if self.eta <= -2.0 / 3.0:
            raise ValueError("initial-data regularity eta must exceed -2/3")
        if self.gamma <= 1.0:
            raise ValueError("slow-channel regularity gamma must exceed 1")


@dataclass
class RunResult:
    times: np.ndarray
    norms: dict
    snapshots: dict
    termination: str
    t_star: Optional[float]
    manifest: dict


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------

def phi_series(dt: float, A: np.ndarray, tol: float = 1e-16) -> np.ndarray:
    """Phi(dt, A) = sum_{m>=0} dt^{m+1} A^m / (m+1)!  (works for singular A)."""
    A = np.asarray(A, dtype=float)
    term = dt * np.eye(A.shape[0])
    out = term.copy()
    for m in range(1, 200):
        term = term @ (dt * A) / (m + 1)
        out += term
        if np.max(np.abs(term)) <= tol * max(np.max(np.abs(out)), 1e-300):
            break
    return out


def spectral_sigma(d: int, n_space: int, exponent: float) -> np.ndarray:
    """(1+|k|)^{exponent/2} on the rfftn frequency lattice."""
    axes = [np.fft.fftfreq(n_space, d=1.0 / n_space) for _ in range(d - 1)]
    axes.append(np.fft.rfftfreq(n_space, d=1.0 / n_space))
    mesh = np.meshgrid(*axes, indexing="ij")
    mag = np.sqrt(sum(np.square(a) for a in mesh))
    return (1.0 + mag) ** (exponent / 2.0)


def _random_field(d: int, n_space: int, seed: int, exponent: float
                  ) -> np.ndarray:
    """Random Fourier series with coefficient variance (1+|k|)^exponent."""
    w = counter_gaussians(seed, 0, n_space ** d).reshape((n_space,) * d)
    sig = spectral_sigma(d, n_space, exponent)
    spec = np.fft.rfftn(w) * sig * n_space ** (d / 2.0)
    return np.fft.irfftn(spec, s=(n_space,) * d, axes=tuple(range(d)))


def initial_data(d: int, n_space: int, seed: int, eta: float = -0.6,
                 gamma: float = 1.5, n_v: int = 1,
                 u0: Optional[Callable] = None,
                 v0: Optional[Callable] = None
                 ) -> tuple[np.ndarray, np.ndarray]:
    """Initial fields: prescribed-decay random Fourier series or explicit."""
    if eta <= -2.0 / 3.0:
        raise ValueError("initial-data regularity eta must exceed -2/3")
    if gamma <= 1.0:
        raise ValueError("slow-channel regularity gamma must exceed 1")
    xs = np.arange(n_space) / n_space
    mesh = np.meshgrid(*([xs] * d), indexing="ij")
    if u0 is not None:
        u = np.asarray(u0(*mesh), dtype=float)
    else:
        u = _random_field(d, n_space, seed, -d - 2 * eta)
    v = np.empty((n_v,) + (n_space,) * d)
    for i in range(n_v):
        if v0 is not None:
            v[i] = np.asarray(v0(*mesh), dtype=float)[i] \
                if n_v > 1 else np.asarray(v0(*mesh), dtype=float)
        else:
            v[i] = _random_field(d, n_space, seed + 7919 * (i + 1),
                                 -d - 2 * gamma)
    return u, v


# ---------------------------------------------------------------------------
# stepping
# ---------------------------------------------------------------------------

class Stepper:
    """Precomputed weights for one (system, grid, dt) combination."""

    def __init__(self, spec: SystemSpec, n_space: int, dt: float):
        self.spec = spec
        self.n_space = n_space
        self.dt = dt
        d = spec.d
        axes = [np.fft.fftfreq(n_space, d=1.0 / n_space)
                for _ in range(d - 1)]
        axes.append(np.fft.rfftfreq(n_space, d=1.0 / n_space))
        mesh = np.meshgrid(*axes, indexing="ij")
        lam = (2.0 * math.pi) ** 2 * sum(np.square(a) for a in mesh)
        self.decay = np.exp(-lam * dt)
        with np.errstate(invalid="ignore"):
            self.gain = np.where(
                lam > 0, -np.expm1(-lam * dt) / np.where(lam > 0, lam, 1.0),
                dt)
        self.dealias = np.ones_like(lam)
        for a in mesh:
            self.dealias *= (np.abs(a) <= n_space / 3.0)
        self.expA = expm(dt * np.asarray(spec.Q.A2, dtype=float))
        self.phiA1 = phi_series(dt, np.asarray(spec.Q.A2, dtype=float)) \
            @ np.asarray(spec.Q.A1, dtype=float)
        u_sym = sympy.Symbol("u")
        self._f = sympy.lambdify((u_sym, *spec.F.vs), spec.F.expr, "numpy")
        if spec.renorm is not None:
            self.c0 = float(spec.renorm.C0)
            self.c1 = float(spec.renorm.C1_sys)
            self.c2 = tuple(float(c) for c in spec.renorm.C2_sys)
        else:
            self.c0 = self.c1 = 0.0
            self.c2 = (0.0,) * spec.Q.n
        self.ax = tuple(range(0, spec.d))

    def nonlinearity(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        out = self._f(u, *v) + 0.0 * u
        if self.c0 or self.c1:
            out = out + self.c0 + self.c1 * u
        for c, vi in zip(self.c2, v):
            if c:
                out = out + c * vi
        return out

    def step_u(self, u_hat: np.ndarray, nonlin: np.ndarray,
               forcing_hat: Optional[np.ndarray]) -> np.ndarray:
        n_hat = np.fft.rfftn(nonlin, axes=self.ax) * self.dealias
        if forcing_hat is not None:
            n_hat = n_hat + forcing_hat
        return self.decay * u_hat + self.gain * n_hat

    def step_v(self, v: np.ndarray, u: np.ndarray) -> np.ndarray:
        out = np.tensordot(self.expA, v, axes=(1, 0))
        return out + self.phiA1.reshape((-1,) + (1,) * self.spec.d) * u

    def to_real(self, u_hat: np.ndarray) -> np.ndarray:
        return np.fft.irfftn(u_hat, s=(self.n_space,) * self.spec.d,
                             axes=self.ax)


def _norm_pair(x: np.ndarray) -> tuple[float, float]:
    return float(np.max(np.abs(x))), float(math.sqrt(np.mean(np.square(x))))


def run(config: RunConfig, spec: SystemSpec) -> RunResult:
    """Integrate to t_end or termination; returns norms, snapshots, manifest.

    chi (the mollified stochastic convolution with zero initial data) is
    co-integrated spectrally, so phi = u - chi is available in both
    formulations and the decomposition is exact by construction.
    """
    config.validate(spec.d)
    steps = int(round(config.t_end / config.dt))
    have_noise = config.noise_amplitude != 0.0
    xi = xi_eps = None
    if have_noise:
        pad = int(math.ceil(0.25 * config.eps ** 2 / config.dt)) + 2
        lat = Lattice(d=spec.d, n_space=config.n_space, n_time=steps + pad,
                      t_end=(steps + pad) * config.dt)
        xi = sample_white_noise(lat, config.seed)
        xi_eps = mollify_noise(xi, config.eps)
    st = Stepper(spec, config.n_space, config.dt)
    u, v = initial_data(spec.d, config.n_space, config.seed + 1,
                        eta=config.eta, gamma=config.gamma, n_v=spec.Q.n,
                        u0=config.u0, v0=config.v0)
    u_hat = np.fft.rfftn(u, axes=st.ax)
    chi_hat = np.zeros_like(u_hat)
    remainder = spec.formulation == "remainder"
    phi = u.copy() if remainder else None
    phi_hat = u_hat.copy() if remainder else None

    snap_idx = {int(round(t / config.dt)): t for t in config.snapshot_times}
    times, series = [], {k: [] for k in
                         ("sup_u", "l2_u", "sup_v", "l2_v", "sup_phi",
                          "l2_phi")}
    snapshots = {}
    termination, t_star = "completed", None

    for i in range(steps + 1):
        t = i * config.dt
        chi = st.to_real(chi_hat)
        if remainder:
            u = chi + phi
        if not np.all(np.isfinite(u)):
            termination, t_star = "nonfinite", t
            break
        if float(np.max(np.abs(u))) > config.cutoff:
            termination, t_star = "cutoff-hit", t
            break
        if i % config.record_every == 0 or i == steps or i in snap_idx:
            su, l2u = _norm_pair(u)
            sv, l2v = _norm_pair(v)
            sp, l2p = _norm_pair(u - chi)
            times.append(t)
            for k, val in zip(series, (su, l2u, sv, l2v, sp, l2p)):
                series[k].append(val)
        if i in snap_idx:
            snapshots[snap_idx[i]] = {
                "u": u.copy(), "v": v.copy(), "phi": (u - chi).copy(),
                "chi": chi.copy()}
        if i == steps:
            break
        nonlin = st.nonlinearity(u, v)
        if have_noise:
            f_hat = config.noise_amplitude \
                * np.fft.rfftn(xi_eps.values[i], axes=st.ax)
            chi_hat = st.decay * chi_hat + st.gain * f_hat
        else:
            f_hat = None
            chi_hat = st.decay * chi_hat
        if remainder:
            phi_hat = st.step_u(phi_hat, nonlin, None)
        else:
            u_hat = st.step_u(u_hat, nonlin, f_hat)
        v = st.step_v(v, u)
        if remainder:
            phi = st.to_real(phi_hat)
        else:
            u = st.to_real(u_hat)

    manifest = {
        "d": spec.d, "formulation": spec.formulation,
        "F": spec.F.text(), "A1": list(spec.Q.A1),
        "A2": [list(r) for r in spec.Q.A2], "taper_T": spec.Q.T,
        "renorm": None if spec.renorm is None else {
            "C0": float(spec.renorm.C0), "C1": float(spec.renorm.C1_sys),
            "C2": [float(c) for c in spec.renorm.C2_sys],
            "C_eps": float(spec.renorm.C_eps)},
        "n_space": config.n_space, "dt": config.dt, "t_end": config.t_end,
        "eps": config.eps, "seed": config.seed, "cutoff": config.cutoff,
        "eta": config.eta, "gamma": config.gamma,
        "noise_amplitude": config.noise_amplitude,
        "noise_checksum": xi.checksum() if xi is not None else None,
    }
    return RunResult(times=np.asarray(times),
                     norms={k: np.asarray(val) for k, val in series.items()},
                     snapshots=snapshots, termination=termination,
                     t_star=t_star, manifest=manifest)


# ---------------------------------------------------------------------------
# counterterms per scale
# ---------------------------------------------------------------------------

def counterterms_for(spec_F: CubicPolynomial, d: int, eps: float,
                     kernel: Optional[TruncatedKernel] = None,
                     with_C2: Optional[bool] = None) -> CounterTerms:
    """Scale-dependent counterterms for a nonlinearity.

    In two dimensions only C1 enters, so the correlation-function pipeline
    is skipped entirely.
    """
    full = d == 3 if with_C2 is None else with_C2
    if kernel is None:
        kernel = build_truncated_kernel(d)
    if full:
        consts = kernel_constants(d, eps, kernel=kernel, full=True)
    else:
        keps = mollify_kernel(kernel, eps)
        consts = KernelConstants(d=d, eps=eps, C1=keps.squared_integral(),
                                 Q1_0=0.0, Q2_0=0.0)
    beta1 = float(spec_F.beta1)
    gamma1 = float(spec_F.gamma1)
    gamma2 = tuple(float(spec_F.gamma2(i))
                   for i in range(1, spec_F.n_channels + 1))
    return assemble_C(beta1, gamma1, gamma2, consts)


# ---------------------------------------------------------------------------
# lockstep epsilon sweep
# ---------------------------------------------------------------------------

@dataclass
class SweepReport:
    eps: list
    t_star: float
    D: dict
    contraction: dict
    noise_checksum: str
    constants: dict
    manifest: dict


class _FIRMollifier:
    """Per-scale spectral mollification of a shared raw noise stream."""

    def __init__(self, lat: Lattice, eps: float, spec: MollifierSpec):
        self.wt = _temporal_weights(spec, eps, lat.dt)
        self.half = (len(self.wt) - 1) // 2
        self.rho_hat = mollifier_transform(spec, eps, lat.k_magnitudes())

    def slice_hat(self, raw_hat: np.ndarray, i: int) -> np.ndarray:
        lo = max(0, i - self.half)
        hi = min(raw_hat.shape[0], i + self.half + 1)
        w = self.wt[self.half - (i - lo): self.half + (hi - i)]
        acc = np.tensordot(w, raw_hat[lo:hi], axes=(0, 0))
        return acc * self.rho_hat


def epsilon_sweep(spec: SystemSpec, config: RunConfig,
                  eps_list: Sequence[float], t_star: float = 0.1,
                  modes: Sequence[str] = ("renormalised", "unrenormalised"),
                  ) -> SweepReport:
    """Common-noise sweep: runs at every scale and its half, in lockstep.

    Reports D(eps) = ||x^eps - x^{eps/2}|| (sup and L2) at t_star for the
    channels u, v, phi, for renormalised and unrenormalised dynamics, plus
    the discrete slow-channel contraction data.
    """
    eps_list = sorted((float(e) for e in eps_list), reverse=True)
    if not eps_list:
        raise ValueError("empty scale list")
    scales = sorted({e for e in eps_list} | {e / 2 for e in eps_list},
                    reverse=True)
    d = spec.d
    if min(scales) < 2.0 / config.n_space:
        raise ValueError("finest scale %g below the resolution guard %g"
                         % (min(scales), 2.0 / config.n_space))
    steps = int(round(t_star / config.dt))
    i_star = steps
    pad = int(math.ceil(0.25 * max(scales) ** 2 / config.dt)) + 2
    lat = Lattice(d=d, n_space=config.n_space, n_time=steps + pad,
                  t_end=(steps + pad) * config.dt)
    xi = sample_white_noise(lat, config.seed)
    ax = tuple(range(1, d + 1))
    raw_hat = np.fft.rfftn(xi.values, axes=ax)
    mspec = MollifierSpec(d)
    firs = {e: _FIRMollifier(lat, e, mspec) for e in scales}

    K = build_truncated_kernel(d)
    constants = {}
    steppers = {}
    for mode in modes:
        for e in scales:
            if mode == "renormalised":
                if e not in constants:
                    constants[e] = counterterms_for(spec.F, d, e, kernel=K)
                sysspec = replace(spec, renorm=constants[e],
                                  formulation="direct")
            else:
                sysspec = replace(spec, renorm=None, formulation="direct")
            steppers[(mode, e)] = Stepper(sysspec, config.n_space, config.dt)

    u0, v0 = initial_data(d, config.n_space, config.seed + 1, eta=config.eta,
                          gamma=config.gamma, n_v=spec.Q.n,
                          u0=config.u0, v0=config.v0)
    u0_hat = np.fft.rfftn(u0, axes=tuple(range(0, d)))
    state = {}
    for key, st in steppers.items():
        state[key] = {"u": u0.copy(), "u_hat": u0_hat.copy(),
                      "v": v0.copy(), "chi_hat": np.zeros_like(u0_hat)}

    # pairwise difference tracking at matching record times
    pairs = [(e, e / 2) for e in eps_list]
    track = {mode: {p: {"du": [], "dv": [], "dphi": [], "t": []}
                    for p in pairs} for mode in modes}

    for i in range(steps + 1):
        record = (i % config.record_every == 0) or i == i_star
        for mode in modes:
            if record:
                for (ea, eb) in pairs:
                    sa, sb = state[(mode, ea)], state[(mode, eb)]
                    rec = track[mode][(ea, eb)]
                    rec["t"].append(i * config.dt)
                    rec["du"].append(_norm_pair(sa["u"] - sb["u"]))
                    rec["dv"].append(_norm_pair(sa["v"] - sb["v"]))
                    chi_a = np.fft.irfftn(sa["chi_hat"],
                                          s=(config.n_space,) * d,
                                          axes=tuple(range(d)))
                    chi_b = np.fft.irfftn(sb["chi_hat"],
                                          s=(config.n_space,) * d,
                                          axes=tuple(range(d)))
                    rec["dphi"].append(_norm_pair(
                        (sa["u"] - chi_a) - (sb["u"] - chi_b)))
        if i == steps:
            break
        f_hats = {e: firs[e].slice_hat(raw_hat, i) for e in scales}
        for mode in modes:
            for e in scales:
                st = steppers[(mode, e)]
                s = state[(mode, e)]
                if not np.all(np.isfinite(s["u"])) or \
                        float(np.max(np.abs(s["u"]))) > config.cutoff:
                    raise RuntimeError(
                        "sweep run (%s, eps=%g) left the stable regime at "
                        "t=%g" % (mode, e, i * config.dt))
                nonlin = st.nonlinearity(s["u"], s["v"])
                s["u_hat"] = st.step_u(s["u_hat"], nonlin, f_hats[e])
                s["chi_hat"] = st.decay * s["chi_hat"] + st.gain * f_hats[e]
                s["v"] = st.step_v(s["v"], s["u"])
                s["u"] = st.to_real(s["u_hat"])

    q_l1 = spec.Q.l1_norm()
    D = {mode: {"u": [], "v": [], "phi": []} for mode in modes}
    contraction = {"q_l1": q_l1, "pairs": {}}
    for mode in modes:
        for p in pairs:
            rec = track[mode][p]
            D[mode]["u"].append(rec["du"][-1])
            D[mode]["v"].append(rec["dv"][-1])
            D[mode]["phi"].append(rec["dphi"][-1])
            du_l2 = np.asarray([x[1] for x in rec["du"]])
            dv_l2 = np.asarray([x[1] for x in rec["dv"]])
            run_sup = np.maximum.accumulate(du_l2)
            with np.errstate(divide="ignore", invalid="ignore"):
                ratio = np.where(run_sup > 0, dv_l2 / np.maximum(
                    run_sup, 1e-300), 0.0)
            contraction["pairs"][(mode,) + p] = {
                "t": np.asarray(rec["t"]),
                "dv_l2": dv_l2, "du_running_sup": run_sup,
                "max_ratio": float(np.max(ratio)),
            }
    manifest = {
        "eps_list": eps_list, "scales": scales, "t_star": t_star,
        "seed": config.seed, "n_space": config.n_space, "dt": config.dt,
        "F": spec.F.text(), "modes": list(modes),
        "constants": {e: {"C0": float(c.C0), "C1": float(c.C1_sys),
                          "C2": [float(x) for x in c.C2_sys],
                          "C_eps": float(c.C_eps)}
                      for e, c in constants.items()},
    }
    return SweepReport(eps=eps_list, t_star=t_star, D=D,
                       contraction=contraction,
                       noise_checksum=xi.checksum(), constants=constants,
                       manifest=manifest)


def koper_system(eps1: float = 0.1, k: float = -10.0) -> SystemSpec:
    """Two slow channels with the singular drift matrix of the Koper family."""
    F = CubicPolynomial(sympy.sympify("3*u + v1 - u**3"), 2)
    Q = QSpec(A1=(eps1 * k, 0.0),
              A2=((-2 * eps1, eps1), (eps1, -eps1)))
    return SystemSpec(d=2, F=F, Q=Q)
