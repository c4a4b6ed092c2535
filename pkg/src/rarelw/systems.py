"""Benchmark input-to-response systems and ground-truth response densities.

Three ODE systems are driven by two-term Karhunen-Loeve forcings or
wave groups and integrated with fixed-step RK4 in the compiled backend.
Synthetic systems wrap GP prior realizations.  Every system is exposed
through :class:`System` so the experiment driver treats them uniformly.
"""
import hashlib
import json
import logging
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _backend
from .density import DEFAULT_FLOOR, DEFAULT_GRID, estimate_pdf
from .errors import DivergenceError, NonFiniteInputError
from .gp import KernelConfig, sample_prior_realization
from .inputs import HalfPlaneTruncatedNormal, StandardNormal

logger = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6


# -- Karhunen-Loeve ------------------------------------------------------------

@dataclass(frozen=True)
class KLExpansion:
    """Leading eigenpairs of ``variance * exp(-tau^2 / (2 l^2))`` on ``[t0, t1]``.

    ``vectors[:, i]`` samples the eigenfunction ``phi_i`` on ``nodes``,
    normalized so that ``sum(weights * phi_i**2) = 1``.
    """

    variance: float
    lengthscale: float
    t_span: tuple
    nodes: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    vectors: np.ndarray
    sqrt_eigenvalues: bool = False

    @property
    def n_terms(self):
        return self.eigenvalues.size

    @property
    def coefficients(self):
        """Per-term amplitude: ``lambda_i`` as printed, or ``sqrt(lambda_i)``."""
        return np.sqrt(self.eigenvalues) if self.sqrt_eigenvalues else self.eigenvalues

    def correlation(self, s, t):
        s = np.asarray(s, dtype=float)[..., None]
        t = np.asarray(t, dtype=float)
        return self.variance * np.exp(-((s - t) ** 2) / (2.0 * self.lengthscale**2))

    def eigenfunctions(self, t):
        """``phi_i(t)`` at arbitrary times via the Nystrom extension; shape ``(n_terms, len(t))``."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        Kt = self.correlation(t, self.nodes)
        return ((Kt * self.weights) @ self.vectors / self.eigenvalues).T

    def basis(self, t):
        """``coefficient_i * phi_i(t)``; the forcing is ``x @ basis(t)``."""
        return self.coefficients[:, None] * self.eigenfunctions(t)

    def process(self, x, t):
        return np.asarray(x, dtype=float) @ self.basis(t)

    def residual(self):
        """Largest relative residual of the discrete eigenproblem."""
        K = self.correlation(self.nodes, self.nodes)
        R = (K * self.weights) @ self.vectors - self.vectors * self.eigenvalues
        return float(np.abs(R).max() / self.eigenvalues.max())


def kl_expand(variance, lengthscale, t_span, grid=501, n_terms=2, sqrt_eigenvalues=False):
    """Nystrom discretization (trapezoid weights) of the squared-exponential correlation."""
    if grid < 100:
        raise ValueError(f"grid must have at least 100 nodes, got {grid}")
    t0, t1 = float(t_span[0]), float(t_span[1])
    nodes = np.linspace(t0, t1, grid)
    w = np.full(grid, (t1 - t0) / (grid - 1))
    w[0] *= 0.5
    w[-1] *= 0.5
    sw = np.sqrt(w)
    K = variance * np.exp(-((nodes[:, None] - nodes[None, :]) ** 2) / (2.0 * lengthscale**2))
    lam, V = np.linalg.eigh(sw[:, None] * K * sw[None, :])
    lam, V = lam[::-1][:n_terms], V[:, ::-1][:, :n_terms]
    if np.any(lam <= 0):
        raise ValueError("correlation discretization is not positive definite")
    phi = V / sw[:, None]
    # deterministic sign: first node positive (largest entry if the first is ~0)
    for i in range(n_terms):
        ref = phi[0, i] if abs(phi[0, i]) > 1e-8 else phi[np.argmax(np.abs(phi[:, i])), i]
        if ref < 0:
            phi[:, i] = -phi[:, i]
    return KLExpansion(float(variance), float(lengthscale), (t0, t1), nodes, w, lam, phi,
                       bool(sqrt_eigenvalues))


def _half_step_basis(kl, dt, nsteps):
    t = np.arange(2 * nsteps + 1) * (0.5 * dt)
    B = kl.basis(t)
    return np.ascontiguousarray(B[0]), np.ascontiguousarray(B[1])


def _points(x, d):
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(x, dtype=np.float64)))
    if X.shape[1] != d:
        raise ValueError(f"expected {d} inputs per row, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise NonFiniteInputError("inputs contain NaN or infinity")
    return X


def _finish(out, status, X, cap, scalar):
    bad = status.astype(bool)
    if bad.any():
        if cap is None:
            raise DivergenceError(f"solver diverged at {int(bad.sum())} input(s)", X[bad][0])
        out = np.where(bad, cap, out)
    return float(out[0]) if scalar else out


def _steps(t_end, dt):
    n = int(round(t_end / dt))
    if not np.isclose(n * dt, t_end, rtol=1e-12, atol=1e-12):
        raise ValueError(f"t_end={t_end} is not a multiple of dt={dt}")
    return n


# -- oscillator -----------------------------------------------------------------

@dataclass(frozen=True)
class OscillatorParams:
    delta: float = 1.5
    alpha: float = 1.0
    beta: float = 0.1
    u1: float = 0.5
    u2: float = 1.5
    variance: float = 0.1
    lengthscale: float = 4.0
    t_end: float = 25.0
    dt: float = 0.01
    kl_grid: int = 501
    sqrt_eigenvalues: bool = False
    divergence_limit: float = DIVERGENCE_LIMIT


def restoring_force(u, params=OscillatorParams()):
    """Piecewise restoring force, extended as an odd function of ``u``."""
    u = np.asarray(u, dtype=float)
    au = np.abs(u)
    a, u1, u2 = params.alpha, params.u1, params.u2
    mag = np.where(au <= u1, a * au, np.where(au <= u2, a * u1, a * u1 + params.beta * (au - u2) ** 3))
    return np.sign(u) * mag


def oscillator_kl(params=OscillatorParams()):
    return kl_expand(params.variance, params.lengthscale, (0.0, params.t_end), params.kl_grid,
                     2, params.sqrt_eigenvalues)


def oscillator_response(x, params=OscillatorParams(), kl=None, cap=None):
    """Time average of ``u`` over the window; scalar for one input, array for a batch."""
    scalar = np.ndim(x) == 1
    X = _points(x, 2)
    kl = kl or oscillator_kl(params)
    nsteps = _steps(params.t_end, params.dt)
    g1, g2 = _half_step_basis(kl, params.dt, nsteps)
    out, status = _backend.call("oscillator_batch", X, g1, g2, params.dt, nsteps, params.delta,
                                params.alpha, params.beta, params.u1, params.u2,
                                params.divergence_limit)
    return _finish(out, status, X, cap, scalar)


# -- SIR --------------------------------------------------------------------------

@dataclass(frozen=True)
class SirParams:
    delta: float = 0.0
    gamma: float = 0.1
    beta0: float = 3e-9
    phi0: float = 2.55
    variance: float = 0.1
    lengthscale: float = 4.0
    S0: float = 1e8
    I0: float = 50.0
    R0: float = 0.0
    t_end: float = 20.0
    dt: float = 0.01
    kl_grid: int = 501
    sqrt_eigenvalues: bool = False
    divergence_limit: float = 10.0


def sir_kl(params=SirParams()):
    return kl_expand(params.variance, params.lengthscale, (0.0, params.t_end), params.kl_grid,
                     2, params.sqrt_eigenvalues)


@dataclass(frozen=True)
class SirDiagnostics:
    infected: np.ndarray
    clamped: np.ndarray
    conservation_error: np.ndarray


def sir_run(x, params=SirParams(), kl=None):
    """Integrate the compartments; returns raw outputs with clamp and conservation diagnostics."""
    X = _points(x, 2)
    kl = kl or sir_kl(params)
    nsteps = _steps(params.t_end, params.dt)
    b1, b2 = _half_step_basis(kl, params.dt, nsteps)
    out, status, clamped, cons = _backend.call(
        "sir_batch", X, b1, b2, params.dt, nsteps, params.beta0, params.phi0, params.gamma,
        params.delta, params.S0, params.I0, params.R0, params.divergence_limit)
    return out, status, SirDiagnostics(out, clamped.astype(bool), cons)


def sir_response(x, params=SirParams(), kl=None, cap=None):
    """Infected count at the end of the window."""
    scalar = np.ndim(x) == 1
    out, status, diag = sir_run(x, params, kl)
    if diag.clamped.any():
        logger.debug("SIR transmission rate clamped at 0 for %d input(s)", int(diag.clamped.sum()))
    return _finish(out, status, _points(x, 2), cap, scalar)


# -- ship roll --------------------------------------------------------------------

@dataclass(frozen=True)
class ShipParams:
    a1: float = 0.1
    a2: float = 0.1
    b1: float = 1.0
    b2: float = 0.1
    e1: float = 1.0
    e2: float = 1.0
    Tp: float = 15.0
    gamma_p: float = np.pi / 2
    steps_per_period: int = 200
    n_periods: float = 10.0
    half_space: bool = True
    divergence_limit: float = DIVERGENCE_LIMIT


def wave_elevation(t, T):
    z = (np.asarray(t, dtype=float) - 5.0 * T) / (2.0 * T)
    return np.exp(-0.5 * z * z) * np.sin(2.0 * np.pi * np.asarray(t) / T)


def ship_response(x, params=ShipParams(), cap=None):
    """Peak absolute roll over ``[0, n_periods * T]`` for inputs ``(T, gamma)``."""
    scalar = np.ndim(x) == 1
    X = _points(x, 2)
    if np.any(X[:, 0] <= 0):
        raise ValueError("wave period T must be positive")
    out, status = _backend.call("ship_batch", X, int(params.steps_per_period),
                                float(params.n_periods), params.a1, params.a2, params.b1,
                                params.b2, params.e1, params.e2, params.divergence_limit)
    return _finish(out, status, X, cap, scalar)


def ship_distribution(params=ShipParams()):
    means = [params.Tp, params.gamma_p]
    stds = [params.Tp / 4, params.gamma_p / 4]
    if params.half_space:
        return HalfPlaneTruncatedNormal(means, stds, dim=1, upper=params.gamma_p, positive=(0,))
    return HalfPlaneTruncatedNormal(means, stds, dim=1, upper=np.inf, positive=(0,))


# -- synthetic ---------------------------------------------------------------------

SYNTHETIC_BOX = (-6.0, 6.0)
SYNTHETIC_GRID = {2: 80, 3: 40}


def make_synthetic_function(family, d, seed, grid_per_dim=None, nu=1.5):
    """GP prior draw with amplitude 2 and unit lengthscales on ``[-6, 6]^d``."""
    if d not in (2, 3):
        raise ValueError(f"synthetic functions are 2D or 3D, got d={d}")
    kernel = KernelConfig(family, 2.0, (1.0,) * d, nu)
    grid = grid_per_dim or SYNTHETIC_GRID[d]
    f = sample_prior_realization(kernel, [SYNTHETIC_BOX] * d, grid, seed)
    meta = {"family": family, "d": d, "seed": int(seed), "amplitude": 2.0,
            "lengthscales": [1.0] * d, "nu": nu if family == "Matern" else None,
            "grid_per_dim": grid, "box": list(SYNTHETIC_BOX)}
    return f, meta


# -- registry ------------------------------------------------------------------------

@dataclass
class System:
    """An input distribution paired with a deterministic batch response function."""

    name: str
    dim: int
    distribution: object
    response: object
    params: dict = field(default_factory=dict)
    description: str = ""
    function_seed: int = None

    def __call__(self, X, cap=None):
        return self.response(np.atleast_2d(np.asarray(X, dtype=float)), cap)

    def fingerprint(self):
        blob = json.dumps({"name": self.name, "params": self.params,
                           "function_seed": self.function_seed}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _logistic(X, cap=None):
    return 1.0 / (1.0 + np.exp(-X[:, 0]))


def _identity(X, cap=None):
    return X[:, 0].copy()


def _merge(cls, overrides):
    known = {f for f in cls.__dataclass_fields__}
    bad = set(overrides) - known
    if bad:
        raise KeyError(f"unknown {cls.__name__} field(s): {sorted(bad)}")
    return cls(**overrides)


def get_system(name, params=None, function_seed=0):
    params = dict(params or {})
    if name == "oscillator":
        p = _merge(OscillatorParams, params)
        kl = oscillator_kl(p)
        return System(name, 2, StandardNormal(2), lambda X, cap=None: oscillator_response(X, p, kl, cap),
                      asdict(p), "forced nonlinear oscillator, time-mean displacement")
    if name == "sir":
        p = _merge(SirParams, params)
        kl = sir_kl(p)
        return System(name, 2, StandardNormal(2), lambda X, cap=None: sir_response(X, p, kl, cap),
                      asdict(p), "SIR epidemic with random transmission rate, final infections")
    if name == "ship":
        p = _merge(ShipParams, params)
        return System(name, 2, ship_distribution(p), lambda X, cap=None: ship_response(X, p, cap),
                      asdict(p), "nonlinear ship roll in a wave group, peak roll angle")
    if name == "synthetic":
        family = params.pop("family", "RBF")
        d = int(params.pop("d", 2))
        grid = params.pop("grid_per_dim", None)
        nu = float(params.pop("nu", 1.5))
        if params:
            raise KeyError(f"unknown synthetic parameter(s): {sorted(params)}")
        f, meta = make_synthetic_function(family, d, function_seed, grid, nu)
        return System(name, d, StandardNormal(d), lambda X, cap=None: f(X),
                      {k: meta[k] for k in ("family", "d", "grid_per_dim", "nu")},
                      "GP prior realization", function_seed)
    if name in ("logistic", "identity"):
        if params:
            raise KeyError(f"{name} takes no parameters")
        fn = _logistic if name == "logistic" else _identity
        return System(name, 1, StandardNormal(1), fn, {}, f"1D {name} fixture")
    raise KeyError(f"unknown system {name!r}; choose from {', '.join(SYSTEM_NAMES)}")


SYSTEM_NAMES = ("oscillator", "sir", "ship", "synthetic", "logistic", "identity")


def list_systems():
    """Name, dimension, input distribution and default parameters of each built-in system."""
    out = []
    for name in SYSTEM_NAMES:
        s = get_system(name)
        out.append({"name": name, "dim": s.dim, "inputs": s.distribution.describe(),
                    "params": s.params, "description": s.description})
    return out


# -- ground truth --------------------------------------------------------------------

@dataclass(frozen=True)
class GroundTruth:
    pdf: object
    X: np.ndarray
    y: np.ndarray


def ground_truth_pdf(f, dist, m, seed, grid_size=DEFAULT_GRID, floor=DEFAULT_FLOOR,
                     cache_dir=None, cache_key=None, cap=None, chunk=20000):
    """Evaluate ``f`` on ``m`` i.i.d. draws from ``dist`` and estimate the response density.

    With ``cache_dir`` and ``cache_key`` set, the inputs and responses are
    stored in ``<cache_dir>/<cache_key>-<seed>-<m>.npz`` and reused.
    """
    if m < 10_000:
        raise ValueError(f"ground truth needs m >= 10000 samples, got {m}")
    path = None
    if cache_dir is not None and cache_key is not None:
        path = os.path.join(cache_dir, f"{cache_key}-{int(seed)}-{int(m)}.npz")
        if os.path.exists(path):
            with np.load(path) as data:
                X, y = data["X"], data["y"]
            return GroundTruth(estimate_pdf(y, grid_size, floor), X, y)
    X = np.ascontiguousarray(dist.sample(m, np.random.default_rng(seed)))
    y = np.concatenate([np.asarray(_call(f, X[i:i + chunk], cap), dtype=float).ravel()
                        for i in range(0, m, chunk)])
    if path is not None:
        os.makedirs(cache_dir, exist_ok=True)
        tmp = path + ".tmp.npz"
        np.savez(tmp, X=X, y=y)
        os.replace(tmp, path)
    return GroundTruth(estimate_pdf(y, grid_size, floor), X, y)


def _call(f, X, cap):
    if isinstance(f, System):
        return f(X, cap)
    return f(X)
