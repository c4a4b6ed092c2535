"""Likelihood-weighted acquisition scores over a cached candidate pool.

All weights are formed in log space, ``log p_x - t * log p_fhat``, so the
1e-16 density floor never underflows into a division by zero.
"""
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve

from .density import estimate_pdf, log_pdf_at
from .errors import DuplicatePointError, StalenessError
from .gp import DUPLICATE_FLOOR, _as_points


@dataclass(frozen=True)
class AcquisitionParams:
    """Tail exponent ``t`` and deviation multiplier ``alpha``; (1, 0) is plain LW."""

    t: float = 1.0
    alpha: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.t) and self.t > 0):
            raise ValueError(f"t must be positive, got {self.t}")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise ValueError(f"alpha must be non-negative, got {self.alpha}")

    @property
    def is_lw(self):
        return self.t == 1.0 and self.alpha == 0.0


def _check_fresh(cache, *pdfs):
    for pdf in pdfs:
        if pdf is None or pdf.source_version is None:
            continue
        if pdf.source_version != cache.state_version:
            raise StalenessError(
                f"density built from surrogate version {pdf.source_version}, "
                f"cache holds version {cache.state_version}")


def _log_px(cache, p_x_log):
    p_x_log = np.asarray(p_x_log, dtype=float)
    if p_x_log.shape != (cache.n_points,):
        raise ValueError(f"p_x_log has shape {p_x_log.shape}, expected ({cache.n_points},)")
    return p_x_log


def lw_scores(cache, p_x_log, pdf_hat):
    """``vars_i * p_x(x_i) / p_fhat(mean_i)`` for every pool point."""
    _check_fresh(cache, pdf_hat)
    lpx = _log_px(cache, p_x_log)
    return cache.variances * np.exp(lpx - log_pdf_at(pdf_hat, cache.means))


def glw_scores(cache, p_x_log, pdf_center, pdf_plus=None, pdf_minus=None, params=None):
    """Generalized score summed over the shifts ``0, +alpha*std, -alpha*std``.

    With ``alpha = 0`` the shifted densities coincide with ``pdf_center``
    and may be omitted; the result is then three times the LW score raised
    to the tail exponent ``t``.
    """
    params = AcquisitionParams() if params is None else params
    if not isinstance(params, AcquisitionParams):
        raise TypeError("params must be an AcquisitionParams")
    if params.alpha == 0.0:
        pdf_plus = pdf_center if pdf_plus is None else pdf_plus
        pdf_minus = pdf_center if pdf_minus is None else pdf_minus
    elif pdf_plus is None or pdf_minus is None:
        raise ValueError("alpha > 0 needs the shifted densities pdf_plus and pdf_minus")
    _check_fresh(cache, pdf_center, pdf_plus, pdf_minus)
    lpx = _log_px(cache, p_x_log)
    means, var = cache.means, cache.variances
    shift = params.alpha * np.sqrt(var)
    total = np.zeros(cache.n_points)
    for pdf, f in ((pdf_center, means), (pdf_plus, means + shift), (pdf_minus, means - shift)):
        total += var * np.exp(lpx - params.t * log_pdf_at(pdf, f))
    return total


def shifted_pdfs(means, std, alpha, grid_size=400, floor=1e-16, source_version=None):
    """KDEs of ``means``, ``means + alpha*std`` and ``means - alpha*std``.

    Returns ``(center, plus, minus)``; for ``alpha = 0`` all three are the
    same object.
    """
    center = estimate_pdf(means, grid_size, floor, source_version)
    if alpha == 0.0:
        return center, center, center
    plus = estimate_pdf(means + alpha * std, grid_size, floor, source_version)
    minus = estimate_pdf(means - alpha * std, grid_size, floor, source_version)
    return center, plus, minus


def hypothetical_variances(candidates, cache, state, floor=DUPLICATE_FLOOR):
    """Pool variances after hypothetically adding each candidate (no response needed).

    Returns an ``(n_points, k)`` array and a boolean mask of candidates that
    coincide exactly with a training input (their column is the unreduced
    variance).  Candidates closer than the duplicate floor otherwise raise.
    """
    kernel = state.kernel
    Xc = _as_points(candidates, kernel.dim)
    var0 = cache.variances
    exact = np.zeros(Xc.shape[0], dtype=bool)
    if state.n:
        exact = (Xc[:, None, :] == state.dataset.X[None, :, :]).all(axis=2).any(axis=1)
        kx = kernel.matrix(state.dataset.X, Xc)
        W = cho_solve((state.chol, True), kx, check_finite=False)
        var_c = kernel.variance + state.jitter - np.einsum("ij,ij->j", kx, W)
        cov = kernel.matrix(cache.points, Xc) - cache.cross_cov @ W
    else:
        var_c = np.full(Xc.shape[0], kernel.variance + state.jitter)
        cov = kernel.matrix(cache.points, Xc)
    near = ~exact & (var_c <= floor * kernel.variance)
    if near.any():
        raise DuplicatePointError(
            f"{int(near.sum())} candidate(s) are already interpolated by the surrogate")
    safe = np.where(exact, 1.0, var_c)
    hyp = var0[:, None] - cov * cov / safe[None, :]
    hyp[:, exact] = var0[:, None]
    return np.maximum(hyp, 0.0), exact


def integral_lw_criterion(candidate, cache, state, pdf_hat):
    """Monte-Carlo estimate of the LW-weighted variance left after sampling ``candidate``.

    The pool is assumed to be drawn from ``p_x``, so the ``p_x`` factor of
    the integrand is absorbed by the sampling and the average is taken over
    ``var(x | D + candidate) / p_fhat(fhat(x))``.  Smaller is better.
    """
    return float(integral_lw_scores(np.atleast_2d(candidate), cache, state, pdf_hat)[0])


def integral_lw_scores(candidates, cache, state, pdf_hat, chunk=64, floor=DUPLICATE_FLOOR):
    """Vectorized :func:`integral_lw_criterion` over the rows of ``candidates``."""
    _check_fresh(cache, pdf_hat)
    if cache.state_version != state.version:
        raise StalenessError("cache and posterior state differ")
    inv_p = np.exp(-log_pdf_at(pdf_hat, cache.means))
    Xc = _as_points(candidates, state.kernel.dim)
    out = np.empty(Xc.shape[0])
    for start in range(0, Xc.shape[0], chunk):
        hyp, _ = hypothetical_variances(Xc[start:start + chunk], cache, state, floor)
        out[start:start + chunk] = inv_p @ hyp / cache.n_points
    return out
