"""Roughness-penalized conversion of sampled curves into basis coefficients.

The fit minimizes, per curve, the residual sum of squares plus
lambda * c' R_n c where R_n is the basis roughness penalty.  The smoothing
parameter (and optionally the basis dimension) is chosen on a grid by one of
four information criteria.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .basis import BasisSystem, Domain, make_basis, min_basis_size
from .errors import ConfigurationError, NumericError, RankError, SelectionError

CRITERIA = ("gcv", "gic", "maic", "gbic")

_MAX_CONDITION = 1e12
_EIG_FLOOR = 1e-10  # relative threshold for rank / pseudo-determinant


@dataclass
class SampledCurves:
    """N curves observed on a shared, strictly increasing grid of J points."""

    grid: np.ndarray
    values: np.ndarray
    label: str = ""
    curve_ids: list[str] | None = None

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if self.grid.ndim != 1 or self.grid.size < 2:
            raise ConfigurationError("grid must hold at least two points")
        if np.any(np.diff(self.grid) <= 0):
            raise ConfigurationError("grid must be strictly increasing")
        if self.values.shape[1] != self.grid.size:
            raise ConfigurationError(
                f"values have {self.values.shape[1]} columns, grid has {self.grid.size}"
            )
        if not np.all(np.isfinite(self.grid)) or not np.all(np.isfinite(self.values)):
            raise ConfigurationError("curves contain non-finite entries")
        if self.curve_ids is None:
            self.curve_ids = [f"curve{i}" for i in range(self.values.shape[0])]
        elif len(self.curve_ids) != self.values.shape[0]:
            raise ConfigurationError("curve_ids length must match number of curves")

    @property
    def n_curves(self) -> int:
        return self.values.shape[0]

    @property
    def n_points(self) -> int:
        return self.grid.size

    @property
    def domain(self) -> Domain:
        return Domain(float(self.grid[0]), float(self.grid[-1]))


@dataclass
class SmoothedCurves:
    """Coefficient representation of curves in a basis, with fit diagnostics.

    df is the trace of the per-curve projection matrix
    S_lambda = Phi (Phi'Phi + lambda R)^{-1} Phi'.
    """

    coefficients: np.ndarray
    basis: BasisSystem
    lam: float
    penalty: np.ndarray
    df: float
    criterion: str = ""
    criterion_value: float = float("nan")
    label: str = ""
    curve_ids: list[str] | None = None

    @property
    def n_curves(self) -> int:
        return self.coefficients.shape[0]

    def values_on(self, points) -> np.ndarray:
        """Reconstruct the smoothed curves at the given points."""
        return self.coefficients @ self.basis.evaluate(points).T


@dataclass
class SelectionGrid:
    """Search grid for the smoothing stage."""

    log10_lambda: np.ndarray = field(
        default_factory=lambda: np.linspace(-10.0, 10.0, 100)
    )
    K_candidates: tuple[int, ...] = tuple(range(4, 21))

    def __post_init__(self):
        self.log10_lambda = np.asarray(self.log10_lambda, dtype=float)
        if self.log10_lambda.size == 0 or not np.all(np.isfinite(self.log10_lambda)):
            raise ConfigurationError("lambda grid must be non-empty and finite")
        if len(self.K_candidates) == 0:
            raise ConfigurationError("K candidate list must be non-empty")

    @property
    def lambdas(self) -> np.ndarray:
        return 10.0 ** self.log10_lambda


def _solve_penalized(gram_phi: np.ndarray, pen: np.ndarray, lam: float, rhs: np.ndarray):
    """Solve (Phi'Phi + lam R) x = rhs, Cholesky first, pivoted LU fallback."""
    a = gram_phi + lam * pen
    try:
        c, low = scipy.linalg.cho_factor(a)
        return scipy.linalg.cho_solve((c, low), rhs)
    except scipy.linalg.LinAlgError:
        lu, piv = scipy.linalg.lu_factor(a)
        return scipy.linalg.lu_solve((lu, piv), rhs)


def penalized_fit(
    curves: SampledCurves,
    basis: BasisSystem,
    lam: float,
    deriv_order: int = 2,
    penalty: np.ndarray | None = None,
) -> SmoothedCurves:
    """Fit all curves simultaneously by penalized least squares.

    Parameters
    ----------
    curves : observed data on a shared grid.
    basis : basis system covering the curve domain.
    lam : nonnegative smoothing parameter.
    deriv_order : derivative order of the roughness penalty (default 2).
    penalty : precomputed penalty matrix, to avoid recomputing in grid loops.
    """
    if lam < 0:
        raise ConfigurationError("smoothing parameter must be nonnegative")
    phi = basis.evaluate(curves.grid)
    if penalty is None:
        penalty = basis.penalty_matrix(deriv_order)
    if lam == 0 and basis.K > curves.n_points:
        raise RankError(
            f"K={basis.K} basis functions on J={curves.n_points} points is singular "
            "at lambda=0; increase lambda or reduce K"
        )
    gram_phi = phi.T @ phi
    a = gram_phi + lam * penalty
    cond = np.linalg.cond(a)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise RankError(
            f"penalized normal equations are ill-conditioned (cond ~ {cond:.2e}); "
            "increase lambda or reduce K"
        )
    coef = _solve_penalized(gram_phi, penalty, lam, phi.T @ curves.values.T).T
    df = float(np.trace(_solve_penalized(gram_phi, penalty, lam, gram_phi)))
    return SmoothedCurves(
        coefficients=coef,
        basis=basis,
        lam=float(lam),
        penalty=penalty,
        df=df,
        label=curves.label,
        curve_ids=list(curves.curve_ids),
    )


def smoothing_gcv(curves: SampledCurves, fit: SmoothedCurves) -> float:
    """Generalized cross-validation score of a smoothing fit.

    Uses the total residual sum of squares over all curves and the total
    effective degrees of freedom N * trace(S_lambda).
    """
    n, j = curves.values.shape
    resid = curves.values - fit.values_on(curves.grid)
    rss = float(np.sum(resid**2))
    total = n * j
    df_total = n * fit.df
    denom = 1.0 - df_total / total
    if denom <= 0 or not np.isfinite(denom) or denom < 1e-12:
        raise NumericError(
            "GCV undefined: effective degrees of freedom equal the observation count"
        )
    return rss / (total * denom**2)


def _pseudo_logdet(mat: np.ndarray) -> tuple[float, int]:
    """Log pseudo-determinant and rank using the relative eigenvalue floor."""
    eig = np.linalg.eigvalsh(mat)
    top = eig.max() if eig.size else 0.0
    keep = eig[eig > _EIG_FLOOR * max(top, 1e-300)]
    return float(np.sum(np.log(keep))), int(keep.size)


def _stage_loglik_terms(curves: SampledCurves, fit: SmoothedCurves):
    """Per-curve residuals and profiled variances for the working likelihood."""
    resid = curves.values - fit.values_on(curves.grid)
    sig2 = np.mean(resid**2, axis=1)
    return resid, sig2


def _stage_maic(curves: SampledCurves, fit: SmoothedCurves) -> float:
    n, j = curves.values.shape
    _, sig2 = _stage_loglik_terms(curves, fit)
    if np.any(sig2 <= 0):
        return -np.inf  # exact interpolation wins outright
    m2ll = float(np.sum(j * np.log(2 * np.pi * sig2) + j))
    return m2ll + 2.0 * n * fit.df


def _stage_info_criteria(
    curves: SampledCurves,
    fit: SmoothedCurves,
    phi: np.ndarray,
    which: str,
) -> float:
    """Smoothing-stage GIC or GBIC.

    Each curve is a penalized Gaussian regression y = Phi c + e with its own
    profiled variance; per-curve criterion values are summed.  The empirical
    information matrices are the per-observation analogues of the
    regression-stage R_lambda / Q_lambda, assembled in batch across curves.
    """
    n, j = curves.values.shape
    k = fit.basis.K
    lam = fit.lam
    pen = fit.penalty
    resid, sig2 = _stage_loglik_terms(curves, fit)
    if np.any(sig2 <= 0):
        return -np.inf
    kappa = lam / sig2  # per-curve penalty weight in likelihood units

    gram_phi = phi.T @ phi
    coef = fit.coefficients
    pen_coef = coef @ pen  # rows: R c_i

    # negative average Hessian of the penalized log-likelihood, per curve
    r_cc = (gram_phi[None, :, :] + lam * pen[None, :, :]) / (j * sig2)[:, None, None]
    r_cs = (resid @ phi) / (j * sig2**2)[:, None]
    r_ss = 1.0 / (2.0 * sig2**2)
    r_mat = np.empty((n, k + 1, k + 1))
    r_mat[:, :k, :k] = r_cc
    r_mat[:, :k, k] = r_cs
    r_mat[:, k, :k] = r_cs
    r_mat[:, k, k] = r_ss

    m2ll = j * np.log(2 * np.pi * sig2) + j

    if which == "gbic":
        lpdet_pen, rank_pen = _pseudo_logdet(pen)
        q_free = k - rank_pen
        sign, logdet = np.linalg.slogdet(r_mat)
        if np.any(sign <= 0):
            raise NumericError("smoothing-stage GBIC Hessian is not positive definite")
        pen_quad = kappa * np.einsum("ik,ik->i", coef, pen_coef)
        prior_logdet = rank_pen * np.log(kappa / j) + lpdet_pen
        vals = (
            m2ll
            + pen_quad
            + (1 + q_free) * (np.log(j) - np.log(2 * np.pi))
            - prior_logdet
            + logdet
        )
        return float(np.sum(vals))

    # GIC: per-observation scores, penalized score on the left factor
    sc_c = np.einsum("ij,jk->ijk", resid, phi) / sig2[:, None, None]
    sc_s = -1.0 / (2 * sig2)[:, None] + resid**2 / (2 * sig2**2)[:, None]
    scores = np.concatenate((sc_c, sc_s[:, :, None]), axis=2)
    pen_shift = (kappa[:, None] * pen_coef) / j
    scores_pen = scores.copy()
    scores_pen[:, :, :k] -= pen_shift[:, None, :]
    q_mat = np.einsum("ijp,ijq->ipq", scores_pen, scores) / j
    try:
        solved = np.linalg.solve(r_mat, q_mat)
    except np.linalg.LinAlgError as exc:
        raise NumericError(f"smoothing-stage GIC information matrix singular: {exc}")
    trace_term = np.einsum("ipp->i", solved)
    return float(np.sum(m2ll + 2.0 * trace_term))


def smoothing_criterion(
    curves: SampledCurves, fit: SmoothedCurves, criterion: str
) -> float:
    """Evaluate one of the four smoothing-stage criteria on a fit."""
    which = criterion.lower()
    if which not in CRITERIA:
        raise ConfigurationError(f"unknown criterion {criterion!r}")
    if which == "gcv":
        return smoothing_gcv(curves, fit)
    resid = curves.values - fit.values_on(curves.grid)
    scale = float(np.mean(curves.values**2)) + 1e-300
    if float(np.mean(resid**2)) <= 1e-24 * scale:
        # residuals at double-precision roundoff: exact interpolation, which
        # every likelihood-based criterion prefers outright
        return -np.inf
    if which == "maic":
        return _stage_maic(curves, fit)
    phi = fit.basis.evaluate(curves.grid)
    if which == "gbic" and fit.lam <= 0:
        raise NumericError("GBIC needs a positive smoothing parameter")
    return _stage_info_criteria(curves, fit, phi, which)


def select_smoothing(
    curves: SampledCurves,
    basis_kind: str,
    grid: SelectionGrid,
    criterion: str,
    fix_K: int | None = None,
    deriv_order: int = 2,
    order: int = 4,
) -> SmoothedCurves:
    """Pick the (K, lambda) pair minimizing a criterion over the grid.

    With fix_K only the smoothing parameter is searched.  Ties are broken
    toward the larger lambda.  Candidates whose normal equations are singular
    are skipped; if every candidate fails a SelectionError is raised.
    """
    which = criterion.lower()
    if which not in CRITERIA:
        raise ConfigurationError(f"unknown criterion {criterion!r}")
    if fix_K is not None:
        k_list = [int(fix_K)]
    else:
        k_list = [
            k
            for k in grid.K_candidates
            if k >= min_basis_size(basis_kind, order) and k <= curves.n_points
        ]
        if not k_list:
            raise SelectionError("no admissible K candidate for this basis")

    domain = curves.domain
    best = None  # (value, lam, K, fit)
    failures = 0
    for k in k_list:
        kwargs = {"order": order} if basis_kind.lower().startswith("b") else {}
        basis = make_basis(basis_kind, k, domain, **kwargs)
        pen = basis.penalty_matrix(deriv_order)
        for lam in grid.lambdas:
            if which == "gbic" and lam <= 0:
                continue
            try:
                fit = penalized_fit(curves, basis, lam, penalty=pen)
                value = smoothing_criterion(curves, fit, which)
            except (RankError, NumericError):
                failures += 1
                continue
            if np.isnan(value):
                failures += 1
                continue
            if best is None or value < best[0] or (value == best[0] and lam > best[1]):
                best = (value, lam, k, fit)
    if best is None:
        raise SelectionError(
            f"all {failures} grid candidates failed for basis {basis_kind!r}"
        )
    value, lam, k, fit = best
    return replace(fit, criterion=which, criterion_value=float(value))
