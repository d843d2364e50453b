"""Regression-stage model evaluation criteria (GCV, GIC, MAIC, GBIC).

All four criteria score a fitted coefficient matrix B with error covariance
Sigma against the design (Z, C).  GIC and GBIC need the empirical information
matrices of the penalized Gaussian likelihood; those are assembled from
analytic first and second derivatives with respect to (vec B, vech Sigma).
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    ConfigurationError,
    ConvergenceError,
    NumericError,
    RankError,
    SelectionError,
)
from .regression import DesignBlocks, FofrModel, PenaltySpec, fit_mpl

_EIG_FLOOR = 1e-10
_SIGMA_RIDGE = 1e-10


@dataclass
class CriterionReport:
    """Criterion value with its decomposition.

    For the likelihood-based criteria value = -2*loglik + complexity; GCV is
    a ratio rather than a penalized likelihood, so its loglik part is stored
    as zero and the whole value sits in complexity.
    """

    name: str
    value: float
    loglik: float
    complexity: float
    df: float


def duplication_matrix(k: int) -> np.ndarray:
    """Map vech (column-major lower triangle) to vec of a symmetric matrix."""
    r = k * (k + 1) // 2
    d = np.zeros((k * k, r))
    m = 0
    for j in range(k):
        for i in range(j, k):
            d[j * k + i, m] = 1.0
            if i != j:
                d[i * k + j, m] = 1.0
            m += 1
    return d


def _sigma_factor(sigma: np.ndarray):
    """Cholesky of Sigma, with the documented tiny ridge as fallback."""
    try:
        return scipy.linalg.cho_factor(sigma), sigma
    except scipy.linalg.LinAlgError:
        patched = sigma + _SIGMA_RIDGE * np.eye(sigma.shape[0])
        try:
            return scipy.linalg.cho_factor(patched), patched
        except scipy.linalg.LinAlgError as exc:
            raise NumericError(f"error covariance is singular: {exc}")


def gaussian_loglik(design: DesignBlocks, model: FofrModel) -> float:
    """Sum over curves of the Gaussian log-density of the coefficient model."""
    factor, sigma = _sigma_factor(model.Sigma)
    resid = design.C - design.Z @ model.B
    solved = scipy.linalg.cho_solve(factor, resid.T)
    quad = float(np.sum(resid.T * solved))
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    n, k = design.n, design.k_y
    return -0.5 * (n * k * np.log(2.0 * np.pi) + n * logdet + quad)


def hat_trace(design: DesignBlocks, model: FofrModel) -> float:
    """Trace of the fitted-value map (effective degrees of freedom).

    The map is (I kron Z)(Sigma^{-1} kron Z'Z + N I kron P)^{-1}
    (Sigma^{-1} kron Z'); its trace reduces to the trace of the penalized
    normal-equation inverse times the unpenalized cross-product block.
    """
    factor, _ = _sigma_factor(model.Sigma)
    sigma_inv = scipy.linalg.cho_solve(factor, np.eye(design.k_y))
    ztz = design.Z.T @ design.Z
    base = np.kron(sigma_inv, ztz)
    lhs = base + design.n * np.kron(np.eye(design.k_y), model.penalty)
    try:
        solved = scipy.linalg.solve(lhs, base, assume_a="sym")
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(f"hat-matrix system singular: {exc}")
    return float(np.trace(solved))


def info_matrices(design: DesignBlocks, model: FofrModel):
    """Empirical information matrices of the penalized likelihood.

    Returns (R, Q): R is the negative average Hessian of the penalized
    log-likelihood over theta = (vec B, vech Sigma); Q averages the outer
    products of the per-curve penalized score with the unpenalized score.
    """
    z, c = design.Z, design.C
    n, p, k = design.n, design.p, design.k_y
    pen = model.penalty
    factor, _ = _sigma_factor(model.Sigma)
    sigma_inv = scipy.linalg.cho_solve(factor, np.eye(k))
    resid = c - z @ model.B
    u = resid @ sigma_inv  # rows: Sigma^{-1} r_i
    dup = duplication_matrix(k)

    # R blocks
    ztz = z.T @ z
    r_bb = np.kron(sigma_inv, ztz / n) + np.kron(np.eye(k), pen)
    ztu = z.T @ u
    r_bs = np.kron(sigma_inv, ztu / n) @ dup
    uu = u.T @ u
    h_ss = (
        0.5 * n * np.kron(sigma_inv, sigma_inv)
        - 0.5 * np.kron(uu, sigma_inv)
        - 0.5 * np.kron(sigma_inv, uu)
    )
    r_ss = -(dup.T @ h_ss @ dup) / n

    dim_b = p * k
    r_mat = np.empty((dim_b + dup.shape[1], dim_b + dup.shape[1]))
    r_mat[:dim_b, :dim_b] = r_bb
    r_mat[:dim_b, dim_b:] = r_bs
    r_mat[dim_b:, :dim_b] = r_bs.T
    r_mat[dim_b:, dim_b:] = r_ss

    # per-curve scores; vec ordering stacks columns of B
    score_b = np.einsum("ik,ip->ikp", u, z).reshape(n, dim_b)
    outer_u = np.einsum("ik,il->ikl", u, u)
    score_s = 0.5 * (outer_u - sigma_inv[None, :, :]).reshape(n, k * k) @ dup
    scores = np.hstack((score_b, score_s))
    scores_pen = scores.copy()
    scores_pen[:, :dim_b] -= (pen @ model.B).reshape(-1, order="F")[None, :]
    q_mat = scores_pen.T @ scores / n
    return r_mat, q_mat


def criterion_gcv(design: DesignBlocks, model: FofrModel) -> CriterionReport:
    """Residual-based generalized cross-validation."""
    resid = design.C - design.Z @ model.B
    rss = float(np.sum(resid**2))
    total = design.n * design.k_y
    df = hat_trace(design, model)
    denom = 1.0 - df / total
    if denom <= 1e-12:
        raise NumericError("GCV undefined: hat-matrix trace equals NK")
    value = rss / (total * denom**2)
    return CriterionReport("gcv", value, 0.0, value, df)


def criterion_maic(design: DesignBlocks, model: FofrModel) -> CriterionReport:
    """Akaike-type criterion with the hat-matrix trace as model dimension."""
    ll = gaussian_loglik(design, model)
    df = hat_trace(design, model)
    value = -2.0 * ll + 2.0 * df
    return CriterionReport("maic", value, ll, 2.0 * df, df)


def criterion_gic(design: DesignBlocks, model: FofrModel) -> CriterionReport:
    """Information criterion with the empirical bias-correction trace."""
    ll = gaussian_loglik(design, model)
    r_mat, q_mat = info_matrices(design, model)
    try:
        solved = scipy.linalg.solve(r_mat, q_mat)
    except scipy.linalg.LinAlgError as exc:
        raise NumericError(
            f"GIC information matrix singular (try a larger penalty): {exc}"
        )
    trace_term = float(np.trace(solved))
    value = -2.0 * ll + 2.0 * trace_term
    df = hat_trace(design, model)
    return CriterionReport("gic", value, ll, 2.0 * trace_term, df)


def criterion_gbic(design: DesignBlocks, model: FofrModel) -> CriterionReport:
    """Bayesian-type criterion for the penalized fit (needs a positive penalty)."""
    pen = model.penalty
    eig_pen = np.linalg.eigvalsh(pen)
    top = eig_pen.max() if eig_pen.size else 0.0
    kept = eig_pen[eig_pen > _EIG_FLOOR * max(top, 1e-300)]
    if kept.size == 0:
        raise NumericError("GBIC inapplicable: penalty matrix is zero (lambda = 0)")
    lpdet_pen = float(np.sum(np.log(kept)))

    eig_omega = np.linalg.eigvalsh(model.omega)
    rank_omega = int(
        np.sum(eig_omega > _EIG_FLOOR * max(eig_omega.max(), 1e-300))
    )
    n, p, k = design.n, design.p, design.k_y
    q_free = p - rank_omega
    r_dim = k * (k + 1) // 2

    ll = gaussian_loglik(design, model)
    pen_quad = float(n * np.trace(model.B.T @ pen @ model.B))
    r_mat, _ = info_matrices(design, model)
    sign, logdet_r = np.linalg.slogdet(r_mat)
    if sign <= 0:
        raise NumericError("GBIC Hessian determinant is not positive")
    complexity = (
        pen_quad
        + (r_dim + k * q_free) * (np.log(n) - np.log(2.0 * np.pi))
        - k * lpdet_pen
        + logdet_r
    )
    value = -2.0 * ll + complexity
    df = hat_trace(design, model)
    return CriterionReport("gbic", value, ll, complexity, df)


_CRITERIA = {
    "gcv": criterion_gcv,
    "gic": criterion_gic,
    "maic": criterion_maic,
    "gbic": criterion_gbic,
}


def evaluate_criterion(
    design: DesignBlocks, model: FofrModel, name: str
) -> CriterionReport:
    """Dispatch a criterion by name."""
    key = name.lower()
    if key not in _CRITERIA:
        raise ConfigurationError(f"unknown criterion {name!r}")
    return _CRITERIA[key](design, model)


def select_mpl_fit(
    design: DesignBlocks,
    omega_blocks: list[np.ndarray],
    criterion: str,
    log10_lambda: np.ndarray,
    max_iter: int = 100,
    tol: float = 1e-8,
    per_predictor: bool = False,
) -> tuple[FofrModel, CriterionReport]:
    """Choose the MPL penalty weight on a grid by an information criterion.

    By default one common lambda is shared by all predictors; with
    per_predictor=True the full tensor grid is searched, which grows
    exponentially with the number of predictors.  Ties break toward the
    larger penalty; grid points whose fit or criterion fails are skipped.
    """
    n_blocks = len(omega_blocks)
    lams = 10.0 ** np.asarray(log10_lambda, dtype=float)
    if per_predictor:
        candidates = itertools.product(*[lams] * n_blocks)
    else:
        candidates = ([lam] * n_blocks for lam in lams)

    best: tuple[FofrModel, CriterionReport] | None = None
    warm: FofrModel | None = None
    failures = 0
    for lam_tuple in candidates:
        spec = PenaltySpec(lambdas=np.asarray(lam_tuple), omega_blocks=omega_blocks)
        try:
            model = fit_mpl(
                design, spec, max_iter=max_iter, tol=tol, start=warm
            )
            warm = model
            report = evaluate_criterion(design, model, criterion)
        except (RankError, NumericError, ConvergenceError):
            failures += 1
            continue
        if not np.isfinite(report.value):
            failures += 1
            continue
        if best is None or report.value <= best[1].value:
            best = (model, report)
    if best is None:
        raise SelectionError(
            f"all {failures} penalty grid points failed for criterion {criterion!r}"
        )
    return best
