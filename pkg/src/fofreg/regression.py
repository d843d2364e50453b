"""Function-on-function linear model in basis-coefficient space.

The centered response coefficients C (N x K_Y) are regressed on the stacked
predictor blocks Z (N x p), where each block is the predictor coefficient
matrix postmultiplied by its basis Gram matrix.  Estimation is either plain
least squares or maximum penalized likelihood with a Hadamard-structured
roughness penalty, solved by alternating the coefficient and covariance
updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg

from .basis import BasisSystem
from .errors import ConfigurationError, ConvergenceError, NumericError, RankError
from .smoothing import SmoothedCurves

_MAX_CONDITION = 1e12
_SIGMA_RIDGE = 1e-10


def center_curves(smoothed: SmoothedCurves) -> tuple[SmoothedCurves, np.ndarray]:
    """Remove the mean coefficient vector; returns (centered, mean)."""
    if smoothed.n_curves < 2:
        raise ConfigurationError("centering needs at least two curves")
    mean = smoothed.coefficients.mean(axis=0)
    centered = replace(smoothed, coefficients=smoothed.coefficients - mean)
    return centered, mean


@dataclass
class DesignBlocks:
    """Assembled regression inputs.

    Z stacks one block per predictor, each block being the centered
    coefficient matrix times the predictor's Gram matrix.  C holds the
    centered response coefficients and zeta_phi the response Gram matrix.
    """

    Z: np.ndarray
    C: np.ndarray
    zeta_phi: np.ndarray
    block_sizes: list[int]

    def __post_init__(self):
        self.Z = np.asarray(self.Z, dtype=float)
        self.C = np.asarray(self.C, dtype=float)
        self.zeta_phi = np.asarray(self.zeta_phi, dtype=float)
        if self.Z.shape[0] != self.C.shape[0]:
            raise ConfigurationError("Z and C must have the same number of rows")
        if sum(self.block_sizes) != self.Z.shape[1]:
            raise ConfigurationError("block sizes do not sum to the Z column count")
        if not (np.all(np.isfinite(self.Z)) and np.all(np.isfinite(self.C))):
            raise ConfigurationError("design contains non-finite entries")

    @property
    def n(self) -> int:
        return self.Z.shape[0]

    @property
    def p(self) -> int:
        return self.Z.shape[1]

    @property
    def k_y(self) -> int:
        return self.C.shape[1]


def build_design(
    response: SmoothedCurves, predictors: list[SmoothedCurves]
) -> DesignBlocks:
    """Assemble Z and C from centered smoothed curves."""
    if not predictors:
        raise ConfigurationError("at least one predictor is required")
    n = response.n_curves
    blocks = []
    sizes = []
    for m, pred in enumerate(predictors):
        if pred.n_curves != n:
            raise ConfigurationError(
                f"predictor {m} has {pred.n_curves} curves, response has {n}"
            )
        _check_centered(pred.coefficients, f"predictor {m}")
        gram = pred.basis.gram_matrix()
        blocks.append(pred.coefficients @ gram)
        sizes.append(pred.basis.K)
    _check_centered(response.coefficients, "response")
    return DesignBlocks(
        Z=np.hstack(blocks),
        C=response.coefficients.copy(),
        zeta_phi=response.basis.gram_matrix(),
        block_sizes=sizes,
    )


def _check_centered(coef: np.ndarray, name: str):
    scale = max(float(np.max(np.abs(coef))), 1.0)
    if np.max(np.abs(coef.mean(axis=0))) > 1e-6 * scale:
        raise ConfigurationError(f"{name} coefficients are not centered")


@dataclass
class PenaltySpec:
    """Per-predictor penalty weights and the block-diagonal roughness matrix.

    The Hadamard product of the paper-style weight matrix with a
    block-diagonal Omega reduces to blockdiag(lambda_m * Omega_m), which is
    what `hadamard` returns.
    """

    lambdas: np.ndarray
    omega_blocks: list[np.ndarray]

    def __post_init__(self):
        self.lambdas = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        if self.lambdas.size != len(self.omega_blocks):
            raise ConfigurationError("one lambda per predictor block is required")
        if np.any(self.lambdas < 0):
            raise ConfigurationError("penalty weights must be nonnegative")

    @property
    def omega(self) -> np.ndarray:
        return scipy.linalg.block_diag(*self.omega_blocks)

    @property
    def hadamard(self) -> np.ndarray:
        return scipy.linalg.block_diag(
            *[lam * om for lam, om in zip(self.lambdas, self.omega_blocks)]
        )

    @classmethod
    def from_predictors(
        cls, predictors: list[SmoothedCurves], lambdas, deriv_order: int = 2
    ) -> "PenaltySpec":
        lambdas = np.atleast_1d(np.asarray(lambdas, dtype=float))
        if lambdas.size == 1:
            lambdas = np.full(len(predictors), float(lambdas[0]))
        blocks = [p.basis.penalty_matrix(deriv_order) for p in predictors]
        return cls(lambdas=lambdas, omega_blocks=blocks)


@dataclass
class FofrModel:
    """Fitted function-on-function model.

    Carries everything prediction needs: the coefficient matrix B, the error
    covariance Sigma, the centering means, and the bases of both sides.
    """

    B: np.ndarray
    Sigma: np.ndarray
    method: str
    lambdas: np.ndarray
    penalty: np.ndarray  # Lambda_M (Hadamard) Omega, p x p
    omega: np.ndarray
    block_sizes: list[int]
    response_mean: np.ndarray | None = None
    predictor_means: list[np.ndarray] | None = None
    response_basis: BasisSystem | None = None
    predictor_bases: list[BasisSystem] | None = None
    predictor_grams: list[np.ndarray] | None = None
    n_obs: int = 0
    n_iter: int = 0

    def block(self, m: int) -> np.ndarray:
        """Rows of B belonging to predictor m (0-based)."""
        if not 0 <= m < len(self.block_sizes):
            raise ConfigurationError(f"predictor index {m} out of range")
        start = int(np.sum(self.block_sizes[:m]))
        return self.B[start : start + self.block_sizes[m]]


def _check_design_rank(design: DesignBlocks):
    ztz = design.Z.T @ design.Z
    cond = np.linalg.cond(ztz)
    if not np.isfinite(cond) or cond > _MAX_CONDITION:
        raise RankError(
            f"Z'Z is singular or near-singular (p={design.p}, N={design.n}, "
            f"cond ~ {cond:.2e}); drop predictors or use the penalized fit"
        )
    return ztz


def fit_ls(design: DesignBlocks) -> FofrModel:
    """Least-squares estimate B = (Z'Z)^{-1} Z'C.

    Algebraically identical to the Kronecker normal equations built from the
    response Gram matrix; the equivalence is exercised in the test suite.
    """
    ztz = _check_design_rank(design)
    b = scipy.linalg.solve(ztz, design.Z.T @ design.C, assume_a="sym")
    resid = design.C - design.Z @ b
    sigma = resid.T @ resid / design.n
    p = design.p
    return FofrModel(
        B=b,
        Sigma=sigma,
        method="ls",
        lambdas=np.zeros(len(design.block_sizes)),
        penalty=np.zeros((p, p)),
        omega=np.zeros((p, p)),
        block_sizes=list(design.block_sizes),
        n_obs=design.n,
    )


def fit_ls_kronecker(design: DesignBlocks) -> np.ndarray:
    """Literal Kronecker-form least squares.

    Solves (zeta_phi kron Z'Z) vec(B) = vec(Z'C zeta_phi) with column-stacking
    vec; exposed for the algebraic-equivalence check.
    """
    ztz = design.Z.T @ design.Z
    lhs = np.kron(design.zeta_phi, ztz)
    rhs_mat = design.Z.T @ design.C @ design.zeta_phi
    vec_b = scipy.linalg.solve(lhs, rhs_mat.reshape(-1, order="F"))
    return vec_b.reshape((design.p, design.k_y), order="F")


def _sigma_from_residuals(design: DesignBlocks, b: np.ndarray) -> np.ndarray:
    resid = design.C - design.Z @ b
    return resid.T @ resid / design.n


def _regularize_sigma(sigma: np.ndarray) -> np.ndarray:
    try:
        scipy.linalg.cho_factor(sigma)
        return sigma
    except scipy.linalg.LinAlgError:
        return sigma + _SIGMA_RIDGE * np.eye(sigma.shape[0])


def _mpl_coefficient_update(
    ztz: np.ndarray, ztc: np.ndarray, sigma: np.ndarray, pen: np.ndarray, n: int
) -> np.ndarray:
    """One pass of the penalized-likelihood normal equations.

    The Kronecker system (Sigma^{-1} kron Z'Z + N I kron P) vec(B) =
    (Sigma^{-1} kron Z') vec(C) is equivalent to the matrix equation
    Z'Z B + N P B Sigma = Z'C, solved per eigen-direction of Sigma.
    """
    evals, evecs = scipy.linalg.eigh(sigma)
    rhs = ztc @ evecs
    cols = np.empty_like(rhs)
    for idx, ev in enumerate(evals):
        a = ztz + n * max(ev, 0.0) * pen
        try:
            c, low = scipy.linalg.cho_factor(a)
            cols[:, idx] = scipy.linalg.cho_solve((c, low), rhs[:, idx])
        except scipy.linalg.LinAlgError as exc:
            raise RankError(f"penalized system singular along one direction: {exc}")
    return cols @ evecs.T


def fit_mpl(
    design: DesignBlocks,
    penalty: PenaltySpec,
    max_iter: int = 100,
    tol: float = 1e-8,
    start: FofrModel | None = None,
) -> FofrModel:
    """Maximum penalized likelihood fit by alternating updates.

    Alternates the coefficient solve and the covariance update from a least
    squares (or ridge) start until the relative change in B drops below tol.
    """
    if design.n <= design.k_y:
        raise ConfigurationError(
            f"MPL needs N > K_Y for a positive-definite covariance "
            f"(N={design.n}, K_Y={design.k_y})"
        )
    if max_iter < 1:
        raise ConfigurationError("max_iter must be at least 1")
    pen = penalty.hadamard
    ztz = design.Z.T @ design.Z
    ztc = design.Z.T @ design.C

    if start is not None:
        b = start.B.copy()
    else:
        try:
            b = fit_ls(design).B
        except RankError:
            ridge = 1e-8 * (np.trace(ztz) / design.p) * np.eye(design.p)
            b = scipy.linalg.solve(ztz + ridge, ztc, assume_a="sym")
    sigma = _regularize_sigma(_sigma_from_residuals(design, b))

    n_iter = 0
    for n_iter in range(1, max_iter + 1):
        sigma_inv_ok = _regularize_sigma(sigma)
        b_new = _mpl_coefficient_update(ztz, ztc, sigma_inv_ok, pen, design.n)
        change = np.linalg.norm(b_new - b) / max(np.linalg.norm(b), 1.0)
        b = b_new
        sigma = _regularize_sigma(_sigma_from_residuals(design, b))
        if change < tol:
            break
    else:
        raise ConvergenceError(
            f"MPL did not converge in {max_iter} iterations (last change {change:.2e})",
            last_iterate=b,
        )

    return FofrModel(
        B=b,
        Sigma=sigma,
        method="mpl",
        lambdas=penalty.lambdas.copy(),
        penalty=pen,
        omega=penalty.omega,
        block_sizes=list(design.block_sizes),
        n_obs=design.n,
        n_iter=n_iter,
    )


def attach_curve_info(
    model: FofrModel,
    response: SmoothedCurves,
    response_mean: np.ndarray,
    predictors: list[SmoothedCurves],
    predictor_means: list[np.ndarray],
) -> FofrModel:
    """Record centering means, bases and Gram matrices on a fitted model."""
    model.response_mean = np.asarray(response_mean, dtype=float)
    model.predictor_means = [np.asarray(m, dtype=float) for m in predictor_means]
    model.response_basis = response.basis
    model.predictor_bases = [p.basis for p in predictors]
    model.predictor_grams = [p.basis.gram_matrix() for p in predictors]
    return model


def fit_model(
    response: SmoothedCurves,
    predictors: list[SmoothedCurves],
    method: str = "ls",
    lambdas=0.0,
    deriv_order: int = 2,
    max_iter: int = 100,
    tol: float = 1e-8,
) -> FofrModel:
    """Center, assemble the design, fit, and attach prediction metadata."""
    response_c, c_mean = center_curves(response)
    centered = []
    means = []
    for pred in predictors:
        pc, pm = center_curves(pred)
        centered.append(pc)
        means.append(pm)
    design = build_design(response_c, centered)
    if method == "ls":
        model = fit_ls(design)
    elif method == "mpl":
        spec = PenaltySpec.from_predictors(centered, lambdas, deriv_order)
        model = fit_mpl(design, spec, max_iter=max_iter, tol=tol)
    else:
        raise ConfigurationError(f"unknown method {method!r}")
    return attach_curve_info(model, response_c, c_mean, centered, means)


def predict(
    model: FofrModel, new_predictors: list[SmoothedCurves], eval_grid
) -> np.ndarray:
    """Predict response curves for new predictor expansions.

    New predictors are centered with the training means; predictions include
    the training response mean.
    """
    if model.response_basis is None or model.predictor_means is None:
        raise ConfigurationError("model lacks prediction metadata")
    if len(new_predictors) != len(model.predictor_bases):
        raise ConfigurationError(
            f"model has {len(model.predictor_bases)} predictors, "
            f"got {len(new_predictors)}"
        )
    blocks = []
    for m, (pred, basis) in enumerate(zip(new_predictors, model.predictor_bases)):
        if not pred.basis.same_structure(basis):
            raise ConfigurationError(f"predictor {m} basis differs from training basis")
        centered = pred.coefficients - model.predictor_means[m]
        blocks.append(centered @ model.predictor_grams[m])
    z_new = np.hstack(blocks)
    c_hat = z_new @ model.B + model.response_mean
    phi = model.response_basis.evaluate(eval_grid)
    return c_hat @ phi.T


def coefficient_surface(model: FofrModel, m: int, s_grid, t_grid) -> np.ndarray:
    """Evaluate the bivariate coefficient surface of predictor m on a grid."""
    if model.response_basis is None or model.predictor_bases is None:
        raise ConfigurationError("model lacks basis metadata")
    b_m = model.block(m)
    psi = model.predictor_bases[m].evaluate(s_grid)
    phi = model.response_basis.evaluate(t_grid)
    return psi @ b_m @ phi.T
