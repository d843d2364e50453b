"""Basis-function systems (Fourier, B-spline, Gaussian) and their derived matrices.

Each system knows how to evaluate itself and its derivatives on points of a
common domain, and how to produce its Gram matrix (pairwise inner products)
and roughness penalty matrix (inner products of n-th derivatives).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, DomainError, NumericError

_GL_NODES = 8  # Gauss-Legendre nodes per quadrature panel


@dataclass(frozen=True)
class Domain:
    """Closed bounded interval on which curves live."""

    lower: float
    upper: float

    def __post_init__(self):
        if not (np.isfinite(self.lower) and np.isfinite(self.upper)):
            raise ConfigurationError("domain bounds must be finite")
        if not self.lower < self.upper:
            raise ConfigurationError(
                f"domain requires lower < upper, got [{self.lower}, {self.upper}]"
            )

    @property
    def length(self) -> float:
        return self.upper - self.lower


def bspline_design(knots: np.ndarray, order: int, points: np.ndarray) -> np.ndarray:
    """Evaluate all B-splines of a given order on an explicit knot vector.

    Cox-de Boor recursion, vectorized over evaluation points.  Intervals are
    half-open [tau_k, tau_{k+1}) except that points equal to the final knot
    are assigned to the last interval of positive length.

    Parameters
    ----------
    knots : array of non-decreasing knot values, length nb + order.
    order : spline order (degree + 1); order 1 gives piecewise constants.
    points : evaluation points.

    Returns
    -------
    Matrix of shape (len(points), len(knots) - order).
    """
    knots = np.asarray(knots, dtype=float)
    t = np.atleast_1d(np.asarray(points, dtype=float))
    if order < 1:
        raise ConfigurationError("B-spline order must be >= 1")
    if knots.size < order + 1:
        raise ConfigurationError("knot vector too short for requested order")
    if np.any(np.diff(knots) < 0):
        raise ConfigurationError("knot vector must be non-decreasing")

    last = knots[-1]
    n1 = knots.size - 1
    design = np.zeros((t.size, n1))
    for k in range(n1):
        lo, hi = knots[k], knots[k + 1]
        if hi <= lo:
            continue
        inside = (t >= lo) & (t < hi)
        if hi == last:
            inside |= t == last
        design[inside, k] = 1.0

    for v in range(2, order + 1):
        prev = design
        ncols = knots.size - v
        design = np.zeros((t.size, ncols))
        for k in range(ncols):
            d1 = knots[k + v - 1] - knots[k]
            d2 = knots[k + v] - knots[k + 1]
            acc = np.zeros(t.size)
            if d1 > 0:
                acc += (t - knots[k]) / d1 * prev[:, k]
            if d2 > 0:
                acc += (knots[k + v] - t) / d2 * prev[:, k + 1]
            design[:, k] = acc
    return design


def bspline_design_derivative(
    knots: np.ndarray, order: int, n: int, points: np.ndarray
) -> np.ndarray:
    """n-th derivative analogue of :func:`bspline_design`."""
    if n < 0:
        raise ConfigurationError("derivative order must be >= 0")
    if n == 0:
        return bspline_design(knots, order, points)
    if n >= order:
        # derivative of order >= spline order vanishes identically
        pts = np.atleast_1d(np.asarray(points))
        return np.zeros((pts.size, np.asarray(knots).size - order))
    knots = np.asarray(knots, dtype=float)
    lower = bspline_design_derivative(knots, order - 1, n - 1, points)
    ncols = knots.size - order
    out = np.zeros((lower.shape[0], ncols))
    for k in range(ncols):
        d1 = knots[k + order - 1] - knots[k]
        d2 = knots[k + order] - knots[k + 1]
        acc = np.zeros(lower.shape[0])
        if d1 > 0:
            acc += lower[:, k] / d1
        if d2 > 0:
            acc -= lower[:, k + 1] / d2
        out[:, k] = (order - 1) * acc
    return out


def _gl_points(panels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights over consecutive panel edges."""
    x, w = np.polynomial.legendre.leggauss(_GL_NODES)
    a = panels[:-1]
    b = panels[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    nodes = (half[:, None] * x[None, :] + mid[:, None]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


class BasisSystem:
    """Common interface of the three basis systems.

    Instances are immutable after construction and all methods are pure,
    so they can be shared freely across threads and processes.
    """

    kind: str = ""

    def __init__(self, K: int, domain: Domain):
        if K < 1:
            raise ConfigurationError("number of basis functions must be positive")
        self.K = int(K)
        self.domain = domain

    def _check_points(self, points) -> np.ndarray:
        pts = np.atleast_1d(np.asarray(points, dtype=float))
        if not np.all(np.isfinite(pts)):
            raise DomainError("evaluation points must be finite")
        if pts.size and (pts.min() < self.domain.lower or pts.max() > self.domain.upper):
            raise DomainError(
                f"points outside domain [{self.domain.lower}, {self.domain.upper}]"
            )
        return pts

    def evaluate(self, points) -> np.ndarray:
        """Return the |points| x K matrix of basis values."""
        pts = self._check_points(points)
        out = self._evaluate(pts)
        if not np.all(np.isfinite(out)):
            raise NumericError(f"{self.kind} basis produced non-finite values")
        return out

    def derivative(self, points, n: int = 1) -> np.ndarray:
        """Return the |points| x K matrix of n-th derivative values."""
        pts = self._check_points(points)
        return self._derivative(pts, n)

    def gram_matrix(self) -> np.ndarray:
        raise NotImplementedError

    def penalty_matrix(self, n: int = 2) -> np.ndarray:
        """Roughness penalty: pairwise inner products of n-th derivatives."""
        raise NotImplementedError

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _derivative(self, pts: np.ndarray, n: int) -> np.ndarray:
        raise NotImplementedError

    def _quadrature_panels(self) -> np.ndarray:
        """Panel edges guaranteeing at least 10*K panels over the domain."""
        return np.linspace(self.domain.lower, self.domain.upper, 10 * self.K + 1)

    def _quad_penalty(self, n: int) -> np.ndarray:
        nodes, weights = _gl_points(self._quadrature_panels())
        d = self._derivative(nodes, n)
        return (d * weights[:, None]).T @ d

    def same_structure(self, other: "BasisSystem") -> bool:
        """True when two bases produce identical expansions."""
        return (
            self.kind == other.kind
            and self.K == other.K
            and self.domain == other.domain
        )

    def __repr__(self):
        return f"{type(self).__name__}(K={self.K}, domain=[{self.domain.lower}, {self.domain.upper}])"


class FourierBasis(BasisSystem):
    """Constant plus sine/cosine pairs, orthonormal over one full period.

    K counts total functions: the constant, then pairs sin(r w t), cos(r w t)
    with the final cosine dropped when K is even.
    """

    kind = "fourier"

    def __init__(self, K: int, domain: Domain):
        super().__init__(K, domain)
        self.period = domain.length
        self.omega = 2.0 * np.pi / self.period

    def _freq_of_column(self):
        # column 0 is the constant; columns 2r-1, 2r hold the r-th pair
        r = np.arange(1, self.K)
        return np.concatenate(([0], (r + 1) // 2))

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        t = pts - self.domain.lower
        out = np.empty((pts.size, self.K))
        out[:, 0] = 1.0 / np.sqrt(self.period)
        scale = 1.0 / np.sqrt(self.period / 2.0)
        for col in range(1, self.K):
            r = (col + 1) // 2
            arg = r * self.omega * t
            out[:, col] = scale * (np.sin(arg) if col % 2 == 1 else np.cos(arg))
        return out

    def _derivative(self, pts: np.ndarray, n: int) -> np.ndarray:
        # d^n/dt^n sin(at) = a^n sin(at + n pi/2), same shift for cos
        t = pts - self.domain.lower
        out = np.zeros((pts.size, self.K))
        scale = 1.0 / np.sqrt(self.period / 2.0)
        shift = n * np.pi / 2.0
        for col in range(1, self.K):
            r = (col + 1) // 2
            a = r * self.omega
            arg = a * t + shift
            out[:, col] = scale * a**n * (np.sin(arg) if col % 2 == 1 else np.cos(arg))
        if n == 0:
            out[:, 0] = 1.0 / np.sqrt(self.period)
        return out

    def gram_matrix(self) -> np.ndarray:
        return np.eye(self.K)

    def penalty_matrix(self, n: int = 2) -> np.ndarray:
        if n < 1:
            raise ConfigurationError("derivative order must be >= 1")
        freq = self._freq_of_column() * self.omega
        return np.diag(freq ** (2 * n))


class BSplineBasis(BasisSystem):
    """B-splines of a given order on equally spaced interior breakpoints.

    The domain is divided into K - order + 1 equal subintervals and the
    boundary knots are repeated `order` times (standard clamped augmentation).
    An explicit augmented knot vector may be supplied instead.
    """

    kind = "bspline"

    def __init__(self, K: int, domain: Domain, order: int = 4, knots=None):
        super().__init__(K, domain)
        if order < 1:
            raise ConfigurationError("B-spline order must be >= 1")
        if K < order:
            raise ConfigurationError(
                f"B-spline needs K >= order, got K={K}, order={order}"
            )
        self.order = int(order)
        if knots is None:
            breaks = np.linspace(domain.lower, domain.upper, K - order + 2)
            knots = np.concatenate(
                (np.full(order - 1, domain.lower), breaks, np.full(order - 1, domain.upper))
            )
        knots = np.asarray(knots, dtype=float)
        if knots.size != K + order:
            raise ConfigurationError(
                f"augmented knot vector must have K + order = {K + order} entries"
            )
        interior = knots[(knots > domain.lower) & (knots < domain.upper)]
        if interior.size and np.any(np.diff(interior) <= 0):
            raise ConfigurationError("interior knots must be strictly increasing")
        self.knots = knots

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        return bspline_design(self.knots, self.order, pts)

    def _derivative(self, pts: np.ndarray, n: int) -> np.ndarray:
        return bspline_design_derivative(self.knots, self.order, n, pts)

    def _quadrature_panels(self) -> np.ndarray:
        spans = np.unique(self.knots)
        spans = spans[(spans >= self.domain.lower) & (spans <= self.domain.upper)]
        per_span = int(np.ceil(10 * self.K / max(spans.size - 1, 1)))
        pieces = [
            np.linspace(spans[i], spans[i + 1], per_span + 1)[:-1]
            for i in range(spans.size - 1)
        ]
        return np.concatenate(pieces + [spans[-1:]])

    def gram_matrix(self) -> np.ndarray:
        nodes, weights = _gl_points(self._quadrature_panels())
        phi = self._evaluate(nodes)
        return (phi * weights[:, None]).T @ phi

    def penalty_matrix(self, n: int = 2) -> np.ndarray:
        if n >= self.order:
            raise ConfigurationError(
                f"penalty derivative order {n} requires B-spline order > {n}"
            )
        return self._quad_penalty(n)


class GaussianBasis(BasisSystem):
    """Gaussian radial bumps on evenly spaced knots.

    Knots tau_1 < ... < tau_{K+4} are evenly spaced with tau_4 at the lower
    domain bound and tau_{K+2} at the upper bound; the center of the k-th
    function is tau_{k+2} and the common width is sigma = (tau_{k+2}-tau_k)/3.
    """

    kind = "gaussian"

    def __init__(self, K: int, domain: Domain, knots=None):
        super().__init__(K, domain)
        if K < 3:
            raise ConfigurationError("Gaussian basis needs K >= 3")
        if knots is None:
            h = domain.length / (K - 2)
            knots = domain.lower + h * (np.arange(1, K + 5) - 4.0)
        knots = np.asarray(knots, dtype=float)
        if knots.size != K + 4:
            raise ConfigurationError(f"Gaussian knot vector must have K + 4 = {K + 4} entries")
        steps = np.diff(knots)
        if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-8):
            raise ConfigurationError("Gaussian knots must be evenly spaced and increasing")
        self.knots = knots
        self.centers = knots[2 : 2 + K]
        self.sigma = (knots[2] - knots[0]) / 3.0

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        diff = pts[:, None] - self.centers[None, :]
        return np.exp(-(diff**2) / (2.0 * self.sigma**2))

    def _derivative(self, pts: np.ndarray, n: int) -> np.ndarray:
        if n == 0:
            return self._evaluate(pts)
        # d^n/dx^n exp(-x^2) = (-1)^n H_n(x) exp(-x^2), x = (t - c)/(sqrt(2) sigma)
        s = np.sqrt(2.0) * self.sigma
        x = (pts[:, None] - self.centers[None, :]) / s
        h_prev = np.ones_like(x)
        h = 2.0 * x
        for k in range(2, n + 1):
            h, h_prev = 2.0 * x * h - 2.0 * (k - 1) * h_prev, h
        hn = h if n >= 1 else h_prev
        return (-1.0 / s) ** n * hn * np.exp(-(x**2))

    def gram_matrix(self) -> np.ndarray:
        # closed form of the Gaussian product integral, squared distance in
        # the exponent
        d = self.centers[:, None] - self.centers[None, :]
        return np.sqrt(np.pi * self.sigma**2) * np.exp(-(d**2) / (4.0 * self.sigma**2))

    def penalty_matrix(self, n: int = 2) -> np.ndarray:
        if n < 1:
            raise ConfigurationError("derivative order must be >= 1")
        return self._quad_penalty(n)


_BASIS_CLASSES = {
    "fourier": FourierBasis,
    "bspline": BSplineBasis,
    "gaussian": GaussianBasis,
}


def make_basis(kind: str, K: int, domain: Domain, **kwargs) -> BasisSystem:
    """Construct a basis system by kind name ('fourier', 'bspline', 'gaussian')."""
    key = kind.lower().replace("-", "")
    if key not in _BASIS_CLASSES:
        raise ConfigurationError(f"unknown basis kind {kind!r}")
    return _BASIS_CLASSES[key](K, domain, **kwargs)


def min_basis_size(kind: str, order: int = 4) -> int:
    """Smallest legal K for a basis kind."""
    key = kind.lower().replace("-", "")
    if key == "bspline":
        return order
    if key == "gaussian":
        return 3
    return 1


def evaluate_basis(basis: BasisSystem, points) -> np.ndarray:
    """Evaluate every basis function at the given points."""
    return basis.evaluate(points)


def gram_matrix(basis: BasisSystem) -> np.ndarray:
    """Pairwise inner products of the basis functions."""
    return basis.gram_matrix()


def penalty_matrix(basis: BasisSystem, n: int = 2) -> np.ndarray:
    """Roughness penalty matrix from n-th derivatives."""
    return basis.penalty_matrix(n)
