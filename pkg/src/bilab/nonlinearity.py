"""Nonlinearities Q(x, z, p, q), their derivatives, and the Taylor remainder R(h).

A jet is the stack ``(z, p1, p2, q)`` with a leading axis of length 4. Derivatives of
order ``k`` are returned as tensors of shape ``(4,) * k + jet.shape[1:]``.
"""

from dataclasses import dataclass, field
from math import factorial
from typing import Callable, Dict, Optional, Sequence, Tuple, Type

import numpy as np

from bilab.errors import NonlinearityError, PreconditionError
from bilab.grid import ScalarField, VectorField, c2_norm, jet, laplacian
from bilab.logging import configure_module_logger

logger = configure_module_logger(__name__)

JET_SIZE = 4
MAX_ORDER = 3

GammaFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]

GAMMA_CHOICES: Dict[str, GammaFunction] = {
    "one": lambda x, y: np.ones_like(x, dtype=float),
    "bump": lambda x, y: 1.0 + 0.5 * np.exp(-20.0 * ((x - 0.5) ** 2 + (y - 0.5) ** 2)),
    "cosx": lambda x, y: 1.0 + 0.5 * np.cos(np.pi * x),
}


def _tensor(order: int, jet_values: np.ndarray) -> np.ndarray:
    return np.zeros((JET_SIZE,) * order + jet_values.shape[1:])


class Nonlinearity:
    """Q(x, z, p, q) = gamma(x) * Q0(z, p, q) for the built-in kinds.

    Subclasses implement ``_jet_derivative`` for Q0 and ``box_bound``, the supremum of
    the order-``k`` derivative entries of Q0 over the box ``[-M, M]^4``.
    """

    kind = "abstract"
    n_params = 0

    def __init__(self, params: Sequence[float] = (), gamma: str = "one"):
        if gamma not in GAMMA_CHOICES:
            raise NonlinearityError(
                f"Unknown gamma choice '{gamma}', expected one of {sorted(GAMMA_CHOICES)}"
            )
        params = tuple(float(p) for p in params)
        if len(params) != self.n_params:
            raise NonlinearityError(
                f"Kind '{self.kind}' takes {self.n_params} parameters, got {len(params)}"
            )
        self.params = params
        self.gamma = gamma

    def describe(self) -> str:
        args = ",".join(f"{p:g}" for p in self.params)
        return f"{self.kind}({args})*gamma[{self.gamma}]"

    def __repr__(self) -> str:
        return f"Nonlinearity<{self.describe()}>"

    def gamma_values(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        return GAMMA_CHOICES[self.gamma](x, y)

    def derivative(
        self, order: int, x: np.ndarray, y: np.ndarray, jet_values: np.ndarray
    ) -> np.ndarray:
        if not 0 <= order <= MAX_ORDER:
            raise NonlinearityError(f"Derivatives are available up to order {MAX_ORDER}")
        return self.gamma_values(x, y) * self._jet_derivative(order, jet_values)

    def value(self, x: np.ndarray, y: np.ndarray, jet_values: np.ndarray) -> np.ndarray:
        return self.derivative(0, x, y, jet_values)

    def _jet_derivative(self, order: int, jet_values: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def box_bound(self, order: int, bound: float) -> float:
        raise NonlinearityError(f"No box bound available for kind '{self.kind}'")


class ZeroNonlinearity(Nonlinearity):
    kind = "zero"

    def _jet_derivative(self, order, jet_values):
        return _tensor(order, jet_values)

    def box_bound(self, order, bound):
        return 0.0


class PowerNonlinearity(Nonlinearity):
    """gamma * z^k with integer k >= 2."""

    kind = "power"
    n_params = 1

    def __init__(self, params: Sequence[float] = (3.0,), gamma: str = "one"):
        super().__init__(params, gamma)
        k = self.params[0]
        if k != int(k) or k < 2:
            raise NonlinearityError(f"Power exponent must be an integer >= 2, got {k}")
        self.k = int(k)

    def _jet_derivative(self, order, jet_values):
        out = _tensor(order, jet_values)
        if order <= self.k:
            coefficient = factorial(self.k) / factorial(self.k - order)
            out[(0,) * order] = coefficient * jet_values[0] ** (self.k - order)
        return out

    def box_bound(self, order, bound):
        if order > self.k:
            return 0.0
        return factorial(self.k) / factorial(self.k - order) * bound ** (self.k - order)


class SineNonlinearity(Nonlinearity):
    kind = "sine"

    def _jet_derivative(self, order, jet_values):
        out = _tensor(order, jet_values)
        out[(0,) * order] = np.sin(jet_values[0] + order * np.pi / 2.0)
        return out

    def box_bound(self, order, bound):
        # even orders are +-sin, odd orders +-cos; 0 lies in the box
        if order % 2 == 1:
            return 1.0
        return float(np.sin(min(bound, np.pi / 2.0)))


class ZQNonlinearity(Nonlinearity):
    """gamma * z * q."""

    kind = "zq"

    def _jet_derivative(self, order, jet_values):
        out = _tensor(order, jet_values)
        z, q = jet_values[0], jet_values[3]
        if order == 0:
            out[()] = z * q
        elif order == 1:
            out[0] = q
            out[3] = z
        elif order == 2:
            out[0, 3] = 1.0
            out[3, 0] = 1.0
        return out

    def box_bound(self, order, bound):
        return [bound**2, bound, 1.0, 0.0][order]


class PQuadNonlinearity(Nonlinearity):
    """gamma * |p|^2."""

    kind = "pquad"

    def _jet_derivative(self, order, jet_values):
        out = _tensor(order, jet_values)
        p = jet_values[1:3]
        if order == 0:
            out[()] = np.sum(p**2, axis=0)
        elif order == 1:
            out[1:3] = 2.0 * p
        elif order == 2:
            out[1, 1] = 2.0
            out[2, 2] = 2.0
        return out

    def box_bound(self, order, bound):
        return [2.0 * bound**2, 2.0 * bound, 2.0, 0.0][order]


class LinearNonlinearity(Nonlinearity):
    """gamma * (c_z z + c_p . p + c_q q); parameters ``(c_z, c_p1, c_p2, c_q)``."""

    kind = "linear"
    n_params = 4

    def _jet_derivative(self, order, jet_values):
        out = _tensor(order, jet_values)
        c = np.array(self.params).reshape((JET_SIZE,) + (1,) * (jet_values.ndim - 1))
        if order == 0:
            out[()] = np.sum(c * jet_values, axis=0)
        elif order == 1:
            out[...] = c
        return out

    def box_bound(self, order, bound):
        c = np.abs(np.array(self.params))
        return [float(c.sum()) * bound, float(c.max()), 0.0, 0.0][order]


class GaugeTransformed(Nonlinearity):
    """(x, z, p, q) -> lap^2 phi(x) + Q(x, z + phi, p + grad phi, q + lap phi).

    Only evaluable on jets living on the grid of ``phi``.
    """

    kind = "gauge"

    def __init__(self, base: Nonlinearity, phi: ScalarField):
        self.base = base
        self.phi = phi
        self.params = base.params
        self.gamma = base.gamma
        self._shift = jet(phi)
        self._source = laplacian(laplacian(phi)).values

    def describe(self) -> str:
        return f"gauge[{self.base.describe()}]"

    def derivative(self, order, x, y, jet_values):
        if jet_values.shape[1:] != self.phi.grid.shape:
            raise NonlinearityError(
                "Gauge-transformed nonlinearities are evaluated on grid jets only"
            )
        out = self.base.derivative(order, x, y, jet_values + self._shift)
        if order == 0:
            out = out + self._source
        return out

    def box_bound(self, order, bound):
        """Base bound on the box enlarged by the jet of phi; order 0 adds sup |lap^2 phi|.

        The source term is divided by the largest gamma so that ``gamma_max * box_bound``
        bounds the transformed derivatives.
        """
        shifted = self.base.box_bound(order, bound + float(np.max(np.abs(self._shift))))
        if order != 0:
            return shifted
        grid = self.phi.grid
        gamma_max = float(np.max(np.abs(self.gamma_values(grid.x, grid.y))))
        return shifted + float(np.max(np.abs(self._source))) / gamma_max


NONLINEARITY_KINDS: Dict[str, Type[Nonlinearity]] = {
    cls.kind: cls
    for cls in (
        ZeroNonlinearity,
        PowerNonlinearity,
        SineNonlinearity,
        ZQNonlinearity,
        PQuadNonlinearity,
        LinearNonlinearity,
    )
}


def make_nonlinearity(
    kind: str, params: Sequence[float] = (), gamma: str = "one"
) -> Nonlinearity:
    """Build a built-in nonlinearity from its configuration entries."""
    if kind not in NONLINEARITY_KINDS:
        logger.error(f"Unknown nonlinearity kind: {kind}")
        raise NonlinearityError(
            f"Unknown nonlinearity kind '{kind}', expected one of {sorted(NONLINEARITY_KINDS)}"
        )
    cls = NONLINEARITY_KINDS[kind]
    if kind == "power" and not params:
        params = (3.0,)
    return cls(params, gamma)


def _finite_or_raise(values: np.ndarray, what: str) -> np.ndarray:
    if not np.all(np.isfinite(values)):
        i, j = np.argwhere(~np.isfinite(values))[0][-2:]
        logger.error(f"{what} is not finite at node ({i}, {j})")
        raise NonlinearityError(f"{what} is not finite at node ({i}, {j})")
    return values


def eval_Q(Q: Nonlinearity, u: ScalarField) -> ScalarField:
    """Pointwise Q(x, u, grad u, lap u) with discrete derivatives."""
    grid = u.grid
    values = Q.value(grid.x, grid.y, jet(u))
    return ScalarField(grid, _finite_or_raise(values, f"Q[{Q.describe()}]"))


@dataclass(frozen=True)
class LinearizedCoefficients:
    """A = dQ/dq, X = grad_p Q, V = dQ/dz at the jet of a base field."""

    A: ScalarField
    X: VectorField
    V: ScalarField
    source: str = ""

    def max_difference(self, other: "LinearizedCoefficients") -> float:
        return max(
            float(np.max(np.abs(self.A.values - other.A.values))),
            float(np.max(np.abs(self.X.values - other.X.values))),
            float(np.max(np.abs(self.V.values - other.V.values))),
        )


def linearized_coeffs(Q: Nonlinearity, w: ScalarField) -> LinearizedCoefficients:
    grid = w.grid
    first = _finite_or_raise(
        Q.derivative(1, grid.x, grid.y, jet(w)), f"dQ[{Q.describe()}]"
    )
    return LinearizedCoefficients(
        A=ScalarField(grid, first[3]),
        X=VectorField(grid, first[1:3]),
        V=ScalarField(grid, first[0]),
        source=Q.describe(),
    )


def gauss_legendre(quad_nodes: int) -> Tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes and weights on [0, 1]."""
    if quad_nodes < 2:
        raise PreconditionError(f"Need at least 2 quadrature nodes, got {quad_nodes}")
    nodes, weights = np.polynomial.legendre.leggauss(quad_nodes)
    return 0.5 * (nodes + 1.0), 0.5 * weights


def _contract(tensor: np.ndarray, *vectors: np.ndarray) -> np.ndarray:
    """Contract the leading jet axes of ``tensor`` with one jet field each."""
    out = tensor
    for vector in vectors:
        out = np.sum(out * vector, axis=0)
    return out


def remainder_R(
    Q: Nonlinearity, w: ScalarField, h: ScalarField, quad_nodes: int = 8
) -> ScalarField:
    """Integral Taylor remainder of Q at the jet of w in direction h."""
    grid = w.grid
    nodes, weights = gauss_legendre(quad_nodes)
    jet_w, jet_h = jet(w), jet(h)
    base = Q.derivative(1, grid.x, grid.y, jet_w)
    total = np.zeros(grid.shape)
    for t, weight in zip(nodes, weights):
        shifted = Q.derivative(1, grid.x, grid.y, jet_w + t * jet_h)
        total += weight * _contract(shifted - base, jet_h)
    return ScalarField(grid, _finite_or_raise(total, "R(h) integrand"))


def taylor_identity_check(
    Q: Nonlinearity, w: ScalarField, h: ScalarField, quad_nodes: int = 8
) -> ScalarField:
    """Q(w + h) - Q(w) - (A lap h + X . grad h + V h) - R(h), pointwise."""
    grid = w.grid
    jet_w, jet_h = jet(w), jet(h)
    linear_part = _contract(Q.derivative(1, grid.x, grid.y, jet_w), jet_h)
    difference = Q.value(grid.x, grid.y, jet_w + jet_h) - Q.value(grid.x, grid.y, jet_w)
    residual = difference - linear_part - remainder_R(Q, w, h, quad_nodes).values
    return ScalarField(grid, residual)


def remainder_difference_expansion(
    Q: Nonlinearity,
    w: ScalarField,
    v: ScalarField,
    r1: ScalarField,
    r2: ScalarField,
    quad_nodes: int = 8,
) -> Tuple[ScalarField, ScalarField]:
    """R(v + r1) - R(v + r2) computed directly and through its nested-integral expansion.

    With a_i the jets of u_i = v + r_i, d = a_1 - a_2 and z(tau) = s t a_2 + tau s t d:

        R(u1) - R(u2) = int_0^1 int_0^1 t [D2Q(w + s t a_1) a_1 + D2Q(w + s t a_2) a_2] . d
                      + int_0^1 int_0^1 int_0^1 s t^2 D3Q(w + z(tau))[a_1, a_2, d]

    with every integral taken by Gauss-Legendre quadrature.
    """
    grid = w.grid
    x, y = grid.x, grid.y
    u1, u2 = v + r1, v + r2
    direct = (
        remainder_R(Q, w, u1, quad_nodes).values
        - remainder_R(Q, w, u2, quad_nodes).values
    )

    nodes, weights = gauss_legendre(quad_nodes)
    jet_w, a1, a2 = jet(w), jet(u1), jet(u2)
    d = a1 - a2
    expanded = np.zeros(grid.shape)
    for t, wt in zip(nodes, weights):
        for s, ws in zip(nodes, weights):
            hess_1 = Q.derivative(2, x, y, jet_w + s * t * a1)
            hess_2 = Q.derivative(2, x, y, jet_w + s * t * a2)
            first = t * (_contract(hess_1, a1, d) + _contract(hess_2, a2, d))
            third = np.zeros(grid.shape)
            for tau, wtau in zip(nodes, weights):
                z = s * t * a2 + tau * s * t * d
                third += wtau * _contract(Q.derivative(3, x, y, jet_w + z), a1, a2, d)
            expanded += wt * ws * (first + s * t**2 * third)

    _finite_or_raise(expanded, "Expanded remainder difference")
    return ScalarField(grid, direct), ScalarField(grid, expanded)


@dataclass
class DerivativeBoundReport:
    """Measured sup of composed derivatives against the box bound, per order."""

    box_radius: float
    measured: Dict[int, float] = field(default_factory=dict)
    bound: Dict[int, float] = field(default_factory=dict)
    ratio: Dict[int, float] = field(default_factory=dict)

    @property
    def max_ratio(self) -> float:
        return max(self.ratio.values()) if self.ratio else 0.0


def derivative_bound_check(
    Q: Nonlinearity, f: ScalarField, orders: Sequence[int] = (0, 1, 2, 3)
) -> DerivativeBoundReport:
    """Compare sup |d^l Q(x, f, grad f, lap f)| with the sup of d^l Q over [-M, M]^4, M = c2_norm(f)."""
    grid = f.grid
    radius = c2_norm(f)
    jet_f = jet(f)
    gamma_max = float(np.max(np.abs(Q.gamma_values(grid.x, grid.y))))
    report = DerivativeBoundReport(box_radius=radius)
    for order in orders:
        measured = float(np.max(np.abs(Q.derivative(order, grid.x, grid.y, jet_f))))
        bound = gamma_max * Q.box_bound(order, radius)
        if bound > 0.0:
            ratio = measured / bound
        else:
            ratio = 0.0 if measured == 0.0 else float("inf")
        report.measured[order] = measured
        report.bound[order] = bound
        report.ratio[order] = ratio
        logger.debug(f"Order {order}: measured {measured:.3e}, bound {bound:.3e}")
    return report


def derivative_consistency(
    Q: Nonlinearity,
    seed: int = 0,
    samples: int = 100,
    eps: float = 1e-5,
    scale: float = 1.0,
) -> float:
    """Largest relative mismatch between supplied partials and central differences.

    Jets are drawn uniformly from ``[-scale, scale]^4`` at random points of the square.
    """
    rng = np.random.default_rng(seed)
    jets = rng.uniform(-scale, scale, size=(JET_SIZE, samples))
    x, y = rng.uniform(0.0, 1.0, size=(2, samples))
    worst = 0.0
    for order in range(1, MAX_ORDER + 1):
        exact = Q.derivative(order, x, y, jets)
        columns = []
        for axis in range(JET_SIZE):
            step = np.zeros((JET_SIZE, 1))
            step[axis] = eps
            plus = Q.derivative(order - 1, x, y, jets + step)
            minus = Q.derivative(order - 1, x, y, jets - step)
            columns.append((plus - minus) / (2.0 * eps))
        finite_difference = np.stack(columns, axis=order - 1)
        error = np.abs(finite_difference - exact) / np.maximum(1.0, np.abs(exact))
        worst = max(worst, float(np.max(error)))
    logger.debug(f"Derivative consistency for {Q.describe()}: {worst:.3e}")
    return worst
