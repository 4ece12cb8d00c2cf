"""Rectangular grid over the unit square, discrete fields and difference operators.

Fields are stored as ``(nx, ny)`` arrays indexed ``[i, j]`` with ``x = i * hx`` and
``y = j * hy``; the flat index of node ``(i, j)`` is ``i * ny + j``.

Boundary nodes are ordered by flat index. Each carries one outward normal axis; the
four corners use the x-axis.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import sparse

from bilab.errors import GridError
from bilab.logging import configure_module_logger

logger = configure_module_logger(__name__)

MIN_NODES = 5


def _first_difference(n: int, h: float) -> sparse.csr_matrix:
    """Centered first difference, second-order one-sided rows at both ends."""
    d = sparse.lil_matrix((n, n))
    d[0, 0:3] = [-3.0, 4.0, -1.0]
    for i in range(1, n - 1):
        d[i, i - 1] = -1.0
        d[i, i + 1] = 1.0
    d[n - 1, n - 3 : n] = [1.0, -4.0, 3.0]
    return (d / (2.0 * h)).tocsr()


def _second_difference(n: int, h: float) -> sparse.csr_matrix:
    """Three-point second difference, second-order one-sided rows at both ends."""
    d = sparse.lil_matrix((n, n))
    d[0, 0:4] = [2.0, -5.0, 4.0, -1.0]
    for i in range(1, n - 1):
        d[i, i - 1 : i + 2] = [1.0, -2.0, 1.0]
    d[n - 1, n - 4 : n] = [-1.0, 4.0, -5.0, 2.0]
    return (d / h**2).tocsr()


@dataclass(frozen=True)
class DifferenceOperators:
    """Sparse matrices acting on flattened fields of one grid."""

    dx: sparse.csr_matrix
    dy: sparse.csr_matrix
    lap: sparse.csr_matrix
    normal: sparse.csr_matrix


@dataclass(frozen=True)
class DomainGrid:
    """Node grid on [0, 1]^2 with ``nx`` by ``ny`` nodes."""

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < MIN_NODES or self.ny < MIN_NODES:
            logger.error(f"Grid too small: {self.nx}x{self.ny}")
            raise GridError(
                f"Grid needs at least {MIN_NODES} nodes per axis, got {self.nx}x{self.ny}"
            )

    @property
    def hx(self) -> float:
        return 1.0 / (self.nx - 1)

    @property
    def hy(self) -> float:
        return 1.0 / (self.ny - 1)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @cached_property
    def x(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nx)[:, None] * np.ones((1, self.ny))

    @cached_property
    def y(self) -> np.ndarray:
        return np.ones((self.nx, 1)) * np.linspace(0.0, 1.0, self.ny)[None, :]

    @cached_property
    def layer(self) -> np.ndarray:
        """Distance of every node to the boundary, counted in node layers."""
        i = np.arange(self.nx)[:, None]
        j = np.arange(self.ny)[None, :]
        return np.minimum(
            np.minimum(i, self.nx - 1 - i), np.minimum(j, self.ny - 1 - j)
        )

    @cached_property
    def boundary_index(self) -> np.ndarray:
        return np.flatnonzero(self.layer.ravel() == 0)

    @cached_property
    def interior_index(self) -> np.ndarray:
        return np.flatnonzero(self.layer.ravel() > 0)

    @cached_property
    def interior_mask(self) -> np.ndarray:
        return self.layer > 0

    @property
    def n_boundary(self) -> int:
        return self.boundary_index.size

    @cached_property
    def normal_axis(self) -> np.ndarray:
        i, j = np.divmod(self.boundary_index, self.ny)
        return np.where((i == 0) | (i == self.nx - 1), 0, 1)

    @cached_property
    def normal_sign(self) -> np.ndarray:
        i, j = np.divmod(self.boundary_index, self.ny)
        on_x_edge = (i == 0) | (i == self.nx - 1)
        sign_x = np.where(i == 0, -1.0, 1.0)
        sign_y = np.where(j == 0, -1.0, 1.0)
        return np.where(on_x_edge, sign_x, sign_y)

    @cached_property
    def arclength(self) -> np.ndarray:
        """Perimeter parameter in [0, 4) of every boundary node, counter-clockwise from the origin."""
        xb = self.x.ravel()[self.boundary_index]
        yb = self.y.ravel()[self.boundary_index]
        return np.select(
            [yb == 0.0, xb == 1.0, yb == 1.0],
            [xb, 1.0 + yb, 3.0 - xb],
            default=4.0 - yb,
        ) % 4.0

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite trapezoidal quadrature weights."""
        wx = np.full(self.nx, self.hx)
        wx[[0, -1]] *= 0.5
        wy = np.full(self.ny, self.hy)
        wy[[0, -1]] *= 0.5
        return np.outer(wx, wy)

    @property
    def bilaplacian_scale(self) -> float:
        """Size of the largest entries of the discrete bi-Laplacian."""
        return (2.0 / self.hx**2 + 2.0 / self.hy**2) ** 2

    @cached_property
    def operators(self) -> DifferenceOperators:
        logger.debug(f"Assembling difference operators for {self.nx}x{self.ny} grid")
        eye_x = sparse.identity(self.nx, format="csr")
        eye_y = sparse.identity(self.ny, format="csr")
        dx = sparse.kron(_first_difference(self.nx, self.hx), eye_y, format="csr")
        dy = sparse.kron(eye_x, _first_difference(self.ny, self.hy), format="csr")
        lap = (
            sparse.kron(_second_difference(self.nx, self.hx), eye_y)
            + sparse.kron(eye_x, _second_difference(self.ny, self.hy))
        ).tocsr()
        along_x = np.where(self.normal_axis == 0, self.normal_sign, 0.0)
        along_y = np.where(self.normal_axis == 1, self.normal_sign, 0.0)
        normal = (
            sparse.diags(along_x) @ dx[self.boundary_index]
            + sparse.diags(along_y) @ dy[self.boundary_index]
        ).tocsr()
        return DifferenceOperators(dx=dx, dy=dy, lap=lap, normal=normal)

    def node(self, x: float, y: float) -> Tuple[int, int]:
        """Nearest grid node to the point (x, y)."""
        i = int(round(x / self.hx))
        j = int(round(y / self.hy))
        if not (0 <= i < self.nx and 0 <= j < self.ny):
            raise GridError(f"Point ({x}, {y}) lies outside the unit square")
        return i, j


def _as_grid_array(grid: DomainGrid, values, shape: Tuple[int, ...], what: str) -> np.ndarray:
    array = np.array(values, dtype=float)
    if array.shape != shape:
        if array.size != int(np.prod(shape)):
            raise GridError(f"{what} expects {shape} values, got shape {array.shape}")
        array = array.reshape(shape)
    if not np.all(np.isfinite(array)):
        bad = np.argwhere(~np.isfinite(array))[0]
        raise GridError(f"{what} has a non-finite value at index {tuple(bad)}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class BoundaryTrace:
    """One value per boundary node, in the grid's boundary ordering."""

    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        values = _as_grid_array(
            self.grid, self.values, (self.grid.n_boundary,), "BoundaryTrace"
        )
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "BoundaryTrace":
        return cls(grid, np.zeros(grid.n_boundary))

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __add__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        return BoundaryTrace(self.grid, self.values + other.values)

    def __sub__(self, other: "BoundaryTrace") -> "BoundaryTrace":
        return BoundaryTrace(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "BoundaryTrace":
        return BoundaryTrace(self.grid, scalar * self.values)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real values on the nodes of a grid.

    ``lap_trace`` optionally carries the boundary values of the field's Laplacian, as
    known to the mixed Navier solver. ``laplacian`` uses it in place of the one-sided
    boundary stencil.
    """

    grid: DomainGrid
    values: np.ndarray
    lap_trace: Optional[np.ndarray] = None

    def __post_init__(self):
        values = _as_grid_array(self.grid, self.values, self.grid.shape, "ScalarField")
        object.__setattr__(self, "values", values)
        if self.lap_trace is not None:
            trace = _as_grid_array(
                self.grid, self.lap_trace, (self.grid.n_boundary,), "Laplacian trace"
            )
            object.__setattr__(self, "lap_trace", trace)

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def constant(cls, grid: DomainGrid, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(
        cls, grid: DomainGrid, fn: Callable[[np.ndarray, np.ndarray], np.ndarray]
    ) -> "ScalarField":
        return cls(grid, np.broadcast_to(fn(grid.x, grid.y), grid.shape))

    @property
    def flat(self) -> np.ndarray:
        return self.values.ravel()

    def boundary_values(self) -> np.ndarray:
        return self.flat[self.grid.boundary_index]

    def laplacian_trace(self) -> np.ndarray:
        """Boundary values of the Laplacian: the carried trace, else the one-sided stencil."""
        if self.lap_trace is not None:
            return self.lap_trace
        return (self.grid.operators.lap @ self.flat)[self.grid.boundary_index]

    def without_trace(self) -> "ScalarField":
        return ScalarField(self.grid, self.values)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _check_grid(self, other: "ScalarField") -> None:
        if other.grid != self.grid:
            raise GridError(f"Grid mismatch: {self.grid} vs {other.grid}")

    def _combined_trace(self, other: "ScalarField", sign: float) -> Optional[np.ndarray]:
        if self.lap_trace is None and other.lap_trace is None:
            return None
        return self.laplacian_trace() + sign * other.laplacian_trace()

    def __add__(self, other: "ScalarField") -> "ScalarField":
        self._check_grid(other)
        return ScalarField(
            self.grid, self.values + other.values, self._combined_trace(other, 1.0)
        )

    def __sub__(self, other: "ScalarField") -> "ScalarField":
        self._check_grid(other)
        return ScalarField(
            self.grid, self.values - other.values, self._combined_trace(other, -1.0)
        )

    def __neg__(self) -> "ScalarField":
        return -1.0 * self

    def __mul__(self, scalar: float) -> "ScalarField":
        trace = None if self.lap_trace is None else scalar * self.lap_trace
        return ScalarField(self.grid, scalar * self.values, trace)

    __rmul__ = __mul__

    def __truediv__(self, scalar: float) -> "ScalarField":
        return self * (1.0 / scalar)


@dataclass(frozen=True, eq=False)
class VectorField:
    """Two components per node, stored with shape ``(2, nx, ny)``."""

    grid: DomainGrid
    values: np.ndarray

    def __post_init__(self):
        values = _as_grid_array(
            self.grid, self.values, (2,) + self.grid.shape, "VectorField"
        )
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, grid: DomainGrid) -> "VectorField":
        return cls(grid, np.zeros((2,) + grid.shape))

    def component(self, axis: int) -> ScalarField:
        return ScalarField(self.grid, self.values[axis])

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))


def laplacian(f: ScalarField) -> ScalarField:
    """5-point Laplacian inside, one-sided second differences (or the carried trace) on the boundary."""
    grid = f.grid
    values = grid.operators.lap @ f.flat
    if f.lap_trace is not None:
        values[grid.boundary_index] = f.lap_trace
    return ScalarField(grid, values)


def gradient(f: ScalarField) -> VectorField:
    ops = f.grid.operators
    return VectorField(f.grid, np.stack([ops.dx @ f.flat, ops.dy @ f.flat]))


def normal_derivative(f: ScalarField) -> BoundaryTrace:
    """Second-order one-sided difference along the outward normal of every boundary node."""
    return BoundaryTrace(f.grid, f.grid.operators.normal @ f.flat)


def inner_product(f: ScalarField, g: ScalarField) -> float:
    """Trapezoidal approximation of the integral of f * g over the unit square."""
    f._check_grid(g)
    return float(np.sum(f.grid.weights * f.values * g.values))


def jet(f: ScalarField) -> np.ndarray:
    """Stack ``(f, df/dx, df/dy, lap f)`` with shape ``(4, nx, ny)``."""
    grad = gradient(f).values
    return np.stack([f.values, grad[0], grad[1], laplacian(f).values])


def c2_norm(f: ScalarField) -> float:
    """Discrete stand-in for the Hölder norms: sup of |f|, |grad f| components and |lap f|."""
    return float(np.max(np.abs(jet(f))))


def boundary_mode(grid: DomainGrid, index: int) -> np.ndarray:
    """Real Fourier mode number ``index`` along the perimeter, ordered by frequency.

    Mode 0 is the constant; modes ``2k - 1`` and ``2k`` are ``cos`` and ``sin`` of
    frequency ``k`` (one period per perimeter length 4).
    """
    if index < 0:
        raise GridError(f"Mode index must be non-negative, got {index}")
    if index == 0:
        return np.ones(grid.n_boundary)
    k = (index + 1) // 2
    phase = 2.0 * np.pi * k * grid.arclength / 4.0
    return np.cos(phase) if index % 2 == 1 else np.sin(phase)


def random_boundary_data(
    grid: DomainGrid, rng: np.random.Generator, n_modes: int
) -> np.ndarray:
    """Random combination of the first ``n_modes`` perimeter modes."""
    coefficients = rng.standard_normal(n_modes)
    return sum(c * boundary_mode(grid, k) for k, c in enumerate(coefficients))
