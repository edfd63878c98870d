"""Finite-difference discretization of ``-div(a grad u) + q u`` with weight ``rho``.

Domains are intervals (1D) or axis-aligned rectangles (2D) with homogeneous
Dirichlet conditions. Unknowns live at interior nodes of a uniform node grid;
fields are stored on the full grid (boundary values included) in C order
(x index slowest).

The stiffness matrix is the conservative second-order stencil: diffusion
coefficients on half-nodes are harmonic means of the nodal values, and the
2D off-diagonal term ``a_12`` uses the symmetric centred cross stencil (only
sensible when ``a`` is diagonally dominant). The generalized eigenproblem
``K v = lambda diag(rho) v`` is symmetric, so ``A = rho^-1 K`` is self-adjoint
for the weighted inner product.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    CoefficientError,
    InvalidArgumentError,
    NumericError,
    PreconditionError,
    TruncationError,
)

logger = logging.getLogger(__name__)

_DENSE_LIMIT = 2500


@dataclass(frozen=True)
class DomainSpec:
    """Interval ``((x0, x1),)`` or rectangle ``((x0, x1), (y0, y1))``.

    ``resolution`` counts nodes per axis, boundary nodes included.
    """

    extents: tuple
    resolution: tuple

    def __post_init__(self):
        ext = tuple(tuple(float(v) for v in e) for e in self.extents)
        res = tuple(int(r) for r in np.atleast_1d(self.resolution))
        if len(res) == 1 and len(ext) > 1:
            res = res * len(ext)
        object.__setattr__(self, "extents", ext)
        object.__setattr__(self, "resolution", res)
        if len(ext) not in (1, 2) or len(res) != len(ext):
            raise InvalidArgumentError("domain must be 1D or 2D with one resolution per axis")
        for lo, hi in ext:
            if not hi > lo:
                raise InvalidArgumentError(f"degenerate extent ({lo}, {hi})")
        if min(res) < 16:
            raise InvalidArgumentError("resolution must be at least 16 nodes per axis")

    @classmethod
    def interval(cls, x0: float, x1: float, nodes: int) -> "DomainSpec":
        return cls(((x0, x1),), (nodes,))

    @classmethod
    def rectangle(cls, x: tuple, y: tuple, nodes) -> "DomainSpec":
        return cls((tuple(x), tuple(y)), tuple(np.broadcast_to(nodes, 2)))

    @property
    def dimension(self) -> int:
        return len(self.extents)

    @property
    def shape(self) -> tuple:
        return self.resolution

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.resolution))

    @property
    def spacing(self) -> np.ndarray:
        return np.array([(hi - lo) / (n - 1) for (lo, hi), n in zip(self.extents, self.resolution)])

    @cached_property
    def axes(self) -> list:
        return [np.linspace(lo, hi, n) for (lo, hi), n in zip(self.extents, self.resolution)]

    @cached_property
    def coordinates(self) -> np.ndarray:
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)

    @cached_property
    def interior(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[(slice(1, -1),) * self.dimension] = True
        return np.flatnonzero(mask.ravel())

    @cached_property
    def quadrature_weights(self) -> np.ndarray:
        w = np.ones(1)
        for n, h in zip(self.resolution, self.spacing):
            wa = np.full(n, h)
            wa[[0, -1]] *= 0.5
            w = np.multiply.outer(w, wa)
        return w.ravel()

    @cached_property
    def boundary(self) -> "BoundarySubset":
        """All boundary nodes with a well-defined outward normal.

        Rectangle corners are excluded (no normal there).
        """
        idx, normals = [], []
        if self.dimension == 1:
            n = self.resolution[0]
            idx = [0, n - 1]
            normals = [(-1.0,), (1.0,)]
        else:
            nx, ny = self.resolution
            for j in range(1, ny - 1):
                idx.append(j); normals.append((-1.0, 0.0))
            for j in range(1, ny - 1):
                idx.append((nx - 1) * ny + j); normals.append((1.0, 0.0))
            for i in range(1, nx - 1):
                idx.append(i * ny); normals.append((0.0, -1.0))
            for i in range(1, nx - 1):
                idx.append(i * ny + ny - 1); normals.append((0.0, 1.0))
        return BoundarySubset(self, np.array(idx), np.array(normals, dtype=float))

    def grid_index(self, flat: int) -> tuple:
        return np.unravel_index(flat, self.shape)

    def nearest_boundary(self, point) -> int:
        """Position (within ``boundary``) of the boundary node closest to ``point``."""
        pts = self.coordinates[self.boundary.nodes]
        d = np.linalg.norm(pts - np.atleast_1d(np.asarray(point, dtype=float)), axis=1)
        return int(np.argmin(d))


@dataclass(frozen=True, eq=False)
class BoundarySubset:
    """Boundary nodes (flat grid indices) and their outward unit normals."""

    domain: DomainSpec
    nodes: np.ndarray
    normals: np.ndarray

    def __post_init__(self):
        if len(self.nodes) == 0:
            raise InvalidArgumentError("boundary subset is empty")

    def __len__(self):
        return len(self.nodes)

    def subset(self, positions) -> "BoundarySubset":
        pos = np.atleast_1d(np.asarray(positions, dtype=int))
        return BoundarySubset(self.domain, self.nodes[pos], self.normals[pos])

    def positions_in(self, full: "BoundarySubset") -> np.ndarray:
        lookup = {int(n): i for i, n in enumerate(full.nodes)}
        try:
            return np.array([lookup[int(n)] for n in self.nodes])
        except KeyError as exc:
            raise InvalidArgumentError(f"node {exc} is not a boundary node") from None

    @property
    def points(self) -> np.ndarray:
        return self.domain.coordinates[self.nodes]


@dataclass(eq=False)
class CoefficientField:
    """Nodal samples of the diffusion matrix ``a``, potential ``q`` and weight ``rho``."""

    a: np.ndarray
    q: np.ndarray
    rho: np.ndarray
    ellipticity: float = field(init=False, default=0.0)

    def __post_init__(self):
        self.a = np.asarray(self.a, dtype=float)
        self.q = np.asarray(self.q, dtype=float)
        self.rho = np.asarray(self.rho, dtype=float)
        n = self.q.shape[0]
        if self.a.ndim != 3 or self.a.shape[0] != n or self.a.shape[1] != self.a.shape[2]:
            raise CoefficientError("a must have shape (n_nodes, d, d)")
        if self.rho.shape != (n,):
            raise CoefficientError("rho must have one sample per node")
        asym = np.abs(self.a - np.swapaxes(self.a, 1, 2)).max(axis=(1, 2))
        if np.any(asym > 1e-12 * (1.0 + np.abs(self.a).max())):
            bad = int(np.argmax(asym))
            raise CoefficientError(f"a is not symmetric at node {bad}")
        min_eig = np.linalg.eigvalsh(self.a).min(axis=1)
        bad = int(np.argmin(min_eig))
        if not min_eig[bad] > 0:
            raise CoefficientError(
                f"ellipticity violated at node {bad}: smallest eigenvalue of a is {min_eig[bad]:.3e}"
            )
        self.ellipticity = float(min_eig[bad])
        if np.any(self.q < 0):
            raise CoefficientError(f"q is negative at node {int(np.argmin(self.q))}")
        if not np.all(self.rho > 0):
            raise CoefficientError(f"rho is not positive at node {int(np.argmin(self.rho))}")

    @classmethod
    def constant(cls, domain: DomainSpec, a=1.0, q=0.0, rho=1.0) -> "CoefficientField":
        d, n = domain.dimension, domain.n_nodes
        a_mat = np.eye(d) * a if np.ndim(a) == 0 else np.asarray(a, dtype=float)
        return cls(np.broadcast_to(a_mat, (n, d, d)).copy(), np.full(n, float(q)), np.full(n, float(rho)))

    @classmethod
    def from_functions(cls, domain: DomainSpec, a=None, q=None, rho=None) -> "CoefficientField":
        """Sample callables of the coordinate array ``x`` of shape (n_nodes, d).

        ``a`` may return a scalar field (isotropic) or an (n, d, d) array.
        """
        x = domain.coordinates
        n, d = x.shape
        if a is None:
            a_val = np.broadcast_to(np.eye(d), (n, d, d)).copy()
        else:
            a_val = np.asarray(a(x), dtype=float)
            if a_val.ndim == 1:
                a_val = a_val[:, None, None] * np.eye(d)[None]
        q_val = np.zeros(n) if q is None else np.broadcast_to(np.asarray(q(x), dtype=float), (n,)).copy()
        r_val = np.ones(n) if rho is None else np.broadcast_to(np.asarray(rho(x), dtype=float), (n,)).copy()
        return cls(a_val, q_val, r_val)

    @classmethod
    def from_csv(cls, domain: DomainSpec, path) -> "CoefficientField":
        """Load nodal samples from CSV.

        Columns: ``x`` (and ``y`` in 2D), then ``a`` (isotropic) or
        ``a11,a12,a22`` (``a11`` alone in 1D), ``q`` and ``rho``. Rows must
        follow the grid's C ordering.
        """
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        if len(rows) != domain.n_nodes:
            raise CoefficientError(f"{path}: {len(rows)} rows for {domain.n_nodes} nodes")
        cols = lambda k: np.array([float(r[k]) for r in rows])  # noqa: E731
        coord_names = ["x", "y"][: domain.dimension]
        coords = np.stack([cols(c) for c in coord_names], axis=1)
        if not np.allclose(coords, domain.coordinates, atol=1e-9):
            raise CoefficientError(f"{path}: node coordinates do not match the domain grid")
        n, d = domain.n_nodes, domain.dimension
        keys = rows[0].keys()
        if "a" in keys:
            a = cols("a")[:, None, None] * np.eye(d)[None]
        elif d == 1:
            a = cols("a11")[:, None, None]
        else:
            a = np.empty((n, 2, 2))
            a[:, 0, 0] = cols("a11")
            a[:, 1, 1] = cols("a22")
            a[:, 0, 1] = a[:, 1, 0] = cols("a12") if "a12" in keys else 0.0
        return cls(a, cols("q"), cols("rho"))


def _harmonic(u, v):
    return 2.0 * u * v / (u + v)


class DiscreteOperator:
    """Interior stiffness matrix ``K`` (strong form) with nodal weight ``rho``.

    ``A = diag(rho)^-1 K`` approximates ``rho^-1 (-div(a grad) + q)``.
    """

    def __init__(self, domain: DomainSpec, coeffs: CoefficientField):
        if coeffs.q.shape[0] != domain.n_nodes or coeffs.a.shape[1] != domain.dimension:
            raise CoefficientError("coefficient field does not match the domain grid")
        self.domain = domain
        self.coeffs = coeffs
        self.stiffness = self._assemble().tocsc()
        self.rho_interior = coeffs.rho[domain.interior]

    @property
    def n_interior(self) -> int:
        return self.domain.interior.size

    def _assemble(self) -> sp.spmatrix:
        dom, c = self.domain, self.coeffs
        shape = dom.shape
        h = dom.spacing
        grid_idx = np.arange(dom.n_nodes).reshape(shape)
        interior = np.zeros(shape, dtype=bool)
        interior[(slice(1, -1),) * dom.dimension] = True

        rows, cols, vals = [], [], []

        def add(r, cc, v):
            rows.append(r.ravel()); cols.append(cc.ravel()); vals.append(np.broadcast_to(v, r.shape).ravel())

        centre = grid_idx[interior]
        add(centre, centre, c.q.reshape(shape)[interior])
        for ax in range(dom.dimension):
            a_ax = c.a[:, ax, ax].reshape(shape)
            for step in (-1, 1):
                nb = np.roll(grid_idx, -step, axis=ax)[interior]
                a_half = _harmonic(a_ax[interior], np.roll(a_ax, -step, axis=ax)[interior])
                add(centre, centre, a_half / h[ax] ** 2)
                add(centre, nb, -a_half / h[ax] ** 2)

        if dom.dimension == 2:
            a12 = c.a[:, 0, 1].reshape(shape)
            if np.any(a12 != 0):
                scale = 1.0 / (4.0 * h[0] * h[1])
                # -d_x(a12 d_y u) - d_y(a12 d_x u), centred; symmetric by construction
                for sx in (-1, 1):
                    for sy in (-1, 1):
                        nb = np.roll(np.roll(grid_idx, -sx, axis=0), -sy, axis=1)[interior]
                        ax_nb = np.roll(a12, -sx, axis=0)[interior]
                        ay_nb = np.roll(a12, -sy, axis=1)[interior]
                        add(centre, nb, -sx * sy * (ax_nb + ay_nb) * scale)

        mat = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(dom.n_nodes, dom.n_nodes),
        ).tocsr()
        sel = dom.interior
        return mat[sel][:, sel]

    @cached_property
    def _lu(self):
        try:
            return spla.splu(self.stiffness)
        except RuntimeError as exc:  # singular factorization
            raise NumericError(f"stiffness factorization failed: {exc}") from exc

    def to_interior(self, field_full: np.ndarray) -> np.ndarray:
        return np.asarray(field_full)[..., self.domain.interior]

    def to_full(self, field_int: np.ndarray) -> np.ndarray:
        field_int = np.asarray(field_int)
        out = np.zeros(field_int.shape[:-1] + (self.domain.n_nodes,), dtype=field_int.dtype)
        out[..., self.domain.interior] = field_int
        return out

    def apply(self, u: np.ndarray) -> np.ndarray:
        """``A u`` on the full grid (boundary entries of the result are zero)."""
        ui = self.to_interior(u)
        return self.to_full(self.stiffness @ ui / self.rho_interior)

    def solve(self, g: np.ndarray) -> np.ndarray:
        """Solve ``A v = g`` with homogeneous Dirichlet data."""
        gi = self.to_interior(g)
        v = self._lu.solve(np.ascontiguousarray(self.rho_interior * gi))
        if not np.all(np.isfinite(v)):
            raise NumericError("Dirichlet solve produced non-finite values")
        return self.to_full(v)

    def solve_shifted(self, g: np.ndarray, shift: complex) -> np.ndarray:
        """Solve ``(A + shift) v = g`` (complex shifts allowed)."""
        gi = self.to_interior(g).astype(complex)
        mat = (self.stiffness + shift * sp.diags(self.rho_interior)).tocsc()
        v = spla.spsolve(mat, self.rho_interior * gi)
        return self.to_full(np.asarray(v))


def assemble(domain: DomainSpec, coeffs: CoefficientField) -> DiscreteOperator:
    return DiscreteOperator(domain, coeffs)


def weighted_inner(u: np.ndarray, v: np.ndarray, coeffs: CoefficientField, domain: DomainSpec) -> float:
    """Trapezoidal quadrature of ``int u v rho dx``."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape[-1] != domain.n_nodes or v.shape[-1] != domain.n_nodes:
        raise InvalidArgumentError(f"shape mismatch: {u.shape} vs {v.shape} on {domain.n_nodes} nodes")
    return np.sum(u * v * coeffs.rho * domain.quadrature_weights, axis=-1)


def conormal_trace(values: np.ndarray, coeffs: CoefficientField, boundary: BoundarySubset) -> np.ndarray:
    """One-sided second-order approximation of ``sum_ij a_ij d_j v nu_i``.

    ``values`` may carry leading batch axes; the last axis is the grid.
    Normal derivatives use the three-point one-sided stencil, tangential
    derivatives (2D edges) the centred one.
    """
    dom = boundary.domain
    if len(boundary) == 0:
        raise InvalidArgumentError("boundary subset is empty")
    vals = np.asarray(values)
    grid = vals.reshape(vals.shape[:-1] + dom.shape)
    h = dom.spacing
    lead = vals.shape[:-1]
    out = np.zeros(lead + (len(boundary),), dtype=np.result_type(vals, float))
    for b, (node, nu) in enumerate(zip(boundary.nodes, boundary.normals)):
        idx = dom.grid_index(node)
        grad = []
        for ax in range(dom.dimension):
            def at(offset, _ax=ax):
                j = list(idx)
                j[_ax] += offset
                return grid[(Ellipsis,) + tuple(j)]

            if nu[ax] != 0:
                s = -int(np.sign(nu[ax]))  # inward step
                grad.append(s * (-3.0 * at(0) + 4.0 * at(s) - at(2 * s)) / (2.0 * h[ax]))
            else:
                grad.append((at(1) - at(-1)) / (2.0 * h[ax]))
        a = coeffs.a[node]
        flux = sum(nu[i] * a[i, j] * grad[j] for i in range(dom.dimension) for j in range(dom.dimension))
        out[..., b] = flux
    return out


@dataclass(eq=False)
class EigenSystem:
    """Lowest eigenpairs of ``A``, grouped by (numerical) multiplicity.

    ``functions[i]`` is the i-th eigenfunction on the full grid, orthonormal in
    the ``rho``-weighted inner product; ``values[i]`` its eigenvalue.
    ``groups[n]`` lists the function indices sharing the n-th distinct
    eigenvalue ``lambdas[n]``. ``traces`` holds conormal traces at every node of
    ``domain.boundary``.
    """

    operator: DiscreteOperator
    values: np.ndarray
    functions: np.ndarray
    groups: list
    lambdas: np.ndarray
    traces: np.ndarray

    @property
    def domain(self) -> DomainSpec:
        return self.operator.domain

    @property
    def coeffs(self) -> CoefficientField:
        return self.operator.coeffs

    @property
    def n_modes(self) -> int:
        return self.values.size

    @property
    def multiplicities(self) -> np.ndarray:
        return np.array([len(g) for g in self.groups])

    def group_of(self) -> np.ndarray:
        """Distinct-eigenvalue index of every eigenfunction."""
        out = np.empty(self.n_modes, dtype=int)
        for n, g in enumerate(self.groups):
            out[g] = n
        return out

    def coefficients(self, g: np.ndarray) -> np.ndarray:
        """``<g, phi_i>`` in the weighted inner product (g on the full grid)."""
        return weighted_inner(self.functions, np.broadcast_to(g, self.functions.shape), self.coeffs, self.domain)

    def source_coefficients(self, f: np.ndarray) -> np.ndarray:
        """``<rho^-1 f, phi_i>``, the modal loads of a source ``f``."""
        return self.coefficients(np.asarray(f) / self.coeffs.rho)

    def synthesize(self, weights: np.ndarray) -> np.ndarray:
        return np.asarray(weights) @ self.functions

    def trace_positions(self, boundary: BoundarySubset) -> np.ndarray:
        return boundary.positions_in(self.domain.boundary)


def eigensystem(op: DiscreteOperator, n_modes: int, mult_tol: float = 1e-6) -> EigenSystem:
    """Lowest ``n_modes`` eigenpairs of ``A``; values within ``mult_tol*lambda`` are grouped."""
    n_int = op.n_interior
    if not 0 < n_modes < n_int:
        raise InvalidArgumentError(f"n_modes must lie in [1, {n_int - 1}]")
    dom = op.domain
    cell = float(np.prod(dom.spacing))
    d_half = 1.0 / np.sqrt(op.rho_interior)
    try:
        if n_int <= _DENSE_LIMIT:
            sym = (op.stiffness.toarray() * d_half[:, None]) * d_half[None, :]
            sym = 0.5 * (sym + sym.T)
            vals, vecs = scipy.linalg.eigh(sym, subset_by_index=[0, n_modes - 1])
        else:
            sym = sp.diags(d_half) @ op.stiffness @ sp.diags(d_half)
            vals, vecs = spla.eigsh(sym.tocsc(), k=n_modes, sigma=0.0, which="LM", tol=1e-13)
            order = np.argsort(vals)
            vals, vecs = vals[order], vecs[:, order]
            vecs, _ = np.linalg.qr(vecs)
    except (np.linalg.LinAlgError, spla.ArpackNoConvergence) as exc:
        raise NumericError(f"eigensolver did not converge: {exc}") from exc

    funcs_int = (vecs * d_half[:, None]).T / math.sqrt(cell)
    # sign convention: first significant interior value is positive
    for k in range(funcs_int.shape[0]):
        row = funcs_int[k]
        first = np.flatnonzero(np.abs(row) > 1e-3 * np.abs(row).max())[0]
        if row[first] < 0:
            funcs_int[k] = -row
    functions = op.to_full(funcs_int)

    groups, start = [], 0
    for i in range(1, n_modes + 1):
        if i == n_modes or vals[i] - vals[start] > mult_tol * abs(vals[start]):
            groups.append(np.arange(start, i))
            start = i
    lambdas = np.array([vals[g].mean() for g in groups])
    traces = conormal_trace(functions, op.coeffs, dom.boundary)
    return EigenSystem(op, vals, functions, groups, lambdas, traces)


def apply_inverse_power(op: DiscreteOperator, k: int, g: np.ndarray) -> np.ndarray:
    """``A^-k g`` by ``k`` successive Dirichlet solves."""
    if int(k) != k or k < 1:
        raise InvalidArgumentError(f"power must be a positive integer, got {k}")
    out = np.asarray(g, dtype=float)
    for _ in range(int(k)):
        out = op.solve(out)
    return out


@dataclass(frozen=True)
class SpectralNorm:
    value: float
    tail_estimate: float


def fractional_norm(g: np.ndarray, s: float, eig: EigenSystem, max_tail_ratio: float = 0.1) -> SpectralNorm:
    """Truncated ``D(A^s)`` norm ``(sum |<g, phi>|^2 lambda^(2s))^(1/2)``.

    The tail estimate is the weighted-L2 energy of ``g`` missed by the retained
    modes, scaled by the largest retained ``lambda^s``.
    """
    if s < 0:
        raise InvalidArgumentError("s must be non-negative")
    c = eig.coefficients(g)
    partial = math.sqrt(float(np.sum(c**2 * eig.values ** (2.0 * s))))
    total = float(weighted_inner(g, g, eig.coeffs, eig.domain))
    missed = math.sqrt(max(total - float(np.sum(c**2)), 0.0))
    tail = missed * float(eig.values[-1]) ** s
    if tail > max_tail_ratio * partial:
        raise TruncationError(
            f"spectral tail {tail:.3e} exceeds {max_tail_ratio:g} of the partial sum {partial:.3e}",
            bound=tail,
        )
    return SpectralNorm(partial, tail)


def check_dirichlet(field_full: np.ndarray, domain: DomainSpec, tol: float = 0.0) -> None:
    mask = np.ones(domain.n_nodes, dtype=bool)
    mask[domain.interior] = False
    if np.any(np.abs(np.asarray(field_full)[..., mask]) > tol):
        raise PreconditionError("field does not vanish on the boundary")
