"""Lattice particle discretization, cell linked list and neighbor lists.

Inner particles sit at the cell centers of an N x N lattice and come first,
in row-major order (index = row * N + col, rows along y). Dummy particles
fill ``L`` layers around the square and follow, also row-major over the
extended lattice.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .kernel import KernelSpec, kernel_dr_over_r
from .problems import ADIABATIC, DIRICHLET, NEUMANN, ProblemSpec, source_at


class Role(IntEnum):
    INNER = 0
    DIRICHLET = 1
    NEUMANN = 2
    ADIABATIC = 3


_KIND_ROLE = {DIRICHLET: Role.DIRICHLET, NEUMANN: Role.NEUMANN, ADIABATIC: Role.ADIABATIC}

# outward normals, in the order used for tie-breaking (bottom, then left)
_EDGE_NORMALS = {
    "bottom": (0.0, -1.0),
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "top": (0.0, 1.0),
}


@dataclass
class ParticleSystem:
    """Structure-of-arrays state for every particle of the plate."""

    positions: np.ndarray  # (n, 2) m
    temperature: np.ndarray  # K
    conductivity: np.ndarray  # W/(m K)
    source_rate: np.ndarray  # W/m^3 (volumetric Neumann term included once assigned)
    volume: np.ndarray  # m^2
    normal: np.ndarray  # (n, 2)
    role: np.ndarray  # int8, Role values
    segment: np.ndarray  # index into spec.segments, -1 if none
    mirror: np.ndarray  # inner partner of each dummy, -1 for inner particles
    boundary_value: np.ndarray  # wall temperature for dirichlet dummies
    n_inner: int
    dx: float
    spec: ProblemSpec = field(repr=False)

    @property
    def n(self) -> int:
        return len(self.positions)

    @property
    def inner(self) -> slice:
        return slice(0, self.n_inner)

    def average_temperature(self) -> float:
        v = self.volume[self.inner]
        return float(np.dot(self.temperature[self.inner], v) / v.sum())

    def average_conductivity(self) -> float:
        v = self.volume[self.inner]
        return float(np.dot(self.conductivity[self.inner], v) / v.sum())

    def copy(self) -> "ParticleSystem":
        arrays = {
            name: getattr(self, name).copy()
            for name in ("positions", "temperature", "conductivity", "source_rate", "volume",
                         "normal", "role", "segment", "mirror", "boundary_value")
        }
        return ParticleSystem(n_inner=self.n_inner, dx=self.dx, spec=self.spec, **arrays)


def _edge_of_dummy(c: int, r: int, N: int) -> str:
    """Edge whose slab a dummy at lattice index (c, r) belongs to.

    Corner dummies go to the edge with the smallest perpendicular distance;
    ties go to bottom, then left.
    """
    dist = {}
    if r < 0:
        dist["bottom"] = -r
    if c < 0:
        dist["left"] = -c
    if c >= N:
        dist["right"] = c - N + 1
    if r >= N:
        dist["top"] = r - N + 1
    best = min(dist.values())
    for edge in _EDGE_NORMALS:
        if dist.get(edge) == best:
            return edge
    raise AssertionError("not a dummy index")


def _reflect(c: int, N: int) -> int:
    if c < 0:
        return -1 - c
    if c >= N:
        return 2 * N - 1 - c
    return c


def build_lattice(spec: ProblemSpec) -> ParticleSystem:
    """Discretize ``spec`` into inner and dummy particles.

    Temperatures start at zero and conductivities at ``spec.k0``; the
    volumetric source holds the internal heat source only.
    """
    N, L, side = int(spec.resolution), int(spec.dummy_layers), float(spec.side_length)
    if L > N:
        raise ValueError("dummy_layers cannot exceed the resolution (mirrors would leave the domain)")
    dx = side / N

    cols, rows = np.meshgrid(np.arange(N), np.arange(N))
    inner_c, inner_r = cols.ravel(), rows.ravel()

    ext = np.arange(-L, N + L)
    ec, er = np.meshgrid(ext, ext)
    ec, er = ec.ravel(), er.ravel()
    outside = (ec < 0) | (ec >= N) | (er < 0) | (er >= N)
    dum_c, dum_r = ec[outside], er[outside]

    c_all = np.concatenate([inner_c, dum_c])
    r_all = np.concatenate([inner_r, dum_r])
    n_inner, n = N * N, len(c_all)
    positions = np.column_stack([(c_all + 0.5) * dx, (r_all + 0.5) * dx])

    role = np.zeros(n, dtype=np.int8)
    segment = np.full(n, -1, dtype=np.int64)
    mirror = np.full(n, -1, dtype=np.int64)
    normal = np.zeros((n, 2))
    boundary_value = np.zeros(n)

    for w in range(n_inner, n):
        c, r = int(c_all[w]), int(r_all[w])
        edge = _edge_of_dummy(c, r, N)
        normal[w] = _EDGE_NORMALS[edge]
        mirror[w] = _reflect(r, N) * N + _reflect(c, N)
        along = positions[w, 0] if edge in ("bottom", "top") else positions[w, 1]
        role[w] = Role.ADIABATIC
        for s_id, s in enumerate(spec.segments):
            if s.edge == edge and s.start <= along < s.end:
                role[w] = _KIND_ROLE[s.kind]
                segment[w] = s_id
                if s.kind == DIRICHLET:
                    boundary_value[w] = s.value
                break

    source = np.zeros(n)
    source[:n_inner] = source_at(spec, positions[:n_inner])
    return ParticleSystem(
        positions=positions,
        temperature=np.zeros(n),
        conductivity=np.full(n, float(spec.k0)),
        source_rate=source,
        volume=np.full(n, dx * dx),
        normal=normal,
        role=role,
        segment=segment,
        mirror=mirror,
        boundary_value=boundary_value,
        n_inner=n_inner,
        dx=dx,
        spec=spec,
    )


@dataclass
class CellGrid:
    cell_size: float
    support_radius: float
    origin: np.ndarray
    shape: tuple
    cells: dict  # (cx, cy) -> int64 array of particle indices
    color_partition: list  # list of lists of (cx, cy); 3 x 3 stride coloring
    cell_of: np.ndarray  # (n, 2) cell index of each particle

    def cell_neighbors(self, key):
        cx, cy = key
        for ox in (-1, 0, 1):
            for oy in (-1, 0, 1):
                other = self.cells.get((cx + ox, cy + oy))
                if other is not None:
                    yield other


def build_cell_grid(ps: ParticleSystem, support_radius: float) -> CellGrid:
    if not support_radius > 0:
        raise ValueError("support_radius must be positive")
    pos = ps.positions
    origin = pos.min(axis=0)
    span = pos.max(axis=0) - origin
    # at least support_radius, and a whole number of cells across the span
    n_cells = np.maximum(np.floor(span / support_radius).astype(int), 1)
    cell_size = float(max(support_radius, (span / n_cells).min()))
    idx = np.minimum(np.floor((pos - origin) / cell_size).astype(np.int64), n_cells - 1)

    order = np.lexsort((np.arange(len(pos)), idx[:, 0], idx[:, 1]))
    cells: dict = {}
    for key, group in _group_sorted(idx[order], order):
        cells[key] = group

    colors: dict = {}
    for key in sorted(cells, key=lambda k: (k[1], k[0])):
        colors.setdefault((key[0] % 3, key[1] % 3), []).append(key)
    partition = [colors[c] for c in sorted(colors, key=lambda c: (c[1], c[0]))]
    return CellGrid(cell_size, float(support_radius), origin, tuple(int(v) for v in n_cells), cells, partition, idx)


def _group_sorted(sorted_idx, order):
    keys = sorted_idx[:, 0] + 1_000_003 * sorted_idx[:, 1]
    breaks = np.flatnonzero(np.diff(keys)) + 1
    starts = np.concatenate([[0], breaks])
    ends = np.concatenate([breaks, [len(keys)]])
    for s, e in zip(starts, ends):
        yield (int(sorted_idx[s, 0]), int(sorted_idx[s, 1])), order[s:e]


def neighbors(ps: ParticleSystem, grid: CellGrid, i: int):
    """All j != i within the support radius as (j, r_ij, e_ij), sorted by j."""
    support = grid.support_radius
    key = tuple(int(v) for v in grid.cell_of[i])
    cand = np.sort(np.concatenate(list(grid.cell_neighbors(key))))
    rij = ps.positions[i] - ps.positions[cand]
    r = np.hypot(rij[:, 0], rij[:, 1])
    keep = (r < support) & (cand != i)
    return [(int(j), float(d), v / d) for j, d, v in zip(cand[keep], r[keep], rij[keep])]


@dataclass
class NeighborList:
    """CSR neighbor lists of the inner particles, with kernel factors.

    ``factor[p]`` is (dW/dr)/r * V_j for pair p, the quantity every
    Laplacian-type sum needs; it is negative inside the support.
    """

    kernel: KernelSpec
    grid: CellGrid
    offsets: np.ndarray
    indices: np.ndarray
    distance: np.ndarray
    rij: np.ndarray
    factor: np.ndarray

    def of(self, i: int) -> slice:
        return slice(self.offsets[i], self.offsets[i + 1])


def build_neighbor_list(ps: ParticleSystem, kernel: KernelSpec, grid: CellGrid | None = None) -> NeighborList:
    support = kernel.support_radius
    if support > ps.spec.dummy_layers * ps.dx + 1e-12 * ps.dx:
        raise ValueError(
            f"kernel support {support:g} exceeds dummy coverage {ps.spec.dummy_layers} x dx = "
            f"{ps.spec.dummy_layers * ps.dx:g}"
        )
    if grid is None:
        grid = build_cell_grid(ps, support)
    pos = ps.positions
    per_i: list = [None] * ps.n_inner
    for key, members in grid.cells.items():
        members = members[members < ps.n_inner]
        if len(members) == 0:
            continue
        cand = np.sort(np.concatenate(list(grid.cell_neighbors(key))))
        d = pos[members][:, None, :] - pos[cand][None, :, :]
        r = np.hypot(d[..., 0], d[..., 1])
        hit = (r < support) & (members[:, None] != cand[None, :])
        for row, i in enumerate(members):
            per_i[i] = cand[hit[row]]
    counts = np.array([len(a) for a in per_i], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    indices = np.concatenate(per_i).astype(np.int64) if ps.n_inner else np.zeros(0, np.int64)
    owner = np.repeat(np.arange(ps.n_inner), counts)
    rij = pos[owner] - pos[indices]
    dist = np.hypot(rij[:, 0], rij[:, 1])
    factor = kernel_dr_over_r(kernel, dist) * ps.volume[indices]
    return NeighborList(kernel, grid, offsets, indices, dist, rij, factor)
