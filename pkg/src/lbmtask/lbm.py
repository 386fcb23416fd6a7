"""Two-grid BGK Lattice-Boltzmann kernels.

Grids are cell-major float64 arrays of shape ``(nx + 2, ny + 2, nz + 2, Q)``:
the populations of one cell are contiguous, index 0 and ``n + 1`` along
each spatial axis form the one-cell ghost shell, and interior cells live
at array indices ``1 .. n``. The free functions ``equilibrium`` and
``macroscopic`` take populations on the leading axis instead.
"""
from __future__ import annotations

import hashlib
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

import numba
import numpy as np

@dataclass(frozen=True, eq=False)
class LbmModel:
    name: str
    velocities: np.ndarray  # (Q, 3) int64
    weights: np.ndarray  # (Q,) float64
    exact_weights: tuple[Fraction, ...]
    cs2: float = 1.0 / 3.0

    @property
    def Q(self) -> int:
        return len(self.weights)

    @property
    def opposite(self) -> np.ndarray:
        """Index of the reversed velocity for every direction."""
        lookup = {tuple(e): i for i, e in enumerate(self.velocities.tolist())}
        return np.array([lookup[tuple(-x for x in e)] for e in self.velocities.tolist()])


def _make_model(name: str, table: Sequence[tuple[tuple[int, int, int], Fraction]]) -> LbmModel:
    vel = np.array([e for e, _ in table], dtype=np.int64)
    exact = tuple(w for _, w in table)
    vel.setflags(write=False)
    weights = np.array([float(w) for w in exact])
    weights.setflags(write=False)
    return LbmModel(name, vel, weights, exact)


def _d3q19_table():
    table = [((0, 0, 0), Fraction(1, 3))]
    for axis in range(3):
        for sign in (1, -1):
            e = [0, 0, 0]
            e[axis] = sign
            table.append((tuple(e), Fraction(1, 18)))
    for a, b in ((0, 1), (0, 2), (1, 2)):
        for sa in (1, -1):
            for sb in (1, -1):
                e = [0, 0, 0]
                e[a], e[b] = sa, sb
                table.append((tuple(e), Fraction(1, 36)))
    return table


def _d2q9_table():
    table = [((0, 0, 0), Fraction(4, 9))]
    for e in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        table.append(((e[0], e[1], 0), Fraction(1, 9)))
    for e in ((1, 1), (-1, -1), (1, -1), (-1, 1)):
        table.append(((e[0], e[1], 0), Fraction(1, 36)))
    return table


D3Q19 = _make_model("D3Q19", _d3q19_table())
D2Q9 = _make_model("D2Q9", _d2q9_table())
MODELS = {"D3Q19": D3Q19, "D2Q9": D2Q9}


@dataclass(frozen=True)
class LbmParams:
    tau: float = 0.8
    rho0: float = 1.0
    u0: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.tau > 0.5:
            raise ValueError(f"tau must exceed 0.5 for positive viscosity, got {self.tau}")

    @property
    def viscosity(self) -> float:
        return (self.tau - 0.5) / 3.0


def equilibrium(rho, u, model: LbmModel = D3Q19) -> np.ndarray:
    """Second-order equilibrium populations.

    ``rho`` may be a scalar or an array of shape S; ``u`` then has shape
    ``(3,) + S``. Returns shape ``(Q,) + S``.
    """
    rho = np.asarray(rho, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if np.any(rho < 0):
        raise ValueError("density must be non-negative")
    # 1/cs2, 1/(2 cs2^2), 1/(2 cs2), written out in the kernel's evaluation order
    # so both produce bitwise identical values
    a, b, c = 1.0 / model.cs2, 0.5 / model.cs2 ** 2, 0.5 / model.cs2
    usq = c * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2])
    out = np.empty((model.Q,) + rho.shape)
    for i, e in enumerate(model.velocities.tolist()):
        eu = np.zeros_like(rho)
        for k in range(3):
            if e[k]:
                eu = eu + e[k] * u[k]
        out[i] = model.weights[i] * rho * (1.0 + a * eu + b * eu * eu - usq)
    return out


def macroscopic(f, model: LbmModel = D3Q19):
    """Density and velocity of populations with shape ``(Q,) + S``."""
    f = np.asarray(f, dtype=np.float64)
    rho = f.sum(axis=0)
    if np.any(rho == 0):
        raise ZeroDivisionError("zero density has no defined velocity")
    e = model.velocities.astype(np.float64)
    j = np.tensordot(e.T, f, axes=([1], [0]))
    return rho, j / rho


def _kernel_source(model: LbmModel) -> str:
    """Python source of a fully unrolled pull-stream + BGK kernel for ``model``."""

    def signed(coeff, name):
        return {1: f" + {name}", -1: f" - {name}"}.get(coeff, "")

    def joined(terms):
        expr = "".join(terms).strip()
        if not expr:
            return "0.0"
        return expr[2:] if expr.startswith("+ ") else "-" + expr[2:]

    vel = model.velocities.tolist()
    ind = " " * 16
    lines = [
        "def kernel(src, dst, lo0, hi0, lo1, hi1, lo2, hi2, tau):",
        "    omega = 1.0 / tau",
        "    for x in range(lo0, hi0):",
        "        for y in range(lo1, hi1):",
        "            for z in range(lo2, hi2):",
    ]
    for i, (a, b, c) in enumerate(vel):
        lines.append(f"{ind}f{i} = src[x - ({a}), y - ({b}), z - ({c}), {i}]")
    lines.append(ind + "rho = " + " + ".join(f"f{i}" for i in range(len(vel))))
    for axis, name in enumerate("xyz"):
        lines.append(f"{ind}j{name} = " + joined(signed(e[axis], f"f{i}") for i, e in enumerate(vel)))
    lines += [ind + "inv = 1.0 / rho", ind + "ux = jx * inv", ind + "uy = jy * inv", ind + "uz = jz * inv",
              ind + "usq = 1.5 * (ux * ux + uy * uy + uz * uz)"]
    for i, e in enumerate(vel):
        lines.append(f"{ind}eu = " + joined(signed(c, u) for c, u in zip(e, ("ux", "uy", "uz"))))
        lines.append(f"{ind}feq = {float(model.weights[i])!r} * rho * (1.0 + 3.0 * eu + 4.5 * eu * eu - usq)")
        lines.append(f"{ind}dst[x, y, z, {i}] = f{i} - omega * (f{i} - feq)")
    return "\n".join(lines) + "\n"


# Value-changing flags only ('reassoc' is excluded): every cell is computed by
# the same expression in the same order whatever box it belongs to.
_SAFE_FASTMATH = {"nnan", "ninf", "nsz", "arcp", "contract"}
_KERNELS: dict[str, object] = {}
_KERNEL_LOCK = threading.Lock()


def _kernel(model: LbmModel):
    with _KERNEL_LOCK:
        fn = _KERNELS.get(model.name)
        if fn is None:
            namespace: dict = {}
            exec(compile(_kernel_source(model), f"<lbm kernel {model.name}>", "exec"), namespace)
            fn = _KERNELS[model.name] = numba.njit(nogil=True, error_model="numpy", fastmath=_SAFE_FASTMATH)(namespace["kernel"])
        return fn


def stream_collide(src: np.ndarray, dst: np.ndarray, lo, hi, params: LbmParams,
                   model: LbmModel = D3Q19) -> None:
    """Pull-stream then BGK-relax every cell in the half-open box ``[lo, hi)``.

    Reads ``src`` (including the one-cell halo around the box), writes only
    the box cells of ``dst``. Stored populations are post-collision values.
    """
    _kernel(model)(src, dst, lo[0], hi[0], lo[1], hi[1], lo[2], hi[2], float(params.tau))


@dataclass
class BoundarySpec:
    """Per-axis boundary kind: ``"periodic"`` or ``"wall"`` (halfway bounce-back)."""

    kinds: tuple[str, str, str] = ("periodic", "periodic", "periodic")

    def __post_init__(self):
        self.kinds = tuple(self.kinds)
        for k in self.kinds:
            if k not in ("periodic", "wall"):
                raise ValueError(f"unknown boundary kind {k!r}")
        if len(self.kinds) != 3:
            raise ValueError("need one boundary kind per axis")

    @classmethod
    def with_walls(cls, axes: Iterable[int | str]) -> "BoundarySpec":
        kinds = ["periodic"] * 3
        for a in axes:
            kinds["xyz".index(a) if isinstance(a, str) else a] = "wall"
        return cls(tuple(kinds))


@dataclass
class LatticeBlock:
    """Rank-local lattice: two grids plus a ghost shell.

    ``origin`` is the global index of the first interior cell and
    ``global_dims`` the size of the whole lattice the block is part of.
    """

    dims: tuple[int, int, int]
    model: LbmModel
    grids: list[np.ndarray]
    origin: tuple[int, int, int] = (0, 0, 0)
    global_dims: tuple[int, int, int] | None = None
    bc: BoundarySpec = field(default_factory=BoundarySpec)

    def __post_init__(self):
        if self.global_dims is None:
            self.global_dims = tuple(self.dims)

    @property
    def flip(self) -> np.ndarray:
        return self.grids[0]

    @property
    def flop(self) -> np.ndarray:
        return self.grids[1]

    def src(self, step: int) -> np.ndarray:
        """Grid read during timestep ``step`` (0-based)."""
        return self.grids[step % 2]

    def dst(self, step: int) -> np.ndarray:
        return self.grids[(step + 1) % 2]

    def interior(self, grid: np.ndarray) -> np.ndarray:
        nx, ny, nz = self.dims
        return grid[1:nx + 1, 1:ny + 1, 1:nz + 1]

    def touches_low(self, axis: int) -> bool:
        return self.origin[axis] == 0

    def touches_high(self, axis: int) -> bool:
        return self.origin[axis] + self.dims[axis] == self.global_dims[axis]

    def spans(self, axis: int) -> bool:
        return self.touches_low(axis) and self.touches_high(axis)


def _global_coords(block_dims, origin, global_dims):
    """Wrapped global coordinates of every cell of a block including ghosts."""
    axes = []
    for n, o, g in zip(block_dims, origin, global_dims):
        axes.append((np.arange(-1, n + 1) + o) % g)
    return np.meshgrid(*axes, indexing="ij")


def taylor_green(coords, global_dims, params: LbmParams):
    """Quasi-2D Taylor-Green vortex in the x-y plane at t = 0.

    Amplitude is ``params.u0[0]``. Returns ``(rho, u)``.
    """
    x, y, _ = coords
    nx, ny = global_dims[0], global_dims[1]
    kx, ky = 2 * np.pi / nx, 2 * np.pi / ny
    amp = params.u0[0]
    ux = amp * np.sin(kx * x) * np.cos(ky * y)
    uy = -amp * (kx / ky) * np.cos(kx * x) * np.sin(ky * y)
    uz = np.zeros_like(ux)
    p = -0.25 * params.rho0 * amp * amp * (np.cos(2 * kx * x) + (kx / ky) ** 2 * np.cos(2 * ky * y))
    rho = params.rho0 + 3.0 * p
    return rho, np.stack([ux, uy, uz])


def perturbed(coords, global_dims, params: LbmParams, seed: int):
    """Deterministic random velocity field drawn over the global lattice."""
    rng = np.random.default_rng(seed)
    field_ = 0.02 * (rng.random((3,) + tuple(global_dims)) - 0.5)
    drho = 0.01 * (rng.random(tuple(global_dims)) - 0.5)
    x, y, z = coords
    u = field_[:, x, y, z] + np.asarray(params.u0, dtype=np.float64).reshape(3, 1, 1, 1)
    return params.rho0 + drho[x, y, z], u


INITIAL_CONDITIONS = ("uniform", "taylor-green", "perturbed")


def init_block(dims, params: LbmParams, model: LbmModel = D3Q19, initial: str = "uniform",
               origin=(0, 0, 0), global_dims=None, bc: BoundarySpec | None = None,
               seed: int = 0) -> LatticeBlock:
    """Allocate a block and fill ``flip`` (ghosts included) from an initial condition."""
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or min(dims) < 1:
        raise ValueError(f"block dims must be three positive integers, got {dims}")
    global_dims = tuple(global_dims) if global_dims is not None else dims
    coords = _global_coords(dims, origin, global_dims)
    shape = coords[0].shape
    if initial == "uniform":
        rho = np.full(shape, params.rho0)
        u = np.broadcast_to(np.asarray(params.u0, dtype=np.float64).reshape(3, 1, 1, 1), (3,) + shape)
    elif initial == "taylor-green":
        rho, u = taylor_green(coords, global_dims, params)
    elif initial == "perturbed":
        rho, u = perturbed(coords, global_dims, params, seed)
    else:
        raise ValueError(f"unknown initial condition {initial!r}")
    flip = np.ascontiguousarray(np.moveaxis(equilibrium(rho, u, model), 0, -1))
    flop = np.zeros_like(flip)
    return LatticeBlock(dims, model, [flip, flop], tuple(origin), global_dims,
                        bc if bc is not None else BoundarySpec())


def _axis_slice(axis, index):
    return (slice(None),) * axis + (index,)


def periodic_copy(grid: np.ndarray, axis: int, n: int) -> None:
    """Fill both ghost layers along ``axis`` from the opposite interior layer."""
    grid[_axis_slice(axis, 0)] = grid[_axis_slice(axis, n)]
    grid[_axis_slice(axis, n + 1)] = grid[_axis_slice(axis, 1)]


def bounce_back(grid: np.ndarray, dims, axis: int, side: str, model: LbmModel) -> None:
    """Halfway bounce-back on one face.

    For every direction pointing from the wall into the fluid, the ghost cell
    that the pull step will read is set to the reversed population of the
    fluid cell it streams into.
    """
    opp = model.opposite
    inward = 1 if side == "low" else -1
    layer = 1 if side == "low" else dims[axis]
    for i, e in enumerate(model.velocities):
        if e[axis] != inward:
            continue
        src = [slice(None)] * 3
        tgt = [slice(None)] * 3
        for b in range(3):
            if b == axis:
                src[b] = layer
                tgt[b] = layer - e[b]
            else:
                n = dims[b]
                src[b] = slice(1, n + 1)
                tgt[b] = slice(1 - e[b], n + 1 - e[b])
        grid[(*tgt, i)] = grid[(*src, opp[i])]


def boundaries(block: LatticeBlock, grid: np.ndarray | None = None, exchange_axis: int = 0) -> None:
    """Apply external boundary conditions to ``grid`` (default: ``flop``).

    Periodic copies are applied on every periodic axis the block spans in
    full, in x, y, z order over full extents so edges are consistent.
    Periodicity across rank boundaries is left to the ghost exchange. Wall
    faces get bounce-back afterwards so it wins on shared edge ghosts.
    """
    g = block.flop if grid is None else grid
    kinds = block.bc.kinds
    for axis in range(3):
        if kinds[axis] == "periodic" and block.spans(axis):
            periodic_copy(g, axis, block.dims[axis])
    for axis in range(3):
        if kinds[axis] != "wall":
            continue
        if block.touches_low(axis):
            bounce_back(g, block.dims, axis, "low", block.model)
        if block.touches_high(axis):
            bounce_back(g, block.dims, axis, "high", block.model)


def advance(block: LatticeBlock, params: LbmParams, steps: int, start: int = 0) -> np.ndarray:
    """Run ``steps`` untiled timesteps of a block that spans the whole lattice.

    Boundary ghosts of ``src(start)`` are refreshed first. Returns the grid
    holding the final state.
    """
    hi = tuple(n + 1 for n in block.dims)
    boundaries(block, block.src(start))
    for s in range(start, start + steps):
        stream_collide(block.src(s), block.dst(s), (1, 1, 1), hi, params, block.model)
        boundaries(block, block.dst(s))
    return block.src(start + steps)


def checksum(blocks: Sequence[LatticeBlock], grids: Sequence[np.ndarray]) -> str:
    """SHA-256 of interior populations ordered by global (x, y, z, i).

    ``blocks`` must be given in rank order along x, so hashing them one
    after another equals hashing the assembled global lattice.
    """
    h = hashlib.sha256()
    for block, grid in zip(blocks, grids):
        h.update(np.ascontiguousarray(block.interior(grid), dtype=">f8").tobytes())
    return h.hexdigest()


def total_mass(block: LatticeBlock, grid: np.ndarray) -> float:
    return float(block.interior(grid).sum())


def total_momentum(block: LatticeBlock, grid: np.ndarray) -> np.ndarray:
    f = block.interior(grid).reshape(-1, block.model.Q)
    return f.sum(axis=0) @ block.model.velocities.astype(np.float64)
