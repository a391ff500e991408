"""Bernoulli bond configurations on finite boxes of Z^d and their clusters."""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _kernels as K
from .rng import BONDS, derive_seed, edge_words, open_threshold

BOUNDARIES = ("free", "torus")

# literature values, used only to warn about subcritical requests
P_CRITICAL = {2: 0.5, 3: 0.2488}

_CHUNK = 1 << 22


class ConditioningError(RuntimeError):
    """No configuration with the origin in the largest cluster was found."""

    def __init__(self, message: str, attempts: int, accepted: int = 0):
        super().__init__(message)
        self.attempts = attempts
        self.accepted = accepted

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.attempts if self.attempts else 0.0


@dataclass(frozen=True)
class LatticeSpec:
    """The box [-L, L]^d with a free or periodic boundary."""

    d: int
    L: int
    boundary: str = "torus"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 2:
            raise ValueError(f"d must be an integer >= 2, got {self.d}")
        if int(self.L) != self.L or self.L < 1:
            raise ValueError(f"L must be an integer >= 1, got {self.L}")
        if self.boundary not in BOUNDARIES:
            raise ValueError(f"boundary must be one of {BOUNDARIES}, got {self.boundary!r}")

    @property
    def width(self) -> int:
        return 2 * self.L + 1

    @property
    def n_sites(self) -> int:
        return self.width**self.d

    @property
    def torus(self) -> bool:
        return self.boundary == "torus"

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.width,) * self.d

    @cached_property
    def strides(self) -> np.ndarray:
        return np.array([self.width ** (self.d - 1 - j) for j in range(self.d)], dtype=np.int64)

    @property
    def n_edges(self) -> int:
        if self.torus:
            return self.d * self.n_sites
        return self.d * self.width ** (self.d - 1) * (self.width - 1)

    def contains(self, x: Sequence[int]) -> bool:
        return len(x) == self.d and all(-self.L <= int(c) <= self.L for c in x)

    def index(self, x: Sequence[int]) -> int:
        if not self.contains(x):
            raise ValueError(f"site {tuple(x)} is outside the box [-{self.L}, {self.L}]^{self.d}")
        return int(sum((int(c) + self.L) * int(s) for c, s in zip(x, self.strides)))

    def wrapped_index(self, x: Sequence[int]) -> int:
        """Index of an unwrapped coordinate vector, folding it onto the torus."""
        if not self.torus:
            return self.index(x)
        return int(sum(((int(c) + self.L) % self.width) * int(s) for c, s in zip(x, self.strides)))

    def coords(self, idx) -> np.ndarray:
        """Coordinates of site index (or index array); shape (..., d)."""
        offsets = np.stack(np.unravel_index(np.asarray(idx), self.shape), axis=-1)
        return offsets.astype(np.int64) - self.L

    def indices(self, coords: np.ndarray) -> np.ndarray:
        """Vectorized wrapped index of an (n, d) coordinate array."""
        offsets = (np.asarray(coords, dtype=np.int64) + self.L) % self.width
        return offsets @ self.strides


@dataclass(frozen=True, eq=False)
class BondConfiguration:
    """Open/closed state of every nearest-neighbor edge of a box, bit-packed.

    ``planes[j]`` holds one bit per site ``x`` for the edge ``(x, x + e_j)``.
    """

    spec: LatticeSpec
    p: float
    seed: int
    planes: np.ndarray
    shift: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.planes.setflags(write=False)

    def __eq__(self, other):
        if not isinstance(other, BondConfiguration):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.p == other.p
            and self.seed == other.seed
            and np.array_equal(self.planes, other.planes)
        )

    __hash__ = None

    def edge_plane(self, j: int) -> np.ndarray:
        """Boolean open-edge mask for direction ``j``, shaped like the box."""
        bits = np.unpackbits(self.planes[j], count=self.spec.n_sites, bitorder="little")
        return bits.astype(bool).reshape(self.spec.shape)

    def is_open(self, x: Sequence[int], j: int) -> bool:
        s = self.spec.index(x)
        return bool(K.bit(self.planes, j, s))

    @property
    def n_open(self) -> int:
        n = self.spec.n_sites
        return int(sum(np.unpackbits(pl, count=n, bitorder="little").sum() for pl in self.planes))

    @property
    def open_fraction(self) -> float:
        return self.n_open / self.spec.n_edges

    def kernel_args(self):
        s = self.spec
        return self.planes, s.strides, s.width, s.torus


def _pack(plane: np.ndarray) -> np.ndarray:
    return np.packbits(plane.reshape(-1), bitorder="little")


def generate_bonds(spec: LatticeSpec, p: float, seed: int) -> BondConfiguration:
    """Bernoulli(p) bond field on ``spec``; a pure function of ``(spec, p, seed)``.

    Edge ``(x, x + e_j)`` is open iff the uniform attached to edge index
    ``j * n_sites + index(x)`` is below ``p``.
    """
    if not (0.0 < p <= 1.0):
        raise ValueError(f"p must lie in (0, 1], got {p}")
    n = spec.n_sites
    cut = np.uint64(open_threshold(p))
    planes = np.empty((spec.d, (n + 7) // 8), dtype=np.uint8)
    for j in range(spec.d):
        plane = np.empty(n, dtype=bool)
        if p == 1.0:
            plane[:] = True
        else:
            for start in range(0, n, _CHUNK):
                count = min(_CHUNK, n - start)
                words = edge_words(seed, j * n + start, count)
                np.less(words >> np.uint64(11), cut, out=plane[start : start + count])
        if not spec.torus:
            edge = [slice(None)] * spec.d
            edge[j] = spec.width - 1
            plane.reshape(spec.shape)[tuple(edge)] = False
        planes[j] = _pack(plane)
    return BondConfiguration(spec, float(p), int(seed), planes, (0,) * spec.d)


def from_edge_list(spec: LatticeSpec, edges, p: float = 1.0, seed: int = 0) -> BondConfiguration:
    """Configuration whose open edges are exactly ``edges`` (pairs of adjacent sites)."""
    masks = np.zeros((spec.d,) + spec.shape, dtype=bool)
    for x, y in edges:
        x, y = tuple(int(c) for c in x), tuple(int(c) for c in y)
        diff = [(b - a) for a, b in zip(x, y)]
        j = next((i for i, v in enumerate(diff) if v != 0), None)
        if j is None:
            raise ValueError(f"degenerate edge {x}-{y}")
        step = diff[j]
        if spec.torus:
            step = (step + spec.L) % spec.width - spec.L
        if abs(step) != 1 or sum(v != 0 for v in diff) != 1:
            raise ValueError(f"{x}-{y} is not a nearest-neighbor edge")
        owner = x if step == 1 else y
        offsets = tuple(c + spec.L for c in owner)
        if not spec.contains(owner) or not spec.contains(x if owner == y else y):
            raise ValueError(f"edge {x}-{y} leaves the box")
        masks[(j,) + offsets] = True
    planes = np.stack([_pack(masks[j]) for j in range(spec.d)])
    return BondConfiguration(spec, p, seed, planes, (0,) * spec.d)


def open_degree(bonds: BondConfiguration, x: Sequence[int]) -> int:
    """Number of open edges incident to site ``x``."""
    s = bonds.spec.index(x)
    planes, strides, W, torus = bonds.kernel_args()
    return sum(K.edge_open(planes, s, r, strides, W, torus) >= 0 for r in range(2 * bonds.spec.d))


def degree_array(bonds: BondConfiguration) -> np.ndarray:
    """Open degree of every site, flat in row-major order."""
    return K.degrees(*bonds.kernel_args(), bonds.spec.n_sites)


def label_clusters(bonds: BondConfiguration) -> np.ndarray:
    """Canonical cluster label of every site (smallest row-major index in its cluster)."""
    return K.label_clusters(*bonds.kernel_args(), bonds.spec.n_sites)


def shift_environment(bonds: BondConfiguration, x: Sequence[int]) -> BondConfiguration:
    """Configuration seen from ``x``: edge (y, y+e_j) is open iff (y+x, y+x+e_j) is."""
    spec = bonds.spec
    x = tuple(int(c) for c in x)
    if len(x) != spec.d:
        raise ValueError(f"shift must have {spec.d} coordinates")
    if not spec.torus:
        if any(x):
            raise ValueError("free-boundary boxes only admit the trivial shift")
        return bonds
    axes = tuple(range(spec.d))
    planes = np.stack([_pack(np.roll(bonds.edge_plane(j), [-c for c in x], axis=axes)) for j in range(spec.d)])
    prior = bonds.shift or (0,) * spec.d
    total = tuple((a + b + spec.L) % spec.width - spec.L for a, b in zip(prior, x))
    return BondConfiguration(spec, bonds.p, bonds.seed, planes, total)


@dataclass(frozen=True, eq=False)
class ClusterView:
    """One open cluster of a configuration, with a distinguished origin."""

    bonds: BondConfiguration
    member: np.ndarray
    label: int
    size: int
    origin: tuple[int, ...]
    attempts: int = 1

    @property
    def spec(self) -> LatticeSpec:
        return self.bonds.spec

    @cached_property
    def degrees(self) -> np.ndarray:
        return degree_array(self.bonds)

    @cached_property
    def labels(self) -> np.ndarray:
        return label_clusters(self.bonds)

    def __contains__(self, x) -> bool:
        return self.spec.contains(x) and bool(self.member[self.spec.index(x)])

    def site_indices(self) -> np.ndarray:
        return np.flatnonzero(self.member)

    def sites(self) -> np.ndarray:
        """Coordinates of all cluster sites, shape (size, d), row-major order."""
        return self.spec.coords(self.site_indices())

    def open_degree(self, x: Sequence[int]) -> int:
        return int(self.degrees[self.spec.index(x)])


def cluster_of(bonds: BondConfiguration, x: Sequence[int] | None = None) -> ClusterView:
    """The open cluster containing ``x`` (default: the origin)."""
    spec = bonds.spec
    x = tuple((0,) * spec.d if x is None else (int(c) for c in x))
    mark = np.zeros(spec.n_sites, dtype=np.int8)
    size, label = K.mark_component(*bonds.kernel_args(), spec.index(x), mark, 1)
    return ClusterView(bonds, mark == 1, int(label), int(size), x)


def origin_in_largest(bonds: BondConfiguration) -> tuple[bool, ClusterView]:
    spec = bonds.spec
    origin = (0,) * spec.d
    mark = np.zeros(spec.n_sites, dtype=np.int8)
    ok, size, label = K.origin_cluster_is_largest(*bonds.kernel_args(), spec.index(origin), mark)
    return bool(ok), ClusterView(bonds, mark == 1, int(label), int(size), origin)


def sample_conditioned(
    spec: LatticeSpec, p: float, master_seed: int, max_attempts: int = 100
) -> tuple[BondConfiguration, ClusterView]:
    """Draw configurations until the origin sits in the largest cluster of the box.

    Attempt ``a`` uses the bond seed ``derive_seed(master_seed, BONDS, a)``.
    The returned view records how many attempts were needed.
    """
    if max_attempts < 1:
        raise ValueError("max_attempts must be >= 1")
    pc = P_CRITICAL.get(spec.d)
    if pc is not None and p <= pc:
        warnings.warn(f"p={p} is not above p_c({spec.d}) ~ {pc}; conditioning will likely fail", stacklevel=2)
    for attempt in range(max_attempts):
        bonds = generate_bonds(spec, p, derive_seed(master_seed, BONDS, attempt))
        ok, view = origin_in_largest(bonds)
        if ok:
            return bonds, ClusterView(bonds, view.member, view.label, view.size, view.origin, attempt + 1)
    raise ConditioningError(
        f"origin never in the largest cluster after {max_attempts} attempts "
        f"(acceptance rate 0/{max_attempts}; p={p} may be subcritical or L={spec.L} too small)",
        attempts=max_attempts,
    )


# ------------------------------------------------------------------ file io

MAGIC = b"PERC"
VERSION = 1
_HEADER = struct.Struct("<4sBBIdQB")


def write_bonds(bonds: BondConfiguration, path) -> None:
    spec = bonds.spec
    header = _HEADER.pack(MAGIC, VERSION, spec.d, spec.L, bonds.p, bonds.seed, int(spec.torus))
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(bonds.planes).tobytes())


def read_bonds(path) -> BondConfiguration:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated header")
    magic, version, d, L, p, seed, flag = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise ValueError(f"{path}: not a bond file (magic {magic!r})")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    spec = LatticeSpec(d, L, "torus" if flag else "free")
    nbytes = (spec.n_sites + 7) // 8
    body = np.frombuffer(raw, dtype=np.uint8, offset=_HEADER.size)
    if body.size != d * nbytes:
        raise ValueError(f"{path}: expected {d * nbytes} plane bytes, found {body.size}")
    return BondConfiguration(spec, p, seed, body.reshape(d, nbytes).copy(), (0,) * d)
