"""Resonant block partition of a mode set and its lattice modules."""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from nftorus.errors import NFTorusValidationError
from nftorus.geometry import MetricTensor, jap_bracket, norm
from nftorus.policies import NumericalPolicy, parallel_map
from nftorus.resonance import NFParams, check_metric, mask_weights
from nftorus.symbols import Mode
from nftorus.weyl import ModeSet, OperatorMatrix

LOGGER = logging.getLogger(__name__)

IntRow = list[int]


class UnionFind:
    """Disjoint sets over 0..n-1 with path compression and union by rank."""

    def __init__(self, n: int) -> None:
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x: int) -> int:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: int, y: int) -> bool:
        x_root, y_root = self.find(x), self.find(y)
        if x_root == y_root:
            return False
        if self.rank[x_root] < self.rank[y_root]:
            x_root, y_root = y_root, x_root
        self.parent[y_root] = x_root
        if self.rank[x_root] == self.rank[y_root]:
            self.rank[x_root] += 1
        return True

    def connected(self, x: int, y: int) -> bool:
        return self.find(x) == self.find(y)

    def components(self) -> list[list[int]]:
        """Components ordered by their smallest element, members ascending."""
        groups: dict[int, list[int]] = {}
        for x in range(len(self.parent)):
            groups.setdefault(self.find(x), []).append(x)
        return sorted(groups.values(), key=lambda members: members[0])


def _exgcd(a: int, b: int) -> tuple[int, int, int]:
    """(g, x, y) with x a + y b = g = gcd(a, b) >= 0."""
    old_r, r = a, b
    old_x, x = 1, 0
    old_y, y = 0, 1
    while r != 0:
        q = old_r // r
        old_r, r = r, old_r - q * r
        old_x, x = x, old_x - q * x
        old_y, y = y, old_y - q * y
    if old_r < 0:
        old_r, old_x, old_y = -old_r, -old_x, -old_y
    return old_r, old_x, old_y


def _echelon(rows: list[IntRow], width: int) -> list[IntRow]:
    """Unimodular row reduction on the first ``width`` columns.

    Returns all rows (zero-prefixed rows included), pivots positive and
    entries above each pivot reduced into [0, pivot).
    """
    rows = [list(row) for row in rows]
    pivot_row = 0
    for col in range(width):
        if pivot_row >= len(rows):
            break
        for r in range(pivot_row + 1, len(rows)):
            b = rows[r][col]
            if b == 0:
                continue
            a = rows[pivot_row][col]
            g, x, y = _exgcd(a, b)
            upper = [x * u + y * v for u, v in zip(rows[pivot_row], rows[r])]
            lower = [(a // g) * v - (b // g) * u for u, v in zip(rows[pivot_row], rows[r])]
            rows[pivot_row], rows[r] = upper, lower
        pivot = rows[pivot_row][col]
        if pivot == 0:
            continue
        if pivot < 0:
            rows[pivot_row] = [-v for v in rows[pivot_row]]
            pivot = -pivot
        for r in range(pivot_row):
            q = rows[r][col] // pivot
            if q:
                rows[r] = [u - q * v for u, v in zip(rows[r], rows[pivot_row])]
        pivot_row += 1
    return rows


def _as_rows(vectors: Iterable[ArrayLike]) -> list[IntRow]:
    return [[int(v) for v in np.asarray(vector).ravel()] for vector in vectors]


def hermite_normal_form(rows: Iterable[ArrayLike]) -> list[IntRow]:
    """Row-style Hermite normal form of the Z-span of ``rows`` (zero rows dropped)."""
    integer_rows = _as_rows(rows)
    if not integer_rows:
        return []
    width = len(integer_rows[0])
    return [row for row in _echelon(integer_rows, width) if any(row)]


def integer_kernel(rows: Iterable[ArrayLike], d: int) -> list[IntRow]:
    """Z-basis of {x in Z^d : row . x = 0 for every row}."""
    integer_rows = [row for row in _as_rows(rows) if any(row)]
    if any(len(row) != d for row in integer_rows):
        raise NFTorusValidationError(f"Integer rows do not all have length {d}")
    r = len(integer_rows)
    augmented = [
        [integer_rows[i][j] for i in range(r)] + [1 if a == j else 0 for a in range(d)]
        for j in range(d)
    ]
    reduced = _echelon(augmented, r)
    return [row[r:] for row in reduced if not any(row[:r])]


@dataclass(frozen=True)
class IntegerModule:
    """Saturated submodule of Z^d given by a Hermite-reduced basis."""

    d: int
    basis: tuple[tuple[int, ...], ...] = ()
    saturated: bool = True

    @property
    def rank(self) -> int:
        return len(self.basis)

    @property
    def is_trivial(self) -> bool:
        return self.rank == 0

    def as_array(self) -> NDArray[np.int64]:
        return np.asarray(self.basis, dtype=np.int64).reshape(self.rank, self.d)

    @classmethod
    def trivial(cls, d: int) -> IntegerModule:
        return cls(d=d)


def module_of(edge_vectors: Iterable[ArrayLike], d: int | None = None) -> IntegerModule:
    """span_R(edges) cut with Z^d, as a Hermite-reduced basis."""
    rows = [row for row in _as_rows(edge_vectors) if any(row)]
    if not rows:
        if d is None:
            raise NFTorusValidationError("module_of needs d when there are no edges")
        return IntegerModule.trivial(d)
    dimension = len(rows[0]) if d is None else d
    complement = integer_kernel(rows, dimension)
    saturation = integer_kernel(complement, dimension)
    basis = hermite_normal_form(saturation)
    return IntegerModule(d=dimension, basis=tuple(tuple(row) for row in basis))


def project(
    xi: ArrayLike,
    mod: IntegerModule,
    m: MetricTensor,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Metric-orthogonal split xi = xi_M + xi_Mperp with xi_M in span_R(mod)."""
    vector = np.asarray(xi, dtype=float)
    if mod.is_trivial:
        return np.zeros_like(vector), vector.copy()
    basis = mod.as_array().astype(float)
    gram = basis @ m.g_inv @ basis.T
    coefficients = np.linalg.solve(gram, basis @ m.g_inv @ vector)
    along = coefficients @ basis
    return along, vector - along


@dataclass(frozen=True)
class ResonanceGraph:
    """Undirected resonance edges as mode-index pairs (row < col)."""

    modes: ModeSet
    rows: NDArray[np.intp]
    cols: NDArray[np.intp]

    @property
    def edge_count(self) -> int:
        return int(self.rows.size)

    def adjacency(self) -> NDArray[np.bool_]:
        matrix = np.zeros((self.modes.size, self.modes.size), dtype=bool)
        matrix[self.rows, self.cols] = True
        matrix[self.cols, self.rows] = True
        return matrix


def resonance_graph(modes: ModeSet, p: NFParams, m: MetricTensor) -> ResonanceGraph:
    """Edges {xi, xi + k} whose midpoint satisfies the normal-form support condition."""
    check_metric(modes, m)
    support = mask_weights(modes, p).support
    rows, cols = np.nonzero(np.triu(support, 1))
    LOGGER.debug("Resonance graph on %d modes has %d edges", modes.size, rows.size)
    return ResonanceGraph(modes, rows.astype(np.intp), cols.astype(np.intp))


@dataclass(frozen=True)
class Block:
    module: IntegerModule
    members: tuple[Mode, ...]
    indices: tuple[int, ...]
    ell: float
    edges: tuple[Mode, ...] = ()

    @property
    def size(self) -> int:
        return len(self.members)


@dataclass(frozen=True)
class PartitionStats:
    singletons: int
    max_block_size: int
    big_block_size: int
    histogram: Mapping[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, object]:
        return {
            "singletons": self.singletons,
            "max_block_size": self.max_block_size,
            "big_block_size": self.big_block_size,
            "histogram": {str(size): count for size, count in sorted(self.histogram.items())},
        }


@dataclass(frozen=True, eq=False)
class Partition:
    modes: ModeSet
    blocks: tuple[Block, ...]
    labels: NDArray[np.intp]
    stats: PartitionStats
    big_block: int | None = None

    @classmethod
    def from_blocks(cls, modes: ModeSet, blocks: Sequence[Block]) -> Partition:
        """Labels, stats and the big block of a list of blocks covering ``modes``."""
        labels = np.full(modes.size, -1, dtype=np.intp)
        for b, block in enumerate(blocks):
            if np.any(labels[list(block.indices)] >= 0):
                raise NFTorusValidationError("Blocks overlap")
            labels[list(block.indices)] = b
        if np.any(labels < 0):
            raise NFTorusValidationError("Blocks do not cover the mode set")
        full_rank = [b for b, block in enumerate(blocks) if block.module.rank == modes.dimension]
        big_block = None
        if full_rank:
            big_block = max(full_rank, key=lambda b: blocks[b].size)
            if len(full_rank) > 1:
                LOGGER.warning("%d full-rank blocks found; reporting the largest as the big block", len(full_rank))
        sizes = Counter(block.size for block in blocks)
        stats = PartitionStats(
            singletons=sizes.get(1, 0),
            max_block_size=max(sizes, default=0),
            big_block_size=blocks[big_block].size if big_block is not None else 0,
            histogram=dict(sorted(sizes.items())),
        )
        return cls(modes=modes, blocks=tuple(blocks), labels=labels, stats=stats, big_block=big_block)

    def block_of(self, xi: ArrayLike) -> Block:
        return self.blocks[int(self.labels[self.modes.position(xi)])]

    @property
    def index(self) -> dict[Mode, int]:
        return {member: b for b, block in enumerate(self.blocks) for member in block.members}


def _edge_vectors(modes: ModeSet, pairs: Iterable[tuple[int, int]]) -> tuple[Mode, ...]:
    """Distinct k = xi' - xi of the given index pairs, signs normalized."""
    vectors = set()
    for row, col in pairs:
        k = tuple(int(v) for v in modes.modes[col] - modes.modes[row])
        negated = tuple(-v for v in k)
        vectors.add(max(k, negated))
    return tuple(sorted(vectors))


def _block_ell(members: NDArray[np.int64], module: IntegerModule, m: MetricTensor) -> float:
    _, transversal = project(members[0], module, m)
    return float(jap_bracket(transversal, m))


def assemble_partition(
    modes: ModeSet,
    components: Sequence[Sequence[int]],
    edge_pairs: Sequence[tuple[int, int]],
    policy: NumericalPolicy | None = None,
) -> Partition:
    """Blocks from components of mode indices and the edge pairs inside them."""
    labels = np.full(modes.size, -1, dtype=np.intp)
    for b, members in enumerate(components):
        labels[list(members)] = b
    if np.any(labels < 0):
        raise NFTorusValidationError("Components do not cover the mode set")
    per_block: dict[int, list[tuple[int, int]]] = {}
    for row, col in edge_pairs:
        if labels[row] != labels[col]:
            raise NFTorusValidationError("Edge joins two different components")
        per_block.setdefault(int(labels[row]), []).append((int(row), int(col)))

    def build(b: int) -> Block:
        members = sorted(components[b])
        edges = _edge_vectors(modes, per_block.get(b, []))
        module = module_of(edges, modes.dimension)
        vectors = modes.modes[members]
        return Block(
            module=module,
            members=tuple(tuple(int(v) for v in row) for row in vectors),
            indices=tuple(int(i) for i in members),
            ell=_block_ell(vectors, module, modes.metric),
            edges=edges,
        )

    return Partition.from_blocks(modes, parallel_map(build, range(len(components)), policy))


def partition(
    modes: ModeSet,
    p: NFParams,
    m: MetricTensor,
    policy: NumericalPolicy | None = None,
) -> Partition:
    """Connected components of the resonance graph, each with its module."""
    graph = resonance_graph(modes, p, m)
    forest = UnionFind(modes.size)
    for row, col in zip(graph.rows.tolist(), graph.cols.tolist()):
        forest.union(row, col)
    result = assemble_partition(
        modes, forest.components(), list(zip(graph.rows.tolist(), graph.cols.tolist())), policy
    )
    LOGGER.info(
        "Partition of %d modes: %d blocks, %d singletons, largest %d, n* = %d",
        modes.size,
        len(result.blocks),
        result.stats.singletons,
        result.stats.max_block_size,
        result.stats.big_block_size,
    )
    return result


@dataclass(frozen=True)
class VerificationReport:
    p3_spread: float
    k_hat: float
    c_hat: float
    k_sigma: Mapping[float, float]
    histogram: Mapping[int, int]
    nontrivial_blocks: int

    def to_dict(self) -> dict[str, object]:
        return {
            "p3_spread": self.p3_spread,
            "k_hat": self.k_hat,
            "c_hat": self.c_hat,
            "k_sigma": {str(sigma): value for sigma, value in self.k_sigma.items()},
            "histogram": {str(size): count for size, count in sorted(self.histogram.items())},
            "nontrivial_blocks": self.nontrivial_blocks,
        }


@dataclass(frozen=True)
class _BlockMeasures:
    spread: float
    k_hat: float
    c_hat: float
    k_sigma: tuple[float, ...]


def _measure_block(block: Block, p: NFParams, m: MetricTensor, sigmas: Sequence[float]) -> _BlockMeasures:
    if block.module.is_trivial:
        return _BlockMeasures(0.0, 0.0, 0.0, tuple(1.0 for _ in sigmas))
    members = np.asarray(block.members, dtype=float)
    split = [project(xi, block.module, m) for xi in members]
    along = np.array([a for a, _ in split])
    transversal = np.array([t for _, t in split])
    spread = float(np.max(np.abs(transversal - transversal[0])))
    along_norm = np.asarray(norm(along, m), dtype=float)
    brackets = np.asarray(jap_bracket(members, m), dtype=float)
    ell = block.ell
    return _BlockMeasures(
        spread=spread,
        k_hat=float(np.max(along_norm / brackets**p.delta_star)),
        c_hat=float(np.max(along_norm / ell)),
        k_sigma=tuple(float(np.max((along_norm**2 + ell**2) ** (s / 2.0) / ell**s)) for s in sigmas),
    )


def verify_partition(
    part: Partition,
    p: NFParams,
    m: MetricTensor,
    sigmas: Sequence[float] = (1.0, 2.0),
    policy: NumericalPolicy | None = None,
) -> VerificationReport:
    """Transversal spread, ||xi_M|| constants and K_sigma over every block."""
    check_metric(part.modes, m)
    measures = parallel_map(lambda block: _measure_block(block, p, m, sigmas), part.blocks, policy)
    report = VerificationReport(
        p3_spread=max((item.spread for item in measures), default=0.0),
        k_hat=max((item.k_hat for item in measures), default=0.0),
        c_hat=max((item.c_hat for item in measures), default=0.0),
        k_sigma={
            float(s): max((item.k_sigma[i] for item in measures), default=1.0)
            for i, s in enumerate(sigmas)
        },
        histogram=dict(part.stats.histogram),
        nontrivial_blocks=sum(1 for block in part.blocks if not block.module.is_trivial),
    )
    LOGGER.info(
        "Partition verification: spread %.2e, K^ %.4g, C^ %.4g", report.p3_spread, report.k_hat, report.c_hat
    )
    return report


def block_invariance_defect(A: OperatorMatrix | NDArray[np.complex128], part: Partition) -> float:  # noqa: N803
    """Largest |entry| of A joining two different blocks."""
    entries = A.entries if isinstance(A, OperatorMatrix) else np.asarray(A)
    cross = part.labels[:, None] != part.labels[None, :]
    if not np.any(cross):
        return 0.0
    return float(np.max(np.abs(entries[cross])))


@dataclass(frozen=True)
class SandwichReport:
    passed: bool
    checked: int
    min_lower_margin: float
    min_upper_margin: float


def norm_sandwich_check(
    part: Partition,
    m: MetricTensor,
    sigma: float,
    rng: np.random.Generator,
    k_sigma: float,
    *,
    rtol: float = 1e-12,
) -> SandwichReport:
    """ell^sigma <= ||psi||_sigma / ||psi||_0 <= K_sigma ell^sigma for a random psi per nontrivial block."""
    lower_margin = upper_margin = np.inf
    checked = 0
    for block in part.blocks:
        if block.module.is_trivial:
            continue
        coefficients = rng.standard_normal(block.size) + 1j * rng.standard_normal(block.size)
        brackets = np.asarray(jap_bracket(np.asarray(block.members, dtype=float), m), dtype=float)
        ratio = float(np.linalg.norm(brackets**sigma * coefficients) / np.linalg.norm(coefficients))
        scale = block.ell**sigma
        lower_margin = min(lower_margin, ratio / scale - 1.0)
        upper_margin = min(upper_margin, k_sigma - ratio / scale)
        checked += 1
    passed = lower_margin >= -rtol and upper_margin >= -rtol * k_sigma
    return SandwichReport(
        passed=bool(passed),
        checked=checked,
        min_lower_margin=float(lower_margin),
        min_upper_margin=float(upper_margin),
    )


def partition_to_dict(part: Partition) -> dict[str, object]:
    return {
        "blocks": [
            {
                "module_basis": [list(row) for row in block.module.basis],
                "members": [list(member) for member in block.members],
                "edges": [list(k) for k in block.edges],
                "ell": block.ell,
                "size": block.size,
            }
            for block in part.blocks
        ],
        "stats": part.stats.to_dict(),
    }


def partition_from_dict(data: Mapping[str, Any], modes: ModeSet) -> Partition:
    """Rebuild a partition dump on the mode set it was computed for."""
    d = modes.dimension
    blocks = []
    try:
        for raw in data["blocks"]:
            indices = sorted(modes.position(member) for member in raw["members"])
            blocks.append(
                Block(
                    module=IntegerModule(d=d, basis=tuple(tuple(int(v) for v in row) for row in raw["module_basis"])),
                    members=tuple(tuple(int(v) for v in modes.modes[i]) for i in indices),
                    indices=tuple(indices),
                    ell=float(raw["ell"]),
                    edges=tuple(tuple(int(v) for v in k) for k in raw.get("edges", [])),
                )
            )
    except (KeyError, TypeError, ValueError) as exc:
        raise NFTorusValidationError(f"Malformed partition dump: {exc}") from exc
    return Partition.from_blocks(modes, blocks)
