"""Versioned binary caches for partitions and operators (numpy .npz)."""

from __future__ import annotations

import hashlib
import logging
from pathlib import Path

import numpy as np

from nftorus.clusters import Block, IntegerModule, Partition
from nftorus.errors import NFTorusValidationError
from nftorus.geometry import MetricTensor
from nftorus.resonance import NFParams
from nftorus.weyl import ModeSet, OperatorMatrix

LOGGER = logging.getLogger(__name__)

CACHE_FORMAT_VERSION = 1


def partition_cache_key(m: MetricTensor, cutoff: float, p: NFParams) -> str:
    """sha256 over the metric fingerprint, the cutoff and (delta, epsilon, tau)."""
    digest = hashlib.sha256()
    digest.update(m.fingerprint())
    digest.update(np.asarray([cutoff, p.delta, p.epsilon, p.tau], dtype="<f8").tobytes())
    return digest.hexdigest()


def _operator_key(modes: ModeSet) -> str:
    digest = hashlib.sha256()
    digest.update(modes.metric.fingerprint())
    digest.update(np.ascontiguousarray(modes.modes, dtype="<i8").tobytes())
    return digest.hexdigest()


def _header_matches(data: np.lib.npyio.NpzFile, key: str, path: Path) -> bool:
    version = int(data["version"]) if "version" in data.files else -1
    stored = str(data["key"]) if "key" in data.files else ""
    if version != CACHE_FORMAT_VERSION or stored != key:
        LOGGER.warning(
            "Ignoring stale cache %s (version %d, expected %d; key match %s)",
            path,
            version,
            CACHE_FORMAT_VERSION,
            stored == key,
        )
        return False
    return True


def save_partition(part: Partition, path: str | Path, key: str) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    d = part.modes.dimension
    modules = np.zeros((len(part.blocks), d, d), dtype=np.int64)
    for b, block in enumerate(part.blocks):
        if block.module.rank:
            modules[b, : block.module.rank] = block.module.as_array()
    edge_owner = [b for b, block in enumerate(part.blocks) for _ in block.edges]
    edges = [k for block in part.blocks for k in block.edges]
    np.savez_compressed(
        target,
        version=np.asarray(CACHE_FORMAT_VERSION),
        key=np.asarray(key),
        labels=part.labels.astype(np.int64),
        ranks=np.asarray([block.module.rank for block in part.blocks], dtype=np.int64),
        modules=modules,
        ell=np.asarray([block.ell for block in part.blocks], dtype=float),
        edge_owner=np.asarray(edge_owner, dtype=np.int64),
        edges=np.asarray(edges, dtype=np.int64).reshape(len(edges), d),
    )
    LOGGER.debug("Saved partition cache %s", target)
    return target


def load_partition(path: str | Path, modes: ModeSet, key: str) -> Partition | None:
    """The cached partition, or None when the file is missing or stale."""
    source = Path(path)
    if not source.exists():
        return None
    with np.load(source, allow_pickle=False) as data:
        if not _header_matches(data, key, source):
            return None
        labels = data["labels"]
        if labels.shape != (modes.size,):
            LOGGER.warning("Ignoring cache %s built for %d modes", source, labels.shape[0])
            return None
        ranks, modules, ell = data["ranks"], data["modules"], data["ell"]
        edge_owner, edges = data["edge_owner"], data["edges"]
    d = modes.dimension
    blocks = []
    for b in range(len(ranks)):
        indices = np.flatnonzero(labels == b)
        basis = tuple(tuple(int(v) for v in row) for row in modules[b, : int(ranks[b])])
        blocks.append(
            Block(
                module=IntegerModule(d=d, basis=basis),
                members=tuple(tuple(int(v) for v in modes.modes[i]) for i in indices),
                indices=tuple(int(i) for i in indices),
                ell=float(ell[b]),
                edges=tuple(tuple(int(v) for v in k) for k in edges[edge_owner == b]),
            )
        )
    LOGGER.info("Loaded partition from cache %s", source)
    return Partition.from_blocks(modes, blocks)


class PartitionCache:
    """Directory of ``partition-<sha256>.npz`` files."""

    def __init__(self, directory: str | Path) -> None:
        self.directory = Path(directory)

    def path_for(self, key: str) -> Path:
        return self.directory / f"partition-{key}.npz"

    def load(self, modes: ModeSet, p: NFParams) -> Partition | None:
        key = partition_cache_key(modes.metric, modes.cutoff, p)
        return load_partition(self.path_for(key), modes, key)

    def store(self, part: Partition, p: NFParams) -> Path:
        key = partition_cache_key(part.modes.metric, part.modes.cutoff, p)
        return save_partition(part, self.path_for(key), key)


def save_operator(A: OperatorMatrix, path: str | Path) -> Path:  # noqa: N803
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(
        target,
        version=np.asarray(CACHE_FORMAT_VERSION),
        key=np.asarray(_operator_key(A.modes)),
        entries=A.entries,
    )
    return target


def load_operator(path: str | Path, modes: ModeSet) -> OperatorMatrix | None:
    source = Path(path)
    if not source.exists():
        return None
    with np.load(source, allow_pickle=False) as data:
        if not _header_matches(data, _operator_key(modes), source):
            return None
        entries = data["entries"]
    try:
        return OperatorMatrix(modes, entries)
    except NFTorusValidationError:
        LOGGER.warning("Ignoring operator cache %s with mismatched shape", source)
        return None
