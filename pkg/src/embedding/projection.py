"""
projection.py
Seeded sparse random projection with a three-point entry law.

Entry P_ij is +a with probability d/2, -a with probability d/2 and 0 otherwise,
where d is the density, s = 1/d and a = s/sqrt(p) (or sqrt(s)/sqrt(p) when
normalized). Columns are generated in fixed blocks from a counter-based
generator, so any block can be rebuilt on its own and the matrix never has to
be stored.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Iterable, Iterator, Optional

import numpy as np
from scipy import sparse

from utils.errors import ShapeError
from utils.seeding import counter_generator

logger = logging.getLogger(__name__)

BLOCK_COLUMNS = 4096
CACHE_BUDGET_BYTES = 1 << 30
# CSC cost per stored entry: float64 value + int32 row index
BYTES_PER_NONZERO = 12


@dataclass(frozen=True)
class SparseProjection:
    """
    The p_out x n_in matrix P, defined entirely by its parameters.

    Fields are what the embedding file header records; the matrix can be
    rebuilt from them alone.
    """
    n_in: int
    p_out: int
    density: float
    seed: int
    normalized: bool = False
    block_columns: int = BLOCK_COLUMNS
    _cache: Dict[str, sparse.csc_matrix] = field(default_factory=dict, compare=False, repr=False)

    @property
    def sparsity(self) -> float:
        return 1.0 / self.density

    @property
    def value(self) -> float:
        """Magnitude of every non-zero entry"""
        s = self.sparsity
        return (np.sqrt(s) if self.normalized else s) / np.sqrt(self.p_out)

    @property
    def n_blocks(self) -> int:
        return -(-self.n_in // self.block_columns)

    @property
    def expected_nnz(self) -> float:
        return self.density * self.n_in * self.p_out

    def describe(self) -> dict:
        return {
            "n_in": self.n_in,
            "p_out": self.p_out,
            "density": self.density,
            "seed": self.seed,
            "normalized": self.normalized,
            "block_columns": self.block_columns,
        }

    def block(self, index: int) -> np.ndarray:
        """Dense columns [index * block_columns, ...) of P, shape (p_out, cols)"""
        if not 0 <= index < self.n_blocks:
            raise IndexError(f"block {index} out of range [0, {self.n_blocks})")
        start = index * self.block_columns
        cols = min(self.block_columns, self.n_in - start)
        u = counter_generator(self.seed, index).random((self.p_out, cols))
        half = self.density / 2
        out = np.zeros((self.p_out, cols))
        out[u < half] = self.value
        out[(u >= half) & (u < self.density)] = -self.value
        return out

    def materialize(self) -> np.ndarray:
        """Full dense matrix; only sensible for small instances"""
        return np.hstack([self.block(b) for b in range(self.n_blocks)])

    def cached(self) -> Optional[sparse.csc_matrix]:
        """CSC form when it fits the cache budget, built on first use"""
        if self.expected_nnz * BYTES_PER_NONZERO > CACHE_BUDGET_BYTES:
            return None
        if "csc" not in self._cache:
            blocks = [sparse.csc_matrix(self.block(b)) for b in range(self.n_blocks)]
            matrix = sparse.hstack(blocks, format="csc")
            logger.info(f"Cached projection {self.p_out}x{self.n_in} with {matrix.nnz} non-zeros")
            self._cache["csc"] = matrix
        return self._cache["csc"]

    def columns(self, start: int, stop: int) -> Iterator[tuple]:
        """(column offset, matrix slice) pieces covering columns [start, stop)"""
        matrix = self.cached()
        if matrix is not None:
            yield start, matrix[:, start:stop]
            return
        first, last = start // self.block_columns, (stop - 1) // self.block_columns
        for b in range(first, last + 1):
            lo = b * self.block_columns
            dense = self.block(b)
            a, z = max(start, lo), min(stop, lo + dense.shape[1])
            yield a, dense[:, a - lo:z - lo]


def build_projection(
    n_in: int,
    p_out: int,
    density: Optional[float] = None,
    seed: int = 0,
    normalized: bool = False,
) -> SparseProjection:
    """
    Args:
        n_in: Input dimension (number of model parameters for Fisher scores)
        p_out: Projection dimension
        density: Fraction of non-zero entries; defaults to 1/sqrt(n_in)
        seed: Generator seed
        normalized: Use entries of magnitude sqrt(s)/sqrt(p) so E[P_ij^2] = 1/p
    """
    if n_in < 1 or p_out < 1:
        raise ValueError(f"projection needs n_in >= 1 and p_out >= 1, got {n_in}, {p_out}")
    if density is None:
        density = 1.0 / np.sqrt(n_in)
    if not 0.0 < density <= 1.0:
        raise ValueError(f"density must lie in (0, 1], got {density}")
    return SparseProjection(int(n_in), int(p_out), float(density), int(seed), bool(normalized))


def project_batch(projection: SparseProjection, vectors: np.ndarray) -> np.ndarray:
    """P v for each row of a (batch, n_in) matrix"""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.ndim != 2 or vectors.shape[1] != projection.n_in:
        raise ShapeError("project", "n_in", projection.n_in, vectors.shape[-1])
    feeder = StreamingProjector(projection, batch=len(vectors))
    feeder.feed(vectors)
    return feeder.result()


def project(projection: SparseProjection, vector: np.ndarray) -> np.ndarray:
    vector = np.asarray(vector, dtype=np.float64)
    if vector.ndim != 1:
        raise ShapeError("project", "ndim", 1, vector.ndim)
    return project_batch(projection, vector[None])[0]


class StreamingProjector:
    """
    Accumulates P v while v arrives in consecutive column chunks.

    Chunks are (batch, k) slices of `batch` vectors fed left to right; the
    result is available once all n_in columns have been fed.
    """

    def __init__(self, projection: SparseProjection, batch: int = 1):
        self.projection = projection
        self.offset = 0
        self._acc = np.zeros((batch, projection.p_out))

    def feed(self, chunk: np.ndarray) -> None:
        chunk = np.asarray(chunk, dtype=np.float64)
        if chunk.ndim == 1:
            chunk = chunk[None]
        if chunk.shape[0] != self._acc.shape[0]:
            raise ShapeError("StreamingProjector", "batch", self._acc.shape[0], chunk.shape[0])
        stop = self.offset + chunk.shape[1]
        if stop > self.projection.n_in:
            raise ShapeError("StreamingProjector", "n_in", self.projection.n_in, stop)
        for col, piece in self.projection.columns(self.offset, stop):
            width = piece.shape[1]
            part = chunk[:, col - self.offset:col - self.offset + width]
            self._acc += np.asarray((piece @ part.T).T)
        self.offset = stop

    def result(self) -> np.ndarray:
        if self.offset != self.projection.n_in:
            raise ShapeError("StreamingProjector", "columns fed", self.projection.n_in, self.offset)
        return self._acc.copy()


def project_stream(
    projection: SparseProjection,
    vectors: Iterable[np.ndarray],
    buffer_size: int = 256,
) -> Iterator[np.ndarray]:
    """
    Project a stream of vectors, holding at most `buffer_size` of them at a
    time. Yields projected vectors in input order.
    """
    buffer = []
    for vector in vectors:
        buffer.append(np.asarray(vector, dtype=np.float64))
        if len(buffer) == buffer_size:
            yield from project_batch(projection, np.stack(buffer))
            buffer = []
    if buffer:
        yield from project_batch(projection, np.stack(buffer))
