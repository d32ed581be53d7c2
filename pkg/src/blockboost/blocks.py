"""Sorted column blocks: CSC-style storage over row ranges, block
compression with 16-bit row offsets, and out-of-core spill/prefetch.

Each block covers a contiguous row range of at most 2^16 rows so local
row offsets fit a uint16. Within a block every feature column is sorted
by value, stable in row order. Blocks are immutable after build.
"""

from __future__ import annotations

import os
import queue
import struct
import threading
import zlib
from dataclasses import dataclass, field

import numpy as np

MAX_BLOCK_SIZE = 1 << 16
MIN_BLOCK_SIZE = 256
_MAGIC = b"CBK1"
_HEADER = struct.Struct("<4sHBxIQQIIQ")  # magic, version, codec, block_id, begin, end, m, crc, payload_len
_VERSION = 1
_CODECS = {"none": 0, "zlib": 1}
_CODEC_NAMES = {v: k for k, v in _CODECS.items()}


class BlockFormatError(ValueError):
    """Corrupt or incompatible block payload."""


class BlockIOError(IOError):
    """I/O failure, annotated with block id and path."""


@dataclass
class ColumnBlock:
    block_id: int
    row_begin: int
    row_end: int
    n_features: int
    col_indptr: np.ndarray  # int64, n_features + 1
    offsets: np.ndarray  # uint16 local row offsets
    values: np.ndarray  # float64, sorted ascending per feature

    @property
    def n_rows(self) -> int:
        return self.row_end - self.row_begin

    @property
    def nnz(self) -> int:
        return int(self.col_indptr[-1])

    def feature(self, k: int) -> tuple[np.ndarray, np.ndarray]:
        lo, hi = self.col_indptr[k], self.col_indptr[k + 1]
        return self.offsets[lo:hi], self.values[lo:hi]

    def validate(self) -> None:
        if not 0 < self.n_rows <= MAX_BLOCK_SIZE:
            raise ValueError("block row range empty or above 2^16")
        if self.nnz and int(self.offsets.max()) >= self.n_rows:
            raise ValueError("row offset outside the block's row range")
        for k in range(self.n_features):
            _, vals = self.feature(k)
            if len(vals) > 1 and np.any(np.diff(vals) < 0):
                raise ValueError(f"feature {k} not value-sorted")


@dataclass
class BlockStoreConfig:
    block_size: int = MAX_BLOCK_SIZE
    compression: bool = False
    spill_directories: tuple[str, ...] = ()
    memory_budget_blocks: int = 4

    def __post_init__(self):
        if not MIN_BLOCK_SIZE <= self.block_size <= MAX_BLOCK_SIZE:
            raise ValueError(f"block_size must be in [{MIN_BLOCK_SIZE}, {MAX_BLOCK_SIZE}]")
        if self.memory_budget_blocks < 1:
            raise ValueError("memory budget must be >= 1 block")
        self.spill_directories = tuple(self.spill_directories)


def _build_one_block(matrix, block_id: int, begin: int, end: int) -> ColumnBlock:
    lo, hi = matrix.indptr[begin], matrix.indptr[end]
    cols = matrix.indices[lo:hi]
    vals = matrix.values[lo:hi]
    local_rows = (
        np.repeat(np.arange(begin, end, dtype=np.int64), np.diff(matrix.indptr[begin:end + 1])) - begin
    )
    order = np.lexsort((local_rows, vals, cols))
    indptr = np.zeros(matrix.n_features + 1, dtype=np.int64)
    np.cumsum(np.bincount(cols, minlength=matrix.n_features), out=indptr[1:])
    return ColumnBlock(
        block_id,
        begin,
        end,
        matrix.n_features,
        indptr,
        local_rows[order].astype(np.uint16),
        vals[order].copy(),
    )


def compress_block(block: ColumnBlock, codec: str = "zlib") -> bytes:
    """Serialize a block; ``codec`` is 'zlib' or the identity 'none'."""
    if codec not in _CODECS:
        raise ValueError(f"unknown codec {codec!r}")
    payload = b"".join(
        (
            block.col_indptr.astype("<i8").tobytes(),
            block.offsets.astype("<u2").tobytes(),
            block.values.astype("<f8").tobytes(),
        )
    )
    if codec == "zlib":
        payload = zlib.compress(payload, level=6)
    header = _HEADER.pack(
        _MAGIC,
        _VERSION,
        _CODECS[codec],
        block.block_id,
        block.row_begin,
        block.row_end,
        block.n_features,
        zlib.crc32(payload),
        len(payload),
    )
    return header + payload


def decompress_block(data: bytes) -> ColumnBlock:
    if len(data) < _HEADER.size:
        raise BlockFormatError("truncated block header")
    magic, version, codec_id, block_id, begin, end, m, crc, payload_len = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise BlockFormatError("bad magic")
    if version != _VERSION:
        raise BlockFormatError(f"unsupported block version {version}")
    payload = data[_HEADER.size:_HEADER.size + payload_len]
    if len(payload) != payload_len:
        raise BlockFormatError("truncated block payload")
    if zlib.crc32(payload) != crc:
        raise BlockFormatError("checksum mismatch")
    codec = _CODEC_NAMES.get(codec_id)
    if codec is None:
        raise BlockFormatError(f"unknown codec id {codec_id}")
    if codec == "zlib":
        payload = zlib.decompress(payload)
    indptr = np.frombuffer(payload, dtype="<i8", count=m + 1)
    nnz = int(indptr[-1])
    off_start = (m + 1) * 8
    offsets = np.frombuffer(payload, dtype="<u2", count=nnz, offset=off_start)
    values = np.frombuffer(payload, dtype="<f8", count=nnz, offset=off_start + nnz * 2)
    return ColumnBlock(block_id, begin, end, m, indptr.astype(np.int64),
                       offsets.astype(np.uint16), values.astype(np.float64))


class BlockStore:
    """Immutable collection of column blocks, in memory or spilled to disk."""

    def __init__(self, config: BlockStoreConfig, n_rows: int, n_features: int,
                 blocks: list[ColumnBlock] | None = None,
                 paths: list[str] | None = None):
        self.config = config
        self.n_rows = n_rows
        self.n_features = n_features
        self._blocks = blocks
        self._paths = paths
        self.last_peak_residency = 0

    @property
    def n_blocks(self) -> int:
        return len(self._blocks) if self._blocks is not None else len(self._paths)

    @property
    def spilled(self) -> bool:
        return self._paths is not None

    def block_path(self, block_id: int) -> str:
        return self._paths[block_id]

    def iter_blocks(self, plan=None):
        """Yield blocks in plan order (default: ascending block id).

        Spilled stores stream through the prefetch pipeline with at most
        ``memory_budget_blocks`` decompressed blocks resident at once.
        """
        if plan is None:
            plan = range(self.n_blocks)
        plan = list(plan)
        if self._blocks is not None:
            self.last_peak_residency = self.n_blocks  # everything is resident
            for bid in plan:
                yield self._blocks[bid]
            return
        yield from self._prefetch(plan)

    def _load(self, bid: int) -> ColumnBlock:
        path = self._paths[bid]
        try:
            with open(path, "rb") as f:
                data = f.read()
        except OSError as exc:
            raise BlockIOError(f"block {bid}: cannot read {path}: {exc}") from exc
        try:
            return decompress_block(data)
        except BlockFormatError as exc:
            raise BlockFormatError(f"block {bid} at {path}: {exc}") from exc

    def _prefetch(self, plan):
        dirs = self.config.spill_directories
        dir_of = {bid: bid % len(dirs) for bid in plan}
        budget = self.config.memory_budget_blocks
        stop = threading.Event()
        queues = [queue.Queue() for _ in dirs]
        # producers honor the consumer's plan order: a block at plan
        # position p may be loaded once at least p - budget + 1 earlier
        # blocks were consumed, so the next-needed block is never starved
        cond = threading.Condition()
        state = {"consumed": 0, "resident": 0, "peak": 0}

        def producer(dirno):
            for pos, bid in enumerate(plan):
                if dir_of[bid] != dirno:
                    continue
                with cond:
                    while state["consumed"] < pos - budget + 1 and not stop.is_set():
                        cond.wait(timeout=0.05)
                    if stop.is_set():
                        return
                try:
                    blk = self._load(bid)
                except Exception as exc:  # surfaced on the consumer side
                    queues[dirno].put(exc)
                    return
                with cond:
                    state["resident"] += 1
                    state["peak"] = max(state["peak"], state["resident"])
                queues[dirno].put(blk)

        workers = [threading.Thread(target=producer, args=(d,), daemon=True) for d in range(len(dirs))]
        for w in workers:
            w.start()
        try:
            for bid in plan:
                item = queues[dir_of[bid]].get()
                if isinstance(item, Exception):
                    raise item
                yield item
                with cond:
                    state["consumed"] += 1
                    state["resident"] -= 1
                    cond.notify_all()
        finally:
            stop.set()
            with cond:
                cond.notify_all()
            for w in workers:
                w.join()
            self.last_peak_residency = state["peak"]


def build_blocks(matrix, config: BlockStoreConfig | None = None) -> BlockStore:
    """Partition the matrix into ceil(n / block_size) value-sorted blocks.

    With spill directories configured, blocks are written round-robin
    across them (compressed if enabled) and only read back on demand.
    """
    config = config or BlockStoreConfig()
    n = matrix.n_rows
    bounds = list(range(0, n, config.block_size)) + [n]
    codec = "zlib" if config.compression else "none"
    if config.spill_directories:
        paths: list[str] = []
        for bid in range(len(bounds) - 1):
            block = _build_one_block(matrix, bid, bounds[bid], bounds[bid + 1])
            directory = config.spill_directories[bid % len(config.spill_directories)]
            path = os.path.join(directory, f"block_{bid}.bin")
            try:
                with open(path, "wb") as f:
                    f.write(compress_block(block, codec))
            except OSError as exc:
                raise BlockIOError(f"block {bid}: cannot write {path}: {exc}") from exc
            paths.append(path)
        return BlockStore(config, n, matrix.n_features, paths=paths)
    blocks = [_build_one_block(matrix, bid, bounds[bid], bounds[bid + 1])
              for bid in range(len(bounds) - 1)]
    return BlockStore(config, n, matrix.n_features, blocks=blocks)


def spill_and_prefetch(store: BlockStore, access_plan) -> "iter":
    """Stream blocks in plan order through the bounded prefetch pipeline."""
    return store.iter_blocks(access_plan)
