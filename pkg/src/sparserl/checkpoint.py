"""Binary checkpoint format.

Layout (all little-endian): magic "SSDE", format version u32, then the
config hash, task cursor, trade-off beta, seeds, actor parameters with
their initial-value store, per-task neuron masks and fine-grained
parameter-mask archives (bit-packed, 64 bits per word, row-padded), and
the eval-log row offset for resume. A checkpoint is self-contained:
reloading reproduces the evaluation of any completed task bit-exactly.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"SSDE"
VERSION = 1

_DTYPE_TAGS = {1: "<f4", 2: "<f8"}
_TAG_FOR = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}


class CheckpointError(RuntimeError):
    pass


def pack_bits(mat: np.ndarray) -> np.ndarray:
    """Bool matrix -> uint64 words, rows padded to a multiple of 64 bits.
    Bit i of a row lives in word i // 64 at position i % 64."""
    mat = np.atleast_2d(mat)
    r, c = mat.shape
    words = max(1, (c + 63) // 64)
    padded = np.zeros((r, words * 64), dtype=np.uint8)
    padded[:, :c] = mat
    return np.ascontiguousarray(
        np.packbits(padded, axis=1, bitorder="little")).view("<u8")


def unpack_bits(words: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    r, c = shape
    bits = np.unpackbits(np.ascontiguousarray(words).view(np.uint8),
                         axis=1, bitorder="little")
    return bits[:, :c].astype(bool).reshape(r, c)


def _write_array(fh, arr: np.ndarray):
    tag = _TAG_FOR.get(arr.dtype)
    if tag is None:
        raise CheckpointError(f"unsupported dtype {arr.dtype}")
    fh.write(struct.pack("<BB", tag, arr.ndim))
    for d in arr.shape:
        fh.write(struct.pack("<I", d))
    fh.write(np.ascontiguousarray(arr).astype(_DTYPE_TAGS[tag]).tobytes())


def _read_array(fh) -> np.ndarray:
    tag, ndim = struct.unpack("<BB", _read_exact(fh, 2))
    if tag not in _DTYPE_TAGS:
        raise CheckpointError(f"unknown dtype tag {tag}")
    shape = tuple(struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(ndim))
    dt = np.dtype(_DTYPE_TAGS[tag])
    n = int(np.prod(shape)) if shape else 1
    data = np.frombuffer(_read_exact(fh, n * dt.itemsize), dtype=dt)
    return data.reshape(shape).copy()


def _write_bitmat(fh, mat: np.ndarray):
    mat = np.atleast_2d(mat)
    fh.write(struct.pack("<II", *mat.shape))
    fh.write(pack_bits(mat).tobytes())


def _read_bitmat(fh) -> np.ndarray:
    r, c = struct.unpack("<II", _read_exact(fh, 8))
    words = max(1, (c + 63) // 64)
    data = np.frombuffer(_read_exact(fh, r * words * 8), dtype="<u8")
    return unpack_bits(data.reshape(r, words), (r, c))


def _read_exact(fh, n: int) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError("truncated checkpoint")
    return data


@dataclass
class Checkpoint:
    config_hash: str                 # hex sha256 of the resolved config
    task_cursor: int                 # number of completed tasks
    beta: float
    run_seed: int
    dict_seed: int
    embed_dim: int
    actor_widths: list[int]
    actor_W: list[np.ndarray]
    actor_b: list[np.ndarray]
    init_W: list[np.ndarray]
    init_b: list[np.ndarray]
    task_phi: list[list[np.ndarray]]        # per task: phi vectors, layers 0..L
    task_param_masks: list[list[np.ndarray]]  # per task: fine-grained masks
    eval_rows: int                   # eval-curve CSV rows written so far


def save(path, ck: Checkpoint):
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        h = bytes.fromhex(ck.config_hash)
        fh.write(struct.pack("<B", len(h)))
        fh.write(h)
        fh.write(struct.pack("<IdQQI", ck.task_cursor, ck.beta,
                             ck.run_seed, ck.dict_seed, ck.embed_dim))
        fh.write(struct.pack("<I", len(ck.actor_widths)))
        for w in ck.actor_widths:
            fh.write(struct.pack("<I", w))
        for group in (ck.actor_W, ck.actor_b, ck.init_W, ck.init_b):
            for arr in group:
                _write_array(fh, arr)
        fh.write(struct.pack("<Q", ck.eval_rows))
        fh.write(struct.pack("<I", len(ck.task_phi)))
        for phi, pms in zip(ck.task_phi, ck.task_param_masks):
            fh.write(struct.pack("<I", len(phi)))
            for vec in phi:
                _write_bitmat(fh, vec[None, :])
            fh.write(struct.pack("<I", len(pms)))
            for mat in pms:
                _write_bitmat(fh, mat)


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != VERSION:
            raise CheckpointError(
                f"{path}: unsupported checkpoint version {version}")
        (hlen,) = struct.unpack("<B", _read_exact(fh, 1))
        config_hash = _read_exact(fh, hlen).hex()
        cursor, beta, run_seed, dict_seed, embed_dim = struct.unpack(
            "<IdQQI", _read_exact(fh, 32))
        (nw,) = struct.unpack("<I", _read_exact(fh, 4))
        widths = [struct.unpack("<I", _read_exact(fh, 4))[0] for _ in range(nw)]
        L = nw - 1
        actor_W = [_read_array(fh) for _ in range(L)]
        actor_b = [_read_array(fh) for _ in range(L)]
        init_W = [_read_array(fh) for _ in range(L)]
        init_b = [_read_array(fh) for _ in range(L)]
        (eval_rows,) = struct.unpack("<Q", _read_exact(fh, 8))
        (ntasks,) = struct.unpack("<I", _read_exact(fh, 4))
        task_phi = []
        task_pms = []
        for _ in range(ntasks):
            (nphi,) = struct.unpack("<I", _read_exact(fh, 4))
            task_phi.append([_read_bitmat(fh)[0] for _ in range(nphi)])
            (npm,) = struct.unpack("<I", _read_exact(fh, 4))
            task_pms.append([_read_bitmat(fh) for _ in range(npm)])
        return Checkpoint(
            config_hash=config_hash, task_cursor=cursor, beta=beta,
            run_seed=run_seed, dict_seed=dict_seed, embed_dim=embed_dim,
            actor_widths=widths, actor_W=actor_W, actor_b=actor_b,
            init_W=init_W, init_b=init_b, task_phi=task_phi,
            task_param_masks=task_pms, eval_rows=eval_rows)
