"""Small shared numerics: polar factors, subspace angles, phase lifting,
and the thread map used for embarrassingly parallel grids."""

from __future__ import annotations

import os
import tempfile
from concurrent.futures import ThreadPoolExecutor

import numpy as np

WORKERS_ENV = "EDGETOPO_WORKERS"


def atomic_write_text(path, text: str) -> None:
    """Write text to path via a sibling temp file and rename, so readers
    never observe a half-written file."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-",
                               suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def worker_count() -> int:
    """Worker count from the environment (default 1, i.e. serial)."""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        return 1
    return max(1, n)


def thread_map(fn, items):
    """Map fn over items, threaded when EDGETOPO_WORKERS > 1.

    LAPACK calls release the GIL, so threads give genuine speedups for
    grids of eigh/QZ factorizations without any pickling of models.
    Order of results matches the input order.
    """
    items = list(items)
    n = worker_count()
    if n <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def unitarize(m: np.ndarray) -> np.ndarray:
    """Unitary polar factor of a (square, full-rank) matrix."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh


def orthonormalize(cols: np.ndarray) -> np.ndarray:
    """Orthonormal basis of the column span, via QR with a positive
    diagonal so the result depends smoothly on smoothly varying input."""
    q, r = np.linalg.qr(cols)
    d = np.diagonal(r).copy()
    d = np.where(np.abs(d) > 1e-300, d / np.abs(d), 1.0)
    return q * d.conj()


def subspace_angle(a: np.ndarray, b: np.ndarray) -> float:
    """Largest principal angle (radians) between the column spans of two
    matrices with orthonormal columns."""
    s = np.linalg.svd(a.conj().T @ b, compute_uv=False)
    s = np.clip(s, -1.0, 1.0)
    return float(np.arccos(np.min(s)))


def lift_angles(raw: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Shift each raw angle by a multiple of 2*pi to land within pi of
    its reference."""
    return ref + np.angle(np.exp(1j * (raw - ref)))


def accumulate_arg(values: np.ndarray, max_step: float = 0.5 * np.pi):
    """Continuously accumulated argument along a sequence of nonzero
    complex numbers.

    Returns (args, max_jump) where args[0] = angle(values[0]) and each
    increment is taken in (-pi, pi]. max_jump is the largest |increment|,
    for step-contract checks by the caller.
    """
    vals = np.asarray(values, dtype=complex)
    if np.any(np.abs(vals) == 0):
        raise ValueError("zero encountered while accumulating an argument")
    steps = np.angle(vals[1:] / vals[:-1])
    args = np.angle(vals[0]) + np.concatenate(([0.0], np.cumsum(steps)))
    max_jump = float(np.max(np.abs(steps))) if len(steps) else 0.0
    return args, max_jump


def circular_distance(a, b):
    """Distance between angles on the circle, in [0, pi]."""
    return np.abs(np.angle(np.exp(1j * (np.asarray(a) - np.asarray(b)))))


def hermitian_violation(m: np.ndarray) -> float:
    return float(np.linalg.norm(m - m.conj().T))


def standard_symplectic(dim: int) -> np.ndarray:
    """Block-diagonal eps with 2x2 blocks [[0, -1], [1, 0]] (dim even)."""
    if dim % 2:
        raise ValueError("standard symplectic form needs an even dimension")
    eps = np.zeros((dim, dim))
    for i in range(0, dim, 2):
        eps[i, i + 1] = -1.0
        eps[i + 1, i] = 1.0
    return eps
