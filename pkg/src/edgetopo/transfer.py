"""Solution structure of the half-line recursion at fixed edge momentum.

At spectral parameter z and momentum k the bulk recursion

    A(k) psi_{n-1} + A(k)^+ psi_{n+1} + V_n(k) psi_n = z psi_n

is analysed through the quadratic matrix pencil of its cell-periodic
solutions. Writing Acal, Vcal for the period-1 regrouped blocks, a
sequence psi on cells p of the form psi_(cell p) = xi^p W solves the
recursion iff

    Q(xi) W = (Acal + xi (Vcal - z I) + xi^2 Acal^+) W = 0.

Off the bulk spectrum at momentum k no root lies on the unit circle and
the space of square-summable solutions on the half line has dimension
N (the per-site block size). Bloch and Jordan columns from roots with
|xi| < 1 need not exhaust it when the hopping block is singular; the
complement consists of solutions supported on finitely many sites near
the wall, which a banded kernel computation recovers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .errors import CapabilityError, NearSpectrumError, NumericalError
from .model import EdgeModelSpec, ModelSpec, reduced_blocks

# Roots further than this from the unit circle (relatively) are cleanly
# inside or outside; closer ones count as unimodular.
UNIT_CIRCLE_MARGIN = 1e-8

_DEFLATE = 1e-10
_CLUSTER_TOL = 1e-7
_NULL_TOL = 1e-8


# ---------------------------------------------------------------------------
# Quadratic pencil
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PencilRoot:
    """One root cluster of Q: the multiplier xi, its multiplicity, the
    null vectors (columns), and for a defective double root the
    generalized vector of the Jordan chain."""

    xi: complex
    multiplicity: int
    vectors: np.ndarray
    kind: str  # "inside" | "unimodular" | "outside"
    jordan_vector: np.ndarray | None = None


@dataclass(frozen=True)
class PencilRoots:
    z: complex
    k: float
    dim: int
    roots: tuple

    def count(self, kind: str) -> int:
        return sum(r.multiplicity for r in self.roots if r.kind == kind)

    def by_kind(self, kind: str):
        return [r for r in self.roots if r.kind == kind]


def pencil_matrix(acal: np.ndarray, vcal: np.ndarray, z: complex, xi: complex):
    """Q(xi) = Acal + xi (Vcal - z) + xi^2 Acal^+."""
    d = acal.shape[0]
    return acal + xi * (vcal - z * np.eye(d)) + xi ** 2 * acal.conj().T


def transfer_roots(model: ModelSpec, z: complex, k: float,
                   expect_resolvent: bool = False) -> PencilRoots:
    """All finite nonzero roots of the cell pencil at (z, k).

    Roots are clustered, classified against the unit circle, and
    equipped with refined null vectors. A defective double root gets a
    Jordan chain; larger defective clusters are not supported. With
    expect_resolvent=True any unimodular root raises NearSpectrumError.
    """
    acal, vcal = reduced_blocks(model, k)
    d = acal.shape[0]
    eye = np.eye(d)
    zero = np.zeros((d, d))
    s = np.block([[z * eye - vcal, -acal], [eye, zero]])
    t = np.block([[acal.conj().T, zero], [zero, eye]])
    w, _ = scipy.linalg.eig(s, t, homogeneous_eigvals=True, right=True)
    alpha, beta = w[0], w[1]

    xis = []
    for a, b in zip(alpha, beta):
        scale = max(abs(a), abs(b))
        if scale == 0.0 or abs(b) <= _DEFLATE * scale or abs(a) <= _DEFLATE * scale:
            continue  # root at 0 or infinity: no cell-periodic solution
        xi = a / b
        if abs(xi) < _DEFLATE or abs(xi) > 1.0 / _DEFLATE:
            continue
        xis.append(xi)

    clusters: list[list[complex]] = []
    for xi in sorted(xis, key=lambda v: (abs(v), np.angle(v))):
        for cl in clusters:
            mean = np.mean(cl)
            if abs(xi - mean) <= _CLUSTER_TOL * max(1.0, abs(mean)):
                cl.append(xi)
                break
        else:
            clusters.append([xi])

    roots = []
    for cl in clusters:
        xi = complex(np.mean(cl))
        mult = len(cl)
        q = pencil_matrix(acal, vcal, z, xi)
        _, sv, vh = np.linalg.svd(q)
        null_dim = max(1, int(np.sum(sv < _NULL_TOL * sv[0]))) if sv[0] > 0 else d
        vectors = vh[d - min(null_dim, mult):].conj().T
        jordan = None
        if null_dim >= mult:
            pass  # semisimple (or a slightly split cluster): null vectors span
        elif mult == 2 and null_dim == 1:
            u = vh[-1].conj()
            qprime = (vcal - z * np.eye(d)) + 2.0 * xi * acal.conj().T
            rhs = -xi * (qprime @ u)
            wvec, *_ = np.linalg.lstsq(q, rhs, rcond=None)
            resid = np.linalg.norm(q @ wvec - rhs)
            if resid > 1e-5 * max(1.0, np.linalg.norm(rhs)):
                raise NumericalError(
                    f"Jordan chain solve failed at xi={xi:.6g} "
                    f"(residual {resid:.2e})")
            vectors = u[:, None]
            jordan = wvec
        else:
            raise NumericalError(
                f"defective root cluster of size {mult} with null "
                f"dimension {null_dim} at xi={xi:.6g} is not supported")
        margin = abs(abs(xi) - 1.0)
        if margin <= UNIT_CIRCLE_MARGIN:
            kind = "unimodular"
        elif abs(xi) < 1.0:
            kind = "inside"
        else:
            kind = "outside"
        roots.append(PencilRoot(xi, mult, vectors, kind, jordan))

    if expect_resolvent:
        uni = [r for r in roots if r.kind == "unimodular"]
        if uni:
            worst = min(abs(abs(r.xi) - 1.0) for r in uni)
            raise NearSpectrumError(
                f"z={z:.6g} at k={k:.6g} lies on or near the bulk spectrum "
                f"(multiplier within {worst:.2e} of the unit circle)")

    return PencilRoots(z, k, d, tuple(roots))


def one_period_transfer(model: ModelSpec, z: complex, k: float) -> np.ndarray:
    """Product of the site-to-site transfer matrices over one period.

    Maps (psi_1, psi_0) to (psi_{M+1}, psi_M); its eigenvalues are the
    pencil roots. Needs invertible hopping, so it serves as an
    independent cross-check of the pencil route where applicable.
    """
    a = model.hopping(k)
    n = model.n_orb
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] < 1e-12 * max(sv[0], 1.0):
        raise CapabilityError("one-period transfer matrix needs an "
                              "invertible hopping block")
    ah_inv = np.linalg.inv(a.conj().T)
    total = np.eye(2 * n, dtype=complex)
    for site in range(1, model.period + 1):
        v = model.onsite(site, k)
        top = np.hstack([ah_inv @ (z * np.eye(n) - v), -ah_inv @ a])
        bot = np.hstack([np.eye(n), np.zeros((n, n))])
        total = np.vstack([top, bot]) @ total
    return total


# ---------------------------------------------------------------------------
# Decaying solution frames
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FrameColumn:
    """One solution in a frame.

    bloch:   psi at cell p is xi^p times the stored cell vector.
    jordan:  psi at cell p is xi^p (w + p u) with u the partner vector.
    compact: psi is the stored finite stack of site values, zero beyond.
    """

    kind: str
    xi: complex = 0.0j
    cell_vector: np.ndarray | None = None
    partner_vector: np.ndarray | None = None
    support: np.ndarray | None = None

    def site_value(self, n: int, n_orb: int, period: int) -> np.ndarray:
        if self.kind == "compact":
            if n < self.support.shape[0]:
                return self.support[n]
            return np.zeros(n_orb, dtype=complex)
        if n == 0:
            p, blk = -1, period - 1
        else:
            p, blk = divmod(n - 1, period)
        sl = slice(blk * n_orb, (blk + 1) * n_orb)
        w = self.cell_vector[sl]
        if self.kind == "jordan":
            w = w + p * self.partner_vector[sl]
        return self.xi ** p * w


@dataclass(frozen=True)
class Frame:
    """Basis of the decaying solution space at (z, k): boundary data at
    sites 0 and 1 plus enough per-column structure to reconstruct the
    solution at any site."""

    model: ModelSpec
    z: complex
    k: float
    psi0: np.ndarray
    psi1: np.ndarray
    columns: tuple
    diagnostics: dict = field(default_factory=dict)

    @property
    def ncols(self) -> int:
        return len(self.columns)

    def values(self, n_sites: int) -> np.ndarray:
        """Site values psi_n for n = 0..n_sites-1, shape (n_sites, N, ncols)."""
        n_orb, period = self.model.n_orb, self.model.period
        out = np.zeros((n_sites, n_orb, self.ncols), dtype=complex)
        for j, col in enumerate(self.columns):
            for n in range(n_sites):
                out[n, :, j] = col.site_value(n, n_orb, period)
        return out


def frame_from_columns(model: ModelSpec, z: complex, k: float, columns,
                       diagnostics=None, rank_check: bool = True) -> Frame:
    """Assemble a Frame from solution columns, normalizing each column's
    boundary data to unit length and checking joint independence."""
    n_orb, period = model.n_orb, model.period
    normed = []
    b0, b1 = [], []
    for col in columns:
        v0 = col.site_value(0, n_orb, period)
        v1 = col.site_value(1, n_orb, period)
        scale = float(np.sqrt(np.linalg.norm(v0) ** 2 + np.linalg.norm(v1) ** 2))
        if scale < 1e-300:
            raise NumericalError("frame column with vanishing boundary data")
        if col.kind == "compact":
            col = FrameColumn("compact", support=col.support / scale)
        elif col.kind == "jordan":
            col = FrameColumn("jordan", col.xi, col.cell_vector / scale,
                              col.partner_vector / scale)
        else:
            col = FrameColumn("bloch", col.xi, col.cell_vector / scale)
        normed.append(col)
        b0.append(v0 / scale)
        b1.append(v1 / scale)
    psi0 = np.array(b0, dtype=complex).T if normed else np.zeros((n_orb, 0))
    psi1 = np.array(b1, dtype=complex).T if normed else np.zeros((n_orb, 0))
    diag = dict(diagnostics or {})
    if rank_check and normed:
        sv = np.linalg.svd(np.vstack([psi0, psi1]), compute_uv=False)
        diag["boundary_condition_number"] = float(sv[0] / sv[-1]) if sv[-1] else np.inf
        if sv[-1] <= 1e-8 * sv[0]:
            raise NumericalError(
                f"frame columns are numerically dependent at z={z:.6g}, "
                f"k={k:.6g} (singular value ratio {sv[-1] / sv[0]:.2e})")
    return Frame(model, z, k, psi0, psi1, tuple(normed), diag)


def _compact_kernel(model: ModelSpec, z: complex, k: float, p: int):
    """Kernel of the banded system for solutions supported on sites
    0..p: recursion rows 1..p+1 with values beyond p implicitly zero,
    so any kernel vector extends by zeros to a half-line solution."""
    n_orb = model.n_orb
    a = model.hopping(k)
    ah = a.conj().T
    nblk = p + 1
    sysmat = np.zeros((nblk * n_orb, nblk * n_orb), dtype=complex)
    for row in range(1, p + 2):
        r = slice((row - 1) * n_orb, row * n_orb)
        sysmat[r, (row - 1) * n_orb:row * n_orb] = a
        if row <= p:
            sysmat[r, row * n_orb:(row + 1) * n_orb] = \
                model.onsite(row, k) - z * np.eye(n_orb)
        if row + 1 <= p:
            sysmat[r, (row + 1) * n_orb:(row + 2) * n_orb] = ah
    _, sv, vh = np.linalg.svd(sysmat)
    if sv[0] == 0.0:
        return nblk * n_orb, vh, nblk
    return int(np.sum(sv < 1e-10 * sv[0])), vh, nblk


def _compact_columns(model: ModelSpec, z: complex, k: float, count: int,
                     bloch_columns):
    """Solutions with finite support near the wall, completing the Bloch
    columns to a basis of the decaying space.

    A strongly decaying Bloch solution truncated at the support bound
    sits in the kernel to within its tail size, so the kernel is first
    stripped of the span of the truncated Bloch columns; what remains
    are the genuinely new solutions. Off the bulk spectrum their number
    is exactly count; more means z sits in point spectrum of the bulk
    operator (flat band), where no decaying frame exists.
    """
    n_orb, period = model.n_orb, model.period
    p = 2 * period * n_orb + 2
    for attempt in range(2):
        null, vh, nblk = _compact_kernel(model, z, k, p)
        kernel = vh[len(vh) - null:].conj().T if null else np.zeros((len(vh), 0))
        if bloch_columns and null:
            stacks = np.array([
                np.concatenate([col.site_value(n, n_orb, period)
                                for n in range(nblk)])
                for col in bloch_columns]).T
            stacks /= np.linalg.norm(stacks, axis=0)
            q, _ = np.linalg.qr(stacks)
            # Kernel directions that the truncated Bloch columns already
            # represent (residual at tail size) are spurious; keep the
            # combinations with a genuinely new component.
            resid = kernel - q @ (q.conj().T @ kernel)
            _, s_r, vh_r = np.linalg.svd(resid)
            new = int(np.sum(s_r > 1e-4))
            kernel = kernel @ vh_r[:new].conj().T
        found = kernel.shape[1]
        if found >= count or attempt:
            break
        p *= 2  # defensive retry; the support bound should not bind
    if found < count:
        raise NumericalError(
            f"decaying space deficient at z={z:.6g}, k={k:.6g}: expected "
            f"{count} finite-support solutions, found {found}")
    if found > count:
        raise NearSpectrumError(
            f"z={z:.6g} at k={k:.6g} is an eigenvalue of the bulk "
            f"operator ({found} finite-support solutions beyond the "
            f"Bloch columns, expected {count})")
    cols = []
    for j in range(count):
        stack = kernel[:, j].reshape(nblk, n_orb)
        norms = np.linalg.norm(stack, axis=1)
        last = int(np.max(np.nonzero(norms > 1e-12 * np.max(norms))[0]))
        cols.append(FrameColumn("compact", support=stack[:last + 1].copy()))
    return cols, found


def decaying_frame(model: ModelSpec, z: complex, k: float) -> Frame:
    """Frame of the N-dimensional space of decaying solutions at (z, k).

    z must lie off the bulk spectrum at this k. Bloch and Jordan columns
    come from pencil roots inside the unit circle; if the hopping block
    is singular these are completed by finite-support solutions.
    """
    if isinstance(model, EdgeModelSpec):
        model = model.bulk
    roots = transfer_roots(model, z, k, expect_resolvent=True)
    columns = []
    inside = sorted(roots.by_kind("inside"),
                    key=lambda r: (-abs(r.xi), np.angle(r.xi)))
    r_in = 0
    for root in inside:
        if root.jordan_vector is not None:
            u = root.vectors[:, 0]
            columns.append(FrameColumn("bloch", root.xi, u))
            columns.append(FrameColumn("jordan", root.xi,
                                       root.jordan_vector, u))
            r_in += 2
        else:
            for j in range(root.vectors.shape[1]):
                columns.append(FrameColumn("bloch", root.xi,
                                           root.vectors[:, j]))
            r_in += root.multiplicity
    n_orb = model.n_orb
    if r_in > n_orb:
        raise NumericalError(
            f"{r_in} decaying Bloch solutions at z={z:.6g}, k={k:.6g} "
            f"exceed the block size {n_orb}")
    diag = {"n_bloch": r_in, "n_compact": n_orb - r_in}
    if r_in < n_orb:
        compact, found = _compact_columns(model, z, k, n_orb - r_in,
                                          list(columns))
        columns.extend(compact)
        diag["kernel_dim"] = found
    return frame_from_columns(model, z, k, columns, diag)


# ---------------------------------------------------------------------------
# Casoratian
# ---------------------------------------------------------------------------

def casoratian(model: ModelSpec, k: float, phi, psi, n: int, n_start: int = 0):
    """C_n(phi, psi) = phi_n A^+ psi_{n+1} - phi_{n+1} A psi_n.

    phi is a window of row solutions (shape (W, N) for a single row or
    (W, p, N)), psi a window of column solutions ((W, N) or (W, N, q)),
    both holding site values for n_start..n_start+W-1. The result is
    constant in n exactly when phi solves the transposed recursion at
    the same z, which holds for phi = (solution at conj(z))^+.
    """
    a = model.hopping(k)
    ah = a.conj().T
    phi = np.asarray(phi, dtype=complex)
    psi = np.asarray(psi, dtype=complex)
    scalar = phi.ndim == 2 and psi.ndim == 2
    if phi.ndim == 2:
        phi = phi[:, None, :]
    if psi.ndim == 2:
        psi = psi[:, :, None]
    i = n - n_start
    if i < 0 or i + 1 >= phi.shape[0] or i + 1 >= psi.shape[0]:
        raise ValueError("casoratian window does not cover sites n, n+1")
    c = phi[i] @ ah @ psi[i + 1] - phi[i + 1] @ a @ psi[i]
    return complex(c[0, 0]) if scalar else c


# ---------------------------------------------------------------------------
# Edge boundary data, vanishing determinant, boundary matrix
# ---------------------------------------------------------------------------

def frame_boundary(edge: EdgeModelSpec, frame: Frame):
    """Boundary values (Psi0, Psi1) of a solution frame continued
    through the boundary zone with the edge potentials.

    For sites below the zone top the continuation runs the recursion
    backwards, which requires an invertible hopping block when the zone
    is nonempty.
    """
    n0 = edge.n0
    if n0 == 0:
        return frame.psi0, frame.psi1
    z, k = frame.z, frame.k
    a = edge.bulk.hopping(k)
    sv = np.linalg.svd(a, compute_uv=False)
    if sv[-1] < 1e-12 * max(sv[0], 1.0):
        raise CapabilityError(
            "continuation through a boundary zone needs an invertible "
            "hopping block; this model's A(k) is singular at this k")
    n_orb = edge.N
    vals = frame.values(n0 + 2)
    lo, hi = vals[n0], vals[n0 + 1]
    for site in range(n0, 0, -1):
        rhs = (edge.vsharp(site, k) - z * np.eye(n_orb)) @ lo + a.conj().T @ hi
        lo, hi = -np.linalg.solve(a, rhs), lo
    return lo, hi


def edge_boundary_frame(edge: EdgeModelSpec, z: complex, k: float):
    """Boundary values (Psi0, Psi1) of the decaying solutions continued
    through the boundary zone, plus the frame itself."""
    frame = decaying_frame(edge.bulk, z, k)
    psi0, psi1 = frame_boundary(edge, frame)
    return psi0, psi1, frame


def edge_vanishing(edge: EdgeModelSpec, z: complex, k: float) -> complex:
    """det of the site-0 boundary block of the edge solution frame.

    Zeros in a bulk spectral gap locate the point spectrum of the edge
    operator at momentum k: a vanishing determinant means some decaying
    solution satisfies the Dirichlet condition.
    """
    psi0, _, _ = edge_boundary_frame(edge, z, k)
    return complex(np.linalg.det(psi0))


def l_matrix(edge: EdgeModelSpec, z: complex, k: float) -> np.ndarray:
    """Boundary matrix L(z, k) = -A(k) Psi0 Psi1^{-1} in the frame
    normalized to the identity at site 1.

    A vanishing eigenvalue of L signals edge point spectrum, and the
    construction satisfies the reflection identity L(conj z)^+ = L(z);
    in particular L is Hermitian at real z in a gap.
    """
    psi0, psi1, _ = edge_boundary_frame(edge, z, k)
    sv = np.linalg.svd(psi1, compute_uv=False)
    if sv[-1] <= 1e-10 * max(sv[0], 1.0):
        raise NumericalError(
            f"frame is singular at site 1 for z={z:.6g}, k={k:.6g}; "
            "the normalized boundary matrix does not exist here")
    return -edge.bulk.hopping(k) @ psi0 @ np.linalg.inv(psi1)


def l_min_eigenvalue_slope(edge: EdgeModelSpec, z: float, k: float,
                           h: float = 1e-4):
    """(lambda_min_abs(z), d lambda/dz) for the eigenvalue of L(., k)
    of smallest modulus, by symmetric finite differences at real z."""
    def closest(zz):
        ev = np.linalg.eigvalsh(l_matrix(edge, zz, k))
        return float(ev[np.argmin(np.abs(ev))])

    lo, mid, hi = closest(z - h), closest(z), closest(z + h)
    return mid, (hi - lo) / (2.0 * h)


# ---------------------------------------------------------------------------
# Characteristic Laurent polynomial
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LaurentPoly:
    """P(xi, z) = sum_{d,j} coeffs[d + n_off, j] xi^d z^j with d in
    [-n_off, n_off]."""

    coeffs: np.ndarray
    n_off: int

    def __call__(self, xi: complex, z: complex) -> complex:
        d_max = self.n_off
        zpow = z ** np.arange(self.coeffs.shape[1])
        xipow = np.array([xi ** (d - d_max)
                          for d in range(self.coeffs.shape[0])])
        return complex(xipow @ self.coeffs @ zpow)

    def _scale(self) -> float:
        return float(np.max(np.abs(self.coeffs)))

    def xi_degree_range(self, tol: float = 1e-9):
        """(lowest, highest) xi power with a nonvanishing coefficient."""
        keep = np.max(np.abs(self.coeffs), axis=1) > tol * self._scale()
        idx = np.nonzero(keep)[0]
        return int(idx[0] - self.n_off), int(idx[-1] - self.n_off)

    def z_degree(self, tol: float = 1e-9) -> int:
        keep = np.max(np.abs(self.coeffs), axis=0) > tol * self._scale()
        return int(np.nonzero(keep)[0][-1])

    def xi_coefficients(self, z: complex) -> np.ndarray:
        """Coefficients c_d(z), d ascending from -n_off to n_off."""
        zpow = z ** np.arange(self.coeffs.shape[1])
        return self.coeffs @ zpow

    def xi_roots(self, z: complex) -> np.ndarray:
        """Nonzero roots xi of P(., z), via the companion matrix of the
        polynomial xi^n_off P(xi, z)."""
        c = self.xi_coefficients(z)
        mask = np.abs(c) > 1e-12 * max(np.max(np.abs(c)), 1e-300)
        idx = np.nonzero(mask)[0]
        if len(idx) == 0:
            return np.zeros(0, dtype=complex)
        trimmed = c[idx[0]:idx[-1] + 1]
        return np.roots(trimmed[::-1])


def bloch_poly(model: ModelSpec, k: float) -> LaurentPoly:
    """Characteristic Laurent polynomial P(xi, z) = det(H(xi, k) - z).

    Sampled on 4N+1 roots of unity (where H is Hermitian) and recovered
    by an inverse DFT; coefficients aliased beyond |d| = N must vanish,
    which is checked and makes the truncation exact.
    """
    acal, vcal = reduced_blocks(model, k)
    d = acal.shape[0]
    n_off = model.n_orb
    n_samp = 4 * n_off + 1
    sign = -1.0 if d % 2 else 1.0
    samples = np.empty((n_samp, d + 1), dtype=complex)
    for j in range(n_samp):
        xi = np.exp(2j * np.pi * j / n_samp)
        h = acal / xi + acal.conj().T * xi + vcal
        ev = np.linalg.eigvalsh(h)
        samples[j] = sign * np.poly(ev)[::-1]  # ascending powers of z
    degrees = np.arange(-2 * n_off, 2 * n_off + 1)
    phase = np.exp(-2j * np.pi * np.outer(degrees, np.arange(n_samp)) / n_samp)
    coeffs = phase @ samples / n_samp
    scale = np.max(np.abs(coeffs))
    alias = np.max(np.abs(coeffs[np.abs(degrees) > n_off])) if scale else 0.0
    if scale and alias > 1e-9 * scale:
        raise NumericalError(
            f"characteristic polynomial has xi powers beyond +-N "
            f"(relative size {alias / scale:.2e})")
    keep = np.abs(degrees) <= n_off
    return LaurentPoly(coeffs[keep], n_off)
