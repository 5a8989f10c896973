"""Z2-type indices for families of invertible matrices.

A family T(x) of invertible matrices whose endpoints satisfy the Kramers
relation eps * conj(T) * eps^-1 = T^-1 carries a sign-valued index: the
eigenvalue phases pair up at the endpoints, and the parity of the number
of times the phase curves cross a generic reference angle is independent
of every choice made along the way.  This module provides the continuous
eigenphase labeling, the crossing-count index, determinant windings, a
Pfaffian, and the square-root-branch formulation of the same sign.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AssumptionError, NumericalError
from .numutil import accumulate_arg, circular_distance, standard_symplectic

__all__ = [
    "PhaseFamily",
    "det_winding",
    "endpoint_degenerate_index",
    "fu_kane_index",
    "kramers_check",
    "pfaffian",
    "phase_family",
    "random_kramers",
    "winding",
]

# Largest tolerated phase motion between adjacent grid points, both for
# eigenphase curves and for accumulated determinant arguments.  Families
# that move faster need a finer grid before any winding is trustworthy.
STEP_CONTRACT = 0.5 * np.pi

_OVERLAP_TIEBREAK = 1e-3


@dataclass(frozen=True)
class PhaseFamily:
    """Continuously labeled eigenvalue phases of a matrix family.

    Attributes
    ----------
    x_grid : ndarray, shape (n_points,)
        Ordered parameter values.
    curves : ndarray, shape (n_points, dim)
        Lifted angles theta_i(x_j); column i is one continuous curve and
        exp(i*theta) recovers the eigenvalue phase.
    """

    x_grid: np.ndarray
    curves: np.ndarray

    @property
    def n_curves(self) -> int:
        return self.curves.shape[1]

    def endpoint_phases(self, which: int) -> np.ndarray:
        """Phases at the first (which=0) or last (which=-1) grid point,
        reduced mod 2*pi into [0, 2*pi)."""
        return np.mod(self.curves[which], 2.0 * np.pi)


def phase_family(mats, x_grid=None) -> PhaseFamily:
    """Track eigenvalue phases of a matrix family continuously.

    Eigenvalues of adjacent family members are matched by a globally
    optimal assignment whose cost is the circular distance between
    phases, with a small eigenvector-overlap term to break ties between
    nearly degenerate phases.  Lifted angles accumulate along the match.

    Parameters
    ----------
    mats : sequence of ndarray
        Invertible matrices T(x_j), all of one dimension, ordered along
        the parameter grid.
    x_grid : array_like, optional
        Parameter values; defaults to a uniform grid on [0, 1].

    Returns
    -------
    PhaseFamily

    Raises
    ------
    NumericalError
        If some eigenvalue phase moves by pi/2 or more between adjacent
        grid points (the grid is too coarse for continuous labeling).
    """
    mats = [np.asarray(m, dtype=complex) for m in mats]
    if len(mats) < 2:
        raise ValueError("a phase family needs at least two grid points")
    dim = mats[0].shape[0]
    if x_grid is None:
        x_grid = np.linspace(0.0, 1.0, len(mats))
    x_grid = np.asarray(x_grid, dtype=float)
    if x_grid.shape != (len(mats),):
        raise ValueError("x_grid length must match the number of matrices")

    vals, vecs = np.linalg.eig(mats[0])
    if np.any(np.abs(vals) == 0):
        raise ValueError("matrix family must stay invertible")
    order = np.argsort(np.angle(vals))
    vals, vecs = vals[order], vecs[:, order]
    vecs /= np.linalg.norm(vecs, axis=0)

    curves = np.empty((len(mats), dim))
    curves[0] = np.angle(vals)
    prev_vals, prev_vecs = vals, vecs

    for j in range(1, len(mats)):
        new_vals, new_vecs = np.linalg.eig(mats[j])
        if np.any(np.abs(new_vals) == 0):
            raise ValueError("matrix family must stay invertible")
        new_vecs /= np.linalg.norm(new_vecs, axis=0)
        cost = circular_distance(
            np.angle(prev_vals)[:, None], np.angle(new_vals)[None, :]
        )
        overlap = np.abs(prev_vecs.conj().T @ new_vecs)
        cost = cost + _OVERLAP_TIEBREAK * (1.0 - overlap)
        rows, cols = linear_sum_assignment(cost)
        perm = np.empty(dim, dtype=int)
        perm[rows] = cols
        new_vals = new_vals[perm]
        new_vecs = new_vecs[:, perm]

        steps = np.angle(new_vals / prev_vals)
        worst = float(np.max(np.abs(steps)))
        if worst >= STEP_CONTRACT:
            raise NumericalError(
                "phase step %.3f rad between x=%.6g and x=%.6g exceeds the "
                "pi/2 contract; refine the grid" % (worst, x_grid[j - 1], x_grid[j])
            )
        curves[j] = curves[j - 1] + steps
        prev_vals, prev_vecs = new_vals, new_vecs

    return PhaseFamily(x_grid=x_grid, curves=curves)


def winding(fam: PhaseFamily) -> float:
    """Total phase increment of the family in units of 2*pi.

    Equals the winding number of the product of the phases when the
    endpoint tuples coincide; label choices drop out of the sum.
    """
    return float(np.sum(fam.curves[-1] - fam.curves[0]) / (2.0 * np.pi))


def _endpoint_clusters(phases: np.ndarray, tol: float):
    """Group endpoint phases mod 2*pi into clusters of near-equal values.

    Returns a list of cluster sizes.  The wrap-around pair (largest value,
    smallest value + 2*pi) is merged when within tolerance.
    """
    srt = np.sort(phases)
    n = len(srt)
    if n == 0:
        return []
    sizes = [1]
    for g in np.diff(srt):
        if g <= tol:
            sizes[-1] += 1
        else:
            sizes.append(1)
    if len(sizes) > 1 and (srt[0] + 2.0 * np.pi - srt[-1]) <= tol:
        sizes[0] += sizes.pop()
    return sizes


def endpoint_degenerate_index(
    fam: PhaseFamily,
    pair_tol: float = 1e-6,
    n_references: int = 3,
    max_draws: int = 10,
    rng=None,
) -> int:
    """Index of an endpoint degenerate phase family, +1 or -1.

    A reference angle avoiding all endpoint phases is drawn at random and
    the parity of the number of transversal crossings of that angle by
    the phase curves gives the index.  The count is repeated for several
    admissible references, which must agree.

    Parameters
    ----------
    fam : PhaseFamily
        Family whose endpoint phases each occur with even multiplicity.
    pair_tol : float
        Tolerance for the endpoint even-degeneracy check, radians.
    n_references : int
        Number of agreeing references required.
    max_draws : int
        Total reference draws attempted before giving up.
    rng : numpy Generator, optional

    Returns
    -------
    int
        +1 or -1.

    Raises
    ------
    AssumptionError
        If an endpoint phase multiset has a value of odd multiplicity.
    NumericalError
        If no admissible reference set is found, or references disagree.
    """
    if rng is None:
        rng = np.random.default_rng(7)
    for which in (0, -1):
        sizes = _endpoint_clusters(fam.endpoint_phases(which), pair_tol)
        if any(s % 2 for s in sizes):
            raise AssumptionError(
                "endpoint phases are not evenly degenerate (cluster sizes %s)"
                % (sizes,)
            )

    end_vals = np.concatenate([fam.curves[0], fam.curves[-1]])
    signs = []
    for _ in range(max_draws):
        ref = float(rng.uniform(0.0, 2.0 * np.pi))
        if np.min(circular_distance(end_vals, ref)) < 1e-3:
            continue
        # Crossing whenever the lifted curve passes ref + 2*pi*m; the
        # step contract keeps at most one passage per interval.
        shifted = (fam.curves - ref) / (2.0 * np.pi)
        if np.min(np.abs(shifted - np.round(shifted))) < 1e-9:
            continue
        n_cross = int(np.sum(np.abs(np.diff(np.floor(shifted), axis=0))))
        signs.append(-1 if n_cross % 2 else 1)
        if len(signs) == n_references:
            break
    if len(signs) < n_references:
        raise NumericalError(
            "no admissible reference phase found in %d draws" % max_draws
        )
    if len(set(signs)) != 1:
        raise NumericalError(
            "crossing parity disagrees between references; refine the grid"
        )
    return signs[0]


def det_winding(mats, closed: bool = True, match_tol: float = 1e-8):
    """Winding of det T(x) along a matrix family.

    With closed=True the first and last matrices must agree and the
    accumulated argument of the determinant is returned as an integer
    number of turns.  With closed=False the raw (real) number of turns
    is returned.
    """
    mats = [np.asarray(m, dtype=complex) for m in mats]
    dets = np.array([np.linalg.det(m) for m in mats])
    if np.any(np.abs(dets) == 0):
        raise AssumptionError("family passes through a singular matrix")
    args, max_jump = accumulate_arg(dets, max_step=STEP_CONTRACT)
    if max_jump >= STEP_CONTRACT:
        raise NumericalError(
            "determinant argument step %.3f rad exceeds the pi/2 contract; "
            "refine the grid" % max_jump
        )
    turns = (args[-1] - args[0]) / (2.0 * np.pi)
    if not closed:
        return float(turns)
    scale = np.linalg.norm(mats[0])
    if np.linalg.norm(mats[0] - mats[-1]) > match_tol * max(1.0, scale):
        raise AssumptionError("family is not closed: endpoints differ")
    if abs(turns - round(turns)) > 1e-6:
        raise NumericalError(
            "winding %.3e of a closed family is not an integer" % turns
        )
    return int(round(turns))


def kramers_check(t: np.ndarray, tol: float = 1e-8):
    """Test the Kramers relation eps * conj(T) * eps^-1 = T^-1.

    Returns (passed, violation) where violation is the relative deviation
    in operator norm.  Raises ValueError on odd dimension.
    """
    t = np.asarray(t, dtype=complex)
    eps = standard_symplectic(t.shape[0])
    t_inv = np.linalg.inv(t)
    dev = eps @ t.conj() @ eps.T - t_inv
    violation = float(
        np.linalg.norm(dev, 2) / max(np.linalg.norm(t_inv, 2), 1e-300)
    )
    return violation <= tol, violation


def _sigma_dual(s: np.ndarray, eps: np.ndarray) -> np.ndarray:
    # sigma(S) = Theta0^-1 S^-1 Theta0 as a plain matrix, Theta0 = eps*conj.
    return eps @ np.linalg.inv(s.conj()) @ eps.T


def random_kramers(dim: int, seed, unitary: bool = False) -> np.ndarray:
    """Pseudo-random matrix with the Kramers property.

    Draws an invertible S and returns T = S * sigma(S) with
    sigma(S) = Theta0^-1 S^-1 Theta0, which satisfies the Kramers
    relation for any S.  With unitary=True, S is drawn from the unitary
    group and T is unitary as well.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    eps = standard_symplectic(dim)
    s = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    if unitary:
        q, r = np.linalg.qr(s)
        s = q * np.sign(np.diag(r))
    return s @ _sigma_dual(s, eps)


def pfaffian(w: np.ndarray, skew_tol: float = 1e-10) -> complex:
    """Pfaffian of a skew-symmetric matrix by skew elimination.

    Parlett-Reid reduction with partial pivoting: the matrix is brought
    to skew tridiagonal form by congruence, each pivot contributing a
    factor and each row/column swap a sign.  Odd dimension returns 0.

    Parameters
    ----------
    w : ndarray
        Skew-symmetric matrix, W^T = -W within skew_tol relative to its
        norm.

    Returns
    -------
    complex
    """
    w = np.asarray(w, dtype=complex)
    if w.ndim != 2 or w.shape[0] != w.shape[1]:
        raise ValueError("pfaffian needs a square matrix")
    scale = np.linalg.norm(w)
    if np.linalg.norm(w + w.T) > skew_tol * max(1.0, scale):
        raise AssumptionError("matrix is not skew-symmetric")
    n = w.shape[0]
    if n % 2:
        return 0j
    a = w.copy()
    pf = 1.0 + 0j
    for k in range(0, n - 1, 2):
        pivot = k + 1 + int(np.argmax(np.abs(a[k + 1 :, k])))
        if np.abs(a[pivot, k]) == 0.0:
            return 0j
        if pivot != k + 1:
            a[[k + 1, pivot], k:] = a[[pivot, k + 1], k:]
            a[k:, [k + 1, pivot]] = a[k:, [pivot, k + 1]]
            pf = -pf
        pf *= a[k, k + 1]
        if k + 2 < n:
            tau = a[k, k + 2 :] / a[k, k + 1]
            col = a[k + 2 :, k + 1]
            a[k + 2 :, k + 2 :] += np.outer(tau, col) - np.outer(col, tau)
    return complex(pf)


def fu_kane_index(w_family, skew_tol: float = 1e-8) -> int:
    """Sign relating a continuous sqrt(det W) branch to the Pfaffians.

    For a family W(x) on [a, b] that is skew-symmetric at the endpoints,
    the branch of sqrt(det W(x)) starting at pf W(a) ends at +-pf W(b);
    the sign is the index.

    Raises
    ------
    AssumptionError
        Endpoint not skew-symmetric, or a determinant vanishes.
    NumericalError
        Determinant argument moves too fast for branch tracking, or the
        branch endpoint fails to match either Pfaffian sign.
    """
    mats = [np.asarray(m, dtype=complex) for m in w_family]
    for end in (0, -1):
        scale = np.linalg.norm(mats[end])
        if np.linalg.norm(mats[end] + mats[end].T) > skew_tol * max(1.0, scale):
            raise AssumptionError("endpoint matrix is not skew-symmetric")
    dets = np.array([np.linalg.det(m) for m in mats])
    if np.any(np.abs(dets) < 1e-280):
        raise AssumptionError("determinant vanishes along the family")

    branch = pfaffian(mats[0])
    ratios = dets[1:] / dets[:-1]
    if np.max(np.abs(np.angle(ratios))) >= STEP_CONTRACT:
        raise NumericalError(
            "determinant phase step exceeds the pi/2 contract; refine the grid"
        )
    branch = branch * np.prod(np.exp(0.5 * np.log(ratios)))

    pf_end = pfaffian(mats[-1])
    if abs(pf_end) < 1e-140:
        raise AssumptionError("endpoint Pfaffian vanishes")
    ratio = branch / pf_end
    if abs(ratio - 1.0) < 1e-6:
        return 1
    if abs(ratio + 1.0) < 1e-6:
        return -1
    raise NumericalError(
        "sqrt(det W) branch endpoint %.3e%+.3ej is not a Pfaffian sign"
        % (ratio.real, ratio.imag)
    )
