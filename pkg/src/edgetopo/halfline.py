"""Finite ribbons as a stand-in for the half-line edge operator.

The half-infinite lattice is truncated to L unit cells with Dirichlet
walls on both sides.  Eigenvalues inside a spectral-gap window are then
discrete edge states up to finite-size artifacts: states living at the
far wall, and symmetric/antisymmetric mixtures of the two walls when
their splitting is below the diagonalizer's resolution.  Both are dealt
with here, by localization weights and by rotating near-degenerate
clusters, so that crossing counts refer to the wall at n = 1 only.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, linear_sum_assignment

from .errors import AssumptionError, ConfigError
from .model import EdgeModelSpec, ModelSpec, bulk_energies, edge_model
from .numutil import thread_map

__all__ = [
    "Branch",
    "EdgeSpectrum",
    "count_crossings_qh",
    "count_crossings_ti",
    "edge_spectrum",
    "truncate",
]

TRACK_GATE = 0.08        # largest |delta eps| joined into one branch
WEIGHT_CELLS = 10        # cells at the wall defining the localization weight
WEIGHT_THRESHOLD = 0.5   # below this (at every k) a branch is an artifact
CLUSTER_TOL = 2e-3       # eigenvalue gap below which states are rotated
SLOPE_TOL = 1e-4         # |eps'(k*)| at a crossing must exceed this
_OVERLAP_TIEBREAK = 0.05


def _as_edge(m) -> EdgeModelSpec:
    if isinstance(m, EdgeModelSpec):
        return m
    if isinstance(m, ModelSpec):
        return edge_model(m)
    raise ConfigError("expected a ModelSpec or EdgeModelSpec")


def truncate(edge, n_cells: int, k: float) -> np.ndarray:
    """Ribbon Hamiltonian on sites 1..n_cells*M with Dirichlet walls.

    Block tridiagonal: site n couples to n-1 through A(k), to n+1
    through A(k)*, and carries the edge potential of site n (boundary
    zone included).  Hermitian by construction.
    """
    edge = _as_edge(edge)
    model = edge.bulk
    n_sites = n_cells * model.period
    if n_sites < max(20, edge.n0 + 10):
        raise ConfigError(
            "truncation too short: %d sites (need at least %d)"
            % (n_sites, max(20, edge.n0 + 10))
        )
    n_orb = model.n_orb
    a = model.hopping(k)
    ah = a.conj().T
    h = np.zeros((n_sites * n_orb, n_sites * n_orb), dtype=complex)
    for s in range(1, n_sites + 1):
        i = (s - 1) * n_orb
        h[i : i + n_orb, i : i + n_orb] = edge.vsharp(s, k)
        if s < n_sites:
            h[i + n_orb : i + 2 * n_orb, i : i + n_orb] = a
            h[i : i + n_orb, i + n_orb : i + 2 * n_orb] = ah
    return h


@dataclass(frozen=True)
class Branch:
    """One tracked eigenvalue curve of the ribbon.

    start indexes the first grid point the branch appears on; energies
    and weights run over consecutive grid points from there.
    """

    start: int
    energies: np.ndarray
    weights: np.ndarray

    @property
    def stop(self) -> int:
        """One past the last grid index."""
        return self.start + len(self.energies)

    @property
    def is_edge(self) -> bool:
        """True when the branch ever localizes at the near wall."""
        return bool(np.max(self.weights) >= WEIGHT_THRESHOLD)

    def k_values(self, k_grid: np.ndarray) -> np.ndarray:
        return k_grid[self.start : self.stop]


@dataclass(frozen=True)
class EdgeSpectrum:
    """Window spectrum of a truncated edge model over a momentum grid."""

    k_grid: np.ndarray
    branches: tuple
    window: tuple
    n_cells: int
    weight_cells: int
    edge: EdgeModelSpec
    band_overlap_ks: tuple = ()


def _window_states(edge, n_cells, k, window, weight_cells):
    """Eigenpairs of the ribbon inside the window, with near-degenerate
    clusters rotated to extremize the near-wall weight."""
    model = edge.bulk
    n_orb = model.n_orb
    wall = weight_cells * model.period * n_orb
    ev, vec = np.linalg.eigh(truncate(edge, n_cells, k))
    sel = np.nonzero((ev > window[0]) & (ev < window[1]))[0]
    if len(sel) == 0:
        return np.empty(0), np.empty(0), np.empty((vec.shape[0], 0))

    energies = ev[sel].copy()
    vectors = vec[:, sel].copy()
    # group selected states into clusters of near-equal energy
    clusters = [[0]]
    for j in range(1, len(sel)):
        if energies[j] - energies[clusters[-1][-1]] < CLUSTER_TOL:
            clusters[-1].append(j)
        else:
            clusters.append([j])
    for cl in clusters:
        if len(cl) < 2:
            continue
        vc = vectors[:, cl]
        g = vc[:wall].conj().T @ vc[:wall]
        gval, gvec = np.linalg.eigh(g)
        vectors[:, cl] = vc @ gvec
        energies[cl] = np.real(
            np.diag(gvec.conj().T @ np.diag(energies[cl]) @ gvec)
        )
    weights = np.sum(np.abs(vectors[:wall]) ** 2, axis=0).real
    order = np.argsort(energies)
    return energies[order], weights[order], vectors[:, order]


def _check_window_in_gap(model, k_grid, window):
    """Momenta where the window touches the bulk bands.

    Semimetals (zigzag graphene) have isolated momenta where the bands
    reach into any window around the touching energy; those are tolerated
    and reported, since extended states get filtered by localization
    weight anyway.  A window overlapping the bands on most of the circle
    is a configuration error and raises.
    """
    k_sub = k_grid[:: max(1, len(k_grid) // 48)]
    kappas = np.linspace(0.0, 2.0 * np.pi, 48, endpoint=False)
    overlap = []
    for k in k_sub:
        for kappa in kappas:
            ev = bulk_energies(model, kappa, k)
            if np.any((ev > window[0]) & (ev < window[1])):
                overlap.append(float(k))
                break
    if len(overlap) > len(k_sub) // 2:
        raise AssumptionError(
            "window (%g, %g) lies inside the bulk bands" % window
        )
    return tuple(overlap)


def edge_spectrum(edge, k_grid, n_cells: int, window,
                  weight_cells: int = WEIGHT_CELLS) -> EdgeSpectrum:
    """Track window eigenvalues of the truncated edge model over k.

    Parameters
    ----------
    edge : EdgeModelSpec or ModelSpec
        Model; a bare ModelSpec gets a plain Dirichlet edge.
    k_grid : array_like
        Ordered momenta.
    n_cells : int
        Ribbon length in unit cells.
    window : (float, float)
        Open energy interval, must avoid the bulk bands at every k.
    weight_cells : int
        Cells at the near wall defining the localization weight.

    Returns
    -------
    EdgeSpectrum
        Branches matched across adjacent momenta by energy proximity
        with an eigenvector-overlap tie-break, each carrying per-point
        localization weights.

    Raises
    ------
    AssumptionError
        If the window touches the bulk spectrum.
    """
    edge = _as_edge(edge)
    k_grid = np.asarray(k_grid, dtype=float)
    lo, hi = float(window[0]), float(window[1])
    if not lo < hi:
        raise ConfigError("window must be an interval (lo, hi)")
    band_overlap = _check_window_in_gap(edge.bulk, k_grid, (lo, hi))

    states = thread_map(
        lambda k: _window_states(edge, n_cells, k, (lo, hi), weight_cells),
        list(k_grid),
    )

    finished = []
    active = []  # [start, [energies], [weights], last_vector]
    for j, (es, ws, vs) in enumerate(states):
        if j == 0 or not active:
            matched_new = set()
        else:
            n_old, n_new = len(active), len(es)
            matched_new = set()
            if n_new:
                last_e = np.array([b[1][-1] for b in active])
                cost = np.abs(last_e[:, None] - es[None, :])
                last_v = np.column_stack([b[3] for b in active])
                overlap = np.abs(last_v.conj().T @ vs)
                cost = cost + _OVERLAP_TIEBREAK * (1.0 - overlap)
                cost[np.abs(last_e[:, None] - es[None, :]) > TRACK_GATE] = 1e6
                rows, cols = linear_sum_assignment(cost)
                keep = []
                for r, c in zip(rows, cols):
                    if cost[r, c] < 1e6:
                        active[r][1].append(es[c])
                        active[r][2].append(ws[c])
                        active[r][3] = vs[:, c]
                        matched_new.add(c)
                        keep.append(r)
                still = []
                for r, b in enumerate(active):
                    if r in keep:
                        still.append(b)
                    else:
                        finished.append(b)
                active = still
            else:
                finished.extend(active)
                active = []
        for c in range(len(es)):
            if c not in matched_new:
                active.append([j, [es[c]], [ws[c]], vs[:, c]])
    finished.extend(active)

    branches = tuple(
        Branch(start=b[0], energies=np.array(b[1]), weights=np.array(b[2]))
        for b in finished
    )
    return EdgeSpectrum(
        k_grid=k_grid,
        branches=branches,
        window=(lo, hi),
        n_cells=n_cells,
        weight_cells=weight_cells,
        edge=edge,
        band_overlap_ks=band_overlap,
    )


def _nearest_eigenvalue(edge, n_cells, k, e_pred):
    ev = np.linalg.eigvalsh(truncate(edge, n_cells, k))
    return float(ev[np.argmin(np.abs(ev - e_pred))])


def _refine_crossing(spec, k_a, k_b, e_a, e_b, mu):
    """Bisect the branch crossing of mu inside [k_a, k_b] and return
    (k*, slope).  Raises when the crossing is tangential."""
    if spec.edge is None:
        raise ConfigError("spectrum carries no edge model for refinement")

    def g(k):
        t = (k - k_a) / (k_b - k_a)
        pred = (1.0 - t) * e_a + t * e_b
        return _nearest_eigenvalue(spec.edge, spec.n_cells, k, pred) - mu

    g_a, g_b = g(k_a), g(k_b)
    if g_a * g_b >= 0.0:
        # the grid-level sign change was roundoff noise: the branch runs
        # along mu instead of through it
        raise AssumptionError(
            "tangential crossing near k=%.6f; adjust mu" % (0.5 * (k_a + k_b))
        )
    k_star = brentq(g, k_a, k_b, xtol=1e-8)
    h = max(1e-5, 1e-6 * abs(k_b - k_a))
    slope = (g(k_star + h) - g(k_star - h)) / (2.0 * h)
    if abs(slope) <= SLOPE_TOL:
        raise AssumptionError(
            "tangential crossing at k=%.6f; adjust mu" % k_star
        )
    return k_star, slope


def _interior_crossings(spec, branch, mu, k_min, k_max, skip_first, skip_last):
    """Refined crossings of mu by one branch, restricted to grid intervals
    inside [k_min, k_max].  skip_first/skip_last drop the interval touching
    the respective end (used when an endpoint hit was already counted)."""
    ks = branch.k_values(spec.k_grid)
    es = branch.energies
    inside = np.nonzero((ks >= k_min - 1e-12) & (ks <= k_max + 1e-12))[0]
    out = []
    for a, b in zip(inside[:-1], inside[1:]):
        if b != a + 1:
            continue
        if skip_first and ks[a] <= k_min + 1e-12:
            continue
        if skip_last and ks[b] >= k_max - 1e-12:
            continue
        fa, fb = es[a] - mu, es[b] - mu
        if fa == 0.0 or fb == 0.0 or np.sign(fa) == np.sign(fb):
            continue
        out.append(_refine_crossing(spec, ks[a], ks[b], es[a], es[b], mu))
    return out


def _endpoint_hits(spec, branch, mu, k_end, tol):
    ks = branch.k_values(spec.k_grid)
    hit = np.abs(ks - k_end) < 1e-9
    if not np.any(hit):
        return 0
    return int(np.abs(branch.energies[np.argmax(hit)] - mu) < tol)


def count_crossings_ti(spec: EdgeSpectrum, mu: float,
                       endpoint_tol: float = 1e-5):
    """Crossing count n and sign index for a time-reversal invariant model.

    Transversal crossings of mu by wall-localized branches are counted at
    weight 1 for k strictly inside (0, pi) and at weight 1/2 at k = 0 and
    k = pi (where Kramers degeneracy makes them come in pairs).  Returns
    (n, (-1)**n).

    Raises
    ------
    AssumptionError
        Tangential crossing (adjust mu), or an odd number of endpoint
        hits (grid too coarse to resolve the Kramers pair).
    """
    n_interior = 0
    n_end = 0
    for branch in spec.branches:
        if not branch.is_edge:
            continue
        hit0 = _endpoint_hits(spec, branch, mu, 0.0, endpoint_tol)
        hit_pi = _endpoint_hits(spec, branch, mu, np.pi, endpoint_tol)
        n_end += hit0 + hit_pi
        crossings = _interior_crossings(
            spec, branch, mu, 0.0, np.pi,
            skip_first=bool(hit0), skip_last=bool(hit_pi),
        )
        n_interior += len(crossings)
    if n_end % 2:
        raise AssumptionError(
            "odd number of branch hits at k in {0, pi}; refine the grid "
            "or adjust mu"
        )
    n = n_interior + n_end // 2
    return n, (-1) ** (n % 2)


def count_crossings_qh(spec: EdgeSpectrum, mu: float) -> int:
    """Signed crossing count over the full circle.

    Each transversal crossing of mu by a wall-localized branch counts
    with the sign of the branch slope there (rising +1, falling -1).
    The seam between the last and first grid point is included for
    branches spanning the whole grid.
    """
    total = 0
    k_lo = float(spec.k_grid[0])
    k_hi = float(spec.k_grid[-1])
    for branch in spec.branches:
        if not branch.is_edge:
            continue
        for _, slope in _interior_crossings(
            spec, branch, mu, k_lo, k_hi, skip_first=False, skip_last=False
        ):
            total += 1 if slope > 0 else -1
        if branch.start == 0 and branch.stop == len(spec.k_grid):
            fa = branch.energies[-1] - mu
            fb = branch.energies[0] - mu
            if fa != 0.0 and fb != 0.0 and np.sign(fa) != np.sign(fb):
                period = 2.0 * np.pi
                _, slope = _refine_crossing(
                    spec, k_hi, k_lo + period,
                    branch.energies[-1], branch.energies[0], mu,
                )
                total += 1 if slope > 0 else -1
    return total
