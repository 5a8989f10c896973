"""Solution and Bloch bundles on discrete grids, and their indices.

Both bundles live over a two-dimensional base with one loop axis (phi1:
a closed complex contour around the filled bands, or the momentum
kappa) and one family axis (phi2 = k).  Parallel transport around the
loop axis gives a family of unitaries T(k) whose spectral data carry
the topology: the winding of det T(k) over the k circle without
symmetry, and a sign extracted from the eigenphase crossings of T(k)
over the half circle [0, pi] when time reversal pairs the endpoints.

Transport uses polar-unitarized overlap matrices, so every quantity
derived from T(k) is unchanged by per-point unitary rotations of the
stored fiber bases.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import AssumptionError, ConfigError, NumericalError
from .index import (det_winding, endpoint_degenerate_index, fu_kane_index,
                    kramers_check, phase_family)
from .model import ModelSpec, bloch_hamiltonian
from .numutil import orthonormalize, standard_symplectic, thread_map, unitarize
from .transfer import decaying_frame

# smallest acceptable singular value of an adjacent-fiber overlap; below
# this the discrete transport no longer tracks the continuum bundle
OVERLAP_FLOOR = 0.1

# admissibility margin for the plaquette fluxes: |F_p| must stay clearly
# away from the branch cut at pi
_FLUX_MARGIN = 0.95 * np.pi

# the plaquette sum and the det T winding measure the same Chern number
# with opposite orientation in our loop/family axis ordering
_PLAQ_TO_DET = -1

# global orientation of reported Chern numbers, fixed so that the lower
# band of haldane(t=1, tp=0.1) carries index +1, matching the sign of
# its edge-state count; the kappa loop and the contour loop induce
# opposite raw orientations, hence the two constants
_CHERN_SIGN_BLOCH = -1
_CHERN_SIGN_SOLUTION = 1


@dataclass(frozen=True, eq=False)
class BundleGrid:
    """Discretized rank-f subbundle of a trivial ambient bundle.

    fibers[i, j] is an orthonormal (ambient x f) basis of the fiber over
    (phi1[i], phi2[j]); both axes are periodic.  gamma holds the contour
    points in the complex energy plane for solution bundles and is None
    for Bloch bundles.  theta is the unitary part of the ambient
    antiunitary symmetry (the symmetry acts as v -> theta @ conj(v)),
    or None when the model has none.
    """

    phi1: np.ndarray
    phi2: np.ndarray
    fibers: np.ndarray
    theta: np.ndarray | None = None
    gamma: np.ndarray | None = None

    @property
    def fiber_dim(self) -> int:
        return self.fibers.shape[3]

    @property
    def ambient_dim(self) -> int:
        return self.fibers.shape[2]

    @property
    def has_trs(self) -> bool:
        return self.theta is not None

    def trs_partner(self, i: int, j: int):
        """Grid indices of the time-reversal image of point (i, j).

        Both constructors discretize so that the involution (conj z, -k)
        resp. (-kappa, -k) is realized by index reflection.
        """
        n1, n2 = self.fibers.shape[:2]
        return (n1 - i) % n1, (n2 - j) % n2


def _rectangle_contour(re_lo: float, re_hi: float, im_half: float, n: int):
    """Counterclockwise rectangle with corners re_lo/re_hi +- i*im_half,
    discretized by n points closed under complex conjugation.

    Point 0 is the midpoint of the right edge (on the real axis) and
    point n/2 the midpoint of the left edge, so conj(gamma[i]) equals
    gamma[(n - i) % n] exactly.
    """
    if n < 8:
        raise ConfigError("contour needs at least 8 points")
    if n % 2:
        raise ConfigError("n_contour must be even")
    if not (re_lo < re_hi and im_half > 0):
        raise ConfigError("degenerate contour box")
    m = n // 2
    width = re_hi - re_lo
    half_len = width + 2.0 * im_half
    pts = np.empty(m + 1, dtype=complex)
    for i in range(m + 1):
        s = half_len * i / m
        if s <= im_half:
            pts[i] = re_hi + 1j * s
        elif s <= im_half + width:
            pts[i] = re_hi - (s - im_half) + 1j * im_half
        else:
            pts[i] = re_lo + 1j * (half_len - s)
    gamma = np.concatenate([pts, np.conj(pts[m - 1:0:-1])])
    gamma[0] = complex(re_hi)
    gamma[m] = complex(re_lo)
    return gamma


def _sampled_spectrum(model: ModelSpec, n_kappa: int = 48, n_k: int = 48):
    """Band energies on a sampling grid, shape (n_points, n_bands)."""
    kappas = np.linspace(0.0, 2.0 * np.pi, n_kappa, endpoint=False)
    ks = np.linspace(0.0, 2.0 * np.pi, n_k, endpoint=False)
    return np.array([np.linalg.eigvalsh(bloch_hamiltonian(model, kappa, k))
                     for kappa in kappas for k in ks])


def solution_bundle(model: ModelSpec, edge=None, mu: float = 0.0,
                    n_contour: int = 256, n_k: int = 64,
                    contour_box=None) -> BundleGrid:
    """Bundle of decaying-solution boundary data over contour x k-circle.

    The fiber over (z, k) is the space of square-summable solutions of
    the half-infinite difference equation at spectral parameter z,
    encoded by its boundary data (psi_0, psi_1) in C^{2N}.  The contour
    is a reflection-symmetric rectangle around the spectrum below mu
    (or the explicit contour_box = (re_lo, re_hi, im_half)).

    The edge argument is accepted for interface symmetry with the
    half-line counters; the fibers depend only on the bulk model.
    """
    del edge
    samples = _sampled_spectrum(model)
    energies = samples.ravel()
    if contour_box is None:
        counts = np.sum(samples < mu, axis=1)
        if counts.min() != counts.max():
            raise AssumptionError(
                "no spectral gap at mu=%g: the filled-band count varies "
                "over the Brillouin zone" % mu)
        below = energies[energies < mu]
        above = energies[energies > mu]
        if below.size == 0:
            raise AssumptionError("no spectrum below mu=%g" % mu)
        eb = float(below.max())
        gap_lo = mu - eb
        if above.size:
            ea = float(above.min())
            gap_hi = ea - mu
            im_half = 0.5 * (ea - eb)
        else:
            gap_hi = np.inf
            im_half = gap_lo
        if min(gap_lo, gap_hi) < 1e-6:
            raise AssumptionError(
                "no spectral gap at mu=%g (distance to bands %.3g)"
                % (mu, min(gap_lo, gap_hi)))
        contour_box = (float(energies.min()) - im_half, mu, im_half)
    gamma = _rectangle_contour(contour_box[0], contour_box[1],
                               contour_box[2], n_contour)
    dist = np.abs(gamma[:, None] - energies[None, :]).min()
    if dist < 1e-3:
        raise AssumptionError(
            "contour passes within %.2g of the sampled spectrum" % dist)

    k_grid = np.linspace(0.0, 2.0 * np.pi, n_k, endpoint=False)
    points = [(i, j) for i in range(n_contour) for j in range(n_k)]

    def fiber(ij):
        i, j = ij
        fr = decaying_frame(model, complex(gamma[i]), float(k_grid[j]))
        return orthonormalize(np.vstack([fr.psi0, fr.psi1]))

    mats = thread_map(fiber, points)
    dims = {m.shape[1] for m in mats}
    if len(dims) != 1:
        raise AssumptionError(
            "fiber dimension varies over the grid: %s" % sorted(dims))
    fibers = np.empty((n_contour, n_k, 2 * model.n_orb, dims.pop()),
                      dtype=complex)
    for (i, j), q in zip(points, mats):
        fibers[i, j] = q
    theta = None
    if model.theta is not None:
        theta = np.kron(np.eye(2), model.theta)
    phi1 = np.linspace(0.0, 2.0 * np.pi, n_contour, endpoint=False)
    return BundleGrid(phi1=phi1, phi2=k_grid, fibers=fibers, theta=theta,
                      gamma=gamma)


def bloch_bundle(model: ModelSpec, bands, n_kappa: int = 64,
                 n_k: int = 64) -> BundleGrid:
    """Bundle spanned by selected Bloch eigenvectors over the torus.

    bands is a contiguous, 0-based range of band indices (by energy
    order); the selection must stay separated from the rest of the
    spectrum everywhere on the grid.  Within the selection degeneracies
    are harmless: only the span enters.
    """
    bands = tuple(sorted(set(int(b) for b in bands)))
    n = model.n_orb
    if not bands or bands[0] < 0 or bands[-1] >= n:
        raise ConfigError("band indices must lie in 0..%d" % (n - 1))
    if bands != tuple(range(bands[0], bands[-1] + 1)):
        raise ConfigError("band selection must be contiguous")
    kappas = np.linspace(0.0, 2.0 * np.pi, n_kappa, endpoint=False)
    ks = np.linspace(0.0, 2.0 * np.pi, n_k, endpoint=False)
    points = [(i, j) for i in range(n_kappa) for j in range(n_k)]

    def solve(ij):
        i, j = ij
        return np.linalg.eigh(bloch_hamiltonian(model, kappas[i], ks[j]))

    sols = thread_map(solve, points)
    lo, hi = bands[0], bands[-1]
    worst = (np.inf, 0.0, 0.0)
    fibers = np.empty((n_kappa, n_k, n, len(bands)), dtype=complex)
    for (i, j), (ev, vec) in zip(points, sols):
        sep = np.inf
        if lo > 0:
            sep = min(sep, float(ev[lo] - ev[lo - 1]))
        if hi < n - 1:
            sep = min(sep, float(ev[hi + 1] - ev[hi]))
        if sep < worst[0]:
            worst = (sep, float(kappas[i]), float(ks[j]))
        fibers[i, j] = vec[:, lo:hi + 1]
    if worst[0] < 1e-6:
        raise AssumptionError(
            "selected bands not separated: gap %.3g at kappa=%.4f, k=%.4f"
            % worst)
    return BundleGrid(phi1=kappas, phi2=ks, fibers=fibers,
                      theta=model.theta, gamma=None)


def rotate_fibers(bundle: BundleGrid, rng) -> BundleGrid:
    """Random unitary change of basis in every fiber (a gauge change)."""
    rng = np.random.default_rng(rng)
    n1, n2, _, f = bundle.fibers.shape
    new = np.empty_like(bundle.fibers)
    for i in range(n1):
        for j in range(n2):
            g = rng.standard_normal((f, f)) + 1j * rng.standard_normal((f, f))
            q, r = np.linalg.qr(g)
            q = q * np.sign(np.diag(r) + (np.diag(r) == 0))
            new[i, j] = bundle.fibers[i, j] @ q
    return replace(bundle, fibers=new)


def holonomy(bundle: BundleGrid, loop_direction: int = 0) -> np.ndarray:
    """Transport unitaries around the loop axis, one per point of the
    other axis.

    Each link is the polar-unitary part of the overlap of neighbouring
    fiber bases; the loop closes through the periodic wrap.  Returns an
    array of shape (n_other, f, f).  Eigenphases of the result are
    independent of the per-point basis choice.
    """
    fib = bundle.fibers if loop_direction == 0 else \
        np.swapaxes(bundle.fibers, 0, 1)
    n1, n2, _, f = fib.shape

    def loop(j):
        qs = fib[:, j]
        t = np.eye(f, dtype=complex)
        worst = np.inf
        for i in range(n1):
            ov = qs[(i + 1) % n1].conj().T @ qs[i]
            sv = np.linalg.svd(ov, compute_uv=False)
            worst = min(worst, float(sv[-1]))
            t = unitarize(ov) @ t
        if worst <= OVERLAP_FLOOR:
            raise NumericalError(
                "fiber overlap nearly singular (min singular value %.3g); "
                "refine the grid" % worst)
        return t

    return np.array(thread_map(loop, list(range(n2))))


def min_link_singular_value(bundle: BundleGrid) -> float:
    """Smallest singular value over all nearest-neighbour overlaps."""
    fib = bundle.fibers
    n1, n2 = fib.shape[:2]
    worst = np.inf
    for i in range(n1):
        for j in range(n2):
            for q in (fib[(i + 1) % n1, j], fib[i, (j + 1) % n2]):
                sv = np.linalg.svd(q.conj().T @ fib[i, j],
                                   compute_uv=False)
                worst = min(worst, float(sv[-1]))
    return worst


def _link_det_phases(bundle: BundleGrid):
    """Phases of det(overlap) along both grid directions, with wraps."""
    fib = bundle.fibers
    n1, n2 = fib.shape[:2]
    d1 = np.empty((n1, n2))
    d2 = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            q = fib[i, j]
            det1 = np.linalg.det(fib[(i + 1) % n1, j].conj().T @ q)
            det2 = np.linalg.det(fib[i, (j + 1) % n2].conj().T @ q)
            if min(abs(det1), abs(det2)) < 1e-12:
                raise NumericalError(
                    "singular link overlap at grid point (%d, %d); "
                    "refine the grid" % (i, j))
            d1[i, j] = np.angle(det1)
            d2[i, j] = np.angle(det2)
    return d1, d2


def chern_index(bundle: BundleGrid) -> int:
    """First Chern number of the bundle over its torus base.

    Computed as the winding of det T(phi2) around the family circle and
    cross-checked against the plaquette sum of link-phase fluxes; the
    two discretizations must agree exactly, otherwise the grid is too
    coarse to trust either.
    """
    mats = holonomy(bundle)
    closed = np.concatenate([mats, mats[:1]], axis=0)
    w_det = det_winding(closed, closed=True)

    d1, d2 = _link_det_phases(bundle)
    flux = (d1 + np.roll(d2, -1, axis=0) - np.roll(d1, -1, axis=1) - d2)
    flux = (flux + np.pi) % (2.0 * np.pi) - np.pi
    if np.max(np.abs(flux)) >= _FLUX_MARGIN:
        raise NumericalError(
            "plaquette flux %.3f too close to pi; refine the grid"
            % np.max(np.abs(flux)))
    total = flux.sum() / (2.0 * np.pi)
    c_plaq = int(round(total))
    if abs(total - c_plaq) > 1e-6:
        raise NumericalError(
            "plaquette fluxes do not sum to an integer (%.3g)" % total)
    if w_det != _PLAQ_TO_DET * c_plaq:
        raise NumericalError(
            "holonomy winding and plaquette sum disagree (%d vs %d); "
            "refine the grid" % (w_det, c_plaq))
    sign = _CHERN_SIGN_SOLUTION if bundle.gamma is not None \
        else _CHERN_SIGN_BLOCH
    return sign * w_det


def _kramers_frame(q: np.ndarray, theta: np.ndarray) -> np.ndarray:
    """Basis change g such that the columns of q @ g come in pairs
    (v, theta conj v), i.e. the antiunitary symmetry acts on coordinates
    as the standard symplectic form times conjugation.

    Requires the span of q to be invariant under the symmetry, which
    holds at time-reversal invariant base points.
    """
    amb, f = q.shape
    if f % 2:
        raise AssumptionError("odd fiber dimension cannot carry a "
                              "Kramers pairing")
    image = theta @ np.conj(q)
    defect = np.linalg.norm(image - q @ (q.conj().T @ image), 2)
    if defect > 1e-6:
        raise AssumptionError(
            "fiber is not invariant under time reversal (defect %.2g)"
            % defect)
    cols = []
    for cand in range(f):
        if len(cols) == f:
            break
        v = q[:, cand].copy()
        for c in cols:
            v -= c * (c.conj() @ v)
        nv = np.linalg.norm(v)
        if nv < 0.3:
            continue
        v /= nv
        w = theta @ np.conj(v)
        for c in cols:
            w -= c * (c.conj() @ w)
        w -= v * (v.conj() @ w)
        nw = np.linalg.norm(w)
        if nw < 0.5:
            raise NumericalError("Kramers partner collapsed during "
                                 "orthogonalization")
        cols.extend([v, w / nw])
    if len(cols) != f:
        raise NumericalError("could not complete a Kramers-paired basis")
    b = np.column_stack(cols)
    g = q.conj().T @ b
    eps = standard_symplectic(f)
    struct = b.conj().T @ theta @ np.conj(b)
    if np.linalg.norm(struct - eps, 2) > 1e-6:
        raise AssumptionError(
            "time-reversal structure deviates from the symplectic normal "
            "form by %.2g" % np.linalg.norm(struct - eps, 2))
    return g


def z2_index(bundle: BundleGrid, method: str = "eigenphase") -> int:
    """Kramers index (+1 or -1) of a time-reversal invariant bundle.

    The holonomy family T(k) is restricted to k in [0, pi]; at the two
    invariant momenta it has the Kramers property in a paired fiber
    basis, so its eigenphases are evenly degenerate there.  The
    eigenphase method counts crossings of a reference line; the fu_kane
    method follows a branch of sqrt(det) between the endpoint Pfaffians.
    Both are unchanged under per-point gauge rotations and under the
    choice of paired bases.
    """
    if not bundle.has_trs:
        raise ConfigError("bundle carries no time-reversal structure")
    if bundle.fiber_dim % 2:
        raise AssumptionError("odd fiber dimension has no Kramers index")
    if abs(bundle.phi2[0]) > 1e-12:
        raise ConfigError("the k grid must start at 0")
    hits = np.nonzero(np.abs(bundle.phi2 - np.pi) < 1e-9)[0]
    if hits.size != 1:
        raise ConfigError("the k grid must contain pi (use an even n_k)")
    j_pi = int(hits[0])

    mats = holonomy(bundle)[:j_pi + 1]
    g0 = _kramers_frame(bundle.fibers[0, 0], bundle.theta)
    gp = _kramers_frame(bundle.fibers[0, j_pi], bundle.theta)
    t0 = g0.conj().T @ mats[0] @ g0
    tp = gp.conj().T @ mats[-1] @ gp
    for t, kval in ((t0, 0.0), (tp, np.pi)):
        ok, viol = kramers_check(t, tol=1e-6)
        if not ok:
            raise AssumptionError(
                "holonomy at k=%g violates the Kramers property (%.2g)"
                % (kval, viol))

    if method == "eigenphase":
        fam = phase_family(list(mats), x_grid=bundle.phi2[:j_pi + 1])
        return endpoint_degenerate_index(fam)
    if method == "fu_kane":
        eps = standard_symplectic(bundle.fiber_dim)
        w = [m @ eps for m in mats]
        w[0] = t0 @ eps
        w[-1] = tp @ eps
        return fu_kane_index(np.array(w))
    raise ConfigError("unknown method %r" % method)


def bulk_index_ti(model: ModelSpec, edge=None, mu: float = 0.0,
                  n_contour: int = 64, n_k: int = 32,
                  max_refine: int = 4) -> int:
    """Kramers index of the decaying-solution bundle at Fermi level mu.

    The grid is doubled until two consecutive refinement levels agree.
    """
    prev = None
    for level in range(max_refine + 1):
        scale = 2 ** level
        b = solution_bundle(model, edge, mu, n_contour * scale, n_k * scale)
        val = z2_index(b)
        if prev is not None and val == prev:
            return val
        prev = val
    raise NumericalError("index did not stabilize under grid refinement")


def bulk_index_qh(model: ModelSpec, edge=None, mu: float = 0.0,
                  n_contour: int = 64, n_k: int = 32,
                  max_refine: int = 4) -> int:
    """Chern number of the decaying-solution bundle at Fermi level mu."""
    prev = None
    for level in range(max_refine + 1):
        scale = 2 ** level
        b = solution_bundle(model, edge, mu, n_contour * scale, n_k * scale)
        val = chern_index(b)
        if prev is not None and val == prev:
            return val
        prev = val
    raise NumericalError("index did not stabilize under grid refinement")
