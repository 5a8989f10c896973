import numpy as np
import pytest
import scipy.linalg as sla

from edgetopo.errors import AssumptionError, NumericalError
from edgetopo.index import (PhaseFamily, det_winding, endpoint_degenerate_index,
                            fu_kane_index, kramers_check, pfaffian, phase_family,
                            random_kramers, winding)
from edgetopo.numutil import accumulate_arg, standard_symplectic

PHI_GRID = np.linspace(0.0, np.pi, 400)


def rho(m, eps):
    """The endpoint-compatibility map eps * conj(M) * eps^-1."""
    return eps @ np.conj(m) @ eps.T


def kramers_family(rng, dim, n_points):
    """Continuous family with Kramers endpoints: interpolates between two
    random Kramers matrices along a wiggled matrix-exponential path."""
    a = random_kramers(dim, rng)
    b = random_kramers(dim, rng)
    log_ab = sla.logm(np.linalg.solve(a, b))
    x = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    x *= 0.5
    us = np.linspace(0.0, 1.0, n_points)
    return [a @ sla.expm(u * log_ab + u * (1.0 - u) * x) for u in us]


def unitary_kramers_family(rng, dim, n_points):
    a = random_kramers(dim, rng, unitary=True)
    b = random_kramers(dim, rng, unitary=True)
    log_ab = sla.logm(a.conj().T @ b)
    x = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    x = 0.6 * (x - x.conj().T)
    us = np.linspace(0.0, 1.0, n_points)
    return [a @ sla.expm(u * log_ab + u * (1.0 - u) * x) for u in us]


def helical_family(n_points=60, rate=1.0):
    xs = np.linspace(0.0, np.pi, n_points)
    mats = [np.diag([np.exp(1j * rate * x), np.exp(-1j * rate * x)]) for x in xs]
    return mats, xs


def test_phase_family_helical_pair():
    mats, xs = helical_family()
    fam = phase_family(mats, xs)
    assert fam.curves.shape == (60, 2)
    srt = np.sort(fam.curves, axis=1)
    assert np.allclose(srt[:, 0], -xs, atol=1e-12)
    assert np.allclose(srt[:, 1], xs, atol=1e-12)
    assert abs(winding(fam)) < 1e-12


def test_phase_family_constant():
    t = np.diag([np.exp(0.4j), np.exp(-1.1j), np.exp(2.0j)])
    fam = phase_family([t] * 20)
    assert np.allclose(fam.curves, fam.curves[0], atol=1e-14)


def test_phase_family_relabeling_invariance():
    rng = np.random.default_rng(5)
    base = unitary_kramers_family(rng, 4, 120)
    fam = phase_family(base)
    # conjugating each member by its own random unitary keeps all
    # eigenvalues, so the phase multisets and total winding survive
    conj = []
    for m in base:
        g = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        q, _ = np.linalg.qr(g)
        conj.append(q @ m @ q.conj().T)
    fam2 = phase_family(conj)
    for j in range(0, 120, 7):
        a = np.sort(np.mod(fam.curves[j], 2 * np.pi))
        b = np.sort(np.mod(fam2.curves[j], 2 * np.pi))
        assert np.allclose(a, b, atol=1e-8)
    assert abs(winding(fam) - winding(fam2)) < 1e-8


def test_phase_family_step_contract():
    mats = [np.eye(2), np.diag([np.exp(2.0j), 1.0]), np.eye(2)]
    with pytest.raises(NumericalError, match="refine"):
        phase_family(mats)


def test_phase_family_rejects_singular():
    mats = [np.eye(2), np.diag([0.0, 1.0])]
    with pytest.raises(ValueError):
        phase_family(mats)


def test_winding_single_curve():
    xs = np.linspace(0.0, 2.0 * np.pi, 200)
    fam = phase_family([np.array([[np.exp(1j * x)]]) for x in xs], xs)
    assert abs(winding(fam) - 1.0) < 1e-12


def test_winding_closed_helical_zero():
    xs = np.linspace(0.0, 2.0 * np.pi, 300)
    mats = [np.diag([np.exp(1j * x), np.exp(-1j * x)]) for x in xs]
    assert abs(winding(phase_family(mats, xs))) < 1e-12


def test_winding_matches_product_curve():
    # the sum of the lifted phases is the argument of prod z_i, whatever
    # the labeling did
    rng = np.random.default_rng(11)
    mats = unitary_kramers_family(rng, 4, 250)
    fam = phase_family(mats)
    dets = np.array([np.linalg.det(m) for m in mats])
    args, _ = accumulate_arg(dets)
    direct = (args[-1] - args[0]) / (2.0 * np.pi)
    assert abs(winding(fam) - direct) < 1e-9


def test_endpoint_index_helical():
    mats, xs = helical_family(80)
    assert endpoint_degenerate_index(phase_family(mats, xs)) == -1


def test_endpoint_index_constant():
    t = np.diag([np.exp(0.7j)] * 2 + [np.exp(-0.9j)] * 2)
    fam = phase_family([t] * 30)
    assert endpoint_degenerate_index(fam) == 1


def test_endpoint_index_double_rate():
    mats, xs = helical_family(160, rate=2.0)
    assert endpoint_degenerate_index(phase_family(mats, xs)) == 1


def test_endpoint_degeneracy_violation():
    xs = np.linspace(0.0, np.pi, 40)
    mats = [np.diag([np.exp(1j * x), np.exp(0.5j * x)]) for x in xs]
    with pytest.raises(AssumptionError, match="degenerate"):
        endpoint_degenerate_index(phase_family(mats, xs))


def test_index_reference_independence():
    rng = np.random.default_rng(21)
    for seed in range(20):
        g = np.random.default_rng(seed)
        fam = phase_family(kramers_family(g, 4, 400), PHI_GRID)
        vals = {endpoint_degenerate_index(fam, rng=np.random.default_rng(r))
                for r in rng.integers(0, 2 ** 31, size=4)}
        assert len(vals) == 1


def test_concatenation_parity():
    # two admissible closures of the helical pair differ by an even
    # winding; the concatenated winding is odd either way
    xs = np.linspace(0.0, np.pi, 50)
    helix = np.column_stack([xs, -xs])
    up = np.column_stack([np.pi + xs, -np.pi + xs])
    down = np.column_stack([np.pi - xs, -np.pi - xs])
    w_open = winding(PhaseFamily(xs, helix))
    w_up = winding(PhaseFamily(xs, up))
    w_down = winding(PhaseFamily(xs, down))
    assert abs((w_up - w_down) - round(w_up - w_down)) < 1e-12
    assert int(round(w_up - w_down)) % 2 == 0
    for closure in (w_up, w_down):
        total = w_open + closure
        assert abs(total - round(total)) < 1e-12
        assert int(round(total)) % 2 == 1


def test_det_winding_examples():
    phis = np.linspace(0.0, 2.0 * np.pi, 250)
    fam1 = [np.diag([np.exp(1j * p), 1.0]) for p in phis]
    assert det_winding(fam1) == 1
    fam2 = [sla.block_diag(np.diag([np.exp(1j * p)]), np.diag([np.exp(2j * p)]))
            for p in phis]
    assert det_winding(fam2) == 3


def test_det_winding_similarity_invariant():
    rng = np.random.default_rng(3)
    m = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
    phis = np.linspace(0.0, 2.0 * np.pi, 250)
    fam = [m @ np.diag([np.exp(1j * p), np.exp(-2j * p)]) @ np.linalg.inv(m)
           for p in phis]
    assert det_winding(fam) == -1


def test_det_winding_requires_closure():
    phis = np.linspace(0.0, np.pi, 100)
    fam = [np.diag([np.exp(1j * p), 1.0]) for p in phis]
    with pytest.raises(AssumptionError, match="closed"):
        det_winding(fam)
    assert abs(det_winding(fam, closed=False) - 0.5) < 1e-9


def test_kramers_check_basic():
    ok, viol = kramers_check(np.eye(4))
    assert ok and viol < 1e-15
    rng = np.random.default_rng(9)
    for seed in range(30):
        t = random_kramers(4, np.random.default_rng(seed))
        ok, viol = kramers_check(t)
        assert ok and viol < 1e-9
    generic = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
    ok, viol = kramers_check(generic)
    assert not ok and viol > 1e-2


def test_kramers_check_odd_dimension():
    with pytest.raises(ValueError):
        kramers_check(np.eye(3))


def test_random_kramers_eigenvalue_pairing():
    for seed in range(100):
        dim = (2, 4, 6)[seed % 3]
        t = random_kramers(dim, seed)
        ev = np.linalg.eigvals(t)
        partners = 1.0 / np.conj(ev)
        gap = np.abs(ev[:, None] - partners[None, :]).min(axis=1).max()
        assert gap < 1e-9


def test_random_kramers_reproducible():
    a = random_kramers(4, 123)
    b = random_kramers(4, 123)
    assert np.array_equal(a, b)


def test_random_kramers_unitary():
    t = random_kramers(6, 4, unitary=True)
    assert np.allclose(t.conj().T @ t, np.eye(6), atol=1e-12)
    ok, _ = kramers_check(t)
    assert ok


def test_pfaffian_two_by_two():
    val = 3.2 + 0.7j
    w = np.array([[0.0, val], [-val, 0.0]])
    assert abs(pfaffian(w) - val) < 1e-14


def test_pfaffian_squares_to_det():
    for seed in range(40):
        rng = np.random.default_rng(seed)
        n = int(rng.choice([2, 4, 6, 8]))
        w = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
        w = w - w.T
        pf = pfaffian(w)
        det = np.linalg.det(w)
        assert abs(pf * pf - det) < 1e-8 * max(1.0, abs(det))


def test_pfaffian_four_by_four_expansion():
    rng = np.random.default_rng(17)
    a, b, c, d, e, f = rng.standard_normal(6) + 1j * rng.standard_normal(6)
    w = np.array([
        [0, a, b, c],
        [-a, 0, d, e],
        [-b, -d, 0, f],
        [-c, -e, -f, 0],
    ])
    assert abs(pfaffian(w) - (a * f - b * e + c * d)) < 1e-12


def test_pfaffian_congruence():
    rng = np.random.default_rng(23)
    for _ in range(20):
        w = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        w = w - w.T
        m = rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4))
        lhs = pfaffian(m @ w @ m.T)
        rhs = np.linalg.det(m) * pfaffian(w)
        assert abs(lhs - rhs) < 1e-8 * max(1.0, abs(rhs))


def test_pfaffian_standard_form():
    for n in (1, 2, 3):
        eps = standard_symplectic(2 * n)
        assert abs(pfaffian(eps) - (-1.0) ** n) < 1e-14


def test_pfaffian_odd_dimension_is_zero():
    w = np.array([[0.0, 1.0, 2.0], [-1.0, 0.0, 3.0], [-2.0, -3.0, 0.0]])
    assert pfaffian(w) == 0


def test_pfaffian_rejects_non_skew():
    with pytest.raises(AssumptionError, match="skew"):
        pfaffian(np.eye(2))


def test_fu_kane_constant_family():
    eps = standard_symplectic(4)
    assert fu_kane_index([eps] * 25) == 1


def test_fu_kane_rejects_bad_endpoints():
    mats = [np.eye(2)] * 10
    with pytest.raises(AssumptionError, match="skew"):
        fu_kane_index(mats)


def test_fu_kane_matches_crossing_index():
    eps = standard_symplectic(4)
    for seed in range(30):
        rng = np.random.default_rng(seed)
        fam_t = unitary_kramers_family(rng, 4, 280)
        i_t = endpoint_degenerate_index(phase_family(fam_t))
        i_hat = fu_kane_index([t @ eps for t in fam_t])
        assert i_hat == i_t


def test_index_multiplicativity():
    # T2 = M_minus T1 M_plus^-1 with the endpoint compatibility
    # M_minus = rho(M_plus) multiplies the indices: I(T2) = I(T1) I(M).
    dim = 4
    eps = standard_symplectic(dim)
    saw_minus = False
    for seed in range(30):
        rng = np.random.default_rng(300 + seed)
        t1 = kramers_family(rng, dim, 400)
        y0 = 0.4 * (rng.standard_normal((dim, dim))
                    + 1j * rng.standard_normal((dim, dim)))
        y1 = 0.4 * (rng.standard_normal((dim, dim))
                    + 1j * rng.standard_normal((dim, dim)))
        x2 = 0.7 * (rng.standard_normal((dim, dim))
                    + 1j * rng.standard_normal((dim, dim)))
        twist = int(rng.integers(0, 3))
        m_plus, m_minus = [], []
        for p in PHI_GRID:
            mp = sla.expm(y0 + (p / np.pi) * y1)
            tw = np.diag([np.exp(2j * twist * p)] + [1.0] * (dim - 1))
            m_plus.append(mp)
            m_minus.append(rho(mp, eps) @ sla.expm(np.sin(p) * x2) @ tw)
        t2 = [ml @ t @ np.linalg.inv(mp)
              for ml, t, mp in zip(m_minus, t1, m_plus)]
        m_fam = [ml @ np.linalg.inv(mp) for ml, mp in zip(m_minus, m_plus)]
        for end in (0, -1):
            ok, viol = kramers_check(m_fam[end])
            assert ok, viol
        i1 = endpoint_degenerate_index(phase_family(t1, PHI_GRID))
        i2 = endpoint_degenerate_index(phase_family(t2, PHI_GRID))
        im = endpoint_degenerate_index(phase_family(m_fam, PHI_GRID))
        saw_minus = saw_minus or im == -1
        assert i2 == i1 * im
    assert saw_minus


def test_index_conjugation_invariance():
    eps = standard_symplectic(4)
    for seed in range(15):
        rng = np.random.default_rng(40 + seed)
        t1 = kramers_family(rng, 4, 400)
        y = 0.5 * (rng.standard_normal((4, 4)) + 1j * rng.standard_normal((4, 4)))
        t2 = []
        for p, t in zip(PHI_GRID, t1):
            yp = y * (1.0 + 0.5 * np.sin(p))
            m = sla.expm(yp + rho(yp, eps))
            t2.append(m @ t @ np.linalg.inv(m))
        i1 = endpoint_degenerate_index(phase_family(t1, PHI_GRID))
        i2 = endpoint_degenerate_index(phase_family(t2, PHI_GRID))
        assert i1 == i2


def test_index_polar_invariance():
    for seed in range(15):
        rng = np.random.default_rng(70 + seed)
        t1 = kramers_family(rng, 4, 400)
        u1 = [sla.polar(t)[0] for t in t1]
        for end in (0, -1):
            ok, viol = kramers_check(u1[end])
            assert ok, viol
        assert endpoint_degenerate_index(phase_family(t1, PHI_GRID)) \
            == endpoint_degenerate_index(phase_family(u1, PHI_GRID))


def test_index_positive_rescale_invariance():
    rng = np.random.default_rng(90)
    t1 = kramers_family(rng, 4, 400)
    scale = 1.0 + 0.8 * np.sin(PHI_GRID)
    t2 = [c * t for c, t in zip(scale, t1)]
    assert endpoint_degenerate_index(phase_family(t1, PHI_GRID)) \
        == endpoint_degenerate_index(phase_family(t2, PHI_GRID))
