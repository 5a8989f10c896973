import numpy as np
import pytest

from edgetopo.errors import AssumptionError, ConfigError
from edgetopo.halfline import (Branch, EdgeSpectrum, count_crossings_qh,
                               count_crossings_ti, edge_spectrum, truncate)
from edgetopo.model import build_model, bulk_energies, edge_model
from edgetopo.transfer import edge_vanishing

ARC = (2.0 * np.pi / 3.0, 4.0 * np.pi / 3.0)


def zero_window_points(spec, e_tol=1e-3):
    """Grid momenta where a wall-localized branch sits within e_tol of 0."""
    ks = set()
    for branch in spec.branches:
        if not branch.is_edge:
            continue
        kv = branch.k_values(spec.k_grid)
        for k, e in zip(kv, branch.energies):
            if abs(e) < e_tol:
                ks.add(float(k))
    return np.array(sorted(ks))


def test_truncate_scalar_chain():
    m = build_model("scalar_chain", t=1.0)
    h = truncate(m, 25, 0.3)
    assert h.shape == (25, 25)
    assert np.allclose(np.diag(h), 0.0)
    assert np.allclose(np.diag(h, 1), 1.0)
    assert np.allclose(np.diag(h, -1), 1.0)
    assert np.count_nonzero(h) == 48


def test_truncate_too_short():
    m = build_model("scalar_chain", t=1.0)
    with pytest.raises(ConfigError, match="short"):
        truncate(m, 5, 0.0)


def test_truncate_hermitian():
    km = build_model("kane_mele", t=1.0, tp=0.1)
    h = truncate(km, 60, 1.234)
    assert np.max(np.abs(h - h.conj().T)) < 1e-12


def test_truncate_armchair_spectrum_near_bands():
    m = build_model("graphene_armchair", t=1.0)
    ribbon = np.linalg.eigvalsh(truncate(m, 40, 0.0))
    bulk = np.concatenate([
        bulk_energies(m, kappa, 0.0)
        for kappa in np.linspace(0, 2 * np.pi, 600, endpoint=False)
    ])
    dist = np.abs(ribbon[:, None] - bulk[None, :]).min(axis=1)
    assert np.max(dist) < 0.12


def test_truncate_boundary_zone():
    m = build_model("scalar_chain", t=1.0)
    e = edge_model(m, n0=2, replacements=[{0: np.array([[0.7]])},
                                          {0: np.array([[-0.2]])}])
    h = truncate(e, 25, 0.0)
    assert h[0, 0] == pytest.approx(0.7)
    assert h[1, 1] == pytest.approx(-0.2)
    assert np.allclose(np.diag(h)[2:], 0.0)


def test_zigzag_zero_mode_branch():
    m = build_model("graphene_zigzag", t=1.0)
    ks = np.linspace(0, 2 * np.pi, 401, endpoint=False)
    h = ks[1] - ks[0]
    spec = edge_spectrum(m, ks, 60, (-0.1, 0.1))
    kz = zero_window_points(spec)
    assert len(kz) > 100
    # absence: no zero-window point farther than one grid step outside
    assert kz.min() > ARC[0] - h
    assert kz.max() < ARC[1] + h
    # presence at L=60 reaches to within seven grid steps of the arc ends
    # (wall-to-wall splitting blocks anything tighter at this length)
    assert kz.min() < ARC[0] + 7 * h
    assert kz.max() > ARC[1] - 7 * h
    # flat and strongly localized in the interior of the arc
    for branch in spec.branches:
        if not branch.is_edge:
            continue
        kv = branch.k_values(spec.k_grid)
        inner = (kv > ARC[0] + 0.3) & (kv < ARC[1] - 0.3)
        if np.any(inner):
            assert np.max(np.abs(branch.energies[inner])) < 1e-6
            assert np.min(branch.weights[inner]) > 0.9


def test_zigzag_zero_window_shrinks_with_length():
    m = build_model("graphene_zigzag", t=1.0)
    ks = np.linspace(0, 2 * np.pi, 401, endpoint=False)
    off = {}
    for n_cells in (60, 120):
        spec = edge_spectrum(m, ks, n_cells, (-0.1, 0.1))
        kz = zero_window_points(spec)
        off[n_cells] = kz.min() - ARC[0]
    assert off[120] < 0.6 * off[60]


def test_armchair_no_localized_branch():
    m = build_model("graphene_armchair", t=1.0)
    ks = np.linspace(0, 2 * np.pi, 401, endpoint=False)
    spec = edge_spectrum(m, ks, 60, (-0.1, 0.1))
    assert len(zero_window_points(spec)) == 0


def test_band_overlap_reporting():
    zig = build_model("graphene_zigzag", t=1.0)
    ks = np.linspace(0, 2 * np.pi, 101, endpoint=False)
    spec = edge_spectrum(zig, ks, 30, (-0.1, 0.1))
    assert len(spec.band_overlap_ks) >= 2
    hal = build_model("haldane", t=1.0, tp=0.1)
    spec_h = edge_spectrum(hal, ks, 30, (-0.3, 0.3))
    assert spec_h.band_overlap_ks == ()


def test_window_inside_bands_rejected():
    m = build_model("haldane", t=1.0, tp=0.1)
    ks = np.linspace(0, 2 * np.pi, 51, endpoint=False)
    with pytest.raises(AssumptionError, match="bulk bands"):
        edge_spectrum(m, ks, 30, (-2.5, 2.5))
    with pytest.raises(ConfigError, match="interval"):
        edge_spectrum(m, ks, 30, (0.3, -0.3))


def test_haldane_single_chiral_branch():
    m = build_model("haldane", t=1.0, tp=0.1)
    ks = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    spec = edge_spectrum(m, ks, 60, (-0.35, 0.35))
    edge_branches = [b for b in spec.branches if b.is_edge]
    assert len(edge_branches) == 1
    branch = edge_branches[0]
    # traverses the gap upward
    assert branch.energies[0] < -0.3 and branch.energies[-1] > 0.3
    assert count_crossings_qh(spec, 0.0) == 1


def test_haldane_chirality_flips_with_tp():
    m = build_model("haldane", t=1.0, tp=-0.1)
    ks = np.linspace(0, 2 * np.pi, 400, endpoint=False)
    spec = edge_spectrum(m, ks, 60, (-0.35, 0.35))
    assert count_crossings_qh(spec, 0.0) == -1


def test_atomic_trivial_counts():
    m = build_model("atomic_trivial")
    ks = np.linspace(0, np.pi, 51)
    spec = edge_spectrum(m, ks, 30, (0.5, 1.5))
    assert spec.branches == ()
    assert count_crossings_ti(spec, 1.0) == (0, 1)
    full = np.linspace(0, 2 * np.pi, 50, endpoint=False)
    assert count_crossings_qh(edge_spectrum(m, full, 30, (0.5, 1.5)), 1.0) == 0


def test_kane_mele_edge_count():
    km = build_model("kane_mele", t=1.0, tp=0.1)
    ks = np.linspace(0, np.pi, 201)
    spec = edge_spectrum(km, ks, 60, (-0.4, 0.4))
    n, sign = count_crossings_ti(spec, 0.0)
    assert n % 2 == 1
    assert sign == -1


def test_kane_mele_staggered_is_trivial():
    km = build_model("kane_mele", t=1.0, tp=0.1, lam_v=1.0)
    ks = np.linspace(0, np.pi, 201)
    spec = edge_spectrum(km, ks, 60, (-0.2, 0.2))
    n, sign = count_crossings_ti(spec, 0.0)
    assert (n, sign) == (0, 1)


def test_synthetic_endpoint_half_counts():
    # a Kramers pair meeting mu exactly at k=0 contributes two halves
    ks = np.linspace(0, np.pi, 21)
    up = Branch(start=0, energies=0.3 * ks, weights=np.ones(21))
    down = Branch(start=0, energies=-0.3 * ks, weights=np.ones(21))
    spec = EdgeSpectrum(k_grid=ks, branches=(up, down), window=(-1, 1),
                        n_cells=0, weight_cells=10, edge=None)
    n, sign = count_crossings_ti(spec, 0.0)
    assert (n, sign) == (1, -1)


def test_synthetic_odd_endpoint_hits_rejected():
    ks = np.linspace(0, np.pi, 21)
    lone = Branch(start=0, energies=0.3 * ks, weights=np.ones(21))
    spec = EdgeSpectrum(k_grid=ks, branches=(lone,), window=(-1, 1),
                        n_cells=0, weight_cells=10, edge=None)
    with pytest.raises(AssumptionError, match="odd"):
        count_crossings_ti(spec, 0.0)


def test_flat_branch_on_mu_rejected():
    # mu sitting exactly on the zigzag zero modes cannot be counted
    m = build_model("graphene_zigzag", t=1.0)
    ks = np.linspace(0, np.pi, 201)
    spec = edge_spectrum(m, ks, 60, (-0.1, 0.1))
    with pytest.raises(AssumptionError):
        count_crossings_ti(spec, 0.0)


def test_counts_stable_under_doubling():
    hal = build_model("haldane", t=1.0, tp=0.1)
    ks = np.linspace(0, 2 * np.pi, 200, endpoint=False)
    n_small = count_crossings_qh(edge_spectrum(hal, ks, 30, (-0.3, 0.3)), 0.0)
    n_large = count_crossings_qh(edge_spectrum(hal, ks, 60, (-0.3, 0.3)), 0.0)
    assert n_small == n_large == 1


def test_edge_energies_converged_in_length():
    km = build_model("kane_mele", t=1.0, tp=0.1)
    k = 2.5
    vals = {}
    for n_cells in (60, 120):
        ev = np.linalg.eigvalsh(truncate(km, n_cells, k))
        vals[n_cells] = ev[np.abs(ev) < 0.4]
    assert len(vals[60]) == len(vals[120]) == 4
    assert np.max(np.abs(np.sort(vals[60]) - np.sort(vals[120]))) < 1e-6


def test_kane_mele_spectrum_symmetric_in_k():
    km = build_model("kane_mele", t=1.0, tp=0.1)
    for k in (0.9, 2.2):
        e1 = np.linalg.eigvalsh(truncate(km, 40, k))
        e2 = np.linalg.eigvalsh(truncate(km, 40, 2.0 * np.pi - k))
        assert np.max(np.abs(e1 - e2)) < 1e-9


def test_kane_mele_kramers_degenerate_at_trim():
    km = build_model("kane_mele", t=1.0, tp=0.1)
    for k in (0.0, np.pi):
        ev = np.linalg.eigvalsh(truncate(km, 40, k))
        assert np.max(np.abs(ev[1::2] - ev[0::2])) < 1e-9


def test_crossings_match_edge_vanishing_zeros():
    # the ribbon crossing of mu and the zero of det Psi0(mu, .) locate
    # the same momentum
    for name in ("haldane", "kane_mele"):
        m = build_model(name, t=1.0, tp=0.1)
        e = edge_model(m)
        ks = np.linspace(0, 2 * np.pi, 400, endpoint=False)
        h = ks[1] - ks[0]
        window = (-0.35, 0.35) if name == "haldane" else (-0.4, 0.4)
        spec = edge_spectrum(m, ks, 60, window)
        # branch crossing momenta of mu=0, from grid sign changes
        crossing_ks = []
        for b in spec.branches:
            if not b.is_edge:
                continue
            kv = b.k_values(spec.k_grid)
            sgn = np.sign(b.energies)
            for j in np.nonzero(sgn[:-1] != sgn[1:])[0]:
                crossing_ks.append(0.5 * (kv[j] + kv[j + 1]))
        assert crossing_ks
        scan = ks[(ks > 2.0) & (ks < 4.3)]
        dets = np.array([abs(edge_vanishing(e, 0.0, k)) for k in scan])
        k_zero = scan[np.argmin(dets)]
        assert any(abs(k_zero - kc) <= 1.5 * h for kc in crossing_ks)
