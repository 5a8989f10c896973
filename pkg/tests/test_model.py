import json

import numpy as np
import pytest

from edgetopo.errors import ConfigError
from edgetopo.model import (build_model, bloch_hamiltonian, check_time_reversal,
                            conjugate_model, dump_model, edge_model, load_model,
                            model_from_dict, model_to_dict, normalize_theta,
                            reduced_blocks, spectral_gap, supercell,
                            validate_model)

K_GRID = np.linspace(0.0, 2.0 * np.pi, 13, endpoint=False)


def test_builder_shapes_and_labels():
    for name, n in [("scalar_chain", 1), ("atomic_trivial", 2),
                    ("graphene_zigzag", 2), ("graphene_armchair", 2),
                    ("haldane", 2), ("kane_mele", 4)]:
        m = build_model(name, t=1.0, tp=0.1) if name in ("haldane", "kane_mele") \
            else build_model(name, t=1.0)
        assert m.n_orb == n
        assert m.period == 1
        assert m.label == name
        validate_model(m)


def test_builder_rejects_bad_parameters():
    with pytest.raises(ConfigError):
        build_model("no_such_model")
    with pytest.raises(ConfigError):
        build_model("scalar_chain", t=0.0)
    with pytest.raises(ConfigError):
        build_model("graphene_zigzag", t=0.0)
    with pytest.raises(ConfigError):
        build_model("graphene_zigzag", lam_v=0.5)  # staggering needs haldane/KM
    with pytest.raises(ConfigError):
        build_model("haldane", tp=0.1, spin=2)


def test_zigzag_blocks_match_hand_written_matrices():
    t = 1.3
    m = build_model("graphene_zigzag", t=t)
    for k in K_GRID:
        a_ref = -t * np.array([[0.0, 1.0], [0.0, 0.0]])
        v_ref = -t * np.array([[0.0, 1.0 + np.exp(-1j * k)],
                               [1.0 + np.exp(1j * k), 0.0]])
        assert np.allclose(m.hopping(k), a_ref, atol=1e-14)
        assert np.allclose(m.onsite(1, k), v_ref, atol=1e-14)


def test_armchair_blocks_and_hopping_determinant():
    t = 0.7
    m = build_model("graphene_armchair", t=t)
    for k in K_GRID:
        a_ref = -t * np.array([[0.0, 1.0], [np.exp(1j * k), 0.0]])
        v_ref = -t * np.array([[0.0, 1.0], [1.0, 0.0]])
        assert np.allclose(m.hopping(k), a_ref, atol=1e-14)
        assert np.allclose(m.onsite(1, k), v_ref, atol=1e-14)
        # the hopping block is invertible at every k, unlike the zigzag cut
        assert abs(np.linalg.det(m.hopping(k))) == pytest.approx(t ** 2, rel=1e-12)


def test_haldane_blocks_match_closed_form():
    t, tp = 1.0, 0.1
    m = build_model("haldane", t=t, tp=tp)
    for k in K_GRID:
        e = np.exp(1j * k)
        a_ref = np.array([[-1j * tp * (e - 1.0), -t],
                          [0.0, 1j * tp * (e - 1.0)]])
        v_ref = np.array([[1j * tp * (e - np.conj(e)), -t * (1.0 + np.conj(e))],
                          [-t * (1.0 + e), -1j * tp * (e - np.conj(e))]])
        assert np.allclose(m.hopping(k), a_ref, atol=1e-14)
        assert np.allclose(m.onsite(1, k), v_ref, atol=1e-14)


def test_haldane_hopping_singular_only_at_k_zero():
    tp = 0.1
    m = build_model("haldane", t=1.0, tp=tp)
    assert abs(np.linalg.det(m.hopping(0.0))) < 1e-14
    for k in (0.3, 1.0, np.pi, 5.0):
        det = np.linalg.det(m.hopping(k))
        ref = tp ** 2 * (np.exp(1j * k) - 1.0) ** 2
        assert det == pytest.approx(ref, rel=1e-10)
        assert abs(det) > 1e-4


def test_kane_mele_is_two_haldane_copies():
    km = build_model("kane_mele", t=1.0, tp=0.1)
    up = build_model("haldane", t=1.0, tp=0.1)
    dn = build_model("haldane", t=1.0, tp=-0.1)
    for k in K_GRID:
        a, v = km.hopping(k), km.onsite(1, k)
        # spin-up block sits at even indices, spin-down at odd ones
        assert np.allclose(a[0::2, 0::2], up.hopping(k), atol=1e-14)
        assert np.allclose(a[1::2, 1::2], dn.hopping(k), atol=1e-14)
        assert np.allclose(v[0::2, 0::2], up.onsite(1, k), atol=1e-14)
        assert np.allclose(v[1::2, 1::2], dn.onsite(1, k), atol=1e-14)
        assert np.linalg.norm(a[0::2, 1::2]) == 0.0


def test_staggered_potential_enters_with_sublattice_sign():
    hal = build_model("haldane", t=1.0, tp=0.1, lam_v=0.25)
    hal0 = build_model("haldane", t=1.0, tp=0.1)
    dv = hal.onsite(1, 0.9) - hal0.onsite(1, 0.9)
    assert np.allclose(dv, 0.25 * np.diag([1.0, -1.0]), atol=1e-14)
    km = build_model("kane_mele", t=1.0, tp=0.1, lam_v=0.25)
    km0 = build_model("kane_mele", t=1.0, tp=0.1)
    dv = km.onsite(1, 0.9) - km0.onsite(1, 0.9)
    assert np.allclose(dv, 0.25 * np.diag([1.0, 1.0, -1.0, -1.0]), atol=1e-14)


def test_kane_mele_time_reversal_passes():
    km = build_model("kane_mele", t=1.0, tp=0.1, lam_v=0.3)
    rep = check_time_reversal(km)
    assert rep.passed
    assert rep.max_violation < 1e-12


def test_haldane_breaks_spinless_time_reversal():
    hal = build_model("haldane", t=1.0, tp=0.1)
    theta = np.array([[0.0, -1.0], [1.0, 0.0]])  # -i sigma_2 conj
    rep = check_time_reversal(hal, theta=theta)
    assert not rep.passed
    assert rep.max_violation > 0.1


def test_check_time_reversal_requires_theta():
    with pytest.raises(ConfigError):
        check_time_reversal(build_model("graphene_zigzag"))


def test_theta_squares_to_minus_one():
    for name in ("atomic_trivial", "kane_mele"):
        m = build_model(name, t=1.0)
        assert np.allclose(m.theta @ m.theta.conj(), -np.eye(m.n_orb),
                           atol=1e-14)


def test_supercell_scalar_chain_blocks():
    sc2 = supercell(build_model("scalar_chain", t=1.0), 2)
    assert sc2.n_orb == 2 and sc2.period == 1
    assert np.allclose(sc2.hopping(0.4), [[0.0, 1.0], [0.0, 0.0]], atol=1e-14)
    assert np.allclose(sc2.onsite(1, 0.4), [[0.0, 1.0], [1.0, 0.0]], atol=1e-14)


def test_supercell_folds_the_spectrum():
    m = build_model("haldane", t=1.0, tp=0.1)
    for m_new in (2, 3):
        cell = supercell(m, m_new)
        for kap, k in [(0.7, 1.1), (2.0, 4.5)]:
            big = np.linalg.eigvalsh(bloch_hamiltonian(cell, kap, k))
            small = np.sort(np.concatenate([
                np.linalg.eigvalsh(
                    bloch_hamiltonian(m, (kap + 2.0 * np.pi * j) / m_new, k))
                for j in range(m_new)]))
            assert np.max(np.abs(big - small)) < 1e-10


def test_supercell_rejects_bad_size():
    m = build_model("scalar_chain")
    with pytest.raises(ConfigError):
        supercell(m, 0)


def test_reduced_blocks_of_period_one_model_are_the_blocks():
    m = build_model("haldane", t=1.0, tp=0.1)
    acal, vcal = reduced_blocks(m, 0.8)
    assert np.allclose(acal, m.hopping(0.8), atol=1e-15)
    assert np.allclose(vcal, m.onsite(1, 0.8), atol=1e-15)


def test_spectral_gap_kane_mele():
    # spin-orbit gap: bands stay 3*sqrt(3)*tp away from zero energy
    km = build_model("kane_mele", t=1.0, tp=0.1)
    rep = spectral_gap(km, 0.0, n_k=101, n_kappa=64)
    exact = 3.0 * np.sqrt(3.0) * 0.1
    assert exact - 1e-9 <= rep.gap <= exact + 0.02
    assert rep.n_below == 2
    assert rep.e_min < -2.5 and rep.e_max > 2.5


def test_spectral_gap_closes_for_graphene():
    zz = build_model("graphene_zigzag")
    rep = spectral_gap(zz, 0.0, n_k=60, n_kappa=60)
    assert rep.gap < 0.1  # Dirac points, gap -> 0 with grid refinement


def test_edge_model_replacements_and_zone():
    hal = build_model("haldane", t=1.0, tp=0.1)
    repl = [{0: np.array([[0.5, 0.0], [0.0, -0.5]], dtype=complex)}]
    edge = edge_model(hal, n0=1, replacements=repl)
    assert edge.n0 == 1
    assert np.allclose(edge.vsharp(1, 0.7), np.diag([0.5, -0.5]), atol=1e-14)
    assert np.allclose(edge.vsharp(2, 0.7), hal.onsite(2, 0.7), atol=1e-14)


def test_edge_model_rejects_non_hermitian_replacement():
    hal = build_model("haldane", t=1.0, tp=0.1)
    repl = [{0: np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)}]
    with pytest.raises(ConfigError):
        edge_model(hal, n0=1, replacements=repl)


def test_boundary_matrix_folds_into_first_site():
    # scalar chain: psi_0 = lam psi_1 adds t*lam to the first on-site block
    sc = build_model("scalar_chain", t=1.0)
    edge = edge_model(sc, boundary_matrix=[[0.3]])
    assert edge.n0 == 1
    assert np.allclose(edge.vsharp(1, 0.0), [[0.3]], atol=1e-14)

    # truncated operators agree with literal elimination of psi_0
    size = 60
    h_fold = np.zeros((size, size))
    np.fill_diagonal(h_fold[1:], 1.0)
    np.fill_diagonal(h_fold[:, 1:], 1.0)
    h_fold[0, 0] = 0.3
    ev_fold = np.linalg.eigvalsh(h_fold)

    h_lit = np.zeros((size, size))
    np.fill_diagonal(h_lit[1:], 1.0)
    np.fill_diagonal(h_lit[:, 1:], 1.0)
    h_lit[0, 0] = 0.3  # row 1 after substituting psi_0 = 0.3 psi_1
    assert np.max(np.abs(np.linalg.eigvalsh(h_lit) - ev_fold)) < 1e-12


def test_boundary_matrix_requires_hermitian_fold():
    hal = build_model("haldane", t=1.0, tp=0.1)
    with pytest.raises(ConfigError):
        edge_model(hal, boundary_matrix=np.array([[0.0, 0.4], [0.0, 0.0]]))


def test_normalize_theta_reaches_the_standard_form():
    km = build_model("kane_mele", t=1.0, tp=0.1)
    rot, u = normalize_theta(km)
    eps = np.zeros((4, 4))
    eps[0, 1], eps[1, 0], eps[2, 3], eps[3, 2] = -1.0, 1.0, -1.0, 1.0
    assert np.allclose(rot.theta, -eps, atol=1e-12)
    assert np.allclose(u @ u.conj().T, np.eye(4), atol=1e-12)
    # the rotation preserves spectra and time-reversal invariance
    assert check_time_reversal(rot).passed
    for kap, k in [(0.3, 0.9), (2.2, 4.0)]:
        e1 = np.linalg.eigvalsh(bloch_hamiltonian(km, kap, k))
        e2 = np.linalg.eigvalsh(bloch_hamiltonian(rot, kap, k))
        assert np.max(np.abs(e1 - e2)) < 1e-12


def test_conjugate_model_is_a_similarity():
    rng = np.random.default_rng(5)
    m = build_model("kane_mele", t=1.0, tp=0.1)
    x = rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4))
    u, _ = np.linalg.qr(x)
    rot = conjugate_model(m, u)
    for kap, k in [(0.5, 1.0), (1.9, 3.3)]:
        h1 = bloch_hamiltonian(m, kap, k)
        h2 = bloch_hamiltonian(rot, kap, k)
        assert np.allclose(u @ h1 @ u.conj().T, h2, atol=1e-12)


def test_model_file_roundtrip(tmp_path):
    km = build_model("kane_mele", t=1.0, tp=0.1, lam_v=0.2)
    edge = edge_model(km, n0=2)
    path = tmp_path / "km.json"
    dump_model(edge, path)
    back = load_model(path)
    assert back.n0 == 2
    for k in (0.0, 1.0, np.pi):
        assert np.allclose(back.bulk.hopping(k), km.hopping(k), atol=1e-12)
        assert np.allclose(back.vsharp(1, k), km.onsite(1, k), atol=1e-12)
    assert np.allclose(back.bulk.theta, km.theta, atol=1e-12)


def test_model_file_parse_error_reports_position(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text('{\n  "n": 2,\n  "m": 1,\n  "v": [\n}')
    with pytest.raises(ConfigError, match=r"line 5"):
        load_model(path)


def test_model_from_dict_validates():
    doc = model_to_dict(build_model("kane_mele", t=1.0, tp=0.1))
    doc["v"][0][0]["re"][0][1] = 99.0  # break Hermiticity
    with pytest.raises(ConfigError):
        model_from_dict(doc)
    doc2 = model_to_dict(build_model("kane_mele", t=1.0, tp=0.1))
    doc2["theta"]["conjugate"] = False
    with pytest.raises(ConfigError):
        model_from_dict(doc2)


def test_zigzag_bulk_bands_closed_form():
    zz = build_model("graphene_zigzag", t=1.0)
    for kap, k in [(0.2, 0.5), (1.5, 2.0), (4.0, 5.5)]:
        ev = np.linalg.eigvalsh(bloch_hamiltonian(zz, kap, k))
        mag = abs(1.0 + np.exp(1j * k) + np.exp(1j * kap))
        assert np.allclose(ev, [-mag, mag], atol=1e-12)
