"""Tight-binding Hamiltonian families that are periodic along an edge.

A bulk model is the Bloch family H(k) acting on vector sequences
(psi_n) over the sites n of a half-plane's transverse direction:

    (H(k) psi)_n = A(k) psi_{n-1} + A(k)^+ psi_{n+1} + V_n(k) psi_n

with N x N hopping blocks A(k), Hermitian on-site blocks V_n(k), and a
transverse period M (V_{n+M} = V_n). A(k) and V_n(k) are trigonometric
polynomials in the conserved edge momentum k, stored as harmonic maps
m -> coefficient matrix of e^{i m k}.

An edge model restricts the same family to n >= 1 with a Dirichlet wall
at n = 0 and optionally replaced potentials in a boundary zone
1 <= n <= n0. More general local boundary conditions psi_0 = Lambda
psi_1 fold into the boundary zone by adding A(k) Lambda to the first
on-site block.

Fermionic time reversal, when present, is an antiunitary Theta acting
sitewise as Theta psi = theta @ conj(psi) with theta unitary and
theta @ conj(theta) = -1.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError
from .numutil import atomic_write_text, hermitian_violation

Harmonics = dict  # int harmonic index -> complex (N, N) ndarray

_CHECK_K_GRID = np.linspace(0.0, 2.0 * np.pi, 17, endpoint=False)


def eval_harmonics(harm: Harmonics, k: float, dim: int) -> np.ndarray:
    """Evaluate sum_m  c_m e^{i m k} for a harmonic map."""
    out = np.zeros((dim, dim), dtype=complex)
    for m, mat in harm.items():
        out += np.asarray(mat, dtype=complex) * np.exp(1j * m * k)
    return out


def _adjoint_harmonics(harm: Harmonics) -> Harmonics:
    """Harmonics of k -> A(k)^+ given those of A."""
    return {-m: np.asarray(mat).conj().T for m, mat in harm.items()}


@dataclass(frozen=True, eq=False)
class ModelSpec:
    """Bulk model data.

    n_orb is the per-site internal dimension N, period the transverse
    period M. v_harmonics has one harmonic map per site n = 1..M.
    theta is the sitewise time-reversal matrix or None.
    """

    n_orb: int
    period: int
    a_harmonics: Harmonics
    v_harmonics: tuple
    theta: np.ndarray | None = None
    mu: float = 0.0
    label: str = ""

    # Short aliases used throughout the numerics.
    @property
    def N(self) -> int:
        return self.n_orb

    @property
    def M(self) -> int:
        return self.period

    def hopping(self, k: float) -> np.ndarray:
        """A(k)."""
        return eval_harmonics(self.a_harmonics, k, self.n_orb)

    def onsite(self, n: int, k: float) -> np.ndarray:
        """V_n(k) for any site n >= 1 (periodic continuation)."""
        return eval_harmonics(self.v_harmonics[(n - 1) % self.period], k, self.n_orb)


@dataclass(frozen=True, eq=False)
class EdgeModelSpec:
    """Edge (half-line) model: bulk data plus a boundary zone.

    Sites n = 1..n0 carry replaced potentials; beyond the zone the bulk
    potentials apply. The wall is Dirichlet (psi_0 = 0).
    """

    bulk: ModelSpec
    n0: int = 0
    vsharp_harmonics: tuple = ()

    @property
    def N(self) -> int:
        return self.bulk.n_orb

    @property
    def M(self) -> int:
        return self.bulk.period

    def vsharp(self, n: int, k: float) -> np.ndarray:
        """Edge potential V#_n(k); equals the bulk V_n(k) for n > n0."""
        if 1 <= n <= self.n0:
            return eval_harmonics(self.vsharp_harmonics[n - 1], k, self.bulk.n_orb)
        return self.bulk.onsite(n, k)


def validate_model(model: ModelSpec, tol: float = 1e-10) -> None:
    """Shape and Hermiticity checks; raises ConfigError on failure."""
    n = model.n_orb
    if n < 1 or model.period < 1:
        raise ConfigError("model dimensions must be positive")
    if len(model.v_harmonics) != model.period:
        raise ConfigError("need one on-site harmonic map per site in the period")
    for m, mat in model.a_harmonics.items():
        if np.asarray(mat).shape != (n, n):
            raise ConfigError(f"hopping harmonic {m} has the wrong shape")
    for k in _CHECK_K_GRID:
        for site in range(1, model.period + 1):
            v = model.onsite(site, k)
            if hermitian_violation(v) > tol * max(1.0, np.linalg.norm(v)):
                raise ConfigError(
                    f"on-site block at site {site}, k = {k:.3f} is not Hermitian"
                )
    if model.theta is not None:
        th = np.asarray(model.theta)
        if th.shape != (n, n):
            raise ConfigError("theta has the wrong shape")
        if np.linalg.norm(th @ th.conj().T - np.eye(n)) > 1e-10:
            raise ConfigError("theta is not unitary")
        if np.linalg.norm(th @ th.conj() + np.eye(n)) > 1e-10:
            raise ConfigError("theta does not square to -1 (need a fermionic "
                              "time reversal)")


# ---------------------------------------------------------------------------
# Built-in models
# ---------------------------------------------------------------------------

_SIGMA3 = np.diag([1.0, -1.0])
_EPS2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def _honeycomb_zigzag_parts(t: float):
    """t-only graphene blocks in the zigzag frame (cell = one A and one
    B site, k along the zigzag edge)."""
    a = {0: -t * np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex)}
    v = {
        0: -t * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex),
        -1: -t * np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex),
        1: -t * np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex),
    }
    return a, v


def _haldane_tp_parts(tp: float):
    """Purely imaginary next-nearest-neighbour blocks (flux pi/2): the
    part of the haldane model proportional to t'."""
    # A': diag(-i t'(e^{ik} - 1), +i t'(e^{ik} - 1))
    a = {
        0: 1j * tp * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
        1: 1j * tp * np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex),
    }
    # V': diag(i t'(e^{ik} - e^{-ik}), -i t'(e^{ik} - e^{-ik}))
    v = {
        1: 1j * tp * np.array([[1.0, 0.0], [0.0, -1.0]], dtype=complex),
        -1: 1j * tp * np.array([[-1.0, 0.0], [0.0, 1.0]], dtype=complex),
    }
    return a, v


def _merge(*maps: Harmonics) -> Harmonics:
    out: Harmonics = {}
    for h in maps:
        for m, mat in h.items():
            out[m] = out.get(m, 0) + np.asarray(mat, dtype=complex)
    return {m: mat for m, mat in out.items() if np.linalg.norm(mat) > 0}


def _kron_each(harm: Harmonics, right: np.ndarray) -> Harmonics:
    return {m: np.kron(mat, right) for m, mat in harm.items()}


def build_model(name: str, **params) -> ModelSpec:
    """Construct a built-in model by name.

    Supported names: scalar_chain, atomic_trivial, graphene_zigzag,
    graphene_armchair, haldane, kane_mele. Parameters: t (hopping,
    nonzero), tp (imaginary next-nearest hopping, haldane/kane_mele),
    lam_v (staggered potential, haldane/kane_mele), mu (Fermi level).
    """
    known = {"t", "tp", "lam_v", "mu"}
    unknown = set(params) - known
    if unknown:
        raise ConfigError(f"unknown model parameters: {sorted(unknown)}")
    t = float(params.get("t", 1.0))
    tp = float(params.get("tp", 0.0))
    lam_v = float(params.get("lam_v", 0.0))

    if name in ("scalar_chain", "atomic_trivial", "graphene_zigzag",
                "graphene_armchair") and (tp != 0.0 or lam_v != 0.0):
        raise ConfigError(f"{name} takes no tp or lam_v parameter")

    if name == "scalar_chain":
        if t == 0.0:
            raise ConfigError("scalar_chain needs a nonzero hopping t")
        mu = float(params.get("mu", 0.0))
        return ModelSpec(1, 1, {0: np.array([[t]], dtype=complex)},
                         ({},), None, mu, "scalar_chain")

    if name == "atomic_trivial":
        mu = float(params.get("mu", 1.0))
        return ModelSpec(2, 1, {}, ({},), _EPS2.astype(complex), mu,
                         "atomic_trivial")

    if name in ("graphene_zigzag", "graphene_armchair", "haldane", "kane_mele"):
        if t == 0.0:
            raise ConfigError(f"{name} needs a nonzero hopping t")
        mu = float(params.get("mu", 0.0))

    if name == "graphene_zigzag":
        a, v = _honeycomb_zigzag_parts(t)
        return ModelSpec(2, 1, a, (v,), None, mu, "graphene_zigzag")

    if name == "graphene_armchair":
        a = {
            0: -t * np.array([[0.0, 1.0], [0.0, 0.0]], dtype=complex),
            1: -t * np.array([[0.0, 0.0], [1.0, 0.0]], dtype=complex),
        }
        v = {0: -t * np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)}
        return ModelSpec(2, 1, a, (v,), None, mu, "graphene_armchair")

    if name == "haldane":
        a0, v0 = _honeycomb_zigzag_parts(t)
        a1, v1 = _haldane_tp_parts(tp)
        a = _merge(a0, a1)
        v = _merge(v0, v1, {0: lam_v * _SIGMA3.astype(complex)})
        return ModelSpec(2, 1, a, (v,), None, mu, "haldane")

    if name == "kane_mele":
        a0, v0 = _honeycomb_zigzag_parts(t)
        a1, v1 = _haldane_tp_parts(tp)
        eye2 = np.eye(2)
        # spin-orbit part carries sigma_3 in spin space; basis ordering is
        # (A up, A down, B up, B down)
        a = _merge(_kron_each(a0, eye2), _kron_each(a1, _SIGMA3))
        v = _merge(_kron_each(v0, eye2), _kron_each(v1, _SIGMA3),
                   {0: lam_v * np.kron(_SIGMA3, eye2).astype(complex)})
        theta = np.kron(eye2, _EPS2).astype(complex)  # -i (1 x sigma_2) C
        return ModelSpec(4, 1, a, (v,), theta, mu, "kane_mele")

    raise ConfigError(f"unknown model name: {name!r}")


BUILTIN_MODELS = ("scalar_chain", "atomic_trivial", "graphene_zigzag",
                  "graphene_armchair", "haldane", "kane_mele")


# ---------------------------------------------------------------------------
# Symmetry check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeReversalReport:
    passed: bool
    max_violation: float
    tol: float


def check_time_reversal(model: ModelSpec, k_grid=None, theta=None,
                        tol: float = 1e-10) -> TimeReversalReport:
    """Check Theta A(k) Theta^{-1} = A(-k) and likewise for every V_n.

    Theta acts antilinearly, so as matrices the condition reads
    theta conj(A(k)) theta^{-1} = A(-k). Uses the model's theta unless
    an override is supplied; raises if neither exists.
    """
    th = model.theta if theta is None else np.asarray(theta, dtype=complex)
    if th is None:
        raise ConfigError("model has no time-reversal operator to check")
    if k_grid is None:
        k_grid = _CHECK_K_GRID
    th_inv = th.conj().T
    worst = 0.0
    for k in np.asarray(k_grid, dtype=float):
        pairs = [(model.hopping(k), model.hopping(-k))]
        pairs += [(model.onsite(n, k), model.onsite(n, -k))
                  for n in range(1, model.period + 1)]
        for mat_k, mat_mk in pairs:
            dev = np.linalg.norm(th @ mat_k.conj() @ th_inv - mat_mk)
            worst = max(worst, float(dev))
    return TimeReversalReport(worst <= tol, worst, tol)


# ---------------------------------------------------------------------------
# Supercell reduction and dense Bloch blocks
# ---------------------------------------------------------------------------

def supercell(model: ModelSpec, m_new: int) -> ModelSpec:
    """Re-group m_new consecutive sites into one cell of a period-1 model.

    m_new must be a positive multiple of the period. The new hopping has
    the old A as its single lower-left corner block (only the last site
    of a cell touches the next cell) and the new on-site block is block
    tridiagonal in the old A, V_n.
    """
    m0 = model.period
    if m_new < 1 or m_new % m0:
        raise ConfigError("supercell size must be a positive multiple of the period")
    n = model.n_orb
    d = m_new * n

    a_new: Harmonics = {}
    for m, mat in model.a_harmonics.items():
        big = np.zeros((d, d), dtype=complex)
        big[:n, d - n:] = mat
        a_new[m] = big

    adj = _adjoint_harmonics(model.a_harmonics)
    v_new: Harmonics = {}

    def _add(mm, row, col, mat):
        if mm not in v_new:
            v_new[mm] = np.zeros((d, d), dtype=complex)
        v_new[mm][row * n:(row + 1) * n, col * n:(col + 1) * n] += mat

    for i in range(m_new):
        site_harm = model.v_harmonics[i % m0]
        for m, mat in site_harm.items():
            _add(m, i, i, np.asarray(mat, dtype=complex))
        if i + 1 < m_new:
            for m, mat in model.a_harmonics.items():
                _add(m, i + 1, i, np.asarray(mat, dtype=complex))
            for m, mat in adj.items():
                _add(m, i, i + 1, np.asarray(mat, dtype=complex))

    theta = None
    if model.theta is not None:
        theta = np.kron(np.eye(m_new), model.theta)

    return ModelSpec(d, 1, a_new, (v_new,), theta, model.mu,
                     f"{model.label}_cell{m_new}" if model.label else f"cell{m_new}")


def reduced_blocks(model: ModelSpec, k: float):
    """Dense (Acal(k), Vcal(k)) of the period-1 regrouped model."""
    if model.period == 1:
        return model.hopping(k), model.onsite(1, k)
    cell = supercell(model, model.period)
    return cell.hopping(k), cell.onsite(1, k)


def bloch_hamiltonian(model: ModelSpec, kappa: float, k: float) -> np.ndarray:
    """H(kappa, k) = Acal e^{-i kappa} + Acal^+ e^{i kappa} + Vcal."""
    acal, vcal = reduced_blocks(model, k)
    return acal * np.exp(-1j * kappa) + acal.conj().T * np.exp(1j * kappa) + vcal


def bulk_energies(model: ModelSpec, kappa: float, k: float) -> np.ndarray:
    return np.linalg.eigvalsh(bloch_hamiltonian(model, kappa, k))


@dataclass(frozen=True)
class GapReport:
    gap: float
    k_at: float
    kappa_at: float
    e_min: float
    e_max: float
    n_below: int


def spectral_gap(model: ModelSpec, mu: float, n_k: int = 201,
                 n_kappa: int = 64) -> GapReport:
    """Distance from the mu-line to the bulk bands over a sampling grid,
    plus the overall band extent and the filled-band count."""
    best = np.inf
    k_at = kappa_at = 0.0
    e_min, e_max = np.inf, -np.inf
    n_below = -1
    for k in np.linspace(0.0, 2.0 * np.pi, n_k, endpoint=False):
        for kappa in np.linspace(0.0, 2.0 * np.pi, n_kappa, endpoint=False):
            ev = bulk_energies(model, kappa, k)
            d = float(np.min(np.abs(ev - mu)))
            if d < best:
                best, k_at, kappa_at = d, float(k), float(kappa)
            e_min = min(e_min, float(ev[0]))
            e_max = max(e_max, float(ev[-1]))
            below = int(np.sum(ev < mu))
            if n_below < 0:
                n_below = below
            elif below != n_below:
                best = 0.0
    return GapReport(best, k_at, kappa_at, e_min, e_max, max(n_below, 0))


# ---------------------------------------------------------------------------
# Edge construction
# ---------------------------------------------------------------------------

def edge_model(model: ModelSpec, n0: int = 0, replacements=None,
               boundary_matrix=None) -> EdgeModelSpec:
    """Half-line restriction with an optional boundary zone.

    replacements: harmonic maps for sites 1..n0 (list, or dict keyed by
    site). boundary_matrix Lambda realizes psi_0 = Lambda psi_1 by
    folding A(k) Lambda into the first on-site block; A(k) Lambda must
    be Hermitian for every k for the folded operator to stay self
    adjoint.
    """
    if n0 < 0:
        raise ConfigError("boundary zone depth must be >= 0")
    n = model.n_orb
    zone: list[Harmonics] = []
    for site in range(1, n0 + 1):
        zone.append(dict(model.v_harmonics[(site - 1) % model.period]))
    if replacements is not None:
        if isinstance(replacements, dict):
            items = replacements.items()
        else:
            items = enumerate(replacements, start=1)
        for site, harm in items:
            if not 1 <= site <= n0:
                raise ConfigError("replacement site outside the boundary zone")
            zone[site - 1] = {m: np.asarray(mat, dtype=complex)
                              for m, mat in harm.items()}

    if boundary_matrix is not None:
        lam = np.atleast_2d(np.asarray(boundary_matrix, dtype=complex))
        if lam.shape != (n, n):
            raise ConfigError("boundary matrix has the wrong shape")
        for k in _CHECK_K_GRID:
            alam = model.hopping(k) @ lam
            if hermitian_violation(alam) > 1e-10 * max(1.0, np.linalg.norm(alam)):
                raise ConfigError("A(k) Lambda must be Hermitian to fold the "
                                  "boundary condition")
        if not zone:
            zone.append(dict(model.v_harmonics[0]))
        first = dict(zone[0])
        for m, mat in model.a_harmonics.items():
            first[m] = first.get(m, 0) + np.asarray(mat, dtype=complex) @ lam
        zone[0] = first

    edge = EdgeModelSpec(model, len(zone), tuple(zone))
    for k in _CHECK_K_GRID:
        for site in range(1, edge.n0 + 1):
            v = edge.vsharp(site, k)
            if hermitian_violation(v) > 1e-10 * max(1.0, np.linalg.norm(v)):
                raise ConfigError(f"edge potential at site {site} is not Hermitian")
    return edge


# ---------------------------------------------------------------------------
# Time-reversal normal form
# ---------------------------------------------------------------------------

def conjugate_model(model: ModelSpec, u: np.ndarray) -> ModelSpec:
    """Unitary change of the internal basis, psi -> U psi sitewise."""
    uh = u.conj().T
    a_new = {m: u @ np.asarray(mat) @ uh for m, mat in model.a_harmonics.items()}
    v_new = tuple({m: u @ np.asarray(mat) @ uh for m, mat in site.items()}
                  for site in model.v_harmonics)
    theta = None
    if model.theta is not None:
        theta = u @ model.theta @ u.T
    return replace(model, a_harmonics=a_new, v_harmonics=v_new, theta=theta)


def normalize_theta(model: ModelSpec):
    """Rotate the internal basis so theta becomes minus the standard
    symplectic form (Kramers pairs sit in adjacent coordinates).

    Returns (rotated model, U). Antiunitarity makes the construction
    elementary: pick a unit vector u, adjoin -Theta u, and repeat in the
    orthogonal complement, which Theta preserves.
    """
    if model.theta is None:
        raise ConfigError("model has no time-reversal operator")
    validate_model(model)
    n = model.n_orb
    th = np.asarray(model.theta, dtype=complex)
    basis: list[np.ndarray] = []
    for seed in np.eye(n, dtype=complex).T:
        if len(basis) == n:
            break
        w = seed.copy()
        for b in basis:
            w -= b * (b.conj() @ w)
        if np.linalg.norm(w) < 1e-8:
            continue
        u_vec = w / np.linalg.norm(w)
        v_vec = -(th @ u_vec.conj())
        for b in basis + [u_vec]:
            v_vec -= b * (b.conj() @ v_vec)
        v_vec /= np.linalg.norm(v_vec)
        basis += [u_vec, v_vec]
    u = np.array(basis).conj()
    target = -_standard_eps(n)
    rotated = conjugate_model(model, u)
    if np.linalg.norm(rotated.theta - target) > 1e-9:
        raise ConfigError("theta normalization failed (is theta antiunitary "
                          "with square -1?)")
    rotated = replace(rotated, theta=target)
    return rotated, u


def _standard_eps(dim: int) -> np.ndarray:
    out = np.zeros((dim, dim), dtype=complex)
    for i in range(0, dim, 2):
        out[i, i + 1] = -1.0
        out[i + 1, i] = 1.0
    return out


# ---------------------------------------------------------------------------
# Model files
# ---------------------------------------------------------------------------

def _entries_from_harmonics(harm: Harmonics) -> list:
    out = []
    for m in sorted(harm):
        mat = np.asarray(harm[m], dtype=complex)
        out.append({"m": int(m), "re": mat.real.tolist(), "im": mat.imag.tolist()})
    return out


def _harmonics_from_entries(entries, n: int) -> Harmonics:
    harm: Harmonics = {}
    for ent in entries:
        try:
            m = int(ent["m"])
            mat = np.asarray(ent["re"], dtype=float) + 1j * np.asarray(
                ent["im"], dtype=float)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad harmonic entry: {exc}") from exc
        if mat.shape != (n, n):
            raise ConfigError(f"harmonic {m} has shape {mat.shape}, expected "
                              f"({n}, {n})")
        harm[m] = mat
    return harm


def model_to_dict(obj) -> dict:
    """JSON-ready dictionary for a bulk or edge model."""
    edge = None
    if isinstance(obj, EdgeModelSpec):
        edge, model = obj, obj.bulk
    else:
        model = obj
    doc = {
        "n": model.n_orb,
        "m": model.period,
        "mu": model.mu,
        "label": model.label,
        "a_harmonics": _entries_from_harmonics(model.a_harmonics),
        "v": [_entries_from_harmonics(site) for site in model.v_harmonics],
    }
    if model.theta is not None:
        th = np.asarray(model.theta, dtype=complex)
        doc["theta"] = {"re": th.real.tolist(), "im": th.imag.tolist(),
                        "conjugate": True}
    if edge is not None:
        doc["edge"] = {
            "n0": edge.n0,
            "vsharp": [_entries_from_harmonics(site)
                       for site in edge.vsharp_harmonics],
        }
    return doc


def model_from_dict(doc: dict):
    """Inverse of model_to_dict; returns ModelSpec or EdgeModelSpec."""
    try:
        n = int(doc["n"])
        m = int(doc["m"])
        mu = float(doc.get("mu", 0.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"bad model document: {exc}") from exc
    a = _harmonics_from_entries(doc.get("a_harmonics", []), n)
    v_entries = doc.get("v", [])
    if len(v_entries) != m:
        raise ConfigError(f"expected {m} per-site potential lists, "
                          f"got {len(v_entries)}")
    v = tuple(_harmonics_from_entries(site, n) for site in v_entries)
    theta = None
    if "theta" in doc:
        tdoc = doc["theta"]
        if not tdoc.get("conjugate", True):
            raise ConfigError("only antilinear theta operators are supported")
        theta = np.asarray(tdoc["re"], dtype=float) + 1j * np.asarray(
            tdoc["im"], dtype=float)
    model = ModelSpec(n, m, a, v, theta, mu, str(doc.get("label", "")))
    validate_model(model)
    if "edge" in doc:
        edoc = doc["edge"]
        n0 = int(edoc.get("n0", 0))
        vs = tuple(_harmonics_from_entries(site, n)
                   for site in edoc.get("vsharp", []))
        if len(vs) != n0:
            raise ConfigError("edge zone depth does not match vsharp list")
        return EdgeModelSpec(model, n0, vs)
    return model


def dump_model(obj, path) -> None:
    atomic_write_text(path, json.dumps(model_to_dict(obj), indent=2) + "\n")


def load_model(path):
    """Read a model file; parse errors carry line/column information."""
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read model file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"model file parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    return model_from_dict(doc)
