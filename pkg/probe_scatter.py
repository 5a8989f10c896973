import numpy as np

from edgetopo.errors import AssumptionError, NumericalError
from edgetopo.model import build_model, edge_model
from edgetopo import scatter, transfer

edge_h = edge_model(build_model("haldane", t=1.0, tp=0.1))
edge_s = edge_model(build_model("scalar_chain", t=1.0))


def lifted_pair(chart, kappa):
    b = chart.kappa_plus
    rel = np.angle(np.exp(1j * (kappa - b)))
    kl = b + rel
    rw = scatter.reflection_map(chart, kappa)
    rl = b - ((b - rw) % (2 * np.pi))
    return kl, rl


# --- C4 identity: C(psi*, psi) = -i lam'(kappa) * |v|^2 per Bloch wave ---
for name, edge in (("scalar", edge_s), ("haldane", edge_h)):
    k = 1.0 if name == "haldane" else 0.0
    chart = scatter.band_chart(edge, 0, k)
    for dk in (0.4, 1.1):
        kappa = chart.kappa_plus + dk
        kl, rl = lifted_pair(chart, kappa)
        vin, vout = scatter._section_pair(chart, kl, rl)
        lamp = chart.lam_deriv(kl)
        xi = np.exp(1j * kl)
        sites = np.arange(8)
        psi = (xi ** sites)[:, None] * vin[None, :]
        phi = psi.conj()
        c = transfer.casoratian(edge.bulk, k, phi, psi, 3)
        pred = -1j * lamp * np.vdot(vin, vin)
        print(f"{name} kappa=+{dk:.2f}: C={c:.6e} pred={pred:.6e} "
              f"diff={abs(c - pred):.2e}")

# --- matched solution: net flux zero through in/out split ---
k = 1.0
chart = scatter.band_chart(edge_h, 0, k)
kap = chart.kappa_plus + 0.35
fin, fout, s = scatter.edge_scattering_solution(edge_h, chart, kap)
kl, rl = lifted_pair(chart, kap)
vin, vout = scatter._section_pair(chart, kl, rl)
lam_in = chart.lam_deriv(kl)
lam_out = chart.lam_deriv(rl)
flux_in = -1j * lam_in * abs(fin) ** 2 * np.vdot(vin, vin)
flux_out = -1j * lam_out * abs(fout) ** 2 * np.vdot(vout, vout)
print("flux in:", flux_in, "flux out:", flux_out)
print("net:", abs(flux_in + flux_out), " |S|:", abs(s))

# --- coarse grid through the event: does scatter_trace raise? ---
grid = np.linspace(2.3, 1.6, 7)
try:
    tr = scatter.scatter_trace(edge_h, 0, grid, delta=1e-2)
    print("coarse trace ok, phase:", tr.phase_change)
except NumericalError as e:
    print("coarse trace raised NumericalError:", e)
except AssumptionError as e:
    print("coarse trace raised AssumptionError:", e)

# --- degenerate-window grid for semi_bound_scan -> expect [] ---
ks = scatter.semi_bound_scan(edge_h, 0, np.linspace(2.8, 3.5, 8))
print("window scan:", ks)

# --- frozen chart numbers ---
print("haldane chart k=1: kp=%.9f km=%.9f top=%.9f bottom=%.9f curv+=%.6f"
      % (chart.kappa_plus, chart.kappa_minus, chart.top, chart.bottom,
         chart.curvature_plus))
ch_s = scatter.band_chart(edge_s, 0, 0.0)
print("scalar chart: kp=%.9f km=%.9f top=%.9f bottom=%.9f"
      % (ch_s.kappa_plus, ch_s.kappa_minus, ch_s.top, ch_s.bottom))

# --- ribbon oracle near k* = 1.8954: states above top(k) ---
from edgetopo.halfline import truncate
for kk in (1.85, 1.95):
    chh = scatter._trace_chart(edge_h, 0, kk)
    h = truncate(edge_h, 900, kk)
    ev = np.linalg.eigvalsh(h)
    above = ev[(ev > chh.top + 5e-4) & (ev < chh.top + 0.05)]
    print(f"k={kk}: top={chh.top:.6f} states in (top+5e-4, top+0.05): {above}")
