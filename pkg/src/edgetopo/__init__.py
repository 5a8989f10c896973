"""Bulk and edge topological indices for edge-periodic tight-binding models."""

from .bundle import (BundleGrid, bloch_bundle, bulk_index_qh, bulk_index_ti,
                     chern_index, holonomy, rotate_fibers, solution_bundle,
                     z2_index)
from .errors import (AssumptionError, CapabilityError, ConfigError,
                     EdgeTopoError, NearSpectrumError, NumericalError)
from .halfline import (Branch, EdgeSpectrum, count_crossings_qh,
                       count_crossings_ti, edge_spectrum, truncate)
from .index import (PhaseFamily, det_winding, endpoint_degenerate_index,
                    fu_kane_index, kramers_check, pfaffian, phase_family,
                    random_kramers, winding)
from .model import (BUILTIN_MODELS, EdgeModelSpec, ModelSpec, bloch_hamiltonian,
                    build_model, check_time_reversal, edge_model, load_model,
                    dump_model, normalize_theta, spectral_gap, supercell)
from .scatter import (BandChart, ScatterTrace, band_chart, bloch_section,
                      casoratian_flux, edge_scattering_solution,
                      full_circle_winding, levinson_delta, reflection_map,
                      scatter_trace, semi_bound_coefficient, semi_bound_scan,
                      transition_winding)
from .transfer import (LaurentPoly, bloch_poly, casoratian, decaying_frame,
                       edge_boundary_frame, edge_vanishing, l_matrix,
                       l_min_eigenvalue_slope, one_period_transfer,
                       transfer_roots)

__version__ = "0.1.0"
