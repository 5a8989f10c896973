"""Exception hierarchy shared across the package.

Three families, matching the three failure exit codes of the CLI:
configuration problems (bad input, exit 4), violated model assumptions
(exit 2), and numerical failures such as tolerance or rank checks that
did not survive refinement (exit 3).
"""


class EdgeTopoError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ConfigError(EdgeTopoError):
    """Malformed input: unknown model, bad parameter, unparsable file."""

    exit_code = 4


class AssumptionError(EdgeTopoError):
    """A documented model assumption fails (gap closed, wrong symmetry,
    band shape outside the supported class)."""

    exit_code = 2


class NumericalError(EdgeTopoError):
    """A numerical contract could not be met (rank/tolerance/step checks)."""

    exit_code = 3


class NearSpectrumError(NumericalError):
    """Quasimomentum roots too close to the unit circle: the requested
    energy sits on (or within the classification margin of) the bulk
    spectrum."""


class CapabilityError(AssumptionError):
    """Operation needs an invertible hopping matrix (or similar) and the
    model does not provide one at this momentum."""
