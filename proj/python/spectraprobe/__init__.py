"""Spectral diagnostics of attention-induced token graphs."""

from ._core import (
    DataError,
    IoError,
    NumericalError,
    UsageError,
    __version__,
    bh_fdr,
    bootstrap_ci,
    correlations,
    delta_sym,
    diagnostics,
    dirichlet_energy,
    eigenvalues,
    fiedler,
    laplacian,
    permutation_test,
    rci,
    read_tensor,
    run_cli,
    shd_calibrate,
    shd_detect,
    trimmed_hedges_g,
    validate_bundle,
    write_tensor,
)

__all__ = [
    "DataError",
    "IoError",
    "NumericalError",
    "UsageError",
    "__version__",
    "bh_fdr",
    "bootstrap_ci",
    "correlations",
    "delta_sym",
    "diagnostics",
    "dirichlet_energy",
    "eigenvalues",
    "fiedler",
    "laplacian",
    "permutation_test",
    "rci",
    "read_tensor",
    "run_cli",
    "shd_calibrate",
    "shd_detect",
    "trimmed_hedges_g",
    "validate_bundle",
    "write_tensor",
]
