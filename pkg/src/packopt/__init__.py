"""CAD-free shape optimization of packing surfaces for mass transfer.

A single-phase surrogate model (stabilized Navier-Stokes plus a
convection-diffusion equation for a fictitious concentration) is solved
with P1 finite elements; the logarithmic mass transfer coefficient is
maximized by moving mesh vertices along adjoint shape gradients.
"""
import os as _os

_threads = _os.environ.get("PACKOPT_THREADS")
if _threads:
    # must happen before jax / BLAS are first imported
    _n = max(1, int(_threads))
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, str(_n))
    _os.environ.setdefault(
        "XLA_FLAGS",
        f"--xla_cpu_multi_thread_eigen={'false' if _n == 1 else 'true'} "
        f"intra_op_parallelism_threads={_n}",
    )

from .mesh import (  # noqa: E402
    BoundaryTag,
    InvalidDisplacement,
    Mesh,
    MeshError,
    apply_displacement,
    cell_quality,
    cell_volume,
    facet_normal_area,
    min_quality,
)
from .config import CaseConfig  # noqa: E402
from .metrics import CaseMetrics, evaluate_case  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "BoundaryTag",
    "CaseConfig",
    "CaseMetrics",
    "InvalidDisplacement",
    "Mesh",
    "MeshError",
    "apply_displacement",
    "cell_quality",
    "cell_volume",
    "evaluate_case",
    "facet_normal_area",
    "min_quality",
]
