"""DPG Poisson discretization on uniform quad meshes with an overlapping additive Schwarz preconditioner."""
__version__ = "0.1.0"

from .mesh import Mesh, MeshError, build_mesh, build_partition_of_unity, build_subdomains  # noqa: E402
from .dpg_core import assemble, build_dofmap, energy_norm_components, l2_errors  # noqa: E402
from .schwarz import (  # noqa: E402
    ConfigurationError,
    SchwarzPreconditioner,
    build_dof_sets,
    build_preconditioner,
    pcg,
    spectral_bounds,
    verify_stable_decomposition,
)
