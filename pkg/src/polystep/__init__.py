"""PolyStep: forward-only optimization by soft assignment over polytope probes."""

from polystep.geometry import (
    ParticleMatrix,
    PolytopeTemplate,
    params_to_particles,
    particles_to_params,
    polytope_vertices,
    probe_points,
    sample_biased_rotation,
    sample_rotation,
    step_vertices,
)

__version__ = "0.1.0"

__all__ = [
    "ParticleMatrix",
    "PolytopeTemplate",
    "params_to_particles",
    "particles_to_params",
    "polytope_vertices",
    "probe_points",
    "sample_biased_rotation",
    "sample_rotation",
    "step_vertices",
    "__version__",
]
