"""Polytope templates, random rotations, and probe-point geometry.

Everything here is a pure function of its inputs; rotation sampling takes an
explicit ``numpy.random.Generator`` so callers own determinism.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "PolytopeTemplate",
    "ParticleMatrix",
    "polytope_vertices",
    "sample_rotation",
    "sample_biased_rotation",
    "params_to_particles",
    "particles_to_params",
    "step_offsets",
    "step_vertices",
    "probe_points",
]

POLYTOPE_KINDS = ("orthoplex", "simplex", "cube")

CUBE_MAX_DIM = 8


@dataclass(frozen=True)
class PolytopeTemplate:
    """A fixed set of unit-scale vertex directions in R^{d_p}.

    Attributes
    ----------
    kind : str
        One of ``"orthoplex"``, ``"simplex"``, ``"cube"``.
    dim : int
        Particle dimension d_p.
    vertices : ndarray, shape (V, dim)
        Vertex direction vectors, each of norm at most 1.
    """

    kind: str
    dim: int
    vertices: np.ndarray

    @property
    def n_vertices(self) -> int:
        return self.vertices.shape[0]


@dataclass
class ParticleMatrix:
    """The flat parameter vector reshaped into P rows of dimension d_p.

    Trailing zero-padding is added when the source dimension is not divisible
    by d_p; padded entries stay zero and are dropped on the inverse mapping.
    """

    rows: np.ndarray
    pad_count: int
    source_dim: int

    @property
    def n_particles(self) -> int:
        return self.rows.shape[0]

    @property
    def particle_dim(self) -> int:
        return self.rows.shape[1]


def polytope_vertices(kind: str, d_p: int) -> PolytopeTemplate:
    """Build one of the three polytope templates.

    Parameters
    ----------
    kind : str
        ``"orthoplex"`` ({+-e_j}, 2*d_p vertices, vertex sum zero),
        ``"simplex"`` (corner simplex {0, e_1, ..., e_dp}, d_p+1 vertices,
        nonzero vertex sum), or ``"cube"`` ({+-1}^d_p scaled by 1/sqrt(d_p),
        2^d_p vertices).
    d_p : int
        Particle dimension, at least 2. Cube is capped at d_p <= 8.

    Returns
    -------
    PolytopeTemplate
    """
    if d_p < 2:
        raise ValueError(f"particle dimension must be >= 2, got {d_p}")
    kind = kind.lower()
    if kind == "orthoplex":
        eye = np.eye(d_p)
        verts = np.empty((2 * d_p, d_p))
        verts[0::2] = eye
        verts[1::2] = -eye
    elif kind == "simplex":
        verts = np.vstack([np.zeros((1, d_p)), np.eye(d_p)])
    elif kind == "cube":
        if d_p > CUBE_MAX_DIM:
            raise ValueError(
                f"cube has 2^d_p vertices; d_p={d_p} exceeds the cap of {CUBE_MAX_DIM}"
            )
        grid = np.array(
            np.meshgrid(*([[-1.0, 1.0]] * d_p), indexing="ij")
        ).reshape(d_p, -1).T
        verts = grid / np.sqrt(d_p)
    else:
        raise ValueError(f"unknown polytope kind {kind!r}; expected one of {POLYTOPE_KINDS}")
    verts.setflags(write=False)
    return PolytopeTemplate(kind=kind, dim=d_p, vertices=verts)


def sample_rotation(d_p: int, rng: np.random.Generator) -> np.ndarray:
    """Sample a Haar-uniform proper rotation in SO(d_p).

    For d_p = 2 the rotation is the exact analytic rotation by an angle drawn
    uniformly from [0, 2*pi). Higher dimensions use QR decomposition of a
    Gaussian matrix with the sign-of-R-diagonal correction that makes the
    result Haar-distributed, then a single column flip if needed to reach
    determinant +1.

    Parameters
    ----------
    d_p : int
        Dimension, at least 2.
    rng : numpy.random.Generator
        Seeded generator; the caller owns the stream.

    Returns
    -------
    ndarray, shape (d_p, d_p)
    """
    if d_p < 2:
        raise ValueError(f"rotation dimension must be >= 2, got {d_p}")
    if d_p == 2:
        theta = rng.uniform(0.0, 2.0 * np.pi)
        c, s = np.cos(theta), np.sin(theta)
        return np.array([[c, -s], [s, c]])
    gauss = rng.standard_normal((d_p, d_p))
    q, r = np.linalg.qr(gauss)
    # sign correction keeps the distribution Haar; sign(0) treated as +1
    diag = np.diagonal(r)
    signs = np.where(diag < 0.0, -1.0, 1.0)
    q = q * signs
    if np.linalg.det(q) < 0.0:
        q = q.copy()
        q[:, 0] = -q[:, 0]
    return q


def sample_biased_rotation(
    d_p: int,
    bias_direction: np.ndarray | None,
    strength: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Sample a proper rotation whose first column leans toward a direction.

    The first column is a spherical interpolation (weight ``strength``)
    between a Haar-random unit vector and ``bias_direction``; the remaining
    columns are a Haar rotation of the orthogonal complement. ``strength=0``
    reduces exactly to :func:`sample_rotation`; ``strength=1`` pins the first
    column to ``bias_direction``.

    Parameters
    ----------
    d_p : int
        Dimension, at least 2.
    bias_direction : ndarray or None
        Preferred direction; normalized internally. ``None`` or a zero vector
        falls back to the unbiased sampler.
    strength : float
        Interpolation weight in [0, 1].
    rng : numpy.random.Generator

    Returns
    -------
    ndarray, shape (d_p, d_p)
    """
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    if bias_direction is None or strength == 0.0:
        return sample_rotation(d_p, rng)
    bias = np.asarray(bias_direction, dtype=float)
    norm = np.linalg.norm(bias)
    if norm == 0.0 or not np.isfinite(norm):
        return sample_rotation(d_p, rng)
    bias = bias / norm

    first = _slerp_toward(bias, strength, d_p, rng)
    rot = _rotation_with_first_column(first, d_p, rng)
    return rot


def _slerp_toward(
    bias: np.ndarray, t: float, d_p: int, rng: np.random.Generator
) -> np.ndarray:
    """Spherical interpolation from a Haar-random unit vector toward bias."""
    if t == 1.0:
        return bias.copy()
    while True:
        u = rng.standard_normal(d_p)
        u_norm = np.linalg.norm(u)
        if u_norm < 1e-12:
            continue
        u = u / u_norm
        dot = float(np.clip(u @ bias, -1.0, 1.0))
        phi = np.arccos(dot)
        sin_phi = np.sin(phi)
        if sin_phi < 1e-9:
            # (anti)parallel draw: slerp is degenerate, nlerp decides
            w = (1.0 - t) * u + t * bias
            w_norm = np.linalg.norm(w)
            if w_norm < 1e-9:
                continue
            return w / w_norm
        return (np.sin((1.0 - t) * phi) * u + np.sin(t * phi) * bias) / sin_phi


def _rotation_with_first_column(
    first: np.ndarray, d_p: int, rng: np.random.Generator
) -> np.ndarray:
    """Proper rotation whose first column equals ``first`` exactly."""
    e1 = np.zeros(d_p)
    e1[0] = 1.0
    v = e1 - first
    v_norm_sq = float(v @ v)
    if v_norm_sq < 1e-30:
        householder = np.eye(d_p)
        det_h = 1.0
    else:
        householder = np.eye(d_p) - 2.0 * np.outer(v, v) / v_norm_sq
        det_h = -1.0
    # Haar rotation of the complement; flip one column so the product lands
    # in SO(d_p) regardless of the Householder determinant.
    if d_p == 2:
        block = np.array([[det_h]])
    else:
        block = sample_rotation(d_p - 1, rng)
        if det_h < 0.0:
            block = block.copy()
            block[:, 0] = -block[:, 0]
    full = np.eye(d_p)
    full[1:, 1:] = block
    rot = householder @ full
    rot[:, 0] = first  # kill rounding noise; column is exact by construction
    return rot


def params_to_particles(theta: np.ndarray, d_p: int) -> ParticleMatrix:
    """Reshape a flat parameter vector into P = ceil(d / d_p) particles.

    Row-major contiguous slicing with trailing zero-padding. The round trip
    through :func:`particles_to_params` is exact.
    """
    theta = np.asarray(theta, dtype=float).ravel()
    d = theta.size
    if d < 1:
        raise ValueError("parameter vector must have at least one entry")
    n_particles = -(-d // d_p)
    pad = n_particles * d_p - d
    padded = np.zeros(n_particles * d_p)
    padded[:d] = theta
    return ParticleMatrix(
        rows=padded.reshape(n_particles, d_p), pad_count=pad, source_dim=d
    )


def particles_to_params(particles: ParticleMatrix) -> np.ndarray:
    """Inverse of :func:`params_to_particles`: drop padding, flatten."""
    return particles.rows.reshape(-1)[: particles.source_dim].copy()


def step_offsets(
    rotation: np.ndarray,
    r_s: float,
    epsilon: float,
    template: PolytopeTemplate,
) -> np.ndarray:
    """Rotated step-vertex offsets r_s * epsilon * R @ v_j, one row per vertex.

    Kept separate from the absolute positions so displacement arithmetic can
    cancel opposing vertices exactly: for the orthoplex the +-e_j rows are
    exact sign flips of each other.
    """
    if epsilon <= 0.0 or r_s <= 0.0:
        raise ValueError("step radius and epsilon must be positive")
    return (r_s * epsilon) * (template.vertices @ rotation.T)


def step_vertices(
    x: np.ndarray,
    rotation: np.ndarray,
    r_s: float,
    epsilon: float,
    template: PolytopeTemplate,
) -> np.ndarray:
    """Rotated step vertices around one particle.

    v_{i,j} = x + r_s * epsilon * R @ v_j for every template vertex v_j.

    Returns
    -------
    ndarray, shape (V, d_p)
    """
    return x[None, :] + step_offsets(rotation, r_s, epsilon, template)


def probe_points(
    x: np.ndarray,
    rotation: np.ndarray,
    r_p: float,
    epsilon: float,
    eta: float,
    n_probes: int,
    template: PolytopeTemplate,
) -> np.ndarray:
    """Probe points along each rotated vertex direction.

    p_{v,k} = x + r_p * (1 + eta) * epsilon * lambda_k * R @ v_v with
    lambda_k = k / (K + 1), k = 1..K. For K=1 the single probe sits at half
    the (jittered) probe radius.

    Returns
    -------
    ndarray, shape (V, K, d_p)
    """
    if n_probes < 1:
        raise ValueError(f"need at least one probe per vertex, got {n_probes}")
    if not -1.0 < eta < 1.0:
        raise ValueError(f"jitter must lie in (-1, 1), got {eta}")
    lambdas = np.arange(1, n_probes + 1) / (n_probes + 1)
    directions = template.vertices @ rotation.T  # (V, d_p)
    scale = r_p * (1.0 + eta) * epsilon
    return x[None, None, :] + scale * lambdas[None, :, None] * directions[:, None, :]
