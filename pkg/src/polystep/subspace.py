"""Subspace projections decoupling search dimension from model size.

Five modes share one interface: ``d_sub``, ``d_full``, ``reconstruct(z)``
mapping subspace coordinates to a full-space displacement, and
``project_loss`` building the subspace objective closure.

* full: identity, d_sub = d_full.
* hybrid: per-layer dense Gaussian blocks sized by a factored low-rank
  parametrization; bias vectors pass through at full dimension.
* linear: one global dense Gaussian matrix.
* sparse_linear: sparse Rademacher columns (Johnson-Lindenstrauss style).
* adaptive: linear, except the first column tracks an EMA of observed
  full-space displacement directions and the rest are periodically
  redrawn.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse

__all__ = [
    "LayerShape",
    "SubspaceProjection",
    "build_full",
    "build_hybrid",
    "build_linear",
    "build_adaptive",
    "reconstruct",
    "reconstruct_many",
    "project_loss",
    "blockwise_partition",
    "hybrid_subspace_dim",
]

ADAPTIVE_REFRESH_INTERVAL = 10


@dataclass(frozen=True)
class LayerShape:
    """One weight or bias tensor: (d_out, d_in), biases carry d_in = 0."""

    name: str
    d_out: int
    d_in: int = 0

    def __post_init__(self):
        if self.d_out < 1:
            raise ValueError(f"layer {self.name!r} needs d_out >= 1")
        if self.d_in < 0:
            raise ValueError(f"layer {self.name!r} has negative d_in")

    @property
    def is_bias(self) -> bool:
        return self.d_in == 0

    @property
    def size(self) -> int:
        return self.d_out * max(self.d_in, 1)


@dataclass
class SubspaceProjection:
    """A fixed (or slowly adapting) linear map from R^{d_sub} to R^{d_full}."""

    mode: str
    d_full: int
    d_sub: int
    seed: int
    blocks: list = field(default_factory=list)  # hybrid: (full_slice, matrix|None)
    matrix: object = None  # linear/sparse/adaptive: (d_full, d_sub)
    ema_decay: float = 0.0
    refresh_interval: int = ADAPTIVE_REFRESH_INTERVAL
    _ema_direction: np.ndarray | None = None
    _note_count: int = 0
    _refresh_rng: np.random.Generator | None = None

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return reconstruct(self, z)

    def note_displacement(self, displacement: np.ndarray) -> None:
        """Feed one full-space displacement into the adaptive first column."""
        if self.mode != "adaptive":
            return
        disp = np.asarray(displacement, dtype=float)
        norm = np.linalg.norm(disp)
        if norm == 0.0 or not np.isfinite(norm):
            return
        direction = disp / norm
        if self._ema_direction is None or self.ema_decay == 1.0:
            if self._ema_direction is None:
                self._ema_direction = direction.copy()
        else:
            self._ema_direction = (
                self.ema_decay * self._ema_direction
                + (1.0 - self.ema_decay) * direction
            )
        self._note_count += 1
        col = self._ema_direction / np.linalg.norm(self._ema_direction)
        self.matrix[:, 0] = col * np.sqrt(self.d_full / self.d_sub)
        if self._note_count % self.refresh_interval == 0:
            fresh = self._refresh_rng.standard_normal(
                (self.d_full, self.d_sub - 1)
            ) / np.sqrt(self.d_sub)
            self.matrix[:, 1:] = fresh


def build_full(d_full: int) -> SubspaceProjection:
    """Identity projection: subspace coordinates are the parameters."""
    return SubspaceProjection(mode="full", d_full=d_full, d_sub=d_full, seed=0)


def hybrid_subspace_dim(layers, rank: int) -> int:
    """Subspace size of the per-layer factored parametrization.

    Weight layer (d_out, d_in) contributes (d_out + d_in) * r_l coordinates
    with r_l = min(rank, d_out, d_in); bias vectors pass through whole.
    """
    total = 0
    for layer in layers:
        if layer.is_bias:
            total += layer.d_out
        else:
            r_l = min(rank, layer.d_out, layer.d_in)
            total += (layer.d_out + layer.d_in) * r_l
    return total


def build_hybrid(
    layers,
    rank: int,
    rng: np.random.Generator,
    seed: int = 0,
    max_subspace_dim: int | None = None,
) -> SubspaceProjection:
    """Per-layer dense Gaussian blocks; biases identity at full dimension.

    Each weight layer of d_l parameters gets a d_l x n_l Gaussian block
    with n_l = (d_out + d_in) * r_l and entry variance 1/n_l. When
    ``max_subspace_dim`` is given and the total exceeds it, every r_l is
    scaled down proportionally (minimum 1).
    """
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    layers = list(layers)
    ranks = {
        layer.name: min(rank, layer.d_out, layer.d_in)
        for layer in layers
        if not layer.is_bias
    }
    if max_subspace_dim is not None:
        total = hybrid_subspace_dim(layers, rank)
        if total > max_subspace_dim:
            scale = max_subspace_dim / total
            ranks = {name: max(1, int(r * scale)) for name, r in ranks.items()}

    blocks = []
    offset = 0
    d_sub = 0
    for layer in layers:
        full_slice = slice(offset, offset + layer.size)
        if layer.is_bias:
            blocks.append((full_slice, None, layer.d_out))
            d_sub += layer.d_out
        else:
            r_l = ranks[layer.name]
            n_l = (layer.d_out + layer.d_in) * r_l
            block = rng.standard_normal((layer.size, n_l)) / np.sqrt(n_l)
            blocks.append((full_slice, block, n_l))
            d_sub += n_l
        offset += layer.size
    return SubspaceProjection(
        mode="hybrid",
        d_full=offset,
        d_sub=d_sub,
        seed=seed,
        blocks=blocks,
    )


def build_linear(
    d_full: int,
    r: int,
    rng: np.random.Generator,
    sparse: bool = False,
    seed: int = 0,
) -> SubspaceProjection:
    """Global projection: dense Gaussian (variance 1/r) or sparse Rademacher.

    The sparse variant draws each column's support size from
    Binomial(d_full, 1/sqrt(d_full)) (floored at 1) and sets entries to
    +-1/sqrt(nnz_col), so every column has Euclidean norm exactly 1.
    """
    if not 1 <= r <= d_full:
        raise ValueError(f"r must lie in [1, {d_full}], got {r}")
    if not sparse:
        matrix = rng.standard_normal((d_full, r)) / np.sqrt(r)
        return SubspaceProjection(
            mode="linear", d_full=d_full, d_sub=r, seed=seed, matrix=matrix
        )
    density = 1.0 / np.sqrt(d_full)
    cols = []
    rows = []
    vals = []
    for j in range(r):
        nnz = max(1, int(rng.binomial(d_full, density)))
        support = rng.choice(d_full, size=nnz, replace=False)
        signs = rng.choice([-1.0, 1.0], size=nnz)
        rows.append(support)
        cols.append(np.full(nnz, j))
        vals.append(signs / np.sqrt(nnz))
    matrix = scipy.sparse.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(d_full, r),
    )
    return SubspaceProjection(
        mode="sparse_linear", d_full=d_full, d_sub=r, seed=seed, matrix=matrix
    )


def build_adaptive(
    d_full: int,
    r: int,
    rng: np.random.Generator,
    ema_decay: float = 0.9,
    refresh_interval: int = ADAPTIVE_REFRESH_INTERVAL,
    seed: int = 0,
) -> SubspaceProjection:
    """Displacement-biased projection.

    Starts as a dense Gaussian map. note_displacement folds observed
    full-space displacement directions into an EMA that occupies the first
    column (rescaled to the Gaussian column's expected norm); the other
    columns are redrawn every ``refresh_interval`` notes.
    """
    if r < 2:
        raise ValueError(f"adaptive mode needs r >= 2, got {r}")
    if not 0.0 <= ema_decay <= 1.0:
        raise ValueError("ema_decay must lie in [0, 1]")
    matrix = rng.standard_normal((d_full, r)) / np.sqrt(r)
    proj = SubspaceProjection(
        mode="adaptive",
        d_full=d_full,
        d_sub=r,
        seed=seed,
        matrix=matrix,
        ema_decay=ema_decay,
        refresh_interval=refresh_interval,
    )
    proj._refresh_rng = rng
    return proj


def reconstruct(proj: SubspaceProjection, z: np.ndarray) -> np.ndarray:
    """Map subspace coordinates to a full-space displacement, delta = P z."""
    z = np.asarray(z, dtype=float)
    if z.shape != (proj.d_sub,):
        raise ValueError(
            f"expected coordinates of shape ({proj.d_sub},), got {z.shape}"
        )
    if proj.mode == "full":
        return z.copy()
    if proj.mode == "hybrid":
        delta = np.empty(proj.d_full)
        z_off = 0
        for full_slice, block, width in proj.blocks:
            piece = z[z_off : z_off + width]
            if block is None:
                delta[full_slice] = piece
            else:
                delta[full_slice] = block @ piece
            z_off += width
        return delta
    return np.asarray(proj.matrix @ z).ravel()


def reconstruct_many(proj: SubspaceProjection, coords: np.ndarray) -> np.ndarray:
    """Row-batched :func:`reconstruct`: (N, d_sub) -> (N, d_full)."""
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[1] != proj.d_sub:
        raise ValueError(
            f"expected (N, {proj.d_sub}) coordinates, got {coords.shape}"
        )
    if proj.mode == "full":
        return coords.copy()
    if proj.mode == "hybrid":
        out = np.empty((coords.shape[0], proj.d_full))
        z_off = 0
        for full_slice, block, width in proj.blocks:
            piece = coords[:, z_off : z_off + width]
            out[:, full_slice] = piece if block is None else piece @ block.T
            z_off += width
        return out
    if scipy.sparse.issparse(proj.matrix):
        return np.asarray((proj.matrix @ coords.T).T)
    return coords @ proj.matrix.T


def project_loss(proj: SubspaceProjection, base_theta: np.ndarray, loss):
    """Subspace loss closure z -> loss(base_theta + reconstruct(z))."""
    base_theta = np.asarray(base_theta, dtype=float)

    def subspace_loss(z):
        return loss(base_theta + reconstruct(proj, z))

    return subspace_loss


def blockwise_partition(particles: np.ndarray, layer_blocks):
    """Split particle rows into contiguous per-layer groups.

    Parameters
    ----------
    particles : ndarray, shape (P, d_p)
    layer_blocks : list of int
        Particle counts per block, in order; must sum to P.

    Returns
    -------
    list of ndarray views, one per block.
    """
    counts = list(layer_blocks)
    if sum(counts) != particles.shape[0]:
        raise ValueError(
            f"block sizes {counts} do not cover {particles.shape[0]} particles"
        )
    if any(c < 1 for c in counts):
        raise ValueError("every block needs at least one particle")
    out = []
    start = 0
    for c in counts:
        out.append(particles[start : start + c])
        start += c
    return out
