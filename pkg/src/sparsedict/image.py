"""Patch extraction, DCT initialisation and patch-based reconstruction.

Solvers work on grey levels by default; every entry point takes ``unit=True``
to work on pixels divided by 255 instead. Patches are column-stacked in column-major order: entry ``r + s*c`` of a
patch vector is pixel ``(r, c)`` of the ``s x s`` window. Extraction and
reassembly both go through :func:`_windows`, so the convention cannot drift.
"""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .solvers import BpdnProblem, solve
from .types import DimensionError, Dictionary, GrayImage


@dataclass(frozen=True)
class PatchGrid:
    """All fully contained ``side x side`` windows at the given stride."""

    patch_side: int
    stride: int
    image_shape: tuple

    def __post_init__(self):
        H, W = self.image_shape
        if self.patch_side < 1 or self.stride < 1:
            raise ValueError("patch side and stride must be positive")
        if self.patch_side > min(H, W):
            raise DimensionError(
                f"patch side {self.patch_side} exceeds image dimensions {H}x{W}"
            )

    @property
    def n_rows(self):
        return (self.image_shape[0] - self.patch_side) // self.stride + 1

    @property
    def n_cols(self):
        return (self.image_shape[1] - self.patch_side) // self.stride + 1

    @property
    def n_patches(self):
        return self.n_rows * self.n_cols

    def origins(self):
        """``(n_patches, 2)`` array of top-left corners in raster order."""
        r = np.arange(self.n_rows) * self.stride
        c = np.arange(self.n_cols) * self.stride
        rr, cc = np.meshgrid(r, c, indexing="ij")
        return np.column_stack([rr.ravel(), cc.ravel()])

    def coverage(self):
        """Number of patches covering each pixel."""
        counts = np.zeros(self.image_shape, dtype=np.int64)
        s = self.patch_side
        for r, c in self.origins():
            counts[r : r + s, c : c + s] += 1
        return counts


def _windows(arr, grid):
    # view of shape (n_rows, n_cols, s, s)
    s, st = grid.patch_side, grid.stride
    return sliding_window_view(arr, (s, s))[::st, ::st][: grid.n_rows, : grid.n_cols]


def patches_from_array(arr, patch_side, stride):
    """Patch matrix ``(s*s, n_patches)`` of a 2-d array, plus its grid."""
    arr = np.asarray(arr, dtype=np.float64)
    grid = PatchGrid(patch_side, stride, arr.shape)
    w = _windows(arr, grid)
    m = patch_side * patch_side
    # swap the in-window axes so a C-order reshape stacks columns
    P = w.transpose(0, 1, 3, 2).reshape(grid.n_patches, m).T
    return np.ascontiguousarray(P), grid


def working_pixels(img, unit=False):
    """Pixels on the scale the solvers see: grey levels, or [0, 1] when ``unit``."""
    return img.to_unit() if unit else img.pixels


def extract_patches(img, patch_side, stride, unit=False):
    """Every fully contained patch of ``img`` in raster order."""
    return patches_from_array(working_pixels(img, unit), patch_side, stride)


def reassemble(P, grid, fill=None):
    """Overlap-average patch columns back into an image.

    Returns ``(image, coverage)``. Pixels no patch covers take their value from
    ``fill`` when given, otherwise 0.
    """
    P = np.asarray(P, dtype=np.float64)
    s = grid.patch_side
    if P.shape != (s * s, grid.n_patches):
        raise DimensionError(f"patch matrix {P.shape} does not fit grid {grid}")
    acc = np.zeros(grid.image_shape)
    counts = np.zeros(grid.image_shape, dtype=np.int64)
    blocks = P.T.reshape(grid.n_patches, s, s).transpose(0, 2, 1)
    for (r, c), block in zip(grid.origins(), blocks):
        acc[r : r + s, c : c + s] += block
        counts[r : r + s, c : c + s] += 1
    covered = counts > 0
    out = np.zeros(grid.image_shape) if fill is None else np.array(fill, dtype=np.float64)
    out[covered] = acc[covered] / counts[covered]
    return out, counts


def sample_training_set(images, patch_side, stride, n, seed, unit=False):
    """Draw ``n`` patches uniformly, with replacement, from all images' grids.

    Returns an ``(s*s, n)`` matrix.
    """
    grids = []
    for img in images:
        if patch_side <= min(img.shape):
            grids.append((img, PatchGrid(patch_side, stride, img.shape)))
    sizes = np.array([g.n_patches for _, g in grids], dtype=np.int64)
    if not sizes.sum():
        raise ValueError("no image admits a patch of this size")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, sizes.sum(), size=n)
    bounds = np.cumsum(sizes)
    which = np.searchsorted(bounds, picks, side="right")
    s = patch_side
    out = np.empty((s * s, n))
    units = {}
    for i, (w, pick) in enumerate(zip(which, picks)):
        img, grid = grids[w]
        if w not in units:
            units[w] = working_pixels(img, unit)
        local = pick - (bounds[w] - sizes[w])
        r, c = divmod(int(local), grid.n_cols)
        r0, c0 = r * stride, c * stride
        out[:, i] = units[w][r0 : r0 + s, c0 : c0 + s].ravel(order="F")
    return out


def pool_size(images, patch_side, stride):
    return sum(
        PatchGrid(patch_side, stride, img.shape).n_patches
        for img in images
        if patch_side <= min(img.shape)
    )


def dct_basis_1d(patch_side, q):
    """``patch_side x q`` overcomplete cosine block, non-DC columns mean-centred."""
    r = np.arange(patch_side)[:, None]
    c = np.arange(q)[None, :]
    V = np.cos(np.pi * c * (2 * r + 1) / (2 * q))
    V[:, 1:] -= V[:, 1:].mean(axis=0)
    return V


def overcomplete_dct_dictionary(patch_side, n_atoms):
    """Separable overcomplete DCT dictionary with unit-norm atoms."""
    m = patch_side * patch_side
    if n_atoms < m:
        raise ValueError(f"need at least {m} atoms for {patch_side}x{patch_side} patches")
    q = math.isqrt(n_atoms - 1) + 1
    V = dct_basis_1d(patch_side, q)
    D = np.kron(V, V)[:, :n_atoms]
    D /= np.linalg.norm(D, axis=0)
    return Dictionary(D)


def n_threads():
    try:
        return max(1, int(os.environ.get("SPARSEDICT_THREADS", "1")))
    except ValueError:
        return 1


@dataclass
class ReconstructionReport:
    rel_err: float
    eps2: float
    criterion_met: bool
    uncovered_pixels: int
    solver_iterations: int


def sparse_code_patches(P, D, settings, threads=None):
    """Sparse-code every column of ``P``; columns are split across threads."""
    threads = threads or n_threads()
    K = P.shape[1]
    if threads == 1 or K < 2 * threads:
        X, trace = solve(BpdnProblem(D, P, settings.mu), None, settings)
        return X, np.asarray(trace.iterations)
    chunks = np.array_split(np.arange(K), threads)

    def run(cols):
        return solve(BpdnProblem(D, P[:, cols], settings.mu), None, settings)

    with ThreadPoolExecutor(threads) as pool:
        results = list(pool.map(run, chunks))
    X = np.hstack([x for x, _ in results])
    iters = np.concatenate([np.asarray(t.iterations) for _, t in results])
    return X, iters


def reconstruct_from_codes(X, D, grid, original, unit=False):
    """Rebuild an image from its coefficient matrix; returns ``(GrayImage, uncovered)``."""
    atoms = D.atoms if isinstance(D, Dictionary) else np.asarray(D)
    arr, counts = reassemble(atoms @ X, grid, fill=working_pixels(original, unit))
    rec = GrayImage.from_unit(arr) if unit else GrayImage(arr)
    return rec, int(np.sum(counts == 0))


def reconstruct_image(img, D, settings, patch_side, stride, threads=None, unit=False):
    """Code every patch of ``img`` against ``D`` and overlap-average the result.

    Returns ``(reconstruction, X, report)`` with ``X`` of shape
    ``(n_atoms, n_patches)``. ``settings.eps_rel`` acts as the per-patch
    tolerance; the report evaluates the image-level Frobenius criterion.
    Uncovered border pixels are copied from ``img`` and counted in the report.
    """
    if D.atom_dim != patch_side * patch_side:
        raise DimensionError(
            f"dictionary atoms have dimension {D.atom_dim}, patches {patch_side}x{patch_side}"
        )
    P, grid = extract_patches(img, patch_side, stride, unit)
    X, iters = sparse_code_patches(P, D, settings, threads)
    rec, uncovered = reconstruct_from_codes(X, D, grid, img, unit)
    diff = np.linalg.norm(img.pixels - rec.pixels)
    ref = np.linalg.norm(img.pixels)
    rel = diff / ref if ref > 0 else float(diff > 0)
    report = ReconstructionReport(
        rel_err=float(rel),
        eps2=settings.eps_rel,
        criterion_met=bool(diff <= settings.eps_rel * ref),
        uncovered_pixels=uncovered,
        solver_iterations=int(iters.sum()),
    )
    return rec, X, report
