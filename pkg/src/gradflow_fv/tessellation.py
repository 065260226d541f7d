"""Admissible tessellations: cells, canonically oriented faces, transmission
coefficients, quality checks and the FVMESH text format.

A tessellation stores each face once, oriented from the lower cell index to
the higher one.  Antisymmetric face data (fluxes, forces, potential jumps)
are stored relative to that orientation.

Cells may optionally carry an axis-aligned box ``[lo, hi]``; rectilinear
grids always do.  Boxes are needed for the inner-ball estimate, the face
normals used in the orthogonality check and the piecewise-constant
reconstruction.
"""
import math
import warnings
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from .errors import MeshFormatError

__all__ = [
    "Tessellation",
    "ValidationReport",
    "build_cartesian",
    "build_rectilinear",
    "validate",
    "diffusion_tensor",
    "first_moment_residual",
    "load_mesh",
    "save_mesh",
]


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


class Tessellation:
    """Immutable finite-volume mesh.

    Parameters
    ----------
    volumes : (n,) cell measures.
    centers : (n, dim) barycenters ``x_K``.
    faces : (m, 2) cell index pairs; reoriented so that ``K < L``.
    areas : (m,) face measures.
    h : mesh size (max cell diameter); estimated when omitted.
    bounds : optional (2, dim) domain box.
    boxes : optional (n, 2, dim) axis-aligned cell boxes.
    cell_ids : optional external ids written to / read from files.
    """

    def __init__(self, volumes, centers, faces, areas, h=None, bounds=None,
                 boxes=None, cell_ids=None, grid_edges=None):
        centers = np.asarray(centers, dtype=float)
        if centers.ndim == 1:
            centers = centers[:, None]
        self.dim = int(centers.shape[1])
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dimension must be 1, 2 or 3, got {self.dim}")
        self.volumes = _frozen(volumes)
        self.centers = _frozen(centers)
        n = self.volumes.size
        if self.centers.shape[0] != n:
            raise ValueError("volumes and centers disagree on the cell count")
        faces = np.asarray(faces, dtype=np.int64).reshape(-1, 2)
        faces = np.sort(faces, axis=1)
        self.faces = _frozen(faces, np.int64)
        self.areas = _frozen(np.asarray(areas, dtype=float).reshape(-1))
        if self.areas.size != self.faces.shape[0]:
            raise ValueError("faces and areas disagree on the face count")
        self.bounds = None if bounds is None else _frozen(np.asarray(bounds).reshape(2, self.dim))
        self.boxes = None if boxes is None else _frozen(np.asarray(boxes).reshape(n, 2, self.dim))
        self.cell_ids = _frozen(np.arange(n) if cell_ids is None else cell_ids, np.int64)
        self.grid_edges = None if grid_edges is None else tuple(_frozen(e) for e in grid_edges)
        self._check()
        self.h = float(h) if h is not None else self._estimate_h()

    # -- construction checks ------------------------------------------------
    def _check(self):
        n = self.n_cells
        if np.any(~(self.volumes > 0)):
            raise ValueError("cell volumes must be positive")
        if np.any(~(self.areas > 0)):
            raise ValueError("face areas must be positive")
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise ValueError("face references a missing cell")
        if np.any(self.faces[:, 0] == self.faces[:, 1]):
            raise ValueError("face joins a cell to itself")
        key = self.faces[:, 0] * n + self.faces[:, 1]
        if np.unique(key).size != key.size:
            raise ValueError("duplicate face")
        if np.any(self.dist <= 0):
            raise ValueError("neighbouring barycenters coincide")
        if self.bounds is not None:
            dom = float(np.prod(self.bounds[1] - self.bounds[0]))
            tot = float(np.sum(self.volumes))
            if abs(tot - dom) > 1e-10 * dom:
                raise ValueError(f"cell volumes sum to {tot!r}, domain volume is {dom!r}")

    def _estimate_h(self):
        if self.boxes is not None:
            return float(np.max(np.linalg.norm(self.boxes[:, 1] - self.boxes[:, 0], axis=1)))
        # Voronoi-type fallback: largest neighbour distance
        if self.n_faces:
            return float(np.max(self.dist))
        return float(self.volumes.max() ** (1.0 / self.dim))

    # -- basic queries -------------------------------------------------------
    @property
    def n_cells(self):
        return int(self.volumes.size)

    @property
    def n_faces(self):
        return int(self.faces.shape[0])

    @cached_property
    def delta(self):
        """``x_L - x_K`` per face, shape ``(m, dim)``."""
        d = self.centers[self.faces[:, 1]] - self.centers[self.faces[:, 0]]
        d.setflags(write=False)
        return d

    @cached_property
    def dist(self):
        d = np.linalg.norm(self.delta, axis=1)
        d.setflags(write=False)
        return d

    @cached_property
    def tau(self):
        """Transmission coefficients ``|K|L| / |x_L - x_K|``."""
        t = self.areas / self.dist
        t.setflags(write=False)
        return t

    @cached_property
    def _csr(self):
        n = self.n_cells
        K, L = self.faces[:, 0], self.faces[:, 1]
        src = np.concatenate([K, L])
        dst = np.concatenate([L, K])
        fid = np.concatenate([np.arange(self.n_faces)] * 2)
        order = np.lexsort((dst, src))
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        return np.cumsum(indptr), dst[order], fid[order]

    def neighbors(self, k):
        """Neighbour cell indices of cell ``k`` (sorted)."""
        ptr, nb, _ = self._csr
        return nb[ptr[k]:ptr[k + 1]]

    def cell_faces(self, k):
        ptr, _, fid = self._csr
        return fid[ptr[k]:ptr[k + 1]]

    @cached_property
    def n_neighbors(self):
        ptr = self._csr[0]
        return np.diff(ptr)

    @property
    def domain_volume(self):
        if self.bounds is not None:
            return float(np.prod(self.bounds[1] - self.bounds[0]))
        return float(np.sum(self.volumes))

    def face_divergence(self, J):
        """``sum_L J_{K|L}`` per cell for a canonically oriented face field."""
        n = self.n_cells
        J = np.asarray(J, dtype=float)
        return (np.bincount(self.faces[:, 0], J, minlength=n)
                - np.bincount(self.faces[:, 1], J, minlength=n))

    def __eq__(self, other):
        if not isinstance(other, Tessellation):
            return NotImplemented

        def same(x, y):
            if x is None or y is None:
                return x is None and y is None
            return np.array_equal(x, y)

        return (self.dim == other.dim and self.h == other.h
                and same(self.volumes, other.volumes) and same(self.centers, other.centers)
                and same(self.faces, other.faces) and same(self.areas, other.areas)
                and same(self.bounds, other.bounds) and same(self.boxes, other.boxes)
                and same(self.cell_ids, other.cell_ids))

    __hash__ = None

    def __repr__(self):
        return f"Tessellation(dim={self.dim}, cells={self.n_cells}, faces={self.n_faces}, h={self.h:.4g})"


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def build_rectilinear(edges):
    """Tensor-product grid from per-axis edge coordinates.

    Cell indices run in C order over the axes (last axis fastest).
    """
    edges = [np.asarray(e, dtype=float) for e in edges]
    dim = len(edges)
    for e in edges:
        if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
            raise ValueError("grid edges must be strictly increasing with at least two entries")
    shape = tuple(e.size - 1 for e in edges)
    lo = np.stack(np.meshgrid(*[e[:-1] for e in edges], indexing="ij"), -1).reshape(-1, dim)
    hi = np.stack(np.meshgrid(*[e[1:] for e in edges], indexing="ij"), -1).reshape(-1, dim)
    widths = hi - lo
    vol = np.prod(widths, axis=1)
    centers = 0.5 * (lo + hi)
    idx = np.arange(int(np.prod(shape))).reshape(shape)
    faces, areas = [], []
    for ax in range(dim):
        a = np.take(idx, range(shape[ax] - 1), axis=ax).ravel()
        b = np.take(idx, range(1, shape[ax]), axis=ax).ravel()
        other = np.delete(widths[a], ax, axis=1)
        faces.append(np.stack([a, b], 1))
        areas.append(np.prod(other, axis=1) if dim > 1 else np.ones(a.size))
    faces = np.concatenate(faces) if faces else np.zeros((0, 2), int)
    areas = np.concatenate(areas)
    order = np.lexsort((faces[:, 1], faces[:, 0]))
    bounds = np.array([[e[0] for e in edges], [e[-1] for e in edges]])
    boxes = np.stack([lo, hi], 1)
    h = float(np.max(np.linalg.norm(widths, axis=1)))
    return Tessellation(vol, centers, faces[order], areas[order], h=h, bounds=bounds,
                        boxes=boxes, grid_edges=edges)


def build_cartesian(bounds, h):
    """Uniform grid with edge length ``h`` on the box ``bounds = (lo, hi)``.

    ``bounds`` lists ``(lo, hi)`` per axis, e.g. ``[(0, 1), (0, 2)]``; a flat
    pair ``(lo, hi)`` means one dimension.  Edge lengths that are not integer multiples of
    ``h`` are snapped, with a warning.
    """
    b = np.asarray(bounds, dtype=float)
    if b.ndim == 1:
        b = b.reshape(1, 2)
    if b.ndim != 2 or b.shape[1] != 2:
        raise ValueError("bounds must be (lo, hi) pairs per axis")
    b = b.T
    lo, hi = b[0], b[1]
    lengths = hi - lo
    if np.any(lengths <= 0):
        raise ValueError("box must have positive edge lengths")
    if not h > 0:
        raise ValueError(f"grid spacing must be positive, got {h}")
    if h > lengths.min() * (1 + 1e-12):
        raise ValueError(f"grid spacing {h} exceeds the shortest box edge {lengths.min()}")
    counts = np.maximum(np.rint(lengths / h).astype(int), 1)
    if np.any(np.abs(counts * h - lengths) > 1e-9 * lengths):
        warnings.warn(f"box edges are not multiples of h={h}; snapping to {counts.tolist()} cells",
                      stacklevel=2)
    edges = []
    for ax in range(lo.size):
        e = lo[ax] + np.arange(counts[ax] + 1) * (lengths[ax] / counts[ax])
        e[-1] = hi[ax]
        edges.append(e)
    return build_rectilinear(edges)


# ---------------------------------------------------------------------------
# quality checks
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    zeta_inner: float
    zeta_face: float
    orthogonality_max_angle: float
    passes_nondegeneracy: bool
    passes_orthogonality: bool
    zeta_min: float
    angle_tol: float

    def as_dict(self):
        return dict(self.__dict__)


def _face_axes(t):
    """Index of the axis normal to each face, from the cell boxes."""
    bK = t.boxes[t.faces[:, 0]]
    bL = t.boxes[t.faces[:, 1]]
    overlap = np.minimum(bK[:, 1], bL[:, 1]) - np.maximum(bK[:, 0], bL[:, 0])
    return np.argmin(overlap, axis=1)


def validate(t, zeta_min=0.3, angle_tol=1e-9):
    """Measure non-degeneracy and orthogonality of ``t``.

    ``zeta_inner`` is the smallest ``dist(x_K, boundary of K) / h``; for cells
    without boxes the faces are assumed to lie on the perpendicular bisectors
    of the neighbour segments.  ``zeta_face`` is ``min |K|L| / h**(dim-1)``.
    The orthogonality angle is only available with cell boxes; otherwise it is
    NaN and the orthogonality flag is False.
    """
    h = t.h
    if t.boxes is not None:
        gap = np.minimum(t.centers - t.boxes[:, 0], t.boxes[:, 1] - t.centers)
        r = np.min(gap, axis=1)
    else:
        r = np.full(t.n_cells, np.inf)
        half = 0.5 * t.dist
        np.minimum.at(r, t.faces[:, 0], half)
        np.minimum.at(r, t.faces[:, 1], half)
        if t.bounds is not None:
            gap = np.minimum(t.centers - t.bounds[0], t.bounds[1] - t.centers)
            r = np.minimum(r, gap.min(axis=1))
    zeta_inner = float(max(r.min(), 0.0) / h)
    zeta_face = float(t.areas.min() / h ** (t.dim - 1)) if t.n_faces else math.inf

    if t.boxes is not None and t.n_faces:
        ax = _face_axes(t)
        comp = np.abs(t.delta[np.arange(t.n_faces), ax])
        cosang = np.clip(comp / t.dist, 0.0, 1.0)
        ang = np.arccos(cosang)
        # arccos is ill-conditioned near 1; use the transverse part there
        trans = np.sqrt(np.maximum(t.dist**2 - comp**2, 0.0)) / t.dist
        ang = np.where(cosang > 0.5, np.arcsin(np.clip(trans, 0, 1)), ang)
        max_angle = float(ang.max())
    elif t.n_faces:
        max_angle = math.nan
    else:
        max_angle = 0.0
    return ValidationReport(
        zeta_inner=zeta_inner,
        zeta_face=zeta_face,
        orthogonality_max_angle=max_angle,
        passes_nondegeneracy=bool(zeta_inner >= zeta_min and zeta_face >= zeta_min),
        passes_orthogonality=bool(max_angle <= angle_tol),
        zeta_min=float(zeta_min),
        angle_tol=float(angle_tol),
    )


def diffusion_tensor(t):
    """Per-cell tensor ``sum_L (tau/|K|) (x_L - x_K) (x_L - x_K)^T``, shape ``(n, dim, dim)``."""
    d = t.delta
    outer = t.tau[:, None, None] * d[:, :, None] * d[:, None, :]
    T = np.zeros((t.n_cells, t.dim, t.dim))
    np.add.at(T, t.faces[:, 0], outer)
    np.add.at(T, t.faces[:, 1], outer)
    return T / t.volumes[:, None, None]


def first_moment_residual(t):
    """``sum_L tau_{K|L} (x_L - x_K)`` per cell; zero on symmetric interior cells."""
    w = t.tau[:, None] * t.delta
    out = np.zeros((t.n_cells, t.dim))
    np.add.at(out, t.faces[:, 0], w)
    np.subtract.at(out, t.faces[:, 1], w)
    return out


# ---------------------------------------------------------------------------
# FVMESH v1
# ---------------------------------------------------------------------------
#
#   FVMESH 1 <dim> <ncells> <nfaces>
#   C <id> <volume> <x...>          one per cell
#   F <idA> <idB> <area>            one per face
#
# Optional records understood by this reader (ignored by minimal readers
# only if they skip unknown tags): ``H <h>``, ``B <lo...> <hi...>`` and
# ``X <id> <lo...> <hi...>`` (cell box).  Floats are written with 17
# significant digits so a save/load cycle is bit-exact.

def _g(x):
    return repr(float(x))


def save_mesh(t, path):
    path = Path(path)
    lines = [f"FVMESH 1 {t.dim} {t.n_cells} {t.n_faces}"]
    lines.append(f"H {_g(t.h)}")
    if t.bounds is not None:
        lines.append("B " + " ".join(_g(v) for v in np.concatenate(t.bounds)))
    ids = t.cell_ids
    for k in range(t.n_cells):
        lines.append(f"C {ids[k]} {_g(t.volumes[k])} " + " ".join(_g(v) for v in t.centers[k]))
    if t.boxes is not None:
        for k in range(t.n_cells):
            lines.append(f"X {ids[k]} " + " ".join(_g(v) for v in np.concatenate(t.boxes[k])))
    for (a, b), ar in zip(t.faces, t.areas):
        lines.append(f"F {ids[a]} {ids[b]} {_g(ar)}")
    path.write_text("\n".join(lines) + "\n")


def _grid_from_boxes(boxes):
    """Per-axis edges if the boxes tile a tensor grid in C order, else None."""
    n, _, dim = boxes.shape
    edges = []
    for ax in range(dim):
        edges.append(np.unique(np.concatenate([boxes[:, 0, ax], boxes[:, 1, ax]])))
    if int(np.prod([e.size - 1 for e in edges])) != n:
        return None
    ref = build_rectilinear(edges).boxes
    return edges if np.array_equal(ref, boxes) else None


def load_mesh(path):
    """Read an FVMESH v1 file; raises :class:`MeshFormatError` with line numbers."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MeshFormatError(f"cannot read mesh file {path}: {exc.strerror}") from None
    header = None
    cells, boxes, faces = [], {}, []
    h = bounds = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        if header is None:
            if tok[0] != "FVMESH":
                raise MeshFormatError("missing FVMESH header", lineno)
            if len(tok) != 5 or tok[1] != "1":
                raise MeshFormatError("header must read 'FVMESH 1 <dim> <ncells> <nfaces>'", lineno)
            try:
                dim, nc, nf = (int(v) for v in tok[2:])
            except ValueError:
                raise MeshFormatError("non-integer header field", lineno) from None
            if dim not in (1, 2, 3) or nc < 1 or nf < 0:
                raise MeshFormatError("invalid header counts", lineno)
            header = (dim, nc, nf)
            continue
        dim = header[0]
        tag = tok[0]
        try:
            if tag == "C":
                if len(tok) != 3 + dim:
                    raise MeshFormatError(f"cell record needs {2 + dim} fields", lineno)
                cid, vol = int(tok[1]), float(tok[2])
                if not vol > 0:
                    raise MeshFormatError("negative volume" if vol < 0 else "non-positive volume", lineno)
                cells.append((cid, vol, [float(v) for v in tok[3:]], lineno))
            elif tag == "F":
                if len(tok) != 4:
                    raise MeshFormatError("face record needs 3 fields", lineno)
                a, b, ar = int(tok[1]), int(tok[2]), float(tok[3])
                if ar < 0:
                    raise MeshFormatError("negative face area", lineno)
                if not ar > 0:
                    raise MeshFormatError("zero face area", lineno)
                faces.append((a, b, ar, lineno))
            elif tag == "X":
                if len(tok) != 2 + 2 * dim:
                    raise MeshFormatError(f"box record needs {1 + 2 * dim} fields", lineno)
                boxes[int(tok[1])] = [float(v) for v in tok[2:]]
            elif tag == "H":
                h = float(tok[1])
            elif tag == "B":
                if len(tok) != 1 + 2 * dim:
                    raise MeshFormatError(f"bounds record needs {2 * dim} fields", lineno)
                bounds = [float(v) for v in tok[1:]]
            else:
                raise MeshFormatError(f"unknown record type {tag!r}", lineno)
        except ValueError as exc:
            if isinstance(exc, MeshFormatError):
                raise
            raise MeshFormatError(f"malformed number in {tag} record", lineno) from None
    if header is None:
        raise MeshFormatError("empty mesh file")
    dim, nc, nf = header
    if len(cells) != nc:
        raise MeshFormatError(f"expected {nc} cells, found {len(cells)} (truncated file?)")
    if len(faces) != nf:
        raise MeshFormatError(f"expected {nf} faces, found {len(faces)} (truncated file?)")
    cells.sort(key=lambda c: c[0])
    ids = np.array([c[0] for c in cells], dtype=np.int64)
    if np.unique(ids).size != ids.size:
        dup = next(c for i, c in enumerate(cells[1:]) if c[0] == cells[i][0])
        raise MeshFormatError(f"duplicate cell id {dup[0]}", dup[3])
    index = {int(c): i for i, c in enumerate(ids)}
    face_idx = np.zeros((nf, 2), dtype=np.int64)
    seen = set()
    for i, (a, b, _, lineno) in enumerate(faces):
        if a not in index or b not in index:
            raise MeshFormatError(f"face references missing cell {a if a not in index else b}", lineno)
        if a == b:
            raise MeshFormatError("face joins a cell to itself", lineno)
        key = (min(a, b), max(a, b))
        if key in seen:
            raise MeshFormatError("duplicate face", lineno)
        seen.add(key)
        face_idx[i] = (index[a], index[b])
    box_arr = None
    if boxes:
        if set(boxes) != set(index):
            raise MeshFormatError("cell boxes must be given for all cells or none")
        box_arr = np.array([boxes[int(c)] for c in ids]).reshape(nc, 2, dim)
    try:
        t = Tessellation(
            volumes=[c[1] for c in cells],
            centers=np.array([c[2] for c in cells]).reshape(nc, dim),
            faces=face_idx,
            areas=[f[2] for f in faces],
            h=h,
            bounds=None if bounds is None else np.array(bounds).reshape(2, dim),
            boxes=box_arr,
            cell_ids=ids,
            grid_edges=None if box_arr is None else _grid_from_boxes(box_arr),
        )
    except ValueError as exc:
        raise MeshFormatError(f"inconsistent mesh: {exc}") from None
    return t
