"""Hyperbolic unit-ball geometry and discrete Euclidean group actions.

Points of the ball are plain float64 vectors with squared norm < 1; the
distance depends only on Euclidean norms, so every ambient isometry
(rotation, reflection, permutation) preserves it. The module also houses
the exact lattice actions used by the equivariance test harness: signed
permutation matrices plus integer shifts acting on periodic grids.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

# Guard for 1 - |x|^2 near the boundary; valid inputs are untouched.
_BOUNDARY_EPS = 1e-15


def _sqnorm(x: np.ndarray) -> np.ndarray:
    return np.sum(np.square(x), axis=-1)


def hyperbolic_distance(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Geodesic distance on the unit ball, arccosh(1 + 2|x-y|^2 / ((1-|x|^2)(1-|y|^2))).

    Accepts batched inputs with the vector dimension last. Raises
    ValueError if any point lies on or outside the unit sphere.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    nx = _sqnorm(x)
    ny = _sqnorm(y)
    if np.any(nx >= 1.0) or np.any(ny >= 1.0):
        raise ValueError("points must lie strictly inside the unit ball")
    dx = _sqnorm(x - y)
    denom = np.maximum((1.0 - nx) * (1.0 - ny), _BOUNDARY_EPS)
    z = 1.0 + 2.0 * dx / denom
    # arccosh via log(z + sqrt(z^2-1)); rounding can push z a hair below 1.
    z = np.maximum(z, 1.0)
    return np.log(z + np.sqrt(z * z - 1.0))


def embed(x: np.ndarray) -> np.ndarray:
    """Map a Euclidean vector into the unit ball: x / sqrt(1 + |x|^2)."""
    x = np.asarray(x, dtype=np.float64)
    return x / np.sqrt(1.0 + _sqnorm(x))[..., None]


def unembed(p: np.ndarray) -> np.ndarray:
    """Inverse of embed: p / sqrt(1 - |p|^2). Requires |p| < 1."""
    p = np.asarray(p, dtype=np.float64)
    n = _sqnorm(p)
    if np.any(n >= 1.0):
        raise ValueError("points must lie strictly inside the unit ball")
    return p / np.sqrt(np.maximum(1.0 - n, _BOUNDARY_EPS))[..., None]


def embed_jacobian(x: np.ndarray) -> np.ndarray:
    """Jacobian of embed at x: (I - x x^T / (1+|x|^2)) / sqrt(1+|x|^2)."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    s = 1.0 + _sqnorm(x)
    outer = x[..., :, None] * x[..., None, :]
    return (np.eye(n) - outer / s[..., None, None]) / np.sqrt(s)[..., None, None]


def ball_distance_of_offset(v: np.ndarray) -> np.ndarray:
    """Distance from embed(v) to the origin of the ball, arccosh(1 + 2|v|^2).

    Follows from |embed(v)|^2 = |v|^2/(1+|v|^2); used to price grid offsets
    in the hyperbolic structuring mode.
    """
    v = np.asarray(v, dtype=np.float64)
    z = 1.0 + 2.0 * _sqnorm(v)
    return np.log(z + np.sqrt(z * z - 1.0))


@dataclass(frozen=True)
class EuclideanTransform:
    """An element of E(n): orthogonal linear part plus translation."""

    linear: np.ndarray
    shift: np.ndarray

    def __post_init__(self):
        lin = np.asarray(self.linear, dtype=np.float64)
        sh = np.asarray(self.shift, dtype=np.float64)
        if lin.ndim != 2 or lin.shape[0] != lin.shape[1]:
            raise ValueError("linear part must be a square matrix")
        if sh.shape != (lin.shape[0],):
            raise ValueError("shift length must match the matrix size")
        if np.max(np.abs(lin.T @ lin - np.eye(lin.shape[0]))) > 1e-12:
            raise ValueError("linear part must be orthogonal")
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "shift", sh)

    @property
    def dim(self) -> int:
        return self.linear.shape[0]

    @staticmethod
    def identity(n: int) -> "EuclideanTransform":
        return EuclideanTransform(np.eye(n), np.zeros(n))

    @staticmethod
    def rotation2d(theta: float) -> "EuclideanTransform":
        c, s = np.cos(theta), np.sin(theta)
        return EuclideanTransform(np.array([[c, -s], [s, c]]), np.zeros(2))

    @staticmethod
    def permutation(perm) -> "EuclideanTransform":
        perm = list(perm)
        n = len(perm)
        mat = np.zeros((n, n))
        for i, p in enumerate(perm):
            mat[i, p] = 1.0
        return EuclideanTransform(mat, np.zeros(n))

    def compose(self, other: "EuclideanTransform") -> "EuclideanTransform":
        """self after other: (self o other)(x) = self(other(x))."""
        return EuclideanTransform(self.linear @ other.linear,
                                  self.linear @ other.shift + self.shift)

    def inverse(self) -> "EuclideanTransform":
        inv = self.linear.T
        return EuclideanTransform(inv, -inv @ self.shift)


def apply_transform(h: EuclideanTransform, x: np.ndarray) -> np.ndarray:
    """Apply h to a point (or batch of points): linear @ x + shift."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != h.dim:
        raise ValueError(f"point dimension {x.shape[-1]} != transform dimension {h.dim}")
    return x @ h.linear.T + h.shift


def random_orthogonal(n: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-ish random orthogonal matrix from the QR of a Gaussian draw."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


@dataclass(frozen=True)
class GridTransform:
    """A lattice automorphism of the periodic H x W grid.

    The spatial part is mat @ p + shift (mod grid size) with mat a signed
    permutation matrix from the dihedral group; an optional channel
    permutation rides along. These compose exactly, so the left regular
    action below is an exact group homomorphism.
    """

    mat: np.ndarray
    shift: np.ndarray
    channel_perm: tuple | None = None

    def __post_init__(self):
        mat = np.asarray(self.mat, dtype=np.int64)
        shift = np.asarray(self.shift, dtype=np.int64)
        if mat.shape != (2, 2) or shift.shape != (2,):
            raise ValueError("grid transform needs a 2x2 matrix and 2-vector shift")
        if np.max(np.abs(mat.T @ mat - np.eye(2, dtype=np.int64))) != 0:
            raise ValueError("matrix must be a signed permutation (lattice orthogonal)")
        object.__setattr__(self, "mat", mat)
        object.__setattr__(self, "shift", shift)

    @staticmethod
    def identity() -> "GridTransform":
        return GridTransform(np.eye(2, dtype=np.int64), np.zeros(2, dtype=np.int64))

    @staticmethod
    def translation(dy: int, dx: int) -> "GridTransform":
        return GridTransform(np.eye(2, dtype=np.int64), np.array([dy, dx]))

    @staticmethod
    def rot90(times: int = 1) -> "GridTransform":
        r = np.array([[0, -1], [1, 0]], dtype=np.int64)
        m = np.eye(2, dtype=np.int64)
        for _ in range(times % 4):
            m = r @ m
        return GridTransform(m, np.zeros(2, dtype=np.int64))

    @staticmethod
    def flip(axis: int) -> "GridTransform":
        m = np.eye(2, dtype=np.int64)
        m[axis, axis] = -1
        return GridTransform(m, np.zeros(2, dtype=np.int64))

    def compose(self, other: "GridTransform") -> "GridTransform":
        perm = None
        if self.channel_perm is not None or other.channel_perm is not None:
            a = self.channel_perm
            b = other.channel_perm
            if a is None or b is None:
                perm = a if a is not None else b
            else:
                perm = tuple(a[b[i]] for i in range(len(a)))
        return GridTransform(self.mat @ other.mat,
                             self.mat @ other.shift + self.shift, perm)

    def inverse(self) -> "GridTransform":
        inv = self.mat.T
        perm = None
        if self.channel_perm is not None:
            perm = tuple(int(np.argsort(self.channel_perm)[i])
                         for i in range(len(self.channel_perm)))
        return GridTransform(inv, -inv @ self.shift, perm)


def grid_transform_from_euclidean(h: EuclideanTransform) -> GridTransform:
    """Convert an E(2) element to an exact lattice action, or fail.

    Rejects transforms whose matrix entries are not in {-1, 0, 1} or whose
    shift is not integral: those do not map the pixel lattice to itself.
    """
    if h.dim != 2:
        raise ValueError("grid actions are 2-D")
    mat = np.rint(h.linear)
    shift = np.rint(h.shift)
    if np.max(np.abs(h.linear - mat)) > 1e-9 or np.max(np.abs(h.shift - shift)) > 1e-9:
        raise ValueError("transform does not map the pixel lattice to itself")
    return GridTransform(mat.astype(np.int64), shift.astype(np.int64))


def left_regular_action(h, f: np.ndarray) -> np.ndarray:
    """(L_h f)(p) = f(h^{-1} p) on a periodic grid, exact (pure gather).

    ``h`` is a GridTransform or a lattice-exact EuclideanTransform; ``f``
    is (H, W) or (..., H, W). Axis-swapping elements require H == W.
    """
    if isinstance(h, EuclideanTransform):
        h = grid_transform_from_euclidean(h)
    f = np.asarray(f)
    H, W = f.shape[-2:]
    if (h.mat[0, 0] == 0) and H != W:
        raise ValueError("axis-swapping transforms need a square grid")
    inv = h.inverse()
    ii, jj = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    src_i = inv.mat[0, 0] * ii + inv.mat[0, 1] * jj + inv.shift[0]
    src_j = inv.mat[1, 0] * ii + inv.mat[1, 1] * jj + inv.shift[1]
    out = f[..., src_i % H, src_j % W]
    if h.channel_perm is not None:
        inv_perm = np.argsort(np.asarray(h.channel_perm))
        out = np.take(out, inv_perm, axis=-3)
    return out


@dataclass(frozen=True)
class GridGeometry:
    """Pixel grid together with its embedding into the ball.

    pixel_scale converts pixel offsets to ambient coordinates before
    embedding; base_point is the reference point (the origin by default,
    the unique fixed point of all linear isometries).
    """

    height: int
    width: int
    pixel_scale: float = 1.0
    base_point: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if self.height <= 0 or self.width <= 0:
            raise ValueError("grid sides must be positive")
        if self.pixel_scale <= 0:
            raise ValueError("pixel_scale must be positive")
        bp = np.asarray(self.base_point, dtype=np.float64)
        if _sqnorm(bp) >= 1.0:
            raise ValueError("base point must lie inside the unit ball")
        object.__setattr__(self, "base_point", bp)
