"""Affine plus thin-plate-spline warping of 2-D scalar fields.

The 24-dimensional parameter vector is laid out as

    [tx, ty, sx, sy, rot, shear, dx0, dy0, ..., dx8, dy8]

with translations as fractions of field width/height, scales in log
space (so the box is symmetric and x4 / /4 sit at the endpoints),
angles in radians, and nine control-point displacements as fractions
of field size.  The control points form the fixed 3x3 lattice over the
unit square in row-major order (x varying fastest), so index 4 is the
field center.

Warping is applied by inverse mapping with bilinear resampling and
edge clamping.  The affine stage inverts exactly:

    source = A^-1 ((p - center) - tau) + center,
    A = R(rot) Shear(shear) diag(e^sx, e^sy)

The TPS stage uses backward mapping with displacement negation (the
spline displacement is evaluated at the output pixel and subtracted),
a standard approximation that is exact for zero displacement and close
for the small offsets the bounds allow.  The radial basis is
U(r) = r^2 ln(r^2) with U(0) = 0, and the spline carries the usual
affine side conditions, so displacing all controls by a constant moves
the whole field rigidly.

All parameters zero is the exact identity: the output field is
bit-identical to the input.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field

import numpy as np

from .acquisition import BoxBounds
from .errors import ContractError

TRANSLATION_LIMIT = 0.75
LOG_SCALE_LIMIT = math.log(4.0)
ANGLE_LIMIT = math.pi / 3.0
TPS_OFFSET_LIMIT = 0.25

THETA_DIM = 24
AFFINE_DIM = 6
NUM_CONTROL_POINTS = 9

UNIT_LATTICE = np.array(
    [(x, y) for y in (0.0, 0.5, 1.0) for x in (0.0, 0.5, 1.0)], dtype=float
)
CENTER_CONTROL_INDEX = 4


def theta_bounds() -> BoxBounds:
    """The 24-dimensional warp parameter box; its center is the identity."""
    affine_hi = np.array(
        [TRANSLATION_LIMIT, TRANSLATION_LIMIT, LOG_SCALE_LIMIT, LOG_SCALE_LIMIT,
         ANGLE_LIMIT, ANGLE_LIMIT]
    )
    hi = np.concatenate([affine_hi, np.full(2 * NUM_CONTROL_POINTS, TPS_OFFSET_LIMIT)])
    return BoxBounds(lower=-hi, upper=hi)


@dataclass(frozen=True)
class WarpParams:
    """Bounded warp parameters; construction enforces the box."""

    tx: float = 0.0
    ty: float = 0.0
    sx: float = 0.0
    sy: float = 0.0
    rot: float = 0.0
    shear: float = 0.0
    tps_offsets: object = None

    def __post_init__(self):
        offsets = self.tps_offsets
        if offsets is None:
            offsets = np.zeros((NUM_CONTROL_POINTS, 2))
        offsets = np.asarray(offsets, dtype=float)
        if offsets.shape != (NUM_CONTROL_POINTS, 2):
            raise ContractError(
                f"tps_offsets must have shape ({NUM_CONTROL_POINTS}, 2), got {offsets.shape}"
            )
        object.__setattr__(self, "tps_offsets", offsets)
        vec = self.to_vector()
        box = theta_bounds()
        if not np.all(np.isfinite(vec)):
            raise ContractError("warp parameters must be finite")
        if np.any(vec < box.lower) or np.any(vec > box.upper):
            raise ContractError("warp parameters violate the box bounds")

    def to_vector(self) -> np.ndarray:
        head = np.array([self.tx, self.ty, self.sx, self.sy, self.rot, self.shear])
        return np.concatenate([head, np.asarray(self.tps_offsets).reshape(-1)])

    @classmethod
    def from_vector(cls, theta) -> "WarpParams":
        vec = np.asarray(theta, dtype=float).reshape(-1)
        if vec.shape[0] != THETA_DIM:
            raise ContractError(f"theta must have length {THETA_DIM}, got {vec.shape[0]}")
        return cls(
            tx=float(vec[0]), ty=float(vec[1]), sx=float(vec[2]), sy=float(vec[3]),
            rot=float(vec[4]), shear=float(vec[5]),
            tps_offsets=vec[AFFINE_DIM:].reshape(NUM_CONTROL_POINTS, 2),
        )

    @property
    def affine(self) -> np.ndarray:
        return np.array([self.tx, self.ty, self.sx, self.sy, self.rot, self.shear])


@dataclass
class Field2D:
    """A rectangular grid of finite scalars, row-major, at least 2x2."""

    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 2 or vals.shape[0] < 2 or vals.shape[1] < 2:
            raise ContractError("a field needs at least 2x2 values")
        if not np.all(np.isfinite(vals)):
            raise ContractError("field values must be finite")
        self.values = vals

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def to_pgm(self) -> bytes:
        """8-bit binary grayscale bytes (P5), values affinely mapped to 0..255.

        Layout: ASCII header "P5\\n<width> <height>\\n255\\n" followed by
        height*width pixel bytes in row-major order.  A constant field
        maps to the mid-gray value 128.
        """
        lo = float(self.values.min())
        hi = float(self.values.max())
        if hi > lo:
            scaled = np.rint((self.values - lo) / (hi - lo) * 255.0)
        else:
            scaled = np.full_like(self.values, 128.0)
        header = f"P5\n{self.width} {self.height}\n255\n".encode("ascii")
        return header + scaled.astype(np.uint8).tobytes()

    @classmethod
    def from_pgm(cls, data: bytes) -> "Field2D":
        """Parse P5 bytes; pixel bytes are mapped to floats in [0, 1]."""
        tokens = []
        pos = 0
        while len(tokens) < 4:
            match = re.match(rb"\s*(#[^\n]*\n|\S+)", data[pos:])
            if match is None:
                raise ContractError("truncated grayscale header")
            pos += match.end()
            token = match.group(1)
            if not token.startswith(b"#"):
                tokens.append(token)
        if tokens[0] != b"P5":
            raise ContractError("not a binary grayscale (P5) image")
        width, height, maxval = (int(t) for t in tokens[1:])
        if maxval != 255:
            raise ContractError("only 8-bit grayscale is supported")
        pos += 1
        pixels = np.frombuffer(data[pos : pos + width * height], dtype=np.uint8)
        if pixels.size != width * height:
            raise ContractError("truncated pixel data")
        return cls(values=pixels.reshape(height, width).astype(float) / 255.0)

    def save_pgm(self, path) -> None:
        with open(path, "wb") as handle:
            handle.write(self.to_pgm())

    @classmethod
    def load_pgm(cls, path) -> "Field2D":
        with open(path, "rb") as handle:
            return cls.from_pgm(handle.read())


def _bilinear_sample(values: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    height, width = values.shape
    xs = np.clip(xs, 0.0, width - 1.0)
    ys = np.clip(ys, 0.0, height - 1.0)
    x0 = np.floor(xs).astype(int)
    y0 = np.floor(ys).astype(int)
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    fx = xs - x0
    fy = ys - y0
    top = (1.0 - fx) * values[y0, x0] + fx * values[y0, x1]
    bottom = (1.0 - fx) * values[y1, x0] + fx * values[y1, x1]
    return (1.0 - fy) * top + fy * bottom


def _affine_matrix(sx: float, sy: float, rot: float, shear: float) -> np.ndarray:
    cos_r, sin_r = math.cos(rot), math.sin(rot)
    rotation = np.array([[cos_r, -sin_r], [sin_r, cos_r]])
    shear_m = np.array([[1.0, math.tan(shear)], [0.0, 1.0]])
    scale = np.array([[math.exp(sx), 0.0], [0.0, math.exp(sy)]])
    return rotation @ shear_m @ scale


def _inv_2x2(mat: np.ndarray) -> np.ndarray:
    det = mat[0, 0] * mat[1, 1] - mat[0, 1] * mat[1, 0]
    if det == 0.0:
        raise ContractError("affine matrix is singular")
    return np.array(
        [[mat[1, 1] / det, -mat[0, 1] / det], [-mat[1, 0] / det, mat[0, 0] / det]]
    )


def _output_grid(field: Field2D):
    xs = np.arange(field.width, dtype=float)
    ys = np.arange(field.height, dtype=float)
    return np.meshgrid(xs, ys)


def affine_apply(params, field: Field2D) -> Field2D:
    """Warp by the affine stage alone.

    params is a WarpParams or the 6-vector (tx, ty, sx, sy, rot,
    shear).  Translation is measured in fractions of width/height, the
    linear part acts about the field center.
    """
    if isinstance(params, WarpParams):
        head = params.affine
    else:
        head = np.asarray(params, dtype=float).reshape(-1)
        if head.shape[0] != AFFINE_DIM:
            raise ContractError(f"affine parameters need length {AFFINE_DIM}")
    tx, ty, sx, sy, rot, shear = (float(v) for v in head)
    inv = _inv_2x2(_affine_matrix(sx, sy, rot, shear))
    center_x = (field.width - 1) / 2.0
    center_y = (field.height - 1) / 2.0
    shift_x = tx * field.width
    shift_y = ty * field.height
    grid_x, grid_y = _output_grid(field)
    rel_x = grid_x - center_x - shift_x
    rel_y = grid_y - center_y - shift_y
    src_x = inv[0, 0] * rel_x + inv[0, 1] * rel_y + center_x
    src_y = inv[1, 0] * rel_x + inv[1, 1] * rel_y + center_y
    return Field2D(values=_bilinear_sample(field.values, src_x, src_y))


def _radial_basis(sq_dist: np.ndarray) -> np.ndarray:
    safe = np.where(sq_dist > 0.0, sq_dist, 1.0)
    return np.where(sq_dist > 0.0, sq_dist * np.log(safe), 0.0)


def tps_fit(control_points: np.ndarray, targets: np.ndarray) -> tuple:
    """Weights and affine part of the interpolating thin-plate spline.

    Solves the (n+3)x(n+3) system [[K, P], [P^T, 0]] [w; a] = [t; 0]
    where K holds U of squared control distances and P = [1, x, y].
    """
    n = control_points.shape[0]
    diff = control_points[:, None, :] - control_points[None, :, :]
    radial = _radial_basis(np.einsum("ijk,ijk->ij", diff, diff))
    poly = np.hstack([np.ones((n, 1)), control_points])
    system = np.zeros((n + 3, n + 3))
    system[:n, :n] = radial
    system[:n, n:] = poly
    system[n:, :n] = poly.T
    rhs = np.concatenate([np.asarray(targets, dtype=float), np.zeros(3)])
    solution = np.linalg.solve(system, rhs)
    return solution[:n], solution[n:]


def tps_eval(control_points: np.ndarray, weights: np.ndarray, affine: np.ndarray, queries: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - control_points[None, :, :]
    radial = _radial_basis(np.einsum("qnk,qnk->qn", diff, diff))
    return radial @ weights + affine[0] + affine[1] * queries[:, 0] + affine[2] * queries[:, 1]


def control_lattice(field: Field2D) -> np.ndarray:
    """The 3x3 control lattice of a field, in pixel coordinates."""
    return UNIT_LATTICE * np.array([field.width - 1, field.height - 1], dtype=float)


def tps_displacement(tps_offsets, field: Field2D, queries: np.ndarray) -> np.ndarray:
    """Interpolated displacement (pixels) at query pixel coordinates."""
    offsets = np.asarray(tps_offsets, dtype=float).reshape(NUM_CONTROL_POINTS, 2)
    controls = control_lattice(field)
    disp_px = offsets * np.array([field.width, field.height], dtype=float)
    wx, ax = tps_fit(controls, disp_px[:, 0])
    wy, ay = tps_fit(controls, disp_px[:, 1])
    out = np.empty((queries.shape[0], 2))
    out[:, 0] = tps_eval(controls, wx, ax, queries)
    out[:, 1] = tps_eval(controls, wy, ay, queries)
    return out


def tps_apply(tps_offsets, field: Field2D) -> Field2D:
    """Warp by the spline stage alone (backward-mapped displacements)."""
    offsets = np.asarray(tps_offsets, dtype=float).reshape(NUM_CONTROL_POINTS, 2)
    if np.any(np.abs(offsets) > TPS_OFFSET_LIMIT + 1e-12):
        raise ContractError(f"tps offsets exceed the limit {TPS_OFFSET_LIMIT}")
    grid_x, grid_y = _output_grid(field)
    queries = np.stack([grid_x.ravel(), grid_y.ravel()], axis=1)
    disp = tps_displacement(offsets, field, queries)
    src_x = (grid_x.ravel() - disp[:, 0]).reshape(grid_x.shape)
    src_y = (grid_y.ravel() - disp[:, 1]).reshape(grid_y.shape)
    return Field2D(values=_bilinear_sample(field.values, src_x, src_y))


def warp_compose(theta, field: Field2D) -> Field2D:
    """Full warp: affine first, spline second."""
    params = theta if isinstance(theta, WarpParams) else WarpParams.from_vector(theta)
    return tps_apply(params.tps_offsets, affine_apply(params.affine, field))
