"""Bilinear interpolation and sub-pixel refinement over a first-order warp.

Both refiners minimize the zero-normalized SSD between the reference subset
and the warped target subset, starting from an integer-pixel estimate:

* :func:`refine_nr` -- forward-additive Newton-Raphson. Target gradients,
  the Jacobian and the (Gauss-Newton) Hessian are rebuilt every iteration.
* :func:`refine_icgn` -- inverse-compositional Gauss-Newton. Gradients,
  steepest-descent images and the Hessian come from the reference subset
  once (:func:`icgn_precompute`); each iteration only resamples the target.

Warp parameters are ``p = (u, u_x, u_y, v, v_x, v_y)``; a reference pixel at
offset ``(dx, dy)`` from the subset center maps to
``(x0 + dx + u + u_x dx + u_y dy, y0 + dy + v + v_x dx + v_y dy)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .correlation import DegenerateSubsetError, SubsetStats, stats_of
from .image_core import GrayImage, SubsetSpec


class OutOfDomainError(ValueError):
    """Interpolation query outside the image."""


class DriftError(ValueError):
    """The warped subset left the guard band during iteration."""


@dataclass(frozen=True)
class RefineConfig:
    tolerance: float = 0.01
    max_iter: int = 20
    guard: int = 2

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class WarpParams:
    u: float = 0.0
    u_x: float = 0.0
    u_y: float = 0.0
    v: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0

    @classmethod
    def from_vector(cls, p) -> "WarpParams":
        return cls(*(float(c) for c in p))

    @classmethod
    def translation(cls, u: float, v: float) -> "WarpParams":
        return cls(u=float(u), v=float(v))

    def as_vector(self) -> np.ndarray:
        return np.array([self.u, self.u_x, self.u_y, self.v, self.v_x, self.v_y])

    def matrix(self) -> np.ndarray:
        return warp_matrix(self.as_vector())


def warp_matrix(p: np.ndarray) -> np.ndarray:
    u, ux, uy, v, vx, vy = p
    return np.array([[1.0 + ux, uy, u], [vx, 1.0 + vy, v], [0.0, 0.0, 1.0]])


def _deviation(p: np.ndarray) -> np.ndarray:
    """``W(p) - I`` built without round-tripping through ``1 + u_x``."""
    u, ux, uy, v, vx, vy = p
    return np.array([[ux, uy, u], [vx, vy, v], [0.0, 0.0, 0.0]])


def compose_inverse(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Parameters of ``W(p) o W(dp)^-1``.

    Written as ``(I + D) (I + E)`` with ``E = W(dp)^-1 - I`` so that
    ``dp = 0`` returns ``p`` bit for bit.
    """
    d_dp = _deviation(dp)
    w_dp = np.eye(3) + d_dp
    if abs(np.linalg.det(w_dp)) < 1e-8:
        raise DegenerateSubsetError("non-invertible incremental warp")
    e = -np.linalg.solve(w_dp, d_dp)
    d = _deviation(p)
    new = d + (e + d @ e)
    return np.array([new[0, 2], new[0, 0], new[0, 1], new[1, 2], new[1, 0], new[1, 1]])


# ---------------------------------------------------------------------------
# Bilinear interpolation
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class InterpCoeffs:
    """Per-cell bilinear coefficients for a whole image.

    Cell ``(j, i)`` spans pixels ``[i, i+1] x [j, j+1]``; inside it the gray
    level is ``a00 + a10 x' + a01 y' + a11 x' y'`` with fractional offsets
    ``x', y'``. Building the table once per target image avoids solving the
    4-point system again for every sample.
    """

    a00: np.ndarray = field(repr=False)
    a10: np.ndarray = field(repr=False)
    a01: np.ndarray = field(repr=False)
    a11: np.ndarray = field(repr=False)
    width: int
    height: int

    @classmethod
    def from_array(cls, data: np.ndarray) -> "InterpCoeffs":
        f = np.asarray(data, dtype=np.float64)
        # pad one row/column so border coordinates fall into a valid cell
        f = np.pad(f, ((0, 1), (0, 1)), mode="edge")
        f00 = f[:-1, :-1]
        f10 = f[:-1, 1:]
        f01 = f[1:, :-1]
        f11 = f[1:, 1:]
        return cls(f00.copy(), f10 - f00, f01 - f00, f11 - f10 - f01 + f00,
                   data.shape[1], data.shape[0])

    def cell(self, xs, ys):
        # the padded last row/column makes nodes on the far border exact
        i = np.minimum(np.floor(xs).astype(np.intp), self.width - 1)
        j = np.minimum(np.floor(ys).astype(np.intp), self.height - 1)
        return i, j, xs - i, ys - j

    def sample(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        i, j, fx, fy = self.cell(xs, ys)
        return (self.a00[j, i] + self.a10[j, i] * fx + self.a01[j, i] * fy
                + self.a11[j, i] * fx * fy)


def bilinear_coeffs(image: GrayImage) -> InterpCoeffs:
    return InterpCoeffs.from_array(image.data)


def interp_bilinear(image: GrayImage | InterpCoeffs, x: float, y: float) -> float:
    """Gray level at sub-pixel position ``(x, y)`` by bilinear interpolation."""
    coeffs = image if isinstance(image, InterpCoeffs) else bilinear_coeffs(image)
    if not (0 <= x <= coeffs.width - 1 and 0 <= y <= coeffs.height - 1):
        raise OutOfDomainError(f"({x}, {y}) outside [0, {coeffs.width - 1}] x [0, {coeffs.height - 1}]")
    return float(coeffs.sample(np.asarray(x, float), np.asarray(y, float)))


# ---------------------------------------------------------------------------
# Shared geometry
# ---------------------------------------------------------------------------

def local_coords(half_width: int) -> tuple[np.ndarray, np.ndarray]:
    """Flattened ``(dx, dy)`` offsets of a subset, row-major."""
    r = np.arange(-half_width, half_width + 1, dtype=np.float64)
    dy, dx = np.meshgrid(r, r, indexing="ij")
    return dx.ravel(), dy.ravel()


def warp_points(p: np.ndarray, spec: SubsetSpec, dx: np.ndarray, dy: np.ndarray):
    u, ux, uy, v, vx, vy = p
    xs = spec.center_x + dx + u + ux * dx + uy * dy
    ys = spec.center_y + dy + v + vx * dx + vy * dy
    return xs, ys


def _check_guard(xs, ys, p, spec: SubsetSpec, shape, guard: int) -> None:
    h, w = shape
    m = spec.half_width
    cx, cy = spec.center_x + p[0], spec.center_y + p[3]
    lo = m + guard
    if (cx < lo or cy < lo or cx > w - 1 - lo or cy > h - 1 - lo
            or xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1):
        raise DriftError(f"drifted out of bounds at ({cx:.3f}, {cy:.3f}) for {spec}")


def image_gradients(data: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Central-difference gradients ``(d/dx, d/dy)``; one-sided at borders."""
    gy, gx = np.gradient(np.asarray(data, dtype=np.float64))
    return gx, gy


def _jacobian_columns(gx: np.ndarray, gy: np.ndarray, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """``grad . dW/dp`` for the first-order warp, shape ``(n, 6)``."""
    return np.column_stack([gx, gx * dx, gx * dy, gy, gy * dx, gy * dy])


def _solve_6x6(hessian: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        cond = np.linalg.cond(hessian)
        if not np.isfinite(cond) or cond > 1e12:
            raise DegenerateSubsetError(f"degenerate subset: Hessian condition {cond:.3g}")
        return np.linalg.solve(hessian, rhs)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSubsetError("degenerate subset: singular Hessian") from exc


@dataclass(frozen=True)
class SubpixelResult:
    warp: WarpParams
    correlation: float
    iterations: int
    converged: bool
    last_update: float = 0.0

    @property
    def displacement(self) -> tuple[float, float]:
        return self.warp.u, self.warp.v


@dataclass(frozen=True, eq=False)
class TargetTables:
    """Per-target look-up tables shared by all subsets of one image pair."""

    coeffs: InterpCoeffs
    grad_x: InterpCoeffs
    grad_y: InterpCoeffs
    shape: tuple[int, int]

    @classmethod
    def build(cls, target: GrayImage) -> "TargetTables":
        gx, gy = image_gradients(target.data)
        return cls(bilinear_coeffs(target), InterpCoeffs.from_array(gx),
                   InterpCoeffs.from_array(gy), target.shape)


def _tables(target) -> TargetTables:
    return target if isinstance(target, TargetTables) else TargetTables.build(target)


def _normalized_target(vals: np.ndarray) -> tuple[np.ndarray, float]:
    gc = vals - vals.mean()
    gn = float(np.sqrt(np.sum(gc * gc)))
    if gn == 0:
        raise DegenerateSubsetError("degenerate target subset")
    return gc, gn


def znssd(f_hat: np.ndarray, tables: TargetTables, spec: SubsetSpec, p: np.ndarray) -> float:
    """Zero-normalized SSD of the target subset sampled through ``W(p)``."""
    dx, dy = local_coords(spec.half_width)
    xs, ys = warp_points(p, spec, dx, dy)
    gc, gn = _normalized_target(tables.coeffs.sample(xs, ys))
    r = f_hat - gc / gn
    return float(r @ r)


# ---------------------------------------------------------------------------
# Newton-Raphson (forward additive)
# ---------------------------------------------------------------------------

def nr_criterion(ref_stats: SubsetStats, target, spec: SubsetSpec,
                 p) -> tuple[float, np.ndarray, np.ndarray]:
    """ZNSSD, its gradient and the Gauss-Newton Hessian at ``p``.

    The target is sampled through ``W(p)`` and differentiated with
    interpolated central-difference gradient images.
    """
    tables = _tables(target)
    p = np.asarray(p, dtype=np.float64)
    dx, dy = local_coords(spec.half_width)
    xs, ys = warp_points(p, spec, dx, dy)
    gc, gn = _normalized_target(tables.coeffs.sample(xs, ys))
    g_hat = gc / gn
    f_hat = ref_stats.centered.ravel() / ref_stats.norm
    r = g_hat - f_hat

    jac = _jacobian_columns(tables.grad_x.sample(xs, ys), tables.grad_y.sample(xs, ys), dx, dy)
    # derivative of the normalized, zero-mean target: project out the mean
    # and the current direction, then rescale
    jac = jac - jac.mean(axis=0)
    jac = (jac - np.outer(g_hat, g_hat @ jac)) / gn
    return float(r @ r), 2.0 * jac.T @ r, 2.0 * jac.T @ jac


def refine_nr(ref_stats: SubsetStats, target, spec: SubsetSpec, init,
              cfg: RefineConfig = RefineConfig(), trace: list | None = None) -> SubpixelResult:
    """Newton-Raphson refinement of the full first-order warp.

    ``init`` is an integer displacement ``(dx, dy)`` or a 6-vector.
    ``target`` may be a :class:`GrayImage` or prebuilt :class:`TargetTables`.
    Accepted parameter vectors are appended to ``trace`` when given.
    """
    if ref_stats.norm == 0:
        raise DegenerateSubsetError("degenerate reference subset")
    tables = _tables(target)
    p = _initial_vector(init)
    f_hat = ref_stats.centered.ravel() / ref_stats.norm
    dx, dy = local_coords(spec.half_width)
    _record(trace, p)
    step = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        xs, ys = warp_points(p, spec, dx, dy)
        _check_guard(xs, ys, p, spec, tables.shape, cfg.guard)
        z, grad, hess = nr_criterion(ref_stats, tables, spec, p)
        dp = _solve_6x6(hess, -grad)
        step = max(abs(dp[0]), abs(dp[3]))
        if step < cfg.tolerance:
            converged = True
            p = _last_step(f_hat, tables, spec, p, p + dp, z, cfg, trace)
            break
        p = p + dp
        _record(trace, p)
    xs, ys = warp_points(p, spec, dx, dy)
    _check_guard(xs, ys, p, spec, tables.shape, cfg.guard)
    c = _final_zncc(ref_stats, tables, xs, ys)
    return SubpixelResult(WarpParams.from_vector(p), c, it, converged, float(step))


def _record(trace, p) -> None:
    if trace is not None:
        trace.append(p.copy())


def _last_step(f_hat, tables, spec, p, p_new, z, cfg, trace) -> np.ndarray:
    """Take the converging step unless it raises ZNSSD.

    Below the tolerance the bilinear surface is kinked at the scale of the
    step, so an increase there is interpolation noise, not progress.
    """
    dx, dy = local_coords(spec.half_width)
    xs, ys = warp_points(p_new, spec, dx, dy)
    _check_guard(xs, ys, p_new, spec, tables.shape, cfg.guard)
    if z is None:
        z = znssd(f_hat, tables, spec, p)
    if znssd(f_hat, tables, spec, p_new) <= z:
        _record(trace, p_new)
        return p_new
    return p


def _initial_vector(init) -> np.ndarray:
    v = np.asarray(init, dtype=np.float64).ravel()
    if v.size == 2:
        return np.array([v[0], 0.0, 0.0, v[1], 0.0, 0.0])
    if v.size == 6:
        return v.copy()
    raise ValueError("init must be (dx, dy) or a 6-vector")


def _final_zncc(ref_stats: SubsetStats, tables: TargetTables, xs, ys) -> float:
    gc, gn = _normalized_target(tables.coeffs.sample(xs, ys))
    return float(np.sum(ref_stats.centered.ravel() * gc) / (ref_stats.norm * gn))


# ---------------------------------------------------------------------------
# Inverse-compositional Gauss-Newton
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RefinerState:
    """Reference-side quantities computed once per subset."""

    spec: SubsetSpec
    stats: SubsetStats
    grad_x: np.ndarray = field(repr=False)
    grad_y: np.ndarray = field(repr=False)
    steepest_descent: np.ndarray = field(repr=False)
    hessian: np.ndarray = field(repr=False)
    hessian_inv: np.ndarray = field(repr=False)


def icgn_precompute(reference: GrayImage, spec: SubsetSpec) -> RefinerState:
    m = spec.half_width
    h, w = reference.shape
    cx, cy = spec.center_x, spec.center_y
    if not (m + 1 <= cx <= w - 2 - m and m + 1 <= cy <= h - 2 - m):
        raise DriftError(f"subset {spec} lacks a 1-pixel gradient band")
    band = reference.data[cy - m - 1:cy + m + 2, cx - m - 1:cx + m + 2]
    stats = stats_of(band[1:-1, 1:-1])
    if stats.norm == 0:
        raise DegenerateSubsetError("degenerate texture")
    gx = (band[1:-1, 2:] - band[1:-1, :-2]) / 2.0
    gy = (band[2:, 1:-1] - band[:-2, 1:-1]) / 2.0
    dx, dy = local_coords(m)
    sd = _jacobian_columns(gx.ravel(), gy.ravel(), dx, dy)
    hess = sd.T @ sd
    cond = np.linalg.cond(hess)
    if not np.isfinite(cond) or cond > 1e12:
        raise DegenerateSubsetError(f"degenerate texture: Hessian condition {cond:.3g}")
    return RefinerState(spec, stats, gx, gy, sd, hess, np.linalg.inv(hess))


def icgn_step(state: RefinerState, tables: TargetTables, p: np.ndarray) -> tuple[np.ndarray, float]:
    """Incremental warp ``dp`` at ``p`` and the ZNCC of the current match."""
    spec = state.spec
    dx, dy = local_coords(spec.half_width)
    xs, ys = warp_points(p, spec, dx, dy)
    gc, gn = _normalized_target(tables.coeffs.sample(xs, ys))
    fc = state.stats.centered.ravel()
    fn = state.stats.norm
    err = fc - (fn / gn) * gc
    dp = -state.hessian_inv @ (state.steepest_descent.T @ err)
    return dp, float(np.sum(fc * gc) / (fn * gn))


def refine_icgn(state: RefinerState, target, spec: SubsetSpec | None = None, init=(0, 0),
                cfg: RefineConfig = RefineConfig(), trace: list | None = None) -> SubpixelResult:
    """Inverse-compositional Gauss-Newton refinement.

    Each iteration resamples the target through the current warp, solves
    with the precomputed Hessian and updates ``W(p) <- W(p) o W(dp)^-1``.
    """
    if spec is not None and spec != state.spec:
        raise ValueError("spec does not match the precomputed state")
    spec = state.spec
    tables = _tables(target)
    p = _initial_vector(init)
    f_hat = state.stats.centered.ravel() / state.stats.norm
    dx, dy = local_coords(spec.half_width)
    _record(trace, p)
    step = np.inf
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        xs, ys = warp_points(p, spec, dx, dy)
        _check_guard(xs, ys, p, spec, tables.shape, cfg.guard)
        dp, _ = icgn_step(state, tables, p)
        step = max(abs(dp[0]), abs(dp[3]))
        if step < cfg.tolerance:
            converged = True
            p = _last_step(f_hat, tables, spec, p, compose_inverse(p, dp), None, cfg, trace)
            break
        p = compose_inverse(p, dp)
        _record(trace, p)
    xs, ys = warp_points(p, spec, dx, dy)
    _check_guard(xs, ys, p, spec, tables.shape, cfg.guard)
    c = _final_zncc(state.stats, tables, xs, ys)
    return SubpixelResult(WarpParams.from_vector(p), c, it, converged, float(step))
