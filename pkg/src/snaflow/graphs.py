"""Pullback computation of attracting/repelling invariant graphs on the section.

The attractor is the pointwise limit of iterating the upper section boundary
backward in base time: x_{k+1}(theta + omega) = xi~(theta, x_k(theta)) from
x_0 = gamma_plus. Monotone fibre maps make the sweep pointwise non-increasing,
so it either converges or some node escapes, in which case no invariant graph
exists in the section at this parameter. The repeller is the same construction
for the reversed flow started on the lower boundary.

Values live on a regular d-dimensional grid; the irrational shift never lands
on nodes, so each sweep ends with a multilinear resample (fixed roll weights,
since the shift is uniform across the grid).
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .fields import ForcedField
from .flow import FlowEscape, IntegratorConfig, flow_batch
from .section import SectionMap, _grid_nodes
from .torus import RotationVector, wrap_unit

__all__ = [
    "GraphSample",
    "GraphPair",
    "LiftedGraph",
    "Escaped",
    "LyapunovEstimate",
    "pullback_attractor",
    "pushforward_repeller",
    "make_pair",
    "gap_stats",
    "lyapunov_of_graph",
    "lift_graph",
    "interp_at_shift",
    "resample_shifted_values",
]

STOP_TOL = 1e-12


@dataclass
class GraphSample:
    """Invariant graph values on a regular section grid."""

    values: np.ndarray            # shape (grid_n,) * d
    role: str                     # "attractor" | "repeller"
    defect: float
    iterations_used: int
    converged: bool
    grid_n: int
    beta: float
    sup_change: float             # last sweep's sup-norm change

    @property
    def d(self) -> int:
        return self.values.ndim


@dataclass
class Escaped:
    """Pullback aborted: some node's orbit left the escape window."""

    role: str
    beta: float
    iteration: int
    n_escaped: int
    theta_example: np.ndarray


@dataclass
class GraphPair:
    attractor: GraphSample
    repeller: GraphSample
    gap_min: float
    gap_median: float
    gap_max: float
    argmin_theta: np.ndarray


@dataclass
class LiftedGraph:
    """Graph values over a full T^D grid; last axis is the flow phase theta_D."""

    values: np.ndarray            # shape (grid_D,) * D
    grid_D: int
    role: str
    beta: float


@dataclass(frozen=True)
class LyapunovEstimate:
    flow_scale: float
    map_scale: float


def _shift_decomposition(shift: np.ndarray, n: int):
    steps = np.floor(shift * n).astype(int)
    fracs = shift * n - steps
    return steps, fracs


def resample_shifted_values(w: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Values w_i attached at theta_i + shift, resampled onto the grid nodes."""
    n = w.shape[0]
    steps, fracs = _shift_decomposition(np.asarray(shift, dtype=float), n)
    out = np.zeros_like(w)
    for corner in itertools.product((0, 1), repeat=w.ndim):
        weight = 1.0
        for a, c in enumerate(corner):
            weight *= fracs[a] if c else (1.0 - fracs[a])
        if weight == 0.0:
            continue
        out += weight * np.roll(w, shift=tuple(steps[a] + corner[a] for a in range(w.ndim)),
                                axis=tuple(range(w.ndim)))
    return out


def interp_at_shift(v: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """Multilinear interpolation of grid values v at the nodes theta_i + shift."""
    n = v.shape[0]
    steps, fracs = _shift_decomposition(np.asarray(shift, dtype=float), n)
    out = np.zeros_like(v)
    for corner in itertools.product((0, 1), repeat=v.ndim):
        weight = 1.0
        for a, c in enumerate(corner):
            weight *= fracs[a] if c else (1.0 - fracs[a])
        if weight == 0.0:
            continue
        out += weight * np.roll(v, shift=tuple(-(steps[a] + corner[a]) for a in range(v.ndim)),
                                axis=tuple(range(v.ndim)))
    return out


@dataclass
class _SweepState:
    """Sweep-change history: geometric-tail projection and noise-floor detection.

    Adaptive stepping makes each sweep reproducible but only ~rel_tol-smooth in
    its input, so sup-changes bottom out at a noise floor instead of reaching
    zero; ``stalled`` reports when the change is tiny and has stopped improving.
    """

    noise_floor: float = 1e-9
    deltas: list = field(default_factory=list)
    best: float = math.inf
    best_at: int = 0
    count: int = 0

    def record(self, delta: float):
        self.count += 1
        self.deltas.append(delta)
        if len(self.deltas) > 8:
            self.deltas.pop(0)
        if delta < self.best:
            self.best = delta
            self.best_at = self.count

    def stalled(self) -> bool:
        return self.best < self.noise_floor and self.count - self.best_at >= 25

    def projected_tail(self) -> float:
        """Geometric-tail bound on the remaining change, inf when uncertified."""
        if len(self.deltas) < 6:
            return math.inf
        pairs = list(zip(self.deltas, self.deltas[1:]))
        ratios = [b / a for a, b in pairs if a > 0.0]
        if len(ratios) < 5:
            return 0.0 if self.deltas[-1] == 0.0 else math.inf
        r = max(ratios)
        if r >= 0.999 or min(ratios) <= 0.0:
            return math.inf
        spread = max(ratios) - min(ratios)
        if spread > 0.2 * (1.0 - r):
            return math.inf
        return self.deltas[-1] * r / (1.0 - r)


def _pullback(family: ForcedField, beta: float, rho, grid_n: int, n_iter: int,
              cfg: IntegratorConfig, role: str, stop_tol: float,
              projection_tol: float | None, x_start,
              section_offset: float = 0.0) -> GraphSample | Escaped:
    reverse = role == "repeller"
    rho_v = rho if isinstance(rho, RotationVector) else RotationVector(rho)
    d = rho_v.D - 1
    smap = SectionMap(family, beta, rho_v, cfg, reverse=reverse,
                      section_offset=section_offset)
    lo, hi = family.section_bounds()
    if x_start is None:
        x_start = lo if reverse else hi

    if family.theta_independent:
        return _pullback_scalar(family, beta, smap, grid_n, n_iter, role,
                                stop_tol, projection_tol, float(x_start), d)

    shape = (grid_n,) * d
    nodes = _grid_nodes(shape, d)
    v = np.broadcast_to(np.asarray(x_start, dtype=float), shape).copy()
    sweep = _SweepState()
    delta = math.inf
    used = 0
    for k in range(1, n_iter + 1):
        res = smap.step(nodes, v.ravel(), channels="x")
        if res.escaped.any():
            bad = int(np.argmax(res.escaped))
            return Escaped(role, beta, k, int(res.escaped.sum()), nodes[bad])
        w = res.y[0].reshape(shape)
        v_new = resample_shifted_values(w, smap.shift)
        delta = float(np.max(np.abs(v_new - v)))
        v = v_new
        used = k
        sweep.record(delta)
        if delta < stop_tol or sweep.stalled():
            break
        if projection_tol is not None and sweep.projected_tail() < projection_tol:
            break
    converged = (
        delta < stop_tol
        or sweep.stalled()
        or (projection_tol is not None and sweep.projected_tail() < projection_tol)
    )
    defect = _defect(smap, nodes, v)
    return GraphSample(v, role, defect, used, converged, grid_n, beta, delta)


def _pullback_scalar(family, beta, smap, grid_n, n_iter, role, stop_tol,
                     projection_tol, x_start, d):
    """theta-independent families: every node carries the same trajectory."""
    from .flow import _rk45_scalar, _rk4_scalar, _scalar_rhs

    rhs = _scalar_rhs(family, beta, "x", smap.reverse)
    driver = _rk4_scalar if smap.cfg.method == "rk4" else _rk45_scalar
    x = x_start
    sweep = _SweepState()
    delta = math.inf
    used = 0
    for k in range(1, n_iter + 1):
        y, ok, t_esc, _, _ = driver(rhs, 0.0, [x], smap.return_time, smap.cfg)
        if not ok:
            return Escaped(role, beta, k, grid_n**d, np.zeros(d))
        delta = abs(y[0] - x)
        x = y[0]
        used = k
        sweep.record(delta)
        if delta < stop_tol or sweep.stalled():
            break
        if projection_tol is not None and sweep.projected_tail() < projection_tol:
            break
    converged = (
        delta < stop_tol
        or sweep.stalled()
        or (projection_tol is not None and sweep.projected_tail() < projection_tol)
    )
    y, ok, _, _, _ = driver(rhs, 0.0, [x], smap.return_time, smap.cfg)
    defect = abs(y[0] - x) if ok else math.inf
    values = np.full((grid_n,) * d, x)
    return GraphSample(values, role, defect, used, converged, grid_n, beta, delta)


def _defect(smap: SectionMap, nodes: np.ndarray, v: np.ndarray) -> float:
    res = smap.step(nodes, v.ravel(), channels="x")
    if res.escaped.any():
        return math.inf
    target = interp_at_shift(v, smap.shift)
    return float(np.max(np.abs(res.y[0].reshape(v.shape) - target)))


def pullback_attractor(family: ForcedField, beta: float, rho, grid_n: int,
                       n_iter: int, cfg: IntegratorConfig, stop_tol: float = STOP_TOL,
                       projection_tol: float | None = None, x_start=None,
                       section_offset: float = 0.0) -> GraphSample | Escaped:
    """Attracting graph as the pullback limit from the upper section boundary.

    Returns Escaped as soon as any node leaves the escape window (no invariant
    graph exists in the section then). ``projection_tol`` optionally accepts a
    certified geometric-tail projection before the sup-change drops below
    ``stop_tol``; the default requires the full 1e-12 sweep change.
    """
    if grid_n < 16:
        raise ValueError("grid_n must be at least 16")
    if n_iter < 1:
        raise ValueError("n_iter must be positive")
    return _pullback(family, beta, rho, grid_n, n_iter, cfg, "attractor",
                     stop_tol, projection_tol, x_start, section_offset)


def pushforward_repeller(family: ForcedField, beta: float, rho, grid_n: int,
                         n_iter: int, cfg: IntegratorConfig, stop_tol: float = STOP_TOL,
                         projection_tol: float | None = None, x_start=None,
                         section_offset: float = 0.0) -> GraphSample | Escaped:
    """Repelling graph: pullback of the reversed flow from the lower boundary."""
    if grid_n < 16:
        raise ValueError("grid_n must be at least 16")
    if n_iter < 1:
        raise ValueError("n_iter must be positive")
    return _pullback(family, beta, rho, grid_n, n_iter, cfg, "repeller",
                     stop_tol, projection_tol, x_start, section_offset)


def make_pair(attractor: GraphSample, repeller: GraphSample,
              order_tol: float = 1e-9) -> GraphPair:
    """Pair the two graphs and compute gap statistics.

    The repeller must lie below the attractor up to ``order_tol`` at every
    node; a violation means the inputs are inconsistent.
    """
    if attractor.role != "attractor" or repeller.role != "repeller":
        raise ValueError("role mismatch: expected (attractor, repeller)")
    if attractor.values.shape != repeller.values.shape:
        raise ValueError("graphs live on different grids")
    gap = attractor.values - repeller.values
    if float(gap.min()) < -order_tol:
        raise ValueError(f"ordering violated by {-float(gap.min())}")
    flat_idx = int(np.argmin(gap))
    idx = np.unravel_index(flat_idx, gap.shape)
    theta = np.array(idx, dtype=float) / attractor.values.shape[0]
    return GraphPair(
        attractor=attractor,
        repeller=repeller,
        gap_min=float(gap.min()),
        gap_median=float(np.median(gap)),
        gap_max=float(gap.max()),
        argmin_theta=theta,
    )


def gap_stats(pair: GraphPair):
    """(gap_min, gap_median, gap_max, argmin_theta) of a computed pair."""
    return pair.gap_min, pair.gap_median, pair.gap_max, pair.argmin_theta


def lyapunov_of_graph(family: ForcedField, beta: float, rho, graph: GraphSample,
                      cfg: IntegratorConfig, defect_tol: float = 1e-6) -> LyapunovEstimate:
    """Graph Lyapunov exponent: grid average of log dx over one return.

    ``map_scale`` is the per-return exponent; ``flow_scale`` divides by the
    return time (equivalently multiplies by rho_D).
    """
    if graph.defect > defect_tol:
        raise ValueError(f"graph defect {graph.defect} exceeds {defect_tol}")
    rho_v = rho if isinstance(rho, RotationVector) else RotationVector(rho)
    smap = SectionMap(family, beta, rho_v, cfg)
    nodes = _grid_nodes(graph.values.shape, graph.d)
    res = smap.step(nodes, graph.values.ravel(), channels="xl", reuse_h=False)
    if res.escaped.any():
        raise FlowEscape("graph escaped while measuring its exponent")
    lam_map = float(np.mean(res.y[1]))
    return LyapunovEstimate(flow_scale=lam_map / smap.return_time, map_scale=lam_map)


def lift_graph(family: ForcedField, beta: float, rho, graph: GraphSample,
               grid_D: int, cfg: IntegratorConfig) -> LiftedGraph:
    """Flow the section graph over one full return onto a T^D grid.

    Level k of the last axis holds the graph at phase theta_D = k/grid_D. An
    attractor is flowed forward from the previous section crossing, a repeller
    backward from the next one (each lift then runs with the stable direction
    of its graph). All levels integrate in one batch; finished levels peel off
    as the shared time passes their phase.
    """
    if not graph.converged:
        raise ValueError("lift requires a converged section graph")
    rho_v = rho if isinstance(rho, RotationVector) else RotationVector(rho)
    d = graph.d
    T = 1.0 / rho_v.rho_D
    seg = T / grid_D
    sec_shape = (grid_D,) * d
    n_sec = grid_D**d
    backward = graph.role == "repeller"
    base_vals = graph.values if graph.values.shape == sec_shape else _regrid(graph.values, grid_D)
    nodes = _grid_nodes(sec_shape, d)
    out = np.empty(sec_shape + (grid_D,))
    out_flat = out.reshape(n_sec, grid_D)
    out_flat[:, 0] = base_vals.ravel()

    # peel order: level at phase k/grid_D finishes after duration
    # k*seg (forward lift) or (grid_D - k)*seg (backward lift)
    order = list(range(1, grid_D))
    if backward:
        order = order[::-1]

    theta0 = np.empty((len(order), n_sec, d))
    x0 = np.empty((len(order), n_sec))
    for row, k in enumerate(order):
        t_k = k * seg
        off = (T - t_k) if backward else -t_k
        shift = wrap_unit(off * rho_v.rho[:-1])
        theta0[row] = nodes + off * rho_v.rho[:-1]
        x0[row] = interp_at_shift(base_vals, shift).ravel()

    base = np.concatenate(
        [theta0.reshape(-1, d), np.zeros((len(order) * n_sec, 1))], axis=1
    )
    x_all = x0.reshape(-1)
    sgn = -1.0 if backward else 1.0
    h0 = None
    t_acc = 0.0
    for row, k in enumerate(order):
        live = slice(row * n_sec, None)  # rows at and past this one still flow
        res = flow_batch(family, beta, rho_v, base[live] + sgn * t_acc * rho_v.rho,
                         x_all[live], sgn * seg, cfg, channels="x", h0=h0)
        if res.escaped.any():
            raise FlowEscape("graph escaped during the lift")
        x_all[live] = res.y[0]
        h0 = res.h_last
        t_acc += seg
        out_flat[:, k] = x_all[row * n_sec: (row + 1) * n_sec]
    return LiftedGraph(values=out, grid_D=grid_D, role=graph.role, beta=beta)


def _regrid(values: np.ndarray, grid_D: int) -> np.ndarray:
    """Multilinear resample of a periodic grid onto grid_D nodes per axis."""
    out = values
    for axis in range(values.ndim):
        n = out.shape[axis]
        pos = np.arange(grid_D) * n / grid_D
        i0 = np.floor(pos).astype(int) % n
        frac = pos - np.floor(pos)
        a = np.take(out, i0, axis=axis)
        b = np.take(out, (i0 + 1) % n, axis=axis)
        shape = [1] * out.ndim
        shape[axis] = grid_D
        f = frac.reshape(shape)
        out = a * (1.0 - f) + b * f
    return out
