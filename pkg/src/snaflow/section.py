"""First return map to the section theta_D = 0 and the flow/map exponent relation.

The return map evaluates the flow for one return time 1/rho_D from a base
point (theta, section_offset) on T^D; the section coordinate advances by
omega = (rho_1, ..., rho_d)/rho_D. Its inverse integrates the reversed field
along -rho for the same duration. Derivative channels are exactly the
variational-flow channels at t = 1/rho_D (same code path).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import ForcedField
from .flow import FlowBatchResult, FlowEscape, IntegratorConfig, flow_batch
from .torus import RotationVector, induce_frequency, wrap_unit

__all__ = [
    "ReturnMapEval",
    "SectionMap",
    "return_map",
    "inverse_return_map",
    "lyapunov_relation_check",
]


@dataclass(frozen=True)
class ReturnMapEval:
    """One fibre-map evaluation with its tracked derivatives."""

    x_next: float
    log_dx: float
    dtheta: float
    dtheta2: float
    dxx_ratio: float
    dtheta_dx_ratio: float
    escaped: bool = False
    escape_time: float | None = None

    @property
    def dx(self) -> float:
        return math.exp(self.log_dx)

    @property
    def dxx(self) -> float:
        return self.dxx_ratio * math.exp(self.log_dx)

    @property
    def dtheta_dx(self) -> float:
        return self.dtheta_dx_ratio * math.exp(self.log_dx)


class SectionMap:
    """Batched access to the first return map of a driven family.

    ``reverse=True`` yields the inverse fibre maps (reversed field along
    -rho); the section shift is then -omega.
    """

    def __init__(self, family: ForcedField, beta: float, rho, cfg: IntegratorConfig,
                 reverse: bool = False, section_offset: float = 0.0):
        family.check_beta(beta)
        self.family = family
        self.beta = float(beta)
        self.rho = rho if isinstance(rho, RotationVector) else RotationVector(rho)
        if self.rho.D != family.D:
            raise ValueError(f"rho has {self.rho.D} components but the family lives on T^{family.D}")
        self.cfg = cfg
        self.reverse = bool(reverse)
        self.section_offset = float(section_offset)
        freq = induce_frequency(self.rho)
        self.return_time = freq.return_time
        self.omega = freq.omega
        self.d = freq.d
        shift = -freq.omega if reverse else freq.omega
        self.shift = wrap_unit(shift)
        self._h0 = None

    def base_points(self, theta_sec: np.ndarray) -> np.ndarray:
        theta_sec = np.atleast_2d(np.asarray(theta_sec, dtype=float))
        n = theta_sec.shape[0]
        col = np.full((n, 1), self.section_offset)
        return np.concatenate([theta_sec, col], axis=1)

    def step(self, theta_sec, x, channels: str = "x", direction=None,
             reuse_h: bool = True) -> FlowBatchResult:
        """Evaluate the fibre maps at (theta_sec, x); batch over rows."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        base = self.base_points(theta_sec)
        if base.shape[0] != x.size:
            raise ValueError("theta_sec and x must have matching batch sizes")
        t = -self.return_time if self.reverse else self.return_time
        res = flow_batch(self.family, self.beta, self.rho, base, x, t, self.cfg,
                         channels=channels, direction=direction,
                         h0=self._h0 if reuse_h else None)
        self._h0 = res.h_last
        return res


def _eval_from_batch(res: FlowBatchResult, i: int = 0) -> ReturnMapEval:
    m = res.y.shape[0]
    get = lambda j: float(res.y[j, i]) if j < m else 0.0
    esc = bool(res.escaped[i])
    return ReturnMapEval(
        x_next=get(0),
        log_dx=get(1),
        dtheta=get(2),
        dxx_ratio=get(3),
        dtheta_dx_ratio=get(4),
        dtheta2=get(5),
        escaped=esc,
        escape_time=float(res.escape_times[i]) if esc else None,
    )


def return_map(family: ForcedField, beta: float, rho, theta_sec, x: float,
               cfg: IntegratorConfig, direction=None) -> ReturnMapEval:
    """xi~_theta(x): one forward return with all derivative channels.

    ``theta_sec`` lives on the d-dimensional section; ``direction`` is a unit
    section vector (defaults to the first axis).
    """
    smap = SectionMap(family, beta, rho, cfg)
    th = np.atleast_1d(np.asarray(theta_sec, dtype=float))[None, :]
    res = smap.step(th, [float(x)], channels="full",
                    direction=_section_direction(direction, smap.d), reuse_h=False)
    return _eval_from_batch(res)


def inverse_return_map(family: ForcedField, beta: float, rho, theta_sec, x: float,
                       cfg: IntegratorConfig, direction=None) -> ReturnMapEval:
    """Inverse fibre map via the reversed field: xi~^-1(xi~(x)) = x."""
    smap = SectionMap(family, beta, rho, cfg, reverse=True)
    th = np.atleast_1d(np.asarray(theta_sec, dtype=float))[None, :]
    res = smap.step(th, [float(x)], channels="full",
                    direction=_section_direction(direction, smap.d), reuse_h=False)
    return _eval_from_batch(res)


def _section_direction(direction, d: int):
    if direction is None:
        v = np.zeros(d)
        v[0] = 1.0
        return v
    v = np.atleast_1d(np.asarray(direction, dtype=float))
    if v.size != d:
        raise ValueError(f"section direction needs {d} components")
    return v


def _grid_nodes(grid_shape, d: int) -> np.ndarray:
    axes = [np.arange(n) / n for n in grid_shape]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1).reshape(-1, d)


def lyapunov_relation_check(family: ForcedField, beta: float, rho, graph,
                            cfg: IntegratorConfig, n_lift: int = 48,
                            defect_tol: float = 1e-6):
    """Compare the flow-scale exponent with rho_D times the map-scale exponent.

    ``graph`` is an invariant section graph (anything with ``values`` shaped
    (N,)*d and a ``defect`` attribute, or a bare array). The map exponent is
    the grid average of log dx over one return on the graph. The flow exponent
    is computed independently by lifting the graph over a full return: the
    T^D average of log dx_xi(1/rho_D, ., .) along the lifted graph, times
    rho_D. Returns (lambda_flow, lambda_map, residual).
    """
    values = np.asarray(getattr(graph, "values", graph), dtype=float)
    defect = getattr(graph, "defect", None)
    rho_v = rho if isinstance(rho, RotationVector) else RotationVector(rho)
    d = rho_v.D - 1
    if values.ndim != d:
        raise ValueError(f"graph values must be a {d}-dimensional grid")
    smap = SectionMap(family, beta, rho_v, cfg)
    nodes = _grid_nodes(values.shape, d)
    flat = values.ravel()
    if defect is None:
        defect = graph_defect(smap, values)
    if defect > defect_tol:
        raise ValueError(f"input graph defect {defect} exceeds {defect_tol}")

    res = smap.step(nodes, flat, channels="xl", reuse_h=False)
    if res.escaped.any():
        raise FlowEscape("graph escaped during the map-exponent evaluation")
    lambda_map = float(np.mean(res.y[1]))

    # independent flow-scale route: cumulative log dx at 2 n_lift checkpoints
    # along [0, 2/rho_D]; the T^D average pairs each lift time s with s + T
    T = smap.return_time
    base = smap.base_points(nodes)
    logs = np.empty((2 * n_lift + 1, flat.size))
    logs[0] = 0.0
    h0 = None
    seg = T / n_lift
    state_x = flat.copy()
    state_l = np.zeros_like(flat)
    t_acc = 0.0
    for k in range(2 * n_lift):
        shifted = base + t_acc * rho_v.rho
        r = flow_batch(family, beta, rho_v, shifted, state_x, seg, cfg,
                       channels="xl", h0=h0)
        if r.escaped.any():
            raise FlowEscape("graph escaped during the flow-exponent lift")
        state_x = r.y[0]
        state_l = state_l + r.y[1]
        h0 = r.h_last
        t_acc += seg
        logs[k + 1] = state_l
    pair_means = [np.mean(logs[k + n_lift] - logs[k]) for k in range(n_lift)]
    lambda_flow = rho_v.rho_D * float(np.mean(pair_means))

    residual = abs(lambda_flow - rho_v.rho_D * lambda_map)
    return lambda_flow, lambda_map, residual


def graph_defect(smap: SectionMap, values: np.ndarray) -> float:
    """sup over nodes of |xi~(theta, v(theta)) - v(theta + shift)| by interpolation."""
    from .graphs import interp_at_shift  # local import: graphs builds on section

    nodes = _grid_nodes(values.shape, values.ndim)
    res = smap.step(nodes, values.ravel(), channels="x", reuse_h=False)
    if res.escaped.any():
        return math.inf
    target = interp_at_shift(values, smap.shift)
    return float(np.max(np.abs(res.y[0].reshape(values.shape) - target)))
