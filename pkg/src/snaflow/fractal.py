"""Box-counting dimension estimation for graph point clouds.

Counts occupied boxes of side eps in the max-metric on a dyadic ladder and
fits log N against -log eps by least squares over an interior scale window.
Dyadic epsilons divide the torus evenly, so periodic axes need no seam
handling. Hausdorff dimension is deliberately not estimated (no reliable
estimator at these sample sizes); box counting is the only exponent reported.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .fields import ForcedField
from .flow import FlowEscape, IntegratorConfig, flow_batch
from .graphs import GraphSample, LiftedGraph
from .section import SectionMap
from .torus import RotationVector, wrap_unit

__all__ = [
    "BoxCountLadder",
    "box_count",
    "default_epsilons",
    "graph_point_cloud",
]

MIN_POINTS = 1_000


@dataclass
class BoxCountLadder:
    epsilons: np.ndarray       # decreasing
    counts: np.ndarray
    fit_window: tuple          # (lo, hi) index range used by the fit, half-open
    slope: float
    slope_stderr: float
    local_slopes: np.ndarray   # per-octave log2 N(eps/2)/N(eps)


def default_epsilons(finest_power: int = 12, coarsest_power: int = 3) -> np.ndarray:
    """Dyadic ladder 2^-coarsest .. 2^-finest (d=1 graphs default; lifts use 9)."""
    return 2.0 ** (-np.arange(coarsest_power, finest_power + 1, dtype=float))


def box_count(points, epsilons=None, fit_exclude: int = 2) -> BoxCountLadder:
    """Count occupied eps-boxes of a point cloud in T^k x R (max-metric).

    ``points`` is (n, dim) with torus coordinates already in [0, 1); the last
    coordinate may be unbounded. The fit window drops ``fit_exclude`` scales at
    each end of the ladder: the coarsest boxes saturate the ambient space, the
    finest saturate the sample.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[0] == 0:
        raise ValueError("points must be a non-empty (n, dim) array")
    if pts.shape[0] < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} points, got {pts.shape[0]}")
    if epsilons is None:
        epsilons = default_epsilons()
    eps = np.asarray(epsilons, dtype=float)
    if eps.size < 2 or np.any(eps <= 0.0) or np.any(eps > 0.25):
        raise ValueError("epsilon ladder must lie in (0, 1/4] with at least two scales")
    if np.any(np.diff(eps) >= 0.0):
        raise ValueError("epsilon ladder must be strictly decreasing")
    ratios = eps[:-1] / eps[1:]
    if not np.allclose(ratios, 2.0, rtol=1e-12):
        raise ValueError("epsilon ladder must be geometric with ratio 1/2")

    counts = np.empty(eps.size, dtype=np.int64)
    for i, e in enumerate(eps):
        keys = np.floor(pts / e).astype(np.int64)
        counts[i] = len(np.unique(keys, axis=0))

    log_n = np.log(counts.astype(float))
    x = -np.log(eps)
    lo, hi = fit_exclude, eps.size - fit_exclude
    if hi - lo < 2:
        raise ValueError("fit window degenerate; supply a longer ladder")
    slope, stderr = _ls_slope(x[lo:hi], log_n[lo:hi])
    local = np.diff(log_n) / np.diff(x)
    return BoxCountLadder(
        epsilons=eps,
        counts=counts,
        fit_window=(lo, hi),
        slope=slope,
        slope_stderr=stderr,
        local_slopes=local,
    )


def _ls_slope(x, y):
    n = x.size
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym)) / sxx)
    resid = y - ym - slope * (x - xm)
    if n > 2:
        stderr = math.sqrt(float(np.sum(resid**2)) / (n - 2) / sxx)
    else:
        stderr = math.nan
    return slope, stderr


def graph_point_cloud(family: ForcedField, beta: float, rho, graph, n_points: int,
                      cfg: IntegratorConfig, seed: int = 0, n_orbits: int = 256,
                      burn_in: int = 32, lift_phases: int = 16) -> np.ndarray:
    """Sample (theta, x) along ergodic orbits on an invariant graph.

    For a section graph the orbit theta -> theta + omega is iterated with the
    true fibre maps (reversed maps for a repeller), seeded on the graph, so the
    points reach structure finer than the grid. For a LiftedGraph the section
    cloud is flowed to ``lift_phases`` stratified phases, yielding points in
    T^D x R. Returns an (n_points, dim) array.
    """
    if isinstance(graph, LiftedGraph):
        return _lift_cloud(family, beta, rho, graph, n_points, cfg, seed,
                           n_orbits, burn_in, lift_phases)
    return _section_cloud(family, beta, rho, graph, n_points, cfg, seed,
                          n_orbits, burn_in)


def _section_cloud(family, beta, rho, graph: GraphSample, n_points, cfg, seed,
                   n_orbits, burn_in):
    if not graph.converged:
        raise ValueError("point cloud requires a converged graph")
    rho_v = rho if isinstance(rho, RotationVector) else RotationVector(rho)
    reverse = graph.role == "repeller"
    smap = SectionMap(family, beta, rho_v, cfg, reverse=reverse)
    rng = np.random.default_rng(seed)
    theta = wrap_unit(rng.random((n_orbits, graph.d))
                      + np.arange(n_orbits)[:, None] / n_orbits)
    # seed on the trapping boundary: such orbits stay between the boundary and
    # the graph while graphs exist, and burn-in contracts them onto the graph
    lo, hi = family.section_bounds()
    x = np.full(n_orbits, lo if reverse else hi)
    n_steps = burn_in + math.ceil(n_points / n_orbits)
    pts = np.empty((n_orbits * (n_steps - burn_in), graph.d + 1))
    k = 0
    for step in range(n_steps):
        res = smap.step(theta, x, channels="x")
        if res.escaped.any():
            raise FlowEscape("orbit escaped while sampling the graph cloud")
        x = res.y[0]
        theta = wrap_unit(theta + smap.shift)
        if step >= burn_in:
            pts[k: k + n_orbits, : graph.d] = theta
            pts[k: k + n_orbits, graph.d] = x
            k += n_orbits
    return pts[:n_points]


def _lift_cloud(family, beta, rho, lifted: LiftedGraph, n_points, cfg, seed,
                n_orbits, burn_in, lift_phases):
    """Flow a section cloud to per-point stratified phases in [0, T).

    Each point carries its own flow time on a fine quantized phase grid
    (otherwise the cloud collapses onto constant-theta_D slabs). Points sort
    by duration and integrate as one batch that peels off bucket by bucket.
    A repeller cloud flows backward from the next crossing so the lift runs
    with the stable direction of its graph.
    """
    rho_v = rho if isinstance(rho, RotationVector) else RotationVector(rho)
    d = rho_v.D - 1
    sec_values = lifted.values[..., 0]
    section = GraphSample(
        values=sec_values, role=lifted.role, defect=0.0, iterations_used=0,
        converged=True, grid_n=lifted.grid_D, beta=beta, sup_change=0.0,
    )
    base_cloud = _section_cloud(family, beta, rho_v, section, n_points, cfg,
                                seed, n_orbits, burn_in)
    n = len(base_cloud)
    T = 1.0 / rho_v.rho_D
    n_q = max(int(lift_phases), 256)
    rng = np.random.default_rng(seed + 1)
    buckets = rng.permutation(np.arange(n) % n_q)
    u = (buckets + 0.5) / n_q * T
    backward = lifted.role == "repeller"
    durations = (T - u) if backward else u
    order = np.argsort(durations, kind="stable")
    theta_sec = base_cloud[order, :d]
    x = base_cloud[order, d].copy()
    dur = durations[order]
    base = np.concatenate([theta_sec, np.zeros((n, 1))], axis=1)
    sgn = -1.0 if backward else 1.0

    t_acc = 0.0
    start = 0
    h0 = None
    while start < n:
        target = dur[start]
        seg = target - t_acc
        live = slice(start, n)
        if seg > 0.0:
            res = flow_batch(family, beta, rho_v, base[live] + sgn * t_acc * rho_v.rho,
                             x[live], sgn * seg, cfg, channels="x", h0=h0)
            if res.escaped.any():
                raise FlowEscape("orbit escaped while lifting the graph cloud")
            x[live] = res.y[0]
            h0 = res.h_last
            t_acc = target
        start = int(np.searchsorted(dur, target, side="right"))

    pts = np.empty((n, rho_v.D + 1))
    phase_times = u[order]
    pts[:, : rho_v.D] = wrap_unit(base + phase_times[:, None] * rho_v.rho)
    pts[:, rho_v.D] = x
    return pts[:n_points]
