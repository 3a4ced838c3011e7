"""Ambient inertia estimation, event location, and magnitude estimation,
each next to its conventional baseline (TDOA multilateration, system
frequency-response constant)."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize

from . import events, gridsim, mvee, seeds, sigproc
from .learn import Forest, ForestParams, fit_forest, predict_forest
from .measurement import TimeSeriesGrid


class SegmentError(ValueError):
    """Ambient segment contains a detected event; re-segment the stream."""


class LayoutMismatch(ValueError):
    """Model was trained on a different sensor layout."""


def layout_hash(sensors) -> str:
    text = ";".join(f"{s.meta.id}:{s.meta.x_km:.6f}:{s.meta.y_km:.6f}"
                    for s in sensors)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def grid_layout_hash(grid: TimeSeriesGrid, sites) -> str:
    by_id = {s.meta.id: s for s in sites}
    ordered = [by_id[sid] for sid in grid.sensors]
    return layout_hash(ordered)


# ---------------------------------------------------------------------------
# inertia estimation


@dataclass
class InertiaModel:
    forest: Forest
    window_s: float
    step_s: float
    detrend_order: int
    h_range: tuple            # (min, max) MW*s seen in training
    n_sensors: int

    def clamp(self, h: float) -> float:
        return float(np.clip(h, 0.5 * self.h_range[0], 2.0 * self.h_range[1]))


def ambient_features(grid: TimeSeriesGrid, window_s: float = 10.0,
                     step_s: float = 2.5, detrend_order: int = 1,
                     jitter_seed: int = 7) -> np.ndarray:
    """Mean MVEE feature vector over sliding windows of the segment.

    Scale entries (volume, semi-axes, eccentricity) are averaged in the
    log domain: window-to-window variation is multiplicative, and the
    geometric mean is the stable summary."""
    t0 = grid.t0
    t_end = grid.t0 + grid.dt_s * (grid.n_samples - 1)
    rng = np.random.default_rng(jitter_seed)
    feats = []
    start = t0
    while start + window_s <= t_end + 1e-9:
        pts = mvee.window_points(grid, start, start + window_s,
                                 detrend_order=detrend_order)
        if pts.shape[1] > mvee.PCA_SENSOR_LIMIT:
            pts = mvee._pca_reduce(pts, 2)
        pts = pts + mvee.JITTER_FLOOR_HZ * rng.standard_normal(pts.shape)
        f = mvee.features(mvee.mvee(pts, tol=1e-6))
        d = f.semi_axes.size
        vec = f.to_vector()
        scale = np.concatenate([[0], np.arange(1, 1 + d), [vec.size - 1]]).astype(int)
        vec[scale] = np.log(np.maximum(vec[scale], 1e-300))
        feats.append(vec)
        start += step_s
    if not feats:
        raise SegmentError("segment shorter than one feature window")
    return np.mean(feats, axis=0)


def estimate_inertia(grid: TimeSeriesGrid, model: InertiaModel) -> float:
    """Total system inertia (MW*s) from an ambient segment of >= 60 s."""
    duration = grid.dt_s * (grid.n_samples - 1)
    if duration < 60.0 - 1e-9:
        raise SegmentError(f"need >= 60 s of ambient data, got {duration:.1f} s")
    triggers = events.detect_trigger(grid)
    if triggers:
        raise SegmentError(
            f"event detected at t={triggers[0]:.1f} s; re-segment the stream")
    if len(grid.sensors) != model.n_sensors:
        raise LayoutMismatch("sensor count differs from training layout")
    x = ambient_features(grid, model.window_s, model.step_s, model.detrend_order)
    return model.clamp(predict_forest(model.forest, x))


def scale_inertia(model: gridsim.GridModel, frac: float) -> gridsim.GridModel:
    gens = [replace(g, H_s=g.H_s * frac) for g in model.gens]
    return replace(model, gens=gens)


def make_inertia_corpus(model: gridsim.GridModel, n_scenarios: int, seed: int,
                        frac_range=(0.5, 1.0), duration_s: float = 70.0,
                        sigma_pu: float = 0.0005, corr_time_s: float = 0.5):
    """Ambient scenarios across an inertia sweep; returns (grids, h_truths).

    The load-noise correlation time sits in the swing band: quasi-static
    excitation would see only the governor response, which carries no
    inertia signature."""
    base = replace(model, wave_speed_km_s=np.inf)
    grids, truths = [], []
    for i in range(n_scenarios):
        rng = seeds.rng(seed, f"inertia-scen-{i}")
        frac = float(rng.uniform(*frac_range))
        scen = scale_inertia(base, frac)
        script = gridsim.EventScript([gridsim.Ambient(sigma_pu, corr_time_s)])
        sim = gridsim.simulate(scen, script, duration_s,
                               seed=seeds.spawn(seed, f"inertia-sim-{i}"))
        grids.append(sim.grid)
        truths.append(sim.truth.H_total_MWs)
    return grids, np.array(truths)


def train_inertia_model(grids, h_truths, seed: int = 0, window_s: float = 10.0,
                        step_s: float = 5.0, detrend_order: int = 1,
                        params: ForestParams = None) -> InertiaModel:
    X = np.vstack([ambient_features(g, window_s, step_s, detrend_order)
                   for g in grids])
    params = params or ForestParams(n_trees=200, min_leaf=2,
                                    seed=seeds.spawn(seed, "inertia-forest"))
    forest = fit_forest(X, np.asarray(h_truths), params, task="regression")
    return InertiaModel(forest, window_s, step_s, detrend_order,
                        (float(np.min(h_truths)), float(np.max(h_truths))),
                        len(grids[0].sensors))


# ---------------------------------------------------------------------------
# event location and magnitude


@dataclass
class LocatorModel:
    forest_x: Forest
    forest_y: Forest
    layout_hash: str
    scheme: mvee.WindowScheme


@dataclass
class MagnitudeModel:
    """Per-event-kind regressors behind two routers.

    Trips and load steps scale differently in feature space, so one
    regressor per kind keeps the resolution where it matters.  The kind is
    picked by a direct kind classifier cross-checked against a source-bus
    classifier (buses determine the kind in the corpus); when the two
    disagree the per-kind predictions are blended in log space."""

    forest: Forest                  # regressor for the most common kind
    layout_hash: str
    scheme: mvee.WindowScheme
    kind_router: Forest = None
    forests_by_kind: dict = None
    kinds: list = None
    bus_router: Forest = None
    bus_classes: list = None
    kind_of_bus: dict = None


@dataclass
class BetaEstimator:
    """System frequency-response constant: MW released per Hz of steady
    frequency deviation, on base_MW."""

    beta_pu_per_hz: float
    base_MW: float

    def __post_init__(self):
        if self.beta_pu_per_hz <= 0:
            raise ValueError("beta must be positive")


def beta_from_model(model: gridsim.GridModel) -> BetaEstimator:
    """Nominal frequency-response constant of the pre-event system."""
    beta = 0.0
    for g in model.online_gens():
        s = g.S_mva / model.s_base_mva
        beta += s / (g.droop_R * model.f0) + g.D_pu * s / model.f0
    for p in model.pv:
        if p.headroom_frac > 0:
            beta += p.P_avail_pu / (p.droop_R * model.f0)
    return BetaEstimator(beta, model.s_base_mva)


def feature_rows(n_sensors: int, limit: int = mvee.PCA_SENSOR_LIMIT) -> list:
    """Evenly spread sensor rows used for event features.

    Capping at the MVEE dimension limit keeps the ellipsoid in per-sensor
    axes (no PCA), so orientation and center stay anchored to specific
    sensors and carry location information."""
    if n_sensors <= limit:
        return list(range(n_sensors))
    return [int(round(i * (n_sensors - 1) / (limit - 1))) for i in range(limit)]


def event_features(grid: TimeSeriesGrid, t_event: float,
                   scheme: mvee.WindowScheme = None) -> np.ndarray:
    scheme = scheme or mvee.WindowScheme()
    sub = grid.select(feature_rows(len(grid.sensors)))
    feats = mvee.windowed_features(sub, t_event, scheme)
    return np.concatenate([f.to_vector() for f in feats])


def locate_event_ai(grid: TimeSeriesGrid, t_event: float, model: LocatorModel,
                    sites=None) -> tuple:
    if sites is not None and grid_layout_hash(grid, sites) != model.layout_hash:
        raise LayoutMismatch("sensor layout hash differs from training")
    x = event_features(grid, t_event, model.scheme)
    return (float(predict_forest(model.forest_x, x)),
            float(predict_forest(model.forest_y, x)))


def estimate_magnitude_ai(grid: TimeSeriesGrid, t_event: float,
                          model: MagnitudeModel, sites=None) -> float:
    if sites is not None and grid_layout_hash(grid, sites) != model.layout_hash:
        raise LayoutMismatch("sensor layout hash differs from training")
    x = event_features(grid, t_event, model.scheme)
    if model.kind_router is None:
        return float(np.exp(predict_forest(model.forest, x)))
    kind_a = model.kinds[int(predict_forest(model.kind_router, x).argmax())]
    kind_b = kind_a
    if model.bus_router is not None:
        bus = model.bus_classes[int(predict_forest(model.bus_router, x).argmax())]
        kind_b = model.kind_of_bus.get(bus, kind_a)
    if kind_a == kind_b:
        return float(np.exp(predict_forest(model.forests_by_kind[kind_a], x)))
    log_a = predict_forest(model.forests_by_kind[kind_a], x)
    log_b = predict_forest(model.forests_by_kind[kind_b], x)
    return float(np.exp(0.5 * (log_a + log_b)))


def arrival_times(grid: TimeSeriesGrid, t_event: float,
                  rocof_thr: float = 0.05, search_s: float = 4.0) -> dict:
    """Per-sensor first RoCoF threshold crossing after the event.

    Uses the raw (unsmoothed) RoCoF: single-sample threshold crossings are
    exactly what makes conventional arrival picks soft evidence under
    device noise."""
    roc = sigproc.rocof(grid.freq, grid.dt_s, smooth_n=1)
    times = grid.times()
    k0 = max(grid.index_of_time(t_event) - 2, 0)
    k1 = min(grid.index_of_time(t_event + search_s), grid.n_samples)
    out = {}
    for i, sid in enumerate(grid.sensors):
        hits = np.nonzero(np.abs(np.nan_to_num(roc[i, k0:k1])) > rocof_thr)[0]
        if len(hits):
            out[sid] = float(times[k0 + hits[0]])
    return out


def locate_event_tdoa(grid: TimeSeriesGrid, t_event: float, sites,
                      wave_speed_km_s: float, rocof_thr: float = 0.05,
                      cell_km: float = 5.0) -> tuple:
    """Multilateration from first-arrival times.

    Coarse grid search over the layout bounding box (5 km cells), then
    Nelder-Mead refinement; the reference time t0 is profiled out in
    closed form, so a uniform shift of all arrivals cannot change the fix.
    """
    arrivals = arrival_times(grid, t_event, rocof_thr)
    sensor_xy = {s.meta.id: (s.meta.x_km, s.meta.y_km) for s in sites}
    ids = [sid for sid in arrivals if sid in sensor_xy]
    if len(ids) < 3:
        raise ValueError(f"need >= 3 sensor arrivals, got {len(ids)}")
    t_arr = np.array([arrivals[sid] for sid in ids])
    xy = np.array([sensor_xy[sid] for sid in ids])
    return _tdoa_solve(t_arr, xy, wave_speed_km_s, cell_km)


def _tdoa_cost(t_arr, xy, v, px, py):
    d = np.sqrt((xy[:, 0] - px[..., None]) ** 2 + (xy[:, 1] - py[..., None]) ** 2)
    resid = t_arr - d / v
    resid = resid - resid.mean(axis=-1, keepdims=True)
    return (resid ** 2).sum(axis=-1)


def _tdoa_solve(t_arr, xy, v, cell_km=5.0):
    pad = 0.2 * max(np.ptp(xy[:, 0]), np.ptp(xy[:, 1]), cell_km)
    gx = np.arange(xy[:, 0].min() - pad, xy[:, 0].max() + pad + cell_km, cell_km)
    gy = np.arange(xy[:, 1].min() - pad, xy[:, 1].max() + pad + cell_km, cell_km)
    PX, PY = np.meshgrid(gx, gy, indexing="ij")
    cost = _tdoa_cost(t_arr, xy, v, PX, PY)
    i, j = np.unravel_index(np.argmin(cost), cost.shape)
    start = np.array([gx[i], gy[j]])
    res = minimize(lambda p: _tdoa_cost(t_arr, xy, v, np.array(p[0]),
                                        np.array(p[1])),
                   start, method="Nelder-Mead",
                   options={"xatol": 0.05, "fatol": 1e-12})
    return (float(res.x[0]), float(res.x[1]))


def fit_wave_speed(cases, sites, v_grid=None) -> float:
    """Regress the propagation speed from events with known sources."""
    v_grid = v_grid if v_grid is not None else np.arange(100.0, 1500.0, 10.0)
    sensor_xy = {s.meta.id: (s.meta.x_km, s.meta.y_km) for s in sites}
    best_v, best_cost = None, np.inf
    for v in v_grid:
        cost = 0.0
        for case in cases:
            arrivals = arrival_times(case.grid, case.truth.t_event)
            ids = [sid for sid in arrivals if sid in sensor_xy]
            if len(ids) < 3:
                continue
            t_arr = np.array([arrivals[sid] for sid in ids])
            xy = np.array([sensor_xy[sid] for sid in ids])
            src = np.array(case.truth.source_xy_km)
            d = np.hypot(xy[:, 0] - src[0], xy[:, 1] - src[1])
            resid = t_arr - d / v
            cost += float(((resid - resid.mean()) ** 2).sum())
        if cost < best_cost:
            best_cost, best_v = cost, v
    return float(best_v)


def estimate_magnitude_beta(grid: TimeSeriesGrid, t_event: float,
                            est: BetaEstimator, settle_tol_hz: float = 0.01) -> float:
    """Conventional estimate: beta * (pre-event - settling frequency) * base."""
    points = events.compute_points(grid, t_event)
    k1 = grid.index_of_time(t_event + events.WINDOW_POST_S)
    k_tail = grid.index_of_time(t_event + events.WINDOW_POST_S - 2.0)
    tail = np.nanmean(grid.freq, axis=0)[k_tail:k1]
    # a slow governor recovery trend is fine; sustained oscillation is not
    trend = np.linspace(tail[0], tail[-1], len(tail))
    if (tail - trend).std() > settle_tol_hz:
        raise ValueError("frequency has not settled; oscillation ongoing")
    return est.beta_pu_per_hz * (points["A"] - points["B"]) * est.base_MW


def calibrate_beta(cases, base_MW: float) -> BetaEstimator:
    """Fit the response constant from historical events with known size,
    matching how operators obtain beta in practice (the point-B convention
    bakes the partially-recovered settling level into the constant)."""
    ratios = []
    for c in cases:
        points = events.compute_points(c.grid, c.t_event)
        drop = points["A"] - points["B"]
        if abs(drop) > 1e-6:
            ratios.append(c.truth.dP_MW / (drop * base_MW))
    if not ratios:
        raise ValueError("no usable calibration events")
    return BetaEstimator(float(np.median(ratios)), base_MW)


# ---------------------------------------------------------------------------
# corpus and training


@dataclass
class EventCase:
    grid: TimeSeriesGrid
    t_event: float
    truth: gridsim.Truth
    pre_model: gridsim.GridModel = None


def add_measurement_noise(grid: TimeSeriesGrid, sigma_hz: float,
                          sigma_deg: float, rng: np.random.Generator
                          ) -> TimeSeriesGrid:
    """White per-device reporting noise on the frequency/angle channels."""
    freq = grid.freq + sigma_hz * rng.standard_normal(grid.freq.shape)
    angle = grid.angle + sigma_deg * rng.standard_normal(grid.angle.shape)
    return TimeSeriesGrid(list(grid.sensors), grid.t0, grid.dt_s, freq, angle,
                          grid.volt.copy(), grid.mask.copy())


def make_estimation_corpus(model: gridsim.GridModel, n_cases: int, seed: int,
                           dp_range=(0.1, 0.55), t_event: float = 4.0,
                           meas_noise_hz: float = 0.003) -> list:
    """Trip / load-step events across source buses with known truth.

    Propagation delay stays enabled (the TDOA baseline needs arrival
    structure) and sensors report with white device noise, which is what
    makes single-sample arrival picks much softer evidence than the
    windowed ellipsoid features.  The horizon covers the W4 settling
    window.
    """
    cases = []
    load_buses = [b for b in range(model.buses) if model.loads[b] > 0]
    t_end = t_event + mvee.WindowScheme().w4[0] + mvee.WindowScheme().w4[1] + 0.3
    for i in range(n_cases):
        rng = seeds.rng(seed, f"estimation-case-{i}")
        scen = events._vary_dispatch(model, rng)
        dp = float(rng.uniform(*dp_range))
        if i % 2 == 0:
            gen = int(rng.integers(0, len(scen.gens)))
            scen = events._pin_unit_output(scen, gen, dp)
            script = gridsim.EventScript([gridsim.Ambient(0.0008, 5.0),
                                          gridsim.GenTrip(t_event, gen)])
        else:
            bus = int(rng.choice(load_buses))
            script = gridsim.EventScript([gridsim.Ambient(0.0008, 5.0),
                                          gridsim.LoadStep(t_event, bus, dp)])
        sim = gridsim.simulate(scen, script, t_end,
                               seed=seeds.spawn(seed, f"estimation-sim-{i}"))
        grid = add_measurement_noise(sim.grid, meas_noise_hz, 0.05,
                                     seeds.rng(seed, f"estimation-noise-{i}"))
        cases.append(EventCase(grid, t_event, sim.truth, scen))
    return cases


def train_locator(cases, sites, seed: int = 0,
                  scheme: mvee.WindowScheme = None) -> LocatorModel:
    scheme = scheme or mvee.WindowScheme()
    X = np.vstack([event_features(c.grid, c.t_event, scheme) for c in cases])
    x_t = np.array([c.truth.source_xy_km[0] for c in cases])
    y_t = np.array([c.truth.source_xy_km[1] for c in cases])
    fx = fit_forest(X, x_t, ForestParams(n_trees=200,
                                         seed=seeds.spawn(seed, "loc-x")))
    fy = fit_forest(X, y_t, ForestParams(n_trees=200,
                                         seed=seeds.spawn(seed, "loc-y")))
    return LocatorModel(fx, fy, layout_hash(sites), scheme)


def train_magnitude(cases, sites, seed: int = 0,
                    scheme: mvee.WindowScheme = None) -> MagnitudeModel:
    """Regress log magnitude (symmetric relative errors) on W1..W4 features,
    with one regressor per event kind behind the routers."""
    scheme = scheme or mvee.WindowScheme()
    X = np.vstack([event_features(c.grid, c.t_event, scheme) for c in cases])
    mw = np.array([c.truth.dP_MW for c in cases])
    kinds = sorted({c.truth.event_kind for c in cases})
    kind_idx = np.array([kinds.index(c.truth.event_kind) for c in cases])

    forests = {}
    for k, kind in enumerate(kinds):
        mask = kind_idx == k
        forests[kind] = fit_forest(X[mask], np.log(mw[mask]), ForestParams(
            n_trees=200, min_leaf=1, seed=seeds.spawn(seed, f"magnitude-{kind}")))
    main = forests[kinds[int(np.bincount(kind_idx).argmax())]]

    kind_router = bus_router = None
    bus_classes = kind_of_bus = None
    if len(kinds) > 1:
        kind_router = fit_forest(X, kind_idx, ForestParams(
            n_trees=300, seed=seeds.spawn(seed, "magnitude-router")),
            task="classification")
        buses = np.array([c.truth.source_bus for c in cases])
        bus_classes = sorted(set(int(b) for b in buses))
        bus_lab = np.array([bus_classes.index(b) for b in buses])
        bus_router = fit_forest(X, bus_lab, ForestParams(
            n_trees=300, seed=seeds.spawn(seed, "magnitude-bus-router")),
            task="classification")
        kind_of_bus = {}
        for b in bus_classes:
            kk = kind_idx[buses == b]
            kind_of_bus[b] = kinds[int(np.bincount(kk).argmax())]
    return MagnitudeModel(main, layout_hash(sites), scheme, kind_router,
                          forests, kinds, bus_router, bus_classes, kind_of_bus)


def nearest_bus(model: gridsim.GridModel, xy) -> int:
    d = np.hypot(model.bus_xy_km[:, 0] - xy[0], model.bus_xy_km[:, 1] - xy[1])
    return int(np.argmin(d))
