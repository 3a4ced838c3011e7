"""Multi-machine swing-equation simulator and ground-truth oracle.

Machines follow the classical swing model with first-order governors on a
lossless line network.  The network is Kron-reduced to the machine
internal nodes, giving sine-coupled pure ODE dynamics that RK4 integrates
quickly; bus injections (loads, events, PV) act through the reduction's
distribution factors, and bus angles/frequencies are recovered from the
machine states afterwards.  Faults are modeled by grounding a bus before
the reduction.  Disturbance propagation to distant sensors is modeled as
a pure distance/wave-speed arrival delay applied to the event's effect.

Simulations are pure functions of (model, script, seed) and safe to run
in parallel for dataset generation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.signal import lfilter

from . import seeds
from .measurement import SensorMeta, TimeSeriesGrid, wrap_angle_deg

TWO_PI = 2.0 * np.pi
DIVERGENCE_HZ = 5.0
SPREAD_LIMIT_RAD = np.pi


class ModelError(ValueError):
    """Inconsistent grid model (unbalanced start, disconnected graph, ...)."""


class PowerFlowError(RuntimeError):
    """Equilibrium solve did not converge."""


# ---------------------------------------------------------------------------
# model / script types


@dataclass
class Generator:
    """Synchronous machine: classical model plus first-order governor.

    H_s, Pm_pu and xdp_pu are on the machine base S_mva; droop_R is the
    per-unit speed droop (steady-state pu power per pu frequency).
    """

    bus: int
    H_s: float
    S_mva: float
    D_pu: float = 0.0
    droop_R: float = 0.05
    T_gov_s: float = 5.0
    Pm_pu: float = 0.0
    online: bool = True
    xdp_pu: float = 0.25

    def __post_init__(self):
        if self.H_s <= 0 or self.S_mva <= 0:
            raise ModelError("H_s and S_mva must be positive")
        if self.droop_R <= 0:
            raise ModelError("droop_R must be positive")
        if self.T_gov_s < 0:
            raise ModelError("T_gov_s must be >= 0")


@dataclass
class PvPlant:
    """Inverter plant delivering P_avail*(1-headroom) plus droop-deployed
    reserve, never exceeding P_avail.  P_avail_pu is on the system base."""

    bus: int
    P_avail_pu: float
    headroom_frac: float = 0.0
    droop_R: float = 0.02

    def __post_init__(self):
        if not 0.0 <= self.headroom_frac <= 1.0:
            raise ModelError("headroom_frac must lie in [0, 1]")

    @property
    def delivered_pu(self) -> float:
        return self.P_avail_pu * (1.0 - self.headroom_frac)


@dataclass
class SensorSite:
    meta: SensorMeta
    bus: int


@dataclass
class GridModel:
    """Synthetic multi-machine system.

    loads are per-bus demands in pu on s_base_mva; bus_xy_km places buses
    on a plane for the propagation-delay model.
    """

    buses: int
    lines: list          # (i, j, B_pu) susceptance entries
    gens: list
    pv: list = field(default_factory=list)
    loads: np.ndarray = None
    f0: float = 60.0
    sensors: list = field(default_factory=list)
    wave_speed_km_s: float = 500.0
    bus_xy_km: np.ndarray = None
    s_base_mva: float = 1000.0

    def __post_init__(self):
        if self.loads is None:
            self.loads = np.zeros(self.buses)
        self.loads = np.asarray(self.loads, dtype=float)
        if self.bus_xy_km is None:
            self.bus_xy_km = np.zeros((self.buses, 2))
        self.bus_xy_km = np.asarray(self.bus_xy_km, dtype=float)

    def online_gens(self):
        return [g for g in self.gens if g.online]

    def h_total_mws(self) -> float:
        return sum(g.H_s * g.S_mva for g in self.online_gens())

    def total_load_pu(self) -> float:
        return float(self.loads.sum())

    def imbalance_pu(self) -> float:
        gen = sum(g.Pm_pu * g.S_mva / self.s_base_mva for g in self.online_gens())
        pv = sum(p.delivered_pu for p in self.pv)
        return gen + pv - self.total_load_pu()

    def validate(self):
        for g in self.gens:
            if not 0 <= g.bus < self.buses:
                raise ModelError(f"generator bus {g.bus} out of range")
        for p in self.pv:
            if not 0 <= p.bus < self.buses:
                raise ModelError(f"pv bus {p.bus} out of range")
        if not self.online_gens():
            raise ModelError("no online generators")
        if abs(self.imbalance_pu()) > 1e-9:
            raise ModelError(f"unbalanced start: {self.imbalance_pu():.3e} pu mismatch")
        adj = [[] for _ in range(self.buses)]
        for i, j, b in self.lines:
            if b <= 0:
                raise ModelError("line susceptance must be positive")
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        stack = [0]
        while stack:
            for nb in adj[stack.pop()]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        if len(seen) != self.buses and self.buses > 1:
            raise ModelError("line graph is not connected")


def rebalance(model: GridModel) -> GridModel:
    """Scale machine setpoints so generation matches load minus PV exactly."""
    target = model.total_load_pu() - sum(p.delivered_pu for p in model.pv)
    online = model.online_gens()
    current = sum(g.Pm_pu * g.S_mva / model.s_base_mva for g in online)
    gens = []
    for g in model.gens:
        if g.online and current > 0:
            gens.append(replace(g, Pm_pu=g.Pm_pu * target / current))
        elif g.online:
            gens.append(replace(g, Pm_pu=target / len(online) * model.s_base_mva / g.S_mva))
        else:
            gens.append(replace(g))
    return replace(model, gens=gens)


# script events


@dataclass(frozen=True)
class GenTrip:
    t_s: float
    gen: int


@dataclass(frozen=True)
class LoadStep:
    t_s: float
    bus: int
    dP_pu: float


@dataclass(frozen=True)
class Ramp:
    t_s: float
    bus: int
    rate_pu_s: float
    duration_s: float


@dataclass(frozen=True)
class ForcedOscillation:
    t_s: float
    bus: int
    amp_pu: float
    freq_hz: float


@dataclass(frozen=True)
class Ambient:
    sigma_pu: float
    corr_time_s: float
    t_s: float = 0.0


LOCALIZED_EVENTS = (GenTrip, LoadStep, Ramp, ForcedOscillation)


@dataclass
class EventScript:
    events: list = field(default_factory=list)

    def validate(self, model: GridModel):
        for ev in self.events:
            if ev.t_s < 0:
                raise ModelError("event times must be >= 0")
            if isinstance(ev, GenTrip) and not 0 <= ev.gen < len(model.gens):
                raise ModelError(f"tripped generator {ev.gen} out of range")
            if isinstance(ev, (LoadStep, Ramp, ForcedOscillation)):
                if not 0 <= ev.bus < model.buses:
                    raise ModelError(f"event bus {ev.bus} out of range")

    def primary(self):
        """First localized disturbance, if any."""
        localized = [e for e in self.events if isinstance(e, LOCALIZED_EVENTS)]
        return min(localized, key=lambda e: e.t_s) if localized else None


@dataclass
class Truth:
    """Ground-truth sidecar for a simulation run."""

    event_kind: str
    t_event: float
    source_bus: int
    source_xy_km: tuple
    dP_MW: float
    H_total_MWs: float
    nadir_hz: float
    first_arrival_s: dict
    settle_hz: float = None

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["source_xy_km"] = (list(self.source_xy_km)
                             if self.source_xy_km is not None else None)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Truth":
        d = dict(d)
        if d.get("source_xy_km") is not None:
            d["source_xy_km"] = tuple(d["source_xy_km"])
        return cls(**d)


@dataclass
class SimResult:
    grid: TimeSeriesGrid
    truth: Truth
    diverged: bool = False


# ---------------------------------------------------------------------------
# network reduction


@dataclass
class _Reduction:
    """Kron reduction of the lossless network around machine internal nodes."""

    b: np.ndarray        # (n_m, n_m) pairwise sine-coupling strengths
    F: np.ndarray        # (n_m, n_bus) bus-injection distribution to machines
    W: np.ndarray        # (n_bus, n_m) bus angles from machine angles
    Binv: np.ndarray     # (n_bus, n_bus) bus angles from bus injections


def _reduce_network(model: GridModel, online_idx, grounded=(),
                    shunts=()) -> _Reduction:
    n_bus = model.buses
    n_m = len(online_idx)
    n = n_bus + n_m
    lap = np.zeros((n, n))

    def couple(a, bnode, b):
        lap[a, a] += b
        lap[bnode, bnode] += b
        lap[a, bnode] -= b
        lap[bnode, a] -= b

    for i, j, b in model.lines:
        couple(i, j, b)
    for m, gi in enumerate(online_idx):
        g = model.gens[gi]
        x_sys = g.xdp_pu * model.s_base_mva / g.S_mva
        couple(n_bus + m, g.bus, 1.0 / x_sys)
    for bus, b in shunts:
        lap[bus, bus] += b

    keep = np.arange(n_bus, n)
    elim = np.array([i for i in range(n_bus) if i not in grounded], dtype=int)
    idx = np.concatenate([elim, keep])
    sub = lap[np.ix_(idx, idx)]
    ne = len(elim)
    B_EE = sub[:ne, :ne]
    B_EK = sub[:ne, ne:]
    B_KE = sub[ne:, :ne]
    B_KK = sub[ne:, ne:]
    try:
        Binv_EE = np.linalg.inv(B_EE)
    except np.linalg.LinAlgError as exc:
        raise ModelError("network reduction failed (disconnected island?)") from exc

    B_red = B_KK - B_KE @ Binv_EE @ B_EK
    b = -B_red.copy()
    np.fill_diagonal(b, 0.0)
    b = np.clip(b, 0.0, None)

    F = np.zeros((n_m, n_bus))
    F[:, elim] = B_KE @ Binv_EE
    W = np.zeros((n_bus, n_m))
    W[elim] = -Binv_EE @ B_EK
    Binv = np.zeros((n_bus, n_bus))
    Binv[np.ix_(elim, elim)] = Binv_EE
    return _Reduction(b, F, W, Binv)


# ---------------------------------------------------------------------------
# forcing series


def _ou_series(sigma: float, corr_time_s: float, h: float,
               rng: np.random.Generator, n: int) -> np.ndarray:
    """Stationary Ornstein-Uhlenbeck path by exact discretization."""
    a = np.exp(-h / corr_time_s)
    scale = sigma * np.sqrt(1.0 - a * a)
    drive = scale * rng.standard_normal(n)
    drive[0] = sigma * rng.standard_normal()
    return lfilter([1.0], [1.0, -a], drive)


def _bus_injection_series(model: GridModel, script: EventScript,
                          t_half: np.ndarray, seed: int) -> np.ndarray:
    """Net bus injections (pu, system base) on the half-step time grid.

    Includes loads, scripted load events and ambient OU noise, and the PV
    plants' scheduled delivery; droop-deployed PV reserve is added inside
    the integrator because it depends on the state.
    """
    inj = np.repeat(-model.loads[:, None], len(t_half), axis=1)
    for p in model.pv:
        inj[p.bus] += p.delivered_pu

    h = t_half[1] - t_half[0] if len(t_half) > 1 else 1.0
    for ev in script.events:
        if isinstance(ev, LoadStep):
            inj[ev.bus] -= ev.dP_pu * (t_half >= ev.t_s - 1e-12)
        elif isinstance(ev, Ramp):
            inj[ev.bus] -= ev.rate_pu_s * np.clip(t_half - ev.t_s, 0.0, ev.duration_s)
        elif isinstance(ev, ForcedOscillation):
            active = t_half >= ev.t_s - 1e-12
            inj[ev.bus] -= (ev.amp_pu * active
                            * np.sin(TWO_PI * ev.freq_hz * (t_half - ev.t_s)))
        elif isinstance(ev, Ambient):
            for bus in range(model.buses):
                if model.loads[bus] <= 0:
                    continue
                rng = seeds.rng(seed, f"ambient-ou-{bus}")
                inj[bus] -= _ou_series(ev.sigma_pu, ev.corr_time_s, h, rng,
                                       len(t_half))
    return inj


# ---------------------------------------------------------------------------
# integrator


class _MachineSet:
    """Per-segment machine parameter arrays on the system base."""

    def __init__(self, model: GridModel, online_idx, dt_s: float):
        gens = [model.gens[i] for i in online_idx]
        base = model.s_base_mva
        self.idx = list(online_idx)
        self.H = np.array([g.H_s * g.S_mva / base for g in gens])
        self.D = np.array([g.D_pu * g.S_mva / base for g in gens])
        self.Pm0 = np.array([g.Pm_pu * g.S_mva / base for g in gens])
        self.gov_gain = np.array([(g.S_mva / base) / g.droop_R for g in gens])
        # governors faster than the integrator step are clamped for stability
        self.tau = np.array([max(g.T_gov_s, 5.0 * dt_s) for g in gens])


@dataclass
class _Segment:
    t0: float
    t1: float
    online_idx: tuple
    grounded: tuple = ()
    shunts: tuple = ()


class _Trajectory:
    def __init__(self):
        self.t = []
        self.f_bus = []      # per step: (n_bus,) frequency deviation Hz
        self.th_bus = []     # per step: (n_bus,) bus angle rad
        self.f_coi = []
        self.spread = []
        self.diverged = False

    def arrays(self):
        return (np.array(self.t), np.array(self.f_bus).T,
                np.array(self.th_bus).T, np.array(self.f_coi),
                np.array(self.spread))


def _integrate(model: GridModel, segments, inj, dt_s,
               state0=None, spread_stop_after_s=None) -> _Trajectory:
    """Fixed-step RK4 over structural segments.

    inj holds bus injections on the half-step grid (spacing dt_s/2);
    segment boundaries may fall between steps, in which case the last step
    of the segment is shortened.  Records bus frequency deviations and
    angles at every step.
    """
    f0 = model.f0
    pv_buses = np.array([p.bus for p in model.pv], dtype=int)
    pv_avail = np.array([p.P_avail_pu for p in model.pv])
    pv_head = np.array([p.headroom_frac for p in model.pv])
    pv_gain = np.array([p.P_avail_pu / (p.droop_R * f0) for p in model.pv])
    n_half = inj.shape[1]
    half = dt_s / 2.0

    traj = _Trajectory()
    state = state0
    prev_online = segments[0].online_idx
    for seg in segments:
        ms = _MachineSet(model, seg.online_idx, dt_s)
        red = _reduce_network(model, seg.online_idx, seg.grounded, seg.shunts)
        n_m = len(seg.online_idx)
        share = red.F @ inj                      # (n_m, n_half)
        th_load = red.Binv @ inj                 # (n_bus, n_half)
        has_pv = len(pv_buses) > 0
        w_pv = red.W[pv_buses] if has_pv else None
        F_pv = red.F[:, pv_buses] if has_pv else None
        pv_cap = pv_head * pv_avail
        b = red.b
        W = red.W

        if state is None:
            # start at the deterministic operating point: scripted events and
            # ambient noise perturb around it, they do not define it
            inj0 = -model.loads.copy()
            for p in model.pv:
                inj0[p.bus] += p.delivered_pu
            delta = _solve_equilibrium(b, ms.Pm0 - red.F @ inj0)
            state = np.concatenate([delta, np.zeros(2 * n_m)])
        elif prev_online != seg.online_idx:
            state = _carry_state(state, prev_online, seg.online_idx)
        prev_online = seg.online_idx

        f0_over_h2 = f0 / (2.0 * ms.H)
        d_over_f0 = ms.D / f0
        gov_over_f0 = ms.gov_gain / f0
        inv_tau = 1.0 / ms.tau
        h_coi = ms.H / ms.H.sum()
        pm0 = ms.Pm0
        n2, n3 = 2 * n_m, 3 * n_m
        diff_buf = np.empty((n_m, n_m))
        stage = np.empty(n3)
        ks = [np.empty(n3) for _ in range(4)]

        def rhs(y, col, out):
            delta = y[:n_m]
            df = y[n_m:n2]
            np.subtract.outer(delta, delta, out=diff_buf)
            np.sin(diff_buf, out=diff_buf)
            np.multiply(diff_buf, b, out=diff_buf)
            pe = diff_buf.sum(axis=1)
            pe += share[:, col]
            if has_pv:
                deploy = np.minimum(np.maximum(-pv_gain * (w_pv @ df), 0.0), pv_cap)
                pe += F_pv @ deploy
            out[:n_m] = TWO_PI * df
            out[n_m:n2] = f0_over_h2 * (pm0 + y[n2:] - pe - d_over_f0 * df)
            out[n2:] = -gov_over_f0 * df - y[n2:]
            out[n2:] *= inv_tau

        def record(t, y):
            delta = y[:n_m]
            df = y[n_m:n2]
            col = min(int(round(t / half)), n_half - 1)
            traj.t.append(t)
            traj.f_bus.append(W @ df)
            traj.th_bus.append(W @ delta + th_load[:, col])
            traj.f_coi.append(float(h_coi @ df))
            traj.spread.append(float(delta.max() - delta.min()))

        t = seg.t0
        if not traj.t or traj.t[-1] < t - 1e-12:
            record(t, state)
        while t < seg.t1 - 1e-12:
            h = min(dt_s, seg.t1 - t)
            c0 = min(int(round(t / half)), n_half - 1)
            c1 = min(int(round((t + 0.5 * h) / half)), n_half - 1)
            c2 = min(int(round((t + h) / half)), n_half - 1)
            rhs(state, c0, ks[0])
            np.multiply(ks[0], 0.5 * h, out=stage)
            stage += state
            rhs(stage, c1, ks[1])
            np.multiply(ks[1], 0.5 * h, out=stage)
            stage += state
            rhs(stage, c1, ks[2])
            np.multiply(ks[2], h, out=stage)
            stage += state
            rhs(stage, c2, ks[3])
            ks[1] += ks[2]
            ks[1] *= 2.0
            ks[1] += ks[0]
            ks[1] += ks[3]
            ks[1] *= h / 6.0
            state = state + ks[1]
            t += h
            record(t, state)
            df = state[n_m:n2]
            if np.abs(df).max() > DIVERGENCE_HZ or not np.isfinite(df).all():
                traj.diverged = True
                return traj
            if (spread_stop_after_s is not None and t >= spread_stop_after_s
                    and traj.spread[-1] >= SPREAD_LIMIT_RAD):
                return traj
    return traj


def _carry_state(state, old_idx, new_idx):
    n_old = len(old_idx)
    keep = [old_idx.index(i) for i in new_idx]
    return np.concatenate([state[:n_old][keep],
                           state[n_old:2 * n_old][keep],
                           state[2 * n_old:][keep]])


def _solve_equilibrium(b: np.ndarray, p_target: np.ndarray,
                       tol: float = 1e-12, max_iter: int = 60) -> np.ndarray:
    """Machine angles whose electrical output matches p_target (reference
    angle fixed at machine 0)."""
    n = len(p_target)
    delta = np.zeros(n)
    if n == 1:
        return delta
    for _ in range(max_iter):
        diff = delta[:, None] - delta[None, :]
        pe = (b * np.sin(diff)).sum(axis=1)
        g = pe - p_target
        if np.abs(g).max() < tol:
            return delta
        cos = b * np.cos(diff)
        jac = np.diag(cos.sum(axis=1)) - cos
        try:
            step = np.linalg.solve(jac[1:, 1:], g[1:])
        except np.linalg.LinAlgError as exc:
            raise PowerFlowError("singular power-flow Jacobian") from exc
        if not np.isfinite(step).all():
            raise PowerFlowError("power flow diverged")
        delta[1:] -= step
    diff = delta[:, None] - delta[None, :]
    if np.abs((b * np.sin(diff)).sum(axis=1) - p_target).max() > 1e-8:
        raise PowerFlowError("power flow did not converge")
    return delta


# ---------------------------------------------------------------------------
# public operations


def simulate(model: GridModel, script: EventScript, t_end_s: float,
             dt_s: float = 0.01, seed: int = 0,
             sample_rate_hz: float = 10.0) -> SimResult:
    """Integrate the scripted scenario and assemble sensor measurements.

    dt_s must be <= 0.01 s and the model balanced.  Sensor frequency is
    the local bus frequency with the primary disturbance's effect delayed
    by distance/wave_speed; when the script has a localized event and the
    wave speed is finite, a baseline run (same seed, localized events
    removed) provides the undisturbed component the delay applies to.
    Numerical blow-up (|df| > 5 Hz) flags the result diverged and returns
    the partial series.
    """
    if dt_s > 0.01 + 1e-15:
        raise ModelError("dt_s must be <= 0.01 s")
    model.validate()
    script.validate(model)

    n_half = 2 * int(round(t_end_s / dt_s)) + 1
    t_half = (dt_s / 2.0) * np.arange(n_half)
    inj = _bus_injection_series(model, script, t_half, seed)
    segments = _script_segments(model, script, t_end_s)
    traj = _integrate(model, segments, inj, dt_s)

    primary = script.primary()
    base_traj, delays = None, None
    if primary is not None and np.isfinite(model.wave_speed_km_s) and model.sensors:
        base_script = EventScript([e for e in script.events
                                   if not isinstance(e, LOCALIZED_EVENTS)])
        base_inj = _bus_injection_series(model, base_script, t_half, seed)
        base_traj = _integrate(model, _script_segments(model, base_script, t_end_s),
                               base_inj, dt_s)
        delays = _sensor_delays(model, primary)
        if base_traj.diverged:
            base_traj, delays = None, None

    grid = _sensor_grid(model, traj, base_traj, delays, sample_rate_hz)
    truth = _build_truth(model, script, traj, delays)
    return SimResult(grid, truth, traj.diverged)


def _script_segments(model: GridModel, script: EventScript, t_end_s: float):
    online = tuple(i for i, g in enumerate(model.gens) if g.online)
    trips = sorted([e for e in script.events if isinstance(e, GenTrip)],
                   key=lambda e: e.t_s)
    segments = []
    t0 = 0.0
    for ev in trips:
        if ev.t_s >= t_end_s or ev.gen not in online:
            continue
        segments.append(_Segment(t0, ev.t_s, online))
        online = tuple(i for i in online if i != ev.gen)
        if not online:
            raise ModelError("cannot trip the last online generator")
        t0 = ev.t_s
    segments.append(_Segment(t0, t_end_s, online))
    return [s for s in segments if s.t1 > s.t0]


def _sensor_delays(model: GridModel, primary) -> np.ndarray:
    src_bus = model.gens[primary.gen].bus if isinstance(primary, GenTrip) else primary.bus
    src = model.bus_xy_km[src_bus]
    out = np.empty(len(model.sensors))
    for i, site in enumerate(model.sensors):
        d = np.hypot(site.meta.x_km - src[0], site.meta.y_km - src[1])
        out[i] = d / model.wave_speed_km_s
    return out


def _sensor_grid(model: GridModel, traj: _Trajectory, base_traj, delays,
                 sample_rate_hz: float) -> TimeSeriesGrid:
    t_int, f_bus, th_bus, _, _ = traj.arrays()
    out_dt = 1.0 / sample_rate_hz
    t_out = out_dt * np.arange(int(np.floor(t_int[-1] / out_dt + 1e-9)) + 1)

    n_s = len(model.sensors)
    freq = np.empty((n_s, len(t_out)))
    angle = np.empty((n_s, len(t_out)))
    if base_traj is not None and delays is not None:
        _, f_base, th_base, _, _ = base_traj.arrays()
        n = min(f_bus.shape[1], f_base.shape[1])
        f_diff = f_bus[:, :n] - f_base[:, :n]
        th_diff = th_bus[:, :n] - th_base[:, :n]
        t_n = t_int[:n]
        for i, site in enumerate(model.sensors):
            k, tau = site.bus, delays[i]
            freq[i] = (np.interp(t_out, t_n, f_base[k, :n])
                       + np.interp(t_out - tau, t_n, f_diff[k], left=0.0))
            angle[i] = (np.interp(t_out, t_n, th_base[k, :n])
                        + np.interp(t_out - tau, t_n, th_diff[k], left=0.0))
    else:
        for i, site in enumerate(model.sensors):
            freq[i] = np.interp(t_out, t_int, f_bus[site.bus])
            angle[i] = np.interp(t_out, t_int, th_bus[site.bus])

    sensors = [site.meta.id for site in model.sensors]
    return TimeSeriesGrid(
        sensors, 0.0, out_dt,
        model.f0 + freq,
        wrap_angle_deg(np.degrees(angle)),
        np.ones_like(freq),
        np.ones(freq.shape, dtype=bool),
    )


def _build_truth(model: GridModel, script: EventScript, traj: _Trajectory,
                 delays) -> Truth:
    _, _, _, f_coi, _ = traj.arrays()
    nadir = model.f0 + float(f_coi.min()) if len(f_coi) else model.f0
    settle = model.f0 + float(f_coi[-1]) if len(f_coi) else model.f0
    primary = script.primary()
    if primary is None:
        return Truth("ambient", None, None, None, None,
                     model.h_total_mws(), nadir, None, settle)

    if isinstance(primary, GenTrip):
        g = model.gens[primary.gen]
        kind, bus, dp = "gen_trip", g.bus, g.Pm_pu * g.S_mva
    elif isinstance(primary, LoadStep):
        kind, bus, dp = "load_step", primary.bus, abs(primary.dP_pu) * model.s_base_mva
    elif isinstance(primary, Ramp):
        kind, bus = "ramp", primary.bus
        dp = abs(primary.rate_pu_s * primary.duration_s) * model.s_base_mva
    else:
        kind, bus, dp = "forced_oscillation", primary.bus, primary.amp_pu * model.s_base_mva

    arrivals = None
    if delays is not None:
        arrivals = {site.meta.id: float(primary.t_s + delays[i])
                    for i, site in enumerate(model.sensors)}
    xy = tuple(model.bus_xy_km[bus])
    return Truth(kind, primary.t_s, bus, xy, dp, model.h_total_mws(),
                 nadir, arrivals, settle)


# small-signal analysis


@dataclass(frozen=True)
class Mode:
    sigma: float
    omega: float

    @property
    def damping_ratio(self) -> float:
        mag = np.hypot(self.sigma, self.omega)
        return float(-self.sigma / mag) if mag > 0 else 0.0

    @property
    def freq_hz(self) -> float:
        return self.omega / TWO_PI


def linearize(model: GridModel, dt_s: float = 0.01) -> list:
    """Oscillatory modes of the swing system at the balanced operating point.

    Returns one Mode per conjugate pair (omega > 0), sorted by frequency.
    PV plants are treated as constant injections (their one-sided droop is
    inactive at the equilibrium).
    """
    model.validate()
    online = tuple(i for i, g in enumerate(model.gens) if g.online)
    red = _reduce_network(model, online)
    ms = _MachineSet(model, online, dt_s)
    inj = -model.loads.copy()
    for p in model.pv:
        inj[p.bus] += p.delivered_pu
    delta = _solve_equilibrium(red.b, ms.Pm0 - red.F @ inj)

    n = len(online)
    diff = delta[:, None] - delta[None, :]
    cos = red.b * np.cos(diff)
    K = np.diag(cos.sum(axis=1)) - cos      # dPe/ddelta at the operating point
    f0 = model.f0
    A = np.zeros((3 * n, 3 * n))
    A[:n, n:2 * n] = TWO_PI * np.eye(n)
    A[n:2 * n, :n] = -(f0 / (2.0 * ms.H))[:, None] * K
    A[n:2 * n, n:2 * n] = -np.diag(ms.D / (2.0 * ms.H))
    A[n:2 * n, 2 * n:] = np.diag(f0 / (2.0 * ms.H))
    A[2 * n:, n:2 * n] = -np.diag(ms.gov_gain / (f0 * ms.tau))
    A[2 * n:, 2 * n:] = -np.diag(1.0 / ms.tau)

    eig = np.linalg.eigvals(A)
    modes = [Mode(float(v.real), float(v.imag)) for v in eig if v.imag > 1e-9]
    return sorted(modes, key=lambda m: m.freq_hz)


def least_damped_mode(modes, min_freq_hz: float = 0.1) -> Mode:
    osc = [m for m in modes if m.freq_hz > min_freq_hz]
    if not osc:
        raise PowerFlowError("no oscillatory mode above the frequency floor")
    return min(osc, key=lambda m: m.damping_ratio)


# critical clearing time


@dataclass
class CctResult:
    cct_s: float
    status: str      # "ok" | "upper-bound" | "always-unstable"


def critical_clearing_time(model: GridModel, fault_bus: int,
                           resolution_s: float = 1e-3, horizon_s: float = 10.0,
                           dt_s: float = 0.01, upper_s: float = 1.0,
                           fault_susceptance: float = None) -> CctResult:
    """Bisect the longest fault duration the system rides through.

    The fault grounds fault_bus (the default, an effectively bolted fault)
    or adds the given shunt susceptance there; stability means the
    inter-machine angle spread stays below 180 deg from clearing to
    clearing + horizon_s.  A zero-susceptance fault leaves the network
    untouched, so the search returns the upper bound.
    """
    model.validate()
    if not 0 <= fault_bus < model.buses:
        raise ModelError(f"fault bus {fault_bus} out of range")
    if fault_susceptance is not None and fault_susceptance == 0.0:
        return CctResult(upper_s, "upper-bound")

    online = tuple(i for i, g in enumerate(model.gens) if g.online)
    inj0 = -model.loads.copy()
    for p in model.pv:
        inj0[p.bus] += p.delivered_pu
    grounded = (fault_bus,) if fault_susceptance is None else ()
    shunts = ((fault_bus, fault_susceptance),) if fault_susceptance else ()

    pre = _reduce_network(model, online)
    ms = _MachineSet(model, online, dt_s)
    delta0 = _solve_equilibrium(pre.b, ms.Pm0 - pre.F @ inj0)
    state0 = np.concatenate([delta0, np.zeros(2 * len(online))])

    def stable(t_clear: float) -> bool:
        t_end = t_clear + horizon_s
        n_half = 2 * int(np.ceil(t_end / dt_s)) + 3
        inj = np.repeat(inj0[:, None], n_half, axis=1)
        if t_clear > 0:
            segs = [_Segment(0.0, t_clear, online, grounded, shunts),
                    _Segment(t_clear, t_end, online)]
        else:
            segs = [_Segment(0.0, t_end, online)]
        traj = _integrate(model, segs, inj, dt_s, state0=state0.copy(),
                          spread_stop_after_s=t_clear)
        if traj.diverged:
            return False
        t_arr = np.array(traj.t)
        spread = np.array(traj.spread)
        post = spread[t_arr >= t_clear - 1e-9]
        return bool(len(post) > 0 and (post < SPREAD_LIMIT_RAD).all()
                    and t_arr[-1] >= t_end - 1e-9)

    if not stable(0.0):
        return CctResult(0.0, "always-unstable")
    if stable(upper_s):
        return CctResult(upper_s, "upper-bound")
    lo, hi = 0.0, upper_s
    while hi - lo > resolution_s:
        mid = 0.5 * (lo + hi)
        if stable(mid):
            lo = mid
        else:
            hi = mid
    return CctResult(lo, "ok")


# reference systems


def five_bus_model() -> GridModel:
    """3 generators on a meshed 5-bus system; the unit-test workhorse."""
    gens = [
        Generator(bus=0, H_s=5.0, S_mva=900.0, D_pu=1.0, droop_R=0.05,
                  T_gov_s=4.0, Pm_pu=0.72),
        Generator(bus=1, H_s=4.0, S_mva=700.0, D_pu=1.0, droop_R=0.05,
                  T_gov_s=5.0, Pm_pu=0.70),
        Generator(bus=2, H_s=3.5, S_mva=600.0, D_pu=1.0, droop_R=0.05,
                  T_gov_s=5.0, Pm_pu=0.65),
    ]
    lines = [(0, 3, 8.0), (1, 3, 7.0), (1, 4, 6.0), (2, 4, 7.5), (3, 4, 5.0),
             (0, 4, 4.0)]
    loads = np.array([0.0, 0.0, 0.0, 0.85, 0.78])
    xy = np.array([[0.0, 0.0], [220.0, 40.0], [420.0, 0.0],
                   [110.0, 150.0], [320.0, 160.0]])
    sensors = [SensorSite(SensorMeta(f"S{b}", xy[b, 0], xy[b, 1]), b)
               for b in range(5)]
    model = GridModel(5, lines, gens, [], loads, 60.0, sensors,
                      wave_speed_km_s=500.0, bus_xy_km=xy, s_base_mva=1000.0)
    return rebalance(model)


def eighteen_bus_model(pv_headroom: float = 0.0) -> GridModel:
    """18-bus reference system: four synchronous units plus one PV plant."""
    rng = np.random.default_rng(181818)
    gens = [
        Generator(bus=0, H_s=6.5, S_mva=900.0, D_pu=6.0, droop_R=0.05,
                  T_gov_s=5.0, Pm_pu=0.80),
        Generator(bus=4, H_s=5.0, S_mva=700.0, D_pu=6.0, droop_R=0.05,
                  T_gov_s=4.0, Pm_pu=0.75),
        Generator(bus=9, H_s=4.0, S_mva=600.0, D_pu=6.0, droop_R=0.06,
                  T_gov_s=6.0, Pm_pu=0.70),
        Generator(bus=13, H_s=3.2, S_mva=500.0, D_pu=6.0, droop_R=0.06,
                  T_gov_s=5.0, Pm_pu=0.65),
    ]
    pv = [PvPlant(bus=16, P_avail_pu=0.35, headroom_frac=pv_headroom)]
    lines = [
        (0, 1, 9.0), (1, 2, 7.0), (2, 3, 6.5), (3, 4, 8.0), (4, 5, 7.0),
        (5, 6, 6.0), (6, 7, 6.5), (7, 8, 7.0), (8, 9, 8.0), (9, 10, 7.0),
        (10, 11, 6.0), (11, 12, 6.5), (12, 13, 7.5), (13, 14, 7.0),
        (14, 15, 6.0), (15, 0, 7.0), (1, 16, 5.0), (16, 11, 5.0),
        (2, 17, 5.5), (17, 8, 5.5), (5, 17, 4.5), (14, 16, 4.5),
        (3, 10, 4.0), (6, 15, 4.0),
    ]
    loads = np.zeros(18)
    load_buses = [1, 2, 3, 5, 6, 7, 8, 10, 11, 12, 14, 15, 17]
    weights = rng.uniform(0.6, 1.4, len(load_buses))
    total = 2.55 + pv[0].delivered_pu
    loads[load_buses] = total * weights / weights.sum()

    ring = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
    xy = np.zeros((18, 2))
    xy[:16, 0] = 300.0 + 260.0 * np.cos(ring)
    xy[:16, 1] = 300.0 + 220.0 * np.sin(ring)
    xy[16] = (300.0, 390.0)
    xy[17] = (300.0, 210.0)
    sensor_buses = [0, 2, 4, 6, 9, 11, 13, 15, 16, 17]
    sensors = [SensorSite(SensorMeta(f"S{b:02d}", xy[b, 0], xy[b, 1]), b)
               for b in sensor_buses]
    model = GridModel(18, lines, gens, pv, loads, 60.0, sensors,
                      wave_speed_km_s=500.0, bus_xy_km=xy, s_base_mva=1000.0)
    return rebalance(model)


# structured-text (JSON) model and script I/O


def model_to_dict(model: GridModel) -> dict:
    return {
        "buses": model.buses,
        "lines": [[int(i), int(j), float(b)] for i, j, b in model.lines],
        "gens": [dict(bus=g.bus, H_s=g.H_s, S_mva=g.S_mva, D_pu=g.D_pu,
                      droop_R=g.droop_R, T_gov_s=g.T_gov_s, Pm_pu=g.Pm_pu,
                      online=g.online, xdp_pu=g.xdp_pu) for g in model.gens],
        "pv": [dict(bus=p.bus, P_avail_pu=p.P_avail_pu,
                    headroom_frac=p.headroom_frac, droop_R=p.droop_R)
               for p in model.pv],
        "loads": model.loads.tolist(),
        "f0": model.f0,
        "sensors": [dict(id=s.meta.id, x_km=s.meta.x_km, y_km=s.meta.y_km,
                         nominal_hz=s.meta.nominal_hz, bus=s.bus)
                    for s in model.sensors],
        "wave_speed_km_s": model.wave_speed_km_s,
        "bus_xy_km": model.bus_xy_km.tolist(),
        "s_base_mva": model.s_base_mva,
    }


def model_from_dict(d: dict) -> GridModel:
    sensors = [SensorSite(SensorMeta(s["id"], s["x_km"], s["y_km"],
                                     s.get("nominal_hz", 60.0)), s["bus"])
               for s in d.get("sensors", [])]
    return GridModel(
        buses=d["buses"],
        lines=[tuple(l) for l in d["lines"]],
        gens=[Generator(**g) for g in d["gens"]],
        pv=[PvPlant(**p) for p in d.get("pv", [])],
        loads=np.array(d["loads"], dtype=float),
        f0=d.get("f0", 60.0),
        sensors=sensors,
        wave_speed_km_s=d.get("wave_speed_km_s", 500.0),
        bus_xy_km=np.array(d["bus_xy_km"], dtype=float),
        s_base_mva=d.get("s_base_mva", 1000.0),
    )


_EVENT_TYPES = {"gen_trip": GenTrip, "load_step": LoadStep, "ramp": Ramp,
                "forced_oscillation": ForcedOscillation, "ambient": Ambient}
_EVENT_NAMES = {v: k for k, v in _EVENT_TYPES.items()}


def script_to_dict(script: EventScript) -> dict:
    events = []
    for ev in script.events:
        d = dict(ev.__dict__)
        d["kind"] = _EVENT_NAMES[type(ev)]
        events.append(d)
    return {"events": events}


def script_from_dict(d: dict) -> EventScript:
    events = []
    for item in d.get("events", []):
        item = dict(item)
        cls = _EVENT_TYPES[item.pop("kind")]
        events.append(cls(**item))
    return EventScript(events)


def save_model(model: GridModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=1)


def load_model(path) -> GridModel:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


def save_script(script: EventScript, path) -> None:
    with open(path, "w") as fh:
        json.dump(script_to_dict(script), fh, indent=1)


def load_script(path) -> EventScript:
    with open(path) as fh:
        return script_from_dict(json.load(fh))


def save_result(result: SimResult, csv_path, truth_path) -> None:
    """Measurement CSV plus JSON truth sidecar."""
    from .measurement import write_csv
    write_csv(result.grid.frames(), csv_path)
    with open(truth_path, "w") as fh:
        json.dump({"truth": result.truth.to_dict(), "diverged": result.diverged},
                  fh, indent=1)


def load_truth(truth_path) -> Truth:
    with open(truth_path) as fh:
        return Truth.from_dict(json.load(fh)["truth"])
