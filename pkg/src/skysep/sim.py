"""Two-route airspace simulation: kinematics, traffic, rewards, events.

Aircraft follow fixed waypoint routes under discrete-time point-mass
kinematics with a speed-only command. Traffic enters each route as a
Poisson process with a minimum headway; the two routes cross once and
later merge onto a common final leg.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

KNOT = 0.514444  # m/s
SPEED_STEP = 5 * KNOT  # one speed-command increment
V_MIN, V_MAX = 7.5, 36.0
CRUISE_SPEED = 20.0
DT = 1.0

ACTION_COMMANDS = np.array([-SPEED_STEP, 0.0, SPEED_STEP])


def wrap_angle(a):
    """Wrap into (-pi, pi]."""
    return -((-np.asarray(a) + np.pi) % (2 * np.pi) - np.pi)


@dataclass(frozen=True)
class Wind:
    east: float = 0.0
    north: float = 0.0


@dataclass(frozen=True)
class AircraftState:
    x: float
    y: float
    heading: float
    speed: float
    dist_to_go: float
    prev_cmd: float = 0.0

    def as_row(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading, self.speed,
                         self.dist_to_go, self.prev_cmd])


@dataclass(frozen=True)
class RewardParams:
    proximity_offset: float = 0.1       # alpha
    proximity_slope: float = 2e-4       # beta, 1/m
    nmac_cost: float = 1.0
    action_weight: float = 0.001
    speed_step: float = SPEED_STEP
    protected_radius: float = 100.0     # NMAC threshold
    detect_radius: float = 500.0        # loss-of-separation threshold


@dataclass(frozen=True)
class Route:
    waypoints: np.ndarray  # (k, 2)

    @property
    def length(self) -> float:
        return float(np.sum(np.linalg.norm(np.diff(self.waypoints, axis=0), axis=1)))

    @property
    def entry(self) -> np.ndarray:
        return self.waypoints[0]

    def entry_heading(self) -> float:
        d = self.waypoints[1] - self.waypoints[0]
        return math.atan2(d[1], d[0])


@dataclass(frozen=True)
class RouteNetwork:
    routes: tuple
    capture_radius: float = 100.0


def default_route_network() -> RouteNetwork:
    """Two ~10 km routes crossing at (3000, 0) and merging at (7000, 0)."""
    a = Route(np.array([[0.0, 1200.0], [3000.0, 0.0], [5000.0, -800.0],
                        [7000.0, 0.0], [9500.0, 0.0]]))
    b = Route(np.array([[0.0, -1200.0], [3000.0, 0.0], [5000.0, 800.0],
                        [7000.0, 0.0], [9500.0, 0.0]]))
    return RouteNetwork(routes=(a, b))


@dataclass
class Aircraft:
    ident: int
    state: AircraftState
    route_index: int
    wp_index: int  # index of the waypoint currently steered to


@dataclass
class TrafficState:
    aircraft: list
    time: float = 0.0

    def get(self, ident: int) -> Aircraft:
        for ac in self.aircraft:
            if ac.ident == ident:
                return ac
        raise KeyError(f"unknown aircraft id {ident}")

    def ids(self):
        return [ac.ident for ac in self.aircraft]


def step_aircraft(state: AircraftState, cmd: float, wind: Wind,
                  dt: float = DT) -> AircraftState:
    """One kinematic step; waypoint/heading logic is applied separately."""
    vals = (state.x, state.y, state.heading, state.speed, state.dist_to_go,
            cmd, wind.east, wind.north)
    if not all(math.isfinite(v) for v in vals):
        raise ValueError("non-finite input to step_aircraft")
    c, s = math.cos(state.heading), math.sin(state.heading)
    x = state.x + (state.speed * c + wind.east) * dt + c * dt * cmd
    y = state.y + (state.speed * s + wind.north) * dt + s * dt * cmd
    speed = min(max(state.speed + cmd, V_MIN), V_MAX)
    dist_to_go = max(state.dist_to_go - state.speed * dt - dt * cmd, 0.0)
    return AircraftState(x, y, state.heading, speed, dist_to_go, cmd)


def advance_waypoint(state: AircraftState, route: Route, wp_index: int,
                     capture_radius: float):
    """Switch heading toward the next waypoint once the current one is
    captured. Returns (heading, wp_index, arrived); no-op outside the
    capture radius."""
    wp = route.waypoints[wp_index]
    if math.hypot(state.x - wp[0], state.y - wp[1]) > capture_radius:
        return state.heading, wp_index, False
    if wp_index == len(route.waypoints) - 1:
        return state.heading, wp_index, True
    nxt = route.waypoints[wp_index + 1]
    heading = math.atan2(nxt[1] - state.y, nxt[0] - state.x)
    return heading, wp_index + 1, False


def spawn_traffic(rng: np.random.Generator, rate: float, min_headway: float,
                  horizon: float) -> np.ndarray:
    """Entry times for one route over [0, horizon]: exponential
    inter-arrivals, with any gap below the minimum headway lengthened
    to it."""
    if rate <= 0:
        raise ValueError("rate must be positive")
    times = []
    t = 0.0
    while True:
        gap = max(rng.exponential(1.0 / rate), min_headway)
        t += gap
        if t > horizon:
            break
        times.append(t)
    return np.array(times)


def pairwise_separation(traffic: TrafficState, ownship_id: int) -> np.ndarray:
    own = traffic.get(ownship_id).state
    return np.array([
        math.hypot(ac.state.x - own.x, ac.state.y - own.y)
        for ac in traffic.aircraft if ac.ident != ownship_id
    ])


def proximity_penalty(d: float, params: RewardParams) -> float:
    if d <= params.protected_radius:
        return -params.proximity_offset + params.proximity_slope * d - params.nmac_cost
    if d <= params.detect_radius:
        return -params.proximity_offset + params.proximity_slope * d
    return 0.0


def compute_reward(next_traffic: TrafficState, ownship_id: int, cmd: float,
                   params: RewardParams) -> float:
    """Reward from the TRUE next state: separation penalties for every
    intruder inside the detection radius plus a quadratic command cost."""
    total = -params.action_weight * (cmd / params.speed_step) ** 2
    try:
        dists = pairwise_separation(next_traffic, ownship_id)
    except KeyError:
        return total  # ownship exited; only the command cost applies
    for d in dists:
        if d <= params.detect_radius:
            total += proximity_penalty(d, params)
    return total


class SeparationMonitor:
    """Counts per-pair NMAC / loss-of-separation onsets and tracks the
    minimum pairwise separation. A pair is counted once per entry below a
    threshold and can be re-counted after leaving and re-entering."""

    def __init__(self, protected_radius: float = 100.0,
                 detect_radius: float = 500.0):
        self.protected_radius = protected_radius
        self.detect_radius = detect_radius
        self._inside_nmac: set = set()
        self._inside_los: set = set()
        self.nmac_count = 0
        self.los_count = 0
        self.min_separation = math.inf

    def update(self, traffic: TrafficState):
        """Returns (new NMAC onsets, new LOS onsets) as pair sets."""
        pts = [(ac.ident, ac.state.x, ac.state.y) for ac in traffic.aircraft]
        now_nmac, now_los = set(), set()
        for i in range(len(pts)):
            for j in range(i + 1, len(pts)):
                d = math.hypot(pts[i][1] - pts[j][1], pts[i][2] - pts[j][2])
                self.min_separation = min(self.min_separation, d)
                pair = frozenset((pts[i][0], pts[j][0]))
                if d < self.protected_radius:
                    now_nmac.add(pair)
                if d < self.detect_radius:
                    now_los.add(pair)
        nmac_onsets = now_nmac - self._inside_nmac
        los_onsets = now_los - self._inside_los
        self._inside_nmac = now_nmac
        self._inside_los = now_los
        self.nmac_count += len(nmac_onsets)
        self.los_count += len(los_onsets)
        return nmac_onsets, los_onsets


def detect_events(snapshots, protected_radius: float = 100.0,
                  detect_radius: float = 500.0):
    """Run onset detection over a sequence of TrafficState snapshots."""
    mon = SeparationMonitor(protected_radius, detect_radius)
    for snap in snapshots:
        mon.update(snap)
    return mon.nmac_count, mon.los_count


@dataclass
class StepResult:
    rewards: dict
    dones: dict
    nmac_onsets: set
    los_onsets: set
    spawned: list
    exited: list


class AirspaceEnv:
    """Multi-agent episode driver. Corruption of observations lives
    outside; the env exposes only true traffic state."""

    def __init__(self, network: RouteNetwork, wind: Wind,
                 reward_params: RewardParams, spawn_rate: float,
                 min_headway: float, episode_length: float,
                 rng: np.random.Generator, event_log=None):
        self.network = network
        self.wind = wind
        self.reward_params = reward_params
        self.spawn_rate = spawn_rate
        self.min_headway = min_headway
        self.episode_length = episode_length
        self.rng = rng
        self.event_log = event_log  # list collecting (time, id, x, y, v, type)
        self._next_id = 0  # never reused, even across resets
        self.reset()

    def reset(self):
        self.traffic = TrafficState(aircraft=[], time=0.0)
        self.monitor = SeparationMonitor(self.reward_params.protected_radius,
                                         self.reward_params.detect_radius)
        self._schedules = [
            list(spawn_traffic(self.rng, self.spawn_rate, self.min_headway,
                               self.episode_length))
            for _ in self.network.routes
        ]
        self._spawn_due()
        return self.traffic

    def _log(self, ac: Aircraft, kind: str):
        if self.event_log is not None:
            s = ac.state
            self.event_log.append(
                (self.traffic.time, ac.ident, s.x, s.y, s.speed, kind))

    def _spawn_due(self):
        spawned = []
        for ridx, sched in enumerate(self._schedules):
            while sched and sched[0] <= self.traffic.time:
                sched.pop(0)
                route = self.network.routes[ridx]
                state = AircraftState(
                    x=route.entry[0], y=route.entry[1],
                    heading=route.entry_heading(), speed=CRUISE_SPEED,
                    dist_to_go=route.length, prev_cmd=0.0)
                ac = Aircraft(self._next_id, state, ridx, 1)
                self._next_id += 1
                self.traffic.aircraft.append(ac)
                self._log(ac, "spawn")
                spawned.append(ac.ident)
        return spawned

    @property
    def done(self) -> bool:
        return self.traffic.time >= self.episode_length

    def step(self, commands: dict) -> StepResult:
        """Apply one speed command (m/s) per live aircraft id."""
        exited = []
        for ac in self.traffic.aircraft:
            cmd = commands.get(ac.ident, 0.0)
            ac.state = step_aircraft(ac.state, cmd, self.wind)
            route = self.network.routes[ac.route_index]
            heading, wp, arrived = advance_waypoint(
                ac.state, route, ac.wp_index, self.network.capture_radius)
            ac.state = replace(ac.state, heading=heading)
            ac.wp_index = wp
            if arrived:
                exited.append(ac.ident)
        self.traffic.time += DT
        for ident in exited:
            self._log(self.traffic.get(ident), "exit")
        self.traffic.aircraft = [ac for ac in self.traffic.aircraft
                                 if ac.ident not in exited]
        spawned = self._spawn_due()

        rewards = {
            ident: compute_reward(self.traffic, ident, commands.get(ident, 0.0),
                                  self.reward_params)
            for ident in commands
        }
        nmac, los = self.monitor.update(self.traffic)
        for pair in nmac:
            for ident in pair:
                self._log(self.traffic.get(ident), "nmac")
        for pair in los - nmac:
            for ident in pair:
                self._log(self.traffic.get(ident), "los")
        dones = {ident: ident in exited for ident in commands}
        return StepResult(rewards, dones, nmac, los, spawned, exited)
