"""Side-view obstacle courses for a planar point-body robot.

The robot has a horizontal drive force, a vertical jump impulse (only while
grounded), a posture control that raises or lowers the body, and a pitch
torque.  Courses contain gaps (leap), raised platforms (climb), low bars
(crawl) and a wall that can be kicked off when hit at the right body angle.

``CourseEnv`` steps N independent robots in lockstep on one course.
"""
from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .diffnet import ConfigError

KINDS = ("gap", "step", "bar", "wall")
TASKS = ("leap", "climb", "crawl", "walljump", "guideline-demo")

# termination causes
ALIVE, FELL, BAR_HIT, CRASH, TIPPED, TIMEOUT, FAULT = range(7)
CAUSES = {ALIVE: "alive", FELL: "fell", BAR_HIT: "bar_collision", CRASH: "crash",
          TIPPED: "tipped", TIMEOUT: "timeout", FAULT: "numerical_fault"}

ROBOT_FIELDS = ("x", "z", "h_b", "vx", "vz", "angle", "ang_vel", "grounded")
ACTION_DIM = 4
TRAJECTORY_HEADER = ("t", "x", "z", "vx", "vz", "body_angle", "r_task", "r_div", "done")


@dataclass
class Obstacle:
    kind: str
    start_x: float
    size: float
    length: float = 0.5

    @property
    def end_x(self):
        return self.start_x + self.length


@dataclass
class ObstacleGroup:
    """``count`` identical obstacles, ``spacing`` metres apart (start to start)."""

    kind: str
    start_x: float
    size: float
    count: int = 3
    length: float = 0.5
    spacing: float = 2.0

    def expand(self):
        return [Obstacle(self.kind, self.start_x + i * self.spacing, self.size, self.length)
                for i in range(self.count)]


@dataclass
class TaskRewardWeights:
    ang: float = 0.05
    lin: float = -1.0
    alive: float = 2.0
    effort: float = -1e-6
    pos_limit: float = -0.1
    effort_limit: float = -0.2


@dataclass
class EnvConfig:
    task: str = "crawl"
    obstacles: list = field(default_factory=list)
    guideline: list = field(default_factory=list)
    guideline_reach: float = 0.15
    dt: float = 0.02
    gravity: float = 9.81
    mass: float = 1.0
    timeout: int = 500
    vx_target: float = 1.0
    spawn_x: float = 0.0
    spawn_jitter: float = 0.0
    max_range: float = 5.0
    # ground ends here: behind it the robot drops off the course
    back_edge: float | None = None
    # actuation
    force_gain: float = 4.0
    drag: float = 2.0
    jump_impulse: float = 3.0
    jump_threshold: float = 0.5
    # a triggered jump carries at least this fraction of the full impulse
    jump_min_fraction: float = 0.0
    posture_deadband: float = 0.5
    posture_servo: float = 2.0
    h_min: float = 0.20
    h_nom: float = 0.30
    h_max: float = 0.40
    crouch_speed_factor: float = 0.4
    torque_gain: float = 20.0
    air_torque_gain: float = 10.0
    ang_spring: float = 50.0
    ang_damp: float = 5.0
    tip_angle: float = 1.2
    angle_limit: float = 0.8
    kick_window: tuple = (0.6, 1.4)
    kick_speed: float = 3.5
    contact_tol: float = 1e-6
    rewards: TaskRewardWeights = field(default_factory=TaskRewardWeights)
    div_only: bool = False

    def validate(self):
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        if not (0 < self.h_min <= self.h_nom <= self.h_max):
            raise ConfigError("posture bounds must satisfy 0 < h_min <= h_nom <= h_max")
        obs = self.expanded_obstacles()
        for a, b in zip(obs, obs[1:]):
            if b.start_x < a.end_x:
                raise ConfigError(f"obstacles overlap or are unordered at x={b.start_x}")
        if self.task in ("walljump", "guideline-demo") and not self.guideline:
            raise ConfigError(f"task {self.task} needs a guideline")
        if not 0.0 <= self.jump_min_fraction <= 1.0:
            raise ConfigError("jump_min_fraction must lie in [0, 1]")
        if self.back_edge is not None and self.back_edge >= self.spawn_x - self.spawn_jitter:
            raise ConfigError("back_edge must lie behind every spawn position")
        return self

    def expanded_obstacles(self):
        out = []
        for g in self.obstacles:
            if isinstance(g, dict):
                g = ObstacleGroup(**g)
            if not isinstance(g, (Obstacle, ObstacleGroup)):
                raise ConfigError(f"malformed obstacle entry {g!r}")
            if g.kind not in KINDS:
                raise ConfigError(f"unknown obstacle kind {g.kind!r}")
            if g.size <= 0 or g.length <= 0:
                raise ConfigError("obstacle size and length must be positive")
            out.extend(g.expand() if isinstance(g, ObstacleGroup) else [g])
        return out

    def to_dict(self):
        d = asdict(self)
        d["obstacles"] = [asdict(g) if not isinstance(g, dict) else g for g in self.obstacles]
        d["kick_window"] = list(self.kick_window)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "rewards" in d:
            d["rewards"] = TaskRewardWeights(**d["rewards"])
        if "kick_window" in d:
            d["kick_window"] = tuple(d["kick_window"])
        d["obstacles"] = [ObstacleGroup(**g) if "count" in g else Obstacle(**g)
                          for g in d.get("obstacles", [])]
        return cls(**d).validate()


def default_course(task):
    """Three identical obstacles per course; the wall course has one wall."""
    if task == "leap":
        # a full-strength triggered hop and gentle in-air pitch keep one well-timed jump sufficient;
        # the platform edge behind the spawn makes running away from the gaps a dead end
        groups = [ObstacleGroup("gap", 1.5, 0.48, count=3, length=0.48, spacing=2.0)]
        return EnvConfig(task=task, obstacles=groups, jump_impulse=4.0, jump_min_fraction=1.0,
                         air_torque_gain=2.0, back_edge=-0.5)
    if task == "climb":
        groups = [ObstacleGroup("step", 1.5, 0.25, count=3, length=1.0, spacing=2.0)]
        return EnvConfig(task=task, obstacles=groups)
    if task == "crawl":
        groups = [ObstacleGroup("bar", 1.5, 0.29, count=3, length=0.6, spacing=2.0)]
        return EnvConfig(task=task, obstacles=groups)
    if task == "walljump":
        groups = [ObstacleGroup("wall", 2.0, 0.9, count=1, length=0.2, spacing=1.0)]
        guide = [[0.5, 0.0], [1.2, 0.0], [1.7, 0.3], [1.9, 0.8], [1.5, 1.1], [1.0, 0.5], [0.8, 0.0]]
        return EnvConfig(task=task, obstacles=groups, guideline=guide)
    if task == "guideline-demo":
        guide = [[0.5, 0.0], [1.0, 0.0], [1.5, 0.2], [2.0, 0.0], [3.0, 0.0]]
        return EnvConfig(task=task, guideline=guide)
    raise ConfigError(f"unknown task {task!r}")


@dataclass
class Guideline:
    points: np.ndarray
    reach: float
    index: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or len(self.points) == 0:
            raise ConfigError("guideline needs at least one point")


def guideline_reward(pos, guide):
    """exp(-||pos - g_i||); the target advances once within the reach threshold.

    Returns ``(reward, guide)``; the index never moves backwards and stops
    at the last point.
    """
    d = float(np.linalg.norm(np.asarray(pos, dtype=np.float64) - guide.points[guide.index]))
    r = float(np.exp(-d))
    if d < guide.reach and guide.index < len(guide.points) - 1:
        guide.index += 1
    return r, guide


def guideline_reward_batch(pos, points, index, reach):
    d = np.linalg.norm(pos - points[index], axis=1)
    r = np.exp(-d)
    advance = (d < reach) & (index < len(points) - 1)
    return r, index + advance.astype(index.dtype)


def diversity_features(state, task, div_only=False):
    """Sub-dimensions of the robot state the skill reward is computed on.

    ``state`` maps robot field names to arrays (or scalars).
    """
    if task in ("climb", "crawl"):
        f = [np.asarray(state["z"]) + np.asarray(state["h_b"])]
    elif task == "leap":
        f = [np.asarray(state["vx"])]
    elif task in ("walljump", "guideline-demo"):
        f = [np.asarray(state["angle"])]
    else:
        raise ConfigError(f"no diversity features registered for task {task!r}")
    if div_only:
        f.append(np.asarray(state["x"]))
    return np.stack(f, axis=-1).astype(np.float64)


# skill-reward inputs are multiplied by these so one control step moves them by O(0.1)
FEATURE_SCALE = {"crawl": 10.0, "climb": 10.0, "leap": 10.0, "walljump": 1.0, "guideline-demo": 1.0}


def feature_dim(task, div_only=False):
    return 1 + int(div_only)


# observation layout: name -> (offset, width)
OBS_BLOCKS = {
    "base_position": (0, 2),
    "posture": (2, 1),
    "base_lin_vel": (3, 2),
    "base_rotation": (5, 1),
    "base_ang_vel": (6, 1),
    "contact": (7, 1),
    "obstacle_distance": (8, 1),
    "obstacle_properties": (9, 2),
    "obstacle_kind": (11, len(KINDS)),
}
STATE_OBS_DIM = 11 + len(KINDS)


def inject_observation_noise(obs, noise, rng):
    """Uniform noise of amplitude ``noise[block]`` on each named observation block."""
    obs = np.array(obs, dtype=np.float64, copy=True)
    for block, amp in (noise or {}).items():
        if amp < 0:
            raise ConfigError(f"noise amplitude for {block} must be >= 0")
        if amp == 0:
            continue
        if block not in OBS_BLOCKS:
            raise ConfigError(f"unknown observation block {block!r}")
        off, width = OBS_BLOCKS[block]
        sl = obs[..., off:off + width]
        sl += rng.uniform(-amp, amp, size=sl.shape)
    return obs


class CourseEnv:
    """N robots on one course, stepped together."""

    def __init__(self, config, num_envs=1, skill_dim=1):
        self.cfg = config.validate()
        self.n = num_envs
        self.skill_dim = skill_dim
        self.obstacles = self.cfg.expanded_obstacles()
        self.n_obstacles = len(self.obstacles)
        self.guide_points = np.asarray(self.cfg.guideline, dtype=np.float64).reshape(-1, 2)
        self._kind_onehot = np.eye(len(KINDS))
        self._alloc()

    @property
    def obs_dim(self):
        return STATE_OBS_DIM

    def _alloc(self):
        n = self.n
        self.x, self.z, self.h_b = np.zeros(n), np.zeros(n), np.full(n, self.cfg.h_nom)
        self.vx, self.vz = np.zeros(n), np.zeros(n)
        self.angle, self.ang_vel = np.zeros(n), np.zeros(n)
        self.grounded = np.ones(n, dtype=bool)
        self.t = np.zeros(n, dtype=np.int64)
        self.max_x = np.zeros(n)
        self.kicks = np.zeros(n, dtype=np.int64)
        self.walls_passed = np.zeros(n, dtype=np.int64)
        self.guide_idx = np.zeros(n, dtype=np.int64)
        self.skills = np.zeros((n, self.skill_dim))

    # ------------------------------------------------------------------ state
    def robot_state(self):
        return {"x": self.x.copy(), "z": self.z.copy(), "h_b": self.h_b.copy(), "vx": self.vx.copy(),
                "vz": self.vz.copy(), "angle": self.angle.copy(), "ang_vel": self.ang_vel.copy(),
                "grounded": self.grounded.copy()}

    def features(self):
        return diversity_features(self.robot_state(), self.cfg.task, self.cfg.div_only)

    def obstacles_passed(self):
        ends = np.array([o.end_x for o in self.obstacles if o.kind != "wall"])
        count = (self.max_x[:, None] > ends[None, :]).sum(axis=1) if ends.size else np.zeros(self.n, int)
        return count + self.walls_passed

    def _next_obstacle(self):
        """Distance to, size/length of, and kind of the first obstacle not yet behind the robot."""
        n = self.n
        dist = np.full(n, self.cfg.max_range)
        props = np.zeros((n, 2))
        kind = np.zeros((n, len(KINDS)))
        found = np.zeros(n, dtype=bool)
        for o in self.obstacles:
            ahead = ~found & (self.x < o.end_x)
            if not ahead.any():
                continue
            dist[ahead] = np.clip(o.start_x - self.x[ahead], 0.0, self.cfg.max_range)
            props[ahead] = (o.size, o.length)
            kind[ahead] = self._kind_onehot[KINDS.index(o.kind)]
            found |= ahead
        return dist, props, kind

    def obs_state(self):
        dist, props, kind = self._next_obstacle()
        return np.column_stack([self.x, self.z, self.h_b, self.vx, self.vz, self.angle, self.ang_vel,
                                self.grounded.astype(np.float64), dist, props, kind])

    def observation(self):
        """Full observation with the episode's skill as the final block."""
        return np.concatenate([self.obs_state(), self.skills], axis=1)

    def surface(self, x):
        """Support height under x; -inf over gaps."""
        h = np.zeros_like(x)
        if self.cfg.back_edge is not None:
            h[x < self.cfg.back_edge] = -np.inf
        for o in self.obstacles:
            inside = (x >= o.start_x) & (x <= o.end_x)
            if o.kind == "gap":
                h[inside] = -np.inf
            elif o.kind in ("step", "wall"):
                h[inside] = o.size
        return h

    # ------------------------------------------------------------------ reset
    def reset(self, rng, skills=None, mask=None):
        """Reset the robots selected by ``mask`` (all by default) and return observations."""
        mask = np.ones(self.n, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
        k = int(mask.sum())
        cfg = self.cfg
        jitter = rng.uniform(-cfg.spawn_jitter, cfg.spawn_jitter, k) if cfg.spawn_jitter > 0 else 0.0
        self.x[mask] = cfg.spawn_x + jitter
        self.z[mask] = 0.0
        self.h_b[mask] = cfg.h_nom
        self.vx[mask] = self.vz[mask] = 0.0
        self.angle[mask] = self.ang_vel[mask] = 0.0
        self.grounded[mask] = True
        self.t[mask] = 0
        self.max_x[mask] = self.x[mask]
        self.kicks[mask] = 0
        self.walls_passed[mask] = 0
        self.guide_idx[mask] = 0
        if skills is not None:
            self.skills[mask] = np.asarray(skills, dtype=np.float64).reshape(k, self.skill_dim)
        return self.observation()

    # ------------------------------------------------------------------- step
    def step(self, actions):
        """Advance every robot by one control step.

        Returns ``(obs, r_task, done, info)``; ``info`` holds ``cause``
        (termination code per robot), ``obstacles_passed`` and ``timeout``.
        """
        cfg = self.cfg
        raw = np.asarray(actions, dtype=np.float64).reshape(self.n, ACTION_DIM)
        bad_action = ~np.all(np.isfinite(raw), axis=1)
        a = np.clip(np.nan_to_num(raw), -1.0, 1.0)
        dt, g = cfg.dt, cfg.gravity
        cause = np.zeros(self.n, dtype=np.int64)
        x_prev = self.x.copy()
        ground = self.grounded.copy()

        # posture: servo towards a commanded height; small commands hold the nominal stance
        mag = np.clip((np.abs(a[:, 2]) - cfg.posture_deadband) / (1.0 - cfg.posture_deadband), 0.0, 1.0)
        target = np.where(a[:, 2] < 0, cfg.h_nom + (cfg.h_min - cfg.h_nom) * mag,
                          cfg.h_nom + (cfg.h_max - cfg.h_nom) * mag)
        h_new = np.clip(self.h_b + dt * cfg.posture_servo * (target - self.h_b), cfg.h_min, cfg.h_max)
        h_rate = (h_new - self.h_b) / dt
        self.h_b = h_new

        # horizontal drive only while in contact; crouching reduces traction
        frac = np.clip((self.h_b - cfg.h_min) / (cfg.h_nom - cfg.h_min), 0.0, 1.0)
        speed_factor = cfg.crouch_speed_factor + (1.0 - cfg.crouch_speed_factor) * frac
        force = cfg.force_gain * a[:, 0] * speed_factor
        self.vx = np.where(ground, self.vx + dt * (force - cfg.drag * self.vx), self.vx)

        # jump impulse
        span = 1.0 - cfg.jump_threshold
        lift = np.clip((a[:, 1] - cfg.jump_threshold) / span, 0.0, 1.0)
        lift = np.where(lift > 0, cfg.jump_min_fraction + (1.0 - cfg.jump_min_fraction) * lift, 0.0)
        impulse = cfg.jump_impulse * lift
        jump = ground & (impulse > 0)
        self.vz = np.where(jump, impulse / cfg.mass, self.vz)
        airborne = ~ground | jump
        self.vz = np.where(airborne, self.vz - g * dt, 0.0)

        # pitch
        torque = cfg.torque_gain * a[:, 3]
        acc_ground = torque - cfg.ang_spring * self.angle - cfg.ang_damp * self.ang_vel
        acc_air = cfg.air_torque_gain * a[:, 3]
        self.ang_vel = self.ang_vel + dt * np.where(airborne, acc_air, acc_ground)
        self.angle = self.angle + dt * self.ang_vel

        # semi-implicit position update
        self.x = self.x + dt * self.vx
        self.z = np.where(airborne, self.z + dt * self.vz, self.z)

        self._resolve_contacts(x_prev, airborne, cause)

        self.t += 1
        self.max_x = np.maximum(self.max_x, self.x)

        finite = np.isfinite(self.x) & np.isfinite(self.z) & np.isfinite(self.vx) & np.isfinite(self.vz) \
            & np.isfinite(self.angle) & np.isfinite(self.ang_vel)
        cause[~finite | bad_action] = FAULT
        timeout = (cause == ALIVE) & (self.t >= cfg.timeout)
        cause[timeout] = TIMEOUT
        terminal = (cause != ALIVE) & (cause != TIMEOUT)
        done = cause != ALIVE

        r = self._task_reward(a, raw, h_rate, torque, impulse, terminal)
        r[~np.isfinite(r)] = 0.0
        info = {"cause": cause, "timeout": timeout, "terminal": terminal,
                "obstacles_passed": self.obstacles_passed()}
        for arr in (self.x, self.z, self.vx, self.vz, self.angle, self.ang_vel):
            arr[~finite] = 0.0
        return self.observation(), r, done, info

    def _resolve_contacts(self, x_prev, airborne, cause):
        cfg = self.cfg
        for o in self.obstacles:
            if o.kind == "gap":
                # below the rim when reaching the far edge
                hit_edge = (x_prev <= o.end_x) & (self.x > o.end_x) & (self.z < -cfg.contact_tol)
                cause[hit_edge & (cause == ALIVE)] = FELL
            elif o.kind == "bar":
                under = (self.x >= o.start_x) & (self.x <= o.end_x)
                hit = under & (self.z + self.h_b > o.size)
                cause[hit & (cause == ALIVE)] = BAR_HIT
            elif o.kind in ("step", "wall"):
                crossing = (x_prev < o.start_x) & (self.x >= o.start_x) & (self.z < o.size - cfg.contact_tol)
                if o.kind == "wall":
                    lo, hi = cfg.kick_window
                    kick = crossing & airborne & (self.angle >= lo) & (self.angle <= hi)
                    self.x[kick] = o.start_x - 1e-3
                    self.vx[kick] = -0.5 * np.abs(self.vx[kick])
                    self.vz[kick] = cfg.kick_speed
                    self.kicks[kick] += 1
                    crossing &= ~kick
                self.x[crossing] = o.start_x - 1e-3
                cause[crossing & (cause == ALIVE)] = CRASH

        surf = self.surface(self.x)
        # walking off an edge or over a gap
        self.grounded &= ~(self.z > surf + cfg.contact_tol)
        falling = ~self.grounded
        land = falling & (self.vz <= 0) & (self.z <= surf)
        self.z[land] = surf[land]
        self.vz[land] = 0.0
        self.grounded |= land
        tipped = land & (np.abs(self.angle) > cfg.tip_angle)
        cause[tipped & (cause == ALIVE)] = TIPPED
        landed_after_kick = land & (self.kicks > self.walls_passed) & ~tipped
        self.walls_passed[landed_after_kick] += 1
        fell = np.isneginf(surf) & (self.z < -0.3)
        cause[fell & (cause == ALIVE)] = FELL

    def _task_reward(self, a, raw, h_rate, torque, impulse, terminal):
        cfg, w = self.cfg, self.cfg.rewards
        if cfg.task in ("walljump", "guideline-demo"):
            pos = np.column_stack([self.x, self.z])
            r, self.guide_idx = guideline_reward_batch(pos, self.guide_points, self.guide_idx,
                                                       cfg.guideline_reach)
            return r
        effort = np.column_stack([cfg.force_gain * a[:, 0], impulse, a[:, 2], torque])
        joint_vel = np.column_stack([self.vx, self.vz, h_rate, self.ang_vel])
        pos_excess = np.maximum(np.abs(self.angle) - cfg.angle_limit, 0.0)
        effort_excess = np.maximum(np.abs(raw) - 1.0, 0.0).sum(axis=1)
        return (w.ang * np.exp(-np.abs(self.ang_vel))
                + w.lin * np.abs(self.vx - cfg.vx_target)
                + w.alive * (~terminal)
                + w.effort * np.sum((effort * joint_vel) ** 2, axis=1)
                + w.pos_limit * pos_excess
                + w.effort_limit * effort_excess)


def task_reward_terms(vx, vx_target, ang_vel, alive, weights=None, effort_sq=0.0, pos_excess=0.0,
                      effort_excess=0.0):
    """Scalar task reward from its individual terms."""
    w = weights or TaskRewardWeights()
    return (w.ang * np.exp(-abs(ang_vel)) + w.lin * abs(vx - vx_target) + w.alive * float(alive)
            + w.effort * effort_sq + w.pos_limit * pos_excess + w.effort_limit * effort_excess)


def load_env_config(path):
    with open(path) as f:
        return EnvConfig.from_dict(json.load(f))


def save_env_config(cfg, path):
    with open(path, "w") as f:
        json.dump(cfg.to_dict(), f, indent=2)


def write_trajectory(rows, path):
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(TRAJECTORY_HEADER)
        for row in rows:
            w.writerow([row[k] for k in TRAJECTORY_HEADER])
