"""
    Vectorised grid-world with a move-right actuator failure.

    Cells are addressed as ``(x, y)`` with ``x`` the column; ``Up`` increases
    ``y``. Observations are ``[one-hot cell (size**2); health; 0]``.
"""

import logging
from collections import deque
from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

import numpy as np

from .errors import EnvironmentStateError

__all__ = ["Action", "EnvConfig", "GridState", "VecEnv", "optimal_return"]

logger = logging.getLogger(__name__)

DAMAGE_MODES = ("noop_right", "noop_right_and_move_goal")


class Action(IntEnum):
    UP = 0
    DOWN = 1
    LEFT = 2
    RIGHT = 3


_MOVES = {
    Action.UP: (0, 1),
    Action.DOWN: (0, -1),
    Action.LEFT: (-1, 0),
    Action.RIGHT: (1, 0),
}


@dataclass(frozen=True)
class EnvConfig:
    """Grid-world layout and failure protocol.

    Parameters
    ----------
    size : int, default 4
    start, goal : tuple of int
        ``(x, y)`` cells.
    damage_step : int, default 50
        Global step at which every instance loses its move-right actuator.
    max_len : int, default 16
    damage_mode : {'noop_right', 'noop_right_and_move_goal'}
        With the second mode the goal is relocated to ``moved_goal`` at
        damage time so it stays reachable without moving right, and later
        episodes begin on ``moved_start``.
    moved_goal : tuple of int, default (0, 3)
    moved_start : tuple of int, default (3, 0)
        The mirrored start keeps the repaired task as long as the original
        one. Set it equal to ``start`` to keep the agent's start fixed.
    n_envs : int, default 8
    """

    size: int = 4
    start: Tuple[int, int] = (0, 0)
    goal: Tuple[int, int] = (3, 3)
    damage_step: int = 50
    max_len: int = 16
    damage_mode: str = "noop_right_and_move_goal"
    moved_goal: Tuple[int, int] = (0, 3)
    moved_start: Tuple[int, int] = (3, 0)
    n_envs: int = 8

    def __post_init__(self):
        if self.size < 1:
            raise ValueError("size must be positive")
        for name in ("start", "goal", "moved_goal", "moved_start"):
            cell = tuple(getattr(self, name))
            if len(cell) != 2 or not all(0 <= c < self.size for c in cell):
                raise ValueError("%s=%s is outside a %dx%d grid" % (name, cell, self.size, self.size))
            object.__setattr__(self, name, cell)
        if self.damage_step < 0:
            raise ValueError("damage_step must be non-negative")
        if self.max_len < 0:
            raise ValueError("max_len must be non-negative")
        if self.damage_mode not in DAMAGE_MODES:
            raise ValueError("damage_mode must be one of %s" % (DAMAGE_MODES,))
        if self.n_envs < 1:
            raise ValueError("n_envs must be positive")

    @property
    def obs_dim(self):
        return self.size * self.size + 2


@dataclass
class GridState:
    agent_x: int
    agent_y: int
    goal_x: int
    goal_y: int
    health: int = 1
    episode_step: int = 0
    done: bool = False


class VecEnv:
    """``n_envs`` grid-worlds advanced in lock-step.

    Transitions are deterministic, so the environment holds no random
    stream; all randomness comes from the agent's action sampling.

    Parameters
    ----------
    cfg : EnvConfig, optional
    auto_reset : bool, default True
        Restart an instance as soon as it finishes. With False, stepping a
        finished instance raises :class:`riiu.errors.EnvironmentStateError`.
    """

    def __init__(self, cfg=None, auto_reset=True):
        self.cfg = cfg or EnvConfig()
        self.auto_reset = auto_reset
        self.global_step = 0
        self.damaged = False
        self.envs = [self._fresh() for _ in range(self.cfg.n_envs)]

    def __repr__(self):
        return "VecEnv(n_envs=%d, global_step=%d, damaged=%s)" % (len(self.envs), self.global_step, self.damaged)

    @property
    def relocated(self):
        return self.damaged and self.cfg.damage_mode == "noop_right_and_move_goal"

    @property
    def goal(self):
        return self.cfg.moved_goal if self.relocated else self.cfg.goal

    @property
    def start(self):
        return self.cfg.moved_start if self.relocated else self.cfg.start

    def _fresh(self):
        gx, gy = self.goal
        sx, sy = self.start
        return GridState(
            agent_x=sx,
            agent_y=sy,
            goal_x=gx,
            goal_y=gy,
            health=0 if self.damaged else 1,
        )

    def observations(self):
        """(n_envs, size**2 + 2) observation matrix."""
        size = self.cfg.size
        obs = np.zeros((len(self.envs), self.cfg.obs_dim))
        for i, s in enumerate(self.envs):
            obs[i, s.agent_y * size + s.agent_x] = 1.0
            obs[i, size * size] = float(s.health)
        return obs

    def reset(self):
        """Put every agent back on the start cell.

        Damage is permanent: after the failure ``health`` stays 0 and the
        goal and start stay relocated. Agents caught mid-episode by the
        failure keep their position.
        """
        self.envs = [self._fresh() for _ in range(self.cfg.n_envs)]
        return self.observations()

    def step(self, actions):
        """Move every agent one cell.

        Parameters
        ----------
        actions : sequence of int
            One :class:`Action` per instance.

        Returns
        -------
        observations : (n_envs, obs_dim) numpy.ndarray
        rewards : (n_envs,) numpy.ndarray
            1 on reaching the goal, else 0.
        dones : (n_envs,) numpy.ndarray of bool
            Goal reached or ``max_len`` steps taken. With ``auto_reset`` the
            returned observation of a finished instance is its restart.
        """
        actions = np.asarray(actions)
        if actions.shape != (len(self.envs),):
            raise ValueError("expected %d actions, got shape %s" % (len(self.envs), actions.shape))
        size = self.cfg.size
        rewards = np.zeros(len(self.envs))
        dones = np.zeros(len(self.envs), dtype=bool)

        for i, (s, a) in enumerate(zip(self.envs, actions)):
            if s.done:
                raise EnvironmentStateError("instance %d is finished; call reset() first" % i)
            action = Action(int(a))
            dx, dy = _MOVES[action]
            if action == Action.RIGHT and self.damaged:
                dx = 0
            s.agent_x = min(max(s.agent_x + dx, 0), size - 1)
            s.agent_y = min(max(s.agent_y + dy, 0), size - 1)
            s.episode_step += 1
            if (s.agent_x, s.agent_y) == (s.goal_x, s.goal_y):
                rewards[i] = 1.0
                s.done = True
            elif s.episode_step >= self.cfg.max_len:
                s.done = True
            dones[i] = s.done

        self.global_step += 1
        if not self.damaged and self.global_step >= self.cfg.damage_step:
            self._apply_damage()
        if self.auto_reset:
            for i, s in enumerate(self.envs):
                if s.done:
                    self.envs[i] = self._fresh()
        return self.observations(), rewards, dones

    def _apply_damage(self):
        self.damaged = True
        gx, gy = self.goal
        for s in self.envs:
            s.health = 0
            s.goal_x, s.goal_y = gx, gy
        logger.info("actuator failure at global step %d; goal now %s", self.global_step, (gx, gy))


def _neighbours(cell, size, allow_right):
    for action, (dx, dy) in _MOVES.items():
        if action == Action.RIGHT and not allow_right:
            continue
        yield (min(max(cell[0] + dx, 0), size - 1), min(max(cell[1] + dy, 0), size - 1))


def _shortest_path(size, start, goal, allow_right):
    """Fewest moves from ``start`` until the agent first stands on ``goal``.

    The goal test happens after a move, so the search is seeded with the
    start's successors at distance 1. A start on the goal is therefore only
    reached again by stepping away and back, or by a move clamped at a wall.
    """
    dist = {}
    queue = deque()
    for nxt in _neighbours(start, size, allow_right):
        if nxt not in dist:
            dist[nxt] = 1
            queue.append(nxt)
    while queue:
        cell = queue.popleft()
        if cell == goal:
            return dist[cell]
        for nxt in _neighbours(cell, size, allow_right):
            if nxt not in dist:
                dist[nxt] = dist[cell] + 1
                queue.append(nxt)
    return None


def optimal_return(cfg=None):
    """Best undiscounted episode return before and after the failure.

    Breadth-first search over moves from the start cell; a return of 1 is
    achievable exactly when the goal is reached within ``max_len`` steps.
    Arrival is only checked after a move, so a goal on the start cell needs
    at least one step.

    Returns
    -------
    (pre_damage, post_damage) : tuple of float
    """
    cfg = cfg or EnvConfig()

    def best(start, goal, allow_right):
        dist = _shortest_path(cfg.size, start, goal, allow_right)
        return 1.0 if dist is not None and dist <= cfg.max_len else 0.0

    if cfg.damage_mode == "noop_right_and_move_goal":
        post = best(cfg.moved_start, cfg.moved_goal, False)
    else:
        post = best(cfg.start, cfg.goal, False)
    return best(cfg.start, cfg.goal, True), post
