"""Tiny environments with known optima, used to sanity-check the two agent heads."""

import itertools

import numpy as np


class GoalNavigationEnv:
    """Point mass on a plane; continuous action moves it, reward is minus the distance to the goal."""

    state_dim = 4
    action_dim = 2

    def __init__(self, seed: int = 0, horizon: int = 20, step_size: float = 0.1, bound: float = 1.5):
        self.rng = np.random.default_rng(seed)
        self.horizon = horizon
        self.step_size = step_size
        self.bound = bound
        self._t = 0
        self.pos = np.zeros(2)
        self.goal = np.zeros(2)

    def _obs(self) -> np.ndarray:
        return np.concatenate([self.pos, self.goal])

    def reset(self) -> np.ndarray:
        self.pos = self.rng.uniform(-1.0, 1.0, 2)
        self.goal = self.rng.uniform(-1.0, 1.0, 2)
        self._t = 0
        return self._obs()

    def step(self, action) -> tuple[np.ndarray, float, bool]:
        a = np.clip(np.asarray(action, dtype=float), -1.0, 1.0)
        self.pos = np.clip(self.pos + self.step_size * a, -self.bound, self.bound)
        self._t += 1
        reward = -float(np.linalg.norm(self.pos - self.goal))
        return self._obs(), reward, self._t >= self.horizon


class MaskBanditEnv:
    """One-step bandit over M-bit masks with a linear payoff and a unique best mask."""

    state_dim = 2

    def __init__(self, m: int = 4, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.m = m
        # keep every weight away from zero so the optimum is unique
        self.weights = rng.choice([-1.0, 1.0], size=m) * rng.uniform(0.2, 1.0, size=m)
        self.state = np.ones(self.state_dim)

    def payoff(self, bits) -> float:
        return float(np.dot(self.weights, np.asarray(bits, dtype=float)))

    def optimal_mask(self) -> np.ndarray:
        best = max(itertools.product((0, 1), repeat=self.m), key=self.payoff)
        return np.array(best, dtype=int)

    def reset(self) -> np.ndarray:
        return self.state.copy()

    def step(self, bits) -> tuple[np.ndarray, float, bool]:
        return self.state.copy(), self.payoff(bits), True
