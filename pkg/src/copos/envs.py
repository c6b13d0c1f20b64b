"""Experiment environments.

All environments expose the same functional interface:

    state, obs = env.reset(rng)
    state, obs, reward, done = env.step(state, action, rng)

with immutable state objects, so an episode is a pure function of the
RNG stream and replaying a seed reproduces it bit-exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class QuadraticBandit:
    """Stateless 1-D bandit with reward R(a) = -0.5 R a^2 + r a."""

    R_coef: float = 1.0
    r_coef: float = 1.0
    gamma: float = 1.0
    horizon: int = 1
    obs_dim: int = 1
    action_dim: int = 1

    def __post_init__(self):
        if self.R_coef <= 0:
            raise ValueError("R_coef must be positive for an optimum to exist")

    @property
    def optimum(self) -> float:
        return self.r_coef / self.R_coef

    def reward(self, a: float) -> float:
        return -0.5 * self.R_coef * a * a + self.r_coef * a

    def reset(self, rng):
        return None, np.array([1.0])

    def step(self, state, action, rng):
        a = float(np.asarray(action).ravel()[0])
        return None, np.array([1.0]), self.reward(a), True


def bandit_expected_reward(policy, env) -> float:
    """Closed-form E[R(a)] under a stateless 1-D Gaussian policy."""
    if policy.action_dim != 1 or policy.features.output_dim != 1:
        raise ValueError("bandit_expected_reward needs a stateless 1-D Gaussian")
    B = float(policy.prec_matrix[0, 0])
    if B <= 0:
        raise ValueError("precision must be positive")
    mu = float(policy.mean(np.array([[1.0]]))[0, 0])
    var = 1.0 / B
    return -0.5 * env.R_coef * (mu * mu + var) + env.r_coef * mu


class ChainMdp:
    """Small slippery chain: move right to reach the rewarded terminal state."""

    def __init__(self, n_states=5, slip=0.1, gamma=0.95, horizon=20):
        self.n_states = n_states
        self.slip = slip
        self.gamma = gamma
        self.horizon = horizon
        self.obs_dim = n_states
        self.action_count = 2

    def _obs(self, s):
        v = np.zeros(self.n_states)
        v[s] = 1.0
        return v

    def reset(self, rng):
        return 0, self._obs(0)

    def step(self, state, action, rng):
        direction = 1 if int(action) == 1 else -1
        if rng.random() < self.slip:
            direction = -direction
        nxt = min(max(state + direction, 0), self.n_states - 1)
        done = nxt == self.n_states - 1
        reward = 1.0 if done else 0.0
        return nxt, self._obs(nxt), reward, done

    def transition_matrix(self, action) -> np.ndarray:
        P = np.zeros((self.n_states, self.n_states))
        direction = 1 if int(action) == 1 else -1
        for s in range(self.n_states):
            for d, pr in ((direction, 1.0 - self.slip), (-direction, self.slip)):
                P[s, min(max(s + d, 0), self.n_states - 1)] += pr
        return P


# -- Field Vision RockSample --------------------------------------------------

FVRS_ACTIONS = ("north", "south", "east", "west", "sample")
FVRS_INSTANCES = {
    (5, 5): {"grid": 5, "rocks": 5, "horizon": 25},
    (5, 7): {"grid": 5, "rocks": 7, "horizon": 35},
    (7, 8): {"grid": 7, "rocks": 8, "horizon": 50},
}


def sensor_accuracy(distance, half_efficiency_distance=2.0) -> float:
    """Probability of a correct rock reading at the given distance."""
    return 0.5 * (1.0 + 2.0 ** (-distance / half_efficiency_distance))


@dataclass(frozen=True)
class FvrsState:
    row: int
    col: int
    goodness: tuple       # per-rock bool
    t: int
    history: tuple        # history_length tuples of per-rock readings (+1/-1, 0 pad)


class FvrsEnv:
    """Field Vision RockSample grid POMDP.

    The agent sees one (possibly noisy) reading per rock every step,
    with accuracy decaying in Euclidean distance; sampling a good rock
    pays +1 and spoils it, sampling anything else pays -1, and exiting
    east pays +1. Rock layout is fixed per (instance, seed); goodness is
    resampled per episode.
    """

    good_reward = 1.0
    bad_reward = -1.0
    exit_reward = 1.0

    def __init__(self, grid_size, rock_count, mode="full", seed=0,
                 horizon=25, history_length=None, gamma=0.95,
                 half_efficiency_distance=2.0):
        if mode not in ("full", "noise"):
            raise ValueError(f"unknown sensor mode {mode!r}")
        self.n = grid_size
        self.k = rock_count
        self.mode = mode
        self.horizon = horizon
        self.history_length = history_length if history_length is not None \
            else (1 if mode == "full" else 15)
        self.gamma = gamma
        self.d0 = half_efficiency_distance
        layout_rng = np.random.default_rng(np.random.SeedSequence((int(seed), 0x7E0C)))
        cells = layout_rng.choice(self.n * self.n, size=self.k, replace=False)
        self.rock_positions = tuple((int(c) // self.n, int(c) % self.n) for c in cells)
        self.start = (self.n // 2, 0)
        self.obs_dim = self.k * self.history_length + 2 * self.n
        self.action_count = len(FVRS_ACTIONS)

    # -- observation machinery ------------------------------------------

    def _readings(self, row, col, goodness, rng):
        out = np.empty(self.k)
        for j, (rr, rc) in enumerate(self.rock_positions):
            truth = 1.0 if goodness[j] else -1.0
            if self.mode == "full":
                out[j] = truth
            else:
                d = np.hypot(row - rr, col - rc)
                correct = rng.random() < sensor_accuracy(d, self.d0)
                out[j] = truth if correct else -truth
        return tuple(out)

    def _obs(self, state) -> np.ndarray:
        obs = np.zeros(self.obs_dim)
        flat = [x for frame in state.history for x in frame]
        obs[:self.k * self.history_length] = flat
        obs[self.k * self.history_length + state.row] = 1.0
        obs[self.k * self.history_length + self.n + state.col] = 1.0
        return obs

    def _push(self, history, frame):
        return tuple(list(history[1:]) + [frame])

    def reset(self, rng):
        goodness = tuple(bool(b) for b in rng.random(self.k) < 0.5)
        blank = tuple(0.0 for _ in range(self.k))
        history = tuple(blank for _ in range(self.history_length))
        row, col = self.start
        history = self._push(history, self._readings(row, col, goodness, rng))
        state = FvrsState(row=row, col=col, goodness=goodness, t=0, history=history)
        return state, self._obs(state)

    def step(self, state, action, rng):
        action = int(action)
        row, col = state.row, state.col
        goodness = list(state.goodness)
        reward = 0.0
        done = False
        name = FVRS_ACTIONS[action]
        if name == "north":
            row = max(row - 1, 0)
        elif name == "south":
            row = min(row + 1, self.n - 1)
        elif name == "west":
            col = max(col - 1, 0)
        elif name == "east":
            if col == self.n - 1:
                reward = self.exit_reward
                done = True
            else:
                col += 1
        else:  # sample
            here = (row, col)
            if here in self.rock_positions and goodness[self.rock_positions.index(here)]:
                reward = self.good_reward
                goodness[self.rock_positions.index(here)] = False
            else:
                reward = self.bad_reward
        t = state.t + 1
        if t >= self.horizon:
            done = True
        history = self._push(state.history, self._readings(row, col, goodness, rng))
        new_state = FvrsState(row=row, col=col, goodness=tuple(goodness), t=t,
                              history=history)
        return new_state, self._obs(new_state), reward, done


def fvrs_step(env, state, action, rng):
    return env.step(state, action, rng)


def make_fvrs(instance, mode="full", seed=0) -> FvrsEnv:
    instance = tuple(instance)
    if instance not in FVRS_INSTANCES:
        raise ValueError(f"unknown FVRS instance {instance!r}")
    cfg = FVRS_INSTANCES[instance]
    return FvrsEnv(grid_size=cfg["grid"], rock_count=cfg["rocks"], mode=mode,
                   seed=seed, horizon=cfg["horizon"])


# -- registry -----------------------------------------------------------------


def _fvrs_factory(instance, mode):
    return lambda seed=0: make_fvrs(instance, mode, seed)


ENV_REGISTRY = {
    "bandit": lambda seed=0: QuadraticBandit(),
    "chain": lambda seed=0: ChainMdp(),
    "fvrs-5x5-full": _fvrs_factory((5, 5), "full"),
    "fvrs-5x5-noise": _fvrs_factory((5, 5), "noise"),
    "fvrs-5x7-full": _fvrs_factory((5, 7), "full"),
    "fvrs-5x7-noise": _fvrs_factory((5, 7), "noise"),
    "fvrs-7x8-full": _fvrs_factory((7, 8), "full"),
    "fvrs-7x8-noise": _fvrs_factory((7, 8), "noise"),
}


def make_env(env_id, seed=0):
    if env_id not in ENV_REGISTRY:
        raise ValueError(f"unknown environment id {env_id!r}")
    return ENV_REGISTRY[env_id](seed=seed)
