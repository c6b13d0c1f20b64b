"""Experiment runner: configuration, seeding, logging, oracles.

Configs are flat `key = value` text files with `include = other.cfg`
support. Every run writes `config.resolved`, an incrementally flushed
`progress.csv` and a final policy checkpoint into its run directory,
and is reproducible byte-for-byte from (config, seed): all RNG streams
derive from the master seed through documented counters. wallclock
timings go to the log only, never into the CSV.
"""

from __future__ import annotations

import json
import logging
import os
import time
from dataclasses import dataclass, fields, replace

import numpy as np

from . import analysis, oracles
from .envs import ENV_REGISTRY, make_env
from .policies import NaturalGaussianPolicy, SoftmaxPolicy, mean_entropy, save_policy
from .rollout import collect, compute_advantages
from .update import (EntropySchedule, UpdateConfig, copos_update,
                     entropy_budget, tnpg_update, trpo_update, vpg_update)

log = logging.getLogger(__name__)

CSV_COLUMNS = ("iter", "mean_return", "disc_return", "entropy", "kl", "eta",
               "omega", "linesearch_s", "grad_norm", "w_norm", "wallclock_ms")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    env: str = "bandit"
    algo: str = "copos"
    iterations: int = 0                   # 0: use the environment default
    samples_per_iteration: int = 0
    epsilon: float = 0.01
    beta_mode: str = "none"               # fixed | auto | none
    beta_value: float = 0.01
    entropy_constraint: str = "equality"
    seed: int = 0
    out_dir: str = "runs/latest"
    horizon: int = 0                      # 0: environment default
    hidden: tuple = ()                    # () : environment default
    n_basis: int = 0
    init_prec: float = 1.0
    diagonal: bool = True
    damping: float = 1e-4
    cg_iters: int = 10
    cg_tol: float = 1e-10
    vpg_learning_rate: float = 1000.0
    trpo_entropy_bonus_coeff: float = 0.0
    normalize_advantages: bool = True
    baseline: str = "state_value"

    def __post_init__(self):
        if self.env not in ENV_REGISTRY:
            raise ConfigError(f"unknown environment id {self.env!r}")
        if self.algo not in ("copos", "tnpg", "trpo", "vpg"):
            raise ConfigError(f"unknown algorithm {self.algo!r}")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be positive")
        if self.beta_mode not in ("fixed", "auto", "none"):
            raise ConfigError(f"unknown beta_mode {self.beta_mode!r}")


ENV_DEFAULTS = {
    "bandit": {"iterations": 50, "samples_per_iteration": 1000, "hidden": ()},
    "chain": {"iterations": 100, "samples_per_iteration": 1000, "hidden": (30, 30)},
}
for _env_id in ENV_REGISTRY:
    if _env_id.startswith("fvrs-"):
        ENV_DEFAULTS[_env_id] = {"iterations": 600, "samples_per_iteration": 5000,
                                 "hidden": (30, 30)}

_BOOL_KEYS = {"diagonal", "normalize_advantages"}
_INT_KEYS = {"iterations", "samples_per_iteration", "seed", "horizon", "n_basis",
             "cg_iters"}
_FLOAT_KEYS = {"epsilon", "beta_value", "init_prec", "damping", "cg_tol",
               "vpg_learning_rate", "trpo_entropy_bonus_coeff"}


def parse_config_text(text, base_dir=".") -> dict:
    """Flat key = value lines; '#' comments; include = <file> splices."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key == "include":
            path = os.path.join(base_dir, value)
            with open(path) as fh:
                included = parse_config_text(fh.read(), os.path.dirname(path))
            out.update(included)
            continue
        out[key] = value
    return out


def config_from_mapping(mapping) -> ExperimentConfig:
    known = {f.name for f in fields(ExperimentConfig)}
    unknown = set(mapping) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in mapping.items():
        if key in _BOOL_KEYS:
            if str(value).lower() not in ("true", "false", "0", "1"):
                raise ConfigError(f"{key} must be a boolean, got {value!r}")
            kwargs[key] = str(value).lower() in ("true", "1")
        elif key in _INT_KEYS:
            kwargs[key] = int(value)
        elif key in _FLOAT_KEYS:
            kwargs[key] = float(value)
        elif key == "hidden":
            value = str(value).strip()
            kwargs[key] = tuple(int(x) for x in value.split(",") if x.strip()) \
                if value not in ("", "none") else ()
        else:
            kwargs[key] = value
    return ExperimentConfig(**kwargs)


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        mapping = parse_config_text(fh.read(), os.path.dirname(os.path.abspath(path)))
    return config_from_mapping(mapping)


def resolve_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill environment-dependent defaults."""
    defaults = ENV_DEFAULTS.get(cfg.env, {})
    updates = {}
    if cfg.iterations == 0:
        updates["iterations"] = defaults.get("iterations", 100)
    if cfg.samples_per_iteration == 0:
        updates["samples_per_iteration"] = defaults.get("samples_per_iteration", 1000)
    if cfg.hidden == () and defaults.get("hidden"):
        updates["hidden"] = defaults["hidden"]
    return replace(cfg, **updates) if updates else cfg


def _write_resolved(cfg, path):
    with open(path, "w") as fh:
        for f in sorted(fields(cfg), key=lambda f: f.name):
            value = getattr(cfg, f.name)
            if isinstance(value, tuple):
                value = ",".join(str(v) for v in value)
            fh.write(f"{f.name} = {value}\n")


def build_policy(cfg: ExperimentConfig, env):
    rng = np.random.default_rng(np.random.SeedSequence((cfg.seed, 0x9011C1)))
    if hasattr(env, "action_dim"):      # continuous
        n_basis = cfg.n_basis or None
        return NaturalGaussianPolicy.create(
            env.obs_dim, env.action_dim, hidden=tuple(cfg.hidden),
            n_basis=n_basis, init_prec=cfg.init_prec, diagonal=cfg.diagonal,
            rng=rng)
    return SoftmaxPolicy.create(env.obs_dim, env.action_count,
                                hidden=tuple(cfg.hidden), rng=rng)


def iteration_seed(master_seed, iteration) -> int:
    return int(np.random.SeedSequence((int(master_seed), int(iteration))).generate_state(1)[0])


def _update_config(cfg: ExperimentConfig) -> UpdateConfig:
    return UpdateConfig(
        algo=cfg.algo, epsilon=cfg.epsilon, beta_mode=cfg.beta_mode,
        beta_value=cfg.beta_value, entropy_constraint=cfg.entropy_constraint,
        total_iterations=cfg.iterations, vpg_learning_rate=cfg.vpg_learning_rate,
        trpo_entropy_bonus_coeff=cfg.trpo_entropy_bonus_coeff,
        damping=cfg.damping, cg_iters=cfg.cg_iters, cg_tol=cfg.cg_tol,
        normalize_advantages=cfg.normalize_advantages, baseline=cfg.baseline)


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and not np.isfinite(x)):
        return ""
    return f"{x:.12g}"


UPDATERS = {"copos": copos_update, "tnpg": tnpg_update,
            "trpo": trpo_update, "vpg": vpg_update}


def run_experiment(cfg: ExperimentConfig) -> str:
    """Run the rollout/update loop; returns the run directory."""
    cfg = resolve_config(cfg)
    run_dir = cfg.out_dir
    os.makedirs(run_dir, exist_ok=True)
    _write_resolved(cfg, os.path.join(run_dir, "config.resolved"))

    env = make_env(cfg.env, seed=cfg.seed)
    horizon = cfg.horizon or env.horizon
    policy = build_policy(cfg, env)
    ucfg = _update_config(cfg)
    updater = UPDATERS[cfg.algo]
    schedule = None

    csv_path = os.path.join(run_dir, "progress.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        fh.flush()
        for it in range(cfg.iterations):
            t0 = time.perf_counter()
            batch = collect(policy, env, cfg.samples_per_iteration, horizon,
                            master_seed=iteration_seed(cfg.seed, it))
            batch = compute_advantages(batch, cfg.baseline)
            h_current = mean_entropy(policy, batch.obs)

            beta_h = None
            if cfg.algo == "copos" and cfg.beta_mode == "auto":
                if schedule is None:
                    schedule = EntropySchedule(h0=h_current, horizon=cfg.iterations)
                beta_h = entropy_budget(schedule, it, h_current)

            if cfg.algo == "copos":
                policy, diag = updater(policy, batch, ucfg, beta_h=beta_h)
            else:
                policy, diag = updater(policy, batch, ucfg)

            elapsed_ms = 1000.0 * (time.perf_counter() - t0)
            row = {
                "iter": str(it),
                "mean_return": _fmt(batch.mean_episode_return()),
                "disc_return": _fmt(batch.mean_discounted_return()),
                "entropy": _fmt(h_current),
                "kl": _fmt(diag.get("realized_kl")),
                "eta": _fmt(diag.get("eta")),
                "omega": _fmt(diag.get("omega")),
                "linesearch_s": _fmt(diag.get("linesearch_s")),
                "grad_norm": _fmt(diag.get("grad_norm")),
                "w_norm": _fmt(diag.get("w_norm")),
                # left empty so re-runs stay byte-identical; timing goes to the log
                "wallclock_ms": "",
            }
            fh.write(",".join(row[c] for c in CSV_COLUMNS) + "\n")
            fh.flush()
            log.info("iter %d: disc_return=%s entropy=%s kl=%s (%.0f ms)",
                     it, row["disc_return"], row["entropy"], row["kl"], elapsed_ms)
            for warning in diag.get("warnings", []):
                log.warning("iter %d: %s", it, warning)

    save_policy(policy, os.path.join(run_dir, "policy_final.npz"))
    return run_dir


def random_policy_return(env_id, n_samples=20000, seed=0) -> float:
    """Mean discounted return of the uniform-random policy (baseline)."""
    env = make_env(env_id, seed=seed)

    class _Uniform:
        def sample(self, obs, rng):
            return int(rng.integers(env.action_count))

    batch = collect(_Uniform(), env, n_samples, env.horizon, master_seed=seed)
    return batch.mean_discounted_return()


def run_oracles(suite) -> dict:
    """Run one oracle suite (or 'all'); returns the machine-readable report."""
    if suite == "all":
        names = list(oracles.SUITES)
    elif suite in oracles.SUITES:
        names = [suite]
    else:
        raise ConfigError(f"unknown oracle suite {suite!r}; "
                          f"choose from {sorted(oracles.SUITES)} or 'all'")
    checks = []
    for name in names:
        checks.extend(oracles.SUITES[name]())
    report = {
        "suites": names,
        "checks": [c.as_dict() for c in checks],
        "passed": all(c.passed for c in checks),
    }
    return report


# -- toy presets --------------------------------------------------------------


def _write_series_csv(path, series):
    n = len(series["distance"])
    with open(path, "w", newline="") as fh:
        fh.write("iter,distance,reward,entropy,kl\n")
        for i in range(n):
            fh.write(f"{i},{series['distance'][i]:.12g},{series['reward'][i]:.12g},"
                     f"{series['entropy'][i]:.12g},{series['kl'][i]:.12g}\n")


def _vpg_toy_series(n_iters, alpha, n_samples, seed, kl_capped=None, epsilon=0.01):
    """Sampled vanilla-PG run on the bandit; optionally line-searched on KL."""
    from .envs import QuadraticBandit
    from .features import IdentityFeatureMap
    from .policies import kl as policy_kl

    env = QuadraticBandit()
    policy = NaturalGaussianPolicy(IdentityFeatureMap(1), U=np.array([[0.0]]),
                                   prec=np.array([1.0]))
    ucfg = UpdateConfig(algo="vpg", vpg_learning_rate=alpha)
    states = np.array([[1.0]])
    rows = {"distance": [], "reward": [], "entropy": [], "kl": []}
    prev = policy
    for it in range(n_iters + 1):
        mu = float(policy.mean(states)[0, 0])
        var = float(policy.cov[0, 0])
        rows["distance"].append(mu - env.optimum)
        rows["reward"].append(-0.5 * env.R_coef * (mu * mu + var) + env.r_coef * mu)
        rows["entropy"].append(policy.entropy())
        rows["kl"].append(0.0 if it == 0 else policy_kl(policy, prev, states))
        if it == n_iters:
            break
        batch = collect(policy, env, n_samples, 1,
                        master_seed=iteration_seed(seed, it))
        batch = compute_advantages(batch, "none")
        prev = policy
        try:
            if kl_capped is None:
                policy, _ = vpg_update(policy, batch, ucfg)
            else:
                # largest learning rate from a backtracking ladder obeying the bound
                from . import compat
                grad = compat.policy_gradient(policy, batch)
                lr = alpha
                for _ in range(40):
                    cand_vec = policy.param_vector() + lr * grad.g
                    try:
                        cand = policy.with_params(cand_vec)
                        if policy_kl(cand, policy, states) <= epsilon:
                            policy = cand
                            break
                    except ValueError:
                        pass
                    lr *= 0.5
        except ValueError:
            log.warning("vpg toy run became degenerate at iteration %d", it)
            break
    return {k: np.asarray(v) for k, v in rows.items()}


def run_toy_preset(preset, out_dir, seed=0, n_iters=200) -> str:
    """Emit the four-panel toy series as CSV files."""
    os.makedirs(out_dir, exist_ok=True)
    if preset == "fig1-top":
        ng = analysis.natural_gradient_iterates(1.0, 0.0, 1.0, 1.0, 10.0, n_iters)
        er = analysis.entropy_reg_iterates(1.0, 0.0, 1.0, 1.0, 10.0, 1.0, n_iters)
        _write_series_csv(os.path.join(out_dir, "natural_gradient.csv"),
                          analysis.toy_series(ng, 1.0, 1.0))
        _write_series_csv(os.path.join(out_dir, "entropy_regularized.csv"),
                          analysis.toy_series(er, 1.0, 1.0))
        _write_series_csv(os.path.join(out_dir, "policy_gradient.csv"),
                          _vpg_toy_series(n_iters, 1000.0, 1000, seed))
    elif preset == "fig1-bottom":
        for name, beta_mode, schedule_to_zero in (
                ("natural_gradient_tr", "none", False),
                ("entropy_fixed", "fixed", False),
                ("entropy_to_zero", "fixed", True)):
            series = _trust_region_toy_series(n_iters, beta_mode, schedule_to_zero)
            _write_series_csv(os.path.join(out_dir, f"{name}.csv"), series)
        _write_series_csv(os.path.join(out_dir, "policy_gradient.csv"),
                          _vpg_toy_series(n_iters, 1000.0, 1000, seed, kl_capped=True))
    else:
        raise ConfigError(f"unknown toy preset {preset!r}")
    return out_dir


def _trust_region_toy_series(n_iters, beta_mode, schedule_to_zero, epsilon=0.01):
    """Dual-solved multiplier toy runs with exact compatible advantages."""
    from . import compat
    from .envs import QuadraticBandit
    from .features import IdentityFeatureMap
    from .policies import kl as policy_kl
    from .rollout import batch_from_arrays

    env = QuadraticBandit()
    policy = NaturalGaussianPolicy(IdentityFeatureMap(1), U=np.array([[0.0]]),
                                   prec=np.array([1.0]))
    states = np.array([[1.0]])
    batch = batch_from_arrays(obs=states, actions=np.array([[0.0]]),
                              advantages=np.array([0.0]))
    h0 = policy.entropy()
    rows = {"distance": [], "reward": [], "entropy": [], "kl": []}
    prev = policy
    for it in range(n_iters + 1):
        mu = float(policy.mean(states)[0, 0])
        var = float(policy.cov[0, 0])
        rows["distance"].append(mu - env.optimum)
        rows["reward"].append(-0.5 * env.R_coef * (mu * mu + var) + env.r_coef * mu)
        rows["entropy"].append(policy.entropy())
        rows["kl"].append(0.0 if it == 0 else policy_kl(policy, prev, states))
        if it == n_iters:
            break
        w = np.array([env.R_coef, env.r_coef])
        sol = compat.partition_solution(
            policy, w, 0.0, compat.GradientEstimate(g=w.copy(), sample_count=1,
                                                    baseline_kind="none"))
        if beta_mode == "none":
            cfg = UpdateConfig(algo="copos", epsilon=epsilon, beta_mode="none")
            beta_h = None
        elif schedule_to_zero:
            target = h0 * (n_iters - (it + 1)) / n_iters
            beta_h = policy.entropy() - target
            cfg = UpdateConfig(algo="copos", epsilon=epsilon, beta_mode="fixed",
                               beta_value=beta_h)
        else:
            beta_h = 0.0
            cfg = UpdateConfig(algo="copos", epsilon=epsilon, beta_mode="fixed",
                               beta_value=0.0)
        prev = policy
        policy, _ = copos_update(policy, batch, cfg, beta_h=beta_h, solution=sol)
    return {k: np.asarray(v) for k, v in rows.items()}


def write_report(report, path=None) -> str:
    text = json.dumps(report, indent=2)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text
