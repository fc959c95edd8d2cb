"""Command-line orchestration: train, simulate, verify, report.

Configuration is strict JSON: unknown keys are rejected before any work
starts.  Every output file embeds the config hash, the seed, and the
package version.  Exit codes: 0 success, 1 configuration error,
2 verification failure, 3 I/O error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import ConfigError, RngStream
from .env import (
    DiscreteMixtureEnv,
    SurrogateDgpConfig,
    SyntheticDgpConfig,
    sample_task,
    symmetric_mixture_env,
)
from .seqmodel import ConstantModel, ExactMixtureModel, MlpSeqModel, load_model, save_model
from .training import (
    TrainConfig,
    build_historical_pool,
    enumerate_loss_gap,
    train,
)
from .agents import AGENT_VARIANTS, AgentConfig
from .evaluation import (
    ExperimentSettings,
    RegretTrace,
    run_experiment,
    enumerate_table_posterior,
    table_distribution_tv,
    tabular_policy_entropy,
    theorem_bound_report,
    sauer_shelah_bound,
    verify_entropy_vc,
)
from .generation import impute_task

logger = logging.getLogger("genban.cli")


class VerificationFailure(Exception):
    """A verify suite assertion exceeded its tolerance."""


# ---------------------------------------------------------------------------
# Strict config parsing
# ---------------------------------------------------------------------------


def _require_keys(block: dict, allowed: set[str], required: set[str], where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = required - set(block)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


def parse_env_block(block: dict):
    if not isinstance(block, dict) or "type" not in block:
        raise ConfigError("env block must be an object with a 'type' key")
    kind = block["type"]
    if kind == "synthetic" or kind == "surrogate":
        allowed = {
            "type", "horizon", "n_actions", "d_z", "d_x",
            "u_const_mean", "u_const_std", "u_coef_mean", "u_coef_std",
        }
        if kind == "surrogate":
            allowed |= {"d_z_raw"}
        _require_keys(block, allowed, {"type"}, f"env[{kind}]")
        kwargs = {k: v for k, v in block.items() if k != "type"}
        cls = SurrogateDgpConfig if kind == "surrogate" else SyntheticDgpConfig
        return cls(**kwargs)
    if kind == "discrete":
        allowed = {"type", "horizon", "weights", "theta", "n_actions", "z_reveals_component"}
        _require_keys(block, allowed, {"type", "theta"}, "env[discrete]")
        theta = np.asarray(block["theta"], dtype=np.float64)
        weights = block.get("weights")
        horizon = int(block.get("horizon", 100))
        reveal = bool(block.get("z_reveals_component", False))
        if theta.ndim == 2:
            n_actions = int(block.get("n_actions", 2))
            return symmetric_mixture_env(theta, n_actions, weights, horizon, reveal)
        if "n_actions" in block and int(block["n_actions"]) != theta.shape[2]:
            raise ConfigError("n_actions disagrees with theta's third dimension")
        return DiscreteMixtureEnv(theta, weights, horizon, reveal)
    raise ConfigError(f"unknown env type {kind!r}")


def parse_agent_block(block: dict) -> AgentConfig:
    allowed = {
        "variant", "name", "model_path", "epsilon", "temperature", "linucb_alpha",
        "linear_ts_noise_var", "policy_class", "criterion", "dump_imputations",
    }
    _require_keys(block, allowed, {"variant"}, "agent")
    if block["variant"] not in AGENT_VARIANTS:
        raise ConfigError(f"unknown agent variant {block['variant']!r}")
    kwargs = {k: v for k, v in block.items() if k not in ("model_path",)}
    return AgentConfig(**kwargs)


def load_config(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(canon).hexdigest()[:16]


def _provenance(cfg_digest: str, seed: int) -> dict:
    return {"genban_version": __version__, "config_hash": cfg_digest, "seed": seed}


def _provenance_comment(cfg_digest: str, seed: int) -> str:
    return f"# genban_version={__version__} config_hash={cfg_digest} seed={seed}"


def _format(value) -> str:
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _write_csv(path: Path, header: list[str], rows, cfg_digest: str, seed: int) -> None:
    lines = [_provenance_comment(cfg_digest, seed), ",".join(header)]
    for row in rows:
        lines.append(",".join(_format(v) for v in row))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    allowed = {"seed", "out_dir", "env", "pool", "model", "train"}
    _require_keys(cfg, allowed, {"seed", "out_dir", "env", "pool"}, "train config")
    seed = int(args.seed if args.seed is not None else cfg["seed"])
    out_dir = Path(args.out or cfg["out_dir"])
    env = parse_env_block(cfg["env"])
    if isinstance(env, DiscreteMixtureEnv):
        raise ConfigError("training pools require a logistic-link environment")

    pool_block = cfg["pool"]
    _require_keys(
        pool_block,
        {"train_arms", "validation_arms", "pairs_per_arm"},
        {"train_arms", "validation_arms"},
        "pool",
    )
    pairs = int(pool_block.get("pairs_per_arm", 1000))

    model_block = cfg.get("model", {})
    _require_keys(model_block, {"hidden", "ridge_eps", "count_scale"}, set(), "model")
    train_block = cfg.get("train", {})
    _require_keys(
        train_block,
        {"epochs", "batch_size", "learning_rates", "weight_decay", "sequence_length",
         "permute_tuples", "validation_size"},
        set(),
        "train",
    )
    tc_kwargs = dict(train_block)
    if "learning_rates" in tc_kwargs:
        tc_kwargs["learning_rates"] = tuple(tc_kwargs["learning_rates"])
    train_cfg = TrainConfig(**tc_kwargs)

    rng = RngStream(seed, 0, "train")
    d_z = env.d_z_raw if isinstance(env, SurrogateDgpConfig) else env.d_z
    model = MlpSeqModel.initialize(
        d_z,
        env.d_x,
        rng.substream("init"),
        hidden=tuple(model_block.get("hidden", (100, 100, 100))),
        ridge_eps=float(model_block.get("ridge_eps", 1.0)),
        count_scale=float(model_block.get("count_scale", 500.0)),
    )
    logger.info("building pools: %s train arms, %s validation arms",
                pool_block["train_arms"], pool_block["validation_arms"])
    train_pool = build_historical_pool(env, int(pool_block["train_arms"]), pairs,
                                       rng.substream("train-pool"))
    val_pool = build_historical_pool(env, int(pool_block["validation_arms"]), pairs,
                                     rng.substream("validation-pool"))
    result = train(model, train_pool, val_pool, train_cfg, rng.substream("sgd"))

    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    meta = _provenance(digest, seed)
    meta.update({
        "selected_lr": result.selected_lr,
        "selected_epoch": result.selected_epoch,
        "best_val_nll": result.best_val_nll,
    })
    save_model(result.model, out_dir / "model.json", meta)
    _write_csv(
        out_dir / "loss_curves.csv",
        ["lr", "epoch", "split", "nll", "se"],
        ((r.lr, r.epoch, r.split, r.nll, r.se) for r in result.curves),
        digest,
        seed,
    )
    print(f"model written to {out_dir / 'model.json'} "
          f"(lr={result.selected_lr}, epoch={result.selected_epoch}, "
          f"val_nll={result.best_val_nll:.6f})")
    return 0


# ---------------------------------------------------------------------------
# simulate
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = load_config(args.config)
    allowed = {"seed", "out_dir", "env", "horizon", "n_tasks", "context_mode", "oracle",
               "agents"}
    _require_keys(cfg, allowed, {"seed", "out_dir", "env", "n_tasks", "agents"},
                  "simulate config")
    seed = int(args.seed if args.seed is not None else cfg["seed"])
    out_dir = Path(args.out or cfg["out_dir"])
    env = parse_env_block(cfg["env"])
    horizon = int(cfg.get("horizon", env.horizon))
    n_tasks = int(cfg["n_tasks"])
    context_mode = cfg.get("context_mode", "fixed")
    oracle_block = cfg.get("oracle", {})
    _require_keys(oracle_block, {"policy_class", "criterion"}, set(), "oracle")
    oracle_class = oracle_block.get("policy_class", "tabular")
    oracle_criterion = oracle_block.get("criterion", "per_arm_reward_regression")

    traces: list[RegretTrace] = []
    summary = {"provenance": _provenance(config_hash(cfg), seed), "agents": {}}
    for block in cfg["agents"]:
        agent_cfg = parse_agent_block(block)
        model = None
        if agent_cfg.variant in ("ts_gen", "greedy", "epsilon_greedy", "softmax"):
            if "model_path" not in block:
                if not isinstance(env, DiscreteMixtureEnv):
                    raise ConfigError(
                        f"agent {agent_cfg.label!r} needs model_path (or a discrete env "
                        "for the exact model)"
                    )
                model = ExactMixtureModel(env)
            else:
                model_path = Path(block["model_path"])
                if not model_path.exists():
                    raise FileNotFoundError(f"model file {model_path} does not exist")
                model = load_model(model_path)
        settings = ExperimentSettings(
            env_config=env,
            agent_config=agent_cfg,
            seed=seed,
            horizon=horizon,
            context_mode=context_mode,
            oracle_policy_class=oracle_class,
            oracle_criterion=oracle_criterion,
            model_payload=model,
        )
        logger.info("simulating agent %s over %d tasks", agent_cfg.label, n_tasks)
        trace = run_experiment(settings, n_tasks, n_workers=args.threads)
        traces.append(trace)
        regret, regret_se = trace.per_period_regret()
        final, final_se = trace.final_cumulative()
        summary["agents"][agent_cfg.label] = {
            "per_period_regret": regret,
            "per_period_regret_se": regret_se,
            "final_cumulative_regret": final,
            "final_cumulative_regret_se": final_se,
            "n_tasks": n_tasks,
            "horizon": horizon,
        }

    out_dir.mkdir(parents=True, exist_ok=True)
    digest = config_hash(cfg)
    rows = (row for trace in traces for row in trace.csv_rows())
    _write_csv(
        out_dir / "trace.csv",
        ["task_id", "timestep", "agent", "oracle_reward", "realized_reward", "cum_regret"],
        rows,
        digest,
        seed,
    )
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=1) + "\n", encoding="utf-8"
    )
    for label, stats in summary["agents"].items():
        print(f"{label}: final cumulative regret "
              f"{stats['final_cumulative_regret']:.4f} "
              f"± {stats['final_cumulative_regret_se']:.4f}")
    return 0


# ---------------------------------------------------------------------------
# verify
# ---------------------------------------------------------------------------


def _verify_line(ok: bool, text: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}: {text}")
    return ok


def _suite_lossdecomp(seed: int) -> bool:
    env = symmetric_mixture_env([[0.2, 0.7], [0.8, 0.4]], n_actions=2, horizon=4)
    wrong_prior = symmetric_mixture_env([[0.2, 0.7], [0.8, 0.4]], n_actions=2,
                                        weights=[0.9, 0.1], horizon=4)
    wrong_theta = symmetric_mixture_env([[0.35, 0.55], [0.6, 0.3]], n_actions=2, horizon=4)
    models = {
        "constant_half": ConstantModel(0.5),
        "mixture_wrong_prior": ExactMixtureModel(wrong_prior),
        "mixture_wrong_table": ExactMixtureModel(wrong_theta),
    }
    ok = True
    for name, model in models.items():
        report = enumerate_loss_gap(env, model, horizon=4)
        diff = abs(report.gap - env.n_actions * report.kl_mean)
        ok &= _verify_line(
            diff < 1e-6,
            f"lossdecomp[{name}]: |gap - n_actions * mean_kl| = {diff:.3e} < 1e-6",
        )
        ok &= _verify_line(report.gap >= -1e-12,
                           f"lossdecomp[{name}]: gap = {report.gap:.6f} >= 0")
    return ok


def _verify_histories(env: DiscreteMixtureEnv, horizon: int, seed: int):
    """A handful of distinct histories reached by playing scripted actions."""
    from .core import History

    rng = RngStream(seed, 0, "verify-posterior")
    task = sample_task(env, rng)
    histories = []
    scripts = [[], [0], [1], [0, 1], [0, 0]]
    for script in scripts:
        h = History(task.prior_info)
        for t, a in enumerate(script):
            x = task.contexts[t]
            h = h.with_context(x).append(x, a, task.outcomes[t, a])
        if len(script) < horizon:
            h = h.with_context(task.contexts[len(script)])
        histories.append(h)
    return task, histories


def _suite_posterior(seed: int, n_samples: int = 100_000, tol: float = 0.02) -> bool:
    env = DiscreteMixtureEnv(
        theta=[[[0.2, 0.6], [0.7, 0.3]], [[0.8, 0.35], [0.25, 0.75]]],
        weights=[0.5, 0.5],
        horizon=3,
    )
    model = ExactMixtureModel(env)
    model.supports_bulk_sampling = False  # exercise the sequential chain
    task, histories = _verify_histories(env, 3, seed)
    ok = True
    for i, h in enumerate(histories):
        tv = imputation_tv_vs_posterior(env, model, h, task.contexts, n_samples,
                                        seed=seed + i, n_workers=os.cpu_count() or 1)
        ok &= _verify_line(tv < tol, f"posterior[h{i}]: TV = {tv:.4f} < {tol}")
    return ok


def _suite_vc(seed: int) -> bool:
    ok = True
    cap = int(round(np.exp(sauer_shelah_bound(3, 10))))
    for s in range(20):
        rng = RngStream(seed, s, "vc")
        points = rng.generator.standard_normal((10, 2))
        report = verify_entropy_vc(points)
        ok &= report.ok
        if not report.ok:
            _verify_line(False, f"vc[seed {s}]: {report.labeling_count} labelings > {cap}")
    ok &= _verify_line(ok, f"vc: 20 random 10-point sets all within {cap} labelings")
    return ok


def _suite_bound(seed: int) -> bool:
    env = symmetric_mixture_env([[0.25, 0.65], [0.7, 0.35]], n_actions=2, horizon=100)
    settings = ExperimentSettings(
        env_config=env,
        agent_config=AgentConfig(variant="ts_gen", policy_class="tabular", name="ts_gen"),
        seed=seed,
        horizon=100,
        oracle_policy_class="tabular",
        model_payload=ExactMixtureModel(env),
    )
    trace = run_experiment(settings, n_tasks=200, n_workers=os.cpu_count() or 1)
    entropy = tabular_policy_entropy(env, 100)
    report = theorem_bound_report(entropy, env.n_actions, 100, 0.0, trace)
    return _verify_line(
        report.satisfied(3.0),
        f"bound: regret {report.empirical_regret:.4f} <= {report.bound:.4f} "
        f"+ 3 x {report.regret_se:.4f}",
    )


VERIFY_SUITES = {
    "lossdecomp": _suite_lossdecomp,
    "posterior": _suite_posterior,
    "vc": _suite_vc,
    "bound": _suite_bound,
}


def cmd_verify(args) -> int:
    suites = list(VERIFY_SUITES) if args.suite == "all" else [args.suite]
    ok = True
    for name in suites:
        ok &= VERIFY_SUITES[name](args.seed if args.seed is not None else 20240 + len(name))
    if not ok:
        raise VerificationFailure("one or more verify assertions failed")
    return 0


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _read_trace_csv(path: Path):
    lines = path.read_text(encoding="utf-8").splitlines()
    rows = [line for line in lines if line and not line.startswith("#")]
    header = rows[0].split(",")
    expected = ["task_id", "timestep", "agent", "oracle_reward", "realized_reward",
                "cum_regret"]
    if header != expected:
        raise ConfigError(f"{path} does not follow the trace schema")
    out = []
    for line in rows[1:]:
        task_id, timestep, agent, orc, rea, cum = line.split(",")
        out.append((int(task_id), int(timestep), agent, float(orc), float(rea), float(cum)))
    return out


def cmd_report(args) -> int:
    stats: dict[str, dict[int, list[float]]] = {}
    horizons: dict[str, int] = {}
    for path in args.traces:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"trace file {path} does not exist")
        for task_id, timestep, agent, orc, rea, cum in _read_trace_csv(p):
            per_task = stats.setdefault(agent, {})
            horizons[agent] = max(horizons.get(agent, 0), timestep + 1)
            per_task.setdefault(task_id, []).append((timestep, orc - rea))
    summary = {}
    for agent, per_task in stats.items():
        finals = []
        for steps in per_task.values():
            steps.sort()
            finals.append(sum(d for _, d in steps))
        finals = np.asarray(finals)
        se = float(finals.std(ddof=1) / np.sqrt(len(finals))) if len(finals) > 1 else 0.0
        summary[agent] = {
            "n_tasks": len(finals),
            "final_cumulative_regret": float(finals.mean()),
            "final_cumulative_regret_se": se,
            "per_period_regret": float(finals.mean()) / horizons[agent],
        }
        print(f"{agent}: tasks={len(finals)} final regret {finals.mean():.4f} ± {se:.4f}")
    if args.out:
        Path(args.out).write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n",
                                  encoding="utf-8")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures to the config exit code
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="genban", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="train a sequence model offline")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None)
    p_train.set_defaults(func=cmd_train)

    p_sim = sub.add_parser("simulate", help="run bandit simulations and emit traces")
    p_sim.add_argument("--config", required=True)
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--out", default=None)
    p_sim.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p_sim.set_defaults(func=cmd_simulate)

    p_verify = sub.add_parser("verify", help="run the theory verification suites")
    p_verify.add_argument("suite", choices=[*VERIFY_SUITES, "all"])
    p_verify.add_argument("--seed", type=int, default=None)
    p_verify.set_defaults(func=cmd_verify)

    p_report = sub.add_parser("report", help="aggregate one or more trace CSVs")
    p_report.add_argument("traces", nargs="+")
    p_report.add_argument("--out", default=None)
    p_report.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("GENBAN_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(name)s %(levelname)s %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except VerificationFailure as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
