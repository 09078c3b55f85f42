"""Command-line entry point.

Every subcommand reads one JSON config (``--config``) and is a pure function
of that config, its input files and the master seed. Floats in CSV outputs
are printed with six decimals.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .baselines import RrConfig, correlation_defend, rr_defend
from .classify import (
    LinearSoftmaxModel,
    TrainConfig,
    accuracy,
    load_model,
    predict,
    save_model,
    train_linear,
    train_mlp,
)
from .core import SeedSpec, l0_norm, l2_norm, read_dataset, synth_generate, write_dataset
from .evade import PandaConfig, fgsm, jsma, panda
from .evaluation import (
    DefenseRecord,
    ExperimentConfig,
    MfConfig,
    build_experiment,
    defend_dataset,
    defend_dataset_with,
    parallel_map,
    recsys_precision,
    relative_precision_loss,
    sweep_budget,
    write_records_csv,
)
from .gametheory import brute_force_game, load_instance, solve_game_lp, write_solution
from .mechanism import target_empirical, target_uniform

COMMANDS = ("gen-data", "train", "defend", "attack", "sweep", "compare-evasion", "game-lp", "recsys-eval")


class ConfigError(ValueError):
    pass


def _require(cfg: dict, *keys):
    missing = [k for k in keys if k not in cfg]
    if missing:
        raise ConfigError(f"config is missing required keys: {', '.join(missing)}")


def _resolve(base: Path, value) -> Path:
    path = Path(value)
    return path if path.is_absolute() else base / path


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _panda_cfg(cfg: dict) -> PandaConfig:
    return PandaConfig(tau=float(cfg.get("tau", 1.0)), max_iters=int(cfg.get("max_iters", 100)),
                       policy=cfg.get("policy", "modify_add"))


def _train_cfg(cfg: dict, kind: str) -> TrainConfig:
    base = ExperimentConfig().linear if kind == "linear" else ExperimentConfig().mlp
    fields = {k: cfg[k] for k in ("epochs", "batch_size", "learning_rate", "l2_penalty") if k in cfg}
    return replace(base, **fields)


def _experiment_cfg(cfg: dict) -> ExperimentConfig:
    exp = ExperimentConfig(
        alpha=float(cfg.get("alpha", 0.0)),
        test_fraction=float(cfg.get("test_fraction", 1 / 6)),
        max_test=int(cfg.get("max_test", 1000)),
        defender=cfg.get("defender", "linear"),
        attacks=tuple(cfg.get("attackers", ("BA-A", "LR-A", "NN-A"))),
        hidden=int(cfg.get("hidden", 64)),
        target=cfg.get("target", "empirical"),
    )
    train = cfg.get("train", {})
    return replace(exp, linear=_train_cfg(train.get("linear", {}), "linear"),
                   mlp=_train_cfg(train.get("mlp", {}), "mlp"))


def _dataset(cfg: dict, base: Path, seed: SeedSpec):
    """Load ``data`` or generate from an inline ``synthetic`` block."""
    if "data" in cfg:
        return read_dataset(_resolve(base, cfg["data"]))
    if "synthetic" in cfg:
        return _generate(cfg["synthetic"], seed)
    raise ConfigError("config needs either 'data' or 'synthetic'")


def _generate(gen: dict, seed: SeedSpec):
    _require(gen, "d", "m", "n")
    return synth_generate(int(gen["d"]), int(gen["m"]), int(gen["n"]), float(gen.get("sparsity", 10)),
                          float(gen.get("signal", 0.8)), seed.derive("synth"),
                          popularity_skew=float(gen.get("popularity_skew", 1.0)),
                          affinity=float(gen.get("affinity", 1.0)))


def _target(kind: str, ds, m: int):
    if kind == "uniform":
        return target_uniform(m)
    if kind == "empirical":
        labels = ds.labels[ds.labels >= 0]
        return target_empirical(labels, m)
    raise ConfigError("target must be 'uniform' or 'empirical'")


# -- subcommands ------------------------------------------------------------------

def cmd_gen_data(cfg, args, base, seed, threads):
    ds = _generate(cfg, seed)
    write_dataset(ds, args.out)
    print(f"wrote {ds.n} users to {args.out}")


def cmd_train(cfg, args, base, seed, threads):
    _require(cfg, "data")
    ds = read_dataset(_resolve(base, cfg["data"]))
    kind = cfg.get("kind", "linear")
    tc = replace(_train_cfg(cfg, kind), seed=int(seed.rng("", "train").integers(2**31)))
    if kind == "linear":
        model = train_linear(ds, tc)
    elif kind == "mlp":
        model = train_mlp(ds, tc, int(cfg.get("hidden", 64)))
    else:
        raise ConfigError("kind must be 'linear' or 'mlp'")
    save_model(model, args.out)
    print(f"{kind} model, training accuracy {accuracy(model, ds):.6f}")


def _sidecar(out: Path) -> Path:
    return out.with_name(out.name + ".csv")


def cmd_defend(cfg, args, base, seed, threads):
    _require(cfg, "model", "data")
    model = load_model(_resolve(base, cfg["model"]))
    ds = read_dataset(_resolve(base, cfg["data"]))
    if model.d != ds.d:
        raise ConfigError("model and data dimensions differ")
    method = cfg.get("method", "attriguard")
    out = Path(args.out)
    if method == "attriguard":
        _require(cfg, "beta")
        pc = _panda_cfg(cfg)
        p = _target(cfg.get("target", "uniform"), ds, model.m)
        noisy, recs = defend_dataset(model, ds, p, float(cfg["beta"]), pc, seed, threads)
    elif method in ("rr", "correlation"):
        if method == "rr":
            _require(cfg, "epsilon")
            rr = RrConfig(float(cfg["epsilon"]), ds.grid)
            fn = lambda x, s, rng: rr_defend(x, rr, rng)  # noqa: E731
        else:
            _require(cfg, "k")
            if not isinstance(model, LinearSoftmaxModel):
                raise ConfigError("the correlation defense needs a linear model")
            k = int(cfg["k"])
            fn = lambda x, s, rng: correlation_defend(  # noqa: E731
                x, s if s >= 0 else predict(model, x), k, model, ds.grid)
        noisy = defend_dataset_with(fn, ds, seed, method, threads)
        recs = []
        for uid, x0, x1 in zip(ds.user_ids, ds.X, noisy.X):
            r = x1 - x0
            recs.append(DefenseRecord(uid, int(predict(model, x1)), l0_norm(r), l2_norm(r), False, math.nan, math.nan))
    else:
        raise ConfigError("method must be 'attriguard', 'rr' or 'correlation'")
    write_dataset(noisy, out)
    write_records_csv(_sidecar(out), recs, method=method)
    print(f"defended {noisy.n} users with {method}; records in {_sidecar(out)}")


def cmd_attack(cfg, args, base, seed, threads):
    _require(cfg, "data", "attackers")
    ds = read_dataset(_resolve(base, cfg["data"]))
    ds.require_labels()
    rows = []
    for name, path in sorted(cfg["attackers"].items()):
        model = load_model(_resolve(base, path))
        rows.append([name, _fmt(accuracy(model, ds))])
    _write_rows(args.out, ["attack", "accuracy"], rows)


def cmd_sweep(cfg, args, base, seed, threads):
    _require(cfg, "betas")
    ds = _dataset(cfg, base, seed)
    exp = build_experiment(ds, _experiment_cfg(cfg), seed)
    res = sweep_budget(exp.defender, exp.attackers, exp.test, cfg["betas"], cfg.get("policy", "modify_add"),
                       exp.p, seed, _panda_cfg(cfg), threads)
    Path(args.out).write_text(res.to_csv(), encoding="utf-8")


def cmd_compare_evasion(cfg, args, base, seed, threads):
    _require(cfg, "model", "data")
    model = load_model(_resolve(base, cfg["model"]))
    ds = read_dataset(_resolve(base, cfg["data"]))
    pc = _panda_cfg(cfg)
    eps = float(cfg.get("fgsm_epsilon", 1.0))
    rows_ds = ds.subset(range(min(ds.n, int(cfg.get("max_users", ds.n)))))
    pairs = [(u, t) for u in range(rows_ds.n) for t in range(model.m) if t != predict(model, rows_ds.X[u])]

    def one(pair):
        u, t = pair
        trace = []
        x = rows_ds.X[u]
        return (panda(model, x, t, pc, trace), jsma(model, x, t, pc), fgsm(model, x, t, eps, pc.grid), trace)

    results = parallel_map(one, pairs, threads)
    rows = []
    for k, name in enumerate(("PANDA", "JSMA", "FGSM")):
        got = [r[k] for r in results]
        succ = np.mean([g.success for g in got]) if got else 0.0
        l0 = np.mean([g.l0_cost for g in got]) if got else 0.0
        rows.append([name, _fmt(succ), _fmt(l0)])
    _write_rows(args.out, ["method", "success_rate", "mean_l0"], rows)
    if args.trace:
        trace_rows = []
        for (u, t), res in zip(pairs, results):
            for it, idx, direction, marg in res[3]:
                trace_rows.append([rows_ds.user_ids[u], t, it, idx, direction, _fmt(marg)])
        _write_rows(args.trace, ["user_id", "target", "iteration", "index", "direction", "margin"], trace_rows)


def cmd_game_lp(cfg, args, base, seed, threads):
    # either a pointer to an instance file or the instance itself
    if "instance" in cfg:
        inst = load_instance(_resolve(base, cfg["instance"]))
    else:
        _require(cfg, "S", "X", "joint", "beta")
        inst = load_instance(args.config)
    f, obj = solve_game_lp(inst["joint"], inst["d_p"], inst["d_q"], inst["beta"])
    write_solution(args.out, f, obj)
    msg = f"objective {obj:.6f}"
    if cfg.get("brute_force") and inst["joint"].shape[1] == 2:
        _, bf = brute_force_game(inst["joint"], inst["d_p"], inst["d_q"], inst["beta"], float(cfg.get("step", 0.01)))
        msg += f", brute force {bf:.6f}"
    print(msg)


def cmd_recsys_eval(cfg, args, base, seed, threads):
    ds = _dataset(cfg, base, seed)
    N = int(cfg.get("N", 10))
    rank = int(cfg.get("rank", 10))
    mf = MfConfig(**cfg.get("mf", {}))
    exp = build_experiment(ds, _experiment_cfg(cfg), seed)
    test = exp.test
    hold_seed = int(seed.rng("", "holdout").integers(2**31))
    pc = _panda_cfg(cfg)
    rows = []
    pre1 = None

    def run(label, publish):
        nonlocal pre1
        pre1, pre2 = recsys_precision(test.X, publish, N, rank, mf, hold_seed)
        rows.append([label, N, _fmt(pre2), _fmt(relative_precision_loss(pre1, pre2))])

    for beta in cfg.get("betas", []):
        run(f"attriguard:beta={float(beta):g}",
            lambda T, b=float(beta): defend_dataset(exp.defender, test.with_X(T), exp.p, b, pc, seed, threads)[0].X)
    for eps in cfg.get("rr_epsilons", []):
        rr = RrConfig(float(eps), ds.grid)
        run(f"rr:epsilon={float(eps):g}",
            lambda T, rr=rr: defend_dataset_with(lambda x, s, rng: rr_defend(x, rr, rng), test.with_X(T),
                                                 seed, "rr", threads).X)
    if pre1 is None:
        raise ConfigError("recsys-eval needs 'betas' and/or 'rr_epsilons'")
    rows.insert(0, ["clean", N, _fmt(pre1), _fmt(0.0)])
    _write_rows(args.out, ["method", "N", "precision", "relative_loss"], rows)


HANDLERS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "defend": cmd_defend,
    "attack": cmd_attack,
    "sweep": cmd_sweep,
    "compare-evasion": cmd_compare_evasion,
    "game-lp": cmd_game_lp,
    "recsys-eval": cmd_recsys_eval,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="attrishield", description="Attribute-inference defense toolkit")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="JSON config file")
        sp.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        sp.add_argument("--out", required=True, help="output path")
        sp.add_argument("--threads", type=int, default=None, help="worker threads (default: $ATTRISHIELD_THREADS or 1)")
        if name == "compare-evasion":
            sp.add_argument("--trace", default=None, help="write the PANDA search trace as CSV")
    return parser


def _threads(args) -> int:
    if args.threads is not None:
        n = args.threads
    else:
        env = os.environ.get("ATTRISHIELD_THREADS", "1")
        try:
            n = int(env)
        except ValueError:
            raise ConfigError(f"ATTRISHIELD_THREADS must be an integer, got {env!r}")
    if n < 1:
        raise ConfigError("threads must be >= 1")
    return n


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        config_path = Path(args.config)
        with open(config_path, encoding="utf-8") as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
        seed_value = args.seed if args.seed is not None else cfg.get("seed", 0)
        seed = SeedSpec(int(seed_value))
        threads = _threads(args)
        HANDLERS[args.command](cfg, args, config_path.parent, seed, threads)
    except (ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"attrishield {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
