"""Command-line front end: synth / train / align / backtest / report.

Experiments are driven by an INI config file; command-line flags override
config values and the effective config is snapshot into the output directory.
Every command that takes --seed is bit-reproducible with --threads 1.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import backtest as bt
from . import embeddings as emb
from . import model as mdl
from . import panel as pnl
from . import synthetic as syn
from . import training as trn

OUTPUT_ROOT_ENV = "LOCALGLOBAL_OUT"


class ConfigError(Exception):
    pass


def _load_config(path: str | None) -> configparser.ConfigParser:
    cfg = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise ConfigError(f"config file not found: {path}")
        cfg.read(path)
    return cfg


def _get(cfg, section, key, default=None, cast=str):
    if cfg.has_option(section, key):
        raw = cfg.get(section, key)
        try:
            return cast(raw)
        except ValueError:
            raise ConfigError(f"[{section}] {key}: cannot parse {raw!r}")
    if default is None:
        raise ConfigError(f"missing required config value [{section}] {key}")
    return default


def _require_path(cfg, section, key) -> Path:
    p = Path(_get(cfg, section, key))
    if not p.is_file():
        raise ConfigError(f"[{section}] {key}: path not found: {p}")
    return p


def _out_dir(args, cfg) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    if cfg.has_option("paths", "output"):
        return Path(cfg.get("paths", "output"))
    return Path(os.environ.get(OUTPUT_ROOT_ENV, "out"))


def _snapshot(cfg: configparser.ConfigParser, out: Path) -> None:
    with open(out / "config_snapshot.ini", "w", encoding="utf-8") as fh:
        cfg.write(fh)


def _override(cfg, section, key, value):
    if value is not None:
        if not cfg.has_section(section):
            cfg.add_section(section)
        cfg.set(section, key, str(value))


def _load_panels(cfg):
    fpath = _require_path(cfg, "paths", "features")
    rpath = _require_path(cfg, "paths", "returns")
    return pnl.load_panel(fpath, rpath)


def _split_days(cfg, calendar) -> tuple[list[int], list[int]]:
    train_end = _get(cfg, "split", "train_end")
    test_start = _get(cfg, "split", "test_start")
    if not train_end < test_start:
        raise ConfigError(f"split: train_end {train_end!r} must precede test_start {test_start!r}")
    train = [t for t, d in enumerate(calendar.dates) if d <= train_end]
    test = [t for t, d in enumerate(calendar.dates) if d >= test_start]
    if not train or not test:
        raise ConfigError("split leaves an empty train or test set")
    return train, test


def _subset(fpanel, rpanel, days):
    cal = pnl.TradingCalendar(tuple(fpanel.calendar.dates[t] for t in days))
    fp = pnl.FeaturePanel(cal, [fpanel.stock_ids[t] for t in days],
                          [fpanel.features[t] for t in days], fpanel.m)
    rp = pnl.ReturnPanel(cal, rpanel.horizon, [rpanel.stock_ids[t] for t in days],
                         [rpanel.returns[t] for t in days])
    return fp, rp


def _model_spec(cfg, m_from_data: int):
    variant = _get(cfg, "model", "variant", "lg_stock")
    if variant not in mdl.VARIANTS:
        raise ConfigError(f"[model] variant must be one of {mdl.VARIANTS}, got {variant!r}")
    m = _get(cfg, "model", "m", m_from_data, int)
    if m != m_from_data:
        raise ConfigError(f"[model] m={m} does not match data feature count {m_from_data}")
    return {
        "variant": variant,
        "m": m,
        "hidden": _get(cfg, "model", "hidden", 36, int),
        "D": _get(cfg, "model", "d", 36, int),
        "d_llm": _get(cfg, "model", "d_llm", 4096, int),
        "seed": _get(cfg, "model", "seed", 0, int),
        "mask_mode": _get(cfg, "model", "mask_mode", "feature"),
    }


def _scrl_config(cfg) -> trn.ScrlConfig:
    return trn.ScrlConfig(
        theta=_get(cfg, "scrl", "theta", 0.1, float),
        steps_per_rollout=_get(cfg, "scrl", "steps_per_rollout", 2048, int),
        batch_size=_get(cfg, "scrl", "batch_size", 128, int),
        learning_rate=_get(cfg, "scrl", "learning_rate", 0.00025, float),
        reward_scale=_get(cfg, "scrl", "reward_scale", 1e-4, float),
        clip_epsilon=_get(cfg, "scrl", "clip_epsilon", 0.2, float),
        ppo_epochs=_get(cfg, "scrl", "ppo_epochs", 4, int),
        reward_kind=_get(cfg, "scrl", "reward_kind", "neg_mse"),
        seed=_get(cfg, "scrl", "seed", 0, int),
        rollouts=_get(cfg, "scrl", "rollouts", 1, int),
    )


# --- subcommands ---

def cmd_synth(args) -> int:
    if min(args.stocks, args.features, args.factors, args.dllm, args.days) < 1:
        raise ConfigError("all synth sizes must be >= 1")
    if args.factors > args.features:
        raise ConfigError("--factors must be <= --features")
    out = Path(args.out or os.environ.get(OUTPUT_ROOT_ENV, "out"))
    fpanel, rpanel, series, truth = syn.generate_synthetic(
        args.seed, args.stocks, args.features, args.factors, args.dllm,
        args.days, args.noise)
    out.mkdir(parents=True, exist_ok=True)
    pnl.save_panel(fpanel, rpanel, out / "features.csv", out / "returns.csv")
    emb.save_embeddings(series, out / "embeddings.jsonl")
    syn.save_truth(truth, out / "truth.json")
    print(f"wrote synthetic instance (seed={args.seed}) to {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    _override(cfg, "model", "seed", args.seed)
    fpanel, rpanel = _load_panels(cfg)
    spec = _model_spec(cfg, fpanel.m)
    if spec["variant"] not in ("local", "lg_stock", "lg_llm"):
        raise ConfigError(f"train supports supervised variants, not {spec['variant']!r}")
    series = None
    if spec["variant"] == "lg_llm":
        if not cfg.has_option("paths", "embeddings"):
            raise ConfigError("missing required config value [paths] embeddings "
                              "(variant lg_llm needs an embedding file)")
        series = emb.load_embeddings(_require_path(cfg, "paths", "embeddings"),
                                     calendar=fpanel.calendar)
        if series.d_llm != spec["d_llm"]:
            raise ConfigError(f"[model] d_llm={spec['d_llm']} != embedding dim {series.d_llm}")
    train_days, _ = _split_days(cfg, fpanel.calendar)
    sup = trn.SupervisedConfig(
        epochs=_get(cfg, "supervised", "epochs", 100, int),
        batch_days=_get(cfg, "supervised", "batch_days", 32, int),
        learning_rate=_get(cfg, "supervised", "learning_rate", 1e-3, float),
        seed=_get(cfg, "supervised", "seed", 0, int),
    )
    out = _out_dir(args, cfg)

    tf, tr = _subset(fpanel, rpanel, train_days)
    tser = None
    if series is not None:
        tser = emb.EmbeddingSeries(tf.calendar, series.d_llm,
                                   np.array([series.vectors[t] for t in train_days]),
                                   series.provenance)
    params = mdl.init_params(spec["m"], spec["hidden"], spec["D"], spec["d_llm"],
                             spec["variant"], spec["seed"], spec["mask_mode"])
    try:
        params, losses = trn.train_critic(tf, tr, params, sup, embeddings=tser)
    except trn.TrainingError as exc:
        print(f"training diverged: {exc}", file=sys.stderr)
        return 1
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(cfg, out)
    mdl.save_checkpoint(params, out / f"critic_{spec['variant']}.ckpt")
    with open(out / "train_loss.csv", "w", encoding="utf-8") as fh:
        fh.write("epoch,mse\n")
        for e, loss in enumerate(losses):
            fh.write(f"{e},{loss!r}\n")
    print(f"trained {spec['variant']} critic: mse {losses[0]:.3e} -> {losses[-1]:.3e}")
    return 0


def cmd_align(args) -> int:
    cfg = _load_config(args.config)
    for key, val in (("theta", args.theta), ("seed", args.seed)):
        _override(cfg, "scrl", key, val)
    fpanel, rpanel = _load_panels(cfg)
    critic_path = _require_path(cfg, "paths", "critic_checkpoint")
    epath = _require_path(cfg, "paths", "embeddings")
    critic = mdl.load_checkpoint(critic_path)
    if critic.variant != "lg_stock":
        raise ConfigError(f"critic checkpoint must be variant lg_stock, got {critic.variant!r}")
    scfg = _scrl_config(cfg)
    rounds = args.rounds if args.rounds is not None else _get(cfg, "scrl", "rounds", 1, int)
    train_days, _ = _split_days(cfg, fpanel.calendar)
    # last 20% of train days validate the alignment without touching the test set
    cut = max(1, int(len(train_days) * 0.8))
    tf, tr = _subset(fpanel, rpanel, train_days[:cut])
    vf, vr = _subset(fpanel, rpanel, train_days[cut:] or train_days[-1:])
    out = _out_dir(args, cfg)

    actor, reference = trn.init_actor(critic, critic.d_llm, scfg.seed)

    def loader():
        return emb.load_embeddings(epath, calendar=fpanel.calendar)

    actor, reports = trn.scrl_loop(actor, reference, critic, tf, tr, vf, vr,
                                   loader, scfg, rounds)
    out.mkdir(parents=True, exist_ok=True)
    _snapshot(cfg, out)
    trn.save_actor(actor, out / "actor.ckpt")
    with open(out / "align_diagnostics.csv", "w", encoding="utf-8") as fh:
        fh.write("round,step,date,raw_reward,kl,total_reward,surrogate,validation_rank_ic\n")
        for rep in reports:
            for row in rep["diagnostics"]:
                fh.write(f"{rep['round']},{row['step']},{row['date']},{row['raw_reward']!r},"
                         f"{row['kl']!r},{row['total_reward']!r},{row['surrogate']!r},"
                         f"{row['validation_rank_ic']!r}\n")
    print(f"aligned actor over {len(reports)} round(s); "
          f"final validation rank IC {reports[-1]['validation_rank_ic']:.4f}")
    return 0


def _checkpoint_predictor(path, series):
    params, extras = mdl.load_checkpoint_with_extras(path)
    if params.variant == "scrl_lg":
        policy = trn.MaskPolicy(extras["policy.w_map"], extras["policy.b_map"])

        def predictor(date, M):
            v = emb.vector_for_prediction(series, date)
            return mdl.predict(params, M, mask=trn.deterministic_mask(policy, v))
    elif params.variant == "lg_llm":
        def predictor(date, M):
            return mdl.predict(params, M, v_llm=emb.vector_for_prediction(series, date))
    else:
        def predictor(date, M):
            return mdl.predict(params, M)
    return params.variant, predictor


def cmd_backtest(args) -> int:
    cfg = _load_config(args.config)
    fpanel, rpanel = _load_panels(cfg)
    bcfg = bt.BacktestConfig(
        quantiles=_get(cfg, "backtest", "quantiles", 10, int),
        cost_rate=_get(cfg, "backtest", "cost_rate", 0.003, float),
        holding=_get(cfg, "backtest", "holding", 1, int),
        annualization_days=_get(cfg, "backtest", "annualization_days", 252, int),
        risk_free_rate=_get(cfg, "backtest", "risk_free_rate", 0.0, float),
    )
    series = None
    if cfg.has_option("paths", "embeddings"):
        series = emb.load_embeddings(_require_path(cfg, "paths", "embeddings"),
                                     calendar=fpanel.calendar)
    _, test_days = _split_days(cfg, fpanel.calendar)
    tf, tr = _subset(fpanel, rpanel, test_days)
    out = _out_dir(args, cfg)

    named = []
    for ckpt in args.checkpoints:
        if not Path(ckpt).is_file():
            raise ConfigError(f"checkpoint not found: {ckpt}")
        variant, predictor = _checkpoint_predictor(ckpt, series)
        if variant in ("lg_llm", "scrl_lg") and series is None:
            raise ConfigError(f"checkpoint {ckpt} needs [paths] embeddings")
        named.append((Path(ckpt).stem, variant, predictor))

    out.mkdir(parents=True, exist_ok=True)
    _snapshot(cfg, out)
    reports = {}
    with open(out / "comparison.csv", "w", encoding="utf-8") as fh:
        fh.write("model,rank_ic,annual_return,top_minus_bottom,sharpe,mdd\n")
        for name, variant, predictor in named:
            rep = bt.run_backtest(predictor, tf, tr, bcfg)
            reports[name] = rep
            bt.write_report_csv(rep, out / f"report_{name}.csv")
            bt.write_metrics_json(rep.metrics, out / f"metrics_{name}.json")
            m = rep.metrics
            fh.write(f"{name},{m['rank_ic_mean']!r},{m['annual_return']!r},"
                     f"{m['top_minus_bottom']!r},{m['sharpe']!r},{m['mdd']!r}\n")
    bt.write_cumulative_csv(reports, out / "cumulative_returns.csv")

    if args.horizons:
        horizons = [int(h) for h in args.horizons.split(",")]
        with open(out / "horizon_sweep.csv", "w", encoding="utf-8") as fh:
            fh.write("model,horizon,rank_ic,annual_return,sharpe,turnover\n")
            for name, variant, predictor in named:
                rows = bt.horizon_sweep({h: predictor for h in horizons}, tf, tr, bcfg)
                for row in rows:
                    fh.write(f"{name},{row['horizon']},{row['rank_ic_mean']!r},"
                             f"{row['annual_return']!r},{row['sharpe']!r},"
                             f"{row['turnover_mean']!r}\n")
    print(f"backtested {len(named)} checkpoint(s); reports in {out}")
    return 0


def cmd_report(args) -> int:
    import json
    out = Path(args.out or os.environ.get(OUTPUT_ROOT_ENV, "out"))
    rows = []
    for path in args.metrics:
        if not Path(path).is_file():
            raise ConfigError(f"metrics file not found: {path}")
        with open(path, encoding="utf-8") as fh:
            rows.append((Path(path).stem, json.load(fh)))
    out.mkdir(parents=True, exist_ok=True)
    table = out / "combined_metrics.csv"
    with open(table, "w", encoding="utf-8") as fh:
        fh.write("model,rank_ic,annual_return,top_minus_bottom,sharpe,mdd\n")
        for name, m in rows:
            fh.write(f"{name},{m['rank_ic_mean']!r},{m['annual_return']!r},"
                     f"{m.get('top_minus_bottom', float('nan'))!r},{m['sharpe']!r},{m['mdd']!r}\n")
    print(f"wrote {table}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="localglobal",
                                description="local-global return model research engine")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="INI experiment config")
        sp.add_argument("--seed", type=int, help="override the relevant seed")
        sp.add_argument("--out", help=f"output directory (default ${OUTPUT_ROOT_ENV} or ./out)")
        sp.add_argument("--threads", type=int, default=1,
                        help="worker cap; 1 guarantees determinism")

    sp = sub.add_parser("synth", help="write a seeded synthetic market instance")
    common(sp)
    sp.add_argument("--stocks", type=int, default=50)
    sp.add_argument("--features", type=int, default=20)
    sp.add_argument("--factors", type=int, default=8, help="global information dimension")
    sp.add_argument("--dllm", type=int, default=16, help="embedding dimension")
    sp.add_argument("--days", type=int, default=120)
    sp.add_argument("--noise", type=float, default=0.01)
    sp.set_defaults(func=cmd_synth, seed=1)

    sp = sub.add_parser("train", help="supervised critic training")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("align", help="PPO mask-policy alignment")
    common(sp)
    sp.add_argument("--rounds", type=int)
    sp.add_argument("--theta", type=float)
    sp.set_defaults(func=cmd_align)

    sp = sub.add_parser("backtest", help="backtest one or more checkpoints")
    common(sp)
    sp.add_argument("checkpoints", nargs="+")
    sp.add_argument("--horizons", help="comma-separated horizons, e.g. 5,10,20")
    sp.set_defaults(func=cmd_backtest)

    sp = sub.add_parser("report", help="combine metrics JSONs into one table")
    common(sp)
    sp.add_argument("metrics", nargs="+")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (pnl.PanelError, emb.EmbeddingError, mdl.ModelError,
            bt.BacktestError, trn.TrainingError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
