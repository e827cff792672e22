"""Command-line entry point wiring the modules into reproducible runs.

Every run writes a fixed layout under the output directory::

    manifest.json   inputs, digests, seed, version — enables byte-identical replay
    reports/        JSON/CSV reports
    data/           forged datasets and stats
    checkpoints/    model snapshots
    logs/           per-step training logs

Configs are flat ``key = value`` text files ('#' starts a comment); any key
can be overridden on the command line with ``--set key=value``. Keys are
documented in the README.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from . import bounds as bounds_mod
from . import efficiency
from .corpus import (PolicyCandidateGenerator, StubGenerator, build_chain_corpus,
                     needle_profile, needle_vocab, word_profile)
from .forge import (HaystackConfig, forge_dataset, read_forged_jsonl,
                    read_source_jsonl, write_forged_jsonl)
from .gradcheck import check_loss_gradients, check_policy_gradients
from .losses import Method, MethodConfig, RAMode
from .policy import ToyLM, load_model, save_model
from .training import (NonFiniteLossError, TrainConfig, evaluate,
                       run_comparison, train)

__all__ = ["main", "load_config"]


class ConfigError(ValueError):
    pass


def load_config(path: str | Path) -> dict[str, str]:
    """Parse a flat key = value config file; errors carry line numbers."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}: line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{path}: line {lineno}: empty key")
        out[key] = value
    return out


class Settings:
    """Config values with typed access and default fallbacks."""

    def __init__(self, values: dict[str, str]):
        self.values = values

    def str_(self, key: str, default: str) -> str:
        return self.values.get(key, default)

    def int_(self, key: str, default: int) -> int:
        try:
            return int(self.values.get(key, default))
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None

    def float_(self, key: str, default: float) -> float:
        try:
            return float(self.values.get(key, default))
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None

    def bool_(self, key: str, default: bool) -> bool:
        raw = self.values.get(key)
        if raw is None:
            return default
        if raw.lower() in ("true", "1", "yes", "on"):
            return True
        if raw.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"config key {key!r}: expected a boolean, got {raw!r}")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _prepare_run_dir(out: Path) -> None:
    for sub in ("reports", "data", "checkpoints", "logs"):
        (out / sub).mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, subcommand: str, config_path: str | None,
                    overrides: list[str], seed: int,
                    inputs: dict[str, Path]) -> None:
    manifest = {
        "subcommand": subcommand,
        "config_path": config_path,
        "config_digest": _sha256(Path(config_path)) if config_path else None,
        "overrides": sorted(overrides),
        "seed": seed,
        "output_dir": str(out),
        "tool_version": __version__,
        "input_digests": {name: _sha256(p) for name, p in sorted(inputs.items())
                          if p.exists()},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _settings_from_args(args) -> tuple[Settings, str | None, list[str]]:
    values: dict[str, str] = {}
    if args.config:
        values.update(load_config(args.config))
    overrides = list(args.set or [])
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = value.strip()
    if args.seed is not None:
        values["seed"] = str(args.seed)
    return Settings(values), args.config, overrides


def _method_cfg(s: Settings) -> MethodConfig:
    method = Method(s.str_("method", "orpo"))
    kwargs = {}
    for key in ("alpha", "beta", "gamma"):
        if key in s.values:
            kwargs[key] = s.float_(key, 0.0)
    if "eta" in s.values:
        kwargs["eta"] = s.float_("eta", 1.0)
    if "ra_mode" in s.values:
        kwargs["ra_mode"] = RAMode(s.str_("ra_mode", "chosen_only"))
    if "include_nll" in s.values:
        kwargs["include_nll"] = s.bool_("include_nll", True)
    return MethodConfig(method, **kwargs)


def _train_cfg(s: Settings, method_cfg: MethodConfig) -> TrainConfig:
    return TrainConfig(
        method_cfg=method_cfg,
        lr_max=s.float_("lr_max", 1e-2),
        warmup_ratio=s.float_("warmup_ratio", 0.1),
        batch_size=s.int_("batch_size", 16),
        epochs=s.int_("epochs", 1),
        seed=s.int_("seed", 0),
        eval_every=s.int_("eval_every", 0),
        po_context=s.str_("po_context", "short"),
        telemetry=s.bool_("telemetry", True),
    )


# ---------------------------------------------------------------- verify-bounds


def cmd_verify_bounds(args) -> int:
    s, config_path, overrides = _settings_from_args(args)
    out = Path(args.out)
    _prepare_run_dir(out)
    seed = s.int_("seed", 0)
    reports: dict[str, bounds_mod.BoundReport] = {}

    if s.bool_("selftest_nonconvex", False) or args.selftest_nonconvex:
        rep = bounds_mod.run_nonconvex_selftest(s.int_("selftest_instances", 10000), seed)
        reports["selftest_nonconvex"] = rep
        _write_bound_reports(out, reports)
        _write_manifest(out, "verify-bounds", config_path, overrides, seed, {})
        # The sanity path must detect violations; finding none means the
        # harness is broken, which is also a nonzero outcome.
        print(f"selftest_nonconvex: max_violation={rep.max_violation:.3e} "
              f"witness={'yes' if rep.worst_witness else 'no'}")
        return 2 if rep.max_violation > bounds_mod.TOLERANCE else 3

    reports["lemma1"] = bounds_mod.run_lemma1_suite(
        s.int_("lemma_instances", 1_000_000), seed)
    for form in ("exact", "sform"):
        for name, rep in bounds_mod.run_theorem1_suite(
                s.int_("theorem1_scenarios", 10_000), seed, form=form).items():
            reports[f"theorem1_{form}[{name}]"] = rep
    for name, rep in bounds_mod.run_theorem2_suite(
            s.int_("theorem2_scenarios", 10_000), seed).items():
        reports[f"theorem2[p={name}]"] = rep
    necessity = bounds_mod.run_assumption_necessity_search(
        s.int_("necessity_attempts", 100_000), seed)
    reports["assumption_necessity"] = necessity

    _write_bound_reports(out, reports)
    _write_manifest(out, "verify-bounds", config_path, overrides, seed, {})

    failed = []
    for name, rep in reports.items():
        if name == "assumption_necessity":
            status = "witness found" if rep.max_violation > bounds_mod.TOLERANCE \
                else "no witness (diagnostic)"
        else:
            status = "ok" if rep.passed else "VIOLATED"
            if not rep.passed:
                failed.append(name)
        print(f"{name}: max_violation={rep.max_violation:.3e} [{status}]")
    return 1 if failed else 0


def _write_bound_reports(out: Path, reports: dict[str, "bounds_mod.BoundReport"]) -> None:
    payload = {name: json.loads(rep.to_json()) for name, rep in reports.items()}
    (out / "reports" / "bounds.json").write_text(json.dumps(payload, indent=1, sort_keys=True))


# ------------------------------------------------------------------------ forge


def _load_corpus(s: Settings) -> tuple[list, list, object]:
    corpus = s.str_("corpus", "builtin-needle")
    corpus_seed = s.int_("corpus_seed", s.int_("seed", 0))
    if corpus == "builtin-needle":
        profile = needle_profile()
        sources, pool = build_chain_corpus(
            s.int_("corpus_sources", 400), s.int_("corpus_pool", 360),
            corpus_seed, profile)
        return sources, pool, profile
    if corpus == "builtin-word":
        profile = word_profile()
        sources, pool = build_chain_corpus(
            s.int_("corpus_sources", 600), s.int_("corpus_pool", 2200),
            corpus_seed, profile)
        return sources, pool, profile
    sources = read_source_jsonl(corpus)
    pool_path = s.str_("distractor_pool", "")
    if not pool_path:
        raise ConfigError("external corpora require a 'distractor_pool' JSONL"
                          " of documents (one JSON string per line)")
    pool = [json.loads(line) for line in Path(pool_path).read_text().splitlines()
            if line.strip()]
    return sources, pool, None


def _build_generator(s: Settings, profile) -> object:
    kind = s.str_("generator", "stub")
    if kind == "stub":
        wrong: tuple[str, ...] = ("noanswer",)
        if profile is not None:
            from .corpus import value_token

            wrong = tuple(value_token(profile, i) for i in range(profile.n_values)) + wrong
        return StubGenerator(p_correct=s.float_("stub_p_correct", 0.5),
                             n=s.int_("stub_n", 32), wrong_answers=wrong)
    if kind == "policy":
        checkpoint = s.str_("policy_checkpoint", "")
        if not checkpoint:
            raise ConfigError("generator=policy requires 'policy_checkpoint'")
        model = load_model(checkpoint)
        return PolicyCandidateGenerator(model, n=s.int_("policy_n", 32),
                                        temperature=s.float_("policy_temperature", 0.85),
                                        max_len=s.int_("policy_max_len", 6))
    raise ConfigError(f"unknown generator kind {kind!r}")


def cmd_forge(args) -> int:
    s, config_path, overrides = _settings_from_args(args)
    out = Path(args.out)
    _prepare_run_dir(out)
    seed = s.int_("seed", 0)
    sources, pool, profile = _load_corpus(s)
    generator = _build_generator(s, profile)
    defaults = (64, 512) if s.str_("corpus", "builtin-needle") == "builtin-needle" else (1100, 7500)
    cfg = HaystackConfig(
        target_short_tokens=s.int_("target_short_tokens", defaults[0]),
        target_long_tokens=s.int_("target_long_tokens", defaults[1]),
        tolerance_frac=s.float_("tolerance_frac", 0.05),
        seed=seed)
    n_target = s.int_("n_target", 0) or None
    samples, stats = forge_dataset(sources, pool, generator, cfg, n_target,
                                   condition_on=s.str_("condition_on", "short"),
                                   intersection=s.bool_("intersection", False))
    write_forged_jsonl(samples, out / "data" / "forged.jsonl")
    (out / "data" / "forge_stats.json").write_text(stats.to_json())
    inputs = {}
    corpus = s.str_("corpus", "builtin-needle")
    if not corpus.startswith("builtin-"):
        inputs["corpus"] = Path(corpus)
    _write_manifest(out, "forge", config_path, overrides, seed, inputs)
    print(f"emitted {stats.emitted} samples "
          f"(discard rate {stats.discard_rate:.3f}, achieved c "
          f"{stats.achieved_compression:.4f})")
    return 0


# ------------------------------------------------------------------------ train


def _parse_compare(spec: str) -> tuple[str, list[str]]:
    if ":" not in spec:
        raise ConfigError("--compare expects key:value1,value2,...")
    key, raw = spec.split(":", 1)
    return key.strip(), [v.strip() for v in raw.split(",") if v.strip()]


def cmd_train(args) -> int:
    s, config_path, overrides = _settings_from_args(args)
    out = Path(args.out)
    _prepare_run_dir(out)
    seed = s.int_("seed", 0)
    dataset_path = s.str_("dataset", "")
    if not dataset_path:
        raise ConfigError("train requires a 'dataset' (forged JSONL path)")
    dataset = read_forged_jsonl(dataset_path)
    eval_path = s.str_("eval_dataset", "")
    eval_set = read_forged_jsonl(eval_path) if eval_path else None
    vocab = needle_vocab()
    hidden = s.int_("model_hidden", 16)
    model_seed = s.int_("model_seed", seed)

    inputs = {"dataset": Path(dataset_path)}
    if eval_path:
        inputs["eval_dataset"] = Path(eval_path)

    if args.compare:
        key, raw_values = _parse_compare(args.compare)
        seeds = [int(x) for x in (args.seeds or str(seed)).split(",")]
        configs = []
        for value in raw_values:
            local = Settings(dict(s.values))
            local.values[key] = value
            configs.append((f"{key}={value}", _train_cfg(local, _method_cfg(local))))
        if eval_set is None:
            raise ConfigError("--compare requires 'eval_dataset'")
        report = run_comparison(seeds, configs, dataset, eval_set, vocab,
                                lambda sd: ToyLM(vocab, hidden, sd))
        report.write_csv(out / "reports" / "comparison.csv")
        report.write_json(out / "reports" / "comparison.json")
        report.write_margins_csv(out / "reports" / "margins.csv")
        _write_manifest(out, "train", config_path, overrides, seed, inputs)
        for label, agg in report.aggregates().items():
            print(f"{label}: long {agg['long_mean']:.3f}±{agg['long_std']:.3f} "
                  f"short {agg['short_mean']:.3f}±{agg['short_std']:.3f} (n={agg['n']})")
        return 0

    cfg = _train_cfg(s, _method_cfg(s))
    model = ToyLM(vocab, hidden, model_seed)
    try:
        model, log = train(model, dataset, cfg, vocab, eval_set=eval_set)
    except NonFiniteLossError as exc:
        (out / "reports" / "abort.json").write_text(json.dumps(exc.diagnostic, sort_keys=True))
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    save_model(model, out / "checkpoints" / "final.json")
    log.write_csv(out / "logs" / "train_log.csv")
    log.write_json(out / "logs" / "train_log.json")
    _write_manifest(out, "train", config_path, overrides, seed, inputs)
    if log.evals:
        last = log.evals[-1]
        print(f"final accuracy: short {last.short_acc:.3f} long {last.long_acc:.3f}")
    else:
        print(f"trained {len(log.steps)} steps")
    return 0


# ------------------------------------------------------------------------- eval


def cmd_eval(args) -> int:
    s, config_path, overrides = _settings_from_args(args)
    out = Path(args.out)
    _prepare_run_dir(out)
    seed = s.int_("seed", 0)
    checkpoint = s.str_("checkpoint", "")
    dataset_path = s.str_("dataset", "")
    if not checkpoint or not dataset_path:
        raise ConfigError("eval requires 'checkpoint' and 'dataset'")
    model = load_model(checkpoint)
    dataset = read_forged_jsonl(dataset_path)
    max_len = s.int_("max_len", 4)
    which = s.str_("context", "both")
    result = {}
    if which in ("short", "both"):
        result["short_acc"] = evaluate(model, dataset, "short", model.vocab, max_len)
    if which in ("long", "both"):
        result["long_acc"] = evaluate(model, dataset, "long", model.vocab, max_len)
    (out / "reports" / "eval.json").write_text(json.dumps(result, sort_keys=True))
    _write_manifest(out, "eval", config_path, overrides, seed,
                    {"checkpoint": Path(checkpoint), "dataset": Path(dataset_path)})
    print(" ".join(f"{k}={v:.4f}" for k, v in sorted(result.items())))
    return 0


# ---------------------------------------------------------------------- speedup


def cmd_speedup(args) -> int:
    s, config_path, overrides = _settings_from_args(args)
    out = Path(args.out)
    _prepare_run_dir(out)
    seed = s.int_("seed", 0)
    c_values = [float(c) for c in (args.c or ["0.125", "0.25", "0.5", "1.0"])]
    n_values = [float(n) for n in (args.n or ["1000"])]
    models = [efficiency.CostModel(long_tokens=n, compression=c)
              for n in n_values for c in c_values]
    efficiency.write_report_csv(models, out / "reports" / "speedup.csv")
    if s.bool_("measure_wallclock", False):
        report = efficiency.measure_step_times(seed=seed)
        (out / "reports" / "wallclock.json").write_text(
            json.dumps(report, indent=1, sort_keys=True))
    _write_manifest(out, "speedup", config_path, overrides, seed, {})
    for c in c_values:
        print(f"c={c:g} speedup={efficiency.speedup(c):.3f}")
    return 0


# ------------------------------------------------------------------- grad-check


def cmd_grad_check(args) -> int:
    s, config_path, overrides = _settings_from_args(args)
    out = Path(args.out)
    _prepare_run_dir(out)
    seed = s.int_("seed", 0)
    loss_report = check_loss_gradients(s.int_("points", 200), seed)
    policy_report = check_policy_gradients(seed)
    payload = {"loss_gradients": loss_report, "policy_gradients": policy_report}
    (out / "reports" / "gradcheck.json").write_text(json.dumps(payload, indent=1, sort_keys=True))
    _write_manifest(out, "grad-check", config_path, overrides, seed, {})
    worst = max(loss_report["max_relative_error"], policy_report["max_relative_error"])
    print(f"max relative error: {worst:.3e}")
    return 0 if worst < 1e-4 else 1


# ------------------------------------------------------------------------- main


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="flat key=value config file")
    parser.add_argument("--out", default="run", help="run directory (default: ./run)")
    parser.add_argument("--seed", type=int, default=None, help="override the seed")
    parser.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a config key")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="shortlong",
        description="Short-to-long preference optimization laboratory")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("verify-bounds", help="certify the decomposition inequalities")
    _add_common(p)
    p.add_argument("--selftest-nonconvex", action="store_true",
                   help="run the violation-detection sanity path (exits nonzero)")
    p.set_defaults(func=cmd_verify_bounds)

    p = sub.add_parser("forge", help="synthesize haystack contexts and preference pairs")
    _add_common(p)
    p.set_defaults(func=cmd_forge)

    p = sub.add_parser("train", help="train the toy policy on a forged dataset")
    _add_common(p)
    p.add_argument("--compare", metavar="KEY:V1,V2,...",
                   help="train a matrix over one config key")
    p.add_argument("--seeds", metavar="S1,S2,...",
                   help="seed list for --compare (default: the single seed)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a forged dataset")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("speedup", help="emit the analytic cost/speedup report")
    _add_common(p)
    p.add_argument("--c", action="append", metavar="C", help="compression rate(s)")
    p.add_argument("--n", action="append", metavar="N", help="long length(s) in tokens")
    p.set_defaults(func=cmd_speedup)

    p = sub.add_parser("grad-check", help="finite-difference gradient validation")
    _add_common(p)
    p.set_defaults(func=cmd_grad_check)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
