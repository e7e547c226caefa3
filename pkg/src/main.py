"""
Command-line entry point: python -m src.main {synth,plan,profile,bench,eval}.

Settings are layered: built-in defaults < INI config < JSON run config
(--config) < command-line flags. Exit codes: 0 success, 1 I/O failure,
2 config or parse failure.
"""
import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Tuple

from colorama import Fore, Style, init

from . import pinned_threads
from .bench import run_bench
from .checkpoint import load_checkpoint, save_checkpoint
from .config_loader import Config, get_config, reload_config
from .data_files import load_corpus, load_model_config, load_prompts, load_task, random_prompts
from .errors import ConfigError, InputError, SkipRunError
from .evaluation import eval_sweep
from .model import ModelWeights, init_random
from .profiler import profile
from .reporting import write_report
from .schemas import ModelConfig, RunConfig, SkipSpec, validated
from .skip_engine import (describe, format_layers, format_range, format_skip_spec, parse_skip_spec,
                          resolve, sweep_specs)

logger = logging.getLogger(__name__)

init(autoreset=True)

EXIT_OK = 0
EXIT_IO = 1
EXIT_CONFIG = 2


def setup_logging(level: str, fmt: str) -> None:
    if not logging.root.handlers:
        logging.basicConfig(level=level, format=fmt)
    else:
        logging.root.setLevel(level)


def thread_pin_warning(config: Config) -> Optional[str]:
    """Message when an INI threads value differs from the count pinned at import."""
    wanted = config.get_runtime_config()["threads"]
    pinned = pinned_threads()
    if wanted is None or wanted == pinned:
        return None
    return (f"threads = {wanted} in {config.config_path} is ignored; BLAS threads were pinned to "
            f"{pinned if pinned is not None else 'the library default'} at import (set SKIPRUN_THREADS instead)")


def _load_json_config(path: Optional[str]) -> Dict[str, Any]:
    if not path:
        return {}
    with open(path, "r", encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"bad JSON in {path}: {e}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must hold a JSON object")
    return data


def _ini_defaults(command: str) -> Dict[str, Any]:
    config = get_config()
    runtime = config.get_runtime_config()
    defaults: Dict[str, Any] = {"format": runtime["output_format"]}
    if command == "bench":
        defaults.update(config.get_bench_config())
    elif command == "eval":
        defaults.update(config.get_eval_config())
    elif command == "profile":
        defaults.update(config.get_profile_config())
    return defaults


_FLAG_FIELDS = ("checkpoint", "out", "format", "quiet", "sweep", "prompt_len", "n_sequences",
                "warmup_runs", "seed", "corpus", "normalization", "workers", "prompts", "n_prompts")


def build_run_config(args: argparse.Namespace) -> RunConfig:
    """Merge INI defaults, the JSON run config and explicit flags into a RunConfig."""
    data = _ini_defaults(args.command)
    data.update(_load_json_config(getattr(args, "config", None)))
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if getattr(args, "skip", None):
        data["skip"] = list(args.skip)
    if getattr(args, "task", None):
        data["tasks"] = list(args.task)
    if getattr(args, "synth", None):
        data["synth"] = {"config": load_model_config(args.synth).model_dump(),
                         "seed": args.synth_seed if args.synth_seed is not None else 0}
        if getattr(args, "checkpoint", None) is None:
            data.pop("checkpoint", None)
    elif getattr(args, "checkpoint", None) is not None:
        data.pop("synth", None)
    return validated(RunConfig, data)


def load_model(cfg: RunConfig) -> Tuple[ModelConfig, ModelWeights]:
    cfg.require_model_source()
    if cfg.checkpoint:
        return load_checkpoint(cfg.checkpoint)
    weights = init_random(cfg.synth.config, cfg.synth.seed)
    return cfg.synth.config, weights


def skip_specs(cfg: RunConfig) -> List[SkipSpec]:
    specs = [parse_skip_spec(text) for text in cfg.skip]
    if cfg.sweep:
        specs.extend(sweep_specs())
    if not specs:
        specs = [SkipSpec.full()]
    return specs


def _emit(text: str, cfg: RunConfig) -> None:
    if not cfg.out:
        print(text, end="")
    elif not cfg.quiet:
        print(f"{Fore.GREEN}Wrote {cfg.out}{Style.RESET_ALL}")


def cmd_synth(args: argparse.Namespace) -> int:
    data = _load_json_config(args.config)
    if args.model_config:
        config = load_model_config(args.model_config)
        seed = args.seed if args.seed is not None else 0
    elif "synth" in data:
        source = validated(RunConfig, {"synth": data["synth"]}).synth
        config = source.config
        seed = args.seed if args.seed is not None else source.seed
    else:
        raise ConfigError("synth needs --model-config or a 'synth' entry in --config")
    out = args.out or data.get("out")
    if not out:
        raise ConfigError("synth needs an output path (--out)")
    weights = init_random(config, seed)
    save_checkpoint(weights, config, out)
    n_tensors = len(weights.named_tensors())
    print(f"{Fore.GREEN}Wrote {out}: {n_tensors} tensors, {weights.n_parameters} parameters{Style.RESET_ALL}")
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    spec = parse_skip_spec(args.spec)
    if args.layers is not None:
        n_layers = args.layers
    elif args.checkpoint:
        n_layers = load_checkpoint(args.checkpoint)[0].n_layers
    else:
        raise ConfigError("plan needs --layers or --checkpoint")
    skip_set = resolve(spec, n_layers)
    summary = describe(skip_set)
    print(f"spec: {format_skip_spec(spec)} (L={n_layers})")
    print(f"attention skipped: {format_layers(skip_set.attention_layers())}")
    print(f"mlp skipped: {format_layers(skip_set.mlp_layers())}")
    print(f"skipped sublayers: attention={summary.n_attention}, mlp={summary.n_mlp}")
    print(f"k={summary.k}, layers {format_range(summary.layers)}, label {summary.label}")
    return EXIT_OK


def cmd_profile(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    config, weights = load_model(cfg)
    if cfg.prompts:
        prompts = load_prompts(cfg.prompts)
    else:
        prompts = random_prompts(cfg.n_prompts, cfg.prompt_len, config.vocab_size, cfg.seed)
    result = profile(weights, prompts, workers=cfg.workers, progress=not cfg.quiet)
    frame = result.to_frame()
    ranked = ", ".join(str(i) for i in result.ranked_layers())
    table = frame.to_string(index=False) + f"\nmost redundant first: {ranked}"
    if result.last_layer_is_outlier():
        table += "\nlast layer has the lowest similarity"
    _emit(write_report(frame, "profile", cfg.out, cfg.format, table), cfg)
    return EXIT_OK


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    config, weights = load_model(cfg)
    report = run_bench(weights, skip_specs(cfg), cfg.bench_config(), progress=not cfg.quiet)
    _emit(write_report(report.to_frame(), "bench", cfg.out, cfg.format, report.to_table()), cfg)
    for warning in report.warnings:
        print(f"{Fore.YELLOW}Warning: {warning}{Style.RESET_ALL}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = build_run_config(args)
    config, weights = load_model(cfg)
    tasks = [load_task(path) for path in cfg.tasks]
    corpus = load_corpus(cfg.corpus) if cfg.corpus else None
    report = eval_sweep(weights, skip_specs(cfg), tasks, corpus,
                        normalization=cfg.normalization, workers=cfg.workers, progress=not cfg.quiet)
    _emit(write_report(report.to_frame(), "eval", cfg.out, cfg.format, report.to_table()), cfg)
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="JSON run config; flags override its values")
    parser.add_argument("--checkpoint", default=None, help="checkpoint file to load")
    parser.add_argument("--synth", default=None, metavar="MODEL_JSON",
                        help="build a random model from this config instead of loading a checkpoint")
    parser.add_argument("--synth-seed", type=int, default=None, dest="synth_seed")
    parser.add_argument("--out", default=None, help="report path (stdout when omitted)")
    parser.add_argument("--format", choices=("csv", "table"), default=None)
    parser.add_argument("--quiet", action="store_true", default=None, help="no progress bars")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skiprun", description="Layer-skipping transformer inference")
    parser.add_argument("--log-level", default=None, dest="log_level")
    parser.add_argument("--ini", default=None, help="INI config file (default: config/config.ini)")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="write a randomly initialised checkpoint")
    synth.add_argument("--model-config", default=None, dest="model_config", help="model config JSON")
    synth.add_argument("--config", default=None, help="JSON run config with a 'synth' entry")
    synth.add_argument("--seed", type=int, default=None)
    synth.add_argument("--out", default=None)

    plan = sub.add_parser("plan", help="print the resolved skip set of a spec")
    plan.add_argument("spec", help="e.g. attn,k=3,keep_last=false")
    plan.add_argument("--layers", "-L", type=int, default=None)
    plan.add_argument("--checkpoint", default=None)

    prof = sub.add_parser("profile", help="layer-to-layer cosine similarity profile")
    _add_common(prof)
    prof.add_argument("--prompts", default=None, help="prompt file, one prompt per line")
    prof.add_argument("--n-prompts", type=int, default=None, dest="n_prompts")
    prof.add_argument("--prompt-len", type=int, default=None, dest="prompt_len")
    prof.add_argument("--seed", type=int, default=None)
    prof.add_argument("--workers", type=int, default=None)

    bench = sub.add_parser("bench", help="single-token latency per skip configuration")
    _add_common(bench)
    bench.add_argument("--skip", action="append", default=None, help="skip spec (repeatable)")
    bench.add_argument("--sweep", action="store_true", default=None, help="add the full keep-level grid")
    bench.add_argument("--prompt-len", type=int, default=None, dest="prompt_len")
    bench.add_argument("--n-sequences", type=int, default=None, dest="n_sequences")
    bench.add_argument("--warmup-runs", type=int, default=None, dest="warmup_runs")
    bench.add_argument("--seed", type=int, default=None)

    ev = sub.add_parser("eval", help="perplexity and multiple-choice accuracy per skip configuration")
    _add_common(ev)
    ev.add_argument("--skip", action="append", default=None, help="skip spec (repeatable)")
    ev.add_argument("--sweep", action="store_true", default=None)
    ev.add_argument("--task", action="append", default=None, help="JSON-lines task file (repeatable)")
    ev.add_argument("--corpus", default=None, help="whitespace-separated token ids")
    ev.add_argument("--normalization", choices=("sum", "mean"), default=None)
    ev.add_argument("--workers", type=int, default=None)
    return parser


COMMANDS = {"synth": cmd_synth, "plan": cmd_plan, "profile": cmd_profile, "bench": cmd_bench, "eval": cmd_eval}


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    config = reload_config(args.ini) if args.ini else get_config()
    log_config = config.get_logging_config()
    setup_logging((args.log_level or log_config["level"]).upper(), log_config["format"])
    if args.ini:
        warning = thread_pin_warning(config)
        if warning:
            logger.warning(warning)
            print(f"{Fore.YELLOW}Warning: {warning}{Style.RESET_ALL}", file=sys.stderr)

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"{Fore.RED}Config error: {e}{Style.RESET_ALL}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, InputError) as e:
        print(f"{Fore.RED}I/O error: {e}{Style.RESET_ALL}", file=sys.stderr)
        return EXIT_IO
    except SkipRunError as e:
        print(f"{Fore.RED}Error: {e}{Style.RESET_ALL}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
