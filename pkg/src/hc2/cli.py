"""Command-line interface: synth, train, eval, ablate, dump-reprs.

Config precedence is CLI flag > config-file value > built-in default.  The
config file is flat `key = value` with the same names as the flags; every
run writes a manifest in that format (plus `#` comment metadata), so a
manifest can be passed back via --config to reproduce the run.

Exit codes: 0 success, 2 usage/validation/IO, 3 numeric or data failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import os
import sys

import numpy as np

from .data import Dataset, SynthConfig, load_dataset, synth_generate, write_csv
from .errors import ConfigError, DataError, HC2Error
from .model import ModelParams, forward_arrays, load_model, save_model
from .rng import RngStream
from .training import (ABLATION_FLAGS, TrainConfig, evaluate, format_metrics,
                       train, write_metrics)

_TRAIN_DEFAULTS = TrainConfig()
_SYNTH_DEFAULTS = SynthConfig()


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {text!r}")


def _parse_int_tuple(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"expected an integer, got {text!r}") from None


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"expected a number, got {text!r}") from None


# (flag, TrainConfig field, parser, exposed as CLI flag)
_TRAIN_FIELDS = [
    ("seed", "seed", _parse_int, True),
    ("epochs", "epochs", _parse_int, True),
    ("batch", "batch_size", _parse_int, True),
    ("lr", "lr", _parse_float, True),
    ("tau", "tau", _parse_float, True),
    ("lambda1", "lambda1", _parse_float, True),
    ("lambda2", "lambda2", _parse_float, True),
    ("negatives", "negatives", _parse_int, True),
    ("bank", "bank_capacity", _parse_int, True),
    ("clusters", "clusters", _parse_int, True),
    ("refresh", "refresh", _parse_int, True),
    ("diff-steps", "diff_steps", _parse_int, True),
    ("beta-start", "beta_start", _parse_float, True),
    ("beta-end", "beta_end", _parse_float, True),
    ("dropout", "dropout", _parse_float, True),
    ("log-form", "log_form", _parse_bool, True),
    ("g-loss", "g_loss", _parse_bool, False),
    ("noise", "noise", _parse_bool, False),
    ("weight", "weight", _parse_bool, False),
    ("s-loss", "s_loss", _parse_bool, False),
    ("fine", "fine", _parse_bool, False),
    ("diffused-per-anchor", "diffused_per_anchor", _parse_int, False),
    ("embed-dim", "embed_dim", _parse_int, False),
    ("shared-dims", "shared_dims", _parse_int_tuple, False),
    ("specific-dims", "specific_dims", _parse_int_tuple, False),
]

_SYNTH_FIELDS = [
    ("k", "n_scenarios", _parse_int),
    ("fields", "n_fields", _parse_int),
    ("vocab", None, _parse_int),
    ("a-shared", "a_shared", _parse_float),
    ("a-spec", "a_spec", _parse_float),
    ("counts", "counts", _parse_int_tuple),
    ("noise-rate", "noise_rate", _parse_float),
    ("seed", "seed", _parse_int),
]


def read_config_file(path) -> dict[str, str]:
    """Flat `key = value` lines; `#` comments and blanks ignored."""
    values: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {line_no}: expected key = value, "
                                  f"got {line!r}")
            key, val = line.split("=", 1)
            values[key.strip().replace("_", "-")] = val.strip()
    return values


def _env_seed() -> int | None:
    raw = os.environ.get("HC2_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"HC2_SEED must be an integer, got {raw!r}") from None


def resolve_train_config(args) -> TrainConfig:
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    known = {flag for flag, _, _, _ in _TRAIN_FIELDS}
    unknown = set(file_vals) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    kwargs = {}
    for flag, attr, parse, is_cli in _TRAIN_FIELDS:
        cli_val = getattr(args, attr, None) if is_cli else None
        if cli_val is not None:
            kwargs[attr] = cli_val
        elif flag in file_vals:
            kwargs[attr] = parse(file_vals[flag])
    if "seed" not in kwargs:
        env = _env_seed()
        if env is not None:
            kwargs["seed"] = env
    return TrainConfig(**kwargs)


def resolve_synth_config(args) -> SynthConfig:
    file_vals = read_config_file(args.config) if getattr(args, "config", None) else {}
    known = {flag for flag, _, _ in _SYNTH_FIELDS}
    unknown = set(file_vals) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    def pick(flag, attr, parse):
        cli_val = getattr(args, (attr or flag).replace("-", "_"), None)
        if cli_val is not None:
            return cli_val
        if flag in file_vals:
            return parse(file_vals[flag])
        return None

    k = pick("k", "k", _parse_int)
    if k is None:
        k = _SYNTH_DEFAULTS.n_scenarios
    fields = pick("fields", "fields", _parse_int)
    if fields is None:
        fields = _SYNTH_DEFAULTS.n_fields
    vocab = pick("vocab", "vocab", _parse_int)
    if vocab is None:
        vocab = _SYNTH_DEFAULTS.vocab_sizes[0]
    counts = pick("counts", "counts", _parse_int_tuple)
    if counts is None:
        # sparse last scenario by default, mirroring skewed traffic
        counts = (2000,) * (k - 1) + (200,) if k >= 2 else (2000,) * max(k, 1)
    a_shared = pick("a-shared", "a_shared", _parse_float)
    a_spec = pick("a-spec", "a_spec", _parse_float)
    noise_rate = pick("noise-rate", "noise_rate", _parse_float)
    seed = pick("seed", "seed", _parse_int)
    if seed is None:
        seed = _env_seed()
    return SynthConfig(
        n_scenarios=k, n_fields=fields, vocab_sizes=(vocab,) * fields,
        a_shared=_SYNTH_DEFAULTS.a_shared if a_shared is None else a_shared,
        a_spec=_SYNTH_DEFAULTS.a_spec if a_spec is None else a_spec,
        counts=counts,
        noise_rate=_SYNTH_DEFAULTS.noise_rate if noise_rate is None else noise_rate,
        seed=_SYNTH_DEFAULTS.seed if seed is None else seed)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def _sha256(path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        digest.update(fh.read())
    return digest.hexdigest()


def _dataset_checksum(path) -> str:
    if os.path.isdir(path):
        inner = hashlib.sha256()
        for name in ("train.csv", "test.csv"):
            inner.update(_sha256(os.path.join(path, name)).encode())
        return inner.hexdigest()
    return _sha256(path)


def _write_manifest(path, comments: list[str], pairs: list[tuple[str, str]]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        for key, val in pairs:
            fh.write(f"{key} = {val}\n")


def _fmt_value(val) -> str:
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, tuple):
        return ",".join(str(v) for v in val)
    return repr(val) if isinstance(val, float) else str(val)


def _train_config_pairs(cfg: TrainConfig) -> list[tuple[str, str]]:
    return [(flag, _fmt_value(getattr(cfg, attr)))
            for flag, attr, _, _ in _TRAIN_FIELDS]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = resolve_synth_config(args)
    if not args.out:
        raise ConfigError("synth requires --out")
    os.makedirs(args.out, exist_ok=True)
    ds = synth_generate(cfg)
    train_path = os.path.join(args.out, "train.csv")
    test_path = os.path.join(args.out, "test.csv")
    write_csv(train_path, ds.all_train(), cfg.n_fields)
    write_csv(test_path, ds.all_test(), cfg.n_fields)
    pairs = [
        ("k", str(cfg.n_scenarios)), ("fields", str(cfg.n_fields)),
        ("vocab", str(cfg.vocab_sizes[0])), ("a-shared", _fmt_value(cfg.a_shared)),
        ("a-spec", _fmt_value(cfg.a_spec)), ("counts", _fmt_value(cfg.counts)),
        ("noise-rate", _fmt_value(cfg.noise_rate)), ("seed", str(cfg.seed)),
    ]
    comments = [
        "synth manifest; pass back via --config to regenerate",
        f"train.csv sha256 {_sha256(train_path)}",
        f"test.csv sha256 {_sha256(test_path)}",
    ]
    _write_manifest(os.path.join(args.out, "manifest"), comments, pairs)
    print(f"wrote {train_path}, {test_path}")
    return 0


def _run_training(args, cfg: TrainConfig, out_dir: str, *, quiet: bool = False):
    dataset = load_dataset(args.data)
    result = train(dataset, cfg)
    os.makedirs(out_dir, exist_ok=True)
    metrics_path = os.path.join(out_dir, "metrics.csv")
    model_path = os.path.join(out_dir, "model.bin")
    write_metrics(metrics_path, result.rows)
    save_model(model_path, result.params)
    with open(os.path.join(out_dir, "uniformity.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write("epoch,uniformity\n")
        for epoch, u in enumerate(result.uniformity):
            fh.write(f"{epoch},{u:.6f}\n")
    comments = [
        "train manifest; pass back via --config to reproduce",
        f"data {args.data} sha256 {_dataset_checksum(args.data)}",
        "artifacts metrics.csv model.bin uniformity.csv",
    ]
    _write_manifest(os.path.join(out_dir, "manifest"), comments,
                    _train_config_pairs(cfg))
    if not quiet:
        print(f"wrote {metrics_path}, {model_path}")
    return result


def cmd_train(args) -> int:
    if not args.data:
        raise ConfigError("train requires --data")
    if not args.out:
        raise ConfigError("train requires --out")
    cfg = resolve_train_config(args)
    if args.ablate:
        field = ABLATION_FLAGS.get(args.ablate)
        if field is None:
            raise ConfigError(f"unknown ablation {args.ablate!r}; choose from "
                              f"{', '.join(sorted(ABLATION_FLAGS))}")
        cfg = dataclasses.replace(cfg, **{field: False})
    _run_training(args, cfg, args.out)
    return 0


def _compatible_dataset(params: ModelParams, path) -> Dataset:
    """Re-home loaded samples onto the model's schema (or fail as data error)."""
    loaded = load_dataset(path)
    schema = params.schema
    if loaded.schema.n_fields != schema.n_fields:
        raise DataError(f"model expects {schema.n_fields} fields, data has "
                        f"{loaded.schema.n_fields}")
    if loaded.schema.n_scenarios > schema.n_scenarios:
        raise DataError(f"model covers {schema.n_scenarios} scenarios, data has "
                        f"{loaded.schema.n_scenarios}")
    test = loaded.test if any(loaded.test) else loaded.train
    pad = schema.n_scenarios - len(test)
    return Dataset(schema, [[] for _ in range(schema.n_scenarios)],
                   test + [[] for _ in range(pad)])


def cmd_eval(args) -> int:
    if not args.model:
        raise ConfigError("eval requires --model")
    if not args.data:
        raise ConfigError("eval requires --data")
    params = load_model(args.model)
    dataset = _compatible_dataset(params, args.data)
    rows, _ = evaluate(params, dataset, epoch=0)
    sys.stdout.write(format_metrics(rows))
    return 0


def cmd_dump_reprs(args) -> int:
    if not args.model:
        raise ConfigError("dump-reprs requires --model")
    if not args.data:
        raise ConfigError("dump-reprs requires --data")
    params = load_model(args.model)
    dataset = _compatible_dataset(params, args.data)
    samples = dataset.all_train() + dataset.all_test()
    if not samples:
        raise DataError("no samples to dump")
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    rng = RngStream(seed, "dump")
    if len(samples) > args.limit:
        idx = rng.choice(len(samples), args.limit, replace=False)
        samples = [samples[int(i)] for i in idx]
    _, z, _, _ = forward_arrays(params, samples)
    lines = ["scenario,label," + ",".join(f"z{i}" for i in range(z.shape[1]))]
    for i, s in enumerate(samples):
        lines.append(f"{s.scenario},{s.label},"
                     + ",".join(f"{v:.17g}" for v in z[i]))
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


_VARIANTS = [
    ("full", {}),
    ("no-g-loss", {"g_loss": False}),
    ("no-noise", {"noise": False}),
    ("no-weight", {"weight": False}),
    ("no-s-loss", {"s_loss": False}),
    ("baseline", {"lambda1": 0.0, "lambda2": 0.0}),
]


def cmd_ablate(args) -> int:
    """Train every ablation variant across consecutive seeds; summarize AUC."""
    if not args.data:
        raise ConfigError("ablate requires --data")
    if not args.out:
        raise ConfigError("ablate requires --out")
    base = resolve_train_config(args)
    os.makedirs(args.out, exist_ok=True)
    summary = ["variant,seed,scenario,auc"]
    for offset in range(args.seeds):
        seed = base.seed + offset
        for name, overrides in _VARIANTS:
            cfg = dataclasses.replace(base, **overrides, seed=seed)
            run_dir = os.path.join(args.out, name, f"seed-{seed}")
            result = _run_training(args, cfg, run_dir, quiet=True)
            last_epoch = max(r.epoch for r in result.rows)
            for r in result.rows:
                if r.epoch == last_epoch:
                    auc_s = "nan" if r.auc is None else f"{r.auc:.6f}"
                    summary.append(f"{name},{seed},{r.scenario},{auc_s}")
            print(f"{name} seed {seed}: done")
    path = os.path.join(args.out, "summary.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(summary) + "\n")
    print(f"wrote {path}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_train_flags(p: argparse.ArgumentParser) -> None:
    d = _TRAIN_DEFAULTS
    p.add_argument("--seed", type=int, default=None,
                   help=f"rng seed; HC2_SEED env is the fallback (default: {d.seed})")
    p.add_argument("--epochs", type=int, default=None,
                   help=f"training epochs (default: {d.epochs})")
    p.add_argument("--batch", dest="batch_size", type=int, default=None,
                   help=f"batch size (default: {d.batch_size})")
    p.add_argument("--lr", type=float, default=None,
                   help=f"learning rate (default: {d.lr})")
    p.add_argument("--tau", type=float, default=None,
                   help=f"contrastive temperature (default: {d.tau})")
    p.add_argument("--lambda1", type=float, default=None,
                   help=f"generalized loss coefficient (default: {d.lambda1})")
    p.add_argument("--lambda2", type=float, default=None,
                   help=f"individual loss coefficient (default: {d.lambda2})")
    p.add_argument("--negatives", type=int, default=None,
                   help=f"negatives per anchor (default: {d.negatives})")
    p.add_argument("--bank", dest="bank_capacity", type=int, default=None,
                   help=f"memory bank capacity (default: {d.bank_capacity})")
    p.add_argument("--clusters", type=int, default=None,
                   help=f"k-means cluster count (default: {d.clusters})")
    p.add_argument("--refresh", type=int, default=None,
                   help=f"steps between cluster refreshes (default: {d.refresh})")
    p.add_argument("--diff-steps", dest="diff_steps", type=int, default=None,
                   help=f"diffusion step count (default: {d.diff_steps})")
    p.add_argument("--beta-start", dest="beta_start", type=float, default=None,
                   help=f"first diffusion beta (default: {d.beta_start})")
    p.add_argument("--beta-end", dest="beta_end", type=float, default=None,
                   help=f"last diffusion beta (default: {d.beta_end})")
    p.add_argument("--dropout", type=float, default=None,
                   help=f"augmentation dropout rate (default: {d.dropout})")
    p.add_argument("--log-form", dest="log_form", type=_parse_bool, default=None,
                   metavar="BOOL",
                   help=f"use the log contrastive form (default: {str(d.log_form).lower()})")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hc2",
        description="Multi-scenario ranking trainer with hierarchical "
                    "contrastive objectives.")
    sub = parser.add_subparsers(dest="cmd")

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--config", default=None,
                   help="key = value config file (default: none)")
    p.add_argument("--out", default=None, help="output directory (required)")
    p.add_argument("--k", type=int, default=None,
                   help=f"scenario count (default: {_SYNTH_DEFAULTS.n_scenarios})")
    p.add_argument("--fields", type=int, default=None,
                   help=f"feature field count (default: {_SYNTH_DEFAULTS.n_fields})")
    p.add_argument("--vocab", type=int, default=None,
                   help=f"vocabulary size per field (default: {_SYNTH_DEFAULTS.vocab_sizes[0]})")
    p.add_argument("--a-shared", dest="a_shared", type=float, default=None,
                   help=f"shared signal strength (default: {_SYNTH_DEFAULTS.a_shared})")
    p.add_argument("--a-spec", dest="a_spec", type=float, default=None,
                   help=f"scenario signal strength (default: {_SYNTH_DEFAULTS.a_spec})")
    p.add_argument("--counts", type=_parse_int_tuple, default=None, metavar="N1,N2,...",
                   help="per-scenario sample counts (default: 2000 each, last 200)")
    p.add_argument("--noise-rate", dest="noise_rate", type=float, default=None,
                   help=f"label flip rate (default: {_SYNTH_DEFAULTS.noise_rate})")
    p.add_argument("--seed", type=int, default=None,
                   help=f"rng seed; HC2_SEED env is the fallback (default: {_SYNTH_DEFAULTS.seed})")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config", default=None,
                   help="key = value config file (default: none)")
    p.add_argument("--data", default=None,
                   help="dataset CSV or directory with train.csv/test.csv (required)")
    p.add_argument("--out", default=None, help="output directory (required)")
    p.add_argument("--ablate", default=None,
                   choices=sorted(ABLATION_FLAGS),
                   help="disable one mechanism (default: none)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a trained model")
    p.add_argument("--model", default=None, help="model file from train (required)")
    p.add_argument("--data", default=None, help="dataset CSV or directory (required)")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep ablation variants over seeds")
    p.add_argument("--config", default=None,
                   help="key = value config file (default: none)")
    p.add_argument("--data", default=None, help="dataset (required)")
    p.add_argument("--out", default=None, help="sweep output directory (required)")
    p.add_argument("--seeds", type=int, default=5,
                   help="number of consecutive seeds (default: 5)")
    _add_train_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("dump-reprs", help="dump shared representations to CSV")
    p.add_argument("--model", default=None, help="model file from train (required)")
    p.add_argument("--data", default=None, help="dataset CSV or directory (required)")
    p.add_argument("--out", default=None, help="output CSV (default: stdout)")
    p.add_argument("--limit", type=int, default=2000,
                   help="max rows, sampled without replacement (default: 2000)")
    p.add_argument("--seed", type=int, default=None,
                   help="rng seed for the subset draw; HC2_SEED fallback (default: 0)")
    p.set_defaults(func=cmd_dump_reprs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.cmd is None:
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2
    except HC2Error as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
