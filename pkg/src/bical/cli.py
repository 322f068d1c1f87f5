"""Command-line entry point.

    bical gen     synthesize a corpus
    bical vocab   build query/text vocabularies and the supervision cache
    bical train   two-stage training, metrics CSV and checkpoints
    bical probe   linear probe of a checkpoint's encoder on latent classes
    bical ablate  method-variant comparison over several seeds
    bical dedup   near-duplicate clip filtering

Every subcommand takes ``--config FILE`` (``key = value`` lines, keys spelled
like the long flags), and explicit flags override the file. Exit codes: 0 ok,
1 usage, 2 configuration, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import __version__
from .errors import BicalError, ConfigError

EXIT_OK, EXIT_USAGE, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in str(text).replace(" ", "").split(",") if v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _bool(text: str) -> bool:
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


SYNTH_OPTIONS = {
    "n_queries": (int, "number of queries"),
    "modes_per_query": (_int_list, "latent modes per query as LO,HI"),
    "samples_per_mode": (int, "samples drawn per mode"),
    "feature_dim": (int, "video feature dimension"),
    "title_dim": (int, "title feature dimension"),
    "isomorphism_rate": (float, "probability a title uses a cross-query template"),
    "polysemy_separation": (float, "distance between mode centers of one query"),
    "noise_sigma": (float, "video noise scale"),
    "title_noise_sigma": (float, "title noise scale (default: noise_sigma)"),
    "query_spread": (float, "spacing of video query anchors"),
    "title_query_spread": (float, "spacing of title query anchors"),
    "nuisance_dims": (int, "high-variance nuisance directions in video features"),
    "nuisance_sigma": (float, "scale of the nuisance directions"),
    "isomorphism_partner": (str, "mode | pair | sample"),
    "crossover_rate": (float, "probability a video depicts a mode of another query"),
}

TRAIN_OPTIONS = {
    "stage1_epochs": (int, "epochs of plain training"),
    "stage2_epochs": (int, "epochs of calibrated training"),
    "batch_size": (int, "minibatch size"),
    "lr": (float, "stage-1 learning rate"),
    "lr_stage2": (float, "stage-2 learning rate (default lr / 10)"),
    "lr_decay": (float, "multiplicative lr decay factor"),
    "lr_decay_every": (int, "steps between lr decays"),
    "momentum": (float, "SGD momentum"),
    "weight_decay": (float, "L2 weight decay"),
    "eps_q": (float, "query distance threshold"),
    "eps_t": (float, "text distance threshold"),
    "alpha": (float, "momentum of the running refined text label"),
    "w_q": (float, "query loss weight"),
    "w_t": (float, "text loss weight"),
    "hidden": (_int_list, "encoder hidden widths, comma separated"),
    "activation": (str, "tanh | relu | linear"),
    "disable_t2q": (bool, "force PLAIN where t2q would fire"),
    "disable_q2t": (bool, "force PLAIN where q2t would fire"),
}


def _add_options(p, table):
    for name, (typ, help_) in table.items():
        flag = "--" + name.replace("_", "-")
        if typ is bool:
            p.add_argument(flag, action=argparse.BooleanOptionalAction, default=None, help=help_)
        else:
            p.add_argument(flag, type=typ, default=None, help=help_)


def _picked(args, table) -> dict:
    return {k: getattr(args, k) for k in table if getattr(args, k) is not None}


def build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="key = value settings file")
    common.add_argument("--threads", type=int, default=None, help="cap on BLAS / worker threads")
    common.add_argument("--deterministic", action="store_true", default=False,
                        help="single-threaded, bit-reproducible execution")

    parser = _Parser(prog="bical", description="Bidirectional supervision calibration toolkit.")
    parser.add_argument("--version", action="version", version=f"bical {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("gen", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    _add_options(p, SYNTH_OPTIONS)

    p = sub.add_parser("vocab", parents=[common], help="build vocabularies and supervision")
    p.add_argument("--corpus", type=Path, help="corpus directory")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--k-max", type=int, default=8, help="largest cluster count tried per query")
    p.add_argument("--n-refs", type=int, default=10, help="reference draws for the gap statistic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--flatten", action=argparse.BooleanOptionalAction, default=False,
                   help="divide cosines by M instead of multiplying")

    p = sub.add_parser("train", parents=[common], help="two-stage training")
    p.add_argument("--corpus", type=Path, help="corpus directory")
    p.add_argument("--vocab", type=Path, help="directory written by `vocab`")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--resume", type=Path, default=None, help="checkpoint to continue from")
    _add_options(p, TRAIN_OPTIONS)

    p = sub.add_parser("probe", parents=[common], help="linear probe on frozen features")
    p.add_argument("--checkpoint", type=Path, help="checkpoint base path or its .json manifest")
    p.add_argument("--corpus", type=Path, help="corpus directory with latent classes")
    p.add_argument("--split", type=float, default=0.8, help="training fraction")
    p.add_argument("--reg", type=float, default=1e-3, help="L2 penalty of the probe")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="result JSON path")

    p = sub.add_parser("ablate", parents=[common], help="compare method variants over seeds")
    p.add_argument("--seeds", type=int, default=5, help="number of training seeds")
    p.add_argument("--first-seed", type=int, default=0)
    p.add_argument("--corpus-seed", type=int, default=None, help="synthetic corpus seed")
    p.add_argument("--vocab-seed", type=int, default=0)
    p.add_argument("--diagnostics", action=argparse.BooleanOptionalAction, default=True,
                   help="also run the untrained and the calibration-free two-stage baselines")
    p.add_argument("--out", type=Path, default=None, help="directory for ablation.json / .txt")
    _add_options(p, SYNTH_OPTIONS)
    _add_options(p, TRAIN_OPTIONS)

    p = sub.add_parser("dedup", parents=[common], help="drop corpus clips near downstream clips")
    p.add_argument("--corpus", type=Path, help="directory of clip directories")
    p.add_argument("--downstream", type=Path, help="directory of clip directories")
    p.add_argument("--threshold", type=float, default=2.0)
    p.add_argument("--seed", type=int, default=0, help="hyperplane seed")
    p.add_argument("--report", type=Path, help="report JSON path")
    return parser


# config files ---------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment, dashes in keys become underscores."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key in out:
            raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}", key=key)
        out[key] = value
    return out


def config_defaults(values: dict[str, str], parser: argparse.ArgumentParser) -> dict:
    """Convert raw config strings using the subcommand's own option types."""
    actions = {a.dest: a for a in parser._actions
               if a.option_strings and a.dest not in ("help", "config")}
    out = {}
    for key, raw in values.items():
        action = actions.get(key)
        if action is None:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse.BooleanOptionalAction)):
                value = _bool(raw)
            elif action.type is not None:
                value = action.type(raw)
            else:
                value = raw
        except (ValueError, TypeError, argparse.ArgumentTypeError) as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", key=key) from None
        if action.choices is not None and value not in action.choices:
            raise ConfigError(f"bad value for {key!r}: {raw!r}", key=key)
        out[key] = value
    return out


def parse_args(argv=None):
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError(parser.format_usage().strip() + "\nbical: error: a command is required")
    sub = _subparser(parser, args.command)
    if args.config is not None:
        sub.set_defaults(**config_defaults(read_config(args.config), sub))
        args = parser.parse_args(argv)
    return parser, sub, args


def _subparser(parser, name):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[name]
    raise KeyError(name)


def resolved_argv(sub: argparse.ArgumentParser, args) -> list[str]:
    """Explicit flag list reproducing ``args`` without the config file."""
    out = [args.command]
    for a in sub._actions:
        if not a.option_strings or a.dest in ("help", "config"):
            continue
        value = getattr(args, a.dest, None)
        flag = a.option_strings[0]
        if value is None:
            continue
        if isinstance(a, argparse.BooleanOptionalAction):
            out.append(flag if value else "--no-" + flag[2:])
        elif isinstance(a, argparse._StoreTrueAction):
            if value:
                out.append(flag)
        elif isinstance(value, tuple):
            out += [flag, ",".join(str(v) for v in value)]
        else:
            out += [flag, str(value)]
    return out


def _require(args, *names):
    missing = ["--" + n.replace("_", "-") for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError(f"bical {args.command}: error: missing required option(s) "
                         + ", ".join(missing))


def _as_config(factory, kwargs):
    """Build a config object, reporting validation failures as configuration errors."""
    try:
        return factory(**kwargs)
    except BicalError as exc:
        raise ConfigError(str(exc)) from None


# manifests ------------------------------------------------------------------

def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _files(paths) -> list[Path]:
    out = []
    for p in paths:
        p = Path(p)
        out += sorted(f for f in p.rglob("*") if f.is_file()) if p.is_dir() else [p]
    return out


def write_manifest(path, args, sub, config: dict, inputs, artifacts, started: str) -> Path:
    """Record what ran and what it read and wrote; every listed path must exist."""
    entries = {}
    for kind, paths in (("inputs", inputs), ("artifacts", artifacts)):
        files = _files(paths)
        for f in files:
            if not f.exists():
                raise BicalError(f"manifest references missing file {f}")
        entries[kind] = [{"path": str(f), "sha256": sha256_file(f)} for f in files]
    canon = json.dumps(config, sort_keys=True, default=str)
    manifest = {
        "tool": "bical", "version": __version__, "command": args.command,
        "argv": resolved_argv(sub, args),
        "seed": getattr(args, "seed", getattr(args, "first_seed", None)),
        "config": json.loads(canon),
        "config_sha256": hashlib.sha256(canon.encode()).hexdigest(),
        "deterministic": bool(args.deterministic), "threads": args.threads,
        **entries,
        "started": started, "finished": _now(),
    }
    path = Path(path)
    path.write_text(json.dumps(manifest, indent=1) + "\n", encoding="utf-8")
    return path


def _jobs(args) -> int:
    if args.deterministic:
        return 1
    return max(1, args.threads or 1)


# subcommands ----------------------------------------------------------------

def cmd_gen(args, sub) -> int:
    from .synth import SynthConfig, export_corpus, generate
    _require(args, "out")
    started = _now()
    cfg = _as_config(SynthConfig, {**_picked(args, SYNTH_OPTIONS), "seed": args.seed})
    corpus = generate(cfg)
    export_corpus(corpus, args.out)
    write_manifest(args.out / "manifest.json", args, sub, {"synth": cfg.to_dict()}, [],
                   [args.out / "corpus.jsonl", args.out / "corpus.bin"], started)
    print(f"wrote {len(corpus)} samples to {args.out}")
    return EXIT_OK


def cmd_vocab(args, sub) -> int:
    from .supervision import build_supervision, save_supervision
    from .synth import import_corpus
    from .vocab import build_query_vocabulary, build_text_vocabulary, save_vocabularies
    _require(args, "corpus", "out")
    if args.k_max < 1 or args.n_refs < 1:
        raise ConfigError("k_max and n_refs must be >= 1", key="k_max" if args.k_max < 1 else "n_refs")
    started = _now()
    corpus = import_corpus(args.corpus)
    qv = build_query_vocabulary(corpus)
    tv = build_text_vocabulary(corpus, qv, k_max=args.k_max, n_refs=args.n_refs, seed=args.seed,
                               n_jobs=_jobs(args))
    cache = build_supervision(corpus, qv, tv, sharpen=not args.flatten)
    save_vocabularies(args.out, qv, tv)
    save_supervision(args.out, cache)
    config = {"k_max": args.k_max, "n_refs": args.n_refs, "seed": args.seed,
              "flatten": args.flatten}
    outs = [args.out / n for n in ("vocab.json", "vocab.bin", "supervision.jsonl",
                                   "supervision.bin")]
    write_manifest(args.out / "manifest.json", args, sub, config,
                   [args.corpus / "corpus.jsonl", args.corpus / "corpus.bin"], outs, started)
    print(f"K={len(qv)} queries, M={tv.size} prototypes -> {args.out}")
    return EXIT_OK


def _load_training_inputs(args):
    from .supervision import load_supervision
    from .synth import import_corpus, stack
    from .trainer import TrainingData
    from .vocab import load_vocabularies
    corpus = import_corpus(args.corpus)
    qv, tv = load_vocabularies(args.vocab)
    cache = load_supervision(args.vocab)
    if cache.sample_ids != [s.sample_id for s in corpus]:
        raise BicalError("supervision cache does not match the corpus sample order")
    video, _ = stack(corpus)
    return TrainingData(video, cache), tv


def cmd_train(args, sub) -> int:
    from .trainer import TrainConfig, Trainer, read_log_csv, write_log_csv
    _require(args, "corpus", "vocab", "out")
    started = _now()
    args.out.mkdir(parents=True, exist_ok=True)
    cfg = _as_config(TrainConfig, {**_picked(args, TRAIN_OPTIONS), "seed": args.seed})
    data, tv = _load_training_inputs(args)
    log_path = args.out / "log.csv"
    if args.resume is not None:
        trainer = Trainer.load(_ckpt_base(args.resume), data, tv, cfg)
        previous = [r for r in read_log_csv(log_path) if r.step < trainer.step] \
            if log_path.exists() else []
    else:
        trainer = Trainer(data, tv, cfg)
        previous = []
    began_in_stage1 = trainer.stage == 1
    rows = []
    while not trainer.done and trainer.stage == 1:
        rows += trainer.run(max_steps=1)
    artifacts = []
    if began_in_stage1:
        trainer.save(args.out / "stage1")
        artifacts += [args.out / "stage1.json", args.out / "stage1.bin"]
    rows += trainer.run()
    trainer.save(args.out / "model")
    write_log_csv(previous + rows, log_path)
    artifacts += [args.out / "model.json", args.out / "model.bin", log_path]
    inputs = [args.corpus / "corpus.jsonl", args.corpus / "corpus.bin", args.vocab]
    if args.resume is not None:
        base = _ckpt_base(args.resume)
        inputs += [base.with_name(base.name + ".json"), base.with_name(base.name + ".bin")]
    write_manifest(args.out / "manifest.json", args, sub, {"train": cfg.to_dict()}, inputs,
                   artifacts, started)
    print(f"trained {trainer.step} steps -> {args.out / 'model'}")
    return EXIT_OK


def _ckpt_base(path: Path) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".json", ".bin") else path


def cmd_probe(args, sub) -> int:
    from .model import load_checkpoint
    from .probe import run_probe
    from .synth import import_corpus, latent_labels, stack
    _require(args, "checkpoint", "corpus", "out")
    if not 0 < args.split < 1:
        raise ConfigError("split must lie strictly between 0 and 1", key="split")
    if args.reg < 0:
        raise ConfigError("reg must be non-negative", key="reg")
    started = _now()
    base = _ckpt_base(args.checkpoint)
    params, _, _ = load_checkpoint(base)
    corpus = import_corpus(args.corpus)
    video, _ = stack(corpus)
    res = run_probe(params, video, latent_labels(corpus), split=args.split, reg=args.reg,
                    seed=args.seed)
    result = {"top1": res.top1, "top5": res.top5, "n_train": res.n_train,
              "n_eval": res.n_eval, "config": res.config}
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(json.dumps(result, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    inputs = [base.with_name(base.name + ".json"), base.with_name(base.name + ".bin"),
              args.corpus / "corpus.jsonl", args.corpus / "corpus.bin"]
    write_manifest(args.out.with_name(args.out.stem + ".manifest.json"), args, sub, res.config,
                   inputs, [args.out], started)
    print(f"top-1 {100 * res.top1:.2f}%  top-5 {100 * res.top5:.2f}%  ({res.n_eval} held out)")
    return EXIT_OK


def cmd_ablate(args, sub) -> int:
    from .ablation import (ACCEPTANCE_SYNTH, ACCEPTANCE_TRAIN, DIAGNOSTICS, VARIANTS,
                           run_ablation)
    from .synth import SynthConfig
    from .trainer import TrainConfig
    if args.seeds < 1:
        raise ConfigError("seeds must be >= 1", key="seeds")
    started = _now()
    synth = {**ACCEPTANCE_SYNTH, **_picked(args, SYNTH_OPTIONS)}
    if args.corpus_seed is not None:
        synth["seed"] = args.corpus_seed
    train = {**ACCEPTANCE_TRAIN, **_picked(args, TRAIN_OPTIONS)}
    synth_cfg = _as_config(SynthConfig, synth)
    _as_config(TrainConfig, train)
    variants = VARIANTS + (DIAGNOSTICS if args.diagnostics else ())
    result = run_ablation(synth_cfg, train, seeds=range(args.first_seed,
                                                        args.first_seed + args.seeds),
                          variants=variants, vocab_seed=args.vocab_seed,
                          progress=lambda m: print(m, file=sys.stderr))
    table = result.table()
    print(table)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "ablation.json").write_text(json.dumps(result.to_dict(), indent=1) + "\n",
                                                encoding="utf-8")
        (args.out / "ablation.txt").write_text(table + "\n", encoding="utf-8")
        write_manifest(args.out / "manifest.json", args, sub,
                       {"synth": result.synth, "train": result.train, "seeds": result.seeds},
                       [], [args.out / "ablation.json", args.out / "ablation.txt"], started)
    return EXIT_OK


def cmd_dedup(args, sub) -> int:
    from .dedup import N_BITS, dedup_filter, load_clips
    _require(args, "corpus", "downstream", "report")
    if args.threshold < 0:
        raise ConfigError("threshold must be >= 0", key="threshold")
    started = _now()
    corpus = load_clips(args.corpus)
    downstream = load_clips(args.downstream)
    res = dedup_filter(corpus, downstream, args.threshold, seed=args.seed, n_jobs=_jobs(args))
    report = {**res.to_dict(), "seed": args.seed, "n_bits": N_BITS,
              "n_corpus": len(corpus), "n_downstream": len(downstream)}
    args.report.parent.mkdir(parents=True, exist_ok=True)
    args.report.write_text(json.dumps(report, indent=1) + "\n", encoding="utf-8")
    write_manifest(args.report.with_name(args.report.stem + ".manifest.json"), args, sub,
                   {"threshold": args.threshold, "seed": args.seed}, [args.corpus, args.downstream],
                   [args.report], started)
    print(f"dropped {len(res.dropped)} of {len(corpus)} clips")
    return EXIT_OK


COMMANDS = {"gen": cmd_gen, "vocab": cmd_vocab, "train": cmd_train, "probe": cmd_probe,
            "ablate": cmd_ablate, "dedup": cmd_dedup}


def main(argv=None) -> int:
    try:
        _, sub, args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"bical: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.threads is not None and args.threads < 1:
        print("bical: config error: threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    limit = 1 if args.deterministic else args.threads
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=limit):
            return COMMANDS[args.command](args, sub)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"bical: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BicalError, OSError) as exc:
        print(f"bical: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
