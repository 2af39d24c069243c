"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical fault.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint
from .corpus import (
    CorpusManifest,
    LanguageProfile,
    PunctuationInventory,
    build_punct_inventory,
    default_profile,
    make_training_windows,
    normalize_text,
    sha256_file,
)
from .corruption import RemovalPolicy, corrupt_with_punct
from .encoder import ConfigurationError, EncoderConfig, EncoderModel, NumericalFault
from .evaluation import (
    EvalDocument,
    RestorerWeights,
    build_paragraphs,
    eval_restorer,
    evaluate_predictions,
    fewshot_curve,
    fit_restorer,
    format_report,
    load_eval_file,
    naive_segment,
    none_segment,
    rule_segment,
    report_csv,
)
from .metrics import UndefinedRecallError
from .segmenter import (
    AdapterWeights,
    ConvergenceError,
    SegmenterConfig,
    SingleClassError,
    fit_punct_adapter,
    segment,
    sentence_spans,
    tune_threshold,
)
from .trainer import TrainConfig, prepare_corpus, train

log = logging.getLogger("nlseg")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
MODE_NAMES = {"u": "U", "t": "T", "punct": "Punct"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common(p):
    p.add_argument("--run-dir", default="nlseg_runs", help="directory for run manifests (default: %(default)s)")
    p.add_argument("--no-run-manifest", action="store_true", help="do not write a run manifest")
    p.add_argument("-v", "--verbose", action="store_true")


def _model_args(p, required=True):
    p.add_argument("--model", required=required, help="checkpoint file or training output directory")
    p.add_argument("--lang", default=None, help="language id (default: from file name or 'xx')")
    p.add_argument("--window", type=int, default=None, help="inference window length (default: model max_len)")
    p.add_argument("--stride", type=int, default=None, help="inference stride (default: window/2)")


def _mode_args(p):
    p.add_argument("--mode", choices=sorted(MODE_NAMES), default="u")
    p.add_argument("--alpha", type=float, default=0.01, help="newline-probability threshold for modes u/t")
    p.add_argument("--adapter", default=None, help="adapter JSON for mode punct")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="nlseg", description="Punctuation-agnostic sentence segmentation trained on newlines.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a newline (and punctuation) predictor")
    _common(p)
    p.add_argument("--manifest", required=True, help="corpus manifest JSON")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--steps", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--no-aux", action="store_true", help="drop the auxiliary punctuation objective")
    p.add_argument("--punct-corruption", action="store_true",
                   help="with --no-aux: still remove punctuation from the input")
    p.add_argument("--no-punct-sampling", action="store_true",
                   help="do not cap the share of paragraphs not ending in punctuation")
    p.add_argument("--layers", type=int, default=3)
    p.add_argument("--adapters", action="store_true", help="per-language adapters")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--heads", type=int, default=4)
    p.add_argument("--embed-buckets", type=int, default=16384)
    p.add_argument("--window", type=int, default=256, help="training window length in characters")
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3, help="peak learning rate")
    p.add_argument("--warmup", type=int, default=None, help="linear warmup steps (default: 10%% of --steps)")
    p.add_argument("--adapter-warmup", type=int, default=0, help="adapter-only warmup steps")
    p.add_argument("--p", type=float, default=0.5, help="punctuation removal probability")
    p.add_argument("--label-literal", action="store_true", help="do not look through removed punctuation")
    p.add_argument("--k", type=int, default=30, help="punctuation characters per language")
    p.add_argument("--inventory", default=None, help="existing inventory JSON (default: build from corpus)")
    p.add_argument("--eval-every", type=int, default=100)

    p = sub.add_parser("segment", help="segment stdin into sentences, one per line")
    _common(p)
    _model_args(p)
    _mode_args(p)
    p.add_argument("--json", action="store_true", help="emit JSON lines with start/end offsets")

    p = sub.add_parser("adapt", help="fit the punctuation-logit adapter on gold sentences")
    _common(p)
    _model_args(p)
    p.add_argument("--train-file", required=True, help="gold file: one sentence per line, blank line between documents")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None, help="use a random sample of N sentences")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--paragraphs", type=int, default=10, help="sentences per paragraph when sampling")
    p.add_argument("--tune-punct-threshold", action="store_true")

    p = sub.add_parser("tune-threshold", help="print the F1-maximizing newline threshold")
    _common(p)
    _model_args(p)
    p.add_argument("--gold", required=True)

    p = sub.add_parser("evaluate", help="boundary F1 against gold segmentation")
    _common(p)
    _model_args(p, required=False)
    _mode_args(p)
    p.add_argument("--gold", required=True)
    p.add_argument("--baseline", choices=["rule", "naive", "none"], default=None)
    p.add_argument("--paragraphs", type=int, default=None, help="regroup gold sentences into paragraphs of K")
    p.add_argument("--naive-k", type=int, default=10)
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.add_argument("--out", default=None)

    p = sub.add_parser("fewshot", help="F1 vs number of adaptation sentences")
    _common(p)
    _model_args(p)
    p.add_argument("--train-file", required=True)
    p.add_argument("--test-file", required=True)
    p.add_argument("--n", default="16,64,256,1024", help="comma-separated sample sizes")
    p.add_argument("--repeats", type=int, default=20)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", default=None, help="CSV path (default: stdout)")

    p = sub.add_parser("restore-punct", help="fit or evaluate comma/period/question restoration")
    _common(p)
    _model_args(p)
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--fit", action="store_true")
    g.add_argument("--eval", action="store_true")
    p.add_argument("--data", required=True, help="punctuated text, one paragraph per line")
    p.add_argument("--restorer", required=True, help="restorer JSON (written by --fit, read by --eval)")

    p = sub.add_parser("corrupt", help="dump corrupted windows of stdin as JSON lines")
    _common(p)
    p.add_argument("--p", type=float, default=0.5)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--inventory", default=None, help="inventory JSON (default: built from the input)")
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--lang", default="xx")
    p.add_argument("--window", type=int, default=512)
    p.add_argument("--label-literal", action="store_true")

    p = sub.add_parser("inventory", help="build the punctuation inventory of a corpus")
    _common(p)
    p.add_argument("--manifest", required=True)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--out", default=None, help="JSON path (default: stdout)")
    return parser


# -- helpers -----------------------------------------------------------------


def _git_describe() -> str:
    try:
        r = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"], cwd=Path(__file__).parent,
                           capture_output=True, text=True, timeout=10)
        return r.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _jsonable_args(args) -> dict:
    return {k: (str(v) if isinstance(v, Path) else v) for k, v in sorted(vars(args).items())
            if k not in ("run_dir", "no_run_manifest", "verbose")}


def _input_hashes(paths) -> dict:
    out = {}
    for p in paths:
        if p and Path(p).is_file():
            out[str(p)] = sha256_file(p)
    return out


def write_run_manifest(args, inputs=(), extra=None) -> Path | None:
    if args.no_run_manifest:
        return None
    flags = _jsonable_args(args)
    data = {
        "tool": "nlseg",
        "version": __version__,
        "subcommand": args.command,
        "flags": flags,
        "seed": flags.get("seed"),
        "input_hashes": _input_hashes(inputs),
        "git_describe": _git_describe(),
    }
    if extra:
        data.update(extra)
    key = hashlib.sha256(json.dumps(flags, sort_keys=True).encode()).hexdigest()[:12]
    run_dir = Path(args.run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / f"{args.command}-{key}.json"
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def _checkpoint_path(model: str) -> Path:
    p = Path(model)
    return p / "model.ckpt" if p.is_dir() else p


def _load_model(args):
    path = _checkpoint_path(args.model)
    model, _ = load_checkpoint(path)
    return model, path


def _seg_config(args, model=None) -> SegmenterConfig:
    mode = MODE_NAMES[getattr(args, "mode", "u")]
    adapter = None
    if mode == "Punct":
        if not args.adapter:
            raise UsageError("--mode punct needs --adapter")
        adapter = AdapterWeights.load(args.adapter)
        if model is not None and adapter.inventory_hash and adapter.inventory_hash != model.inventory.hash:
            raise ValueError("adapter was fitted for a different punctuation inventory")
    return SegmenterConfig(mode=mode, alpha=getattr(args, "alpha", 0.01), adapter=adapter,
                           window_len=args.window, stride=args.stride, lang_id=args.lang)


def _lang_for(args, path) -> str:
    return args.lang or Path(path).stem


# -- subcommands -------------------------------------------------------------


def cmd_train(args) -> int:
    manifest = CorpusManifest.load(args.manifest)
    paragraphs = manifest.read()
    profiles = {p.lang_id: p for p in manifest.profiles}
    if args.inventory:
        inventory = PunctuationInventory.load(args.inventory)
    else:
        inventory = build_punct_inventory(
            {lang: normalize_text("\n".join(x.text for x in paras), profiles[lang])
             for lang, paras in paragraphs.items()},
            args.k,
        )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inventory.save(out / "inventory.json")

    warmup = args.warmup if args.warmup is not None else args.steps // 10
    cfg = TrainConfig(
        total_steps=args.steps, batch_size=args.batch_size, window_len=args.window, peak_lr=args.lr,
        adapter_warmup_steps=args.adapter_warmup if args.adapters else 0,
        full_warmup_steps=min(warmup, args.steps - (args.adapter_warmup if args.adapters else 0)),
        rng_seed=args.seed, eval_every=args.eval_every, use_aux_objective=not args.no_aux,
        punct_removal_p=args.p, punct_corruption_without_aux=args.punct_corruption,
        label_literal=args.label_literal,
    )
    enc = EncoderConfig(
        num_layers=args.layers, hidden_dim=args.hidden, num_heads=args.heads, max_len=args.window,
        embed_buckets=args.embed_buckets, use_lang_adapters=args.adapters,
        use_aux_objective=not args.no_aux, languages=[p.lang_id for p in manifest.profiles],
    )
    corpus = prepare_corpus(paragraphs, profiles, inventory, args.window,
                            punct_sampling=not args.no_punct_sampling, seed=args.seed)
    model = EncoderModel(enc, inventory, seed=args.seed)
    run = {
        "train_config": cfg.to_dict(),
        "encoder_config": enc.to_dict(),
        "corpus_hashes": manifest.file_hashes(),
        "corpus_stats": corpus.stats,
        "inventory_hash": inventory.hash,
        "git_describe": _git_describe(),
        "seed": args.seed,
        "flags": _jsonable_args(args),
    }
    (out / "run_manifest.json").write_text(json.dumps(run, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    write_run_manifest(args, [args.manifest, *manifest.paths.values()], {"corpus_stats": corpus.stats})
    train(corpus, model, cfg, checkpoint_path=out / "model.ckpt", trace_path=out / "loss_trace.csv")
    log.info("wrote %s", out / "model.ckpt")
    return EXIT_OK


def cmd_segment(args) -> int:
    data = sys.stdin.read()
    write_run_manifest(args, [_checkpoint_path(args.model), args.adapter])
    if not data.strip():
        return EXIT_OK
    model, _ = _load_model(args)
    cfg = _seg_config(args, model)
    lang = args.lang or "xx"
    profile = default_profile(lang)
    offset = 0
    out = sys.stdout
    for line in data.split("\n"):
        if line.strip():
            bounds = segment(model, line, cfg, lang if model.config.use_lang_adapters else args.lang)
            for s, e in sentence_spans(line, bounds, profile):
                if args.json:
                    out.write(json.dumps({"start": offset + s, "end": offset + e, "text": line[s:e]},
                                         ensure_ascii=False) + "\n")
                else:
                    out.write(line[s:e] + "\n")
        offset += len(line) + 1
    return EXIT_OK


def cmd_adapt(args) -> int:
    if args.n is not None and args.seed is None:
        raise UsageError("--n samples sentences at random and needs an explicit --seed")
    model, mpath = _load_model(args)
    lang = _lang_for(args, args.train_file)
    docs = load_eval_file(args.train_file, lang)
    if args.n is not None:
        sents = [s for d in docs for s in d.sentences]
        if args.n > len(sents):
            raise ValueError(f"--n {args.n} exceeds the {len(sents)} available sentences")
        rng = np.random.default_rng(args.seed)
        idx = np.sort(rng.choice(len(sents), size=args.n, replace=False))
        golds = build_paragraphs([EvalDocument([sents[i] for i in idx], lang)], args.paragraphs)
    else:
        golds = [d.to_gold() for d in docs]
    cfg = SegmenterConfig(window_len=args.window, stride=args.stride, lang_id=lang)
    adapter = fit_punct_adapter(model, golds, cfg, tune_threshold=args.tune_punct_threshold)
    adapter.save(args.out)
    write_run_manifest(args, [mpath, args.train_file])
    return EXIT_OK


def cmd_tune_threshold(args) -> int:
    model, mpath = _load_model(args)
    lang = _lang_for(args, args.gold)
    golds = [d.to_gold() for d in load_eval_file(args.gold, lang)]
    alpha = tune_threshold(model, golds, SegmenterConfig(window_len=args.window, stride=args.stride))
    print(repr(alpha))
    write_run_manifest(args, [mpath, args.gold], {"alpha": alpha})
    return EXIT_OK


def cmd_evaluate(args) -> int:
    lang = _lang_for(args, args.gold)
    docs = load_eval_file(args.gold, lang)
    golds = build_paragraphs(docs, args.paragraphs) if args.paragraphs else [d.to_gold() for d in docs]
    inputs = [args.gold]
    if args.baseline:
        name = args.baseline
        profile = default_profile(lang)
        fns = {
            "rule": lambda gt: rule_segment(gt.text, profile),
            "naive": lambda gt: naive_segment(gt.text, args.naive_k, profile),
            "none": lambda gt: none_segment(gt.text),
        }
        report = evaluate_predictions(golds, fns[name])
    else:
        if not args.model:
            raise UsageError("evaluate needs --model unless --baseline is given")
        model, mpath = _load_model(args)
        inputs += [mpath, args.adapter]
        cfg = _seg_config(args, model)
        name = cfg.mode
        report = evaluate_predictions(golds, lambda gt: segment(model, gt.text, cfg, gt.lang_id))
    rows = [(name, report)]
    text = report_csv(rows) if args.format == "csv" else format_report(rows)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    write_run_manifest(args, inputs)
    return EXIT_OK


def cmd_fewshot(args) -> int:
    try:
        n_list = [int(x) for x in args.n.split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--n must be comma-separated integers, got {args.n!r}") from None
    model, mpath = _load_model(args)
    train_docs = load_eval_file(args.train_file, _lang_for(args, args.train_file))
    test_docs = load_eval_file(args.test_file, _lang_for(args, args.test_file))
    cfg = SegmenterConfig(window_len=args.window, stride=args.stride)
    report = fewshot_curve(model, train_docs, test_docs, n_list, args.repeats, args.seed, cfg)
    text = report.to_csv()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    write_run_manifest(args, [mpath, args.train_file, args.test_file])
    return EXIT_OK


def cmd_restore(args) -> int:
    model, mpath = _load_model(args)
    with open(args.data, encoding="utf-8") as f:
        texts = [line.strip() for line in f if line.strip()]
    cfg = SegmenterConfig(window_len=args.window, stride=args.stride)
    if args.fit:
        fit_restorer(model, texts, cfg, args.lang).save(args.restorer)
    else:
        report = eval_restorer(model, RestorerWeights.load(args.restorer), texts, cfg, args.lang)
        sys.stdout.write(format_report(list(report.items())))
    write_run_manifest(args, [mpath, args.data] + ([args.restorer] if args.eval else []))
    return EXIT_OK


def cmd_corrupt(args) -> int:
    profile = LanguageProfile(args.lang, uses_whitespace=default_profile(args.lang).uses_whitespace)
    text = normalize_text(sys.stdin.read(), profile)
    if args.inventory:
        inventory = PunctuationInventory.load(args.inventory)
    else:
        inventory = build_punct_inventory({args.lang: text}, args.k)
    rng = np.random.default_rng(args.seed)
    for w in make_training_windows(text, args.window, args.lang) if text else []:
        policy = RemovalPolicy(inventory, args.p, int(rng.integers(2**63)), args.label_literal)
        sys.stdout.write(corrupt_with_punct(w.text, policy).to_json() + "\n")
    write_run_manifest(args, [args.inventory])
    return EXIT_OK


def cmd_inventory(args) -> int:
    manifest = CorpusManifest.load(args.manifest)
    paragraphs = manifest.read()
    profiles = {p.lang_id: p for p in manifest.profiles}
    inventory = build_punct_inventory(
        {lang: normalize_text("\n".join(x.text for x in paras), profiles[lang]) for lang, paras in paragraphs.items()},
        args.k,
    )
    if args.out:
        inventory.save(args.out)
    else:
        sys.stdout.write(inventory.to_json() + "\n")
    write_run_manifest(args, [args.manifest, *manifest.paths.values()])
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "segment": cmd_segment,
    "adapt": cmd_adapt,
    "tune-threshold": cmd_tune_threshold,
    "evaluate": cmd_evaluate,
    "fewshot": cmd_fewshot,
    "restore-punct": cmd_restore,
    "corrupt": cmd_corrupt,
    "inventory": cmd_inventory,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code if isinstance(e.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        print(f"nlseg {args.command}: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalFault, ConvergenceError, FloatingPointError) as e:
        print(f"nlseg {args.command}: numerical fault: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, KeyError, OSError, CheckpointError, ConfigurationError, UndefinedRecallError,
            SingleClassError, json.JSONDecodeError) as e:
        print(f"nlseg {args.command}: data error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
