#!/usr/bin/env python3
"""
🖥️ comateformer command line: generate, train, eval, gradcheck, ablate, export-attention
"""
import argparse
import json
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from ablation import ablate
from checkpoint import load_checkpoint, save_checkpoint
from combined_attention import AttentionMode
from gradcheck import run_gradient_suite
from matcher import EncodingMode, PairExample, PairInputError, compare_reports, evaluate
from run_config import RunConfig, load_run_config, run_config_from_document
from sentry_config import capture_run_error, get_logger, set_run_context
from synthetic_data import (
    GeneratorConfigError,
    SyntheticSpec,
    Vocabulary,
    generate,
    read_jsonl,
    summarize,
    write_jsonl,
)
from tensor_core import DomainError, TensorShapeError
from trainer import TrainingDivergedError, train

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_CHECK_FAILED = 3
EXIT_INTERNAL = 4

DATA_ERRORS = (
    ValidationError,
    DomainError,
    PairInputError,
    GeneratorConfigError,
    TensorShapeError,
    TrainingDivergedError,
    OSError,
    json.JSONDecodeError,
)


class UsageError(Exception):
    """Bad command-line usage: ranges, mode guards, malformed arguments"""
    pass


def _emit(payload) -> None:
    print(json.dumps(payload, indent=2))


def _load_model(path: str):
    params, document = load_checkpoint(path)
    config = run_config_from_document(document)
    return config, config.build_model(params)


# ============= Commands =============

def cmd_generate(args) -> int:
    spec = SyntheticSpec()
    if args.spec:
        document = json.loads(Path(args.spec).read_text())
        if "synthetic" in document:
            document = document["synthetic"]
        spec = SyntheticSpec.model_validate(document)
    if args.seed is not None:
        spec = spec.model_copy(update={"seed": args.seed})
    examples = generate(spec)
    write_jsonl(args.out, examples)
    _emit({"examples": len(examples), **summarize(examples)})
    return EXIT_OK


def cmd_train(args) -> int:
    config = load_run_config(args.config)
    if args.seed is not None:
        config = config.model_copy(update={"train": config.train.model_copy(update={"seed": args.seed})})
    dataset = read_jsonl(args.data, Vocabulary.from_spec(config.synthetic))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    model = config.build_model()
    document = config.to_document()
    report = train(model, dataset, config.train, run_config=document, variant=config.encoder.attention.label)
    save_checkpoint(out_dir / "checkpoint.json", model.params, document)
    (out_dir / "report.json").write_text(report.model_dump_json(indent=2))
    _emit({
        "best_epoch": report.best_epoch,
        "best_dev_accuracy": report.best_dev_accuracy,
        "steps": report.steps,
        "out": str(out_dir),
    })
    return EXIT_OK


def cmd_eval(args) -> int:
    config, model = _load_model(args.checkpoint)
    dataset = read_jsonl(args.data, Vocabulary.from_spec(config.synthetic))
    report = evaluate(dataset, model)
    payload = {"metrics": report.model_dump()}
    if args.baseline_checkpoint:
        _, baseline = _load_model(args.baseline_checkpoint)
        baseline_report = evaluate(dataset, baseline)
        payload["baseline_metrics"] = baseline_report.model_dump()
        payload["deltas"] = compare_reports(report, baseline_report)
    _emit(payload)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    config = load_run_config(args.config)
    report = run_gradient_suite(config, seed=args.seed, tolerance=args.tolerance, only=args.only)
    _emit({
        "passed": report.passed,
        "max_relative_error": report.max_relative_error,
        "components": {name: c.model_dump() for name, c in report.components.items()},
    })
    if not report.passed:
        logger.error(f"❌ Gradient check failed: {', '.join(report.failures())}")
        return EXIT_CHECK_FAILED
    return EXIT_OK


def cmd_ablate(args) -> int:
    config = load_run_config(args.config)
    dataset = read_jsonl(args.data, Vocabulary.from_spec(config.synthetic))
    table = ablate(config, dataset, workers=args.workers)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(table.to_rows(), indent=2))
    _emit({
        "rows": table.to_rows(),
        "family_accuracy": table.family_accuracy(),
        "data_fingerprint": table.data_fingerprint,
    })
    return EXIT_OK


def parse_pair(text: str, vocab: Vocabulary) -> PairExample:
    if text.count("|") != 1:
        raise UsageError('--pair must look like "q tokens | p tokens"')
    left, right = text.split("|")
    try:
        q, p = vocab.encode(left.split()), vocab.encode(right.split())
    except DomainError as e:
        raise UsageError(f"--pair: {e}") from e
    if not q or not p:
        raise UsageError("--pair needs tokens on both sides of |")
    return PairExample(tokens_q=q, tokens_p=p, label=0)


def export_attention(config: RunConfig, model, pair: PairExample, layer: Optional[int], head: int) -> Dict:
    """E (raw and as composed), N_norm and M of one combined head, restricted to the (Q rows × P columns) block"""
    vocab = Vocabulary.from_spec(config.synthetic)
    encoder = config.encoder

    if config.matcher.mode == EncodingMode.SIAMESE and layer is None:
        if config.encoder.attention.mode == AttentionMode.SOFTMAX_BASELINE:
            raise UsageError("softmax_baseline checkpoints have no difference matrix to export")
        trace = model.trace(pair)
        selected = trace.pair
    else:
        if config.matcher.mode == EncodingMode.SIAMESE:
            raise UsageError("siamese encoders attend within one sentence; omit --layer to export the pair-level matrices")
        if layer is None:
            raise UsageError("--layer is required in cross mode")
        if not 0 <= layer < encoder.num_layers:
            raise UsageError(f"--layer {layer} outside valid range 0..{encoder.num_layers - 1}")
        if not 0 <= head < encoder.num_heads:
            raise UsageError(f"--head {head} outside valid range 0..{encoder.num_heads - 1}")
        combined = encoder.replaced_heads(layer)
        if head >= combined:
            valid = f"0..{combined - 1}" if combined else "none"
            raise UsageError(
                f"head {head} of layer {layer} is a softmax head and has no difference matrix "
                f"(combined heads in this layer: {valid})"
            )
        trace = model.trace(pair)
        selected = trace.layers[layer][head]

    (q_lo, q_hi), (p_lo, p_hi) = trace.q_positions, trace.p_positions

    def block(matrix):
        return matrix[q_lo:q_hi, p_lo:p_hi].tolist()

    return {
        "tokens_q": vocab.decode(pair.tokens_q),
        "tokens_p": vocab.decode(pair.tokens_p),
        "layer": layer,
        "head": head,
        "composition": config.encoder.attention.label,
        "f_e": config.encoder.attention.f_e.value,
        "f_n": config.encoder.attention.f_n.value,
        "norm_variant": config.encoder.attention.norm_variant.value,
        "affinity": block(selected.e),
        "affinity_norm": block(selected.e_norm),
        "difference": block(selected.n_norm),
        "combined": block(selected.m),
    }


def cmd_export_attention(args) -> int:
    config, model = _load_model(args.checkpoint)
    pair = parse_pair(args.pair, Vocabulary.from_spec(config.synthetic))
    payload = export_attention(config, model, pair, args.layer, args.head)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(payload))
    logger.info(f"✅ Exported {len(payload['affinity'])}×{len(pair.tokens_p)} attention block to {out}")
    return EXIT_OK


# ============= Parser =============

class _Parser(argparse.ArgumentParser):
    """argparse that raises instead of exiting, so main() owns the exit code"""

    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="comateformer", description="Combined-attention sentence-pair matching on synthetic data")
    commands = parser.add_subparsers(dest="command", parser_class=_Parser)
    commands.required = True

    p = commands.add_parser("generate", help="write a synthetic JSONL dataset")
    p.add_argument("--spec", help="SyntheticSpec JSON (or a run config with a 'synthetic' section)")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_generate)

    p = commands.add_parser("train", help="train a matcher; writes checkpoint.json and report.json")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("eval", help="accuracy, per-tag breakdown and confusion matrix")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--baseline-checkpoint", help="report per-tag accuracy deltas against this checkpoint")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--only", nargs="*", help="component name prefixes, e.g. op. attend model.")
    p.set_defaults(handler=cmd_gradcheck)

    p = commands.add_parser("ablate", help="composition-function ablation grid")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(handler=cmd_ablate)

    p = commands.add_parser("export-attention", help="dump E, N and M of one combined head as JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair", required=True, help='"q tokens | p tokens"')
    p.add_argument("--layer", type=int, help="0-based encoder layer (cross mode)")
    p.add_argument("--head", type=int, default=0, help="0-based head")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_export_attention)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = build_parser().parse_args(argv)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE

    set_run_context(args.command, argv=argv)
    try:
        return args.handler(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DATA_ERRORS as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except Exception as e:
        logger.error(f"❌ Unexpected failure in {args.command}: {e}")
        capture_run_error(e, {"command": args.command, "argv": argv})
        logger.debug("Traceback of the unexpected failure", exc_info=True)
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_INTERNAL
