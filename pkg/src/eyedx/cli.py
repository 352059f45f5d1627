"""Command-line surface for the report-to-diagnosis pipeline.

Five subcommands: prepare (corpus ingestion/synthesis and splitting), train
(LoRA fine-tuning), infer (single-report diagnosis), evaluate (ROUGE
comparison across checkpoints), and bench (wall-time measurements).

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import statistics
import sys
import time
import typing
from dataclasses import fields, replace
from pathlib import Path

from .container import load_bundle, save_model
from .corpus import (
    DEFAULT_TEMPLATE,
    MODALITIES,
    dedup,
    ingest,
    load_template,
    modality_counts,
    render_prompt,
    split,
    synthesize,
    write_jsonl,
)
from .errors import DataError, NumericError
from .lora import attach, load_adapter, merge, save_adapter
from .model import Model, ModelConfig, init_params
from .quant import QuantizedModel, quantize_model
from .rouge import evaluate as evaluate_corpus
from .rouge import format_table, write_report
from .sample import DecodeParams, decode
from .tokenizer import BOS_ID, build
from .train import TrainConfig, train


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse normally exits 2 on bad flags; route that through exit code 1."""

    def error(self, message):
        raise _UsageError(message)


# ------------------------------------------------------------------ helpers


def _read_records(data_dir, name: str):
    path = Path(data_dir) / f"{name}.jsonl"
    if not path.exists():
        raise DataError(f"{path} not found; run prepare first")
    records = ingest(path)
    if not records:
        raise DataError(f"{path} contains no records")
    return records


def _template_from(args):
    return load_template(args.template) if args.template else DEFAULT_TEMPLATE


def _load_model_with_vocab(path):
    model, vocab = load_bundle(path)
    if vocab is None:
        raise DataError(f"{path} carries no vocabulary; re-export it with one")
    return model, vocab


def _merge_adapter(model, model_path, adapter_path):
    if not isinstance(model, Model):
        raise DataError(f"{model_path} is quantized; adapters need a float checkpoint")
    attach(model, adapter=load_adapter(adapter_path))
    merge(model)


def _add_decode_flags(parser):
    d = DecodeParams
    parser.add_argument("--temperature", type=float, default=None,
                        help=f"softmax temperature (default {d.temperature})")
    parser.add_argument("--max-new-tokens", type=int, default=None,
                        help=f"generation budget, clamped to the context window (default {d.max_new_tokens})")
    parser.add_argument("--repetition-penalty", type=float, default=None,
                        help=f"penalty on already-seen tokens (default {d.repetition_penalty})")
    parser.add_argument("--top-k", type=int, default=None,
                        help=f"keep the k most likely tokens (default {d.top_k})")
    parser.add_argument("--top-p", type=float, default=None,
                        help=f"nucleus mass to keep (default {d.top_p})")
    parser.add_argument("--seed", type=int, default=None,
                        help=f"sampling seed (default {d.seed})")


def _decode_params(args) -> DecodeParams:
    values = {}
    for name in ("temperature", "max_new_tokens", "repetition_penalty", "top_k", "top_p", "seed"):
        value = getattr(args, name)
        if value is not None:
            values[name] = value
    return DecodeParams(**values)


def _generate(model, vocab, prompt_text: str, params: DecodeParams) -> list[int]:
    ids = [BOS_ID] + vocab.encode(prompt_text)
    room = model.config.max_seq_len - len(ids)
    if room <= 0:
        raise DataError(
            f"prompt needs {len(ids)} tokens but the context window is {model.config.max_seq_len}"
        )
    budget = min(params.max_new_tokens, room)
    return decode(model, ids, replace(params, max_new_tokens=budget))


def _parse_config_file(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"config file not found: {path}")
    hints = typing.get_type_hints(TrainConfig)
    valid = {f.name for f in fields(TrainConfig)}
    values: dict = {}
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        name, eq, value = line.partition("=")
        name, value = name.strip(), value.strip()
        if not eq or not name or not value:
            raise DataError(f"{path}:{lineno}: expected 'name = value'")
        if name not in valid:
            raise DataError(f"{path}:{lineno}: unknown config key {name!r} (valid: {sorted(valid)})")
        try:
            values[name] = hints[name](value)
        except ValueError as exc:
            raise DataError(f"{path}:{lineno}: bad value for {name}: {value!r}") from exc
    return values


def _train_config(args) -> TrainConfig:
    values = _parse_config_file(args.config) if args.config else {}
    for f in fields(TrainConfig):
        flag = getattr(args, f.name)
        if flag is not None:
            values[f.name] = flag
    return TrainConfig(**values)


# ----------------------------------------------------------------- commands


def _cmd_prepare(args):
    if (args.input is None) == (args.synthesize is None):
        raise _UsageError("prepare needs exactly one of --input or --synthesize")
    if args.synthesize is not None:
        records = synthesize(args.synthesize, seed=args.seed)
    else:
        records = ingest(args.input)
    records = dedup(records)
    parts = split(records, ratio=args.ratio, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(parts.train, out / "train.jsonl")
    write_jsonl(parts.test, out / "test.jsonl")
    manifest = {
        "seed": args.seed,
        "ratio": args.ratio,
        "total": len(records),
        "train": {"total": len(parts.train), "by_modality": modality_counts(parts.train)},
        "test": {"total": len(parts.test), "by_modality": modality_counts(parts.test)},
    }
    (out / "manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(parts.train)} train / {len(parts.test)} test records to {out}")


def _cmd_train(args):
    records = _read_records(args.data, "train")
    template = _template_from(args)
    config = _train_config(args)

    if args.model:
        model, vocab = _load_model_with_vocab(args.model)
        if not isinstance(model, Model):
            raise DataError(f"{args.model} is quantized; fine-tuning needs a float checkpoint")
    else:
        texts = [" ".join(render_prompt(r, template)) for r in records]
        vocab = build(texts)
        model_config = ModelConfig(vocab_size=vocab.size, max_seq_len=config.max_seq_len)
        model = Model(model_config, init_params(model_config, seed=config.seed))
        model_out = Path(args.model_out) if args.model_out else Path(args.out).parent / "model.olm"
        save_model(model, model_out, vocab=vocab)
        print(f"initialized base model {model_out} (vocab {vocab.size})")
    if config.max_seq_len > model.config.max_seq_len:
        raise DataError(
            f"max_seq_len {config.max_seq_len} exceeds the model's window "
            f"{model.config.max_seq_len}"
        )

    attach(model, rank=config.lora_r, alpha=config.lora_alpha, seed=config.seed)
    log_lines: list[str] = []

    def log(line: str):
        log_lines.append(line)
        print(line)

    result = train(model, records, vocab, config, template=template, log=log)
    save_adapter(result.adapter, args.out)
    log_path = Path(args.log) if args.log else Path(str(args.out) + ".log")
    log_path.write_text("".join(line + "\n" for line in log_lines), encoding="utf-8")
    final = result.loss_history[-1] if result.loss_history else float("nan")
    print(
        f"saved adapter to {args.out}: {result.steps} steps, final loss {final:.4f}, "
        f"{result.tokens_seen} tokens in {result.seconds:.1f}s"
    )


def _cmd_infer(args):
    model, vocab = _load_model_with_vocab(args.model)
    if args.adapter:
        _merge_adapter(model, args.model, args.adapter)
    if args.quant:
        if not isinstance(model, Model):
            raise DataError(f"{args.model} is already quantized")
        model = QuantizedModel(model.config, quantize_model(model.params, model.config))

    findings = args.report
    if findings.startswith("@"):
        path = Path(findings[1:])
        if not path.exists():
            raise DataError(f"report file not found: {path}")
        findings = path.read_text(encoding="utf-8")
    findings = findings.strip()
    if not findings:
        raise DataError("empty report text")

    template = _template_from(args)
    prompt_text = (
        template.instruction.format(modality=args.modality, findings=findings)
        + template.response_prefix
    )
    out_ids = _generate(model, vocab, prompt_text, _decode_params(args))
    print(vocab.decode(out_ids))


def _cmd_evaluate(args):
    adapters = args.adapter or ["-"] * len(args.model)
    if len(adapters) != len(args.model):
        raise _UsageError("--adapter count must match --model count (use '-' for none)")
    records = _read_records(args.data, "test")
    if args.limit is not None:
        if args.limit < 1:
            raise _UsageError("--limit must be >= 1")
        records = records[: args.limit]
    template = _template_from(args)
    params = _decode_params(args)

    rows = []
    for model_path, adapter_path in zip(args.model, adapters):
        model, vocab = _load_model_with_vocab(model_path)
        name = Path(model_path).stem
        if adapter_path != "-":
            _merge_adapter(model, model_path, adapter_path)
            name += "+" + Path(adapter_path).stem
        report = evaluate_corpus(model, records, vocab, template=template, params=params)
        rows.append((name, report))

    print(format_table(rows), end="")
    write_report(args.out, rows)
    print(f"wrote {args.out}")


def _cmd_bench(args):
    train_records = _read_records(args.data, "train")[:32]
    test_records = _read_records(args.data, "test")[:8]
    template = _template_from(args)

    model, vocab = _load_model_with_vocab(args.model)
    if not isinstance(model, Model):
        raise DataError(f"{args.model} is quantized; bench fine-tunes a float checkpoint")
    tune_config = TrainConfig(epochs=1, grad_accum_steps=4, seed=args.seed)
    attach(model, rank=tune_config.lora_r, alpha=tune_config.lora_alpha, seed=tune_config.seed)
    tuned = train(model, train_records, vocab, tune_config, template=template)

    # Time inference on a fresh load so the throwaway adapter plays no part.
    model, vocab = _load_model_with_vocab(args.model)
    if args.adapter:
        _merge_adapter(model, args.model, args.adapter)
    params = DecodeParams(seed=args.seed)
    latencies = []
    generated = 0
    for record in test_records:
        prompt_text, _ = render_prompt(record, template)
        start = time.perf_counter()
        out_ids = _generate(model, vocab, prompt_text, params)
        latencies.append(time.perf_counter() - start)
        generated += len(out_ids)
    mean = statistics.fmean(latencies)
    spread = statistics.stdev(latencies) if len(latencies) > 1 else 0.0

    print("| phase | seconds |")
    print("| --- | --- |")
    print(
        f"| fine-tune ({len(train_records)} reports, {tune_config.epochs} epoch, "
        f"{tuned.tokens_seen} tokens) | {tuned.seconds:.2f} |"
    )
    print(
        f"| inference per report ({len(test_records)} reports, {generated} tokens generated) "
        f"| {mean:.3f} ± {spread:.3f} |"
    )


# ------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eyedx", description="Report-to-diagnosis pipeline.")
    sub = parser.add_subparsers(dest="command", metavar="command", required=True)

    p = sub.add_parser("prepare", help="ingest or synthesize reports and write a train/test split")
    p.add_argument("--input", help="JSON-lines report file to ingest")
    p.add_argument("--synthesize", type=int, metavar="N",
                   help="generate N synthetic reports per modality instead")
    p.add_argument("--seed", type=int, default=0, help="synthesis and split seed (default 0)")
    p.add_argument("--ratio", type=float, default=0.6, help="train fraction (default 0.6)")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_prepare)

    p = sub.add_parser("train", help="LoRA-fine-tune on a prepared corpus")
    p.add_argument("--data", required=True, help="directory written by prepare")
    p.add_argument("--out", required=True, help="adapter file to write")
    p.add_argument("--config", help="key = value file; keys mirror the training fields")
    p.add_argument("--model", help="base model checkpoint (default: initialize a fresh one)")
    p.add_argument("--model-out", help="where to write a fresh base model (default: model.olm beside the adapter)")
    p.add_argument("--log", help="loss log file (default: adapter path + .log)")
    p.add_argument("--template", help="prompt template file")
    t = TrainConfig
    p.add_argument("--learning-rate", type=float, default=None,
                   help=f"Adam learning rate (default {t.learning_rate})")
    p.add_argument("--batch-size", type=int, default=None,
                   help=f"records per micro-batch (default {t.batch_size})")
    p.add_argument("--max-seq-len", type=int, default=None,
                   help=f"token window per record (default {t.max_seq_len})")
    p.add_argument("--grad-accum-steps", type=int, default=None,
                   help=f"micro-batches per optimizer step (default {t.grad_accum_steps})")
    p.add_argument("--lora-r", type=int, default=None, help=f"adapter rank (default {t.lora_r})")
    p.add_argument("--lora-alpha", type=float, default=None,
                   help=f"adapter scale numerator (default {t.lora_alpha})")
    p.add_argument("--epochs", type=int, default=None, help=f"passes over the data (default {t.epochs})")
    p.add_argument("--seed", type=int, default=None, help=f"shuffle/init seed (default {t.seed})")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("infer", help="generate a diagnosis for one report")
    p.add_argument("--model", required=True, help="model checkpoint (float or quantized)")
    p.add_argument("--adapter", help="LoRA adapter to merge before decoding")
    p.add_argument("--quant", action="store_true", help="quantize weights to int4 before decoding")
    p.add_argument("--report", required=True, help="findings text, or @path to read a file")
    p.add_argument("--modality", required=True, choices=MODALITIES, help="report modality")
    p.add_argument("--template", help="prompt template file")
    _add_decode_flags(p)
    p.set_defaults(func=_cmd_infer)

    p = sub.add_parser("evaluate", help="score checkpoints on the test split")
    p.add_argument("--model", action="append", required=True,
                   help="model checkpoint; repeat for one table row each")
    p.add_argument("--adapter", action="append",
                   help="adapter per model, '-' for none; count must match --model")
    p.add_argument("--data", required=True, help="directory written by prepare")
    p.add_argument("--out", required=True, help="JSON report file to write")
    p.add_argument("--limit", type=int, default=None, help="score only the first N test records")
    p.add_argument("--template", help="prompt template file")
    _add_decode_flags(p)
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("bench", help="time fine-tuning and per-report inference")
    p.add_argument("--model", required=True, help="float model checkpoint")
    p.add_argument("--adapter", help="adapter to merge for the inference timing")
    p.add_argument("--data", required=True, help="directory written by prepare")
    p.add_argument("--seed", type=int, default=0, help="workload seed (default 0)")
    p.add_argument("--template", help="prompt template file")
    p.set_defaults(func=_cmd_bench)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        args.func(args)
        return 0
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
