"""keyface command-line entry point.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import animation, dataset, pipeline, prompts
from .core import MotionKeyframeSet, coeffs_from_json
from .errors import Aborted, KeyfaceError
from .evaluation import RetrievalModel, TrainConfig, evaluate_sets, train_encoder
from .evaluation.report import ALL_METRICS
from .evaluation.retrieval import best_epoch
from .evaluation.synthetic import split_tagged, tagged_corpus
from .gateway import CONFIG_FILENAME, ChatClient, load_config

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("keyface")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """ArgumentParser that writes to injected streams and never calls sys.exit."""

    def __init__(self, *args, streams=None, **kwargs):
        self._streams = streams
        super().__init__(*args, **kwargs)

    def _print_message(self, message, file=None):
        if not message:
            return
        out, err = self._streams
        (err if file is sys.stderr else out).write(message)

    def exit(self, status=0, message=None):
        if message:
            self._streams[1].write(message)
        raise SystemExit(status)

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _endpoint_flags(p):
    g = p.add_argument_group("endpoint")
    g.add_argument("--config", help=f"TOML config file (default: ./{CONFIG_FILENAME} if present)")
    g.add_argument("--api-base", help="chat-completions base URL (env KEYFACE_API_BASE)")
    g.add_argument("--api-key", help="API key (env KEYFACE_API_KEY)")
    g.add_argument("--model", help="model name (env KEYFACE_MODEL)")
    g.add_argument("--timeout", type=float, help="request timeout in seconds")
    g.add_argument("--max-retries", type=int, help="retries on transport/5xx errors")
    g.add_argument("--temperature", type=float, help="sampling temperature (default 0)")


def _seed_flag(p):
    p.add_argument("--seed", type=int, default=42, help="random seed (default 42)")


def build_parser(streams) -> argparse.ArgumentParser:
    kw = {"streams": streams}
    parser = _Parser(prog="keyface", description="Text-to-ARKit keyframe toolkit", **kw)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("standardize", help="turn free text into a confirmed script", **kw)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--text", help="free-text description")
    src.add_argument("--input", help="file holding the free-text description")
    p.add_argument("--out", help="write the confirmed script JSON here (default stdout)")
    p.add_argument("--yes", action="store_true", help="accept the draft without asking")
    _endpoint_flags(p)
    _seed_flag(p)

    p = sub.add_parser("generate", help="generate keyframe coefficients for a script", **kw)
    p.add_argument("--script", required=True, help="script file (JSON or labeled text)")
    p.add_argument("--mode", choices=prompts.MODES, default=prompts.SEMANTIC)
    p.add_argument("--out", required=True, help="output GenerationRun JSON")
    p.add_argument("--concurrent", action="store_true", help="request keyframes concurrently")
    _endpoint_flags(p)
    _seed_flag(p)

    p = sub.add_parser("render", help="interpolate keyframes into a frame sequence", **kw)
    p.add_argument("--input", required=True, help="GenerationRun or {\"frames\": [...]} JSON")
    timing = p.add_mutually_exclusive_group()
    timing.add_argument("--interval", type=float, default=None, help="seconds between keyframes (default 1.0)")
    timing.add_argument("--times", help="comma-separated explicit keyframe times in seconds")
    p.add_argument("--fps", type=float, default=animation.DEFAULT_FPS, help="output frame rate (default 60)")
    p.add_argument("--smooth", type=int, default=1, help="odd moving-average window (default 1 = off)")
    p.add_argument("--format", choices=("csv", "json"), help="output format (default from extension)")
    p.add_argument("--out", required=True)
    _seed_flag(p)

    p = sub.add_parser("eval", help="score generated keyframes against ground truth", **kw)
    p.add_argument("--pred", required=True, help="generated keyframes JSON")
    p.add_argument("--gt", required=True, help="ground-truth keyframes JSON")
    p.add_argument("--metrics", default=",".join(ALL_METRICS),
                   help=f"comma-separated subset of {','.join(ALL_METRICS)}")
    p.add_argument("--encoder", help="trained retrieval model JSON (enables r_precision/mmd)")
    p.add_argument("--space", choices=("raw", "embedding"), default="raw",
                   help="feature space for fid/wdist/diversity")
    p.add_argument("--pairs", type=int, default=300, help="random pairs for diversity")
    p.add_argument("--batch-size", type=int, default=32, help="retrieval batch size")
    p.add_argument("--out", help="write the report JSON here (default stdout)")
    _seed_flag(p)

    p = sub.add_parser("train-encoder", help="train the text-motion retrieval encoder", **kw)
    data = p.add_mutually_exclusive_group(required=True)
    data.add_argument("--data", help="dataset JSONL")
    data.add_argument("--synthetic", action="store_true", help="use the built-in tagged corpus")
    p.add_argument("--val-data", help="validation dataset JSONL (default: split from --data)")
    p.add_argument("--val-ratio", type=float, default=0.1)
    p.add_argument("--text-field", default="description_arkit",
                   choices=("description_arkit", "description_original", "description_image"))
    p.add_argument("--out", required=True, help="model JSON")
    p.add_argument("--history", help="write per-epoch history JSON here")
    d = TrainConfig()
    p.add_argument("--lr", type=float, default=d.lr)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--max-epochs", type=int, default=d.max_epochs)
    p.add_argument("--patience", type=int, default=d.patience)
    p.add_argument("--batch-size", type=int, default=d.batch_size)
    p.add_argument("--temperature", type=float, default=d.temperature)
    _seed_flag(p)

    p = sub.add_parser("export-finetune", help="write a chat-style JSONL fine-tuning corpus", **kw)
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--mode", choices=prompts.MODES, default=prompts.SEMANTIC)
    p.add_argument("--out", required=True)
    _seed_flag(p)

    p = sub.add_parser("stats", help="dataset statistics", **kw)
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--out", help="write the report JSON here (default stdout)")
    _seed_flag(p)

    p = sub.add_parser("annotate", help="regenerate ARKit-based keyframe descriptions", **kw)
    p.add_argument("--data", required=True, help="dataset JSONL")
    where = p.add_mutually_exclusive_group(required=True)
    where.add_argument("--out", help="sidecar JSONL of {clip_id, keyframe, description_arkit}")
    where.add_argument("--in-place", action="store_true", help="rewrite description_arkit in --data")
    p.add_argument("--concurrent", action="store_true")
    _endpoint_flags(p)
    _seed_flag(p)

    p = sub.add_parser("split", help="deterministic train/test split", **kw)
    p.add_argument("--data", required=True, help="dataset JSONL")
    p.add_argument("--ratio", type=float, default=0.8, help="train fraction (default 0.8)")
    p.add_argument("--train-out", required=True)
    p.add_argument("--test-out", required=True)
    _seed_flag(p)
    return parser


def _apply_config_defaults(parser, argv):
    """Seed subcommand defaults from the [defaults] table of the config file."""
    path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            path = argv[i + 1]
        elif a.startswith("--config="):
            path = a.split("=", 1)[1]
    if path is None and Path(CONFIG_FILENAME).is_file():
        path = CONFIG_FILENAME
    if path is None:
        return
    try:
        with open(path, "rb") as fh:
            defaults = tomllib.load(fh).get("defaults", {})
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise KeyfaceError(f"cannot read config {path}: {exc}") from None
    for action in parser._subparsers._group_actions:
        for sp in action.choices.values():
            known = {a.dest for a in sp._actions}
            sp.set_defaults(**{k.replace("-", "_"): v for k, v in defaults.items()
                               if k.replace("-", "_") in known})


def _endpoint(args, section="endpoint"):
    return load_config(
        args.config, section=section,
        base_url=args.api_base, api_key=args.api_key, model_name=args.model,
        timeout=args.timeout, max_retries=args.max_retries, temperature=args.temperature,
    )


def _read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(obj, path, stdout):
    text = json.dumps(obj, indent=2, ensure_ascii=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        stdout.write(text)


def load_keyframe_file(path):
    """Frames (and per-keyframe texts when known) from a GenerationRun JSON, a
    list of them, or ``{"frames": [...], "texts": [...]}``."""
    obj = _read_json(path)
    runs = obj if isinstance(obj, list) else [obj]
    frames, texts = [], []
    for run in runs:
        if not isinstance(run, dict) or "frames" not in run:
            raise KeyfaceError(f"{path}: expected an object with a 'frames' list")
        frames.extend(coeffs_from_json(f) for f in run["frames"])
        if "texts" in run:
            texts.extend(run["texts"])
        elif "script" in run:
            texts.extend(k["description"] for k in run["script"]["keyframes"])
    return frames, (texts if len(texts) == len(frames) else None)


# -- subcommands ----------------------------------------------------------------

def _read_edit(stdin, stdout):
    stdout.write("Enter the replacement script (JSON or labeled text); finish with a line containing only '.'\n")
    lines = []
    for line in stdin:
        if line.strip() == ".":
            break
        lines.append(line)
    return "".join(lines)


def cmd_standardize(args, stdin, stdout, stderr):
    text = args.text if args.text is not None else Path(args.input).read_text(encoding="utf-8")
    cfg = _endpoint(args, section="standardize")
    draft = pipeline.standardize(text, cfg)
    if args.yes:
        script = draft
    else:
        stdout.write("Draft script:\n" + prompts.render_script(draft) + "\n")
        stdout.write("[a]ccept, [e]dit or [r]eject? ")
        stdout.flush()
        answer = (stdin.readline() or "").strip().lower()
        decision = {"a": "accept", "accept": "accept", "e": "edit", "edit": "edit",
                    "r": "reject", "reject": "reject", "": "reject"}.get(answer)
        if decision is None:
            raise UsageError(f"unrecognised answer {answer!r}")
        edited = _read_edit(stdin, stdout) if decision == "edit" else None
        script = pipeline.confirm_script(draft, decision, edited)
    _write_json(script.to_dict(), args.out, stdout)
    return 0


def cmd_generate(args, stdin, stdout, stderr):
    script = prompts.parse_script(Path(args.script).read_text(encoding="utf-8"))
    cfg = _endpoint(args)
    run = pipeline.generate_sequence(script, args.mode, cfg, concurrent=args.concurrent)
    pipeline.save_run(run, args.out)
    log.info("wrote %d keyframes to %s", len(run.outputs), args.out)
    return 0


def cmd_render(args, stdin, stdout, stderr):
    frames, _ = load_keyframe_file(args.input)
    times = [float(t) for t in args.times.split(",")] if args.times else None
    tks = animation.assign_timing(MotionKeyframeSet(tuple(frames)), interval=args.interval, times=times)
    seq = animation.interpolate_linear(tks, args.fps)
    if args.smooth != 1:
        seq = animation.smooth_moving_average(seq, args.smooth)
    animation.save_sequence(seq, args.out, args.format)
    return 0


def cmd_eval(args, stdin, stdout, stderr):
    metrics = tuple(m.strip() for m in args.metrics.split(",") if m.strip())
    bad = set(metrics) - set(ALL_METRICS)
    if bad:
        raise UsageError(f"unknown metrics: {', '.join(sorted(bad))}")
    pred, pred_texts = load_keyframe_file(args.pred)
    gt, gt_texts = load_keyframe_file(args.gt)
    if len(pred) != len(gt):
        raise KeyfaceError(f"frame count mismatch: pred has {len(pred)} keyframes, gt has {len(gt)}")
    model = RetrievalModel.load(args.encoder) if args.encoder else None
    report = evaluate_sets(pred, gt, texts=gt_texts or pred_texts, model=model, metrics=metrics,
                           pairs=args.pairs, seed=args.seed, batch_size=args.batch_size,
                           space=args.space)
    _write_json(report, args.out, stdout)
    return 0


def cmd_train_encoder(args, stdin, stdout, stderr):
    cfg = TrainConfig(lr=args.lr, weight_decay=args.weight_decay, max_epochs=args.max_epochs,
                      patience=args.patience, batch_size=args.batch_size,
                      temperature=args.temperature, seed=args.seed)
    if args.synthetic:
        train, val = split_tagged(tagged_corpus(seed=args.seed))
    else:
        records = dataset.load_dataset(args.data)
        if args.val_data:
            train_recs, val_recs = records, dataset.load_dataset(args.val_data)
        else:
            train_recs, val_recs = dataset.split_train_test(
                records, dataset.SplitSpec(1.0 - args.val_ratio, args.seed))
        train = dataset.retrieval_pairs(train_recs, args.text_field)
        val = dataset.retrieval_pairs(val_recs, args.text_field)
    model, history = train_encoder(train, val, cfg)
    model.save(args.out)
    if args.history:
        _write_json(history, args.history, stdout)
    stdout.write(f"epochs={len(history)} best_epoch={best_epoch(history)} "
                 f"best_val_r1={max(h['val_r1'] for h in history):.4f}\n")
    return 0


def cmd_export_finetune(args, stdin, stdout, stderr):
    records = dataset.load_dataset(args.data)
    pairs = [(r.script, [k.coeffs for k in r.keyframes]) for r in records]
    out = prompts.export_finetune_records(pairs, args.mode)
    with open(args.out, "w", encoding="utf-8") as fh:
        n = prompts.write_finetune_jsonl(out, fh)
    log.info("wrote %d records to %s", n, args.out)
    return 0


def cmd_stats(args, stdin, stdout, stderr):
    records = dataset.load_dataset(args.data)
    report = dataset.dataset_stats(records).to_dict()
    if all(r.emotions is not None for r in records):
        report["dominant_emotions"] = dataset.emotion_distribution(records)
    _write_json(report, args.out, stdout)
    return 0


def cmd_annotate(args, stdin, stdout, stderr):
    records = dataset.load_dataset(args.data)
    cfg = _endpoint(args)
    jobs = [(ri, ki, k.coeffs) for ri, r in enumerate(records) for ki, k in enumerate(r.keyframes)]
    with ChatClient(cfg) as client:
        def run(job):
            return dataset.annotate_from_coeffs(job[2], cfg, client)
        if args.concurrent:
            with ThreadPoolExecutor(max_workers=8) as pool:
                texts = list(pool.map(run, jobs))
        else:
            texts = [run(j) for j in jobs]
    if args.in_place:
        updated = [list(r.keyframes) for r in records]
        for (ri, ki, _), text in zip(jobs, texts):
            updated[ri][ki] = replace(updated[ri][ki], description_arkit=text)
        records = [replace(r, keyframes=tuple(kfs)) for r, kfs in zip(records, updated)]
        with open(args.data, "w", encoding="utf-8") as fh:
            dataset.dump_dataset(records, fh)
    else:
        with open(args.out, "w", encoding="utf-8") as fh:
            for (ri, ki, _), text in zip(jobs, texts):
                fh.write(json.dumps({"clip_id": records[ri].clip_id, "keyframe": ki + 1,
                                     "description_arkit": text}, ensure_ascii=False) + "\n")
    return 0


def cmd_split(args, stdin, stdout, stderr):
    records = dataset.load_dataset(args.data)
    train, test = dataset.split_train_test(records, dataset.SplitSpec(args.ratio, args.seed))
    for recs, path in ((train, args.train_out), (test, args.test_out)):
        with open(path, "w", encoding="utf-8") as fh:
            dataset.dump_dataset(recs, fh)
    stdout.write(f"train={len(train)} test={len(test)}\n")
    return 0


COMMANDS = {
    "standardize": cmd_standardize,
    "generate": cmd_generate,
    "render": cmd_render,
    "eval": cmd_eval,
    "train-encoder": cmd_train_encoder,
    "export-finetune": cmd_export_finetune,
    "stats": cmd_stats,
    "annotate": cmd_annotate,
    "split": cmd_split,
}


def dispatch(argv, stdin=None, stdout=None, stderr=None) -> int:
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    parser = build_parser((stdout, stderr))
    try:
        _apply_config_defaults(parser, list(argv))
        args = parser.parse_args(list(argv))
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    except UsageError as exc:
        stderr.write(f"{exc}\n")
        return 2
    except KeyfaceError as exc:
        stderr.write(f"keyface: error: {exc}\n")
        return 1

    handler = logging.StreamHandler(stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("keyface")
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return COMMANDS[args.command](args, stdin, stdout, stderr)
    except UsageError as exc:
        stderr.write(f"keyface {args.command}: error: {exc}\n")
        return 2
    except Aborted as exc:
        stderr.write(f"keyface {args.command}: aborted: {exc}\n")
        return 1
    except (KeyfaceError, OSError, ValueError, KeyError, TypeError) as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        stderr.write(f"keyface {args.command}: error: {msg}\n")
        return 1
    finally:
        root.removeHandler(handler)


def main():
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
