"""Command-line entry point: ``xshot {train-ngram,eval,maxfit,report,serve}``."""

from __future__ import annotations

import argparse
import codecs
import logging
import sys
from pathlib import Path

from xshot.backends import make_backend, train_ngram
from xshot.backends.server import BackendServer
from xshot.errors import XshotError
from xshot.fewshot import max_fit_stats, write_max_fit_csv
from xshot.runner import EvalConfig, render_report, run_eval
from xshot.tasks import load_task
from xshot.templates import TemplateMode, load_templates

log = logging.getLogger("xshot")


def _unescape(s: str) -> str:
    return codecs.decode(s, "unicode_escape")


def _ints(s: str) -> list[int]:
    return [int(x) for x in s.split(",") if x.strip()]


def _csv(s: str) -> list[str]:
    return [x.strip() for x in s.split(",") if x.strip()]


def cmd_train_ngram(args) -> int:
    model = train_ngram(args.corpus, args.order, args.add_k)
    model.save(args.out)
    print(f"{model.id} -> {args.out}")
    return 0


# flag dest -> EvalConfig field
_OVERRIDES = {
    "task": "task", "templates": "templates", "backend": "backend", "shots": "shots",
    "runs": "n_runs", "seed": "base_seed", "scoring": "scoring", "answer_context": "answer_context",
    "calibrate": "calibrate", "template_mode": "template_mode", "template_lang": "template_lang",
    "demo_lang": "demo_lang", "translate_test": "translate_test", "probe_candidates": "probe_candidates",
    "out": "out", "split": "eval_split", "langs": "languages", "strategy": "strategy", "sep": "separator",
    "cache_dir": "cache_dir", "context_length": "context_length", "workers": "workers",
    "dump_prompts": "dump_prompts", "max_new_tokens": "max_new_tokens",
}


def build_config(args) -> EvalConfig:
    data = EvalConfig.from_file(args.config).to_dict() if args.config else {}
    for flag, key in _OVERRIDES.items():
        value = getattr(args, flag)
        if value is not None:
            data[key] = value
    if "task" not in data or "templates" not in data:
        raise XshotError("eval needs --task and --templates (or a config providing them)")
    return EvalConfig.from_dict(data)


def cmd_eval(args) -> int:
    paths = run_eval(build_config(args))
    print(Path(paths["report_txt"]).read_text(encoding="utf-8"), end="")
    return 0


def cmd_maxfit(args) -> int:
    task = load_task(args.task)
    templates = load_templates(args.templates)
    mode = TemplateMode.source(args.template_lang) if args.template_lang else TemplateMode()
    backend = make_backend(args.backend, args.context_length)
    rows = max_fit_stats(task, templates, backend, args.sep, mode, args.split, args.seed)
    if args.out:
        write_max_fit_csv(rows, args.out)
    else:
        print("task,lang,mean_fit,n_examples")
        for r in rows:
            print(f"{r['task']},{r['lang']},{r['mean_fit']:.4f},{r['n_examples']}")
    return 0


def cmd_report(args) -> int:
    paths = render_report(Path(args.input) / "records.jsonl", args.group_by, args.input)
    print(paths["report_txt"].read_text(encoding="utf-8"), end="")
    return 0


def cmd_serve(args) -> int:
    server = BackendServer(make_backend(args.backend, args.context_length), args.host, args.port)
    print(f"serving {server.backend.id} on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xshot", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train-ngram", help="train a byte n-gram oracle model")
    t.add_argument("--corpus", required=True)
    t.add_argument("--order", type=int, required=True)
    t.add_argument("--add-k", type=float, default=0.01)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train_ngram)

    e = sub.add_parser("eval", help="run an evaluation")
    e.add_argument("--config")
    e.add_argument("--task")
    e.add_argument("--templates")
    e.add_argument("--backend", help="uniform | ngram:PATH | context-cache:PATH[@LAMBDA] | remote:URL")
    e.add_argument("--shots", type=_ints)
    e.add_argument("--runs", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--scoring", choices=["sum", "mean", "mean-skip-prefix", "suffix", "uncond", "char"])
    e.add_argument("--answer-context")
    e.add_argument("--calibrate", action="store_const", const=True)
    e.add_argument("--template-mode", choices=["same", "source"])
    e.add_argument("--template-lang")
    e.add_argument("--demo-lang")
    e.add_argument("--translate-test", metavar="URL")
    e.add_argument("--probe-candidates", type=int)
    e.add_argument("--split")
    e.add_argument("--langs", type=_csv)
    e.add_argument("--strategy", choices=["random-total", "per-class-uniform"])
    e.add_argument("--sep", type=_unescape)
    e.add_argument("--cache-dir")
    e.add_argument("--context-length", type=int)
    e.add_argument("--max-new-tokens", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--dump-prompts", action="store_const", const=True)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("maxfit", help="average number of demonstrations that fit the context")
    m.add_argument("--task", required=True)
    m.add_argument("--templates", required=True)
    m.add_argument("--backend", default="uniform")
    m.add_argument("--sep", type=_unescape, default="\n")
    m.add_argument("--split", default="test")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--template-lang", help="use this language's template for all examples")
    m.add_argument("--context-length", type=int)
    m.add_argument("--out", help="CSV path (default: stdout)")
    m.set_defaults(func=cmd_maxfit)

    r = sub.add_parser("report", help="re-render reports from persisted records")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--group-by", type=_csv, default=["lang"])
    r.set_defaults(func=cmd_report)

    s = sub.add_parser("serve", help="serve a backend over the /v1 HTTP protocol")
    s.add_argument("--backend", required=True)
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8080)
    s.add_argument("--context-length", type=int)
    s.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except XshotError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
