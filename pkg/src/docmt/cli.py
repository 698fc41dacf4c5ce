"""Command-line interface.

Exit codes: 0 success, 1 stage/runtime failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys

from . import pipeline as pl
from .errors import ConfigError, DocmtError, StageFailure


def _params_from(args, keys):
    out = {}
    for key in keys:
        value = getattr(args, key.replace("-", "_"), None)
        if value is not None:
            out[key.replace("-", "_")] = str(value)
    for extra in getattr(args, "param", None) or []:
        if "=" not in extra:
            raise ConfigError(f"--param expects key=value, got {extra!r}")
        k, v = extra.split("=", 1)
        out[k] = v
    return out


def _cmd_subword(args):
    inputs = {f"text{i}": path for i, path in enumerate(args.input)}
    pl.STAGE_HANDLERS["subword"]({"vocab_size": str(args.vocab_size)}, inputs,
                                 {"vocab": args.output})
    print(f"wrote {args.output}")


def _cmd_markup(args):
    pl.STAGE_HANDLERS["markup"](
        {"max_doc_tokens": str(args.max_doc_tokens)},
        {"src": args.src, "tgt": args.tgt, "vocab": args.vocab},
        {"src": args.out_src, "tgt": args.out_tgt})
    print(f"wrote {args.out_src}, {args.out_tgt}")


def _cmd_subdocs(args):
    pl.STAGE_HANDLERS["subdocs"](
        {"max_per_doc": str(args.max_per_doc), "seed": str(args.seed)},
        {"src": args.src, "tgt": args.tgt},
        {"src": args.out_src, "tgt": args.out_tgt})


def _cmd_fakedocs(args):
    params = {"seed": str(args.seed)}
    inputs = {"src": args.src, "tgt": args.tgt}
    if args.lengths_src:
        inputs["lengths_src"] = args.lengths_src
        inputs["lengths_tgt"] = args.lengths_tgt
    else:
        params["doc_len"] = str(args.doc_len)
    outputs = {"src": args.out_src, "tgt": args.out_tgt}
    if args.manifest:
        outputs["manifest"] = args.manifest
    pl.STAGE_HANDLERS["fakedocs"](params, inputs, outputs)


def _cmd_upsample(args):
    pl.STAGE_HANDLERS["upsample"](
        {"target_size": str(args.target_size), "seed": str(args.seed)},
        {"src": args.src, "tgt": args.tgt},
        {"src": args.out_src, "tgt": args.out_tgt})


def _cmd_mix(args):
    inputs = {}
    params = {"total_sentences": str(args.total_sentences),
              "seed": str(args.seed)}
    for name, src, tgt, frac in args.stream:
        inputs[f"{name}_src"] = src
        inputs[f"{name}_tgt"] = tgt
        params[f"frac_{name}"] = frac
    pl.STAGE_HANDLERS["mix"](params, inputs,
                             {"src": args.out_src, "tgt": args.out_tgt})


def _cmd_filter_score(args):
    pl.STAGE_HANDLERS["filter-score"](
        {},
        {"src": args.src, "tgt": args.tgt, "vocab": args.vocab,
         "fwd": args.fwd, "bwd": args.bwd},
        {"scores": args.scores})


def _cmd_filter_apply(args):
    pl.STAGE_HANDLERS["filter-apply"](
        {"keep_fraction": args.keep_fraction},
        {"src": args.src, "tgt": args.tgt, "scores": args.scores},
        {"src": args.out_src, "tgt": args.out_tgt})


def _cmd_filter(args):
    pl.STAGE_HANDLERS["filter"](
        {"keep_fraction": args.keep_fraction},
        {"src": args.src, "tgt": args.tgt, "vocab": args.vocab,
         "fwd": args.fwd, "bwd": args.bwd},
        {"src": args.out_src, "tgt": args.out_tgt})


def _cmd_backtranslate(args):
    outputs = {"src": args.out_src, "tgt": args.out_tgt}
    if args.manifest:
        outputs["manifest"] = args.manifest
    pl.STAGE_HANDLERS["backtranslate"](
        {"temperature": str(args.temperature), "seed": str(args.seed),
         "max_out_len": str(args.max_out_len)},
        {"mono": args.mono, "reverse": args.reverse, "vocab": args.vocab},
        outputs)


def _cmd_train(args):
    params = _params_from(args, ["level", "seed"])
    inputs = {"src": args.src, "tgt": args.tgt, "vocab": args.vocab}
    if args.mono:
        inputs["mono"] = args.mono
        params.setdefault("masked_lm", "true")
    outputs = {"checkpoint": args.checkpoint}
    if args.log:
        outputs["log"] = args.log
    pl.STAGE_HANDLERS["train"](params, inputs, outputs)
    print(f"wrote {args.checkpoint}")


def _cmd_finetune(args):
    params = _params_from(args, ["level"])
    pl.STAGE_HANDLERS["finetune"](
        params,
        {"checkpoint": args.checkpoint, "src": args.src, "tgt": args.tgt,
         "dev_src": args.dev_src, "dev_tgt": args.dev_tgt,
         "vocab": args.vocab},
        {"checkpoint": args.output, "log": args.log} if args.log else
        {"checkpoint": args.output})
    print(f"wrote {args.output}")


def _cmd_translate(args):
    params = {
        "decode_mode": "sample" if args.sample else "beam",
        "beam": str(args.beam),
        "alpha": str(args.alpha),
        "temperature": str(args.temperature),
        "seed": str(args.seed),
        "max_doc_tokens": str(args.max_doc_tokens),
        "max_out_len": str(args.max_out_len),
        "level": args.mode,
    }
    inputs = {"input": args.input, "vocab": args.vocab}
    if args.ensemble:
        inputs["ensemble"] = args.ensemble
    elif args.checkpoint:
        inputs["checkpoint"] = args.checkpoint
    else:
        raise ConfigError("translate needs --ensemble or --checkpoint")
    if args.mode == "second-pass":
        if not args.first_pass:
            raise ConfigError("--mode second-pass needs --first-pass")
        inputs["first_pass"] = args.first_pass
        pl.STAGE_HANDLERS["second-pass"](params, inputs,
                                         {"output": args.output})
    else:
        pl.STAGE_HANDLERS["translate"](params, inputs,
                                       {"output": args.output})
    print(f"wrote {args.output}")


def _cmd_second_pass(args):
    args.mode = "second-pass"
    _cmd_translate(args)


def _cmd_evaluate(args):
    import os
    import tempfile
    inputs = {"hyp": args.hyp, "ref": args.ref}
    if args.manifest:
        inputs["manifest"] = args.manifest
    report = args.report
    if report is None:
        fd, report = tempfile.mkstemp(suffix=".tsv")
        os.close(fd)
    pl.STAGE_HANDLERS["evaluate"]({}, inputs, {"report": report})
    with open(report, encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    if args.report is None:
        os.unlink(report)


def _cmd_pipeline(args):
    if args.action == "preset":
        pipeline = pl.preset_paper_pipeline(args.workdir)
        pl.write_pipeline_config(pipeline, args.output)
        print(f"wrote {args.output} ({len(pipeline.stages)} stages)")
        return
    status, reports = pl.run_pipeline(args.config)
    for report in reports:
        print(f"{report['status']:>7}  {report['stage']}  -> {report['dir']}")
    return status


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="docmt",
        description="Document-level NMT workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("subword", help="train a subword vocabulary")
    p.add_argument("--input", action="append", required=True)
    p.add_argument("--vocab-size", type=int, default=4000)
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_subword)

    p = sub.add_parser("markup", help="mark up a parallel corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--max-doc-tokens", type=int, default=1000)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.set_defaults(func=_cmd_markup)

    p = sub.add_parser("subdocs", help="sample sub-document augmentations")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--max-per-doc", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.set_defaults(func=_cmd_subdocs)

    p = sub.add_parser("fakedocs", help="assemble fake documents")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--lengths-src")
    p.add_argument("--lengths-tgt")
    p.add_argument("--doc-len", type=int, default=5)
    p.add_argument("--manifest")
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.set_defaults(func=_cmd_fakedocs)

    p = sub.add_parser("upsample", help="up-sample a corpus")
    p.add_argument("--src", required=True)
    p.add_argument("--tgt", required=True)
    p.add_argument("--target-size", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.set_defaults(func=_cmd_upsample)

    p = sub.add_parser("mix", help="mix corpora to target fractions")
    p.add_argument("--stream", nargs=4, action="append", required=True,
                   metavar=("NAME", "SRC", "TGT", "FRAC"))
    p.add_argument("--total-sentences", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-src", required=True)
    p.add_argument("--out-tgt", required=True)
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("filter-score", help="dual cross-entropy scores")
    for flag in ("--src", "--tgt", "--vocab", "--fwd", "--bwd", "--scores"):
        p.add_argument(flag, required=True)
    p.set_defaults(func=_cmd_filter_score)

    p = sub.add_parser("filter-apply", help="apply score-based filtering")
    for flag in ("--src", "--tgt", "--scores", "--out-src", "--out-tgt"):
        p.add_argument(flag, required=True)
    p.add_argument("--keep-fraction", default="1/2")
    p.set_defaults(func=_cmd_filter_apply)

    p = sub.add_parser("filter", help="score and filter in one step")
    for flag in ("--src", "--tgt", "--vocab", "--fwd", "--bwd",
                 "--out-src", "--out-tgt"):
        p.add_argument(flag, required=True)
    p.add_argument("--keep-fraction", default="1/2")
    p.set_defaults(func=_cmd_filter)

    p = sub.add_parser("backtranslate", help="noisy back-translation")
    for flag in ("--mono", "--reverse", "--vocab", "--out-src", "--out-tgt"):
        p.add_argument(flag, required=True)
    p.add_argument("--manifest")
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--max-out-len", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_backtranslate)

    p = sub.add_parser("train", help="train a model")
    for flag in ("--src", "--tgt", "--vocab", "--checkpoint"):
        p.add_argument(flag, required=True)
    p.add_argument("--mono")
    p.add_argument("--log")
    p.add_argument("--level", choices=("sentence", "document"),
                   default="sentence")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--param", action="append",
                   help="extra model/training field as key=value")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("finetune", help="fine-tune a checkpoint")
    for flag in ("--checkpoint", "--src", "--tgt", "--dev-src", "--dev-tgt",
                 "--vocab", "--output"):
        p.add_argument(flag, required=True)
    p.add_argument("--log")
    p.add_argument("--level", choices=("sentence", "document"),
                   default="sentence")
    p.add_argument("--param", action="append")
    p.set_defaults(func=_cmd_finetune)

    def add_translate_args(p, with_mode=True):
        p.add_argument("--input", required=True)
        p.add_argument("--vocab", required=True)
        p.add_argument("--output", required=True)
        p.add_argument("--ensemble")
        p.add_argument("--checkpoint")
        p.add_argument("--beam", type=int, default=4)
        p.add_argument("--alpha", type=float, default=0.6)
        p.add_argument("--sample", action="store_true")
        p.add_argument("--temperature", type=float, default=1.0)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--max-doc-tokens", type=int, default=1000)
        p.add_argument("--max-out-len", type=int, default=256)
        p.add_argument("--first-pass")

    p = sub.add_parser("translate", help="translate a corpus")
    p.add_argument("--mode", choices=("sentence", "document", "second-pass"),
                   default="document")
    add_translate_args(p)
    p.set_defaults(func=_cmd_translate)

    p = sub.add_parser("second-pass", help="second-pass decode")
    add_translate_args(p)
    p.set_defaults(func=_cmd_second_pass)

    p = sub.add_parser("evaluate", help="origin-split BLEU report")
    p.add_argument("--hyp", required=True)
    p.add_argument("--ref", required=True)
    p.add_argument("--manifest")
    p.add_argument("--report")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="run or emit pipelines")
    psub = p.add_subparsers(dest="action", required=True)
    runp = psub.add_parser("run")
    runp.add_argument("config")
    runp.set_defaults(func=_cmd_pipeline, action="run")
    prep = psub.add_parser("preset")
    prep.add_argument("-o", "--output", default="pipeline.cfg")
    prep.add_argument("--workdir", default="runs/full-system")
    prep.set_defaults(func=_cmd_pipeline, action="preset")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        result = args.func(args)
        return result if isinstance(result, int) else 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except StageFailure as exc:
        print(f"{exc}", file=sys.stderr)
        return 1
    except DocmtError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
