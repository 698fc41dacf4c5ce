"""Pipeline orchestration: declarative stage configs, content-addressed
outputs for cheap reruns, and the canonical system-building preset.

Stage outputs live in workdir/<stage>-<hash12>/ where the hash covers the
stage kind, its parameters, and the content hashes of all inputs; a stage
whose directory already holds a provenance record is skipped, so editing one
parameter reruns exactly that stage and its descendants (through changed
input bytes).
"""

from __future__ import annotations

import configparser
import hashlib
import json
import os
import time
import traceback
from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ConfigError, StageFailure


@dataclass
class Stage:
    name: str
    kind: str
    inputs: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    params: dict[str, str] = field(default_factory=dict)


@dataclass
class Pipeline:
    workdir: str
    stages: list[Stage]

    def stage(self, name: str) -> Stage:
        for s in self.stages:
            if s.name == name:
                return s
        raise ConfigError(f"no stage named {name!r}")


def parse_pipeline_config(path: str) -> Pipeline:
    cp = configparser.ConfigParser()
    cp.optionxform = str  # stage params are case-sensitive
    if not cp.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read pipeline config {path}")
    if "pipeline" not in cp or "workdir" not in cp["pipeline"]:
        raise ConfigError(f"{path}: missing [pipeline] workdir")
    workdir = cp["pipeline"]["workdir"]
    stages = []
    for section in cp.sections():
        if not section.startswith("stage:"):
            continue
        name = section.split(":", 1)[1]
        body = cp[section]
        if "kind" not in body:
            raise ConfigError(f"{path}: stage {name!r} has no kind")
        stage = Stage(name=name, kind=body["kind"])
        for key, value in body.items():
            if key == "kind":
                continue
            if key.startswith("in."):
                stage.inputs[key[3:]] = value
            elif key.startswith("out."):
                stage.outputs[key[4:]] = value
            else:
                stage.params[key] = value
        stages.append(stage)
    if not stages:
        raise ConfigError(f"{path}: no [stage:*] sections")
    return Pipeline(workdir, stages)


def write_pipeline_config(pipeline: Pipeline, path: str) -> None:
    cp = configparser.ConfigParser()
    cp.optionxform = str
    cp["pipeline"] = {"workdir": pipeline.workdir}
    for stage in pipeline.stages:
        section = f"stage:{stage.name}"
        cp[section] = {"kind": stage.kind}
        for key, value in stage.inputs.items():
            cp[section][f"in.{key}"] = value
        for key, value in stage.outputs.items():
            cp[section][f"out.{key}"] = value
        for key, value in stage.params.items():
            cp[section][key] = str(value)
    with open(path, "w", encoding="utf-8") as fh:
        cp.write(fh)


def _hash_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _stage_hash(stage: Stage, input_hashes: dict[str, str]) -> str:
    h = hashlib.sha256()
    h.update(stage.kind.encode())
    for key in sorted(stage.params):
        h.update(f"\0{key}={stage.params[key]}".encode())
    for key in sorted(input_hashes):
        h.update(f"\0{key}:{input_hashes[key]}".encode())
    return h.hexdigest()[:12]


def _resolve_input(value: str, produced: dict[str, dict[str, str]]) -> str:
    if value.startswith("stage:"):
        _, stage_name, out_key = value.split(":", 2)
        if stage_name not in produced:
            raise ConfigError(
                f"input references stage {stage_name!r} before it runs")
        if out_key not in produced[stage_name]:
            raise ConfigError(
                f"stage {stage_name!r} declares no output {out_key!r}")
        return produced[stage_name][out_key]
    return value


def validate_pipeline(pipeline: Pipeline) -> None:
    """Fail with ConfigError before any stage runs."""
    seen: dict[str, Stage] = {}
    for stage in pipeline.stages:
        for key, value in stage.inputs.items():
            if value.startswith("stage:"):
                parts = value.split(":")
                if len(parts) != 3:
                    raise ConfigError(
                        f"stage {stage.name!r}: bad reference {value!r}")
                _, ref, out_key = parts
                if ref not in seen:
                    raise ConfigError(
                        f"stage {stage.name!r} references {ref!r} which is not "
                        "an earlier stage")
                if out_key not in seen[ref].outputs:
                    raise ConfigError(
                        f"stage {stage.name!r} references missing output "
                        f"{out_key!r} of stage {ref!r}")
            elif not os.path.exists(value):
                raise ConfigError(
                    f"stage {stage.name!r}: missing input file {value}")
        seen[stage.name] = stage


def run_pipeline(config_path: str, handlers=None) -> tuple[int, list[dict]]:
    """Execute stages in order; returns (exit status, per-stage reports).

    Exit status: 0 success, 1 stage failure, 2 config error (config errors
    are raised before any stage runs).
    """
    pipeline = parse_pipeline_config(config_path)
    validate_pipeline(pipeline)
    handlers = handlers or STAGE_HANDLERS
    for stage in pipeline.stages:
        if stage.kind not in handlers:
            raise ConfigError(f"unknown stage kind {stage.kind!r}")

    os.makedirs(pipeline.workdir, exist_ok=True)
    produced: dict[str, dict[str, str]] = {}
    reports = []
    for stage in pipeline.stages:
        resolved = {k: _resolve_input(v, produced) for k, v in stage.inputs.items()}
        input_hashes = {k: _hash_file(p) for k, p in resolved.items()}
        digest = _stage_hash(stage, input_hashes)
        outdir = os.path.join(pipeline.workdir, f"{stage.name}-{digest}")
        provenance_path = os.path.join(outdir, "provenance.json")
        out_paths = {k: os.path.join(outdir, v) for k, v in stage.outputs.items()}
        if os.path.exists(provenance_path):
            produced[stage.name] = out_paths
            reports.append({"stage": stage.name, "status": "cached",
                            "dir": outdir})
            continue
        os.makedirs(outdir, exist_ok=True)
        started = time.time()
        try:
            handlers[stage.kind](stage.params, resolved, out_paths)
        except Exception as exc:  # noqa: BLE001 - stage log carries the cause
            raise StageFailure(stage.name, f"{exc}\n{traceback.format_exc()}")
        provenance = {
            "stage": stage.name,
            "kind": stage.kind,
            "params": stage.params,
            "input_hashes": input_hashes,
            "outputs": {k: os.path.basename(v) for k, v in out_paths.items()},
            "seconds": round(time.time() - started, 3),
        }
        with open(provenance_path, "w", encoding="utf-8") as fh:
            json.dump(provenance, fh, indent=2, sort_keys=True)
        produced[stage.name] = out_paths
        reports.append({"stage": stage.name, "status": "run", "dir": outdir})
    return 0, reports


# --- stage handlers ------------------------------------------------------------

def _load_vocab_input(inputs):
    from .subword import load_vocab
    return load_vocab(inputs["vocab"])


def _stage_subword(params, inputs, outputs):
    from .subword import save_vocab, train_subwords
    texts = []
    for key in sorted(inputs):
        with open(inputs[key], encoding="utf-8") as fh:
            texts.extend(line.rstrip("\n") for line in fh if line.strip())
    vocab = train_subwords(texts, int(params.get("vocab_size", 4000)))
    save_vocab(vocab, outputs["vocab"])


def _stage_markup(params, inputs, outputs):
    from .corpus import load_parallel_documents
    from .markup import mark_up_parallel, render_marked
    vocab = _load_vocab_input(inputs)
    corpus = load_parallel_documents(inputs["src"], inputs["tgt"])
    limit = int(params.get("max_doc_tokens", 1000))
    with open(outputs["src"], "w", encoding="utf-8", newline="\n") as fs, \
            open(outputs["tgt"], "w", encoding="utf-8", newline="\n") as ft:
        for pdoc in corpus.documents:
            pairs, _ = mark_up_parallel(pdoc, vocab, limit)
            for a, b in pairs:
                fs.write(render_marked(a, vocab) + "\n")
                ft.write(render_marked(b, vocab) + "\n")


def _stage_subdocs(params, inputs, outputs):
    from .corpus import Corpus, load_parallel_documents, write_parallel_documents
    from .datamix import sample_subdocuments
    corpus = load_parallel_documents(inputs["src"], inputs["tgt"])
    seed = int(params.get("seed", 0))
    max_per_doc = int(params.get("max_per_doc", 10))
    docs = []
    for i, pdoc in enumerate(corpus.documents):
        docs.extend(sample_subdocuments(pdoc, max_per_doc, seed + i))
    out = Corpus(tuple(docs), "parallel")
    write_parallel_documents(out, outputs["src"], outputs["tgt"])


def _stage_fakedocs(params, inputs, outputs):
    import numpy as np
    from .corpus import flatten_pairs, load_parallel_documents, write_manifest, write_parallel_documents
    from .datamix import EmpiricalSampler, corpus_length_sampler, make_fake_documents
    corpus = load_parallel_documents(inputs["src"], inputs["tgt"])
    pairs = flatten_pairs(corpus)
    rng = np.random.default_rng(int(params.get("seed", 0)))
    order = rng.permutation(len(pairs))
    pairs = [pairs[int(i)] for i in order]
    if "lengths_src" in inputs:
        ref = load_parallel_documents(inputs["lengths_src"], inputs["lengths_tgt"])
        sampler = corpus_length_sampler(ref)
    else:
        sampler = EmpiricalSampler([int(params.get("doc_len", 5))])
    out = make_fake_documents(pairs, sampler, int(params.get("seed", 0)))
    write_parallel_documents(out, outputs["src"], outputs["tgt"])
    if "manifest" in outputs:
        write_manifest(out, outputs["manifest"])


def _stage_upsample(params, inputs, outputs):
    from .corpus import load_parallel_documents, write_parallel_documents
    from .datamix import upsample
    corpus = load_parallel_documents(inputs["src"], inputs["tgt"])
    out = upsample(corpus, int(params["target_size"]), int(params.get("seed", 0)))
    write_parallel_documents(out, outputs["src"], outputs["tgt"])


def _stage_mix(params, inputs, outputs):
    from .corpus import load_parallel_documents, write_parallel_documents
    from .datamix import MixRecipe, mix_corpora
    names = sorted({k.rsplit("_", 1)[0] for k in inputs})
    corpora = {}
    fractions = []
    for name in names:
        corpora[name] = load_parallel_documents(
            inputs[f"{name}_src"], inputs[f"{name}_tgt"])
        fractions.append((name, Fraction(params[f"frac_{name}"])))
    recipe = MixRecipe(tuple(fractions), seed=int(params.get("seed", 0)))
    out = mix_corpora(recipe, corpora, int(params["total_sentences"]))
    write_parallel_documents(out, outputs["src"], outputs["tgt"])


def _stage_filter_score(params, inputs, outputs):
    from .corpus import load_parallel_documents
    from .datamix import score_corpus, write_scores
    from .model.params import load_checkpoint
    vocab = _load_vocab_input(inputs)
    corpus = load_parallel_documents(inputs["src"], inputs["tgt"])
    fwd = load_checkpoint(inputs["fwd"])
    bwd = load_checkpoint(inputs["bwd"])
    write_scores(score_corpus(fwd, bwd, corpus, vocab), outputs["scores"])


def _stage_filter_apply(params, inputs, outputs):
    from .corpus import load_parallel_documents, write_parallel_documents
    from .datamix import filter_corpus, read_scores
    corpus = load_parallel_documents(inputs["src"], inputs["tgt"])
    scores = read_scores(inputs["scores"])
    out = filter_corpus(corpus, scores, Fraction(params["keep_fraction"]))
    write_parallel_documents(out, outputs["src"], outputs["tgt"])


def _stage_filter(params, inputs, outputs):
    import tempfile
    with tempfile.TemporaryDirectory() as tmp:
        scores_path = os.path.join(tmp, "scores.tsv")
        _stage_filter_score(params, inputs, {"scores": scores_path})
        apply_inputs = dict(inputs)
        apply_inputs["scores"] = scores_path
        _stage_filter_apply(params, apply_inputs, outputs)


def _stage_backtranslate(params, inputs, outputs):
    from .corpus import load_documents, write_manifest, write_parallel_documents
    from .decode import DecodeConfig, backtranslate_corpus
    from .model.params import load_checkpoint
    vocab = _load_vocab_input(inputs)
    mono = load_documents(inputs["mono"])
    rev_params, rev_config = load_checkpoint(inputs["reverse"])
    config = DecodeConfig(mode="sample",
                          max_out_len=int(params.get("max_out_len", 128)),
                          temperature=float(params.get("temperature", 1.0)),
                          seed=int(params.get("seed", 0)))
    out = backtranslate_corpus(rev_params, rev_config, config, mono, vocab)
    write_parallel_documents(out, outputs["src"], outputs["tgt"])
    if "manifest" in outputs:
        write_manifest(out, outputs["manifest"])


def _read_training_pairs(src_path, tgt_path, vocab, level):
    from .corpus import load_parallel_documents
    from .markup import parse_marked_text
    from .subword import encode
    if level == "document":
        pairs = []
        with open(src_path, encoding="utf-8") as fs, \
                open(tgt_path, encoding="utf-8") as ft:
            for a, b in zip(fs, ft):
                sa = parse_marked_text(a.rstrip("\n"), vocab)
                sb = parse_marked_text(b.rstrip("\n"), vocab)
                pairs.append((list(sa.ids), list(sb.ids)))
        return pairs
    corpus = load_parallel_documents(src_path, tgt_path)
    pairs = []
    for doc in corpus.documents:
        for a, b in zip(doc.src.sentences, doc.tgt.sentences):
            pairs.append((encode(vocab, a.text), encode(vocab, b.text)))
    return pairs


def _train_configs_from_params(params, vocab_size):
    from .model.config import TrainConfig, TransformerConfig
    model_fields = {"depth", "model_dim", "ff_dim", "heads", "max_len",
                    "dual_encoder", "masked_lm", "mask_rate", "mlm_weight",
                    "dtype", "init_scaling", "tie_mlm_head", "bert_mask_split"}
    train_fields = {"batch_tokens", "max_updates", "seed", "optimizer", "lr",
                    "warmup_steps", "optimizer_delay", "eval_every",
                    "early_stop_metric", "early_stop_patience"}
    mkw = {}
    tkw = {}
    for key, raw in params.items():
        if key in model_fields:
            mkw[key] = raw
        elif key in train_fields:
            tkw[key] = raw
    def convert(cls, kw):
        import dataclasses
        out = {}
        for f in dataclasses.fields(cls):
            if f.name in kw:
                raw = kw[f.name]
                if f.type == "bool":
                    out[f.name] = raw.lower() in ("1", "true")
                elif f.type == "int":
                    out[f.name] = int(raw)
                elif f.type == "float":
                    out[f.name] = float(raw)
                else:
                    out[f.name] = raw
        return out
    model_config = TransformerConfig(vocab_size=vocab_size, **convert(TransformerConfig, mkw))
    tkw2 = convert(TrainConfig, tkw)
    tkw2.setdefault("max_len", model_config.max_len)
    train_config = TrainConfig(**tkw2)
    return model_config, train_config


def _stage_train(params, inputs, outputs):
    from .model.params import init_params, save_checkpoint
    from .model.training import batch_stream, log_to_tsv, train
    vocab = _load_vocab_input(inputs)
    level = params.get("level", "sentence")
    pairs = _read_training_pairs(inputs["src"], inputs["tgt"], vocab, level)
    if "fp" in inputs:  # dual-encoder training: (src, tgt, first-pass) triples
        fp_pairs = _read_training_pairs(inputs["fp"], inputs["fp"], vocab, level)
        if len(fp_pairs) != len(pairs):
            raise ConfigError("first-pass corpus is not aligned with src/tgt")
        pairs = [(s, t, f[0]) for (s, t), f in zip(pairs, fp_pairs)]
        params = dict(params)
        params.setdefault("dual_encoder", "true")
    model_config, train_config = _train_configs_from_params(params, len(vocab))
    mono_stream = None
    if model_config.masked_lm and "mono" in inputs:
        from .markup import parse_marked_text
        from .model.transformer import pad_sequences
        seqs = []
        with open(inputs["mono"], encoding="utf-8") as fh:
            for line in fh:
                seq = parse_marked_text(line.rstrip("\n"), vocab)
                seqs.append(list(seq.ids))

        def forever(seqs=seqs, bt=train_config.batch_tokens):
            import numpy as np
            rng = np.random.default_rng(train_config.seed + 13)
            while True:
                order = rng.permutation(len(seqs))
                for i in order:
                    ids, lengths = pad_sequences([seqs[int(i)]])
                    yield ids, lengths

        mono_stream = forever()
    start = init_params(model_config, int(params.get("init_seed", train_config.seed)))
    result = train(start, model_config, train_config,
                   batch_stream(pairs, train_config.batch_tokens,
                                seed=train_config.seed),
                   mono_stream=mono_stream)
    save_checkpoint(outputs["checkpoint"], result.params, model_config)
    if "log" in outputs:
        log_to_tsv(result.log, outputs["log"])


def _stage_finetune(params, inputs, outputs):
    from .model.params import load_checkpoint, save_checkpoint
    from .model.training import DevSet, batch_stream, fine_tune, log_to_tsv, make_batches
    from .subword import encode
    vocab = _load_vocab_input(inputs)
    start, model_config = load_checkpoint(inputs["checkpoint"])
    level = params.get("level", "sentence")
    pairs = _read_training_pairs(inputs["src"], inputs["tgt"], vocab, level)
    _, train_config = _train_configs_from_params(params, len(vocab))
    if not train_config.eval_every:
        train_config.eval_every = 10
    if not train_config.early_stop_patience:
        train_config.early_stop_patience = 3
    dev_pairs = _read_training_pairs(inputs["dev_src"], inputs["dev_tgt"],
                                     vocab, "sentence")
    dev = DevSet(batches=make_batches(dev_pairs, train_config.batch_tokens))
    if train_config.early_stop_metric == "bleu":
        from .corpus import flatten_pairs, load_parallel_documents
        dev_corpus = load_parallel_documents(inputs["dev_src"], inputs["dev_tgt"])
        flat = flatten_pairs(dev_corpus)
        dev.src_seqs = [encode(vocab, a) for a, _ in flat]
        dev.ref_texts = [b for _, b in flat]
        dev.vocab = vocab
    result = fine_tune(start, model_config, train_config,
                       batch_stream(pairs, train_config.batch_tokens,
                                    seed=train_config.seed), dev)
    save_checkpoint(outputs["checkpoint"], result.params, model_config)
    if "log" in outputs:
        log_to_tsv(result.log, outputs["log"])


def _load_spec_from_inputs(inputs):
    from .decode import EnsembleSpec, read_ensemble_file
    from .model.params import load_checkpoint
    if "ensemble" in inputs:
        return read_ensemble_file(inputs["ensemble"])
    params, config = load_checkpoint(inputs["checkpoint"])
    return EnsembleSpec(((params, config),), (1.0,))


def _stage_translate(params, inputs, outputs):
    from .corpus import load_documents, write_documents
    from .decode import DecodeConfig, translate_corpus
    vocab = _load_vocab_input(inputs)
    spec = _load_spec_from_inputs(inputs)
    corpus = load_documents(inputs["input"])
    config = DecodeConfig(mode=params.get("decode_mode", "beam"),
                          beam_size=int(params.get("beam", 4)),
                          max_out_len=int(params.get("max_out_len", 256)),
                          length_norm_alpha=float(params.get("alpha", 0.6)),
                          temperature=float(params.get("temperature", 1.0)),
                          seed=int(params.get("seed", 0)))
    out, _ = translate_corpus(spec, config, corpus, vocab,
                              limit=int(params.get("max_doc_tokens", 1000)),
                              mode=params.get("level", "document"))
    write_documents(out, outputs["output"])


def _stage_second_pass(params, inputs, outputs):
    from .corpus import Corpus, load_documents, write_documents
    from .decode import DecodeConfig, second_pass_decode
    vocab = _load_vocab_input(inputs)
    spec = _load_spec_from_inputs(inputs)
    src = load_documents(inputs["input"])
    first = load_documents(inputs["first_pass"])
    config = DecodeConfig(mode="beam", beam_size=int(params.get("beam", 4)),
                          max_out_len=int(params.get("max_out_len", 256)),
                          length_norm_alpha=float(params.get("alpha", 0.6)))
    docs = []
    for s, f in zip(src.documents, first.documents):
        out, _ = second_pass_decode(spec, config, s, f, vocab,
                                    limit=int(params.get("max_doc_tokens", 1000)))
        docs.append(out)
    write_documents(Corpus(tuple(docs), "monolingual"), outputs["output"])


def _stage_evaluate(params, inputs, outputs):
    from .bleu import bleu, evaluate_by_origin, signature
    from .corpus import flatten_sentences, load_documents, read_manifest
    from .errors import UnknownOrigin
    hyp = load_documents(inputs["hyp"])
    manifest = read_manifest(inputs["manifest"]) if "manifest" in inputs else {}
    ref = load_documents(inputs["ref"], manifest=manifest)
    try:
        results = evaluate_by_origin(hyp, ref)
    except UnknownOrigin:
        # no usable origin tags: report the joint score only
        results = {"src": None, "tgt": None,
                   "all": bleu(flatten_sentences(hyp), flatten_sentences(ref))}
    with open(outputs["report"], "w", encoding="utf-8", newline="\n") as fh:
        fh.write("split\tscore\tp1\tp2\tp3\tp4\tbp\thyp_len\tref_len\n")
        for split in ("src", "tgt", "all"):
            r = results[split]
            if r is None:
                fh.write(f"{split}\tabsent\t\t\t\t\t\t\t\n")
                continue
            p = r.ngram_precisions
            fh.write(f"{split}\t{r.score:.4f}\t{p[0]:.4f}\t{p[1]:.4f}"
                     f"\t{p[2]:.4f}\t{p[3]:.4f}\t{r.brevity_penalty:.4f}"
                     f"\t{r.hyp_len}\t{r.ref_len}\n")
        fh.write(f"# {signature()}\n")


STAGE_HANDLERS = {
    "subword": _stage_subword,
    "markup": _stage_markup,
    "subdocs": _stage_subdocs,
    "fakedocs": _stage_fakedocs,
    "upsample": _stage_upsample,
    "mix": _stage_mix,
    "filter-score": _stage_filter_score,
    "filter-apply": _stage_filter_apply,
    "filter": _stage_filter,
    "backtranslate": _stage_backtranslate,
    "train": _stage_train,
    "finetune": _stage_finetune,
    "translate": _stage_translate,
    "second-pass": _stage_second_pass,
    "evaluate": _stage_evaluate,
}


def preset_paper_pipeline(workdir: str = "runs/full-system") -> Pipeline:
    """The canonical 12-stage system-building recipe.

    Data placeholders (data/...) and scorer checkpoints (models/...) are
    external inputs; every other edge references an earlier stage's output.
    """
    stages = [
        Stage("subword", "subword",
              inputs={"src": "data/parallel.src", "tgt": "data/parallel.tgt"},
              outputs={"vocab": "vocab.txt"},
              params={"vocab_size": "4000"}),
        Stage("filter", "filter",
              inputs={"src": "data/parallel.src", "tgt": "data/parallel.tgt",
                      "vocab": "stage:subword:vocab",
                      "fwd": "models/scorer-fwd.ckpt",
                      "bwd": "models/scorer-bwd.ckpt"},
              outputs={"src": "filtered.src", "tgt": "filtered.tgt"},
              params={"keep_fraction": "7/10"}),
        Stage("reverse-model", "train",
              inputs={"src": "stage:filter:tgt", "tgt": "stage:filter:src",
                      "vocab": "stage:subword:vocab"},
              outputs={"checkpoint": "reverse.ckpt", "log": "train.tsv"},
              params={"level": "sentence", "seed": "1"}),
        Stage("backtranslate", "backtranslate",
              inputs={"mono": "data/mono.tgt",
                      "reverse": "stage:reverse-model:checkpoint",
                      "vocab": "stage:subword:vocab"},
              outputs={"src": "bt.src", "tgt": "bt.tgt",
                       "manifest": "bt.manifest"},
              params={"temperature": "1.0", "seed": "2"}),
        Stage("mix-sentence", "mix",
              inputs={"filtered_src": "stage:filter:src",
                      "filtered_tgt": "stage:filter:tgt",
                      "bt_src": "stage:backtranslate:src",
                      "bt_tgt": "stage:backtranslate:tgt"},
              outputs={"src": "mixed.src", "tgt": "mixed.tgt"},
              params={"frac_filtered": "1/2", "frac_bt": "1/2",
                      "total_sentences": "100000", "seed": "3"}),
        Stage("sentence-models", "train",
              inputs={"src": "stage:mix-sentence:src",
                      "tgt": "stage:mix-sentence:tgt",
                      "vocab": "stage:subword:vocab"},
              outputs={"checkpoint": "b-type.ckpt", "log": "train.tsv"},
              params={"level": "sentence", "seed": "4",
                      "note": "a-type uses in.src/tgt = stage:filter outputs"}),
        Stage("finetune", "finetune",
              inputs={"checkpoint": "stage:sentence-models:checkpoint",
                      "src": "stage:filter:src", "tgt": "stage:filter:tgt",
                      "dev_src": "data/dev.src", "dev_tgt": "data/dev.tgt",
                      "vocab": "stage:subword:vocab"},
              outputs={"checkpoint": "c-type.ckpt", "log": "finetune.tsv"},
              params={"level": "sentence", "early_stop_metric": "bleu",
                      "early_stop_patience": "3"}),
        Stage("document-data", "markup",
              inputs={"src": "stage:mix-sentence:src",
                      "tgt": "stage:mix-sentence:tgt",
                      "vocab": "stage:subword:vocab"},
              outputs={"src": "doc.src", "tgt": "doc.tgt"},
              params={"max_doc_tokens": "1000",
                      "note": "assembly: markup + subdocs + fakedocs + bt docs"}),
        Stage("document-models", "train",
              inputs={"src": "stage:document-data:src",
                      "tgt": "stage:document-data:tgt",
                      "mono": "data/mono-docs.src",
                      "vocab": "stage:subword:vocab"},
              outputs={"checkpoint": "doc-C.ckpt", "log": "train.tsv"},
              params={"level": "document", "masked_lm": "true",
                      "mask_rate": "0.2", "seed": "5"}),
        Stage("first-pass", "translate",
              inputs={"checkpoint": "stage:finetune:checkpoint",
                      "input": "data/parallel.src",
                      "vocab": "stage:subword:vocab"},
              outputs={"output": "first-pass.tgt"},
              params={"decode_mode": "sample", "level": "sentence",
                      "seed": "6"}),
        Stage("second-pass-models", "train",
              inputs={"src": "stage:document-data:src",
                      "tgt": "stage:document-data:tgt",
                      "fp": "stage:first-pass:output",
                      "vocab": "stage:subword:vocab"},
              outputs={"checkpoint": "second-pass.ckpt", "log": "train.tsv"},
              params={"level": "document", "dual_encoder": "true",
                      "seed": "7"}),
        Stage("ensemble-eval", "evaluate",
              inputs={"hyp": "stage:first-pass:output", "ref": "data/dev.tgt",
                      "manifest": "data/dev.manifest"},
              outputs={"report": "report.tsv"},
              params={"topologies": "(4xa); (4xc); (4xa)+(4xc); "
                                    "0.3*(4xa)+1.0*(4xc)"}),
    ]
    return Pipeline(workdir, stages)
