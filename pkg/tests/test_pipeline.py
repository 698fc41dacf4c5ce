import json
import os

import numpy as np
import pytest

from docmt.cli import main as cli_main
from docmt.errors import ConfigError
from docmt.pipeline import (
    Pipeline,
    Stage,
    parse_pipeline_config,
    preset_paper_pipeline,
    run_pipeline,
    write_pipeline_config,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


@pytest.fixture()
def toy_data(tmp_path):
    rng = np.random.default_rng(0)
    words_src = ["aa", "ab", "ba", "bb", "ca"]
    words_tgt = ["xx", "xy", "yx", "yy", "zx"]
    src_lines, tgt_lines = [], []
    for d in range(12):
        n = int(rng.integers(1, 4))
        for _ in range(n):
            k = int(rng.integers(1, 5))
            picks = rng.integers(0, 5, size=k)
            src_lines.append(" ".join(words_src[i] for i in picks))
            tgt_lines.append(" ".join(words_tgt[i] for i in picks))
        src_lines.append("")
        tgt_lines.append("")
    src = _write(tmp_path / "train.src", "\n".join(src_lines[:-1]) + "\n")
    tgt = _write(tmp_path / "train.tgt", "\n".join(tgt_lines[:-1]) + "\n")
    return src, tgt


def _pipeline_cfg(tmp_path, src, tgt, vocab_size=28, seed=3):
    return _write(tmp_path / "pipe.cfg", f"""
[pipeline]
workdir = {tmp_path}/work

[stage:vocab]
kind = subword
in.src = {src}
in.tgt = {tgt}
vocab_size = {vocab_size}
out.vocab = vocab.txt

[stage:subdocs]
kind = subdocs
in.src = {src}
in.tgt = {tgt}
seed = {seed}
max_per_doc = 4
out.src = subs.src
out.tgt = subs.tgt

[stage:marked]
kind = markup
in.src = stage:subdocs:src
in.tgt = stage:subdocs:tgt
in.vocab = stage:vocab:vocab
max_doc_tokens = 50
out.src = doc.src
out.tgt = doc.tgt
""")


def test_pipeline_runs_and_caches(tmp_path, toy_data):
    src, tgt = toy_data
    cfg = _pipeline_cfg(tmp_path, src, tgt)
    status, reports = run_pipeline(cfg)
    assert status == 0
    assert [r["status"] for r in reports] == ["run", "run", "run"]
    for r in reports:
        assert os.path.exists(os.path.join(r["dir"], "provenance.json"))

    status, reports = run_pipeline(cfg)
    assert status == 0
    assert [r["status"] for r in reports] == ["cached", "cached", "cached"]


def test_pipeline_idempotent_outputs(tmp_path, toy_data):
    src, tgt = toy_data
    cfg = _pipeline_cfg(tmp_path, src, tgt)
    _, first = run_pipeline(cfg)
    blobs1 = {}
    for r in first:
        for name in sorted(os.listdir(r["dir"])):
            if name != "provenance.json":
                with open(os.path.join(r["dir"], name), "rb") as fh:
                    blobs1[f"{r['stage']}/{name}"] = fh.read()
    import shutil
    shutil.rmtree(str(tmp_path / "work"))
    _, second = run_pipeline(cfg)
    for r in second:
        for name in sorted(os.listdir(r["dir"])):
            if name != "provenance.json":
                with open(os.path.join(r["dir"], name), "rb") as fh:
                    assert fh.read() == blobs1[f"{r['stage']}/{name}"]


def test_changed_parameter_reruns_stage_and_descendants(tmp_path, toy_data):
    src, tgt = toy_data
    cfg = _pipeline_cfg(tmp_path, src, tgt)
    run_pipeline(cfg)
    cfg2 = _pipeline_cfg(tmp_path, src, tgt, seed=99)  # augmentation param
    status, reports = run_pipeline(cfg2)
    assert status == 0
    by_stage = {r["stage"]: r["status"] for r in reports}
    assert by_stage["vocab"] == "cached"
    assert by_stage["subdocs"] == "run"
    assert by_stage["marked"] == "run"


def test_missing_input_is_config_error_before_running(tmp_path):
    cfg = _write(tmp_path / "bad.cfg", f"""
[pipeline]
workdir = {tmp_path}/work

[stage:vocab]
kind = subword
in.src = {tmp_path}/nope.src
vocab_size = 40
out.vocab = vocab.txt
""")
    with pytest.raises(ConfigError, match="nope.src"):
        run_pipeline(cfg)
    assert not os.path.exists(str(tmp_path / "work"))


def test_provenance_records_inputs(tmp_path, toy_data):
    src, tgt = toy_data
    cfg = _pipeline_cfg(tmp_path, src, tgt)
    _, reports = run_pipeline(cfg)
    for r in reports:
        with open(os.path.join(r["dir"], "provenance.json"), encoding="utf-8") as fh:
            prov = json.load(fh)
        assert prov["stage"] == r["stage"]
        assert prov["input_hashes"]
        assert prov["outputs"]


def test_preset_pipeline_structure():
    pipeline = preset_paper_pipeline()
    assert len(pipeline.stages) == 12
    finetune = pipeline.stage("finetune")
    assert finetune.inputs["checkpoint"].startswith("stage:sentence-models:")
    assert finetune.inputs["src"] == "stage:filter:src"
    grid = pipeline.stage("ensemble-eval")
    assert "0.3*(4xa)+1.0*(4xc)" in grid.params["topologies"]
    names = [s.name for s in pipeline.stages]
    assert names.index("backtranslate") > names.index("reverse-model")
    assert names.index("second-pass-models") > names.index("first-pass")


def test_preset_round_trips_through_config(tmp_path):
    pipeline = preset_paper_pipeline()
    path = tmp_path / "preset.cfg"
    write_pipeline_config(pipeline, str(path))
    again = parse_pipeline_config(str(path))
    assert len(again.stages) == 12
    assert [s.name for s in again.stages] == [s.name for s in pipeline.stages]
    for a, b in zip(again.stages, pipeline.stages):
        assert a.kind == b.kind
        assert a.inputs == b.inputs
        assert a.outputs == b.outputs


def test_cli_pipeline_preset_and_evaluate(tmp_path, capsys):
    out_cfg = tmp_path / "preset.cfg"
    assert cli_main(["pipeline", "preset", "-o", str(out_cfg)]) == 0
    assert out_cfg.exists()

    hyp = _write(tmp_path / "hyp.txt", "the cat sat\n\na dog ran\n")
    ref = _write(tmp_path / "ref.txt", "the cat sat\n\na dog ran far\n")
    manifest = _write(tmp_path / "m.tsv",
                      "ref.txt#0\toriginal-src\nref.txt#1\toriginal-tgt\n")
    assert cli_main(["evaluate", "--hyp", hyp, "--ref", ref,
                     "--manifest", manifest]) == 0
    out = capsys.readouterr().out
    assert "split" in out and "src" in out and "BLEU+case.mixed" in out


def test_cli_subword_and_markup(tmp_path, toy_data):
    src, tgt = toy_data
    vocab_path = str(tmp_path / "vocab.txt")
    assert cli_main(["subword", "--input", src, "--input", tgt,
                     "--vocab-size", "28", "--output", vocab_path]) == 0
    assert os.path.exists(vocab_path)
    out_src = str(tmp_path / "m.src")
    out_tgt = str(tmp_path / "m.tgt")
    assert cli_main(["markup", "--src", src, "--tgt", tgt, "--vocab",
                     vocab_path, "--out-src", out_src, "--out-tgt", out_tgt,
                     "--max-doc-tokens", "60"]) == 0
    line = open(out_src, encoding="utf-8").readline()
    assert line.startswith("<BEG> ")


def test_cli_exit_codes(tmp_path):
    bad_cfg = _write(tmp_path / "bad.cfg", "[pipeline]\n")
    assert cli_main(["pipeline", "run", str(bad_cfg)]) == 2


def test_cli_stage_failure_exit_code(tmp_path, toy_data):
    src, tgt = toy_data
    cfg = _write(tmp_path / "fail.cfg", f"""
[pipeline]
workdir = {tmp_path}/work

[stage:vocab]
kind = subword
in.src = {src}
vocab_size = 10
out.vocab = vocab.txt
""")
    assert cli_main(["pipeline", "run", str(cfg)]) == 1
