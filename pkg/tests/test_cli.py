"""End-to-end pipeline through the command line: corpus generation, dataset
building, training, encoding, and span generation, plus the exit-code
contract (0 ok / 1 user error / 2 internal)."""

import json
import shutil
import subprocess
from types import SimpleNamespace

import pytest

from cowriter.cli import main
from cowriter.leadsheet import parse
from cowriter.model import checkpoint_load


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """One corpus -> dataset -> n-gram checkpoint chain shared by the tests."""
    root = tmp_path_factory.mktemp("cli")
    corpus = root / "corpus"
    dataset = root / "data.jsonl"
    ckpt = root / "ngram.ckpt"
    assert main(["gen-corpus", "--songs", "4", "--seed", "0", "--out", str(corpus)]) == 0
    assert main([
        "make-dataset", "--corpus", str(corpus), "--out", str(dataset),
        "--examples-per-song", "2", "--seed", "1",
    ]) == 0
    assert main([
        "train", "--dataset", str(dataset), "--out", str(ckpt), "--kind", "ngram",
        "--order", "3",
    ]) == 0
    return SimpleNamespace(
        root=root,
        corpus=corpus,
        dataset=dataset,
        ckpt=ckpt,
        sheet=corpus / "song_0000.sheet",
    )


class TestPipeline:
    def test_gen_corpus_writes_sheets(self, pipeline):
        files = sorted(pipeline.corpus.glob("*.sheet"))
        assert [f.name for f in files] == [f"song_{i:04d}.sheet" for i in range(4)]
        for f in files:
            parse(f.read_text())  # every file is a loadable sheet

    def test_make_dataset_prints_manifest(self, pipeline, tmp_path, capsys):
        out = tmp_path / "d.jsonl"
        assert main([
            "make-dataset", "--corpus", str(pipeline.corpus), "--out", str(out),
            "--examples-per-song", "2", "--seed", "1",
        ]) == 0
        manifest = json.loads(capsys.readouterr().out)
        assert manifest["examples"] == 8
        assert out.exists()
        assert (tmp_path / "d.jsonl.manifest.json").exists()

    def test_train_ngram_checkpoint_loads(self, pipeline):
        model = checkpoint_load(pipeline.ckpt)
        assert model.version.startswith("ngram3-")

    def test_train_tiny_transformer(self, pipeline, tmp_path, capsys):
        ckpt = tmp_path / "tiny.ckpt"
        assert main([
            "train", "--dataset", str(pipeline.dataset), "--out", str(ckpt),
            "--kind", "tiny", "--steps", "3", "--dim", "64", "--batch-size", "4",
        ]) == 0
        out = capsys.readouterr().out
        assert "loss: first" in out
        assert checkpoint_load(ckpt).version.startswith("tiny-2x64-")

    def test_encode_prints_triples(self, pipeline, capsys):
        assert main(["encode", str(pipeline.sheet), "--capability", "mel_to_harm",
                     "--span", "0:4"]) == 0
        lines = capsys.readouterr().out.splitlines()
        head = lines[0]
        assert head.startswith("# ")
        assert "capability mel_to_harm" in head
        n = int(head.split()[1])
        assert len(lines) == 1 + n
        assert all(("event" in ln) or ("control" in ln) for ln in lines[1:])

    def test_generate_writes_valid_sheet(self, pipeline, tmp_path, capsys):
        out = tmp_path / "filled.sheet"
        assert main([
            "generate", "--sheet", str(pipeline.sheet), "--checkpoint", str(pipeline.ckpt),
            "--span", "4:8", "--capability", "fill_in_middle", "--seed", "3",
            "--out", str(out),
        ]) == 0
        assert "wrote" in capsys.readouterr().out
        parse(out.read_text())

    def test_generate_stdout_default(self, pipeline, capsys):
        assert main([
            "generate", "--sheet", str(pipeline.sheet), "--checkpoint", str(pipeline.ckpt),
            "--span", "0:4", "--seed", "1",
        ]) == 0
        parse(capsys.readouterr().out)

    def test_generate_deterministic(self, pipeline, tmp_path):
        outs = []
        for name in ("a.sheet", "b.sheet"):
            path = tmp_path / name
            assert main([
                "generate", "--sheet", str(pipeline.sheet), "--checkpoint",
                str(pipeline.ckpt), "--span", "4:8", "--seed", "9", "--out", str(path),
            ]) == 0
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]


class TestExitCodes:
    def test_missing_sheet_is_user_error(self, pipeline, capsys):
        assert main(["encode", "does-not-exist.sheet"]) == 1
        assert "error:" in capsys.readouterr().err

    def test_bad_span_format(self, pipeline, capsys):
        assert main(["encode", str(pipeline.sheet), "--span", "x"]) == 1
        assert "A:B" in capsys.readouterr().err

    def test_span_outside_song(self, pipeline):
        assert main(["encode", str(pipeline.sheet), "--span", "0:9999"]) == 1

    def test_unknown_command(self, capsys):
        assert main(["frobnicate"]) == 1
        assert main([]) == 1

    def test_missing_checkpoint(self, pipeline):
        assert main([
            "generate", "--sheet", str(pipeline.sheet), "--checkpoint", "nope.ckpt",
            "--span", "0:4",
        ]) == 1

    def test_empty_corpus_dir(self, tmp_path):
        (tmp_path / "empty").mkdir()
        assert main([
            "make-dataset", "--corpus", str(tmp_path / "empty"), "--out",
            str(tmp_path / "d.jsonl"),
        ]) == 1

    def test_unexpected_failure_is_internal(self, monkeypatch, tmp_path, capsys):
        def boom(spec):
            raise RuntimeError("disk on fire")

        monkeypatch.setattr("cowriter.cli.generate_corpus", boom)
        assert main(["gen-corpus", "--songs", "1", "--out", str(tmp_path / "c")]) == 2
        assert "internal error: RuntimeError" in capsys.readouterr().err

    @pytest.mark.skipif(shutil.which("cowriter") is None, reason="script not on PATH")
    def test_console_script_help(self):
        proc = subprocess.run(["cowriter", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0
        assert "encode" in proc.stdout
