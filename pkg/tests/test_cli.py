import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from harmonizer import __version__
from harmonizer.cli import main
from harmonizer.encoding import encode
from harmonizer.gamma import generate
from harmonizer.model import forward
from harmonizer.musicxml import load_sheet
from harmonizer.weights_io import load_weights, loads_weights

GOLDEN = Path(__file__).parent / "data" / "golden"
TINY = "encoder_hidden: 8\nprojection: 4\ndecoder_hidden: 8\nprev_chord_embedding: 4\nmax_epochs: 2\nbatch_size: 4\n"


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["ingest", "--demo", "--out", str(root / "corpus")]) == 0
    (root / "tiny.yaml").write_text(TINY)
    assert main(["train", str(root / "corpus"), "--config", str(root / "tiny.yaml"),
                 "--out", str(root / "w.ahwt")]) == 0
    return root


def test_ingest_kept_and_removed(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    for name in ("01_whole_note", "02_flat_key", "03_minor_seventh", "10_chordless"):
        shutil.copy(GOLDEN / f"{name}.musicxml", src)
    out = tmp_path / "out"
    assert main(["ingest", str(src), "--out", str(out)]) == 0
    manifest = json.loads((out / "_manifest.json").read_text())
    assert manifest["counts"] == {"kept": 3, "removed": 1}
    assert manifest["removed"] == [{"id": "10_chordless", "reason": "no chords"}]
    assert sorted(p.name for p in out.glob("*.json") if not p.name.startswith("_")) == [
        "01_whole_note.json", "02_flat_key.json", "03_minor_seventh.json"]
    assert (out / "01_whole_note.json").read_text() == (GOLDEN / "01_whole_note.json").read_text()
    prov = manifest["provenance"]
    assert prov["version"] == __version__ and len(prov["config_hash"]) == 64
    assert set(prov["inputs"]) == {p.name for p in src.iterdir()}

    first = (out / "_manifest.json").read_bytes()
    assert main(["ingest", str(src), "--out", str(out)]) == 0
    assert (out / "_manifest.json").read_bytes() == first


def test_ingest_empty_dir_fails(tmp_path, capsys):
    (tmp_path / "empty").mkdir()
    assert main(["ingest", str(tmp_path / "empty"), "--out", str(tmp_path / "o")]) != 0
    assert "no parseable" in capsys.readouterr().err


def test_ingest_records_parse_errors(tmp_path):
    src = tmp_path / "src"
    src.mkdir()
    shutil.copy(GOLDEN / "02_flat_key.musicxml", src)
    (src / "broken.musicxml").write_text("<score-partwise><part")
    assert main(["ingest", str(src), "--out", str(tmp_path / "o")]) == 0
    manifest = json.loads((tmp_path / "o" / "_manifest.json").read_text())
    assert manifest["removed"][0]["id"] == "broken"
    assert manifest["removed"][0]["reason"].startswith("parse error")


def test_demo_corpus(workspace):
    manifest = json.loads((workspace / "corpus" / "_manifest.json").read_text())
    assert manifest["counts"] == {"kept": 10, "removed": 0}


def test_train_outputs(workspace):
    report = json.loads((workspace / "w.report.json").read_text())
    assert report["best_epoch"] >= 1 and len(report["epochs"]) == 2
    assert len(report["provenance"]["split"]["train"]) == 9
    w, prov = loads_weights((workspace / "w.ahwt").read_bytes())
    assert w.config.encoder_hidden == 8
    assert prov["config"]["max_epochs"] == 2 and prov["version"] == __version__
    assert len(prov["inputs"]) == 10


def test_train_byte_identical_and_flag_precedence(workspace, tmp_path):
    out = tmp_path / "again.ahwt"
    assert main(["train", str(workspace / "corpus"), "--config", str(workspace / "tiny.yaml"),
                 "--out", str(out)]) == 0
    assert out.read_bytes() == (workspace / "w.ahwt").read_bytes()
    other = tmp_path / "flag.ahwt"
    assert main(["train", str(workspace / "corpus"), "--config", str(workspace / "tiny.yaml"),
                 "--max-epochs", "1", "--out", str(other)]) == 0
    assert load_weights(other).config.max_epochs == 1


def test_train_patience_zero(workspace, tmp_path):
    out = tmp_path / "p0.ahwt"
    assert main(["train", str(workspace / "corpus"), "--config", str(workspace / "tiny.yaml"),
                 "--patience", "0", "--max-epochs", "30", "--learning-rate", "0.5", "--out", str(out)]) == 0
    report = json.loads(out.with_suffix(".report.json").read_text())
    losses = [e["valid_loss"] for e in report["epochs"]]
    assert report["stopped_epoch"] == len(losses)
    assert len(losses) == 30 or losses[-1] >= min(losses[:-1])
    assert all(b < a for a, b in zip(losses[:-2], losses[1:-1]))


def test_train_unwritable_path(workspace, capsys):
    code = main(["train", str(workspace / "corpus"), "--config", str(workspace / "tiny.yaml"),
                 "--out", "/nonexistent/dir/w.ahwt"])
    assert code != 0
    assert "cannot write" in capsys.readouterr().err


def test_bad_config_rejected(workspace, tmp_path):
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("hidden_units: 3\n")
    assert main(["train", str(workspace / "corpus"), "--config", str(cfg), "--out", str(tmp_path / "w")]) != 0


def test_harmonize_half_gamma_is_greedy(workspace, tmp_path):
    melody = workspace / "corpus" / "toy00_003.json"
    out = tmp_path / "h.json"
    assert main(["harmonize", str(melody), "-w", str(workspace / "w.ahwt"), "--gamma", "0.5",
                 "--out", str(out), "--trace", str(tmp_path / "trace.json")]) == 0
    w = load_weights(workspace / "w.ahwt")
    enc = encode(load_sheet(melody), w.vocab, oov_as_rest=True)
    greedy = forward(w, enc).argmax(-1)
    got = encode(load_sheet(out), w.vocab)
    assert np.array_equal(got.chord, greedy)
    assert got.melody.tolist() == enc.melody.tolist()
    density = json.loads((tmp_path / "h.density.json").read_text())
    assert {"onsets", "bars", "onsets_per_bar", "onset_beat_histogram", "provenance"} <= set(density)
    trace = json.loads((tmp_path / "trace.json").read_text())
    assert len(trace["steps"]) == len(enc)


def test_harmonize_deterministic(workspace, tmp_path):
    args = ["harmonize", str(GOLDEN / "03_minor_seventh.musicxml"), "-w", str(workspace / "w.ahwt"),
            "--gamma", "0.8", "--strategy", "sample", "--seed", "7", "--temperature", "0.9"]
    assert main(args + ["--out", str(tmp_path / "a.json")]) == 0
    assert main(args + ["--out", str(tmp_path / "b.json")]) == 0
    assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    assert (tmp_path / "a.density.json").read_bytes() == (tmp_path / "b.density.json").read_bytes()
    w = load_weights(workspace / "w.ahwt")
    enc = encode(load_sheet(GOLDEN / "03_minor_seventh.musicxml"), w.vocab, oov_as_rest=True)
    expected = generate(w, enc, 0.8, "sample", 0.9, 7)
    assert np.array_equal(encode(load_sheet(tmp_path / "a.json"), w.vocab).chord, expected)


@pytest.mark.parametrize("gamma", ["1.5", "-0.1", "abc"])
def test_harmonize_gamma_validation(workspace, tmp_path, gamma):
    with pytest.raises(SystemExit) as exc:
        main(["harmonize", str(GOLDEN / "01_whole_note.musicxml"), "-w", str(workspace / "w.ahwt"),
              "--gamma", gamma, "--out", str(tmp_path / "x.json")])
    assert exc.value.code == 2


def test_harmonize_gamma_from_config_validated(workspace, tmp_path):
    cfg = tmp_path / "g.yaml"
    cfg.write_text("gamma: 2.0\n")
    assert main(["harmonize", str(GOLDEN / "01_whole_note.musicxml"), "-w", str(workspace / "w.ahwt"),
                 "--config", str(cfg), "--out", str(tmp_path / "x.json")]) != 0
    # flags override the file
    assert main(["harmonize", str(GOLDEN / "01_whole_note.musicxml"), "-w", str(workspace / "w.ahwt"),
                 "--config", str(cfg), "--gamma", "0.3", "--out", str(tmp_path / "x.json")]) == 0
    prov = json.loads((tmp_path / "x.json").read_text())["provenance"]
    assert prov["config"]["gamma"] == 0.3


def test_harmonize_vocab_mismatch(workspace, tmp_path, capsys):
    melody = str(GOLDEN / "01_whole_note.musicxml")
    assert main(["harmonize", melody, "-w", str(workspace / "w.ahwt"), "--vocab-hash", "0" * 64,
                 "--out", str(tmp_path / "x.json")]) != 0
    w = load_weights(workspace / "w.ahwt")
    enc = encode(load_sheet(melody), w.vocab, oov_as_rest=True)
    foreign = tmp_path / "enc.json"
    foreign.write_text(enc.to_json().replace(w.vocab.hash, "f" * 64))
    assert main(["harmonize", str(foreign), "-w", str(workspace / "w.ahwt"), "--out", str(tmp_path / "y.json")]) != 0
    assert "does not match" in capsys.readouterr().err
    native = tmp_path / "native.json"
    native.write_text(enc.to_json())
    assert main(["harmonize", str(native), "-w", str(workspace / "w.ahwt"), "--out", str(tmp_path / "z.json")]) == 0


def test_harmonize_corrupt_weights(workspace, tmp_path):
    bad = tmp_path / "bad.ahwt"
    data = bytearray((workspace / "w.ahwt").read_bytes())
    data[100] ^= 0xFF
    bad.write_bytes(bytes(data))
    assert main(["harmonize", str(GOLDEN / "01_whole_note.musicxml"), "-w", str(bad),
                 "--out", str(tmp_path / "x.json")]) != 0


def test_evaluate_identity_and_determinism(workspace, tmp_path):
    corpus = workspace / "corpus"
    out = tmp_path / "ev.json"
    assert main(["evaluate", str(corpus), str(corpus), "--out", str(out)]) == 0
    report = json.loads(out.read_text())
    assert report["aggregate"]["generated"]["acc"] == 1.0
    assert len(report["pieces"]) == 10
    assert "harmonic_rhythm_type" in report["notes"]
    csv = out.with_suffix(".csv").read_text().splitlines()
    assert len(csv) == 1 + 20
    first = out.read_bytes(), out.with_suffix(".csv").read_bytes()
    assert main(["evaluate", str(corpus), str(corpus), "--out", str(out)]) == 0
    assert (out.read_bytes(), out.with_suffix(".csv").read_bytes()) == first


def test_evaluate_id_mismatch(workspace, tmp_path, capsys):
    gen = tmp_path / "gen"
    gen.mkdir()
    for p in sorted((workspace / "corpus").glob("toy*.json"))[:-1]:
        shutil.copy(p, gen)
    assert main(["evaluate", str(gen), str(workspace / "corpus"), "--out", str(tmp_path / "e.json")]) != 0
    assert "toy00_009" in capsys.readouterr().err


def test_module_entry_point_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out
