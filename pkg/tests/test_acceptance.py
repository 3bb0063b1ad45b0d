"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py``; the summary section at the end
of the run lists every criterion.
"""

import itertools
import math
import random
import time
from pathlib import Path

import numpy as np
import pytest
from scipy.stats import spearmanr

from harmonizer.chords import REST, ChordSymbol, PitchClassSet, chord_to_pcp, parse_chord_symbol, pitch_name
from harmonizer.encoding import ChordVocab, FrameEncoding, build_vocab, decode_chords, encode
from harmonizer.gamma import density_report, gamma_rescale, generate
from harmonizer.metrics import (
    entropy, harmonicity_metrics, pitch_consonance, progression_metrics, rhythm_metrics, tonal_distance,
)
from harmonizer.model import ModelConfig, evaluate_loss, grad_check, init_weights, make_batch, train
from harmonizer.musicxml import Corpus, corpus_filter, parse_musicxml
from harmonizer.score import Note, bar_layout, dumps_leadsheet, validate_leadsheet
from harmonizer.toy import toy_corpus
from harmonizer.weights_io import UnsupportedVersionError, WeightsFormatError, dumps_weights, loads_weights
from helpers import random_leadsheet

GOLDEN = Path(__file__).parent / "data" / "golden"
GAMMAS = [round(0.05 * k, 2) for k in range(21)]


def report(record_property, line):
    record_property("detail", line)
    print(line)


@pytest.mark.criterion(1, "gamma sampling suite")
def test_gamma_sampling_suite(record_property):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_sum = worst_identity = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 64))
        d = rng.dirichlet(np.ones(n))
        attr = rng.choice(n, size=int(rng.integers(1, max(2, n // 2))), replace=False)
        masses = []
        outside = np.ones(n, dtype=bool)
        outside[attr] = False
        for g in GAMMAS:
            out = gamma_rescale(d, attr, g)
            if g == 0.0:
                assert not out[outside].any()
            worst_sum = max(worst_sum, abs(out.sum() - 1.0))
            if g == 0.5:
                worst_identity = max(worst_identity, float(np.abs(out - d).max()))
            masses.append(float(out[attr].sum()))
        assert all(b < a for a, b in zip(masses, masses[1:])), masses
        # the mass is a sum over several tokens, so allow summation rounding
        assert abs(masses[0] - 1.0) < 1e-12 and masses[-1] == 0.0
    elapsed = time.perf_counter() - t0
    report(record_property, f"max |sum-1| {worst_sum:.1e}, max identity error {worst_identity:.1e}, {elapsed:.2f} s")
    assert worst_sum < 1e-9
    assert worst_identity < 1e-12
    assert elapsed < 5.0


@pytest.mark.criterion(2, "gradient check, 20 trials")
def test_gradient_check(record_property):
    rng = np.random.default_rng(7)
    t0 = time.perf_counter()
    worst = 0.0
    checked = set()
    for trial in range(20):
        V = int(rng.integers(3, 7))
        vocab = ChordVocab(("N.C.", *[f"{pitch_name(k)}" for k in range(V - 1)]))
        cfg = ModelConfig(encoder_hidden=3, projection=3, decoder_hidden=4, prev_chord_embedding=3,
                          chord_vocab_size=V, dropout=0.0)
        w = init_weights(cfg, vocab, seed=trial, dtype=np.float64)
        for v in w.tensors.values():
            v += rng.normal(0, 0.3, v.shape)
        encs = [FrameEncoding(rng.integers(0, 128, T), rng.integers(0, 4, T), rng.integers(-7, 8, T),
                              rng.integers(0, V, T)) for T in rng.integers(2, 8, size=2)]
        err, per_tensor = grad_check(w, make_batch(encs), samples_per_tensor=8, seed=trial)
        checked |= set(per_tensor)
        assert set(per_tensor) == set(w.tensors)
        worst = max(worst, err)
    elapsed = time.perf_counter() - t0
    report(record_property, f"max relative error {worst:.2e} over {len(checked)} tensors, {elapsed:.1f} s")
    assert worst < 1e-4
    assert elapsed < 60.0


OVERFIT_CFG = ModelConfig(batch_size=2, max_epochs=150, patience=1000, seed=0)


@pytest.fixture(scope="module")
def overfit():
    sheets = [ls for _, ls in toy_corpus(10)]
    t0 = time.perf_counter()
    w, rep = train(sheets, sheets, OVERFIT_CFG)
    elapsed = time.perf_counter() - t0
    return sheets, w, rep, elapsed


@pytest.mark.criterion(3, "overfit the 10-piece toy corpus")
def test_overfit(overfit, record_property):
    sheets, w, rep, elapsed = overfit
    encs = [encode(ls, w.vocab) for ls in sheets]
    _, acc = evaluate_loss(w, encs, batch_size=len(encs))
    free = np.mean(np.concatenate([generate(w, e, 0.5) == e.chord for e in encs]))
    # determinism: a fresh short run replays the first epochs exactly
    _, short = train(sheets, sheets, OVERFIT_CFG.__class__(**{**OVERFIT_CFG.to_dict(), "max_epochs": 3}))
    report(record_property, f"train frame accuracy {acc:.4f} (free-running {free:.4f}) at epoch "
                            f"{rep.best_epoch}/{len(rep.epochs)}, {elapsed:.0f} s")
    assert short.epochs == rep.epochs[:3]
    assert len(rep.epochs) <= 200
    assert acc > 0.95
    assert elapsed < 300


@pytest.mark.criterion(4, "density trend over gamma")
def test_density_trend(overfit, record_property):
    _, w, _, _ = overfit
    held_out = [encode(ls, w.vocab, oov_as_rest=True) for _, ls in toy_corpus(20, seed=1)]
    grid = [0.1, 0.3, 0.5, 0.7, 0.9]
    rates = [float(np.mean([density_report(generate(w, e, g, seed=0), e).onsets_per_bar for e in held_out]))
             for g in grid]
    rho = spearmanr(grid, rates).correlation
    report(record_property, "onsets/bar " + ", ".join(f"{g}:{r:.2f}" for g, r in zip(grid, rates))
           + f"; spearman {rho:.3f}")
    assert all(b >= a for a, b in zip(rates, rates[1:]))
    assert rho > 0.8


@pytest.mark.criterion(5, "metric oracles")
def test_metric_oracles(record_property):
    P = parse_chord_symbol
    # uniform CHE
    che = progression_metrics([(0, P("C")), (4, P("F")), (8, P("G")), (12, P("Am"))]).che
    assert abs(che - math.log(4)) < 1e-9
    # CTnCTR with only chord tones
    melody = [Note(0, 4, 60), Note(4, 4, 64), Note(8, 4, 67), Note(12, 4, 72)]
    assert abs(harmonicity_metrics(melody, [P("C")] * 16).ctnctr - 1.0) < 1e-9
    # PCS per interval class against a single-tone chord
    table = {0: 1, 3: 1, 4: 1, 7: 1, 8: 1, 9: 1, 5: 0}
    single = ChordSymbol("x", 0, "single", PitchClassSet.of([0]))
    for iv in range(12):
        assert pitch_consonance(60 + iv, single) == table.get(iv, -1)
    pcs = {p: harmonicity_metrics([Note(0, 16, p)], [P("C")] * 16).pcs for p in (64, 65, 66)}
    assert pcs == {64: 1.0, 65: 0.0, 66: -1.0}
    # CBS arithmetic
    beat = [3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0] * 2
    assert abs(rhythm_metrics(np.repeat([1, 2], 16), beat).cbs - 3.0) < 1e-9
    assert abs(rhythm_metrics(np.repeat([1, 2, 3, 4], [4, 12, 4, 12]), beat).cbs - 2.0) < 1e-9
    # HRHE of two equally frequent bar patterns
    chords = np.concatenate([np.repeat([1, 2], [8, 8]), np.repeat([3], 16)] * 2)
    assert abs(rhythm_metrics(chords, beat * 2).hrhe - math.log(2)) < 1e-9
    assert abs(entropy([1, 1]) - math.log(2)) < 1e-9
    # transposition invariance across all major-triad pairs
    worst = 0.0
    for a, b in itertools.product(range(12), repeat=2):
        d = tonal_distance(chord_to_pcp(P(pitch_name(a))), chord_to_pcp(P(pitch_name(b))))
        for k in range(1, 12):
            dk = tonal_distance(chord_to_pcp(P(pitch_name(a + k))), chord_to_pcp(P(pitch_name(b + k))))
            worst = max(worst, abs(dk - d))
    report(record_property, f"all worked examples match; max transposition deviation {worst:.1e}")
    assert worst < 1e-12


@pytest.mark.criterion(6, "encoding round-trip on 100 random lead sheets")
def test_encoding_roundtrip(record_property):
    features = {"meters": set(), "key_change": 0, "time_change": 0, "pickup": 0}
    for i in range(100):
        ls = random_leadsheet(random.Random(i))
        assert validate_leadsheet(ls) == []
        vocab = build_vocab([ls])
        enc = encode(ls, vocab)
        assert len(enc.melody) == len(enc.beat) == len(enc.key) == len(enc.chord) == ls.total_frames
        assert tuple(decode_chords(enc.chord, vocab)) == ls.chord_regions
        for bar in bar_layout(ls):
            if bar.full:
                assert int((enc.beat[bar.start:bar.start + bar.length] == 3).sum()) == 1
        features["meters"] |= {str(ts) for _, ts in ls.time_regions}
        features["key_change"] += len(ls.key_regions) > 1
        features["time_change"] += len(ls.time_regions) > 1
        features["pickup"] += ls.pickup_frames > 0
    report(record_property, f"meters {sorted(features['meters'])}, key changes {features['key_change']}, "
                            f"time changes {features['time_change']}, pickups {features['pickup']}")
    assert features["meters"] == {"4/4", "3/4", "6/8"}
    assert min(features["key_change"], features["time_change"], features["pickup"]) > 0


@pytest.mark.criterion(7, "parser golden suite and corpus filter")
def test_golden_suite(record_property):
    files = sorted(GOLDEN.glob("*.musicxml"))
    assert len(files) >= 10
    pieces = []
    for path in files:
        ls = parse_musicxml(path.read_bytes())
        assert dumps_leadsheet(ls) == path.with_suffix(".json").read_text(), path.name
        pieces.append((path.stem, ls))
    corpus = Corpus(tuple(pieces))
    removed = sorted({p for p, _ in corpus} - {p for p, _ in corpus_filter(corpus)})
    report(record_property, f"{len(files)} files byte-identical; removed {removed}")
    assert removed == ["10_chordless", "11_static_six_bars"]


@pytest.mark.criterion(8, "weights round-trip and refusal")
def test_weights_roundtrip(record_property):
    vocab = ChordVocab(("N.C.", "C", "F", "G", "Am"))
    w = init_weights(ModelConfig(chord_vocab_size=5), vocab, seed=3)
    data = dumps_weights(w, {"seed": 3})
    back, _ = loads_weights(data)
    assert all(back.tensors[k].tobytes() == v.tobytes() for k, v in w.tensors.items())
    assert dumps_weights(back, {"seed": 3}) == data
    rng = np.random.default_rng(0)
    refused = 0
    for pos in rng.choice(len(data), size=50, replace=False):
        bad = bytearray(data)
        bad[pos] ^= 1 << int(rng.integers(0, 8))
        with pytest.raises(WeightsFormatError):
            loads_weights(bytes(bad))
        refused += 1
    with pytest.raises(WeightsFormatError):
        loads_weights(data[:-7])
    with pytest.raises(UnsupportedVersionError):
        loads_weights(dumps_weights(w, version=2))
    report(record_property, f"bit-exact over {len(w.tensors)} tensors; {refused} corruptions, "
                            "truncation and version 2 refused")
