"""Evaluation metrics for generated chord progressions.

Chord progression: CC, CHE, CTD.  Melody/chord harmonicity: CTnCTR, PCS,
MCTD.  Harmonic rhythm: HRC, HRHE, CBS.  Plus frame accuracy and the
beat-onset / scale-degree distributions.

Harmonic-rhythm "type" is the per-bar binary chord-onset pattern.  Entropies
use the natural logarithm.  Metrics that have nothing to measure (e.g. PCS
with no sounding melody under a chord) are ``None`` rather than zero.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .chords import ChordSymbol, chord_to_pcp
from .encoding import beat_frames, chord_frames
from .gamma import chord_onsets
from .model import ContractError
from .score import KeySignature, LeadSheet, Note

RADII = (1.0, 1.0, 0.5)
ANGLES = (7 * math.pi / 6, 3 * math.pi / 2, 2 * math.pi / 3)

# pitch-class interval (melody above chord tone) -> consonance score
INTERVAL_SCORE = {0: 1, 3: 1, 4: 1, 7: 1, 8: 1, 9: 1, 5: 0}

MAJOR_DEGREES = {0: 0, 2: 1, 4: 2, 5: 3, 7: 4, 9: 5, 11: 6}
DEGREE_LABELS = ("I", "II", "III", "IV", "V", "VI", "VII", "other")

SCALAR_METRICS = ("acc", "cc", "che", "ctd", "ctnctr", "pcs", "mctd", "hrc", "hrhe", "cbs")


class UndefinedCentroidError(ValueError):
    pass


def _tc_basis() -> np.ndarray:
    l = np.arange(12)
    rows = []
    for r, ang in zip(RADII, ANGLES):
        rows.append(r * np.sin(l * ang))
        rows.append(r * np.cos(l * ang))
    return np.array(rows)


_TC_BASIS = _tc_basis()


def tonal_centroid(pcp) -> np.ndarray:
    """Six-dimensional tonal centroid of an L1-normalized pitch class profile."""
    pcp = np.asarray(pcp, dtype=np.float64)
    if pcp.shape != (12,) or (pcp < 0).any():
        raise ValueError("pcp must be a nonnegative 12-vector")
    total = pcp.sum()
    if total <= 0:
        raise UndefinedCentroidError("tonal centroid of an all-zero profile is undefined")
    return _TC_BASIS @ (pcp / total)


def tonal_distance(pcp_a, pcp_b) -> float:
    return float(np.linalg.norm(tonal_centroid(pcp_a) - tonal_centroid(pcp_b)))


def frame_accuracy(generated, truth) -> float:
    generated, truth = list(generated), list(truth)
    if len(generated) != len(truth):
        raise ContractError("sequences differ in length")
    if not truth:
        raise ContractError("empty sequences")
    return sum(a == b for a, b in zip(generated, truth)) / len(truth)


def entropy(counts) -> float:
    counts = np.asarray(list(counts), dtype=np.float64)
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum()) + 0.0


def _progression(chords) -> list[ChordSymbol]:
    """Non-rest chords in order, re-collapsed after removing rests."""
    out = []
    for item in chords:
        chord = item[1] if isinstance(item, tuple) else item
        if chord.is_rest or (out and out[-1] == chord):
            continue
        out.append(chord)
    return out


@dataclass
class ProgressionMetrics:
    cc: int
    che: float
    ctd: float | None
    ctd_flag: str = ""


def progression_metrics(chords) -> ProgressionMetrics:
    """CC, CHE and CTD for a list of ``(onset, chord)`` regions (or bare chords).

    With fewer than two chords CTD is 0 and ``ctd_flag`` says why.
    """
    prog = _progression(chords)
    hist = Counter(c.text for c in prog)
    cc = len(hist)
    che = entropy(hist.values()) if hist else 0.0
    if len(prog) < 2:
        return ProgressionMetrics(cc, che, 0.0, "fewer than two chords")
    dists = [tonal_distance(chord_to_pcp(a), chord_to_pcp(b)) for a, b in zip(prog, prog[1:])]
    return ProgressionMetrics(cc, che, float(np.mean(dists)))


@dataclass
class HarmonicityMetrics:
    ctnctr: float | None
    pcs: float | None
    mctd: float | None
    n_chord_tones: int = 0
    n_proper: int = 0
    n_nonchord: int = 0


def pitch_consonance(melody_pitch: int, chord: ChordSymbol) -> int:
    """Best consonance score of the melody note against any chord tone."""
    return max(INTERVAL_SCORE.get((melody_pitch - pc) % 12, -1) for pc in chord.pitch_classes.classes)


def harmonicity_metrics(melody, chords_per_frame) -> HarmonicityMetrics:
    """CTnCTR, PCS and MCTD.

    ``melody`` is a sequence of :class:`Note`; ``chords_per_frame`` gives the
    active chord (or the rest chord) for every frame.
    """
    notes = [Note(*n) for n in melody]
    sounding = [n for n in notes if n.pitch is not None]
    n_c = n_p = n_n = 0
    for k, note in enumerate(sounding):
        chord = chords_per_frame[note.onset]
        if chord.is_rest:
            continue
        if note.pitch % 12 in chord.pitch_classes:
            n_c += 1
            continue
        n_n += 1
        if k + 1 < len(sounding) and 0 < abs(sounding[k + 1].pitch - note.pitch) <= 2:
            n_p += 1
    ctnctr = (n_c + n_p) / (n_c + n_n) if n_c + n_n else None

    scores, dists = [], []
    for note in sounding:
        pcp = np.zeros(12)
        pcp[note.pitch % 12] = 1
        for t in range(note.onset, note.end):
            chord = chords_per_frame[t]
            if chord.is_rest:
                continue
            scores.append(pitch_consonance(note.pitch, chord))
            dists.append(tonal_distance(pcp, chord_to_pcp(chord)))
    pcs = float(np.mean(scores)) if scores else None
    mctd = float(np.mean(dists)) if dists else None
    return HarmonicityMetrics(ctnctr, pcs, mctd, n_c, n_p, n_n)


def bar_patterns(chords, beat) -> list[tuple[int, ...]]:
    """Binary onset pattern per bar; bars start at strength-3 frames.

    A leading pickup is left-padded with zeros to the first full bar's length;
    a trailing short bar is right-padded to the previous bar's length.
    """
    beat = np.asarray(beat)
    T = len(beat)
    onset = np.zeros(T, dtype=int)
    onset[chord_onsets(chords)] = 1
    starts = list(np.flatnonzero(beat == 3))
    if not starts:
        return [tuple(onset)] if T else []
    bounds = starts + [T]
    patterns = []
    lengths = [b - a for a, b in zip(bounds, bounds[1:])]
    full = max(lengths)
    for a, b in zip(bounds, bounds[1:]):
        patterns.append(tuple(onset[a:b]))
    if len(patterns) > 1 and len(patterns[-1]) < len(patterns[-2]):
        patterns[-1] = patterns[-1] + (0,) * (len(patterns[-2]) - len(patterns[-1]))
    if starts[0] > 0:
        width = lengths[0] if lengths else full
        pick = tuple(onset[:starts[0]])
        patterns.insert(0, (0,) * max(width - len(pick), 0) + pick)
    return patterns


@dataclass
class RhythmMetrics:
    hrc: int
    hrhe: float
    cbs: float | None
    onset_beat_histogram: list


def rhythm_metrics(chords, beat) -> RhythmMetrics:
    """HRC, HRHE and CBS from a chord index/label sequence and beat strengths."""
    beat = np.asarray(beat)
    if len(chords) != len(beat):
        raise ContractError("chord and beat sequences differ in length")
    patterns = Counter(bar_patterns(chords, beat))
    onsets = chord_onsets(chords)
    hist = np.bincount(beat[onsets], minlength=4).tolist() if len(onsets) else [0, 0, 0, 0]
    cbs = float(beat[onsets].mean()) if len(onsets) else None
    return RhythmMetrics(len(patterns), entropy(patterns.values()) if patterns else 0.0, cbs, hist)


def scale_degree_histogram(chords, key_regions) -> list[int]:
    """Counts of chord roots per major-mode degree I..VII of the active key, plus "other"."""
    hist = [0] * 8
    keys = sorted(key_regions, key=lambda r: r[0])
    for onset, chord in chords:
        if chord.is_rest:
            continue
        key = None
        for k_onset, k in keys:
            if k_onset <= onset:
                key = k
        if key is None:
            raise ContractError(f"no key at frame {onset}")
        if isinstance(key, int):
            key = KeySignature(key)
        hist[MAJOR_DEGREES.get((chord.root - key.tonic) % 12, 7)] += 1
    return hist


# -- reports -----------------------------------------------------------------

@dataclass
class MetricsReport:
    acc: float | None = None
    cc: float | None = None
    che: float | None = None
    ctd: float | None = None
    ctnctr: float | None = None
    pcs: float | None = None
    mctd: float | None = None
    hrc: float | None = None
    hrhe: float | None = None
    cbs: float | None = None
    beat_onset_histogram: list = field(default_factory=lambda: [0, 0, 0, 0])
    scale_degree_histogram: list = field(default_factory=lambda: [0] * 8)
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _frame_labels(ls: LeadSheet) -> list[str]:
    return [c.text for c in chord_frames(ls)]


def piece_report(ls: LeadSheet, truth: LeadSheet | None = None) -> MetricsReport:
    """All metrics for one lead sheet; ``acc`` needs the reference ``truth``."""
    per_frame = chord_frames(ls)
    labels = [c.text for c in per_frame]
    beat = beat_frames(ls)
    prog = progression_metrics(ls.chord_regions)
    harm = harmonicity_metrics(ls.melody, per_frame)
    rhy = rhythm_metrics(_rest_coded(labels), beat)
    acc = frame_accuracy(labels, _frame_labels(truth)) if truth is not None else None
    return MetricsReport(
        acc=acc, cc=prog.cc, che=prog.che, ctd=prog.ctd,
        ctnctr=harm.ctnctr, pcs=harm.pcs, mctd=harm.mctd,
        hrc=rhy.hrc, hrhe=rhy.hrhe, cbs=rhy.cbs,
        beat_onset_histogram=rhy.onset_beat_histogram,
        scale_degree_histogram=scale_degree_histogram(ls.chord_regions, ls.key_regions),
    )


def _rest_coded(labels) -> list[int]:
    """Map chord labels to integers with 0 for the rest chord."""
    codes: dict[str, int] = {"N.C.": 0}
    return [codes.setdefault(x, len(codes)) for x in labels]


def aggregate(reports: list[MetricsReport]) -> MetricsReport:
    """Arithmetic mean per metric over pieces where it is defined; histograms are summed."""
    if not reports:
        raise ContractError("cannot aggregate an empty set of reports")
    out = MetricsReport()
    for name in SCALAR_METRICS:
        vals = [getattr(r, name) for r in reports if getattr(r, name) is not None]
        setattr(out, name, float(np.mean(vals)) if vals else None)
        out.counts[name] = len(vals)
    out.beat_onset_histogram = np.sum([r.beat_onset_histogram for r in reports], axis=0).tolist()
    out.scale_degree_histogram = np.sum([r.scale_degree_histogram for r in reports], axis=0).tolist()
    return out


@dataclass
class Evaluation:
    pieces: list  # (id, generated report, truth report)
    generated: MetricsReport
    truth: MetricsReport

    def to_dict(self) -> dict:
        return {
            "notes": {"harmonic_rhythm_type": "per-bar binary chord-onset pattern",
                      "entropy_log": "natural",
                      "scale_degrees": list(DEGREE_LABELS)},
            "aggregate": {"generated": self.generated.to_dict(), "truth": self.truth.to_dict()},
            "pieces": [{"id": pid, "generated": g.to_dict(), "truth": t.to_dict()}
                       for pid, g, t in self.pieces],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = [f.name for f in fields(MetricsReport) if f.name in SCALAR_METRICS]
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["id", "side", *cols])
        for pid, g, t in self.pieces:
            for side, rep in (("generated", g), ("truth", t)):
                writer.writerow([pid, side, *("" if getattr(rep, c) is None else repr(getattr(rep, c))
                                              for c in cols)])
        return buf.getvalue()


def evaluate(pairs) -> Evaluation:
    """Score ``(id, generated, truth)`` lead-sheet triples and aggregate them."""
    pairs = list(pairs)
    if not pairs:
        raise ContractError("nothing to evaluate")
    pieces = []
    for pid, gen, truth in pairs:
        if gen.total_frames != truth.total_frames:
            raise ContractError(f"piece {pid}: generated and truth differ in length")
        pieces.append((pid, piece_report(gen, truth), piece_report(truth, truth)))
    return Evaluation(pieces, aggregate([g for _, g, _ in pieces]), aggregate([t for _, _, t in pieces]))
