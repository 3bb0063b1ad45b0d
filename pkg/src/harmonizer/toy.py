"""Synthetic toy corpus: short diatonic lead sheets with known chord patterns."""

from __future__ import annotations

import random

from .chords import parse_chord_symbol, pitch_name
from .score import KeySignature, LeadSheet, Note, TimeSignature, frames_per_bar

DEGREES = {
    "I": (0, ""), "ii": (2, "m"), "iii": (4, "m"), "IV": (5, ""),
    "V": (7, ""), "V7": (7, "7"), "vi": (9, "m"),
}

PROGRESSIONS = [
    ["I", "IV", "V", "I"],
    ["I", "vi", "IV", "V7"],
    ["I", "V", "vi", "IV"],
    ["ii", "V7", "I", "I"],
    ["I", "iii", "IV", "V"],
    ["vi", "IV", "I", "V"],
]

METERS = [TimeSignature(4, 4), TimeSignature(3, 4), TimeSignature(6, 8)]
KEYS = [0, 1, -1, 2]


def _chord(fifths: int, degree: str):
    tonic = (7 * fifths) % 12
    offset, suffix = DEGREES[degree]
    return parse_chord_symbol(pitch_name(tonic + offset, prefer_flats=fifths < 0) + suffix)


def _beat_unit(ts: TimeSignature) -> int:
    return 6 if ts.is_compound else 16 // ts.denominator


def toy_leadsheet(rng: random.Random, title: str, bars: int = 8) -> LeadSheet:
    """One random piece: fixed key and meter, one or two chords per bar."""
    fifths = rng.choice(KEYS)
    ts = rng.choice(METERS)
    fpb = frames_per_bar(ts)
    unit = _beat_unit(ts)
    pickup = unit if rng.random() < 0.3 else 0
    two_per_bar = fpb % 2 == 0 and (fpb // 2) % unit == 0 and rng.random() < 0.5

    prog = rng.choice(PROGRESSIONS) + rng.choice(PROGRESSIONS)
    chords = []
    pos = pickup
    for bar in range(bars):
        degs = prog[(2 * bar) % len(prog):(2 * bar) % len(prog) + 2] if two_per_bar else [prog[bar % len(prog)]]
        for k, deg in enumerate(degs):
            chords.append((pos + k * fpb // len(degs), _chord(fifths, deg)))
        pos += fpb
    regions = []
    for onset, chord in chords:
        if not regions or regions[-1][1] != chord:
            regions.append((onset, chord))
    if pickup:
        # pickup is harmonized by the opening chord
        regions[0] = (0, regions[0][1])
    total = pickup + bars * fpb

    tonic = (7 * fifths) % 12
    scale = [(tonic + s) % 12 for s in (0, 2, 4, 5, 7, 9, 11)]
    melody: list[Note] = []
    prev_pitch = 60 + tonic if tonic < 6 else 48 + tonic
    rest_at_end = rng.random() < 0.3
    for beat_start in range(0, total, unit):
        chord = [c for o, c in regions if o <= beat_start][-1] if beat_start >= regions[0][0] else regions[0][1]
        if rest_at_end and beat_start + unit == total:
            melody.append(Note(beat_start, unit, None))
            break
        durs = [unit // 2, unit // 2] if unit % 2 == 0 and rng.random() < 0.4 else [unit]
        t = beat_start
        for k, dur in enumerate(durs):
            tones = chord.pitch_classes.classes
            if k == 1 and rng.random() < 0.3:
                tones = scale  # passing tone on the off-beat
            target = prev_pitch + rng.choice((-5, -3, -2, 2, 3, 5))
            cands = [p for p in range(55, 80) if p % 12 in tones]
            pitch = min(cands, key=lambda p: (abs(p - target), p))
            melody.append(Note(t, dur, pitch))
            prev_pitch = pitch
            t += dur
    return LeadSheet(
        title=title, melody=tuple(melody), chord_regions=tuple(regions),
        time_regions=((0, ts),), key_regions=((0, KeySignature(fifths)),),
        total_frames=total, pickup_frames=pickup,
    )


def toy_corpus(n: int = 10, seed: int = 0, bars: int = 8) -> list[tuple[str, LeadSheet]]:
    rng = random.Random(seed)
    return [(f"toy{seed:02d}_{i:03d}", toy_leadsheet(rng, f"Toy piece {i + 1}", bars)) for i in range(n)]
