"""Shared test utilities: random valid lead sheets and small fixtures."""

from __future__ import annotations

import random

from harmonizer.chords import REST, parse_chord_symbol
from harmonizer.score import KeySignature, LeadSheet, Note, TimeSignature, frames_per_bar

METERS = [TimeSignature(4, 4), TimeSignature(3, 4), TimeSignature(6, 8)]
POOL = [parse_chord_symbol(t) for t in ("C", "Dm7", "G7", "F", "Am", "Bb", "E7", "F#m7b5", "C/E", "Gsus4")]


def sheet(melody, chords, ts=(4, 4), fifths=0, pickup=0, total=None, title="t"):
    """Compact constructor: melody as (onset, dur, pitch), chords as (onset, text)."""
    notes = tuple(Note(*m) for m in melody)
    total = total if total is not None else notes[-1].end
    return LeadSheet(
        title=title, melody=notes,
        chord_regions=tuple((o, parse_chord_symbol(c)) for o, c in chords),
        time_regions=((0, TimeSignature(*ts)),), key_regions=((0, KeySignature(fifths)),),
        total_frames=total, pickup_frames=pickup,
    )


def random_leadsheet(rng: random.Random, max_segments: int = 3) -> LeadSheet:
    """A valid lead sheet with mixed meters, key changes on barlines, and an optional pickup."""
    time_regions, key_regions, barlines = [], [], []
    pos = 0
    first = rng.choice(METERS)
    unit = 6 if first.is_compound else 4
    pickup = unit * rng.randint(1, frames_per_bar(first) // unit - 1) if rng.random() < 0.4 else 0
    pos = pickup
    fifths = rng.randint(-7, 7)
    key_regions.append((0, KeySignature(fifths)))
    for seg in range(rng.randint(1, max_segments)):
        ts = first if seg == 0 else rng.choice(METERS)
        if not time_regions or time_regions[-1][1] != ts:
            time_regions.append((0 if seg == 0 else pos, ts))
        for _ in range(rng.randint(1, 3)):
            barlines.append(pos)
            if pos > 0 and rng.random() < 0.2:
                new = rng.randint(-7, 7)
                if new != key_regions[-1][1].fifths:
                    key_regions.append((pos, KeySignature(new)))
            pos += frames_per_bar(ts)
    total = pos

    melody, t = [], 0
    while t < total:
        dur = min(rng.choice((1, 2, 2, 3, 4, 4, 6, 8)), total - t)
        melody.append(Note(t, dur, None if rng.random() < 0.15 else rng.randint(40, 90)))
        t += dur

    onsets = sorted(set([rng.choice(barlines)] + rng.sample(range(total), min(total, rng.randint(1, 8)))))
    if rng.random() < 0.5:
        onsets = [0] + [o for o in onsets if o > 0]
    regions = []
    for o in onsets:
        choices = [c for c in POOL + [REST] if not regions or c != regions[-1][1]]
        if not regions:
            choices = [c for c in choices if not c.is_rest]
        regions.append((o, rng.choice(choices)))
    return LeadSheet(
        title=f"random {rng.random():.6f}", melody=tuple(melody), chord_regions=tuple(regions),
        time_regions=tuple(time_regions), key_regions=tuple(key_regions),
        total_frames=total, pickup_frames=pickup,
    )
