"""Lead-sheet domain types on a sixteenth-note frame grid."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

from .chords import ChordSymbol, parse_chord_symbol

FRAMES_PER_WHOLE = 16
LEADSHEET_FORMAT = "harmonizer-leadsheet"
LEADSHEET_VERSION = 1


class UnsupportedResolutionError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSignature:
    numerator: int
    denominator: int

    def __post_init__(self):
        if self.numerator <= 0:
            raise ValueError(f"bad time signature numerator {self.numerator}")
        if self.denominator <= 0 or self.denominator & (self.denominator - 1):
            raise ValueError(f"time signature denominator {self.denominator} is not a power of two")

    def __str__(self) -> str:
        return f"{self.numerator}/{self.denominator}"

    @property
    def is_compound(self) -> bool:
        return self.denominator == 8 and self.numerator % 3 == 0


@dataclass(frozen=True)
class KeySignature:
    fifths: int

    def __post_init__(self):
        if not -7 <= self.fifths <= 7:
            raise ValueError(f"key signature fifths {self.fifths} outside [-7, 7]")

    @property
    def tonic(self) -> int:
        """Pitch class of the major-mode tonic."""
        return (7 * self.fifths) % 12


def frames_per_bar(ts: TimeSignature) -> int:
    frames = ts.numerator * FRAMES_PER_WHOLE
    if frames % ts.denominator:
        raise UnsupportedResolutionError(
            f"{ts} does not divide into sixteenth-note frames")
    return frames // ts.denominator


class Note(NamedTuple):
    onset: int
    duration: int
    pitch: int | None  # None is a rest

    @property
    def end(self) -> int:
        return self.onset + self.duration


class Bar(NamedTuple):
    start: int
    length: int
    time: TimeSignature
    offset: int  # frame_in_bar of the first frame (non-zero only for pickups)
    full: bool


class Violation(NamedTuple):
    kind: str
    frame: int
    detail: str = ""

    def __str__(self) -> str:
        s = f"{self.kind}-at-frame-{self.frame}"
        return f"{s} ({self.detail})" if self.detail else s


@dataclass(frozen=True)
class LeadSheet:
    title: str
    melody: tuple[Note, ...]
    chord_regions: tuple[tuple[int, ChordSymbol], ...]
    time_regions: tuple[tuple[int, TimeSignature], ...]
    key_regions: tuple[tuple[int, KeySignature], ...]
    total_frames: int
    pickup_frames: int = 0
    provenance: dict = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "melody", tuple(Note(*n) for n in self.melody))
        for name in ("chord_regions", "time_regions", "key_regions"):
            object.__setattr__(self, name, tuple(tuple(r) for r in getattr(self, name)))

    def bars(self) -> list[Bar]:
        return bar_layout(self)


def _active(regions, frame):
    cur = None
    for onset, value in regions:
        if onset > frame:
            break
        cur = value
    return cur


def bar_layout(ls: LeadSheet) -> list[Bar]:
    """Split ``[0, total_frames)`` into bars.

    The pickup (if any) comes first and is aligned to the end of a bar of the
    opening meter.  A trailing bar cut short by ``total_frames`` is returned
    with ``full=False``.
    """
    bars = []
    if not ls.time_regions:
        return bars
    first_ts = ls.time_regions[0][1]
    pos = 0
    if ls.pickup_frames:
        fpb = frames_per_bar(first_ts)
        bars.append(Bar(0, ls.pickup_frames, first_ts, fpb - ls.pickup_frames, False))
        pos = ls.pickup_frames
    while pos < ls.total_frames:
        ts = _active(ls.time_regions, pos)
        fpb = frames_per_bar(ts)
        length = min(fpb, ls.total_frames - pos)
        bars.append(Bar(pos, length, ts, 0, length == fpb))
        pos += length
    return bars


def validate_leadsheet(ls: LeadSheet) -> list[Violation]:
    """Return every broken lead-sheet invariant; an empty list means valid."""
    out: list[Violation] = []
    if ls.total_frames <= 0:
        out.append(Violation("empty-piece", 0))

    pos = 0
    for note in ls.melody:
        if note.duration <= 0:
            out.append(Violation("nonpositive-duration", note.onset))
        if note.onset > pos:
            out.append(Violation("gap", pos, f"{note.onset - pos} frames"))
        elif note.onset < pos:
            out.append(Violation("overlap", note.onset))
        if note.pitch is not None and not 1 <= note.pitch <= 127:
            out.append(Violation("bad-pitch", note.onset, str(note.pitch)))
        pos = max(pos, note.end)
    if pos < ls.total_frames:
        out.append(Violation("gap", pos, "melody ends early"))
    elif pos > ls.total_frames:
        out.append(Violation("melody-overrun", ls.total_frames))

    for name in ("time_regions", "key_regions"):
        regions = getattr(ls, name)
        if not regions:
            out.append(Violation(f"missing-{name}", 0))
        elif regions[0][0] != 0:
            out.append(Violation(f"{name}-first-onset", regions[0][0]))
        for (a, _), (b, _) in zip(regions, regions[1:]):
            if b <= a:
                out.append(Violation(f"{name}-unsorted", b))

    prev_onset, prev_chord = -1, None
    for onset, chord in ls.chord_regions:
        if onset <= prev_onset:
            out.append(Violation("chord-regions-unsorted", onset))
        if chord == prev_chord:
            out.append(Violation("duplicate-chord-region", onset, chord.text))
        if prev_chord is None and chord.is_rest:
            out.append(Violation("leading-rest-region", onset))
        if not 0 <= onset < max(ls.total_frames, 1):
            out.append(Violation("chord-region-out-of-range", onset))
        prev_onset, prev_chord = onset, chord

    if ls.time_regions and ls.time_regions[0][0] == 0:
        try:
            bars = bar_layout(ls)
        except UnsupportedResolutionError as exc:
            out.append(Violation("unsupported-resolution", 0, str(exc)))
            return out
        if ls.pickup_frames and ls.pickup_frames >= frames_per_bar(ls.time_regions[0][1]):
            out.append(Violation("pickup-too-long", 0))
        starts = {b.start for b in bars}
        for onset, _ in ls.time_regions[1:]:
            if onset not in starts or onset < ls.pickup_frames:
                out.append(Violation("time-change-off-barline", onset))
        if bars and not bars[-1].full and (len(bars) > 1 or not ls.pickup_frames):
            out.append(Violation("partial-final-bar", bars[-1].start))
    return out


# -- native JSON form --------------------------------------------------------

def leadsheet_to_dict(ls: LeadSheet) -> dict:
    d = {
        "format": LEADSHEET_FORMAT,
        "version": LEADSHEET_VERSION,
        "title": ls.title,
        "total_frames": ls.total_frames,
        "pickup_frames": ls.pickup_frames,
        "time_regions": [[o, [t.numerator, t.denominator]] for o, t in ls.time_regions],
        "key_regions": [[o, k.fifths] for o, k in ls.key_regions],
        "melody": [[n.onset, n.duration, n.pitch] for n in ls.melody],
        "chord_regions": [[o, c.text] for o, c in ls.chord_regions],
    }
    if ls.provenance:
        d["provenance"] = ls.provenance
    return d


def leadsheet_from_dict(d: dict) -> LeadSheet:
    if d.get("format") != LEADSHEET_FORMAT:
        raise ValueError(f"not a lead-sheet document (format={d.get('format')!r})")
    if d.get("version") != LEADSHEET_VERSION:
        raise ValueError(f"unsupported lead-sheet version {d.get('version')!r}")
    return LeadSheet(
        title=d["title"],
        melody=tuple(Note(o, n, p) for o, n, p in d["melody"]),
        chord_regions=tuple((o, parse_chord_symbol(t)) for o, t in d["chord_regions"]),
        time_regions=tuple((o, TimeSignature(*ts)) for o, ts in d["time_regions"]),
        key_regions=tuple((o, KeySignature(k)) for o, k in d["key_regions"]),
        total_frames=d["total_frames"],
        pickup_frames=d.get("pickup_frames", 0),
        provenance=d.get("provenance", {}),
    )


def dumps_leadsheet(ls: LeadSheet) -> str:
    d = leadsheet_to_dict(ls)
    # one event per line keeps diffs of golden files readable
    lines = ["{"]
    keys = list(d)
    for i, key in enumerate(keys):
        comma = "," if i < len(keys) - 1 else ""
        val = d[key]
        if key in ("melody", "chord_regions", "time_regions", "key_regions") and val:
            items = ",\n".join("    " + json.dumps(v) for v in val)
            lines.append(f"  {json.dumps(key)}: [\n{items}\n  ]{comma}")
        else:
            lines.append(f"  {json.dumps(key)}: {json.dumps(val, sort_keys=True)}{comma}")
    lines.append("}")
    return "\n".join(lines) + "\n"


def loads_leadsheet(text: str) -> LeadSheet:
    return leadsheet_from_dict(json.loads(text))

