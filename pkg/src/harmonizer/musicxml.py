"""MusicXML lead-sheet ingestion, corpus filtering and splitting.

Supported subset (``score-partwise``, first part only): ``divisions``,
``key/fifths``, ``time/beats`` + ``time/beat-type``, ``note`` with
``pitch`` (step/alter/octave) or ``rest``, ``duration``, ``tie``,
``backup``/``forward``, and ``harmony`` (``root``, ``kind``, optional
``bass``, ``offset``).  Grace notes, cue notes, lyrics and repeat barlines
are skipped with a warning; repeats are not unrolled.
"""

from __future__ import annotations

import logging
import random
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .chords import REST, ChordParseError, ChordSymbol, parse_chord_symbol
from .score import (
    KeySignature,
    LeadSheet,
    Note,
    TimeSignature,
    bar_layout,
    frames_per_bar,
    loads_leadsheet,
)

log = logging.getLogger(__name__)

FRAMES_PER_QUARTER = 4

KIND_SUFFIX = {
    "major": "",
    "minor": "m",
    "augmented": "aug",
    "diminished": "dim",
    "dominant": "7",
    "major-seventh": "maj7",
    "minor-seventh": "m7",
    "diminished-seventh": "dim7",
    "augmented-seventh": "aug7",
    "half-diminished": "m7b5",
    "major-minor": "mmaj7",
    "major-sixth": "6",
    "minor-sixth": "m6",
    "dominant-ninth": "9",
    "major-ninth": "maj9",
    "minor-ninth": "m9",
    "dominant-11th": "11",
    "dominant-13th": "13",
    "suspended-second": "sus2",
    "suspended-fourth": "sus4",
    "power": "5",
}
SUFFIX_KIND = {v: k for k, v in KIND_SUFFIX.items()}

# (kind, added degree) combinations that map onto a single suffix
DEGREE_SUFFIX = {
    ("major", "9"): "add9",
    ("suspended-fourth", "7"): "7sus4",
}

STEP_SEMITONES = {"C": 0, "D": 2, "E": 4, "F": 5, "G": 7, "A": 9, "B": 11}
ALTER_TEXT = {0: "", 1: "#", -1: "b"}


class MusicXMLError(ValueError):
    pass


class UnsupportedContentError(MusicXMLError):
    pass


class QuantizationError(MusicXMLError):
    def __init__(self, message: str, measure: str):
        super().__init__(message)
        self.measure = measure


def _int(el, path, default=None):
    node = el.find(path)
    if node is None or node.text is None:
        if default is None:
            raise MusicXMLError(f"missing <{path}>")
        return default
    return int(float(node.text.strip()))


def _harmony_symbol(el) -> ChordSymbol:
    kind_el = el.find("kind")
    kind = (kind_el.text or "").strip() if kind_el is not None else ""
    if kind == "none":
        return REST
    if kind not in KIND_SUFFIX:
        raise ChordParseError(f"unknown harmony kind {kind!r}", kind)
    step_el = el.find("root/root-step")
    if step_el is None:
        raise MusicXMLError("harmony without root-step")
    alter = _int(el, "root/root-alter", 0)
    if alter not in ALTER_TEXT:
        raise ChordParseError(f"unsupported root alteration {alter}", str(alter))
    suffix = KIND_SUFFIX[kind]
    for deg in el.findall("degree"):
        value = (deg.findtext("degree-value") or "").strip()
        dtype = (deg.findtext("degree-type") or "").strip()
        if dtype == "add" and (kind, value) in DEGREE_SUFFIX:
            suffix = DEGREE_SUFFIX[(kind, value)]
        else:
            log.warning("ignoring harmony degree %s%s on %s", dtype, value, kind)
    text = step_el.text.strip() + ALTER_TEXT[alter] + suffix
    if el.find("bass/bass-step") is not None:
        balter = _int(el, "bass/bass-alter", 0)
        if balter not in ALTER_TEXT:
            raise ChordParseError(f"unsupported bass alteration {balter}", str(balter))
        text += "/" + el.find("bass/bass-step").text.strip() + ALTER_TEXT[balter]
    return parse_chord_symbol(text)


def _midi_pitch(note) -> int:
    step = note.findtext("pitch/step").strip()
    alter = _int(note, "pitch/alter", 0)
    octave = _int(note, "pitch/octave")
    midi = (octave + 1) * 12 + STEP_SEMITONES[step] + alter
    if not 1 <= midi <= 127:
        raise UnsupportedContentError(f"pitch {midi} outside MIDI range 1..127")
    return midi


def _collapse(regions):
    """Drop repeats of the previous value; later entries at one onset win."""
    by_onset: dict[int, object] = {}
    for onset, value in regions:
        by_onset[onset] = value
    out = []
    for onset in sorted(by_onset):
        value = by_onset[onset]
        if out and out[-1][1] == value:
            continue
        out.append((onset, value))
    return out


def parse_musicxml(document: bytes | str) -> LeadSheet:
    """Parse a MusicXML document in the supported subset into a :class:`LeadSheet`."""
    try:
        root = ET.fromstring(document)
    except ET.ParseError as exc:
        raise MusicXMLError(f"malformed XML: {exc}") from None
    if root.tag != "score-partwise":
        raise MusicXMLError(f"unsupported root element <{root.tag}>")
    parts = root.findall("part")
    if not parts:
        raise MusicXMLError("document has no <part>")
    if len(parts) > 1:
        log.warning("using first of %d parts", len(parts))
    title = (root.findtext("work/work-title") or root.findtext("movement-title") or "").strip()

    ignored: set[str] = set()
    divisions = None
    ts: TimeSignature | None = None
    time_regions, key_regions, harmonies = [], [], []
    melody: list[Note] = []
    melody_end = 0
    pickup = 0
    measure_start = 0

    def push(onset, end, pitch, tie_stop):
        nonlocal melody_end
        if onset < melody_end:
            raise UnsupportedContentError(f"overlapping notes at frame {onset} (polyphony)")
        if onset > melody_end:
            push(melody_end, onset, None, False)
        last = melody[-1] if melody else None
        if last and last.end == onset and last.pitch == pitch and (pitch is None or tie_stop):
            melody[-1] = Note(last.onset, end - last.onset, pitch)
        else:
            melody.append(Note(onset, end - onset, pitch))
        melody_end = end

    measures = parts[0].findall("measure")
    for mi, measure in enumerate(measures):
        number = measure.get("number", str(mi + 1))
        cursor = Fraction(0)
        extent = Fraction(0)
        for el in measure:
            tag = el.tag
            if tag == "attributes":
                if el.find("divisions") is not None:
                    divisions = _int(el, "divisions")
                    if divisions <= 0:
                        raise MusicXMLError(f"non-positive divisions in measure {number}")
                if el.find("key/fifths") is not None:
                    key_regions.append((measure_start, KeySignature(_int(el, "key/fifths"))))
                if el.find("time/beats") is not None:
                    beats = el.findtext("time/beats").strip()
                    if not beats.isdigit():
                        raise UnsupportedContentError(f"compound time signature {beats!r} in measure {number}")
                    ts = TimeSignature(int(beats), _int(el, "time/beat-type"))
                    frames_per_bar(ts)
                    time_regions.append((measure_start, ts))
            elif tag in ("note", "backup", "forward", "harmony"):
                if divisions is None:
                    raise MusicXMLError(f"<{tag}> before <divisions> in measure {number}")
                scale = Fraction(FRAMES_PER_QUARTER, divisions)
                if tag == "harmony":
                    offset = _int(el, "offset", 0) * scale
                    harmonies.append((measure_start + round(cursor + offset), _harmony_symbol(el)))
                elif tag == "backup":
                    cursor -= _int(el, "duration") * scale
                elif tag == "forward":
                    cursor += _int(el, "duration") * scale
                else:
                    if el.find("grace") is not None or el.find("cue") is not None:
                        ignored.add("grace-note")
                        log.warning("skipping grace/cue note in measure %s", number)
                        continue
                    if el.find("chord") is not None:
                        raise UnsupportedContentError(f"chord notes in measure {number} (polyphony)")
                    dur = _int(el, "duration") * scale
                    on, off = round(measure_start + cursor), round(measure_start + cursor + dur)
                    if off <= on:
                        raise QuantizationError(
                            f"note shorter than a sixteenth in measure {number}", number)
                    pitch = None if el.find("rest") is not None else _midi_pitch(el)
                    tie_stop = any(t.get("type") == "stop" for t in el.findall("tie"))
                    push(on, off, pitch, tie_stop)
                    cursor += dur
                extent = max(extent, cursor)
            elif tag == "barline":
                if el.find("repeat") is not None or el.find("ending") is not None:
                    ignored.add("repeat")
                    log.warning("repeat/ending in measure %s not unrolled", number)
        if ts is None:
            raise MusicXMLError("no time signature before first measure content")
        fpb = frames_per_bar(ts)
        length = round(extent)
        if extent != length and abs(extent - length) > Fraction(1, 4):
            raise QuantizationError(f"measure {number} does not end on the sixteenth grid", number)
        if length > fpb:
            raise UnsupportedContentError(f"measure {number} overflows its {ts} bar ({length} > {fpb} frames)")
        if mi == 0 and 0 < length < fpb and len(measures) > 1:
            pickup = length
        else:
            length = fpb
        measure_start += length

    if not time_regions:
        raise MusicXMLError("document has no time signature")
    total = measure_start
    if melody_end < total:
        push(melody_end, total, None, False)
    if not key_regions:
        key_regions = [(0, KeySignature(0))]

    chords = _collapse(harmonies)
    while chords and chords[0][1].is_rest:
        chords.pop(0)
    provenance = {"ignored": sorted(ignored)} if ignored else {}
    return LeadSheet(
        title=title,
        melody=tuple(melody),
        chord_regions=tuple(chords),
        time_regions=tuple(_collapse(time_regions)),
        key_regions=tuple(_collapse(key_regions)),
        total_frames=total,
        pickup_frames=pickup,
        provenance=provenance,
    )


# -- writer ------------------------------------------------------------------

_NOTE_TYPES = {16: "whole", 12: "half", 8: "half", 6: "quarter", 4: "quarter",
               3: "eighth", 2: "eighth", 1: "16th"}
_SHARP_SPELLING = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"]


def _note_el(parent, duration, pitch, tie_start, tie_stop):
    note = ET.SubElement(parent, "note")
    if pitch is None:
        ET.SubElement(note, "rest")
    else:
        name = _SHARP_SPELLING[pitch % 12]
        p = ET.SubElement(note, "pitch")
        ET.SubElement(p, "step").text = name[0]
        if len(name) > 1:
            ET.SubElement(p, "alter").text = "1"
        ET.SubElement(p, "octave").text = str(pitch // 12 - 1)
    ET.SubElement(note, "duration").text = str(duration)
    if tie_stop:
        ET.SubElement(note, "tie", type="stop")
    if tie_start:
        ET.SubElement(note, "tie", type="start")
    ET.SubElement(note, "type").text = _NOTE_TYPES.get(duration, "16th")
    if duration in (3, 6, 12):
        ET.SubElement(note, "dot")


def _harmony_el(parent, chord: ChordSymbol):
    h = ET.SubElement(parent, "harmony")
    if chord.is_rest:
        ET.SubElement(h, "kind").text = "none"
        return
    text = chord.text
    root_len = 2 if len(text) > 1 and text[1] in "#b" else 1
    body, _, bass = text[root_len:].partition("/")
    r = ET.SubElement(h, "root")
    ET.SubElement(r, "root-step").text = text[0]
    if root_len == 2:
        ET.SubElement(r, "root-alter").text = "1" if text[1] == "#" else "-1"
    degree = None
    if body in SUFFIX_KIND:
        kind = SUFFIX_KIND[body]
    else:
        (kind, degree), = [k for k, v in DEGREE_SUFFIX.items() if v == body]
    ET.SubElement(h, "kind").text = kind
    if bass:
        b = ET.SubElement(h, "bass")
        ET.SubElement(b, "bass-step").text = bass[0]
        if len(bass) > 1:
            ET.SubElement(b, "bass-alter").text = "1" if bass[1] == "#" else "-1"
    if degree:
        d = ET.SubElement(h, "degree")
        ET.SubElement(d, "degree-value").text = degree
        ET.SubElement(d, "degree-alter").text = "0"
        ET.SubElement(d, "degree-type").text = "add"


def leadsheet_to_musicxml(ls: LeadSheet) -> bytes:
    """Serialize ``ls`` as MusicXML in the subset read by :func:`parse_musicxml`.

    Notes crossing barlines or chord onsets are split and tied, so parsing
    the output reproduces ``ls`` whenever its adjacent rests are merged.
    """
    score = ET.Element("score-partwise", version="3.1")
    ET.SubElement(ET.SubElement(score, "work"), "work-title").text = ls.title
    pl = ET.SubElement(score, "part-list")
    sp = ET.SubElement(pl, "score-part", id="P1")
    ET.SubElement(sp, "part-name").text = "Melody"
    part = ET.SubElement(score, "part", id="P1")

    time_at = dict(ls.time_regions)
    key_at = dict(ls.key_regions)
    chord_at = dict(ls.chord_regions)
    for i, bar in enumerate(bar_layout(ls)):
        m = ET.SubElement(part, "measure", number=str(i if ls.pickup_frames else i + 1))
        if i == 0 and ls.pickup_frames:
            m.set("implicit", "yes")
        key = key_at.get(bar.start)
        time = time_at.get(bar.start)
        if i == 0 or key is not None or time is not None:
            attrs = ET.SubElement(m, "attributes")
            if i == 0:
                ET.SubElement(attrs, "divisions").text = "4"
            if key is not None:
                ET.SubElement(ET.SubElement(attrs, "key"), "fifths").text = str(key.fifths)
            if time is not None:
                t = ET.SubElement(attrs, "time")
                ET.SubElement(t, "beats").text = str(time.numerator)
                ET.SubElement(t, "beat-type").text = str(time.denominator)
        end = bar.start + bar.length
        cuts = sorted({bar.start, end} | {o for o in chord_at if bar.start < o < end})
        for note in ls.melody:
            if note.end <= bar.start or note.onset >= end:
                continue
            pieces = sorted({max(note.onset, bar.start), min(note.end, end)}
                            | {c for c in cuts if note.onset < c < note.end})
            for a, b in zip(pieces, pieces[1:]):
                if a in chord_at:
                    _harmony_el(m, chord_at[a])
                tied = note.pitch is not None
                _note_el(m, b - a, note.pitch, tied and b < note.end, tied and a > note.onset)
    ET.indent(score)
    body = ET.tostring(score, encoding="unicode")
    header = ('<?xml version="1.0" encoding="UTF-8"?>\n'
              '<!DOCTYPE score-partwise PUBLIC "-//Recordare//DTD MusicXML 3.1 Partwise//EN" '
              '"http://www.musicxml.org/dtds/partwise.dtd">\n')
    return (header + body + "\n").encode()


# -- corpora -------------------------------------------------------------------

@dataclass(frozen=True)
class Corpus:
    pieces: tuple[tuple[str, LeadSheet], ...]
    provenance: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "pieces", tuple(tuple(p) for p in self.pieces))
        ids = [pid for pid, _ in self.pieces]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate piece ids in corpus")

    def __len__(self) -> int:
        return len(self.pieces)

    def __iter__(self):
        return iter(self.pieces)

    @property
    def sheets(self) -> list[LeadSheet]:
        return [ls for _, ls in self.pieces]

    def subset(self, ids) -> "Corpus":
        keep = set(ids)
        return Corpus(tuple(p for p in self.pieces if p[0] in keep),
                      {k: v for k, v in self.provenance.items() if k in keep})


def filter_reason(ls: LeadSheet) -> str | None:
    """Why ``ls`` fails the corpus filter, or ``None`` when it is kept."""
    if not any(not c.is_rest for _, c in ls.chord_regions):
        return "no chords"
    onsets = [o for o, _ in ls.chord_regions]
    full = [b for b in bar_layout(ls) if b.full]
    for i in range(len(full) - 3):
        window = full[i:i + 4]
        if any(a.start + a.length != b.start for a, b in zip(window, window[1:])):
            continue
        start, stop = window[0].start, window[-1].start + window[-1].length
        if not any(start < o < stop for o in onsets):
            return f"no chord change within 4 bars from frame {start}"
    return None


def corpus_filter(corpus: Corpus) -> Corpus:
    keep = [pid for pid, ls in corpus if filter_reason(ls) is None]
    return corpus.subset(keep)


class SplitError(ValueError):
    pass


def split_corpus(corpus: Corpus, train_fraction: float = 0.9, seed: int = 0) -> tuple[Corpus, Corpus]:
    """Seeded shuffle, then the first ``round(n * train_fraction)`` pieces train."""
    if not 0 < train_fraction < 1:
        raise SplitError(f"train_fraction must lie in (0, 1), got {train_fraction}")
    n = len(corpus)
    if n < 2:
        raise SplitError(f"need at least 2 pieces to split, got {n}")
    ids = [pid for pid, _ in corpus]
    random.Random(seed).shuffle(ids)
    n_train = min(max(round(n * train_fraction), 1), n - 1)
    train, valid = set(ids[:n_train]), set(ids[n_train:])
    return corpus.subset(train), corpus.subset(valid)


SCORE_SUFFIXES = (".xml", ".musicxml")


def load_sheet(path: Path) -> LeadSheet:
    path = Path(path)
    if path.suffix == ".json":
        return loads_leadsheet(path.read_text())
    if path.suffix in SCORE_SUFFIXES:
        return parse_musicxml(path.read_bytes())
    raise MusicXMLError(f"unsupported file type {path.suffix!r}")


def load_corpus(directory, suffixes=(".json",)) -> Corpus:
    """Load every file with a matching suffix, ids taken from file stems."""
    pieces, prov = [], {}
    for path in sorted(Path(directory).iterdir()):
        if path.suffix not in suffixes or path.name.startswith("_"):
            continue
        pieces.append((path.stem, load_sheet(path)))
        prov[path.stem] = str(path)
    return Corpus(tuple(pieces), prov)
