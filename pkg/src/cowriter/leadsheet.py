"""Lead-sheet data model: functional melody/harmony over a beat grid, realized
to timed note events (melody, harmony, click) and back."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum

MAJOR_OFFSETS = (0, 2, 4, 5, 7, 9, 11)
MINOR_OFFSETS = (0, 2, 3, 5, 7, 8, 10)

# Fixed semitone stacks for the explicit (non-diatonic) chord qualities.
QUALITY_TEMPLATES = {
    "major": (0, 4, 7),
    "minor": (0, 3, 7),
    "diminished": (0, 3, 6),
    "augmented": (0, 4, 8),
    "dominant7": (0, 4, 7, 10),
}

CLICK_DOWNBEAT_PITCH = 34
CLICK_OFFBEAT_PITCH = 33

MELODY_PITCH_MIN = 24
MELODY_PITCH_MAX = 96


class LeadSheetError(Exception):
    pass


class ParseError(LeadSheetError):
    """Malformed lead-sheet document. Carries the 1-based source line."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(LeadSheetError):
    pass


class RealizationError(LeadSheetError):
    pass


class Mode(str, Enum):
    MAJOR = "major"
    MINOR = "minor"

    @property
    def offsets(self) -> tuple[int, ...]:
        return MAJOR_OFFSETS if self is Mode.MAJOR else MINOR_OFFSETS


class BeatUnit(str, Enum):
    QUARTER = "quarter"
    EIGHTH = "eighth"
    HALF = "half"

    @property
    def denominator(self) -> int:
        return {"quarter": 4, "eighth": 8, "half": 2}[self.value]

    @classmethod
    def from_denominator(cls, d: int) -> "BeatUnit":
        table = {4: cls.QUARTER, 8: cls.EIGHTH, 2: cls.HALF}
        if d not in table:
            raise ValueError(f"unsupported beat unit denominator {d}")
        return table[d]


class Instrument(IntEnum):
    MELODY = 0
    HARMONY = 1
    CLICK = 2


class ChordQuality(str, Enum):
    TRIAD_DIATONIC = "triad_diatonic"
    SEVENTH_DIATONIC = "seventh_diatonic"
    MAJOR = "major"
    MINOR = "minor"
    DIMINISHED = "diminished"
    AUGMENTED = "augmented"
    DOMINANT7 = "dominant7"

    @property
    def num_tones(self) -> int:
        if self in (ChordQuality.SEVENTH_DIATONIC, ChordQuality.DOMINANT7):
            return 4
        return 3


def format_number(x: float) -> str:
    """Canonical decimal with at most 6 fractional digits, trailing zeros
    stripped. All beat/tempo rationals in a document use this form."""
    s = f"{x:.6f}".rstrip("0").rstrip(".")
    return s if s else "0"


def representable(x: float) -> bool:
    return float(format_number(x)) == x


@dataclass(frozen=True)
class KeySignature:
    tonic_pitch_class: int  # 0 = C
    mode: Mode

    def __post_init__(self):
        if not 0 <= self.tonic_pitch_class <= 11:
            raise ValidationError(f"tonic pitch class {self.tonic_pitch_class} outside [0, 11]")


@dataclass(frozen=True)
class Meter:
    beats_per_measure: int
    beat_unit: BeatUnit = BeatUnit.QUARTER

    def __post_init__(self):
        if not 1 <= self.beats_per_measure <= 12:
            raise ValidationError(f"beats per measure {self.beats_per_measure} outside [1, 12]")

    def __str__(self) -> str:
        return f"{self.beats_per_measure}/{self.beat_unit.denominator}"

    @classmethod
    def parse(cls, text: str) -> "Meter":
        try:
            num, denom = text.split("/")
            return cls(int(num), BeatUnit.from_denominator(int(denom)))
        except (ValueError, ValidationError):
            raise
        except Exception as e:
            raise ValueError(f"bad meter {text!r}: {e}")


@dataclass(frozen=True)
class Tempo:
    bpm: float

    def __post_init__(self):
        if not 20 <= self.bpm <= 300:
            raise ValidationError(f"bpm {self.bpm} outside [20, 300]")


@dataclass(frozen=True)
class MelodyNote:
    onset_beats: float
    duration_beats: float
    scale_degree: int  # 1..7
    octave: int  # 2..6
    alteration: int = 0  # -1 flat, 0 natural, +1 sharp

    def __post_init__(self):
        if self.onset_beats < 0:
            raise ValidationError(f"melody onset {self.onset_beats} negative")
        if self.duration_beats <= 0:
            raise ValidationError(f"melody duration {self.duration_beats} not positive")
        if not 1 <= self.scale_degree <= 7:
            raise ValidationError(f"scale degree {self.scale_degree} outside [1, 7]")
        if not 2 <= self.octave <= 6:
            raise ValidationError(f"octave {self.octave} outside [2, 6]")
        if self.alteration not in (-1, 0, 1):
            raise ValidationError(f"alteration {self.alteration} not in {{-1, 0, 1}}")


@dataclass(frozen=True)
class HarmonyChord:
    onset_beats: float
    duration_beats: float
    root_degree: int  # 1..7
    quality: ChordQuality = ChordQuality.TRIAD_DIATONIC
    inversion: int = 0

    def __post_init__(self):
        if self.onset_beats < 0:
            raise ValidationError(f"chord onset {self.onset_beats} negative")
        if self.duration_beats <= 0:
            raise ValidationError(f"chord duration {self.duration_beats} not positive")
        if not 1 <= self.root_degree <= 7:
            raise ValidationError(f"root degree {self.root_degree} outside [1, 7]")
        if not 0 <= self.inversion < self.quality.num_tones:
            raise ValidationError(
                f"inversion {self.inversion} invalid for {self.quality.value} "
                f"({self.quality.num_tones} tones)"
            )


@dataclass(frozen=True)
class NoteEvent:
    start_s: float
    duration_s: float
    instrument: Instrument
    pitch: int

    def __post_init__(self):
        if self.start_s < 0:
            raise ValidationError(f"event start {self.start_s} negative")
        if self.duration_s <= 0:
            raise ValidationError(f"event duration {self.duration_s} not positive")
        if not 0 <= self.pitch <= 127:
            raise ValidationError(f"pitch {self.pitch} outside [0, 127]")


@dataclass(frozen=True)
class LeadSheet:
    key: KeySignature
    meter: Meter
    tempo: Tempo
    length_measures: int
    melody: tuple[MelodyNote, ...] = field(default_factory=tuple)
    harmony: tuple[HarmonyChord, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "melody", tuple(self.melody))
        object.__setattr__(self, "harmony", tuple(self.harmony))
        self.validate()

    @property
    def total_beats(self) -> float:
        return float(self.length_measures * self.meter.beats_per_measure)

    def validate(self) -> None:
        if self.length_measures < 1:
            raise ValidationError(f"length {self.length_measures} measures, need at least 1")
        total = self.total_beats
        prev: MelodyNote | None = None
        for n in self.melody:
            for v, label in ((n.onset_beats, "onset"), (n.duration_beats, "duration")):
                if not representable(v):
                    raise ValidationError(f"melody {label} {v!r} not a 6-decimal value")
            if prev is not None:
                if n.onset_beats < prev.onset_beats:
                    raise ValidationError("melody not sorted by onset")
                if prev.onset_beats + prev.duration_beats > n.onset_beats:
                    raise ValidationError(
                        f"melody notes overlap at beat {format_number(n.onset_beats)}"
                    )
            if n.onset_beats + n.duration_beats > total:
                raise ValidationError(
                    f"melody note at beat {format_number(n.onset_beats)} runs past song end"
                )
            pitch = melody_pitch(self.key, n)
            if not MELODY_PITCH_MIN <= pitch <= MELODY_PITCH_MAX:
                raise ValidationError(
                    f"melody note at beat {format_number(n.onset_beats)} realizes to "
                    f"pitch {pitch}, outside [{MELODY_PITCH_MIN}, {MELODY_PITCH_MAX}]"
                )
            prev = n
        prev_c: HarmonyChord | None = None
        for c in self.harmony:
            for v, label in ((c.onset_beats, "onset"), (c.duration_beats, "duration")):
                if not representable(v):
                    raise ValidationError(f"harmony {label} {v!r} not a 6-decimal value")
            if prev_c is not None:
                if c.onset_beats < prev_c.onset_beats:
                    raise ValidationError("harmony not sorted by onset")
                if prev_c.onset_beats + prev_c.duration_beats > c.onset_beats:
                    raise ValidationError(
                        f"chords overlap at beat {format_number(c.onset_beats)}"
                    )
            if c.onset_beats + c.duration_beats > total:
                raise ValidationError(
                    f"chord at beat {format_number(c.onset_beats)} runs past song end"
                )
            prev_c = c
        if not representable(self.tempo.bpm):
            raise ValidationError(f"bpm {self.tempo.bpm!r} not a 6-decimal value")


def beats_to_seconds(b: float, tempo: Tempo) -> float:
    return b * 60.0 / tempo.bpm


def seconds_to_beats(s: float, tempo: Tempo) -> float:
    return s * tempo.bpm / 60.0


def melody_pitch(key: KeySignature, note: MelodyNote) -> int:
    """MIDI pitch of a functional melody note: octave base + tonic + scale
    offset + chromatic alteration."""
    offset = key.mode.offsets[note.scale_degree - 1]
    return 12 * (note.octave + 1) + key.tonic_pitch_class + offset + note.alteration


def chord_pitches(key: KeySignature, chord: HarmonyChord) -> tuple[int, ...]:
    """Chord tones as sorted MIDI pitches. Root lives in octave 3 (folded into
    [48, 59]); diatonic qualities stack thirds from the scale, explicit
    qualities use fixed semitone templates; inversion rotates the lowest
    tones up an octave."""
    offsets = key.mode.offsets
    root_idx = chord.root_degree - 1
    root = 48 + (key.tonic_pitch_class + offsets[root_idx]) % 12
    if chord.quality in (ChordQuality.TRIAD_DIATONIC, ChordQuality.SEVENTH_DIATONIC):
        n = chord.quality.num_tones
        intervals = []
        for k in range(n):
            step = root_idx + 2 * k
            semis = offsets[step % 7] + 12 * (step // 7)
            intervals.append(semis - offsets[root_idx])
        pitches = [root + iv for iv in intervals]
    else:
        pitches = [root + iv for iv in QUALITY_TEMPLATES[chord.quality.value]]
    for _ in range(chord.inversion):
        pitches = pitches[1:] + [pitches[0] + 12]
    return tuple(sorted(pitches))


def realize_melody(sheet: LeadSheet) -> list[NoteEvent]:
    events = []
    for n in sheet.melody:
        pitch = melody_pitch(sheet.key, n)
        if not 0 <= pitch <= 127:
            raise RealizationError(f"melody pitch {pitch} outside MIDI range")
        events.append(
            NoteEvent(
                start_s=beats_to_seconds(n.onset_beats, sheet.tempo),
                duration_s=beats_to_seconds(n.duration_beats, sheet.tempo),
                instrument=Instrument.MELODY,
                pitch=pitch,
            )
        )
    events.sort(key=lambda e: e.start_s)
    return events


def realize_harmony(sheet: LeadSheet) -> list[NoteEvent]:
    events = []
    for c in sheet.harmony:
        start = beats_to_seconds(c.onset_beats, sheet.tempo)
        dur = beats_to_seconds(c.duration_beats, sheet.tempo)
        for pitch in chord_pitches(sheet.key, c):
            if not 0 <= pitch <= 127:
                raise RealizationError(f"chord pitch {pitch} outside MIDI range")
            events.append(NoteEvent(start, dur, Instrument.HARMONY, pitch))
    events.sort(key=lambda e: (e.start_s, e.pitch))
    return events


def click_track(sheet: LeadSheet) -> list[NoteEvent]:
    """One click per beat for the whole song; downbeats accented by pitch so
    the meter is implicit in the event stream."""
    beat_s = 60.0 / sheet.tempo.bpm
    bpm_measure = sheet.meter.beats_per_measure
    events = []
    for k in range(sheet.length_measures * bpm_measure):
        pitch = CLICK_DOWNBEAT_PITCH if k % bpm_measure == 0 else CLICK_OFFBEAT_PITCH
        events.append(NoteEvent(k * beat_s, beat_s, Instrument.CLICK, pitch))
    return events


def realize(sheet: LeadSheet) -> tuple[list[NoteEvent], list[NoteEvent], list[NoteEvent]]:
    return realize_melody(sheet), realize_harmony(sheet), click_track(sheet)


# --- inverse mapping (MIDI -> functional) -------------------------------

def melody_note_from_pitch(
    key: KeySignature, pitch: int, onset_beats: float, duration_beats: float
) -> MelodyNote:
    """Functional spelling of a MIDI pitch: the (degree, alteration) pair with
    alteration closest to 0, ties toward the lower degree."""
    best = None
    for degree in range(1, 8):
        offset = key.mode.offsets[degree - 1]
        rel = (pitch - key.tonic_pitch_class - offset) % 12
        if rel == 0:
            alt = 0
        elif rel == 1:
            alt = 1
        elif rel == 11:
            alt = -1
        else:
            continue
        octave = (pitch - key.tonic_pitch_class - offset - alt) // 12 - 1
        if not 2 <= octave <= 6:
            continue
        if best is None or abs(alt) < abs(best[0]):
            best = (alt, degree, octave)
    if best is None:
        raise RealizationError(f"pitch {pitch} has no functional spelling in this key")
    alt, degree, octave = best
    return MelodyNote(onset_beats, duration_beats, degree, octave, alt)


def melody_pitch_set(key: KeySignature) -> frozenset[int]:
    """All MIDI pitches a valid melody note can realize to in this key."""
    pitches = set()
    for degree in range(1, 8):
        for octave in range(2, 7):
            for alt in (-1, 0, 1):
                p = 12 * (octave + 1) + key.tonic_pitch_class + key.mode.offsets[degree - 1] + alt
                if MELODY_PITCH_MIN <= p <= MELODY_PITCH_MAX:
                    pitches.add(p)
    return frozenset(pitches)


def _chord_catalog(key: KeySignature) -> dict[tuple[int, ...], tuple[int, ChordQuality, int]]:
    catalog: dict[tuple[int, ...], tuple[int, ChordQuality, int]] = {}
    for quality in ChordQuality:
        for degree in range(1, 8):
            for inversion in range(quality.num_tones):
                chord = HarmonyChord(0.0, 1.0, degree, quality, inversion)
                pitches = chord_pitches(key, chord)
                # first match in enum/degree/inversion order wins
                catalog.setdefault(pitches, (degree, quality, inversion))
    return catalog


_CATALOG_CACHE: dict[KeySignature, dict] = {}


def chord_catalog(key: KeySignature) -> dict[tuple[int, ...], tuple[int, ChordQuality, int]]:
    if key not in _CATALOG_CACHE:
        _CATALOG_CACHE[key] = _chord_catalog(key)
    return _CATALOG_CACHE[key]


def harmony_chord_from_pitches(
    key: KeySignature, pitches: tuple[int, ...], onset_beats: float, duration_beats: float
) -> HarmonyChord:
    """Exact functional spelling of a realized chord; raises if the pitch set
    is not one this key can produce."""
    entry = chord_catalog(key).get(tuple(sorted(pitches)))
    if entry is None:
        raise RealizationError(f"pitch set {sorted(pitches)} is not a realizable chord")
    degree, quality, inversion = entry
    return HarmonyChord(onset_beats, duration_beats, degree, quality, inversion)


# --- document format -----------------------------------------------------
#
# UTF-8 text, canonical form:
#
#   key: <0-11>
#   mode: major|minor
#   meter: <beats>/<unit>
#   bpm: <decimal>
#   measures: <int>
#   melody:
#   <onset> <duration> <degree> <octave> <alteration>
#   harmony:
#   <onset> <duration> <root_degree> <quality> <inversion>
#
# Note lines are sorted by onset; decimals carry at most 6 fractional digits.

_HEADER_FIELDS = ("key", "mode", "meter", "bpm", "measures")


def serialize(sheet: LeadSheet) -> str:
    lines = [
        f"key: {sheet.key.tonic_pitch_class}",
        f"mode: {sheet.key.mode.value}",
        f"meter: {sheet.meter}",
        f"bpm: {format_number(sheet.tempo.bpm)}",
        f"measures: {sheet.length_measures}",
        "melody:",
    ]
    for n in sheet.melody:
        lines.append(
            f"{format_number(n.onset_beats)} {format_number(n.duration_beats)} "
            f"{n.scale_degree} {n.octave} {n.alteration}"
        )
    lines.append("harmony:")
    for c in sheet.harmony:
        lines.append(
            f"{format_number(c.onset_beats)} {format_number(c.duration_beats)} "
            f"{c.root_degree} {c.quality.value} {c.inversion}"
        )
    return "\n".join(lines) + "\n"


def parse(text: str) -> LeadSheet:
    headers: dict[str, str] = {}
    melody: list[MelodyNote] = []
    harmony: list[HarmonyChord] = []
    section = "header"
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "melody:":
            if section != "header":
                raise ParseError("melody section out of order", lineno)
            section = "melody"
            continue
        if line == "harmony:":
            if section != "melody":
                raise ParseError("harmony section must follow melody", lineno)
            section = "harmony"
            continue
        if section == "header":
            if ":" not in line:
                raise ParseError(f"expected 'field: value', got {line!r}", lineno)
            field_name, _, value = line.partition(":")
            field_name = field_name.strip()
            if field_name not in _HEADER_FIELDS:
                raise ParseError(f"unknown header field {field_name!r}", lineno)
            if field_name in headers:
                raise ParseError(f"duplicate header field {field_name!r}", lineno)
            headers[field_name] = value.strip()
        elif section == "melody":
            melody.append(_parse_melody_line(line, lineno))
        else:
            harmony.append(_parse_harmony_line(line, lineno))
    if section == "header":
        raise ParseError("missing melody section")
    if section == "melody":
        raise ParseError("missing harmony section")
    missing = [f for f in _HEADER_FIELDS if f not in headers]
    if missing:
        raise ParseError(f"missing header field(s): {', '.join(missing)}")
    try:
        key = KeySignature(_parse_int(headers["key"], "key"), Mode(headers["mode"]))
        meter = Meter.parse(headers["meter"])
        tempo = Tempo(_parse_decimal(headers["bpm"], "bpm"))
        measures = _parse_int(headers["measures"], "measures")
    except ValidationError:
        raise
    except ValueError as e:
        raise ParseError(str(e))
    return LeadSheet(key, meter, tempo, measures, tuple(melody), tuple(harmony))


def _parse_int(s: str, label: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ValueError(f"{label}: {s!r} is not an integer")


def _parse_decimal(s: str, label: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ValueError(f"{label}: {s!r} is not a number")


def _parse_melody_line(line: str, lineno: int) -> MelodyNote:
    parts = line.split()
    if len(parts) != 5:
        raise ParseError(f"melody line needs 5 fields, got {len(parts)}", lineno)
    try:
        return MelodyNote(
            onset_beats=float(parts[0]),
            duration_beats=float(parts[1]),
            scale_degree=int(parts[2]),
            octave=int(parts[3]),
            alteration=int(parts[4]),
        )
    except ValueError as e:
        raise ParseError(f"bad melody line: {e}", lineno)


def _parse_harmony_line(line: str, lineno: int) -> HarmonyChord:
    parts = line.split()
    if len(parts) != 5:
        raise ParseError(f"harmony line needs 5 fields, got {len(parts)}", lineno)
    try:
        quality = ChordQuality(parts[3])
    except ValueError:
        raise ParseError(f"unknown chord quality {parts[3]!r}", lineno)
    try:
        return HarmonyChord(
            onset_beats=float(parts[0]),
            duration_beats=float(parts[1]),
            root_degree=int(parts[2]),
            quality=quality,
            inversion=int(parts[4]),
        )
    except ValueError as e:
        raise ParseError(f"bad harmony line: {e}", lineno)


# --- JSON mirror (HTTP payloads, UI) -------------------------------------

def sheet_to_json(sheet: LeadSheet) -> dict:
    return {
        "key": sheet.key.tonic_pitch_class,
        "mode": sheet.key.mode.value,
        "meter": str(sheet.meter),
        "bpm": sheet.tempo.bpm,
        "measures": sheet.length_measures,
        "melody": [
            {
                "onset": n.onset_beats,
                "duration": n.duration_beats,
                "degree": n.scale_degree,
                "octave": n.octave,
                "alteration": n.alteration,
            }
            for n in sheet.melody
        ],
        "harmony": [
            {
                "onset": c.onset_beats,
                "duration": c.duration_beats,
                "root": c.root_degree,
                "quality": c.quality.value,
                "inversion": c.inversion,
            }
            for c in sheet.harmony
        ],
    }


def sheet_from_json(data: dict) -> LeadSheet:
    try:
        key = KeySignature(int(data["key"]), Mode(data["mode"]))
        meter = Meter.parse(str(data["meter"]))
        tempo = Tempo(float(data["bpm"]))
        melody = tuple(
            MelodyNote(
                float(n["onset"]), float(n["duration"]),
                int(n["degree"]), int(n["octave"]), int(n.get("alteration", 0)),
            )
            for n in data.get("melody", [])
        )
        harmony = tuple(
            HarmonyChord(
                float(c["onset"]), float(c["duration"]),
                int(c["root"]), ChordQuality(c["quality"]), int(c.get("inversion", 0)),
            )
            for c in data.get("harmony", [])
        )
        return LeadSheet(key, meter, tempo, int(data["measures"]), melody, harmony)
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"bad sheet JSON: {e}")


def sheet_digest(sheet: LeadSheet) -> str:
    """Stable content hash, used for conflict detection and suggestion ids."""
    import hashlib

    return hashlib.sha256(serialize(sheet).encode()).hexdigest()[:16]


def with_notes(
    sheet: LeadSheet,
    melody: tuple[MelodyNote, ...] | list[MelodyNote] | None = None,
    harmony: tuple[HarmonyChord, ...] | list[HarmonyChord] | None = None,
) -> LeadSheet:
    kwargs = {}
    if melody is not None:
        kwargs["melody"] = tuple(melody)
    if harmony is not None:
        kwargs["harmony"] = tuple(harmony)
    return replace(sheet, **kwargs)


def dump_json(sheet: LeadSheet) -> str:
    return json.dumps(sheet_to_json(sheet), sort_keys=True)
