"""Event/control sequence construction: partition realized notes by
capability, interleave with the anticipation shift, tokenize/detokenize,
and build fine-tuning datasets."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .leadsheet import Instrument, LeadSheet, NoteEvent, realize

ANTICIPATION_S = 5.0  # controls surface this many seconds before their onset

# Token layout. Each note is a (time, duration, note) triple; control triples
# use a parallel bank offset by CONTROL_OFFSET so the flag is carried by the
# token ids themselves.
BIN_S = 0.01
TIME_BINS = 1000  # deltas 0 .. 9.99 s
DUR_BASE = 1000
DUR_BINS = 1000  # durations 0 .. 9.99 s
NOTE_BASE = 2000
NUM_INSTRUMENTS = 3
NOTE_TOKENS = NUM_INSTRUMENTS * 128  # instrument*128 + pitch
CONTROL_OFFSET = NOTE_BASE + NOTE_TOKENS  # 2384
BOS = 2 * CONTROL_OFFSET  # 4768
EOS = BOS + 1
PAD = BOS + 2
VOCAB_SIZE = PAD + 1  # 4771

HORIZON_BINS = int(round(ANTICIPATION_S / BIN_S))  # 500


class AnticipateError(Exception):
    pass


class QuantizationOverflow(AnticipateError):
    """A time delta or duration exceeds the 10 s token range."""


class MalformedSequence(AnticipateError):
    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"token {position}: {message}"
        super().__init__(message)


class Capability(str, Enum):
    LEFT_TO_RIGHT = "left_to_right"
    FILL_IN_MIDDLE = "fill_in_middle"
    HARM_TO_MEL = "harm_to_mel"  # harmony given, melody generated
    MEL_TO_HARM = "mel_to_harm"  # melody given, harmony generated


@dataclass(frozen=True)
class Span:
    t_s: float
    t_e: float

    def __post_init__(self):
        if not 0 <= self.t_s < self.t_e:
            raise ValueError(f"bad span [{self.t_s}, {self.t_e}]")


@dataclass(frozen=True)
class Partition:
    events: tuple[NoteEvent, ...]
    controls: tuple[NoteEvent, ...]
    capability: Capability
    span: Span


@dataclass(frozen=True)
class TokenSeq:
    tokens: tuple[int, ...]
    anticipation_horizon_s: float = ANTICIPATION_S


@dataclass(frozen=True)
class Vocabulary:
    time_bins: int = TIME_BINS
    dur_bins: int = DUR_BINS
    num_instruments: int = NUM_INSTRUMENTS
    control_offset: int = CONTROL_OFFSET
    bos: int = BOS
    eos: int = EOS
    pad: int = PAD
    size: int = VOCAB_SIZE
    bin_s: float = BIN_S
    anticipation_s: float = ANTICIPATION_S

    def hash(self) -> str:
        blob = json.dumps(self.__dict__, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


VOCAB = Vocabulary()


def quantize(x: float) -> int:
    return int(round(x / BIN_S))


def classify_token(tok: int) -> tuple[str, bool]:
    """(kind, is_control) for a token id; kind in time/dur/note/bos/eos/pad."""
    if tok == BOS:
        return "bos", False
    if tok == EOS:
        return "eos", False
    if tok == PAD:
        return "pad", False
    if not 0 <= tok < BOS:
        raise MalformedSequence(f"token id {tok} out of range")
    is_control = tok >= CONTROL_OFFSET
    base = tok - CONTROL_OFFSET if is_control else tok
    if base < DUR_BASE:
        return "time", is_control
    if base < NOTE_BASE:
        return "dur", is_control
    return "note", is_control


def _event_key(note: NoteEvent) -> float:
    return note.start_s


def _control_key(note: NoteEvent) -> float:
    return note.start_s - ANTICIPATION_S


def partition(
    melody: list[NoteEvent],
    harmony: list[NoteEvent],
    clicks: list[NoteEvent],
    span: Span,
    capability: Capability,
) -> Partition:
    """Split notes into events (generated) and controls (anticipated
    conditioning). Membership is by note onset with strict comparisons;
    clicks are controls under every capability."""
    t_s, t_e = span.t_s, span.t_e
    if capability is Capability.LEFT_TO_RIGHT:
        events = melody + harmony
        controls = list(clicks)
    elif capability is Capability.FILL_IN_MIDDLE:
        events = [n for n in melody + harmony if n.start_s < t_e]
        controls = [n for n in melody + harmony if n.start_s >= t_e] + list(clicks)
    elif capability is Capability.HARM_TO_MEL:
        events = [n for n in melody if n.start_s < t_e] + [n for n in harmony if n.start_s < t_s]
        controls = (
            [n for n in melody if n.start_s >= t_e]
            + [n for n in harmony if n.start_s >= t_s]
            + list(clicks)
        )
    elif capability is Capability.MEL_TO_HARM:
        events = [n for n in melody if n.start_s < t_s] + [n for n in harmony if n.start_s < t_e]
        controls = (
            [n for n in melody if n.start_s >= t_s]
            + [n for n in harmony if n.start_s >= t_e]
            + list(clicks)
        )
    else:
        raise ValueError(f"unknown capability {capability}")
    order = lambda n: (n.start_s, n.instrument, n.pitch)
    return Partition(
        events=tuple(sorted(events, key=order)),
        controls=tuple(sorted(controls, key=order)),
        capability=capability,
        span=span,
    )


def interleave(p: Partition) -> list[tuple[NoteEvent, bool]]:
    """Merge events and controls into arrival order: controls are keyed
    ANTICIPATION_S before their onset; ties put the control first, then sort
    by instrument and pitch."""
    tagged = [(n, False) for n in p.events] + [(n, True) for n in p.controls]
    tagged.sort(
        key=lambda item: (
            _control_key(item[0]) if item[1] else _event_key(item[0]),
            0 if item[1] else 1,
            item[0].instrument,
            item[0].pitch,
            item[0].duration_s,
        )
    )
    return tagged


def note_token(note: NoteEvent) -> int:
    return NOTE_BASE + int(note.instrument) * 128 + note.pitch


def tokenize(seq: list[tuple[NoteEvent, bool]], complete: bool = True) -> TokenSeq:
    """Encode an interleaved sequence. Time tokens hold the delta (10 ms bins)
    from the running key position to the note's onset; for controls the
    anticipation shift is then re-subtracted from the running position, so a
    control's time token is always at least the horizon. Deltas are taken
    between pre-quantized absolute positions, so rounding never accumulates."""
    tokens = [BOS]
    pos_bin = 0  # running interleave-key position, in bins
    for i, (note, is_control) in enumerate(seq):
        onset_bin = quantize(note.start_s)
        key_bin = onset_bin - HORIZON_BINS if is_control else onset_bin
        delta = onset_bin - pos_bin
        if delta < 0:
            raise ValueError(f"note {i} out of interleave order (delta {delta} bins)")
        if delta >= TIME_BINS:
            raise QuantizationOverflow(
                f"note {i}: onset gap {delta * BIN_S:.2f} s exceeds the "
                f"{(TIME_BINS - 1) * BIN_S:.2f} s token range"
            )
        dur_bin = max(1, quantize(note.duration_s))
        if dur_bin >= DUR_BINS:
            raise QuantizationOverflow(
                f"note {i}: duration {note.duration_s:.2f} s exceeds the "
                f"{(DUR_BINS - 1) * BIN_S:.2f} s token range"
            )
        offs = CONTROL_OFFSET if is_control else 0
        tokens.append(offs + delta)
        tokens.append(offs + DUR_BASE + dur_bin)
        tokens.append(offs + note_token(note))
        pos_bin = key_bin
    if complete:
        tokens.append(EOS)
    return TokenSeq(tuple(tokens))


def detokenize(t: TokenSeq) -> list[tuple[NoteEvent, bool]]:
    """Inverse of tokenize up to 10 ms quantization. Raises MalformedSequence
    if the triple grammar (time, duration, note, all three from the same
    event/control bank) is violated."""
    toks = list(t.tokens)
    if not toks or toks[0] != BOS:
        raise MalformedSequence("sequence must start with BOS", 0)
    i = 1
    notes: list[tuple[NoteEvent, bool]] = []
    pos_bin = 0
    while i < len(toks):
        kind, is_control = classify_token(toks[i])
        if kind == "eos":
            if i != len(toks) - 1:
                raise MalformedSequence("EOS before end of sequence", i)
            return notes
        if kind != "time":
            raise MalformedSequence(f"expected time token, got {kind}", i)
        if i + 2 >= len(toks):
            raise MalformedSequence("truncated final triple", i)
        dkind, dctrl = classify_token(toks[i + 1])
        nkind, nctrl = classify_token(toks[i + 2])
        if dkind != "dur":
            raise MalformedSequence(f"expected duration token, got {dkind}", i + 1)
        if nkind != "note":
            raise MalformedSequence(f"expected note token, got {nkind}", i + 2)
        if not (is_control == dctrl == nctrl):
            raise MalformedSequence("triple mixes event and control banks", i)
        base = CONTROL_OFFSET if is_control else 0
        delta = toks[i] - base
        dur_bin = toks[i + 1] - base - DUR_BASE
        note_val = toks[i + 2] - base - NOTE_BASE
        if dur_bin == 0:
            raise MalformedSequence("zero-duration note", i + 1)
        onset_bin = pos_bin + delta
        pos_bin = onset_bin - HORIZON_BINS if is_control else onset_bin
        notes.append(
            (
                NoteEvent(
                    start_s=onset_bin * BIN_S,
                    duration_s=dur_bin * BIN_S,
                    instrument=Instrument(note_val // 128),
                    pitch=note_val % 128,
                ),
                is_control,
            )
        )
        i += 3
    return notes


def encode_sheet(sheet: LeadSheet, span: Span, capability: Capability) -> TokenSeq:
    melody, harmony, clicks = realize(sheet)
    return tokenize(interleave(partition(melody, harmony, clicks, span, capability)))


# --- fine-tuning examples -------------------------------------------------

SPAN_MEASURE_CHOICES = (1, 2, 4, 8)
MEASURE_ALIGNED_PROB = 0.75


def sample_span(sheet: LeadSheet, rng: np.random.Generator) -> tuple[Span, float, float]:
    """Random span: dyadic measure count (clamped), start biased to measure
    boundaries. Returns (span_seconds, start_beat, end_beat)."""
    from .leadsheet import beats_to_seconds

    measures = sheet.length_measures
    bpm_measure = sheet.meter.beats_per_measure
    length = min(int(rng.choice(SPAN_MEASURE_CHOICES)), measures)
    length_beats = length * bpm_measure
    if rng.random() < MEASURE_ALIGNED_PROB:
        start_measure = int(rng.integers(0, measures - length + 1))
        start_beat = float(start_measure * bpm_measure)
    else:
        start_beat = float(rng.integers(0, int(sheet.total_beats) - length_beats + 1))
    end_beat = start_beat + length_beats
    span = Span(
        beats_to_seconds(start_beat, sheet.tempo),
        beats_to_seconds(end_beat, sheet.tempo),
    )
    return span, start_beat, end_beat


def make_finetune_example(
    sheet: LeadSheet, rng: np.random.Generator
) -> tuple[TokenSeq, Capability, Span]:
    """One training example: random span, random capability, encode."""
    if sheet.length_measures < 2:
        raise ValueError("need at least 2 measures to sample a training span")
    span, _, _ = sample_span(sheet, rng)
    capability = list(Capability)[int(rng.integers(0, len(Capability)))]
    return encode_sheet(sheet, span, capability), capability, span


DATASET_FORMAT_VERSION = 1


def build_dataset(
    corpus: list[LeadSheet],
    examples_per_song: int,
    seed: int,
    out_path: str | Path,
) -> dict:
    """Write a sequence-example file (one JSON record per line: song index,
    capability, span seconds, flat token list) plus a sibling .manifest.json.
    Songs whose tokenization overflows the delta cap are skipped and recorded.
    Byte-reproducible for a fixed seed; per-song rng streams keyed by
    (seed, song index)."""
    if not corpus:
        raise ValueError("corpus is empty")
    out_path = Path(out_path)
    counts = {c.value: 0 for c in Capability}
    skipped: list[dict] = []
    total = 0
    with open(out_path, "w") as f:
        for idx, sheet in enumerate(corpus):
            rng = np.random.default_rng(np.random.SeedSequence([seed, idx]))
            records = []
            try:
                for _ in range(examples_per_song):
                    toks, cap, span = make_finetune_example(sheet, rng)
                    records.append(
                        {
                            "song": idx,
                            "capability": cap.value,
                            "t_s": span.t_s,
                            "t_e": span.t_e,
                            "tokens": list(toks.tokens),
                        }
                    )
            except (QuantizationOverflow, ValueError) as e:
                skipped.append({"song": idx, "reason": str(e)})
                continue
            for rec in records:
                f.write(json.dumps(rec, sort_keys=True) + "\n")
                counts[rec["capability"]] += 1
                total += 1
    manifest = {
        "format_version": DATASET_FORMAT_VERSION,
        "seed": seed,
        "songs": len(corpus),
        "examples_per_song": examples_per_song,
        "examples": total,
        "capability_counts": counts,
        "skipped": skipped,
        "vocab_hash": VOCAB.hash(),
    }
    manifest_path = out_path.with_suffix(out_path.suffix + ".manifest.json")
    with open(manifest_path, "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def load_dataset(path: str | Path) -> list[list[int]]:
    """Token lists from a sequence-example file, in file order."""
    seqs = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                seqs.append(json.loads(line)["tokens"])
    return seqs
