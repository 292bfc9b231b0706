"""Span-conditioned generation: build the conditioning sequence for a lead
sheet + span + capability, run constrained decoding with anticipated-control
injection, convert the result back to functional notes, and splice accepted
suggestions into the sheet."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from . import anticipate as ant
from .anticipate import (
    BIN_S,
    CONTROL_OFFSET,
    DUR_BASE,
    EOS,
    HORIZON_BINS,
    NOTE_BASE,
    TIME_BINS,
    VOCAB_SIZE,
    Capability,
    Span,
    TokenSeq,
    interleave,
    note_token,
    partition,
    quantize,
)
from .leadsheet import (
    HarmonyChord,
    Instrument,
    KeySignature,
    LeadSheet,
    MelodyNote,
    NoteEvent,
    beats_to_seconds,
    chord_catalog,
    harmony_chord_from_pitches,
    melody_note_from_pitch,
    melody_pitch_set,
    representable,
    seconds_to_beats,
    sheet_digest,
)
from .model import MaskEmpty, Policy, SequenceModel, masked_sample

MAX_TRIPLES = 256


class EngineError(Exception):
    pass


class SpanOutOfRange(EngineError):
    pass


class GenerationStalled(EngineError):
    """Decoding could not place a single note; shown to users as
    "no suggestion"."""


class ModelUnavailable(EngineError):
    pass


class ConflictError(EngineError):
    """The sheet changed after the suggestion was generated."""


def capability_streams(cap: Capability) -> tuple[bool, bool]:
    """(melody generated, harmony generated)."""
    if cap is Capability.HARM_TO_MEL:
        return True, False
    if cap is Capability.MEL_TO_HARM:
        return False, True
    return True, True


@dataclass(frozen=True)
class GenerationRequest:
    sheet: LeadSheet
    span_beats: tuple[float, float]
    capability: Capability
    policy: Policy = field(default_factory=Policy)
    alternative_index: int = 0

    def __post_init__(self):
        object.__setattr__(self, "span_beats", tuple(float(b) for b in self.span_beats))
        start, end = self.span_beats
        if not (0 <= start < end <= self.sheet.total_beats):
            raise SpanOutOfRange(
                f"span [{start}, {end}] outside [0, {self.sheet.total_beats}]"
            )
        if not (representable(start) and representable(end)):
            raise SpanOutOfRange("span bounds must be 6-decimal beat values")
        if self.alternative_index < 0:
            raise ValueError("alternative_index must be non-negative")


@dataclass(frozen=True)
class Suggestion:
    id: str
    request: GenerationRequest
    generated_melody: tuple[MelodyNote, ...]
    generated_harmony: tuple[HarmonyChord, ...]
    token_trace: TokenSeq
    model_version: str
    sheet_digest: str


def _ceil_bin(x: float) -> int:
    return int(math.ceil(round(x * 100.0, 6)))


@dataclass
class Conditioning:
    prompt: TokenSeq
    pending: list[NoteEvent]  # controls not yet surfaced, interleave order
    stop_time_s: float
    pos_bin: int  # running key position after the prompt
    start_bin: int
    stop_bin: int
    mel_frontier: int  # earliest bin a generated melody note may start
    harm_frontier: int


def build_conditioning(req: GenerationRequest) -> Conditioning:
    """Partition + interleave the current sheet; the prompt holds every triple
    whose interleave key precedes the span start, the rest of the controls are
    queued for injection during decoding."""
    sheet = req.sheet
    start_beat, end_beat = req.span_beats
    t_s = beats_to_seconds(start_beat, sheet.tempo)
    t_e = beats_to_seconds(end_beat, sheet.tempo)
    from .leadsheet import realize

    melody, harmony, clicks = realize(sheet)
    part = partition(melody, harmony, clicks, Span(t_s, t_e), req.capability)
    seq = interleave(part)

    def key(note: NoteEvent, is_control: bool) -> float:
        return note.start_s - ant.ANTICIPATION_S if is_control else note.start_s

    prompt_triples = [(n, c) for n, c in seq if key(n, c) < t_s]
    pending = [n for n, c in seq if c and key(n, c) >= t_s]
    prompt = ant.tokenize(prompt_triples, complete=False)
    pos_bin = 0
    for n, c in prompt_triples:
        pos_bin = quantize(n.start_s) - HORIZON_BINS if c else quantize(n.start_s)

    start_bin = _ceil_bin(t_s)
    stop_bin = _ceil_bin(t_e)
    mel_frontier, harm_frontier = start_bin, start_bin
    for n in melody:
        if n.start_s < t_s and n.start_s + n.duration_s > t_s:
            mel_frontier = max(mel_frontier, _ceil_bin(n.start_s + n.duration_s))
    for n in harmony:
        if n.start_s < t_s and n.start_s + n.duration_s > t_s:
            harm_frontier = max(harm_frontier, _ceil_bin(n.start_s + n.duration_s))
    return Conditioning(
        prompt=prompt,
        pending=pending,
        stop_time_s=t_e,
        pos_bin=pos_bin,
        start_bin=start_bin,
        stop_bin=stop_bin,
        mel_frontier=mel_frontier,
        harm_frontier=harm_frontier,
    )


@lru_cache(maxsize=32)
def _decode_tables(key: KeySignature):
    """Per-key masks for constrained decoding: melody note tokens, chord bass
    tokens, and the ascending-prefix maps of all realizable chords."""
    mel_ids = np.array(
        sorted(NOTE_BASE + 128 * Instrument.MELODY + p for p in melody_pitch_set(key))
    )
    chords = list(chord_catalog(key).keys())
    bass_ids = np.array(
        sorted({NOTE_BASE + 128 * Instrument.HARMONY + ct[0] for ct in chords})
    )
    nexts: dict[tuple[int, ...], set[int]] = {}
    complete: set[tuple[int, ...]] = set()
    for ct in chords:
        for i in range(1, len(ct) + 1):
            prefix = ct[:i]
            if i < len(ct):
                nexts.setdefault(prefix, set()).add(ct[i])
            else:
                complete.add(prefix)
    return mel_ids, bass_ids, nexts, complete


@dataclass
class _OpenChord:
    onset_bin: int
    dur_bin: int
    tones: list[int]


class _Decoder:
    """One constrained decode over a conditioning. Keys stay nondecreasing:
    a sampled event that would arrive at or after the next pending control's
    key is rejected and the control is injected instead."""

    def __init__(self, req: GenerationRequest, cond: Conditioning, model: SequenceModel,
                 rng: np.random.Generator):
        self.req = req
        self.cond = cond
        self.model = model
        self.rng = rng
        self.tokens: list[int] = list(cond.prompt.tokens)
        self.pos = cond.pos_bin
        self.pending = list(cond.pending)
        self.pi = 0  # index into pending
        self.melf = cond.mel_frontier
        self.harmf = cond.harm_frontier
        self.mel_ok, self.harm_ok = capability_streams(req.capability)
        self.mel_ids, self.bass_ids, self.nexts, self.complete = _decode_tables(req.sheet.key)
        self.group: _OpenChord | None = None
        self.notes_mel: list[tuple[int, int, int]] = []  # (onset_bin, dur_bin, pitch)
        self.notes_harm: list[tuple[int, int, list[int]]] = []

    # -- pending controls --

    def _nck(self) -> int | None:
        if self.pi >= len(self.pending):
            return None
        return quantize(self.pending[self.pi].start_s) - HORIZON_BINS

    def _inject_control(self) -> None:
        note = self.pending[self.pi]
        self.pi += 1
        onset_bin = quantize(note.start_s)
        delta = onset_bin - self.pos
        if not 0 <= delta < TIME_BINS:
            raise ant.QuantizationOverflow(
                f"control at {note.start_s:.2f}s is {delta * BIN_S:.2f}s from the "
                "running position"
            )
        dur_bin = max(1, quantize(note.duration_s))
        if dur_bin >= TIME_BINS:
            raise ant.QuantizationOverflow(f"control duration {note.duration_s:.2f}s")
        self.tokens += [
            CONTROL_OFFSET + delta,
            CONTROL_OFFSET + DUR_BASE + dur_bin,
            CONTROL_OFFSET + note_token(note),
        ]
        self.pos = onset_bin - HORIZON_BINS
        if self.group is not None and self.pos > self.group.onset_bin:
            # the running position moved past the chord's onset: no future
            # delta can reach it, so the group can never be extended again
            self._finalize_group()

    # -- chord state --

    def _group_complete(self) -> bool:
        assert self.group is not None
        return tuple(self.group.tones) in self.complete

    def _group_extensions(self) -> set[int]:
        assert self.group is not None
        return self.nexts.get(tuple(self.group.tones), set())

    def _finalize_group(self) -> None:
        g = self.group
        self.group = None
        if g is not None and tuple(g.tones) in self.complete:
            self.notes_harm.append((g.onset_bin, g.dur_bin, g.tones))
        # an incomplete group (decode cap hit mid-chord) is dropped

    # -- masks --

    def _time_mask(self) -> np.ndarray:
        m = np.zeros(VOCAB_SIZE, dtype=bool)
        frontiers = []
        if self.mel_ok:
            frontiers.append(self.melf)
        if self.harm_ok:
            frontiers.append(self.harmf)
        for f in frontiers:
            d0 = max(0, f - self.pos)
            if d0 < TIME_BINS:
                m[d0:TIME_BINS] = True
        if self.group is not None and self._group_extensions():
            m[0] = True  # extend the open chord at the same onset
        m[EOS] = True
        return m

    def _dur_mask(self, onset: int) -> np.ndarray:
        m = np.zeros(VOCAB_SIZE, dtype=bool)
        melody_here = self.mel_ok and onset >= self.melf
        new_chord_here = self.harm_ok and onset >= self.harmf
        if melody_here or new_chord_here:
            m[DUR_BASE + 1 : DUR_BASE + TIME_BINS] = True
        elif self.group is not None and onset == self.group.onset_bin:
            m[DUR_BASE + self.group.dur_bin] = True  # extension must match
        return m

    def _note_mask(self, onset: int, dur: int) -> np.ndarray:
        m = np.zeros(VOCAB_SIZE, dtype=bool)
        if self.mel_ok and onset >= self.melf:
            m[self.mel_ids] = True
        if self.harm_ok:
            if (
                self.group is not None
                and onset == self.group.onset_bin
                and dur == self.group.dur_bin
            ):
                for p in self._group_extensions():
                    m[NOTE_BASE + 128 * Instrument.HARMONY + p] = True
            if onset >= self.harmf:
                m[self.bass_ids] = True
        return m

    def _sample(self, mask: np.ndarray) -> int:
        logits = self.model.next_token_logits(self.tokens)
        return masked_sample(logits, mask, self.req.policy, self.rng)

    # -- main loop --

    def run(self) -> None:
        produced = 0
        while produced < MAX_TRIPLES:
            nck = self._nck()
            while nck is not None and nck <= self.pos:
                self._inject_control()
                nck = self._nck()
            if self.group is not None and not self._group_complete():
                # chord prefix must finish: same onset, same duration, next tone up
                g = self.group
                self.tokens.append(0)  # delta 0 from the group onset
                self.tokens.append(DUR_BASE + g.dur_bin)
                note_mask = np.zeros(VOCAB_SIZE, dtype=bool)
                for p in self._group_extensions():
                    note_mask[NOTE_BASE + 128 * Instrument.HARMONY + p] = True
                tok = self._sample(note_mask)
                self.tokens.append(tok)
                g.tones.append(tok - NOTE_BASE - 128 * Instrument.HARMONY)
                produced += 1
                if self._group_complete() and not self._group_extensions():
                    self._finalize_group()
                continue
            ttok = self._sample(self._time_mask())
            if ttok == EOS:
                self.tokens.append(EOS)
                break
            onset = self.pos + ttok
            if nck is not None and nck <= onset and nck < self.cond.stop_bin:
                self._inject_control()  # the control arrives first; resample
                continue
            if onset >= self.cond.stop_bin:
                break  # reaching the span end is the stop signal; triple discarded
            if self.group is not None and onset > self.group.onset_bin:
                self._finalize_group()
            dtok = self._sample(self._dur_mask(onset))
            dur = dtok - DUR_BASE
            ntok = self._sample(self._note_mask(onset, dur))
            self.tokens += [ttok, dtok, ntok]
            self.pos = onset
            produced += 1
            instrument = Instrument((ntok - NOTE_BASE) // 128)
            pitch = (ntok - NOTE_BASE) % 128
            if instrument is Instrument.MELODY:
                self.notes_mel.append((onset, dur, pitch))
                self.melf = onset + dur
            elif self.group is not None and onset == self.group.onset_bin:
                self.group.tones.append(pitch)
                if self._group_complete() and not self._group_extensions():
                    self._finalize_group()
            else:
                self.group = _OpenChord(onset, dur, [pitch])
                self.harmf = onset + dur
        self._finalize_group()


def _to_beats(bin_index: int, sheet: LeadSheet) -> float:
    return round(seconds_to_beats(bin_index * BIN_S, sheet.tempo), 6)


def _clip_durations(
    notes: list[tuple[float, float]], end_beat: float
) -> list[tuple[float, float]]:
    """Clip (onset, duration) beat pairs to the span end and to the next
    onset, so rounding to the 6-decimal grid never produces overlaps."""
    out = []
    for i, (onset, dur) in enumerate(notes):
        limit = end_beat if i + 1 == len(notes) else min(end_beat, notes[i + 1][0])
        if onset + dur > limit:
            dur = round(limit - onset, 6)
        out.append((onset, dur))
    return out


def generate(req: GenerationRequest, model: SequenceModel, session_seed: int = 0) -> Suggestion:
    """One suggestion for the request. Reproducible: the sampling stream is
    derived from (session_seed, alternative_index) alone."""
    if session_seed < 0:
        raise ValueError("session_seed must be non-negative")
    cond = build_conditioning(req)
    rng = np.random.default_rng(np.random.SeedSequence([session_seed, req.alternative_index]))
    dec = _Decoder(req, cond, model, rng)
    try:
        dec.run()
    except MaskEmpty as e:
        raise GenerationStalled(str(e))
    sheet = req.sheet
    end_beat = req.span_beats[1]

    mel_beats = _clip_durations(
        [(_to_beats(o, sheet), _to_beats(o + d, sheet) - _to_beats(o, sheet))
         for o, d, _ in dec.notes_mel],
        end_beat,
    )
    melody = tuple(
        melody_note_from_pitch(sheet.key, pitch, onset, round(dur, 6))
        for (onset, dur), (_, _, pitch) in zip(mel_beats, dec.notes_mel)
    )
    harm_beats = _clip_durations(
        [(_to_beats(o, sheet), _to_beats(o + d, sheet) - _to_beats(o, sheet))
         for o, d, _ in dec.notes_harm],
        end_beat,
    )
    harmony = tuple(
        harmony_chord_from_pitches(sheet.key, tuple(tones), onset, round(dur, 6))
        for (onset, dur), (_, _, tones) in zip(harm_beats, dec.notes_harm)
    )
    digest = sheet_digest(sheet)
    sid = hashlib.sha256(
        json.dumps(
            [
                digest,
                req.span_beats,
                req.capability.value,
                req.policy.temperature,
                req.policy.top_p,
                req.alternative_index,
                session_seed,
                model.version,
                dec.tokens[len(cond.prompt.tokens):],
            ],
            sort_keys=True,
        ).encode()
    ).hexdigest()[:16]
    return Suggestion(
        id=sid,
        request=req,
        generated_melody=melody,
        generated_harmony=harmony,
        token_trace=TokenSeq(tuple(dec.tokens)),
        model_version=model.version,
        sheet_digest=digest,
    )


def next_alternative(
    req: GenerationRequest, model: SequenceModel, session_seed: int = 0
) -> Suggestion:
    """The following alternative in this request's endless stream."""
    bumped = replace(req, alternative_index=req.alternative_index + 1)
    return generate(bumped, model, session_seed)


def accept(sheet: LeadSheet, suggestion: Suggestion) -> LeadSheet:
    """Splice the suggestion in: notes of each generated stream whose onset
    lies in the span are replaced by the suggestion's; everything else is
    untouched. The sheet must not have changed since the suggestion."""
    if sheet_digest(sheet) != suggestion.sheet_digest:
        raise ConflictError("sheet changed since this suggestion was generated")
    start, end = suggestion.request.span_beats
    gen_mel, gen_harm = capability_streams(suggestion.request.capability)
    melody = sheet.melody
    harmony = sheet.harmony
    if gen_mel:
        kept = [n for n in melody if not (start <= n.onset_beats < end)]
        melody = tuple(sorted(kept + list(suggestion.generated_melody),
                              key=lambda n: n.onset_beats))
    if gen_harm:
        kept_h = [c for c in harmony if not (start <= c.onset_beats < end)]
        harmony = tuple(sorted(kept_h + list(suggestion.generated_harmony),
                               key=lambda c: c.onset_beats))
    return replace(sheet, melody=melody, harmony=harmony)
