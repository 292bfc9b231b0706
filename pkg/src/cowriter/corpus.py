"""Procedural lead-sheet corpus: diatonic progressions from a small grammar
with chord-tone/passing-tone melodies. Deterministic per seed; used for
training data, demos, and tests."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .leadsheet import (
    BeatUnit,
    ChordQuality,
    HarmonyChord,
    KeySignature,
    LeadSheet,
    MelodyNote,
    Meter,
    Mode,
    Tempo,
)

# Measure-per-chord progression families (scale-degree roots).
PROGRESSIONS = (
    (1, 5, 6, 4),
    (1, 6, 4, 5),
    (1, 4, 5, 1),
    (2, 5, 1, 1),
    (6, 4, 1, 5),
    (1, 4, 1, 5),
)

BPM_CHOICES = (80, 90, 100, 110, 120, 132, 140)
MEASURE_CHOICES = (4, 8)

# Explicit qualities sprinkled over the diatonic default; the dominant7 only
# ever lands on degree 5 so the grammar stays functional.
SEVENTH_PROB = 0.15
DOM7_ON_V_PROB = 0.3
EXPLICIT_TRIAD_PROB = 0.1
INVERSION_PROB = 0.2
SPLIT_BEAT_PROB = 0.35

# Scale-index arithmetic: degree/octave pairs flattened to octave*7+degree-1.
_MELODY_LO = 3 * 7  # octave 3, degree 1
_MELODY_HI = 5 * 7 + 6  # octave 5, degree 7


@dataclass(frozen=True)
class CorpusSpec:
    songs: int
    seed: int
    fixed_key: int | None = None
    fixed_mode: Mode | None = None
    fixed_bpm: float | None = None
    fixed_measures: int | None = None
    fixed_progression: tuple[int, ...] | None = None
    plain_triads: bool = False  # root-position diatonic triads only


def _chord_quality(rng: np.random.Generator, degree: int, plain: bool) -> tuple[ChordQuality, int]:
    if plain:
        return ChordQuality.TRIAD_DIATONIC, 0
    if degree == 5 and rng.random() < DOM7_ON_V_PROB:
        quality = ChordQuality.DOMINANT7
    elif rng.random() < SEVENTH_PROB:
        quality = ChordQuality.SEVENTH_DIATONIC
    elif rng.random() < EXPLICIT_TRIAD_PROB:
        quality = ChordQuality.MAJOR if degree in (1, 4, 5) else ChordQuality.MINOR
    else:
        quality = ChordQuality.TRIAD_DIATONIC
    inversion = 1 if rng.random() < INVERSION_PROB else 0
    return quality, inversion


def _melody_for_measures(
    rng: np.random.Generator,
    roots: list[int],
    beats_per_measure: int,
    mode: Mode,
) -> list[MelodyNote]:
    """Walk the scale: chord tones on downbeats, diatonic steps between."""
    notes: list[MelodyNote] = []
    pos = 4 * 7 + (roots[0] - 1)  # start on the first root, octave 4
    for m, root in enumerate(roots):
        chord_tones = [(root - 1) % 7, (root + 1) % 7, (root + 3) % 7]
        for b in range(beats_per_measure):
            onset = float(m * beats_per_measure + b)
            if b == 0:
                # snap to the nearest chord tone
                candidates = [
                    oc * 7 + d for oc in (3, 4, 5) for d in chord_tones
                ]
                pos = min(candidates, key=lambda s: (abs(s - pos), s))
            else:
                step = int(rng.choice((-2, -1, -1, 1, 1, 2)))
                pos = int(np.clip(pos + step, _MELODY_LO, _MELODY_HI))
            if rng.random() < SPLIT_BEAT_PROB:
                notes.append(MelodyNote(onset, 0.5, pos % 7 + 1, pos // 7, 0))
                step = int(rng.choice((-1, 1)))
                pos = int(np.clip(pos + step, _MELODY_LO, _MELODY_HI))
                notes.append(MelodyNote(onset + 0.5, 0.5, pos % 7 + 1, pos // 7, 0))
            else:
                notes.append(MelodyNote(onset, 1.0, pos % 7 + 1, pos // 7, 0))
    return notes


def generate_sheet(rng: np.random.Generator, spec: CorpusSpec | None = None) -> LeadSheet:
    spec = spec or CorpusSpec(songs=1, seed=0)
    key_pc = spec.fixed_key if spec.fixed_key is not None else int(rng.integers(0, 12))
    mode = spec.fixed_mode or (Mode.MAJOR if rng.random() < 0.7 else Mode.MINOR)
    bpm = float(spec.fixed_bpm or rng.choice(BPM_CHOICES))
    measures = int(spec.fixed_measures or rng.choice(MEASURE_CHOICES))
    meter = Meter(4, BeatUnit.QUARTER)
    if spec.fixed_progression is not None:
        prog = spec.fixed_progression
    else:
        prog = PROGRESSIONS[int(rng.integers(0, len(PROGRESSIONS)))]
    roots = [prog[m % len(prog)] for m in range(measures)]
    harmony = []
    for m, root in enumerate(roots):
        quality, inversion = _chord_quality(rng, root, spec.plain_triads)
        harmony.append(
            HarmonyChord(
                onset_beats=float(m * meter.beats_per_measure),
                duration_beats=float(meter.beats_per_measure),
                root_degree=root,
                quality=quality,
                inversion=inversion,
            )
        )
    melody = _melody_for_measures(rng, roots, meter.beats_per_measure, mode)
    return LeadSheet(
        key=KeySignature(key_pc, mode),
        meter=meter,
        tempo=Tempo(bpm),
        length_measures=measures,
        melody=tuple(melody),
        harmony=tuple(harmony),
    )


def generate_corpus(spec: CorpusSpec) -> list[LeadSheet]:
    """spec.songs sheets, each from its own (seed, index) rng stream, so the
    corpus is reproducible and order-independent."""
    sheets = []
    for i in range(spec.songs):
        rng = np.random.default_rng(np.random.SeedSequence([spec.seed, i]))
        sheets.append(generate_sheet(rng, spec))
    return sheets


def degenerate_harmony_spec(songs: int, seed: int) -> CorpusSpec:
    """Fixed-key corpus whose harmony is always the same four-chord loop;
    melodies stay random. Lets a counting model nail the chord schedule."""
    return CorpusSpec(
        songs=songs,
        seed=seed,
        fixed_key=0,
        fixed_mode=Mode.MAJOR,
        fixed_bpm=120.0,
        fixed_measures=4,
        fixed_progression=(1, 4, 5, 1),
        plain_triads=True,
    )
