/** Client-side pitch realization, mirroring the service's rules so the
 * grid and audition audio can show real pitches without extra API calls. */

import type { ChordJson, Mode, NoteJson, SheetJson } from "./types.js";

const DEGREE_OFFSETS: Record<Mode, number[]> = {
  major: [0, 2, 4, 5, 7, 9, 11],
  minor: [0, 2, 3, 5, 7, 8, 10],
};

const QUALITY_TEMPLATES: Record<string, number[]> = {
  major: [0, 4, 7],
  minor: [0, 3, 7],
  diminished: [0, 3, 6],
  augmented: [0, 4, 8],
  dominant7: [0, 4, 7, 10],
};

export function melodyPitch(sheet: SheetJson, note: NoteJson): number {
  const offsets = DEGREE_OFFSETS[sheet.mode];
  const off = offsets[(note.degree - 1) % 7];
  if (off === undefined) throw new Error(`degree ${note.degree} out of range`);
  return 12 * (note.octave + 1) + sheet.key + off + note.alteration;
}

function stackedThirds(mode: Mode, rootDegree: number, tones: number): number[] {
  const offsets = DEGREE_OFFSETS[mode];
  const base = offsets[rootDegree - 1]!;
  const out: number[] = [];
  for (let k = 0; k < tones; k++) {
    const idx = rootDegree - 1 + 2 * k;
    const octaves = Math.floor(idx / 7);
    out.push(offsets[idx % 7]! + 12 * octaves - base);
  }
  return out;
}

/** Chord tones as MIDI pitches: root folded into the octave below middle C,
 * inversion rotating tones upward. */
export function chordPitches(sheet: SheetJson, chord: ChordJson): number[] {
  let intervals: number[];
  if (chord.quality === "triad_diatonic") {
    intervals = stackedThirds(sheet.mode, chord.root, 3);
  } else if (chord.quality === "seventh_diatonic") {
    intervals = stackedThirds(sheet.mode, chord.root, 4);
  } else {
    const t = QUALITY_TEMPLATES[chord.quality];
    if (!t) throw new Error(`unknown quality ${chord.quality}`);
    intervals = [...t];
  }
  const rootPc = (sheet.key + DEGREE_OFFSETS[sheet.mode][chord.root - 1]!) % 12;
  const root = 48 + rootPc; // folded into [48, 59]
  let tones = intervals.map((i) => root + i);
  for (let k = 0; k < chord.inversion % tones.length; k++) {
    tones = [...tones.slice(1), tones[0]! + 12];
  }
  return tones;
}

export const ROMAN: string[] = ["I", "II", "III", "IV", "V", "VI", "VII"];

export function chordLabel(chord: ChordJson): string {
  const numeral = ROMAN[(chord.root - 1) % 7] ?? "?";
  const suffix =
    chord.quality === "triad_diatonic"
      ? ""
      : chord.quality === "seventh_diatonic"
        ? "7"
        : `(${chord.quality})`;
  const inv = chord.inversion > 0 ? `/${chord.inversion}` : "";
  return numeral + suffix + inv;
}

export function midiToHz(pitch: number): number {
  return 440 * Math.pow(2, (pitch - 69) / 12);
}
