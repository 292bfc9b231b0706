/** Beat-grid math and the render model: everything the grid shows is
 * computed here as plain data so it can be asserted without a DOM. */

import { melodyPitch, chordLabel } from "./theory.js";
import type { SheetJson, SuggestionJson } from "./types.js";
import { totalBeats } from "./types.js";

export interface Selection {
  startBeat: number;
  endBeat: number;
}

/** Snap a raw drag range onto whole beats, clamped to the song. */
export function snapSelection(
  rawStart: number,
  rawEnd: number,
  songBeats: number,
): Selection | null {
  const lo = Math.min(rawStart, rawEnd);
  const hi = Math.max(rawStart, rawEnd);
  let startBeat = Math.max(0, Math.floor(lo + 1e-9));
  let endBeat = Math.min(songBeats, Math.ceil(hi - 1e-9));
  if (endBeat <= startBeat) endBeat = Math.min(songBeats, startBeat + 1);
  if (startBeat >= songBeats) return null;
  return { startBeat, endBeat };
}

/** Pixel-space drag to a beat selection. */
export function dragToSelection(
  x0: number,
  x1: number,
  pxPerBeat: number,
  songBeats: number,
): Selection | null {
  return snapSelection(x0 / pxPerBeat, x1 / pxPerBeat, songBeats);
}

export interface Cell {
  beat: number;
  duration: number;
  row: number; // higher = visually higher pitch
  label: string;
  ghost: boolean; // suggestion overlay, not yet accepted
}

export interface GridModel {
  songBeats: number;
  melody: Cell[];
  harmony: Cell[];
  pitchRange: [number, number];
}

const NOTE_NAMES = ["C", "C#", "D", "D#", "E", "F", "F#", "G", "G#", "A", "A#", "B"];

function pitchLabel(pitch: number): string {
  return `${NOTE_NAMES[pitch % 12]}${Math.floor(pitch / 12) - 1}`;
}

/** Flatten the sheet (and an optional suggestion as ghost cells) into the
 * piano-roll model. Accepted suggestions arrive back through the sheet, so
 * their cells automatically stop being ghosts. */
export function gridModel(sheet: SheetJson, suggestion: SuggestionJson | null): GridModel {
  const melody: Cell[] = [];
  const harmony: Cell[] = [];
  let lowest = Infinity;
  let highest = -Infinity;

  const pushMelody = (notes: SheetJson["melody"], ghost: boolean) => {
    for (const n of notes) {
      const pitch = melodyPitch(sheet, n);
      lowest = Math.min(lowest, pitch);
      highest = Math.max(highest, pitch);
      melody.push({ beat: n.onset, duration: n.duration, row: pitch, label: pitchLabel(pitch), ghost });
    }
  };
  const pushHarmony = (chords: SheetJson["harmony"], ghost: boolean) => {
    for (const c of chords) {
      harmony.push({ beat: c.onset, duration: c.duration, row: c.root, label: chordLabel(c), ghost });
    }
  };

  pushMelody(sheet.melody, false);
  pushHarmony(sheet.harmony, false);
  if (suggestion) {
    pushMelody(suggestion.melody, true);
    pushHarmony(suggestion.harmony, true);
  }
  melody.sort((a, b) => a.beat - b.beat || a.row - b.row);
  harmony.sort((a, b) => a.beat - b.beat || a.row - b.row);
  return {
    songBeats: totalBeats(sheet),
    melody,
    harmony,
    pitchRange: melody.length ? [lowest, highest] : [60, 72],
  };
}

/** True when every one of the suggestion's notes shows as a permanent
 * (non-ghost) cell — i.e. the accept landed in the sheet. */
export function containsSuggestion(model: GridModel, suggestion: SuggestionJson): boolean {
  const solidMelody = model.melody.filter((c) => !c.ghost);
  const solidHarmony = model.harmony.filter((c) => !c.ghost);
  const hasCell = (cells: Cell[], beat: number, duration: number) =>
    cells.some((c) => Math.abs(c.beat - beat) < 1e-9 && Math.abs(c.duration - duration) < 1e-9);
  return (
    suggestion.melody.every((n) => hasCell(solidMelody, n.onset, n.duration)) &&
    suggestion.harmony.every((c) => hasCell(solidHarmony, c.onset, c.duration))
  );
}
