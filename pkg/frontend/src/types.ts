/** JSON shapes exchanged with the suggestion service. */

export type Capability =
  | "left_to_right"
  | "fill_in_middle"
  | "harm_to_mel"
  | "mel_to_harm";

export type Mode = "major" | "minor";

export type ChordQualityName =
  | "triad_diatonic"
  | "seventh_diatonic"
  | "major"
  | "minor"
  | "diminished"
  | "augmented"
  | "dominant7";

export interface NoteJson {
  onset: number; // beats
  duration: number; // beats
  degree: number; // 1..7
  octave: number;
  alteration: number; // -1 | 0 | +1
}

export interface ChordJson {
  onset: number;
  duration: number;
  root: number; // scale degree 1..7
  quality: ChordQualityName;
  inversion: number;
}

export interface SheetJson {
  key: number; // tonic pitch class 0..11
  mode: Mode;
  meter: string; // e.g. "4/4"
  bpm: number;
  measures: number;
  melody: NoteJson[];
  harmony: ChordJson[];
}

export interface SheetEnvelope {
  id: string;
  version: number;
  sheet: SheetJson;
  document?: string;
}

export interface SuggestionJson {
  suggestion_id: string;
  sheet_id: string;
  sheet_version: number;
  capability: Capability;
  span_beats: [number, number];
  alternative_index: number;
  model_version: string;
  melody: NoteJson[];
  harmony: ChordJson[];
}

export interface SuggestResponse {
  suggestion: SuggestionJson | null;
  stalled: boolean;
  detail?: string;
}

export interface AcceptResponse {
  outcome: "accepted";
  sheet_id: string;
  version: number;
  sheet: SheetJson;
}

export interface RejectResponse {
  outcome: "rejected";
}

export interface Policy {
  temperature?: number;
  top_p?: number;
}

export function beatsPerMeasure(sheet: SheetJson): number {
  const beats = Number(sheet.meter.split("/")[0]);
  if (!Number.isFinite(beats) || beats <= 0) throw new Error(`bad meter ${sheet.meter}`);
  return beats;
}

export function totalBeats(sheet: SheetJson): number {
  return sheet.measures * beatsPerMeasure(sheet);
}
