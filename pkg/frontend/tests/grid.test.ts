/** Pure-logic tests: beat snapping, grid/ghost modeling, pitch realization,
 * and the store's capability inference + accept gating (stub API). */

import { describe, expect, it } from "vitest";
import { ApiClient } from "../src/api.js";
import { containsSuggestion, dragToSelection, gridModel, snapSelection } from "../src/grid.js";
import { EditorStore } from "../src/store.js";
import { chordLabel, chordPitches, melodyPitch, midiToHz } from "../src/theory.js";
import type { SheetJson, SuggestionJson } from "../src/types.js";
import { totalBeats } from "../src/types.js";

const SHEET: SheetJson = {
  key: 0,
  mode: "major",
  meter: "4/4",
  bpm: 120,
  measures: 8, // 32 beats
  melody: [
    { onset: 0, duration: 2, degree: 1, octave: 4, alteration: 0 },
    { onset: 2, duration: 2, degree: 3, octave: 4, alteration: 0 },
  ],
  harmony: [{ onset: 0, duration: 4, root: 1, quality: "triad_diatonic", inversion: 0 }],
};

describe("snapSelection", () => {
  it("snaps a drag across two 4/4 measures to 8 whole beats", () => {
    // drag from a bit into beat 0 to a bit before beat 8
    expect(snapSelection(0.2, 7.9, 32)).toEqual({ startBeat: 0, endBeat: 8 });
  });

  it("orders reversed drags", () => {
    expect(snapSelection(7.9, 0.2, 32)).toEqual({ startBeat: 0, endBeat: 8 });
  });

  it("clamps to the song and keeps at least one beat", () => {
    expect(snapSelection(30.5, 40, 32)).toEqual({ startBeat: 30, endBeat: 32 });
    expect(snapSelection(5.4, 5.6, 32)).toEqual({ startBeat: 5, endBeat: 6 });
    expect(snapSelection(-3, -1, 32)).toEqual({ startBeat: 0, endBeat: 1 });
  });

  it("rejects drags entirely past the end", () => {
    expect(snapSelection(33, 35, 32)).toBeNull();
  });

  it("converts pixels at the grid scale", () => {
    // 48 px/beat: dragging 2 measures of 4/4 is 384 px
    expect(dragToSelection(10, 380, 48, 32)).toEqual({ startBeat: 0, endBeat: 8 });
  });
});

describe("pitch realization", () => {
  it("realizes C-major scale degrees", () => {
    const degrees = [1, 2, 3, 4, 5, 6, 7].map((degree) =>
      melodyPitch(SHEET, { onset: 0, duration: 1, degree, octave: 4, alteration: 0 }),
    );
    expect(degrees).toEqual([60, 62, 64, 65, 67, 69, 71]);
  });

  it("applies key, octave, and alteration", () => {
    const dSheet = { ...SHEET, key: 2 };
    expect(melodyPitch(dSheet, { onset: 0, duration: 1, degree: 1, octave: 3, alteration: 1 })).toBe(
      51, // D3 + sharp
    );
  });

  it("stacks diatonic triads with the root folded below middle C", () => {
    expect(
      chordPitches(SHEET, { onset: 0, duration: 4, root: 1, quality: "triad_diatonic", inversion: 0 }),
    ).toEqual([48, 52, 55]); // C3 E3 G3
    expect(
      chordPitches(SHEET, { onset: 0, duration: 4, root: 5, quality: "seventh_diatonic", inversion: 0 }),
    ).toEqual([55, 59, 62, 65]); // G3 B3 D4 F4
  });

  it("rotates inversions upward", () => {
    expect(
      chordPitches(SHEET, { onset: 0, duration: 4, root: 1, quality: "triad_diatonic", inversion: 1 }),
    ).toEqual([52, 55, 60]);
  });

  it("labels chords with roman numerals", () => {
    expect(chordLabel({ onset: 0, duration: 4, root: 4, quality: "triad_diatonic", inversion: 0 })).toBe(
      "IV",
    );
    expect(
      chordLabel({ onset: 0, duration: 4, root: 5, quality: "seventh_diatonic", inversion: 1 }),
    ).toBe("V7/1");
  });

  it("tunes A4 to 440", () => {
    expect(midiToHz(69)).toBeCloseTo(440, 9);
  });
});

describe("gridModel", () => {
  const suggestion: SuggestionJson = {
    suggestion_id: "s1",
    sheet_id: "x",
    sheet_version: 1,
    capability: "fill_in_middle",
    span_beats: [4, 8],
    alternative_index: 0,
    model_version: "test",
    melody: [{ onset: 4, duration: 1, degree: 5, octave: 4, alteration: 0 }],
    harmony: [{ onset: 4, duration: 4, root: 5, quality: "triad_diatonic", inversion: 0 }],
  };

  it("renders sheet notes solid and suggestion notes as ghosts", () => {
    const model = gridModel(SHEET, suggestion);
    expect(model.songBeats).toBe(32);
    expect(model.melody.filter((c) => !c.ghost)).toHaveLength(2);
    expect(model.melody.filter((c) => c.ghost)).toHaveLength(1);
    expect(model.harmony.filter((c) => c.ghost)).toHaveLength(1);
    expect(containsSuggestion(model, suggestion)).toBe(false); // still ghosts
  });

  it("reports the suggestion present once its notes are in the sheet", () => {
    const accepted: SheetJson = {
      ...SHEET,
      melody: [...SHEET.melody, ...suggestion.melody],
      harmony: [...SHEET.harmony, ...suggestion.harmony],
    };
    expect(containsSuggestion(gridModel(accepted, null), suggestion)).toBe(true);
  });
});

describe("capability inference", () => {
  function storeWith(sheet: SheetJson): EditorStore {
    const api = new ApiClient("http://unused", { fetchImpl: () => Promise.reject(new Error("no")) });
    const store = new EditorStore(api, 1);
    // reach in: adoptSheet is private, so emulate a loaded sheet via snapshot surgery
    interface Raw {
      sheet: SheetJson | null;
      status: string;
    }
    (store as unknown as Raw).sheet = sheet;
    (store as unknown as Raw).status = "ready";
    return store;
  }

  it("melody-only writing asks for melody against the given harmony", () => {
    const store = storeWith(SHEET);
    store.setChoice("melody");
    expect(store.capability()).toBe("harm_to_mel");
  });

  it("harmony-only writing harmonizes the given melody", () => {
    const store = storeWith(SHEET);
    store.setChoice("harmony");
    expect(store.capability()).toBe("mel_to_harm");
  });

  it("both mid-song fills the middle; both at the song end continues", () => {
    const store = storeWith(SHEET);
    store.setChoice("both");
    store.select(4, 8);
    expect(store.capability()).toBe("fill_in_middle");
    store.select(28, totalBeats(SHEET));
    expect(store.capability()).toBe("left_to_right");
  });

  it("an explicit override wins", () => {
    const store = storeWith(SHEET);
    store.setChoice("melody");
    store.setOverride("left_to_right");
    expect(store.capability()).toBe("left_to_right");
    store.setOverride(null);
    expect(store.capability()).toBe("harm_to_mel");
  });

  it("accept is only enabled while a suggestion is displayed", () => {
    const store = storeWith(SHEET);
    expect(store.canAccept()).toBe(false);
    store.select(4, 8);
    expect(store.canAccept()).toBe(false); // selection alone is not enough
  });
});
