/** Browser entry point: a piano-roll grid with drag selection, a suggestion
 * carousel (Suggest / Back / Next / Accept / Reject), capability picker, and
 * local audition playback. Talks to the suggestion service and nothing else. */

import { ApiClient } from "./api.js";
import { dragToSelection, gridModel, type GridModel } from "./grid.js";
import { createPlayer, type Player } from "./playback.js";
import { EditorStore, type EditorSnapshot } from "./store.js";
import { chordLabel } from "./theory.js";
import type { Capability, SheetJson } from "./types.js";
import { beatsPerMeasure, totalBeats } from "./types.js";

const PX_PER_BEAT = 48;
const ROW_PX = 14;

const DEMO_SHEET: SheetJson = {
  key: 0,
  mode: "major",
  meter: "4/4",
  bpm: 96,
  measures: 8,
  melody: [
    { onset: 0, duration: 1, degree: 1, octave: 4, alteration: 0 },
    { onset: 1, duration: 1, degree: 2, octave: 4, alteration: 0 },
    { onset: 2, duration: 2, degree: 3, octave: 4, alteration: 0 },
    { onset: 4, duration: 1, degree: 5, octave: 4, alteration: 0 },
    { onset: 5, duration: 3, degree: 4, octave: 4, alteration: 0 },
  ],
  harmony: [
    { onset: 0, duration: 4, root: 1, quality: "major", inversion: 0 },
    { onset: 4, duration: 4, root: 4, quality: "major", inversion: 0 },
  ],
};

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  cls?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (cls) node.className = cls;
  if (text !== undefined) node.textContent = text;
  return node;
}

class App {
  private readonly store: EditorStore;
  private readonly player: Player | null;
  private toolbar!: HTMLElement;
  private banner!: HTMLElement;
  private gridHost!: HTMLElement;
  private statusLine!: HTMLElement;
  private dragAnchor: number | null = null;

  constructor(baseUrl: string) {
    const api = new ApiClient(baseUrl);
    this.store = new EditorStore(api);
    this.player = createPlayer();
  }

  mount(root: HTMLElement): void {
    this.toolbar = el("div", "toolbar");
    this.banner = el("div", "banner hidden");
    this.gridHost = el("div", "grid-host");
    this.statusLine = el("div", "status");
    root.append(this.toolbar, this.banner, this.gridHost, this.statusLine);
    this.store.subscribe((snap) => this.render(snap));
    void this.store.createSheet(DEMO_SHEET).catch((e: unknown) => {
      this.banner.textContent = `service unreachable: ${String(e)}`;
      this.banner.className = "banner error";
    });
    this.render(this.store.snapshot());
  }

  // -- toolbar ---------------------------------------------------------------

  private buildToolbar(snap: EditorSnapshot): void {
    this.toolbar.replaceChildren();

    const choice = el("select");
    for (const opt of ["both", "melody", "harmony"] as const) {
      const o = el("option", undefined, `write: ${opt}`);
      o.value = opt;
      choice.append(o);
    }
    choice.value = snap.choice;
    choice.onchange = () => this.store.setChoice(choice.value as "melody" | "harmony" | "both");

    const override = el("select");
    const auto = el("option", undefined, `mode: auto (${this.store.capability()})`);
    auto.value = "";
    override.append(auto);
    for (const cap of ["left_to_right", "fill_in_middle", "harm_to_mel", "mel_to_harm"] as const) {
      const o = el("option", undefined, `mode: ${cap}`);
      o.value = cap;
      override.append(o);
    }
    override.value = snap.override ?? "";
    override.onchange = () =>
      this.store.setOverride(override.value === "" ? null : (override.value as Capability));

    const btn = (label: string, enabled: boolean, fn: () => void): HTMLButtonElement => {
      const b = el("button", undefined, label);
      b.disabled = !enabled;
      b.onclick = fn;
      return b;
    };

    const busy = snap.status === "busy";
    this.toolbar.append(
      choice,
      override,
      btn("Suggest", this.store.canSuggest(), () => void this.store.suggest()),
      btn("◀ Back", snap.historyIndex > 0, () => this.store.back()),
      btn("Fwd ▶", snap.historyIndex < snap.historyLength - 1, () => this.store.forward()),
      btn("Next", snap.suggestion !== null && !busy, () => void this.store.next()),
      btn("Accept", this.store.canAccept(), () => void this.store.accept()),
      btn("Reject", snap.suggestion !== null && !busy, () => void this.store.reject()),
      btn("Play", snap.sheet !== null && this.player !== null, () => {
        if (snap.sheet && this.player) this.player.play(snap.sheet, snap.suggestion);
      }),
    );
  }

  // -- grid --------------------------------------------------------------------

  private buildGrid(snap: EditorSnapshot): void {
    this.gridHost.replaceChildren();
    if (!snap.sheet) return;
    const model: GridModel = gridModel(snap.sheet, snap.suggestion);
    const beats = model.songBeats;
    const bpm = beatsPerMeasure(snap.sheet);
    const [lowPitch, highPitch] = model.pitchRange;
    const melodyRows = highPitch - lowPitch + 1;
    const harmonyTop = melodyRows * ROW_PX + 12;

    const surface = el("div", "grid-surface");
    surface.style.width = `${beats * PX_PER_BEAT}px`;
    surface.style.height = `${harmonyTop + 2 * ROW_PX + 12}px`;

    for (let b = 0; b <= beats; b++) {
      const line = el("div", b % bpm === 0 ? "beat-line bar" : "beat-line");
      line.style.left = `${b * PX_PER_BEAT}px`;
      surface.append(line);
    }

    if (snap.selection) {
      const sel = el("div", "selection");
      sel.style.left = `${snap.selection.startBeat * PX_PER_BEAT}px`;
      sel.style.width = `${(snap.selection.endBeat - snap.selection.startBeat) * PX_PER_BEAT}px`;
      surface.append(sel);
    }

    for (const cell of model.melody) {
      const div = el("div", `cell melody ${cell.ghost ? "ghost" : ""}`);
      div.style.left = `${cell.beat * PX_PER_BEAT}px`;
      div.style.width = `${Math.max(6, cell.duration * PX_PER_BEAT - 2)}px`;
      div.style.top = `${(highPitch - cell.row) * ROW_PX}px`;
      div.title = cell.label;
      surface.append(div);
    }
    for (const cell of model.harmony) {
      const div = el("div", `cell harmony ${cell.ghost ? "ghost" : ""}`, cell.label);
      div.style.left = `${cell.beat * PX_PER_BEAT}px`;
      div.style.width = `${Math.max(6, cell.duration * PX_PER_BEAT - 2)}px`;
      div.style.top = `${harmonyTop}px`;
      div.title = cell.label;
      surface.append(div);
    }

    surface.onpointerdown = (ev) => {
      const rect = surface.getBoundingClientRect();
      this.dragAnchor = ev.clientX - rect.left;
      surface.setPointerCapture(ev.pointerId);
    };
    surface.onpointerup = (ev) => {
      if (this.dragAnchor === null || !snap.sheet) return;
      const rect = surface.getBoundingClientRect();
      const x1 = ev.clientX - rect.left;
      const sel = dragToSelection(this.dragAnchor, x1, PX_PER_BEAT, totalBeats(snap.sheet));
      this.dragAnchor = null;
      if (sel) this.store.select(sel.startBeat, sel.endBeat);
      else this.store.clearSelection();
    };

    this.gridHost.append(surface);
  }

  // -- render ------------------------------------------------------------------

  private render(snap: EditorSnapshot): void {
    this.buildToolbar(snap);
    this.buildGrid(snap);

    if (snap.status === "conflict") {
      this.banner.textContent = `sheet changed elsewhere (${snap.error ?? "version conflict"}) — reload to continue`;
      this.banner.className = "banner error";
      const reload = el("button", undefined, "Reload sheet");
      reload.onclick = () => {
        if (snap.sheetId) void this.store.loadSheet(snap.sheetId);
      };
      this.banner.append(" ", reload);
    } else if (snap.status === "no-suggestion") {
      this.banner.textContent = "no suggestion, try again";
      this.banner.className = "banner warn";
    } else {
      this.banner.className = "banner hidden";
      this.banner.textContent = "";
    }

    const bits: string[] = [];
    if (snap.sheet) bits.push(`sheet ${snap.sheetId ?? "?"} v${snap.version}`);
    if (snap.selection) {
      bits.push(`beats [${snap.selection.startBeat}, ${snap.selection.endBeat})`);
      bits.push(`capability ${this.store.capability()}`);
    } else {
      bits.push("drag across the grid to select a span");
    }
    if (snap.suggestion) {
      const s = snap.suggestion;
      const labels = s.harmony.map((c) => chordLabel(c)).join(" ");
      bits.push(
        `alt ${s.alternative_index + 1} of ${snap.historyLength}: ` +
          `${s.melody.length} notes, ${s.harmony.length} chords ${labels}`.trimEnd(),
      );
    }
    this.statusLine.textContent = bits.join(" · ");
  }
}

if (typeof document !== "undefined") {
  const root = document.getElementById("app");
  if (root) {
    const base = (document.body.dataset["service"] ?? "http://127.0.0.1:8643").replace(/\/$/, "");
    new App(base).mount(root);
  }
}
