/** Editor state machine. Every user action maps to at most one API call:
 * Suggest -> POST suggest, Next -> POST next, Accept/Reject -> POST
 * feedback, note edits -> PUT sheet. Selection, capability choice, and
 * history navigation are local. */

import { ApiClient, ConflictError } from "./api.js";
import { snapSelection, type Selection } from "./grid.js";
import type { Capability, SheetJson, SuggestionJson } from "./types.js";
import { totalBeats } from "./types.js";

export type CapabilityChoice = "melody" | "harmony" | "both";

export type EditorStatus =
  | "empty" // no sheet loaded
  | "ready"
  | "busy" // request in flight
  | "no-suggestion" // decoder came back empty; invite retry
  | "conflict"; // sheet version conflict; reload needed

export interface EditorSnapshot {
  sheetId: string | null;
  version: number;
  sheet: SheetJson | null;
  selection: Selection | null;
  choice: CapabilityChoice;
  override: Capability | null;
  suggestion: SuggestionJson | null;
  historyLength: number;
  historyIndex: number;
  status: EditorStatus;
  error: string | null;
}

type Listener = (snap: EditorSnapshot) => void;

export class EditorStore {
  private sheetId: string | null = null;
  private version = 0;
  private sheet: SheetJson | null = null;
  private selection: Selection | null = null;
  private choice: CapabilityChoice = "both";
  private override: Capability | null = null;
  private history: SuggestionJson[] = [];
  private historyIndex = -1;
  private status: EditorStatus = "empty";
  private error: string | null = null;
  private listeners: Listener[] = [];
  readonly sessionSeed: number;

  constructor(
    private readonly api: ApiClient,
    sessionSeed?: number,
  ) {
    this.sessionSeed = sessionSeed ?? Math.floor(Math.random() * 2 ** 31);
  }

  // -- wiring ---------------------------------------------------------------

  subscribe(fn: Listener): () => void {
    this.listeners.push(fn);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== fn);
    };
  }

  snapshot(): EditorSnapshot {
    return {
      sheetId: this.sheetId,
      version: this.version,
      sheet: this.sheet,
      selection: this.selection,
      choice: this.choice,
      override: this.override,
      suggestion: this.current(),
      historyLength: this.history.length,
      historyIndex: this.historyIndex,
      status: this.status,
      error: this.error,
    };
  }

  private emit(): void {
    const snap = this.snapshot();
    for (const fn of this.listeners) fn(snap);
  }

  private current(): SuggestionJson | null {
    return this.history[this.historyIndex] ?? null;
  }

  // -- sheet lifecycle --------------------------------------------------------

  async createSheet(sheet: SheetJson): Promise<void> {
    const env = await this.api.createSheet(sheet);
    this.adoptSheet(env.id, env.version, env.sheet);
  }

  async loadSheet(id: string): Promise<void> {
    const env = await this.api.getSheet(id);
    this.adoptSheet(env.id, env.version, env.sheet);
  }

  private adoptSheet(id: string, version: number, sheet: SheetJson): void {
    this.sheetId = id;
    this.version = version;
    this.sheet = sheet;
    this.selection = null;
    this.clearCarousel();
    this.status = "ready";
    this.error = null;
    this.emit();
  }

  /** Explicit note edit; the only sheet mutation besides Accept. */
  async putSheet(updated: SheetJson): Promise<void> {
    if (!this.sheetId) throw new Error("no sheet loaded");
    try {
      const env = await this.api.putSheet(this.sheetId, updated, this.version);
      this.sheet = env.sheet;
      this.version = env.version;
      this.clearCarousel();
      this.status = "ready";
    } catch (e) {
      if (e instanceof ConflictError) {
        this.status = "conflict";
        this.error = e.message;
      } else throw e;
    }
    this.emit();
  }

  // -- selection & capability --------------------------------------------------

  select(rawStart: number, rawEnd: number): void {
    if (!this.sheet) return;
    this.selection = snapSelection(rawStart, rawEnd, totalBeats(this.sheet));
    this.clearCarousel();
    this.emit();
  }

  clearSelection(): void {
    this.selection = null;
    this.clearCarousel();
    this.emit();
  }

  setChoice(choice: CapabilityChoice): void {
    this.choice = choice;
    this.emit();
  }

  setOverride(cap: Capability | null): void {
    this.override = cap;
    this.emit();
  }

  /** Capability = explicit override, else inferred: melody-only writes
   * against given harmony, harmony-only harmonizes the given melody, and
   * "both" fills the middle unless the selection touches the song end. */
  capability(): Capability {
    if (this.override) return this.override;
    if (this.choice === "melody") return "harm_to_mel";
    if (this.choice === "harmony") return "mel_to_harm";
    if (this.sheet && this.selection && this.selection.endBeat >= totalBeats(this.sheet)) {
      return "left_to_right";
    }
    return "fill_in_middle";
  }

  canSuggest(): boolean {
    return this.sheet !== null && this.selection !== null && this.status !== "busy";
  }

  /** Accept is only offered while a suggestion is on screen. */
  canAccept(): boolean {
    return this.current() !== null && this.status !== "busy";
  }

  // -- carousel -----------------------------------------------------------------

  async suggest(): Promise<void> {
    if (!this.canSuggest() || !this.sheetId || !this.selection) return;
    this.status = "busy";
    this.emit();
    const resp = await this.api.suggest(
      this.sheetId,
      [this.selection.startBeat, this.selection.endBeat],
      this.capability(),
      this.sessionSeed,
    );
    if (!resp.suggestion) {
      this.status = "no-suggestion";
      this.error = resp.detail ?? "no suggestion, try again";
    } else {
      this.history = [resp.suggestion];
      this.historyIndex = 0;
      this.status = "ready";
      this.error = null;
    }
    this.emit();
  }

  async next(): Promise<void> {
    const cur = this.current();
    if (!cur || this.status === "busy") return;
    this.status = "busy";
    this.emit();
    const resp = await this.api.nextAlternative(cur.suggestion_id);
    if (!resp.suggestion) {
      this.status = "no-suggestion";
      this.error = resp.detail ?? "no suggestion, try again";
    } else {
      // continue the stream from wherever the user was auditioning
      this.history = [...this.history.slice(0, this.historyIndex + 1), resp.suggestion];
      this.historyIndex = this.history.length - 1;
      this.status = "ready";
      this.error = null;
    }
    this.emit();
  }

  /** Local history navigation; no API traffic. */
  back(): void {
    if (this.historyIndex > 0) {
      this.historyIndex -= 1;
      this.emit();
    }
  }

  forward(): void {
    if (this.historyIndex < this.history.length - 1) {
      this.historyIndex += 1;
      this.emit();
    }
  }

  async accept(): Promise<void> {
    const cur = this.current();
    if (!cur || !this.canAccept()) return;
    this.status = "busy";
    this.emit();
    try {
      const resp = await this.api.accept(cur.suggestion_id);
      this.sheet = resp.sheet; // the ghost notes become permanent
      this.version = resp.version;
      this.clearCarousel();
      this.status = "ready";
      this.error = null;
    } catch (e) {
      if (e instanceof ConflictError) {
        this.status = "conflict";
        this.error = e.message;
      } else throw e;
    }
    this.emit();
  }

  async reject(): Promise<void> {
    const cur = this.current();
    if (!cur || this.status === "busy") return;
    this.status = "busy";
    this.emit();
    await this.api.reject(cur.suggestion_id);
    this.clearCarousel(); // the sheet itself is untouched
    this.status = "ready";
    this.error = null;
    this.emit();
  }

  private clearCarousel(): void {
    this.history = [];
    this.historyIndex = -1;
  }
}
