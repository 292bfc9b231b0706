/** Client-side audition synth. Renders melody as a plucked triangle lead
 * and chords as a soft pad straight through WebAudio — nothing leaves the
 * browser. In non-browser runtimes (tests) createPlayer returns null. */

import { chordPitches, melodyPitch, midiToHz } from "./theory.js";
import type { SheetJson, SuggestionJson } from "./types.js";

export interface Player {
  /** Play the sheet plus an optional ghost suggestion overlaid. Returns the
   * total duration in seconds. */
  play(sheet: SheetJson, suggestion?: SuggestionJson | null): number;
  stop(): void;
  readonly playing: boolean;
}

type AudioContextCtor = new () => AudioContext;

function audioContextCtor(): AudioContextCtor | null {
  const g = globalThis as Record<string, unknown>;
  const ctor = g["AudioContext"] ?? g["webkitAudioContext"];
  return typeof ctor === "function" ? (ctor as AudioContextCtor) : null;
}

export function createPlayer(): Player | null {
  const Ctor = audioContextCtor();
  if (!Ctor) return null;
  return new WebAudioPlayer(new Ctor());
}

class WebAudioPlayer implements Player {
  private active: { osc: OscillatorNode; gain: GainNode }[] = [];
  playing = false;

  constructor(private readonly ctx: AudioContext) {}

  play(sheet: SheetJson, suggestion?: SuggestionJson | null): number {
    this.stop();
    void this.ctx.resume();
    const secPerBeat = 60 / sheet.bpm;
    const t0 = this.ctx.currentTime + 0.05;
    let end = 0;

    const melody = [...sheet.melody, ...(suggestion?.melody ?? [])];
    const harmony = [...sheet.harmony, ...(suggestion?.harmony ?? [])];

    for (const note of melody) {
      const at = t0 + note.onset * secPerBeat;
      const dur = Math.max(0.05, note.duration * secPerBeat);
      this.voice(midiToHz(melodyPitch(sheet, note)), at, dur, "triangle", 0.22);
      end = Math.max(end, note.onset * secPerBeat + dur);
    }
    for (const chord of harmony) {
      const at = t0 + chord.onset * secPerBeat;
      const dur = Math.max(0.05, chord.duration * secPerBeat);
      for (const midi of chordPitches(sheet, chord)) {
        this.voice(midiToHz(midi), at, dur, "sine", 0.08);
      }
      end = Math.max(end, chord.onset * secPerBeat + dur);
    }

    this.playing = true;
    const ms = (end + 0.3) * 1000;
    setTimeout(() => {
      this.playing = false;
    }, ms);
    return end;
  }

  stop(): void {
    for (const { osc, gain } of this.active) {
      try {
        gain.gain.cancelScheduledValues(this.ctx.currentTime);
        gain.gain.setValueAtTime(0, this.ctx.currentTime);
        osc.stop();
      } catch {
        // already stopped
      }
    }
    this.active = [];
    this.playing = false;
  }

  private voice(hz: number, at: number, dur: number, type: OscillatorType, peak: number): void {
    const osc = this.ctx.createOscillator();
    const gain = this.ctx.createGain();
    osc.type = type;
    osc.frequency.value = hz;
    // quick attack, exponential-ish release so held chords don't click
    gain.gain.setValueAtTime(0, at);
    gain.gain.linearRampToValueAtTime(peak, at + 0.015);
    gain.gain.setValueAtTime(peak, at + dur * 0.7);
    gain.gain.linearRampToValueAtTime(0.0001, at + dur);
    osc.connect(gain).connect(this.ctx.destination);
    osc.start(at);
    osc.stop(at + dur + 0.05);
    this.active.push({ osc, gain });
  }
}
