// Orchestrates state transitions against the API: regenerate, interpolate,
// combine, undo. One in-flight regenerate at a time; failures revert any
// optimistic preview and surface a banner message.

import { ApiClient, ApiError } from "./api";
import { EditorState } from "./state";
import type { ShapeRecord } from "./types";

export class Controller {
  onError: (message: string) => void = () => {};
  onShape: (record: ShapeRecord) => void = () => {};

  constructor(
    public api: ApiClient,
    public state: EditorState,
  ) {}

  private freshSeed(): number {
    return Math.floor(Math.random() * 2 ** 31);
  }

  async generate(seed?: number): Promise<ShapeRecord | null> {
    const s = seed ?? this.freshSeed();
    try {
      const [record] = await this.api.generate(1, s);
      this.state.loadShape(record);
      this.state.recordSeed("generate", record.seed ?? s, record.id);
      this.onShape(record);
      return record;
    } catch (e) {
      this.onError(e instanceof ApiError ? e.message : String(e));
      return null;
    }
  }

  /** Send the pending latent with the chosen mode; appends to the undo stack. */
  async regenerate(seed?: number): Promise<ShapeRecord | null> {
    const state = this.state;
    if (!state.current || state.pendingRequest) return null;
    const s = seed ?? this.freshSeed();
    const latent = state.pendingLatent();
    state.pendingRequest = true;
    try {
      const record = await this.api.edit({
        latent,
        movedMask: [...state.movedFlags],
        mode: state.mode,
        seed: s,
      });
      state.loadShape(record);
      state.recordSeed("edit", record.seed ?? s, record.id);
      this.onShape(record);
      return record;
    } catch (e) {
      // revert: the optimistic drag preview stays local; dropping the deltas
      // restores the authoritative server shape
      state.dragDeltas.clear();
      this.onError(e instanceof ApiError ? e.message : String(e));
      return null;
    } finally {
      state.pendingRequest = false;
    }
  }

  async interpolate(steps: number, mask?: boolean[]): Promise<ShapeRecord[]> {
    const pair = this.state.interpolationPair;
    if (!pair) return [];
    try {
      const records = await this.api.interpolate(pair[0], pair[1], steps, mask);
      for (const r of records) this.state.records.set(r.id, r);
      return records;
    } catch (e) {
      this.onError(e instanceof ApiError ? e.message : String(e));
      return [];
    }
  }

  async combine(parts: { id: string; indices: number[] }[]): Promise<ShapeRecord | null> {
    try {
      const record = await this.api.combine(parts);
      this.state.loadShape(record);
      this.onShape(record);
      return record;
    } catch (e) {
      this.onError(e instanceof ApiError ? e.message : String(e));
      return null;
    }
  }

  undo(): ShapeRecord | null {
    const record = this.state.undo();
    if (record) this.onShape(record);
    return record;
  }
}
