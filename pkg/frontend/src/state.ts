// Editor session state: current shape, per-point flags, pending drags,
// an append-only undo stack of shape ids, and the seed log that makes a
// session replayable. Pure data + transitions; no rendering, no fetch.

import type { EditMode, ShapeRecord, Vec3 } from "./types";

export interface SeedLogEntry {
  action: "generate" | "edit";
  seed: number;
  resultId: string;
}

export class EditorState {
  current: ShapeRecord | null = null;
  selection = new Set<number>();
  movedFlags: boolean[] = [];
  dragDeltas = new Map<number, Vec3>();
  mode: EditMode = "resample_moved";
  interpolationPair: [string, string] | null = null;
  interpolationS = 0.5;
  undoStack: string[] = [];
  records = new Map<string, ShapeRecord>();
  seedLog: SeedLogEntry[] = [];
  pendingRequest = false;

  get latentCount(): number {
    return this.current?.latent.positions.length ?? 0;
  }

  loadShape(record: ShapeRecord, opts: { pushUndo?: boolean } = {}): void {
    this.records.set(record.id, record);
    if (this.current && (opts.pushUndo ?? true)) {
      this.undoStack.push(this.current.id);
    }
    this.current = record;
    this.movedFlags = new Array(record.latent.positions.length).fill(false);
    this.dragDeltas.clear();
    this.selection.clear();
  }

  toggleMoved(index: number): void {
    if (index < 0 || index >= this.movedFlags.length) return;
    this.movedFlags[index] = !this.movedFlags[index];
  }

  applyDrag(index: number, delta: Vec3): void {
    const prev = this.dragDeltas.get(index) ?? [0, 0, 0];
    this.dragDeltas.set(index, [prev[0] + delta[0], prev[1] + delta[1], prev[2] + delta[2]]);
    // dragging a point marks it moved; features there must be regenerated
    this.movedFlags[index] = true;
  }

  /** Latent with pending drags applied; deltas touch positions only. */
  pendingLatent(): { positions: Vec3[]; features: number[][] } {
    if (!this.current) throw new Error("no shape loaded");
    const positions = this.current.latent.positions.map((p, i) => {
      const d = this.dragDeltas.get(i);
      return (d ? [p[0] + d[0], p[1] + d[1], p[2] + d[2]] : [...p]) as Vec3;
    });
    return { positions, features: this.current.latent.features.map((f) => [...f]) };
  }

  hasPendingDrags(): boolean {
    return this.dragDeltas.size > 0;
  }

  recordSeed(action: "generate" | "edit", seed: number, resultId: string): void {
    this.seedLog.push({ action, seed, resultId });
  }

  undo(): ShapeRecord | null {
    const id = this.undoStack.pop();
    if (id === undefined) return null;
    const record = this.records.get(id);
    if (!record) return null;
    this.current = record;
    this.movedFlags = new Array(record.latent.positions.length).fill(false);
    this.dragDeltas.clear();
    this.selection.clear();
    return record;
  }
}
