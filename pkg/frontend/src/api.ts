// Typed client for the shape service. All generation happens server-side;
// the editor never computes geometry locally.

import type { Cloud, EditMode, HealthInfo, Latent, ShapeRecord, Vec3 } from "./types";

export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

function isVec3Array(x: unknown): x is Vec3[] {
  return (
    Array.isArray(x) &&
    x.every((row) => Array.isArray(row) && row.length === 3 && row.every((v) => typeof v === "number"))
  );
}

function decodeLatent(raw: any): Latent {
  if (!raw || !isVec3Array(raw.positions) || !Array.isArray(raw.features)) {
    throw new ApiError(0, "malformed latent payload");
  }
  return { positions: raw.positions, features: raw.features };
}

function decodeCloud(raw: any): Cloud {
  if (!raw || !isVec3Array(raw.positions) || !isVec3Array(raw.normals)) {
    throw new ApiError(0, "malformed cloud payload");
  }
  return { positions: raw.positions, normals: raw.normals };
}

export function decodeRecord(raw: any): ShapeRecord {
  if (!raw || typeof raw.id !== "string" || typeof raw.provenance !== "string") {
    throw new ApiError(0, "malformed shape record");
  }
  return {
    id: raw.id,
    seed: raw.seed ?? null,
    provenance: raw.provenance,
    latent: decodeLatent(raw.latent),
    cloud: decodeCloud(raw.cloud),
  };
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  private async post(path: string, body: unknown): Promise<any> {
    const res = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    const payload = await res.json().catch(() => ({}));
    if (!res.ok) {
      throw new ApiError(res.status, payload.error ?? `request failed (${res.status})`);
    }
    return payload;
  }

  async health(): Promise<HealthInfo> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/health`);
    if (!res.ok) throw new ApiError(res.status, "health check failed");
    return (await res.json()) as HealthInfo;
  }

  async generate(count: number, seed?: number): Promise<ShapeRecord[]> {
    const raw = await this.post("/v1/generate", { count, seed });
    return (raw as any[]).map(decodeRecord);
  }

  async edit(args: {
    id?: string;
    latent?: Latent;
    movedMask: boolean[];
    mode: EditMode;
    seed?: number;
  }): Promise<ShapeRecord> {
    const raw = await this.post("/v1/edit", {
      id: args.id,
      latent: args.latent,
      moved_mask: args.movedMask,
      mode: args.mode,
      seed: args.seed,
    });
    return decodeRecord(raw);
  }

  async interpolate(idA: string, idB: string, steps: number, mask?: boolean[]): Promise<ShapeRecord[]> {
    const raw = await this.post("/v1/interpolate", { id_a: idA, id_b: idB, steps, mask });
    return (raw as any[]).map(decodeRecord);
  }

  async combine(parts: { id: string; indices: number[] }[]): Promise<ShapeRecord> {
    const raw = await this.post("/v1/combine", { parts });
    return decodeRecord(raw);
  }

  async getShape(id: string): Promise<ShapeRecord> {
    const res = await this.fetchFn(`${this.baseUrl}/v1/shapes/${id}`);
    const payload = await res.json().catch(() => ({}));
    if (!res.ok) throw new ApiError(res.status, payload.error ?? "not found");
    return decodeRecord(payload);
  }
}
