export type Vec3 = [number, number, number];

export interface Latent {
  positions: Vec3[];
  features: number[][];
}

export interface Cloud {
  positions: Vec3[];
  normals: Vec3[];
}

export interface ShapeRecord {
  id: string;
  seed: number | null;
  provenance: string;
  latent: Latent;
  cloud: Cloud;
}

export type EditMode = "resample_all" | "resample_moved" | "keep_features";

export interface HealthInfo {
  status: string;
  model_config: {
    n_points: number;
    n_latent: number;
    feature_dim: number;
    T: number;
  };
}
