import { ApiClient } from "./api";
import { Controller } from "./controller";
import { EditorState } from "./state";
import { Viewer } from "./viewer";
import type { EditMode } from "./types";

const baseUrl = (import.meta as any).env?.VITE_API_URL ?? "http://127.0.0.1:8008";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function setup(): void {
  const state = new EditorState();
  const api = new ApiClient(baseUrl);
  const controller = new Controller(api, state);
  const viewer = new Viewer(el("viewport"), state);
  const banner = el<HTMLDivElement>("banner");
  const seedLog = el<HTMLPreElement>("seed-log");

  controller.onError = (message) => {
    banner.textContent = message;
    banner.classList.add("visible");
    setTimeout(() => banner.classList.remove("visible"), 4000);
  };
  controller.onShape = (record) => {
    viewer.showShape(record);
    el<HTMLSpanElement>("shape-id").textContent =
      `${record.id} (${record.provenance}, seed ${record.seed})`;
    seedLog.textContent = state.seedLog
      .map((e) => `${e.action} seed=${e.seed} -> ${e.resultId}`)
      .join("\n");
  };

  viewer.onDrag = (index, delta) => state.applyDrag(index, delta);
  viewer.onToggle = (index) => state.toggleMoved(index);

  el<HTMLButtonElement>("btn-generate").addEventListener("click", () => controller.generate());
  el<HTMLButtonElement>("btn-regenerate").addEventListener("click", () => controller.regenerate());
  el<HTMLButtonElement>("btn-undo").addEventListener("click", () => controller.undo());
  el<HTMLSelectElement>("mode-select").addEventListener("change", (e) => {
    state.mode = (e.target as HTMLSelectElement).value as EditMode;
  });

  api
    .health()
    .then((h) =>
      controller.onError(
        `connected: k=${h.model_config.n_latent}, N=${h.model_config.n_points}`,
      ),
    )
    .catch(() => controller.onError(`cannot reach ${baseUrl}; start the service first`));
}

setup();
