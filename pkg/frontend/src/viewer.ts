// Three.js viewport: the decoded cloud as points, latent points as
// draggable sphere gizmos (red = fixed, blue = moved). Drags move in a
// screen-aligned plane; holding X / Y / Z snaps the motion to that axis.

import * as THREE from "three";
import { EditorState } from "./state";
import type { ShapeRecord, Vec3 } from "./types";

const FIXED_COLOR = 0xd43f3f;
const MOVED_COLOR = 0x3f6fd4;

export class Viewer {
  scene = new THREE.Scene();
  camera: THREE.PerspectiveCamera;
  renderer: THREE.WebGLRenderer | null = null;
  gizmos: THREE.Mesh[] = [];
  cloudPoints: THREE.Points | null = null;
  axisLock: "x" | "y" | "z" | null = null;
  private dragging: { index: number; plane: THREE.Plane; last: THREE.Vector3 } | null = null;
  private raycaster = new THREE.Raycaster();
  onDrag: (index: number, delta: Vec3) => void = () => {};
  onToggle: (index: number) => void = () => {};

  constructor(
    private container: HTMLElement,
    private state: EditorState,
  ) {
    this.camera = new THREE.PerspectiveCamera(50, 1, 0.01, 100);
    this.camera.position.set(2.2, 1.6, 2.2);
    this.camera.lookAt(0, 0, 0);
    try {
      this.renderer = new THREE.WebGLRenderer({ antialias: true });
    } catch {
      this.renderer = null;
    }
    if (!this.renderer) {
      const msg = document.createElement("div");
      msg.className = "webgl-missing";
      msg.textContent = "WebGL is unavailable in this browser; the 3D viewport is disabled.";
      container.appendChild(msg);
      return;
    }
    this.renderer.setSize(container.clientWidth || 800, container.clientHeight || 600);
    container.appendChild(this.renderer.domElement);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.8));
    const dir = new THREE.DirectionalLight(0xffffff, 0.8);
    dir.position.set(3, 5, 2);
    this.scene.add(dir);
    this.bindEvents();
    this.animate();
  }

  private bindEvents(): void {
    const el = this.renderer!.domElement;
    el.addEventListener("pointerdown", (e) => this.pointerDown(e));
    el.addEventListener("pointermove", (e) => this.pointerMove(e));
    el.addEventListener("pointerup", () => (this.dragging = null));
    window.addEventListener("keydown", (e) => {
      const k = e.key.toLowerCase();
      if (k === "x" || k === "y" || k === "z") this.axisLock = k;
    });
    window.addEventListener("keyup", () => (this.axisLock = null));
  }

  private pointerRay(e: PointerEvent): THREE.Raycaster {
    const rect = this.renderer!.domElement.getBoundingClientRect();
    const ndc = new THREE.Vector2(
      ((e.clientX - rect.left) / rect.width) * 2 - 1,
      -((e.clientY - rect.top) / rect.height) * 2 + 1,
    );
    this.raycaster.setFromCamera(ndc, this.camera);
    return this.raycaster;
  }

  private pointerDown(e: PointerEvent): void {
    const hits = this.pointerRay(e).intersectObjects(this.gizmos);
    if (!hits.length) return;
    const index = this.gizmos.indexOf(hits[0].object as THREE.Mesh);
    if (e.shiftKey) {
      this.onToggle(index);
      this.refreshGizmoColors();
      return;
    }
    // drag in the camera-facing plane through the gizmo
    const normal = this.camera.getWorldDirection(new THREE.Vector3()).negate();
    const plane = new THREE.Plane().setFromNormalAndCoplanarPoint(
      normal,
      hits[0].object.position.clone(),
    );
    this.dragging = { index, plane, last: hits[0].point.clone() };
  }

  private pointerMove(e: PointerEvent): void {
    if (!this.dragging) return;
    const hit = new THREE.Vector3();
    if (!this.pointerRay(e).ray.intersectPlane(this.dragging.plane, hit)) return;
    const delta = hit.clone().sub(this.dragging.last);
    if (this.axisLock) {
      const keep = delta[this.axisLock];
      delta.set(0, 0, 0);
      delta[this.axisLock] = keep;
    }
    this.dragging.last = hit;
    const gizmo = this.gizmos[this.dragging.index];
    gizmo.position.add(delta);
    this.onDrag(this.dragging.index, [delta.x, delta.y, delta.z]);
    this.refreshGizmoColors();
  }

  showShape(record: ShapeRecord): void {
    if (!this.renderer) return;
    if (this.cloudPoints) this.scene.remove(this.cloudPoints);
    for (const g of this.gizmos) this.scene.remove(g);
    this.gizmos = [];

    const geo = new THREE.BufferGeometry();
    geo.setAttribute(
      "position",
      new THREE.Float32BufferAttribute(record.cloud.positions.flat(), 3),
    );
    this.cloudPoints = new THREE.Points(
      geo,
      new THREE.PointsMaterial({ color: 0xbbbbbb, size: 0.02 }),
    );
    this.scene.add(this.cloudPoints);

    const sphere = new THREE.SphereGeometry(0.035, 12, 12);
    record.latent.positions.forEach((p) => {
      const mesh = new THREE.Mesh(sphere, new THREE.MeshStandardMaterial({ color: FIXED_COLOR }));
      mesh.position.set(p[0], p[1], p[2]);
      this.scene.add(mesh);
      this.gizmos.push(mesh);
    });
    this.refreshGizmoColors();
  }

  refreshGizmoColors(): void {
    this.gizmos.forEach((g, i) => {
      const moved = this.state.movedFlags[i];
      (g.material as THREE.MeshStandardMaterial).color.setHex(moved ? MOVED_COLOR : FIXED_COLOR);
    });
  }

  private animate = (): void => {
    if (!this.renderer) return;
    requestAnimationFrame(this.animate);
    this.renderer.render(this.scene, this.camera);
  };
}
