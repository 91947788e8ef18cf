/** Three.js scene: receptacle, active object, and the goal ghost.
 *
 * Purely visual feedback: geometry and poses only, matching what a
 * demonstrator is allowed to see while recording.
 */

import * as THREE from "three";

import { BoxInfo, SceneInfo, StateFrame } from "./protocol.js";

function boxMesh(box: BoxInfo, material: THREE.Material): THREE.Mesh {
  const geo = new THREE.BoxGeometry(box.extents[0], box.extents[1], box.extents[2]);
  const mesh = new THREE.Mesh(geo, material);
  setPose(mesh, box.pose);
  return mesh;
}

function setPose(obj: THREE.Object3D, pose7: number[]): void {
  obj.position.set(pose7[0], pose7[1], pose7[2]);
  obj.quaternion.set(pose7[3], pose7[4], pose7[5], pose7[6]);
}

export class SceneView {
  readonly scene = new THREE.Scene();
  readonly camera: THREE.PerspectiveCamera;
  private renderer: THREE.WebGLRenderer;
  private objectGroup = new THREE.Group();
  private ghostGroup = new THREE.Group();

  constructor(canvas: HTMLCanvasElement, info: SceneInfo) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(45, canvas.width / canvas.height, 0.01, 10);
    this.camera.up.set(0, 0, 1);
    this.camera.position.set(0.45, -0.45, 0.35);
    this.camera.lookAt(0, 0, 0.06);

    this.scene.background = new THREE.Color(0x20242b);
    const sun = new THREE.DirectionalLight(0xffffff, 2.0);
    sun.position.set(1, -1, 2);
    this.scene.add(sun, new THREE.AmbientLight(0xffffff, 0.5));

    const receptacleMat = new THREE.MeshStandardMaterial({ color: 0x8a8f98 });
    for (const box of info.receptacle) this.scene.add(boxMesh(box, receptacleMat));

    const objectMat = new THREE.MeshStandardMaterial({ color: 0x4d9de0 });
    const ghostMat = new THREE.MeshStandardMaterial({
      color: 0x7fe07f, transparent: true, opacity: 0.25, depthWrite: false,
    });
    for (const part of info.active) {
      this.objectGroup.add(boxMesh(part, objectMat));
      this.ghostGroup.add(boxMesh(part, ghostMat));
    }
    setPose(this.ghostGroup, info.goal_pose);
    this.scene.add(this.objectGroup, this.ghostGroup);
  }

  update(frame: StateFrame): void {
    setPose(this.objectGroup, frame.object_pose);
    setPose(this.ghostGroup, frame.goal_pose);
  }

  render(): void {
    this.renderer.render(this.scene, this.camera);
  }
}
