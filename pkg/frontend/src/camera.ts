/** Interactive camera: orbit around a target with dolly, or fly mode with
 * WASD + mouse look. Produces world->camera poses in the bundle's
 * convention (x_cam = R x_world + t).
 */

import {
  axisAngle, cameraCenter, Mat3, matMul, matTVec, matVec, Pose,
  reorthonormalize, Vec3, vadd, vscale, vsub,
} from "./math3.js";

export type CameraMode = "orbit" | "fly";

export class CameraController {
  mode: CameraMode = "orbit";
  /** current world->camera pose */
  pose: Pose;
  /** orbit target in world coordinates */
  target: Vec3;
  private keys = new Set<string>();

  constructor(initial: Pose, target: Vec3) {
    this.pose = { r: [...initial.r] as Mat3, t: [...initial.t] as Vec3 };
    this.target = [...target] as Vec3;
  }

  reset(pose: Pose): void {
    this.pose = { r: [...pose.r] as Mat3, t: [...pose.t] as Vec3 };
  }

  /** Mouse drag by (dx, dy) pixels. */
  rotate(dx: number, dy: number): void {
    const yaw = -dx * 0.005;
    const pitch = -dy * 0.005;
    if (this.mode === "orbit") {
      const center = cameraCenter(this.pose);
      const offset = vsub(center, this.target);
      // yaw about world up, pitch about the camera's right axis
      const right = matTVec(this.pose.r, [1, 0, 0]);
      const rot = matMul(axisAngle([0, 1, 0], yaw), axisAngle(right, pitch));
      const newOffset = matVec(rot, offset);
      const newR = reorthonormalize(matMul(this.pose.r, transposeOf(rot)));
      const newCenter = vadd(this.target, newOffset);
      this.pose = { r: newR, t: vscale(matVec(newR, newCenter), -1) };
    } else {
      // look around in place: pre-rotate in the camera frame
      const rot = matMul(axisAngle([1, 0, 0], -pitch), axisAngle([0, 1, 0], -yaw));
      const center = cameraCenter(this.pose);
      const newR = reorthonormalize(matMul(rot, this.pose.r));
      this.pose = { r: newR, t: vscale(matVec(newR, center), -1) };
    }
  }

  /** Scroll: dolly toward/away from the target (orbit) or forward (fly). */
  dolly(amount: number): void {
    const center = cameraCenter(this.pose);
    let move: Vec3;
    if (this.mode === "orbit") {
      const offset = vsub(center, this.target);
      move = vscale(offset, -amount * 0.1);
    } else {
      move = vscale(matTVec(this.pose.r, [0, 0, 1]), amount * 0.1);
    }
    const newCenter = vadd(center, move);
    this.pose = { r: this.pose.r, t: vscale(matVec(this.pose.r, newCenter), -1) };
  }

  keyDown(code: string): void {
    this.keys.add(code);
  }

  keyUp(code: string): void {
    this.keys.delete(code);
  }

  /** Advance fly-mode movement; dt in seconds. */
  tick(dt: number, speed = 1.5): void {
    if (this.mode !== "fly" || this.keys.size === 0) return;
    let local: Vec3 = [0, 0, 0];
    if (this.keys.has("KeyW")) local = vadd(local, [0, 0, 1]);
    if (this.keys.has("KeyS")) local = vadd(local, [0, 0, -1]);
    if (this.keys.has("KeyA")) local = vadd(local, [-1, 0, 0]);
    if (this.keys.has("KeyD")) local = vadd(local, [1, 0, 0]);
    if (this.keys.has("KeyQ")) local = vadd(local, [0, -1, 0]);
    if (this.keys.has("KeyE")) local = vadd(local, [0, 1, 0]);
    if (local[0] === 0 && local[1] === 0 && local[2] === 0) return;
    const move = vscale(matTVec(this.pose.r, local), speed * dt);
    const center = vadd(cameraCenter(this.pose), move);
    this.pose = { r: this.pose.r, t: vscale(matVec(this.pose.r, center), -1) };
  }
}

function transposeOf(m: Mat3): Mat3 {
  return [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]];
}
