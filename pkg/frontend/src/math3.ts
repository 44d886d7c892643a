/** Minimal 3-vector / 3x3-matrix helpers shared by the CPU reference
 * renderer, the camera controls, and the GL uniform packing.
 *
 * Conventions match the exporter: poses are world->camera rigid transforms
 * (x_cam = R x_world + t), matrices are row-major number arrays.
 */

export type Vec3 = [number, number, number];
/** Row-major 3x3. */
export type Mat3 = [number, number, number, number, number, number, number, number, number];

export interface Pose {
  /** world->camera rotation, row-major */
  r: Mat3;
  /** world->camera translation */
  t: Vec3;
}

export interface Intrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export function vadd(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function vsub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function vscale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.hypot(a[0], a[1], a[2]);
}

export function normalize(a: Vec3): Vec3 {
  const n = norm(a);
  if (n < 1e-30) return [0, 0, 1];
  return vscale(a, 1 / n);
}

/** y = M x for row-major M. */
export function matVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
    m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
    m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
  ];
}

/** y = M^T x for row-major M. */
export function matTVec(m: Mat3, v: Vec3): Vec3 {
  return [
    m[0] * v[0] + m[3] * v[1] + m[6] * v[2],
    m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
    m[2] * v[0] + m[5] * v[1] + m[8] * v[2],
  ];
}

export function matMul(a: Mat3, b: Mat3): Mat3 {
  const o = new Array(9).fill(0) as Mat3;
  for (let i = 0; i < 3; i++)
    for (let j = 0; j < 3; j++) {
      let s = 0;
      for (let k = 0; k < 3; k++) s += a[3 * i + k] * b[3 * k + j];
      o[3 * i + j] = s;
    }
  return o;
}

export function transpose(m: Mat3): Mat3 {
  return [m[0], m[3], m[6], m[1], m[4], m[7], m[2], m[5], m[8]];
}

export function identityPose(): Pose {
  return { r: [1, 0, 0, 0, 1, 0, 0, 0, 1], t: [0, 0, 0] };
}

/** Camera center in world coordinates: -R^T t. */
export function cameraCenter(p: Pose): Vec3 {
  return vscale(matTVec(p.r, p.t), -1);
}

/** Pose from a flattened 3x4 row-major world->camera matrix. */
export function poseFromFlat(m: number[]): Pose {
  if (m.length !== 12) throw new Error(`pose needs 12 values, got ${m.length}`);
  return {
    r: [m[0], m[1], m[2], m[4], m[5], m[6], m[8], m[9], m[10]],
    t: [m[3], m[7], m[11]],
  };
}

/** Frobenius deviation of R R^T from the identity. */
export function orthonormalityError(r: Mat3): number {
  const rt = transpose(r);
  const g = matMul(r, rt);
  let err = 0;
  for (let i = 0; i < 9; i++) {
    const target = i % 4 === 0 ? 1 : 0;
    err += (g[i] - target) ** 2;
  }
  return Math.sqrt(err);
}

/** Nearest rotation via Gram-Schmidt on the rows (sufficient for drift
 * correction of interactively composed orbits). */
export function reorthonormalize(r: Mat3): Mat3 {
  let r0: Vec3 = normalize([r[0], r[1], r[2]]);
  let r1: Vec3 = [r[3], r[4], r[5]];
  r1 = normalize(vsub(r1, vscale(r0, dot(r0, r1))));
  const r2 = cross(r0, r1);
  return [r0[0], r0[1], r0[2], r1[0], r1[1], r1[2], r2[0], r2[1], r2[2]];
}

/** Rotation about a unit axis by angle (radians), row-major. */
export function axisAngle(axis: Vec3, angle: number): Mat3 {
  const [x, y, z] = normalize(axis);
  const c = Math.cos(angle);
  const s = Math.sin(angle);
  const ic = 1 - c;
  return [
    c + x * x * ic, x * y * ic - z * s, x * z * ic + y * s,
    y * x * ic + z * s, c + y * y * ic, y * z * ic - x * s,
    z * x * ic - y * s, z * y * ic + x * s, c + z * z * ic,
  ];
}
