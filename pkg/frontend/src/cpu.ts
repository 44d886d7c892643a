/** CPU reference renderer for viewer bundles.
 *
 * Mirrors the core renderer pixel-for-pixel on the dequantized textures:
 * rays through pixel centers, finite-plane intersection, optional
 * view-dependent texel displacement, clamp-to-edge bilinear lookup of SH
 * coefficient grids, far-to-near over-compositing with plane-index
 * ascending tie-breaks. The only deliberate deviation is the bounded
 * per-pixel fragment list (FRAGMENT_CAP, farthest dropped on overflow),
 * which the GL renderer shares.
 */

import { Bundle } from "./bundle.js";
import { cameraCenter, dot, Intrinsics, matTVec, matVec, normalize, Pose, Vec3, vsub } from "./math3.js";
import { numShCoeffs, shBasis } from "./sh.js";

export const FRAGMENT_CAP = 16;
export const DISP_CLAMP = 8.0;
export const DEPTH_SENTINEL = Infinity;
const DEPTH_ALPHA_FLOOR = 1e-6;

export interface CpuRenderResult {
  /** [H * W * 3] in [0, 1] after background blend (not clamped) */
  color: Float32Array;
  /** [H * W], +inf where accumulated alpha is below the floor */
  depth: Float32Array;
  /** [H * W] accumulated alpha */
  alpha: Float32Array;
  /** pixels whose fragment list overflowed FRAGMENT_CAP */
  overflowCount: number;
}

export interface CpuRenderOptions {
  background?: [number, number, number];
  /** cap active SH bands for color (default: full degree) */
  colorBandCap?: number;
  /** disable displacement lookup entirely */
  displacement?: boolean;
  fragmentCap?: number;
}

interface Fragment {
  depth: number;
  plane: number;
  r: number;
  g: number;
  b: number;
  a: number;
}

/** Clamp-to-edge bilinear sample of one channel-strided grid.
 * data is [S, S, stride] flattened with channel offset `chan`;
 * gx indexes columns, gy rows, texel centers at integer coords. */
function bilinear(data: Float32Array, base: number, size: number, stride: number,
                  chan: number, gx: number, gy: number): number {
  let x0 = Math.floor(gx);
  let y0 = Math.floor(gy);
  const fx = gx - x0;
  const fy = gy - y0;
  const cl = (v: number) => (v < 0 ? 0 : v >= size ? size - 1 : v);
  const x0c = cl(x0), x1c = cl(x0 + 1), y0c = cl(y0), y1c = cl(y0 + 1);
  const row = size * stride;
  const v00 = data[base + y0c * row + x0c * stride + chan];
  const v01 = data[base + y0c * row + x1c * stride + chan];
  const v10 = data[base + y1c * row + x0c * stride + chan];
  const v11 = data[base + y1c * row + x1c * stride + chan];
  return (v00 * (1 - fx) + v01 * fx) * (1 - fy) + (v10 * (1 - fx) + v11 * fx) * fy;
}

/** Render the static plane soup from a pose. */
export function renderStatic(bundle: Bundle, K: Intrinsics, pose: Pose,
                             opts: CpuRenderOptions = {}): CpuRenderResult {
  const { planes, colorSh, alpha, dispSh, kColor, kDisp, manifest } = bundle;
  const s = manifest.texture_size;
  const sd = manifest.disp_size;
  const lColor = manifest.sh_degrees[0];
  const lDisp = manifest.sh_degrees[1];
  const useDisp = opts.displacement ?? true;
  const cap = opts.fragmentCap ?? FRAGMENT_CAP;
  const bg = opts.background ?? [0, 0, 0];
  const kColorActive = opts.colorBandCap === undefined
    ? kColor : Math.min(kColor, numShCoeffs(Math.min(opts.colorBandCap, lColor)));

  const w = K.width;
  const h = K.height;
  const origin = cameraCenter(pose);
  const nPix = w * h;
  const color = new Float32Array(nPix * 3);
  const depthOut = new Float32Array(nPix);
  const accOut = new Float32Array(nPix);
  const frags: Fragment[] = [];
  let overflowCount = 0;

  // per-plane scalars independent of the pixel
  const nPlanes = planes.length;
  const tnum = new Float64Array(nPlanes);
  const pu0 = new Float64Array(nPlanes);
  const pv0 = new Float64Array(nPlanes);
  for (let p = 0; p < nPlanes; p++) {
    const rel = vsub(planes[p].center, origin);
    const b = planes[p].basis; // columns are axis u, axis v, normal
    tnum[p] = rel[0] * b[2] + rel[1] * b[5] + rel[2] * b[8];
    pu0[p] = -(rel[0] * b[0] + rel[1] * b[3] + rel[2] * b[6]);
    pv0[p] = -(rel[0] * b[1] + rel[1] * b[4] + rel[2] * b[7]);
  }

  const colorPlaneStride = s * s * 3 * kColor;
  const dispPlaneStride = sd * sd * 2 * kDisp;
  const alphaPlaneStride = s * s;

  for (let py = 0; py < h; py++) {
    for (let px = 0; px < w; px++) {
      const pix = py * w + px;
      // unit world ray through the pixel center
      const dCam: Vec3 = [(px + 0.5 - K.cx) / K.fx, (py + 0.5 - K.cy) / K.fy, 1];
      const dWorld = normalize(matTVec(pose.r, dCam));
      const dzCam = matVec(pose.r, dWorld)[2];
      const basisC = shBasis(lColor, dWorld[0], dWorld[1], dWorld[2]);
      const basisD = shBasis(lDisp, dWorld[0], dWorld[1], dWorld[2]);

      frags.length = 0;
      for (let p = 0; p < nPlanes; p++) {
        const b = planes[p].basis;
        const d0 = dot(dWorld, [b[0], b[3], b[6]]);
        const d1 = dot(dWorld, [b[1], b[4], b[7]]);
        const d2 = dot(dWorld, [b[2], b[5], b[8]]);
        if (Math.abs(d2) < 1e-9) continue;
        const t = tnum[p] / d2;
        if (t <= 1e-9) continue;
        const u = (pu0[p] + t * d0) / planes[p].width + 0.5;
        const v = (pv0[p] + t * d1) / planes[p].height + 0.5;
        if (u < 0 || u > 1 || v < 0 || v > 1) continue;
        const depth = t * dzCam;
        if (depth <= 0) continue;

        let gx = u * s - 0.5;
        let gy = v * s - 0.5;
        if (useDisp) {
          const gxd = u * sd - 0.5;
          const gyd = v * sd - 0.5;
          const dbase = p * dispPlaneStride;
          let dx = 0, dy = 0;
          for (let k = 0; k < kDisp; k++) {
            dx += bilinear(dispSh, dbase, sd, 2 * kDisp, k, gxd, gyd) * basisD[k];
            dy += bilinear(dispSh, dbase, sd, 2 * kDisp, kDisp + k, gxd, gyd) * basisD[k];
          }
          gx += Math.min(Math.max(dx, -DISP_CLAMP), DISP_CLAMP);
          gy += Math.min(Math.max(dy, -DISP_CLAMP), DISP_CLAMP);
        }

        const cbase = p * colorPlaneStride;
        let r = 0, g = 0, bl = 0;
        for (let k = 0; k < kColorActive; k++) {
          const bk = basisC[k];
          r += bilinear(colorSh, cbase, s, 3 * kColor, k, gx, gy) * bk;
          g += bilinear(colorSh, cbase, s, 3 * kColor, kColor + k, gx, gy) * bk;
          bl += bilinear(colorSh, cbase, s, 3 * kColor, 2 * kColor + k, gx, gy) * bk;
        }
        const a = bilinear(alpha, p * alphaPlaneStride, s, 1, 0, gx, gy);
        frags.push({ depth, plane: p, r, g, b: bl, a });
      }

      // far-to-near; exact-depth ties by plane index ascending, so the
      // nearer-drawn fragment on a tie is the higher-indexed plane
      frags.sort((x, y) => (y.depth - x.depth) || (x.plane - y.plane));
      if (frags.length > cap) {
        overflowCount++;
        frags.splice(0, frags.length - cap); // drop farthest
      }

      let cr = 0, cg = 0, cb = 0, acc = 0, dsum = 0, trans = 1;
      // iterate near-to-far accumulating transmittance-weighted over blend
      for (let i = frags.length - 1; i >= 0; i--) {
        const f = frags[i];
        const wgt = f.a * trans;
        cr += wgt * f.r;
        cg += wgt * f.g;
        cb += wgt * f.b;
        dsum += wgt * f.depth;
        acc += wgt;
        trans *= 1 - f.a;
      }
      color[3 * pix] = cr + bg[0] * (1 - acc);
      color[3 * pix + 1] = cg + bg[1] * (1 - acc);
      color[3 * pix + 2] = cb + bg[2] * (1 - acc);
      accOut[pix] = acc;
      depthOut[pix] = acc > DEPTH_ALPHA_FLOOR ? dsum / acc : DEPTH_SENTINEL;
    }
  }
  return { color, depth: depthOut, alpha: accOut, overflowCount };
}

/** Project and splat one frame's dynamic points over a static render.
 *
 * Playback-side composition: points are z-buffered per pixel (nearest
 * wins) and blended over the static layer with a depth-aware visibility
 * factor matching the core compositor's sigmoid occlusion test.
 */
export function renderDynamicOver(bundle: Bundle, frame: number, K: Intrinsics,
                                  pose: Pose, staticResult: CpuRenderResult,
                                  occlusionTau: number): Float32Array {
  const out = staticResult.color.slice();
  const dyn = bundle.dynamic[frame];
  if (!dyn || dyn.count === 0) return out;
  const w = K.width;
  const h = K.height;
  const nPix = w * h;
  const zbuf = new Float32Array(nPix).fill(Infinity);
  const idx = new Int32Array(nPix).fill(-1);
  for (let i = 0; i < dyn.count; i++) {
    const pw: Vec3 = [dyn.positions[3 * i], dyn.positions[3 * i + 1], dyn.positions[3 * i + 2]];
    const pc = matVec(pose.r, pw);
    const z = pc[2] + pose.t[2];
    if (z <= 1e-6) continue;
    const x = Math.floor((pc[0] + pose.t[0]) / z * K.fx + K.cx);
    const y = Math.floor((pc[1] + pose.t[1]) / z * K.fy + K.cy);
    if (x < 0 || x >= w || y < 0 || y >= h) continue;
    const pix = y * w + x;
    if (z < zbuf[pix]) {
      zbuf[pix] = z;
      idx[pix] = i;
    }
  }
  for (let pix = 0; pix < nPix; pix++) {
    const i = idx[pix];
    if (i < 0) continue;
    const sd = staticResult.depth[pix];
    // visibility of the dynamic point: 1 when it is well in front
    const vis = Number.isFinite(sd)
      ? 1 / (1 + Math.exp(-(sd - zbuf[pix]) / occlusionTau)) : 1;
    const m = dyn.mask[i] * vis;
    out[3 * pix] += m * (dyn.rgb[3 * i] - out[3 * pix]);
    out[3 * pix + 1] += m * (dyn.rgb[3 * i + 1] - out[3 * pix + 1]);
    out[3 * pix + 2] += m * (dyn.rgb[3 * i + 2] - out[3 * pix + 2]);
  }
  return out;
}
