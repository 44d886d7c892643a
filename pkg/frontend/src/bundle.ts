/** Bundle loading: decode the exported binary buffers into typed arrays.
 *
 * Buffer layouts (little-endian):
 *   planes.bin   N x 14 f32: basis row-major (9), center (3), width, height
 *   color_sh.bin N x S x S x 3 x Kc f16
 *   alpha.bin    N x S x S u8 (sigmoid(alpha) * 255, rounded)
 *   disp_sh.bin  N x Sd x Sd x 2 x Kd f16
 *   dynamic.bin  16-byte records: pos f32 x 3, rgb u8 x 3, mask u8,
 *                sliced per frame via manifest.dynamic_index
 */

import { decodeFloat16 } from "./f16.js";
import { ManifestError, parseManifest, ViewerManifest } from "./manifest.js";
import { Mat3, Vec3 } from "./math3.js";
import { numShCoeffs } from "./sh.js";

export interface Plane {
  /** row-major 3x3 whose columns are in-plane axis u, in-plane axis v, normal */
  basis: Mat3;
  center: Vec3;
  width: number;
  height: number;
}

export interface DynamicFrame {
  /** [count * 3] world positions */
  positions: Float32Array;
  /** [count * 3] colors in [0, 1] */
  rgb: Float32Array;
  /** [count] soft mask in [0, 1] */
  mask: Float32Array;
  count: number;
}

export interface Bundle {
  manifest: ViewerManifest;
  planes: Plane[];
  /** [N, S, S, 3, Kc] flattened */
  colorSh: Float32Array;
  /** [N, S, S] sigmoid alpha in [0, 1] */
  alpha: Float32Array;
  /** raw u8 alpha, for direct GL upload */
  alphaU8: Uint8Array;
  /** [N, Sd, Sd, 2, Kd] flattened */
  dispSh: Float32Array;
  dynamic: DynamicFrame[];
  kColor: number;
  kDisp: number;
}

const RECORD_BYTES = 16;

function decodePlanes(buf: ArrayBuffer, n: number): Plane[] {
  const f = new Float32Array(buf);
  if (f.length !== n * 14) {
    throw new ManifestError(`planes.bin has ${f.length} floats, expected ${n * 14}`);
  }
  const planes: Plane[] = [];
  for (let i = 0; i < n; i++) {
    const o = i * 14;
    planes.push({
      basis: Array.from(f.subarray(o, o + 9)) as Mat3,
      center: [f[o + 9], f[o + 10], f[o + 11]],
      width: f[o + 12],
      height: f[o + 13],
    });
  }
  return planes;
}

function decodeDynamic(buf: ArrayBuffer | null, manifest: ViewerManifest): DynamicFrame[] {
  const frames: DynamicFrame[] = [];
  if (manifest.dynamic_index.length === 0) return frames;
  if (buf === null) throw new ManifestError("manifest lists dynamic frames but dynamic.bin is missing");
  const view = new DataView(buf);
  for (const entry of manifest.dynamic_index) {
    const { offset, count } = entry;
    if (offset + count * RECORD_BYTES > buf.byteLength) {
      throw new ManifestError("dynamic_index entry exceeds dynamic.bin size");
    }
    const positions = new Float32Array(count * 3);
    const rgb = new Float32Array(count * 3);
    const mask = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      const base = offset + i * RECORD_BYTES;
      positions[3 * i] = view.getFloat32(base, true);
      positions[3 * i + 1] = view.getFloat32(base + 4, true);
      positions[3 * i + 2] = view.getFloat32(base + 8, true);
      rgb[3 * i] = view.getUint8(base + 12) / 255;
      rgb[3 * i + 1] = view.getUint8(base + 13) / 255;
      rgb[3 * i + 2] = view.getUint8(base + 14) / 255;
      mask[i] = view.getUint8(base + 15) / 255;
    }
    frames.push({ positions, rgb, mask, count });
  }
  return frames;
}

/** Decode a fully fetched bundle. `buffers` maps buffer names from the
 * manifest ("planes", "color_sh", ...) to their raw bytes. */
export function decodeBundle(manifestRaw: unknown, buffers: Record<string, ArrayBuffer>): Bundle {
  const manifest = parseManifest(manifestRaw);
  const n = manifest.n_planes;
  const s = manifest.texture_size;
  const sd = manifest.disp_size;
  const kColor = numShCoeffs(manifest.sh_degrees[0]);
  const kDisp = numShCoeffs(manifest.sh_degrees[1]);

  for (const key of ["planes", "color_sh", "alpha", "disp_sh"]) {
    if (!(key in buffers)) throw new ManifestError(`missing buffer: ${key}`);
  }
  const colorSh = decodeFloat16(buffers.color_sh);
  if (colorSh.length !== n * s * s * 3 * kColor) {
    throw new ManifestError(
      `color_sh.bin has ${colorSh.length} values, expected ${n * s * s * 3 * kColor}`);
  }
  const dispSh = decodeFloat16(buffers.disp_sh);
  if (dispSh.length !== n * sd * sd * 2 * kDisp) {
    throw new ManifestError(
      `disp_sh.bin has ${dispSh.length} values, expected ${n * sd * sd * 2 * kDisp}`);
  }
  const alphaU8 = new Uint8Array(buffers.alpha);
  if (alphaU8.length !== n * s * s) {
    throw new ManifestError(`alpha.bin has ${alphaU8.length} bytes, expected ${n * s * s}`);
  }
  const alpha = new Float32Array(alphaU8.length);
  for (let i = 0; i < alphaU8.length; i++) alpha[i] = alphaU8[i] / 255;

  return {
    manifest,
    planes: decodePlanes(buffers.planes, n),
    colorSh,
    alpha,
    alphaU8,
    dispSh,
    dynamic: decodeDynamic(buffers.dynamic ?? null, manifest),
    kColor,
    kDisp,
  };
}

/** Fetch a bundle over HTTP from a directory URL containing manifest.json. */
export async function fetchBundle(baseUrl: string): Promise<Bundle> {
  const base = baseUrl.endsWith("/") ? baseUrl : baseUrl + "/";
  const resp = await fetch(base + "manifest.json");
  if (!resp.ok) throw new ManifestError(`failed to fetch manifest: HTTP ${resp.status}`);
  const manifestRaw = await resp.json();
  const manifest = parseManifest(manifestRaw);
  const buffers: Record<string, ArrayBuffer> = {};
  await Promise.all(Object.entries(manifest.buffers).map(async ([name, rel]) => {
    const r = await fetch(base + rel);
    if (!r.ok) throw new ManifestError(`failed to fetch ${rel}: HTTP ${r.status}`);
    buffers[name] = await r.arrayBuffer();
  }));
  return decodeBundle(manifestRaw, buffers);
}
