/** Viewer bundle manifest schema and validation. */

export interface ManifestIntrinsics {
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  width: number;
  height: number;
}

export interface DynamicIndexEntry {
  /** byte offset into dynamic.bin */
  offset: number;
  /** number of 16-byte point records */
  count: number;
}

export interface ViewerManifest {
  version: number;
  n_planes: number;
  texture_size: number;
  disp_size: number;
  /** [l_max_color, l_max_disp] */
  sh_degrees: [number, number];
  static_only: boolean;
  n_frames: number;
  dynamic_index: DynamicIndexEntry[];
  buffers: Record<string, string>;
  intrinsics: ManifestIntrinsics | null;
  /** flattened 3x4 row-major world->camera matrices */
  camera_path: number[][];
  fidelity: { views: number[]; max_mean_abs?: number };
}

export class ManifestError extends Error {}

function need(cond: boolean, msg: string): void {
  if (!cond) throw new ManifestError(msg);
}

/** Parse and validate a manifest JSON object. */
export function parseManifest(raw: unknown): ViewerManifest {
  need(typeof raw === "object" && raw !== null, "manifest is not an object");
  const m = raw as Record<string, unknown>;
  need(m.version === 1, `unsupported bundle version ${String(m.version)}`);
  for (const key of ["n_planes", "texture_size", "disp_size", "n_frames"]) {
    need(typeof m[key] === "number" && Number.isInteger(m[key] as number) && (m[key] as number) >= 0,
      `manifest ${key} must be a non-negative integer`);
  }
  const deg = m.sh_degrees as unknown[];
  need(Array.isArray(deg) && deg.length === 2, "sh_degrees must have two entries");
  for (const d of deg) {
    need(typeof d === "number" && Number.isInteger(d) && d >= 0 && d <= 4,
      "sh degrees must be integers in [0, 4]");
  }
  const buffers = m.buffers as Record<string, unknown>;
  need(typeof buffers === "object" && buffers !== null, "manifest buffers missing");
  for (const key of ["planes", "color_sh", "alpha", "disp_sh"]) {
    need(typeof buffers[key] === "string", `manifest buffers.${key} missing`);
  }
  const index = (m.dynamic_index ?? []) as unknown[];
  need(Array.isArray(index), "dynamic_index must be an array");
  for (const e of index) {
    const entry = e as Record<string, unknown>;
    need(typeof entry.offset === "number" && typeof entry.count === "number",
      "dynamic_index entries need offset and count");
  }
  need(index.length === (m.n_frames as number), "dynamic_index length != n_frames");
  const k = m.intrinsics as ManifestIntrinsics | null;
  if (k !== null && k !== undefined) {
    for (const key of ["fx", "fy", "cx", "cy", "width", "height"] as const) {
      need(typeof k[key] === "number" && Number.isFinite(k[key]), `intrinsics.${key} invalid`);
    }
  }
  const path = (m.camera_path ?? []) as unknown[];
  need(Array.isArray(path), "camera_path must be an array");
  for (const p of path) {
    need(Array.isArray(p) && (p as unknown[]).length === 12,
      "camera_path entries must be flattened 3x4 matrices");
  }
  return {
    version: 1,
    n_planes: m.n_planes as number,
    texture_size: m.texture_size as number,
    disp_size: m.disp_size as number,
    sh_degrees: [deg[0] as number, deg[1] as number],
    static_only: Boolean(m.static_only),
    n_frames: m.n_frames as number,
    dynamic_index: index as DynamicIndexEntry[],
    buffers: buffers as Record<string, string>,
    intrinsics: k ?? null,
    camera_path: path as number[][],
    fidelity: (m.fidelity as ViewerManifest["fidelity"]) ?? { views: [] },
  };
}
