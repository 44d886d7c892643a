/** Real spherical-harmonic basis, matching the core renderer's ordering
 * (band-major, m from -l to l within each band) and constants.
 */

export const SH_C0 = 0.28209479177387814; // 1 / (2 sqrt(pi))
export const SH_C1 = 0.4886025119029199; // sqrt(3 / (4 pi))

export function numShCoeffs(lMax: number): number {
  return (lMax + 1) * (lMax + 1);
}

/** Basis values for a unit direction; length (lMax+1)^2. */
export function shBasis(lMax: number, x: number, y: number, z: number): Float64Array {
  if (lMax < 0 || lMax > 4) throw new Error("SH degree must be in [0, 4]");
  const out = new Float64Array(numShCoeffs(lMax));
  out[0] = SH_C0;
  if (lMax >= 1) {
    out[1] = SH_C1 * y;
    out[2] = SH_C1 * z;
    out[3] = SH_C1 * x;
  }
  if (lMax >= 2) {
    const xx = x * x, yy = y * y, zz = z * z;
    out[4] = 1.0925484305920792 * x * y;
    out[5] = 1.0925484305920792 * y * z;
    out[6] = 0.31539156525252005 * (3 * zz - 1);
    out[7] = 1.0925484305920792 * x * z;
    out[8] = 0.5462742152960396 * (xx - yy);
    if (lMax >= 3) {
      out[9] = 0.5900435899266435 * y * (3 * xx - yy);
      out[10] = 2.890611442640554 * x * y * z;
      out[11] = 0.4570457994644658 * y * (5 * zz - 1);
      out[12] = 0.3731763325901154 * z * (5 * zz - 3);
      out[13] = 0.4570457994644658 * x * (5 * zz - 1);
      out[14] = 1.445305721320277 * z * (xx - yy);
      out[15] = 0.5900435899266435 * x * (xx - 3 * yy);
    }
    if (lMax >= 4) {
      out[16] = 2.5033429417967046 * x * y * (xx - yy);
      out[17] = 1.7701307697799304 * y * z * (3 * xx - yy);
      out[18] = 0.9461746957575601 * x * y * (7 * zz - 1);
      out[19] = 0.6690465435572892 * y * z * (7 * zz - 3);
      out[20] = 0.10578554691520431 * (35 * zz * zz - 30 * zz + 3);
      out[21] = 0.6690465435572892 * x * z * (7 * zz - 3);
      out[22] = 0.47308734787878004 * (xx - yy) * (7 * zz - 1);
      out[23] = 1.7701307697799304 * x * z * (xx - 3 * yy);
      out[24] = 0.6258357354491761 * (xx * xx - 6 * xx * yy + yy * yy);
    }
  }
  return out;
}
