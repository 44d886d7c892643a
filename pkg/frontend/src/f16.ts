/** IEEE 754 half-float decoding for bundle buffers stored as little-endian
 * float16. Decoding goes through a 65536-entry lookup table built once; the
 * table covers every bit pattern including subnormals, infinities, and NaN.
 */

let TABLE: Float32Array | null = null;

function buildTable(): Float32Array {
  const table = new Float32Array(65536);
  const buf = new DataView(new ArrayBuffer(4));
  for (let h = 0; h < 65536; h++) {
    const sign = (h & 0x8000) >> 15;
    const exp = (h & 0x7c00) >> 10;
    const frac = h & 0x03ff;
    let value: number;
    if (exp === 0) {
      value = frac * 2 ** -24; // subnormal
    } else if (exp === 0x1f) {
      value = frac ? NaN : Infinity;
    } else {
      // normal: rebuild as float32 bits
      buf.setUint32(0, ((exp + 112) << 23) | (frac << 13));
      value = buf.getFloat32(0);
    }
    table[h] = sign ? -value : value;
  }
  return table;
}

/** Decode a buffer of little-endian float16 values to Float32Array. */
export function decodeFloat16(bytes: ArrayBuffer | Uint8Array): Float32Array {
  if (TABLE === null) TABLE = buildTable();
  const u8 = bytes instanceof Uint8Array ? bytes : new Uint8Array(bytes);
  if (u8.byteLength % 2 !== 0) {
    throw new Error(`float16 buffer has odd byte length ${u8.byteLength}`);
  }
  const n = u8.byteLength / 2;
  const out = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    out[i] = TABLE[u8[2 * i] | (u8[2 * i + 1] << 8)];
  }
  return out;
}

/** Decode a single half-float bit pattern (mainly for tests). */
export function float16Value(bits: number): number {
  if (TABLE === null) TABLE = buildTable();
  return TABLE[bits & 0xffff];
}
