import { describe, expect, it } from "vitest";
import { decodeFloat16, float16Value } from "../src/f16.js";

describe("float16 decoding", () => {
  it("decodes exact reference bit patterns", () => {
    expect(float16Value(0x0000)).toBe(0);
    expect(float16Value(0x3c00)).toBe(1);
    expect(float16Value(0x3800)).toBe(0.5);
    expect(float16Value(0xc000)).toBe(-2);
    expect(float16Value(0x7bff)).toBe(65504); // largest finite
    expect(float16Value(0x0001)).toBe(2 ** -24); // smallest subnormal
    expect(float16Value(0x0400)).toBe(2 ** -14); // smallest normal
    expect(float16Value(0x7c00)).toBe(Infinity);
    expect(float16Value(0xfc00)).toBe(-Infinity);
    expect(Number.isNaN(float16Value(0x7e00))).toBe(true);
  });

  it("treats negative zero as zero-valued", () => {
    expect(float16Value(0x8000)).toBe(-0);
  });

  it("decodes little-endian buffers element-wise", () => {
    const bytes = new Uint8Array([0x00, 0x3c, 0x00, 0xb8]); // [1.0, -0.5]
    const out = decodeFloat16(bytes);
    expect(Array.from(out)).toEqual([1, -0.5]);
  });

  it("rejects odd-length buffers", () => {
    expect(() => decodeFloat16(new Uint8Array(3))).toThrow(/odd byte length/);
  });

  it("round-trips all values representable in float32", () => {
    // every half value must decode to something a float32 stores exactly
    for (let bits = 0; bits < 65536; bits += 37) {
      const v = float16Value(bits);
      if (!Number.isFinite(v)) continue;
      expect(Math.fround(v)).toBe(v);
    }
  });
});
