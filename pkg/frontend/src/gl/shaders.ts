/** GLSL sources for the depth-peeling plane renderer.
 *
 * Each peel pass draws every plane quad, discards fragments at or nearer
 * than the previous peel depth, and lets the depth test keep the nearest
 * remaining fragment per pixel. The resolved fragment evaluates the SH
 * color/displacement textures exactly as the CPU reference renderer does;
 * peels are then blended front-to-back into an accumulation target.
 */

export const PEEL_VERT = `#version 300 es
precision highp float;

// unit quad corner in [-0.5, 0.5]^2
layout(location = 0) in vec2 corner;
// per-instance plane: basis columns (u, v, n), center, extents
layout(location = 1) in vec3 axisU;
layout(location = 2) in vec3 axisV;
layout(location = 3) in vec3 center;
layout(location = 4) in vec2 extent;
layout(location = 5) in float planeIndex;

uniform mat3 viewR;      // world -> camera rotation
uniform vec3 viewT;      // world -> camera translation
uniform vec4 intr;       // fx, fy, cx, cy
uniform vec2 viewport;   // width, height in pixels
uniform vec2 depthRange; // near, far for clip-depth mapping

out vec2 vUv;
out vec3 vWorld;
flat out float vPlane;

void main() {
  vec3 world = center + corner.x * extent.x * axisU + corner.y * extent.y * axisV;
  vec3 cam = viewR * world + viewT;
  vUv = corner + 0.5;
  vWorld = world;
  vPlane = planeIndex;
  // pinhole projection to pixel coords, then to NDC; pixel centers at +0.5
  float x = intr.x * cam.x / cam.z + intr.z;
  float y = intr.y * cam.y / cam.z + intr.w;
  float ndcX = 2.0 * x / viewport.x - 1.0;
  // flip y: pixel rows grow downward, NDC grows upward
  float ndcY = 1.0 - 2.0 * y / viewport.y;
  // linear depth in [near, far] -> [-1, 1] (clipped outside)
  float ndcZ = 2.0 * (cam.z - depthRange.x) / (depthRange.y - depthRange.x) - 1.0;
  gl_Position = vec4(ndcX * cam.z, ndcY * cam.z, ndcZ * cam.z, cam.z);
}
`;

/** Fragment shader; SH evaluation is generated for the bundle's degrees. */
export function peelFrag(lColor: number, lDisp: number): string {
  return `#version 300 es
precision highp float;
precision highp sampler2DArray;

in vec2 vUv;
in vec3 vWorld;
flat in float vPlane;

uniform sampler2DArray colorTex; // layer p * KC + k: rgb = coeff k
uniform sampler2DArray alphaTex; // layer p: r = sigmoid alpha
uniform sampler2DArray dispTex;  // layer p * KD + k: rg = coeff k
uniform sampler2D prevDepth;     // previous peel camera-z (+inf initially)
uniform vec3 eye;                // camera center, world
uniform mat3 viewR;
uniform vec3 viewT;
uniform float texSize;
uniform float dispSize;
uniform int colorCoeffs;         // active color coefficients (band cap)
uniform int useDisp;

layout(location = 0) out vec4 outColor; // premultiplied (a*rgb, a)
layout(location = 1) out vec4 outDepth; // camera z in r

const int KC = ${(lColor + 1) * (lColor + 1)};
const int KD = ${(lDisp + 1) * (lDisp + 1)};
const float DISP_CLAMP = 8.0;

void shBasis(in vec3 d, out float b[25], int kMax) {
  float x = d.x, y = d.y, z = d.z;
  b[0] = 0.28209479177387814;
  if (kMax > 1) {
    b[1] = 0.4886025119029199 * y;
    b[2] = 0.4886025119029199 * z;
    b[3] = 0.4886025119029199 * x;
  }
  if (kMax > 4) {
    float xx = x * x, yy = y * y, zz = z * z;
    b[4] = 1.0925484305920792 * x * y;
    b[5] = 1.0925484305920792 * y * z;
    b[6] = 0.31539156525252005 * (3.0 * zz - 1.0);
    b[7] = 1.0925484305920792 * x * z;
    b[8] = 0.5462742152960396 * (xx - yy);
    if (kMax > 9) {
      b[9] = 0.5900435899266435 * y * (3.0 * xx - yy);
      b[10] = 2.890611442640554 * x * y * z;
      b[11] = 0.4570457994644658 * y * (5.0 * zz - 1.0);
      b[12] = 0.3731763325901154 * z * (5.0 * zz - 3.0);
      b[13] = 0.4570457994644658 * x * (5.0 * zz - 1.0);
      b[14] = 1.445305721320277 * z * (xx - yy);
      b[15] = 0.5900435899266435 * x * (xx - 3.0 * yy);
    }
    if (kMax > 16) {
      b[16] = 2.5033429417967046 * x * y * (xx - yy);
      b[17] = 1.7701307697799304 * y * z * (3.0 * xx - yy);
      b[18] = 0.9461746957575601 * x * y * (7.0 * zz - 1.0);
      b[19] = 0.6690465435572892 * y * z * (7.0 * zz - 3.0);
      b[20] = 0.10578554691520431 * (35.0 * zz * zz - 30.0 * zz + 3.0);
      b[21] = 0.6690465435572892 * x * z * (7.0 * zz - 3.0);
      b[22] = 0.47308734787878004 * (xx - yy) * (7.0 * zz - 1.0);
      b[23] = 1.7701307697799304 * x * z * (xx - 3.0 * yy);
      b[24] = 0.6258357354491761 * (xx * xx - 6.0 * xx * yy + yy * yy);
    }
  }
}

void main() {
  vec3 camPos = viewR * vWorld + viewT;
  float z = camPos.z;
  float prev = texelFetch(prevDepth, ivec2(gl_FragCoord.xy), 0).r;
  // peel: only fragments strictly behind the previous layer survive
  if (z <= prev * (1.0 + 1e-6) + 1e-7) discard;

  vec3 dir = normalize(vWorld - eye);
  float basis[25];
  shBasis(dir, basis, KC > KD ? KC : KD);

  int p = int(vPlane + 0.5);
  // texel centers at integer grid coords == GL normalized (g + 0.5) / S
  vec2 g = vUv * texSize - 0.5;
  if (useDisp == 1 && KD > 0) {
    // GL texel centers at (i + 0.5) / S equal the core's integer-grid
    // convention, so the undisplaced normalized coordinate is vUv itself
    vec2 gd = vUv;
    vec2 disp = vec2(0.0);
    for (int k = 0; k < KD; k++) {
      disp += texture(dispTex, vec3(gd, float(p * KD + k))).rg * basis[k];
    }
    g += clamp(disp, vec2(-DISP_CLAMP), vec2(DISP_CLAMP));
  }
  vec2 gc = (g + 0.5) / texSize;
  vec3 rgb = vec3(0.0);
  for (int k = 0; k < KC; k++) {
    if (k >= colorCoeffs) break;
    rgb += texture(colorTex, vec3(gc, float(p * KC + k))).rgb * basis[k];
  }
  float a = texture(alphaTex, vec3(gc, float(p))).r;
  outColor = vec4(clamp(rgb, 0.0, 1.0) * a, a);
  outDepth = vec4(z, 0.0, 0.0, 1.0);
}
`;
}

/** Full-screen blit used for the initial depth clear and final resolve. */
export const QUAD_VERT = `#version 300 es
precision highp float;
layout(location = 0) in vec2 corner;
out vec2 vUv;
void main() {
  vUv = corner + 0.5;
  gl_Position = vec4(corner * 2.0, 0.0, 1.0);
}
`;

/** Copies a premultiplied peel texel unchanged; the front-to-back blend
 * state (ONE_MINUS_DST_ALPHA, ONE) does the compositing. */
export const PASSTHROUGH_FRAG = `#version 300 es
precision highp float;
in vec2 vUv;
uniform sampler2D src;
out vec4 outColor;
void main() {
  outColor = texture(src, vUv);
}
`;

export const RESOLVE_FRAG = `#version 300 es
precision highp float;
in vec2 vUv;
uniform sampler2D accum;   // front-to-back accumulated (premult rgb, alpha)
uniform vec3 background;
out vec4 outColor;
void main() {
  vec4 acc = texture(accum, vUv);
  outColor = vec4(acc.rgb + background * (1.0 - acc.a), 1.0);
}
`;

export const POINT_VERT = `#version 300 es
precision highp float;
layout(location = 0) in vec3 position;
layout(location = 1) in vec3 rgb;
layout(location = 2) in float mask;
uniform mat3 viewR;
uniform vec3 viewT;
uniform vec4 intr;
uniform vec2 viewport;
uniform vec2 depthRange;
uniform float pointSize;
out vec3 vRgb;
out float vMask;
out float vZ;
void main() {
  vec3 cam = viewR * position + viewT;
  vRgb = rgb;
  vMask = mask;
  vZ = cam.z;
  float x = intr.x * cam.x / cam.z + intr.z;
  float y = intr.y * cam.y / cam.z + intr.w;
  float ndcZ = 2.0 * (cam.z - depthRange.x) / (depthRange.y - depthRange.x) - 1.0;
  gl_Position = vec4((2.0 * x / viewport.x - 1.0) * cam.z,
                     (1.0 - 2.0 * y / viewport.y) * cam.z,
                     ndcZ * cam.z, cam.z);
  gl_PointSize = pointSize;
}
`;

export const POINT_FRAG = `#version 300 es
precision highp float;
in vec3 vRgb;
in float vMask;
in float vZ;
uniform sampler2D staticDepth; // composite camera-z of the static layer
uniform float occlusionTau;
uniform vec2 viewport;
out vec4 outColor;
void main() {
  float sd = texture(staticDepth, gl_FragCoord.xy / viewport).r;
  // soft visibility against the static surface (matches the core
  // compositor's sigmoid occlusion test); no static surface -> visible
  float vis = sd > 1e8 ? 1.0 : 1.0 / (1.0 + exp(-(sd - vZ) / occlusionTau));
  float m = vMask * vis;
  outColor = vec4(vRgb * m, m);
}
`;
