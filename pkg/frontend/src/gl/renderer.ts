/** WebGL2 renderer: depth-peeled plane soup + dynamic point layer.
 *
 * Peeling runs up to FRAGMENT_CAP passes; each pass keeps the nearest
 * fragment strictly behind the previous peel and blends it front-to-back
 * into an accumulation target, which reproduces the core far-to-near over
 * composite. Pixels still uncovered after the last peel fall back to the
 * background, i.e. the farthest fragments are the ones dropped. Exact
 * depth ties between coplanar planes resolve by GL rasterization order
 * instead of plane index; ties are measure-zero under interactive cameras.
 */

import { Bundle } from "../bundle.js";
import { FRAGMENT_CAP } from "../cpu.js";
import { Intrinsics, Pose } from "../math3.js";
import {
  PASSTHROUGH_FRAG, PEEL_VERT, POINT_FRAG, POINT_VERT, QUAD_VERT,
  RESOLVE_FRAG, peelFrag,
} from "./shaders.js";

export interface RenderOptions {
  background?: [number, number, number];
  colorBandCap?: number;
  displacement?: boolean;
  /** dynamic frame index, or -1 for static only */
  frame?: number;
  occlusionTau?: number;
  peels?: number;
}

export class GlError extends Error {}

function compile(gl: WebGL2RenderingContext, type: number, src: string): WebGLShader {
  const sh = gl.createShader(type);
  if (!sh) throw new GlError("createShader failed");
  gl.shaderSource(sh, src);
  gl.compileShader(sh);
  if (!gl.getShaderParameter(sh, gl.COMPILE_STATUS)) {
    throw new GlError(`shader compile failed: ${gl.getShaderInfoLog(sh)}`);
  }
  return sh;
}

function link(gl: WebGL2RenderingContext, vert: string, frag: string): WebGLProgram {
  const prog = gl.createProgram();
  if (!prog) throw new GlError("createProgram failed");
  gl.attachShader(prog, compile(gl, gl.VERTEX_SHADER, vert));
  gl.attachShader(prog, compile(gl, gl.FRAGMENT_SHADER, frag));
  gl.linkProgram(prog);
  if (!gl.getProgramParameter(prog, gl.LINK_STATUS)) {
    throw new GlError(`program link failed: ${gl.getProgramInfoLog(prog)}`);
  }
  return prog;
}

export class GlRenderer {
  private gl: WebGL2RenderingContext;
  private bundle: Bundle;
  private peelProg: WebGLProgram;
  private resolveProg: WebGLProgram;
  private blendProg: WebGLProgram;
  private pointProg: WebGLProgram;
  private quadVao: WebGLVertexArrayObject;
  private planeVao: WebGLVertexArrayObject;
  private pointVaos: (WebGLVertexArrayObject | null)[] = [];
  private colorTex: WebGLTexture;
  private alphaTex: WebGLTexture;
  private dispTex: WebGLTexture;
  private depthTex: [WebGLTexture, WebGLTexture];
  private firstDepthTex: WebGLTexture;
  private peelColorTex: WebGLTexture;
  private accumTex: WebGLTexture;
  private peelFbo: WebGLFramebuffer;
  private accumFbo: WebGLFramebuffer;
  private copyFbo: WebGLFramebuffer;
  private depthRb: WebGLRenderbuffer;
  private fbWidth = 0;
  private fbHeight = 0;
  private depthFar: number;

  constructor(canvas: HTMLCanvasElement, bundle: Bundle) {
    const gl = canvas.getContext("webgl2", { antialias: false, alpha: false });
    if (!gl) throw new GlError("WebGL2 is not available");
    this.gl = gl;
    this.bundle = bundle;
    if (!gl.getExtension("EXT_color_buffer_float")) {
      throw new GlError("EXT_color_buffer_float is required (float render targets)");
    }

    const [lColor, lDisp] = bundle.manifest.sh_degrees;
    this.peelProg = link(gl, PEEL_VERT, peelFrag(lColor, lDisp));
    this.resolveProg = link(gl, QUAD_VERT, RESOLVE_FRAG);
    this.blendProg = link(gl, QUAD_VERT, PASSTHROUGH_FRAG);
    this.pointProg = link(gl, POINT_VERT, POINT_FRAG);

    this.quadVao = this.makeQuadVao();
    this.planeVao = this.makePlaneVao();
    this.makePointVaos();
    this.colorTex = this.uploadColorArray();
    this.alphaTex = this.uploadAlphaArray();
    this.dispTex = this.uploadDispArray();

    // scene depth extent for the clip-depth mapping
    let far = 10;
    for (const p of bundle.planes) {
      far = Math.max(far, Math.hypot(p.center[0], p.center[1], p.center[2])
        + Math.max(p.width, p.height));
    }
    this.depthFar = far * 4;

    this.depthTex = [gl.createTexture()!, gl.createTexture()!];
    this.firstDepthTex = gl.createTexture()!;
    this.peelColorTex = gl.createTexture()!;
    this.accumTex = gl.createTexture()!;
    this.peelFbo = gl.createFramebuffer()!;
    this.accumFbo = gl.createFramebuffer()!;
    this.copyFbo = gl.createFramebuffer()!;
    this.depthRb = gl.createRenderbuffer()!;
  }

  private makeQuadVao(): WebGLVertexArrayObject {
    const gl = this.gl;
    const vao = gl.createVertexArray()!;
    gl.bindVertexArray(vao);
    const buf = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, buf);
    gl.bufferData(gl.ARRAY_BUFFER, new Float32Array([
      -0.5, -0.5, 0.5, -0.5, -0.5, 0.5, 0.5, 0.5,
    ]), gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);
    gl.bindVertexArray(null);
    return vao;
  }

  private makePlaneVao(): WebGLVertexArrayObject {
    const gl = this.gl;
    const { planes } = this.bundle;
    const vao = gl.createVertexArray()!;
    gl.bindVertexArray(vao);

    const quad = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, quad);
    gl.bufferData(gl.ARRAY_BUFFER, new Float32Array([
      -0.5, -0.5, 0.5, -0.5, -0.5, 0.5, 0.5, 0.5,
    ]), gl.STATIC_DRAW);
    gl.enableVertexAttribArray(0);
    gl.vertexAttribPointer(0, 2, gl.FLOAT, false, 0, 0);

    // per-instance: axisU(3) axisV(3) center(3) extent(2) index(1)
    const stride = 12;
    const data = new Float32Array(planes.length * stride);
    for (let p = 0; p < planes.length; p++) {
      const b = planes[p].basis; // columns are axis u, axis v, normal
      data.set([
        b[0], b[3], b[6],
        b[1], b[4], b[7],
        planes[p].center[0], planes[p].center[1], planes[p].center[2],
        planes[p].width, planes[p].height, p,
      ], p * stride);
    }
    const inst = gl.createBuffer()!;
    gl.bindBuffer(gl.ARRAY_BUFFER, inst);
    gl.bufferData(gl.ARRAY_BUFFER, data, gl.STATIC_DRAW);
    const bytes = stride * 4;
    const layout: [number, number, number][] = [
      [1, 3, 0], [2, 3, 12], [3, 3, 24], [4, 2, 36], [5, 1, 44],
    ];
    for (const [loc, size, offset] of layout) {
      gl.enableVertexAttribArray(loc);
      gl.vertexAttribPointer(loc, size, gl.FLOAT, false, bytes, offset);
      gl.vertexAttribDivisor(loc, 1);
    }
    gl.bindVertexArray(null);
    return vao;
  }

  private makePointVaos(): void {
    const gl = this.gl;
    for (const frame of this.bundle.dynamic) {
      if (frame.count === 0) {
        this.pointVaos.push(null);
        continue;
      }
      const vao = gl.createVertexArray()!;
      gl.bindVertexArray(vao);
      const interleaved = new Float32Array(frame.count * 7);
      for (let i = 0; i < frame.count; i++) {
        interleaved.set([
          frame.positions[3 * i], frame.positions[3 * i + 1], frame.positions[3 * i + 2],
          frame.rgb[3 * i], frame.rgb[3 * i + 1], frame.rgb[3 * i + 2],
          frame.mask[i],
        ], i * 7);
      }
      const buf = gl.createBuffer()!;
      gl.bindBuffer(gl.ARRAY_BUFFER, buf);
      gl.bufferData(gl.ARRAY_BUFFER, interleaved, gl.STATIC_DRAW);
      gl.enableVertexAttribArray(0);
      gl.vertexAttribPointer(0, 3, gl.FLOAT, false, 28, 0);
      gl.enableVertexAttribArray(1);
      gl.vertexAttribPointer(1, 3, gl.FLOAT, false, 28, 12);
      gl.enableVertexAttribArray(2);
      gl.vertexAttribPointer(2, 1, gl.FLOAT, false, 28, 24);
      gl.bindVertexArray(null);
      this.pointVaos.push(vao);
    }
  }

  private uploadColorArray(): WebGLTexture {
    const gl = this.gl;
    const { colorSh, manifest, kColor } = this.bundle;
    const s = manifest.texture_size;
    const n = manifest.n_planes;
    // repack [N, S, S, 3, Kc] -> layer (p * Kc + k) as RGBA rows
    const layers = n * kColor;
    const data = new Float32Array(layers * s * s * 4);
    for (let p = 0; p < n; p++) {
      for (let y = 0; y < s; y++) {
        for (let x = 0; x < s; x++) {
          const src = ((p * s + y) * s + x) * 3 * kColor;
          for (let k = 0; k < kColor; k++) {
            const dst = (((p * kColor + k) * s + y) * s + x) * 4;
            data[dst] = colorSh[src + k];
            data[dst + 1] = colorSh[src + kColor + k];
            data[dst + 2] = colorSh[src + 2 * kColor + k];
            data[dst + 3] = 1;
          }
        }
      }
    }
    return this.makeArrayTexture(gl.RGBA16F, gl.RGBA, gl.FLOAT, s, layers, data);
  }

  private uploadAlphaArray(): WebGLTexture {
    const gl = this.gl;
    const { alphaU8, manifest } = this.bundle;
    const s = manifest.texture_size;
    gl.pixelStorei(gl.UNPACK_ALIGNMENT, 1);
    const tex = this.makeArrayTexture(gl.R8, gl.RED, gl.UNSIGNED_BYTE, s,
      manifest.n_planes, alphaU8);
    gl.pixelStorei(gl.UNPACK_ALIGNMENT, 4);
    return tex;
  }

  private uploadDispArray(): WebGLTexture {
    const gl = this.gl;
    const { dispSh, manifest, kDisp } = this.bundle;
    const sd = manifest.disp_size;
    const n = manifest.n_planes;
    const layers = Math.max(1, n * kDisp);
    const data = new Float32Array(layers * sd * sd * 2);
    for (let p = 0; p < n; p++) {
      for (let y = 0; y < sd; y++) {
        for (let x = 0; x < sd; x++) {
          const src = ((p * sd + y) * sd + x) * 2 * kDisp;
          for (let k = 0; k < kDisp; k++) {
            const dst = (((p * kDisp + k) * sd + y) * sd + x) * 2;
            data[dst] = dispSh[src + k];
            data[dst + 1] = dispSh[src + kDisp + k];
          }
        }
      }
    }
    return this.makeArrayTexture(gl.RG16F, gl.RG, gl.FLOAT, sd, layers, data);
  }

  private makeArrayTexture(internal: number, format: number, type: number,
                           size: number, layers: number,
                           data: ArrayBufferView): WebGLTexture {
    const gl = this.gl;
    const tex = gl.createTexture()!;
    gl.bindTexture(gl.TEXTURE_2D_ARRAY, tex);
    gl.texImage3D(gl.TEXTURE_2D_ARRAY, 0, internal, size, size, layers, 0,
      format, type, data as ArrayBufferView);
    gl.texParameteri(gl.TEXTURE_2D_ARRAY, gl.TEXTURE_MIN_FILTER, gl.LINEAR);
    gl.texParameteri(gl.TEXTURE_2D_ARRAY, gl.TEXTURE_MAG_FILTER, gl.LINEAR);
    gl.texParameteri(gl.TEXTURE_2D_ARRAY, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
    gl.texParameteri(gl.TEXTURE_2D_ARRAY, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
    return tex;
  }

  private ensureTargets(w: number, h: number): void {
    if (w === this.fbWidth && h === this.fbHeight) return;
    const gl = this.gl;
    this.fbWidth = w;
    this.fbHeight = h;
    const setup = (tex: WebGLTexture, internal: number) => {
      gl.bindTexture(gl.TEXTURE_2D, tex);
      gl.texStorage2D(gl.TEXTURE_2D, 1, internal, w, h);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MIN_FILTER, gl.NEAREST);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_MAG_FILTER, gl.NEAREST);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_S, gl.CLAMP_TO_EDGE);
      gl.texParameteri(gl.TEXTURE_2D, gl.TEXTURE_WRAP_T, gl.CLAMP_TO_EDGE);
    };
    // texStorage2D is immutable; recreate on resize
    for (let i = 0; i < 2; i++) {
      gl.deleteTexture(this.depthTex[i]);
      this.depthTex[i] = gl.createTexture()!;
      setup(this.depthTex[i], gl.R32F);
    }
    gl.deleteTexture(this.firstDepthTex);
    this.firstDepthTex = gl.createTexture()!;
    setup(this.firstDepthTex, gl.R32F);
    gl.deleteTexture(this.peelColorTex);
    this.peelColorTex = gl.createTexture()!;
    setup(this.peelColorTex, gl.RGBA16F);
    gl.deleteTexture(this.accumTex);
    this.accumTex = gl.createTexture()!;
    setup(this.accumTex, gl.RGBA16F);
    gl.bindRenderbuffer(gl.RENDERBUFFER, this.depthRb);
    gl.renderbufferStorage(gl.RENDERBUFFER, gl.DEPTH_COMPONENT24, w, h);
  }

  private setPose(prog: WebGLProgram, pose: Pose, K: Intrinsics): void {
    const gl = this.gl;
    // GLSL mat3 constructor order is column-major; transpose=true handles it
    gl.uniformMatrix3fv(gl.getUniformLocation(prog, "viewR"), true,
      new Float32Array(pose.r));
    gl.uniform3fv(gl.getUniformLocation(prog, "viewT"), new Float32Array(pose.t));
    gl.uniform4f(gl.getUniformLocation(prog, "intr"), K.fx, K.fy, K.cx, K.cy);
    gl.uniform2f(gl.getUniformLocation(prog, "viewport"), K.width, K.height);
    gl.uniform2f(gl.getUniformLocation(prog, "depthRange"), 1e-3, this.depthFar);
  }

  /** Render one frame into the canvas. */
  render(pose: Pose, K: Intrinsics, opts: RenderOptions = {}): void {
    const gl = this.gl;
    const w = K.width;
    const h = K.height;
    this.ensureTargets(w, h);
    gl.viewport(0, 0, w, h);
    const bg = opts.background ?? [0, 0, 0];
    const nPeels = Math.min(opts.peels ?? FRAGMENT_CAP,
      Math.max(1, this.bundle.planes.length));
    const eye = this.eye(pose);

    // clear the accumulator and the "previous peel" depth (0 = nothing)
    gl.bindFramebuffer(gl.FRAMEBUFFER, this.accumFbo);
    gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT0, gl.TEXTURE_2D,
      this.accumTex, 0);
    gl.clearColor(0, 0, 0, 0);
    gl.clear(gl.COLOR_BUFFER_BIT);
    let prev = 0;
    let cur = 1;
    gl.bindFramebuffer(gl.FRAMEBUFFER, this.copyFbo);
    gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT0, gl.TEXTURE_2D,
      this.depthTex[prev], 0);
    gl.clear(gl.COLOR_BUFFER_BIT);

    for (let peel = 0; peel < nPeels; peel++) {
      // pass 1: nearest fragment strictly behind the previous peel
      gl.bindFramebuffer(gl.FRAMEBUFFER, this.peelFbo);
      gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT0, gl.TEXTURE_2D,
        this.peelColorTex, 0);
      gl.framebufferTexture2D(gl.FRAMEBUFFER, gl.COLOR_ATTACHMENT1, gl.TEXTURE_2D,
        this.depthTex[cur], 0);
      gl.framebufferRenderbuffer(gl.FRAMEBUFFER, gl.DEPTH_ATTACHMENT,
        gl.RENDERBUFFER, this.depthRb);
      gl.drawBuffers([gl.COLOR_ATTACHMENT0, gl.COLOR_ATTACHMENT1]);
      gl.clearBufferfv(gl.COLOR, 0, [0, 0, 0, 0]);
      gl.clearBufferfv(gl.COLOR, 1, [1e30, 0, 0, 0]);
      gl.clearBufferfi(gl.DEPTH_STENCIL, 0, 1, 0);
      gl.enable(gl.DEPTH_TEST);
      gl.depthFunc(gl.LESS);
      gl.disable(gl.BLEND);

      gl.useProgram(this.peelProg);
      this.setPose(this.peelProg, pose, K);
      gl.uniform3fv(gl.getUniformLocation(this.peelProg, "eye"), new Float32Array(eye));
      gl.uniform1f(gl.getUniformLocation(this.peelProg, "texSize"),
        this.bundle.manifest.texture_size);
      gl.uniform1f(gl.getUniformLocation(this.peelProg, "dispSize"),
        this.bundle.manifest.disp_size);
      const cap = opts.colorBandCap;
      const kc = cap === undefined ? this.bundle.kColor
        : Math.min(this.bundle.kColor, (Math.min(cap, 4) + 1) ** 2);
      gl.uniform1i(gl.getUniformLocation(this.peelProg, "colorCoeffs"), kc);
      gl.uniform1i(gl.getUniformLocation(this.peelProg, "useDisp"),
        (opts.displacement ?? true) ? 1 : 0);
      gl.activeTexture(gl.TEXTURE0);
      gl.bindTexture(gl.TEXTURE_2D_ARRAY, this.colorTex);
      gl.uniform1i(gl.getUniformLocation(this.peelProg, "colorTex"), 0);
      gl.activeTexture(gl.TEXTURE1);
      gl.bindTexture(gl.TEXTURE_2D_ARRAY, this.alphaTex);
      gl.uniform1i(gl.getUniformLocation(this.peelProg, "alphaTex"), 1);
      gl.activeTexture(gl.TEXTURE2);
      gl.bindTexture(gl.TEXTURE_2D_ARRAY, this.dispTex);
      gl.uniform1i(gl.getUniformLocation(this.peelProg, "dispTex"), 2);
      gl.activeTexture(gl.TEXTURE3);
      gl.bindTexture(gl.TEXTURE_2D, this.depthTex[prev]);
      gl.uniform1i(gl.getUniformLocation(this.peelProg, "prevDepth"), 3);

      gl.bindVertexArray(this.planeVao);
      gl.drawArraysInstanced(gl.TRIANGLE_STRIP, 0, 4, this.bundle.planes.length);

      if (peel === 0) {
        // keep the nearest-surface depth for the dynamic point occlusion
        gl.bindFramebuffer(gl.READ_FRAMEBUFFER, this.peelFbo);
        gl.readBuffer(gl.COLOR_ATTACHMENT1);
        gl.bindTexture(gl.TEXTURE_2D, this.firstDepthTex);
        gl.copyTexSubImage2D(gl.TEXTURE_2D, 0, 0, 0, 0, 0, w, h);
      }

      // pass 2: blend the peel front-to-back into the accumulator
      gl.bindFramebuffer(gl.FRAMEBUFFER, this.accumFbo);
      gl.disable(gl.DEPTH_TEST);
      gl.enable(gl.BLEND);
      gl.blendFunc(gl.ONE_MINUS_DST_ALPHA, gl.ONE);
      gl.useProgram(this.blendProg);
      gl.activeTexture(gl.TEXTURE0);
      gl.bindTexture(gl.TEXTURE_2D, this.peelColorTex);
      gl.uniform1i(gl.getUniformLocation(this.blendProg, "src"), 0);
      gl.bindVertexArray(this.quadVao);
      gl.drawArrays(gl.TRIANGLE_STRIP, 0, 4);

      [prev, cur] = [cur, prev];
    }

    // resolve to the canvas with the background
    gl.bindFramebuffer(gl.FRAMEBUFFER, null);
    gl.viewport(0, 0, gl.drawingBufferWidth, gl.drawingBufferHeight);
    gl.disable(gl.BLEND);
    gl.disable(gl.DEPTH_TEST);
    gl.useProgram(this.resolveProg);
    gl.uniform3f(gl.getUniformLocation(this.resolveProg, "background"),
      bg[0], bg[1], bg[2]);
    gl.activeTexture(gl.TEXTURE0);
    gl.bindTexture(gl.TEXTURE_2D, this.accumTex);
    gl.uniform1i(gl.getUniformLocation(this.resolveProg, "accum"), 0);
    gl.bindVertexArray(this.quadVao);
    gl.drawArrays(gl.TRIANGLE_STRIP, 0, 4);

    // dynamic point layer over the resolved static render
    const frame = opts.frame ?? -1;
    const vao = frame >= 0 && frame < this.pointVaos.length
      ? this.pointVaos[frame] : null;
    if (vao) {
      gl.enable(gl.BLEND);
      gl.blendFunc(gl.ONE, gl.ONE_MINUS_SRC_ALPHA);
      gl.useProgram(this.pointProg);
      this.setPose(this.pointProg, pose, K);
      gl.uniform1f(gl.getUniformLocation(this.pointProg, "pointSize"),
        Math.max(1, gl.drawingBufferWidth / K.width));
      gl.uniform1f(gl.getUniformLocation(this.pointProg, "occlusionTau"),
        opts.occlusionTau ?? 0.05);
      gl.uniform2f(gl.getUniformLocation(this.pointProg, "viewport"), w, h);
      gl.activeTexture(gl.TEXTURE0);
      gl.bindTexture(gl.TEXTURE_2D, this.firstDepthTex);
      gl.uniform1i(gl.getUniformLocation(this.pointProg, "staticDepth"), 0);
      gl.bindVertexArray(vao);
      gl.drawArrays(gl.POINTS, 0, this.bundle.dynamic[frame].count);
      gl.disable(gl.BLEND);
    }
    gl.bindVertexArray(null);
  }

  private eye(pose: Pose): [number, number, number] {
    const r = pose.r;
    const t = pose.t;
    return [
      -(r[0] * t[0] + r[3] * t[1] + r[6] * t[2]),
      -(r[1] * t[0] + r[4] * t[1] + r[7] * t[2]),
      -(r[2] * t[0] + r[5] * t[1] + r[8] * t[2]),
    ];
  }
}
