/** Viewer application: wires bundle loading, the GL renderer, camera
 * controls, the time scrubber, rendering toggles, and diagnostics.
 */

import { Bundle, fetchBundle } from "./bundle.js";
import { CameraController } from "./camera.js";
import { GlRenderer } from "./gl/renderer.js";
import { Intrinsics, Pose, identityPose, poseFromFlat, cameraCenter, vadd, vscale } from "./math3.js";

interface UiRefs {
  canvas: HTMLCanvasElement;
  scrub: HTMLInputElement;
  playBtn: HTMLButtonElement;
  modeBtn: HTMLButtonElement;
  bandSel: HTMLSelectElement;
  dispChk: HTMLInputElement;
  staticChk: HTMLInputElement;
  status: HTMLElement;
  errors: HTMLElement;
}

function refs(): UiRefs {
  const get = <T extends HTMLElement>(id: string): T => {
    const el = document.getElementById(id);
    if (!el) throw new Error(`missing element #${id}`);
    return el as T;
  };
  return {
    canvas: get<HTMLCanvasElement>("view"),
    scrub: get<HTMLInputElement>("scrub"),
    playBtn: get<HTMLButtonElement>("play"),
    modeBtn: get<HTMLButtonElement>("mode"),
    bandSel: get<HTMLSelectElement>("bands"),
    dispChk: get<HTMLInputElement>("disp"),
    staticChk: get<HTMLInputElement>("staticonly"),
    status: get("status"),
    errors: get("errors"),
  };
}

function showError(ui: UiRefs, message: string): void {
  const div = document.createElement("div");
  div.className = "error";
  div.textContent = message;
  ui.errors.appendChild(div);
}

export async function startApp(): Promise<void> {
  const ui = refs();
  const params = new URLSearchParams(window.location.search);
  const bundleUrl = params.get("bundle") ?? "bundle/";

  let bundle: Bundle;
  try {
    bundle = await fetchBundle(bundleUrl);
  } catch (err) {
    showError(ui, `failed to load bundle from ${bundleUrl}: ${String(err)}`);
    return;
  }

  const m = bundle.manifest;
  const K: Intrinsics = m.intrinsics ?? {
    fx: 500, fy: 500, cx: 320, cy: 180, width: 640, height: 360,
  };
  ui.canvas.width = K.width;
  ui.canvas.height = K.height;

  let renderer: GlRenderer;
  try {
    renderer = new GlRenderer(ui.canvas, bundle);
  } catch (err) {
    showError(ui, `renderer init failed: ${String(err)}`);
    return;
  }

  const initialPose: Pose = m.camera_path.length
    ? poseFromFlat(m.camera_path[0]) : identityPose();
  // orbit target: mean plane center
  let target: [number, number, number] = [0, 0, 0];
  for (const p of bundle.planes) target = vadd(target, p.center);
  if (bundle.planes.length) target = vscale(target, 1 / bundle.planes.length);
  const camera = new CameraController(initialPose, target);

  let frame = 0;
  let playing = false;
  let needsRender = true;
  const frameTimes: number[] = [];
  let lastTime = performance.now();

  const nFrames = Math.max(1, m.n_frames);
  ui.scrub.max = String(nFrames - 1);
  ui.scrub.disabled = m.static_only;
  ui.playBtn.disabled = m.static_only;
  for (let l = 0; l <= m.sh_degrees[0]; l++) {
    const opt = document.createElement("option");
    opt.value = String(l);
    opt.textContent = `SH bands ≤ ${l}`;
    if (l === m.sh_degrees[0]) opt.selected = true;
    ui.bandSel.appendChild(opt);
  }

  // --- input ------------------------------------------------------------
  let dragging = false;
  ui.canvas.addEventListener("pointerdown", (e) => {
    dragging = true;
    ui.canvas.setPointerCapture(e.pointerId);
  });
  ui.canvas.addEventListener("pointerup", () => { dragging = false; });
  ui.canvas.addEventListener("pointermove", (e) => {
    if (!dragging) return;
    camera.rotate(e.movementX, e.movementY);
    needsRender = true;
  });
  ui.canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    camera.dolly(Math.sign(e.deltaY));
    needsRender = true;
  }, { passive: false });
  window.addEventListener("keydown", (e) => {
    camera.keyDown(e.code);
    if (e.code === "KeyR") {
      camera.reset(initialPose);
      needsRender = true;
    }
  });
  window.addEventListener("keyup", (e) => camera.keyUp(e.code));

  ui.scrub.addEventListener("input", () => {
    frame = Number(ui.scrub.value);
    needsRender = true;
  });
  ui.playBtn.addEventListener("click", () => {
    playing = !playing;
    ui.playBtn.textContent = playing ? "pause" : "play";
  });
  ui.modeBtn.addEventListener("click", () => {
    camera.mode = camera.mode === "orbit" ? "fly" : "orbit";
    ui.modeBtn.textContent = camera.mode;
  });
  for (const el of [ui.bandSel, ui.dispChk, ui.staticChk]) {
    el.addEventListener("change", () => { needsRender = true; });
  }

  // --- frame loop ---------------------------------------------------------
  let lastFrameAdvance = performance.now();
  const benchMode = params.get("bench") === "1";
  let benchFrames = benchMode ? 300 : 0;

  function loop(now: number): void {
    const dt = (now - lastTime) / 1000;
    lastTime = now;
    camera.tick(dt);
    if (camera.mode === "fly" && dt > 0) needsRender = true;

    if (playing && now - lastFrameAdvance > 1000 / 30) {
      frame = (frame + 1) % nFrames;
      ui.scrub.value = String(frame);
      lastFrameAdvance = now;
      needsRender = true;
    }

    if (needsRender || benchFrames > 0) {
      const t0 = performance.now();
      try {
        renderer.render(camera.pose, K, {
          frame: ui.staticChk.checked || m.static_only ? -1 : frame,
          colorBandCap: Number(ui.bandSel.value),
          displacement: ui.dispChk.checked,
        });
      } catch (err) {
        showError(ui, `render failed: ${String(err)}`);
        return;
      }
      const ms = performance.now() - t0;
      frameTimes.push(ms);
      if (frameTimes.length > 120) frameTimes.shift();
      if (ms > 50) {
        showError(ui, `frame stall: ${ms.toFixed(1)} ms (budget 50 ms)`);
      }
      needsRender = false;
      if (benchFrames > 0) {
        benchFrames--;
        if (benchFrames === 0) {
          const sorted = [...frameTimes].sort((a, b) => a - b);
          const med = sorted[Math.floor(sorted.length / 2)];
          ui.status.textContent =
            `bench: median ${med.toFixed(2)} ms/frame (${(1000 / med).toFixed(1)} FPS), `
            + `${bundle.planes.length} planes at ${K.width}x${K.height}`;
          requestAnimationFrame(loop);
          return;
        }
      }
      const sorted = [...frameTimes].sort((a, b) => a - b);
      const med = sorted[Math.floor(sorted.length / 2)];
      ui.status.textContent =
        `${bundle.planes.length} planes | ${K.width}x${K.height} | frame ${frame}`
        + `${m.static_only ? " (static)" : ""} | ${med.toFixed(1)} ms median`;
    }
    requestAnimationFrame(loop);
  }
  requestAnimationFrame(loop);
}
