// Browser entry point: DOM wiring only; all pixel/path math lives in the
// pure modules so it stays testable without a browser.

import { ApiClient } from "./api.js";
import { compositeOverlay, PngDecoder, RgbaImage } from "./overlay.js";
import { sparklinePath } from "./sparkline.js";
import { DEFAULT_PARAMS, SessionController, UiState } from "./state.js";

const canvasDecoder: PngDecoder = async (bytes) => {
  const buf = new ArrayBuffer(bytes.length);
  new Uint8Array(buf).set(bytes);
  const bitmap = await createImageBitmap(new Blob([buf], { type: "image/png" }));
  const canvas = document.createElement("canvas");
  canvas.width = bitmap.width;
  canvas.height = bitmap.height;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  const data = ctx.getImageData(0, 0, bitmap.width, bitmap.height);
  return { width: data.width, height: data.height, data: data.data };
};

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

window.addEventListener("DOMContentLoaded", () => {
  const api = new ApiClient("");
  const upload = el<HTMLInputElement>("upload");
  const scrubber = el<HTMLInputElement>("scrubber");
  const frameLabel = el<HTMLSpanElement>("frame-label");
  const canvas = el<HTMLCanvasElement>("frame-canvas");
  const propagateBtn = el<HTMLButtonElement>("propagate");
  const sparkline = el<HTMLElement>("sparkline-path");
  const generateBtn = el<HTMLButtonElement>("generate");
  const stepsInput = el<HTMLInputElement>("steps");
  const cfgInput = el<HTMLInputElement>("cfg-scale");
  const seedInput = el<HTMLInputElement>("seed");
  const jobList = el<HTMLUListElement>("jobs");
  const errorBox = el<HTMLDivElement>("error");
  const ctx = canvas.getContext("2d")!;

  stepsInput.value = String(DEFAULT_PARAMS.steps);
  cfgInput.value = String(DEFAULT_PARAMS.cfg_scale);

  let frame: RgbaImage | null = null;

  const controller = new SessionController(api, canvasDecoder, render);

  async function drawFrame(state: UiState): Promise<void> {
    const url = controller.frameUrl();
    if (!url) return;
    const img = new Image();
    img.src = url + `?cache=${state.frameIndex}`;
    await img.decode();
    canvas.width = img.naturalWidth;
    canvas.height = img.naturalHeight;
    ctx.drawImage(img, 0, 0);
    frame = {
      width: canvas.width,
      height: canvas.height,
      data: ctx.getImageData(0, 0, canvas.width, canvas.height).data,
    };
    if (state.maskImage && state.maskImage.width === frame.width) {
      const blended = compositeOverlay(frame, state.maskImage);
      const pixels = new Uint8ClampedArray(new ArrayBuffer(blended.data.length));
      pixels.set(blended.data);
      ctx.putImageData(new ImageData(pixels, blended.width, blended.height), 0, 0);
    }
  }

  function render(state: UiState): void {
    errorBox.textContent = state.error ?? "";
    errorBox.classList.toggle("visible", state.error !== null);
    scrubber.max = String(Math.max(0, state.frameCount - 1));
    scrubber.value = String(state.frameIndex);
    scrubber.disabled = state.frameCount === 0;
    frameLabel.textContent = state.frameCount
      ? `frame ${state.frameIndex + 1}/${state.frameCount}`
      : "no video";
    propagateBtn.disabled = !controller.canPropagate;
    generateBtn.disabled = state.areaRatios === null;
    if (state.areaRatios) {
      sparkline.setAttribute("d", sparklinePath(state.areaRatios, 320, 48));
    }
    jobList.replaceChildren(
      ...state.jobs.map((job) => {
        const li = document.createElement("li");
        li.textContent = `${job.id}: ${job.status} `;
        if (job.audioUrl) {
          const audio = document.createElement("audio");
          audio.controls = true;
          audio.src = job.audioUrl;
          li.appendChild(audio);
        }
        if (job.error) {
          const span = document.createElement("span");
          span.className = "job-error";
          span.textContent = job.error;
          li.appendChild(span);
        }
        return li;
      }),
    );
    void drawFrame(state);
  }

  upload.addEventListener("change", () => {
    const file = upload.files?.[0];
    if (file) void controller.uploadFlow(file, file.name);
  });

  scrubber.addEventListener("input", () => {
    controller.selectFrame(Number(scrubber.value));
  });

  // plain click adds a positive point; hold Alt (or right-click) to carve
  // away a region with a negative point
  canvas.addEventListener("click", (e) => {
    const rect = canvas.getBoundingClientRect();
    const x = Math.floor(((e.clientX - rect.left) / rect.width) * canvas.width);
    const y = Math.floor(((e.clientY - rect.top) / rect.height) * canvas.height);
    void controller.clickToMask(x, y, e.altKey ? "negative" : "positive");
  });
  canvas.addEventListener("contextmenu", (e) => {
    e.preventDefault();
    const rect = canvas.getBoundingClientRect();
    const x = Math.floor(((e.clientX - rect.left) / rect.width) * canvas.width);
    const y = Math.floor(((e.clientY - rect.top) / rect.height) * canvas.height);
    void controller.clickToMask(x, y, "negative");
  });

  propagateBtn.addEventListener("click", () => void controller.propagateAndPreview());

  generateBtn.addEventListener("click", () => {
    void controller.generateAndPlay({
      steps: Number(stepsInput.value),
      cfg_scale: Number(cfgInput.value),
      seed: Number(seedInput.value),
    });
  });

  render(controller.state);
});
