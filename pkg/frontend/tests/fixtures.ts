// Shared fixtures: a 4x4 mask in the server's overlay color, a flat gray
// base frame, and the hand-computed alpha-over composite of the two.
// Composite rule per channel: round((mask * 160 + base * 95) / 255).

import { PNG } from "pngjs";
import { PngDecoder, RgbaImage } from "../src/overlay.js";

export const MASK_COLOR = [66, 133, 244, 160] as const;
export const BASE_GRAY = 100;

// 4x4 mask bits (1 = object)
export const MASK_BITS = [
  [0, 1, 1, 0],
  [1, 1, 1, 1],
  [0, 1, 1, 0],
  [0, 0, 0, 0],
];

// round((66*160 + 100*95)/255) = 79
// round((133*160 + 100*95)/255) = 121
// round((244*160 + 100*95)/255) = 190
export const COMPOSITE_OBJECT_PIXEL = [79, 121, 190, 255] as const;
export const COMPOSITE_BACKGROUND_PIXEL = [BASE_GRAY, BASE_GRAY, BASE_GRAY, 255] as const;

export function maskRgba(): RgbaImage {
  const data = new Uint8ClampedArray(4 * 4 * 4);
  MASK_BITS.flat().forEach((bit, i) => {
    data.set(bit ? MASK_COLOR : [0, 0, 0, 0], i * 4);
  });
  return { width: 4, height: 4, data };
}

export function baseFrame(): RgbaImage {
  const data = new Uint8ClampedArray(4 * 4 * 4);
  for (let i = 0; i < 16; i++) data.set([BASE_GRAY, BASE_GRAY, BASE_GRAY, 255], i * 4);
  return { width: 4, height: 4, data };
}

export function expectedComposite(): RgbaImage {
  const data = new Uint8ClampedArray(4 * 4 * 4);
  MASK_BITS.flat().forEach((bit, i) => {
    data.set(bit ? COMPOSITE_OBJECT_PIXEL : COMPOSITE_BACKGROUND_PIXEL, i * 4);
  });
  return { width: 4, height: 4, data };
}

export function encodePng(image: RgbaImage): Uint8Array {
  const png = new PNG({ width: image.width, height: image.height });
  png.data = Buffer.from(image.data);
  return new Uint8Array(PNG.sync.write(png));
}

export const nodePngDecoder: PngDecoder = async (bytes) => {
  const png = PNG.sync.read(Buffer.from(bytes));
  return {
    width: png.width,
    height: png.height,
    data: new Uint8ClampedArray(png.data),
  };
};

export function maskPngBase64(): string {
  return Buffer.from(encodePng(maskRgba())).toString("base64");
}

export const FIXTURE_RATIOS = [0.0, 0.25, 0.5, 1.0, 0.5];

// sparkline over width 100, height 20: x = i*99/4, y = 19*(1-r)
export const FIXTURE_SPARKLINE_PATH =
  "M 0 19 L 24.75 14.25 L 49.5 9.5 L 74.25 0 L 99 9.5";
