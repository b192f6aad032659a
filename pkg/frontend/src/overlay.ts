// Pure pixel math for the mask overlay. The server returns the mask as an
// RGBA PNG; once decoded, compositing over the frame is integer alpha-over,
// which keeps golden-image tests exact.

export interface RgbaImage {
  width: number;
  height: number;
  data: Uint8ClampedArray; // RGBA, row-major
}

export function makeImage(width: number, height: number, fill: [number, number, number, number] = [0, 0, 0, 255]): RgbaImage {
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    data.set(fill, i * 4);
  }
  return { width, height, data };
}

/** Alpha-over compositing of `mask` onto `frame`; both must share size.
 *  out = round((mask * a + frame * (255 - a)) / 255), output alpha 255. */
export function compositeOverlay(frame: RgbaImage, mask: RgbaImage): RgbaImage {
  if (frame.width !== mask.width || frame.height !== mask.height) {
    throw new Error(
      `size mismatch: frame ${frame.width}x${frame.height} vs mask ${mask.width}x${mask.height}`,
    );
  }
  const out = new Uint8ClampedArray(frame.data.length);
  for (let px = 0; px < frame.width * frame.height; px++) {
    const i = px * 4;
    const a = mask.data[i + 3];
    for (let c = 0; c < 3; c++) {
      out[i + c] = Math.round((mask.data[i + c] * a + frame.data[i + c] * (255 - a)) / 255);
    }
    out[i + 3] = 255;
  }
  return { width: frame.width, height: frame.height, data: out };
}

const B64_ALPHABET = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";

export function decodeBase64(b64: string): Uint8Array {
  if (typeof atob === "function") {
    const bin = atob(b64);
    const out = new Uint8Array(bin.length);
    for (let i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }
  // minimal fallback for runtimes without atob
  const clean = b64.replace(/=+$/, "");
  const out: number[] = [];
  let buffer = 0;
  let bits = 0;
  for (const ch of clean) {
    const value = B64_ALPHABET.indexOf(ch);
    if (value < 0) continue;
    buffer = (buffer << 6) | value;
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push((buffer >> bits) & 0xff);
    }
  }
  return new Uint8Array(out);
}

/** PNG bytes -> RGBA pixels. The browser uses canvas; tests inject a node
 *  decoder. */
export type PngDecoder = (bytes: Uint8Array) => Promise<RgbaImage>;
