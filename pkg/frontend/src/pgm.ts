// Decoder for the server's 8-bit binary grayscale images (P5).
// Header: "P5", width, height, maxval 255, separated by whitespace, with
// optional "#" comment lines; one whitespace byte ends the header, then
// width*height pixel bytes follow in row-major order.

export interface GrayImage {
  width: number;
  height: number;
  pixels: Uint8Array;
}

const WHITESPACE = new Set([0x20, 0x09, 0x0a, 0x0d, 0x0b, 0x0c]);

function isWhitespace(byte: number | undefined): boolean {
  return byte !== undefined && WHITESPACE.has(byte);
}

function readToken(data: Uint8Array, pos: number): { token: string; next: number } {
  while (pos < data.length) {
    if (isWhitespace(data[pos])) {
      pos += 1;
    } else if (data[pos] === 0x23) {
      while (pos < data.length && data[pos] !== 0x0a) pos += 1;
    } else {
      break;
    }
  }
  const start = pos;
  while (pos < data.length && !isWhitespace(data[pos]) && data[pos] !== 0x23) pos += 1;
  if (pos === start) {
    throw new Error("truncated grayscale header");
  }
  let token = "";
  for (let i = start; i < pos; i += 1) token += String.fromCharCode(data[i]!);
  return { token, next: pos };
}

export function decodePgm(data: Uint8Array): GrayImage {
  let pos = 0;
  const magic = readToken(data, pos);
  if (magic.token !== "P5") {
    throw new Error("not a binary grayscale (P5) image");
  }
  const widthTok = readToken(data, magic.next);
  const heightTok = readToken(data, widthTok.next);
  const maxvalTok = readToken(data, heightTok.next);
  const width = Number(widthTok.token);
  const height = Number(heightTok.token);
  const maxval = Number(maxvalTok.token);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new Error("bad grayscale dimensions");
  }
  if (maxval !== 255) {
    throw new Error("only 8-bit grayscale is supported");
  }
  pos = maxvalTok.next;
  if (!isWhitespace(data[pos])) {
    throw new Error("missing header terminator");
  }
  pos += 1;
  const expected = width * height;
  const pixels = data.slice(pos, pos + expected);
  if (pixels.length !== expected) {
    throw new Error("truncated pixel data");
  }
  return { width, height, pixels };
}

// Expand to RGBA for a canvas ImageData buffer.
export function toRgba(image: GrayImage): Uint8ClampedArray {
  const out = new Uint8ClampedArray(image.width * image.height * 4);
  for (let i = 0; i < image.pixels.length; i += 1) {
    const v = image.pixels[i]!;
    const j = i * 4;
    out[j] = v;
    out[j + 1] = v;
    out[j + 2] = v;
    out[j + 3] = 255;
  }
  return out;
}
