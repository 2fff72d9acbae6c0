export interface PgmImage {
  width: number;
  height: number;
  maxval: number;
  pixels: Uint16Array; // row-major
}

/** Parse binary P5 PGM (8-bit or big-endian 16-bit). */
export function parsePgm(buf: ArrayBuffer): PgmImage {
  const bytes = new Uint8Array(buf);
  let pos = 0;
  const token = () => {
    while (pos < bytes.length && /\s/.test(String.fromCharCode(bytes[pos]))) pos++;
    let start = pos;
    while (pos < bytes.length && !/\s/.test(String.fromCharCode(bytes[pos]))) pos++;
    return String.fromCharCode(...bytes.slice(start, pos));
  };
  const magic = token();
  if (magic !== "P5") throw new Error(`not a binary PGM: ${magic}`);
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const maxval = parseInt(token(), 10);
  pos++; // single whitespace after maxval
  const n = width * height;
  const pixels = new Uint16Array(n);
  if (maxval > 255) {
    for (let i = 0; i < n; i++) {
      pixels[i] = (bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1];
    }
  } else {
    for (let i = 0; i < n; i++) pixels[i] = bytes[pos + i];
  }
  return { width, height, maxval, pixels };
}

/** Class-label palette: background, trachea, tumor, char. */
export const LABEL_COLORS = ["#20242c", "#4f8fd0", "#d05c4f", "#3c3c3c"];
