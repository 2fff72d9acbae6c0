export interface ParsedCloud {
  points: number[][]; // [x, y, z]
  labels: number[] | null;
}

/** Parse the ASCII PCD subset the gateway serves (x y z [label]). */
export function parsePcd(text: string): ParsedCloud {
  const lines = text.split("\n");
  let fields: string[] = [];
  let count = 0;
  let dataStart = -1;
  for (let i = 0; i < lines.length; i++) {
    const line = lines[i].trim();
    if (!line || line.startsWith("#")) continue;
    const [key, ...rest] = line.split(/\s+/);
    if (key === "FIELDS") fields = rest;
    else if (key === "POINTS") count = parseInt(rest[0], 10);
    else if (key === "DATA") {
      if (rest[0] !== "ascii") throw new Error(`unsupported PCD data ${rest[0]}`);
      dataStart = i + 1;
      break;
    }
  }
  if (dataStart < 0) throw new Error("PCD header missing DATA");
  const withLabel = fields.length === 4 && fields[3] === "label";
  if (!withLabel && !(fields.length === 3)) {
    throw new Error(`unsupported PCD fields ${fields.join(" ")}`);
  }
  const points: number[][] = [];
  const labels: number[] | null = withLabel ? [] : null;
  for (let i = dataStart; i < lines.length && points.length < count; i++) {
    const line = lines[i].trim();
    if (!line) continue;
    const parts = line.split(/\s+/).map(Number);
    points.push([parts[0], parts[1], parts[2]]);
    if (labels) labels.push(parts[3]);
  }
  if (points.length !== count) {
    throw new Error(`PCD declares ${count} points, found ${points.length}`);
  }
  return { points, labels };
}
