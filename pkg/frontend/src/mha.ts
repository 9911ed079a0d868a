// MetaImage (.mha, uncompressed, LOCAL data) decoding for in-browser use.
// Voxels are x-fastest: flat index = x + nx * (y + ny * z).

export interface Volume {
  dims: [number, number, number]; // nx, ny, nz
  spacing: [number, number, number];
  origin: [number, number, number];
  kind: "float32" | "uint8";
  data: Float32Array | Uint8Array;
}

export function decodeBase64(payload: string): Uint8Array {
  const binary = atob(payload);
  const bytes = new Uint8Array(binary.length);
  for (let i = 0; i < binary.length; i++) bytes[i] = binary.charCodeAt(i);
  return bytes;
}

export function decodeMha(bytes: Uint8Array): Volume {
  const header: Record<string, string> = {};
  let offset = 0;
  const decoder = new TextDecoder("ascii");
  while (true) {
    const nl = bytes.indexOf(0x0a, offset);
    if (nl < 0) throw new Error("header ended before ElementDataFile");
    const line = decoder.decode(bytes.subarray(offset, nl)).trim();
    offset = nl + 1;
    if (!line) continue;
    const eq = line.indexOf("=");
    if (eq < 0) throw new Error(`malformed header line: ${line}`);
    const key = line.slice(0, eq).trim();
    header[key] = line.slice(eq + 1).trim();
    if (key === "ElementDataFile") break;
  }

  if (header["NDims"] !== "3") throw new Error(`NDims must be 3, got ${header["NDims"]}`);
  if (header["ElementDataFile"] !== "LOCAL") throw new Error("only LOCAL data supported");

  const triple = (key: string, fallback?: number[]): [number, number, number] => {
    const raw = header[key];
    if (raw === undefined) {
      if (fallback) return fallback as [number, number, number];
      throw new Error(`${key} missing`);
    }
    const parts = raw.split(/\s+/).map(Number);
    if (parts.length !== 3 || parts.some(isNaN)) throw new Error(`${key} malformed`);
    return parts as [number, number, number];
  };

  const dims = triple("DimSize");
  const spacing = triple("ElementSpacing", [1, 1, 1]);
  const origin = triple("Offset", [0, 0, 0]);
  const n = dims[0] * dims[1] * dims[2];
  const raw = bytes.subarray(offset);

  const elementType = header["ElementType"];
  if (elementType === "MET_FLOAT") {
    if (raw.length !== n * 4) throw new Error(`expected ${n * 4} voxel bytes, got ${raw.length}`);
    const copy = raw.slice(); // align for the typed-array view
    return { dims, spacing, origin, kind: "float32", data: new Float32Array(copy.buffer) };
  }
  if (elementType === "MET_UCHAR") {
    if (raw.length !== n) throw new Error(`expected ${n} voxel bytes, got ${raw.length}`);
    return { dims, spacing, origin, kind: "uint8", data: raw.slice() };
  }
  throw new Error(`ElementType ${elementType} not supported`);
}

export function decodeVolumePayload(payload: string): Volume {
  return decodeMha(decodeBase64(payload));
}

export function voxelAt(vol: Volume, x: number, y: number, z: number): number {
  const [nx, ny] = vol.dims;
  return vol.data[x + nx * (y + ny * z)];
}
