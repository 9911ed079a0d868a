// Slice extraction and overlay composition for the result viewer.

import { Volume, voxelAt } from "./mha.js";

export type Axis = "axial" | "coronal" | "sagittal"; // fixed z / y / x

export function sliceCount(vol: Volume, axis: Axis): number {
  const [nx, ny, nz] = vol.dims;
  return axis === "axial" ? nz : axis === "coronal" ? ny : nx;
}

export function sliceShape(vol: Volume, axis: Axis): [number, number] {
  const [nx, ny, nz] = vol.dims;
  if (axis === "axial") return [nx, ny];
  if (axis === "coronal") return [nx, nz];
  return [ny, nz];
}

export function extractSlice(vol: Volume, axis: Axis, index: number): Float32Array {
  const [w, h] = sliceShape(vol, axis);
  const out = new Float32Array(w * h);
  for (let j = 0; j < h; j++) {
    for (let i = 0; i < w; i++) {
      let v: number;
      if (axis === "axial") v = voxelAt(vol, i, j, index);
      else if (axis === "coronal") v = voxelAt(vol, i, index, j);
      else v = voxelAt(vol, index, i, j);
      out[i + w * j] = v;
    }
  }
  return out;
}

export function intensityRange(vol: Volume): [number, number] {
  let lo = Infinity;
  let hi = -Infinity;
  for (let i = 0; i < vol.data.length; i++) {
    const v = vol.data[i];
    if (v < lo) lo = v;
    if (v > hi) hi = v;
  }
  if (!isFinite(lo)) return [0, 1];
  return [lo, hi];
}

// Grayscale base with the label painted on top in translucent red.
// `label` may be null (no overlay) and must share dims with `base` when set.
export function composeOverlay(
  base: Float32Array,
  label: Float32Array | null,
  width: number,
  height: number,
  range: [number, number],
): Uint8ClampedArray<ArrayBuffer> {
  const [lo, hi] = range;
  const scale = hi > lo ? 255 / (hi - lo) : 0;
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < width * height; i++) {
    const gray = Math.round((base[i] - lo) * scale);
    let r = gray, g = gray, b = gray;
    if (label && label[i] > 0) {
      r = Math.min(255, gray + 160);
      g = Math.round(gray * 0.35);
      b = Math.round(gray * 0.35);
    }
    rgba[4 * i] = r;
    rgba[4 * i + 1] = g;
    rgba[4 * i + 2] = b;
    rgba[4 * i + 3] = 255;
  }
  return rgba;
}

// Physical-space point -> voxel indices in a volume's own frame.
export function pointToVoxel(vol: Volume, point: [number, number, number]): [number, number, number] {
  return [
    Math.round((point[0] - vol.origin[0]) / vol.spacing[0]),
    Math.round((point[1] - vol.origin[1]) / vol.spacing[1]),
    Math.round((point[2] - vol.origin[2]) / vol.spacing[2]),
  ];
}
