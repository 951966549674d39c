/** The runtime network's architecture table, mirrored layer for layer.
 *
 * The trainer must produce weight files the inference runtime accepts, so
 * this module reproduces the exact table the runtime hangs its weight
 * names, shapes, and 32-byte fingerprint off. Any drift here makes every
 * exported file unloadable — the fingerprint test pins the bytes.
 */

import { createHash } from "node:crypto";

export const INPUT_SHAPE: readonly number[] = [2, 40, 32];
export const INPUT_SIZE = 2 * 40 * 32;
export const MASK_BINS = 64;
export const DTD_CLASSES = 3;
export const EMBEDDING_DIM = 32;

export type LayerKind =
  | "conv"
  | "depthwise"
  | "fc"
  | "norm"
  | "pool"
  | "gate"
  | "flatten";

export interface LayerSpec {
  readonly name: string;
  readonly kind: LayerKind;
  readonly inShape: readonly number[];
  readonly outShape: readonly number[];
  readonly kernel: number;
  readonly stride: number;
  readonly padding: number;
  readonly activation: "linear" | "relu6" | "sigmoid" | "softmax";
}

function convOut(size: number, kernel: number, stride: number, padding: number): number {
  return Math.floor((size + 2 * padding - kernel) / stride) + 1;
}

function buildLayers(): LayerSpec[] {
  const layers: LayerSpec[] = [];
  let [c, h, w] = INPUT_SHAPE;
  layers.push({
    name: "feat_norm", kind: "norm", inShape: [c, h, w], outShape: [c, h, w],
    kernel: 0, stride: 1, padding: 0, activation: "linear",
  });

  const conv = (
    name: string, cIn: number, cOut: number, hIn: number, wIn: number,
    kernel: number, stride: number, padding: number,
    act: LayerSpec["activation"],
  ): [number, number] => {
    const ho = convOut(hIn, kernel, stride, padding);
    const wo = convOut(wIn, kernel, stride, padding);
    layers.push({
      name, kind: "conv", inShape: [cIn, hIn, wIn], outShape: [cOut, ho, wo],
      kernel, stride, padding, activation: act,
    });
    return [ho, wo];
  };

  const dwise = (
    name: string, channels: number, hIn: number, wIn: number, stride: number,
  ): [number, number] => {
    const ho = convOut(hIn, 3, stride, 1);
    const wo = convOut(wIn, 3, stride, 1);
    layers.push({
      name, kind: "depthwise", inShape: [channels, hIn, wIn],
      outShape: [channels, ho, wo], kernel: 3, stride, padding: 1,
      activation: "relu6",
    });
    return [ho, wo];
  };

  [h, w] = conv("stem", 2, 16, h, w, 3, 2, 1, "relu6");
  c = 16;
  const blocks: Array<[number, number]> = [[24, 2], [32, 2], [64, 1], [96, 1]];
  blocks.forEach(([cOut, stride], index) => {
    const i = index + 1;
    const expanded = 4 * c;
    conv(`irb${i}.expand`, c, expanded, h, w, 1, 1, 0, "relu6");
    [h, w] = dwise(`irb${i}.dw`, expanded, h, w, stride);
    conv(`irb${i}.project`, expanded, cOut, h, w, 1, 1, 0, "linear");
    c = cOut;
  });

  const trunk = [c, h, w];
  layers.push({
    name: "dtd.pool", kind: "pool", inShape: trunk, outShape: [c],
    kernel: 0, stride: 1, padding: 0, activation: "linear",
  });
  layers.push({
    name: "dtd.fc1", kind: "fc", inShape: [c], outShape: [EMBEDDING_DIM],
    kernel: 0, stride: 1, padding: 0, activation: "relu6",
  });
  layers.push({
    name: "dtd.fc2", kind: "fc", inShape: [EMBEDDING_DIM], outShape: [DTD_CLASSES],
    kernel: 0, stride: 1, padding: 0, activation: "softmax",
  });
  layers.push({
    name: "gate.fc", kind: "fc", inShape: [EMBEDDING_DIM], outShape: [c],
    kernel: 0, stride: 1, padding: 0, activation: "sigmoid",
  });
  layers.push({
    name: "gate.apply", kind: "gate", inShape: trunk, outShape: trunk,
    kernel: 0, stride: 1, padding: 0, activation: "linear",
  });
  const flat = trunk.reduce((a, b) => a * b, 1);
  layers.push({
    name: "mask.flatten", kind: "flatten", inShape: trunk, outShape: [flat],
    kernel: 0, stride: 1, padding: 0, activation: "linear",
  });
  layers.push({
    name: "mask.fc1", kind: "fc", inShape: [flat], outShape: [256],
    kernel: 0, stride: 1, padding: 0, activation: "relu6",
  });
  layers.push({
    name: "mask.fc2", kind: "fc", inShape: [256], outShape: [MASK_BINS],
    kernel: 0, stride: 1, padding: 0, activation: "sigmoid",
  });
  return layers;
}

export const LAYERS: readonly LayerSpec[] = buildLayers();

function canonicalRow(layer: LayerSpec): string {
  return (
    `${layer.name}|${layer.kind}` +
    `|in=${layer.inShape.join("x")}` +
    `|out=${layer.outShape.join("x")}` +
    `|k=${layer.kernel}|s=${layer.stride}|p=${layer.padding}` +
    `|act=${layer.activation}`
  );
}

export function canonicalTable(): string {
  return LAYERS.map(canonicalRow).join("\n");
}

/** 32-byte architecture identity embedded in every weight file. */
export function fingerprint(): Buffer {
  return createHash("sha256").update(canonicalTable(), "utf-8").digest();
}

/** Weight tensor shapes owned by one layer, in the runtime's naming. */
export function layerWeightShapes(layer: LayerSpec): Map<string, readonly number[]> {
  const shapes = new Map<string, readonly number[]>();
  if (layer.kind === "conv") {
    shapes.set(`${layer.name}.w`,
      [layer.outShape[0], layer.inShape[0], layer.kernel, layer.kernel]);
    shapes.set(`${layer.name}.b`, [layer.outShape[0]]);
  } else if (layer.kind === "depthwise") {
    shapes.set(`${layer.name}.w`, [layer.inShape[0], 1, layer.kernel, layer.kernel]);
    shapes.set(`${layer.name}.b`, [layer.inShape[0]]);
  } else if (layer.kind === "fc") {
    shapes.set(`${layer.name}.w`, [layer.outShape[0], layer.inShape[0]]);
    shapes.set(`${layer.name}.b`, [layer.outShape[0]]);
  } else if (layer.kind === "norm") {
    shapes.set(`${layer.name}.scale`, layer.inShape);
    shapes.set(`${layer.name}.offset`, layer.inShape);
  }
  return shapes;
}

/** All expected tensor names and shapes, in table order. */
export function weightShapes(): Map<string, readonly number[]> {
  const shapes = new Map<string, readonly number[]>();
  for (const layer of LAYERS) {
    for (const [name, shape] of layerWeightShapes(layer)) shapes.set(name, shape);
  }
  return shapes;
}

export function parameterCount(): number {
  let total = 0;
  for (const shape of weightShapes().values()) {
    total += shape.reduce((a, b) => a * b, 1);
  }
  return total;
}

export function layerByName(name: string): LayerSpec {
  const layer = LAYERS.find((l) => l.name === name);
  if (layer === undefined) throw new Error(`no layer named ${name}`);
  return layer;
}
