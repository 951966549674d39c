/** Binary weight-file serialization in the runtime's format.
 *
 * Layout (little-endian): magic ``RAES``, ``u32`` format version, the
 * 32-byte architecture fingerprint, ``u32`` tensor count, then per tensor:
 * ``u16`` name length, utf-8 name, ``u8`` dtype (0 = f32), ``u8`` rank,
 * ``u32`` per dimension, then the f32 payload in C order. Tensors appear
 * in architecture table order, which makes exports byte-deterministic.
 */

import { fingerprint, weightShapes } from "./arch.js";

export const WEIGHTS_MAGIC = "RAES";
export const FORMAT_VERSION = 1;
const DTYPE_F32 = 0;

/** Serialize folded tensors (`name -> values`) to the runtime's layout.
 *
 * Tensors are written in architecture order regardless of map order.
 * Throws if a tensor is missing, unexpected, or the wrong size.
 */
export function writeWeightsBuffer(tensors: Map<string, Float64Array>): Buffer {
  const shapes = weightShapes();
  for (const name of tensors.keys()) {
    if (!shapes.has(name)) throw new Error(`unexpected tensor ${name}`);
  }
  const chunks: Buffer[] = [];
  const header = Buffer.alloc(4 + 4 + 32 + 4);
  header.write(WEIGHTS_MAGIC, 0, "ascii");
  header.writeUInt32LE(FORMAT_VERSION, 4);
  fingerprint().copy(header, 8);
  header.writeUInt32LE(shapes.size, 40);
  chunks.push(header);

  for (const [name, shape] of shapes) {
    const values = tensors.get(name);
    if (values === undefined) throw new Error(`missing tensor ${name}`);
    const size = shape.reduce((a, c) => a * c, 1);
    if (values.length !== size) {
      throw new Error(`${name}: holds ${values.length} values, architecture wants ${size}`);
    }
    const nameBytes = Buffer.from(name, "utf-8");
    const head = Buffer.alloc(2 + nameBytes.length + 1 + 1 + 4 * shape.length);
    head.writeUInt16LE(nameBytes.length, 0);
    nameBytes.copy(head, 2);
    let offset = 2 + nameBytes.length;
    head.writeUInt8(DTYPE_F32, offset);
    head.writeUInt8(shape.length, offset + 1);
    offset += 2;
    for (const dim of shape) {
      head.writeUInt32LE(dim, offset);
      offset += 4;
    }
    chunks.push(head);
    const data = Buffer.alloc(4 * size);
    for (let i = 0; i < size; i++) data.writeFloatLE(values[i], 4 * i);
    chunks.push(data);
  }
  return Buffer.concat(chunks);
}

/** Parse a weight file back into `name -> f32-valued tensors` (for tests). */
export function readWeightsBuffer(buf: Buffer): Map<string, Float64Array> {
  if (buf.length < 44) throw new Error(`truncated header (${buf.length} bytes)`);
  if (buf.toString("ascii", 0, 4) !== WEIGHTS_MAGIC) {
    throw new Error(`bad magic ${buf.subarray(0, 4).toString("hex")}`);
  }
  const version = buf.readUInt32LE(4);
  if (version !== FORMAT_VERSION) throw new Error(`unsupported version ${version}`);
  if (!buf.subarray(8, 40).equals(fingerprint())) {
    throw new Error("weight file was built for a different architecture");
  }
  const count = buf.readUInt32LE(40);
  const tensors = new Map<string, Float64Array>();
  let offset = 44;
  for (let t = 0; t < count; t++) {
    const nameLen = buf.readUInt16LE(offset);
    offset += 2;
    const name = buf.toString("utf-8", offset, offset + nameLen);
    offset += nameLen;
    const dtype = buf.readUInt8(offset);
    if (dtype !== DTYPE_F32) throw new Error(`${name}: unsupported dtype ${dtype}`);
    const ndim = buf.readUInt8(offset + 1);
    offset += 2;
    let size = 1;
    for (let d = 0; d < ndim; d++) {
      size *= buf.readUInt32LE(offset);
      offset += 4;
    }
    const values = new Float64Array(size);
    for (let i = 0; i < size; i++) values[i] = buf.readFloatLE(offset + 4 * i);
    offset += 4 * size;
    tensors.set(name, values);
  }
  if (offset !== buf.length) {
    throw new Error(`${buf.length - offset} trailing bytes after ${count} tensors`);
  }
  return tensors;
}
