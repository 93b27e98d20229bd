/**
 * TNSR container reader/writer.
 *
 * Layout: magic "TNSR" | version u16 LE | dtype u8 (0 = f32) | rank u8 |
 * rank x dim u32 LE | payload little-endian float32, row-major.
 */

export interface Tensor {
  dims: number[];
  data: Float32Array;
}

const MAGIC = 0x52534e54; // "TNSR" little-endian

export function decodeTensor(blob: Buffer): Tensor {
  if (blob.length < 8) {
    throw new Error("truncated TNSR header");
  }
  if (blob.readUInt32LE(0) !== MAGIC) {
    throw new Error("bad TNSR magic");
  }
  const version = blob.readUInt16LE(4);
  const dtype = blob.readUInt8(6);
  const rank = blob.readUInt8(7);
  if (version !== 1) {
    throw new Error(`unsupported TNSR version ${version}`);
  }
  if (dtype !== 0) {
    throw new Error(`unsupported dtype code ${dtype}`);
  }
  const headerEnd = 8 + 4 * rank;
  if (blob.length < headerEnd) {
    throw new Error("truncated TNSR dim list");
  }
  const dims: number[] = [];
  let count = 1;
  for (let i = 0; i < rank; i++) {
    const d = blob.readUInt32LE(8 + 4 * i);
    dims.push(d);
    count *= d;
  }
  const end = headerEnd + 4 * count;
  if (blob.length < end) {
    throw new Error("TNSR payload shorter than dims require");
  }
  if (blob.length > end) {
    throw new Error("trailing bytes after TNSR payload");
  }
  const data = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    const v = blob.readFloatLE(headerEnd + 4 * i);
    if (!Number.isFinite(v)) {
      throw new Error("TNSR payload contains NaN or Inf");
    }
    data[i] = v;
  }
  return { dims, data };
}

export function encodeTensor(t: Tensor): Buffer {
  const header = Buffer.alloc(8 + 4 * t.dims.length);
  header.writeUInt32LE(MAGIC, 0);
  header.writeUInt16LE(1, 4);
  header.writeUInt8(0, 6);
  header.writeUInt8(t.dims.length, 7);
  t.dims.forEach((d, i) => header.writeUInt32LE(d, 8 + 4 * i));
  const payload = Buffer.alloc(4 * t.data.length);
  t.data.forEach((v, i) => payload.writeFloatLE(v, 4 * i));
  return Buffer.concat([header, payload]);
}
