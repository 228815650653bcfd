/**
 * PCT1 binary tensor encoding.
 *
 * Layout (byte-stable public contract shared with the shiftcal toolkit):
 *   magic "PCT1" (4 ASCII bytes)
 *   u32 little-endian ndim
 *   ndim x u64 little-endian dims
 *   row-major f32 little-endian payload
 */

export class DataError extends Error {}

export interface Tensor {
  shape: number[];
  /** Row-major values; length must equal the product of shape. */
  data: number[] | Float32Array;
}

function checkShape(shape: number[]): void {
  if (shape.length === 0) {
    throw new DataError("tensor must have at least one dimension");
  }
  for (const dim of shape) {
    if (!Number.isInteger(dim) || dim <= 0) {
      throw new DataError(`zero-sized or non-integer dimension in shape [${shape}]`);
    }
  }
}

function elementCount(shape: number[]): number {
  return shape.reduce((a, b) => a * b, 1);
}

/** Encode a tensor to PCT1 bytes. Rejects non-finite values and shape/data
 * length mismatches before producing any output. */
export function encodeTensor(tensor: Tensor): Buffer {
  checkShape(tensor.shape);
  const count = elementCount(tensor.shape);
  if (tensor.data.length !== count) {
    throw new DataError(
      `shape [${tensor.shape}] needs ${count} values, got ${tensor.data.length}`
    );
  }
  const ndim = tensor.shape.length;
  const buf = Buffer.alloc(4 + 4 + 8 * ndim + 4 * count);
  buf.write("PCT1", 0, "ascii");
  buf.writeUInt32LE(ndim, 4);
  tensor.shape.forEach((dim, i) => {
    buf.writeBigUInt64LE(BigInt(dim), 8 + 8 * i);
  });
  const payloadStart = 8 + 8 * ndim;
  for (let i = 0; i < count; i++) {
    const value = tensor.data[i];
    if (!Number.isFinite(value)) {
      throw new DataError(`non-finite value at flat index ${i}`);
    }
    buf.writeFloatLE(Math.fround(value), payloadStart + 4 * i);
  }
  return buf;
}

/** Validate a label tensor: integral values (within 1e-6, matching the
 * on-disk f32 convention) inside [0, classCount). */
export function checkLabels(tensor: Tensor, classCount: number): void {
  for (let i = 0; i < tensor.data.length; i++) {
    const value = tensor.data[i];
    if (!Number.isFinite(value)) {
      throw new DataError(`non-finite label at flat index ${i}`);
    }
    if (Math.abs(value - Math.round(value)) > 1e-6) {
      throw new DataError(`non-integral label ${value} at flat index ${i}`);
    }
    const rounded = Math.round(value);
    if (rounded < 0 || rounded >= classCount) {
      throw new DataError(
        `label ${rounded} outside [0, ${classCount}) at flat index ${i}`
      );
    }
  }
}
