/**
 * Minimal NIfTI-1 codec for the toolkit's wire format.
 *
 * Same deliberate subset as the Python side: single-file "n+1" magic,
 * little-endian, uint8/int16/float32 payloads, pixdim spacing, data at
 * offset 352. Gzip is detected by magic bytes on read.
 */

import { gunzipSync } from "node:zlib";

import { TubeTopoError, Volume, VolumeData, volumeLength } from "./arrays.js";

const HDR_SIZE = 348;
const VOX_OFFSET = 352;
const MAGIC = "n+1\0";

const DT_UINT8 = 2;
const DT_INT16 = 4;
const DT_FLOAT32 = 16;

export function encodeNifti(vol: Volume): Buffer {
  const [z, y, x] = vol.shape;
  const spacing = vol.spacing ?? [1, 1, 1];
  const is2d = z === 1;
  let datatype: number;
  let bitpix: number;
  if (vol.data instanceof Uint8Array) {
    datatype = DT_UINT8;
    bitpix = 8;
  } else {
    datatype = DT_FLOAT32;
    bitpix = 32;
  }

  const header = Buffer.alloc(HDR_SIZE + 4); // header + empty extension flag
  header.writeInt32LE(HDR_SIZE, 0);
  const dim = is2d ? [2, x, y, 1, 1, 1, 1, 1] : [3, x, y, z, 1, 1, 1, 1];
  dim.forEach((v, i) => header.writeInt16LE(v, 40 + 2 * i));
  header.writeInt16LE(datatype, 70);
  header.writeInt16LE(bitpix, 72);
  const pixdim = [0, spacing[2], spacing[1], spacing[0], 1, 1, 1, 1];
  pixdim.forEach((v, i) => header.writeFloatLE(v, 76 + 4 * i));
  header.writeFloatLE(VOX_OFFSET, 108); // vox_offset
  header.writeFloatLE(1, 112); // scl_slope
  header.writeFloatLE(0, 116); // scl_inter
  header.write("tubetopo-node", 148, "ascii"); // descrip
  header.writeFloatLE(1, 280); // srow_x[0]
  header.writeFloatLE(1, 300); // srow_y[1]
  header.writeFloatLE(1, 320); // srow_z[2]
  header.write(MAGIC, 344, "ascii");

  const payload = Buffer.from(vol.data.buffer, vol.data.byteOffset, vol.data.byteLength);
  return Buffer.concat([header, payload]);
}

function sliceView(buf: Buffer, start: number, length: number): Buffer {
  if (buf.length < start + length) {
    throw new TubeTopoError("corrupt-header", `volume truncated: need ${start + length} bytes, have ${buf.length}`);
  }
  return buf.subarray(start, start + length);
}

export function decodeNifti(raw: Buffer): Volume {
  let buf = raw;
  if (buf.length >= 2 && buf[0] === 0x1f && buf[1] === 0x8b) {
    buf = gunzipSync(buf);
  }
  if (buf.length < HDR_SIZE) {
    throw new TubeTopoError("corrupt-header", `truncated header (${buf.length} bytes)`);
  }
  if (buf.readInt32LE(0) !== HDR_SIZE) {
    throw new TubeTopoError("corrupt-header", `sizeof_hdr = ${buf.readInt32LE(0)}`);
  }
  if (buf.toString("ascii", 344, 347) !== "n+1") {
    throw new TubeTopoError("corrupt-header", "magic is not 'n+1'");
  }
  const ndim = buf.readInt16LE(40);
  if (ndim < 2 || ndim > 3) {
    throw new TubeTopoError("dimensionality-mismatch", `${ndim}D volumes are not supported here`);
  }
  const nx = buf.readInt16LE(42);
  const ny = buf.readInt16LE(44);
  const nz = ndim >= 3 ? buf.readInt16LE(46) : 1;
  if (nx < 1 || ny < 1 || nz < 1) {
    throw new TubeTopoError("corrupt-header", `bad dims (${nx}, ${ny}, ${nz})`);
  }
  const datatype = buf.readInt16LE(70);
  const voxOffset = Math.trunc(buf.readFloatLE(108));
  const spacing: [number, number, number] = [
    readPix(buf, 3),
    readPix(buf, 2),
    readPix(buf, 1),
  ];
  const count = nx * ny * nz;

  let data: VolumeData;
  if (datatype === DT_UINT8) {
    data = new Uint8Array(sliceView(buf, voxOffset, count));
  } else if (datatype === DT_FLOAT32) {
    const bytes = sliceView(buf, voxOffset, 4 * count);
    data = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = bytes.readFloatLE(4 * i);
    }
  } else if (datatype === DT_INT16) {
    // widen to float32: the binding contract only speaks uint8/float32
    const bytes = sliceView(buf, voxOffset, 2 * count);
    data = new Float32Array(count);
    for (let i = 0; i < count; i++) {
      data[i] = bytes.readInt16LE(2 * i);
    }
  } else {
    throw new TubeTopoError("unsupported-datatype", `NIfTI datatype code ${datatype}`);
  }
  const shape: [number, number, number] = [nz, ny, nx];
  if (data.length !== volumeLength(shape)) {
    throw new TubeTopoError("corrupt-header", "payload does not match dims");
  }
  return { shape, data, spacing };
}

function readPix(buf: Buffer, i: number): number {
  const v = buf.readFloatLE(76 + 4 * i);
  return Number.isFinite(v) && v > 0 ? v : 1;
}
