/**
 * Minimal protobuf wire-format encoder for the ONNX messages the exporter
 * emits. Field numbers follow the onnx.proto schema; everything is written
 * little-endian and length-delimited, no external codegen involved.
 */

const encoder = new TextEncoder();

function varint(n: number | bigint): Uint8Array {
  let v = BigInt(n);
  if (v < 0n) v &= 0xffffffffffffffffn;
  const out: number[] = [];
  while (v > 127n) {
    out.push(Number(v & 127n) | 0x80);
    v >>= 7n;
  }
  out.push(Number(v));
  return Uint8Array.from(out);
}

function key(field: number, wire: number): Uint8Array {
  return varint((field << 3) | wire);
}

export function concat(parts: Uint8Array[]): Uint8Array {
  const total = parts.reduce((a, p) => a + p.length, 0);
  const out = new Uint8Array(total);
  let offset = 0;
  for (const p of parts) {
    out.set(p, offset);
    offset += p.length;
  }
  return out;
}

export function lenDelim(field: number, payload: Uint8Array): Uint8Array {
  return concat([key(field, 2), varint(payload.length), payload]);
}

export function str(field: number, text: string): Uint8Array {
  return lenDelim(field, encoder.encode(text));
}

export function int(field: number, value: number | bigint): Uint8Array {
  return concat([key(field, 0), varint(value)]);
}

export function float32(field: number, value: number): Uint8Array {
  const buf = new Uint8Array(4);
  new DataView(buf.buffer).setFloat32(0, value, true);
  return concat([key(field, 5), buf]);
}

/** TensorProto with float32 raw data. */
export function tensor(name: string, dims: number[], data: Float32Array): Uint8Array {
  const raw = new Uint8Array(data.buffer, data.byteOffset, data.byteLength);
  return concat([
    ...dims.map((d) => int(1, d)),
    int(2, 1), // data_type FLOAT
    str(8, name),
    lenDelim(9, raw),
  ]);
}

export function attrInt(name: string, value: number): Uint8Array {
  return concat([str(1, name), int(20, 2), int(3, value)]);
}

export function attrInts(name: string, values: number[]): Uint8Array {
  return concat([str(1, name), int(20, 7), ...values.map((v) => int(8, v))]);
}

export function attrFloat(name: string, value: number): Uint8Array {
  return concat([str(1, name), int(20, 1), float32(2, value)]);
}

export function node(
  opType: string,
  inputs: string[],
  outputs: string[],
  name: string,
  attrs: Uint8Array[] = [],
): Uint8Array {
  return concat([
    ...inputs.map((i) => str(1, i)),
    ...outputs.map((o) => str(2, o)),
    str(3, name),
    str(4, opType),
    ...attrs.map((a) => lenDelim(5, a)),
  ]);
}

export function valueInfo(name: string, shape: number[]): Uint8Array {
  const dims = concat(shape.map((d) => lenDelim(1, int(1, d))));
  const tensorType = concat([int(1, 1), lenDelim(2, dims)]);
  return concat([str(1, name), lenDelim(2, lenDelim(1, tensorType))]);
}

export interface GraphParts {
  nodes: Uint8Array[];
  initializers: Uint8Array[];
  inputName: string;
  inputShape: number[];
  outputName: string;
  outputShape: number[];
  graphName: string;
}

export function model(parts: GraphParts, producer: string): Uint8Array {
  const graph = concat([
    ...parts.nodes.map((n) => lenDelim(1, n)),
    str(2, parts.graphName),
    ...parts.initializers.map((t) => lenDelim(5, t)),
    lenDelim(11, valueInfo(parts.inputName, parts.inputShape)),
    lenDelim(12, valueInfo(parts.outputName, parts.outputShape)),
  ]);
  const opset = concat([str(1, ""), int(2, 13)]);
  return concat([int(1, 8), str(2, producer), lenDelim(7, graph), lenDelim(8, opset)]);
}
