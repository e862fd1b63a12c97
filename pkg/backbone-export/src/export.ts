/**
 * Build, verify, and write interchange backbone files plus their sidecar
 * descriptors. Verification runs the model twice through onnxruntime on a
 * golden input before anything is declared exported.
 */

import { createHash } from "node:crypto";
import { writeFileSync } from "node:fs";
import ort from "onnxruntime-node";

import { BACKBONES, supportedNames } from "./backbones.js";
import { GraphBuilder } from "./builder.js";

export const OUTPUT_NAME = "features";
export const INPUT_NAME = "image";
const DETERMINISM_TOLERANCE = 1e-4;
const IMAGENET_LOGIT_WIDTH = 1000;

export interface ExportRequest {
  backboneName: string;
  outputPath: string;
  declaredDim?: number;
  seed?: number;
}

export interface ExportResult {
  name: string;
  dim: number;
  preprocessPreset: string;
  digest: string;
  provenance: string;
  inputSize: number;
  modelPath: string;
  sidecarPath: string;
  maxRunDelta: number;
}

export function buildBackboneModel(name: string, seed = 0): Uint8Array {
  const spec = BACKBONES[name];
  if (!spec) {
    throw new Error(
      `unknown backbone ${JSON.stringify(name)}; supported names: ${supportedNames().join(", ")}`,
    );
  }
  const builder = new GraphBuilder(
    INPUT_NAME,
    { c: 3, h: spec.inputSize, w: spec.inputSize },
    `${name}:${seed}`,
  );
  const [lastValue, lastShape] = spec.build(builder);
  if (lastShape.c !== spec.dim) {
    throw new Error(`${name} build produced ${lastShape.c} channels, lineage dim is ${spec.dim}`);
  }
  builder.pooledOutput(lastValue, lastShape, OUTPUT_NAME);
  return builder.finish(OUTPUT_NAME, spec.dim, name, `backbone-export seeded(${name},${seed})`);
}

/** Deterministic smooth golden image, channel-first, values in [-1, 1]. */
export function goldenTensor(size: number): Float32Array {
  const data = new Float32Array(3 * size * size);
  let i = 0;
  for (let c = 0; c < 3; c++) {
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        data[i++] = Math.fround(Math.sin((x + 1) * (c + 1) * 0.13) * Math.cos((y + 1) * 0.07));
      }
    }
  }
  return data;
}

async function runOnce(modelBytes: Uint8Array, input: Float32Array, size: number): Promise<Float32Array> {
  const session = await ort.InferenceSession.create(Buffer.from(modelBytes));
  const feeds = { [INPUT_NAME]: new ort.Tensor("float32", input, [1, 3, size, size]) };
  const output = await session.run(feeds);
  const tensor = output[OUTPUT_NAME];
  if (!tensor) {
    throw new Error(`model did not produce the ${OUTPUT_NAME} output`);
  }
  return tensor.data as Float32Array;
}

export interface VerifyResult {
  dim: number;
  maxRunDelta: number;
}

/** Repeated-inference check: fresh sessions must agree elementwise. */
export async function verifyModel(modelBytes: Uint8Array, inputSize: number): Promise<VerifyResult> {
  const golden = goldenTensor(inputSize);
  const first = await runOnce(modelBytes, golden, inputSize);
  const second = await runOnce(modelBytes, golden, inputSize);
  if (first.length !== second.length) {
    throw new Error("repeated inference changed the output length");
  }
  let maxDelta = 0;
  for (let i = 0; i < first.length; i++) {
    const d = Math.abs(first[i] - second[i]);
    if (d > maxDelta) maxDelta = d;
    if (!Number.isFinite(first[i])) {
      throw new Error(`non-finite feature value at index ${i}`);
    }
  }
  if (maxDelta > DETERMINISM_TOLERANCE) {
    throw new Error(`repeated inference differs by ${maxDelta}, tolerance ${DETERMINISM_TOLERANCE}`);
  }
  return { dim: first.length, maxRunDelta: maxDelta };
}

export async function exportBackbone(req: ExportRequest): Promise<ExportResult> {
  const spec = BACKBONES[req.backboneName];
  if (!spec) {
    throw new Error(
      `unknown backbone ${JSON.stringify(req.backboneName)}; supported names: ${supportedNames().join(", ")}`,
    );
  }
  const declared = req.declaredDim ?? spec.dim;
  if (declared !== spec.dim) {
    throw new Error(`declared dim ${declared} does not match ${spec.name} pooled width ${spec.dim}`);
  }
  const seed = req.seed ?? 0;
  const bytes = buildBackboneModel(spec.name, seed);
  const verified = await verifyModel(bytes, spec.inputSize);
  if (verified.dim !== declared) {
    throw new Error(`model emits ${verified.dim} features, declared dim is ${declared}`);
  }
  if (verified.dim === IMAGENET_LOGIT_WIDTH) {
    throw new Error("output width equals the classification logit width; head was not stripped");
  }
  writeFileSync(req.outputPath, bytes);
  const digest = "sha256:" + createHash("sha256").update(bytes).digest("hex");
  const provenance = `seeded-init(name=${spec.name},seed=${seed}); reduced-depth ${spec.name} lineage, no pretrained weights available in this environment`;
  const sidecarPath = req.outputPath.replace(/\.onnx$/, "") + ".sidecar.json";
  const sidecar = {
    name: spec.name,
    dim: verified.dim,
    preprocess_preset: spec.preprocessPreset,
    digest,
    provenance,
    input_size: spec.inputSize,
  };
  writeFileSync(sidecarPath, JSON.stringify(sidecar, null, 2) + "\n");
  return {
    name: spec.name,
    dim: verified.dim,
    preprocessPreset: spec.preprocessPreset,
    digest,
    provenance,
    inputSize: spec.inputSize,
    modelPath: req.outputPath,
    sidecarPath,
    maxRunDelta: verified.maxRunDelta,
  };
}
