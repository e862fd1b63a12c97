/**
 * Reduced-depth builds of the four supported backbone lineages. Each keeps
 * the lineage's structural signature (plain conv stacks, bottleneck
 * residuals, multi-branch modules, depthwise-separable residuals) and its
 * full-size pooled feature width, so downstream consumers see the real
 * interface. Weights are deterministically seeded; provenance is recorded
 * in the sidecar, no pretrained fidelity is claimed.
 */

import { GraphBuilder, Shape } from "./builder.js";

export interface BackboneSpec {
  name: string;
  dim: number;
  inputSize: number;
  preprocessPreset: string;
  build: (b: GraphBuilder) => [string, Shape];
}

function vgg16(b: GraphBuilder): [string, Shape] {
  let t: string = b.inputName;
  let s: Shape = b.inputShape;
  for (const ch of [32, 64, 128, 256, 512]) {
    [t, s] = b.conv(t, s, ch, 3, 1, 1);
    [t, s] = b.relu(t, s);
    [t, s] = b.maxpool(t, s, 2, 2, 0);
  }
  return [t, s];
}

function bottleneck(
  b: GraphBuilder,
  input: string,
  shape: Shape,
  mid: number,
  out: number,
  stride: number,
): [string, Shape] {
  let [t, s] = b.conv(input, shape, mid, 1, 1, 0);
  [t, s] = b.relu(t, s);
  [t, s] = b.conv(t, s, mid, 3, stride, 1);
  [t, s] = b.relu(t, s);
  [t, s] = b.conv(t, s, out, 1, 1, 0);
  const [proj, ps] = b.conv(input, shape, out, 1, stride, 0);
  if (ps.h !== s.h || ps.w !== s.w) {
    throw new Error(`skip branch shape mismatch: ${ps.h}x${ps.w} vs ${s.h}x${s.w}`);
  }
  [t, s] = b.add(t, proj, s);
  return b.relu(t, s);
}

function resnet50(b: GraphBuilder): [string, Shape] {
  let [t, s] = b.conv(b.inputName, b.inputShape, 32, 7, 2, 3);
  [t, s] = b.relu(t, s);
  [t, s] = b.maxpool(t, s, 3, 2, 1);
  [t, s] = bottleneck(b, t, s, 16, 64, 1);
  [t, s] = bottleneck(b, t, s, 32, 128, 2);
  [t, s] = bottleneck(b, t, s, 64, 256, 2);
  [t, s] = bottleneck(b, t, s, 128, 2048, 2);
  return [t, s];
}

function inceptionV3(b: GraphBuilder): [string, Shape] {
  let [t, s] = b.conv(b.inputName, b.inputShape, 32, 3, 2, 1);
  [t, s] = b.relu(t, s);
  [t, s] = b.conv(t, s, 64, 3, 2, 1);
  [t, s] = b.relu(t, s);
  [t, s] = b.maxpool(t, s, 3, 2, 1);

  // one multi-branch module: 1x1 / 3x3 / double 3x3 / pooled 1x1
  let [b1, s1] = b.conv(t, s, 32, 1, 1, 0);
  [b1, s1] = b.relu(b1, s1);
  let [b2, s2] = b.conv(t, s, 24, 1, 1, 0);
  [b2, s2] = b.relu(b2, s2);
  [b2, s2] = b.conv(b2, s2, 32, 3, 1, 1);
  [b2, s2] = b.relu(b2, s2);
  let [b3, s3] = b.conv(t, s, 24, 1, 1, 0);
  [b3, s3] = b.relu(b3, s3);
  [b3, s3] = b.conv(b3, s3, 32, 3, 1, 1);
  [b3, s3] = b.relu(b3, s3);
  [b3, s3] = b.conv(b3, s3, 32, 3, 1, 1);
  [b3, s3] = b.relu(b3, s3);
  let [b4, s4] = b.avgpool(t, s, 3, 1, 1);
  [b4, s4] = b.conv(b4, s4, 32, 1, 1, 0);
  [b4, s4] = b.relu(b4, s4);
  [t, s] = b.concat([
    [b1, s1],
    [b2, s2],
    [b3, s3],
    [b4, s4],
  ]);

  [t, s] = b.conv(t, s, 192, 3, 2, 1);
  [t, s] = b.relu(t, s);
  [t, s] = b.conv(t, s, 2048, 1, 1, 0);
  return b.relu(t, s);
}

function separableBlock(
  b: GraphBuilder,
  input: string,
  shape: Shape,
  out: number,
): [string, Shape] {
  // depthwise 3x3 then pointwise 1x1, downsampled, with a projected skip
  let [t, s] = b.conv(input, shape, shape.c, 3, 1, 1, shape.c);
  [t, s] = b.conv(t, s, out, 1, 1, 0);
  [t, s] = b.relu(t, s);
  [t, s] = b.maxpool(t, s, 3, 2, 1);
  const [proj, ps] = b.conv(input, shape, out, 1, 2, 0);
  if (ps.h !== s.h || ps.w !== s.w) {
    throw new Error(`separable skip shape mismatch: ${ps.h}x${ps.w} vs ${s.h}x${s.w}`);
  }
  [t, s] = b.add(t, proj, s);
  return b.relu(t, s);
}

function xception(b: GraphBuilder): [string, Shape] {
  let [t, s] = b.conv(b.inputName, b.inputShape, 32, 3, 2, 1);
  [t, s] = b.relu(t, s);
  [t, s] = separableBlock(b, t, s, 64);
  [t, s] = separableBlock(b, t, s, 128);
  [t, s] = separableBlock(b, t, s, 256);
  [t, s] = b.conv(t, s, 2048, 1, 1, 0);
  return b.relu(t, s);
}

export const BACKBONES: Record<string, BackboneSpec> = {
  vgg16: {
    name: "vgg16",
    dim: 512,
    inputSize: 224,
    preprocessPreset: "imagenet-224",
    build: vgg16,
  },
  resnet50: {
    name: "resnet50",
    dim: 2048,
    inputSize: 224,
    preprocessPreset: "imagenet-224",
    build: resnet50,
  },
  inception_v3: {
    name: "inception_v3",
    dim: 2048,
    inputSize: 299,
    preprocessPreset: "inception-299",
    build: inceptionV3,
  },
  xception: {
    name: "xception",
    dim: 2048,
    inputSize: 299,
    preprocessPreset: "inception-299",
    build: xception,
  },
};

export function supportedNames(): string[] {
  return Object.keys(BACKBONES).sort();
}
