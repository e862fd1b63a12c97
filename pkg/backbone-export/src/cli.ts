#!/usr/bin/env node
/**
 * CLI: backbone-export export --backbone <name> --out <path> [--seed N] [--dim N]
 */

import { exportBackbone } from "./export.js";
import { supportedNames } from "./backbones.js";

function usage(): never {
  console.error(
    "usage: backbone-export export --backbone <name> --out <model.onnx> [--seed N] [--dim N]\n" +
      `supported backbones: ${supportedNames().join(", ")}`,
  );
  process.exit(1);
}

function parseArgs(argv: string[]) {
  if (argv[0] !== "export") usage();
  const opts: { backbone?: string; out?: string; seed?: number; dim?: number } = {};
  for (let i = 1; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (value === undefined) usage();
    if (key === "--backbone") opts.backbone = value;
    else if (key === "--out") opts.out = value;
    else if (key === "--seed") opts.seed = Number(value);
    else if (key === "--dim") opts.dim = Number(value);
    else usage();
  }
  if (!opts.backbone || !opts.out) usage();
  return opts;
}

async function main(): Promise<void> {
  const opts = parseArgs(process.argv.slice(2));
  try {
    const result = await exportBackbone({
      backboneName: opts.backbone!,
      outputPath: opts.out!,
      seed: opts.seed,
      declaredDim: opts.dim,
    });
    console.log(`exported ${result.name} -> ${result.modelPath}`);
    console.log(`  features: ${result.dim}`);
    console.log(`  preprocess preset: ${result.preprocessPreset} (input ${result.inputSize})`);
    console.log(`  digest: ${result.digest}`);
    console.log(`  repeated-inference max delta: ${result.maxRunDelta}`);
    console.log(`  sidecar: ${result.sidecarPath}`);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    process.exit(1);
  }
}

main();
