/**
 * Small graph assembly layer: each helper appends a node, tracks the
 * (channels, height, width) shape, and registers seeded initializers.
 */

import * as pb from "./proto.js";
import { SeededRng } from "./rng.js";

export interface Shape {
  c: number;
  h: number;
  w: number;
}

function outSize(size: number, kernel: number, stride: number, pad: number): number {
  return Math.floor((size + 2 * pad - kernel) / stride) + 1;
}

export class GraphBuilder {
  private nodes: Uint8Array[] = [];
  private initializers: Uint8Array[] = [];
  private counter = 0;
  private rng: SeededRng;

  constructor(
    readonly inputName: string,
    readonly inputShape: Shape,
    seedKey: string,
  ) {
    this.rng = new SeededRng(seedKey);
  }

  private fresh(prefix: string): string {
    this.counter += 1;
    return `${prefix}_${this.counter}`;
  }

  /** Convolution with seeded He weights and zero bias. groups=c gives depthwise. */
  conv(
    input: string,
    shape: Shape,
    outChannels: number,
    kernel: number,
    stride: number,
    pad: number,
    groups = 1,
  ): [string, Shape] {
    const cg = shape.c / groups;
    if (!Number.isInteger(cg)) {
      throw new Error(`channels ${shape.c} not divisible by groups ${groups}`);
    }
    const wName = this.fresh("w");
    const bName = this.fresh("b");
    const out = this.fresh("conv");
    const fanIn = cg * kernel * kernel;
    this.initializers.push(
      pb.tensor(wName, [outChannels, cg, kernel, kernel], this.rng.heWeights(outChannels * fanIn, fanIn)),
    );
    this.initializers.push(pb.tensor(bName, [outChannels], new Float32Array(outChannels)));
    const attrs = [
      pb.attrInts("strides", [stride, stride]),
      pb.attrInts("pads", [pad, pad, pad, pad]),
      pb.attrInts("dilations", [1, 1]),
      pb.attrInts("kernel_shape", [kernel, kernel]),
    ];
    if (groups > 1) attrs.push(pb.attrInt("group", groups));
    this.nodes.push(pb.node("Conv", [input, wName, bName], [out], out, attrs));
    return [out, { c: outChannels, h: outSize(shape.h, kernel, stride, pad), w: outSize(shape.w, kernel, stride, pad) }];
  }

  relu(input: string, shape: Shape): [string, Shape] {
    const out = this.fresh("relu");
    this.nodes.push(pb.node("Relu", [input], [out], out));
    return [out, shape];
  }

  maxpool(input: string, shape: Shape, kernel: number, stride: number, pad: number): [string, Shape] {
    const out = this.fresh("maxpool");
    this.nodes.push(
      pb.node("MaxPool", [input], [out], out, [
        pb.attrInts("kernel_shape", [kernel, kernel]),
        pb.attrInts("strides", [stride, stride]),
        pb.attrInts("pads", [pad, pad, pad, pad]),
      ]),
    );
    return [out, { c: shape.c, h: outSize(shape.h, kernel, stride, pad), w: outSize(shape.w, kernel, stride, pad) }];
  }

  avgpool(input: string, shape: Shape, kernel: number, stride: number, pad: number): [string, Shape] {
    const out = this.fresh("avgpool");
    this.nodes.push(
      pb.node("AveragePool", [input], [out], out, [
        pb.attrInts("kernel_shape", [kernel, kernel]),
        pb.attrInts("strides", [stride, stride]),
        pb.attrInts("pads", [pad, pad, pad, pad]),
        pb.attrInt("count_include_pad", 0),
      ]),
    );
    return [out, { c: shape.c, h: outSize(shape.h, kernel, stride, pad), w: outSize(shape.w, kernel, stride, pad) }];
  }

  add(a: string, b: string, shape: Shape): [string, Shape] {
    const out = this.fresh("add");
    this.nodes.push(pb.node("Add", [a, b], [out], out));
    return [out, shape];
  }

  concat(inputs: [string, Shape][]): [string, Shape] {
    const out = this.fresh("concat");
    this.nodes.push(
      pb.node("Concat", inputs.map(([n]) => n), [out], out, [pb.attrInt("axis", 1)]),
    );
    const first = inputs[0][1];
    const channels = inputs.reduce((acc, [, s]) => acc + s.c, 0);
    return [out, { c: channels, h: first.h, w: first.w }];
  }

  /** GlobalAveragePool + Flatten, the pooled feature head. */
  pooledOutput(input: string, shape: Shape, outputName: string): Shape {
    const gap = this.fresh("gap");
    this.nodes.push(pb.node("GlobalAveragePool", [input], [gap], gap));
    this.nodes.push(pb.node("Flatten", [gap], [outputName], outputName, [pb.attrInt("axis", 1)]));
    return { c: shape.c, h: 1, w: 1 };
  }

  finish(outputName: string, featureDim: number, graphName: string, producer: string): Uint8Array {
    return pb.model(
      {
        nodes: this.nodes,
        initializers: this.initializers,
        inputName: this.inputName,
        inputShape: [1, this.inputShape.c, this.inputShape.h, this.inputShape.w],
        outputName,
        outputShape: [1, featureDim],
        graphName,
      },
      producer,
    );
  }
}
