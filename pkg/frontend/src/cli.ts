#!/usr/bin/env node
/** Command-line trainer: fits the suppression network on a generated
 * mixture corpus and exports runtime-loadable weights.
 */

import { writeFileSync } from "node:fs";

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { train } from "./train.js";
import { writeWeightsBuffer } from "./weights.js";

export function main(argv: string[]): void {
  void yargs(argv)
    .scriptName("raes-train")
    .command(
      "train",
      "train the suppression network and export runtime weights",
      (args) => args
        .option("manifest", {
          type: "string", demandOption: true,
          describe: "mixture manifest (manifest.jsonl) with .raet dumps beside it",
        })
        .option("out", {
          type: "string", demandOption: true,
          describe: "output weight file (.raes)",
        })
        .option("log", {
          type: "string",
          describe: "write the per-epoch training log to this JSON file",
        })
        .option("epochs", { type: "number", default: 5 })
        .option("seed", { type: "number", default: 0 })
        .option("alpha", {
          type: "number", default: 0.5,
          describe: "penalty on over-suppressed bins, in (0, 1]",
        })
        .option("gamma", {
          type: "number", default: 2,
          describe: "focal focusing exponent for the double-talk head",
        })
        .option("batch-size", { type: "number", default: 64 })
        .option("learning-rate", { type: "number", default: 0.003 })
        .option("frame-stride", {
          type: "number", default: 1,
          describe: "train on every k-th frame of each record",
        })
        .option("exclude-silence", {
          type: "boolean", default: false,
          describe: "drop mutually silent frames from training",
        })
        .option("mask-double-talk-only", {
          type: "boolean", default: false,
          describe: "restrict the mask loss to double-talk frames",
        })
        .option("validation-fraction", { type: "number", default: 0.1 }),
      (args) => {
        let result;
        try {
          result = train({
            manifestPath: args.manifest,
            epochs: args.epochs,
            seed: args.seed,
            alpha: args.alpha,
            gamma: args.gamma,
            batchSize: args["batch-size"],
            learningRate: args["learning-rate"],
            frameStride: args["frame-stride"],
            excludeSilence: args["exclude-silence"],
            maskDoubleTalkOnly: args["mask-double-talk-only"],
            validationFraction: args["validation-fraction"],
          }, {
            onEpoch: (entry) => {
              console.log(
                `epoch ${entry.epoch}: mask ${entry.mask_loss.toFixed(6)} ` +
                `dtd ${entry.dtd_loss.toFixed(6)} ` +
                `combined ${entry.combined_loss.toFixed(6)} ` +
                `val acc ${entry.accuracy.toFixed(3)} f1 ${entry.f1.toFixed(3)}`,
              );
            },
          });
        } catch (err) {
          console.error(`error: ${err instanceof Error ? err.message : String(err)}`);
          process.exit(1);
        }
        writeFileSync(args.out, writeWeightsBuffer(result.model.foldTensors()));
        console.log(`wrote weights to ${args.out}`);
        if (args.log !== undefined) {
          writeFileSync(args.log, JSON.stringify(result.log, null, 2) + "\n");
          console.log(`wrote training log to ${args.log}`);
        }
      },
    )
    .demandCommand(1)
    .strict()
    .help()
    .parseSync();
}

main(hideBin(process.argv));
