/**
 * Command-line entry point.
 *
 *   serve --input manifest.json --output dir --weights w.json
 *   train --data manifest.json --out w.json [--val manifest] [--init w]
 *         [--epochs 40] [--batch 10] [--lr 1e-5] [--steps N] [--seed S]
 *         [--levels 3] [--filters 16]
 *         [--deform-alpha A] [--deform-sigma S] [--deform-weight 0.333]
 *   check-loss [--seed S]
 */

import { parseArgs } from "node:util";

import { checkLoss } from "./checks.js";
import { serve } from "./serve.js";
import { TRAIN_DEFAULTS, train } from "./train.js";

function fail(message: string): never {
  process.stderr.write(message + "\n");
  process.exit(2);
}

function num(value: string | undefined, fallback: number): number {
  if (value === undefined) return fallback;
  const parsed = Number(value);
  if (!Number.isFinite(parsed)) fail(`not a number: ${value}`);
  return parsed;
}

function cmdServe(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      input: { type: "string" },
      output: { type: "string" },
      weights: { type: "string" },
    },
  });
  if (!values.input || !values.output || !values.weights) {
    fail("serve needs --input, --output and --weights");
  }
  serve(values.input, values.output, values.weights);
}

function cmdTrain(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: {
      data: { type: "string" },
      out: { type: "string" },
      val: { type: "string" },
      init: { type: "string" },
      epochs: { type: "string" },
      batch: { type: "string" },
      lr: { type: "string" },
      steps: { type: "string" },
      seed: { type: "string" },
      levels: { type: "string" },
      filters: { type: "string" },
      "deform-alpha": { type: "string" },
      "deform-sigma": { type: "string" },
      "deform-weight": { type: "string" },
    },
  });
  if (!values.data || !values.out) fail("train needs --data and --out");
  const result = train({
    dataPath: values.data,
    outPath: values.out,
    valPath: values.val,
    initPath: values.init,
    epochs: num(values.epochs, TRAIN_DEFAULTS.epochs),
    batchSize: num(values.batch, TRAIN_DEFAULTS.batchSize),
    lr: num(values.lr, TRAIN_DEFAULTS.lr),
    steps: values.steps === undefined ? undefined : num(values.steps, 0),
    seed: num(values.seed, TRAIN_DEFAULTS.seed),
    levels: num(values.levels, TRAIN_DEFAULTS.levels),
    filters: num(values.filters, TRAIN_DEFAULTS.filters),
    deformAlpha: num(values["deform-alpha"], TRAIN_DEFAULTS.deformAlpha),
    deformSigma: num(values["deform-sigma"], TRAIN_DEFAULTS.deformSigma),
    deformWeight: num(values["deform-weight"], TRAIN_DEFAULTS.deformWeight),
  });
  process.stdout.write(`initial_loss = ${result.initialLoss}\n`);
  process.stdout.write(`final_loss = ${result.finalLoss}\n`);
  process.stdout.write(`steps_run = ${result.stepsRun}\n`);
  process.stdout.write(`epochs_run = ${result.epochsRun}\n`);
  process.stdout.write(`final_lr = ${result.finalLr}\n`);
}

function cmdCheckLoss(argv: string[]): void {
  const { values } = parseArgs({
    args: argv,
    options: { seed: { type: "string" } },
  });
  const result = checkLoss(num(values.seed, 0));
  process.stdout.write(`unit_weight_abs_diff = ${result.unitWeightAbsDiff}\n`);
  process.stdout.write(`grad_max_rel_err = ${result.gradMaxRelErr}\n`);
}

function main(): void {
  const [command, ...rest] = process.argv.slice(2);
  try {
    switch (command) {
      case "serve":
        cmdServe(rest);
        break;
      case "train":
        cmdTrain(rest);
        break;
      case "check-loss":
        cmdCheckLoss(rest);
        break;
      default:
        fail(`unknown command ${command ?? "(none)"}; use serve, train or check-loss`);
    }
  } catch (err) {
    fail(err instanceof Error ? err.message : String(err));
  }
}

main();
