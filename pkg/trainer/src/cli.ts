#!/usr/bin/env node
/**
 * evonas-trainer: a training worker for the evonas broker.
 *
 * Connects to a broker (or discovers one via the nameserver), then loops
 * evaluating tasks.  Surrogate and delay tasks are computed in-process;
 * external tasks train the planned autoencoder with TensorFlow.js.
 */

import yargs from "yargs";
import { hideBin } from "yargs/helpers";

import { HEARTBEAT_INTERVAL_MS } from "./protocol.js";
import { DEFAULT_TRAIN_OPTIONS } from "./train.js";
import { Worker, defaultWorkerId } from "./worker.js";

export async function main(argv: string[]): Promise<number> {
  const args = await yargs(argv)
    .scriptName("evonas-trainer")
    .option("broker", {
      type: "string",
      describe: "broker address host:port (mutually exclusive with --nameserver)",
    })
    .option("nameserver", {
      type: "string",
      describe: "nameserver address host:port for broker discovery",
    })
    .option("worker-id", { type: "string", describe: "stable worker identity" })
    .option("heartbeat-ms", {
      type: "number",
      default: HEARTBEAT_INTERVAL_MS,
      describe: "lease heartbeat interval in milliseconds",
    })
    .option("mode", {
      choices: ["denoise", "manifold"] as const,
      default: DEFAULT_TRAIN_OPTIONS.mode,
      describe: "training objective for external tasks",
    })
    .option("epochs", {
      type: "number",
      default: DEFAULT_TRAIN_OPTIONS.epochs,
      describe: "training epochs for external tasks",
    })
    .option("lambda", {
      type: "number",
      default: DEFAULT_TRAIN_OPTIONS.lambda,
      describe: "noise scale for denoise mode",
    })
    .option("dataset-seed", {
      type: "number",
      default: DEFAULT_TRAIN_OPTIONS.datasetSeed,
      describe: "seed for the synthetic training dataset",
    })
    .conflicts("broker", "nameserver")
    .check((a) => {
      if (!a.broker && !a.nameserver) {
        throw new Error("one of --broker or --nameserver is required");
      }
      return true;
    })
    .strict()
    .help()
    .parse();

  const worker = new Worker({
    workerId: args["worker-id"] ?? defaultWorkerId(),
    broker: args.broker,
    nameserver: args.nameserver,
    heartbeatMs: args["heartbeat-ms"],
    train: {
      mode: args.mode,
      epochs: args.epochs,
      lambda: args.lambda,
      datasetSeed: args["dataset-seed"],
    },
  });

  const shutdown = () => {
    worker.stop();
  };
  process.on("SIGINT", shutdown);
  process.on("SIGTERM", shutdown);

  console.error(`worker ${worker.cfg.workerId}: starting`);
  await worker.run();
  return 0;
}

const invokedDirectly =
  process.argv[1] !== undefined &&
  import.meta.url.endsWith(process.argv[1].split("/").pop() as string);

if (invokedDirectly) {
  main(hideBin(process.argv)).then(
    (code) => process.exit(code),
    (e) => {
      console.error(String(e?.message ?? e));
      process.exit(1);
    },
  );
}
