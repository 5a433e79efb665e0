#!/usr/bin/env node
/**
 * Scorer child process: JSON-lines over stdin/stdout.
 *
 * Reads one request per line ({"id": n, "smiles": [...]}), writes one
 * response per line ({"id": n, "scores": [...]}) and flushes immediately.
 * Per-molecule failures are nulls in the scores array; a malformed request
 * line is fatal (diagnostic on stderr, nonzero exit) since the client and
 * this process would otherwise disagree about framing.
 */

import { createInterface } from 'readline';
import { FramingError, formatResponse, parseRequest } from './protocol';
import { Scorer } from './scoring';
import type { DockingStub, Mode } from './scoring';

const USAGE = 'usage: cli.js --mode qed|sa|lead [--seed SMILES] [--delta X] '
  + '[--docking constant|synthetic] [--docking-value X]';

interface CliArgs {
  mode: Mode;
  seed?: string;
  delta: number;
  docking: DockingStub;
  dockingValue: number;
}

function parseArgs(argv: string[]): CliArgs {
  const out: CliArgs = { mode: 'qed', delta: 0.4, docking: 'constant', dockingValue: -10.0 };
  let modeSeen = false;
  for (let i = 0; i < argv.length; i++) {
    const flag = argv[i];
    const next = (): string => {
      if (i + 1 >= argv.length) throw new Error(`${flag} needs a value`);
      return argv[++i];
    };
    const nextNumber = (): number => {
      const raw = next();
      const v = Number(raw);
      if (!Number.isFinite(v)) throw new Error(`${flag} needs a number, got ${raw}`);
      return v;
    };
    switch (flag) {
      case '--mode': {
        const v = next();
        if (v !== 'qed' && v !== 'sa' && v !== 'lead') {
          throw new Error(`unknown mode: ${v}`);
        }
        out.mode = v;
        modeSeen = true;
        break;
      }
      case '--seed':
        out.seed = next();
        break;
      case '--delta':
        out.delta = nextNumber();
        break;
      case '--docking': {
        const v = next();
        if (v !== 'constant' && v !== 'synthetic') {
          throw new Error(`unknown docking stub: ${v}`);
        }
        out.docking = v;
        break;
      }
      case '--docking-value':
        out.dockingValue = nextNumber();
        break;
      default:
        throw new Error(`unknown option: ${flag}`);
    }
  }
  if (!modeSeen) {
    throw new Error('--mode is required');
  }
  return out;
}

async function main(): Promise<void> {
  let args: CliArgs;
  try {
    args = parseArgs(process.argv.slice(2));
  } catch (e) {
    console.error(`${e instanceof Error ? e.message : e}\n${USAGE}`);
    process.exit(2);
  }
  let scorer: Scorer;
  try {
    scorer = await Scorer.create({
      mode: args.mode,
      seed: args.seed,
      delta: args.delta,
      docking: args.docking,
      dockingValue: args.dockingValue,
    });
  } catch (e) {
    console.error(`scorer init failed: ${e instanceof Error ? e.message : e}`);
    process.exit(2);
  }

  const rl = createInterface({ input: process.stdin, terminal: false });
  rl.on('line', (line) => {
    try {
      const req = parseRequest(line);
      process.stdout.write(formatResponse(req.id, scorer.scoreBatch(req.smiles)) + '\n');
    } catch (e) {
      if (e instanceof FramingError) {
        console.error(`malformed request line: ${e.message}`);
        process.exit(1);
      }
      console.error(`scoring failed: ${e instanceof Error ? e.stack : e}`);
      process.exit(1);
    }
  });
  rl.on('close', () => {
    scorer.dispose();
    process.exit(0);
  });
}

main();
