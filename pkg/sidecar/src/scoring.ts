/**
 * Scoring engine wrapping the cheminformatics toolkit.
 *
 * A Scorer is built once per process for a single mode (qed, sa or lead) and
 * then scores SMILES batches synchronously. Invalid SMILES score null; every
 * toolkit molecule object is freed after use. The same entry points back both
 * the CLI process and the direct-call tests, so protocol scores can be checked
 * for exact equality against in-process toolkit values.
 */

import type { JSMol, RDKitLoader, RDKitModule } from '@rdkit/rdkit';
import { ACCEPTOR_SMARTS, ALERT_SMARTS, qedFromProperties } from './qed';
import { saFromDescriptors } from './sa';

export type Mode = 'qed' | 'sa' | 'lead';
export type DockingStub = 'constant' | 'synthetic';

export interface ScorerOptions {
  mode: Mode;
  // lead mode only
  delta?: number;
  seed?: string;
  docking?: DockingStub;
  dockingValue?: number;
}

const FP_DETAILS = JSON.stringify({ radius: 2, nBits: 2048 });

let modulePromise: Promise<RDKitModule> | null = null;

export function loadRDKit(): Promise<RDKitModule> {
  if (modulePromise === null) {
    // the toolkit ships as CommonJS whose declaration file exports only types,
    // so the loader value is pulled out dynamically
    modulePromise = import('@rdkit/rdkit').then((m) => {
      const loader = ((m as { default?: unknown }).default ?? m) as RDKitLoader;
      return loader();
    });
  }
  return modulePromise;
}

function countMatches(mol: JSMol, query: JSMol): number {
  // an empty match set serializes as "{}" rather than "[]"
  const parsed = JSON.parse(mol.get_substruct_matches(query));
  return Array.isArray(parsed) ? parsed.length : 0;
}

function popcountAnd(a: string, b: string): [number, number] {
  let both = 0;
  let either = 0;
  for (let i = 0; i < a.length; i++) {
    const x = a.charCodeAt(i) === 49;
    const y = b.charCodeAt(i) === 49;
    if (x && y) both++;
    if (x || y) either++;
  }
  return [both, either];
}

export function tanimotoFromBits(a: string, b: string): number {
  if (a.length !== b.length) {
    throw new Error('fingerprint length mismatch');
  }
  const [both, either] = popcountAnd(a, b);
  return either === 0 ? 0 : both / either;
}

/** Docking score scaled down as drug-likeness constraints are missed. */
export function leadScore(ds: number, qed: number, sa: number, sim: number,
                          delta: number): number {
  if (delta <= 0) {
    throw new Error('delta must be positive');
  }
  const penalty = Math.max(0, (0.6 - qed) / 0.6)
    + Math.max(0, (sa - 4.0) / 6.0)
    + Math.max(0, (delta - sim) / delta);
  const score = (ds / 15.0) * (1.0 - Math.min(1.0, penalty));
  // saturated penalties yield -0; normalize so JSON and in-process values agree
  return score === 0 ? 0 : score;
}

export class Scorer {
  private constructor(
    private readonly rdkit: RDKitModule,
    private readonly mode: Mode,
    private readonly acceptors: JSMol[],
    private readonly alerts: JSMol[],
    private readonly delta: number,
    private readonly seedFp: string | null,
    private readonly docking: DockingStub,
    private readonly dockingValue: number,
  ) {}

  static async create(opts: ScorerOptions): Promise<Scorer> {
    const rdkit = await loadRDKit();
    const compile = (patterns: readonly string[]): JSMol[] =>
      patterns.map((p) => {
        const q = rdkit.get_qmol(p);
        if (q === null) {
          throw new Error(`SMARTS failed to compile: ${p}`);
        }
        return q;
      });
    const acceptors = compile(ACCEPTOR_SMARTS);
    const alerts = compile(ALERT_SMARTS);

    let seedFp: string | null = null;
    if (opts.mode === 'lead') {
      if (!opts.seed) {
        throw new Error('lead mode requires a seed molecule');
      }
      const seedMol = rdkit.get_mol(opts.seed);
      if (seedMol === null || !seedMol.is_valid()) {
        if (seedMol) seedMol.delete();
        throw new Error(`seed molecule does not parse: ${opts.seed}`);
      }
      seedFp = seedMol.get_morgan_fp(FP_DETAILS);
      seedMol.delete();
    }
    return new Scorer(rdkit, opts.mode, acceptors, alerts,
      opts.delta ?? 0.4, seedFp,
      opts.docking ?? 'constant', opts.dockingValue ?? -10.0);
  }

  qed(mol: JSMol): number {
    const d = JSON.parse(mol.get_descriptors());
    let hba = 0;
    for (const q of this.acceptors) hba += countMatches(mol, q);
    let alerts = 0;
    for (const q of this.alerts) alerts += countMatches(mol, q);
    return qedFromProperties({
      mw: d.amw,
      alogp: d.CrippenClogP,
      hba,
      hbd: d.NumHBD,
      psa: d.tpsa,
      rotb: d.NumRotatableBonds,
      arom: d.NumAromaticRings,
      alerts,
    });
  }

  sa(mol: JSMol): number {
    return saFromDescriptors(JSON.parse(mol.get_descriptors()));
  }

  lead(mol: JSMol): number {
    const sim = tanimotoFromBits(mol.get_morgan_fp(FP_DETAILS), this.seedFp!);
    const ds = this.docking === 'constant'
      ? this.dockingValue
      : this.dockingValue * sim;
    return leadScore(ds, this.qed(mol), this.sa(mol), sim, this.delta);
  }

  score(smiles: string): number | null {
    let mol: JSMol | null = null;
    try {
      mol = this.rdkit.get_mol(smiles);
    } catch {
      return null;
    }
    if (mol === null) {
      return null;
    }
    try {
      // the empty string parses as a zero-atom molecule; score it as invalid
      if (!mol.is_valid() || mol.get_smiles() === '') {
        return null;
      }
      switch (this.mode) {
        case 'qed': return this.qed(mol);
        case 'sa': return this.sa(mol);
        case 'lead': return this.lead(mol);
      }
    } finally {
      mol.delete();
    }
  }

  scoreBatch(smiles: readonly string[]): Array<number | null> {
    return smiles.map((s) => this.score(s));
  }

  dispose(): void {
    for (const q of this.acceptors) q.delete();
    for (const q of this.alerts) q.delete();
  }
}
