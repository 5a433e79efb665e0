/**
 * JSON-lines framing for the scorer protocol.
 *
 * One request object per input line: {"id": <integer>, "smiles": [<text>...]}.
 * One response object per output line: {"id": <same>, "scores": [<number|null>...]}.
 * Anything that does not parse into that request shape is a framing error and
 * the serving process is expected to die loudly rather than guess.
 */

export interface OracleRequest {
  id: number;
  smiles: string[];
}

export class FramingError extends Error {}

export function parseRequest(line: string): OracleRequest {
  let obj: unknown;
  try {
    obj = JSON.parse(line);
  } catch (e) {
    throw new FramingError(`not valid JSON: ${(e as Error).message}`);
  }
  if (typeof obj !== 'object' || obj === null || Array.isArray(obj)) {
    throw new FramingError('request must be a JSON object');
  }
  const rec = obj as Record<string, unknown>;
  if (!Number.isInteger(rec.id)) {
    throw new FramingError('request id must be an integer');
  }
  if (!Array.isArray(rec.smiles) || rec.smiles.some((s) => typeof s !== 'string')) {
    throw new FramingError('request smiles must be a list of strings');
  }
  return { id: rec.id as number, smiles: rec.smiles as string[] };
}

export function formatResponse(id: number, scores: Array<number | null>): string {
  return JSON.stringify({ id, scores });
}
