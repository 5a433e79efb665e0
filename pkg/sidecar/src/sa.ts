/**
 * Synthetic-accessibility estimate on the usual 1 (easy) to 10 (hard) scale.
 *
 * Additive penalty model over toolkit descriptors: molecule size beyond a
 * small-molecule baseline, ring count, stereocenters, and spiro/bridgehead
 * atoms. This is a desk-scale stand-in calibrated to rank obviously easy
 * molecules low and caged or stereo-dense ones high; it is not the published
 * fragment-contribution SA score.
 */

export interface SaDescriptors {
  NumHeavyAtoms: number;
  NumRings: number;
  NumAtomStereoCenters: number;
  NumSpiroAtoms: number;
  NumBridgeheadAtoms: number;
}

export function saFromDescriptors(d: SaDescriptors): number {
  const size = Math.max(0, (d.NumHeavyAtoms - 25) / 12);
  const rings = 0.4 * Math.max(0, d.NumRings - 2);
  const stereo = 0.5 * d.NumAtomStereoCenters;
  const spiro = 0.8 * d.NumSpiroAtoms;
  const bridge = 1.0 * d.NumBridgeheadAtoms;
  const raw = 1 + size + rings + stereo + spiro + bridge;
  return Math.min(10, Math.max(1, raw));
}
