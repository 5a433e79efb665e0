/**
 * Drug-likeness (QED) from eight desirability curves.
 *
 * Each physicochemical property is mapped through an asymmetric double
 * sigmoid and the results are combined as a weighted geometric mean.
 * Curve constants and weights follow the published QED parameterization;
 * property values come straight from the cheminformatics toolkit, with
 * hydrogen-bond acceptors and structural alerts counted by the SMARTS
 * patterns below.
 */

export interface AdsParams {
  a: number;
  b: number;
  c: number;
  d: number;
  e: number;
  f: number;
  dmax: number;
}

export interface QedProperties {
  mw: number;
  alogp: number;
  hba: number;
  hbd: number;
  psa: number;
  rotb: number;
  arom: number;
  alerts: number;
}

// Published curve constants, keyed by property, in (a, b, c, d, e, f, dmax) order.
export const ADS_PARAMS: Record<keyof QedProperties, AdsParams> = {
  mw: { a: 2.817065973, b: 392.5754953, c: 290.7489764, d: 2.419764353, e: 49.22325677, f: 65.37051707, dmax: 104.9805561 },
  alogp: { a: 3.172690585, b: 137.8624751, c: 2.534937431, d: 4.581497897, e: 0.822739154, f: 0.576295591, dmax: 131.3186604 },
  hba: { a: 2.948620388, b: 160.4605972, c: 3.615294657, d: 4.435986202, e: 0.290141953, f: 1.300669958, dmax: 148.7763046 },
  hbd: { a: 1.618662227, b: 1010.051101, c: 0.985094388, d: 0.000000000001, e: 0.713820843, f: 0.920922555, dmax: 258.1632616 },
  psa: { a: 1.876861559, b: 125.2232657, c: 62.90773554, d: 87.83366614, e: 12.01999824, f: 28.51324732, dmax: 104.5686167 },
  rotb: { a: 0.010000051, b: 272.4121427, c: 2.55837997, d: 1.565547684, e: 1.271567166, f: 2.758063707, dmax: 105.4420403 },
  arom: { a: 3.21778897, b: 957.7374108, c: 2.274627939, d: 0.000000000001, e: 1.317690384, f: 0.375760881, dmax: 312.3372610 },
  alerts: { a: 0.01, b: 1199.094025, c: -0.09002883, d: 0.000000000001, e: 0.185904477, f: 0.875193782, dmax: 417.7253140 },
};

// Published per-property weights for the weighted geometric mean.
export const WEIGHTS: Record<keyof QedProperties, number> = {
  mw: 0.66,
  alogp: 0.46,
  hba: 0.05,
  hbd: 0.61,
  psa: 0.06,
  rotb: 0.65,
  arom: 0.48,
  alerts: 0.95,
};

// Hydrogen-bond acceptor environments; hba is the total match count.
export const ACCEPTOR_SMARTS: readonly string[] = [
  '[oH0;X2]',
  '[OH1;X2;v2]',
  '[OH0;X2;v2]',
  '[OH0;X1;v2]',
  '[O-;X1]',
  '[SH0;X2;v2]',
  '[SH0;X1;v2]',
  '[S-;X1]',
  '[nH0;X2]',
  '[NH0;X1;v3]',
  '[$([N;+0;X3;v3]);!$(N[C,S]=O)]',
];

// Structural alerts: a pinned subset of common reactive or unstable
// substructures. Each hit adds one to the alerts count.
export const ALERT_SMARTS: readonly string[] = [
  '[N+](=O)[O-]',
  'C(=O)[Cl,Br,I]',
  '[CX4][Br,I]',
  'C1OC1',
  'C1NC1',
  'N=C=O',
  'N=C=S',
  '[SX2H]',
  '[OX2][OX2]',
  '[NX3][NX3]',
  '[SX2][SX2]',
  '[#6]N=N[#6]',
  '[CX3H1]=O',
  'C=[N+]=[N-]',
  '[Si]',
];

export function ads(x: number, p: AdsParams): number {
  const rise = 1 / (1 + Math.exp(-(x - p.c + p.d / 2) / p.e));
  const fall = 1 - 1 / (1 + Math.exp(-(x - p.c - p.d / 2) / p.f));
  return (p.a + p.b * rise * fall) / p.dmax;
}

const PROPERTY_ORDER: ReadonlyArray<keyof QedProperties> = [
  'mw', 'alogp', 'hba', 'hbd', 'psa', 'rotb', 'arom', 'alerts',
];

export function qedFromProperties(props: QedProperties): number {
  let num = 0;
  let den = 0;
  for (const key of PROPERTY_ORDER) {
    const d = ads(props[key], ADS_PARAMS[key]);
    num += WEIGHTS[key] * Math.log(Math.max(d, 1e-12));
    den += WEIGHTS[key];
  }
  return Math.exp(num / den);
}
