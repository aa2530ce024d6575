/**
 * Layer catalog and genotype encoding, matching the Python package
 * token-for-token: comma-separated layer specs such as
 * "5x5conv2d:16,3x3conv2d:32,dropout2d".  The trainer only ever parses
 * genotypes it receives over the wire; it never mutates them.
 */

export const FILTER_COUNTS = [8, 16, 32, 64] as const;
export const DROPOUT_P = 0.5;
export const DEFAULT_MAX_NUM_LAYERS = 10;
export const MAX_ENCODED_LENGTH = 160;

export class GenotypeError extends Error {}
export class UnknownLayerToken extends GenotypeError {}
export class IllegalFilterCount extends GenotypeError {}
export class EmptyModule extends GenotypeError {}
export class TooManyLayers extends GenotypeError {}
export class MalformedToken extends GenotypeError {}

export type ConvKind = "1x1conv2d" | "3x3conv2d" | "5x5conv2d" | "7x7conv2d";
export type LayerKind = ConvKind | "dropout2d";

const CONV_KINDS: readonly ConvKind[] = [
  "1x1conv2d",
  "3x3conv2d",
  "5x5conv2d",
  "7x7conv2d",
];

export interface LayerSpec {
  kind: LayerKind;
  /** Filter count for convolutions; null for dropout. */
  filters: number | null;
}

export function isConv(kind: LayerKind): kind is ConvKind {
  return kind !== "dropout2d";
}

export function kernelSize(kind: ConvKind): number {
  return Number(kind[0]);
}

export function layerToken(spec: LayerSpec): string {
  return isConv(spec.kind) ? `${spec.kind}:${spec.filters}` : spec.kind;
}

export interface Genotype {
  layers: LayerSpec[];
  canonicalKey: string;
}

function parseToken(token: string): LayerSpec {
  if (token === "dropout2d") {
    return { kind: "dropout2d", filters: null };
  }
  if (!token.includes(":")) {
    if (CONV_KINDS.includes(token as ConvKind)) {
      throw new MalformedToken(
        `convolution token '${token}' is missing ':<filters>'`,
      );
    }
    throw new UnknownLayerToken(`unknown layer token '${token}'`);
  }
  const sep = token.indexOf(":");
  const name = token.slice(0, sep);
  const count = token.slice(sep + 1);
  if (count.includes(":")) {
    throw new MalformedToken(`token '${token}' has more than one colon`);
  }
  if (name === "dropout2d") {
    throw new IllegalFilterCount("dropout layers carry no filter count");
  }
  if (!CONV_KINDS.includes(name as ConvKind)) {
    throw new UnknownLayerToken(`unknown layer token '${name}'`);
  }
  if (!/^-?\d+$/.test(count)) {
    throw new MalformedToken(`filter count '${count}' is not an integer`);
  }
  const filters = Number(count);
  if (!(FILTER_COUNTS as readonly number[]).includes(filters)) {
    throw new IllegalFilterCount(
      `filter count must be one of ${FILTER_COUNTS}, got ${filters}`,
    );
  }
  return { kind: name as ConvKind, filters };
}

/** "64-5x5conv2d" (display-table notation) -> "5x5conv2d:64"; input-only. */
function normalizeAlias(token: string): string {
  const sep = token.indexOf("-");
  if (sep > 0) {
    const head = token.slice(0, sep);
    if (/^\d+$/.test(head)) {
      return `${token.slice(sep + 1)}:${head}`;
    }
  }
  return token;
}

export function parse(
  text: string,
  maxNumLayers: number = DEFAULT_MAX_NUM_LAYERS,
): Genotype {
  if (text.length > MAX_ENCODED_LENGTH) {
    throw new TooManyLayers(`encoded module exceeds ${MAX_ENCODED_LENGTH} bytes`);
  }
  const trimmed = text.trim();
  if (!trimmed) {
    throw new EmptyModule("empty module string");
  }
  const tokens = trimmed.split(",");
  if (tokens.some((t) => t === "")) {
    throw new MalformedToken("empty layer token (stray comma?)");
  }
  if (tokens.length > maxNumLayers) {
    throw new TooManyLayers(
      `module has ${tokens.length} layers, limit is ${maxNumLayers}`,
    );
  }
  const layers = tokens.map((t) => parseToken(normalizeAlias(t)));
  return { layers, canonicalKey: layers.map(layerToken).join(",") };
}

export function serialize(g: Genotype): string {
  return g.canonicalKey;
}
