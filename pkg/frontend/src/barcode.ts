/**
 * Client-side barcode validation.
 *
 * Mirrors the server rule exactly (the shared vector file in
 * ../shared/barcode_vectors.json keeps both sides honest): 13 decimal
 * digits, where the last is the weighted checksum of the first twelve
 * (weights 1 and 3 alternating, tens' complement of the sum).
 */

export type BarcodeError = "BadLength" | "NonDigit" | "ChecksumMismatch";

export interface BarcodeCheck {
  valid: boolean;
  error: BarcodeError | null;
}

export function checksumDigit(prefix: string): number {
  let total = 0;
  for (let i = 0; i < prefix.length; i++) {
    const weight = i % 2 === 0 ? 1 : 3;
    total += weight * (prefix.charCodeAt(i) - 48);
  }
  return (10 - (total % 10)) % 10;
}

export function checkBarcode(raw: string): BarcodeCheck {
  if (raw.length !== 13) {
    return { valid: false, error: "BadLength" };
  }
  // Strictly ASCII digits; charCode arithmetic below assumes it.
  if (!/^[0-9]{13}$/.test(raw)) {
    return { valid: false, error: "NonDigit" };
  }
  if (checksumDigit(raw.slice(0, 12)) !== Number(raw[12])) {
    return { valid: false, error: "ChecksumMismatch" };
  }
  return { valid: true, error: null };
}
