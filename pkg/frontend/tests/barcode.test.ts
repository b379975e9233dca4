import { readFileSync } from "node:fs";
import { fileURLToPath } from "node:url";
import { describe, expect, it } from "vitest";

import { checkBarcode, checksumDigit } from "../src/barcode.js";

const vectorsPath = fileURLToPath(
  new URL("../../shared/barcode_vectors.json", import.meta.url),
);

interface VectorCase {
  input: string;
  valid: boolean;
  error: string | null;
}

describe("barcode validator", () => {
  it("accepts the worked example", () => {
    expect(checkBarcode("4006381333931")).toEqual({ valid: true, error: null });
  });

  it("names the first failed check", () => {
    expect(checkBarcode("").error).toBe("BadLength");
    expect(checkBarcode("40063813339a1").error).toBe("NonDigit");
    expect(checkBarcode("4006381333932").error).toBe("ChecksumMismatch");
  });

  it("computes check digits", () => {
    expect(checksumDigit("400638133393")).toBe(1);
  });

  it("agrees with the server on all shared vectors", () => {
    const { cases } = JSON.parse(readFileSync(vectorsPath, "utf-8")) as {
      cases: VectorCase[];
    };
    expect(cases.length).toBe(200);
    for (const item of cases) {
      const verdict = checkBarcode(item.input);
      expect(verdict.valid, `input ${JSON.stringify(item.input)}`).toBe(item.valid);
      expect(verdict.error, `input ${JSON.stringify(item.input)}`).toBe(item.error);
    }
  });
});
