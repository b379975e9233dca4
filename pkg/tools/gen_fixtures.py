#!/usr/bin/env python3
"""Regenerate the committed fixtures: the reference scenario, its book CSV,
and the shared barcode validator vectors."""

from __future__ import annotations

import csv
import json
import random
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]

GENRES = ["SciFi", "Mystery", "History", "Poetry", "Engineering"]
AUTHORS = [
    "Asimov, Isaac", "Christie, Agatha", "Tuchman, Barbara", "Dickinson, Emily",
    "Petroski, Henry", "Le Guin, Ursula", "Doyle, Arthur", "Gibbon, Edward",
]
TITLES = [
    "Foundation", "Murder on the Orient Express", "The Guns of August",
    "Collected Poems", "To Engineer Is Human", "The Dispossessed",
    "A Study in Scarlet", "Decline and Fall", "Second Foundation",
    "The Left Hand of Darkness",
]


def check_digit(prefix: str) -> int:
    total = sum((1 if i % 2 == 0 else 3) * int(ch) for i, ch in enumerate(prefix))
    return (10 - total % 10) % 10


def barcode(n: int) -> str:
    prefix = f"97{n:010d}"
    return prefix + str(check_digit(prefix))


def make_books(count: int, rng: random.Random) -> list[dict]:
    books = []
    for i in range(count):
        books.append(
            {
                "barcode": barcode(i + 1),
                "title": TITLES[i % len(TITLES)],
                "author": AUTHORS[i % len(AUTHORS)],
                "genre": GENRES[i % len(GENRES)],
                "width_mm": rng.choice([18, 22, 25, 28, 32, 36, 38]),
            }
        )
    return books


def write_reference_scenario() -> None:
    rng = random.Random(42)
    books = make_books(20, rng)
    requests = []
    for i, book in enumerate(books):
        requests.append({"at_ms": i * 4000, "op": "return", "record": book})
    for i in range(5):
        requests.append(
            {
                "at_ms": 110000 + i * 8000,
                "op": "retrieve",
                "barcode": books[i]["barcode"],
                "kiosk_id": "kiosk1",
            }
        )
    scenario = {
        "layout": "../layouts/reference.json",
        "catalog": None,
        "seed": 42,
        "requests": requests,
    }
    out = ROOT / "scenarios" / "reference.json"
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps(scenario, indent=2) + "\n", encoding="utf-8")

    csv_path = ROOT / "data" / "books.csv"
    csv_path.parent.mkdir(exist_ok=True)
    with open(csv_path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=["barcode", "title", "author", "genre", "width_mm"])
        writer.writeheader()
        writer.writerows(books)


def write_barcode_vectors() -> None:
    rng = random.Random(7)
    cases = []
    for i in range(80):  # valid codes
        code = barcode(rng.randint(0, 10**9))
        cases.append({"input": code, "valid": True, "error": None})
    for _ in range(40):  # wrong check digit
        code = barcode(rng.randint(0, 10**9))
        bad = (int(code[-1]) + rng.randint(1, 9)) % 10
        cases.append({"input": code[:-1] + str(bad), "valid": False, "error": "ChecksumMismatch"})
    for _ in range(40):  # wrong length
        code = barcode(rng.randint(0, 10**9))
        if rng.random() < 0.5:
            mutated = code[: rng.randint(0, 12)]
        else:
            mutated = code + "".join(rng.choices("0123456789", k=rng.randint(1, 3)))
        cases.append({"input": mutated, "valid": False, "error": "BadLength"})
    for _ in range(40):  # non-digits, right length
        code = list(barcode(rng.randint(0, 10**9)))
        code[rng.randint(0, 12)] = rng.choice("abXY -.#z")
        cases.append({"input": "".join(code), "valid": False, "error": "NonDigit"})
    out = ROOT / "shared" / "barcode_vectors.json"
    out.parent.mkdir(exist_ok=True)
    out.write_text(json.dumps({"cases": cases}, indent=1) + "\n", encoding="utf-8")


if __name__ == "__main__":
    write_reference_scenario()
    write_barcode_vectors()
    print("fixtures written")
