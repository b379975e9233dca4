from __future__ import annotations

import json
from pathlib import Path

import pytest

from autolib import Catalog, load_layout
from autolib.catalog import BookRecord, checksum_digit

REPO_ROOT = Path(__file__).resolve().parents[1]
REFERENCE_LAYOUT = REPO_ROOT / "layouts" / "reference.json"


@pytest.fixture(scope="session")
def reference_layout_path() -> Path:
    return REFERENCE_LAYOUT


@pytest.fixture()
def reference_layout():
    return load_layout(REFERENCE_LAYOUT)


@pytest.fixture()
def reference_doc() -> dict:
    return json.loads(REFERENCE_LAYOUT.read_text(encoding="utf-8"))


def make_barcode(n: int) -> str:
    prefix = f"{n:012d}"
    return prefix + str(checksum_digit(prefix))


def make_record(n: int, width_mm: int = 30, **fields) -> BookRecord:
    defaults = dict(
        barcode=make_barcode(n),
        title=f"Title {n}",
        author=f"Author {n}",
        genre=f"Genre {n % 5}",
        width_mm=width_mm,
    )
    defaults.update(fields)
    return BookRecord(**defaults)


@pytest.fixture()
def empty_catalog(reference_layout) -> Catalog:
    return Catalog(reference_layout.sort_policy)
