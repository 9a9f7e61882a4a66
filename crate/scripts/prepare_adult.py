"""Convert the raw UCI Adult files (adult.data, adult.test) into one CSV.

Usage: python3 scripts/prepare_adult.py <adult.data> <adult.test> <out.csv>

Whitespace around cells is stripped, "?" becomes an empty (missing) cell and
the trailing "." on income labels in adult.test is removed.
"""

import csv
import sys

COLUMNS = [
    "age", "workclass", "fnlwgt", "education", "education_num",
    "marital_status", "occupation", "relationship", "race", "sex",
    "capital_gain", "capital_loss", "hours_per_week", "native_country",
    "income",
]


def rows(path):
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("|"):
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != len(COLUMNS):
                continue
            cells = ["" if c == "?" else c for c in cells]
            cells[-1] = cells[-1].rstrip(".")
            yield cells


def main():
    data, test, out = sys.argv[1:4]
    with open(out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(COLUMNS)
        n = 0
        for path in (data, test):
            for cells in rows(path):
                writer.writerow(cells)
                n += 1
    print(f"wrote {n} rows to {out}")


if __name__ == "__main__":
    main()
