"""CSV report emission (the single report format; pipe into any plotter)."""

import csv


def write_csv(path, rows, fieldnames=None) -> None:
    """Write a list of dict rows; field order comes from the first row."""
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0]) if rows else []
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
