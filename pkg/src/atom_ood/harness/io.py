"""Output helpers: deterministic JSON/CSV with the config digest embedded, and a worker pool."""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path


def dumps(obj):
    # repr-based floats and sorted keys: identical inputs give identical bytes
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=False) + "\n"


def write_json(path, obj, digest):
    obj = dict(obj)
    obj["config_digest"] = digest
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))
    return path


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def write_table(path, header, rows, digest):
    """CSV whose first line is a ``# config_digest=...`` comment."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# config_digest={digest}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return path


def read_table(path):
    """(digest, header, rows as string lists) from ``write_table`` output."""
    with open(path, newline="", encoding="utf-8") as fh:
        first = fh.readline().strip()
        digest = first.split("=", 1)[1] if first.startswith("# config_digest=") else ""
        rows = list(csv.reader(fh))
    return digest, rows[0], rows[1:]


def pmap(fn, items, threads=1):
    """Ordered map, optionally on a thread pool; results never depend on ``threads``."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))
