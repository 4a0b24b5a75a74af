"""Download the UCI Adult train/test split into data/adult/.

Usage: python3 scripts/fetch_adult.py [--dest data/adult] [--force]
"""

import argparse
import hashlib
import sys
import urllib.request
from pathlib import Path

BASE = "https://archive.ics.uci.edu/ml/machine-learning-databases/adult/"
FILES = ("adult.data", "adult.test", "adult.names")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--dest", default="data/adult")
    ap.add_argument("--force", action="store_true", help="download even if the file exists")
    a = ap.parse_args(argv)
    dest = Path(a.dest)
    dest.mkdir(parents=True, exist_ok=True)
    for name in FILES:
        path = dest / name
        if path.exists() and not a.force:
            print(f"{path}: present")
            continue
        with urllib.request.urlopen(BASE + name, timeout=60) as r:
            body = r.read()
        path.write_bytes(body)
        print(f"{path}: {len(body)} bytes, sha256 {hashlib.sha256(body).hexdigest()[:16]}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
