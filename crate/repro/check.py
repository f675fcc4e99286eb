#!/usr/bin/env python3
"""Compare evaluate reports in OUT_DIR against expected.json."""
import json
import sys
from pathlib import Path

out = Path(sys.argv[1] if len(sys.argv) > 1 else "out")
expected = json.loads((Path(__file__).parent / "expected.json").read_text())
tol = expected.pop("tolerance")
failed = False
for run, metrics in expected.items():
    path = out / f"{run}.json"
    if not path.exists():
        print(f"SKIP {run}: {path} missing")
        continue
    report = json.loads(path.read_text())
    for key, want in metrics.items():
        got = report[key]
        ok = abs(got - want) <= tol
        failed |= not ok
        print(f"{'PASS' if ok else 'FAIL'} {run} {key}: {got:.2f} (expected {want} ± {tol})")
sys.exit(1 if failed else 0)
