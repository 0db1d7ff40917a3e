"""Full-size reproduction: 512 training windows per domain, 256 held-out,
default networks, 200 epochs, five seeds. Slow: each seed is roughly half
an hour of single-core compute, and seeds run in parallel when cores allow.

    python demos/04_reproduction.py [out_dir] [n_seeds]
"""
import sys

from mtscyclegan.reproduce import run_trials

out = sys.argv[1] if len(sys.argv) > 1 else "runs/reproduction"
n = int(sys.argv[2]) if len(sys.argv) > 2 else 5

results = run_trials(range(n), out, needed=min(3, n),
                     on_result=lambda r: print(r.summary(), flush=True))
passed = sum(r.passed for r in results)
print(f"{passed} of {len(results)} finished seeds pass (gamma exact, amplitude error <= 0.20, "
      f"held-out cycle <= 20% of initial)")
