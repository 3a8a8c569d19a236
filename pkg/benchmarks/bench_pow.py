"""Compare the compiled mining kernel against the pure-Python fallback.

Runs the same deterministic workload through both backends, checks they
produce identical nonces and digests, and prints throughput. Usage:

    python benchmarks/bench_pow.py [--bits 16] [--blocks 40]
"""
from __future__ import annotations

import argparse
import hashlib
import importlib
import os
import sys
import time


def load_backend(pure: bool):
    os.environ["LEASIM_PURE"] = "1" if pure else ""
    for mod in ("leasim.powcore", "leasim._powcore_py"):
        sys.modules.pop(mod, None)
    return importlib.import_module("leasim.powcore")


def workload(core, bits: int, blocks: int) -> tuple[float, list[tuple[int, bytes]]]:
    prev = hashlib.sha256(b"bench-genesis").digest()
    results = []
    start = time.perf_counter()
    for height in range(1, blocks + 1):
        payload = hashlib.sha256(f"payload-{height}".encode()).digest()
        nonce, digest = core.mine_nonce(height, prev, payload, bits)
        results.append((nonce, digest))
        prev = digest
    return time.perf_counter() - start, results


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--bits", type=int, default=16)
    parser.add_argument("--blocks", type=int, default=40)
    args = parser.parse_args()

    compiled = load_backend(pure=False)
    compiled_name = compiled.BACKEND
    t_compiled, r_compiled = workload(compiled, args.bits, args.blocks)

    pure = load_backend(pure=True)
    t_pure, r_pure = workload(pure, args.bits, args.blocks)

    if r_compiled != r_pure:
        print("MISMATCH: backends disagree on nonces/digests")
        return 1

    attempts = sum(nonce + 1 for nonce, _ in r_pure)
    print(f"workload: {args.blocks} blocks at {args.bits} bits "
          f"({attempts} hash attempts)")
    print(f"  {compiled_name:>8}: {t_compiled:.3f}s "
          f"({attempts / t_compiled:,.0f} h/s)")
    print(f"  {'pure':>8}: {t_pure:.3f}s ({attempts / t_pure:,.0f} h/s)")
    if compiled_name != "pure":
        print(f"  speedup: {t_pure / t_compiled:.1f}x")
    else:
        print("  compiled extension not built; both runs used the fallback")
    print("  backends bit-identical: yes")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
