"""Compare the compiled and pure-Python wire kernels on typical lab traffic.

Usage: python benchmarks/bench_wire.py [--repeat N] [--number N]
"""

from __future__ import annotations

import argparse
import timeit

from upnplab import _kernel
from upnplab.attacks import Catalog
from upnplab.wire import SsdpMessage, serialize_ssdp

NOTIFY = serialize_ssdp(SsdpMessage.notify("urn:SecurityCamera", "uuid:camera::urn:SecurityCamera",
                                           "http://camera/desc/device", extra=[("X-CAPTOKEN", "ab" * 400)]))
SUBSCRIBE = (b"SUBSCRIBE /evt/camera HTTP/1.1\r\nHOST: camera\r\nCALLBACK: <http://cp:5000/evt>\r\n"
             b"NT: upnp:event\r\nTIMEOUT: Second-1800\r\n\r\n")
DOC_VALUES = [line.partition("=")[2] for line in Catalog.default().to_bytes().decode().splitlines()]


def workloads(impl) -> dict:
    heads = [(b"NOTIFY * HTTP/1.1", [(b"NT", b"urn:SecurityCamera"), (b"USN", b"uuid:x::urn:y"),
                                     (b"LOCATION", b"http://camera/desc/device")])]
    escaped = [impl.escape_value(v.replace("\\=", "=")) for v in DOC_VALUES]
    return {
        "split_head notify": lambda: impl.split_head(NOTIFY),
        "split_head subscribe": lambda: impl.split_head(SUBSCRIBE),
        "join_head": lambda: impl.join_head(*heads[0]),
        "escape catalog": lambda: [impl.escape_value(v) for v in DOC_VALUES],
        "unescape catalog": lambda: [impl.unescape_value(v) for v in escaped],
    }


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--number", type=int, default=20000)
    args = parser.parse_args()

    backends = _kernel.backends()
    print(f"active backend: {_kernel.BACKEND}; available: {', '.join(backends)}")
    results: dict[str, dict[str, float]] = {}
    for name, impl in backends.items():
        for label, fn in workloads(impl).items():
            best = min(timeit.repeat(fn, repeat=args.repeat, number=args.number))
            results.setdefault(label, {})[name] = best / args.number * 1e6
    print(f"{'workload':<22} " + " ".join(f"{b + ' us':>12}" for b in backends) + "   speedup")
    for label, row in results.items():
        speedup = row["python"] / row["cython"] if "cython" in row else float("nan")
        print(f"{label:<22} " + " ".join(f"{row[b]:>12.3f}" for b in backends) + f"   {speedup:6.2f}x")


if __name__ == "__main__":
    main()
