"""Packed XNOR-popcount kernel against the float reference on one geometry."""

from __future__ import annotations

import argparse
import re
import statistics
import sys
import time
from typing import Callable

import attrs
import numpy as np
from loguru import logger

from ..bitcore import ConvGeometry, bconv_accumulate_packed, binarize_pack, conv2d_reference
from ..errors import ConfigError
from ..settings import thread_budget

_GEOMETRY_RE = re.compile(
    r"^(?P<cin>\d+)x(?P<cout>\d+):k(?P<k>\d+):s(?P<s>\d+):hw(?P<hw>\d+)(?::g(?P<g>\d+))?(?::n(?P<n>\d+))?$"
)


@attrs.frozen
class BenchCase:
    geom: ConvGeometry
    hw: int
    batch: int = 1

    @property
    def label(self) -> str:
        g = self.geom
        return f"{g.in_channels}x{g.out_channels}:k{g.kernel_h}:s{g.stride}:hw{self.hw}:g{g.groups}:n{self.batch}"


def parse_geometry(text: str) -> BenchCase:
    """``CINxCOUT:kK:sS:hwHW[:gG][:nN]``; padding keeps the spatial size at stride 1."""
    m = _GEOMETRY_RE.match(text.strip())
    if m is None:
        raise ConfigError(f"geometry {text!r} does not look like 512x512:k3:s1:hw16[:g1][:n1]")
    k = int(m["k"])
    geom = ConvGeometry.square(
        int(m["cin"]), int(m["cout"]), k, stride=int(m["s"]), padding=k // 2, groups=int(m["g"] or 1)
    )
    hw, batch = int(m["hw"]), int(m["n"] or 1)
    if hw < 1 or batch < 1:
        raise ConfigError(f"geometry {text!r} needs a positive spatial size and batch")
    return BenchCase(geom, hw, batch)


@attrs.frozen
class BenchResult:
    case: BenchCase
    iters: int
    threads: int
    packed_ns: float
    reference_ns: float

    @property
    def speedup(self) -> float:
        return self.reference_ns / self.packed_ns

    def to_text(self) -> str:
        rows = [
            ("geometry", self.case.label),
            ("iters", str(self.iters)),
            ("threads", str(self.threads)),
            ("packed_ns_median", f"{self.packed_ns:.0f}"),
            ("reference_ns_median", f"{self.reference_ns:.0f}"),
            ("speedup", f"{self.speedup:.2f}"),
        ]
        width = max(len(k) for k, _ in rows)
        return "".join(f"{k:<{width}}  {v}\n" for k, v in rows)


def _median_ns(fn: Callable[[], object], iters: int) -> float:
    samples = []
    for _ in range(iters):
        start = time.perf_counter_ns()
        fn()
        samples.append(time.perf_counter_ns() - start)
    return float(statistics.median(samples))


def run_bench(case: BenchCase, *, iters: int, seed: int = 0, threads: int | None = None) -> BenchResult:
    """Median wall time of both kernels after checking that they agree exactly."""
    if iters < 1:
        raise ConfigError(f"iters must be >= 1, got {iters}")
    threads = thread_budget() if threads is None else threads
    geom = case.geom
    rng = np.random.default_rng(seed)
    x = rng.choice([-1.0, 1.0], size=(case.batch, geom.in_channels, case.hw, case.hw))
    w = rng.choice([-1.0, 1.0], size=geom.weight_shape)
    x_bits = binarize_pack(x, "c")
    w_bits = binarize_pack(w, "chw")

    packed = bconv_accumulate_packed(x_bits, w_bits, geom, threads=threads)
    reference = conv2d_reference(x, w, geom, pad_value=-1.0)
    if not np.array_equal(packed, reference):
        raise RuntimeError(f"packed kernel disagrees with the reference on {case.label}; not timing")
    logger.debug("Outputs of {} agree; timing {} iterations", case.label, iters)

    packed_ns = _median_ns(lambda: bconv_accumulate_packed(x_bits, w_bits, geom, threads=threads), iters)
    reference_ns = _median_ns(lambda: conv2d_reference(x, w, geom, pad_value=-1.0), iters)
    return BenchResult(case, iters, threads, packed_ns, reference_ns)


def cmd_bench(args: argparse.Namespace) -> int:
    result = run_bench(parse_geometry(args.geometry), iters=args.iters, seed=args.seed, threads=args.threads)
    sys.stdout.write(result.to_text())
    return 0


def add_parser(sub: argparse._SubParsersAction) -> None:
    p = sub.add_parser("bench", help="Time the packed kernel against the float reference.")
    p.add_argument("--geometry", default="512x512:k3:s1:hw16", help="CINxCOUT:kK:sS:hwHW[:gG][:nN]")
    p.add_argument("--iters", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None, help="Kernel threads; defaults to EBNET_THREADS.")
    p.set_defaults(handler=cmd_bench)
