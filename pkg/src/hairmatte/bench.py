"""Forward-pass timing plus analytic MAC accounting."""
from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass

import numpy as np

from .model import Model, ModelSpec, build_model


class BenchError(RuntimeError):
    pass


@dataclass
class BenchReport:
    variant: str
    input_size: int
    width_multiplier: float
    iterations: int
    median_ms: float
    p95_ms: float
    macs: int
    macs_hairsegnet: int
    macs_hairmattenet: int
    param_bytes: int

    @property
    def mac_ratio(self) -> float:
        """HairMatteNet MACs over HairSegNet MACs at the same spec."""
        return self.macs_hairmattenet / self.macs_hairsegnet

    def as_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["mac_ratio"] = self.mac_ratio
        return d

    def to_text(self) -> str:
        return "\n".join(
            [
                f"model            {self.variant} @ {self.input_size}px, width {self.width_multiplier}",
                f"forward          median {self.median_ms:.2f} ms, p95 {self.p95_ms:.2f} ms over {self.iterations} runs",
                f"MACs             {self.macs:,}",
                f"MACs (seg/matte) {self.macs_hairsegnet:,} / {self.macs_hairmattenet:,} (ratio {self.mac_ratio:.3f})",
                f"parameter bytes  {self.param_bytes:,}",
            ]
        )


def variant_macs(spec: ModelSpec) -> tuple[int, int]:
    """(HairSegNet, HairMatteNet) MACs for ``spec`` with the variant swapped in."""
    seg = build_model(dataclasses.replace(spec, variant="hairsegnet")).macs()
    matte = build_model(dataclasses.replace(spec, variant="hairmattenet")).macs()
    return seg, matte


def time_forward(model: Model, iterations: int = 20, warmup: int = 3, batch: int = 1, seed: int = 0) -> np.ndarray:
    """Wall-clock milliseconds of ``iterations`` inference passes after ``warmup`` discarded ones."""
    if iterations < 1:
        raise BenchError("iterations must be >= 1")
    s = model.spec.input_size
    x = np.random.default_rng(seed).uniform(size=(batch, 3, s, s)).astype(model.dtype)
    for _ in range(warmup):
        model.predict(x)
    times = np.empty(iterations)
    for i in range(iterations):
        t0 = time.perf_counter()
        model.predict(x)
        times[i] = (time.perf_counter() - t0) * 1e3
    return times


def run_bench(model: Model, iterations: int = 20, warmup: int = 3) -> BenchReport:
    times = time_forward(model, iterations, warmup)
    seg, matte = variant_macs(model.spec)
    if not matte < seg:
        raise BenchError(f"HairMatteNet MACs {matte} not below HairSegNet MACs {seg}")
    return BenchReport(
        model.spec.variant,
        model.spec.input_size,
        model.spec.width_multiplier,
        iterations,
        float(np.median(times)),
        float(np.percentile(times, 95)),
        model.macs(),
        seg,
        matte,
        model.param_bytes,
    )
