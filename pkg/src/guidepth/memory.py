"""Analytic memory cost of dynamic-kernel guidance variants.

Three ways to turn a guidance feature into a depth-filtering kernel,
ranked by the size of the kernel tensor each one materializes per
sample:

  DC  full per-pixel dynamic convolution      C^2 R^2 H W elements
  CF  channel-wise spatial kernels + mixer    C R^2 H W + C^2
  EG  channel scaling map + mixer             C H W + C^2

Bytes assume 4-byte elements (the sizes the reference hardware tables
quote are float32 even though this package computes in float64), and
gigabytes use the 1024^3 divisor, since that is the convention under
which the published 42.75 GB figure for (C=128, H=128, W=608, R=3)
reproduces exactly.

The ratio column of the report follows the same table convention:
ratios of the GB figures as printed (3 decimals), not of the raw element
counts. The two differ by about half a percent at the reference shape.
"""

import csv
import io
from dataclasses import dataclass
from fractions import Fraction

from .errors import ConfigurationError

BYTES_PER_ELEMENT = 4
_GB = 1024**3
METHODS = ("DC", "CF", "EG")


@dataclass(frozen=True)
class MemoryModel:
    C: int
    H: int
    W: int
    R: int
    bytes_per_element: int = BYTES_PER_ELEMENT

    def __post_init__(self):
        for name in ("C", "H", "W", "R"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigurationError(f"{name} must be a positive integer, got {v!r}")
        if self.R % 2 == 0:
            raise ConfigurationError(f"kernel size R must be odd, got {self.R}")

    def elements(self, method):
        c, h, w, r = self.C, self.H, self.W, self.R
        if method == "DC":
            return c * c * r * r * h * w
        if method == "CF":
            return c * r * r * h * w + c * c
        if method == "EG":
            return c * h * w + c * c
        raise ConfigurationError(f"unknown method {method!r}; expected one of {METHODS}")


@dataclass(frozen=True)
class MemoryCost:
    method: str
    elements: int
    bytes: int
    gigabytes: float


def memory_cost(method, C, H, W, R):
    """Exact element/byte/GB cost of one method at one shape."""
    model = MemoryModel(C, H, W, R)
    n = model.elements(method)
    b = n * model.bytes_per_element
    return MemoryCost(method, n, b, b / _GB)


def closed_form_ratios(C, H, W, R):
    """Exact kernel-size ratios relative to the full dynamic conv.

    Returned as Fractions: EG/DC = (CHW + C^2) / (C^2 R^2 HW) and
    EG/CF = (CHW + C^2) / (C R^2 HW + C^2).
    """
    model = MemoryModel(C, H, W, R)
    eg = model.elements("EG")
    return {
        "EG/DC": Fraction(eg, model.elements("DC")),
        "EG/CF": Fraction(eg, model.elements("CF")),
    }


def _table_gb(cost):
    return round(cost.gigabytes, 3)


def _ratio_vs_eg(cost, eg_cost):
    printed = _table_gb(cost)
    printed_eg = _table_gb(eg_cost)
    if printed_eg == 0.0:
        return cost.bytes / eg_cost.bytes
    return printed / printed_eg


@dataclass
class MemoryReport:
    """Costs of all three methods at one shape, plus display helpers."""

    C: int
    H: int
    W: int
    R: int
    costs: dict

    def rows(self):
        eg = self.costs["EG"]
        out = []
        for method in METHODS:
            c = self.costs[method]
            out.append(
                {
                    "method": method,
                    "C": self.C,
                    "H": self.H,
                    "W": self.W,
                    "R": self.R,
                    "elements": c.elements,
                    "bytes": c.bytes,
                    "GB": c.gigabytes,
                    "ratio_vs_EG": _ratio_vs_eg(c, eg),
                }
            )
        return out

    def as_text(self):
        lines = [
            f"kernel memory at C={self.C} H={self.H} W={self.W} R={self.R} "
            f"({BYTES_PER_ELEMENT}-byte elements, GB = bytes / 1024^3)",
            f"{'method':<8}{'elements':>16}{'bytes':>16}{'GB':>10}{'ratio_vs_EG':>14}",
        ]
        for row in self.rows():
            lines.append(
                f"{row['method']:<8}{row['elements']:>16d}{row['bytes']:>16d}"
                f"{row['GB']:>10.3f}{row['ratio_vs_EG']:>14.0f}"
            )
        return "\n".join(lines)

    def as_csv(self):
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["method", "C", "H", "W", "R", "elements", "bytes", "GB", "ratio_vs_EG"])
        for row in self.rows():
            writer.writerow(
                [
                    row["method"],
                    row["C"],
                    row["H"],
                    row["W"],
                    row["R"],
                    row["elements"],
                    row["bytes"],
                    f"{row['GB']:.6f}",
                    f"{row['ratio_vs_EG']:.6f}",
                ]
            )
        return buf.getvalue()


def memory_report(C=128, H=128, W=608, R=3):
    costs = {m: memory_cost(m, C, H, W, R) for m in METHODS}
    return MemoryReport(C, H, W, R, costs)
