"""Two-sample comparison of morphometric distributions.

Implements the independent two-sample t statistic (pooled by default,
Welch optional) with two-sided p-values computed from the regularized
incomplete beta function.  Quartiles use linear interpolation (the
inclusive convention), recorded in report metadata.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

QUARTILE_CONVENTION = "linear interpolation (inclusive)"


class DegenerateSamplesError(ValueError):
    """Samples insufficient or constant such that t is undefined."""


@dataclass(frozen=True)
class SampleGroup:
    """A labelled list of measurements with cached moments."""

    label: str
    values: tuple[float, ...]
    n: int = field(init=False)
    mean: float = field(init=False)
    sd: float = field(init=False)

    def __post_init__(self) -> None:
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise DegenerateSamplesError(
                f"group {self.label!r} needs >= 2 values, got {len(vals)}"
            )
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "n", len(vals))
        object.__setattr__(self, "mean", float(np.mean(vals)))
        object.__setattr__(self, "sd", float(np.std(vals, ddof=1)))


@dataclass(frozen=True)
class TTestResult:
    t: float
    degrees_freedom: float
    p_value: float
    sed: float
    variant: str


def _betacf(a: float, b: float, x: float) -> float:
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 400):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-15:
            return h
    raise RuntimeError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) accurate to ~1e-13 for moderate arguments."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return float(x)
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_sf_two_sided(t: float, df: float) -> float:
    """Two-sided tail probability of the t distribution."""
    if df <= 0:
        raise ValueError(f"degrees of freedom must be positive, got {df}")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def t_test(a: SampleGroup, b: SampleGroup, variant: str = "pooled") -> TTestResult:
    """Independent two-sample t-test, two-sided.

    pooled: classic Student with df = n1 + n2 - 2.
    welch:  unpooled SED with Welch-Satterthwaite df.
    """
    if variant not in ("pooled", "welch"):
        raise ValueError(f"variant must be 'pooled' or 'welch', got {variant!r}")
    v1, v2 = a.sd**2, b.sd**2
    n1, n2 = a.n, b.n
    if variant == "pooled":
        pooled_var = ((n1 - 1) * v1 + (n2 - 1) * v2) / (n1 + n2 - 2)
        sed = math.sqrt(pooled_var * (1.0 / n1 + 1.0 / n2))
        df = float(n1 + n2 - 2)
    else:
        sed = math.sqrt(v1 / n1 + v2 / n2)
        if v1 == 0.0 and v2 == 0.0:
            df = float(n1 + n2 - 2)
        else:
            df = (v1 / n1 + v2 / n2) ** 2 / (
                (v1 / n1) ** 2 / (n1 - 1) + (v2 / n2) ** 2 / (n2 - 1)
            )
    diff = a.mean - b.mean
    if sed == 0.0:
        if diff == 0.0:
            raise DegenerateSamplesError(
                "both groups constant with equal means; t undefined"
            )
        return TTestResult(
            t=math.copysign(math.inf, diff),
            degrees_freedom=df,
            p_value=0.0,
            sed=0.0,
            variant=variant,
        )
    t = diff / sed
    return TTestResult(
        t=t,
        degrees_freedom=df,
        p_value=t_sf_two_sided(t, df),
        sed=sed,
        variant=variant,
    )


@dataclass(frozen=True)
class GroupSummary:
    label: str
    n: int
    mean: float
    sd: float
    median: float
    q1: float
    q3: float
    minimum: float
    maximum: float


@dataclass(frozen=True)
class PairwiseComparison:
    label_a: str
    label_b: str
    test: TTestResult
    mean_difference_percent: float  # (mean_b - mean_a) / mean_a * 100


@dataclass(frozen=True)
class ComparisonReport:
    metric: str
    variant: str
    quartile_convention: str
    groups: tuple[GroupSummary, ...]
    pairwise: tuple[PairwiseComparison, ...]

    def to_text(self) -> str:
        lines = [
            f"metric: {self.metric}   t-test: {self.variant}   "
            f"quartiles: {self.quartile_convention}",
            f"{'group':<12} {'n':>6} {'mean':>10} {'sd':>9} {'median':>10} "
            f"{'Q1':>10} {'Q3':>10} {'min':>10} {'max':>10}",
        ]
        for g in self.groups:
            lines.append(
                f"{g.label:<12} {g.n:>6d} {g.mean:>10.3f} {g.sd:>9.3f} "
                f"{g.median:>10.3f} {g.q1:>10.3f} {g.q3:>10.3f} "
                f"{g.minimum:>10.3f} {g.maximum:>10.3f}"
            )
        if self.pairwise:
            lines.append("")
            lines.append(
                f"{'pair':<26} {'t':>9} {'df':>8} {'p':>12} {'diff %':>8}"
            )
            for c in self.pairwise:
                p_txt = f"{c.test.p_value:.3e}" if c.test.p_value < 1e-3 else f"{c.test.p_value:.4f}"
                lines.append(
                    f"{c.label_a + ' vs ' + c.label_b:<26} {c.test.t:>9.4f} "
                    f"{c.test.degrees_freedom:>8.2f} {p_txt:>12} "
                    f"{c.mean_difference_percent:>+8.2f}"
                )
        return "\n".join(lines)


def summarize_group(group: SampleGroup) -> GroupSummary:
    vals = np.asarray(group.values, dtype=float)
    q1, med, q3 = np.percentile(vals, [25, 50, 75])
    return GroupSummary(
        label=group.label,
        n=group.n,
        mean=group.mean,
        sd=group.sd,
        median=float(med),
        q1=float(q1),
        q3=float(q3),
        minimum=float(vals.min()),
        maximum=float(vals.max()),
    )


def group_report(
    groups: list[SampleGroup], metric: str, variant: str = "pooled"
) -> ComparisonReport:
    """Summaries plus pairwise t-tests and relative mean differences."""
    if len(groups) < 2:
        raise ValueError(f"need >= 2 groups, got {len(groups)}")
    summaries = tuple(summarize_group(g) for g in groups)
    pairwise = []
    for ga, gb in combinations(groups, 2):
        try:
            test = t_test(ga, gb, variant)
        except DegenerateSamplesError:
            test = TTestResult(
                t=0.0,
                degrees_freedom=float(ga.n + gb.n - 2),
                p_value=1.0,
                sed=0.0,
                variant=variant,
            )
        rel = (
            (gb.mean - ga.mean) / ga.mean * 100.0 if ga.mean != 0 else math.inf
        )
        pairwise.append(
            PairwiseComparison(
                label_a=ga.label, label_b=gb.label, test=test,
                mean_difference_percent=rel,
            )
        )
    return ComparisonReport(
        metric=metric,
        variant=variant,
        quartile_convention=QUARTILE_CONVENTION,
        groups=summaries,
        pairwise=tuple(pairwise),
    )
