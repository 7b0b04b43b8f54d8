"""Wald-test power for treatment, interaction, and contrast effects.

Power uses the standard normal approximation to the Wald statistic: both
rejection tails are included, so a zero effect gives back exactly the
type I error rate.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .covariance import CorrelationSpec, CovarianceModel, ParameterError
from .designs import DesignGrid
from .variance import (
    RankDeficiencyError,
    closed_form_covariance,
    contrast_variance,
)

#: Default within-period ICC sweep grid: 0.001 through 0.300 in 0.001 steps.
DEFAULT_RHO_GRID = tuple(round(0.001 * k, 3) for k in range(1, 301))


def wald_power(effect: float, se: float, alpha: float = 0.05) -> float:
    """Two-sided Wald power for a single coefficient.

    Parameters
    ----------
    effect : float
        True coefficient value under the alternative, in the same units
        as ``se``.
    se : float
        Standard error of the estimate; must be positive.
    alpha : float
        Two-sided type I error rate.
    """
    if se <= 0:
        raise ValueError(f"standard error must be positive, got {se}")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie strictly between 0 and 1, got {alpha}")
    if effect == 0:
        return alpha
    crit = norm.ppf(1.0 - alpha / 2.0)
    shift = abs(effect) / se
    return float(norm.cdf(shift - crit) + norm.cdf(-shift - crit))


@dataclass(frozen=True)
class ContrastSpec:
    """A weighted comparison of effect estimates.

    ``weights`` must match the dimension of the design's estimable effect
    set.  ``effect`` is the detectable difference; when omitted it is the
    weighted combination of the main effect sizes.
    """

    label: str
    weights: tuple[float, ...]
    effect: float | None = None

    def __post_init__(self) -> None:
        if not self.label:
            raise ParameterError("contrast needs a label")
        if not any(self.weights):
            raise ParameterError("contrast weights must not all be zero")


@dataclass(frozen=True)
class EffectSpec:
    """Effect sizes, significance level, and requested contrasts.

    ``delta1``/``delta2``/``delta3`` are effect sizes for treatment 1,
    treatment 2 and their interaction, in outcome standard deviations when
    the correlation spec is standardized (raw effect units otherwise).
    Leave an entry ``None`` to skip it; at least one effect or contrast
    must be requested.  ``additive`` analyzes the design under assumed
    additive treatment effects, dropping the interaction column from the
    model entirely.
    """

    delta1: float | None = None
    delta2: float | None = None
    delta3: float | None = None
    alpha: float = 0.05
    contrasts: tuple[ContrastSpec, ...] = ()
    additive: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ParameterError(f"alpha must lie strictly between 0 and 1, got {self.alpha}")
        if self.delta1 is None and self.delta2 is None and self.delta3 is None \
                and not self.contrasts:
            raise ParameterError("request at least one effect or contrast")
        if self.additive and self.delta3 is not None:
            raise ParameterError("an additive analysis has no interaction effect to size")

    def deltas(self) -> dict[str, float]:
        """Mapping of effect label to requested effect size."""
        pairs = zip(("trt1", "trt2", "interaction"), (self.delta1, self.delta2, self.delta3))
        return {label: delta for label, delta in pairs if delta is not None}


@dataclass(frozen=True)
class EffectPower:
    label: str
    effect: float
    se: float
    power: float


@dataclass(frozen=True)
class PowerResult:
    """Per-effect standard errors and power, with run metadata."""

    rows: tuple[EffectPower, ...]
    design_label: str
    model: CovarianceModel
    metadata: dict = field(compare=False)

    def row(self, label: str) -> EffectPower:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(f"no result row for {label!r}")

    def power(self, label: str) -> float:
        return self.row(label).power

    def labels(self) -> tuple[str, ...]:
        return tuple(r.label for r in self.rows)


def _contrast_effect(spec: ContrastSpec, labels: tuple[str, ...],
                     deltas: dict[str, float]) -> float:
    if spec.effect is not None:
        return spec.effect
    total = 0.0
    for weight, label in zip(spec.weights, labels):
        if weight == 0:
            continue
        if label not in deltas:
            raise ParameterError(
                f"contrast {spec.label!r} has no explicit effect size and no "
                f"effect size was given for {label}"
            )
        total += weight * deltas[label]
    return total


def design_power(grid: DesignGrid, correlation: CorrelationSpec,
                 effects: EffectSpec) -> PowerResult:
    """Standard errors and Wald power for one design at one parameter point.

    Standard errors come from the closed-form covariance.  Every requested
    effect must be estimable in the design; otherwise a
    :class:`RankDeficiencyError` names the offender.
    """
    cov = closed_form_covariance(grid, correlation.cov_entries(),
                                 additive=effects.additive)
    deltas = effects.deltas()
    rows = []
    for label, delta in deltas.items():
        if label not in cov.labels:
            raise RankDeficiencyError(
                "effect size requested for an effect the design cannot estimate",
                effect=label,
            )
        se = cov.se(label)
        rows.append(EffectPower(label=label, effect=delta, se=se,
                                power=wald_power(delta, se, effects.alpha)))
    for spec in effects.contrasts:
        var = contrast_variance(spec.weights, cov)
        se = float(np.sqrt(var))
        effect = _contrast_effect(spec, cov.labels, deltas)
        rows.append(EffectPower(label=spec.label, effect=effect, se=se,
                                power=wald_power(effect, se, effects.alpha)))
    metadata = correlation.describe()
    metadata["alpha"] = effects.alpha
    metadata["estimable_effects"] = list(cov.labels)
    return PowerResult(
        rows=tuple(rows),
        design_label=grid.label,
        model=correlation.model,
        metadata=metadata,
    )


@dataclass(frozen=True)
class SweepRow:
    """One parameter point of a sweep; exactly one of result/error is set."""

    index: int
    rho_w: float
    rho_a: float | None
    pi: float | None
    result: PowerResult | None
    error: str | None


def _resolve_point(point, template: CorrelationSpec) -> CorrelationSpec:
    model = template.model
    if isinstance(point, (tuple, list)):
        if model is CovarianceModel.CROSS_SECTIONAL:
            raise ParameterError("cross-sectional sweep points are single rho_w values")
        if len(point) != 2:
            raise ParameterError(f"sweep point {point!r} must have two entries")
        rho_w, extra = float(point[0]), float(point[1])
        if model is CovarianceModel.COHORT:
            return template.with_icc(rho_w=rho_w, pi=extra)
        return template.with_icc(rho_w=rho_w, rho_a=extra)
    return template.with_icc(rho_w=float(point))


def sweep(grid: DesignGrid, correlation: CorrelationSpec, effects: EffectSpec,
          points=DEFAULT_RHO_GRID) -> list[SweepRow]:
    """Evaluate power across a grid of correlation values.

    Each point is a rho_w value, or a ``(rho_w, pi)`` pair for the cohort
    model / ``(rho_w, rho_a)`` pair for the nested exchangeable model.
    Invalid points are reported in their row's ``error`` field without
    aborting the rest; row order follows input order.
    """
    rows = []
    for idx, point in enumerate(points):
        try:
            spec = _resolve_point(point, correlation)
            result = design_power(grid, spec, effects)
            error = None
        except (ParameterError, RankDeficiencyError, ValueError) as exc:
            spec = None
            result = None
            error = str(exc)
        if spec is not None:
            rho_w, rho_a, pi = spec.rho_w, spec.rho_a, spec.pi
        else:
            rho_w, rho_a, pi = _point_values(point, correlation)
        rows.append(SweepRow(index=idx, rho_w=rho_w, rho_a=rho_a, pi=pi,
                             result=result, error=error))
    return rows


def _point_values(point, template: CorrelationSpec):
    """Best-effort (rho_w, rho_a, pi) for reporting a failed sweep point."""
    try:
        if isinstance(point, (tuple, list)):
            rho_w = float(point[0])
            extra = float(point[1]) if len(point) > 1 else None
            if template.model is CovarianceModel.NESTED_EXCHANGEABLE:
                return rho_w, extra, None
            if template.model is CovarianceModel.COHORT:
                return rho_w, None, extra
            return rho_w, None, None
        return float(point), template.rho_a, template.pi
    except (TypeError, ValueError):
        return float("nan"), None, None
