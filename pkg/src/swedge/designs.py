"""Stepped wedge design grids with up to two treatments.

A design is an I x T grid of cell conditions: control, treatment 1,
treatment 2, or both treatments at once.  This module covers grid
construction and validation, the fixed-effects design matrix, generators
for standard and concurrent layouts, a catalog of published example
designs, and CSV/JSON serialization.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from typing import Iterable, Sequence

import numpy as np


class DesignError(ValueError):
    """Structurally malformed design (ragged rows, bad codes, too small)."""


class UnknownDesignError(KeyError):
    """Catalog lookup for an id that does not exist."""


class TransitionViolationError(DesignError):
    """Design rejected under the strict transition policy."""

    def __init__(self, violations: Sequence["TransitionViolation"]):
        self.violations = list(violations)
        detail = "; ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} disallowed transition(s): {detail}")


class Condition(IntEnum):
    """Cell condition; integer values double as the design-file codes."""

    CONTROL = 0
    TRT1 = 1
    TRT2 = 2
    BOTH = 3

    @property
    def treatment1(self) -> int:
        """Indicator that treatment 1 is active (1 for TRT1 and BOTH)."""
        return 1 if self in (Condition.TRT1, Condition.BOTH) else 0

    @property
    def treatment2(self) -> int:
        return 1 if self in (Condition.TRT2, Condition.BOTH) else 0


class TransitionPolicy(Enum):
    STRICT = "strict"
    PERMISSIVE = "permissive"


# A cluster may stay put, start treatment from control, or add the second
# treatment on top of a single one.  Dropping a treatment, swapping
# treatments, or returning to control are contamination-prone and barred.
_ALLOWED_TRANSITIONS = frozenset(
    [
        (Condition.CONTROL, Condition.CONTROL),
        (Condition.CONTROL, Condition.TRT1),
        (Condition.CONTROL, Condition.TRT2),
        (Condition.CONTROL, Condition.BOTH),
        (Condition.TRT1, Condition.TRT1),
        (Condition.TRT1, Condition.BOTH),
        (Condition.TRT2, Condition.TRT2),
        (Condition.TRT2, Condition.BOTH),
        (Condition.BOTH, Condition.BOTH),
    ]
)


@dataclass(frozen=True)
class TransitionViolation:
    """A disallowed transition entering (cluster_index, period_index)."""

    cluster_index: int
    period_index: int
    before: Condition
    after: Condition

    def __str__(self) -> str:
        return (
            f"cluster {self.cluster_index + 1}, period {self.period_index + 1}: "
            f"{self.before.name} -> {self.after.name}"
        )


def _coerce_cells(cells: Iterable[Iterable]) -> tuple[tuple[Condition, ...], ...]:
    rows = []
    for r, row in enumerate(cells):
        coerced = []
        for cell in row:
            try:
                coerced.append(Condition(cell))
            except ValueError:
                raise DesignError(f"row {r + 1}: unknown condition code {cell!r}") from None
        rows.append(tuple(coerced))
    if not rows:
        raise DesignError("design has no clusters")
    widths = {len(r) for r in rows}
    if len(widths) != 1:
        raise DesignError(f"ragged design: row lengths {sorted(widths)}")
    if widths.pop() < 2:
        raise DesignError("design needs at least 2 periods")
    return tuple(rows)


@dataclass(frozen=True)
class DesignGrid:
    """Immutable I x T grid of cell conditions.

    ``reconstructed`` marks catalog grids whose exact layout was rebuilt
    from published summary counts rather than copied cell-for-cell; it is
    provenance metadata and excluded from equality.
    """

    cells: tuple[tuple[Condition, ...], ...]
    label: str = ""
    reconstructed: bool = field(default=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "cells", _coerce_cells(self.cells))

    @classmethod
    def from_codes(cls, codes: Iterable[Iterable[int]], label: str = "",
                   reconstructed: bool = False) -> "DesignGrid":
        return cls(cells=tuple(tuple(row) for row in codes), label=label,
                   reconstructed=reconstructed)

    @property
    def n_clusters(self) -> int:
        return len(self.cells)

    @property
    def n_periods(self) -> int:
        return len(self.cells[0])

    def to_codes(self) -> list[list[int]]:
        return [[int(c) for c in row] for row in self.cells]

    def conditions_used(self) -> set[Condition]:
        return {c for row in self.cells for c in row}

    def condition_counts(self) -> dict[Condition, int]:
        counts = {c: 0 for c in Condition}
        for row in self.cells:
            for cell in row:
                counts[cell] += 1
        return counts

    def indicators(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, W) 0/1 arrays of shape (I, T) for treatments 1 and 2."""
        codes = np.array(self.to_codes(), dtype=int)
        x = ((codes == Condition.TRT1) | (codes == Condition.BOTH)).astype(float)
        w = ((codes == Condition.TRT2) | (codes == Condition.BOTH)).astype(float)
        return x, w

    def swap_treatments(self) -> "DesignGrid":
        """Relabel treatment 1 <-> treatment 2 everywhere."""
        swap = {
            Condition.CONTROL: Condition.CONTROL,
            Condition.TRT1: Condition.TRT2,
            Condition.TRT2: Condition.TRT1,
            Condition.BOTH: Condition.BOTH,
        }
        return DesignGrid(
            cells=tuple(tuple(swap[c] for c in row) for row in self.cells),
            label=self.label,
            reconstructed=self.reconstructed,
        )

    def permute_clusters(self, order: Sequence[int]) -> "DesignGrid":
        if sorted(order) != list(range(self.n_clusters)):
            raise DesignError("cluster permutation must reorder all rows exactly once")
        return DesignGrid(
            cells=tuple(self.cells[i] for i in order),
            label=self.label,
            reconstructed=self.reconstructed,
        )

    def relabel(self, label: str) -> "DesignGrid":
        return DesignGrid(cells=self.cells, label=label, reconstructed=self.reconstructed)


def validate_design(
    grid: DesignGrid, policy: TransitionPolicy = TransitionPolicy.STRICT
) -> list[TransitionViolation]:
    """Scan a grid for disallowed between-period transitions.

    The same transitions are flagged under both policies; the policy
    governs enforcement (see :func:`require_valid`), so callers under the
    permissive policy should treat the returned entries as warnings.
    """
    violations = []
    for i, row in enumerate(grid.cells):
        for j in range(1, len(row)):
            if (row[j - 1], row[j]) not in _ALLOWED_TRANSITIONS:
                violations.append(
                    TransitionViolation(
                        cluster_index=i, period_index=j, before=row[j - 1], after=row[j]
                    )
                )
    return violations


def require_valid(
    grid: DesignGrid, policy: TransitionPolicy = TransitionPolicy.STRICT
) -> list[TransitionViolation]:
    """Raise under the strict policy if the grid has disallowed transitions.

    Returns the violation list (warnings) under the permissive policy.
    """
    violations = validate_design(grid, policy)
    if violations and policy is TransitionPolicy.STRICT:
        raise TransitionViolationError(violations)
    return violations


# ---------------------------------------------------------------------------
# Fixed-effects design matrix
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FixedEffectsMatrix:
    """Stacked per-cluster design blocks, cluster-major and period-minor.

    Columns: intercept, period indicators for periods 1..T-1 (the last
    period is the reference level), then the treatment-1, treatment-2 and
    product indicators.
    """

    values: np.ndarray
    n_clusters: int
    n_periods: int

    @property
    def n_columns(self) -> int:
        return self.n_periods + 3

    def cluster_block(self, i: int) -> np.ndarray:
        t = self.n_periods
        return self.values[i * t : (i + 1) * t, :]

    def treatment_columns(self) -> np.ndarray:
        """The (I*T, 3) block of treatment-1, treatment-2, product columns."""
        return self.values[:, self.n_periods :]


def build_design_matrix(grid: DesignGrid) -> FixedEffectsMatrix:
    """Build the (I*T) x (T+3) fixed-effects matrix for a design grid."""
    n_clusters, n_periods = grid.n_clusters, grid.n_periods
    x, w = grid.indicators()
    rows = n_clusters * n_periods
    z = np.zeros((rows, n_periods + 3))
    z[:, 0] = 1.0
    for i in range(n_clusters):
        block = slice(i * n_periods, (i + 1) * n_periods)
        z[block, 1:n_periods] = np.eye(n_periods)[:, : n_periods - 1]
        z[block, n_periods] = x[i]
        z[block, n_periods + 1] = w[i]
        z[block, n_periods + 2] = x[i] * w[i]
    return FixedEffectsMatrix(values=z, n_clusters=n_clusters, n_periods=n_periods)


# ---------------------------------------------------------------------------
# Generators
# ---------------------------------------------------------------------------

def generate_standard_swd(
    sequences: int,
    clusters_per_sequence: int,
    treatment: Condition = Condition.TRT1,
    label: str = "",
) -> DesignGrid:
    """Classic one-treatment stepped wedge layout.

    Sequence s (1-based) stays in control through period s and receives
    ``treatment`` from period s+1 on, over T = sequences + 1 periods, so
    every cluster is treated in the final period.
    """
    if sequences < 1:
        raise DesignError("need at least one sequence")
    if clusters_per_sequence < 1:
        raise DesignError("need at least one cluster per sequence")
    if treatment is Condition.CONTROL:
        raise DesignError("treatment condition cannot be CONTROL")
    n_periods = sequences + 1
    rows = []
    for s in range(1, sequences + 1):
        row = [Condition.CONTROL] * s + [treatment] * (n_periods - s)
        rows.extend([tuple(row)] * clusters_per_sequence)
    return DesignGrid(cells=tuple(rows), label=label)


def concurrent_design(grid_a: DesignGrid, grid_b: DesignGrid, label: str = "") -> DesignGrid:
    """Stack two single-treatment designs into one concurrent trial.

    The inputs must span the same periods and use disjoint treatments:
    one grid only {control, treatment 1}, the other only {control,
    treatment 2}.
    """
    if grid_a.n_periods != grid_b.n_periods:
        raise DesignError(
            f"period mismatch: {grid_a.n_periods} vs {grid_b.n_periods}"
        )
    used_a = grid_a.conditions_used() - {Condition.CONTROL}
    used_b = grid_b.conditions_used() - {Condition.CONTROL}
    valid = (used_a <= {Condition.TRT1} and used_b <= {Condition.TRT2}) or (
        used_a <= {Condition.TRT2} and used_b <= {Condition.TRT1}
    )
    if not valid or (used_a & used_b):
        raise DesignError(
            "concurrent stacking needs disjoint single-treatment grids "
            f"(got {sorted(c.name for c in used_a)} and {sorted(c.name for c in used_b)})"
        )
    if not label:
        label = "+".join(p for p in (grid_a.label, grid_b.label) if p)
    return DesignGrid(cells=grid_a.cells + grid_b.cells, label=label)


# ---------------------------------------------------------------------------
# Design catalog
# ---------------------------------------------------------------------------

_C, _1, _2, _B = 0, 1, 2, 3


def _fig1() -> DesignGrid:
    return generate_standard_swd(3, 2, Condition.TRT1, label="fig1")


def _fig2a_trt1() -> DesignGrid:
    return generate_standard_swd(3, 2, Condition.TRT1, label="fig2a-trt1")


def _fig2a_trt2() -> DesignGrid:
    return generate_standard_swd(3, 2, Condition.TRT2, label="fig2a-trt2")


def _fig2b() -> DesignGrid:
    return concurrent_design(_fig2a_trt1(), _fig2a_trt2(), label="fig2b")


def _fig2c() -> DesignGrid:
    # 10-cluster concurrent variant: one cluster dropped from the last
    # sequence of each treatment's wedge.  Rebuilt from summary counts.
    rows = [
        [_C, _1, _1, _1],
        [_C, _1, _1, _1],
        [_C, _C, _1, _1],
        [_C, _C, _1, _1],
        [_C, _C, _C, _1],
        [_C, _2, _2, _2],
        [_C, _2, _2, _2],
        [_C, _C, _2, _2],
        [_C, _C, _2, _2],
        [_C, _C, _C, _2],
    ]
    return DesignGrid.from_codes(rows, label="fig2c", reconstructed=True)


def _fig5a() -> DesignGrid:
    # Late factorial: the 12-cluster concurrent design with every cluster
    # switched to the combined condition in the final period.
    base = _fig2b()
    cells = tuple(row[:-1] + (Condition.BOTH,) for row in base.cells)
    return DesignGrid(cells=cells, label="fig5a")


def _fig5b() -> DesignGrid:
    # Earlier factorial, 10 clusters: two clusters adopt the combined
    # condition straight from control in period 3, the rest in period 4
    # after a single-treatment phase.  Rebuilt from summary counts (6
    # cluster-periods per single treatment, 12 combined).
    rows = [
        [_C, _C, _B, _B],
        [_C, _C, _B, _B],
        [_C, _1, _1, _B],
        [_C, _1, _1, _B],
        [_C, _1, _1, _B],
        [_C, _2, _2, _B],
        [_C, _2, _2, _B],
        [_C, _2, _2, _B],
        [_C, _C, _C, _B],
        [_C, _C, _C, _B],
    ]
    return DesignGrid.from_codes(rows, label="fig5b", reconstructed=True)


def _fig8_design1() -> DesignGrid:
    # Concurrent-style: each cluster makes a single transition from
    # control into one condition (including straight to combined).
    rows = [
        [_C, _1, _1, _1, _1],
        [_C, _C, _1, _1, _1],
        [_C, _2, _2, _2, _2],
        [_C, _C, _2, _2, _2],
        [_C, _B, _B, _B, _B],
        [_C, _C, _B, _B, _B],
        [_C, _C, _C, _B, _B],
        [_C, _C, _C, _C, _B],
    ]
    return DesignGrid.from_codes(rows, label="fig8-design1", reconstructed=True)


def _fig8_design2() -> DesignGrid:
    # Three clusters run control -> treatment 1 -> combined, three run
    # control -> treatment 2 -> combined, two adopt a single treatment
    # late.  Close to symmetric, with treatment 2 sequenced slightly later.
    rows = [
        [_C, _1, _B, _B, _B],
        [_C, _1, _1, _1, _B],
        [_C, _C, _1, _1, _B],
        [_C, _C, _2, _B, _B],
        [_C, _2, _2, _B, _B],
        [_C, _C, _2, _2, _B],
        [_C, _C, _C, _C, _1],
        [_C, _C, _C, _2, _2],
    ]
    return DesignGrid.from_codes(rows, label="fig8-design2", reconstructed=True)


def _fig8_design3() -> DesignGrid:
    # Six clusters step into a single treatment classic-wedge style; every
    # cluster ends combined, with only two combined cells before the end.
    rows = [
        [_C, _1, _1, _1, _B],
        [_C, _C, _1, _1, _B],
        [_C, _C, _1, _1, _B],
        [_C, _2, _2, _2, _B],
        [_C, _C, _2, _2, _B],
        [_C, _C, _2, _2, _B],
        [_C, _C, _C, _B, _B],
        [_C, _C, _C, _B, _B],
    ]
    return DesignGrid.from_codes(rows, label="fig8-design3", reconstructed=True)


def _fig8_design4() -> DesignGrid:
    # Like design 3 but with earlier combined starts and two clusters that
    # never reach the combined condition.
    rows = [
        [_C, _1, _B, _B, _B],
        [_C, _C, _1, _1, _B],
        [_C, _C, _C, _1, _B],
        [_C, _C, _1, _1, _1],
        [_C, _2, _B, _B, _B],
        [_C, _C, _2, _2, _B],
        [_C, _C, _C, _2, _B],
        [_C, _C, _2, _2, _2],
    ]
    return DesignGrid.from_codes(rows, label="fig8-design4", reconstructed=True)


_CATALOG = {
    "fig1": _fig1,
    "fig2a-trt1": _fig2a_trt1,
    "fig2a-trt2": _fig2a_trt2,
    "fig2b": _fig2b,
    "fig2c": _fig2c,
    "fig5a": _fig5a,
    "fig5b": _fig5b,
    "fig8-design1": _fig8_design1,
    "fig8-design2": _fig8_design2,
    "fig8-design3": _fig8_design3,
    "fig8-design4": _fig8_design4,
}


def catalog_ids() -> list[str]:
    return sorted(_CATALOG)


def catalog_design(design_id: str) -> DesignGrid:
    """Fetch a published example design by id (see :func:`catalog_ids`)."""
    try:
        builder = _CATALOG[design_id]
    except KeyError:
        raise UnknownDesignError(design_id) from None
    return builder()


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

_HEADER_MAGIC = "# swedge-design v1"


def serialize_design(grid: DesignGrid, fmt: str = "csv") -> str:
    """Render a grid as design-file text (CSV by default, or JSON)."""
    if fmt == "json":
        payload: dict = {"label": grid.label, "cells": grid.to_codes()}
        if grid.reconstructed:
            payload["reconstructed"] = True
        return json.dumps(payload) + "\n"
    if fmt != "csv":
        raise DesignError(f"unknown design format {fmt!r}")
    lines = []
    if grid.label or grid.reconstructed:
        header = _HEADER_MAGIC
        if grid.reconstructed:
            header += " reconstructed=true"
        if grid.label:
            header += f" label={grid.label}"
        lines.append(header)
    lines.extend(",".join(str(int(c)) for c in row) for row in grid.cells)
    return "\n".join(lines) + "\n"


def _parse_header(line: str) -> tuple[str, bool]:
    rest = line[len(_HEADER_MAGIC):].strip()
    label, reconstructed = "", False
    if rest.startswith("reconstructed=true"):
        reconstructed = True
        rest = rest[len("reconstructed=true"):].strip()
    if rest.startswith("label="):
        label = rest[len("label="):]
    elif rest:
        raise DesignError(f"malformed design header: {line!r}")
    return label, reconstructed


def parse_design(text: str) -> DesignGrid:
    """Parse design-file content (CSV rows of codes, or the JSON form)."""
    stripped = text.strip()
    if not stripped:
        raise DesignError("empty design file")
    if stripped.startswith("{"):
        try:
            payload = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise DesignError(f"invalid design JSON: {exc}") from None
        if "cells" not in payload:
            raise DesignError("design JSON must contain a 'cells' array")
        return DesignGrid.from_codes(
            payload["cells"],
            label=payload.get("label", ""),
            reconstructed=bool(payload.get("reconstructed", False)),
        )
    label, reconstructed = "", False
    rows = []
    for lineno, line in enumerate(stripped.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            if line.startswith(_HEADER_MAGIC):
                label, reconstructed = _parse_header(line)
            continue
        cells = []
        for tok in line.split(","):
            tok = tok.strip()
            try:
                cells.append(int(tok))
            except ValueError:
                raise DesignError(f"line {lineno}: bad cell value {tok!r}") from None
        rows.append(cells)
    return DesignGrid.from_codes(rows, label=label, reconstructed=reconstructed)
