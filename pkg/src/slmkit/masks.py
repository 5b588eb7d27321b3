"""Attention-permission matrices for the three streams.

The forward content stream sees positions <= i, the backward content stream
sees positions >= i, and the query stream sees strictly-before positions
through the forward half and strictly-after positions through the backward
half -- never its own column. Masks are materialized as explicit boolean
matrices so they can be dumped and tested in isolation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from slmkit.errors import ContractError, LengthError


@dataclass(frozen=True)
class MaskSet:
    """Permission matrices for one sequence length.

    ``query`` has 2n columns: columns [0, n) address forward-stream states,
    columns [n, 2n) address backward-stream states.
    """

    n: int
    forward: np.ndarray
    backward: np.ndarray
    query: np.ndarray


def build_masks(n: int) -> MaskSet:
    """Build the three masks for a sequence of ``n`` positions (sentinels included)."""
    if n < 3:
        raise LengthError(
            f"need n >= 3 (BOS + at least one real token + EOS), got {n}"
        )
    i = np.arange(n)[:, None]
    j = np.arange(n)[None, :]
    forward = j <= i
    backward = j >= i
    query = np.concatenate([j < i, j > i], axis=1)
    return MaskSet(n=n, forward=forward, backward=backward, query=query)


@dataclass
class LeakageReport:
    """Outcome of a multi-layer information-reachability check."""

    n: int
    layers: int
    passed: bool
    # depth -> positions whose own input is transitively reachable
    self_leaks: dict[int, list[int]] = field(default_factory=dict)
    depth1_complete: bool = True

    def first_failure_depth(self) -> int | None:
        return min(self.self_leaks) if self.self_leaks else None


def _bool_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a.astype(np.int32) @ b.astype(np.int32)) > 0


def verify_no_leakage(masks: MaskSet, layers: int) -> LeakageReport:
    """Check that no query position can ever see its own input.

    Propagates index-set reachability through ``layers`` rounds of
    (query <- content, content <- content) attention: after l rounds the
    query at depth l reads content states that have themselves mixed for
    l-1 rounds. PASS requires (a) position i never reaches input i at any
    depth and (b) the depth-1 reachable set is exactly {all j != i}. A
    corrupted mask set whose content streams attend everywhere fails at
    depth 2: bidirectional content states echo position i back into query
    row i one layer later.
    """
    if layers < 1:
        raise ContractError("verify_no_leakage needs layers >= 1")
    n = masks.n
    qf = masks.query[:, :n]
    qb = masks.query[:, n:]
    eye = np.eye(n, dtype=bool)
    off_diag = ~eye

    reach_f = eye.copy()  # content reachability to inputs after 0 layers
    reach_b = eye.copy()
    report = LeakageReport(n=n, layers=layers, passed=True)
    for depth in range(1, layers + 1):
        q_reach = _bool_matmul(qf, reach_f) | _bool_matmul(qb, reach_b)
        if depth == 1 and not np.array_equal(q_reach, off_diag):
            report.depth1_complete = False
        leaks = np.flatnonzero(np.diagonal(q_reach))
        if leaks.size:
            report.self_leaks[depth] = [int(i) for i in leaks]
        reach_f = _bool_matmul(masks.forward, reach_f)
        reach_b = _bool_matmul(masks.backward, reach_b)
    report.passed = not report.self_leaks and report.depth1_complete
    return report


def render_masks(masks: MaskSet, fmt: str = "ascii") -> str:
    """Render the three matrices for the ``masks dump`` subcommand.

    ascii uses '#' for an allowed cell and '.' for a disallowed one.
    """
    if fmt not in ("ascii", "csv"):
        raise ContractError(f"unknown mask format {fmt!r}")
    sections = [
        ("forward", masks.forward),
        ("backward", masks.backward),
        ("query", masks.query),
    ]
    lines: list[str] = []
    for name, mat in sections:
        lines.append(f"# {name} [{mat.shape[0]}x{mat.shape[1]}]")
        for row in mat:
            if fmt == "ascii":
                lines.append("".join("#" if v else "." for v in row))
            else:
                lines.append(",".join("1" if v else "0" for v in row))
    return "\n".join(lines) + "\n"
