"""Asymptotic resource formulas evaluated with explicit constants.

All constants default to 1.0. They are illustrative: the absolute numbers
are not claims about any particular implementation, only the scaling is.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

from .clock import required_M
from .duhamel import choose_K_q
from .linalg import DomainError

REPORT_NOTE = "big-O constants are illustrative; absolute values are not claims"


def _log(x: float) -> float:
    return max(1.0, math.log(x)) if x > 0 else 1.0


@dataclass(frozen=True)
class ResourceConstants:
    c_M: float = 1.0
    c_q: float = 1.0
    c_K: float = 1.0
    c_s: float = 1.0
    c_queries: float = 1.0
    c_gates: float = 1.0
    c_ancillas: float = 1.0

    @classmethod
    def from_dict(cls, data: dict) -> "ResourceConstants":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise DomainError(f"unknown constants {sorted(unknown)}")
        return cls(**{k: float(v) for k, v in data.items()})


@dataclass(frozen=True)
class ResourceInput:
    d: int
    T: float
    h_max: float
    hdot_max: float
    epsilon: float
    n_qubits: int
    constants: ResourceConstants = field(default_factory=ResourceConstants)

    def __post_init__(self):
        for name in ("d", "T", "h_max", "hdot_max", "epsilon", "n_qubits"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not self.epsilon < 1:
            raise DomainError("epsilon must be < 1")

    @property
    def alpha(self) -> float:
        return self.d * self.h_max


@dataclass(frozen=True)
class ResourceReport:
    M: int
    q: int
    K: int
    segments: int
    queries: int
    gates: int
    ancillas: int
    ancillas_lcu: int
    ancillas_clock: int

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


def estimate(inp: ResourceInput) -> ResourceReport:
    c = inp.constants
    scale = inp.T * inp.alpha
    L = _log(scale / inp.epsilon)
    ratio = L / _log(L)
    queries = c.c_queries * scale * ratio
    gates = c.c_gates * scale * (
        inp.n_qubits + _log(scale * inp.hdot_max / inp.epsilon) * ratio
    )
    anc_lcu = c.c_ancillas * L * L / _log(L)
    anc_clock = c.c_ancillas * _log(inp.T * inp.hdot_max / inp.epsilon)
    choice = choose_K_q(inp.T, inp.alpha, inp.hdot_max, inp.epsilon, c.c_K, c.c_q, c.c_s)
    return ResourceReport(
        M=required_M(inp.T, inp.epsilon, inp.hdot_max, c.c_M),
        q=choice.q,
        K=choice.K,
        segments=choice.segment_count,
        queries=math.ceil(queries),
        gates=math.ceil(gates),
        ancillas=math.ceil(anc_lcu + anc_clock),
        ancillas_lcu=math.ceil(anc_lcu),
        ancillas_clock=math.ceil(anc_clock),
    )


def compare_baselines(inp: ResourceInput, alternatives: dict) -> list[dict]:
    """One row per named constants set; the input's own constants come first as 'base'."""
    rows = [{"label": "base", **estimate(inp).as_dict()}]
    for label in sorted(alternatives):
        consts = alternatives[label]
        if isinstance(consts, dict):
            consts = ResourceConstants.from_dict(consts)
        report = estimate(dataclasses.replace(inp, constants=consts))
        rows.append({"label": label, **report.as_dict()})
    return rows
