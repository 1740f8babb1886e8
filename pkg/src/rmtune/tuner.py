"""Unsupervised tuning of a binary head's weights by coordinate descent on
the closed-form hinge risk.

The objective needs no labels: project the hidden vectors of an unlabeled
set onto the head's margin direction, fit a two-component Gaussian mixture
to the projections (scoremodel), and evaluate the closed-form risk of that
fit (risk). Gradients come from forward finite differences, one coordinate
at a time.

Softmax probabilities and hinge margins depend on the two weight rows only
through their difference, so the search runs over the margin vector
v = W[1] - W[0]; row 0 stays fixed and row 1 is reconstituted as
W[0] + v on output. Descent is guarded by default: a coordinate update
that raises the estimated risk is rolled back, which keeps the accepted
risk sequence non-increasing even though each EM refit adds a little noise
to the surface. Every refit warm-starts from the previous accepted fit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateDataError, TuneError
from .heads import HeadWeights
from .risk import RiskEstimate, closed_form_risk
from .scoremodel import assign_components, fit_gmm

UPDATE_MODES = ("per-coordinate", "per-sweep")
PRIOR_MODES = ("fixed", "estimated")


@dataclass(frozen=True)
class TuneConfig:
    """Knobs for the descent loop.

    `max_iters` counts full coordinate sweeps; `tolerance` is on the
    relative risk change across one sweep. `priors` are the assumed class
    weights handed to the mixture fit when `prior_mode` is "fixed";
    "estimated" lets EM learn them instead. `guarded=False` disables the
    rollback of risk-increasing updates. `update_mode` "per-coordinate"
    applies each coordinate's step immediately; "per-sweep" accumulates a
    whole sweep's gradient against one base point and applies it at once.
    """

    delta: float = 1e-2
    learning_rate: float = 0.1
    max_iters: int = 2000
    tolerance: float = 1e-6
    priors: tuple[float, float] = (0.99, 0.01)
    prior_mode: str = "fixed"
    guarded: bool = True
    update_mode: str = "per-coordinate"

    def __post_init__(self) -> None:
        if not (self.delta > 0.0):
            raise TuneError(f"delta must be positive, got {self.delta}")
        if not (self.learning_rate > 0.0):
            raise TuneError(
                f"learning_rate must be positive, got {self.learning_rate}")
        if self.max_iters < 1:
            raise TuneError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tolerance > 0.0):
            raise TuneError(
                f"tolerance must be positive, got {self.tolerance}")
        if self.prior_mode not in PRIOR_MODES:
            raise TuneError(f"unknown prior_mode {self.prior_mode!r}")
        p0, p1 = self.priors
        if not (0.0 < p0 < 1.0 and 0.0 < p1 < 1.0):
            raise TuneError(f"priors must lie in (0, 1), got {self.priors}")
        if abs(p0 + p1 - 1.0) > 1e-12:
            raise TuneError(f"priors must sum to 1, got {self.priors}")
        if self.update_mode not in UPDATE_MODES:
            raise TuneError(f"unknown update_mode {self.update_mode!r}")


@dataclass(frozen=True)
class TuneRecord:
    """One accepted weight update."""

    iteration: int
    coordinate: int
    risk_before: float
    risk_after: float
    delta_applied: float


@dataclass
class TuneTrace:
    records: list[TuneRecord] = field(default_factory=list)
    final_v: np.ndarray = field(default_factory=lambda: np.zeros(0))
    converged: bool = False
    sweeps: int = 0
    aborted: bool = False
    diagnostic: str = ""

    def __post_init__(self) -> None:
        for r in self.records:
            if not (r.risk_before >= 0.0 and r.risk_after >= 0.0):
                raise TuneError(
                    f"negative risk in trace record {r!r}")


def _hidden_matrix(hidden_set) -> np.ndarray:
    H = np.asarray(hidden_set, dtype=np.float64)
    if H.ndim != 2:
        raise TuneError(f"hidden_set must be 2-d, got shape {H.shape}")
    if H.shape[0] < 10:
        raise TuneError(f"need at least 10 hidden vectors, got {H.shape[0]}")
    return H


def risk_of_weights(v, hidden_set, config: TuneConfig = TuneConfig(),
                    init=None) -> RiskEstimate:
    """Closed-form risk of the margin weights `v` on an unlabeled set.

    Projects every hidden vector onto `v`, fits the two-component mixture
    to the margins (warm-started from `init` = (mu0, sigma0, mu1, sigma1)
    when given), and evaluates the closed-form risk of the fit. A constant
    margin sample (e.g. v = 0) raises the mixture's degenerate-data error.
    """
    H = _hidden_matrix(hidden_set)
    vec = np.asarray(v, dtype=np.float64).ravel()
    if vec.shape[0] != H.shape[1]:
        raise TuneError(
            f"weight dimension {vec.shape[0]} does not match hidden "
            f"dimension {H.shape[1]}")
    margins = H @ vec
    priors = config.priors if config.prior_mode == "fixed" else None
    fit = assign_components(fit_gmm(margins, priors=priors, init=init))
    return closed_form_risk(fit)


def _fit_tuple(estimate: RiskEstimate):
    g = estimate.gaussians
    return (g.mu0, g.sigma0, g.mu1, g.sigma1)


def tune(head: HeadWeights, hidden_set,
         config: TuneConfig = TuneConfig()) -> tuple[HeadWeights, TuneTrace]:
    """Guarded finite-difference coordinate descent on the margin vector.

    Returns a new HeadWeights (inputs are never mutated) and the trace of
    accepted updates. If the starting margins are degenerate the run aborts:
    the weights come back unchanged with `aborted` set and a diagnostic.
    """
    H = _hidden_matrix(hidden_set)
    if head.W.ndim != 2 or head.W.shape[0] != 2:
        raise TuneError(f"head weights must have shape (2, d), "
                        f"got {head.W.shape}")
    if head.W.shape[1] != H.shape[1]:
        raise TuneError(
            f"head dimension {head.W.shape[1]} does not match hidden "
            f"dimension {H.shape[1]}")

    w0 = head.W[0].copy()
    v = head.W[1] - head.W[0]
    dim = v.shape[0]

    def rebuild(vec: np.ndarray) -> HeadWeights:
        return HeadWeights(name=head.name, W=np.vstack([w0, w0 + vec]),
                           b=head.b.copy())

    try:
        base = risk_of_weights(v, H, config)
    except DegenerateDataError as err:
        trace = TuneTrace(records=[], final_v=v.copy(), converged=False,
                          sweeps=0, aborted=True, diagnostic=str(err))
        return rebuild(v), trace

    base_risk = base.value
    warm = _fit_tuple(base)
    records: list[TuneRecord] = []
    sweeps = 0
    # An infinite tolerance is satisfied before the first sweep runs.
    converged = math.isinf(config.tolerance)

    while not converged and sweeps < config.max_iters:
        start_risk = base_risk
        if config.update_mode == "per-coordinate":
            for i in range(dim):
                probe = v.copy()
                probe[i] += config.delta
                try:
                    pert = risk_of_weights(probe, H, config, init=warm)
                except DegenerateDataError:
                    continue
                grad = (pert.value - base_risk) / config.delta
                if grad == 0.0:
                    continue
                step = -config.learning_rate * grad
                candidate = v.copy()
                candidate[i] += step
                try:
                    cand = risk_of_weights(candidate, H, config, init=warm)
                except DegenerateDataError:
                    continue
                if config.guarded and cand.value > base_risk:
                    continue
                records.append(TuneRecord(sweeps, i, base_risk, cand.value,
                                          step))
                v = candidate
                base_risk = cand.value
                warm = _fit_tuple(cand)
        else:
            grads = np.zeros(dim)
            for i in range(dim):
                probe = v.copy()
                probe[i] += config.delta
                try:
                    pert = risk_of_weights(probe, H, config, init=warm)
                except DegenerateDataError:
                    continue
                grads[i] = (pert.value - base_risk) / config.delta
            steps = -config.learning_rate * grads
            if np.any(steps != 0.0):
                candidate = v + steps
                try:
                    cand = risk_of_weights(candidate, H, config, init=warm)
                except DegenerateDataError:
                    cand = None
                if cand is not None and not (config.guarded
                                             and cand.value > base_risk):
                    for i in range(dim):
                        if steps[i] != 0.0:
                            records.append(TuneRecord(sweeps, i, base_risk,
                                                      cand.value, steps[i]))
                    v = candidate
                    base_risk = cand.value
                    warm = _fit_tuple(cand)
        sweeps += 1
        rel = abs(start_risk - base_risk) / max(abs(start_risk), 1e-300)
        converged = rel < config.tolerance

    trace = TuneTrace(records=records, final_v=v.copy(), converged=converged,
                      sweeps=sweeps)
    return rebuild(v), trace


_MAGIC = "tune-trace v1"


def save_trace(trace: TuneTrace, path) -> None:
    """Write a trace as decimal text; floats use repr for exact round-trip."""
    lines = [_MAGIC]
    lines.append(f"converged {str(trace.converged).lower()} "
                 f"sweeps {trace.sweeps} "
                 f"aborted {str(trace.aborted).lower()}")
    lines.append(f"diagnostic {trace.diagnostic}")
    lines.append(f"records {len(trace.records)}")
    for r in trace.records:
        lines.append(f"{r.iteration} {r.coordinate} {r.risk_before!r} "
                     f"{r.risk_after!r} {r.delta_applied!r}")
    lines.append(f"final {trace.final_v.shape[0]}")
    for x in trace.final_v:
        lines.append(repr(float(x)))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


class _TraceReader:
    def __init__(self, path):
        with open(path, "r", encoding="utf-8") as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    def next(self) -> str:
        if self.pos >= len(self.lines):
            raise TuneError(f"trace file truncated at line {self.pos + 1}")
        line = self.lines[self.pos]
        self.pos += 1
        return line

    def error(self, message: str) -> TuneError:
        return TuneError(f"line {self.pos}: {message}")


def _parse_bool(reader, token: str) -> bool:
    if token not in ("true", "false"):
        raise reader.error(f"expected true/false, got {token!r}")
    return token == "true"


def load_trace(path) -> TuneTrace:
    reader = _TraceReader(path)
    if reader.next() != _MAGIC:
        raise reader.error(f"expected header {_MAGIC!r}")

    parts = reader.next().split()
    if len(parts) != 6 or parts[0] != "converged" or parts[2] != "sweeps" \
            or parts[4] != "aborted":
        raise reader.error("malformed summary line")
    converged = _parse_bool(reader, parts[1])
    aborted = _parse_bool(reader, parts[5])
    try:
        sweeps = int(parts[3])
    except ValueError:
        raise reader.error(f"bad sweep count {parts[3]!r}") from None

    diag_line = reader.next()
    if not diag_line.startswith("diagnostic"):
        raise reader.error("expected diagnostic line")
    diagnostic = diag_line[len("diagnostic"):].strip()

    head, _, count = reader.next().partition(" ")
    if head != "records":
        raise reader.error("expected records count")
    try:
        n_records = int(count)
    except ValueError:
        raise reader.error(f"bad record count {count!r}") from None

    records = []
    for _ in range(n_records):
        fields = reader.next().split()
        if len(fields) != 5:
            raise reader.error(f"expected 5 fields, got {len(fields)}")
        try:
            records.append(TuneRecord(int(fields[0]), int(fields[1]),
                                      float(fields[2]), float(fields[3]),
                                      float(fields[4])))
        except ValueError as err:
            raise reader.error(str(err)) from None

    head, _, count = reader.next().partition(" ")
    if head != "final":
        raise reader.error("expected final weight count")
    try:
        dim = int(count)
    except ValueError:
        raise reader.error(f"bad weight count {count!r}") from None
    values = []
    for _ in range(dim):
        token = reader.next()
        try:
            values.append(float(token))
        except ValueError:
            raise reader.error(f"bad weight value {token!r}") from None

    return TuneTrace(records=records, final_v=np.array(values),
                     converged=converged, sweeps=sweeps, aborted=aborted,
                     diagnostic=diagnostic)
