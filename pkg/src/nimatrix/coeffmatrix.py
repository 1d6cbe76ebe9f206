"""Assembly, validation, normalization, and serialization of coefficient
matrices.

A coefficient matrix describes an entire sampling run: row ``i`` gives
the model input at evaluation ``i`` as a linear combination of previous
model outputs (``signal``) and Gaussian draws (``noise``); the final row
gives the returned sample.  The signal block is strictly lower
triangular in evaluation order — each input depends only on earlier
outputs.

For every row, the *equivalent marginal coefficients* are the signal row
sum and the noise row norm; a well-behaved matrix keeps them close to
the schedule's ideal amplitudes ``(c0, c1)`` at the row's time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import schedule as sched
from .affine import RunContext, TRACE
from .errors import FormatError, NumericError, ValidationError
from .samplers import SamplerSpec, default_grid, default_schedule, run_native
from .schedule import Schedule, TimeGrid, make_schedule, mixing_coeffs

FORMAT_NAME = "nimatrix/1"

NOISE_MODES = ("traced", "single-terminal", "custom")

#: Terminal-row label for matrices whose sample is the final prediction
#: itself (discrete-chain convention): not a real time point.
TERMINAL_OUTPUT = -1.0


@dataclass(frozen=True)
class CoefficientMatrix:
    schedule_info: dict
    row_times: tuple
    col_times: tuple
    signal: np.ndarray = field(repr=False)
    noise: np.ndarray = field(repr=False)
    noise_times: tuple = ()
    noise_mode: str = "single-terminal"

    def __post_init__(self):
        object.__setattr__(self, "signal", np.asarray(self.signal, dtype=np.float64))
        object.__setattr__(self, "noise", np.asarray(self.noise, dtype=np.float64))
        self.validate()

    # ----- structure -------------------------------------------------
    @property
    def n_evals(self) -> int:
        return len(self.col_times)

    @property
    def n_rows(self) -> int:
        return len(self.row_times)

    def validate(self) -> None:
        r, c = self.signal.shape
        if r != self.n_rows or c != self.n_evals:
            raise ValidationError(
                f"signal shape {self.signal.shape} does not match "
                f"{self.n_rows} rows x {self.n_evals} columns")
        if self.noise.size and self.noise.shape[0] != self.n_rows:
            raise ValidationError("noise block row count mismatch")
        if self.noise.size and len(self.noise_times) != self.noise.shape[1]:
            raise ValidationError("noise_times length mismatch")
        if self.noise_mode not in NOISE_MODES:
            raise ValidationError(f"unknown noise mode {self.noise_mode!r}")
        if not np.all(np.isfinite(self.signal)):
            raise ValidationError("non-finite signal entry")
        if self.noise.size and not np.all(np.isfinite(self.noise)):
            raise ValidationError("non-finite noise entry")
        # Rows before the terminal one are inputs of the evaluations in
        # order, so they must be strictly lower triangular.
        n_input_rows = min(self.n_rows - 1, self.n_evals)
        for i in range(n_input_rows):
            if np.any(self.signal[i, i:] != 0.0):
                j = i + int(np.flatnonzero(self.signal[i, i:] != 0.0)[0])
                raise ValidationError(
                    f"row {i} (time {self.row_times[i]}) has weight on "
                    f"evaluation {j} (time {self.col_times[j]}): "
                    "not lower triangular")

    def schedule(self) -> Schedule:
        return make_schedule(self.schedule_info)


@dataclass(frozen=True)
class MarginalReport:
    row_times: tuple
    equivalent_signal: np.ndarray
    equivalent_noise: np.ndarray
    ideal_signal: np.ndarray
    ideal_noise: np.ndarray

    @property
    def signal_deviation(self) -> np.ndarray:
        return np.abs(self.equivalent_signal - self.ideal_signal)

    @property
    def noise_deviation(self) -> np.ndarray:
        return np.abs(self.equivalent_noise - self.ideal_noise)

    def max_deviation(self, skip_initial_row: bool = False) -> float:
        lo = 1 if skip_initial_row else 0
        return float(max(self.signal_deviation[lo:].max(initial=0.0),
                         self.noise_deviation[lo:].max(initial=0.0)))


# ---------------------------------------------------------------------
# Tracing
# ---------------------------------------------------------------------

def _terminal_row_time(s: Schedule, grid: TimeGrid) -> float:
    if s.family == sched.VP_DISCRETE:
        return TERMINAL_OUTPUT
    return float(grid[-1])


def trace_sampler(spec: SamplerSpec, s: Schedule | None = None,
                  grid: TimeGrid | None = None,
                  n_evals: int = 18) -> CoefficientMatrix:
    """Run the sampler symbolically and assemble its coefficient matrix."""
    if s is None:
        s = default_schedule(spec)
    if grid is None:
        grid = default_grid(spec, s, n_evals)
    ctx = RunContext(mode=TRACE)
    final = run_native(spec, s, grid, ctx)
    n = len(ctx.records)
    m = len(ctx.noise_ids)
    col_times = tuple(t for t, _ in ctx.records)
    noise_index = {nid: j for j, nid in enumerate(ctx.noise_ids)}
    signal = np.zeros((n + 1, n))
    noise = np.zeros((n + 1, m))
    states = [state for _, state in ctx.records] + [final]
    for i, state in enumerate(states):
        for k, v in state.signal.items():
            signal[i, k] = v
        for k, v in state.noise.items():
            noise[i, noise_index[k]] = v
    row_times = col_times + (_terminal_row_time(s, grid),)
    return CoefficientMatrix(
        schedule_info=s.descriptor(), row_times=row_times,
        col_times=col_times, signal=signal, noise=noise,
        noise_times=tuple(nid[0] for nid in ctx.noise_ids),
        noise_mode="traced")


# ---------------------------------------------------------------------
# Marginals
# ---------------------------------------------------------------------

def _ideal_coeffs(s: Schedule, t: float) -> tuple[float, float]:
    if t == TERMINAL_OUTPUT:
        return 1.0, 0.0
    return mixing_coeffs(s, t)


def equivalent_marginals(m: CoefficientMatrix,
                         s: Schedule | None = None) -> MarginalReport:
    """Row sums, row noise norms, and their ideal values per row."""
    if s is None:
        s = m.schedule()
    eq_sig = np.array([math.fsum(row) for row in m.signal])
    if m.noise.size:
        eq_noi = np.sqrt(np.sum(m.noise ** 2, axis=1))
    else:
        eq_noi = np.zeros(m.n_rows)
    ideals = [_ideal_coeffs(s, t) for t in m.row_times]
    return MarginalReport(
        row_times=m.row_times,
        equivalent_signal=eq_sig,
        equivalent_noise=eq_noi,
        ideal_signal=np.array([c0 for c0, _ in ideals]),
        ideal_noise=np.array([c1 for _, c1 in ideals]))


def deviation_trend(spec: SamplerSpec, s: Schedule | None = None,
                    step_counts=(18, 100, 500),
                    skip_initial_row: bool = True):
    """Max marginal deviation of the traced matrix per evaluation count.

    The first row is the pure-noise starting state shared by every
    sampler; its deviation is a property of the initialization, not of
    the iteration rule, so it is skipped by default.
    """
    if len(step_counts) < 2:
        raise ValidationError("need at least two step counts")
    out = []
    for n in step_counts:
        m = trace_sampler(spec, s=s, n_evals=n)
        rep = equivalent_marginals(m)
        out.append(rep.max_deviation(skip_initial_row=skip_initial_row))
    return out


# ---------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------

def normalize_rows(m: CoefficientMatrix, s: Schedule | None = None,
                   targets=None):
    """Rescale each signal row so its sum hits the target marginal.

    Targets default to the schedule's ideal signal coefficient at each
    row time.  Returns ``(matrix, scales)`` where ``scales`` holds the
    per-row factors applied.
    """
    if targets is None:
        if s is None:
            s = m.schedule()
        targets = [_ideal_coeffs(s, t)[0] for t in m.row_times]
    targets = np.asarray(targets, dtype=np.float64)
    if targets.shape != (m.n_rows,):
        raise ValidationError(
            f"need {m.n_rows} targets, got shape {targets.shape}")
    sums = np.array([math.fsum(row) for row in m.signal])
    scales = np.ones(m.n_rows)
    signal = m.signal.copy()
    for i in range(m.n_rows):
        if targets[i] == 0.0 and sums[i] == 0.0:
            continue
        if sums[i] == 0.0:
            raise NumericError(f"row {i} sums to zero; cannot normalize")
        scales[i] = targets[i] / sums[i]
        signal[i] *= scales[i]
    return replace(m, signal=signal), scales


# ---------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------

def save(m: CoefficientMatrix, path) -> None:
    payload = {
        "format": FORMAT_NAME,
        "schedule": m.schedule_info,
        "row_times": list(m.row_times),
        "col_times": list(m.col_times),
        "noise_mode": m.noise_mode,
        "noise_times": list(m.noise_times),
        "signal": [[float(v) for v in row] for row in m.signal],
        "noise": [[float(v) for v in row] for row in m.noise],
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")


def from_payload(payload: dict) -> CoefficientMatrix:
    if payload.get("format") != FORMAT_NAME:
        raise FormatError(
            f"not a {FORMAT_NAME} file (format={payload.get('format')!r})")
    try:
        noise = payload.get("noise") or []
        row_times = tuple(float(t) for t in payload["row_times"])
        m = CoefficientMatrix(
            schedule_info=dict(payload["schedule"]),
            row_times=row_times,
            col_times=tuple(float(t) for t in payload["col_times"]),
            signal=np.asarray(payload["signal"], dtype=np.float64),
            noise=(np.asarray(noise, dtype=np.float64) if len(noise)
                   else np.zeros((len(row_times), 0))),
            noise_times=tuple(float(t) for t in payload.get("noise_times", ())),
            noise_mode=payload.get("noise_mode", "single-terminal"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValidationError):
            raise
        raise FormatError(f"malformed matrix payload: {exc}") from exc
    return m


def load(path) -> CoefficientMatrix:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise FormatError(
                f"invalid matrix file: {exc.msg}", row=exc.lineno,
                column=exc.colno) from exc
    return from_payload(payload)


def to_csv(m: CoefficientMatrix, which: str = "signal") -> str:
    """Flat CSV: first row = column times, first column = row times."""
    if which == "signal":
        block, heads = m.signal, m.col_times
    elif which == "noise":
        block, heads = m.noise, m.noise_times
    else:
        raise ValidationError(f"unknown block {which!r}")
    lines = ["time," + ",".join(repr(float(t)) for t in heads)]
    for t, row in zip(m.row_times, block):
        lines.append(repr(float(t)) + "," + ",".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"
