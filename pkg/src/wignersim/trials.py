"""Seeded Monte Carlo trials and unitary-vs-collapse discrimination."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from statistics import NormalDist

from .engine import DynamicsModel, Executor, as_model
from .errors import EngineError, InvalidCounts, InvalidThreshold
from .protocol import ValidatedProtocol
from .rng import RngStream
from .statevec import marginal_probability

FORMAT_VERSION = 1
RETURN_TOL = 1e-10
DEFAULT_THRESHOLD = 100.0


def bayes_factor(k: int, n: int, p_unitary: float = 1.0, p_collapse: float = 0.5) -> float:
    """Likelihood ratio L(unitary) / L(collapse) after ``k`` returns in ``n`` trials.

    Each hypothesis is a point return probability. With the defaults this is
    ``2**n`` when every trial returned and 0 otherwise. Overflow gives ``inf``.
    """
    if not (isinstance(k, int) and isinstance(n, int)) or n < 0 or not 0 <= k <= n:
        raise InvalidCounts(f"need integers 0 <= k <= n, got k={k}, n={n}")
    for p in (p_unitary, p_collapse):
        if not 0.0 <= p <= 1.0:
            raise InvalidCounts(f"probabilities must lie in [0, 1], got {p}")

    def log_likelihood(p: float) -> float:
        total = 0.0
        for count, q in ((k, p), (n - k, 1.0 - p)):
            if count:
                if q == 0.0:
                    return -math.inf
                total += count * math.log(q)
        return total

    lu, lc = log_likelihood(p_unitary), log_likelihood(p_collapse)
    if lu == -math.inf and lc == -math.inf:
        raise InvalidCounts(f"k={k}, n={n} is impossible under both hypotheses")
    if lu == -math.inf:
        return 0.0
    if lc == -math.inf:
        return math.inf
    # exact powers where the ratio per trial is exactly representable
    try:
        ratio = 1.0
        if k:
            ratio *= (p_unitary / p_collapse) ** k
        if n - k:
            ratio *= ((1.0 - p_unitary) / (1.0 - p_collapse)) ** (n - k)
        if math.isfinite(ratio):
            return ratio
    except OverflowError:
        pass
    log_ratio = lu - lc
    return math.inf if log_ratio > 709.0 else math.exp(log_ratio)


def trials_to_threshold(threshold: float, p_collapse: float = 0.5) -> int:
    """Fewest all-return trials whose Bayes factor reaches ``threshold``."""
    if not (isinstance(threshold, (int, float)) and math.isfinite(threshold) and threshold > 1):
        raise InvalidThreshold(f"threshold must be a finite number > 1, got {threshold!r}")
    if not 0.0 < p_collapse < 1.0:
        raise InvalidThreshold(f"p_collapse must lie in (0, 1), got {p_collapse}")
    per_trial = 1.0 / p_collapse
    n = max(1, math.ceil(math.log(threshold) / math.log(per_trial)))
    while per_trial**n < threshold:
        n += 1
    while n > 1 and per_trial ** (n - 1) >= threshold:
        n -= 1
    return n


def wilson_interval(k: int, n: int, confidence: float = 0.99) -> tuple[float, float]:
    if n <= 0 or not 0 <= k <= n:
        raise InvalidCounts(f"need 0 <= k <= n and n > 0, got k={k}, n={n}")
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = k / n
    denom = 1 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


@dataclass(frozen=True)
class TrialOutcome:
    trial: int
    outcome: tuple[int, ...]
    returned: bool
    # per expect step: 1.0/0.0 hit, or the exact marginal when unmeasured
    observations: tuple[float, ...]


@dataclass(frozen=True)
class ExpectationVerdict:
    step: int
    target_prob: float
    observed_prob: float
    tol: float
    passed: bool
    exact: bool


@dataclass
class TrialReport:
    protocol: str
    model: str
    trials: int
    seed: int
    outcome_registers: tuple[str, ...]
    histogram: dict[tuple[int, ...], int]
    expectations: list[ExpectationVerdict]
    returns: int
    return_rate: float
    bayes_factor: float
    threshold: float
    trials_to_threshold: int
    wall_ms: float = field(default=0.0, compare=False)

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.expectations)

    def frequency(self, **assignment: int) -> float:
        """Fraction of trials whose readout matches ``assignment``."""
        idx = [self.outcome_registers.index(r) for r in assignment]
        want = list(assignment.values())
        hits = sum(c for o, c in self.histogram.items() if [o[i] for i in idx] == want)
        return hits / self.trials

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "protocol": self.protocol,
            "model": self.model,
            "trials": self.trials,
            "seed": self.seed,
            "histogram": [{"outcome": list(o), "count": c} for o, c in sorted(self.histogram.items())],
            "expectations": [
                {
                    "step": v.step,
                    "target_prob": v.target_prob,
                    "observed_prob": v.observed_prob,
                    "tol": v.tol,
                    "pass": v.passed,
                }
                for v in self.expectations
            ],
            "return_rate": self.return_rate,
            # JSON has no infinity; overflowed factors are written as null
            "bayes_factor": self.bayes_factor if math.isfinite(self.bayes_factor) else None,
            "wall_ms": self.wall_ms,
        }


def _observe(executor: Executor, trial: int, seed: int) -> TrialOutcome:
    vp = executor.vp
    rng = RngStream(seed, trial)
    try:
        result = executor.run(rng)
    except EngineError as exc:
        raise exc.with_trial(trial) from exc
    measured = dict(zip(result.outcome.registers, result.outcome.values)) if result.outcome else {}
    init = vp.protocol.init_assignment
    if all(r in measured for r in vp.return_registers):
        returned = all(measured[r] == init[r] for r in vp.return_registers)
    else:
        returned = result.log.return_fidelity >= 1.0 - RETURN_TOL
    observations = []
    for _, expect in vp.expects:
        if all(r in measured for r, _ in expect.assignment):
            observations.append(float(all(measured[r] == v for r, v in expect.assignment)))
        else:
            observations.append(marginal_probability(result.state, dict(expect.assignment)))
    outcome = result.outcome.values if result.outcome else ()
    return TrialOutcome(trial, outcome, returned, tuple(observations))


def _run_chunk(vp: ValidatedProtocol, model: DynamicsModel, seed: int, start: int, stop: int):
    executor = Executor(vp, model)
    return [_observe(executor, t, seed) for t in range(start, stop)]


def simulate(
    vp: ValidatedProtocol, model: DynamicsModel | str, n: int, seed: int, workers: int = 1
) -> list[TrialOutcome]:
    """Per-trial outcomes in trial-index order, whatever the schedule."""
    model = as_model(model)
    if workers <= 1 or n < 2 * workers:
        return _run_chunk(vp, model, seed, 0, n)
    bounds = [n * w // workers for w in range(workers + 1)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_run_chunk, vp, model, seed, a, b) for a, b in zip(bounds, bounds[1:])]
        chunks = [f.result() for f in futures]
    outcomes = [o for chunk in chunks for o in chunk]
    outcomes.sort(key=lambda o: o.trial)
    return outcomes


def run_trials(
    vp: ValidatedProtocol,
    model: DynamicsModel | str,
    n: int,
    seed: int,
    *,
    workers: int = 1,
    threshold: float = DEFAULT_THRESHOLD,
) -> TrialReport:
    """Run ``n`` seeded trials and aggregate them into a :class:`TrialReport`."""
    if n < 1:
        raise ValueError(f"need at least one trial, got {n}")
    model = as_model(model)
    t0 = time.perf_counter()
    outcomes = simulate(vp, model, n, seed, workers)

    histogram: dict[tuple[int, ...], int] = {}
    returns = 0
    sums = [0.0] * len(vp.expects)
    for o in outcomes:
        histogram[o.outcome] = histogram.get(o.outcome, 0) + 1
        returns += o.returned
        for j, x in enumerate(o.observations):
            sums[j] += x

    verdicts = []
    exact_state = None
    for j, (step, expect) in enumerate(vp.expects):
        exact = model.variant == "unitary" and expect.prob in (0.0, 1.0)
        if exact:
            if exact_state is None:
                exact_state = Executor(vp, model).run(RngStream(seed, 0)).state
            observed = marginal_probability(exact_state, dict(expect.assignment))
            passed = abs(observed - expect.prob) <= expect.tol
        else:
            observed = sums[j] / n
            slack = 3.0 * math.sqrt(expect.prob * (1.0 - expect.prob) / n)
            passed = abs(observed - expect.prob) <= expect.tol + slack
        verdicts.append(ExpectationVerdict(step, expect.prob, observed, expect.tol, passed, exact))

    return TrialReport(
        protocol=vp.name,
        model=model.variant,
        trials=n,
        seed=seed,
        outcome_registers=vp.measure_registers,
        histogram=histogram,
        expectations=verdicts,
        returns=returns,
        return_rate=returns / n,
        bayes_factor=bayes_factor(returns, n),
        threshold=threshold,
        trials_to_threshold=trials_to_threshold(threshold),
        wall_ms=(time.perf_counter() - t0) * 1000.0,
    )
