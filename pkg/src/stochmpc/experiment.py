"""Monte Carlo campaigns over closed-loop trials and violation statistics.

A campaign runs independent trials whose seeds are ``base_seed + trial``, so
pairs of campaigns with equal seeds see identical disturbance streams and can
be compared trial by trial. Aggregation is an ordered reduction over the
trial index, making the result independent of any execution schedule.

Violation statistics target the first state half-space. Besides the raw
per-step violation rate, the rate is also reported conditioned on the "at
risk" steps, those whose disturbance-free one-step prediction lands within
twice the first tightening margin of the boundary; far-from-constraint steps
satisfy the bound trivially and only dilute the rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .chance import cantelli_quantile_factor, gaussian_quantile_factor
from .config import RunConfig
from .controller import ClosedLoopRecord, ControllerMode
from .errors import ConfigurationError


@dataclass(frozen=True)
class TrialSummary:
    trial: int
    seed: int
    violations: int
    at_risk_steps: int
    violations_at_risk: int
    max_constraint_value: float
    slack_steps: int


@dataclass(frozen=True)
class CampaignResult:
    """Aggregated violation statistics of one Monte Carlo campaign."""

    mode: str
    risk: float | None
    trials: int
    steps: int
    base_seed: int
    violation_rate: float
    standard_error: float
    rate_at_risk: float
    standard_error_at_risk: float
    at_risk_steps: int
    per_step_frequency: np.ndarray
    mean_states: np.ndarray
    max_constraint_value: float
    first_margin: float
    trial_summaries: tuple

    @property
    def seeds(self) -> tuple:
        return tuple(t.seed for t in self.trial_summaries)


def _binomial_se(rate: float, n_observations: int) -> float:
    if n_observations <= 0:
        return float("nan")
    return float(np.sqrt(rate * (1.0 - rate) / n_observations))


def summarize_trial(
    record: ClosedLoopRecord, trial: int, seed: int, margin: float, bound: float
) -> TrialSummary:
    """Violation counts of one trial against the first half-space."""
    violated = record.violations[1:, 0]
    predicted = record.nominal_next @ record.halfspace_g
    at_risk = predicted >= bound - 2.0 * margin
    return TrialSummary(
        trial=trial,
        seed=seed,
        violations=int(violated.sum()),
        at_risk_steps=int(at_risk.sum()),
        violations_at_risk=int((violated & at_risk).sum()),
        max_constraint_value=record.max_constraint_value,
        slack_steps=int(record.slack_flags.sum()),
    )


def run_campaign(
    config: RunConfig,
    mode: ControllerMode | str | None = None,
    trials: int | None = None,
    base_seed: int | None = None,
) -> CampaignResult:
    """Run ``trials`` seeded closed loops and aggregate violation statistics."""
    mode = config.default_mode() if mode is None else ControllerMode(mode)
    trials = config.trials if trials is None else int(trials)
    base_seed = config.base_seed if base_seed is None else int(base_seed)
    if trials < 1:
        raise ConfigurationError(f"trials must be >= 1, got {trials}")

    constraints = config.build_constraints()
    if constraints.n_halfspaces == 0:
        raise ConfigurationError("campaign statistics need at least one state half-space")
    bound = constraints.state_halfspaces[0][1]
    steps = config.steps
    x0 = config.x0

    controller = config.build_controller(mode)
    margin = float(controller.margins_[0, 0]) if controller.margins_.size else 0.0

    summaries = []
    frequency = np.zeros(steps)
    mean_states = None
    max_value = -np.inf
    for trial in range(trials):
        seed = base_seed + trial
        record = controller.simulate(x0, steps, seed=seed)
        summary = summarize_trial(record, trial, seed, margin, bound)
        summaries.append(summary)
        frequency += record.violations[1:, 0]
        mean_states = record.states if mean_states is None else mean_states + record.states
        max_value = max(max_value, summary.max_constraint_value)

    total_violations = sum(t.violations for t in summaries)
    total_at_risk = sum(t.at_risk_steps for t in summaries)
    total_at_risk_violations = sum(t.violations_at_risk for t in summaries)
    n_observations = trials * steps
    rate = total_violations / n_observations
    rate_at_risk = (
        total_at_risk_violations / total_at_risk if total_at_risk else float("nan")
    )
    return CampaignResult(
        mode=ControllerMode(mode).value,
        risk=controller.risk_.p if controller.risk_ is not None else None,
        trials=trials,
        steps=steps,
        base_seed=base_seed,
        violation_rate=rate,
        standard_error=_binomial_se(rate, n_observations),
        rate_at_risk=rate_at_risk,
        standard_error_at_risk=_binomial_se(
            rate_at_risk if total_at_risk else 0.0, total_at_risk
        ),
        at_risk_steps=total_at_risk,
        per_step_frequency=frequency / trials,
        mean_states=mean_states / trials,
        max_constraint_value=max_value,
        first_margin=margin,
        trial_summaries=tuple(summaries),
    )


def tightening_comparison(p_grid) -> list:
    """Unit-variance tightening factors per risk level.

    Returns ``(p, gaussian_factor, cantelli_factor)`` rows, the two scalar
    laws with variance factored out. Every grid point must lie in [0.5, 1),
    the domain both laws share.
    """
    rows = []
    for p in np.atleast_1d(np.asarray(p_grid, dtype=float)):
        rows.append(
            (float(p), gaussian_quantile_factor(p), cantelli_quantile_factor(p))
        )
    return rows
