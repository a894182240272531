"""Guess-count statistics, chance normalization, and report emission.

The headline metric is the chance-normalized speedup
P_r(T) = (A_c(T) - A_m(T)) / A_c(T), where A_m is the model's mean guess
count after T error fixations and A_c is the chance mean under identical
elimination mechanics.  Significance between models uses Welch's t-test,
computed from scratch via the regularized incomplete beta function.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from .baselines import chance_trace
from .errors import ConfigError

# Scoring rule for traces that never found the target: they cost one more
# than the whole budget (a censoring floor), and the budget is echoed in
# every report so the floor is visible.
CENSORED_EXTRA = 1


def trace_score(trace) -> int:
    """Guess count of one trace; unsuccessful traces score budget + 1."""
    if trace.success_index is not None:
        return trace.success_index
    return trace.budget + CENSORED_EXTRA


def evaluate_guesses(traces):
    """(mean, standard error, n) of the trace scores."""
    if len(traces) == 0:
        raise ConfigError("evaluate_guesses needs at least one trace")
    scores = np.array([trace_score(t) for t in traces], dtype=np.float64)
    n = scores.size
    mean = float(scores.mean())
    stderr = float(scores.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return mean, stderr, n


def monte_carlo_chance(trials, t_fixations: int, reps: int, seed: int,
                       elim_side: int = 200, budget: int = 50,
                       excluded_map=None) -> float:
    """A_c: mean chance guesses over the trial set, Monte Carlo estimated.

    The random guesser runs under the same elimination mechanics and the
    same candidate exclusions as the model under test.  ``excluded_map``
    is either a dict (trial id -> excluded candidate ids) or a sequence
    aligned with ``trials`` (for callers whose samples repeat a trial id
    with different exclusions).  Seeding is per (trial, repetition), so
    the estimate is independent of iteration order and worker count.
    """
    if reps < 100:
        raise ConfigError(f"reps must be >= 100 for a stable estimate, got {reps}")
    if len(trials) == 0:
        raise ConfigError("monte_carlo_chance needs at least one trial")
    if excluded_map is None:
        per_trial = [()] * len(trials)
    elif isinstance(excluded_map, dict):
        per_trial = [excluded_map.get(t.id, ()) for t in trials]
    else:
        per_trial = list(excluded_map)
        if len(per_trial) != len(trials):
            raise ConfigError(
                f"{len(per_trial)} exclusion entries for {len(trials)} trials"
            )
    total = 0
    count = 0
    for trial_idx, (trial, excluded) in enumerate(zip(trials, per_trial)):
        for rep in range(reps):
            ss = np.random.SeedSequence([seed, t_fixations, trial_idx, rep])
            trace = chance_trace(trial, ss, elim_side=elim_side, budget=budget,
                                 excluded_candidates=excluded)
            total += trace_score(trace)
            count += 1
    return total / count


def relative_performance(chance_mean: float, model_mean: float) -> float:
    """P_r = (A_c - A_m) / A_c: positive when the model beats chance.

    The chance mean comes first: relative_performance(3.0, 2.80) is the
    speedup of a model needing 2.80 guesses against a chance level of 3.
    """
    if chance_mean <= 0:
        raise ConfigError(f"chance mean must be positive, got {chance_mean}")
    return (chance_mean - model_mean) / chance_mean


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 300):
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
        if abs(delta - 1.0) < 3e-12:
            return h
    raise ConfigError(f"incomplete beta failed to converge for a={a}, b={b}, x={x}")


def _reg_inc_beta(a, b, x):
    """Regularized incomplete beta I_x(a, b)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_tailed_p(t: float, df: float) -> float:
    """Two-tailed Student-t p-value via the incomplete beta identity."""
    if df <= 0:
        raise ConfigError(f"degrees of freedom must be positive, got {df}")
    return _reg_inc_beta(df / 2.0, 0.5, df / (df + t * t))


def welch_ttest(samples_a, samples_b) -> float:
    """Two-tailed Welch t-test p-value; symmetric in its arguments.

    Uses the Welch-Satterthwaite degrees of freedom.  Samples where both
    variances are zero carry no evidence scale and are rejected.
    """
    a = np.asarray(samples_a, dtype=np.float64)
    b = np.asarray(samples_b, dtype=np.float64)
    if a.size < 2 or b.size < 2:
        raise ConfigError("welch_ttest needs at least 2 observations per sample")
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    if va == 0.0 and vb == 0.0:
        raise ConfigError("welch_ttest is undefined when both samples are constant")
    sa, sb = va / a.size, vb / b.size
    t = (float(a.mean()) - float(b.mean())) / math.sqrt(sa + sb)
    df = (sa + sb) ** 2 / (
        (sa * sa / (a.size - 1)) + (sb * sb / (b.size - 1))
    )
    return t_two_tailed_p(t, df)


def topn_table(rankings, truths, n_values):
    """Top-N accuracy per (T, N) cell.

    ``rankings``: dict mapping T to one ranked class array per trial;
    ``truths``: the true class per trial; cell (T, N) is the fraction of
    trials whose truth sits in the first N entries of the T-fixation
    ranking.  Every ranking must contain every truth.
    """
    truths = [int(t) for t in truths]
    table = {}
    for t_val in sorted(rankings):
        ranked = rankings[t_val]
        if len(ranked) != len(truths):
            raise ConfigError(
                f"T={t_val}: {len(ranked)} rankings for {len(truths)} truths"
            )
        positions = []
        for ranking, truth in zip(ranked, truths):
            ranking = np.asarray(ranking)
            where = np.nonzero(ranking == truth)[0]
            if where.size == 0:
                raise ConfigError(
                    f"true class {truth} missing from a T={t_val} ranking "
                    f"over {ranking.size} labels"
                )
            positions.append(int(where[0]))
        positions = np.array(positions)
        for n in n_values:
            table[(t_val, int(n))] = float((positions < int(n)).mean())
    return table


@dataclass(frozen=True)
class EvalRow:
    model: str
    t_fixations: int
    n: int
    a_m: float
    stderr: float
    a_c: float
    p_r: float


@dataclass(frozen=True)
class PairwiseP:
    model_a: str
    model_b: str
    t_fixations: int
    p_value: float


@dataclass(frozen=True)
class EvalReport:
    """Everything one evaluation sweep produced, ready to serialize.

    The stored P_r of every row must satisfy the defining identity
    exactly; construction re-derives it and rejects drift.
    """

    rows: tuple  # of EvalRow
    pairwise: tuple  # of PairwiseP
    config: dict

    def __post_init__(self):
        for row in self.rows:
            expect = relative_performance(row.a_c, row.a_m)
            if row.p_r != expect:
                raise ConfigError(
                    f"row ({row.model}, T={row.t_fixations}): stored P_r "
                    f"{row.p_r!r} != (A_c - A_m)/A_c = {expect!r}"
                )


def make_row(model: str, t_fixations: int, traces, a_c: float) -> EvalRow:
    """Aggregate one (model, T) cell; P_r holds by construction."""
    a_m, stderr, n = evaluate_guesses(traces)
    return EvalRow(
        model=model, t_fixations=t_fixations, n=n, a_m=a_m, stderr=stderr,
        a_c=a_c, p_r=relative_performance(a_c, a_m),
    )


def _config_lines(config):
    return [f"# {key}={config[key]}" for key in sorted(config)]


def emit_report(report: EvalReport, fmt: str, path) -> None:
    """Write the report as CSV or JSON; identical inputs → identical bytes.

    Floats are rendered with repr, the shortest digits that round-trip,
    so re-parsing recovers the exact values.  CSV layout: config echo as
    leading comment lines, the per-model table, a blank line, then the
    pairwise p-value table.
    """
    if fmt == "csv":
        lines = _config_lines(report.config)
        lines.append("model,T,n,A_m,stderr,A_c,P_r")
        for r in report.rows:
            lines.append(
                f"{r.model},{r.t_fixations},{r.n},{r.a_m!r},{r.stderr!r},"
                f"{r.a_c!r},{r.p_r!r}"
            )
        lines.append("")
        lines.append("model_a,model_b,T,p_value")
        for p in report.pairwise:
            lines.append(f"{p.model_a},{p.model_b},{p.t_fixations},{p.p_value!r}")
        text = "\n".join(lines) + "\n"
    elif fmt == "json":
        payload = {
            "config": {k: report.config[k] for k in sorted(report.config)},
            "rows": [
                {
                    "model": r.model, "T": r.t_fixations, "n": r.n,
                    "A_m": r.a_m, "stderr": r.stderr, "A_c": r.a_c, "P_r": r.p_r,
                }
                for r in report.rows
            ],
            "pairwise": [
                {
                    "model_a": p.model_a, "model_b": p.model_b,
                    "T": p.t_fixations, "p_value": p.p_value,
                }
                for p in report.pairwise
            ],
        }
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        raise ConfigError(f"unknown report format {fmt!r}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
