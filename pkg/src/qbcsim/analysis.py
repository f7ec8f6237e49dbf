"""Estimators, bound checks and sweeps over simulated sessions."""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np

from .adversary import AliceStrategy, BobStrategy, alice_epr_attack_no_checking
from .protocol import (
    CYCLIC_MAX_N,
    Mode,
    ProtocolConfig,
    ResourceCapError,
    alice_commit,
    bob_prepare,
    bob_side_mixture,
    bob_view,
    global_dimension,
    pair_state,
    session_streams,
)
from .qlin import DomainError, StateVector, SystemLayout, partial_trace, trace_norm
from .session import run_protocol

SCHEMA_VERSION = 1
EXACT_TOL = 1e-9
SIGMA_BAND = 5.0
# Bob-side mixtures live on n + 1 qubits; eigvalsh past this gets slow.
MIXTURE_MAX_N = 11


def binomial_stderr(p: float, trials: int) -> float:
    return math.sqrt(max(p * (1 - p), 0.0) / trials) if trials else float("nan")


def within_sigma(value: float, expected: float, stderr: float, band: float = SIGMA_BAND) -> bool:
    """|value - expected| <= band * stderr, with stderr 0 meaning an exact match."""
    if stderr == 0:
        return math.isclose(value, expected, abs_tol=1e-12)
    return abs(value - expected) <= band * stderr


# ---------------------------------------------------------------------------
# structured output

def _flatten(record: dict) -> dict:
    out = {}
    for key, value in record.items():
        if isinstance(value, dict):
            for k, v in value.items():
                out[f"{key}.{k}"] = v
        else:
            out[key] = value
    return out


def _cell(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if value is None:
        return ""
    return str(value)


def write_records(records: Sequence[dict], fmt: str = "csv") -> str:
    """Render flat-ish dict records as csv (nested dicts become ``a.b`` columns) or jsonl."""
    if fmt == "jsonl":
        return "".join(json.dumps(r, sort_keys=True, separators=(",", ":")) + "\n" for r in records)
    if fmt != "csv":
        raise DomainError(f"unknown output format {fmt!r}")
    flat = [_flatten(r) for r in records]
    columns: list[str] = []
    for r in flat:
        columns += [c for c in r if c not in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for r in flat:
        writer.writerow([_cell(r.get(c)) for c in columns])
    return buf.getvalue()


# ---------------------------------------------------------------------------
# security report

@dataclass(frozen=True)
class SecurityReport:
    n: int
    M: int
    lam: str
    trace_distance: float
    p_b_analytic: float
    p_b_empirical: float
    p_b_stderr: float
    p_b_trials: int
    p_a: float
    eq5_lower: float = field(init=False)
    eq5_upper: float = field(init=False)
    pass_flags: dict = field(default_factory=dict)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        object.__setattr__(self, "lam", str(Fraction(self.lam)))
        lo, hi = eq5_bounds(self.p_b_analytic)
        object.__setattr__(self, "eq5_lower", lo)
        object.__setattr__(self, "eq5_upper", hi)
        for name in ("p_b_analytic", "p_b_empirical", "p_a"):
            v = getattr(self, name)
            if not -EXACT_TOL <= v <= 1 + EXACT_TOL:
                raise DomainError(f"{name}={v} is not a probability")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "SecurityReport":
        if int(d.get("schema_version", SCHEMA_VERSION)) != SCHEMA_VERSION:
            raise DomainError(f"unsupported report schema {d.get('schema_version')}")
        init = {f.name for f in fields(cls) if f.init}
        return cls(**{k: v for k, v in d.items() if k in init})

    @classmethod
    def from_json(cls, text: str) -> "SecurityReport":
        return cls.from_dict(json.loads(text))

    def to_csv(self) -> str:
        return write_records([self.to_dict()], "csv")

    @classmethod
    def from_csv(cls, text: str) -> "SecurityReport":
        (row,) = list(csv.DictReader(io.StringIO(text)))
        types = {"n": int, "M": int, "p_b_trials": int, "schema_version": int, "lam": str}
        d: dict = {"pass_flags": {}}
        for key, raw in row.items():
            if key.startswith("pass_flags."):
                d["pass_flags"][key.split(".", 1)[1]] = raw == "true"
            else:
                d[key] = types.get(key, float)(raw)
        return cls.from_dict(d)


def eq5_bounds(p_b: float) -> tuple[float, float]:
    """Lower and upper limits on P_A^c implied by a given P_B^c."""
    return 4 * (1 - p_b) ** 2, 2 * math.sqrt(max(p_b * (1 - p_b), 0.0))


@dataclass(frozen=True)
class BoundsCheck:
    p_b: float
    p_a: float
    lower: float
    upper: float
    lower_ok: bool
    upper_ok: bool

    @property
    def passed(self) -> bool:
        return self.lower_ok and self.upper_ok


def binding_bounds_check(report: SecurityReport | None = None, *, p_b: float | None = None,
                         p_a: float | None = None, slack: float = EXACT_TOL) -> BoundsCheck:
    """Check 4(1-P_B)^2 <= P_A <= 2 sqrt(P_B (1-P_B)) with additive slack."""
    if report is not None:
        p_b, p_a = report.p_b_analytic, report.p_a
    if p_b is None or p_a is None:
        raise DomainError("need a report or both p_b and p_a")
    lo, hi = eq5_bounds(p_b)
    return BoundsCheck(p_b, p_a, lo, hi, lo - slack <= p_a, p_a <= hi + slack)


# ---------------------------------------------------------------------------
# concealing

def _check_cap(n: int, cap: int = CYCLIC_MAX_N):
    if n > cap:
        raise ResourceCapError(
            f"n={n} exceeds the cap {cap}: global state dimension {global_dimension(n, Mode.CYCLIC)}")


def exact_bob_states(config: ProtocolConfig):
    """Bob's reduced states for b=0 and b=1 from the full global state."""
    _check_cap(config.n)
    nature, _, bob_rng = session_streams(config.seed)
    prep = bob_prepare(config, bob_rng)
    views = [bob_view(alice_commit(prep, b, Mode.CYCLIC, nature, config.modulation)) for b in (0, 1)]
    return prep, views[0], views[1]


@dataclass(frozen=True)
class ScalingRow:
    n: int
    trace_distance: float
    two_over_n: float
    matches: bool
    post_check_distance: float | None
    lam: str

    def to_dict(self) -> dict:
        return asdict(self)


def post_check_distance(pair_states, lam, modulation: float = math.pi / 2) -> float:
    """Bob-side distance once a fraction-lambda check has returned lambda*n pairs
    that did not hold the committed qubit.  Which pairs is irrelevant: every
    choice is related by a relabelling and local rotations on Bob's side."""
    n = len(pair_states)
    size = Fraction(lam) * n
    if size.denominator != 1:
        raise DomainError(f"lambda * n must be an integer, got {lam} * {n}")
    returned = list(range(1, int(size) + 1))
    candidates = [l for l in range(1, n + 1) if l not in returned]
    rho0 = bob_side_mixture(pair_states, 0, modulation, candidates, returned)
    rho1 = bob_side_mixture(pair_states, 1, modulation, candidates, returned)
    return trace_norm(rho0.matrix - rho1.matrix)


def concealing_scaling(n_values: Iterable[int], lam=Fraction(1, 2), seed: int = 0,
                       modulation: float = math.pi / 2, tol: float = EXACT_TOL) -> list[ScalingRow]:
    """Exact Bob-side trace distance per n against 2/n.

    The comparison is reported in ``matches`` rather than raised, so a
    sweep always completes.  The post-check column is filled when lambda*n
    is an integer.
    """
    n_values = list(n_values)
    for n in n_values:
        _check_cap(n)
    rows = []
    for n in n_values:
        config = ProtocolConfig(n=n, seed=seed, modulation=modulation, bob_check=False)
        prep, v0, v1 = exact_bob_states(config)
        dist = trace_norm(v0.matrix - v1.matrix)
        post = None
        if (Fraction(lam) * n).denominator == 1:
            post = post_check_distance(prep.pair_states, lam, modulation)
        rows.append(ScalingRow(n, dist, 2 / n, abs(dist - 2 / n) <= tol, post, str(Fraction(lam))))
    return rows


def bob_optimal_cheat(n: int, modulation: float = math.pi / 2) -> float:
    """(2 + ||rho_0 - rho_1||_1) / 4 on Bob's exact states before any check.

    Uses the pair-by-pair mixture, exact and much smaller than the global
    state, so n up to MIXTURE_MAX_N is affordable.  The distance does not
    depend on Bob's angles, so all pairs sit at angle 0.
    """
    if n < 2:
        raise DomainError(f"n must be at least 2, got {n}")
    if n > MIXTURE_MAX_N:
        raise ResourceCapError(f"n={n} exceeds the cap {MIXTURE_MAX_N}: Bob-side dimension {2 ** (n + 1)}")
    pairs = [pair_state(0.0)] * n
    everyone = range(1, n + 1)
    rho0 = bob_side_mixture(pairs, 0, modulation, everyone)
    rho1 = bob_side_mixture(pairs, 1, modulation, everyone)
    return (2 + trace_norm(rho0.matrix - rho1.matrix)) / 4


# ---------------------------------------------------------------------------
# Alice learning Bob's basis

def alice_state_guess(M: int) -> float:
    if M < 2:
        raise DomainError(f"M must be at least 2, got {M}")
    return 1 / M


def _travel_state(theta: float) -> np.ndarray:
    layout = SystemLayout.of(("a", 2), ("c", 2))
    return partial_trace(StateVector(pair_state(theta), layout), ["c"]).matrix


def pretty_good_measurement(states: Sequence[np.ndarray], priors: Sequence[float] | None = None) -> list[np.ndarray]:
    """Square-root measurement for a list of density matrices."""
    priors = np.full(len(states), 1 / len(states)) if priors is None else np.asarray(priors, float)
    avg = sum(p * s for p, s in zip(priors, states))
    w, v = np.linalg.eigh(avg)
    inv = np.where(w > 1e-12, 1 / np.sqrt(np.clip(w, 1e-300, None)), 0.0)
    root = (v * inv) @ v.conj().T
    povm = [root @ (p * s) @ root for p, s in zip(priors, states)]
    # the part of the space outside the support of avg never fires; park it on outcome 0
    povm[0] = povm[0] + np.eye(avg.shape[0]) - sum(povm)
    return povm


@dataclass(frozen=True)
class GuessExperiment:
    M: int
    trials: int
    successes: int
    rate: float
    stderr: float
    exact: float


def alice_guess_experiment(M: int, trials: int, seed: int) -> GuessExperiment:
    """Alice measures the travel qubit of a fresh honest pair and guesses its grid angle."""
    alice_state_guess(M)
    grid = 2 * np.pi * np.arange(M) / M
    states = [_travel_state(t) for t in grid]
    povm = pretty_good_measurement(states)
    table = np.array([[max(np.trace(E @ s).real, 0.0) for E in povm] for s in states])
    table /= table.sum(axis=1, keepdims=True)
    exact = float(np.trace(table).sum() / M)
    rng = np.random.default_rng(seed)
    truth = rng.integers(0, M, size=trials)
    wins = sum(int(rng.choice(M, p=table[t]) == t) for t in truth)
    rate = wins / trials
    return GuessExperiment(M, trials, wins, rate, binomial_stderr(rate, trials), exact)


# ---------------------------------------------------------------------------
# Monte Carlo

@dataclass(frozen=True)
class MonteCarloReport:
    alice: str
    bob: str
    n: int
    M: int
    lam: str
    seed: int
    trials: int
    accepted: int
    detected_alice: int
    detected_bob: int
    guesses: int
    correct_guesses: int
    mean_accept_probability: float
    schema_version: int = SCHEMA_VERSION

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.trials

    @property
    def detection_rate(self) -> float:
        return (self.detected_alice + self.detected_bob) / self.trials

    @property
    def guess_rate(self) -> float:
        return self.correct_guesses / self.guesses if self.guesses else float("nan")

    def stderr(self, which: str) -> float:
        if which == "guess":
            return binomial_stderr(self.guess_rate, self.guesses)
        rate = {"acceptance": self.acceptance_rate, "detection": self.detection_rate}[which]
        return binomial_stderr(rate, self.trials)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(
            acceptance_rate=self.acceptance_rate, acceptance_stderr=self.stderr("acceptance"),
            detection_rate=self.detection_rate, detection_stderr=self.stderr("detection"),
            guess_rate=None if not self.guesses else self.guess_rate,
            guess_stderr=None if not self.guesses else self.stderr("guess"),
        )
        return d


def _trial_block(config: ProtocolConfig, alice: AliceStrategy, bob: BobStrategy, start: int, stop: int):
    out = []
    for i in range(start, stop):
        r = run_protocol(config, alice, bob, seed=(config.seed, i))
        out.append((r.outcome, r.detected, r.guess_correct, r.accept_probability))
    return out


def monte_carlo(config: ProtocolConfig, alice: AliceStrategy, bob: BobStrategy, trials: int,
                workers: int = 1, chunk: int | None = None) -> MonteCarloReport:
    """Run ``trials`` sessions seeded (config.seed, i); identical output for any ``workers``."""
    if trials < 1:
        raise DomainError(f"trials must be positive, got {trials}")
    if workers <= 1:
        rows = _trial_block(config, alice, bob, 0, trials)
    else:
        chunk = chunk or max(1, math.ceil(trials / (4 * workers)))
        starts = list(range(0, trials, chunk))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            blocks = list(pool.map(_trial_block, [config] * len(starts), [alice] * len(starts),
                                   [bob] * len(starts), starts, [min(s + chunk, trials) for s in starts]))
        rows = [r for block in blocks for r in block]
    guessed = [g for _, _, g, _ in rows if g is not None]
    return MonteCarloReport(
        alice=alice.kind, bob=bob.kind, n=config.n, M=config.M, lam=str(config.lam), seed=config.seed,
        trials=trials,
        accepted=sum(o == "accept" for o, _, _, _ in rows),
        detected_alice=sum(d == "alice" for _, d, _, _ in rows),
        detected_bob=sum(d == "bob" for _, d, _, _ in rows),
        guesses=len(guessed), correct_guesses=sum(guessed),
        mean_accept_probability=math.fsum(p or 0.0 for _, _, _, p in rows) / trials,
    )


# ---------------------------------------------------------------------------
# assembled report

def security_report(config: ProtocolConfig, trials: int, workers: int = 1) -> SecurityReport:
    """Concealing and binding numbers for one configuration.

    The empirical P_B^c comes from Helstrom Bob playing sessions without the
    fraction-lambda check, the same situation the analytic value describes.
    """
    _, v0, v1 = exact_bob_states(config)
    dist = trace_norm(v0.matrix - v1.matrix)
    p_b = (2 + dist) / 4
    mc = monte_carlo(ProtocolConfig(**{**_config_fields(config), "bob_check": False}),
                     AliceStrategy("honest"), BobStrategy("helstrom"), trials, workers)
    attack = alice_epr_attack_no_checking(config, np.random.default_rng(config.seed))
    check = binding_bounds_check(p_b=attack.p_b, p_a=attack.p_a)
    n = config.n
    flags = {
        "two_over_n": abs(dist - 2 / n) <= EXACT_TOL,
        "helstrom_vs_exact": within_sigma(mc.guess_rate, p_b, mc.stderr("guess")),
        "helstrom_vs_half_plus_1_over_2n": within_sigma(mc.guess_rate, 0.5 + 0.5 / n, mc.stderr("guess")),
        "eq5_lower": check.lower_ok,
        "eq5_upper": check.upper_ok,
    }
    return SecurityReport(n, config.M, config.lam, dist, p_b, mc.guess_rate, mc.stderr("guess"),
                          mc.guesses, attack.p_a, pass_flags=flags)


def _config_fields(config: ProtocolConfig) -> dict:
    return {f.name: getattr(config, f.name) for f in fields(config)}

