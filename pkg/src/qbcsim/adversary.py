"""Cheating strategies for both parties and the machinery behind them."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Sequence

import numpy as np

from .protocol import (
    ALICE,
    BobPreparation,
    CommitmentState,
    Mode,
    ProtocolConfig,
    ResourceCapError,
    PERMUTATION_MAX_N,
    alice_answer_check,
    alice_commit,
    ancilla_frame,
    bob_anc,
    bob_check_request,
    bob_prepare,
    bob_registers,
    bob_side_mixture,
    bob_verify_returned,
    bob_view,
    build_preparation,
    expected_state,
    measure_ancilla,
    modulation_unitary,
    pair_state,
    prescribed_family,
    residual_support_dimension,
    slot,
)
from .qlin import (
    DensityOperator,
    DomainError,
    LayoutError,
    PartitionError,
    StateVector,
    _bipartite_matrix,
    apply,
    circle_state,
    fidelity,
    ket_projector,
    kron_all,
    luders_project,
    reorder,
    trace_norm,
)


# ---------------------------------------------------------------------------
# state discrimination

def helstrom_projector(rho0, rho1) -> np.ndarray:
    """Projector onto the nonnegative eigenspace of rho0 - rho1 ("guess 0")."""
    m0 = rho0.matrix if isinstance(rho0, DensityOperator) else np.asarray(rho0)
    m1 = rho1.matrix if isinstance(rho1, DensityOperator) else np.asarray(rho1)
    if m0.shape != m1.shape:
        raise LayoutError(f"dimension mismatch: {m0.shape} vs {m1.shape}")
    diff = m0 - m1
    w, v = np.linalg.eigh((diff + diff.conj().T) / 2)
    keep = v[:, w >= 0]
    return keep @ keep.conj().T


def helstrom_success(rho0, rho1) -> float:
    """Optimal equal-prior guessing probability (2 + ||rho0 - rho1||_1) / 4."""
    m0 = rho0.matrix if isinstance(rho0, DensityOperator) else rho0
    m1 = rho1.matrix if isinstance(rho1, DensityOperator) else rho1
    return (2 + trace_norm(m0 - m1)) / 4


def helstrom_measure(rho0, rho1, sample, rng: np.random.Generator) -> int:
    """Measure ``sample`` with the Helstrom projector and return the guessed bit."""
    proj = helstrom_projector(rho0, rho1)
    m = sample.matrix if isinstance(sample, DensityOperator) else np.asarray(sample)
    if m.shape != proj.shape:
        raise LayoutError(f"sample dimension {m.shape} does not match {proj.shape}")
    p0 = float(np.trace(proj @ m).real)
    return 0 if rng.random() < p0 else 1


# ---------------------------------------------------------------------------
# Uhlmann steering

@dataclass(frozen=True, eq=False)
class UhlmannResult:
    unitary: np.ndarray
    registers: tuple[str, ...]
    overlap: float


def uhlmann_local_unitary(psi0: StateVector, psi1: StateVector, alice_cut: Sequence[str]) -> UhlmannResult:
    """Unitary V on ``alice_cut`` maximizing |<psi1| V x I |psi0>|.

    Both states are Schmidt-decomposed across the cut (full SVDs, so the
    bases are complete).  In those bases the cross-Gram matrix
    G = C0 R0^T R1^* C1^T carries all the freedom left by degenerate
    coefficients, and its SVD G = u s w^H gives V = (L1 w)(L0 u)^H with
    overlap trace(s).
    """
    alice_cut = list(alice_cut)
    if psi0.layout.names != psi1.layout.names:
        psi1 = reorder(psi1, psi0.layout.names)
    if not alice_cut or len(alice_cut) >= len(psi0.layout):
        raise PartitionError("the Alice cut must be a nonempty proper subset of the registers")
    m0, left, _ = _bipartite_matrix(psi0, alice_cut)
    m1, _, _ = _bipartite_matrix(psi1, alice_cut)
    l0, s0, vh0 = np.linalg.svd(m0, full_matrices=True)
    l1, s1, vh1 = np.linalg.svd(m1, full_matrices=True)
    c0 = np.zeros(m0.shape)
    c1 = np.zeros(m1.shape)
    c0[: len(s0), : len(s0)] = np.diag(s0)
    c1[: len(s1), : len(s1)] = np.diag(s1)
    gram = c0 @ vh0 @ vh1.conj().T @ c1.T
    u, s, wh = np.linalg.svd(gram)
    v = (l1 @ wh.conj().T) @ (l0 @ u).conj().T
    return UhlmannResult(v, left.names, float(min(1.0, s.sum())))


def steering_overlap(psi0: StateVector, psi1: StateVector, result: UhlmannResult) -> complex:
    """<psi1| V x I |psi0> computed by applying V."""
    return complex(np.vdot(psi1.amplitudes, apply(psi0, result.unitary, result.registers)))


# ---------------------------------------------------------------------------
# strategies

ALICE_KINDS = ("honest", "permutation", "premeasured", "uhlmann", "declare-flipped")
BOB_KINDS = ("honest", "helstrom", "fixed", "skip-ancilla")

ALICE_PARAMS = {
    "honest": "bit: 0|1 (default random)",
    "permutation": "bit: 0|1 (default random); entangles with the full permutation group",
    "premeasured": "bit: 0|1 (default random); picks one cyclic arrangement classically",
    "uhlmann": "target: 0|1 (default 1); commits to the other bit and steers at opening",
    "declare-flipped": "bit: 0|1 (default random); commits honestly, declares the other bit",
}
BOB_PARAMS = {
    "honest": "no parameters",
    "helstrom": "no parameters; honest preparation, optimal bit guess before opening",
    "fixed": "angle: float (default 0); sends n unentangled copies of one circle state and guesses",
    "skip-ancilla": "no parameters; random circle states with a classical record instead of an ancilla",
}


@dataclass(frozen=True)
class AliceStrategy:
    kind: str = "honest"
    bit: int | None = None
    target: int = 1

    def __post_init__(self):
        if self.kind not in ALICE_KINDS:
            raise DomainError(f"unknown Alice strategy {self.kind!r}; choose from {ALICE_KINDS}")
        if self.bit not in (None, 0, 1) or self.target not in (0, 1):
            raise DomainError("bit and target must be 0 or 1")

    def commit_mode(self, config: ProtocolConfig) -> Mode:
        return {"permutation": Mode.PERMUTATION, "premeasured": Mode.PREMEASURED}.get(
            self.kind, config.alice_entanglement)

    def choose_bit(self, rng: np.random.Generator) -> int:
        if self.kind == "uhlmann":
            return 1 - self.target
        return int(rng.integers(0, 2)) if self.bit is None else self.bit

    def declared_bit(self, committed: int) -> int:
        if self.kind == "uhlmann":
            return self.target
        if self.kind == "declare-flipped":
            return 1 - committed
        return committed


@dataclass(frozen=True)
class BobStrategy:
    kind: str = "honest"
    angle: float = 0.0

    def __post_init__(self):
        if self.kind not in BOB_KINDS:
            raise DomainError(f"unknown Bob strategy {self.kind!r}; choose from {BOB_KINDS}")

    @property
    def guesses(self) -> bool:
        return self.kind in ("helstrom", "fixed")

    def prepare(self, config: ProtocolConfig, rng: np.random.Generator) -> BobPreparation:
        n = config.n
        if self.kind == "fixed":
            product = np.kron([1, 0], circle_state(self.angle))
            grid = int(round(self.angle / (2 * np.pi) * config.M)) % config.M
            return build_preparation([self.angle] * n, [grid] * n, [product] * n,
                                     claimed=[pair_state(self.angle)] * n, entangled=False)
        if self.kind == "skip-ancilla":
            idx = rng.integers(0, config.M, size=n)
            angles = config.grid()[idx]
            choices = rng.integers(1, 3, size=n)
            actual = [np.kron(np.eye(2)[j - 1], circle_state(a + (j - 1) * np.pi)) for a, j in zip(angles, choices)]
            return build_preparation(angles, idx, actual, claimed=[pair_state(a) for a in angles],
                                     choices=choices, entangled=False)
        return bob_prepare(config, rng)


def alice_from_name(name: str, **params) -> AliceStrategy:
    return AliceStrategy(kind=name, **params)


def bob_from_name(name: str, **params) -> BobStrategy:
    return BobStrategy(kind=name, **params)


# ---------------------------------------------------------------------------
# in-session helpers

def _candidates(state: CommitmentState) -> list[int]:
    returned = {l for l, _ in state.returned}
    return [l for l in range(1, state.n + 1) if l not in returned]


@lru_cache(maxsize=256)
def _reference_helstrom(n: int, modulation: float, candidates: tuple, returned: tuple) -> np.ndarray:
    pairs = [pair_state(0.0)] * n
    rho0 = bob_side_mixture(pairs, 0, modulation, candidates, returned)
    rho1 = bob_side_mixture(pairs, 1, modulation, candidates, returned)
    return helstrom_projector(rho0, rho1)


def bob_guess_projector(prep: BobPreparation, state: CommitmentState) -> np.ndarray:
    """Bob's Helstrom projector on bob_registers(n, returned), from what he knows.

    For entangled preparations Bob undoes his own ancilla frame, so the
    projector is computed once per (n, modulation, candidate set) at
    angle 0 and rotated into place.
    """
    candidates = tuple(_candidates(state))
    returned = tuple(sorted(l for l, _ in state.returned))
    if prep.entangled:
        p0 = _reference_helstrom(state.n, float(state.modulation), candidates, returned)
        frames = [ancilla_frame(a) for a in prep.angles] + [np.eye(2)] * (1 + len(returned))
        f = kron_all(frames)
        return f @ p0 @ f.conj().T
    rho0 = bob_side_mixture(prep.pair_states, 0, state.modulation, candidates, returned)
    rho1 = bob_side_mixture(prep.pair_states, 1, state.modulation, candidates, returned)
    return helstrom_projector(rho0, rho1)


def bob_helstrom_guess(prep: BobPreparation, state: CommitmentState, rng: np.random.Generator):
    """Bob measures his registers with his Helstrom projector.

    Returns (guess, probability of guessing 0, post-measurement state).
    """
    proj = bob_guess_projector(prep, state)
    regs = [bob_anc(l) for l in range(1, state.n + 1)] + [slot(1)] + [r for _, r in sorted(state.returned)]
    p0 = float(np.vdot(state.global_state.amplitudes, apply(state.global_state, proj, regs)).real)
    guess = 0 if rng.random() < p0 else 1
    outcome = proj if guess == 0 else np.eye(proj.shape[0]) - proj
    _, post = luders_project(state.global_state, outcome, regs)
    return guess, p0, replace(state, global_state=post)


def alice_steering(state: CommitmentState, target: int) -> UhlmannResult:
    """Alice's best local unitary turning her commitment into ``target``.

    She knows neither Bob's angles nor his ancillas, so she works with the
    angle-0 reference pairs; Bob's angles only act on his own ancillas and
    so drop out of the overlap.
    """
    pairs = [pair_state(0.0)] * state.n
    family = frozenset(state.arrangements)
    ref_now = expected_state(pairs, state, state.bit, state.support, family)
    ref_target = expected_state(pairs, state, target, state.support, family)
    return uhlmann_local_unitary(ref_now, ref_target, state.held_by(ALICE))


def full_check(config: ProtocolConfig, prep: BobPreparation, state: CommitmentState,
               bob_rng, nature_rng):
    """Run the fraction-lambda check to completion (complement rule included).

    Returns (requests, answers, state after Bob's pair verification, verify result).
    """
    requests, answers = [], []
    request = bob_check_request(config, bob_rng)
    requests.append(request)
    answer = alice_answer_check(state, request, nature_rng)
    answers.append(answer)
    if answer.contains_committed:
        request = frozenset(range(1, config.n + 1)) - request
        requests.append(request)
        answer = alice_answer_check(answer.state, request, nature_rng)
        answers.append(answer)
    verdict = bob_verify_returned(prep, answer.state, answer.returned, nature_rng)
    return requests, answers, verdict


# ---------------------------------------------------------------------------
# attack experiments

@dataclass(frozen=True)
class EprAttackResult:
    n: int
    p_a: float
    p_b: float
    trace_distance: float
    fidelity: float
    residual_support: int
    lower_bound: float = field(init=False)
    upper_bound: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "lower_bound", 4 * (1 - self.p_b) ** 2)
        object.__setattr__(self, "upper_bound", 2 * math.sqrt(max(0.0, self.p_b * (1 - self.p_b))))

    def within_bounds(self, slack: float = 1e-9) -> bool:
        return self.lower_bound - slack <= self.p_a <= self.upper_bound + slack


def alice_epr_attack_no_checking(config: ProtocolConfig, rng: np.random.Generator) -> EprAttackResult:
    """Commit to 0 with the cyclic entanglement, steer to 1, open as 1.

    P_A^c is Bob's exact acceptance probability; P_B^c is the Helstrom
    value on the exact Bob-side states of the same session.
    """
    bob_rng, nature = rng.spawn(2)
    prep = bob_prepare(config, bob_rng)
    s0 = alice_commit(prep, 0, Mode.CYCLIC, nature, config.modulation)
    s1 = alice_commit(prep, 1, Mode.CYCLIC, nature, config.modulation)
    v0, v1 = bob_view(s0), bob_view(s1)
    dist = trace_norm(v0.matrix - v1.matrix)
    steer = alice_steering(s0, 1)
    moved = apply(s0.global_state, steer.unitary, steer.registers)
    p_a = abs(np.vdot(s1.global_state.amplitudes, moved)) ** 2
    return EprAttackResult(config.n, float(p_a), (2 + dist) / 4, dist, fidelity(v0, v1),
                           residual_support_dimension(s0))


def alice_epr_attack_with_checking(config: ProtocolConfig, rng: np.random.Generator) -> EprAttackResult:
    """The same steering attempt after a completed fraction-lambda check."""
    bob_rng, nature = rng.spawn(2)
    prep = bob_prepare(config, bob_rng)
    state = alice_commit(prep, 0, config.alice_entanglement, nature, config.modulation)
    _, _, verdict = full_check(config, prep, state, bob_rng, nature)
    state = verdict.state
    steer = alice_steering(state, 1)
    family = prescribed_family(config.alice_entanglement, config.n)
    target = expected_state(prep.pair_states, state, 1, state.support, family)
    moved = apply(state.global_state, steer.unitary, steer.registers)
    p_a = abs(np.vdot(target.amplitudes, moved)) ** 2
    candidates = _candidates(state)
    returned = [l for l, _ in state.returned]
    rho0 = bob_side_mixture(prep.pair_states, 0, config.modulation, candidates, returned)
    rho1 = bob_side_mixture(prep.pair_states, 1, config.modulation, candidates, returned)
    dist = trace_norm(rho0.matrix - rho1.matrix)
    post0 = bob_view(state)
    post1 = bob_view(replace(state, global_state=target))
    return EprAttackResult(config.n, float(p_a), (2 + dist) / 4, dist, fidelity(post0, post1),
                           residual_support_dimension(state))


@dataclass(frozen=True)
class FixedStateAttackResult:
    p_b: float
    pair_pass_probability: float
    detection_probability: float
    checks: int


def bob_fixed_states_attack(config: ProtocolConfig, angle: float, checks: int | None = None) -> FixedStateAttackResult:
    """Bob sends n copies of circle_state(angle) with untouched ancillas.

    He knows the committed qubit is U_b|angle>, so his guess is Helstrom on
    two known pure states.  Each pair Alice checks against the claimed
    entangled pair passes with |<pair(angle)|0, angle>|^2.
    """
    psi = circle_state(angle)
    a = modulation_unitary(0, config.modulation) @ psi
    b = modulation_unitary(1, config.modulation) @ psi
    p_b = helstrom_success(ket_projector(a), ket_projector(b))
    actual = np.kron([1, 0], psi)
    pass_prob = abs(np.vdot(pair_state(angle), actual)) ** 2
    checks = config.alice_pair_checks if checks is None else checks
    return FixedStateAttackResult(p_b, pass_prob, 1 - pass_prob**checks, checks)


@dataclass(frozen=True)
class ResidualResult:
    n: int
    fixed: int
    residual_dimension: int
    overlap: float


def lueders_fix_positions(state: CommitmentState, positions, rng) -> CommitmentState:
    """Project Alice's ancilla onto a definite slot for each original in ``positions``."""
    wanted = sorted(positions)
    _, _, post = measure_ancilla(state, lambda s: tuple(s.index(l - 1) + 1 for l in wanted), rng)
    return replace(post, ancilla_measured=True)


def permutation_attack_residual(config: ProtocolConfig, checked: Sequence[int], rng: np.random.Generator,
                                mode: Mode = Mode.PERMUTATION) -> ResidualResult:
    """Residual entanglement after fixing the slots of ``checked`` originals.

    Reports the surviving ancilla support and the best steering overlap
    toward the other bit left on it, i.e. the root fidelity of Bob's two
    post-check states with the checked qubits in Bob's hands.
    """
    mode = Mode(mode)
    if mode is Mode.PERMUTATION and config.n > PERMUTATION_MAX_N:
        raise ResourceCapError(f"permutation ancilla of dimension {math.factorial(config.n)} exceeds the cap")
    nature = rng
    pairs0 = [pair_state(0.0)] * config.n
    prep0 = build_preparation([0.0] * config.n, [0] * config.n, pairs0)
    state = alice_commit(prep0, 0, mode, nature, config.modulation)
    state = lueders_fix_positions(state, checked, nature)
    k = state.support[0]
    handed = tuple((l, state.slot_of(k, l)) for l in sorted(checked) if state.slot_of(k, l) != slot(1))
    state = state.with_holders(**{reg: "bob" for _, reg in handed})
    state = replace(state, returned=handed)
    steer = alice_steering(state, 1)
    family = frozenset(state.arrangements)
    ref1 = expected_state(pairs0, state, 1, state.support, family)
    overlap = abs(np.vdot(ref1.amplitudes, apply(state.global_state, steer.unitary, steer.registers)))
    return ResidualResult(config.n, len(set(checked)), residual_support_dimension(state), float(overlap))
