"""The QBC1 session: preparation, commitment, checking, opening, verification.

Register naming (positions are 1-based everywhere outside array indexing):

* ``bob_anc_l``  Bob's ancilla entangled with his l-th travel qubit
* ``travel_l``   the l-th qubit Bob sends, before Alice rearranges it
* ``pos_p``      slot p of Alice's arranged sequence; ``pos_1`` is the
  committed qubit and goes back to Bob
* ``alice_anc``  Alice's arrangement ancilla.  Basis index ``k`` labels the
  arrangement ``arrangements[k]``, a tuple mapping slot -> original (0-based).

The cyclic shift P moves original l to slot l+1 (mod n), so arrangement k
puts original ``(p - k) mod n`` into slot p.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from functools import lru_cache
from fractions import Fraction
from types import MappingProxyType
from typing import Iterable, Mapping, Sequence

import numpy as np

from .qlin import (
    DensityOperator,
    DomainError,
    StateVector,
    SystemLayout,
    apply,
    apply_unitary,
    circle_state,
    ket_projector,
    kron_all,
    partial_trace,
    reorder,
    rotation,
)

ALICE, BOB = "alice", "bob"
ALICE_ANC = "alice_anc"
CYCLIC_MAX_N = 8
PERMUTATION_MAX_N = 6
HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)


class ProtocolOrderError(RuntimeError):
    """An operation was attempted out of the protocol's phase order."""


class ResourceCapError(ValueError):
    """The requested configuration exceeds the dense-simulation cap."""


class Mode(str, Enum):
    CYCLIC = "cyclic"
    PERMUTATION = "permutation"
    PREMEASURED = "premeasured"


def bob_anc(l: int) -> str:
    return f"bob_anc_{l}"


def travel(l: int) -> str:
    return f"travel_{l}"


def slot(p: int) -> str:
    return f"pos_{p}"


def returned_name(l: int) -> str:
    return f"ret_{l}"


@dataclass(frozen=True)
class ProtocolConfig:
    n: int = 4
    M: int = 8
    lam: Fraction = Fraction(1, 2)
    seed: int = 0
    alice_entanglement: Mode = Mode.CYCLIC
    modulation: float = math.pi / 2
    bob_check: bool = True
    eq8_check: bool = False
    alice_pair_checks: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lam", Fraction(self.lam).limit_denominator(10**6))
        object.__setattr__(self, "alice_entanglement", Mode(self.alice_entanglement))
        if self.n < 2:
            raise DomainError(f"n must be at least 2, got {self.n}")
        cap = PERMUTATION_MAX_N if self.alice_entanglement is Mode.PERMUTATION else CYCLIC_MAX_N
        if self.n > cap:
            raise ResourceCapError(
                f"n={self.n} exceeds the cap {cap} for {self.alice_entanglement.value} mode "
                f"(state dimension {global_dimension(self.n, self.alice_entanglement)})"
            )
        if self.M < 2 or self.M % 2:
            raise DomainError(f"M must be an even integer >= 2, got {self.M}")
        if not 0 < self.lam < 1:
            raise DomainError(f"lambda must lie in (0, 1), got {self.lam}")
        if self.bob_check and (self.lam * self.n).denominator != 1:
            raise DomainError(f"lambda * n must be an integer, got {self.lam} * {self.n}")
        if not 0 <= self.seed < 2**64:
            raise DomainError("seed must be a 64-bit unsigned integer")
        if not 0 <= self.alice_pair_checks <= self.n:
            raise DomainError("alice_pair_checks must lie in [0, n]")

    @property
    def check_size(self) -> int:
        return int(self.lam * self.n)

    def modulation_unitary(self, bit: int) -> np.ndarray:
        return modulation_unitary(bit, self.modulation)

    def grid(self) -> np.ndarray:
        return 2 * np.pi * np.arange(self.M) / self.M


def global_dimension(n: int, mode: Mode) -> int:
    anc = math.factorial(n) if Mode(mode) is Mode.PERMUTATION else n
    return anc * 4**n


def modulation_unitary(bit: int, modulation: float = math.pi / 2) -> np.ndarray:
    """U_0 = R(+modulation), U_1 = R(-modulation)."""
    if bit not in (0, 1):
        raise DomainError(f"bit must be 0 or 1, got {bit!r}")
    return rotation(modulation if bit == 0 else -modulation)


def session_streams(seed) -> tuple[np.random.Generator, np.random.Generator, np.random.Generator]:
    """Independent (protocol, alice, bob) generators from one master seed.

    ``seed`` may be an int or a sequence of ints (e.g. ``(seed, trial)``).
    """
    ss = np.random.SeedSequence(seed)
    return tuple(np.random.default_rng(child) for child in ss.spawn(3))


# ---------------------------------------------------------------------------
# Bob's preparation

@lru_cache(maxsize=1024)
def _pair_state(theta: float) -> np.ndarray:
    out = np.concatenate([circle_state(theta), circle_state(theta + np.pi)]) / np.sqrt(2)
    out.setflags(write=False)
    return out


def pair_state(theta: float) -> np.ndarray:
    """(|0>|theta> + |1>|theta+pi>)/sqrt(2) over (ancilla, travel qubit)."""
    return _pair_state(float(theta))


def ancilla_frame(theta: float) -> np.ndarray:
    """Ancilla-side unitary A with (A x I) pair_state(0) = pair_state(theta)."""
    return HADAMARD @ rotation(theta) @ HADAMARD


@dataclass(frozen=True, eq=False)
class BobPreparation:
    """Bob's n (ancilla, travel) pairs.

    ``pair_states`` is what Bob actually prepared (and verifies against);
    ``claimed_pair_states`` is what he announces when Alice checks a pair.
    ``choices`` holds the j in {1, 2} of each travel qubit when Bob keeps a
    classical record instead of an entangled ancilla, else None.
    """

    angles: tuple[float, ...]
    grid_indices: tuple[int, ...]
    choices: tuple[int, ...] | None
    global_state: StateVector
    pair_states: tuple[np.ndarray, ...]
    claimed_pair_states: tuple[np.ndarray, ...]
    entangled: bool = True

    @property
    def n(self) -> int:
        return len(self.angles)


def pairs_layout(n: int) -> SystemLayout:
    return SystemLayout(tuple((bob_anc(l), 2) for l in range(1, n + 1)) + tuple((travel(l), 2) for l in range(1, n + 1)))


def pairs_tensor(pair_states: Sequence[np.ndarray]) -> np.ndarray:
    """Product of pair states as a tensor with axes (a_1..a_n, t_1..t_n)."""
    n = len(pair_states)
    t = kron_all(pair_states).reshape((2,) * (2 * n))
    return np.transpose(t, list(range(0, 2 * n, 2)) + list(range(1, 2 * n, 2)))


def build_preparation(angles, grid_indices, pair_states, claimed=None, choices=None, entangled=True) -> BobPreparation:
    pair_states = tuple(np.asarray(p, dtype=complex) for p in pair_states)
    n = len(pair_states)
    state = StateVector(pairs_tensor(pair_states).reshape(-1), pairs_layout(n))
    return BobPreparation(
        angles=tuple(float(a) for a in angles),
        grid_indices=tuple(int(g) for g in grid_indices),
        choices=None if choices is None else tuple(int(c) for c in choices),
        global_state=state,
        pair_states=pair_states,
        claimed_pair_states=pair_states if claimed is None else tuple(claimed),
        entangled=entangled,
    )


def bob_prepare(config: ProtocolConfig, rng: np.random.Generator) -> BobPreparation:
    """Honest preparation: each travel qubit maximally entangled with its ancilla."""
    idx = rng.integers(0, config.M, size=config.n)
    angles = config.grid()[idx]
    return build_preparation(angles, idx, [pair_state(a) for a in angles])


# ---------------------------------------------------------------------------
# arrangements and the commitment

def cyclic_arrangements(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(tuple((p - k) % n for p in range(n)) for k in range(n))


def all_arrangements(n: int) -> tuple[tuple[int, ...], ...]:
    return tuple(itertools.permutations(range(n)))


def prescribed_family(mode: Mode, n: int) -> frozenset:
    if Mode(mode) is Mode.PERMUTATION:
        return frozenset(all_arrangements(n))
    return frozenset(cyclic_arrangements(n))


def commit_amplitudes(pairs: np.ndarray, arrangements, coeffs, unitary: np.ndarray | None) -> np.ndarray:
    """Amplitude tensor (alice_anc, a_1..a_n, pos_1..pos_n) of
    sum_k coeffs[k] |k> (arrangement k of the travel qubits), then
    ``unitary`` on pos_1."""
    n = pairs.ndim // 2
    out = np.zeros((len(arrangements),) + (2,) * (2 * n), dtype=complex)
    for k, sigma in enumerate(arrangements):
        if coeffs[k] != 0:
            out[k] = coeffs[k] * np.transpose(pairs, list(range(n)) + [n + s for s in sigma])
    if unitary is not None:
        out = np.moveaxis(np.tensordot(unitary, out, axes=([1], [n + 1])), 0, n + 1)
    return out


def commitment_layout(n: int, ancilla_dim: int) -> SystemLayout:
    return SystemLayout(
        ((ALICE_ANC, ancilla_dim),)
        + tuple((bob_anc(l), 2) for l in range(1, n + 1))
        + tuple((slot(p), 2) for p in range(1, n + 1))
    )


@dataclass(frozen=True, eq=False)
class CommitmentState:
    global_state: StateVector
    bit: int
    mode: Mode
    arrangements: tuple[tuple[int, ...], ...]
    support: tuple[int, ...]
    holders: Mapping[str, str]
    modulation: float
    returned: tuple[tuple[int, str], ...] = ()
    ancilla_measured: bool = False
    opened: bool = False

    @property
    def n(self) -> int:
        return len(self.arrangements[0])

    def held_by(self, party: str) -> tuple[str, ...]:
        return tuple(r for r in self.global_state.layout.names if self.holders[r] == party)

    def committed_original(self, k: int) -> int:
        return self.arrangements[k][0] + 1

    def slot_of(self, k: int, original: int) -> str:
        return slot(self.arrangements[k].index(original - 1) + 1)

    def ancilla_weights(self) -> np.ndarray:
        amps = self.global_state.amplitudes.reshape(len(self.arrangements), -1)
        return np.einsum("ij,ij->i", amps, amps.conj()).real

    def with_holders(self, **changes) -> "CommitmentState":
        holders = dict(self.holders)
        holders.update(changes)
        return replace(self, holders=MappingProxyType(holders))


def _initial_holders(n: int) -> Mapping[str, str]:
    holders = {ALICE_ANC: ALICE, slot(1): BOB}
    for l in range(1, n + 1):
        holders[bob_anc(l)] = BOB
    for p in range(2, n + 1):
        holders[slot(p)] = ALICE
    return MappingProxyType(holders)


def alice_commit(prep: BobPreparation, bit: int, mode: Mode, rng: np.random.Generator,
                 modulation: float = math.pi / 2) -> CommitmentState:
    """Arrange Bob's qubits (entangled with Alice's ancilla per ``mode``),
    modulate slot 1 by U_bit and hand it back to Bob."""
    mode = Mode(mode)
    unitary = modulation_unitary(bit, modulation)
    n = prep.n
    if mode is Mode.PERMUTATION:
        if n > PERMUTATION_MAX_N:
            raise ResourceCapError(f"permutation mode needs an ancilla of dimension {n}! = {math.factorial(n)}")
        arrangements = all_arrangements(n)
    else:
        arrangements = cyclic_arrangements(n)
    if mode is Mode.PREMEASURED:
        coeffs = np.zeros(len(arrangements))
        coeffs[int(rng.integers(0, n))] = 1.0
    else:
        coeffs = np.full(len(arrangements), 1 / np.sqrt(len(arrangements)))
    pairs = prep.global_state.tensor_view()
    amps = commit_amplitudes(pairs, arrangements, coeffs, unitary)
    state = StateVector(amps.reshape(-1), commitment_layout(n, len(arrangements)))
    support = tuple(int(k) for k in np.flatnonzero(coeffs))
    return CommitmentState(state, bit, mode, arrangements, support, _initial_holders(n), modulation,
                           ancilla_measured=mode is Mode.PREMEASURED)


# ---------------------------------------------------------------------------
# Alice's ancilla measurements

def _restrict_ancilla(state: CommitmentState, keep: Iterable[int]) -> tuple[float, CommitmentState]:
    keep = sorted(set(keep))
    amps = state.global_state.amplitudes.reshape(len(state.arrangements), -1)
    mask = np.zeros(len(state.arrangements), dtype=bool)
    mask[keep] = True
    projected = np.where(mask[:, None], amps, 0)
    prob = float(np.vdot(projected, projected).real)
    new = StateVector(projected.reshape(-1) / np.sqrt(prob), state.global_state.layout)
    weights = np.einsum("ij,ij->i", projected, projected.conj()).real
    support = tuple(k for k in keep if weights[k] > 1e-14)
    return prob, replace(state, global_state=new, support=support)


def measure_ancilla(state: CommitmentState, key, rng: np.random.Generator):
    """Lüders measurement on alice_anc whose outcomes are the values of
    ``key(arrangement)``.  Returns (outcome, probability, post-state)."""
    weights = state.ancilla_weights()
    groups: dict = {}
    for k in state.support:
        if weights[k] > 1e-14:
            groups.setdefault(key(state.arrangements[k]), []).append(k)
    outcomes = sorted(groups, key=repr)
    probs = np.array([weights[groups[o]].sum() for o in outcomes])
    probs = probs / probs.sum()
    choice = int(np.searchsorted(np.cumsum(probs), rng.random(), side="right"))
    outcome = outcomes[min(choice, len(outcomes) - 1)]
    prob, post = _restrict_ancilla(state, groups[outcome])
    return outcome, prob, post


def residual_support_dimension(state: CommitmentState, tol: float = 1e-12) -> int:
    """Number of ancilla basis states still carrying amplitude."""
    return int(np.sum(state.ancilla_weights() > tol))


def bob_check_request(config: ProtocolConfig, rng: np.random.Generator) -> frozenset:
    picks = rng.choice(config.n, size=config.check_size, replace=False)
    return frozenset(int(p) + 1 for p in picks)


@dataclass(frozen=True, eq=False)
class CheckAnswer:
    contains_committed: bool
    outcome: object
    returned: tuple[tuple[int, str], ...]
    state: CommitmentState


def alice_answer_check(state: CommitmentState, requested: Iterable[int], rng: np.random.Generator) -> CheckAnswer:
    """Answer Bob's request for the qubits at original positions ``requested``.

    Cyclic (and pre-measured) Alice measures her ancilla in the arrangement
    basis.  Permutation Alice makes the coarsest Lüders measurements that let
    her answer: first whether the committed qubit is requested, then the
    slots of the requested qubits.  If the committed qubit is requested,
    nothing is returned and Bob is expected to ask for the complement.
    """
    if state.opened:
        raise ProtocolOrderError("check requested after opening")
    requested = frozenset(requested)
    n = state.n
    bad = [l for l in requested if not 1 <= l <= n]
    if bad:
        raise ProtocolOrderError(f"positions {sorted(bad)} do not exist")
    already = {l for l, _ in state.returned}
    if requested & already:
        raise ProtocolOrderError(f"positions {sorted(requested & already)} were already returned")

    if state.mode is Mode.PERMUTATION:
        contains, _, state = measure_ancilla(state, lambda s: s[0] + 1 in requested, rng)
        outcome = None
        if not contains:
            wanted = sorted(requested)
            outcome, _, state = measure_ancilla(state, lambda s: tuple(s.index(l - 1) + 1 for l in wanted), rng)
    else:
        outcome, _, state = measure_ancilla(state, lambda s: s, rng)
        outcome = state.support[0]
        contains = state.committed_original(outcome) in requested
    state = replace(state, ancilla_measured=True)
    if contains:
        return CheckAnswer(True, outcome, (), state)

    k = state.support[0]
    returned = tuple((l, state.slot_of(k, l)) for l in sorted(requested))
    for _, reg in returned:
        if state.holders[reg] != ALICE:
            raise ProtocolOrderError(f"Alice cannot return {reg}, she does not hold it")
    state = state.with_holders(**{reg: BOB for _, reg in returned})
    state = replace(state, returned=state.returned + returned)
    return CheckAnswer(False, outcome, returned, state)


@dataclass(frozen=True, eq=False)
class VerifyResult:
    passed: bool
    probability: float
    state: CommitmentState | None


def _sample(prob: float, rng: np.random.Generator) -> bool:
    return bool(rng.random() < prob)


def bob_verify_returned(prep: BobPreparation, state: CommitmentState, returned, rng: np.random.Generator) -> VerifyResult:
    """Project each returned (ancilla, qubit) pair onto Bob's own pair state."""
    returned = tuple(returned)
    if not returned:
        return VerifyResult(True, 1.0, state)
    regs: list[str] = []
    for l, reg in returned:
        regs += [bob_anc(l), reg]
    proj = kron_all(ket_projector(prep.pair_states[l - 1]) for l, _ in returned)
    projected = apply(state.global_state, proj, regs)
    prob = float(np.vdot(projected, projected).real)
    if not _sample(prob, rng):
        return VerifyResult(False, prob, None)
    post = StateVector(projected / np.sqrt(prob), state.global_state.layout)
    return VerifyResult(True, prob, replace(state, global_state=post))


# ---------------------------------------------------------------------------
# the expected states Bob projects onto

def expected_state(pair_states, state: CommitmentState, bit: int | None, support: Iterable[int],
                   family: frozenset) -> StateVector:
    """Honest commitment state over ``state``'s layout, restricted to the
    ancilla indices in ``support`` that belong to ``family``; modulated by
    U_bit on pos_1 (unmodulated when ``bit`` is None)."""
    keep = [k for k in support if state.arrangements[k] in family]
    coeffs = np.zeros(len(state.arrangements))
    if keep:
        coeffs[keep] = 1 / np.sqrt(len(keep))
    else:
        raise DomainError("no arrangement of the prescribed family is consistent with the record")
    unitary = None if bit is None else modulation_unitary(bit, state.modulation)
    amps = commit_amplitudes(pairs_tensor(pair_states), state.arrangements, coeffs, unitary)
    return StateVector(amps.reshape(-1), state.global_state.layout)


def check_entanglement_eq8(prep: BobPreparation, state: CommitmentState, rng: np.random.Generator,
                           family: frozenset | None = None) -> VerifyResult:
    """Verify the cyclic-shift entanglement.

    Alice hands Bob her ancilla, Bob hands back the committed qubit, Alice
    undoes U_b on it and hands Bob every slot.  Bob projects onto the
    unmodulated cyclic superposition built from his own pairs.  On success
    the registers go back to their holders and Alice re-applies U_b, so
    an honest session continues unchanged.
    """
    if state.opened:
        raise ProtocolOrderError("entanglement check after opening")
    family = prescribed_family(Mode.CYCLIC, state.n) if family is None else family
    undo = modulation_unitary(state.bit, state.modulation).conj().T
    unmodulated = apply_unitary(state.global_state, undo, [slot(1)])
    ref = expected_state(prep.pair_states, state, None, range(len(state.arrangements)), family)
    prob = abs(ref.inner(unmodulated)) ** 2
    if not _sample(prob, rng):
        return VerifyResult(False, prob, None)
    restored = apply_unitary(ref, modulation_unitary(state.bit, state.modulation), [slot(1)])
    weights = np.abs(ref.amplitudes.reshape(len(state.arrangements), -1)) ** 2
    support = tuple(int(k) for k in np.flatnonzero(weights.sum(axis=1) > 1e-14))
    return VerifyResult(True, prob, replace(state, global_state=restored, support=support))


def eq8_counter_check_probability(state: CommitmentState, substitute: np.ndarray) -> float:
    """Pass probability of Alice's counter-check when Bob keeps the
    committed qubit and hands her ``substitute`` instead.

    Alice projects the reassembled state onto the one she expects; with
    the genuine qubit withheld, the assembled state is
    Tr_{pos_1}(|psi><psi|) (x) |substitute><substitute|.
    """
    psi = state.global_state
    others = [r for r in psi.layout.names if r != slot(1)]
    rest = partial_trace(psi, others)
    sub = np.asarray(substitute, dtype=complex)
    sub = sub / np.linalg.norm(sub)
    rho = np.kron(rest.matrix, np.outer(sub, sub.conj()))
    ordered = reorder(psi, others + [slot(1)]).amplitudes
    return float(np.vdot(ordered, rho @ ordered).real)


# ---------------------------------------------------------------------------
# opening

@dataclass(frozen=True)
class Revelation:
    bit: int
    support: tuple[int, ...]
    k0: int | None
    registers: tuple[str, ...]


def alice_open(state: CommitmentState, declared_bit: int | None = None, unitary: np.ndarray | None = None,
               unitary_registers: Sequence[str] | None = None) -> tuple[Revelation, CommitmentState]:
    """Alice reveals her bit and ancilla record and hands over everything she holds.

    ``unitary`` (on ``unitary_registers``, all of which Alice must hold) is
    applied first; this is how an entanglement-cheating Alice steers.
    """
    if state.opened:
        raise ProtocolOrderError("commitment already opened")
    bit = state.bit if declared_bit is None else declared_bit
    if bit not in (0, 1):
        raise DomainError(f"bit must be 0 or 1, got {bit!r}")
    if unitary is not None:
        regs = list(unitary_registers)
        foreign = [r for r in regs if state.holders[r] != ALICE]
        if foreign:
            raise ProtocolOrderError(f"Alice cannot act on {foreign}")
        state = replace(state, global_state=apply_unitary(state.global_state, unitary, regs))
    held = state.held_by(ALICE)
    k0 = state.support[0] if state.ancilla_measured and len(state.support) == 1 else None
    rev = Revelation(bit, tuple(state.support), k0, held)
    state = state.with_holders(**{r: BOB for r in held})
    return rev, replace(state, opened=True)


def bob_verify_open(prep: BobPreparation, state: CommitmentState, revelation: Revelation,
                    rng: np.random.Generator, family: frozenset | None = None) -> VerifyResult:
    """Project everything onto the state an honest Alice would have left."""
    if not state.opened:
        raise ProtocolOrderError("verification before opening")
    if state.held_by(ALICE):
        raise ProtocolOrderError(f"Alice still holds {state.held_by(ALICE)}")
    family = prescribed_family(state.mode, state.n) if family is None else family
    try:
        ref = expected_state(prep.pair_states, state, revelation.bit, revelation.support, family)
    except DomainError:
        return VerifyResult(False, 0.0, None)
    prob = abs(ref.inner(state.global_state)) ** 2
    passed = _sample(prob, rng)
    return VerifyResult(passed, prob, replace(state, global_state=ref) if passed else None)


# ---------------------------------------------------------------------------
# Bob's view

def bob_registers(n: int, returned_originals: Iterable[int] = ()) -> tuple[str, ...]:
    return tuple(bob_anc(l) for l in range(1, n + 1)) + (slot(1),) + tuple(
        returned_name(l) for l in sorted(returned_originals))


def bob_view(state: CommitmentState) -> DensityOperator:
    """Bob's reduced state, returned slots renamed ``ret_l`` by original position."""
    originals = [l for l, _ in state.returned]
    names = {reg: returned_name(l) for l, reg in state.returned}
    keep = [bob_anc(l) for l in range(1, state.n + 1)] + [slot(1)] + [reg for _, reg in state.returned]
    rho = partial_trace(state.global_state, keep)
    layout = SystemLayout(tuple((names.get(r, r), d) for r, d in rho.layout.registers))
    target = bob_registers(state.n, originals)
    axes = [layout.index(r) for r in target]
    d = rho.matrix.shape[0]
    k = len(axes)
    t = rho.matrix.reshape(layout.dims + layout.dims)
    t = np.transpose(t, axes + [k + a for a in axes]).reshape(d, d)
    return DensityOperator(t, layout.reordered(target))


def bob_side_mixture(pair_states, bit: int, modulation: float, candidates: Iterable[int],
                     returned_originals: Iterable[int] = ()) -> DensityOperator:
    """Bob's state as the uniform mixture over which original became the
    committed qubit, built pair by pair without any global state.

    For candidate l: pair l carries U_bit on its travel half (now pos_1),
    returned pairs are intact, every other ancilla is traced against its
    partner held by Alice.
    """
    pair_states = [np.asarray(p, dtype=complex) for p in pair_states]
    n = len(pair_states)
    returned_originals = sorted(set(returned_originals))
    candidates = sorted(set(candidates))
    target = bob_registers(n, returned_originals)
    unitary = modulation_unitary(bit, modulation)
    total = 0
    for lbar in candidates:
        blocks: list[tuple[tuple[str, ...], np.ndarray]] = []
        for l in range(1, n + 1):
            p = pair_states[l - 1]
            if l == lbar:
                blocks.append(((bob_anc(l), slot(1)), ket_projector(np.kron(np.eye(2), unitary) @ p)))
            elif l in returned_originals:
                blocks.append(((bob_anc(l), returned_name(l)), ket_projector(p)))
            else:
                m = p.reshape(2, 2)
                blocks.append(((bob_anc(l),), m @ m.conj().T))
        order = [r for regs, _ in blocks for r in regs]
        mat = kron_all(m for _, m in blocks)
        axes = [order.index(r) for r in target]
        k = len(order)
        t = mat.reshape((2,) * (2 * k))
        t = np.transpose(t, axes + [k + a for a in axes]).reshape(mat.shape)
        total = total + t
    layout = SystemLayout(tuple((r, 2) for r in target))
    return DensityOperator(total / len(candidates), layout)


# ---------------------------------------------------------------------------
# transcripts

PHASE_RANK = {
    "Prepared": 0,
    "PairsChecked": 1,
    "Committed": 2,
    "Eq8Checked": 4,
    "CheckRequested": 4,
    "CheckAnswered": 4,
    "ReturnsVerified": 4,
    "BobMeasured": 5,
    "Opened": 6,
    "Verified": 7,
}
TERMINAL = {"Verified", "CheatDetected"}


@dataclass(frozen=True)
class PhaseRecord:
    phase: str
    party: str
    payload: Mapping = field(default_factory=dict)
    touched: tuple[str, ...] = ()
    held: tuple[str, ...] = ()

    def to_json(self) -> str:
        return json.dumps(
            {"phase": self.phase, "party": self.party, "payload": _jsonable(self.payload),
             "touched": list(self.touched), "held": list(self.held)},
            sort_keys=True, separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "PhaseRecord":
        d = json.loads(line)
        return cls(d["phase"], d["party"], d["payload"], tuple(d["touched"]), tuple(d["held"]))


def _jsonable(obj):
    if isinstance(obj, Mapping):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (frozenset, set)):
        return sorted(_jsonable(v) for v in obj)
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


class Transcript:
    """Append-only phase log that rejects illegal orderings."""

    def __init__(self, records: Iterable[PhaseRecord] = ()):
        self.records: list[PhaseRecord] = []
        for r in records:
            self.append(r)

    def append(self, record: PhaseRecord) -> None:
        if self.terminal is not None:
            raise ProtocolOrderError(f"{record.phase} after terminal phase {self.terminal.phase}")
        if record.phase != "CheatDetected":
            if record.phase not in PHASE_RANK:
                raise ProtocolOrderError(f"unknown phase {record.phase!r}")
            if not self.records and record.phase != "Prepared":
                raise ProtocolOrderError("a session starts with Prepared")
            if self.records:
                last = self.records[-1]
                if PHASE_RANK[record.phase] < PHASE_RANK[last.phase]:
                    raise ProtocolOrderError(f"{record.phase} cannot follow {last.phase}")
                if record.phase in ("Prepared", "Committed", "Opened") and any(
                        r.phase == record.phase for r in self.records):
                    raise ProtocolOrderError(f"{record.phase} occurs twice")
        self.records.append(record)

    @property
    def terminal(self) -> PhaseRecord | None:
        if self.records and self.records[-1].phase in TERMINAL:
            return self.records[-1]
        return None

    def phases(self) -> list[str]:
        return [r.phase for r in self.records]

    def to_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records)

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        return cls(PhaseRecord.from_json(line) for line in text.splitlines() if line.strip())

    def __eq__(self, other):
        return isinstance(other, Transcript) and self.to_jsonl() == other.to_jsonl()

    def __len__(self):
        return len(self.records)


def holder_violations(transcript: Transcript) -> list[PhaseRecord]:
    """Records in which a party touched a register it did not hold."""
    return [r for r in transcript.records if not set(r.touched) <= set(r.held)]
