"""One complete QBC1 session between two strategies."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .adversary import AliceStrategy, BobStrategy, alice_steering, bob_helstrom_guess
from .protocol import (
    ALICE,
    ALICE_ANC,
    BOB,
    PhaseRecord,
    ProtocolConfig,
    Transcript,
    alice_answer_check,
    alice_commit,
    alice_open,
    bob_anc,
    bob_check_request,
    bob_verify_open,
    bob_verify_returned,
    check_entanglement_eq8,
    prescribed_family,
    session_streams,
    slot,
    travel,
)
from .qlin import StateVector, apply, ket_projector, kron_all


@dataclass(frozen=True, eq=False)
class SessionResult:
    transcript: Transcript
    committed_bit: int | None
    declared_bit: int | None
    bob_guess: int | None
    outcome: str
    accept_probability: float | None
    check_probabilities: dict

    @property
    def accepted(self) -> bool:
        return self.outcome == "accept"

    @property
    def detected(self) -> str | None:
        term = self.transcript.terminal
        return term.party if term is not None and term.phase == "CheatDetected" else None

    @property
    def guess_correct(self) -> bool | None:
        if self.bob_guess is None:
            return None
        return self.bob_guess == self.committed_bit


def _alice_checks_pairs(config, prep, alice_rng, nature):
    """Alice verifies a random subset of Bob's pairs against his claims."""
    positions = sorted(int(p) + 1 for p in alice_rng.choice(config.n, size=config.alice_pair_checks, replace=False))
    regs: list[str] = []
    for l in positions:
        regs += [bob_anc(l), travel(l)]
    proj = kron_all(ket_projector(prep.claimed_pair_states[l - 1]) for l in positions)
    projected = apply(prep.global_state, proj, regs)
    prob = float(np.vdot(projected, projected).real)
    passed = bool(nature.random() < prob)
    if passed:
        prep = replace(prep, global_state=StateVector(projected / np.sqrt(prob), prep.global_state.layout))
    return positions, prob, passed, prep


def run_protocol(config: ProtocolConfig, alice: AliceStrategy, bob: BobStrategy, seed=None) -> SessionResult:
    """Play one session.  Deterministic given ``seed`` (default ``config.seed``)."""
    nature, alice_rng, bob_rng = session_streams(config.seed if seed is None else seed)
    transcript = Transcript()
    probs: dict = {}
    n = config.n
    travel_regs = tuple(travel(l) for l in range(1, n + 1))
    bob_anc_regs = tuple(bob_anc(l) for l in range(1, n + 1))

    def finish(outcome, committed=None, declared=None, guess=None, accept=None):
        return SessionResult(transcript, committed, declared, guess, outcome, accept, probs)

    def detected(party, step, prob):
        transcript.append(PhaseRecord("CheatDetected", party, {"step": step, "pass_probability": prob}))

    prep = bob.prepare(config, bob_rng)
    transcript.append(PhaseRecord("Prepared", BOB, {"n": n, "M": config.M, "grid": list(prep.grid_indices)},
                                  touched=bob_anc_regs + travel_regs, held=bob_anc_regs + travel_regs))

    if config.alice_pair_checks:
        positions, prob, passed, prep = _alice_checks_pairs(config, prep, alice_rng, nature)
        probs["pair_check"] = prob
        touched = tuple(r for l in positions for r in (bob_anc(l), travel(l)))
        transcript.append(PhaseRecord("PairsChecked", ALICE, {"positions": positions, "passed": passed},
                                      touched=touched, held=travel_regs + tuple(bob_anc(l) for l in positions)))
        if not passed:
            detected(BOB, "pair-check", prob)
            return finish("detected")

    bit = alice.choose_bit(alice_rng)
    state = alice_commit(prep, bit, alice.commit_mode(config), nature, config.modulation)
    alice_held = (ALICE_ANC,) + travel_regs
    transcript.append(PhaseRecord("Committed", ALICE, {"sent": [slot(1)]}, touched=alice_held, held=alice_held))
    family = prescribed_family(config.alice_entanglement, n)

    if config.eq8_check:
        held = state.held_by(ALICE) + state.held_by(BOB)
        verdict = check_entanglement_eq8(prep, state, nature)
        probs["eq8"] = verdict.probability
        transcript.append(PhaseRecord("Eq8Checked", BOB, {"passed": verdict.passed},
                                      touched=state.global_state.layout.names, held=held))
        if not verdict.passed:
            detected(ALICE, "eq8", verdict.probability)
            return finish("detected", committed=bit)
        state = verdict.state

    if config.bob_check:
        request = bob_check_request(config, bob_rng)
        everything = frozenset(range(1, n + 1))
        while True:
            transcript.append(PhaseRecord("CheckRequested", BOB, {"positions": sorted(request)}))
            held = state.held_by(ALICE)
            answer = alice_answer_check(state, request, nature)
            state = answer.state
            transcript.append(PhaseRecord(
                "CheckAnswered", ALICE,
                {"contains_committed": answer.contains_committed, "outcome": answer.outcome,
                 "returned": [[l, reg] for l, reg in answer.returned]},
                touched=(ALICE_ANC,) + tuple(reg for _, reg in answer.returned), held=held))
            if not answer.contains_committed:
                break
            request = everything - request
        verdict = bob_verify_returned(prep, state, answer.returned, nature)
        probs["returns"] = verdict.probability
        touched = tuple(r for l, reg in answer.returned for r in (bob_anc(l), reg))
        transcript.append(PhaseRecord("ReturnsVerified", BOB, {"passed": verdict.passed},
                                      touched=touched, held=state.held_by(BOB)))
        if not verdict.passed:
            detected(ALICE, "check", verdict.probability)
            return finish("detected", committed=bit)
        state = verdict.state

    guess = None
    if bob.guesses:
        held = state.held_by(BOB)
        guess, p0, state = bob_helstrom_guess(prep, state, bob_rng)
        probs["guess_zero"] = p0
        transcript.append(PhaseRecord("BobMeasured", BOB, {"guess": guess},
                                      touched=bob_anc_regs + (slot(1),) + tuple(r for _, r in state.returned),
                                      held=held))

    declared = alice.declared_bit(bit)
    unitary = regs = None
    if alice.kind == "uhlmann":
        steer = alice_steering(state, declared)
        unitary, regs = steer.unitary, steer.registers
    held = state.held_by(ALICE)
    revelation, state = alice_open(state, declared, unitary, regs)
    transcript.append(PhaseRecord("Opened", ALICE,
                                  {"bit": declared, "k0": revelation.k0, "support": list(revelation.support),
                                   "sent": list(revelation.registers)},
                                  touched=tuple(regs or ()) + revelation.registers, held=held))

    verdict = bob_verify_open(prep, state, revelation, nature, family)
    probs["open"] = verdict.probability
    transcript.append(PhaseRecord("Verified", BOB, {"accepted": verdict.passed},
                                  touched=state.global_state.layout.names, held=state.held_by(BOB)))
    return finish("accept" if verdict.passed else "reject", bit, declared, guess, verdict.probability)
