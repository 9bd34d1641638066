"""ACK/NAKx adaptive retransmission state machine.

Receiver side: sample as many incoming packet parts as the energy budget
allows, store them, and decode once all parts are present and the decode
energy is available.  Feedback reports the cumulative stored fraction.
Transmitter side: resend only the missing fraction.  With beta = 1 the
machine degenerates to conventional ACK/NAK.

A NAK0 (nothing sampled yet) is carried as x = 0 and handled like NAK on
the transmit side (full resend), but it is a distinct message.  If sampling
completes the packet while decode energy is missing, the receiver reports
x = beta and decodes in a later slot once it can afford to.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .exceptions import CausalityError, ProtocolStateError


class FeedbackKind(enum.Enum):
    ACK = "ack"
    NAK = "nak"
    NAKX = "nakx"


@dataclass(frozen=True)
class Feedback:
    kind: FeedbackKind
    x: int | None = None

    def __post_init__(self):
        if self.kind is FeedbackKind.NAKX:
            if self.x is None or self.x < 0:
                raise ValueError("NAKx needs a nonnegative sampled-part count")
        elif self.x is not None:
            raise ValueError(f"{self.kind.value} carries no part count")

    @classmethod
    def ack(cls):
        return cls(FeedbackKind.ACK)

    @classmethod
    def nak(cls):
        return cls(FeedbackKind.NAK)

    @classmethod
    def nakx(cls, x: int):
        return cls(FeedbackKind.NAKX, x)

    @property
    def is_ack(self):
        return self.kind is FeedbackKind.ACK

    def __str__(self):
        if self.kind is FeedbackKind.NAKX:
            return f"NAK{self.x}"
        return self.kind.name


def message_alphabet_size(beta: int) -> int:
    """Number of distinct feedback messages: ACK, NAK and NAK0..NAKbeta."""
    return 2 if beta == 1 else beta + 3


def feedback_bits(beta: int) -> float:
    return 1 + math.log2(beta)


@dataclass(frozen=True)
class RxCosts:
    """Receiver energy prices in its battery quantum."""
    sample_part: int
    decode: int
    feedback: int = 0


@dataclass(frozen=True)
class RxSampleStore:
    """Receiver-side record of stored packet parts within one frame."""
    beta: int
    stored_parts: int = 0
    part_states: tuple = ()
    worst_pep: float = 0.0

    def __post_init__(self):
        if not 0 <= self.stored_parts <= self.beta:
            raise ValueError(f"stored parts {self.stored_parts} outside "
                             f"[0, {self.beta}]")

    @property
    def sampled_fraction(self):
        return self.stored_parts / self.beta

    @property
    def complete(self):
        return self.stored_parts == self.beta


@dataclass(frozen=True)
class TxFrameState:
    """Transmitter-side frame bookkeeping."""
    beta: int
    retrans_index: int = 1
    last_feedback: Feedback = field(default_factory=Feedback.ack)

    @property
    def pending_parts(self) -> int:
        """Parts of the current packet still to be delivered."""
        fb = self.last_feedback
        if fb.kind is FeedbackKind.NAKX:
            return self.beta - min(fb.x, self.beta)
        return self.beta     # new packet, or full resend after NAK

    @property
    def pending_fraction(self) -> float:
        return self.pending_parts / self.beta


def advance_retrans_index(k: int, K: int, feedback: Feedback) -> int:
    """Next retransmission index: +1 per slot, reset on ACK or at K."""
    if not 1 <= k <= K:
        raise ValueError(f"retransmission index {k} outside [1, {K}]")
    return (k % K) * (not feedback.is_ack) + 1


def transmitter_step(feedback: Feedback, budget_units: int, action: int,
                     beta: int, allow_partial: bool = False):
    """Decide what the transmitter sends this slot.

    `action` is the full-packet energy level chosen by the policy; the
    actual spend scales with the fraction being sent.  `allow_partial`
    enables the fixed-power behaviour of sending only as many parts as the
    budget covers (each part then costs action/beta units, rounded up at
    the end).  Returns (parts_sent, energy_spent_units).
    """
    if feedback.kind is FeedbackKind.NAKX and feedback.x > beta:
        raise ProtocolStateError(f"feedback reports {feedback.x} of {beta} parts")
    if action == 0:
        return 0, 0
    pending = beta if not feedback.kind is FeedbackKind.NAKX \
        else beta - feedback.x
    if pending == 0:
        return 0, 0
    parts = pending
    if allow_partial:
        # Affordable part count at this power level.
        unit_budget = budget_units * beta // action
        parts = min(pending, unit_budget)
        if parts == 0:
            return 0, 0
    spend = -(-action * parts // beta)      # ceil
    if spend > budget_units:
        raise CausalityError(
            f"transmit spend {spend} exceeds budget {budget_units}")
    return parts, spend


def receiver_step(store: RxSampleStore, incoming_parts: int,
                  incoming_state: int, incoming_pep: float,
                  budget_units: int, costs: RxCosts, rng):
    """Sample, store and possibly decode one slot's arrival.

    Returns (feedback or None, energy_spent_units, new_store).  None means
    the transmitter was silent and no complete packet is awaiting decode,
    so no new message is produced and the previous feedback carries over.
    """
    beta = store.beta
    if store.stored_parts + incoming_parts > beta:
        raise ProtocolStateError(
            f"stored {store.stored_parts} + incoming {incoming_parts} parts "
            f"exceed the packet size {beta}")

    def decode(spent_before, new_store):
        spend = spent_before + costs.decode
        spend += min(costs.feedback, budget_units - spend)
        if rng.uniform() < new_store.worst_pep:
            return Feedback.nak(), spend, RxSampleStore(beta)
        return Feedback.ack(), spend, RxSampleStore(beta)

    if store.complete:
        # Deferred decode: all parts stored, waiting for decode energy.
        if budget_units >= costs.decode:
            return decode(0, store)
        return Feedback.nakx(beta), 0, store

    if incoming_parts == 0:
        return None, 0, store

    if beta == 1:
        # Conventional scheme: no SSI to report, so partial samples are
        # worthless. Process fully or not at all.
        need = incoming_parts * costs.sample_part + costs.decode
        if budget_units < need:
            return Feedback.nakx(0), 0, store

    affordable = budget_units // costs.sample_part if costs.sample_part else incoming_parts
    sampled = min(incoming_parts, affordable)
    if sampled == 0:
        # Cannot sample the smallest fraction: NAK0 (or restate progress).
        x = store.stored_parts
        return Feedback.nakx(x), 0, store

    spend = sampled * costs.sample_part
    new_store = replace(
        store,
        stored_parts=store.stored_parts + sampled,
        part_states=store.part_states + (incoming_state,) * sampled,
        worst_pep=max(store.worst_pep, incoming_pep),
    )
    if new_store.complete and budget_units - spend >= costs.decode:
        return decode(spend, new_store)
    spend += min(costs.feedback, budget_units - spend)
    return Feedback.nakx(new_store.stored_parts), spend, new_store
