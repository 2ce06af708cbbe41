"""Payment channel state machine.

One Channel object holds the shared view of both parties; operations take
the acting party where it matters. State advances through numbered
commitments. For each number n two transactions exist, one per party, and
each one:

  * pays the broadcaster's balance to Or(TimeLockRel(csv_delay, self),
    HashLock(rev_hash_n, other)): delayed if honest, forfeit if revoked,
  * pays the counterparty's balance directly to its key,
  * carries one output per pending HTLC: Or(HtlcScript(...), HashLock(
    rev_hash_n, other)), so stale HTLCs are also forfeit after revocation.

Updates are two-phase: propose_update signs both n+1 commitments, then
commit_update reveals both parties' invalidation keys for n. A crash
between the phases leaves both n and n+1 broadcastable and neither
punishable, so no funds are stranded.

The per-state invalidation key is HMAC(party revocation seed, n); its hash
goes into the revocation branches of that party's commitment n. Keys for
the current state are never revealed.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass
from enum import Enum
from typing import Optional

from ..chainlab import (
    HashFnId,
    HashLock,
    HtlcScript,
    KeyPair,
    Ledger,
    Multisig2of2,
    Or,
    Outpoint,
    PayToKey,
    TimeLockRel,
    Transaction,
    TxIn,
    TxOut,
    Witness,
    hash_digest,
    txid,
)
from ..chainlab.ledger import BlockSummary


class ChannelError(Exception):
    pass


class InsufficientFunds(ChannelError):
    """Party cannot fund its side of the channel from its on-chain coins."""


class InsufficientBalance(ChannelError):
    """Offered HTLC exceeds the offerer's channel balance."""


class UnsupportedHashFunction(ChannelError):
    """The channel's chain cannot evaluate the requested hash function."""


class StalePhase(ChannelError):
    """Operation requires a phase the channel is no longer in."""


class BadPreimage(ChannelError):
    pass


class UnknownHtlc(ChannelError):
    pass


class PendingHtlcs(ChannelError):
    """Cooperative close requires all HTLCs resolved first."""


class WindowExpired(ChannelError):
    """The cheater's delayed output was already swept; too late to punish."""


class AmountBelowDust(ChannelError):
    pass


class ChannelPhase(Enum):
    OPENING = "opening"
    OPEN = "open"
    COOPERATIVE_CLOSING = "cooperative-closing"
    UNILATERAL_CLOSED = "unilateral-closed"
    BREACHED = "breached"
    SETTLED = "settled"


@dataclass(frozen=True)
class ChannelParty:
    keypair: KeyPair
    revocation_seed: bytes

    def __post_init__(self) -> None:
        if len(self.revocation_seed) != 32:
            raise ValueError("revocation seed must be 32 bytes")

    @property
    def pubkey(self) -> bytes:
        return self.keypair.pubkey

    @classmethod
    def generate(cls, rng) -> "ChannelParty":
        return cls(KeyPair.generate(rng), rng.randbytes(32))


@dataclass(frozen=True)
class Htlc:
    htlc_id: int
    offerer_side: str  # "a" or "b"
    amount: int
    hash_fn: HashFnId
    payment_hash: bytes
    expiry_height: int


@dataclass(frozen=True)
class CommitmentState:
    commitment_number: int
    balance_a: int
    balance_b: int
    htlcs: tuple[Htlc, ...]


@dataclass(frozen=True)
class _Layout:
    """One party's signed commitment tx plus its output map."""

    tx: Transaction
    tx_id: bytes
    self_index: Optional[int]
    other_index: Optional[int]
    htlc_indices: dict  # htlc_id -> output index


@dataclass(frozen=True)
class ClosedOutput:
    outpoint: Outpoint
    amount: int
    kind: str  # "delayed" | "direct" | "htlc"
    owner_side: str
    htlc: Optional[Htlc]


def open_channel(
    ledger: Ledger,
    party_a: ChannelParty,
    party_b: ChannelParty,
    fund_a: int,
    fund_b: int,
    csv_delay: int = 6,
    dust_limit: int = 0,
    mine: bool = True,
) -> "Channel":
    """Fund and open a channel. The funding fee is paid by party_a.

    With mine=True (default) one block is mined so the channel comes back
    in phase OPEN; otherwise it is OPENING until process_block sees the
    funding confirmation.
    """
    if csv_delay < 1:
        raise ValueError("csv_delay must be >= 1")
    if fund_a < 0 or fund_b < 0 or fund_a + fund_b <= 0:
        raise ValueError("funding amounts must be non-negative and positive in total")
    if party_a.pubkey == party_b.pubkey:
        raise ValueError("channel parties must be distinct")
    fee = ledger.params.tx_fee
    capacity = fund_a + fund_b

    def select(party: ChannelParty, needed: int):
        picked, total = [], 0
        for op, amount in ledger.spendable_by(party.pubkey):
            if total >= needed:
                break
            picked.append((op, amount))
            total += amount
        if total < needed:
            raise InsufficientFunds(
                f"need {needed}, have {total} spendable for {party.pubkey.hex()[:8]}"
            )
        return picked, total

    coins_a, total_a = select(party_a, fund_a + fee)
    coins_b, total_b = select(party_b, fund_b) if fund_b else ([], 0)

    outputs = [TxOut(capacity, Multisig2of2(party_a.pubkey, party_b.pubkey))]
    change_a = total_a - fund_a - fee
    change_b = total_b - fund_b
    if change_a > 0:
        outputs.append(TxOut(change_a, PayToKey(party_a.pubkey)))
    if change_b > 0:
        outputs.append(TxOut(change_b, PayToKey(party_b.pubkey)))
    ops = [op for op, _ in coins_a] + [op for op, _ in coins_b]
    owners = [party_a] * len(coins_a) + [party_b] * len(coins_b)
    skeleton = Transaction(
        inputs=tuple(TxIn(op) for op in ops), outputs=tuple(outputs)
    )
    digest = txid(skeleton)
    funding = Transaction(
        inputs=tuple(
            TxIn(op, Witness(signatures=(owner.keypair.sign(digest),)))
            for op, owner in zip(ops, owners)
        ),
        outputs=skeleton.outputs,
    )

    channel = Channel(
        ledger=ledger,
        party_a=party_a,
        party_b=party_b,
        funding_outpoint=Outpoint(digest, 0),
        capacity=capacity,
        csv_delay=csv_delay,
        dust_limit=dust_limit,
        initial_balance_a=fund_a,
        initial_balance_b=fund_b,
    )
    # Commitment 0 is signed before the funding tx goes anywhere near the
    # chain, so neither party can strand the other's deposit.
    ledger.submit_tx(funding)
    channel._emit("funding-submitted", txid=digest.hex())
    if mine:
        for summary in ledger.mine_blocks(1):
            channel.process_block(summary)
        if channel.phase is not ChannelPhase.OPEN:
            raise ChannelError("funding did not confirm")
    return channel


class Channel:
    def __init__(
        self,
        ledger: Ledger,
        party_a: ChannelParty,
        party_b: ChannelParty,
        funding_outpoint: Outpoint,
        capacity: int,
        csv_delay: int,
        dust_limit: int,
        initial_balance_a: int,
        initial_balance_b: int,
    ):
        self.ledger = ledger
        self.party_a = party_a
        self.party_b = party_b
        self.funding_outpoint = funding_outpoint
        self.capacity = capacity
        self.csv_delay = csv_delay
        self.dust_limit = dust_limit
        self.phase = ChannelPhase.OPENING
        # Revocation hashes use one fixed function of the chain's set.
        self.revocation_fn = sorted(ledger.params.hash_fns, key=lambda f: f.value)[0]
        self.state = CommitmentState(0, initial_balance_a, initial_balance_b, ())
        self.events: list[dict] = []
        self._htlc_seq = 0
        self._pending_state: Optional[CommitmentState] = None
        self._layouts: dict[tuple[str, int], _Layout] = {}
        self._commitment_index: dict[bytes, tuple[str, int]] = {}
        self._state_history: dict[int, CommitmentState] = {0: self.state}
        self._revealed: dict[tuple[str, int], bytes] = {}
        self._preimages: dict[int, bytes] = {}
        self._closing_txid: Optional[bytes] = None
        self._frozen = False  # set once any close tx is in flight
        self.closed_by: Optional[str] = None
        self.closed_commitment: Optional[int] = None
        self.closed_height: Optional[int] = None
        self.closed_outputs: list[ClosedOutput] = []
        self._unresolved: set[Outpoint] = set()
        self.update_count = 0
        self._build_commitments(self.state)

    # --- identity helpers ----------------------------------------------------

    def side_of(self, party: ChannelParty) -> str:
        if party.pubkey == self.party_a.pubkey:
            return "a"
        if party.pubkey == self.party_b.pubkey:
            return "b"
        raise ValueError("not a channel party")

    def party(self, side: str) -> ChannelParty:
        return self.party_a if side == "a" else self.party_b

    def other(self, side: str) -> ChannelParty:
        return self.party_b if side == "a" else self.party_a

    def balance_of(self, party: ChannelParty) -> int:
        return self.state.balance_a if self.side_of(party) == "a" else self.state.balance_b

    @property
    def commitment_number(self) -> int:
        return self.state.commitment_number

    @property
    def pending_htlcs(self) -> tuple[Htlc, ...]:
        return self.state.htlcs

    def htlc(self, htlc_id: int) -> Htlc:
        for h in self.state.htlcs:
            if h.htlc_id == htlc_id:
                return h
        raise UnknownHtlc(f"htlc {htlc_id}")

    def preimage_of(self, htlc_id: int) -> Optional[bytes]:
        """Preimage learned through an off-chain fulfill of this HTLC."""
        return self._preimages.get(htlc_id)

    def recorded_states(self) -> dict[int, CommitmentState]:
        """Every commitment state this channel has signed, keyed by number.

        States below the current commitment number are revoked; broadcasting
        one of them is a breach the counterparty can punish."""
        return dict(self._state_history)

    def channel_id(self) -> str:
        return self.funding_outpoint.short()

    def _emit(self, kind: str, **fields) -> None:
        self.events.append({"kind": kind, "channel": self.channel_id(), **fields})

    # --- revocation keys -------------------------------------------------------

    def revocation_key(self, side: str, n: int) -> bytes:
        seed = self.party(side).revocation_seed
        return hmac.new(seed, n.to_bytes(8, "little"), hashlib.sha256).digest()

    def revocation_hash(self, side: str, n: int) -> bytes:
        return hash_digest(self.revocation_fn, self.revocation_key(side, n))

    def revealed_key(self, side: str, n: int) -> Optional[bytes]:
        return self._revealed.get((side, n))

    # --- commitment construction ------------------------------------------------

    def _build_for_side(self, side: str, state: CommitmentState) -> _Layout:
        me = self.party(side)
        other = self.other(side)
        n = state.commitment_number
        my_balance = state.balance_a if side == "a" else state.balance_b
        other_balance = state.balance_b if side == "a" else state.balance_a
        # Broadcaster pays the mining fee out of its own delayed output,
        # clipped so a poor broadcaster can still build (the ledger will
        # refuse an underpaying broadcast instead).
        fee = min(self.ledger.params.tx_fee, my_balance)
        rev_hash = self.revocation_hash(side, n)
        outputs: list[TxOut] = []
        self_index = other_index = None
        if my_balance - fee > 0:
            self_index = len(outputs)
            outputs.append(
                TxOut(
                    my_balance - fee,
                    Or(
                        TimeLockRel(self.csv_delay, me.pubkey),
                        HashLock(self.revocation_fn, rev_hash, other.pubkey),
                    ),
                )
            )
        if other_balance > 0:
            other_index = len(outputs)
            outputs.append(TxOut(other_balance, PayToKey(other.pubkey)))
        htlc_indices: dict[int, int] = {}
        for h in sorted(state.htlcs, key=lambda h: h.htlc_id):
            receiver = self.other(h.offerer_side)
            offerer = self.party(h.offerer_side)
            htlc_indices[h.htlc_id] = len(outputs)
            outputs.append(
                TxOut(
                    h.amount,
                    Or(
                        HtlcScript(
                            h.hash_fn,
                            h.payment_hash,
                            receiver.pubkey,
                            offerer.pubkey,
                            h.expiry_height,
                        ),
                        HashLock(self.revocation_fn, rev_hash, other.pubkey),
                    ),
                )
            )
        if not outputs:
            raise ChannelError("commitment would have no outputs")
        skeleton = Transaction(
            inputs=(TxIn(self.funding_outpoint),), outputs=tuple(outputs)
        )
        digest = txid(skeleton)
        witness = Witness(
            signatures=(
                self.party_a.keypair.sign(digest),
                self.party_b.keypair.sign(digest),
            )
        )
        tx = Transaction(
            inputs=(TxIn(self.funding_outpoint, witness),), outputs=skeleton.outputs
        )
        return _Layout(
            tx=tx,
            tx_id=digest,
            self_index=self_index,
            other_index=other_index,
            htlc_indices=htlc_indices,
        )

    def _build_commitments(self, state: CommitmentState) -> None:
        n = state.commitment_number
        for side in ("a", "b"):
            layout = self._build_for_side(side, state)
            self._layouts[(side, n)] = layout
            self._commitment_index[layout.tx_id] = (side, n)
        self._state_history[n] = state

    # --- two-phase update ---------------------------------------------------

    def propose_update(self, new_state: CommitmentState) -> None:
        """Phase one: both parties sign the next commitment."""
        self._require_open()
        if self._pending_state is not None:
            raise StalePhase("an update is already proposed")
        if new_state.commitment_number != self.state.commitment_number + 1:
            raise ValueError("commitment numbers must advance by exactly 1")
        total = (
            new_state.balance_a
            + new_state.balance_b
            + sum(h.amount for h in new_state.htlcs)
        )
        if total != self.capacity:
            raise ValueError("state does not conserve channel capacity")
        if new_state.balance_a < 0 or new_state.balance_b < 0:
            raise ValueError("negative balance")
        self._build_commitments(new_state)
        self._pending_state = new_state

    def commit_update(self) -> None:
        """Phase two: both parties reveal invalidation keys for the state
        being replaced. Only now is the old state revoked."""
        if self._pending_state is None:
            raise StalePhase("no update proposed")
        old_n = self.state.commitment_number
        for side in ("a", "b"):
            self._revealed[(side, old_n)] = self.revocation_key(side, old_n)
        self.state = self._pending_state
        self._pending_state = None
        self.update_count += 1

    def _apply_update(self, new_state: CommitmentState) -> None:
        self.propose_update(new_state)
        self.commit_update()

    def _require_open(self) -> None:
        if self.phase is not ChannelPhase.OPEN or self._frozen:
            raise StalePhase(f"channel is {self.phase.value}")

    # --- HTLC operations -------------------------------------------------------

    def add_htlc(
        self,
        offerer: ChannelParty,
        amount: int,
        hash_fn: HashFnId,
        payment_hash: bytes,
        expiry_height: int,
    ) -> int:
        self._require_open()
        if hash_fn not in self.ledger.params.hash_fns:
            raise UnsupportedHashFunction(hash_fn.value)
        if amount < 1:
            raise ValueError("htlc amount must be >= 1")
        if amount < self.dust_limit:
            raise AmountBelowDust(f"{amount} < dust limit {self.dust_limit}")
        if expiry_height <= self.ledger.height:
            raise ValueError("expiry_height must be above the current height")
        side = self.side_of(offerer)
        balance = self.state.balance_a if side == "a" else self.state.balance_b
        if balance < amount:
            raise InsufficientBalance(f"balance {balance} < htlc {amount}")
        self._htlc_seq += 1
        h = Htlc(
            htlc_id=self._htlc_seq,
            offerer_side=side,
            amount=amount,
            hash_fn=hash_fn,
            payment_hash=payment_hash,
            expiry_height=expiry_height,
        )
        new_state = CommitmentState(
            commitment_number=self.state.commitment_number + 1,
            balance_a=self.state.balance_a - (amount if side == "a" else 0),
            balance_b=self.state.balance_b - (amount if side == "b" else 0),
            htlcs=self.state.htlcs + (h,),
        )
        self._apply_update(new_state)
        self._emit(
            "htlc-added",
            htlc_id=h.htlc_id,
            offerer=side,
            amount=amount,
            expiry=expiry_height,
        )
        return h.htlc_id

    def fulfill_htlc(self, htlc_id: int, preimage: bytes) -> None:
        self._require_open()
        h = self.htlc(htlc_id)
        if hash_digest(h.hash_fn, preimage) != h.payment_hash:
            raise BadPreimage(f"htlc {htlc_id}")
        receiver_side = "b" if h.offerer_side == "a" else "a"
        new_state = CommitmentState(
            commitment_number=self.state.commitment_number + 1,
            balance_a=self.state.balance_a + (h.amount if receiver_side == "a" else 0),
            balance_b=self.state.balance_b + (h.amount if receiver_side == "b" else 0),
            htlcs=tuple(x for x in self.state.htlcs if x.htlc_id != htlc_id),
        )
        self._apply_update(new_state)
        # The fulfilling update itself hands the preimage to the offerer.
        self._preimages[htlc_id] = preimage
        self._emit("htlc-fulfilled", htlc_id=htlc_id, amount=h.amount)

    def fail_htlc(self, htlc_id: int) -> None:
        self._require_open()
        h = self.htlc(htlc_id)
        new_state = CommitmentState(
            commitment_number=self.state.commitment_number + 1,
            balance_a=self.state.balance_a + (h.amount if h.offerer_side == "a" else 0),
            balance_b=self.state.balance_b + (h.amount if h.offerer_side == "b" else 0),
            htlcs=tuple(x for x in self.state.htlcs if x.htlc_id != htlc_id),
        )
        self._apply_update(new_state)
        self._emit("htlc-failed", htlc_id=htlc_id, amount=h.amount)

    # --- closing ------------------------------------------------------------

    def cooperative_close(self) -> Transaction:
        self._require_open()
        if self.state.htlcs:
            raise PendingHtlcs(f"{len(self.state.htlcs)} HTLCs pending")
        fee = self.ledger.params.tx_fee
        fee_a = min(fee, self.state.balance_a)
        fee_b = fee - fee_a
        outputs = []
        if self.state.balance_a - fee_a > 0:
            outputs.append(TxOut(self.state.balance_a - fee_a, PayToKey(self.party_a.pubkey)))
        if self.state.balance_b - fee_b > 0:
            outputs.append(TxOut(self.state.balance_b - fee_b, PayToKey(self.party_b.pubkey)))
        if not outputs:
            raise ChannelError("close would have no outputs")
        skeleton = Transaction(
            inputs=(TxIn(self.funding_outpoint),), outputs=tuple(outputs)
        )
        digest = txid(skeleton)
        witness = Witness(
            signatures=(
                self.party_a.keypair.sign(digest),
                self.party_b.keypair.sign(digest),
            )
        )
        tx = Transaction(
            inputs=(TxIn(self.funding_outpoint, witness),), outputs=skeleton.outputs
        )
        self.ledger.submit_tx(tx)
        self._closing_txid = digest
        self.phase = ChannelPhase.COOPERATIVE_CLOSING
        self._frozen = True
        self._emit("cooperative-close-submitted", txid=digest.hex())
        return tx

    def unilateral_close(
        self, party: ChannelParty, commitment_number: Optional[int] = None
    ) -> Transaction:
        """Broadcast `party`'s commitment. Passing an old commitment_number is
        how a cheat is staged; honest callers leave it at the latest."""
        side = self.side_of(party)
        n = self.state.commitment_number if commitment_number is None else commitment_number
        layout = self._layouts.get((side, n))
        if layout is None:
            raise ValueError(f"no commitment {n} for side {side}")
        self.ledger.submit_tx(layout.tx)
        self._frozen = True
        self._emit("unilateral-close-submitted", by=side, commitment=n, txid=layout.tx_id.hex())
        return layout.tx

    # --- on-chain observation -------------------------------------------------

    def process_block(self, summary: BlockSummary) -> list[dict]:
        """Advance channel phase from what this block confirmed."""
        new_events: list[dict] = []

        def note(kind: str, **fields) -> None:
            self._emit(kind, height=summary.height, **fields)
            new_events.append(self.events[-1])

        if self.phase is ChannelPhase.OPENING:
            if self.funding_outpoint.txid in summary.txids:
                self.phase = ChannelPhase.OPEN
                note("opened", capacity=self.capacity)

        for outpoint, spender in summary.spent:
            if outpoint == self.funding_outpoint:
                self._frozen = True
                if spender == self._closing_txid:
                    self.phase = ChannelPhase.SETTLED
                    note("cooperatively-closed")
                elif spender in self._commitment_index:
                    side, n = self._commitment_index[spender]
                    self.closed_by = side
                    self.closed_commitment = n
                    self.closed_height = summary.height
                    self._register_closed_outputs(side, n)
                    if n < self.state.commitment_number:
                        self.phase = ChannelPhase.BREACHED
                        note("breach-detected", by=side, commitment=n)
                    else:
                        self.phase = ChannelPhase.UNILATERAL_CLOSED
                        note("unilaterally-closed", by=side, commitment=n)
            elif outpoint in self._unresolved:
                self._unresolved.discard(outpoint)

        if (
            self.phase in (ChannelPhase.UNILATERAL_CLOSED, ChannelPhase.BREACHED)
            and not self._unresolved
        ):
            self.phase = ChannelPhase.SETTLED
            note("settled")
        return new_events

    def _register_closed_outputs(self, side: str, n: int) -> None:
        layout = self._layouts[(side, n)]
        state = self._state_history[n]
        outs: list[ClosedOutput] = []
        if layout.self_index is not None:
            outs.append(
                ClosedOutput(
                    Outpoint(layout.tx_id, layout.self_index),
                    layout.tx.outputs[layout.self_index].amount,
                    "delayed",
                    side,
                    None,
                )
            )
        if layout.other_index is not None:
            outs.append(
                ClosedOutput(
                    Outpoint(layout.tx_id, layout.other_index),
                    layout.tx.outputs[layout.other_index].amount,
                    "direct",
                    "b" if side == "a" else "a",
                    None,
                )
            )
        for h in state.htlcs:
            idx = layout.htlc_indices[h.htlc_id]
            outs.append(
                ClosedOutput(
                    Outpoint(layout.tx_id, idx),
                    layout.tx.outputs[idx].amount,
                    "htlc",
                    h.offerer_side,
                    h,
                )
            )
        self.closed_outputs = outs
        # "direct" pays a bare key; nothing of the channel's remains to do.
        self._unresolved = {o.outpoint for o in outs if o.kind != "direct"}

    # --- post-close spends ------------------------------------------------------

    def _claim_fee(self, amount: int) -> int:
        fee = self.ledger.params.tx_fee
        if amount <= fee:
            raise ChannelError(f"output {amount} cannot pay fee {fee}")
        return fee

    def _closed_output(self, kind: str, htlc_id: Optional[int] = None) -> ClosedOutput:
        for o in self.closed_outputs:
            if o.kind != kind:
                continue
            if htlc_id is not None and (o.htlc is None or o.htlc.htlc_id != htlc_id):
                continue
            return o
        raise ChannelError(f"no {kind} output on the confirmed commitment")

    def build_delayed_sweep(self, party: ChannelParty) -> Transaction:
        """Closer sweeps its own delayed output; valid csv_delay blocks after
        the commitment confirmed, parked in the mempool until then."""
        if self.phase not in (ChannelPhase.UNILATERAL_CLOSED, ChannelPhase.BREACHED, ChannelPhase.SETTLED):
            raise StalePhase(self.phase.value)
        side = self.side_of(party)
        if side != self.closed_by:
            raise ChannelError("only the broadcaster has a delayed output")
        out = self._closed_output("delayed")
        fee = self._claim_fee(out.amount)
        skeleton = Transaction(
            inputs=(TxIn(out.outpoint),),
            outputs=(TxOut(out.amount - fee, PayToKey(party.pubkey)),),
        )
        digest = txid(skeleton)
        witness = Witness(
            signatures=(party.keypair.sign(digest),), branch_selector=0
        )
        tx = Transaction(
            inputs=(TxIn(out.outpoint, witness),), outputs=skeleton.outputs
        )
        self.ledger.submit_tx(tx)
        self._emit("delayed-sweep-submitted", by=side, txid=txid(tx).hex())
        return tx

    def build_htlc_claim(
        self, party: ChannelParty, htlc_id: int, preimage: bytes
    ) -> Transaction:
        """HTLC receiver claims an on-chain HTLC output with the preimage."""
        if self.phase not in (ChannelPhase.UNILATERAL_CLOSED, ChannelPhase.BREACHED, ChannelPhase.SETTLED):
            raise StalePhase(self.phase.value)
        out = self._closed_output("htlc", htlc_id)
        h = out.htlc
        if self.side_of(party) == h.offerer_side:
            raise ChannelError("offerer cannot claim; use the refund branch")
        if hash_digest(h.hash_fn, preimage) != h.payment_hash:
            raise BadPreimage(f"htlc {htlc_id}")
        fee = self._claim_fee(out.amount)
        skeleton = Transaction(
            inputs=(TxIn(out.outpoint),),
            outputs=(TxOut(out.amount - fee, PayToKey(party.pubkey)),),
        )
        digest = txid(skeleton)
        witness = Witness(
            signatures=(party.keypair.sign(digest),),
            preimages=(preimage,),
            branch_selector=0,
        )
        tx = Transaction(
            inputs=(TxIn(out.outpoint, witness),), outputs=skeleton.outputs
        )
        self.ledger.submit_tx(tx)
        self._emit("htlc-claim-submitted", htlc_id=htlc_id, txid=txid(tx).hex())
        return tx

    def build_htlc_refund(self, party: ChannelParty, htlc_id: int) -> Transaction:
        """HTLC offerer takes the refund branch; parked until expiry."""
        if self.phase not in (ChannelPhase.UNILATERAL_CLOSED, ChannelPhase.BREACHED, ChannelPhase.SETTLED):
            raise StalePhase(self.phase.value)
        out = self._closed_output("htlc", htlc_id)
        h = out.htlc
        if self.side_of(party) != h.offerer_side:
            raise ChannelError("only the offerer can refund")
        fee = self._claim_fee(out.amount)
        skeleton = Transaction(
            inputs=(TxIn(out.outpoint),),
            outputs=(TxOut(out.amount - fee, PayToKey(party.pubkey)),),
        )
        digest = txid(skeleton)
        witness = Witness(
            signatures=(party.keypair.sign(digest),), branch_selector=0
        )
        tx = Transaction(
            inputs=(TxIn(out.outpoint, witness),), outputs=skeleton.outputs
        )
        self.ledger.submit_tx(tx)
        self._emit("htlc-refund-submitted", htlc_id=htlc_id, txid=txid(tx).hex())
        return tx

    def punish_breach(self, honest_party: ChannelParty) -> Transaction:
        """Claim every revocable output of the cheater's stale commitment
        (their delayed balance plus all HTLC outputs) in one justice tx."""
        if self.phase is not ChannelPhase.BREACHED:
            if (
                self.phase is ChannelPhase.SETTLED
                and self.closed_commitment is not None
                and self.closed_commitment < self.state.commitment_number
            ):
                raise WindowExpired("revocable outputs already swept")
            raise StalePhase(self.phase.value)
        side = self.side_of(honest_party)
        if side == self.closed_by:
            raise ChannelError("the cheater cannot punish itself")
        n = self.closed_commitment
        key = self.revocation_key(self.closed_by, n)
        targets = [
            o
            for o in self.closed_outputs
            if o.kind in ("delayed", "htlc") and o.outpoint in self._unresolved
        ]
        if not targets:
            raise WindowExpired("revocable outputs already swept")
        total = sum(o.amount for o in targets)
        fee = self._claim_fee(total)
        skeleton = Transaction(
            inputs=tuple(TxIn(o.outpoint) for o in targets),
            outputs=(TxOut(total - fee, PayToKey(honest_party.pubkey)),),
        )
        digest = txid(skeleton)
        witness = Witness(
            signatures=(honest_party.keypair.sign(digest),),
            preimages=(key,),
            branch_selector=1,
        )
        tx = Transaction(
            inputs=tuple(TxIn(o.outpoint, witness) for o in targets),
            outputs=skeleton.outputs,
        )
        self.ledger.submit_tx(tx)
        self._emit("justice-submitted", against=self.closed_by, txid=txid(tx).hex())
        return tx
