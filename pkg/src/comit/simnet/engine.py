"""Deterministic discrete-event execution of scenario files.

Time is a single global tick counter. Each chain mines one block every
`mining_interval` ticks; every protocol message (HTLC offer, fulfill, fail)
takes one tick to cross a channel. Events are processed in (tick, insertion
order), actors are visited in sorted name order, chains in sorted id order,
so a scenario plus its seed pins the entire run.

Actors follow the protocol honestly unless a fault says otherwise:

- crash:             offline for a window; events that need the actor wait
                     for recovery, and it rescans chains when it returns.
- refuse-forward:    declines to forward payments during the window (fails
                     them back cooperatively).
- stall-secret:      refuses every cooperative channel update during the
                     window, forcing counterparties on-chain.
- drop-gossip:       neither sends nor merges adverts during the window.
- broadcast-revoked: broadcasts the revoked commitment that pays it best.

Honest actors protect themselves without any global coordination: an HTLC
receiver that knows the preimage force-closes when expiry is near, an offerer
whose HTLC is still pending near expiry force-closes to refund on-chain, and
a party detecting a revoked broadcast punishes it immediately. Timelocked
sweeps and refunds are submitted only once mature so they can never squat on
a contested outpoint ahead of a justice transaction.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field
from typing import Optional

from ..chainlab import (
    ChainParams,
    HashFnId,
    KeyPair,
    Ledger,
    Transaction,
    TxRejected,
    txid,
)
from ..channels import (
    Channel,
    ChannelError,
    ChannelParty,
    ChannelPhase,
    open_channel,
)
from ..crp import (
    ChannelEndpoint,
    ChannelGraph,
    Edge,
    GossipState,
    NoRouteFound,
    NodeKey,
    RateQuote,
    find_route,
    make_advert,
    onion_peel,
)
from ..crp.onion import OnionError
from ..crp import OnionPacket
from ..swap import (
    ForwardRejected,
    Invoice,
    PaymentAttempt,
    RouteMismatch,
    TimelockPolicy,
    check_delivery,
    check_forward,
    make_invoice,
    prepare_attempt,
)
from .scenario import PaymentSpec, Scenario

# An HTLC this close to expiry (in blocks) goes on-chain.
URGENT_BLOCKS = 2

POLICY = TimelockPolicy()


def derived_rng(seed: int, *parts) -> random.Random:
    """Independent stream for a labelled purpose; stable under unrelated
    scenario edits because the label, not draw order, selects the stream."""
    material = "/".join([str(seed), *map(str, parts)]).encode()
    return random.Random(int.from_bytes(hashlib.sha256(material).digest(), "big"))


@dataclass
class ActorState:
    name: str
    kind: str
    node_key: NodeKey
    gossip: GossipState
    wallet: dict[str, KeyPair] = field(default_factory=dict)  # chain -> key
    secrets: dict[bytes, bytes] = field(default_factory=dict)
    invoices: dict[bytes, Invoice] = field(default_factory=dict)
    scan: dict[str, int] = field(default_factory=dict)  # chain -> scanned height
    settled_in: dict[str, int] = field(default_factory=dict)
    settled_out: dict[str, int] = field(default_factory=dict)
    fees: dict[str, int] = field(default_factory=dict)  # asset -> fees authorized
    crash_windows: list[tuple[int, int]] = field(default_factory=list)
    invoice_rng: Optional[random.Random] = None

    def bump(self, counter: dict[str, int], asset: str, amount: int) -> None:
        counter[asset] = counter.get(asset, 0) + amount


@dataclass
class ChanRt:
    idx: int
    chain_id: str
    names: tuple[str, str]  # (party_a actor, party_b actor)
    channel: Channel
    parties: dict[str, ChannelParty]
    spent: set = field(default_factory=set)  # outpoints already targeted


@dataclass
class HopLive:
    chan: ChanRt
    htlc_id: int
    amount: int
    expiry: int
    offerer: str
    receiver: str
    asset: str
    chain_id: str
    resolved: str = ""  # fulfilled|failed|claimed|refunded|justice
    scheduled: bool = False


@dataclass
class PayRt:
    idx: int
    spec: PaymentSpec
    status: str = "pending"
    reason: str = ""
    fail_reason: str = ""
    cost: int = 0
    invoice: Optional[Invoice] = None
    attempt: Optional[PaymentAttempt] = None
    hops: list[HopLive] = field(default_factory=list)
    packet: Optional[OnionPacket] = None
    peeled: dict = field(default_factory=dict)  # hop index -> (payload, next packet)
    started_tick: int = -1
    resolved_tick: int = -1


@dataclass(frozen=True)
class _TxMeta:
    chain_id: str
    kind: str  # funding|commit|coop|sweep|claim|refund|justice
    actor: str
    fee: int
    chan_idx: int = -1
    htlc_id: int = -1
    preimage: bytes = b""
    payment_hash: bytes = b""


class Engine:
    """One scenario run. Construct, call run(), read the report."""

    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.tick = 0
        self._seq = 0
        self.queue: list[tuple[int, int, str, tuple]] = []
        self.violations: list[str] = []
        self.metrics: dict[str, int] = {}
        self.fault_hits: dict[int, int] = {i: 0 for i in range(len(scenario.faults))}
        self.pending_txs: dict[bytes, _TxMeta] = {}
        # public on-chain preimage revelations: chain -> [(height, hash, preimage)]
        self.revealed: dict[str, list[tuple[int, bytes, bytes]]] = {}
        self.gossip_converged_tick = -1
        self._build_world()

    # --- construction -------------------------------------------------------

    def _build_world(self) -> None:
        sc = self.sc
        self.ledgers: dict[str, Ledger] = {}
        self.intervals: dict[str, int] = {}
        self.chain_fns: dict[str, frozenset] = {}
        self.chain_assets: dict[str, str] = {}
        self.actors: dict[str, ActorState] = {}
        self.actor_by_pub: dict[bytes, str] = {}

        for a in sc.actors:
            key_rng = derived_rng(sc.seed, "actor", a.name, "keys")
            node_key = NodeKey.generate(key_rng)
            actor = ActorState(
                name=a.name,
                kind=a.kind,
                node_key=node_key,
                gossip=GossipState(node_key.pubkey),
                invoice_rng=derived_rng(sc.seed, "actor", a.name, "invoices"),
            )
            for c in sc.chains:
                actor.wallet[c.chain_id] = KeyPair.generate(key_rng)
            self.actors[a.name] = actor
            self.actor_by_pub[node_key.pubkey] = a.name

        for c in sc.chains:
            params = ChainParams(
                chain_id=c.chain_id,
                asset_id=c.asset,
                hash_fns=frozenset(c.hash_fns),
                block_interval=c.mining_interval,
                tx_fee=c.tx_fee,
            )
            coins = [
                (self.actors[name].wallet[c.chain_id].pubkey, amount)
                for name, amount in c.genesis
            ]
            self.ledgers[c.chain_id] = Ledger(params, coins)
            self.intervals[c.chain_id] = c.mining_interval
            self.chain_fns[c.chain_id] = frozenset(c.hash_fns)
            self.chain_assets[c.chain_id] = c.asset
            self.revealed[c.chain_id] = []

        self.quote_table: dict[str, dict[tuple[str, str], RateQuote]] = {}
        for q in sc.quotes:
            quote = RateQuote(
                asset_in=q.asset_in,
                asset_out=q.asset_out,
                rate_num=q.rate_num,
                rate_den=q.rate_den,
                base_fee=q.base_fee,
                fee_ppm=q.fee_ppm,
            )
            self.quote_table.setdefault(q.node, {})[(q.asset_in, q.asset_out)] = quote

        self.channels: list[ChanRt] = []
        self.chan_between: dict[tuple[str, str, str], ChanRt] = {}
        for idx, spec in enumerate(sc.channels):
            # Channel parties reuse the actor's per-chain wallet key so that
            # genesis coins fund channels directly and every close output
            # lands back in the wallet; only the revocation seed is fresh
            # per channel.
            pa = ChannelParty(
                keypair=self.actors[spec.party_a].wallet[spec.chain_id],
                revocation_seed=derived_rng(sc.seed, "chan", idx, spec.party_a).randbytes(32),
            )
            pb = ChannelParty(
                keypair=self.actors[spec.party_b].wallet[spec.chain_id],
                revocation_seed=derived_rng(sc.seed, "chan", idx, spec.party_b).randbytes(32),
            )
            ledger = self.ledgers[spec.chain_id]
            channel = open_channel(
                ledger, pa, pb, spec.fund_a, spec.fund_b,
                csv_delay=spec.csv_delay, dust_limit=spec.dust_limit, mine=True,
            )
            rt = ChanRt(
                idx=idx,
                chain_id=spec.chain_id,
                names=(spec.party_a, spec.party_b),
                channel=channel,
                parties={spec.party_a: pa, spec.party_b: pb},
            )
            self.channels.append(rt)
            a, b = sorted((spec.party_a, spec.party_b))
            self.chan_between[(spec.chain_id, a, b)] = rt
            # the funding tx fee is authorized by party_a
            asset = self.chain_assets[spec.chain_id]
            self.actors[spec.party_a].bump(
                self.actors[spec.party_a].fees, asset, ledger.params.tx_fee
            )
        for name in self.actors:
            for cid in self.ledgers:
                self.actors[name].scan[cid] = self.ledgers[cid].height

        self.payments = [PayRt(idx=i, spec=p) for i, p in enumerate(sc.payments)]
        self.hop_by_htlc: dict[tuple[int, int], tuple[int, int]] = {}

    # --- shared machinery -----------------------------------------------------

    def _schedule(self, tick: int, kind: str, *args) -> None:
        heapq.heappush(self.queue, (max(tick, self.tick + 1), self._seq, kind, args))
        self._seq += 1

    def _note(self, metric: str, n: int = 1) -> None:
        self.metrics[metric] = self.metrics.get(metric, 0) + n

    def _hit_faults(self, name: str, kind: str) -> None:
        for i, f in enumerate(self.sc.faults):
            if f.actor == name and f.kind == kind and f.at_tick <= self.tick < f.until_tick:
                self.fault_hits[i] += 1

    def _online(self, name: str, tick: Optional[int] = None) -> bool:
        t = self.tick if tick is None else tick
        return not any(a <= t < b for a, b in self.actors[name].crash_windows)

    def _recovery(self, name: str) -> int:
        t = self.tick
        while not self._online(name, t):
            t = max(b for a, b in self.actors[name].crash_windows if a <= t < b)
        return t

    def _fault_active(self, name: str, kind: str) -> bool:
        return any(
            f.actor == name and f.kind == kind and f.at_tick <= self.tick < f.until_tick
            for f in self.sc.faults
        )

    def _stall_until(self, name: str) -> int:
        return min(
            f.until_tick
            for f in self.sc.faults
            if f.actor == name and f.kind == "stall-secret"
            and f.at_tick <= self.tick < f.until_tick
        )

    def _gate(self, *names: str) -> Optional[int]:
        """Can these actors exchange messages right now?

        None: yes. An int: requeue then (crash recovery). Stalling actors
        are NOT gated here: withholding secrets still leaves them able to
        take HTLCs, forward, fail back, and sign closes."""
        retry = None
        for n in names:
            if not self._online(n):
                self._hit_faults(n, "crash")
                self._note("crash_requeues")
                retry = max(retry or 0, self._recovery(n))
        return retry

    def _settle_gate(self, *names: str) -> Optional[int]:
        """Gate for steps that move a preimage between the two parties.

        Like _gate but also held up by stall-secret windows. -1 means the
        stall outlasts the run; the caller should give up and let the
        on-chain protection path resolve things."""
        retry = self._gate(*names)
        if retry is not None:
            return retry
        for n in names:
            if self._fault_active(n, "stall-secret"):
                self._hit_faults(n, "stall-secret")
                self._note("stall_blocks")
                until = self._stall_until(n)
                if until >= self.sc.max_ticks:
                    return -1
                retry = max(retry or 0, until)
        return retry

    def _chan(self, chain_id: str, x: str, y: str) -> Optional[ChanRt]:
        a, b = sorted((x, y))
        return self.chan_between.get((chain_id, a, b))

    def _heights(self) -> dict[str, int]:
        return {cid: self.ledgers[cid].height for cid in self.ledgers}

    def _track(self, chain_id: str, tx: Transaction, meta_kind: str, actor: str, **extra) -> None:
        led = self.ledgers[chain_id]
        in_val = sum(led.utxo(i.outpoint).amount for i in tx.inputs)
        out_val = sum(o.amount for o in tx.outputs)
        self.pending_txs[txid(tx)] = _TxMeta(
            chain_id=chain_id, kind=meta_kind, actor=actor, fee=in_val - out_val, **extra
        )

    def _finish(self, p: PayRt, status: str, reason: str) -> None:
        if p.status != "pending":
            return
        p.status = status
        p.reason = reason
        p.resolved_tick = self.tick

    # --- run loop ---------------------------------------------------------------

    def run(self) -> None:
        sc = self.sc
        for a in sc.actors:
            for f in sc.faults:
                if f.kind == "crash" and f.actor == a.name:
                    self.actors[a.name].crash_windows.append((f.at_tick, f.until_tick))
        self._bootstrap_gossip()
        for i, p in enumerate(sc.payments):
            self._schedule(p.at_tick, "payment-start", i)
        for i, f in enumerate(sc.faults):
            if f.kind == "broadcast-revoked":
                self._schedule(f.at_tick, "breach", i)
        for i, c in enumerate(sc.closes):
            self._schedule(c.at_tick, "close", i)
        self._check_conservation("setup")

        while self.tick < sc.max_ticks and self._outstanding():
            self.tick += 1
            self._mine()
            self._drain_events()
            self._housekeeping()
            self._gossip_round()
            self._check_conservation(f"tick {self.tick}")
        if self._outstanding():
            self.violations.append(
                f"non-termination: run still active at max_ticks={sc.max_ticks}"
            )
        for p in self.payments:
            if p.status == "pending":
                self.violations.append(f"payment {p.idx} never reached a terminal state")

    def _outstanding(self) -> bool:
        if self.queue or self.pending_txs:
            return True
        if any(p.status == "pending" for p in self.payments):
            return True
        for rt in self.channels:
            phase = rt.channel.phase
            if phase in (ChannelPhase.OPENING, ChannelPhase.COOPERATIVE_CLOSING,
                         ChannelPhase.UNILATERAL_CLOSED, ChannelPhase.BREACHED):
                return True
            if phase is ChannelPhase.OPEN and rt.channel.pending_htlcs:
                return True
        if self.gossip_converged_tick < 0 and self.tick < 3 * len(self.sc.actors) + 3:
            return True
        return False

    # --- gossip ----------------------------------------------------------------

    def _bootstrap_gossip(self) -> None:
        for name in sorted(self.actors):
            actor = self.actors[name]
            if actor.kind != "lp":
                continue
            endpoints = []
            for rt in self.channels:
                if name not in rt.names:
                    continue
                peer = rt.names[0] if rt.names[1] == name else rt.names[1]
                endpoints.append(
                    ChannelEndpoint(
                        chain_id=rt.chain_id,
                        peer=self.actors[peer].node_key.pubkey,
                        capacity=rt.channel.balance_of(rt.parties[name]),
                    )
                )
            quotes = [
                self.quote_table[name][pair]
                for pair in sorted(self.quote_table.get(name, {}))
            ]
            advert = make_advert(actor.node_key, endpoints, quotes, timestamp=0)
            actor.gossip.insert_local(advert)

    def _gossip_round(self) -> None:
        for rt in self.channels:
            a, b = rt.names
            if not (self._online(a) and self._online(b)):
                continue
            skip = False
            for n in (a, b):
                if self._fault_active(n, "drop-gossip"):
                    self._hit_faults(n, "drop-gossip")
                    self._note("gossip_drops")
                    skip = True
            if skip:
                continue
            ga, gb = self.actors[a].gossip, self.actors[b].gossip
            delta = ga.gossip_step(gb.own_pubkey, [])
            back = gb.gossip_step(ga.own_pubkey, delta)
            if back:
                ga.gossip_step(gb.own_pubkey, back)
        if self.gossip_converged_tick < 0:
            origins = {
                a.gossip.own_pubkey
                for a in self.actors.values()
                if a.kind == "lp" and a.gossip.adverts
            }
            if all(
                origins <= set(actor.gossip.adverts)
                for actor in self.actors.values()
            ):
                self.gossip_converged_tick = self.tick

    # --- mining and confirmation tracking ----------------------------------------

    def _mine(self) -> None:
        for cid in sorted(self.ledgers):
            if self.tick % self.intervals[cid] != 0:
                continue
            summary = self.ledgers[cid].mine_blocks(1)[0]
            for rt in self.channels:
                if rt.chain_id == cid:
                    rt.channel.process_block(summary)
            for tx_id in summary.txids:
                meta = self.pending_txs.pop(tx_id, None)
                if meta is not None:
                    self._confirmed(meta, summary.height)

    def _confirmed(self, meta: _TxMeta, height: int) -> None:
        actor = self.actors[meta.actor]
        asset = self.chain_assets[meta.chain_id]
        if meta.fee:
            actor.bump(actor.fees, asset, meta.fee)
        if meta.kind == "claim":
            self.revealed[meta.chain_id].append((height, meta.payment_hash, meta.preimage))
            self._resolve_onchain(meta, "claimed")
        elif meta.kind == "refund":
            self._resolve_onchain(meta, "refunded")
        elif meta.kind == "justice":
            rt = self.channels[meta.chan_idx]
            for (cidx, htlc_id), (pidx, i) in sorted(self.hop_by_htlc.items()):
                if cidx != meta.chan_idx:
                    continue
                hop = self.payments[pidx].hops[i]
                if not hop.resolved:
                    hop.resolved = "justice"
                    if i == 0:
                        self._finish(self.payments[pidx], "refunded", "breach-punished")

    def _resolve_onchain(self, meta: _TxMeta, outcome: str) -> None:
        key = (meta.chan_idx, meta.htlc_id)
        if key not in self.hop_by_htlc:
            return
        pidx, i = self.hop_by_htlc[key]
        p = self.payments[pidx]
        hop = p.hops[i]
        if hop.resolved:
            return
        hop.resolved = outcome
        if outcome == "claimed":
            recv = self.actors[hop.receiver]
            off = self.actors[hop.offerer]
            recv.bump(recv.settled_in, hop.asset, hop.amount)
            off.bump(off.settled_out, hop.asset, hop.amount)
            if i == 0:
                self._finish(p, "settled", "claimed-on-chain")
        else:
            if i == 0:
                self._finish(p, "refunded", p.fail_reason or "expired")

    # --- event handlers -----------------------------------------------------------

    def _drain_events(self) -> None:
        handlers = {
            "payment-start": self._ev_payment_start,
            "hop-offer": self._ev_hop_offer,
            "settle-hop": self._ev_settle_hop,
            "fail-hop": self._ev_fail_hop,
            "close": self._ev_close,
            "breach": self._ev_breach,
        }
        while self.queue and self.queue[0][0] <= self.tick:
            _, _, kind, args = heapq.heappop(self.queue)
            handlers[kind](*args)

    def _default_hash_fn(self, asset: str) -> HashFnId:
        sets = [
            self.chain_fns[cid]
            for cid in sorted(self.chain_fns)
            if self.chain_assets[cid] == asset
        ]
        common = frozenset.intersection(*sets) if sets else frozenset()
        pool = common or frozenset().union(*sets)
        return min(pool, key=lambda f: f.value)

    def _ev_payment_start(self, pidx: int) -> None:
        p = self.payments[pidx]
        spec = p.spec
        sender = self.actors[spec.sender]
        recipient = self.actors[spec.recipient]
        for name in (spec.sender, spec.recipient):
            if not self._online(name):
                self._hit_faults(name, "crash")
                self._schedule(self._recovery(name), "payment-start", pidx)
                return
        p.started_tick = self.tick

        fn = spec.hash_fn or self._default_hash_fn(spec.asset)
        invoice, secret = make_invoice(
            recipient.invoice_rng, recipient.node_key.pubkey, spec.amount, spec.asset, fn
        )
        recipient.secrets[invoice.payment_hash] = secret
        recipient.invoices[invoice.payment_hash] = invoice
        p.invoice = invoice

        graph = ChannelGraph.from_adverts(
            sender.gossip.advert_set(), self.chain_fns, self.chain_assets
        )
        for rt in self.channels:
            if spec.sender not in rt.names or rt.channel.phase is not ChannelPhase.OPEN:
                continue
            peer = rt.names[0] if rt.names[1] == spec.sender else rt.names[1]
            graph.add_edge(
                Edge(
                    src=sender.node_key.pubkey,
                    dst=self.actors[peer].node_key.pubkey,
                    chain_id=rt.chain_id,
                    asset=self.chain_assets[rt.chain_id],
                    capacity=rt.channel.balance_of(rt.parties[spec.sender]),
                )
            )
        try:
            route = find_route(
                graph,
                sender.node_key.pubkey,
                recipient.node_key.pubkey,
                spec.amount,
                spec.asset,
                required_hash_fn=fn,
            )
        except NoRouteFound:
            self._finish(p, "refunded", "no-route")
            return

        first_hop_actor = self.actor_by_pub[route.hops[0].node]
        if sender.kind == "user" and self.actors[first_hop_actor].kind != "lp":
            self.violations.append(
                f"role-constraint: payment {pidx} from user {spec.sender!r} "
                f"first hop is {first_hop_actor!r}, not a liquidity provider"
            )

        try:
            attempt = prepare_attempt(
                invoice, route, self._heights(), derived_rng(self.sc.seed, "payment", pidx)
            )
        except RouteMismatch as exc:
            self._finish(p, "refunded", f"bad-route: {exc}")
            return
        p.attempt = attempt
        p.cost = attempt.cost

        rt = self._chan(route.hops[0].chain_id, spec.sender, first_hop_actor)
        if rt is None or rt.channel.phase is not ChannelPhase.OPEN:
            self._finish(p, "refunded", "no-channel")
            return
        gate = self._gate(spec.sender, first_hop_actor)
        if gate is not None:
            self._finish(p, "refunded", "peer-unavailable")
            return
        try:
            htlc_id = rt.channel.add_htlc(
                rt.parties[spec.sender],
                attempt.cost,
                invoice.hash_fn,
                invoice.payment_hash,
                attempt.expiries[0],
            )
        except (ChannelError, ValueError) as exc:
            self._finish(p, "refunded", f"first-hop: {exc}")
            return
        hop = HopLive(
            chan=rt,
            htlc_id=htlc_id,
            amount=attempt.cost,
            expiry=attempt.expiries[0],
            offerer=spec.sender,
            receiver=first_hop_actor,
            asset=route.hops[0].asset,
            chain_id=route.hops[0].chain_id,
        )
        p.hops.append(hop)
        self.hop_by_htlc[(rt.idx, htlc_id)] = (pidx, 0)
        p.packet = attempt.packet
        self._schedule(self.tick + 1, "hop-offer", pidx, 0)

    def _ev_hop_offer(self, pidx: int, i: int) -> None:
        p = self.payments[pidx]
        if p.status != "pending" or p.hops[i].resolved:
            return
        hop = p.hops[i]
        if hop.chan.channel.phase is not ChannelPhase.OPEN:
            return  # on-chain resolution has taken over
        if not self._online(hop.receiver):
            self._hit_faults(hop.receiver, "crash")
            self._schedule(self._recovery(hop.receiver), "hop-offer", pidx, i)
            return
        recv = self.actors[hop.receiver]

        if i not in p.peeled:
            try:
                p.peeled[i] = onion_peel(p.packet, recv.node_key)
            except OnionError:
                self._start_fail(p, i, "bad-onion")
                return
        payload, next_packet = p.peeled[i]
        height = self.ledgers[hop.chain_id].height
        htlc = hop.chan.channel.htlc(hop.htlc_id)

        if payload.next_node is None:
            invoice = recv.invoices.get(htlc.payment_hash)
            secret = recv.secrets.get(htlc.payment_hash)
            if invoice is None or secret is None:
                self._start_fail(p, i, "unknown-payment")
                return
            try:
                check_delivery(payload, invoice, hop.amount, hop.expiry, height)
            except ForwardRejected as exc:
                self._start_fail(p, i, exc.reason)
                return
            hop.scheduled = True
            self._schedule(self.tick + 1, "settle-hop", pidx, i)
            return

        # forward
        if self._fault_active(hop.receiver, "refuse-forward"):
            self._hit_faults(hop.receiver, "refuse-forward")
            self._note("refusals")
            self._start_fail(p, i, "refused-forward")
            return
        next_name = self.actor_by_pub.get(payload.next_node)
        if next_name is None:
            self._start_fail(p, i, "unknown-next-node")
            return
        quote = self.quote_table.get(hop.receiver, {}).get((hop.asset, payload.asset))
        if quote is None:
            self._start_fail(p, i, "no-quote")
            return
        try:
            check_forward(payload, hop.amount, hop.expiry, height, quote, POLICY)
        except ForwardRejected as exc:
            self._start_fail(p, i, exc.reason)
            return
        rt = self._chan(payload.chain_id, hop.receiver, next_name)
        if rt is None or rt.channel.phase is not ChannelPhase.OPEN:
            self._start_fail(p, i, "no-channel")
            return
        gate = self._gate(next_name)
        if gate is not None:
            self._start_fail(p, i, "peer-unavailable")
            return
        # one block of propagation allowance: the next node inspects this
        # HTLC a tick later, after its chain may have mined once more
        out_expiry = self.ledgers[payload.chain_id].height + payload.expiry_delta + 1
        try:
            htlc_id = rt.channel.add_htlc(
                rt.parties[hop.receiver],
                payload.amount_to_forward,
                htlc.hash_fn,
                htlc.payment_hash,
                out_expiry,
            )
        except (ChannelError, ValueError) as exc:
            self._start_fail(p, i, f"forward: {exc}")
            return
        nxt = HopLive(
            chan=rt,
            htlc_id=htlc_id,
            amount=payload.amount_to_forward,
            expiry=out_expiry,
            offerer=hop.receiver,
            receiver=next_name,
            asset=payload.asset,
            chain_id=payload.chain_id,
        )
        p.hops.append(nxt)
        self.hop_by_htlc[(rt.idx, htlc_id)] = (pidx, i + 1)
        p.packet = next_packet
        self._schedule(self.tick + 1, "hop-offer", pidx, i + 1)

    def _start_fail(self, p: PayRt, i: int, reason: str) -> None:
        p.fail_reason = p.fail_reason or reason
        p.hops[i].scheduled = True
        self._schedule(self.tick + 1, "fail-hop", p.idx, i)

    def _ev_settle_hop(self, pidx: int, i: int) -> None:
        p = self.payments[pidx]
        hop = p.hops[i]
        hop.scheduled = False
        if hop.resolved:
            return
        if hop.chan.channel.phase is not ChannelPhase.OPEN:
            return
        recv = self.actors[hop.receiver]
        try:
            htlc = hop.chan.channel.htlc(hop.htlc_id)
        except ChannelError:
            return
        preimage = recv.secrets.get(htlc.payment_hash)
        if preimage is None:
            return
        gate = self._settle_gate(hop.receiver, hop.offerer)
        if gate is not None:
            if gate >= 0:
                hop.scheduled = True
                self._schedule(gate, "settle-hop", pidx, i)
            return
        try:
            hop.chan.channel.fulfill_htlc(hop.htlc_id, preimage)
        except ChannelError:
            return
        hop.resolved = "fulfilled"
        off = self.actors[hop.offerer]
        recv.bump(recv.settled_in, hop.asset, hop.amount)
        off.bump(off.settled_out, hop.asset, hop.amount)
        off.secrets[p.invoice.payment_hash] = preimage
        if i == 0:
            self._finish(p, "settled", "fulfilled")

    def _ev_fail_hop(self, pidx: int, i: int) -> None:
        p = self.payments[pidx]
        hop = p.hops[i]
        hop.scheduled = False
        if hop.resolved:
            return
        if hop.chan.channel.phase is not ChannelPhase.OPEN:
            return
        gate = self._gate(hop.receiver, hop.offerer)
        if gate is not None:
            if gate >= 0:
                hop.scheduled = True
                self._schedule(gate, "fail-hop", pidx, i)
            return
        try:
            hop.chan.channel.fail_htlc(hop.htlc_id)
        except ChannelError:
            return
        hop.resolved = "failed"
        if i == 0:
            self._finish(p, "refunded", p.fail_reason or "failed")

    def _ev_close(self, cidx: int) -> None:
        spec = self.sc.closes[cidx]
        rt = self.channels[spec.channel]
        if rt.channel.phase is not ChannelPhase.OPEN:
            return
        a, b = rt.names
        gate = self._gate(a, b)
        if gate is not None:
            if gate >= 0:
                self._schedule(gate, "close", cidx)
            return
        if rt.channel.pending_htlcs:
            self._schedule(self.tick + 1, "close", cidx)
            return
        tx = rt.channel.cooperative_close()
        self._track(rt.chain_id, tx, "coop", a)

    def _ev_breach(self, fidx: int) -> None:
        fault = self.sc.faults[fidx]
        cheater = fault.actor
        if not self._online(cheater):
            self._schedule(self._recovery(cheater), "breach", fidx)
            return
        candidates = (
            [self.channels[fault.channel]]
            if fault.channel is not None
            else [rt for rt in self.channels if cheater in rt.names]
        )
        best: Optional[tuple[int, ChanRt, int]] = None
        for rt in candidates:
            if rt.channel.phase is not ChannelPhase.OPEN:
                continue
            side = rt.channel.side_of(rt.parties[cheater])
            current = rt.channel.balance_of(rt.parties[cheater])
            for n, state in sorted(rt.channel.recorded_states().items()):
                if n >= rt.channel.state.commitment_number:
                    continue
                bal = state.balance_a if side == "a" else state.balance_b
                if bal > current and (best is None or bal - current > best[0]):
                    best = (bal - current, rt, n)
        if best is None:
            self._note("breach_noops")
            return
        _, rt, n = best
        self.fault_hits[fidx] += 1
        self._note("breach_broadcasts")
        tx = rt.channel.unilateral_close(rt.parties[cheater], commitment_number=n)
        self._track(rt.chain_id, tx, "commit", cheater)

    # --- per-tick housekeeping -----------------------------------------------------

    def _housekeeping(self) -> None:
        self._learn_from_chains()
        self._cascade()
        self._protect()
        self._sweep_closed()

    def _learn_from_chains(self) -> None:
        for name in sorted(self.actors):
            actor = self.actors[name]
            if not self._online(name):
                continue
            for cid in sorted(self.ledgers):
                height = self.ledgers[cid].height
                for h, payment_hash, preimage in self.revealed[cid]:
                    if actor.scan[cid] < h <= height:
                        actor.secrets.setdefault(payment_hash, preimage)
                actor.scan[cid] = height

    def _cascade(self) -> None:
        """Propagate hop resolutions upstream, whatever mix of cooperative
        and on-chain steps produced them."""
        for p in self.payments:
            if p.status != "pending" and not any(
                not h.resolved for h in p.hops
            ):
                continue
            for i in range(len(p.hops) - 1):
                hop, down = p.hops[i], p.hops[i + 1]
                if hop.resolved or hop.scheduled or not down.resolved:
                    continue
                if not self._online(hop.receiver):
                    continue
                recv = self.actors[hop.receiver]
                if down.resolved in ("fulfilled", "claimed"):
                    if p.invoice.payment_hash in recv.secrets:
                        hop.scheduled = True
                        self._schedule(self.tick + 1, "settle-hop", p.idx, i)
                else:
                    p.fail_reason = p.fail_reason or "downstream-" + down.resolved
                    hop.scheduled = True
                    self._schedule(self.tick + 1, "fail-hop", p.idx, i)

    def _protect(self) -> None:
        """Force-close when an HTLC gets too close to expiry to keep waiting
        for cooperation."""
        for name in sorted(self.actors):
            if not self._online(name):
                continue
            actor = self.actors[name]
            for rt in self.channels:
                if name not in rt.names or rt.channel.phase is not ChannelPhase.OPEN:
                    continue
                party = rt.parties[name]
                side = rt.channel.side_of(party)
                close = False
                for h in sorted(rt.channel.pending_htlcs, key=lambda h: h.htlc_id):
                    remaining = h.expiry_height - self.ledgers[rt.chain_id].height
                    if remaining > URGENT_BLOCKS:
                        continue
                    if h.offerer_side == side:
                        close = True  # refund on-chain once expired
                    elif h.payment_hash in actor.secrets:
                        close = True  # claim on-chain before expiry
                if close:
                    try:
                        tx = rt.channel.unilateral_close(party)
                    except (ChannelError, TxRejected, ValueError):
                        continue
                    self._note("urgent_closes")
                    self._track(rt.chain_id, tx, "commit", name)

    def _sweep_closed(self) -> None:
        for name in sorted(self.actors):
            if not self._online(name):
                continue
            actor = self.actors[name]
            stalling = self._fault_active(name, "stall-secret")
            for rt in self.channels:
                if name not in rt.names:
                    continue
                ch = rt.channel
                if ch.phase not in (ChannelPhase.UNILATERAL_CLOSED, ChannelPhase.BREACHED):
                    continue
                led = self.ledgers[rt.chain_id]
                party = rt.parties[name]
                side = ch.side_of(party)

                if ch.phase is ChannelPhase.BREACHED and side != ch.closed_by:
                    outs = [
                        o.outpoint
                        for o in ch.closed_outputs
                        if o.kind in ("delayed", "htlc") and led.is_unspent(o.outpoint)
                        and o.outpoint not in rt.spent
                    ]
                    if outs:
                        try:
                            tx = ch.punish_breach(party)
                        except (ChannelError, TxRejected):
                            continue
                        rt.spent.update(outs)
                        self._note("justice_txs")
                        self._track(
                            rt.chain_id, tx, "justice", name, chan_idx=rt.idx
                        )
                    continue

                for out in ch.closed_outputs:
                    if out.outpoint in rt.spent or not led.is_unspent(out.outpoint):
                        continue
                    if out.kind == "delayed":
                        if (
                            side == ch.closed_by
                            and out.owner_side == side
                            and led.height >= ch.closed_height + ch.csv_delay
                        ):
                            try:
                                tx = ch.build_delayed_sweep(party)
                            except (ChannelError, TxRejected):
                                continue
                            rt.spent.add(out.outpoint)
                            self._track(rt.chain_id, tx, "sweep", name)
                    elif out.kind == "htlc":
                        h = out.htlc
                        if h.offerer_side != side and h.payment_hash in actor.secrets:
                            if stalling:
                                self._hit_faults(name, "stall-secret")
                                continue
                            try:
                                tx = ch.build_htlc_claim(
                                    party, h.htlc_id, actor.secrets[h.payment_hash]
                                )
                            except (ChannelError, TxRejected):
                                continue
                            rt.spent.add(out.outpoint)
                            self._note("onchain_claims")
                            self._track(
                                rt.chain_id, tx, "claim", name,
                                chan_idx=rt.idx, htlc_id=h.htlc_id,
                                preimage=actor.secrets[h.payment_hash],
                                payment_hash=h.payment_hash,
                            )
                        elif h.offerer_side == side and led.height >= h.expiry_height:
                            try:
                                tx = ch.build_htlc_refund(party, h.htlc_id)
                            except (ChannelError, TxRejected):
                                continue
                            rt.spent.add(out.outpoint)
                            self._note("onchain_refunds")
                            self._track(
                                rt.chain_id, tx, "refund", name,
                                chan_idx=rt.idx, htlc_id=h.htlc_id,
                            )

    # --- invariants ------------------------------------------------------------------

    def _check_conservation(self, where: str) -> None:
        for cid in sorted(self.ledgers):
            led = self.ledgers[cid]
            if led.total_utxo_value() + led.burned != led.genesis_total:
                self.violations.append(
                    f"conservation: chain {cid!r} at {where}: utxos {led.total_utxo_value()} "
                    f"+ burned {led.burned} != genesis {led.genesis_total}"
                )
            funding_value = 0
            channel_value = 0
            for rt in self.channels:
                if rt.chain_id != cid:
                    continue
                ch = rt.channel
                if not led.is_unspent(ch.funding_outpoint):
                    continue
                st = ch.state
                in_channel = st.balance_a + st.balance_b + sum(h.amount for h in st.htlcs)
                if in_channel != ch.capacity:
                    self.violations.append(
                        f"conservation: channel {rt.idx} at {where}: balances {in_channel} "
                        f"!= capacity {ch.capacity}"
                    )
                funding_value += ch.capacity
                channel_value += in_channel
            onchain = led.total_utxo_value() - funding_value
            if onchain + channel_value + led.burned != led.genesis_total:
                self.violations.append(
                    f"conservation: chain {cid!r} at {where}: on-chain {onchain} + "
                    f"channels {channel_value} + burned {led.burned} != genesis {led.genesis_total}"
                )

    # --- final accounting ---------------------------------------------------------

    def final_balances(self, name: str) -> dict[str, int]:
        """On-chain spendable plus open-channel claims, by asset."""
        actor = self.actors[name]
        totals: dict[str, int] = {}

        def add(asset: str, amount: int) -> None:
            if amount:
                totals[asset] = totals.get(asset, 0) + amount

        for cid in sorted(self.ledgers):
            led = self.ledgers[cid]
            asset = self.chain_assets[cid]
            add(asset, sum(a for _, a in led.spendable_by(actor.wallet[cid].pubkey)))
        for rt in self.channels:
            if name not in rt.names:
                continue
            asset = self.chain_assets[rt.chain_id]
            led = self.ledgers[rt.chain_id]
            if led.is_unspent(rt.channel.funding_outpoint):
                add(asset, rt.channel.balance_of(rt.parties[name]))
                side = rt.channel.side_of(rt.parties[name])
                add(
                    asset,
                    sum(
                        h.amount
                        for h in rt.channel.pending_htlcs
                        if h.offerer_side == side
                    ),
                )
        return totals

    def initial_balances(self, name: str) -> dict[str, int]:
        totals: dict[str, int] = {}
        for c in self.sc.chains:
            for actor, amount in c.genesis:
                if actor == name:
                    totals[c.asset] = totals.get(c.asset, 0) + amount
        return totals


def run_scenario(scenario: Scenario) -> dict:
    """Execute a scenario and build its canonical report."""
    from .report import build_report

    engine = Engine(scenario)
    engine.run()
    return build_report(engine)
