"""End-to-end hash-locked payments over real channels."""

from dataclasses import replace

import pytest

from comit.chainlab import ChainParams, HashFnId, Ledger, hash_digest
from comit.channels import ChannelParty, open_channel
from comit.crp import ChannelGraph, Edge, NodeKey, RateQuote, find_route
from comit.swap import (
    ForwardRejected,
    HopChannel,
    RouteMismatch,
    TimelockPolicy,
    check_delivery,
    check_forward,
    dispatch_payment,
    make_invoice,
    prepare_attempt,
    stack_expiries,
)

S256 = HashFnId.SHA256
S3 = HashFnId.SHA3_256


class Line:
    """A path of nodes joined by funded channels, one per hop.

    hops: list of (chain_id, asset, quote-for-receiving-node-or-None).
    Node 0 is the sender; node i receives hop i.
    """

    def __init__(self, rng, hops, fund=300_000, fns=frozenset({S256, S3})):
        self.rng = rng
        self.node_keys = [NodeKey.generate(rng) for _ in range(len(hops) + 1)]
        self.ids = [k.pubkey for k in self.node_keys]
        parties = [(ChannelParty.generate(rng), ChannelParty.generate(rng)) for _ in hops]
        genesis = {}
        chain_asset = {}
        for (chain_id, asset, _), (off, recv) in zip(hops, parties):
            chain_asset.setdefault(chain_id, asset)
            genesis.setdefault(chain_id, []).extend(
                [(off.pubkey, 10**9), (recv.pubkey, 10**9)]
            )
        self.ledgers = {
            chain_id: Ledger(ChainParams(chain_id, chain_asset[chain_id], fns), coins)
            for chain_id, coins in genesis.items()
        }
        self.hop_channels = []
        self.quotes = {}
        edges = []
        for i, ((chain_id, asset, quote), (off, recv)) in enumerate(zip(hops, parties)):
            ch = open_channel(self.ledgers[chain_id], off, recv, fund, fund)
            self.hop_channels.append(HopChannel(ch, off, recv))
            edges.append(Edge(self.ids[i], self.ids[i + 1], chain_id, asset, fund))
            if quote is not None:
                self.quotes.setdefault(self.ids[i + 1], {})[
                    (quote.asset_in, quote.asset_out)
                ] = quote
        chain_fns = {cid: led.params.hash_fns for cid, led in self.ledgers.items()}
        self.graph = ChannelGraph(chain_fns, edges)
        for node, table in self.quotes.items():
            for q in table.values():
                self.graph.add_quote(node, q)

    @property
    def sender(self):
        return self.ids[0]

    @property
    def recipient(self):
        return self.ids[-1]

    def heights(self):
        return {cid: led.height for cid, led in self.ledgers.items()}

    def keymap(self):
        return {k.pubkey: k for k in self.node_keys}

    def pay(self, invoice, secret, route=None, gate=None):
        route = route or find_route(
            self.graph,
            self.sender,
            self.recipient,
            invoice.amount,
            invoice.asset,
            required_hash_fn=invoice.hash_fn,
        )
        attempt = prepare_attempt(invoice, route, self.heights(), self.rng)
        result = dispatch_payment(
            attempt,
            self.hop_channels,
            self.keymap(),
            self.quotes,
            {invoice.payment_hash: secret},
            forward_gate=gate,
        )
        return attempt, result

    def balances(self):
        return [
            (hc.channel.balance_of(hc.offerer), hc.channel.balance_of(hc.receiver))
            for hc in self.hop_channels
        ]


def flat(base_fee):
    return RateQuote("coin", "coin", 1, 1, base_fee=base_fee)


def test_make_invoice_binds_secret(rng):
    recipient = NodeKey.generate(rng).pubkey
    invoice, secret = make_invoice(rng, recipient, 5000, "coin", S3)
    assert invoice.payment_hash == hash_digest(S3, secret)
    assert invoice.payment_hash != hash_digest(S256, secret)


def test_stack_expiries_uses_each_hops_chain_height(rng):
    line = Line(
        rng,
        [
            ("x", "xc", RateQuote("xc", "yc", 1, 1)),
            ("y", "yc", RateQuote("yc", "zc", 1, 1)),
            ("z", "zc", None),
        ],
    )
    route = find_route(line.graph, line.sender, line.recipient, 100, "zc")
    assert [h.expiry_delta for h in route.hops] == [18, 12, 6]
    # each hop carries a pad of (index + 1) blocks of propagation allowance
    assert stack_expiries(route, {"x": 100, "y": 100, "z": 100}) == [119, 114, 109]
    assert stack_expiries(route, {"x": 40, "y": 90, "z": 100}) == [59, 104, 109]
    with pytest.raises(RouteMismatch):
        stack_expiries(route, {"x": 100, "y": 100})


def test_single_hop_settles(rng):
    line = Line(rng, [("main", "coin", None)])
    invoice, secret = make_invoice(rng, line.recipient, 10_000, "coin", S256)
    before = line.balances()
    attempt, result = line.pay(invoice, secret)
    assert result.settled and result.preimage == secret
    assert result.fees_paid == 0
    after = line.balances()
    assert after[0][0] == before[0][0] - 10_000
    assert after[0][1] == before[0][1] + 10_000


def test_three_hops_pay_each_forwarder_its_fee(rng):
    line = Line(
        rng,
        [("main", "coin", flat(5)), ("main", "coin", flat(5)), ("main", "coin", None)],
    )
    invoice, secret = make_invoice(rng, line.recipient, 1000, "coin", S256)
    before = line.balances()
    attempt, result = line.pay(invoice, secret)
    assert result.settled
    assert [e.amount for e in result.executions] == [1010, 1005, 1000]
    assert result.fees_paid == 10
    after = line.balances()
    deltas = [(a2 - a1, b2 - b1) for (a1, b1), (a2, b2) in zip(before, after)]
    assert deltas == [(-1010, 1010), (-1005, 1005), (-1000, 1000)]
    for (a, b), hc in zip(after, line.hop_channels):
        assert a + b == hc.channel.capacity


def test_cross_chain_conversion_settles(rng):
    quote = RateQuote("xcoin", "ycoin", 10, 1, fee_ppm=10_000)
    line = Line(rng, [("x", "xcoin", quote), ("y", "ycoin", None)])
    invoice, secret = make_invoice(rng, line.recipient, 10_000, "ycoin", S256)
    before = line.balances()
    attempt, result = line.pay(invoice, secret)
    assert result.settled
    assert [e.amount for e in result.executions] == [1010, 10_000]
    assert [e.chain_id for e in result.executions] == ["x", "y"]
    after = line.balances()
    # the LP banks 1010 xcoin on one chain and parts with 10000 ycoin on the other
    assert after[0][1] - before[0][1] == 1010
    assert after[1][0] - before[1][0] == -10_000
    assert result.fees_paid == attempt.cost - 10_000


def test_refusal_unwinds_every_hop(rng):
    line = Line(
        rng,
        [("main", "coin", flat(5)), ("main", "coin", flat(5)), ("main", "coin", None)],
    )
    invoice, secret = make_invoice(rng, line.recipient, 1000, "coin", S256)
    before = line.balances()
    refuser = line.ids[2]

    def gate(node, payload):
        return "refused" if node == refuser else None

    attempt, result = line.pay(invoice, secret, gate=gate)
    assert not result.settled
    assert result.failed_at == refuser
    assert result.reason == "refused"
    assert line.balances() == before
    assert all(hc.channel.pending_htlcs == () for hc in line.hop_channels)


def test_missing_secret_unwinds(rng):
    line = Line(rng, [("main", "coin", None)])
    invoice, _ = make_invoice(rng, line.recipient, 500, "coin", S256)
    before = line.balances()
    route = find_route(line.graph, line.sender, line.recipient, 500, "coin")
    attempt = prepare_attempt(invoice, route, line.heights(), line.rng)
    result = dispatch_payment(attempt, line.hop_channels, line.keymap(), line.quotes, {})
    assert not result.settled and result.reason == "unknown-payment"
    assert line.balances() == before


def test_requoted_forwarder_rejects(rng):
    quote = RateQuote("xcoin", "ycoin", 10, 1, fee_ppm=10_000)
    line = Line(rng, [("x", "xcoin", quote), ("y", "ycoin", None)])
    invoice, secret = make_invoice(rng, line.recipient, 10_000, "ycoin", S256)
    route = find_route(line.graph, line.sender, line.recipient, 10_000, "ycoin")
    # the LP re-prices after the route was built: stale pricing is refused
    line.quotes[line.ids[1]][("xcoin", "ycoin")] = RateQuote(
        "xcoin", "ycoin", 10, 1, fee_ppm=20_000
    )
    before = line.balances()
    attempt, result = line.pay(invoice, secret, route=route)
    assert not result.settled and result.reason == "quote-mismatch"
    assert line.balances() == before


def test_stale_expiry_headroom_rejected(rng):
    quote = RateQuote("xcoin", "ycoin", 10, 1)
    line = Line(rng, [("x", "xcoin", quote), ("y", "ycoin", None)])
    invoice, secret = make_invoice(rng, line.recipient, 1000, "ycoin", S256)
    route = find_route(line.graph, line.sender, line.recipient, 1000, "ycoin")
    attempt = prepare_attempt(invoice, route, line.heights(), line.rng)
    # expiries age past the propagation pad while the attempt waits
    line.ledgers["x"].mine_blocks(2)
    result = dispatch_payment(
        attempt,
        line.hop_channels,
        line.keymap(),
        line.quotes,
        {invoice.payment_hash: secret},
    )
    assert not result.settled
    assert result.reason == "expiry-too-tight"
    assert result.failed_at == line.ids[1]


def test_prepare_rejects_wrong_route(rng):
    line = Line(rng, [("main", "coin", None)])
    other = NodeKey.generate(rng).pubkey
    invoice, _ = make_invoice(rng, other, 500, "coin", S256)
    route = find_route(line.graph, line.sender, line.recipient, 500, "coin")
    with pytest.raises(RouteMismatch):
        prepare_attempt(invoice, route, line.heights(), line.rng)
    invoice2, _ = make_invoice(rng, line.recipient, 500, "btc", S256)
    with pytest.raises(RouteMismatch):
        prepare_attempt(invoice2, route, line.heights(), line.rng)


def test_recipient_self_quote_margin_lands_with_recipient(rng):
    line = Line(rng, [("main", "coin", flat(3)), ("main", "coin", None)])
    selfq = flat(7)
    line.graph.add_quote(line.recipient, selfq)
    invoice, secret = make_invoice(rng, line.recipient, 1000, "coin", S256)
    before = line.balances()
    attempt, result = line.pay(invoice, secret)
    assert result.settled
    assert [e.amount for e in result.executions] == [1010, 1007]
    after = line.balances()
    assert after[1][1] - before[1][1] == 1007  # invoice amount plus own margin
    assert result.fees_paid == 10


def test_random_lines_settle_and_conserve(rng):
    for trial in range(6):
        hop_count = rng.randint(1, 4)
        hops = [
            ("main", "coin", flat(rng.randint(0, 9)) if i < hop_count - 1 else None)
            for i in range(hop_count)
        ]
        line = Line(rng, hops)
        amount = rng.randint(100, 50_000)
        invoice, secret = make_invoice(rng, line.recipient, amount, "coin", S256)
        before = line.balances()
        attempt, result = line.pay(invoice, secret)
        assert result.settled, (trial, result.reason)
        after = line.balances()
        for (a1, b1), (a2, b2) in zip(before, after):
            assert a1 + b1 == a2 + b2
        # sender pays exactly the quoted cost, the payee gains the amount
        assert before[0][0] - after[0][0] == attempt.cost
        assert after[-1][1] - before[-1][1] == amount


def test_check_helpers_reject_misuse(rng):
    line = Line(rng, [("main", "coin", None)])
    invoice, secret = make_invoice(rng, line.recipient, 1000, "coin", S256)
    route = find_route(line.graph, line.sender, line.recipient, 1000, "coin")
    attempt = prepare_attempt(invoice, route, line.heights(), line.rng)
    terminal = attempt.payloads[-1]
    policy = TimelockPolicy()
    with pytest.raises(ForwardRejected, match="not-a-forward"):
        check_forward(terminal, 1000, 50, 1, RateQuote.identity("coin"), policy)
    with pytest.raises(ForwardRejected, match="amount-mismatch"):
        check_delivery(terminal, replace(invoice, amount=2000), 2000, 50, 1)
    with pytest.raises(ForwardRejected, match="wrong-asset"):
        check_delivery(terminal, replace(invoice, asset="btc"), 1000, 50, 1)
    with pytest.raises(ForwardRejected, match="insufficient-margin"):
        check_delivery(terminal, invoice, 999, 50, 1)
    with pytest.raises(ForwardRejected, match="expiry-too-tight"):
        check_delivery(terminal, invoice, 1000, 5, 9)
    # a non-terminal payload must not be accepted as delivery
    with pytest.raises(ForwardRejected, match="not-terminal"):
        nonterminal = replace(terminal, next_node=b"\x07" * 32)
        check_delivery(nonterminal, invoice, 1000, 50, 1)
