"""Declarative scenario files for the simulation harness.

A scenario is a JSON document that fully determines a run: the chains and
their genesis allocations, the actors and their roles, the channels funded
between them, the conversion quotes liquidity providers advertise, the
payments to attempt, the faults to inject, and any scheduled cooperative
closes. Together with the seed it pins every random draw, so two runs of the
same scenario produce byte-identical reports.

`validate_scenario` never raises on bad input; it returns field-precise
diagnostics so the CLI can show everything wrong with a file at once. Each
diagnostic is prefixed with its class: `parse-error` (not JSON / wrong shape),
`unknown-reference` (a name that resolves to nothing), or
`constraint-violation` (a value outside its legal range).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Any, Optional, Union

from ..chainlab import HashFnId

ACTOR_KINDS = ("business", "lp", "user")
FAULT_KINDS = (
    "broadcast-revoked",
    "crash",
    "drop-gossip",
    "refuse-forward",
    "stall-secret",
)
WINDOW_FAULTS = ("drop-gossip", "refuse-forward", "stall-secret")

# until_tick for window faults that never end; far beyond any max_ticks.
FAR_FUTURE = 2**31

MAX_SEED = 2**64 - 1
MAX_ID_BYTES = 31  # chain and asset ids must fit the onion payload fields
DEFAULT_MAX_TICKS = 500


@dataclass(frozen=True)
class ChainSpec:
    chain_id: str
    asset: str
    hash_fns: tuple[HashFnId, ...]
    mining_interval: int
    tx_fee: int
    genesis: tuple[tuple[str, int], ...]  # (actor, amount), sorted by actor


@dataclass(frozen=True)
class ActorSpec:
    name: str
    kind: str  # "user" | "lp" | "business"


@dataclass(frozen=True)
class ChannelSpec:
    chain_id: str
    party_a: str
    party_b: str
    fund_a: int
    fund_b: int
    csv_delay: int
    dust_limit: int


@dataclass(frozen=True)
class QuoteSpec:
    node: str
    asset_in: str
    asset_out: str
    rate_num: int
    rate_den: int
    base_fee: int
    fee_ppm: int


@dataclass(frozen=True)
class PaymentSpec:
    at_tick: int
    sender: str
    recipient: str
    amount: int
    asset: str
    hash_fn: Optional[HashFnId]


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    actor: str
    at_tick: int
    until_tick: int  # exclusive; crash stores at_tick + duration here too
    duration: int  # crash only, 0 otherwise
    channel: Optional[int]  # broadcast-revoked only


@dataclass(frozen=True)
class CloseSpec:
    at_tick: int
    channel: int


@dataclass(frozen=True)
class Scenario:
    seed: int
    max_ticks: int
    chains: tuple[ChainSpec, ...]
    actors: tuple[ActorSpec, ...]
    channels: tuple[ChannelSpec, ...]
    quotes: tuple[QuoteSpec, ...]
    payments: tuple[PaymentSpec, ...]
    faults: tuple[FaultSpec, ...]
    closes: tuple[CloseSpec, ...]

    def chain(self, chain_id: str) -> ChainSpec:
        for c in self.chains:
            if c.chain_id == chain_id:
                return c
        raise KeyError(chain_id)

    def actor(self, name: str) -> ActorSpec:
        for a in self.actors:
            if a.name == name:
                return a
        raise KeyError(name)

    def canonical(self) -> dict:
        """A plain-data form that pins every field, for hashing and logging."""
        return {
            "seed": self.seed,
            "max_ticks": self.max_ticks,
            "chains": [
                {
                    "chain_id": c.chain_id,
                    "asset": c.asset,
                    "hash_fns": [f.value for f in c.hash_fns],
                    "mining_interval": c.mining_interval,
                    "tx_fee": c.tx_fee,
                    "genesis": {actor: amt for actor, amt in c.genesis},
                }
                for c in self.chains
            ],
            "actors": [{"name": a.name, "kind": a.kind} for a in self.actors],
            "channels": [
                {
                    "chain_id": ch.chain_id,
                    "party_a": ch.party_a,
                    "party_b": ch.party_b,
                    "fund_a": ch.fund_a,
                    "fund_b": ch.fund_b,
                    "csv_delay": ch.csv_delay,
                    "dust_limit": ch.dust_limit,
                }
                for ch in self.channels
            ],
            "quotes": [
                {
                    "node": q.node,
                    "asset_in": q.asset_in,
                    "asset_out": q.asset_out,
                    "rate_num": q.rate_num,
                    "rate_den": q.rate_den,
                    "base_fee": q.base_fee,
                    "fee_ppm": q.fee_ppm,
                }
                for q in self.quotes
            ],
            "payments": [
                {
                    "at_tick": p.at_tick,
                    "sender": p.sender,
                    "recipient": p.recipient,
                    "amount": p.amount,
                    "asset": p.asset,
                    "hash_fn": p.hash_fn.value if p.hash_fn else None,
                }
                for p in self.payments
            ],
            "faults": [
                {
                    "kind": f.kind,
                    "actor": f.actor,
                    "at_tick": f.at_tick,
                    "until_tick": f.until_tick,
                    "duration": f.duration,
                    "channel": f.channel,
                }
                for f in self.faults
            ],
            "closes": [
                {"at_tick": c.at_tick, "channel": c.channel} for c in self.closes
            ],
        }

    def digest(self) -> str:
        blob = json.dumps(self.canonical(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


class _Diags:
    """Accumulates classified, field-addressed diagnostics."""

    def __init__(self) -> None:
        self.errors: list[str] = []

    def parse(self, where: str, msg: str) -> None:
        self.errors.append(f"parse-error: {where}: {msg}")

    def unknown(self, where: str, msg: str) -> None:
        self.errors.append(f"unknown-reference: {where}: {msg}")

    def constraint(self, where: str, msg: str) -> None:
        self.errors.append(f"constraint-violation: {where}: {msg}")


def _get_int(
    obj: dict,
    key: str,
    where: str,
    d: _Diags,
    default: Optional[int] = None,
    lo: Optional[int] = None,
    hi: Optional[int] = None,
) -> Optional[int]:
    if key not in obj:
        if default is not None:
            return default
        d.parse(f"{where}.{key}", "required field is missing")
        return None
    v = obj[key]
    # bool is an int subclass; a JSON true/false here is a type error.
    if not isinstance(v, int) or isinstance(v, bool):
        d.parse(f"{where}.{key}", f"expected an integer, got {v!r}")
        return None
    if lo is not None and v < lo:
        d.constraint(f"{where}.{key}", f"must be >= {lo}, got {v}")
        return None
    if hi is not None and v > hi:
        d.constraint(f"{where}.{key}", f"must be <= {hi}, got {v}")
        return None
    return v


def _get_str(
    obj: dict, key: str, where: str, d: _Diags, default: Optional[str] = None
) -> Optional[str]:
    if key not in obj:
        if default is not None:
            return default
        d.parse(f"{where}.{key}", "required field is missing")
        return None
    v = obj[key]
    if not isinstance(v, str) or not v:
        d.parse(f"{where}.{key}", f"expected a non-empty string, got {v!r}")
        return None
    return v


def _get_list(obj: dict, key: str, where: str, d: _Diags) -> list:
    v = obj.get(key, [])
    if not isinstance(v, list):
        d.parse(f"{where}.{key}", f"expected a list, got {type(v).__name__}")
        return []
    return v


def _id_ok(value: str, where: str, d: _Diags) -> bool:
    if len(value.encode()) > MAX_ID_BYTES:
        d.constraint(where, f"must be at most {MAX_ID_BYTES} bytes, got {value!r}")
        return False
    return True


def _parse_chain(i: int, obj: Any, actor_names: set, d: _Diags) -> Optional[ChainSpec]:
    where = f"chains[{i}]"
    if not isinstance(obj, dict):
        d.parse(where, "expected an object")
        return None
    chain_id = _get_str(obj, "chain_id", where, d)
    asset = _get_str(obj, "asset", where, d)
    if chain_id is not None:
        _id_ok(chain_id, f"{where}.chain_id", d)
    if asset is not None:
        _id_ok(asset, f"{where}.asset", d)
    fns: list[HashFnId] = []
    raw_fns = obj.get("hash_fns")
    if not isinstance(raw_fns, list) or not raw_fns:
        d.parse(f"{where}.hash_fns", "expected a non-empty list of hash function names")
    else:
        for j, name in enumerate(raw_fns):
            try:
                fn = HashFnId.from_name(name if isinstance(name, str) else repr(name))
            except ValueError:
                d.unknown(f"{where}.hash_fns[{j}]", f"unknown hash function {name!r}")
                continue
            if fn in fns:
                d.constraint(f"{where}.hash_fns[{j}]", f"duplicate entry {name!r}")
                continue
            fns.append(fn)
    interval = _get_int(obj, "block_interval", where, d, default=1, lo=1)
    tx_fee = _get_int(obj, "tx_fee", where, d, default=0, lo=0)
    genesis: list[tuple[str, int]] = []
    raw_gen = obj.get("genesis", {})
    if not isinstance(raw_gen, dict):
        d.parse(f"{where}.genesis", "expected an object mapping actor to amount")
    else:
        for actor in sorted(raw_gen):
            if actor not in actor_names:
                d.unknown(f"{where}.genesis.{actor}", f"no actor named {actor!r}")
                continue
            amt = raw_gen[actor]
            if not isinstance(amt, int) or isinstance(amt, bool) or amt <= 0:
                d.constraint(
                    f"{where}.genesis.{actor}", f"amount must be a positive integer, got {amt!r}"
                )
                continue
            genesis.append((actor, amt))
    if chain_id is None or asset is None or not fns or interval is None or tx_fee is None:
        return None
    return ChainSpec(chain_id, asset, tuple(fns), interval, tx_fee, tuple(genesis))


def _parse_actor(i: int, obj: Any, d: _Diags) -> Optional[ActorSpec]:
    where = f"actors[{i}]"
    if not isinstance(obj, dict):
        d.parse(where, "expected an object")
        return None
    name = _get_str(obj, "name", where, d)
    kind = _get_str(obj, "kind", where, d)
    if kind is not None and kind not in ACTOR_KINDS:
        d.constraint(f"{where}.kind", f"must be one of {ACTOR_KINDS}, got {kind!r}")
        kind = None
    if name is None or kind is None:
        return None
    return ActorSpec(name, kind)


def validate_scenario(source: Union[str, bytes, dict]) -> tuple[Optional[Scenario], list[str]]:
    """Parse and validate a scenario document.

    Returns (scenario, errors). The scenario is None whenever errors is
    non-empty; all detectable problems are reported, not just the first.
    """
    d = _Diags()
    if isinstance(source, (str, bytes)):
        try:
            doc = json.loads(source)
        except json.JSONDecodeError as exc:
            d.parse("document", f"not valid JSON ({exc.msg} at line {exc.lineno})")
            return None, d.errors
    else:
        doc = source
    if not isinstance(doc, dict):
        d.parse("document", "top level must be a JSON object")
        return None, d.errors

    known_sections = {
        "seed", "max_ticks", "chains", "mining", "actors", "channels",
        "quotes", "payments", "faults", "closes", "name", "comment",
    }
    for key in sorted(doc):
        if key not in known_sections:
            d.unknown(key, "not a scenario section")

    seed = _get_int(doc, "seed", "document", d, lo=0, hi=MAX_SEED)
    max_ticks = _get_int(doc, "max_ticks", "document", d, default=DEFAULT_MAX_TICKS, lo=10)

    # Actors first: nearly everything else refers to them by name.
    actors: list[ActorSpec] = []
    actor_names: set = set()
    raw_actors = _get_list(doc, "actors", "document", d)
    if not raw_actors:
        d.parse("actors", "at least one actor is required")
    for i, obj in enumerate(raw_actors):
        spec = _parse_actor(i, obj, d)
        if spec is None:
            continue
        if spec.name in actor_names:
            d.constraint(f"actors[{i}].name", f"duplicate actor {spec.name!r}")
            continue
        actor_names.add(spec.name)
        actors.append(spec)
    kind_of = {a.name: a.kind for a in actors}

    chains: list[ChainSpec] = []
    chain_ids: set = set()
    raw_chains = _get_list(doc, "chains", "document", d)
    if not raw_chains:
        d.parse("chains", "at least one chain is required")
    for i, obj in enumerate(raw_chains):
        spec = _parse_chain(i, obj, actor_names, d)
        if spec is None:
            continue
        if spec.chain_id in chain_ids:
            d.constraint(f"chains[{i}].chain_id", f"duplicate chain {spec.chain_id!r}")
            continue
        chain_ids.add(spec.chain_id)
        chains.append(spec)
    by_chain = {c.chain_id: c for c in chains}
    assets = {c.asset for c in chains}

    # Optional mining overrides: {chain_id: interval}.
    mining = doc.get("mining", {})
    if not isinstance(mining, dict):
        d.parse("mining", "expected an object mapping chain_id to interval")
    else:
        for cid in sorted(mining):
            if cid not in by_chain:
                d.unknown(f"mining.{cid}", f"no chain named {cid!r}")
                continue
            interval = mining[cid]
            if not isinstance(interval, int) or isinstance(interval, bool) or interval < 1:
                d.constraint(f"mining.{cid}", f"interval must be an integer >= 1, got {interval!r}")
                continue
            old = by_chain[cid]
            new = ChainSpec(
                old.chain_id, old.asset, old.hash_fns, interval, old.tx_fee, old.genesis
            )
            by_chain[cid] = new
            chains[chains.index(old)] = new

    channels: list[ChannelSpec] = []
    seen_pairs: set = set()
    for i, obj in enumerate(_get_list(doc, "channels", "document", d)):
        where = f"channels[{i}]"
        if not isinstance(obj, dict):
            d.parse(where, "expected an object")
            continue
        cid = _get_str(obj, "chain_id", where, d)
        pa = _get_str(obj, "party_a", where, d)
        pb = _get_str(obj, "party_b", where, d)
        fund_a = _get_int(obj, "fund_a", where, d, lo=0)
        fund_b = _get_int(obj, "fund_b", where, d, lo=0)
        csv = _get_int(obj, "csv_delay", where, d, default=6, lo=1)
        dust = _get_int(obj, "dust_limit", where, d, default=0, lo=0)
        ok = None not in (cid, pa, pb, fund_a, fund_b, csv, dust)
        if cid is not None and cid not in by_chain:
            d.unknown(f"{where}.chain_id", f"no chain named {cid!r}")
            ok = False
        for field_name, party in (("party_a", pa), ("party_b", pb)):
            if party is not None and party not in actor_names:
                d.unknown(f"{where}.{field_name}", f"no actor named {party!r}")
                ok = False
        if pa is not None and pa == pb:
            d.constraint(f"{where}.party_b", "both ends name the same actor")
            ok = False
        if fund_a is not None and fund_b is not None and fund_a + fund_b <= 0:
            d.constraint(f"{where}.fund_a", "channel capacity must be positive")
            ok = False
        if not ok:
            continue
        pair = (cid, *sorted((pa, pb)))
        if pair in seen_pairs:
            d.constraint(where, f"a channel between {pa!r} and {pb!r} on {cid!r} already exists")
            continue
        seen_pairs.add(pair)
        channels.append(ChannelSpec(cid, pa, pb, fund_a, fund_b, csv, dust))

    # Funding must be covered by genesis allocations on the same chain
    # (party_a also pays the funding tx fee).
    owed: dict[tuple[str, str], int] = {}
    for ch in channels:
        fee = by_chain[ch.chain_id].tx_fee
        owed[(ch.chain_id, ch.party_a)] = owed.get((ch.chain_id, ch.party_a), 0) + ch.fund_a + fee
        owed[(ch.chain_id, ch.party_b)] = owed.get((ch.chain_id, ch.party_b), 0) + ch.fund_b
    for c in chains:
        held = {actor: amt for actor, amt in c.genesis}
        for (cid, actor), need in sorted(owed.items()):
            if cid != c.chain_id or need == 0:
                continue
            have = held.get(actor, 0)
            if have < need:
                d.constraint(
                    f"chains[{chains.index(c)}].genesis.{actor}",
                    f"holds {have} on {cid!r} but channel funding needs {need}",
                )

    quotes: list[QuoteSpec] = []
    for i, obj in enumerate(_get_list(doc, "quotes", "document", d)):
        where = f"quotes[{i}]"
        if not isinstance(obj, dict):
            d.parse(where, "expected an object")
            continue
        node = _get_str(obj, "node", where, d)
        a_in = _get_str(obj, "asset_in", where, d)
        a_out = _get_str(obj, "asset_out", where, d)
        num = _get_int(obj, "rate_num", where, d, lo=1)
        den = _get_int(obj, "rate_den", where, d, lo=1)
        base = _get_int(obj, "base_fee", where, d, default=0, lo=0)
        ppm = _get_int(obj, "fee_ppm", where, d, default=0, lo=0, hi=999_999)
        ok = None not in (node, a_in, a_out, num, den, base, ppm)
        if node is not None and node not in actor_names:
            d.unknown(f"{where}.node", f"no actor named {node!r}")
            ok = False
        elif node is not None and kind_of.get(node) != "lp":
            d.constraint(f"{where}.node", f"{node!r} is not a liquidity provider")
            ok = False
        for field_name, asset in (("asset_in", a_in), ("asset_out", a_out)):
            if asset is None:
                continue
            if not _id_ok(asset, f"{where}.{field_name}", d):
                ok = False
            elif asset not in assets:
                d.unknown(f"{where}.{field_name}", f"no chain carries asset {asset!r}")
                ok = False
        if ok:
            quotes.append(QuoteSpec(node, a_in, a_out, num, den, base, ppm))

    lp_peers: dict[str, set] = {a.name: set() for a in actors}
    for ch in channels:
        if kind_of.get(ch.party_b) == "lp":
            lp_peers.setdefault(ch.party_a, set()).add(ch.party_b)
        if kind_of.get(ch.party_a) == "lp":
            lp_peers.setdefault(ch.party_b, set()).add(ch.party_a)

    payments: list[PaymentSpec] = []
    for i, obj in enumerate(_get_list(doc, "payments", "document", d)):
        where = f"payments[{i}]"
        if not isinstance(obj, dict):
            d.parse(where, "expected an object")
            continue
        at_tick = _get_int(obj, "at_tick", where, d, lo=0)
        sender = _get_str(obj, "sender", where, d)
        recipient = _get_str(obj, "recipient", where, d)
        amount = _get_int(obj, "amount", where, d, lo=1)
        asset = _get_str(obj, "asset", where, d)
        fn: Optional[HashFnId] = None
        if "hash_fn" in obj and obj["hash_fn"] is not None:
            try:
                fn = HashFnId.from_name(obj["hash_fn"])
            except ValueError:
                d.unknown(f"{where}.hash_fn", f"unknown hash function {obj['hash_fn']!r}")
                continue
        ok = None not in (at_tick, sender, recipient, amount, asset)
        for field_name, actor in (("sender", sender), ("recipient", recipient)):
            if actor is not None and actor not in actor_names:
                d.unknown(f"{where}.{field_name}", f"no actor named {actor!r}")
                ok = False
        if sender is not None and sender == recipient:
            d.constraint(f"{where}.recipient", "sender and recipient must differ")
            ok = False
        if asset is not None and asset not in assets:
            d.unknown(f"{where}.asset", f"no chain carries asset {asset!r}")
            ok = False
        if ok:
            for field_name, actor in (("sender", sender), ("recipient", recipient)):
                if kind_of[actor] != "lp" and not lp_peers.get(actor):
                    d.constraint(
                        f"{where}.{field_name}",
                        f"{actor!r} has no channel to a liquidity provider",
                    )
                    ok = False
        if ok:
            payments.append(PaymentSpec(at_tick, sender, recipient, amount, asset, fn))

    faults: list[FaultSpec] = []
    for i, obj in enumerate(_get_list(doc, "faults", "document", d)):
        where = f"faults[{i}]"
        if not isinstance(obj, dict):
            d.parse(where, "expected an object")
            continue
        kind = _get_str(obj, "kind", where, d)
        actor = _get_str(obj, "actor", where, d)
        at_tick = _get_int(obj, "at_tick", where, d, lo=0)
        if kind is not None and kind not in FAULT_KINDS:
            d.unknown(f"{where}.kind", f"unknown fault kind {kind!r}")
            continue
        if actor is not None and actor not in actor_names:
            d.unknown(f"{where}.actor", f"no actor named {actor!r}")
            continue
        if None in (kind, actor, at_tick):
            continue
        duration = 0
        until = FAR_FUTURE
        chan: Optional[int] = None
        if kind == "crash":
            duration = _get_int(obj, "duration", where, d, lo=1)
            if duration is None:
                continue
            until = at_tick + duration
        elif kind in WINDOW_FAULTS:
            until = _get_int(obj, "until_tick", where, d, default=FAR_FUTURE, lo=at_tick + 1)
            if until is None:
                continue
        elif kind == "broadcast-revoked":
            until = at_tick + 1
            if "channel" in obj and obj["channel"] is not None:
                chan = _get_int(obj, "channel", where, d, lo=0, hi=len(channels) - 1)
                if chan is None:
                    continue
                spec = channels[chan]
                if actor not in (spec.party_a, spec.party_b):
                    d.constraint(f"{where}.channel", f"{actor!r} is not a party of channel {chan}")
                    continue
        faults.append(FaultSpec(kind, actor, at_tick, until, duration, chan))

    closes: list[CloseSpec] = []
    for i, obj in enumerate(_get_list(doc, "closes", "document", d)):
        where = f"closes[{i}]"
        if not isinstance(obj, dict):
            d.parse(where, "expected an object")
            continue
        at_tick = _get_int(obj, "at_tick", where, d, lo=0)
        chan = _get_int(obj, "channel", where, d, lo=0, hi=max(len(channels) - 1, 0))
        if None in (at_tick, chan):
            continue
        if chan >= len(channels):
            d.unknown(f"{where}.channel", f"no channel with index {chan}")
            continue
        closes.append(CloseSpec(at_tick, chan))

    if d.errors:
        return None, d.errors
    return (
        Scenario(
            seed=seed,
            max_ticks=max_ticks,
            chains=tuple(chains),
            actors=tuple(actors),
            channels=tuple(channels),
            quotes=tuple(quotes),
            payments=tuple(payments),
            faults=tuple(faults),
            closes=tuple(closes),
        ),
        [],
    )


def load_scenario(path: str) -> tuple[Optional[Scenario], list[str]]:
    """Read and validate a scenario file from disk."""
    try:
        with open(path, "rb") as fh:
            text = fh.read()
    except OSError as exc:
        return None, [f"parse-error: {path}: {exc.strerror or exc}"]
    return validate_scenario(text)
