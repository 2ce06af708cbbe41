"""Liquidity-provider gossip.

LPs advertise their channel endpoints and rate quotes in signed adverts;
everyone else relays them. Merging is per-origin freshest-timestamp-wins,
invalid signatures are dropped (and counted), and each node remembers what
every peer has already seen so deltas stay small and flooding terminates.
On a connected topology every origin reaches every node in at most
diameter rounds.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional, Sequence

from .identity import NodeKey, verify_node_mac
from .quotes import RateQuote


@dataclass(frozen=True)
class ChannelEndpoint:
    chain_id: str
    peer: bytes  # node pubkey of the other side
    capacity: int  # hint, not a promise

    def __post_init__(self) -> None:
        if len(self.peer) != 32:
            raise ValueError("peer pubkey must be 32 bytes")
        if self.capacity < 0:
            raise ValueError("capacity must be >= 0")


@dataclass(frozen=True)
class LpAdvert:
    node_pubkey: bytes
    endpoints: tuple[ChannelEndpoint, ...]
    quotes: tuple[RateQuote, ...]
    timestamp: int
    signature: bytes


def _short_str(s: str) -> bytes:
    raw = s.encode()
    if len(raw) > 255:
        raise ValueError("identifier too long")
    return struct.pack("<B", len(raw)) + raw


def advert_signing_bytes(
    node_pubkey: bytes,
    endpoints: Sequence[ChannelEndpoint],
    quotes: Sequence[RateQuote],
    timestamp: int,
) -> bytes:
    parts = [node_pubkey, struct.pack("<Q", timestamp), struct.pack("<I", len(endpoints))]
    for ep in endpoints:
        parts.append(_short_str(ep.chain_id))
        parts.append(ep.peer)
        parts.append(struct.pack("<Q", ep.capacity))
    parts.append(struct.pack("<I", len(quotes)))
    for q in quotes:
        parts.append(_short_str(q.asset_in))
        parts.append(_short_str(q.asset_out))
        parts.append(struct.pack("<QQQI", q.rate_num, q.rate_den, q.base_fee, q.fee_ppm))
    return b"".join(parts)


def make_advert(
    node_key: NodeKey,
    endpoints: Sequence[ChannelEndpoint],
    quotes: Sequence[RateQuote],
    timestamp: int,
) -> LpAdvert:
    endpoints = tuple(endpoints)
    quotes = tuple(quotes)
    body = advert_signing_bytes(node_key.pubkey, endpoints, quotes, timestamp)
    return LpAdvert(
        node_pubkey=node_key.pubkey,
        endpoints=endpoints,
        quotes=quotes,
        timestamp=timestamp,
        signature=node_key.sign(body),
    )


def verify_advert(advert: LpAdvert) -> bool:
    body = advert_signing_bytes(
        advert.node_pubkey, advert.endpoints, advert.quotes, advert.timestamp
    )
    return verify_node_mac(advert.node_pubkey, body, advert.signature)


class GossipState:
    """One node's advert store plus per-peer bookkeeping."""

    def __init__(self, own_pubkey: bytes):
        self.own_pubkey = own_pubkey
        self.adverts: dict[bytes, LpAdvert] = {}
        self.invalid_dropped = 0
        # peer id -> origin -> newest timestamp the peer is known to hold
        self._peer_known: dict[bytes, dict[bytes, int]] = {}

    def insert_local(self, advert: LpAdvert) -> None:
        """Install this node's own (or bootstrap) advert without a peer."""
        if not verify_advert(advert):
            self.invalid_dropped += 1
            return
        self._merge(advert)

    def _merge(self, advert: LpAdvert) -> bool:
        have = self.adverts.get(advert.node_pubkey)
        if have is None or advert.timestamp > have.timestamp:
            self.adverts[advert.node_pubkey] = advert
            return True
        return False

    def advert_set(self) -> list[LpAdvert]:
        return [self.adverts[k] for k in sorted(self.adverts)]

    def gossip_step(
        self, peer_id: bytes, incoming: Sequence[LpAdvert]
    ) -> list[LpAdvert]:
        """Merge `incoming` from peer_id; return the delta to send back.

        The delta contains every held advert the peer is not yet known to
        have at its freshest timestamp, and the bookkeeping then assumes
        delivery (re-sends only happen on genuinely fresher data).
        """
        known = self._peer_known.setdefault(peer_id, {})
        for advert in incoming:
            if not verify_advert(advert):
                self.invalid_dropped += 1
                continue
            self._merge(advert)
            if advert.timestamp > known.get(advert.node_pubkey, -1):
                known[advert.node_pubkey] = advert.timestamp
        delta = [
            advert
            for origin, advert in sorted(self.adverts.items())
            if known.get(origin, -1) < advert.timestamp
        ]
        for advert in delta:
            known[advert.node_pubkey] = advert.timestamp
        return delta
