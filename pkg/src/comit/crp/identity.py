"""Routing-node identity.

A node's identity is its X25519 public key (32 bytes): it both names the
node in gossip and routes and serves as the Diffie-Hellman key the onion
shares secrets against. Advert authentication reuses the MAC-with-keyring
scheme of the ledger's simulated signatures.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field

from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)

_NODE_KEYRING: dict[bytes, bytes] = {}


def _raw_public(private: X25519PrivateKey) -> bytes:
    return private.public_key().public_bytes(
        serialization.Encoding.Raw, serialization.PublicFormat.Raw
    )


@dataclass(frozen=True)
class NodeKey:
    seed: bytes
    pubkey: bytes = field(init=False)

    def __post_init__(self) -> None:
        if len(self.seed) != 32:
            raise ValueError("node seed must be 32 bytes")
        private = X25519PrivateKey.from_private_bytes(self.seed)
        object.__setattr__(self, "pubkey", _raw_public(private))
        _NODE_KEYRING[self.pubkey] = self.seed

    @classmethod
    def generate(cls, rng) -> "NodeKey":
        return cls(rng.randbytes(32))

    def private(self) -> X25519PrivateKey:
        return X25519PrivateKey.from_private_bytes(self.seed)

    def exchange(self, peer_public: bytes) -> bytes:
        return self.private().exchange(X25519PublicKey.from_public_bytes(peer_public))

    def sign(self, data: bytes) -> bytes:
        return hmac.new(self.seed, data, hashlib.sha256).digest()


def verify_node_mac(pubkey: bytes, data: bytes, mac: bytes) -> bool:
    seed = _NODE_KEYRING.get(pubkey)
    if seed is None:
        return False
    return hmac.compare_digest(hmac.new(seed, data, hashlib.sha256).digest(), mac)
