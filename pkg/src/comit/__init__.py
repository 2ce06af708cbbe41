"""Cross-chain payment-channel stack: simulated ledgers, channels, routed
multi-hop payments, and a deterministic network simulator."""

__version__ = "0.1.0"
