"""Trustless two-party payment channels over the simulated ledger.

Off-chain updates are asymmetric commitment transactions: each party holds
its own pre-signed version whose own payout is delayed and revocable, so
broadcasting a stale state hands the counterparty everything via the
revealed invalidation key.
"""

from .channel import (
    AmountBelowDust,
    BadPreimage,
    Channel,
    ChannelError,
    ChannelParty,
    ChannelPhase,
    Htlc,
    InsufficientBalance,
    InsufficientFunds,
    PendingHtlcs,
    StalePhase,
    UnknownHtlc,
    UnsupportedHashFunction,
    WindowExpired,
    open_channel,
)

__all__ = [
    "Channel",
    "ChannelParty",
    "ChannelPhase",
    "Htlc",
    "open_channel",
    "ChannelError",
    "InsufficientFunds",
    "InsufficientBalance",
    "UnsupportedHashFunction",
    "StalePhase",
    "BadPreimage",
    "UnknownHtlc",
    "PendingHtlcs",
    "WindowExpired",
    "AmountBelowDust",
]
