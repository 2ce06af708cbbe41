"""Simulated UTXO blockchains with a closed script language.

Each Ledger is single-chain, fee-burning, and deterministic: transactions
confirm in submission order, there are no reorgs, and locktimes are enforced
at mining time rather than submission time.
"""

from .hashes import DIGEST_SIZE, HashFnId, UnknownHashFunction, hash_digest
from .keys import KeyPair, Signature, verify_mac
from .script import (
    HtlcScript,
    HashLock,
    Multisig2of2,
    Or,
    PayToKey,
    ScriptContext,
    TimeLockAbs,
    TimeLockRel,
    Witness,
    script_bytes,
    verify_script,
)
from .tx import MAX_AMOUNT, Outpoint, Transaction, TxIn, TxOut, txid
from .ledger import BlockSummary, ChainParams, Ledger, Reject, TxRejected

__all__ = [
    "DIGEST_SIZE",
    "HashFnId",
    "UnknownHashFunction",
    "hash_digest",
    "KeyPair",
    "Signature",
    "verify_mac",
    "PayToKey",
    "Multisig2of2",
    "HashLock",
    "TimeLockAbs",
    "TimeLockRel",
    "HtlcScript",
    "Or",
    "Witness",
    "ScriptContext",
    "verify_script",
    "script_bytes",
    "Outpoint",
    "TxOut",
    "TxIn",
    "Transaction",
    "txid",
    "MAX_AMOUNT",
    "ChainParams",
    "Ledger",
    "BlockSummary",
    "TxRejected",
    "Reject",
]
