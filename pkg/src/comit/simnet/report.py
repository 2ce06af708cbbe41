"""Run reports: canonical JSON plus a human-readable rendering.

The JSON form is byte-identical across runs of the same scenario: keys are
sorted, every value is an int, bool, or string, and nothing time- or
machine-dependent goes in. The exit status of the CLI is derived from the
`violations` list, so a clean report means every invariant held for the
whole run.
"""

from __future__ import annotations

import json

from .engine import Engine


def _no_loss(initial, final, settled_in, settled_out, fees) -> bool:
    assets = set(initial) | set(final) | set(settled_in) | set(settled_out) | set(fees)
    for asset in sorted(assets):
        floor = (
            initial.get(asset, 0)
            + settled_in.get(asset, 0)
            - settled_out.get(asset, 0)
            - fees.get(asset, 0)
        )
        if final.get(asset, 0) < floor:
            return False
    return True


def build_report(engine: Engine) -> dict:
    sc = engine.sc
    violations = list(engine.violations)
    faulty = {f.actor for f in sc.faults}

    actors = {}
    for name in sorted(engine.actors):
        actor = engine.actors[name]
        initial = engine.initial_balances(name)
        final = engine.final_balances(name)
        honest = name not in faulty
        ok = _no_loss(initial, final, actor.settled_in, actor.settled_out, actor.fees)
        if honest and not ok:
            violations.append(
                f"no-honest-loss: actor {name!r} ended below its entitled balance"
            )
        actors[name] = {
            "kind": actor.kind,
            "honest": honest,
            "initial": dict(sorted(initial.items())),
            "final": dict(sorted(final.items())),
            "settled_in": dict(sorted(actor.settled_in.items())),
            "settled_out": dict(sorted(actor.settled_out.items())),
            "fees_authorized": dict(sorted(actor.fees.items())),
            "no_loss": ok,
        }

    chains = {}
    for cid in sorted(engine.ledgers):
        led = engine.ledgers[cid]
        chains[cid] = {
            "asset": engine.chain_assets[cid],
            "height": led.height,
            "burned": led.burned,
            "confirmed_txs": led.confirmed_tx_count,
            "genesis_total": led.genesis_total,
            "utxo_total": led.total_utxo_value(),
        }

    payments = []
    for p in engine.payments:
        payments.append(
            {
                "index": p.idx,
                "sender": p.spec.sender,
                "recipient": p.spec.recipient,
                "asset": p.spec.asset,
                "amount": p.spec.amount,
                "status": p.status,
                "reason": p.reason,
                "cost": p.cost,
                "hops": len(p.hops),
                "started_tick": p.started_tick,
                "resolved_tick": p.resolved_tick,
            }
        )

    channels = []
    for rt in engine.channels:
        channels.append(
            {
                "index": rt.idx,
                "chain_id": rt.chain_id,
                "party_a": rt.names[0],
                "party_b": rt.names[1],
                "phase": rt.channel.phase.value,
                "updates": rt.channel.update_count,
                "closed_by": rt.channel.closed_by or "",
            }
        )

    faults = []
    for i, f in enumerate(sc.faults):
        faults.append(
            {
                "kind": f.kind,
                "actor": f.actor,
                "at_tick": f.at_tick,
                "applied": engine.fault_hits[i],
            }
        )

    return {
        "scenario_digest": sc.digest(),
        "seed": sc.seed,
        "ticks": engine.tick,
        "chains": chains,
        "actors": actors,
        "payments": payments,
        "channels": channels,
        "faults": faults,
        "gossip": {
            "converged_tick": engine.gossip_converged_tick,
            "invalid_dropped": sum(
                a.gossip.invalid_dropped for _, a in sorted(engine.actors.items())
            ),
        },
        "metrics": dict(sorted(engine.metrics.items())),
        "violations": violations,
    }


def report_json(report: dict) -> str:
    """Canonical serialization; byte-identical for identical runs."""
    return json.dumps(report, sort_keys=True, indent=2) + "\n"


def render_text(report: dict) -> str:
    lines = []
    lines.append(f"run: {report['ticks']} ticks, seed {report['seed']}")
    lines.append(
        f"gossip converged at tick {report['gossip']['converged_tick']}"
    )
    lines.append("")
    lines.append("chains:")
    for cid, c in report["chains"].items():
        lines.append(
            f"  {cid}: height {c['height']}, {c['confirmed_txs']} txs, "
            f"asset {c['asset']}, burned {c['burned']}"
        )
    lines.append("")
    lines.append("payments:")
    if not report["payments"]:
        lines.append("  (none)")
    for p in report["payments"]:
        detail = f" ({p['reason']})" if p["reason"] else ""
        lines.append(
            f"  [{p['index']}] {p['sender']} -> {p['recipient']}: "
            f"{p['amount']} {p['asset']} {p['status']}{detail}, "
            f"cost {p['cost']}, {p['hops']} hops"
        )
    lines.append("")
    lines.append("actors:")
    for name, a in report["actors"].items():
        balances = ", ".join(f"{amt} {asset}" for asset, amt in a["final"].items()) or "0"
        flag = "" if a["no_loss"] else "  LOSS"
        lines.append(f"  {name} ({a['kind']}): {balances}{flag}")
    lines.append("")
    lines.append("channels:")
    for ch in report["channels"]:
        lines.append(
            f"  [{ch['index']}] {ch['party_a']}--{ch['party_b']} on {ch['chain_id']}: "
            f"{ch['phase']}, {ch['updates']} updates"
        )
    if report["faults"]:
        lines.append("")
        lines.append("faults:")
        for f in report["faults"]:
            lines.append(
                f"  {f['kind']} on {f['actor']} at tick {f['at_tick']} "
                f"(applied {f['applied']}x)"
            )
    lines.append("")
    if report["violations"]:
        lines.append("violations:")
        for v in report["violations"]:
            lines.append(f"  {v}")
    else:
        lines.append("violations: none")
    return "\n".join(lines) + "\n"
