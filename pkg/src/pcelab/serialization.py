"""JSON documents for MDPs, distributions, policies and policy-value sets; CSV writers.

Floats are written with Python's shortest round-trip repr, so a dump/load cycle
reproduces every value exactly.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .distributions import MdpDistribution
from .mdp import NoiseModel, Policy, TabularMdp
from .pce import PolicyValuePair, PolicyValueSet


def mdp_to_dict(mdp: TabularMdp) -> dict:
    noise = {"kind": mdp.noise.kind}
    if mdp.noise.kind == "gaussian":
        noise["sigma"] = mdp.noise.sigma
    return {
        "S": mdp.num_states,
        "A": mdp.num_actions,
        "H": mdp.horizon,
        "s1": mdp.initial_state,
        "noise": noise,
        "P": mdp.transitions.tolist(),
        "r": mdp.mean_rewards.tolist(),
    }


def mdp_from_dict(doc: dict) -> TabularMdp:
    noise = doc.get("noise", {"kind": "deterministic"})
    mdp = TabularMdp(np.array(doc["P"], dtype=float), np.array(doc["r"], dtype=float),
                     NoiseModel(noise["kind"], float(noise.get("sigma", 1.0))), int(doc.get("s1", 0)))
    declared = (doc.get("S"), doc.get("A"), doc.get("H"))
    if any(d is not None for d in declared) and declared != mdp.shape:
        raise ValueError(f"declared (S,A,H)={declared} but arrays give {mdp.shape}")
    return mdp


def distribution_to_dict(dist: MdpDistribution) -> dict:
    return {"probs": dist.probs.tolist(), "mdps": [mdp_to_dict(m) for m in dist.support]}


def distribution_from_dict(doc: dict, base_dir: Path | None = None) -> MdpDistribution:
    mdps = []
    for entry in doc["mdps"]:
        if isinstance(entry, str):
            path = Path(entry) if base_dir is None else Path(base_dir) / entry
            entry = json.loads(path.read_text())
        mdps.append(mdp_from_dict(entry))
    return MdpDistribution(tuple(mdps), doc["probs"])


def policy_to_list(policy: Policy) -> list:
    return policy.probs.tolist()


def policy_from_list(doc) -> Policy:
    return Policy(np.array(doc, dtype=float))


def pvset_to_dict(pvset: PolicyValueSet) -> dict:
    return {
        "epsilon": pvset.epsilon,
        "delta": pvset.delta,
        "pairs": [{"v": p.value, "policy": policy_to_list(p.policy)} for p in pvset.pairs],
    }


def pvset_from_dict(doc: dict) -> PolicyValueSet:
    pairs = tuple(PolicyValuePair(policy_from_list(p["policy"]), float(p["v"])) for p in doc["pairs"])
    return PolicyValueSet(pairs, float(doc["epsilon"]), float(doc["delta"]))


def dumps(doc) -> str:
    return json.dumps(doc, indent=None, separators=(",", ":"), sort_keys=True)


def save_json(path: Path | str, doc) -> None:
    Path(path).write_text(dumps(doc) + "\n")


def load_json(path: Path | str):
    return json.loads(Path(path).read_text())


def fmt(x) -> str:
    """Locale-free CSV cell: ints as ints, floats in shortest round-trip form."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(x) for x in row])
    return buf.getvalue()


def write_csv(path: Path | str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    Path(path).write_text(csv_text(header, rows))


def read_csv(path: Path | str) -> tuple[list[str], list[dict]]:
    with open(path, newline="") as f:
        r = csv.DictReader(f)
        return list(r.fieldnames or []), list(r)
