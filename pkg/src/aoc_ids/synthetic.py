"""Synthetic flow records laid out like the NSL-KDD files.

Useful for smoke tests and demos when the real datasets are not at hand. Rows
follow the 43-column header-less layout of ``KDDTrain+.txt``, so the bundled
``nsl-kdd`` profile reads them unchanged. Normal traffic and each attack type
are drawn from their own feature prototypes; ``unseen`` attack types only show
up in the test file.
"""
from __future__ import annotations

import csv

import numpy as np

from .profiles import load_profile

SEEN = {
    "DoS": ["neptune", "smurf"],
    "Probe": ["satan", "ipsweep"],
    "R2L": ["guess_passwd", "warezmaster"],
    "U2R": ["buffer_overflow"],
}
UNSEEN = {
    "DoS": ["apache2"],
    "Probe": ["mscan"],
    "R2L": ["snmpguess"],
    "U2R": ["sqlattack"],
}
PROTOCOLS = ["tcp", "udp", "icmp"]
SERVICES = [f"svc{i:02d}" for i in range(70)]
FLAGS = ["SF", "S0", "REJ", "RSTR", "RSTO", "SH", "S1", "S2", "S3", "OTH", "RSTOS0"]


def _prototype(rng: np.random.Generator, n_cont: int) -> dict:
    return {
        "cont": rng.uniform(0.0, 1.0, n_cont),
        "protocol": rng.dirichlet(np.full(len(PROTOCOLS), 0.5)),
        "service": rng.dirichlet(np.full(len(SERVICES), 0.1)),
        "flag": rng.dirichlet(np.full(len(FLAGS), 0.3)),
    }


def generate_rows(
    n_rows: int,
    seed: int,
    attack_share: float = 0.45,
    include_unseen: bool = False,
    noise: float = 0.12,
    world_seed: int = 1234,
) -> list[list[str]]:
    """Rows of 43 string cells: 41 features, label, difficulty.

    ``world_seed`` fixes the class prototypes so that train and test files
    generated with different ``seed`` values share the same structure.
    """
    names = load_profile("nsl-kdd")["descriptor"]["columns"]
    categorical = {"protocol_type", "service", "flag"}
    cont_names = [c for c in names[:41] if c not in categorical and c != "num_outbound_cmds"]
    world = np.random.default_rng(world_seed)
    types = {"normal": _prototype(world, len(cont_names))}
    for table in (SEEN, UNSEEN):
        for family_types in table.values():
            for t in family_types:
                types[t] = _prototype(world, len(cont_names))
    # every attack keeps part of the normal profile so the task is not trivial
    for t, proto in types.items():
        if t != "normal":
            mix = world.uniform(0.3, 0.7)
            proto["cont"] = mix * types["normal"]["cont"] + (1 - mix) * proto["cont"]

    attack_pool = [t for fam in SEEN.values() for t in fam]
    if include_unseen:
        attack_pool += [t for fam in UNSEEN.values() for t in fam]

    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n_rows):
        kind = "normal" if rng.random() >= attack_share else attack_pool[rng.integers(len(attack_pool))]
        proto = types[kind]
        cont = np.clip(proto["cont"] + rng.normal(0.0, noise, len(cont_names)), 0.0, 1.0)
        values = dict(zip(cont_names, (f"{v:.4f}" for v in 1000.0 * cont)))
        values["num_outbound_cmds"] = "0"
        values["protocol_type"] = PROTOCOLS[rng.choice(len(PROTOCOLS), p=proto["protocol"])]
        values["service"] = SERVICES[rng.choice(len(SERVICES), p=proto["service"])]
        values["flag"] = FLAGS[rng.choice(len(FLAGS), p=proto["flag"])]
        rows.append([values[c] for c in names[:41]] + [kind, str(int(rng.integers(0, 22)))])
    return rows


def write_csv(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        csv.writer(fh, lineterminator="\n").writerows(rows)


def write_pair(train_path, test_path, n_train: int, n_test: int, seed: int = 0) -> None:
    """Write a matching synthetic train/test pair (unseen attack types only in test).

    The training file always contains every category value, so the encoded
    width matches the real dataset's.
    """
    train = generate_rows(n_train, seed)
    names = load_profile("nsl-kdd")["descriptor"]["columns"]
    template = list(train[0])
    for col, vocab in (("protocol_type", PROTOCOLS), ("service", SERVICES), ("flag", FLAGS)):
        pos = names.index(col)
        for value in vocab:
            row = list(template)
            row[pos] = value
            train.append(row)
    write_csv(train_path, train)
    write_csv(test_path, generate_rows(n_test, seed + 1, include_unseen=True))
