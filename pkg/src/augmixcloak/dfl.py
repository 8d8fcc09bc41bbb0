"""Decentralized federated learning: topologies, flooding membership queries, training rounds.

The simulation is synchronous and single-process. Rounds are barriers and
messages are delivered in ascending participant-id order.
"""

import csv
import hashlib
import itertools
from collections import deque
from dataclasses import dataclass, field, replace

import numpy as np

from .classifier import ModelParams, TrainConfig, accuracy, average_models, train_local
from .phash import HashIndex, build_hash_index, lookup

TOPOLOGIES = ("fully", "ring", "star")


def derive_seed(master: int, *names) -> int:
    """Stable 63-bit seed for a named stage, e.g. ``derive_seed(7, "train", 3, 0)``."""
    key = "/".join([str(int(master))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


@dataclass(frozen=True)
class Topology:
    kind: str
    n: int
    adjacency: tuple  # adjacency[i] = sorted tuple of neighbor ids

    def neighbors(self, i: int) -> tuple:
        return self.adjacency[i]

    @property
    def edges(self) -> list:
        return [(i, j) for i in range(self.n) for j in self.adjacency[i] if i < j]

    def closed_neighborhood(self, i: int) -> tuple:
        return tuple(sorted((i,) + self.adjacency[i]))


def build_topology(kind: str, n: int) -> Topology:
    if kind == "fully" and n >= 2:
        adj = [tuple(j for j in range(n) if j != i) for i in range(n)]
    elif kind == "ring" and n >= 3:
        adj = [tuple(sorted({(i - 1) % n, (i + 1) % n})) for i in range(n)]
    elif kind == "star" and n >= 2:
        adj = [tuple(range(1, n))] + [(0,)] * (n - 1)
    else:
        raise ValueError(f"unsupported topology {kind!r} with n={n}")
    return Topology(kind, n, tuple(adj))


@dataclass
class Participant:
    id: int
    images: np.ndarray  # raw [0,1] pixels of the local partition, (N, H, W, C)
    labels: np.ndarray
    index: HashIndex
    model: ModelParams
    role: str = "peer"
    hashes: tuple = field(default=(), repr=False)


def make_participants(topology: Topology, partitions, models, hashes=None) -> list:
    """Wrap partitions ``[(images, labels), ...]`` with hash indexes and role labels."""
    out = []
    for i, ((images, labels), model) in enumerate(zip(partitions, models)):
        hs = tuple(hashes[i]) if hashes is not None else None
        index = build_hash_index(images, owner=i, hashes=hs)
        if topology.kind == "star":
            role = "center" if i == 0 else "leaf"
        else:
            role = "peer"
        out.append(Participant(i, images, np.asarray(labels), index, model, role, hs or ()))
    return out


@dataclass(frozen=True)
class QueryMessage:
    query_id: int
    phash: int
    origin: int


@dataclass
class QueryResult:
    found: bool
    messages: int
    reached: list


_query_ids = itertools.count()


def flood_query(topology: Topology, participants, entry_id: int, h: int) -> QueryResult:
    """Flood a hash lookup from ``entry_id``; every participant handles a query id once.

    A participant that misses forwards the query to each neighbor except the
    one it came from. The search stops as soon as any participant reports a hit.
    """
    if not 0 <= entry_id < topology.n:
        raise ValueError(f"entry participant {entry_id} not in topology of size {topology.n}")
    qid = next(_query_ids)
    seen = {entry_id}
    queue = deque([QueryMessage(qid, int(h), -1)])
    holders = deque([entry_id])
    messages = 0
    reached = []
    while queue:
        msg, node = queue.popleft(), holders.popleft()
        reached.append(node)
        if lookup(participants[node].index, msg.phash):
            return QueryResult(True, messages, reached)
        for nb in topology.neighbors(node):
            if nb == msg.origin:
                continue
            messages += 1
            if nb in seen:
                continue  # duplicate query id: dropped on arrival
            seen.add(nb)
            queue.append(QueryMessage(qid, msg.phash, node))
            holders.append(nb)
    return QueryResult(False, messages, reached)


def membership_query(topology: Topology, participants, entry_id: int, h: int) -> bool:
    return flood_query(topology, participants, entry_id, h).found


def run_federated_training(topology: Topology, participants, rounds: int, cfg: TrainConfig,
                           eval_set=None, log=None, normalizer=None) -> list:
    """Local training followed by closed-neighborhood averaging, ``rounds`` times.

    Participant ``i`` in round ``r`` trains with seed ``derive_seed(cfg.seed, "train", r, i)``.
    ``log`` (a csv writer or list) receives ``round,participant,train_acc,test_acc`` rows;
    ``eval_set`` is an ``(images, labels)`` pair used for ``test_acc``.
    """
    norm = normalizer or (lambda a: a)
    parts = [replace(p) for p in participants]
    for r in range(rounds):
        trained = []
        for p in parts:
            local_cfg = replace(cfg, seed=derive_seed(cfg.seed, "train", r, p.id))
            trained.append(train_local(p.model, norm(p.images), p.labels, local_cfg))
        for p in parts:
            p.model = average_models([trained[j] for j in topology.closed_neighborhood(p.id)])
        if log is not None:
            for p in parts:
                train_acc = accuracy(p.model, norm(p.images), p.labels)
                test_acc = accuracy(p.model, norm(eval_set[0]), eval_set[1]) if eval_set is not None else float("nan")
                row = [r, p.id, f"{train_acc:.6f}", f"{test_acc:.6f}"]
                if hasattr(log, "writerow"):
                    log.writerow(row)
                else:
                    log.append(row)
    return parts


ROUND_LOG_HEADER = ["round", "participant", "train_acc", "test_acc"]


def open_round_log(path):
    fh = open(path, "w", newline="")
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(ROUND_LOG_HEADER)
    return fh, writer
