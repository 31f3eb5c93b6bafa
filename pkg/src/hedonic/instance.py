"""Market data model: agent types, qualities, outside options and bid/ask curves.

Qualities are indexed ``0..K-1``. Every function that works on the
*extended* quality set appends the two outside options after the base
qualities, so an extended vector has length ``K + 2`` with

* ``K``     -- the consumer's outside option (stay out, utility 0),
* ``K + 1`` -- the producer's outside option (stay out, cost 0).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property
from typing import IO, Any, Optional, Union

import numpy as np

__all__ = [
    "NONE_D",
    "NONE_S",
    "InstanceError",
    "MarketInstance",
    "ExtendedQualitySet",
    "BidAskCurves",
    "load_instance",
    "read_instance",
    "dump_instance",
    "extend_qualities",
    "bid_ask",
]

# ids used for the outside options in every file format
NONE_D = "_none_d"
NONE_S = "_none_s"


class InstanceError(ValueError):
    """Invalid instance data. ``path`` locates the offending field."""

    def __init__(self, message: str, path: str = ""):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class MarketInstance:
    """A finite hedonic market.

    Attributes
    ----------
    consumer_ids, producer_ids, quality_ids : tuple of str
    consumer_weights : (m,) ndarray
        Mass of each consumer type.
    producer_weights : (n,) ndarray
        Mass of each producer type.
    utilities : (m, K) ndarray
        ``u(x_i, z_k)``.
    costs : (n, K) ndarray
        ``v(y_j, z_k)``.
    quality_coords : (K, d) ndarray or None
    consumer_gradients : (m, K, d1) ndarray or None
        ``D_x u(x_i, z_k)``; only used by purity checks.
    producer_gradients : (n, K, d2) ndarray or None
    """

    consumer_ids: tuple
    consumer_weights: np.ndarray
    utilities: np.ndarray
    producer_ids: tuple
    producer_weights: np.ndarray
    costs: np.ndarray
    quality_ids: tuple
    quality_coords: Optional[np.ndarray] = None
    consumer_gradients: Optional[np.ndarray] = None
    producer_gradients: Optional[np.ndarray] = None

    @classmethod
    def from_arrays(cls, utilities, costs, consumer_weights=None,
                    producer_weights=None, *, consumer_ids=None,
                    producer_ids=None, quality_ids=None, quality_coords=None,
                    consumer_gradients=None, producer_gradients=None):
        """Build and validate an instance from matrices; ids default to x0, y0, z0..."""
        U = np.atleast_2d(np.asarray(utilities, dtype=float))
        V = np.atleast_2d(np.asarray(costs, dtype=float))
        m, n = U.shape[0], V.shape[0]
        K = U.shape[1]
        mu = np.ones(m) if consumer_weights is None else np.asarray(consumer_weights, float)
        nu = np.ones(n) if producer_weights is None else np.asarray(producer_weights, float)
        cid = tuple(consumer_ids) if consumer_ids is not None else tuple(f"x{i}" for i in range(m))
        pid = tuple(producer_ids) if producer_ids is not None else tuple(f"y{j}" for j in range(n))
        qid = tuple(quality_ids) if quality_ids is not None else tuple(f"z{k}" for k in range(K))
        inst = cls(
            consumer_ids=cid,
            consumer_weights=_frozen(mu),
            utilities=_frozen(U),
            producer_ids=pid,
            producer_weights=_frozen(nu),
            costs=_frozen(V),
            quality_ids=qid,
            quality_coords=None if quality_coords is None else _frozen(quality_coords),
            consumer_gradients=None if consumer_gradients is None else _frozen(consumer_gradients),
            producer_gradients=None if producer_gradients is None else _frozen(producer_gradients),
        )
        inst.validate()
        return inst

    @property
    def m(self) -> int:
        return len(self.consumer_ids)

    @property
    def n(self) -> int:
        return len(self.producer_ids)

    @property
    def K(self) -> int:
        return len(self.quality_ids)

    @property
    def nod(self) -> int:
        """Extended index of the consumer outside option."""
        return self.K

    @property
    def nos(self) -> int:
        """Extended index of the producer outside option."""
        return self.K + 1

    @cached_property
    def extended_utilities(self) -> np.ndarray:
        """(m, K+2) utilities with ``u(x, none_d) = 0`` and ``u(x, none_s) = -1``."""
        U = np.empty((self.m, self.K + 2))
        U[:, : self.K] = self.utilities
        U[:, self.K] = 0.0
        U[:, self.K + 1] = -1.0
        U.setflags(write=False)
        return U

    @cached_property
    def extended_costs(self) -> np.ndarray:
        """(n, K+2) costs with ``v(y, none_d) = 1`` and ``v(y, none_s) = 0``."""
        V = np.empty((self.n, self.K + 2))
        V[:, : self.K] = self.costs
        V[:, self.K] = 1.0
        V[:, self.K + 1] = 0.0
        V.setflags(write=False)
        return V

    def extended_ids(self) -> tuple:
        return self.quality_ids + (NONE_D, NONE_S)

    def validate(self) -> None:
        m, n, K = self.m, self.n, self.K
        if m < 1 or n < 1 or K < 1:
            raise InstanceError("dimension mismatch: need at least one consumer, producer and quality")
        _check_ids(self.consumer_ids, "consumers")
        _check_ids(self.producer_ids, "producers")
        _check_ids(self.quality_ids, "qualities")
        for q in (NONE_D, NONE_S):
            if q in self.quality_ids:
                raise InstanceError(f"quality id {q!r} is reserved", "qualities")
        _check_shape(self.consumer_weights, (m,), "consumers[*].weight")
        _check_shape(self.producer_weights, (n,), "producers[*].weight")
        _check_shape(self.utilities, (m, K), "consumers[*].utilities")
        _check_shape(self.costs, (n, K), "producers[*].costs")
        for name, arr in (("consumers", self.consumer_weights), ("producers", self.producer_weights)):
            _check_finite(arr, f"{name}[*].weight")
            bad = np.flatnonzero(arr <= 0)
            if bad.size:
                raise InstanceError("non-positive weight", f"{name}[{bad[0]}].weight")
        _check_finite(self.utilities, "consumers[*].utilities")
        _check_finite(self.costs, "producers[*].costs")
        if self.quality_coords is not None:
            if self.quality_coords.ndim != 2 or self.quality_coords.shape[0] != K:
                raise InstanceError("dimension mismatch", "qualities[*].coords")
            _check_finite(self.quality_coords, "qualities[*].coords")
        for name, arr, rows in (("consumer_gradients", self.consumer_gradients, m),
                                ("producer_gradients", self.producer_gradients, n)):
            if arr is None:
                continue
            if arr.ndim != 3 or arr.shape[:2] != (rows, K):
                raise InstanceError("dimension mismatch", name)
            _check_finite(arr, name)


def _check_ids(ids, path):
    if len(set(ids)) != len(ids):
        raise InstanceError("duplicate id", path)


def _check_shape(arr, shape, path):
    if arr.shape != shape:
        raise InstanceError(f"dimension mismatch: expected shape {shape}, got {arr.shape}", path)


def _check_finite(arr, path):
    if not np.all(np.isfinite(arr)):
        idx = np.argwhere(~np.isfinite(arr))[0]
        where = path.replace("[*]", f"[{idx[0]}]", 1)
        raise InstanceError("non-finite entry", where)


@dataclass(frozen=True)
class ExtendedQualitySet:
    """Index layout of ``Z = Z_0 + {none_d, none_s}``."""

    base_count: int
    index_nod: int
    index_nos: int

    @property
    def size(self) -> int:
        return self.base_count + 2


def extend_qualities(inst: MarketInstance) -> ExtendedQualitySet:
    return ExtendedQualitySet(base_count=inst.K, index_nod=inst.nod, index_nos=inst.nos)


@dataclass(frozen=True)
class BidAskCurves:
    """Highest bid ``b`` and lowest ask ``a`` over the extended set.

    ``marketable`` holds the base indices with ``a <= b``.
    """

    bid: np.ndarray
    ask: np.ndarray
    marketable: np.ndarray

    @property
    def marketable_mask(self) -> np.ndarray:
        mask = np.zeros(self.bid.shape[0] - 2, dtype=bool)
        mask[self.marketable] = True
        return mask


def bid_ask(inst: MarketInstance) -> BidAskCurves:
    bid = inst.extended_utilities.max(axis=0)
    ask = inst.extended_costs.min(axis=0)
    # exact comparison on purpose: tolerances belong to the solvers
    marketable = np.flatnonzero(ask[: inst.K] <= bid[: inst.K])
    return BidAskCurves(bid=bid, ask=ask, marketable=marketable)


# --------------------------------------------------------------------------
# file format

def _num_array(value: Any, path: str, ndim: int) -> np.ndarray:
    try:
        raw = np.array(value)
        if raw.size and raw.dtype.kind not in "iuf":
            raise TypeError(f"got {raw.dtype.kind!r} entries")
        arr = raw.astype(float)
    except (TypeError, ValueError) as exc:
        raise InstanceError(f"parse failure: expected numbers ({exc})", path) from None
    if arr.ndim != ndim:
        raise InstanceError(f"dimension mismatch: expected {ndim}-d array", path)
    return arr


def _number(value: Any, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise InstanceError("parse failure: expected a number", path)
    return float(value)


def _records(doc: dict, key: str) -> list:
    recs = doc.get(key)
    if not isinstance(recs, list):
        raise InstanceError("parse failure: expected a list", key)
    for i, r in enumerate(recs):
        if not isinstance(r, dict):
            raise InstanceError("parse failure: expected an object", f"{key}[{i}]")
        if not isinstance(r.get("id"), str):
            raise InstanceError("parse failure: missing string id", f"{key}[{i}].id")
    return recs


def _parse_float_strict(s: str) -> float:
    raise InstanceError(f"non-finite entry: {s}")


def instance_from_dict(doc: Any) -> MarketInstance:
    if not isinstance(doc, dict):
        raise InstanceError("parse failure: top level must be an object")
    consumers = _records(doc, "consumers")
    producers = _records(doc, "producers")
    qualities = _records(doc, "qualities")
    K = len(qualities)

    def rows(recs, key, field):
        out = []
        for i, r in enumerate(recs):
            path = f"{key}[{i}].{field}"
            if field not in r:
                raise InstanceError("parse failure: missing field", path)
            row = _num_array(r[field], path, 1)
            if row.shape[0] != K:
                raise InstanceError(f"dimension mismatch: length {row.shape[0]}, expected K={K}", path)
            out.append(row)
        return np.array(out, dtype=float).reshape(len(recs), K)

    U = rows(consumers, "consumers", "utilities")
    V = rows(producers, "producers", "costs")
    mu = np.array([_number(r.get("weight"), f"consumers[{i}].weight") for i, r in enumerate(consumers)])
    nu = np.array([_number(r.get("weight"), f"producers[{j}].weight") for j, r in enumerate(producers)])

    coords = None
    if any("coords" in q for q in qualities):
        if not all("coords" in q for q in qualities):
            raise InstanceError("dimension mismatch: coords given for some qualities only", "qualities")
        coords = _num_array([q["coords"] for q in qualities], "qualities[*].coords", 2)

    grads = {}
    for key in ("consumer_gradients", "producer_gradients"):
        if doc.get(key) is not None:
            grads[key] = _num_array(doc[key], key, 3)

    return MarketInstance.from_arrays(
        U, V, mu, nu,
        consumer_ids=[r["id"] for r in consumers],
        producer_ids=[r["id"] for r in producers],
        quality_ids=[q["id"] for q in qualities],
        quality_coords=coords,
        consumer_gradients=grads.get("consumer_gradients"),
        producer_gradients=grads.get("producer_gradients"),
    )


def load_instance(source: Union[bytes, str, IO]) -> MarketInstance:
    """Parse and validate an instance from JSON bytes, text, or a file object.

    Raises
    ------
    InstanceError
        On parse failure, dimension mismatch, non-positive weight or
        non-finite entry; the message carries the field path.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        try:
            source = source.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise InstanceError(f"parse failure: {exc}") from None
    try:
        doc = json.loads(source, parse_constant=_parse_float_strict)
    except json.JSONDecodeError as exc:
        raise InstanceError(f"parse failure: {exc}") from None
    return instance_from_dict(doc)


def read_instance(path) -> MarketInstance:
    with open(path, "rb") as fh:
        return load_instance(fh)


def instance_to_dict(inst: MarketInstance) -> dict:
    doc = {
        "consumers": [
            {"id": cid, "weight": float(w), "utilities": [float(v) for v in row]}
            for cid, w, row in zip(inst.consumer_ids, inst.consumer_weights, inst.utilities)
        ],
        "producers": [
            {"id": pid, "weight": float(w), "costs": [float(v) for v in row]}
            for pid, w, row in zip(inst.producer_ids, inst.producer_weights, inst.costs)
        ],
        "qualities": [{"id": q} for q in inst.quality_ids],
    }
    if inst.quality_coords is not None:
        for rec, c in zip(doc["qualities"], inst.quality_coords):
            rec["coords"] = [float(v) for v in c]
    if inst.consumer_gradients is not None:
        doc["consumer_gradients"] = inst.consumer_gradients.tolist()
    if inst.producer_gradients is not None:
        doc["producer_gradients"] = inst.producer_gradients.tolist()
    return doc


def dump_instance(inst: MarketInstance, fp: Optional[IO] = None) -> str:
    """Serialize to the instance JSON format.

    Floats are written with ``repr`` (shortest round-tripping decimal), so
    ``load_instance(dump_instance(inst))`` reproduces every double.
    """
    text = json.dumps(instance_to_dict(inst), indent=1)
    if fp is not None:
        fp.write(text)
    return text
