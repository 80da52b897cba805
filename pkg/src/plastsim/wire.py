"""Binary message encoding for the logical-rank transport.

Every message is a little-endian, length-prefixed record:

    offset  size  field
    0       2     magic 0x5053 ("PS")
    2       1     format version (currently 1)
    3       1     message kind
    4       4     sender rank (u32)
    8       4     receiver rank (u32)
    12      4     payload length in bytes (u32)
    16      ...   payload

Variable-length payload fields carry their own prefixes: octree paths are a
u8 digit count followed by one byte per octant digit, and repeated records
a u32 count followed by fixed-layout entries.  Absent centroids travel as
NaN triples.  See README for the per-kind payload layouts.
"""

from __future__ import annotations

import math
import struct
from enum import IntEnum

import numpy as np

from .connectivity import SynapseRequest, SynapseResponse
from .octree import NodeSummary

MAGIC = 0x5053
VERSION = 1

_HEADER = struct.Struct("<HBBIII")


class MessageKind(IntEnum):
    BRANCH_EXCHANGE = 1
    NODE_FETCH_REQUEST = 2
    NODE_FETCH_REPLY = 3
    SYNAPSE_REQUEST_BATCH = 4
    SYNAPSE_RESPONSE_BATCH = 5
    DELETION_NOTICE = 6


class WireError(ValueError):
    pass


def encode_message(kind: MessageKind, sender: int, receiver: int, payload: bytes) -> bytes:
    return _HEADER.pack(MAGIC, VERSION, int(kind), sender, receiver, len(payload)) + payload


def decode_message(data: bytes):
    if len(data) < _HEADER.size:
        raise WireError("message shorter than header")
    magic, version, kind, sender, receiver, length = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise WireError(f"bad magic 0x{magic:04x}")
    if version != VERSION:
        raise WireError(f"unsupported version {version}")
    payload = data[_HEADER.size:]
    if len(payload) != length:
        raise WireError(f"payload length {len(payload)} != declared {length}")
    return MessageKind(kind), sender, receiver, payload


class _Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", v))

    def vec3(self, v):
        if v is None:
            self.parts.append(struct.pack("<3d", math.nan, math.nan, math.nan))
        else:
            self.parts.append(struct.pack("<3d", float(v[0]), float(v[1]), float(v[2])))

    def path(self, p):
        self.u8(len(p))
        self.parts.append(bytes(p))

    def getvalue(self) -> bytes:
        return b"".join(self.parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def _take(self, fmt):
        s = struct.Struct(fmt)
        if self.pos + s.size > len(self.data):
            raise WireError("truncated payload")
        vals = s.unpack_from(self.data, self.pos)
        self.pos += s.size
        return vals

    def u8(self):
        return self._take("<B")[0]

    def u32(self):
        return self._take("<I")[0]

    def u64(self):
        return self._take("<Q")[0]

    def f64(self):
        return self._take("<d")[0]

    def vec3(self):
        vals = self._take("<3d")
        if math.isnan(vals[0]):
            return None
        return np.array(vals)

    def path(self):
        n = self.u8()
        if self.pos + n > len(self.data):
            raise WireError("truncated path")
        p = tuple(self.data[self.pos:self.pos + n])
        self.pos += n
        return p

    def done(self):
        if self.pos != len(self.data):
            raise WireError(f"{len(self.data) - self.pos} trailing bytes")


def _write_summary(w: _Writer, s: NodeSummary | None):
    if s is None:
        w.u8(0)
        return
    w.u8(1)
    w.path(s.path)
    w.u8(s.level)
    w.vec3(s.origin)
    w.f64(s.side)
    w.u64(s.axons_sum)
    w.u64(s.dendrites_sum)
    w.vec3(s.axons_centroid)
    w.vec3(s.dendrites_centroid)
    w.u8(s.child_mask)
    if s.neuron is None:
        w.u8(0)
    else:
        nid, pos, va, vd = s.neuron
        w.u8(1)
        w.u64(nid)
        w.vec3(pos)
        w.u32(va)
        w.u32(vd)


def _read_summary(r: _Reader) -> NodeSummary | None:
    if r.u8() == 0:
        return None
    path = r.path()
    level = r.u8()
    origin = tuple(r.vec3())
    side = r.f64()
    axons_sum = r.u64()
    dendrites_sum = r.u64()
    a_cent = r.vec3()
    d_cent = r.vec3()
    mask = r.u8()
    neuron = None
    if r.u8():
        nid = r.u64()
        pos = r.vec3()
        va = r.u32()
        vd = r.u32()
        neuron = (nid, pos, va, vd)
    return NodeSummary(path, level, origin, side, axons_sum, dendrites_sum,
                       a_cent, d_cent, mask, neuron)


def encode_branch_exchange(octants: dict) -> bytes:
    """octants: {octant path: NodeSummary or None for an empty octant}."""
    w = _Writer()
    w.u32(len(octants))
    for path in sorted(octants):
        w.path(path)
        _write_summary(w, octants[path])
    return w.getvalue()


def decode_branch_exchange(payload: bytes) -> dict:
    r = _Reader(payload)
    count = r.u32()
    octants = {}
    for _ in range(count):
        path = r.path()
        octants[path] = _read_summary(r)
    r.done()
    return octants


FETCH_NODE = 0
FETCH_POINTS = 1


def encode_fetch_request(mode: int, path: tuple) -> bytes:
    w = _Writer()
    w.u8(mode)
    w.path(path)
    return w.getvalue()


def decode_fetch_request(payload: bytes):
    r = _Reader(payload)
    mode = r.u8()
    path = r.path()
    r.done()
    return mode, path


def encode_fetch_reply(mode: int, path: tuple, body) -> bytes:
    w = _Writer()
    w.u8(mode)
    w.path(path)
    if mode == FETCH_NODE:
        _write_summary(w, body)
    else:
        ids, positions, va, vd = body
        w.u32(len(ids))
        for i in range(len(ids)):
            w.u64(int(ids[i]))
            w.vec3(positions[i])
            w.u32(int(va[i]))
            w.u32(int(vd[i]))
    return w.getvalue()


def decode_fetch_reply(payload: bytes):
    r = _Reader(payload)
    mode = r.u8()
    path = r.path()
    if mode == FETCH_NODE:
        body = _read_summary(r)
    else:
        count = r.u32()
        ids = np.empty(count, dtype=np.int64)
        positions = np.empty((count, 3))
        va = np.empty(count, dtype=np.int64)
        vd = np.empty(count, dtype=np.int64)
        for i in range(count):
            ids[i] = r.u64()
            positions[i] = r.vec3()
            va[i] = r.u32()
            vd[i] = r.u32()
        body = (ids, positions, va, vd)
    r.done()
    return mode, path, body


def encode_request_batch(requests: list[SynapseRequest]) -> bytes:
    w = _Writer()
    w.u32(len(requests))
    for req in requests:
        w.u64(req.axon_neuron)
        w.u64(req.dendrite_neuron)
        w.u32(req.count)
    return w.getvalue()


def decode_request_batch(payload: bytes) -> list[SynapseRequest]:
    r = _Reader(payload)
    count = r.u32()
    out = [SynapseRequest(r.u64(), r.u64(), r.u32()) for _ in range(count)]
    r.done()
    return out


def encode_response_batch(responses: list[SynapseResponse]) -> bytes:
    w = _Writer()
    w.u32(len(responses))
    for resp in responses:
        w.u64(resp.axon_neuron)
        w.u64(resp.dendrite_neuron)
        w.u32(resp.requested)
        w.u32(resp.accepted)
    return w.getvalue()


def decode_response_batch(payload: bytes) -> list[SynapseResponse]:
    r = _Reader(payload)
    count = r.u32()
    out = [SynapseResponse(r.u64(), r.u64(), r.u32(), r.u32()) for _ in range(count)]
    r.done()
    return out


def encode_deletions(deletions: list[tuple]) -> bytes:
    """deletions: (initiator id, partner id, side) with side 'axon' or 'dendrite'."""
    w = _Writer()
    w.u32(len(deletions))
    for initiator, partner, side in deletions:
        w.u64(initiator)
        w.u64(partner)
        w.u8(0 if side == "axon" else 1)
    return w.getvalue()


def decode_deletions(payload: bytes) -> list[tuple]:
    r = _Reader(payload)
    count = r.u32()
    out = []
    for _ in range(count):
        initiator = r.u64()
        partner = r.u64()
        side = "axon" if r.u8() == 0 else "dendrite"
        out.append((initiator, partner, side))
    r.done()
    return out
