import numpy as np
import pytest

from conftest import build_instance
from plastsim import wire
from plastsim.connectivity import SynapseRequest, SynapseResponse
from plastsim.wire import MessageKind, WireError


def test_message_roundtrip():
    data = wire.encode_message(MessageKind.DELETION_NOTICE, 3, 5, b"abc")
    kind, sender, receiver, payload = wire.decode_message(data)
    assert (kind, sender, receiver, payload) == (MessageKind.DELETION_NOTICE, 3, 5, b"abc")


def test_bad_magic_rejected():
    data = bytearray(wire.encode_message(MessageKind.DELETION_NOTICE, 0, 1, b""))
    data[0] ^= 0xFF
    with pytest.raises(WireError, match="magic"):
        wire.decode_message(bytes(data))


def test_truncated_payload_rejected():
    data = wire.encode_message(MessageKind.DELETION_NOTICE, 0, 1, b"abcd")
    with pytest.raises(WireError):
        wire.decode_message(data[:-2])


def test_summary_roundtrip():
    _, _, _, _, tree, _ = build_instance(16, seed=30, vac_low=0, vac_high=3)
    for node in list(tree.nodes_by_path.values())[:10]:
        summary = tree.summary_of(node)
        payload = wire.encode_branch_exchange({summary.path: summary})
        decoded = wire.decode_branch_exchange(payload)[summary.path]
        assert decoded.path == summary.path
        assert decoded.level == summary.level
        assert decoded.axons_sum == summary.axons_sum
        assert decoded.dendrites_sum == summary.dendrites_sum
        assert decoded.side == summary.side
        assert np.allclose(decoded.origin, summary.origin)
        if summary.axons_centroid is None:
            assert decoded.axons_centroid is None
        else:
            assert decoded.axons_centroid.tolist() == summary.axons_centroid.tolist()
        assert decoded.child_mask == summary.child_mask
        if summary.neuron is not None:
            nid, pos, va, vd = summary.neuron
            did, dpos, dva, dvd = decoded.neuron
            assert (nid, va, vd) == (did, dva, dvd)
            assert dpos.tolist() == pos.tolist()


def test_empty_octant_roundtrip():
    payload = wire.encode_branch_exchange({(3,): None})
    assert wire.decode_branch_exchange(payload) == {(3,): None}


def test_fetch_roundtrip():
    payload = wire.encode_fetch_request(wire.FETCH_POINTS, (1, 2, 3))
    assert wire.decode_fetch_request(payload) == (wire.FETCH_POINTS, (1, 2, 3))

    ids = np.array([4, 9], dtype=np.int64)
    positions = np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    va = np.array([1, 0], dtype=np.int64)
    vd = np.array([0, 2], dtype=np.int64)
    reply = wire.encode_fetch_reply(wire.FETCH_POINTS, (1,), (ids, positions, va, vd))
    mode, path, (rids, rpos, rva, rvd) = wire.decode_fetch_reply(reply)
    assert mode == wire.FETCH_POINTS
    assert path == (1,)
    assert rids.tolist() == [4, 9]
    assert rpos.tolist() == positions.tolist()
    assert rva.tolist() == [1, 0]
    assert rvd.tolist() == [0, 2]


def test_request_response_batch_roundtrip():
    reqs = [SynapseRequest(1, 2, 3), SynapseRequest(4, 5, 1)]
    assert wire.decode_request_batch(wire.encode_request_batch(reqs)) == reqs
    resps = [SynapseResponse(1, 2, 3, 2)]
    assert wire.decode_response_batch(wire.encode_response_batch(resps)) == resps


def test_deletions_roundtrip():
    deletions = [(1, 2, "axon"), (5, 1, "dendrite")]
    assert wire.decode_deletions(wire.encode_deletions(deletions)) == deletions


def test_trailing_bytes_rejected():
    payload = wire.encode_fetch_request(wire.FETCH_NODE, (1,)) + b"x"
    with pytest.raises(WireError, match="trailing"):
        wire.decode_fetch_request(payload)
