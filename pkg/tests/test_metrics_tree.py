"""Metric tree construction, timing, serialization, and summaries."""

from __future__ import annotations

import json
from random import Random

import pytest

from peerprof.errors import (
    AlreadyStoppedError,
    DepthLimitError,
    DuplicateChildError,
    EmptyNameError,
    MalformedError,
    NegativeQuantityError,
    NoMatchError,
    NotStartedError,
    StopBeforeStartError,
    UnknownVersionError,
)
from peerprof.metrics_tree import (
    COUNT,
    LATENCY,
    SIZE,
    CROSS_CLOCK_WARNING,
    MetricNode,
    custom,
    deserialize,
    new_root,
)

from conftest import random_tree


def test_new_root_is_empty():
    root = new_root("benchmark")
    assert root.name == "benchmark"
    assert root.children == []
    assert root.start_ts is None and root.stop_ts is None


def test_new_root_rejects_empty_name():
    with pytest.raises(EmptyNameError):
        new_root("")


def test_child_composition_depth_two():
    root = new_root("iteration-0")
    root.start_timing("sensing", LATENCY, now=10)
    assert len(root.children) == 1
    assert root.child("sensing").start_ts == 10


def test_start_timing_sets_start():
    root = new_root("r")
    child = root.start_timing("upload", LATENCY, now=1_000)
    assert child.start_ts == 1_000
    assert child.stop_ts is None


def test_duplicate_sibling_name_rejected():
    root = new_root("r")
    root.start_timing("upload", LATENCY, now=1)
    with pytest.raises(DuplicateChildError):
        root.start_timing("upload", LATENCY, now=2)


def test_nested_start_under_open_child():
    root = new_root("r")
    outer = root.start_timing("outer", LATENCY, now=1)
    inner = outer.start_timing("inner", LATENCY, now=2)
    assert root.child("outer").child("inner") is inner


def test_stop_returns_elapsed():
    root = new_root("r")
    child = root.start_timing("span", LATENCY, now=1_000)
    assert child.stop_timing(3_500) == 2_500
    assert child.value == 2_500


def test_double_stop_rejected():
    root = new_root("r")
    child = root.start_timing("span", LATENCY, now=1)
    child.stop_timing(2)
    with pytest.raises(AlreadyStoppedError):
        child.stop_timing(3)


def test_stop_without_start_rejected():
    node = MetricNode("leaf", COUNT)
    with pytest.raises(NotStartedError):
        node.stop_timing(5)


def test_cross_clock_negative_preserved_with_warning():
    # sender clock runs ahead of the receiver's: raw elapsed is negative
    root = new_root("r")
    child = root.start_timing("upload", LATENCY, now=10_000_000)
    elapsed = child.stop_timing(9_000_000, cross_clock=True)
    assert elapsed == -1_000_000
    assert child.value == -1_000_000
    assert child.warning == CROSS_CLOCK_WARNING


def test_same_clock_stop_before_start_rejected():
    root = new_root("r")
    child = root.start_timing("span", LATENCY, now=10)
    with pytest.raises(StopBeforeStartError):
        child.stop_timing(5)


def test_cross_clock_positive_has_no_warning():
    root = new_root("r")
    child = root.start_timing("span", LATENCY, now=10)
    child.stop_timing(20, cross_clock=True)
    assert child.warning is None


def test_record_value_leaf():
    root = new_root("r")
    leaf = root.record_value("upload_size", SIZE, 1048576, "bytes")
    assert leaf.value == 1048576
    assert leaf.unit == "bytes"
    assert leaf.start_ts is None and leaf.stop_ts is None


def test_record_negative_size_rejected():
    root = new_root("r")
    with pytest.raises(NegativeQuantityError):
        root.record_value("upload_size", SIZE, -1, "bytes")


def test_record_custom_kind():
    root = new_root("r")
    leaf = root.record_value("tokens", custom("tokens"), 42, "count")
    assert leaf.kind.label == "tokens"
    assert leaf.value == 42


def test_custom_label_limits():
    with pytest.raises(EmptyNameError):
        custom("")
    with pytest.raises(EmptyNameError):
        custom("x" * 65)


def test_latency_record_value_may_be_negative():
    # corrected cross-clock latencies can legitimately come out negative
    root = new_root("r")
    leaf = root.record_value("upload_latency", LATENCY, -1_500_000, "ns")
    assert leaf.value == -1_500_000


# --- serialization ----------------------------------------------------------


def test_empty_root_roundtrip():
    root = new_root("benchmark")
    data = root.serialize()
    assert deserialize(data) == root
    assert json.loads(data) == {"name": "benchmark", "kind": "custom:group"}


def test_canonical_key_order():
    root = new_root("r", LATENCY)
    root.start_ts = 1
    root.stop_ts = 2
    root.value = 1
    root.unit = "ns"
    root.warning = "w"
    root.start_timing("c", COUNT, now=0)
    data = root.serialize().decode()
    assert data.startswith(
        '{"name":"r","kind":"latency","start_ts":1,"stop_ts":2,"value":1,'
        '"unit":"ns","warning":"w","children":['
    )


def test_random_trees_roundtrip_bit_exact(rng):
    for _ in range(200):
        tree = random_tree(rng)
        data = tree.serialize()
        back = deserialize(data)
        assert back == tree
        assert back.serialize() == data


def test_truncated_bytes_malformed(rng):
    tree = random_tree(rng, max_depth=3, max_nodes=10)
    data = tree.serialize()
    for cut in (1, len(data) // 2, len(data) - 1):
        with pytest.raises(MalformedError):
            deserialize(data[:cut])


def test_unknown_fields_malformed():
    with pytest.raises(MalformedError):
        deserialize(b'{"name":"x","kind":"count","bogus":1}')


def test_unknown_kind_malformed():
    with pytest.raises(MalformedError):
        deserialize(b'{"name":"x","kind":"speed"}')


def test_duplicate_sibling_names_malformed():
    blob = (
        b'{"name":"r","kind":"count","children":['
        b'{"name":"a","kind":"count"},{"name":"a","kind":"count"}]}'
    )
    with pytest.raises(MalformedError):
        deserialize(blob)


def test_version_key_handling():
    assert deserialize(b'{"version":1,"name":"x","kind":"count"}').name == "x"
    with pytest.raises(UnknownVersionError):
        deserialize(b'{"version":2,"name":"x","kind":"count"}')


def test_depth_cap_on_serialize_and_deserialize():
    root = new_root("d0")
    node = root
    for i in range(1, 65):
        node = node.start_timing(f"d{i}", LATENCY, now=0)
    with pytest.raises(DepthLimitError):
        root.serialize()

    blob = '{"name":"x","kind":"count"}'
    for _ in range(65):
        blob = '{"name":"x","kind":"count","children":[' + blob + "]}"
    with pytest.raises(DepthLimitError):
        deserialize(blob.encode())


def test_non_finite_value_malformed():
    with pytest.raises(MalformedError):
        deserialize(b'{"name":"x","kind":"count","value":NaN}')


# --- merging -----------------------------------------------------------------


def test_merge_grafts_subtree():
    local = new_root("iteration-3")
    local.start_timing("sensing", LATENCY, now=1).stop_timing(2)
    remote = new_root("server-side")
    remote.start_timing("inference", LATENCY, now=5).stop_timing(9)
    before = len(local.children)
    local.merge_remote(remote)
    assert len(local.children) == before + 1
    assert local.child("server-side").child("inference").value == 4


def test_merge_name_collision_rejected():
    local = new_root("it")
    local.start_timing("server-side", LATENCY, now=1)
    with pytest.raises(DuplicateChildError):
        local.merge_remote(new_root("server-side"))


def test_merge_then_roundtrip_keeps_both_sides():
    local = new_root("it")
    local.start_timing("sensing", LATENCY, now=1).stop_timing(4)
    remote = new_root("remote")
    remote.start_timing("upload", LATENCY, now=2).stop_timing(3, cross_clock=True)
    local.merge_remote(remote)
    back = deserialize(local.serialize())
    assert back.child("sensing").value == 3
    assert back.child("remote").child("upload").value == 1


# --- summaries ---------------------------------------------------------------


def _iteration_tree(values):
    root = new_root("run")
    for i, v in enumerate(values):
        it = root.start_timing(f"iteration-{i}", LATENCY, now=0)
        it.record_value("sensing", LATENCY, v, "ns")
        it.stop_timing(10)
    return root


def test_summarize_mean_and_std():
    root = _iteration_tree([1, 2, 3])
    stats = root.summarize("*/sensing")
    assert stats.n == 3
    assert stats.mean == 2.0
    assert stats.std == 1.0
    assert (stats.min, stats.max) == (1, 3)


def test_summarize_single_value_std_zero():
    stats = _iteration_tree([5]).summarize("*/sensing")
    assert stats.n == 1
    assert stats.mean == 5.0
    assert stats.std == 0.0


def test_summarize_copies_of_same_value():
    stats = _iteration_tree([7] * 9).summarize("*/sensing")
    assert stats.mean == 7.0
    assert stats.std == 0.0


def test_summarize_no_match_rejected():
    root = _iteration_tree([1])
    with pytest.raises(NoMatchError):
        root.summarize("*/nonexistent")


def test_summarize_exact_segment_path():
    root = new_root("run")
    it = root.start_timing("iteration-0", LATENCY, now=0)
    sub = it.start_timing("remote", LATENCY, now=0)
    sub.record_value("inference", LATENCY, 11, "ns")
    stats = root.summarize("iteration-0/remote/inference")
    assert stats.mean == 11.0


def test_open_nodes_do_not_contribute():
    root = new_root("run")
    it = root.start_timing("iteration-0", LATENCY, now=0)
    it.start_timing("sensing", LATENCY, now=5)  # never stopped
    with pytest.raises(NoMatchError):
        root.summarize("*/sensing")


def test_closed_same_clock_latency_nonnegative(rng):
    # property: start <= stop on one clock implies value >= 0
    for _ in range(100):
        a = rng.randrange(0, 2**40)
        b = a + rng.randrange(0, 2**20)
        root = new_root("r")
        node = root.start_timing("span", LATENCY, now=a)
        node.stop_timing(b)
        assert node.value >= 0
