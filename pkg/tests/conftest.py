"""Shared builders for events, instances, and graphs."""

from __future__ import annotations

import itertools
from datetime import datetime, timedelta, timezone

import pytest

from problemchild.graph import ProcessEdge, ProcessGraph, ProcessNode
from problemchild.ingest import (EventType, IntegrityLevel, Label,
                                 ProcessEvent, ProcessInstance,
                                 SignatureStatus, TriState)

T0 = datetime(2024, 3, 11, 9, 0, 0, tzinfo=timezone.utc)

_seq = itertools.count(1)


def make_event(name="cmd.exe", guid=None, parent_guid=None, parent_name=None,
               host="ws01", t_offset=0.0, event_type=EventType.CREATE,
               cmdline="", user="CORP\\alice", parent_user=None, label=None,
               group_id=None, path=None, signature=SignatureStatus.SIGNED_VALID,
               integrity=IntegrityLevel.MEDIUM, pid=0, ppid=0,
               parent_command_line=None):
    n = next(_seq)
    return ProcessEvent(
        event_id=f"evt-{n:05d}",
        host_id=host,
        timestamp=T0 + timedelta(seconds=t_offset),
        event_type=event_type,
        process_guid=guid or f"guid-{n:05d}",
        pid=pid or n,
        ppid=ppid,
        process_name=name,
        process_path=path if path is not None else f"C:\\Windows\\System32\\{name}",
        command_line=cmdline,
        parent_guid=parent_guid,
        parent_name=parent_name,
        parent_command_line=parent_command_line,
        user=user,
        parent_user=parent_user,
        signature_status=signature,
        is_elevated=TriState.FALSE,
        integrity_level=integrity,
        is_system_account=TriState.FALSE,
        label=label,
        group_id=group_id,
    )


def make_instance(name="cmd.exe", guid=None, parent_guid=None,
                  parent_name=None, lifetime=5.0, **kwargs):
    event = make_event(name=name, guid=guid, parent_guid=parent_guid,
                       parent_name=parent_name, **kwargs)
    return ProcessInstance(guid=event.process_guid, create_event=event,
                           lifetime_seconds=lifetime)


def make_graph(edges, extra_nodes=()):
    """Build a ProcessGraph straight from (parent, child, weight) triples
    plus any isolated node names; node guid == name."""
    graph = ProcessGraph()

    def ensure(name):
        if name not in graph.nodes:
            graph.nodes[name] = ProcessNode(guid=name, process_name=name)

    for parent, child, weight in edges:
        ensure(parent)
        ensure(child)
        graph.edges.append(ProcessEdge(parent, child, weight))
        graph.nodes[child].weight = weight
    for name in extra_nodes:
        ensure(name)
    return graph


@pytest.fixture
def label_benign():
    return Label.BENIGN


@pytest.fixture
def label_malicious():
    return Label.MALICIOUS
