"""Process telemetry ingestion.

Parses exported process telemetry (JSON lines) into normalized
ProcessEvent records and pairs create/terminate events into process
instances.

Canonical event format
----------------------
UTF-8 JSONL, one object per line, field names exactly matching the
ProcessEvent fields below (snake_case), timestamps as RFC 3339 strings
with millisecond precision. Files written by other exporters are
adapted with a schema map: a flat {source_field: canonical_field}
mapping. A built-in map for Sysmon Operational-log JSON exports is
provided (EventID 1 = create, EventID 5 = terminate).

Malformed lines are never fatal: they are skipped and recorded in a
skip report of {line_no, reason} entries.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Iterator, Optional, Sequence, Union

log = logging.getLogger(__name__)

DEFAULT_DELTA_T_CAP = 86400.0


class EventType(str, enum.Enum):
    CREATE = "CREATE"
    TERMINATE = "TERMINATE"


class SignatureStatus(str, enum.Enum):
    SIGNED_VALID = "SIGNED_VALID"
    SIGNED_INVALID = "SIGNED_INVALID"
    UNSIGNED = "UNSIGNED"
    UNKNOWN = "UNKNOWN"


class TriState(str, enum.Enum):
    TRUE = "TRUE"
    FALSE = "FALSE"
    UNKNOWN = "UNKNOWN"


class IntegrityLevel(str, enum.Enum):
    LOW = "LOW"
    MEDIUM = "MEDIUM"
    HIGH = "HIGH"
    SYSTEM = "SYSTEM"
    UNKNOWN = "UNKNOWN"


class Label(str, enum.Enum):
    BENIGN = "BENIGN"
    MALICIOUS = "MALICIOUS"


# Sysmon Operational-log JSON export -> canonical fields. Ordering
# matters for fields that feed the same canonical slot: the first
# source field present wins (SignatureStatus is more specific than
# Signed).
SYSMON_SCHEMA_MAP = {
    "EventID": "event_type",
    "UtcTime": "timestamp",
    "Computer": "host_id",
    "ProcessGuid": "process_guid",
    "ParentProcessGuid": "parent_guid",
    "ProcessId": "pid",
    "ParentProcessId": "ppid",
    "Image": "process_path",
    "CommandLine": "command_line",
    "ParentImage": "parent_name",
    "ParentCommandLine": "parent_command_line",
    "User": "user",
    "ParentUser": "parent_user",
    "SignatureStatus": "signature_status",
    "Signed": "signature_status",
    "IntegrityLevel": "integrity_level",
    "RecordNumber": "event_id",
}

_EVENT_TYPE_ALIASES = {
    "1": EventType.CREATE,
    "5": EventType.TERMINATE,
    "CREATE": EventType.CREATE,
    "TERMINATE": EventType.TERMINATE,
    "PROCESS_CREATE": EventType.CREATE,
    "PROCESS_TERMINATE": EventType.TERMINATE,
}

_SIGNATURE_ALIASES = {
    "SIGNED_VALID": SignatureStatus.SIGNED_VALID,
    "SIGNED_INVALID": SignatureStatus.SIGNED_INVALID,
    "UNSIGNED": SignatureStatus.UNSIGNED,
    "UNKNOWN": SignatureStatus.UNKNOWN,
    "VALID": SignatureStatus.SIGNED_VALID,
    "INVALID": SignatureStatus.SIGNED_INVALID,
    "EXPIRED": SignatureStatus.SIGNED_INVALID,
    "REVOKED": SignatureStatus.SIGNED_INVALID,
    "TRUE": SignatureStatus.SIGNED_VALID,
    "FALSE": SignatureStatus.UNSIGNED,
}

_SYSTEM_ACCOUNTS = {
    "system",
    "local system",
    "nt authority\\system",
    "nt authority\\local service",
    "nt authority\\network service",
}


@dataclass
class ProcessEvent:
    """One normalized process create/terminate record."""

    event_id: str
    host_id: str
    timestamp: datetime
    event_type: EventType
    process_guid: str
    pid: int = 0
    ppid: int = 0
    process_name: str = ""
    process_path: str = ""
    command_line: str = ""
    parent_guid: Optional[str] = None
    parent_name: Optional[str] = None
    parent_command_line: Optional[str] = None
    user: str = ""
    parent_user: Optional[str] = None
    signature_status: SignatureStatus = SignatureStatus.UNKNOWN
    is_elevated: TriState = TriState.UNKNOWN
    integrity_level: IntegrityLevel = IntegrityLevel.UNKNOWN
    is_system_account: TriState = TriState.UNKNOWN
    label: Optional[Label] = None
    group_id: Optional[str] = None
    source_line: Optional[int] = field(default=None, compare=False, repr=False)

    def to_json_dict(self) -> dict:
        d = {
            "event_id": self.event_id,
            "host_id": self.host_id,
            "timestamp": format_timestamp(self.timestamp),
            "event_type": self.event_type.value,
            "process_guid": self.process_guid,
            "pid": self.pid,
            "ppid": self.ppid,
            "process_name": self.process_name,
            "process_path": self.process_path,
            "command_line": self.command_line,
            "user": self.user,
            "signature_status": self.signature_status.value,
            "is_elevated": self.is_elevated.value,
            "integrity_level": self.integrity_level.value,
            "is_system_account": self.is_system_account.value,
        }
        if self.parent_guid is not None:
            d["parent_guid"] = self.parent_guid
        if self.parent_name is not None:
            d["parent_name"] = self.parent_name
        if self.parent_command_line is not None:
            d["parent_command_line"] = self.parent_command_line
        if self.parent_user is not None:
            d["parent_user"] = self.parent_user
        if self.label is not None:
            d["label"] = self.label.value
        if self.group_id is not None:
            d["group_id"] = self.group_id
        return d

    def to_json_line(self) -> str:
        return json.dumps(self.to_json_dict(), separators=(",", ":"))


@dataclass
class ProcessInstance:
    """One observed process lifetime, keyed by its instance guid."""

    guid: str
    create_event: ProcessEvent
    terminate_timestamp: Optional[datetime] = None
    lifetime_seconds: float = DEFAULT_DELTA_T_CAP

    @property
    def process_name(self) -> str:
        return self.create_event.process_name

    @property
    def parent_guid(self) -> Optional[str]:
        return self.create_event.parent_guid

    @property
    def parent_name(self) -> Optional[str]:
        return self.create_event.parent_name


@dataclass
class SkipRecord:
    line_no: int
    reason: str

    def to_json_line(self) -> str:
        return json.dumps({"line_no": self.line_no, "reason": self.reason},
                          separators=(",", ":"))


@dataclass
class ParseResult:
    events: list
    skipped: list

    def write_skip_report(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for rec in self.skipped:
                fh.write(rec.to_json_line() + "\n")


@dataclass
class PairResult:
    instances: list
    unmatched_terminates: int = 0
    duplicate_creates: int = 0


def basename_lower(path: str) -> str:
    """Lowercased file basename; splits on both Windows and POSIX separators."""
    tail = path.replace("\\", "/").rsplit("/", 1)[-1]
    return tail.lower()


def parse_timestamp(raw) -> datetime:
    """Parse an RFC 3339 or 'YYYY-MM-DD HH:MM:SS.fff' timestamp to UTC.

    Naive timestamps are assumed UTC. Precision is truncated to
    milliseconds so serialization round-trips exactly.
    """
    if isinstance(raw, datetime):
        dt = raw
    else:
        text = str(raw).strip()
        if text.endswith("Z"):
            text = text[:-1] + "+00:00"
        if " " in text and "T" not in text:
            text = text.replace(" ", "T", 1)
        dt = datetime.fromisoformat(text)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    dt = dt.astimezone(timezone.utc)
    return dt.replace(microsecond=(dt.microsecond // 1000) * 1000)


def format_timestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).isoformat(timespec="milliseconds").replace(
        "+00:00", "Z")


def _parse_tristate(raw) -> TriState:
    if isinstance(raw, bool):
        return TriState.TRUE if raw else TriState.FALSE
    text = str(raw).strip().upper()
    if text in ("TRUE", "1", "YES"):
        return TriState.TRUE
    if text in ("FALSE", "0", "NO"):
        return TriState.FALSE
    return TriState.UNKNOWN


def _parse_signature(raw) -> SignatureStatus:
    if isinstance(raw, bool):
        return SignatureStatus.SIGNED_VALID if raw else SignatureStatus.UNSIGNED
    return _SIGNATURE_ALIASES.get(str(raw).strip().upper(),
                                  SignatureStatus.UNKNOWN)


def _parse_integrity(raw) -> IntegrityLevel:
    text = str(raw).strip().upper()
    try:
        return IntegrityLevel(text)
    except ValueError:
        return IntegrityLevel.UNKNOWN


def _apply_schema_map(record: dict, schema_map: dict) -> dict:
    mapped = {}
    for source, canonical in schema_map.items():
        if source in record and canonical not in mapped:
            mapped[canonical] = record[source]
    return mapped


def _synth_guid(host_id: str, pid: int, ts: datetime) -> str:
    digest = hashlib.sha256(
        f"{host_id}|{pid}|{format_timestamp(ts)}".encode("utf-8")).hexdigest()
    return "synth-" + digest[:32]


def _synth_event_id(host_id: str, etype: EventType, guid: str,
                    ts: datetime) -> str:
    digest = hashlib.sha256(
        f"{host_id}|{etype.value}|{guid}|{format_timestamp(ts)}".encode(
            "utf-8")).hexdigest()
    return "evt-" + digest[:16]


def event_from_record(record: dict, line_no: int = 0,
                      schema_map: Optional[dict] = None) -> ProcessEvent:
    """Build a ProcessEvent from one decoded JSON object.

    Raises IngestError on schema violations; the caller turns those
    into skip-report entries.
    """
    from .errors import IngestError

    if not isinstance(record, dict):
        raise IngestError("record is not a JSON object")
    if schema_map:
        record = _apply_schema_map(record, schema_map)

    raw_type = record.get("event_type")
    if raw_type is None:
        raise IngestError("missing event_type")
    etype = _EVENT_TYPE_ALIASES.get(str(raw_type).strip().upper())
    if etype is None:
        raise IngestError(f"unrecognized event_type {raw_type!r}")

    raw_ts = record.get("timestamp")
    if raw_ts is None:
        raise IngestError("missing timestamp")
    try:
        ts = parse_timestamp(raw_ts)
    except (ValueError, TypeError) as exc:
        raise IngestError(f"bad timestamp {raw_ts!r}: {exc}") from None

    host_id = str(record.get("host_id") or "unknown")

    def _int_field(name: str) -> int:
        raw = record.get(name)
        if raw is None or raw == "":
            return 0
        try:
            value = int(raw)
        except (ValueError, TypeError):
            raise IngestError(f"non-integer {name} {raw!r}") from None
        if value < 0:
            raise IngestError(f"negative {name} {value}")
        return value

    pid = _int_field("pid")
    ppid = _int_field("ppid")

    path = str(record.get("process_path") or "")
    name = str(record.get("process_name") or "")
    if path:
        name = basename_lower(path)
    elif name:
        name = basename_lower(name)
    if etype is EventType.CREATE and not name:
        raise IngestError("CREATE without process_name or process_path")

    guid = record.get("process_guid")
    if guid is None or str(guid) == "":
        if etype is EventType.TERMINATE and pid == 0:
            raise IngestError("TERMINATE without process_guid or pid")
        guid = _synth_guid(host_id, pid, ts)
    guid = str(guid)

    parent_guid = record.get("parent_guid")
    parent_guid = str(parent_guid) if parent_guid not in (None, "") else None
    parent_name = record.get("parent_name")
    parent_name = basename_lower(str(parent_name)) if parent_name not in (
        None, "") else None
    parent_cmdline = record.get("parent_command_line")
    parent_cmdline = str(parent_cmdline) if parent_cmdline is not None else None
    parent_user = record.get("parent_user")
    parent_user = str(parent_user) if parent_user is not None else None

    user = str(record.get("user") or "")

    signature = (_parse_signature(record["signature_status"])
                 if "signature_status" in record else SignatureStatus.UNKNOWN)
    integrity = (_parse_integrity(record["integrity_level"])
                 if "integrity_level" in record else IntegrityLevel.UNKNOWN)

    if "is_elevated" in record:
        elevated = _parse_tristate(record["is_elevated"])
    elif integrity in (IntegrityLevel.HIGH, IntegrityLevel.SYSTEM):
        elevated = TriState.TRUE
    elif integrity in (IntegrityLevel.LOW, IntegrityLevel.MEDIUM):
        elevated = TriState.FALSE
    else:
        elevated = TriState.UNKNOWN

    if "is_system_account" in record:
        is_system = _parse_tristate(record["is_system_account"])
    elif user:
        is_system = (TriState.TRUE if user.lower() in _SYSTEM_ACCOUNTS
                     else TriState.FALSE)
    else:
        is_system = TriState.UNKNOWN

    label = None
    if record.get("label") not in (None, ""):
        try:
            label = Label(str(record["label"]).strip().upper())
        except ValueError:
            raise IngestError(f"unrecognized label {record['label']!r}") from None

    group_id = record.get("group_id")
    group_id = str(group_id) if group_id not in (None, "") else None

    event_id = record.get("event_id")
    event_id = (str(event_id) if event_id not in (None, "")
                else _synth_event_id(host_id, etype, guid, ts))

    return ProcessEvent(
        event_id=event_id,
        host_id=host_id,
        timestamp=ts,
        event_type=etype,
        process_guid=guid,
        pid=pid,
        ppid=ppid,
        process_name=name,
        process_path=path,
        command_line=str(record.get("command_line") or ""),
        parent_guid=parent_guid,
        parent_name=parent_name,
        parent_command_line=parent_cmdline,
        user=user,
        parent_user=parent_user,
        signature_status=signature,
        is_elevated=elevated,
        integrity_level=integrity,
        is_system_account=is_system,
        label=label,
        group_id=group_id,
        source_line=line_no or None,
    )


def _iter_lines(stream) -> Iterator[Union[str, bytes]]:
    if hasattr(stream, "read"):
        return iter(stream)
    return iter(stream)


def parse_events(stream: Union[IO, Iterable],
                 schema_map: Optional[dict] = None) -> ParseResult:
    """Parse a JSONL stream into ProcessEvents.

    `stream` may be a text or binary file object or any iterable of
    lines. Events come back in input order. Blank lines are ignored;
    malformed lines are skipped and recorded, never fatal. I/O errors
    propagate.
    """
    events = []
    skipped = []
    for line_no, raw in enumerate(_iter_lines(stream), start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                skipped.append(SkipRecord(line_no, f"not UTF-8: {exc}"))
                continue
        line = raw.strip()
        if not line:
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            skipped.append(SkipRecord(line_no, f"invalid JSON: {exc.msg}"))
            continue
        try:
            events.append(event_from_record(record, line_no, schema_map))
        except Exception as exc:
            skipped.append(SkipRecord(line_no, str(exc)))
    if skipped:
        log.warning("skipped %d malformed line(s) of %d", len(skipped),
                    len(events) + len(skipped))
    return ParseResult(events=events, skipped=skipped)


def load_events(path, schema_map: Optional[dict] = None) -> ParseResult:
    with open(path, "rb") as fh:
        return parse_events(fh, schema_map)


def write_events_jsonl(events: Sequence[ProcessEvent], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json_line() + "\n")


def _sort_key(event: ProcessEvent):
    type_order = 0 if event.event_type is EventType.CREATE else 1
    return (event.timestamp, type_order, event.process_guid, event.event_id)


def pair_instances(events: Sequence[ProcessEvent],
                   delta_t_cap: float = DEFAULT_DELTA_T_CAP) -> PairResult:
    """Pair CREATE/TERMINATE events into ProcessInstances.

    Events are sorted internally on a canonical key, so the result is
    invariant to input order. Every CREATE yields one instance; a
    TERMINATE with a matching open instance sets its terminate time.
    Unmatched TERMINATEs are dropped and counted. Instances that never
    terminate get lifetime_seconds = delta_t_cap.
    """
    instances: dict = {}
    unmatched = 0
    duplicates = 0
    for event in sorted(events, key=_sort_key):
        if event.event_type is EventType.CREATE:
            if event.process_guid in instances:
                duplicates += 1
                continue
            instances[event.process_guid] = ProcessInstance(
                guid=event.process_guid,
                create_event=event,
                lifetime_seconds=delta_t_cap,
            )
        else:
            inst = instances.get(event.process_guid)
            if inst is None or inst.terminate_timestamp is not None:
                unmatched += 1
                continue
            inst.terminate_timestamp = event.timestamp
            delta = (event.timestamp -
                     inst.create_event.timestamp).total_seconds()
            inst.lifetime_seconds = max(delta, 0.0)
    if unmatched or duplicates:
        log.warning("pairing dropped %d unmatched TERMINATE(s), "
                    "%d duplicate CREATE(s)", unmatched, duplicates)
    return PairResult(
        instances=list(instances.values()),
        unmatched_terminates=unmatched,
        duplicate_creates=duplicates,
    )


def make_stub_parent(child: ProcessInstance,
                     delta_t_cap: float = DEFAULT_DELTA_T_CAP) -> ProcessInstance:
    """Synthesize a parent instance for a child whose parent was never
    observed, from the parent_* fields the child's own record carries.
    Keeps mid-stream chains attached instead of orphaning them."""
    event = child.create_event
    stub_event = ProcessEvent(
        event_id="stub-" + event.event_id,
        host_id=event.host_id,
        timestamp=event.timestamp,
        event_type=EventType.CREATE,
        process_guid=event.parent_guid or ("stub-for-" + child.guid),
        pid=event.ppid,
        ppid=0,
        process_name=event.parent_name or "unknown",
        process_path="",
        command_line=event.parent_command_line or "",
        user=event.parent_user or "",
    )
    return ProcessInstance(
        guid=stub_event.process_guid,
        create_event=stub_event,
        lifetime_seconds=delta_t_cap,
    )


def iter_edges(instances: Sequence[ProcessInstance],
               delta_t_cap: float = DEFAULT_DELTA_T_CAP):
    """Yield (parent_instance, child_instance, parent_is_stub) for every
    instance with parent information.

    Parents that resolve to an observed instance are used directly;
    otherwise a stub is synthesized (one per unresolved parent guid, so
    siblings still share a parent). Instances with no parent_guid are
    roots and yield nothing.
    """
    by_guid = {inst.guid: inst for inst in instances}
    stubs: dict = {}
    for inst in instances:
        pguid = inst.parent_guid
        if pguid is None:
            continue
        parent = by_guid.get(pguid)
        if parent is not None and parent is not inst:
            yield parent, inst, False
            continue
        stub = stubs.get(pguid)
        if stub is None:
            stub = make_stub_parent(inst, delta_t_cap)
            stubs[pguid] = stub
        yield stub, inst, True
