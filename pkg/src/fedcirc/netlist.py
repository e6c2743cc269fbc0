"""Netlist parsing and circuit construction.

The textual format is one statement per line: a `.circuit <name> <TYPE>`
header, one line per device, and a `.end` footer.  `#` starts a comment.
Device lines are

    M<id> <d> <g> <s> <b> <NMOS|PMOS>
    Q<id> <c> <b> <e> <NPN|PNP>
    R<id> <a> <b>      (same shape for C, L, D)

Net names are ``[A-Za-z0-9_]+``.  Nets whose names start with a reserved
terminal prefix (VDD, VSS, GND, VIN, VOUT, VB, IB, optionally followed by
digits) are circuit terminals; everything else is an internal net.
"""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import (
    ArityMismatch,
    DuplicateDeviceId,
    EmptyCircuit,
    InvalidSize,
    NetlistSyntaxError,
    UnknownDeviceKind,
)


class DeviceKind(enum.Enum):
    NMOS = "NMOS"
    PMOS = "PMOS"
    NPN = "NPN"
    PNP = "PNP"
    R = "R"
    C = "C"
    L = "L"
    D = "D"


# canonical id prefix and ordered pin roles per kind
KIND_PREFIX = {
    DeviceKind.NMOS: "NM",
    DeviceKind.PMOS: "PM",
    DeviceKind.NPN: "Q",
    DeviceKind.PNP: "Q",
    DeviceKind.R: "R",
    DeviceKind.C: "C",
    DeviceKind.L: "L",
    DeviceKind.D: "D",
}

KIND_ROLES = {
    DeviceKind.NMOS: ("D", "G", "S", "B"),
    DeviceKind.PMOS: ("D", "G", "S", "B"),
    DeviceKind.NPN: ("C", "B", "E"),
    DeviceKind.PNP: ("C", "B", "E"),
    DeviceKind.R: ("A", "B"),
    DeviceKind.C: ("A", "B"),
    DeviceKind.L: ("A", "B"),
    DeviceKind.D: ("A", "B"),
}

# human-readable kind label per id prefix; used when a node token must be
# interpreted without the originating Circuit (NPN/PNP collapse to BJT).
PREFIX_KIND_LABEL = {
    "NM": "NMOS",
    "PM": "PMOS",
    "Q": "BJT",
    "R": "R",
    "C": "C",
    "L": "L",
    "D": "D",
}

TERMINAL_PREFIXES = ("VDD", "VSS", "GND", "VIN", "VOUT", "VB", "IB")

_TERMINAL_RE = re.compile(r"^(VDD|VSS|GND|VOUT|VIN|VB|IB)\d*$")
_NET_RE = re.compile(r"^[A-Za-z0-9_]+$")


class CircuitType(enum.Enum):
    OPAMP = "OPAMP"
    LDO = "LDO"
    BANDGAP = "BANDGAP"
    COMPARATOR = "COMPARATOR"
    PLL = "PLL"
    LNA = "LNA"
    PA = "PA"
    MIXER = "MIXER"
    VCO = "VCO"
    POWER_CONVERTER = "POWER_CONVERTER"
    OTHER = "OTHER"

    @property
    def tag(self) -> str:
        """Sequence-file tag token, e.g. ``<OPAMP>``."""
        return f"<{self.value}>"


def is_terminal_net(net: str) -> bool:
    return _TERMINAL_RE.match(net) is not None


def terminal_prefix(net: str) -> str:
    m = _TERMINAL_RE.match(net)
    if m is None:
        raise ValueError(f"{net!r} is not a terminal net")
    return m.group(1)


@dataclass(frozen=True)
class Device:
    id: str
    kind: DeviceKind
    pins: tuple[tuple[str, str], ...]  # (role, net), in KIND_ROLES order

    def __post_init__(self):
        roles = KIND_ROLES[self.kind]
        if len(self.pins) != len(roles):
            raise ArityMismatch(
                f"{self.id}: {self.kind.value} needs {len(roles)} pins, got {len(self.pins)}"
            )
        if tuple(r for r, _ in self.pins) != roles:
            raise ArityMismatch(f"{self.id}: pin roles must be {roles} in order")
        if not self.id.startswith(KIND_PREFIX[self.kind]):
            raise UnknownDeviceKind(
                f"device id {self.id!r} must start with {KIND_PREFIX[self.kind]!r}"
            )

    def net_of(self, role: str) -> str:
        for r, n in self.pins:
            if r == role:
                return n
        raise KeyError(role)


@dataclass(frozen=True)
class Circuit:
    name: str
    circuit_type: CircuitType
    devices: tuple[Device, ...]

    @property
    def nets(self) -> dict[str, set[tuple[str, str]]]:
        """net name -> set of (device id, pin role) members."""
        out: dict[str, set[tuple[str, str]]] = {}
        for dev in self.devices:
            for role, net in dev.pins:
                out.setdefault(net, set()).add((dev.id, role))
        return out

    @property
    def terminals(self) -> set[str]:
        return {n for n in self.nets if is_terminal_net(n)}

    def device(self, dev_id: str) -> Device:
        for dev in self.devices:
            if dev.id == dev_id:
                return dev
        raise KeyError(dev_id)


_LETTER_KINDS = {
    "M": (DeviceKind.NMOS, DeviceKind.PMOS),
    "Q": (DeviceKind.NPN, DeviceKind.PNP),
    "R": (DeviceKind.R,),
    "C": (DeviceKind.C,),
    "L": (DeviceKind.L,),
    "D": (DeviceKind.D,),
}


def parse_netlist(text: str) -> Circuit:
    """Parse netlist text into a validated Circuit.

    Raises NetlistSyntaxError / UnknownDeviceKind / DuplicateDeviceId /
    ArityMismatch / EmptyCircuit.  Parsing is deterministic and preserves
    device order.
    """
    name = None
    ctype = None
    devices: list[Device] = []
    seen_ids: set[str] = set()
    ended = False

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if ended:
            raise NetlistSyntaxError("statement after .end", lineno)
        toks = line.split()
        if toks[0] == ".circuit":
            if name is not None:
                raise NetlistSyntaxError("duplicate .circuit header", lineno)
            if len(toks) != 3:
                raise NetlistSyntaxError(".circuit needs <name> <TYPE>", lineno)
            name = toks[1]
            try:
                ctype = CircuitType(toks[2])
            except ValueError:
                raise NetlistSyntaxError(f"unknown circuit type {toks[2]!r}", lineno, len(toks[0]) + len(toks[1]) + 3)
            continue
        if toks[0] == ".end":
            ended = True
            continue
        if name is None:
            raise NetlistSyntaxError("device line before .circuit header", lineno)

        letter = toks[0][0].upper()
        if letter not in _LETTER_KINDS:
            raise UnknownDeviceKind(f"line {lineno}: unknown device letter {letter!r}")
        dev_id = toks[0][1:]
        if not dev_id:
            raise NetlistSyntaxError("device statement missing id", lineno, 1)

        if letter in ("M", "Q"):
            n_nets = 4 if letter == "M" else 3
            if len(toks) != 1 + n_nets + 1:
                raise ArityMismatch(
                    f"line {lineno}: {letter}-statement needs {n_nets} nets and a kind"
                )
            kind_tok = toks[-1]
            try:
                kind = DeviceKind(kind_tok)
            except ValueError:
                raise UnknownDeviceKind(f"line {lineno}: unknown kind {kind_tok!r}")
            if kind not in _LETTER_KINDS[letter]:
                raise UnknownDeviceKind(
                    f"line {lineno}: kind {kind_tok} not valid for {letter}-statement"
                )
            nets = toks[1:-1]
        else:
            kind = _LETTER_KINDS[letter][0]
            if len(toks) != 3:
                raise ArityMismatch(f"line {lineno}: {letter}-statement needs 2 nets")
            nets = toks[1:]

        for net in nets:
            if not _NET_RE.match(net):
                raise NetlistSyntaxError(f"bad net name {net!r}", lineno, line.find(net))
        if dev_id in seen_ids:
            raise DuplicateDeviceId(f"line {lineno}: duplicate device id {dev_id!r}")
        seen_ids.add(dev_id)
        roles = KIND_ROLES[kind]
        try:
            devices.append(Device(dev_id, kind, tuple(zip(roles, nets))))
        except (ArityMismatch, UnknownDeviceKind) as exc:
            raise type(exc)(f"line {lineno}: {exc}")

    if name is None:
        raise NetlistSyntaxError("missing .circuit header", 1)
    if not ended:
        raise NetlistSyntaxError("missing .end", max(1, text.count("\n") + 1))
    if not devices:
        raise EmptyCircuit(f"circuit {name!r} has no devices")
    return Circuit(name, ctype, tuple(devices))


_STATEMENT_LETTER = {
    DeviceKind.NMOS: "M",
    DeviceKind.PMOS: "M",
    DeviceKind.NPN: "Q",
    DeviceKind.PNP: "Q",
    DeviceKind.R: "R",
    DeviceKind.C: "C",
    DeviceKind.L: "L",
    DeviceKind.D: "D",
}


def render_netlist(circuit: Circuit) -> str:
    """Serialize a Circuit; inverse of parse_netlist."""
    lines = [f".circuit {circuit.name} {circuit.circuit_type.value}"]
    for dev in circuit.devices:
        letter = _STATEMENT_LETTER[dev.kind]
        nets = " ".join(net for _, net in dev.pins)
        if letter in ("M", "Q"):
            lines.append(f"{letter}{dev.id} {nets} {dev.kind.value}")
        else:
            lines.append(f"{letter}{dev.id} {nets}")
    lines.append(".end")
    return "\n".join(lines) + "\n"


# weights roughly mirror device-type frequency in analog schematics
_GEN_KINDS = (
    DeviceKind.NMOS,
    DeviceKind.PMOS,
    DeviceKind.R,
    DeviceKind.C,
    DeviceKind.NPN,
    DeviceKind.PNP,
    DeviceKind.L,
    DeviceKind.D,
)
_GEN_WEIGHTS = (0.28, 0.22, 0.14, 0.12, 0.08, 0.06, 0.05, 0.05)


def generate_random_circuit(seed: int, n_devices: int, circuit_type: CircuitType) -> Circuit:
    """Grow a random connected circuit with VDD/VSS, one VIN and one VOUT.

    The first device spans VIN1/VSS, the second ties into VDD, and every
    later device shares at least one net with the existing circuit, so the
    pin graph is connected by construction.  Deterministic per
    (seed, n_devices, circuit_type).
    """
    if n_devices < 2:
        raise InvalidSize(f"need n_devices >= 2, got {n_devices}")
    type_idx = list(CircuitType).index(circuit_type)
    rng = np.random.default_rng([seed, n_devices, type_idx])

    counters: dict[str, int] = {}

    def fresh_id(kind: DeviceKind) -> str:
        prefix = KIND_PREFIX[kind]
        counters[prefix] = counters.get(prefix, 0) + 1
        return f"{prefix}{counters[prefix]}"

    internal_nets: list[str] = []
    net_seq = 0

    def fresh_net() -> str:
        nonlocal net_seq
        net_seq += 1
        net = f"n{net_seq}"
        internal_nets.append(net)
        return net

    devices: list[Device] = []
    nets_in_use: list[str] = []

    def add_device(kind: DeviceKind, nets: list[str]):
        roles = KIND_ROLES[kind]
        devices.append(Device(fresh_id(kind), kind, tuple(zip(roles, nets))))
        for net in nets:
            if net not in nets_in_use:
                nets_in_use.append(net)

    n1 = fresh_net()
    add_device(DeviceKind.NMOS, [n1, "VIN1", "VSS", "VSS"])
    add_device(DeviceKind.R, [n1, "VDD"])

    for _ in range(n_devices - 2):
        kind = _GEN_KINDS[rng.choice(len(_GEN_KINDS), p=_GEN_WEIGHTS)]
        roles = KIND_ROLES[kind]
        nets = [nets_in_use[rng.integers(len(nets_in_use))]]
        for role in roles[1:]:
            if role == "B" and kind is DeviceKind.NMOS:
                nets.append("VSS")
            elif role == "B" and kind is DeviceKind.PMOS:
                nets.append("VDD")
            else:
                u = rng.random()
                if u < 0.45:
                    nets.append(nets_in_use[rng.integers(len(nets_in_use))])
                elif u < 0.80:
                    nets.append(fresh_net())
                else:
                    nets.append("VDD" if rng.random() < 0.5 else "VSS")
        add_device(kind, nets)

    # hook the output terminal onto the most recently created internal net
    out_net = internal_nets[-1]
    renamed = []
    for dev in devices:
        pins = tuple((r, "VOUT1" if n == out_net else n) for r, n in dev.pins)
        renamed.append(Device(dev.id, dev.kind, pins))

    name = f"rand_{circuit_type.value.lower()}_{seed}_{n_devices}"
    return Circuit(name, circuit_type, tuple(renamed))


def fixture_path(filename: str):
    return resources.files("fedcirc").joinpath("fixtures", filename)


def load_fixture(filename: str) -> Circuit:
    return parse_netlist(fixture_path(filename).read_text())


def fixture_names() -> list[str]:
    root = resources.files("fedcirc").joinpath("fixtures")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".ckt"))


def load_fixture_corpus() -> list[Circuit]:
    """All shipped fixture circuits, in filename order."""
    return [load_fixture(n) for n in fixture_names()]
