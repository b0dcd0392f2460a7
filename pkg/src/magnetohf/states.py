"""Orbital and configuration types, and the state-label lookup table."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field


@dataclass(frozen=True)
class OrbitalSpec:
    """One electron: magnetic quantum number, z-parity and excitation index.

    ``nu`` ranks the orbital within its ``(m, z_parity)`` sector, so the
    ``2s0`` orbital is ``nu = 2`` next to ``1s0`` with ``nu = 1``.
    """

    m: int
    z_parity: int
    nu: int = 1
    label: str = ""

    def __post_init__(self):
        if self.z_parity not in (1, -1):
            raise ValueError(f"z_parity must be +1 or -1, got {self.z_parity}")
        if self.nu < 1:
            raise ValueError(f"nu must be >= 1, got {self.nu}")

    @property
    def key(self) -> tuple[int, int, int]:
        return (self.m, self.z_parity, self.nu)


@dataclass(frozen=True)
class Configuration:
    """Single-determinant atomic state."""

    Z: float
    orbitals: tuple[OrbitalSpec, ...]
    fully_spin_polarized: bool = True
    name: str = ""
    spin_multiplicity: int = field(default=0)

    def __post_init__(self):
        orbs = tuple(self.orbitals)
        object.__setattr__(self, "orbitals", orbs)
        if not orbs:
            raise ValueError("configuration needs at least one orbital")
        keys = [o.key for o in orbs]
        if len(set(keys)) != len(keys):
            raise ValueError(f"orbitals must be pairwise distinct (m, parity, nu): {keys}")
        if self.Z <= 0:
            raise ValueError("nuclear charge must be positive")
        if self.spin_multiplicity == 0:
            mult = len(orbs) + 1 if self.fully_spin_polarized else (len(orbs) % 2) + 1
            object.__setattr__(self, "spin_multiplicity", mult)
        elif self.fully_spin_polarized and self.spin_multiplicity != len(orbs) + 1:
            raise ValueError("fully spin-polarized states have multiplicity n_e + 1")

    @property
    def n_e(self) -> int:
        return len(self.orbitals)

    @property
    def total_M(self) -> int:
        return sum(o.m for o in self.orbitals)

    @property
    def total_z_parity(self) -> int:
        p = 1
        for o in self.orbitals:
            p *= o.z_parity
        return p

    @property
    def label(self) -> str:
        sign = "+" if self.total_z_parity > 0 else "-"
        return f"1^{self.spin_multiplicity}({self.total_M}){sign}"


# field-free orbital name -> (m, z_parity, nu)
_ORBITALS = {
    "1s0": (0, 1, 1),
    "2s0": (0, 1, 2),
    "2p0": (0, -1, 1),
    "2p-1": (-1, 1, 1),
    "3d-1": (-1, -1, 1),
    "3d-2": (-2, 1, 1),
    "4f-2": (-2, -1, 1),
}

# intense-field label -> field-free orbitals (helium Z=2, lithium Z=3)
STATE_TABLE = {
    2: {
        "1^3(-1)+": ("1s0", "2p-1"),
        "1^3(-1)-": ("1s0", "3d-1"),
        "1^3(-2)+": ("1s0", "3d-2"),
        "1^3(-2)-": ("1s0", "4f-2"),
        "1^3(0)+": ("1s0", "2s0"),
        "1^3(0)-": ("1s0", "2p0"),
    },
    3: {
        "1^4(-3)+": ("1s0", "2p-1", "3d-2"),
        "1^4(-3)-": ("1s0", "2p-1", "4f-2"),
        "1^4(-2)+": ("1s0", "2s0", "3d-2"),
        "1^4(-2)-": ("1s0", "2p-1", "3d-1"),
        "1^4(-1)+": ("1s0", "2s0", "2p-1"),
        "1^4(-1)-": ("1s0", "2p0", "2p-1"),
    },
}

_SUPER = str.maketrans("⁰¹²³⁴⁵⁶⁷⁸⁹⁺⁻", "0123456789+-")


def _clean(text: str) -> str:
    text = unicodedata.normalize("NFKC", text.translate(_SUPER))
    return text.replace("−", "-").replace(" ", "")


def normalize_state_label(label: str) -> str:
    """Canonical ``1^3(-1)+`` form of an intense-field label."""
    s = _clean(label)
    m = re.fullmatch(r"(\d+)\^?\{?(\d+)\}?\(([-+]?\d+)\)\^?\{?([+-])\}?", s)
    if not m:
        raise ValueError(f"not an intense-field state label: {label!r}")
    nu, mult, M, par = m.groups()
    return f"{int(nu)}^{int(mult)}({int(M)}){par}"


def parse_orbital_names(text: str) -> list[str]:
    """Split a field-free string such as ``1s_02p_{-1}`` into orbital names."""
    s = _clean(text).replace("_", "").replace("{", "").replace("}", "").replace(",", "")
    names = re.findall(r"\d[spdf](?:-?\d)", s)
    if not names or "".join(names) != s:
        raise ValueError(f"cannot parse field-free orbitals from {text!r}")
    return names


def orbital_from_name(name: str) -> OrbitalSpec:
    try:
        m, par, nu = _ORBITALS[name]
    except KeyError:
        raise ValueError(f"unknown orbital {name!r}; known: {sorted(_ORBITALS)}") from None
    return OrbitalSpec(m, par, nu, name)


def resolve_state(label: str, Z: float) -> Configuration:
    """Configuration for an intense-field or field-free state label."""
    table = STATE_TABLE.get(int(round(Z)), {})
    try:
        key = normalize_state_label(label)
    except ValueError:
        names = parse_orbital_names(label)
    else:
        if key not in table:
            raise ValueError(f"state {label!r} not tabulated for Z={Z}; known: {sorted(table)}")
        names = list(table[key])
    orbs = tuple(orbital_from_name(n) for n in names)
    config = Configuration(Z=Z, orbitals=orbs)
    return Configuration(Z=Z, orbitals=orbs, name=config.label)


def hydrogenic_configuration(Z: float, m: int = 0, z_parity: int = 1, nu: int = 1) -> Configuration:
    return Configuration(Z=Z, orbitals=(OrbitalSpec(m, z_parity, nu),))
