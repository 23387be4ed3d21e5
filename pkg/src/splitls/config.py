"""Split configurations: which side generates each secret, and the resulting CS exchanges."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional

from .lurk import LurkType


class Mode(Enum):
    CERT = "cert"
    PSK = "psk"


class InvalidConfig(ValueError):
    pass


@dataclass(frozen=True)
class CsConfig:
    """One row of the split matrix. Signing always belongs to the CS."""

    mode: Mode
    cs_generates_ecdhe: bool
    cs_generates_handshake: bool
    cs_generates_application: bool
    cs_generates_resumption: bool

    def __post_init__(self) -> None:
        if self.key() not in _ROW_NAMES:
            raise InvalidConfig(f"{self.key()} is not a supported configuration; rows: {', '.join(ROW_NAMES)}")

    def key(self) -> tuple:
        return (self.mode, self.cs_generates_ecdhe, self.cs_generates_handshake,
                self.cs_generates_application, self.cs_generates_resumption)

    @property
    def name(self) -> str:
        return _ROW_NAMES[self.key()]

    @property
    def keyless(self) -> bool:
        return self.mode is Mode.CERT and not self.cs_generates_handshake

    @property
    def issues_tickets(self) -> bool:
        return self.cs_generates_resumption

    @classmethod
    def from_name(cls, name: str) -> CsConfig:
        try:
            return ROWS[name]
        except KeyError:
            raise InvalidConfig(f"unknown configuration {name!r}; valid rows: {', '.join(ROW_NAMES)}") from None

    def __str__(self) -> str:
        return self.name


_ROW_SPECS = {
    "cs_cert_dhe_r": (Mode.CERT, True, True, True, True),
    "cs_cert_dhe": (Mode.CERT, True, True, True, False),
    "cs_cert": (Mode.CERT, False, True, True, True),
    "cs_cert_keyless": (Mode.CERT, False, False, False, False),
    "cs_psk_dhe_r": (Mode.PSK, True, True, True, True),
    "cs_psk_dhe": (Mode.PSK, True, True, True, False),
    "cs_psk_r": (Mode.PSK, False, True, True, True),
    "cs_psk": (Mode.PSK, False, True, True, False),
}
_ROW_NAMES = {spec: name for name, spec in _ROW_SPECS.items()}
ROW_NAMES = tuple(_ROW_SPECS)
ROWS: dict[str, CsConfig] = {name: CsConfig(*spec) for name, spec in _ROW_SPECS.items()}
CERT_ROWS = tuple(n for n in ROW_NAMES if ROWS[n].mode is Mode.CERT)
PSK_ROWS = tuple(n for n in ROW_NAMES if ROWS[n].mode is Mode.PSK)


def plan_exchanges(config: CsConfig, resumed: Optional[bool] = None) -> list[LurkType]:
    """Ordered CS requests one handshake under ``config`` issues."""
    if not isinstance(config, CsConfig):
        raise InvalidConfig(f"not a configuration: {config!r}")
    if resumed is not None and resumed != (config.mode is Mode.PSK):
        raise InvalidConfig(f"{config.name} cannot serve a {'resumed' if resumed else 'full'} handshake")
    plan: list[LurkType] = []
    if config.mode is Mode.PSK:
        plan.append(LurkType.EARLY_SECRET)
    if config.cs_generates_ecdhe:
        plan.append(LurkType.GET_ECDHE)
    if config.cs_generates_handshake:
        plan.append(LurkType.GET_HANDSHAKE_SECRETS)
    if config.mode is Mode.CERT:
        plan.append(LurkType.GET_SIG_AND_APP)
        # cs_cert (E-side ECDHE) derives its ticket PSK inside GET_SIG_AND_APP
        if config.cs_generates_resumption and config.cs_generates_ecdhe:
            plan.append(LurkType.NEW_TICKET)
    else:
        plan.append(LurkType.GET_APP_SECRET)
        if config.cs_generates_resumption:
            plan.append(LurkType.GET_RES_SECRET)
    return plan


def read_config_file(path: str | Path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    values: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidConfig(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        values[key.strip().replace("-", "_")] = value.strip()
    return values
