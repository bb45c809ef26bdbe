"""Gateway configuration.

Environment variables:

* ``GATEWAY_MODE``: ``stub`` (default) or ``live``.
* ``GATEWAY_TOKEN``: bearer token; unset disables auth (development).
* ``GATEWAY_<ROLE>_BACKEND`` (live mode): dotted ``module:factory`` path
  per role (CAPTION, CHAT, EMBED, PANORAMA). The factory is called once
  at startup and must return a callable handling that role's payload.
"""

from __future__ import annotations

import importlib
import os
from dataclasses import dataclass, field
from typing import Any, Callable

ROLES = ("caption", "chat", "embed", "panorama")


class GatewayConfigError(RuntimeError):
    pass


@dataclass
class GatewayConfig:
    mode: str = "stub"
    token: str | None = None
    backend_specs: dict[str, str] = field(default_factory=dict)
    backends: dict[str, Callable[..., Any]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.mode not in ("stub", "live"):
            raise GatewayConfigError(f"GATEWAY_MODE must be stub or live, got {self.mode!r}")

    @classmethod
    def from_env(cls) -> "GatewayConfig":
        specs = {}
        for role in ROLES:
            spec = os.environ.get(f"GATEWAY_{role.upper()}_BACKEND")
            if spec:
                specs[role] = spec
        return cls(
            mode=os.environ.get("GATEWAY_MODE", "stub"),
            token=os.environ.get("GATEWAY_TOKEN") or None,
            backend_specs=specs,
        )

    def load_backends(self) -> None:
        """Live mode resolves every configured backend at startup; an
        unimportable backend fails fast instead of at request time."""
        if self.mode != "live":
            return
        errors = []
        for role, spec in self.backend_specs.items():
            try:
                module_name, _, attr = spec.partition(":")
                module = importlib.import_module(module_name)
                factory = getattr(module, attr or "create")
                self.backends[role] = factory()
            except Exception as exc:  # noqa: BLE001 - report all startup failures
                errors.append(f"{role}: {spec} ({exc})")
        if errors:
            raise GatewayConfigError(
                "live mode cannot load model backends: " + "; ".join(errors)
            )
