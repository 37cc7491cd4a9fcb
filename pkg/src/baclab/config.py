"""Deployment configuration and object-graph wiring.

Everything configurable comes from environment variables (CLI flags can
override), all prefixed BACLAB_:

    BACLAB_STORE             store directory; unset or ":memory:" -> in-memory
    BACLAB_SALT              deployment salt for student-key derivation
    BACLAB_ADMIN_TOKEN       bearer token for admin endpoints; unset -> admin disabled
    BACLAB_PROVIDERS         path to a provider registry JSON file
    BACLAB_DEFAULT_PROVIDER  provider id used for student-facing assessment
    BACLAB_CORS_ORIGINS      comma-separated allowed origins (default "*")

Without a provider registry a built-in offline mock provider is wired in,
so a fresh install works end to end with no network and no secrets.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Mapping

from .assessment import AssessmentEngine
from .corpus import ExamStore
from .errors import InvalidConfig
from .evaluation import EvalHarness
from .gateway import Gateway, load_provider_registry, mock_provider
from .sessions import SessionStore
from .store import open_store

logger = logging.getLogger(__name__)

DEV_SALT = "dev-only-salt"


@dataclass
class AppConfig:
    store_path: str | None = None
    salt: str = DEV_SALT
    admin_token: str | None = None
    provider_registry: str | None = None
    default_provider: str | None = None
    cors_origins: list[str] = field(default_factory=lambda: ["*"])

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "AppConfig":
        env = os.environ if env is None else env
        origins = env.get("BACLAB_CORS_ORIGINS", "")
        return cls(
            store_path=env.get("BACLAB_STORE") or None,
            salt=env.get("BACLAB_SALT", DEV_SALT),
            admin_token=env.get("BACLAB_ADMIN_TOKEN") or None,
            provider_registry=env.get("BACLAB_PROVIDERS") or None,
            default_provider=env.get("BACLAB_DEFAULT_PROVIDER") or None,
            cors_origins=[o.strip() for o in origins.split(",") if o.strip()] or ["*"],
        )


class Platform:
    """The wired object graph for one deployment: store, corpus, sessions,
    gateway, assessment engine, and evaluation harness over shared state."""

    def __init__(self, config: AppConfig | None = None):
        self.config = config or AppConfig()
        if self.config.salt == DEV_SALT:
            logger.warning("using the built-in development salt; set BACLAB_SALT in production")
        self.store = open_store(self.config.store_path)
        self.exams = ExamStore(self.store)
        self.sessions = SessionStore(self.store, self.exams, self.config.salt)
        self.gateway = Gateway()
        if self.config.provider_registry:
            for provider in load_provider_registry(self.config.provider_registry):
                self.gateway.register_provider(provider)
        else:
            self.gateway.register_provider(mock_provider())
        provider_ids = self.gateway.provider_ids()
        self.default_provider = self.config.default_provider or provider_ids[0]
        if self.default_provider not in provider_ids:
            raise InvalidConfig(
                f"default provider {self.default_provider!r} is not in the registry")
        self.engine = AssessmentEngine(self.store, self.exams, self.gateway,
                                       self.default_provider, sessions=self.sessions)
        self.harness = EvalHarness(self.store, self.exams, self.gateway)

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None) -> "Platform":
        return cls(AppConfig.from_env(env))
