"""Networked runtime: one client and two party servers over TCP."""

from .client import ClientStep, NetworkClient, StepTimeout, client_session
from .config import ConfigError, SessionConfig, config_for, pendulum_config
from .party import PartyReport, bind_listener, serve_party
from .transport import Connection, SessionAborted
from .wire import Frame, FrameError, MsgType, SessionHeader

__all__ = [
    "ClientStep", "NetworkClient", "StepTimeout", "client_session",
    "ConfigError", "SessionConfig", "config_for", "pendulum_config",
    "PartyReport", "bind_listener", "serve_party",
    "Connection", "SessionAborted",
    "Frame", "FrameError", "MsgType", "SessionHeader",
]
