"""Lossless context management: an immutable store, a summary DAG over it, and the
controller, file gateway, map operators and delegation guard that sit on top."""

from .controller import Controller, ControllerConfig, regime_for
from .errors import LCMError
from .files import FileGateway
from .map_engine import MapEngine, MapJobSpec
from .provider import HttpProvider, ProviderSlots, Rule, ScriptedProvider, load_script
from .runtime import Engine, EngineConfig, TurnTranscript
from .store import Store
from .summarizer import escalated_summary
from .tokenizer import count_tokens
from .tools import MemoryTools

__all__ = [
    "Controller",
    "ControllerConfig",
    "Engine",
    "EngineConfig",
    "FileGateway",
    "HttpProvider",
    "LCMError",
    "MapEngine",
    "MapJobSpec",
    "MemoryTools",
    "ProviderSlots",
    "Rule",
    "ScriptedProvider",
    "Store",
    "TurnTranscript",
    "count_tokens",
    "escalated_summary",
    "load_script",
    "regime_for",
]
__version__ = "0.1.0"
