"""Bit-accurate CAN 2.0A simulator with frame-injection and single-bit
attackers and an officer node that watches each ECU's transmit line."""

from .attacks import (AttackEntry, AttackKind, AttackLog, DoubleReceiving, Flooding, FreezeDoomLoop, Replay,
                      SbaAttacker, SelectiveDos, Spoof, SpoofMode, fia_run, sba_run)
from .bus import Bus, BusTick, Node, NodeHandle, NodeKind, Outcome, TraceRecord, format_trace
from .controller import AtTick, Controller, Dashboard, ErrorCounters, ErrorState, Now, Periodic
from .core import (DOMINANT, RECESSIVE, BitLevel, Decoder, DecoderEvent, EventKind, FrameSpec, RawBitstream,
                   StuffedBitstream, StuffViolation, compute_crc15, decode_bits, decoder_feed, destuff, serialize,
                   stuff)
from .harness import (coverage_sweep, cdf_experiment, compute_metrics, learn, run_scenario, toy_sensor_demo)
from .officer import Alert, AlertKind, AllowlistTable, AmbiguousOwner, Officer, OfficerMode
from .scenario import ConfigError, ScenarioConfig, load_scenario, parse_scenario

__version__ = "0.1.0"
