"""Best-effort communication channels and a graph-coloring benchmark built on them."""

__version__ = "0.1.0"

from .channel import Channel, Inlet, Outlet, PutOutcome, ReadResult
from .consolidation import Aggregator, AggregatorReceiver, Pool, PoolReceiver, aggregate_flush, pool_put, pool_route
from .ducts import DEFAULT_CAPACITY, BackendKind, make_duct
from .errors import (
    BarrierError,
    BestEffortError,
    ChannelClosed,
    ChannelTimeout,
    ConfigurationError,
    FrameError,
    LoadError,
    RemoteEndpoint,
    RoutingError,
    SetupError,
    TransportError,
    UsageError,
    WouldDeadlock,
)
from .frame import Frame, decode_frame, encode_frame
from .message import Counters, Message
from .stats import CiSummary, bootstrap_ci
from .sync import AsyncMode, RunReport, SyncPolicy, WorkerGroup, barrier, negotiate_start_epoch, run
from .topology import (
    Assignment,
    Topology,
    assign_striped,
    instantiate,
    load_edge_list,
    load_partition,
    make_toroidal_grid,
)
from .transport import LoopbackHub, LoopbackTransport, ProcessComm, SocketTransport
from .coloring import count_conflicts, node_update, update_probabilities
from .bench import BenchConfig, BenchmarkRecord, benchmark_run, emit_records
