"""In-memory MapReduce engine: segmented concurrent maps, a node-partitioned
map with local combining and shuffle, and a range-based driver."""
from ._backend import BACKEND, available
from .concurrent_map import ConcurrentMap, ProbingTable, create, emitter
from .dist_map import DistMap, MapMetrics
from .errors import ConfigError, DecodeError, MinimrError, NodeFailure, TransportError
from .hashing import hash_key, owner, segment_of
from .mapreduce import DistRange, mapreduce, node_partition, thread_schedule
from .reducers import MAX, SUM, Reducer, reducer_max, reducer_sum

__all__ = [
    "BACKEND",
    "available",
    "ConcurrentMap",
    "ProbingTable",
    "create",
    "emitter",
    "DistMap",
    "MapMetrics",
    "ConfigError",
    "DecodeError",
    "MinimrError",
    "NodeFailure",
    "TransportError",
    "hash_key",
    "owner",
    "segment_of",
    "DistRange",
    "mapreduce",
    "node_partition",
    "thread_schedule",
    "MAX",
    "SUM",
    "Reducer",
    "reducer_max",
    "reducer_sum",
]
