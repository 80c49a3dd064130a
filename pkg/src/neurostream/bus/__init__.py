from .broker import DROP_NEWEST, DROP_OLDEST, ERROR, Broker, Closed, Subscription, Topic, broker_publish, broker_subscribe
from .nodes import (
    ENCODED, FRAME_RATE, NEURODATA, AcquisitionNode, EncoderNode, Node, NodeGraph, RecorderNode, run_stream,
)
from .sources import PlaybackSource, SyntheticSource
from .tcp import TcpPublisher, TcpSubscriber, recv_message, send_message
from .timing import JitterRecord, PeriodicTimer, jitter_report

__all__ = [
    "Broker", "Closed", "Subscription", "Topic", "broker_publish", "broker_subscribe",
    "DROP_OLDEST", "DROP_NEWEST", "ERROR",
    "NEURODATA", "ENCODED", "FRAME_RATE", "Node", "NodeGraph", "AcquisitionNode", "EncoderNode",
    "RecorderNode", "run_stream", "PlaybackSource", "SyntheticSource",
    "TcpPublisher", "TcpSubscriber", "send_message", "recv_message",
    "JitterRecord", "PeriodicTimer", "jitter_report",
]
