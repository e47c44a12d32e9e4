"""
Simulated Network Module for plugnet

A deterministic discrete-event network on top of simpy: home LANs behind
NAT routers, servers with public addresses, in-order delivery with a fixed
hop cost, sniffer taps, and the append-only trace every other module reads.
"""

import ipaddress
import json
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
import simpy

from .exceptions import AddressError, ChannelError, LifecycleError
from .messages import redact_for_trace, serialize

logger = logging.getLogger(__name__)

HOP = 1
PUBLIC_POOL = "100.64.0.0/10"
PRIVATE_PORT_BASE = 40000
PUBLIC_PORT_BASE = 50000
DEFAULT_EPOCH = 1_600_000_000


class Channel(str, Enum):
    LOCAL_AP = "LocalAp"
    INTERNET = "Internet"
    SERVER_INTERNAL = "ServerInternal"


def _typed(data: Dict, key: str, expected: type, optional: bool = False):
    """``data[key]`` if it is exactly of type ``expected`` (bool does not pass as int)."""
    if not isinstance(data, dict):
        raise ValueError(f"expected an object, got {type(data).__name__}")
    value = data.get(key) if optional else data[key]
    if value is None and optional:
        return None
    if type(value) is not expected:
        raise ValueError(f"{key} must be {expected.__name__}, got {type(value).__name__}")
    return value


@dataclass(frozen=True)
class NodeAddress:
    """Snapshot of a node's addressing at the moment a message was sent."""

    node_id: str
    private_ip: Optional[str]
    public_ip: Optional[str]
    network: str

    def to_dict(self) -> Dict:
        return {
            'node_id': self.node_id,
            'private_ip': self.private_ip,
            'public_ip': self.public_ip,
            'network': self.network,
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "NodeAddress":
        return cls(_typed(data, 'node_id', str), _typed(data, 'private_ip', str, optional=True),
                   _typed(data, 'public_ip', str, optional=True), _typed(data, 'network', str))


@dataclass(frozen=True)
class Flow:
    ap_id: str
    public_ip: str
    public_port: int


class NatRouter:
    """
    Home router: a Wi-Fi AP plus a NAT with one public address.

    Each (private ip, private port) flow gets its own public port for as long
    as the public address stays the same. ``rebind`` drops every flow.
    """

    def __init__(self, ap_id: str, ssid: str, ap_mac: bytes, public_ip: str, lan_index: int):
        self.ap_id = ap_id
        self.ssid = ssid
        self.ap_mac = ap_mac
        self.public_ip = public_ip
        self.lan = ipaddress.IPv4Network(f"192.168.{lan_index}.0/24")
        self.bindings: Dict[Tuple[str, int], int] = {}
        self._reverse: Dict[int, Tuple[str, int]] = {}
        self._hosts = self.lan.hosts()
        next(self._hosts)  # .1 is the router itself
        self._next_public_port = PUBLIC_PORT_BASE

    def allocate_private_ip(self) -> str:
        return str(next(self._hosts))

    def bind(self, private_ip: str, private_port: int) -> int:
        key = (private_ip, private_port)
        if key not in self.bindings:
            port = self._next_public_port
            self._next_public_port += 1
            self.bindings[key] = port
            self._reverse[port] = key
        return self.bindings[key]

    def lookup(self, public_port: int) -> Optional[Tuple[str, int]]:
        return self._reverse.get(public_port)

    def rebind(self, public_ip: str) -> None:
        self.public_ip = public_ip
        self.bindings.clear()
        self._reverse.clear()


@dataclass
class _Node:
    node_id: str
    kind: str
    mac: Optional[bytes]
    handler: Optional[Callable]
    nat: Optional[NatRouter] = None
    private_ip: Optional[str] = None
    public_ip: Optional[str] = None
    flow_ports: Dict[str, int] = field(default_factory=dict)


@dataclass
class Envelope:
    """A message in flight, as handed to the receiving actor."""

    src: str
    dst: str
    channel: Channel
    msg: object
    src_address: NodeAddress
    dst_address: NodeAddress
    flow: Optional[Flow] = None
    observed_src: str = ""
    seq: int = -1

    @property
    def observed_ip(self) -> str:
        return self.observed_src.split(":")[0]


@dataclass(frozen=True)
class TraceRecord:
    seq: int
    vtime: int
    src: NodeAddress
    dst: NodeAddress
    channel: Channel
    kind: str
    payload_hex: str
    annotations: Dict[str, str]

    def to_dict(self) -> Dict:
        return {
            'seq': self.seq,
            'vtime': self.vtime,
            'src': self.src.to_dict(),
            'dst': self.dst.to_dict(),
            'channel': self.channel.value,
            'kind': self.kind,
            'payload_hex': self.payload_hex,
            'annotations': dict(self.annotations),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, data: Dict) -> "TraceRecord":
        """
        Rebuild a record from its JSON form.

        Raises:
            KeyError: A required key is missing
            ValueError: A value has the wrong JSON type or an unknown channel
        """
        annotations = _typed(data, 'annotations', dict, optional=True) or {}
        return cls(
            seq=_typed(data, 'seq', int),
            vtime=_typed(data, 'vtime', int),
            src=NodeAddress.from_dict(_typed(data, 'src', dict)),
            dst=NodeAddress.from_dict(_typed(data, 'dst', dict)),
            channel=Channel(_typed(data, 'channel', str)),
            kind=_typed(data, 'kind', str),
            payload_hex=_typed(data, 'payload_hex', str),
            annotations={str(k): str(v) for k, v in annotations.items()},
        )

    @property
    def payload(self) -> bytes:
        return bytes.fromhex(self.payload_hex)

    @property
    def delivered(self) -> bool:
        return self.annotations.get('outcome') == 'delivered'


class Sniffer:
    """Tap receiving every trace record that matches its filter."""

    def __init__(self, channel: Optional[Channel] = None, node: Optional[str] = None):
        self.channel = channel
        self.node = node
        self.records: List[TraceRecord] = []

    def matches(self, record: TraceRecord) -> bool:
        if self.channel is not None and record.channel != self.channel:
            return False
        if self.node is not None and self.node not in (record.src.node_id, record.dst.node_id):
            return False
        return True

    def __iter__(self) -> Iterator[TraceRecord]:
        return iter(self.records)

    def __len__(self) -> int:
        return len(self.records)


class SimNetwork:
    """
    Deterministic event-scheduled network.

    Args:
        seed (int): Seed of the network RNG (keys, nonces, challenges)
        epoch (int): Unix time corresponding to virtual time 0
    """

    def __init__(self, seed: int, epoch: int = DEFAULT_EPOCH):
        self.seed = seed
        self.epoch = epoch
        self.env = simpy.Environment()
        self.rng = np.random.default_rng(seed)
        self.trace: List[TraceRecord] = []
        self.routers: Dict[str, NatRouter] = {}
        self.drop_hook: Optional[Callable[[Envelope], Optional[str]]] = None
        self._nodes: Dict[str, _Node] = {}
        self._sniffers: List[Sniffer] = []
        self._public_ips = ipaddress.IPv4Network(PUBLIC_POOL).hosts()
        self._kind_counts: Dict[str, int] = {}
        self._next_private_port = PRIVATE_PORT_BASE
        self._running = False
        self._closed = False
        logger.debug(f"SimNetwork created with seed {seed}")

    # Topology

    def _allocate_public_ip(self) -> str:
        return str(next(self._public_ips))

    def add_router(self, ssid: str, ap_mac: bytes, ap_id: Optional[str] = None) -> NatRouter:
        ap_id = ap_id or f"ap-{len(self.routers) + 1}"
        if ap_id in self.routers:
            raise AddressError(f"router {ap_id} already exists")
        router = NatRouter(ap_id, ssid, ap_mac, self._allocate_public_ip(), len(self.routers) + 1)
        self.routers[ap_id] = router
        logger.debug(f"Router {ap_id} ({ssid}) public address {router.public_ip}")
        return router

    def add_node(self, kind: str, nat: Optional[NatRouter] = None, mac: Optional[bytes] = None,
                 handler: Optional[Callable] = None, node_id: Optional[str] = None) -> NodeAddress:
        """
        Attach a node, either behind ``nat`` or directly on the Internet.

        Returns:
            NodeAddress: Address of the new node
        """
        self._check_open()
        if node_id is None:
            self._kind_counts[kind] = self._kind_counts.get(kind, 0) + 1
            node_id = f"{kind}-{self._kind_counts[kind]}"
        if node_id in self._nodes:
            raise AddressError(f"node {node_id} already exists")
        node = _Node(node_id=node_id, kind=kind, mac=mac, handler=handler)
        self._attach(node, nat)
        self._nodes[node_id] = node
        return self.address(node_id)

    def _attach(self, node: _Node, nat: Optional[NatRouter]) -> None:
        node.nat = nat
        node.flow_ports.clear()
        if nat is not None:
            if nat.ap_id not in self.routers:
                raise AddressError(f"unknown router {nat.ap_id}")
            node.private_ip = nat.allocate_private_ip()
            node.public_ip = None
        else:
            node.private_ip = None
            node.public_ip = self._allocate_public_ip()

    def set_handler(self, node_id: str, handler: Callable) -> None:
        self._node(node_id).handler = handler

    def _node(self, node_id: str) -> _Node:
        try:
            return self._nodes[node_id]
        except KeyError:
            raise AddressError(f"unknown node {node_id}") from None

    def has_node(self, node_id: str) -> bool:
        return node_id in self._nodes

    def address(self, node_id: str) -> NodeAddress:
        node = self._node(node_id)
        if node.nat is not None:
            return NodeAddress(node_id, node.private_ip, node.nat.public_ip, f"LocalAp({node.nat.ap_id})")
        return NodeAddress(node_id, None, node.public_ip, "Internet")

    def router_of(self, node_id: str) -> Optional[NatRouter]:
        return self._node(node_id).nat

    def same_lan(self, a: str, b: str) -> bool:
        na, nb = self._node(a), self._node(b)
        return na.nat is not None and na.nat is nb.nat

    def move_node(self, node_id: str, nat: Optional[NatRouter]) -> NodeAddress:
        """Roam a node to another LAN, or onto the Internet directly when ``nat`` is None."""
        node = self._node(node_id)
        self._attach(node, nat)
        logger.info(f"Node {node_id} moved to {self.address(node_id).network}")
        return self.address(node_id)

    def change_public_ip(self, node_id: str) -> str:
        """
        Give the router in front of ``node_id`` a new public address.

        Existing NAT flows through that router stop working.
        """
        node = self._node(node_id)
        if node.nat is None:
            raise AddressError(f"node {node_id} is not behind a NAT")
        new_ip = self._allocate_public_ip()
        old_ip = node.nat.public_ip
        node.nat.rebind(new_ip)
        for other in self._nodes.values():
            if other.nat is node.nat:
                other.flow_ports.clear()
        logger.info(f"Public address of {node.nat.ap_id} changed {old_ip} -> {new_ip}")
        return new_ip

    def survey(self, region: Optional[List[str]] = None) -> List[Dict]:
        """
        What a passive Wi-Fi sniffer near the given APs would see: one entry
        per beacon with the station MACs associated to it.
        """
        beacons = []
        for ap_id, router in self.routers.items():
            if region is not None and ap_id not in region:
                continue
            stations = [n.mac for n in self._nodes.values() if n.nat is router and n.mac is not None]
            beacons.append({'ap_id': ap_id, 'ssid': router.ssid, 'ap_mac': router.ap_mac, 'stations': stations})
        return beacons

    # Clock and randomness

    @property
    def now(self) -> int:
        return int(self.env.now)

    def unix_time(self) -> int:
        return self.epoch + self.now

    def random_bytes(self, n: int) -> bytes:
        return self.rng.bytes(n)

    # Messaging

    def _check_open(self) -> None:
        if self._closed:
            raise LifecycleError("network has been shut down")

    def _flow_for(self, node: _Node, dst: str) -> Tuple[Optional[Flow], str]:
        if node.nat is None:
            return None, node.public_ip
        if dst not in node.flow_ports:
            node.flow_ports[dst] = self._next_private_port
            self._next_private_port += 1
        public_port = node.nat.bind(node.private_ip, node.flow_ports[dst])
        return Flow(node.nat.ap_id, node.nat.public_ip, public_port), f"{node.nat.public_ip}:{public_port}"

    def send(self, src: str, dst: str, msg, channel: Channel) -> Envelope:
        """
        Schedule delivery of ``msg`` from ``src`` to ``dst`` one hop from now.

        Returns:
            Envelope: The scheduled message
        """
        self._check_open()
        src_node, dst_node = self._node(src), self._node(dst)
        channel = Channel(channel)
        flow = None
        observed = ""
        if channel is Channel.LOCAL_AP:
            if not self.same_lan(src, dst):
                raise ChannelError(f"{src} and {dst} do not share a local network")
            observed = src_node.private_ip
        elif channel is Channel.SERVER_INTERNAL:
            if src_node.nat is not None or dst_node.nat is not None:
                raise ChannelError("server-internal channel connects servers only")
            observed = src_node.public_ip
        else:
            if dst_node.nat is not None:
                raise AddressError(f"{dst} is behind a NAT and has no open flow from {src}")
            flow, observed = self._flow_for(src_node, dst)
        envelope = Envelope(src=src, dst=dst, channel=channel, msg=msg,
                            src_address=self.address(src), dst_address=self.address(dst),
                            flow=flow, observed_src=observed)
        self.env.process(self._deliver(envelope))
        return envelope

    def reply(self, request: Envelope, msg) -> Envelope:
        """
        Answer ``request`` along its return path. For a request that came
        through a NAT the answer is addressed to the flow's public endpoint,
        so it is lost if that endpoint no longer exists.
        """
        self._check_open()
        if request.flow is None:
            return self.send(request.dst, request.src, msg, request.channel)
        envelope = Envelope(src=request.dst, dst=request.src, channel=request.channel, msg=msg,
                            src_address=self.address(request.dst),
                            dst_address=NodeAddress(request.src, request.src_address.private_ip,
                                                    request.flow.public_ip, request.src_address.network),
                            flow=request.flow, observed_src=self.address(request.dst).public_ip)
        self.env.process(self._deliver(envelope, nat_return=True))
        return envelope

    def _resolve_return(self, envelope: Envelope) -> Optional[str]:
        flow = envelope.flow
        router = self.routers.get(flow.ap_id)
        if router is None or router.public_ip != flow.public_ip:
            return "stale-public-address"
        mapped = router.lookup(flow.public_port)
        if mapped is None:
            return "no-nat-binding"
        node = self._nodes.get(envelope.dst)
        if node is None or node.nat is not router or node.private_ip != mapped[0]:
            return "node-left-network"
        return None

    def _deliver(self, envelope: Envelope, nat_return: bool = False):
        yield self.env.timeout(HOP)
        drop_reason = self._resolve_return(envelope) if nat_return else None
        if drop_reason is None and self.drop_hook is not None:
            drop_reason = self.drop_hook(envelope)
        envelope.seq = len(self.trace)
        annotations = {
            'outcome': 'dropped' if drop_reason else 'delivered',
            'sniffable': 'true' if envelope.channel is Channel.LOCAL_AP else 'false',
            'observed_src': envelope.observed_src or '',
        }
        if drop_reason:
            annotations['drop_reason'] = drop_reason
        record = TraceRecord(
            seq=envelope.seq,
            vtime=self.now,
            src=envelope.src_address,
            dst=envelope.dst_address,
            channel=envelope.channel,
            kind=type(envelope.msg).__name__,
            payload_hex=serialize(redact_for_trace(envelope.msg)).hex(),
            annotations=annotations,
        )
        self.trace.append(record)
        for sniffer in self._sniffers:
            if sniffer.matches(record):
                sniffer.records.append(record)
        if drop_reason:
            logger.debug(f"#{record.seq} {record.kind} {envelope.src} -> {envelope.dst} dropped ({drop_reason})")
            return
        logger.debug(f"#{record.seq} {record.kind} {envelope.src} -> {envelope.dst} over {envelope.channel.value}")
        handler = self._nodes[envelope.dst].handler
        if handler is not None:
            handler(envelope)

    def run_until_idle(self) -> int:
        """Process events until none remain. Returns the final virtual time."""
        self._check_open()
        if self._running:
            raise LifecycleError("run_until_idle called from inside a handler")
        self._running = True
        try:
            self.env.run()
        finally:
            self._running = False
        return self.now

    def advance(self, duration: int) -> int:
        """Let ``duration`` virtual time units pass, processing anything due."""
        self._check_open()
        if duration > 0:
            self.env.run(until=self.env.now + duration)
        return self.now

    def attach_sniffer(self, channel: Optional[Channel] = None, node: Optional[str] = None) -> Sniffer:
        if node is not None:
            self._node(node)
        sniffer = Sniffer(Channel(channel) if channel is not None else None, node)
        self._sniffers.append(sniffer)
        return sniffer

    def shutdown(self) -> None:
        self._closed = True

    # Trace output

    def trace_lines(self) -> List[str]:
        return [record.to_json() for record in self.trace]

    def write_trace(self, path: str) -> str:
        with open(path, 'w', encoding='utf-8', newline='\n') as f:
            for line in self.trace_lines():
                f.write(line + "\n")
        return path
