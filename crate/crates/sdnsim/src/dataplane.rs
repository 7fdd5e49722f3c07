//! OpenFlow-flavoured data plane: packets, single-table switches with
//! priority/insertion-order lookup, gateway extensions, and point-to-point
//! links.
//!
//! Switch operations are pure state machines: they mutate local switch state
//! and return effects (forward here, punt to controller, drop) that the
//! simulation layer turns into scheduled events. Nothing in this module
//! talks to the event kernel directly.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{FieldPath, Value};
use crate::kernel::Micros;
use crate::pubsub::{DiscoveryMsg, SampleBatch};
use crate::string_id;

pub type PortId = u32;

string_id!(
    /// Switch (or gateway) identifier from the topology.
    SwitchId
);
string_id!(
    /// Link identifier from the topology.
    LinkId
);
string_id!(
    /// End-device identifier from the topology.
    DeviceId
);
string_id!(
    /// Network address. Multicast group addresses use the `mc:` prefix and
    /// are replicated by group rules rather than delivered point-to-point.
    Addr
);

impl Addr {
    pub fn is_multicast(&self) -> bool {
        self.0.starts_with("mc:")
    }
}

/// Well-known multicast group that carries discovery announcements.
pub const DISCOVERY_MCAST: &str = "mc:discovery";

/// Fixed per-packet header overhead added on top of the serialized payload.
pub const HEADER_BYTES: u64 = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Data,
    Discovery,
    Control,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Protocol::Data => "data",
            Protocol::Discovery => "discovery",
            Protocol::Control => "control",
        };
        write!(f, "{s}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Payload {
    /// One or more data samples from a single writer.
    Samples(SampleBatch),
    /// A participant discovery announcement.
    Discovery(DiscoveryMsg),
    /// Anything the data plane cannot look into (probes, foreign traffic).
    Opaque { tag: String },
}

/// Hands out unique packet identifiers for the lifetime of a simulation.
#[derive(Debug, Default)]
pub struct IdGen {
    next: u64,
}

impl IdGen {
    pub fn next_id(&mut self) -> u64 {
        let id = self.next;
        self.next += 1;
        id
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: u64,
    /// Time the packet was first injected into the network.
    pub created_at: Micros,
    pub src: Addr,
    pub dst: Addr,
    pub protocol: Protocol,
    /// Differentiated services code point, 0..=63.
    pub dscp: u8,
    /// Best-effort packets are discarded by links in the `Drop` state.
    pub best_effort: bool,
    pub size_bytes: u64,
    pub payload: Payload,
}

impl Packet {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: u64,
        created_at: Micros,
        src: Addr,
        dst: Addr,
        protocol: Protocol,
        dscp: u8,
        best_effort: bool,
        payload: Payload,
    ) -> Packet {
        debug_assert!(dscp <= 63, "dscp out of range");
        let payload_len = serde_json::to_vec(&payload)
            .map(|v| v.len() as u64)
            .unwrap_or(0);
        Packet {
            id,
            created_at,
            src,
            dst,
            protocol,
            dscp,
            best_effort,
            size_bytes: HEADER_BYTES + payload_len,
            payload,
        }
    }
}

/// Match on a sample field inside the packet payload: true when at least one
/// carried sample has the field equal to the value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeywordMatch {
    pub field: FieldPath,
    pub value: Value,
}

/// Exact-match flow pattern. An absent field is a wildcard.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowMatch {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_port: Option<PortId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<Addr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<Addr>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protocol: Option<Protocol>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dscp: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_keyword: Option<KeywordMatch>,
}

impl FlowMatch {
    pub fn wildcard() -> Self {
        FlowMatch::default()
    }

    pub fn matches(&self, in_port: PortId, packet: &Packet) -> bool {
        if let Some(p) = self.in_port {
            if p != in_port {
                return false;
            }
        }
        if let Some(src) = &self.src {
            if *src != packet.src {
                return false;
            }
        }
        if let Some(dst) = &self.dst {
            if *dst != packet.dst {
                return false;
            }
        }
        if let Some(proto) = self.protocol {
            if proto != packet.protocol {
                return false;
            }
        }
        if let Some(dscp) = self.dscp {
            if dscp != packet.dscp {
                return false;
            }
        }
        if let Some(kw) = &self.payload_keyword {
            // Only sample payloads can be inspected; opaque payloads never
            // match a keyword.
            let Payload::Samples(batch) = &packet.payload else {
                return false;
            };
            let hit = batch.samples.iter().any(|s| {
                s.fields
                    .get(&kw.field)
                    .is_some_and(|v| v.loose_eq(&kw.value))
            });
            if !hit {
                return false;
            }
        }
        true
    }

    /// True when every field this pattern constrains is constrained to the
    /// same value by `other`. Slice templates use this to bound the match
    /// space an application may program.
    pub fn subsumes(&self, other: &FlowMatch) -> bool {
        fn ok<T: PartialEq>(template: &Option<T>, candidate: &Option<T>) -> bool {
            match template {
                None => true,
                Some(t) => candidate.as_ref() == Some(t),
            }
        }
        ok(&self.in_port, &other.in_port)
            && ok(&self.src, &other.src)
            && ok(&self.dst, &other.dst)
            && ok(&self.protocol, &other.protocol)
            && ok(&self.dscp, &other.dscp)
            && ok(&self.payload_keyword, &other.payload_keyword)
    }

    /// Canonical JSON form, usable as a map key.
    pub fn key(&self) -> String {
        serde_json::to_string(self).expect("flow match serializes")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowAction {
    /// Forward out one port.
    Output(PortId),
    /// Punt the packet to the controller as a PACKET_IN.
    ToController,
    /// Discard; later actions in the list are not executed.
    Drop,
    /// Rewrite the DSCP field; affects subsequent outputs of this packet.
    SetDscp(u8),
    /// Replicate to every listed port except the one the packet arrived on.
    Group(Vec<PortId>),
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowEntry {
    pub priority: i64,
    #[serde(rename = "match")]
    pub pattern: FlowMatch,
    pub actions: Vec<FlowAction>,
    pub packet_count: u64,
    pub byte_count: u64,
    /// Monotone per-switch installation stamp; the tie-breaker at equal
    /// priority (older entry wins).
    pub install_seq: u64,
    pub idle_timeout_us: Option<Micros>,
    pub last_match_us: Micros,
    pub installed_by: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowStats {
    pub priority: i64,
    #[serde(rename = "match")]
    pub pattern: FlowMatch,
    pub packet_count: u64,
    pub byte_count: u64,
    pub install_seq: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowModCommand {
    Add,
    Modify,
    Delete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MissBehavior {
    ToController,
    Drop,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum FlowTableError {
    #[error("an entry with this priority and match already exists")]
    DuplicateEntry,
    #[error("no entry with this priority and match")]
    NoSuchEntry,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FlowModOutcome {
    Added,
    Modified,
    /// Number of entries removed (possibly zero).
    Deleted(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// Table miss on a switch configured to drop misses.
    NoMatch,
    /// An explicit drop action.
    ActionDrop,
}

/// What a switch wants done with a packet. The simulation layer interprets
/// these; the switch itself never schedules anything.
#[derive(Clone, Debug, PartialEq)]
pub enum SwitchEffect {
    Forward { port: PortId, packet: Packet },
    PacketIn { in_port: PortId, packet: Packet },
    BadPort { port: PortId, packet: Packet },
    Dropped { reason: DropReason, packet: Packet },
}

/// IoT object descriptor kept by gateways: location, free-form description
/// and the addresses (unicast, URI, multicast) the object answers to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatewayObject {
    pub object_id: String,
    #[serde(default)]
    pub location: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub addresses: Vec<String>,
}

#[derive(Debug)]
pub struct Switch {
    pub id: SwitchId,
    pub ports: BTreeSet<PortId>,
    pub miss_behavior: MissBehavior,
    pub is_gateway: bool,
    pub multicast_capable: bool,
    pub object_list: Vec<GatewayObject>,
    table: Vec<FlowEntry>,
    next_install_seq: u64,
}

impl Switch {
    pub fn new(
        id: SwitchId,
        ports: impl IntoIterator<Item = PortId>,
        miss_behavior: MissBehavior,
        is_gateway: bool,
        multicast_capable: bool,
    ) -> Switch {
        Switch {
            id,
            ports: ports.into_iter().collect(),
            miss_behavior,
            is_gateway,
            multicast_capable,
            object_list: Vec::new(),
            table: Vec::new(),
            next_install_seq: 0,
        }
    }

    pub fn table(&self) -> &[FlowEntry] {
        &self.table
    }

    /// Highest-priority matching entry; ties resolve to the earliest
    /// installed entry.
    pub fn lookup(&self, in_port: PortId, packet: &Packet) -> Option<&FlowEntry> {
        self.lookup_idx(in_port, packet).map(|i| &self.table[i])
    }

    pub fn entries(&self) -> &[FlowEntry] {
        &self.table
    }

    fn lookup_idx(&self, in_port: PortId, packet: &Packet) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, entry) in self.table.iter().enumerate() {
            if !entry.pattern.matches(in_port, packet) {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) => {
                    let cur = &self.table[b];
                    if entry.priority > cur.priority
                        || (entry.priority == cur.priority && entry.install_seq < cur.install_seq)
                    {
                        Some(i)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        best
    }

    /// Runs one packet through the table: on a hit, bumps the entry's
    /// counters (original packet size) and executes its actions; on a miss,
    /// follows the configured miss behavior.
    pub fn process_packet(
        &mut self,
        in_port: PortId,
        packet: &Packet,
        now: Micros,
    ) -> Vec<SwitchEffect> {
        match self.lookup_idx(in_port, packet) {
            Some(i) => {
                let entry = &mut self.table[i];
                entry.packet_count += 1;
                entry.byte_count += packet.size_bytes;
                entry.last_match_us = now;
                let actions = entry.actions.clone();
                self.execute_actions(&actions, Some(in_port), packet)
            }
            None => match self.miss_behavior {
                MissBehavior::ToController => vec![SwitchEffect::PacketIn {
                    in_port,
                    packet: packet.clone(),
                }],
                MissBehavior::Drop => vec![SwitchEffect::Dropped {
                    reason: DropReason::NoMatch,
                    packet: packet.clone(),
                }],
            },
        }
    }

    /// Executes an action list without a table lookup (the PACKET_OUT path;
    /// `in_port` is absent there, so group replication excludes nothing).
    pub fn execute_actions(
        &self,
        actions: &[FlowAction],
        in_port: Option<PortId>,
        packet: &Packet,
    ) -> Vec<SwitchEffect> {
        let mut working = packet.clone();
        let mut out = Vec::new();
        for action in actions {
            match action {
                FlowAction::Output(port) => {
                    if self.ports.contains(port) {
                        out.push(SwitchEffect::Forward {
                            port: *port,
                            packet: working.clone(),
                        });
                    } else {
                        out.push(SwitchEffect::BadPort {
                            port: *port,
                            packet: working.clone(),
                        });
                    }
                }
                FlowAction::ToController => {
                    out.push(SwitchEffect::PacketIn {
                        in_port: in_port.unwrap_or(0),
                        packet: working.clone(),
                    });
                }
                FlowAction::Drop => {
                    out.push(SwitchEffect::Dropped {
                        reason: DropReason::ActionDrop,
                        packet: working.clone(),
                    });
                    break;
                }
                FlowAction::SetDscp(v) => {
                    working.dscp = *v;
                }
                FlowAction::Group(ports) => {
                    for port in ports {
                        if Some(*port) == in_port {
                            continue;
                        }
                        if self.ports.contains(port) {
                            out.push(SwitchEffect::Forward {
                                port: *port,
                                packet: working.clone(),
                            });
                        } else {
                            out.push(SwitchEffect::BadPort {
                                port: *port,
                                packet: working.clone(),
                            });
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    pub fn apply_flow_mod(
        &mut self,
        command: FlowModCommand,
        priority: i64,
        pattern: FlowMatch,
        actions: Vec<FlowAction>,
        idle_timeout_us: Option<Micros>,
        installed_by: &str,
        now: Micros,
    ) -> Result<FlowModOutcome, FlowTableError> {
        match command {
            FlowModCommand::Add => {
                if self
                    .table
                    .iter()
                    .any(|e| e.priority == priority && e.pattern == pattern)
                {
                    return Err(FlowTableError::DuplicateEntry);
                }
                let install_seq = self.next_install_seq;
                self.next_install_seq += 1;
                self.table.push(FlowEntry {
                    priority,
                    pattern,
                    actions,
                    packet_count: 0,
                    byte_count: 0,
                    install_seq,
                    idle_timeout_us,
                    last_match_us: now,
                    installed_by: installed_by.to_string(),
                });
                Ok(FlowModOutcome::Added)
            }
            FlowModCommand::Modify => {
                let entry = self
                    .table
                    .iter_mut()
                    .find(|e| e.priority == priority && e.pattern == pattern)
                    .ok_or(FlowTableError::NoSuchEntry)?;
                // Counters and install order survive a modify.
                entry.actions = actions;
                entry.idle_timeout_us = idle_timeout_us;
                Ok(FlowModOutcome::Modified)
            }
            FlowModCommand::Delete => {
                // Delete is by field-wise match equality, across priorities.
                let before = self.table.len();
                self.table.retain(|e| e.pattern != pattern);
                Ok(FlowModOutcome::Deleted(before - self.table.len()))
            }
        }
    }

    /// Per-entry counters, optionally restricted to entries whose pattern is
    /// field-wise equal to `pattern`.
    pub fn query_stats(&self, pattern: Option<&FlowMatch>) -> Vec<FlowStats> {
        self.table
            .iter()
            .filter(|e| pattern.is_none_or(|p| e.pattern == *p))
            .map(|e| FlowStats {
                priority: e.priority,
                pattern: e.pattern.clone(),
                packet_count: e.packet_count,
                byte_count: e.byte_count,
                install_seq: e.install_seq,
            })
            .collect()
    }

    /// Removes entries idle for at least their timeout. Checked lazily when
    /// the switch handles a stats request.
    pub fn expire_idle(&mut self, now: Micros) -> Vec<FlowEntry> {
        let mut removed = Vec::new();
        self.table.retain(|e| {
            let expired = e
                .idle_timeout_us
                .is_some_and(|t| now.saturating_sub(e.last_match_us) >= t);
            if expired {
                removed.push(e.clone());
            }
            !expired
        });
        removed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkState {
    Up,
    Down,
    /// Link is up but discards best-effort packets.
    Drop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkEnd {
    Switch { switch: SwitchId, port: PortId },
    Device { device: DeviceId },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TransmitDecision {
    Deliver {
        latency_us: Micros,
    },
    /// Link is administratively down; every packet is discarded.
    DropDown,
    /// Link drops best-effort traffic.
    DropLossy,
}

#[derive(Clone, Debug)]
pub struct Link {
    pub id: LinkId,
    pub ends: [LinkEnd; 2],
    pub latency_us: Micros,
    pub jitter_us: Micros,
    pub state: LinkState,
}

impl Link {
    pub fn end_index_for_switch(&self, switch: &SwitchId, port: PortId) -> Option<usize> {
        self.ends.iter().position(
            |e| matches!(e, LinkEnd::Switch { switch: s, port: p } if s == switch && *p == port),
        )
    }

    pub fn other_end(&self, from: usize) -> &LinkEnd {
        &self.ends[1 - from]
    }

    /// Decides a transmission's fate. `jitter_draw` is the pre-drawn jitter
    /// contribution (zero unless the link has jitter configured).
    pub fn decide(&self, best_effort: bool, jitter_draw: Micros) -> TransmitDecision {
        match self.state {
            LinkState::Down => TransmitDecision::DropDown,
            LinkState::Drop if best_effort => TransmitDecision::DropLossy,
            _ => TransmitDecision::Deliver {
                latency_us: self.latency_us + jitter_draw,
            },
        }
    }
}
