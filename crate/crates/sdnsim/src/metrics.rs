//! Run accounting: per-switch and per-link counters, the per-packet fate
//! ledger that backs the conservation checks, structured audit events, and
//! the serializable end-of-run report.
//!
//! The ledger's invariant: every packet copy that enters the network leaves
//! it through exactly one of delivery, drop, or controller absorption.
//! Reports are deterministic — identical runs serialize byte-identically.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::dataplane::{Addr, LinkId, Protocol, SwitchId};
use crate::kernel::Micros;

/// Noteworthy happenings, in dispatch order. These power the post-run
/// audits (handover completion, flood mitigation, slice denials) without
/// re-deriving anything from raw counters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AuditEvent {
    FlowInstalled {
        time_us: Micros,
        switch: SwitchId,
        priority: i64,
        pattern: String,
        installed_by: String,
    },
    FlowDeleted {
        time_us: Micros,
        switch: SwitchId,
        pattern: String,
        requested_by: String,
    },
    FlowModFailed {
        time_us: Micros,
        switch: SwitchId,
        xid: u64,
        error: String,
    },
    SliceDenied {
        time_us: Micros,
        app: String,
        priority: i64,
        pattern: String,
        reason: String,
    },
    DiscoveryRuleInstalled {
        time_us: Micros,
        switch: SwitchId,
        group: Addr,
    },
    HandoverStarted {
        time_us: Micros,
        device: String,
        from: String,
        to: String,
    },
    HandoverComplete {
        time_us: Micros,
        device: String,
        started_us: Micros,
        mods: usize,
    },
    FloodAlert {
        time_us: Micros,
        switch: SwitchId,
        pattern: String,
        delta: u64,
        threshold: u64,
    },
    MitigationInstalled {
        time_us: Micros,
        switch: SwitchId,
        pattern: String,
        priority: i64,
    },
    IdleExpired {
        time_us: Micros,
        switch: SwitchId,
        pattern: String,
    },
    /// A packet was forwarded out a port with nothing behind it — the
    /// signature of traffic chasing a device that has moved away.
    DeadPortDrop {
        time_us: Micros,
        switch: SwitchId,
        port: u32,
        packet_id: u64,
        dst: Addr,
    },
    LinkStateChanged {
        time_us: Micros,
        link: LinkId,
        state: String,
    },
}

impl AuditEvent {
    pub fn time_us(&self) -> Micros {
        match self {
            AuditEvent::FlowInstalled { time_us, .. }
            | AuditEvent::FlowDeleted { time_us, .. }
            | AuditEvent::FlowModFailed { time_us, .. }
            | AuditEvent::SliceDenied { time_us, .. }
            | AuditEvent::DiscoveryRuleInstalled { time_us, .. }
            | AuditEvent::HandoverStarted { time_us, .. }
            | AuditEvent::HandoverComplete { time_us, .. }
            | AuditEvent::FloodAlert { time_us, .. }
            | AuditEvent::MitigationInstalled { time_us, .. }
            | AuditEvent::IdleExpired { time_us, .. }
            | AuditEvent::DeadPortDrop { time_us, .. }
            | AuditEvent::LinkStateChanged { time_us, .. } => *time_us,
        }
    }
}

/// How one arrival at a switch was resolved. Exactly one class per arrival:
/// forwarding beats controller punting beats dropping when actions produce
/// a mix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrivalClass {
    Forwarded,
    ToController,
    Dropped,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchCounters {
    /// Packets arriving on data ports (from links and devices).
    pub rx_port: u64,
    /// Packets injected by the controller via PACKET_OUT.
    pub rx_ctl: u64,
    /// Arrivals that resulted in at least one forwarded copy.
    pub forwarded: u64,
    /// Arrivals punted to the controller.
    pub to_controller: u64,
    /// Arrivals that died here.
    pub dropped: u64,
    /// Total copies transmitted (a group action counts each replica).
    pub tx_copies: u64,
}

impl SwitchCounters {
    /// Every arrival is classified exactly once.
    pub fn balanced(&self) -> bool {
        self.rx_port + self.rx_ctl == self.forwarded + self.to_controller + self.dropped
    }
}

/// Lifetime totals for one packet id across all its copies.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PacketFate {
    pub protocol: Option<Protocol>,
    pub src: Option<Addr>,
    pub dst: Option<Addr>,
    /// Copies injected by endpoints.
    pub injected: u64,
    /// Copies re-injected by the controller (PACKET_OUT).
    pub ctl_emitted: u64,
    /// Extra copies minted by in-switch replication (flood/group fan-out
    /// beyond the first output).
    pub replicated: u64,
    /// Copies that reached a device.
    pub delivered: u64,
    /// Copies discarded (link down/lossy, table drop, bad or dead port).
    pub dropped: u64,
    /// Copies absorbed by the controller (PACKET_IN).
    pub ctl_absorbed: u64,
    /// Copies currently on a link or awaiting processing.
    pub in_flight: i64,
}

impl PacketFate {
    pub fn balanced(&self) -> bool {
        (self.injected + self.ctl_emitted + self.replicated) as i64
            == (self.delivered + self.dropped + self.ctl_absorbed) as i64 + self.in_flight
    }
}

/// One reader-accepted sample, recorded at the moment of delivery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleDelivery {
    pub time_us: Micros,
    pub reader: String,
    pub writer: String,
    pub topic: String,
    pub seq: u64,
    /// Packet destination it arrived under (a unicast address or a
    /// multicast group).
    pub via: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReaderSummary {
    pub received: u64,
    pub duplicates: u64,
    pub filtered_out: u64,
    pub eval_errors: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WriterSummary {
    pub written: u64,
    pub suppressed_samples: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PacketTotals {
    pub injected: u64,
    pub ctl_emitted: u64,
    pub replicated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub ctl_absorbed: u64,
    pub in_flight_end: i64,
}

/// A flow table entry as it appears in the report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowDump {
    pub priority: i64,
    #[serde(rename = "match")]
    pub pattern: serde_json::Value,
    pub actions: serde_json::Value,
    pub packet_count: u64,
    pub byte_count: u64,
    pub installed_by: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SwitchReport {
    pub counters: SwitchCounters,
    pub flows: Vec<FlowDump>,
}

/// Everything a run leaves behind. Serialization is deterministic: ordered
/// maps, event-ordered lists, no wall-clock anywhere.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub end_time_us: Micros,
    pub events_dispatched: u64,
    pub trace_hash: String,
    pub totals: PacketTotals,
    pub switches: BTreeMap<String, SwitchReport>,
    /// link id → protocol → packets that entered the link.
    pub links: BTreeMap<String, BTreeMap<String, u64>>,
    /// switch id → protocol → PACKET_INs raised.
    pub packet_ins: BTreeMap<String, BTreeMap<String, u64>>,
    pub writers: BTreeMap<String, WriterSummary>,
    pub readers: BTreeMap<String, ReaderSummary>,
    pub deliveries: Vec<SampleDelivery>,
    pub audits: Vec<AuditEvent>,
    /// Human-readable invariant violations; empty on a healthy run.
    pub conservation_violations: Vec<String>,
}

impl RunReport {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Mutable collector the simulation feeds while running.
#[derive(Debug, Default)]
pub struct Metrics {
    pub switch_counters: BTreeMap<SwitchId, SwitchCounters>,
    pub link_counts: BTreeMap<LinkId, BTreeMap<Protocol, u64>>,
    /// PACKET_IN count per switch and packet protocol.
    pub packet_ins: BTreeMap<SwitchId, BTreeMap<Protocol, u64>>,
    pub fates: BTreeMap<u64, PacketFate>,
    pub deliveries: Vec<SampleDelivery>,
    pub audits: Vec<AuditEvent>,
}

impl Metrics {
    fn fate(&mut self, packet: &crate::dataplane::Packet) -> &mut PacketFate {
        let fate = self.fates.entry(packet.id).or_default();
        if fate.protocol.is_none() {
            fate.protocol = Some(packet.protocol);
            fate.src = Some(packet.src.clone());
            fate.dst = Some(packet.dst.clone());
        }
        fate
    }

    /// An endpoint put a fresh copy on its access link.
    pub fn note_injected(&mut self, packet: &crate::dataplane::Packet) {
        let fate = self.fate(packet);
        fate.injected += 1;
        fate.in_flight += 1;
    }

    /// The controller re-injected this packet via PACKET_OUT.
    pub fn note_ctl_emitted(&mut self, packet: &crate::dataplane::Packet) {
        let fate = self.fate(packet);
        fate.ctl_emitted += 1;
        fate.in_flight += 1;
    }

    /// A copy was replicated inside a switch (one arrival, several outputs):
    /// `extra` is outputs beyond the first.
    pub fn note_replicated(&mut self, packet: &crate::dataplane::Packet, extra: u64) {
        let fate = self.fate(packet);
        fate.replicated += extra;
        fate.in_flight += extra as i64;
    }

    pub fn note_delivered(&mut self, packet: &crate::dataplane::Packet) {
        let fate = self.fate(packet);
        fate.delivered += 1;
        fate.in_flight -= 1;
    }

    pub fn note_dropped(&mut self, packet: &crate::dataplane::Packet) {
        let fate = self.fate(packet);
        fate.dropped += 1;
        fate.in_flight -= 1;
    }

    pub fn note_ctl_absorbed(&mut self, packet: &crate::dataplane::Packet) {
        let fate = self.fate(packet);
        fate.ctl_absorbed += 1;
        fate.in_flight -= 1;
    }

    pub fn note_arrival(&mut self, switch: &SwitchId, from_controller: bool) {
        let c = self.switch_counters.entry(switch.clone()).or_default();
        if from_controller {
            c.rx_ctl += 1;
        } else {
            c.rx_port += 1;
        }
    }

    pub fn note_classified(&mut self, switch: &SwitchId, class: ArrivalClass, tx_copies: u64) {
        let c = self.switch_counters.entry(switch.clone()).or_default();
        match class {
            ArrivalClass::Forwarded => c.forwarded += 1,
            ArrivalClass::ToController => c.to_controller += 1,
            ArrivalClass::Dropped => c.dropped += 1,
        }
        c.tx_copies += tx_copies;
    }

    pub fn note_packet_in(&mut self, switch: &SwitchId, protocol: Protocol) {
        *self
            .packet_ins
            .entry(switch.clone())
            .or_default()
            .entry(protocol)
            .or_insert(0) += 1;
    }

    pub fn note_link_tx(&mut self, link: &LinkId, protocol: Protocol) {
        *self
            .link_counts
            .entry(link.clone())
            .or_default()
            .entry(protocol)
            .or_insert(0) += 1;
    }

    pub fn audit(&mut self, event: AuditEvent) {
        self.audits.push(event);
    }

    pub fn totals(&self) -> PacketTotals {
        let mut t = PacketTotals::default();
        for fate in self.fates.values() {
            t.injected += fate.injected;
            t.ctl_emitted += fate.ctl_emitted;
            t.replicated += fate.replicated;
            t.delivered += fate.delivered;
            t.dropped += fate.dropped;
            t.ctl_absorbed += fate.ctl_absorbed;
            t.in_flight_end += fate.in_flight;
        }
        t
    }

    /// Every invariant violation the ledger can see. Empty means: every
    /// switch classified each arrival exactly once, and every packet copy
    /// is accounted for.
    pub fn conservation_violations(&self, expect_quiescent: bool) -> Vec<String> {
        let mut out = Vec::new();
        for (sw, c) in &self.switch_counters {
            if !c.balanced() {
                out.push(format!(
                    "switch {sw}: rx {}+{} != classified {}+{}+{}",
                    c.rx_port, c.rx_ctl, c.forwarded, c.to_controller, c.dropped
                ));
            }
        }
        for (id, fate) in &self.fates {
            if !fate.balanced() {
                out.push(format!(
                    "packet {id}: sources {}+{}+{} != sinks {}+{}+{} with {} in flight",
                    fate.injected,
                    fate.ctl_emitted,
                    fate.replicated,
                    fate.delivered,
                    fate.dropped,
                    fate.ctl_absorbed,
                    fate.in_flight
                ));
            }
            if expect_quiescent && fate.in_flight != 0 {
                out.push(format!(
                    "packet {id}: {} copies still in flight",
                    fate.in_flight
                ));
            }
        }
        out
    }
}
