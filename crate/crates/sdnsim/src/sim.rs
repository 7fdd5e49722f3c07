//! The simulation: one world object owning switches, links, device
//! participants, the per-switch control agents and the controller, driven by
//! kernel events. Every module stays pure (state in, effects out); this file
//! is where effects turn into scheduled events and metrics.
//!
//! Control-plane traffic never touches the simulated fabric: mediation
//! samples travel over a dedicated out-of-band channel modeled as a fixed
//! per-message latency. Data-plane packets hop link by link through the
//! switches.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::controller::{Controller, CtlEffect};
use crate::dataplane::{
    Addr, DeviceId, IdGen, Link, LinkEnd, LinkId, LinkState, Packet, Payload, PortId, Protocol,
    Switch, SwitchEffect, SwitchId, TransmitDecision, DISCOVERY_MCAST,
};
use crate::kernel::{EntityId, Event, Kernel, KernelError, Micros};
use crate::mediation::{
    ControlMsg, FlowModMsg, FlowModReplyMsg, PacketInMsg, PacketOutMsg, StatsReplyMsg,
    StatsRequestMsg, TOPICS, TOPIC_FLOW_MOD, TOPIC_FLOW_MOD_REPLY, TOPIC_PACKET_IN,
    TOPIC_PACKET_OUT, TOPIC_STATS_REPLY, TOPIC_STATS_REQUEST,
};
use crate::metrics::{ArrivalClass, AuditEvent, FlowDump, Metrics, RunReport, SwitchReport};
use crate::pubsub::{
    Channel, EndpointId, Participant, ParticipantName, PubSubEffect, Qos, SampleBatch, TopicName,
    TopicRegistry,
};
use crate::scenario::{access_link_id, Action, Scenario};
use crate::topology::Topology;

/// Devices re-announce themselves this often.
pub const ANNOUNCE_PERIOD_US: Micros = 1_000_000;
/// First announcements are staggered this far apart so the reactive
/// discovery rules land between announcers.
pub const ANNOUNCE_STAGGER_US: Micros = 10_000;
/// Dispatch cap when the scenario does not set one.
pub const DEFAULT_MAX_EVENTS: u64 = 2_000_000;

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    /// Installs static flows and multicast distribution at time zero.
    Bootstrap,
    /// A packet reaches a switch port.
    Arrive {
        switch: SwitchId,
        port: PortId,
        packet: Packet,
    },
    /// A packet reaches a device.
    DeviceArrive { device: DeviceId, packet: Packet },
    /// A mediation batch lands at a control-domain participant.
    ControlDeliver {
        to: ParticipantName,
        batch: SampleBatch,
    },
    /// A writer's batching deadline.
    Flush {
        device: DeviceId,
        writer: EndpointId,
        at: Micros,
    },
    /// Periodic device announcement on the discovery group.
    Announce { device: DeviceId },
    /// Controller's stats-polling timer.
    StatsPoll,
    /// Out-of-band notification that a device reattached.
    MobilityNotice {
        device: DeviceId,
        switch: SwitchId,
        port: PortId,
    },
    /// One repetition of a scripted action.
    Action { index: usize, rep: u64 },
}

type Kern = Kernel<EventKind>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("event budget exhausted after {dispatched} dispatches")]
    Budget { dispatched: u64 },
}

struct Entities {
    script: EntityId,
    switches: BTreeMap<SwitchId, EntityId>,
    devices: BTreeMap<DeviceId, EntityId>,
    /// Control participants (controller and agents) by name.
    control: BTreeMap<ParticipantName, EntityId>,
}

pub struct World {
    control_latency_us: Micros,
    horizon_us: Micros,
    scenario: Scenario,
    switches: BTreeMap<SwitchId, Switch>,
    links: Vec<Link>,
    link_at: BTreeMap<(SwitchId, PortId), usize>,
    link_index: BTreeMap<LinkId, usize>,
    attach: BTreeMap<DeviceId, (SwitchId, PortId)>,
    device_addr: BTreeMap<DeviceId, Addr>,
    groups: BTreeMap<Addr, Vec<DeviceId>>,
    participants: BTreeMap<DeviceId, Participant>,
    writer_index: BTreeMap<(DeviceId, TopicName), EndpointId>,
    controller: Controller,
    ctl_name: ParticipantName,
    ctl: Participant,
    ctl_writers: BTreeMap<&'static str, EndpointId>,
    agents: BTreeMap<SwitchId, Participant>,
    agent_writers: BTreeMap<SwitchId, BTreeMap<&'static str, EndpointId>>,
    agent_switch: BTreeMap<ParticipantName, SwitchId>,
    idgen: IdGen,
    pub metrics: Metrics,
    entities: Entities,
}

fn agent_name(sw: &SwitchId) -> ParticipantName {
    ParticipantName::new(format!("agent:{sw}"))
}

impl World {
    pub fn new(topo: &Topology, scenario: Scenario, kernel: &mut Kern) -> World {
        let mut registry = TopicRegistry::default();
        for (domain, topic) in &topo.topics {
            registry
                .create(*domain, topic.clone())
                .expect("validated unique");
        }
        for t in TOPICS {
            registry
                .create(topo.control.domain, TopicName::new(t))
                .expect("fixed set");
        }

        // --- control plane: controller + one agent per switch, statically
        // discovered (the out-of-band channel needs no announcements).
        let ctl_name = ParticipantName::new(topo.control.controller.as_str());
        let mut ctl = Participant::new(
            ctl_name.clone(),
            topo.control.domain,
            Addr::new(format!("ctl:{}", topo.control.controller)),
        );
        let mut ctl_writers = BTreeMap::new();
        for t in [TOPIC_PACKET_OUT, TOPIC_FLOW_MOD, TOPIC_STATS_REQUEST] {
            ctl_writers.insert(
                t,
                ctl.create_writer(TopicName::new(t), Qos::default(), vec![]),
            );
        }
        for t in [TOPIC_PACKET_IN, TOPIC_FLOW_MOD_REPLY, TOPIC_STATS_REPLY] {
            ctl.create_reader(TopicName::new(t), Qos::default(), None);
        }

        let mut agents = BTreeMap::new();
        let mut agent_writers = BTreeMap::new();
        let mut agent_switch = BTreeMap::new();
        for sw in topo.switches.keys() {
            let name = agent_name(sw);
            let mut agent = Participant::new(
                name.clone(),
                topo.control.domain,
                Addr::new(format!("ctl:{name}")),
            );
            let mut writers = BTreeMap::new();
            for t in [TOPIC_PACKET_IN, TOPIC_FLOW_MOD_REPLY, TOPIC_STATS_REPLY] {
                writers.insert(
                    t,
                    agent.create_writer(TopicName::new(t), Qos::default(), vec![]),
                );
            }
            let filter = crate::mediation::agent_filter(sw);
            for t in [TOPIC_PACKET_OUT, TOPIC_FLOW_MOD, TOPIC_STATS_REQUEST] {
                agent.create_reader(TopicName::new(t), Qos::default(), Some(filter.clone()));
            }
            agent_switch.insert(name.clone(), sw.clone());
            agent_writers.insert(sw.clone(), writers);
            agents.insert(sw.clone(), agent);
        }
        // Static mutual discovery across the control domain.
        let ctl_record = ctl.record();
        let agent_records: Vec<_> = agents.values().map(|a| a.record()).collect();
        for agent in agents.values_mut() {
            agent.merge_record(ctl_record.clone());
        }
        for r in agent_records {
            ctl.merge_record(r);
        }

        // --- data plane
        let switches: BTreeMap<SwitchId, Switch> = topo
            .switches
            .values()
            .map(|s| {
                let mut sw = Switch::new(
                    s.id.clone(),
                    s.ports.clone(),
                    s.miss,
                    s.is_gateway,
                    s.multicast_capable,
                );
                for o in &s.objects {
                    sw.object_list.push(o.clone());
                }
                (s.id.clone(), sw)
            })
            .collect();

        let mut links = Vec::new();
        let mut link_at = BTreeMap::new();
        let mut link_index = BTreeMap::new();
        for spec in &topo.links {
            let idx = links.len();
            links.push(Link {
                id: spec.id.clone(),
                ends: [
                    LinkEnd::Switch {
                        switch: spec.a.0.clone(),
                        port: spec.a.1,
                    },
                    LinkEnd::Switch {
                        switch: spec.b.0.clone(),
                        port: spec.b.1,
                    },
                ],
                latency_us: spec.latency_us,
                jitter_us: spec.jitter_us,
                state: LinkState::Up,
            });
            link_at.insert(spec.a.clone(), idx);
            link_at.insert(spec.b.clone(), idx);
            link_index.insert(spec.id.clone(), idx);
        }
        let mut attach = BTreeMap::new();
        for d in topo.devices.values() {
            let idx = links.len();
            links.push(Link {
                id: access_link_id(&d.id),
                ends: [
                    LinkEnd::Switch {
                        switch: d.switch.clone(),
                        port: d.port,
                    },
                    LinkEnd::Device {
                        device: d.id.clone(),
                    },
                ],
                latency_us: d.latency_us,
                jitter_us: d.jitter_us,
                state: LinkState::Up,
            });
            link_at.insert((d.switch.clone(), d.port), idx);
            link_index.insert(access_link_id(&d.id), idx);
            attach.insert(d.id.clone(), (d.switch.clone(), d.port));
        }

        // --- device participants and their endpoints
        let mut participants: BTreeMap<DeviceId, Participant> = topo
            .devices
            .values()
            .map(|d| {
                (
                    d.id.clone(),
                    Participant::new(
                        ParticipantName::new(d.id.as_str()),
                        d.domain,
                        d.address.clone(),
                    ),
                )
            })
            .collect();
        let mut writer_index = BTreeMap::new();
        for spec in &topo.writers {
            let p = participants.get_mut(&spec.participant).expect("validated");
            let channels: Vec<Channel> = spec
                .channels
                .iter()
                .map(|c| Channel {
                    group: c.group.clone(),
                    filter: c.filter.clone(),
                })
                .collect();
            let id = p.create_writer(spec.topic.clone(), spec.qos.clone(), channels);
            // First writer for a (device, topic) pair is the scriptable one.
            writer_index
                .entry((spec.participant.clone(), spec.topic.clone()))
                .or_insert(id);
        }
        for spec in &topo.readers {
            let p = participants.get_mut(&spec.participant).expect("validated");
            p.create_reader(spec.topic.clone(), spec.qos.clone(), spec.filter.clone());
        }

        // --- entities and the initial schedule
        let entities = Entities {
            script: kernel.register_entity("script"),
            switches: topo
                .switches
                .keys()
                .map(|s| (s.clone(), kernel.register_entity(&format!("switch:{s}"))))
                .collect(),
            devices: topo
                .devices
                .keys()
                .map(|d| (d.clone(), kernel.register_entity(&format!("device:{d}"))))
                .collect(),
            control: {
                let mut m = BTreeMap::new();
                m.insert(ctl_name.clone(), kernel.register_entity("controller"));
                for sw in topo.switches.keys() {
                    let name = agent_name(sw);
                    m.insert(name.clone(), kernel.register_entity(name.as_str()));
                }
                m
            },
        };

        let horizon_us = scenario.horizon_us();
        let world = World {
            control_latency_us: topo.control.latency_us,
            horizon_us,
            scenario,
            switches,
            links,
            link_at,
            link_index,
            attach,
            device_addr: topo
                .devices
                .values()
                .map(|d| (d.id.clone(), d.address.clone()))
                .collect(),
            groups: topo.groups.clone(),
            participants,
            writer_index,
            controller: Controller::new(topo),
            ctl_name: ctl_name.clone(),
            ctl,
            ctl_writers,
            agents,
            agent_writers,
            agent_switch,
            idgen: IdGen::default(),
            metrics: Metrics::default(),
            entities,
        };

        let ctl_entity = world.entities.control[&ctl_name];
        kernel
            .schedule(ctl_entity, 0, EventKind::Bootstrap)
            .expect("registered");
        for (i, dev) in world
            .entities
            .devices
            .keys()
            .cloned()
            .enumerate()
            .collect::<Vec<_>>()
        {
            let target = world.entities.devices[&dev];
            kernel
                .schedule(
                    target,
                    (i as u64 + 1) * ANNOUNCE_STAGGER_US,
                    EventKind::Announce { device: dev },
                )
                .expect("registered");
        }
        if let Some(policy) = world.controller.flood_policy() {
            kernel
                .schedule(ctl_entity, policy.window_us, EventKind::StatsPoll)
                .expect("registered");
        }
        for (index, action) in world.scenario.actions.iter().enumerate() {
            match action {
                Action::Publish {
                    time_us,
                    count,
                    interval_us,
                    ..
                } => {
                    for rep in 0..*count {
                        kernel
                            .schedule(
                                world.entities.script,
                                time_us + interval_us * rep,
                                EventKind::Action { index, rep },
                            )
                            .expect("registered");
                    }
                }
                other => {
                    kernel
                        .schedule(
                            world.entities.script,
                            other.time_us(),
                            EventKind::Action { index, rep: 0 },
                        )
                        .expect("registered");
                }
            }
        }
        world
    }

    // -----------------------------------------------------------------
    // Transmission
    // -----------------------------------------------------------------

    fn jitter_draw(kernel: &mut Kern, jitter_us: Micros) -> Micros {
        if jitter_us == 0 {
            0
        } else {
            kernel.rng().gen_range(0..=jitter_us)
        }
    }

    fn deliver_over_link(
        &mut self,
        kernel: &mut Kern,
        idx: usize,
        from_device: bool,
        packet: Packet,
    ) {
        let link = &self.links[idx];
        let jitter = Self::jitter_draw(kernel, link.jitter_us);
        match link.decide(packet.best_effort, jitter) {
            TransmitDecision::Deliver { latency_us } => {
                self.metrics.note_link_tx(&link.id, packet.protocol);
                // From a device the far end is the switch end; from a switch
                // it is whatever sits opposite the emitting port.
                let dest = if from_device {
                    &link.ends[0]
                } else {
                    &link.ends[1]
                };
                match dest.clone() {
                    LinkEnd::Switch { switch, port } => {
                        let target = self.entities.switches[&switch];
                        kernel
                            .schedule(
                                target,
                                latency_us,
                                EventKind::Arrive {
                                    switch,
                                    port,
                                    packet,
                                },
                            )
                            .expect("registered");
                    }
                    LinkEnd::Device { device } => {
                        let target = self.entities.devices[&device];
                        kernel
                            .schedule(
                                target,
                                latency_us,
                                EventKind::DeviceArrive { device, packet },
                            )
                            .expect("registered");
                    }
                }
            }
            TransmitDecision::DropDown | TransmitDecision::DropLossy => {
                self.metrics.note_dropped(&packet);
            }
        }
    }

    fn transmit_from_device(&mut self, kernel: &mut Kern, device: &DeviceId, packet: Packet) {
        let idx = self.link_index[&access_link_id(device)];
        self.deliver_over_link(kernel, idx, true, packet);
    }

    fn transmit_from_switch(
        &mut self,
        kernel: &mut Kern,
        sw: &SwitchId,
        port: PortId,
        packet: Packet,
    ) {
        let Some(&idx) = self.link_at.get(&(sw.clone(), port)) else {
            // Port exists but nothing is wired behind it any more — the
            // classic footprint of traffic chasing a moved device.
            self.metrics.audit(AuditEvent::DeadPortDrop {
                time_us: kernel.now(),
                switch: sw.clone(),
                port,
                packet_id: packet.id,
                dst: packet.dst.clone(),
            });
            self.metrics.note_dropped(&packet);
            return;
        };
        // Orient by which end this (switch, port) is.
        let link = &self.links[idx];
        let from = link
            .end_index_for_switch(sw, port)
            .expect("indexed by this end");
        let jitter = Self::jitter_draw(kernel, link.jitter_us);
        match link.decide(packet.best_effort, jitter) {
            TransmitDecision::Deliver { latency_us } => {
                self.metrics.note_link_tx(&link.id, packet.protocol);
                match link.other_end(from).clone() {
                    LinkEnd::Switch { switch, port } => {
                        let target = self.entities.switches[&switch];
                        kernel
                            .schedule(
                                target,
                                latency_us,
                                EventKind::Arrive {
                                    switch,
                                    port,
                                    packet,
                                },
                            )
                            .expect("registered");
                    }
                    LinkEnd::Device { device } => {
                        let target = self.entities.devices[&device];
                        kernel
                            .schedule(
                                target,
                                latency_us,
                                EventKind::DeviceArrive { device, packet },
                            )
                            .expect("registered");
                    }
                }
            }
            TransmitDecision::DropDown | TransmitDecision::DropLossy => {
                self.metrics.note_dropped(&packet);
            }
        }
    }

    /// Accounts for one arrival's worth of switch effects and carries each
    /// copy onward. Exactly one arrival class is recorded; every outgoing
    /// copy beyond the first is a replication.
    fn apply_switch_outcome(
        &mut self,
        kernel: &mut Kern,
        sw: &SwitchId,
        effects: Vec<SwitchEffect>,
        arriving: &Packet,
    ) {
        let outcomes = effects.len() as u64;
        let forwards = effects
            .iter()
            .filter(|e| matches!(e, SwitchEffect::Forward { .. }))
            .count() as u64;
        let absorbs = effects
            .iter()
            .filter(|e| matches!(e, SwitchEffect::PacketIn { .. }))
            .count() as u64;

        if outcomes == 0 {
            // A matched entry whose action list moved nothing (empty or
            // set-field only): the copy ends here.
            self.metrics.note_dropped(arriving);
            self.metrics.note_classified(sw, ArrivalClass::Dropped, 0);
            return;
        }
        if outcomes > 1 {
            self.metrics.note_replicated(arriving, outcomes - 1);
        }
        let class = if forwards > 0 {
            ArrivalClass::Forwarded
        } else if absorbs > 0 {
            ArrivalClass::ToController
        } else {
            ArrivalClass::Dropped
        };
        self.metrics.note_classified(sw, class, forwards);

        for effect in effects {
            match effect {
                SwitchEffect::Forward { port, packet } => {
                    self.transmit_from_switch(kernel, sw, port, packet);
                }
                SwitchEffect::PacketIn { in_port, packet } => {
                    self.metrics.note_packet_in(sw, packet.protocol);
                    self.metrics.note_ctl_absorbed(&packet);
                    let msg = PacketInMsg {
                        switch_id: sw.clone(),
                        in_port,
                        packet,
                    };
                    self.publish_agent(kernel, &sw.clone(), msg);
                }
                SwitchEffect::Dropped { packet, .. } | SwitchEffect::BadPort { packet, .. } => {
                    self.metrics.note_dropped(&packet);
                }
            }
        }
    }

    // -----------------------------------------------------------------
    // Pub/sub plumbing
    // -----------------------------------------------------------------

    /// Records accepted samples from a delivery at `device`.
    fn record_deliveries(
        &mut self,
        now: Micros,
        accepted: Vec<(EndpointId, crate::pubsub::DataSample)>,
        via: &Addr,
    ) {
        for (reader, sample) in accepted {
            self.metrics
                .deliveries
                .push(crate::metrics::SampleDelivery {
                    time_us: now,
                    reader: reader.to_string(),
                    writer: sample.writer.to_string(),
                    topic: sample.topic.as_str().to_string(),
                    seq: sample.seq,
                    via: via.as_str().to_string(),
                });
        }
    }

    /// Interprets a data-domain participant's effects (after write/flush).
    fn interpret_pubsub(
        &mut self,
        kernel: &mut Kern,
        device: &DeviceId,
        effects: Vec<PubSubEffect>,
    ) {
        let now = kernel.now();
        for effect in effects {
            match effect {
                PubSubEffect::LocalDeliver { batch } => {
                    let addr = self.device_addr[device].clone();
                    let report = self
                        .participants
                        .get_mut(device)
                        .expect("exists")
                        .deliver(&batch, now);
                    self.record_deliveries(now, report.accepted, &addr);
                }
                PubSubEffect::Send {
                    to_address,
                    batch,
                    dscp,
                    best_effort,
                    ..
                } => {
                    let packet = Packet::new(
                        self.idgen.next_id(),
                        now,
                        self.device_addr[device].clone(),
                        to_address,
                        Protocol::Data,
                        dscp,
                        best_effort,
                        Payload::Samples(batch),
                    );
                    self.metrics.note_injected(&packet);
                    self.transmit_from_device(kernel, device, packet);
                }
                PubSubEffect::SendMulticast {
                    group,
                    batch,
                    dscp,
                    best_effort,
                } => {
                    let packet = Packet::new(
                        self.idgen.next_id(),
                        now,
                        self.device_addr[device].clone(),
                        group,
                        Protocol::Data,
                        dscp,
                        best_effort,
                        Payload::Samples(batch),
                    );
                    self.metrics.note_injected(&packet);
                    self.transmit_from_device(kernel, device, packet);
                }
                PubSubEffect::FlushAt { writer, at } => {
                    let target = self.entities.devices[device];
                    kernel
                        .schedule(
                            target,
                            at.saturating_sub(now),
                            EventKind::Flush {
                                device: device.clone(),
                                writer,
                                at,
                            },
                        )
                        .expect("registered");
                }
            }
        }
    }

    /// Interprets a control-domain participant's effects: point-to-point
    /// sends become delayed deliveries on the out-of-band channel.
    fn interpret_ctl_pubsub(&mut self, kernel: &mut Kern, effects: Vec<PubSubEffect>) {
        for effect in effects {
            match effect {
                PubSubEffect::Send { to, batch, .. } => {
                    let target = self.entities.control[&to];
                    kernel
                        .schedule(
                            target,
                            self.control_latency_us,
                            EventKind::ControlDeliver { to, batch },
                        )
                        .expect("registered");
                }
                PubSubEffect::LocalDeliver { .. } | PubSubEffect::SendMulticast { .. } => {
                    unreachable!("control participants have no local loops or channels")
                }
                PubSubEffect::FlushAt { .. } => {
                    unreachable!("control endpoints do not batch")
                }
            }
        }
    }

    fn publish_ctl<M: ControlMsg>(&mut self, kernel: &mut Kern, msg: M) {
        let writer = self.ctl_writers[M::TOPIC].clone();
        let effects = self
            .ctl
            .write(&writer, msg.encode(), kernel.now())
            .expect("writer exists");
        self.interpret_ctl_pubsub(kernel, effects);
    }

    fn publish_agent<M: ControlMsg>(&mut self, kernel: &mut Kern, sw: &SwitchId, msg: M) {
        let writer = self.agent_writers[sw][M::TOPIC].clone();
        let effects = self
            .agents
            .get_mut(sw)
            .expect("exists")
            .write(&writer, msg.encode(), kernel.now())
            .expect("writer exists");
        self.interpret_ctl_pubsub(kernel, effects);
    }

    fn interpret_ctl_effects(&mut self, kernel: &mut Kern, effects: Vec<CtlEffect>) {
        for effect in effects {
            match effect {
                CtlEffect::FlowMod(m) => self.publish_ctl(kernel, m),
                CtlEffect::PacketOut(m) => self.publish_ctl(kernel, m),
                CtlEffect::StatsRequest(m) => self.publish_ctl(kernel, m),
                CtlEffect::Audit(e) => self.metrics.audit(e),
            }
        }
    }

    // -----------------------------------------------------------------
    // Control-plane message handling
    // -----------------------------------------------------------------

    fn control_deliver(&mut self, kernel: &mut Kern, to: ParticipantName, batch: SampleBatch) {
        let now = kernel.now();
        if to == self.ctl_name {
            let report = self.ctl.deliver(&batch, now);
            for (_, sample) in report.accepted {
                let effects = match sample.topic.as_str() {
                    TOPIC_PACKET_IN => {
                        let msg = PacketInMsg::decode(&sample.fields).expect("well-formed");
                        self.controller.on_packet_in(&msg, now)
                    }
                    TOPIC_FLOW_MOD_REPLY => {
                        let msg = FlowModReplyMsg::decode(&sample.fields).expect("well-formed");
                        self.controller.on_flow_mod_reply(&msg, now)
                    }
                    TOPIC_STATS_REPLY => {
                        let msg = StatsReplyMsg::decode(&sample.fields).expect("well-formed");
                        self.controller.on_stats_reply(&msg, now)
                    }
                    other => unreachable!("controller holds no reader for {other}"),
                };
                self.interpret_ctl_effects(kernel, effects);
            }
            return;
        }
        let sw = self.agent_switch[&to].clone();
        let report = self
            .agents
            .get_mut(&sw)
            .expect("exists")
            .deliver(&batch, now);
        for (_, sample) in report.accepted {
            match sample.topic.as_str() {
                TOPIC_FLOW_MOD => {
                    let msg = FlowModMsg::decode(&sample.fields).expect("well-formed");
                    let result = self.switches.get_mut(&sw).expect("exists").apply_flow_mod(
                        msg.command,
                        msg.priority,
                        msg.pattern.clone(),
                        msg.actions.clone(),
                        msg.idle_timeout_us,
                        &msg.installed_by,
                        now,
                    );
                    if let Ok(crate::dataplane::FlowModOutcome::Deleted(n)) = &result {
                        if *n > 0 {
                            self.metrics.audit(AuditEvent::FlowDeleted {
                                time_us: now,
                                switch: sw.clone(),
                                pattern: msg.pattern.key(),
                                requested_by: msg.installed_by.clone(),
                            });
                        }
                    }
                    let reply = FlowModReplyMsg {
                        switch_id: sw.clone(),
                        xid: msg.xid,
                        error: result.err().map(|e| e.to_string()),
                    };
                    self.publish_agent(kernel, &sw, reply);
                }
                TOPIC_PACKET_OUT => {
                    let msg = PacketOutMsg::decode(&sample.fields).expect("well-formed");
                    self.metrics.note_arrival(&sw, true);
                    self.metrics.note_ctl_emitted(&msg.packet);
                    let fx = self.switches.get_mut(&sw).expect("exists").execute_actions(
                        &msg.actions,
                        None,
                        &msg.packet,
                    );
                    self.apply_switch_outcome(kernel, &sw.clone(), fx, &msg.packet.clone());
                }
                TOPIC_STATS_REQUEST => {
                    let msg = StatsRequestMsg::decode(&sample.fields).expect("well-formed");
                    let switch = self.switches.get_mut(&sw).expect("exists");
                    let expired: Vec<crate::dataplane::FlowStats> = switch
                        .expire_idle(now)
                        .into_iter()
                        .map(|e| crate::dataplane::FlowStats {
                            priority: e.priority,
                            pattern: e.pattern,
                            packet_count: e.packet_count,
                            byte_count: e.byte_count,
                            install_seq: e.install_seq,
                        })
                        .collect();
                    let entries = switch.query_stats(msg.pattern.as_ref());
                    let reply = StatsReplyMsg {
                        switch_id: sw.clone(),
                        xid: msg.xid,
                        entries,
                        expired,
                    };
                    self.publish_agent(kernel, &sw, reply);
                }
                other => unreachable!("agents hold no reader for {other}"),
            }
        }
    }

    // -----------------------------------------------------------------
    // Device and script events
    // -----------------------------------------------------------------

    fn device_arrive(&mut self, kernel: &mut Kern, device: &DeviceId, packet: Packet) {
        let now = kernel.now();
        let addr = &self.device_addr[device];
        let consumed = if packet.dst.is_multicast() {
            packet.dst.as_str() == DISCOVERY_MCAST
                || self
                    .groups
                    .get(&packet.dst)
                    .is_some_and(|m| m.contains(device))
        } else {
            packet.dst == *addr
        };
        if !consumed {
            // A flooded copy reaching a device it was never meant for.
            self.metrics.note_dropped(&packet);
            return;
        }
        self.metrics.note_delivered(&packet);
        match &packet.payload {
            Payload::Samples(batch) => {
                let report = self
                    .participants
                    .get_mut(device)
                    .expect("exists")
                    .deliver(batch, now);
                self.record_deliveries(now, report.accepted, &packet.dst);
            }
            Payload::Discovery(msg) => {
                self.participants
                    .get_mut(device)
                    .expect("exists")
                    .merge_record(msg.record.clone());
            }
            Payload::Opaque { .. } => {}
        }
    }

    fn announce(&mut self, kernel: &mut Kern, device: &DeviceId) {
        let now = kernel.now();
        let msg = self.participants[device].make_announcement();
        let packet = Packet::new(
            self.idgen.next_id(),
            now,
            self.device_addr[device].clone(),
            Addr::new(DISCOVERY_MCAST),
            Protocol::Discovery,
            0,
            true, // periodic repeats stand in for reliability
            Payload::Discovery(msg),
        );
        self.metrics.note_injected(&packet);
        self.transmit_from_device(kernel, device, packet);
        let next = now + ANNOUNCE_PERIOD_US;
        if next <= self.horizon_us {
            let target = self.entities.devices[device];
            kernel
                .schedule(
                    target,
                    ANNOUNCE_PERIOD_US,
                    EventKind::Announce {
                        device: device.clone(),
                    },
                )
                .expect("registered");
        }
    }

    /// Rewires a device's access link; traffic already heading toward the
    /// old port will find it dead when it gets there.
    fn rewire_attachment(&mut self, device: &DeviceId, sw: &SwitchId, port: PortId) {
        let idx = self.link_index[&access_link_id(device)];
        let old = self.attach[device].clone();
        self.link_at.remove(&old);
        self.links[idx].ends[0] = LinkEnd::Switch {
            switch: sw.clone(),
            port,
        };
        self.link_at.insert((sw.clone(), port), idx);
        self.attach.insert(device.clone(), (sw.clone(), port));
    }

    fn run_action(&mut self, kernel: &mut Kern, index: usize, rep: u64) {
        let now = kernel.now();
        match self.scenario.actions[index].clone() {
            Action::Publish {
                device,
                topic,
                mut fields,
                vary,
                ..
            } => {
                if let Some(path) = vary {
                    fields.insert(path, crate::filter::Value::Int(rep as i64));
                }
                let writer = self.writer_index[&(device.clone(), topic)].clone();
                let effects = self
                    .participants
                    .get_mut(&device)
                    .expect("validated")
                    .write(&writer, fields, now)
                    .expect("validated writer");
                self.interpret_pubsub(kernel, &device, effects);
            }
            Action::Handover {
                device,
                switch,
                port,
                ..
            } => {
                self.rewire_attachment(&device, &switch, port);
                // Announce from the new spot right away; tell the controller
                // over the out-of-band channel.
                let dev_target = self.entities.devices[&device];
                kernel
                    .schedule(
                        dev_target,
                        0,
                        EventKind::Announce {
                            device: device.clone(),
                        },
                    )
                    .expect("registered");
                let ctl_target = self.entities.control[&self.ctl_name];
                kernel
                    .schedule(
                        ctl_target,
                        self.control_latency_us,
                        EventKind::MobilityNotice {
                            device,
                            switch,
                            port,
                        },
                    )
                    .expect("registered");
            }
            Action::LinkSet { link, state, .. } => {
                let idx = self.link_index[&link];
                self.links[idx].state = state;
                self.metrics.audit(AuditEvent::LinkStateChanged {
                    time_us: now,
                    link,
                    state: format!("{state:?}").to_lowercase(),
                });
            }
        }
    }

    // -----------------------------------------------------------------
    // Report
    // -----------------------------------------------------------------

    pub fn finalize(&self, kernel: &Kern, quiescent: bool) -> RunReport {
        let mut report = RunReport {
            seed: kernel.seed(),
            end_time_us: kernel.now(),
            events_dispatched: kernel.dispatched(),
            trace_hash: kernel.trace_hash(),
            totals: self.metrics.totals(),
            deliveries: self.metrics.deliveries.clone(),
            audits: self.metrics.audits.clone(),
            conservation_violations: self.metrics.conservation_violations(quiescent),
            ..RunReport::default()
        };
        for (id, sw) in &self.switches {
            report.switches.insert(
                id.as_str().to_string(),
                SwitchReport {
                    counters: self
                        .metrics
                        .switch_counters
                        .get(id)
                        .cloned()
                        .unwrap_or_default(),
                    flows: sw
                        .entries()
                        .iter()
                        .map(|e| FlowDump {
                            priority: e.priority,
                            pattern: serde_json::to_value(&e.pattern).expect("serializes"),
                            actions: serde_json::to_value(&e.actions).expect("serializes"),
                            packet_count: e.packet_count,
                            byte_count: e.byte_count,
                            installed_by: e.installed_by.clone(),
                        })
                        .collect(),
                },
            );
        }
        for (link, counts) in &self.metrics.link_counts {
            report.links.insert(
                link.as_str().to_string(),
                counts.iter().map(|(p, n)| (p.to_string(), *n)).collect(),
            );
        }
        for (sw, counts) in &self.metrics.packet_ins {
            report.packet_ins.insert(
                sw.as_str().to_string(),
                counts.iter().map(|(p, n)| (p.to_string(), *n)).collect(),
            );
        }
        let mut add_endpoints = |p: &Participant| {
            for w in p.writers() {
                report.writers.insert(
                    w.id.to_string(),
                    crate::metrics::WriterSummary {
                        written: w.written,
                        suppressed_samples: w.suppressed_samples,
                    },
                );
            }
            for r in p.readers() {
                report.readers.insert(
                    r.id.to_string(),
                    crate::metrics::ReaderSummary {
                        received: r.received,
                        duplicates: r.duplicates,
                        filtered_out: r.filtered_out,
                        eval_errors: r.eval_errors,
                    },
                );
            }
        };
        for p in self.participants.values() {
            add_endpoints(p);
        }
        add_endpoints(&self.ctl);
        for a in self.agents.values() {
            add_endpoints(a);
        }
        report
    }
}

impl crate::kernel::Handler<EventKind> for World {
    fn handle(&mut self, kernel: &mut Kern, event: Event<EventKind>) {
        match event.kind {
            EventKind::Bootstrap => {
                let effects = self.controller.bootstrap(kernel.now());
                self.interpret_ctl_effects(kernel, effects);
            }
            EventKind::Arrive {
                switch,
                port,
                packet,
            } => {
                self.metrics.note_arrival(&switch, false);
                let fx = self
                    .switches
                    .get_mut(&switch)
                    .expect("exists")
                    .process_packet(port, &packet, kernel.now());
                self.apply_switch_outcome(kernel, &switch, fx, &packet);
            }
            EventKind::DeviceArrive { device, packet } => {
                self.device_arrive(kernel, &device, packet);
            }
            EventKind::ControlDeliver { to, batch } => {
                self.control_deliver(kernel, to, batch);
            }
            EventKind::Flush { device, writer, at } => {
                let effects = self
                    .participants
                    .get_mut(&device)
                    .expect("exists")
                    .flush_timer(&writer, at);
                self.interpret_pubsub(kernel, &device, effects);
            }
            EventKind::Announce { device } => {
                self.announce(kernel, &device);
            }
            EventKind::StatsPoll => {
                let effects = self.controller.poll_stats(kernel.now());
                self.interpret_ctl_effects(kernel, effects);
                let policy = self
                    .controller
                    .flood_policy()
                    .expect("poll only with policy");
                let next = kernel.now() + policy.window_us;
                if next <= self.horizon_us {
                    let target = self.entities.control[&self.ctl_name];
                    kernel
                        .schedule(target, policy.window_us, EventKind::StatsPoll)
                        .expect("registered");
                }
            }
            EventKind::MobilityNotice {
                device,
                switch,
                port,
            } => {
                let effects = self
                    .controller
                    .on_handover(&device, (switch, port), kernel.now());
                self.interpret_ctl_effects(kernel, effects);
            }
            EventKind::Action { index, rep } => {
                self.run_action(kernel, index, rep);
            }
        }
    }
}

/// Runs `scenario` against `topo` and returns the report.
pub fn run_simulation(
    topo: &Topology,
    scenario: &Scenario,
    seed: u64,
    trace_to: Option<Box<dyn Write>>,
) -> Result<RunReport, SimError> {
    let mut kernel: Kern = Kernel::new(seed);
    kernel.record_trace(true);
    if let Some(w) = trace_to {
        kernel.set_trace_writer(w);
    }
    let mut world = World::new(topo, scenario.clone(), &mut kernel);
    let max = scenario.max_events.unwrap_or(DEFAULT_MAX_EVENTS);
    match kernel.run_to_quiescence(max, &mut world) {
        Ok(_) => Ok(world.finalize(&kernel, true)),
        Err(KernelError::BudgetExceeded { dispatched }) => Err(SimError::Budget { dispatched }),
        Err(other) => unreachable!("quiescence run cannot fail otherwise: {other}"),
    }
}
