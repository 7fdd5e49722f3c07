//! The controller and its northbound applications.
//!
//! Everything the controller does comes out as [`CtlEffect`]s — flow-mods,
//! packet-outs and stats requests to publish on the mediation topics, plus
//! audit events. It never touches the network directly, which keeps every
//! policy decision unit-testable with hand-built messages.
//!
//! PACKET_INs go through a fixed claim chain: the discovery proxy (multicast
//! destinations), then the mobility manager (which claims nothing — it is
//! driven by handover notifications), then the flood monitor (a passive
//! observer driven by stats polling), then the learning forwarder, which
//! takes everything left.
//!
//! Every flow-mod an application requests passes the slice guard first:
//! an application bound to slices may only program entries that stay inside
//! one of its slices' match templates and priority ranges.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::dataplane::{Addr, DeviceId, FlowAction, FlowMatch, FlowModCommand, PortId, SwitchId};
use crate::kernel::Micros;
use crate::mediation::{
    FlowModMsg, FlowModReplyMsg, PacketInMsg, PacketOutMsg, StatsReplyMsg, StatsRequestMsg,
};
use crate::metrics::AuditEvent;
use crate::topology::{FloodPolicy, SliceDef, StaticFlow, TopoView, Topology};

pub const APP_LEARNING: &str = "learning-forwarder";
pub const APP_MOBILITY: &str = "mobility-manager";
pub const APP_PROXY: &str = "discovery-proxy";
pub const APP_MONITOR: &str = "flood-monitor";
/// Operator-provided entries from the topology document.
pub const APP_STATIC: &str = "static";
/// Multicast distribution rules installed at startup.
pub const APP_MULTICAST: &str = "multicast-bootstrap";

pub const PRIO_MULTICAST: i64 = 1000;
pub const PRIO_PROXY: i64 = 900;
pub const PRIO_MOBILITY: i64 = 100;
pub const PRIO_LEARNING: i64 = 10;
/// Learned unicast entries age out when unused this long.
pub const LEARNING_IDLE_US: Micros = 60_000_000;

/// An outward action the controller wants performed.
#[derive(Clone, Debug, PartialEq)]
pub enum CtlEffect {
    FlowMod(FlowModMsg),
    PacketOut(PacketOutMsg),
    StatsRequest(StatsRequestMsg),
    Audit(AuditEvent),
}

#[derive(Clone, Debug, Error, PartialEq)]
#[error("slice policy denies `{app}` at priority {priority}: {reason}")]
pub struct SliceViolation {
    pub app: String,
    pub priority: i64,
    pub reason: String,
}

#[derive(Clone, Debug)]
struct RegEntry {
    pattern: FlowMatch,
    installed_by: String,
}

#[derive(Clone, Debug)]
struct PendingMod {
    switch: SwitchId,
    command: FlowModCommand,
    priority: i64,
    pattern: FlowMatch,
    installed_by: String,
    handover_for: Option<DeviceId>,
}

#[derive(Clone, Debug)]
struct HandoverProgress {
    started_us: Micros,
    outstanding: BTreeSet<u64>,
    mods: usize,
}

pub struct Controller {
    view: TopoView,
    device_addr: BTreeMap<DeviceId, Addr>,
    addr_device: BTreeMap<Addr, DeviceId>,
    multicast_capable: BTreeMap<SwitchId, bool>,
    groups: BTreeMap<Addr, Vec<DeviceId>>,
    slices: Vec<SliceDef>,
    flood_policy: Option<FloodPolicy>,
    static_flows: Vec<StaticFlow>,
    /// Everything the controller believes is installed:
    /// (switch, priority, canonical pattern) → entry.
    registry: BTreeMap<(SwitchId, i64, String), RegEntry>,
    pending: BTreeMap<u64, PendingMod>,
    next_xid: u64,
    // learning forwarder
    learned_port: BTreeMap<SwitchId, BTreeMap<Addr, PortId>>,
    /// Address → device, confirmed by traffic entering on the device's own
    /// access port. Transit-port sightings never update this.
    learned_device: BTreeMap<Addr, DeviceId>,
    // discovery proxy
    flood_rules: BTreeSet<(SwitchId, Addr)>,
    // mobility manager
    handovers: BTreeMap<DeviceId, HandoverProgress>,
    // flood monitor
    stats_last: BTreeMap<(SwitchId, i64, String, u64), u64>,
    mitigated: BTreeSet<(SwitchId, String)>,
}

impl Controller {
    pub fn new(topo: &Topology) -> Controller {
        Controller {
            view: TopoView::new(topo),
            device_addr: topo
                .devices
                .values()
                .map(|d| (d.id.clone(), d.address.clone()))
                .collect(),
            addr_device: topo
                .devices
                .values()
                .map(|d| (d.address.clone(), d.id.clone()))
                .collect(),
            multicast_capable: topo
                .switches
                .values()
                .map(|s| (s.id.clone(), s.multicast_capable))
                .collect(),
            groups: topo.groups.clone(),
            slices: topo.slices.clone(),
            flood_policy: topo.flood_policy,
            static_flows: topo.static_flows.clone(),
            registry: BTreeMap::new(),
            pending: BTreeMap::new(),
            next_xid: 1,
            learned_port: BTreeMap::new(),
            learned_device: BTreeMap::new(),
            flood_rules: BTreeSet::new(),
            handovers: BTreeMap::new(),
            stats_last: BTreeMap::new(),
            mitigated: BTreeSet::new(),
        }
    }

    pub fn view(&self) -> &TopoView {
        &self.view
    }

    pub fn flood_policy(&self) -> Option<FloodPolicy> {
        self.flood_policy
    }

    /// (priority, pattern, installer) for everything the controller believes
    /// sits on `switch`.
    pub fn installed_on(&self, switch: &SwitchId) -> Vec<(i64, FlowMatch, String)> {
        self.registry
            .iter()
            .filter(|((sw, _, _), _)| sw == switch)
            .map(|((_, prio, _), e)| (*prio, e.pattern.clone(), e.installed_by.clone()))
            .collect()
    }

    pub fn has_pending_mods(&self) -> bool {
        !self.pending.is_empty()
    }

    // -----------------------------------------------------------------
    // Bootstrap
    // -----------------------------------------------------------------

    /// Installs the operator's static entries and the multicast
    /// distribution rules. Called once before traffic starts.
    pub fn bootstrap(&mut self, now: Micros) -> Vec<CtlEffect> {
        let mut effects = Vec::new();
        let statics = self.static_flows.clone();
        for flow in &statics {
            self.send_mod(
                APP_STATIC,
                &flow.switch.clone(),
                FlowModCommand::Add,
                flow.priority,
                flow.pattern.clone(),
                flow.actions.clone(),
                flow.idle_timeout_us,
                None,
                &mut effects,
            );
        }
        let groups = self.groups.clone();
        let switches: Vec<SwitchId> = self.view.switches().cloned().collect();
        for (group, members) in &groups {
            for sw in &switches {
                let ports = self.view.ports_toward(sw, members);
                if ports.is_empty() {
                    continue;
                }
                let actions = if self.multicast_capable[sw] {
                    vec![FlowAction::Group(ports.into_iter().collect())]
                } else {
                    // No group support: have the proxy fan these out.
                    vec![FlowAction::ToController]
                };
                let pattern = FlowMatch {
                    dst: Some(group.clone()),
                    ..Default::default()
                };
                self.send_mod(
                    APP_MULTICAST,
                    sw,
                    FlowModCommand::Add,
                    PRIO_MULTICAST,
                    pattern,
                    actions,
                    None,
                    None,
                    &mut effects,
                );
            }
        }
        let _ = now;
        effects
    }

    // -----------------------------------------------------------------
    // PACKET_IN dispatch
    // -----------------------------------------------------------------

    pub fn on_packet_in(&mut self, msg: &PacketInMsg, now: Micros) -> Vec<CtlEffect> {
        // Claim chain: proxy → mobility → monitor → learning forwarder.
        if msg.packet.dst.is_multicast() {
            return self.proxy_packet_in(msg, now);
        }
        // The mobility manager is notification-driven and the flood monitor
        // observes via stats polling; neither claims packets.
        self.learning_packet_in(msg, now)
    }

    fn flood_outputs(&self, sw: &SwitchId, exclude: Option<PortId>) -> Vec<FlowAction> {
        self.view
            .active_ports(sw)
            .into_iter()
            .filter(|p| Some(*p) != exclude)
            .map(FlowAction::Output)
            .collect()
    }

    /// Discovery proxy: first multicast packet a switch punts installs a
    /// replication rule there (group action where hardware allows), then the
    /// packet itself is flooded so nothing is lost while the rule lands.
    fn proxy_packet_in(&mut self, msg: &PacketInMsg, now: Micros) -> Vec<CtlEffect> {
        let sw = &msg.switch_id;
        let group = &msg.packet.dst;
        let mut effects = Vec::new();

        let capable = self.multicast_capable.get(sw).copied().unwrap_or(false);
        // Ports this group's traffic should leave through: toward known
        // members for a data group, everywhere for the discovery group.
        let rule_ports: BTreeSet<PortId> = match self.groups.get(group) {
            Some(members) => self.view.ports_toward(sw, members),
            None => self.view.active_ports(sw),
        };

        if capable && !self.flood_rules.contains(&(sw.clone(), group.clone())) {
            let pattern = FlowMatch {
                dst: Some(group.clone()),
                ..Default::default()
            };
            let sent = self.send_guarded_mod(
                APP_PROXY,
                sw,
                FlowModCommand::Add,
                PRIO_PROXY,
                pattern,
                vec![FlowAction::Group(rule_ports.iter().copied().collect())],
                None,
                None,
                now,
                &mut effects,
            );
            if sent {
                self.flood_rules.insert((sw.clone(), group.clone()));
                effects.push(CtlEffect::Audit(AuditEvent::DiscoveryRuleInstalled {
                    time_us: now,
                    switch: sw.clone(),
                    group: group.clone(),
                }));
            }
        }

        // Replicate the triggering packet now, minus its ingress port.
        let out: Vec<FlowAction> = rule_ports
            .iter()
            .filter(|p| **p != msg.in_port)
            .map(|p| FlowAction::Output(*p))
            .collect();
        if !out.is_empty() {
            effects.push(CtlEffect::PacketOut(PacketOutMsg {
                switch_id: sw.clone(),
                actions: out,
                packet: msg.packet.clone(),
            }));
        }
        effects
    }

    /// Learning forwarder: learn the source, and either install the pair of
    /// unicast entries (destination known) or flood (destination unknown).
    fn learning_packet_in(&mut self, msg: &PacketInMsg, now: Micros) -> Vec<CtlEffect> {
        let sw = &msg.switch_id;
        let src = &msg.packet.src;
        let dst = &msg.packet.dst;
        let mut effects = Vec::new();

        if msg.in_port != 0 {
            self.learned_port
                .entry(sw.clone())
                .or_default()
                .insert(src.clone(), msg.in_port);
            if let Some(dev) = self.view.device_at(sw, msg.in_port) {
                if self.device_addr.get(dev) == Some(src) {
                    self.learned_device.insert(src.clone(), dev.clone());
                }
            }
        }

        // Resolution order: what this switch saw, what traffic confirmed
        // globally, then the registered attachment map (kept current by
        // handover notifications). Only unregistered, never-seen
        // destinations are left to flooding.
        let out_port = self
            .learned_port
            .get(sw)
            .and_then(|m| m.get(dst))
            .copied()
            .or_else(|| {
                self.learned_device
                    .get(dst)
                    .or_else(|| self.addr_device.get(dst))
                    .and_then(|dev| self.view.next_hop(sw, dev))
            });

        match out_port {
            Some(port) if port != msg.in_port => {
                let fwd = FlowMatch {
                    dst: Some(dst.clone()),
                    ..Default::default()
                };
                self.install_if_absent(
                    APP_LEARNING,
                    sw,
                    PRIO_LEARNING,
                    fwd,
                    vec![FlowAction::Output(port)],
                    now,
                    &mut effects,
                );
                if msg.in_port != 0 {
                    let rev = FlowMatch {
                        dst: Some(src.clone()),
                        ..Default::default()
                    };
                    self.install_if_absent(
                        APP_LEARNING,
                        sw,
                        PRIO_LEARNING,
                        rev,
                        vec![FlowAction::Output(msg.in_port)],
                        now,
                        &mut effects,
                    );
                }
                effects.push(CtlEffect::PacketOut(PacketOutMsg {
                    switch_id: sw.clone(),
                    actions: vec![FlowAction::Output(port)],
                    packet: msg.packet.clone(),
                }));
            }
            _ => {
                let out = self.flood_outputs(sw, (msg.in_port != 0).then_some(msg.in_port));
                if !out.is_empty() {
                    effects.push(CtlEffect::PacketOut(PacketOutMsg {
                        switch_id: sw.clone(),
                        actions: out,
                        packet: msg.packet.clone(),
                    }));
                }
            }
        }
        effects
    }

    #[allow(clippy::too_many_arguments)]
    fn install_if_absent(
        &mut self,
        app: &str,
        sw: &SwitchId,
        priority: i64,
        pattern: FlowMatch,
        actions: Vec<FlowAction>,
        now: Micros,
        effects: &mut Vec<CtlEffect>,
    ) {
        let key = (sw.clone(), priority, pattern.key());
        if self.registry.contains_key(&key) {
            return;
        }
        self.send_guarded_mod(
            app,
            sw,
            FlowModCommand::Add,
            priority,
            pattern,
            actions,
            Some(LEARNING_IDLE_US),
            None,
            now,
            effects,
        );
    }

    // -----------------------------------------------------------------
    // Mobility manager
    // -----------------------------------------------------------------

    /// Handover notification: `device` is now at `to`. Retargets every
    /// unicast entry for the device's address in one batch — the old
    /// entries are deleted wherever the registry shows them, replacements
    /// are installed on every switch, and the learning state for the
    /// address is purged. Replication rules whose port sets referenced the
    /// old attachment are refreshed in place. Completion is audited when
    /// the last flow-mod of the batch is acknowledged.
    pub fn on_handover(
        &mut self,
        device: &DeviceId,
        to: (SwitchId, PortId),
        now: Micros,
    ) -> Vec<CtlEffect> {
        let mut effects = Vec::new();
        let Some(addr) = self.device_addr.get(device).cloned() else {
            return effects;
        };
        let old_switch = self.view.attachment(device).map(|(sw, _)| sw.clone());
        let from = self
            .view
            .attachment(device)
            .map(|(sw, port)| format!("{sw}:{port}"))
            .unwrap_or_else(|| "nowhere".to_string());
        effects.push(CtlEffect::Audit(AuditEvent::HandoverStarted {
            time_us: now,
            device: device.as_str().to_string(),
            from,
            to: format!("{}:{}", to.0, to.1),
        }));

        self.view.set_attachment(device, &to.0, to.1);

        // Stale learning state would keep steering traffic to the old
        // attachment; drop it everywhere.
        self.learned_device.remove(&addr);
        for table in self.learned_port.values_mut() {
            table.remove(&addr);
        }

        let pattern = FlowMatch {
            dst: Some(addr.clone()),
            ..Default::default()
        };
        let pat_key = pattern.key();
        let mut xids = BTreeSet::new();

        // Delete the address's entries wherever the controller installed
        // them (it is the only installer, so the registry is complete).
        let stale_switches: BTreeSet<SwitchId> = self
            .registry
            .keys()
            .filter(|(_, _, key)| *key == pat_key)
            .map(|(sw, _, _)| sw.clone())
            .collect();
        for sw in &stale_switches {
            if let Some(xid) = self.send_guarded_mod_xid(
                APP_MOBILITY,
                sw,
                FlowModCommand::Delete,
                0,
                pattern.clone(),
                vec![],
                None,
                Some(device.clone()),
                now,
                &mut effects,
            ) {
                xids.insert(xid);
            }
        }

        // Proactive replacements on every switch, pointing along the tree
        // toward the new attachment.
        let switches: Vec<SwitchId> = self.view.switches().cloned().collect();
        for sw in &switches {
            let Some(port) = self.view.next_hop(sw, device) else {
                continue;
            };
            if let Some(xid) = self.send_guarded_mod_xid(
                APP_MOBILITY,
                sw,
                FlowModCommand::Add,
                PRIO_MOBILITY,
                pattern.clone(),
                vec![FlowAction::Output(port)],
                None,
                Some(device.clone()),
                now,
                &mut effects,
            ) {
                xids.insert(xid);
            }
        }

        // Replication rules carry explicit port sets, so the move also
        // invalidates some of them: flood-everywhere rules on the two
        // switches whose active ports changed, and group rules anywhere for
        // groups the device belongs to. Modify keeps their counters.
        let moved_groups: BTreeSet<&Addr> = self
            .groups
            .iter()
            .filter(|(_, members)| members.contains(device))
            .map(|(addr, _)| addr)
            .collect();
        let stale_replication: Vec<(SwitchId, i64, FlowMatch, String)> = self
            .registry
            .iter()
            .filter(|((sw, _, _), entry)| {
                if entry.installed_by != APP_PROXY && entry.installed_by != APP_MULTICAST {
                    return false;
                }
                match entry.pattern.dst.as_ref() {
                    Some(dst) if self.groups.contains_key(dst) => moved_groups.contains(dst),
                    Some(_) => Some(sw) == old_switch.as_ref() || *sw == to.0,
                    None => false,
                }
            })
            .map(|((sw, prio, _), entry)| {
                (
                    sw.clone(),
                    *prio,
                    entry.pattern.clone(),
                    entry.installed_by.clone(),
                )
            })
            .collect();
        for (sw, priority, rule, app) in stale_replication {
            // Non-capable switches hold ToController rules instead of port
            // sets; those never go stale.
            if !self.multicast_capable.get(&sw).copied().unwrap_or(false) {
                continue;
            }
            let dst = rule.dst.clone().expect("replication rules match on dst");
            let ports: BTreeSet<PortId> = match self.groups.get(&dst) {
                Some(members) => self.view.ports_toward(&sw, members),
                None => self.view.active_ports(&sw),
            };
            if let Some(xid) = self.send_guarded_mod_xid(
                &app,
                &sw,
                FlowModCommand::Modify,
                priority,
                rule,
                vec![FlowAction::Group(ports.into_iter().collect())],
                None,
                Some(device.clone()),
                now,
                &mut effects,
            ) {
                xids.insert(xid);
            }
        }

        if !xids.is_empty() {
            self.handovers.insert(
                device.clone(),
                HandoverProgress {
                    started_us: now,
                    mods: xids.len(),
                    outstanding: xids,
                },
            );
        }
        effects
    }

    // -----------------------------------------------------------------
    // Replies and stats
    // -----------------------------------------------------------------

    pub fn on_flow_mod_reply(&mut self, msg: &FlowModReplyMsg, now: Micros) -> Vec<CtlEffect> {
        let mut effects = Vec::new();
        let Some(pm) = self.pending.remove(&msg.xid) else {
            return effects;
        };
        match &msg.error {
            None => {
                if pm.command == FlowModCommand::Add {
                    effects.push(CtlEffect::Audit(AuditEvent::FlowInstalled {
                        time_us: now,
                        switch: pm.switch.clone(),
                        priority: pm.priority,
                        pattern: pm.pattern.key(),
                        installed_by: pm.installed_by.clone(),
                    }));
                }
            }
            Some(error) => {
                effects.push(CtlEffect::Audit(AuditEvent::FlowModFailed {
                    time_us: now,
                    switch: pm.switch.clone(),
                    xid: msg.xid,
                    error: error.clone(),
                }));
                if pm.command == FlowModCommand::Add {
                    // The provisional registry entry never materialized.
                    self.registry
                        .remove(&(pm.switch.clone(), pm.priority, pm.pattern.key()));
                }
            }
        }
        if let Some(device) = &pm.handover_for {
            let done = if let Some(progress) = self.handovers.get_mut(device) {
                progress.outstanding.remove(&msg.xid);
                progress.outstanding.is_empty()
            } else {
                false
            };
            if done {
                let progress = self.handovers.remove(device).expect("present");
                effects.push(CtlEffect::Audit(AuditEvent::HandoverComplete {
                    time_us: now,
                    device: device.as_str().to_string(),
                    started_us: progress.started_us,
                    mods: progress.mods,
                }));
            }
        }
        effects
    }

    /// One stats request per switch; the simulation schedules this every
    /// flood-policy window.
    pub fn poll_stats(&mut self, _now: Micros) -> Vec<CtlEffect> {
        let switches: Vec<SwitchId> = self.view.switches().cloned().collect();
        switches
            .into_iter()
            .map(|sw| {
                let xid = self.next_xid;
                self.next_xid += 1;
                CtlEffect::StatsRequest(StatsRequestMsg {
                    switch_id: sw,
                    xid,
                    pattern: None,
                })
            })
            .collect()
    }

    pub fn on_stats_reply(&mut self, msg: &StatsReplyMsg, now: Micros) -> Vec<CtlEffect> {
        let mut effects = Vec::new();
        let sw = &msg.switch_id;

        for gone in &msg.expired {
            let key = (sw.clone(), gone.priority, gone.pattern.key());
            if self.registry.remove(&key).is_some() {
                effects.push(CtlEffect::Audit(AuditEvent::IdleExpired {
                    time_us: now,
                    switch: sw.clone(),
                    pattern: key.2.clone(),
                }));
            }
            self.flood_rules.remove(&(sw.clone(), Addr::new(&key.2)));
            self.stats_last
                .retain(|(s, p, k, _), _| !(s == sw && *p == gone.priority && *k == key.2));
        }

        let Some(policy) = self.flood_policy else {
            return effects;
        };
        for entry in &msg.entries {
            let pat_key = entry.pattern.key();
            let installer = self
                .registry
                .get(&(sw.clone(), entry.priority, pat_key.clone()))
                .map(|e| e.installed_by.clone());
            let key = (
                sw.clone(),
                entry.priority,
                pat_key.clone(),
                entry.install_seq,
            );
            let last = self.stats_last.insert(key, entry.packet_count).unwrap_or(0);
            let delta = entry.packet_count.saturating_sub(last);
            // The monitor never alarms on its own mitigation entries.
            if installer.as_deref() == Some(APP_MONITOR) {
                continue;
            }
            if delta > policy.threshold && !self.mitigated.contains(&(sw.clone(), pat_key.clone()))
            {
                effects.push(CtlEffect::Audit(AuditEvent::FloodAlert {
                    time_us: now,
                    switch: sw.clone(),
                    pattern: pat_key.clone(),
                    delta,
                    threshold: policy.threshold,
                }));
                let sent = self.send_guarded_mod(
                    APP_MONITOR,
                    sw,
                    FlowModCommand::Add,
                    policy.mitigation_priority,
                    entry.pattern.clone(),
                    vec![FlowAction::Drop],
                    None,
                    None,
                    now,
                    &mut effects,
                );
                if sent {
                    self.mitigated.insert((sw.clone(), pat_key.clone()));
                    effects.push(CtlEffect::Audit(AuditEvent::MitigationInstalled {
                        time_us: now,
                        switch: sw.clone(),
                        pattern: pat_key,
                        priority: policy.mitigation_priority,
                    }));
                }
            }
        }
        effects
    }

    // -----------------------------------------------------------------
    // Slice guard + mod plumbing
    // -----------------------------------------------------------------

    /// Is `app` allowed to program (priority, pattern)? Applications bound
    /// to no slice are unconstrained; otherwise at least one of their
    /// slices must admit the mod — the slice template must constrain no
    /// field differently than the mod does, and the priority must sit in
    /// the slice's range.
    pub fn check_slice(
        &self,
        app: &str,
        priority: i64,
        pattern: &FlowMatch,
    ) -> Result<(), SliceViolation> {
        let bound: Vec<&SliceDef> = self
            .slices
            .iter()
            .filter(|s| s.apps.iter().any(|a| a == app))
            .collect();
        if bound.is_empty() {
            return Ok(());
        }
        let mut reasons = Vec::new();
        for slice in &bound {
            let template_ok = slice.template.subsumes(pattern);
            let priority_ok = (slice.priority_min..=slice.priority_max).contains(&priority);
            if template_ok && priority_ok {
                return Ok(());
            }
            reasons.push(format!(
                "slice `{}`: {}",
                slice.name,
                match (template_ok, priority_ok) {
                    (false, _) => "pattern escapes the match template",
                    (true, false) => "priority outside the allowed range",
                    (true, true) => unreachable!(),
                }
            ));
        }
        Err(SliceViolation {
            app: app.to_string(),
            priority,
            reason: reasons.join("; "),
        })
    }

    /// Northbound programmatic flow-mod: the same guarded path the internal
    /// applications use, surfacing the slice verdict as a `Result`.
    #[allow(clippy::too_many_arguments)]
    pub fn api_flow_mod(
        &mut self,
        app: &str,
        switch: &SwitchId,
        command: FlowModCommand,
        priority: i64,
        pattern: FlowMatch,
        actions: Vec<FlowAction>,
        idle_timeout_us: Option<Micros>,
        now: Micros,
    ) -> Result<Vec<CtlEffect>, SliceViolation> {
        self.check_slice(app, priority, &pattern)?;
        let _ = now;
        let mut effects = Vec::new();
        self.send_mod(
            app,
            switch,
            command,
            priority,
            pattern,
            actions,
            idle_timeout_us,
            None,
            &mut effects,
        );
        Ok(effects)
    }

    /// Guarded mod used by the applications: a denial becomes an audit
    /// event instead of an error. Returns whether the mod was sent.
    #[allow(clippy::too_many_arguments)]
    fn send_guarded_mod(
        &mut self,
        app: &str,
        switch: &SwitchId,
        command: FlowModCommand,
        priority: i64,
        pattern: FlowMatch,
        actions: Vec<FlowAction>,
        idle_timeout_us: Option<Micros>,
        handover_for: Option<DeviceId>,
        now: Micros,
        effects: &mut Vec<CtlEffect>,
    ) -> bool {
        self.send_guarded_mod_xid(
            app,
            switch,
            command,
            priority,
            pattern,
            actions,
            idle_timeout_us,
            handover_for,
            now,
            effects,
        )
        .is_some()
    }

    #[allow(clippy::too_many_arguments)]
    fn send_guarded_mod_xid(
        &mut self,
        app: &str,
        switch: &SwitchId,
        command: FlowModCommand,
        priority: i64,
        pattern: FlowMatch,
        actions: Vec<FlowAction>,
        idle_timeout_us: Option<Micros>,
        handover_for: Option<DeviceId>,
        now: Micros,
        effects: &mut Vec<CtlEffect>,
    ) -> Option<u64> {
        if let Err(v) = self.check_slice(app, priority, &pattern) {
            effects.push(CtlEffect::Audit(AuditEvent::SliceDenied {
                time_us: now,
                app: app.to_string(),
                priority,
                pattern: pattern.key(),
                reason: v.reason,
            }));
            return None;
        }
        Some(self.send_mod(
            app,
            switch,
            command,
            priority,
            pattern,
            actions,
            idle_timeout_us,
            handover_for,
            effects,
        ))
    }

    /// Unguarded send: allocates the xid, updates the registry
    /// optimistically, tracks the pending reply.
    #[allow(clippy::too_many_arguments)]
    fn send_mod(
        &mut self,
        app: &str,
        switch: &SwitchId,
        command: FlowModCommand,
        priority: i64,
        pattern: FlowMatch,
        actions: Vec<FlowAction>,
        idle_timeout_us: Option<Micros>,
        handover_for: Option<DeviceId>,
        effects: &mut Vec<CtlEffect>,
    ) -> u64 {
        let xid = self.next_xid;
        self.next_xid += 1;
        let pat_key = pattern.key();
        match command {
            FlowModCommand::Add => {
                self.registry.insert(
                    (switch.clone(), priority, pat_key.clone()),
                    RegEntry {
                        pattern: pattern.clone(),
                        installed_by: app.to_string(),
                    },
                );
            }
            FlowModCommand::Modify => {}
            FlowModCommand::Delete => {
                // Deletion is by pattern across all priorities.
                self.registry
                    .retain(|(sw, _, key), _| !(sw == switch && *key == pat_key));
            }
        }
        self.pending.insert(
            xid,
            PendingMod {
                switch: switch.clone(),
                command,
                priority,
                pattern: pattern.clone(),
                installed_by: app.to_string(),
                handover_for,
            },
        );
        effects.push(CtlEffect::FlowMod(FlowModMsg {
            switch_id: switch.clone(),
            xid,
            command,
            priority,
            pattern,
            actions,
            idle_timeout_us,
            installed_by: app.to_string(),
        }));
        xid
    }
}
