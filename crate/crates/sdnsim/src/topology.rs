//! Topology documents: the JSON description of switches, gateways, links,
//! devices, multicast groups, pub/sub endpoints, static flows, slices and
//! the flood policy — plus validation and the graph view the controller
//! consults for path decisions.
//!
//! Validation collects every problem it finds; each [`ValidationError`]
//! names the offending element by a JSON-ish path like `links[2].b`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::{
    Addr, DeviceId, FlowAction, FlowMatch, GatewayObject, LinkId, MissBehavior, PortId, SwitchId,
};
use crate::filter::FilterExpression;
use crate::kernel::Micros;
use crate::pubsub::{DomainId, Qos, TopicName};

// ---------------------------------------------------------------------------
// Raw document (straight serde view of the JSON)
// ---------------------------------------------------------------------------

fn default_miss() -> MissBehavior {
    MissBehavior::ToController
}
fn default_true() -> bool {
    true
}
fn default_controller() -> String {
    "controller".to_string()
}
fn default_control_domain() -> DomainId {
    100
}
fn default_control_latency() -> Micros {
    50
}
fn default_link_latency() -> Micros {
    1_000
}
fn default_access_latency() -> Micros {
    500
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlDoc {
    /// Participant name of the controller on the control domain.
    #[serde(default = "default_controller")]
    pub controller: String,
    #[serde(default = "default_control_domain")]
    pub domain: DomainId,
    /// One-way latency of the out-of-band control channel.
    #[serde(default = "default_control_latency")]
    pub latency_us: Micros,
}

impl Default for ControlDoc {
    fn default() -> Self {
        ControlDoc {
            controller: default_controller(),
            domain: default_control_domain(),
            latency_us: default_control_latency(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwitchDoc {
    pub id: String,
    pub ports: Vec<PortId>,
    #[serde(default = "default_miss")]
    pub miss: MissBehavior,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayDoc {
    pub id: String,
    pub ports: Vec<PortId>,
    #[serde(default = "default_miss")]
    pub miss: MissBehavior,
    #[serde(default = "default_true")]
    pub multicast_capable: bool,
    /// Registered IoT objects this gateway fronts.
    #[serde(default)]
    pub objects: Vec<GatewayObject>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEndDoc {
    pub switch: String,
    pub port: PortId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkDoc {
    pub id: String,
    pub a: LinkEndDoc,
    pub b: LinkEndDoc,
    #[serde(default = "default_link_latency")]
    pub latency_us: Micros,
    #[serde(default)]
    pub jitter_us: Micros,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceDoc {
    pub id: String,
    pub address: String,
    pub attachment: LinkEndDoc,
    #[serde(default = "default_access_latency")]
    pub latency_us: Micros,
    #[serde(default)]
    pub jitter_us: Micros,
    #[serde(default)]
    pub domain: DomainId,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupDoc {
    pub address: String,
    pub members: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicDoc {
    #[serde(default)]
    pub domain: DomainId,
    pub name: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelDoc {
    pub group: String,
    #[serde(default)]
    pub filter: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriterDoc {
    pub participant: String,
    pub topic: String,
    #[serde(default)]
    pub qos: Qos,
    #[serde(default)]
    pub channels: Vec<ChannelDoc>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReaderDoc {
    pub participant: String,
    pub topic: String,
    #[serde(default)]
    pub qos: Qos,
    #[serde(default)]
    pub filter: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StaticFlowDoc {
    pub switch: String,
    pub priority: i64,
    #[serde(rename = "match", default)]
    pub pattern: FlowMatch,
    pub actions: Vec<FlowAction>,
    #[serde(default)]
    pub idle_timeout_us: Option<Micros>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceDoc {
    pub name: String,
    /// Applications (by installer name) confined to this slice.
    pub apps: Vec<String>,
    /// Every flow-mod from a bound app must constrain each field this
    /// template constrains, to the same value.
    #[serde(rename = "match_template")]
    pub template: FlowMatch,
    pub priority_min: i64,
    pub priority_max: i64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloodPolicyDoc {
    /// Stats polling period.
    pub window_us: Micros,
    /// Strictly-greater per-entry packet delta that trips mitigation.
    pub threshold: u64,
    pub mitigation_priority: i64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyDoc {
    #[serde(default)]
    pub control: ControlDoc,
    #[serde(default)]
    pub switches: Vec<SwitchDoc>,
    #[serde(default)]
    pub gateways: Vec<GatewayDoc>,
    #[serde(default)]
    pub links: Vec<LinkDoc>,
    #[serde(default)]
    pub devices: Vec<DeviceDoc>,
    #[serde(default)]
    pub groups: Vec<GroupDoc>,
    #[serde(default)]
    pub topics: Vec<TopicDoc>,
    #[serde(default)]
    pub writers: Vec<WriterDoc>,
    #[serde(default)]
    pub readers: Vec<ReaderDoc>,
    #[serde(default)]
    pub static_flows: Vec<StaticFlowDoc>,
    #[serde(default)]
    pub slices: Vec<SliceDoc>,
    #[serde(default)]
    pub flood_policy: Option<FloodPolicyDoc>,
}

// ---------------------------------------------------------------------------
// Validated topology
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("topology is invalid:\n{}", render_errors(.0))]
    Invalid(Vec<ValidationError>),
}

fn render_errors(errors: &[ValidationError]) -> String {
    errors
        .iter()
        .map(|e| format!("  - {e}"))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Clone, Debug)]
pub struct SwitchSpec {
    pub id: SwitchId,
    pub ports: BTreeSet<PortId>,
    pub miss: MissBehavior,
    pub is_gateway: bool,
    pub multicast_capable: bool,
    pub objects: Vec<GatewayObject>,
}

#[derive(Clone, Debug)]
pub struct LinkSpec {
    pub id: LinkId,
    pub a: (SwitchId, PortId),
    pub b: (SwitchId, PortId),
    pub latency_us: Micros,
    pub jitter_us: Micros,
}

#[derive(Clone, Debug)]
pub struct DeviceSpec {
    pub id: DeviceId,
    pub address: Addr,
    pub switch: SwitchId,
    pub port: PortId,
    pub latency_us: Micros,
    pub jitter_us: Micros,
    pub domain: DomainId,
}

#[derive(Clone, Debug)]
pub struct ChannelSpec {
    pub group: Addr,
    pub filter: Option<FilterExpression>,
}

#[derive(Clone, Debug)]
pub struct WriterSpec {
    pub participant: DeviceId,
    pub topic: TopicName,
    pub qos: Qos,
    pub channels: Vec<ChannelSpec>,
}

#[derive(Clone, Debug)]
pub struct ReaderSpec {
    pub participant: DeviceId,
    pub topic: TopicName,
    pub qos: Qos,
    pub filter: Option<FilterExpression>,
}

#[derive(Clone, Debug)]
pub struct StaticFlow {
    pub switch: SwitchId,
    pub priority: i64,
    pub pattern: FlowMatch,
    pub actions: Vec<FlowAction>,
    pub idle_timeout_us: Option<Micros>,
}

#[derive(Clone, Debug)]
pub struct SliceDef {
    pub name: String,
    pub apps: Vec<String>,
    pub template: FlowMatch,
    pub priority_min: i64,
    pub priority_max: i64,
}

#[derive(Clone, Copy, Debug)]
pub struct FloodPolicy {
    pub window_us: Micros,
    pub threshold: u64,
    pub mitigation_priority: i64,
}

#[derive(Clone, Debug)]
pub struct ControlSpec {
    pub controller: String,
    pub domain: DomainId,
    pub latency_us: Micros,
}

#[derive(Clone, Debug)]
pub struct Topology {
    pub control: ControlSpec,
    pub switches: BTreeMap<SwitchId, SwitchSpec>,
    pub links: Vec<LinkSpec>,
    pub devices: BTreeMap<DeviceId, DeviceSpec>,
    /// Multicast group address → member devices.
    pub groups: BTreeMap<Addr, Vec<DeviceId>>,
    pub topics: Vec<(DomainId, TopicName)>,
    pub writers: Vec<WriterSpec>,
    pub readers: Vec<ReaderSpec>,
    pub static_flows: Vec<StaticFlow>,
    pub slices: Vec<SliceDef>,
    pub flood_policy: Option<FloodPolicy>,
}

fn id_ok(id: &str) -> bool {
    !id.is_empty()
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '.' | ':' | '-'))
}

/// Union-find over switch indices, used for the loop-freedom check.
struct Dsu(Vec<usize>);

impl Dsu {
    fn new(n: usize) -> Dsu {
        Dsu((0..n).collect())
    }
    fn find(&mut self, x: usize) -> usize {
        if self.0[x] != x {
            let root = self.find(self.0[x]);
            self.0[x] = root;
        }
        self.0[x]
    }
    /// Returns false when both were already connected (a cycle).
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra] = rb;
        true
    }
}

pub(crate) fn push_err(
    errors: &mut Vec<ValidationError>,
    path: impl Into<String>,
    message: impl Into<String>,
) {
    errors.push(ValidationError {
        path: path.into(),
        message: message.into(),
    });
}

fn parse_filter(
    src: &Option<String>,
    path: String,
    errors: &mut Vec<ValidationError>,
) -> Option<FilterExpression> {
    match src {
        None => None,
        Some(text) => match FilterExpression::parse(text) {
            Ok(f) => Some(f),
            Err(e) => {
                push_err(errors, path, e.to_string());
                None
            }
        },
    }
}

impl Topology {
    pub fn from_json(text: &str) -> Result<Topology, TopologyError> {
        let doc: TopologyDoc = serde_json::from_str(text)?;
        Topology::from_doc(&doc).map_err(TopologyError::Invalid)
    }

    pub fn from_doc(doc: &TopologyDoc) -> Result<Topology, Vec<ValidationError>> {
        let mut errors: Vec<ValidationError> = Vec::new();

        // --- switches & gateways ---
        let mut switches: BTreeMap<SwitchId, SwitchSpec> = BTreeMap::new();
        let mut switch_order: Vec<SwitchId> = Vec::new();
        let all_switch_docs = doc
            .switches
            .iter()
            .enumerate()
            .map(|(i, s)| {
                (
                    format!("switches[{i}]"),
                    s.id.clone(),
                    s.ports.clone(),
                    s.miss,
                    false,
                    true,
                    vec![],
                )
            })
            .chain(doc.gateways.iter().enumerate().map(|(i, g)| {
                (
                    format!("gateways[{i}]"),
                    g.id.clone(),
                    g.ports.clone(),
                    g.miss,
                    true,
                    g.multicast_capable,
                    g.objects.clone(),
                )
            }));
        for (path, id, ports, miss, is_gateway, multicast_capable, objects) in all_switch_docs {
            if !id_ok(&id) {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!("id `{id}` must be non-empty and use only [A-Za-z0-9_.:-]"),
                );
            }
            let sid = SwitchId::new(&id);
            if switches.contains_key(&sid) {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!("duplicate switch id `{id}`"),
                );
                continue;
            }
            let mut port_set = BTreeSet::new();
            for p in &ports {
                if *p == 0 {
                    push_err(
                        &mut errors,
                        format!("{path}.ports"),
                        "port numbers start at 1".to_string(),
                    );
                } else if !port_set.insert(*p) {
                    push_err(
                        &mut errors,
                        format!("{path}.ports"),
                        format!("duplicate port {p}"),
                    );
                }
            }
            let mut seen_obj = BTreeSet::new();
            for (j, o) in objects.iter().enumerate() {
                if !seen_obj.insert(o.object_id.clone()) {
                    push_err(
                        &mut errors,
                        format!("{path}.objects[{j}]"),
                        format!("duplicate object id `{}`", o.object_id),
                    );
                }
            }
            switch_order.push(sid.clone());
            switches.insert(
                sid.clone(),
                SwitchSpec {
                    id: sid,
                    ports: port_set,
                    miss,
                    is_gateway,
                    multicast_capable,
                    objects,
                },
            );
        }

        // --- links (occupancy + loop-freedom) ---
        let mut occupied: BTreeMap<(SwitchId, PortId), String> = BTreeMap::new();
        let mut claim = |sw: &SwitchId,
                         port: PortId,
                         who: String,
                         switches: &BTreeMap<SwitchId, SwitchSpec>|
         -> Option<ValidationError> {
            match switches.get(sw) {
                None => Some(ValidationError {
                    path: who,
                    message: format!("unknown switch `{sw}`"),
                }),
                Some(spec) if !spec.ports.contains(&port) => Some(ValidationError {
                    path: who,
                    message: format!("port {port} is not declared on switch `{sw}`"),
                }),
                Some(_) => match occupied.get(&(sw.clone(), port)) {
                    Some(prev) => Some(ValidationError {
                        path: who,
                        message: format!("port {port} on `{sw}` is already used by {prev}"),
                    }),
                    None => {
                        occupied.insert((sw.clone(), port), String::new());
                        None
                    }
                },
            }
        };
        let index_of: BTreeMap<SwitchId, usize> = switch_order
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, s)| (s, i))
            .collect();
        let mut dsu = Dsu::new(switch_order.len());
        let mut links = Vec::new();
        let mut link_ids = BTreeSet::new();
        for (i, l) in doc.links.iter().enumerate() {
            let path = format!("links[{i}]");
            if !link_ids.insert(l.id.clone()) {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!("duplicate link id `{}`", l.id),
                );
            }
            if l.a.switch == l.b.switch {
                push_err(
                    &mut errors,
                    path.clone(),
                    "a link may not connect a switch to itself".to_string(),
                );
                continue;
            }
            let a = (SwitchId::new(&l.a.switch), l.a.port);
            let b = (SwitchId::new(&l.b.switch), l.b.port);
            let mut bad = false;
            for (end, which) in [(&a, "a"), (&b, "b")] {
                if let Some(e) = claim(&end.0, end.1, format!("{path}.{which}"), &switches) {
                    errors.push(e);
                    bad = true;
                }
            }
            if bad {
                continue;
            }
            if let (Some(&ia), Some(&ib)) = (index_of.get(&a.0), index_of.get(&b.0)) {
                if !dsu.union(ia, ib) {
                    push_err(
                        &mut errors,
                        path.clone(),
                        "this link closes a loop; the fabric must be loop-free".to_string(),
                    );
                }
            }
            links.push(LinkSpec {
                id: LinkId::new(&l.id),
                a,
                b,
                latency_us: l.latency_us,
                jitter_us: l.jitter_us,
            });
        }

        // --- devices ---
        let mut devices: BTreeMap<DeviceId, DeviceSpec> = BTreeMap::new();
        let mut addresses: BTreeMap<Addr, DeviceId> = BTreeMap::new();
        for (i, d) in doc.devices.iter().enumerate() {
            let path = format!("devices[{i}]");
            if !id_ok(&d.id) {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!(
                        "id `{}` must be non-empty and use only [A-Za-z0-9_.:-]",
                        d.id
                    ),
                );
            }
            let did = DeviceId::new(&d.id);
            if devices.contains_key(&did) || switches.contains_key(&SwitchId::new(&d.id)) {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!("duplicate id `{}`", d.id),
                );
                continue;
            }
            let addr = Addr::new(&d.address);
            if addr.is_multicast() {
                push_err(
                    &mut errors,
                    format!("{path}.address"),
                    "device addresses may not be multicast (`mc:`)".to_string(),
                );
            }
            if let Some(prev) = addresses.get(&addr) {
                push_err(
                    &mut errors,
                    format!("{path}.address"),
                    format!("address `{addr}` is already used by `{prev}`"),
                );
            }
            if d.domain == doc.control.domain {
                push_err(
                    &mut errors,
                    format!("{path}.domain"),
                    format!(
                        "domain {} is reserved for the control plane",
                        doc.control.domain
                    ),
                );
            }
            let sw = SwitchId::new(&d.attachment.switch);
            if let Some(e) = claim(
                &sw,
                d.attachment.port,
                format!("{path}.attachment"),
                &switches,
            ) {
                errors.push(e);
                continue;
            }
            addresses.insert(addr.clone(), did.clone());
            devices.insert(
                did.clone(),
                DeviceSpec {
                    id: did,
                    address: addr,
                    switch: sw,
                    port: d.attachment.port,
                    latency_us: d.latency_us,
                    jitter_us: d.jitter_us,
                    domain: d.domain,
                },
            );
        }

        // --- multicast groups ---
        let mut groups: BTreeMap<Addr, Vec<DeviceId>> = BTreeMap::new();
        for (i, g) in doc.groups.iter().enumerate() {
            let path = format!("groups[{i}]");
            let addr = Addr::new(&g.address);
            if !addr.is_multicast() {
                push_err(
                    &mut errors,
                    format!("{path}.address"),
                    "group addresses must start with `mc:`".to_string(),
                );
            }
            if groups.contains_key(&addr) {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!("duplicate group `{addr}`"),
                );
                continue;
            }
            let mut members = Vec::new();
            for (j, m) in g.members.iter().enumerate() {
                let did = DeviceId::new(m);
                if devices.contains_key(&did) {
                    members.push(did);
                } else {
                    push_err(
                        &mut errors,
                        format!("{path}.members[{j}]"),
                        format!("unknown device `{m}`"),
                    );
                }
            }
            groups.insert(addr, members);
        }

        // --- topics ---
        let mut topics: Vec<(DomainId, TopicName)> = Vec::new();
        let mut topic_set: BTreeSet<(DomainId, TopicName)> = BTreeSet::new();
        for (i, t) in doc.topics.iter().enumerate() {
            let path = format!("topics[{i}]");
            if t.domain == doc.control.domain {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!("domain {} is reserved for the control plane", t.domain),
                );
            }
            let key = (t.domain, TopicName::new(&t.name));
            if !topic_set.insert(key.clone()) {
                push_err(
                    &mut errors,
                    path,
                    format!("duplicate topic `{}` in domain {}", t.name, t.domain),
                );
                continue;
            }
            topics.push(key);
        }

        // --- writers / readers ---
        let check_endpoint = |participant: &str,
                              topic: &str,
                              path: &str,
                              devices: &BTreeMap<DeviceId, DeviceSpec>,
                              topic_set: &BTreeSet<(DomainId, TopicName)>|
         -> Result<(DeviceId, TopicName), ValidationError> {
            let did = DeviceId::new(participant);
            let Some(dev) = devices.get(&did) else {
                return Err(ValidationError {
                    path: format!("{path}.participant"),
                    message: format!("unknown device `{participant}`"),
                });
            };
            let tn = TopicName::new(topic);
            if !topic_set.contains(&(dev.domain, tn.clone())) {
                return Err(ValidationError {
                    path: format!("{path}.topic"),
                    message: format!("no topic `{topic}` in domain {}", dev.domain),
                });
            }
            Ok((did, tn))
        };

        let mut writers = Vec::new();
        for (i, w) in doc.writers.iter().enumerate() {
            let path = format!("writers[{i}]");
            let (participant, topic) =
                match check_endpoint(&w.participant, &w.topic, &path, &devices, &topic_set) {
                    Ok(ok) => ok,
                    Err(e) => {
                        errors.push(e);
                        continue;
                    }
                };
            if let Some(b) = &w.qos.batching {
                if b.max_samples == 0 {
                    push_err(
                        &mut errors,
                        format!("{path}.qos.batching"),
                        "max_samples must be at least 1".to_string(),
                    );
                }
            }
            let mut channels = Vec::new();
            for (j, c) in w.channels.iter().enumerate() {
                let cpath = format!("{path}.channels[{j}]");
                let group = Addr::new(&c.group);
                if !groups.contains_key(&group) {
                    push_err(
                        &mut errors,
                        cpath.clone(),
                        format!("unknown multicast group `{group}`"),
                    );
                }
                let filter = parse_filter(&c.filter, format!("{cpath}.filter"), &mut errors);
                channels.push(ChannelSpec { group, filter });
            }
            writers.push(WriterSpec {
                participant,
                topic,
                qos: w.qos.clone(),
                channels,
            });
        }

        let mut readers = Vec::new();
        for (i, r) in doc.readers.iter().enumerate() {
            let path = format!("readers[{i}]");
            let (participant, topic) =
                match check_endpoint(&r.participant, &r.topic, &path, &devices, &topic_set) {
                    Ok(ok) => ok,
                    Err(e) => {
                        errors.push(e);
                        continue;
                    }
                };
            let filter = parse_filter(&r.filter, format!("{path}.filter"), &mut errors);
            readers.push(ReaderSpec {
                participant,
                topic,
                qos: r.qos.clone(),
                filter,
            });
        }

        // --- static flows ---
        let mut static_flows = Vec::new();
        for (i, s) in doc.static_flows.iter().enumerate() {
            let path = format!("static_flows[{i}]");
            let sw = SwitchId::new(&s.switch);
            if !switches.contains_key(&sw) {
                push_err(
                    &mut errors,
                    format!("{path}.switch"),
                    format!("unknown switch `{}`", s.switch),
                );
                continue;
            }
            static_flows.push(StaticFlow {
                switch: sw,
                priority: s.priority,
                pattern: s.pattern.clone(),
                actions: s.actions.clone(),
                idle_timeout_us: s.idle_timeout_us,
            });
        }

        // --- slices ---
        let mut slice_names = BTreeSet::new();
        let mut slices = Vec::new();
        for (i, s) in doc.slices.iter().enumerate() {
            let path = format!("slices[{i}]");
            if !slice_names.insert(s.name.clone()) {
                push_err(
                    &mut errors,
                    path.clone(),
                    format!("duplicate slice `{}`", s.name),
                );
            }
            if s.apps.is_empty() {
                push_err(
                    &mut errors,
                    format!("{path}.apps"),
                    "a slice must bind at least one application".to_string(),
                );
            }
            if s.priority_min > s.priority_max {
                push_err(
                    &mut errors,
                    format!("{path}.priority_min"),
                    format!(
                        "empty priority range {}..={}",
                        s.priority_min, s.priority_max
                    ),
                );
            }
            slices.push(SliceDef {
                name: s.name.clone(),
                apps: s.apps.clone(),
                template: s.template.clone(),
                priority_min: s.priority_min,
                priority_max: s.priority_max,
            });
        }

        // --- flood policy ---
        let flood_policy = match &doc.flood_policy {
            None => None,
            Some(p) => {
                if p.window_us == 0 {
                    push_err(
                        &mut errors,
                        "flood_policy.window_us".to_string(),
                        "window must be positive".to_string(),
                    );
                }
                Some(FloodPolicy {
                    window_us: p.window_us,
                    threshold: p.threshold,
                    mitigation_priority: p.mitigation_priority,
                })
            }
        };

        if !id_ok(&doc.control.controller) {
            push_err(
                &mut errors,
                "control.controller".to_string(),
                format!(
                    "id `{}` must be non-empty and use only [A-Za-z0-9_.:-]",
                    doc.control.controller
                ),
            );
        }

        if !errors.is_empty() {
            return Err(errors);
        }
        Ok(Topology {
            control: ControlSpec {
                controller: doc.control.controller.clone(),
                domain: doc.control.domain,
                latency_us: doc.control.latency_us,
            },
            switches,
            links,
            devices,
            groups,
            topics,
            writers,
            readers,
            static_flows,
            slices,
            flood_policy,
        })
    }

    /// Devices attached to `sw`, by port.
    pub fn devices_at(&self, sw: &SwitchId) -> BTreeMap<PortId, &DeviceSpec> {
        self.devices
            .values()
            .filter(|d| &d.switch == sw)
            .map(|d| (d.port, d))
            .collect()
    }
}

// ---------------------------------------------------------------------------
// Controller-side graph view
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq)]
enum Neighbor {
    Switch(SwitchId),
    Device(DeviceId),
}

/// The controller's picture of the fabric: which port leads where. Link and
/// switch layout is static; device attachments move as the mobility manager
/// learns about handovers, so path answers always reflect the controller's
/// current belief, not necessarily ground truth.
#[derive(Clone, Debug)]
pub struct TopoView {
    ports: BTreeMap<SwitchId, BTreeSet<PortId>>,
    neighbors: BTreeMap<SwitchId, BTreeMap<PortId, Neighbor>>,
    attachments: BTreeMap<DeviceId, (SwitchId, PortId)>,
}

impl TopoView {
    pub fn new(topo: &Topology) -> TopoView {
        let mut view = TopoView {
            ports: topo
                .switches
                .values()
                .map(|s| (s.id.clone(), s.ports.clone()))
                .collect(),
            neighbors: topo
                .switches
                .keys()
                .map(|s| (s.clone(), BTreeMap::new()))
                .collect(),
            attachments: BTreeMap::new(),
        };
        for link in &topo.links {
            view.neighbors
                .get_mut(&link.a.0)
                .expect("validated switch")
                .insert(link.a.1, Neighbor::Switch(link.b.0.clone()));
            view.neighbors
                .get_mut(&link.b.0)
                .expect("validated switch")
                .insert(link.b.1, Neighbor::Switch(link.a.0.clone()));
        }
        for dev in topo.devices.values() {
            view.set_attachment(&dev.id, &dev.switch, dev.port);
        }
        view
    }

    pub fn switches(&self) -> impl Iterator<Item = &SwitchId> {
        self.ports.keys()
    }

    pub fn ports(&self, sw: &SwitchId) -> Option<&BTreeSet<PortId>> {
        self.ports.get(sw)
    }

    pub fn attachment(&self, dev: &DeviceId) -> Option<&(SwitchId, PortId)> {
        self.attachments.get(dev)
    }

    pub fn device_at(&self, sw: &SwitchId, port: PortId) -> Option<&DeviceId> {
        self.neighbors.get(sw).and_then(|m| match m.get(&port) {
            Some(Neighbor::Device(d)) => Some(d),
            _ => None,
        })
    }

    /// Moves a device to a new attachment point, dropping its old one.
    pub fn set_attachment(&mut self, dev: &DeviceId, sw: &SwitchId, port: PortId) {
        if let Some((old_sw, old_port)) = self.attachments.remove(dev) {
            if let Some(m) = self.neighbors.get_mut(&old_sw) {
                if m.get(&old_port) == Some(&Neighbor::Device(dev.clone())) {
                    m.remove(&old_port);
                }
            }
        }
        self.neighbors
            .get_mut(sw)
            .expect("known switch")
            .insert(port, Neighbor::Device(dev.clone()));
        self.attachments.insert(dev.clone(), (sw.clone(), port));
    }

    /// First-hop port on the (unique, loop-free) path from `from` to the
    /// device's attachment switch; the access port when already there.
    pub fn next_hop(&self, from: &SwitchId, dev: &DeviceId) -> Option<PortId> {
        let (target_sw, target_port) = self.attachments.get(dev)?.clone();
        if *from == target_sw {
            return Some(target_port);
        }
        // BFS over the switch graph, remembering the first hop.
        let mut queue = std::collections::VecDeque::new();
        let mut visited = BTreeSet::new();
        visited.insert(from.clone());
        for (port, n) in self.neighbors.get(from)? {
            if let Neighbor::Switch(next) = n {
                queue.push_back((next.clone(), *port));
            }
        }
        while let Some((sw, first_port)) = queue.pop_front() {
            if !visited.insert(sw.clone()) {
                continue;
            }
            if sw == target_sw {
                return Some(first_port);
            }
            if let Some(neigh) = self.neighbors.get(&sw) {
                for n in neigh.values() {
                    if let Neighbor::Switch(next) = n {
                        if !visited.contains(next) {
                            queue.push_back((next.clone(), first_port));
                        }
                    }
                }
            }
        }
        None
    }

    /// Ports on `sw` that lead toward at least one of `members`.
    pub fn ports_toward(&self, sw: &SwitchId, members: &[DeviceId]) -> BTreeSet<PortId> {
        members
            .iter()
            .filter_map(|d| self.next_hop(sw, d))
            .collect()
    }

    /// Every port on `sw` with anything behind it (trunks and devices).
    pub fn active_ports(&self, sw: &SwitchId) -> BTreeSet<PortId> {
        self.neighbors
            .get(sw)
            .map(|m| m.keys().copied().collect())
            .unwrap_or_default()
    }
}
