//! Scenario scripts: a timed list of actions to run against a topology.
//!
//! Scripts come in as JSON and are validated against the topology they will
//! drive, with every problem reported (not just the first) and addressed by
//! path, the same way topology validation works.

use std::collections::BTreeMap;

use serde::Deserialize;

use crate::dataplane::{DeviceId, LinkId, LinkState, PortId, SwitchId};
use crate::filter::{FieldMap, FieldPath, Value};
use crate::kernel::Micros;
use crate::pubsub::TopicName;
use crate::topology::{push_err, Topology, TopologyError, ValidationError};

pub const DEFAULT_DRAIN_US: Micros = 1_000_000;

/// Link id of the synthesized access link between a device and its switch.
pub fn access_link_id(device: &DeviceId) -> LinkId {
    LinkId::new(format!("access:{device}"))
}

fn default_drain() -> Micros {
    DEFAULT_DRAIN_US
}

fn default_count() -> u64 {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    #[serde(default)]
    pub description: String,
    /// Abort the run if the kernel dispatches more events than this.
    #[serde(default)]
    pub max_events: Option<u64>,
    /// How long to keep simulating after the last scripted action.
    #[serde(default = "default_drain")]
    pub drain_us: Micros,
    #[serde(default)]
    pub actions: Vec<ActionDoc>,
}

/// One scripted action. Internally tagged on `op`, so unknown keys inside an
/// action are not rejected by the parser; semantic validation below catches
/// every reference mistake.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ActionDoc {
    /// `device` writes `fields` on its writer for `topic` — `count` times,
    /// `interval_us` apart, with `vary` (when set) naming a field that
    /// carries the repetition index.
    Publish {
        time_us: Micros,
        device: String,
        topic: String,
        fields: BTreeMap<String, serde_json::Value>,
        #[serde(default = "default_count")]
        count: u64,
        #[serde(default)]
        interval_us: Micros,
        #[serde(default)]
        vary: Option<String>,
    },
    /// `device` detaches and reappears at `switch`:`port`; the controller is
    /// notified one control-latency later.
    Handover {
        time_us: Micros,
        device: String,
        switch: String,
        port: PortId,
    },
    /// Force a link's state (up / down / drop).
    LinkSet {
        time_us: Micros,
        link: String,
        state: LinkState,
    },
}

impl ActionDoc {
    pub fn time_us(&self) -> Micros {
        match self {
            ActionDoc::Publish { time_us, .. }
            | ActionDoc::Handover { time_us, .. }
            | ActionDoc::LinkSet { time_us, .. } => *time_us,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Action {
    Publish {
        time_us: Micros,
        device: DeviceId,
        topic: TopicName,
        fields: FieldMap,
        count: u64,
        interval_us: Micros,
        vary: Option<FieldPath>,
    },
    Handover {
        time_us: Micros,
        device: DeviceId,
        switch: SwitchId,
        port: PortId,
    },
    LinkSet {
        time_us: Micros,
        link: LinkId,
        state: LinkState,
    },
}

impl Action {
    pub fn time_us(&self) -> Micros {
        match self {
            Action::Publish { time_us, .. }
            | Action::Handover { time_us, .. }
            | Action::LinkSet { time_us, .. } => *time_us,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub description: String,
    pub max_events: Option<u64>,
    pub drain_us: Micros,
    pub actions: Vec<Action>,
}

/// Scenario sample fields are JSON scalars: integers, decimals, strings.
fn field_value(path: &str, v: &serde_json::Value, errors: &mut Vec<ValidationError>) -> Value {
    match v {
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::Int(i)
            } else {
                Value::Dec(n.as_f64().unwrap_or_default())
            }
        }
        serde_json::Value::String(s) => Value::Str(s.clone()),
        other => {
            push_err(
                errors,
                path,
                format!("expected a number or string, got {other}"),
            );
            Value::Int(0)
        }
    }
}

impl Scenario {
    pub fn from_json(json: &str, topo: &Topology) -> Result<Scenario, TopologyError> {
        let doc: ScenarioDoc = serde_json::from_str(json)?;
        Scenario::from_doc(&doc, topo)
    }

    pub fn from_doc(doc: &ScenarioDoc, topo: &Topology) -> Result<Scenario, TopologyError> {
        let mut errors = Vec::new();
        let mut actions = Vec::new();

        for (i, action) in doc.actions.iter().enumerate() {
            let at = |field: &str| format!("actions[{i}].{field}");
            match action {
                ActionDoc::Publish {
                    time_us,
                    device,
                    topic,
                    fields,
                    count,
                    interval_us,
                    vary,
                } => {
                    let device_id = DeviceId::new(device.as_str());
                    let topic_name = TopicName::new(topic.as_str());
                    let dev = topo.devices.get(&device_id);
                    if dev.is_none() {
                        push_err(
                            &mut errors,
                            at("device"),
                            format!("unknown device `{device}`"),
                        );
                    }
                    let has_writer = topo
                        .writers
                        .iter()
                        .any(|w| w.participant == device_id && w.topic == topic_name);
                    if dev.is_some() && !has_writer {
                        push_err(
                            &mut errors,
                            at("topic"),
                            format!("device `{device}` has no writer for topic `{topic}`"),
                        );
                    }
                    if *count == 0 {
                        push_err(
                            &mut errors,
                            at("count"),
                            "count must be at least 1".to_string(),
                        );
                    }
                    if *count > 1 && *interval_us == 0 {
                        push_err(
                            &mut errors,
                            at("interval_us"),
                            "repeated publishes need a non-zero interval".to_string(),
                        );
                    }
                    let mut map = FieldMap::new();
                    for (k, v) in fields {
                        let value = field_value(&at(&format!("fields.{k}")), v, &mut errors);
                        match FieldPath::parse(k) {
                            Ok(path) => {
                                map.insert(path, value);
                            }
                            Err(e) => push_err(&mut errors, at(&format!("fields.{k}")), e),
                        }
                    }
                    let vary_path = match vary {
                        None => None,
                        Some(name) => match FieldPath::parse(name) {
                            Ok(path) => Some(path),
                            Err(e) => {
                                push_err(&mut errors, at("vary"), e);
                                None
                            }
                        },
                    };
                    actions.push(Action::Publish {
                        time_us: *time_us,
                        device: device_id,
                        topic: topic_name,
                        fields: map,
                        count: *count,
                        interval_us: *interval_us,
                        vary: vary_path,
                    });
                }
                ActionDoc::Handover {
                    time_us,
                    device,
                    switch,
                    port,
                } => {
                    let device_id = DeviceId::new(device.as_str());
                    let switch_id = SwitchId::new(switch.as_str());
                    if !topo.devices.contains_key(&device_id) {
                        push_err(
                            &mut errors,
                            at("device"),
                            format!("unknown device `{device}`"),
                        );
                    }
                    match topo.switches.get(&switch_id) {
                        None => push_err(
                            &mut errors,
                            at("switch"),
                            format!("unknown switch `{switch}`"),
                        ),
                        Some(spec) => {
                            if !spec.ports.contains(port) {
                                push_err(
                                    &mut errors,
                                    at("port"),
                                    format!("switch `{switch}` has no port {port}"),
                                );
                            } else if topo.links.iter().any(|l| {
                                (l.a == (switch_id.clone(), *port))
                                    || (l.b == (switch_id.clone(), *port))
                            }) {
                                push_err(
                                    &mut errors,
                                    at("port"),
                                    format!("port {port} on `{switch}` is wired to a trunk link"),
                                );
                            } else if topo.devices.values().any(|d| {
                                d.id != device_id && d.switch == switch_id && d.port == *port
                            }) {
                                push_err(
                                    &mut errors,
                                    at("port"),
                                    format!(
                                        "port {port} on `{switch}` is another device's attachment"
                                    ),
                                );
                            }
                        }
                    }
                    actions.push(Action::Handover {
                        time_us: *time_us,
                        device: device_id,
                        switch: switch_id,
                        port: *port,
                    });
                }
                ActionDoc::LinkSet {
                    time_us,
                    link,
                    state,
                } => {
                    let link_id = LinkId::new(link.as_str());
                    let is_trunk = topo.links.iter().any(|l| l.id == link_id);
                    let is_access = topo.devices.keys().any(|d| access_link_id(d) == link_id);
                    if !is_trunk && !is_access {
                        push_err(&mut errors, at("link"), format!("unknown link `{link}`"));
                    }
                    actions.push(Action::LinkSet {
                        time_us: *time_us,
                        link: link_id,
                        state: *state,
                    });
                }
            }
        }

        if errors.is_empty() {
            Ok(Scenario {
                description: doc.description.clone(),
                max_events: doc.max_events,
                drain_us: doc.drain_us,
                actions,
            })
        } else {
            Err(TopologyError::Invalid(errors))
        }
    }

    /// Time of the last scripted occurrence (including publish repeats).
    pub fn last_action_us(&self) -> Micros {
        self.actions
            .iter()
            .map(|a| match a {
                Action::Publish {
                    time_us,
                    count,
                    interval_us,
                    ..
                } => time_us + interval_us * count.saturating_sub(1),
                other => other.time_us(),
            })
            .max()
            .unwrap_or(0)
    }

    /// End of the run: last action plus the drain window.
    pub fn horizon_us(&self) -> Micros {
        self.last_action_us() + self.drain_us
    }
}
