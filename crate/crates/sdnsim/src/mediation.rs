//! Control mediation: the fixed topics and message encodings that carry
//! PACKET_IN, PACKET_OUT, flow programming and stats between the controller
//! and per-switch agents.
//!
//! Control messages are ordinary data samples. Scalars map to sample fields
//! directly; nested values (packets, matches, action lists) are embedded as
//! JSON strings. Every message carries a `switch_id` field, and each switch
//! agent subscribes with the content filter from [`agent_filter`] — the same
//! filtering machinery user traffic gets is what scopes commands to their
//! switch.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::dataplane::{
    FlowAction, FlowMatch, FlowModCommand, FlowStats, Packet, PortId, SwitchId,
};
use crate::filter::{FieldMap, FieldPath, FilterExpression, Value};
use crate::kernel::Micros;

pub const TOPIC_PACKET_IN: &str = "mediation/packet_in";
pub const TOPIC_PACKET_OUT: &str = "mediation/packet_out";
pub const TOPIC_FLOW_MOD: &str = "mediation/flow_mod";
pub const TOPIC_FLOW_MOD_REPLY: &str = "mediation/flow_mod_reply";
pub const TOPIC_STATS_REQUEST: &str = "mediation/stats_request";
pub const TOPIC_STATS_REPLY: &str = "mediation/stats_reply";

/// All mediation topics, in the order they are created on the control
/// domain.
pub const TOPICS: [&str; 6] = [
    TOPIC_PACKET_IN,
    TOPIC_PACKET_OUT,
    TOPIC_FLOW_MOD,
    TOPIC_FLOW_MOD_REPLY,
    TOPIC_STATS_REQUEST,
    TOPIC_STATS_REPLY,
];

/// The content filter a switch agent attaches to its command readers.
pub fn agent_filter(switch: &SwitchId) -> FilterExpression {
    FilterExpression::parse(&format!("switch_id = '{}'", switch.as_str()))
        .expect("switch ids contain no quotes")
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum MediationError {
    #[error("control sample is missing field `{0}`")]
    Missing(String),
    #[error("control sample field `{0}` has the wrong type")]
    WrongType(String),
    #[error("control sample field `{0}` does not parse: {1}")]
    BadJson(String, String),
    #[error("unknown flow-mod command `{0}`")]
    BadCommand(String),
}

/// A typed control message with a fixed topic and a flat-sample encoding.
pub trait ControlMsg: Sized {
    const TOPIC: &'static str;
    fn encode(&self) -> FieldMap;
    fn decode(fields: &FieldMap) -> Result<Self, MediationError>;
}

fn path(name: &str) -> FieldPath {
    FieldPath::parse(name).expect("static field name")
}

fn get_str(fields: &FieldMap, name: &str) -> Result<String, MediationError> {
    match fields.get(&path(name)) {
        Some(Value::Str(s)) => Ok(s.clone()),
        Some(_) => Err(MediationError::WrongType(name.to_string())),
        None => Err(MediationError::Missing(name.to_string())),
    }
}

fn get_int(fields: &FieldMap, name: &str) -> Result<i64, MediationError> {
    match fields.get(&path(name)) {
        Some(Value::Int(i)) => Ok(*i),
        Some(_) => Err(MediationError::WrongType(name.to_string())),
        None => Err(MediationError::Missing(name.to_string())),
    }
}

fn put_json<T: Serialize>(fields: &mut FieldMap, name: &str, value: &T) {
    let json = serde_json::to_string(value).expect("control payloads serialize");
    fields.insert(path(name), Value::Str(json));
}

fn get_json<T: DeserializeOwned>(fields: &FieldMap, name: &str) -> Result<T, MediationError> {
    let raw = get_str(fields, name)?;
    serde_json::from_str(&raw).map_err(|e| MediationError::BadJson(name.to_string(), e.to_string()))
}

/// Switch → controller: a packet the data plane could not (or was told not
/// to) handle, with the port it arrived on.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketInMsg {
    pub switch_id: SwitchId,
    pub in_port: PortId,
    pub packet: Packet,
}

impl ControlMsg for PacketInMsg {
    const TOPIC: &'static str = TOPIC_PACKET_IN;

    fn encode(&self) -> FieldMap {
        let mut f = FieldMap::new();
        f.insert(
            path("switch_id"),
            Value::Str(self.switch_id.as_str().to_string()),
        );
        f.insert(path("in_port"), Value::Int(self.in_port as i64));
        put_json(&mut f, "packet", &self.packet);
        f
    }

    fn decode(fields: &FieldMap) -> Result<Self, MediationError> {
        Ok(PacketInMsg {
            switch_id: SwitchId::new(get_str(fields, "switch_id")?),
            in_port: get_int(fields, "in_port")? as PortId,
            packet: get_json(fields, "packet")?,
        })
    }
}

/// Controller → switch: inject a packet and run these actions on it.
#[derive(Clone, Debug, PartialEq)]
pub struct PacketOutMsg {
    pub switch_id: SwitchId,
    pub actions: Vec<FlowAction>,
    pub packet: Packet,
}

impl ControlMsg for PacketOutMsg {
    const TOPIC: &'static str = TOPIC_PACKET_OUT;

    fn encode(&self) -> FieldMap {
        let mut f = FieldMap::new();
        f.insert(
            path("switch_id"),
            Value::Str(self.switch_id.as_str().to_string()),
        );
        put_json(&mut f, "actions", &self.actions);
        put_json(&mut f, "packet", &self.packet);
        f
    }

    fn decode(fields: &FieldMap) -> Result<Self, MediationError> {
        Ok(PacketOutMsg {
            switch_id: SwitchId::new(get_str(fields, "switch_id")?),
            actions: get_json(fields, "actions")?,
            packet: get_json(fields, "packet")?,
        })
    }
}

/// Controller → switch: program one flow table entry.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModMsg {
    pub switch_id: SwitchId,
    /// Correlates the eventual [`FlowModReplyMsg`].
    pub xid: u64,
    pub command: FlowModCommand,
    pub priority: i64,
    pub pattern: FlowMatch,
    pub actions: Vec<FlowAction>,
    pub idle_timeout_us: Option<Micros>,
    /// The application that asked for this entry.
    pub installed_by: String,
}

fn command_str(c: FlowModCommand) -> &'static str {
    match c {
        FlowModCommand::Add => "add",
        FlowModCommand::Modify => "modify",
        FlowModCommand::Delete => "delete",
    }
}

impl ControlMsg for FlowModMsg {
    const TOPIC: &'static str = TOPIC_FLOW_MOD;

    fn encode(&self) -> FieldMap {
        let mut f = FieldMap::new();
        f.insert(
            path("switch_id"),
            Value::Str(self.switch_id.as_str().to_string()),
        );
        f.insert(path("xid"), Value::Int(self.xid as i64));
        f.insert(
            path("command"),
            Value::Str(command_str(self.command).to_string()),
        );
        f.insert(path("priority"), Value::Int(self.priority));
        put_json(&mut f, "pattern", &self.pattern);
        put_json(&mut f, "actions", &self.actions);
        let idle = self.idle_timeout_us.map(|t| t as i64).unwrap_or(-1);
        f.insert(path("idle_timeout_us"), Value::Int(idle));
        f.insert(path("installed_by"), Value::Str(self.installed_by.clone()));
        f
    }

    fn decode(fields: &FieldMap) -> Result<Self, MediationError> {
        let command = match get_str(fields, "command")?.as_str() {
            "add" => FlowModCommand::Add,
            "modify" => FlowModCommand::Modify,
            "delete" => FlowModCommand::Delete,
            other => return Err(MediationError::BadCommand(other.to_string())),
        };
        let idle = get_int(fields, "idle_timeout_us")?;
        Ok(FlowModMsg {
            switch_id: SwitchId::new(get_str(fields, "switch_id")?),
            xid: get_int(fields, "xid")? as u64,
            command,
            priority: get_int(fields, "priority")?,
            pattern: get_json(fields, "pattern")?,
            actions: get_json(fields, "actions")?,
            idle_timeout_us: (idle >= 0).then_some(idle as Micros),
            installed_by: get_str(fields, "installed_by")?,
        })
    }
}

/// Switch → controller: outcome of one flow-mod, correlated by `xid`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlowModReplyMsg {
    pub switch_id: SwitchId,
    pub xid: u64,
    /// `None` on success, otherwise the table error rendered as text.
    pub error: Option<String>,
}

impl ControlMsg for FlowModReplyMsg {
    const TOPIC: &'static str = TOPIC_FLOW_MOD_REPLY;

    fn encode(&self) -> FieldMap {
        let mut f = FieldMap::new();
        f.insert(
            path("switch_id"),
            Value::Str(self.switch_id.as_str().to_string()),
        );
        f.insert(path("xid"), Value::Int(self.xid as i64));
        f.insert(path("ok"), Value::Int(i64::from(self.error.is_none())));
        f.insert(
            path("error"),
            Value::Str(self.error.clone().unwrap_or_default()),
        );
        f
    }

    fn decode(fields: &FieldMap) -> Result<Self, MediationError> {
        let ok = get_int(fields, "ok")? != 0;
        let error = get_str(fields, "error")?;
        Ok(FlowModReplyMsg {
            switch_id: SwitchId::new(get_str(fields, "switch_id")?),
            xid: get_int(fields, "xid")? as u64,
            error: (!ok).then_some(error),
        })
    }
}

/// Controller → switch: report per-entry counters, optionally restricted to
/// one exact match pattern.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsRequestMsg {
    pub switch_id: SwitchId,
    pub xid: u64,
    pub pattern: Option<FlowMatch>,
}

impl ControlMsg for StatsRequestMsg {
    const TOPIC: &'static str = TOPIC_STATS_REQUEST;

    fn encode(&self) -> FieldMap {
        let mut f = FieldMap::new();
        f.insert(
            path("switch_id"),
            Value::Str(self.switch_id.as_str().to_string()),
        );
        f.insert(path("xid"), Value::Int(self.xid as i64));
        put_json(&mut f, "pattern", &self.pattern);
        f
    }

    fn decode(fields: &FieldMap) -> Result<Self, MediationError> {
        Ok(StatsRequestMsg {
            switch_id: SwitchId::new(get_str(fields, "switch_id")?),
            xid: get_int(fields, "xid")? as u64,
            pattern: get_json(fields, "pattern")?,
        })
    }
}

/// Switch → controller: the answer to a stats request. Handling a stats
/// request is also when a switch sweeps idle entries, so the entries it
/// dropped ride along for the controller to forget.
#[derive(Clone, Debug, PartialEq)]
pub struct StatsReplyMsg {
    pub switch_id: SwitchId,
    pub xid: u64,
    pub entries: Vec<FlowStats>,
    pub expired: Vec<FlowStats>,
}

impl ControlMsg for StatsReplyMsg {
    const TOPIC: &'static str = TOPIC_STATS_REPLY;

    fn encode(&self) -> FieldMap {
        let mut f = FieldMap::new();
        f.insert(
            path("switch_id"),
            Value::Str(self.switch_id.as_str().to_string()),
        );
        f.insert(path("xid"), Value::Int(self.xid as i64));
        put_json(&mut f, "entries", &self.entries);
        put_json(&mut f, "expired", &self.expired);
        f
    }

    fn decode(fields: &FieldMap) -> Result<Self, MediationError> {
        Ok(StatsReplyMsg {
            switch_id: SwitchId::new(get_str(fields, "switch_id")?),
            xid: get_int(fields, "xid")? as u64,
            entries: get_json(fields, "entries")?,
            expired: get_json(fields, "expired")?,
        })
    }
}
