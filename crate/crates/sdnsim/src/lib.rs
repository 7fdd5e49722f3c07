//! Deterministic simulator for a software-defined IoT network whose control
//! plane speaks a data-centric publish/subscribe protocol.
//!
//! The crate is organised bottom-up:
//!
//! * [`kernel`] — discrete-event core: logical microsecond clock, ordered
//!   event queue, seeded randomness, dispatch trace.
//! * [`filter`] — content filter expression language (parse, evaluate,
//!   canonical printing).
//! * [`dataplane`] — packets, flow tables, switches, gateways and links.
//! * [`pubsub`] — domains, topics, writers/readers, QoS, discovery,
//!   batching and multichannel routing.
//! * [`mediation`] — the fixed control topics that carry PACKET_IN,
//!   PACKET_OUT, flow-mods and stats between switches and the controller.
//! * [`controller`] — northbound applications: learning forwarder, mobility
//!   manager, discovery proxy, slice guard and flood monitor.
//! * [`topology`] / [`scenario`] — JSON documents describing a network and a
//!   timed action script.
//! * [`sim`] — glues everything into one runnable world.
//! * [`metrics`] — the report emitted after a run.
//!
//! Runs are reproducible: the same seed, topology and scenario produce a
//! bit-identical event trace and report.

pub mod canned;
pub mod controller;
pub mod dataplane;
pub mod filter;
pub mod kernel;
pub mod mediation;
pub mod metrics;
pub mod pubsub;
pub mod scenario;
pub mod sim;
pub mod topology;

/// Declares a newtype over `String` used as an identifier: transparent
/// serde, ordered, displayable, cheap to construct from literals.
macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(
            Clone,
            Debug,
            PartialEq,
            Eq,
            PartialOrd,
            Ord,
            Hash,
            serde::Serialize,
            serde::Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                $name(s.into())
            }
            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                write!(f, "{}", self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                $name(s.to_string())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                $name(s)
            }
        }
    };
}
pub(crate) use string_id;
