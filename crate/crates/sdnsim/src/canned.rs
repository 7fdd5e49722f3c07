//! Built-in topology/scenario pairs, embedded at compile time.
//!
//! Each entry demonstrates one mechanism end to end and doubles as a fixture
//! for the integration suite. `sdnsim list-scenarios` prints this registry;
//! `sdnsim run --canned <name>` executes an entry.

use crate::scenario::Scenario;
use crate::topology::{Topology, TopologyDoc, TopologyError};

pub struct Canned {
    pub name: &'static str,
    pub summary: &'static str,
    pub topology_json: &'static str,
    pub scenario_json: &'static str,
}

impl Canned {
    /// Parse and validate the embedded pair.
    pub fn load(&self) -> Result<(Topology, Scenario), TopologyError> {
        let doc: TopologyDoc = serde_json::from_str(self.topology_json)?;
        let topo = Topology::from_doc(&doc).map_err(TopologyError::Invalid)?;
        let scenario = Scenario::from_json(self.scenario_json, &topo)?;
        Ok((topo, scenario))
    }
}

pub const ALL: &[Canned] = &[
    Canned {
        name: "content-filter",
        summary: "writer-side content filtering against a reader's subscription expression",
        topology_json: include_str!("../scenarios/content-filter/topology.json"),
        scenario_json: include_str!("../scenarios/content-filter/scenario.json"),
    },
    Canned {
        name: "batching",
        summary: "sample batching by count and deadline (compare with batching-off)",
        topology_json: include_str!("../scenarios/batching/topology.json"),
        scenario_json: include_str!("../scenarios/batching/scenario.json"),
    },
    Canned {
        name: "batching-off",
        summary: "the batching scenario with batching disabled: one packet per sample",
        topology_json: include_str!("../scenarios/batching-off/topology.json"),
        scenario_json: include_str!("../scenarios/batching/scenario.json"),
    },
    Canned {
        name: "multichannel",
        summary: "one writer, two filtered multicast channels, a reader in both groups",
        topology_json: include_str!("../scenarios/multichannel/topology.json"),
        scenario_json: include_str!("../scenarios/multichannel/scenario.json"),
    },
    Canned {
        name: "multichannel-baseline",
        summary: "the multichannel scenario rebuilt with unicast writers and reader filters",
        topology_json: include_str!("../scenarios/multichannel-baseline/topology.json"),
        scenario_json: include_str!("../scenarios/multichannel/scenario.json"),
    },
    Canned {
        name: "learning",
        summary: "reactive unicast learning: one miss per switch per direction, then silence",
        topology_json: include_str!("../scenarios/learning/topology.json"),
        scenario_json: include_str!("../scenarios/learning/scenario.json"),
    },
    Canned {
        name: "handover",
        summary: "mid-stream device mobility with flow retargeting and bounded loss",
        topology_json: include_str!("../scenarios/handover/topology.json"),
        scenario_json: include_str!("../scenarios/handover/scenario.json"),
    },
    Canned {
        name: "discovery-redirect",
        summary: "first discovery announcement goes to the controller, the rest stay in-fabric",
        topology_json: include_str!("../scenarios/discovery-redirect/topology.json"),
        scenario_json: include_str!("../scenarios/discovery-redirect/scenario.json"),
    },
    Canned {
        name: "keyword-slice",
        summary:
            "payload keyword matching with DSCP rewrite, plus a slice that refuses the learning app",
        topology_json: include_str!("../scenarios/keyword-slice/topology.json"),
        scenario_json: include_str!("../scenarios/keyword-slice/scenario.json"),
    },
    Canned {
        name: "flood",
        summary: "traffic flood detected by stats polling and cut off with a drop rule",
        topology_json: include_str!("../scenarios/flood/topology.json"),
        scenario_json: include_str!("../scenarios/flood/scenario.json"),
    },
];

pub fn find(name: &str) -> Option<&'static Canned> {
    ALL.iter().find(|c| c.name == name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn every_entry_parses_and_validates() {
        for canned in ALL {
            if let Err(e) = canned.load() {
                panic!("canned scenario `{}` failed to load: {e}", canned.name);
            }
        }
    }

    #[test]
    fn names_are_unique_and_findable() {
        let names: BTreeSet<_> = ALL.iter().map(|c| c.name).collect();
        assert_eq!(names.len(), ALL.len());
        for canned in ALL {
            assert!(find(canned.name).is_some());
        }
        assert!(find("no-such-scenario").is_none());
    }
}
