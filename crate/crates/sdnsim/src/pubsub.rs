//! Data-centric publish/subscribe middleware: domains, topics, writers and
//! readers with QoS, participant discovery, write-side content filtering,
//! sample batching and multichannel (multicast) routing.
//!
//! A [`Participant`] is a pure state machine. Writing returns
//! [`PubSubEffect`]s describing what must travel over the network; the
//! simulation layer turns those into packets and timers. Delivery comes back
//! in through [`Participant::deliver`], which runs reader-side matching,
//! duplicate suppression and filter re-evaluation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataplane::Addr;
use crate::filter::{FieldMap, FilterExpression};
use crate::kernel::Micros;
use crate::string_id;

pub type DomainId = u32;

string_id!(
    /// Name of a domain participant (a device, a gateway agent, the
    /// controller).
    ParticipantName
);
string_id!(
    /// Topic name. Topics are untyped here: every sample is a flat map of
    /// dotted field paths to scalar values.
    TopicName
);

/// Globally unique endpoint identity: owning participant plus a
/// per-participant counter.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EndpointId {
    pub participant: ParticipantName,
    pub n: u32,
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}", self.participant, self.n)
    }
}

impl EndpointId {
    #[cfg(test)]
    pub(crate) fn test(p: u32, n: u32) -> EndpointId {
        EndpointId {
            participant: ParticipantName::new(format!("p{p}")),
            n,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reliability {
    /// Delivered unless the path is down.
    #[default]
    Reliable,
    /// Additionally discarded by links in their lossy state.
    BestEffort,
}

/// Writer-side sample coalescing: hold samples until `max_samples` are
/// pending or `max_delay_us` has passed since the first one.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchingQos {
    pub max_samples: usize,
    pub max_delay_us: Micros,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Qos {
    /// Partition names. Endpoints match when both sets are empty (the
    /// default partition) or the sets intersect.
    pub partitions: Vec<String>,
    pub reliability: Reliability,
    /// KEEP_LAST depth for reader history; `None` keeps everything.
    pub history_depth: Option<usize>,
    /// Writers only.
    pub batching: Option<BatchingQos>,
    /// DSCP stamped on packets this endpoint's samples travel in.
    pub dscp: u8,
}

impl Default for Qos {
    fn default() -> Self {
        Qos {
            partitions: Vec::new(),
            reliability: Reliability::Reliable,
            history_depth: None,
            batching: None,
            dscp: 0,
        }
    }
}

/// Both in the default partition, or a shared named partition.
pub fn partitions_match(writer: &[String], reader: &[String]) -> bool {
    if writer.is_empty() && reader.is_empty() {
        return true;
    }
    writer.iter().any(|p| reader.contains(p))
}

/// One multicast output of a writer: samples passing `filter` (all of them
/// when absent) are sent to `group`. A sample may match several channels;
/// reader-side duplicate suppression keeps delivery single.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub group: Addr,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterExpression>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataSample {
    pub topic: TopicName,
    pub writer: EndpointId,
    /// 1-based per-writer sequence number.
    pub seq: u64,
    pub fields: FieldMap,
}

/// What actually travels in a packet: samples from one writer, one flush.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub domain: DomainId,
    /// The writer's partitions, carried so receivers can re-run matching
    /// (multicast receivers cannot rely on having the writer in their
    /// discovery database).
    pub writer_partitions: Vec<String>,
    pub samples: Vec<DataSample>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointRecord {
    pub id: EndpointId,
    pub topic: TopicName,
    pub qos: Qos,
    /// Readers advertise their content filter so writers can avoid sending
    /// samples no reader at the destination wants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<FilterExpression>,
}

/// Everything one participant announces about itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticipantRecord {
    pub name: ParticipantName,
    pub domain: DomainId,
    pub address: Addr,
    /// Bumped whenever the endpoint set changes; receivers keep the highest
    /// version they have seen.
    pub version: u64,
    pub writers: Vec<EndpointRecord>,
    pub readers: Vec<EndpointRecord>,
}

/// A discovery announcement as carried in packet payloads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscoveryMsg {
    pub record: ParticipantRecord,
}

#[derive(Clone, Debug, Error, PartialEq)]
pub enum PubSubError {
    #[error("topic `{0}` already exists in domain {1}")]
    TopicExists(TopicName, DomainId),
    #[error("no topic `{0}` in domain {1}")]
    NoSuchTopic(TopicName, DomainId),
    #[error("no writer `{0}`")]
    UnknownWriter(EndpointId),
    #[error("no reader `{0}`")]
    UnknownReader(EndpointId),
}

/// Topic names per domain. Creation is explicit and duplicates are errors;
/// everything else just checks existence.
#[derive(Debug, Default)]
pub struct TopicRegistry {
    by_domain: BTreeMap<DomainId, BTreeSet<TopicName>>,
}

impl TopicRegistry {
    pub fn create(&mut self, domain: DomainId, name: TopicName) -> Result<(), PubSubError> {
        let topics = self.by_domain.entry(domain).or_default();
        if !topics.insert(name.clone()) {
            return Err(PubSubError::TopicExists(name, domain));
        }
        Ok(())
    }

    pub fn exists(&self, domain: DomainId, name: &TopicName) -> bool {
        self.by_domain
            .get(&domain)
            .is_some_and(|t| t.contains(name))
    }

    pub fn names(&self, domain: DomainId) -> impl Iterator<Item = &TopicName> {
        self.by_domain.get(&domain).into_iter().flatten()
    }
}

/// What the middleware wants the network layer to do after a write or flush.
#[derive(Clone, Debug, PartialEq)]
pub enum PubSubEffect {
    /// Deliver to this same participant's own matching readers.
    LocalDeliver { batch: SampleBatch },
    /// Point-to-point batch to one remote participant.
    Send {
        to: ParticipantName,
        to_address: Addr,
        batch: SampleBatch,
        dscp: u8,
        best_effort: bool,
    },
    /// One multicast transmission to a channel's group address.
    SendMulticast {
        group: Addr,
        batch: SampleBatch,
        dscp: u8,
        best_effort: bool,
    },
    /// The host must call [`Participant::flush_timer`] for this writer at
    /// `at` (batching deadline for a partially filled batch).
    FlushAt { writer: EndpointId, at: Micros },
}

#[derive(Debug)]
pub struct Writer {
    pub id: EndpointId,
    pub topic: TopicName,
    pub qos: Qos,
    pub channels: Vec<Channel>,
    /// Samples written so far (also the latest sequence number).
    pub written: u64,
    /// (sample, destination) pairs suppressed by write-side filtering.
    pub suppressed_samples: u64,
    batch: Vec<DataSample>,
    batch_deadline: Option<Micros>,
}

/// A sample a reader accepted, with the arrival time.
#[derive(Clone, Debug, PartialEq)]
pub struct ReceivedSample {
    pub sample: DataSample,
    pub at: Micros,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AcceptOutcome {
    Accepted,
    /// Same (writer, seq) already seen — multicast overlap or redundant path.
    Duplicate,
    /// Reader's filter evaluated to false.
    FilteredOut,
    /// Reader's filter could not be evaluated (missing field or type clash);
    /// the sample is not delivered and the error is counted.
    EvalError,
}

#[derive(Debug)]
pub struct Reader {
    pub id: EndpointId,
    pub topic: TopicName,
    pub qos: Qos,
    pub filter: Option<FilterExpression>,
    pub received: u64,
    pub duplicates: u64,
    pub filtered_out: u64,
    pub eval_errors: u64,
    history: VecDeque<ReceivedSample>,
    seen: BTreeSet<(EndpointId, u64)>,
}

impl Reader {
    fn accept(&mut self, sample: &DataSample, now: Micros) -> AcceptOutcome {
        // Duplicate suppression happens before filtering: a copy of a sample
        // the filter rejected is still a duplicate, not a second rejection.
        if !self.seen.insert((sample.writer.clone(), sample.seq)) {
            self.duplicates += 1;
            return AcceptOutcome::Duplicate;
        }
        if let Some(f) = &self.filter {
            match f.evaluate(&sample.fields) {
                Ok(true) => {}
                Ok(false) => {
                    self.filtered_out += 1;
                    return AcceptOutcome::FilteredOut;
                }
                Err(_) => {
                    self.eval_errors += 1;
                    return AcceptOutcome::EvalError;
                }
            }
        }
        self.received += 1;
        self.history.push_back(ReceivedSample {
            sample: sample.clone(),
            at: now,
        });
        if let Some(depth) = self.qos.history_depth {
            while self.history.len() > depth {
                self.history.pop_front();
            }
        }
        AcceptOutcome::Accepted
    }

    pub fn history(&self) -> impl Iterator<Item = &ReceivedSample> {
        self.history.iter()
    }

    /// Drain everything currently held.
    pub fn take(&mut self) -> Vec<ReceivedSample> {
        self.history.drain(..).collect()
    }
}

/// Per-delivery accounting returned by [`Participant::deliver`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DeliveryReport {
    pub accepted: Vec<(EndpointId, DataSample)>,
    pub duplicates: u64,
    pub filtered_out: u64,
    pub eval_errors: u64,
    /// Samples for which no local reader matched on topic/partitions.
    pub unmatched: u64,
}

#[derive(Debug)]
pub struct Participant {
    pub name: ParticipantName,
    pub domain: DomainId,
    pub address: Addr,
    writers: BTreeMap<u32, Writer>,
    readers: BTreeMap<u32, Reader>,
    next_endpoint: u32,
    version: u64,
    db: BTreeMap<ParticipantName, ParticipantRecord>,
}

impl Participant {
    pub fn new(name: ParticipantName, domain: DomainId, address: Addr) -> Participant {
        Participant {
            name,
            domain,
            address,
            writers: BTreeMap::new(),
            readers: BTreeMap::new(),
            next_endpoint: 0,
            version: 0,
            db: BTreeMap::new(),
        }
    }

    pub fn create_writer(
        &mut self,
        topic: TopicName,
        qos: Qos,
        channels: Vec<Channel>,
    ) -> EndpointId {
        let id = self.fresh_endpoint();
        self.writers.insert(
            id.n,
            Writer {
                id: id.clone(),
                topic,
                qos,
                channels,
                written: 0,
                suppressed_samples: 0,
                batch: Vec::new(),
                batch_deadline: None,
            },
        );
        self.version += 1;
        id
    }

    pub fn create_reader(
        &mut self,
        topic: TopicName,
        qos: Qos,
        filter: Option<FilterExpression>,
    ) -> EndpointId {
        let id = self.fresh_endpoint();
        self.readers.insert(
            id.n,
            Reader {
                id: id.clone(),
                topic,
                qos,
                filter,
                received: 0,
                duplicates: 0,
                filtered_out: 0,
                eval_errors: 0,
                history: VecDeque::new(),
                seen: BTreeSet::new(),
            },
        );
        self.version += 1;
        id
    }

    fn fresh_endpoint(&mut self) -> EndpointId {
        let n = self.next_endpoint;
        self.next_endpoint += 1;
        EndpointId {
            participant: self.name.clone(),
            n,
        }
    }

    pub fn writer(&self, id: &EndpointId) -> Option<&Writer> {
        self.writers.get(&id.n).filter(|w| w.id == *id)
    }

    pub fn reader(&self, id: &EndpointId) -> Option<&Reader> {
        self.readers.get(&id.n).filter(|r| r.id == *id)
    }

    pub fn reader_mut(&mut self, id: &EndpointId) -> Option<&mut Reader> {
        self.readers.get_mut(&id.n).filter(|r| r.id == *id)
    }

    pub fn writers(&self) -> impl Iterator<Item = &Writer> {
        self.writers.values()
    }

    pub fn readers(&self) -> impl Iterator<Item = &Reader> {
        self.readers.values()
    }

    /// The record this participant announces.
    pub fn record(&self) -> ParticipantRecord {
        ParticipantRecord {
            name: self.name.clone(),
            domain: self.domain,
            address: self.address.clone(),
            version: self.version,
            writers: self
                .writers
                .values()
                .map(|w| EndpointRecord {
                    id: w.id.clone(),
                    topic: w.topic.clone(),
                    qos: w.qos.clone(),
                    filter: None,
                })
                .collect(),
            readers: self
                .readers
                .values()
                .map(|r| EndpointRecord {
                    id: r.id.clone(),
                    topic: r.topic.clone(),
                    qos: r.qos.clone(),
                    filter: r.filter.clone(),
                })
                .collect(),
        }
    }

    pub fn make_announcement(&self) -> DiscoveryMsg {
        DiscoveryMsg {
            record: self.record(),
        }
    }

    /// Folds a received announcement into the local discovery database.
    /// Returns true when it changed something (new participant, or a newer
    /// version of a known one). Own announcements are ignored.
    pub fn merge_record(&mut self, record: ParticipantRecord) -> bool {
        if record.name == self.name {
            return false;
        }
        match self.db.get(&record.name) {
            Some(existing) if existing.version >= record.version => false,
            _ => {
                self.db.insert(record.name.clone(), record);
                true
            }
        }
    }

    pub fn known_participants(&self) -> impl Iterator<Item = &ParticipantRecord> {
        self.db.values()
    }

    pub fn db_record(&self, name: &ParticipantName) -> Option<&ParticipantRecord> {
        self.db.get(name)
    }

    /// Removes a participant from the discovery database (used when the
    /// infrastructure learns an address moved and state must be relearned).
    pub fn forget(&mut self, name: &ParticipantName) -> bool {
        self.db.remove(name).is_some()
    }

    /// Writes one sample. With batching QoS the sample is held back until
    /// the batch fills or its deadline passes; otherwise it is flushed
    /// immediately.
    pub fn write(
        &mut self,
        writer_id: &EndpointId,
        fields: FieldMap,
        now: Micros,
    ) -> Result<Vec<PubSubEffect>, PubSubError> {
        let writer = self
            .writers
            .get_mut(&writer_id.n)
            .filter(|w| w.id == *writer_id)
            .ok_or_else(|| PubSubError::UnknownWriter(writer_id.clone()))?;
        writer.written += 1;
        let sample = DataSample {
            topic: writer.topic.clone(),
            writer: writer.id.clone(),
            seq: writer.written,
            fields,
        };
        writer.batch.push(sample);
        let flush_now;
        let mut deadline_effect = None;
        match writer.qos.batching {
            None => flush_now = true,
            Some(b) => {
                if writer.batch.len() >= b.max_samples {
                    flush_now = true;
                } else {
                    flush_now = false;
                    if writer.batch.len() == 1 {
                        let at = now + b.max_delay_us;
                        writer.batch_deadline = Some(at);
                        deadline_effect = Some(PubSubEffect::FlushAt {
                            writer: writer.id.clone(),
                            at,
                        });
                    }
                }
            }
        }
        if flush_now {
            Ok(self.flush_by_n(writer_id.n, now))
        } else {
            Ok(deadline_effect.into_iter().collect())
        }
    }

    /// Sends whatever the writer's batch holds, immediately.
    pub fn flush(
        &mut self,
        writer_id: &EndpointId,
        now: Micros,
    ) -> Result<Vec<PubSubEffect>, PubSubError> {
        if self.writer(writer_id).is_none() {
            return Err(PubSubError::UnknownWriter(writer_id.clone()));
        }
        Ok(self.flush_by_n(writer_id.n, now))
    }

    /// Deadline callback for [`PubSubEffect::FlushAt`]. A timer whose
    /// deadline no longer matches (the batch filled and was flushed earlier)
    /// is ignored.
    pub fn flush_timer(&mut self, writer_id: &EndpointId, at: Micros) -> Vec<PubSubEffect> {
        let Some(writer) = self
            .writers
            .get_mut(&writer_id.n)
            .filter(|w| w.id == *writer_id)
        else {
            return Vec::new();
        };
        if writer.batch_deadline != Some(at) {
            return Vec::new();
        }
        self.flush_by_n(writer_id.n, at)
    }

    fn flush_by_n(&mut self, n: u32, _now: Micros) -> Vec<PubSubEffect> {
        let writer = self.writers.get_mut(&n).expect("writer exists");
        writer.batch_deadline = None;
        let samples: Vec<DataSample> = writer.batch.drain(..).collect();
        if samples.is_empty() {
            return Vec::new();
        }
        let topic = writer.topic.clone();
        let qos = writer.qos.clone();
        let channels = writer.channels.clone();
        let best_effort = qos.reliability == Reliability::BestEffort;

        let mut effects = Vec::new();
        let mut suppressed = 0u64;

        if !channels.is_empty() {
            // Multichannel writer: each channel carries the samples passing
            // its filter. Overlap is allowed; readers deduplicate.
            for channel in &channels {
                let sub: Vec<DataSample> = samples
                    .iter()
                    .filter(|s| match &channel.filter {
                        None => true,
                        // An unevaluable channel filter sends rather than
                        // silently losing the sample.
                        Some(f) => f.evaluate(&s.fields).unwrap_or(true),
                    })
                    .cloned()
                    .collect();
                if !sub.is_empty() {
                    effects.push(PubSubEffect::SendMulticast {
                        group: channel.group.clone(),
                        batch: SampleBatch {
                            domain: self.domain,
                            writer_partitions: qos.partitions.clone(),
                            samples: sub,
                        },
                        dscp: qos.dscp,
                        best_effort,
                    });
                }
            }
        } else {
            // Unicast fan-out, one batch per destination participant. A
            // sample travels there only if at least one matching reader at
            // that participant wants it (no filter, filter true, or filter
            // unevaluable — the reader itself accounts for the error).
            for record in self.db.values() {
                if record.domain != self.domain {
                    continue;
                }
                let readers: Vec<&EndpointRecord> = record
                    .readers
                    .iter()
                    .filter(|r| {
                        r.topic == topic && partitions_match(&qos.partitions, &r.qos.partitions)
                    })
                    .collect();
                if readers.is_empty() {
                    continue;
                }
                let sub: Vec<DataSample> = samples
                    .iter()
                    .filter(|s| {
                        readers.iter().any(|r| match &r.filter {
                            None => true,
                            Some(f) => f.evaluate(&s.fields).unwrap_or(true),
                        })
                    })
                    .cloned()
                    .collect();
                suppressed += (samples.len() - sub.len()) as u64;
                if !sub.is_empty() {
                    effects.push(PubSubEffect::Send {
                        to: record.name.clone(),
                        to_address: record.address.clone(),
                        batch: SampleBatch {
                            domain: self.domain,
                            writer_partitions: qos.partitions.clone(),
                            samples: sub,
                        },
                        dscp: qos.dscp,
                        best_effort,
                    });
                }
            }
            let has_local = self
                .readers
                .values()
                .any(|r| r.topic == topic && partitions_match(&qos.partitions, &r.qos.partitions));
            if has_local {
                effects.push(PubSubEffect::LocalDeliver {
                    batch: SampleBatch {
                        domain: self.domain,
                        writer_partitions: qos.partitions.clone(),
                        samples,
                    },
                });
            }
        }

        if suppressed > 0 {
            self.writers
                .get_mut(&n)
                .expect("writer exists")
                .suppressed_samples += suppressed;
        }
        effects
    }

    /// Runs an arriving batch through every local reader: topic, domain and
    /// partition matching, then per-reader dedup, filtering and history.
    pub fn deliver(&mut self, batch: &SampleBatch, now: Micros) -> DeliveryReport {
        let mut report = DeliveryReport::default();
        if batch.domain != self.domain {
            report.unmatched = batch.samples.len() as u64;
            return report;
        }
        for sample in &batch.samples {
            let mut matched = false;
            for reader in self.readers.values_mut() {
                if reader.topic != sample.topic {
                    continue;
                }
                if !partitions_match(&batch.writer_partitions, &reader.qos.partitions) {
                    continue;
                }
                matched = true;
                match reader.accept(sample, now) {
                    AcceptOutcome::Accepted => {
                        report.accepted.push((reader.id.clone(), sample.clone()));
                    }
                    AcceptOutcome::Duplicate => report.duplicates += 1,
                    AcceptOutcome::FilteredOut => report.filtered_out += 1,
                    AcceptOutcome::EvalError => report.eval_errors += 1,
                }
            }
            if !matched {
                report.unmatched += 1;
            }
        }
        report
    }
}
