//! Typed description and validation of the deployed ring network.
//!
//! The network consists of QKD nodes and optical distribution frames (ODFs)
//! joined by dual-fibre segments; fibre 1 of each segment carries quantum
//! signals, fibre 2 the multiplexed classical traffic. Quantum links run
//! anti-clockwise around the ring, entering the shared fibre through a
//! circulator at each node and, where fitted, through a circulator at an
//! ODF. Classical signals ride distinct ITU-T grid wavelengths: a
//! budget of at most seven covers the encryption ring (both directions),
//! the synchronization ring and the per-node KMS uplinks whose switch at
//! ODF 3 realizes the full KMS mesh.
//!
//! Configurations are JSON documents (see `configs/nicosia.ring`).
//! [`parse_topology`] resolves references and link budgets and rejects
//! malformed documents; [`validate`] reports every broken network invariant
//! as a [`Diagnostic`]; [`load_topology`] combines both and accepts only
//! clean topologies.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use thiserror::Error;

/// Default fibre attenuation used when a segment gives only its length.
pub const DEFAULT_FIBRE_LOSS_DB_PER_KM: f64 = 0.35;
/// Default circulator insertion loss per hop in dB.
pub const DEFAULT_CIRCULATOR_INSERTION_DB: f64 = 0.8;
/// Classical wavelength budget: one ITU-T grid channel per signal.
pub const MAX_WAVELENGTHS: usize = 7;

/// Errors raised while loading or querying a topology.
#[derive(Debug, Error)]
pub enum TopologyError {
    /// The document is not syntactically valid.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    /// The document could not be read from disk.
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    /// Two elements share one id.
    #[error("duplicate id {id}")]
    DuplicateId { id: String },
    /// An element refers to a site that does not exist.
    #[error("{element} references unknown site {reference}")]
    UnknownSite { element: String, reference: String },
    /// A field value is structurally impossible.
    #[error("{element}: {detail}")]
    BadValue { element: String, detail: String },
    /// A segment has neither an explicit loss nor a length to derive one.
    #[error("segment {segment} has neither loss_db nor length_km")]
    MissingLoss { segment: String },
    /// A link's segment list does not continue from the current site.
    #[error("link {link}: segment {segment} does not touch {at}")]
    DiscontinuousPath {
        link: String,
        segment: String,
        at: String,
    },
    /// A link's segment list ends somewhere other than its receiver.
    #[error("link {link}: path ends at {got}, expected receiver {expected}")]
    PathEndpointMismatch {
        link: String,
        got: String,
        expected: String,
    },
    /// The resolved topology violates a network invariant.
    #[error("invariant violation: {0}")]
    Invariant(Diagnostic),
    /// A direct quantum path was requested against the ring direction.
    #[error("{tx} -> {rx} runs clockwise; the ring only carries anti-clockwise signals")]
    WrongDirection { tx: String, rx: String },
    /// A direct quantum path was requested between non-adjacent nodes.
    #[error("{tx} and {rx} are not ring-adjacent; no direct quantum link exists")]
    NotADirectLink { tx: String, rx: String },
}

/// Network invariants checked by [`validate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rule {
    /// Every quantum link must run anti-clockwise along the declared ring.
    Direction,
    /// Quantum links must cover every node exactly once as tx and once as rx.
    RingCover,
    /// Link endpoints must have the required transmitter/receiver hardware.
    Equipment,
    /// At most one fibre segment pair between any two sites.
    SegmentPairing,
    /// A segment carries at most two quantum signals, in opposite directions.
    SegmentOccupancy,
    /// Stored link budgets must match recomputation from the segment table.
    LossConsistency,
    /// At most seven distinct classical wavelengths.
    WavelengthBudget,
    /// Each wavelength is assigned to exactly one classical signal.
    WavelengthUniqueness,
    /// Channel purposes bind their topology role (kms mesh, sync/encryption ring).
    ChannelRole,
    /// Every node needs exactly one KMS uplink for the full mesh.
    KmsMesh,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Direction => "direction",
            Rule::RingCover => "ring-cover",
            Rule::Equipment => "equipment",
            Rule::SegmentPairing => "segment-pairing",
            Rule::SegmentOccupancy => "segment-occupancy",
            Rule::LossConsistency => "loss-consistency",
            Rule::WavelengthBudget => "wavelength-budget",
            Rule::WavelengthUniqueness => "wavelength-uniqueness",
            Rule::ChannelRole => "channel-role",
            Rule::KmsMesh => "kms-mesh",
        };
        f.write_str(s)
    }
}

/// One violated invariant, as data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    /// Which invariant is broken.
    pub rule: Rule,
    /// The offending element id.
    pub element: String,
    /// Human-readable detail.
    pub message: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.rule, self.element, self.message)
    }
}

/// A QKD node: transmitter and receiver site on the ring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub has_transmitter: bool,
    pub has_receiver: bool,
}

/// Function of an optical distribution frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OdfRole {
    /// Pure patch point: no insertion beyond its spliced segments.
    #[serde(rename = "passive")]
    Passive,
    /// Hosts a four-port circulator redirecting the quantum ring.
    #[serde(rename = "circulator-4port")]
    Circulator4Port,
    /// Hosts a three-port circulator.
    #[serde(rename = "circulator-3port")]
    Circulator3Port,
}

/// An optical distribution frame between fibre segments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Odf {
    pub id: String,
    pub role: OdfRole,
}

/// Orientation of a quantum signal relative to a segment's endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentDirection {
    AToB,
    BToA,
}

/// One dual-fibre segment; the recorded loss refers to the quantum fibre.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FibreSegment {
    pub id: String,
    pub endpoint_a: String,
    pub endpoint_b: String,
    /// Installed length, when known.
    pub length_km: Option<f64>,
    /// Resolved attenuation in dB (explicit, or derived from length).
    pub loss_db: f64,
    /// Quantum links riding this segment, with their orientation.
    pub quantum_occupancy: Vec<(String, SegmentDirection)>,
}

/// One hop of a quantum link's path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathEntry {
    pub segment: String,
    pub from: String,
    pub to: String,
    /// True when a circulator redirects the signal at the downstream end of
    /// this segment (arrival at a node, or at an ODF fitted with one).
    pub circulator_hop: bool,
}

/// A directed quantum link between ring-adjacent nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantumLink {
    pub id: String,
    pub tx_node: String,
    pub rx_node: String,
    pub path: Vec<PathEntry>,
    /// Circulators traversed end to end. The launch circulator at the
    /// transmitter always counts as one; each flagged path entry adds one.
    pub circulator_hops: u32,
    /// Sum of segment losses plus `circulator_hops` insertion losses, dB.
    pub total_loss_db: f64,
}

/// What a classical wavelength carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelPurpose {
    Encryption,
    Sync,
    Kms,
}

/// How a classical channel is wired.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyRole {
    Ring,
    Mesh,
}

/// One classical signal on the DWDM plan.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassicalChannel {
    pub id: String,
    pub purpose: ChannelPurpose,
    /// ITU-T grid channel id, e.g. "C27".
    pub wavelength: String,
    pub topology_role: TopologyRole,
    /// For KMS uplinks: the node this channel connects to the mesh switch.
    pub node: Option<String>,
}

/// Fully resolved network description. Immutable after load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub nodes: Vec<Node>,
    pub odfs: Vec<Odf>,
    pub segments: Vec<FibreSegment>,
    pub links: Vec<QuantumLink>,
    pub classical_channels: Vec<ClassicalChannel>,
    /// Node ids in anti-clockwise traversal order.
    pub ring_order: Vec<String>,
    /// Insertion loss charged per circulator hop, dB.
    pub circulator_insertion_db: f64,
}

// ---------------------------------------------------------------------------
// Configuration document schema
// ---------------------------------------------------------------------------

fn default_true() -> bool {
    true
}

fn default_fibre_loss() -> f64 {
    DEFAULT_FIBRE_LOSS_DB_PER_KM
}

fn default_circulator_loss() -> f64 {
    DEFAULT_CIRCULATOR_INSERTION_DB
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TopologyDoc {
    /// Free-form provenance notes (e.g. which losses are placeholders).
    #[serde(default)]
    #[allow(dead_code)]
    notes: Option<String>,
    nodes: Vec<NodeDoc>,
    odfs: Vec<OdfDoc>,
    segments: Vec<SegmentDoc>,
    quantum_links: Vec<LinkDoc>,
    classical_channels: Vec<ChannelDoc>,
    defaults: DefaultsDoc,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeDoc {
    id: String,
    #[serde(default = "default_true")]
    has_transmitter: bool,
    #[serde(default = "default_true")]
    has_receiver: bool,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct OdfDoc {
    id: String,
    role: OdfRole,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SegmentDoc {
    id: String,
    endpoint_a: String,
    endpoint_b: String,
    #[serde(default)]
    length_km: Option<f64>,
    #[serde(default)]
    loss_db: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    id: String,
    tx: String,
    rx: String,
    segments: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ChannelDoc {
    id: String,
    purpose: ChannelPurpose,
    wavelength: String,
    topology_role: TopologyRole,
    #[serde(default)]
    node: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct DefaultsDoc {
    #[serde(default = "default_fibre_loss")]
    fibre_loss_db_per_km: f64,
    #[serde(default = "default_circulator_loss")]
    circulator_insertion_db: f64,
    ring_order: Vec<String>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SiteKind {
    Node,
    Odf,
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

/// Parses and resolves a configuration document without gating on network
/// invariants. Schema errors, unknown references, broken paths and
/// unresolvable losses are rejected here; ring/wavelength/mesh rules are
/// left to [`validate`].
pub fn parse_topology(document: &str) -> Result<NetworkTopology, TopologyError> {
    let doc: TopologyDoc = serde_json::from_str(document).map_err(|e| TopologyError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    resolve(doc)
}

/// Loads a topology and accepts it only if [`validate`] finds nothing.
pub fn load_topology(document: &str) -> Result<NetworkTopology, TopologyError> {
    let topo = parse_topology(document)?;
    match validate(&topo).into_iter().next() {
        None => Ok(topo),
        Some(d) => Err(TopologyError::Invariant(d)),
    }
}

/// [`load_topology`] for a file on disk.
pub fn load_topology_file(path: &Path) -> Result<NetworkTopology, TopologyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    load_topology(&text)
}

fn resolve(doc: TopologyDoc) -> Result<NetworkTopology, TopologyError> {
    // Sites (nodes and ODFs) share one id namespace.
    let mut sites: BTreeMap<&str, SiteKind> = BTreeMap::new();
    for n in &doc.nodes {
        if sites.insert(&n.id, SiteKind::Node).is_some() {
            return Err(TopologyError::DuplicateId { id: n.id.clone() });
        }
    }
    for o in &doc.odfs {
        if sites.insert(&o.id, SiteKind::Odf).is_some() {
            return Err(TopologyError::DuplicateId { id: o.id.clone() });
        }
    }
    let odf_role: BTreeMap<&str, OdfRole> = doc.odfs.iter().map(|o| (o.id.as_str(), o.role)).collect();

    if doc.defaults.fibre_loss_db_per_km < 0.0 || !doc.defaults.fibre_loss_db_per_km.is_finite() {
        return Err(TopologyError::BadValue {
            element: "defaults".into(),
            detail: format!(
                "fibre_loss_db_per_km must be finite and >= 0, got {}",
                doc.defaults.fibre_loss_db_per_km
            ),
        });
    }
    if doc.defaults.circulator_insertion_db < 0.0 || !doc.defaults.circulator_insertion_db.is_finite()
    {
        return Err(TopologyError::BadValue {
            element: "defaults".into(),
            detail: format!(
                "circulator_insertion_db must be finite and >= 0, got {}",
                doc.defaults.circulator_insertion_db
            ),
        });
    }

    // The declared ring order must be a permutation of the node set.
    let mut seen_ring: BTreeMap<&str, ()> = BTreeMap::new();
    for id in &doc.defaults.ring_order {
        match sites.get(id.as_str()) {
            Some(SiteKind::Node) => {}
            _ => {
                return Err(TopologyError::UnknownSite {
                    element: "defaults.ring_order".into(),
                    reference: id.clone(),
                })
            }
        }
        if seen_ring.insert(id, ()).is_some() {
            return Err(TopologyError::BadValue {
                element: "defaults.ring_order".into(),
                detail: format!("node {id} listed twice"),
            });
        }
    }
    if seen_ring.len() != doc.nodes.len() {
        return Err(TopologyError::BadValue {
            element: "defaults.ring_order".into(),
            detail: format!(
                "ring order lists {} of {} nodes",
                seen_ring.len(),
                doc.nodes.len()
            ),
        });
    }

    // Segments: resolve losses, check endpoints.
    let mut segments = Vec::with_capacity(doc.segments.len());
    let mut seg_index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, s) in doc.segments.iter().enumerate() {
        if seg_index.insert(&s.id, i).is_some() {
            return Err(TopologyError::DuplicateId { id: s.id.clone() });
        }
        for endpoint in [&s.endpoint_a, &s.endpoint_b] {
            if !sites.contains_key(endpoint.as_str()) {
                return Err(TopologyError::UnknownSite {
                    element: format!("segment {}", s.id),
                    reference: endpoint.clone(),
                });
            }
        }
        if s.endpoint_a == s.endpoint_b {
            return Err(TopologyError::BadValue {
                element: format!("segment {}", s.id),
                detail: "endpoints must differ".into(),
            });
        }
        for (name, v) in [("length_km", s.length_km), ("loss_db", s.loss_db)] {
            if let Some(v) = v {
                if !v.is_finite() || v < 0.0 {
                    return Err(TopologyError::BadValue {
                        element: format!("segment {}", s.id),
                        detail: format!("{name} must be finite and >= 0, got {v}"),
                    });
                }
            }
        }
        let loss_db = match (s.loss_db, s.length_km) {
            (Some(l), _) => l,
            (None, Some(km)) => km * doc.defaults.fibre_loss_db_per_km,
            (None, None) => {
                return Err(TopologyError::MissingLoss {
                    segment: s.id.clone(),
                })
            }
        };
        segments.push(FibreSegment {
            id: s.id.clone(),
            endpoint_a: s.endpoint_a.clone(),
            endpoint_b: s.endpoint_b.clone(),
            length_km: s.length_km,
            loss_db,
            quantum_occupancy: Vec::new(),
        });
    }

    // Quantum links: walk each path, derive hops, budget and occupancy.
    let mut links = Vec::with_capacity(doc.quantum_links.len());
    let mut link_ids: BTreeMap<&str, ()> = BTreeMap::new();
    for l in &doc.quantum_links {
        if link_ids.insert(&l.id, ()).is_some() {
            return Err(TopologyError::DuplicateId { id: l.id.clone() });
        }
        for (what, site) in [("transmitter", &l.tx), ("receiver", &l.rx)] {
            match sites.get(site.as_str()) {
                Some(SiteKind::Node) => {}
                _ => {
                    return Err(TopologyError::UnknownSite {
                        element: format!("link {} {what}", l.id),
                        reference: site.clone(),
                    })
                }
            }
        }
        if l.segments.is_empty() {
            return Err(TopologyError::BadValue {
                element: format!("link {}", l.id),
                detail: "path has no segments".into(),
            });
        }
        let mut path = Vec::with_capacity(l.segments.len());
        let mut hops = 1u32; // launch circulator at the transmitter
        let mut loss = 0.0f64;
        let mut at = l.tx.clone();
        for seg_id in &l.segments {
            let &i = seg_index
                .get(seg_id.as_str())
                .ok_or_else(|| TopologyError::UnknownSite {
                    element: format!("link {}", l.id),
                    reference: seg_id.clone(),
                })?;
            let seg = &mut segments[i];
            let (to, dir) = if seg.endpoint_a == at {
                (seg.endpoint_b.clone(), SegmentDirection::AToB)
            } else if seg.endpoint_b == at {
                (seg.endpoint_a.clone(), SegmentDirection::BToA)
            } else {
                return Err(TopologyError::DiscontinuousPath {
                    link: l.id.clone(),
                    segment: seg_id.clone(),
                    at,
                });
            };
            let circulator_hop = match sites.get(to.as_str()) {
                Some(SiteKind::Node) => true,
                Some(SiteKind::Odf) => odf_role[to.as_str()] != OdfRole::Passive,
                None => unreachable!("segment endpoints were checked"),
            };
            if circulator_hop {
                hops += 1;
            }
            loss += seg.loss_db;
            seg.quantum_occupancy.push((l.id.clone(), dir));
            path.push(PathEntry {
                segment: seg_id.clone(),
                from: at.clone(),
                to: to.clone(),
                circulator_hop,
            });
            at = to;
        }
        if at != l.rx {
            return Err(TopologyError::PathEndpointMismatch {
                link: l.id.clone(),
                got: at,
                expected: l.rx.clone(),
            });
        }
        loss += f64::from(hops) * doc.defaults.circulator_insertion_db;
        links.push(QuantumLink {
            id: l.id.clone(),
            tx_node: l.tx.clone(),
            rx_node: l.rx.clone(),
            path,
            circulator_hops: hops,
            total_loss_db: loss,
        });
    }

    // Classical channels: KMS uplinks name their node, ring signals do not.
    let mut channels = Vec::with_capacity(doc.classical_channels.len());
    let mut channel_ids: BTreeMap<&str, ()> = BTreeMap::new();
    for c in &doc.classical_channels {
        if channel_ids.insert(&c.id, ()).is_some() {
            return Err(TopologyError::DuplicateId { id: c.id.clone() });
        }
        match (c.purpose, &c.node) {
            (ChannelPurpose::Kms, Some(node)) => match sites.get(node.as_str()) {
                Some(SiteKind::Node) => {}
                _ => {
                    return Err(TopologyError::UnknownSite {
                        element: format!("channel {}", c.id),
                        reference: node.clone(),
                    })
                }
            },
            (ChannelPurpose::Kms, None) => {
                return Err(TopologyError::BadValue {
                    element: format!("channel {}", c.id),
                    detail: "kms channels must name their node".into(),
                })
            }
            (_, Some(_)) => {
                return Err(TopologyError::BadValue {
                    element: format!("channel {}", c.id),
                    detail: "only kms channels carry a node field".into(),
                })
            }
            (_, None) => {}
        }
        channels.push(ClassicalChannel {
            id: c.id.clone(),
            purpose: c.purpose,
            wavelength: c.wavelength.clone(),
            topology_role: c.topology_role,
            node: c.node.clone(),
        });
    }

    Ok(NetworkTopology {
        nodes: doc
            .nodes
            .iter()
            .map(|n| Node {
                id: n.id.clone(),
                has_transmitter: n.has_transmitter,
                has_receiver: n.has_receiver,
            })
            .collect(),
        odfs: doc
            .odfs
            .iter()
            .map(|o| Odf {
                id: o.id.clone(),
                role: o.role,
            })
            .collect(),
        segments,
        links,
        classical_channels: channels,
        ring_order: doc.defaults.ring_order,
        circulator_insertion_db: doc.defaults.circulator_insertion_db,
    })
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

impl NetworkTopology {
    /// Position of a node in the anti-clockwise ring order.
    fn ring_index(&self, node: &str) -> Option<usize> {
        self.ring_order.iter().position(|n| n == node)
    }

    /// The anti-clockwise neighbour of a node.
    pub fn ring_successor(&self, node: &str) -> Option<&str> {
        let i = self.ring_index(node)?;
        Some(self.ring_order[(i + 1) % self.ring_order.len()].as_str())
    }

    /// Hop count along the anti-clockwise arc from `from` to `to`.
    pub fn ring_distance(&self, from: &str, to: &str) -> Option<usize> {
        let a = self.ring_index(from)?;
        let b = self.ring_index(to)?;
        let n = self.ring_order.len();
        Some((b + n - a) % n)
    }

    /// The quantum link transmitting from `tx`, if any.
    pub fn link_from(&self, tx: &str) -> Option<&QuantumLink> {
        self.links.iter().find(|l| l.tx_node == tx)
    }

    /// Recomputes a link's budget from the segment table.
    pub fn recompute_loss(&self, link: &QuantumLink) -> f64 {
        let seg_loss: f64 = link
            .path
            .iter()
            .map(|e| {
                self.segments
                    .iter()
                    .find(|s| s.id == e.segment)
                    .map_or(f64::NAN, |s| s.loss_db)
            })
            .sum();
        seg_loss + f64::from(link.circulator_hops) * self.circulator_insertion_db
    }
}

/// Checks every network invariant and returns one diagnostic per violation.
/// An empty result means the topology is sound.
pub fn validate(topo: &NetworkTopology) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<Diagnostic>, rule: Rule, element: &str, message: String| {
        out.push(Diagnostic {
            rule,
            element: element.to_string(),
            message,
        });
    };

    // Direction: rx must be the anti-clockwise successor of tx.
    for l in &topo.links {
        match topo.ring_successor(&l.tx_node) {
            Some(succ) if succ == l.rx_node => {}
            Some(succ) => push(
                &mut out,
                Rule::Direction,
                &l.id,
                format!(
                    "runs {} -> {} but the anti-clockwise neighbour of {} is {}",
                    l.tx_node, l.rx_node, l.tx_node, succ
                ),
            ),
            None => push(
                &mut out,
                Rule::Direction,
                &l.id,
                format!("transmitter {} is not on the ring", l.tx_node),
            ),
        }
    }

    // Ring cover: every node exactly once as tx and once as rx.
    for node in &topo.nodes {
        let tx_count = topo.links.iter().filter(|l| l.tx_node == node.id).count();
        let rx_count = topo.links.iter().filter(|l| l.rx_node == node.id).count();
        if tx_count != 1 || rx_count != 1 {
            push(
                &mut out,
                Rule::RingCover,
                &node.id,
                format!("appears {tx_count} times as transmitter and {rx_count} as receiver (want 1 and 1)"),
            );
        }
    }
    if topo.links.len() != topo.nodes.len() {
        push(
            &mut out,
            Rule::RingCover,
            "quantum_links",
            format!(
                "{} links for {} nodes; a single ring needs one per node",
                topo.links.len(),
                topo.nodes.len()
            ),
        );
    }

    // Equipment: endpoints need their hardware.
    for l in &topo.links {
        if let Some(n) = topo.nodes.iter().find(|n| n.id == l.tx_node) {
            if !n.has_transmitter {
                push(
                    &mut out,
                    Rule::Equipment,
                    &l.id,
                    format!("transmitter node {} has no QKD transmitter", n.id),
                );
            }
        }
        if let Some(n) = topo.nodes.iter().find(|n| n.id == l.rx_node) {
            if !n.has_receiver {
                push(
                    &mut out,
                    Rule::Equipment,
                    &l.id,
                    format!("receiver node {} has no QKD receiver", n.id),
                );
            }
        }
    }

    // Segment pairing: one segment pair per site pair.
    let mut pairs: BTreeMap<(String, String), &str> = BTreeMap::new();
    for s in &topo.segments {
        let key = if s.endpoint_a <= s.endpoint_b {
            (s.endpoint_a.clone(), s.endpoint_b.clone())
        } else {
            (s.endpoint_b.clone(), s.endpoint_a.clone())
        };
        if let Some(prior) = pairs.insert(key, &s.id) {
            push(
                &mut out,
                Rule::SegmentPairing,
                &s.id,
                format!(
                    "second segment between {} and {} (first: {prior})",
                    s.endpoint_a, s.endpoint_b
                ),
            );
        }
    }

    // Occupancy: at most two signals per segment, opposing directions.
    for s in &topo.segments {
        let n = s.quantum_occupancy.len();
        if n > 2 {
            push(
                &mut out,
                Rule::SegmentOccupancy,
                &s.id,
                format!("carries {n} quantum signals; a fibre supports at most 2"),
            );
        } else if n == 2 && s.quantum_occupancy[0].1 == s.quantum_occupancy[1].1 {
            push(
                &mut out,
                Rule::SegmentOccupancy,
                &s.id,
                format!(
                    "links {} and {} run in the same direction",
                    s.quantum_occupancy[0].0, s.quantum_occupancy[1].0
                ),
            );
        }
    }

    // Loss consistency: stored budget equals recomputation.
    for l in &topo.links {
        let want = topo.recompute_loss(l);
        if !(l.total_loss_db - want).abs().is_finite() || (l.total_loss_db - want).abs() > 1e-9 {
            push(
                &mut out,
                Rule::LossConsistency,
                &l.id,
                format!("stored {} dB, segment table gives {} dB", l.total_loss_db, want),
            );
        }
    }

    // Wavelength budget and uniqueness.
    let mut by_wavelength: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for c in &topo.classical_channels {
        by_wavelength
            .entry(c.wavelength.as_str())
            .or_default()
            .push(c.id.as_str());
    }
    if by_wavelength.len() > MAX_WAVELENGTHS {
        push(
            &mut out,
            Rule::WavelengthBudget,
            "classical_channels",
            format!(
                "{} distinct wavelengths exceed the budget of {MAX_WAVELENGTHS}",
                by_wavelength.len()
            ),
        );
    }
    for (wl, users) in &by_wavelength {
        if users.len() > 1 {
            push(
                &mut out,
                Rule::WavelengthUniqueness,
                wl,
                format!("assigned to {} signals: {}", users.len(), users.join(", ")),
            );
        }
    }

    // Channel roles: kms rides the mesh, sync and encryption ride the ring;
    // exactly one sync signal mirrors the quantum ring.
    for c in &topo.classical_channels {
        let want = match c.purpose {
            ChannelPurpose::Kms => TopologyRole::Mesh,
            ChannelPurpose::Sync | ChannelPurpose::Encryption => TopologyRole::Ring,
        };
        if c.topology_role != want {
            push(
                &mut out,
                Rule::ChannelRole,
                &c.id,
                format!("{:?} channel must use the {:?} topology", c.purpose, want),
            );
        }
    }
    let sync_count = topo
        .classical_channels
        .iter()
        .filter(|c| c.purpose == ChannelPurpose::Sync)
        .count();
    if sync_count != 1 {
        push(
            &mut out,
            Rule::ChannelRole,
            "classical_channels",
            format!("{sync_count} sync channels; the ring carries exactly one"),
        );
    }

    // KMS mesh: every node has exactly one uplink to the mesh switch.
    for node in &topo.nodes {
        let uplinks = topo
            .classical_channels
            .iter()
            .filter(|c| c.purpose == ChannelPurpose::Kms && c.node.as_deref() == Some(&node.id))
            .count();
        if uplinks != 1 {
            push(
                &mut out,
                Rule::KmsMesh,
                &node.id,
                format!("{uplinks} KMS uplinks; the full mesh needs exactly one per node"),
            );
        }
    }

    out
}

/// The direct quantum link from `tx` to `rx`.
///
/// Only ring-adjacent requests in the anti-clockwise direction resolve;
/// clockwise requests and non-adjacent pairs fail with distinct errors.
pub fn quantum_path<'a>(
    topo: &'a NetworkTopology,
    tx: &str,
    rx: &str,
) -> Result<&'a QuantumLink, TopologyError> {
    for (what, node) in [("transmitter", tx), ("receiver", rx)] {
        if topo.ring_index(node).is_none() {
            return Err(TopologyError::UnknownSite {
                element: format!("quantum_path {what}"),
                reference: node.to_string(),
            });
        }
    }
    match topo.ring_distance(tx, rx) {
        Some(1) => topo
            .link_from(tx)
            .filter(|l| l.rx_node == rx)
            .ok_or_else(|| TopologyError::NotADirectLink {
                tx: tx.to_string(),
                rx: rx.to_string(),
            }),
        Some(d) if d + 1 == topo.ring_order.len() => Err(TopologyError::WrongDirection {
            tx: tx.to_string(),
            rx: rx.to_string(),
        }),
        _ => Err(TopologyError::NotADirectLink {
            tx: tx.to_string(),
            rx: rx.to_string(),
        }),
    }
}
