//! Key management: per-pair key stores, trusted-node relay and consumers.
//!
//! Every adjacent node pair of the ring shares one [`KeyStore`] fed by the
//! quantum layer's deposits. Key material is held lazily: a deposit records
//! a generator seed and a bit length, and bytes are derived on consumption
//! by random access into the generator stream, so multi-day runs do not
//! materialize gigabits of key.
//!
//! Non-adjacent pairs obtain keys by trusted-node relay along the shorter
//! ring arc (ties go anti-clockwise): the source draws an end-to-end key
//! and forwards it hop by hop, one-time-pad encrypted under each hop's
//! stored key. Hop keys are reserved two-phase across the whole chain
//! before any bit is consumed, so a depleted store aborts the relay with
//! every balance unchanged.
//!
//! [`run_consumers`] replays encryptor rekey schedules against the stores
//! and reports per-pair demand against supply, with a time-to-depletion
//! projection where demand wins. [`service`] exposes the delivery
//! interface as a JSON-lines protocol.

pub mod service;

use crate::simnet::KeyDeposit;
use crate::topology::NetworkTopology;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::Arc;
use thiserror::Error;

/// Errors raised by the key-management layer.
#[derive(Debug, Error)]
pub enum KmsError {
    /// A store cannot cover the requested bits.
    #[error("store {a}-{b} depleted: requested {requested} bits, {available} available")]
    Depleted {
        a: String,
        b: String,
        requested: u64,
        available: u64,
    },
    /// The named node is not part of the network.
    #[error("unknown node {node}")]
    UnknownNode { node: String },
    /// The key id is not pending collection.
    #[error("unknown or already collected key id {key_id}")]
    UnknownKeyId { key_id: String },
    /// The request is structurally invalid.
    #[error("bad request: {detail}")]
    BadRequest { detail: String },
}

/// Lifecycle of a stored key block. Transitions only move forward:
/// available to reserved to consumed. An aborted reservation retires the
/// reserved block and issues a fresh available block with the same
/// material, so no id ever steps backwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockStatus {
    Available,
    Reserved,
    Consumed,
}

/// Where a block's bits come from.
#[derive(Debug, Clone)]
enum MaterialRef {
    /// Bits of the keyed generator stream, read on demand.
    Seed(u64),
    /// Literal bytes (tests, externally supplied material).
    Bytes(Arc<[u8]>),
}

/// Extracts `bits` bits starting at `src_off` (MSB-first indexing) into a
/// fresh buffer, zero-padding the trailing byte.
fn copy_bits(src: &[u8], src_off: u64, bits: u64) -> Vec<u8> {
    let mut out = vec![0u8; bits.div_ceil(8) as usize];
    for i in 0..bits {
        let s = src_off + i;
        let bit = (src[(s / 8) as usize] >> (7 - (s % 8) as u32)) & 1;
        out[(i / 8) as usize] |= bit << (7 - (i % 8) as u32);
    }
    out
}

impl MaterialRef {
    /// Bits `[bit_offset, bit_offset + bits)` of this material.
    ///
    /// The seeded variant seeks the generator directly to the containing
    /// word, so access cost scales with the slice, not the offset.
    fn extract(&self, bit_offset: u64, bits: u64) -> Vec<u8> {
        match self {
            MaterialRef::Bytes(bytes) => copy_bits(bytes, bit_offset, bits),
            MaterialRef::Seed(seed) => {
                let byte_start = bit_offset / 8;
                let bit_in = bit_offset % 8;
                let need = (bit_in + bits).div_ceil(8) as usize;
                let skip = (byte_start % 4) as usize;
                let mut rng = ChaCha12Rng::seed_from_u64(*seed);
                rng.set_word_pos(u128::from(byte_start / 4));
                let mut raw = vec![0u8; skip + need];
                rng.fill_bytes(&mut raw);
                copy_bits(&raw[skip..], bit_in, bits)
            }
        }
    }
}

/// One contiguous run of stored key bits.
#[derive(Debug, Clone)]
pub struct KeyBlock {
    pub id: u64,
    pub bits: u64,
    pub status: BlockStatus,
    material: MaterialRef,
    bit_offset: u64,
}

/// A two-phase hold on store bits: commit consumes them, release reissues
/// them as fresh available blocks.
#[derive(Debug, Clone)]
pub struct Reservation {
    block_ids: Vec<u64>,
    pub bits: u64,
}

/// The shared key store of one adjacent node pair.
#[derive(Debug, Clone)]
pub struct KeyStore {
    /// The two nodes, lexicographically ordered.
    pub pair: (String, String),
    blocks: Vec<KeyBlock>,
    next_block_id: u64,
    available_bits: u64,
    reserved_bits: u64,
    deposited_bits: u64,
    consumed_bits: u64,
}

impl KeyStore {
    pub fn new(a: &str, b: &str) -> Self {
        let pair = if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        };
        Self {
            pair,
            blocks: Vec::new(),
            next_block_id: 0,
            available_bits: 0,
            reserved_bits: 0,
            deposited_bits: 0,
            consumed_bits: 0,
        }
    }

    pub fn available_bits(&self) -> u64 {
        self.available_bits
    }

    pub fn reserved_bits(&self) -> u64 {
        self.reserved_bits
    }

    pub fn deposited_bits(&self) -> u64 {
        self.deposited_bits
    }

    pub fn consumed_bits(&self) -> u64 {
        self.consumed_bits
    }

    /// Blocks in consumption order, oldest first.
    pub fn blocks(&self) -> &[KeyBlock] {
        &self.blocks
    }

    /// Checks the store's books against the block list. Deposited minus
    /// consumed bits must equal available plus reserved, exactly.
    pub fn conservation_holds(&self) -> bool {
        let avail: u64 = self
            .blocks
            .iter()
            .filter(|b| b.status == BlockStatus::Available)
            .map(|b| b.bits)
            .sum();
        let reserved: u64 = self
            .blocks
            .iter()
            .filter(|b| b.status == BlockStatus::Reserved)
            .map(|b| b.bits)
            .sum();
        avail == self.available_bits
            && reserved == self.reserved_bits
            && self.deposited_bits - self.consumed_bits == avail + reserved
    }

    fn push_block(&mut self, bits: u64, material: MaterialRef, bit_offset: u64) -> u64 {
        let id = self.next_block_id;
        self.next_block_id += 1;
        self.blocks.push(KeyBlock {
            id,
            bits,
            status: BlockStatus::Available,
            material,
            bit_offset,
        });
        self.available_bits += bits;
        id
    }

    fn deposit_ref(&mut self, bits: u64, material: MaterialRef) -> Result<u64, KmsError> {
        if bits == 0 {
            return Err(KmsError::BadRequest {
                detail: format!("zero-length deposit for store {}-{}", self.pair.0, self.pair.1),
            });
        }
        self.deposited_bits += bits;
        Ok(self.push_block(bits, material, 0))
    }

    /// Adds a block whose bits are derived lazily from `seed`.
    pub fn deposit(&mut self, bits: u64, seed: u64) -> Result<u64, KmsError> {
        self.deposit_ref(bits, MaterialRef::Seed(seed))
    }

    /// Adds a block with literal material (must cover `bits`).
    pub fn deposit_bytes(&mut self, bits: u64, material: Vec<u8>) -> Result<u64, KmsError> {
        if (material.len() as u64) * 8 < bits {
            return Err(KmsError::BadRequest {
                detail: format!("{} bytes cannot cover {bits} bits", material.len()),
            });
        }
        self.deposit_ref(bits, MaterialRef::Bytes(Arc::from(material)))
    }

    /// Places a two-phase hold on `bits` bits, splitting the oldest
    /// available block if it only partly fits.
    pub fn reserve(&mut self, bits: u64) -> Result<Reservation, KmsError> {
        if bits == 0 {
            return Err(KmsError::BadRequest {
                detail: "cannot reserve zero bits".into(),
            });
        }
        if self.available_bits < bits {
            return Err(KmsError::Depleted {
                a: self.pair.0.clone(),
                b: self.pair.1.clone(),
                requested: bits,
                available: self.available_bits,
            });
        }
        let mut need = bits;
        let mut block_ids = Vec::new();
        let mut i = 0usize;
        while need > 0 {
            while self.blocks[i].status != BlockStatus::Available {
                i += 1;
            }
            if self.blocks[i].bits <= need {
                self.blocks[i].status = BlockStatus::Reserved;
                need -= self.blocks[i].bits;
                block_ids.push(self.blocks[i].id);
                i += 1;
            } else {
                // Split: the front of the block is reserved, the remainder
                // re-enters the queue as a fresh block right behind it.
                let rest_bits = self.blocks[i].bits - need;
                let rest_offset = self.blocks[i].bit_offset + need;
                let material = self.blocks[i].material.clone();
                self.blocks[i].bits = need;
                self.blocks[i].status = BlockStatus::Reserved;
                block_ids.push(self.blocks[i].id);
                let id = self.next_block_id;
                self.next_block_id += 1;
                self.blocks.insert(
                    i + 1,
                    KeyBlock {
                        id,
                        bits: rest_bits,
                        status: BlockStatus::Available,
                        material,
                        bit_offset: rest_offset,
                    },
                );
                need = 0;
            }
        }
        self.available_bits -= bits;
        self.reserved_bits += bits;
        Ok(Reservation { block_ids, bits })
    }

    fn indexed(&mut self, id: u64) -> usize {
        self.blocks
            .iter()
            .position(|b| b.id == id)
            .expect("reservation ids refer to live blocks")
    }

    /// The bits a reservation holds, concatenated in reservation order.
    pub fn material_of(&self, r: &Reservation) -> Vec<u8> {
        let mut out = vec![0u8; r.bits.div_ceil(8) as usize];
        let mut at = 0u64;
        for id in &r.block_ids {
            let b = self
                .blocks
                .iter()
                .find(|b| b.id == *id)
                .expect("reservation ids refer to live blocks");
            let part = b.material.extract(b.bit_offset, b.bits);
            for i in 0..b.bits {
                let bit = (part[(i / 8) as usize] >> (7 - (i % 8) as u32)) & 1;
                out[(at / 8) as usize] |= bit << (7 - (at % 8) as u32);
                at += 1;
            }
        }
        out
    }

    /// Consumes a reservation; the bits are gone for good.
    pub fn commit(&mut self, r: &Reservation) {
        for id in &r.block_ids {
            let i = self.indexed(*id);
            debug_assert_eq!(self.blocks[i].status, BlockStatus::Reserved);
            self.blocks[i].status = BlockStatus::Consumed;
        }
        self.reserved_bits -= r.bits;
        self.consumed_bits += r.bits;
    }

    /// Aborts a reservation. Each reserved block is retired and its bits
    /// reissued under a fresh id, keeping per-id status transitions
    /// strictly forward.
    pub fn release(&mut self, r: &Reservation) {
        for id in &r.block_ids {
            let i = self.indexed(*id);
            debug_assert_eq!(self.blocks[i].status, BlockStatus::Reserved);
            let old = self.blocks.remove(i);
            let fresh = KeyBlock {
                id: self.next_block_id,
                bits: old.bits,
                status: BlockStatus::Available,
                material: old.material,
                bit_offset: old.bit_offset,
            };
            self.next_block_id += 1;
            self.blocks.insert(i, fresh);
        }
        self.reserved_bits -= r.bits;
        self.available_bits += r.bits;
    }
}

/// One hop of a relay on the wire: the end-to-end key one-time-padded
/// under this hop's store key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HopTransfer {
    pub from: String,
    pub to: String,
    pub payload: Vec<u8>,
}

/// Receipt of one key delivery.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayTicket {
    pub src: String,
    pub dst: String,
    /// Node chain the key travelled, source first.
    pub hop_chain: Vec<String>,
    pub key_id: String,
    pub size_bits: u64,
}

/// A delivered end-to-end key with its receipt and wire traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelayDelivery {
    pub ticket: RelayTicket,
    /// The end-to-end key, MSB-first, trailing byte zero-padded.
    pub material: Vec<u8>,
    /// One transfer per hop; empty when the pair is adjacent and the
    /// delivery degenerates to a direct store withdrawal.
    pub wire: Vec<HopTransfer>,
}

/// An encryptor pair's rekey schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConsumerProfile {
    pub src: String,
    pub dst: String,
    pub rekey_interval_s: f64,
    pub key_bits_per_rekey: u64,
}

/// Outcome of one pair's consumer schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub src: String,
    pub dst: String,
    /// Requested bits per second: bits per rekey over the interval.
    pub demand_bps: f64,
    /// Bits per second deposited into the route's bottleneck store during
    /// the run; zero when generation is disabled.
    pub supply_bps: f64,
    pub delivered_rekeys: u64,
    pub missed_rekeys: u64,
    /// Bits left in the route's tightest store when the run ended.
    pub bottleneck_available_bits: u64,
    /// How long the remaining stock lasts at the net drain rate; absent
    /// when supply keeps up with demand.
    pub projected_depletion_s: Option<f64>,
}

/// Report of [`run_consumers`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerReport {
    pub duration_s: f64,
    pub pairs: Vec<PairReport>,
}

/// A deposit stamped with the simulation time it became usable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimedDeposit {
    pub time_s: f64,
    pub deposit: KeyDeposit,
}

/// The network's key-management plane: one store per adjacent pair plus
/// the relay and delivery logic.
#[derive(Debug)]
pub struct KmsNetwork {
    ring_order: Vec<String>,
    stores: BTreeMap<(String, String), KeyStore>,
    /// Keys delivered to their requester and pending peer collection.
    pending: BTreeMap<String, RelayTicket>,
    pending_material: BTreeMap<String, Vec<u8>>,
    next_key: u64,
    rng: ChaCha12Rng,
}

fn sorted_pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

impl KmsNetwork {
    /// Builds the plane for an explicit ring order. The relay and material
    /// generators draw from stream 0 of the root seed; quantum links use
    /// the higher streams.
    pub fn with_ring(ring_order: Vec<String>, seed: u64) -> Self {
        let mut stores = BTreeMap::new();
        let n = ring_order.len();
        for i in 0..n {
            let a = &ring_order[i];
            let b = &ring_order[(i + 1) % n];
            if a != b {
                stores
                    .entry(sorted_pair(a, b))
                    .or_insert_with(|| KeyStore::new(a, b));
            }
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        rng.set_stream(0);
        Self {
            ring_order,
            stores,
            pending: BTreeMap::new(),
            pending_material: BTreeMap::new(),
            next_key: 0,
            rng,
        }
    }

    pub fn new(topo: &NetworkTopology, seed: u64) -> Self {
        Self::with_ring(topo.ring_order.clone(), seed)
    }

    pub fn ring_order(&self) -> &[String] {
        &self.ring_order
    }

    pub fn store(&self, a: &str, b: &str) -> Option<&KeyStore> {
        self.stores.get(&sorted_pair(a, b))
    }

    pub fn stores(&self) -> impl Iterator<Item = &KeyStore> {
        self.stores.values()
    }

    fn store_mut(&mut self, a: &str, b: &str) -> Result<&mut KeyStore, KmsError> {
        let pair = sorted_pair(a, b);
        self.stores
            .get_mut(&pair)
            .ok_or_else(|| KmsError::BadRequest {
                detail: format!("{} and {} are not adjacent; no shared store", pair.0, pair.1),
            })
    }

    fn node_index(&self, node: &str) -> Result<usize, KmsError> {
        self.ring_order
            .iter()
            .position(|n| n == node)
            .ok_or_else(|| KmsError::UnknownNode {
                node: node.to_string(),
            })
    }

    /// Files one quantum-layer deposit into its pair's store.
    pub fn ingest(&mut self, deposit: &KeyDeposit) -> Result<u64, KmsError> {
        self.node_index(&deposit.tx_node)?;
        self.node_index(&deposit.rx_node)?;
        self.store_mut(&deposit.tx_node, &deposit.rx_node)?
            .deposit(deposit.secret_bits, deposit.material_seed)
    }

    /// Files a batch of deposits in order.
    pub fn ingest_all(&mut self, deposits: &[KeyDeposit]) -> Result<(), KmsError> {
        for d in deposits {
            self.ingest(d)?;
        }
        Ok(())
    }

    /// The node chain a key takes from `src` to `dst`: the shorter ring
    /// arc, anti-clockwise when both arcs tie.
    pub fn route(&self, src: &str, dst: &str) -> Result<Vec<String>, KmsError> {
        let i = self.node_index(src)?;
        let j = self.node_index(dst)?;
        if i == j {
            return Err(KmsError::BadRequest {
                detail: format!("source and destination are both {src}"),
            });
        }
        let n = self.ring_order.len();
        let forward = (j + n - i) % n;
        let backward = n - forward;
        let mut chain = Vec::new();
        if forward <= backward {
            for s in 0..=forward {
                chain.push(self.ring_order[(i + s) % n].clone());
            }
        } else {
            for s in 0..=backward {
                chain.push(self.ring_order[(i + n - s) % n].clone());
            }
        }
        Ok(chain)
    }

    fn next_key_id(&mut self) -> String {
        let id = format!("{:016x}", self.next_key);
        self.next_key += 1;
        id
    }

    /// Delivers `size_bits` of key between any two nodes, relaying with the
    /// given end-to-end material. Adjacent pairs skip the relay entirely:
    /// the delivered key is the stored hop key itself and `material` is
    /// ignored in that case.
    ///
    /// All hop reservations are taken before any is consumed; a depleted
    /// hop aborts the whole delivery and releases every hold, leaving all
    /// balances as they were.
    pub fn relay_with_material(
        &mut self,
        src: &str,
        dst: &str,
        size_bits: u64,
        material: &[u8],
    ) -> Result<RelayDelivery, KmsError> {
        if size_bits == 0 {
            return Err(KmsError::BadRequest {
                detail: "cannot deliver a zero-bit key".into(),
            });
        }
        let chain = self.route(src, dst)?;

        if chain.len() == 2 {
            let store = self.store_mut(src, dst)?;
            let r = store.reserve(size_bits)?;
            let key = store.material_of(&r);
            store.commit(&r);
            let key_id = self.next_key_id();
            return Ok(RelayDelivery {
                ticket: RelayTicket {
                    src: src.to_string(),
                    dst: dst.to_string(),
                    hop_chain: chain,
                    key_id,
                    size_bits,
                },
                material: key,
                wire: Vec::new(),
            });
        }

        if (material.len() as u64) * 8 < size_bits {
            return Err(KmsError::BadRequest {
                detail: format!("{} bytes cannot cover {size_bits} bits", material.len()),
            });
        }

        // Phase one: hold every hop's bits or abort with nothing consumed.
        let mut holds: Vec<((String, String), Reservation)> = Vec::new();
        for hop in chain.windows(2) {
            let result = self
                .store_mut(&hop[0], &hop[1])
                .and_then(|s| s.reserve(size_bits));
            match result {
                Ok(r) => holds.push(((hop[0].clone(), hop[1].clone()), r)),
                Err(e) => {
                    for ((a, b), r) in &holds {
                        self.store_mut(a, b).expect("held store exists").release(r);
                    }
                    return Err(e);
                }
            }
        }

        // Phase two: consume the holds and pad the key for each hop.
        let byte_len = size_bits.div_ceil(8) as usize;
        let mut wire = Vec::with_capacity(holds.len());
        for ((a, b), r) in &holds {
            let store = self.store_mut(a, b).expect("held store exists");
            let hop_key = store.material_of(r);
            store.commit(r);
            let payload: Vec<u8> = material[..byte_len]
                .iter()
                .zip(hop_key.iter())
                .map(|(k, h)| k ^ h)
                .collect();
            wire.push(HopTransfer {
                from: a.clone(),
                to: b.clone(),
                payload,
            });
        }
        let key_id = self.next_key_id();
        Ok(RelayDelivery {
            ticket: RelayTicket {
                src: src.to_string(),
                dst: dst.to_string(),
                hop_chain: chain,
                key_id,
                size_bits,
            },
            material: material[..byte_len].to_vec(),
            wire,
        })
    }

    /// Delivers `size_bits` of fresh key between any two nodes, drawing the
    /// end-to-end material from the plane's own generator.
    pub fn request_key(
        &mut self,
        src: &str,
        dst: &str,
        size_bits: u64,
    ) -> Result<RelayDelivery, KmsError> {
        if size_bits == 0 {
            return Err(KmsError::BadRequest {
                detail: "cannot deliver a zero-bit key".into(),
            });
        }
        // Refuse before drawing material: an oversized request must fail as
        // depletion without allocating a key buffer it can never fill. The
        // first short hop in route order is the one a reservation would hit.
        for hop in self.route(src, dst)?.windows(2) {
            let store = self
                .store(&hop[0], &hop[1])
                .ok_or_else(|| KmsError::BadRequest {
                    detail: format!("{} and {} share no store", hop[0], hop[1]),
                })?;
            if store.available_bits() < size_bits {
                return Err(KmsError::Depleted {
                    a: store.pair.0.clone(),
                    b: store.pair.1.clone(),
                    requested: size_bits,
                    available: store.available_bits(),
                });
            }
        }
        // Material is drawn (and the generator advanced) even for adjacent
        // deliveries, keeping the draw sequence independent of store state.
        let mut material = vec![0u8; size_bits.div_ceil(8) as usize];
        self.rng.fill_bytes(&mut material);
        if !size_bits.is_multiple_of(8) {
            let keep = (size_bits % 8) as u32;
            *material.last_mut().expect("at least one byte") &= 0xffu8 << (8 - keep);
        }
        self.relay_with_material(src, dst, size_bits, &material)
    }

    /// Delivers a key and parks it for collection by the far end under its
    /// key id. Used by the service front-end.
    pub fn request_key_pending(
        &mut self,
        src: &str,
        dst: &str,
        size_bits: u64,
    ) -> Result<RelayDelivery, KmsError> {
        let delivery = self.request_key(src, dst, size_bits)?;
        self.pending
            .insert(delivery.ticket.key_id.clone(), delivery.ticket.clone());
        self.pending_material
            .insert(delivery.ticket.key_id.clone(), delivery.material.clone());
        Ok(delivery)
    }

    /// Collects a parked key by id. The key must belong to the given pair;
    /// collection is one-shot.
    pub fn collect_key(
        &mut self,
        node: &str,
        peer: &str,
        key_id: &str,
    ) -> Result<(RelayTicket, Vec<u8>), KmsError> {
        let ticket = self.pending.get(key_id).ok_or_else(|| KmsError::UnknownKeyId {
            key_id: key_id.to_string(),
        })?;
        if sorted_pair(&ticket.src, &ticket.dst) != sorted_pair(node, peer) {
            return Err(KmsError::BadRequest {
                detail: format!("key {key_id} does not belong to pair {node}-{peer}"),
            });
        }
        let ticket = self.pending.remove(key_id).expect("presence checked");
        let material = self
            .pending_material
            .remove(key_id)
            .expect("material parked with ticket");
        Ok((ticket, material))
    }

    /// Available bits at the tightest store along the pair's route.
    pub fn bottleneck_available(&self, src: &str, dst: &str) -> Result<u64, KmsError> {
        let chain = self.route(src, dst)?;
        Ok(chain
            .windows(2)
            .map(|hop| {
                self.store(&hop[0], &hop[1])
                    .map_or(0, KeyStore::available_bits)
            })
            .min()
            .unwrap_or(0))
    }

    /// Reserved bits at the tightest store along the pair's route.
    pub fn bottleneck_reserved(&self, src: &str, dst: &str) -> Result<u64, KmsError> {
        let chain = self.route(src, dst)?;
        Ok(chain
            .windows(2)
            .map(|hop| {
                self.store(&hop[0], &hop[1])
                    .map_or(0, KeyStore::reserved_bits)
            })
            .min()
            .unwrap_or(0))
    }
}

/// Replays rekey schedules against the stores for `duration_s` seconds.
///
/// Each profile requests `key_bits_per_rekey` at every multiple of its
/// interval inside the window. `generation` interleaves quantum-layer
/// deposits at their production times; pass an empty slice to run on the
/// standing stock alone. A depleted request counts as missed and the run
/// continues. A zero-length window reports nothing.
pub fn run_consumers(
    net: &mut KmsNetwork,
    profiles: &[ConsumerProfile],
    duration_s: f64,
    generation: &[TimedDeposit],
) -> Result<ConsumerReport, KmsError> {
    if !duration_s.is_finite() || duration_s < 0.0 {
        return Err(KmsError::BadRequest {
            detail: format!("duration must be finite and >= 0, got {duration_s}"),
        });
    }
    if duration_s == 0.0 {
        return Ok(ConsumerReport {
            duration_s,
            pairs: Vec::new(),
        });
    }
    for p in profiles {
        if p.rekey_interval_s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
            return Err(KmsError::BadRequest {
                detail: format!(
                    "{}-{}: rekey interval must be positive, got {}",
                    p.src, p.dst, p.rekey_interval_s
                ),
            });
        }
        if p.key_bits_per_rekey == 0 {
            return Err(KmsError::BadRequest {
                detail: format!("{}-{}: zero bits per rekey", p.src, p.dst),
            });
        }
        net.node_index(&p.src)?;
        net.node_index(&p.dst)?;
    }

    // Deposits land before requests due at the same instant.
    #[derive(Clone, Copy)]
    enum Event {
        Deposit(usize),
        Rekey(usize),
    }
    let mut events: Vec<(f64, u8, usize, Event)> = Vec::new();
    for (i, g) in generation.iter().enumerate() {
        if g.time_s <= duration_s {
            events.push((g.time_s, 0, i, Event::Deposit(i)));
        }
    }
    for (i, p) in profiles.iter().enumerate() {
        let mut k = 1u64;
        loop {
            let t = p.rekey_interval_s * k as f64;
            if t > duration_s {
                break;
            }
            events.push((t, 1, i, Event::Rekey(i)));
            k += 1;
        }
    }
    events.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });

    let mut delivered = vec![0u64; profiles.len()];
    let mut missed = vec![0u64; profiles.len()];
    for (_, _, _, ev) in events {
        match ev {
            Event::Deposit(i) => {
                net.ingest(&generation[i].deposit)?;
            }
            Event::Rekey(i) => {
                let p = &profiles[i];
                match net.request_key(&p.src, &p.dst, p.key_bits_per_rekey) {
                    Ok(_) => delivered[i] += 1,
                    Err(KmsError::Depleted { .. }) => missed[i] += 1,
                    Err(e) => return Err(e),
                }
            }
        }
    }

    let mut pairs = Vec::with_capacity(profiles.len());
    for (i, p) in profiles.iter().enumerate() {
        let demand_bps = p.key_bits_per_rekey as f64 / p.rekey_interval_s;
        let chain = net.route(&p.src, &p.dst)?;
        // The bottleneck is the tightest store at the end of the window;
        // supply is what the window deposited into that same store.
        let (bottleneck_pair, bottleneck_available) = chain
            .windows(2)
            .map(|hop| {
                let s = net.store(&hop[0], &hop[1]).expect("route uses ring stores");
                (s.pair.clone(), s.available_bits())
            })
            .min_by_key(|(_, avail)| *avail)
            .expect("route has at least one hop");
        let deposited: u64 = generation
            .iter()
            .filter(|g| {
                g.time_s <= duration_s
                    && sorted_pair(&g.deposit.tx_node, &g.deposit.rx_node) == bottleneck_pair
            })
            .map(|g| g.deposit.secret_bits)
            .sum();
        let supply_bps = deposited as f64 / duration_s;
        let net_drain = demand_bps - supply_bps;
        let projected_depletion_s = if net_drain > 0.0 {
            Some(bottleneck_available as f64 / net_drain)
        } else {
            None
        };
        pairs.push(PairReport {
            src: p.src.clone(),
            dst: p.dst.clone(),
            demand_bps,
            supply_bps,
            delivered_rekeys: delivered[i],
            missed_rekeys: missed[i],
            bottleneck_available_bits: bottleneck_available,
            projected_depletion_s,
        });
    }
    Ok(ConsumerReport {
        duration_s,
        pairs,
    })
}

/// Lowercase hex of a byte string.
pub fn to_hex(bytes: &[u8]) -> String {
    use std::fmt::Write;
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        write!(s, "{b:02x}").expect("writing to a string cannot fail");
    }
    s
}
