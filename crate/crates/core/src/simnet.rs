//! Stochastic block-by-block simulation of the quantum layer.
//!
//! [`sample_block`] draws one accumulation block's sifted and error counts
//! from the analytic expectations: detections are binomial over the pulses
//! sent at each intensity, and errors are binomial over the detections they
//! landed in, so `m <= n` holds cell by cell. [`run_link`] strings blocks
//! along the time axis, letting the detector efficiency drift slowly between
//! blocks, and distils each block into a time-series point plus a key
//! deposit for the KMS layer. [`run_network`] does this for every quantum
//! link of a topology under one root seed.
//!
//! Determinism: every sample derives from the root seed through a fixed
//! scheme. Links are ordered by id; link `i` draws from stream `i + 1` of a
//! counter-based generator seeded with the root seed (stream 0 is reserved
//! for key-management randomness). Within a block the draw order is fixed:
//! one drift deviate, eight count cells, one material seed. Equal seeds give
//! byte-identical runs; unequal seeds decorrelate immediately.

use crate::keyrate::{secret_key_length, BlockCounts, KeyRateError};
use crate::linkmodel::{expected_block, ChannelState, ExpectedBlockStats, ProtocolParams};
use crate::topology::{NetworkTopology, QuantumLink};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by the simulation layer.
#[derive(Debug, Error)]
pub enum SimError {
    /// Simulated spans must be positive and finite.
    #[error("duration must be positive and finite, got {value}")]
    BadDuration { value: f64 },
    /// The underlying link physics rejected the inputs.
    #[error(transparent)]
    Link(#[from] crate::linkmodel::LinkError),
    /// Key distillation rejected a sampled block.
    #[error(transparent)]
    KeyRate(#[from] KeyRateError),
}

/// Slow multiplicative drift applied to the detector efficiency between
/// blocks. The factor is `1 + skr_jitter_rel * z` with standard normal `z`,
/// floored at 0.05 so a tail draw cannot kill the detector outright.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceNoise {
    pub skr_jitter_rel: f64,
}

impl Default for DeviceNoise {
    fn default() -> Self {
        Self {
            skr_jitter_rel: 0.08,
        }
    }
}

impl DeviceNoise {
    /// Noise-free configuration: every block sees the nominal detector.
    pub fn none() -> Self {
        Self {
            skr_jitter_rel: 0.0,
        }
    }

    fn draw_factor(&self, rng: &mut impl Rng) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        (1.0 + self.skr_jitter_rel * z).max(0.05)
    }
}

/// One sampled accumulation block with its place on the time axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservedBlockStats {
    pub link_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub counts: BlockCounts,
}

/// One distilled point of a link's time series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPoint {
    /// Block end time, seconds from run start. Strictly increasing.
    pub timestamp_s: f64,
    /// Secret bits of the block divided by its wall-clock span.
    pub skr_bps: f64,
    /// Observed key-basis error rate of the block.
    pub qber: f64,
    /// Secret bits distilled from the block.
    pub secret_bits: u64,
}

/// The distilled history of one quantum link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkTimeSeries {
    pub link_id: String,
    pub loss_db: f64,
    pub points: Vec<TimeSeriesPoint>,
}

/// Key material produced by one block, addressed to the link's node pair.
/// Material bits are derived lazily from the seed when the KMS needs them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyDeposit {
    pub link_id: String,
    pub tx_node: String,
    pub rx_node: String,
    pub block_index: u64,
    pub secret_bits: u64,
    pub material_seed: u64,
}

/// Everything one simulated span produces for one link.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkRun {
    pub observed: Vec<ObservedBlockStats>,
    pub series: LinkTimeSeries,
    pub deposits: Vec<KeyDeposit>,
}

/// Everything one simulated span produces network-wide. Deposits are
/// ordered by (link id, block index).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkRun {
    pub series: Vec<LinkTimeSeries>,
    pub deposits: Vec<KeyDeposit>,
}

fn binomial_draw(trials: f64, p: f64, rng: &mut impl Rng) -> f64 {
    let n = trials.round().max(0.0) as u64;
    if n == 0 {
        return 0.0;
    }
    let p = p.clamp(0.0, 1.0);
    let d = Binomial::new(n, p).expect("clamped probability");
    d.sample(rng) as f64
}

/// Draws one block's counts from its analytic expectations.
///
/// For each basis and intensity the detections are binomial over the sifted
/// pulse budget with the success probability that reproduces the analytic
/// mean; errors are then binomial over those detections with the
/// per-intensity error rate, so every error count is conditioned on its
/// detection count and `m <= n` holds by construction.
pub fn sample_block(
    params: &ProtocolParams,
    expected: &ExpectedBlockStats,
    rng: &mut impl Rng,
) -> BlockCounts {
    let mut cells = [[0.0f64; 2]; 4]; // [n_z, n_x, m_z, m_x] by intensity
    for (k, &pulses) in expected.n_pulses_by_intensity.iter().enumerate() {
        for (b, sift, n_exp, m_exp) in [
            (0, params.sift_z(), expected.n_z_by_intensity[k], expected.m_z_by_intensity[k]),
            (1, params.sift_x(), expected.n_x_by_intensity[k], expected.m_x_by_intensity[k]),
        ] {
            let trials = (pulses * sift).round();
            let p_det = if trials > 0.0 { n_exp / trials } else { 0.0 };
            let n = binomial_draw(trials, p_det, rng);
            let e_rate = if n_exp > 0.0 { m_exp / n_exp } else { 0.0 };
            let m = binomial_draw(n, e_rate, rng);
            cells[b][k] = n;
            cells[b + 2][k] = m;
        }
    }
    BlockCounts {
        params: params.clone(),
        n_z_mu1: cells[0][0],
        n_z_mu2: cells[0][1],
        n_x_mu1: cells[1][0],
        n_x_mu2: cells[1][1],
        m_z_mu1: cells[2][0],
        m_z_mu2: cells[2][1],
        m_x_mu1: cells[3][0],
        m_x_mu2: cells[3][1],
    }
}

/// Simulates one link for `duration_s` seconds of wall-clock time.
///
/// The time axis is partitioned into accumulation blocks, each spanning the
/// time the (drifted) link needs to collect `block_size_nz` expected
/// key-basis detections; a trailing span too short for a full block is
/// dropped, since no privacy amplification can run on it. Each block yields
/// one time-series point and, when it distils any secret bits, one deposit.
pub fn run_link(
    params: &ProtocolParams,
    link: &QuantumLink,
    noise: &DeviceNoise,
    duration_s: f64,
    rng: &mut impl Rng,
) -> Result<LinkRun, SimError> {
    if duration_s.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater)
        || !duration_s.is_finite()
    {
        return Err(SimError::BadDuration { value: duration_s });
    }
    params.validate().map_err(SimError::Link)?;
    let channel = ChannelState::new(link.total_loss_db)?;

    let mut observed = Vec::new();
    let mut points = Vec::new();
    let mut deposits = Vec::new();
    let mut t = 0.0f64;
    let mut block_index = 0u64;
    loop {
        let factor = noise.draw_factor(rng);
        let drifted = ProtocolParams {
            det_efficiency: params.det_efficiency * factor,
            ..params.clone()
        };
        let expected = expected_block(&drifted, &channel)?;
        let end = t + expected.duration_s;
        if end > duration_s {
            break;
        }
        let counts = sample_block(&drifted, &expected, rng);
        let material_seed: u64 = rng.random();
        let result = secret_key_length(&counts)?;
        points.push(TimeSeriesPoint {
            timestamp_s: end,
            skr_bps: result.secret_bits as f64 / expected.duration_s,
            qber: counts.qber_z(),
            secret_bits: result.secret_bits,
        });
        if result.secret_bits > 0 {
            deposits.push(KeyDeposit {
                link_id: link.id.clone(),
                tx_node: link.tx_node.clone(),
                rx_node: link.rx_node.clone(),
                block_index,
                secret_bits: result.secret_bits,
                material_seed,
            });
        }
        observed.push(ObservedBlockStats {
            link_id: link.id.clone(),
            start_s: t,
            end_s: end,
            counts,
        });
        t = end;
        block_index += 1;
    }
    Ok(LinkRun {
        observed,
        series: LinkTimeSeries {
            link_id: link.id.clone(),
            loss_db: link.total_loss_db,
            points,
        },
        deposits,
    })
}

/// The generator a link draws from under a given root seed.
///
/// Links are processed in id order; the i-th link owns stream `i + 1`.
/// Stream 0 never feeds a link, leaving it to the key-management layer.
pub fn link_rng(seed: u64, link_index: usize) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(link_index as u64 + 1);
    rng
}

/// Simulates every quantum link of the topology for `duration_s` seconds.
pub fn run_network(
    topo: &NetworkTopology,
    params: &ProtocolParams,
    noise: &DeviceNoise,
    duration_s: f64,
    seed: u64,
) -> Result<NetworkRun, SimError> {
    let mut links: Vec<&QuantumLink> = topo.links.iter().collect();
    links.sort_by(|a, b| a.id.cmp(&b.id));
    let mut series = Vec::with_capacity(links.len());
    let mut deposits = Vec::new();
    for (i, link) in links.iter().enumerate() {
        let mut rng = link_rng(seed, i);
        let run = run_link(params, link, noise, duration_s, &mut rng)?;
        series.push(run.series);
        deposits.extend(run.deposits);
    }
    Ok(NetworkRun { series, deposits })
}
