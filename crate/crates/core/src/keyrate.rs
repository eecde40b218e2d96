//! One-decoy finite-key analysis for three-state time-bin BB84.
//!
//! The key (Z) basis carries data; the monitoring (X) basis only estimates
//! the phase error rate. Decoy statistics over two intensities bound the
//! vacuum and single-photon contributions of each basis; Hoeffding-style
//! concentration terms account for finite block sizes. The extractable key
//! length is
//!
//! ```text
//! l = s_z0 + s_z1 * (1 - h(phi)) - lambda_EC - 6*log2(19/eps_sec) - log2(2/eps_corr)
//! ```
//!
//! floored, clamped to `[0, n_z]`. Setting `eps_sec = 1` is a sentinel that
//! switches to the fluctuation-free analysis: every concentration deviation,
//! the gamma phase-correction and the additive failure-probability constants
//! vanish, leaving the expected-value (asymptotic) envelope.

use serde::{Deserialize, Serialize};
use std::f64::consts::LN_2;
use thiserror::Error;

use crate::linkmodel::{
    expected_block, photon_number_prob, ChannelState, ExpectedBlockStats, LinkError,
    ProtocolParams,
};

/// Errors from the finite-key analysis.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum KeyRateError {
    /// Underlying link-model failure (bad parameters, no signal, ...).
    #[error(transparent)]
    Link(#[from] LinkError),
    /// An argument fell outside its mathematical domain.
    #[error("{name} = {value} outside domain [{lo}, {hi}]")]
    OutOfDomain {
        name: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    /// Decoy analysis needs two distinct, non-vacuum intensities.
    #[error("decoy analysis requires 0 < mu2 < mu1, got mu1 = {mu1}, mu2 = {mu2}")]
    DegenerateIntensities { mu1: f64, mu2: f64 },
    /// No single-photon detections can be certified in the monitoring basis.
    #[error("monitoring-basis single-photon bound not positive ({s_x1_low}): phase error unbounded")]
    InsufficientMonitoring { s_x1_low: f64 },
    /// A loss grid for sweeping was empty or not strictly increasing.
    #[error("loss grid must be non-empty and strictly increasing (violation at index {index})")]
    BadGrid { index: usize },
}

/// Which sifted stream a bound refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Basis {
    /// Key basis (Z): carries the raw key.
    Key,
    /// Monitoring basis (X): estimates the phase error rate.
    Monitor,
}

/// Sifted detection and error counts of one analysis block.
///
/// Counts are `f64` so both sampled integer blocks and fractional expected
/// blocks flow through the same analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCounts {
    /// Parameters the block was produced under.
    pub params: ProtocolParams,
    pub n_z_mu1: f64,
    pub n_z_mu2: f64,
    pub n_x_mu1: f64,
    pub n_x_mu2: f64,
    pub m_z_mu1: f64,
    pub m_z_mu2: f64,
    pub m_x_mu1: f64,
    pub m_x_mu2: f64,
}

impl BlockCounts {
    /// Packs the expected (mean) statistics of a link into analysis counts.
    pub fn from_expected(params: &ProtocolParams, stats: &ExpectedBlockStats) -> Self {
        Self {
            params: params.clone(),
            n_z_mu1: stats.n_z_by_intensity[0],
            n_z_mu2: stats.n_z_by_intensity[1],
            n_x_mu1: stats.n_x_by_intensity[0],
            n_x_mu2: stats.n_x_by_intensity[1],
            m_z_mu1: stats.m_z_by_intensity[0],
            m_z_mu2: stats.m_z_by_intensity[1],
            m_x_mu1: stats.m_x_by_intensity[0],
            m_x_mu2: stats.m_x_by_intensity[1],
        }
    }

    /// Detections `[mu1, mu2]` and errors `[mu1, mu2]` of one basis.
    pub fn basis_arrays(&self, basis: Basis) -> ([f64; 2], [f64; 2]) {
        match basis {
            Basis::Key => ([self.n_z_mu1, self.n_z_mu2], [self.m_z_mu1, self.m_z_mu2]),
            Basis::Monitor => ([self.n_x_mu1, self.n_x_mu2], [self.m_x_mu1, self.m_x_mu2]),
        }
    }

    /// Total key-basis detections.
    pub fn n_z_total(&self) -> f64 {
        self.n_z_mu1 + self.n_z_mu2
    }

    /// Observed key-basis error rate; zero when the basis is empty.
    pub fn qber_z(&self) -> f64 {
        let n = self.n_z_total();
        if n > 0.0 {
            (self.m_z_mu1 + self.m_z_mu2) / n
        } else {
            0.0
        }
    }

    fn validate(&self) -> Result<(), KeyRateError> {
        self.params.validate()?;
        let fields = [
            ("n_z_mu1", self.n_z_mu1, self.m_z_mu1),
            ("n_z_mu2", self.n_z_mu2, self.m_z_mu2),
            ("n_x_mu1", self.n_x_mu1, self.m_x_mu1),
            ("n_x_mu2", self.n_x_mu2, self.m_x_mu2),
        ];
        for (name, n, m) in fields {
            if !n.is_finite() || n < 0.0 || !m.is_finite() || m < 0.0 || m > n {
                return Err(KeyRateError::OutOfDomain {
                    name,
                    value: if m > n || !m.is_finite() { m } else { n },
                    lo: 0.0,
                    hi: f64::INFINITY,
                });
            }
        }
        Ok(())
    }
}

/// Decoy bounds certified for one basis of one block.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisBounds {
    /// Lower bound on detections caused by vacuum pulses.
    pub s0_low: f64,
    /// Upper bound on detections caused by vacuum pulses.
    pub s0_up: f64,
    /// Lower bound on detections caused by single-photon pulses.
    pub s1_low: f64,
    /// Upper bound on errors among single-photon detections.
    pub v1_up: f64,
}

/// Finite-key result for one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyLengthResult {
    /// Extractable secret bits (floored, clamped to `[0, n_z]`).
    pub secret_bits: u64,
    pub s_z0_low: f64,
    pub s_z0_up: f64,
    pub s_z1_low: f64,
    pub s_x1_low: f64,
    pub v_x1_up: f64,
    /// Upper bound on the single-photon phase error rate, in `[0, 0.5]`.
    pub phase_error_up: f64,
    /// Observed key-basis error rate.
    pub qber_z: f64,
    /// Bits disclosed by error correction.
    pub lambda_ec: f64,
    /// Total key-basis detections.
    pub n_z_total: f64,
}

/// One point of a loss sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub loss_db: f64,
    /// Finite-key secret key rate in bits per second.
    pub skr_bps: f64,
    /// Expected key-basis error rate.
    pub qber: f64,
}

/// Binary entropy in bits; `h(0) = h(1) = 0`, maximum `h(0.5) = 1`.
pub fn binary_entropy(x: f64) -> Result<f64, KeyRateError> {
    if !x.is_finite() || !(0.0..=1.0).contains(&x) {
        return Err(KeyRateError::OutOfDomain {
            name: "x",
            value: x,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(h2(x))
}

/// Unchecked binary entropy for internal callers with proven domains.
fn h2(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return 0.0;
    }
    -x * x.log2() - (1.0 - x) * (1.0 - x).log2()
}

/// Hoeffding deviation `sqrt(n/2 * ln(1/eps))` for `n` trials at failure
/// probability `eps`. Zero when `n = 0` or `eps = 1`.
pub fn hoeffding_delta(n: f64, eps: f64) -> Result<f64, KeyRateError> {
    if !n.is_finite() || n < 0.0 {
        return Err(KeyRateError::OutOfDomain {
            name: "n",
            value: n,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    if !eps.is_finite() || eps <= 0.0 || eps > 1.0 {
        return Err(KeyRateError::OutOfDomain {
            name: "eps",
            value: eps,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok((n / 2.0 * (1.0 / eps).ln()).sqrt())
}

/// Phase-error correction for estimating one basis from the other
/// (concentration of the observed fraction `b` over `c` key and `d`
/// monitoring samples at failure probability `a/19`... effectively the
/// random-sampling-without-replacement penalty). Returns 0 in the
/// fluctuation-free regime and 0.5 when the inputs cannot certify anything.
fn gamma_term(a: f64, b: f64, c: f64, d: f64) -> f64 {
    if a >= 1.0 {
        return 0.0;
    }
    if b <= 0.0 {
        return 0.0;
    }
    if b >= 1.0 || c <= 0.0 || d <= 0.0 {
        return 0.5;
    }
    let num = (c + d) * (1.0 - b) * b;
    let arg = (c + d) / (c * d * (1.0 - b) * b) * (19.0 / a).powi(2);
    if arg <= 1.0 {
        return 0.0;
    }
    (num / (c * d * LN_2) * arg.log2()).sqrt()
}

/// Shared context for decoy-bound evaluation.
struct DecoyCtx {
    mu1: f64,
    mu2: f64,
    tau0: f64,
    tau1: f64,
    /// Hoeffding deviation applied to error counts (0 if fluctuation-free).
    dm: f64,
    n_tot: f64,
    m_tot: f64,
    /// Intensity-rescaled detection bounds.
    n_plus_mu1: f64,
    n_minus_mu2: f64,
    /// Intensity-rescaled error bounds.
    m_plus_mu1: f64,
    m_minus_mu2: f64,
}

impl DecoyCtx {
    fn build(counts: &BlockCounts, basis: Basis) -> Result<Self, KeyRateError> {
        counts.validate()?;
        let p = &counts.params;
        if !(p.mu2 > 0.0 && p.mu2 < p.mu1) {
            return Err(KeyRateError::DegenerateIntensities {
                mu1: p.mu1,
                mu2: p.mu2,
            });
        }
        let (n, m) = counts.basis_arrays(basis);
        let n_tot = n[0] + n[1];
        let m_tot = m[0] + m[1];
        let fluc_free = p.eps_sec >= 1.0;
        let eps1 = p.eps_sec / 19.0;
        let (dn, dm) = if fluc_free {
            (0.0, 0.0)
        } else {
            (hoeffding_delta(n_tot, eps1)?, hoeffding_delta(m_tot, eps1)?)
        };
        let w = [p.p_mu1, 1.0 - p.p_mu1];
        let scale = |mu: f64, pk: f64, v: f64| (mu.exp() / pk * v).max(0.0);
        Ok(Self {
            mu1: p.mu1,
            mu2: p.mu2,
            tau0: photon_number_prob(p, 0),
            tau1: photon_number_prob(p, 1),
            dm,
            n_tot,
            m_tot,
            n_plus_mu1: scale(p.mu1, w[0], n[0] + dn),
            n_minus_mu2: scale(p.mu2, w[1], n[1] - dn),
            m_plus_mu1: scale(p.mu1, w[0], m[0] + dm),
            m_minus_mu2: scale(p.mu2, w[1], m[1] - dm),
        })
    }

    fn s0_low(&self) -> f64 {
        let raw = self.tau0 * (self.mu1 * self.n_minus_mu2 - self.mu2 * self.n_plus_mu1)
            / (self.mu1 - self.mu2);
        raw.clamp(0.0, self.n_tot)
    }

    fn s0_up(&self) -> f64 {
        let raw = 2.0 * (self.m_tot + self.dm);
        raw.clamp(self.s0_low(), self.n_tot)
    }

    fn s1_low(&self, s0_up: f64) -> f64 {
        let mu1 = self.mu1;
        let mu2 = self.mu2;
        let raw = self.tau1 * mu1 / (mu2 * (mu1 - mu2))
            * (self.n_minus_mu2
                - (mu2 * mu2) / (mu1 * mu1) * self.n_plus_mu1
                - (mu1 * mu1 - mu2 * mu2) / (mu1 * mu1) * (s0_up / self.tau0));
        raw.clamp(0.0, self.n_tot)
    }

    fn v1_up(&self) -> f64 {
        let raw = self.tau1 * (self.m_plus_mu1 - self.m_minus_mu2) / (self.mu1 - self.mu2);
        raw.max(0.0)
    }
}

/// All decoy bounds of one basis.
pub fn basis_bounds(counts: &BlockCounts, basis: Basis) -> Result<BasisBounds, KeyRateError> {
    let ctx = DecoyCtx::build(counts, basis)?;
    let s0_low = ctx.s0_low();
    let s0_up = ctx.s0_up();
    Ok(BasisBounds {
        s0_low,
        s0_up,
        s1_low: ctx.s1_low(s0_up),
        v1_up: ctx.v1_up(),
    })
}

/// Key-basis vacuum bounds `(s_z0_low, s_z0_up)`.
pub fn vacuum_bounds(counts: &BlockCounts) -> Result<(f64, f64), KeyRateError> {
    let b = basis_bounds(counts, Basis::Key)?;
    Ok((b.s0_low, b.s0_up))
}

/// Key-basis single-photon lower bound given a vacuum upper bound.
pub fn single_photon_bound(counts: &BlockCounts, s_z0_up: f64) -> Result<f64, KeyRateError> {
    if !s_z0_up.is_finite() || s_z0_up < 0.0 {
        return Err(KeyRateError::OutOfDomain {
            name: "s_z0_up",
            value: s_z0_up,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let ctx = DecoyCtx::build(counts, Basis::Key)?;
    Ok(ctx.s1_low(s_z0_up))
}

/// Upper bound on the single-photon phase error rate.
///
/// Combines the monitoring-basis error fraction `v_x1_up / s_x1_low` with
/// the cross-basis gamma correction, capped at 1/2. Errors when the
/// monitoring basis certifies no single-photon detections at all; in that
/// case [`secret_key_length`] falls back to the pessimal rate 1/2 itself.
pub fn phase_error_bound(
    counts: &BlockCounts,
    s_z1_low: f64,
    s_x1_low: f64,
    v_x1_up: f64,
) -> Result<f64, KeyRateError> {
    counts.validate()?;
    if !(s_x1_low.is_finite() && s_x1_low > 0.0) {
        return Err(KeyRateError::InsufficientMonitoring { s_x1_low });
    }
    for (name, v) in [("s_z1_low", s_z1_low), ("v_x1_up", v_x1_up)] {
        if !v.is_finite() || v < 0.0 {
            return Err(KeyRateError::OutOfDomain {
                name,
                value: v,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
    }
    let b = (v_x1_up / s_x1_low).min(0.5);
    let g = gamma_term(counts.params.eps_sec, b, s_z1_low, s_x1_low);
    Ok((b + g).min(0.5))
}

/// Number of secret bits extractable from one block.
pub fn secret_key_length(counts: &BlockCounts) -> Result<KeyLengthResult, KeyRateError> {
    let p = counts.params.clone();
    let z = basis_bounds(counts, Basis::Key)?;
    let x = basis_bounds(counts, Basis::Monitor)?;

    let phase_error_up = if x.s1_low > 0.0 {
        phase_error_bound(counts, z.s1_low, x.s1_low, x.v1_up)?
    } else {
        0.5
    };

    let n_z_total = counts.n_z_total();
    let qber_z = counts.qber_z();
    let lambda_ec = p.f_ec * n_z_total * h2(qber_z);

    let fluc_free = p.eps_sec >= 1.0;
    let consts = if fluc_free {
        0.0
    } else {
        6.0 * (19.0 / p.eps_sec).log2() + (2.0 / p.eps_corr).log2()
    };
    let raw = z.s0_low + z.s1_low * (1.0 - h2(phase_error_up)) - lambda_ec - consts;
    let secret_bits = raw.min(n_z_total).max(0.0).floor() as u64;

    Ok(KeyLengthResult {
        secret_bits,
        s_z0_low: z.s0_low,
        s_z0_up: z.s0_up,
        s_z1_low: z.s1_low,
        s_x1_low: x.s1_low,
        v_x1_up: x.v1_up,
        phase_error_up,
        qber_z,
        lambda_ec,
        n_z_total,
    })
}

/// Secret key rate in the expected-value limit, in bits per second.
///
/// Evaluates the analysis on the expected block with every finite-size
/// deviation, the gamma correction and the additive constants removed, and
/// without flooring. This is the envelope that finite-key rates approach
/// from below as blocks grow.
pub fn asymptotic_skr(params: &ProtocolParams, channel: &ChannelState) -> Result<f64, KeyRateError> {
    let stats = expected_block(params, channel)?;
    let mut p = params.clone();
    p.eps_sec = 1.0; // fluctuation-free sentinel
    let counts = BlockCounts::from_expected(&p, &stats);

    let z = basis_bounds(&counts, Basis::Key)?;
    let x = basis_bounds(&counts, Basis::Monitor)?;
    let phase = if x.s1_low > 0.0 {
        (x.v1_up / x.s1_low).min(0.5)
    } else {
        0.5
    };
    let lambda_ec = p.f_ec * counts.n_z_total() * h2(counts.qber_z());
    let raw = z.s0_low + z.s1_low * (1.0 - h2(phase)) - lambda_ec;
    Ok(raw.max(0.0) / stats.duration_s)
}

/// Finite-key rate and QBER across a strictly increasing loss grid.
pub fn sweep(params: &ProtocolParams, grid_db: &[f64]) -> Result<Vec<SweepPoint>, KeyRateError> {
    if grid_db.is_empty() {
        return Err(KeyRateError::BadGrid { index: 0 });
    }
    for i in 0..grid_db.len() {
        if !grid_db[i].is_finite() || (i > 0 && grid_db[i] <= grid_db[i - 1]) {
            return Err(KeyRateError::BadGrid { index: i });
        }
    }
    let mut out = Vec::with_capacity(grid_db.len());
    for &loss_db in grid_db {
        let stats = expected_block(params, &ChannelState { loss_db })?;
        let counts = BlockCounts::from_expected(params, &stats);
        let res = secret_key_length(&counts)?;
        out.push(SweepPoint {
            loss_db,
            skr_bps: res.secret_bits as f64 / stats.duration_s,
            qber: res.qber_z,
        });
    }
    Ok(out)
}
