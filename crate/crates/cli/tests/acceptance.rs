//! Acceptance gate for the four-node ring simulator.
//!
//! Eight end-to-end checks, one test each: secret-key-rate calibration
//! against the deployed per-link average, detector saturation, dual-route
//! bound consistency, sampling soundness, loss-curve shape, relay
//! bookkeeping, topology gating and byte-level determinism of `simulate`.
//! Every tolerance is pinned as a constant below; each test prints one
//! `PASS criterion N` line with its measured numbers once it succeeds.

use qkdnet::keyrate::{asymptotic_skr, basis_bounds, sweep, Basis, BlockCounts};
use qkdnet::kms::{KeyStore, KmsError, KmsNetwork};
use qkdnet::linkmodel::{deadtime_throttle, expected_block, ChannelState, ProtocolParams};
use qkdnet::simnet::{sample_block, KeyDeposit};
use qkdnet::topology::load_topology_file;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde_json::{json, Value};
use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

/// The deployed ring averages 2.4 kbps of secret key per link, plus or
/// minus 0.2 kbps; the model must reproduce rates inside that band.
const SKR_WINDOW_BPS: (f64, f64) = (2_200.0, 2_600.0);
/// Agreement demanded between the closed-form and photon-number routes.
const DUAL_ROUTE_TOL: f64 = 2e-2;
/// Sampled blocks per loss point, the loss points themselves, the allowed
/// fraction of bound violations and the band for sampled cell means.
const MC_BLOCKS: usize = 120;
const MC_LOSSES_DB: [f64; 3] = [2.0, 10.0, 18.0];
const MC_VIOLATION_CAP: f64 = 0.01;
const MC_MEAN_SIGMAS: f64 = 5.0;
/// Randomized any-to-any relay workload size.
const RELAY_REQUESTS: usize = 10_000;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_qkdnet")
}

fn nicosia_path() -> PathBuf {
    PathBuf::from(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/../../configs/nicosia.ring"
    ))
}

fn rel_dev(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-12)
}

fn pair(a: &str, b: &str) -> (String, String) {
    if a <= b {
        (a.to_string(), b.to_string())
    } else {
        (b.to_string(), a.to_string())
    }
}

/// Independently derived link statistics and bounds.
///
/// Every probability is expanded over photon numbers n = 0..=50 with yields
/// `Y_n = 1 - (1 - p_dc)(1 - t)^n` instead of the exponential closed forms,
/// and the fluctuation-free decoy algebra is a local copy. `true_s_z0` and
/// `true_s_z1` are the expected key-basis detections actually caused by
/// vacuum and single-photon pulses, which certified lower bounds must not
/// exceed.
struct Oracle {
    nz: [f64; 2],
    nx: [f64; 2],
    mz: [f64; 2],
    mx: [f64; 2],
    true_s_z0: f64,
    true_s_z1: f64,
    s0_low: f64,
    s0_up: f64,
    s1_low: f64,
    phase: f64,
}

fn oracle(params: &ProtocolParams, loss_db: f64) -> Oracle {
    const NMAX: u32 = 50;
    let t = 10f64.powf(-loss_db / 10.0) * params.det_efficiency;
    let mus = [params.mu1, params.mu2];
    let weights = [params.p_mu1, 1.0 - params.p_mu1];

    let mut det = [0.0f64; 2];
    let mut errw = [0.0f64; 2];
    let mut pois0 = [0.0f64; 2];
    let mut pois1 = [0.0f64; 2];
    for k in 0..2 {
        let mut pois = (-mus[k]).exp();
        for n in 0..=NMAX {
            if n > 0 {
                pois *= mus[k] / n as f64;
            }
            let open = 1.0 - (1.0 - t).powi(n as i32);
            let y_n = 1.0 - (1.0 - params.p_dc) * (1.0 - open);
            det[k] += pois * y_n;
            errw[k] += pois * (0.5 * params.p_dc + params.e_opt * open * (1.0 - params.p_dc));
            if n == 0 {
                pois0[k] = pois;
            }
            if n == 1 {
                pois1[k] = pois;
            }
        }
    }
    let y0 = params.p_dc;
    let y1 = 1.0 - (1.0 - params.p_dc) * (1.0 - t);

    let agg = weights[0] * det[0] + weights[1] * det[1];
    let raw = params.pulse_rate * agg;
    let dtf = 1.0 / (1.0 + raw * params.dead_time);
    let sift = [
        params.pz_tx * params.pz_rx,
        (1.0 - params.pz_tx) * (1.0 - params.pz_rx),
    ];
    let duration = params.block_size_nz / (raw * dtf * sift[0]);

    let budget =
        |basis: usize, k: usize| duration * params.pulse_rate * weights[k] * sift[basis] * dtf;
    let nz = [budget(0, 0) * det[0], budget(0, 1) * det[1]];
    let mz = [budget(0, 0) * errw[0], budget(0, 1) * errw[1]];
    let nx = [budget(1, 0) * det[0], budget(1, 1) * det[1]];
    let mx = [budget(1, 0) * errw[0], budget(1, 1) * errw[1]];
    let true_s_z0 = budget(0, 0) * pois0[0] * y0 + budget(0, 1) * pois0[1] * y0;
    let true_s_z1 = budget(0, 0) * pois1[0] * y1 + budget(0, 1) * pois1[1] * y1;

    let tau0 = weights[0] * pois0[0] + weights[1] * pois0[1];
    let tau1 = weights[0] * pois1[0] + weights[1] * pois1[1];
    let (mu1, mu2) = (params.mu1, params.mu2);
    let zero_dev = |n: [f64; 2], m: [f64; 2]| -> (f64, f64, f64, f64) {
        let n_tot = n[0] + n[1];
        let n_plus = mu1.exp() / weights[0] * n[0];
        let n_minus = mu2.exp() / weights[1] * n[1];
        let m_plus = mu1.exp() / weights[0] * m[0];
        let m_minus = mu2.exp() / weights[1] * m[1];
        let s0 = (tau0 * (mu1 * n_minus - mu2 * n_plus) / (mu1 - mu2)).clamp(0.0, n_tot);
        let s0_up = (2.0 * (m[0] + m[1])).clamp(s0, n_tot);
        let s1 = (tau1 * mu1 / (mu2 * (mu1 - mu2))
            * (n_minus
                - mu2 * mu2 / (mu1 * mu1) * n_plus
                - (mu1 * mu1 - mu2 * mu2) / (mu1 * mu1) * s0_up / tau0))
            .clamp(0.0, n_tot);
        let v1 = (tau1 * (m_plus - m_minus) / (mu1 - mu2)).max(0.0);
        (s0, s0_up, s1, v1)
    };
    let (s0_low, s0_up, s1_low, _) = zero_dev(nz, mz);
    let (_, _, sx1, vx1) = zero_dev(nx, mx);
    let phase = if sx1 > 0.0 { (vx1 / sx1).min(0.5) } else { 0.5 };

    Oracle {
        nz,
        nx,
        mz,
        mx,
        true_s_z0,
        true_s_z1,
        s0_low,
        s0_up,
        s1_low,
        phase,
    }
}

#[test]
fn criterion_1_deployment_rate_window() {
    let started = Instant::now();
    let params = ProtocolParams::default();
    let grid: Vec<f64> = (0..=56).map(|i| 1.0 + 0.25 * f64::from(i)).collect();
    let pts = sweep(&params, &grid).unwrap();
    let in_window: Vec<_> = pts
        .iter()
        .filter(|p| (SKR_WINDOW_BPS.0..=SKR_WINDOW_BPS.1).contains(&p.skr_bps))
        .collect();
    assert!(
        !in_window.is_empty(),
        "no loss in 1..15 dB reproduces the deployed 2.2..2.6 kbps band"
    );
    let lo = in_window.first().unwrap().loss_db;
    let hi = in_window.last().unwrap().loss_db;
    let calibrated = in_window
        .iter()
        .min_by(|a, b| (a.skr_bps - 2_400.0).abs().total_cmp(&(b.skr_bps - 2_400.0).abs()))
        .unwrap();

    // Frozen reference point, guarding against silent recalibration.
    assert!(
        rel_dev(pts[0].skr_bps, 2398.182852046056) <= 1e-9,
        "rate at 1 dB moved to {}",
        pts[0].skr_bps
    );

    // The four deployed link budgets must themselves sit inside the band.
    let topo = load_topology_file(&nicosia_path()).unwrap();
    let mut budgets: Vec<f64> = topo.links.iter().map(|l| l.total_loss_db).collect();
    budgets.sort_by(f64::total_cmp);
    for p in sweep(&params, &budgets).unwrap() {
        assert!(
            (SKR_WINDOW_BPS.0..=SKR_WINDOW_BPS.1).contains(&p.skr_bps),
            "deployed budget {} dB yields {} bps, outside the band",
            p.loss_db,
            p.skr_bps
        );
    }

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "PASS criterion 1: rates inside 2.2..2.6 kbps across {lo}..{hi} dB, calibrated loss \
         {} dB at {:.1} bps; all four deployed budgets land in the band ({elapsed:.2?})",
        calibrated.loss_db, calibrated.skr_bps
    );
}

#[test]
fn criterion_2_deadtime_ceiling() {
    let params = ProtocolParams::default();
    let ceiling = 1.0 / params.dead_time;
    let at_zero = expected_block(&params, &ChannelState { loss_db: 0.0 })
        .unwrap()
        .sifted_rate_cps;
    assert!(
        at_zero >= 0.95 * ceiling,
        "saturated click rate {at_zero} cps is below 95% of the {ceiling} cps ceiling"
    );
    let mut max_rate = 0.0f64;
    for i in 0..=80 {
        let loss_db = 0.5 * f64::from(i);
        let rate = expected_block(&params, &ChannelState { loss_db })
            .unwrap()
            .sifted_rate_cps;
        assert!(
            rate <= ceiling,
            "throttled rate {rate} cps exceeds the ceiling at {loss_db} dB"
        );
        max_rate = max_rate.max(rate);
    }
    // The closed form stays strictly below 1/dead_time for any finite rate.
    for raw in [1e3, 1e6, 1e9, 1e15] {
        assert!(deadtime_throttle(raw, params.dead_time).unwrap() < ceiling);
    }
    println!(
        "PASS criterion 2: throttled click rate {at_zero:.1} cps at 0 dB ({:.2}% of the \
         {ceiling:.0} cps ceiling), maximum {max_rate:.1} cps over 0..40 dB",
        100.0 * at_zero / ceiling
    );
}

#[test]
fn criterion_3_fluctuation_free_bounds() {
    // eps_sec = 1 disables every finite-size deviation, so the production
    // bounds must reduce to the algebra the oracle evaluates independently.
    let params = ProtocolParams {
        eps_sec: 1.0,
        ..ProtocolParams::default()
    };
    let mut worst = 0.0f64;
    for loss_db in MC_LOSSES_DB {
        let stats = expected_block(&params, &ChannelState { loss_db }).unwrap();
        let counts = BlockCounts::from_expected(&params, &stats);
        let z = basis_bounds(&counts, Basis::Key).unwrap();
        let x = basis_bounds(&counts, Basis::Monitor).unwrap();
        let phase = if x.s1_low > 0.0 {
            (x.v1_up / x.s1_low).min(0.5)
        } else {
            0.5
        };
        let want = oracle(&params, loss_db);
        for (name, got, expect) in [
            ("s_z0_low", z.s0_low, want.s0_low),
            ("s_z0_up", z.s0_up, want.s0_up),
            ("s_z1_low", z.s1_low, want.s1_low),
            ("phase", phase, want.phase),
        ] {
            let dev = rel_dev(got, expect);
            worst = worst.max(dev);
            assert!(
                dev <= DUAL_ROUTE_TOL,
                "{name} at {loss_db} dB: {got} vs oracle {expect} ({dev:.2e} > {DUAL_ROUTE_TOL})"
            );
        }
    }
    println!(
        "PASS criterion 3: closed-form and photon-number routes agree at {MC_LOSSES_DB:?} dB, \
         worst relative deviation {worst:.2e} (tolerance {DUAL_ROUTE_TOL})"
    );
}

#[test]
fn criterion_4_monte_carlo_soundness() {
    let started = Instant::now();
    let params = ProtocolParams::default();
    let mut rng = ChaCha12Rng::seed_from_u64(0xacce);
    let mut total_violations = 0usize;
    let mut worst_sigma = 0.0f64;
    for loss_db in MC_LOSSES_DB {
        let expected = expected_block(&params, &ChannelState { loss_db }).unwrap();
        let want = oracle(&params, loss_db);
        let mut sums = [0.0f64; 8];
        let mut violations = 0usize;
        for _ in 0..MC_BLOCKS {
            let counts = sample_block(&params, &expected, &mut rng);
            let z = basis_bounds(&counts, Basis::Key).unwrap();
            if z.s0_low > want.true_s_z0 + 1e-9 || z.s1_low > want.true_s_z1 + 1e-9 {
                violations += 1;
            }
            for (i, v) in [
                counts.n_z_mu1,
                counts.n_z_mu2,
                counts.n_x_mu1,
                counts.n_x_mu2,
                counts.m_z_mu1,
                counts.m_z_mu2,
                counts.m_x_mu1,
                counts.m_x_mu2,
            ]
            .into_iter()
            .enumerate()
            {
                sums[i] += v;
            }
        }
        assert!(
            (violations as f64) <= MC_VIOLATION_CAP * MC_BLOCKS as f64,
            "{violations} of {MC_BLOCKS} blocks at {loss_db} dB certify more vacuum or \
             single-photon counts than truly occur"
        );
        total_violations += violations;

        // Sampled cell means against the oracle expectations. The Poisson
        // value bounds each cell's per-block variance.
        let want_cells = [
            want.nz[0], want.nz[1], want.nx[0], want.nx[1], want.mz[0], want.mz[1], want.mx[0],
            want.mx[1],
        ];
        for (i, w) in want_cells.iter().enumerate() {
            let mean = sums[i] / MC_BLOCKS as f64;
            let se = (w / MC_BLOCKS as f64).sqrt().max(1e-9);
            let sigma = (mean - w).abs() / se;
            worst_sigma = worst_sigma.max(sigma);
            assert!(
                sigma <= MC_MEAN_SIGMAS,
                "cell {i} at {loss_db} dB: mean {mean} vs {w} is {sigma:.1} standard errors off"
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    println!(
        "PASS criterion 4: {} sampled blocks across {MC_LOSSES_DB:?} dB, {total_violations} \
         bound violations (cap {:.0}%), worst cell mean {worst_sigma:.2} standard errors out \
         ({elapsed:.2?})",
        MC_BLOCKS * MC_LOSSES_DB.len(),
        100.0 * MC_VIOLATION_CAP
    );
}

#[test]
fn criterion_5_curve_properties() {
    let params = ProtocolParams::default();
    let grid: Vec<f64> = (0..=50).map(|i| 0.5 * f64::from(i)).collect();
    let pts = sweep(&params, &grid).unwrap();
    for w in pts.windows(2) {
        assert!(
            w[1].skr_bps <= w[0].skr_bps + 1e-9,
            "rate rises from {} to {} bps between {} and {} dB",
            w[0].skr_bps,
            w[1].skr_bps,
            w[0].loss_db,
            w[1].loss_db
        );
        assert!(
            w[1].qber >= w[0].qber - 1e-12,
            "QBER falls from {} to {} between {} and {} dB",
            w[0].qber,
            w[1].qber,
            w[0].loss_db,
            w[1].loss_db
        );
    }
    let mut cutoff = None;
    for p in &pts {
        let envelope = asymptotic_skr(&params, &ChannelState { loss_db: p.loss_db }).unwrap();
        assert!(
            p.skr_bps <= envelope + 1e-9,
            "finite-key rate {} bps exceeds the asymptotic envelope {} at {} dB",
            p.skr_bps,
            envelope,
            p.loss_db
        );
        if cutoff.is_none() && p.skr_bps == 0.0 {
            cutoff = Some(p.loss_db);
        }
    }
    assert!(pts[2].skr_bps > 0.0, "no key at 1 dB");
    let cutoff = cutoff.expect("rate must reach zero inside the 0..25 dB grid");
    assert_eq!(pts.last().unwrap().skr_bps, 0.0);
    println!(
        "PASS criterion 5: over 0..25 dB the rate never increases and the QBER never \
         decreases, finite stays under asymptotic everywhere, zero key from {cutoff} dB on"
    );
}

#[test]
fn criterion_6_relay_conservation() {
    let started = Instant::now();
    let ring: Vec<String> = ["N1", "N2", "N3", "N4"].iter().map(|s| s.to_string()).collect();
    let mut net = KmsNetwork::with_ring(ring.clone(), 9);
    // Mirror stores receive byte-identical deposits and replay each hop's
    // withdrawal independently, so the wire algebra and the books can both
    // be checked against a second implementation of the ledger.
    let mut mirror: BTreeMap<(String, String), KeyStore> = BTreeMap::new();
    const BLOCK_BITS: u64 = 100_000;
    const BLOCKS_PER_STORE: u64 = 20;
    let mut seed = 0u64;
    for i in 0..ring.len() {
        let (a, b) = (ring[i].clone(), ring[(i + 1) % ring.len()].clone());
        let m = mirror
            .entry(pair(&a, &b))
            .or_insert_with(|| KeyStore::new(&a, &b));
        for j in 0..BLOCKS_PER_STORE {
            seed += 1;
            net.ingest(&KeyDeposit {
                link_id: format!("hop-{i}"),
                tx_node: a.clone(),
                rx_node: b.clone(),
                block_index: j,
                secret_bits: BLOCK_BITS,
                material_seed: seed,
            })
            .unwrap();
            m.deposit(BLOCK_BITS, seed).unwrap();
        }
    }

    let mut rng = ChaCha12Rng::seed_from_u64(0x6e1a);
    let mut ids = BTreeSet::new();
    let mut consumed: BTreeMap<(String, String), u64> = BTreeMap::new();
    let mut bits_delivered = 0u64;
    for _ in 0..RELAY_REQUESTS {
        let si = rng.random_range(0..ring.len());
        let di = (si + rng.random_range(1..ring.len())) % ring.len();
        let size = 8 * rng.random_range(1..=64u64);
        let delivery = net
            .request_key(&ring[si], &ring[di], size)
            .expect("stores are stocked for the whole workload");
        assert!(ids.insert(delivery.ticket.key_id.clone()), "key id reused");
        let chain = &delivery.ticket.hop_chain;
        assert_eq!(chain.first().unwrap(), &ring[si]);
        assert_eq!(chain.last().unwrap(), &ring[di]);
        assert!(chain.len() <= 3, "four-node ring routes span at most two hops");
        bits_delivered += size;

        let mut hop_keys = Vec::with_capacity(chain.len() - 1);
        for hop in chain.windows(2) {
            let store = mirror.get_mut(&pair(&hop[0], &hop[1])).expect("ring pair");
            let r = store.reserve(size).expect("mirror holds the same stock");
            hop_keys.push(store.material_of(&r));
            store.commit(&r);
            *consumed.entry(pair(&hop[0], &hop[1])).or_default() += size;
        }

        if chain.len() == 2 {
            assert!(delivery.wire.is_empty());
            assert_eq!(
                delivery.material, hop_keys[0],
                "adjacent delivery must hand out the stored hop key itself"
            );
        } else {
            assert_eq!(delivery.wire.len(), hop_keys.len());
            for (i, (transfer, hop_key)) in delivery.wire.iter().zip(&hop_keys).enumerate() {
                assert_eq!(transfer.from, chain[i]);
                assert_eq!(transfer.to, chain[i + 1]);
                let decoded: Vec<u8> =
                    transfer.payload.iter().zip(hop_key).map(|(p, k)| p ^ k).collect();
                assert_eq!(
                    decoded, delivery.material,
                    "hop {i} does not decode to the endpoint key"
                );
            }
        }
    }
    assert_eq!(ids.len(), RELAY_REQUESTS);

    for store in net.stores() {
        let used = consumed.get(&store.pair).copied().unwrap_or(0);
        assert!(store.conservation_holds(), "books of {:?} do not balance", store.pair);
        assert_eq!(store.reserved_bits(), 0);
        assert_eq!(store.consumed_bits(), used);
        assert_eq!(store.available_bits(), BLOCKS_PER_STORE * BLOCK_BITS - used);
        let m = &mirror[&store.pair];
        assert_eq!(
            (m.available_bits(), m.consumed_bits()),
            (store.available_bits(), store.consumed_bits())
        );
    }

    // Forced depletion aborts atomically: the second hop cannot cover the
    // request, so the first hop's reservation is rolled back in full.
    let mut dry = KmsNetwork::with_ring(ring, 1);
    dry.ingest(&KeyDeposit {
        link_id: "hop-0".into(),
        tx_node: "N1".into(),
        rx_node: "N2".into(),
        block_index: 0,
        secret_bits: 1_000,
        material_seed: 71,
    })
    .unwrap();
    dry.ingest(&KeyDeposit {
        link_id: "hop-1".into(),
        tx_node: "N2".into(),
        rx_node: "N3".into(),
        block_index: 0,
        secret_bits: 500,
        material_seed: 72,
    })
    .unwrap();
    let pad = vec![0x5au8; 100];
    assert!(matches!(
        dry.relay_with_material("N1", "N3", 800, &pad),
        Err(KmsError::Depleted { .. })
    ));
    assert!(matches!(
        dry.request_key("N1", "N3", 800),
        Err(KmsError::Depleted { .. })
    ));
    let n12 = dry.store("N1", "N2").unwrap();
    let n23 = dry.store("N2", "N3").unwrap();
    assert_eq!((n12.available_bits(), n12.reserved_bits()), (1_000, 0));
    assert_eq!((n23.available_bits(), n23.reserved_bits()), (500, 0));
    let after = dry.request_key("N1", "N3", 496).unwrap();
    assert_eq!(after.ticket.hop_chain, ["N1", "N2", "N3"]);

    let elapsed = started.elapsed();
    assert!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    println!(
        "PASS criterion 6: {RELAY_REQUESTS} relays delivered {bits_delivered} bits with \
         unique key ids, every hop decodes to the endpoint key, books balance exactly and \
         depleted relays abort atomically ({elapsed:.2?})"
    );
}

#[test]
fn criterion_7_topology_gate() {
    let clean = Command::new(bin())
        .arg("validate")
        .arg(nicosia_path())
        .output()
        .unwrap();
    assert!(
        clean.status.success(),
        "bundled ring rejected: {}",
        String::from_utf8_lossy(&clean.stderr)
    );
    assert!(String::from_utf8_lossy(&clean.stdout).starts_with("OK:"));

    let base: Value =
        serde_json::from_str(&std::fs::read_to_string(nicosia_path()).unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let rejected_with = |name: &str, tag: &str, edit: &dyn Fn(&mut Value)| {
        let mut doc = base.clone();
        edit(&mut doc);
        let path = dir.path().join(format!("{name}.ring"));
        std::fs::write(&path, doc.to_string()).unwrap();
        let out = Command::new(bin()).arg("validate").arg(&path).output().unwrap();
        assert_eq!(out.status.code(), Some(2), "{name}: want the config exit code");
        let text = String::from_utf8_lossy(&out.stdout).to_string();
        assert!(text.contains(tag), "{name}: diagnostics {text:?} lack {tag:?}");
    };

    rejected_with("clockwise-link", "[direction] L12", &|v| {
        v["quantum_links"][0] = json!({
            "id": "L12", "tx": "N2", "rx": "N1", "segments": ["s2", "s1"]
        });
    });
    rejected_with("third-signal", "[segment-occupancy] s5", &|v| {
        let links = v["quantum_links"].as_array_mut().unwrap();
        links.push(json!({"id": "L34b", "tx": "N3", "rx": "N4", "segments": ["s5"]}));
        links.push(json!({"id": "L43", "tx": "N4", "rx": "N3", "segments": ["s5"]}));
    });
    rejected_with("eighth-wavelength", "[wavelength-budget]", &|v| {
        v["classical_channels"].as_array_mut().unwrap().push(json!({
            "id": "enc-spare", "purpose": "encryption",
            "wavelength": "C35", "topology_role": "ring"
        }));
    });
    rejected_with("missing-kms-uplink", "[kms-mesh] N4", &|v| {
        v["classical_channels"]
            .as_array_mut()
            .unwrap()
            .retain(|c| c["id"] != "kms-n4");
    });
    println!(
        "PASS criterion 7: bundled ring validates clean; clockwise link, third signal on a \
         segment, eighth wavelength and missing KMS uplink are each rejected with their rule tag"
    );
}

#[test]
fn criterion_8_simulate_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.json");
    std::fs::write(
        &config,
        json!({ "topology": nicosia_path().canonicalize().unwrap() }).to_string(),
    )
    .unwrap();

    let run = |out_dir: &Path| -> Duration {
        let started = Instant::now();
        let out = Command::new(bin())
            .args(["simulate", "--config"])
            .arg(&config)
            .args(["--days", "5", "--seed", "11", "--out"])
            .arg(out_dir)
            .output()
            .unwrap();
        assert!(
            out.status.success(),
            "simulate failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        started.elapsed()
    };
    let dir_a = dir.path().join("a");
    let dir_b = dir.path().join("b");
    let t_a = run(&dir_a);
    let t_b = run(&dir_b);
    for t in [t_a, t_b] {
        assert!(
            t < Duration::from_secs(300),
            "a 5-day run took {t:?}, budget is 5 minutes"
        );
    }

    let names = |d: &Path| -> BTreeSet<String> {
        std::fs::read_dir(d)
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect()
    };
    let files = names(&dir_a);
    assert_eq!(files, names(&dir_b));
    assert_eq!(files.len(), 5, "four link series plus the summary");
    assert!(files.contains("summary.csv"));
    for name in &files {
        let a = std::fs::read(dir_a.join(name)).unwrap();
        let b = std::fs::read(dir_b.join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name} differs between identically seeded runs");
    }

    let rows = qkdnet_cli::csv::parse_summary(
        "summary.csv",
        &std::fs::read_to_string(dir_a.join("summary.csv")).unwrap(),
    )
    .unwrap();
    assert_eq!(rows.len(), 4);
    let points: u64 = rows.iter().map(|r| r.points).sum();
    let grand =
        rows.iter().map(|r| r.mean_skr_bps * r.points as f64).sum::<f64>() / points as f64;
    assert!(
        (SKR_WINDOW_BPS.0..=SKR_WINDOW_BPS.1).contains(&grand),
        "grand mean link rate {grand:.1} bps falls outside the deployed band"
    );
    println!(
        "PASS criterion 8: two 5-day runs are byte-identical across {} files ({t_a:.2?} and \
         {t_b:.2?} against a 5 minute budget); grand mean link rate {grand:.1} bps",
        files.len()
    );
}
