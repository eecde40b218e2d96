//! Command implementations behind the `qkdnet` binary.
//!
//! Commands read a JSON run configuration naming the topology and, where
//! needed, protocol parameters, noise, seed, default span and consumer
//! profiles. Every random choice flows from the configured root seed, so
//! a command invoked twice with the same inputs writes identical bytes.
//!
//! Failures split into two classes with distinct exit codes: configuration
//! errors (unreadable or invalid inputs, broken topologies, bad argument
//! values) exit with 2, runtime errors (store depletion, model failures,
//! output I/O) with 3.

pub mod csv;

use qkdnet::keyrate::{asymptotic_skr, sweep};
use qkdnet::kms::{run_consumers, ConsumerProfile, KmsError, KmsNetwork, TimedDeposit};
use qkdnet::linkmodel::{ChannelState, LinkError, ProtocolParams};
use qkdnet::simnet::{run_network, DeviceNoise, NetworkRun, SimError};
use qkdnet::topology::{
    load_topology_file, parse_topology, validate, NetworkTopology, TopologyError,
};
use serde::Deserialize;
use serde_json::json;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Command failure, classed by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad inputs: exit code 2.
    #[error("{0}")]
    Config(String),
    /// Failures past configuration: exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<TopologyError> for CliError {
    fn from(e: TopologyError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<LinkError> for CliError {
    fn from(e: LinkError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<qkdnet::keyrate::KeyRateError> for CliError {
    fn from(e: qkdnet::keyrate::KeyRateError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::BadDuration { .. } => CliError::Config(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<KmsError> for CliError {
    fn from(e: KmsError) -> Self {
        match e {
            KmsError::Depleted { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

/// The loss grid a sweep walks, inclusive of both ends.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub start_db: f64,
    pub stop_db: f64,
    pub step_db: f64,
}

impl Default for SweepGrid {
    fn default() -> Self {
        Self {
            start_db: 0.0,
            stop_db: 25.0,
            step_db: 0.5,
        }
    }
}

impl SweepGrid {
    fn points(&self) -> Result<Vec<f64>, CliError> {
        if !self.step_db.is_finite() || self.step_db <= 0.0 {
            return Err(CliError::Config(format!(
                "sweep step must be positive, got {}",
                self.step_db
            )));
        }
        if !self.start_db.is_finite() || !self.stop_db.is_finite() || self.stop_db < self.start_db
        {
            return Err(CliError::Config(format!(
                "sweep range {}..{} dB is empty or unbounded",
                self.start_db, self.stop_db
            )));
        }
        let n = ((self.stop_db - self.start_db) / self.step_db + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| self.start_db + i as f64 * self.step_db).collect())
    }
}

fn default_seed() -> u64 {
    1
}

fn default_days() -> f64 {
    1.0
}

/// One run configuration file. `topology` is resolved relative to the
/// directory holding the config file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub topology: PathBuf,
    #[serde(default)]
    pub params: ProtocolParams,
    #[serde(default)]
    pub noise: DeviceNoise,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_days")]
    pub days: f64,
    #[serde(default)]
    pub sweep: SweepGrid,
    #[serde(default)]
    pub consumers: Vec<ConsumerProfile>,
}

/// Loads a run config and resolves its topology path.
pub fn load_run_config(path: &Path) -> Result<(RunConfig, PathBuf), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: RunConfig = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!(
            "{}: parse error at line {}, column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let topology_path = base.join(&config.topology);
    Ok((config, topology_path))
}

fn load_config_and_topology(path: &Path) -> Result<(RunConfig, NetworkTopology), CliError> {
    let (config, topology_path) = load_run_config(path)?;
    let topo = load_topology_file(&topology_path)?;
    Ok((config, topo))
}

fn write_out(path: &Path, content: &str) -> Result<(), CliError> {
    std::fs::write(path, content)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

/// `validate <topology>`: prints OK and a one-line inventory, or lists
/// every violated invariant and fails with the config exit code.
pub fn cmd_validate(topology: &Path, mut out: impl Write) -> Result<(), CliError> {
    let text = std::fs::read_to_string(topology)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", topology.display())))?;
    let topo = parse_topology(&text)?;
    let diagnostics = validate(&topo);
    if diagnostics.is_empty() {
        writeln!(
            out,
            "OK: {} nodes, {} ODFs, {} segments, {} quantum links, {} classical channels",
            topo.nodes.len(),
            topo.odfs.len(),
            topo.segments.len(),
            topo.links.len(),
            topo.classical_channels.len()
        )
        .map_err(|e| CliError::Runtime(e.to_string()))?;
        Ok(())
    } else {
        for d in &diagnostics {
            writeln!(out, "{d}").map_err(|e| CliError::Runtime(e.to_string()))?;
        }
        Err(CliError::Config(format!(
            "{}: {} invariant violation(s)",
            topology.display(),
            diagnostics.len()
        )))
    }
}

/// `sweep --config --out`: writes `sweep.csv` over the configured grid.
pub fn cmd_sweep(config_path: &Path, out_dir: &Path) -> Result<PathBuf, CliError> {
    let (config, _) = load_run_config(config_path)?;
    config.params.validate().map_err(CliError::from)?;
    let grid = config.sweep.points()?;
    let finite = sweep(&config.params, &grid).map_err(CliError::from)?;
    let mut rows = Vec::with_capacity(finite.len());
    for p in &finite {
        let asymptotic = asymptotic_skr(&config.params, &ChannelState { loss_db: p.loss_db })
            .map_err(CliError::from)?;
        rows.push(csv::SweepRow {
            loss_db: p.loss_db,
            skr_bps: p.skr_bps,
            qber: p.qber,
            skr_asymptotic_bps: asymptotic,
        });
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let path = out_dir.join("sweep.csv");
    write_out(&path, &csv::write_sweep(&rows))?;
    Ok(path)
}

/// Statistics of one simulated link, as written to `summary.csv`.
fn summarize(series: &qkdnet::simnet::LinkTimeSeries) -> csv::SummaryRow {
    let n = series.points.len();
    let mean = |f: &dyn Fn(&qkdnet::simnet::TimeSeriesPoint) -> f64| {
        if n == 0 {
            0.0
        } else {
            series.points.iter().map(f).sum::<f64>() / n as f64
        }
    };
    let std = |f: &dyn Fn(&qkdnet::simnet::TimeSeriesPoint) -> f64, m: f64| {
        if n < 2 {
            0.0
        } else {
            (series
                .points
                .iter()
                .map(|p| (f(p) - m).powi(2))
                .sum::<f64>()
                / (n - 1) as f64)
                .sqrt()
        }
    };
    let skr = &|p: &qkdnet::simnet::TimeSeriesPoint| p.skr_bps;
    let qber = &|p: &qkdnet::simnet::TimeSeriesPoint| p.qber;
    let mean_skr = mean(skr);
    let mean_qber = mean(qber);
    csv::SummaryRow {
        link_id: series.link_id.clone(),
        points: n as u64,
        mean_skr_bps: mean_skr,
        std_skr_bps: std(skr, mean_skr),
        mean_qber,
        std_qber: std(qber, mean_qber),
        total_secret_bits: series.points.iter().map(|p| p.secret_bits).sum(),
    }
}

/// Pairs every deposit with the wall-clock time its block completed.
fn timed_deposits(run: &NetworkRun) -> Vec<TimedDeposit> {
    run.deposits
        .iter()
        .map(|d| {
            let series = run
                .series
                .iter()
                .find(|s| s.link_id == d.link_id)
                .expect("deposits come from simulated links");
            TimedDeposit {
                time_s: series.points[d.block_index as usize].timestamp_s,
                deposit: d.clone(),
            }
        })
        .collect()
}

/// `simulate --config --days --seed --out`: runs the whole ring and writes
/// one `series_<link>.csv` per link plus `summary.csv`; when the config
/// defines consumer profiles, also `consumer_report.json`.
pub fn cmd_simulate(
    config_path: &Path,
    days: Option<f64>,
    seed: Option<u64>,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, CliError> {
    let (config, topo) = load_config_and_topology(config_path)?;
    let days = days.unwrap_or(config.days);
    let seed = seed.unwrap_or(config.seed);
    if !days.is_finite() || days <= 0.0 {
        return Err(CliError::Config(format!(
            "simulated span must be positive, got {days} days"
        )));
    }
    let duration_s = days * 86_400.0;
    let run = run_network(&topo, &config.params, &config.noise, duration_s, seed)?;

    std::fs::create_dir_all(out_dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut written = Vec::new();
    let mut summary = Vec::with_capacity(run.series.len());
    for series in &run.series {
        let path = out_dir.join(format!("series_{}.csv", series.link_id));
        write_out(&path, &csv::write_series(&series.points))?;
        summary.push(summarize(series));
        written.push(path);
    }
    let summary_path = out_dir.join("summary.csv");
    write_out(&summary_path, &csv::write_summary(&summary))?;
    written.push(summary_path);

    if !config.consumers.is_empty() {
        let mut net = KmsNetwork::new(&topo, seed);
        let generation = timed_deposits(&run);
        let report = run_consumers(&mut net, &config.consumers, duration_s, &generation)?;
        let path = out_dir.join("consumer_report.json");
        let text = serde_json::to_string_pretty(&report)
            .map_err(|e| CliError::Runtime(e.to_string()))?;
        write_out(&path, &text)?;
        written.push(path);
    }
    Ok(written)
}

fn seeded_kms(config: &RunConfig, topo: &NetworkTopology) -> Result<KmsNetwork, CliError> {
    if !config.days.is_finite() || config.days <= 0.0 {
        return Err(CliError::Config(format!(
            "seeding span must be positive, got {} days",
            config.days
        )));
    }
    let run = run_network(
        topo,
        &config.params,
        &config.noise,
        config.days * 86_400.0,
        config.seed,
    )?;
    let mut net = KmsNetwork::new(topo, config.seed);
    net.ingest_all(&run.deposits)?;
    Ok(net)
}

fn balances(net: &KmsNetwork) -> serde_json::Value {
    let mut map = serde_json::Map::new();
    for store in net.stores() {
        map.insert(
            format!("{}-{}", store.pair.0, store.pair.1),
            json!({
                "available_bits": store.available_bits(),
                "reserved_bits": store.reserved_bits(),
            }),
        );
    }
    serde_json::Value::Object(map)
}

/// `relay --config --src --dst --bits`: seeds the stores by simulating the
/// configured span, then delivers one key. Prints a JSON report either way;
/// a depleted store reports DEPLETED with unchanged balances and fails with
/// the runtime exit code.
pub fn cmd_relay(
    config_path: &Path,
    src: &str,
    dst: &str,
    bits: u64,
    mut out: impl Write,
) -> Result<(), CliError> {
    let (config, topo) = load_config_and_topology(config_path)?;
    let mut net = seeded_kms(&config, &topo)?;
    let before = balances(&net);
    match net.request_key(src, dst, bits) {
        Ok(delivery) => {
            let report = json!({
                "ok": true,
                "ticket": delivery.ticket,
                "material_hex": qkdnet::kms::to_hex(&delivery.material),
                "hops_on_wire": delivery.wire.len(),
                "balances_before": before,
                "balances_after": balances(&net),
            });
            writeln!(out, "{report}").map_err(|e| CliError::Runtime(e.to_string()))?;
            Ok(())
        }
        Err(e @ KmsError::Depleted { .. }) => {
            let report = json!({
                "ok": false,
                "error": "DEPLETED",
                "message": e.to_string(),
                "balances_before": before,
                "balances_after": balances(&net),
            });
            writeln!(out, "{report}").map_err(|e| CliError::Runtime(e.to_string()))?;
            Err(CliError::from(e))
        }
        Err(e) => Err(CliError::from(e)),
    }
}

/// `kms-serve --config [--socket]`: seeds the stores like `relay`, then
/// serves the JSON-lines key-delivery protocol. With a socket path it
/// accepts Unix-socket connections until killed; without one it serves a
/// single session on stdio and returns at end of input.
pub fn cmd_kms_serve(config_path: &Path, socket: Option<&Path>) -> Result<(), CliError> {
    let (config, topo) = load_config_and_topology(config_path)?;
    let mut net = seeded_kms(&config, &topo)?;
    match socket {
        None => {
            let stdin = std::io::stdin();
            let stdout = std::io::stdout();
            qkdnet::kms::service::serve(&mut net, stdin.lock(), stdout.lock())
                .map_err(|e| CliError::Runtime(format!("stdio session failed: {e}")))
        }
        Some(path) => {
            let _ = std::fs::remove_file(path);
            let listener = std::os::unix::net::UnixListener::bind(path).map_err(|e| {
                CliError::Config(format!("cannot bind socket {}: {e}", path.display()))
            })?;
            eprintln!("listening on {}", path.display());
            loop {
                let (stream, _) = listener
                    .accept()
                    .map_err(|e| CliError::Runtime(format!("accept failed: {e}")))?;
                let reader = std::io::BufReader::new(stream.try_clone().map_err(|e| {
                    CliError::Runtime(format!("cannot clone connection: {e}"))
                })?);
                qkdnet::kms::service::serve(&mut net, reader, stream)
                    .map_err(|e| CliError::Runtime(format!("session failed: {e}")))?;
            }
        }
    }
}
