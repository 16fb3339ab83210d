//! Sweeps over `(λ, ε, h, N, seed)` and the tradeoff table they produce.
//!
//! Seed `s` of a sweep fixes the train/test split, the silo partition and
//! every sampling and noise stream, so all grid points see the same random
//! numbers for the same seed. Cells run on a rayon pool and are collected in
//! grid order; the table does not depend on the number of workers.

mod config;
mod table;

use std::time::Instant;

use rayon::prelude::*;

pub use config::{ExperimentConfig, Mode};
pub use table::{
    cells_path, emit_tradeoff_table, failures_path, format_g, read_tradeoff_table, summarize, CellDetails,
    TradeoffRecord, HEADER,
};

use crate::dataio::{
    conditional_sensitive, load_csv, partition_heterogeneous, sensitive_distribution, train_test_split, Schema,
    Standardizer, TabularDataset,
};
use crate::error::{Error, Result};
use crate::fairness::{FairnessNotion, FairnessSpec};
use crate::federation::{run_steffle, RoundConfig, SteffleConfig, Topology, TopologyMode};
use crate::metrics::evaluate;
use crate::privacy::{min_rounds, steffle_noise, PrivacyBudget};

/// One grid point and seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub lambda: f64,
    pub epsilon: f64,
    pub h: f64,
    pub silos: usize,
    pub seed: u64,
}

/// Grid points in `λ, ε, h, N` order, each followed by its seeds.
pub fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &lambda in &cfg.effective_lambdas() {
        for &epsilon in &cfg.effective_epsilons() {
            for &h in &cfg.effective_heterogeneity() {
                for &silos in &cfg.effective_silos() {
                    for t in 0..cfg.trials {
                        out.push(Cell { lambda, epsilon, h, silos, seed: cfg.seed_base.wrapping_add(t as u64) });
                    }
                }
            }
        }
    }
    out
}

fn partition_seed(seed: u64) -> u64 {
    seed ^ 0x5eed_0f_5170_u64
}

/// Standardized train and test splits for one seed.
pub fn split_for_seed(
    data: &TabularDataset<f64>,
    cfg: &ExperimentConfig,
    seed: u64,
) -> Result<(TabularDataset<f64>, TabularDataset<f64>)> {
    let (mut train, mut test) = train_test_split(data, cfg.train_ratio, seed)?;
    let scaler = Standardizer::fit(&train);
    scaler.apply(&mut train);
    scaler.apply(&mut test);
    Ok((train, test))
}

fn observed_rho(train: &TabularDataset<f64>, notion: FairnessNotion) -> Result<f64> {
    Ok(match notion {
        FairnessNotion::DemographicParity => sensitive_distribution(train)?.rho,
        FairnessNotion::EqualizedOdds => {
            conditional_sensitive(train)?.per_label.iter().map(|d| d.rho).fold(f64::INFINITY, f64::min)
        }
    })
}

fn build_topology(train: &TabularDataset<f64>, cfg: &ExperimentConfig, cell: &Cell) -> Result<Topology> {
    let topology = if cell.silos == 1 {
        Topology::single_silo(train.n())?
    } else {
        let partition =
            partition_heterogeneous(train, cell.silos, cell.h, &cfg.partition_attribute, partition_seed(cell.seed))?;
        match cfg.topology {
            TopologyMode::CentralSensitive => Topology::central_sensitive(&partition)?,
            _ => Topology::federated(&partition)?,
        }
    };
    Ok(topology.with_dummy_noise(cfg.dummy_noise))
}

/// Round schedule of a cell with `n_tilde` rows in its smallest silo.
pub fn round_config(cfg: &ExperimentConfig, n_tilde: usize) -> Result<RoundConfig<f64>> {
    let batch = cfg.batch.min(n_tilde);
    let mut rc = RoundConfig::from_epochs(cfg.eta_theta, cfg.eta_w, cfg.epochs, n_tilde, batch, cfg.lr_decay)?;
    rc.sampling = cfg.sampling;
    rc.selection = cfg.selection;
    Ok(rc)
}

fn failed_record(cell: &Cell, cfg: &ExperimentConfig, reason: String) -> TradeoffRecord {
    TradeoffRecord {
        lambda: cell.lambda,
        epsilon: cell.epsilon,
        h: cell.h,
        silos: cell.silos,
        seed: Some(cell.seed),
        error: f64::NAN,
        dp_violation: f64::NAN,
        eo_violation: f64::NAN,
        sigma_theta_sq: f64::NAN,
        sigma_w_sq: f64::NAN,
        seconds: 0.0,
        cell: Some(CellDetails {
            delta: cfg.delta,
            rounds: 0,
            n_tilde: 0,
            noise_batch: 0,
            rho: f64::NAN,
            l_theta: cfg.l_theta.unwrap_or(if cfg.clip.is_finite() { cfg.clip } else { 1.0 }),
            diameter: cfg.diameter,
            failure: Some(reason),
        }),
    }
}

/// Trains and evaluates one cell on pre-split data.
pub fn run_cell(
    cfg: &ExperimentConfig,
    cell: &Cell,
    train: &TabularDataset<f64>,
    test: &TabularDataset<f64>,
) -> Result<TradeoffRecord> {
    let start = Instant::now();
    let topology = build_topology(train, cfg, cell)?;
    let n_tilde = topology.nonsensitive.iter().map(Vec::len).min().unwrap_or(0);
    let rc = round_config(cfg, n_tilde)?;
    let rho = match cfg.rho {
        Some(r) => r,
        None => observed_rho(train, cfg.notion)?,
    };
    let budget = if cell.epsilon.is_finite() {
        PrivacyBudget::new(cell.epsilon, cfg.delta, rho)?
    } else {
        PrivacyBudget::non_private(cfg.delta, rho)?
    };
    let spec = FairnessSpec::new(cfg.notion, cell.lambda)?;
    let mut sc = SteffleConfig::new(rc.clone(), cfg.diameter, cfg.clip);
    if let Some(l) = cfg.l_theta {
        sc.l_theta = l;
    }
    let out = run_steffle(train, &topology, &spec, &budget, &sc, cell.seed)?;
    let report = evaluate(&out.theta_hat, test)?;

    // the silo with the largest noise is the smallest sensitive holder
    let (loudest, _) = out
        .noise
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (c, s)| if s.sigma_w_sq > best.1 { (c, s.sigma_w_sq) } else { best });
    let noise = out.max_noise();
    let noise_batch = (topology.expected_sensitive_batch(loudest, rc.batch).floor() as usize).max(1);
    Ok(TradeoffRecord {
        lambda: cell.lambda,
        epsilon: cell.epsilon,
        h: cell.h,
        silos: cell.silos,
        seed: Some(cell.seed),
        error: report.error,
        dp_violation: report.dp_violation,
        eo_violation: report.eo_violation,
        sigma_theta_sq: noise.sigma_theta_sq,
        sigma_w_sq: noise.sigma_w_sq,
        seconds: if cfg.timing { start.elapsed().as_secs_f64() } else { 0.0 },
        cell: Some(CellDetails {
            delta: cfg.delta,
            rounds: rc.rounds,
            n_tilde: topology.sensitive[loudest].len(),
            noise_batch,
            rho,
            l_theta: sc.l_theta,
            diameter: cfg.diameter,
            failure: None,
        }),
    })
}

/// Recomputes a record's noise variances from its calibration inputs.
pub fn recompute_noise(record: &TradeoffRecord) -> Result<(f64, f64)> {
    let c = record
        .cell
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("record carries no calibration inputs".into()))?;
    let budget = if record.epsilon.is_finite() {
        PrivacyBudget::new(record.epsilon, c.delta, c.rho)?
    } else {
        PrivacyBudget::non_private(c.delta, c.rho)?
    };
    let s = steffle_noise(&budget, c.rounds, c.n_tilde, c.noise_batch, c.l_theta, c.diameter)?;
    Ok((s.sigma_theta_sq, s.sigma_w_sq))
}

fn load(cfg: &ExperimentConfig) -> Result<TabularDataset<f64>> {
    let schema = Schema::from_file(&cfg.schema)?;
    load_csv(&cfg.data, &schema)
}

/// Static checks plus the data-dependent ones: every `N` fits the training
/// split and every finite `ε` admits the configured round count.
pub fn validate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.check_static()?;
    let data = load(cfg)?;
    if !data.attributes.contains_key(&cfg.partition_attribute)
        && cfg.effective_silos().iter().any(|&n| n > 1)
    {
        return Err(Error::Config(format!(
            "partition attribute `{}` is not marked in the schema",
            cfg.partition_attribute
        )));
    }
    let n_train = (cfg.train_ratio * data.n() as f64 - 1e-9).ceil() as usize;
    for &silos in &cfg.effective_silos() {
        if silos > n_train {
            return Err(Error::Config(format!("N = {silos} exceeds {n_train} training rows")));
        }
        let n_tilde = n_train / silos;
        let rc = round_config(cfg, n_tilde)?;
        let calibrations: Vec<(usize, usize)> = match (cfg.topology, silos) {
            (TopologyMode::CentralSensitive, s) if s > 1 => vec![(n_train, rc.batch * s)],
            _ => vec![(n_tilde, rc.batch)],
        };
        for &eps in cfg.effective_epsilons().iter().filter(|e| e.is_finite()) {
            for &(n, m) in &calibrations {
                let need = min_rounds(eps, n, m);
                if (rc.rounds as f64) < need {
                    return Err(Error::Config(format!(
                        "ε = {eps}, N = {silos}: {} rounds is below the required (ñ√ε/(2m))² = {need:.1} \
                         (ñ = {n}, m = {m}); raise epochs or batch",
                        rc.rounds
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Seed rows and summary rows of the full sweep. Failed cells are kept as
/// rows of NaN with the reason in [`CellDetails::failure`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<TradeoffRecord>> {
    validate(cfg)?;
    let data = load(cfg)?;
    let seeds: Vec<u64> = (0..cfg.trials).map(|t| cfg.seed_base.wrapping_add(t as u64)).collect();
    let splits: Vec<Result<(TabularDataset<f64>, TabularDataset<f64>)>> =
        seeds.iter().map(|&s| split_for_seed(&data, cfg, s)).collect();
    let grid = cells(cfg);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let records: Vec<TradeoffRecord> = pool.install(|| {
        grid.par_iter()
            .map(|cell| {
                let t = cell.seed.wrapping_sub(cfg.seed_base) as usize;
                let outcome = match &splits[t] {
                    Ok((train, test)) => run_cell(cfg, cell, train, test),
                    Err(e) => Err(Error::Config(e.to_string())),
                };
                match outcome {
                    Ok(r) => {
                        log::info!(
                            "λ={} ε={} h={} N={} seed={}: error {:.4}, dp {:.4}",
                            cell.lambda, cell.epsilon, cell.h, cell.silos, cell.seed, r.error, r.dp_violation
                        );
                        r
                    }
                    Err(e) => {
                        log::warn!("λ={} ε={} h={} N={} seed={} failed: {e}", cell.lambda, cell.epsilon, cell.h, cell.silos, cell.seed);
                        failed_record(cell, cfg, e.to_string())
                    }
                }
            })
            .collect()
    });
    Ok(summarize(&records))
}
