//! Config-driven simulation studies and their on-disk outputs.

pub mod config;
mod selection;
mod sweeps;
mod variance;

use std::fs;
use std::path::Path;

use rand_distr::{Distribution, Normal};
use statrs::statistics::{Data, OrderStatistics};

use crate::error::{Error, Result};
use crate::graph::InterferenceGraph;
use crate::outcomes::{Intercept, ModelSpec, NoiseSpec, TrueParams};
use crate::rng::{seeded, stream};
use crate::rollout::{sample_bernoulli_with, sample_crd_with, RolloutSchedule, TreatmentPanel};

pub use config::{ExperimentConfig, GraphKind, ResolvedConfig, ScheduleConfig, StudyKind};
pub use selection::{run_selection_study, ProcedureSummary, SelectionRecord, SelectionStudy};
pub use sweeps::{run_identification_sweep, run_sparsity_sweep, IdentificationSweep, SparsityPoint, SparsitySweep};
pub use variance::{run_variance_study, VarianceCell, VarianceDesign, VarianceRecord, VarianceStudy};

use config::DesignConfig;

/// Named text files produced by a study.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyOutput {
    pub files: Vec<(String, String)>,
}

impl StudyOutput {
    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, body)| body.as_str())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (name, body) in &self.files {
            fs::write(dir.join(name), body)?;
        }
        Ok(())
    }
}

/// Runs whichever study `config` names.
pub fn run_study(config: &ResolvedConfig) -> Result<StudyOutput> {
    match config.study {
        StudyKind::Selection => run_selection_study(config)?.output(config),
        StudyKind::Identification => run_identification_sweep(config)?.output(config),
        StudyKind::Variance => run_variance_study(config)?.output(config),
        StudyKind::Sparsity => run_sparsity_sweep(config)?.output(config),
    }
}

/// Graphs for one replication. Erdos-Renyi graphs are redrawn from the
/// replication seed; edge lists are shared by every replication.
pub(crate) fn replication_graphs(
    config: &ResolvedConfig,
    edge_p: Option<f64>,
    fixed: &(Option<InterferenceGraph>, Option<InterferenceGraph>),
    rep_seed: u64,
) -> Result<(InterferenceGraph, Option<InterferenceGraph>)> {
    let needs_alternate = config.candidates.iter().any(|c| c.uses_alternate_graph());
    match config.graph.kind {
        GraphKind::ErdosRenyi => {
            let p = edge_p
                .or(config.graph.p)
                .ok_or_else(|| Error::Config("missing edge probability".into()))?;
            let primary = InterferenceGraph::erdos_renyi_with(config.n, p, &mut seeded(rep_seed, stream::GRAPH))?;
            let alternate = if needs_alternate {
                Some(InterferenceGraph::erdos_renyi_with(config.n, p, &mut seeded(rep_seed, stream::GRAPH_ALT))?)
            } else {
                None
            };
            Ok((primary, alternate))
        }
        GraphKind::Complete => Ok((InterferenceGraph::complete(config.n)?, None)),
        GraphKind::EdgeList => {
            let primary = fixed.0.clone().ok_or_else(|| Error::Config("edge list not loaded".into()))?;
            Ok((primary, fixed.1.clone()))
        }
    }
}

/// Ground-truth coefficients for `spec`. Unit and period effects, when the
/// model has them, are drawn from the replication seed.
pub(crate) fn replication_params(
    config: &ResolvedConfig,
    spec: &ModelSpec,
    noise: NoiseSpec,
    rep_seed: u64,
) -> Result<TrueParams> {
    let truth = &config.truth;
    let sd = Normal::new(0.0, truth.effects_sd)
        .map_err(|e| Error::Config(format!("invalid effects_sd {}: {e}", truth.effects_sd)))?;
    let mut rng = seeded(rep_seed, stream::FIXED_EFFECTS);
    let alpha = if spec.unit_effects() {
        Intercept::PerUnit((0..spec.n()).map(|_| truth.alpha + sd.sample(&mut rng)).collect())
    } else {
        Intercept::Shared(truth.alpha)
    };
    let gamma = if spec.period_effects() {
        (0..config.periods).map(|_| sd.sample(&mut rng)).collect()
    } else {
        Vec::new()
    };
    Ok(TrueParams { alpha, gamma, psi: Vec::new(), tau: truth.tau, eta: config.eta(), noise })
}

pub(crate) fn configured_noise(config: &ResolvedConfig) -> NoiseSpec {
    NoiseSpec { regime: config.truth.noise, sigma: config.truth.sigma }
}

pub(crate) fn replication_panel(config: &ResolvedConfig, schedule: &RolloutSchedule, rep_seed: u64) -> Result<TreatmentPanel> {
    let mut rng = seeded(rep_seed, stream::TREATMENT);
    match config.design {
        DesignConfig::CompletelyRandomized => sample_crd_with(config.n, schedule, &mut rng),
        DesignConfig::Bernoulli => sample_bernoulli_with(config.n, schedule, &mut rng),
    }
}

/// Quantiles of the finite entries of `values`.
pub(crate) fn quantiles(values: &[f64], levels: &[f64]) -> Vec<f64> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return vec![f64::NAN; levels.len()];
    }
    let mut data = Data::new(finite);
    levels.iter().map(|&q| data.quantile(q)).collect()
}

/// Percentile bootstrap 95% interval for the mean of each column of
/// `indicators[rep][column]`, resampling replications jointly. The interval
/// is widened if needed so that it contains the point estimate.
pub(crate) fn bootstrap_mean_ci(indicators: &[Vec<f64>], resamples: usize, seed: u64) -> Vec<(f64, f64)> {
    use rand::Rng;
    let reps = indicators.len();
    let columns = indicators.first().map_or(0, Vec::len);
    let mut rng = seeded(seed, stream::BOOTSTRAP);
    let mut draws = vec![Vec::with_capacity(resamples); columns];
    for _ in 0..resamples {
        let mut sums = vec![0.0; columns];
        for _ in 0..reps {
            let row = &indicators[rng.random_range(0..reps)];
            for (s, v) in sums.iter_mut().zip(row) {
                *s += v;
            }
        }
        for (d, s) in draws.iter_mut().zip(sums) {
            d.push(s / reps as f64);
        }
    }
    draws
        .into_iter()
        .enumerate()
        .map(|(col, d)| {
            let point = indicators.iter().map(|r| r[col]).sum::<f64>() / reps as f64;
            let mut data = Data::new(d);
            (data.quantile(0.025).min(point), data.quantile(0.975).max(point))
        })
        .collect()
}

pub(crate) const RESAMPLES: usize = 1000;

/// Levels reported for relative-error distributions.
pub(crate) const ERROR_LEVELS: [f64; 7] = [0.0, 0.05, 0.25, 0.5, 0.75, 0.95, 1.0];
