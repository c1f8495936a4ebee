use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::estimate::{build_design, contrast_vector, estimate_tte, fit, mse_bound};
use crate::outcomes::{simulate_panel, true_tte, NoiseRegime, NoiseSpec};
use crate::rng::{replication_seed, seeded, stream};
use crate::rollout::{sample_static_with, RolloutSchedule};

use super::config::ResolvedConfig;
use super::{replication_graphs, replication_panel, replication_params, StudyOutput};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceDesign {
    /// Even completely randomized roll-out to the configured final fraction.
    Rollout,
    /// The final fraction treated in every period, re-randomized each period.
    NoRollout,
}

impl VarianceDesign {
    fn name(self) -> &'static str {
        match self {
            VarianceDesign::Rollout => "rollout",
            VarianceDesign::NoRollout => "no_rollout",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRecord {
    pub rep: usize,
    pub tte_hat: f64,
    pub lambda_min: f64,
    pub identified: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceCell {
    pub regime: NoiseRegime,
    pub design: VarianceDesign,
    pub periods: usize,
    pub reps: usize,
    pub true_tte: f64,
    pub mean_tte_hat: f64,
    pub variance: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Monte Carlo `E[(TTE_hat - TTE)^2]`.
    pub mse: f64,
    pub mean_inv_lambda_min: f64,
    pub bound: f64,
    pub identified_share: f64,
    #[serde(skip)]
    pub records: Vec<VarianceRecord>,
}

#[derive(Debug, Clone)]
pub struct VarianceStudy {
    pub cells: Vec<VarianceCell>,
}

impl VarianceStudy {
    pub fn cell(&self, regime: NoiseRegime, design: VarianceDesign, periods: usize) -> Option<&VarianceCell> {
        self.cells.iter().find(|c| c.regime == regime && c.design == design && c.periods == periods)
    }

    pub fn output(&self, config: &ResolvedConfig) -> Result<StudyOutput> {
        let mut records = String::from("regime,design,T,rep,tte_hat,lambda_min,identified\n");
        let mut sweep = String::from("regime,design,T,variance,ci_low,ci_high,mse,bound,identified_share\n");
        for cell in &self.cells {
            let regime = regime_name(cell.regime);
            for r in &cell.records {
                records.push_str(&format!(
                    "{regime},{},{},{},{},{},{}\n",
                    cell.design.name(),
                    cell.periods,
                    r.rep,
                    r.tte_hat,
                    r.lambda_min,
                    u8::from(r.identified)
                ));
            }
            sweep.push_str(&format!(
                "{regime},{},{},{},{},{},{},{},{}\n",
                cell.design.name(),
                cell.periods,
                cell.variance,
                cell.ci_low,
                cell.ci_high,
                cell.mse,
                cell.bound,
                cell.identified_share
            ));
        }
        let summary = json!({
            "study": config.study,
            "config": config,
            "config_hash": config.hash()?,
            "seed": config.seed,
            "replications": config.replications,
            "cells": self.cells,
        });
        Ok(StudyOutput {
            files: vec![
                ("records.csv".into(), records),
                ("sweep.csv".into(), sweep),
                ("summary.json".into(), serde_json::to_string_pretty(&summary)? + "\n"),
            ],
        })
    }
}

fn regime_name(regime: NoiseRegime) -> &'static str {
    match regime {
        NoiseRegime::None => "none",
        NoiseRegime::TimeInvariant => "time_invariant",
        NoiseRegime::TimeVarying => "time_varying",
    }
}

/// 95% interval `[(r-1) s^2 / chi2_0.975, (r-1) s^2 / chi2_0.025]`.
pub fn chi_square_interval(variance: f64, reps: usize) -> Result<(f64, f64)> {
    if reps < 2 {
        return Err(Error::InvalidArgument("variance intervals need at least 2 replications".into()));
    }
    let df = (reps - 1) as f64;
    let chi = ChiSquared::new(df).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok((df * variance / chi.inverse_cdf(0.975), df * variance / chi.inverse_cdf(0.025)))
}

/// Monte Carlo distribution of the TTE estimate for one noise regime,
/// design and number of periods.
pub fn variance_cell(
    config: &ResolvedConfig,
    regime: NoiseRegime,
    design: VarianceDesign,
    periods: usize,
) -> Result<VarianceCell> {
    let template = config.truth_template()?;
    let total = config.total_fraction()?;
    let schedule = RolloutSchedule::even(total, periods)?;
    let noise = NoiseSpec { regime, sigma: config.truth.sigma };
    let fixed = config.load_edge_lists()?;
    let per_rep = (0..config.replications)
        .into_par_iter()
        .map(|rep| -> Result<(VarianceRecord, f64, f64, usize)> {
            let rep_seed = replication_seed(config.seed, rep);
            let (primary, alternate) = replication_graphs(config, None, &fixed, rep_seed)?;
            let spec = template.instantiate(&primary, alternate.as_ref())?;
            let params = replication_params(config, &spec, noise, rep_seed)?;
            let panel = match design {
                VarianceDesign::Rollout => replication_panel(config, &schedule, rep_seed)?,
                VarianceDesign::NoRollout => {
                    sample_static_with(config.n, periods, total, &mut seeded(rep_seed, stream::TREATMENT))?
                }
            };
            let y = simulate_panel(&spec, &params, &panel, rep_seed)?;
            let design_matrix = build_design(&spec, &panel)?;
            let fitted = fit(&design_matrix, &y.stacked())?;
            let c = contrast_vector(&spec, periods);
            let tte = estimate_tte(&fitted, &c, &design_matrix)?;
            let record = VarianceRecord {
                rep,
                tte_hat: tte.value,
                lambda_min: fitted.gram_min_eigenvalue,
                identified: tte.identified,
            };
            Ok((record, true_tte(&spec, &params), c.norm_squared(), design_matrix.k()))
        })
        .collect::<Result<Vec<_>>>()?;
    let reps = per_rep.len();
    let records: Vec<VarianceRecord> = per_rep.iter().map(|r| r.0).collect();
    let truth = per_rep.iter().map(|r| r.1).sum::<f64>() / reps as f64;
    let estimates: Vec<f64> = records.iter().map(|r| r.tte_hat).collect();
    let mean = estimates.iter().sum::<f64>() / reps as f64;
    let variance = if reps > 1 {
        estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (reps - 1) as f64
    } else {
        0.0
    };
    let (ci_low, ci_high) = if reps > 1 { chi_square_interval(variance, reps)? } else { (0.0, 0.0) };
    let mse = per_rep.iter().map(|(r, t, _, _)| (r.tte_hat - t).powi(2)).sum::<f64>() / reps as f64;
    let mean_inv_lambda_min =
        records.iter().map(|r| if r.lambda_min > 0.0 { 1.0 / r.lambda_min } else { f64::INFINITY }).sum::<f64>()
            / reps as f64;
    let c_norm2 = per_rep.iter().map(|r| r.2).sum::<f64>() / reps as f64;
    let k = per_rep[0].3;
    Ok(VarianceCell {
        regime,
        design,
        periods,
        reps,
        true_tte: truth,
        mean_tte_hat: mean,
        variance,
        ci_low,
        ci_high,
        mse,
        mean_inv_lambda_min,
        bound: mse_bound(regime, k, periods, c_norm2, config.truth.sigma, mean_inv_lambda_min),
        identified_share: records.iter().filter(|r| r.identified).count() as f64 / reps as f64,
        records,
    })
}

/// Variance of the TTE estimate under fixed and period-specific noise, with
/// and without a roll-out, for `T = 1..=periods`.
pub fn run_variance_study(config: &ResolvedConfig) -> Result<VarianceStudy> {
    let mut cells = Vec::new();
    for regime in [NoiseRegime::TimeInvariant, NoiseRegime::TimeVarying] {
        for design in [VarianceDesign::Rollout, VarianceDesign::NoRollout] {
            for periods in 1..=config.periods {
                cells.push(variance_cell(config, regime, design, periods)?);
            }
        }
    }
    Ok(VarianceStudy { cells })
}
