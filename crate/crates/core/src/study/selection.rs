use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::error::Result;
use crate::graph::InterferenceGraph;
use crate::outcomes::{simulate_panel, true_tte};
use crate::rng::replication_seed;
use crate::select::{lopo, no_rollout, pooled_kfold, train_first, train_last, CandidateSet, Procedure, TrueModel};

use super::config::{GraphKind, ResolvedConfig};
use super::{
    bootstrap_mean_ci, configured_noise, quantiles, replication_graphs, replication_panel, replication_params,
    StudyOutput, ERROR_LEVELS, RESAMPLES,
};

/// One procedure's outcome on one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionRecord {
    pub rep: usize,
    pub procedure: Procedure,
    pub chosen: String,
    pub correct: bool,
    pub tte_hat: f64,
    pub true_tte: f64,
    pub rel_err_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProcedureSummary {
    pub procedure: Procedure,
    pub incorrect: usize,
    pub incorrect_pct: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub median_rel_err_pct: f64,
    pub mean_rel_err_pct: f64,
    /// `[level, value]` pairs of the relative-error distribution.
    pub rel_err_quantiles: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct SelectionStudy {
    /// Replication-major, procedures in [`Procedure::ALL`] order.
    pub records: Vec<SelectionRecord>,
    pub summaries: Vec<ProcedureSummary>,
}

impl SelectionStudy {
    pub fn summary(&self, procedure: Procedure) -> &ProcedureSummary {
        self.summaries.iter().find(|s| s.procedure == procedure).expect("every procedure is summarized")
    }

    pub fn records_csv(&self) -> String {
        records_csv(&self.records, None)
    }

    pub fn output(&self, config: &ResolvedConfig) -> Result<StudyOutput> {
        let summary = json!({
            "study": config.study,
            "config": config,
            "config_hash": config.hash()?,
            "seed": config.seed,
            "replications": config.replications,
            "graphs_resampled_per_replication": config.graph.kind == GraphKind::ErdosRenyi,
            "procedures": self.summaries,
        });
        Ok(StudyOutput {
            files: vec![
                ("records.csv".into(), self.records_csv()),
                ("summary.json".into(), serde_json::to_string_pretty(&summary)? + "\n"),
            ],
        })
    }
}

pub(crate) fn records_csv(records: &[SelectionRecord], edge_p: Option<f64>) -> String {
    let mut out = String::new();
    if edge_p.is_some() {
        out.push_str("graph_p,");
    }
    out.push_str("rep,procedure,chosen,correct,tte_hat,rel_err_pct\n");
    for r in records {
        if let Some(p) = edge_p {
            out.push_str(&format!("{p},"));
        }
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.rep,
            r.procedure.name(),
            r.chosen,
            u8::from(r.correct),
            r.tte_hat,
            r.rel_err_pct
        ));
    }
    out
}

/// All five procedures on one simulated roll-out.
fn selection_replication(
    config: &ResolvedConfig,
    edge_p: Option<f64>,
    fixed: &(Option<InterferenceGraph>, Option<InterferenceGraph>),
    rep: usize,
) -> Result<Vec<SelectionRecord>> {
    let rep_seed = replication_seed(config.seed, rep);
    let (primary, alternate) = replication_graphs(config, edge_p, fixed, rep_seed)?;
    let specs = config
        .candidates
        .iter()
        .map(|c| c.instantiate(&primary, alternate.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let truth_spec = specs[config.truth_index()].clone();
    let candidates = CandidateSet::new(specs)?;
    let params = replication_params(config, &truth_spec, configured_noise(config), rep_seed)?;
    let panel = replication_panel(config, &config.schedule()?, rep_seed)?;
    let y = simulate_panel(&truth_spec, &params, &panel, rep_seed)?;
    let tte = true_tte(&truth_spec, &params);
    let truth = TrueModel { spec: truth_spec, params };
    let reports = [
        no_rollout(&candidates, &truth, config.periods, rep_seed)?,
        pooled_kfold(&candidates, &panel, &y, config.folds, rep_seed)?,
        train_first(&candidates, &panel, &y)?,
        train_last(&candidates, &panel, &y)?,
        lopo(&candidates, &panel, &y)?,
    ];
    Ok(reports
        .iter()
        .map(|report| {
            let tte_hat = report.chosen_score().tte_hat;
            SelectionRecord {
                rep,
                procedure: report.procedure,
                chosen: report.chosen.clone(),
                correct: report.chosen == truth.spec.label(),
                tte_hat,
                true_tte: tte,
                rel_err_pct: (tte_hat - tte).abs() / tte.abs() * 100.0,
            }
        })
        .collect())
}

pub(crate) fn selection_records(config: &ResolvedConfig, edge_p: Option<f64>) -> Result<Vec<SelectionRecord>> {
    let fixed = config.load_edge_lists()?;
    let per_rep = (0..config.replications)
        .into_par_iter()
        .map(|rep| selection_replication(config, edge_p, &fixed, rep))
        .collect::<Result<Vec<_>>>()?;
    Ok(per_rep.into_iter().flatten().collect())
}

/// Aggregates replication-major records whose procedures follow [`Procedure::ALL`].
pub(crate) fn summarize(records: &[SelectionRecord], seed: u64) -> Vec<ProcedureSummary> {
    let k = Procedure::ALL.len();
    let indicators: Vec<Vec<f64>> = records
        .chunks(k)
        .map(|rep| rep.iter().map(|r| f64::from(u8::from(!r.correct))).collect())
        .collect();
    let cis = bootstrap_mean_ci(&indicators, RESAMPLES, seed);
    let reps = indicators.len();
    Procedure::ALL
        .iter()
        .enumerate()
        .map(|(col, &procedure)| {
            let mine: Vec<&SelectionRecord> = records.iter().filter(|r| r.procedure == procedure).collect();
            let incorrect = mine.iter().filter(|r| !r.correct).count();
            let errors: Vec<f64> = mine.iter().map(|r| r.rel_err_pct).collect();
            let finite: Vec<f64> = errors.iter().copied().filter(|e| e.is_finite()).collect();
            let levels = quantiles(&errors, &ERROR_LEVELS);
            ProcedureSummary {
                procedure,
                incorrect,
                incorrect_pct: 100.0 * incorrect as f64 / reps as f64,
                ci_low: 100.0 * cis[col].0,
                ci_high: 100.0 * cis[col].1,
                median_rel_err_pct: levels[3],
                mean_rel_err_pct: finite.iter().sum::<f64>() / finite.len() as f64,
                rel_err_quantiles: ERROR_LEVELS.iter().zip(levels).map(|(&l, v)| [l, v]).collect(),
            }
        })
        .collect()
}

/// Repeats the roll-out experiment and runs every selection procedure on it.
pub fn run_selection_study(config: &ResolvedConfig) -> Result<SelectionStudy> {
    let records = selection_records(config, None)?;
    let summaries = summarize(&records, config.seed);
    Ok(SelectionStudy { records, summaries })
}
