use serde::Serialize;
use serde_json::json;

use crate::error::Result;
use crate::identify::{curves_to_csv, identification_curve, identification_flags, IdentificationCurve};
use crate::select::Procedure;

use super::config::ResolvedConfig;
use super::selection::{records_csv, selection_records, summarize, ProcedureSummary, SelectionRecord};
use super::StudyOutput;

#[derive(Debug, Clone)]
pub struct IdentificationSweep {
    pub curves: Vec<IdentificationCurve>,
    /// `flags[grid index][rep][t]`
    pub flags: Vec<Vec<Vec<bool>>>,
}

impl IdentificationSweep {
    pub fn curve(&self, graph_p: f64) -> Option<&IdentificationCurve> {
        self.curves.iter().find(|c| c.graph_p == graph_p)
    }

    pub fn output(&self, config: &ResolvedConfig) -> Result<StudyOutput> {
        let mut records = String::from("graph_p,rep,T,identified\n");
        for (curve, flags) in self.curves.iter().zip(&self.flags) {
            for (rep, row) in flags.iter().enumerate() {
                for (t, ok) in row.iter().enumerate() {
                    records.push_str(&format!("{},{rep},{},{}\n", curve.graph_p, t + 1, u8::from(*ok)));
                }
            }
        }
        let summary = json!({
            "study": config.study,
            "config": config,
            "config_hash": config.hash()?,
            "seed": config.seed,
            "replications": config.replications,
            "curves": self.curves,
        });
        Ok(StudyOutput {
            files: vec![
                ("records.csv".into(), records),
                ("sweep.csv".into(), curves_to_csv(&self.curves)),
                ("summary.json".into(), serde_json::to_string_pretty(&summary)? + "\n"),
            ],
        })
    }
}

/// Probability that the TTE is identified after each roll-out period, for
/// every edge probability in the grid.
pub fn run_identification_sweep(config: &ResolvedConfig) -> Result<IdentificationSweep> {
    let template = config.truth_template()?;
    let schedule = config.schedule()?;
    let mut curves = Vec::new();
    let mut all_flags = Vec::new();
    for &p in &config.edge_probabilities {
        let flags = identification_flags(template, &schedule, config.n, p, config.replications, config.seed)?;
        curves.push(identification_curve(p, &flags));
        all_flags.push(flags);
    }
    Ok(IdentificationSweep { curves, flags: all_flags })
}

#[derive(Debug, Clone, Serialize)]
pub struct SparsityPoint {
    pub graph_p: f64,
    pub procedures: Vec<ProcedureSummary>,
}

#[derive(Debug, Clone)]
pub struct SparsitySweep {
    pub points: Vec<SparsityPoint>,
    pub records: Vec<Vec<SelectionRecord>>,
}

impl SparsitySweep {
    pub fn incorrect_pct(&self, graph_p: f64, procedure: Procedure) -> Option<f64> {
        let point = self.points.iter().find(|p| p.graph_p == graph_p)?;
        point.procedures.iter().find(|s| s.procedure == procedure).map(|s| s.incorrect_pct)
    }

    pub fn output(&self, config: &ResolvedConfig) -> Result<StudyOutput> {
        let mut records = String::new();
        for (point, recs) in self.points.iter().zip(&self.records) {
            let csv = records_csv(recs, Some(point.graph_p));
            let body = if records.is_empty() { &csv[..] } else { csv.split_once('\n').map_or("", |(_, b)| b) };
            records.push_str(body);
        }
        let mut sweep = String::from("graph_p,procedure,incorrect_pct,ci_low,ci_high,median_rel_err_pct\n");
        for point in &self.points {
            for s in &point.procedures {
                sweep.push_str(&format!(
                    "{},{},{},{},{},{}\n",
                    point.graph_p,
                    s.procedure.name(),
                    s.incorrect_pct,
                    s.ci_low,
                    s.ci_high,
                    s.median_rel_err_pct
                ));
            }
        }
        let summary = json!({
            "study": config.study,
            "config": config,
            "config_hash": config.hash()?,
            "seed": config.seed,
            "replications": config.replications,
            "graphs_resampled_per_replication": true,
            "points": self.points,
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

/// The selection study repeated over a grid of Erdos-Renyi edge probabilities.
pub fn run_sparsity_sweep(config: &ResolvedConfig) -> Result<SparsitySweep> {
    let mut points = Vec::new();
    let mut records = Vec::new();
    for &p in &config.edge_probabilities {
        let recs = selection_records(config, Some(p))?;
        points.push(SparsityPoint { graph_p: p, procedures: summarize(&recs, config.seed) });
        records.push(recs);
    }
    Ok(SparsitySweep { points, records })
}
