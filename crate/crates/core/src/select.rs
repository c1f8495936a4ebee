//! Model selection across candidate interference models.
//!
//! `lopo` is the leave-one-period-out procedure; the others are the
//! baselines it is compared against. Every procedure scores candidates by
//! held-out mean squared prediction error and picks the smallest, with ties
//! going to the earlier candidate.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{build_design, contrast_vector, estimate_tte, fit, fit_matrix, prediction_mse, DesignMatrix};
use crate::outcomes::{simulate_panel_on_stream, ModelSpec, OutcomePanel, TrueParams};
use crate::rng::{seeded, stream};
use crate::rollout::{sample_static_with, TreatmentPanel};

pub const DEFAULT_FOLDS: usize = 10;

/// Ordered, non-empty list of candidate models with unique labels.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    specs: Vec<ModelSpec>,
}

impl CandidateSet {
    pub fn new(specs: Vec<ModelSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::InvalidArgument("candidate set is empty".into()));
        }
        let mut seen = HashSet::new();
        for spec in &specs {
            if !seen.insert(spec.label()) {
                return Err(Error::InvalidArgument(format!("duplicate candidate label {:?}", spec.label())));
            }
        }
        Ok(Self { specs })
    }

    pub fn specs(&self) -> &[ModelSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn position(&self, label: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.label() == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Procedure {
    NoRollout,
    #[serde(rename = "pooled_kfold")]
    PooledKFold,
    TrainFirst,
    TrainLast,
    Lopo,
}

impl Procedure {
    pub const ALL: [Procedure; 5] =
        [Procedure::NoRollout, Procedure::PooledKFold, Procedure::TrainFirst, Procedure::TrainLast, Procedure::Lopo];

    pub fn name(self) -> &'static str {
        match self {
            Procedure::NoRollout => "no_rollout",
            Procedure::PooledKFold => "pooled_kfold",
            Procedure::TrainFirst => "train_first",
            Procedure::TrainLast => "train_last",
            Procedure::Lopo => "lopo",
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateScore {
    pub label: String,
    pub mean_mspe: f64,
    pub fold_mspes: Vec<f64>,
    /// TTE estimate from a fit on all of the procedure's data.
    pub tte_hat: f64,
    pub identified: bool,
    /// Training fits that fell back to the minimum-norm solution.
    pub singular_folds: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SelectionReport {
    pub procedure: Procedure,
    pub chosen: String,
    pub candidates: Vec<CandidateScore>,
}

impl SelectionReport {
    fn from_scores(procedure: Procedure, candidates: Vec<CandidateScore>) -> Self {
        let mut best = 0;
        for (k, score) in candidates.iter().enumerate() {
            if score.mean_mspe < candidates[best].mean_mspe {
                best = k;
            }
        }
        let chosen = candidates[best].label.clone();
        Self { procedure, chosen, candidates }
    }

    pub fn chosen_index(&self) -> usize {
        self.candidates.iter().position(|c| c.label == self.chosen).unwrap_or(0)
    }

    pub fn chosen_score(&self) -> &CandidateScore {
        &self.candidates[self.chosen_index()]
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// The data-generating model, needed by baselines that simulate their own data.
#[derive(Debug, Clone)]
pub struct TrueModel {
    pub spec: ModelSpec,
    pub params: TrueParams,
}

fn check_outcomes(panel: &TreatmentPanel, y: &OutcomePanel) -> Result<()> {
    if y.n() != panel.n() || y.periods() != panel.periods() {
        return Err(Error::DimensionMismatch("outcome panel does not match treatment panel".into()));
    }
    Ok(())
}

fn require_two_periods(panel: &TreatmentPanel) -> Result<()> {
    if panel.periods() < 2 {
        return Err(Error::InvalidArgument(format!(
            "period-based selection needs at least 2 periods, got {}",
            panel.periods()
        )));
    }
    Ok(())
}

fn select_rows(x: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    x.select_rows(rows)
}

fn period_rows(n: usize, periods: &[usize]) -> Vec<usize> {
    periods.iter().flat_map(|&t| t * n..(t + 1) * n).collect()
}

fn full_data_tte(spec: &ModelSpec, design: &DesignMatrix, y: &DVector<f64>) -> Result<(f64, bool)> {
    let fitted = fit(design, y)?;
    let tte = estimate_tte(&fitted, &contrast_vector(spec, design.periods()), design)?;
    Ok((tte.value, tte.identified))
}

/// Fits on `train` periods and scores each of `test` periods separately.
fn period_split_scores(
    procedure: Procedure,
    candidates: &CandidateSet,
    panel: &TreatmentPanel,
    y: &OutcomePanel,
    splits: &[(Vec<usize>, usize)],
) -> Result<SelectionReport> {
    check_outcomes(panel, y)?;
    let stacked = y.stacked();
    let n = panel.n();
    let scores = candidates
        .specs()
        .iter()
        .map(|spec| {
            let design = build_design(spec, panel)?;
            let mut fold_mspes = Vec::with_capacity(splits.len());
            let mut singular_folds = 0;
            for (train, test) in splits {
                let rows = period_rows(n, train);
                let fitted = fit_matrix(&select_rows(design.x(), &rows), &stacked.select_rows(&rows))?;
                singular_folds += usize::from(fitted.singular);
                let test_rows = period_rows(n, &[*test]);
                fold_mspes.push(prediction_mse(
                    &select_rows(design.x(), &test_rows),
                    &stacked.select_rows(&test_rows),
                    &fitted.theta,
                ));
            }
            let (tte_hat, identified) = full_data_tte(spec, &design, &stacked)?;
            Ok(CandidateScore {
                label: spec.label().to_string(),
                mean_mspe: fold_mspes.iter().sum::<f64>() / fold_mspes.len() as f64,
                fold_mspes,
                tte_hat,
                identified,
                singular_folds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionReport::from_scores(procedure, scores))
}

/// Leave-one-period-out: for every period, fit on the others and score the
/// held-out period; candidates are ranked by the average.
pub fn lopo(candidates: &CandidateSet, panel: &TreatmentPanel, y: &OutcomePanel) -> Result<SelectionReport> {
    require_two_periods(panel)?;
    let periods = panel.periods();
    let splits: Vec<_> = (0..periods).map(|t| ((0..periods).filter(|&s| s != t).collect(), t)).collect();
    period_split_scores(Procedure::Lopo, candidates, panel, y, &splits)
}

/// Fit on every period but the last, score the last.
pub fn train_first(candidates: &CandidateSet, panel: &TreatmentPanel, y: &OutcomePanel) -> Result<SelectionReport> {
    require_two_periods(panel)?;
    let last = panel.periods() - 1;
    period_split_scores(Procedure::TrainFirst, candidates, panel, y, &[((0..last).collect(), last)])
}

/// Fit on every period but the first, score the first.
pub fn train_last(candidates: &CandidateSet, panel: &TreatmentPanel, y: &OutcomePanel) -> Result<SelectionReport> {
    require_two_periods(panel)?;
    period_split_scores(Procedure::TrainLast, candidates, panel, y, &[((1..panel.periods()).collect(), 0)])
}

/// K-fold cross-validation over units with all periods pooled. Held-out
/// units under a per-unit-intercept model are predicted with the mean of
/// the estimated unit effects.
pub fn pooled_kfold(
    candidates: &CandidateSet,
    panel: &TreatmentPanel,
    y: &OutcomePanel,
    k: usize,
    seed: u64,
) -> Result<SelectionReport> {
    check_outcomes(panel, y)?;
    let n = panel.n();
    if k < 2 || k > n {
        return Err(Error::InvalidArgument(format!("fold count {k} must be in [2, {n}]")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed, stream::FOLDS));
    let mut fold_of = vec![0; n];
    for (pos, &unit) in order.iter().enumerate() {
        fold_of[unit] = pos % k;
    }
    let stacked = y.stacked();
    let periods = panel.periods();
    let rows_where = |keep: &dyn Fn(usize) -> bool| -> Vec<usize> {
        (0..periods).flat_map(|t| (0..n).filter(|&i| keep(i)).map(move |i| t * n + i)).collect()
    };
    let scores = candidates
        .specs()
        .iter()
        .map(|spec| {
            let design = build_design(spec, panel)?;
            let layout = design.layout().clone();
            let mut fold_mspes = Vec::with_capacity(k);
            let mut singular_folds = 0;
            for fold in 0..k {
                let train = rows_where(&|i| fold_of[i] != fold);
                let test = rows_where(&|i| fold_of[i] == fold);
                let x_train = select_rows(design.x(), &train);
                let y_train = stacked.select_rows(&train);
                let theta = if layout.unit_dummies {
                    let kept: Vec<usize> = (0..design.k())
                        .filter(|&col| !layout.unit.contains(&col) || fold_of[col] != fold)
                        .collect();
                    let fitted = fit_matrix(&x_train.select_columns(&kept), &y_train)?;
                    singular_folds += usize::from(fitted.singular);
                    let mut theta = DVector::zeros(design.k());
                    for (slot, &col) in kept.iter().enumerate() {
                        theta[col] = fitted.theta[slot];
                    }
                    let trained: Vec<usize> = layout.unit.clone().filter(|&i| fold_of[i] != fold).collect();
                    let mean_alpha = trained.iter().map(|&i| theta[i]).sum::<f64>() / trained.len() as f64;
                    for i in layout.unit.clone().filter(|&i| fold_of[i] == fold) {
                        theta[i] = mean_alpha;
                    }
                    theta
                } else {
                    let fitted = fit_matrix(&x_train, &y_train)?;
                    singular_folds += usize::from(fitted.singular);
                    fitted.theta
                };
                fold_mspes.push(prediction_mse(&select_rows(design.x(), &test), &stacked.select_rows(&test), &theta));
            }
            let (tte_hat, identified) = full_data_tte(spec, &design, &stacked)?;
            Ok(CandidateScore {
                label: spec.label().to_string(),
                mean_mspe: fold_mspes.iter().sum::<f64>() / k as f64,
                fold_mspes,
                tte_hat,
                identified,
                singular_folds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SelectionReport::from_scores(Procedure::PooledKFold, scores))
}

/// The no-roll-out baseline's own data: `periods` assignments that each
/// treat half the units, drawn independently, with outcomes from `truth`.
pub fn no_rollout_data(truth: &TrueModel, periods: usize, seed: u64) -> Result<OutcomePanel> {
    let n = truth.spec.n();
    let panel = sample_static_with(n, periods, 0.5, &mut seeded(seed, stream::BASELINE_TREATMENT))?;
    simulate_panel_on_stream(&truth.spec, &truth.params, &panel, seed, stream::BASELINE_NOISE)
}

/// Runs the leave-one-period-out loop on freshly simulated data in which
/// half the units are treated in every period.
pub fn no_rollout(candidates: &CandidateSet, truth: &TrueModel, periods: usize, seed: u64) -> Result<SelectionReport> {
    let data = no_rollout_data(truth, periods, seed)?;
    let panel = data.treatment().clone();
    require_two_periods(&panel)?;
    let splits: Vec<_> = (0..periods).map(|t| ((0..periods).filter(|&s| s != t).collect(), t)).collect();
    period_split_scores(Procedure::NoRollout, candidates, &panel, &data, &splits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::InterferenceGraph;
    use crate::outcomes::{simulate_panel, ExposureMap, ExposureTerm, NoiseSpec};
    use crate::rollout::{sample_crd, RolloutSchedule};

    struct Setup {
        truth: TrueModel,
        candidates: CandidateSet,
        panel: TreatmentPanel,
        y: OutcomePanel,
    }

    fn setup(sigma: f64, seed: u64) -> Setup {
        let n = 80;
        let g1 = InterferenceGraph::erdos_renyi(n, 0.05, seed).unwrap();
        let g2 = InterferenceGraph::erdos_renyi(n, 0.05, seed + 1000).unwrap();
        let true_spec = ModelSpec::new("true", n, ExposureMap::new(vec![ExposureTerm::neighbor_sum("g1", &g1)])).unwrap();
        let wrong = ModelSpec::new("wrong", n, ExposureMap::new(vec![ExposureTerm::neighbor_sum("g2", &g2)])).unwrap();
        let none = ModelSpec::new("none", n, ExposureMap::none()).unwrap();
        let noise = if sigma == 0.0 { NoiseSpec::none() } else { NoiseSpec::time_varying(sigma) };
        let params = TrueParams::simple(1.0, 5.0, vec![2.0], noise);
        let panel = sample_crd(n, &RolloutSchedule::even(0.5, 5).unwrap(), seed).unwrap();
        let y = simulate_panel(&true_spec, &params, &panel, seed).unwrap();
        Setup {
            truth: TrueModel { spec: true_spec.clone(), params },
            candidates: CandidateSet::new(vec![none, wrong, true_spec]).unwrap(),
            panel,
            y,
        }
    }

    fn all_reports(s: &Setup, seed: u64) -> Vec<SelectionReport> {
        vec![
            lopo(&s.candidates, &s.panel, &s.y).unwrap(),
            train_first(&s.candidates, &s.panel, &s.y).unwrap(),
            train_last(&s.candidates, &s.panel, &s.y).unwrap(),
            pooled_kfold(&s.candidates, &s.panel, &s.y, DEFAULT_FOLDS, seed).unwrap(),
            no_rollout(&s.candidates, &s.truth, s.panel.periods(), seed).unwrap(),
        ]
    }

    #[test]
    fn candidate_set_validation() {
        let none = ModelSpec::new("none", 4, ExposureMap::none()).unwrap();
        assert!(CandidateSet::new(vec![]).is_err());
        assert!(CandidateSet::new(vec![none.clone(), none.clone()]).is_err());
        assert_eq!(CandidateSet::new(vec![none]).unwrap().position("none"), Some(0));
    }

    #[test]
    fn noise_free_truth_wins_every_procedure() {
        for seed in 0..5 {
            let s = setup(0.0, seed);
            for report in all_reports(&s, seed) {
                assert_eq!(report.chosen, "true", "{:?} seed {seed}", report.procedure);
                let truth = report.chosen_score();
                assert!(truth.fold_mspes.iter().all(|&m| m < 1e-16), "{:?}", report.procedure);
                let tte = crate::outcomes::true_tte(&s.truth.spec, &s.truth.params);
                assert!((truth.tte_hat - tte).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn single_candidate_is_returned() {
        let s = setup(1.0, 3);
        let only = CandidateSet::new(vec![s.candidates.specs()[0].clone()]).unwrap();
        let s = Setup { candidates: only, ..s };
        for report in all_reports(&s, 3) {
            assert_eq!(report.chosen, "none");
        }
    }

    #[test]
    fn chosen_is_argmin_and_order_invariant() {
        let s = setup(1.0, 11);
        for report in all_reports(&s, 11) {
            let min = report.candidates.iter().map(|c| c.mean_mspe).fold(f64::INFINITY, f64::min);
            assert_eq!(report.chosen_score().mean_mspe, min);
            let json: serde_json::Value = serde_json::from_str(&report.to_json().unwrap()).unwrap();
            assert_eq!(json["chosen"], report.chosen.as_str());
        }
        let reversed: Vec<_> = s.candidates.specs().iter().rev().cloned().collect();
        let forward = lopo(&s.candidates, &s.panel, &s.y).unwrap();
        let backward = lopo(&CandidateSet::new(reversed).unwrap(), &s.panel, &s.y).unwrap();
        assert_eq!(forward.chosen, backward.chosen);
        for score in &forward.candidates {
            let other = backward.candidates.iter().find(|c| c.label == score.label).unwrap();
            assert_eq!(score.fold_mspes, other.fold_mspes);
        }
    }

    #[test]
    fn ties_go_to_the_earliest_candidate() {
        let s = setup(1.0, 4);
        let a = s.candidates.specs()[2].clone();
        let b = ModelSpec::new("copy", a.n(), a.exposure().clone()).unwrap();
        let set = CandidateSet::new(vec![b, a]).unwrap();
        assert_eq!(lopo(&set, &s.panel, &s.y).unwrap().chosen, "copy");
    }

    #[test]
    fn period_count_and_fold_validation() {
        let s = setup(1.0, 5);
        let one = s.panel.prefix(1).unwrap();
        let y1 = simulate_panel(&s.truth.spec, &s.truth.params, &one, 1).unwrap();
        assert!(lopo(&s.candidates, &one, &y1).is_err());
        assert!(train_first(&s.candidates, &one, &y1).is_err());
        assert!(train_last(&s.candidates, &one, &y1).is_err());
        assert!(pooled_kfold(&s.candidates, &s.panel, &s.y, 1, 0).is_err());
        assert!(pooled_kfold(&s.candidates, &s.panel, &s.y, 81, 0).is_err());
    }

    #[test]
    fn kfold_with_unit_effects_predicts_mean_intercept() {
        let n = 30;
        let g = InterferenceGraph::erdos_renyi(n, 0.1, 2).unwrap();
        let spec = ModelSpec::new("fe", n, ExposureMap::new(vec![ExposureTerm::neighbor_sum("g", &g)]))
            .unwrap()
            .with_unit_effects(true);
        let params = TrueParams::simple(3.0, 5.0, vec![2.0], NoiseSpec::none());
        let params = TrueParams { alpha: crate::outcomes::Intercept::PerUnit(vec![3.0; n]), ..params };
        let panel = sample_crd(n, &RolloutSchedule::even(0.5, 4).unwrap(), 2).unwrap();
        let y = simulate_panel(&spec, &params, &panel, 2).unwrap();
        let report = pooled_kfold(&CandidateSet::new(vec![spec]).unwrap(), &panel, &y, 5, 9).unwrap();
        // all unit effects equal, so the mean-intercept prediction is exact
        assert!(report.candidates[0].mean_mspe < 1e-16);
    }

    #[test]
    fn no_rollout_data_treats_half_each_period() {
        let s = setup(1.0, 6);
        let data = no_rollout_data(&s.truth, 5, 6).unwrap();
        for t in 0..5 {
            assert_eq!(data.treatment().treated_count(t), 40);
        }
        assert!(!data.treatment().is_monotone());
    }
}
