//! Identification checks for the TTE.
//!
//! Three tests of increasing generality:
//! a sufficient spillover condition for a single exposure term, its
//! graph-level specialization, and the exact test `c in span(X')` which
//! makes `c . theta_hat` the same for every least-squares solution.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimate::{build_design, contrast_vector, ContrastVector, DesignMatrix};
use crate::graph::InterferenceGraph;
use crate::linalg::SymSpectrum;
use crate::outcomes::{exposure_features, ModelSpec, ModelTemplate};
use crate::rng::{replication_seed, seeded, stream};
use crate::rollout::{sample_crd_with, RolloutSchedule, TreatmentPanel};

/// Absolute-relative tolerance on `||c - X'v||`.
pub const SPAN_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Observation {
    pub unit: usize,
    pub period: usize,
}

/// Two untreated observations with different exposure, the first one exposed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpilloverWitness {
    pub exposed: Observation,
    pub exposed_value: f64,
    pub contrast: Observation,
    pub contrast_value: f64,
}

fn scalar_exposures(spec: &ModelSpec, panel: &TreatmentPanel) -> Result<Vec<Vec<f64>>> {
    if spec.exposure().dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "spillover condition needs exactly one exposure term, model {} has {}",
            spec.label(),
            spec.exposure().dim()
        )));
    }
    spec.check_panel(panel.n(), panel.periods())?;
    (0..panel.periods())
        .map(|t| Ok(exposure_features(spec, panel.period(t))?.column(0).iter().copied().collect()))
        .collect()
}

/// Searches for `(i,t) != (j,t')` with both untreated, `f_i(z^t) != 0` and
/// `f_i(z^t) != f_j(z^t')`. Candidates are scanned in `(t, i)` order and the
/// first witness found is returned.
pub fn check_spillover_condition(spec: &ModelSpec, panel: &TreatmentPanel) -> Result<Option<SpilloverWitness>> {
    let f = scalar_exposures(spec, panel)?;
    let untreated: Vec<(Observation, f64)> = (0..panel.periods())
        .flat_map(|t| (0..panel.n()).map(move |i| (i, t)))
        .filter(|&(i, t)| !panel.is_treated(i, t))
        .map(|(i, t)| (Observation { unit: i, period: t }, f[t][i]))
        .collect();
    let mut tried: Option<f64> = None;
    for &(exposed, value) in &untreated {
        if value == 0.0 || tried == Some(value) {
            continue;
        }
        tried = Some(value);
        if let Some(&(contrast, contrast_value)) = untreated.iter().find(|(_, v)| *v != value) {
            return Ok(Some(SpilloverWitness { exposed, exposed_value: value, contrast, contrast_value }));
        }
    }
    Ok(None)
}

/// Whether the pair satisfies the spillover condition.
pub fn is_spillover_witness(spec: &ModelSpec, panel: &TreatmentPanel, a: Observation, b: Observation) -> Result<bool> {
    let f = scalar_exposures(spec, panel)?;
    let fa = f[a.period][a.unit];
    let fb = f[b.period][b.unit];
    Ok(a != b
        && !panel.is_treated(a.unit, a.period)
        && !panel.is_treated(b.unit, b.period)
        && fa != 0.0
        && fa != fb)
}

/// True when some period after the first has a treated unit with an
/// untreated neighbor.
pub fn check_corollary_condition(graph: &InterferenceGraph, panel: &TreatmentPanel) -> bool {
    (1..panel.periods()).any(|t| {
        graph
            .edges()
            .any(|(i, j)| panel.is_treated(i, t) != panel.is_treated(j, t))
    })
}

/// Outcome of projecting `c` onto the row space of `X`.
#[derive(Debug, Clone)]
pub struct SpanMembership {
    pub member: bool,
    /// `||c - X' v*||`
    pub residual: f64,
    /// `v*` with `X' v* = c` up to the tolerance, when `member`.
    pub certificate: Option<DVector<f64>>,
}

fn membership_from_weights(x: &DMatrix<f64>, c: &ContrastVector, weights: DVector<f64>) -> SpanMembership {
    let v = x * weights;
    let residual = (&c.0 - x.tr_mul(&v)).norm();
    let member = residual <= SPAN_RTOL * c.0.norm().max(1.0);
    SpanMembership { member, residual, certificate: member.then_some(v) }
}

/// Tests `c in span(X')` by least-squares projection. Designs with one dummy
/// per unit are reduced by eliminating the unit block first.
pub fn span_membership(design: &DesignMatrix, c: &ContrastVector) -> SpanMembership {
    if design.layout().unit_dummies && design.n() > 1 {
        span_membership_unit_block(design.x(), design.n(), c)
    } else {
        span_membership_dense(design.x(), c)
    }
}

/// Projection through the full Gram matrix: `v* = X (X'X)^+ c`.
pub fn span_membership_dense(x: &DMatrix<f64>, c: &ContrastVector) -> SpanMembership {
    let spectrum = SymSpectrum::new(&x.tr_mul(x));
    span_membership_from_spectrum(x, &spectrum, c)
}

pub(crate) fn span_membership_from_spectrum(x: &DMatrix<f64>, gram: &SymSpectrum, c: &ContrastVector) -> SpanMembership {
    membership_from_weights(x, c, gram.pinv_apply(&c.0))
}

/// Same test for `X = [U | R]` where the first `units` columns of `X` are
/// one-hot unit indicators. With `D = U'U` diagonal and `B = U'R`, `X'X w = c`
/// is solvable iff `c_R - B' D^-1 c_U` lies in the range of the Schur
/// complement `R'R - B' D^-1 B`.
pub fn span_membership_unit_block(x: &DMatrix<f64>, units: usize, c: &ContrastVector) -> SpanMembership {
    let k = x.ncols();
    let rest = k - units;
    let mut counts = vec![0.0; units];
    let mut b = DMatrix::zeros(units, rest);
    for row in 0..x.nrows() {
        let unit = (0..units).find(|&i| x[(row, i)] != 0.0);
        if let Some(i) = unit {
            counts[i] += x[(row, i)] * x[(row, i)];
            for col in 0..rest {
                b[(i, col)] += x[(row, i)] * x[(row, units + col)];
            }
        }
    }
    if counts.contains(&0.0) {
        return span_membership_dense(x, c);
    }
    let r = x.columns(units, rest);
    let mut schur = r.tr_mul(&r);
    let mut reduced = c.0.rows(units, rest).into_owned();
    for i in 0..units {
        let bi = b.row(i);
        schur -= bi.transpose() * bi / counts[i];
        reduced -= bi.transpose() * (c.0[i] / counts[i]);
    }
    let spectrum = SymSpectrum::new(&schur);
    let rest_weights = spectrum.pinv_apply(&reduced);
    let mut weights = DVector::zeros(k);
    for i in 0..units {
        weights[i] = (c.0[i] - b.row(i).dot(&rest_weights.transpose())) / counts[i];
    }
    weights.rows_mut(units, rest).copy_from(&rest_weights);
    membership_from_weights(x, c, weights)
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentificationReport {
    pub gram_nonsingular: bool,
    pub span_member: bool,
    pub prop1_witness: Option<SpilloverWitness>,
    pub min_eig: f64,
}

/// Runs every applicable check on one model and panel.
pub fn identification_report(spec: &ModelSpec, panel: &TreatmentPanel) -> Result<IdentificationReport> {
    let design = build_design(spec, panel)?;
    let c = contrast_vector(spec, panel.periods());
    let spectrum = SymSpectrum::new(&design.x().tr_mul(design.x()));
    let span = span_membership_from_spectrum(design.x(), &spectrum, &c);
    let witness = if spec.exposure().dim() == 1 && !spec.unit_effects() && !spec.period_effects() && spec.groups().is_none() {
        check_spillover_condition(spec, panel)?
    } else {
        None
    };
    Ok(IdentificationReport {
        gram_nonsingular: !spectrum.is_singular(),
        span_member: span.member,
        prop1_witness: witness,
        min_eig: spectrum.min(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentificationPoint {
    pub periods: usize,
    pub identified: usize,
    pub reps: usize,
    pub probability: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct IdentificationCurve {
    pub graph_p: f64,
    pub points: Vec<IdentificationPoint>,
}

/// Normal-approximation 95% interval, clipped to [0, 1]. Degenerate at 0 and 1.
pub fn wald_interval(successes: usize, trials: usize) -> (f64, f64) {
    let p = successes as f64 / trials as f64;
    let half = 1.959963984540054 * (p * (1.0 - p) / trials as f64).sqrt();
    ((p - half).max(0.0), (p + half).min(1.0))
}

/// Per-replication identification flags: `flags[r][t]` tells whether the TTE
/// is identified from the first `t + 1` periods of replication `r`. Every
/// replication draws fresh Erdos-Renyi graphs and a fresh completely
/// randomized roll-out.
pub fn identification_flags(
    template: &ModelTemplate,
    schedule: &RolloutSchedule,
    n: usize,
    graph_p: f64,
    reps: usize,
    seed: u64,
) -> Result<Vec<Vec<bool>>> {
    if reps == 0 {
        return Err(Error::InvalidArgument("at least one replication is required".into()));
    }
    let periods = schedule.periods();
    (0..reps)
        .into_par_iter()
        .map(|r| -> Result<Vec<bool>> {
            let rep_seed = replication_seed(seed, r);
            let primary = InterferenceGraph::erdos_renyi_with(n, graph_p, &mut seeded(rep_seed, stream::GRAPH))?;
            let alternate = if template.uses_alternate_graph() {
                Some(InterferenceGraph::erdos_renyi_with(n, graph_p, &mut seeded(rep_seed, stream::GRAPH_ALT))?)
            } else {
                None
            };
            let spec = template.instantiate(&primary, alternate.as_ref())?;
            let panel = sample_crd_with(n, schedule, &mut seeded(rep_seed, stream::TREATMENT))?;
            (1..=periods)
                .map(|t| {
                    let design = build_design(&spec, &panel.prefix(t)?)?;
                    Ok(span_membership(&design, &contrast_vector(&spec, t)).member)
                })
                .collect()
        })
        .collect()
}

/// Aggregates flags from [`identification_flags`] into a curve over `T'`.
pub fn identification_curve(graph_p: f64, flags: &[Vec<bool>]) -> IdentificationCurve {
    let reps = flags.len();
    let periods = flags.first().map_or(0, Vec::len);
    let points = (0..periods)
        .map(|t| {
            let identified = flags.iter().filter(|f| f[t]).count();
            let (ci_low, ci_high) = wald_interval(identified, reps);
            IdentificationPoint {
                periods: t + 1,
                identified,
                reps,
                probability: identified as f64 / reps as f64,
                ci_low,
                ci_high,
            }
        })
        .collect();
    IdentificationCurve { graph_p, points }
}

/// Share of replications in which the TTE is identified after each prefix of
/// the roll-out.
pub fn identification_probability(
    template: &ModelTemplate,
    schedule: &RolloutSchedule,
    n: usize,
    graph_p: f64,
    reps: usize,
    seed: u64,
) -> Result<IdentificationCurve> {
    let flags = identification_flags(template, schedule, n, graph_p, reps, seed)?;
    Ok(identification_curve(graph_p, &flags))
}

/// CSV with header `graph_p,T,prob_identified,ci_low,ci_high`.
pub fn curves_to_csv(curves: &[IdentificationCurve]) -> String {
    let mut out = String::from("graph_p,T,prob_identified,ci_low,ci_high\n");
    for curve in curves {
        for p in &curve.points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                curve.graph_p, p.periods, p.probability, p.ci_low, p.ci_high
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::{ExposureKind, ExposureMap, ExposureTerm, GraphRole, TermTemplate};
    use crate::rollout::{sample_crd, DesignKind};
    use proptest::prelude::*;

    fn sum_spec(g: &InterferenceGraph) -> ModelSpec {
        ModelSpec::new("sum", g.n(), ExposureMap::new(vec![ExposureTerm::neighbor_sum("g", g)])).unwrap()
    }

    fn example2() -> (InterferenceGraph, ModelSpec, TreatmentPanel) {
        let g = InterferenceGraph::from_edges(3, [(0, 1)]).unwrap();
        let spec = sum_spec(&g);
        let panel =
            TreatmentPanel::from_periods(vec![vec![false; 3], vec![true, true, false]], DesignKind::Custom).unwrap();
        (g, spec, panel)
    }

    fn contrast(v: &[f64]) -> ContrastVector {
        ContrastVector(DVector::from_row_slice(v))
    }

    #[test]
    fn example2_has_no_spillover_witness() {
        let (g, spec, panel) = example2();
        assert!(check_spillover_condition(&spec, &panel).unwrap().is_none());
        assert!(!check_corollary_condition(&g, &panel));
        // exhaustive check over all six rows
        for a in 0..6 {
            for b in 0..6 {
                let oa = Observation { unit: a % 3, period: a / 3 };
                let ob = Observation { unit: b % 3, period: b / 3 };
                assert!(!is_spillover_witness(&spec, &panel, oa, ob).unwrap());
            }
        }
    }

    #[test]
    fn single_edge_witness() {
        let g = InterferenceGraph::from_edges(2, [(0, 1)]).unwrap();
        let spec = sum_spec(&g);
        let panel = TreatmentPanel::from_periods(vec![vec![false, false], vec![true, false]], DesignKind::Custom).unwrap();
        let w = check_spillover_condition(&spec, &panel).unwrap().expect("witness");
        assert_eq!(w.exposed, Observation { unit: 1, period: 1 });
        assert_eq!(w.exposed_value, 1.0);
        assert_eq!(w.contrast_value, 0.0);
        let b1 = Observation { unit: 1, period: 0 };
        assert!(is_spillover_witness(&spec, &panel, w.exposed, b1).unwrap());
        let report = identification_report(&spec, &panel).unwrap();
        assert!(report.gram_nonsingular && report.span_member);
        assert!(check_corollary_condition(&g, &panel));
    }

    #[test]
    fn untreated_panel_has_no_witness() {
        let g = InterferenceGraph::erdos_renyi(10, 0.5, 1).unwrap();
        let panel = TreatmentPanel::from_periods(vec![vec![false; 10]; 3], DesignKind::Custom).unwrap();
        assert!(check_spillover_condition(&sum_spec(&g), &panel).unwrap().is_none());
    }

    #[test]
    fn spillover_condition_needs_scalar_exposure() {
        let g = InterferenceGraph::erdos_renyi(4, 0.5, 1).unwrap();
        let spec = ModelSpec::new("none", 4, ExposureMap::none()).unwrap();
        let panel = TreatmentPanel::from_periods(vec![vec![false; 4]; 2], DesignKind::Custom).unwrap();
        assert!(check_spillover_condition(&spec, &panel).is_err());
        let _ = g;
    }

    #[test]
    fn corollary_examples() {
        let k = InterferenceGraph::complete(8).unwrap();
        let panel = sample_crd(8, &RolloutSchedule::even(0.5, 3).unwrap(), 3).unwrap();
        assert!(check_corollary_condition(&k, &panel));
        let empty = InterferenceGraph::empty(8).unwrap();
        assert!(!check_corollary_condition(&empty, &panel));
    }

    #[test]
    fn example2_span_membership() {
        let (_, spec, panel) = example2();
        let d = build_design(&spec, &panel).unwrap();
        let c = contrast(&[0.0, 1.0, 1.0]);
        let stated_v = DVector::from_row_slice(&[0.0, 0.0, 0.0, 0.0, 1.0, -1.0]);
        assert_eq!(d.x().tr_mul(&stated_v), c.0);
        let m = span_membership(&d, &c);
        assert!(m.member);
        let v = m.certificate.unwrap();
        assert!((d.x().tr_mul(&v) - &c.0).norm() < 1e-12);
        assert!(!span_membership(&d, &contrast(&[0.0, 1.0, 2.0 / 3.0])).member);
    }

    #[test]
    fn full_rank_design_spans_everything() {
        let g = InterferenceGraph::erdos_renyi(30, 0.2, 5).unwrap();
        let panel = sample_crd(30, &RolloutSchedule::even(0.5, 4).unwrap(), 2).unwrap();
        let d = build_design(&sum_spec(&g), &panel).unwrap();
        for c in [[0.0, 1.0, 3.0], [5.0, -2.0, 0.1], [1e3, 0.0, 0.0]] {
            assert!(span_membership(&d, &contrast(&c)).member);
        }
    }

    #[test]
    fn identification_curve_edge_cases() {
        let model = ModelTemplate::new(
            "true",
            vec![TermTemplate { kind: ExposureKind::NeighborSum, graph: GraphRole::Primary }],
        );
        let schedule = RolloutSchedule::even(0.5, 4).unwrap();
        let curve = identification_probability(&model, &schedule, 40, 1.0, 10, 3).unwrap();
        assert!(curve.points[1..].iter().all(|p| p.probability == 1.0));

        let none = ModelTemplate::new("none", vec![]);
        let never = RolloutSchedule::new(vec![0.0, 0.0, 0.0]).unwrap();
        let curve = identification_probability(&none, &never, 40, 0.0, 10, 3).unwrap();
        assert!(curve.points.iter().all(|p| p.probability == 0.0));
        let curve = identification_probability(&none, &schedule, 40, 0.0, 10, 3).unwrap();
        assert!(curve.points.iter().all(|p| p.probability == 1.0));
        assert!(identification_probability(&none, &schedule, 40, 0.0, 0, 3).is_err());
        let csv = curves_to_csv(&[curve]);
        assert!(csv.starts_with("graph_p,T,prob_identified,ci_low,ci_high\n0,1,1,1,1\n"));
        assert_eq!(csv.lines().count(), 5);
    }

    #[test]
    fn wald_interval_degenerates_at_extremes() {
        assert_eq!(wald_interval(100, 100), (1.0, 1.0));
        assert_eq!(wald_interval(0, 100), (0.0, 0.0));
        let (lo, hi) = wald_interval(50, 100);
        assert!(lo < 0.5 && hi > 0.5);
    }

    /// Random sparse graph, roll-out and fixed-effect flags.
    fn random_instance(seed: u64, unit_fe: bool) -> (InterferenceGraph, ModelSpec, TreatmentPanel) {
        let n = 6 + (seed % 20) as usize;
        let p = [0.02, 0.08, 0.2, 0.5][(seed / 20 % 4) as usize];
        let g = InterferenceGraph::erdos_renyi(n, p, seed).unwrap();
        let spec = sum_spec(&g).with_unit_effects(unit_fe);
        let periods = 2 + (seed % 3) as usize;
        let panel = sample_crd(n, &RolloutSchedule::even(0.5, periods).unwrap(), seed ^ 0xabc).unwrap();
        (g, spec, panel)
    }

    #[test]
    fn spillover_witness_implies_nonsingular_gram() {
        let mut witnessed = 0;
        for seed in 0..500u64 {
            let (g, spec, panel) = random_instance(seed, false);
            let report = identification_report(&spec, &panel).unwrap();
            let witness = check_spillover_condition(&spec, &panel).unwrap();
            if witness.is_some() {
                witnessed += 1;
                assert!(report.gram_nonsingular, "seed {seed}");
            }
            if check_corollary_condition(&g, &panel) {
                assert!(witness.is_some(), "seed {seed}");
            }
            assert!(!report.gram_nonsingular || report.span_member);
        }
        assert!(witnessed > 100);
    }

    #[test]
    fn unit_block_reduction_matches_dense_projection() {
        for seed in 0..200u64 {
            let (_, spec, panel) = random_instance(seed, true);
            let d = build_design(&spec, &panel).unwrap();
            let mut c = contrast_vector(&spec, panel.periods());
            let dense = span_membership_dense(d.x(), &c);
            let reduced = span_membership_unit_block(d.x(), d.n(), &c);
            assert_eq!(dense.member, reduced.member, "seed {seed}");
            // also a contrast with a non-zero unit block
            c.0[0] = 1.0;
            let dense = span_membership_dense(d.x(), &c);
            let reduced = span_membership_unit_block(d.x(), d.n(), &c);
            assert_eq!(dense.member, reduced.member, "seed {seed} (unit block)");
        }
    }

    proptest! {
        #[test]
        fn span_membership_ignores_row_permutation_and_duplication(seed in 0u64..1000) {
            let (_, spec, panel) = random_instance(seed, seed % 2 == 0);
            let d = build_design(&spec, &panel).unwrap();
            let c = contrast_vector(&spec, panel.periods());
            let base = span_membership_dense(d.x(), &c).member;
            let rows = d.x().nrows();
            let mut order: Vec<usize> = (0..rows).rev().collect();
            order.extend(0..rows / 2);
            let shuffled = d.x().select_rows(&order);
            prop_assert_eq!(span_membership_dense(&shuffled, &c).member, base);
        }
    }
}
