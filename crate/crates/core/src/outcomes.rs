//! Interference model specifications and the outcome simulator.
//!
//! Outcomes follow the linear additive model
//!
//! ```text
//! y[i][t] = alpha_i + gamma_t + psi_{g(i,t)} + tau * z[i][t] + eta . f_i(z^t) + eps[i][t]
//! ```
//!
//! where `f_i` is a vector of exposure features with `f_i(0) = 0`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InterferenceGraph;
use crate::rng::{seeded, stream};
use crate::rollout::TreatmentPanel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Sum,
    /// Mean over the neighborhood; isolated units get 0.
    Mean,
}

/// One scalar exposure feature: an aggregate of treated units over a fixed
/// neighborhood of each unit.
#[derive(Debug, Clone)]
pub struct ExposureTerm {
    label: String,
    aggregation: Aggregation,
    neighborhoods: Arc<Vec<Vec<usize>>>,
}

impl ExposureTerm {
    pub fn new(label: impl Into<String>, aggregation: Aggregation, neighborhoods: Vec<Vec<usize>>) -> Self {
        Self { label: label.into(), aggregation, neighborhoods: Arc::new(neighborhoods) }
    }

    /// `sum_{j in G(i)} z_j`
    pub fn neighbor_sum(label: impl Into<String>, graph: &InterferenceGraph) -> Self {
        Self::new(label, Aggregation::Sum, first_order(graph))
    }

    /// `(1/|G(i)|) sum_{j in G(i)} z_j`
    pub fn neighbor_mean(label: impl Into<String>, graph: &InterferenceGraph) -> Self {
        Self::new(label, Aggregation::Mean, first_order(graph))
    }

    /// Sum over units at distance exactly `k`.
    pub fn khop_sum(label: impl Into<String>, graph: &InterferenceGraph, k: usize) -> Result<Self> {
        Ok(Self::new(label, Aggregation::Sum, graph.khop_neighborhoods(k)?))
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.neighborhoods.len()
    }

    pub fn value(&self, unit: usize, z: &[bool]) -> f64 {
        let hood = &self.neighborhoods[unit];
        let treated = hood.iter().filter(|&&j| z[j]).count() as f64;
        match self.aggregation {
            Aggregation::Sum => treated,
            Aggregation::Mean if hood.is_empty() => 0.0,
            Aggregation::Mean => treated / hood.len() as f64,
        }
    }
}

fn first_order(graph: &InterferenceGraph) -> Vec<Vec<usize>> {
    (0..graph.n()).map(|i| graph.neighbors(i).to_vec()).collect()
}

/// Ordered list of exposure terms; empty means no interference.
#[derive(Debug, Clone, Default)]
pub struct ExposureMap {
    terms: Vec<ExposureTerm>,
}

impl ExposureMap {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(terms: Vec<ExposureTerm>) -> Self {
        Self { terms }
    }

    pub fn terms(&self) -> &[ExposureTerm] {
        &self.terms
    }

    pub fn dim(&self) -> usize {
        self.terms.len()
    }

    /// Writes `f_i(z)` into `out` (length `dim()`).
    pub fn unit_features(&self, unit: usize, z: &[bool], out: &mut [f64]) {
        for (slot, term) in out.iter_mut().zip(&self.terms) {
            *slot = term.value(unit, z);
        }
    }
}

/// Unit-period group assignment `g(i, t)` with `groups` levels, stored `[t][i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMap {
    groups: usize,
    table: Vec<Vec<usize>>,
}

impl GroupMap {
    pub fn new(groups: usize, table: Vec<Vec<usize>>) -> Result<Self> {
        if table.iter().flatten().any(|&g| g >= groups) {
            return Err(Error::InvalidArgument(format!("group id outside 0..{groups}")));
        }
        Ok(Self { groups, table })
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn periods(&self) -> usize {
        self.table.len()
    }

    pub fn group(&self, unit: usize, period: usize) -> usize {
        self.table[period][unit]
    }
}

/// A candidate interference model: which fixed effects it carries and which
/// exposure features it uses.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    label: String,
    n: usize,
    unit_effects: bool,
    period_effects: bool,
    groups: Option<GroupMap>,
    exposure: ExposureMap,
}

impl ModelSpec {
    /// Shared intercept, no period or group effects.
    pub fn new(label: impl Into<String>, n: usize, exposure: ExposureMap) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("model needs at least one unit".into()));
        }
        if let Some(term) = exposure.terms().iter().find(|t| t.n() != n) {
            return Err(Error::DimensionMismatch(format!(
                "exposure term {} covers {} units, model has {n}",
                term.label(),
                term.n()
            )));
        }
        Ok(Self {
            label: label.into(),
            n,
            unit_effects: false,
            period_effects: false,
            groups: None,
            exposure,
        })
    }

    pub fn with_unit_effects(mut self, on: bool) -> Self {
        self.unit_effects = on;
        self
    }

    pub fn with_period_effects(mut self, on: bool) -> Self {
        self.period_effects = on;
        self
    }

    pub fn with_groups(mut self, groups: GroupMap) -> Result<Self> {
        if groups.table.iter().any(|row| row.len() != self.n) {
            return Err(Error::DimensionMismatch("group table rows must cover every unit".into()));
        }
        if groups.groups() >= self.n * groups.periods() {
            return Err(Error::InvalidArgument("group count must be below N*T".into()));
        }
        self.groups = Some(groups);
        Ok(self)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn unit_effects(&self) -> bool {
        self.unit_effects
    }

    pub fn period_effects(&self) -> bool {
        self.period_effects
    }

    pub fn groups(&self) -> Option<&GroupMap> {
        self.groups.as_ref()
    }

    pub fn exposure(&self) -> &ExposureMap {
        &self.exposure
    }

    pub fn group_count(&self) -> usize {
        self.groups.as_ref().map_or(0, GroupMap::groups)
    }

    /// Parameter count `#alpha + #gamma + G + 1 + p` for a panel of `periods`.
    pub fn param_dim(&self, periods: usize) -> usize {
        let alpha = if self.unit_effects { self.n } else { 1 };
        let gamma = if self.period_effects { periods } else { 0 };
        alpha + gamma + self.group_count() + 1 + self.exposure.dim()
    }

    /// Checks that the spec can describe a panel of `n` units and `periods` periods.
    pub fn check_panel(&self, n: usize, periods: usize) -> Result<()> {
        if n != self.n {
            return Err(Error::DimensionMismatch(format!(
                "model {} has {} units, panel has {n}",
                self.label, self.n
            )));
        }
        if let Some(groups) = &self.groups {
            if groups.periods() != periods {
                return Err(Error::DimensionMismatch(format!(
                    "group table covers {} periods, panel has {periods}",
                    groups.periods()
                )));
            }
        }
        Ok(())
    }
}

/// Computes `f_i(z)` for every unit as an `n x p` matrix.
pub fn exposure_features(spec: &ModelSpec, z: &[bool]) -> Result<DMatrix<f64>> {
    if z.len() != spec.n() {
        return Err(Error::DimensionMismatch(format!(
            "treatment vector has {} entries, model has {} units",
            z.len(),
            spec.n()
        )));
    }
    let p = spec.exposure().dim();
    let mut out = DMatrix::zeros(spec.n(), p);
    let mut row = vec![0.0; p];
    for i in 0..spec.n() {
        spec.exposure().unit_features(i, z, &mut row);
        for (k, v) in row.iter().enumerate() {
            out[(i, k)] = *v;
        }
    }
    Ok(out)
}

/// Average exposure when every unit is treated, `(1/N) sum_i f_i(1)`.
pub fn mean_full_exposure(spec: &ModelSpec) -> Vec<f64> {
    let all = vec![true; spec.n()];
    let features = exposure_features(spec, &all).expect("length matches by construction");
    (0..features.ncols()).map(|k| features.column(k).mean()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseRegime {
    None,
    /// One draw per unit, repeated in every period.
    TimeInvariant,
    /// Independent draws for every unit and period.
    TimeVarying,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub regime: NoiseRegime,
    pub sigma: f64,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self { regime: NoiseRegime::None, sigma: 0.0 }
    }

    pub fn time_invariant(sigma: f64) -> Self {
        Self { regime: NoiseRegime::TimeInvariant, sigma }
    }

    pub fn time_varying(sigma: f64) -> Self {
        Self { regime: NoiseRegime::TimeVarying, sigma }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intercept {
    Shared(f64),
    PerUnit(Vec<f64>),
}

/// Ground-truth coefficients for the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParams {
    pub alpha: Intercept,
    /// One entry per period when the spec has period effects, else empty.
    pub gamma: Vec<f64>,
    /// One entry per group when the spec has group effects, else empty.
    pub psi: Vec<f64>,
    pub tau: f64,
    pub eta: Vec<f64>,
    pub noise: NoiseSpec,
}

impl TrueParams {
    /// Shared intercept, no fixed effects beyond it.
    pub fn simple(alpha: f64, tau: f64, eta: Vec<f64>, noise: NoiseSpec) -> Self {
        Self { alpha: Intercept::Shared(alpha), gamma: Vec::new(), psi: Vec::new(), tau, eta, noise }
    }

    pub fn check(&self, spec: &ModelSpec, periods: usize) -> Result<()> {
        let mismatch = |what: &str| Err(Error::DimensionMismatch(format!("{what} does not match model {}", spec.label())));
        match (&self.alpha, spec.unit_effects()) {
            (Intercept::Shared(_), false) => {}
            (Intercept::PerUnit(a), true) if a.len() == spec.n() => {}
            _ => return mismatch("alpha"),
        }
        let gamma_len = if spec.period_effects() { periods } else { 0 };
        if self.gamma.len() != gamma_len {
            return mismatch("gamma");
        }
        if self.psi.len() != spec.group_count() {
            return mismatch("psi");
        }
        if self.eta.len() != spec.exposure().dim() {
            return mismatch("eta");
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::InvalidArgument("noise sigma must be finite and non-negative".into()));
        }
        Ok(())
    }

    /// Stacks the coefficients in design-column order
    /// `[alpha, gamma, psi, tau, eta]`.
    pub fn theta(&self) -> DVector<f64> {
        let mut out = match &self.alpha {
            Intercept::Shared(a) => vec![*a],
            Intercept::PerUnit(a) => a.clone(),
        };
        out.extend(&self.gamma);
        out.extend(&self.psi);
        out.push(self.tau);
        out.extend(&self.eta);
        DVector::from_vec(out)
    }

    fn alpha(&self, unit: usize) -> f64 {
        match &self.alpha {
            Intercept::Shared(a) => *a,
            Intercept::PerUnit(a) => a[unit],
        }
    }
}

/// Noise-free potential outcome of every unit at `period` under assignment `z`.
pub fn potential_outcomes(spec: &ModelSpec, params: &TrueParams, z: &[bool], period: usize) -> Result<Vec<f64>> {
    let features = exposure_features(spec, z)?;
    Ok((0..spec.n())
        .map(|i| {
            let mut y = params.alpha(i) + params.tau * f64::from(u8::from(z[i]));
            if spec.period_effects() {
                y += params.gamma[period];
            }
            if let Some(groups) = spec.groups() {
                y += params.psi[groups.group(i, period)];
            }
            y + params.eta.iter().zip(features.row(i).iter()).map(|(e, f)| e * f).sum::<f64>()
        })
        .collect())
}

/// Simulated outcomes with the noise that produced them.
#[derive(Debug, Clone)]
pub struct OutcomePanel {
    /// `[t][i]`
    y: Vec<Vec<f64>>,
    noise: Vec<Vec<f64>>,
    treatment: TreatmentPanel,
}

impl OutcomePanel {
    pub fn new(y: Vec<Vec<f64>>, noise: Vec<Vec<f64>>, treatment: TreatmentPanel) -> Result<Self> {
        let shape_ok = |m: &Vec<Vec<f64>>| {
            m.len() == treatment.periods() && m.iter().all(|row| row.len() == treatment.n())
        };
        if !shape_ok(&y) || !shape_ok(&noise) {
            return Err(Error::DimensionMismatch("outcomes must be periods x units".into()));
        }
        if y.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcomes"));
        }
        Ok(Self { y, noise, treatment })
    }

    pub fn treatment(&self) -> &TreatmentPanel {
        &self.treatment
    }

    pub fn periods(&self) -> usize {
        self.y.len()
    }

    pub fn n(&self) -> usize {
        self.treatment.n()
    }

    pub fn period(&self, period: usize) -> &[f64] {
        &self.y[period]
    }

    pub fn noise(&self, period: usize) -> &[f64] {
        &self.noise[period]
    }

    /// All outcomes stacked period-major, matching design-matrix rows.
    pub fn stacked(&self) -> DVector<f64> {
        DVector::from_iterator(self.n() * self.periods(), self.y.iter().flatten().copied())
    }

    /// CSV with header `unit,period,z,y`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit,period,z,y\n");
        for (t, row) in self.y.iter().enumerate() {
            for (i, y) in row.iter().enumerate() {
                let z = u8::from(self.treatment.is_treated(i, t));
                let _ = writeln!(out, "{i},{t},{z},{y}");
            }
        }
        out
    }
}

/// Draws outcomes for every unit and period of `panel`. Noise depends only on
/// `seed` and the panel's shape, never on the assignments.
pub fn simulate_panel(spec: &ModelSpec, params: &TrueParams, panel: &TreatmentPanel, seed: u64) -> Result<OutcomePanel> {
    simulate_panel_on_stream(spec, params, panel, seed, stream::NOISE)
}

pub(crate) fn simulate_panel_on_stream(
    spec: &ModelSpec,
    params: &TrueParams,
    panel: &TreatmentPanel,
    seed: u64,
    noise_stream: u64,
) -> Result<OutcomePanel> {
    let (n, periods) = (panel.n(), panel.periods());
    spec.check_panel(n, periods)?;
    params.check(spec, periods)?;
    let noise = draw_noise(params.noise, n, periods, seed, noise_stream);
    let y = (0..periods)
        .map(|t| {
            let mean = potential_outcomes(spec, params, panel.period(t), t)?;
            Ok(mean.iter().zip(&noise[t]).map(|(m, e)| m + e).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    OutcomePanel::new(y, noise, panel.clone())
}

fn draw_noise(noise: NoiseSpec, n: usize, periods: usize, seed: u64, noise_stream: u64) -> Vec<Vec<f64>> {
    let mut rng = seeded(seed, noise_stream);
    let mut draw = || -> f64 {
        let e: f64 = StandardNormal.sample(&mut rng);
        noise.sigma * e
    };
    match noise.regime {
        NoiseRegime::None => vec![vec![0.0; n]; periods],
        NoiseRegime::TimeInvariant => {
            let per_unit: Vec<f64> = (0..n).map(|_| draw()).collect();
            vec![per_unit; periods]
        }
        NoiseRegime::TimeVarying => (0..periods).map(|_| (0..n).map(|_| draw()).collect()).collect(),
    }
}

/// Total treatment effect `(1/N) sum_i [Y_i(1) - Y_i(0)]`, which for the
/// additive model is `tau + eta . mean_i f_i(1)`.
pub fn true_tte(spec: &ModelSpec, params: &TrueParams) -> f64 {
    params.tau
        + params
            .eta
            .iter()
            .zip(mean_full_exposure(spec))
            .map(|(e, f)| e * f)
            .sum::<f64>()
}

/// Which sampled graph an exposure term reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphRole {
    /// The graph that generates outcomes.
    Primary,
    /// A competing graph used only by misspecified candidates.
    Alternate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExposureKind {
    NeighborSum,
    NeighborMean,
    SecondOrderSum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermTemplate {
    pub kind: ExposureKind,
    pub graph: GraphRole,
}

/// Graph-free description of a model, instantiated once graphs are sampled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTemplate {
    pub label: String,
    #[serde(default)]
    pub unit_effects: bool,
    #[serde(default)]
    pub period_effects: bool,
    #[serde(default)]
    pub terms: Vec<TermTemplate>,
}

impl ModelTemplate {
    pub fn new(label: impl Into<String>, terms: Vec<TermTemplate>) -> Self {
        Self { label: label.into(), unit_effects: false, period_effects: false, terms }
    }

    pub fn with_fixed_effects(mut self, unit: bool, period: bool) -> Self {
        self.unit_effects = unit;
        self.period_effects = period;
        self
    }

    pub fn uses_alternate_graph(&self) -> bool {
        self.terms.iter().any(|t| t.graph == GraphRole::Alternate)
    }

    pub fn instantiate(&self, primary: &InterferenceGraph, alternate: Option<&InterferenceGraph>) -> Result<ModelSpec> {
        let terms = self
            .terms
            .iter()
            .map(|term| {
                let graph = match term.graph {
                    GraphRole::Primary => primary,
                    GraphRole::Alternate => alternate.ok_or_else(|| {
                        Error::Config(format!("model {} needs the alternate graph", self.label))
                    })?,
                };
                Ok(match term.kind {
                    ExposureKind::NeighborSum => ExposureTerm::neighbor_sum("neighbor_sum", graph),
                    ExposureKind::NeighborMean => ExposureTerm::neighbor_mean("neighbor_mean", graph),
                    ExposureKind::SecondOrderSum => ExposureTerm::khop_sum("second_order_sum", graph, 2)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelSpec::new(&self.label, primary.n(), ExposureMap::new(terms))?
            .with_unit_effects(self.unit_effects)
            .with_period_effects(self.period_effects))
    }
}
