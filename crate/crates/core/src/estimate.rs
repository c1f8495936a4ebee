//! Stacked design matrices, least-squares fits and TTE estimates.
//!
//! Rows are ordered period-major (`row = t * N + i`). Columns follow the
//! parameter layout `[unit effects | period dummies | group dummies | z | exposures]`,
//! where the unit block collapses to one intercept column when the model
//! uses a shared intercept.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::identify::{span_membership_from_spectrum, SpanMembership};
use crate::linalg::SymSpectrum;
use crate::outcomes::{exposure_features, mean_full_exposure, ModelSpec, NoiseRegime};
use crate::rollout::TreatmentPanel;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColumnLayout {
    pub unit: Range<usize>,
    pub period: Range<usize>,
    pub group: Range<usize>,
    pub treatment: usize,
    pub exposure: Range<usize>,
    /// Whether `unit` holds one dummy per unit (true) or a single intercept.
    pub unit_dummies: bool,
}

impl ColumnLayout {
    pub fn new(spec: &ModelSpec, periods: usize) -> Self {
        let alpha = if spec.unit_effects() { spec.n() } else { 1 };
        let gamma = if spec.period_effects() { periods } else { 0 };
        let unit = 0..alpha;
        let period = unit.end..unit.end + gamma;
        let group = period.end..period.end + spec.group_count();
        let treatment = group.end;
        let exposure = treatment + 1..treatment + 1 + spec.exposure().dim();
        Self { unit, period, group, treatment, exposure, unit_dummies: spec.unit_effects() }
    }

    pub fn k(&self) -> usize {
        self.exposure.end
    }
}

#[derive(Debug, Clone)]
pub struct DesignMatrix {
    x: DMatrix<f64>,
    n: usize,
    periods: usize,
    layout: ColumnLayout,
}

impl DesignMatrix {
    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.periods
    }

    pub fn k(&self) -> usize {
        self.x.ncols()
    }

    pub fn layout(&self) -> &ColumnLayout {
        &self.layout
    }

    pub fn row_index(&self, unit: usize, period: usize) -> usize {
        period * self.n + unit
    }

    /// The `N x K` block `X^t`.
    pub fn period_block(&self, period: usize) -> Result<DMatrix<f64>> {
        self.check_period(period)?;
        Ok(self.x.rows(period * self.n, self.n).into_owned())
    }

    /// Rows of the listed periods, stacked in the given order.
    pub fn rows_for_periods(&self, periods: &[usize]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(periods.len() * self.n, self.k());
        for (slot, &t) in periods.iter().enumerate() {
            self.check_period(t)?;
            out.rows_mut(slot * self.n, self.n).copy_from(&self.x.rows(t * self.n, self.n));
        }
        Ok(out)
    }

    fn check_period(&self, period: usize) -> Result<()> {
        if period >= self.periods {
            return Err(Error::PeriodOutOfRange { period, periods: self.periods });
        }
        Ok(())
    }
}

/// Covariates `X = [X^1; ...; X^T]` for `spec` under `panel`.
pub fn build_design(spec: &ModelSpec, panel: &TreatmentPanel) -> Result<DesignMatrix> {
    let (n, periods) = (panel.n(), panel.periods());
    spec.check_panel(n, periods)?;
    let layout = ColumnLayout::new(spec, periods);
    let mut x = DMatrix::zeros(n * periods, layout.k());
    for t in 0..periods {
        let z = panel.period(t);
        let features = exposure_features(spec, z)?;
        for i in 0..n {
            let row = t * n + i;
            if layout.unit_dummies {
                x[(row, i)] = 1.0;
            } else {
                x[(row, 0)] = 1.0;
            }
            if spec.period_effects() {
                x[(row, layout.period.start + t)] = 1.0;
            }
            if let Some(groups) = spec.groups() {
                x[(row, layout.group.start + groups.group(i, t))] = 1.0;
            }
            x[(row, layout.treatment)] = f64::from(u8::from(z[i]));
            for (k, col) in layout.exposure.clone().enumerate() {
                x[(row, col)] = features[(i, k)];
            }
        }
    }
    Ok(DesignMatrix { x, n, periods, layout })
}

/// Linear map `c` with `TTE = c . theta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastVector(pub DVector<f64>);

impl ContrastVector {
    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.norm_squared()
    }
}

/// `c = [0, 0, 0, 1, mean_i f_i(1)]` in the column layout of `spec` over `periods`.
pub fn contrast_vector(spec: &ModelSpec, periods: usize) -> ContrastVector {
    let layout = ColumnLayout::new(spec, periods);
    let mut c = DVector::zeros(layout.k());
    c[layout.treatment] = 1.0;
    for (col, v) in layout.exposure.clone().zip(mean_full_exposure(spec)) {
        c[col] = v;
    }
    ContrastVector(c)
}

/// Least-squares fit. When the Gram matrix is singular, `theta` is the
/// minimum-norm solution.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: DVector<f64>,
    pub gram_min_eigenvalue: f64,
    pub gram_max_eigenvalue: f64,
    pub singular: bool,
    spectrum: SymSpectrum,
}

impl FitResult {
    pub fn spectrum(&self) -> &SymSpectrum {
        &self.spectrum
    }

    /// `X theta`
    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        x * &self.theta
    }
}

pub fn fit(design: &DesignMatrix, y: &DVector<f64>) -> Result<FitResult> {
    fit_matrix(design.x(), y)
}

/// Fits `y ~ x` through the normal equations.
pub fn fit_matrix(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<FitResult> {
    if x.nrows() != y.len() {
        return Err(Error::DimensionMismatch(format!("{} design rows vs {} outcomes", x.nrows(), y.len())));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("design matrix"));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("outcomes"));
    }
    let gram = x.tr_mul(x);
    let rhs = x.tr_mul(y);
    let spectrum = SymSpectrum::new(&gram);
    let singular = spectrum.is_singular();
    let theta = if singular {
        spectrum.pinv_apply(&rhs)
    } else {
        match gram.cholesky() {
            Some(chol) => chol.solve(&rhs),
            None => spectrum.pinv_apply(&rhs),
        }
    };
    Ok(FitResult {
        theta,
        gram_min_eigenvalue: spectrum.min(),
        gram_max_eigenvalue: spectrum.max(),
        singular,
        spectrum,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TteEstimate {
    pub value: f64,
    pub identified: bool,
    /// Identification needed the span test because the Gram was singular.
    pub via_span: bool,
}

/// `c . theta_hat`, flagged as identified when the Gram is nonsingular or
/// `c` lies in the row space of `X`.
pub fn estimate_tte(fit: &FitResult, c: &ContrastVector, design: &DesignMatrix) -> Result<TteEstimate> {
    estimate_tte_matrix(fit, c, design.x())
}

pub fn estimate_tte_matrix(fit: &FitResult, c: &ContrastVector, x: &DMatrix<f64>) -> Result<TteEstimate> {
    if c.0.len() != fit.theta.len() || x.ncols() != fit.theta.len() {
        return Err(Error::DimensionMismatch("contrast, fit and design disagree on K".into()));
    }
    let value = c.0.dot(&fit.theta);
    if !fit.singular {
        return Ok(TteEstimate { value, identified: true, via_span: false });
    }
    let SpanMembership { member, .. } = span_membership_from_spectrum(x, &fit.spectrum, c);
    Ok(TteEstimate { value, identified: member, via_span: member })
}

/// Mean squared prediction error of `theta` on period `period`.
pub fn mspe(theta: &DVector<f64>, design: &DesignMatrix, y: &DVector<f64>, period: usize) -> Result<f64> {
    if y.len() != design.x().nrows() {
        return Err(Error::DimensionMismatch("outcome vector does not match design rows".into()));
    }
    let block = design.period_block(period)?;
    let n = design.n();
    let y_block = y.rows(period * n, n).into_owned();
    Ok(prediction_mse(&block, &y_block, theta))
}

/// `(1/rows) * ||x theta - y||^2`
pub fn prediction_mse(x: &DMatrix<f64>, y: &DVector<f64>, theta: &DVector<f64>) -> f64 {
    let resid = x * theta - y;
    resid.norm_squared() / y.len() as f64
}

/// Upper bound on `(TTE_hat - TTE)^2` from a prediction period `s`:
/// `2 ||c||^2 / lambda_min(Sigma_s) * (MSPE_s + mean eps_s^2)` with
/// `Sigma_s = X^s' X^s / N`.
pub fn tte_error_bound(c: &ContrastVector, x_period: &DMatrix<f64>, mspe_s: f64, noise_ms: f64) -> Result<f64> {
    if c.0.len() != x_period.ncols() {
        return Err(Error::DimensionMismatch("contrast and period covariates disagree on K".into()));
    }
    let cov = x_period.tr_mul(x_period) / x_period.nrows() as f64;
    let spectrum = SymSpectrum::new(&cov);
    if spectrum.is_singular() {
        return Err(Error::SingularCovariance(spectrum.min()));
    }
    Ok(2.0 * c.norm_squared() / spectrum.min() * (mspe_s + noise_ms))
}

/// Bound on `E[(TTE_hat - TTE)^2]` for a correctly specified model:
/// `4 K T ||c||^2 sigma^2 E[1 / lambda_min(X'X)]` when noise is fixed per
/// unit, and the same without the factor `T` when it is drawn afresh each
/// period.
pub fn mse_bound(regime: NoiseRegime, k: usize, periods: usize, c_norm_squared: f64, sigma: f64, mean_inv_lambda_min: f64) -> f64 {
    let base = 4.0 * k as f64 * c_norm_squared * sigma * sigma * mean_inv_lambda_min;
    match regime {
        NoiseRegime::TimeInvariant => base * periods as f64,
        NoiseRegime::TimeVarying => base,
        NoiseRegime::None => 0.0,
    }
}

/// JSON view of a fit and its TTE estimate.
#[derive(Debug, Clone, Serialize)]
pub struct FitReport {
    pub theta: Vec<f64>,
    pub tte_hat: f64,
    pub min_eig: f64,
    pub singular: bool,
    pub identified: bool,
    pub identified_via_span: bool,
}

impl FitReport {
    pub fn new(fit: &FitResult, tte: &TteEstimate) -> Self {
        Self {
            theta: fit.theta.iter().copied().collect(),
            tte_hat: tte.value,
            min_eig: fit.gram_min_eigenvalue,
            singular: fit.singular,
            identified: tte.identified,
            identified_via_span: tte.via_span,
        }
    }
}
