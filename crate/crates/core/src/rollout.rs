//! Roll-out treatment designs.
//!
//! A roll-out over `T` periods only ever adds treated units. The completely
//! randomized design treats exactly `floor(n * cumulative fraction)` units at
//! each period; the Bernoulli design flips an independent coin for every
//! still-untreated unit.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{seeded, stream};

/// Slack for floating-point sums of increments such as `0.01 + 0.09`.
const FRACTION_EPS: f64 = 1e-9;

/// Per-period newly-treated fractions `p_1..p_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct RolloutSchedule {
    increments: Vec<f64>,
}

impl RolloutSchedule {
    pub fn new(increments: Vec<f64>) -> Result<Self> {
        if increments.is_empty() {
            return Err(Error::InvalidSchedule("at least one period is required".into()));
        }
        if let Some(p) = increments.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::InvalidSchedule(format!("increment {p} is negative or non-finite")));
        }
        let total: f64 = increments.iter().sum();
        if total > 1.0 + FRACTION_EPS {
            return Err(Error::InvalidSchedule(format!("increments sum to {total} > 1")));
        }
        Ok(Self { increments })
    }

    /// `periods` equal increments summing to `total`.
    pub fn even(total: f64, periods: usize) -> Result<Self> {
        if periods == 0 {
            return Err(Error::InvalidSchedule("at least one period is required".into()));
        }
        Self::new(vec![total / periods as f64; periods])
    }

    pub fn periods(&self) -> usize {
        self.increments.len()
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// `sum_{j <= period} p_j` for a 0-based period.
    pub fn cumulative(&self, period: usize) -> Result<f64> {
        self.check_period(period)?;
        Ok(self.increments[..=period].iter().sum())
    }

    /// The first `periods` increments.
    pub fn truncated(&self, periods: usize) -> Result<Self> {
        if periods == 0 || periods > self.periods() {
            return Err(Error::PeriodOutOfRange { period: periods, periods: self.periods() });
        }
        Self::new(self.increments[..periods].to_vec())
    }

    /// Treated count a completely randomized roll-out reaches at `period`.
    pub fn crd_count(&self, n: usize, period: usize) -> Result<usize> {
        let q = self.cumulative(period)?;
        Ok(((n as f64 * q + FRACTION_EPS).floor() as usize).min(n))
    }

    fn check_period(&self, period: usize) -> Result<()> {
        if period >= self.periods() {
            return Err(Error::PeriodOutOfRange { period, periods: self.periods() });
        }
        Ok(())
    }
}

impl TryFrom<Vec<f64>> for RolloutSchedule {
    type Error = Error;
    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<RolloutSchedule> for Vec<f64> {
    fn from(value: RolloutSchedule) -> Self {
        value.increments
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    CompletelyRandomized,
    Bernoulli,
    /// User-supplied monotone roll-out.
    Custom,
    /// Independent assignments per period with no roll-out structure.
    /// The only kind allowed to un-treat units.
    Static,
}

/// Binary assignments `z[t][i]`, stored period-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreatmentPanel {
    n: usize,
    z: Vec<Vec<bool>>,
    kind: DesignKind,
}

impl TreatmentPanel {
    /// Wraps period-major assignments. Every kind except [`DesignKind::Static`]
    /// must be monotone.
    pub fn from_periods(z: Vec<Vec<bool>>, kind: DesignKind) -> Result<Self> {
        let n = z.first().map(Vec::len).ok_or_else(|| {
            Error::InvalidArgument("a treatment panel needs at least one period".into())
        })?;
        if n == 0 {
            return Err(Error::InvalidArgument("a treatment panel needs at least one unit".into()));
        }
        if let Some(t) = z.iter().position(|row| row.len() != n) {
            return Err(Error::DimensionMismatch(format!("period {t} has a different unit count")));
        }
        let panel = Self { n, z, kind };
        if kind != DesignKind::Static {
            if let Some((unit, period)) = panel.first_monotonicity_violation() {
                return Err(Error::InvalidArgument(format!(
                    "unit {unit} becomes untreated at period {period}"
                )));
            }
        }
        Ok(panel)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn periods(&self) -> usize {
        self.z.len()
    }

    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn is_treated(&self, unit: usize, period: usize) -> bool {
        self.z[period][unit]
    }

    /// Assignment vector of one period.
    pub fn period(&self, period: usize) -> &[bool] {
        &self.z[period]
    }

    pub fn treated_count(&self, period: usize) -> usize {
        self.z[period].iter().filter(|&&b| b).count()
    }

    /// The first `periods` periods as a panel of the same kind.
    pub fn prefix(&self, periods: usize) -> Result<Self> {
        if periods == 0 || periods > self.periods() {
            return Err(Error::PeriodOutOfRange { period: periods, periods: self.periods() });
        }
        Ok(Self { n: self.n, z: self.z[..periods].to_vec(), kind: self.kind })
    }

    /// First `(unit, period)` where a treated unit becomes untreated.
    pub fn first_monotonicity_violation(&self) -> Option<(usize, usize)> {
        (1..self.periods()).find_map(|t| {
            (0..self.n).find(|&i| self.z[t - 1][i] && !self.z[t][i]).map(|i| (i, t))
        })
    }

    pub fn is_monotone(&self) -> bool {
        self.first_monotonicity_violation().is_none()
    }

    /// CSV with header `unit,period,z`, rows ordered by period then unit.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("unit,period,z\n");
        for (t, row) in self.z.iter().enumerate() {
            for (i, &treated) in row.iter().enumerate() {
                let _ = writeln!(out, "{i},{t},{}", u8::from(treated));
            }
        }
        out
    }
}

/// T-period completely randomized roll-out.
pub fn sample_crd(n: usize, schedule: &RolloutSchedule, seed: u64) -> Result<TreatmentPanel> {
    sample_crd_with(n, schedule, &mut seeded(seed, stream::TREATMENT))
}

pub fn sample_crd_with(
    n: usize,
    schedule: &RolloutSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<TreatmentPanel> {
    check_units(n)?;
    let mut untreated: Vec<usize> = (0..n).collect();
    let mut current = vec![false; n];
    let mut z = Vec::with_capacity(schedule.periods());
    let mut treated = 0;
    for t in 0..schedule.periods() {
        let target = schedule.crd_count(n, t)?;
        let newly = target - treated;
        // uniform draw without replacement among the untreated
        let (chosen, rest) = untreated.partial_shuffle(rng, newly);
        for &i in chosen.iter() {
            current[i] = true;
        }
        untreated = rest.to_vec();
        treated = target;
        z.push(current.clone());
    }
    TreatmentPanel::from_periods(z, DesignKind::CompletelyRandomized)
}

/// T-period Bernoulli roll-out.
pub fn sample_bernoulli(n: usize, schedule: &RolloutSchedule, seed: u64) -> Result<TreatmentPanel> {
    sample_bernoulli_with(n, schedule, &mut seeded(seed, stream::TREATMENT))
}

pub fn sample_bernoulli_with(
    n: usize,
    schedule: &RolloutSchedule,
    rng: &mut ChaCha8Rng,
) -> Result<TreatmentPanel> {
    check_units(n)?;
    let mut current = vec![false; n];
    let mut z = Vec::with_capacity(schedule.periods());
    for &p in schedule.increments() {
        for slot in current.iter_mut() {
            if !*slot && rng.random::<f64>() < p {
                *slot = true;
            }
        }
        z.push(current.clone());
    }
    TreatmentPanel::from_periods(z, DesignKind::Bernoulli)
}

/// `periods` independent assignments, each treating exactly `floor(n * fraction)`
/// units chosen afresh. Used by the no-roll-out baseline.
pub fn sample_static_with(
    n: usize,
    periods: usize,
    fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TreatmentPanel> {
    check_units(n)?;
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!("treated fraction {fraction} outside [0, 1]")));
    }
    let count = ((n as f64 * fraction + FRACTION_EPS).floor() as usize).min(n);
    let mut units: Vec<usize> = (0..n).collect();
    let z = (0..periods)
        .map(|_| {
            let (chosen, _) = units.partial_shuffle(rng, count);
            let mut row = vec![false; n];
            for &i in chosen.iter() {
                row[i] = true;
            }
            row
        })
        .collect();
    TreatmentPanel::from_periods(z, DesignKind::Static)
}

/// `P[Z_i^t = 1]` under the completely randomized roll-out: the cumulative fraction.
pub fn marginal_prob_crd(schedule: &RolloutSchedule, period: usize) -> Result<f64> {
    schedule.cumulative(period)
}

/// `P[Z_i^t = 1]` under the Bernoulli roll-out: `1 - prod_{j <= t} (1 - p_j)`.
pub fn marginal_prob_bernoulli(schedule: &RolloutSchedule, period: usize) -> Result<f64> {
    schedule.check_period(period)?;
    let untreated: f64 = schedule.increments[..=period].iter().map(|p| 1.0 - p).product();
    Ok(1.0 - untreated)
}

fn check_units(n: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidArgument("unit count must be positive".into()));
    }
    Ok(())
}
