//! Experiment configuration files.
//!
//! A config is a JSON object; every field except `study` has a default, and
//! [`ExperimentConfig::resolve`] fills them in per study kind. The resolved
//! form is what gets hashed and embedded in every summary.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::InterferenceGraph;
use crate::outcomes::{ExposureKind, GraphRole, ModelTemplate, NoiseRegime, TermTemplate};
use crate::rollout::RolloutSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Selection,
    Identification,
    Variance,
    Sparsity,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Selection => "selection",
            StudyKind::Identification => "identification",
            StudyKind::Variance => "variance",
            StudyKind::Sparsity => "sparsity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleConfig {
    /// Total treated fraction spread evenly over the periods.
    Even(f64),
    /// Explicit per-period increments; their count must equal `periods`.
    Increments(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignConfig {
    CompletelyRandomized,
    Bernoulli,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    ErdosRenyi,
    Complete,
    EdgeList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub kind: GraphKind,
    /// Edge probability for `erdos_renyi`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    /// Primary graph for `edge_list`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    /// Competing graph for `edge_list`. Erdos-Renyi studies draw an
    /// independent graph with the same edge probability instead.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alternate_path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthConfig {
    /// Label of the candidate that generates the data.
    #[serde(default = "default_truth_label")]
    pub model: String,
    /// Shared intercept, or the mean of the unit effects.
    #[serde(default)]
    pub alpha: f64,
    /// Standard deviation of unit effects and period effects when the true
    /// model has them.
    #[serde(default = "default_one")]
    pub effects_sd: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_eta")]
    pub eta1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta2: Option<f64>,
    #[serde(default = "default_one")]
    pub sigma: f64,
    #[serde(default = "default_noise")]
    pub noise: NoiseRegime,
}

fn default_truth_label() -> String {
    "true".into()
}
fn default_one() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    5.0
}
fn default_eta() -> f64 {
    2.0
}
fn default_noise() -> NoiseRegime {
    NoiseRegime::TimeVarying
}

impl Default for TruthConfig {
    fn default() -> Self {
        Self {
            model: default_truth_label(),
            alpha: 0.0,
            effects_sd: 1.0,
            tau: default_tau(),
            eta1: default_eta(),
            eta2: None,
            sigma: 1.0,
            noise: default_noise(),
        }
    }
}

/// Config as read from disk. See the README for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub study: StudyKind,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub periods: Option<usize>,
    #[serde(default)]
    pub schedule: Option<ScheduleConfig>,
    #[serde(default)]
    pub design: Option<DesignConfig>,
    #[serde(default)]
    pub graph: Option<GraphConfig>,
    #[serde(default)]
    pub truth: Option<TruthConfig>,
    #[serde(default)]
    pub candidates: Option<Vec<ModelTemplate>>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub folds: Option<usize>,
    /// Grid for identification and sparsity sweeps.
    #[serde(default)]
    pub edge_probabilities: Option<Vec<f64>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub paper_scale: bool,
}

/// Every field filled in and validated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub study: StudyKind,
    pub n: usize,
    pub periods: usize,
    pub schedule: ScheduleConfig,
    pub design: DesignConfig,
    pub graph: GraphConfig,
    pub truth: TruthConfig,
    pub candidates: Vec<ModelTemplate>,
    pub replications: usize,
    pub seed: u64,
    pub folds: usize,
    pub edge_probabilities: Vec<f64>,
    /// Where outputs go; not part of the recorded config, so reruns into
    /// different directories produce identical files.
    #[serde(skip)]
    pub out: PathBuf,
    pub paper_scale: bool,
}

/// Unit count and replications for selection studies at desk and paper scale.
pub const DESK_SCALE: (usize, usize) = (200, 200);
pub const PAPER_SCALE: (usize, usize) = (1000, 500);

/// Edge probability of the default selection graphs.
pub const SELECTION_EDGE_P: f64 = 0.6;

fn term(kind: ExposureKind, graph: GraphRole) -> TermTemplate {
    TermTemplate { kind, graph }
}

/// True graph, competing graph and no interference, all linear-in-means.
pub fn default_selection_candidates() -> Vec<ModelTemplate> {
    vec![
        ModelTemplate::new("true", vec![term(ExposureKind::NeighborMean, GraphRole::Primary)]),
        ModelTemplate::new("wrong_graph", vec![term(ExposureKind::NeighborMean, GraphRole::Alternate)]),
        ModelTemplate::new("no_interference", vec![]),
    ]
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let study = self.study;
        let selection_like = matches!(study, StudyKind::Selection | StudyKind::Sparsity);
        let (default_n, default_reps) = match study {
            StudyKind::Selection | StudyKind::Sparsity => DESK_SCALE,
            StudyKind::Identification => (500, 100),
            StudyKind::Variance => (100, 2000),
        };
        let (n, replications) = if self.paper_scale && selection_like {
            PAPER_SCALE
        } else {
            (self.n.unwrap_or(default_n), self.replications.unwrap_or(default_reps))
        };
        let periods = self.periods.unwrap_or(5);
        let schedule = self.schedule.clone().unwrap_or(ScheduleConfig::Even(0.5));
        let graph = self.graph.clone().unwrap_or_else(|| match study {
            StudyKind::Variance => GraphConfig { kind: GraphKind::Complete, p: None, path: None, alternate_path: None },
            StudyKind::Identification => {
                GraphConfig { kind: GraphKind::ErdosRenyi, p: None, path: None, alternate_path: None }
            }
            _ => GraphConfig { kind: GraphKind::ErdosRenyi, p: Some(SELECTION_EDGE_P), path: None, alternate_path: None },
        });
        let candidates = self.candidates.clone().unwrap_or_else(|| match study {
            StudyKind::Selection | StudyKind::Sparsity => default_selection_candidates(),
            StudyKind::Identification => vec![ModelTemplate::new(
                "true",
                vec![term(ExposureKind::NeighborSum, GraphRole::Primary)],
            )
            .with_fixed_effects(true, false)],
            StudyKind::Variance => {
                vec![ModelTemplate::new("true", vec![term(ExposureKind::NeighborMean, GraphRole::Primary)])]
            }
        });
        let edge_probabilities = self.edge_probabilities.clone().unwrap_or_else(|| match study {
            StudyKind::Identification => vec![0.001, 0.01, 0.05],
            StudyKind::Sparsity => vec![0.05, 0.25, 0.5, 0.75, 0.95],
            _ => Vec::new(),
        });
        let resolved = ResolvedConfig {
            study,
            n,
            periods,
            schedule,
            design: self.design.unwrap_or(DesignConfig::CompletelyRandomized),
            graph,
            truth: self.truth.clone().unwrap_or_default(),
            candidates,
            replications,
            seed: self.seed.unwrap_or(0),
            folds: self.folds.unwrap_or(crate::select::DEFAULT_FOLDS),
            edge_probabilities,
            out: self.out.clone().unwrap_or_else(|| PathBuf::from(format!("results/{}", study.name()))),
            paper_scale: self.paper_scale,
        };
        resolved.validate()?;
        Ok(resolved)
    }
}

impl ResolvedConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.n < 2 {
            return bad(format!("n = {} is too small", self.n));
        }
        if self.periods == 0 {
            return bad("periods must be at least 1".into());
        }
        self.schedule()?;
        let mut labels = std::collections::HashSet::new();
        for c in &self.candidates {
            if !labels.insert(c.label.as_str()) {
                return bad(format!("duplicate candidate label {:?}", c.label));
            }
        }
        let truth = self.truth_template()?;
        let eta_needed = truth.terms.len();
        if eta_needed > 2 {
            return bad(format!("true model {} has {eta_needed} exposure terms; at most 2 are supported", truth.label));
        }
        if eta_needed == 2 && self.truth.eta2.is_none() {
            return bad(format!("true model {} has two exposure terms but eta2 is missing", truth.label));
        }
        if truth.uses_alternate_graph() {
            return bad("the true model must not read the alternate graph".into());
        }
        if !(self.truth.sigma >= 0.0 && self.truth.sigma.is_finite()) {
            return bad("sigma must be finite and non-negative".into());
        }
        let needs_alternate = self.candidates.iter().any(ModelTemplate::uses_alternate_graph);
        match self.graph.kind {
            GraphKind::ErdosRenyi => {
                let sweep = matches!(self.study, StudyKind::Identification | StudyKind::Sparsity);
                if sweep {
                    if self.edge_probabilities.is_empty() {
                        return bad("edge_probabilities must not be empty".into());
                    }
                } else if self.graph.p.is_none() {
                    return bad("erdos_renyi graphs need an edge probability p".into());
                }
                let all_p = self.graph.p.iter().chain(if sweep { &self.edge_probabilities[..] } else { &[] });
                for &p in all_p {
                    if !(0.0..=1.0).contains(&p) {
                        return bad(format!("edge probability {p} outside [0, 1]"));
                    }
                }
            }
            GraphKind::Complete => {
                if needs_alternate {
                    return bad("complete graphs have no alternate graph; drop candidates that read it".into());
                }
            }
            GraphKind::EdgeList => {
                if self.graph.path.is_none() {
                    return bad("edge_list graphs need a path".into());
                }
                if needs_alternate && self.graph.alternate_path.is_none() {
                    return bad("candidates read the alternate graph but alternate_path is missing".into());
                }
            }
        }
        if matches!(self.study, StudyKind::Identification | StudyKind::Sparsity)
            && self.graph.kind != GraphKind::ErdosRenyi
        {
            return bad(format!("{} sweeps need erdos_renyi graphs", self.study.name()));
        }
        if matches!(self.study, StudyKind::Selection | StudyKind::Sparsity) {
            if self.periods < 2 {
                return bad("selection studies need at least 2 periods".into());
            }
            if self.folds < 2 || self.folds > self.n {
                return bad(format!("folds = {} must be in [2, n]", self.folds));
            }
        }
        if self.study == StudyKind::Variance && self.truth.noise == NoiseRegime::None && self.truth.sigma != 0.0 {
            return bad("noise regime none requires sigma = 0".into());
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<RolloutSchedule> {
        let schedule = match &self.schedule {
            ScheduleConfig::Even(total) => RolloutSchedule::even(*total, self.periods),
            ScheduleConfig::Increments(p) => {
                if p.len() != self.periods {
                    return Err(Error::Config(format!(
                        "schedule has {} increments but periods = {}",
                        p.len(),
                        self.periods
                    )));
                }
                RolloutSchedule::new(p.clone())
            }
        };
        schedule.map_err(|e| Error::Config(format!("invalid schedule: {e}")))
    }

    /// Final treated fraction of the schedule.
    pub fn total_fraction(&self) -> Result<f64> {
        self.schedule()?.cumulative(self.periods - 1)
    }

    pub fn truth_template(&self) -> Result<&ModelTemplate> {
        self.candidates
            .iter()
            .find(|c| c.label == self.truth.model)
            .ok_or_else(|| Error::Config(format!("true model {:?} is not among the candidates", self.truth.model)))
    }

    pub fn truth_index(&self) -> usize {
        self.candidates.iter().position(|c| c.label == self.truth.model).unwrap_or(0)
    }

    pub fn eta(&self) -> Vec<f64> {
        let n_terms = self.truth_template().map(|t| t.terms.len()).unwrap_or(0);
        [self.truth.eta1, self.truth.eta2.unwrap_or(0.0)].into_iter().take(n_terms).collect()
    }

    pub fn load_edge_lists(&self) -> Result<(Option<InterferenceGraph>, Option<InterferenceGraph>)> {
        if self.graph.kind != GraphKind::EdgeList {
            return Ok((None, None));
        }
        let read = |path: &PathBuf| -> Result<InterferenceGraph> {
            let text = fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read edge list {}: {e}", path.display())))?;
            InterferenceGraph::parse_edge_list(&text, Some(self.n))
        };
        let primary = self.graph.path.as_ref().map(read).transpose()?;
        let alternate = self.graph.alternate_path.as_ref().map(read).transpose()?;
        Ok((primary, alternate))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the compact JSON form, hex encoded.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(serde_json::to_vec(self)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}
