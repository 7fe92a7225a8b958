use fairscope_core::audit::{BetaInterval, CapBound, ParetoPoint};
use fairscope_core::binary::DiscrepancySolution;
use fairscope_core::unfairness::LabelBound;
use fairscope_core::OneSided;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Validate,
    FairErrorLB,
    UnfairnessKnown,
    Mindisc,
    Pareto,
    BetaSweep,
    CapBound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub mode: Mode,
    pub inputs_digest: String,
    pub results: Results,
    pub tool_version: String,
    pub parameters: Parameters,
}

/// Everything needed to rerun the command that produced a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Parameters {
    pub command: String,
    pub input: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub refine: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalize: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unfairness_cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub orderings: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_stop: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub slp: Option<fairscope_core::multiclass::SlpParams>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Results {
    Validate(ValidateResult),
    FairError(FairErrorReport),
    Unfairness(UnfairnessReport),
    Mindisc(MindiscReport),
    Pareto(ParetoReport),
    BetaSweep(BetaSweepReport),
    CapBound(CapBoundReport),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidateResult {
    pub kind: String,
    pub k: usize,
    pub groups: Vec<String>,
    pub weights: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub onesided: Option<OneSided>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairErrorReport {
    pub feasible: bool,
    pub min_error: Option<f64>,
    pub witness: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnfairnessReport {
    pub exact: bool,
    pub lower: f64,
    pub upper: f64,
    pub error: f64,
    pub per_label: Vec<LabelBound>,
    pub baseline: Vec<Vec<f64>>,
    pub per_group_eta: Vec<GroupEta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupEta {
    pub group: String,
    pub eta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMatrix {
    pub group: String,
    pub matrix: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MindiscReport {
    pub exact: bool,
    pub beta: f64,
    pub value: f64,
    /// Sound lower companion when `value` is only an upper bound.
    pub lower: Option<f64>,
    pub unfairness_part: f64,
    pub error_part: f64,
    pub baseline: Vec<Vec<f64>>,
    pub witness: Vec<GroupMatrix>,
}

impl MindiscReport {
    pub fn new(sol: &DiscrepancySolution, lower: Option<f64>, group_ids: &[String]) -> Self {
        Self {
            exact: lower.is_none(),
            beta: sol.beta,
            value: sol.value,
            lower,
            unfairness_part: sol.unfairness_part,
            error_part: sol.error_part,
            baseline: sol.baseline.rows(),
            witness: group_ids
                .iter()
                .zip(&sol.witness_confusions)
                .map(|(g, m)| GroupMatrix {
                    group: g.clone(),
                    matrix: m.rows(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoReport {
    pub points: Vec<ParetoPoint>,
    pub normalization: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub csv: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BetaSweepReport {
    pub intervals: Vec<BetaInterval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapBoundReport {
    pub cap_kind: String,
    pub cap: f64,
    /// The bound the cap implies: unfairness for an error cap, error for an
    /// unfairness cap.
    pub bound: f64,
    #[serde(flatten)]
    pub solution: CapBound,
}

/// `beta,unfairness_lb,error_lb,mindisc` rows for external plotting.
pub fn pareto_csv(points: &[ParetoPoint]) -> String {
    let mut s = String::from("beta,unfairness_lb,error_lb,mindisc\n");
    for p in points {
        s.push_str(&format!("{},{},{},{}\n", p.beta, p.unfairness_lb, p.error_lb, p.mindisc_value));
    }
    s
}
