//! Network architecture and hyperparameter configuration.
//!
//! Node levels are numbered `1..=L`; level 0 is the input. The forward
//! weight connecting level `l-1` to level `l` has shape `M_l × M_{l-1}`,
//! the backward weight at level `l` has shape `M_l × M_{l+1}`.

use serde::{Deserialize, Serialize};

use crate::error::{LpnError, Result, ValidationIssue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    Synchronous,
    Asynchronous,
}

impl ScheduleMode {
    pub fn tag(&self) -> &'static str {
        match self {
            ScheduleMode::Synchronous => "syn",
            ScheduleMode::Asynchronous => "asyn",
        }
    }
}

/// Penalty shape applied to the per-sample goal/flow alignment terms.
/// Only the identity ships; the enum leaves room for other penalties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    #[default]
    Identity,
}

impl PenaltyKind {
    #[inline]
    pub fn apply(&self, r: f64) -> f64 {
        match self {
            PenaltyKind::Identity => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    /// Input dimensionality `M_0`.
    pub input_dim: usize,
    /// Node widths `M_1..M_L`; the length is the node count `L`.
    pub dims: Vec<usize>,
    /// Level carrying the discrimination goal, in `1..=L`.
    pub goal_node: usize,
    /// When set, backward weights are tied as `B_l = A_lᵀ` and never stored.
    pub tie_backward: bool,
    pub schedule_mode: ScheduleMode,
}

impl NetworkConfig {
    pub fn new(input_dim: usize, dims: Vec<usize>, goal_node: usize) -> Self {
        NetworkConfig {
            input_dim,
            dims,
            goal_node,
            tie_backward: true,
            schedule_mode: ScheduleMode::Synchronous,
        }
    }

    /// Node count `L`.
    pub fn levels(&self) -> usize {
        self.dims.len()
    }

    /// Width `M_l`, with `width(0)` the input dimension.
    pub fn width(&self, level: usize) -> usize {
        if level == 0 {
            self.input_dim
        } else {
            self.dims[level - 1]
        }
    }

    /// Mode tag of the form `syn_n[L]g[l_G]`.
    pub fn mode_tag(&self) -> String {
        format!(
            "{}_n[{}]g[{}]",
            self.schedule_mode.tag(),
            self.levels(),
            self.goal_node
        )
    }
}

/// Parses a mode tag like `syn_n[6]g[3]` into (mode, levels, goal_node).
pub fn parse_mode_tag(tag: &str) -> Option<(ScheduleMode, usize, usize)> {
    let (mode_str, rest) = tag.split_once("_n[")?;
    let mode = match mode_str {
        "syn" => ScheduleMode::Synchronous,
        "asyn" => ScheduleMode::Asynchronous,
        _ => return None,
    };
    let (levels_str, rest) = rest.split_once("]g[")?;
    let goal_str = rest.strip_suffix(']')?;
    let levels = levels_str.parse().ok()?;
    let goal = goal_str.parse().ok()?;
    Some((mode, levels, goal))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Soft-threshold level `τ_l` per node, used in the forward pass.
    pub tau: Vec<f64>,
    /// Goal penalty weight `λ_{l,0}` (seeds the goal solver's penalty).
    pub lambda0: Vec<f64>,
    /// Sparsity weight and corrective-transform threshold `λ_{l,1}`.
    pub lambda1: Vec<f64>,
    /// Frobenius weight penalty `λ_{l,2}`.
    pub lambda2: Vec<f64>,
    /// Coherence penalty `λ_{l,3}` on `‖A Aᵀ − I‖²`.
    pub lambda3: Vec<f64>,
    /// Log-det conditioning penalty `λ_{l,4}`.
    pub lambda4: Vec<f64>,
    /// Forward/backward tie penalty `λ_{l,5}` on `‖A_l − B_lᵀ‖²`.
    pub lambda5: Vec<f64>,
    /// Forward flow weight `λ_{l,f}`.
    pub lambda_f: Vec<f64>,
    /// Backward flow weight `λ_{l,b}`.
    pub lambda_b: Vec<f64>,
    /// Online blend step `ρ` in `(0, 1]`.
    pub rho: f64,
    /// Fraction of the training set drawn per batch, in `(0, 1]`.
    pub batch_fraction: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub penalty_kind: PenaltyKind,
}

impl HyperParams {
    /// Defaults following the reference experiment setup: `λ_{l,2..5} = 34`,
    /// `λ_{l,f} = λ_{l,b} = 1`, `λ_{l,1} = M_l / (2·l)` with `τ_l = λ_{l,1}`,
    /// 15% batches, 120 iterations.
    pub fn defaults(config: &NetworkConfig) -> Self {
        let levels = config.levels();
        let lambda1: Vec<f64> = (1..=levels)
            .map(|l| config.width(l) as f64 / (2.0 * l as f64))
            .collect();
        HyperParams {
            tau: lambda1.clone(),
            lambda0: vec![1.0; levels],
            lambda1,
            lambda2: vec![34.0; levels],
            lambda3: vec![34.0; levels],
            lambda4: vec![34.0; levels],
            lambda5: vec![34.0; levels],
            lambda_f: vec![1.0; levels],
            lambda_b: vec![1.0; levels],
            rho: 0.5,
            batch_fraction: 0.15,
            max_iters: 120,
            seed: 0,
            penalty_kind: PenaltyKind::Identity,
        }
    }

    /// Uniform value for every per-level knob; handy for small experiments.
    pub fn uniform(levels: usize, tau: f64, lambda1: f64, lambda2: f64) -> Self {
        HyperParams {
            tau: vec![tau; levels],
            lambda0: vec![1.0; levels],
            lambda1: vec![lambda1; levels],
            lambda2: vec![lambda2; levels],
            lambda3: vec![0.0; levels],
            lambda4: vec![0.0; levels],
            lambda5: vec![1.0; levels],
            lambda_f: vec![1.0; levels],
            lambda_b: vec![1.0; levels],
            rho: 0.5,
            batch_fraction: 1.0,
            max_iters: 0,
            seed: 0,
            penalty_kind: PenaltyKind::Identity,
        }
    }

    /// Sets a per-level field by name, broadcasting a scalar to all levels.
    /// Returns false when the name is unknown.
    pub fn set_by_name(&mut self, name: &str, value: f64) -> bool {
        let slot: &mut Vec<f64> = match name {
            "tau" => &mut self.tau,
            "lambda0" => &mut self.lambda0,
            "lambda1" => &mut self.lambda1,
            "lambda2" => &mut self.lambda2,
            "lambda3" => &mut self.lambda3,
            "lambda4" => &mut self.lambda4,
            "lambda5" => &mut self.lambda5,
            "lambda_f" => &mut self.lambda_f,
            "lambda_b" => &mut self.lambda_b,
            "rho" => {
                self.rho = value;
                return true;
            }
            "batch_fraction" => {
                self.batch_fraction = value;
                return true;
            }
            "max_iters" => {
                self.max_iters = value as usize;
                return true;
            }
            "seed" => {
                self.seed = value as u64;
                return true;
            }
            _ => return false,
        };
        for v in slot.iter_mut() {
            *v = value;
        }
        true
    }
}

/// Checks every structural invariant of a configuration pair and returns the
/// full list of violations, each naming the offending field.
pub fn validate(config: &NetworkConfig, hp: &HyperParams) -> Result<()> {
    let mut issues = Vec::new();
    let levels = config.levels();
    if levels < 2 {
        issues.push(ValidationIssue {
            field: "dims".into(),
            message: format!("need at least 2 node levels, got {levels}"),
        });
    }
    if config.input_dim == 0 {
        issues.push(ValidationIssue {
            field: "input_dim".into(),
            message: "must be >= 1".into(),
        });
    }
    for (i, &d) in config.dims.iter().enumerate() {
        if d == 0 {
            issues.push(ValidationIssue {
                field: format!("dims[{}]", i + 1),
                message: "must be >= 1".into(),
            });
        }
    }
    if config.goal_node == 0 || config.goal_node > levels {
        issues.push(ValidationIssue {
            field: "goal_node".into(),
            message: format!("goal_node out of range: {} not in 1..={}", config.goal_node, levels),
        });
    }

    let per_level: [(&str, &Vec<f64>); 9] = [
        ("tau", &hp.tau),
        ("lambda0", &hp.lambda0),
        ("lambda1", &hp.lambda1),
        ("lambda2", &hp.lambda2),
        ("lambda3", &hp.lambda3),
        ("lambda4", &hp.lambda4),
        ("lambda5", &hp.lambda5),
        ("lambda_f", &hp.lambda_f),
        ("lambda_b", &hp.lambda_b),
    ];
    for (name, values) in per_level {
        if values.len() != levels {
            issues.push(ValidationIssue {
                field: name.into(),
                message: format!("expected {} per-level entries, got {}", levels, values.len()),
            });
        }
        for (i, &v) in values.iter().enumerate() {
            if v.is_nan() || v < 0.0 {
                issues.push(ValidationIssue {
                    field: format!("{name}[{}]", i + 1),
                    message: format!("must be >= 0, got {v}"),
                });
            }
        }
    }
    if !(hp.rho > 0.0 && hp.rho <= 1.0) {
        issues.push(ValidationIssue {
            field: "rho".into(),
            message: format!("ρ must be in (0,1], got {}", hp.rho),
        });
    }
    if !(hp.batch_fraction > 0.0 && hp.batch_fraction <= 1.0) {
        issues.push(ValidationIssue {
            field: "batch_fraction".into(),
            message: format!("must be in (0,1], got {}", hp.batch_fraction),
        });
    }
    // The log-det penalty needs a full-column-rank forward weight, which
    // requires non-shrinking widths wherever it is active.
    for l in 1..=levels {
        let lam4 = hp.lambda4.get(l - 1).copied().unwrap_or(0.0);
        if lam4 > 0.0 && config.width(l) < config.width(l - 1) {
            issues.push(ValidationIssue {
                field: format!("lambda4[{l}]"),
                message: format!(
                    "log-det term needs M_{l} >= M_{}, got {} < {}",
                    l - 1,
                    config.width(l),
                    config.width(l - 1)
                ),
            });
        }
    }
    if issues.is_empty() {
        Ok(())
    } else {
        Err(LpnError::Validation(issues))
    }
}

/// On-disk representation: a TOML document with a `[network]` table, an
/// optional `[hyper]` table, and an optional `[options]` table.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct ConfigFile {
    pub network: Option<NetworkFileSection>,
    pub hyper: Option<HyperFileSection>,
    pub options: Option<OptionsFileSection>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkFileSection {
    #[serde(rename = "L")]
    pub levels: Option<usize>,
    pub input_dim: usize,
    pub dims: Vec<usize>,
    pub goal_node: usize,
    pub tie_backward: Option<bool>,
    pub schedule_mode: Option<ScheduleMode>,
}

/// Per-level values may be written as one scalar (broadcast) or a full list.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, levels: usize) -> Vec<f64> {
        match self {
            ScalarOrList::Scalar(v) => vec![*v; levels],
            ScalarOrList::List(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct HyperFileSection {
    pub tau: Option<ScalarOrList>,
    pub lambda0: Option<ScalarOrList>,
    pub lambda1: Option<ScalarOrList>,
    pub lambda2: Option<ScalarOrList>,
    pub lambda3: Option<ScalarOrList>,
    pub lambda4: Option<ScalarOrList>,
    pub lambda5: Option<ScalarOrList>,
    pub lambda_f: Option<ScalarOrList>,
    pub lambda_b: Option<ScalarOrList>,
    pub rho: Option<f64>,
    pub batch_fraction: Option<f64>,
    pub max_iters: Option<usize>,
    pub seed: Option<u64>,
    pub penalty_kind: Option<PenaltyKind>,
}

#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct OptionsFileSection {
    pub inner_rounds: Option<usize>,
    pub refine_steps: Option<usize>,
    pub bernoulli_p: Option<f64>,
    pub backward_gram_prev: Option<bool>,
    pub checkpoint_every: Option<usize>,
    pub probe_goal_gap: Option<bool>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            LpnError::Validation(vec![ValidationIssue {
                field: "config".into(),
                message: e.to_string(),
            }])
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    /// Materializes the network config; errors when the section is missing
    /// or the redundant `L` field disagrees with `dims`.
    pub fn network_config(&self) -> Result<NetworkConfig> {
        let section = self.network.as_ref().ok_or_else(|| {
            LpnError::Validation(vec![ValidationIssue {
                field: "network".into(),
                message: "missing [network] section".into(),
            }])
        })?;
        if let Some(l) = section.levels {
            if l != section.dims.len() {
                return Err(LpnError::Validation(vec![ValidationIssue {
                    field: "L".into(),
                    message: format!("L={} disagrees with dims length {}", l, section.dims.len()),
                }]));
            }
        }
        Ok(NetworkConfig {
            input_dim: section.input_dim,
            dims: section.dims.clone(),
            goal_node: section.goal_node,
            tie_backward: section.tie_backward.unwrap_or(true),
            schedule_mode: section.schedule_mode.unwrap_or(ScheduleMode::Synchronous),
        })
    }

    /// Hyperparameters: defaults for the given network, overridden by any
    /// fields present in the `[hyper]` section.
    pub fn hyper_params(&self, config: &NetworkConfig) -> HyperParams {
        let mut hp = HyperParams::defaults(config);
        let levels = config.levels();
        if let Some(h) = &self.hyper {
            if let Some(v) = &h.tau {
                hp.tau = v.expand(levels);
            }
            if let Some(v) = &h.lambda0 {
                hp.lambda0 = v.expand(levels);
            }
            if let Some(v) = &h.lambda1 {
                hp.lambda1 = v.expand(levels);
                if h.tau.is_none() {
                    hp.tau = hp.lambda1.clone();
                }
            }
            if let Some(v) = &h.lambda2 {
                hp.lambda2 = v.expand(levels);
            }
            if let Some(v) = &h.lambda3 {
                hp.lambda3 = v.expand(levels);
            }
            if let Some(v) = &h.lambda4 {
                hp.lambda4 = v.expand(levels);
            }
            if let Some(v) = &h.lambda5 {
                hp.lambda5 = v.expand(levels);
            }
            if let Some(v) = &h.lambda_f {
                hp.lambda_f = v.expand(levels);
            }
            if let Some(v) = &h.lambda_b {
                hp.lambda_b = v.expand(levels);
            }
            if let Some(v) = h.rho {
                hp.rho = v;
            }
            if let Some(v) = h.batch_fraction {
                hp.batch_fraction = v;
            }
            if let Some(v) = h.max_iters {
                hp.max_iters = v;
            }
            if let Some(v) = h.seed {
                hp.seed = v;
            }
            if let Some(v) = h.penalty_kind {
                hp.penalty_kind = v;
            }
        }
        hp
    }
}
