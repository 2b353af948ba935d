//! Repair of decision functions removed from the portfolio.
//!
//! Fixed rules cannot be changed and are reported upstream. Black boxes are
//! refitted on their training set plus the instances they got wrong. Margin
//! classifiers are retrained under covariance constraints, adding one
//! constraint per round until an audit passes.

pub mod cuts;
pub mod encoding;
pub mod solver;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::audit::{audit_function, AuditConfig, AuditReport};
use crate::domain::{Dataset, GroundTruthEntry, Instance};
use crate::error::{Error, Result};
use crate::function::{
    accuracy_on, labeled_rows, BlackBox, DecisionFunction, FunctionDescription, FunctionKind,
    MarginClassifier, Model,
};

use cuts::{generate_cut, linear_cuts, FairnessConstraint};
use encoding::FeatureEncoding;
use solver::{Problem, SolverOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceConfig {
    /// When false, removed functions are retired without repair.
    pub enabled: bool,
    pub max_cuts: usize,
    pub accuracy_floor: f64,
    /// Constraint bound as a multiple of the margin standard deviation.
    pub c_scale: f64,
    /// Absolute constraint bound; overrides `c_scale` when set.
    pub c_absolute: Option<f64>,
    /// Largest subset of sensitive attributes considered for a cut.
    /// Defaults to all of them.
    pub subset_cap: Option<usize>,
    pub reg: f64,
    pub solver: SolverOptions,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        EnhanceConfig {
            enabled: true,
            max_cuts: 3,
            accuracy_floor: 0.6,
            c_scale: 0.05,
            c_absolute: None,
            subset_cap: None,
            reg: 1e-3,
            solver: SolverOptions::default(),
        }
    }
}

impl EnhanceConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("enhancement: {m}")));
        if !(0.0..=1.0).contains(&self.accuracy_floor) {
            return bad("accuracy_floor must be in [0, 1]");
        }
        if !(self.c_scale >= 0.0) {
            return bad("c_scale must be >= 0");
        }
        if self.c_absolute.is_some_and(|c| !(c >= 0.0)) {
            return bad("c_absolute must be >= 0");
        }
        if !(self.reg >= 0.0) {
            return bad("reg must be >= 0");
        }
        if self.solver.max_outer == 0 || self.solver.max_inner == 0 {
            return bad("solver iteration caps must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnhancementStatus {
    Enhanced,
    ReportedUpstream,
    Failed,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnhancementOutcome {
    pub function_id: String,
    pub kind: FunctionKind,
    pub status: EnhancementStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cause: Option<String>,
    pub cuts: Vec<FairnessConstraint>,
    pub iterations: usize,
    pub accuracy: Option<f64>,
    pub final_audit: Option<AuditReport>,
    pub result: Option<FunctionDescription>,
    /// The repaired function, present iff status is `Enhanced`.
    #[serde(skip)]
    pub function: Option<DecisionFunction>,
}

impl EnhancementOutcome {
    pub fn failed(f: &DecisionFunction, cause: impl Into<String>) -> Self {
        EnhancementOutcome {
            function_id: f.id().to_string(),
            kind: f.kind(),
            status: EnhancementStatus::Failed,
            cause: Some(cause.into()),
            cuts: Vec::new(),
            iterations: 0,
            accuracy: None,
            final_audit: None,
            result: None,
            function: None,
        }
    }

    /// Outcome for a removed function when enhancement is switched off.
    pub fn disabled(f: &DecisionFunction) -> Self {
        Self::failed(f, "enhancement disabled")
    }
}

/// Functions outside our control can only be reported to their provider.
pub fn report_uncontrollable(f: &DecisionFunction) -> Result<EnhancementOutcome> {
    if f.kind() != FunctionKind::FixedRule {
        return Err(Error::WrongKind {
            expected: "fixed_rule",
            actual: f.kind().name(),
        });
    }
    Ok(EnhancementOutcome {
        status: EnhancementStatus::ReportedUpstream,
        cause: Some("no control over the function; issues reported to its provider".into()),
        ..EnhancementOutcome::failed(f, "")
    })
}

/// Refit a black box on `base_training` plus `mistakes`; a mistake whose id
/// is already present replaces the older row.
pub fn retrain_blackbox(
    f: &DecisionFunction,
    base_training: &Dataset,
    mistakes: &[(Instance, GroundTruthEntry)],
) -> Result<DecisionFunction> {
    let bb = f.as_blackbox().ok_or(Error::WrongKind {
        expected: "retrainable_blackbox",
        actual: f.kind().name(),
    })?;
    if mistakes.is_empty() {
        return Err(Error::EmptyData("retraining needs at least one mistake".into()));
    }
    let mut data = base_training.clone();
    for (i, t) in mistakes {
        data.upsert(i.clone(), *t)?;
    }
    let retrained = BlackBox::fit(Arc::new(data), bb.reg())?;
    Ok(DecisionFunction::new(f.id(), f.schema().clone(), Model::Blackbox(retrained)))
}

/// Retrain a black box on its mistakes, then audit it on `audit_rows` and
/// score it on `evaluation`.
pub fn enhance_blackbox(
    f: &DecisionFunction,
    mistakes: &[(Instance, GroundTruthEntry)],
    audit_rows: &[Instance],
    evaluation: &Dataset,
    audit_cfg: &AuditConfig,
    cfg: &EnhanceConfig,
) -> Result<EnhancementOutcome> {
    let base = f
        .training_set()
        .ok_or(Error::WrongKind {
            expected: "retrainable_blackbox",
            actual: f.kind().name(),
        })?
        .clone();
    if mistakes.is_empty() {
        return Ok(EnhancementOutcome::failed(f, "no recorded mistakes to retrain on"));
    }
    let retrained = retrain_blackbox(f, &base, mistakes)?;
    let audit = audit_function(&retrained, audit_rows, audit_cfg)?;
    let accuracy = accuracy_on(&retrained, evaluation);
    let degenerate = retrained.as_blackbox().is_some_and(BlackBox::is_degenerate);
    let accurate = accuracy.is_none_or(|a| a >= cfg.accuracy_floor);
    let (status, cause, function) = if audit.unfair {
        (EnhancementStatus::Failed, Some(format!("still unfair after retraining: {}", audit.reasons().join("; "))), None)
    } else if !accurate {
        (EnhancementStatus::Failed, Some("accuracy floor breached".to_string()), None)
    } else {
        let cause = degenerate.then(|| "degenerate training set; majority-class constant".to_string());
        (EnhancementStatus::Enhanced, cause, Some(retrained.clone()))
    };
    Ok(EnhancementOutcome {
        function_id: f.id().to_string(),
        kind: f.kind(),
        status,
        cause,
        cuts: Vec::new(),
        iterations: 1,
        accuracy,
        final_audit: Some(audit),
        result: function.as_ref().map(DecisionFunction::describe),
        function,
    })
}

/// Fit a linear margin classifier minimizing average logistic loss plus
/// `reg * |w|^2` subject to every constraint.
pub fn train_constrained(
    id: &str,
    data: Arc<Dataset>,
    encoding: &FeatureEncoding,
    constraints: &[FairnessConstraint],
    reg: f64,
    opts: &SolverOptions,
) -> Result<DecisionFunction> {
    if data.labeled_count() != data.len() {
        return Err(Error::EmptyData(format!(
            "{} of {} training rows have no label",
            data.len() - data.labeled_count(),
            data.len()
        )));
    }
    let schema = data.schema().clone();
    let (rows, y) = labeled_rows(&data)?;
    let d = encoding.dim();
    let x = encoding.encode_all(&schema, &rows);
    let cuts = linear_cuts(&schema, constraints, &rows, &x, d)?;
    let problem = Problem::new(&x, &y, d, reg, &cuts);
    let sol = problem.solve(None, opts);
    if sol.violation > opts.feasibility_tol {
        let subset = sol
            .worst_cut
            .map(|k| constraints[k].attributes.clone())
            .unwrap_or_default();
        return Err(Error::Infeasible {
            subset,
            violation: sol.violation,
        });
    }
    let training_loss = problem.training_loss(&sol.theta);
    let classifier = MarginClassifier {
        encoding: encoding.clone(),
        weights: sol.theta[..d].to_vec(),
        intercept: sol.theta[d],
        constraints: constraints.to_vec(),
        training: data,
        reg,
        training_loss,
    };
    Ok(DecisionFunction::new(id, schema, Model::Margin(classifier)))
}

/// Unconstrained margin classifier with a freshly fitted encoding.
pub fn train_margin(id: &str, data: Arc<Dataset>, reg: f64) -> Result<DecisionFunction> {
    let (rows, _) = labeled_rows(&data)?;
    let encoding = FeatureEncoding::fit(data.schema(), &rows)?;
    train_constrained(id, data, &encoding, &[], reg, &SolverOptions::default())
}

fn margin_sd(m: &MarginClassifier, f: &DecisionFunction, rows: &[Instance]) -> f64 {
    let margins: Vec<f64> = rows.iter().map(|r| m.margin(f.schema(), r)).collect();
    let n = margins.len().max(1) as f64;
    let mean = margins.iter().sum::<f64>() / n;
    (margins.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Cut-generation loop: train under the current constraints, audit, and
/// add the most violated subset constraint until the audit passes.
pub fn enhance_margin(
    f: &DecisionFunction,
    data: Arc<Dataset>,
    audit_cfg: &AuditConfig,
    cfg: &EnhanceConfig,
) -> Result<EnhancementOutcome> {
    let m = f.as_margin().ok_or(Error::WrongKind {
        expected: "constrained_margin",
        actual: f.kind().name(),
    })?;
    let schema = f.schema().clone();
    let s = schema.sensitive_categorical().len();
    let subset_cap = cfg.subset_cap.unwrap_or(s).min(s);
    let exhaustive = cuts::candidate_subsets(&schema.sensitive_categorical(), subset_cap).len();
    let max_cuts = cfg.max_cuts.min(exhaustive);
    let encoding = m.encoding().clone();
    let rows: Vec<Instance> = data.instances().to_vec();

    let mut constraints = m.constraints().to_vec();
    let mut added = Vec::new();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let trained = match train_constrained(f.id(), data.clone(), &encoding, &constraints, cfg.reg, &cfg.solver) {
            Ok(t) => t,
            Err(Error::Infeasible { subset, violation }) => {
                return Ok(EnhancementOutcome {
                    cuts: added,
                    iterations,
                    ..EnhancementOutcome::failed(
                        f,
                        format!("infeasible: subset {subset:?} violated by {violation:.3e}"),
                    )
                })
            }
            Err(e) => return Err(e),
        };
        let audit = audit_function(&trained, &rows, audit_cfg)?;
        let accuracy = accuracy_on(&trained, &data);
        let finish = |status, cause: Option<String>, function: Option<DecisionFunction>, cuts: Vec<FairnessConstraint>| EnhancementOutcome {
            function_id: f.id().to_string(),
            kind: f.kind(),
            status,
            cause,
            cuts,
            iterations,
            accuracy,
            final_audit: Some(audit.clone()),
            result: function.as_ref().map(DecisionFunction::describe),
            function,
        };
        if accuracy.is_some_and(|a| a < cfg.accuracy_floor) {
            return Ok(finish(EnhancementStatus::Failed, Some("accuracy floor breached".into()), None, added));
        }
        if !audit.unfair {
            return Ok(finish(EnhancementStatus::Enhanced, None, Some(trained), added));
        }
        if added.len() >= max_cuts {
            return Ok(finish(EnhancementStatus::Failed, Some("cut budget exhausted".into()), None, added));
        }
        let tm = trained.as_margin().expect("trained margin classifier");
        let bound = cfg
            .c_absolute
            .unwrap_or_else(|| cfg.c_scale * margin_sd(tm, &trained, &rows));
        match generate_cut(&trained, &rows, bound, subset_cap)? {
            Some(cut) => {
                constraints.push(cut.clone());
                added.push(cut);
            }
            None => {
                return Ok(finish(
                    EnhancementStatus::Failed,
                    Some("audit failed but no subset violates its bound".into()),
                    None,
                    added,
                ))
            }
        }
    }
}

/// Dispatch on the function kind. Margin classifiers are retrained on their
/// own training set.
pub fn enhance(
    f: &DecisionFunction,
    mistakes: &[(Instance, GroundTruthEntry)],
    audit_rows: &[Instance],
    evaluation: &Dataset,
    audit_cfg: &AuditConfig,
    cfg: &EnhanceConfig,
) -> Result<EnhancementOutcome> {
    if !cfg.enabled {
        return Ok(EnhancementOutcome::disabled(f));
    }
    match f.kind() {
        FunctionKind::FixedRule => report_uncontrollable(f),
        FunctionKind::RetrainableBlackbox => enhance_blackbox(f, mistakes, audit_rows, evaluation, audit_cfg, cfg),
        FunctionKind::ConstrainedMargin => {
            let data = f.training_set().expect("margin classifiers keep their training set").clone();
            enhance_margin(f, data, audit_cfg, cfg)
        }
    }
}
