//! Decision functions: binary classifiers over applicant instances.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::domain::{AttributeSchema, Dataset, GroundTruthEntry, Instance, Label};
use crate::enhance::cuts::FairnessConstraint;
use crate::enhance::encoding::FeatureEncoding;
use crate::enhance::solver::{Problem, SolverOptions};
use crate::error::{Error, Result};
use crate::rule::{Rule, RuleSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionKind {
    FixedRule,
    RetrainableBlackbox,
    ConstrainedMargin,
}

impl FunctionKind {
    pub fn name(self) -> &'static str {
        match self {
            FunctionKind::FixedRule => "fixed_rule",
            FunctionKind::RetrainableBlackbox => "retrainable_blackbox",
            FunctionKind::ConstrainedMargin => "constrained_margin",
        }
    }
}

impl fmt::Display for FunctionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Linear classifier `label = 1 iff w . encode(x) + b >= 0`, optionally
/// trained under fairness constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginClassifier {
    pub(crate) encoding: FeatureEncoding,
    pub(crate) weights: Vec<f64>,
    pub(crate) intercept: f64,
    pub(crate) constraints: Vec<FairnessConstraint>,
    pub(crate) training: Arc<Dataset>,
    pub(crate) reg: f64,
    pub(crate) training_loss: f64,
}

impl MarginClassifier {
    /// Build directly from parameters. `weights` must match the encoding.
    pub fn from_parameters(
        encoding: FeatureEncoding,
        weights: Vec<f64>,
        intercept: f64,
        training: Arc<Dataset>,
    ) -> Result<Self> {
        if weights.len() != encoding.dim() {
            return Err(Error::Config(format!(
                "margin classifier has {} weights for a {}-dimensional encoding",
                weights.len(),
                encoding.dim()
            )));
        }
        Ok(MarginClassifier {
            encoding,
            weights,
            intercept,
            constraints: Vec::new(),
            training,
            reg: 0.0,
            training_loss: f64::NAN,
        })
    }

    pub fn margin(&self, schema: &AttributeSchema, instance: &Instance) -> f64 {
        let x = self.encoding.encode(schema, instance);
        x.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>() + self.intercept
    }

    pub fn encoding(&self) -> &FeatureEncoding {
        &self.encoding
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn intercept(&self) -> f64 {
        self.intercept
    }

    pub fn constraints(&self) -> &[FairnessConstraint] {
        &self.constraints
    }

    pub fn training(&self) -> &Arc<Dataset> {
        &self.training
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    /// Unpenalized training objective at the fitted parameters.
    pub fn training_loss(&self) -> f64 {
        self.training_loss
    }
}

/// Logistic model that can only be refitted on a dataset; its parameters
/// are not exposed.
#[derive(Clone, Debug, PartialEq)]
pub struct BlackBox {
    inner: BlackBoxModel,
    training: Arc<Dataset>,
    reg: f64,
}

#[derive(Clone, Debug, PartialEq)]
enum BlackBoxModel {
    Linear {
        encoding: FeatureEncoding,
        theta: Vec<f64>,
    },
    /// Training labels had a single class.
    Constant(Label),
}

impl BlackBox {
    pub fn fit(training: Arc<Dataset>, reg: f64) -> Result<Self> {
        let (rows, y) = labeled_rows(&training)?;
        let positives = y.iter().filter(|&&v| v > 0.5).count();
        let inner = if positives == 0 || positives == y.len() {
            BlackBoxModel::Constant(Label::from_bool(positives > 0))
        } else {
            let schema = training.schema();
            let encoding = FeatureEncoding::fit(schema, &rows)?;
            let x = encoding.encode_all(schema, &rows);
            let sol = Problem::new(&x, &y, encoding.dim(), reg, &[]).solve(None, &SolverOptions::default());
            BlackBoxModel::Linear {
                encoding,
                theta: sol.theta,
            }
        };
        Ok(BlackBox {
            inner,
            training,
            reg,
        })
    }

    /// True when training collapsed to the majority-class constant.
    pub fn is_degenerate(&self) -> bool {
        matches!(self.inner, BlackBoxModel::Constant(_))
    }

    pub fn training(&self) -> &Arc<Dataset> {
        &self.training
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    fn predict(&self, schema: &AttributeSchema, instance: &Instance) -> Label {
        match &self.inner {
            BlackBoxModel::Constant(l) => *l,
            BlackBoxModel::Linear { encoding, theta } => {
                let x = encoding.encode(schema, instance);
                let d = x.len();
                let m: f64 = x.iter().zip(&theta[..d]).map(|(a, b)| a * b).sum::<f64>() + theta[d];
                Label::from_bool(m >= 0.0)
            }
        }
    }
}

/// Labeled rows of a dataset and their 0/1 targets, in arrival order.
pub(crate) fn labeled_rows(data: &Dataset) -> Result<(Vec<Instance>, Vec<f64>)> {
    let (rows, y): (Vec<Instance>, Vec<f64>) = data
        .labeled()
        .map(|(i, t)| (i.clone(), f64::from(t.desired.as_u8())))
        .unzip();
    if rows.is_empty() {
        return Err(Error::EmptyData("no labeled rows to train on".into()));
    }
    Ok((rows, y))
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    FixedRule(Rule),
    Blackbox(BlackBox),
    Margin(MarginClassifier),
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecisionFunction {
    id: String,
    schema: Arc<AttributeSchema>,
    model: Model,
}

impl DecisionFunction {
    pub fn new(id: impl Into<String>, schema: Arc<AttributeSchema>, model: Model) -> Self {
        DecisionFunction {
            id: id.into(),
            schema,
            model,
        }
    }

    pub fn fixed_rule(id: impl Into<String>, schema: Arc<AttributeSchema>, spec: &RuleSpec) -> Result<Self> {
        let rule = Rule::compile(spec, &schema)?;
        Ok(Self::new(id, schema, Model::FixedRule(rule)))
    }

    pub fn blackbox(id: impl Into<String>, training: Arc<Dataset>, reg: f64) -> Result<Self> {
        let schema = training.schema().clone();
        Ok(Self::new(id, schema, Model::Blackbox(BlackBox::fit(training, reg)?)))
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn kind(&self) -> FunctionKind {
        match self.model {
            Model::FixedRule(_) => FunctionKind::FixedRule,
            Model::Blackbox(_) => FunctionKind::RetrainableBlackbox,
            Model::Margin(_) => FunctionKind::ConstrainedMargin,
        }
    }

    pub fn as_margin(&self) -> Option<&MarginClassifier> {
        match &self.model {
            Model::Margin(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_blackbox(&self) -> Option<&BlackBox> {
        match &self.model {
            Model::Blackbox(b) => Some(b),
            _ => None,
        }
    }

    /// Data the function was trained on, for learned kinds.
    pub fn training_set(&self) -> Option<&Arc<Dataset>> {
        match &self.model {
            Model::FixedRule(_) => None,
            Model::Blackbox(b) => Some(&b.training),
            Model::Margin(m) => Some(&m.training),
        }
    }

    /// Apply the function. Fails if the instance does not conform to the
    /// schema the function was built for.
    pub fn evaluate(&self, instance: &Instance) -> Result<Label> {
        self.schema.check(instance.id, &instance.values)?;
        Ok(self.evaluate_unchecked(instance))
    }

    pub(crate) fn evaluate_unchecked(&self, instance: &Instance) -> Label {
        match &self.model {
            Model::FixedRule(r) => r.apply(instance),
            Model::Blackbox(b) => b.predict(&self.schema, instance),
            Model::Margin(m) => Label::from_bool(m.margin(&self.schema, instance) >= 0.0),
        }
    }

    pub fn describe(&self) -> FunctionDescription {
        let params = match &self.model {
            Model::FixedRule(r) => FunctionParams::FixedRule { rule: r.spec().clone() },
            Model::Blackbox(b) => FunctionParams::RetrainableBlackbox {
                training_rows: b.training.labeled_count(),
                degenerate: b.is_degenerate(),
            },
            Model::Margin(m) => FunctionParams::ConstrainedMargin {
                weights: m.weights.clone(),
                intercept: m.intercept,
                constraints: m.constraints.clone(),
            },
        };
        FunctionDescription {
            id: self.id.clone(),
            params,
        }
    }
}

/// Serializable summary of a decision function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionDescription {
    pub id: String,
    #[serde(flatten)]
    pub params: FunctionParams,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionParams {
    FixedRule {
        rule: RuleSpec,
    },
    RetrainableBlackbox {
        training_rows: usize,
        degenerate: bool,
    },
    ConstrainedMargin {
        weights: Vec<f64>,
        intercept: f64,
        constraints: Vec<FairnessConstraint>,
    },
}

pub fn evaluate(f: &DecisionFunction, instance: &Instance) -> Result<Label> {
    f.evaluate(instance)
}

pub fn loss(entry: &GroundTruthEntry, out: Label) -> f64 {
    entry.loss(out)
}

/// True iff `f` disagrees with the desired label.
pub fn accuracy_error(f: &DecisionFunction, instance: &Instance, entry: &GroundTruthEntry) -> Result<bool> {
    if entry.instance_id != instance.id {
        return Err(Error::IdMismatch {
            expected: instance.id,
            actual: entry.instance_id,
        });
    }
    Ok(f.evaluate(instance)? != entry.desired)
}

/// Fraction of labeled rows on which `f` matches the desired label.
pub fn accuracy_on(f: &DecisionFunction, data: &Dataset) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0usize;
    for (i, t) in data.labeled() {
        total += 1;
        if f.evaluate_unchecked(i) == t.desired {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
