//! Fixed-rule decision functions: threshold and equality predicates over
//! single attributes, combined with AND / OR.

use serde::{Deserialize, Serialize};

use crate::domain::{AttributeKind, AttributeSchema, Instance, Label, Value};
use crate::error::{Error, Result};

/// Serialized form of a rule, attributes referenced by name.
///
/// ```toml
/// rule = { op = "and", rules = [
///     { op = "eq", attr = "gender", value = "M" },
///     { op = "ge", attr = "school", value = 12.0 },
/// ] }
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum RuleSpec {
    Const { label: Label },
    Ge { attr: String, value: f64 },
    Gt { attr: String, value: f64 },
    Le { attr: String, value: f64 },
    Lt { attr: String, value: f64 },
    Eq { attr: String, value: String },
    InGroup { attr: String, group: String },
    And { rules: Vec<RuleSpec> },
    Or { rules: Vec<RuleSpec> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum CmpOp {
    Ge,
    Gt,
    Le,
    Lt,
}

/// A rule bound to a schema. Evaluates to `Accept` iff the predicate holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    spec: RuleSpec,
    node: Node,
}

#[derive(Clone, Debug, PartialEq)]
enum Node {
    Const(bool),
    Cmp { attr: usize, op: CmpOp, value: f64 },
    Eq { attr: usize, value: u32 },
    InSet { attr: usize, members: Vec<bool> },
    And(Vec<Node>),
    Or(Vec<Node>),
}

impl Rule {
    pub fn compile(spec: &RuleSpec, schema: &AttributeSchema) -> Result<Self> {
        Ok(Rule {
            spec: spec.clone(),
            node: compile(spec, schema)?,
        })
    }

    pub fn spec(&self) -> &RuleSpec {
        &self.spec
    }

    pub fn apply(&self, instance: &Instance) -> Label {
        Label::from_bool(holds(&self.node, instance))
    }

    /// Attribute indices the rule reads.
    pub fn attributes(&self) -> Vec<usize> {
        let mut out = Vec::new();
        collect_attrs(&self.node, &mut out);
        out.sort_unstable();
        out.dedup();
        out
    }
}

fn numeric_attr(schema: &AttributeSchema, name: &str) -> Result<usize> {
    let idx = schema.require(name)?;
    match schema.attribute(idx).kind {
        AttributeKind::Numeric => Ok(idx),
        AttributeKind::Categorical(_) => Err(Error::Schema(format!(
            "threshold on categorical attribute `{name}`"
        ))),
    }
}

fn compile(spec: &RuleSpec, schema: &AttributeSchema) -> Result<Node> {
    let cmp = |attr: &str, op, value: f64| -> Result<Node> {
        if !value.is_finite() {
            return Err(Error::Schema(format!("threshold on `{attr}` is not finite")));
        }
        Ok(Node::Cmp {
            attr: numeric_attr(schema, attr)?,
            op,
            value,
        })
    };
    Ok(match spec {
        RuleSpec::Const { label } => Node::Const(*label == Label::Accept),
        RuleSpec::Ge { attr, value } => cmp(attr, CmpOp::Ge, *value)?,
        RuleSpec::Gt { attr, value } => cmp(attr, CmpOp::Gt, *value)?,
        RuleSpec::Le { attr, value } => cmp(attr, CmpOp::Le, *value)?,
        RuleSpec::Lt { attr, value } => cmp(attr, CmpOp::Lt, *value)?,
        RuleSpec::Eq { attr, value } => {
            let idx = schema.require(attr)?;
            let domain = schema.attribute(idx).domain().ok_or_else(|| {
                Error::Schema(format!("equality on numeric attribute `{attr}`"))
            })?;
            let k = domain
                .index_of(value)
                .ok_or_else(|| Error::Schema(format!("unknown value `{value}` for `{attr}`")))?;
            Node::Eq { attr: idx, value: k }
        }
        RuleSpec::InGroup { attr, group } => {
            let idx = schema.require(attr)?;
            let a = schema.attribute(idx);
            let level = (0..a.level_count())
                .find(|&l| a.level_name(l) == group)
                .ok_or_else(|| Error::Schema(format!("unknown group `{group}` for `{attr}`")))?;
            let n = a.domain().map_or(0, |d| d.values().len());
            let members = (0..n)
                .map(|k| a.level_of(Value::Cat(k as u32)) == Some(level))
                .collect();
            Node::InSet { attr: idx, members }
        }
        RuleSpec::And { rules } => Node::And(
            rules
                .iter()
                .map(|r| compile(r, schema))
                .collect::<Result<_>>()?,
        ),
        RuleSpec::Or { rules } => Node::Or(
            rules
                .iter()
                .map(|r| compile(r, schema))
                .collect::<Result<_>>()?,
        ),
    })
}

fn holds(node: &Node, i: &Instance) -> bool {
    match node {
        Node::Const(b) => *b,
        Node::Cmp { attr, op, value } => {
            let Value::Num(x) = i.values[*attr] else {
                return false;
            };
            match op {
                CmpOp::Ge => x >= *value,
                CmpOp::Gt => x > *value,
                CmpOp::Le => x <= *value,
                CmpOp::Lt => x < *value,
            }
        }
        Node::Eq { attr, value } => i.values[*attr] == Value::Cat(*value),
        Node::InSet { attr, members } => match i.values[*attr] {
            Value::Cat(k) => members.get(k as usize).copied().unwrap_or(false),
            Value::Num(_) => false,
        },
        Node::And(rs) => rs.iter().all(|r| holds(r, i)),
        Node::Or(rs) => rs.iter().any(|r| holds(r, i)),
    }
}

fn collect_attrs(node: &Node, out: &mut Vec<usize>) {
    match node {
        Node::Const(_) => {}
        Node::Cmp { attr, .. } | Node::Eq { attr, .. } | Node::InSet { attr, .. } => out.push(*attr),
        Node::And(rs) | Node::Or(rs) => rs.iter().for_each(|r| collect_attrs(r, out)),
    }
}
