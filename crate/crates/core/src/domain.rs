//! Applicant data model: attribute schema, instances, labels, ground truth.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance used when comparing loss values.
pub const LOSS_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    NonSensitive,
    /// Correlation with the output is directly forbidden (gender).
    ExplicitSensitive,
    /// Proxy for an attribute outside the data model (ZIP for race).
    ImplicitSensitive,
}

impl Sensitivity {
    pub fn is_sensitive(self) -> bool {
        !matches!(self, Sensitivity::NonSensitive)
    }
}

/// Partition of a categorical value set into named groups.
///
/// Audits and encodings of a grouped attribute work on groups instead of raw
/// values; flips substitute the group's representative value.
#[derive(Clone, Debug, PartialEq)]
pub struct Grouping {
    names: Vec<String>,
    group_of: Vec<u32>,
    representative: Vec<u32>,
}

impl Grouping {
    /// `group_of_value[k]` names the group of the k-th value of the domain.
    fn new(values: &[String], group_of_value: &[String]) -> Result<Self> {
        if values.len() != group_of_value.len() {
            return Err(Error::Schema("grouping must cover every value".into()));
        }
        let mut names: Vec<String> = Vec::new();
        let mut group_of = Vec::with_capacity(values.len());
        let mut representative = Vec::new();
        for (k, g) in group_of_value.iter().enumerate() {
            let idx = match names.iter().position(|n| n == g) {
                Some(idx) => idx,
                None => {
                    names.push(g.clone());
                    representative.push(k as u32);
                    names.len() - 1
                }
            };
            group_of.push(idx as u32);
        }
        Ok(Grouping {
            names,
            group_of,
            representative,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CategoricalDomain {
    values: Vec<String>,
    index: HashMap<String, u32>,
    grouping: Option<Grouping>,
}

impl CategoricalDomain {
    pub fn new(values: Vec<String>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Schema("categorical value set is empty".into()));
        }
        let mut index = HashMap::with_capacity(values.len());
        for (k, v) in values.iter().enumerate() {
            if index.insert(v.clone(), k as u32).is_some() {
                return Err(Error::Schema(format!("duplicate categorical value `{v}`")));
            }
        }
        Ok(CategoricalDomain {
            values,
            index,
            grouping: None,
        })
    }

    /// Attach a grouping given as one group name per value.
    pub fn with_groups(mut self, group_of_value: &[String]) -> Result<Self> {
        self.grouping = Some(Grouping::new(&self.values, group_of_value)?);
        Ok(self)
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    pub fn index_of(&self, value: &str) -> Option<u32> {
        self.index.get(value).copied()
    }

    pub fn grouping(&self) -> Option<&Grouping> {
        self.grouping.as_ref()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttributeKind {
    Numeric,
    Categorical(CategoricalDomain),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeDescriptor {
    pub name: String,
    pub kind: AttributeKind,
    pub sensitivity: Sensitivity,
}

impl AttributeDescriptor {
    pub fn numeric(name: &str, sensitivity: Sensitivity) -> Self {
        AttributeDescriptor {
            name: name.to_string(),
            kind: AttributeKind::Numeric,
            sensitivity,
        }
    }

    pub fn categorical(name: &str, domain: CategoricalDomain, sensitivity: Sensitivity) -> Self {
        AttributeDescriptor {
            name: name.to_string(),
            kind: AttributeKind::Categorical(domain),
            sensitivity,
        }
    }

    pub fn domain(&self) -> Option<&CategoricalDomain> {
        match &self.kind {
            AttributeKind::Categorical(d) => Some(d),
            AttributeKind::Numeric => None,
        }
    }

    /// Number of audit levels: groups when grouped, raw values otherwise.
    /// Zero for numeric attributes.
    pub fn level_count(&self) -> usize {
        match self.domain() {
            Some(d) => d
                .grouping
                .as_ref()
                .map_or(d.values.len(), |g| g.names.len()),
            None => 0,
        }
    }

    pub fn level_of(&self, value: Value) -> Option<usize> {
        let (Some(d), Value::Cat(k)) = (self.domain(), value) else {
            return None;
        };
        Some(match &d.grouping {
            Some(g) => g.group_of[k as usize] as usize,
            None => k as usize,
        })
    }

    pub fn level_name(&self, level: usize) -> &str {
        let d = self.domain().expect("level_name on numeric attribute");
        match &d.grouping {
            Some(g) => &g.names[level],
            None => &d.values[level],
        }
    }

    /// Value that stands in for a level when synthesising instances.
    pub fn representative(&self, level: usize) -> Value {
        let d = self.domain().expect("representative on numeric attribute");
        match &d.grouping {
            Some(g) => Value::Cat(g.representative[level]),
            None => Value::Cat(level as u32),
        }
    }

    pub fn is_grouped(&self) -> bool {
        self.domain().is_some_and(|d| d.grouping.is_some())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttributeSchema {
    attributes: Vec<AttributeDescriptor>,
}

impl AttributeSchema {
    pub fn new(attributes: Vec<AttributeDescriptor>) -> Result<Self> {
        let mut seen = HashSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!("duplicate attribute name `{}`", a.name)));
            }
        }
        if !attributes.iter().any(|a| !a.sensitivity.is_sensitive()) {
            return Err(Error::Schema("schema needs at least one non-sensitive attribute".into()));
        }
        Ok(AttributeSchema { attributes })
    }

    pub fn attributes(&self) -> &[AttributeDescriptor] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::Schema(format!("unknown attribute `{name}`")))
    }

    pub fn attribute(&self, idx: usize) -> &AttributeDescriptor {
        &self.attributes[idx]
    }

    /// Indices of sensitive categorical attributes, in schema order.
    pub fn sensitive_categorical(&self) -> Vec<usize> {
        self.attributes
            .iter()
            .enumerate()
            .filter(|(_, a)| a.sensitivity.is_sensitive() && a.domain().is_some())
            .map(|(k, _)| k)
            .collect()
    }

    /// Check that `values` conform to this schema.
    pub fn check(&self, id: u64, values: &[Value]) -> Result<()> {
        if values.len() != self.attributes.len() {
            return Err(Error::SchemaMismatch {
                id,
                reason: format!(
                    "expected {} values, got {}",
                    self.attributes.len(),
                    values.len()
                ),
            });
        }
        for (a, v) in self.attributes.iter().zip(values) {
            match (&a.kind, v) {
                (AttributeKind::Numeric, Value::Num(x)) if x.is_finite() => {}
                (AttributeKind::Numeric, Value::Num(x)) => {
                    return Err(Error::SchemaMismatch {
                        id,
                        reason: format!("attribute `{}` is not finite ({x})", a.name),
                    })
                }
                (AttributeKind::Categorical(d), Value::Cat(k)) if (*k as usize) < d.values.len() => {}
                (AttributeKind::Categorical(_), Value::Cat(k)) => {
                    return Err(Error::SchemaMismatch {
                        id,
                        reason: format!("unknown value index {k} for `{}`", a.name),
                    })
                }
                _ => {
                    return Err(Error::SchemaMismatch {
                        id,
                        reason: format!("wrong value kind for `{}`", a.name),
                    })
                }
            }
        }
        Ok(())
    }

    /// Build an instance from textual values, one per attribute.
    pub fn parse_instance<S: AsRef<str>>(&self, id: u64, raw: &[S]) -> Result<Instance> {
        if raw.len() != self.attributes.len() {
            return Err(Error::SchemaMismatch {
                id,
                reason: format!("expected {} values, got {}", self.attributes.len(), raw.len()),
            });
        }
        let values = self
            .attributes
            .iter()
            .zip(raw)
            .map(|(a, r)| {
                let r = r.as_ref().trim();
                match &a.kind {
                    AttributeKind::Numeric => r
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .map(Value::Num)
                        .ok_or_else(|| Error::SchemaMismatch {
                            id,
                            reason: format!("`{r}` is not a number for `{}`", a.name),
                        }),
                    AttributeKind::Categorical(d) => {
                        d.index_of(r).map(Value::Cat).ok_or_else(|| Error::SchemaMismatch {
                            id,
                            reason: format!("unknown value `{r}` for `{}`", a.name),
                        })
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Instance { id, values })
    }

    pub fn render(&self, attr: usize, value: Value) -> String {
        match (value, self.attributes[attr].domain()) {
            (Value::Cat(k), Some(d)) => d.values[k as usize].clone(),
            (Value::Num(x), _) => format!("{x}"),
            (Value::Cat(k), None) => format!("#{k}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Num(f64),
    /// Index into the attribute's categorical value set.
    Cat(u32),
}

impl Value {
    pub fn as_num(self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(x),
            Value::Cat(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub id: u64,
    pub values: Vec<Value>,
}

impl Instance {
    pub fn new(schema: &AttributeSchema, id: u64, values: Vec<Value>) -> Result<Self> {
        schema.check(id, &values)?;
        Ok(Instance { id, values })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Label {
    Reject,
    Accept,
}

impl Label {
    pub fn from_bool(accept: bool) -> Self {
        if accept {
            Label::Accept
        } else {
            Label::Reject
        }
    }

    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn flipped(self) -> Self {
        match self {
            Label::Reject => Label::Accept,
            Label::Accept => Label::Reject,
        }
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(Label::Reject),
            1 => Ok(Label::Accept),
            other => Err(format!("label must be 0 or 1, got {other}")),
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Reject => "No",
            Label::Accept => "Yes",
        })
    }
}

/// Desired label and the signed loss of each possible output for one instance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEntry {
    pub instance_id: u64,
    pub desired: Label,
    pub loss_reject: f64,
    pub loss_accept: f64,
}

impl GroundTruthEntry {
    pub fn new(instance_id: u64, desired: Label, loss_reject: f64, loss_accept: f64) -> Result<Self> {
        let bad = |reason: String| Error::InvalidTruth {
            id: instance_id,
            reason,
        };
        for l in [loss_reject, loss_accept] {
            if !(-1.0..=1.0).contains(&l) {
                return Err(bad(format!("loss {l} outside [-1, 1]")));
            }
        }
        let entry = GroundTruthEntry {
            instance_id,
            desired,
            loss_reject,
            loss_accept,
        };
        if entry.loss(desired) > LOSS_TOLERANCE {
            return Err(bad("loss of the desired label must be <= 0".into()));
        }
        if entry.loss(desired.flipped()) < -LOSS_TOLERANCE {
            return Err(bad("loss of the wrong label must be >= 0".into()));
        }
        Ok(entry)
    }

    pub fn loss(&self, out: Label) -> f64 {
        match out {
            Label::Reject => self.loss_reject,
            Label::Accept => self.loss_accept,
        }
    }
}

/// Instances in arrival order plus the (possibly partial) ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Arc<AttributeSchema>,
    instances: Vec<Instance>,
    positions: HashMap<u64, usize>,
    truths: BTreeMap<u64, GroundTruthEntry>,
}

impl Dataset {
    pub fn new(schema: Arc<AttributeSchema>) -> Self {
        Dataset {
            schema,
            instances: Vec::new(),
            positions: HashMap::new(),
            truths: BTreeMap::new(),
        }
    }

    pub fn schema(&self) -> &Arc<AttributeSchema> {
        &self.schema
    }

    pub fn push(&mut self, instance: Instance, truth: Option<GroundTruthEntry>) -> Result<()> {
        self.schema.check(instance.id, &instance.values)?;
        if self.positions.contains_key(&instance.id) {
            return Err(Error::Schema(format!("duplicate instance id {}", instance.id)));
        }
        if let Some(t) = &truth {
            if t.instance_id != instance.id {
                return Err(Error::IdMismatch {
                    expected: instance.id,
                    actual: t.instance_id,
                });
            }
        }
        self.positions.insert(instance.id, self.instances.len());
        if let Some(t) = truth {
            self.truths.insert(t.instance_id, t);
        }
        self.instances.push(instance);
        Ok(())
    }

    /// Attach or replace the truth of an instance already in the dataset.
    pub fn reveal(&mut self, truth: GroundTruthEntry) -> Result<()> {
        if !self.positions.contains_key(&truth.instance_id) {
            return Err(Error::MissingTruth(truth.instance_id));
        }
        self.truths.insert(truth.instance_id, truth);
        Ok(())
    }

    /// Insert or replace an instance together with its truth.
    pub fn upsert(&mut self, instance: Instance, truth: GroundTruthEntry) -> Result<()> {
        match self.positions.get(&instance.id) {
            Some(&pos) => {
                self.schema.check(instance.id, &instance.values)?;
                self.instances[pos] = instance;
                self.truths.insert(truth.instance_id, truth);
                Ok(())
            }
            None => self.push(instance, Some(truth)),
        }
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn truth(&self, id: u64) -> Option<&GroundTruthEntry> {
        self.truths.get(&id)
    }

    pub fn get(&self, id: u64) -> Option<&Instance> {
        self.positions.get(&id).map(|&p| &self.instances[p])
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Instances that have a ground-truth entry, in arrival order.
    pub fn labeled(&self) -> impl Iterator<Item = (&Instance, &GroundTruthEntry)> {
        self.instances
            .iter()
            .filter_map(|i| self.truths.get(&i.id).map(|t| (i, t)))
    }

    pub fn labeled_count(&self) -> usize {
        self.truths.len()
    }
}
