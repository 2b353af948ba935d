//! Fairness auditing: counterfactual flip tests on sensitive attributes and
//! group-parity checks of acceptance rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{AttributeKind, AttributeSchema, Instance, Label, Value};
use crate::enhance::cuts::candidate_subsets;
use crate::error::{Error, Result};
use crate::function::DecisionFunction;
use crate::par::{self, Exec};

/// Synthetic instances carry this bit in their id.
pub const SYNTHETIC_ID_FLAG: u64 = 1 << 63;

/// Maximum number of flip findings kept verbatim in a report.
const SAMPLE_FINDINGS: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// Audit every `cadence` instances.
    pub cadence: usize,
    /// Number of most recent instances audited.
    pub window: usize,
    pub parity_threshold: f64,
    pub min_support: usize,
    /// Maximum number of sensitive attributes flipped jointly.
    pub flip_cap: usize,
    pub flip_rate_threshold: f64,
    /// Flip-test every k-th instance of the window.
    pub flip_every: usize,
    /// Also flip non-sensitive categorical attributes. Findings are only
    /// counted, never used to decide unfairness.
    pub diagnostic_flips: bool,
}

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            cadence: 50,
            window: 500,
            parity_threshold: 0.1,
            min_support: 20,
            flip_cap: 2,
            flip_rate_threshold: 0.05,
            flip_every: 1,
            diagnostic_flips: false,
        }
    }
}

impl AuditConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("audit: {m}")));
        if self.cadence == 0 {
            return bad("cadence must be >= 1");
        }
        if self.window == 0 {
            return bad("window must be >= 1");
        }
        if !(0.0..=1.0).contains(&self.parity_threshold) {
            return bad("parity_threshold must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.flip_rate_threshold) {
            return bad("flip_rate_threshold must be in [0, 1]");
        }
        if self.flip_every == 0 {
            return bad("flip_every must be >= 1");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipFinding {
    pub function_id: String,
    pub instance_id: u64,
    pub variant_id: u64,
    pub flipped: Vec<String>,
    pub base_label: Label,
    pub variant_label: Label,
}

fn check_flippable(schema: &AttributeSchema, attr: usize, require_sensitive: bool) -> Result<()> {
    let a = schema
        .attributes()
        .get(attr)
        .ok_or_else(|| Error::Schema(format!("attribute index {attr} out of range")))?;
    if matches!(a.kind, AttributeKind::Numeric) {
        return Err(Error::NotFlippable(a.name.clone(), "numeric attributes are not flipped".into()));
    }
    if require_sensitive && !a.sensitivity.is_sensitive() {
        return Err(Error::NotFlippable(a.name.clone(), "attribute is not sensitive".into()));
    }
    Ok(())
}

fn variants_unchecked(i: &Instance, schema: &AttributeSchema, attrs: &[usize]) -> Vec<(Instance, Vec<usize>)> {
    let levels: Vec<usize> = attrs.iter().map(|&a| schema.attribute(a).level_count()).collect();
    let own: Vec<usize> = attrs
        .iter()
        .map(|&a| schema.attribute(a).level_of(i.values[a]).unwrap_or(0))
        .collect();
    let total: usize = levels.iter().product();
    let mut out = Vec::with_capacity(total.saturating_sub(1));
    let mut combo = vec![0usize; attrs.len()];
    for _ in 0..total {
        if combo != own {
            let mut values = i.values.clone();
            let mut changed = Vec::new();
            for (k, &a) in attrs.iter().enumerate() {
                if combo[k] != own[k] {
                    values[a] = schema.attribute(a).representative(combo[k]);
                    changed.push(a);
                }
            }
            let id = SYNTHETIC_ID_FLAG | ((i.id & 0xFFF_FFFF_FFFF) << 16) | out.len() as u64;
            out.push((Instance { id, values }, changed));
        }
        // odometer increment, last attribute fastest
        for k in (0..combo.len()).rev() {
            combo[k] += 1;
            if combo[k] < levels[k] {
                break;
            }
            combo[k] = 0;
        }
    }
    out
}

/// All instances that agree with `i` except on a nonempty subset of
/// `attrs`, each changed attribute set to another level.
pub fn flip_variants(i: &Instance, schema: &AttributeSchema, attrs: &[usize]) -> Result<Vec<Instance>> {
    for &a in attrs {
        check_flippable(schema, a, true)?;
    }
    Ok(variants_unchecked(i, schema, attrs)
        .into_iter()
        .map(|(v, _)| v)
        .collect())
}

fn findings_for(
    f: &DecisionFunction,
    i: &Instance,
    base: Label,
    schema: &AttributeSchema,
    attrs: &[usize],
) -> Vec<FlipFinding> {
    variants_unchecked(i, schema, attrs)
        .into_iter()
        .filter_map(|(v, changed)| {
            let label = f.evaluate_unchecked(&v);
            (label != base).then(|| FlipFinding {
                function_id: f.id().to_string(),
                instance_id: i.id,
                variant_id: v.id,
                flipped: changed.iter().map(|&a| schema.attribute(a).name.clone()).collect(),
                base_label: base,
                variant_label: label,
            })
        })
        .collect()
}

/// One finding per flip variant whose label differs from `f(i)`.
pub fn flip_test(f: &DecisionFunction, i: &Instance, schema: &AttributeSchema, attrs: &[usize]) -> Result<Vec<FlipFinding>> {
    for &a in attrs {
        check_flippable(schema, a, true)?;
    }
    let base = f.evaluate(i)?;
    Ok(findings_for(f, i, base, schema, attrs))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRate {
    pub accepted: usize,
    pub total: usize,
    pub rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParityReport {
    pub function_id: String,
    pub attribute: String,
    pub groups: BTreeMap<String, GroupRate>,
    /// Max pairwise acceptance-rate gap over supported groups; `None` when
    /// no group reaches the minimum support.
    pub gap: Option<f64>,
    pub unfair: bool,
    pub low_support: bool,
}

/// Condition restricting the audited sub-population.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub attr: String,
    #[serde(flatten)]
    pub test: ConditionTest,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionTest {
    Equals(String),
    /// Inclusive numeric range.
    Range { min: f64, max: f64 },
}

enum BoundCondition {
    Equals(usize, u32),
    Range(usize, f64, f64),
}

impl BoundCondition {
    fn bind(schema: &AttributeSchema, c: &Condition) -> Result<Self> {
        let idx = schema.require(&c.attr)?;
        let a = schema.attribute(idx);
        match (&c.test, a.domain()) {
            (ConditionTest::Equals(v), Some(d)) => d
                .index_of(v)
                .map(|k| BoundCondition::Equals(idx, k))
                .ok_or_else(|| Error::Schema(format!("unknown value `{v}` for `{}`", a.name))),
            (ConditionTest::Equals(v), None) => v
                .parse::<f64>()
                .map(|x| BoundCondition::Range(idx, x, x))
                .map_err(|_| Error::Schema(format!("`{v}` is not a number for `{}`", a.name))),
            (ConditionTest::Range { min, max }, None) => Ok(BoundCondition::Range(idx, *min, *max)),
            (ConditionTest::Range { .. }, Some(_)) => {
                Err(Error::Schema(format!("range condition on categorical `{}`", a.name)))
            }
        }
    }

    fn matches(&self, i: &Instance) -> bool {
        match *self {
            BoundCondition::Equals(a, k) => i.values[a] == Value::Cat(k),
            BoundCondition::Range(a, lo, hi) => {
                matches!(i.values[a], Value::Num(x) if x >= lo && x <= hi)
            }
        }
    }
}

fn check_parity_attr(schema: &AttributeSchema, attr: usize) -> Result<()> {
    let a = schema
        .attributes()
        .get(attr)
        .ok_or_else(|| Error::Schema(format!("attribute index {attr} out of range")))?;
    if a.domain().is_none() || !a.sensitivity.is_sensitive() {
        return Err(Error::Schema(format!(
            "parity audits need a sensitive categorical attribute, `{}` is not",
            a.name
        )));
    }
    Ok(())
}

/// Parity report from precomputed labels.
pub(crate) fn parity_from_labels<'a>(
    function_id: &str,
    schema: &AttributeSchema,
    rows: impl Iterator<Item = (&'a Instance, Label)>,
    attr: usize,
    threshold: f64,
    min_support: usize,
) -> ParityReport {
    let a = schema.attribute(attr);
    let mut accepted = vec![0usize; a.level_count()];
    let mut total = vec![0usize; a.level_count()];
    for (i, label) in rows {
        if let Some(l) = a.level_of(i.values[attr]) {
            total[l] += 1;
            if label == Label::Accept {
                accepted[l] += 1;
            }
        }
    }
    let mut groups = BTreeMap::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut supported = 0;
    for l in 0..a.level_count() {
        if total[l] == 0 {
            continue;
        }
        let rate = accepted[l] as f64 / total[l] as f64;
        groups.insert(
            a.level_name(l).to_string(),
            GroupRate {
                accepted: accepted[l],
                total: total[l],
                rate,
            },
        );
        if total[l] >= min_support {
            supported += 1;
            lo = lo.min(rate);
            hi = hi.max(rate);
        }
    }
    let gap = match supported {
        0 => None,
        1 => Some(0.0),
        _ => Some(hi - lo),
    };
    ParityReport {
        function_id: function_id.to_string(),
        attribute: a.name.clone(),
        groups,
        gap,
        unfair: supported >= 2 && gap.is_some_and(|g| g > threshold),
        low_support: supported < 2,
    }
}

/// Acceptance-rate gap of `f` across the levels of `attr` over `rows`.
pub fn parity_audit(
    f: &DecisionFunction,
    rows: &[Instance],
    attr: usize,
    threshold: f64,
    min_support: usize,
) -> Result<ParityReport> {
    let schema = f.schema();
    check_parity_attr(schema, attr)?;
    let labels = par::try_map(Exec::default(), rows, |r| f.evaluate(r))?;
    Ok(parity_from_labels(
        f.id(),
        schema,
        rows.iter().zip(labels),
        attr,
        threshold,
        min_support,
    ))
}

/// `parity_audit` restricted to rows matching every condition.
pub fn conditioned_parity_audit(
    f: &DecisionFunction,
    rows: &[Instance],
    attr: usize,
    conditioning: &[Condition],
    threshold: f64,
    min_support: usize,
) -> Result<ParityReport> {
    let schema = f.schema();
    let bound = conditioning
        .iter()
        .map(|c| BoundCondition::bind(schema, c))
        .collect::<Result<Vec<_>>>()?;
    let subset: Vec<Instance> = rows
        .iter()
        .filter(|r| bound.iter().all(|c| c.matches(r)))
        .cloned()
        .collect();
    parity_audit(f, &subset, attr, threshold, min_support)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub function_id: String,
    pub rows: usize,
    pub parity: Vec<ParityReport>,
    /// Instances flip-tested.
    pub flip_tested: usize,
    /// Tested instances with at least one finding.
    pub flip_failures: usize,
    pub flip_rate: Option<f64>,
    pub flip_findings_total: usize,
    /// First few findings, in window order.
    pub sample_findings: Vec<FlipFinding>,
    /// Findings from flips of non-sensitive attributes (diagnostic only).
    pub diagnostic_findings: usize,
    pub low_support: bool,
    pub unfair: bool,
}

impl AuditReport {
    pub fn reasons(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .parity
            .iter()
            .filter(|p| p.unfair)
            .map(|p| format!("parity gap {:.3} on {}", p.gap.unwrap_or(0.0), p.attribute))
            .collect();
        if let Some(r) = self.flip_rate {
            if self.flip_findings_total > 0 {
                out.push(format!("flip rate {r:.3}"));
            }
        }
        out
    }
}

pub fn audit_function(f: &DecisionFunction, rows: &[Instance], cfg: &AuditConfig) -> Result<AuditReport> {
    audit_function_with(Exec::default(), f, rows, cfg)
}

/// Parity reports for every sensitive categorical attribute plus flip tests
/// over the window.
pub fn audit_function_with(exec: Exec, f: &DecisionFunction, rows: &[Instance], cfg: &AuditConfig) -> Result<AuditReport> {
    let schema = f.schema();
    let labels = par::try_map(exec, rows, |r| f.evaluate(r))?;
    let sensitive = schema.sensitive_categorical();
    let parity: Vec<ParityReport> = sensitive
        .iter()
        .map(|&a| {
            parity_from_labels(
                f.id(),
                schema,
                rows.iter().zip(labels.iter().copied()),
                a,
                cfg.parity_threshold,
                cfg.min_support,
            )
        })
        .collect();

    let flip_attrs: Vec<usize> = sensitive.iter().copied().take(cfg.flip_cap).collect();
    let diag_attrs: Vec<usize> = if cfg.diagnostic_flips {
        schema
            .attributes()
            .iter()
            .enumerate()
            .filter(|(_, a)| !a.sensitivity.is_sensitive() && a.domain().is_some())
            .map(|(k, _)| k)
            .collect()
    } else {
        Vec::new()
    };
    let tested: Vec<usize> = (0..rows.len()).step_by(cfg.flip_every).collect();
    let per_row = par::map(exec, &tested, |&k| {
        let found = if flip_attrs.is_empty() {
            Vec::new()
        } else {
            findings_for(f, &rows[k], labels[k], schema, &flip_attrs)
        };
        let diag = candidate_subsets(&diag_attrs, 1)
            .iter()
            .map(|s| findings_for(f, &rows[k], labels[k], schema, s).len())
            .sum::<usize>();
        (found, diag)
    });
    let flip_tested = if flip_attrs.is_empty() { 0 } else { tested.len() };
    let flip_failures = per_row.iter().filter(|(f, _)| !f.is_empty()).count();
    let flip_findings_total = per_row.iter().map(|(f, _)| f.len()).sum();
    let diagnostic_findings = per_row.iter().map(|(_, d)| d).sum();
    let sample_findings = per_row
        .into_iter()
        .flat_map(|(f, _)| f)
        .take(SAMPLE_FINDINGS)
        .collect();
    let flip_rate = (flip_tested > 0).then(|| flip_failures as f64 / flip_tested as f64);
    let unfair = parity.iter().any(|p| p.unfair)
        || flip_rate.is_some_and(|r| r > cfg.flip_rate_threshold);
    Ok(AuditReport {
        function_id: f.id().to_string(),
        rows: rows.len(),
        low_support: parity.iter().all(|p| p.low_support),
        parity,
        flip_tested,
        flip_failures,
        flip_rate,
        flip_findings_total,
        sample_findings,
        diagnostic_findings,
        unfair,
    })
}
