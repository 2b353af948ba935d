//! Decision-boundary covariance constraints over subsets of sensitive
//! attributes, and lazy generation of the most violated one.
//!
//! A subset `S` partitions instances into cells (the joint levels of the
//! attributes in `S`). The constraint requires `|cov(1[cell], margin)| <= c`
//! for every cell with non-zero variance.

use serde::{Deserialize, Serialize};

use crate::domain::{AttributeSchema, Instance};
use crate::error::{Error, Result};
use crate::function::DecisionFunction;
use crate::par;

use super::solver::LinearCut;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FairnessConstraint {
    /// Sensitive attribute names, in schema order.
    pub attributes: Vec<String>,
    pub bound: f64,
}

impl FairnessConstraint {
    pub fn new(schema: &AttributeSchema, attrs: &[usize], bound: f64) -> Result<Self> {
        if attrs.is_empty() {
            return Err(Error::Config("fairness constraint needs a nonempty subset".into()));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::Config(format!("constraint bound must be >= 0, got {bound}")));
        }
        let mut sorted = attrs.to_vec();
        sorted.sort_unstable();
        sorted.dedup();
        for &a in &sorted {
            let d = schema
                .attributes()
                .get(a)
                .ok_or_else(|| Error::Config(format!("attribute index {a} out of range")))?;
            if !d.sensitivity.is_sensitive() || d.domain().is_none() {
                return Err(Error::Config(format!(
                    "`{}` is not a sensitive categorical attribute",
                    d.name
                )));
            }
        }
        Ok(FairnessConstraint {
            attributes: sorted.iter().map(|&a| schema.attribute(a).name.clone()).collect(),
            bound,
        })
    }

    pub fn indices(&self, schema: &AttributeSchema) -> Result<Vec<usize>> {
        self.attributes.iter().map(|a| schema.require(a)).collect()
    }
}

/// Number of joint cells of `attrs`.
pub fn cell_count(schema: &AttributeSchema, attrs: &[usize]) -> usize {
    attrs
        .iter()
        .map(|&a| schema.attribute(a).level_count())
        .product()
}

pub fn cell_of(schema: &AttributeSchema, attrs: &[usize], instance: &Instance) -> usize {
    attrs.iter().fold(0, |acc, &a| {
        let attr = schema.attribute(a);
        acc * attr.level_count() + attr.level_of(instance.values[a]).unwrap_or(0)
    })
}

/// Nonempty subsets of `attrs` with at most `max_size` members, ordered by
/// size and then lexicographically.
pub fn candidate_subsets(attrs: &[usize], max_size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for size in 1..=max_size.min(attrs.len()) {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&k| attrs[k]).collect());
            // advance to the next combination
            let mut k = size;
            while k > 0 && idx[k - 1] == attrs.len() - size + k - 1 {
                k -= 1;
            }
            if k == 0 {
                break;
            }
            idx[k - 1] += 1;
            for j in k..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Violation {
    pub value: f64,
    /// Every cell had zero variance over the data.
    pub degenerate: bool,
}

fn violation_of_margins(schema: &AttributeSchema, rows: &[Instance], margins: &[f64], attrs: &[usize]) -> Violation {
    let cells = cell_count(schema, attrs);
    let n = rows.len() as f64;
    let mut count = vec![0.0; cells];
    let mut sum_m = vec![0.0; cells];
    for (r, m) in rows.iter().zip(margins) {
        let c = cell_of(schema, attrs, r);
        count[c] += 1.0;
        sum_m[c] += m;
    }
    let mean_m = margins.iter().sum::<f64>() / n;
    let mut worst = 0.0f64;
    let mut any = false;
    for c in 0..cells {
        if count[c] == 0.0 || count[c] == n {
            continue;
        }
        any = true;
        let zbar = count[c] / n;
        let cov = sum_m[c] / n - zbar * mean_m;
        worst = worst.max(cov.abs());
    }
    Violation {
        value: worst,
        degenerate: !any,
    }
}

/// Largest absolute covariance between a cell indicator of `attrs` and the
/// margin of `f` over `rows`.
pub fn constraint_violation(f: &DecisionFunction, rows: &[Instance], attrs: &[usize]) -> Result<Violation> {
    let m = f.as_margin().ok_or(Error::WrongKind {
        expected: "constrained_margin",
        actual: f.kind().name(),
    })?;
    if rows.is_empty() {
        return Err(Error::EmptyData("constraint violation over zero rows".into()));
    }
    let schema = f.schema();
    let margins: Vec<f64> = rows.iter().map(|r| m.margin(schema, r)).collect();
    Ok(violation_of_margins(schema, rows, &margins, attrs))
}

/// Linear cuts `|a_k . w| <= c` for every non-degenerate cell of every
/// constraint, given the encoded design matrix of `rows`.
pub(crate) fn linear_cuts(
    schema: &AttributeSchema,
    constraints: &[FairnessConstraint],
    rows: &[Instance],
    x: &[f64],
    d: usize,
) -> Result<Vec<LinearCut>> {
    let n = rows.len() as f64;
    let mut mean_x = vec![0.0; d];
    for r in x.chunks(d.max(1)).take(rows.len()) {
        for (m, v) in mean_x.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    let mut out = Vec::new();
    for (origin, c) in constraints.iter().enumerate() {
        let attrs = c.indices(schema)?;
        let cells = cell_count(schema, &attrs);
        let mut count = vec![0.0; cells];
        let mut sum_x = vec![vec![0.0; d]; cells];
        for (k, r) in rows.iter().enumerate() {
            let cell = cell_of(schema, &attrs, r);
            count[cell] += 1.0;
            for (s, v) in sum_x[cell].iter_mut().zip(&x[k * d..(k + 1) * d]) {
                *s += v;
            }
        }
        for cell in 0..cells {
            if count[cell] == 0.0 || count[cell] == n {
                continue;
            }
            let zbar = count[cell] / n;
            let a = (0..d).map(|j| sum_x[cell][j] / n - zbar * mean_x[j]).collect();
            out.push(LinearCut {
                a,
                bound: c.bound,
                origin,
            });
        }
    }
    Ok(out)
}

/// Scan candidate subsets of the sensitive attributes, smallest first, and
/// return the most violated one that is not yet constrained. Only the first
/// size level containing a violation is considered.
pub fn generate_cut(
    f: &DecisionFunction,
    rows: &[Instance],
    bound: f64,
    max_size: usize,
) -> Result<Option<FairnessConstraint>> {
    let m = f.as_margin().ok_or(Error::WrongKind {
        expected: "constrained_margin",
        actual: f.kind().name(),
    })?;
    if rows.is_empty() {
        return Ok(None);
    }
    let schema = f.schema();
    let existing: Vec<Vec<usize>> = m
        .constraints()
        .iter()
        .map(|c| c.indices(schema))
        .collect::<Result<_>>()?;
    let candidates: Vec<Vec<usize>> = candidate_subsets(&schema.sensitive_categorical(), max_size)
        .into_iter()
        .filter(|s| !existing.contains(s))
        .collect();
    let margins: Vec<f64> = rows.iter().map(|r| m.margin(schema, r)).collect();
    let scores = par::map(par::Exec::default(), &candidates, |s| {
        violation_of_margins(schema, rows, &margins, s).value
    });
    let mut best: Option<(usize, f64)> = None;
    for (k, (s, v)) in candidates.iter().zip(&scores).enumerate() {
        if let Some((b, _)) = best {
            if candidates[b].len() < s.len() {
                break;
            }
        }
        if *v > bound && best.is_none_or(|(_, bv)| *v > bv) {
            best = Some((k, *v));
        }
    }
    best.map(|(k, _)| FairnessConstraint::new(schema, &candidates[k], bound))
        .transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subsets_ordered_by_size_then_lex() {
        assert_eq!(
            candidate_subsets(&[0, 2, 3], 3),
            vec![
                vec![0],
                vec![2],
                vec![3],
                vec![0, 2],
                vec![0, 3],
                vec![2, 3],
                vec![0, 2, 3]
            ]
        );
        assert_eq!(candidate_subsets(&[1, 4], 1), vec![vec![1], vec![4]]);
        assert!(candidate_subsets(&[], 2).is_empty());
        for s in 0..=4usize {
            let attrs: Vec<usize> = (0..s).collect();
            assert_eq!(candidate_subsets(&attrs, s).len(), (1 << s) - 1);
        }
    }
}
