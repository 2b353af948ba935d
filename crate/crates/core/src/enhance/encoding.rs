use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::domain::{AttributeKind, AttributeSchema, Instance, Value};
use crate::error::{Error, Result};

/// Maps instances to real feature vectors.
///
/// Numeric attributes are standardized with statistics fitted on the training
/// rows; categorical attributes are one-hot over their levels (groups for
/// grouped attributes, raw values otherwise).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    blocks: Vec<Block>,
    dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Block {
    attr: usize,
    offset: usize,
    kind: BlockKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum BlockKind {
    Standardized { mean: f64, sd: f64 },
    OneHot { levels: usize },
}

impl FeatureEncoding {
    pub fn fit(schema: &AttributeSchema, rows: &[Instance]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyData("cannot fit an encoding on zero rows".into()));
        }
        let mut blocks = Vec::with_capacity(schema.len());
        let mut offset = 0;
        for (attr, a) in schema.attributes().iter().enumerate() {
            let kind = match &a.kind {
                AttributeKind::Numeric => {
                    let xs: Vec<f64> = rows
                        .iter()
                        .map(|r| r.values[attr].as_num().unwrap_or(0.0))
                        .collect();
                    let n = xs.len() as f64;
                    let mean = xs.iter().sum::<f64>() / n;
                    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    // constant columns encode to 0
                    let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
                    BlockKind::Standardized { mean, sd }
                }
                AttributeKind::Categorical(_) => BlockKind::OneHot {
                    levels: a.level_count(),
                },
            };
            let width = match kind {
                BlockKind::Standardized { .. } => 1,
                BlockKind::OneHot { levels } => levels,
            };
            blocks.push(Block { attr, offset, kind });
            offset += width;
        }
        Ok(FeatureEncoding {
            blocks,
            dim: offset,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Coordinates occupied by attribute `attr`.
    pub fn coordinates(&self, attr: usize) -> Range<usize> {
        let b = &self.blocks[attr];
        let width = match b.kind {
            BlockKind::Standardized { .. } => 1,
            BlockKind::OneHot { levels } => levels,
        };
        b.offset..b.offset + width
    }

    /// Stored standardization statistics of a numeric attribute.
    pub fn standardization(&self, attr: usize) -> Option<(f64, f64)> {
        match self.blocks.get(attr)?.kind {
            BlockKind::Standardized { mean, sd } => Some((mean, sd)),
            BlockKind::OneHot { .. } => None,
        }
    }

    pub fn encode_into(&self, schema: &AttributeSchema, instance: &Instance, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        out.fill(0.0);
        for b in &self.blocks {
            let v = instance.values[b.attr];
            match b.kind {
                BlockKind::Standardized { mean, sd } => {
                    out[b.offset] = (v.as_num().unwrap_or(mean) - mean) / sd;
                }
                BlockKind::OneHot { .. } => {
                    if let Some(level) = schema.attribute(b.attr).level_of(v) {
                        out[b.offset + level] = 1.0;
                    }
                }
            }
        }
    }

    pub fn encode(&self, schema: &AttributeSchema, instance: &Instance) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.encode_into(schema, instance, &mut out);
        out
    }

    /// Row-major design matrix for `rows`.
    pub fn encode_all(&self, schema: &AttributeSchema, rows: &[Instance]) -> Vec<f64> {
        let mut out = vec![0.0; rows.len() * self.dim];
        if self.dim == 0 {
            return out;
        }
        for (chunk, r) in out.chunks_mut(self.dim).zip(rows) {
            self.encode_into(schema, r, chunk);
        }
        out
    }

    /// Invert `encode`. Numeric values are de-standardized; categorical
    /// blocks decode to the arg-max level (its representative value for
    /// grouped attributes).
    pub fn decode(&self, schema: &AttributeSchema, features: &[f64]) -> Vec<Value> {
        self.blocks
            .iter()
            .map(|b| match b.kind {
                BlockKind::Standardized { mean, sd } => Value::Num(features[b.offset] * sd + mean),
                BlockKind::OneHot { levels } => {
                    let level = (0..levels)
                        .max_by(|&x, &y| {
                            features[b.offset + x].total_cmp(&features[b.offset + y]).then(y.cmp(&x))
                        })
                        .unwrap_or(0);
                    schema.attribute(b.attr).representative(level)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate_population, ScenarioConfig};
    use proptest::prelude::*;

    #[test]
    fn refit_reproduces_statistics() {
        let pop = generate_population(&ScenarioConfig {
            population: 300,
            ..Default::default()
        })
        .unwrap();
        let schema = pop.truth.schema().clone();
        let enc = FeatureEncoding::fit(&schema, pop.truth.instances()).unwrap();
        let school = schema.index_of("school").unwrap();
        let x = enc.encode_all(&schema, pop.truth.instances());
        let col: Vec<f64> = x.chunks(enc.dim()).map(|r| r[enc.coordinates(school).start]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
        assert!(mean.abs() < 1e-9);
        assert!((var - 1.0).abs() < 1e-9);
        let again = FeatureEncoding::fit(&schema, pop.truth.instances()).unwrap();
        assert_eq!(enc, again);
    }

    proptest! {
        #[test]
        fn decode_inverts_encode(seed in 0u64..500, pick in 0usize..200) {
            let pop = generate_population(&ScenarioConfig {
                population: 200,
                seed,
                ..Default::default()
            })
            .unwrap();
            let schema = pop.truth.schema().clone();
            let enc = FeatureEncoding::fit(&schema, pop.truth.instances()).unwrap();
            let inst = &pop.truth.instances()[pick];
            let decoded = enc.decode(&schema, &enc.encode(&schema, inst));
            for (k, (a, b)) in inst.values.iter().zip(&decoded).enumerate() {
                let attr = schema.attribute(k);
                match (a, b) {
                    (Value::Num(x), Value::Num(y)) => prop_assert!((x - y).abs() < 1e-9),
                    _ => prop_assert_eq!(attr.level_of(*a), attr.level_of(*b)),
                }
            }
        }
    }
}
