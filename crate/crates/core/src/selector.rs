//! Multiplicative-weights selection over a portfolio of decision functions.
//!
//! Every member starts at weight 1. An instance is answered by one member
//! drawn with probability proportional to its weight; once the ground truth
//! arrives, every member's weight is multiplied by `1 - eta * loss`.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{GroundTruthEntry, Instance, Label};
use crate::error::{Error, Result};
use crate::function::DecisionFunction;
use crate::par::{self, Exec};

pub const DEFAULT_ETA: f64 = 0.25;
pub const DEFAULT_TAU: f64 = 0.02;

/// Weight sums outside this range trigger a rescale to `sum = |F|`.
const RENORM_LOW: f64 = 1e-6;
const RENORM_HIGH: f64 = 1e6;

/// Portfolios at least this large evaluate members in parallel.
const PAR_MIN_MEMBERS: usize = 16;

#[derive(Clone, Debug)]
struct Member {
    function: DecisionFunction,
    weight: f64,
}

#[derive(Clone, Debug)]
pub struct Portfolio {
    members: Vec<Member>,
    eta: f64,
    tau: f64,
    framework_loss: f64,
    function_loss: BTreeMap<String, f64>,
    updates: u64,
}

/// Serializable view of the portfolio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortfolioState {
    pub entries: Vec<(String, f64)>,
    pub eta: f64,
    pub tau: f64,
    pub cumulative_framework_loss: f64,
    pub cumulative_function_loss: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub instance_id: u64,
    pub chosen: String,
    pub emitted: Label,
    pub members: Vec<String>,
    pub probabilities: Vec<f64>,
    pub labels: Vec<Label>,
}

impl Portfolio {
    pub fn new(functions: Vec<DecisionFunction>, eta: f64, tau: f64) -> Result<Self> {
        if functions.is_empty() {
            return Err(Error::EmptyPortfolio);
        }
        if !(eta > 0.0 && eta <= 0.5) {
            return Err(Error::Config(format!("eta must be in (0, 1/2], got {eta}")));
        }
        if !(tau >= 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("tau must be >= 0, got {tau}")));
        }
        let mut ids: Vec<&str> = functions.iter().map(|f| f.id()).collect();
        ids.sort_unstable();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("portfolio function ids must be unique".into()));
        }
        let function_loss = functions.iter().map(|f| (f.id().to_string(), 0.0)).collect();
        Ok(Portfolio {
            members: functions
                .into_iter()
                .map(|function| Member { function, weight: 1.0 })
                .collect(),
            eta,
            tau,
            framework_loss: 0.0,
            function_loss,
            updates: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|m| m.weight).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.members.iter().map(|m| m.function.id().to_string()).collect()
    }

    pub fn functions(&self) -> impl Iterator<Item = &DecisionFunction> {
        self.members.iter().map(|m| &m.function)
    }

    pub fn get(&self, id: &str) -> Option<&DecisionFunction> {
        self.members.iter().find(|m| m.function.id() == id).map(|m| &m.function)
    }

    pub fn framework_loss(&self) -> f64 {
        self.framework_loss
    }

    pub fn function_loss(&self, id: &str) -> Option<f64> {
        self.function_loss.get(id).copied()
    }

    /// Overwrite the weights; for tests and experiments.
    pub fn set_weights(&mut self, weights: &[f64]) -> Result<()> {
        if weights.len() != self.members.len() || weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return Err(Error::Config("weights must be positive, one per member".into()));
        }
        for (m, w) in self.members.iter_mut().zip(weights) {
            m.weight = *w;
        }
        Ok(())
    }

    pub fn state(&self) -> PortfolioState {
        PortfolioState {
            entries: self
                .members
                .iter()
                .map(|m| (m.function.id().to_string(), m.weight))
                .collect(),
            eta: self.eta,
            tau: self.tau,
            cumulative_framework_loss: self.framework_loss,
            cumulative_function_loss: self.function_loss.clone(),
        }
    }

    /// `p_f = w_f / sum(w)`.
    pub fn distribution(&self) -> Result<Vec<f64>> {
        if self.members.is_empty() {
            return Err(Error::EmptyPortfolio);
        }
        let total: f64 = self.members.iter().map(|m| m.weight).sum();
        Ok(self.members.iter().map(|m| m.weight / total).collect())
    }

    /// Apply every member to `instance` and sample the one whose label is
    /// emitted.
    pub fn select<R: Rng + ?Sized>(&self, instance: &Instance, rng: &mut R) -> Result<SelectionRecord> {
        let exec = if self.members.len() >= PAR_MIN_MEMBERS {
            Exec::default()
        } else {
            Exec::Sequential
        };
        self.select_with(exec, instance, rng)
    }

    pub fn select_with<R: Rng + ?Sized>(&self, exec: Exec, instance: &Instance, rng: &mut R) -> Result<SelectionRecord> {
        let probabilities = self.distribution()?;
        let labels = par::try_map(exec, &self.members, |m| m.function.evaluate(instance))?;
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = None;
        for (k, p) in probabilities.iter().enumerate() {
            acc += p;
            if *p > 0.0 && u < acc {
                chosen = Some(k);
                break;
            }
        }
        // rounding can leave `acc` a hair below 1
        let chosen = chosen.unwrap_or_else(|| {
            probabilities
                .iter()
                .rposition(|p| *p > 0.0)
                .expect("positive weights")
        });
        Ok(SelectionRecord {
            instance_id: instance.id,
            chosen: self.members[chosen].function.id().to_string(),
            emitted: labels[chosen],
            members: self.ids(),
            probabilities,
            labels,
        })
    }

    /// Multiply each member's weight by `1 - eta * loss` for the label it
    /// gave in `record`. Members removed since the record was made are
    /// skipped. Returns the loss of the emitted label.
    pub fn update_weights(&mut self, record: &SelectionRecord, entry: &GroundTruthEntry) -> Result<f64> {
        if entry.instance_id != record.instance_id {
            return Err(Error::IdMismatch {
                expected: record.instance_id,
                actual: entry.instance_id,
            });
        }
        if record.members.len() != record.labels.len() {
            return Err(Error::Config("selection record has mismatched labels".into()));
        }
        for (id, label) in record.members.iter().zip(&record.labels) {
            let loss = entry.loss(*label);
            *self.function_loss.entry(id.clone()).or_insert(0.0) += loss;
            if let Some(m) = self.members.iter_mut().find(|m| m.function.id() == id) {
                m.weight *= 1.0 - self.eta * loss;
            }
        }
        let emitted_loss = entry.loss(record.emitted);
        self.framework_loss += emitted_loss;
        self.updates += 1;
        let total: f64 = self.members.iter().map(|m| m.weight).sum();
        if !(RENORM_LOW..=RENORM_HIGH).contains(&total) {
            let scale = self.members.len() as f64 / total;
            self.members.iter_mut().for_each(|m| m.weight *= scale);
        }
        Ok(emitted_loss)
    }

    /// Remove members whose weight is below `tau`.
    pub fn prune(&mut self) -> Vec<DecisionFunction> {
        self.prune_flagged(&[])
    }

    /// Remove members below `tau` and those listed in `flagged`, lowest
    /// weight first. The highest-weight member is kept if everything would
    /// otherwise go.
    pub fn prune_flagged(&mut self, flagged: &[String]) -> Vec<DecisionFunction> {
        let doomed = |m: &Member| m.weight < self.tau || flagged.iter().any(|f| f == m.function.id());
        let mut order: Vec<usize> = (0..self.members.len())
            .filter(|&k| doomed(&self.members[k]))
            .collect();
        order.sort_by(|&a, &b| {
            self.members[a]
                .weight
                .total_cmp(&self.members[b].weight)
                .then_with(|| self.members[b].function.id().cmp(self.members[a].function.id()))
        });
        if order.len() == self.members.len() {
            // keep the highest-weight member (ties: lexicographically first id)
            order.pop();
        }
        let mut remove = vec![false; self.members.len()];
        order.iter().for_each(|&k| remove[k] = true);
        let mut removed_by_index: Vec<(usize, DecisionFunction)> = Vec::new();
        let mut kept = Vec::with_capacity(self.members.len());
        for (k, m) in std::mem::take(&mut self.members).into_iter().enumerate() {
            if remove[k] {
                removed_by_index.push((k, m.function));
            } else {
                kept.push(m);
            }
        }
        self.members = kept;
        // return in pruning order
        order
            .iter()
            .map(|k| {
                let pos = removed_by_index.iter().position(|(i, _)| i == k).expect("removed");
                removed_by_index.swap_remove(pos).1
            })
            .collect()
    }

    /// Median of the current weights; 1 for an empty portfolio.
    pub fn median_weight(&self) -> f64 {
        let mut w = self.weights();
        if w.is_empty() {
            return 1.0;
        }
        w.sort_by(f64::total_cmp);
        let n = w.len();
        if n % 2 == 1 {
            w[n / 2]
        } else {
            0.5 * (w[n / 2 - 1] + w[n / 2])
        }
    }

    /// Put an enhanced function back at the median weight. Returns the
    /// weight assigned.
    pub fn reinsert(&mut self, function: DecisionFunction) -> Result<f64> {
        if self.get(function.id()).is_some() {
            return Err(Error::Config(format!("`{}` is already in the portfolio", function.id())));
        }
        let weight = self.median_weight();
        self.function_loss.entry(function.id().to_string()).or_insert(0.0);
        self.members.push(Member { function, weight });
        Ok(weight)
    }

    /// Cumulative framework loss minus the lowest cumulative loss of a
    /// current member (ties broken by id).
    pub fn regret(&self) -> Result<f64> {
        if self.updates == 0 {
            return Err(Error::NoUpdates);
        }
        let best = self
            .members
            .iter()
            .map(|m| {
                let id = m.function.id();
                (self.function_loss.get(id).copied().unwrap_or(0.0), id)
            })
            .min_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)))
            .ok_or(Error::EmptyPortfolio)?;
        Ok(self.framework_loss - best.0)
    }
}
