use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::audit::{audit_function, parity_from_labels};
use crate::domain::{AttributeSchema, Dataset, GroundTruthEntry, Instance, Label};
use crate::enhance::{enhance, EnhancementOutcome, EnhancementStatus};
use crate::error::{Error, Result};
use crate::function::DecisionFunction;
use crate::scenario::{default_portfolio_on, generate_population, training_history};
use crate::selector::Portfolio;

use super::config::{FunctionSpec, RunConfig};
use super::io::{read_rows, resolve_schema, rows_to_dataset, CsvRow};
use super::report::{Event, MetricsRow, RunReport, StepRecord};

/// ChaCha stream used for selection draws; population blocks use 0..=blocks.
const SELECTION_STREAM: u64 = u64::MAX;

struct Setup {
    stream: Dataset,
    functions: Vec<DecisionFunction>,
}

fn needs_training(cfg: &RunConfig) -> bool {
    cfg.portfolio.functions.is_empty() || cfg.portfolio.functions.iter().any(FunctionSpec::needs_training)
}

fn setup(cfg: &RunConfig) -> Result<Setup> {
    let training_rows = match &cfg.portfolio.training {
        Some(p) if needs_training(cfg) => Some((p.clone(), read_rows(p)?)),
        _ => None,
    };
    let (stream, generated_history) = match &cfg.dataset {
        Some(src) => {
            let rows = read_rows(&src.path)?;
            let all: Vec<&CsvRow> = rows
                .iter()
                .chain(training_rows.iter().flat_map(|(_, r)| r))
                .collect();
            let schema = resolve_schema(&src.path, src.meta.as_deref(), &all)?;
            (rows_to_dataset(&src.path, &rows, schema)?, None)
        }
        None => {
            let scenario = cfg.scenario_for_run();
            let stream = generate_population(&scenario)?.truth;
            let history = if training_rows.is_none() && needs_training(cfg) {
                Some(training_history(&scenario)?)
            } else {
                None
            };
            (stream, history)
        }
    };
    let schema = stream.schema().clone();
    let training = match (training_rows, generated_history) {
        (Some((path, rows)), _) => Some(Arc::new(rows_to_dataset(&path, &rows, schema.clone())?)),
        (None, Some(h)) => Some(Arc::new(h)),
        (None, None) => None,
    };
    let functions = if cfg.portfolio.functions.is_empty() {
        default_portfolio_on(training.expect("validated: default portfolio has training data"))?
    } else {
        cfg.portfolio
            .functions
            .iter()
            .map(|s| s.build(&schema, training.as_ref()))
            .collect::<Result<_>>()?
    };
    Ok(Setup { stream, functions })
}

/// `gap_<attr>`, or `gap_<attr>group` for attributes audited by group.
pub fn gap_column(schema: &AttributeSchema, attr: usize) -> String {
    let a = schema.attribute(attr);
    if a.is_grouped() {
        format!("gap_{}group", a.name)
    } else {
        format!("gap_{}", a.name)
    }
}

/// Run the online loop: select, emit, reveal, update; every `cadence`
/// steps audit all members, remove the unfair ones and those below `tau`,
/// try to repair every removed one and put the repaired ones back.
pub fn run(cfg: &RunConfig) -> Result<RunReport> {
    cfg.validate()?;
    let Setup { stream, functions } = setup(cfg)?;
    let schema = stream.schema().clone();
    let mut portfolio = Portfolio::new(functions, cfg.selector.eta, cfg.selector.tau)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(SELECTION_STREAM);

    let steps = cfg.steps.min(stream.len());
    let gap_attrs = schema.sensitive_categorical();
    let gap_columns = gap_attrs.iter().map(|&a| gap_column(&schema, a)).collect();

    let instances = stream.instances();
    let mut records: Vec<StepRecord> = Vec::with_capacity(steps);
    let mut metrics: Vec<MetricsRow> = Vec::with_capacity(steps);
    let mut events: Vec<Event> = Vec::new();
    let mut revealed = Dataset::new(schema.clone());
    let mut pending: VecDeque<(usize, usize)> = VecDeque::new();
    let mut correct: VecDeque<bool> = VecDeque::new();
    let mut emitted: Vec<Label> = Vec::with_capacity(steps);

    for t in 1..=steps {
        let inst = &instances[t - 1];
        let selection = portfolio.select(inst, &mut rng)?;
        emitted.push(selection.emitted);
        records.push(StepRecord {
            step: t as u64,
            selection,
            revealed_loss: None,
        });
        pending.push_back((t + cfg.reveal_delay, t - 1));
        while pending.front().is_some_and(|&(due, _)| due <= t) {
            let (_, k) = pending.pop_front().expect("nonempty");
            let inst = &instances[k];
            let Some(entry) = stream.truth(inst.id).copied() else {
                continue;
            };
            let rec = &mut records[k];
            rec.revealed_loss = Some(portfolio.update_weights(&rec.selection, &entry)?);
            correct.push_back(rec.selection.emitted == entry.desired);
            if correct.len() > cfg.metrics_window {
                correct.pop_front();
            }
            revealed.push(inst.clone(), Some(entry))?;
        }

        // audits wait for a full window; tiny windows flag fair members on noise
        if t % cfg.audit.cadence == 0 && t >= cfg.audit.window {
            let rows = &instances[t.saturating_sub(cfg.audit.window)..t];
            audit_cycle(t as u64, &mut portfolio, rows, &revealed, cfg, &mut events)?;
        }

        let lo = t.saturating_sub(cfg.metrics_window);
        let gaps = gap_attrs
            .iter()
            .map(|&a| {
                let window = instances[lo..t].iter().zip(emitted[lo..t].iter().copied());
                parity_from_labels("framework", &schema, window, a, 1.0, cfg.audit.min_support).gap
            })
            .collect();
        metrics.push(MetricsRow {
            step: t as u64,
            framework_loss: portfolio.framework_loss(),
            function_loss: portfolio.state().cumulative_function_loss,
            regret: portfolio.regret().ok(),
            rolling_accuracy: (!correct.is_empty())
                .then(|| correct.iter().filter(|&&c| c).count() as f64 / correct.len() as f64),
            gaps,
        });
    }

    let truncated = steps < cfg.steps;
    if truncated {
        events.push(Event::Truncated {
            step: steps as u64,
            requested: cfg.steps,
        });
    }
    Ok(RunReport {
        generator: concat!("fairfolio ", env!("CARGO_PKG_VERSION")).to_string(),
        config: cfg.clone(),
        steps_requested: cfg.steps,
        steps_executed: steps,
        truncated,
        gap_columns,
        steps: records,
        metrics,
        events,
        final_portfolio: portfolio.state(),
    })
}

fn audit_cycle(
    step: u64,
    portfolio: &mut Portfolio,
    rows: &[Instance],
    revealed: &Dataset,
    cfg: &RunConfig,
    events: &mut Vec<Event>,
) -> Result<()> {
    let mut flagged: Vec<String> = Vec::new();
    let mut reasons: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for f in portfolio.functions() {
        let report = audit_function(f, rows, &cfg.audit)?;
        let why = report.reasons();
        events.push(Event::Audit {
            step,
            function_id: f.id().to_string(),
            unfair: report.unfair,
            low_support: report.low_support,
            flip_rate: report.flip_rate,
            gaps: report.parity.iter().map(|p| (p.attribute.clone(), p.gap)).collect(),
            reasons: why.clone(),
        });
        // with repair switched off, audits only observe
        if report.unfair && cfg.enhancement.enabled {
            flagged.push(f.id().to_string());
            reasons.insert(f.id().to_string(), why);
        }
    }

    let weights: BTreeMap<String, f64> = portfolio.state().entries.into_iter().collect();
    let removed = portfolio.prune_flagged(&flagged);
    for f in &removed {
        let weight = weights[f.id()];
        let mut why = reasons.get(f.id()).cloned().unwrap_or_default();
        if weight < portfolio.tau() {
            why.push(format!("weight {weight:.3e} below tau"));
        }
        events.push(Event::Prune {
            step,
            function_id: f.id().to_string(),
            weight,
            reasons: why,
        });
    }

    for f in removed {
        let mistakes: Vec<(Instance, GroundTruthEntry)> = revealed
            .labeled()
            .filter(|(i, e)| f.evaluate_unchecked(i) != e.desired)
            .map(|(i, e)| (i.clone(), *e))
            .collect();
        let started = Instant::now();
        let mut outcome = enhance(&f, &mistakes, rows, revealed, &cfg.audit, &cfg.enhancement)
            .unwrap_or_else(|e| EnhancementOutcome::failed(&f, e.to_string()));
        let wall_time_ms = Some(started.elapsed().as_secs_f64() * 1e3);
        let repaired = match outcome.status {
            EnhancementStatus::Enhanced => outcome.function.take(),
            _ => None,
        };
        events.push(Event::Enhancement {
            step,
            outcome: Box::new(outcome),
            wall_time_ms,
        });
        if let Some(g) = repaired {
            let function_id = g.id().to_string();
            let weight = portfolio.reinsert(g)?;
            events.push(Event::Reinsert {
                step,
                function_id,
                weight,
            });
        }
    }
    Ok(())
}

fn first_difference<T, F>(a: &[T], b: &[T], same: F, step_of: impl Fn(usize, Option<&T>, Option<&T>) -> u64) -> Option<u64>
where
    F: Fn(&T, &T) -> bool,
{
    let n = a.len().max(b.len());
    (0..n).find_map(|k| match (a.get(k), b.get(k)) {
        (Some(x), Some(y)) if same(x, y) => None,
        (x, y) => Some(step_of(k, x, y)),
    })
}

/// Re-run the recorded configuration and compare it with the recording.
/// Fails with [`Error::Divergence`] at the first step that differs.
pub fn replay(recorded: &RunReport) -> Result<RunReport> {
    let fresh = run(&recorded.config)?;
    let steps = first_difference(&recorded.steps, &fresh.steps, |x, y| x == y, |k, _, _| k as u64 + 1);
    let metrics = first_difference(&recorded.metrics, &fresh.metrics, |x, y| x == y, |k, _, _| k as u64 + 1);
    let canon = |e: &Event| {
        let mut e = e.clone();
        if let Event::Enhancement { wall_time_ms, .. } = &mut e {
            *wall_time_ms = None;
        }
        serde_json::to_value(e).ok()
    };
    let events = first_difference(
        &recorded.events,
        &fresh.events,
        |x, y| canon(x) == canon(y),
        |_, x, y| x.or(y).map(Event::step).unwrap_or(0),
    );
    let first = [steps.map(|s| (s, "selection record")), metrics.map(|s| (s, "metrics")), events.map(|s| (s, "event log"))]
        .into_iter()
        .flatten()
        .min_by_key(|(s, _)| *s);
    if let Some((step, what)) = first {
        return Err(Error::Divergence {
            step,
            detail: format!("{what} differs from the recording"),
        });
    }
    if recorded.final_portfolio != fresh.final_portfolio {
        return Err(Error::Divergence {
            step: fresh.steps_executed as u64,
            detail: "final portfolio differs from the recording".into(),
        });
    }
    Ok(fresh)
}

pub fn replay_file(path: &Path) -> Result<RunReport> {
    replay(&RunReport::load(path)?)
}
