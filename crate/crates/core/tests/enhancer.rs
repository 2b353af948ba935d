mod common;

use std::sync::Arc;

use common::{binary_schema, dataset, noise_sensitive, predictive_sensitive, single_proxy, unit_entry};
use fairfolio::audit::AuditConfig;
use fairfolio::domain::{Dataset, Instance, Label, Value};
use fairfolio::enhance::cuts::{constraint_violation, FairnessConstraint};
use fairfolio::enhance::encoding::FeatureEncoding;
use fairfolio::enhance::solver::{LinearCut, Problem, SolverOptions};
use fairfolio::enhance::{
    enhance, enhance_blackbox, enhance_margin, retrain_blackbox, train_constrained, train_margin, EnhanceConfig,
    EnhancementStatus,
};
use fairfolio::function::{accuracy_on, DecisionFunction};
use fairfolio::rule::RuleSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest |cov(cell indicator, margin)| over the joint cells of `attrs`,
/// computed directly from its definition.
fn covariance_oracle(f: &DecisionFunction, rows: &[Instance], attrs: &[usize]) -> f64 {
    let m = f.as_margin().unwrap();
    let margins: Vec<f64> = rows.iter().map(|r| m.margin(f.schema(), r)).collect();
    let n = rows.len() as f64;
    let mean_m = margins.iter().sum::<f64>() / n;
    let key = |r: &Instance| attrs.iter().map(|&a| r.values[a]).map(|v| format!("{v:?}")).collect::<Vec<_>>();
    let mut cells: Vec<Vec<String>> = rows.iter().map(key).collect();
    cells.sort();
    cells.dedup();
    cells
        .iter()
        .map(|cell| {
            let z: Vec<f64> = rows.iter().map(|r| if key(r) == *cell { 1.0 } else { 0.0 }).collect();
            let mean_z = z.iter().sum::<f64>() / n;
            let e_zm = z.iter().zip(&margins).map(|(a, b)| a * b).sum::<f64>() / n;
            (e_zm - mean_z * mean_m).abs()
        })
        .fold(0.0, f64::max)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn analytic_gradient_matches_finite_differences() {
    let mut r = rng(2);
    for point in 0..100 {
        let (n, d) = (r.random_range(5..40), r.random_range(1..6));
        let x: Vec<f64> = (0..n * d).map(|_| r.random_range(-2.0..2.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { 0.0 }).collect();
        let cuts: Vec<LinearCut> = (0..r.random_range(0..3))
            .map(|k| LinearCut {
                a: (0..d).map(|_| r.random_range(-1.0..1.0)).collect(),
                bound: r.random_range(0.0..0.2),
                origin: k,
            })
            .collect();
        let reg = r.random_range(0.0..0.1);
        let p = Problem::new(&x, &y, d, reg, &cuts);
        let theta: Vec<f64> = (0..p.dim()).map(|_| r.random_range(-3.0..3.0)).collect();
        let mu = 10f64.powf(r.random_range(0.0..4.0));
        let g = p.gradient(&theta, mu);
        let h = 1e-5;
        for j in 0..p.dim() {
            let mut up = theta.clone();
            let mut dn = theta.clone();
            up[j] += h;
            dn[j] -= h;
            let fd = (p.objective(&up, mu) - p.objective(&dn, mu)) / (2.0 * h);
            let scale = g[j].abs().max(fd.abs()).max(1.0);
            assert!((g[j] - fd).abs() / scale < 1e-4, "point {point} coord {j}: {} vs {fd}", g[j]);
        }
    }
}

#[test]
fn violation_matches_covariance_oracle() {
    let schema = binary_schema(2);
    let data = dataset(&schema, &single_proxy(&mut rng(5), 400));
    let f = train_margin("m", data.clone(), 1e-3).unwrap();
    for attrs in [vec![1], vec![2], vec![1, 2]] {
        let v = constraint_violation(&f, data.instances(), &attrs).unwrap();
        let want = covariance_oracle(&f, data.instances(), &attrs);
        assert!((v.value - want).abs() < 1e-12, "{attrs:?}: {} vs {want}", v.value);
        assert!(!v.degenerate);
    }
}

fn encoding_of(data: &Dataset) -> FeatureEncoding {
    FeatureEncoding::fit(data.schema(), data.instances()).unwrap()
}

#[test]
fn zero_bound_on_a_noise_attribute_costs_little_accuracy() {
    let schema = binary_schema(1);
    let data = dataset(&schema, &noise_sensitive(&mut rng(7), 2000, 1));
    let enc = encoding_of(&data);
    let opts = SolverOptions::default();
    let free = train_constrained("free", data.clone(), &enc, &[], 1e-3, &opts).unwrap();
    let c = FairnessConstraint::new(&schema, &[1], 0.0).unwrap();
    let tied = train_constrained("tied", data.clone(), &enc, &[c], 1e-3, &opts).unwrap();
    let (a, b) = (accuracy_on(&free, &data).unwrap(), accuracy_on(&tied, &data).unwrap());
    assert!((a - b).abs() <= 0.02, "{a} vs {b}");
}

#[test]
fn zero_bound_on_the_only_signal_leaves_the_majority_rate() {
    let schema = binary_schema(1);
    let data = dataset(&schema, &predictive_sensitive(&mut rng(9), 2000));
    let positives = data.labeled().filter(|(_, e)| e.desired == Label::Accept).count() as f64;
    let majority = (positives / data.len() as f64).max(1.0 - positives / data.len() as f64);
    let enc = encoding_of(&data);
    let opts = SolverOptions::default();
    let free = train_constrained("free", data.clone(), &enc, &[], 1e-3, &opts).unwrap();
    assert!(accuracy_on(&free, &data).unwrap() > 0.99);
    let c = FairnessConstraint::new(&schema, &[1], 0.0).unwrap();
    let tied = train_constrained("tied", data.clone(), &enc, &[c], 1e-3, &opts).unwrap();
    let acc = accuracy_on(&tied, &data).unwrap();
    assert!((acc - majority).abs() <= 0.05, "{acc} vs majority {majority}");
}

#[test]
fn single_proxy_needs_exactly_one_cut() {
    let schema = binary_schema(2);
    let data = dataset(&schema, &single_proxy(&mut rng(1), 1000));
    let f = train_margin("m", data.clone(), 1e-3).unwrap();
    let audit = AuditConfig::default();
    let before = fairfolio::audit::audit_function(&f, data.instances(), &audit).unwrap();
    assert!(before.unfair, "the unconstrained model should discriminate");
    let out = enhance_margin(&f, data.clone(), &audit, &EnhanceConfig::default()).unwrap();
    assert_eq!(out.status, EnhancementStatus::Enhanced, "{:?}", out.cause);
    assert_eq!(out.cuts.len(), 1);
    assert_eq!(out.cuts[0].attributes, ["s0"]);
    let report = out.final_audit.as_ref().unwrap();
    assert!(!report.unfair);
    for p in &report.parity {
        assert!(p.gap.unwrap() < 0.1, "{}: {:?}", p.attribute, p.gap);
    }
    assert!(out.accuracy.unwrap() >= 0.6);
}

#[test]
fn enhanced_functions_satisfy_their_constraints() {
    let schema = binary_schema(2);
    let mut checked = 0;
    for seed in 0..5 {
        let data = dataset(&schema, &single_proxy(&mut rng(100 + seed), 600));
        let f = train_margin("m", data.clone(), 1e-3).unwrap();
        let out = enhance_margin(&f, data.clone(), &AuditConfig::default(), &EnhanceConfig::default()).unwrap();
        let Some(g) = out.function.as_ref() else { continue };
        for c in g.as_margin().unwrap().constraints() {
            let attrs = c.indices(&schema).unwrap();
            let cov = covariance_oracle(g, data.instances(), &attrs);
            assert!(cov <= c.bound + 1e-4, "seed {seed}: {cov} > {}", c.bound);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn adding_a_constraint_never_lowers_the_training_loss() {
    let schema = binary_schema(2);
    let data = dataset(&schema, &single_proxy(&mut rng(3), 500));
    let enc = encoding_of(&data);
    let opts = SolverOptions::default();
    let loss = |cs: &[FairnessConstraint]| {
        let f = train_constrained("m", data.clone(), &enc, cs, 1e-3, &opts).unwrap();
        f.as_margin().unwrap().training_loss()
    };
    let c1 = FairnessConstraint::new(&schema, &[1], 0.05).unwrap();
    let c2 = FairnessConstraint::new(&schema, &[2], 0.0).unwrap();
    let c12 = FairnessConstraint::new(&schema, &[1, 2], 0.01).unwrap();
    let l0 = loss(&[]);
    let l1 = loss(&[c1.clone()]);
    let l2 = loss(&[c1.clone(), c2.clone()]);
    let l3 = loss(&[c1, c2, c12]);
    assert!(l1 >= l0 - 1e-6, "{l1} < {l0}");
    assert!(l2 >= l1 - 1e-6, "{l2} < {l1}");
    assert!(l3 >= l2 - 1e-6, "{l3} < {l2}");
}

#[test]
fn accuracy_floor_turns_success_into_failure() {
    let schema = binary_schema(2);
    let data = dataset(&schema, &single_proxy(&mut rng(1), 1000));
    let f = train_margin("m", data.clone(), 1e-3).unwrap();
    let cfg = EnhanceConfig {
        accuracy_floor: 0.95,
        ..EnhanceConfig::default()
    };
    let out = enhance_margin(&f, data, &AuditConfig::default(), &cfg).unwrap();
    assert_eq!(out.status, EnhancementStatus::Failed);
    assert_eq!(out.cause.as_deref(), Some("accuracy floor breached"));
    assert!(out.function.is_none());
}

#[test]
fn fixed_rules_are_reported_and_disabled_enhancement_does_nothing() {
    let schema = binary_schema(1);
    let data = dataset(&schema, &noise_sensitive(&mut rng(0), 100, 1));
    let rule = DecisionFunction::fixed_rule("r", schema.clone(), &RuleSpec::Eq { attr: "s0".into(), value: "a".into() }).unwrap();
    let audit = AuditConfig::default();
    let out = enhance(&rule, &[], data.instances(), &data, &audit, &EnhanceConfig::default()).unwrap();
    assert_eq!(out.status, EnhancementStatus::ReportedUpstream);
    let off = EnhanceConfig {
        enabled: false,
        ..EnhanceConfig::default()
    };
    let m = train_margin("m", data.clone(), 1e-3).unwrap();
    let out = enhance(&m, &[], data.instances(), &data, &audit, &off).unwrap();
    assert_eq!(out.status, EnhancementStatus::Failed);
    assert!(out.function.is_none());
    // wrong kind for the margin path
    assert!(enhance_margin(&rule, data, &audit, &EnhanceConfig::default()).is_err());
}

/// Rows where only `x` matters, all at level `a` of `s1`.
fn base_rows(r: &mut ChaCha8Rng, n: usize) -> Vec<(f64, Vec<u32>, bool)> {
    (0..n)
        .map(|_| {
            let x: f64 = r.random_range(-2.0..2.0);
            (x, vec![r.random_range(0..2), 0], x > 0.0)
        })
        .collect()
}

#[test]
fn retraining_on_a_separable_cluster_fixes_it() {
    let schema = binary_schema(2);
    let mut r = rng(12);
    let base = dataset(&schema, &base_rows(&mut r, 200));
    let bb = DecisionFunction::blackbox("bb", base.clone(), 1e-3).unwrap();
    // twenty applicants at level `b` of s1 who deserve acceptance despite low x
    let cluster: Vec<(Instance, fairfolio::domain::GroundTruthEntry)> = (0..20)
        .map(|k| {
            let id = 10_000 + k;
            let values = vec![Value::Num(-1.0 + r.random_range(-0.3..0.3)), Value::Cat(r.random_range(0..2)), Value::Cat(1)];
            (Instance::new(&schema, id, values).unwrap(), unit_entry(id, Label::Accept))
        })
        .collect();
    let wrong_before = cluster.iter().filter(|(i, e)| bb.evaluate(i).unwrap() != e.desired).count();
    assert!(wrong_before >= 18);
    let retrained = retrain_blackbox(&bb, &base, &cluster).unwrap();
    let right_after = cluster.iter().filter(|(i, e)| retrained.evaluate(i).unwrap() == e.desired).count();
    assert!(right_after >= 18, "{right_after}/20");
    assert_eq!(retrained.training_set().unwrap().len(), 220);
}

#[test]
fn retraining_cannot_remove_bias_baked_into_the_data() {
    let schema = binary_schema(2);
    let data = dataset(&schema, &single_proxy(&mut rng(4), 800));
    let bb = DecisionFunction::blackbox("bb", data.clone(), 1e-3).unwrap();
    let mistakes: Vec<_> = data
        .labeled()
        .filter(|(i, e)| bb.evaluate(i).unwrap() != e.desired)
        .map(|(i, e)| (i.clone(), *e))
        .collect();
    assert!(!mistakes.is_empty());
    let out = enhance_blackbox(&bb, &mistakes, data.instances(), &data, &AuditConfig::default(), &EnhanceConfig::default()).unwrap();
    assert_eq!(out.status, EnhancementStatus::Failed);
    assert!(out.cause.unwrap().starts_with("still unfair"));
}

#[test]
fn blackbox_without_mistakes_is_not_retrained() {
    let schema = binary_schema(1);
    let data = dataset(&schema, &noise_sensitive(&mut rng(6), 100, 1));
    let bb = DecisionFunction::blackbox("bb", data.clone(), 1e-3).unwrap();
    let out = enhance_blackbox(&bb, &[], data.instances(), &data, &AuditConfig::default(), &EnhanceConfig::default()).unwrap();
    assert_eq!(out.status, EnhancementStatus::Failed);
}

/// Labels depend on `x` and on a random subset of the sensitive attributes.
fn mixed_rows(r: &mut ChaCha8Rng, n: usize, s: usize) -> Vec<(f64, Vec<u32>, bool)> {
    let shifts: Vec<f64> = (0..s).map(|_| r.random_range(-2.0..2.0)).collect();
    (0..n)
        .map(|_| {
            let x: f64 = r.random_range(-2.0..2.0);
            let levels: Vec<u32> = (0..s).map(|_| r.random_range(0..2)).collect();
            let z = x + levels.iter().zip(&shifts).map(|(&l, b)| l as f64 * b).sum::<f64>();
            (x, levels, z + r.random_range(-0.5..0.5) > 0.0)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn cut_loop_respects_the_subset_budget(seed in any::<u64>(), s in 1usize..=4, max_cuts in 1usize..20) {
        let mut r = rng(seed);
        let schema = binary_schema(s);
        let data = dataset(&schema, &mixed_rows(&mut r, 300, s));
        let f = train_margin("m", data.clone(), 1e-3).unwrap();
        let cfg = EnhanceConfig { max_cuts, ..EnhanceConfig::default() };
        let audit = AuditConfig { min_support: 5, ..AuditConfig::default() };
        let out = enhance_margin(&f, data, &audit, &cfg).unwrap();
        let budget = max_cuts.min((1 << s) - 1);
        prop_assert!(out.cuts.len() <= budget, "{} cuts for s = {s}", out.cuts.len());
        prop_assert!(out.iterations <= out.cuts.len() + 1);
        let mut seen: Vec<&Vec<String>> = out.cuts.iter().map(|c| &c.attributes).collect();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), out.cuts.len(), "a subset was constrained twice");
    }

    #[test]
    fn encoding_round_trips(seed in any::<u64>()) {
        let schema = binary_schema(3);
        let data = dataset(&schema, &mixed_rows(&mut rng(seed), 50, 3));
        let enc = encoding_of(&data);
        for i in data.instances() {
            let back = enc.decode(&schema, &enc.encode(&schema, i));
            prop_assert_eq!(&back[1..], &i.values[1..]);
            let (a, b) = (back[0].as_num().unwrap(), i.values[0].as_num().unwrap());
            prop_assert!((a - b).abs() < 1e-9);
        }
        // refit on the same rows reproduces the statistics
        prop_assert_eq!(encoding_of(&data), enc);
    }
}

#[test]
fn infeasible_or_empty_inputs_are_errors() {
    let schema = binary_schema(1);
    let empty = Arc::new(Dataset::new(schema.clone()));
    assert!(train_margin("m", empty, 1e-3).is_err());
    assert!(FairnessConstraint::new(&schema, &[0], 0.1).is_err());
    assert!(FairnessConstraint::new(&schema, &[], 0.1).is_err());
    assert!(FairnessConstraint::new(&schema, &[1], -0.1).is_err());
}
