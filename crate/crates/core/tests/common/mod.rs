//! Builders for small synthetic datasets shared by the integration tests.
#![allow(dead_code)]

use std::sync::Arc;

use fairfolio::domain::{
    AttributeDescriptor, AttributeSchema, CategoricalDomain, Dataset, GroundTruthEntry, Instance, Label, Sensitivity,
    Value,
};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// `x` (numeric, legitimate) followed by `sensitive` binary categorical
/// attributes named `s0`, `s1`, ...
pub fn binary_schema(sensitive: usize) -> Arc<AttributeSchema> {
    let mut attrs = vec![AttributeDescriptor::numeric("x", Sensitivity::NonSensitive)];
    for k in 0..sensitive {
        let dom = CategoricalDomain::new(vec!["a".into(), "b".into()]).unwrap();
        attrs.push(AttributeDescriptor::categorical(
            &format!("s{k}"),
            dom,
            Sensitivity::ExplicitSensitive,
        ));
    }
    Arc::new(AttributeSchema::new(attrs).unwrap())
}

/// Unit losses: -1 for the desired label, +1 for the other.
pub fn unit_entry(id: u64, desired: Label) -> GroundTruthEntry {
    match desired {
        Label::Accept => GroundTruthEntry::new(id, desired, 1.0, -1.0).unwrap(),
        Label::Reject => GroundTruthEntry::new(id, desired, -1.0, 1.0).unwrap(),
    }
}

/// Rows of `(x, sensitive levels, label)` into a fully labelled dataset.
pub fn dataset(schema: &Arc<AttributeSchema>, rows: &[(f64, Vec<u32>, bool)]) -> Arc<Dataset> {
    let mut ds = Dataset::new(schema.clone());
    for (k, (x, levels, y)) in rows.iter().enumerate() {
        let id = k as u64 + 1;
        let mut values = vec![Value::Num(*x)];
        values.extend(levels.iter().map(|&l| Value::Cat(l)));
        let inst = Instance::new(schema, id, values).unwrap();
        ds.push(inst, Some(unit_entry(id, Label::from_bool(*y)))).unwrap();
    }
    Arc::new(ds)
}

/// Labels follow `x` only; the sensitive attributes are independent coin flips.
pub fn noise_sensitive(rng: &mut impl Rng, n: usize, sensitive: usize) -> Vec<(f64, Vec<u32>, bool)> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let x: f64 = normal.sample(rng);
            let levels = (0..sensitive).map(|_| rng.random_range(0..2)).collect();
            let y = x + 0.3 * normal.sample(rng) > 0.0;
            (x, levels, y)
        })
        .collect()
}

/// Labels follow the first sensitive attribute only; `x` is pure noise.
pub fn predictive_sensitive(rng: &mut impl Rng, n: usize) -> Vec<(f64, Vec<u32>, bool)> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|_| {
            let s: u32 = if rng.random_bool(0.6) { 1 } else { 0 };
            (normal.sample(rng), vec![s], s == 1)
        })
        .collect()
}

/// One legitimate feature with two tight, well separated clusters, a biased
/// sensitive attribute `s0` and an unrelated one `s1`. Qualified applicants
/// at level 1 of `s0` carry the accept label only 45% of the time.
pub fn single_proxy(rng: &mut impl Rng, n: usize) -> Vec<(f64, Vec<u32>, bool)> {
    let spread = Normal::new(0.0, 0.05).unwrap();
    (0..n)
        .map(|_| {
            let qualified = rng.random_bool(0.5);
            let x = if qualified { 2.0 } else { -2.0 } + spread.sample(rng);
            let s0: u32 = rng.random_range(0..2);
            let s1: u32 = rng.random_range(0..2);
            let y = qualified && (s0 == 0 || rng.random_bool(0.45));
            (x, vec![s0, s1], y)
        })
        .collect()
}

/// `k` numeric attributes `l0..`, and `k` rules where rule `j` accepts iff
/// `l<j> >= 0.5`. An instance therefore dictates every expert's label.
pub fn experts(k: usize) -> (Arc<AttributeSchema>, Vec<fairfolio::function::DecisionFunction>) {
    use fairfolio::function::DecisionFunction;
    use fairfolio::rule::RuleSpec;
    let attrs = (0..k)
        .map(|j| AttributeDescriptor::numeric(&format!("l{j}"), Sensitivity::NonSensitive))
        .collect();
    let schema = Arc::new(AttributeSchema::new(attrs).unwrap());
    let functions = (0..k)
        .map(|j| {
            let spec = RuleSpec::Ge {
                attr: format!("l{j}"),
                value: 0.5,
            };
            DecisionFunction::fixed_rule(format!("e{j}"), schema.clone(), &spec).unwrap()
        })
        .collect();
    (schema, functions)
}

/// Instance under which expert `j` answers `labels[j]`.
pub fn dictate(schema: &AttributeSchema, id: u64, labels: &[Label]) -> Instance {
    let values = labels.iter().map(|l| Value::Num(l.as_u8() as f64)).collect();
    Instance::new(schema, id, values).unwrap()
}

/// Play `steps` rounds against an adaptive adversary: expert labels are
/// random, and the desired label always contradicts the currently heaviest
/// expert. Every loss is +1 or -1. Returns the final realised regret and
/// the best expert's sum of absolute losses.
pub fn adversarial_regret(seed: u64, experts_n: usize, steps: usize, eta: f64) -> (f64, f64) {
    use fairfolio::selector::Portfolio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    let (schema, functions) = experts(experts_n);
    let mut p = Portfolio::new(functions, eta, 0.0).unwrap();
    let mut adversary = ChaCha8Rng::seed_from_u64(seed);
    let mut sampler = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    for t in 0..steps {
        let labels: Vec<Label> = (0..experts_n).map(|_| Label::from_bool(adversary.random_bool(0.5))).collect();
        let w = p.weights();
        let heaviest = (0..experts_n).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
        let desired = labels[heaviest].flipped();
        let inst = dictate(&schema, t as u64, &labels);
        let rec = p.select(&inst, &mut sampler).unwrap();
        p.update_weights(&rec, &unit_entry(t as u64, desired)).unwrap();
    }
    // every loss has magnitude 1, so the best expert's absolute sum is T
    (p.regret().unwrap(), steps as f64)
}

/// Uniformly random applicants over the default hiring schema.
pub fn random_applicants(rng: &mut impl Rng, schema: &AttributeSchema, n: usize) -> Vec<Instance> {
    (0..n)
        .map(|k| {
            let values = schema
                .attributes()
                .iter()
                .map(|a| match a.domain() {
                    Some(d) => Value::Cat(rng.random_range(0..d.values().len() as u32)),
                    None => Value::Num(rng.random_range(6..=22) as f64),
                })
                .collect();
            Instance::new(schema, k as u64 + 1, values).unwrap()
        })
        .collect()
}

/// A random rule over the hiring attributes; `sensitive` allows gender and
/// zip group to appear in it.
pub fn random_rule(rng: &mut impl Rng, sensitive: bool, depth: usize) -> fairfolio::rule::RuleSpec {
    use fairfolio::rule::RuleSpec;
    let cities = ["NYC", "Boston", "Chicago", "Atlanta"];
    let leaves = if sensitive { 5 } else { 3 };
    let pick = if depth == 0 { rng.random_range(0..leaves) } else { rng.random_range(0..leaves + 2) };
    match pick {
        0 => RuleSpec::Ge {
            attr: "school".into(),
            value: rng.random_range(8..=20) as f64,
        },
        1 => RuleSpec::Lt {
            attr: "school".into(),
            value: rng.random_range(8..=20) as f64,
        },
        2 => RuleSpec::Eq {
            attr: "city".into(),
            value: cities[rng.random_range(0..4)].into(),
        },
        k if k == leaves => RuleSpec::And {
            rules: vec![random_rule(rng, sensitive, depth - 1), random_rule(rng, sensitive, depth - 1)],
        },
        k if k == leaves + 1 => RuleSpec::Or {
            rules: vec![random_rule(rng, sensitive, depth - 1), random_rule(rng, sensitive, depth - 1)],
        },
        3 => RuleSpec::Eq {
            attr: "gender".into(),
            value: if rng.random_bool(0.5) { "M" } else { "F" }.into(),
        },
        _ => RuleSpec::InGroup {
            attr: "zip".into(),
            group: if rng.random_bool(0.5) { "A" } else { "B" }.into(),
        },
    }
}

/// Acceptance counts per group by two plain passes over the rows: first
/// find every row's group by rendered value, then tally. `group_of` maps a
/// rendered value to its group name.
pub fn brute_force_parity(
    f: &fairfolio::function::DecisionFunction,
    schema: &AttributeSchema,
    rows: &[Instance],
    attr: usize,
    group_of: &dyn Fn(&str) -> String,
    min_support: usize,
) -> (std::collections::BTreeMap<String, (usize, usize)>, Option<f64>) {
    use std::collections::BTreeMap;
    let groups: Vec<String> = rows.iter().map(|r| group_of(&schema.render(attr, r.values[attr]))).collect();
    let mut counts: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for (r, g) in rows.iter().zip(&groups) {
        let c = counts.entry(g.clone()).or_default();
        c.1 += 1;
        if f.evaluate(r).unwrap() == Label::Accept {
            c.0 += 1;
        }
    }
    let rates: Vec<f64> = counts
        .values()
        .filter(|(_, n)| *n >= min_support)
        .map(|(a, n)| *a as f64 / *n as f64)
        .collect();
    let gap = match rates.len() {
        0 => None,
        _ => Some(rates.iter().cloned().fold(f64::MIN, f64::max) - rates.iter().cloned().fold(f64::MAX, f64::min)),
    };
    (counts, gap)
}

/// Zip code -> group under the default scenario.
pub fn default_zip_group(zip: &str) -> String {
    fairfolio::scenario::ScenarioConfig::default()
        .zip_table()
        .into_iter()
        .find(|(z, _)| z == zip)
        .map(|(_, g)| g)
        .unwrap()
}

/// Online run over the zip-biased hiring scenario with the default portfolio.
pub fn biased_run(seed: u64, steps: usize, enhancement: bool) -> fairfolio::harness::RunConfig {
    use fairfolio::harness::RunConfig;
    use fairfolio::scenario::ScenarioConfig;
    let mut cfg = RunConfig {
        steps,
        seed,
        scenario: ScenarioConfig {
            population: steps,
            latent_bias: 2.0,
            rho: 0.9,
            ..Default::default()
        },
        ..Default::default()
    };
    cfg.enhancement.enabled = enhancement;
    cfg
}
