//! Hiring scenario: the applicant schema, the four-row reference fixture,
//! and a seeded population generator with injectable label bias.
//!
//! The generator draws a latent group per applicant that never appears in
//! the data; it only influences the ZIP code (with strength `rho`) and, via
//! `latent_bias`, the historical labels. Ground truth depends on merit only.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{
    AttributeDescriptor, AttributeSchema, CategoricalDomain, Dataset, GroundTruthEntry, Instance, Label,
    Sensitivity, Value,
};
use crate::enhance::train_margin;
use crate::error::{Error, Result};
use crate::function::DecisionFunction;
use crate::par::{self, Exec};
use crate::rule::RuleSpec;

pub const GENDER: &str = "gender";
pub const SCHOOL: &str = "school";
pub const CITY: &str = "city";
pub const ZIP: &str = "zip";

/// Rows generated per independent RNG stream.
const BLOCK: usize = 512;
/// Stream offset separating the training history from the online stream.
const HISTORY_SEED_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeritModel {
    pub school_mean: f64,
    pub school_sd: f64,
    pub school_min: f64,
    pub school_max: f64,
    /// Merit is `sigmoid((school - center) / scale) + noise`.
    pub center: f64,
    pub scale: f64,
    pub noise_sd: f64,
    /// Ground truth accepts iff merit >= threshold.
    pub threshold: f64,
    /// Slope of the historical-label log-odds in merit.
    pub label_sharpness: f64,
}

impl Default for MeritModel {
    fn default() -> Self {
        MeritModel {
            school_mean: 14.0,
            school_sd: 3.0,
            school_min: 6.0,
            school_max: 22.0,
            // between two whole school years, so the true threshold does
            // not split a year's applicants
            center: 13.5,
            scale: 2.0,
            noise_sd: 0.05,
            threshold: 0.5,
            label_sharpness: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub population: usize,
    pub seed: u64,
    pub female_share: f64,
    pub cities: Vec<String>,
    /// ZIP prefix -> latent group.
    pub zip_groups: BTreeMap<String, String>,
    /// Distinct ZIP codes generated under each prefix.
    pub zips_per_prefix: usize,
    /// Probability that an applicant's ZIP prefix is drawn from their own
    /// latent group rather than uniformly.
    pub rho: f64,
    /// Log-odds penalty on historical labels of the disfavored gender.
    pub gender_bias: f64,
    /// Log-odds penalty on historical labels of the disfavored latent group.
    pub latent_bias: f64,
    pub disfavored_gender: String,
    pub disfavored_group: String,
    pub merit: MeritModel,
    /// Size of the historical sample learned portfolio members train on.
    pub history_size: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let zip_groups = [("101", "A"), ("021", "A"), ("606", "B"), ("303", "B")]
            .into_iter()
            .map(|(p, g)| (p.to_string(), g.to_string()))
            .collect();
        ScenarioConfig {
            population: 5000,
            seed: 0,
            female_share: 0.5,
            cities: ["NYC", "Boston", "Chicago", "Atlanta"].map(String::from).to_vec(),
            zip_groups,
            zips_per_prefix: 5,
            rho: 0.9,
            gender_bias: 0.0,
            latent_bias: 0.0,
            disfavored_gender: "F".into(),
            disfavored_group: "B".into(),
            merit: MeritModel::default(),
            history_size: 2000,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("scenario: {m}")));
        if self.population == 0 {
            return bad("population must be >= 1".into());
        }
        for (name, p) in [("female_share", self.female_share), ("rho", self.rho)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must be in [0, 1], got {p}"));
            }
        }
        if self.cities.is_empty() {
            return bad("at least one city is required".into());
        }
        if self.zip_groups.is_empty() || self.zips_per_prefix == 0 || self.zips_per_prefix > 100 {
            return bad("zip_groups must be nonempty and zips_per_prefix in 1..=100".into());
        }
        if !["M", "F"].contains(&self.disfavored_gender.as_str()) {
            return bad("disfavored_gender must be M or F".into());
        }
        if !self.zip_groups.values().any(|g| *g == self.disfavored_group) {
            return bad(format!("disfavored_group `{}` has no ZIP prefix", self.disfavored_group));
        }
        for (name, v) in [("gender_bias", self.gender_bias), ("latent_bias", self.latent_bias)] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite"));
            }
        }
        let m = &self.merit;
        if !(m.school_sd >= 0.0 && m.scale > 0.0 && m.noise_sd >= 0.0 && m.school_min <= m.school_max) {
            return bad("merit model parameters out of range".into());
        }
        if self.history_size == 0 {
            return bad("history_size must be >= 1".into());
        }
        Ok(())
    }

    pub fn latent_groups(&self) -> Vec<String> {
        self.zip_groups
            .values()
            .cloned()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Every ZIP the generator can emit with its group, in schema order.
    pub fn zip_table(&self) -> Vec<(String, String)> {
        self.zip_groups
            .iter()
            .flat_map(|(prefix, group)| {
                (0..self.zips_per_prefix).map(move |k| (format!("{prefix}{k:02}"), group.clone()))
            })
            .collect()
    }

    pub fn schema(&self) -> Result<Arc<AttributeSchema>> {
        hiring_schema(&self.cities, &self.zip_table())
    }
}

/// `gender` (explicit sensitive), `school` (years), `city` of the degree, and
/// `zip` (implicit sensitive, grouped by `zips`).
pub fn hiring_schema(cities: &[String], zips: &[(String, String)]) -> Result<Arc<AttributeSchema>> {
    let gender = CategoricalDomain::new(vec!["M".into(), "F".into()])?;
    let city = CategoricalDomain::new(cities.to_vec())?;
    let (zip_values, groups): (Vec<String>, Vec<String>) = zips.iter().cloned().unzip();
    let zip = CategoricalDomain::new(zip_values)?.with_groups(&groups)?;
    Ok(Arc::new(AttributeSchema::new(vec![
        AttributeDescriptor::categorical(GENDER, gender, Sensitivity::ExplicitSensitive),
        AttributeDescriptor::numeric(SCHOOL, Sensitivity::NonSensitive),
        AttributeDescriptor::categorical(CITY, city, Sensitivity::NonSensitive),
        AttributeDescriptor::categorical(ZIP, zip, Sensitivity::ImplicitSensitive),
    ])?))
}

/// Group of a fixture ZIP under the default prefix map.
fn default_group_of(zip: &str) -> String {
    let cfg = ScenarioConfig::default();
    cfg.zip_groups
        .iter()
        .find(|(p, _)| zip.starts_with(p.as_str()))
        .map_or_else(|| zip.to_string(), |(_, g)| g.clone())
}

/// The four reference applicants with their desired labels and losses.
pub fn hiring_fixture() -> Dataset {
    let rows: [(u64, &str, &str, &str, &str, Label, f64, f64); 4] = [
        (1, "M", "15", "NYC", "10118", Label::Reject, -1.00, 1.00),
        (2, "F", "15", "Boston", "02110", Label::Accept, 0.25, -0.25),
        (3, "F", "19", "Chicago", "60603", Label::Accept, 0.50, -0.50),
        (4, "M", "10", "Atlanta", "30302", Label::Reject, -1.00, 1.00),
    ];
    let zips: Vec<(String, String)> = rows
        .iter()
        .map(|r| (r.4.to_string(), default_group_of(r.4)))
        .collect();
    let schema = hiring_schema(&ScenarioConfig::default().cities, &zips).expect("fixture schema");
    let mut ds = Dataset::new(schema.clone());
    for (id, g, s, c, z, desired, l0, l1) in rows {
        let inst = schema.parse_instance(id, &[g, s, c, z]).expect("fixture row");
        let truth = GroundTruthEntry::new(id, desired, l0, l1).expect("fixture truth");
        ds.push(inst, Some(truth)).expect("fixture push");
    }
    ds
}

/// The decision function whose outputs are listed next to the fixture
/// (Yes, Yes, No, Yes): accept unless the degree is from Chicago.
pub fn fixture_function(schema: Arc<AttributeSchema>) -> Result<DecisionFunction> {
    let spec = RuleSpec::Or {
        rules: ["NYC", "Boston", "Atlanta"]
            .iter()
            .map(|c| RuleSpec::Eq {
                attr: CITY.into(),
                value: c.to_string(),
            })
            .collect(),
    };
    DecisionFunction::fixed_rule("reference_rule", schema, &spec)
}

/// Generated applicants: ground truth, biased historical labels, and the
/// hidden latent group of each row (never part of the instance).
#[derive(Clone, Debug)]
pub struct Population {
    pub truth: Dataset,
    pub history: Dataset,
    pub latent: Vec<String>,
    pub merit: Vec<f64>,
}

struct Draw {
    gender: u32,
    school: f64,
    city: u32,
    zip: u32,
    latent: usize,
    merit: f64,
    historical: Label,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn entry_for(id: u64, desired: Label, merit: f64, threshold: f64) -> GroundTruthEntry {
    let magnitude = (2.0 * (merit - threshold).abs()).clamp(0.1, 1.0);
    let (l0, l1) = match desired {
        Label::Accept => (magnitude, -magnitude),
        Label::Reject => (-magnitude, magnitude),
    };
    GroundTruthEntry::new(id, desired, l0, l1).expect("generated losses satisfy the sign convention")
}

pub fn generate_population(cfg: &ScenarioConfig) -> Result<Population> {
    generate_population_with(Exec::default(), cfg)
}

/// Generate `cfg.population` applicants. Blocks of rows use independent
/// ChaCha streams, so the output does not depend on `exec`.
pub fn generate_population_with(exec: Exec, cfg: &ScenarioConfig) -> Result<Population> {
    cfg.validate()?;
    let schema = cfg.schema()?;
    let groups = cfg.latent_groups();
    let zips = cfg.zip_table();
    let prefixes: Vec<(&String, usize)> = cfg
        .zip_groups
        .iter()
        .map(|(p, g)| (p, groups.iter().position(|x| x == g).expect("group listed")))
        .collect();
    let disfavored = groups
        .iter()
        .position(|g| *g == cfg.disfavored_group)
        .expect("validated");
    let disfavored_gender = if cfg.disfavored_gender == "M" { 0 } else { 1 };
    let m = &cfg.merit;
    let school_dist = Normal::new(m.school_mean, m.school_sd).map_err(|e| Error::Config(e.to_string()))?;
    let noise = Normal::new(0.0, m.noise_sd).map_err(|e| Error::Config(e.to_string()))?;

    let n = cfg.population;
    let blocks = n.div_ceil(BLOCK);
    let drawn: Vec<Vec<Draw>> = par::map_range(exec, blocks, |b| {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(b as u64 + 1);
        let len = BLOCK.min(n - b * BLOCK);
        (0..len)
            .map(|_| {
                let gender = u32::from(rng.random_bool(cfg.female_share));
                let school = school_dist
                    .sample(&mut rng)
                    .round()
                    .clamp(m.school_min, m.school_max);
                let city = rng.random_range(0..cfg.cities.len()) as u32;
                let latent = rng.random_range(0..groups.len());
                let own: Vec<usize> = (0..prefixes.len()).filter(|&k| prefixes[k].1 == latent).collect();
                let prefix = if rng.random_bool(cfg.rho) && !own.is_empty() {
                    own[rng.random_range(0..own.len())]
                } else {
                    rng.random_range(0..prefixes.len())
                };
                let zip = (prefix * cfg.zips_per_prefix + rng.random_range(0..cfg.zips_per_prefix)) as u32;
                let merit = sigmoid((school - m.center) / m.scale) + noise.sample(&mut rng);
                let log_odds = m.label_sharpness * (merit - m.threshold)
                    - cfg.gender_bias * f64::from(u8::from(gender == disfavored_gender))
                    - cfg.latent_bias * f64::from(u8::from(latent == disfavored));
                let historical = Label::from_bool(rng.random_bool(sigmoid(log_odds)));
                Draw {
                    gender,
                    school,
                    city,
                    zip,
                    latent,
                    merit,
                    historical,
                }
            })
            .collect()
    });

    // ids are a random permutation so they carry no arrival-order signal
    let mut ids: Vec<u64> = (1..=n as u64).collect();
    let mut id_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    ids.shuffle(&mut id_rng);

    let mut truth = Dataset::new(schema.clone());
    let mut history = Dataset::new(schema.clone());
    let mut latent = Vec::with_capacity(n);
    let mut merit = Vec::with_capacity(n);
    debug_assert_eq!(zips.len(), cfg.zip_groups.len() * cfg.zips_per_prefix);
    for (d, id) in drawn.into_iter().flatten().zip(ids) {
        let inst = Instance {
            id,
            values: vec![
                Value::Cat(d.gender),
                Value::Num(d.school),
                Value::Cat(d.city),
                Value::Cat(d.zip),
            ],
        };
        let desired = Label::from_bool(d.merit >= m.threshold);
        truth.push(inst.clone(), Some(entry_for(id, desired, d.merit, m.threshold)))?;
        history.push(inst, Some(entry_for(id, d.historical, d.merit, m.threshold)))?;
        latent.push(groups[d.latent].clone());
        merit.push(d.merit);
    }
    Ok(Population {
        truth,
        history,
        latent,
        merit,
    })
}

/// Ids of historical rows start here, so they never collide with the ids
/// of the online stream.
pub const HISTORY_ID_BASE: u64 = 1 << 32;

/// Historical sample used to train the learned members of the default
/// portfolio; drawn from a seed disjoint from the online stream.
pub fn training_history(cfg: &ScenarioConfig) -> Result<Dataset> {
    let hist_cfg = ScenarioConfig {
        population: cfg.history_size,
        seed: cfg.seed ^ HISTORY_SEED_SALT,
        ..cfg.clone()
    };
    let raw = generate_population(&hist_cfg)?.history;
    let mut out = Dataset::new(raw.schema().clone());
    for (i, t) in raw.labeled() {
        let id = HISTORY_ID_BASE + i.id;
        let inst = Instance {
            id,
            values: i.values.clone(),
        };
        out.push(inst, Some(GroundTruthEntry { instance_id: id, ..*t }))?;
    }
    Ok(out)
}

pub const DEFAULT_REG: f64 = 1e-3;

/// School-years rule, a gender-discriminatory rule, a black box and a margin
/// classifier, both learned from biased historical labels.
pub fn default_portfolio(cfg: &ScenarioConfig) -> Result<Vec<DecisionFunction>> {
    default_portfolio_on(Arc::new(training_history(cfg)?))
}

/// The default portfolio with learned members trained on `history`.
pub fn default_portfolio_on(history: Arc<Dataset>) -> Result<Vec<DecisionFunction>> {
    let schema = history.schema().clone();
    let school_rule = RuleSpec::Ge {
        attr: SCHOOL.into(),
        value: 12.0,
    };
    let gender_rule = RuleSpec::And {
        rules: vec![
            RuleSpec::Eq {
                attr: GENDER.into(),
                value: "M".into(),
            },
            school_rule.clone(),
        ],
    };
    Ok(vec![
        DecisionFunction::fixed_rule("school_rule", schema.clone(), &school_rule)?,
        DecisionFunction::fixed_rule("gender_rule", schema, &gender_rule)?,
        DecisionFunction::blackbox("blackbox", history.clone(), DEFAULT_REG)?,
        train_margin("margin", history, DEFAULT_REG)?,
    ])
}
