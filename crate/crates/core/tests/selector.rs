mod common;

use common::{adversarial_regret, dictate, experts, unit_entry};
use fairfolio::domain::Label;
use fairfolio::selector::Portfolio;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sampling_frequencies_follow_weights() {
    let (schema, fs) = experts(4);
    let mut p = Portfolio::new(fs, 0.25, 0.0).unwrap();
    p.set_weights(&[1.0, 2.0, 3.0, 4.0]).unwrap();
    let inst = dictate(&schema, 1, &[Label::Accept; 4]);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 40_000;
    let mut hits = [0usize; 4];
    for _ in 0..n {
        let rec = p.select(&inst, &mut rng).unwrap();
        hits[rec.chosen[1..].parse::<usize>().unwrap()] += 1;
    }
    for (k, h) in hits.iter().enumerate() {
        let want = (k + 1) as f64 / 10.0;
        let sd = (want * (1.0 - want) / n as f64).sqrt();
        let got = *h as f64 / n as f64;
        assert!((got - want).abs() < 4.0 * sd, "expert {k}: {got} vs {want}");
    }
}

#[test]
fn record_carries_every_label_and_the_chosen_one() {
    let (schema, fs) = experts(3);
    let p = Portfolio::new(fs, 0.25, 0.0).unwrap();
    let labels = [Label::Accept, Label::Reject, Label::Accept];
    let inst = dictate(&schema, 9, &labels);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for _ in 0..50 {
        let rec = p.select(&inst, &mut rng).unwrap();
        assert_eq!(rec.labels, labels);
        let k = rec.members.iter().position(|m| *m == rec.chosen).unwrap();
        assert_eq!(rec.emitted, labels[k]);
        assert!(rec.probabilities[k] > 0.0);
        assert!((rec.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn consistently_worse_expert_ends_lighter() {
    let (schema, fs) = experts(2);
    let mut p = Portfolio::new(fs, 0.25, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in 0..200 {
        // e0 always right, e1 always wrong
        let inst = dictate(&schema, t, &[Label::Accept, Label::Reject]);
        let rec = p.select(&inst, &mut rng).unwrap();
        p.update_weights(&rec, &unit_entry(t, Label::Accept)).unwrap();
    }
    let w = p.weights();
    assert!(w[0] > w[1]);
    assert_eq!(p.function_loss("e0"), Some(-200.0));
    assert_eq!(p.function_loss("e1"), Some(200.0));
}

#[test]
fn pruning_keeps_one_and_reinsertion_uses_the_median() {
    let (_, fs) = experts(4);
    let mut p = Portfolio::new(fs.clone(), 0.25, 0.5).unwrap();
    p.set_weights(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    let removed: Vec<String> = p.prune().iter().map(|f| f.id().to_string()).collect();
    // lowest weight first, heaviest survives
    assert_eq!(removed, ["e0", "e1", "e2"]);
    assert_eq!(p.ids(), ["e3"]);

    let mut q = Portfolio::new(fs.clone(), 0.25, 0.0).unwrap();
    q.set_weights(&[4.0, 1.0, 2.0, 8.0]).unwrap();
    let gone = q.prune_flagged(&["e1".to_string()]);
    assert_eq!(gone.len(), 1);
    // median of {4, 2, 8}
    let w = q.reinsert(gone.into_iter().next().unwrap()).unwrap();
    assert_eq!(w, 4.0);
    assert_eq!(q.len(), 4);
    assert!(q.reinsert(fs[0].clone()).is_err());
}

#[test]
fn flagged_members_leave_regardless_of_weight() {
    let (_, fs) = experts(3);
    let mut p = Portfolio::new(fs, 0.25, 0.01).unwrap();
    p.set_weights(&[5.0, 1.0, 1.0]).unwrap();
    let gone = p.prune_flagged(&["e0".to_string()]);
    assert_eq!(gone[0].id(), "e0");
    assert_eq!(p.ids(), ["e1", "e2"]);
}

#[test]
fn bad_parameters_are_rejected() {
    let (_, fs) = experts(2);
    assert!(Portfolio::new(fs.clone(), 0.0, 0.0).is_err());
    assert!(Portfolio::new(fs.clone(), 0.6, 0.0).is_err());
    assert!(Portfolio::new(fs.clone(), 0.25, -1.0).is_err());
    assert!(Portfolio::new(vec![], 0.25, 0.0).is_err());
    let dup = vec![fs[0].clone(), fs[0].clone()];
    assert!(Portfolio::new(dup, 0.25, 0.0).is_err());
}

#[test]
fn regret_is_small_against_an_adaptive_adversary() {
    let eta = 0.25;
    let (r, abs_best) = adversarial_regret(5, 4, 2000, eta);
    assert!(r <= eta * abs_best + 4f64.ln() / eta, "regret {r}");
}

fn labels_strategy(k: usize, t: usize) -> impl Strategy<Value = Vec<(Vec<bool>, bool)>> {
    prop::collection::vec((prop::collection::vec(any::<bool>(), k), any::<bool>()), 1..=t)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distribution_is_scale_free(ws in prop::collection::vec(1e-3f64..1e3, 1..8), c in 1e-6f64..1e6) {
        let (_, fs) = experts(ws.len());
        let mut a = Portfolio::new(fs.clone(), 0.25, 0.0).unwrap();
        let mut b = Portfolio::new(fs, 0.25, 0.0).unwrap();
        a.set_weights(&ws).unwrap();
        b.set_weights(&ws.iter().map(|w| w * c).collect::<Vec<_>>()).unwrap();
        let (pa, pb) = (a.distribution().unwrap(), b.distribution().unwrap());
        prop_assert!((pa.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (x, y) in pa.iter().zip(&pb) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_stay_positive(rounds in labels_strategy(3, 30), eta in 0.01f64..=0.5) {
        let (schema, fs) = experts(3);
        let mut p = Portfolio::new(fs, eta, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (t, (labels, desired)) in rounds.iter().enumerate() {
            let ls: Vec<Label> = labels.iter().map(|&b| Label::from_bool(b)).collect();
            let rec = p.select(&dictate(&schema, t as u64, &ls), &mut rng).unwrap();
            p.update_weights(&rec, &unit_entry(t as u64, Label::from_bool(*desired))).unwrap();
        }
        let floor = 0.5f64.powi(rounds.len() as i32);
        for w in p.weights() {
            prop_assert!(w >= floor * (1.0 - 1e-12));
        }
    }

    #[test]
    fn same_seed_same_records(rounds in labels_strategy(4, 40), seed in any::<u64>()) {
        let run = || {
            let (schema, fs) = experts(4);
            let mut p = Portfolio::new(fs, 0.25, 0.0).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = Vec::new();
            for (t, (labels, desired)) in rounds.iter().enumerate() {
                let ls: Vec<Label> = labels.iter().map(|&b| Label::from_bool(b)).collect();
                let rec = p.select(&dictate(&schema, t as u64, &ls), &mut rng).unwrap();
                p.update_weights(&rec, &unit_entry(t as u64, Label::from_bool(*desired))).unwrap();
                out.push(rec);
            }
            out
        };
        prop_assert_eq!(run(), run());
    }

    #[test]
    fn framework_loss_is_the_sum_of_emitted_losses(rounds in labels_strategy(3, 40)) {
        let (schema, fs) = experts(3);
        let mut p = Portfolio::new(fs, 0.25, 0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut total = 0.0;
        for (t, (labels, desired)) in rounds.iter().enumerate() {
            let ls: Vec<Label> = labels.iter().map(|&b| Label::from_bool(b)).collect();
            let rec = p.select(&dictate(&schema, t as u64, &ls), &mut rng).unwrap();
            total += p.update_weights(&rec, &unit_entry(t as u64, Label::from_bool(*desired))).unwrap();
        }
        prop_assert_eq!(p.framework_loss(), total);
    }
}
