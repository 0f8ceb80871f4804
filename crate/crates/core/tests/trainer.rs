mod common;

use common::*;
use mimax::trainer::{
    grid_search_c, loss_gradient, loss_phi, loss_phi_s, regularized_loss, stratified_split,
    train_one, train_restarts, ClassCounts,
};
use mimax::{FeatureBag, Label, Region, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_w(rng: &mut impl Rng, m: usize) -> (Vec<f64>, f64) {
    let w = (0..m).map(|_| rng.gen_range(-0.5..0.5)).collect();
    (w, rng.gen_range(-0.5..0.5))
}

#[test]
fn gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 20 {
        let bags = random_bags(&mut rng, 8, 5, 16);
        let counts = counts(&bags);
        let (w, b) = random_w(&mut rng, 16);
        let c = if rng.gen() { 0.0 } else { 0.5 };
        let (eps, weighted) = if rng.gen() { (0.01, true) } else { (0.0, false) };
        if argmax_margin(&w, b, &bags, weighted.then_some(eps)) < 1e-3 {
            continue;
        }
        let f = |w: &[f64], b: f64| regularized_loss(w, b, &bags, CLASS, counts, eps, c, weighted).unwrap();
        let (fw, fb) = finite_difference(f, &w, b, 1e-5);
        let g = loss_gradient(&w, b, &bags, CLASS, counts, eps, c, weighted).unwrap();
        for (a, e) in g.w.iter().zip(&fw) {
            assert!(relative_error(*a, *e) < 1e-4, "{a} vs {e}");
        }
        assert!(relative_error(g.b, fb) < 1e-4);
        checked += 1;
    }
}

#[test]
fn duplicating_every_bag_keeps_the_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bags = random_bags(&mut rng, 6, 4, 3);
    let (w, b) = random_w(&mut rng, 3);
    let base = loss_phi(&w, b, &bags, CLASS, counts(&bags)).unwrap();
    let mut doubled = bags.clone();
    doubled.extend(bags.iter().cloned());
    let twice = loss_phi(&w, b, &doubled, CLASS, counts(&doubled)).unwrap();
    assert!((base - twice).abs() < 1e-12);
}

#[test]
fn count_mismatch_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let bags = random_bags(&mut rng, 4, 2, 2);
    let wrong = ClassCounts::new(3, 1, CLASS).unwrap();
    assert!(loss_phi(&[0.0, 0.0], 0.0, &bags, CLASS, wrong).is_err());
}

fn instance() -> impl Strategy<Value = (Vec<FeatureBag>, Vec<f64>, f64)> {
    (any::<u64>(), 2usize..8, 1usize..6, 1usize..5).prop_map(|(seed, n, k, m)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bags = random_bags(&mut rng, n, k, m);
        let w: Vec<f64> = (0..m).map(|_| rng.gen_range(-3.0..3.0)).collect();
        (bags, w, rng.gen_range(-3.0..3.0))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn losses_are_bounded((bags, w, b) in instance(), eps in 0.0f64..1.0) {
        let c = counts(&bags);
        prop_assert!(loss_phi(&w, b, &bags, CLASS, c).unwrap().abs() <= 2.0);
        prop_assert!(loss_phi_s(&w, b, &bags, CLASS, c, eps).unwrap().abs() <= 2.0);
    }

    #[test]
    fn zero_parameters_give_zero_loss((bags, w, _b) in instance()) {
        let zero = vec![0.0; w.len()];
        let c = counts(&bags);
        prop_assert_eq!(loss_phi(&zero, 0.0, &bags, CLASS, c).unwrap(), 0.0);
        prop_assert_eq!(loss_phi_s(&zero, 0.0, &bags, CLASS, c, 0.01).unwrap(), 0.0);
    }

    #[test]
    fn region_order_does_not_matter((bags, w, b) in instance(), rot in 0usize..6) {
        let shuffled: Vec<FeatureBag> = bags
            .iter()
            .map(|bag| {
                let mut r: Vec<Region> = bag.regions().to_vec();
                let n = r.len();
                r.rotate_left(rot % n);
                r.reverse();
                FeatureBag::new(bag.image_id(), r, bag.labels().clone()).unwrap()
            })
            .collect();
        let c = counts(&bags);
        prop_assert_eq!(
            loss_phi_s(&w, b, &bags, CLASS, c, 0.01).unwrap(),
            loss_phi_s(&w, b, &shuffled, CLASS, c, 0.01).unwrap()
        );
        prop_assert_eq!(
            loss_phi(&w, b, &bags, CLASS, c).unwrap(),
            loss_phi(&w, b, &shuffled, CLASS, c).unwrap()
        );
    }

    #[test]
    fn unit_objectness_reduces_weighted_to_plain((bags, w, b) in instance()) {
        let ones: Vec<FeatureBag> = bags
            .iter()
            .map(|bag| {
                let r = bag
                    .regions()
                    .iter()
                    .map(|r| Region::new(*r.bbox(), 1.0, r.feature().to_vec()).unwrap())
                    .collect();
                FeatureBag::new(bag.image_id(), r, bag.labels().clone()).unwrap()
            })
            .collect();
        let c = counts(&bags);
        let plain = loss_phi(&w, b, &ones, CLASS, c).unwrap();
        let weighted = loss_phi_s(&w, b, &ones, CLASS, c, 0.0).unwrap();
        prop_assert!((plain - weighted).abs() <= 1e-12);
    }

    #[test]
    fn replicating_negatives_keeps_the_loss((bags, w, b) in instance(), times in 2usize..4) {
        let mut rep = bags.clone();
        for bag in bags.iter().filter(|b| b.label(CLASS) == Some(Label::Negative)) {
            for _ in 1..times {
                rep.push(bag.clone());
            }
        }
        let base = loss_phi_s(&w, b, &bags, CLASS, counts(&bags), 0.01).unwrap();
        let more = loss_phi_s(&w, b, &rep, CLASS, counts(&rep), 0.01).unwrap();
        prop_assert!((base - more).abs() <= 1e-12);
    }

    #[test]
    fn stratified_split_partitions(n_pos in 1usize..30, n_neg in 1usize..30, frac in 0.05f64..0.95, seed in any::<u64>()) {
        let labels: Vec<Label> = (0..n_pos + n_neg).map(|i| Label::from_bool(i < n_pos)).collect();
        let (tr, va) = stratified_split(&labels, frac, seed);
        let mut all: Vec<usize> = tr.iter().chain(&va).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        let val_pos = va.iter().filter(|&&i| labels[i].is_positive()).count();
        prop_assert_eq!(val_pos, (frac * n_pos as f64).round() as usize);
    }
}

fn small_config() -> TrainConfig {
    TrainConfig {
        iterations: 40,
        batch_size: 16,
        restarts: 4,
        seed: 9,
        ..TrainConfig::default()
    }
}

#[test]
fn chosen_restart_has_minimal_data_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let bags = random_bags(&mut rng, 40, 4, 6);
    let cfg = small_config();
    let (scorer, rec) = train_restarts(&bags, CLASS, &cfg, 0.1).unwrap();
    let min = rec.restarts.iter().map(|r| r.data_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(scorer.final_loss(), min);
    assert_eq!(rec.restarts[rec.chosen_restart].data_loss, min);
    assert_eq!(scorer.seed_used(), rec.restarts[rec.chosen_restart].seed);
    let recomputed = loss_phi_s(scorer.w(), scorer.b(), &bags, CLASS, counts(&bags), cfg.epsilon).unwrap();
    assert!((recomputed - min).abs() < 1e-9);
}

#[test]
fn fused_restarts_follow_the_single_restart_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bags = random_bags(&mut rng, 40, 4, 6);
    let cfg = small_config();
    let (_, rec) = train_restarts(&bags, CLASS, &cfg, 0.0).unwrap();
    for (r, outcome) in rec.restarts.iter().enumerate() {
        let alone = train_one(&bags, CLASS, &cfg, 0.0, cfg.seed + r as u64).unwrap();
        assert_eq!(alone.final_loss(), outcome.data_loss);
    }
}

#[test]
fn singleton_grid_equals_restarts_on_the_train_split() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bags = random_bags(&mut rng, 50, 4, 6);
    let cfg = TrainConfig {
        c_grid: Some(vec![0.5]),
        ..small_config()
    };
    let (grid, rec) = grid_search_c(&bags, CLASS, &cfg).unwrap();
    let labels: Vec<Label> = bags.iter().map(|b| b.label(CLASS).unwrap()).collect();
    let (train, _) = stratified_split(&labels, cfg.val_fraction, cfg.seed);
    let train_bags: Vec<FeatureBag> = train.iter().map(|&i| bags[i].clone()).collect();
    let (plain, prec) = train_restarts(&train_bags, CLASS, &cfg, 0.5).unwrap();
    assert_eq!(grid.w(), plain.w());
    assert_eq!(grid.b(), plain.b());
    assert_eq!(rec.chosen_restart, prec.chosen_restart);
    assert_eq!(rec.chosen_c, Some(0.5));
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bags = random_bags(&mut rng, 30, 3, 4);
    let cfg = small_config();
    let a = train_restarts(&bags, CLASS, &cfg, 0.0).unwrap();
    let b = train_restarts(&bags, CLASS, &cfg, 0.0).unwrap();
    assert_eq!(a, b);
}
