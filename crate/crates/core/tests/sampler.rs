mod common;

use common::oracles::{brute_force_min, random_instance};
use proptest::prelude::*;
use roofseg::dataset::{build_class_index, generate_synthetic, ClassIndex, ImbalanceProfile, SyntheticStyle};
use roofseg::sampler::{build_plan, min_batch_count, verify_plan, SchedulerConfig};
use roofseg::Error;

#[test]
fn matches_exhaustive_minimum_on_random_instances() {
    let mut rng = common::rng(2024);
    let mut infeasible = 0;
    for _ in 0..300 {
        let (index, cfg) = random_instance(&mut rng);
        let want = brute_force_min(&index, &cfg);
        match (min_batch_count(&index, &cfg), want) {
            (Ok(t), Some(w)) => {
                assert_eq!(t, w, "{index:?} B={}", cfg.batch_size);
                let plan = build_plan(&index, &cfg).unwrap();
                assert_eq!(plan.len(), t);
                let report = verify_plan(&plan, &index, &cfg);
                assert!(report.is_valid(), "{:?}", report.violations);
            }
            (Err(Error::Infeasible), None) => infeasible += 1,
            (got, want) => panic!("{index:?}: got {got:?}, expected {want:?}"),
        }
    }
    assert!(300 - infeasible >= 200, "only {} feasible instances", 300 - infeasible);
}

#[test]
fn lower_bounds_are_tight_on_crafted_instances() {
    // Filler-bound tight: 9 background samples, 2 filler slots per batch.
    let idx = ClassIndex::from_sets(vec![(10..19).collect(), vec![0], vec![1]]);
    assert_eq!(min_batch_count(&idx, &SchedulerConfig::new(4, 2, 0)).unwrap(), 5);
    // Matching bound tight: five samples that only carry class 1.
    let idx = ClassIndex::from_sets(vec![vec![], (0..5).collect(), vec![9]]);
    assert_eq!(min_batch_count(&idx, &SchedulerConfig::new(3, 2, 0)).unwrap(), 5);
}

#[test]
fn same_seed_same_plan() {
    let data = generate_synthetic(&ImbalanceProfile::rooftop_damage(), &SyntheticStyle::default(), 300, 16, 4)
        .unwrap();
    let index = build_class_index(&data.patches, 4).unwrap();
    let cfg = SchedulerConfig::new(8, 4, 7);
    let a = build_plan(&index, &cfg).unwrap();
    let b = build_plan(&index, &cfg).unwrap();
    assert_eq!(a, b);
    let other = build_plan(&index, &SchedulerConfig { seed: 8, ..cfg }).unwrap();
    assert_eq!(other.len(), a.len());
    assert_ne!(other, a);
    let ra = verify_plan(&a, &index, &cfg);
    let ro = verify_plan(&other, &index, &cfg);
    assert!(ra.is_valid() && ro.is_valid());
}

#[test]
fn background_repeats_are_balanced() {
    let data = generate_synthetic(&ImbalanceProfile::rooftop_damage(), &SyntheticStyle::default(), 400, 16, 11)
        .unwrap();
    let index = build_class_index(&data.patches, 4).unwrap();
    let cfg = SchedulerConfig::new(8, 4, 1);
    let plan = build_plan(&index, &cfg).unwrap();
    let report = verify_plan(&plan, &index, &cfg);
    assert!(report.is_valid());
    let counts: Vec<usize> = index.background().iter().map(|id| report.appearances[id]).collect();
    let (lo, hi) = (counts.iter().min().unwrap(), counts.iter().max().unwrap());
    assert!(hi - lo <= 1, "background appearances range {lo}..{hi}");
    assert!(report.oversampling.iter().all(|&f| f >= 1.0));
    // Rare classes are oversampled more than the common one.
    assert!(report.oversampling[3] > report.oversampling[0]);
}

#[test]
fn full_dataset_plan_is_fast() {
    let data = generate_synthetic(&ImbalanceProfile::rooftop_damage(), &SyntheticStyle::default(), 2000, 16, 42)
        .unwrap();
    let index = build_class_index(&data.patches, 4).unwrap();
    let cfg = SchedulerConfig::new(8, 4, 0);
    let start = std::time::Instant::now();
    let plan = build_plan(&index, &cfg).unwrap();
    let elapsed = start.elapsed();
    assert!(verify_plan(&plan, &index, &cfg).is_valid());
    assert!(elapsed.as_secs_f64() < 2.0, "plan took {elapsed:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn plans_satisfy_invariants(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let (index, cfg) = random_instance(&mut rng);
        if let Ok(t) = min_batch_count(&index, &cfg) {
            let bound = index.background().len().div_ceil(cfg.batch_size - cfg.classes);
            prop_assert!(t >= bound.max(1));
            let plan = build_plan(&index, &cfg).unwrap();
            let report = verify_plan(&plan, &index, &cfg);
            prop_assert!(report.is_valid(), "{:?}", report.violations);
            prop_assert!(plan.batches.iter().all(|b| b.len() == cfg.batch_size));
        }
    }
}
