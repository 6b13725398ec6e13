use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uxfeedback::multilabel::stratified_kfold;

/// Random multi-label instance: `n` examples over up to eight labels with
/// label-specific rates between 2% and 50%.
fn instance(seed: u64) -> (Vec<BTreeSet<String>>, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(10..200);
    let n_labels = rng.gen_range(2..9);
    let rates: Vec<f64> = (0..n_labels).map(|_| rng.gen_range(0.02..0.5)).collect();
    let sets = (0..n)
        .map(|_| {
            rates
                .iter()
                .enumerate()
                .filter_map(|(l, &r)| rng.gen_bool(r).then(|| format!("L{l}")))
                .collect()
        })
        .collect();
    let k = rng.gen_range(2..=6);
    (sets, k)
}

fn violations(sets: &[BTreeSet<String>], folds: &[usize], k: usize) -> Vec<String> {
    let labels: BTreeSet<&String> = sets.iter().flatten().collect();
    let mut out = Vec::new();
    for l in labels {
        let f = sets.iter().filter(|s| s.contains(l)).count();
        if f < k {
            continue;
        }
        let mut per_fold = vec![0; k];
        for (s, &j) in sets.iter().zip(folds) {
            if s.contains(l) {
                per_fold[j] += 1;
            }
        }
        let (lo, hi) = (f / k, f.div_ceil(k));
        if per_fold.iter().any(|&c| c < lo || c > hi) {
            out.push(format!("{l}: f={f} k={k} folds={per_fold:?}"));
        }
    }
    out
}

#[test]
fn every_frequent_label_within_floor_and_ceiling() {
    for seed in 0..100 {
        let (sets, k) = instance(seed);
        let fa = stratified_kfold(&sets, k, seed).unwrap();
        assert_eq!(fa.folds().len(), sets.len());
        let v = violations(&sets, fa.folds(), k);
        assert!(v.is_empty(), "instance {seed}: {v:?}");
    }
}

#[test]
fn fold_sizes_stay_close() {
    for seed in 0..100 {
        let (sets, k) = instance(seed);
        let sizes = stratified_kfold(&sets, k, seed).unwrap().sizes();
        let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
        assert!(
            spread <= k.max(sets.len() / 10),
            "instance {seed}: sizes {sizes:?}"
        );
    }
}

/// No assignment of these eleven examples to four folds satisfies every
/// bound (checked exhaustively), so the result is the closest one found.
#[test]
fn unsatisfiable_instance_gets_near_miss() {
    let raw: [&[&str]; 11] = [
        &["L6", "L7"],
        &["L0", "L4", "L5", "L7"],
        &["L0", "L3", "L5"],
        &["L0", "L3", "L5", "L6"],
        &["L0", "L5", "L6"],
        &["L3", "L4", "L5"],
        &["L5"],
        &["L3", "L5", "L7"],
        &["L1", "L4", "L5", "L7"],
        &["L2", "L3", "L4", "L6"],
        &["L1", "L6"],
    ];
    let sets: Vec<BTreeSet<String>> = raw
        .iter()
        .map(|s| s.iter().map(|x| x.to_string()).collect())
        .collect();
    let fa = stratified_kfold(&sets, 4, 2290).unwrap();
    assert_eq!(fa.folds().len(), 11);
    assert_eq!(violations(&sets, fa.folds(), 4).len(), 1);
}
