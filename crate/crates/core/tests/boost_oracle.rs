use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uxfeedback::boost::{train_binary, GBTParams, Matrix, Node};

fn soft(g: f64, a: f64) -> f64 {
    if g > a {
        g - a
    } else if g < -a {
        g + a
    } else {
        0.0
    }
}

/// Gain of sending `left` rows one way and the rest the other, computed
/// from scratch at margin 0 (p = 1/2 for every row).
fn partition_gain(y: &[bool], left: &[bool], p: &GBTParams) -> Option<f64> {
    let g = |sel: &dyn Fn(usize) -> bool| {
        (0..y.len())
            .filter(|&i| sel(i))
            .map(|i| if y[i] { -0.5 } else { 0.5 })
            .sum::<f64>()
    };
    let h = |sel: &dyn Fn(usize) -> bool| 0.25 * (0..y.len()).filter(|&i| sel(i)).count() as f64;
    let (gl, hl) = (g(&|i| left[i]), h(&|i| left[i]));
    let (gr, hr) = (g(&|i| !left[i]), h(&|i| !left[i]));
    if hl < p.min_child_weight || hr < p.min_child_weight {
        return None;
    }
    let s = |g: f64, h: f64| soft(g, p.l1_weight).powi(2) / (h + p.l2_weight);
    Some(0.5 * (s(gl, hl) + s(gr, hr) - s(gl + gr, hl + hr)) - p.min_loss_reduction)
}

/// Every distinct cut of every feature, as a left-membership mask.
fn all_cuts(rows: &[Vec<f64>]) -> Vec<Vec<bool>> {
    let d = rows[0].len();
    let mut out = Vec::new();
    for f in 0..d {
        let mut vals: Vec<f64> = rows.iter().map(|r| r[f]).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        for w in vals.windows(2) {
            out.push(rows.iter().map(|r| r[f] <= w[0]).collect());
        }
    }
    out
}

#[test]
fn depth_one_stump_matches_exhaustive_search() {
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=20);
        let d = rng.gen_range(1..=2);
        // coarse values so ties and repeated values occur
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.gen_range(0..6) as f64 * 0.5).collect())
            .collect();
        let mut y: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let p = GBTParams {
            learning_rate: 1.0,
            n_rounds: 1,
            max_depth: 1,
            l2_weight: rng.gen_range(0.0..3.0),
            l1_weight: if rng.gen_bool(0.3) {
                rng.gen_range(0.0..1.0)
            } else {
                0.0
            },
            min_child_weight: if rng.gen_bool(0.5) { 0.0 } else { 0.5 },
            ..Default::default()
        };
        let model = train_binary(&Matrix::from_rows(&rows).unwrap(), &y, &p).unwrap();
        let tree = &model.trees()[0];

        let best = all_cuts(&rows)
            .iter()
            .filter_map(|c| partition_gain(&y, c, &p))
            .fold(f64::NEG_INFINITY, f64::max);

        match tree.nodes()[0] {
            Node::Leaf { weight } => {
                assert!(
                    best <= 1e-12,
                    "seed {seed}: oracle found gain {best} but trainer made no split"
                );
                let g: f64 = y.iter().map(|&t| if t { -0.5 } else { 0.5 }).sum();
                let w = -soft(g, p.l1_weight) / (0.25 * n as f64 + p.l2_weight);
                assert!((weight - w).abs() < 1e-12, "seed {seed}");
            }
            Node::Split {
                feature, threshold, ..
            } => {
                let left: Vec<bool> = rows.iter().map(|r| r[feature] < threshold).collect();
                let gain =
                    partition_gain(&y, &left, &p).expect("trainer split respects child weight");
                assert!(
                    (gain - best).abs() < 1e-9,
                    "seed {seed}: trainer gain {gain}, oracle {best}"
                );
                assert!(gain > 0.0);
                // leaves carry the closed-form weights of their partition
                for (side, mask) in [(true, &left), (false, &left)] {
                    let g: f64 = (0..n)
                        .filter(|&i| mask[i] == side)
                        .map(|i| if y[i] { -0.5 } else { 0.5 })
                        .sum();
                    let h = 0.25 * (0..n).filter(|&i| mask[i] == side).count() as f64;
                    let w = -soft(g, p.l1_weight) / (h + p.l2_weight);
                    let row = (0..n).find(|&i| mask[i] == side).unwrap();
                    assert!((tree.predict(&rows[row]) - w).abs() < 1e-12, "seed {seed}");
                }
            }
        }
    }
}

fn random_dataset(rng: &mut ChaCha8Rng) -> (Matrix, Vec<bool>) {
    let n = rng.gen_range(20..80);
    let d = rng.gen_range(1..5);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect())
        .collect();
    let y: Vec<bool> = rows
        .iter()
        .map(|r| {
            let s: f64 = r
                .iter()
                .enumerate()
                .map(|(j, v)| if j % 2 == 0 { *v } else { -v })
                .sum();
            rng.gen_bool(1.0 / (1.0 + (-2.0 * s).exp()))
        })
        .collect();
    (Matrix::from_rows(&rows).unwrap(), y)
}

#[test]
fn training_loss_never_increases_without_gamma_or_alpha() {
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (x, mut y) = random_dataset(&mut rng);
        y[0] = !y[1];
        let p = GBTParams {
            learning_rate: rng.gen_range(0.05..=1.0),
            n_rounds: rng.gen_range(5..40),
            max_depth: rng.gen_range(1..5),
            l2_weight: rng.gen_range(0.0..3.0),
            min_child_weight: rng.gen_range(0.0..2.0),
            ..Default::default()
        };
        let m = train_binary(&x, &y, &p).unwrap();
        let curve = m.training_loss_curve().unwrap();
        let mut prev = std::f64::consts::LN_2;
        for (r, &l) in curve.iter().enumerate() {
            assert!(
                l <= prev + 1e-12,
                "seed {seed} round {r}: {prev} -> {l} ({p:?})"
            );
            prev = l;
        }
    }
}

#[test]
fn root_leaf_is_newton_step_of_the_true_loss() {
    // Constant features force a single leaf; its weight must equal
    // -L'(0) / (L''(0) + λ) with derivatives taken numerically.
    let y = [true, true, true, false, true, false, false, true, true];
    let rows = vec![vec![1.0]; y.len()];
    let lambda = 0.7;
    let p = GBTParams {
        learning_rate: 1.0,
        n_rounds: 1,
        l2_weight: lambda,
        min_child_weight: 0.0,
        ..Default::default()
    };
    let m = train_binary(&Matrix::from_rows(&rows).unwrap(), &y, &p).unwrap();
    let loss = |w: f64| -> f64 {
        y.iter()
            .map(|&t| {
                let q = 1.0 / (1.0 + (-w).exp());
                if t {
                    -q.ln()
                } else {
                    -(1.0 - q).ln()
                }
            })
            .sum()
    };
    let e = 1e-4;
    let d1 = (loss(e) - loss(-e)) / (2.0 * e);
    let d2 = (loss(e) - 2.0 * loss(0.0) + loss(-e)) / (e * e);
    let expected = -d1 / (d2 + lambda);
    let got = m.trees()[0].predict(&[1.0]);
    assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
}

#[test]
fn row_order_does_not_change_the_model() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(77 + seed);
        let (x, mut y) = random_dataset(&mut rng);
        y[0] = !y[1];
        let p = GBTParams {
            n_rounds: 15,
            max_depth: 3,
            ..Default::default()
        };
        let mut perm: Vec<usize> = (0..x.rows()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.gen_range(0..=i));
        }
        let xp = x.select_rows(&perm);
        let yp: Vec<bool> = perm.iter().map(|&i| y[i]).collect();
        let a = train_binary(&x, &y, &p).unwrap();
        let b = train_binary(&xp, &yp, &p).unwrap();
        assert_eq!(a.trees(), b.trees(), "seed {seed}");
        assert_eq!(
            a.training_loss_curve().unwrap(),
            b.training_loss_curve().unwrap()
        );
    }
}
