use hnncb::bandit::sampling_distribution;
use hnncb::{
    aspect_ratio, create_node, dedup_bin, trials, update, validate_instance, BanditNode, CoverTree, DistanceOracle,
    HnnRouter, LinearScan, Metric, NeighborIndex, SubroutineParams, TrialId,
};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(seed: u64, n: usize) -> Metric {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random::<f64>(), rng.random::<f64>()]).collect();
    Metric::from_points(&pts, 2).unwrap()
}

/// Points in a few tight clusters, ordered by an adversarial key.
fn ordered_cloud(seed: u64, n: usize, order: u8) -> Metric {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<[f64; 2]> = (0..4).map(|_| [rng.random(), rng.random()]).collect();
    let mut pts: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let c = centres[i % 4];
            vec![c[0] + 0.01 * rng.random::<f64>(), c[1] + 0.01 * rng.random::<f64>()]
        })
        .collect();
    match order {
        0 => {}
        1 => pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap()),
        _ => pts.sort_by(|a, b| (b[0] * b[0] + b[1] * b[1]).partial_cmp(&(a[0] * a[0] + a[1] * a[1])).unwrap()),
    }
    Metric::from_points(&pts, 2).unwrap()
}

fn scan_min(inst: &Metric, members: &[TrialId], q: TrialId) -> f64 {
    members.iter().map(|&s| inst.dist(s, q)).fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 48,
        rng_seed: RngSeed::Fixed(0x5eed),
        failure_persistence: None,
        ..ProptestConfig::default()
    })]

    #[test]
    fn generated_points_satisfy_axioms(seed in any::<u64>(), n in 1usize..40) {
        let inst = cloud(seed, n);
        prop_assert!(validate_instance(&inst).is_valid());
        prop_assert!(inst.diameter() <= 1.0 + 1e-12);
    }

    #[test]
    fn aspect_ratio_is_brute_force_minimum(seed in any::<u64>(), n in 2usize..40) {
        let inst = cloud(seed, n);
        let mut best = f64::INFINITY;
        for s in trials(n) {
            for t in trials(n) {
                if s < t {
                    best = best.min(inst.dist(s, t));
                }
            }
        }
        prop_assert_eq!(aspect_ratio(&inst).unwrap().delta, best);
    }

    #[test]
    fn dedup_keeps_separated_representatives(seed in any::<u64>(), n in 1usize..60, eps in 0.01f64..0.5) {
        let inst = cloud(seed, n);
        let bins = dedup_bin(&inst, eps).unwrap();
        for (i, &s) in bins.kept.iter().enumerate() {
            for &s2 in &bins.kept[i + 1..] {
                prop_assert!(inst.dist(s, s2) >= eps);
            }
        }
        for t in trials(n) {
            let r = bins.rep(t);
            prop_assert!(bins.kept.contains(&r));
            if r != t {
                prop_assert!(inst.dist(t, r) < eps);
            }
        }
    }

    #[test]
    fn ann_queries_are_sound(seed in any::<u64>(), n in 2usize..300) {
        let inst = cloud(seed, n);
        let split = n / 2 + 1;
        let mut tree = CoverTree::new();
        let members: Vec<TrialId> = trials(split).collect();
        for &t in &members {
            tree.insert(&inst, t).unwrap();
        }
        tree.check_invariants(&inst).map_err(TestCaseError::fail)?;
        for q in trials(n).skip(split) {
            let best = scan_min(&inst, &members, q);
            for nu in [1.0, 1.5, 2.0] {
                let got = tree.query(&inst, q, nu).unwrap();
                prop_assert!(got.dist <= nu * best + 1e-12, "nu {} got {} best {}", nu, got.dist, best);
                prop_assert_eq!(got.dist, inst.dist(got.id, q));
            }
            let exact = tree.query(&inst, q, 1.0).unwrap();
            prop_assert!((exact.dist - best).abs() <= 1e-12);
        }
    }

    #[test]
    fn ann_is_deterministic(seed in any::<u64>(), n in 2usize..120) {
        let inst = cloud(seed, n);
        let build = || {
            let mut tree = CoverTree::new();
            for t in trials(n - 1) {
                tree.insert(&inst, t).unwrap();
            }
            tree
        };
        let (a, b) = (build(), build());
        let q = TrialId::new(n);
        for nu in [1.0, 1.5, 2.0] {
            prop_assert_eq!(a.query(&inst, q, nu).unwrap(), b.query(&inst, q, nu).unwrap());
        }
        prop_assert_eq!(a.distance_evals(), b.distance_evals());
    }

    #[test]
    fn within_agrees_with_reference(seed in any::<u64>(), n in 2usize..120, radius in 0.0f64..0.6) {
        let inst = cloud(seed, n);
        let mut tree = CoverTree::new();
        let mut scan = LinearScan::new();
        for t in trials(n - 1) {
            tree.insert(&inst, t).unwrap();
            scan.insert(&inst, t).unwrap();
        }
        let q = TrialId::new(n);
        let a: Vec<TrialId> = tree.within(&inst, q, radius).iter().map(|x| x.id).collect();
        let b: Vec<TrialId> = scan.within(&inst, q, radius).iter().map(|x| x.id).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn routing_invariants(seed in any::<u64>(), n in 2usize..200, nu_i in 0usize..3, order in 0u8..3) {
        let nu = [1.0, 1.5, 2.0][nu_i];
        let inst = if order == 0 { cloud(seed, n) } else { ordered_cloud(seed, n, order) };
        let mut router = HnnRouter::<f64>::new(nu).unwrap();
        let mut evals = Vec::new();
        for t in trials(n) {
            evals.push(router.route(&inst, t).unwrap().distance_evals);
        }
        let tree = router.tree().unwrap();
        prop_assert_eq!(tree.depth(TrialId::FIRST), 0);
        prop_assert_eq!(router.level_members(0), vec![TrialId::FIRST]);
        for t in trials(n).skip(1) {
            let p = tree.parent(t).unwrap();
            prop_assert_eq!(tree.depth(p) + 1, tree.depth(t));
            prop_assert!(inst.dist(t, p) <= 0.5f64.powi(tree.depth(t) as i32 - 1));
            let nearest = trials(t.idx()).map(|s| inst.dist(s, t)).fold(f64::INFINITY, f64::min);
            prop_assert!(0.5f64.powi(tree.depth(t) as i32 - 1) >= nearest);
        }
        for r in trials(n) {
            for t in trials(n) {
                if r < t && tree.depth(r) == tree.depth(t) {
                    prop_assert!(inst.dist(r, t) > 0.5f64.powi(tree.depth(t) as i32) / nu);
                }
            }
            for s in tree.descendants(r) {
                prop_assert!(inst.dist(s, r) <= 2.0 * 0.5f64.powi(tree.depth(r) as i32) + 1e-12);
            }
        }
        for level in 0..router.num_levels() as u32 {
            let want: Vec<TrialId> = trials(n).filter(|&t| tree.depth(t) == level).collect();
            prop_assert_eq!(router.level_members(level), want);
        }

        let mut again = HnnRouter::<f64>::new(nu).unwrap();
        let mut evals2 = Vec::new();
        for t in trials(n) {
            evals2.push(again.route(&inst, t).unwrap().distance_evals);
        }
        prop_assert_eq!(again.tree().unwrap(), tree);
        prop_assert_eq!(evals, evals2);
    }

    #[test]
    fn weights_stay_a_distribution(
        seed in any::<u64>(),
        k in 1usize..6,
        steps in 1usize..60,
        theta in 0.0f64..=0.5,
        gamma in 0.01f64..=1.0,
        eta in 0.001f64..5.0,
    ) {
        let params = SubroutineParams { lambda: 1.0, eta, gamma, theta };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut node = create_node(TrialId::FIRST, None, &params, k).unwrap();
        for i in 0..steps {
            let p = sampling_distribution(&node, &params);
            let a = rng.random_range(0..k);
            update(&mut node, a, rng.random(), p[a], &params).unwrap();
            if i % 3 == 0 {
                node = create_node(TrialId::new(i + 2), Some(&node), &params, k).unwrap();
            }
            let sum: f64 = node.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(node.weights.iter().all(|w| *w >= 0.0));
        }
    }

    #[test]
    fn larger_loss_means_smaller_weight(
        w0 in 0.05f64..0.95,
        a in 0usize..2,
        lo in 0.0f64..0.99,
        bump in 0.01f64..0.5,
        eta in 0.01f64..1.0,
    ) {
        let params = SubroutineParams { lambda: 1.0, eta, gamma: 0.1, theta: 0.0 };
        let node = BanditNode { trial: TrialId::FIRST, weights: vec![w0, 1.0 - w0], basis: None };
        let p = sampling_distribution(&node, &params)[a];
        let mut small = node.clone();
        let mut big = node.clone();
        update(&mut small, a, lo, p, &params).unwrap();
        update(&mut big, a, (lo + bump).min(1.0), p, &params).unwrap();
        prop_assert!(big.weights[a] < small.weights[a]);
    }
}

/// Recovers the loss estimate fed to the exponential update from the
/// change in weight ratios.
fn implied_estimate(before: &BanditNode, after: &BanditNode, a: usize, eta: f64) -> f64 {
    let o = if a == 0 { 1 } else { 0 };
    let ratio = (after.weights[a] / after.weights[o]) / (before.weights[a] / before.weights[o]);
    -ratio.ln() / eta
}

#[test]
fn importance_weighting_is_unbiased() {
    let params = SubroutineParams { lambda: 1.0, eta: 0.05, gamma: 0.2, theta: 0.0 };
    let states = [vec![0.5, 0.5], vec![0.2, 0.3, 0.5], vec![0.7, 0.1, 0.1, 0.1]];
    for w in states {
        let k = w.len();
        let node = BanditNode { trial: TrialId::FIRST, weights: w, basis: None };
        let p = sampling_distribution(&node, &params);
        let losses: Vec<f64> = (0..k).map(|a| 0.15 + 0.2 * a as f64).collect();
        for b in 0..k {
            let mut expectation = 0.0;
            for played in 0..k {
                if played != b {
                    continue;
                }
                let mut after = node.clone();
                update(&mut after, played, losses[played], p[played], &params).unwrap();
                expectation += p[played] * implied_estimate(&node, &after, played, params.eta);
            }
            assert!((expectation - losses[b]).abs() < 1e-9, "component {b}: {expectation} vs {}", losses[b]);
        }
    }
}
