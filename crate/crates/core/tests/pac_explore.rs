use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sceno_core::explore::{cell_box, read_cells};
use sceno_core::pac::{outlier_filter, required_samples};
use sceno_core::verifier::ParamBox;
use sceno_core::{explore, refine, safe_region, Dataset, Exec, ExploreConfig, GridSpec, Mlp, ParamVector};

/// Smallest K with `2 (ln(1/eta) + 1) / K <= eps`, by linear scan.
fn k_by_scan(eps: f64, eta: f64) -> usize {
    let c = (1.0 / eta).ln() + 1.0;
    (1..).find(|&k| 2.0 * c / k as f64 <= eps).unwrap()
}

#[test]
fn required_samples_matches_scan_on_1000_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let eps = rng.gen_range(0.005..0.999);
        let eta = rng.gen_range(1e-6..0.999);
        assert_eq!(required_samples(eps, eta).unwrap(), k_by_scan(eps, eta), "eps {eps} eta {eta}");
    }
}

#[test]
fn required_samples_reference_values() {
    assert_eq!(required_samples(0.01, 0.001).unwrap(), 1582);
    assert_eq!(required_samples(0.05, 0.01).unwrap(), 225);
}

proptest! {
    #[test]
    fn required_samples_is_tight(eps in 0.005f64..0.999, eta in 1e-6f64..0.999) {
        let k = required_samples(eps, eta).unwrap();
        let c = (1.0 / eta).ln() + 1.0;
        prop_assert!(2.0 * c / k as f64 <= eps);
        prop_assert!(k == 1 || 2.0 * c / (k - 1) as f64 > eps);
    }

    #[test]
    fn required_samples_monotone(
        eps in 0.01f64..0.9, eta in 1e-5f64..0.9, de in 0.0f64..0.09, dn in 0.0f64..0.09,
    ) {
        let k = required_samples(eps, eta).unwrap();
        prop_assert!(required_samples(eps + de, eta).unwrap() <= k);
        prop_assert!(required_samples(eps, eta + dn).unwrap() <= k);
    }
}

fn noisy_dataset(rng: &mut ChaCha8Rng, f: &Mlp, n: usize, planted: &[usize]) -> Dataset {
    let mut thetas = Vec::new();
    let mut rhos = Vec::new();
    for i in 0..n {
        let t: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
        let noise = if planted.contains(&i) { 100.0 } else { rng.gen_range(-0.01..0.01) };
        rhos.push(f.value(&t) + noise);
        thetas.push(ParamVector::new(t).unwrap());
    }
    Dataset::new(thetas, rhos).unwrap()
}

#[test]
fn outliers_found_exactly() {
    let f = Mlp::affine(&[1.0, -2.0, 0.5], 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let planted = [3, 40, 41, 177];
    let data = noisy_dataset(&mut rng, &f, 200, &planted);
    let rep = outlier_filter(&data, &f, 10.0).unwrap();
    assert_eq!(rep.flagged_indices(), planted.to_vec());
    assert_eq!(rep.kept.len(), 200 - planted.len());
    assert!(rep.flagged.iter().all(|s| (s.residual - 100.0).abs() < 1e-9));
}

#[test]
fn outliers_invariant_under_permutation() {
    let f = Mlp::affine(&[0.2, 0.7, -1.0], 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for round in 0..20 {
        let planted: Vec<usize> = (0..round % 5).map(|_| rng.gen_range(0..120)).collect();
        let data = noisy_dataset(&mut rng, &f, 120, &planted);
        let base = outlier_filter(&data, &f, 10.0).unwrap();
        let mut perm: Vec<usize> = (0..data.len()).collect();
        perm.shuffle(&mut rng);
        let shuffled = Dataset::new(
            perm.iter().map(|&p| data.thetas()[p].clone()).collect(),
            perm.iter().map(|&p| data.rhos()[p]).collect(),
        )
        .unwrap();
        let rep = outlier_filter(&shuffled, &f, 10.0).unwrap();
        let mut mapped: Vec<usize> = rep.flagged_indices().iter().map(|&i| perm[i]).collect();
        mapped.sort_unstable();
        assert_eq!(mapped, base.flagged_indices());
        assert_eq!(rep.threshold_value, base.threshold_value);
    }
}

fn cfg(exec: Exec) -> ExploreConfig {
    ExploreConfig {
        tol: 1e-4,
        budget: 5000,
        seed: 0,
        exec,
    }
}

#[test]
fn linear_surrogate_heatmap() {
    let f = Mlp::affine(&[1.0, 0.0, 0.0], 0.0);
    let spec = GridSpec::new(0, 1, 20, 3).unwrap();
    let c = cfg(Exec::default());
    let h = explore(&f, &spec, 0.5, &c).unwrap();
    let delta = spec.delta();
    for i in 0..20 {
        for j in 0..20 {
            let ind = h.rho_indicator[i][j];
            if i as f64 * delta >= 0.5 {
                assert_eq!(ind, 0.0, "cell {i},{j}");
            } else {
                // min over the cell is i*delta
                let exact = 0.5 - i as f64 * delta;
                assert!(ind >= exact - 1e-12 && ind <= exact + c.tol, "cell {i},{j}: {ind}");
            }
        }
    }
    let expected: Vec<(usize, usize)> = (10..20).flat_map(|i| (0..20).map(move |j| (i, j))).collect();
    assert_eq!(safe_region(&h), expected);
}

fn random_net(seed: u64, m: usize) -> Mlp {
    Mlp::new(&[m, 8, 8, 1], seed).unwrap()
}

/// Empirical `q`-quantile of `f` over 2001 uniform points.
fn quantile_tau(f: &Mlp, m: usize, seed: u64, q: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..2001)
        .map(|_| f.value(&(0..m).map(|_| rng.gen()).collect::<Vec<_>>()))
        .collect();
    v.sort_by(f64::total_cmp);
    v[(q * 2000.0) as usize]
}

#[test]
fn refinement_never_raises_indicator() {
    let c = cfg(Exec::default());
    for seed in 0..4 {
        let f = random_net(seed, 3);
        let tau = quantile_tau(&f, 3, seed, 0.5);
        let coarse = explore(&f, &GridSpec::new(0, 2, 20, 3).unwrap(), tau, &c).unwrap();
        let fine = refine(&f, &coarse, &c).unwrap();
        assert_eq!(fine.spec, GridSpec::new(0, 2, 40, 3).unwrap());
        for i in 0..40 {
            for j in 0..40 {
                let child = fine.rho_indicator[i][j];
                let parent = coarse.rho_indicator[i / 2][j / 2];
                assert!(child <= parent, "seed {seed} cell {i},{j}: {child} > {parent}");
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..2000 {
            let t: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            assert!(fine.indicator_at(&t) >= tau - f.value(&t));
        }
    }
}

#[test]
fn safe_region_sound_and_indicator_conservative() {
    let c = cfg(Exec::default());
    for seed in 0..3 {
        let f = random_net(100 + seed, 4);
        let tau = quantile_tau(&f, 4, seed, 0.1);
        let h = explore(&f, &GridSpec::new(1, 3, 20, 4).unwrap(), tau, &c).unwrap();
        assert!(!safe_region(&h).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10_000 {
            let t: Vec<f64> = (0..4).map(|_| rng.gen()).collect();
            let v = f.value(&t);
            let ind = h.indicator_at(&t);
            if ind == 0.0 {
                assert!(v >= tau, "safe cell holds {t:?} with f = {v} < {tau}");
            }
            assert!(ind >= tau - v, "indicator {ind} below tau - f = {}", tau - v);
        }
    }
}

/// Minimum over a regular grid of the box, and that minimum minus `L * h / 2`.
fn grid_min(f: &Mlp, bx: &ParamBox, per_dim: usize) -> (f64, f64) {
    let (lo, hi) = (bx.lo(), bx.hi());
    let at = |d: usize, k: usize| lo[d] + (hi[d] - lo[d]) * k as f64 / (per_dim - 1) as f64;
    let mut best = f64::INFINITY;
    for a in 0..per_dim {
        for b in 0..per_dim {
            best = best.min(f.value(&[at(0, a), at(1, b)]));
        }
    }
    let h = (0..2).map(|d| (hi[d] - lo[d]) / (per_dim - 1) as f64).fold(0.0, f64::max);
    (best, best - f.lipschitz_bound() * h / 2.0)
}

#[test]
fn indicator_brackets_grid_oracle() {
    let c = cfg(Exec::default());
    for seed in 0..3 {
        let f = random_net(200 + seed, 2);
        let tau = quantile_tau(&f, 2, seed, 0.5);
        let spec = GridSpec::new(0, 1, 10, 2).unwrap();
        let h = explore(&f, &spec, tau, &c).unwrap();
        for i in 0..10 {
            for j in 0..10 {
                let (min_seen, floor) = grid_min(&f, &cell_box(&spec, i, j).unwrap(), 101);
                let ind = h.rho_indicator[i][j];
                assert!(ind >= (tau - min_seen).max(0.0), "cell {i},{j}");
                if !h.flags[i][j] {
                    assert!(ind <= (tau - floor).max(0.0) + c.tol, "cell {i},{j}");
                }
            }
        }
    }
}

#[test]
fn sequential_and_parallel_agree() {
    let f = random_net(7, 5);
    let tau = quantile_tau(&f, 5, 7, 0.5);
    let spec = GridSpec::new(0, 4, 12, 5).unwrap();
    let a = explore(&f, &spec, tau, &cfg(Exec::Sequential)).unwrap();
    let b = explore(&f, &spec, tau, &cfg(Exec::Parallel)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn csv_round_trip() {
    let f = random_net(3, 3);
    let spec = GridSpec::new(0, 1, 6, 3).unwrap();
    let h = explore(&f, &spec, 0.0, &cfg(Exec::default())).unwrap();
    let text = h.to_csv_string().unwrap();
    assert_eq!(read_cells(text.as_bytes()).unwrap(), h.rows());
}
