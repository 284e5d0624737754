//! Cross-module invariants as property tests.

mod common;

use hcr::adaptive::{fit_time_trend, AdaptiveState};
use hcr::crossdeps::{pair_coeff_matrix, PanelFrame, DIAGONAL_FILL};
use hcr::estimate::{
    build_windows, estimate_coefficients, eval_joint_density, prune, CoefficientTensor,
    IndexFilter, WindowSet,
};
use hcr::eval::{coverage_curve, fit_arch01, log_likelihood_bits, ArchForm};
use hcr::marginal::{fit_epd, fit_gaussian, fit_laplace, normalize, EpdFitConfig};
use hcr::predict::{condition, condition_raw, predict_windows, Calibration};
use hcr::OrthoBasis;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn unit_series(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>().powf(1.5)).collect()
}

fn random_tensor(seed: u64, degrees: &[usize]) -> CoefficientTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let size: usize = degrees.iter().map(|m| m + 1).product();
    let mut values: Vec<f64> = (0..size).map(|_| rng.random_range(-0.2..0.2)).collect();
    values[0] = 1.0;
    CoefficientTensor::from_dense(degrees, values, 100).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn windows_count_and_shift(seed in 0u64..1000, n in 8usize..200, d in 1usize..6) {
        let x = unit_series(seed, n);
        let w = build_windows(&x, d).unwrap();
        prop_assert_eq!(w.len(), n - d + 1);
        for i in 0..w.len() - 1 {
            for k in 0..d - 1 {
                // the current value of one row is the first context value of the next
                prop_assert_eq!(w.row(i)[k], w.row(i + 1)[k + 1]);
            }
        }
    }

    #[test]
    fn zero_index_is_one(seed in 0u64..1000, n in 5usize..400, d in 1usize..4, m in 1usize..5) {
        let x = unit_series(seed, n);
        let basis = OrthoBasis::new(m).unwrap();
        let t = estimate_coefficients(&build_windows(&x, d).unwrap(), &basis, &vec![m; d], &IndexFilter::All).unwrap();
        prop_assert!((t.get(&vec![0; d]).unwrap() - 1.0).abs() <= 1e-12);
        prop_assert!(t.entries().all(|(_, v)| v.is_finite()));
    }

    #[test]
    fn leading_marginal_matches_one_dimensional_estimate(seed in 0u64..1000, n in 10usize..500, d in 2usize..4) {
        let x = unit_series(seed, n);
        let basis = OrthoBasis::new(4).unwrap();
        let w = build_windows(&x, d).unwrap();
        let full = estimate_coefficients(&w, &basis, &vec![4; d], &IndexFilter::All).unwrap();
        let first: Vec<Vec<f64>> = w.rows().map(|r| vec![r[0]]).collect();
        let one = estimate_coefficients(&WindowSet::from_rows(1, &first).unwrap(), &basis, &[4], &IndexFilter::All).unwrap();
        for j in 0..=4 {
            let mut idx = vec![0; d];
            idx[0] = j;
            prop_assert!((full.get(&idx).unwrap() - one.get(&[j]).unwrap()).abs() <= 1e-15);
        }
    }

    #[test]
    fn conditioning_is_linear_before_division(s1 in 0u64..1000, s2 in 0u64..1000, alpha in -2.0f64..2.0, beta in -2.0f64..2.0, c0 in 0.0f64..1.0, c1 in 0.0f64..1.0) {
        let degrees = [3, 2, 2];
        let basis = OrthoBasis::new(3).unwrap();
        let (t1, t2) = (random_tensor(s1, &degrees), random_tensor(s2, &degrees));
        let mix: Vec<f64> = (0..t1.layout().size()).map(|k| alpha * t1.get_linear(k) + beta * t2.get_linear(k)).collect();
        let t = CoefficientTensor::from_dense(&degrees, mix, 100).unwrap();
        let ctx = [c0, c1];
        let (r1, r2, r) = (
            condition_raw(&t1, &basis, &ctx).unwrap(),
            condition_raw(&t2, &basis, &ctx).unwrap(),
            condition_raw(&t, &basis, &ctx).unwrap(),
        );
        for k in 0..r.len() {
            prop_assert!((r[k] - (alpha * r1[k] + beta * r2[k])).abs() <= 1e-12 * (1.0 + r[k].abs()));
        }
    }

    #[test]
    fn conditional_agrees_with_joint(seed in 0u64..1000, x in 0.0f64..1.0, c0 in 0.0f64..1.0, c1 in 0.0f64..1.0) {
        let basis = OrthoBasis::new(3).unwrap();
        let t = random_tensor(seed, &[3, 3, 2]);
        let raw = condition_raw(&t, &basis, &[c0, c1]).unwrap();
        prop_assume!(raw[0] > 1e-3);
        let p = condition(&t, &basis, &[c0, c1]).unwrap();
        prop_assert_eq!(p.coeffs[0], 1.0);
        let joint = eval_joint_density(&t, &basis, &[x, c0, c1]).unwrap();
        prop_assert!((joint / raw[0] - p.raw(x)).abs() <= 1e-9 * (1.0 + p.raw(x).abs()));
    }

    #[test]
    fn calibration_is_monotone_and_floored(floor in 0.01f64..1.0, slope in 0.0f64..1.0, intercept in 0.5f64..3.0, z in -50.0f64..50.0, dz in 0.0f64..10.0) {
        for cal in [
            Calibration::Clamp { floor },
            Calibration::PiecewiseLinear { floor, slope, intercept },
            Calibration::Empirical { z: vec![-1.0, 0.5, 2.0], phi: vec![floor, floor + 0.3, floor + 1.5] },
        ] {
            cal.validate().unwrap();
            prop_assert!(cal.apply(z) >= floor);
            prop_assert!(cal.apply(z + dz) >= cal.apply(z));
        }
    }

    #[test]
    fn adaptive_matches_closed_form(seed in 0u64..1000, lambda in 0.5f64..0.9999, steps in 1usize..300) {
        let basis = OrthoBasis::new(2).unwrap();
        let x = unit_series(seed, steps + 1);
        let w = build_windows(&x, 2).unwrap();
        let mut state = AdaptiveState::new(lambda, &[2, 2]).unwrap();
        for r in w.rows() {
            state.update(&basis, r).unwrap();
        }
        for j1 in 0..=2 {
            for j2 in 0..=2 {
                let closed: f64 = w
                    .rows()
                    .enumerate()
                    .map(|(s, r)| lambda.powi((w.len() - 1 - s) as i32) * basis.eval_one(j1, r[0]) * basis.eval_one(j2, r[1]))
                    .sum::<f64>()
                    * (1.0 - lambda);
                prop_assert!((state.get(&[j1, j2]).unwrap() - closed).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn trend_of_degree_zero_is_plain_estimate(seed in 0u64..1000, n in 10usize..300) {
        let basis = OrthoBasis::new(3).unwrap();
        let w = build_windows(&unit_series(seed, n), 2).unwrap();
        let plain = estimate_coefficients(&w, &basis, &[3, 3], &IndexFilter::All).unwrap();
        let trend = fit_time_trend(&w, 0, &[3, 3], &basis, &IndexFilter::All).unwrap();
        let at = trend.at_time(0.5, &basis).unwrap();
        for (j, v) in plain.entries() {
            prop_assert_eq!(at.get(&j).unwrap(), v);
        }
    }

    #[test]
    fn equal_degree_pair_matrices_are_symmetric(seed in 0u64..1000, k in 2usize..5, j in 1usize..4) {
        let names = (0..k).map(|i| format!("s{i}")).collect();
        let series = (0..k).map(|i| unit_series(seed * 10 + i as u64, 60)).collect();
        let panel = PanelFrame::new(names, series).unwrap();
        let basis = OrthoBasis::new(3).unwrap();
        let m = pair_coeff_matrix(&panel, j, j, &basis).unwrap();
        for a in 0..k {
            prop_assert_eq!(m.get(a, a), DIAGONAL_FILL);
            for b in 0..k {
                prop_assert_eq!(m.get(a, b), m.get(b, a));
            }
        }
    }

    #[test]
    fn bits_ignore_order(seed in 0u64..1000, n in 1usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d: Vec<f64> = (0..n).map(|_| rng.random_range(0.01..5.0)).collect();
        let mut shuffled = d.clone();
        for i in (1..n).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let (a, b) = (log_likelihood_bits(&d).unwrap(), log_likelihood_bits(&shuffled).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn coverage_distance_shrinks_like_inverse_root_n() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for n in [1_000usize, 10_000, 100_000] {
        let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        let c = coverage_curve(&x).unwrap();
        // sqrt(n) D_n is below 1.95 with probability 0.999
        assert!(c.ks * (n as f64).sqrt() < 1.95, "n = {n}: ks = {}", c.ks);
        assert!(c.sorted.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(c.sorted.len(), n);
    }
}

#[test]
fn model_chain_ordering_on_heavy_tailed_data() {
    let y = common::arch_epd_series(41, 20_000, 0.9, 0.3);
    let scored = &y[1..];
    let bits = |pdf: &dyn Fn(f64) -> f64| {
        log_likelihood_bits(&scored.iter().map(|&v| pdf(v)).collect::<Vec<_>>()).unwrap()
    };
    let g = fit_gaussian(&y).unwrap();
    let l = fit_laplace(&y).unwrap();
    let e = fit_epd(&y, &EpdFitConfig::default()).unwrap();
    let gaussian = bits(&|v| g.pdf(v));
    let laplace = bits(&|v| l.pdf(v));
    let epd = bits(&|v| e.pdf(v));
    let arch = log_likelihood_bits(&fit_arch01(&y, ArchForm::Variance).unwrap().densities).unwrap();

    let x = normalize(&y, &e).x;
    let w = build_windows(&x, 2).unwrap();
    let hcr_bits = |m: usize, threshold: f64| {
        let basis = OrthoBasis::new(m).unwrap();
        let t = estimate_coefficients(&w, &basis, &[m, m], &IndexFilter::All).unwrap();
        let t = prune(&t, threshold).unwrap();
        let batch = predict_windows(&t, &basis, &w).unwrap();
        let rho = batch.calibrated_at_actual(&Calibration::default());
        log_likelihood_bits(
            &rho.iter()
                .zip(scored)
                .map(|(r, &v)| r * e.pdf(v))
                .collect::<Vec<_>>(),
        )
        .unwrap()
    };
    let hcr2 = hcr_bits(2, 0.0);
    let hcr9 = hcr_bits(9, 3.0);
    let chain = [gaussian, arch, laplace, epd, hcr2, hcr9];
    assert!(gaussian < arch && arch < laplace, "{chain:?}");
    assert!(laplace <= epd && epd <= hcr2 && hcr2 <= hcr9, "{chain:?}");
}
