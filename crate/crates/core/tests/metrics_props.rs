mod common;

use common::{gaussian, naive_recon_error};
use maca_core::calib::{LengthSchedule, SyntheticSource};
use maca_core::metrics::{
    ratio_histogram, run_ablation, sign_test_p_value, AblationPlan, BenchLayer, EvalProtocol, HistogramBins,
};
use maca_core::rng::seeded;
use maca_core::{recon_error, Arm, Matrix, QuantConfig, ReconRecord, SyntheticSpec};
use proptest::prelude::*;
use std::sync::Arc;

fn small_layers(count: usize) -> Vec<BenchLayer> {
    (0..count)
        .map(|i| {
            let spec = SyntheticSpec {
                dim: 16,
                short_channels: 8..12,
                long_channels: 0..4,
                crossover_length: 32,
                seed: i as u64,
                ..SyntheticSpec::default()
            };
            BenchLayer {
                id: format!("l{i}"),
                weights: gaussian(6, 16, &mut seeded(100 + i as u64)),
                source: Arc::new(SyntheticSource::new(spec).unwrap()),
            }
        })
        .collect()
}

fn plan(fixed: LengthSchedule, multi: LengthSchedule, bits: u32, seeds: usize) -> AblationPlan {
    AblationPlan {
        arms: Arm::ALL.to_vec(),
        fixed,
        multi,
        eval: EvalProtocol::from_length_set(&[8, 16, 32, 64], 256),
        quant: QuantConfig::with_bits(bits),
        seeds: (0..seeds as u64).collect(),
    }
}

#[test]
fn degenerate_schedules_give_identical_rows() {
    let s = LengthSchedule::fixed(32, 1024, 0);
    let report = run_ablation(
        &small_layers(2),
        &plan(s.clone(), LengthSchedule::multi(vec![32], 1024, 0), 3, 3),
    )
    .unwrap();
    let base = &report.rows[0];
    for row in &report.rows[1..] {
        assert_eq!(row.tokens_per_layer, base.tokens_per_layer);
        for (a, b) in row.per_seed.iter().zip(&base.per_seed) {
            assert!((a - b).abs() <= 1e-9 * b, "{a} vs {b}");
        }
    }
}

#[test]
fn four_bit_report_schema() {
    let report = run_ablation(
        &small_layers(2),
        &plan(
            LengthSchedule::fixed(64, 1024, 0),
            LengthSchedule::multi(vec![8, 16, 32, 64], 1024, 0),
            4,
            4,
        ),
    )
    .unwrap();
    assert_eq!(report.rows.len(), 3);
    let arms: Vec<Arm> = report.rows.iter().map(|r| r.arm).collect();
    assert_eq!(arms, Arm::ALL);
    assert!(report
        .rows
        .iter()
        .all(|r| r.bits == 4 && r.seed_count == 4 && r.per_seed.len() == 4));
    assert!(report.rows.iter().all(|r| r.tokens_per_layer == 1024));
    assert_eq!(report.ordering.as_ref().unwrap().tests.len(), 2);
}

#[test]
fn unequal_budgets_rejected() {
    let p = plan(
        LengthSchedule::fixed(64, 1024, 0),
        LengthSchedule::multi(vec![8, 64], 2048, 0),
        4,
        1,
    );
    assert!(run_ablation(&small_layers(1), &p).is_err());
}

#[test]
fn histogram_examples() {
    let ones: Vec<_> = (0..4)
        .map(|i| ReconRecord::new(format!("{i}"), None, 2.0, 2.0))
        .collect();
    let h = ratio_histogram(&ones, HistogramBins::default()).unwrap();
    assert_eq!(h.fraction_above_one, 0.0);
    assert_eq!(h.geometric_mean, 1.0);
    let pair = [
        ReconRecord::new("a", None, 2.0, 1.0),
        ReconRecord::new("b", None, 1.0, 2.0),
    ];
    let h = ratio_histogram(&pair, HistogramBins::default()).unwrap();
    assert_eq!(h.fraction_above_one, 0.5);
    assert!((h.geometric_mean - 1.0).abs() < 1e-15);
    assert!(ratio_histogram(&[], HistogramBins::default()).is_err());
}

#[test]
fn sign_test_values() {
    assert!((sign_test_p_value(20, 20) - 0.5f64.powi(20)).abs() < 1e-18);
    assert_eq!(sign_test_p_value(0, 10), 1.0);
    // P(X >= 15 | n = 20) = 21700 / 2^20.
    assert!((sign_test_p_value(15, 20) - 21700.0 / 1048576.0).abs() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recon_error_matches_naive(r in 1usize..6, c in 1usize..8, l in 1usize..10, seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let w = gaussian(r, c, &mut rng);
        let w_hat = gaussian(r, c, &mut rng);
        let x = gaussian(c, l, &mut rng);
        let fast = recon_error(&w, &w_hat, &x).unwrap();
        let slow = naive_recon_error(&w, &w_hat, &x);
        prop_assert!((fast - slow).abs() <= 1e-10 * slow.max(1e-300));
    }

    #[test]
    fn recon_error_row_permutation_and_scaling(r in 2usize..6, c in 1usize..6, seed in any::<u64>(), k in 0.1f64..10.0) {
        let mut rng = seeded(seed);
        let w = gaussian(r, c, &mut rng);
        let w_hat = gaussian(r, c, &mut rng);
        let x = gaussian(c, 7, &mut rng);
        let base = recon_error(&w, &w_hat, &x).unwrap();
        let rev = |m: &Matrix| Matrix::from_rows(&(0..r).rev().map(|i| m.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let permuted = recon_error(&rev(&w), &rev(&w_hat), &x).unwrap();
        prop_assert!((permuted - base).abs() <= 1e-12 * base);
        let delta = w.sub(&w_hat).unwrap().scale(k);
        let scaled = recon_error(&delta, &Matrix::zeros(r, c), &x).unwrap();
        prop_assert!((scaled - k * k * base).abs() <= 1e-10 * k * k * base);
    }

    #[test]
    fn histogram_partitions(ratios in prop::collection::vec(prop_oneof![1e-6f64..1e6, Just(0.0), Just(f64::INFINITY)], 1..60)) {
        let records: Vec<_> = ratios
            .iter()
            .map(|&q| {
                if q == f64::INFINITY {
                    ReconRecord::new("x", None, 1.0, 0.0)
                } else {
                    ReconRecord::new("x", None, q, 1.0)
                }
            })
            .collect();
        let h = ratio_histogram(&records, HistogramBins::default()).unwrap();
        prop_assert_eq!(h.counts.iter().sum::<usize>(), records.len());
        prop_assert_eq!(h.total, records.len());
        prop_assert_eq!(h.counts.len(), 30);
        prop_assert_eq!(h.edges.len(), 31);
    }
}
