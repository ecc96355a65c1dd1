//! Helpers shared by the integration tests.
#![allow(dead_code)]

use maca_core::rng::{seeded, Rng};
use maca_core::{CalibrationSample, Matrix};
use rand::Rng as _;
use rand_distr::StandardNormal;

pub fn gaussian(rows: usize, cols: usize, rng: &mut Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.sample(StandardNormal)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn sample(dim: usize, len: usize, rng: &mut Rng) -> CalibrationSample {
    CalibrationSample::new(gaussian(dim, len, rng), "test").unwrap()
}

pub fn random_samples(dim: usize, count: usize, max_len: usize, seed: u64) -> Vec<CalibrationSample> {
    let mut rng = seeded(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(1..=max_len);
            sample(dim, len, &mut rng)
        })
        .collect()
}

pub fn rel_frobenius(a: &Matrix, b: &Matrix) -> f64 {
    let diff = a.sub(b).unwrap().frobenius();
    let scale = b.frobenius();
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
#[allow(clippy::needless_range_loop)]
pub fn jacobi_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows();
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| m.row(i).to_vec()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let total: f64 = a.iter().flatten().map(|v| v * v).sum();
        if off <= 1e-30 * total.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Triple-loop `‖ΔW·X‖²_F`, independent of the library's matmul.
pub fn naive_recon_error(w: &Matrix, w_hat: &Matrix, x: &Matrix) -> f64 {
    let mut total = 0.0;
    for i in 0..w.rows() {
        for t in 0..x.cols() {
            let mut acc = 0.0;
            for c in 0..w.cols() {
                acc += (w[(i, c)] - w_hat[(i, c)]) * x[(c, t)];
            }
            total += acc * acc;
        }
    }
    total
}
