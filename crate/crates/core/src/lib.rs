//! Length-aware Hessian calibration for post-training weight quantization.
//!
//! The crate estimates the input-side Hessian of a linear layer from
//! variable-length activation sequences, either token-weighted (long
//! sequences dominate) or sample-normalized (each sequence counts once),
//! and feeds it to a GPTQ-style column-wise quantizer.
//!
//! ```
//! use maca_core::{AggregationMode, HessianAccumulator, CalibrationSample, Matrix};
//! use maca_core::quant::{quantize_gptq, QuantConfig};
//!
//! let x = Matrix::from_rows(&[vec![1.0, 0.5, -1.0], vec![0.9, 0.4, -1.2]]).unwrap();
//! let mut acc = HessianAccumulator::new(AggregationMode::SampleNormalized, 2);
//! acc.update(&CalibrationSample::new(x, "doc").unwrap()).unwrap();
//! let h = acc.finalize(0.01).unwrap();
//! let w = Matrix::from_rows(&[vec![0.6, 0.55]]).unwrap();
//! let q = quantize_gptq(&w, &h, &QuantConfig::with_bits(2)).unwrap();
//! assert_eq!(q.w_hat().shape(), (1, 2));
//! ```

pub mod calib;
pub mod error;
pub mod hessian;
pub mod linalg;
pub mod metrics;
pub mod quant;
pub mod rng;

pub use calib::{ActivationSource, LengthMode, LengthSchedule, SyntheticSource, SyntheticSpec};
pub use error::{Error, Result};
pub use hessian::{AggregationMode, CalibrationSample, DampedHessian, HessianAccumulator};
pub use linalg::{cholesky, invert_spd, solve_triangular, CholeskyFactor, Matrix, Side};
pub use metrics::{recon_error, Arm, ReconRecord};
pub use quant::{quantize_gptq, quantize_rtn, QuantConfig, QuantOutcome};
