//! Orthonormal polynomial basis on `[0, 1]`.
//!
//! `f_j(x) = sqrt(2j + 1) * P_j(2x - 1)` where `P_j` is the Legendre
//! polynomial. The shifted Legendre polynomial has integer monomial
//! coefficients `(-1)^(j+k) C(j, k) C(j + k, k)`, so the whole basis is kept
//! as exact integers plus one irrational scale per degree. Inner products are
//! evaluated in exact rational arithmetic.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{HcrError, Result};

/// Largest supported degree. Monomial-form evaluation loses too many digits
/// past this point.
pub const MAX_DEGREE: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct OrthoBasis {
    max_degree: usize,
    /// Integer monomial coefficients of the shifted Legendre polynomials,
    /// lowest power first.
    integer_coeffs: Vec<Vec<i64>>,
    /// Monomial coefficients of `f_j`, lowest power first.
    coeffs: Vec<Vec<f64>>,
}

fn binomial(n: u64, k: u64) -> i64 {
    let mut acc: i64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as i64 / (i + 1) as i64;
    }
    acc
}

fn shifted_legendre(j: usize) -> Vec<i64> {
    (0..=j)
        .map(|k| {
            let sign = if (j + k).is_multiple_of(2) { 1 } else { -1 };
            sign * binomial(j as u64, k as u64) * binomial((j + k) as u64, k as u64)
        })
        .collect()
}

/// Exact `∫₀¹ p(x) q(x) dx` for integer-coefficient polynomials.
fn exact_inner(p: &[i64], q: &[i64]) -> BigRational {
    let mut acc = BigRational::zero();
    for (a, &pa) in p.iter().enumerate() {
        for (b, &qb) in q.iter().enumerate() {
            let num = BigInt::from(pa) * BigInt::from(qb);
            acc += BigRational::new(num, BigInt::from((a + b + 1) as i64));
        }
    }
    acc
}

impl OrthoBasis {
    pub fn new(max_degree: usize) -> Result<Self> {
        if max_degree > MAX_DEGREE {
            return Err(HcrError::DegreeUnsupported {
                degree: max_degree,
                max: MAX_DEGREE,
            });
        }
        let integer_coeffs: Vec<Vec<i64>> = (0..=max_degree).map(shifted_legendre).collect();
        let coeffs = integer_coeffs
            .iter()
            .enumerate()
            .map(|(j, c)| {
                let scale = ((2 * j + 1) as f64).sqrt();
                c.iter().map(|&v| scale * v as f64).collect()
            })
            .collect();
        Ok(OrthoBasis {
            max_degree,
            integer_coeffs,
            coeffs,
        })
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    /// Number of functions, `max_degree + 1`.
    pub fn len(&self) -> usize {
        self.max_degree + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Monomial coefficients of `f_j`, constant term first.
    pub fn coefficients(&self, j: usize) -> &[f64] {
        &self.coeffs[j]
    }

    /// Integer coefficients of the unnormalized shifted Legendre polynomial;
    /// `f_j` is this times `sqrt(2j + 1)`.
    pub fn integer_coefficients(&self, j: usize) -> &[i64] {
        &self.integer_coeffs[j]
    }

    /// `f_j(x)` by Horner's rule. No domain check.
    #[inline]
    pub fn eval_one(&self, j: usize, x: f64) -> f64 {
        self.coeffs[j].iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    /// Writes `f_0(x) ..= f_{len-1}(x)` into `out`, for as many entries as
    /// `out` holds. No domain check; callers clamp first.
    #[inline]
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = self.eval_one(j, x);
        }
    }

    /// All basis values at `x`, which must lie in `[0, 1]`.
    pub fn eval(&self, x: f64) -> Result<Vec<f64>> {
        if !(0.0..=1.0).contains(&x) {
            return Err(HcrError::Domain(format!(
                "basis evaluated at {x}, outside [0, 1]"
            )));
        }
        let mut out = vec![0.0; self.len()];
        self.eval_into(x, &mut out);
        Ok(out)
    }

    /// `∫₀¹ f_j f_k dx`, computed from the exact monomial expansion.
    pub fn integrate_product(&self, j: usize, k: usize) -> Result<f64> {
        if j > self.max_degree || k > self.max_degree {
            return Err(HcrError::Shape(format!(
                "index ({j}, {k}) out of range for degree {}",
                self.max_degree
            )));
        }
        let exact = exact_inner(&self.integer_coeffs[j], &self.integer_coeffs[k]);
        if j == k {
            // exact * (2j+1) is rational; for the true basis it is exactly 1.
            let scaled = exact * BigRational::from_integer(BigInt::from((2 * j + 1) as i64));
            return Ok(scaled.to_f64().unwrap_or(f64::NAN));
        }
        let scale = (((2 * j + 1) * (2 * k + 1)) as f64).sqrt();
        Ok(exact.to_f64().unwrap_or(f64::NAN) * scale)
    }

    /// `∫₀¹ f_j dx`: 1 for `j = 0`, 0 otherwise (computed, not assumed).
    pub fn integrate(&self, j: usize) -> Result<f64> {
        self.integrate_product(j, 0)
    }

    /// Coefficients as an array of arrays of decimal strings.
    pub fn to_json(&self) -> serde_json::Value {
        let export = BasisExport {
            max_degree: self.max_degree,
            coefficients: self
                .coeffs
                .iter()
                .map(|row| row.iter().map(|c| format!("{c:?}")).collect())
                .collect(),
        };
        serde_json::to_value(export).expect("basis export is plain data")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct BasisExport {
    max_degree: usize,
    coefficients: Vec<Vec<String>>,
}
