//! Exponential-polynomials in time: finite sums c t^p e^{-a t}.
//!
//! Closed under products (rates add, powers add) and under solving the
//! scalar linear ODE y' + lambda y = forcing, which is all the coefficient
//! cascade needs. Forcing rates within `resonance_tol` of lambda take the
//! resonant branch t^{p+1} e^{-lambda t}/(p+1): quadrature noise can make
//! analytically equal rate sums differ slightly, and the near-resonant
//! partial fractions are numerically unstable, so near-equal rates are
//! merged at the cost of an O(tol * t) representation error.

use num_complex::Complex64;

/// Relative tolerance for clustering near-equal decay rates into one term.
pub const RATE_MERGE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpTerm {
    /// Decay rate a >= 0 of e^{-a t}.
    pub rate: f64,
    /// Power p of t^p.
    pub power: u32,
    pub coeff: Complex64,
}

/// Canonical finite sum of c t^p e^{-a t} terms, sorted by (rate, power)
/// with no duplicate (rate, power) pair and no exact-zero coefficient.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExpPoly {
    terms: Vec<ExpTerm>,
}

impl ExpPoly {
    pub fn zero() -> Self {
        ExpPoly { terms: Vec::new() }
    }

    /// The single term c e^{-rate t}.
    pub fn exponential(coeff: Complex64, rate: f64) -> Self {
        ExpPoly::from_terms(vec![ExpTerm { rate, power: 0, coeff }])
    }

    pub fn from_terms(terms: Vec<ExpTerm>) -> Self {
        let mut p = ExpPoly { terms };
        p.canonicalize();
        p
    }

    pub fn terms(&self) -> &[ExpTerm] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    /// Sorts by (rate, power), clusters rates within [`RATE_MERGE_TOL`]
    /// relative, merges duplicate (rate, power) pairs, drops exact zeros.
    fn canonicalize(&mut self) {
        self.terms.retain(|t| t.coeff != Complex64::ZERO);
        self.terms.sort_by(|a, b| {
            a.rate.partial_cmp(&b.rate).expect("finite rate").then(a.power.cmp(&b.power))
        });
        let mut out: Vec<ExpTerm> = Vec::with_capacity(self.terms.len());
        let mut cluster_rate = f64::NEG_INFINITY;
        for t in self.terms.drain(..) {
            let close = (t.rate - cluster_rate).abs() <= RATE_MERGE_TOL * cluster_rate.max(1.0);
            if !close {
                cluster_rate = t.rate;
            }
            match out.iter_mut().find(|u| u.rate == cluster_rate && u.power == t.power) {
                Some(u) => u.coeff += t.coeff,
                None => out.push(ExpTerm { rate: cluster_rate, ..t }),
            }
        }
        out.retain(|t| t.coeff != Complex64::ZERO);
        out.sort_by(|a, b| {
            a.rate.partial_cmp(&b.rate).expect("finite rate").then(a.power.cmp(&b.power))
        });
        self.terms = out;
    }

    pub fn value(&self, t: f64) -> Complex64 {
        self.terms
            .iter()
            .map(|term| term.coeff * t.powi(term.power as i32) * (-term.rate * t).exp())
            .sum()
    }

    pub fn add(&self, other: &ExpPoly) -> ExpPoly {
        let mut terms = self.terms.clone();
        terms.extend_from_slice(&other.terms);
        ExpPoly::from_terms(terms)
    }

    pub fn scale(&self, c: Complex64) -> ExpPoly {
        ExpPoly::from_terms(
            self.terms.iter().map(|t| ExpTerm { coeff: c * t.coeff, ..*t }).collect(),
        )
    }

    /// Product: rates add, powers add.
    pub fn mul(&self, other: &ExpPoly) -> ExpPoly {
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                terms.push(ExpTerm {
                    rate: a.rate + b.rate,
                    power: a.power + b.power,
                    coeff: a.coeff * b.coeff,
                });
            }
        }
        ExpPoly::from_terms(terms)
    }

    /// Largest power appearing (0 for the zero polynomial).
    pub fn max_power(&self) -> u32 {
        self.terms.iter().map(|t| t.power).max().unwrap_or(0)
    }

    pub fn conj(&self) -> ExpPoly {
        ExpPoly::from_terms(
            self.terms.iter().map(|t| ExpTerm { coeff: t.coeff.conj(), ..*t }).collect(),
        )
    }
}

/// Unique solution of y' + lambda y = forcing, y(0) = y0, as an ExpPoly.
///
/// A forcing term c t^p e^{-a t} with |a - lambda| <= resonance_tol *
/// max(1, lambda) contributes the resonant c t^{p+1} e^{-lambda t}/(p+1);
/// otherwise the particular solution is assembled by the descending
/// coefficient recurrence b_p = c/D, b_{j-1} = -j b_j / D with
/// D = lambda - a, and the e^{-lambda t} amplitude absorbs -b_0.
pub fn solve_linear_ode(
    lambda: f64,
    y0: Complex64,
    forcing: &ExpPoly,
    resonance_tol: f64,
) -> ExpPoly {
    let mut terms = Vec::new();
    let mut homogeneous = y0;
    for f in forcing.terms() {
        if (f.rate - lambda).abs() <= resonance_tol * lambda.max(1.0) {
            terms.push(ExpTerm {
                rate: lambda,
                power: f.power + 1,
                coeff: f.coeff / (f.power as f64 + 1.0),
            });
        } else {
            let d = Complex64::new(lambda - f.rate, 0.0);
            let mut b = f.coeff / d;
            terms.push(ExpTerm { rate: f.rate, power: f.power, coeff: b });
            for j in (1..=f.power).rev() {
                b = -(j as f64) * b / d;
                terms.push(ExpTerm { rate: f.rate, power: j - 1, coeff: b });
            }
            homogeneous -= b; // b now holds b_0
        }
    }
    terms.push(ExpTerm { rate: lambda, power: 0, coeff: homogeneous });
    ExpPoly::from_terms(terms)
}
