//! Basis labels and finite spectral states.
//!
//! A basis element is labelled by a radial index `n`, an angular degree `l`
//! and an angular order `m` with `|m| <= l`. The combination `2n + l` acts
//! as an additive energy under the quadratic coupling and is the ordering
//! used everywhere in the crate.

use crate::error::{Error, Result};
use num_complex::Complex64;
use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

/// Label (n, l, m) of one basis eigenfunction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModeIndex {
    pub n: u32,
    pub l: u32,
    pub m: i32,
}

impl ModeIndex {
    pub fn new(n: u32, l: u32, m: i32) -> Result<Self> {
        if m.unsigned_abs() > l {
            return Err(Error::Index(format!("|m| = {} exceeds l = {l}", m.abs())));
        }
        Ok(ModeIndex { n, l, m })
    }

    /// Hermite energy 2n + l, additive under the quadratic coupling.
    pub fn energy(&self) -> u32 {
        2 * self.n + self.l
    }

    /// True for the five conserved modes (0,0,0), (1,0,0), (0,1,m).
    pub fn is_collision_invariant(&self) -> bool {
        matches!((self.n, self.l), (0, 0) | (1, 0) | (0, 1))
    }

    /// True when the mode lies in the orthogonal complement of the
    /// conserved modes, i.e. n + l >= 2.
    pub fn in_orthogonal_complement(&self) -> bool {
        self.n + self.l >= 2
    }

    /// The mode with the angular order negated.
    pub fn conjugate(&self) -> ModeIndex {
        ModeIndex { n: self.n, l: self.l, m: -self.m }
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{})", self.n, self.l, self.m)
    }
}

// Canonical order: (energy, n, l, m) lexicographic.
impl Ord for ModeIndex {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.energy(), self.n, self.l, self.m).cmp(&(
            other.energy(),
            other.n,
            other.l,
            other.m,
        ))
    }
}

impl PartialOrd for ModeIndex {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All modes with energy 2n + l <= `emax`, in canonical order.
pub fn modes_up_to_energy(emax: u32) -> Vec<ModeIndex> {
    let mut out = Vec::new();
    for e in 0..=emax {
        for n in 0..=e / 2 {
            let l = e - 2 * n;
            for m in -(l as i32)..=l as i32 {
                out.push(ModeIndex { n, l, m });
            }
        }
    }
    out
}

/// A finite complex coefficient vector over mode labels: the solution at
/// one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralState {
    pub coeffs: BTreeMap<ModeIndex, Complex64>,
    /// Claims coeffs[(n,l,-m)] = conj(coeffs[(n,l,m)]) for every present mode.
    pub reality_flag: bool,
}

impl SpectralState {
    pub fn zero() -> Self {
        SpectralState { coeffs: BTreeMap::new(), reality_flag: true }
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (ModeIndex, Complex64)>) -> Self {
        let coeffs: BTreeMap<_, _> = pairs.into_iter().collect();
        let mut st = SpectralState { coeffs, reality_flag: false };
        st.reality_flag = st.check_reality(1e-14);
        st
    }

    pub fn get(&self, mode: &ModeIndex) -> Complex64 {
        self.coeffs.get(mode).copied().unwrap_or(Complex64::ZERO)
    }

    pub fn set(&mut self, mode: ModeIndex, value: Complex64) {
        if value == Complex64::ZERO {
            self.coeffs.remove(&mode);
        } else {
            self.coeffs.insert(mode, value);
        }
    }

    pub fn l2_norm(&self) -> f64 {
        self.coeffs.values().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_energy(&self) -> u32 {
        self.coeffs.keys().map(|k| k.energy()).max().unwrap_or(0)
    }

    /// Checks the conjugation symmetry within `tol` (absolute).
    pub fn check_reality(&self, tol: f64) -> bool {
        self.coeffs.iter().all(|(k, v)| {
            let w = self.get(&k.conjugate());
            (w - v.conj()).norm() <= tol * (1.0 + v.norm())
        })
    }

    /// First mode violating the perturbation constraint: coefficients must
    /// vanish on (0,0,0), (1,0,0) and (0,1,m).
    pub fn admissibility_violation(&self) -> Option<ModeIndex> {
        self.coeffs
            .iter()
            .find(|(k, v)| k.is_collision_invariant() && v.norm() > 0.0)
            .map(|(k, _)| *k)
    }

    pub fn require_admissible(&self) -> Result<()> {
        match self.admissibility_violation() {
            Some(mode) => Err(Error::Admissibility { mode }),
            None => Ok(()),
        }
    }

    pub fn scale(&self, factor: f64) -> SpectralState {
        SpectralState {
            coeffs: self.coeffs.iter().map(|(k, v)| (*k, v * factor)).collect(),
            reality_flag: self.reality_flag,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mode_invariants() {
        assert!(ModeIndex::new(0, 1, 2).is_err());
        let m = ModeIndex::new(2, 3, -1).unwrap();
        assert_eq!(m.energy(), 7);
        assert!(!m.is_collision_invariant());
        assert!(ModeIndex::new(1, 0, 0).unwrap().is_collision_invariant());
        assert!(ModeIndex::new(0, 1, -1).unwrap().is_collision_invariant());
        // (1,0,0) has energy 2 but is conserved; (0,2,0) is the lowest
        // energy mode of the orthogonal complement.
        assert!(!ModeIndex::new(1, 0, 0).unwrap().in_orthogonal_complement());
        assert!(ModeIndex::new(0, 2, 0).unwrap().in_orthogonal_complement());
    }

    #[test]
    fn canonical_order_is_energy_then_nlm() {
        let modes = modes_up_to_energy(3);
        let mut sorted = modes.clone();
        sorted.sort();
        assert_eq!(modes, sorted);
        assert_eq!(modes[0], ModeIndex { n: 0, l: 0, m: 0 });
        // energy 2 block: (0,2,m) precedes (1,0,0)
        let i02 = modes.iter().position(|m| (m.n, m.l) == (0, 2)).unwrap();
        let i10 = modes.iter().position(|m| (m.n, m.l) == (1, 0)).unwrap();
        assert!(i02 < i10);
    }

    #[test]
    fn admissibility_gate() {
        let mut st = SpectralState::zero();
        st.set(ModeIndex::new(0, 2, 0).unwrap(), Complex64::new(1e-3, 0.0));
        assert!(st.admissibility_violation().is_none());
        st.set(ModeIndex::new(1, 0, 0).unwrap(), Complex64::new(1e-9, 0.0));
        assert_eq!(st.admissibility_violation().unwrap(), ModeIndex::new(1, 0, 0).unwrap());
    }

    #[test]
    fn reality_check() {
        let m = ModeIndex::new(0, 2, 1).unwrap();
        let st = SpectralState::from_pairs([
            (m, Complex64::new(0.3, 0.4)),
            (m.conjugate(), Complex64::new(0.3, -0.4)),
        ]);
        assert!(st.reality_flag);
    }
}
