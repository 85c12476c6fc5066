//! Closed-form solution of the coefficient ODE system on an energy ball.
//!
//! Every coefficient g_{n,l,m}(t) obeys
//!
//!   g' + lambda_{n,l} g = quadratic forcing from strictly lower energies,
//!
//! because coupling targets carry the sum of the source energies and
//! admissible sources sit at energy >= 2. Solving modes in any topological
//! order of that energy ordering therefore yields the *exact* dynamics of
//! the full infinite system restricted to the ball: no coupling from
//! outside the ball feeds any mode inside it. Each solution coefficient is
//! an exponential-polynomial in time, produced by repeated closed-form
//! integration of scalar linear ODEs.
//!
//! Initial data must vanish on the conserved modes (0,0,0), (1,0,0),
//! (0,1,m); those modes then stay identically zero, which also removes the
//! (1 + g_{0,0,0}(t)) factor from the linear term.

use crate::coefficients::CoeffTable;
use crate::error::{Error, Result};
use crate::exppoly::{solve_linear_ode, ExpPoly};
use crate::mode::{modes_up_to_energy, ModeIndex, SpectralState};
use num_complex::Complex64;
use std::collections::BTreeMap;

/// Default relative tolerance for treating nearly equal decay rates as
/// resonant; see the crate-level discussion in [`crate::exppoly`].
pub const DEFAULT_RESONANCE_TOL: f64 = 1e-12;

/// Exact solution of the coefficient system on an energy ball.
#[derive(Debug, Clone)]
pub struct CascadeSolution {
    pub modes: BTreeMap<ModeIndex, ExpPoly>,
    pub energy_cap: u32,
    pub reality: bool,
}

/// Solves the coefficient system for all modes of energy <= `energy_cap`.
pub fn cascade_solve(
    init: &SpectralState,
    table: &CoeffTable,
    energy_cap: u32,
    resonance_tol: f64,
) -> Result<CascadeSolution> {
    let order = modes_up_to_energy(energy_cap);
    cascade_solve_ordered(init, table, energy_cap, resonance_tol, &order)
}

/// Same as [`cascade_solve`] with an explicit processing order; any
/// topological order of the strict energy dependency yields identical
/// output (exercised by tests).
pub(crate) fn cascade_solve_ordered(
    init: &SpectralState,
    table: &CoeffTable,
    energy_cap: u32,
    resonance_tol: f64,
    order: &[ModeIndex],
) -> Result<CascadeSolution> {
    init.require_admissible()?;
    if init.max_energy() > energy_cap {
        return Err(Error::Coverage(format!(
            "initial data reaches energy {} beyond the cap {energy_cap}",
            init.max_energy()
        )));
    }
    if !table.covers_energy(energy_cap) {
        return Err(Error::Coverage(format!(
            "energy cap {energy_cap} exceeds table cutoff {}",
            table.n_max_energy
        )));
    }
    let mut sol: BTreeMap<ModeIndex, ExpPoly> = BTreeMap::new();
    for &mode in order {
        if mode.is_collision_invariant() {
            sol.insert(mode, ExpPoly::zero());
            continue;
        }
        let forcing = assemble_forcing(mode, table, &sol)?;
        let lambda = table.lambda(mode.n, mode.l)?;
        sol.insert(
            mode,
            solve_linear_ode(lambda, init.get(&mode), &forcing, resonance_tol),
        );
    }
    Ok(CascadeSolution { modes: sol, energy_cap, reality: init.reality_flag })
}

/// Quadratic forcing of one target mode from already-solved lower-energy
/// modes. Source pairs with a conserved factor contribute nothing (their
/// coefficients are identically zero) and are skipped.
fn assemble_forcing(
    target: ModeIndex,
    table: &CoeffTable,
    sol: &BTreeMap<ModeIndex, ExpPoly>,
) -> Result<ExpPoly> {
    let (ns, ls, ms) = (target.n, target.l, target.m);
    let mut forcing = ExpPoly::zero();
    let get = |mode: &ModeIndex| -> &ExpPoly { sol.get(mode).expect("topological order") };

    if ls == 0 {
        // radial target: pairs of purely radial sources
        for n in 2..=ns.saturating_sub(2) {
            let nt = ns - n;
            let w = table.rad1(n, nt, 0)?;
            if w == 0.0 {
                continue;
            }
            let a = ModeIndex { n, l: 0, m: 0 };
            let b = ModeIndex { n: nt, l: 0, m: 0 };
            forcing = forcing.add(&get(&a).mul(get(&b)).scale(Complex64::new(w, 0.0)));
        }
    } else {
        // radial x angular cross terms: sources (n,0,0) with n >= 2 and
        // (nt, ls, ms) outside the conserved span
        for n in 2..=ns {
            let nt = ns - n;
            if nt + ls < 2 {
                continue;
            }
            let w = table.rad1(n, nt, ls)? + table.rad2(nt, n, ls)?;
            if w == 0.0 {
                continue;
            }
            let a = ModeIndex { n, l: 0, m: 0 };
            let b = ModeIndex { n: nt, l: ls, m: ms };
            forcing = forcing.add(&get(&a).mul(get(&b)).scale(Complex64::new(w, 0.0)));
        }
    }

    // general couplings: l + lt = ls + 2k, both sources with degree >= 1
    for k in 0..=ns {
        let n_total = ns - k;
        let l_total = ls + 2 * k;
        for l in 1..l_total {
            let lt = l_total - l;
            if k > l.min(lt) {
                continue;
            }
            for n in 0..=n_total {
                let nt = n_total - n;
                if n + l < 2 || nt + lt < 2 {
                    continue;
                }
                for m in -(l as i32)..=l as i32 {
                    let mt = ms - m;
                    if mt.unsigned_abs() > lt {
                        continue;
                    }
                    let key = crate::coefficients::MuKey { n, nt, l, lt, k, m, mt };
                    let w = table.mu_value(&key)?;
                    if w == Complex64::ZERO {
                        continue;
                    }
                    let a = ModeIndex { n, l, m };
                    let b = ModeIndex { n: nt, l: lt, m: mt };
                    forcing = forcing.add(&get(&a).mul(get(&b)).scale(w));
                }
            }
        }
    }
    Ok(forcing)
}

/// Pointwise evaluation of a cascade solution at one time.
pub fn evaluate_solution(sol: &CascadeSolution, t: f64) -> SpectralState {
    let coeffs: BTreeMap<ModeIndex, Complex64> = sol
        .modes
        .iter()
        .map(|(mode, poly)| (*mode, poly.value(t)))
        .filter(|(_, v)| *v != Complex64::ZERO)
        .collect();
    SpectralState { coeffs, reality_flag: sol.reality }
}
