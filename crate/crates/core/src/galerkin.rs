//! Truncated quadratic system on an energy ball: assembly, adaptive time
//! integration, and the energy / dissipation / weighted-norm monitors.
//!
//! The projection keeps modes with 2n + l <= N. Because coupling targets
//! carry the sum of the source energies, the projected right-hand side of
//! every retained mode coincides with the untruncated one, so the Galerkin
//! trajectory is the exact dynamics of the ball (which the test suite pins
//! against the closed-form cascade).

use crate::coefficients::{gamma_pair_expansion, CoeffTable};
use crate::error::{Error, Result};
use crate::mode::{modes_up_to_energy, ModeIndex, SpectralState};
use num_complex::Complex64;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// The projected quadratic system: diagonal linear part and the sparse
/// list of source pairs feeding each target.
#[derive(Debug, Clone)]
pub struct QuadraticSystem {
    pub n_max_energy: u32,
    pub s: f64,
    pub modes: Vec<ModeIndex>,
    index: BTreeMap<ModeIndex, usize>,
    pub linear: Vec<f64>,
    /// Per target: ordered source pairs (a, b, weight); the quadratic form
    /// evaluates sum w * f[a] * g[b].
    quad: Vec<Vec<(usize, usize, Complex64)>>,
}

/// Builds the projected system for all couplings among modes of energy
/// <= `n` outside the conserved span (conserved sources are identically
/// zero on admissible data).
pub fn assemble(table: &CoeffTable, n: u32) -> Result<QuadraticSystem> {
    if !table.covers_energy(n) {
        return Err(Error::Coverage(format!(
            "projection energy {n} exceeds table cutoff {}",
            table.n_max_energy
        )));
    }
    let modes = modes_up_to_energy(n);
    let index: BTreeMap<ModeIndex, usize> =
        modes.iter().enumerate().map(|(i, m)| (*m, i)).collect();
    let mut linear = Vec::with_capacity(modes.len());
    for mode in &modes {
        if mode.is_collision_invariant() {
            linear.push(0.0);
        } else {
            linear.push(table.lambda(mode.n, mode.l)?);
        }
    }
    let mut quad = vec![Vec::new(); modes.len()];
    let complement: Vec<ModeIndex> = modes
        .iter()
        .copied()
        .filter(|m| m.in_orthogonal_complement())
        .collect();
    for &a in &complement {
        for &b in &complement {
            if a.energy() + b.energy() > n {
                continue;
            }
            for (target, w) in gamma_pair_expansion(a, b, table)? {
                debug_assert_eq!(target.energy(), a.energy() + b.energy());
                let ti = index[&target];
                quad[ti].push((index[&a], index[&b], w));
            }
        }
    }
    Ok(QuadraticSystem { n_max_energy: n, s: table.params.s, modes, index, linear, quad })
}

impl QuadraticSystem {
    pub fn dim(&self) -> usize {
        self.modes.len()
    }

    pub fn mode_position(&self, mode: &ModeIndex) -> Option<usize> {
        self.index.get(mode).copied()
    }

    /// Dense coefficient vector in canonical mode order.
    pub fn state_to_vec(&self, state: &SpectralState) -> Result<Vec<Complex64>> {
        let mut v = vec![Complex64::ZERO; self.dim()];
        for (mode, c) in &state.coeffs {
            match self.index.get(mode) {
                Some(&i) => v[i] = *c,
                None => {
                    return Err(Error::Coverage(format!(
                        "state mode {mode} outside the projected ball N = {}",
                        self.n_max_energy
                    )))
                }
            }
        }
        Ok(v)
    }

    pub fn vec_to_state(&self, v: &[Complex64], reality: bool) -> SpectralState {
        let coeffs = self
            .modes
            .iter()
            .zip(v.iter())
            .filter(|(_, c)| **c != Complex64::ZERO)
            .map(|(m, c)| (*m, *c))
            .collect();
        SpectralState { coeffs, reality_flag: reality }
    }

    /// Diagonal linear operator in coefficient space.
    pub fn apply_l(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.linear.iter().zip(v.iter()).map(|(lam, c)| lam * c).collect()
    }

    /// Quadratic form evaluated on the diagonal.
    pub fn apply_gamma(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.apply_gamma_bilinear(v, v)
    }

    /// The underlying bilinear form (not symmetric).
    pub fn apply_gamma_bilinear(&self, f: &[Complex64], g: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::ZERO; self.dim()];
        for (ti, pairs) in self.quad.iter().enumerate() {
            let mut acc = Complex64::ZERO;
            for &(a, b, w) in pairs {
                acc += w * f[a] * g[b];
            }
            out[ti] = acc;
        }
        out
    }

    /// ||L^{1/2} v||^2 = sum lambda |v_i|^2.
    pub fn dissipation(&self, v: &[Complex64]) -> f64 {
        self.linear.iter().zip(v.iter()).map(|(lam, c)| lam * c.norm_sqr()).sum()
    }

    fn l2(&self, v: &[Complex64]) -> f64 {
        v.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    fn weighted_norm_vec(&self, v: &[Complex64], c: f64) -> Result<f64> {
        let mut acc = 0.0;
        for (mode, coeff) in self.modes.iter().zip(v.iter()) {
            let arg = 2.0 * c * (mode.energy() as f64 + 1.5).powf(self.s);
            if arg > 700.0 {
                return Err(Error::Overflow(format!("weighted norm exponent at mode {mode}")));
            }
            acc += arg.exp() * coeff.norm_sqr();
        }
        Ok(acc.sqrt())
    }
}

/// Exponentially weighted norm (sum e^{2c(2n+l+3/2)^s} |g_{n,l,m}|^2)^{1/2}.
pub fn weighted_norm(state: &SpectralState, c: f64, s: f64) -> Result<f64> {
    let mut acc = 0.0;
    for (mode, coeff) in &state.coeffs {
        let arg = 2.0 * c * (mode.energy() as f64 + 1.5).powf(s);
        if arg > 700.0 {
            return Err(Error::Overflow(format!("weighted norm exponent at mode {mode}")));
        }
        acc += arg.exp() * coeff.norm_sqr();
    }
    Ok(acc.sqrt())
}

/// Margins e^{-lambda_gap t/4} ||g0|| - ||e^{(c0 t/2) H^s} g(t)||; all must
/// stay nonnegative (within slack) for admissible small data.
pub fn decay_margin(times: &[f64], weighted: &[f64], lambda_gap: f64, g0_norm: f64) -> Vec<f64> {
    times
        .iter()
        .zip(weighted.iter())
        .map(|(t, w)| (-lambda_gap * t / 4.0).exp() * g0_norm - w)
        .collect()
}

/// Time-integration controls.
#[derive(Debug, Clone, Copy)]
pub struct IntegrateOptions {
    pub t_end: f64,
    pub dt_init: f64,
    pub rel_tol: f64,
    /// Weight growth rate of the decay monitor.
    pub c0: f64,
    /// Number of uniformly spaced monitor samples (>= 2 when t_end > 0).
    pub n_monitor: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        IntegrateOptions { t_end: 1.0, dt_init: 1e-3, rel_tol: 1e-8, c0: 0.0, n_monitor: 65 }
    }
}

/// Monitor series of one run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub times: Vec<f64>,
    pub l2_norm: Vec<f64>,
    pub dissipation_integral: Vec<f64>,
    pub weighted_norm: Vec<f64>,
    pub decay_margin: Vec<f64>,
    pub c0: f64,
    pub g0_norm: f64,
    pub lambda_gap: Option<f64>,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
}

/// Classical fourth-order stepping with step doubling.
///
/// Error control is per unit time (local error <= rel_tol * scale * h/T),
/// so the accumulated deviation over the whole run stays at rel_tol * scale.
/// The dissipation integral is accumulated per accepted step with Simpson
/// weights, reusing the half-step state from the doubling estimate.
pub fn integrate(
    sys: &QuadraticSystem,
    init: &SpectralState,
    opts: &IntegrateOptions,
) -> Result<(SolveReport, Vec<(f64, SpectralState)>)> {
    init.require_admissible()?;
    let y0 = sys.state_to_vec(init)?;
    let g0_norm = sys.l2(&y0);
    let lambda_gap = sys.mode_position(&ModeIndex { n: 2, l: 0, m: 0 }).map(|i| sys.linear[i]);

    let monitor_times: Vec<f64> = if opts.t_end <= 0.0 {
        vec![0.0]
    } else {
        let k = opts.n_monitor.max(2);
        (0..k).map(|j| opts.t_end * j as f64 / (k - 1) as f64).collect()
    };

    let rhs = |v: &[Complex64]| -> Vec<Complex64> {
        let lin = sys.apply_l(v);
        let quad = sys.apply_gamma(v);
        lin.iter().zip(quad.iter()).map(|(l, q)| q - l).collect()
    };
    let rk4 = |v: &[Complex64], h: f64| -> Vec<Complex64> {
        let k1 = rhs(v);
        let mid1: Vec<Complex64> =
            v.iter().zip(k1.iter()).map(|(y, k)| y + 0.5 * h * k).collect();
        let k2 = rhs(&mid1);
        let mid2: Vec<Complex64> =
            v.iter().zip(k2.iter()).map(|(y, k)| y + 0.5 * h * k).collect();
        let k3 = rhs(&mid2);
        let end: Vec<Complex64> = v.iter().zip(k3.iter()).map(|(y, k)| y + h * k).collect();
        let k4 = rhs(&end);
        v.iter()
            .zip(k1.iter().zip(k2.iter()).zip(k3.iter().zip(k4.iter())))
            .map(|(y, ((a, b), (c, d)))| y + h / 6.0 * (a + 2.0 * b + 2.0 * c + d))
            .collect()
    };

    let mut report = SolveReport {
        times: Vec::new(),
        l2_norm: Vec::new(),
        dissipation_integral: Vec::new(),
        weighted_norm: Vec::new(),
        decay_margin: Vec::new(),
        c0: opts.c0,
        g0_norm,
        lambda_gap,
        steps_accepted: 0,
        steps_rejected: 0,
    };
    let mut trajectory = Vec::with_capacity(monitor_times.len());

    let mut y = y0;
    let mut t = 0.0_f64;
    let mut h = opts.dt_init.max(1e-12);
    let mut dissipation = 0.0_f64;
    let t_total = opts.t_end.max(opts.dt_init);

    for &tm in &monitor_times {
        // advance to the monitor time
        while t < tm {
            let step = h.min(tm - t);
            let full = rk4(&y, step);
            let half = rk4(&y, 0.5 * step);
            let two = rk4(&half, 0.5 * step);
            let err: f64 = full
                .iter()
                .zip(two.iter())
                .map(|(a, b)| (a - b).norm_sqr())
                .sum::<f64>()
                .sqrt()
                / 15.0;
            let scale = sys.l2(&y).max(g0_norm).max(1e-300);
            let tol = opts.rel_tol * scale * (step / t_total);
            if err <= tol {
                // Richardson extrapolation of the doubled step
                let ynew: Vec<Complex64> = two
                    .iter()
                    .zip(full.iter())
                    .map(|(b, a)| b + (b - a) / 15.0)
                    .collect();
                dissipation += step / 6.0
                    * (sys.dissipation(&y)
                        + 4.0 * sys.dissipation(&half)
                        + sys.dissipation(&ynew));
                y = ynew;
                t += step;
                report.steps_accepted += 1;
                if step >= h {
                    h *= (tol / err.max(1e-300)).powf(0.2).clamp(1.0, 2.0) * 0.95;
                }
            } else {
                report.steps_rejected += 1;
                h = step * 0.9 * (tol / err).powf(0.2).clamp(0.1, 0.9);
                if h < 1e-13 * t_total {
                    let limiting = full
                        .iter()
                        .zip(two.iter())
                        .enumerate()
                        .max_by(|(_, (a1, b1)), (_, (a2, b2))| {
                            (*a1 - *b1)
                                .norm()
                                .partial_cmp(&(*a2 - *b2).norm())
                                .expect("finite")
                        })
                        .map(|(i, _)| sys.modes[i])
                        .unwrap_or(ModeIndex { n: 0, l: 0, m: 0 });
                    return Err(Error::StepUnderflow { t, mode: limiting });
                }
            }
        }
        report.times.push(tm);
        report.l2_norm.push(sys.l2(&y));
        report.dissipation_integral.push(dissipation);
        report.weighted_norm.push(sys.weighted_norm_vec(&y, opts.c0 * tm / 2.0)?);
        trajectory.push((tm, sys.vec_to_state(&y, init.reality_flag)));
    }
    report.decay_margin = match lambda_gap {
        Some(gap) => decay_margin(&report.times, &report.weighted_norm, gap, g0_norm),
        None => vec![0.0; report.times.len()],
    };
    Ok((report, trajectory))
}

/// Result of the trilinear boundedness audit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrilinearAudit {
    pub unweighted_max: f64,
    pub weighted_max: f64,
    pub trials: u32,
}

/// Samples random states f, g, h supported outside the conserved span and
/// measures |(Gamma(f,g), h)| / (||f|| ||L^{1/2} g|| ||L^{1/2} h||), plus
/// the exponentially weighted variant with weight e^{(c/2) H^s} and
/// projections to N-2 on the sources. Both maxima must stay bounded
/// uniformly in the truncation level.
pub fn trilinear_audit(
    table: &CoeffTable,
    n: u32,
    trials: u32,
    seed: u64,
    c_weight: f64,
) -> Result<TrilinearAudit> {
    let sys = assemble(table, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = sys.dim();
    let mut sample = |rng: &mut ChaCha8Rng| -> Vec<Complex64> {
        (0..dim)
            .map(|i| {
                if sys.modes[i].in_orthogonal_complement() {
                    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                } else {
                    Complex64::ZERO
                }
            })
            .collect()
    };
    let weight = |mode: &ModeIndex, half: bool| -> f64 {
        let c = if half { c_weight / 2.0 } else { c_weight };
        (c * (mode.energy() as f64 + 1.5).powf(sys.s)).exp()
    };
    let mut unweighted_max = 0.0_f64;
    let mut weighted_max = 0.0_f64;
    for _ in 0..trials {
        let f = sample(&mut rng);
        let g = sample(&mut rng);
        let h = sample(&mut rng);
        let gamma_fg = sys.apply_gamma_bilinear(&f, &g);

        let inner: Complex64 =
            gamma_fg.iter().zip(h.iter()).map(|(a, b)| a * b.conj()).sum();
        let nf = sys.l2(&f);
        let lg = sys.dissipation(&g).sqrt();
        let lh = sys.dissipation(&h).sqrt();
        unweighted_max = unweighted_max.max(inner.norm() / (nf * lg * lh));

        // weighted variant: (Gamma(f,g), e^{c H^s} S_N h) against the
        // e^{(c/2) H^s}-weighted norms with the sources projected to N-2
        let mut winner = Complex64::ZERO;
        let mut wf = 0.0_f64;
        let mut wg = 0.0_f64;
        let mut wh = 0.0_f64;
        for i in 0..dim {
            let mode = &sys.modes[i];
            winner += gamma_fg[i] * h[i].conj() * weight(mode, false);
            wh += sys.linear[i] * (h[i].norm() * weight(mode, true)).powi(2);
            if mode.energy() + 2 <= n {
                wf += (f[i].norm() * weight(mode, true)).powi(2);
                wg += sys.linear[i] * (g[i].norm() * weight(mode, true)).powi(2);
            }
        }
        weighted_max = weighted_max.max(winner.norm() / (wf.sqrt() * wg.sqrt() * wh.sqrt()));
    }
    Ok(TrilinearAudit { unweighted_max, weighted_max, trials })
}

/// Empirical smallness threshold: the largest initial norm (on a seeded
/// reference direction, log-bisected) for which the weighted norm stays
/// non-increasing over [0, t_end].
pub fn measure_epsilon_hat(
    table: &CoeffTable,
    n: u32,
    c0: f64,
    t_end: f64,
    seed: u64,
) -> Result<f64> {
    let sys = assemble(table, n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reference = SpectralState::zero();
    for mode in &sys.modes {
        if mode.in_orthogonal_complement() && mode.m >= 0 {
            let c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let c = if mode.m == 0 { Complex64::new(c.re, 0.0) } else { c };
            reference.set(*mode, c);
            reference.set(mode.conjugate(), c.conj());
        }
    }
    reference.reality_flag = true;
    let norm = reference.l2_norm();
    let monotone = |eps: f64| -> Result<bool> {
        let init = reference.scale(eps / norm);
        let opts = IntegrateOptions {
            t_end,
            dt_init: 1e-3,
            rel_tol: 1e-7,
            c0,
            n_monitor: 33,
        };
        let (report, _) = integrate(&sys, &init, &opts)?;
        let slack = 1e-10 * eps;
        Ok(report
            .weighted_norm
            .windows(2)
            .all(|w| w[1] <= w[0] + slack))
    };
    let mut lo = 0.0_f64;
    let mut hi = 1.0_f64;
    // grow until violation or cap
    while monotone(hi)? && hi < 64.0 {
        lo = hi;
        hi *= 4.0;
    }
    if hi >= 64.0 {
        return Ok(lo);
    }
    for _ in 0..8 {
        let mid = 0.5 * (lo + hi);
        if monotone(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}
