//! Spectral coefficients of the linear and quadratic collision operators.
//!
//! The linear operator is diagonal with eigenvalues
//!
//!   lambda_{n,l} = int_{|th|<=pi/4} beta(th) (1 + d_{n0} d_{l0}
//!       - sin^{2n+l}(th) P_l(sin th) - cos^{2n+l}(th) P_l(cos th)) dth.
//!
//! The quadratic operator expands over the basis in five cases depending on
//! which factors are purely radial; the general case couples a source pair
//! ((n,l,m), (nt,lt,mt)) with l, lt >= 1 into targets
//! (n + nt + k, l + lt - 2k, m + mt) for 0 <= k <= k0(l, lt, m, mt),
//! k0 = min(floor((l + lt - |m+mt|)/2), l, lt), with weights mu. Every
//! target carries the sum of the source energies, so the quadratic system
//! is strictly lower-triangular in energy.
//!
//! mu is computed by an exact-degree quadrature of the frame-averaged
//! kernel integral: an outer graded theta-quadrature against beta, an inner
//! uniform azimuthal average (which removes the arbitrary orthonormal frame)
//! and a product sphere rule, both exact for the polynomial integrand. A
//! cheaper axis-reduction route for the m-summed squares serves as an
//! independent cross-check.
//!
//! All eigenvalue integrands are assembled in cancellation-free form: the
//! 1 - cos^K P_l(cos) factors go through expm1/log1p so that their O(th^2)
//! size near zero is resolved with full relative accuracy. The singular
//! kernel weight amplifies absolute rounding noise, so this is what keeps
//! the conserved-mode eigenvalues at the 1e-15 level instead of 1e-7.

use crate::error::{Error, Result};
use crate::mode::ModeIndex;
use crate::quadrature::{
    azimuthal_nodes, integrate_beta_moment, integrate_beta_moment_vec, sphere_quadrature,
    KernelParams, QuadratureSpec,
};
use crate::specialfn::{
    legendre_p_minus_one, legendre_p_unchecked, ln_factorial, ln_gamma, sph_harm_norm, SphHarmRow,
};
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::BTreeMap;
use std::f64::consts::PI;

pub const TABLE_FORMAT_VERSION: &str = "1";

/// Relative threshold under which computed mu entries are dropped from the
/// sparse table (they are exact zeros by selection rules or parity).
const MU_DROP_THRESHOLD: f64 = 1e-14;

// ---------------------------------------------------------------------------
// integrands
// ---------------------------------------------------------------------------

/// 1 - cos^K(th) P_l(cos th), accurate relative to its O(th^2) size.
fn one_minus_cos_pow_pl(kpow: u32, l: u32, theta: f64) -> f64 {
    let switch = (1.0 / (l as f64 + 1.0)).min(0.05);
    if theta < switch {
        let z = (theta / 2.0).sin().powi(2); // (1 - cos th)/2
        let pm1 = legendre_p_minus_one(l, z);
        let t = kpow as f64 * (-2.0 * z).ln_1p() + pm1.ln_1p();
        -t.exp_m1()
    } else {
        let c = theta.cos();
        1.0 - c.powi(kpow as i32) * legendre_p_unchecked(l, c)
    }
}

/// sin^{2n+l}(th) P_l(sin th) - d_{n0} d_{l0}; products only, no cancellation.
fn lambda2_integrand(n: u32, l: u32, theta: f64) -> f64 {
    if n == 0 && l == 0 {
        return 0.0;
    }
    let s = theta.sin();
    s.powi((2 * n + l) as i32) * legendre_p_unchecked(l, s)
}

fn lambda2_vanish_order(n: u32, l: u32) -> f64 {
    // odd degrees gain one order from P_l(0) = 0
    (2 * n + l + (l % 2)) as f64
}

// ---------------------------------------------------------------------------
// linear eigenvalues
// ---------------------------------------------------------------------------

/// Eigenvalue of the linearized operator on modes of index (n, l).
pub fn lambda_linear(n: u32, l: u32, params: &KernelParams, spec: &QuadratureSpec) -> Result<f64> {
    let kpow = 2 * n + l;
    let f = |theta: f64| one_minus_cos_pow_pl(kpow, l, theta) - lambda2_integrand(n, l, theta);
    Ok(2.0 * integrate_beta_moment(f, 2.0, params, spec)?)
}

/// Loss-side coefficient: int beta (cos^{2n+l} P_l(cos) - 1); always <= 0.
pub fn lambda1(n: u32, l: u32, params: &KernelParams, spec: &QuadratureSpec) -> Result<f64> {
    let kpow = 2 * n + l;
    let f = |theta: f64| -one_minus_cos_pow_pl(kpow, l, theta);
    Ok(2.0 * integrate_beta_moment(f, 2.0, params, spec)?)
}

/// Gain-side coefficient: int beta (sin^{2n+l} P_l(sin) - d_{n0} d_{l0}).
pub fn lambda2(n: u32, l: u32, params: &KernelParams, spec: &QuadratureSpec) -> Result<f64> {
    if n == 0 && l == 0 {
        return Ok(0.0);
    }
    let f = |theta: f64| lambda2_integrand(n, l, theta);
    Ok(2.0 * integrate_beta_moment(f, lambda2_vanish_order(n, l), params, spec)?)
}

// ---------------------------------------------------------------------------
// radial-factor coefficients
// ---------------------------------------------------------------------------

fn exp_checked(ln: f64, what: &str) -> Result<f64> {
    if ln > 700.0 {
        return Err(Error::Overflow(format!("{what}: log-prefactor {ln} exceeds range")));
    }
    Ok(ln.exp())
}

/// Prefactor of the (radial, general) coupling:
/// (1/sqrt(4 pi)) sqrt(2 pi^{3/2} (n+nt)! G(n+nt+lt+3/2) /
///                      (nt! G(nt+lt+3/2) n! G(n+3/2))).
fn rad1_prefactor(n: u32, nt: u32, lt: u32) -> Result<f64> {
    let ln = 0.5
        * (std::f64::consts::LN_2 + 1.5 * PI.ln() + ln_factorial(n + nt)
            + ln_gamma((n + nt + lt) as f64 + 1.5)?
            - ln_factorial(nt)
            - ln_gamma((nt + lt) as f64 + 1.5)?
            - ln_factorial(n)
            - ln_gamma(n as f64 + 1.5)?)
        - 0.5 * (4.0 * PI).ln();
    exp_checked(ln, "rad1 prefactor")
}

fn rad2_prefactor(n: u32, nt: u32, l: u32) -> Result<f64> {
    let ln = 0.5
        * (std::f64::consts::LN_2 + 1.5 * PI.ln() + ln_factorial(n + nt)
            + ln_gamma((n + nt + l) as f64 + 1.5)?
            - ln_factorial(nt)
            - ln_gamma(nt as f64 + 1.5)?
            - ln_factorial(n)
            - ln_gamma((n + l) as f64 + 1.5)?)
        - 0.5 * (4.0 * PI).ln();
    exp_checked(ln, "rad2 prefactor")
}

/// Coupling weight of a purely radial (n,0,0), n >= 1, against (nt,lt,mt):
/// the target is (n+nt, lt, mt).
pub fn lambda_rad1(
    n: u32,
    nt: u32,
    lt: u32,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if n == 0 {
        return Err(Error::Index("rad1 coupling needs a radial index n >= 1".into()));
    }
    let pref = rad1_prefactor(n, nt, lt)?;
    let f = |theta: f64| {
        let (s, c) = theta.sin_cos();
        s.powi(2 * n as i32) * c.powi((2 * nt + lt) as i32) * legendre_p_unchecked(lt, c)
    };
    let integral = 2.0 * integrate_beta_moment(f, (2 * n) as f64, params, spec)?;
    Ok(pref * integral)
}

/// Coupling weight of (n,l,m), l >= 1, against a purely radial (nt,0,0),
/// nt >= 1: the target is (n+nt, l, m).
pub fn lambda_rad2(
    n: u32,
    nt: u32,
    l: u32,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if l == 0 {
        return Err(Error::Index("rad2 coupling needs an angular degree l >= 1".into()));
    }
    let order = lambda2_vanish_order(n, l);
    if order <= 2.0 * params.s {
        return Err(Error::Precondition(format!(
            "rad2 integrand vanish order {order} does not exceed 2s"
        )));
    }
    let pref = rad2_prefactor(n, nt, l)?;
    let f = |theta: f64| {
        let (s, c) = theta.sin_cos();
        s.powi((2 * n + l) as i32) * legendre_p_unchecked(l, s) * c.powi(2 * nt as i32)
    };
    let integral = 2.0 * integrate_beta_moment(f, order, params, spec)?;
    Ok(pref * integral)
}

// ---------------------------------------------------------------------------
// mu: the general coupling tensor
// ---------------------------------------------------------------------------

/// Largest admissible k for the (l, lt, m, mt) coupling.
pub fn k0_limit(l: u32, lt: u32, m: i32, mt: i32) -> u32 {
    let by_order = (l + lt - (m + mt).unsigned_abs()) / 2;
    by_order.min(l).min(lt)
}

fn mu_prefactor(n: u32, nt: u32, l: u32, lt: u32, k: u32) -> Result<f64> {
    let lp = l + lt - 2 * k;
    let ln = 0.5
        * (std::f64::consts::LN_2 + 1.5 * PI.ln() + ln_factorial(n + nt + k)
            + ln_gamma((n + nt + k + lp) as f64 + 1.5)?
            - ln_factorial(nt)
            - ln_gamma((nt + lt) as f64 + 1.5)?
            - ln_factorial(n)
            - ln_gamma((n + l) as f64 + 1.5)?);
    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
    Ok(sign * exp_checked(ln, "mu prefactor")?)
}

/// Orthonormal frame completion for a unit vector; the returned pair spans
/// the tangent plane. The reference axis switches away from near-parallel
/// configurations; any valid frame gives the same azimuthal average.
fn tangent_frame(kappa: [f64; 3]) -> ([f64; 3], [f64; 3]) {
    let ax = kappa[0].abs();
    let ay = kappa[1].abs();
    let az = kappa[2].abs();
    let u: [f64; 3] = if ax <= ay && ax <= az {
        [1.0, 0.0, 0.0]
    } else if ay <= az {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let d = u[0] * kappa[0] + u[1] * kappa[1] + u[2] * kappa[2];
    let mut k1 = [u[0] - d * kappa[0], u[1] - d * kappa[1], u[2] - d * kappa[2]];
    let n = (k1[0] * k1[0] + k1[1] * k1[1] + k1[2] * k1[2]).sqrt();
    k1 = [k1[0] / n, k1[1] / n, k1[2] / n];
    let k2 = [
        kappa[1] * k1[2] - kappa[2] * k1[1],
        kappa[2] * k1[0] - kappa[0] * k1[2],
        kappa[0] * k1[1] - kappa[1] * k1[0],
    ];
    (k1, k2)
}

/// One requested projection of the kernel integral: the coupling between
/// source orders (m, mt) at level k, tested against conj(Y_{l+lt-2k}^{m_star}).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct MuTarget {
    pub m: i32,
    pub mt: i32,
    pub k: u32,
    pub m_star: i32,
}

/// Integrals int_{S^2} G^{m,mt}(kappa) conj(Y_{lp}^{m_star}(kappa)) dkappa for
/// a batch of targets sharing (n, nt, l, lt); the outer theta quadrature, the
/// azimuthal frame average and the sphere rule are shared across the batch.
pub(crate) fn mu_inner_integrals(
    n: u32,
    nt: u32,
    l: u32,
    lt: u32,
    targets: &[MuTarget],
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<Vec<Complex64>> {
    if l == 0 || lt == 0 {
        return Err(Error::Index("mu coupling needs l >= 1 and lt >= 1".into()));
    }
    if targets.is_empty() {
        return Ok(Vec::new());
    }
    for t in targets {
        if t.m.unsigned_abs() > l || t.mt.unsigned_abs() > lt {
            return Err(Error::Index(format!("orders ({}, {}) out of range", t.m, t.mt)));
        }
        if t.k > l.min(lt) {
            return Err(Error::Index(format!("k = {} exceeds min(l, lt)", t.k)));
        }
        if t.m_star.unsigned_abs() > l + lt - 2 * t.k {
            return Err(Error::Index(format!(
                "target order {} out of range for degree {}",
                t.m_star,
                l + lt - 2 * t.k
            )));
        }
    }
    let k_min = targets.iter().map(|t| t.k).min().expect("nonempty");
    let lp_max = l + lt - 2 * k_min;
    let degree = l + lt + lp_max + spec.sphere_degree_margin;
    let sphere = sphere_quadrature(degree)?;
    let az = azimuthal_nodes(l + lt);
    let naz = az.len() as f64;

    let row_l = SphHarmRow::new(l);
    let row_lt = SphHarmRow::new(lt);
    let k_values: Vec<u32> = {
        let mut ks: Vec<u32> = targets.iter().map(|t| t.k).collect();
        ks.sort_unstable();
        ks.dedup();
        ks
    };
    let rows_lp: Vec<SphHarmRow> =
        k_values.iter().map(|&k| SphHarmRow::new(l + lt - 2 * k)).collect();
    let target_row: Vec<usize> = targets
        .iter()
        .map(|t| k_values.binary_search(&t.k).expect("k registered"))
        .collect();

    let (sin_pow, cos_pow) = ((2 * n + l) as i32, (2 * nt + lt) as i32);
    let vanish = (2 * n + l + (l % 2)) as f64;

    // A-priori scale of these integrals: the kernel moment of the radial
    // factor times the sup bound sqrt((2l+1)(2lt+1)(2lp+1)/(4 pi)) on the
    // harmonic products. Channels that are exact zeros by symmetry cannot
    // meet a purely relative tolerance, so convergence is measured against
    // a floor two orders below this scale.
    let gamma = vanish - 2.0 * params.s;
    let moment = params.kappa_beta * (PI / 4.0).powf(gamma) / gamma;
    let lp_min = l + lt - 2 * targets.iter().map(|t| t.k).max().expect("nonempty");
    let sup_bound = 2.0
        * moment
        * (((2 * l + 1) * (2 * lt + 1) * (2 * lp_min + 1)) as f64 / (4.0 * PI)).sqrt();
    let abs_tol = 1e-2 * spec.rel_tol * sup_bound;

    let dim = targets.len();
    let integrand = |theta: f64, out: &mut [Complex64]| {
        let (st, ct) = theta.sin_cos();
        let radial = st.powi(sin_pow) * ct.powi(cos_pow);
        let mut buf_a = vec![Complex64::ZERO; 2 * l as usize + 1];
        let mut buf_b = vec![Complex64::ZERO; 2 * lt as usize + 1];
        let mut buf_c: Vec<Vec<Complex64>> = k_values
            .iter()
            .map(|&k| vec![Complex64::ZERO; 2 * (l + lt - 2 * k) as usize + 1])
            .collect();
        let mut acc = vec![Complex64::ZERO; dim];
        for &(kappa, w) in sphere.iter() {
            let (k1, k2) = tangent_frame(kappa);
            for (ci, row) in rows_lp.iter().enumerate() {
                row.eval(kappa, &mut buf_c[ci]);
            }
            for &phi1 in az.iter() {
                let (sp, cp) = phi1.sin_cos();
                let kperp = [
                    k1[0] * cp + k2[0] * sp,
                    k1[1] * cp + k2[1] * sp,
                    k1[2] * cp + k2[2] * sp,
                ];
                let w1 = [
                    kappa[0] * st - kperp[0] * ct,
                    kappa[1] * st - kperp[1] * ct,
                    kappa[2] * st - kperp[2] * ct,
                ];
                let w2 = [
                    kappa[0] * ct + kperp[0] * st,
                    kappa[1] * ct + kperp[1] * st,
                    kappa[2] * ct + kperp[2] * st,
                ];
                row_l.eval(w1, &mut buf_a);
                row_lt.eval(w2, &mut buf_b);
                for (ti, t) in targets.iter().enumerate() {
                    let lp = l + lt - 2 * t.k;
                    let y_a = buf_a[(l as i32 + t.m) as usize];
                    let y_b = buf_b[(lt as i32 + t.mt) as usize];
                    let y_c = buf_c[target_row[ti]][(lp as i32 + t.m_star) as usize];
                    acc[ti] += w * y_a * y_b * y_c.conj();
                }
            }
        }
        for (o, a) in out.iter_mut().zip(acc.iter()) {
            *o = radial * a / naz;
        }
    };
    let vals =
        integrate_beta_moment_vec(integrand, dim, vanish, abs_tol, params, spec, "mu coupling")?;
    // evenness of the full integrand in theta
    Ok(vals.into_iter().map(|v| 2.0 * v).collect())
}

/// Coupling coefficient mu for one index tuple. The declared target order
/// `m_star` must equal m + mt for a nonzero value; indices violating the
/// selection rules return exactly zero without quadrature.
#[allow(clippy::too_many_arguments)]
pub fn mu_coefficient(
    n: u32,
    nt: u32,
    l: u32,
    lt: u32,
    k: u32,
    m: i32,
    mt: i32,
    m_star: i32,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<Complex64> {
    if l == 0 || lt == 0 {
        return Err(Error::Index("mu coupling needs l >= 1 and lt >= 1".into()));
    }
    if m.unsigned_abs() > l || mt.unsigned_abs() > lt {
        return Err(Error::Index(format!("orders ({m}, {mt}) out of range")));
    }
    if k > l.min(lt) {
        return Err(Error::Index(format!("k = {k} exceeds min(l, lt) = {}", l.min(lt))));
    }
    if m_star != m + mt {
        return Ok(Complex64::ZERO);
    }
    if k > k0_limit(l, lt, m, mt) {
        return Ok(Complex64::ZERO);
    }
    mu_raw_quadrature(n, nt, l, lt, k, m, mt, m_star, params, spec)
}

/// The quadrature behind [`mu_coefficient`] without the selection-rule
/// shortcut; used by the verification suites to audit that forbidden
/// indices integrate to zero.
#[allow(clippy::too_many_arguments)]
pub fn mu_raw_quadrature(
    n: u32,
    nt: u32,
    l: u32,
    lt: u32,
    k: u32,
    m: i32,
    mt: i32,
    m_star: i32,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<Complex64> {
    let pref = mu_prefactor(n, nt, l, lt, k)?;
    let targets = [MuTarget { m, mt, k, m_star }];
    let vals = mu_inner_integrals(n, nt, l, lt, &targets, params, spec)?;
    Ok(pref * vals[0])
}

/// All coupling coefficients sharing the frame (n, nt, l, lt), computed in
/// one batched quadrature. Entry order is deterministic: m, then mt, then k.
pub fn mu_group(
    n: u32,
    nt: u32,
    l: u32,
    lt: u32,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<Vec<(MuKey, Complex64)>> {
    let mut targets = Vec::new();
    let mut keys = Vec::new();
    for m in -(l as i32)..=l as i32 {
        for mt in -(lt as i32)..=lt as i32 {
            for k in 0..=k0_limit(l, lt, m, mt) {
                targets.push(MuTarget { m, mt, k, m_star: m + mt });
                keys.push(MuKey { n, nt, l, lt, k, m, mt });
            }
        }
    }
    let vals = mu_inner_integrals(n, nt, l, lt, &targets, params, spec)?;
    keys.into_iter()
        .zip(vals)
        .map(|(key, v)| Ok((key, mu_prefactor(n, nt, l, lt, key.k)? * v)))
        .collect()
}

/// m-summed squares of mu over one (n, nt, l, lt, k) row through the
/// axis-reduction route: 2 min(l,lt) + 1 one-dimensional kernel moments for
/// the axis factor plus one sphere quadrature per order q. The result is
/// independent of the declared target order.
#[allow(clippy::too_many_arguments)]
pub fn musq_sum(
    n: u32,
    nt: u32,
    l: u32,
    lt: u32,
    k: u32,
    m_star: i32,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    if l == 0 || lt == 0 {
        return Err(Error::Index("mu coupling needs l >= 1 and lt >= 1".into()));
    }
    if k > l.min(lt) {
        return Err(Error::Index(format!("k = {k} exceeds min(l, lt)")));
    }
    let lp = l + lt - 2 * k;
    if m_star.unsigned_abs() > lp {
        return Err(Error::Index(format!("target order {m_star} out of range")));
    }
    let pref = mu_prefactor(n, nt, l, lt, k)?;
    let qmax = l.min(lt) as i32;
    let mut total = Complex64::ZERO;
    for q in -qmax..=qmax {
        let qa = q.unsigned_abs();
        let axis_norm = sph_harm_norm(l, q) * sph_harm_norm(lt, q);
        let sign = if q.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let vanish = (2 * n + l + qa + ((l - qa) % 2)) as f64;
        let sin_pow = (2 * n + l) as i32;
        let cos_pow = (2 * nt + lt) as i32;
        let axis_integral = 2.0
            * integrate_beta_moment(
                |theta| {
                    let (st, ct) = theta.sin_cos();
                    st.powi(sin_pow)
                        * ct.powi(cos_pow)
                        * crate::specialfn::assoc_legendre(l, qa, st).expect("qa <= l")
                        * crate::specialfn::assoc_legendre(lt, qa, ct).expect("qa <= lt")
                },
                vanish,
                params,
                spec,
            )?;
        let g_e1 = sign * axis_norm * axis_integral;
        if g_e1 == 0.0 {
            continue;
        }
        let targets = [MuTarget { m: q, mt: -q, k, m_star: 0 }];
        let igy0 = mu_inner_integrals(n, nt, l, lt, &targets, params, spec)?[0];
        total += (4.0 * PI / (2.0 * lp as f64 + 1.0)).sqrt() * g_e1 * igy0;
    }
    Ok(pref * pref * total.re)
}

// ---------------------------------------------------------------------------
// coefficient table
// ---------------------------------------------------------------------------

/// Sparse tensor key (n, nt, l, lt, k, m, mt).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MuKey {
    pub n: u32,
    pub nt: u32,
    pub l: u32,
    pub lt: u32,
    pub k: u32,
    pub m: i32,
    pub mt: i32,
}

impl MuKey {
    pub fn target(&self) -> ModeIndex {
        ModeIndex {
            n: self.n + self.nt + self.k,
            l: self.l + self.lt - 2 * self.k,
            m: self.m + self.mt,
        }
    }
}

/// Immutable precomputed coefficient family up to an energy cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffTable {
    pub version: String,
    pub params: KernelParams,
    pub spec: QuadratureSpec,
    pub n_max_energy: u32,
    /// lambda_{n,l} for 2n + l <= n_max_energy.
    pub linear: BTreeMap<(u32, u32), f64>,
    /// Loss-side lambda^1 on the same index set.
    pub lin1: BTreeMap<(u32, u32), f64>,
    /// Gain-side lambda^2 on the same index set.
    pub lin2: BTreeMap<(u32, u32), f64>,
    /// (n, nt, lt) -> rad1 weight, n >= 1, 2(n + nt) + lt <= n_max_energy.
    pub rad1: BTreeMap<(u32, u32, u32), f64>,
    /// (n, nt, l) -> rad2 weight, nt >= 1, l >= 1, 2(n + nt) + l <= n_max_energy.
    pub rad2: BTreeMap<(u32, u32, u32), f64>,
    /// General couplings between source pairs outside the conserved span.
    pub mu: BTreeMap<MuKey, Complex64>,
}

impl CoeffTable {
    pub fn covers_energy(&self, e: u32) -> bool {
        e <= self.n_max_energy
    }

    pub fn lambda(&self, n: u32, l: u32) -> Result<f64> {
        self.linear.get(&(n, l)).copied().ok_or_else(|| {
            Error::Coverage(format!("lambda({n},{l}) outside table (E <= {})", self.n_max_energy))
        })
    }

    pub fn lambda1(&self, n: u32, l: u32) -> Result<f64> {
        self.lin1
            .get(&(n, l))
            .copied()
            .ok_or_else(|| Error::Coverage(format!("lambda1({n},{l}) outside table")))
    }

    pub fn lambda2(&self, n: u32, l: u32) -> Result<f64> {
        self.lin2
            .get(&(n, l))
            .copied()
            .ok_or_else(|| Error::Coverage(format!("lambda2({n},{l}) outside table")))
    }

    pub fn rad1(&self, n: u32, nt: u32, lt: u32) -> Result<f64> {
        if 2 * (n + nt) + lt > self.n_max_energy {
            return Err(Error::Coverage(format!("rad1({n},{nt},{lt}) outside table")));
        }
        Ok(self.rad1.get(&(n, nt, lt)).copied().unwrap_or(0.0))
    }

    pub fn rad2(&self, n: u32, nt: u32, l: u32) -> Result<f64> {
        if 2 * (n + nt) + l > self.n_max_energy {
            return Err(Error::Coverage(format!("rad2({n},{nt},{l}) outside table")));
        }
        Ok(self.rad2.get(&(n, nt, l)).copied().unwrap_or(0.0))
    }

    /// Stored coupling (zero if dropped as negligible); coverage-checked.
    pub fn mu_value(&self, key: &MuKey) -> Result<Complex64> {
        let total = 2 * (key.n + key.nt) + key.l + key.lt;
        if total > self.n_max_energy {
            return Err(Error::Coverage(format!(
                "mu{key:?} has total energy {total} > {}",
                self.n_max_energy
            )));
        }
        Ok(self.mu.get(key).copied().unwrap_or(Complex64::ZERO))
    }

    /// Entries of one (n, nt, l, lt) block.
    pub fn mu_block(&self, n: u32, nt: u32, l: u32, lt: u32) -> Vec<(MuKey, Complex64)> {
        let lo = MuKey { n, nt, l, lt, k: 0, m: i32::MIN, mt: i32::MIN };
        let hi = MuKey { n, nt, l, lt, k: u32::MAX, m: i32::MAX, mt: i32::MAX };
        self.mu.range(lo..=hi).map(|(k, v)| (*k, *v)).collect()
    }

    /// The spectral gap lambda_{2,0}.
    pub fn spectral_gap(&self) -> Result<f64> {
        self.lambda(2, 0)
    }
}

/// Modes of the orthogonal complement with l >= 1 and energy <= emax,
/// as (n, l) pairs.
pub(crate) fn angular_sources(emax: u32) -> Vec<(u32, u32)> {
    let mut out = Vec::new();
    for e in 1..=emax {
        for n in 0..=e / 2 {
            let l = e - 2 * n;
            if l >= 1 && n + l >= 2 {
                out.push((n, l));
            }
        }
    }
    out
}

/// Builds the full coefficient table up to `n_max_energy`.
///
/// The stored mu entries cover source pairs outside the conserved span;
/// couplings with a conserved source factor never act on admissible data and
/// are computable on demand via [`mu_coefficient`] or
/// [`gamma_pair_expansion`]. Output is deterministic and independent of the
/// evaluation order (entries are pure functions of their indices).
pub fn build_table(
    n_max_energy: u32,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<CoeffTable> {
    if n_max_energy < 2 {
        return Err(Error::Domain("n_max_energy must be at least 2".into()));
    }
    spec.validate()?;

    let mut lin_keys = Vec::new();
    for e in 0..=n_max_energy {
        for n in 0..=e / 2 {
            lin_keys.push((n, e - 2 * n));
        }
    }
    let lin: Vec<_> = lin_keys
        .par_iter()
        .map(|&(n, l)| -> Result<_> {
            Ok((
                (n, l),
                lambda_linear(n, l, params, spec)
                    .map_err(|e| annotate(e, &format!("lambda({n},{l})")))?,
                lambda1(n, l, params, spec)
                    .map_err(|e| annotate(e, &format!("lambda1({n},{l})")))?,
                lambda2(n, l, params, spec)
                    .map_err(|e| annotate(e, &format!("lambda2({n},{l})")))?,
            ))
        })
        .collect::<Result<_>>()?;

    let mut rad1_keys = Vec::new();
    let mut rad2_keys = Vec::new();
    for n in 1..=n_max_energy / 2 {
        for nt in 0..=(n_max_energy - 2 * n) / 2 {
            for lt in 0..=n_max_energy - 2 * n - 2 * nt {
                rad1_keys.push((n, nt, lt));
            }
        }
    }
    for nt in 1..=n_max_energy / 2 {
        for n in 0..=(n_max_energy - 2 * nt) / 2 {
            for l in 1..=n_max_energy - 2 * nt - 2 * n {
                rad2_keys.push((n, nt, l));
            }
        }
    }
    let rad1: Vec<_> = rad1_keys
        .par_iter()
        .map(|&(n, nt, lt)| -> Result<_> {
            lambda_rad1(n, nt, lt, params, spec)
                .map(|v| ((n, nt, lt), v))
                .map_err(|e| annotate(e, &format!("rad1({n},{nt},{lt})")))
        })
        .collect::<Result<_>>()?;
    let rad2: Vec<_> = rad2_keys
        .par_iter()
        .map(|&(n, nt, l)| -> Result<_> {
            lambda_rad2(n, nt, l, params, spec)
                .map(|v| ((n, nt, l), v))
                .map_err(|e| annotate(e, &format!("rad2({n},{nt},{l})")))
        })
        .collect::<Result<_>>()?;

    let sources = angular_sources(n_max_energy);
    let mut groups = Vec::new();
    for &(n, l) in &sources {
        for &(nt, lt) in &sources {
            if 2 * (n + nt) + l + lt <= n_max_energy {
                groups.push((n, nt, l, lt));
            }
        }
    }
    let mu_parts: Vec<Vec<(MuKey, Complex64)>> = groups
        .par_iter()
        .map(|&(n, nt, l, lt)| -> Result<_> {
            let entries = mu_group(n, nt, l, lt, params, spec)
                .map_err(|e| annotate(e, &format!("mu block ({n},{nt},{l},{lt})")))?;
            let scale = entries.iter().fold(0.0_f64, |a, (_, v)| a.max(v.norm()));
            Ok(entries
                .into_iter()
                .filter(|(_, v)| v.norm() >= MU_DROP_THRESHOLD * scale && v.norm() > 0.0)
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut table = CoeffTable {
        version: TABLE_FORMAT_VERSION.to_string(),
        params: *params,
        spec: *spec,
        n_max_energy,
        linear: BTreeMap::new(),
        lin1: BTreeMap::new(),
        lin2: BTreeMap::new(),
        rad1: rad1.into_iter().collect(),
        rad2: rad2.into_iter().collect(),
        mu: mu_parts.into_iter().flatten().collect(),
    };
    for (key, l0, l1, l2) in lin {
        table.linear.insert(key, l0);
        table.lin1.insert(key, l1);
        table.lin2.insert(key, l2);
    }
    Ok(table)
}

fn annotate(e: Error, context: &str) -> Error {
    match e {
        Error::NonConvergence { what, levels } => {
            Error::NonConvergence { what: format!("{context}: {what}"), levels }
        }
        other => other,
    }
}

// ---------------------------------------------------------------------------
// basis expansion of the quadratic operator
// ---------------------------------------------------------------------------

/// Finite expansion of the quadratic coupling of a source pair over the
/// basis. Dispatches the five structural cases; every returned target has
/// energy(a) + energy(b). Couplings absent from the table (a conserved
/// source factor) are evaluated on demand with the table's kernel and
/// quadrature settings.
pub fn gamma_pair_expansion(
    a: ModeIndex,
    b: ModeIndex,
    table: &CoeffTable,
) -> Result<Vec<(ModeIndex, Complex64)>> {
    if !table.covers_energy(a.energy() + b.energy()) {
        return Err(Error::Coverage(format!(
            "pair energy {} exceeds table cutoff {}",
            a.energy() + b.energy(),
            table.n_max_energy
        )));
    }
    let mut out: Vec<(ModeIndex, Complex64)> = Vec::new();
    if a.n == 0 && a.l == 0 {
        let w = table.lambda1(b.n, b.l)?;
        if w != 0.0 {
            out.push((b, Complex64::new(w, 0.0)));
        }
    } else if b.n == 0 && b.l == 0 {
        let w = table.lambda2(a.n, a.l)?;
        if w != 0.0 {
            out.push((a, Complex64::new(w, 0.0)));
        }
    } else if a.l == 0 {
        // a = (n, 0, 0), n >= 1
        let w = table.rad1(a.n, b.n, b.l)?;
        let target = ModeIndex { n: a.n + b.n, l: b.l, m: b.m };
        if w != 0.0 {
            out.push((target, Complex64::new(w, 0.0)));
        }
    } else if b.l == 0 {
        // b = (nt, 0, 0), nt >= 1
        let w = table.rad2(a.n, b.n, a.l)?;
        let target = ModeIndex { n: a.n + b.n, l: a.l, m: a.m };
        if w != 0.0 {
            out.push((target, Complex64::new(w, 0.0)));
        }
    } else {
        let on_demand = !(a.in_orthogonal_complement() && b.in_orthogonal_complement());
        for k in 0..=k0_limit(a.l, b.l, a.m, b.m) {
            let key = MuKey { n: a.n, nt: b.n, l: a.l, lt: b.l, k, m: a.m, mt: b.m };
            let w = if on_demand {
                mu_coefficient(
                    key.n,
                    key.nt,
                    key.l,
                    key.lt,
                    key.k,
                    key.m,
                    key.mt,
                    key.m + key.mt,
                    &table.params,
                    &table.spec,
                )?
            } else {
                table.mu_value(&key)?
            };
            if w != Complex64::ZERO {
                out.push((key.target(), w));
            }
        }
    }
    for (target, _) in &out {
        debug_assert_eq!(target.energy(), a.energy() + b.energy());
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// audits
// ---------------------------------------------------------------------------

/// Result of the pairwise orthogonality audit on one (n, nt, l, lt) block.
#[derive(Debug, Clone)]
pub struct OrthogonalityReport {
    pub max_normalized_cross: f64,
    pub pairs_checked: usize,
}

/// Cross sums sum_{m,mt} mu^{(k1,ms1)} conj(mu^{(k2,ms2)}) must vanish for
/// (k1, ms1) != (k2, ms2); reports the largest cross term normalized by the
/// corresponding diagonal scale.
pub fn verify_orthogonality(
    n: u32,
    nt: u32,
    l: u32,
    lt: u32,
    table: &CoeffTable,
) -> Result<OrthogonalityReport> {
    let in_table = n + l >= 2 && nt + lt >= 2 && 2 * (n + nt) + l + lt <= table.n_max_energy;
    let entries: Vec<(MuKey, Complex64)> = if in_table {
        table.mu_block(n, nt, l, lt)
    } else {
        mu_group(n, nt, l, lt, &table.params, &table.spec)?
    };
    // organize by (k, m_star)
    let mut rows: BTreeMap<(u32, i32), Vec<(i32, i32, Complex64)>> = BTreeMap::new();
    for (key, v) in entries {
        rows.entry((key.k, key.m + key.mt)).or_default().push((key.m, key.mt, v));
    }
    let diag: BTreeMap<(u32, i32), f64> = rows
        .iter()
        .map(|(rk, items)| (*rk, items.iter().map(|(_, _, v)| v.norm_sqr()).sum::<f64>()))
        .collect();
    let keys: Vec<_> = rows.keys().copied().collect();
    let mut max_cross = 0.0_f64;
    let mut pairs = 0usize;
    for (i, &ka) in keys.iter().enumerate() {
        for &kb in keys.iter().skip(i + 1) {
            // rows with different target order share no (m, mt) support
            if ka.1 != kb.1 {
                continue;
            }
            let a = &rows[&ka];
            let b: BTreeMap<(i32, i32), Complex64> =
                rows[&kb].iter().map(|(m, mt, v)| ((*m, *mt), *v)).collect();
            let mut cross = Complex64::ZERO;
            for (m, mt, v) in a {
                if let Some(wb) = b.get(&(*m, *mt)) {
                    cross += v * wb.conj();
                }
            }
            // rows that vanish identically have a noise-level diagonal; the
            // block maximum keeps their normalization meaningful
            let block_scale = diag.values().fold(0.0_f64, |m, v| m.max(*v));
            let scale = (diag[&ka] * diag[&kb]).sqrt().max(1e-9 * block_scale);
            max_cross = max_cross.max(cross.norm() / scale.max(f64::MIN_POSITIVE));
            pairs += 1;
        }
    }
    Ok(OrthogonalityReport { max_normalized_cross: max_cross, pairs_checked: pairs })
}

/// Min and max over the table of lambda_{n,l} / ((2n+l+3/2)^s + l^{2s}) for
/// n + l >= 2; both must be finite and positive for the two-sided spectral
/// equivalence to hold with a nondegenerate constant.
pub fn spectral_bound_audit(table: &CoeffTable, n_max_energy: u32) -> Result<(f64, f64)> {
    let s = table.params.s;
    let mut lo = f64::INFINITY;
    let mut hi = 0.0_f64;
    for (&(n, l), &lam) in &table.linear {
        if n + l < 2 || 2 * n + l > n_max_energy {
            continue;
        }
        let denom = (2.0 * n as f64 + l as f64 + 1.5).powf(s) + (l as f64).powf(2.0 * s);
        let ratio = lam / denom;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    if !lo.is_finite() || lo <= 0.0 {
        return Err(Error::Domain(format!("degenerate spectral ratio band [{lo}, {hi}]")));
    }
    Ok((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn params() -> KernelParams {
        KernelParams::new(0.5, 1.0).unwrap()
    }

    fn spec() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    // frozen 40-digit oracle: int_0^{pi/4} theta^{-2} sin^2 cos^2 dtheta
    const I_SC: f64 = 0.6076586398074424136427592;

    #[test]
    fn conserved_modes_have_zero_eigenvalue() {
        for (n, l) in [(0, 0), (1, 0), (0, 1)] {
            let lam = lambda_linear(n, l, &params(), &spec()).unwrap();
            assert!(lam.abs() <= 1e-13, "lambda({n},{l}) = {lam}");
        }
    }

    #[test]
    fn lambda_02_matches_frozen_oracle() {
        let lam = lambda_linear(0, 2, &params(), &spec()).unwrap();
        assert!((lam - 6.0 * I_SC).abs() <= 1e-10 * lam, "{lam}");
        let lam20 = lambda_linear(2, 0, &params(), &spec()).unwrap();
        assert!((lam20 - 4.0 * I_SC).abs() <= 1e-10 * lam20);
        // lambda_{0,2} = (3/2) lambda_{2,0}
        assert_abs_diff_eq!(lam / lam20, 1.5, epsilon = 1e-10);
    }

    #[test]
    fn lambda_identity_and_signs() {
        let (p, q) = (params(), spec());
        assert_eq!(lambda2(0, 0, &p, &q).unwrap(), 0.0);
        assert!(lambda1(0, 0, &p, &q).unwrap().abs() <= 1e-15);
        for e in 0..=8u32 {
            for n in 0..=e / 2 {
                let l = e - 2 * n;
                let lam = lambda_linear(n, l, &p, &q).unwrap();
                let l1 = lambda1(n, l, &p, &q).unwrap();
                let l2 = lambda2(n, l, &p, &q).unwrap();
                assert!(l1 <= 1e-15, "lambda1({n},{l}) = {l1} must be <= 0");
                let resid = (lam + l1 + l2).abs();
                assert!(
                    resid <= 1e-9 * lam.abs().max(1.0),
                    "identity residual {resid} at ({n},{l})"
                );
                if n + l >= 2 {
                    assert!(lam > 0.0, "lambda({n},{l}) = {lam} must be positive");
                }
            }
        }
    }

    #[test]
    fn rad1_unit_prefactor_case() {
        // (n, nt, lt) = (1, 0, 0): prefactor reduces to exactly 1
        assert_abs_diff_eq!(rad1_prefactor(1, 0, 0).unwrap(), 1.0, epsilon = 1e-14);
        let got = lambda_rad1(1, 0, 0, &params(), &spec()).unwrap();
        let want =
            2.0 * integrate_beta_moment(|t| t.sin().powi(2), 2.0, &params(), &spec()).unwrap();
        assert_abs_diff_eq!(got, want, epsilon = 1e-12 * want.abs());
        assert!(lambda_rad1(0, 1, 1, &params(), &spec()).is_err());
    }

    #[test]
    fn rad2_smoke_finite_real() {
        let v = lambda_rad2(0, 1, 2, &params(), &spec()).unwrap();
        assert!(v.is_finite());
        assert!(lambda_rad2(1, 1, 0, &params(), &spec()).is_err());
    }

    #[test]
    fn mu_selection_rules() {
        let (p, q) = (params(), spec());
        // declared target order must match m + mt
        let v = mu_coefficient(0, 0, 1, 1, 0, 0, 1, 1, &p, &q).unwrap();
        assert!(v.norm() > 1e-6, "allowed entry should be nonzero, got {v}");
        let z = mu_coefficient(0, 0, 1, 1, 0, 0, 1, 0, &p, &q).unwrap();
        assert_eq!(z, Complex64::ZERO);
        // (l, lt, m, mt) = (2, 1, 2, 1): k0 = min(floor((3-3)/2), 2, 1) = 0
        let z = mu_coefficient(0, 0, 2, 1, 1, 2, 1, 3, &p, &q).unwrap();
        assert_eq!(z, Complex64::ZERO);
        // k beyond min(l, lt) is an index error, not a zero
        assert!(mu_coefficient(0, 0, 2, 1, 2, 0, 0, 0, &p, &q).is_err());
    }

    #[test]
    fn mu_conjugation_symmetry() {
        let (p, q) = (params(), spec());
        // the (0,0,1,1,1) row targets a conserved mode and is zero on both
        // sides; the (0,0,2,2,1) row is a genuinely nonzero check
        let a = mu_coefficient(0, 0, 1, 1, 1, 1, -1, 0, &p, &q).unwrap();
        let b = mu_coefficient(0, 0, 1, 1, 1, -1, 1, 0, &p, &q).unwrap();
        assert!((a.conj() - b).norm() <= 1e-10, "{a} vs {b}");
        let a = mu_coefficient(0, 0, 2, 2, 1, 1, -1, 0, &p, &q).unwrap();
        let b = mu_coefficient(0, 0, 2, 2, 1, -1, 1, 0, &p, &q).unwrap();
        assert!(a.norm() > 1e-3, "expected a nonzero coupling, got {a}");
        assert!((a.conj() - b).norm() <= 1e-10 * a.norm(), "{a} vs {b}");
    }

    #[test]
    fn musq_sum_matches_brute_force() {
        let (p, q) = (params(), spec());
        // the sum runs over source orders with m + mt equal to the fixed
        // target order; rows with a conserved target are zero on both routes
        // and compared against a floor set by the largest row of the block
        let mut block_scale = 0.0_f64;
        let mut cases = Vec::new();
        for (k, ms) in [(0u32, 0i32), (0, 2), (1, 0)] {
            let fast = musq_sum(0, 0, 1, 1, k, ms, &p, &q).unwrap();
            let mut brute = 0.0;
            for m in -1..=1i32 {
                let mt = ms - m;
                if mt.unsigned_abs() > 1 || k > k0_limit(1, 1, m, mt) {
                    continue;
                }
                brute += mu_coefficient(0, 0, 1, 1, k, m, mt, ms, &p, &q).unwrap().norm_sqr();
            }
            block_scale = block_scale.max(brute);
            cases.push((k, ms, fast, brute));
        }
        for (k, ms, fast, brute) in cases {
            assert!(
                (fast - brute).abs() <= 1e-8 * brute.max(1e-3 * block_scale),
                "k={k} ms={ms}: fast {fast} vs brute {brute}"
            );
        }
    }

    #[test]
    fn musq_sum_independent_of_target_order() {
        let (p, q) = (params(), spec());
        let a = musq_sum(0, 0, 2, 1, 0, 0, &p, &q).unwrap();
        let b = musq_sum(0, 0, 2, 1, 0, 3, &p, &q).unwrap();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(1e-14));
    }

    #[test]
    fn expansion_dispatch_cases() {
        let p = params();
        let q = spec();
        let table = build_table(4, &p, &q).unwrap();
        let phi = |n, l, m| ModeIndex::new(n, l, m).unwrap();

        // vacuum pair: lambda1_{0,0} = 0, empty expansion
        assert!(gamma_pair_expansion(phi(0, 0, 0), phi(0, 0, 0), &table).unwrap().is_empty());

        // radial first factor: single target with the rad1 weight
        let out = gamma_pair_expansion(phi(1, 0, 0), phi(0, 2, 1), &table).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].0, phi(1, 2, 1));
        let want = table.rad1(1, 0, 2).unwrap();
        assert_abs_diff_eq!(out[0].1.re, want, epsilon = 1e-14 * want.abs());

        // general pair (0,1,0) x (0,1,0): targets (0,2,0) and (1,0,0)
        let out = gamma_pair_expansion(phi(0, 1, 0), phi(0, 1, 0), &table).unwrap();
        let targets: Vec<ModeIndex> = out.iter().map(|(t, _)| *t).collect();
        assert!(targets.contains(&phi(0, 2, 0)));
        assert!(targets.contains(&phi(1, 0, 0)));
        assert_eq!(out.len(), 2);
        for (t, _) in &out {
            assert_eq!(t.energy(), 2);
        }
    }

    #[test]
    fn orthogonality_small_blocks() {
        let p = params();
        let q = spec();
        let table = build_table(4, &p, &q).unwrap();
        let rep = verify_orthogonality(0, 0, 1, 1, &table).unwrap();
        assert!(rep.max_normalized_cross <= 1e-8, "{}", rep.max_normalized_cross);
        let rep = verify_orthogonality(0, 0, 2, 2, &table).unwrap();
        assert!(rep.max_normalized_cross <= 1e-8, "{}", rep.max_normalized_cross);
    }

    #[test]
    fn table_energy_bookkeeping() {
        let p = params();
        let q = spec();
        let t2 = build_table(2, &p, &q).unwrap();
        let lin_keys: Vec<_> = t2.linear.keys().copied().collect();
        assert_eq!(lin_keys, vec![(0, 0), (0, 1), (0, 2), (1, 0)]);
        assert!(t2.mu.is_empty(), "no source pair fits in energy 2");
        assert_eq!(t2.rad1.keys().copied().collect::<Vec<_>>(), vec![(1, 0, 0)]);

        let t4 = build_table(4, &p, &q).unwrap();
        assert!(!t4.mu.is_empty());
        for key in t4.mu.keys() {
            // only source pairs of energy (2, 2) fit at cutoff 4
            assert_eq!((2 * key.n + key.l, 2 * key.nt + key.lt), (2, 2));
            assert_eq!(key.target().energy(), 4);
        }
    }

    #[test]
    fn table_is_deterministic() {
        let p = params();
        let q = spec();
        let a = build_table(3, &p, &q).unwrap();
        let b = build_table(3, &p, &q).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn spectral_band_sane() {
        let p = params();
        let q = spec();
        let table = build_table(6, &p, &q).unwrap();
        let (lo, hi) = spectral_bound_audit(&table, 6).unwrap();
        assert!(lo > 0.0 && hi >= lo);
        // lambda_{n,0} increases with n
        let mut prev = 0.0;
        for n in 1..=4u32 {
            let lam = lambda_linear(n, 0, &p, &q).unwrap();
            assert!(lam >= prev);
            prev = lam;
        }
        // gap dominance: lambda_{n,l} >= lambda_{2,0} on the complement
        let gap = table.spectral_gap().unwrap();
        for (&(n, l), &lam) in &table.linear {
            if n + l >= 2 {
                assert!(lam >= gap * (1.0 - 1e-12), "lambda({n},{l}) = {lam} < {gap}");
            }
        }
    }
}
