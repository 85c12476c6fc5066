//! Numerical integration against the singular angular kernel, exact-degree
//! product quadrature on the unit sphere, and uniform azimuthal rules.
//!
//! The kernel is the canonical power-law model
//!
//!   beta(theta) = kappa_beta * |theta|^{-1-2s},  0 < |theta| <= pi/4,
//!
//! even in theta and zero outside. Every angular integral in the crate is
//! even, so integrals over |theta| <= pi/4 are evaluated as twice the
//! [0, pi/4] integral.
//!
//! Moments int_0^{pi/4} beta(theta) f(theta) dtheta with f = O(theta^p),
//! p > 2s, are integrated by composite Gauss-Legendre panels on a
//! geometrically graded mesh accumulating at 0. The panel increments decay
//! geometrically (ratio ~ r^{p-2s}); once the measured ratio stabilizes the
//! remaining tail is summed in closed form, which is what lets slowly
//! vanishing integrands (p - 2s down to ~1/2) reach tight tolerances within
//! the default level budget.

use crate::error::{Error, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

/// Angular kernel model. Only the power law is defined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelModel {
    PowerLaw,
}

/// Singularity exponent and normalization of the angular kernel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Singularity exponent, 0 < s < 1.
    pub s: f64,
    /// Kernel normalization, beta(theta) * theta^{1+2s} = kappa_beta.
    pub kappa_beta: f64,
    pub model: KernelModel,
}

impl KernelParams {
    pub fn new(s: f64, kappa_beta: f64) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Domain(format!("singularity exponent s = {s} outside (0, 1)")));
        }
        if !(kappa_beta > 0.0) {
            return Err(Error::Domain(format!("kappa_beta = {kappa_beta} must be positive")));
        }
        Ok(KernelParams { s, kappa_beta, model: KernelModel::PowerLaw })
    }

    /// Kernel value; zero outside 0 < |theta| <= pi/4.
    pub fn beta(&self, theta: f64) -> f64 {
        let t = theta.abs();
        if t == 0.0 || t > PI / 4.0 {
            return 0.0;
        }
        self.kappa_beta * t.powf(-1.0 - 2.0 * self.s)
    }
}

/// Knobs of the graded quadrature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    pub rel_tol: f64,
    pub max_levels: u32,
    pub grading_ratio: f64,
    pub panel_order: u32,
    pub sphere_degree_margin: u32,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            rel_tol: 1e-10,
            max_levels: 40,
            grading_ratio: 0.5,
            panel_order: 16,
            sphere_degree_margin: 2,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0) {
            return Err(Error::Domain("rel_tol must be positive".into()));
        }
        if self.panel_order < 4 {
            return Err(Error::Domain("panel_order must be at least 4".into()));
        }
        if !(self.grading_ratio > 0.0 && self.grading_ratio < 1.0) {
            return Err(Error::Domain("grading_ratio must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], cached per order.
pub fn gauss_legendre(order: u32) -> Arc<Vec<(f64, f64)>> {
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<Vec<(f64, f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("gauss rule cache poisoned");
    guard.entry(order).or_insert_with(|| Arc::new(build_gauss_legendre(order))).clone()
}

fn build_gauss_legendre(order: u32) -> Vec<(f64, f64)> {
    let n = order as usize;
    let nf = order as f64;
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-flavored initial guess, then Newton on P_n.
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(order, x);
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_derivative(order, x);
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        rule.push((x, w));
    }
    rule.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite nodes"));
    rule
}

fn legendre_with_derivative(l: u32, x: f64) -> (f64, f64) {
    let mut pkm1 = 1.0;
    let mut pk = x;
    if l == 0 {
        return (1.0, 0.0);
    }
    for k in 1..l {
        let kf = k as f64;
        let pkp1 = ((2.0 * kf + 1.0) * x * pk - kf * pkm1) / (kf + 1.0);
        pkm1 = pk;
        pk = pkp1;
    }
    let d = l as f64 * (x * pk - pkm1) / (x * x - 1.0);
    (pk, d)
}

/// Moment of the singular kernel over [0, pi/4] against a scalar integrand.
///
/// The caller certifies f(theta) = O(theta^p) near zero with p > 2s, which
/// makes beta * f integrable. Accuracy target is `spec.rel_tol` relative.
pub fn integrate_beta_moment(
    f: impl Fn(f64) -> f64,
    vanish_order: f64,
    params: &KernelParams,
    spec: &QuadratureSpec,
) -> Result<f64> {
    let g = |theta: f64, out: &mut [Complex64]| out[0] = Complex64::new(f(theta), 0.0);
    let v = integrate_beta_moment_vec(g, 1, vanish_order, 0.0, params, spec, "beta moment")?;
    Ok(v[0].re)
}

/// Levels used to calibrate the integrand scale sup |f| / theta^p; the
/// signal dominates rounding noise on the outer panels.
const SCALE_CALIBRATION_LEVELS: u32 = 10;

/// Vector-valued variant of [`integrate_beta_moment`]; all components share
/// the outer graded mesh.
///
/// Convergence per real channel: the running total (panel sum plus the
/// closed-form geometric tail once the increment ratio is clean) must settle,
/// or the certified tail bound kappa * C * hi^{p-2s} / (p-2s) must drop below
/// tolerance, where C = sup |f| / theta^p is measured on the outer panels.
/// The same certificate caps every deep-level increment: a measured panel
/// value exceeding its certified bound is rounding noise amplified by the
/// kernel weight (the true mass is below the bound), so it is discarded and
/// the bound charged to an error budget instead. `abs_tol` is the absolute
/// accuracy floor below which a channel is considered resolved; callers with
/// channels that are exact zeros by symmetry derive it from an a-priori
/// bound on the integral scale.
pub(crate) fn integrate_beta_moment_vec(
    f: impl Fn(f64, &mut [Complex64]),
    dim: usize,
    vanish_order: f64,
    abs_tol: f64,
    params: &KernelParams,
    spec: &QuadratureSpec,
    what: &str,
) -> Result<Vec<Complex64>> {
    spec.validate()?;
    if !(vanish_order > 2.0 * params.s) {
        return Err(Error::Precondition(format!(
            "vanish order {vanish_order} does not exceed 2s = {}",
            2.0 * params.s
        )));
    }
    let a = PI / 4.0;
    let r = spec.grading_ratio;
    let rule = gauss_legendre(spec.panel_order);
    let nch = 2 * dim; // real channels
    let mut sum = vec![0.0_f64; nch];
    let mut inc = vec![0.0_f64; nch];
    let mut inc_prev = vec![0.0_f64; nch];
    let mut total_prev = vec![f64::INFINITY; nch];
    let mut budget = vec![0.0_f64; nch];
    let mut fbuf = vec![Complex64::ZERO; dim];
    let mut ln_f_scale = f64::NEG_INFINITY;
    let gamma = vanish_order - 2.0 * params.s;
    let mut hi = a;
    for level in 0..spec.max_levels {
        let lo = a * r.powi(level as i32 + 1);
        std::mem::swap(&mut inc_prev, &mut inc);
        inc.iter_mut().for_each(|v| *v = 0.0);
        for &(x, w) in rule.iter() {
            let theta = 0.5 * ((hi - lo) * x + (hi + lo));
            let wt = 0.5 * (hi - lo) * w * params.beta(theta);
            fbuf.iter_mut().for_each(|v| *v = Complex64::ZERO);
            f(theta, &mut fbuf);
            let mut fmax = 0.0_f64;
            for (i, v) in fbuf.iter().enumerate() {
                inc[2 * i] += wt * v.re;
                inc[2 * i + 1] += wt * v.im;
                fmax = fmax.max(v.re.abs()).max(v.im.abs());
            }
            if fmax > 0.0 && vanish_order.is_finite() && level < SCALE_CALIBRATION_LEVELS {
                ln_f_scale = ln_f_scale.max(fmax.ln() - vanish_order * theta.ln());
            }
        }
        let certified = vanish_order.is_finite() && ln_f_scale.is_finite();
        if certified && level >= SCALE_CALIBRATION_LEVELS {
            // certified panel bound: int_panel beta C theta^p
            let panel_bound = (params.kappa_beta.ln() + ln_f_scale).exp()
                * (hi.powf(gamma) - lo.powf(gamma))
                / gamma;
            for i in 0..nch {
                if inc[i].abs() > 4.0 * panel_bound {
                    inc[i] = 0.0;
                    budget[i] += panel_bound;
                }
            }
        }
        for i in 0..nch {
            sum[i] += inc[i];
        }
        hi = lo;
        if level < 2 {
            continue;
        }
        // certified bound on the not-yet-integrated segment (0, hi)
        let ln_tail_bound = if certified {
            params.kappa_beta.ln() + ln_f_scale + gamma * hi.ln() - gamma.ln()
        } else {
            f64::NEG_INFINITY
        };
        let row_scale = sum.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut all_done = true;
        let mut total = vec![0.0_f64; nch];
        for i in 0..nch {
            let tail = geometric_tail(inc[i], inc_prev[i]);
            total[i] = sum[i] + tail;
            let scale = total[i].abs().max(1e-3 * row_scale).max(f64::MIN_POSITIVE);
            let thresh = (0.5 * spec.rel_tol * scale).max(abs_tol);
            let settled = (total[i] - total_prev[i]).abs() <= thresh;
            let tail_negligible = ln_tail_bound <= thresh.ln();
            if !((settled || tail_negligible) && budget[i] <= thresh) {
                all_done = false;
            }
        }
        if all_done {
            let out = (0..dim)
                .map(|i| Complex64::new(total[2 * i], total[2 * i + 1]))
                .collect();
            return Ok(out);
        }
        total_prev = total;
    }
    Err(Error::NonConvergence { what: what.to_string(), levels: spec.max_levels })
}

/// Closed-form sum of the remaining geometric tail, when the measured
/// increment ratio is clean; zero otherwise.
fn geometric_tail(inc: f64, inc_prev: f64) -> f64 {
    if inc == 0.0 || inc_prev == 0.0 {
        return 0.0;
    }
    let rho = inc / inc_prev;
    if rho > 0.0 && rho < 0.97 {
        inc * rho / (1.0 - rho)
    } else {
        0.0
    }
}

/// Product quadrature on the unit sphere, exact for spherical polynomials
/// of total degree <= `degree`. Nodes use the first coordinate as polar
/// axis; weights sum to 4 pi.
pub fn sphere_quadrature(degree: u32) -> Result<Arc<Vec<([f64; 3], f64)>>> {
    if degree > 256 {
        return Err(Error::Domain(format!("sphere rule degree {degree} exceeds 256")));
    }
    static CACHE: OnceLock<Mutex<HashMap<u32, Arc<Vec<([f64; 3], f64)>>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("sphere rule cache poisoned");
    Ok(guard
        .entry(degree)
        .or_insert_with(|| Arc::new(build_sphere_rule(degree)))
        .clone())
}

fn build_sphere_rule(degree: u32) -> Vec<([f64; 3], f64)> {
    let n_polar = degree / 2 + 1; // ceil((degree+1)/2)
    let n_az = degree as usize + 1;
    let polar = gauss_legendre(n_polar);
    let mut nodes = Vec::with_capacity(n_polar as usize * n_az);
    let waz = 2.0 * PI / n_az as f64;
    for &(x, w) in polar.iter() {
        let st = (1.0 - x * x).max(0.0).sqrt();
        for j in 0..n_az {
            let phi = 2.0 * PI * j as f64 / n_az as f64;
            nodes.push(([x, st * phi.cos(), st * phi.sin()], w * waz));
        }
    }
    nodes
}

/// Mean of a trigonometric polynomial of degree <= `trig_degree` over a
/// period, by the exact uniform rule.
pub fn azimuthal_average(g: impl Fn(f64) -> Complex64, trig_degree: u32) -> Complex64 {
    let n = trig_degree as usize + 1;
    let mut acc = Complex64::ZERO;
    for j in 0..n {
        acc += g(2.0 * PI * j as f64 / n as f64);
    }
    acc / n as f64
}

/// Uniform azimuthal nodes for a given trig degree (used where the
/// integrand is evaluated in a batched sweep rather than via a closure).
pub(crate) fn azimuthal_nodes(trig_degree: u32) -> Vec<f64> {
    let n = trig_degree as usize + 1;
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specialfn::{sph_harm_dir, sph_harm_norm};
    use approx::assert_abs_diff_eq;

    #[test]
    fn gauss_rule_integrates_polynomials() {
        let rule = gauss_legendre(8);
        // exact through degree 15
        for k in 0..=15u32 {
            let got: f64 = rule.iter().map(|&(x, w)| w * x.powi(k as i32)).sum();
            let want = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            assert_abs_diff_eq!(got, want, epsilon = 1e-14);
        }
    }

    #[test]
    fn beta_moment_power_identity() {
        // f = theta^{1+2s} makes the integrand constant kappa_beta
        for &s in &[0.3, 0.5, 0.8] {
            let params = KernelParams::new(s, 1.7).unwrap();
            let spec = QuadratureSpec::default();
            let v = integrate_beta_moment(
                |t| t.powf(1.0 + 2.0 * s),
                1.0 + 2.0 * s,
                &params,
                &spec,
            )
            .unwrap();
            assert_abs_diff_eq!(v, 1.7 * PI / 4.0, epsilon = 1e-12 * v.abs());
        }
    }

    #[test]
    fn beta_moment_frozen_oracle() {
        // int_0^{pi/4} theta^{-2} sin^2 cos^2 dtheta, 40-digit oracle
        let params = KernelParams::new(0.5, 1.0).unwrap();
        let spec = QuadratureSpec::default();
        let v = integrate_beta_moment(
            |t| (t.sin() * t.cos()).powi(2),
            2.0,
            &params,
            &spec,
        )
        .unwrap();
        let want = 0.6076586398074424136427592;
        assert!((v - want).abs() <= 1e-10 * want, "got {v}, want {want}");
    }

    #[test]
    fn beta_moment_frozen_oracle_other_exponents() {
        let cases = [(0.25, 0.3306418859363886718529426), (0.75, 1.528196672527166913118181)];
        for (s, want) in cases {
            let params = KernelParams::new(s, 1.0).unwrap();
            let v = integrate_beta_moment(
                |t| (t.sin() * t.cos()).powi(2),
                2.0,
                &params,
                &QuadratureSpec::default(),
            )
            .unwrap();
            assert!((v - want).abs() <= 1e-10 * want, "s={s}: got {v}, want {want}");
        }
    }

    #[test]
    fn beta_moment_identically_zero_integrand() {
        let params = KernelParams::new(0.5, 1.0).unwrap();
        let v = integrate_beta_moment(
            |t| 1.0 - t.sin().powi(2) - t.cos().powi(2),
            f64::INFINITY,
            &params,
            &QuadratureSpec::default(),
        )
        .unwrap();
        assert!(v.abs() <= 1e-14, "got {v}");
    }

    #[test]
    fn beta_moment_rejects_non_integrable_order() {
        let params = KernelParams::new(0.5, 1.0).unwrap();
        let err = integrate_beta_moment(|t| t, 0.4, &params, &QuadratureSpec::default());
        assert!(matches!(err, Err(Error::Precondition(_))));
    }

    #[test]
    fn grading_convergence_under_doubled_levels() {
        // doubling max_levels changes the lambda_{0,2}-type moment by < rel_tol
        for &s in &[0.25, 0.5, 0.75] {
            let params = KernelParams::new(s, 1.0).unwrap();
            let f = |t: f64| 2.0 * (t.sin() * t.cos()).powi(2);
            let spec = QuadratureSpec::default();
            let double = QuadratureSpec { max_levels: 80, ..spec };
            let a = integrate_beta_moment(f, 2.0, &params, &spec).unwrap();
            let b = integrate_beta_moment(f, 2.0, &params, &double).unwrap();
            assert!((a - b).abs() <= spec.rel_tol * b.abs(), "s = {s}: {a} vs {b}");
        }
    }

    #[test]
    fn sphere_rule_weight_sum_and_orthogonality() {
        let rule = sphere_quadrature(0).unwrap();
        let total: f64 = rule.iter().map(|&(_, w)| w).sum();
        assert_abs_diff_eq!(total, 4.0 * PI, epsilon = 1e-13);

        // integral of Y_3^2 over the sphere vanishes
        let rule = sphere_quadrature(6).unwrap();
        let y32: Complex64 = rule
            .iter()
            .map(|&(v, w)| w * sph_harm_dir(3, 2, v).unwrap())
            .sum();
        assert!(y32.norm() < 1e-14);

        // |Y_4^{-3}|^2 integrates to 1
        let rule = sphere_quadrature(8).unwrap();
        let n43: f64 = rule
            .iter()
            .map(|&(v, w)| w * sph_harm_dir(4, -3, v).unwrap().norm_sqr())
            .sum();
        assert_abs_diff_eq!(n43, 1.0, epsilon = 1e-13);
    }

    #[test]
    fn sphere_rule_exactness_degree() {
        let degree = 8u32;
        let rule = sphere_quadrature(degree).unwrap();
        for l in 0..=degree / 2 {
            for lp in 0..=degree / 2 {
                for m in -(l.min(lp) as i32)..=l.min(lp) as i32 {
                    let got: Complex64 = rule
                        .iter()
                        .map(|&(v, w)| {
                            w * sph_harm_dir(l, m, v).unwrap()
                                * sph_harm_dir(lp, m, v).unwrap().conj()
                        })
                        .sum();
                    let want = if l == lp { 1.0 } else { 0.0 };
                    assert!(
                        (got - want).norm() < 1e-12,
                        "l={l} lp={lp} m={m}: {got}"
                    );
                }
            }
        }
    }

    #[test]
    fn azimuthal_average_rules() {
        let c = Complex64::new(0.3, -1.2);
        assert_eq!(azimuthal_average(|_| c, 0), c);
        let v = azimuthal_average(|p| Complex64::from_polar(1.0, 3.0 * p), 3);
        assert!(v.norm() < 1e-15);
        // |Y_2^1(theta0, phi)|^2 at fixed theta0 averages to N^2 P_2^1(cos)^2
        let theta0 = 0.9_f64;
        let n21 = sph_harm_norm(2, 1);
        let p21 = crate::specialfn::assoc_legendre(2, 1, theta0.cos()).unwrap();
        let avg = azimuthal_average(
            |p| {
                let y = crate::specialfn::sph_harm(2, 1, theta0, p).unwrap();
                Complex64::new(y.norm_sqr(), 0.0)
            },
            4,
        );
        assert_abs_diff_eq!(avg.re, (n21 * p21).powi(2), epsilon = 1e-14);
    }
}
