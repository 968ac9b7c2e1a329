//! Many-server (Halfin–Whitt) limits of the departure ratio for `M/M/s/K`
//! with `(1 − ρ)√s → β` and `K/√s → η`.
//!
//! At β = 0 the limit is the closed form `2/3 − L(η)`. Elsewhere it is
//! assembled from `h`, a one-dimensional integral `f` and a closed-form `g`.
//! Arguments with `|β| < BETA_SWITCH` are routed to the critical branch.

use std::f64::consts::{FRAC_PI_2, LN_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quadrature::{integrate, truncation_point};
use crate::special::{mills_ratio, normal_cdf, normal_pdf, normal_sf, SQRT_2PI};

/// Below this |β| the noncritical expressions are ill-conditioned (h ~ 1/β).
pub const BETA_SWITCH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QedParams {
    pub beta: f64,
    pub eta: f64,
}

impl QedParams {
    pub fn new(beta: f64, eta: f64) -> Result<Self> {
        let p = Self { beta, eta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.beta.is_finite() {
            return Err(invalid(format!("beta must be finite, got {}", self.beta)));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("eta must be positive and finite, got {}", self.eta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// β treated as 0.
    Critical,
    Noncritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QedEvaluation {
    pub params: QedParams,
    /// `None` on the critical branch, where h, f and g are not defined.
    pub h_value: Option<f64>,
    pub f_value: Option<f64>,
    pub g_value: Option<f64>,
    pub ratio: f64,
    pub branch: Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Improper integrals are cut where the integrand envelope drops below this.
    pub truncation_tail_mass: f64,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self { abs_tol: 1e-10, rel_tol: 1e-10, truncation_tail_mass: 1e-14 }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("abs_tol", self.abs_tol),
            ("rel_tol", self.rel_tol),
            ("truncation_tail_mass", self.truncation_tail_mass),
        ] {
            if !(v > 0.0 && v < 1e-3) {
                return Err(invalid(format!("{name} must lie in (0, 1e-3), got {v}")));
            }
        }
        Ok(())
    }
}

fn check_eta(eta: f64, allow_zero: bool) -> Result<()> {
    let ok = eta.is_finite() && (eta > 0.0 || (allow_zero && eta == 0.0));
    if ok {
        Ok(())
    } else {
        Err(invalid(format!("eta must be {} and finite, got {eta}", if allow_zero { "non-negative" } else { "positive" })))
    }
}

fn check_noncritical(eta: f64, beta: f64) -> Result<()> {
    check_eta(eta, false)?;
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    if beta.abs() < BETA_SWITCH {
        return Err(Error::CriticalBeta(beta));
    }
    Ok(())
}

/// `L(η) = [(2 − π/2)η + √(2π)(1 − log 2 − π/12)] / (η + √(π/2))³`.
pub fn l_eta(eta: f64) -> Result<f64> {
    check_eta(eta, true)?;
    let denom = eta + FRAC_PI_2.sqrt();
    Ok(((2.0 - FRAC_PI_2) * eta + SQRT_2PI * (1.0 - LN_2 - PI / 12.0)) / (denom * denom * denom))
}

/// Critical-load limit `2/3 − L(η)`.
pub fn d0(eta: f64) -> Result<f64> {
    Ok(2.0 / 3.0 - l_eta(eta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtaStar {
    /// Closed-form minimiser `√(2π)(log 8 − 2)/(4 − π)`.
    pub argmin: f64,
    pub minimum: f64,
    /// Golden-section minimiser of `d0` on `[0, 10]`.
    pub numeric_argmin: f64,
}

/// Location and value of the minimum of `d0`.
pub fn eta_star() -> EtaStar {
    eta_star_of(|x| d0(x).expect("non-negative eta"))
}

/// [`eta_star`] for an arbitrary stand-in of `d0`, so a perturbed curve can be
/// checked against the closed-form minimiser.
pub fn eta_star_of<F: Fn(f64) -> f64>(curve: F) -> EtaStar {
    let argmin = SQRT_2PI * (8.0_f64.ln() - 2.0) / (4.0 - PI);
    let numeric_argmin = golden_section(&curve, 0.0, 10.0, 1e-12);
    EtaStar { argmin, minimum: curve(argmin), numeric_argmin }
}

fn golden_section<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// `φ(β)(1 − e^{−βη}) + βΦ(β)`, so that `h = φ(β)/q` and `h/φ(β) = 1/q`.
fn h_denominator(eta: f64, beta: f64) -> f64 {
    // φ(β)e^{−βη} is formed as one exponential so it cannot overflow early.
    normal_pdf(beta) - (-0.5 * beta * beta - beta * eta).exp() / SQRT_2PI + beta * normal_cdf(beta)
}

/// `h(η, β) = 1/(1 − e^{−βη} + βΦ(β)/φ(β))`.
pub fn h_fn(eta: f64, beta: f64) -> Result<f64> {
    check_noncritical(eta, beta)?;
    let h = if beta > 0.0 {
        // Φ(β)/φ(β) overflows for large β; the φ-scaled form does not.
        normal_pdf(beta) / h_denominator(eta, beta)
    } else {
        1.0 / (-(-beta * eta).exp_m1() + beta * mills_ratio(-beta)?)
    };
    if !h.is_finite() {
        return Err(Error::NonFinite("h"));
    }
    Ok(h)
}

/// `f(η, β) = ∫_{−β}^∞ (1 − βe^{−βη}h·Φ(−u)/φ(u)) Φ(−u) du`.
pub fn f_fn(eta: f64, beta: f64, config: &QuadratureConfig) -> Result<f64> {
    config.validate()?;
    let h = h_fn(eta, beta)?;
    let coeff = beta * (-beta * eta).exp() * h;
    f_integral(coeff, beta, config)
}

fn f_integral(coeff: f64, beta: f64, config: &QuadratureConfig) -> Result<f64> {
    let integrand = |u: f64| {
        let sf = normal_sf(u);
        // mills_ratio only fails far below the integration range used here.
        (1.0 - coeff * mills_ratio(u).unwrap_or(f64::INFINITY)) * sf
    };
    let lower = -beta;
    let envelope = |u: f64| normal_sf(u) * (1.0 + coeff.abs() * mills_ratio(u).unwrap_or(f64::INFINITY));
    let start = lower.max(0.0);
    let upper = truncation_point(envelope, start, 1.0, config.truncation_tail_mass);
    let mut total = 0.0;
    if lower < 0.0 {
        total += integrate(integrand, lower, 0.0, config.abs_tol, config.rel_tol)?.value;
    }
    total += integrate(integrand, start, upper, config.abs_tol, config.rel_tol)?.value;
    if !total.is_finite() {
        return Err(Error::NonFinite("f"));
    }
    Ok(total)
}

/// `g(η, β) = 2Eh(1 + Eh)(1 − βη − E + (1 − 2βηE − E²)h)` with `E = e^{−βη}`.
pub fn g_fn(eta: f64, beta: f64) -> Result<f64> {
    let h = h_fn(eta, beta)?;
    Ok(g_from(eta, beta, h))
}

fn g_from(eta: f64, beta: f64, h: f64) -> f64 {
    let bn = beta * eta;
    let e = (-bn).exp();
    let eh = e * h;
    2.0 * eh * (1.0 + eh) * (1.0 - bn - e + (1.0 - 2.0 * bn * e - e * e) * h)
}

/// Limit of the departure ratio in the many-server regime.
pub fn d_beta_eta(eta: f64, beta: f64, config: &QuadratureConfig) -> Result<QedEvaluation> {
    let params = QedParams::new(beta, eta)?;
    config.validate()?;
    if beta.abs() < BETA_SWITCH {
        return Ok(QedEvaluation {
            params,
            h_value: None,
            f_value: None,
            g_value: None,
            ratio: d0(eta)?,
            branch: Branch::Critical,
        });
    }
    let h = h_fn(eta, beta)?;
    let e = (-beta * eta).exp();
    let f = f_integral(beta * e * h, beta, config)?;
    let g = g_from(eta, beta, h);
    // β²E h²/φ(β) = β²E·h·(h/φ(β)), with h/φ(β) = 1/q free of the 1/φ blow-up.
    let weight = beta * beta * e * h / h_denominator(eta, beta);
    let ratio = 1.0 - 2.0 * weight * f + g;
    if !ratio.is_finite() {
        return Err(Error::NonFinite("departure ratio limit"));
    }
    Ok(QedEvaluation {
        params,
        h_value: Some(h),
        f_value: Some(f),
        g_value: Some(g),
        ratio,
        branch: Branch::Noncritical,
    })
}

/// Limiting probability of delay `(1 − e^{−βη}) h(η, β)`; `η/(η + √(π/2))` at β = 0.
pub fn delay_prob_limit(eta: f64, beta: f64) -> Result<f64> {
    QedParams::new(beta, eta)?;
    if beta.abs() < BETA_SWITCH {
        return Ok(eta / (eta + FRAC_PI_2.sqrt()));
    }
    Ok(-(-beta * eta).exp_m1() * h_fn(eta, beta)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IPlus {
    /// `∫_0^∞ Φ(−u)[1 − e^{u²/2}Φ(−u)] du` by quadrature.
    pub quadrature: f64,
    /// `(1 − log√2)/√(2π)`.
    pub closed_form: f64,
    /// `√(2π)(1 − log√2)`, the constant as printed, which is too large to
    /// be the integral: the integrand is dominated by Φ(−u).
    pub printed_constant: f64,
    /// True when the printed constant disagrees with the quadrature.
    pub printed_is_inconsistent: bool,
}

pub fn i_plus(config: &QuadratureConfig) -> Result<IPlus> {
    config.validate()?;
    let integrand = |u: f64| {
        let sf = normal_sf(u);
        sf * (1.0 - mills_ratio(u).unwrap_or(0.0) / SQRT_2PI)
    };
    let upper = truncation_point(normal_sf, 0.0, 1.0, config.truncation_tail_mass);
    let quadrature = integrate(integrand, 0.0, upper, config.abs_tol, config.rel_tol)?.value;
    let log_sqrt2 = 0.5 * LN_2;
    let closed_form = (1.0 - log_sqrt2) / SQRT_2PI;
    let printed_constant = SQRT_2PI * (1.0 - log_sqrt2);
    Ok(IPlus {
        quadrature,
        closed_form,
        printed_constant,
        printed_is_inconsistent: (printed_constant - quadrature).abs() > 1e-6,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JBeta {
    pub beta: f64,
    /// `∫_β^∞ e^{u²/2} Φ(−u)² du` by direct quadrature of the Mills form.
    pub direct: f64,
    /// The same value from the semi-closed forms, which only integrate
    /// Gaussian-weighted logarithms.
    pub semi_closed: f64,
}

/// `J_0 = log√2/√(2π)`.
pub fn j_zero() -> f64 {
    0.5 * LN_2 / SQRT_2PI
}

/// The integral `∫_β^∞ e^{u²/2} Φ(−u)² du`, evaluated two independent ways.
pub fn j_beta(beta: f64, config: &QuadratureConfig) -> Result<JBeta> {
    config.validate()?;
    if !beta.is_finite() {
        return Err(invalid(format!("beta must be finite, got {beta}")));
    }
    Ok(JBeta { beta, direct: j_direct(beta, config)?, semi_closed: j_semi_closed(beta, config)? })
}

fn j_direct(beta: f64, config: &QuadratureConfig) -> Result<f64> {
    let integrand = |u: f64| mills_ratio(u).unwrap_or(f64::INFINITY) * normal_sf(u) / SQRT_2PI;
    let start = beta.max(0.0);
    let upper = truncation_point(integrand, start, 1.0, config.truncation_tail_mass);
    let mut total = 0.0;
    if beta < 0.0 {
        total += integrate(integrand, beta, 0.0, config.abs_tol, config.rel_tol)?.value;
    }
    total += integrate(integrand, start, upper, config.abs_tol, config.rel_tol)?.value;
    Ok(total)
}

/// `∫_lo^∞ e^{−y²/2} log(1 + a²/y²) dy / (2π)`.
fn log_gauss_tail(a: f64, lo: f64, config: &QuadratureConfig) -> Result<f64> {
    let integrand = |y: f64| (-0.5 * y * y).exp() * (a * a / (y * y)).ln_1p() / (2.0 * PI);
    let envelope = |y: f64| (-0.5 * y * y).exp() * (a * a / (y * y)).ln_1p();
    let upper = truncation_point(envelope, lo.max(1.0), 1.0, config.truncation_tail_mass);
    let mut total = 0.0;
    // The logarithmic singularity at y = 0 is kept at an interval endpoint.
    let knot = a.min(upper);
    if lo < knot {
        total += integrate(integrand, lo, knot, config.abs_tol, config.rel_tol)?.value;
    }
    total += integrate(integrand, knot.max(lo), upper, config.abs_tol, config.rel_tol)?.value;
    Ok(total)
}

/// `∫_0^a e^{u²/2} du`, as `e^{a²/2} ∫_0^a e^{(u² − a²)/2} du`.
fn scaled_exp_square_integral(a: f64, config: &QuadratureConfig) -> Result<f64> {
    let inner = integrate(|u: f64| (0.5 * (u * u - a * a)).exp(), 0.0, a, config.abs_tol, config.rel_tol)?.value;
    Ok((0.5 * a * a).exp() * inner)
}

fn j_semi_closed(beta: f64, config: &QuadratureConfig) -> Result<f64> {
    if beta == 0.0 {
        return Ok(j_zero());
    }
    let a = beta.abs();
    // Substituting y = a·x in the β > 0 form turns ∫_1^∞ into ∫_a^∞.
    let positive = normal_sf(a) * LN_2 / SQRT_2PI - log_gauss_tail(a, a, config)?;
    if beta > 0.0 {
        return Ok(positive);
    }
    // Reflection u → −u splits the negative half-line into J_0-type pieces,
    // the growing ∫_0^a e^{u²/2} du, and ∫_0^a e^{u²/2}Φ(−u) du.
    let reflected = 2.0 * log_gauss_tail(a, 0.0, config)?;
    Ok(2.0 * j_zero() - positive + scaled_exp_square_integral(a, config)? - reflected)
}
