//! Closed-form machinery for the capital-injection / market-exit problem.
//!
//! State: `y0` time, `y1` firm liquidity (geometric with rate `e*r`, noise
//! `sigma_f`, finite-activity relative jumps), `y2` investor wealth
//! (geometric with drift `gamma_drift`, noise `pi*sigma_i`), `y3` the
//! exponential density process driven by the same noise as `y1`.
//!
//! The stationary value separates into a wealth claim in `y2` and an exit
//! claim in `omega = y1*y3`:
//!
//!   psi(y) = e^{-delta y0} y3 [ phi2(y2) + a omega^k ]      while running,
//!   psi(y) = e^{-delta y0} (g1 omega + lambda_t + g2 y2)    after exit,
//!
//! with `phi2(y2) = c (y2^{d1} - y2^{d2})` below the injection trigger and
//! its cost-adjusted affine continuation above it. Injections reset wealth
//! to `y_hat` and pay `alpha_i z - kappa_i` per injection; exit happens on
//! `omega <= omega_star`.

use std::sync::Arc;

use thiserror::Error;

use crate::model::{
    GamePayoffs, GameSpec, InterventionSpec, JumpAtom, LevyDiffusionSpec, PlayerObjective, Sense,
    SolvencyBox, State, MAX_DIM,
};
use crate::num::{self, NumError};

#[derive(Debug, Error)]
pub enum InvestorError {
    #[error("invalid parameter: {0}")]
    BadParameter(String),
    #[error(
        "exponent equation has no root in (0,1): p(0) = -delta = {minus_delta} < 0 and the slope \
         e*r - sigma_f^2 + jump correction = {rate} must exceed delta = {delta}"
    )]
    NoExponentRoot { minus_delta: f64, rate: f64, delta: f64 },
    #[error("jump atom with 1 + gamma_f <= 0 (gamma_f = {0})")]
    BadJumpAtom(f64),
    #[error("density-kernel root search failed: {0}")]
    Theta1(String),
    #[error(transparent)]
    Root(#[from] NumError),
    #[error("wealth smooth-fit system did not converge: {0}")]
    SmoothFit(String),
    #[error("state components y1, y2 must be positive, got ({0}, {1})")]
    DomainError(f64, f64),
}

#[derive(Debug, Clone)]
pub struct Example2Params {
    /// Firm expenditure rate `e`.
    pub expenditure: f64,
    /// Firm return on capital `r`.
    pub return_rate: f64,
    pub sigma_f: f64,
    /// Relative firm jump sizes with their intensities (`mark` is the jump
    /// amplitude itself).
    pub atoms: Vec<JumpAtom>,
    pub sigma_i: f64,
    /// Fraction of wealth in risky assets.
    pub risky_fraction: f64,
    /// Wealth drift `(1-pi) r0 + pi mu_r`.
    pub gamma_drift: f64,
    pub delta: f64,
    pub kappa_i: f64,
    pub alpha_i: f64,
    pub g1: f64,
    pub g2: f64,
    pub lambda_t: f64,
    pub horizon: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Example2Params {
            expenditure: 2.0,
            return_rate: 0.1,
            sigma_f: 0.3,
            atoms: Vec::new(),
            sigma_i: 0.4,
            risky_fraction: 0.25,
            gamma_drift: 0.0325,
            delta: 0.05,
            kappa_i: 0.05,
            alpha_i: 0.6,
            g1: 0.8,
            g2: 0.7,
            lambda_t: 1.0,
            horizon: 10.0,
        }
    }
}

impl Example2Params {
    pub fn wealth_vol(&self) -> f64 {
        self.risky_fraction * self.sigma_i
    }

    pub fn check(&self) -> Result<(), InvestorError> {
        let er = self.expenditure * self.return_rate;
        if !(self.expenditure > 0.0 && self.return_rate > 0.0 && self.return_rate < 1.0) {
            return Err(InvestorError::BadParameter("need e > 0 and r in (0,1)".into()));
        }
        if !(self.sigma_f > 0.0 && self.sigma_i > 0.0) {
            return Err(InvestorError::BadParameter("volatilities must be positive".into()));
        }
        if !(self.g1 > 0.0 && self.g1 <= 1.0) || self.g2 < 0.0 || self.g2 > 1.0 {
            return Err(InvestorError::BadParameter("need g1 in (0,1], g2 in [0,1]".into()));
        }
        if !(self.lambda_t > 0.0) {
            return Err(InvestorError::BadParameter("lambda_t must be positive".into()));
        }
        if !(self.kappa_i > 0.0 && self.alpha_i > 0.0) {
            return Err(InvestorError::BadParameter("costs must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(InvestorError::BadParameter("delta must be in (0,1]".into()));
        }
        // with jumps present the discounted return must dominate the
        // volatility: e > (r / sigma_f^2)^{-1}
        if !self.atoms.is_empty() && er <= self.sigma_f * self.sigma_f {
            return Err(InvestorError::BadParameter(format!(
                "jump case needs expenditure > sigma_f^2 / r (e*r = {er}, sigma_f^2 = {})",
                self.sigma_f * self.sigma_f
            )));
        }
        for a in &self.atoms {
            if 1.0 + a.mark <= 0.0 {
                return Err(InvestorError::BadJumpAtom(a.mark));
            }
        }
        Ok(())
    }
}

/// Affine exponent function `p(k) = -delta + rate * k` of the exit claim.
#[derive(Debug, Clone, Copy)]
pub struct ExponentFn {
    pub delta: f64,
    /// `e*r - sigma_f^2 + sum_j nu_j (theta1_j - gamma_j)`
    pub rate: f64,
}

impl ExponentFn {
    pub fn eval(&self, k: f64) -> f64 {
        -self.delta + self.rate * k
    }
}

/// Density jump kernel per atom: solves `sum_j nu_j (Xi_j^k - 1) = 0` with
/// `Xi_j = (1 - theta1_j)(1 + gamma_j)` under the one-parameter family
/// `theta1_j = 1 - eta / (1 + gamma_j)`, which makes `Xi_j = eta` for every
/// atom; the root is `eta = 1`, found by bracketed search for robustness.
pub fn solve_theta1(atoms: &[JumpAtom], k: f64) -> Result<Vec<f64>, InvestorError> {
    if atoms.is_empty() {
        return Ok(Vec::new());
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(InvestorError::Theta1(format!("need k in (0,1), got {k}")));
    }
    for a in atoms {
        if 1.0 + a.mark <= 0.0 {
            return Err(InvestorError::BadJumpAtom(a.mark));
        }
    }
    let total: f64 = atoms.iter().map(|a| a.intensity).sum();
    if total == 0.0 {
        return Ok(atoms.iter().map(|_| 0.0).collect());
    }
    let h = |eta: f64| -> f64 { total * (eta.powf(k) - 1.0) };
    let eta = num::find_root_scan("theta1-eta", h, 1e-6, 16.0, 200, true, 1e-14)
        .map_err(|e| InvestorError::Theta1(e.to_string()))?;
    Ok(atoms.iter().map(|a| 1.0 - eta / (1.0 + a.mark)).collect())
}

/// Exit-claim exponent: alternates the density-kernel condition with the
/// root of `p(k) = 0` on (0,1) until the exponent is fixed.
pub fn solve_exponent(params: &Example2Params) -> Result<(f64, ExponentFn, Vec<f64>), InvestorError> {
    params.check()?;
    let er = params.expenditure * params.return_rate;
    let base = er - params.sigma_f * params.sigma_f;
    let mut k = 0.5;
    for _ in 0..64 {
        let theta1 = solve_theta1(&params.atoms, k)?;
        let corr: f64 = params
            .atoms
            .iter()
            .zip(&theta1)
            .map(|(a, th)| a.intensity * (th - a.mark))
            .sum();
        let rate = base + corr;
        if rate <= params.delta {
            return Err(InvestorError::NoExponentRoot {
                minus_delta: -params.delta,
                rate,
                delta: params.delta,
            });
        }
        let k_new = params.delta / rate;
        if (k_new - k).abs() < 1e-10 {
            let theta1 = solve_theta1(&params.atoms, k_new)?;
            let pfn = ExponentFn { delta: params.delta, rate };
            return Ok((k_new, pfn, theta1));
        }
        k = k_new;
    }
    Err(InvestorError::SmoothFit("exponent fixed point did not settle in 64 sweeps".into()))
}

#[derive(Debug, Clone)]
pub struct Example2Solution {
    pub params: Example2Params,
    pub k: f64,
    pub a: f64,
    pub omega_star: f64,
    pub d1: f64,
    pub d2: f64,
    pub c: f64,
    /// Injection target: wealth resets here.
    pub y_hat: f64,
    /// Injection trigger: inject on `y2 >= y_tilde`.
    pub y_tilde: f64,
    /// Diffusion kernel of the density process (= sigma_f).
    pub theta0: f64,
    /// Jump kernel per atom.
    pub theta1: Vec<f64>,
    pub p_fn: ExponentFn,
}

fn wealth_exponents(params: &Example2Params) -> (f64, f64) {
    let v2 = params.wealth_vol() * params.wealth_vol();
    let half = params.gamma_drift / v2 - 0.5;
    let disc = (half * half + 2.0 * params.delta / v2).sqrt();
    (-half - disc, -half + disc)
}

fn phi2_raw(c: f64, d1: f64, d2: f64, y: f64) -> f64 {
    c * (y.powf(d1) - y.powf(d2))
}

fn dphi2_raw(c: f64, d1: f64, d2: f64, y: f64) -> f64 {
    c * (d1 * y.powf(d1 - 1.0) - d2 * y.powf(d2 - 1.0))
}

/// Both roots of `phi2'(y) = alpha_i` for a scale `c < 0`, around the
/// slope's interior minimum. Returns `None` when the slope never dips below
/// `alpha_i`.
fn slope_roots(c: f64, d1: f64, d2: f64, alpha_i: f64) -> Option<(f64, f64)> {
    let y_min = ((d1.abs() * (1.0 - d1)) / (d2 * (d2 - 1.0))).powf(1.0 / (d2 - d1));
    let f = |y: f64| dphi2_raw(c, d1, d2, y) - alpha_i;
    if f(y_min) >= 0.0 {
        return None;
    }
    let mut lo = y_min;
    for _ in 0..2000 {
        lo *= 0.5;
        if f(lo) >= 0.0 {
            break;
        }
    }
    if f(lo) < 0.0 {
        return None;
    }
    let y_hat = num::brent("y_hat", f, lo, y_min, 1e-15, 200).ok()?;
    let mut hi = y_min;
    for _ in 0..2000 {
        hi *= 2.0;
        if f(hi) >= 0.0 {
            break;
        }
    }
    if f(hi) < 0.0 {
        return None;
    }
    let y_tilde = num::brent("y_tilde", f, y_min, hi, 1e-13 * hi, 200).ok()?;
    Some((y_hat, y_tilde))
}

pub fn solve(params: &Example2Params) -> Result<Example2Solution, InvestorError> {
    let (k, p_fn, theta1) = solve_exponent(params)?;
    let omega_star = params.lambda_t * k / (params.g1 * (1.0 - k));
    // pinned by value matching and tangency at omega_star
    let a = (params.g1 / k) * omega_star.powf(1.0 - k);
    let (d1, d2) = wealth_exponents(params);
    if !(d1 < 0.0 && d2 > 1.0) {
        return Err(InvestorError::BadParameter(format!(
            "wealth exponents d1 = {d1:.6}, d2 = {d2:.6}: need d1 < 0 < 1 < d2 \
             (gamma_drift below delta) for the two-threshold structure"
        )));
    }

    // Scan the wealth scale c < 0 for the continuity residual's sign change,
    // then polish the full three-equation system with damped Newton.
    let ai = params.alpha_i;
    let ki = params.kappa_i;
    let resid_c = |c: f64| -> Option<f64> {
        let (yh, yt) = slope_roots(c, d1, d2, ai)?;
        Some(phi2_raw(c, d1, d2, yt) - phi2_raw(c, d1, d2, yh) - (ai * (yt - yh) - ki))
    };
    let mut prev: Option<(f64, f64)> = None;
    let mut bracket = None;
    for i in 0..600 {
        let c = -1e-6 * 10f64.powf(i as f64 / 40.0);
        let Some(v) = resid_c(c) else { continue };
        if let Some((cp, vp)) = prev {
            if vp * v < 0.0 {
                bracket = Some((cp, c));
                break;
            }
        }
        prev = Some((c, v));
    }
    let (clo, chi) = bracket.ok_or_else(|| {
        InvestorError::SmoothFit(
            "no wealth scale c < 0 balances the continuity equation on the scanned range \
             [-1e-6, -1e9]"
                .into(),
        )
    })?;
    let c0 = num::brent("wealth-scale", |c| resid_c(c).unwrap_or(f64::NAN), clo, chi, 1e-14, 200)?;
    let (yh0, yt0) = slope_roots(c0, d1, d2, ai)
        .ok_or_else(|| InvestorError::SmoothFit("slope roots vanished during polish".into()))?;

    let f = |u: &[f64; 3]| -> [f64; 3] {
        let (c, yh, yt) = (u[0], u[1], u[2]);
        [
            dphi2_raw(c, d1, d2, yh) - ai,
            dphi2_raw(c, d1, d2, yt) - ai,
            phi2_raw(c, d1, d2, yt) - phi2_raw(c, d1, d2, yh) - (ai * (yt - yh) - ki),
        ]
    };
    let jac = |u: &[f64; 3]| -> [[f64; 3]; 3] {
        let (c, yh, yt) = (u[0], u[1], u[2]);
        let ddphi = |y: f64| {
            c * (d1 * (d1 - 1.0) * y.powf(d1 - 2.0) - d2 * (d2 - 1.0) * y.powf(d2 - 2.0))
        };
        [
            [dphi2_raw(1.0, d1, d2, yh), ddphi(yh), 0.0],
            [dphi2_raw(1.0, d1, d2, yt), 0.0, ddphi(yt)],
            [
                (yt.powf(d1) - yt.powf(d2)) - (yh.powf(d1) - yh.powf(d2)),
                -dphi2_raw(c, d1, d2, yh) + ai,
                dphi2_raw(c, d1, d2, yt) - ai,
            ],
        ]
    };
    let u = num::newton3("wealth-smooth-fit", f, jac, [c0, yh0, yt0], 1e-12, 200)
        .map_err(|e| InvestorError::SmoothFit(e.to_string()))?;
    let (c, y_hat, y_tilde) = (u[0], u[1], u[2]);
    if !(y_hat < y_tilde) {
        return Err(InvestorError::SmoothFit(format!(
            "threshold ordering violated: y_hat = {y_hat}, y_tilde = {y_tilde}"
        )));
    }

    Ok(Example2Solution {
        params: params.clone(),
        k,
        a,
        omega_star,
        d1,
        d2,
        c,
        y_hat,
        y_tilde,
        theta0: params.sigma_f,
        theta1,
        p_fn,
    })
}

/// Region of the investor state space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InvestorRegion {
    /// `omega <= omega_star`: sell out.
    Exit,
    /// `y2 >= y_tilde`, still in the market: inject down to `y_hat`.
    Inject,
    Continue,
}

impl Example2Solution {
    /// Smooth wealth claim `c (y^{d1} - y^{d2})` of the continuation region.
    pub fn phi2_smooth(&self, y: f64) -> f64 {
        phi2_raw(self.c, self.d1, self.d2, y)
    }

    pub fn dphi2_smooth(&self, y: f64) -> f64 {
        dphi2_raw(self.c, self.d1, self.d2, y)
    }

    /// Piecewise wealth claim: smooth below the trigger, cost-adjusted reset
    /// value above it (continuous and C^1 by the smooth-fit system).
    pub fn wealth_claim(&self, y: f64) -> f64 {
        if y < self.y_tilde {
            self.phi2_smooth(y)
        } else {
            self.phi2_smooth(self.y_hat) + self.params.alpha_i * (y - self.y_hat)
                - self.params.kappa_i
        }
    }

    /// Exit claim `a omega^k` on the running region, `g1 omega + lambda_t`
    /// after exit.
    pub fn exit_claim(&self, omega: f64) -> f64 {
        if omega <= self.omega_star {
            self.params.g1 * omega + self.params.lambda_t
        } else {
            self.a * omega.powf(self.k)
        }
    }

    pub fn region(&self, y2: f64, omega: f64) -> InvestorRegion {
        let eps = 1e-12 * (1.0 + omega.abs().max(y2.abs()));
        if omega <= self.omega_star + eps {
            InvestorRegion::Exit
        } else if y2 >= self.y_tilde - eps {
            InvestorRegion::Inject
        } else {
            InvestorRegion::Continue
        }
    }

    /// Full value at `(y0, y1, y2, y3)`.
    pub fn value(&self, y0: f64, y1: f64, y2: f64, y3: f64) -> Result<f64, InvestorError> {
        if !(y1 > 0.0 && y2 > 0.0) {
            return Err(InvestorError::DomainError(y1, y2));
        }
        let p = &self.params;
        let disc = (-p.delta * y0).exp();
        let omega = y1 * y3;
        Ok(match self.region(y2, omega) {
            InvestorRegion::Exit => disc * (p.g1 * omega + p.lambda_t + p.g2 * y2),
            _ => disc * y3 * (self.wealth_claim(y2) + self.a * omega.powf(self.k)),
        })
    }

    /// One exact step of the density process: stochastic exponential of
    /// `-theta0 dB - sum_j theta1_j dN~_j`. `jump_hits` lists the atom index
    /// of every jump that occurred in the step.
    pub fn q_process_step(&self, q: f64, dt: f64, dw: f64, jump_hits: &[usize]) -> f64 {
        let compensator: f64 = self
            .params
            .atoms
            .iter()
            .zip(&self.theta1)
            .map(|(a, th)| a.intensity * th)
            .sum();
        let mut q_next =
            q * (-self.theta0 * dw - 0.5 * self.theta0 * self.theta0 * dt + compensator * dt).exp();
        for &j in jump_hits {
            q_next *= 1.0 - self.theta1[j];
        }
        q_next
    }

    /// The reduced two-dimensional game in `(y2, omega)` coordinates for the
    /// grid modules. At the equilibrium density kernel the jump factor of
    /// omega is exactly 1, leaving a deterministic transport with rate
    /// `delta / k`; wealth keeps its geometric diffusion.
    pub fn reduced_game_spec(&self) -> GameSpec {
        let p = self.params.clone();
        let gam = p.gamma_drift;
        let wvol = p.wealth_vol();
        let rate = self.p_fn.rate; // = delta / k
        let drift: crate::model::DriftFn = Arc::new(move |_s, x: &State| {
            let mut out = [0.0; MAX_DIM];
            out[0] = gam * x[0];
            out[1] = rate * x[1];
            out
        });
        let vol: crate::model::VolFn = Arc::new(move |_s, x: &State| {
            let mut out = [[0.0; MAX_DIM]; MAX_DIM];
            out[0][0] = wvol * x[0];
            out
        });
        let jump: crate::model::JumpFn = Arc::new(|_x, _z| [0.0; MAX_DIM]);
        let diffusion = LevyDiffusionSpec {
            dim: 2,
            drivers: 1,
            drift,
            volatility: vol,
            jump_amplitude: jump,
            atoms: Vec::new(),
            horizon: p.horizon,
            geometric: None,
        };
        let response: crate::model::ResponseFn = Arc::new(|x: &State, z: f64| {
            let mut out = *x;
            out[0] = x[0] - z;
            out
        });
        let (ai, ki, delta) = (p.alpha_i, p.kappa_i, p.delta);
        let cash: crate::model::CashFn = Arc::new(move |z: f64| ai * z - ki);
        let friction: crate::model::FrictionFn =
            Arc::new(move |s: f64, z: f64| (-delta * s).exp() * (ki + ai * z));
        let intervention = InterventionSpec {
            z_lo: 1e-9,
            z_hi: 50.0 * self.y_tilde,
            response,
            impulse_cash: cash.clone(),
            friction,
            cost_floor: (-delta * p.horizon).exp() * ki * 0.999,
        };
        let g2 = p.g2;
        let controller = PlayerObjective {
            running: None,
            bequest: Arc::new(move |x: &State| g2 * x[0]),
            impulse_cash: cash,
            sense: Sense::Maximize,
        };
        let (g1, lt) = (p.g1, p.lambda_t);
        let stopper = PlayerObjective {
            running: None,
            bequest: Arc::new(move |x: &State| g1 * x[1] + lt),
            impulse_cash: Arc::new(|_z| 0.0),
            sense: Sense::Minimize,
        };
        let mut solvency = SolvencyBox::all(2);
        solvency.lo[0] = 0.0;
        solvency.lo[1] = 0.0;
        GameSpec::new(
            diffusion,
            intervention,
            GamePayoffs::NonZeroSum { controller, stopper },
            delta,
            solvency,
        )
        .expect("investor reduced game is well formed")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // 40-digit reference values, computed independently.
    const REF_K: f64 = 5.0 / 11.0;
    const REF_WSTAR: f64 = 25.0 / 24.0;
    const REF_A: f64 = 1.799_628_674_210_420_9;
    const REF_D1: f64 = -6.940_763_653_560_052_5;
    const REF_D2: f64 = 1.440_763_653_560_052_5;
    const REF_C: f64 = -0.275_428_517_828_063_33;
    const REF_YHAT: f64 = 1.388_025_150_856_808;
    const REF_YTILDE: f64 = 2.543_697_756_062_127;

    #[test]
    fn no_jump_exponent_is_exact_ratio() {
        let p = Example2Params::default();
        let (k, pfn, theta) = solve_exponent(&p).unwrap();
        let er = p.expenditure * p.return_rate;
        assert_eq!(k, p.delta / (er - p.sigma_f * p.sigma_f));
        assert!((k - REF_K).abs() < 1e-15);
        assert!(theta.is_empty());
        assert!(pfn.eval(0.0) == -p.delta && pfn.eval(0.0) < 0.0);
        assert!(pfn.eval(k).abs() < 1e-16);
    }

    #[test]
    fn spec_ratio_example() {
        // e*r = 0.2, sigma_f^2 = 0.1, delta = 0.05 -> k = 0.5
        let mut p = Example2Params::default();
        p.sigma_f = 0.1f64.sqrt();
        let (k, _, _) = solve_exponent(&p).unwrap();
        assert!((k - 0.5).abs() < 1e-12);
    }

    #[test]
    fn single_atom_theta1_closed_form() {
        let atoms = [JumpAtom { mark: 0.2, intensity: 0.5 }];
        let th = solve_theta1(&atoms, 0.5).unwrap();
        assert!((th[0] - (1.0 - 1.0 / 1.2)).abs() < 1e-12);
        // Xi = (1-theta)(1+gamma) = 1 exactly
        let xi = (1.0 - th[0]) * 1.2;
        assert!((xi - 1.0).abs() < 1e-12);
        assert!((xi.powf(0.5) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_amplitude_atom_gives_zero_kernel() {
        let atoms = [JumpAtom { mark: 0.0, intensity: 0.7 }];
        let th = solve_theta1(&atoms, 0.4).unwrap();
        assert!(th[0].abs() < 1e-12);
    }

    #[test]
    fn multi_atom_residual_vanishes() {
        let atoms =
            [JumpAtom { mark: 0.2, intensity: 0.5 }, JumpAtom { mark: -0.1, intensity: 0.3 }];
        let k = 0.45;
        let th = solve_theta1(&atoms, k).unwrap();
        let resid: f64 = atoms
            .iter()
            .zip(&th)
            .map(|(a, t)| a.intensity * (((1.0 - t) * (1.0 + a.mark)).powf(k) - 1.0))
            .sum();
        assert!(resid.abs() < 1e-12, "residual {resid:e}");
    }

    #[test]
    fn jump_fixed_point_reference() {
        let mut p = Example2Params::default();
        p.atoms = vec![JumpAtom { mark: 0.2, intensity: 0.5 }];
        let (k, pfn, th) = solve_exponent(&p).unwrap();
        assert!((k - 15.0 / 28.0).abs() < 1e-12, "k = {k}");
        assert!(pfn.eval(k).abs() < 1e-12);
        assert!((th[0] - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn exponent_error_cites_sign_structure() {
        let mut p = Example2Params::default();
        p.expenditure = 0.6; // e*r - sigma_f^2 = 0.06 - 0.09 < 0 < delta
        let err = solve_exponent(&p).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("p(0)") && msg.contains("-delta"), "{msg}");
    }

    #[test]
    fn solve_matches_reference_constants() {
        let sol = solve(&Example2Params::default()).unwrap();
        assert!((sol.k - REF_K).abs() < 1e-14);
        assert!((sol.omega_star - REF_WSTAR).abs() < 1e-12);
        assert!((sol.a - REF_A).abs() < 1e-12);
        assert!((sol.d1 - REF_D1).abs() < 1e-11);
        assert!((sol.d2 - REF_D2).abs() < 1e-11);
        assert!((sol.c - REF_C).abs() < 1e-9, "c = {}", sol.c);
        assert!((sol.y_hat - REF_YHAT).abs() < 1e-8, "y_hat = {}", sol.y_hat);
        assert!((sol.y_tilde - REF_YTILDE).abs() < 1e-8, "y_tilde = {}", sol.y_tilde);
        assert_eq!(sol.theta0, sol.params.sigma_f);
        assert!(sol.y_hat < sol.y_tilde);
    }

    #[test]
    fn wealth_exponents_satisfy_quadratic() {
        let p = Example2Params::default();
        let sol = solve(&p).unwrap();
        let v2 = p.wealth_vol() * p.wealth_vol();
        for d in [sol.d1, sol.d2] {
            let r = -p.delta + p.gamma_drift * d + 0.5 * v2 * d * (d - 1.0);
            assert!(r.abs() < 1e-10, "characteristic residual {r:e}");
        }
        assert!(sol.d1 < 0.0 && sol.d2 > 0.0 && sol.d1 != sol.d2);
    }

    #[test]
    fn smooth_fit_residuals_vanish() {
        let p = Example2Params::default();
        let sol = solve(&p).unwrap();
        let r1 = sol.dphi2_smooth(sol.y_hat) - p.alpha_i;
        let r2 = sol.dphi2_smooth(sol.y_tilde) - p.alpha_i;
        let r3 = sol.phi2_smooth(sol.y_tilde)
            - sol.phi2_smooth(sol.y_hat)
            - (p.alpha_i * (sol.y_tilde - sol.y_hat) - p.kappa_i);
        assert!(r1.abs() < 1e-9, "{r1:e}");
        assert!(r2.abs() < 1e-9, "{r2:e}");
        assert!(r3.abs() < 1e-9, "{r3:e}");
    }

    #[test]
    fn exit_claim_high_contact() {
        let sol = solve(&Example2Params::default()).unwrap();
        let p = &sol.params;
        let v = sol.a * sol.omega_star.powf(sol.k) - (p.g1 * sol.omega_star + p.lambda_t);
        let s = sol.a * sol.k * sol.omega_star.powf(sol.k - 1.0) - p.g1;
        assert!(v.abs() < 1e-12, "value matching {v:e}");
        assert!(s.abs() < 1e-12, "tangency {s:e}");
    }

    #[test]
    fn value_matches_at_both_boundaries() {
        let sol = solve(&Example2Params::default()).unwrap();
        // exit boundary: omega-part of the running branch equals the payout
        let w = sol.omega_star;
        assert!((sol.exit_claim(w * (1.0 + 1e-13)) - (sol.params.g1 * w + sol.params.lambda_t)).abs() < 1e-9);
        // injection boundary: running branches agree across y_tilde
        let y3 = 1.3;
        let y1 = 2.0;
        let below = sol.value(0.0, y1, sol.y_tilde * (1.0 - 1e-13), y3).unwrap();
        let above = sol.value(0.0, y1, sol.y_tilde * (1.0 + 1e-13), y3).unwrap();
        assert!((below - above).abs() < 1e-9, "{below} vs {above}");
    }

    #[test]
    fn bounded_wealth_branch_vanishes_at_zero() {
        let sol = solve(&Example2Params::default()).unwrap();
        // the d2 branch (the one bounded near zero) goes to 0 with y2
        let bounded = -sol.c * 1e-8f64.powf(sol.d2);
        assert!(bounded.abs() < 1e-10);
    }

    #[test]
    fn value_rejects_nonpositive_states() {
        let sol = solve(&Example2Params::default()).unwrap();
        assert!(sol.value(0.0, -1.0, 1.0, 1.0).is_err());
        assert!(sol.value(0.0, 1.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn q_step_deterministic_factor() {
        let sol = solve(&Example2Params::default()).unwrap();
        let q = 1.7;
        let dt = 0.01;
        // no noise, no jumps: pure exponential drift of the kernel
        let q2 = sol.q_process_step(q, dt, 0.0, &[]);
        let sf = sol.params.sigma_f;
        assert!((q2 - q * (-0.5 * sf * sf * dt).exp()).abs() < 1e-15);
    }

    #[test]
    fn q_step_degenerate_volatility_is_constant() {
        let mut p = Example2Params::default();
        let sol = solve(&p).unwrap();
        p.sigma_f = 0.0; // only the step uses sigma via theta0
        let mut frozen = sol.clone();
        frozen.theta0 = 0.0;
        assert_eq!(frozen.q_process_step(2.5, 0.3, 0.0, &[]), 2.5);
    }

    #[test]
    fn reported_constants_stable() {
        let a = solve(&Example2Params::default()).unwrap();
        let b = solve(&Example2Params::default()).unwrap();
        assert_eq!(a.c.to_bits(), b.c.to_bits());
        assert_eq!(a.y_tilde.to_bits(), b.y_tilde.to_bits());
    }
}
