//! Problem specification shared by every solver: controlled jump-diffusion
//! coefficients, the impulse intervention (response, cash flow, friction),
//! player objectives and the solvency box, plus sampled validation of the
//! standing regularity assumptions.
//!
//! Conventions used throughout the crate:
//! - state vectors are fixed-size `[f64; 4]` with `dim` live components;
//! - payoffs are stored in stationary form: the realized bequest at time `s`
//!   is `e^{-delta s} * bequest(x)`, a running reward accrues as
//!   `e^{-delta s} * running(x) ds`, and an impulse of size `z` executed at
//!   time `s` adds `e^{-delta s} * impulse_cash(z)` to the objective;
//! - the intervention operator optimizes `phi(response(x, z)) + impulse_cash(z)`
//!   in the controller's sense, so for a minimizing controller `impulse_cash`
//!   is the positive intervention price of the classical setup, while for a
//!   maximizing controller it is the (signed) gain per impulse;
//! - `friction(s, z)` is the strictly positive price of interrupting the
//!   system, the object the fixed-floor and subadditivity assumptions
//!   constrain. For minimizing controllers it coincides with `impulse_cash`.

use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub const MAX_DIM: usize = 4;
pub type State = [f64; MAX_DIM];

pub type ScalarField = Arc<dyn Fn(&State) -> f64 + Send + Sync>;
pub type DriftFn = Arc<dyn Fn(f64, &State) -> State + Send + Sync>;
pub type VolFn = Arc<dyn Fn(f64, &State) -> [[f64; MAX_DIM]; MAX_DIM] + Send + Sync>;
pub type JumpFn = Arc<dyn Fn(&State, f64) -> State + Send + Sync>;
pub type ResponseFn = Arc<dyn Fn(&State, f64) -> State + Send + Sync>;
pub type CashFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type FrictionFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;
pub type StatePredicate = Arc<dyn Fn(&State) -> bool + Send + Sync>;
pub type ImpulseMap = Arc<dyn Fn(&State) -> f64 + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("non-finite coefficient value in {field} at sampled state {state:?}")]
    NonFinite { field: &'static str, state: Vec<f64> },
    #[error("zero-sum game needs opposite player senses")]
    SensesNotOpposite,
    #[error("state dimension {0} out of range (1..=4)")]
    BadDimension(usize),
    #[error("impulse set needs z_hi > z_lo >= 0, got [{0}, {1}]")]
    BadImpulseSet(f64, f64),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

impl Sense {
    pub fn opposite(self) -> Sense {
        match self {
            Sense::Minimize => Sense::Maximize,
            Sense::Maximize => Sense::Minimize,
        }
    }

    /// +1 for Minimize, -1 for Maximize; multiplying by it maps "better for
    /// this player" to "smaller".
    pub fn sign(self) -> f64 {
        match self {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        }
    }
}

/// One jump atom of the finite-activity measure: a mark value and its
/// arrival intensity.
#[derive(Debug, Clone, Copy)]
pub struct JumpAtom {
    pub mark: f64,
    pub intensity: f64,
}

/// Coefficients `dX_i = X_i (alpha_i dt + sum_k sigma_{ik} dB_k)` for the
/// exact-exponential simulation scheme.
#[derive(Debug, Clone, Copy)]
pub struct GeometricCoeffs {
    pub log_drift: [f64; MAX_DIM],
    pub sigma: [[f64; MAX_DIM]; MAX_DIM],
}

#[derive(Clone)]
pub struct LevyDiffusionSpec {
    pub dim: usize,
    /// Number of independent Brownian drivers; volatility rows use columns
    /// `0..drivers`.
    pub drivers: usize,
    pub drift: DriftFn,
    pub volatility: VolFn,
    pub jump_amplitude: JumpFn,
    pub atoms: Vec<JumpAtom>,
    pub horizon: f64,
    /// Set when the coefficients are geometric, enabling the
    /// exact-exponential scheme.
    pub geometric: Option<GeometricCoeffs>,
}

impl LevyDiffusionSpec {
    pub fn total_intensity(&self) -> f64 {
        self.atoms.iter().map(|a| a.intensity).sum()
    }

    pub fn check_basic(&self) -> Result<(), ModelError> {
        if self.dim == 0 || self.dim > MAX_DIM {
            return Err(ModelError::BadDimension(self.dim));
        }
        if self.atoms.iter().any(|a| a.intensity < 0.0 || !a.intensity.is_finite()) {
            return Err(ModelError::Invalid("jump intensities must be finite and >= 0".into()));
        }
        if !(self.horizon > 0.0) {
            return Err(ModelError::Invalid("horizon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone)]
pub struct InterventionSpec {
    pub z_lo: f64,
    pub z_hi: f64,
    pub response: ResponseFn,
    /// Stationary signed cash flow per impulse entering the objective.
    pub impulse_cash: CashFn,
    /// Positive intervention price used by the A.3/A.4 checks.
    pub friction: FrictionFn,
    pub cost_floor: f64,
}

impl InterventionSpec {
    pub fn check_basic(&self) -> Result<(), ModelError> {
        // a singleton set (z_lo == z_hi) is allowed
        if !(self.z_hi >= self.z_lo) || self.z_lo < 0.0 {
            return Err(ModelError::BadImpulseSet(self.z_lo, self.z_hi));
        }
        if !(self.cost_floor > 0.0) {
            return Err(ModelError::Invalid("cost_floor must be positive".into()));
        }
        Ok(())
    }
}

/// One player's stationary objective pieces.
#[derive(Clone)]
pub struct PlayerObjective {
    pub running: Option<ScalarField>,
    pub bequest: ScalarField,
    pub impulse_cash: CashFn,
    pub sense: Sense,
}

impl PlayerObjective {
    pub fn running_at(&self, x: &State) -> f64 {
        self.running.as_ref().map_or(0.0, |f| f(x))
    }
}

#[derive(Clone)]
pub enum GamePayoffs {
    /// One objective; the controller optimizes it in `objective.sense`, the
    /// stopper in the opposite direction.
    ZeroSum { objective: PlayerObjective },
    /// Decoupled objectives; each player maximizes (or minimizes) their own.
    NonZeroSum { controller: PlayerObjective, stopper: PlayerObjective },
}

#[derive(Debug, Clone, Copy)]
pub struct SolvencyBox {
    pub lo: State,
    pub hi: State,
}

impl SolvencyBox {
    pub fn all(dim: usize) -> Self {
        let mut lo = [f64::NEG_INFINITY; MAX_DIM];
        let mut hi = [f64::INFINITY; MAX_DIM];
        for d in dim..MAX_DIM {
            lo[d] = 0.0;
            hi[d] = 0.0;
        }
        SolvencyBox { lo, hi }
    }

    pub fn contains(&self, dim: usize, x: &State) -> bool {
        (0..dim).all(|d| x[d] > self.lo[d] && x[d] < self.hi[d])
    }
}

#[derive(Clone)]
pub struct GameSpec {
    pub diffusion: LevyDiffusionSpec,
    pub intervention: InterventionSpec,
    pub payoffs: GamePayoffs,
    pub discount: f64,
    pub solvency: SolvencyBox,
}

impl GameSpec {
    pub fn new(
        diffusion: LevyDiffusionSpec,
        intervention: InterventionSpec,
        payoffs: GamePayoffs,
        discount: f64,
        solvency: SolvencyBox,
    ) -> Result<Self, ModelError> {
        diffusion.check_basic()?;
        intervention.check_basic()?;
        if !(discount > 0.0 && discount <= 1.0) {
            return Err(ModelError::Invalid("discount must be in (0, 1]".into()));
        }
        Ok(GameSpec { diffusion, intervention, payoffs, discount, solvency })
    }

    pub fn controller_sense(&self) -> Sense {
        match &self.payoffs {
            GamePayoffs::ZeroSum { objective } => objective.sense,
            GamePayoffs::NonZeroSum { controller, .. } => controller.sense,
        }
    }

    pub fn stopper_sense(&self) -> Sense {
        match &self.payoffs {
            GamePayoffs::ZeroSum { objective } => objective.sense.opposite(),
            GamePayoffs::NonZeroSum { stopper, .. } => stopper.sense,
        }
    }

    /// The objective the shared value function optimizes (zero-sum), or the
    /// controller's objective (non-zero-sum).
    pub fn controller_objective(&self) -> &PlayerObjective {
        match &self.payoffs {
            GamePayoffs::ZeroSum { objective } => objective,
            GamePayoffs::NonZeroSum { controller, .. } => controller,
        }
    }

    pub fn stopper_objective(&self) -> &PlayerObjective {
        match &self.payoffs {
            GamePayoffs::ZeroSum { objective } => objective,
            GamePayoffs::NonZeroSum { stopper, .. } => stopper,
        }
    }
}

/// Threshold policy for the impulse controller: act on `act_region`, with
/// the impulse size given by `target`. Applying the impulse from any
/// act-region state must land back in the continuation region.
#[derive(Clone)]
pub struct ThresholdImpulsePolicy {
    pub act_region: StatePredicate,
    pub target: ImpulseMap,
}

#[derive(Clone)]
pub struct StopPolicy {
    pub stop_region: StatePredicate,
}

// ---------------------------------------------------------------------------
// Sampled validation of the standing assumptions.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ValidationConfig {
    pub samples: usize,
    pub seed: u64,
    /// Sampling box for states (per live dimension).
    pub domain_lo: State,
    pub domain_hi: State,
    pub lipschitz_drift: f64,
    pub lipschitz_vol: f64,
    pub growth_drift: f64,
    pub growth_vol: f64,
    /// Exponent of the growth bound `|mu| <= d (1 + |x|^p)`.
    pub growth_power: f64,
    pub tolerance: f64,
}

impl ValidationConfig {
    pub fn with_domain(lo: State, hi: State) -> Self {
        ValidationConfig {
            samples: 10_000,
            seed: 0x5eed,
            domain_lo: lo,
            domain_hi: hi,
            lipschitz_drift: 1.0,
            lipschitz_vol: 1.0,
            growth_drift: 1.0,
            growth_vol: 1.0,
            growth_power: 1.0,
            tolerance: 1e-9,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub id: &'static str,
    pub passed: bool,
    pub worst: f64,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<22} {}  worst={:.6e}  {}",
                c.id,
                if c.passed { "pass" } else { "FAIL" },
                c.worst,
                c.detail
            )?;
        }
        Ok(())
    }
}

fn norm(dim: usize, x: &State) -> f64 {
    (0..dim).map(|d| x[d] * x[d]).sum::<f64>().sqrt()
}

fn sample_state(rng: &mut ChaCha8Rng, cfg: &ValidationConfig, dim: usize) -> State {
    let mut x = [0.0; MAX_DIM];
    for d in 0..dim {
        x[d] = rng.gen_range(cfg.domain_lo[d]..cfg.domain_hi[d]);
    }
    x
}

/// Runs the sampled checks of the standing assumptions on `spec` and
/// returns a per-assumption report. Deterministic given `cfg.seed`.
/// Non-finite coefficient values are a hard error.
pub fn validate_spec(spec: &GameSpec, cfg: &ValidationConfig) -> Result<ValidationReport, ModelError> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = spec.diffusion.dim;
    let t_hi = spec.diffusion.horizon;
    let mut checks = Vec::new();

    let finite = |v: f64, field: &'static str, x: &State| -> Result<f64, ModelError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ModelError::NonFinite { field, state: x[..dim].to_vec() })
        }
    };

    // A.1.1 Lipschitz + A.2 growth on drift / volatility / jump amplitude.
    let mut worst_lip_mu = 0.0f64;
    let mut worst_lip_sg = 0.0f64;
    let mut worst_grow_mu = 0.0f64;
    let mut worst_grow_sg = 0.0f64;
    for _ in 0..cfg.samples {
        let s = rng.gen_range(0.0..t_hi);
        let x = sample_state(&mut rng, cfg, dim);
        let y = sample_state(&mut rng, cfg, dim);
        let mux = (spec.diffusion.drift)(s, &x);
        let muy = (spec.diffusion.drift)(s, &y);
        let sgx = (spec.diffusion.volatility)(s, &x);
        let sgy = (spec.diffusion.volatility)(s, &y);
        let mut dmu = [0.0; MAX_DIM];
        let mut dsg = [0.0; MAX_DIM];
        let mut mu_norm = [0.0; MAX_DIM];
        let mut sg_norm = [0.0; MAX_DIM];
        for d in 0..dim {
            finite(mux[d], "drift", &x)?;
            dmu[d] = mux[d] - muy[d];
            mu_norm[d] = mux[d];
            for k in 0..spec.diffusion.drivers {
                finite(sgx[d][k], "volatility", &x)?;
                dsg[d] += (sgx[d][k] - sgy[d][k]).powi(2);
                sg_norm[d] += sgx[d][k] * sgx[d][k];
            }
            dsg[d] = dsg[d].sqrt();
            sg_norm[d] = sg_norm[d].sqrt();
        }
        let dist = norm(dim, &{
            let mut dx = [0.0; MAX_DIM];
            for d in 0..dim {
                dx[d] = x[d] - y[d];
            }
            dx
        });
        if dist > 1e-12 {
            worst_lip_mu = worst_lip_mu.max(norm(dim, &dmu) / dist);
            worst_lip_sg = worst_lip_sg.max(norm(dim, &dsg) / dist);
        }
        let growth_den = 1.0 + norm(dim, &x).powf(cfg.growth_power);
        worst_grow_mu = worst_grow_mu.max(norm(dim, &mu_norm) / growth_den);
        worst_grow_sg = worst_grow_sg.max(norm(dim, &sg_norm) / growth_den);
        for atom in &spec.diffusion.atoms {
            let gx = (spec.diffusion.jump_amplitude)(&x, atom.mark);
            for d in 0..dim {
                finite(gx[d], "jump_amplitude", &x)?;
            }
        }
    }
    let slack = 1.0 + cfg.tolerance;
    checks.push(CheckResult {
        id: "A.1.1-lipschitz-drift",
        passed: worst_lip_mu <= cfg.lipschitz_drift * slack,
        worst: worst_lip_mu,
        detail: format!("bound c_mu = {}", cfg.lipschitz_drift),
    });
    checks.push(CheckResult {
        id: "A.1.1-lipschitz-vol",
        passed: worst_lip_sg <= cfg.lipschitz_vol * slack,
        worst: worst_lip_sg,
        detail: format!("bound c_sigma = {}", cfg.lipschitz_vol),
    });
    checks.push(CheckResult {
        id: "A.2-growth-drift",
        passed: worst_grow_mu <= cfg.growth_drift * slack,
        worst: worst_grow_mu,
        detail: format!("bound d_mu = {}, power {}", cfg.growth_drift, cfg.growth_power),
    });
    checks.push(CheckResult {
        id: "A.2-growth-vol",
        passed: worst_grow_sg <= cfg.growth_vol * slack,
        worst: worst_grow_sg,
        detail: format!("bound d_sigma = {}, power {}", cfg.growth_vol, cfg.growth_power),
    });

    // A.3: friction subadditive in z, nonincreasing in time.
    let iv = &spec.intervention;
    let draw_z = |rng: &mut ChaCha8Rng| {
        if iv.z_hi > iv.z_lo {
            rng.gen_range(iv.z_lo..iv.z_hi)
        } else {
            iv.z_lo
        }
    };
    let mut worst_sub = f64::NEG_INFINITY;
    let mut worst_time = f64::NEG_INFINITY;
    for _ in 0..cfg.samples {
        let s = rng.gen_range(0.0..t_hi);
        let s2 = rng.gen_range(s..=t_hi);
        let z1 = draw_z(&mut rng);
        let z2 = draw_z(&mut rng);
        let zsum = (z1 + z2).min(iv.z_hi);
        let c1 = finite((iv.friction)(s, z1), "friction", &[z1, 0.0, 0.0, 0.0])?;
        let c2 = (iv.friction)(s, z2);
        if z1 + z2 <= iv.z_hi {
            worst_sub = worst_sub.max((iv.friction)(s, zsum) - c1 - c2);
        }
        worst_time = worst_time.max((iv.friction)(s2, z1) - c1);
    }
    checks.push(CheckResult {
        id: "A.3-subadditive",
        passed: worst_sub <= cfg.tolerance,
        worst: worst_sub,
        detail: "friction(s, z+z') - friction(s, z) - friction(s, z')".into(),
    });
    checks.push(CheckResult {
        id: "A.3-time-nonincreasing",
        passed: worst_time <= cfg.tolerance,
        worst: worst_time,
        detail: "friction(s', z) - friction(s, z) for s <= s'".into(),
    });

    // A.4: positive friction floor. The impulse-set endpoints are probed
    // explicitly since the infimum often sits there.
    let mut min_friction = f64::INFINITY;
    for _ in 0..cfg.samples {
        let s = rng.gen_range(0.0..t_hi);
        let z = draw_z(&mut rng);
        min_friction = min_friction.min((iv.friction)(s, z));
        min_friction = min_friction.min((iv.friction)(s, iv.z_lo));
        min_friction = min_friction.min((iv.friction)(t_hi, iv.z_lo));
    }
    checks.push(CheckResult {
        id: "A.4-cost-floor",
        passed: min_friction >= iv.cost_floor - cfg.tolerance,
        worst: min_friction,
        detail: format!("declared floor lambda_c = {:.6e}", iv.cost_floor),
    });

    // Bequest decay: e^{-delta s} G -> 0 as s grows.
    let obj = spec.controller_objective();
    let mut worst_decay = 0.0f64;
    for _ in 0..(cfg.samples / 10).max(8) {
        let x = sample_state(&mut rng, cfg, dim);
        let g0 = finite((obj.bequest)(&x), "bequest", &x)?;
        let far = (-spec.discount * 1e3).exp() * g0;
        worst_decay = worst_decay.max(far.abs());
    }
    checks.push(CheckResult {
        id: "bequest-decay",
        passed: worst_decay <= cfg.tolerance.max(1e-6),
        worst: worst_decay,
        detail: "e^{-delta s} G(x) at s = 1e3".into(),
    });

    // Zero-sum sense invariant.
    if let GamePayoffs::ZeroSum { .. } = spec.payoffs {
        if spec.controller_sense() == spec.stopper_sense() {
            return Err(ModelError::SensesNotOpposite);
        }
    }

    Ok(ValidationReport { checks })
}
