//! Periodic viscous Burgers equation `u_t = ν u_xx − κ u u_x` on `[−L/2, L/2)`
//! split into a diffusion part, solved exactly in Fourier space, and an
//! advection part, solved by Lax–Wendroff substeps in conservative form.
//!
//! Operator 1 is diffusion, operator 2 is advection.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::integrator::{
    integrate_adaptive, milne_step, split_step, AdaptiveRun, IntegrateError, SplitProblem,
    StepController, StepError, StepTrace, SubflowError,
};
use crate::optimizer::{derive_milne_partner, OptimizeError};
use crate::schemes::{registry_scheme, MilnePair, SchemeTable};

/// Final time of the shock run.
pub const SHOCK_T_END: f64 = 0.3179;
pub const HAT_HEIGHT: f64 = 1.5;
/// Reference solutions use this many basic-scheme steps per study step.
pub const REFERENCE_SUBSTEPS: usize = 256;
/// Allowed gap between the two reference solutions, relative to `e(h)`.
pub const REFERENCE_TOL: f64 = 0.01;

#[derive(Debug, Clone, Error)]
pub enum BurgersError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Step(#[from] StepError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(
        "reference solutions at h/{REFERENCE_SUBSTEPS} and h/{} differ by {gap:e}, more than {REFERENCE_TOL} of e(h) = {error:e} (h = {h})",
        2 * REFERENCE_SUBSTEPS
    )]
    ReferenceInconsistent { h: f64, gap: f64, error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BurgersConfig {
    /// Grid points, a power of two.
    pub n: usize,
    /// Domain length `L`.
    pub length: f64,
    /// Advection strength `κ`.
    pub kappa: f64,
    /// Diffusion coefficient `ν`.
    pub viscosity: f64,
    /// Inner Courant number bound for the advection substeps.
    pub cfl_safety: f64,
}

impl Default for BurgersConfig {
    fn default() -> Self {
        BurgersConfig {
            n: 1024,
            length: 4.0,
            kappa: 0.01,
            viscosity: 1.0,
            cfl_safety: 0.9,
        }
    }
}

impl BurgersConfig {
    /// Advection-dominated setting in which the unit hat breaks at
    /// `t = 1/(1.5κ) ≈ 0.267`, shortly before [`SHOCK_T_END`].
    pub fn shock() -> Self {
        BurgersConfig {
            kappa: 2.5,
            viscosity: 0.01,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), BurgersError> {
        let bad = |m: &str| Err(BurgersError::Config(m.to_string()));
        if !self.n.is_power_of_two() || self.n < 8 {
            return bad("grid size must be a power of two, at least 8");
        }
        if !(self.length > 0.0 && self.length.is_finite()) {
            return bad("domain length must be positive");
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad("kappa must be nonnegative");
        }
        if !(self.viscosity >= 0.0 && self.viscosity.is_finite()) {
            return bad("viscosity must be nonnegative");
        }
        if !(self.cfl_safety > 0.0 && self.cfl_safety <= 1.0) {
            return bad("cfl_safety must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn dx(&self) -> f64 {
        self.length / self.n as f64
    }

    /// Nodes `x_i = −L/2 + i·L/N`.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| -self.length / 2.0 + i as f64 * self.dx())
            .collect()
    }
}

/// Nodal values on the periodic grid.
pub type GridFunction = Vec<f64>;

/// `½·exp(1/(x²−1))` on `(−1, 1)`, zero elsewhere.
pub fn bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.5 * (1.0 / (x * x - 1.0)).exp()
    } else {
        0.0
    }
}

pub fn hat(x: f64, height: f64, half_width: f64) -> f64 {
    height * (1.0 - x.abs() / half_width).max(0.0)
}

pub struct Burgers {
    cfg: BurgersConfig,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// `(2πk/L)²` per FFT index.
    wave_sq: Vec<f64>,
}

impl std::fmt::Debug for Burgers {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Burgers").field("cfg", &self.cfg).finish()
    }
}

impl Burgers {
    pub fn new(cfg: BurgersConfig) -> Result<Self, BurgersError> {
        cfg.validate()?;
        let mut planner = FftPlanner::new();
        let n = cfg.n;
        let wave_sq = (0..n)
            .map(|i| {
                let k = if i < n / 2 { i as f64 } else { i as f64 - n as f64 };
                (2.0 * PI * k / cfg.length).powi(2)
            })
            .collect();
        Ok(Burgers {
            cfg,
            forward: planner.plan_fft_forward(n),
            inverse: planner.plan_fft_inverse(n),
            wave_sq,
        })
    }

    pub fn config(&self) -> &BurgersConfig {
        &self.cfg
    }

    pub fn init_bump(&self) -> Result<GridFunction, BurgersError> {
        if self.cfg.length < 2.0 {
            return Err(BurgersError::Config("the bump needs L ≥ 2".into()));
        }
        Ok(self.cfg.nodes().into_iter().map(bump).collect())
    }

    pub fn init_hat(&self, height: f64, half_width: f64) -> Result<GridFunction, BurgersError> {
        if !(half_width > 0.0 && half_width < self.cfg.length / 2.0) {
            return Err(BurgersError::Config(format!(
                "hat half-width {half_width} outside (0, L/2)"
            )));
        }
        Ok(self
            .cfg
            .nodes()
            .into_iter()
            .map(|x| hat(x, height, half_width))
            .collect())
    }

    /// Exact flow of the semidiscrete diffusion: `û_k ← e^{−ν(2πk/L)²h} û_k`.
    pub fn diffusion_subflow(&self, h: f64, u: &[f64]) -> GridFunction {
        if h == 0.0 || self.cfg.viscosity == 0.0 {
            return u.to_vec();
        }
        let mut buf: Vec<Complex<f64>> = u.iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        let scale = 1.0 / self.cfg.n as f64;
        for (c, k2) in buf.iter_mut().zip(&self.wave_sq) {
            *c *= (-self.cfg.viscosity * k2 * h).exp() * scale;
        }
        self.inverse.process(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    /// Number of Lax–Wendroff substeps used for a step of size `h`.
    pub fn substeps(&self, h: f64, u: &[f64]) -> usize {
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let m = (self.cfg.kappa * umax * h / (self.cfg.cfl_safety * self.cfg.dx())).ceil();
        if m.is_finite() {
            (m as usize).max(1)
        } else {
            1
        }
    }

    /// `∂_t u = −∂_x(κu²/2)` by `M` Lax–Wendroff substeps.
    pub fn advection_subflow(&self, h: f64, u: &[f64]) -> Result<GridFunction, SubflowError> {
        let fail = |message: String| SubflowError { op: 2, h, message };
        if u.iter().any(|v| !v.is_finite()) {
            return Err(fail("non-finite input".into()));
        }
        if h == 0.0 || self.cfg.kappa == 0.0 {
            return Ok(u.to_vec());
        }
        let n = self.cfg.n;
        let dx = self.cfg.dx();
        let kappa = self.cfg.kappa;
        let m = self.substeps(h, u);
        let dt = h / m as f64;
        let mut v = u.to_vec();
        let mut flux = vec![0.0; n];
        for sub in 0..m {
            for i in 0..n {
                let j = (i + 1) % n;
                let (fi, fj) = (0.5 * kappa * v[i] * v[i], 0.5 * kappa * v[j] * v[j]);
                let a = 0.5 * kappa * (v[i] + v[j]);
                flux[i] = 0.5 * (fi + fj) - dt / (2.0 * dx) * a * (fj - fi);
            }
            for i in 0..n {
                let left = flux[(i + n - 1) % n];
                v[i] -= dt / dx * (flux[i] - left);
            }
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(fail(format!(
                    "non-finite value at node {i} after substep {}/{m} (dt = {dt:e}, dx = {dx:e})",
                    sub + 1
                )));
            }
        }
        Ok(v)
    }

    /// `Σ u_i Δx`.
    pub fn mass(&self, u: &[f64]) -> f64 {
        u.iter().sum::<f64>() * self.cfg.dx()
    }

    /// Discrete L2 norm scaled by `1/√N`.
    pub fn norm(&self, u: &[f64]) -> f64 {
        (u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64).sqrt()
    }
}

impl SplitProblem for Burgers {
    type State = GridFunction;

    fn n_ops(&self) -> usize {
        2
    }

    fn subflow(&self, op: usize, h: f64, u: &GridFunction) -> Result<GridFunction, SubflowError> {
        match op {
            1 => Ok(self.diffusion_subflow(h, u)),
            2 => self.advection_subflow(h, u),
            _ => Err(SubflowError {
                op,
                h,
                message: "Burgers has two operators".into(),
            }),
        }
    }

    fn distance(&self, a: &GridFunction, b: &GridFunction) -> f64 {
        (a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64).sqrt()
    }
}

/// Fixed-step integration over `[0, steps·h]`.
pub fn integrate_fixed(
    b: &Burgers,
    s: &SchemeTable,
    h: f64,
    steps: usize,
    u0: &[f64],
) -> Result<GridFunction, StepError> {
    let mut u = u0.to_vec();
    for _ in 0..steps {
        u = split_step(b, s, h, &u)?;
    }
    Ok(u)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub h: f64,
    pub err_basic: f64,
    pub err_partner: f64,
    /// `log2(e(2h)/e(h))`, absent in the first row.
    pub order_basic: Option<f64>,
    pub order_partner: Option<f64>,
    pub const_basic: f64,
    pub const_partner: f64,
    /// Milne estimate over the true error of the basic scheme.
    pub estimate_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderStudy {
    pub rows: Vec<StudyRow>,
}

impl OrderStudy {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "h,err_basic,order_basic,const_basic,err_partner,order_partner,const_partner\n",
        );
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x:.16e}"));
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:.16e},{:.16e},{},{:.16e},{:.16e},{},{:.16e}",
                r.h,
                r.err_basic,
                opt(r.order_basic),
                r.const_basic,
                r.err_partner,
                opt(r.order_partner),
                r.const_partner
            );
        }
        s
    }
}

/// Halvings `h0, h0/2, …` (`count` entries).
pub fn halving_steps(h0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| h0 / 2f64.powi(i as i32)).collect()
}

/// One step of each pair member from `u0` for every `h`, compared with a
/// reference from [`REFERENCE_SUBSTEPS`] basic-scheme steps, itself checked
/// against twice as many.
pub fn local_order_study(
    b: &Burgers,
    pair: &MilnePair,
    u0: &[f64],
    steps: &[f64],
) -> Result<OrderStudy, BurgersError> {
    let u0 = u0.to_vec();
    let raw = steps
        .par_iter()
        .map(|&h| -> Result<(f64, f64, f64, f64), BurgersError> {
            let step = milne_step(b, pair, h, &u0)?;
            let reference = integrate_fixed(b, &pair.basic, h / REFERENCE_SUBSTEPS as f64, REFERENCE_SUBSTEPS, &u0)?;
            let finer = integrate_fixed(
                b,
                &pair.basic,
                h / (2 * REFERENCE_SUBSTEPS) as f64,
                2 * REFERENCE_SUBSTEPS,
                &u0,
            )?;
            let err_basic = b.distance(&step.state, &reference);
            let err_partner = b.distance(&step.partner_state, &reference);
            let gap = b.distance(&reference, &finer);
            if gap > REFERENCE_TOL * err_basic {
                return Err(BurgersError::ReferenceInconsistent {
                    h,
                    gap,
                    error: err_basic,
                });
            }
            Ok((h, err_basic, err_partner, step.estimate / err_basic))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows: Vec<StudyRow> = Vec::with_capacity(raw.len());
    for (i, &(h, eb, ep, ratio)) in raw.iter().enumerate() {
        let prev = i.checked_sub(1).map(|j| raw[j]);
        let order = |e: f64, e_prev: f64, h_prev: f64| (e_prev / e).ln() / (h_prev / h).ln();
        rows.push(StudyRow {
            h,
            err_basic: eb,
            err_partner: ep,
            order_basic: prev.map(|p| order(eb, p.1, p.0)),
            order_partner: prev.map(|p| order(ep, p.2, p.0)),
            const_basic: eb / h.powi(3),
            const_partner: ep / h.powi(3),
            estimate_ratio: ratio,
        });
    }
    Ok(OrderStudy { rows })
}

/// Self-derived pair: Strang as basic scheme and the best nonnegative
/// three-stage partner from eight seeded starts.
pub fn derived_pair() -> Result<MilnePair, OptimizeError> {
    let basic = registry_scheme("strang-2")?;
    Ok(derive_milne_partner(&basic, 3, true, 8, 0)?.pair)
}

/// Adaptive run from the hat datum up to `t_end`.
pub fn adaptive_shock_run(
    b: &Burgers,
    pair: &MilnePair,
    controller: &StepController,
    half_width: f64,
    t_end: f64,
) -> Result<(GridFunction, AdaptiveRun<GridFunction>), BurgersError> {
    let u0 = b.init_hat(HAT_HEIGHT, half_width)?;
    let run = integrate_adaptive(b, pair, controller, 0.0, t_end, &u0, None)?;
    Ok((u0, run))
}

/// Trace CSV with columns `t,h,inv_h,P,accepted`.
pub fn trace_csv(trace: &StepTrace) -> String {
    let mut s = String::from("t,h,inv_h,P,accepted\n");
    for r in &trace.records {
        let _ = writeln!(
            s,
            "{:.16e},{:.16e},{:.16e},{:.16e},{}",
            r.t,
            r.h,
            1.0 / r.h,
            r.estimate,
            r.accepted as u8
        );
    }
    s
}

/// Snapshot CSV with columns `x,u`.
pub fn snapshot_csv(cfg: &BurgersConfig, u: &[f64]) -> String {
    let mut s = String::from("x,u\n");
    for (x, v) in cfg.nodes().iter().zip(u) {
        let _ = writeln!(s, "{x:.16e},{v:.16e}");
    }
    s
}

/// gnuplot script drawing `1/h` over `t` and the two snapshots.
pub fn plot_script(trace_file: &str, initial_file: &str, final_file: &str, t_end: f64) -> String {
    format!(
        "set datafile separator ','\n\
         set terminal pngcairo size 1000,400\n\
         set output 'adaptive.png'\n\
         set multiplot layout 1,2\n\
         set title 'reciprocal step size'\n\
         set xlabel 't'\n\
         set logscale y\n\
         plot '{trace_file}' using 1:($5==1 ? $3 : 1/0) every ::1 with linespoints title '1/h'\n\
         unset logscale y\n\
         set title 'u(x,t)'\n\
         set xlabel 'x'\n\
         plot '{initial_file}' every ::1 with lines title 't = 0', \\\n\
         \x20    '{final_file}' every ::1 with lines title 't = {t_end}'\n\
         unset multiplot\n"
    )
}
