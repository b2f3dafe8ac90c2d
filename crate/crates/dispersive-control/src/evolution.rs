//! Time integration of the linear open-loop, nonlinear open-loop, and
//! closed-loop systems with conservation and decay diagnostics. The scheme
//! is an integrating-factor RK4: the coupled dispersive part is propagated
//! exactly per mode, RK4 handles the rotated nonlinear + control terms.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::damping::{GOperator, PropagatorTable};
use crate::error::{Error, Result};
use crate::field::{dealias_grid_len, plan_fft, PeriodicField, StatePair, TAU};
use crate::params::DerivedParams;

pub const BLOWUP_THRESHOLD: f64 = 1e12;

#[derive(Debug, Clone, Copy)]
pub struct EvolutionConfig {
    pub dt: f64,
    pub t_end: f64,
    /// Zero-pad quadratic products to >= 3N+2 points (2/3 rule).
    pub dealias: bool,
    /// Steps between recorded diagnostics (0: record only endpoints).
    pub record_every: usize,
    /// Sobolev order of the recorded H^s norm series.
    pub hs_order: f64,
    /// Keep full state snapshots at recorded times.
    pub keep_snapshots: bool,
}

impl EvolutionConfig {
    pub fn new(dt: f64, t_end: f64) -> Result<Self> {
        if !(dt > 0.0) || !(t_end >= dt) {
            return Err(Error::Config(format!(
                "need dt > 0 and t_end >= dt, got dt={dt}, t_end={t_end}"
            )));
        }
        Ok(EvolutionConfig {
            dt,
            t_end,
            dealias: true,
            record_every: 100,
            hs_order: 1.0,
            keep_snapshots: false,
        })
    }

    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt).round().max(1.0) as usize
    }
}

/// Default-time-step heuristic: the quadratic fluxes act like variable
/// coefficient advection, so cap dt by 0.5/(N(1 + max|u|+|v|)).
pub fn suggested_dt(n_modes: usize, initial: &StatePair) -> f64 {
    let amp = initial.u.max_coeff() + initial.v.max_coeff();
    (1e-3_f64).min(0.5 / (n_modes as f64 * (1.0 + amp)))
}

/// Recorded diagnostics of a run.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub mass_u: Vec<f64>,
    pub mass_v: Vec<f64>,
    pub energy: Vec<f64>,
    pub l2: Vec<f64>,
    pub hs: Vec<f64>,
    /// Squared observation norm 2pi(|Gu|^2+|Gv|^2) when a G operator is
    /// attached to the run; empty otherwise.
    pub observation: Vec<f64>,
    pub snapshots: Vec<StatePair>,
    pub final_state: StatePair,
}

impl Trajectory {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["t", "mass_u", "mass_v", "energy", "l2", "hs"])?;
        for i in 0..self.times.len() {
            wtr.write_record(&[
                format!("{:.17e}", self.times[i]),
                format!("{:.17e}", self.mass_u[i]),
                format!("{:.17e}", self.mass_v[i]),
                format!("{:.17e}", self.energy[i]),
                format!("{:.17e}", self.l2[i]),
                format!("{:.17e}", self.hs[i]),
            ])?;
        }
        wtr.flush().map_err(Error::Io)?;
        Ok(())
    }
}

/// What drives the simulation besides the linear group.
pub enum RunMode<'a> {
    /// Pure linear group: exact per-mode propagation, no RK stages needed.
    Linear,
    /// Linear dynamics driven by a time-dependent forcing (already
    /// G-applied); the open-loop control verification mode.
    LinearForced { forcing: &'a ForcingFn<'a> },
    /// Full quadratic nonlinearity, optional time-dependent forcing
    /// (already G-applied) evaluated at stage times.
    Nonlinear {
        forcing: Option<&'a ForcingFn<'a>>,
    },
    /// Nonlinear (or linearized) dynamics with feedback -K1 u, -K2 v.
    ClosedLoop {
        k1: &'a DMatrix<Complex64>,
        k2: &'a DMatrix<Complex64>,
        linearized: bool,
    },
}

/// Forcing evaluator: t -> (source for u-equation, source for v-equation)
/// in Fourier coefficients, G already applied.
pub type ForcingFn<'a> = dyn Fn(f64) -> (Vec<Complex64>, Vec<Complex64>) + Sync + 'a;

/// Scratch machinery reused across steps.
pub struct Stepper {
    pub n_modes: usize,
    pub params: DerivedParams,
    ph: PropagatorTable,
    pf: PropagatorTable,
    pub dt: f64,
    pad: usize,
}

type CVec = Vec<Complex64>;

impl Stepper {
    pub fn new(n_modes: usize, dt: f64, d: &DerivedParams, dealias: bool) -> Self {
        let pad = if dealias {
            dealias_grid_len(n_modes)
        } else {
            (2 * n_modes + 1).next_power_of_two()
        };
        Stepper {
            n_modes,
            params: *d,
            ph: PropagatorTable::new(n_modes, dt / 2.0, d),
            pf: PropagatorTable::new(n_modes, dt, d),
            dt,
            pad,
        }
    }

    fn to_grid(&self, f: &[Complex64]) -> Vec<f64> {
        crate::field::coeffs_to_grid(f, self.n_modes, self.pad)
    }

    fn from_grid(&self, s: &[f64]) -> CVec {
        let m = s.len();
        let mut buf: Vec<Complex64> = s.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        plan_fft(m, false).process(&mut buf);
        let n = self.n_modes as i64;
        (-n..=n)
            .map(|k| buf[k.rem_euclid(m as i64) as usize] / m as f64)
            .collect()
    }

    /// -dx P(u,v) and -dx Q(u,v) with dealiased products.
    pub fn nonlin(&self, u: &[Complex64], v: &[Complex64]) -> (CVec, CVec) {
        let p = &self.params.phys;
        let ug = self.to_grid(u);
        let vg = self.to_grid(v);
        let pg: Vec<f64> = ug
            .iter()
            .zip(&vg)
            .map(|(&a, &b)| p.a * a * a + p.b * a * b + 0.5 * p.c * b * b)
            .collect();
        let qg: Vec<f64> = ug
            .iter()
            .zip(&vg)
            .map(|(&a, &b)| p.d * b * b + p.c * a * b + 0.5 * p.b * a * a)
            .collect();
        let mut ph = self.from_grid(&pg);
        let mut qh = self.from_grid(&qg);
        let n = self.n_modes as i64;
        for k in -n..=n {
            let ik = Complex64::new(0.0, -(k as f64));
            let i = (k + n) as usize;
            ph[i] *= ik;
            qh[i] *= ik;
        }
        (ph, qh)
    }

    fn apply_prop(p: &PropagatorTable, u: &[Complex64], v: &[Complex64]) -> (CVec, CVec) {
        let mut a = u.to_vec();
        let mut b = v.to_vec();
        p.apply(&mut a, &mut b);
        (a, b)
    }

    /// One IFRK4 step with source term S(t, u, v); returns the new state
    /// and the four stage evaluation points (needed by the defect variant).
    #[allow(clippy::type_complexity)]
    fn step_with<S>(&self, t: f64, u: &[Complex64], v: &[Complex64], s: &S) -> (CVec, CVec, Stages)
    where
        S: Fn(f64, &[Complex64], &[Complex64]) -> (CVec, CVec),
    {
        let dt = self.dt;
        let half = 0.5 * dt;
        let (n1u, n1v) = s(t, u, v);
        let (pu, pv) = Self::apply_prop(&self.ph, u, v);
        let (a2u, a2v) = Self::apply_prop(&self.ph, &n1u, &n1v);
        let y2u: CVec = pu.iter().zip(&a2u).map(|(a, b)| a + half * b).collect();
        let y2v: CVec = pv.iter().zip(&a2v).map(|(a, b)| a + half * b).collect();
        let (n2u, n2v) = s(t + half, &y2u, &y2v);
        let y3u: CVec = pu.iter().zip(&n2u).map(|(a, b)| a + half * b).collect();
        let y3v: CVec = pv.iter().zip(&n2v).map(|(a, b)| a + half * b).collect();
        let (n3u, n3v) = s(t + half, &y3u, &y3v);
        let (fu, fv) = Self::apply_prop(&self.pf, u, v);
        let (c4u, c4v) = Self::apply_prop(&self.ph, &n3u, &n3v);
        let y4u: CVec = fu.iter().zip(&c4u).map(|(a, b)| a + dt * b).collect();
        let y4v: CVec = fv.iter().zip(&c4v).map(|(a, b)| a + dt * b).collect();
        let (n4u, n4v) = s(t + dt, &y4u, &y4v);
        let (p1u, p1v) = Self::apply_prop(&self.pf, &n1u, &n1v);
        let sum23u: CVec = n2u.iter().zip(&n3u).map(|(a, b)| a + b).collect();
        let sum23v: CVec = n2v.iter().zip(&n3v).map(|(a, b)| a + b).collect();
        let (p23u, p23v) = Self::apply_prop(&self.ph, &sum23u, &sum23v);
        let w = dt / 6.0;
        let un: CVec = (0..u.len())
            .map(|i| fu[i] + w * (p1u[i] + 2.0 * p23u[i] + n4u[i]))
            .collect();
        let vn: CVec = (0..v.len())
            .map(|i| fv[i] + w * (p1v[i] + 2.0 * p23v[i] + n4v[i]))
            .collect();
        let stages = Stages {
            y2: (y2u, y2v),
            y3: (y3u, y3v),
        };
        (un, vn, stages)
    }
}

/// Intermediate stage states of one IFRK4 step.
pub struct Stages {
    pub y2: (CVec, CVec),
    pub y3: (CVec, CVec),
}

fn source_for<'a>(
    stepper: &'a Stepper,
    mode: &'a RunMode<'a>,
) -> impl Fn(f64, &[Complex64], &[Complex64]) -> (CVec, CVec) + 'a {
    move |t, u, v| {
        let len = u.len();
        let (mut su, mut sv) = match mode {
            RunMode::Linear | RunMode::LinearForced { .. } => (
                vec![Complex64::new(0.0, 0.0); len],
                vec![Complex64::new(0.0, 0.0); len],
            ),
            RunMode::Nonlinear { .. } => stepper.nonlin(u, v),
            RunMode::ClosedLoop { linearized, .. } => {
                if *linearized {
                    (
                        vec![Complex64::new(0.0, 0.0); len],
                        vec![Complex64::new(0.0, 0.0); len],
                    )
                } else {
                    stepper.nonlin(u, v)
                }
            }
        };
        match mode {
            RunMode::Nonlinear { forcing: Some(f) } | RunMode::LinearForced { forcing: f } => {
                let (fu, fv) = f(t);
                for i in 0..len {
                    su[i] += fu[i];
                    sv[i] += fv[i];
                }
            }
            RunMode::ClosedLoop { k1, k2, .. } => {
                let un = nalgebra::DVector::from_column_slice(u);
                let vn = nalgebra::DVector::from_column_slice(v);
                let ku = *k1 * un;
                let kv = *k2 * vn;
                for i in 0..len {
                    su[i] -= ku[i];
                    sv[i] -= kv[i];
                }
            }
            _ => {}
        }
        (su, sv)
    }
}

/// Single exact linear step (unitary per-mode propagation).
pub fn step_linear(state: &StatePair, dt: f64, d: &DerivedParams) -> StatePair {
    PropagatorTable::new(state.n_modes(), dt, d).apply_state(state)
}

/// Single nonlinear IFRK4 step with optional forcing.
pub fn step_nonlinear(
    state: &StatePair,
    dt: f64,
    d: &DerivedParams,
    forcing: Option<&ForcingFn>,
) -> Result<StatePair> {
    let stepper = Stepper::new(state.n_modes(), dt, d, true);
    let mode = RunMode::Nonlinear { forcing };
    let src = source_for(&stepper, &mode);
    let (u, v, _) = stepper.step_with(0.0, &state.u.coeffs, &state.v.coeffs, &src);
    let out = StatePair::new(
        PeriodicField::from_coeffs_unchecked(state.n_modes(), u),
        PeriodicField::from_coeffs_unchecked(state.n_modes(), v),
    );
    check_finite(&out, dt)?;
    Ok(out)
}

/// Single closed-loop IFRK4 step with feedback matrices K1, K2.
pub fn step_closed_loop(
    state: &StatePair,
    dt: f64,
    d: &DerivedParams,
    k1: &DMatrix<Complex64>,
    k2: &DMatrix<Complex64>,
    linearized: bool,
) -> Result<StatePair> {
    let stepper = Stepper::new(state.n_modes(), dt, d, true);
    let mode = RunMode::ClosedLoop { k1, k2, linearized };
    let src = source_for(&stepper, &mode);
    let (u, v, _) = stepper.step_with(0.0, &state.u.coeffs, &state.v.coeffs, &src);
    let out = StatePair::new(
        PeriodicField::from_coeffs_unchecked(state.n_modes(), u),
        PeriodicField::from_coeffs_unchecked(state.n_modes(), v),
    );
    check_finite(&out, dt)?;
    Ok(out)
}

fn check_finite(w: &StatePair, t: f64) -> Result<()> {
    let m = w.u.max_coeff().max(w.v.max_coeff());
    if !m.is_finite() || m > BLOWUP_THRESHOLD {
        return Err(Error::BlowUp { t, max_coeff: m });
    }
    Ok(())
}

/// Integrates the system to t_end, recording diagnostics.
pub fn run(
    config: &EvolutionConfig,
    initial: &StatePair,
    mode: RunMode,
    d: &DerivedParams,
    observe: Option<&GOperator>,
) -> Result<Trajectory> {
    let n = initial.n_modes();
    let stepper = Stepper::new(n, config.dt, d, config.dealias);
    let src = source_for(&stepper, &mode);
    let nsteps = config.n_steps();
    let rec = if config.record_every == 0 {
        nsteps
    } else {
        config.record_every
    };
    let mut traj = Trajectory {
        times: Vec::new(),
        mass_u: Vec::new(),
        mass_v: Vec::new(),
        energy: Vec::new(),
        l2: Vec::new(),
        hs: Vec::new(),
        observation: Vec::new(),
        snapshots: Vec::new(),
        final_state: initial.clone(),
    };
    let mut u = initial.u.coeffs.clone();
    let mut v = initial.v.coeffs.clone();
    let mut t = 0.0;
    let record = |traj: &mut Trajectory, t: f64, u: &[Complex64], v: &[Complex64]| {
        let w = StatePair::new(
            PeriodicField::from_coeffs_unchecked(n, u.to_vec()),
            PeriodicField::from_coeffs_unchecked(n, v.to_vec()),
        );
        traj.times.push(t);
        traj.mass_u.push(TAU * w.u.mean());
        traj.mass_v.push(TAU * w.v.mean());
        traj.energy.push(w.energy());
        traj.l2.push(w.l2_norm());
        traj.hs.push(w.hs_norm(config.hs_order));
        if let Some(g) = observe {
            traj.observation.push(g.observation(&w));
        }
        if config.keep_snapshots {
            traj.snapshots.push(w);
        }
    };
    for step in 0..nsteps {
        if step % rec == 0 {
            record(&mut traj, t, &u, &v);
        }
        let (un, vn, _) = stepper.step_with(t, &u, &v, &src);
        u = un;
        v = vn;
        t = (step + 1) as f64 * config.dt;
        let m = u
            .iter()
            .chain(v.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        if !m.is_finite() || m > BLOWUP_THRESHOLD {
            return Err(Error::BlowUp { t, max_coeff: m });
        }
    }
    record(&mut traj, t, &u, &v);
    traj.final_state = StatePair::new(
        PeriodicField::from_coeffs_unchecked(n, u),
        PeriodicField::from_coeffs_unchecked(n, v),
    );
    Ok(traj)
}

/// Nonlinear forced run that simultaneously accumulates the defect
/// integrals w(T), z(T): the terminal effect of the nonlinearity alone,
/// propagated by the same integrating-factor quadrature as the state. Also
/// returns the maximum distance to a reference trajectory sampled at the
/// same recorded steps (used as the iterate metric in Picard steering).
pub struct DefectRun {
    pub final_state: StatePair,
    pub defect: StatePair,
    pub recorded: Vec<StatePair>,
    pub max_norm: f64,
}

pub fn run_with_defect(
    config: &EvolutionConfig,
    initial: &StatePair,
    forcing: &ForcingFn,
    d: &DerivedParams,
) -> Result<DefectRun> {
    let n = initial.n_modes();
    let stepper = Stepper::new(n, config.dt, d, config.dealias);
    let mode = RunMode::Nonlinear {
        forcing: Some(forcing),
    };
    let src = source_for(&stepper, &mode);
    let nsteps = config.n_steps();
    let rec = if config.record_every == 0 {
        nsteps
    } else {
        config.record_every
    };
    let len = 2 * n + 1;
    let mut u = initial.u.coeffs.clone();
    let mut v = initial.v.coeffs.clone();
    let mut wu = vec![Complex64::new(0.0, 0.0); len];
    let mut wv = vec![Complex64::new(0.0, 0.0); len];
    let mut recorded = Vec::new();
    let mut max_norm: f64 = 0.0;
    let mut t = 0.0;
    let dt = config.dt;
    for step in 0..nsteps {
        if step % rec == 0 {
            recorded.push(StatePair::new(
                PeriodicField::from_coeffs_unchecked(n, u.clone()),
                PeriodicField::from_coeffs_unchecked(n, v.clone()),
            ));
        }
        let (un, vn, stages) = stepper.step_with(t, &u, &v, &src);
        // Defect quadrature: the nonlinearity evaluated at the same stage
        // states, accumulated with the IFRK4 weights so the fixed point of
        // the Picard map is exact at the discrete level.
        let (q1u, q1v) = stepper.nonlin(&u, &v);
        let (q2u, q2v) = stepper.nonlin(&stages.y2.0, &stages.y2.1);
        let (q3u, q3v) = stepper.nonlin(&stages.y3.0, &stages.y3.1);
        let (q4u, q4v) = stepper.nonlin(&un, &vn);
        let (pwu, pwv) = Stepper::apply_prop(&stepper.pf, &wu, &wv);
        let (r1u, r1v) = Stepper::apply_prop(&stepper.pf, &q1u, &q1v);
        let s23u: CVec = q2u.iter().zip(&q3u).map(|(a, b)| a + b).collect();
        let s23v: CVec = q2v.iter().zip(&q3v).map(|(a, b)| a + b).collect();
        let (r23u, r23v) = Stepper::apply_prop(&stepper.ph, &s23u, &s23v);
        let w6 = dt / 6.0;
        for i in 0..len {
            wu[i] = pwu[i] + w6 * (r1u[i] + 2.0 * r23u[i] + q4u[i]);
            wv[i] = pwv[i] + w6 * (r1v[i] + 2.0 * r23v[i] + q4v[i]);
        }
        u = un;
        v = vn;
        t = (step + 1) as f64 * dt;
        let m = u
            .iter()
            .chain(v.iter())
            .map(|c| c.norm())
            .fold(0.0, f64::max);
        if !m.is_finite() || m > BLOWUP_THRESHOLD {
            return Err(Error::BlowUp { t, max_coeff: m });
        }
        let norm = (TAU
            * u.iter()
                .chain(v.iter())
                .map(|c| c.norm_sqr())
                .sum::<f64>())
        .sqrt();
        max_norm = max_norm.max(norm);
    }
    let final_state = StatePair::new(
        PeriodicField::from_coeffs_unchecked(n, u),
        PeriodicField::from_coeffs_unchecked(n, v),
    );
    recorded.push(final_state.clone());
    Ok(DefectRun {
        final_state,
        defect: StatePair::new(
            PeriodicField::from_coeffs_unchecked(n, wu),
            PeriodicField::from_coeffs_unchecked(n, wv),
        ),
        recorded,
        max_norm,
    })
}

/// Least-squares fit of log ||(u,v)(t)|| against t over [t_lo, t_hi];
/// returns (decay rate kappa, log-prefactor, r^2). States that underflowed
/// to numerical zero yield the +infinity sentinel.
pub fn decay_fit(traj: &Trajectory, window: (f64, f64)) -> Result<(f64, f64, f64)> {
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    let mut n_window = 0usize;
    for (i, &t) in traj.times.iter().enumerate() {
        if t < window.0 || t > window.1 {
            continue;
        }
        n_window += 1;
        let l2 = traj.l2[i];
        if l2 > 1e-140 {
            ts.push(t);
            ys.push(l2.ln());
        }
    }
    if n_window < 2 {
        return Err(Error::DegenerateFit);
    }
    if ts.len() < 2 {
        // Everything underflowed: decay faster than representable.
        return Ok((f64::INFINITY, 0.0, 1.0));
    }
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    let mut syy = 0.0;
    for i in 0..ts.len() {
        let dx = ts[i] - tm;
        let dy = ys[i] - ym;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(Error::DegenerateFit);
    }
    let slope = sxy / sxx;
    let c = ym - slope * tm;
    let ss_res = syy - sxy * sxy / sxx;
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    Ok((-slope, c, r2))
}

/// Closed-loop observability probe: for each sample, the quotient
/// ||(u0,v0)||^2 / int_0^T ||(Gu,Gv)||^2 dt (trapezoid on the recorded
/// series). Returns the maximum quotient and the per-sample table
/// (numerator, integral, quotient).
#[allow(clippy::too_many_arguments)]
pub fn observability_quotient(
    samples: &[StatePair],
    config: &EvolutionConfig,
    d: &DerivedParams,
    g: &GOperator,
    k1: &DMatrix<Complex64>,
    k2: &DMatrix<Complex64>,
    linearized: bool,
) -> Result<(f64, Vec<(f64, f64, f64)>)> {
    let rows: Vec<Result<(f64, f64, f64)>> = samples
        .par_iter()
        .map(|w0| {
            let num = w0.energy();
            let traj = run(
                config,
                w0,
                RunMode::ClosedLoop { k1, k2, linearized },
                d,
                Some(g),
            )?;
            let mut integral = 0.0;
            for i in 1..traj.times.len() {
                let h = traj.times[i] - traj.times[i - 1];
                integral += 0.5 * h * (traj.observation[i] + traj.observation[i - 1]);
            }
            if integral <= 0.0 || integral < 1e-300 * num {
                return Err(Error::ZeroDenominator);
            }
            Ok((num, integral, num / integral))
        })
        .collect();
    let mut table = Vec::with_capacity(rows.len());
    let mut rho: f64 = 0.0;
    for r in rows {
        let row = r?;
        rho = rho.max(row.2);
        table.push(row);
    }
    Ok((rho, table))
}
