//! Command-line front end: configuration ingestion, the canned
//! experiments, and result persistence (CSV series + JSON manifests).

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::damping::{build_l, FeedbackBranch, GOperator, GainProfile};
use crate::error::{Error, Result};
use crate::evolution::{decay_fit, run, EvolutionConfig, RunMode};
use crate::field::{PeriodicField, StatePair};
use crate::moment::{steer_nonlinear, synthesize_linear, SteerConfig, SynthesisOptions};
use crate::params::{derive_params, DerivedParams, PhysParams};
use crate::spectral::{
    delta_significance_scan, eigvec_unnormalized, gap_report, ordered_basis, resonant_clusters,
};

#[derive(Parser)]
#[command(name = "dispersive-control", version, about = "Coupled KdV control experiments")]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenfrequency table, gap report, cluster report.
    Spectrum(CommonArgs),
    /// Synthesize and verify an exact linear control.
    ControlLinear(CommonArgs),
    /// Closed-loop feedback run with decay fit.
    Stabilize(CommonArgs),
    /// Local nonlinear steering by Picard iteration.
    ControlNonlinear(CommonArgs),
    /// Stabilize-then-steer composition.
    GlobalSteer(CommonArgs),
    /// Delta-significance sweep of the resonance function.
    Resonance(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Path to the JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: config's out_dir, or "./out").
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override for the random data presets.
    #[arg(long)]
    seed: Option<u64>,
}

// ---------------------------------------------------------------------------
// Configuration schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamsSpec {
    Explicit {
        alpha: f64,
        a: f64,
        b: f64,
        c: f64,
        d: f64,
        mu: f64,
        eta: f64,
        zeta: f64,
    },
    Means {
        alpha: f64,
        a: f64,
        b: f64,
        c: f64,
        d: f64,
        beta_mean: f64,
        gamma_mean: f64,
    },
}

impl Default for ParamsSpec {
    fn default() -> Self {
        ParamsSpec::Explicit {
            alpha: -1.3,
            a: 1.0,
            b: 0.2,
            c: 0.2,
            d: 1.0,
            mu: 0.01,
            eta: 0.05,
            zeta: 0.01,
        }
    }
}

impl ParamsSpec {
    pub fn derived(&self) -> Result<DerivedParams> {
        match *self {
            ParamsSpec::Explicit {
                alpha,
                a,
                b,
                c,
                d,
                mu,
                eta,
                zeta,
            } => DerivedParams::explicit(alpha, a, b, c, d, mu, eta, zeta),
            ParamsSpec::Means {
                alpha,
                a,
                b,
                c,
                d,
                beta_mean,
                gamma_mean,
            } => Ok(derive_params(PhysParams::new(
                alpha, a, b, c, d, beta_mean, gamma_mean,
            )?)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum GainSpec {
    Bump { center: f64, radius: f64 },
    Grid { samples: Vec<f64> },
    Empty,
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec::Bump {
            center: PI,
            radius: 1.0,
        }
    }
}

impl GainSpec {
    pub fn build(&self, n_modes: usize) -> Result<GainProfile> {
        match self {
            GainSpec::Bump { center, radius } => GainProfile::bump(n_modes, *center, *radius),
            GainSpec::Grid { samples } => GainProfile::from_samples(n_modes, samples),
            GainSpec::Empty => Ok(GainProfile::empty(n_modes)),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum DataSpec {
    Zero,
    /// A single eigenmode of the coupled linear operator (made real by the
    /// conjugate pair at -k).
    Eigenmode {
        k: i64,
        branch: crate::spectral::Branch,
        amplitude: f64,
    },
    /// Gaussian bumps projected to zero mean; u centered at `center`, v at
    /// `center + 1.5`.
    Gaussian {
        center: f64,
        width: f64,
        amplitude: f64,
    },
    /// Random band-limited data with |coefficient| ~ (1+k)^{-decay}, drawn
    /// from the seeded generator.
    RandomBand {
        kmax: i64,
        decay: f64,
        amplitude: f64,
    },
    /// Explicit mode lists as (k, re, im) triples.
    Modes {
        u: Vec<(i64, f64, f64)>,
        v: Vec<(i64, f64, f64)>,
    },
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec::Zero
    }
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller on open-interval uniforms.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

/// Random zero-mean band-limited field with decaying spectrum.
pub fn random_field(n_modes: usize, rng: &mut ChaCha8Rng, decay: f64, kmax: i64) -> PeriodicField {
    let mut f = PeriodicField::zeros(n_modes);
    let km = kmax.min(n_modes as i64);
    for k in 1..=km {
        let c = Complex64::new(gauss(rng), gauss(rng)) / (1.0 + k as f64).powf(decay);
        f.set_mode(k, c);
    }
    f
}

fn gaussian_field(n_modes: usize, center: f64, width: f64) -> Result<PeriodicField> {
    let m = (4 * n_modes).next_power_of_two();
    let samples: Vec<f64> = (0..m)
        .map(|j| {
            let x = 2.0 * PI * j as f64 / m as f64;
            let d = (x - center + PI).rem_euclid(2.0 * PI) - PI;
            (-0.5 * (d / width).powi(2)).exp()
        })
        .collect();
    let mut f = PeriodicField::from_grid(&samples, n_modes)?;
    let i0 = f.idx(0);
    f.coeffs[i0] = Complex64::new(0.0, 0.0);
    Ok(f)
}

impl DataSpec {
    pub fn realize(
        &self,
        n_modes: usize,
        d: &DerivedParams,
        rng: &mut ChaCha8Rng,
    ) -> Result<StatePair> {
        match self {
            DataSpec::Zero => Ok(StatePair::zeros(n_modes)),
            DataSpec::Eigenmode {
                k,
                branch,
                amplitude,
            } => {
                if *k == 0 || k.unsigned_abs() as usize > n_modes {
                    return Err(Error::Config(format!(
                        "eigenmode index {k} outside 0 < |k| <= {n_modes}"
                    )));
                }
                let es = ordered_basis(n_modes, d);
                let (_, z) = es.pair(*k, *branch);
                let mut w = StatePair::zeros(n_modes);
                w.u.set_mode(*k, Complex64::new(amplitude * z[0], 0.0));
                w.v.set_mode(*k, Complex64::new(amplitude * z[1], 0.0));
                Ok(w)
            }
            DataSpec::Gaussian {
                center,
                width,
                amplitude,
            } => {
                let u = gaussian_field(n_modes, *center, *width)?.scale(*amplitude);
                let v = gaussian_field(n_modes, *center + 1.5, *width)?.scale(*amplitude);
                Ok(StatePair::new(u, v))
            }
            DataSpec::RandomBand {
                kmax,
                decay,
                amplitude,
            } => {
                let u = random_field(n_modes, rng, *decay, *kmax).scale(*amplitude);
                let v = random_field(n_modes, rng, *decay, *kmax).scale(*amplitude);
                Ok(StatePair::new(u, v))
            }
            DataSpec::Modes { u, v } => Ok(StatePair::new(
                PeriodicField::from_triples(n_modes, u)?,
                PeriodicField::from_triples(n_modes, v)?,
            )),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResonanceSpec {
    pub b1: f64,
    pub g1: f64,
    pub b2: f64,
    pub g2: f64,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for ResonanceSpec {
    fn default() -> Self {
        ResonanceSpec {
            b1: 1.0,
            g1: 0.0,
            b2: -1.0,
            g2: 0.0,
            n_min: 2,
            n_max: 30,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub params: ParamsSpec,
    pub n_modes: usize,
    pub gain: GainSpec,
    pub t_horizon: f64,
    pub lambda: f64,
    pub lambda_prime: f64,
    pub dt: f64,
    pub t_end: f64,
    pub record_every: usize,
    pub n_quad: usize,
    pub seed: u64,
    pub linearized: bool,
    pub initial: DataSpec,
    pub target: DataSpec,
    pub max_iter: usize,
    pub tol: f64,
    pub smallness: f64,
    pub hs_order: f64,
    pub out_dir: Option<String>,
    pub resonance: ResonanceSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            params: ParamsSpec::default(),
            n_modes: 32,
            gain: GainSpec::default(),
            t_horizon: 1.0,
            lambda: 0.0,
            lambda_prime: 0.4,
            dt: 1e-3,
            t_end: 20.0,
            record_every: 100,
            n_quad: 64,
            seed: 0,
            linearized: false,
            initial: DataSpec::default(),
            target: DataSpec::default(),
            max_iter: 8,
            tol: 1e-9,
            smallness: 1e-2,
            hs_order: 1.0,
            out_dir: None,
            resonance: ResonanceSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_modes < 1 || self.n_modes > 4096 {
            return Err(Error::Config(format!(
                "n_modes must be in [1, 4096], got {}",
                self.n_modes
            )));
        }
        if !(self.dt > 0.0) || !(self.t_horizon > 0.0) || !(self.t_end > 0.0) {
            return Err(Error::Config(
                "dt, t_horizon, t_end must all be positive".into(),
            ));
        }
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        self.params.derived()?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Output plumbing
// ---------------------------------------------------------------------------

struct OutDir {
    dir: PathBuf,
}

impl OutDir {
    fn create(args: &CommonArgs, cfg: &RunConfig) -> Result<Self> {
        let dir = args
            .out
            .clone()
            .or_else(|| cfg.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        fs::create_dir_all(&dir)?;
        Ok(OutDir { dir })
    }

    fn write_json(&self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.dir.join(name), text)?;
        Ok(())
    }

    fn csv_writer(&self, name: &str) -> Result<csv::Writer<fs::File>> {
        Ok(csv::Writer::from_writer(fs::File::create(self.dir.join(name))?))
    }
}

fn manifest(command: &str, cfg: &RunConfig) -> serde_json::Value {
    serde_json::json!({
        "command": command,
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
    })
}

fn fmt(x: f64) -> String {
    format!("{x:.17e}")
}

fn write_trajectory(out: &OutDir, name: &str, traj: &crate::evolution::Trajectory) -> Result<()> {
    let mut w = out.csv_writer(name)?;
    w.write_record(["t", "mass_u", "mass_v", "energy", "l2", "hs"])?;
    for i in 0..traj.times.len() {
        w.write_record(&[
            fmt(traj.times[i]),
            fmt(traj.mass_u[i]),
            fmt(traj.mass_v[i]),
            fmt(traj.energy[i]),
            fmt(traj.l2[i]),
            fmt(traj.hs[i]),
        ])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

fn cmd_spectrum(args: &CommonArgs, cfg: &RunConfig) -> Result<()> {
    let d = cfg.params.derived()?;
    let n = cfg.n_modes;
    let es = ordered_basis(n, &d);
    let out = OutDir::create(args, cfg)?;
    out.write_json("manifest.json", &manifest("spectrum", cfg))?;

    let mut w = out.csv_writer("spectrum.csv")?;
    w.write_record([
        "k",
        "omega_plus",
        "omega_minus",
        "sigma_plus",
        "tau_plus",
        "sigma_minus",
        "tau_minus",
        "ortho_residual",
    ])?;
    let ni = n as i64;
    for k in -ni..=ni {
        let i = es.idx(k);
        let zp = es.z_plus[i];
        let zm = es.z_minus[i];
        let ortho = (zp[0] * zm[0] + zp[1] * zm[1]).abs();
        w.write_record(&[
            k.to_string(),
            fmt(es.omega_plus[i]),
            fmt(es.omega_minus[i]),
            fmt(zp[0]),
            fmt(zp[1]),
            fmt(zm[0]),
            fmt(zm[1]),
            fmt(ortho),
        ])?;
    }
    w.flush().map_err(Error::Io)?;

    let gaps = gap_report(n.max(4), &d);
    let mut w = out.csv_writer("gaps.csv")?;
    w.write_record(["k", "plus_gap", "minus_gap", "plus_gap_over_poly"])?;
    for (&(k, pg), &(_, mg)) in gaps.plus_gaps.iter().zip(&gaps.minus_gaps) {
        let poly = (3 * k * k + 3 * k + 1) as f64;
        w.write_record(&[k.to_string(), fmt(pg), fmt(mg), fmt(pg / poly)])?;
    }
    w.flush().map_err(Error::Io)?;

    // Large-|k| eigenvector limit diagnostic for the unnormalized family.
    let (_, zm_limit) = eigvec_unnormalized(10_000, &d);
    let clusters = resonant_clusters(n, &d, 1e-9)?;
    out.write_json(
        "clusters.json",
        &serde_json::json!({
            "min_gap": gaps.min_gap,
            "plus_leading_coeff": gaps.plus_leading_coeff,
            "unnormalized_minus_limit_at_1e4": zm_limit,
            "expected_minus_limit": [0.0, 2.0 * (1.0 - d.alpha())],
            "clusters": clusters,
        }),
    )?;
    Ok(())
}

fn load_data(
    cfg: &RunConfig,
    d: &DerivedParams,
    seed: u64,
) -> Result<(StatePair, StatePair)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w0 = cfg.initial.realize(cfg.n_modes, d, &mut rng)?;
    let w1 = cfg.target.realize(cfg.n_modes, d, &mut rng)?;
    Ok((w0, w1))
}

fn cmd_control_linear(args: &CommonArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let d = cfg.params.derived()?;
    let n = cfg.n_modes;
    let es = ordered_basis(n, &d);
    let g = GOperator::new(cfg.gain.build(n)?);
    let (w0, w1) = load_data(cfg, &d, seed)?;
    let plan = synthesize_linear(&w0, &w1, cfg.t_horizon, &es, &g, &SynthesisOptions::default())?;

    let mut evo = EvolutionConfig::new(cfg.dt, cfg.t_horizon)?;
    evo.record_every = cfg.record_every;
    evo.hs_order = cfg.hs_order;
    let forcing = |t: f64| plan.forcing(t);
    let traj = run(&evo, &w0, RunMode::LinearForced { forcing: &forcing }, &d, Some(&g))?;
    let scale = w1.l2_norm();
    let abs_err = traj.final_state.sub(&w1).l2_norm();
    let rel_err = if scale > 0.0 { abs_err / scale } else { abs_err };

    let out = OutDir::create(args, cfg)?;
    out.write_json("manifest.json", &manifest("control-linear", cfg))?;
    out.write_json("plan.json", &plan.to_json())?;
    let pn0 = plan.plan_norm(0.0);
    let pns = plan.plan_norm(cfg.hs_order);
    out.write_json(
        "result.json",
        &serde_json::json!({
            "terminal_error_abs": abs_err,
            "terminal_error_rel": rel_err,
            "gram_condition": plan.family.condition,
            "biorth_residual": plan.family.residual,
            "beta_floor": g.beta_floor(),
            "plan_norm_l2": pn0,
            "plan_norm_hs": pns,
            "hs_order": cfg.hs_order,
        }),
    )?;
    let mut w = out.csv_writer("control.csv")?;
    w.write_record(["t", "f_l2", "h_l2"])?;
    let nrec = 200;
    for q in 0..=nrec {
        let t = cfg.t_horizon * q as f64 / nrec as f64;
        let (f, h) = plan.control(t);
        w.write_record(&[fmt(t), fmt(f.l2_norm()), fmt(h.l2_norm())])?;
    }
    w.flush().map_err(Error::Io)?;
    write_trajectory(&out, "trajectory.csv", &traj)?;
    Ok(())
}

fn feedback_matrices(
    cfg: &RunConfig,
    d: &DerivedParams,
    g: &GOperator,
) -> Result<(DMatrix<Complex64>, DMatrix<Complex64>, Option<(f64, f64)>)> {
    if cfg.lambda == 0.0 {
        return Ok((g.gg.clone(), g.gg.clone(), None));
    }
    let l1 = build_l(g, FeedbackBranch::First, d, cfg.lambda, cfg.n_quad)?;
    let l2 = build_l(g, FeedbackBranch::Second, d, cfg.lambda, cfg.n_quad)?;
    let eigs = (l1.min_eig.min(l2.min_eig), l1.max_eig.max(l2.max_eig));
    Ok((l1.k_matrix(g)?, l2.k_matrix(g)?, Some(eigs)))
}

fn cmd_stabilize(args: &CommonArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let d = cfg.params.derived()?;
    let g = GOperator::new(cfg.gain.build(cfg.n_modes)?);
    let (w0, _) = load_data(cfg, &d, seed)?;
    let (k1, k2, l_eigs) = feedback_matrices(cfg, &d, &g)?;
    let mut evo = EvolutionConfig::new(cfg.dt, cfg.t_end)?;
    evo.record_every = cfg.record_every;
    evo.hs_order = cfg.hs_order;
    let traj = run(
        &evo,
        &w0,
        RunMode::ClosedLoop {
            k1: &k1,
            k2: &k2,
            linearized: cfg.linearized,
        },
        &d,
        Some(&g),
    )?;
    let (kappa, prefactor, r2) = decay_fit(&traj, (0.0, cfg.t_end))?;
    let mut monotone = true;
    for i in 1..traj.energy.len() {
        if traj.energy[i] > traj.energy[i - 1] + 1e-10 * traj.energy[0].max(1.0) {
            monotone = false;
        }
    }
    let out = OutDir::create(args, cfg)?;
    out.write_json("manifest.json", &manifest("stabilize", cfg))?;
    write_trajectory(&out, "trajectory.csv", &traj)?;
    out.write_json(
        "result.json",
        &serde_json::json!({
            "kappa": kappa,
            "prefactor": prefactor,
            "r2": r2,
            "monotone_energy": monotone,
            "lambda": cfg.lambda,
            "linearized": cfg.linearized,
            "l_eig_range": l_eigs,
            "initial_energy": traj.energy.first(),
            "final_energy": traj.energy.last(),
        }),
    )?;
    Ok(())
}

fn cmd_control_nonlinear(args: &CommonArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let d = cfg.params.derived()?;
    let es = ordered_basis(cfg.n_modes, &d);
    let g = GOperator::new(cfg.gain.build(cfg.n_modes)?);
    let (w0, w1) = load_data(cfg, &d, seed)?;
    let steer_cfg = SteerConfig {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        dt: cfg.dt,
        record_every: cfg.record_every,
        smallness: cfg.smallness,
    };
    let (plan, report) = steer_nonlinear(&w0, &w1, cfg.t_horizon, &d, &es, &g, &steer_cfg)?;
    let out = OutDir::create(args, cfg)?;
    out.write_json("manifest.json", &manifest("control-nonlinear", cfg))?;
    let mut w = out.csv_writer("iterates.csv")?;
    w.write_record(["iteration", "distance", "factor"])?;
    for (i, &dist) in report.distances.iter().enumerate() {
        let factor = if i == 0 { f64::NAN } else { report.factors[i - 1] };
        w.write_record(&[(i + 1).to_string(), fmt(dist), fmt(factor)])?;
    }
    w.flush().map_err(Error::Io)?;
    out.write_json(
        "result.json",
        &serde_json::json!({
            "report": report,
            "gramian_condition": plan.condition,
        }),
    )?;
    Ok(())
}

fn cmd_global_steer(args: &CommonArgs, cfg: &RunConfig, seed: u64) -> Result<()> {
    let d = cfg.params.derived()?;
    let es = ordered_basis(cfg.n_modes, &d);
    let g = GOperator::new(cfg.gain.build(cfg.n_modes)?);
    let (w0, w1) = load_data(cfg, &d, seed)?;
    if w1.l2_norm() > cfg.smallness {
        // Local steering only reaches small targets; a large target is the
        // documented limit of the composition.
        return Err(Error::NoContraction {
            grew: 0,
            history: vec![w1.l2_norm()],
        });
    }
    // Phase 1: damp with the lambda=0 feedback until the state is small.
    let mut state = w0.clone();
    let mut phase1_time = 0.0;
    let mut phase1_energy = Vec::new();
    if state.l2_norm() > cfg.smallness {
        let (k1, k2, _) = feedback_matrices(cfg, &d, &g)?;
        let chunk = 5.0_f64;
        let mut evo = EvolutionConfig::new(cfg.dt, chunk)?;
        evo.record_every = cfg.record_every;
        let max_chunks = 40;
        let mut reached = false;
        for _ in 0..max_chunks {
            let traj = run(
                &evo,
                &state,
                RunMode::ClosedLoop {
                    k1: &k1,
                    k2: &k2,
                    linearized: false,
                },
                &d,
                None,
            )?;
            phase1_energy.extend(traj.energy.iter().copied());
            state = traj.final_state.clone();
            phase1_time += chunk;
            if state.l2_norm() <= cfg.smallness {
                reached = true;
                break;
            }
        }
        if !reached {
            return Err(Error::Config(format!(
                "stabilization phase did not reach the smallness threshold {} within t = {}",
                cfg.smallness,
                phase1_time
            )));
        }
    }
    // Phase 2: local steering from the damped state to the target.
    let steer_cfg = SteerConfig {
        max_iter: cfg.max_iter,
        tol: cfg.tol,
        dt: cfg.dt,
        record_every: cfg.record_every,
        smallness: cfg.smallness,
    };
    let (plan, report) = steer_nonlinear(&state, &w1, cfg.t_horizon, &d, &es, &g, &steer_cfg)?;
    let out = OutDir::create(args, cfg)?;
    out.write_json("manifest.json", &manifest("global-steer", cfg))?;
    out.write_json(
        "result.json",
        &serde_json::json!({
            "phase1_time": phase1_time,
            "phase1_skipped": phase1_time == 0.0,
            "phase1_final_norm": state.l2_norm(),
            "total_time": phase1_time + cfg.t_horizon,
            "steering": report,
            "gramian_condition": plan.condition,
        }),
    )?;
    let mut w = out.csv_writer("phase1_energy.csv")?;
    w.write_record(["index", "energy"])?;
    for (i, e) in phase1_energy.iter().enumerate() {
        w.write_record(&[i.to_string(), fmt(*e)])?;
    }
    w.flush().map_err(Error::Io)?;
    Ok(())
}

fn cmd_resonance(args: &CommonArgs, cfg: &RunConfig) -> Result<()> {
    let r = &cfg.resonance;
    if r.n_min < 2 || r.n_max < r.n_min {
        return Err(Error::Config("resonance sweep needs 2 <= n_min <= n_max".into()));
    }
    let out = OutDir::create(args, cfg)?;
    out.write_json("manifest.json", &manifest("resonance", cfg))?;
    let hypothesis_ok = r.b2 != 0.0 && r.b1 / r.b2 < 0.25;
    let mut w = out.csv_writer("delta.csv")?;
    w.write_record(["n", "delta_min", "k1", "k2", "k3"])?;
    let mut rows = Vec::new();
    for n in r.n_min..=r.n_max {
        let (delta, (k1, k2, k3), _) = delta_significance_scan(n, r.b1, r.g1, r.b2, r.g2);
        w.write_record(&[
            n.to_string(),
            fmt(delta),
            k1.to_string(),
            k2.to_string(),
            k3.to_string(),
        ])?;
        rows.push((n, delta));
    }
    w.flush().map_err(Error::Io)?;
    out.write_json(
        "result.json",
        &serde_json::json!({
            "hypothesis_b1_over_b2_ok": hypothesis_ok,
            "b1": r.b1, "g1": r.g1, "b2": r.b2, "g2": r.g2,
            "delta_min_final": rows.last().map(|&(_, d)| d),
        }),
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json(_) => 2,
        Error::IllConditioned { .. }
        | Error::ClusterSingular
        | Error::NotPositiveDefinite { .. }
        | Error::SolveFailure
        | Error::ClusterTooLarge { .. } => 3,
        Error::BlowUp { .. } => 4,
        Error::NoContraction { .. } => 5,
        _ => 1,
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    let (args, name): (&CommonArgs, &str) = match &cli.command {
        Command::Spectrum(a) => (a, "spectrum"),
        Command::ControlLinear(a) => (a, "control-linear"),
        Command::Stabilize(a) => (a, "stabilize"),
        Command::ControlNonlinear(a) => (a, "control-nonlinear"),
        Command::GlobalSteer(a) => (a, "global-steer"),
        Command::Resonance(a) => (a, "resonance"),
    };
    let cfg = RunConfig::load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    match name {
        "spectrum" => cmd_spectrum(args, &cfg),
        "control-linear" => cmd_control_linear(args, &cfg, seed),
        "stabilize" => cmd_stabilize(args, &cfg, seed),
        "control-nonlinear" => cmd_control_nonlinear(args, &cfg, seed),
        "global-steer" => cmd_global_steer(args, &cfg, seed),
        "resonance" => cmd_resonance(args, &cfg),
        _ => unreachable!(),
    }
}

pub fn run_cli() -> i32 {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
