//! Exact linear controls by the moment method: biorthogonal exponential
//! families, per-mode coefficient formulas with resonant-cluster
//! corrections, and the Picard iteration that extends the linear plans to
//! local nonlinear steering.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::damping::GOperator;
use crate::error::{Error, Result};
use crate::evolution::{run_with_defect, EvolutionConfig};
use crate::field::{PeriodicField, StatePair};
use crate::params::DerivedParams;
use crate::spectral::{cluster_frequencies, Branch, Eigensystem};

/// int_0^T e^{i d t} dt in closed form.
pub fn exp_integral(d: f64, t_horizon: f64) -> Complex64 {
    if (d * t_horizon).abs() < 1e-14 {
        Complex64::new(t_horizon, 0.0)
    } else {
        (Complex64::new(0.0, d * t_horizon).exp() - 1.0) / Complex64::new(0.0, d)
    }
}

fn cvec(len: usize) -> Vec<Complex64> {
    vec![Complex64::new(0.0, 0.0); len]
}

/// Finite biorthogonal family for a set of pairwise-distinct frequencies:
/// q_j(t) = sum_m comb[j,m] e^{i omega_m t} satisfies
/// int_0^T e^{-i omega_k t} q_j(t) dt = delta_jk.
#[derive(Debug, Clone)]
pub struct BiorthogonalFamily {
    pub t_horizon: f64,
    pub frequencies: Vec<f64>,
    pub comb: DMatrix<Complex64>,
    pub condition: f64,
    pub residual: f64,
}

pub const DEFAULT_COND_CAP: f64 = 1e12;

pub fn build_biorthogonal(freqs: &[f64], t_horizon: f64, cond_cap: f64) -> Result<BiorthogonalFamily> {
    if !(t_horizon > 0.0) {
        return Err(Error::Config(format!(
            "control horizon must be positive, got {t_horizon}"
        )));
    }
    let m = freqs.len();
    let mut gram = DMatrix::<Complex64>::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            gram[(a, b)] = exp_integral(freqs[b] - freqs[a], t_horizon);
        }
    }
    let sv = gram.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    let smin = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > cond_cap {
        return Err(Error::IllConditioned {
            cond: condition,
            cap: cond_cap,
        });
    }
    let mut inv = gram
        .clone()
        .try_inverse()
        .ok_or(Error::IllConditioned {
            cond: condition,
            cap: cond_cap,
        })?;
    // Two steps of Newton refinement on the inverse: squares the residual,
    // which an ill-conditioned (but admissible) Gram matrix needs to meet
    // the biorthogonality budget.
    for _ in 0..2 {
        let correction = DMatrix::identity(m, m).scale(2.0) - &gram * &inv;
        inv = &inv * correction;
    }
    let comb = inv.transpose();
    // Residual of the defining property: comb * gram^T = I.
    let check = &comb * gram.transpose();
    let mut residual = 0.0_f64;
    for a in 0..m {
        for b in 0..m {
            let target = if a == b { 1.0 } else { 0.0 };
            residual = residual.max((check[(a, b)] - target).norm());
        }
    }
    Ok(BiorthogonalFamily {
        t_horizon,
        frequencies: freqs.to_vec(),
        comb,
        condition,
        residual,
    })
}

impl BiorthogonalFamily {
    /// Evaluates q_j(t).
    pub fn eval_q(&self, j: usize, t: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for m in 0..self.frequencies.len() {
            acc += self.comb[(j, m)] * Complex64::new(0.0, self.frequencies[m] * t).exp();
        }
        acc
    }

    fn exp_vector(&self, t: f64) -> DVector<Complex64> {
        DVector::from_iterator(
            self.frequencies.len(),
            self.frequencies
                .iter()
                .map(|&w| Complex64::new(0.0, w * t).exp()),
        )
    }
}

/// One resonant cluster of the synthesis: its representative frequency,
/// its members in increasing (k, branch) order, and the solved coefficients
/// of the two per-cluster moment systems.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub omega: f64,
    pub members: Vec<(i64, Branch)>,
    pub f_coeffs: Vec<(f64, f64)>,
    pub h_coeffs: Vec<(f64, f64)>,
}

/// Synthesis tuning knobs.
#[derive(Debug, Clone, Copy)]
pub struct SynthesisOptions {
    /// Relative tolerance for frequency-tie detection.
    pub cluster_tol: f64,
    /// Gram condition cap; exceeding it raises IllConditioned.
    pub cond_cap: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        SynthesisOptions {
            cluster_tol: 1e-9,
            cond_cap: DEFAULT_COND_CAP,
        }
    }
}

/// A synthesized exact control for the linear system: the biorthogonal
/// family on cluster representatives, the per-cluster coefficient records,
/// and the assembled evaluators for both the control pair (f, h) and the
/// forcing pair (Gf, Gh).
#[derive(Debug, Clone)]
pub struct ControlPlan {
    pub n_modes: usize,
    pub t_horizon: f64,
    pub family: BiorthogonalFamily,
    pub clusters: Vec<ClusterRecord>,
    /// Columns of e^{i omega t} shapes of the forcing (Gf, Gh).
    forcing_f: DMatrix<Complex64>,
    forcing_h: DMatrix<Complex64>,
    /// Same for the controls themselves (one G application fewer).
    control_f: DMatrix<Complex64>,
    control_h: DMatrix<Complex64>,
    /// The data the plan was synthesized for (norm-ratio reporting).
    pub initial: StatePair,
    pub target: StatePair,
}

impl ControlPlan {
    /// Forcing (Gf, Gh)(t) in Fourier coefficients — what enters the
    /// right-hand side of the evolution.
    pub fn forcing(&self, t: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let e = self.family.exp_vector(t);
        let fu = &self.forcing_f * &e;
        let fv = &self.forcing_h * &e;
        (fu.data.into(), fv.data.into())
    }

    /// The control pair (f, h)(t) itself.
    pub fn control(&self, t: f64) -> (PeriodicField, PeriodicField) {
        let e = self.family.exp_vector(t);
        let fu = &self.control_f * &e;
        let fv = &self.control_h * &e;
        (
            PeriodicField::from_coeffs_unchecked(self.n_modes, fu.data.into()),
            PeriodicField::from_coeffs_unchecked(self.n_modes, fv.data.into()),
        )
    }

    /// L^2(0,T; H^s) norms of f and h by composite Simpson quadrature, and
    /// their ratio against the data norms ||(u0,v0)||_s + ||(u1,v1)||_s.
    pub fn plan_norm(&self, s: f64) -> PlanNorm {
        let n_t = 512;
        let h = self.t_horizon / n_t as f64;
        let mut f_sq = 0.0;
        let mut h_sq = 0.0;
        for q in 0..=n_t {
            let w = h / 3.0
                * if q == 0 || q == n_t {
                    1.0
                } else if q % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
            let (f, g) = self.control(q as f64 * h);
            f_sq += w * f.hs_norm(s).powi(2);
            h_sq += w * g.hs_norm(s).powi(2);
        }
        let data = self.initial.hs_norm(s) + self.target.hs_norm(s);
        let f_norm = f_sq.sqrt();
        let h_norm = h_sq.sqrt();
        PlanNorm {
            f_norm,
            h_norm,
            ratio: if data > 0.0 {
                (f_norm + h_norm) / data
            } else {
                0.0
            },
        }
    }

    /// Serializes the plan: horizon, representative frequencies, the
    /// combination matrix, and the cluster coefficient records. A plan is
    /// replayable from this plus the operator and eigensystem it was built
    /// against.
    pub fn to_json(&self) -> serde_json::Value {
        let m = self.family.frequencies.len();
        let comb: Vec<Vec<(f64, f64)>> = (0..m)
            .map(|j| {
                (0..m)
                    .map(|l| {
                        let c = self.family.comb[(j, l)];
                        (c.re, c.im)
                    })
                    .collect()
            })
            .collect();
        serde_json::json!({
            "t_horizon": self.t_horizon,
            "n_modes": self.n_modes,
            "frequencies": self.family.frequencies,
            "gram_condition": self.family.condition,
            "comb": comb,
            "clusters": self.clusters,
        })
    }

    /// Rebuilds a plan from its serialized record plus the eigensystem and
    /// operator (the shape matrices are re-assembled, not stored).
    pub fn from_json(
        value: &serde_json::Value,
        es: &Eigensystem,
        g: &GOperator,
    ) -> Result<ControlPlan> {
        let t_horizon = value["t_horizon"]
            .as_f64()
            .ok_or_else(|| Error::Config("plan record missing t_horizon".into()))?;
        let n_modes = value["n_modes"]
            .as_u64()
            .ok_or_else(|| Error::Config("plan record missing n_modes".into()))?
            as usize;
        if n_modes != es.n_modes || n_modes != g.n_modes {
            return Err(Error::Config("plan truncation mismatch".into()));
        }
        let clusters: Vec<ClusterRecord> = serde_json::from_value(value["clusters"].clone())?;
        let freqs: Vec<f64> = serde_json::from_value(value["frequencies"].clone())?;
        // Reuse the stored combination matrix: re-inverting the Gram matrix
        // would amplify last-digit serialization wobble by its condition
        // number, so a replayed plan would drift from the original.
        let comb_rows: Vec<Vec<(f64, f64)>> = serde_json::from_value(value["comb"].clone())?;
        let m = freqs.len();
        if comb_rows.len() != m || comb_rows.iter().any(|r| r.len() != m) {
            return Err(Error::Config("plan record has a malformed comb matrix".into()));
        }
        let comb = DMatrix::from_fn(m, m, |j, l| {
            Complex64::new(comb_rows[j][l].0, comb_rows[j][l].1)
        });
        let condition = value["gram_condition"].as_f64().unwrap_or(f64::NAN);
        let mut gram = DMatrix::<Complex64>::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                gram[(a, b)] = exp_integral(freqs[b] - freqs[a], t_horizon);
            }
        }
        let check = &comb * gram.transpose();
        let mut residual = 0.0_f64;
        for a in 0..m {
            for b in 0..m {
                let target = if a == b { 1.0 } else { 0.0 };
                residual = residual.max((check[(a, b)] - target).norm());
            }
        }
        let family = BiorthogonalFamily {
            t_horizon,
            frequencies: freqs,
            comb,
            condition,
            residual,
        };
        let mut plan = ControlPlan {
            n_modes,
            t_horizon,
            family,
            clusters,
            forcing_f: DMatrix::zeros(2 * n_modes + 1, m),
            forcing_h: DMatrix::zeros(2 * n_modes + 1, m),
            control_f: DMatrix::zeros(2 * n_modes + 1, m),
            control_h: DMatrix::zeros(2 * n_modes + 1, m),
            initial: StatePair::zeros(n_modes),
            target: StatePair::zeros(n_modes),
        };
        plan.assemble_shapes(es, g);
        Ok(plan)
    }

    fn assemble_shapes(&mut self, es: &Eigensystem, g: &GOperator) {
        let ni = self.n_modes as i64;
        for (j, cl) in self.clusters.iter().enumerate() {
            for (i, &(k, branch)) in cl.members.iter().enumerate() {
                let (_, z) = es.pair(k, branch);
                let col = (k + ni) as usize;
                let fc = Complex64::new(cl.f_coeffs[i].0, cl.f_coeffs[i].1);
                let hc = Complex64::new(cl.h_coeffs[i].0, cl.h_coeffs[i].1);
                for row in 0..2 * self.n_modes + 1 {
                    self.forcing_f[(row, j)] += fc * z[0] * g.gg[(row, col)];
                    self.forcing_h[(row, j)] += hc * z[1] * g.gg[(row, col)];
                    self.control_f[(row, j)] += fc * z[0] * g.gm[(row, col)];
                    self.control_h[(row, j)] += hc * z[1] * g.gm[(row, col)];
                }
            }
        }
        // Fold the combination matrix in: evaluators act on raw
        // exponentials of the representative frequencies.
        self.forcing_f *= self.family.comb.clone();
        self.forcing_h *= self.family.comb.clone();
        self.control_f *= self.family.comb.clone();
        self.control_h *= self.family.comb.clone();
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PlanNorm {
    pub f_norm: f64,
    pub h_norm: f64,
    pub ratio: f64,
}

/// Synthesizes the exact control steering w0 to w1 over [0, T] for the
/// linear system. The doubled family (both branches of every nonzero mode)
/// is partitioned into resonant clusters; each cluster contributes one
/// biorthogonal function and a small solved moment system, so exact
/// frequency ties degrade gracefully instead of blowing up the Gram matrix.
pub fn synthesize_linear(
    w0: &StatePair,
    w1: &StatePair,
    t_horizon: f64,
    es: &Eigensystem,
    g: &GOperator,
    opts: &SynthesisOptions,
) -> Result<ControlPlan> {
    let n = es.n_modes;
    let ni = n as i64;
    if w0.n_modes() != n || w1.n_modes() != n || g.n_modes != n {
        return Err(Error::Config("truncation mismatch in synthesis".into()));
    }
    // Doubled family over all nonzero modes.
    let mut members: Vec<(i64, Branch)> = Vec::with_capacity(4 * n);
    let mut freqs: Vec<f64> = Vec::with_capacity(4 * n);
    for k in -ni..=ni {
        if k == 0 {
            continue;
        }
        for branch in [Branch::Plus, Branch::Minus] {
            let (w, _) = es.pair(k, branch);
            members.push((k, branch));
            freqs.push(w);
        }
    }
    let groups = cluster_frequencies(&freqs, opts.cluster_tol);
    let reps: Vec<f64> = groups.iter().map(|c| freqs[c[0]]).collect();
    let family = build_biorthogonal(&reps, t_horizon, opts.cond_cap)?;
    let m = reps.len();
    let len = 2 * n + 1;
    let mut clusters = Vec::with_capacity(m);
    for (j, cl) in groups.iter().enumerate() {
        let mut mem: Vec<(i64, Branch)> = cl.iter().map(|&i| members[i]).collect();
        mem.sort_by_key(|&(k, b)| (k, matches!(b, Branch::Minus)));
        let f_coeffs = solve_cluster(&mem, reps[j], t_horizon, es, g, w0, w1, true)?;
        let h_coeffs = solve_cluster(&mem, reps[j], t_horizon, es, g, w0, w1, false)?;
        clusters.push(ClusterRecord {
            omega: reps[j],
            members: mem,
            f_coeffs,
            h_coeffs,
        });
    }
    let mut plan = ControlPlan {
        n_modes: n,
        t_horizon,
        family,
        clusters,
        forcing_f: DMatrix::zeros(len, m),
        forcing_h: DMatrix::zeros(len, m),
        control_f: DMatrix::zeros(len, m),
        control_h: DMatrix::zeros(len, m),
        initial: w0.clone(),
        target: w1.clone(),
    };
    plan.assemble_shapes(es, g);
    Ok(plan)
}

/// Solves the per-cluster moment system for one component. Members whose
/// weight (sigma for the f-system, tau for the h-system) vanishes place no
/// condition and receive a zero coefficient. A singleton system reduces to
/// the scalar formula coeff = (a1 e^{-i omega T} - a0) / (sigma^2 beta_k).
#[allow(clippy::too_many_arguments)]
fn solve_cluster(
    members: &[(i64, Branch)],
    _omega_rep: f64,
    t_horizon: f64,
    es: &Eigensystem,
    g: &GOperator,
    w0: &StatePair,
    w1: &StatePair,
    f_system: bool,
) -> Result<Vec<(f64, f64)>> {
    let ni = es.n_modes as i64;
    let weight = |k: i64, b: Branch| {
        let (_, z) = es.pair(k, b);
        if f_system {
            z[0]
        } else {
            z[1]
        }
    };
    let active: Vec<usize> = (0..members.len())
        .filter(|&i| weight(members[i].0, members[i].1).abs() > 1e-12)
        .collect();
    let mut coeffs = vec![(0.0, 0.0); members.len()];
    if active.is_empty() {
        return Ok(coeffs);
    }
    let na = active.len();
    let mut a = DMatrix::<Complex64>::zeros(na, na);
    let mut r = DVector::<Complex64>::zeros(na);
    for (row, &ia) in active.iter().enumerate() {
        let (ka, ba) = members[ia];
        let (wa, _) = es.pair(ka, ba);
        let sa = weight(ka, ba);
        let (d0, d1) = if f_system {
            (w0.u.get(ka), w1.u.get(ka))
        } else {
            (w0.v.get(ka), w1.v.get(ka))
        };
        r[row] = sa * (d1 * Complex64::new(0.0, -wa * t_horizon).exp() - d0);
        for (col, &ib) in active.iter().enumerate() {
            let (kb, bb) = members[ib];
            let sb = weight(kb, bb);
            a[(row, col)] = sa * sb * g.gg[((ka + ni) as usize, (kb + ni) as usize)];
        }
    }
    let lu = a.lu();
    let c = lu.solve(&r).ok_or(Error::ClusterSingular)?;
    for (col, &ib) in active.iter().enumerate() {
        coeffs[ib] = (c[col].re, c[col].im);
    }
    Ok(coeffs)
}

/// The two control operators of the linear theory as one callable plan:
/// Phi(u0, u1) = f and Psi(v0, v1) = h, exposed through
/// `ControlPlan::control` (and the forcing through `ControlPlan::forcing`).
pub fn phi_psi(
    w0: &StatePair,
    w1: &StatePair,
    t_horizon: f64,
    es: &Eigensystem,
    g: &GOperator,
) -> Result<ControlPlan> {
    synthesize_linear(w0, w1, t_horizon, es, g, &SynthesisOptions::default())
}

// ---------------------------------------------------------------------------
// Nonlinear steering
// ---------------------------------------------------------------------------

/// Inner linear-steering realization used inside the Picard loop. Unlike
/// the biorthogonal plan it solves the full controllability Gram matrix of
/// the doubled family in eigen coordinates, which keeps the transient state
/// excursion at the scale of the data — essential for contraction.
#[derive(Debug, Clone)]
pub struct GramianPlan {
    pub n_modes: usize,
    pub t_horizon: f64,
    pub condition: f64,
    /// Flat frequency list, index j = 2i + branch.
    om: Vec<f64>,
    /// Per-mode eigenvector columns: qk[i][component][branch].
    qk: Vec<[[f64; 2]; 2]>,
    /// Solved multiplier in eigen coordinates.
    p: Vec<Complex64>,
    gg: DMatrix<Complex64>,
    gm: DMatrix<Complex64>,
}

pub fn gramian_plan(
    w0: &StatePair,
    w1: &StatePair,
    t_horizon: f64,
    es: &Eigensystem,
    g: &GOperator,
) -> Result<GramianPlan> {
    let n = es.n_modes;
    let ni = n as i64;
    let len = 2 * n + 1;
    let mut om = vec![0.0; 2 * len];
    let mut qk = vec![[[0.0; 2]; 2]; len];
    for k in -ni..=ni {
        let i = (k + ni) as usize;
        let (wp, wm) = es.omega_pm(k);
        let zp = es.z_plus[i];
        let zm = es.z_minus[i];
        om[2 * i] = wp;
        om[2 * i + 1] = wm;
        qk[i] = [[zp[0], zm[0]], [zp[1], zm[1]]];
    }
    // Gram matrix W[j,l] = B[j,l] * int_0^T e^{i(om_j - om_l)(T-s)} ds with
    // B the two-application operator GG rotated into eigen coordinates.
    let flat = 2 * len;
    let mut w = DMatrix::<Complex64>::zeros(flat, flat);
    for i in 0..len {
        for ip in 0..len {
            let gval = g.gg[(i, ip)];
            if gval.norm_sqr() == 0.0 {
                continue;
            }
            for b in 0..2 {
                for bp in 0..2 {
                    let geom = qk[i][0][b] * qk[ip][0][bp] + qk[i][1][b] * qk[ip][1][bp];
                    let e = exp_integral(om[2 * i + b] - om[2 * ip + bp], t_horizon);
                    w[(2 * i + b, 2 * ip + bp)] = gval * geom * e;
                }
            }
        }
    }
    // Data in eigen coordinates; the mismatch after free flight.
    let to_eig = |s: &StatePair| -> Vec<Complex64> {
        let mut z = cvec(flat);
        for i in 0..len {
            for b in 0..2 {
                z[2 * i + b] = qk[i][0][b] * s.u.coeffs[i] + qk[i][1][b] * s.v.coeffs[i];
            }
        }
        z
    };
    let z0 = to_eig(w0);
    let z1 = to_eig(w1);
    let mut rhs: Vec<Complex64> = (0..flat)
        .map(|j| z1[j] - Complex64::new(0.0, om[j] * t_horizon).exp() * z0[j])
        .collect();
    // The k = 0 block is uncontrollable (G annihilates the mean) and its
    // data are structurally zero; remove it from the solve.
    let i0 = n;
    let keep: Vec<usize> = (0..flat).filter(|&j| j / 2 != i0).collect();
    rhs[2 * i0] = Complex64::new(0.0, 0.0);
    rhs[2 * i0 + 1] = Complex64::new(0.0, 0.0);
    let red = keep.len();
    let mut wr = DMatrix::<Complex64>::zeros(red, red);
    for (a, &ja) in keep.iter().enumerate() {
        for (b, &jb) in keep.iter().enumerate() {
            wr[(a, b)] = w[(ja, jb)];
        }
    }
    let sv = wr.clone().svd(false, false).singular_values;
    let smax = sv.iter().fold(0.0_f64, |a, &b| a.max(b));
    let smin = sv.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if condition > DEFAULT_COND_CAP {
        return Err(Error::IllConditioned {
            cond: condition,
            cap: DEFAULT_COND_CAP,
        });
    }
    let rr = DVector::from_iterator(red, keep.iter().map(|&j| rhs[j]));
    let sol = wr.lu().solve(&rr).ok_or(Error::SolveFailure)?;
    let mut p = cvec(flat);
    for (a, &j) in keep.iter().enumerate() {
        p[j] = sol[a];
    }
    Ok(GramianPlan {
        n_modes: n,
        t_horizon,
        condition,
        om,
        qk,
        p,
        gg: g.gg.clone(),
        gm: g.gm.clone(),
    })
}

impl GramianPlan {
    fn raw_uv(&self, t: f64) -> (DVector<Complex64>, DVector<Complex64>) {
        let len = 2 * self.n_modes + 1;
        let mut u = DVector::<Complex64>::zeros(len);
        let mut v = DVector::<Complex64>::zeros(len);
        for i in 0..len {
            let mut acc = [Complex64::new(0.0, 0.0); 2];
            for b in 0..2 {
                let j = 2 * i + b;
                let q = Complex64::new(0.0, -self.om[j] * (self.t_horizon - t)).exp() * self.p[j];
                acc[0] += self.qk[i][0][b] * q;
                acc[1] += self.qk[i][1][b] * q;
            }
            u[i] = acc[0];
            v[i] = acc[1];
        }
        (u, v)
    }

    /// Forcing (Gf, Gh)(t) in Fourier coefficients.
    pub fn forcing(&self, t: f64) -> (Vec<Complex64>, Vec<Complex64>) {
        let (u, v) = self.raw_uv(t);
        ((&self.gg * u).data.into(), (&self.gg * v).data.into())
    }

    /// The control pair (f, h)(t).
    pub fn control(&self, t: f64) -> (PeriodicField, PeriodicField) {
        let (u, v) = self.raw_uv(t);
        (
            PeriodicField::from_coeffs_unchecked(self.n_modes, (&self.gm * u).data.into()),
            PeriodicField::from_coeffs_unchecked(self.n_modes, (&self.gm * v).data.into()),
        )
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SteerConfig {
    pub max_iter: usize,
    /// Convergence threshold on the distance between successive iterates
    /// (max over recorded times, L2 x L2).
    pub tol: f64,
    pub dt: f64,
    pub record_every: usize,
    /// Advisory smallness threshold on the data (L2); exceeding it is
    /// reported, not rejected — the iteration itself decides.
    pub smallness: f64,
}

impl Default for SteerConfig {
    fn default() -> Self {
        SteerConfig {
            max_iter: 8,
            tol: 1e-9,
            dt: 1e-4,
            record_every: 100,
            smallness: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SteerReport {
    pub converged: bool,
    pub iterations: usize,
    /// Successive-iterate distances (from the second iteration on).
    pub distances: Vec<f64>,
    /// Ratios of successive distances.
    pub factors: Vec<f64>,
    pub terminal_error: f64,
    pub max_state_norm: f64,
    pub smallness_exceeded: bool,
}

/// Steers the nonlinear system from w0 to w1 over [0, T] by Picard
/// iteration: each pass synthesizes the linear control for the
/// defect-corrected target w1 - (w, z)(T) and resimulates the nonlinear
/// dynamics, accumulating the new defect with the integrator's own
/// quadrature so the fixed point is exact at the discrete level.
pub fn steer_nonlinear(
    w0: &StatePair,
    w1: &StatePair,
    t_horizon: f64,
    d: &DerivedParams,
    es: &Eigensystem,
    g: &GOperator,
    cfg: &SteerConfig,
) -> Result<(GramianPlan, SteerReport)> {
    let n = es.n_modes;
    let smallness_exceeded =
        w0.l2_norm() > cfg.smallness || w1.l2_norm() > cfg.smallness;
    let mut evo = EvolutionConfig::new(cfg.dt, t_horizon)?;
    evo.record_every = cfg.record_every;
    let mut defect = StatePair::zeros(n);
    let mut prev: Option<Vec<StatePair>> = None;
    let mut distances = Vec::new();
    let mut factors = Vec::new();
    let mut grew = 0usize;
    let mut best: Option<(GramianPlan, f64, f64)> = None;
    for it in 0..cfg.max_iter {
        let target = w1.sub(&defect);
        let plan = gramian_plan(w0, &target, t_horizon, es, g)?;
        let forcing = |t: f64| plan.forcing(t);
        let dr = run_with_defect(&evo, w0, &forcing, d)?;
        let err = dr.final_state.sub(w1).l2_norm();
        let mut dist = f64::INFINITY;
        if let Some(p) = &prev {
            dist = p
                .iter()
                .zip(&dr.recorded)
                .map(|(a, b)| a.sub(b).l2_norm())
                .fold(0.0, f64::max);
            if let Some(&last) = distances.last() {
                factors.push(dist / last);
                if dist > last {
                    grew += 1;
                } else {
                    grew = 0;
                }
            }
            distances.push(dist);
            if grew >= 3 {
                return Err(Error::NoContraction {
                    grew,
                    history: distances,
                });
            }
        }
        prev = Some(dr.recorded);
        defect = dr.defect;
        best = Some((plan, err, dr.max_norm));
        if dist <= cfg.tol || err == 0.0 {
            let (plan, err, mx) = best.unwrap();
            return Ok((
                plan,
                SteerReport {
                    converged: true,
                    iterations: it + 1,
                    distances,
                    factors,
                    terminal_error: err,
                    max_state_norm: mx,
                    smallness_exceeded,
                },
            ));
        }
    }
    let (plan, err, mx) = best.expect("max_iter >= 1");
    Ok((
        plan,
        SteerReport {
            converged: false,
            iterations: cfg.max_iter,
            distances,
            factors,
            terminal_error: err,
            max_state_norm: mx,
            smallness_exceeded,
        },
    ))
}
