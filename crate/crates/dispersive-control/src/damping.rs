//! The mass-conserving control operator G, its Gram data, the per-mode
//! propagators, and the feedback operators L and K.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::field::{plan_fft, PeriodicField, StatePair, TAU};
use crate::params::DerivedParams;
use crate::spectral::{eigvec, omega, Eigensystem};

/// Resolution of the internal profile grid; fine enough that the spectral
/// tail of any smooth profile is at machine precision.
pub const PROFILE_GRID: usize = 8192;

/// Nonnegative smooth gain profile g with unit integral, supported in an
/// interval of the torus. The one field in the system whose mean is not
/// zero.
#[derive(Debug, Clone)]
pub struct GainProfile {
    pub n_modes: usize,
    /// Samples on the uniform PROFILE_GRID, normalized to integral one
    /// (identically zero for the empty profile).
    pub samples: Vec<f64>,
    /// Full spectrum of the normalized profile on PROFILE_GRID points.
    ghat: Vec<Complex64>,
    /// Declared support interval (x_lo, x_hi).
    pub support: (f64, f64),
}

impl GainProfile {
    /// The default C-infinity bump c*exp(-1/(1-((x-x0)/r)^2)) on
    /// (x0 - r, x0 + r), normalized so that its integral over the torus is
    /// exactly one.
    pub fn bump(n_modes: usize, center: f64, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius < PI) {
            return Err(Error::Config(format!(
                "bump radius must lie in (0, pi), got {radius}"
            )));
        }
        let m0 = PROFILE_GRID;
        let samples: Vec<f64> = (0..m0)
            .map(|j| {
                let x = TAU * j as f64 / m0 as f64;
                let t = ((x - center + PI).rem_euclid(TAU) - PI) / radius;
                if t.abs() < 1.0 {
                    (-1.0 / (1.0 - t * t)).exp()
                } else {
                    0.0
                }
            })
            .collect();
        Self::from_raw_samples(n_modes, samples, (center - radius, center + radius))
    }

    /// Profile from user-supplied samples on a uniform grid; resampled to
    /// the internal grid by trigonometric interpolation is avoided — the
    /// sample count must divide the internal grid, and values are repeated.
    pub fn from_samples(n_modes: usize, samples: &[f64]) -> Result<Self> {
        if samples.is_empty() || PROFILE_GRID % samples.len() != 0 {
            return Err(Error::Config(format!(
                "sample count must be a nonzero divisor of {PROFILE_GRID}, got {}",
                samples.len()
            )));
        }
        let rep = PROFILE_GRID / samples.len();
        let mut full = Vec::with_capacity(PROFILE_GRID);
        for &s in samples {
            full.extend(std::iter::repeat(s).take(rep));
        }
        Self::from_raw_samples(n_modes, full, (0.0, TAU))
    }

    /// The identically-zero profile: G vanishes. Used to probe the
    /// empty-support guard paths; deliberately skips the unit-integral
    /// invariant.
    pub fn empty(n_modes: usize) -> Self {
        GainProfile {
            n_modes,
            samples: vec![0.0; PROFILE_GRID],
            ghat: vec![Complex64::new(0.0, 0.0); PROFILE_GRID],
            support: (0.0, 0.0),
        }
    }

    fn from_raw_samples(n_modes: usize, raw: Vec<f64>, support: (f64, f64)) -> Result<Self> {
        let m0 = raw.len();
        if raw.iter().any(|&s| s < -1e-12) {
            return Err(Error::Config("gain profile is negative on the grid".into()));
        }
        let mut buf: Vec<Complex64> = raw.iter().map(|&s| Complex64::new(s, 0.0)).collect();
        plan_fft(m0, false).process(&mut buf);
        let mass = TAU * buf[0].re / m0 as f64;
        if mass <= 0.0 {
            return Err(Error::Config(
                "gain profile has nonpositive integral; use GainProfile::empty for the zero profile"
                    .into(),
            ));
        }
        // Normalize so 2*pi*ghat(0) = 1 exactly.
        let ghat: Vec<Complex64> = buf.iter().map(|c| c / (m0 as f64 * mass)).collect();
        let samples: Vec<f64> = raw.iter().map(|&s| s / mass).collect();
        Ok(GainProfile {
            n_modes,
            samples,
            ghat,
            support,
        })
    }

    /// Fourier coefficient of the normalized profile at any integer mode.
    pub fn ghat(&self, m: i64) -> Complex64 {
        let m0 = self.ghat.len() as i64;
        self.ghat[m.rem_euclid(m0) as usize]
    }

    /// Integral of the profile over the torus (1 by construction, 0 for the
    /// empty profile).
    pub fn mass(&self) -> f64 {
        (TAU * self.ghat[0]).re
    }

    /// Grid quadrature of the squared profile, int g^2 dx.
    pub fn g_sq_integral(&self) -> f64 {
        let m0 = self.samples.len() as f64;
        TAU / m0 * self.samples.iter().map(|s| s * s).sum::<f64>()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.iter().all(|&s| s == 0.0)
    }
}

/// The operator Gf = g (f - int g f), assembled as a dense matrix on the
/// truncated modes, together with its Gram weights beta_k.
#[derive(Debug, Clone)]
pub struct GOperator {
    pub profile: GainProfile,
    pub n_modes: usize,
    /// Matrix of G on the exponentials: gm[m, k] is the coefficient at
    /// e^{imx} of G e^{ikx}, i.e. ghat(m-k) - 2 pi ghat(-k) ghat(m).
    pub gm: DMatrix<Complex64>,
    /// G applied twice (the operator of the feedback law and the moment
    /// systems).
    pub gg: DMatrix<Complex64>,
    /// beta_k restricted to the truncated range |m| <= N (consistent with
    /// every solve done on the truncated space); index k + N.
    pub beta: Vec<f64>,
    /// beta_k summed over the full profile spectrum; tends to
    /// int g^2 / (2 pi) as |k| grows.
    pub beta_untruncated: Vec<f64>,
}

impl GOperator {
    pub fn new(profile: GainProfile) -> Self {
        let n = profile.n_modes;
        let ni = n as i64;
        let len = 2 * n + 1;
        let mut gm = DMatrix::zeros(len, len);
        for k in -ni..=ni {
            let gk = profile.ghat(-k);
            for m in -ni..=ni {
                gm[((m + ni) as usize, (k + ni) as usize)] =
                    profile.ghat(m - k) - TAU * gk * profile.ghat(m);
            }
        }
        // The k = 0 column and m = 0 row vanish identically because
        // 2 pi ghat(0) = 1; pin them to exact zeros.
        for i in 0..len {
            gm[(i, n)] = Complex64::new(0.0, 0.0);
            gm[(n, i)] = Complex64::new(0.0, 0.0);
        }
        let gg = &gm * &gm;
        let mut beta = vec![0.0; len];
        for c in 0..len {
            beta[c] = gm.column(c).iter().map(|z| z.norm_sqr()).sum();
        }
        beta[n] = 0.0;
        // Untruncated weights from the full profile spectrum:
        // sum over all m of |ghat(m-k) - 2 pi ghat(-k) ghat(m)|^2.
        let m0 = profile.ghat.len() as i64;
        let mut beta_untruncated = vec![0.0; len];
        for k in -ni..=ni {
            if k == 0 {
                continue;
            }
            let gk = profile.ghat(-k);
            let mut acc = 0.0;
            for m in (-m0 / 2)..(m0 / 2) {
                acc += (profile.ghat(m - k) - TAU * gk * profile.ghat(m)).norm_sqr();
            }
            beta_untruncated[(k + ni) as usize] = acc;
        }
        GOperator {
            n_modes: n,
            gm,
            gg,
            beta,
            beta_untruncated,
            profile,
        }
    }

    pub fn with_bump(n_modes: usize) -> Result<Self> {
        Ok(GOperator::new(GainProfile::bump(n_modes, PI, 1.0)?))
    }

    /// Minimal beta_k over 0 < |k| <= N: the observability floor delta.
    pub fn beta_floor(&self) -> f64 {
        let n = self.n_modes;
        self.beta
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != n)
            .map(|(_, &b)| b)
            .fold(f64::INFINITY, f64::min)
    }

    /// G applied to a coefficient vector (mean slot included, annihilated).
    pub fn apply_vec(&self, f: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(f);
        (&self.gm * v).data.into()
    }

    /// G applied twice to a coefficient vector.
    pub fn apply_gg_vec(&self, f: &[Complex64]) -> Vec<Complex64> {
        let v = DVector::from_column_slice(f);
        (&self.gg * v).data.into()
    }

    pub fn apply(&self, f: &PeriodicField) -> PeriodicField {
        assert_eq!(f.n_modes, self.n_modes);
        PeriodicField {
            n_modes: f.n_modes,
            coeffs: self.apply_vec(&f.coeffs),
        }
    }

    /// Squared observation norm 2 pi (|Gu|^2 + |Gv|^2) of a state.
    pub fn observation(&self, w: &StatePair) -> f64 {
        let gu = self.apply_vec(&w.u.coeffs);
        let gv = self.apply_vec(&w.v.coeffs);
        TAU * gu
            .iter()
            .chain(gv.iter())
            .map(|z| z.norm_sqr())
            .sum::<f64>()
    }

    /// The matrices of G in the two weighted exponential families
    /// (sigma_k e^{ikx} and tau_k e^{ikx}); both Hermitian.
    pub fn eigen_matrices(&self, es: &Eigensystem) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
        assert_eq!(es.n_modes, self.n_modes);
        let ni = self.n_modes as i64;
        let len = 2 * self.n_modes + 1;
        let mut a = DMatrix::zeros(len, len);
        let mut b = DMatrix::zeros(len, len);
        for j in -ni..=ni {
            let (_, zj) = es.ordered(j);
            for k in -ni..=ni {
                let (_, zk) = es.ordered(k);
                let g = self.gm[((k + ni) as usize, (j + ni) as usize)];
                a[((k + ni) as usize, (j + ni) as usize)] = zj[0] * zk[0] * g;
                b[((k + ni) as usize, (j + ni) as usize)] = zj[1] * zk[1] * g;
            }
        }
        (a, b)
    }
}

/// exp(i t M_k) from the eigendecomposition of the per-mode matrix.
pub fn mode_propagator(k: i64, t: f64, d: &DerivedParams) -> [[Complex64; 2]; 2] {
    let (wp, wm) = omega(k, d);
    let (zp, zm) = eigvec(k, d);
    let ep = Complex64::new(0.0, wp * t).exp();
    let em = Complex64::new(0.0, wm * t).exp();
    let mut p = [[Complex64::new(0.0, 0.0); 2]; 2];
    for a in 0..2 {
        for b in 0..2 {
            p[a][b] = ep * zp[a] * zp[b] + em * zm[a] * zm[b];
        }
    }
    p
}

/// Per-mode propagators for all |k| <= N at a fixed time step.
#[derive(Debug, Clone)]
pub struct PropagatorTable {
    pub n_modes: usize,
    pub blocks: Vec<[[Complex64; 2]; 2]>,
}

impl PropagatorTable {
    pub fn new(n_modes: usize, t: f64, d: &DerivedParams) -> Self {
        let ni = n_modes as i64;
        let blocks = (-ni..=ni).map(|k| mode_propagator(k, t, d)).collect();
        PropagatorTable { n_modes, blocks }
    }

    /// Applies the block-diagonal propagator to a coefficient pair in place.
    pub fn apply(&self, u: &mut [Complex64], v: &mut [Complex64]) {
        for (i, p) in self.blocks.iter().enumerate() {
            let (a, b) = (u[i], v[i]);
            u[i] = p[0][0] * a + p[0][1] * b;
            v[i] = p[1][0] * a + p[1][1] * b;
        }
    }

    pub fn apply_state(&self, w: &StatePair) -> StatePair {
        let mut out = w.clone();
        self.apply(&mut out.u.coeffs, &mut out.v.coeffs);
        out
    }
}

/// Which scalar group the feedback operator belongs to: the first equation
/// uses the (1, mu) dispersion pair, the second (alpha, zeta).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeedbackBranch {
    First,
    Second,
}

impl FeedbackBranch {
    pub fn dispersion(self, d: &DerivedParams) -> (f64, f64) {
        match self {
            FeedbackBranch::First => (1.0, d.mu),
            FeedbackBranch::Second => (d.alpha(), d.zeta),
        }
    }
}

/// The operator L = int_0^1 e^{-2 lambda tau} S(-tau) G G S(-tau)* dtau on
/// the zero-mean truncated space, with its factorization for K = GG L^{-1}.
#[derive(Debug, Clone)]
pub struct FeedbackOp {
    pub lambda: f64,
    pub branch: FeedbackBranch,
    pub n_modes: usize,
    /// Dense L on the zero-mean space (k = 0 row/column removed; index
    /// order k = -N..-1, 1..N).
    pub l_matrix: DMatrix<Complex64>,
    pub min_eig: f64,
    pub max_eig: f64,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
}

/// Eigenvalue range of a complex Hermitian matrix via its real symmetric
/// embedding [[X, -Y], [Y, X]].
fn hermitian_eig_range(h: &DMatrix<Complex64>) -> (f64, f64) {
    let n = h.nrows();
    let mut e = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = h[(i, j)];
            e[(i, j)] = z.re;
            e[(n + i, n + j)] = z.re;
            e[(i, n + j)] = -z.im;
            e[(n + i, j)] = z.im;
        }
    }
    let ev = e.symmetric_eigenvalues();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &x in ev.iter() {
        lo = lo.min(x);
        hi = hi.max(x);
    }
    (lo, hi)
}

/// Index map from the zero-mean reduced space to the full coefficient
/// range: reduced index r corresponds to full index r for r < N and r + 1
/// for r >= N.
#[inline]
fn reduced_to_full(r: usize, n: usize) -> usize {
    if r < n {
        r
    } else {
        r + 1
    }
}

/// Assembles L by composite Simpson quadrature over tau in [0,1] of
/// e^{-2 lambda tau} S(-tau) GG S(-tau)*, with S(t) the diagonal group of
/// the branch's dispersion phase. The result is Hermitized and its
/// eigenvalue range reported.
pub fn build_l(
    op: &GOperator,
    branch: FeedbackBranch,
    d: &DerivedParams,
    lambda: f64,
    n_quad: usize,
) -> Result<FeedbackOp> {
    if lambda < 0.0 {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    if n_quad < 8 || n_quad % 2 != 0 {
        return Err(Error::Config(format!(
            "n_quad must be even and >= 8, got {n_quad}"
        )));
    }
    let n = op.n_modes;
    let ni = n as i64;
    let (beta_c, gamma_c) = branch.dispersion(d);
    let phases: Vec<f64> = (-ni..=ni)
        .filter(|&k| k != 0)
        .map(|k| crate::spectral::phi(beta_c, gamma_c, k))
        .collect();
    let red = 2 * n;
    // GG restricted to the zero-mean space.
    let mut a = DMatrix::zeros(red, red);
    for r in 0..red {
        for c in 0..red {
            a[(r, c)] = op.gg[(reduced_to_full(r, n), reduced_to_full(c, n))];
        }
    }
    let h = 1.0 / n_quad as f64;
    let mut l = DMatrix::<Complex64>::zeros(red, red);
    for q in 0..=n_quad {
        let tau = q as f64 * h;
        let w = h / 3.0
            * if q == 0 || q == n_quad {
                1.0
            } else if q % 2 == 1 {
                4.0
            } else {
                2.0
            };
        let scale = w * (-2.0 * lambda * tau).exp();
        let diag: Vec<Complex64> = phases
            .iter()
            .map(|&p| Complex64::new(0.0, -p * tau).exp())
            .collect();
        for r in 0..red {
            for c in 0..red {
                l[(r, c)] += scale * diag[r] * a[(r, c)] * diag[c].conj();
            }
        }
    }
    // Hermitize to kill quadrature asymmetry.
    let lh = l.adjoint();
    let l_matrix = (l + lh).scale(0.5);
    let (min_eig, max_eig) = hermitian_eig_range(&l_matrix);
    if min_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eig });
    }
    let lu = l_matrix.clone().lu();
    Ok(FeedbackOp {
        lambda,
        branch,
        n_modes: n,
        l_matrix,
        min_eig,
        max_eig,
        lu,
    })
}

impl FeedbackOp {
    /// K f = G G L^{-1} f. For lambda = 0 the convention K = GG is applied
    /// directly without the solve.
    pub fn apply_k(&self, op: &GOperator, f: &PeriodicField) -> Result<PeriodicField> {
        assert_eq!(f.n_modes, self.n_modes);
        if self.lambda == 0.0 {
            return Ok(PeriodicField {
                n_modes: f.n_modes,
                coeffs: op.apply_gg_vec(&f.coeffs),
            });
        }
        let n = self.n_modes;
        let red = 2 * n;
        let rhs = DVector::from_iterator(red, (0..red).map(|r| f.coeffs[reduced_to_full(r, n)]));
        let y = self.lu.solve(&rhs).ok_or(Error::SolveFailure)?;
        let mut full = vec![Complex64::new(0.0, 0.0); 2 * n + 1];
        for r in 0..red {
            full[reduced_to_full(r, n)] = y[r];
        }
        Ok(PeriodicField {
            n_modes: n,
            coeffs: op.apply_gg_vec(&full),
        })
    }

    /// The dense matrix of K on the full coefficient range (zero row and
    /// column at k = 0); used by the closed-loop stepper.
    pub fn k_matrix(&self, op: &GOperator) -> Result<DMatrix<Complex64>> {
        let n = self.n_modes;
        let len = 2 * n + 1;
        if self.lambda == 0.0 {
            return Ok(op.gg.clone());
        }
        let red = 2 * n;
        let mut a = DMatrix::zeros(red, red);
        for r in 0..red {
            for c in 0..red {
                a[(r, c)] = op.gg[(reduced_to_full(r, n), reduced_to_full(c, n))];
            }
        }
        // K_red = GG_red * L^{-1}: solve L^T X^T = GG^T, i.e. use the
        // factorization on the adjoint through L's Hermiticity.
        let linv = self
            .l_matrix
            .clone()
            .try_inverse()
            .ok_or(Error::SolveFailure)?;
        let k_red = a * linv;
        let mut k = DMatrix::zeros(len, len);
        for r in 0..red {
            for c in 0..red {
                k[(reduced_to_full(r, n), reduced_to_full(c, n))] = k_red[(r, c)];
            }
        }
        Ok(k)
    }
}
