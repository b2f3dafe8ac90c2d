//! Real zero-mean periodic fields stored as truncated Fourier coefficients
//! under the convention f(x) = sum_k fhat(k) e^{ikx},
//! fhat(k) = (1/2pi) int f(x) e^{-ikx} dx.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::spectral::Eigensystem;

pub const TAU: f64 = 2.0 * PI;

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

pub(crate) fn plan_fft(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Truncated Fourier representation of a real field. Coefficients are
/// indexed by k + n_modes for |k| <= n_modes. The zero-mean invariant holds
/// for all dynamical states; `product` is the one operation that stores a
/// true (generally nonzero) mean in the k = 0 slot, which every consumer
/// annihilates with an immediate spectral derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicField {
    pub n_modes: usize,
    pub coeffs: Vec<Complex64>,
}

impl PeriodicField {
    pub fn zeros(n_modes: usize) -> Self {
        PeriodicField {
            n_modes,
            coeffs: vec![Complex64::new(0.0, 0.0); 2 * n_modes + 1],
        }
    }

    /// Validating constructor: Hermitian symmetry and zero mean within
    /// 1e-12 relative.
    pub fn from_coeffs(n_modes: usize, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != 2 * n_modes + 1 {
            return Err(Error::Config(format!(
                "coefficient vector has length {}, expected {}",
                coeffs.len(),
                2 * n_modes + 1
            )));
        }
        let f = PeriodicField { n_modes, coeffs };
        let scale = f.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max);
        let tol = 1e-12 * scale.max(1.0);
        if f.get(0).norm() > tol {
            return Err(Error::Config("field has nonzero mean".into()));
        }
        for k in 1..=n_modes as i64 {
            if (f.get(-k) - f.get(k).conj()).norm() > tol {
                return Err(Error::Config("field violates Hermitian symmetry".into()));
            }
        }
        Ok(f)
    }

    pub fn from_coeffs_unchecked(n_modes: usize, coeffs: Vec<Complex64>) -> Self {
        assert_eq!(coeffs.len(), 2 * n_modes + 1);
        PeriodicField { n_modes, coeffs }
    }

    #[inline]
    pub fn idx(&self, k: i64) -> usize {
        (k + self.n_modes as i64) as usize
    }

    #[inline]
    pub fn get(&self, k: i64) -> Complex64 {
        self.coeffs[self.idx(k)]
    }

    /// Sets the pair (k, -k) preserving Hermitian symmetry; k = 0 is
    /// rejected (the mean is structurally zero).
    pub fn set_mode(&mut self, k: i64, c: Complex64) {
        assert!(k != 0, "mode 0 is the mean and stays zero");
        let i = self.idx(k);
        let j = self.idx(-k);
        self.coeffs[i] = c;
        self.coeffs[j] = c.conj();
    }

    pub fn mean(&self) -> f64 {
        self.get(0).re
    }

    /// Weighted Sobolev norm (2 pi sum <k>^{2s} |fhat|^2)^{1/2}, <k> = 1+|k|.
    pub fn hs_norm(&self, s: f64) -> f64 {
        let n = self.n_modes as i64;
        let mut acc = 0.0;
        for k in -n..=n {
            let w = (1.0 + k.abs() as f64).powf(2.0 * s);
            acc += w * self.get(k).norm_sqr();
        }
        (TAU * acc).sqrt()
    }

    pub fn l2_norm(&self) -> f64 {
        self.hs_norm(0.0)
    }

    /// Spectral derivative: fhat(k) -> ik fhat(k).
    pub fn dx(&self) -> PeriodicField {
        let n = self.n_modes as i64;
        let mut out = self.clone();
        for k in -n..=n {
            let i = self.idx(k);
            out.coeffs[i] = Complex64::new(0.0, k as f64) * self.coeffs[i];
        }
        out
    }

    pub fn scale(&self, a: f64) -> PeriodicField {
        let mut out = self.clone();
        for c in &mut out.coeffs {
            *c *= a;
        }
        out
    }

    pub fn add(&self, other: &PeriodicField) -> PeriodicField {
        assert_eq!(self.n_modes, other.n_modes);
        let mut out = self.clone();
        for (c, o) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *c += o;
        }
        out
    }

    pub fn sub(&self, other: &PeriodicField) -> PeriodicField {
        assert_eq!(self.n_modes, other.n_modes);
        let mut out = self.clone();
        for (c, o) in out.coeffs.iter_mut().zip(&other.coeffs) {
            *c -= o;
        }
        out
    }

    pub fn max_coeff(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Physical samples at n_pts equispaced points x_j = 2 pi j / n_pts.
    pub fn to_grid(&self, n_pts: usize) -> Result<Vec<f64>> {
        if n_pts < 2 * self.n_modes + 1 {
            return Err(Error::GridTooCoarse {
                n_modes: self.n_modes,
                needed: 2 * self.n_modes + 1,
                got: n_pts,
            });
        }
        Ok(coeffs_to_grid(&self.coeffs, self.n_modes, n_pts))
    }

    /// Recovers the truncated coefficients from physical samples.
    pub fn from_grid(samples: &[f64], n_modes: usize) -> Result<Self> {
        if samples.len() < 2 * n_modes + 1 {
            return Err(Error::GridTooCoarse {
                n_modes,
                needed: 2 * n_modes + 1,
                got: samples.len(),
            });
        }
        let m = samples.len();
        let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        plan_fft(m, false).process(&mut buf);
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * n_modes + 1];
        for k in -(n_modes as i64)..=(n_modes as i64) {
            let src = k.rem_euclid(m as i64) as usize;
            coeffs[(k + n_modes as i64) as usize] = buf[src] / m as f64;
        }
        Ok(PeriodicField { n_modes, coeffs })
    }

    /// Dealiased pointwise product on a padded grid (>= 3N+2 points); the
    /// k = 0 slot of the result carries the true mean of f*g.
    pub fn product(&self, other: &PeriodicField) -> PeriodicField {
        assert_eq!(self.n_modes, other.n_modes);
        let m = dealias_grid_len(self.n_modes);
        let a = coeffs_to_grid(&self.coeffs, self.n_modes, m);
        let b = coeffs_to_grid(&other.coeffs, self.n_modes, m);
        let prod: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x * y).collect();
        PeriodicField::from_grid(&prod, self.n_modes).expect("padded grid is fine enough")
    }

    /// JSON-friendly (k, re, im) triples.
    pub fn to_triples(&self) -> Vec<(i64, f64, f64)> {
        let n = self.n_modes as i64;
        (-n..=n)
            .map(|k| {
                let c = self.get(k);
                (k, c.re, c.im)
            })
            .collect()
    }

    pub fn from_triples(n_modes: usize, triples: &[(i64, f64, f64)]) -> Result<Self> {
        let mut coeffs = vec![Complex64::new(0.0, 0.0); 2 * n_modes + 1];
        for &(k, re, im) in triples {
            if k.unsigned_abs() as usize > n_modes {
                return Err(Error::Config(format!("mode {k} outside truncation")));
            }
            coeffs[(k + n_modes as i64) as usize] = Complex64::new(re, im);
        }
        PeriodicField::from_coeffs(n_modes, coeffs)
    }

    /// Binary columnar serialization: little-endian f64 triplets (k, re, im).
    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(24 * (2 * self.n_modes + 1));
        for (k, re, im) in self.to_triples() {
            out.extend_from_slice(&(k as f64).to_le_bytes());
            out.extend_from_slice(&re.to_le_bytes());
            out.extend_from_slice(&im.to_le_bytes());
        }
        out
    }

    pub fn from_binary(n_modes: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() % 24 != 0 {
            return Err(Error::Config("binary field data not a multiple of 24 bytes".into()));
        }
        let mut triples = Vec::with_capacity(bytes.len() / 24);
        for ch in bytes.chunks_exact(24) {
            let k = f64::from_le_bytes(ch[0..8].try_into().unwrap());
            let re = f64::from_le_bytes(ch[8..16].try_into().unwrap());
            let im = f64::from_le_bytes(ch[16..24].try_into().unwrap());
            triples.push((k as i64, re, im));
        }
        PeriodicField::from_triples(n_modes, &triples)
    }
}

/// Padded grid length for quadratic dealiasing: the smallest power of two
/// at or above 3N + 2.
pub fn dealias_grid_len(n_modes: usize) -> usize {
    (3 * n_modes + 2).next_power_of_two()
}

pub(crate) fn coeffs_to_grid(coeffs: &[Complex64], n_modes: usize, n_pts: usize) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n_pts];
    for k in -(n_modes as i64)..=(n_modes as i64) {
        let dst = k.rem_euclid(n_pts as i64) as usize;
        buf[dst] = coeffs[(k + n_modes as i64) as usize];
    }
    plan_fft(n_pts, true).process(&mut buf);
    buf.into_iter().map(|c| c.re).collect()
}

/// A (u, v) pair with matching truncation; the state of the coupled system.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePair {
    pub u: PeriodicField,
    pub v: PeriodicField,
}

impl StatePair {
    pub fn zeros(n_modes: usize) -> Self {
        StatePair {
            u: PeriodicField::zeros(n_modes),
            v: PeriodicField::zeros(n_modes),
        }
    }

    pub fn new(u: PeriodicField, v: PeriodicField) -> Self {
        assert_eq!(u.n_modes, v.n_modes);
        StatePair { u, v }
    }

    pub fn n_modes(&self) -> usize {
        self.u.n_modes
    }

    /// Squared L2 x L2 norm, i.e. the energy functional of the system.
    pub fn energy(&self) -> f64 {
        let s: f64 = self
            .u
            .coeffs
            .iter()
            .chain(&self.v.coeffs)
            .map(|c| c.norm_sqr())
            .sum();
        TAU * s
    }

    pub fn l2_norm(&self) -> f64 {
        self.energy().sqrt()
    }

    pub fn hs_norm(&self, s: f64) -> f64 {
        self.u.hs_norm(s).hypot(self.v.hs_norm(s))
    }

    pub fn sub(&self, other: &StatePair) -> StatePair {
        StatePair {
            u: self.u.sub(&other.u),
            v: self.v.sub(&other.v),
        }
    }

    pub fn scale(&self, a: f64) -> StatePair {
        StatePair {
            u: self.u.scale(a),
            v: self.v.scale(a),
        }
    }
}

/// Projects a state onto the parity-ordered eigenbasis: per mode k the pair
/// (a_k, b_k) with u-hat(k) = a_k sigma_k and v-hat(k) = b_k tau_k. A
/// vanishing weight (only possible in the decoupled eta = 0 fallback) maps
/// to a zero coefficient.
pub fn eigen_expand(w: &StatePair, es: &Eigensystem) -> Vec<(Complex64, Complex64)> {
    assert_eq!(w.n_modes(), es.n_modes);
    let n = es.n_modes as i64;
    (-n..=n)
        .map(|k| {
            let (_, z) = es.ordered(k);
            let a = if z[0] != 0.0 {
                w.u.get(k) / z[0]
            } else {
                Complex64::new(0.0, 0.0)
            };
            let b = if z[1] != 0.0 {
                w.v.get(k) / z[1]
            } else {
                Complex64::new(0.0, 0.0)
            };
            (a, b)
        })
        .collect()
}

/// Inverse of `eigen_expand` on the represented subspace.
pub fn eigen_reconstruct(coeffs: &[(Complex64, Complex64)], es: &Eigensystem) -> StatePair {
    let n = es.n_modes as i64;
    assert_eq!(coeffs.len(), 2 * es.n_modes + 1);
    let mut w = StatePair::zeros(es.n_modes);
    for k in -n..=n {
        let i = (k + n) as usize;
        let (_, z) = es.ordered(k);
        w.u.coeffs[i] = coeffs[i].0 * z[0];
        w.v.coeffs[i] = coeffs[i].1 * z[1];
    }
    w
}
