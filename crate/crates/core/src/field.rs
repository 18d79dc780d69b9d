//! The GMRF distribution with precision (I − C(θ))/σ².
//!
//! All distributional quantities reduce to the eigenvalue grid
//! D_Σ[i,j] = σ²/(1 − μ[i,j]) of the covariance Σ = σ²(I − C(θ))⁻¹:
//! exact sampling colors Hermitian-symmetrized white noise by √D_Σ in the
//! frequency domain, lag covariances are inverse cosine transforms of D_Σ,
//! and Kullback–Leibler divergences are sums over eigenvalue ratios.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::circulant::{phi_extremes, precision_spectrum, BasisElement, SpectrumGrid, ThetaField};
use crate::error::{Error, Result};
use crate::grid::{dft2_inverse, Grid};
use crate::torus::{NeighborhoodModel, SymmetryGroup, TorusGeometry};

/// Fully specified field: θ ∈ Θ⁺ and innovation variance σ².
///
/// Construction verifies min eigenvalue of I − C(θ) > 0 and caches the
/// eigenvalue grid.
#[derive(Clone, Debug)]
pub struct GmrfParams {
    theta: ThetaField,
    sigma_sq: f64,
    lam: SpectrumGrid,
}

impl GmrfParams {
    pub fn new(theta: ThetaField, sigma_sq: f64) -> Result<Self> {
        if !(sigma_sq > 0.0) || !sigma_sq.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "sigma^2 must be positive and finite, got {sigma_sq}"
            )));
        }
        let lam = precision_spectrum(&theta);
        let (min_eigenvalue, _) = phi_extremes(&lam);
        if min_eigenvalue <= 0.0 {
            return Err(Error::NotPositiveDefinite { min_eigenvalue });
        }
        Ok(Self {
            theta,
            sigma_sq,
            lam,
        })
    }

    pub fn theta(&self) -> &ThetaField {
        &self.theta
    }

    pub fn sigma_sq(&self) -> f64 {
        self.sigma_sq
    }

    pub fn geometry(&self) -> &TorusGeometry {
        self.theta.geometry()
    }

    /// Eigenvalues of I − C(θ).
    pub fn precision_spectrum(&self) -> &SpectrumGrid {
        &self.lam
    }

    /// φ_max(Σ) = σ² / min eigenvalue of I − C(θ).
    pub fn phi_max_sigma(&self) -> f64 {
        let (lo, _) = phi_extremes(&self.lam);
        self.sigma_sq / lo
    }

    /// SHA-256 of (p, σ², θ), used to tie sample batches to parameters.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update((self.geometry().p() as u64).to_le_bytes());
        h.update(self.sigma_sq.to_le_bytes());
        for &v in self.theta.values().data() {
            h.update(v.to_le_bytes());
        }
        h.finalize().into()
    }
}

/// Eigenvalues of Σ, all positive.
#[derive(Clone, Debug)]
pub struct CovSpectrum {
    dsig: SpectrumGrid,
}

impl CovSpectrum {
    pub fn values(&self) -> &Grid {
        self.dsig.values()
    }

    pub fn grid(&self) -> &SpectrumGrid {
        &self.dsig
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.dsig.get(i, j)
    }

    pub fn phi_max(&self) -> f64 {
        self.dsig.values().max()
    }
}

/// D_Σ[i,j] = σ²/(1 − μ[i,j]).
pub fn cov_spectrum(params: &GmrfParams) -> CovSpectrum {
    let s2 = params.sigma_sq;
    CovSpectrum {
        dsig: params.lam.map(|lam| s2 / lam),
    }
}

/// n independent p×p realizations plus generation metadata.
#[derive(Clone, Debug)]
pub struct SampleBatch {
    pub geometry: TorusGeometry,
    pub n: usize,
    pub fields: Vec<Grid>,
    pub seed: u64,
    pub params_digest: Option<[u8; 32]>,
}

/// Exact sampler: per replicate, fill a Hermitian-symmetrized complex
/// Gaussian frequency grid, scale by √D_Σ, inverse transform, and keep the
/// real part (the imaginary residue is asserted to vanish).
///
/// Replicate r draws from an independent ChaCha stream keyed by (seed, r),
/// so the output is identical regardless of how many workers run.
pub fn sample(params: &GmrfParams, n: usize, seed: u64) -> Result<SampleBatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("need at least one replicate".into()));
    }
    let geometry = *params.geometry();
    let p = geometry.p();
    let dsig = cov_spectrum(params);
    let sqrt_dsig: Vec<f64> = dsig.values().data().iter().map(|&v| v.sqrt()).collect();
    let imag_tol = 1e-10 * dsig.phi_max().sqrt().max(1.0) * p as f64;

    let fields: Vec<Grid> = (0..n)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut freq = vec![Complex64::new(0.0, 0.0); p * p];
            for ki in 0..p {
                for kj in 0..p {
                    let partner = ((p - ki) % p, (p - kj) % p);
                    let this = (ki, kj);
                    if this == partner {
                        let a: f64 = rng.sample(StandardNormal);
                        freq[ki * p + kj] = Complex64::new(a, 0.0);
                    } else if this < partner {
                        let a: f64 = rng.sample(StandardNormal);
                        let b: f64 = rng.sample(StandardNormal);
                        let z = Complex64::new(a, b) / std::f64::consts::SQRT_2;
                        freq[ki * p + kj] = z;
                        freq[partner.0 * p + partner.1] = z.conj();
                    }
                }
            }
            for (k, z) in freq.iter_mut().enumerate() {
                *z *= sqrt_dsig[k];
            }
            dft2_inverse(p, &mut freq);
            let scale = 1.0 / p as f64;
            let max_imag = freq.iter().map(|c| c.im.abs() * scale).fold(0.0, f64::max);
            assert!(
                max_imag < imag_tol,
                "sampler imaginary residue {max_imag:.3e} exceeds {imag_tol:.3e}"
            );
            Grid::from_vec(p, freq.iter().map(|c| c.re * scale).collect())
        })
        .collect();

    Ok(SampleBatch {
        geometry,
        n,
        fields,
        seed,
        params_digest: Some(params.digest()),
    })
}

/// Full lag-covariance grid: entry (k,l) is Cov(X[0,0], X[k,l]) =
/// (1/p²) Σ cos(2π(ik+jl)/p)·D_Σ[i,j]; one inverse transform of D_Σ.
pub fn covariance_grid(params: &GmrfParams) -> Grid {
    let p = params.geometry().p();
    let dsig = cov_spectrum(params);
    let mut buf: Vec<Complex64> = dsig
        .values()
        .data()
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect();
    dft2_inverse(p, &mut buf);
    let scale = 1.0 / (p * p) as f64;
    Grid::from_vec(p, buf.iter().map(|c| c.re * scale).collect())
}

/// Exact lag covariance Cov(X[0,0], X[k,l]).
pub fn covariance_lag(params: &GmrfParams, k: i64, l: i64) -> f64 {
    let p = params.geometry().p();
    let pt = params.geometry().normalize(k, l);
    let dsig = cov_spectrum(params);
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            let phase = 2.0 * std::f64::consts::PI * ((i * pt.i + j * pt.j) % p) as f64 / p as f64;
            acc += phase.cos() * dsig.get(i, j);
        }
    }
    acc / (p * p) as f64
}

/// Var(X[0,0]) = mean of the eigenvalues of Σ.
pub fn variance_origin(params: &GmrfParams) -> f64 {
    let p = params.geometry().p();
    cov_spectrum(params).values().sum() / (p * p) as f64
}

/// Kullback–Leibler divergence between the zero-mean Gaussians with
/// precisions (I − C(θ₁))/σ² and (I − C(θ₂))/σ², in the spectral form
/// ½ Σ (λ₂/λ₁ − log(λ₂/λ₁) − 1).  The variance σ² cancels, so the third
/// argument only documents the parameterization.
pub fn kl_divergence(theta1: &ThetaField, theta2: &ThetaField, _sigma_sq: f64) -> Result<f64> {
    let lam1 = checked_precision_spectrum(theta1)?;
    let lam2 = checked_precision_spectrum(theta2)?;
    let mut acc = 0.0;
    for (l1, l2) in lam1.values().data().iter().zip(lam2.values().data()) {
        let ratio = l2 / l1;
        acc += ratio - ratio.ln() - 1.0;
    }
    Ok(0.5 * acc)
}

/// ½·(9/64)·Σ (1/λ₁ + 1/λ₂)²(λ₁ − λ₂)², an upper bound for [`kl_divergence`]
/// via x − 1 − log x ≤ (9/64)(x − 1/x)².
pub fn kl_upper_bound(theta1: &ThetaField, theta2: &ThetaField) -> Result<f64> {
    let lam1 = checked_precision_spectrum(theta1)?;
    let lam2 = checked_precision_spectrum(theta2)?;
    let mut acc = 0.0;
    for (l1, l2) in lam1.values().data().iter().zip(lam2.values().data()) {
        acc += (1.0 / l1 + 1.0 / l2).powi(2) * (l1 - l2).powi(2);
    }
    Ok(0.5 * (9.0 / 64.0) * acc)
}

fn checked_precision_spectrum(theta: &ThetaField) -> Result<SpectrumGrid> {
    let lam = precision_spectrum(theta);
    let (min_eigenvalue, _) = phi_extremes(&lam);
    if min_eigenvalue <= 0.0 {
        return Err(Error::NotPositiveDefinite { min_eigenvalue });
    }
    Ok(lam)
}

/// Infinite-lattice limit of cov(X[0,0], X[1,0]) for the isotropic
/// four-nearest-neighbor field (σ² = 1):
///
///   ½ ∫₀¹∫₀¹ (cos 2πx + cos 2πy) / (1 − 2α(cos 2πx + cos 2πy)) dx dy.
///
/// Tensor Gauss–Legendre quadrature with panel doubling until the relative
/// change drops below 1e−7.
pub fn moran_covariance_limit(alpha: f64) -> Result<f64> {
    if !(0.0..0.25).contains(&alpha) {
        return Err(Error::Precondition(format!(
            "moran limit needs 0 <= alpha < 1/4, got {alpha}"
        )));
    }
    let mut prev = f64::NAN;
    let mut panels = 1usize;
    loop {
        let value = moran_quadrature(alpha, panels);
        if !prev.is_nan() {
            let gap = (value - prev).abs();
            if gap <= 1e-7 * value.abs() || gap <= 1e-14 {
                return Ok(value);
            }
        }
        prev = value;
        panels *= 2;
        if panels > 4096 {
            return Err(Error::Precondition(format!(
                "moran quadrature did not stabilize at alpha = {alpha}"
            )));
        }
    }
}

/// 16-point Gauss–Legendre rule on [−1, 1] (positive half; symmetric).
const GL16_NODES: [f64; 8] = [
    0.0950125098376374,
    0.2816035507792589,
    0.4580167776572274,
    0.6178762444026438,
    0.7554044083550030,
    0.8656312023878318,
    0.9445750230732326,
    0.9894009349916499,
];
const GL16_WEIGHTS: [f64; 8] = [
    0.1894506104550685,
    0.1826034150449236,
    0.1691565193950025,
    0.1495959888165767,
    0.1246289712555339,
    0.0951585116824928,
    0.0622535239386479,
    0.0271524594117541,
];

fn moran_quadrature(alpha: f64, panels: usize) -> f64 {
    let mut xs = Vec::with_capacity(panels * 16);
    let mut ws = Vec::with_capacity(panels * 16);
    let h = 1.0 / panels as f64;
    for panel in 0..panels {
        let mid = (panel as f64 + 0.5) * h;
        for k in 0..8 {
            let dx = 0.5 * h * GL16_NODES[k];
            let w = 0.5 * h * GL16_WEIGHTS[k];
            xs.push(mid - dx);
            ws.push(w);
            xs.push(mid + dx);
            ws.push(w);
        }
    }
    let cosv: Vec<f64> = xs
        .iter()
        .map(|&x| (2.0 * std::f64::consts::PI * x).cos())
        .collect();
    let mut acc = 0.0;
    for (i, &ci) in cosv.iter().enumerate() {
        let mut inner = 0.0;
        for (j, &cj) in cosv.iter().enumerate() {
            let c = ci + cj;
            inner += ws[j] * c / (1.0 - 2.0 * alpha * c);
        }
        acc += ws[i] * inner;
    }
    0.5 * acc
}

/// Finite-p counterpart of the Moran integral: cov(X[0,0],X[1,0]) as the
/// lattice sum ½p⁻² Σ (cos+cos)/(1 − 2α(cos+cos)); equals
/// `covariance_lag(params, 1, 0)` for the 4NN field with σ² = 1.
pub fn moran_lattice_sum(alpha: f64, p: usize) -> Result<f64> {
    if !(0.0..0.25).contains(&alpha) {
        return Err(Error::Precondition(format!(
            "lattice sum needs 0 <= alpha < 1/4, got {alpha}"
        )));
    }
    TorusGeometry::new(p)?;
    let mut acc = 0.0;
    for i in 0..p {
        for j in 0..p {
            let c = (2.0 * std::f64::consts::PI * i as f64 / p as f64).cos()
                + (2.0 * std::f64::consts::PI * j as f64 / p as f64).cos();
            acc += c / (1.0 - 2.0 * alpha * c);
        }
    }
    Ok(0.5 * acc / (p * p) as f64)
}

/// Spectrum of H = C(Ψ^iso_{1,0}): h[i,j] = 2(cos(2πi/p) + cos(2πj/p)).
fn h_spectrum(p: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(p * p);
    for i in 0..p {
        for j in 0..p {
            out.push(
                2.0 * ((2.0 * std::f64::consts::PI * i as f64 / p as f64).cos()
                    + (2.0 * std::f64::consts::PI * j as f64 / p as f64).cos()),
            );
        }
    }
    out
}

/// Asymptotic variance terms of the one-orbit isotropic estimator.
#[derive(Clone, Copy, Debug)]
pub struct M1IsoVariance {
    /// 2σ⁴·tr(H²)/tr(H²Σ) with tr(H²) = 4p².
    pub risk_m1: f64,
    /// 2·tr{[(I − θ̃H)HΣ]²}/tr(H²Σ) at the projection coefficient θ̃.
    pub risk_to_projection: f64,
    /// θ̃ = tr(HΣ)/tr(H²Σ).
    pub projection_coefficient: f64,
}

/// Both variance terms computed spectrally (H and Σ commute in the Fourier
/// basis).
pub fn asymptotic_variance_m1_iso(params: &GmrfParams) -> M1IsoVariance {
    let p = params.geometry().p();
    let h = h_spectrum(p);
    let dsig = cov_spectrum(params);
    let d = dsig.values().data();
    let tr_h2: f64 = h.iter().map(|v| v * v).sum();
    let tr_h2_sigma: f64 = h.iter().zip(d).map(|(hv, dv)| hv * hv * dv).sum();
    let tr_h_sigma: f64 = h.iter().zip(d).map(|(hv, dv)| hv * dv).sum();
    let theta_tilde = tr_h_sigma / tr_h2_sigma;
    let s2 = params.sigma_sq();
    let risk_m1 = 2.0 * s2 * s2 * tr_h2 / tr_h2_sigma;
    let w: f64 = h
        .iter()
        .zip(d)
        .map(|(hv, dv)| {
            let t = (1.0 - theta_tilde * hv) * hv * dv;
            t * t
        })
        .sum();
    M1IsoVariance {
        risk_m1,
        risk_to_projection: 2.0 * w / tr_h2_sigma,
        projection_coefficient: theta_tilde,
    }
}

/// Report for the alternating field θ^(p): the isotropic orbit at lag
/// (p/4, p/4) with coefficient α, whose precision spectrum is
/// 1 − 4α·cos(πi/2)cos(πj/2).
#[derive(Clone, Copy, Debug)]
pub struct AlternatingReport {
    pub tr_h_sigma: f64,
    pub projection_coefficient: f64,
    pub tr_h4_sigma2_per_p2: f64,
    pub tr_h2_sigma_per_p2: f64,
    /// tr(H⁴Σ²)/tr(H²Σ): diverges like c/(1−4α) as α → 1/4.
    pub ratio: f64,
}

pub fn alternating_field_check(alpha: f64, p: usize, sigma_sq: f64) -> Result<AlternatingReport> {
    if p % 4 != 0 {
        return Err(Error::Precondition(format!(
            "alternating field needs p divisible by 4, got {p}"
        )));
    }
    if alpha.abs() >= 0.25 {
        return Err(Error::Precondition(format!(
            "alternating field needs |alpha| < 1/4, got {alpha}"
        )));
    }
    let geom = TorusGeometry::new(p)?;
    let lag = (p / 4) as i64;
    let orbit_entries: Vec<(i64, i64, f64)> = BasisElement::isotropic(geom, lag, lag)?
        .orbit
        .iter()
        .map(|q| (q.i as i64, q.j as i64, alpha))
        .collect();
    let theta = ThetaField::from_entries(geom, &orbit_entries)?;
    let params = GmrfParams::new(theta, sigma_sq)?;
    let dsig = cov_spectrum(&params);
    let h = h_spectrum(p);
    let d = dsig.values().data();
    let tr_h_sigma: f64 = h.iter().zip(d).map(|(hv, dv)| hv * dv).sum();
    let tr_h2_sigma: f64 = h.iter().zip(d).map(|(hv, dv)| hv * hv * dv).sum();
    let tr_h4_sigma2: f64 = h.iter().zip(d).map(|(hv, dv)| hv.powi(4) * dv * dv).sum();
    let p2 = (p * p) as f64;
    Ok(AlternatingReport {
        tr_h_sigma,
        projection_coefficient: tr_h_sigma / tr_h2_sigma,
        tr_h4_sigma2_per_p2: tr_h4_sigma2 / p2,
        tr_h2_sigma_per_p2: tr_h2_sigma / p2,
        ratio: tr_h4_sigma2 / tr_h2_sigma,
    })
}

/// Covariance of the orbit-symmetrized vector (X[o_k] + X[s(o_k)])_k over the
/// s-orbits of m; a self-symmetric orbit contributes X[o_k] alone.
pub fn symmetrized_covariance(params: &GmrfParams, m: &NeighborhoodModel) -> DMatrix<f64> {
    let cov = covariance_grid(params);
    let geom = *params.geometry();
    let orbits = m.orbits(SymmetryGroup::Central);
    let d = orbits.len();
    let mut v = DMatrix::<f64>::zeros(d, d);
    for (a, oa) in orbits.iter().enumerate() {
        for (b, ob) in orbits.iter().enumerate() {
            let mut acc = 0.0;
            for &u in &oa.members {
                for &w in &ob.members {
                    let lag = geom.sub(u, w);
                    acc += cov.get(lag.i, lag.j);
                }
            }
            v[(a, b)] = acc;
        }
    }
    v
}

/// Asymptotic risk lower bounds for a fixed model:
/// * `bound_h1` = 2σ⁴·d_m/φ_max(Σ);
/// * `bound_h2` = (d_m σ⁻²/2)(1 − ‖θ‖₁)(1 − ρ₁)², where ρ₁ is the ℓ1 norm of
///   the model projection (falls back to ‖θ‖₁, giving (1 − ‖θ‖₁)³).
pub fn risk_lower_bounds(
    params: &GmrfParams,
    m: &NeighborhoodModel,
    projection_l1: Option<f64>,
) -> Result<(f64, f64)> {
    let d_m = m.d_m() as f64;
    let s2 = params.sigma_sq();
    let bound_h1 = 2.0 * s2 * s2 * d_m / params.phi_max_sigma();
    let l1 = params.theta().l1_norm();
    if l1 >= 1.0 {
        return Err(Error::Precondition(format!(
            "second bound needs ||theta||_1 < 1, got {l1}"
        )));
    }
    let proj = projection_l1.unwrap_or(l1);
    let bound_h2 = d_m / s2 / 2.0 * (1.0 - l1) * (1.0 - proj).powi(2);
    Ok((bound_h1, bound_h2))
}
