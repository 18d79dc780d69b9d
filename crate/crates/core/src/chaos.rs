//! Suprema of order-2 Rademacher/Gaussian chaos.
//!
//! A coefficient family t (pair terms t_{{i,j}}, square terms t_{{i}}, and a
//! constant t_∅) defines
//!
//!   T = sup_t |Σ_{{i,j}} t_{{i,j}}Y_iY_j + Σ_i t_{{i}}Y_i² + t_∅|.
//!
//! The deviation of T above its mean is controlled by two functionals with
//! closed forms over the symmetrized matrix M = (1+δ_{ij})∘t:
//!
//! * D(y) = sup over elements of ‖M y‖₂ (α-supremum by Cauchy–Schwarz),
//! * E    = sup over elements of the largest singular value of M,
//!
//! via P{T ≥ E[T]+x} ≤ exp(−min(x²/(L₁E[D]²), x/(L₂E))).  Here compactness
//! is realized by finite families, so suprema are maxima.
//!
//! [`model_pair_stats`] instantiates the machinery for the model-pair spaces
//! U'_{m,m'} of the selection analysis: Z (projected chi-square deviation),
//! B (operator-norm scale), and W (quadratic supremum), with their exact
//! identities and bounds checked by Monte Carlo.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{cov_spectrum, GmrfParams};
use crate::torus::{orbit_decomposition, NeighborhoodModel, SymmetryGroup};

/// One coefficient vector: symmetric pair matrix (diagonal = square terms)
/// plus a constant.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChaosElement {
    /// Symmetric N×N; entry (i,j), i≠j, is t_{{i,j}}, diagonal is t_{{i}}.
    pub pairs: Vec<Vec<f64>>,
    pub constant: f64,
}

impl ChaosElement {
    pub fn new(pairs: Vec<Vec<f64>>, constant: f64) -> Result<Self> {
        let n = pairs.len();
        for row in &pairs {
            if row.len() != n {
                return Err(Error::InvalidArgument("pair matrix must be square".into()));
            }
        }
        for i in 0..n {
            for j in 0..n {
                if !pairs[i][j].is_finite() {
                    return Err(Error::InvalidArgument("coefficients must be finite".into()));
                }
                if (pairs[i][j] - pairs[j][i]).abs() > 1e-12 {
                    return Err(Error::InvalidArgument(format!(
                        "pair matrix must be symmetric; ({i},{j}) mismatch"
                    )));
                }
            }
        }
        if !constant.is_finite() {
            return Err(Error::InvalidArgument("constant must be finite".into()));
        }
        Ok(Self { pairs, constant })
    }

    pub fn dim(&self) -> usize {
        self.pairs.len()
    }

    /// M = (1+δ_{ij})∘t: off-diagonal t_{ij}, diagonal 2t_{ii}.
    fn m_matrix(&self) -> DMatrix<f64> {
        let n = self.dim();
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * self.pairs[i][i]
            } else {
                self.pairs[i][j]
            }
        })
    }
}

/// A finite family; finiteness realizes the compactness of the index set.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChaosFamily {
    pub elements: Vec<ChaosElement>,
}

impl ChaosFamily {
    pub fn new(elements: Vec<ChaosElement>) -> Result<Self> {
        if elements.is_empty() {
            return Err(Error::InvalidArgument("family must be nonempty".into()));
        }
        let n = elements[0].dim();
        if elements.iter().any(|e| e.dim() != n) {
            return Err(Error::InvalidArgument(
                "all elements must share one dimension".into(),
            ));
        }
        Ok(Self { elements })
    }

    pub fn dim(&self) -> usize {
        self.elements[0].dim()
    }
}

/// Σ_{{i,j}} t_{{i,j}}y_iy_j + Σ_i t_{{i}}y_i² + t_∅ for one element.
pub fn chaos_value(elem: &ChaosElement, y: &[f64]) -> Result<f64> {
    let n = elem.dim();
    if y.len() != n {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: element has {n}, y has {}",
            y.len()
        )));
    }
    let mut acc = elem.constant;
    for i in 0..n {
        acc += elem.pairs[i][i] * y[i] * y[i];
        for j in (i + 1)..n {
            acc += elem.pairs[i][j] * y[i] * y[j];
        }
    }
    Ok(acc)
}

/// T(y) = max over elements of |chaos_value|.
pub fn family_supremum(family: &ChaosFamily, y: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for elem in &family.elements {
        best = best.max(chaos_value(elem, y)?.abs());
    }
    Ok(best)
}

/// E = max over elements of the largest singular value of M = (1+δ)∘t.
pub fn operator_e(family: &ChaosFamily) -> f64 {
    family
        .elements
        .iter()
        .map(|e| {
            nalgebra::SymmetricEigen::new(e.m_matrix())
                .eigenvalues
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

/// D(y) = max over elements of ‖M y‖₂.
pub fn functional_d(family: &ChaosFamily, y: &[f64]) -> Result<f64> {
    if y.len() != family.dim() {
        return Err(Error::InvalidArgument("dimension mismatch".into()));
    }
    let yv = DVector::from_column_slice(y);
    Ok(family
        .elements
        .iter()
        .map(|e| (e.m_matrix() * &yv).norm())
        .fold(0.0, f64::max))
}

/// Driving noise for the tail experiment.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TailMode {
    Gaussian,
    /// Each coordinate is a normalized block sum of `block` Rademacher signs
    /// (block = 1 is plain Rademacher; large blocks approach the Gaussian).
    Rademacher { block: usize },
}

/// Outcome of one Monte Carlo tail experiment.
#[derive(Clone, Debug, Serialize)]
pub struct TailReport {
    pub e_t: f64,
    pub e_d: f64,
    /// Exact E (closed form), not an MC estimate.
    pub e_const: f64,
    pub xs: Vec<f64>,
    /// Empirical survival P(T ≥ E[T] + x).
    pub tail: Vec<f64>,
    /// Binomial standard errors of `tail`.
    pub se: Vec<f64>,
    /// True where fewer than 50 exceedances were observed.
    pub censored: Vec<bool>,
    /// Smallest grid pair (L₁, L₂) whose bound dominates tail + 2·se
    /// everywhere, searched on the log₂ grid [2⁻⁴, 2¹⁰]; None if无 feasible.
    pub fitted: Option<(f64, f64)>,
    /// Bound curve at the fitted constants (empty when fitted is None).
    pub bound: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
    pub mode: TailMode,
}

fn draw_y(rng: &mut ChaCha12Rng, n: usize, mode: TailMode) -> Vec<f64> {
    match mode {
        TailMode::Gaussian => (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect(),
        TailMode::Rademacher { block } => {
            let scale = 1.0 / (block as f64).sqrt();
            (0..n)
                .map(|_| {
                    let mut acc = 0.0;
                    for _ in 0..block {
                        acc += if rng.gen::<bool>() { 1.0 } else { -1.0 };
                    }
                    acc * scale
                })
                .collect()
        }
    }
}

/// Tail bound prefactor: 1 for the Gaussian inequality, 4 for Rademacher.
fn bound_prefactor(mode: TailMode) -> f64 {
    match mode {
        TailMode::Gaussian => 1.0,
        TailMode::Rademacher { .. } => 4.0,
    }
}

fn deviation_bound(x: f64, e_d: f64, e_const: f64, l1: f64, l2: f64, prefactor: f64) -> f64 {
    let quad = if e_d > 0.0 {
        x * x / (e_d * e_d * l1)
    } else {
        f64::INFINITY
    };
    let lin = if e_const > 0.0 {
        x / (e_const * l2)
    } else {
        f64::INFINITY
    };
    let expo = quad.min(lin);
    if expo.is_infinite() {
        0.0
    } else {
        prefactor * (-expo).exp()
    }
}

/// Monte Carlo estimates of E[T] and E[D], the empirical survival on the x
/// grid, and the smallest (L₁, L₂) making the deviation bound dominate the
/// tail plus two standard errors.  Deterministic given the seed.
pub fn tail_experiment(
    family: &ChaosFamily,
    n_mc: usize,
    x_grid: &[f64],
    seed: u64,
    mode: TailMode,
) -> Result<TailReport> {
    if n_mc < 10_000 {
        return Err(Error::Precondition(format!(
            "tail experiment needs n_mc >= 10^4, got {n_mc}"
        )));
    }
    if let TailMode::Rademacher { block } = mode {
        if block == 0 {
            return Err(Error::InvalidArgument("block size must be >= 1".into()));
        }
    }
    let n = family.dim();
    let stats: Vec<(f64, f64)> = (0..n_mc)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let y = draw_y(&mut rng, n, mode);
            let t = family_supremum(family, &y).expect("dimensions match");
            let d = functional_d(family, &y).expect("dimensions match");
            (t, d)
        })
        .collect();
    let e_t = stats.iter().map(|s| s.0).sum::<f64>() / n_mc as f64;
    let e_d = stats.iter().map(|s| s.1).sum::<f64>() / n_mc as f64;
    let e_const = operator_e(family);

    let mut tail = Vec::with_capacity(x_grid.len());
    let mut se = Vec::with_capacity(x_grid.len());
    let mut censored = Vec::with_capacity(x_grid.len());
    for &x in x_grid {
        let count = stats.iter().filter(|s| s.0 >= e_t + x).count();
        let p_hat = count as f64 / n_mc as f64;
        tail.push(p_hat);
        se.push((p_hat * (1.0 - p_hat) / n_mc as f64).sqrt());
        censored.push(count < 50);
    }

    let prefactor = bound_prefactor(mode);
    let mut fitted: Option<(f64, f64)> = None;
    let mut best_score = f64::INFINITY;
    for k1 in -4i32..=10 {
        for k2 in -4i32..=10 {
            let (l1, l2) = (2f64.powi(k1), 2f64.powi(k2));
            let dominates = x_grid.iter().enumerate().all(|(ix, &x)| {
                deviation_bound(x, e_d, e_const, l1, l2, prefactor) >= tail[ix] + 2.0 * se[ix]
            });
            if dominates {
                let score = l1 * l2;
                if score < best_score || (score == best_score && Some((l1, l2)) < fitted) {
                    best_score = score;
                    fitted = Some((l1, l2));
                }
            }
        }
    }
    let bound = match fitted {
        Some((l1, l2)) => x_grid
            .iter()
            .map(|&x| deviation_bound(x, e_d, e_const, l1, l2, prefactor))
            .collect(),
        None => Vec::new(),
    };

    Ok(TailReport {
        e_t,
        e_d,
        e_const,
        xs: x_grid.to_vec(),
        tail,
        se,
        censored,
        fitted,
        bound,
        n_mc,
        seed,
        mode,
    })
}

/// Orthonormal diagonal basis of U'_{m,m'} = span{C(Ψ_k), C(Ψ_k)C(Ψ_l)}·√D_Σ/p
/// in the Fourier basis, where Ψ ranges over the s-orbits of m ∪ m'.
/// Returns the basis as rows (each a p²-vector); the row count is the rank
/// d_{m²,m'²} (tolerance 1e−10 relative to the largest input norm).
pub fn model_pair_basis(
    params: &GmrfParams,
    m: &NeighborhoodModel,
    m_prime: &NeighborhoodModel,
) -> Result<Vec<Vec<f64>>> {
    let geom = *params.geometry();
    if m.geometry().p() != geom.p() || m_prime.geometry().p() != geom.p() {
        return Err(Error::InvalidArgument("mismatched grid sizes".into()));
    }
    let p = geom.p();
    let p2 = p * p;
    let mut union: Vec<_> = m.points().to_vec();
    union.extend_from_slice(m_prime.points());
    union.sort_unstable();
    union.dedup();
    let orbits = orbit_decomposition(&geom, &union, SymmetryGroup::Central);
    let spectra: Vec<Vec<f64>> = orbits
        .iter()
        .map(|o| {
            crate::circulant::BasisElement::anisotropic(
                geom,
                o.representative.i as i64,
                o.representative.j as i64,
            )
            .expect("orbit representatives are non-origin")
            .spectrum_values()
        })
        .collect();

    let weight: Vec<f64> = cov_spectrum(params)
        .values()
        .data()
        .iter()
        .map(|&v| v.sqrt() / p as f64)
        .collect();

    let mut raw: Vec<Vec<f64>> = Vec::new();
    for s in &spectra {
        raw.push(s.iter().zip(&weight).map(|(a, w)| a * w).collect());
    }
    for k in 0..spectra.len() {
        for l in k..spectra.len() {
            raw.push(
                spectra[k]
                    .iter()
                    .zip(&spectra[l])
                    .zip(&weight)
                    .map(|((a, b), w)| a * b * w)
                    .collect(),
            );
        }
    }

    // Modified Gram–Schmidt with one re-orthogonalization pass.
    let max_norm = raw
        .iter()
        .map(|v| v.iter().map(|x| x * x).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let tol = 1e-10 * max_norm.max(1.0);
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for mut v in raw {
        for _ in 0..2 {
            for b in &basis {
                let dot: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= dot * bi;
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > tol {
            for vi in v.iter_mut() {
                *vi /= norm;
            }
            basis.push(v);
        }
        if basis.len() == p2 {
            break;
        }
    }
    Ok(basis)
}

/// Monte Carlo and exact statistics for the model pair (m, m').
#[derive(Clone, Debug, Serialize)]
pub struct ModelPairReport {
    /// Rank of U'_{m,m'}; the surrogate for d_{m²,m'²}.
    pub d: usize,
    /// Exact E[Z²] = (2/np²)·Σ_i tr(F_i D_Σ F_i).
    pub exact_e_z2: f64,
    /// Paper bound 2·d·φ_max(Σ)/(np²).
    pub bound_z2: f64,
    pub e_z: f64,
    pub e_z2: f64,
    pub se_z2: f64,
    /// Exact B = (2/n)·sup_R φ_max(R√D_Σ/p) over the unit ball of U'.
    pub exact_b: f64,
    /// Paper bound 2√φ_max(Σ)/(np).
    pub bound_b: f64,
    pub e_w: f64,
    pub se_w: f64,
    /// Paper bound (4φ_max(Σ)/np²)(1 + √(2d/n)).
    pub bound_w: f64,
    /// Largest |‖Π u‖² − Σ⟨F_i,u⟩²| observed (two routes to Z²).
    pub max_identity_gap: f64,
    pub jensen_ok: bool,
    pub z2_exact_ok: bool,
    pub z2_bound_ok: bool,
    pub b_bound_ok: bool,
    pub w_bound_ok: bool,
    pub n: usize,
    pub n_mc: usize,
    pub seed: u64,
}

/// Z_{m'} = ‖Π_{U'}(√D_Σ/p)(avg YY* − I)‖_F and W from n-sample standard
/// normal batches, with the exact identities and the three deviation bounds
/// checked within two MC standard errors.
pub fn model_pair_stats(
    params: &GmrfParams,
    m: &NeighborhoodModel,
    m_prime: &NeighborhoodModel,
    n: usize,
    n_mc: usize,
    seed: u64,
) -> Result<ModelPairReport> {
    if n == 0 || n_mc == 0 {
        return Err(Error::InvalidArgument("need n >= 1 and n_mc >= 1".into()));
    }
    let p = params.geometry().p();
    let p2 = p * p;
    let basis = model_pair_basis(params, m, m_prime)?;
    let d = basis.len();
    let dsig = cov_spectrum(params);
    let phi_max = dsig.phi_max();

    let exact_e_z2 = 2.0 / (n as f64 * p2 as f64)
        * basis
            .iter()
            .map(|f| {
                f.iter()
                    .zip(dsig.values().data())
                    .map(|(fi, dv)| fi * fi * dv)
                    .sum::<f64>()
            })
            .sum::<f64>();
    let bound_z2 = 2.0 * d as f64 * phi_max / (n as f64 * p2 as f64);

    // Column norms of the basis matrix: sup_λ |Σ_i λ_i F_i[j]| = ‖F_col[j]‖.
    let weight: Vec<f64> = dsig
        .values()
        .data()
        .iter()
        .map(|&v| v.sqrt() / p as f64)
        .collect();
    let exact_b = (2.0 / n as f64)
        * (0..p2)
            .map(|j| {
                let col: f64 = basis.iter().map(|f| f[j] * f[j]).sum();
                weight[j] * col.sqrt()
            })
            .fold(0.0, f64::max);
    let bound_b = 2.0 * phi_max.sqrt() / (n as f64 * p as f64);
    let bound_w = 4.0 * phi_max / (n as f64 * p2 as f64) * (1.0 + (2.0 * d as f64 / n as f64).sqrt());

    struct RepStat {
        z: f64,
        z2: f64,
        w: f64,
        identity_gap: f64,
    }

    let dsig_data = dsig.values().data();
    let reps: Vec<RepStat> = (0..n_mc)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            // q_j = (1/n)Σ_k Y_k[j]²   (diagonal of avg YY*).
            let mut q = vec![0.0f64; p2];
            for _ in 0..n {
                for qj in q.iter_mut() {
                    let y: f64 = rng.sample(StandardNormal);
                    *qj += y * y;
                }
            }
            for qj in q.iter_mut() {
                *qj /= n as f64;
            }
            let u: Vec<f64> = q
                .iter()
                .zip(&weight)
                .map(|(qj, w)| w * (qj - 1.0))
                .collect();
            let coeffs: Vec<f64> = basis
                .iter()
                .map(|f| f.iter().zip(&u).map(|(fi, ui)| fi * ui).sum())
                .collect();
            let z2: f64 = coeffs.iter().map(|c| c * c).sum();

            // Second route: materialize the projection and take its norm.
            let mut proj = vec![0.0f64; p2];
            for (c, f) in coeffs.iter().zip(&basis) {
                for (pv, fv) in proj.iter_mut().zip(f) {
                    *pv += c * fv;
                }
            }
            let proj_norm_sq: f64 = proj.iter().map(|v| v * v).sum();
            let identity_gap = (proj_norm_sq - z2).abs();

            // W = (4/n)·sup_{R∈B²}(1/p²)tr[R·avgYY*·D_Σ·R]
            //   = (4/np²)·λ_max(M), M_ik = Σ_j F_i[j]F_k[j]·q_j·D_Σ[j].
            let mut mm = DMatrix::<f64>::zeros(d, d);
            for i in 0..d {
                for k in i..d {
                    let v: f64 = basis[i]
                        .iter()
                        .zip(&basis[k])
                        .zip(q.iter().zip(dsig_data))
                        .map(|((a, b), (qj, dj))| a * b * qj * dj)
                        .sum();
                    mm[(i, k)] = v;
                    mm[(k, i)] = v;
                }
            }
            let lam_max = nalgebra::SymmetricEigen::new(mm)
                .eigenvalues
                .iter()
                .cloned()
                .fold(f64::MIN, f64::max);
            RepStat {
                z: z2.sqrt(),
                z2,
                w: 4.0 / (n as f64 * p2 as f64) * lam_max,
                identity_gap,
            }
        })
        .collect();

    let mean = |f: &dyn Fn(&RepStat) -> f64| reps.iter().map(|r| f(r)).sum::<f64>() / n_mc as f64;
    let e_z = mean(&|r: &RepStat| r.z);
    let e_z2 = mean(&|r: &RepStat| r.z2);
    let e_w = mean(&|r: &RepStat| r.w);
    let var_z2 = mean(&|r: &RepStat| (r.z2 - e_z2).powi(2));
    let var_w = mean(&|r: &RepStat| (r.w - e_w).powi(2));
    let se_z2 = (var_z2 / n_mc as f64).sqrt();
    let se_w = (var_w / n_mc as f64).sqrt();
    let max_identity_gap = reps.iter().map(|r| r.identity_gap).fold(0.0, f64::max);

    Ok(ModelPairReport {
        d,
        exact_e_z2,
        bound_z2,
        e_z,
        e_z2,
        se_z2,
        exact_b,
        bound_b,
        e_w,
        se_w,
        bound_w,
        max_identity_gap,
        jensen_ok: e_z <= e_z2.sqrt() + 1e-15,
        z2_exact_ok: (e_z2 - exact_e_z2).abs() <= 2.0 * se_z2,
        z2_bound_ok: e_z2 <= bound_z2 + 2.0 * se_z2,
        b_bound_ok: exact_b <= bound_b + 1e-15,
        w_bound_ok: e_w <= bound_w + 2.0 * se_w,
        n,
        n_mc,
        seed,
    })
}
