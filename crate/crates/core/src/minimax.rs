//! Hypercube constructions, Varshamov–Gilbert codes, Birgé's lemma, and the
//! resulting minimax lower bounds.
//!
//! A hypercube C_m(θ', r) attaches one {0,1} offset of size r to each orbit
//! of the model m: vertex(φ) = θ' + r·Σ_k φ_k Ψ_k.  With w_max the largest
//! orbit size (2 for s-orbits, 8 for G-orbits), every vertex satisfies
//! ‖θ_φ‖₁ ≤ ‖θ'‖₁ + w_max·r·d, and pairwise Kullback–Leibler divergences are
//! controlled by
//!
//!   n·K(θ_φ, θ_ψ) ≤ 9·w_max·d·r²·p²·n / (16·(1 − ‖θ'‖₁ − w_max r d)²).
//!
//! Combining a Varshamov–Gilbert code with Birgé's lemma converts the KL
//! control into a risk lower bound σ²·d·r²(1−κ)/8 at any admissible radius.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::Serialize;

use crate::circulant::{BasisElement, ThetaField};
use crate::error::{Error, Result};
use crate::field::kl_divergence;
use crate::torus::{NeighborhoodModel, SymmetryGroup};

/// A hypercube of parameter grids indexed by {0,1}^d.
#[derive(Clone, Debug)]
pub struct Hypercube {
    pub model: NeighborhoodModel,
    pub isotropic: bool,
    pub center: ThetaField,
    pub radius: f64,
    basis: Vec<BasisElement>,
}

impl Hypercube {
    /// The center must be supported on the model (and the offsets respect
    /// the chosen symmetry class).
    pub fn new(
        model: &NeighborhoodModel,
        center: ThetaField,
        radius: f64,
        isotropic: bool,
    ) -> Result<Self> {
        if radius < 0.0 || !radius.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "radius must be nonnegative, got {radius}"
            )));
        }
        if center.geometry().p() != model.geometry().p() {
            return Err(Error::InvalidArgument("mismatched grid sizes".into()));
        }
        for ((i, j), v) in center.values().iter() {
            if v != 0.0
                && !model.contains(crate::torus::LatticePoint { i, j })
            {
                return Err(Error::InvalidArgument(format!(
                    "center has mass at ({i},{j}) outside the model"
                )));
            }
        }
        let group = if isotropic {
            SymmetryGroup::Dihedral
        } else {
            SymmetryGroup::Central
        };
        let geometry = *model.geometry();
        let basis = model
            .orbits(group)
            .iter()
            .map(|o| {
                let rep = o.representative;
                if isotropic {
                    BasisElement::isotropic(geometry, rep.i as i64, rep.j as i64)
                } else {
                    BasisElement::anisotropic(geometry, rep.i as i64, rep.j as i64)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            model: model.clone(),
            isotropic,
            center,
            radius,
            basis,
        })
    }

    /// d = d_m (anisotropic) or d_m^iso.
    pub fn dimension(&self) -> usize {
        self.basis.len()
    }

    /// Largest orbit weight: 2 under s, 8 under G.
    pub fn w_max(&self) -> f64 {
        self.basis
            .iter()
            .map(|b| b.orbit_size() as f64)
            .fold(0.0, f64::max)
    }

    /// θ_φ = θ' + r·Σ φ_k Ψ_k.
    pub fn vertex(&self, phi: &[bool]) -> Result<ThetaField> {
        if phi.len() != self.basis.len() {
            return Err(Error::InvalidArgument(format!(
                "vertex mask must have length {}",
                self.basis.len()
            )));
        }
        let mut theta = self.center.clone();
        for (bit, elem) in phi.iter().zip(&self.basis) {
            if *bit {
                theta = theta.lin_comb(1.0, &elem.field, self.radius)?;
            }
        }
        Ok(theta)
    }

    fn phi_of_index(&self, idx: usize) -> Vec<bool> {
        (0..self.basis.len()).map(|k| (idx >> k) & 1 == 1).collect()
    }

    /// All 2^d vertices; guarded to d ≤ 20.
    pub fn vertices(&self) -> Result<Vec<ThetaField>> {
        let d = self.basis.len();
        if d > 20 {
            return Err(Error::InvalidArgument(format!(
                "refusing to enumerate 2^{d} vertices"
            )));
        }
        (0..1usize << d).map(|ix| self.vertex(&self.phi_of_index(ix))).collect()
    }

    /// Exact maximum of K(θ_φ, θ_ψ) over vertex pairs: exhaustive for
    /// d ≤ exhaustive_limit, otherwise over `samples` seeded random pairs.
    pub fn max_pair_kl(
        &self,
        exhaustive_limit: usize,
        samples: usize,
        seed: u64,
    ) -> Result<f64> {
        let d = self.basis.len();
        let mut best: f64 = 0.0;
        if d <= exhaustive_limit {
            let vertices = self.vertices()?;
            for (a, va) in vertices.iter().enumerate() {
                for vb in vertices.iter().skip(a + 1) {
                    best = best.max(kl_divergence(va, vb, 1.0)?);
                }
            }
        } else {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            for _ in 0..samples {
                let pa: Vec<bool> = (0..d).map(|_| rng.gen()).collect();
                let pb: Vec<bool> = (0..d).map(|_| rng.gen()).collect();
                let va = self.vertex(&pa)?;
                let vb = self.vertex(&pb)?;
                best = best.max(kl_divergence(&va, &vb, 1.0)?);
            }
        }
        Ok(best)
    }
}

/// n·(KL bound) over the hypercube:
/// 9·w_max·d·r²·p²·n / (16·(1 − ‖θ'‖₁ − w_max·r·d)²); w_max = 2 gives the
/// anisotropic 9dr²p²n/8(…)², w_max = 8 the isotropic 9dr²p²n/2(…)².
pub fn kl_bound_hypercube(cube: &Hypercube, n: usize) -> Result<f64> {
    let d = cube.dimension() as f64;
    let p = cube.model.geometry().p() as f64;
    let w_max = cube.w_max().max(1.0);
    let denom = 1.0 - cube.center.l1_norm() - w_max * cube.radius * d;
    if denom <= 0.0 {
        return Err(Error::Precondition(format!(
            "1 − ||θ'||₁ − {w_max}·r·d = {denom} must be positive"
        )));
    }
    Ok(9.0 * w_max * d * cube.radius * cube.radius * p * p * n as f64 / (16.0 * denom * denom))
}

/// Admissible hypercube radius for Fano's method at confidence κ:
/// r = (1 − ‖θ'‖₁)·√(κ/(c·p²·n)) with c = 18 (anisotropic) or 72
/// (isotropic); at this radius 1 − ‖θ'‖₁ − w_max·r·d ≥ (1 − ‖θ'‖₁)/√2 as
/// long as d stays below 1.5(√2−1)√(np²/κ) (anisotropic case).
pub fn fano_radius(
    theta_center: &ThetaField,
    _m: &NeighborhoodModel,
    n: usize,
    kappa: f64,
    isotropic: bool,
) -> Result<f64> {
    let l1 = theta_center.l1_norm();
    if l1 >= 1.0 {
        return Err(Error::Precondition(format!(
            "fano radius needs ||θ'||₁ < 1, got {l1}"
        )));
    }
    if !(0.0 < kappa && kappa < 1.0) {
        return Err(Error::Precondition(format!(
            "kappa must lie in (0,1), got {kappa}"
        )));
    }
    if n == 0 {
        return Err(Error::Precondition("need n >= 1".into()));
    }
    let p = theta_center.geometry().p() as f64;
    let c = if isotropic { 72.0 } else { 18.0 };
    Ok((1.0 - l1) * (kappa / (c * p * p * n as f64)).sqrt())
}

/// Which branch of r ∧ r_fano is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum RadiusBranch {
    GivenRadius,
    FanoRadius,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct MinimaxBound {
    /// σ²·d·(r ∧ r_fano)²·(1−κ)/8.
    pub value: f64,
    pub branch: RadiusBranch,
    pub r_fano: f64,
    pub r_effective: f64,
    /// Explicit constant of the simplified form
    /// value = l_constant·(r² ∧ (1−‖θ'‖₁)²/(np²))·d·σ².
    pub l_constant: f64,
}

/// Risk lower bound over the hypercube at radius r ∧ r_fano.
pub fn minimax_lower_bound(
    m: &NeighborhoodModel,
    theta_center: &ThetaField,
    r: f64,
    n: usize,
    sigma_sq: f64,
    kappa: f64,
    isotropic: bool,
) -> Result<MinimaxBound> {
    if sigma_sq <= 0.0 {
        return Err(Error::Precondition("sigma^2 must be positive".into()));
    }
    if r < 0.0 {
        return Err(Error::Precondition("radius must be nonnegative".into()));
    }
    let d = if isotropic { m.d_m_iso() } else { m.d_m() };
    let p = m.geometry().p() as f64;
    if (d as f64) > (n as f64).sqrt() * p {
        return Err(Error::Precondition(format!(
            "dimension guard failed: d = {d} exceeds sqrt(n)·p = {}",
            (n as f64).sqrt() * p
        )));
    }
    let r_fano = fano_radius(theta_center, m, n, kappa, isotropic)?;
    let (r_effective, branch) = if r <= r_fano {
        (r, RadiusBranch::GivenRadius)
    } else {
        (r_fano, RadiusBranch::FanoRadius)
    };
    let value = sigma_sq * d as f64 * r_effective * r_effective * (1.0 - kappa) / 8.0;
    let l1 = theta_center.l1_norm();
    let core = r.powi(2).min((1.0 - l1).powi(2) / (n as f64 * p * p)) * d as f64 * sigma_sq;
    let l_constant = if core > 0.0 { value / core } else { 0.0 };
    Ok(MinimaxBound {
        value,
        branch,
        r_fano,
        r_effective,
        l_constant,
    })
}

/// Birgé's lemma payoff: 2^{−power}·δ^{power}·(1−κ).  The caller must
/// separately certify max-KL ≤ κ·log|T| (see [`birge_condition_certified`]).
pub fn birge_bound(delta: f64, t_size: usize, kappa: f64, power: u32) -> Result<f64> {
    if delta < 0.0 {
        return Err(Error::Precondition("delta must be nonnegative".into()));
    }
    if !(0.0 < kappa && kappa < 1.0) {
        return Err(Error::Precondition("kappa must lie in (0,1)".into()));
    }
    if t_size < 2 {
        return Err(Error::Precondition("need |T| >= 2".into()));
    }
    Ok(0.5f64.powi(power as i32) * delta.powi(power as i32) * (1.0 - kappa))
}

/// The side condition of Birgé's lemma: max-KL ≤ κ·log|T|.
pub fn birge_condition_certified(max_kl: f64, t_size: usize, kappa: f64) -> bool {
    t_size >= 2 && max_kl <= kappa * (t_size as f64).ln()
}

/// A subset of {0,1}^d with pairwise Hamming distance > d/4 and
/// log-cardinality ≥ d/8.
#[derive(Clone, Debug, Serialize)]
pub struct VGCode {
    pub d: usize,
    /// Codewords as bit masks.
    pub words: Vec<u64>,
}

impl VGCode {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// Exhaustive verification of both Varshamov–Gilbert properties.
    pub fn verify(&self) -> bool {
        let min_dist_ok = self.words.iter().enumerate().all(|(a, &wa)| {
            self.words[a + 1..]
                .iter()
                .all(|&wb| (wa ^ wb).count_ones() as f64 > self.d as f64 / 4.0)
        });
        min_dist_ok && (self.words.len() as f64).ln() >= self.d as f64 / 8.0 - 1e-12
    }

    /// Minimum pairwise Hamming distance (d+1 for a single word).
    pub fn min_distance(&self) -> u32 {
        let mut best = self.d as u32 + 1;
        for (a, &wa) in self.words.iter().enumerate() {
            for &wb in &self.words[a + 1..] {
                best = best.min((wa ^ wb).count_ones());
            }
        }
        best
    }
}

/// Randomized greedy construction (budget 64·2^{⌈d/8⌉} candidates), followed
/// by a deterministic lexicographic greedy pass for d ≤ 24; verified
/// exhaustively before returning.
pub fn build_vg_code(d: usize, seed: u64) -> Result<VGCode> {
    if d == 0 || d > 63 {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= d <= 63, got {d}"
        )));
    }
    let target = ((d as f64 / 8.0).exp()).ceil() as usize;
    let threshold = d as f64 / 4.0;
    let mask: u64 = if d == 63 { !0 >> 1 } else { (1u64 << d) - 1 };

    let mut words: Vec<u64> = Vec::new();
    let accepts = |words: &[u64], w: u64| -> bool {
        words
            .iter()
            .all(|&v| (v ^ w).count_ones() as f64 > threshold)
    };

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let budget = 64usize.saturating_mul(1usize << (d / 8 + 1).min(24));
    for _ in 0..budget {
        if words.len() >= target {
            break;
        }
        let w = rng.gen::<u64>() & mask;
        if accepts(&words, w) {
            words.push(w);
        }
    }

    if words.len() < target {
        if d <= 24 {
            // Maximal greedy code: the counting argument behind the lemma
            // guarantees it reaches e^{d/8} words.
            for w in 0..=mask {
                if accepts(&words, w) {
                    words.push(w);
                }
            }
        } else {
            return Err(Error::Precondition(format!(
                "VG construction exhausted its budget at d = {d} ({} of {target} words)",
                words.len()
            )));
        }
    }

    let code = VGCode { d, words };
    if !code.verify() {
        return Err(Error::Precondition(format!(
            "VG verification failed at d = {d}"
        )));
    }
    Ok(code)
}
