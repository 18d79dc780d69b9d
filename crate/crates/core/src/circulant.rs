//! The θ ↔ C(θ) block circulant algebra and its exact diagonalization.
//!
//! A parameter grid θ (zero at the origin, θ[i,j] = θ[−i,−j]) generates the
//! symmetric p²×p² block circulant operator
//! C(θ)[(i₁,j₁),(i₂,j₂)] = θ[i₂−i₁, j₂−j₁].  Its eigenvalues are the cosine
//! transform of θ,
//!
//!   μ[i,j] = Σ_{(k,l)} θ[k,l]·cos(2π(ik + jl)/p),
//!
//! computed here by a 2D FFT (the imaginary parts cancel by symmetry).  The
//! eigenvalues of I − C(θ) are 1 − μ[i,j]; with ‖θ‖₁ < 1 they lie in
//! [1 − ‖θ‖₁, 1 + ‖θ‖₁] by diagonal dominance.
//!
//! Dense construction and the inverse map `theta_of_dense` exist as oracles
//! for small p (default limit p ≤ 12).

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{dft2_forward_real, Grid};
use crate::torus::{group_images, LatticePoint, SymmetryGroup, TorusGeometry};

/// Largest p accepted by the dense-oracle paths.
pub const DEFAULT_DENSE_LIMIT: usize = 12;

/// Mismatch tolerance when validating dense block circulant structure.
const BLOCK_TOL: f64 = 1e-12;

/// A p×p real parameter grid with θ[0,0] = 0 and θ[i,j] = θ[−i,−j].
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaField {
    geometry: TorusGeometry,
    values: Grid,
}

impl ThetaField {
    pub fn zeros(geometry: TorusGeometry) -> Self {
        Self {
            geometry,
            values: Grid::zeros(geometry.p()),
        }
    }

    /// Validates the origin and symmetry constraints exactly.
    pub fn new(geometry: TorusGeometry, values: Grid) -> Result<Self> {
        if values.p() != geometry.p() {
            return Err(Error::InvalidArgument(format!(
                "grid side {} does not match torus side {}",
                values.p(),
                geometry.p()
            )));
        }
        if values.get(0, 0) != 0.0 {
            return Err(Error::InvalidArgument(format!(
                "theta[0,0] must be 0, got {}",
                values.get(0, 0)
            )));
        }
        let p = geometry.p();
        for i in 0..p {
            for j in 0..p {
                let m = geometry.neg(LatticePoint { i, j });
                if values.get(i, j) != values.get(m.i, m.j) {
                    return Err(Error::InvalidArgument(format!(
                        "theta[{i},{j}] = {} but theta[-{i},-{j}] = {}",
                        values.get(i, j),
                        values.get(m.i, m.j)
                    )));
                }
            }
        }
        Ok(Self { geometry, values })
    }

    /// Build from sparse entries given one representative per orbit; the
    /// symmetric image is filled in automatically.  Conflicting duplicates
    /// are rejected.
    pub fn from_entries(geometry: TorusGeometry, entries: &[(i64, i64, f64)]) -> Result<Self> {
        let p = geometry.p();
        let mut values = Grid::zeros(p);
        let mut set = vec![false; p * p];
        let mut place = |pt: LatticePoint, v: f64| -> Result<()> {
            let k = pt.i * p + pt.j;
            if set[k] && values.get(pt.i, pt.j) != v {
                return Err(Error::InvalidArgument(format!(
                    "conflicting values for entry ({}, {}): {} vs {}",
                    pt.i,
                    pt.j,
                    values.get(pt.i, pt.j),
                    v
                )));
            }
            set[k] = true;
            values.set(pt.i, pt.j, v);
            Ok(())
        };
        for &(i, j, v) in entries {
            let pt = geometry.normalize(i, j);
            if pt == LatticePoint::ORIGIN {
                if v != 0.0 {
                    return Err(Error::InvalidArgument(
                        "theta[0,0] must be 0".into(),
                    ));
                }
                continue;
            }
            place(pt, v)?;
            place(geometry.neg(pt), v)?;
        }
        Self::new(geometry, values)
    }

    /// Isotropic four-nearest-neighbor field: θ[±1,0] = θ[0,±1] = alpha.
    pub fn four_nearest_neighbors(geometry: TorusGeometry, alpha: f64) -> Self {
        Self::from_entries(geometry, &[(0, 1, alpha), (1, 0, alpha)])
            .expect("nearest-neighbor entries are always admissible")
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &Grid {
        &self.values
    }

    pub fn get(&self, i: i64, j: i64) -> f64 {
        self.values.get_wrapped(i, j)
    }

    /// ℓ1 norm over the whole grid (the origin contributes nothing); an
    /// s-orbit of size 2 therefore counts its coefficient twice.
    pub fn l1_norm(&self) -> f64 {
        self.values.data().iter().map(|v| v.abs()).sum()
    }

    /// a·self + b·other.
    pub fn lin_comb(&self, a: f64, other: &ThetaField, b: f64) -> Result<ThetaField> {
        if self.geometry.p() != other.geometry.p() {
            return Err(Error::InvalidArgument("mismatched grid sizes".into()));
        }
        let p = self.geometry.p();
        let mut values = Grid::zeros(p);
        for i in 0..p {
            for j in 0..p {
                values.set(i, j, a * self.values.get(i, j) + b * other.values.get(i, j));
            }
        }
        ThetaField::new(self.geometry, values)
    }

    pub fn scale(&self, a: f64) -> ThetaField {
        ThetaField {
            geometry: self.geometry,
            values: self.values.map(|v| a * v),
        }
    }
}

/// Orbit-indicator basis fields Ψ (entries 1 on the orbit, 0 elsewhere).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum BasisKind {
    /// Indicator of the s-orbit {(i,j), (−i,−j)}.
    Anisotropic,
    /// Indicator of the G-orbit (up to 8 points).
    Isotropic,
}

#[derive(Clone, Debug)]
pub struct BasisElement {
    pub kind: BasisKind,
    /// Sorted orbit members.
    pub orbit: Vec<LatticePoint>,
    pub field: ThetaField,
    /// ‖C(Ψ)‖²_F = (orbit size) · p².
    pub frobenius_sq: u64,
}

impl BasisElement {
    fn build(geometry: TorusGeometry, i: i64, j: i64, kind: BasisKind) -> Result<Self> {
        let rep = geometry.normalize(i, j);
        if rep == LatticePoint::ORIGIN {
            return Err(Error::InvalidArgument(
                "basis elements are indexed by non-origin points".into(),
            ));
        }
        let group = match kind {
            BasisKind::Anisotropic => SymmetryGroup::Central,
            BasisKind::Isotropic => SymmetryGroup::Dihedral,
        };
        let orbit = group_images(&geometry, rep, group);
        let entries: Vec<(i64, i64, f64)> = orbit
            .iter()
            .map(|q| (q.i as i64, q.j as i64, 1.0))
            .collect();
        let field = ThetaField::from_entries(geometry, &entries)?;
        let frobenius_sq = (orbit.len() * geometry.num_sites()) as u64;
        Ok(Self {
            kind,
            orbit,
            field,
            frobenius_sq,
        })
    }

    /// Ψ_{i,j}: indicator of the s-orbit of (i,j).
    pub fn anisotropic(geometry: TorusGeometry, i: i64, j: i64) -> Result<Self> {
        Self::build(geometry, i, j, BasisKind::Anisotropic)
    }

    /// Ψ^iso_{i,j}: indicator of the G-orbit of (i,j).
    pub fn isotropic(geometry: TorusGeometry, i: i64, j: i64) -> Result<Self> {
        Self::build(geometry, i, j, BasisKind::Isotropic)
    }

    pub fn orbit_size(&self) -> usize {
        self.orbit.len()
    }

    pub fn representative(&self) -> LatticePoint {
        self.orbit[0]
    }

    /// Eigenvalues of C(Ψ) as a flat p²-vector in row-major frequency order:
    /// B[(ki,kj)] = Σ_{v ∈ orbit} cos(2π(ki·v.i + kj·v.j)/p).  Computed by
    /// direct cosine sums (exact up to rounding, no FFT).
    pub fn spectrum_values(&self) -> Vec<f64> {
        let p = self.field.geometry().p();
        let mut out = vec![0.0; p * p];
        for ki in 0..p {
            for kj in 0..p {
                let mut acc = 0.0;
                for v in &self.orbit {
                    let phase = 2.0 * std::f64::consts::PI * ((ki * v.i + kj * v.j) % p) as f64
                        / p as f64;
                    acc += phase.cos();
                }
                out[ki * p + kj] = acc;
            }
        }
        out
    }
}

/// A p×p grid of eigenvalues of a block circulant operator, indexed by
/// frequency; symmetric under s because the operator is real symmetric.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumGrid {
    geometry: TorusGeometry,
    lam: Grid,
}

impl SpectrumGrid {
    pub(crate) fn from_grid(geometry: TorusGeometry, lam: Grid) -> Self {
        Self { geometry, lam }
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &Grid {
        &self.lam
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.lam.get(i, j)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SpectrumGrid {
        SpectrumGrid {
            geometry: self.geometry,
            lam: self.lam.map(f),
        }
    }
}

/// Eigenvalues of C(θ): the cosine transform of θ, via a 2D FFT.
///
/// The imaginary residue of the transform must vanish by symmetry; it is
/// asserted below 1e−12·(1 + ‖θ‖₁).
pub fn spectrum_of_c(theta: &ThetaField) -> SpectrumGrid {
    let (re, max_imag) = dft2_forward_real(theta.values());
    assert!(
        max_imag <= 1e-12 * (1.0 + theta.l1_norm()),
        "imaginary residue {max_imag:.3e} exceeds tolerance; theta symmetry is broken"
    );
    SpectrumGrid::from_grid(*theta.geometry(), re)
}

/// Eigenvalues of I − C(θ).
pub fn precision_spectrum(theta: &ThetaField) -> SpectrumGrid {
    spectrum_of_c(theta).map(|mu| 1.0 - mu)
}

/// Exact min/max over a spectrum grid.
pub fn phi_extremes(spec: &SpectrumGrid) -> (f64, f64) {
    (spec.values().min(), spec.values().max())
}

/// Dense p²×p² C(θ); oracle path, limited to small p.
pub fn dense_c(theta: &ThetaField) -> Result<DMatrix<f64>> {
    dense_c_with_limit(theta, DEFAULT_DENSE_LIMIT)
}

pub fn dense_c_with_limit(theta: &ThetaField, limit: usize) -> Result<DMatrix<f64>> {
    let p = theta.geometry().p();
    if p > limit {
        return Err(Error::DenseLimit { p, limit });
    }
    let n = p * p;
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i1 in 0..p {
        for j1 in 0..p {
            for i2 in 0..p {
                for j2 in 0..p {
                    let v = theta.get(i2 as i64 - i1 as i64, j2 as i64 - j1 as i64);
                    c[(i1 * p + j1, i2 * p + j2)] = v;
                }
            }
        }
    }
    Ok(c)
}

/// Which operator a dense matrix represents when recovering θ.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DenseForm {
    /// B = C(θ); the implied θ[0,0] must be zero.
    Circulant,
    /// B = I − C(θ); the identity is stripped before extraction.
    IdentityMinus,
}

/// Inverse of [`dense_c`]: recover θ from the first row of a symmetric block
/// circulant matrix, validating the full structure (tolerance 1e−12).
pub fn theta_of_dense(b: &DMatrix<f64>, form: DenseForm) -> Result<ThetaField> {
    let n = b.nrows();
    if b.ncols() != n {
        return Err(Error::InvalidArgument("matrix must be square".into()));
    }
    let p = (n as f64).sqrt().round() as usize;
    if p * p != n || p < 2 {
        return Err(Error::InvalidArgument(format!(
            "matrix side {n} is not the square of a torus side"
        )));
    }

    let mut max_asym: f64 = 0.0;
    for r in 0..n {
        for c in (r + 1)..n {
            max_asym = max_asym.max((b[(r, c)] - b[(c, r)]).abs());
        }
    }
    if max_asym > BLOCK_TOL {
        return Err(Error::NotSymmetric { max_gap: max_asym });
    }

    // Candidate θ from the first row.
    let mut values = Grid::zeros(p);
    for i in 0..p {
        for j in 0..p {
            let raw = b[(0, i * p + j)];
            let v = match form {
                DenseForm::Circulant => raw,
                DenseForm::IdentityMinus => {
                    if i == 0 && j == 0 {
                        1.0 - raw
                    } else {
                        -raw
                    }
                }
            };
            values.set(i, j, v);
        }
    }
    let origin = values.get(0, 0);
    if origin.abs() > BLOCK_TOL {
        return Err(Error::InvalidArgument(format!(
            "implied theta[0,0] = {origin:.3e}; expected 0 (pass DenseForm::IdentityMinus for precision matrices)"
        )));
    }
    values.set(0, 0, 0.0);

    // Validate the circulant structure everywhere.
    let sign = match form {
        DenseForm::Circulant => 1.0,
        DenseForm::IdentityMinus => -1.0,
    };
    let mut max_gap: f64 = 0.0;
    for i1 in 0..p {
        for j1 in 0..p {
            for i2 in 0..p {
                for j2 in 0..p {
                    let di = (i2 + p - i1) % p;
                    let dj = (j2 + p - j1) % p;
                    let mut expected = sign * values.get(di, dj);
                    if form == DenseForm::IdentityMinus && di == 0 && dj == 0 {
                        expected = 1.0;
                    }
                    max_gap = max_gap.max((b[(i1 * p + j1, i2 * p + j2)] - expected).abs());
                }
            }
        }
    }
    if max_gap > BLOCK_TOL {
        return Err(Error::NotBlockCirculant { max_gap });
    }

    // Exact symmetrization so the constructor's equality checks pass.
    let geometry = TorusGeometry::new(p)?;
    let mut sym = Grid::zeros(p);
    for i in 0..p {
        for j in 0..p {
            let m = geometry.neg(LatticePoint { i, j });
            sym.set(i, j, 0.5 * (values.get(i, j) + values.get(m.i, m.j)));
        }
    }
    ThetaField::new(geometry, sym)
}

/// Dense C(Ψ_x) where Ψ_x is the s-orbit indicator of `x`; handles the origin
/// (Ψ_{0,0} gives the identity).
fn dense_orbit_indicator(geom: TorusGeometry, x: LatticePoint) -> DMatrix<f64> {
    let p = geom.p();
    let n = p * p;
    let orbit = group_images(&geom, x, SymmetryGroup::Central);
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i1 in 0..p {
        for j1 in 0..p {
            for v in &orbit {
                let i2 = (i1 + v.i) % p;
                let j2 = (j1 + v.j) % p;
                c[(i1 * p + j1, i2 * p + j2)] = 1.0;
            }
        }
    }
    c
}

/// Frobenius residual of the orbit-basis product identity
///
///   (1+s_a)(1+s_b)·C(Ψ_a)C(Ψ_b)
///     = (1+s_{a+b})·C(Ψ_{a+b}) + (1+s_{a−b})·C(Ψ_{a−b}),
///
/// where s_x = 1 iff x ≡ −x on the torus.  The correction factors on the
/// left make the identity exact also when a factor is self-symmetric.
pub fn product_identity_check(a: &BasisElement, b: &BasisElement) -> Result<f64> {
    if a.kind != BasisKind::Anisotropic || b.kind != BasisKind::Anisotropic {
        return Err(Error::InvalidArgument(
            "product identity is stated for anisotropic basis elements".into(),
        ));
    }
    let geom = *a.field.geometry();
    if geom.p() != b.field.geometry().p() {
        return Err(Error::InvalidArgument("mismatched grid sizes".into()));
    }
    let p = geom.p();
    if p > DEFAULT_DENSE_LIMIT {
        return Err(Error::DenseLimit {
            p,
            limit: DEFAULT_DENSE_LIMIT,
        });
    }
    let s = |x: LatticePoint| -> f64 {
        if geom.is_self_symmetric(x) {
            1.0
        } else {
            0.0
        }
    };
    let ra = a.representative();
    let rb = b.representative();
    let sum = geom.add(ra, rb);
    let diff = geom.sub(ra, rb);

    let ca = dense_c(&a.field)?;
    let cb = dense_c(&b.field)?;
    let lhs = (1.0 + s(ra)) * (1.0 + s(rb)) * (&ca * &cb);
    let rhs = dense_orbit_indicator(geom, sum) * (1.0 + s(sum))
        + dense_orbit_indicator(geom, diff) * (1.0 + s(diff));
    Ok((lhs - rhs).norm())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::torus::build_model_collection;

    fn geom(p: usize) -> TorusGeometry {
        TorusGeometry::new(p).unwrap()
    }

    /// Deterministic random symmetric theta with the given ℓ1 norm.
    pub(crate) fn random_theta(g: TorusGeometry, l1: f64, seed: u64) -> ThetaField {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
        let p = g.p();
        let mut values = Grid::zeros(p);
        for i in 0..p {
            for j in 0..p {
                let pt = LatticePoint { i, j };
                if pt == LatticePoint::ORIGIN {
                    continue;
                }
                let m = g.neg(pt);
                if pt <= m {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    values.set(pt.i, pt.j, v);
                    values.set(m.i, m.j, v);
                }
            }
        }
        let theta = ThetaField::new(g, values).unwrap();
        let norm = theta.l1_norm();
        if norm == 0.0 {
            theta
        } else {
            theta.scale(l1 / norm)
        }
    }

    #[test]
    fn zero_theta_has_zero_spectrum() {
        let theta = ThetaField::zeros(geom(7));
        let mu = spectrum_of_c(&theta);
        for (_, v) in mu.values().iter() {
            assert_eq!(v, 0.0);
        }
        let lam = precision_spectrum(&theta);
        for (_, v) in lam.values().iter() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn four_nn_spectrum_closed_form() {
        let p = 8;
        let alpha = 0.2;
        let theta = ThetaField::four_nearest_neighbors(geom(p), alpha);
        let lam = precision_spectrum(&theta);
        for i in 0..p {
            for j in 0..p {
                let expected = 1.0
                    - 2.0 * alpha
                        * ((2.0 * std::f64::consts::PI * i as f64 / p as f64).cos()
                            + (2.0 * std::f64::consts::PI * j as f64 / p as f64).cos());
                assert!((lam.get(i, j) - expected).abs() < 1e-12);
            }
        }
    }

    // Oracle: dense eigendecomposition of C(θ).
    #[test]
    fn spectrum_matches_dense_eigenvalues() {
        let p = 6;
        let theta = random_theta(geom(p), 0.9, 42);
        let dense = dense_c(&theta).unwrap();
        let mut dense_eigs: Vec<f64> = nalgebra::SymmetricEigen::new(dense)
            .eigenvalues
            .iter()
            .copied()
            .collect();
        dense_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut spectral: Vec<f64> = spectrum_of_c(&theta).values().data().to_vec();
        spectral.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in dense_eigs.iter().zip(spectral.iter()) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn spectrum_is_linear() {
        let g = geom(6);
        let t1 = random_theta(g, 0.7, 1);
        let t2 = random_theta(g, 0.5, 2);
        let (a, b) = (0.3, -1.7);
        let combo = t1.lin_comb(a, &t2, b).unwrap();
        let s1 = spectrum_of_c(&t1);
        let s2 = spectrum_of_c(&t2);
        let sc = spectrum_of_c(&combo);
        for i in 0..6 {
            for j in 0..6 {
                assert!((sc.get(i, j) - a * s1.get(i, j) - b * s2.get(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_dominance_brackets_precision_spectrum() {
        for seed in 0..20 {
            let theta = random_theta(geom(7), 0.85, seed);
            let l1 = theta.l1_norm();
            let lam = precision_spectrum(&theta);
            let (lo, hi) = phi_extremes(&lam);
            assert!(lo >= 1.0 - l1 - 1e-12);
            assert!(hi <= 1.0 + l1 + 1e-12);
            assert!(hi <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn dense_zero_theta_is_zero_matrix() {
        let theta = ThetaField::zeros(geom(4));
        let c = dense_c(&theta).unwrap();
        assert_eq!(c.norm(), 0.0);
    }

    // Oracle: direct construction of C(Ψ_{1,0}) at p=3.
    #[test]
    fn dense_psi_row_sums() {
        let g = geom(3);
        let psi = BasisElement::anisotropic(g, 1, 0).unwrap();
        let c = dense_c(&psi.field).unwrap();
        assert_eq!(c.transpose(), c);
        for r in 0..9 {
            let row_sum: f64 = (0..9).map(|cix| c[(r, cix)]).sum();
            assert_eq!(row_sum, 2.0);
            for cix in 0..9 {
                assert!(c[(r, cix)] == 0.0 || c[(r, cix)] == 1.0);
            }
        }
    }

    #[test]
    fn dense_roundtrip() {
        let theta = random_theta(geom(5), 0.8, 7);
        let c = dense_c(&theta).unwrap();
        let back = theta_of_dense(&c, DenseForm::Circulant).unwrap();
        assert_eq!(back.values(), theta.values());
    }

    #[test]
    fn identity_maps_to_error_in_circulant_form() {
        let n = 9;
        let eye = DMatrix::<f64>::identity(n, n);
        assert!(theta_of_dense(&eye, DenseForm::Circulant).is_err());
        // But as I − C(θ) it is θ = 0.
        let theta = theta_of_dense(&eye, DenseForm::IdentityMinus).unwrap();
        assert_eq!(theta.l1_norm(), 0.0);
    }

    #[test]
    fn perturbed_entry_is_rejected() {
        let theta = random_theta(geom(4), 0.6, 9);
        let mut c = dense_c(&theta).unwrap();
        c[(3, 7)] += 1e-6;
        c[(7, 3)] += 1e-6; // keep it symmetric; break circulant structure
        match theta_of_dense(&c, DenseForm::Circulant) {
            Err(Error::NotBlockCirculant { .. }) => {}
            other => panic!("expected NotBlockCirculant, got {other:?}"),
        }
    }

    #[test]
    fn identity_minus_roundtrip() {
        let theta = random_theta(geom(5), 0.7, 11);
        let c = dense_c(&theta).unwrap();
        let b = DMatrix::<f64>::identity(25, 25) - c;
        let back = theta_of_dense(&b, DenseForm::IdentityMinus).unwrap();
        assert_eq!(back.values(), theta.values());
    }

    // Oracle: dense multiplication.
    #[test]
    fn product_identity_generic_pair() {
        let g = geom(5);
        let a = BasisElement::anisotropic(g, 1, 0).unwrap();
        let b = BasisElement::anisotropic(g, 0, 1).unwrap();
        let res = product_identity_check(&a, &b).unwrap();
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn product_identity_self_symmetric_branch() {
        let g = geom(4);
        let a = BasisElement::anisotropic(g, 2, 0).unwrap();
        assert!(g.is_self_symmetric(a.representative()));
        let res = product_identity_check(&a, &a).unwrap();
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn product_identity_equal_pair() {
        let g = geom(7);
        let a = BasisElement::anisotropic(g, 1, 0).unwrap();
        let res = product_identity_check(&a, &a).unwrap();
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn product_identity_random_pairs() {
        for p in [4usize, 5, 6, 7, 8] {
            let g = geom(p);
            let pts: Vec<(i64, i64)> = vec![(1, 0), (0, 1), (1, 1), (2, 1), (2, 0)];
            for &(i1, j1) in &pts {
                for &(i2, j2) in &pts {
                    let a = BasisElement::anisotropic(g, i1, j1).unwrap();
                    let b = BasisElement::anisotropic(g, i2, j2).unwrap();
                    let res = product_identity_check(&a, &b).unwrap();
                    assert!(res < 1e-12, "p={p} ({i1},{j1})·({i2},{j2}): residual {res}");
                }
            }
        }
    }

    #[test]
    fn phi_extremes_constant_grid() {
        let spec = SpectrumGrid::from_grid(geom(4), Grid::from_fn(4, |_, _| 2.5));
        assert_eq!(phi_extremes(&spec), (2.5, 2.5));
    }

    #[test]
    fn phi_extremes_four_nn_covariance() {
        let p = 8;
        let alpha = 0.2;
        let theta = ThetaField::four_nearest_neighbors(geom(p), alpha);
        let cov = precision_spectrum(&theta).map(|lam| 1.0 / lam);
        let (_, hi) = phi_extremes(&cov);
        assert!((hi - 1.0 / (1.0 - 4.0 * alpha)).abs() < 1e-12);
    }

    #[test]
    fn psi_frobenius_and_trace_identity() {
        // tr(H²) = ‖C(Ψ^iso_{1,0})‖²_F = 4p².
        for p in [4usize, 7, 9] {
            let g = geom(p);
            let h = BasisElement::isotropic(g, 1, 0).unwrap();
            assert_eq!(h.orbit_size(), 4);
            assert_eq!(h.frobenius_sq, (4 * p * p) as u64);
            if p <= 8 {
                let dense = dense_c(&h.field).unwrap();
                let tr_h2 = (&dense * &dense).trace();
                assert_eq!(tr_h2, (4 * p * p) as f64);
            }
        }
        // A self-symmetric anisotropic orbit has a single entry.
        let g = geom(4);
        let psi = BasisElement::anisotropic(g, 2, 0).unwrap();
        assert_eq!(psi.orbit_size(), 1);
        let grid_frob: f64 = psi.field.values().data().iter().map(|v| v * v).sum();
        assert_eq!(grid_frob, 1.0);
    }

    #[test]
    fn basis_spectrum_matches_fft() {
        let g = geom(6);
        let coll = build_model_collection(g).unwrap();
        for oc in coll.models()[2].orbits(SymmetryGroup::Central) {
            let psi = BasisElement::anisotropic(
                g,
                oc.representative.i as i64,
                oc.representative.j as i64,
            )
            .unwrap();
            let direct = psi.spectrum_values();
            let via_fft = spectrum_of_c(&psi.field);
            for (k, &v) in direct.iter().enumerate() {
                assert!((v - via_fft.values().data()[k]).abs() < 1e-10);
            }
        }
    }
}
