//! Toroidal lattice geometry, symmetry orbits, and nested neighborhood models.
//!
//! The lattice is the p×p torus Λ = (Z/pZ)² with the wrapped Euclidean metric
//! d(a,b)² = min(|Δi|, p−|Δi|)² + min(|Δj|, p−|Δj|)².  Neighborhood models are
//! discs around the origin (origin excluded); their dimensions come in two
//! flavours:
//!
//! * `d_m` — number of orbits of the model under the central symmetry
//!   s(i,j) = (−i,−j),
//! * `d_m_iso` — number of orbits under the order-8 lattice symmetry group G
//!   generated by the quarter turn (i,j) ↦ (j,−i) and the axis reflection
//!   (i,j) ↦ (−i,j).
//!
//! The module also exposes the sum set N(m) = {u+v : u,v ∈ m ∪ {0}} whose
//! s-orbit count is the upper surrogate for the quadratic dimension d_{m²},
//! together with report generators for the growth ratio
//! d_{m_{i+1}}/d_{m_i} ≤ 2 and the analytic d_{m²}/d_m control.

use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// A node of the torus, normalized to 0 ≤ i,j < p.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct LatticePoint {
    pub i: usize,
    pub j: usize,
}

impl LatticePoint {
    pub const ORIGIN: LatticePoint = LatticePoint { i: 0, j: 0 };
}

/// The p×p torus.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct TorusGeometry {
    p: usize,
}

impl TorusGeometry {
    pub fn new(p: usize) -> Result<Self> {
        if p < 2 {
            return Err(Error::InvalidArgument(format!(
                "torus side must be >= 2, got {p}"
            )));
        }
        Ok(Self { p })
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn num_sites(&self) -> usize {
        self.p * self.p
    }

    /// Reduce signed coordinates mod p.
    pub fn normalize(&self, i: i64, j: i64) -> LatticePoint {
        let p = self.p as i64;
        LatticePoint {
            i: i.rem_euclid(p) as usize,
            j: j.rem_euclid(p) as usize,
        }
    }

    /// Central symmetry s(i,j) = (−i,−j).
    pub fn neg(&self, a: LatticePoint) -> LatticePoint {
        LatticePoint {
            i: (self.p - a.i) % self.p,
            j: (self.p - a.j) % self.p,
        }
    }

    pub fn add(&self, a: LatticePoint, b: LatticePoint) -> LatticePoint {
        LatticePoint {
            i: (a.i + b.i) % self.p,
            j: (a.j + b.j) % self.p,
        }
    }

    pub fn sub(&self, a: LatticePoint, b: LatticePoint) -> LatticePoint {
        self.add(a, self.neg(b))
    }

    /// Is the point its own image under s, i.e. (2i, 2j) ≡ (0,0) mod p?
    pub fn is_self_symmetric(&self, a: LatticePoint) -> bool {
        self.neg(a) == a
    }

    /// All p² nodes in row-major order.
    pub fn points(&self) -> impl Iterator<Item = LatticePoint> + '_ {
        let p = self.p;
        (0..p).flat_map(move |i| (0..p).map(move |j| LatticePoint { i, j }))
    }
}

/// Squared toroidal distance; exact integer arithmetic, so radius ties are
/// resolved without floating point.
pub fn toroidal_distance_sq(a: LatticePoint, b: LatticePoint, geom: &TorusGeometry) -> u64 {
    let p = geom.p() as u64;
    let wrap = |x: usize, y: usize| -> u64 {
        let d = (x as i64 - y as i64).unsigned_abs();
        d.min(p - d)
    };
    let di = wrap(a.i, b.i);
    let dj = wrap(a.j, b.j);
    di * di + dj * dj
}

/// Euclidean distance with coordinate-wise wraparound.
pub fn toroidal_distance(a: LatticePoint, b: LatticePoint, geom: &TorusGeometry) -> f64 {
    (toroidal_distance_sq(a, b, geom) as f64).sqrt()
}

/// Symmetry group acting on the torus.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SymmetryGroup {
    /// {id, s} with s(i,j) = (−i,−j).
    Central,
    /// The dihedral group of order 8 generated by (i,j) ↦ (j,−i) and
    /// (i,j) ↦ (−i,j), acting mod p.
    Dihedral,
}

/// Full group orbit of a point, sorted and deduplicated.
pub fn group_images(
    geom: &TorusGeometry,
    a: LatticePoint,
    group: SymmetryGroup,
) -> Vec<LatticePoint> {
    let (i, j) = (a.i as i64, a.j as i64);
    let signed: Vec<(i64, i64)> = match group {
        SymmetryGroup::Central => vec![(i, j), (-i, -j)],
        SymmetryGroup::Dihedral => vec![
            (i, j),
            (j, -i),
            (-i, -j),
            (-j, i),
            (-i, j),
            (j, i),
            (i, -j),
            (-j, -i),
        ],
    };
    let mut out: Vec<LatticePoint> = signed
        .into_iter()
        .map(|(x, y)| geom.normalize(x, y))
        .collect();
    out.sort_unstable();
    out.dedup();
    out
}

/// One orbit of a point set under a symmetry group.
#[derive(Clone, Debug)]
pub struct OrbitClass {
    /// Smallest member in lexicographic order.
    pub representative: LatticePoint,
    /// All members, sorted.
    pub members: Vec<LatticePoint>,
}

impl OrbitClass {
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Partition `points` into orbits under the group action; classes are sorted
/// by (squared radius of the representative, representative).
pub fn orbit_decomposition(
    geom: &TorusGeometry,
    points: &[LatticePoint],
    group: SymmetryGroup,
) -> Vec<OrbitClass> {
    let set: BTreeSet<LatticePoint> = points.iter().copied().collect();
    let mut seen: BTreeSet<LatticePoint> = BTreeSet::new();
    let mut classes = Vec::new();
    for &pt in &set {
        if seen.contains(&pt) {
            continue;
        }
        let members: Vec<LatticePoint> = group_images(geom, pt, group)
            .into_iter()
            .filter(|q| set.contains(q))
            .collect();
        for &q in &members {
            seen.insert(q);
        }
        classes.push(OrbitClass {
            representative: members[0],
            members,
        });
    }
    classes.sort_by_key(|c| {
        (
            toroidal_distance_sq(c.representative, LatticePoint::ORIGIN, geom),
            c.representative,
        )
    });
    classes
}

/// A disc-shaped neighborhood of the origin (origin excluded), with its
/// orbit decompositions precomputed.
#[derive(Clone, Debug)]
pub struct NeighborhoodModel {
    geometry: TorusGeometry,
    /// Position in the enclosing collection (0-based); 0 for custom models.
    pub index: usize,
    /// Squared radius r_m² (an attained squared distance).
    pub radius_sq: u64,
    points: Vec<LatticePoint>,
    orbits_s: Vec<OrbitClass>,
    orbits_g: Vec<OrbitClass>,
}

impl NeighborhoodModel {
    fn from_points(
        geom: TorusGeometry,
        index: usize,
        radius_sq: u64,
        mut points: Vec<LatticePoint>,
    ) -> Result<Self> {
        points.sort_by_key(|&q| (toroidal_distance_sq(q, LatticePoint::ORIGIN, &geom), q));
        points.dedup();
        if points.contains(&LatticePoint::ORIGIN) {
            return Err(Error::InvalidArgument(
                "neighborhood model must not contain the origin".into(),
            ));
        }
        for &q in &points {
            if !points.contains(&geom.neg(q)) {
                return Err(Error::InvalidArgument(format!(
                    "model is not closed under the central symmetry at ({}, {})",
                    q.i, q.j
                )));
            }
        }
        let orbits_s = orbit_decomposition(&geom, &points, SymmetryGroup::Central);
        let orbits_g = orbit_decomposition(&geom, &points, SymmetryGroup::Dihedral);
        Ok(Self {
            geometry: geom,
            index,
            radius_sq,
            points,
            orbits_s,
            orbits_g,
        })
    }

    /// Build a model from an explicit s-closed point set.  The radius is the
    /// largest attained distance.
    pub fn custom(geom: TorusGeometry, points: Vec<LatticePoint>) -> Result<Self> {
        let radius_sq = points
            .iter()
            .map(|&q| toroidal_distance_sq(q, LatticePoint::ORIGIN, &geom))
            .max()
            .unwrap_or(0);
        Self::from_points(geom, 0, radius_sq, points)
    }

    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    pub fn points(&self) -> &[LatticePoint] {
        &self.points
    }

    pub fn contains(&self, q: LatticePoint) -> bool {
        let key = (
            toroidal_distance_sq(q, LatticePoint::ORIGIN, &self.geometry),
            q,
        );
        self.points
            .binary_search_by_key(&key, |&m| {
                (toroidal_distance_sq(m, LatticePoint::ORIGIN, &self.geometry), m)
            })
            .is_ok()
    }

    pub fn radius(&self) -> f64 {
        (self.radius_sq as f64).sqrt()
    }

    pub fn orbits(&self, group: SymmetryGroup) -> &[OrbitClass] {
        match group {
            SymmetryGroup::Central => &self.orbits_s,
            SymmetryGroup::Dihedral => &self.orbits_g,
        }
    }

    /// Number of s-orbits.
    pub fn d_m(&self) -> usize {
        self.orbits_s.len()
    }

    /// Number of G-orbits.
    pub fn d_m_iso(&self) -> usize {
        self.orbits_g.len()
    }
}

/// The nested collection m₁ ⊂ m₂ ⊂ … of all distinct discs around the origin.
#[derive(Clone, Debug)]
pub struct ModelCollection {
    geometry: TorusGeometry,
    models: Vec<NeighborhoodModel>,
}

/// Sweep the radius through the sorted attained squared distances; each value
/// yields one model, and the last model covers Λ∖{(0,0)}.
pub fn build_model_collection(geom: TorusGeometry) -> Result<ModelCollection> {
    if geom.p() < 3 {
        return Err(Error::InvalidArgument(format!(
            "model collections need p >= 3, got {}",
            geom.p()
        )));
    }
    let mut by_dist: Vec<(u64, LatticePoint)> = geom
        .points()
        .filter(|&q| q != LatticePoint::ORIGIN)
        .map(|q| (toroidal_distance_sq(q, LatticePoint::ORIGIN, &geom), q))
        .collect();
    by_dist.sort_unstable();

    let mut models = Vec::new();
    let mut acc: Vec<LatticePoint> = Vec::new();
    let mut k = 0usize;
    while k < by_dist.len() {
        let r_sq = by_dist[k].0;
        while k < by_dist.len() && by_dist[k].0 == r_sq {
            acc.push(by_dist[k].1);
            k += 1;
        }
        let index = models.len();
        models.push(NeighborhoodModel::from_points(geom, index, r_sq, acc.clone())?);
    }
    Ok(ModelCollection {
        geometry: geom,
        models,
    })
}

impl ModelCollection {
    pub fn geometry(&self) -> &TorusGeometry {
        &self.geometry
    }

    pub fn models(&self) -> &[NeighborhoodModel] {
        &self.models
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn model(&self, index: usize) -> Result<&NeighborhoodModel> {
        self.models.get(index).ok_or_else(|| {
            Error::InvalidArgument(format!(
                "model index {index} out of range (collection has {})",
                self.models.len()
            ))
        })
    }
}

/// N(m) = all pairwise sums over m ∪ {(0,0)}, normalized mod p.
pub fn sum_set(m: &NeighborhoodModel) -> Vec<LatticePoint> {
    let geom = m.geometry;
    let mut with_origin: Vec<LatticePoint> = m.points.clone();
    with_origin.push(LatticePoint::ORIGIN);
    let mut sums: BTreeSet<LatticePoint> = BTreeSet::new();
    for &u in &with_origin {
        for &v in &with_origin {
            sums.insert(geom.add(u, v));
        }
    }
    sums.into_iter().collect()
}

/// Number of s-orbits of N(m): the upper surrogate for d_{m²}.
pub fn dim_dm2_upper(m: &NeighborhoodModel) -> usize {
    let geom = m.geometry;
    sum_set(m).iter().filter(|&&q| q <= geom.neg(q)).count()
}

/// One step of the growth table for a nested collection.
#[derive(Clone, Copy, Debug)]
pub struct GrowthStep {
    /// Index of the smaller model (0-based).
    pub index: usize,
    pub d_from: usize,
    pub d_to: usize,
    pub ratio: f64,
    pub exceeds_two: bool,
}

#[derive(Clone, Debug)]
pub struct GrowthReport {
    pub steps: Vec<GrowthStep>,
    pub max_ratio: f64,
    pub violations: usize,
}

/// Per-step dimension growth d_{m_{i+1}}/d_{m_i}; flags any step above 2.
pub fn verify_growth(coll: &ModelCollection) -> GrowthReport {
    let mut steps = Vec::new();
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for w in coll.models.windows(2) {
        let (d0, d1) = (w[0].d_m(), w[1].d_m());
        let ratio = d1 as f64 / d0 as f64;
        let exceeds_two = ratio > 2.0;
        if exceeds_two {
            violations += 1;
        }
        max_ratio = max_ratio.max(ratio);
        steps.push(GrowthStep {
            index: w[0].index,
            d_from: d0,
            d_to: d1,
            ratio,
            exceeds_two,
        });
    }
    GrowthReport {
        steps,
        max_ratio,
        violations,
    }
}

/// Analytic control of d_{m²}/d_m in terms of (r_m, d_m):
/// 4(1+√2/(2r))²·[1 + (1/d)(1 + (4/π)(1 + √(1 + π(1+d)/2)))].
pub fn analytic_dm2_ratio_bound(r_m: f64, d_m: usize) -> f64 {
    use std::f64::consts::{PI, SQRT_2};
    let d = d_m as f64;
    let shell = (1.0 + SQRT_2 / (2.0 * r_m)).powi(2);
    let corr = 1.0 + (1.0 / d) * (1.0 + (4.0 / PI) * (1.0 + (1.0 + PI * (1.0 + d) / 2.0).sqrt()));
    4.0 * shell * corr
}

/// One row of the d_{m²}-surrogate report.
#[derive(Clone, Copy, Debug)]
pub struct Dm2Row {
    pub index: usize,
    pub radius_sq: u64,
    pub d_m: usize,
    pub dm2_upper: usize,
    pub ratio: f64,
    pub analytic_bound: f64,
    /// The analytic chain assumes the disc does not wrap: 2r_m + 1 ≤ p.
    pub bound_applicable: bool,
    pub ratio_ok: bool,
    /// Half-disc packing lower bound d_m + 2 + 2⌊r_m⌋ ≥ πr_m²/2 (same
    /// applicability condition).
    pub half_disc_ok: bool,
}

#[derive(Clone, Debug)]
pub struct Dm2Report {
    pub rows: Vec<Dm2Row>,
    /// Applicable rows whose ratio exceeds the analytic bound.
    pub ratio_violations: usize,
    /// Applicable rows where the half-disc lower bound fails.
    pub half_disc_violations: usize,
}

/// Per-model d_m, the N(m) orbit count, their ratio, and the analytic bound.
///
/// Sum sets are grown incrementally along the nested collection, so the whole
/// report costs O(p⁴) rather than O(models · p⁴).
pub fn verify_dm2_ratio(coll: &ModelCollection) -> Dm2Report {
    use std::f64::consts::PI;
    let geom = coll.geometry;
    let p = geom.p();
    let mut support = vec![false; p * p];
    support[0] = true; // N(m) always contains the origin
    let mut rows = Vec::new();
    let mut ratio_violations = 0;
    let mut half_disc_violations = 0;
    let mut prev_len = 0usize;

    for m in &coll.models {
        // New shell relative to the previous model; sums with the origin and
        // the older points were already accounted for, except those hitting
        // the new shell itself.
        let delta: Vec<LatticePoint> = m.points[prev_len..].to_vec();
        let mut with_origin = m.points.clone();
        with_origin.push(LatticePoint::ORIGIN);
        for &u in &with_origin {
            for &d in &delta {
                let s = geom.add(u, d);
                support[s.i * p + s.j] = true;
            }
        }
        prev_len = m.points.len();

        let dm2_upper = geom
            .points()
            .filter(|&q| support[q.i * p + q.j] && q <= geom.neg(q))
            .count();
        let d_m = m.d_m();
        let r_m = m.radius();
        let ratio = dm2_upper as f64 / d_m as f64;
        let analytic_bound = analytic_dm2_ratio_bound(r_m, d_m);
        let bound_applicable = 2.0 * r_m + 1.0 <= p as f64;
        let ratio_ok = !bound_applicable || ratio <= analytic_bound;
        let half_disc_ok =
            !bound_applicable || (d_m as f64 + 2.0 + 2.0 * r_m.floor()) >= PI * r_m * r_m / 2.0;
        if !ratio_ok {
            ratio_violations += 1;
        }
        if !half_disc_ok {
            half_disc_violations += 1;
        }
        rows.push(Dm2Row {
            index: m.index,
            radius_sq: m.radius_sq,
            d_m,
            dm2_upper,
            ratio,
            analytic_bound,
            bound_applicable,
            ratio_ok,
            half_disc_ok,
        });
    }
    Dm2Report {
        rows,
        ratio_violations,
        half_disc_violations,
    }
}
