//! Closed convex sets with exact Euclidean projection and tangent-cone
//! projection.
//!
//! Three shapes cover everything the simulator needs: axis-aligned boxes
//! (parameter sets), scaled simplices (the leader's traffic split), and
//! Cartesian products of those.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default absolute membership tolerance.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// A closed convex subset of ℝⁿ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ConvexSet {
    /// `{x : lower ≤ x ≤ upper}` componentwise.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// `{x ∈ ℝ^dim : x ≥ 0, Σ x = total}`.
    ScaledSimplex { total: f64, dim: usize },
    /// Cartesian product; coordinates are concatenated in factor order.
    Product(Vec<ConvexSet>),
}

impl ConvexSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        check_dim(lower.len(), upper.len())?;
        if let Some(i) = lower.iter().zip(&upper).position(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidInput(format!("box bounds at coordinate {i} are not ordered finite numbers")));
        }
        Ok(ConvexSet::Box { lower, upper })
    }

    /// The box `[lo, hi]^dim`.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::boxed(vec![lo; dim], vec![hi; dim])
    }

    pub fn simplex(total: f64, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("simplex dimension must be positive".into()));
        }
        if !(total >= 0.0) || !total.is_finite() {
            return Err(Error::InvalidInput(format!("simplex total {total} must be finite and ≥ 0")));
        }
        Ok(ConvexSet::ScaledSimplex { total, dim })
    }

    pub fn product(factors: Vec<ConvexSet>) -> Self {
        ConvexSet::Product(factors)
    }

    pub fn dim(&self) -> usize {
        match self {
            ConvexSet::Box { lower, .. } => lower.len(),
            ConvexSet::ScaledSimplex { dim, .. } => *dim,
            ConvexSet::Product(fs) => fs.iter().map(ConvexSet::dim).sum(),
        }
    }

    /// Euclidean projection `argmin_{w ∈ set} ‖w − v‖`.
    pub fn project_point(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim(self.dim(), v.len())?;
        let mut out = v.clone();
        self.project_in_place(out.as_mut_slice());
        Ok(out)
    }

    /// In-place variant of [`project_point`](Self::project_point); the slice
    /// length must equal `self.dim()`.
    pub fn project_in_place(&self, v: &mut [f64]) {
        debug_assert_eq!(v.len(), self.dim());
        match self {
            ConvexSet::Box { lower, upper } => {
                for ((x, l), u) in v.iter_mut().zip(lower).zip(upper) {
                    *x = x.clamp(*l, *u);
                }
            }
            ConvexSet::ScaledSimplex { total, .. } => project_simplex(v, *total),
            ConvexSet::Product(fs) => {
                let mut offset = 0;
                for f in fs {
                    let d = f.dim();
                    f.project_in_place(&mut v[offset..offset + d]);
                    offset += d;
                }
            }
        }
    }

    /// Projection of `v` onto the tangent cone of the set at `x`.
    ///
    /// `x` must lie in the set up to [`MEMBERSHIP_TOL`].
    pub fn project_tangent_cone(&self, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
        self.project_tangent_cone_tol(x, v, MEMBERSHIP_TOL)
    }

    /// As [`project_tangent_cone`](Self::project_tangent_cone) with an explicit
    /// tolerance, used both for the membership precondition and for deciding
    /// which constraints are active at `x`.
    pub fn project_tangent_cone_tol(&self, x: &DVector<f64>, v: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
        check_dim(self.dim(), x.len())?;
        check_dim(self.dim(), v.len())?;
        let distance = self.distance(x)?;
        if distance > tol {
            return Err(Error::OutsideSet { distance, tolerance: tol });
        }
        let mut out = v.clone();
        self.tangent_in_place(x.as_slice(), out.as_mut_slice(), tol);
        Ok(out)
    }

    fn tangent_in_place(&self, x: &[f64], v: &mut [f64], tol: f64) {
        match self {
            ConvexSet::Box { lower, upper } => {
                for i in 0..v.len() {
                    let at_lower = x[i] <= lower[i] + tol;
                    let at_upper = x[i] >= upper[i] - tol;
                    if at_lower && at_upper {
                        v[i] = 0.0;
                    } else if at_lower {
                        v[i] = v[i].max(0.0);
                    } else if at_upper {
                        v[i] = v[i].min(0.0);
                    }
                }
            }
            ConvexSet::ScaledSimplex { .. } => {
                let active: Vec<bool> = x.iter().map(|&xi| xi <= tol).collect();
                project_simplex_tangent(v, &active);
            }
            ConvexSet::Product(fs) => {
                let mut offset = 0;
                for f in fs {
                    let d = f.dim();
                    f.tangent_in_place(&x[offset..offset + d], &mut v[offset..offset + d], tol);
                    offset += d;
                }
            }
        }
    }

    /// Euclidean distance from `x` to the set.
    pub fn distance(&self, x: &DVector<f64>) -> Result<f64> {
        let p = self.project_point(x)?;
        Ok((x - p).norm())
    }

    /// `true` iff `distance(x, set) ≤ tol`. Dimension mismatches are never
    /// contained.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        match self.distance(x) {
            Ok(d) => d <= tol,
            Err(_) => false,
        }
    }

    /// Diameter of the set.
    pub fn diameter(&self) -> f64 {
        match self {
            ConvexSet::Box { lower, upper } => {
                lower.iter().zip(upper).map(|(l, u)| (u - l) * (u - l)).sum::<f64>().sqrt()
            }
            // Distance between two vertices.
            ConvexSet::ScaledSimplex { total, dim } => {
                if *dim < 2 {
                    0.0
                } else {
                    total * std::f64::consts::SQRT_2
                }
            }
            ConvexSet::Product(fs) => fs.iter().map(|f| f.diameter().powi(2)).sum::<f64>().sqrt(),
        }
    }

    /// Draws a point uniformly at random from the set (Dirichlet(1) on the
    /// simplex).
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.dim());
        self.sample_into(rng, &mut out);
        DVector::from_vec(out)
    }

    fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut Vec<f64>) {
        match self {
            ConvexSet::Box { lower, upper } => {
                for (l, u) in lower.iter().zip(upper) {
                    out.push(if l < u { rng.random_range(*l..=*u) } else { *l });
                }
            }
            ConvexSet::ScaledSimplex { total, dim } => {
                let draws: Vec<f64> = (0..*dim).map(|_| Exp1.sample(rng)).collect();
                let sum: f64 = draws.iter().sum();
                out.extend(draws.iter().map(|d| total * d / sum));
            }
            ConvexSet::Product(fs) => {
                for f in fs {
                    f.sample_into(rng, out);
                }
            }
        }
    }
}

/// Sorted-threshold projection onto `{x ≥ 0, Σ x = total}`.
fn project_simplex(v: &mut [f64], total: f64) {
    let n = v.len();
    if n == 0 {
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = (sorted[0] - total) / 1.0;
    for (k, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let candidate = (cumsum - total) / (k as f64 + 1.0);
        if s - candidate > 0.0 {
            tau = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// Projects `v` onto `{w : Σ w = 0, w_i ≥ 0 for active i}`.
///
/// The KKT conditions give `w_i = v_i − μ` on free coordinates and
/// `w_i = max(v_i − μ, 0)` on active ones, with `μ` the unique root of the
/// piecewise-linear, decreasing map `μ ↦ Σ w_i(μ)`.
fn project_simplex_tangent(v: &mut [f64], active: &[bool]) {
    let free_sum: f64 = v.iter().zip(active).filter(|(_, &a)| !a).map(|(x, _)| *x).sum();
    let n_free = active.iter().filter(|&&a| !a).count();
    let mut act: Vec<f64> = v.iter().zip(active).filter(|(_, &a)| a).map(|(x, _)| *x).collect();
    act.sort_by(|a, b| b.total_cmp(a));

    let mut mu = None;
    let mut partial = 0.0;
    for k in 0..=act.len() {
        if k > 0 {
            partial += act[k - 1];
        }
        let count = n_free + k;
        if count == 0 {
            continue;
        }
        let m = (free_sum + partial) / count as f64;
        let upper_ok = k == 0 || act[k - 1] > m;
        let lower_ok = k == act.len() || act[k] <= m;
        if upper_ok && lower_ok {
            mu = Some(m);
            break;
        }
    }

    match mu {
        Some(m) => {
            for (x, &a) in v.iter_mut().zip(active) {
                *x = if a { (*x - m).max(0.0) } else { *x - m };
            }
        }
        // Every coordinate is active and no positive part survives: the cone
        // is {0} in the direction of v.
        None => v.iter_mut().for_each(|x| *x = 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    fn unit_box() -> ConvexSet {
        ConvexSet::cube(0.0, 1.0, 2).unwrap()
    }

    #[test]
    fn box_projection_examples() {
        let b = unit_box();
        assert_eq!(b.project_point(&dvector![0.3, 0.7]).unwrap(), dvector![0.3, 0.7]);
        assert_eq!(b.project_point(&dvector![1.5, -0.2]).unwrap(), dvector![1.0, 0.0]);
    }

    #[test]
    fn simplex_projection_example() {
        let s = ConvexSet::simplex(1.0, 2).unwrap();
        let p = s.project_point(&dvector![0.9, 0.5]).unwrap();
        assert!((p - dvector![0.7, 0.3]).norm() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let b = unit_box();
        assert_eq!(b.project_point(&dvector![1.0]), Err(Error::DimensionMismatch { expected: 2, got: 1 }));
    }

    #[test]
    fn tangent_examples() {
        let b = unit_box();
        let q = b.project_tangent_cone(&dvector![0.5, 0.5], &dvector![-3.0, 2.0]).unwrap();
        assert_eq!(q, dvector![-3.0, 2.0]);

        let s = ConvexSet::simplex(1.0, 2).unwrap();
        let q = s.project_tangent_cone(&dvector![0.0, 1.0], &dvector![-1.0, 1.0]).unwrap();
        assert!(q.norm() < 1e-15);
        let q = s.project_tangent_cone(&dvector![0.4, 0.6], &dvector![1.0, 0.0]).unwrap();
        assert!((q - dvector![0.5, -0.5]).norm() < 1e-15);
    }

    #[test]
    fn tangent_rejects_outside_point() {
        let s = ConvexSet::simplex(1.0, 2).unwrap();
        let err = s.project_tangent_cone(&dvector![0.6, 0.6], &dvector![1.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::OutsideSet { .. }));
    }

    #[test]
    fn box_vertex_with_outward_direction() {
        let b = unit_box();
        let q = b.project_tangent_cone(&dvector![1.0, 1.0], &dvector![2.0, 0.5]).unwrap();
        assert_eq!(q, dvector![0.0, 0.0]);
    }

    #[test]
    fn contains_examples() {
        assert!(unit_box().contains(&dvector![0.5, 0.5], 0.0));
        let s = ConvexSet::simplex(1.0, 2).unwrap();
        assert!(!s.contains(&dvector![0.6, 0.6], 1e-9));
        let s3 = ConvexSet::simplex(1.5, 3).unwrap();
        assert!(s3.contains(&dvector![0.5, 0.5, 0.5], 0.0));
    }

    #[test]
    fn degenerate_simplex_and_box() {
        let s = ConvexSet::simplex(0.0, 3).unwrap();
        let p = s.project_point(&dvector![0.2, -1.0, 3.0]).unwrap();
        assert!(p.norm() < 1e-15);
        let b = ConvexSet::boxed(vec![0.5], vec![0.5]).unwrap();
        let q = b.project_tangent_cone(&dvector![0.5], &dvector![4.0]).unwrap();
        assert_eq!(q, dvector![0.0]);
    }

    #[test]
    fn product_projects_factorwise() {
        let p = ConvexSet::product(vec![unit_box(), ConvexSet::simplex(1.0, 2).unwrap()]);
        assert_eq!(p.dim(), 4);
        let out = p.project_point(&dvector![2.0, -1.0, 0.9, 0.5]).unwrap();
        assert!((out - dvector![1.0, 0.0, 0.7, 0.3]).norm() < 1e-15);
    }

    #[test]
    fn invalid_constructors() {
        assert!(ConvexSet::boxed(vec![1.0], vec![0.0]).is_err());
        assert!(ConvexSet::simplex(-1.0, 2).is_err());
        assert!(ConvexSet::simplex(1.0, 0).is_err());
    }
}
