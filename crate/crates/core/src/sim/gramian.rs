//! Windowed excitation Gramians `∫ KᵀK ds` built from sparse per-step
//! outer products.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::game::ThetaJacobian;

/// Which integrand the Gramian uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PeMode {
    /// `KᵀK` with the full gain matrix.
    #[default]
    Full,
    /// `∇_θ f̂ᵀ ∇_θ f̂`, the sufficient condition.
    Simplified,
}

/// Coordinates the Gramian is restricted to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum GramianSubset {
    /// All of `θ`.
    All,
    /// Coordinates with a nonzero diagonal entry over the window.
    #[default]
    Active,
    Explicit(Vec<usize>),
}

/// Sparse upper triangle (`i ≤ j`) of a symmetric contribution.
pub type Outer = Vec<((usize, usize), f64)>;

/// `KᵀK` (full mode, `line_grad` given) or `SᵀS` for one sample, where
/// `K = [I; gᵀ] S`.
pub fn step_outer(jac: &ThetaJacobian, line_grad: Option<&DVector<f64>>) -> Outer {
    let entries = jac.entries();
    let mut acc: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for &(r1, c1, v1) in entries {
        for &(r2, c2, v2) in entries {
            if c1 > c2 {
                continue;
            }
            let mut m = if r1 == r2 { 1.0 } else { 0.0 };
            if let Some(g) = line_grad {
                m += g[r1] * g[r2];
            }
            let v = v1 * m * v2;
            if v != 0.0 {
                *acc.entry((c1, c2)).or_insert(0.0) += v;
            }
        }
    }
    acc.into_iter().filter(|(_, v)| *v != 0.0).collect()
}

/// A symmetric matrix stored as its upper triangle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseSym {
    pub dim: usize,
    pub entries: BTreeMap<(usize, usize), f64>,
}

impl SparseSym {
    pub fn diagonal(&self, i: usize) -> f64 {
        self.entries.get(&(i, i)).copied().unwrap_or(0.0)
    }

    /// Coordinates selected by `subset`.
    pub fn subset_coords(&self, subset: &GramianSubset) -> Result<Vec<usize>> {
        let coords: Vec<usize> = match subset {
            GramianSubset::All => (0..self.dim).collect(),
            GramianSubset::Active => {
                let set: BTreeSet<usize> =
                    self.entries.iter().filter(|((i, j), v)| i == j && **v > 0.0).map(|((i, _), _)| *i).collect();
                set.into_iter().collect()
            }
            GramianSubset::Explicit(list) => {
                if let Some(bad) = list.iter().find(|&&i| i >= self.dim) {
                    return Err(Error::InvalidInput(format!("subset coordinate {bad} ≥ dimension {}", self.dim)));
                }
                let set: BTreeSet<usize> = list.iter().copied().collect();
                set.into_iter().collect()
            }
        };
        if coords.is_empty() {
            return Err(Error::InvalidInput("Gramian subset is empty".into()));
        }
        Ok(coords)
    }

    /// Dense restriction to `coords`.
    pub fn restrict(&self, coords: &[usize]) -> DMatrix<f64> {
        let pos: HashMap<usize, usize> = coords.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let mut m = DMatrix::zeros(coords.len(), coords.len());
        for (&(i, j), &v) in &self.entries {
            if let (Some(&a), Some(&b)) = (pos.get(&i), pos.get(&j)) {
                m[(a, b)] = v;
                m[(b, a)] = v;
            }
        }
        m
    }

    /// Smallest eigenvalue of the restriction to `coords`, solved per
    /// connected component of the sparsity graph.
    pub fn min_eig(&self, coords: &[usize]) -> f64 {
        let pos: HashMap<usize, usize> = coords.iter().enumerate().map(|(k, &c)| (c, k)).collect();
        let n = coords.len();
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut touched = vec![false; n];
        for &(i, j) in self.entries.keys() {
            if let (Some(&a), Some(&b)) = (pos.get(&i), pos.get(&j)) {
                touched[a] = true;
                touched[b] = true;
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    parent[ra] = rb;
                }
            }
        }
        if touched.iter().any(|t| !t) {
            return 0.0;
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for k in 0..n {
            let root = find(&mut parent, k);
            groups.entry(root).or_default().push(coords[k]);
        }
        groups
            .values()
            .map(|group| {
                let block = self.restrict(group);
                if block.nrows() == 1 {
                    block[(0, 0)]
                } else {
                    SymmetricEigen::new(block).eigenvalues.min()
                }
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Windowed Gramian with its restriction.
#[derive(Debug, Clone, PartialEq)]
pub struct Gramian {
    pub coords: Vec<usize>,
    pub matrix: DMatrix<f64>,
    pub min_eig: f64,
}

/// Trapezoidal `∫ KᵀK ds` over the last `steps + 1` samples spaced by `h`.
#[derive(Debug, Clone)]
pub struct GramianWindow {
    dim: usize,
    steps: usize,
    h: f64,
    samples: VecDeque<Outer>,
    sums: HashMap<(usize, usize), (f64, usize)>,
}

impl GramianWindow {
    pub fn new(dim: usize, steps: usize, h: f64) -> Self {
        Self { dim, steps, h, samples: VecDeque::new(), sums: HashMap::new() }
    }

    pub fn is_full(&self) -> bool {
        self.samples.len() == self.steps + 1
    }

    pub fn clear(&mut self) {
        self.samples.clear();
        self.sums.clear();
    }

    pub fn push(&mut self, outer: Outer) {
        for &(key, v) in &outer {
            let slot = self.sums.entry(key).or_insert((0.0, 0));
            slot.0 += v;
            slot.1 += 1;
        }
        self.samples.push_back(outer);
        if self.samples.len() > self.steps + 1 {
            let old = self.samples.pop_front().expect("window is non-empty");
            for (key, v) in old {
                let slot = self.sums.get_mut(&key).expect("entry was added");
                slot.1 -= 1;
                if slot.1 == 0 {
                    self.sums.remove(&key);
                } else {
                    slot.0 -= v;
                }
            }
        }
    }

    /// Current trapezoidal integral.
    pub fn integral(&self) -> SparseSym {
        let mut entries: BTreeMap<(usize, usize), f64> = self.sums.iter().map(|(k, (v, _))| (*k, *v)).collect();
        if self.samples.len() < 2 {
            return SparseSym { dim: self.dim, entries: BTreeMap::new() };
        }
        for end in [self.samples.front(), self.samples.back()].into_iter().flatten() {
            for &(key, v) in end {
                *entries.get_mut(&key).expect("endpoint entries are summed") -= 0.5 * v;
            }
        }
        for v in entries.values_mut() {
            *v *= self.h;
        }
        entries.retain(|_, v| *v != 0.0);
        SparseSym { dim: self.dim, entries }
    }

    /// Smallest eigenvalue over `subset`; `None` when the subset is empty.
    pub fn min_eig(&self, subset: &GramianSubset) -> Option<f64> {
        let g = self.integral();
        let coords = g.subset_coords(subset).ok()?;
        Some(g.min_eig(&coords))
    }
}

/// Trapezoidal Gramian of a finite sequence of per-sample outer products.
pub fn integrate(dim: usize, samples: &[Outer], h: f64, subset: &GramianSubset) -> Result<Gramian> {
    let mut window = GramianWindow::new(dim, samples.len().saturating_sub(1), h);
    for s in samples {
        window.push(s.clone());
    }
    let g = window.integral();
    let coords = g.subset_coords(subset)?;
    Ok(Gramian { matrix: g.restrict(&coords), min_eig: g.min_eig(&coords), coords })
}
