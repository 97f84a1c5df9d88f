//! Struct-of-arrays trajectory storage and CSV export.

use std::io::{self, Write};

use nalgebra::DVector;

/// A follower strategy change as it happened during a run.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchEvent {
    pub time: f64,
    /// First record logged under the new strategy.
    pub record: usize,
    pub true_theta: Option<DVector<f64>>,
    /// `θ̂` when the switch took effect.
    pub theta_hat: DVector<f64>,
}

/// Per-step records of a run.
///
/// Record `k` describes the state at `t_k = k h` before the estimator and
/// leader update of step `k`; `lambda_e[k]` is the level that update used.
/// `θ̂` is stored as its initial value plus the sparse changes made by
/// every step.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryLog {
    pub n_r: usize,
    pub n_a: usize,
    pub step: f64,
    pub t: Vec<f64>,
    r: Vec<f64>,
    a: Vec<f64>,
    pub e_norm: Vec<f64>,
    pub lambda_e: Vec<f64>,
    pub j: Vec<f64>,
    pub j_hat: Vec<f64>,
    pub h: Vec<Option<f64>>,
    pub residual: Vec<f64>,
    pub theta_err: Vec<Option<f64>>,
    pub gramian_mineig: Option<Vec<f64>>,
    /// `‖Kᵀ e_obs‖` at each record.
    pub kte_norm: Vec<f64>,
    /// Whether `f̂(θ, r_k) = a_k` for the current ground truth `θ`.
    pub matched: Vec<Option<bool>>,
    /// `∇_θ Ĵ · θ̂̇`, the term the leader update leaves out.
    pub cross_term: Vec<f64>,
    pub dither_active: Vec<bool>,
    pub theta0: DVector<f64>,
    delta_offsets: Vec<usize>,
    delta_entries: Vec<(usize, f64)>,
    pub switches: Vec<SwitchEvent>,
    /// Ground truth in force at the start of the run.
    pub true_theta0: Option<DVector<f64>>,
}

/// One record's scalar fields, as appended by the simulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub t: f64,
    pub e_norm: f64,
    pub lambda_e: f64,
    pub j: f64,
    pub j_hat: f64,
    pub h: Option<f64>,
    pub residual: f64,
    pub theta_err: Option<f64>,
    pub gramian_mineig: Option<f64>,
    pub kte_norm: f64,
    pub matched: Option<bool>,
    pub cross_term: f64,
    pub dither_active: bool,
}

impl TrajectoryLog {
    pub fn new(
        n_r: usize,
        n_a: usize,
        step: f64,
        theta0: DVector<f64>,
        true_theta0: Option<DVector<f64>>,
        pe: bool,
    ) -> Self {
        Self {
            n_r,
            n_a,
            step,
            t: Vec::new(),
            r: Vec::new(),
            a: Vec::new(),
            e_norm: Vec::new(),
            lambda_e: Vec::new(),
            j: Vec::new(),
            j_hat: Vec::new(),
            h: Vec::new(),
            residual: Vec::new(),
            theta_err: Vec::new(),
            gramian_mineig: pe.then(Vec::new),
            kte_norm: Vec::new(),
            matched: Vec::new(),
            cross_term: Vec::new(),
            dither_active: Vec::new(),
            theta0,
            delta_offsets: vec![0],
            delta_entries: Vec::new(),
            switches: Vec::new(),
            true_theta0,
        }
    }

    pub fn reserve(&mut self, records: usize) {
        self.t.reserve(records);
        self.r.reserve(records * self.n_r);
        self.a.reserve(records * self.n_a);
        self.e_norm.reserve(records);
        self.lambda_e.reserve(records);
        self.j.reserve(records);
        self.j_hat.reserve(records);
        self.residual.reserve(records);
    }

    pub(crate) fn push(&mut self, r: &DVector<f64>, a: &DVector<f64>, rec: Record) {
        self.t.push(rec.t);
        self.r.extend_from_slice(r.as_slice());
        self.a.extend_from_slice(a.as_slice());
        self.e_norm.push(rec.e_norm);
        self.lambda_e.push(rec.lambda_e);
        self.j.push(rec.j);
        self.j_hat.push(rec.j_hat);
        self.h.push(rec.h);
        self.residual.push(rec.residual);
        self.theta_err.push(rec.theta_err);
        if let (Some(col), Some(v)) = (self.gramian_mineig.as_mut(), rec.gramian_mineig) {
            col.push(v);
        }
        self.kte_norm.push(rec.kte_norm);
        self.matched.push(rec.matched);
        self.cross_term.push(rec.cross_term);
        self.dither_active.push(rec.dither_active);
    }

    /// Records the `θ̂` changes made by the step that followed the last record.
    pub(crate) fn push_delta(&mut self, changed: &[(usize, f64)]) {
        self.delta_entries.extend_from_slice(changed);
        self.delta_offsets.push(self.delta_entries.len());
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn r(&self, k: usize) -> &[f64] {
        &self.r[k * self.n_r..(k + 1) * self.n_r]
    }

    pub fn a(&self, k: usize) -> &[f64] {
        &self.a[k * self.n_a..(k + 1) * self.n_a]
    }

    pub fn r_vec(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.r(k))
    }

    pub fn a_vec(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.a(k))
    }

    /// `θ̂` changes made between record `k` and `k + 1`.
    pub fn delta(&self, k: usize) -> &[(usize, f64)] {
        match (self.delta_offsets.get(k), self.delta_offsets.get(k + 1)) {
            (Some(&lo), Some(&hi)) => &self.delta_entries[lo..hi],
            _ => &[],
        }
    }

    /// `θ̂` at record `k`.
    pub fn theta_at(&self, k: usize) -> DVector<f64> {
        let mut theta = self.theta0.clone();
        for i in 0..k.min(self.len()) {
            for &(j, v) in self.delta(i) {
                theta[j] = v;
            }
        }
        theta
    }

    /// Calls `f(k, θ̂_k)` for `k` in `range`, replaying deltas once.
    pub fn replay<F: FnMut(usize, &DVector<f64>)>(&self, range: std::ops::Range<usize>, mut f: F) {
        let end = range.end.min(self.len());
        if range.start >= end {
            return;
        }
        let mut theta = self.theta_at(range.start);
        for k in range.start..end {
            if k > range.start {
                for &(j, v) in self.delta(k - 1) {
                    theta[j] = v;
                }
            }
            f(k, &theta);
        }
    }

    pub fn final_theta(&self) -> DVector<f64> {
        self.theta_at(self.len().saturating_sub(1))
    }

    pub fn last(&self) -> usize {
        self.len().saturating_sub(1)
    }

    /// Ground truth in force at record `k`.
    pub fn true_theta_at(&self, k: usize) -> Option<&DVector<f64>> {
        let mut current = self.true_theta0.as_ref();
        for s in &self.switches {
            if s.record <= k {
                current = s.true_theta.as_ref();
            }
        }
        current
    }

    /// Record ranges `[start, end)` between strategy switches.
    pub fn phases(&self) -> Vec<(usize, usize)> {
        let mut bounds = vec![0];
        bounds.extend(self.switches.iter().map(|s| s.record));
        bounds.push(self.len());
        bounds.windows(2).map(|w| (w[0], w[1])).filter(|(a, b)| a < b).collect()
    }

    /// Record index of time `t` (nearest step).
    pub fn index_of(&self, t: f64) -> Option<usize> {
        if self.is_empty() || t < -0.5 * self.step {
            return None;
        }
        let k = (t / self.step).round() as usize;
        (k < self.len()).then_some(k)
    }

    /// CSV with one row per `every`-th record (the last record is always
    /// written).
    pub fn write_csv<W: Write>(&self, mut w: W, every: usize) -> io::Result<()> {
        let every = every.max(1);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.n_r).map(|i| format!("r_{i}")));
        header.extend((1..=self.n_a).map(|i| format!("a_{i}")));
        header.extend(
            ["e_obs_norm", "lambda_e", "J", "J_hat", "H", "stationarity_residual", "theta_err", "gramian_mineig"]
                .map(String::from),
        );
        writeln!(w, "{}", header.join(","))?;
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for k in (0..self.len()).filter(|k| k % every == 0 || *k == self.last()) {
            let mut row = vec![fmt_f64(self.t[k])];
            row.extend(self.r(k).iter().map(|&v| fmt_f64(v)));
            row.extend(self.a(k).iter().map(|&v| fmt_f64(v)));
            row.push(fmt_f64(self.e_norm[k]));
            row.push(fmt_f64(self.lambda_e[k]));
            row.push(fmt_f64(self.j[k]));
            row.push(fmt_f64(self.j_hat[k]));
            row.push(opt(self.h[k]));
            row.push(fmt_f64(self.residual[k]));
            row.push(opt(self.theta_err[k]));
            row.push(opt(self.gramian_mineig.as_ref().map(|c| c[k])));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shortest representation that round-trips.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
