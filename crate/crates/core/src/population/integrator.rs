//! Expectations over the region of the error space where a given treatment
//! is chosen.
//!
//! With cut points `c_i = R_k - R_i` (`c_k = 0`), treatment `m` wins iff
//! `u_i > u_m + c_m - c_i` for every `i != m`. Conditioning on the pivot
//! `u_m` turns the region into a product of half-lines, so a tensor
//! Gauss–Legendre rule whose limits move with `c` gives an integral that is a
//! smooth function of the cut points.

use rayon::prelude::*;

use crate::distributions::{ErrorVectorLaw, TAIL_MASS};
use crate::error::{MteError, Result};
use crate::numerics::quadrature::{GaussLegendre, SinhMap};
use crate::numerics::{pairwise_sum, stream_rng};
use crate::selection::{Scenario, CHUNK};

/// Vector-valued integrand `f(v, out)` with `v` indexed by treatment.
pub type Integrand<'a> = dyn Fn(&[f64], &mut [f64]) + Sync + 'a;

/// Lower limit of `u_i` for treatment `m` to beat `i`.
fn lower_limit(um: f64, cm: f64, ci: f64) -> Result<f64> {
    if ci == f64::INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if cm == f64::NEG_INFINITY && ci == f64::NEG_INFINITY {
        return Err(MteError::InvalidArgument(
            "two treatments with infinite utility".into(),
        ));
    }
    Ok(um + cm - ci)
}

/// Tensor-product rule over the error space of independent components.
#[derive(Debug, Clone)]
pub struct TensorIntegrator {
    rule: GaussLegendre,
    maps: Vec<SinhMap>,
    supports: Vec<(f64, f64)>,
}

impl TensorIntegrator {
    pub fn new(errors: &ErrorVectorLaw, nodes: usize) -> Result<Self> {
        if !errors.is_independent() {
            return Err(MteError::InvalidArgument(
                "tensor quadrature requires independent errors".into(),
            ));
        }
        let laws = errors.components();
        Ok(Self {
            rule: GaussLegendre::new(nodes),
            maps: laws.iter().map(|l| SinhMap::new(l.median(), l.robust_scale())).collect(),
            supports: laws.iter().map(|l| l.truncated_support(TAIL_MASS)).collect(),
        })
    }

    pub fn nodes(&self) -> usize {
        self.rule.len()
    }

    /// `E[f(V) 1{m chosen}]` for cut points `cuts` (treatment-indexed).
    pub fn integrate(
        &self,
        scenario: &Scenario,
        m: usize,
        cuts: &[f64],
        dim: usize,
        f: &Integrand,
    ) -> Result<Vec<f64>> {
        let kk = scenario.treatments();
        let k = scenario.baseline();
        let laws = scenario.errors().components();
        if cuts[m] == f64::INFINITY {
            return Ok(vec![0.0; dim]);
        }
        let mut pivot = Vec::new();
        let (lo, hi) = self.supports[m];
        self.maps[m].nodes(&self.rule, lo, hi, &mut pivot);
        let others: Vec<usize> = (0..kk).filter(|&i| i != m).collect();
        let per_pivot: Vec<Result<Vec<f64>>> = pivot
            .par_iter()
            .map(|&(um, wm)| {
                let mut acc = vec![0.0; dim];
                let base = wm * laws[m].pdf(um);
                if base == 0.0 {
                    return Ok(acc);
                }
                let mut lists: Vec<Vec<(f64, f64)>> = Vec::with_capacity(others.len());
                for &i in &others {
                    let l = lower_limit(um, cuts[m], cuts[i])?;
                    let (lo_i, hi_i) = self.supports[i];
                    let mut nodes = Vec::new();
                    self.maps[i].nodes(&self.rule, l.max(lo_i), hi_i, &mut nodes);
                    if nodes.is_empty() {
                        return Ok(acc);
                    }
                    for n in nodes.iter_mut() {
                        n.1 *= laws[i].pdf(n.0);
                    }
                    lists.push(nodes);
                }
                let mut u = vec![0.0; kk];
                let mut v = vec![f64::NAN; kk];
                let mut tmp = vec![0.0; dim];
                u[m] = um;
                let mut idx = vec![0usize; others.len()];
                loop {
                    let mut w = base;
                    for (d, &i) in others.iter().enumerate() {
                        let (ui, wi) = lists[d][idx[d]];
                        u[i] = ui;
                        w *= wi;
                    }
                    if w != 0.0 {
                        for i in 0..kk {
                            if i != k {
                                v[i] = scenario.laws().law(i).expect("law").cdf(u[k] - u[i]);
                            }
                        }
                        f(&v, &mut tmp);
                        for (a, t) in acc.iter_mut().zip(&tmp) {
                            *a += w * t;
                        }
                    }
                    // odometer over the tensor product
                    let mut d = 0;
                    loop {
                        if d == idx.len() {
                            return Ok(acc);
                        }
                        idx[d] += 1;
                        if idx[d] < lists[d].len() {
                            break;
                        }
                        idx[d] = 0;
                        d += 1;
                    }
                }
            })
            .collect();
        let mut columns = vec![Vec::with_capacity(pivot.len()); dim];
        for r in per_pivot {
            for (c, x) in columns.iter_mut().zip(r?) {
                c.push(x);
            }
        }
        Ok(columns.iter_mut().map(|c| pairwise_sum(c)).collect())
    }

    /// `E[f(V) | V_j = q]` by conditioning on `U_k - U_j = x`.
    pub fn conditional(
        &self,
        scenario: &Scenario,
        j: usize,
        x: f64,
        dim: usize,
        f: &Integrand,
    ) -> Result<Vec<f64>> {
        let kk = scenario.treatments();
        let k = scenario.baseline();
        let laws = scenario.errors().components();
        let (lo_k, hi_k) = self.supports[k];
        let (lo_j, hi_j) = self.supports[j];
        let (lo, hi) = (lo_k.max(lo_j + x), hi_k.min(hi_j + x));
        if lo >= hi {
            return Err(MteError::InvalidArgument(format!(
                "conditioning value {x} outside the support of the difference"
            )));
        }
        let joint = |t: f64| laws[k].pdf(t) * laws[j].pdf(t - x);
        // centre the pivot rule on the mode of the conditional density
        let scan = 400;
        let mut best = (lo, 0.0);
        for s in 0..=scan {
            let t = lo + (hi - lo) * s as f64 / scan as f64;
            let d = joint(t);
            if d > best.1 {
                best = (t, d);
            }
        }
        let (sk, sj) = (self.maps[k].scale, self.maps[j].scale);
        let map = SinhMap::new(best.0, 1.0 / (1.0 / (sk * sk) + 1.0 / (sj * sj)).sqrt());
        let pivot_rule = GaussLegendre::new(2 * self.rule.len());
        let mut pivot = Vec::new();
        map.nodes(&pivot_rule, lo, hi, &mut pivot);
        let free: Vec<usize> = (0..kk).filter(|&i| i != k && i != j).collect();
        let lists: Vec<Vec<(f64, f64)>> = free
            .iter()
            .map(|&i| {
                let mut nodes = Vec::new();
                let (a, b) = self.supports[i];
                self.maps[i].nodes(&self.rule, a, b, &mut nodes);
                for n in nodes.iter_mut() {
                    n.1 *= laws[i].pdf(n.0);
                }
                nodes
            })
            .collect();
        let mut num: Vec<Vec<f64>> = vec![Vec::new(); dim];
        let mut den = Vec::with_capacity(pivot.len());
        let mut u = vec![0.0; kk];
        let mut v = vec![f64::NAN; kk];
        let mut tmp = vec![0.0; dim];
        for &(t, wt) in &pivot {
            let base = wt * joint(t);
            den.push(base);
            let mut acc = vec![0.0; dim];
            u[k] = t;
            u[j] = t - x;
            let mut idx = vec![0usize; free.len()];
            'outer: loop {
                let mut w = base;
                for (d, &i) in free.iter().enumerate() {
                    let (ui, wi) = lists[d][idx[d]];
                    u[i] = ui;
                    w *= wi;
                }
                if w != 0.0 {
                    for i in 0..kk {
                        if i != k {
                            v[i] = scenario.laws().law(i).expect("law").cdf(u[k] - u[i]);
                        }
                    }
                    f(&v, &mut tmp);
                    for (a, b) in acc.iter_mut().zip(&tmp) {
                        *a += w * b;
                    }
                }
                let mut d = 0;
                loop {
                    if d == idx.len() {
                        break 'outer;
                    }
                    idx[d] += 1;
                    if idx[d] < lists[d].len() {
                        break;
                    }
                    idx[d] = 0;
                    d += 1;
                }
            }
            for (c, a) in num.iter_mut().zip(acc) {
                c.push(a);
            }
        }
        let total = pairwise_sum(&mut den);
        if !(total > 0.0) {
            return Err(MteError::InvalidArgument(format!(
                "zero conditional density at difference value {x}"
            )));
        }
        Ok(num.iter_mut().map(|c| pairwise_sum(c) / total).collect())
    }
}

/// Monte Carlo counterpart for dependent errors or many treatments.
#[derive(Debug, Clone, Copy)]
pub struct MonteCarloIntegrator {
    pub draws: usize,
    pub seed: u64,
}

impl MonteCarloIntegrator {
    /// Mean and standard error of `f(V) 1{m chosen}`. Common random numbers
    /// across calls keep differences between nearby cut points low-variance.
    pub fn integrate(
        &self,
        scenario: &Scenario,
        m: usize,
        cuts: &[f64],
        dim: usize,
        f: &Integrand,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.accumulate(scenario, dim, |u, v, out| {
            let mut wins = cuts[m] != f64::INFINITY;
            for i in 0..u.len() {
                if i != m && wins {
                    let l = lower_limit(u[m], cuts[m], cuts[i]).unwrap_or(f64::INFINITY);
                    wins = u[i] > l;
                }
            }
            if wins {
                f(v, out);
                true
            } else {
                false
            }
        })
    }

    /// `E[f(V) | |V_j - q| < half_width]` by rejection.
    pub fn conditional(
        &self,
        scenario: &Scenario,
        j: usize,
        q: f64,
        half_width: f64,
        dim: usize,
        f: &Integrand,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (sum, se) = self.accumulate(scenario, dim + 1, |_, v, out| {
            if (v[j] - q).abs() < half_width {
                f(v, &mut out[..dim]);
                out[dim] = 1.0;
                true
            } else {
                false
            }
        })?;
        let p = sum[dim];
        let hits = (p * self.draws as f64).round() as usize;
        if hits < 30 {
            return Err(MteError::SparseRegion {
                effective: hits as f64,
                required: 30.0,
            });
        }
        Ok((
            sum[..dim].iter().map(|s| s / p).collect(),
            se[..dim].iter().map(|s| s / p).collect(),
        ))
    }

    fn accumulate<F>(&self, scenario: &Scenario, dim: usize, body: F) -> Result<(Vec<f64>, Vec<f64>)>
    where
        F: Fn(&[f64], &[f64], &mut [f64]) -> bool + Sync,
    {
        let kk = scenario.treatments();
        let k = scenario.baseline();
        let n = self.draws;
        let chunks = n.div_ceil(CHUNK);
        let parts: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let mut rng = stream_rng(self.seed, c as u64);
                let len = CHUNK.min(n - c * CHUNK);
                let mut u = vec![0.0; kk];
                let mut v = vec![f64::NAN; kk];
                let mut out = vec![0.0; dim];
                let mut s1 = vec![0.0; dim];
                let mut s2 = vec![0.0; dim];
                for _ in 0..len {
                    scenario.errors().sample_into(&mut rng, &mut u)?;
                    for i in 0..kk {
                        if i != k {
                            v[i] = scenario.laws().law(i).expect("law").cdf(u[k] - u[i]);
                        }
                    }
                    out.iter_mut().for_each(|o| *o = 0.0);
                    if body(&u, &v, &mut out) {
                        for d in 0..dim {
                            s1[d] += out[d];
                            s2[d] += out[d] * out[d];
                        }
                    }
                }
                Ok((s1, s2))
            })
            .collect();
        let mut s1 = vec![0.0; dim];
        let mut s2 = vec![0.0; dim];
        for p in parts {
            let (a, b) = p?;
            for d in 0..dim {
                s1[d] += a[d];
                s2[d] += b[d];
            }
        }
        let nf = n as f64;
        let mean: Vec<f64> = s1.iter().map(|s| s / nf).collect();
        let se = (0..dim)
            .map(|d| ((s2[d] / nf - mean[d] * mean[d]).max(0.0) / (nf - 1.0).max(1.0)).sqrt())
            .collect();
        Ok((mean, se))
    }
}
