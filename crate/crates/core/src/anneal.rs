//! Bounded global minimization by generalized simulated annealing (the
//! "dual annealing" scheme) with projected-gradient refinement of the
//! incumbent.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const TAIL_LIMIT: f64 = 1e8;
const MIN_VISIT_BOUND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl SearchSpace {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("bounds must be non-empty and of equal length"));
        }
        for (i, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !lo.is_finite() || !hi.is_finite() || !(lo < hi) {
                return Err(Error::invalid(format!("bad bounds in dimension {i}: [{lo}, {hi}]")));
            }
        }
        Ok(SearchSpace { lower, upper })
    }

    /// The box `center ± half_width`.
    pub fn around(center: &[f64], half_width: &[f64]) -> Result<Self> {
        SearchSpace::new(
            center.iter().zip(half_width).map(|(c, h)| c - h).collect(),
            center.iter().zip(half_width).map(|(c, h)| c + h).collect(),
        )
    }

    pub fn dimension(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn midpoint(&self) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| 0.5 * (l + u)).collect()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dimension()
            && x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| v >= l && v <= u)
    }

    fn project(&self, x: &mut [f64]) {
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*l, *u);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnealConfig {
    pub initial_temp: f64,
    pub visit_param: f64,
    pub accept_param: f64,
    pub max_evals: usize,
    pub restart_temp_ratio: f64,
    pub local_refine: bool,
    /// Iteration cap of each refinement run.
    pub local_max_iters: usize,
    pub rng_seed: u64,
    pub record_history: bool,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            initial_temp: 5230.0,
            visit_param: 2.62,
            accept_param: -5.0,
            max_evals: 1000,
            restart_temp_ratio: 2e-5,
            local_refine: true,
            local_max_iters: 50,
            rng_seed: 0,
            record_history: false,
        }
    }
}

impl AnnealConfig {
    pub fn validate(&self, dimension: usize) -> Result<()> {
        if !(self.initial_temp > 0.0) || !self.initial_temp.is_finite() {
            return Err(Error::invalid("initial temperature must be positive"));
        }
        // at exactly 3 the visiting distribution degenerates
        if !(self.visit_param > 1.0 && self.visit_param < 3.0) {
            return Err(Error::invalid(format!("visit_param {} outside (1, 3)", self.visit_param)));
        }
        if !(self.accept_param < 1.0) {
            return Err(Error::invalid("accept_param must be below 1"));
        }
        if !(self.restart_temp_ratio > 0.0 && self.restart_temp_ratio < 1.0) {
            return Err(Error::invalid("restart_temp_ratio must lie in (0, 1)"));
        }
        if self.max_evals < dimension {
            return Err(Error::invalid(format!(
                "max_evals {} below dimension {dimension}",
                self.max_evals
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptResult {
    pub x_best: Vec<f64>,
    pub f_best: f64,
    pub evals_used: usize,
    /// `(evaluation index, best value so far)` at every improvement.
    pub history: Option<Vec<(usize, f64)>>,
}

/// Counts evaluations and tracks the best point seen.
struct Tracker<'a, F> {
    f: &'a mut F,
    evals: usize,
    budget: usize,
    x_best: Vec<f64>,
    f_best: f64,
    history: Option<Vec<(usize, f64)>>,
}

impl<'a, F: FnMut(&[f64]) -> f64> Tracker<'a, F> {
    fn new(f: &'a mut F, budget: usize, record: bool) -> Self {
        Tracker {
            f,
            evals: 0,
            budget,
            x_best: Vec::new(),
            f_best: f64::INFINITY,
            history: record.then(Vec::new),
        }
    }

    fn remaining(&self) -> usize {
        self.budget - self.evals
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        let mut v = (self.f)(x);
        if v.is_nan() {
            v = f64::INFINITY;
        }
        self.evals += 1;
        if v < self.f_best || self.x_best.is_empty() {
            self.f_best = v;
            self.x_best = x.to_vec();
            if let Some(h) = &mut self.history {
                h.push((self.evals - 1, v));
            }
        }
        v
    }

    fn finish(self) -> OptResult {
        OptResult {
            x_best: self.x_best,
            f_best: self.f_best,
            evals_used: self.evals,
            history: self.history,
        }
    }
}

/// Tsallis visiting distribution with shape `qv`.
struct Visiting {
    qv: f64,
    factor4_p: f64,
    factor6: f64,
}

impl Visiting {
    fn new(qv: f64) -> Self {
        let factor2 = ((4.0 - qv) * (qv - 1.0).ln()).exp();
        let factor3 = ((2.0 - qv) * 2f64.ln() / (qv - 1.0)).exp();
        let factor4_p = PI.sqrt() * factor2 / (factor3 * (3.0 - qv));
        let factor5 = 1.0 / (qv - 1.0) - 0.5;
        let d1 = 2.0 - factor5;
        let factor6 = PI * (1.0 - factor5) / (PI * (1.0 - factor5)).sin() / ln_gamma(d1).exp();
        Visiting { qv, factor4_p, factor6 }
    }

    fn draw(&self, temperature: f64, rng: &mut ChaCha8Rng) -> f64 {
        let qv = self.qv;
        let factor1 = (temperature.ln() / (qv - 1.0)).exp();
        let factor4 = self.factor4_p * factor1;
        let sigmax = (-(qv - 1.0) * (self.factor6 / factor4).ln() / (3.0 - qv)).exp();
        let x: f64 = rng.sample::<f64, _>(StandardNormal) * sigmax;
        let y: f64 = rng.sample(StandardNormal);
        let den = ((qv - 1.0) * y.abs().ln() / (3.0 - qv)).exp();
        x / den
    }

    fn clip(v: f64, rng: &mut ChaCha8Rng) -> f64 {
        if v > TAIL_LIMIT {
            TAIL_LIMIT * rng.random::<f64>()
        } else if v < -TAIL_LIMIT {
            -TAIL_LIMIT * rng.random::<f64>()
        } else {
            v
        }
    }
}

fn wrap_into(v: f64, lo: f64, hi: f64) -> f64 {
    let range = hi - lo;
    let b = (v - lo) % range + range;
    let mut out = b % range + lo;
    if (out - lo).abs() < MIN_VISIT_BOUND {
        out += 1e-10;
    }
    out
}

/// Minimizes `f` over `space`, starting from the box midpoint. Never calls
/// `f` more than `cfg.max_evals` times.
pub fn minimize<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    space: &SearchSpace,
    cfg: &AnnealConfig,
) -> Result<OptResult> {
    let dim = space.dimension();
    cfg.validate(dim)?;
    let visiting = Visiting::new(cfg.visit_param);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut tr = Tracker::new(&mut f, cfg.max_evals, cfg.record_history);

    let t1 = ((cfg.visit_param - 1.0) * 2f64.ln()).exp() - 1.0;
    let restart_temp = cfg.initial_temp * cfg.restart_temp_ratio;

    let mut current = space.midpoint();
    let mut e_current = tr.eval(&current);
    let mut candidate = current.clone();

    'outer: while tr.remaining() > 0 {
        let mut step = 0usize;
        loop {
            let s = step as f64 + 2.0;
            let t2 = ((cfg.visit_param - 1.0) * s.ln()).exp() - 1.0;
            let temperature = cfg.initial_temp * t1 / t2;
            if temperature < restart_temp {
                break;
            }
            let step_temp = temperature / (step as f64 + 1.0);
            let mut improved = step == 0;
            for j in 0..2 * dim {
                if tr.remaining() == 0 {
                    break 'outer;
                }
                candidate.copy_from_slice(&current);
                if j < dim {
                    for (i, c) in candidate.iter_mut().enumerate() {
                        let v = Visiting::clip(visiting.draw(temperature, &mut rng), &mut rng);
                        *c = wrap_into(*c + v, space.lower[i], space.upper[i]);
                    }
                } else {
                    let i = j - dim;
                    let v = Visiting::clip(visiting.draw(temperature, &mut rng), &mut rng);
                    candidate[i] = wrap_into(candidate[i] + v, space.lower[i], space.upper[i]);
                }
                let best_before = tr.f_best;
                let e = tr.eval(&candidate);
                if e < e_current {
                    current.copy_from_slice(&candidate);
                    e_current = e;
                    if e < best_before {
                        improved = true;
                    }
                } else {
                    let r: f64 = rng.random();
                    let base = 1.0 - (1.0 - cfg.accept_param) * (e - e_current) / step_temp;
                    let pqv = if base <= 0.0 {
                        0.0
                    } else {
                        (base.ln() / (1.0 - cfg.accept_param)).exp()
                    };
                    if r <= pqv {
                        current.copy_from_slice(&candidate);
                        e_current = e;
                    }
                }
            }
            if cfg.local_refine && improved && tr.remaining() > 2 * dim {
                let start = tr.x_best.clone();
                let f_start = tr.f_best;
                let (x, e) = refine(&mut tr, &start, f_start, space, cfg.local_max_iters);
                if e < e_current {
                    current = x;
                    e_current = e;
                }
            }
            step += 1;
        }
        // reannealing from a fresh random point
        if tr.remaining() == 0 {
            break;
        }
        current = (0..dim).map(|i| rng.random_range(space.lower[i]..space.upper[i])).collect();
        e_current = tr.eval(&current);
    }
    Ok(tr.finish())
}

/// Central-difference gradient with `h = 1e-6 (1 + |x_i|)`, one-sided where
/// the stencil would leave the box.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], space: &SearchSpace) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    let f0 = if (0..x.len()).any(|i| needs_one_sided(x, i, space)) {
        Some(f(x))
    } else {
        None
    };
    for i in 0..x.len() {
        let h = 1e-6 * (1.0 + x[i].abs());
        let up = (x[i] + h).min(space.upper[i]);
        let dn = (x[i] - h).max(space.lower[i]);
        probe[i] = up;
        let fu = if up > x[i] { f(&probe) } else { f0.unwrap_or_else(|| f(x)) };
        probe[i] = dn;
        let fd = if dn < x[i] { f(&probe) } else { f0.unwrap_or_else(|| f(x)) };
        probe[i] = x[i];
        g[i] = (fu - fd) / (up - dn);
    }
    g
}

fn needs_one_sided(x: &[f64], i: usize, space: &SearchSpace) -> bool {
    let h = 1e-6 * (1.0 + x[i].abs());
    x[i] + h > space.upper[i] || x[i] - h < space.lower[i]
}

/// Projected gradient descent with Barzilai-Borwein steps and Armijo
/// backtracking. Only strict decreases are accepted, so the result is never
/// worse than `x0`.
pub fn local_refine<F: FnMut(&[f64]) -> f64>(
    mut f: F,
    x0: &[f64],
    space: &SearchSpace,
    max_iters: usize,
) -> Result<OptResult> {
    if !space.contains(x0) {
        return Err(Error::invalid("refinement start lies outside the box"));
    }
    let mut tr = Tracker::new(&mut f, usize::MAX, false);
    let f0 = tr.eval(x0);
    refine(&mut tr, x0, f0, space, max_iters);
    Ok(tr.finish())
}

fn refine<F: FnMut(&[f64]) -> f64>(
    tr: &mut Tracker<'_, F>,
    x0: &[f64],
    f0: f64,
    space: &SearchSpace,
    max_iters: usize,
) -> (Vec<f64>, f64) {
    let dim = x0.len();
    let mut x = x0.to_vec();
    let mut fx = f0;
    if !fx.is_finite() {
        return (x, fx);
    }
    let gradient = |tr: &mut Tracker<'_, F>, x: &[f64]| {
        let mut wrapped = |p: &[f64]| tr.eval(p);
        fd_gradient(&mut wrapped, x, space)
    };
    if tr.remaining() < 2 * dim + 1 {
        return (x, fx);
    }
    let mut g = gradient(tr, &x);
    let mut step = {
        let gn = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if gn > 0.0 {
            (1e-2 / gn).min(1.0)
        } else {
            1.0
        }
    };
    let mut trial = vec![0.0; dim];
    for _ in 0..max_iters {
        // stationarity of the projected gradient
        let mut pg = 0.0f64;
        for i in 0..dim {
            let moved = (x[i] - g[i]).clamp(space.lower[i], space.upper[i]);
            pg = pg.max((moved - x[i]).abs());
        }
        if pg <= 1e-12 {
            break;
        }
        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..40 {
            if tr.remaining() == 0 {
                return (x, fx);
            }
            for i in 0..dim {
                trial[i] = x[i] - alpha * g[i];
            }
            space.project(&mut trial);
            let decrease: f64 = (0..dim).map(|i| g[i] * (trial[i] - x[i])).sum();
            if decrease >= 0.0 {
                break;
            }
            let ft = tr.eval(&trial);
            if ft < fx && ft <= fx + 1e-4 * decrease {
                accepted = Some(ft);
                break;
            }
            alpha *= 0.5;
        }
        let Some(ft) = accepted else {
            break;
        };
        let s: Vec<f64> = (0..dim).map(|i| trial[i] - x[i]).collect();
        x.copy_from_slice(&trial);
        fx = ft;
        if tr.remaining() < 2 * dim + 1 {
            break;
        }
        let g_new = gradient(tr, &x);
        let sy: f64 = (0..dim).map(|i| s[i] * (g_new[i] - g[i])).sum();
        let ss: f64 = s.iter().map(|v| v * v).sum();
        step = if sy > 0.0 { ss / sy } else { alpha * 2.0 };
        g = g_new;
    }
    (x, fx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rastrigin(x: &[f64]) -> f64 {
        10.0 * x.len() as f64
            + x.iter().map(|v| v * v - 10.0 * (2.0 * PI * v).cos()).sum::<f64>()
    }

    #[test]
    fn bounds_are_validated() {
        assert!(SearchSpace::new(vec![], vec![]).is_err());
        assert!(SearchSpace::new(vec![1.0], vec![1.0]).is_err());
        assert!(SearchSpace::new(vec![0.0, 0.0], vec![1.0]).is_err());
        assert!(SearchSpace::new(vec![f64::NAN], vec![1.0]).is_err());
    }

    #[test]
    fn config_is_validated() {
        let space = SearchSpace::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let bad = AnnealConfig { visit_param: 3.0, ..Default::default() };
        assert!(minimize(|_| 0.0, &space, &bad).is_err());
        let bad = AnnealConfig { max_evals: 2, ..Default::default() };
        assert!(minimize(|_| 0.0, &space, &bad).is_err());
    }

    #[test]
    fn convex_one_dimensional() {
        let space = SearchSpace::new(vec![-10.0], vec![10.0]).unwrap();
        let cfg = AnnealConfig { max_evals: 500, rng_seed: 3, ..Default::default() };
        let r = minimize(|x| (x[0] - 2.0).powi(2), &space, &cfg).unwrap();
        assert!((r.x_best[0] - 2.0).abs() < 1e-3);
        assert!(r.evals_used <= 500);
    }

    #[test]
    fn rastrigin_two_dimensional() {
        let space = SearchSpace::new(vec![-5.12; 2], vec![5.12; 2]).unwrap();
        for seed in 0..10 {
            let cfg = AnnealConfig { max_evals: 4000, rng_seed: seed, ..Default::default() };
            let r = minimize(rastrigin, &space, &cfg).unwrap();
            assert!(r.f_best <= 1e-4, "seed {seed}: {}", r.f_best);
        }
    }

    #[test]
    fn shifted_rastrigin_two_dimensional() {
        // the box midpoint is the plain function's minimizer; move it away
        let space = SearchSpace::new(vec![-5.12; 2], vec![5.12; 2]).unwrap();
        let shifted = |x: &[f64]| rastrigin(&[x[0] - 2.3, x[1] + 3.6]);
        for seed in 0..10 {
            let cfg = AnnealConfig { max_evals: 4000, rng_seed: seed, ..Default::default() };
            let r = minimize(shifted, &space, &cfg).unwrap();
            assert!(r.f_best <= 1e-4, "seed {seed}: {}", r.f_best);
        }
    }

    #[test]
    fn deterministic_and_reproducible_best() {
        let space = SearchSpace::new(vec![-5.12; 3], vec![3.0; 3]).unwrap();
        let cfg = AnnealConfig { max_evals: 800, rng_seed: 42, record_history: true, ..Default::default() };
        let a = minimize(rastrigin, &space, &cfg).unwrap();
        let b = minimize(rastrigin, &space, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(rastrigin(&a.x_best), a.f_best);
        let c = minimize(rastrigin, &space, &AnnealConfig { rng_seed: 43, ..cfg.clone() }).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn trace_is_monotone_and_points_stay_inside() {
        let space = SearchSpace::new(vec![-1.0, 2.0, -3.0], vec![1.0, 2.5, 7.0]).unwrap();
        let cfg = AnnealConfig { max_evals: 1500, rng_seed: 8, record_history: true, ..Default::default() };
        let mut seen = Vec::new();
        let r = minimize(
            |x| {
                assert!(space.contains(x), "{x:?} left the box");
                let v = rastrigin(x);
                seen.push(v);
                v
            },
            &space,
            &cfg,
        )
        .unwrap();
        assert_eq!(seen.len(), r.evals_used);
        assert!(r.evals_used <= 1500);
        assert!(seen.iter().all(|&v| r.f_best <= v));
        assert!(r.f_best <= seen[0]);
        let h = r.history.unwrap();
        assert!(h.windows(2).all(|w| w[1].1 <= w[0].1 && w[1].0 > w[0].0));
    }

    #[test]
    fn refine_keeps_minimizer() {
        let space = SearchSpace::new(vec![-5.0; 2], vec![5.0; 2]).unwrap();
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 2.0 * (x[1] + 0.5).powi(2);
        let r = local_refine(f, &[1.0, -0.5], &space, 50).unwrap();
        assert_eq!(r.x_best, vec![1.0, -0.5]);
        assert_eq!(r.f_best, 0.0);
    }

    #[test]
    fn refine_converges_on_bowl() {
        let space = SearchSpace::new(vec![-5.0; 3], vec![5.0; 3]).unwrap();
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 0.5 * (x[2] - 0.25).powi(2);
        let r = local_refine(f, &[-4.0, 4.0, 3.0], &space, 50).unwrap();
        let target = [1.0, -2.0, 0.25];
        for (a, b) in r.x_best.iter().zip(target) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.x_best);
        }
    }

    #[test]
    fn refine_respects_bounds() {
        let space = SearchSpace::new(vec![0.0; 2], vec![1.0; 2]).unwrap();
        let r = local_refine(|x| (x[0] - 3.0).powi(2) + (x[1] + 1.0).powi(2), &[0.5, 0.5], &space, 50).unwrap();
        assert!((r.x_best[0] - 1.0).abs() < 1e-9 && r.x_best[1].abs() < 1e-9);
    }

    #[test]
    fn fd_gradient_matches_polynomial() {
        let space = SearchSpace::new(vec![-3.0; 3], vec![3.0; 3]).unwrap();
        let mut f = |x: &[f64]| x[0].powi(3) * x[1] + 2.0 * x[1].powi(2) * x[2] - x[2].powi(4) + 5.0 * x[0];
        let grad = |x: &[f64]| {
            [
                3.0 * x[0].powi(2) * x[1] + 5.0,
                x[0].powi(3) + 4.0 * x[1] * x[2],
                2.0 * x[1].powi(2) - 4.0 * x[2].powi(3),
            ]
        };
        for x in [[0.3, -1.2, 2.0], [1.5, 0.7, -0.4], [-2.0, 2.5, 1.1], [3.0, -3.0, 0.0]] {
            let g = fd_gradient(&mut f, &x, &space);
            let exact = grad(&x);
            let scale = exact.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let err = g.iter().zip(exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            assert!(err / scale <= 1e-5, "{x:?}: {g:?} vs {exact:?}");
        }
    }
}
