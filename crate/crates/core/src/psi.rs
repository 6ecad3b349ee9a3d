//! The moment kernel Ψ(a, b) = E[Φ(−g√ρ)^a Φ(g√ρ)^b], g ~ N(0, 1).
//!
//! C(n, k)·Ψ(k, n−k) is the probability that n one-bit observations of the
//! same real fading coefficient contain exactly k sign flips, so every
//! closed-form rate in [`crate::siso`] is a sum over Ψ. For n in the hundreds
//! the values underflow any linear representation, so the evaluator works
//! with ln Ψ throughout.
//!
//! The integrand's logarithm, a·lnΦ(−gs) + b·lnΦ(gs) − g²/2, is concave in g.
//! The integral is therefore evaluated around its unique mode: the mode is
//! located by bisection on the derivative, the support is truncated where the
//! integrand has dropped by e^−[`TRUNCATION_NATS`], and the remaining window
//! is integrated by globally adaptive Gauss–Kronrod (7/15) with breakpoints at
//! the mode and at g = 0, where the Φ factors bend on the scale 1/√ρ.

use std::collections::HashMap;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::special::{inverse_mills, log_add_exp, log_normal_pdf, log_phi};
use crate::{Error, Result};

const TRUNCATION_NATS: f64 = 50.0;
const REL_TOL: f64 = 1e-14;
const MAX_INTERVALS: usize = 2000;

#[derive(Debug)]
pub struct PsiEvaluator {
    rho: f64,
    sqrt_rho: f64,
    /// ln Ψ(a, b) for a + b ≤ table.len() − 1, filled by the Pascal recursion.
    table: Vec<Vec<f64>>,
    memo: Mutex<HashMap<(u32, u32), f64>>,
}

impl Clone for PsiEvaluator {
    fn clone(&self) -> Self {
        Self {
            rho: self.rho,
            sqrt_rho: self.sqrt_rho,
            table: self.table.clone(),
            memo: Mutex::new(self.memo.lock().unwrap().clone()),
        }
    }
}

impl PsiEvaluator {
    /// Evaluator that computes every value by direct quadrature.
    pub fn new(rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "SNR must be finite and >= 0, got {rho}"
            )));
        }
        Ok(Self {
            rho,
            sqrt_rho: rho.sqrt(),
            table: Vec::new(),
            memo: Mutex::new(HashMap::new()),
        })
    }

    /// Evaluator with a precomputed table for all a + b ≤ `n_max`.
    ///
    /// Only the top row a + b = n_max is integrated; lower rows follow from
    /// Ψ(a, b) = Ψ(a+1, b) + Ψ(a, b+1), a sum of positive terms that loses no
    /// precision. This turns the O(n²) quadratures needed by pilot
    /// optimization and JPD rates into O(n).
    pub fn with_table(rho: f64, n_max: usize) -> Result<Self> {
        let mut ev = Self::new(rho)?;
        let top = ev.log_psi_row(n_max);
        let mut rows = vec![Vec::new(); n_max + 1];
        rows[n_max] = top;
        for n in (0..n_max).rev() {
            let above = &rows[n + 1];
            let row: Vec<f64> = (0..=n)
                .map(|a| log_add_exp(above[a + 1], above[a]))
                .collect();
            rows[n] = row;
        }
        ev.table = rows;
        Ok(ev)
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// ln Ψ(a, b).
    pub fn log_psi(&self, a: u32, b: u32) -> f64 {
        let n = (a + b) as usize;
        if n < self.table.len() {
            // row n is indexed by the count of Φ(−g√ρ) factors
            return self.table[n][a as usize];
        }
        let key = (a.min(b), a.max(b));
        if let Some(&v) = self.memo.lock().unwrap().get(&key) {
            return v;
        }
        let v = log_psi_direct(key.0, key.1, self.sqrt_rho);
        self.memo.lock().unwrap().insert(key, v);
        v
    }

    pub fn psi(&self, a: u32, b: u32) -> f64 {
        self.log_psi(a, b).exp()
    }

    /// ln Ψ(k, n − k) for k = 0..=n, computing missing entries in parallel.
    pub fn log_psi_row(&self, n: usize) -> Vec<f64> {
        if n < self.table.len() {
            return self.table[n].clone();
        }
        let n32 = n as u32;
        let half: Vec<f64> = (0..=n32 / 2)
            .into_par_iter()
            .map(|k| self.log_psi(k, n32 - k))
            .collect();
        (0..=n).map(|k| half[k.min(n - k)]).collect()
    }
}

/// Checked evaluation of Ψ(a, b) at SNR `rho` without memoization.
pub fn psi(a: i64, b: i64, rho: f64) -> Result<f64> {
    if a < 0 || b < 0 {
        return Err(Error::InvalidParameter(format!(
            "psi arguments must be >= 0, got ({a}, {b})"
        )));
    }
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "SNR must be finite and >= 0, got {rho}"
        )));
    }
    let (a, b) = (a.min(b) as u32, a.max(b) as u32);
    Ok(log_psi_direct(a, b, rho.sqrt()).exp())
}

fn log_psi_direct(a: u32, b: u32, s: f64) -> f64 {
    if a == 0 && b == 0 {
        return 0.0;
    }
    if s == 0.0 {
        return -((a + b) as f64) * std::f64::consts::LN_2;
    }
    let (af, bf) = (a as f64, b as f64);
    let log_f = |g: f64| af * log_phi(-g * s) + bf * log_phi(g * s) + log_normal_pdf(g);
    let slope = |g: f64| -af * s * inverse_mills(-g * s) + bf * s * inverse_mills(g * s) - g;

    let mode = find_mode(&slope);
    let peak = log_f(mode);
    let lo = level_crossing(&log_f, mode, -1.0, peak - TRUNCATION_NATS);
    let hi = level_crossing(&log_f, mode, 1.0, peak - TRUNCATION_NATS);

    // d/dx [φ/Φ](x) = −m(x)(x + m(x)) with m the inverse Mills ratio
    let mills_slope = |x: f64| {
        let m = inverse_mills(x);
        -m * (x + m)
    };
    let curvature = 1.0 - s * s * (af * mills_slope(-mode * s) + bf * mills_slope(mode * s));
    let width = 1.0 / curvature.max(1e-300).sqrt();

    // Geometric ladders around the mode and around g = 0 keep every panel
    // within a few local length scales of the features it has to resolve.
    let mut breaks = vec![lo, hi];
    push_ladder(&mut breaks, mode, 0.5 * width, lo, hi);
    if lo < 0.0 && 0.0 < hi {
        push_ladder(&mut breaks, 0.0, 0.25 / s, lo, hi);
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();

    let integral = adaptive_gk15(|g| (log_f(g) - peak).exp(), &breaks, REL_TOL);
    peak + integral.ln()
}

fn push_ladder(breaks: &mut Vec<f64>, center: f64, base: f64, lo: f64, hi: f64) {
    breaks.push(center);
    let mut step = base;
    while center - step > lo || center + step < hi {
        for x in [center - step, center + step] {
            if lo < x && x < hi {
                breaks.push(x);
            }
        }
        step *= 2.0;
    }
}

/// Zero of the strictly decreasing derivative of the log-integrand.
fn find_mode(slope: &impl Fn(f64) -> f64) -> f64 {
    let (mut lo, mut hi) = (-1.0, 1.0);
    while slope(lo) < 0.0 {
        lo *= 2.0;
    }
    while slope(hi) > 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Point on side `dir` of the mode where the concave `log_f` falls to `target`.
fn level_crossing(log_f: &impl Fn(f64) -> f64, mode: f64, dir: f64, target: f64) -> f64 {
    let mut step = 1e-6;
    let mut inside = mode;
    let mut outside = mode + dir * step;
    while log_f(outside) > target {
        inside = outside;
        step *= 2.0;
        outside = mode + dir * step;
        if step > 1e3 {
            return outside;
        }
    }
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if mid == inside || mid == outside {
            break;
        }
        if log_f(mid) > target {
            inside = mid;
        } else {
            outside = mid;
        }
    }
    outside
}

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Kronrod estimate and |Kronrod − Gauss| on [a, b].
fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        k += WGK[j] * s;
        if j % 2 == 1 {
            g += WG[j / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Globally adaptive quadrature over consecutive `breaks`: the interval with
/// the largest error estimate is bisected until the summed estimate falls
/// below `rel_tol` times the integral.
pub(crate) fn adaptive_gk15(f: impl Fn(f64) -> f64, breaks: &[f64], rel_tol: f64) -> f64 {
    let mut parts: Vec<(f64, f64, f64, f64)> = breaks
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let (v, e) = gk15(&f, w[0], w[1]);
            (w[0], w[1], v, e)
        })
        .collect();
    loop {
        let total: f64 = parts.iter().map(|p| p.2).sum();
        let err: f64 = parts.iter().map(|p| p.3).sum();
        if err <= rel_tol * total.abs() || parts.len() >= MAX_INTERVALS {
            return total;
        }
        let (idx, _) = parts
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (a, b, _, _) = parts.swap_remove(idx);
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            // interval at machine resolution; accept as is
            let (v, _) = gk15(&f, a, b);
            parts.push((a, b, v, 0.0));
            continue;
        }
        let (v1, e1) = gk15(&f, a, m);
        let (v2, e2) = gk15(&f, m, b);
        parts.push((a, m, v1, e1));
        parts.push((m, b, v2, e2));
    }
}
