//! Closed-form single-user, single-antenna rates.
//!
//! All rates are in bits per channel use for QPSK unless stated otherwise.
//! QPSK on this channel splits into two independent BPSK channels, one per
//! quadrature, so the BPSK-domain quantities (`pilot_information`,
//! [`rate_bpsk`]) are exactly half of their QPSK counterparts.

use std::f64::consts::LN_2;

use rayon::prelude::*;

use crate::psi::{adaptive_gk15, PsiEvaluator};
use crate::rng::{complex_normal, RngStream};
use crate::special::{ln_binomial, log_normal_pdf, phi, xlog2x};
use crate::{Error, Result};

/// Negative results within this distance of zero are rounding noise.
const CLAMP_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct RateResult {
    /// Bits per channel use.
    pub rate: f64,
    pub coherence_time: usize,
    pub pilots: usize,
    /// Monte-Carlo standard error; zero for closed-form results.
    pub stderr: f64,
    /// ln of the weight of each summand (C(n,k)·Ψ), when the rate is a
    /// sum over mismatch counts.
    pub log_terms: Vec<f64>,
}

impl RateResult {
    fn closed_form(rate: f64, coherence_time: usize, pilots: usize) -> Self {
        Self {
            rate,
            coherence_time,
            pilots,
            stderr: 0.0,
            log_terms: Vec::new(),
        }
    }
}

fn clamp_noise(x: f64) -> f64 {
    if x < 0.0 && x > -CLAMP_TOL {
        0.0
    } else {
        x
    }
}

fn check_snr(rho: f64) -> Result<()> {
    if !rho.is_finite() || rho < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "SNR must be finite and >= 0, got {rho}"
        )));
    }
    Ok(())
}

/// Rate of i.i.d. QPSK over a block of `t` channel uses with no CSI:
/// 2 + (2/T) Σ_k C(T,k) Ψ(k,T−k) log2 Ψ(k,T−k).
pub fn rate_qpsk(rho: f64, t: usize) -> Result<RateResult> {
    check_snr(rho)?;
    rate_qpsk_with(&PsiEvaluator::new(rho)?, t)
}

pub fn rate_qpsk_with(psi: &PsiEvaluator, t: usize) -> Result<RateResult> {
    if t == 0 {
        return Err(Error::InvalidParameter(
            "coherence time must be >= 1".into(),
        ));
    }
    let row = psi.log_psi_row(t);
    let log_terms: Vec<f64> = row
        .iter()
        .enumerate()
        .map(|(k, lp)| ln_binomial(t as u64, k as u64) + lp)
        .collect();
    let sum: f64 = log_terms
        .iter()
        .zip(&row)
        .map(|(lw, lp)| lw.exp() * lp / LN_2)
        .sum();
    let rate = clamp_noise(2.0 + 2.0 / t as f64 * sum);
    Ok(RateResult {
        rate,
        coherence_time: t,
        pilots: 0,
        stderr: 0.0,
        log_terms,
    })
}

/// BPSK counterpart of [`rate_qpsk`]: 1 + (1/T) Σ_k C(T,k) Ψ log2 Ψ.
pub fn rate_bpsk(rho: f64, t: usize) -> Result<RateResult> {
    let mut r = rate_qpsk(rho, t)?;
    r.rate *= 0.5;
    Ok(r)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CriticalSnr {
    pub rho_c: f64,
    /// R_QPSK(ρ_c)/ρ_c.
    pub ratio: f64,
}

const CRIT_GRID_MIN: f64 = 1e-4;
const CRIT_GRID_MAX: f64 = 1e4;
const CRIT_GRID_POINTS: usize = 200;
const CRIT_REL_TOL: f64 = 1e-6;

/// SNR maximizing R_QPSK(ρ)/ρ.
///
/// A 200-point log grid over [1e-4, 1e4] brackets the maximum, which is then
/// refined by golden-section search on log ρ to relative tolerance 1e-6.
pub fn critical_snr(t: usize) -> Result<CriticalSnr> {
    if t < 2 {
        return Err(Error::InvalidParameter(format!(
            "critical SNR needs T >= 2, got {t}"
        )));
    }
    let ratio = |log_rho: f64| -> f64 {
        let rho = log_rho.exp();
        let rate = PsiEvaluator::new(rho)
            .and_then(|ev| rate_qpsk_with(&ev, t))
            .map(|r| r.rate);
        rate.map(|r| r / rho).unwrap_or(f64::NAN)
    };
    let (lmin, lmax) = (CRIT_GRID_MIN.ln(), CRIT_GRID_MAX.ln());
    let step = (lmax - lmin) / (CRIT_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..CRIT_GRID_POINTS)
        .into_par_iter()
        .map(|i| ratio(lmin + step * i as f64))
        .collect();
    let (best, _) = grid
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty grid");
    if best == 0 || best == CRIT_GRID_POINTS - 1 || !grid[best].is_finite() {
        return Err(Error::Bracketing(format!(
            "R/rho is maximal at the edge of [{CRIT_GRID_MIN}, {CRIT_GRID_MAX}] for T = {t}"
        )));
    }

    let inv_phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (
        lmin + step * (best - 1) as f64,
        lmin + step * (best + 1) as f64,
    );
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (ratio(c), ratio(d));
    while b - a > CRIT_REL_TOL {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = ratio(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = ratio(d);
        }
    }
    let log_rho_c = 0.5 * (a + b);
    Ok(CriticalSnr {
        rho_c: log_rho_c.exp(),
        ratio: ratio(log_rho_c),
    })
}

/// No-CSI capacity: the QPSK rate above ρ_c, time sharing between silence
/// and QPSK at ρ_c below it.
pub fn capacity_siso(rho: f64, t: usize) -> Result<RateResult> {
    check_snr(rho)?;
    let crit = critical_snr(t)?;
    capacity_siso_given(rho, t, &crit)
}

/// [`capacity_siso`] with a precomputed critical SNR.
pub fn capacity_siso_given(rho: f64, t: usize, crit: &CriticalSnr) -> Result<RateResult> {
    check_snr(rho)?;
    if rho <= crit.rho_c {
        Ok(RateResult::closed_form(rho * crit.ratio, t, 0))
    } else {
        rate_qpsk(rho, t)
    }
}

/// Mutual information (bits) of one BPSK data symbol given the LS estimate
/// from `p` pilots: 1 − Σ_ℓ C(P,ℓ) Ψ(ℓ,P−ℓ) H_b(Ψ(ℓ+1,P−ℓ)/Ψ(ℓ,P−ℓ)).
///
/// The binary entropy is expanded with both conditional probabilities taken
/// from their own Ψ values, so nothing is formed as 1 − (something near 1).
pub fn pilot_information(psi: &PsiEvaluator, p: usize) -> f64 {
    if p == 0 {
        // a sign-symmetric estimate: H_b(1/2) = 1
        return 0.0;
    }
    let p32 = p as u32;
    let mut entropy = 0.0;
    for l in 0..=p32 {
        let ln_c = ln_binomial(p as u64, l as u64);
        let l0 = psi.log_psi(l, p32 - l);
        let l_flip = psi.log_psi(l + 1, p32 - l);
        let l_keep = psi.log_psi(l, p32 - l + 1);
        entropy += (ln_c + l_flip).exp() * (l0 - l_flip) + (ln_c + l_keep).exp() * (l0 - l_keep);
    }
    1.0 - entropy / LN_2
}

/// Pilot-based LS lower bound: 2·(T−P)/T·[pilot information].
pub fn pilot_bound(rho: f64, t: usize, p: usize) -> Result<RateResult> {
    check_snr(rho)?;
    pilot_bound_with(&PsiEvaluator::new(rho)?, t, p)
}

pub fn pilot_bound_with(psi: &PsiEvaluator, t: usize, p: usize) -> Result<RateResult> {
    if p > t {
        return Err(Error::InvalidParameter(format!(
            "pilot count {p} exceeds coherence time {t}"
        )));
    }
    if t == 0 {
        return Err(Error::InvalidParameter(
            "coherence time must be >= 1".into(),
        ));
    }
    let data = (t - p) as f64 / t as f64;
    let rate = if p == 0 || p == t {
        0.0
    } else {
        clamp_noise(2.0 * data * pilot_information(psi, p))
    };
    Ok(RateResult::closed_form(rate, t, p))
}

/// Exhaustive maximization of [`pilot_bound`] over P ∈ {1, …, T−1}; ties go
/// to the smaller P.
pub fn optimize_pilots(rho: f64, t: usize) -> Result<(usize, RateResult)> {
    check_snr(rho)?;
    if t < 2 {
        return Err(Error::InvalidParameter(format!(
            "pilot optimization needs T >= 2, got {t}"
        )));
    }
    let psi = PsiEvaluator::with_table(rho, t)?;
    optimize_pilots_with(&psi, t)
}

pub fn optimize_pilots_with(psi: &PsiEvaluator, t: usize) -> Result<(usize, RateResult)> {
    let mut best: Option<RateResult> = None;
    for p in 1..t {
        let r = pilot_bound_with(psi, t, p)?;
        if best.as_ref().is_none_or(|b| r.rate > b.rate) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| Error::InvalidParameter("no pilot candidates".into()))?;
    Ok((best.pilots, best))
}

/// Joint pilot-data rate: symbol n is decoded with the LS estimate built from
/// the n−1 symbols before it, giving (1/T) Σ_{n=2}^{T} 2·i(n−1) with i the
/// BPSK [`pilot_information`].
pub fn jpd_rate(rho: f64, t: usize) -> Result<RateResult> {
    check_snr(rho)?;
    jpd_rate_with(&PsiEvaluator::new(rho)?, t)
}

pub fn jpd_rate_with(psi: &PsiEvaluator, t: usize) -> Result<RateResult> {
    if t < 2 {
        return Err(Error::InvalidParameter(format!(
            "JPD rate needs T >= 2, got {t}"
        )));
    }
    let total: f64 = (1..t).map(|p| 2.0 * pilot_information(psi, p)).sum();
    Ok(RateResult::closed_form(clamp_noise(total / t as f64), t, 1))
}

/// Joint law of the pilot mismatch count ℓ and the data-symbol channel in the
/// real-valued (BPSK) model.
#[derive(Clone, Debug)]
pub struct MismatchDistribution {
    /// p(ℓ) = C(P,ℓ) Ψ(ℓ,P−ℓ), ℓ = 0..=P.
    pub p_ell: Vec<f64>,
    /// p(r | x, ℓ) indexed `[ℓ][x][r]` with x ∈ {+√ρ, −√ρ} and r ∈ {+1, −1}.
    pub p_r_given_x_ell: Vec<[[f64; 2]; 2]>,
}

/// Mismatch-count distribution and the induced data-symbol channel.
///
/// The numerator E_h[p(ℓ|h) Φ(r h x)] is integrated over the real Gaussian
/// fading h directly in the linear domain, independently of the Ψ
/// evaluator; p(ℓ) comes from Ψ.
pub fn mismatch_distribution(p: usize, rho: f64) -> Result<MismatchDistribution> {
    check_snr(rho)?;
    if p == 0 {
        return Err(Error::InvalidParameter(
            "mismatch distribution needs P >= 1".into(),
        ));
    }
    let psi = PsiEvaluator::new(rho)?;
    let s = rho.sqrt();
    let p32 = p as u32;
    let p_ell: Vec<f64> = (0..=p32)
        .map(|l| (ln_binomial(p as u64, l as u64) + psi.log_psi(l, p32 - l)).exp())
        .collect();

    let mut breaks = vec![-13.0, 0.0, 13.0];
    if s > 0.0 {
        let mut step = 0.25 / s;
        while step < 13.0 {
            breaks.extend([-step, step]);
            step *= 2.0;
        }
    }
    breaks.sort_by(f64::total_cmp);

    let table = (0..=p32)
        .map(|l| {
            let ln_c = ln_binomial(p as u64, l as u64);
            let lp = l as f64;
            let rp = (p32 - l) as f64;
            // the pilots are +√ρ, so a mismatch has probability Φ(−h√ρ)
            let numerator = |r_times_x: f64| {
                adaptive_gk15(
                    |h| {
                        let f_mis = phi(-h * s);
                        let f_hit = phi(h * s);
                        (ln_c + log_normal_pdf(h)).exp()
                            * f_mis.powf(lp)
                            * f_hit.powf(rp)
                            * phi(r_times_x * h * s)
                    },
                    &breaks,
                    1e-13,
                )
            };
            let agree = numerator(1.0);
            let disagree = numerator(-1.0);
            let norm = agree + disagree;
            let (a, d) = if norm > 0.0 {
                (agree / norm, disagree / norm)
            } else {
                (0.5, 0.5)
            };
            // x = +√ρ: r = +1 agrees; x = −√ρ: r = −1 agrees
            [[a, d], [d, a]]
        })
        .collect();
    Ok(MismatchDistribution {
        p_ell,
        p_r_given_x_ell: table,
    })
}

/// Monte-Carlo average over h ~ CN(0,1) of the exact QPSK mutual information
/// of the 4×4 channel from QPSK inputs to one-bit outputs with h known at
/// the receiver.
pub fn perfect_csi_rate_siso(rho: f64, samples: usize, seed: u64) -> Result<RateResult> {
    check_snr(rho)?;
    if samples == 0 {
        return Err(Error::InvalidParameter(
            "need at least one channel sample".into(),
        ));
    }
    const BATCH: usize = 4096;
    let batches = samples.div_ceil(BATCH);
    let sums: Vec<(f64, f64)> = (0..batches)
        .into_par_iter()
        .map(|b| {
            let mut rng = RngStream::new(seed, b as u64).rng();
            let n = BATCH.min(samples - b * BATCH);
            let mut acc = (0.0, 0.0);
            for _ in 0..n {
                let mi = qpsk_mi_known_channel(rho, complex_normal(&mut rng));
                acc.0 += mi;
                acc.1 += mi * mi;
            }
            acc
        })
        .collect();
    let (s1, s2) = sums
        .iter()
        .fold((0.0, 0.0), |acc, v| (acc.0 + v.0, acc.1 + v.1));
    let n = samples as f64;
    let mean = s1 / n;
    let var = if samples > 1 {
        ((s2 - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(RateResult {
        rate: mean,
        coherence_time: 0,
        pilots: 0,
        stderr: (var / n).sqrt(),
        log_terms: Vec::new(),
    })
}

/// Exact I(x; r) in bits for uniform QPSK at SNR `rho` through the known
/// coefficient `h` and the one-bit quantizer.
pub fn qpsk_mi_known_channel(rho: f64, h: num_complex::Complex64) -> f64 {
    use num_complex::Complex64;
    let a = (rho / 2.0).sqrt();
    let inputs = [
        Complex64::new(a, a),
        Complex64::new(-a, a),
        Complex64::new(-a, -a),
        Complex64::new(a, -a),
    ];
    let outputs = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
    // per-quadrature noise variance is 1/2
    let scale = std::f64::consts::SQRT_2;
    let mut trans = [[0.0; 4]; 4];
    for (i, x) in inputs.iter().enumerate() {
        let z = x * h * scale;
        for (j, (rr, ri)) in outputs.iter().enumerate() {
            trans[i][j] = phi(rr * z.re) * phi(ri * z.im);
        }
    }
    let mut h_out = 0.0;
    let mut h_cond = 0.0;
    for j in 0..4 {
        let py: f64 = (0..4).map(|i| trans[i][j]).sum::<f64>() / 4.0;
        h_out += xlog2x(py);
        for row in &trans {
            h_cond += xlog2x(row[j]) / 4.0;
        }
    }
    (h_out - h_cond).max(0.0)
}
