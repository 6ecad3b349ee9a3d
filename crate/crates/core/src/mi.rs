//! Grid-quantized mutual-information lower bound for the MRC outputs.
//!
//! Each MRC output x̃ is snapped to the nearest point of a square lattice
//! and the pair (transmitted symbol, lattice cell) is counted. The plug-in
//! mutual information of the resulting finite channel lower-bounds the MI
//! of the continuous output (data processing), and tightens as the spacing
//! shrinks.
//!
//! Pairs are pooled over all frames rather than conditioned on the channel
//! estimate. Data symbols are drawn independently of the pilot rows that
//! produce Ĥ, so x ⊥ Ĥ and I(x; q) ≤ I(x; q, Ĥ) = I(x; q | Ĥ): the pooled
//! estimate is still a valid achievable-rate lower bound.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::mimo::{simulate_frame, SimConfig};
use crate::siso::RateResult;
use crate::{Constellation, ConstellationKind, Error, Result};

/// Number of interleaved sample folds used for the standard error.
pub const FOLDS: usize = 10;

/// Largest lattice accepted, in cells.
const MAX_CELLS: u64 = 1 << 32;

/// Square lattice {iδ + jδ·j : |i|, |j| ≤ ⌊L/δ⌋}; outputs beyond ±L are
/// clamped to the boundary cells.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    delta: f64,
    extent: f64,
    half: i64,
}

impl GridSpec {
    pub fn new(delta: f64, extent: f64) -> Result<Self> {
        if !delta.is_finite() || !extent.is_finite() || delta <= 0.0 || extent < delta {
            return Err(Error::InvalidParameter(format!(
                "grid needs 0 < delta <= extent, got delta={delta}, extent={extent}"
            )));
        }
        let half = (extent / delta + 1e-9).floor() as i64;
        let side = 2 * half as u64 + 1;
        if side.saturating_mul(side) > MAX_CELLS {
            return Err(Error::InvalidParameter(format!(
                "grid with {side}x{side} cells is too large"
            )));
        }
        Ok(Self {
            delta,
            extent,
            half,
        })
    }

    /// Grid sized for `kind` at unit power: the minimum symbol distance spans
    /// four cells and the extent is twice the largest coordinate plus three
    /// per-dimension noise standard deviations `noise_std`.
    pub fn for_constellation(kind: ConstellationKind, noise_std: f64) -> Result<Self> {
        let unit = Constellation::unit(kind);
        let delta = unit.min_distance() / 4.0;
        Self::new(
            delta,
            (2.0 * unit.max_coordinate() + 3.0 * noise_std).max(delta),
        )
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn side(&self) -> usize {
        (2 * self.half + 1) as usize
    }

    pub fn cells(&self) -> usize {
        self.side() * self.side()
    }

    pub fn center(&self) -> u32 {
        self.index(0, 0)
    }

    fn index(&self, i: i64, j: i64) -> u32 {
        ((j + self.half) * (2 * self.half + 1) + (i + self.half)) as u32
    }

    fn axis(&self, v: f64) -> i64 {
        // `as` saturates and sends NaN to 0
        ((v / self.delta).round() as i64).clamp(-self.half, self.half)
    }

    /// Index of the lattice point nearest to `x`, clamped to the grid.
    pub fn map(&self, x: Complex64) -> u32 {
        self.index(self.axis(x.re), self.axis(x.im))
    }

    /// Lattice point of a cell index.
    pub fn point(&self, cell: u32) -> Complex64 {
        let side = 2 * self.half + 1;
        let c = cell as i64;
        Complex64::new(
            (c % side - self.half) as f64 * self.delta,
            (c / side - self.half) as f64 * self.delta,
        )
    }
}

pub fn grid_map(x: Complex64, grid: &GridSpec) -> u32 {
    grid.map(x)
}

/// Sparse joint counts over (input symbol, output cell), split into
/// [`FOLDS`] interleaved folds.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct JointHistogram {
    symbols: usize,
    /// cell → counts laid out `[fold * symbols + symbol]`.
    counts: BTreeMap<u32, Vec<u64>>,
    total: u64,
}

impl JointHistogram {
    pub fn new(symbols: usize) -> Self {
        Self {
            symbols,
            counts: BTreeMap::new(),
            total: 0,
        }
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn occupied_cells(&self) -> usize {
        self.counts.len()
    }

    /// Counts one sample, assigning folds round-robin by arrival order.
    pub fn accumulate(&mut self, symbol: usize, cell: u32) -> Result<()> {
        let fold = (self.total % FOLDS as u64) as usize;
        self.accumulate_in_fold(fold, symbol, cell)
    }

    /// Counts one sample in an explicit fold (e.g. frame index mod [`FOLDS`]),
    /// which keeps the fold layout independent of merge order.
    pub fn accumulate_in_fold(&mut self, fold: usize, symbol: usize, cell: u32) -> Result<()> {
        if symbol >= self.symbols {
            return Err(Error::SymbolOutOfRange {
                index: symbol,
                symbols: self.symbols,
            });
        }
        let width = self.symbols * FOLDS;
        let slot = self.counts.entry(cell).or_insert_with(|| vec![0; width]);
        slot[(fold % FOLDS) * self.symbols + symbol] += 1;
        self.total += 1;
        Ok(())
    }

    /// Adds `other`'s counts into `self`.
    pub fn merge(&mut self, other: &JointHistogram) -> Result<()> {
        if other.symbols != self.symbols {
            return Err(Error::InvalidParameter(format!(
                "cannot merge histograms over {} and {} symbols",
                self.symbols, other.symbols
            )));
        }
        for (cell, counts) in &other.counts {
            let slot = self
                .counts
                .entry(*cell)
                .or_insert_with(|| vec![0; counts.len()]);
            for (a, b) in slot.iter_mut().zip(counts) {
                *a += b;
            }
        }
        self.total += other.total;
        Ok(())
    }

    pub fn merged(mut self, other: &JointHistogram) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    /// Counts of `cell` summed over folds, one per symbol.
    pub fn cell_counts(&self, cell: u32) -> Vec<u64> {
        let mut out = vec![0; self.symbols];
        if let Some(c) = self.counts.get(&cell) {
            for (i, v) in c.iter().enumerate() {
                out[i % self.symbols] += v;
            }
        }
        out
    }

    fn plugin_bits(&self, fold: Option<usize>) -> Option<f64> {
        let m = self.symbols;
        let folds: Vec<usize> = match fold {
            Some(f) => vec![f],
            None => (0..FOLDS).collect(),
        };
        let mut rows: Vec<Vec<u64>> = Vec::with_capacity(self.counts.len());
        let mut marginal = vec![0u64; m];
        let mut n = 0u64;
        for counts in self.counts.values() {
            let mut row = vec![0u64; m];
            for &f in &folds {
                for s in 0..m {
                    row[s] += counts[f * m + s];
                }
            }
            let sum: u64 = row.iter().sum();
            if sum > 0 {
                for s in 0..m {
                    marginal[s] += row[s];
                }
                n += sum;
                rows.push(row);
            }
        }
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mut acc = 0.0;
        for row in &rows {
            let q: u64 = row.iter().sum();
            for s in 0..m {
                let c = row[s];
                if c > 0 {
                    // c/n · log2( c n / (n_s n_q) )
                    acc += c as f64 * ((c as f64 * nf) / (marginal[s] as f64 * q as f64)).ln();
                }
            }
        }
        Some((acc / nf / LN_2).max(0.0))
    }

    /// First-order plug-in bias of the pooled MI in bits,
    /// (B_xq − B_x − B_q + 1) / (2n ln 2), with B the occupied support sizes.
    fn plugin_bias(&self) -> f64 {
        let m = self.symbols;
        let mut symbols = vec![false; m];
        let (mut pairs, mut cells) = (0u64, 0u64);
        for counts in self.counts.values() {
            let mut any = false;
            for s in 0..m {
                if (0..FOLDS).any(|f| counts[f * m + s] > 0) {
                    symbols[s] = true;
                    pairs += 1;
                    any = true;
                }
            }
            cells += any as u64;
        }
        let used = symbols.iter().filter(|&&u| u).count() as u64;
        if self.total == 0 {
            return 0.0;
        }
        (pairs + 1).saturating_sub(used + cells) as f64 / (2.0 * self.total as f64 * LN_2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MiEstimate {
    pub bits: f64,
    /// Standard deviation of the per-fold estimates over √[`FOLDS`].
    pub stderr: f64,
    /// Leading-order upward bias of the plug-in estimate. Not subtracted
    /// from `bits`; used to size the sample budget.
    pub bias: f64,
}

/// Plug-in MI (bits) of the pooled histogram with its fold standard error.
pub fn mi_lower_bound(hist: &JointHistogram) -> Result<MiEstimate> {
    let bits = hist.plugin_bits(None).ok_or(Error::EmptyHistogram)?;
    let per_fold: Vec<f64> = (0..FOLDS)
        .filter_map(|f| hist.plugin_bits(Some(f)))
        .collect();
    let stderr = if per_fold.len() >= 2 {
        let k = per_fold.len() as f64;
        let mean = per_fold.iter().sum::<f64>() / k;
        let var = per_fold.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (var / k).sqrt()
    } else {
        f64::NAN
    };
    Ok(MiEstimate {
        bits,
        stderr,
        bias: hist.plugin_bias(),
    })
}

/// Result of [`rate_mrc`]: one rate per user.
#[derive(Clone, Debug, PartialEq)]
pub struct MrcRate {
    pub per_user: Vec<RateResult>,
    /// Set when the pilot budget cannot give every user an equal share; all
    /// rates are then zero.
    pub insufficient_pilots: bool,
    pub frames: usize,
    /// Per-user plug-in bias estimate, on the same scale as the rates.
    pub bias: Vec<f64>,
}

impl MrcRate {
    /// The users are statistically equivalent; user 1 is representative.
    pub fn representative(&self) -> &RateResult {
        &self.per_user[0]
    }
}

const FRAMES_PER_TASK: usize = 16;

/// Per-user joint histograms for frames `range` of `config`.
pub fn collect_histograms(
    config: &SimConfig,
    grid: &GridSpec,
    range: std::ops::Range<u64>,
) -> Result<Vec<JointHistogram>> {
    config.validate()?;
    let symbols = config.constellation.size();
    let empty = || vec![JointHistogram::new(symbols); config.users];
    let starts: Vec<u64> = range.clone().step_by(FRAMES_PER_TASK).collect();
    starts
        .into_par_iter()
        .map(|start| {
            let mut hists = empty();
            for f in start..(start + FRAMES_PER_TASK as u64).min(range.end) {
                let frame = simulate_frame(config, f)?;
                let fold = (f % FOLDS as u64) as usize;
                for ((i, user), &sym) in frame.data_symbols.indexed_iter() {
                    hists[user].accumulate_in_fold(
                        fold,
                        sym,
                        grid.map(frame.combined[[i, user]]),
                    )?;
                }
            }
            Ok(hists)
        })
        .try_reduce(empty, |mut a, b| {
            for (x, y) in a.iter_mut().zip(&b) {
                x.merge(y)?;
            }
            Ok(a)
        })
}

fn rates_from(config: &SimConfig, hists: &[JointHistogram], frames: usize) -> Result<MrcRate> {
    let t = config.coherence_time;
    let share = config.data_slots() as f64 / t as f64;
    let mut bias = Vec::with_capacity(hists.len());
    let per_user = hists
        .iter()
        .map(|h| {
            let est = mi_lower_bound(h)?;
            bias.push(share * est.bias);
            Ok(RateResult {
                rate: share * est.bits,
                coherence_time: t,
                pilots: config.effective_pilots(),
                stderr: share * est.stderr,
                log_terms: Vec::new(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(MrcRate {
        per_user,
        insufficient_pilots: false,
        frames,
        bias,
    })
}

fn insufficient(config: &SimConfig) -> MrcRate {
    let r = RateResult {
        rate: 0.0,
        coherence_time: config.coherence_time,
        pilots: config.pilots,
        stderr: 0.0,
        log_terms: Vec::new(),
    };
    let users = config.users.max(1);
    MrcRate {
        per_user: vec![r; users],
        insufficient_pilots: true,
        frames: 0,
        bias: vec![0.0; users],
    }
}

/// Achievable per-user rate with LS estimation and MRC over `config.frames`
/// frames: ((T−P)/T) × grid MI lower bound.
pub fn rate_mrc(config: &SimConfig, grid: &GridSpec) -> Result<MrcRate> {
    match config.validate() {
        Err(Error::InsufficientPilots { .. }) => return Ok(insufficient(config)),
        Err(e) => return Err(e),
        Ok(()) => {}
    }
    if config.frames == 0 {
        return Err(Error::InvalidParameter("need at least one frame".into()));
    }
    let hists = collect_histograms(config, grid, 0..config.frames as u64)?;
    rates_from(config, &hists, config.frames)
}

/// [`rate_mrc`] that keeps doubling the frame count, starting from
/// `config.frames`, until user 1's estimate has converged or `max_frames` is
/// reached. Converged means: standard error below `target_stderr`, plug-in
/// bias estimate below half of it, and the last doubling moved the
/// rate by at most two standard errors (the plug-in bias halves with each
/// doubling, so a residual bias shows up as drift). Earlier frames are
/// reused, so the result is identical to a single run over the final frame
/// count.
pub fn rate_mrc_to_precision(
    config: &SimConfig,
    grid: &GridSpec,
    target_stderr: f64,
    max_frames: usize,
) -> Result<MrcRate> {
    match config.validate() {
        Err(Error::InsufficientPilots { .. }) => return Ok(insufficient(config)),
        Err(e) => return Err(e),
        Ok(()) => {}
    }
    let mut done = config.frames.max(FOLDS);
    let mut hists = collect_histograms(config, grid, 0..done as u64)?;
    let mut previous: Option<f64> = None;
    loop {
        let rates = rates_from(config, &hists, done)?;
        let r = rates.representative();
        let se = r.stderr;
        let settled = previous.is_some_and(|p| (r.rate - p).abs() <= 2.0 * se);
        if (se.is_finite() && se < target_stderr && rates.bias[0] <= target_stderr / 2.0 && settled)
            || done >= max_frames
        {
            return Ok(rates);
        }
        previous = Some(r.rate);
        let next = (2 * done).min(max_frames);
        let more = collect_histograms(config, grid, done as u64..next as u64)?;
        for (h, m) in hists.iter_mut().zip(&more) {
            h.merge(m)?;
        }
        done = next;
    }
}

/// Default grid for `config`, sized on the combiner output itself.
///
/// One-bit MRC does not preserve the constellation scale: the conditional
/// means of x̃ shrink with the number of users, the pilot budget and the SNR.
/// A short calibration run of the same geometry measures the per-symbol
/// cluster means μ_s and the pooled per-dimension spread σ; the spacing puts
/// four cells across the closest pair of means (never finer than σ/2) and the
/// extent is twice the largest mean coordinate plus 3σ. At ρ = 0 the clusters
/// coincide, so the calibration runs at 0 dB instead.
///
/// The calibration frames use the top of the stream space, disjoint from the
/// frame streams `0, 1, 2, …` of the measurement run.
pub fn default_grid(config: &SimConfig) -> Result<GridSpec> {
    const CALIBRATION_FRAMES: u64 = 64;
    let mut cal = config.clone();
    if cal.rho == 0.0 {
        cal.rho = 1.0;
    }
    if let Err(Error::InsufficientPilots { .. }) = cal.validate() {
        return GridSpec::for_constellation(config.constellation, 1.0);
    }
    cal.validate()?;
    let m = config.constellation.size();
    let mut sums = vec![(Complex64::new(0.0, 0.0), 0.0, 0u64); m];
    for f in 0..CALIBRATION_FRAMES {
        let frame = simulate_frame(&cal, u64::MAX - f)?;
        for ((i, user), &s) in frame.data_symbols.indexed_iter() {
            if frame.erased[user] {
                continue;
            }
            let v = frame.combined[[i, user]];
            sums[s].0 += v;
            sums[s].1 += v.norm_sqr();
            sums[s].2 += 1;
        }
    }
    if sums.iter().any(|s| s.2 < 2) {
        return GridSpec::for_constellation(config.constellation, 1.0);
    }
    let means: Vec<Complex64> = sums.iter().map(|(sum, _, n)| sum / *n as f64).collect();
    let (ss, n) = sums.iter().fold((0.0, 0u64), |(ss, n), (sum, sq, cnt)| {
        (ss + sq - sum.norm_sqr() / *cnt as f64, n + cnt)
    });
    let sigma = (ss.max(0.0) / n as f64 / 2.0).sqrt();
    let mut d_min = f64::INFINITY;
    for i in 0..m {
        for j in i + 1..m {
            d_min = d_min.min((means[i] - means[j]).norm());
        }
    }
    let reach = means
        .iter()
        .map(|u| u.re.abs().max(u.im.abs()))
        .fold(0.0, f64::max);
    let delta = (d_min / 4.0).max(sigma / 2.0);
    if !delta.is_finite() || delta <= 0.0 {
        return GridSpec::for_constellation(config.constellation, 1.0);
    }
    let extent = (2.0 * reach + 3.0 * sigma).max(delta);
    GridSpec::new(delta, extent).or_else(|_| {
        // too many cells: coarsen to the largest admissible lattice
        let side = ((MAX_CELLS as f64).sqrt() - 1.0) / 2.0;
        GridSpec::new(extent / side.floor(), extent)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::{CorrelationMode, CsiMode, RngStream};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn grid_center_and_clamp() {
        let g = GridSpec::new(0.25, 2.0).unwrap();
        assert_eq!(g.side(), 17);
        assert_eq!(g.map(Complex64::new(0.0, 0.0)), g.center());
        assert_eq!(g.point(g.center()), Complex64::new(0.0, 0.0));
        let edge = g.map(Complex64::new(2.0 + 5.0, 0.0));
        assert_eq!(g.point(edge), Complex64::new(2.0, 0.0));
        assert_eq!(
            g.map(Complex64::new(1e9, -1e9)),
            g.map(Complex64::new(2.0, -2.0))
        );
        assert_eq!(
            g.point(g.map(Complex64::new(0.3, -0.6))),
            Complex64::new(0.25, -0.5)
        );
        assert!(GridSpec::new(0.0, 1.0).is_err());
        assert!(GridSpec::new(1.0, 0.5).is_err());
        assert!(GridSpec::new(1e-6, 1e3).is_err());
    }

    #[test]
    fn constellation_grid_resolves_symbols() {
        let g = GridSpec::for_constellation(ConstellationKind::Qam16, 0.5).unwrap();
        let unit = Constellation::unit(ConstellationKind::Qam16);
        assert!(unit.min_distance() / g.delta() >= 4.0 - 1e-12);
        let cells: std::collections::BTreeSet<u32> =
            unit.symbols().iter().map(|&s| g.map(s)).collect();
        assert_eq!(cells.len(), 16);
    }

    #[test]
    fn accumulate_rejects_bad_symbol() {
        let mut h = JointHistogram::new(4);
        assert!(matches!(
            h.accumulate(4, 0),
            Err(Error::SymbolOutOfRange { .. })
        ));
        h.accumulate(3, 7).unwrap();
        assert_eq!(h.total(), 1);
        assert_eq!(h.cell_counts(7), vec![0, 0, 0, 1]);
    }

    #[test]
    fn merge_identity_and_disjoint() {
        let mut a = JointHistogram::new(2);
        a.accumulate(0, 1).unwrap();
        let empty = JointHistogram::new(2);
        assert_eq!(a.clone().merged(&empty).unwrap(), a);
        let mut b = JointHistogram::new(2);
        b.accumulate(1, 9).unwrap();
        assert_eq!(a.clone().merged(&b).unwrap().total(), 2);
        assert!(a.merge(&JointHistogram::new(3)).is_err());
    }

    fn arb_hist() -> impl Strategy<Value = JointHistogram> {
        proptest::collection::vec((0usize..FOLDS, 0usize..4, 0u32..20), 0..60).prop_map(|v| {
            let mut h = JointHistogram::new(4);
            for (f, s, c) in v {
                h.accumulate_in_fold(f, s, c).unwrap();
            }
            h
        })
    }

    proptest! {
        #[test]
        fn merge_commutative_associative(a in arb_hist(), b in arb_hist(), c in arb_hist()) {
            prop_assert_eq!(a.clone().merged(&b).unwrap(), b.clone().merged(&a).unwrap());
            let left = a.clone().merged(&b).unwrap().merged(&c).unwrap();
            let right = a.clone().merged(&b.clone().merged(&c).unwrap()).unwrap();
            prop_assert_eq!(&left, &right);
            let total: u64 = a.total() + b.total() + c.total();
            prop_assert_eq!(left.total(), total);
        }

        #[test]
        fn mi_bounded_by_input_entropy(h in arb_hist()) {
            if let Ok(est) = mi_lower_bound(&h) {
                prop_assert!(est.bits >= 0.0 && est.bits <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn independent_output_gives_zero() {
        let mut h = JointHistogram::new(4);
        for cell in 0..5 {
            for s in 0..4 {
                for _ in 0..(cell + 1) * 10 {
                    h.accumulate(s, cell).unwrap();
                }
            }
        }
        assert!(mi_lower_bound(&h).unwrap().bits.abs() < 1e-12);
        assert!(matches!(
            mi_lower_bound(&JointHistogram::new(4)),
            Err(Error::EmptyHistogram)
        ));
    }

    #[test]
    fn bias_term_predicts_independent_plugin_value() {
        let mut rng = RngStream::new(9, 0).rng();
        let mut h = JointHistogram::new(4);
        for _ in 0..40_000 {
            h.accumulate(rng.random_range(0..4), rng.random_range(0..60))
                .unwrap();
        }
        let est = mi_lower_bound(&h).unwrap();
        // (60 - 1)(4 - 1) / (2 n ln 2)
        assert!((est.bias - 177.0 / (80_000.0 * LN_2)).abs() < 1e-12);
        assert!(
            (est.bits / est.bias - 1.0).abs() < 0.3,
            "{} vs {}",
            est.bits,
            est.bias
        );
    }

    #[test]
    fn adaptive_budget_controls_bias() {
        // sparse 16-QAM histograms: the plug-in value starts ~0.85 bits high
        let cfg = sim(1.0, ConstellationKind::Qam16, 20);
        let grid = default_grid(&cfg).unwrap();
        let r = rate_mrc_to_precision(&cfg, &grid, 0.05, 1 << 15).unwrap();
        assert!(r.frames < 1 << 15);
        let se = r.representative().stderr;
        assert!(se < 0.05 && r.bias[0] <= 0.025);
        let mut half = cfg.clone();
        half.frames = r.frames / 2;
        let earlier = rate_mrc(&half, &grid).unwrap().representative().rate;
        assert!((r.representative().rate - earlier).abs() <= 2.0 * se);
    }

    #[test]
    fn bijection_gives_input_entropy() {
        let mut h = JointHistogram::new(16);
        for _ in 0..20 {
            for s in 0..16 {
                h.accumulate(s, 100 + s as u32).unwrap();
            }
        }
        let est = mi_lower_bound(&h).unwrap();
        assert!((est.bits - 4.0).abs() < 1e-12);
    }

    #[test]
    fn synthetic_dmc_recovers_exact_mi() {
        let p = [
            [0.7, 0.1, 0.1, 0.1],
            [0.1, 0.6, 0.2, 0.1],
            [0.05, 0.15, 0.5, 0.3],
            [0.25, 0.25, 0.25, 0.25],
        ];
        // closed form with uniform inputs
        let mut exact = 0.0;
        for y in 0..4 {
            let py: f64 = (0..4).map(|x| p[x][y]).sum::<f64>() / 4.0;
            for row in &p {
                exact += 0.25 * row[y] * (row[y] / py).log2();
            }
        }
        let mut rng = RngStream::new(3, 0).rng();
        let mut h = JointHistogram::new(4);
        for _ in 0..200_000 {
            let x = rng.random_range(0..4);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut y = 3;
            for (j, &q) in p[x].iter().enumerate() {
                acc += q;
                if u < acc {
                    y = j;
                    break;
                }
            }
            h.accumulate(x, y as u32).unwrap();
        }
        let est = mi_lower_bound(&h).unwrap();
        assert!((est.bits - exact).abs() < 0.01, "{} vs {exact}", est.bits);
        assert!(est.stderr > 0.0 && est.stderr < 0.01);
    }

    fn sim(rho: f64, constellation: ConstellationKind, frames: usize) -> SimConfig {
        SimConfig {
            antennas: 16,
            users: 1,
            coherence_time: 40,
            pilots: 4,
            rho,
            constellation,
            correlation: CorrelationMode::Iid,
            csi: CsiMode::Estimated,
            frames,
            seed: 17,
        }
    }

    #[test]
    fn zero_snr_has_no_rate() {
        // At zero MI the plug-in bias and the fold spread both scale as 1/n with
        // ratio sqrt(df / 20), so the check needs an output that occupies few
        // cells: many antennas, few pilots and a coarse lattice.
        let mut cfg = sim(0.0, ConstellationKind::Qpsk, 400);
        cfg.antennas = 128;
        let grid = GridSpec::for_constellation(ConstellationKind::Qpsk, 0.0).unwrap();
        let r = rate_mrc(&cfg, &grid).unwrap();
        let u = r.representative();
        assert!(u.rate <= 2.0 * u.stderr, "{} ± {}", u.rate, u.stderr);
    }

    #[test]
    fn zero_snr_bias_decays_with_samples() {
        let cfg = sim(0.0, ConstellationKind::Qpsk, 200);
        let grid = default_grid(&cfg).unwrap();
        let small = rate_mrc(&cfg, &grid).unwrap().representative().rate;
        let mut big = cfg.clone();
        big.frames = 3200;
        let large = rate_mrc(&big, &grid).unwrap().representative().rate;
        assert!(large < small / 4.0, "{small} -> {large}");
    }

    #[test]
    fn insufficient_pilots_flagged() {
        let mut cfg = sim(1.0, ConstellationKind::Qpsk, 10);
        cfg.users = 20;
        cfg.pilots = 19;
        cfg.coherence_time = 100;
        let grid = GridSpec::new(0.1, 2.0).unwrap();
        let r = rate_mrc(&cfg, &grid).unwrap();
        assert!(r.insufficient_pilots);
        assert!(r.per_user.iter().all(|u| u.rate == 0.0));
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let cfg = sim(1.0, ConstellationKind::Qam16, 100);
        let grid = default_grid(&cfg).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| collect_histograms(&cfg, &grid, 0..100).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn finer_grid_does_not_lose_much() {
        let cfg = sim(1.0, ConstellationKind::Qpsk, 600);
        let coarse = GridSpec::new(0.2, 3.0).unwrap();
        let fine = GridSpec::new(0.1, 3.0).unwrap();
        let a = rate_mrc(&cfg, &coarse).unwrap();
        let b = rate_mrc(&cfg, &fine).unwrap();
        let (a, b) = (a.representative(), b.representative());
        assert!(
            b.rate >= a.rate - 2.0 * a.stderr.max(b.stderr),
            "{} vs {}",
            a.rate,
            b.rate
        );
    }

    #[test]
    fn adaptive_budget_extends_prefix() {
        let cfg = sim(1.0, ConstellationKind::Qpsk, 20);
        let grid = GridSpec::new(0.2, 3.0).unwrap();
        let r = rate_mrc_to_precision(&cfg, &grid, 1e-9, 80).unwrap();
        assert_eq!(r.frames, 80);
        let mut fixed = cfg.clone();
        fixed.frames = 80;
        assert_eq!(r, rate_mrc(&fixed, &grid).unwrap());
    }
}
