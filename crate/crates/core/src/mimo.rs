//! Monte-Carlo multiuser uplink with one-bit ADCs.
//!
//! One coherence block (a frame) is simulated end to end: round-robin pilots
//! followed by uniformly drawn data symbols, `R = Q(X H + W)`, a per-user LS
//! channel estimate from the pilot rows, and maximum-ratio combining of the
//! data rows. Every frame draws from its own random stream
//! `(seed, frame index)`, so any set of frames can be simulated in any order
//! or on any number of threads with identical results.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{draw_channel, quantize_one_bit, ChannelMatrix, QuantizedMatrix};
use crate::rng::{complex_normal, RngStream};
use crate::{Constellation, ConstellationKind, CorrelationMode, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsiMode {
    /// LS estimate from the pilot rows.
    Estimated,
    /// The receiver is handed the true channel; no pilots are sent.
    Perfect,
}

impl CsiMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CsiMode::Estimated => "estimated",
            CsiMode::Perfect => "perfect",
        }
    }
}

impl fmt::Display for CsiMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CsiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "estimated" => Ok(Self::Estimated),
            "perfect" => Ok(Self::Perfect),
            other => Err(Error::InvalidParameter(format!(
                "unknown CSI mode '{other}'"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub antennas: usize,
    pub users: usize,
    pub coherence_time: usize,
    /// Total pilot slots per block, shared round-robin by the users.
    pub pilots: usize,
    /// Linear SNR (per-symbol transmit power; noise variance is 1).
    pub rho: f64,
    pub constellation: ConstellationKind,
    pub correlation: CorrelationMode,
    pub csi: CsiMode,
    pub frames: usize,
    pub seed: u64,
}

impl SimConfig {
    /// Pilot slots actually transmitted: zero under perfect CSI.
    pub fn effective_pilots(&self) -> usize {
        match self.csi {
            CsiMode::Estimated => self.pilots,
            CsiMode::Perfect => 0,
        }
    }

    pub fn data_slots(&self) -> usize {
        self.coherence_time - self.effective_pilots()
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.users == 0 || self.coherence_time == 0 {
            return Err(Error::InvalidDimensions(format!(
                "need N, K, T >= 1, got N={}, K={}, T={}",
                self.antennas, self.users, self.coherence_time
            )));
        }
        if !self.rho.is_finite() || self.rho < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "SNR must be finite and >= 0, got {}",
                self.rho
            )));
        }
        if self.csi == CsiMode::Estimated {
            if self.pilots > self.coherence_time {
                return Err(Error::InvalidParameter(format!(
                    "pilot count {} exceeds coherence time {}",
                    self.pilots, self.coherence_time
                )));
            }
            if self.pilots < self.users || !self.pilots.is_multiple_of(self.users) {
                return Err(Error::InsufficientPilots {
                    pilots: self.pilots,
                    users: self.users,
                });
            }
        }
        if self.data_slots() == 0 {
            return Err(Error::InvalidParameter(
                "no data slots left after pilots".into(),
            ));
        }
        Ok(())
    }
}

/// Round-robin pilot assignment: user k (0-based) owns slots
/// `k·P/K .. (k+1)·P/K` and sends the constant pilot √ρ·(1+j)/√2 in them.
#[derive(Clone, Debug, PartialEq)]
pub struct PilotSchedule {
    users: usize,
    per_user: usize,
    rho: f64,
}

impl PilotSchedule {
    pub fn users(&self) -> usize {
        self.users
    }

    pub fn pilots_per_user(&self) -> usize {
        self.per_user
    }

    pub fn total_pilots(&self) -> usize {
        self.users * self.per_user
    }

    pub fn slots(&self, user: usize) -> Range<usize> {
        user * self.per_user..(user + 1) * self.per_user
    }

    /// The user transmitting in pilot slot `slot`.
    pub fn user_at(&self, slot: usize) -> Option<usize> {
        (slot < self.total_pilots()).then(|| slot / self.per_user)
    }

    /// Unit-modulus pilot phase.
    pub fn pilot_phase(&self) -> Complex64 {
        Complex64::new(1.0, 1.0) * std::f64::consts::FRAC_1_SQRT_2
    }

    pub fn pilot_symbol(&self) -> Complex64 {
        self.pilot_phase() * self.rho.sqrt()
    }
}

pub fn build_pilot_schedule(users: usize, pilots: usize, rho: f64) -> Result<PilotSchedule> {
    if users == 0 {
        return Err(Error::InvalidDimensions("need at least one user".into()));
    }
    if pilots < users || !pilots.is_multiple_of(users) {
        return Err(Error::InsufficientPilots { pilots, users });
    }
    Ok(PilotSchedule {
        users,
        per_user: pilots / users,
        rho,
    })
}

/// Per-user LS estimate from the quantized pilot rows (P×N):
/// ĥ_k = (1/(P_k√ρ)) Σ_{t ∈ slots(k)} conj(x_t) r_t.
///
/// With x_t = √ρ·u for a unit-modulus u the √ρ cancels, which keeps the
/// estimate defined at ρ = 0.
pub fn ls_estimate(
    r_pilot: ArrayView2<Complex64>,
    schedule: &PilotSchedule,
) -> Result<Array2<Complex64>> {
    if r_pilot.nrows() != schedule.total_pilots() {
        return Err(Error::InvalidDimensions(format!(
            "{} pilot rows received, schedule has {}",
            r_pilot.nrows(),
            schedule.total_pilots()
        )));
    }
    let n = r_pilot.ncols();
    let u_conj = schedule.pilot_phase().conj();
    let scale = 1.0 / schedule.per_user as f64;
    let mut est = Array2::zeros((schedule.users, n));
    for k in 0..schedule.users {
        let mut row = est.row_mut(k);
        for t in schedule.slots(k) {
            row.scaled_add(u_conj * scale, &r_pilot.row(t));
        }
    }
    Ok(est)
}

/// MRC output for one user: x̃_t = ĥᴴ r_t / ‖ĥ‖² for every data row.
pub fn mrc_combine_user(
    r_data: ArrayView2<Complex64>,
    h_hat: ArrayView1<Complex64>,
) -> Option<Vec<Complex64>> {
    let energy: f64 = h_hat.iter().map(|v| v.norm_sqr()).sum();
    if energy == 0.0 {
        return None;
    }
    Some(
        r_data
            .rows()
            .into_iter()
            .map(|r| {
                r.iter()
                    .zip(h_hat.iter())
                    .map(|(r, h)| h.conj() * r)
                    .sum::<Complex64>()
                    / energy
            })
            .collect(),
    )
}

/// MRC outputs for all users, (T−P)×K.
pub fn mrc_combine(
    r_data: ArrayView2<Complex64>,
    h_hat: ArrayView2<Complex64>,
) -> Result<Array2<Complex64>> {
    if r_data.ncols() != h_hat.ncols() {
        return Err(Error::InvalidDimensions(format!(
            "{} antennas in the data rows, {} in the estimate",
            r_data.ncols(),
            h_hat.ncols()
        )));
    }
    let mut out = Array2::zeros((r_data.nrows(), h_hat.nrows()));
    for (k, row) in h_hat.rows().into_iter().enumerate() {
        let x = mrc_combine_user(r_data, row).ok_or(Error::DegenerateEstimate { user: k })?;
        out.column_mut(k).assign(&ArrayView1::from(&x[..]));
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct UplinkFrame {
    /// T×K channel inputs.
    pub x: Array2<Complex64>,
    /// (T−P)×K indices of the data symbols into the unit constellation.
    pub data_symbols: Array2<usize>,
    pub h: ChannelMatrix,
    pub r: QuantizedMatrix,
    /// K×N channel estimate (the true channel under perfect CSI).
    pub h_hat: Array2<Complex64>,
    /// (T−P)×K MRC outputs.
    pub combined: Array2<Complex64>,
    /// Users whose estimate was identically zero. Their outputs are set to 0:
    /// a zero estimate is invariant under rotating the channel by j, so the
    /// data are independent of r given it and no information is lost.
    pub erased: Vec<bool>,
}

/// Simulates frame `frame` of `config` on stream `(config.seed, frame)`.
pub fn simulate_frame(config: &SimConfig, frame: u64) -> Result<UplinkFrame> {
    config.validate()?;
    let mut rng = RngStream::new(config.seed, frame).rng();
    simulate_frame_with(config, &mut rng)
}

pub fn simulate_frame_with<R: Rng + ?Sized>(
    config: &SimConfig,
    rng: &mut R,
) -> Result<UplinkFrame> {
    let (n, k, t) = (config.antennas, config.users, config.coherence_time);
    let p = config.effective_pilots();
    let unit = Constellation::unit(config.constellation);
    let amp = config.rho.sqrt();

    let h = draw_channel(k, n, config.correlation, rng)?;

    let mut x = Array2::zeros((t, k));
    let schedule = match config.csi {
        CsiMode::Estimated => {
            let sched = build_pilot_schedule(k, p, config.rho)?;
            for user in 0..k {
                for slot in sched.slots(user) {
                    x[[slot, user]] = sched.pilot_symbol();
                }
            }
            Some(sched)
        }
        CsiMode::Perfect => None,
    };
    let data_symbols = Array2::from_shape_simple_fn((t - p, k), || rng.random_range(0..unit.len()));
    for ((i, user), &idx) in data_symbols.indexed_iter() {
        x[[p + i, user]] = unit.symbols()[idx] * amp;
    }

    let mut y = Array2::from_shape_simple_fn((t, n), || complex_normal(rng));
    for ti in 0..t {
        for user in 0..k {
            let xv = x[[ti, user]];
            if xv != Complex64::new(0.0, 0.0) {
                y.row_mut(ti).scaled_add(xv, &h.entries.row(user));
            }
        }
    }
    let r = quantize_one_bit(&y);

    let h_hat = match &schedule {
        Some(sched) => ls_estimate(r.0.slice(s![..p, ..]), sched)?,
        None => h.entries.clone(),
    };

    let r_data = r.0.slice(s![p.., ..]);
    let mut combined = Array2::zeros((t - p, k));
    let mut erased = vec![false; k];
    for (user, gone) in erased.iter_mut().enumerate() {
        match mrc_combine_user(r_data, h_hat.row(user)) {
            Some(v) => combined.column_mut(user).assign(&ArrayView1::from(&v[..])),
            None => *gone = true,
        }
    }

    Ok(UplinkFrame {
        x,
        data_symbols,
        h,
        r,
        h_hat,
        combined,
        erased,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScatterPoint {
    pub frame: u64,
    pub user: usize,
    pub symbol_index: usize,
    /// Transmitted symbol, unit-power scale.
    pub symbol: Complex64,
    pub combined: Complex64,
}

/// MRC outputs of frames `0..frames` paired with the transmitted symbols.
pub fn constellation_dump(config: &SimConfig, frames: usize) -> Result<Vec<ScatterPoint>> {
    config.validate()?;
    let unit = Constellation::unit(config.constellation);
    let per_frame: Vec<Vec<ScatterPoint>> = (0..frames as u64)
        .into_par_iter()
        .map(|f| {
            let frame = simulate_frame(config, f)?;
            let mut pts = Vec::with_capacity(frame.combined.len());
            for ((i, user), &idx) in frame.data_symbols.indexed_iter() {
                pts.push(ScatterPoint {
                    frame: f,
                    user,
                    symbol_index: idx,
                    symbol: unit.symbols()[idx],
                    combined: frame.combined[[i, user]],
                });
            }
            Ok(pts)
        })
        .collect::<Result<_>>()?;
    Ok(per_frame.into_iter().flatten().collect())
}
