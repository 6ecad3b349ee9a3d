//! Channel, noise, quantizer and constellation primitives.
//!
//! The received block before quantization is `Y = X H + W` with `X` the T×K
//! inputs, `H` the K×N channel and `W` unit-variance complex Gaussian noise,
//! so the symbol power doubles as the SNR.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::complex_normal;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstellationKind {
    Bpsk,
    Qpsk,
    #[serde(rename = "16qam")]
    Qam16,
}

impl ConstellationKind {
    pub fn size(self) -> usize {
        match self {
            ConstellationKind::Bpsk => 2,
            ConstellationKind::Qpsk => 4,
            ConstellationKind::Qam16 => 16,
        }
    }

    pub fn bits(self) -> f64 {
        (self.size() as f64).log2()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstellationKind::Bpsk => "bpsk",
            ConstellationKind::Qpsk => "qpsk",
            ConstellationKind::Qam16 => "16qam",
        }
    }
}

impl fmt::Display for ConstellationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstellationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bpsk" => Ok(Self::Bpsk),
            "qpsk" => Ok(Self::Qpsk),
            "16qam" | "qam16" | "16-qam" => Ok(Self::Qam16),
            other => Err(Error::InvalidParameter(format!(
                "unknown constellation '{other}'"
            ))),
        }
    }
}

/// A finite symbol alphabet with uniform average power `power`.
#[derive(Clone, Debug, PartialEq)]
pub struct Constellation {
    kind: ConstellationKind,
    symbols: Vec<Complex64>,
    power: f64,
}

impl Constellation {
    /// Builds the alphabet of `kind` scaled to average power `rho`.
    ///
    /// BPSK is {±√ρ}, QPSK √(ρ/2)·{±1±j}, 16-QAM √(ρ/10)·{a+bj : a,b ∈ {±1,±3}}.
    pub fn new(kind: ConstellationKind, rho: f64) -> Result<Self> {
        if !rho.is_finite() || rho <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "constellation power must be positive and finite, got {rho}"
            )));
        }
        let symbols = match kind {
            ConstellationKind::Bpsk => {
                let a = rho.sqrt();
                vec![Complex64::new(a, 0.0), Complex64::new(-a, 0.0)]
            }
            ConstellationKind::Qpsk => {
                let a = (rho / 2.0).sqrt();
                vec![
                    Complex64::new(a, a),
                    Complex64::new(-a, a),
                    Complex64::new(-a, -a),
                    Complex64::new(a, -a),
                ]
            }
            ConstellationKind::Qam16 => {
                let a = (rho / 10.0).sqrt();
                let levels = [-3.0, -1.0, 1.0, 3.0];
                levels
                    .iter()
                    .flat_map(|&im| levels.iter().map(move |&re| Complex64::new(re * a, im * a)))
                    .collect()
            }
        };
        Ok(Self {
            kind,
            symbols,
            power: rho,
        })
    }

    /// The unit-power alphabet.
    pub fn unit(kind: ConstellationKind) -> Self {
        Self::new(kind, 1.0).expect("unit power is valid")
    }

    pub fn kind(&self) -> ConstellationKind {
        self.kind
    }

    pub fn symbols(&self) -> &[Complex64] {
        &self.symbols
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn min_distance(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.symbols.iter().enumerate() {
            for b in &self.symbols[i + 1..] {
                best = best.min((a - b).norm());
            }
        }
        best
    }

    /// Largest absolute real or imaginary coordinate.
    pub fn max_coordinate(&self) -> f64 {
        self.symbols
            .iter()
            .map(|s| s.re.abs().max(s.im.abs()))
            .fold(0.0, f64::max)
    }
}

/// Convenience wrapper over [`Constellation::new`].
pub fn constellation_symbols(kind: ConstellationKind, rho: f64) -> Result<Constellation> {
    Constellation::new(kind, rho)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorrelationMode {
    /// Independent CN(0,1) coefficient per user/antenna pair.
    Iid,
    /// One CN(0,1) coefficient per user, repeated across all antennas.
    #[serde(alias = "fully_correlated")]
    Full,
}

impl CorrelationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrelationMode::Iid => "iid",
            CorrelationMode::Full => "full",
        }
    }
}

impl FromStr for CorrelationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "iid" => Ok(Self::Iid),
            "full" | "fully_correlated" | "fully-correlated" => Ok(Self::Full),
            other => Err(Error::InvalidParameter(format!(
                "unknown correlation mode '{other}'"
            ))),
        }
    }
}

impl fmt::Display for CorrelationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// K×N channel: row k holds the coefficients from user k to every antenna.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMatrix {
    pub entries: Array2<Complex64>,
    pub mode: CorrelationMode,
}

impl ChannelMatrix {
    pub fn users(&self) -> usize {
        self.entries.nrows()
    }

    pub fn antennas(&self) -> usize {
        self.entries.ncols()
    }
}

pub fn draw_channel<R: Rng + ?Sized>(
    users: usize,
    antennas: usize,
    mode: CorrelationMode,
    rng: &mut R,
) -> Result<ChannelMatrix> {
    if users == 0 || antennas == 0 {
        return Err(Error::InvalidDimensions(format!(
            "channel needs K >= 1 and N >= 1, got K={users}, N={antennas}"
        )));
    }
    let entries = match mode {
        CorrelationMode::Iid => {
            Array2::from_shape_simple_fn((users, antennas), || complex_normal(rng))
        }
        CorrelationMode::Full => {
            let mut h = Array2::zeros((users, antennas));
            for mut row in h.rows_mut() {
                row.fill(complex_normal(rng));
            }
            h
        }
    };
    Ok(ChannelMatrix { entries, mode })
}

/// T×N one-bit ADC outputs; every entry lies in {±1 ± j}.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizedMatrix(pub Array2<Complex64>);

impl QuantizedMatrix {
    pub fn entries(&self) -> &Array2<Complex64> {
        &self.0
    }
}

/// Sign with the convention sign(0) = +1.
#[inline]
pub fn one_bit(x: f64) -> f64 {
    if x < 0.0 {
        -1.0
    } else {
        1.0
    }
}

#[inline]
pub fn quantize_sample(y: Complex64) -> Complex64 {
    Complex64::new(one_bit(y.re), one_bit(y.im))
}

/// Applies the in-phase and quadrature one-bit ADCs elementwise.
pub fn quantize_one_bit(y: &Array2<Complex64>) -> QuantizedMatrix {
    QuantizedMatrix(y.mapv(quantize_sample))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::RngStream;
    use approx::assert_relative_eq;
    use ndarray::array;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn quantizer_signs() {
        let y = array![
            [c(0.5, -0.3), c(0.0, 0.0)],
            [c(-2.0, 1e-300), c(-0.0, -7.0)]
        ];
        let r = quantize_one_bit(&y);
        assert_eq!(
            r.0,
            array![[c(1.0, -1.0), c(1.0, 1.0)], [c(-1.0, 1.0), c(1.0, -1.0)]]
        );
    }

    proptest! {
        #[test]
        fn quantizer_is_idempotent_onto_r(re in -1e3f64..1e3, im in -1e3f64..1e3) {
            let y = array![[c(re, im)]];
            let r = quantize_one_bit(&y);
            let rr = quantize_one_bit(&r.0);
            prop_assert_eq!(&r, &rr);
            let v = r.0[[0, 0]];
            prop_assert!(v.re.abs() == 1.0 && v.im.abs() == 1.0);
            prop_assert_eq!(v.norm_sqr(), 2.0);
        }
    }

    #[test]
    fn constellation_scaling() {
        let q = Constellation::new(ConstellationKind::Qpsk, 2.0).unwrap();
        assert_eq!(
            q.symbols(),
            &[c(1.0, 1.0), c(-1.0, 1.0), c(-1.0, -1.0), c(1.0, -1.0)]
        );

        let qam = Constellation::new(ConstellationKind::Qam16, 10.0).unwrap();
        for s in qam.symbols() {
            assert!([-3.0, -1.0, 1.0, 3.0].contains(&s.re));
            assert!([-3.0, -1.0, 1.0, 3.0].contains(&s.im));
        }
        let p: f64 = qam.symbols().iter().map(|s| s.norm_sqr()).sum::<f64>() / 16.0;
        assert_relative_eq!(p, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn constellation_rejects_degenerate_power() {
        assert!(Constellation::new(ConstellationKind::Bpsk, 0.0).is_err());
        assert!(Constellation::new(ConstellationKind::Qpsk, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn constellation_invariants(rho in 1e-6f64..1e6, k in 0usize..3) {
            let kind = [ConstellationKind::Bpsk, ConstellationKind::Qpsk, ConstellationKind::Qam16][k];
            let cst = Constellation::new(kind, rho).unwrap();
            prop_assert_eq!(cst.len(), kind.size());
            let p = cst.symbols().iter().map(|s| s.norm_sqr()).sum::<f64>() / cst.len() as f64;
            prop_assert!((p - rho).abs() <= 1e-12 * rho.max(1.0));
            prop_assert!(cst.min_distance() > 0.0);
        }
    }

    #[test]
    fn channel_rejects_empty() {
        let mut rng = RngStream::new(0, 0).rng();
        assert!(draw_channel(0, 4, CorrelationMode::Iid, &mut rng).is_err());
        assert!(draw_channel(2, 0, CorrelationMode::Iid, &mut rng).is_err());
    }

    #[test]
    fn fully_correlated_rows_are_constant() {
        let mut rng = RngStream::new(5, 0).rng();
        let h = draw_channel(2, 4, CorrelationMode::Full, &mut rng).unwrap();
        for row in h.entries.rows() {
            assert!(row.iter().all(|&v| v == row[0]));
        }
        assert_ne!(h.entries[[0, 0]], h.entries[[1, 0]]);
    }

    #[test]
    fn scalar_channel_unit_variance() {
        let mut rng = RngStream::new(9, 0).rng();
        let n = 1_000_000;
        let mut p = 0.0;
        for _ in 0..n {
            p += draw_channel(1, 1, CorrelationMode::Iid, &mut rng)
                .unwrap()
                .entries[[0, 0]]
            .norm_sqr();
        }
        assert!((p / n as f64 - 1.0).abs() < 0.01);
    }

    #[test]
    fn channel_reproducible() {
        let a = draw_channel(3, 5, CorrelationMode::Iid, &mut RngStream::new(1, 2).rng()).unwrap();
        let b = draw_channel(3, 5, CorrelationMode::Iid, &mut RngStream::new(1, 2).rng()).unwrap();
        assert_eq!(a, b);
    }
}
