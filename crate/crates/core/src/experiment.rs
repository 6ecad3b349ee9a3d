//! Figure-style parameter sweeps and their CSV output.
//!
//! Every sweep point produces one [`ResultRow`] per curve. The `experiment`
//! column reads `<id>/<curve>`, e.g. `rate-vs-snr/mrc-popt-cap10k`.

use std::fmt;
use std::fs::File;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::mi::{default_grid, rate_mrc, rate_mrc_to_precision, GridSpec, MrcRate};
use crate::mimo::{constellation_dump, CsiMode, SimConfig};
use crate::siso;
use crate::{db_to_linear, ConstellationKind, CorrelationMode, Error, PsiEvaluator, Result};

/// CSV header of [`emit_csv`].
pub const CSV_HEADER: [&str; 13] = [
    "experiment",
    "constellation",
    "N",
    "K",
    "T",
    "P",
    "snr_db",
    "csi_mode",
    "rate_bits",
    "stderr",
    "frames",
    "seed",
    "walltime_s",
];

/// CSV header of [`emit_scatter_csv`].
pub const SCATTER_HEADER: [&str; 15] = [
    "experiment",
    "constellation",
    "N",
    "K",
    "T",
    "P",
    "snr_db",
    "correlation",
    "frame",
    "user",
    "symbol_index",
    "symbol_re",
    "symbol_im",
    "xt_re",
    "xt_im",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    /// Single-antenna capacity, pilot bound and perfect-CSI rate against T.
    SisoRateVsT,
    RateVsSnr,
    RateVsT,
    RateVsN,
    /// MRC output scatter of 16-QAM symbols.
    Constellation,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 5] = [
        ExperimentKind::SisoRateVsT,
        ExperimentKind::RateVsSnr,
        ExperimentKind::RateVsT,
        ExperimentKind::RateVsN,
        ExperimentKind::Constellation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::SisoRateVsT => "siso-rate-vs-T",
            ExperimentKind::RateVsSnr => "rate-vs-snr",
            ExperimentKind::RateVsT => "rate-vs-T",
            ExperimentKind::RateVsN => "rate-vs-N",
            ExperimentKind::Constellation => "constellation",
        }
    }

    /// Name of the swept parameter.
    pub fn axis(self) -> &'static str {
        match self {
            ExperimentKind::SisoRateVsT | ExperimentKind::RateVsT => "T",
            ExperimentKind::RateVsSnr => "snr_db",
            ExperimentKind::RateVsN | ExperimentKind::Constellation => "N",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidExperiment(format!("unknown experiment '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Reduced array and block length; finishes on a workstation.
    Desk,
    /// Array size and block length of the published figures.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            other => Err(Error::InvalidExperiment(format!(
                "unknown preset '{other}'"
            ))),
        }
    }
}

/// How the pilot count of each Monte-Carlo point is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PilotChoice {
    Fixed(usize),
    /// Search multiples of K up to `cap`, or min(T−1, 10K) when `None`.
    Optimize {
        cap: Option<usize>,
    },
}

/// Monte-Carlo budget of one rate evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct McBudget {
    /// Frames of the first pass, also used for every pilot-search candidate.
    pub frames: usize,
    /// Keep doubling frames until the standard error drops below this and
    /// the plug-in bias estimate below half of it.
    pub target_stderr: Option<f64>,
    /// Frame cap at the spec's coherence time; scaled up for shorter blocks.
    pub max_frames: usize,
}

impl McBudget {
    pub fn fixed(frames: usize) -> Self {
        Self {
            frames,
            target_stderr: None,
            max_frames: frames,
        }
    }
}

/// One scatter panel of the constellation experiment.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Panel {
    pub antennas: usize,
    pub snr_db: f64,
    pub correlation: CorrelationMode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub kind: ExperimentKind,
    /// Sweep axis values (see [`ExperimentKind::axis`]).
    pub values: Vec<f64>,
    pub antennas: usize,
    pub users: Vec<usize>,
    pub coherence_time: usize,
    pub snr_db: f64,
    pub constellations: Vec<ConstellationKind>,
    pub csi: CsiMode,
    pub correlation: CorrelationMode,
    pub pilots: PilotChoice,
    pub budget: McBudget,
    /// Explicit (spacing, half-extent); otherwise calibrated per point.
    pub grid: Option<(f64, f64)>,
    pub seed: u64,
    /// Extra panels of the constellation experiment; empty means one panel
    /// per swept N at `snr_db` and `correlation`.
    pub panels: Vec<Panel>,
    /// Frames dumped per scatter panel.
    pub scatter_frames: usize,
}

fn log_spaced(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| {
            (lo.ln() + (hi / lo).ln() * i as f64 / (n - 1) as f64)
                .exp()
                .round()
        })
        .collect()
}

impl ExperimentSpec {
    /// Default spec of `kind` at the given scale.
    pub fn preset(kind: ExperimentKind, preset: Preset) -> Self {
        let paper = preset == Preset::Paper;
        let (antennas, coherence_time) = if paper { (400, 1000) } else { (128, 200) };
        let budget = McBudget {
            frames: if paper { 100 } else { 50 },
            target_stderr: Some(0.02),
            max_frames: if paper { 6400 } else { 1600 },
        };
        let base = Self {
            kind,
            values: Vec::new(),
            antennas,
            users: vec![1],
            coherence_time,
            snr_db: -10.0,
            constellations: vec![ConstellationKind::Qpsk, ConstellationKind::Qam16],
            csi: CsiMode::Estimated,
            correlation: CorrelationMode::Iid,
            pilots: PilotChoice::Optimize { cap: None },
            budget,
            grid: None,
            seed: 0,
            panels: Vec::new(),
            scatter_frames: 4,
        };
        match kind {
            ExperimentKind::SisoRateVsT => {
                let mut values = log_spaced(2.0, 1000.0, if paper { 40 } else { 14 });
                values.dedup();
                Self {
                    values,
                    antennas: 1,
                    snr_db: 10.0,
                    constellations: vec![ConstellationKind::Qpsk],
                    budget: McBudget::fixed(if paper { 1_000_000 } else { 100_000 }),
                    ..base
                }
            }
            ExperimentKind::RateVsSnr => Self {
                values: (-4..=4).map(|i| 5.0 * i as f64).collect(),
                users: if paper { vec![1, 20] } else { vec![1, 4] },
                snr_db: 0.0,
                ..base
            },
            ExperimentKind::RateVsT => Self {
                values: if paper {
                    vec![
                        10.0, 20.0, 21.0, 25.0, 30.0, 40.0, 50.0, 75.0, 100.0, 200.0, 300.0, 500.0,
                        750.0, 1000.0,
                    ]
                } else {
                    vec![10.0, 20.0, 21.0, 30.0, 50.0, 100.0, 200.0]
                },
                users: vec![20],
                ..base
            },
            ExperimentKind::RateVsN => Self {
                values: if paper {
                    vec![25.0, 50.0, 100.0, 200.0, 400.0, 800.0]
                } else {
                    vec![16.0, 32.0, 64.0, 128.0]
                },
                users: vec![if paper { 20 } else { 4 }],
                ..base
            },
            ExperimentKind::Constellation => Self {
                values: Vec::new(),
                constellations: vec![ConstellationKind::Qam16],
                pilots: PilotChoice::Fixed(20),
                budget: McBudget::fixed(if paper { 400 } else { 100 }),
                panels: vec![
                    Panel {
                        antennas: if paper { 40 } else { 16 },
                        snr_db: 0.0,
                        correlation: CorrelationMode::Iid,
                    },
                    Panel {
                        antennas,
                        snr_db: 0.0,
                        correlation: CorrelationMode::Iid,
                    },
                    Panel {
                        antennas,
                        snr_db: 20.0,
                        correlation: CorrelationMode::Iid,
                    },
                    Panel {
                        antennas,
                        snr_db: 20.0,
                        correlation: CorrelationMode::Full,
                    },
                ],
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidExperiment(m));
        if self.values.is_empty()
            && !(self.kind == ExperimentKind::Constellation && !self.panels.is_empty())
        {
            return bad(format!("{}: empty sweep", self.kind));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return bad(format!("{}: non-finite sweep value", self.kind));
        }
        if self.kind != ExperimentKind::RateVsSnr
            && self.values.iter().any(|v| *v < 1.0 || v.fract() != 0.0)
        {
            return bad(format!(
                "{}: {} values must be positive integers",
                self.kind,
                self.kind.axis()
            ));
        }
        if self.budget.frames == 0 || self.budget.max_frames < self.budget.frames {
            return bad("Monte-Carlo budget needs 1 <= frames <= max_frames".into());
        }
        if self.users.is_empty() || self.users.contains(&0) {
            return bad("need at least one user count, each >= 1".into());
        }
        if self.constellations.is_empty() {
            return bad("need at least one constellation".into());
        }
        if !self.snr_db.is_finite() {
            return bad("SNR must be finite".into());
        }
        if let Some((d, l)) = self.grid {
            GridSpec::new(d, l)?;
        }
        Ok(())
    }

    fn sorted_values(&self) -> Vec<f64> {
        let mut v = self.values.clone();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub constellation: String,
    #[serde(rename = "N")]
    pub antennas: usize,
    #[serde(rename = "K")]
    pub users: usize,
    #[serde(rename = "T")]
    pub coherence_time: usize,
    #[serde(rename = "P")]
    pub pilots: usize,
    pub snr_db: f64,
    pub csi_mode: String,
    pub rate_bits: f64,
    pub stderr: f64,
    pub frames: u64,
    pub seed: u64,
    pub walltime_s: f64,
}

impl ResultRow {
    fn sort_key(&self) -> (&str, &str, &str, usize, usize, usize, f64) {
        (
            &self.experiment,
            &self.constellation,
            &self.csi_mode,
            self.users,
            self.antennas,
            self.coherence_time,
            self.snr_db,
        )
    }
}

/// Canonical row order: curve, then sweep value.
pub fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| {
        let (ka, kb) = (a.sort_key(), b.sort_key());
        ka.0.cmp(kb.0)
            .then(ka.1.cmp(kb.1))
            .then(ka.2.cmp(kb.2))
            .then(ka.3.cmp(&kb.3))
            .then(ka.4.cmp(&kb.4))
            .then(ka.5.cmp(&kb.5))
            .then(ka.6.total_cmp(&kb.6))
            .then(a.pilots.cmp(&b.pilots))
    });
}

/// Scatter rows of the constellation experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ScatterRow {
    pub experiment: String,
    pub constellation: String,
    pub antennas: usize,
    pub users: usize,
    pub coherence_time: usize,
    pub pilots: usize,
    pub snr_db: f64,
    pub correlation: String,
    pub frame: u64,
    pub user: usize,
    pub symbol_index: usize,
    pub symbol: crate::Complex64,
    pub combined: crate::Complex64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ExperimentOutput {
    pub rows: Vec<ResultRow>,
    pub scatter: Vec<ScatterRow>,
}

/// Pilot counts tried for K users and block length T: multiples of K up to
/// the cap, log-spaced, with both endpoints. Empty when not even K pilots
/// fit.
pub fn pilot_candidates(users: usize, coherence_time: usize, cap: Option<usize>) -> Vec<usize> {
    let limit = cap
        .unwrap_or(10 * users)
        .min(coherence_time.saturating_sub(1));
    let top = limit / users;
    if top == 0 {
        return Vec::new();
    }
    let mut mults: Vec<usize> = if top <= 8 {
        (1..=top).collect()
    } else {
        log_spaced(1.0, top as f64, 8)
            .into_iter()
            .map(|m| m as usize)
            .collect()
    };
    mults.dedup();
    mults.into_iter().map(|m| m * users).collect()
}

fn cap_label(pilots: PilotChoice) -> String {
    match pilots {
        PilotChoice::Fixed(_) => "mrc".into(),
        PilotChoice::Optimize { cap: None } => "mrc-popt-cap10k".into(),
        PilotChoice::Optimize { cap: Some(c) } => format!("mrc-popt-cap{c}"),
    }
}

/// Salt separating pilot-search streams from the final run's streams.
const SEARCH_SALT: u64 = 0x7069_6c6f_7473_6561;

struct McPoint {
    config: SimConfig,
    rate: MrcRate,
}

fn grid_for(spec: &ExperimentSpec, config: &SimConfig) -> Result<GridSpec> {
    match spec.grid {
        Some((d, l)) => GridSpec::new(d, l),
        None => default_grid(config),
    }
}

fn measure(spec: &ExperimentSpec, config: &SimConfig) -> Result<MrcRate> {
    let grid = grid_for(spec, config)?;
    match spec.budget.target_stderr {
        Some(target) => {
            // the cap is stated at the spec's block length; shorter blocks get
            // proportionally more frames so the data-sample ceiling is the same
            let scale = spec
                .coherence_time
                .div_ceil(config.coherence_time.max(1))
                .max(1);
            rate_mrc_to_precision(config, &grid, target, spec.budget.max_frames * scale)
        }
        None => rate_mrc(config, &grid),
    }
}

/// Runs one Monte-Carlo point, searching the pilot count if asked.
fn mc_point(spec: &ExperimentSpec, mut config: SimConfig) -> Result<McPoint> {
    config.frames = spec.budget.frames;
    if config.csi == CsiMode::Perfect {
        config.pilots = 0;
        let rate = measure(spec, &config)?;
        return Ok(McPoint { config, rate });
    }
    match spec.pilots {
        PilotChoice::Fixed(p) => config.pilots = p,
        PilotChoice::Optimize { cap } => {
            let candidates = pilot_candidates(config.users, config.coherence_time, cap);
            if candidates.is_empty() {
                // no admissible pilot count: rate 0 with the insufficient flag
                config.pilots = config.users.saturating_sub(1).min(config.coherence_time);
                let rate = rate_mrc(&config, &GridSpec::new(1.0, 1.0)?)?;
                return Ok(McPoint { config, rate });
            }
            let scored = candidates
                .par_iter()
                .map(|&p| {
                    let mut c = config.clone();
                    c.pilots = p;
                    c.seed = config.seed ^ SEARCH_SALT;
                    let grid = grid_for(spec, &c)?;
                    let r = rate_mrc(&c, &grid)?;
                    // rank on the rate less its plug-in bias, which grows with P
                    Ok((p, r.representative().rate - r.bias[0]))
                })
                .collect::<Result<Vec<_>>>()?;
            // ties go to fewer pilots
            let best = scored.iter().fold(
                scored[0],
                |best, &(p, r)| if r > best.1 { (p, r) } else { best },
            );
            config.pilots = best.0;
        }
    }
    let rate = measure(spec, &config)?;
    Ok(McPoint { config, rate })
}

fn mc_row(
    spec: &ExperimentSpec,
    curve: &str,
    point: &McPoint,
    snr_db: f64,
    started: Instant,
) -> ResultRow {
    let r = point.rate.representative();
    ResultRow {
        experiment: format!("{}/{}", spec.kind, curve),
        constellation: point.config.constellation.to_string(),
        antennas: point.config.antennas,
        users: point.config.users,
        coherence_time: point.config.coherence_time,
        pilots: point.config.pilots,
        snr_db,
        csi_mode: point.config.csi.to_string(),
        rate_bits: r.rate,
        stderr: if point.rate.insufficient_pilots {
            0.0
        } else {
            r.stderr
        },
        frames: point.rate.frames as u64,
        seed: point.config.seed,
        walltime_s: started.elapsed().as_secs_f64(),
    }
}

/// One Monte-Carlo rate for `config`, with the pilot count, budget and grid
/// taken from `spec`; the row is labelled `<label>/<curve>`. `snr_db` is
/// only recorded (the simulation uses `config.rho`).
pub fn run_point(
    spec: &ExperimentSpec,
    config: SimConfig,
    snr_db: f64,
    label: &str,
) -> Result<(ResultRow, MrcRate)> {
    if let Some((d, l)) = spec.grid {
        GridSpec::new(d, l)?;
    }
    let started = Instant::now();
    let point = mc_point(spec, config)?;
    let curve = match point.config.csi {
        CsiMode::Perfect => "perfect-csi".to_string(),
        CsiMode::Estimated => cap_label(spec.pilots),
    };
    let mut row = mc_row(spec, &curve, &point, snr_db, started);
    row.experiment = format!("{label}/{curve}");
    Ok((row, point.rate))
}

/// One unit of work: a sweep value crossed with every curve parameter.
#[derive(Clone, Debug)]
struct Job {
    value: f64,
    users: usize,
    constellation: ConstellationKind,
    csi: CsiMode,
    panel: Option<Panel>,
}

fn jobs(spec: &ExperimentSpec) -> Vec<Job> {
    let mut out = Vec::new();
    let mut csis = vec![spec.csi];
    if spec.kind == ExperimentKind::RateVsT && spec.csi == CsiMode::Estimated {
        csis.push(CsiMode::Perfect);
    }
    match spec.kind {
        ExperimentKind::SisoRateVsT => {
            for &value in &spec.sorted_values() {
                out.push(Job {
                    value,
                    users: 1,
                    constellation: ConstellationKind::Qpsk,
                    csi: spec.csi,
                    panel: None,
                });
            }
        }
        ExperimentKind::Constellation => {
            let mut panels = spec.panels.clone();
            for &n in &spec.sorted_values() {
                panels.push(Panel {
                    antennas: n as usize,
                    snr_db: spec.snr_db,
                    correlation: spec.correlation,
                });
            }
            for panel in panels {
                for &c in &spec.constellations {
                    for &k in &spec.users {
                        out.push(Job {
                            value: panel.antennas as f64,
                            users: k,
                            constellation: c,
                            csi: spec.csi,
                            panel: Some(panel),
                        });
                    }
                }
            }
        }
        _ => {
            for &value in &spec.sorted_values() {
                for &c in &spec.constellations {
                    for &k in &spec.users {
                        for &csi in &csis {
                            out.push(Job {
                                value,
                                users: k,
                                constellation: c,
                                csi,
                                panel: None,
                            });
                        }
                    }
                }
            }
        }
    }
    out
}

fn siso_rows(spec: &ExperimentSpec, t: usize) -> Result<Vec<ResultRow>> {
    let started = Instant::now();
    let rho = db_to_linear(spec.snr_db);
    let row =
        |curve: &str, p: usize, rate: f64, stderr: f64, frames: u64, csi: CsiMode| ResultRow {
            experiment: format!("{}/{}", spec.kind, curve),
            constellation: ConstellationKind::Qpsk.to_string(),
            antennas: 1,
            users: 1,
            coherence_time: t,
            pilots: p,
            snr_db: spec.snr_db,
            csi_mode: csi.to_string(),
            rate_bits: rate,
            stderr,
            frames,
            seed: if frames > 0 { spec.seed } else { 0 },
            walltime_s: started.elapsed().as_secs_f64(),
        };
    let psi = PsiEvaluator::with_table(rho, t)?;
    let qpsk = siso::rate_qpsk_with(&psi, t)?;
    let capacity = siso::capacity_siso(rho, t)?;
    let (p_star, bound) = siso::optimize_pilots_with(&psi, t)?;
    let perfect = siso::perfect_csi_rate_siso(rho, spec.budget.frames, spec.seed)?;
    Ok(vec![
        row("capacity", 0, capacity.rate, 0.0, 0, CsiMode::Estimated),
        row("qpsk", 0, qpsk.rate, 0.0, 0, CsiMode::Estimated),
        row(
            "pilot-bound",
            p_star,
            bound.rate,
            0.0,
            0,
            CsiMode::Estimated,
        ),
        row(
            "perfect-csi",
            0,
            perfect.rate,
            perfect.stderr,
            spec.budget.frames as u64,
            CsiMode::Perfect,
        ),
    ])
}

fn run_job(spec: &ExperimentSpec, job: &Job) -> Result<(Vec<ResultRow>, Vec<ScatterRow>)> {
    let started = Instant::now();
    if spec.kind == ExperimentKind::SisoRateVsT {
        return Ok((siso_rows(spec, job.value as usize)?, Vec::new()));
    }
    let (antennas, coherence_time, snr_db, correlation) = match spec.kind {
        ExperimentKind::RateVsSnr => (
            spec.antennas,
            spec.coherence_time,
            job.value,
            spec.correlation,
        ),
        ExperimentKind::RateVsT => (
            spec.antennas,
            job.value as usize,
            spec.snr_db,
            spec.correlation,
        ),
        ExperimentKind::RateVsN => (
            job.value as usize,
            spec.coherence_time,
            spec.snr_db,
            spec.correlation,
        ),
        _ => {
            let p = job.panel.expect("constellation jobs carry a panel");
            (p.antennas, spec.coherence_time, p.snr_db, p.correlation)
        }
    };
    let config = SimConfig {
        antennas,
        users: job.users,
        coherence_time,
        pilots: 0,
        rho: db_to_linear(snr_db),
        constellation: job.constellation,
        correlation,
        csi: job.csi,
        frames: spec.budget.frames,
        seed: spec.seed,
    };
    let point = mc_point(spec, config)?;
    let curve = match job.csi {
        CsiMode::Perfect => "perfect-csi".to_string(),
        CsiMode::Estimated => cap_label(spec.pilots),
    };
    let curve = match job.panel {
        Some(p) => format!("{curve}-{}", p.correlation),
        None => curve,
    };
    let mut scatter = Vec::new();
    if spec.kind == ExperimentKind::Constellation && !point.rate.insufficient_pilots {
        for pt in constellation_dump(&point.config, spec.scatter_frames)? {
            scatter.push(ScatterRow {
                experiment: format!("{}/{}", spec.kind, curve),
                constellation: point.config.constellation.to_string(),
                antennas: point.config.antennas,
                users: point.config.users,
                coherence_time: point.config.coherence_time,
                pilots: point.config.pilots,
                snr_db,
                correlation: point.config.correlation.to_string(),
                frame: pt.frame,
                user: pt.user,
                symbol_index: pt.symbol_index,
                symbol: pt.symbol,
                combined: pt.combined,
            });
        }
    }
    Ok((vec![mc_row(spec, &curve, &point, snr_db, started)], scatter))
}

/// Result of a run that may have failed part-way.
#[derive(Debug)]
pub struct PartialRun {
    pub output: ExperimentOutput,
    /// First error, if any sweep point failed.
    pub error: Option<Error>,
    /// Failure marker rows, one per failed point.
    pub failures: Vec<ResultRow>,
}

fn failure_row(spec: &ExperimentSpec, job: &Job) -> ResultRow {
    ResultRow {
        experiment: format!("{}/failed", spec.kind),
        constellation: job.constellation.to_string(),
        antennas: if spec.kind == ExperimentKind::RateVsN {
            job.value as usize
        } else {
            spec.antennas
        },
        users: job.users,
        coherence_time: match spec.kind {
            ExperimentKind::RateVsT | ExperimentKind::SisoRateVsT => job.value as usize,
            _ => spec.coherence_time,
        },
        pilots: 0,
        snr_db: if spec.kind == ExperimentKind::RateVsSnr {
            job.value
        } else {
            spec.snr_db
        },
        csi_mode: job.csi.to_string(),
        rate_bits: f64::NAN,
        stderr: f64::NAN,
        frames: 0,
        seed: spec.seed,
        walltime_s: 0.0,
    }
}

/// Runs every sweep point, keeping the results of points that succeed.
pub fn run_experiment_partial(spec: &ExperimentSpec) -> Result<PartialRun> {
    spec.validate()?;
    let jobs = jobs(spec);
    let results: Vec<Result<(Vec<ResultRow>, Vec<ScatterRow>)>> =
        jobs.par_iter().map(|job| run_job(spec, job)).collect();
    let mut output = ExperimentOutput::default();
    let mut failures = Vec::new();
    let mut error = None;
    for (job, res) in jobs.iter().zip(results) {
        match res {
            Ok((rows, scatter)) => {
                output.rows.extend(rows);
                output.scatter.extend(scatter);
            }
            Err(e) => {
                failures.push(failure_row(spec, job));
                error.get_or_insert(e);
            }
        }
    }
    sort_rows(&mut output.rows);
    Ok(PartialRun {
        output,
        error,
        failures,
    })
}

/// Runs a sweep; fails on the first failing point.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutput> {
    let run = run_experiment_partial(spec)?;
    match run.error {
        Some(e) => Err(e),
        None => Ok(run.output),
    }
}

/// Runs a sweep and writes its CSV to `path` (and the scatter CSV to
/// `scatter_path` when given). On failure the successful rows are still
/// written, followed by the failure markers, and the error is returned.
pub fn run_experiment_to_csv(
    spec: &ExperimentSpec,
    path: &Path,
    scatter_path: Option<&Path>,
) -> Result<ExperimentOutput> {
    let run = run_experiment_partial(spec)?;
    let mut rows = run.output.rows.clone();
    rows.extend(run.failures.iter().cloned());
    emit_csv(&rows, path)?;
    if let Some(sp) = scatter_path {
        emit_scatter_csv(&run.output.scatter, sp)?;
    }
    match run.error {
        Some(e) => Err(e),
        None => Ok(run.output),
    }
}

/// `%.17g`: 17 significant digits, positional unless the exponent is
/// below −4 or at least 17, trailing zeros removed.
pub fn format_g17(x: f64) -> String {
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    let sci = format!("{x:.16e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if !(-4..17).contains(&exp) {
        format!(
            "{}e{}{:02}",
            trim(mantissa),
            if exp < 0 { '-' } else { '+' },
            exp.abs()
        )
    } else {
        trim(&format!("{:.*}", (16 - exp) as usize, x))
    }
}

fn row_record(r: &ResultRow) -> [String; 13] {
    [
        r.experiment.clone(),
        r.constellation.clone(),
        r.antennas.to_string(),
        r.users.to_string(),
        r.coherence_time.to_string(),
        r.pilots.to_string(),
        format_g17(r.snr_db),
        r.csi_mode.clone(),
        format_g17(r.rate_bits),
        format_g17(r.stderr),
        r.frames.to_string(),
        r.seed.to_string(),
        format_g17(r.walltime_s),
    ]
}

/// Writes rows under [`CSV_HEADER`] to any writer.
pub fn write_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(row_record(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    write_csv(rows, File::create(path)?)
}

/// Reads rows written by [`emit_csv`].
pub fn parse_csv(path: &Path) -> Result<Vec<ResultRow>> {
    read_csv(File::open(path)?)
}

pub fn read_csv<R: std::io::Read>(input: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != CSV_HEADER {
        return Err(Error::InvalidExperiment(format!(
            "unexpected CSV header {header:?}"
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn emit_scatter_csv(rows: &[ScatterRow], path: &Path) -> Result<()> {
    write_scatter_csv(rows, File::create(path)?)
}

/// Writes scatter rows under [`SCATTER_HEADER`] to any writer.
pub fn write_scatter_csv<W: Write>(rows: &[ScatterRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out);
    w.write_record(SCATTER_HEADER)?;
    for s in rows {
        w.write_record([
            s.experiment.clone(),
            s.constellation.clone(),
            s.antennas.to_string(),
            s.users.to_string(),
            s.coherence_time.to_string(),
            s.pilots.to_string(),
            format_g17(s.snr_db),
            s.correlation.clone(),
            s.frame.to_string(),
            s.user.to_string(),
            s.symbol_index.to_string(),
            format_g17(s.symbol.re),
            format_g17(s.symbol.im),
            format_g17(s.combined.re),
            format_g17(s.combined.im),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(rate: f64, stderr: f64) -> ResultRow {
        ResultRow {
            experiment: "rate-vs-snr/mrc".into(),
            constellation: "qpsk".into(),
            antennas: 128,
            users: 4,
            coherence_time: 200,
            pilots: 20,
            snr_db: -7.5,
            csi_mode: "estimated".into(),
            rate_bits: rate,
            stderr,
            frames: 400,
            seed: 9,
            walltime_s: 0.125,
        }
    }

    #[test]
    fn g17_formatting() {
        assert_eq!(format_g17(0.1), "0.10000000000000001");
        assert_eq!(format_g17(-10.0), "-10");
        assert_eq!(format_g17(1.5e-7), "1.4999999999999999e-07");
        assert_eq!(format_g17(1e20), "1e+20");
        assert_eq!(format_g17(0.0), "0");
        for x in [
            std::f64::consts::PI,
            1.0 / 3.0,
            2.0 - 2.0 / 7.0,
            123456.789e-12,
            f64::MIN_POSITIVE,
        ] {
            assert_eq!(format_g17(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn header_only_for_zero_rows() {
        let mut buf = Vec::new();
        write_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), CSV_HEADER.join(",") + "\n");
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row(1.2345678901234567, 0.0), row(0.1, 1e-3 / 3.0)];
        let mut buf = Vec::new();
        write_csv(&rows, &mut buf).unwrap();
        assert!(!buf.contains(&b'\r'));
        assert_eq!(read_csv(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn rejects_foreign_header() {
        assert!(read_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn pilot_candidates_are_multiples_of_k() {
        assert_eq!(pilot_candidates(1, 200, None), vec![1, 2, 3, 4, 5, 7, 10]);
        let c = pilot_candidates(20, 1000, None);
        assert_eq!(c.first(), Some(&20));
        assert_eq!(c.last(), Some(&200));
        assert!(c.iter().all(|p| p % 20 == 0));
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!(pilot_candidates(20, 20, None).is_empty());
        assert_eq!(pilot_candidates(20, 21, None), vec![20]);
        assert_eq!(pilot_candidates(4, 200, Some(100)).last(), Some(&100));
    }

    #[test]
    fn empty_sweep_rejected() {
        let mut spec = ExperimentSpec::preset(ExperimentKind::RateVsSnr, Preset::Desk);
        spec.values.clear();
        assert!(matches!(
            run_experiment(&spec),
            Err(Error::InvalidExperiment(_))
        ));
    }

    #[test]
    fn kinds_parse() {
        for k in ExperimentKind::ALL {
            assert_eq!(k.as_str().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("fig7".parse::<ExperimentKind>().is_err());
    }

    fn tiny(kind: ExperimentKind) -> ExperimentSpec {
        let mut spec = ExperimentSpec::preset(kind, Preset::Desk);
        spec.antennas = 8;
        spec.coherence_time = 24;
        spec.budget = McBudget::fixed(20);
        spec.pilots = PilotChoice::Optimize { cap: Some(8) };
        spec.scatter_frames = 1;
        spec
    }

    #[test]
    fn snr_sweep_rows_sorted_and_labelled() {
        let mut spec = tiny(ExperimentKind::RateVsSnr);
        spec.values = vec![5.0, -5.0];
        spec.users = vec![1, 2];
        let out = run_experiment(&spec).unwrap();
        assert_eq!(out.rows.len(), 2 * 2 * 2);
        assert!(out
            .rows
            .iter()
            .all(|r| r.experiment == "rate-vs-snr/mrc-popt-cap8"));
        assert!(out
            .rows
            .iter()
            .all(|r| r.stderr > 0.0 && r.rate_bits >= 0.0));
        assert!(out
            .rows
            .iter()
            .all(|r| r.pilots % r.users == 0 && r.pilots <= 8));
        assert!(out.rows[0].snr_db < out.rows[1].snr_db);
    }

    #[test]
    fn rate_vs_t_flags_short_blocks() {
        let mut spec = tiny(ExperimentKind::RateVsT);
        spec.users = vec![4];
        spec.values = vec![4.0, 12.0];
        spec.constellations = vec![ConstellationKind::Qpsk];
        let out = run_experiment(&spec).unwrap();
        let est: Vec<_> = out
            .rows
            .iter()
            .filter(|r| r.csi_mode == "estimated")
            .collect();
        assert_eq!(est.len(), 2);
        assert_eq!(est[0].rate_bits, 0.0);
        assert!(est[1].rate_bits > 0.0);
        assert_eq!(
            out.rows.iter().filter(|r| r.csi_mode == "perfect").count(),
            2
        );
    }

    #[test]
    fn siso_rows_respect_capacity() {
        let mut spec = ExperimentSpec::preset(ExperimentKind::SisoRateVsT, Preset::Desk);
        spec.values = vec![2.0, 10.0];
        spec.budget = McBudget::fixed(2000);
        let out = run_experiment(&spec).unwrap();
        let get = |curve: &str, t: usize| {
            out.rows
                .iter()
                .find(|r| {
                    r.experiment == format!("siso-rate-vs-T/{curve}") && r.coherence_time == t
                })
                .unwrap()
                .clone()
        };
        for t in [2, 10] {
            assert!(get("capacity", t).rate_bits >= get("pilot-bound", t).rate_bits - 1e-12);
            assert_eq!(get("capacity", t).stderr, 0.0);
        }
        assert!((get("capacity", 2).rate_bits - get("pilot-bound", 2).rate_bits).abs() < 1e-9);
        assert!(get("perfect-csi", 2).stderr > 0.0);
    }

    #[test]
    fn constellation_dumps_scatter() {
        let mut spec = tiny(ExperimentKind::Constellation);
        spec.panels.truncate(1);
        spec.panels[0].antennas = 8;
        let out = run_experiment(&spec).unwrap();
        assert_eq!(out.rows.len(), 1);
        assert_eq!(out.scatter.len(), spec.coherence_time - out.rows[0].pilots);
    }

    #[test]
    fn deterministic_rerun() {
        let mut spec = tiny(ExperimentKind::RateVsN);
        spec.values = vec![4.0, 8.0];
        let strip = |mut rows: Vec<ResultRow>| {
            rows.iter_mut().for_each(|r| r.walltime_s = 0.0);
            rows
        };
        let a = strip(run_experiment(&spec).unwrap().rows);
        let b = strip(run_experiment(&spec).unwrap().rows);
        assert_eq!(a, b);
    }
}
