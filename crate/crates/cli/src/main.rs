use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use onebit_core::experiment::{
    self, emit_scatter_csv, run_experiment_to_csv, write_csv, write_scatter_csv, ExperimentKind,
    ExperimentSpec, McBudget, PilotChoice, Preset, ResultRow, ScatterRow,
};
use onebit_core::mimo::constellation_dump;
use onebit_core::siso;
use onebit_core::{db_to_linear, ConstellationKind, CsiMode, SimConfig};

/// Achievable rates of Rayleigh block-fading channels with one-bit ADCs.
#[derive(Parser, Debug)]
#[command(name = "onebit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Single-antenna capacity and QPSK rate without a priori CSI.
    SisoCapacity(Opts),
    /// Single-antenna pilot-based LS lower bound.
    SisoPilotBound(Opts),
    /// Single-antenna joint pilot-data rate.
    SisoJpd(Opts),
    /// Per-user rate of the multiuser uplink with LS estimation and MRC.
    MimoRate(Opts),
    /// Dump MRC outputs next to the transmitted symbols.
    Constellation(Opts),
    /// Run a figure sweep and write its CSV.
    Sweep(Opts),
}

/// Every option can also be set in the `--config` file under the same name.
#[derive(Args, Debug, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
struct Opts {
    /// TOML file of option defaults; flags given on the command line win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    snr_db: Option<f64>,
    #[arg(long)]
    coherence_time: Option<usize>,
    #[arg(long)]
    antennas: Option<usize>,
    /// User count; a comma-separated list for sweeps.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    users: Option<Vec<usize>>,
    #[arg(long, conflicts_with = "optimize_pilots")]
    pilots: Option<usize>,
    /// Choose the pilot count maximizing the rate.
    #[arg(long)]
    #[serde(default)]
    optimize_pilots: bool,
    /// Largest pilot count tried by --optimize-pilots in Monte-Carlo runs
    /// (default min(T-1, 10K)).
    #[arg(long)]
    pilot_cap: Option<usize>,
    /// bpsk, qpsk or 16qam; a comma-separated list for sweeps.
    #[arg(long, value_delimiter = ',')]
    #[serde(default, deserialize_with = "one_or_many")]
    constellation: Option<Vec<String>>,
    /// estimated or perfect.
    #[arg(long)]
    csi: Option<String>,
    /// iid or full.
    #[arg(long)]
    correlation: Option<String>,
    #[arg(long)]
    frames: Option<usize>,
    /// Keep doubling frames until the standard error is below this.
    #[arg(long)]
    target_stderr: Option<f64>,
    #[arg(long)]
    max_frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    grid_delta: Option<f64>,
    #[arg(long)]
    grid_extent: Option<f64>,
    /// Output CSV (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scatter CSV of the constellation sweep (default: <out>.scatter.csv).
    #[arg(long)]
    scatter_out: Option<PathBuf>,
    /// desk or paper.
    #[arg(long)]
    preset: Option<String>,
    /// Sweep id: siso-rate-vs-T, rate-vs-snr, rate-vs-T, rate-vs-N, constellation.
    #[arg(long)]
    experiment: Option<String>,
    /// Sweep axis values, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    #[serde(default, deserialize_with = "one_or_many")]
    values: Option<Vec<f64>>,
}

fn one_or_many<'de, D, T>(d: D) -> std::result::Result<Option<Vec<T>>, D::Error>
where
    D: serde::Deserializer<'de>,
    T: Deserialize<'de>,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany<T> {
        One(T),
        Many(Vec<T>),
    }
    Ok(Option::<OneOrMany<T>>::deserialize(d)?.map(|v| match v {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    }))
}

impl Opts {
    /// Fills every unset option from the config file, if one was given.
    fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let file: Opts =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        macro_rules! fill {
            ($($f:ident),*) => { $( if self.$f.is_none() { self.$f = file.$f; } )* };
        }
        fill!(
            snr_db,
            coherence_time,
            antennas,
            users,
            pilots,
            pilot_cap,
            constellation,
            csi,
            correlation,
            frames,
            target_stderr,
            max_frames,
            seed,
            grid_delta,
            grid_extent,
            out,
            scatter_out,
            preset,
            experiment,
            values
        );
        self.optimize_pilots |= file.optimize_pilots && self.pilots.is_none();
        Ok(self)
    }

    fn preset(&self) -> Result<Preset> {
        Ok(self.preset.as_deref().unwrap_or("desk").parse()?)
    }

    fn constellations(&self) -> Result<Option<Vec<ConstellationKind>>> {
        self.constellation
            .as_ref()
            .map(|v| v.iter().map(|s| s.parse().map_err(Into::into)).collect())
            .transpose()
    }

    fn single<T: Copy>(values: &[T], name: &str) -> Result<T> {
        match values {
            [x] => Ok(*x),
            _ => bail!("--{name} takes a single value here"),
        }
    }

    /// Preset of `kind` with every given option applied.
    fn spec(&self, kind: ExperimentKind) -> Result<ExperimentSpec> {
        let mut spec = ExperimentSpec::preset(kind, self.preset()?);
        if let Some(v) = &self.values {
            spec.values = v.clone();
            spec.panels.clear();
        }
        if let Some(x) = self.snr_db {
            spec.snr_db = x;
        }
        if let Some(x) = self.coherence_time {
            spec.coherence_time = x;
        }
        if let Some(x) = self.antennas {
            spec.antennas = x;
        }
        if let Some(x) = &self.users {
            spec.users = x.clone();
        }
        if let Some(x) = self.constellations()? {
            spec.constellations = x;
        }
        if let Some(x) = &self.csi {
            spec.csi = x.parse()?;
        }
        if let Some(x) = &self.correlation {
            spec.correlation = x.parse()?;
            for p in &mut spec.panels {
                p.correlation = spec.correlation;
            }
        }
        if let Some(p) = self.pilots {
            spec.pilots = PilotChoice::Fixed(p);
        } else if self.optimize_pilots || self.pilot_cap.is_some() {
            spec.pilots = PilotChoice::Optimize {
                cap: self.pilot_cap,
            };
        }
        if let Some(f) = self.frames {
            spec.budget.frames = f;
            spec.budget.max_frames = spec.budget.max_frames.max(f);
        }
        if let Some(x) = self.max_frames {
            spec.budget.max_frames = x;
        }
        if let Some(x) = self.target_stderr {
            spec.budget.target_stderr = Some(x);
        } else if self.frames.is_some() && self.max_frames.is_none() {
            // an explicit frame count without a precision target is taken literally
            spec.budget = McBudget::fixed(spec.budget.frames);
        }
        match (self.grid_delta, self.grid_extent) {
            (Some(d), Some(l)) => spec.grid = Some((d, l)),
            (None, None) => {}
            _ => bail!("--grid-delta and --grid-extent must be given together"),
        }
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        Ok(spec)
    }
}

fn write_rows(rows: &[ResultRow], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            experiment::emit_csv(rows, path)
                .with_context(|| format!("writing {}", path.display()))?;
        }
        None => write_csv(rows, io::stdout().lock())?,
    }
    Ok(())
}

fn siso_row(
    spec: &ExperimentSpec,
    label: &str,
    t: usize,
    p: usize,
    rate: f64,
    started: Instant,
) -> ResultRow {
    ResultRow {
        experiment: label.to_string(),
        constellation: ConstellationKind::Qpsk.to_string(),
        antennas: 1,
        users: 1,
        coherence_time: t,
        pilots: p,
        snr_db: spec.snr_db,
        csi_mode: CsiMode::Estimated.to_string(),
        rate_bits: rate,
        stderr: 0.0,
        frames: 0,
        seed: 0,
        walltime_s: started.elapsed().as_secs_f64(),
    }
}

#[derive(Clone, Copy)]
enum Siso {
    Capacity,
    PilotBound,
    Jpd,
}

fn siso(which: Siso, opts: &Opts) -> Result<Vec<ResultRow>> {
    let spec = opts.spec(ExperimentKind::SisoRateVsT)?;
    let started = Instant::now();
    let rho = db_to_linear(spec.snr_db);
    let t = spec.coherence_time;
    Ok(match which {
        Siso::Capacity => {
            let crit = siso::critical_snr(t)?;
            eprintln!(
                "critical SNR for T={t}: {:.6} dB",
                10.0 * crit.rho_c.log10()
            );
            let cap = siso::capacity_siso_given(rho, t, &crit)?;
            let qpsk = siso::rate_qpsk(rho, t)?;
            vec![
                siso_row(&spec, "siso-capacity/capacity", t, 0, cap.rate, started),
                siso_row(&spec, "siso-capacity/qpsk", t, 0, qpsk.rate, started),
            ]
        }
        Siso::PilotBound => {
            let r = match opts.pilots {
                Some(p) => siso::pilot_bound(rho, t, p)?,
                None if opts.optimize_pilots => siso::optimize_pilots(rho, t)?.1,
                None => bail!("give --pilots or --optimize-pilots"),
            };
            vec![siso_row(
                &spec,
                "siso-pilot-bound/pilot-bound",
                t,
                r.pilots,
                r.rate,
                started,
            )]
        }
        Siso::Jpd => {
            let r = siso::jpd_rate(rho, t)?;
            vec![siso_row(&spec, "siso-jpd/jpd", t, 0, r.rate, started)]
        }
    })
}

fn sim_config(spec: &ExperimentSpec) -> Result<SimConfig> {
    Ok(SimConfig {
        antennas: spec.antennas,
        users: Opts::single(&spec.users, "users")?,
        coherence_time: spec.coherence_time,
        pilots: match spec.pilots {
            PilotChoice::Fixed(p) => p,
            PilotChoice::Optimize { .. } => 0,
        },
        rho: db_to_linear(spec.snr_db),
        constellation: Opts::single(&spec.constellations, "constellation")?,
        correlation: spec.correlation,
        csi: spec.csi,
        frames: spec.budget.frames,
        seed: spec.seed,
    })
}

fn mimo_rate(opts: &Opts) -> Result<Vec<ResultRow>> {
    let mut spec = opts.spec(ExperimentKind::RateVsSnr)?;
    spec.snr_db = opts.snr_db.unwrap_or(spec.snr_db);
    if opts.constellation.is_none() {
        spec.constellations = vec![ConstellationKind::Qpsk];
    }
    if opts.pilots.is_none() && !opts.optimize_pilots && spec.csi == CsiMode::Estimated {
        bail!("give --pilots or --optimize-pilots");
    }
    let config = sim_config(&spec)?;
    let (row, rate) = experiment::run_point(&spec, config, spec.snr_db, "mimo-rate")?;
    if rate.insufficient_pilots {
        eprintln!(
            "warning: insufficient pilots (need a positive multiple of K = {}); rate is 0",
            row.users
        );
    }
    Ok(vec![row])
}

fn scatter(opts: &Opts) -> Result<()> {
    let mut spec = opts.spec(ExperimentKind::Constellation)?;
    if opts.pilots.is_none() {
        spec.pilots = PilotChoice::Fixed(20);
    }
    let mut config = sim_config(&spec)?;
    if config.csi == CsiMode::Perfect {
        config.pilots = 0;
    }
    let frames = opts.frames.unwrap_or(spec.scatter_frames);
    let rows: Vec<ScatterRow> = constellation_dump(&config, frames)?
        .into_iter()
        .map(|pt| ScatterRow {
            experiment: "constellation/mrc".into(),
            constellation: config.constellation.to_string(),
            antennas: config.antennas,
            users: config.users,
            coherence_time: config.coherence_time,
            pilots: config.effective_pilots(),
            snr_db: spec.snr_db,
            correlation: config.correlation.to_string(),
            frame: pt.frame,
            user: pt.user,
            symbol_index: pt.symbol_index,
            symbol: pt.symbol,
            combined: pt.combined,
        })
        .collect();
    match &opts.out {
        Some(path) => {
            emit_scatter_csv(&rows, path).with_context(|| format!("writing {}", path.display()))?
        }
        None => write_scatter_csv(&rows, io::stdout().lock())?,
    }
    Ok(())
}

fn sweep(opts: &Opts) -> Result<()> {
    let Some(id) = &opts.experiment else {
        bail!("sweep needs --experiment (siso-rate-vs-T, rate-vs-snr, rate-vs-T, rate-vs-N, constellation)");
    };
    let kind: ExperimentKind = id.parse()?;
    let spec = opts.spec(kind)?;
    let Some(out) = &opts.out else {
        bail!("sweep needs --out");
    };
    let scatter_out = (kind == ExperimentKind::Constellation).then(|| {
        opts.scatter_out
            .clone()
            .unwrap_or_else(|| out.with_extension("scatter.csv"))
    });
    let started = Instant::now();
    let output = run_experiment_to_csv(&spec, out, scatter_out.as_deref()).with_context(|| {
        format!(
            "sweep {kind} failed; completed rows and failure markers are in {}",
            out.display()
        )
    })?;
    eprintln!(
        "{kind}: {} rows in {:.1?} -> {}",
        output.rows.len(),
        started.elapsed(),
        out.display()
    );
    if let Some(s) = scatter_out {
        eprintln!(
            "scatter: {} points -> {}",
            output.scatter.len(),
            s.display()
        );
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let (opts, siso_kind) = match cli.command {
        Command::SisoCapacity(o) => (o.resolve()?, Some(Siso::Capacity)),
        Command::SisoPilotBound(o) => (o.resolve()?, Some(Siso::PilotBound)),
        Command::SisoJpd(o) => (o.resolve()?, Some(Siso::Jpd)),
        Command::MimoRate(o) => {
            let opts = o.resolve()?;
            return write_rows(&mimo_rate(&opts)?, opts.out.as_deref());
        }
        Command::Constellation(o) => return scatter(&o.resolve()?),
        Command::Sweep(o) => return sweep(&o.resolve()?),
    };
    let rows = siso(siso_kind.expect("siso subcommand"), &opts)?;
    write_rows(&rows, opts.out.as_deref())
}
