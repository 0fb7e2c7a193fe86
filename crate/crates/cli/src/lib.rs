//! Command-line surface over the directed-chain GAN library: dataset
//! simulation/ingest, signature-Wasserstein training, chain sampling,
//! evaluation, and report assembly.
//!
//! Every command writes a `config.txt` into its output directory holding the
//! fully resolved settings in the same `[section]` / `key = value` format the
//! `--config` flag reads, so any artifact directory can be re-run
//! byte-for-byte from its persisted config plus inputs.  Flags win over
//! config values; config values win over defaults.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};

use dc_gan::datasets::{simulate_fhn, simulate_opinion, FhnParams, OpinionParams};
use dc_gan::dcgan::{branch, decorrelate_with, train_sigwgan, InitFamily, TrainConfig};
use dc_gan::io::{self, format_float};
use dc_gan::metrics::{
    default_timestamps, discriminative_score, independence_score, kde_density, predictive_score,
    sig_mmd_score, MetricReport,
};
use dc_gan::{Error, PathBatch, Result, TimeGrid};

/// Flat `key = value` configuration with one `[section]` per subcommand.
#[derive(Debug, Clone, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|n| !n.is_empty())
                    .ok_or_else(|| {
                        Error::format(format!("config line {}: malformed section header", idx + 1))
                    })?;
                sections.entry(name.to_string()).or_default();
                current = Some(name.to_string());
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::format(format!("config line {}: expected `key = value`", idx + 1))
            })?;
            let key = k.trim().to_string();
            let section = current.as_deref().ok_or_else(|| {
                Error::format(format!(
                    "config line {}: key `{key}` appears outside any [section]",
                    idx + 1
                ))
            })?;
            let entries = sections.get_mut(section).expect("section was inserted");
            if entries.insert(key.clone(), v.trim().to_string()).is_some() {
                return Err(Error::format(format!(
                    "config line {}: duplicate key `{key}` in [{section}]",
                    idx + 1
                )));
            }
        }
        Ok(ConfigFile { sections })
    }

    pub fn load(path: Option<&Path>) -> Result<ConfigFile> {
        match path {
            None => Ok(ConfigFile::default()),
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| {
                    Error::input(format!("cannot read config {}: {e}", p.display()))
                })?;
                ConfigFile::parse(&text)
            }
        }
    }

    fn section(&self, name: &str) -> Scope {
        Scope {
            section: name.to_string(),
            entries: self.sections.get(name).cloned().unwrap_or_default(),
        }
    }
}

/// One command's slice of the config; every key must be consumed so typos
/// surface as errors instead of silently falling back to defaults.
struct Scope {
    section: String,
    entries: BTreeMap<String, String>,
}

impl Scope {
    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key)
    }

    fn take_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some(v) => v.parse::<T>().map(Some).map_err(|e| {
                Error::format(format!("config [{}] {key}: {e} (got `{v}`)", self.section))
            }),
        }
    }

    fn take_path(&mut self, key: &str) -> Option<PathBuf> {
        self.take(key).map(PathBuf::from)
    }

    fn finish(self) -> Result<()> {
        if let Some((k, _)) = self.entries.into_iter().next() {
            return Err(Error::format(format!(
                "config [{}]: unknown key `{k}`",
                self.section
            )));
        }
        Ok(())
    }
}

fn over<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn need<T>(flag: Option<T>, cfg: Option<T>, what: &str) -> Result<T> {
    flag.or(cfg)
        .ok_or_else(|| Error::input(format!("{what} is required (flag or config)")))
}

fn parse_usize_list(s: &str, what: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<usize>()
                .map_err(|e| Error::format(format!("{what}: {e} (got `{t}`)")))
        })
        .collect()
}

fn parse_f64_list(s: &str, what: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::format(format!("{what}: {e} (got `{t}`)")))
        })
        .collect()
}

fn kv(k: &str, v: impl Into<String>) -> (String, String) {
    (k.to_string(), v.into())
}

/// Resolved settings, re-readable through `--config`.
fn write_section_config(path: &Path, section: &str, entries: &[(String, String)]) -> Result<()> {
    let mut text = format!("[{section}]\n");
    for (k, v) in entries {
        text.push_str(k);
        text.push_str(" = ");
        text.push_str(v);
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Top-level argument grammar.
#[derive(Debug, Parser)]
#[command(
    name = "dcgan",
    about = "Directed-chain SDE generative modeling toolkit",
    color = clap::ColorChoice::Never
)]
pub struct Cli {
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// Simulate a synthetic particle-system dataset or ingest a raw CSV.
    #[command(name = "simulate-data")]
    SimulateData(SimulateArgs),
    /// Fit a generator by signature-Wasserstein descent.
    Train(TrainArgs),
    /// Run decorrelating walks (optionally branched) from a dataset.
    Sample(SampleArgs),
    /// Score a fake batch against a real batch.
    Evaluate(EvaluateArgs),
    /// Aggregate evaluation reports into markdown, with optional KDE tables.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Config file with a [simulate-data] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (data.csv, manifest.txt, config.txt).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// One of: opinion, fhn, csv.
    #[arg(long)]
    pub dataset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Particle count (opinion/fhn).
    #[arg(long)]
    pub particles: Option<usize>,
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Raw CSV to ingest (dataset = csv): numeric columns, one row per step.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Window length in rows (dataset = csv).
    #[arg(long)]
    pub window: Option<usize>,
    /// Offset between window starts in rows (dataset = csv).
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Config file with a [train] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (generator/, loss.csv, config.txt).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Signature truncation depth.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    /// Train the neighbor-masked (degenerate) generator instead.
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Config file with a [sample] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Generator directory written by `train`.
    #[arg(long)]
    pub generator: Option<PathBuf>,
    /// Data CSV seeding the walk.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory (samples-<chain>.csv, config.txt).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Walk length along the chain; q = 1 returns the data itself.
    #[arg(long)]
    pub q: Option<usize>,
    /// Number of branched walks from the same data.
    #[arg(long)]
    pub chains: Option<usize>,
    /// Re-pair neighbors uniformly at every walk step (single chain only).
    #[arg(long)]
    pub shuffle_neighbors: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Config file with an [evaluate] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub real: Option<PathBuf>,
    #[arg(long)]
    pub fake: Option<PathBuf>,
    /// Output directory (report.csv, config.txt).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Signature depth for the MMD score.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Comma-separated evaluation times for the independence score.
    #[arg(long)]
    pub timestamps: Option<String>,
    /// Comma-separated subset of sig_mmd,independence,discriminative,predictive.
    #[arg(long)]
    pub scores: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation report CSVs to aggregate.
    pub reports: Vec<PathBuf>,
    /// Config file with a [report] section.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (report.md, optional kde.csv, config.txt).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Path CSV whose marginal gets a KDE table.
    #[arg(long)]
    pub kde_data: Option<PathBuf>,
    #[arg(long)]
    pub kde_bandwidth: Option<f64>,
    /// Channel of the KDE marginal.
    #[arg(long)]
    pub kde_channel: Option<usize>,
    /// Time of the KDE marginal; defaults to the final grid time.
    #[arg(long)]
    pub kde_time: Option<f64>,
}

/// Parse `argv` and run the selected command.  `--help` output goes to
/// stdout and returns `Ok`; any other parse failure becomes an input error
/// carrying the rendered usage text.
pub fn run<I, T>(argv: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{}", e.render());
            return Ok(());
        }
        Err(e) => return Err(Error::input(e.render().to_string())),
    };
    dispatch(cli)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::SimulateData(a) => cmd_simulate(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Sample(a) => cmd_sample(a),
        Cmd::Evaluate(a) => cmd_evaluate(a),
        Cmd::Report(a) => cmd_report(a),
    }
}

fn cmd_simulate(a: SimulateArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let mut sc = cfg.section("simulate-data");
    let dataset = {
        let mut d = "opinion".to_string();
        over(&mut d, sc.take("dataset"));
        over(&mut d, a.dataset.clone());
        d
    };
    let out = need(a.out.clone(), sc.take_path("out"), "--out")?;

    if dataset != "csv" && (a.input.is_some() || a.window.is_some() || a.stride.is_some()) {
        return Err(Error::input(
            "--input/--window/--stride apply only to --dataset csv",
        ));
    }
    if dataset == "csv" && (a.particles.is_some() || a.horizon.is_some() || a.dt.is_some()) {
        return Err(Error::input(
            "--particles/--horizon/--dt do not apply to csv ingest",
        ));
    }

    let (batch, config_entries, mut manifest) = match dataset.as_str() {
        "opinion" => {
            let mut p = OpinionParams::default();
            over(&mut p.theta1, sc.take_parsed("theta1")?);
            over(&mut p.theta2, sc.take_parsed("theta2")?);
            over(&mut p.sigma, sc.take_parsed("sigma")?);
            over(&mut p.init_low, sc.take_parsed("init_low")?);
            over(&mut p.init_high, sc.take_parsed("init_high")?);
            over(&mut p.n_particles, sc.take_parsed("particles")?);
            over(&mut p.n_particles, a.particles);
            over(&mut p.horizon, sc.take_parsed("horizon")?);
            over(&mut p.horizon, a.horizon);
            over(&mut p.dt, sc.take_parsed("dt")?);
            over(&mut p.dt, a.dt);
            over(&mut p.seed, sc.take_parsed("seed")?);
            over(&mut p.seed, a.seed);
            sc.finish()?;
            let entries = vec![
                kv("dataset", "opinion"),
                kv("particles", p.n_particles.to_string()),
                kv("horizon", format_float(p.horizon)),
                kv("dt", format_float(p.dt)),
                kv("theta1", format_float(p.theta1)),
                kv("theta2", format_float(p.theta2)),
                kv("sigma", format_float(p.sigma)),
                kv("init_low", format_float(p.init_low)),
                kv("init_high", format_float(p.init_high)),
                kv("seed", p.seed.to_string()),
            ];
            let mut manifest = entries.clone();
            manifest.push(kv("init_family", "uniform"));
            (simulate_opinion(&p)?, entries, manifest)
        }
        "fhn" => {
            let mut p = FhnParams::default();
            over(&mut p.a, sc.take_parsed("a")?);
            over(&mut p.b, sc.take_parsed("b")?);
            over(&mut p.c, sc.take_parsed("c")?);
            over(&mut p.current, sc.take_parsed("current")?);
            over(&mut p.sigma_ext, sc.take_parsed("sigma_ext")?);
            over(&mut p.v_rev, sc.take_parsed("v_rev")?);
            over(&mut p.a_r, sc.take_parsed("a_r")?);
            over(&mut p.a_d, sc.take_parsed("a_d")?);
            over(&mut p.t_max, sc.take_parsed("t_max")?);
            over(&mut p.lambda, sc.take_parsed("lambda")?);
            over(&mut p.j_bar, sc.take_parsed("j_bar")?);
            over(&mut p.sigma_j, sc.take_parsed("sigma_j")?);
            over(&mut p.v_t, sc.take_parsed("v_t")?);
            over(&mut p.gamma_chi, sc.take_parsed("gamma_chi")?);
            over(&mut p.lambda_chi, sc.take_parsed("lambda_chi")?);
            over(&mut p.v0_mean, sc.take_parsed("v0_mean")?);
            over(&mut p.v0_std, sc.take_parsed("v0_std")?);
            over(&mut p.w0_mean, sc.take_parsed("w0_mean")?);
            over(&mut p.w0_std, sc.take_parsed("w0_std")?);
            over(&mut p.y0_mean, sc.take_parsed("y0_mean")?);
            over(&mut p.y0_std, sc.take_parsed("y0_std")?);
            over(&mut p.n_particles, sc.take_parsed("particles")?);
            over(&mut p.n_particles, a.particles);
            over(&mut p.horizon, sc.take_parsed("horizon")?);
            over(&mut p.horizon, a.horizon);
            over(&mut p.dt, sc.take_parsed("dt")?);
            over(&mut p.dt, a.dt);
            over(&mut p.seed, sc.take_parsed("seed")?);
            over(&mut p.seed, a.seed);
            sc.finish()?;
            let entries = vec![
                kv("dataset", "fhn"),
                kv("particles", p.n_particles.to_string()),
                kv("horizon", format_float(p.horizon)),
                kv("dt", format_float(p.dt)),
                kv("a", format_float(p.a)),
                kv("b", format_float(p.b)),
                kv("c", format_float(p.c)),
                kv("current", format_float(p.current)),
                kv("sigma_ext", format_float(p.sigma_ext)),
                kv("v_rev", format_float(p.v_rev)),
                kv("a_r", format_float(p.a_r)),
                kv("a_d", format_float(p.a_d)),
                kv("t_max", format_float(p.t_max)),
                kv("lambda", format_float(p.lambda)),
                kv("j_bar", format_float(p.j_bar)),
                kv("sigma_j", format_float(p.sigma_j)),
                kv("v_t", format_float(p.v_t)),
                kv("gamma_chi", format_float(p.gamma_chi)),
                kv("lambda_chi", format_float(p.lambda_chi)),
                kv("v0_mean", format_float(p.v0_mean)),
                kv("v0_std", format_float(p.v0_std)),
                kv("w0_mean", format_float(p.w0_mean)),
                kv("w0_std", format_float(p.w0_std)),
                kv("y0_mean", format_float(p.y0_mean)),
                kv("y0_std", format_float(p.y0_std)),
                kv("seed", p.seed.to_string()),
            ];
            let mut manifest = entries.clone();
            manifest.push(kv("init_family", "gaussian"));
            (simulate_fhn(&p)?, entries, manifest)
        }
        "csv" => {
            let input = need(a.input.clone(), sc.take_path("input"), "--input")?;
            let mut window = 24usize;
            over(&mut window, sc.take_parsed("window")?);
            over(&mut window, a.window);
            let mut stride = 1usize;
            over(&mut stride, sc.take_parsed("stride")?);
            over(&mut stride, a.stride);
            let mut seed = 0u64;
            over(&mut seed, sc.take_parsed("seed")?);
            over(&mut seed, a.seed);
            sc.finish()?;
            let (batch, scales, rows) = ingest_csv(&input, window, stride)?;
            let entries = vec![
                kv("dataset", "csv"),
                kv("input", input.display().to_string()),
                kv("window", window.to_string()),
                kv("stride", stride.to_string()),
                kv("seed", seed.to_string()),
            ];
            let mut manifest = entries.clone();
            manifest.push(kv("rows", rows.to_string()));
            for (c, (lo, hi)) in scales.iter().enumerate() {
                manifest.push(kv(&format!("scale_lo_{c}"), format_float(*lo)));
                manifest.push(kv(&format!("scale_hi_{c}"), format_float(*hi)));
            }
            manifest.push(kv("init_family", "gaussian"));
            (batch, entries, manifest)
        }
        other => {
            return Err(Error::input(format!(
                "unknown dataset `{other}` (expected opinion, fhn, or csv)"
            )))
        }
    };

    manifest.push(kv("paths", batch.len().to_string()));
    manifest.push(kv("channels", batch.channels().to_string()));
    manifest.push(kv("grid_steps", batch.grid().steps().to_string()));

    fs::create_dir_all(&out)?;
    io::write_path_batch(&out.join("data.csv"), &batch)?;
    io::write_manifest(&out.join("manifest.txt"), &manifest)?;
    write_section_config(&out.join("config.txt"), "simulate-data", &config_entries)
}

/// Read a raw numeric CSV (optional single header line), min-max scale each
/// column over the whole file, and cut it into windows of `window` rows
/// every `stride` rows on the unit time grid.
fn ingest_csv(input: &Path, window: usize, stride: usize) -> Result<(PathBatch, Vec<(f64, f64)>, usize)> {
    if window < 2 {
        return Err(Error::input("ingest window must cover at least two rows"));
    }
    if stride == 0 {
        return Err(Error::input("ingest stride must be >= 1"));
    }
    let text = fs::read_to_string(input)
        .map_err(|e| Error::input(format!("cannot read {}: {e}", input.display())))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut first_content = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|f| f.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::format(format!(
                        "{} line {}: non-finite value",
                        input.display(),
                        idx + 1
                    )));
                }
                if let Some(first) = rows.first() {
                    if v.len() != first.len() {
                        return Err(Error::format(format!(
                            "{} line {}: expected {} columns, got {}",
                            input.display(),
                            idx + 1,
                            first.len(),
                            v.len()
                        )));
                    }
                }
                rows.push(v);
            }
            // A single leading non-numeric line is taken as the header.
            Err(_) if first_content => {}
            Err(e) => {
                return Err(Error::format(format!(
                    "{} line {}: {e}",
                    input.display(),
                    idx + 1
                )))
            }
        }
        first_content = false;
    }
    if rows.len() < window {
        return Err(Error::input(format!(
            "{}: {} data rows < window {window}",
            input.display(),
            rows.len()
        )));
    }
    let channels = rows[0].len();
    if channels == 0 {
        return Err(Error::format(format!("{}: no columns", input.display())));
    }
    let mut scales = vec![(f64::INFINITY, f64::NEG_INFINITY); channels];
    for row in &rows {
        for (c, &x) in row.iter().enumerate() {
            scales[c].0 = scales[c].0.min(x);
            scales[c].1 = scales[c].1.max(x);
        }
    }
    let scale = |c: usize, x: f64| {
        let (lo, hi) = scales[c];
        if hi > lo {
            (x - lo) / (hi - lo)
        } else {
            0.0
        }
    };
    let n_rows = rows.len();
    let starts: Vec<usize> = (0..=n_rows - window).step_by(stride).collect();
    let grid = TimeGrid::uniform(1.0, window - 1)?;
    let mut values = Vec::with_capacity(starts.len() * window * channels);
    for &s in &starts {
        for j in 0..window {
            for c in 0..channels {
                values.push(scale(c, rows[s + j][c]));
            }
        }
    }
    let batch = PathBatch::new(grid, channels, starts.len(), values)?;
    Ok((batch, scales, n_rows))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let mut sc = cfg.section("train");
    let data_path = need(a.data.clone(), sc.take_path("data"), "--data")?;
    let out = need(a.out.clone(), sc.take_path("out"), "--out")?;
    let mut seed = 0u64;
    over(&mut seed, sc.take_parsed("seed")?);
    over(&mut seed, a.seed);

    let mut tc = TrainConfig::default();
    over(&mut tc.depth, sc.take_parsed("depth")?);
    over(&mut tc.depth, a.depth);
    over(&mut tc.batch, sc.take_parsed("batch")?);
    over(&mut tc.batch, a.batch);
    over(&mut tc.steps, sc.take_parsed("steps")?);
    over(&mut tc.steps, a.steps);
    over(&mut tc.lr, sc.take_parsed("lr")?);
    over(&mut tc.lr_decay_factor, sc.take_parsed("lr_decay_factor")?);
    over(&mut tc.lr_decay_period, sc.take_parsed("lr_decay_period")?);
    over(&mut tc.noise_dim, sc.take_parsed("noise_dim")?);
    if let Some(h) = sc.take("hidden") {
        tc.hidden = parse_usize_list(&h, "config [train] hidden")?;
    }
    if let Some(f) = sc.take("init_family") {
        tc.init_family = InitFamily::parse(&f)?;
    }
    tc.neighbor_masked = a.baseline;
    if let Some(b) = sc.take_parsed::<bool>("baseline")? {
        tc.neighbor_masked = tc.neighbor_masked || b;
    }
    let explicit_state_dim: Option<usize> = sc.take_parsed("state_dim")?;
    sc.finish()?;

    let data = io::read_path_batch(&data_path)?;
    tc.state_dim = data.channels();
    if let Some(sd) = explicit_state_dim {
        if sd != tc.state_dim {
            return Err(Error::input(format!(
                "config state_dim {sd} does not match the {} data channels",
                tc.state_dim
            )));
        }
    }

    fs::create_dir_all(&out)?;
    let (generator, trace) = train_sigwgan(&data, &tc, seed)?;
    io::save_generator(&out.join("generator"), &generator)?;
    io::write_loss_trace(&out.join("loss.csv"), &trace)?;
    let entries = vec![
        kv("data", data_path.display().to_string()),
        kv("seed", seed.to_string()),
        kv("baseline", tc.neighbor_masked.to_string()),
        kv("depth", tc.depth.to_string()),
        kv("batch", tc.batch.to_string()),
        kv("steps", tc.steps.to_string()),
        kv("lr", format_float(tc.lr)),
        kv("lr_decay_factor", format_float(tc.lr_decay_factor)),
        kv("lr_decay_period", tc.lr_decay_period.to_string()),
        kv("state_dim", tc.state_dim.to_string()),
        kv("noise_dim", tc.noise_dim.to_string()),
        kv(
            "hidden",
            tc.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(","),
        ),
        kv("init_family", tc.init_family.name()),
    ];
    write_section_config(&out.join("config.txt"), "train", &entries)
}

fn cmd_sample(a: SampleArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let mut sc = cfg.section("sample");
    let gen_dir = need(a.generator.clone(), sc.take_path("generator"), "--generator")?;
    let data_path = need(a.data.clone(), sc.take_path("data"), "--data")?;
    let out = need(a.out.clone(), sc.take_path("out"), "--out")?;
    let mut seed = 0u64;
    over(&mut seed, sc.take_parsed("seed")?);
    over(&mut seed, a.seed);
    let mut q = 10usize;
    over(&mut q, sc.take_parsed("q")?);
    over(&mut q, a.q);
    let mut chains = 1usize;
    over(&mut chains, sc.take_parsed("chains")?);
    over(&mut chains, a.chains);
    let mut shuffle = a.shuffle_neighbors;
    if let Some(s) = sc.take_parsed::<bool>("shuffle_neighbors")? {
        shuffle = shuffle || s;
    }
    sc.finish()?;

    if shuffle && chains != 1 {
        return Err(Error::input(
            "--shuffle-neighbors supports a single chain (set --chains 1)",
        ));
    }
    let generator = io::load_generator(&gen_dir)?;
    let data = io::read_path_batch(&data_path)?;
    let batches = if chains == 1 {
        vec![decorrelate_with(&data, &generator, q, seed, shuffle)?]
    } else {
        branch(&data, &generator, q, chains, seed)?
    };
    fs::create_dir_all(&out)?;
    for (c, b) in batches.iter().enumerate() {
        io::write_path_batch(&out.join(format!("samples-{c}.csv")), b)?;
    }
    let entries = vec![
        kv("generator", gen_dir.display().to_string()),
        kv("data", data_path.display().to_string()),
        kv("seed", seed.to_string()),
        kv("q", q.to_string()),
        kv("chains", chains.to_string()),
        kv("shuffle_neighbors", shuffle.to_string()),
    ];
    write_section_config(&out.join("config.txt"), "sample", &entries)
}

const ALL_SCORES: [&str; 4] = ["sig_mmd", "independence", "discriminative", "predictive"];

fn parse_scores(spec: &str) -> Result<Vec<&'static str>> {
    let mut picked = Vec::new();
    for raw in spec.split(',') {
        let name = raw.trim();
        match ALL_SCORES.iter().find(|s| **s == name) {
            Some(s) => {
                if !picked.contains(s) {
                    picked.push(*s);
                }
            }
            None => {
                return Err(Error::input(format!(
                    "unknown score `{name}` (expected one of {})",
                    ALL_SCORES.join(", ")
                )))
            }
        }
    }
    if picked.is_empty() {
        return Err(Error::input("empty score list"));
    }
    Ok(picked)
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let mut sc = cfg.section("evaluate");
    let real_path = need(a.real.clone(), sc.take_path("real"), "--real")?;
    let fake_path = need(a.fake.clone(), sc.take_path("fake"), "--fake")?;
    let out = need(a.out.clone(), sc.take_path("out"), "--out")?;
    let mut seed = 0u64;
    over(&mut seed, sc.take_parsed("seed")?);
    over(&mut seed, a.seed);
    let mut depth = 4usize;
    over(&mut depth, sc.take_parsed("depth")?);
    over(&mut depth, a.depth);
    let mut ts_spec: Option<String> = sc.take("timestamps");
    over(&mut ts_spec, a.timestamps.clone().map(Some));
    let mut scores_spec: Option<String> = sc.take("scores");
    over(&mut scores_spec, a.scores.clone().map(Some));
    sc.finish()?;

    let real = io::read_path_batch(&real_path)?;
    let fake = io::read_path_batch(&fake_path)?;
    let timestamps = match &ts_spec {
        Some(s) => parse_f64_list(s, "timestamps")?,
        None => {
            let horizon = *real.times().last().expect("non-empty grid");
            default_timestamps(horizon)
        }
    };
    let picked = match &scores_spec {
        Some(s) => parse_scores(s)?,
        None => ALL_SCORES.to_vec(),
    };

    let mut report = MetricReport::new(seed, 0);
    report.timestamps = timestamps.clone();
    for score in &picked {
        match *score {
            "sig_mmd" => report.sig_mmd = Some(sig_mmd_score(&real, &fake, depth)?),
            "independence" => {
                report.independence = Some(independence_score(&real, &fake, &timestamps)?)
            }
            "discriminative" => {
                report.discriminative = Some(discriminative_score(&real, &fake, seed)?)
            }
            "predictive" => report.predictive = Some(predictive_score(&real, &fake, seed)?),
            _ => unreachable!("parse_scores validated"),
        }
    }
    report.validate()?;

    fs::create_dir_all(&out)?;
    io::write_metric_report(&out.join("report.csv"), &report)?;
    let entries = vec![
        kv("real", real_path.display().to_string()),
        kv("fake", fake_path.display().to_string()),
        kv("seed", seed.to_string()),
        kv("depth", depth.to_string()),
        kv(
            "timestamps",
            timestamps.iter().map(|t| format_float(*t)).collect::<Vec<_>>().join(","),
        ),
        kv("scores", picked.join(",")),
    ];
    write_section_config(&out.join("config.txt"), "evaluate", &entries)
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    let cfg = ConfigFile::load(a.config.as_deref())?;
    let mut sc = cfg.section("report");
    let out = need(a.out.clone(), sc.take_path("out"), "--out")?;
    let mut report_paths = a.reports.clone();
    if report_paths.is_empty() {
        if let Some(list) = sc.take("reports") {
            report_paths = list.split(',').map(|p| PathBuf::from(p.trim())).collect();
        }
    } else {
        sc.take("reports");
    }
    let kde_data = a.kde_data.clone().or_else(|| sc.take_path("kde_data"));
    let mut kde_bandwidth = 0.15f64;
    over(&mut kde_bandwidth, sc.take_parsed("kde_bandwidth")?);
    over(&mut kde_bandwidth, a.kde_bandwidth);
    let mut kde_channel = 0usize;
    over(&mut kde_channel, sc.take_parsed("kde_channel")?);
    over(&mut kde_channel, a.kde_channel);
    let mut kde_time: Option<f64> = sc.take_parsed("kde_time")?;
    over(&mut kde_time, a.kde_time.map(Some));
    sc.finish()?;

    if report_paths.is_empty() && kde_data.is_none() {
        return Err(Error::input(
            "nothing to report: pass report CSVs and/or --kde-data",
        ));
    }

    fs::create_dir_all(&out)?;
    let mut entries = vec![kv(
        "reports",
        report_paths
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
    )];
    if !report_paths.is_empty() {
        let mut rows = Vec::with_capacity(report_paths.len());
        for p in &report_paths {
            let label = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            rows.push((label, io::read_metric_report(p)?));
        }
        fs::write(out.join("report.md"), io::metric_reports_markdown(&rows))?;
    }
    if let Some(kp) = &kde_data {
        let batch = io::read_path_batch(kp)?;
        if kde_channel >= batch.channels() {
            return Err(Error::input(format!(
                "kde channel {kde_channel} out of range for {} channels",
                batch.channels()
            )));
        }
        let times = batch.times();
        let t = kde_time.unwrap_or_else(|| *times.last().expect("non-empty grid"));
        let (j, tj) = times
            .iter()
            .enumerate()
            .min_by(|(_, x), (_, y)| {
                (*x - t).abs().partial_cmp(&(*y - t).abs()).expect("finite times")
            })
            .map(|(j, x)| (j, *x))
            .expect("non-empty grid");
        if (tj - t).abs() > 1e-6 {
            return Err(Error::input(format!(
                "no grid time within 1e-6 of kde time {t}; nearest is {tj}"
            )));
        }
        let samples = batch.cross_section(j, kde_channel);
        let (grid, density) = kde_density(&samples, kde_bandwidth)?;
        io::write_kde_table(&out.join("kde.csv"), &grid, &density)?;
        entries.push(kv("kde_data", kp.display().to_string()));
        entries.push(kv("kde_bandwidth", format_float(kde_bandwidth)));
        entries.push(kv("kde_channel", kde_channel.to_string()));
        entries.push(kv("kde_time", format_float(t)));
    }
    write_section_config(&out.join("config.txt"), "report", &entries)
}
