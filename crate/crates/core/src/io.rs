//! Artifact serialization: path-batch CSV, network and generator files,
//! run manifests, loss traces, and metric reports.
//!
//! Every float is written with 17 significant digits (`{:.16e}`), which
//! round-trips f64 exactly; re-reading any artifact reproduces the value
//! bit for bit.

use crate::dcgan::{DcGenerator, InitFamily, InitSampler};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::nn::{Activation, MlpParams};
use crate::path::{PathBatch, TimeGrid};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

/// Exact-round-trip float rendering.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::input(format!("cannot read {}: {e}", path.display())))
}

fn parse_float(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::format(format!("bad {what}: '{s}'")))
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim()
        .parse::<usize>()
        .map_err(|_| Error::format(format!("bad {what}: '{s}'")))
}

/// Write a batch as `series_id,t,ch0,...,ch{N-1}` rows grouped by series.
pub fn write_path_batch(path: &Path, batch: &PathBatch) -> Result<()> {
    let n = batch.channels();
    let mut out = String::from("series_id,t");
    for ch in 0..n {
        write!(out, ",ch{ch}").unwrap();
    }
    out.push('\n');
    for i in 0..batch.len() {
        for (j, &t) in batch.times().iter().enumerate() {
            write!(out, "{i},{}", format_float(t)).unwrap();
            for &v in batch.row(i, j) {
                write!(out, ",{}", format_float(v)).unwrap();
            }
            out.push('\n');
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a batch written by [`write_path_batch`] (or any CSV matching the
/// schema).  All series must share one time grid.
pub fn read_path_batch(path: &Path) -> Result<PathBatch> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format("empty path CSV"))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[0] != "series_id" || cols[1] != "t" {
        return Err(Error::format("path CSV header must be series_id,t,ch0,..."));
    }
    for (ch, col) in cols[2..].iter().enumerate() {
        if *col != format!("ch{ch}") {
            return Err(Error::format(format!("unexpected channel column '{col}'")));
        }
    }
    let n = cols.len() - 2;

    // (id, times, values) per series, in order of first appearance
    let mut series: Vec<(String, Vec<f64>, Vec<f64>)> = Vec::new();
    let mut closed: Vec<String> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::format(format!(
                "line {}: {} fields, expected {}",
                lineno + 2,
                fields.len(),
                cols.len()
            )));
        }
        let id = fields[0].trim();
        let t = parse_float(fields[1], "time")?;
        if series.last().map(|(sid, _, _)| sid.as_str()) != Some(id) {
            if closed.iter().any(|c| c == id) {
                return Err(Error::format(format!(
                    "series '{id}' appears in two non-contiguous blocks"
                )));
            }
            if let Some((sid, _, _)) = series.last() {
                closed.push(sid.clone());
            }
            series.push((id.to_string(), Vec::new(), Vec::new()));
        }
        let (_, times, values) = series.last_mut().unwrap();
        if let Some(&prev) = times.last() {
            if t <= prev {
                return Err(Error::format(format!(
                    "series '{id}': time {t} does not increase past {prev}"
                )));
            }
        }
        times.push(t);
        for f in &fields[2..] {
            values.push(parse_float(f, "value")?);
        }
    }
    if series.is_empty() {
        return Err(Error::format("path CSV has no data rows"));
    }
    let (ref id0, ref times0, _) = series[0];
    for (id, times, _) in &series[1..] {
        if times != times0 {
            return Err(Error::format(format!(
                "series '{id0}' and '{id}' are on different time grids"
            )));
        }
    }
    let grid = TimeGrid::new(times0.clone())?;
    let mut values = Vec::with_capacity(series.len() * times0.len() * n);
    for (_, _, v) in &series {
        values.extend_from_slice(v);
    }
    PathBatch::new(grid, n, series.len(), values)
}

/// Write network parameters as `layer,kind,row,col,value` rows.
pub fn write_mlp(path: &Path, params: &MlpParams) -> Result<()> {
    let mut out = String::from("layer,kind,row,col,value\n");
    for l in 0..params.n_layers() {
        let (nin, nout) = (params.sizes()[l], params.sizes()[l + 1]);
        let w = params.weight(l);
        for r in 0..nout {
            for c in 0..nin {
                writeln!(out, "{l},weight,{r},{c},{}", format_float(w[r * nin + c])).unwrap();
            }
        }
        for (r, &b) in params.bias(l).iter().enumerate() {
            writeln!(out, "{l},bias,{r},0,{}", format_float(b)).unwrap();
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a network written by [`write_mlp`]; activation and init seed come
/// from the caller (the generator sidecar carries them).
pub fn read_mlp(path: &Path, activation: Activation, init_seed: u64) -> Result<MlpParams> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("layer,kind,row,col,value") => {}
        _ => return Err(Error::format("mlp CSV header must be layer,kind,row,col,value")),
    }
    // per-layer sparse collection, then shape inference
    let mut weights: Vec<Vec<(usize, usize, f64)>> = Vec::new();
    let mut biases: Vec<Vec<(usize, f64)>> = Vec::new();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::format(format!("bad mlp row '{line}'")));
        }
        let l = parse_usize(f[0], "layer")?;
        let r = parse_usize(f[2], "row")?;
        let c = parse_usize(f[3], "col")?;
        let v = parse_float(f[4], "value")?;
        while weights.len() <= l {
            weights.push(Vec::new());
            biases.push(Vec::new());
        }
        match f[1] {
            "weight" => weights[l].push((r, c, v)),
            "bias" => biases[l].push((r, v)),
            other => return Err(Error::format(format!("unknown mlp entry kind '{other}'"))),
        }
    }
    if weights.is_empty() {
        return Err(Error::format("mlp CSV has no parameter rows"));
    }
    let mut sizes = Vec::with_capacity(weights.len() + 1);
    let mut w_mats = Vec::with_capacity(weights.len());
    let mut b_vecs = Vec::with_capacity(weights.len());
    for (l, (ws, bs)) in weights.iter().zip(&biases).enumerate() {
        let nout = ws.iter().map(|&(r, _, _)| r + 1).max().unwrap_or(0);
        let nin = ws.iter().map(|&(_, c, _)| c + 1).max().unwrap_or(0);
        if nout == 0 || nin == 0 || ws.len() != nout * nin || bs.len() != nout {
            return Err(Error::format(format!("layer {l} has an incomplete parameter set")));
        }
        let mut w = vec![f64::NAN; nout * nin];
        for &(r, c, v) in ws {
            w[r * nin + c] = v;
        }
        let mut b = vec![f64::NAN; nout];
        for &(r, v) in bs {
            b[r] = v;
        }
        if w.iter().chain(&b).any(|v| v.is_nan()) {
            return Err(Error::format(format!("layer {l} has duplicate or missing entries")));
        }
        if l == 0 {
            sizes.push(nin);
        } else if sizes[l] != nin {
            return Err(Error::format(format!(
                "layer {l} input width {nin} does not chain from previous output {}",
                sizes[l]
            )));
        }
        sizes.push(nout);
        w_mats.push(w);
        b_vecs.push(b);
    }
    MlpParams::from_parts(sizes, w_mats, b_vecs, activation, init_seed)
}

#[derive(Serialize, Deserialize)]
struct GeneratorSidecar {
    state_dim: usize,
    noise_dim: usize,
    neighbor_masked: bool,
    init_family: String,
    init_params: Vec<(f64, f64)>,
    seed: u64,
    config_hash: u64,
    time_scale: f64,
    activation: String,
    v0_seed: u64,
    v1_seed: u64,
    /// Whether the training loss appended a time channel before signatures
    /// (done exactly when the state is one-dimensional).
    loss_time_channel: bool,
}

/// Persist a generator as `v0.csv` + `v1.csv` + `generator.json` under `dir`.
pub fn save_generator(dir: &Path, gen: &DcGenerator) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_mlp(&dir.join("v0.csv"), gen.v0())?;
    write_mlp(&dir.join("v1.csv"), gen.v1())?;
    let sidecar = GeneratorSidecar {
        state_dim: gen.state_dim(),
        noise_dim: gen.noise_dim(),
        neighbor_masked: gen.neighbor_masked(),
        init_family: gen.init_sampler().family().name().to_string(),
        init_params: gen.init_sampler().params().to_vec(),
        seed: gen.seed(),
        config_hash: gen.config_hash(),
        time_scale: gen.time_scale(),
        activation: gen.v0().activation().name().to_string(),
        v0_seed: gen.v0().init_seed(),
        v1_seed: gen.v1().init_seed(),
        loss_time_channel: gen.state_dim() == 1,
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| Error::format(format!("sidecar encoding failed: {e}")))?;
    fs::write(dir.join("generator.json"), json + "\n")?;
    Ok(())
}

/// Reload a generator saved by [`save_generator`], bit-exactly.
pub fn load_generator(dir: &Path) -> Result<DcGenerator> {
    let json = read_file(&dir.join("generator.json"))?;
    let sc: GeneratorSidecar =
        serde_json::from_str(&json).map_err(|e| Error::format(format!("bad sidecar: {e}")))?;
    if sc.loss_time_channel != (sc.state_dim == 1) {
        return Err(Error::format(
            "sidecar loss_time_channel is inconsistent with state_dim",
        ));
    }
    let activation = Activation::parse(&sc.activation)?;
    let v0 = read_mlp(&dir.join("v0.csv"), activation, sc.v0_seed)?;
    let v1 = read_mlp(&dir.join("v1.csv"), activation, sc.v1_seed)?;
    let family = InitFamily::parse(&sc.init_family)?;
    let init = match family {
        InitFamily::Gaussian => InitSampler::gaussian(sc.init_params),
        InitFamily::Uniform => InitSampler::uniform(sc.init_params),
    };
    let gen = DcGenerator::new(
        v0,
        v1,
        sc.state_dim,
        sc.noise_dim,
        sc.neighbor_masked,
        init,
        sc.seed,
    )?;
    gen.with_time_scale(sc.time_scale)
        .map(|g| g.with_config_hash(sc.config_hash))
}

/// Write ordered `key = value` lines.
pub fn write_manifest(path: &Path, entries: &[(String, String)]) -> Result<()> {
    let mut out = String::new();
    for (k, v) in entries {
        writeln!(out, "{k} = {v}").unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

/// Read a `key = value` manifest; blank lines and `#` comments are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = read_file(path)?;
    let mut entries = Vec::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("manifest line without '=': '{line}'")))?;
        entries.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(entries)
}

pub fn manifest_get<'a>(entries: &'a [(String, String)], key: &str) -> Result<&'a str> {
    entries
        .iter()
        .find(|(k, _)| k == key)
        .map(|(_, v)| v.as_str())
        .ok_or_else(|| Error::format(format!("manifest is missing '{key}'")))
}

/// `step,loss` rows.
pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    let mut out = String::from("step,loss\n");
    for (i, &l) in trace.iter().enumerate() {
        writeln!(out, "{i},{}", format_float(l)).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}

const REPORT_HEADER: &str =
    "sig_mmd,independence,discriminative,predictive,timestamps,seed,config_hash,model_note";

fn opt_field(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

fn parse_opt(s: &str, what: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_float(s, what).map(Some)
    }
}

/// One-row CSV serialization of a report.
pub fn write_metric_report(path: &Path, report: &MetricReport) -> Result<()> {
    report.validate()?;
    let ts = report
        .timestamps
        .iter()
        .map(|&t| format_float(t))
        .collect::<Vec<_>>()
        .join(";");
    let row = format!(
        "{}\n{},{},{},{},{},{},{},{}\n",
        REPORT_HEADER,
        opt_field(report.sig_mmd),
        opt_field(report.independence),
        opt_field(report.discriminative),
        opt_field(report.predictive),
        ts,
        report.seed,
        report.config_hash,
        report.model_note,
    );
    fs::write(path, row)?;
    Ok(())
}

pub fn read_metric_report(path: &Path) -> Result<MetricReport> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(REPORT_HEADER) {
        return Err(Error::format("unexpected metric report header"));
    }
    let row = lines.next().ok_or_else(|| Error::format("metric report has no data row"))?;
    let f: Vec<&str> = row.splitn(8, ',').collect();
    if f.len() != 8 {
        return Err(Error::format("metric report row needs 8 fields"));
    }
    let timestamps = if f[4].is_empty() {
        Vec::new()
    } else {
        f[4].split(';').map(|s| parse_float(s, "timestamp")).collect::<Result<_>>()?
    };
    let report = MetricReport {
        sig_mmd: parse_opt(f[0], "sig_mmd")?,
        independence: parse_opt(f[1], "independence")?,
        discriminative: parse_opt(f[2], "discriminative")?,
        predictive: parse_opt(f[3], "predictive")?,
        timestamps,
        seed: f[5].trim().parse().map_err(|_| Error::format("bad seed"))?,
        config_hash: f[6].trim().parse().map_err(|_| Error::format("bad config hash"))?,
        model_note: f[7].to_string(),
    };
    report.validate()?;
    Ok(report)
}

fn md_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".to_string())
}

/// Markdown table of labeled reports, one row per run.
pub fn metric_reports_markdown(rows: &[(String, MetricReport)]) -> String {
    let mut out = String::from(
        "| run | discriminative | predictive | sig-MMD | independence |\n|---|---|---|---|---|\n",
    );
    for (name, r) in rows {
        writeln!(
            out,
            "| {} | {} | {} | {} | {} |",
            name,
            md_cell(r.discriminative),
            md_cell(r.predictive),
            md_cell(r.sig_mmd),
            md_cell(r.independence),
        )
        .unwrap();
    }
    out
}

/// `x,density` rows of a kernel density table for external plotting.
pub fn write_kde_table(path: &Path, grid: &[f64], density: &[f64]) -> Result<()> {
    let mut out = String::from("x,density\n");
    for (x, d) in grid.iter().zip(density) {
        writeln!(out, "{},{}", format_float(*x), format_float(*d)).unwrap();
    }
    fs::write(path, out)?;
    Ok(())
}
