//! The directed-chain generator, its signature-Wasserstein training loop,
//! and the decorrelate-and-branch sampler.
//!
//! A generator is the pair of coefficient networks of the chain SDE
//! `dX = V0(t, X, X~) dt + V1(t, X, X~) dB` together with the sampler for the
//! initial value.  Training drives the expected truncated signature of
//! generated paths toward that of the data while the data itself rides along
//! as the neighborhood process; sampling walks the chain to decorrelate the
//! output from the seed data.

use crate::autodiff::{Shape, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{adam_step, mlp_init, AdamState, MlpGrads, MlpParams, MlpVars};
use crate::noise::NoiseStream;
use crate::path::PathBatch;
use crate::sde::{brownian_path, dc_generate};
use crate::signature::{expected_signature, time_augment};
use rayon::prelude::*;

const TAG_V0: u64 = 0x7630;
const TAG_V1: u64 = 0x7631;
const TAG_XI: u64 = 0x5849;
const TAG_BM: u64 = 0x424d;
const TAG_MINIBATCH: u64 = 0x4d42;
const TAG_WALK: u64 = 0x574b;
const TAG_CHAIN: u64 = 0x4348;
const TAG_PAIR: u64 = 0x5052;

/// Distribution family for the initial value ξ.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitFamily {
    Gaussian,
    Uniform,
}

impl InitFamily {
    pub fn name(&self) -> &'static str {
        match self {
            InitFamily::Gaussian => "gaussian",
            InitFamily::Uniform => "uniform",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(InitFamily::Gaussian),
            "uniform" => Ok(InitFamily::Uniform),
            other => Err(Error::format(format!("unknown init family '{other}'"))),
        }
    }
}

/// Per-channel sampler for ξ: Gaussian (mean, std) or Uniform (low, high).
#[derive(Debug, Clone, PartialEq)]
pub struct InitSampler {
    family: InitFamily,
    params: Vec<(f64, f64)>,
}

impl InitSampler {
    pub fn gaussian(params: Vec<(f64, f64)>) -> Self {
        InitSampler { family: InitFamily::Gaussian, params }
    }

    pub fn uniform(params: Vec<(f64, f64)>) -> Self {
        InitSampler { family: InitFamily::Uniform, params }
    }

    /// Fit per-channel parameters to the first row of `data`: moments for the
    /// Gaussian family, the exact range for the uniform one.
    pub fn fit(family: InitFamily, data: &PathBatch) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::input("cannot fit init sampler to an empty batch"));
        }
        let m = data.len() as f64;
        let params = (0..data.channels())
            .map(|ch| {
                let xs = data.cross_section(0, ch);
                match family {
                    InitFamily::Gaussian => {
                        let mean = xs.iter().sum::<f64>() / m;
                        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / m;
                        (mean, var.sqrt())
                    }
                    InitFamily::Uniform => {
                        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
                        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                        (lo, hi)
                    }
                }
            })
            .collect();
        Ok(InitSampler { family, params })
    }

    pub fn family(&self) -> InitFamily {
        self.family
    }

    pub fn params(&self) -> &[(f64, f64)] {
        &self.params
    }

    pub fn dim(&self) -> usize {
        self.params.len()
    }

    fn validate(&self) -> Result<()> {
        for &(a, b) in &self.params {
            if !a.is_finite() || !b.is_finite() {
                return Err(Error::input("init sampler parameters must be finite"));
            }
            match self.family {
                InitFamily::Gaussian if b < 0.0 => {
                    return Err(Error::input("gaussian init needs std >= 0"));
                }
                InitFamily::Uniform if b < a => {
                    return Err(Error::input("uniform init needs low <= high"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// One ξ draw, keyed by `(path, round)`.
    pub fn sample(&self, stream: &NoiseStream, path: u64, round: u64) -> Vec<f64> {
        self.params
            .iter()
            .enumerate()
            .map(|(ch, &(a, b))| match self.family {
                InitFamily::Gaussian => a + b * stream.gaussian(path, round, ch as u64),
                InitFamily::Uniform => a + (b - a) * stream.uniform(path, round, ch as u64),
            })
            .collect()
    }
}

/// Coefficient networks plus sampling metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct DcGenerator {
    v0: MlpParams,
    v1: MlpParams,
    state_dim: usize,
    noise_dim: usize,
    neighbor_masked: bool,
    init: InitSampler,
    seed: u64,
    config_hash: u64,
    time_scale: f64,
}

impl DcGenerator {
    pub fn new(
        v0: MlpParams,
        v1: MlpParams,
        state_dim: usize,
        noise_dim: usize,
        neighbor_masked: bool,
        init: InitSampler,
        seed: u64,
    ) -> Result<Self> {
        if state_dim == 0 || noise_dim == 0 {
            return Err(Error::input("generator dims must be positive"));
        }
        let inp = 1 + 2 * state_dim;
        if v0.input_dim() != inp || v0.output_dim() != state_dim {
            return Err(Error::input(format!(
                "v0 must map {inp} -> {state_dim}, got {} -> {}",
                v0.input_dim(),
                v0.output_dim()
            )));
        }
        if v1.input_dim() != inp || v1.output_dim() != state_dim * noise_dim {
            return Err(Error::input(format!(
                "v1 must map {inp} -> {}, got {} -> {}",
                state_dim * noise_dim,
                v1.input_dim(),
                v1.output_dim()
            )));
        }
        if init.dim() != state_dim {
            return Err(Error::input(format!(
                "init sampler has {} channels, state dim is {state_dim}",
                init.dim()
            )));
        }
        init.validate()?;
        Ok(DcGenerator {
            v0,
            v1,
            state_dim,
            noise_dim,
            neighbor_masked,
            init,
            seed,
            config_hash: 0,
            time_scale: 1.0,
        })
    }

    pub fn v0(&self) -> &MlpParams {
        &self.v0
    }

    pub fn v1(&self) -> &MlpParams {
        &self.v1
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn neighbor_masked(&self) -> bool {
        self.neighbor_masked
    }

    pub fn init_sampler(&self) -> &InitSampler {
        &self.init
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config_hash(&self) -> u64 {
        self.config_hash
    }

    pub fn with_config_hash(mut self, hash: u64) -> Self {
        self.config_hash = hash;
        self
    }

    pub fn time_scale(&self) -> f64 {
        self.time_scale
    }

    pub fn with_time_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::input("time scale must be positive and finite"));
        }
        self.time_scale = scale;
        Ok(self)
    }
}

/// Training hyperparameters.  The run seed is passed to [`train_sigwgan`]
/// separately so one config can drive several seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Signature truncation depth m.
    pub depth: usize,
    pub batch: usize,
    /// Total optimizer steps E.
    pub steps: usize,
    pub lr: f64,
    pub lr_decay_factor: f64,
    /// Steps between decays; 0 keeps the rate constant.
    pub lr_decay_period: u64,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub hidden: Vec<usize>,
    pub init_family: InitFamily,
    pub neighbor_masked: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            depth: 4,
            batch: 256,
            steps: 500,
            lr: 1e-3,
            lr_decay_factor: 0.1,
            lr_decay_period: 500,
            state_dim: 1,
            noise_dim: 3,
            hidden: vec![64, 64],
            init_family: InitFamily::Gaussian,
            neighbor_masked: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::input("signature depth must be >= 1"));
        }
        if self.batch == 0 {
            return Err(Error::input("batch size must be >= 1"));
        }
        if self.state_dim == 0 || self.noise_dim == 0 {
            return Err(Error::input("state and noise dims must be positive"));
        }
        if !(self.lr > 0.0) || !(self.lr_decay_factor > 0.0) {
            return Err(Error::input("learning rate and decay factor must be positive"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::input("hidden layer sizes must be positive"));
        }
        Ok(())
    }

    /// Stable digest of every field plus the run seed; stored on trained
    /// generators so artifacts identify their provenance.
    pub fn digest(&self, seed: u64) -> u64 {
        let mut h = 0xcbf29ce484222325u64; // FNV-1a
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for v in [
            self.depth as u64,
            self.batch as u64,
            self.steps as u64,
            self.lr.to_bits(),
            self.lr_decay_factor.to_bits(),
            self.lr_decay_period,
            self.state_dim as u64,
            self.noise_dim as u64,
            self.neighbor_masked as u64,
            seed,
        ] {
            eat(&v.to_le_bytes());
        }
        eat(self.init_family.name().as_bytes());
        for &hsz in &self.hidden {
            eat(&(hsz as u64).to_le_bytes());
        }
        h
    }

    fn net_sizes(&self, out: usize) -> Vec<usize> {
        let mut sizes = vec![1 + 2 * self.state_dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(out);
        sizes
    }
}

/// Fresh Glorot-initialized generator with the ξ sampler fit to `data`.
pub fn init_generator(cfg: &TrainConfig, data: &PathBatch, seed: u64) -> Result<DcGenerator> {
    cfg.validate()?;
    if data.channels() != cfg.state_dim {
        return Err(Error::input(format!(
            "data has {} channels, config expects {}",
            data.channels(),
            cfg.state_dim
        )));
    }
    let stream = NoiseStream::new(seed);
    let v0 = mlp_init(&cfg.net_sizes(cfg.state_dim), stream.substream(TAG_V0).seed())?;
    let v1 = mlp_init(
        &cfg.net_sizes(cfg.state_dim * cfg.noise_dim),
        stream.substream(TAG_V1).seed(),
    )?;
    let init = InitSampler::fit(cfg.init_family, data)?;
    let gen = DcGenerator::new(
        v0,
        v1,
        cfg.state_dim,
        cfg.noise_dim,
        cfg.neighbor_masked,
        init,
        seed,
    )?;
    Ok(gen.with_config_hash(cfg.digest(seed)))
}

/// Same networks and sampler, neighbor inputs forced to zero.
pub fn make_baseline(cfg: &TrainConfig, data: &PathBatch, seed: u64) -> Result<DcGenerator> {
    let masked = TrainConfig { neighbor_masked: true, ..cfg.clone() };
    init_generator(&masked, data, seed)
}

/// One step of the chain on the whole batch: fresh (ξ, B) per path, path i of
/// `neighbors` feeding path i of the output.
fn chain_step(
    gen: &DcGenerator,
    neighbors: &PathBatch,
    xi_stream: &NoiseStream,
    bm_stream: &NoiseStream,
    round: u64,
    pairing: Option<&[usize]>,
) -> Result<PathBatch> {
    let grid = neighbors.grid().clone();
    let paths = (0..neighbors.len())
        .into_par_iter()
        .map(|i| {
            let xi = gen.init.sample(xi_stream, i as u64, round);
            let noise = brownian_path(gen.noise_dim, &grid, bm_stream, i as u64)?;
            let nb = neighbors.path(pairing.map_or(i, |p| p[i]));
            dc_generate(gen, &xi, &noise, &nb)
        })
        .collect::<Result<Vec<_>>>()?;
    PathBatch::from_paths(paths)
}

/// Walk the chain `q - 1` steps out from `data` (`X_1 := data`), so `q = 1`
/// is the data itself.  Keyed by `seed`; `shuffle` re-pairs neighbors
/// uniformly at every step instead of keeping lane `i` fixed.
pub fn decorrelate_with(
    data: &PathBatch,
    gen: &DcGenerator,
    q: usize,
    seed: u64,
    shuffle: bool,
) -> Result<PathBatch> {
    if q == 0 {
        return Err(Error::input("decorrelate needs q >= 1"));
    }
    if data.channels() != gen.state_dim {
        return Err(Error::input(format!(
            "data has {} channels, generator state dim is {}",
            data.channels(),
            gen.state_dim
        )));
    }
    let walk = NoiseStream::new(seed).substream(TAG_WALK);
    let mut x = data.clone();
    for k in 2..=q {
        let sub = walk.substream(k as u64);
        let perm = shuffle.then(|| {
            sub.substream(TAG_PAIR).sample_indices(0, data.len(), data.len())
        });
        x = chain_step(
            gen,
            &x,
            &sub.substream(TAG_XI),
            &sub.substream(TAG_BM),
            k as u64,
            perm.as_deref(),
        )?;
    }
    Ok(x)
}

/// [`decorrelate_with`] under the default fixed pairing.
pub fn decorrelate(data: &PathBatch, gen: &DcGenerator, q: usize, seed: u64) -> Result<PathBatch> {
    decorrelate_with(data, gen, q, seed, false)
}

/// `n_chains` decorrelating walks from the same data under disjoint noise
/// keyspaces; chain 0 reproduces `decorrelate(data, gen, q, seed)`.
pub fn branch(
    data: &PathBatch,
    gen: &DcGenerator,
    q: usize,
    n_chains: usize,
    seed: u64,
) -> Result<Vec<PathBatch>> {
    if n_chains == 0 {
        return Err(Error::input("branch needs n_chains >= 1"));
    }
    let root = NoiseStream::new(seed).substream(TAG_CHAIN);
    (0..n_chains)
        .map(|c| {
            let s = if c == 0 { seed } else { root.substream(c as u64).seed() };
            decorrelate(data, gen, q, s)
        })
        .collect()
}

/// Expected-signature distance between the generated batch and the real
/// minibatch, built on the tape.  Returns the loss node.
/// Record one minibatch's training loss on `tape`: roll lanes out of `xi`
/// under increments `db` (`b * steps * d`, row-major) with `real` as the
/// neighbor paths, then measure the expected-signature distance to `real`.
/// `v0`/`v1` must be bound on the same tape; `gen` supplies dimensions and
/// the neighbor mask.  Public for gradient checks and custom loops.
pub fn taped_loss(
    tape: &mut Tape,
    v0: &MlpVars,
    v1: &MlpVars,
    gen: &DcGenerator,
    real: &PathBatch,
    depth: usize,
    xi: Vec<f64>,
    db: &[f64],
) -> Result<Var> {
    let b = real.len();
    let n = gen.state_dim;
    let d = gen.noise_dim;
    let grid = real.grid().clone();
    let steps = grid.steps();
    let augment = n == 1;

    // Real-side target, off the tape.
    let real_sig = if augment {
        expected_signature(&time_augment(real), depth)?
    } else {
        expected_signature(real, depth)?
    };
    let target = real_sig.flatten_graded();

    // dB contraction helpers: selector folds the (b, n*d) elementwise product
    // with the tiled increments into per-state sums.
    let mut sel = vec![0.0; n * d * n];
    for i in 0..n {
        for k in 0..d {
            sel[(i * d + k) * n + i] = 1.0;
        }
    }
    let sel = tape.constant(sel, Shape::Matrix(n * d, n))?;
    let zeros_nb = if gen.neighbor_masked {
        Some(tape.constant(vec![0.0; b * n], Shape::Matrix(b, n))?)
    } else {
        None
    };

    let mut x = tape.constant(xi, Shape::Matrix(b, n))?;
    let mut levels: Option<Vec<Var>> = None;
    for j in 0..steps {
        let dt = grid.dt(j);
        let t = tape.constant(
            vec![grid.times()[j] * gen.time_scale; b],
            Shape::Matrix(b, 1),
        )?;
        let nb = match zeros_nb {
            Some(z) => z,
            None => {
                let mut vals = Vec::with_capacity(b * n);
                for r in 0..b {
                    vals.extend_from_slice(real.row(r, j));
                }
                tape.constant(vals, Shape::Matrix(b, n))?
            }
        };
        let inp = tape.concat(&[t, x, nb])?;
        let drift = v0.forward(tape, inp)?;
        let vol = v1.forward(tape, inp)?;
        let mut tiled = Vec::with_capacity(b * n * d);
        for r in 0..b {
            let row = &db[(r * steps + j) * d..(r * steps + j) * d + d];
            for _ in 0..n {
                tiled.extend_from_slice(row);
            }
        }
        let tiled = tape.constant(tiled, Shape::Matrix(b, n * d))?;
        let contracted = tape.mul(vol, tiled)?;
        let diffusion = tape.matmul(contracted, sel)?;
        let drift = tape.scalar_mul(drift, dt);
        let x_next = tape.add(x, drift)?;
        let x_next = tape.add(x_next, diffusion)?;

        let dx = tape.sub(x_next, x)?;
        let dxa = if augment {
            let dtc = tape.constant(vec![dt; b], Shape::Matrix(b, 1))?;
            tape.concat(&[dtc, dx])?
        } else {
            dx
        };
        // per-segment exponential, then one Chen step
        let mut seg = Vec::with_capacity(depth);
        seg.push(dxa);
        for k in 2..=depth {
            let o = tape.outer(seg[k - 2], dxa)?;
            seg.push(tape.scalar_mul(o, 1.0 / k as f64));
        }
        levels = Some(match levels {
            None => seg,
            Some(prev) => {
                let mut next = Vec::with_capacity(depth);
                for k in 1..=depth {
                    let mut tot = tape.add(prev[k - 1], seg[k - 1])?;
                    for i in 1..k {
                        let cross = tape.outer(prev[i - 1], seg[k - i - 1])?;
                        tot = tape.add(tot, cross)?;
                    }
                    next.push(tot);
                }
                next
            }
        });
        x = x_next;
    }

    let levels = levels.ok_or_else(|| Error::input("training grid needs at least one step"))?;
    let avg = tape.constant(vec![1.0 / b as f64; b], Shape::Matrix(1, b))?;
    let mut esig = Vec::with_capacity(depth);
    for l in &levels {
        esig.push(tape.matmul(avg, *l)?);
    }
    let fake = tape.concat(&esig)?;
    let len = target.len();
    let real_flat = tape.constant(target, Shape::Matrix(1, len))?;
    let diff = tape.sub(fake, real_flat)?;
    let sq = tape.square(diff);
    let total = tape.sum(sq);
    Ok(tape.sqrt(total))
}

/// Signature-Wasserstein training: every step draws a without-replacement
/// real minibatch, generates fakes with fresh (ξ, B) and the minibatch as
/// neighbors, and descends the expected-signature distance between the two.
/// Returns the trained generator and the per-step loss trace.
pub fn train_sigwgan(
    data: &PathBatch,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DcGenerator, Vec<f64>)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::input("training data is empty"));
    }
    if cfg.batch > data.len() {
        return Err(Error::input(format!(
            "batch {} exceeds dataset size {}",
            cfg.batch,
            data.len()
        )));
    }
    if data.grid().steps() == 0 {
        return Err(Error::input("training data needs at least one time step"));
    }
    let mut gen = init_generator(cfg, data, seed)?;
    let stream = NoiseStream::new(seed);
    let sub_mb = stream.substream(TAG_MINIBATCH);
    let sub_xi = stream.substream(TAG_XI);
    let sub_bm = stream.substream(TAG_BM);
    let steps = data.grid().steps();
    let d = cfg.noise_dim;
    let mut adam_v0 = AdamState::new(&gen.v0, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_period);
    let mut adam_v1 = AdamState::new(&gen.v1, cfg.lr, cfg.lr_decay_factor, cfg.lr_decay_period);
    let mut trace = Vec::with_capacity(cfg.steps);

    for e in 0..cfg.steps {
        let idx = sub_mb.sample_indices(e as u64, data.len(), cfg.batch);
        let real = data.select(&idx)?;
        let xi: Vec<f64> = (0..cfg.batch)
            .flat_map(|r| gen.init.sample(&sub_xi, r as u64, e as u64))
            .collect();
        let bm = sub_bm.substream(e as u64);
        let mut db = vec![0.0; cfg.batch * steps * d];
        db.par_chunks_mut(steps * d).enumerate().for_each(|(r, chunk)| {
            for j in 0..steps {
                let sd = real.grid().dt(j).sqrt();
                for k in 0..d {
                    chunk[j * d + k] = sd * bm.gaussian(r as u64, j as u64, k as u64);
                }
            }
        });

        let mut tape = Tape::new();
        let v0_vars = MlpVars::bind(&mut tape, &gen.v0)?;
        let v1_vars = MlpVars::bind(&mut tape, &gen.v1)?;
        let loss = taped_loss(&mut tape, &v0_vars, &v1_vars, &gen, &real, cfg.depth, xi, &db)?;
        let value = tape.value(loss)[0];
        if !value.is_finite() {
            return Err(Error::numeric(format!("training diverged at step {e}: loss {value}")));
        }
        trace.push(value);
        let grads = tape.backward(loss)?;
        adam_step(&mut gen.v0, &MlpGrads::from_tape(&grads, &v0_vars), &mut adam_v0)?;
        adam_step(&mut gen.v1, &MlpGrads::from_tape(&grads, &v1_vars), &mut adam_v1)?;
    }
    Ok((gen, trace))
}
