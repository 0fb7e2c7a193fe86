//! Feed-forward networks and the Adam optimizer.
//!
//! Networks are plain fully connected stacks: affine, activation on every
//! hidden layer, affine output.  Initialization is Glorot-uniform and fully
//! determined by a seed.  Adam follows the usual bias-corrected update with a
//! step-decayed learning rate (`lr * factor^(step / period)`).

use crate::autodiff::{Shape, Tape, Var};
use crate::error::{Error, Result};
use crate::noise::NoiseStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::format(format!("unknown activation '{other}'"))),
        }
    }
}

/// Parameters of one fully connected network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    sizes: Vec<usize>,
    /// weights[l] has shape (sizes[l+1] x sizes[l]), row-major.
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    init_seed: u64,
}

/// Glorot-uniform initialization, biases zero, deterministic in `seed`.
pub fn mlp_init(sizes: &[usize], seed: u64) -> Result<MlpParams> {
    mlp_init_scaled(sizes, seed, 1.0)
}

/// Like [`mlp_init`] with the weight scale multiplied by `scale`
/// (`scale = 0` gives the zero map; useful in tests).
pub fn mlp_init_scaled(sizes: &[usize], seed: u64, scale: f64) -> Result<MlpParams> {
    if sizes.len() < 2 {
        return Err(Error::input("mlp needs at least input and output sizes"));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::input("mlp layer sizes must be positive"));
    }
    let stream = NoiseStream::new(seed).substream(0x6d6c70);
    let mut weights = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for l in 0..sizes.len() - 1 {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        let bound = scale * (6.0 / (fan_in + fan_out) as f64).sqrt();
        let mut w = Vec::with_capacity(fan_out * fan_in);
        for i in 0..fan_out {
            for j in 0..fan_in {
                let u = stream.uniform(l as u64, i as u64, j as u64);
                w.push(bound * (2.0 * u - 1.0));
            }
        }
        weights.push(w);
        biases.push(vec![0.0; fan_out]);
    }
    Ok(MlpParams { sizes: sizes.to_vec(), weights, biases, activation: Activation::Tanh, init_seed: seed })
}

impl MlpParams {
    pub fn from_parts(
        sizes: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
        activation: Activation,
        init_seed: u64,
    ) -> Result<Self> {
        if sizes.len() < 2 || weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(Error::input("inconsistent mlp layer counts"));
        }
        for l in 0..weights.len() {
            if weights[l].len() != sizes[l + 1] * sizes[l] || biases[l].len() != sizes[l + 1] {
                return Err(Error::input(format!("layer {l} has wrong parameter shape")));
            }
        }
        if weights.iter().chain(&biases).flatten().any(|v| !v.is_finite()) {
            return Err(Error::numeric("mlp parameters must be finite"));
        }
        Ok(MlpParams { sizes, weights, biases, activation, init_seed })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        &self.biases[layer]
    }

    /// Plain (untaped) forward pass for one input vector.
    pub fn eval(&self, input: &[f64]) -> Vec<f64> {
        debug_assert_eq!(input.len(), self.sizes[0]);
        let mut x = input.to_vec();
        for l in 0..self.weights.len() {
            let (nin, nout) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.weights[l];
            let b = &self.biases[l];
            let mut y = Vec::with_capacity(nout);
            for i in 0..nout {
                let row = &w[i * nin..(i + 1) * nin];
                let mut s = b[i];
                for (rv, xv) in row.iter().zip(&x) {
                    s += rv * xv;
                }
                y.push(s);
            }
            if l + 1 < self.weights.len() {
                match self.activation {
                    Activation::Tanh => y.iter_mut().for_each(|v| *v = v.tanh()),
                    Activation::Relu => y.iter_mut().for_each(|v| *v = v.max(0.0)),
                    Activation::Identity => {}
                }
            }
            x = y;
        }
        x
    }
}

/// Leaves of one network on a tape, ready for repeated forwards.
pub struct MlpVars {
    weights: Vec<Var>,
    /// transposed weights, materialized once per tape
    weights_t: Vec<Var>,
    biases: Vec<Var>,
    sizes: Vec<usize>,
    activation: Activation,
}

impl MlpVars {
    /// Record the parameters as differentiable leaves.
    pub fn bind(tape: &mut Tape, params: &MlpParams) -> Result<Self> {
        let mut weights = Vec::new();
        let mut weights_t = Vec::new();
        let mut biases = Vec::new();
        for l in 0..params.n_layers() {
            let (nin, nout) = (params.sizes[l], params.sizes[l + 1]);
            let w = tape.leaf(params.weights[l].clone(), Shape::Matrix(nout, nin))?;
            weights.push(w);
            weights_t.push(tape.transpose(w)?);
            biases.push(tape.leaf(params.biases[l].clone(), Shape::Vector(nout))?);
        }
        Ok(MlpVars {
            weights,
            weights_t,
            biases,
            sizes: params.sizes.clone(),
            activation: params.activation,
        })
    }

    /// Assemble from variables already on the tape (e.g. slices of a flat
    /// parameter vector).  Shapes must match `sizes`; weight transposes are
    /// materialized here.
    pub fn from_vars(
        tape: &mut Tape,
        sizes: Vec<usize>,
        weights: Vec<Var>,
        biases: Vec<Var>,
        activation: Activation,
    ) -> Result<Self> {
        if sizes.len() < 2 || weights.len() != sizes.len() - 1 || biases.len() != sizes.len() - 1 {
            return Err(Error::input("inconsistent mlp layer counts"));
        }
        let mut weights_t = Vec::with_capacity(weights.len());
        for l in 0..weights.len() {
            let (nin, nout) = (sizes[l], sizes[l + 1]);
            if weights[l].shape() != Shape::Matrix(nout, nin) {
                return Err(Error::input(format!(
                    "layer {l}: weight var shape {:?}, expected {nout} x {nin}",
                    weights[l].shape()
                )));
            }
            if biases[l].shape() != Shape::Vector(nout) {
                return Err(Error::input(format!(
                    "layer {l}: bias var shape {:?}, expected vector of {nout}",
                    biases[l].shape()
                )));
            }
            weights_t.push(tape.transpose(weights[l])?);
        }
        Ok(MlpVars { weights, weights_t, biases, sizes, activation })
    }

    /// Forward for a batch: input `Matrix(batch, sizes[0])`, output
    /// `Matrix(batch, sizes.last())`.
    pub fn forward(&self, tape: &mut Tape, input: Var) -> Result<Var> {
        match input.shape() {
            Shape::Matrix(_, c) if c == self.sizes[0] => {}
            other => {
                return Err(Error::input(format!(
                    "mlp forward: input shape {other:?}, expected batch x {}",
                    self.sizes[0]
                )))
            }
        }
        let mut x = input;
        for l in 0..self.weights.len() {
            let z = tape.matmul(x, self.weights_t[l])?;
            let z = tape.add_row(z, self.biases[l])?;
            x = if l + 1 < self.weights.len() {
                match self.activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                    Activation::Identity => z,
                }
            } else {
                z
            };
        }
        Ok(x)
    }

    pub fn weight_vars(&self) -> &[Var] {
        &self.weights
    }

    pub fn bias_vars(&self) -> &[Var] {
        &self.biases
    }
}

/// Taped forward pass for a single input vector; binds fresh leaves.
pub fn mlp_forward(params: &MlpParams, tape: &mut Tape, input: Var) -> Result<Var> {
    match input.shape() {
        Shape::Vector(n) if n == params.sizes[0] => {}
        other => {
            return Err(Error::input(format!(
                "mlp forward: input shape {other:?}, expected vector of {}",
                params.sizes[0]
            )))
        }
    }
    let mut x = input;
    for l in 0..params.n_layers() {
        let (nin, nout) = (params.sizes[l], params.sizes[l + 1]);
        let w = tape.leaf(params.weights[l].clone(), Shape::Matrix(nout, nin))?;
        let b = tape.leaf(params.biases[l].clone(), Shape::Vector(nout))?;
        let z = tape.matvec(w, x)?;
        let z = tape.add(z, b)?;
        x = if l + 1 < params.n_layers() {
            match params.activation {
                Activation::Tanh => tape.tanh(z),
                Activation::Relu => tape.relu(z),
                Activation::Identity => z,
            }
        } else {
            z
        };
    }
    Ok(x)
}

/// Gradients for one network, shaped like its parameters.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn from_tape(grads: &crate::autodiff::Gradients, vars: &MlpVars) -> Self {
        MlpGrads {
            weights: vars.weights.iter().map(|&w| grads.get_or_zero(w)).collect(),
            biases: vars.biases.iter().map(|&b| grads.get_or_zero(b)).collect(),
        }
    }
}

/// Adam accumulators plus the decay schedule.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Vec<f64>>,
    v_w: Vec<Vec<f64>>,
    m_b: Vec<Vec<f64>>,
    v_b: Vec<Vec<f64>>,
    step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_factor: f64,
    pub decay_period: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams, lr: f64, decay_factor: f64, decay_period: u64) -> Self {
        AdamState {
            m_w: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            v_w: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            m_b: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            v_b: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            decay_factor,
            decay_period,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Learning rate the next [`adam_step`] call will use.
    pub fn effective_lr(&self) -> f64 {
        if self.decay_period == 0 {
            return self.lr;
        }
        self.lr * self.decay_factor.powi((self.step / self.decay_period) as i32)
    }
}

/// One Adam update; rejects non-finite gradients without touching state.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    if grads.weights.len() != params.weights.len() || grads.biases.len() != params.biases.len() {
        return Err(Error::input("adam_step: gradient layer count mismatch"));
    }
    for (g, p) in grads.weights.iter().zip(&params.weights) {
        if g.len() != p.len() {
            return Err(Error::input("adam_step: weight gradient shape mismatch"));
        }
    }
    for (g, p) in grads.biases.iter().zip(&params.biases) {
        if g.len() != p.len() {
            return Err(Error::input("adam_step: bias gradient shape mismatch"));
        }
    }
    if grads.weights.iter().chain(&grads.biases).flatten().any(|v| !v.is_finite()) {
        return Err(Error::numeric(format!(
            "adam_step: non-finite gradient at step {}",
            state.step
        )));
    }
    let lr = state.effective_lr();
    let t = state.step + 1;
    let bc1 = 1.0 - state.beta1.powi(t as i32);
    let bc2 = 1.0 - state.beta2.powi(t as i32);
    let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
        for i in 0..p.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    };
    for l in 0..params.weights.len() {
        update(&mut params.weights[l], &grads.weights[l], &mut state.m_w[l], &mut state.v_w[l]);
        update(&mut params.biases[l], &grads.biases[l], &mut state.m_b[l], &mut state.v_b[l]);
    }
    state.step = t;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = mlp_init(&[3, 128, 128, 2], 9).unwrap();
        let b = mlp_init(&[3, 128, 128, 2], 9).unwrap();
        assert_eq!(a, b);
        let c = mlp_init(&[3, 128, 128, 2], 10).unwrap();
        let total: usize = a.weights.iter().map(|w| w.len()).sum();
        let differing = a
            .weights
            .iter()
            .flatten()
            .zip(c.weights.iter().flatten())
            .filter(|(x, y)| x != y)
            .count();
        assert!(differing * 100 >= total * 99, "{differing}/{total} entries differ");
    }

    #[test]
    fn init_respects_glorot_bound_and_zero_scale() {
        let p = mlp_init(&[4, 8], 3).unwrap();
        let bound = (6.0 / 12.0f64).sqrt();
        assert!(p.weights[0].iter().all(|w| w.abs() <= bound));
        assert!(p.biases[0].iter().all(|&b| b == 0.0));
        let z = mlp_init_scaled(&[1, 1], 3, 0.0).unwrap();
        assert_eq!(z.eval(&[123.0]), vec![0.0]);
        assert!(mlp_init(&[], 0).is_err());
        assert!(mlp_init(&[3], 0).is_err());
    }

    #[test]
    fn eval_zero_weights_returns_bias() {
        let mut p = mlp_init_scaled(&[2, 3, 2], 1, 0.0).unwrap();
        p.biases[1] = vec![0.25, -0.5];
        assert_eq!(p.eval(&[7.0, -3.0]), vec![0.25, -0.5]);
    }

    #[test]
    fn single_layer_is_affine() {
        let p = MlpParams::from_parts(
            vec![1, 1],
            vec![vec![2.0]],
            vec![vec![0.5]],
            Activation::Tanh,
            0,
        )
        .unwrap();
        assert_eq!(p.eval(&[3.0]), vec![6.5]);
    }

    #[test]
    fn taped_forward_matches_eval() {
        let p = mlp_init(&[2, 4, 1], 5).unwrap();
        let stream = NoiseStream::new(8);
        for trial in 0..10 {
            let x = [stream.gaussian(trial, 0, 0), stream.gaussian(trial, 1, 0)];
            let direct = p.eval(&x);
            let mut tape = Tape::new();
            let xv = tape.constant(x.to_vec(), Shape::Vector(2)).unwrap();
            let y = mlp_forward(&p, &mut tape, xv).unwrap();
            assert_abs_diff_eq!(tape.value(y)[0], direct[0], epsilon = 1e-12);
            // batched path, one row
            let mut tape2 = Tape::new();
            let vars = MlpVars::bind(&mut tape2, &p).unwrap();
            let xm = tape2.constant(x.to_vec(), Shape::Matrix(1, 2)).unwrap();
            let ym = vars.forward(&mut tape2, xm).unwrap();
            assert_abs_diff_eq!(tape2.value(ym)[0], direct[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut p = mlp_init(&[2, 3, 1], 2).unwrap();
        let orig = p.clone();
        let mut st = AdamState::new(&p, 0.01, 0.1, 500);
        let g = MlpGrads {
            weights: p.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: p.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        };
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(p, orig);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = mlp_init(&[1, 1], 2).unwrap();
        let orig = p.clone();
        let mut st = AdamState::new(&p, 0.01, 0.1, 500);
        let g = MlpGrads { weights: vec![vec![f64::NAN]], biases: vec![vec![0.0]] };
        assert!(adam_step(&mut p, &g, &mut st).is_err());
        assert_eq!(p, orig);
        assert_eq!(st.step_count(), 0);
    }

    #[test]
    fn adam_minimizes_scalar_quadratic() {
        // f(w) = w^2 on a 1x1 zero-bias "network"
        let mut p = MlpParams::from_parts(
            vec![1, 1],
            vec![vec![1.0]],
            vec![vec![0.0]],
            Activation::Tanh,
            0,
        )
        .unwrap();
        let mut st = AdamState::new(&p, 0.1, 1.0, 0);
        for _ in 0..200 {
            let w = p.weights[0][0];
            let g = MlpGrads { weights: vec![vec![2.0 * w]], biases: vec![vec![0.0]] };
            adam_step(&mut p, &g, &mut st).unwrap();
        }
        assert!(p.weights[0][0].abs() < 1e-2, "w = {}", p.weights[0][0]);
    }

    #[test]
    fn lr_decays_to_one_tenth_at_period() {
        let p = mlp_init(&[1, 1], 0).unwrap();
        let mut st = AdamState::new(&p, 0.001, 0.1, 500);
        assert_abs_diff_eq!(st.effective_lr(), 0.001, epsilon = 1e-18);
        st.step = 499;
        assert_abs_diff_eq!(st.effective_lr(), 0.001, epsilon = 1e-18);
        st.step = 500;
        assert_abs_diff_eq!(st.effective_lr(), 0.0001, epsilon = 1e-18);
        st.step = 1000;
        assert_abs_diff_eq!(st.effective_lr(), 0.00001, epsilon = 1e-18);
    }
}
