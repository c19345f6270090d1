//! Uncertainty-aware predictor `p(y | x; θ)`: a rectifier MLP whose output head
//! emits a mean and a log standard deviation per label dimension.
//!
//! Gradients are written out by hand. `backward` is linear in the output
//! gradients, which the training loop relies on to fold many per-sample energy
//! gradients into a single backward pass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{RngStream, LN_2PI};

/// Clamp range of the log-std head.
pub const LOG_SIGMA_MIN: f64 = -5.0;
pub const LOG_SIGMA_MAX: f64 = 5.0;
/// Smallest predictive standard deviation, `exp(LOG_SIGMA_MIN)`.
pub const SIGMA_FLOOR: f64 = 0.006_737_946_999_085_467;
pub const DEFAULT_INIT_SIGMA: f64 = 0.5;

/// One affine layer, weights stored row-major as `outputs x inputs`.
/// Dot product with eight interleaved partial sums (fixed summation order).
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for (o, row) in self.weights.chunks_exact(self.inputs).enumerate() {
            out.push(self.bias[o] + dot(row, input));
        }
    }
}

/// Network parameters. The last layer has `2 * label_dim` outputs: means
/// first, then raw log-stds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    pub dropout: f64,
    pub label_dim: usize,
}

/// Per-dimension Gaussian predictive distribution.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPrediction {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl GaussianPrediction {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        if mu.len() != sigma.len() {
            return Err(Error::Domain(format!(
                "mean has {} entries but sigma has {}",
                mu.len(),
                sigma.len()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::Domain(format!("non-positive predictive sigma {s}")));
        }
        Ok(Self { mu, sigma })
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Everything `backward` needs from a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Vec<f64>>,
    /// Hidden outputs after rectifier and dropout; `acts[i]` feeds layer `i + 1`.
    acts: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers, present only in training mode.
    masks: Vec<Option<Vec<f64>>>,
    raw_log_sigma: Vec<f64>,
}

/// Parameter-shaped gradient (also used for Adam moments).
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Gradients {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect(),
        }
    }

    fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (la, lb) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in la.weights.iter_mut().zip(&lb.weights) {
                *a += scale * b;
            }
            for (a, b) in la.bias.iter_mut().zip(&lb.bias) {
                *a += scale * b;
            }
        }
    }

    pub fn fill_zero(&mut self) {
        for l in &mut self.layers {
            l.weights.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v *= factor);
        }
    }

    pub fn norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| *v == 0.0)
    }

    /// Flat view in the same order as [`MlpParams::flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Backward {
    pub params: Gradients,
    /// Gradient with respect to the input features.
    pub input: Vec<f64>,
}

impl MlpParams {
    /// Builds a network with layer widths `widths = [input, hidden..]` and a
    /// `2 * label_dim` output head. Weights are `N(0, 1/fan_in)`, biases zero
    /// except the log-std head, which starts at `ln(init_sigma)`.
    pub fn init(
        widths: &[usize],
        label_dim: usize,
        dropout: f64,
        init_sigma: f64,
        stream: &mut RngStream,
    ) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config(
                "need an input width and at least one hidden layer".into(),
            ));
        }
        if widths.contains(&0) || label_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout {dropout} outside [0, 1)")));
        }
        if !(init_sigma > 0.0) {
            return Err(Error::Config(format!(
                "initial sigma {init_sigma} must be positive"
            )));
        }
        let mut dims = widths.to_vec();
        dims.push(2 * label_dim);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let scale = 1.0 / (fan_in as f64).sqrt();
            let mut layer = Layer::zeros(fan_in, fan_out);
            for w in layer.weights.iter_mut() {
                *w = scale * stream.standard_normal();
            }
            layers.push(layer);
        }
        let head = layers.last_mut().expect("at least one layer");
        for b in &mut head.bias[label_dim..] {
            *b = init_sigma.ln();
        }
        Ok(Self {
            layers,
            dropout,
            label_dim,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    /// `[input, hidden.., output]`.
    pub fn widths(&self) -> Vec<usize> {
        let mut w: Vec<usize> = self.layers.iter().map(|l| l.inputs).collect();
        w.push(self.layers.last().map_or(0, |l| l.outputs));
        w
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    /// Flat parameter vector: per layer, weights then biases.
    pub fn flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias))
            .copied()
            .collect()
    }

    /// Mutable access to the `k`-th entry of [`Self::flat`].
    pub fn flat_entry_mut(&mut self, mut k: usize) -> &mut f64 {
        for l in &mut self.layers {
            if k < l.weights.len() {
                return &mut l.weights[k];
            }
            k -= l.weights.len();
            if k < l.bias.len() {
                return &mut l.bias[k];
            }
            k -= l.bias.len();
        }
        panic!("flat index out of range");
    }

    /// Validates internal shape consistency (used after deserialization).
    pub fn validate(&self) -> Result<()> {
        if self.layers.len() < 2 {
            return Err(Error::Config(
                "network needs at least one hidden layer".into(),
            ));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config(format!(
                    "layer {i} storage does not match its shape"
                )));
            }
            if i > 0 && self.layers[i - 1].outputs != l.inputs {
                return Err(Error::Config(format!("layer {i} input width mismatch")));
            }
        }
        if self.layers.last().map(|l| l.outputs) != Some(2 * self.label_dim) {
            return Err(Error::Config(
                "output layer must have width 2 * label_dim".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("dropout outside [0, 1)".into()));
        }
        if !self.is_finite() {
            return Err(Error::Config("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Forward pass. `dropout` carries the mask stream in training mode;
    /// `None` is evaluation mode, deterministic and stream-independent.
    pub fn forward(
        &self,
        x: &[f64],
        mut dropout: Option<&mut RngStream>,
    ) -> Result<(GaussianPrediction, ForwardCache)> {
        if x.len() != self.input_dim() {
            return Err(Error::Domain(format!(
                "feature vector has {} entries, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        let hidden = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(hidden);
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(hidden);
        let mut masks = Vec::with_capacity(hidden);
        let keep = 1.0 - self.dropout;
        for (i, layer) in self.layers[..hidden].iter().enumerate() {
            let input = if i == 0 { x } else { &acts[i - 1] };
            let mut z = Vec::with_capacity(layer.outputs);
            layer.apply(input, &mut z);
            let mut h: Vec<f64> = z.iter().map(|v| v.max(0.0)).collect();
            let mask = match dropout.as_deref_mut() {
                Some(stream) if self.dropout > 0.0 => {
                    let m: Vec<f64> = (0..h.len())
                        .map(|_| {
                            if stream.uniform() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    for (hv, mv) in h.iter_mut().zip(&m) {
                        *hv *= mv;
                    }
                    Some(m)
                }
                _ => None,
            };
            pre.push(z);
            acts.push(h);
            masks.push(mask);
        }
        let head = &self.layers[hidden];
        let mut out = Vec::with_capacity(head.outputs);
        head.apply(acts.last().map_or(x, |a| a.as_slice()), &mut out);
        let p = self.label_dim;
        let mu = out[..p].to_vec();
        let raw_log_sigma = out[p..].to_vec();
        let sigma = raw_log_sigma
            .iter()
            .map(|s| s.clamp(LOG_SIGMA_MIN, LOG_SIGMA_MAX).exp())
            .collect();
        let cache = ForwardCache {
            input: x.to_vec(),
            pre,
            acts,
            masks,
            raw_log_sigma,
        };
        Ok((GaussianPrediction { mu, sigma }, cache))
    }

    /// Evaluation-mode prediction.
    pub fn predict(&self, x: &[f64]) -> Result<GaussianPrediction> {
        Ok(self.forward(x, None)?.0)
    }

    /// Reverse pass for a loss whose gradients with respect to the mean and
    /// the (clamped) log-std head are `grad_mu` and `grad_log_sigma`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_mu: &[f64],
        grad_log_sigma: &[f64],
    ) -> Result<Backward> {
        let mut params = Gradients::zeros_like(self);
        let input = self.backward_accumulate(cache, grad_mu, grad_log_sigma, &mut params)?;
        Ok(Backward { params, input })
    }

    /// As [`MlpParams::backward`], but adds the parameter gradient into
    /// `grads` and returns only the input gradient.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache,
        grad_mu: &[f64],
        grad_log_sigma: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>> {
        let p = self.label_dim;
        if grad_mu.len() != p || grad_log_sigma.len() != p {
            return Err(Error::Domain(
                "output gradient length does not match label dimension".into(),
            ));
        }
        let hidden = self.layers.len() - 1;
        if cache.input.len() != self.input_dim()
            || cache.pre.len() != hidden
            || cache.raw_log_sigma.len() != p
            || cache
                .pre
                .iter()
                .zip(&self.layers)
                .any(|(z, l)| z.len() != l.outputs)
        {
            return Err(Error::Domain(
                "forward cache does not match network shape".into(),
            ));
        }
        if grads.layers.len() != self.layers.len()
            || grads
                .layers
                .iter()
                .zip(&self.layers)
                .any(|(g, l)| g.weights.len() != l.weights.len())
        {
            return Err(Error::Domain(
                "gradient buffer does not match network shape".into(),
            ));
        }
        // dL/d(output) of the head.
        let mut delta: Vec<f64> = grad_mu.to_vec();
        delta.extend(
            cache
                .raw_log_sigma
                .iter()
                .zip(grad_log_sigma)
                .map(|(s, g)| {
                    if *s > LOG_SIGMA_MIN && *s < LOG_SIGMA_MAX {
                        *g
                    } else {
                        0.0
                    }
                }),
        );
        for li in (0..=hidden).rev() {
            let layer = &self.layers[li];
            let input: &[f64] = if li == 0 {
                &cache.input
            } else {
                &cache.acts[li - 1]
            };
            let g = &mut grads.layers[li];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            // Propagate to the layer input.
            let mut back = vec![0.0; layer.inputs];
            for (o, d) in delta.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (b, w) in back.iter_mut().zip(row) {
                    *b += d * w;
                }
            }
            if li == 0 {
                return Ok(back);
            }
            // Through dropout and the rectifier of hidden layer li - 1.
            let hi = li - 1;
            if let Some(mask) = &cache.masks[hi] {
                for (b, m) in back.iter_mut().zip(mask) {
                    *b *= m;
                }
            }
            for (b, z) in back.iter_mut().zip(&cache.pre[hi]) {
                if *z <= 0.0 {
                    *b = 0.0;
                }
            }
            delta = back;
        }
        unreachable!("loop returns at the input layer")
    }
}

/// Gaussian negative log-likelihood and its output gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct NllOutput {
    pub loss: f64,
    pub grad_mu: Vec<f64>,
    pub grad_log_sigma: Vec<f64>,
}

/// `Σ_i [log σ_i + (y_i - μ_i)^2 / (2 σ_i^2)] + (p/2) log 2π`.
pub fn gaussian_nll(pred: &GaussianPrediction, y: &[f64]) -> Result<NllOutput> {
    if y.len() != pred.dim() {
        return Err(Error::Domain(format!(
            "label has {} entries, prediction has {}",
            y.len(),
            pred.dim()
        )));
    }
    let p = y.len();
    let mut loss = 0.5 * p as f64 * LN_2PI;
    let mut grad_mu = Vec::with_capacity(p);
    let mut grad_log_sigma = Vec::with_capacity(p);
    for i in 0..p {
        let (mu, sigma) = (pred.mu[i], pred.sigma[i]);
        let r = (y[i] - mu) / sigma;
        loss += sigma.ln() + 0.5 * r * r;
        grad_mu.push(-r / sigma);
        grad_log_sigma.push(1.0 - r * r);
    }
    Ok(NllOutput {
        loss,
        grad_mu,
        grad_log_sigma,
    })
}

/// Adam optimizer state with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Gradients,
    pub v: Gradients,
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams, learning_rate: f64) -> Self {
        Self {
            m: Gradients::zeros_like(params),
            v: Gradients::zeros_like(params),
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One Adam update of `params` with gradient `grads`.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::Training(format!(
                "non-finite gradient at optimizer step {}",
                self.step + 1
            )));
        }
        if grads.layers.len() != params.layers.len()
            || grads
                .layers
                .iter()
                .zip(&params.layers)
                .any(|(g, p)| g.weights.len() != p.weights.len() || g.bias.len() != p.bias.len())
        {
            return Err(Error::Domain(
                "gradient shape does not match parameters".into(),
            ));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.eps);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        };
        for (li, layer) in params.layers.iter_mut().enumerate() {
            let (gl, ml, vl) = (
                &grads.layers[li],
                &mut self.m.layers[li],
                &mut self.v.layers[li],
            );
            for k in 0..layer.weights.len() {
                update(
                    &mut layer.weights[k],
                    &mut ml.weights[k],
                    &mut vl.weights[k],
                    gl.weights[k],
                );
            }
            for k in 0..layer.bias.len() {
                update(
                    &mut layer.bias[k],
                    &mut ml.bias[k],
                    &mut vl.bias[k],
                    gl.bias[k],
                );
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Purpose;

    fn stream(i: u64) -> RngStream {
        RngStream::keyed(77, 0, i, Purpose::Test)
    }

    fn small_net(seed: u64) -> MlpParams {
        let mut net = MlpParams::init(&[5, 7, 6], 3, 0.0, 0.5, &mut stream(seed)).unwrap();
        // Non-trivial biases so rectifiers are not all at the same side.
        let mut s = stream(seed + 100);
        for l in &mut net.layers {
            for b in &mut l.bias {
                *b += 0.3 * s.standard_normal();
            }
        }
        net
    }

    fn rand_vec(s: &mut RngStream, n: usize) -> Vec<f64> {
        (0..n).map(|_| s.standard_normal()).collect()
    }

    #[test]
    fn init_shapes_and_determinism() {
        let net = MlpParams::init(&[150, 200, 200], 24, 0.2, 0.5, &mut stream(1)).unwrap();
        assert_eq!(net.layers.last().unwrap().outputs, 48);
        assert_eq!(net.widths(), vec![150, 200, 200, 48]);
        let again = MlpParams::init(&[150, 200, 200], 24, 0.2, 0.5, &mut stream(1)).unwrap();
        assert_eq!(net, again);
        for l in &net.layers {
            let n = l.weights.len() as f64;
            let mean = l.weights.iter().sum::<f64>() / n;
            let std = (l.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / n).sqrt();
            let target = 1.0 / (l.inputs as f64).sqrt();
            assert!((std - target).abs() < 0.1 * target, "std {std} vs {target}");
        }
        let head = net.layers.last().unwrap();
        assert!(head.bias[..24].iter().all(|b| *b == 0.0));
        assert!(head.bias[24..]
            .iter()
            .all(|b| (*b - 0.5f64.ln()).abs() < 1e-15));
    }

    #[test]
    fn init_rejects_bad_widths() {
        assert!(matches!(
            MlpParams::init(&[3], 1, 0.0, 0.5, &mut stream(0)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            MlpParams::init(&[3, 0], 1, 0.0, 0.5, &mut stream(0)),
            Err(Error::Config(_))
        ));
        assert!(MlpParams::init(&[3, 4], 1, 1.0, 0.5, &mut stream(0)).is_err());
    }

    #[test]
    fn zero_network_predicts_unit_sigma() {
        let mut net = MlpParams::init(&[4, 8], 2, 0.0, 0.5, &mut stream(0)).unwrap();
        for l in &mut net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        let pred = net.predict(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(pred.mu, vec![0.0, 0.0]);
        assert_eq!(pred.sigma, vec![1.0, 1.0]);
    }

    #[test]
    fn forward_dimension_mismatch() {
        let net = small_net(0);
        assert!(matches!(
            net.forward(&[1.0, 2.0], None),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn eval_mode_is_deterministic_and_stream_free() {
        let net = MlpParams::init(&[5, 7, 6], 3, 0.2, 0.5, &mut stream(3)).unwrap();
        let x = [0.1, -0.4, 2.0, 0.0, 1.0];
        let a = net.predict(&x).unwrap();
        let b = net.predict(&x).unwrap();
        assert_eq!(a, b);
        // Training mode with dropout differs from evaluation mode for some stream.
        let mut differs = false;
        for i in 0..10 {
            let (t, _) = net.forward(&x, Some(&mut stream(500 + i))).unwrap();
            differs |= t != a;
        }
        assert!(differs);
    }

    #[test]
    fn sigma_floor_holds_at_extreme_inputs() {
        let net = small_net(4);
        for scale in [1e3, -1e3] {
            let x = [scale; 5];
            let pred = net.predict(&x).unwrap();
            for s in &pred.sigma {
                assert!(*s >= SIGMA_FLOOR && *s <= LOG_SIGMA_MAX.exp());
            }
        }
        assert!((SIGMA_FLOOR - LOG_SIGMA_MIN.exp()).abs() < 1e-18);
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradient() {
        let net = small_net(5);
        let (_, cache) = net.forward(&[0.3; 5], None).unwrap();
        let g = net.backward(&cache, &[0.0; 3], &[0.0; 3]).unwrap();
        assert!(g.params.is_zero());
        assert!(g.input.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_head_identity() {
        // Single hidden layer with unit rectifier outputs: the head's weight
        // gradient for grad_mu = e_k is the head input.
        let net = small_net(6);
        let x = [0.5, -1.0, 0.25, 2.0, -0.75];
        let (_, cache) = net.forward(&x, None).unwrap();
        let mut gmu = vec![0.0; 3];
        gmu[1] = 1.0;
        let g = net.backward(&cache, &gmu, &[0.0; 3]).unwrap();
        let head = g.params.layers.last().unwrap();
        let h = cache.acts.last().unwrap();
        assert_eq!(&head.weights[h.len()..2 * h.len()], h.as_slice());
        assert_eq!(head.bias[1], 1.0);
    }

    #[test]
    fn backward_matches_finite_differences_on_parameters() {
        let mut s = stream(900);
        let net = small_net(7);
        let x = rand_vec(&mut s, 5);
        let v = rand_vec(&mut s, 3);
        let u = rand_vec(&mut s, 3);
        let loss = |n: &MlpParams| {
            let pred = n.predict(&x).unwrap();
            (0..3)
                .map(|i| v[i] * pred.mu[i] + u[i] * pred.sigma[i].ln())
                .sum::<f64>()
        };
        let (_, cache) = net.forward(&x, None).unwrap();
        let g = net.backward(&cache, &v, &u).unwrap().params.flat();
        let n = net.num_params();
        let h = 1e-5;
        let mut checked = 0;
        for t in 0..n {
            let k = (t * 7919) % n;
            let mut plus = net.clone();
            *plus.flat_entry_mut(k) += h;
            let mut minus = net.clone();
            *minus.flat_entry_mut(k) -= h;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            if fd.abs() < 1e-6 && g[k].abs() < 1e-6 {
                continue;
            }
            let rel = (fd - g[k]).abs() / fd.abs().max(g[k].abs());
            assert!(rel < 1e-4, "coord {k}: fd {fd} analytic {}", g[k]);
            checked += 1;
            if checked == 20 {
                break;
            }
        }
        assert_eq!(checked, 20);
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let mut s = stream(901);
        let net = small_net(8);
        let x = rand_vec(&mut s, 5);
        let (_, cache) = net.forward(&x, None).unwrap();
        // One row of the Jacobian of (mu, log sigma) at a time.
        for out in 0..6 {
            let mut gmu = vec![0.0; 3];
            let mut gls = vec![0.0; 3];
            if out < 3 {
                gmu[out] = 1.0
            } else {
                gls[out - 3] = 1.0
            }
            let back = net.backward(&cache, &gmu, &gls).unwrap();
            for j in 0..5 {
                let h = 1e-5;
                let eval = |d: f64| {
                    let mut xp = x.clone();
                    xp[j] += d;
                    let p = net.predict(&xp).unwrap();
                    if out < 3 {
                        p.mu[out]
                    } else {
                        p.sigma[out - 3].ln()
                    }
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let a = back.input[j];
                let denom = fd.abs().max(a.abs()).max(1e-8);
                assert!(
                    (fd - a).abs() / denom < 1e-4,
                    "out {out} in {j}: {fd} vs {a}"
                );
            }
        }
    }

    #[test]
    fn clamped_log_sigma_has_zero_gradient() {
        let mut net = small_net(9);
        let head = net.layers.last_mut().unwrap();
        head.bias[3] = 50.0; // first log-sigma output far above the clamp
        let (pred, cache) = net.forward(&[0.1; 5], None).unwrap();
        assert!((pred.sigma[0] - LOG_SIGMA_MAX.exp()).abs() < 1e-9);
        let g = net.backward(&cache, &[0.0; 3], &[1.0, 0.0, 0.0]).unwrap();
        assert!(g.params.is_zero());
    }

    #[test]
    fn dropout_masks_respected_in_backward() {
        let net = MlpParams::init(&[4, 16, 16], 2, 0.5, 0.5, &mut stream(10)).unwrap();
        let x = [0.2, -0.1, 0.7, 1.1];
        let mut ds = stream(11);
        let (_, cache) = net.forward(&x, Some(&mut ds)).unwrap();
        let g = net.backward(&cache, &[1.0, -1.0], &[0.5, 0.25]).unwrap();
        // Dropped hidden units of the last hidden layer get no head-weight gradient.
        let mask = cache.masks.last().unwrap().as_ref().unwrap();
        let head = g.params.layers.last().unwrap();
        for (j, m) in mask.iter().enumerate() {
            if *m == 0.0 {
                for o in 0..head.outputs {
                    assert_eq!(head.weights[o * head.inputs + j], 0.0);
                }
            }
        }
    }

    #[test]
    fn nll_examples() {
        let pred = GaussianPrediction::new(vec![0.5, -1.0], vec![1.0, 1.0]).unwrap();
        let out = gaussian_nll(&pred, &[0.5, -1.0]).unwrap();
        assert!((out.loss - LN_2PI).abs() < 1e-14);
        assert_eq!(out.grad_mu, vec![0.0, 0.0]);

        let pred = GaussianPrediction::new(vec![0.0], vec![1.0]).unwrap();
        let out = gaussian_nll(&pred, &[1.0]).unwrap();
        assert!((out.loss - 1.418_938_5).abs() < 1e-7);
        assert!(gaussian_nll(&pred, &[1.0, 2.0]).is_err());
    }

    #[test]
    fn nll_gradients_match_finite_differences() {
        let mu = vec![0.3, -1.2, 2.0];
        let log_sigma: Vec<f64> = vec![-0.4, 0.3, -1.5];
        let y = [0.9, -1.0, 1.7];
        let f = |mu: &[f64], ls: &[f64]| {
            let pred =
                GaussianPrediction::new(mu.to_vec(), ls.iter().map(|s| s.exp()).collect()).unwrap();
            gaussian_nll(&pred, &y).unwrap().loss
        };
        let pred = GaussianPrediction::new(mu.clone(), log_sigma.iter().map(|s| s.exp()).collect())
            .unwrap();
        let out = gaussian_nll(&pred, &y).unwrap();
        let h = 1e-6;
        for i in 0..3 {
            let (mut mp, mut mm) = (mu.clone(), mu.clone());
            mp[i] += h;
            mm[i] -= h;
            let fd = (f(&mp, &log_sigma) - f(&mm, &log_sigma)) / (2.0 * h);
            assert!((fd - out.grad_mu[i]).abs() / fd.abs() < 1e-6);
            let (mut sp, mut sm) = (log_sigma.clone(), log_sigma.clone());
            sp[i] += h;
            sm[i] -= h;
            let fd = (f(&mu, &sp) - f(&mu, &sm)) / (2.0 * h);
            assert!((fd - out.grad_log_sigma[i]).abs() / fd.abs() < 1e-6);
        }
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let mut net = small_net(12);
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-3);
        adam.m.layers[0].weights[0] = 1.0;
        adam.step(&mut net, &Gradients::zeros_like(&before))
            .unwrap();
        // Parameters move only through the pre-existing moment; clear it to check.
        let mut net2 = before.clone();
        let mut adam2 = AdamState::new(&net2, 1e-3);
        adam2
            .step(&mut net2, &Gradients::zeros_like(&before))
            .unwrap();
        assert_eq!(net2, before);
        assert_eq!(adam2.step, 1);
        assert!((adam.m.layers[0].weights[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_magnitude_is_learning_rate() {
        let mut net = small_net(13);
        let before = net.clone();
        let mut adam = AdamState::new(&net, 1e-2);
        let mut g = Gradients::zeros_like(&net);
        for (k, v) in g.layers[0].weights.iter_mut().enumerate() {
            *v = if k % 2 == 0 { 3.0 } else { -0.2 };
        }
        adam.step(&mut net, &g).unwrap();
        for k in 0..before.layers[0].weights.len() {
            let delta = net.layers[0].weights[k] - before.layers[0].weights[k];
            let expect = if k % 2 == 0 { -1e-2 } else { 1e-2 };
            assert!((delta - expect).abs() < 1e-8, "{delta}");
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut net = small_net(14);
        let mut adam = AdamState::new(&net, 1e-3);
        let mut g = Gradients::zeros_like(&net);
        g.layers[1].bias[0] = f64::NAN;
        assert!(matches!(adam.step(&mut net, &g), Err(Error::Training(_))));
    }

    #[test]
    fn adam_minimizes_quadratic() {
        // Scalar parameter: the head bias of mu[0]; loss (θ - 2)^2.
        let mut net = MlpParams::init(&[1, 1], 1, 0.0, 0.5, &mut stream(15)).unwrap();
        let target = 2.0;
        let mut adam = AdamState::new(&net, 1e-2);
        for _ in 0..2000 {
            let mut g = Gradients::zeros_like(&net);
            let theta = net.layers[1].bias[0];
            g.layers[1].bias[0] = 2.0 * (theta - target);
            adam.step(&mut net, &g).unwrap();
        }
        assert!((net.layers[1].bias[0] - target).abs() < 1e-3);
    }
}
