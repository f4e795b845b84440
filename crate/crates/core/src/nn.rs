//! A small fully connected Q-network with hand-written backpropagation,
//! a momentum gradient-descent optimizer and a uniform replay buffer.
//!
//! Parameters live in one flat vector so that the optimizer, target
//! snapshots, checkpoints and finite-difference checks all treat the network
//! as a single point in parameter space.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rectifier MLP: hidden layers use `max(0, x)`, the output layer is linear.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    sizes: Vec<usize>,
    params: Vec<f64>,
    /// Optimizer steps taken so far.
    pub steps: u64,
}

/// Cached activations of one forward pass, input first.
#[derive(Clone, Debug)]
pub struct Trace {
    activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace has the input at least")
    }
}

/// Cached activations of a batched forward pass, each row-major.
#[derive(Clone, Debug)]
pub struct BatchTrace {
    rows: usize,
    activations: Vec<Vec<f64>>,
}

impl BatchTrace {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Output row of sample `i`.
    pub fn output(&self, i: usize) -> &[f64] {
        let out = self.activations.last().expect("trace has the input at least");
        let width = out.len() / self.rows.max(1);
        &out[i * width..(i + 1) * width]
    }
}

/// `c = beta c + a b` for an `m x k` times `k x n` product with explicit
/// `(row, column)` strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), c: &mut [f64], beta: f64) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * sa.0 + (k - 1) * sa.1 < a.len());
    assert!(k == 0 || (k - 1) * sb.0 + (n - 1) * sb.1 < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts keep every strided access inside the slices and
    // `c` is an exclusive borrow that does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

impl QNetwork {
    /// Zero-initialized network with the given layer widths.
    pub fn zeros(sizes: &[usize]) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!("bad layer sizes {sizes:?}")));
        }
        let count = sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        Ok(Self { sizes: sizes.to_vec(), params: vec![0.0; count], steps: 0 })
    }

    /// He-uniform weights, zero biases.
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Result<Self> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.gen_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_size(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_size(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    fn check_input(&self, state: &[f64]) -> Result<()> {
        if state.len() != self.input_size() {
            return Err(Error::Dimension(format!(
                "network expects {} inputs, got {}",
                self.input_size(),
                state.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(state)?.activations.pop().unwrap())
    }

    pub fn forward_trace(&self, state: &[f64]) -> Result<Trace> {
        self.check_input(state)?;
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(state.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            let input = &activations[l];
            let mut out = Vec::with_capacity(fan_out);
            for (o, row) in weights.chunks_exact(fan_in).enumerate() {
                let z = bias[o] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
                out.push(if l + 1 < layers { z.max(0.0) } else { z });
            }
            activations.push(out);
            offset += fan_in * fan_out + fan_out;
        }
        Ok(Trace { activations })
    }

    /// Accumulate `d(output . d_output)/d(params)` into `grad`.
    pub fn backward(&self, trace: &Trace, d_output: &[f64], grad: &mut [f64]) {
        let layers = self.sizes.len() - 1;
        debug_assert_eq!(grad.len(), self.params.len());
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = d_output.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &trace.activations[l];
            {
                let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                for o in 0..fan_out {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    for (g, x) in gw[o * fan_in..(o + 1) * fan_in].iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for (o, row) in weights.chunks_exact(fan_in).enumerate() {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (n, w) in next.iter_mut().zip(row) {
                    *n += d * w;
                }
            }
            // rectifier derivative of the hidden layer feeding this one
            for (n, a) in next.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offsets = Vec::with_capacity(self.sizes.len() - 1);
        let mut offset = 0;
        for w in self.sizes.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        offsets
    }

    /// Forward pass over a batch; rows of the result are samples.
    pub fn forward_batch(&self, states: &[&[f64]]) -> Result<BatchTrace> {
        let rows = states.len();
        let mut input = Vec::with_capacity(rows * self.input_size());
        for s in states {
            self.check_input(s)?;
            input.extend_from_slice(s);
        }
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input);
        for (l, off) in self.layer_offsets().into_iter().enumerate() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[off..off + fan_in * fan_out];
            let bias = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut out = vec![0.0; rows * fan_out];
            for row in out.chunks_exact_mut(fan_out) {
                row.copy_from_slice(bias);
            }
            // out (rows x fan_out) += input (rows x fan_in) * weights^T
            gemm(rows, fan_in, fan_out, &activations[l], (fan_in, 1), weights, (1, fan_in), &mut out, 1.0);
            if l + 1 < layers {
                for z in &mut out {
                    *z = z.max(0.0);
                }
            }
            activations.push(out);
        }
        Ok(BatchTrace { rows, activations })
    }

    /// Accumulate the batch gradient of `sum(output . d_output)` into `grad`;
    /// `d_output` is row-major, one row per sample.
    pub fn backward_batch(&self, trace: &BatchTrace, d_output: &[f64], grad: &mut [f64]) {
        let rows = trace.rows;
        let offsets = self.layer_offsets();
        let mut delta = d_output.to_vec();
        for l in (0..self.sizes.len() - 1).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let input = &trace.activations[l];
            let (gw, gb) = grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
            // gw (fan_out x fan_in) += delta^T * input
            gemm(fan_out, rows, fan_in, &delta, (1, fan_out), input, (fan_in, 1), gw, 1.0);
            for row in delta.chunks_exact(fan_out) {
                for (g, d) in gb.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.params[off..off + fan_in * fan_out];
            let mut next = vec![0.0; rows * fan_in];
            gemm(rows, fan_out, fan_in, &delta, (fan_out, 1), weights, (fan_in, 1), &mut next, 0.0);
            for (n, a) in next.iter_mut().zip(input) {
                if *a <= 0.0 {
                    *n = 0.0;
                }
            }
            delta = next;
        }
    }

    /// Hidden-layer pre-activations for `state`, layer by layer. Useful to
    /// keep finite-difference probes away from rectifier kinks.
    pub fn hidden_pre_activations(&self, state: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(state)?;
        let layers = self.sizes.len() - 1;
        let mut out = Vec::new();
        let mut offset = 0;
        for l in 0..layers - 1 {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            for (o, row) in weights.chunks_exact(fan_in).enumerate() {
                out.push(bias[o] + row.iter().zip(&trace.activations[l]).map(|(w, x)| w * x).sum::<f64>());
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(out)
    }

    /// Frozen copy used as the bootstrap target.
    pub fn snapshot_target(&self) -> QNetwork {
        self.clone()
    }

    /// Checkpoint: `u32` header length, JSON header, then every parameter as
    /// a little-endian `f32`.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let header = serde_json::to_vec(&CheckpointHeader {
            layer_sizes: self.sizes.clone(),
            step_count: self.steps,
        })?;
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        for p in &self.params {
            out.write_all(&(*p as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut len = [0u8; 4];
        input.read_exact(&mut len)?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut header)?;
        let header: CheckpointHeader = serde_json::from_slice(&header)?;
        let mut net = Self::zeros(&header.layer_sizes)?;
        net.steps = header.step_count;
        let mut word = [0u8; 4];
        for p in net.params.iter_mut() {
            input.read_exact(&mut word)?;
            *p = f32::from_le_bytes(word) as f64;
        }
        Ok(net)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    layer_sizes: Vec<usize>,
    step_count: u64,
}

/// One `(s, a, r, s')` experience.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

/// Mean squared temporal-difference error against a frozen target network,
/// with its gradient w.r.t. the online network only.
pub fn td_loss_and_gradient(
    net: &QNetwork,
    target: &QNetwork,
    batch: &[&Transition],
    discount: f64,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let next: Vec<&[f64]> = batch.iter().map(|t| t.next_state.as_slice()).collect();
    let states: Vec<&[f64]> = batch.iter().map(|t| t.state.as_slice()).collect();
    let next_q = target.forward_batch(&next)?;
    let trace = net.forward_batch(&states)?;
    let outs = net.output_size();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let mut d_out = vec![0.0; batch.len() * outs];
    for (i, t) in batch.iter().enumerate() {
        let best = next_q.output(i).iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let psi = t.reward + discount * best;
        let q = *trace
            .output(i)
            .get(t.action)
            .ok_or_else(|| Error::Dimension(format!("action {} out of range", t.action)))?;
        let err = psi - q;
        loss += err * err * scale;
        d_out[i * outs + t.action] = -2.0 * err * scale;
    }
    let mut grad = vec![0.0; net.param_count()];
    net.backward_batch(&trace, &d_out, &mut grad);
    Ok((loss, grad))
}

/// Gradient descent with heavy-ball momentum and optional global-norm
/// clipping.
#[derive(Clone, Debug)]
pub struct Momentum {
    pub step_size: f64,
    pub momentum: f64,
    pub clip_norm: Option<f64>,
    velocity: Vec<f64>,
}

impl Momentum {
    pub fn new(step_size: f64, momentum: f64, clip_norm: Option<f64>) -> Self {
        Self { step_size, momentum, clip_norm, velocity: Vec::new() }
    }

    pub fn step(&mut self, net: &mut QNetwork, grad: &[f64]) -> Result<()> {
        if grad.len() != net.param_count() {
            return Err(Error::Dimension(format!(
                "gradient has {} entries, network {}",
                grad.len(),
                net.param_count()
            )));
        }
        if let Some((i, g)) = grad.iter().enumerate().find(|(_, g)| !g.is_finite()) {
            return Err(Error::Divergence(format!(
                "non-finite gradient {g} at parameter {i} after {} steps",
                net.steps
            )));
        }
        if self.velocity.len() != grad.len() {
            self.velocity = vec![0.0; grad.len()];
        }
        let mut factor = 1.0;
        if let Some(max) = self.clip_norm {
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > max {
                factor = max / norm;
            }
        }
        for ((p, v), g) in net.params.iter_mut().zip(self.velocity.iter_mut()).zip(grad) {
            *v = self.momentum * *v - self.step_size * factor * g;
            *p += *v;
        }
        net.steps += 1;
        Ok(())
    }
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: Vec<T>,
    capacity: usize,
    next: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self { items: Vec::with_capacity(capacity.min(4096)), capacity, next: 0 }
    }

    pub fn push(&mut self, item: T) {
        if self.items.len() < self.capacity {
            self.items.push(item);
        } else {
            self.items[self.next] = item;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// `batch` draws with replacement; `None` until the buffer holds a batch.
    pub fn sample<R: Rng>(&self, batch: usize, rng: &mut R) -> Option<Vec<&T>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some((0..batch).map(|_| &self.items[rng.gen_range(0..self.items.len())]).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net_1_1_1(w1: f64, b1: f64, w2: f64, b2: f64) -> QNetwork {
        let mut net = QNetwork::zeros(&[1, 1, 1]).unwrap();
        net.params_mut().copy_from_slice(&[w1, b1, w2, b2]);
        net
    }

    #[test]
    fn forward_examples() {
        let zero = QNetwork::zeros(&[3, 4, 2]).unwrap();
        assert_eq!(zero.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let net = net_1_1_1(2.0, 1.0, 3.0, -1.0);
        // hidden relu(2*3+1) = 7, output 3*7 - 1
        assert_eq!(net.forward(&[3.0]).unwrap(), vec![20.0]);
        // negative pre-activation is cut
        assert_eq!(net.forward(&[-3.0]).unwrap(), vec![-1.0]);
        assert!(net.forward(&[1.0, 2.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = QNetwork::new(&[4, 8, 3], &mut rng).unwrap();
        let x = [0.1, -0.2, 0.3, 0.9];
        assert_eq!(r.forward(&x).unwrap(), r.forward(&x).unwrap());
    }

    fn transition(state: Vec<f64>, action: usize, reward: f64, next_state: Vec<f64>) -> Transition {
        Transition { state, action, reward, next_state }
    }

    #[test]
    fn loss_zero_when_target_matched() {
        let net = net_1_1_1(1.0, 0.0, 1.0, 0.0);
        let target = QNetwork::zeros(&[1, 1, 1]).unwrap();
        let t = transition(vec![2.0], 0, 2.0, vec![5.0]);
        let (loss, grad) = td_loss_and_gradient(&net, &target, &[&t], 0.9).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn single_transition_hand_gradient() {
        // Q(s) = w2 * relu(w1 s + b1) + b2 = 0 at w2 = 0, b2 = 0.
        let net = net_1_1_1(1.0, 0.5, 0.0, 0.0);
        let target = QNetwork::zeros(&[1, 1, 1]).unwrap();
        let t = transition(vec![2.0], 0, 1.0, vec![0.0]);
        let (loss, grad) = td_loss_and_gradient(&net, &target, &[&t], 0.0).unwrap();
        assert_eq!(loss, 1.0);
        // dQ/d(w1, b1, w2, b2) = (w2 s, w2, h, 1) with h = 2.5
        let dq = [0.0, 0.0, 2.5, 1.0];
        for (g, d) in grad.iter().zip(dq) {
            assert!((g - (-2.0 * d)).abs() < 1e-15);
        }
    }

    #[test]
    fn optimizer_examples() {
        let mut net = QNetwork::zeros(&[1, 1]).unwrap();
        net.params_mut().copy_from_slice(&[1.0, 0.0]);
        let mut opt = Momentum::new(0.1, 0.9, None);
        opt.step(&mut net, &[0.0, 0.0]).unwrap();
        assert_eq!(net.params(), &[1.0, 0.0]);
        opt.step(&mut net, &[2.0, 0.0]).unwrap();
        assert!((net.params()[0] - 0.8).abs() < 1e-15);
        assert!(matches!(opt.step(&mut net, &[f64::NAN, 0.0]), Err(Error::Divergence(_))));
        assert!(opt.step(&mut net, &[1.0]).is_err());
    }

    #[test]
    fn snapshot_is_isolated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = QNetwork::new(&[2, 3, 2], &mut rng).unwrap();
        let target = net.snapshot_target();
        assert_eq!(target.params(), net.params());
        net.params_mut()[0] += 1.0;
        assert_ne!(target.params(), net.params());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = QNetwork::new(&[3, 5, 2], &mut rng).unwrap();
        net.steps = 17;
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = QNetwork::read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.sizes(), net.sizes());
        assert_eq!(back.steps, 17);
        for (a, b) in back.params().iter().zip(net.params()) {
            assert!((a - b).abs() <= 1e-6 * b.abs().max(1.0));
        }
    }

    fn random_batch(rng: &mut ChaCha8Rng, n_in: usize, n_out: usize, len: usize) -> Vec<Transition> {
        (0..len)
            .map(|_| {
                transition(
                    (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                    rng.gen_range(0..n_out),
                    rng.gen_range(-2.0..2.0),
                    (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut instances = 0;
        while instances < 20 {
            let sizes = [3, 6, 5, 4];
            let net = QNetwork::new(&sizes, &mut rng).unwrap();
            let target = QNetwork::new(&sizes, &mut rng).unwrap();
            let batch = random_batch(&mut rng, 3, 4, 5);
            // a probe of width h must not straddle a rectifier kink
            let margin = batch
                .iter()
                .flat_map(|t| net.hidden_pre_activations(&t.state).unwrap())
                .fold(f64::INFINITY, |m, z| m.min(z.abs()));
            if margin < 1e-3 {
                continue;
            }
            instances += 1;
            let refs: Vec<&Transition> = batch.iter().collect();
            let (_, grad) = td_loss_and_gradient(&net, &target, &refs, 0.9).unwrap();
            let h = 1e-5;
            for i in 0..net.param_count() {
                let mut plus = net.clone();
                plus.params_mut()[i] += h;
                let mut minus = net.clone();
                minus.params_mut()[i] -= h;
                let lp = td_loss_and_gradient(&plus, &target, &refs, 0.9).unwrap().0;
                let lm = td_loss_and_gradient(&minus, &target, &refs, 0.9).unwrap().0;
                let fd = (lp - lm) / (2.0 * h);
                if grad[i].abs() > 1e-8 {
                    assert!(((grad[i] - fd) / grad[i]).abs() < 1e-4, "param {i}: {} vs {fd}", grad[i]);
                }
            }
        }
    }

    #[test]
    fn batched_passes_match_single_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = QNetwork::new(&[5, 7, 6, 3], &mut rng).unwrap();
        let states: Vec<Vec<f64>> = (0..4).map(|_| (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
        let batch = net.forward_batch(&refs).unwrap();
        let d_out: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut g_batch = vec![0.0; net.param_count()];
        net.backward_batch(&batch, &d_out, &mut g_batch);
        let mut g_single = vec![0.0; net.param_count()];
        for (i, s) in states.iter().enumerate() {
            let trace = net.forward_trace(s).unwrap();
            for (a, b) in trace.output().iter().zip(batch.output(i)) {
                assert!((a - b).abs() < 1e-12);
            }
            net.backward(&trace, &d_out[3 * i..3 * i + 3], &mut g_single);
        }
        for (a, b) in g_batch.iter().zip(&g_single) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn descent_reduces_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = QNetwork::new(&[3, 8, 2], &mut rng).unwrap();
        let target = QNetwork::new(&[3, 8, 2], &mut rng).unwrap();
        let batch = random_batch(&mut rng, 3, 2, 8);
        let refs: Vec<&Transition> = batch.iter().collect();
        let initial = td_loss_and_gradient(&net, &target, &refs, 0.9).unwrap().0;
        let mut opt = Momentum::new(1e-3, 0.9, None);
        for _ in 0..100 {
            let (_, g) = td_loss_and_gradient(&net, &target, &refs, 0.9).unwrap();
            opt.step(&mut net, &g).unwrap();
        }
        let last = td_loss_and_gradient(&net, &target, &refs, 0.9).unwrap().0;
        assert!(last < initial, "{last} !< {initial}");
    }

    #[test]
    fn replay_respects_capacity() {
        let mut buf = ReplayBuffer::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(buf.sample(1, &mut rng).is_none());
        for i in 0..5 {
            buf.push(i);
        }
        assert_eq!(buf.len(), 3);
        let mut seen: Vec<i32> = (0..20).flat_map(|_| buf.sample(3, &mut rng).unwrap()).copied().collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen, vec![2, 3, 4]);
        assert!(buf.sample(4, &mut rng).is_none());
    }

    #[test]
    fn replay_sampling_is_uniform() {
        let mut buf = ReplayBuffer::new(10);
        for i in 0..10usize {
            buf.push(i);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut counts = [0usize; 10];
        let draws = 100_000;
        for _ in 0..draws / 10 {
            for &i in buf.sample(10, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 0.1;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
