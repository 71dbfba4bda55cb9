//! Fully connected ReLU network with Adam, sized for the green-split learner.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major, `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Dense {
        let bound = (6.0 / inputs as f64).sqrt();
        Dense {
            inputs,
            outputs,
            weights: (0..inputs * outputs)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: vec![0.0; outputs],
        }
    }

    fn forward(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            out.push(self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>());
        }
    }

    fn len(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

/// Q-value approximator: input, two ReLU hidden layers, linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
}

impl QNetwork {
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> QNetwork {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        QNetwork {
            layers: sizes
                .windows(2)
                .map(|w| Dense::new(w[0], w[1], rng))
                .collect(),
        }
    }

    /// Layer widths from input to output.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Dense::len).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            layer.forward(&cur, &mut next);
            if i + 1 < self.layers.len() {
                next.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Weights and biases layer by layer (weights row-major, then bias).
    pub fn flat_parameters(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn from_flat(sizes: &[usize], params: &[f64]) -> Option<QNetwork> {
        let mut layers = Vec::new();
        let mut rest = params;
        for w in sizes.windows(2) {
            let (nw, nb) = (w[0] * w[1], w[1]);
            if rest.len() < nw + nb {
                return None;
            }
            layers.push(Dense {
                inputs: w[0],
                outputs: w[1],
                weights: rest[..nw].to_vec(),
                bias: rest[nw..nw + nb].to_vec(),
            });
            rest = &rest[nw + nb..];
        }
        (rest.is_empty() && !layers.is_empty()).then_some(QNetwork { layers })
    }

    /// One gradient step on the Huber loss between `Q(state)[action]` and
    /// `target`, averaged over the batch. Returns the mean loss.
    pub fn train_batch(&mut self, batch: &[(&[f64], usize, f64)], opt: &mut Adam) -> f64 {
        let (loss, grad) = self.loss_gradient(batch);
        opt.step(self, &grad);
        loss
    }

    /// Mean Huber loss over the batch and its gradient in
    /// [`flat_parameters`](Self::flat_parameters) order.
    pub fn loss_gradient(&self, batch: &[(&[f64], usize, f64)]) -> (f64, Vec<f64>) {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut loss = 0.0;
        let n = self.layers.len();
        for &(x, action, target) in batch {
            // Forward with cached activations.
            let mut acts: Vec<Vec<f64>> = vec![x.to_vec()];
            for (i, layer) in self.layers.iter().enumerate() {
                let mut out = Vec::new();
                layer.forward(acts.last().unwrap(), &mut out);
                if i + 1 < n {
                    out.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                acts.push(out);
            }
            let err = acts[n][action] - target;
            loss += if err.abs() <= 1.0 {
                0.5 * err * err
            } else {
                err.abs() - 0.5
            };
            let mut delta = vec![0.0; self.layers[n - 1].outputs];
            delta[action] = err.clamp(-1.0, 1.0);
            for li in (0..n).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..layer.outputs {
                    let d = delta[o];
                    if d == 0.0 {
                        continue;
                    }
                    gb[o] += d;
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    for (g, v) in row.iter_mut().zip(input) {
                        *g += d * v;
                    }
                }
                if li > 0 {
                    let mut prev = vec![0.0; layer.inputs];
                    for o in 0..layer.outputs {
                        let d = delta[o];
                        if d == 0.0 {
                            continue;
                        }
                        let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                        for (p, w) in prev.iter_mut().zip(row) {
                            *p += d * w;
                        }
                    }
                    // ReLU derivative on the hidden activation.
                    for (p, a) in prev.iter_mut().zip(input) {
                        if *a <= 0.0 {
                            *p = 0.0;
                        }
                    }
                    delta = prev;
                }
            }
        }
        let scale = 1.0 / batch.len().max(1) as f64;
        let mut flat_grad = Vec::with_capacity(self.parameter_count());
        for (gw, gb) in &grads {
            flat_grad.extend(gw.iter().chain(gb).map(|g| g * scale));
        }
        (loss * scale, flat_grad)
    }

    fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }
}

/// Adam optimizer state for a [`QNetwork`].
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(parameters: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; parameters],
            v: vec![0.0; parameters],
        }
    }

    fn step(&mut self, net: &mut QNetwork, grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (i, p) in net.parameters_mut().enumerate() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}
