//! AdamW, global-norm gradient clipping and the epoch learning-rate schedule.

/// Warmup from 5% of peak over 10 epochs, cosine decay to 1% of peak over the
/// next 40, then flat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub peak: f64,
    pub warmup_epochs: usize,
    pub decay_epochs: usize,
    pub start_fraction: f64,
    pub floor_fraction: f64,
}

impl LrSchedule {
    pub fn new(peak: f64) -> Self {
        Self {
            peak,
            warmup_epochs: 10,
            decay_epochs: 40,
            start_fraction: 0.05,
            floor_fraction: 0.01,
        }
    }

    pub fn at(&self, epoch: usize) -> f64 {
        let start = self.start_fraction * self.peak;
        let floor = self.floor_fraction * self.peak;
        if epoch < self.warmup_epochs {
            return start + (self.peak - start) * epoch as f64 / self.warmup_epochs as f64;
        }
        let t = epoch - self.warmup_epochs;
        if t >= self.decay_epochs {
            return floor;
        }
        let cos = (std::f64::consts::PI * t as f64 / self.decay_epochs as f64).cos();
        floor + 0.5 * (self.peak - floor) * (1.0 + cos)
    }
}

/// Scales all gradients so their joint L2 norm is at most `max_norm`; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Vec<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v *= s;
            }
        }
    }
    norm
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(sizes: &[usize], weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update of every tensor; `decay[i]` selects weight decay for tensor `i`.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], decay: &[bool], lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, p) in params.iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[i], &mut self.v[i], &grads[i]);
            for j in 0..p.len() {
                if decay[i] {
                    p[j] -= lr * self.weight_decay * p[j];
                }
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] -= lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
