//! Transformer encoder over token sequences with a flatten-linear head.
//!
//! Token features are the RevIN-normalized value channels followed by the
//! normalized center. Each encoder layer is post-norm: attention with
//! residual logits carried from the previous layer, batch norm, a GELU
//! feed-forward block, batch norm. Forecasts come out in the units of the
//! target series (already globally normalized by the caller).

use std::fmt;

use bsat::posenc::{PosEncMode, DEFAULT_ROPE_BASE};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::revin::{normalize_centers, revin_forward};
use crate::tape::{HeadLayout, Mat, RotaryBase, Tape, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LPE_INIT_SCALE: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub layers: usize,
    pub d_model: usize,
    pub heads: usize,
    pub ff_factor: usize,
    /// After the embedding and on each residual branch.
    pub dropout: f64,
    /// Inside the feed-forward block.
    pub fc_dropout: f64,
    /// On post-softmax attention weights.
    pub attn_dropout: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub horizon: usize,
    pub mode: PosEncMode,
    /// Tokens per window.
    pub tokens: usize,
    /// Value channels per token: 1 for spline and downsampled tokens, the patch length for patches.
    pub value_dim: usize,
    pub lookback: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            d_model: 32,
            heads: 4,
            ff_factor: 2,
            dropout: 0.1,
            fc_dropout: 0.1,
            attn_dropout: 0.0,
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            seed: 0,
            horizon: 96,
            mode: PosEncMode::LRopeLpe,
            tokens: 45,
            value_dim: 1,
            lookback: 720,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.d_model / self.heads.max(1)
    }

    pub fn d_ff(&self) -> usize {
        self.d_model * self.ff_factor
    }

    pub fn input_dim(&self) -> usize {
        self.value_dim + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.layers == 0 || self.heads == 0 || self.d_model == 0 || self.ff_factor == 0 {
            return bad("layers, heads, d_model and ff_factor must be >= 1".into());
        }
        if !self.d_model.is_multiple_of(self.heads) {
            return bad(format!("d_model {} is not divisible by {} heads", self.d_model, self.heads));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad(format!("head dimension {} must be even", self.head_dim()));
        }
        if self.tokens == 0 || self.value_dim == 0 || self.horizon == 0 || self.lookback < 2 {
            return bad("tokens, value_dim and horizon must be >= 1 and lookback >= 2".into());
        }
        for (name, p) in [
            ("dropout", self.dropout),
            ("fc_dropout", self.fc_dropout),
            ("attn_dropout", self.attn_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning rate must be > 0 and weight decay >= 0".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Embedding,
    Lpe,
    Attention,
    Norm,
    FeedForward,
    Phi,
    Head,
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Embedding => "embedding",
            Self::Lpe => "lpe",
            Self::Attention => "attention",
            Self::Norm => "norm",
            Self::FeedForward => "ffn",
            Self::Phi => "phi",
            Self::Head => "head",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub value: Mat,
    /// Weight decay applies only to weight matrices.
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnRunning {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
struct LayerIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
    bn1_g: usize,
    bn1_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    bn2_g: usize,
    bn2_b: usize,
    phi: usize,
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    w_in: usize,
    b_in: usize,
    lpe: usize,
    layers: Vec<LayerIdx>,
    w_head: usize,
    b_head: usize,
}

/// One training or evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenWindow {
    /// `tokens × value_dim`, row-major.
    pub values: Vec<f64>,
    /// Token positions in samples, within `[0, L−1]`.
    pub centers: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Batch statistics and dropout.
    Train,
    /// Running statistics, no dropout.
    Eval,
}

pub struct Forward {
    /// `batch × horizon`.
    pub output: Var,
    pub param_vars: Vec<Var>,
    /// Biased batch mean and variance of every batch-norm layer, in order.
    pub bn_stats: Vec<(Vec<f64>, Vec<f64>)>,
    /// Post-softmax attention weights per layer.
    pub attention: Vec<Var>,
    pub rows: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    pub running: Vec<BnRunning>,
    layout: Layout,
}

struct Builder<'a> {
    params: Vec<Param>,
    rng: &'a mut ChaCha8Rng,
}

impl Builder<'_> {
    fn xavier(&mut self, name: String, group: ParamGroup, fan_in: usize, fan_out: usize) -> usize {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out).map(|_| self.rng.random_range(-a..=a)).collect();
        self.push(name, group, Mat::from_vec(fan_in, fan_out, data), true)
    }

    fn constant(&mut self, name: String, group: ParamGroup, rows: usize, cols: usize, v: f64) -> usize {
        self.push(name, group, Mat::from_vec(rows, cols, vec![v; rows * cols]), false)
    }

    fn push(&mut self, name: String, group: ParamGroup, value: Mat, decay: bool) -> usize {
        self.params.push(Param {
            name,
            group,
            value,
            decay,
        });
        self.params.len() - 1
    }
}

fn build(config: &ModelConfig, rng: &mut ChaCha8Rng) -> (Vec<Param>, Layout) {
    use ParamGroup::*;
    let d = config.d_model;
    let dff = config.d_ff();
    let mut b = Builder {
        params: Vec::new(),
        rng,
    };
    let w_in = b.xavier("embed.w".into(), Embedding, config.input_dim(), d);
    let b_in = b.constant("embed.b".into(), Embedding, 1, d, 0.0);
    let lpe_data = (0..config.tokens * d)
        .map(|_| b.rng.random_range(-LPE_INIT_SCALE..=LPE_INIT_SCALE))
        .collect();
    let lpe = b.push("lpe".into(), Lpe, Mat::from_vec(config.tokens, d, lpe_data), false);
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let p = |s: &str| format!("layer{l}.{s}");
        layers.push(LayerIdx {
            wq: b.xavier(p("wq"), Attention, d, d),
            bq: b.constant(p("bq"), Attention, 1, d, 0.0),
            wk: b.xavier(p("wk"), Attention, d, d),
            bk: b.constant(p("bk"), Attention, 1, d, 0.0),
            wv: b.xavier(p("wv"), Attention, d, d),
            bv: b.constant(p("bv"), Attention, 1, d, 0.0),
            wo: b.xavier(p("wo"), Attention, d, d),
            bo: b.constant(p("bo"), Attention, 1, d, 0.0),
            bn1_g: b.constant(p("bn1.gamma"), Norm, 1, d, 1.0),
            bn1_b: b.constant(p("bn1.beta"), Norm, 1, d, 0.0),
            w1: b.xavier(p("ffn.w1"), FeedForward, d, dff),
            b1: b.constant(p("ffn.b1"), FeedForward, 1, dff, 0.0),
            w2: b.xavier(p("ffn.w2"), FeedForward, dff, d),
            b2: b.constant(p("ffn.b2"), FeedForward, 1, d, 0.0),
            bn2_g: b.constant(p("bn2.gamma"), Norm, 1, d, 1.0),
            bn2_b: b.constant(p("bn2.beta"), Norm, 1, d, 0.0),
            phi: b.constant(p("phi"), Phi, 1, 1, DEFAULT_ROPE_BASE.ln()),
        });
    }
    let w_head = b.xavier("head.w".into(), Head, config.tokens * d, config.horizon);
    let b_head = b.constant("head.b".into(), Head, 1, config.horizon, 0.0);
    let layout = Layout {
        w_in,
        b_in,
        lpe,
        layers,
        w_head,
        b_head,
    };
    (b.params, layout)
}

fn dropout_mask(rng: &mut ChaCha8Rng, len: usize, rate: f64) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect()
}

impl Model {
    /// Xavier-uniform weights, zero biases, unit norms, LPE in `±0.02`, `φ = ln 10⁴`.
    ///
    /// Every parameter is allocated in every mode so that initialization
    /// does not depend on the positional mode.
    pub fn new(config: ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let (params, layout) = build(&config, rng);
        let running = (0..2 * config.layers)
            .map(|_| BnRunning {
                mean: vec![0.0; config.d_model],
                var: vec![1.0; config.d_model],
            })
            .collect();
        Ok(Self {
            config,
            params,
            running,
            layout,
        })
    }

    /// Rebuilds a model around stored parameters, checking names and shapes.
    pub fn from_parts(config: ModelConfig, params: Vec<Param>, running: Vec<BnRunning>) -> Result<Self> {
        config.validate()?;
        let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let (template, layout) = build(&config, &mut rng);
        if template.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameter tensors, found {}",
                template.len(),
                params.len()
            )));
        }
        for (t, p) in template.iter().zip(&params) {
            if t.name != p.name || t.value.rows != p.value.rows || t.value.cols != p.value.cols {
                return Err(Error::Checkpoint(format!(
                    "parameter {} ({}x{}) does not match expected {} ({}x{})",
                    p.name, p.value.rows, p.value.cols, t.name, t.value.rows, t.value.cols
                )));
            }
        }
        if running.len() != 2 * config.layers
            || running
                .iter()
                .any(|r| r.mean.len() != config.d_model || r.var.len() != config.d_model)
        {
            return Err(Error::Checkpoint("batch-norm running statistics have the wrong shape".into()));
        }
        Ok(Self {
            config,
            params,
            running,
            layout,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Learned log-bases `φ⁽ˡ⁾`, one per layer.
    pub fn phis(&self) -> Vec<f64> {
        self.layout
            .layers
            .iter()
            .map(|l| self.params[l.phi].value.data[0])
            .collect()
    }

    /// Rotary base in effect at each layer.
    pub fn layer_bases(&self) -> Vec<f64> {
        if self.config.mode.learnable_base() {
            self.phis().into_iter().map(f64::exp).collect()
        } else {
            vec![DEFAULT_ROPE_BASE; self.config.layers]
        }
    }

    pub fn lpe_table_mut(&mut self) -> &mut Mat {
        &mut self.params[self.layout.lpe].value
    }

    pub fn head_mut(&mut self) -> (&mut Mat, usize) {
        (&mut self.params[self.layout.w_head].value, self.layout.b_head)
    }

    fn check_window(&self, w: &TokenWindow) -> Result<()> {
        let c = &self.config;
        if w.values.len() != c.tokens * c.value_dim || w.centers.len() != c.tokens {
            return Err(Error::Shape(format!(
                "expected {} tokens of width {}, got {} values and {} centers",
                c.tokens,
                c.value_dim,
                w.values.len(),
                w.centers.len()
            )));
        }
        if !w.target.is_empty() && w.target.len() != c.horizon {
            return Err(Error::Shape(format!(
                "target has {} values, horizon is {}",
                w.target.len(),
                c.horizon
            )));
        }
        Ok(())
    }

    /// Builds the computation for `batch` on `tape`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        batch: &[&TokenWindow],
        phase: Phase,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Forward> {
        if batch.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        let c = &self.config;
        let (n, d, vd) = (c.tokens, c.d_model, c.value_dim);
        let rows = batch.len() * n;
        let in_dim = c.input_dim();

        let mut features = Vec::with_capacity(rows * in_dim);
        let mut positions = Vec::with_capacity(rows);
        let mut scales = Vec::with_capacity(batch.len());
        let mut shifts = Vec::with_capacity(batch.len());
        for w in batch {
            self.check_window(w)?;
            let (z, state) = revin_forward(&w.values)?;
            let centers = normalize_centers(&w.centers, c.lookback)?;
            for i in 0..n {
                features.extend_from_slice(&z[i * vd..(i + 1) * vd]);
                features.push(centers[i]);
            }
            positions.extend_from_slice(&w.centers);
            scales.push(state.std);
            shifts.push(state.mean);
        }

        let param_vars: Vec<Var> = self.params.iter().map(|p| tape.leaf(p.value.clone())).collect();
        let pv = |i: usize| param_vars[i];
        let lay = &self.layout;
        let train = phase == Phase::Train;
        let mut drop = |tape: &mut Tape, x: Var, rate: f64| -> Var {
            match rng.as_deref_mut() {
                Some(r) if train && rate > 0.0 => {
                    let len = tape.value(x).len();
                    let m = dropout_mask(r, len, rate);
                    tape.mask(x, m)
                }
                _ => x,
            }
        };

        let x = tape.leaf(Mat::from_vec(rows, in_dim, features));
        let e = tape.matmul(x, pv(lay.w_in));
        let mut h = tape.add_bias(e, pv(lay.b_in));
        if c.mode.uses_lpe() {
            let idx = (0..batch.len()).flat_map(|_| 0..n).collect();
            let p = tape.gather_rows(pv(lay.lpe), idx);
            h = tape.add(h, p);
        }
        h = drop(tape, h, c.dropout);

        let hl = HeadLayout {
            batch: batch.len(),
            tokens: n,
            heads: c.heads,
            head_dim: c.head_dim(),
        };
        let scale = 1.0 / (c.head_dim() as f64).sqrt();
        let mut prev = None;
        let mut bn_stats = Vec::with_capacity(2 * c.layers);
        let mut attention = Vec::with_capacity(c.layers);
        let mut norm = |tape: &mut Tape, x: Var, g: usize, b: usize, k: usize| -> Var {
            if train {
                let (y, mean, var) = tape.batch_norm(x, pv(g), pv(b), BN_EPS);
                bn_stats.push((mean, var));
                y
            } else {
                let r = &self.running[k];
                let inv = r.var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
                tape.column_affine(x, pv(g), pv(b), r.mean.clone(), inv)
            }
        };

        for (l, li) in lay.layers.iter().enumerate() {
            let proj = |tape: &mut Tape, x: Var, w: usize, b: usize| {
                let m = tape.matmul(x, pv(w));
                tape.add_bias(m, pv(b))
            };
            let mut q = proj(tape, h, li.wq, li.bq);
            let mut k = proj(tape, h, li.wk, li.bk);
            let v = proj(tape, h, li.wv, li.bv);
            if c.mode.uses_rope() {
                let base = if c.mode.learnable_base() {
                    RotaryBase::Learned(pv(li.phi))
                } else {
                    RotaryBase::Fixed(DEFAULT_ROPE_BASE)
                };
                q = tape.rotary(q, positions.clone(), c.heads, base);
                k = tape.rotary(k, positions.clone(), c.heads, base);
            }
            let s = tape.attention_scores(q, k, prev, hl, scale);
            prev = Some(s);
            let a = tape.softmax_rows(s);
            attention.push(a);
            let a = drop(tape, a, c.attn_dropout);
            let o = tape.attention_apply(a, v, hl);
            let o = proj(tape, o, li.wo, li.bo);
            let o = drop(tape, o, c.dropout);
            let r = tape.add(h, o);
            h = norm(tape, r, li.bn1_g, li.bn1_b, 2 * l);

            let f = proj(tape, h, li.w1, li.b1);
            let f = tape.gelu(f);
            let f = drop(tape, f, c.fc_dropout);
            let f = proj(tape, f, li.w2, li.b2);
            let f = drop(tape, f, c.dropout);
            let r = tape.add(h, f);
            h = norm(tape, r, li.bn2_g, li.bn2_b, 2 * l + 1);
        }

        let flat = tape.reshape(h, batch.len(), n * d);
        let y = tape.matmul(flat, pv(lay.w_head));
        let y = tape.add_bias(y, pv(lay.b_head));
        let output = tape.row_affine(y, scales, &shifts);
        Ok(Forward {
            output,
            param_vars,
            bn_stats,
            attention,
            rows,
        })
    }

    /// Forward pass plus mean squared error against the batch targets.
    pub fn loss(
        &self,
        tape: &mut Tape,
        batch: &[&TokenWindow],
        phase: Phase,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Forward)> {
        let fwd = self.forward(tape, batch, phase, rng)?;
        let mut target = Vec::with_capacity(batch.len() * self.config.horizon);
        for w in batch {
            if w.target.len() != self.config.horizon {
                return Err(Error::Shape(format!(
                    "target has {} values, horizon is {}",
                    w.target.len(),
                    self.config.horizon
                )));
            }
            target.extend_from_slice(&w.target);
        }
        let loss = tape.mse(fwd.output, target);
        Ok((loss, fwd))
    }

    /// Exponential moving update of the batch-norm running statistics.
    pub fn update_running(&mut self, stats: &[(Vec<f64>, Vec<f64>)], rows: usize) {
        let unbias = if rows > 1 {
            rows as f64 / (rows - 1) as f64
        } else {
            1.0
        };
        for (r, (mean, var)) in self.running.iter_mut().zip(stats) {
            for j in 0..r.mean.len() {
                r.mean[j] = (1.0 - BN_MOMENTUM) * r.mean[j] + BN_MOMENTUM * mean[j];
                r.var[j] = (1.0 - BN_MOMENTUM) * r.var[j] + BN_MOMENTUM * var[j] * unbias;
            }
        }
    }

    /// Evaluation-mode forecasts, one vector of `horizon` values per window.
    pub fn predict(&self, batch: &[&TokenWindow]) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, batch, Phase::Eval, None)?;
        let out = tape.value(fwd.output);
        let preds: Vec<Vec<f64>> = (0..out.rows).map(|r| out.row(r).to_vec()).collect();
        if preds.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Shape("forecast contains non-finite values".into()));
        }
        Ok(preds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny(mode: PosEncMode) -> ModelConfig {
        ModelConfig {
            layers: 2,
            d_model: 16,
            heads: 4,
            ff_factor: 2,
            dropout: 0.0,
            fc_dropout: 0.0,
            attn_dropout: 0.0,
            horizon: 4,
            mode,
            tokens: 8,
            lookback: 64,
            ..ModelConfig::default()
        }
    }

    fn window(rng: &mut ChaCha8Rng, n: usize, h: usize) -> TokenWindow {
        let mut centers: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..63.0)).collect();
        centers.sort_by(f64::total_cmp);
        TokenWindow {
            values: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            centers,
            target: (0..h).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    #[test]
    fn config_validation() {
        assert!(tiny(PosEncMode::Lpe).validate().is_ok());
        assert!(ModelConfig { heads: 3, ..tiny(PosEncMode::Lpe) }.validate().is_err());
        assert!(ModelConfig { d_model: 12, heads: 4, ..tiny(PosEncMode::Lpe) }.validate().is_err());
        assert!(ModelConfig { dropout: 1.0, ..tiny(PosEncMode::Lpe) }.validate().is_err());
    }

    #[test]
    fn attention_rows_normalized_and_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = Model::new(tiny(PosEncMode::LRopeLpe), &mut rng).unwrap();
        let ws: Vec<TokenWindow> = (0..3).map(|_| window(&mut rng, 8, 4)).collect();
        let refs: Vec<&TokenWindow> = ws.iter().collect();
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &refs, Phase::Train, None).unwrap();
        assert_eq!((tape.value(f.output).rows, tape.value(f.output).cols), (3, 4));
        for a in &f.attention {
            let m = tape.value(*a);
            for r in 0..m.rows {
                assert!((m.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
            }
        }
        let bad = TokenWindow {
            values: vec![0.0; 7],
            ..ws[0].clone()
        };
        assert!(model.predict(&[&bad]).is_err());
    }

    #[test]
    fn single_token_attention_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = ModelConfig {
            tokens: 1,
            value_dim: 3,
            ..tiny(PosEncMode::FRope)
        };
        let model = Model::new(cfg, &mut rng).unwrap();
        let w = TokenWindow {
            values: vec![1.0, 2.0, 4.0],
            centers: vec![10.0],
            target: vec![0.0; 4],
        };
        let mut tape = Tape::new();
        let f = model.forward(&mut tape, &[&w], Phase::Eval, None).unwrap();
        assert!(f.attention.iter().all(|a| tape.value(*a).data == vec![1.0; 4]));
    }

    #[test]
    fn modes_agree_without_positional_signal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = window(&mut rng, 8, 4);
        w.centers = vec![0.0; 8];
        let mut outs = Vec::new();
        for mode in PosEncMode::ALL {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            let mut m = Model::new(tiny(mode), &mut r).unwrap();
            m.lpe_table_mut().data.iter_mut().for_each(|v| *v = 0.0);
            outs.push(m.predict(&[&w]).unwrap());
        }
        assert!(outs.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn zero_head_forecasts_window_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut m = Model::new(tiny(PosEncMode::Lpe), &mut rng).unwrap();
        let (w_head, b_idx) = m.head_mut();
        w_head.data.iter_mut().for_each(|v| *v = 0.0);
        assert!(m.params[b_idx].value.data.iter().all(|&v| v == 0.0));
        let w = window(&mut rng, 8, 4);
        let mean = w.values.iter().sum::<f64>() / 8.0;
        for v in &m.predict(&[&w]).unwrap()[0] {
            assert!((v - mean).abs() < 1e-12);
        }
        for h in [1, 24, 96] {
            let mut r = ChaCha8Rng::seed_from_u64(5);
            let m = Model::new(ModelConfig { horizon: h, ..tiny(PosEncMode::Lpe) }, &mut r).unwrap();
            let mut w = window(&mut r, 8, h);
            w.target.clear();
            assert_eq!(m.predict(&[&w]).unwrap()[0].len(), h);
        }
    }

    #[test]
    fn reconstruct_from_parts() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = Model::new(tiny(PosEncMode::LRope), &mut rng).unwrap();
        let back = Model::from_parts(m.config.clone(), m.params.clone(), m.running.clone()).unwrap();
        assert_eq!(back, m);
        let mut params = m.params.clone();
        params.pop();
        assert!(Model::from_parts(m.config.clone(), params, m.running.clone()).is_err());
    }
}
