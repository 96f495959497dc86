//! Neural network building blocks on top of the tape: linear layers,
//! layer norm, multi-head attention, bidirectional LSTM stacks and a
//! temporal transformer encoder.

use std::cell::RefCell;

use ndarray::ArrayD;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{init_uniform, ParamStore, Scalar, Tape, Var};

/// Context threaded through module constructors.
pub struct Init<'a, F: Scalar> {
    pub store: &'a mut ParamStore<F>,
    pub rng: &'a mut ChaCha8Rng,
}

/// Context threaded through forward passes.
pub struct Fwd<'a, F: Scalar> {
    pub tape: &'a Tape<F>,
    pub store: &'a ParamStore<F>,
    pub train: bool,
    rng: RefCell<ChaCha8Rng>,
}

impl<'a, F: Scalar> Fwd<'a, F> {
    /// Inference-mode context (dropout disabled).
    pub fn eval(tape: &'a Tape<F>, store: &'a ParamStore<F>) -> Self {
        Fwd {
            tape,
            store,
            train: false,
            rng: RefCell::new(rand::SeedableRng::seed_from_u64(0)),
        }
    }

    /// Training-mode context; `seed` drives dropout masks.
    pub fn train(tape: &'a Tape<F>, store: &'a ParamStore<F>, seed: u64) -> Self {
        Fwd {
            tape,
            store,
            train: true,
            rng: RefCell::new(rand::SeedableRng::seed_from_u64(seed)),
        }
    }

    pub fn param(&self, name: &str) -> Var {
        self.tape.param(self.store, name)
    }
}

/// Inverted dropout; identity in eval mode.
pub fn dropout<F: Scalar>(f: &Fwd<F>, x: Var, p: f64) -> Var {
    if !f.train || p <= 0.0 {
        return x;
    }
    let keep = 1.0 - p;
    let shape = f.tape.shape(x);
    let mut rng = f.rng.borrow_mut();
    let mask = ArrayD::from_shape_simple_fn(shape.as_slice(), || {
        if rng.random::<f64>() < keep {
            F::cast(1.0 / keep)
        } else {
            F::zero()
        }
    });
    drop(rng);
    let m = f.tape.constant(mask);
    f.tape.mul(x, m)
}

/// Fully-connected layer `x @ w + b` over the last axis.
#[derive(Debug, Clone)]
pub struct Linear {
    w: String,
    b: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<F: Scalar>(init: &mut Init<F>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        init.store.insert(
            format!("{name}.w"),
            init_uniform(init.rng, &[in_dim, out_dim], in_dim),
        );
        init.store
            .insert(format!("{name}.b"), init_uniform(init.rng, &[out_dim], in_dim));
        Linear {
            w: format!("{name}.w"),
            b: format!("{name}.b"),
            in_dim,
            out_dim,
        }
    }

    pub fn apply<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Var {
        let w = f.param(&self.w);
        let b = f.param(&self.b);
        let y = f.tape.matmul(x, w);
        f.tape.add(y, b)
    }
}

/// Layer normalization over the last axis with learned scale/shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    gamma: String,
    beta: String,
    pub dim: usize,
}

impl LayerNorm {
    pub fn new<F: Scalar>(init: &mut Init<F>, name: &str, dim: usize) -> Self {
        init.store
            .insert(format!("{name}.gamma"), ArrayD::ones(vec![dim].as_slice()));
        init.store
            .insert(format!("{name}.beta"), ArrayD::zeros(vec![dim].as_slice()));
        LayerNorm {
            gamma: format!("{name}.gamma"),
            beta: format!("{name}.beta"),
            dim,
        }
    }

    pub fn apply<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Var {
        let gamma = f.param(&self.gamma);
        let beta = f.param(&self.beta);
        f.tape.layer_norm(x, gamma, beta, F::cast(1e-5))
    }
}

/// Multi-head scaled dot-product attention over the second-to-last axis.
///
/// `query` is `[..., m, d]`, `keys`/`values` come from `kv
/// [..., s, d]`; output is `[..., m, d]`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl MultiHeadAttention {
    pub fn new<F: Scalar>(init: &mut Init<F>, name: &str, dim: usize, heads: usize) -> Self {
        assert!(dim % heads == 0, "embed dim must divide into heads");
        MultiHeadAttention {
            wq: Linear::new(init, &format!("{name}.wq"), dim, dim),
            wk: Linear::new(init, &format!("{name}.wk"), dim, dim),
            wv: Linear::new(init, &format!("{name}.wv"), dim, dim),
            wo: Linear::new(init, &format!("{name}.wo"), dim, dim),
            heads,
            dim,
        }
    }

    fn split_heads<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Var {
        // [..., m, d] -> [..., h, m, d/h]
        let shape = f.tape.shape(x);
        let n = shape.len();
        let dh = self.dim / self.heads;
        let mut split = shape[..n - 1].to_vec();
        split.push(self.heads);
        split.push(dh);
        let x = f.tape.reshape(x, &split);
        let nl = split.len() - 3;
        let mut perm: Vec<usize> = (0..nl).collect();
        perm.extend_from_slice(&[nl + 1, nl, nl + 2]);
        f.tape.permute(x, &perm)
    }

    fn merge_heads<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Var {
        // [..., h, m, d/h] -> [..., m, d]
        let shape = f.tape.shape(x);
        let n = shape.len();
        let nl = n - 3;
        let mut perm: Vec<usize> = (0..nl).collect();
        perm.extend_from_slice(&[nl + 1, nl, nl + 2]);
        let x = f.tape.permute(x, &perm);
        let mut merged = shape[..n - 3].to_vec();
        merged.push(shape[n - 2]);
        merged.push(self.dim);
        f.tape.reshape(x, &merged)
    }

    pub fn apply<F: Scalar>(&self, f: &Fwd<F>, query: Var, kv: Var) -> Var {
        let q = self.split_heads(f, self.wq.apply(f, query));
        let k = self.split_heads(f, self.wk.apply(f, kv));
        let v = self.split_heads(f, self.wv.apply(f, kv));
        let kt = f.tape.transpose_last2(k);
        let scale = F::cast(1.0 / ((self.dim / self.heads) as f64).sqrt());
        let scores = f.tape.scale(f.tape.matmul(q, kt), scale);
        let attn = f.tape.softmax_last(scores);
        let ctx = f.tape.matmul(attn, v);
        let merged = self.merge_heads(f, ctx);
        self.wo.apply(f, merged)
    }
}

/// One direction of an LSTM layer with fused cell steps.
#[derive(Debug, Clone)]
struct LstmDirection {
    wx: String,
    wh: String,
    b: String,
    hidden: usize,
}

impl LstmDirection {
    fn new<F: Scalar>(init: &mut Init<F>, name: &str, input: usize, hidden: usize) -> Self {
        init.store.insert(
            format!("{name}.wx"),
            init_uniform(init.rng, &[input, 4 * hidden], hidden),
        );
        init.store.insert(
            format!("{name}.wh"),
            init_uniform(init.rng, &[hidden, 4 * hidden], hidden),
        );
        init.store.insert(
            format!("{name}.b"),
            init_uniform(init.rng, &[4 * hidden], hidden),
        );
        LstmDirection {
            wx: format!("{name}.wx"),
            wh: format!("{name}.wh"),
            b: format!("{name}.b"),
            hidden,
        }
    }

    fn apply<F: Scalar>(&self, f: &Fwd<F>, inputs: &[Var], reverse: bool) -> Vec<Var> {
        let batch = f.tape.shape(inputs[0])[0];
        let wx = f.param(&self.wx);
        let wh = f.param(&self.wh);
        let b = f.param(&self.b);
        let zeros = ArrayD::<F>::zeros(vec![batch, self.hidden].as_slice());
        let mut h = f.tape.constant(zeros.clone());
        let mut c = f.tape.constant(zeros);
        let mut out = Vec::with_capacity(inputs.len());
        let order: Vec<usize> = if reverse {
            (0..inputs.len()).rev().collect()
        } else {
            (0..inputs.len()).collect()
        };
        for &t in &order {
            let (nh, nc) = f.tape.lstm_cell(inputs[t], h, c, wx, wh, b);
            h = nh;
            c = nc;
            out.push(h);
        }
        if reverse {
            out.reverse();
        }
        out
    }
}

/// Stacked bidirectional LSTM. Consumes one `[B, D]` input per frame and
/// yields one `[B, 2H]` output per frame; dropout is applied between layers.
#[derive(Debug, Clone)]
pub struct BiLstm {
    layers: Vec<(LstmDirection, LstmDirection)>,
    pub hidden: usize,
    pub dropout: f64,
}

impl BiLstm {
    pub fn new<F: Scalar>(
        init: &mut Init<F>,
        name: &str,
        input: usize,
        hidden: usize,
        num_layers: usize,
        dropout: f64,
    ) -> Self {
        let mut layers = Vec::new();
        for l in 0..num_layers {
            let in_dim = if l == 0 { input } else { 2 * hidden };
            layers.push((
                LstmDirection::new(init, &format!("{name}.l{l}.f"), in_dim, hidden),
                LstmDirection::new(init, &format!("{name}.l{l}.b"), in_dim, hidden),
            ));
        }
        BiLstm {
            layers,
            hidden,
            dropout,
        }
    }

    pub fn apply<F: Scalar>(&self, f: &Fwd<F>, inputs: &[Var]) -> Vec<Var> {
        let mut current: Vec<Var> = inputs.to_vec();
        for (l, (fwd, bwd)) in self.layers.iter().enumerate() {
            if l > 0 {
                current = current
                    .iter()
                    .map(|&x| dropout(f, x, self.dropout))
                    .collect();
            }
            let hf = fwd.apply(f, &current, false);
            let hb = bwd.apply(f, &current, true);
            current = hf
                .iter()
                .zip(&hb)
                .map(|(&a, &b)| f.tape.concat(1, &[a, b]))
                .collect();
        }
        current
    }
}

/// Sinusoidal positional encoding table `[T, d]`.
pub fn positional_encoding<F: Scalar>(t_len: usize, dim: usize) -> ArrayD<F> {
    let mut pe = ndarray::Array2::<F>::zeros((t_len, dim));
    for t in 0..t_len {
        for i in 0..dim {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = t as f64 / rate;
            pe[[t, i]] = F::cast(if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe.into_dyn()
}

#[derive(Debug, Clone)]
struct TransformerLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

/// Temporal transformer encoder over `[B, T, d_in]` sequences: input
/// projection, sinusoidal positions, post-norm self-attention blocks.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    input_proj: Linear,
    layers: Vec<TransformerLayer>,
    pub d_model: usize,
    pub dropout: f64,
}

impl TransformerEncoder {
    pub fn new<F: Scalar>(
        init: &mut Init<F>,
        name: &str,
        d_in: usize,
        d_model: usize,
        heads: usize,
        num_layers: usize,
        dropout: f64,
    ) -> Self {
        let input_proj = Linear::new(init, &format!("{name}.proj"), d_in, d_model);
        let layers = (0..num_layers)
            .map(|l| TransformerLayer {
                attn: MultiHeadAttention::new(init, &format!("{name}.l{l}.attn"), d_model, heads),
                ln1: LayerNorm::new(init, &format!("{name}.l{l}.ln1"), d_model),
                ff1: Linear::new(init, &format!("{name}.l{l}.ff1"), d_model, 2 * d_model),
                ff2: Linear::new(init, &format!("{name}.l{l}.ff2"), 2 * d_model, d_model),
                ln2: LayerNorm::new(init, &format!("{name}.l{l}.ln2"), d_model),
            })
            .collect();
        TransformerEncoder {
            input_proj,
            layers,
            d_model,
            dropout,
        }
    }

    pub fn apply<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Var {
        let t_len = f.tape.shape(x)[f.tape.shape(x).len() - 2];
        let mut h = self.input_proj.apply(f, x);
        let pe = f.tape.constant(positional_encoding::<F>(t_len, self.d_model));
        h = f.tape.add(h, pe);
        for layer in &self.layers {
            let a = dropout(f, layer.attn.apply(f, h, h), self.dropout);
            h = layer.ln1.apply(f, f.tape.add(h, a));
            let ff = layer.ff2.apply(f, f.tape.relu(layer.ff1.apply(f, h)));
            let ff = dropout(f, ff, self.dropout);
            h = layer.ln2.apply(f, f.tape.add(h, ff));
        }
        h
    }
}
