//! Permutation-equivariant and permutation-invariant set encoders.
//!
//! The building block is a stack of full self-attention set blocks with
//! residual connections and feature normalization ([`StEncoder`], which is
//! permutation-equivariant), optionally followed by multi-head attention
//! pooling with one learned seed ([`StFull`], which is permutation-invariant).
//! On top of these, four game-context encoders are provided:
//!
//! - [`PpeEncoder`]: one shared equivariant encoder per team plus an
//!   agent-wise fully-connected map for the ball-out pseudo-agents, so
//!   information never crosses the team blocks.
//! - FPE: a single equivariant encoder over all agents (plain [`StEncoder`]).
//! - FPI: a single invariant encoder over all agents (plain [`StFull`]).
//! - [`PpiEncoder`]: team-wise invariant pooling fused by a fully-connected
//!   layer; invariant within teams but not across them.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::autodiff::nn::{Fwd, Init, LayerNorm, Linear, MultiHeadAttention};
use crate::autodiff::{Scalar, Var};
use crate::error::{Error, Result};

/// Hyperparameters of a set encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetEncoderConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub use_pma_decoder: bool,
}

impl SetEncoderConfig {
    pub fn new(embed_dim: usize, num_heads: usize) -> Self {
        SetEncoderConfig {
            embed_dim,
            num_heads,
            num_blocks: 2,
            use_pma_decoder: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.num_heads == 0 || self.num_blocks == 0 {
            return Err(Error::Config("set encoder dims must be positive".into()));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            )));
        }
        Ok(())
    }
}

/// Self-attention set block: residual multi-head attention and a residual
/// feed-forward map, each followed by layer norm.
#[derive(Debug, Clone)]
pub struct SetAttentionBlock {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

impl SetAttentionBlock {
    pub fn new<F: Scalar>(init: &mut Init<F>, name: &str, dim: usize, heads: usize) -> Self {
        SetAttentionBlock {
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads),
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim),
            ff1: Linear::new(init, &format!("{name}.ff1"), dim, 2 * dim),
            ff2: Linear::new(init, &format!("{name}.ff2"), 2 * dim, dim),
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim),
        }
    }

    pub fn apply<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Var {
        let h = self.ln1.apply(f, f.tape.add(x, self.attn.apply(f, x, x)));
        let ff = self.ff2.apply(f, f.tape.relu(self.ff1.apply(f, h)));
        self.ln2.apply(f, f.tape.add(h, ff))
    }
}

fn check_set_shape<F: Scalar>(f: &Fwd<F>, x: Var) -> Result<usize> {
    let shape = f.tape.shape(x);
    if shape.len() < 2 {
        return Err(Error::Shape(format!(
            "set input needs at least 2 dims, got {shape:?}"
        )));
    }
    let m = shape[shape.len() - 2];
    if m == 0 {
        return Err(Error::EmptySet);
    }
    Ok(m)
}

/// Permutation-equivariant encoder: input projection plus stacked
/// [`SetAttentionBlock`]s. `[..., m, d_in] -> [..., m, d]`.
#[derive(Debug, Clone)]
pub struct StEncoder {
    proj: Linear,
    blocks: Vec<SetAttentionBlock>,
    pub config: SetEncoderConfig,
}

impl StEncoder {
    pub fn new<F: Scalar>(
        init: &mut Init<F>,
        name: &str,
        d_in: usize,
        config: SetEncoderConfig,
    ) -> Self {
        config.validate().expect("valid set encoder config");
        let proj = Linear::new(init, &format!("{name}.proj"), d_in, config.embed_dim);
        let blocks = (0..config.num_blocks)
            .map(|i| {
                SetAttentionBlock::new(
                    init,
                    &format!("{name}.sab{i}"),
                    config.embed_dim,
                    config.num_heads,
                )
            })
            .collect();
        StEncoder {
            proj,
            blocks,
            config,
        }
    }

    pub fn encode<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Result<Var> {
        check_set_shape(f, x)?;
        let mut h = self.proj.apply(f, x);
        for block in &self.blocks {
            h = block.apply(f, h);
        }
        Ok(h)
    }
}

/// Multi-head attention pooling with one learned seed followed by one
/// self-attention block. `[..., m, d] -> [..., d]`.
#[derive(Debug, Clone)]
pub struct PmaDecoder {
    seed: String,
    attn: MultiHeadAttention,
    ln: LayerNorm,
    post: SetAttentionBlock,
    dim: usize,
}

impl PmaDecoder {
    pub fn new<F: Scalar>(init: &mut Init<F>, name: &str, dim: usize, heads: usize) -> Self {
        init.store.insert(
            format!("{name}.seed"),
            crate::autodiff::init_uniform(init.rng, &[1, dim], dim),
        );
        PmaDecoder {
            seed: format!("{name}.seed"),
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads),
            ln: LayerNorm::new(init, &format!("{name}.ln"), dim),
            post: SetAttentionBlock::new(init, &format!("{name}.post"), dim, heads),
            dim,
        }
    }

    pub fn pool<F: Scalar>(&self, f: &Fwd<F>, z: Var) -> Var {
        let shape = f.tape.shape(z);
        let n = shape.len();
        // Broadcast the learned seed to the leading dims of `z`.
        let mut seed_shape = shape[..n - 2].to_vec();
        seed_shape.push(1);
        seed_shape.push(self.dim);
        let zeros = f.tape.constant(ArrayD::<F>::zeros(seed_shape.as_slice()));
        let seed = f.tape.add(f.param(&self.seed), zeros);
        let pooled = self.ln.apply(f, f.tape.add(seed, self.attn.apply(f, seed, z)));
        let refined = self.post.apply(f, pooled);
        let mut out_shape = shape[..n - 2].to_vec();
        out_shape.push(self.dim);
        f.tape.reshape(refined, &out_shape)
    }
}

/// Full set transformer: equivariant encoder plus invariant pooling
/// decoder. `[..., m, d_in] -> [..., d]`.
#[derive(Debug, Clone)]
pub struct StFull {
    pub encoder: StEncoder,
    decoder: PmaDecoder,
}

impl StFull {
    pub fn new<F: Scalar>(
        init: &mut Init<F>,
        name: &str,
        d_in: usize,
        config: SetEncoderConfig,
    ) -> Self {
        let encoder = StEncoder::new(init, &format!("{name}.enc"), d_in, config);
        let decoder = PmaDecoder::new(
            init,
            &format!("{name}.dec"),
            config.embed_dim,
            config.num_heads,
        );
        StFull { encoder, decoder }
    }

    pub fn encode<F: Scalar>(&self, f: &Fwd<F>, x: Var) -> Result<Var> {
        let z = self.encoder.encode(f, x)?;
        Ok(self.decoder.pool(f, z))
    }
}

fn split_agents<F: Scalar>(f: &Fwd<F>, feats: Var, n: usize) -> Result<(Var, Var, Var)> {
    let shape = f.tape.shape(feats);
    let ndim = shape.len();
    let agents = shape[ndim - 2];
    if agents != 2 * n + 4 {
        return Err(Error::Shape(format!(
            "expected {} agents (2n + 4 with n = {n}), got {agents}",
            2 * n + 4
        )));
    }
    let axis = ndim - 2;
    let t1 = f.tape.slice_ax(feats, axis, 0, n);
    let t2 = f.tape.slice_ax(feats, axis, n, 2 * n);
    let out = f.tape.slice_ax(feats, axis, 2 * n, 2 * n + 4);
    Ok((t1, t2, out))
}

/// Teammate-aware equivariant encoding: one shared [`StEncoder`] applied to
/// each team block and an agent-wise fully-connected map for the ball-out
/// pseudo-agents. Information does not leak across the three blocks.
#[derive(Debug, Clone)]
pub struct PpeEncoder {
    team_encoder: StEncoder,
    ball_out_fc: Linear,
}

impl PpeEncoder {
    pub fn new<F: Scalar>(
        init: &mut Init<F>,
        name: &str,
        d_in: usize,
        config: SetEncoderConfig,
    ) -> Self {
        PpeEncoder {
            team_encoder: StEncoder::new(init, &format!("{name}.team"), d_in, config),
            ball_out_fc: Linear::new(init, &format!("{name}.out_fc"), d_in, config.embed_dim),
        }
    }

    /// `feats` is `[..., 2n+4, d_in]` in roster order; returns
    /// `[..., 2n+4, d]`.
    pub fn encode<F: Scalar>(&self, f: &Fwd<F>, feats: Var, n: usize) -> Result<Var> {
        let (t1, t2, out) = split_agents(f, feats, n)?;
        let z1 = self.team_encoder.encode(f, t1)?;
        let z2 = self.team_encoder.encode(f, t2)?;
        let zo = self.ball_out_fc.apply(f, out);
        let axis = f.tape.shape(feats).len() - 2;
        Ok(f.tape.concat(axis, &[z1, z2, zo]))
    }
}

/// Team-wise invariant pooling fused by a fully-connected layer. The fused
/// embedding is invariant to within-team permutations but sensitive to
/// swapping the team blocks. Optionally consumes the ball-out pseudo-agents
/// through a fully-connected map of their concatenated features.
#[derive(Debug, Clone)]
pub struct PpiEncoder {
    team: StFull,
    ball_out_fc: Option<Linear>,
    fuse: Linear,
    pub embed_dim: usize,
}

/// The team-wise and fused embeddings produced by [`PpiEncoder::encode`].
pub struct PpiParts {
    pub team1: Var,
    pub team2: Var,
    pub ball_out: Option<Var>,
    pub fused: Var,
}

impl PpiEncoder {
    pub fn new<F: Scalar>(
        init: &mut Init<F>,
        name: &str,
        d_in: usize,
        config: SetEncoderConfig,
        with_ball_out: bool,
    ) -> Self {
        let d = config.embed_dim;
        let team = StFull::new(init, &format!("{name}.team"), d_in, config);
        let ball_out_fc = with_ball_out
            .then(|| Linear::new(init, &format!("{name}.out_fc"), 4 * d_in, d));
        let parts = if with_ball_out { 3 } else { 2 };
        let fuse = Linear::new(init, &format!("{name}.fuse"), parts * d, d);
        PpiEncoder {
            team,
            ball_out_fc,
            fuse,
            embed_dim: d,
        }
    }

    /// `feats` is `[..., 2n+4, d_in]` (or `[..., 2n, d_in]` without
    /// ball-out agents); returns per-part and fused embeddings `[..., d]`.
    pub fn encode<F: Scalar>(&self, f: &Fwd<F>, feats: Var, n: usize) -> Result<PpiParts> {
        let shape = f.tape.shape(feats);
        let ndim = shape.len();
        let axis = ndim - 2;
        let d_in = shape[ndim - 1];
        let (t1, t2, out) = if self.ball_out_fc.is_some() {
            let (t1, t2, out) = split_agents(f, feats, n)?;
            (t1, t2, Some(out))
        } else {
            if shape[axis] != 2 * n {
                return Err(Error::Shape(format!(
                    "expected {} outfield agents, got {}",
                    2 * n,
                    shape[axis]
                )));
            }
            (
                f.tape.slice_ax(feats, axis, 0, n),
                f.tape.slice_ax(feats, axis, n, 2 * n),
                None,
            )
        };
        let z1 = self.team.encode(f, t1)?;
        let z2 = self.team.encode(f, t2)?;
        let z_out = match (&self.ball_out_fc, out) {
            (Some(fc), Some(out)) => {
                let mut flat_shape = shape[..axis].to_vec();
                flat_shape.push(4 * d_in);
                let flat = f.tape.reshape(out, &flat_shape);
                Some(fc.apply(f, flat))
            }
            _ => None,
        };
        let last = f.tape.shape(z1).len() - 1;
        let fused_in = match z_out {
            Some(zo) => f.tape.concat(last, &[z1, z2, zo]),
            None => f.tape.concat(last, &[z1, z2]),
        };
        let fused = self.fuse.apply(f, fused_in);
        Ok(PpiParts {
            team1: z1,
            team2: z2,
            ball_out: z_out,
            fused,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck::max_rel_error_inputs;
    use crate::autodiff::nn::{Fwd, Init};
    use crate::autodiff::{ParamStore, Scalar, Tape};
    use ndarray::{ArrayD, IxDyn};
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randn<F: Scalar>(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<F> {
        ArrayD::from_shape_simple_fn(IxDyn(shape), || F::cast(rng.random_range(-1.0..1.0)))
    }

    fn permute_rows<F: Scalar>(x: &ArrayD<F>, perm: &[usize]) -> ArrayD<F> {
        let mut out = x.clone();
        for (dst, &src) in perm.iter().enumerate() {
            out.index_axis_mut(ndarray::Axis(0), dst)
                .assign(&x.index_axis(ndarray::Axis(0), src));
        }
        out
    }

    fn max_abs_diff<F: Scalar>(a: &ArrayD<F>, b: &ArrayD<F>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (*x - *y).abs().as_f64())
            .fold(0.0, f64::max)
    }

    fn tiny_config() -> SetEncoderConfig {
        SetEncoderConfig::new(8, 2)
    }

    #[test]
    fn st_encode_is_permutation_equivariant_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut store = ParamStore::<f32>::new();
        let enc = StEncoder::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "enc",
            5,
            tiny_config(),
        );
        for trial in 0..20 {
            let mut trial_rng = ChaCha8Rng::seed_from_u64(100 + trial);
            let m = 6;
            let x: ArrayD<f32> = randn(&mut trial_rng, &[m, 5]);
            let mut perm: Vec<usize> = (0..m).collect();
            perm.shuffle(&mut trial_rng);

            let tape = Tape::<f32>::new();
            let f = Fwd::eval(&tape, &store);
            let y = enc.encode(&f, tape.constant(x.clone())).unwrap();
            let y = tape.value(y).as_ref().clone();

            let tape2 = Tape::<f32>::new();
            let f2 = Fwd::eval(&tape2, &store);
            let yp = enc
                .encode(&f2, tape2.constant(permute_rows(&x, &perm)))
                .unwrap();
            let yp = tape2.value(yp).as_ref().clone();

            assert!(max_abs_diff(&permute_rows(&y, &perm), &yp) < 1e-5);
        }
    }

    #[test]
    fn st_full_is_permutation_invariant_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::<f32>::new();
        let st = StFull::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "st",
            5,
            tiny_config(),
        );
        let mut trial_rng = ChaCha8Rng::seed_from_u64(200);
        let x: ArrayD<f32> = randn(&mut trial_rng, &[7, 5]);
        let tape = Tape::<f32>::new();
        let f = Fwd::eval(&tape, &store);
        let base = tape.value(st.encode(&f, tape.constant(x.clone())).unwrap());
        assert_eq!(base.shape(), &[8]);
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..7).collect();
            perm.shuffle(&mut trial_rng);
            let tape2 = Tape::<f32>::new();
            let f2 = Fwd::eval(&tape2, &store);
            let y = tape2.value(
                st.encode(&f2, tape2.constant(permute_rows(&x, &perm)))
                    .unwrap(),
            );
            assert!(max_abs_diff(&base, &y) < 1e-5);
        }
    }

    #[test]
    fn st_encode_identical_rows_give_identical_outputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut store = ParamStore::<f64>::new();
        let enc = StEncoder::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "enc",
            4,
            tiny_config(),
        );
        let row: ArrayD<f64> = randn(&mut rng, &[1, 4]);
        let mut x = ArrayD::<f64>::zeros(IxDyn(&[5, 4]));
        for mut r in x.rows_mut() {
            r.assign(&row.index_axis(ndarray::Axis(0), 0));
        }
        let tape = Tape::<f64>::new();
        let f = Fwd::eval(&tape, &store);
        let y = tape.value(enc.encode(&f, tape.constant(x)).unwrap());
        let first = y.index_axis(ndarray::Axis(0), 0).to_owned();
        for i in 1..5 {
            let diff = (&y.index_axis(ndarray::Axis(0), i).to_owned() - &first)
                .iter()
                .map(|v| v.abs())
                .fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn st_encode_rejects_empty_set() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut store = ParamStore::<f64>::new();
        let enc = StEncoder::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "enc",
            4,
            tiny_config(),
        );
        let tape = Tape::<f64>::new();
        let f = Fwd::eval(&tape, &store);
        let empty = tape.constant(ArrayD::<f64>::zeros(IxDyn(&[0, 4])));
        assert!(matches!(
            enc.encode(&f, empty),
            Err(crate::error::Error::EmptySet)
        ));
        let single = tape.constant(randn::<f64>(&mut rng, &[1, 4]));
        let y = tape.value(enc.encode(&f, single).unwrap());
        assert_eq!(y.shape(), &[1, 8]);
        assert!(y.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ppe_is_block_equivariant_without_leakage() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut store = ParamStore::<f64>::new();
        let ppe = PpeEncoder::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "ppe",
            6,
            tiny_config(),
        );
        let x: ArrayD<f64> = randn(&mut rng, &[2 * n + 4, 6]);
        let run = |input: &ArrayD<f64>| {
            let tape = Tape::<f64>::new();
            let f = Fwd::eval(&tape, &store);
            tape.value(ppe.encode(&f, tape.constant(input.clone()), n).unwrap())
                .as_ref()
                .clone()
        };
        let base = run(&x);

        // permute team1 only: team1 rows permute, the rest stay fixed
        let mut perm: Vec<usize> = (0..2 * n + 4).collect();
        perm[..n].reverse();
        let permuted = run(&permute_rows(&x, &perm));
        assert!(max_abs_diff(&permute_rows(&base, &perm), &permuted) < 1e-9);

        // perturbing a player never moves the ball-out rows
        let mut bumped = x.clone();
        bumped[[0, 0]] += 0.5;
        let bumped_out = run(&bumped);
        for a in 2 * n..2 * n + 4 {
            let diff = max_abs_diff(
                &base.index_axis(ndarray::Axis(0), a).to_owned().into_dyn(),
                &bumped_out.index_axis(ndarray::Axis(0), a).to_owned().into_dyn(),
            );
            assert!(diff < 1e-12, "ball-out row {a} changed by {diff}");
        }
        // and team2 rows are untouched by team1 perturbations
        for a in n..2 * n {
            let diff = max_abs_diff(
                &base.index_axis(ndarray::Axis(0), a).to_owned().into_dyn(),
                &bumped_out.index_axis(ndarray::Axis(0), a).to_owned().into_dyn(),
            );
            assert!(diff < 1e-12, "team2 row {a} changed by {diff}");
        }
    }

    #[test]
    fn fpe_mixes_information_across_teams() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut store = ParamStore::<f64>::new();
        let fpe = StEncoder::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "fpe",
            6,
            tiny_config(),
        );
        let x: ArrayD<f64> = randn(&mut rng, &[2 * n + 4, 6]);
        let run = |input: &ArrayD<f64>| {
            let tape = Tape::<f64>::new();
            let f = Fwd::eval(&tape, &store);
            tape.value(fpe.encode(&f, tape.constant(input.clone())).unwrap())
                .as_ref()
                .clone()
        };
        let base = run(&x);
        let mut bumped = x.clone();
        bumped[[n, 0]] += 0.5; // an opponent
        let out = run(&bumped);
        let diff = max_abs_diff(
            &base.index_axis(ndarray::Axis(0), 0).to_owned().into_dyn(),
            &out.index_axis(ndarray::Axis(0), 0).to_owned().into_dyn(),
        );
        assert!(diff > 0.0, "fully-equivariant encoding must be non-local");
    }

    #[test]
    fn ppi_invariant_within_teams_but_not_across() {
        let n = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let mut store = ParamStore::<f64>::new();
        let ppi = PpiEncoder::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "ppi",
            6,
            tiny_config(),
            true,
        );
        let x: ArrayD<f64> = randn(&mut rng, &[2 * n + 4, 6]);
        let run = |input: &ArrayD<f64>| {
            let tape = Tape::<f64>::new();
            let f = Fwd::eval(&tape, &store);
            let parts = ppi.encode(&f, tape.constant(input.clone()), n).unwrap();
            tape.value(parts.fused).as_ref().clone()
        };
        let base = run(&x);
        assert_eq!(base.shape(), &[8]);

        let mut perm: Vec<usize> = (0..2 * n + 4).collect();
        perm[..n].rotate_left(1);
        perm[n..2 * n].rotate_left(2);
        assert!(max_abs_diff(&base, &run(&permute_rows(&x, &perm))) < 1e-9);

        // swapping the team blocks changes the fused embedding
        let mut swap: Vec<usize> = Vec::new();
        swap.extend(n..2 * n);
        swap.extend(0..n);
        swap.extend(2 * n..2 * n + 4);
        let swapped = run(&permute_rows(&x, &swap));
        assert!(max_abs_diff(&base, &swapped) > 1e-6);
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        // tiny config (d = 8, m = 3), 64-bit, relative error < 1e-4
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut store = ParamStore::<f64>::new();
        let enc = StEncoder::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "enc",
            4,
            tiny_config(),
        );
        let full = StFull::new(
            &mut Init { store: &mut store, rng: &mut rng },
            "full",
            4,
            tiny_config(),
        );
        let x: ArrayD<f64> = randn(&mut rng, &[3, 4]);
        let weights: ArrayD<f64> = randn(&mut rng, &[3, 8]);
        let werr = {
            let w = weights.clone();
            let store = &store;
            let enc = &enc;
            max_rel_error_inputs(
                move |tape, vars| {
                    let f = Fwd::eval(tape, store);
                    let y = enc.encode(&f, vars[0]).unwrap();
                    tape.sum_all(tape.mul(y, tape.constant(w.clone())))
                },
                &[x.clone()],
                1e-6,
            )
        };
        assert!(werr < 1e-4, "st_encode gradient error {werr}");

        let wfull: ArrayD<f64> = randn(&mut rng, &[8]);
        let ferr = {
            let store = &store;
            let full = &full;
            max_rel_error_inputs(
                move |tape, vars| {
                    let f = Fwd::eval(tape, store);
                    let y = full.encode(&f, vars[0]).unwrap();
                    tape.sum_all(tape.mul(y, tape.constant(wfull.clone())))
                },
                &[x],
                1e-6,
            )
        };
        assert!(ferr < 1e-4, "st_full gradient error {ferr}");
    }
}
