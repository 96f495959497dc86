//! Differentiable training losses: squared position error, the reality
//! penalty on direction changes far from every player, possession
//! cross-entropy, and their weighted total.
//!
//! All three terms are implemented as nonnegative penalties. Inputs may
//! carry a leading batch axis; per-window means are averaged over the batch.

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Weights of the reality and cross-entropy terms in the total loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda_real: f64,
    pub lambda_ce: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_real: 1.0,
            lambda_ce: 20.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_real < 0.0 || self.lambda_ce < 0.0 {
            return Err(Error::Config("loss weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Velocity norms below this threshold (meters per frame) zero the course
/// angle, so stationary-ball frames do not contribute.
pub const VELOCITY_EPS: f64 = 1e-6;

/// Course-angle deadband: cosines above `1 - COS_DEADBAND` count as exactly
/// straight. This keeps straight segments at exactly zero penalty and away
/// from the arccos pole.
pub const COS_DEADBAND: f64 = 1e-9;

/// Floor of the velocity-norm product in the cosine denominator. Frames
/// moving slower than about 0.1 m/s carry no usable direction
/// information; the floor keeps their (masked or meaningless) gradients
/// from exploding through `1 / (|v| |v'|)`.
pub const NORM_PRODUCT_FLOOR: f64 = 1e-4;

fn check_trajectory_shapes(sp: &[usize], st: &[usize]) -> Result<usize> {
    if sp != st {
        return Err(Error::Shape(format!(
            "trajectory shapes disagree: {sp:?} vs {st:?}"
        )));
    }
    if sp.len() < 2 || sp[sp.len() - 1] != 2 {
        return Err(Error::Shape(format!(
            "trajectories must be [..., T, 2], got {sp:?}"
        )));
    }
    Ok(sp[sp.len() - 2])
}

/// Mean squared error `(1/T) sum_t ||pred_t - truth_t||^2`, averaged over
/// any leading batch axes.
pub fn mse_loss<F: Scalar>(tape: &Tape<F>, pred: Var, truth: Var) -> Result<Var> {
    check_trajectory_shapes(&tape.shape(pred), &tape.shape(truth))?;
    let d = tape.sub(pred, truth);
    let sq = tape.mul(d, d);
    let per_frame = tape.sum_last(sq);
    Ok(tape.mean_all(per_frame))
}

/// Reality penalty `(1/(T-2)) sum_t tanh(theta_t) * d_t` over interior
/// frames, where `theta_t` is the angle between consecutive velocity
/// vectors of the predicted ball and `d_t` the distance from the ball to
/// the nearest player.
///
/// `pred` is `[..., T, 2]` and `players` `[..., T, P, 2]`; the players are
/// treated as constants, gradients flow into `pred` only.
pub fn reality_loss<F: Scalar>(
    tape: &Tape<F>,
    pred: Var,
    players: &ArrayD<F>,
) -> Result<Var> {
    let sp = tape.shape(pred);
    let ndim = sp.len();
    if ndim < 2 || sp[ndim - 1] != 2 {
        return Err(Error::Shape(format!(
            "predicted trajectory must be [..., T, 2], got {sp:?}"
        )));
    }
    let t_len = sp[ndim - 2];
    if t_len < 3 {
        return Err(Error::InsufficientData(format!(
            "reality loss needs T >= 3 frames, got {t_len}"
        )));
    }
    let psh = players.shape();
    if psh.len() != ndim + 1
        || psh[..ndim - 2] != sp[..ndim - 2]
        || psh[ndim - 2] != t_len
        || psh[ndim] != 2
    {
        return Err(Error::Shape(format!(
            "player positions must be [..., T, P, 2], got {psh:?} for prediction {sp:?}"
        )));
    }

    let taxis = ndim - 2;

    // velocities v[j] = y[j+1] - y[j]
    let head = tape.slice_ax(pred, taxis, 1, t_len);
    let tail = tape.slice_ax(pred, taxis, 0, t_len - 1);
    let vel = tape.sub(head, tail);
    // incoming and outgoing velocity at interior frames 1..T-1
    let v_in = tape.slice_ax(vel, taxis, 0, t_len - 2);
    let v_out = tape.slice_ax(vel, taxis, 1, t_len - 1);

    let dot = tape.sum_last(tape.mul(v_in, v_out));
    let norm_in = tape.sqrt_clamped(tape.sum_last(tape.mul(v_in, v_in)), F::zero());
    let norm_out = tape.sqrt_clamped(tape.sum_last(tape.mul(v_out, v_out)), F::zero());
    let denom = tape.clamp(
        tape.mul(norm_in, norm_out),
        F::cast(NORM_PRODUCT_FLOOR),
        F::infinity(),
    );
    let cos = tape.div(dot, denom);
    let theta = tape.acos_clamped(cos, F::cast(COS_DEADBAND));

    // Degenerate frames (tiny velocity or numerically straight) are masked
    // to exactly zero. The mask is a constant of the current forward values.
    let eps_v = F::cast(VELOCITY_EPS);
    let cos_hi = F::one() - F::cast(COS_DEADBAND);
    let mask_arr = {
        let ni = tape.value(norm_in);
        let no = tape.value(norm_out);
        let cs = tape.value(cos);
        let mut m = ni.as_ref().clone();
        ndarray::Zip::from(&mut m)
            .and(no.as_ref())
            .and(cs.as_ref())
            .for_each(|mm, &nov, &cv| {
                let keep = *mm >= eps_v && nov >= eps_v && cv <= cos_hi;
                *mm = if keep { F::one() } else { F::zero() };
            });
        m
    };
    let mask = tape.constant(mask_arr);

    // distance to the nearest player at interior frames
    let interior = tape.slice_ax(pred, taxis, 1, t_len - 1);
    let mut un_shape = tape.shape(interior);
    un_shape.insert(ndim - 1, 1);
    let ball = tape.reshape(interior, &un_shape);
    let players_interior = players
        .slice_axis(ndarray::Axis(taxis), ndarray::Slice::from(1..t_len - 1))
        .to_owned();
    let pvar = tape.constant(players_interior);
    let diff = tape.sub(ball, pvar);
    let dist = tape.sqrt_clamped(tape.sum_last(tape.mul(diff, diff)), F::zero());
    let nearest = tape.min_last(dist);

    let term = tape.mul(tape.mul(tape.tanh(theta), nearest), mask);
    Ok(tape.mean_all(term))
}

/// Cross-entropy `-(1/T) sum_t log probs_t[label_t]` for possession
/// probabilities already on the simplex. `probs` is `[..., T, K]`,
/// `labels` `[..., T]` as class indices.
pub fn ce_loss<F: Scalar>(tape: &Tape<F>, probs: Var, labels: &ArrayD<usize>) -> Result<Var> {
    let picked = gather_class(tape, probs, labels)?;
    let logp = tape.ln_clamped(picked, F::cast(1e-12));
    Ok(tape.neg(tape.mean_all(logp)))
}

/// Cross-entropy from unnormalized scores via a fused log-softmax, which is
/// the numerically preferred route during training. Equal in value to
/// [`ce_loss`] applied to `softmax(scores)`.
pub fn ce_from_scores<F: Scalar>(
    tape: &Tape<F>,
    scores: Var,
    labels: &ArrayD<usize>,
) -> Result<Var> {
    let logp = tape.log_softmax_last(scores);
    let picked = gather_class(tape, logp, labels)?;
    Ok(tape.neg(tape.mean_all(picked)))
}

fn gather_class<F: Scalar>(tape: &Tape<F>, values: Var, labels: &ArrayD<usize>) -> Result<Var> {
    let shape = tape.shape(values);
    let ndim = shape.len();
    if ndim < 2 {
        return Err(Error::Shape(format!(
            "class values must be [..., T, K], got {shape:?}"
        )));
    }
    let k = shape[ndim - 1];
    if labels.shape() != &shape[..ndim - 1] {
        return Err(Error::Shape(format!(
            "labels shape {:?} does not match values {:?}",
            labels.shape(),
            shape
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&q| q >= k) {
        return Err(Error::Label(format!(
            "class label {bad} out of range for {k} classes"
        )));
    }
    let mut onehot = ArrayD::<F>::zeros(shape.as_slice());
    let flat_labels: Vec<usize> = labels.iter().copied().collect();
    {
        let lead: usize = shape[..ndim - 1].iter().product();
        let mut flat = onehot.view_mut().into_shape_with_order((lead, k)).unwrap();
        for (i, &q) in flat_labels.iter().enumerate() {
            flat[[i, q]] = F::one();
        }
    }
    let mask = tape.constant(onehot);
    Ok(tape.sum_last(tape.mul(values, mask)))
}

/// Weighted total `L = L_mse + lambda_real * L_real + lambda_ce * L_ce`.
pub fn total_loss<F: Scalar>(
    tape: &Tape<F>,
    mse: Var,
    reality: Var,
    ce: Var,
    weights: LossWeights,
) -> Var {
    let r = tape.scale(reality, F::cast(weights.lambda_real));
    let c = tape.scale(ce, F::cast(weights.lambda_ce));
    tape.add(tape.add(mse, r), c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use ndarray::{ArrayD, IxDyn};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tape() -> Tape<f64> {
        Tape::new()
    }

    fn arr(shape: &[usize], data: Vec<f64>) -> ArrayD<f64> {
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.random_range(-1.0..1.0))
    }

    // independent naive-loop oracle for the squared error
    fn mse_oracle(pred: &ArrayD<f64>, truth: &ArrayD<f64>) -> f64 {
        let t = pred.shape()[0];
        let mut total = 0.0;
        for i in 0..t {
            for c in 0..2 {
                let d = pred[[i, c]] - truth[[i, c]];
                total += d * d;
            }
        }
        total / t as f64
    }

    // independent trigonometric oracle for the reality penalty
    fn reality_oracle(pred: &ArrayD<f64>, players: &ArrayD<f64>) -> f64 {
        let t = pred.shape()[0];
        let p = players.shape()[1];
        let mut total = 0.0;
        for i in 1..t - 1 {
            let vin = (pred[[i, 0]] - pred[[i - 1, 0]], pred[[i, 1]] - pred[[i - 1, 1]]);
            let vout = (pred[[i + 1, 0]] - pred[[i, 0]], pred[[i + 1, 1]] - pred[[i, 1]]);
            let n1 = (vin.0 * vin.0 + vin.1 * vin.1).sqrt();
            let n2 = (vout.0 * vout.0 + vout.1 * vout.1).sqrt();
            if n1 < VELOCITY_EPS || n2 < VELOCITY_EPS {
                continue;
            }
            let cos = ((vin.0 * vout.0 + vin.1 * vout.1) / (n1 * n2)).clamp(-1.0, 1.0);
            if cos > 1.0 - COS_DEADBAND {
                continue;
            }
            let theta = cos.acos();
            let mut dmin = f64::INFINITY;
            for j in 0..p {
                let dx = pred[[i, 0]] - players[[i, j, 0]];
                let dy = pred[[i, 1]] - players[[i, j, 1]];
                dmin = dmin.min((dx * dx + dy * dy).sqrt());
            }
            total += theta.tanh() * dmin;
        }
        total / (t - 2) as f64
    }

    #[test]
    fn mse_matches_examples_and_oracle() {
        let t = tape();
        let y = arr(&[3, 2], vec![0.0, 0.0, 1.0, 1.0, 2.0, 0.5]);
        let same = mse_loss(&t, t.constant(y.clone()), t.constant(y.clone())).unwrap();
        assert_eq!(t.scalar(same), 0.0);

        let offset = y.clone() + arr(&[1, 2], vec![3.0, 4.0]);
        let off = mse_loss(&t, t.constant(offset), t.constant(y)).unwrap();
        assert!((t.scalar(off) - 25.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let a = randn(&mut rng, &[17, 2]);
        let b = randn(&mut rng, &[17, 2]);
        let got = t.scalar(mse_loss(&t, t.constant(a.clone()), t.constant(b.clone())).unwrap());
        assert!((got - mse_oracle(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn mse_rejects_shape_mismatch() {
        let t = tape();
        let a = t.constant(arr(&[3, 2], vec![0.0; 6]));
        let b = t.constant(arr(&[4, 2], vec![0.0; 8]));
        assert!(mse_loss(&t, a, b).is_err());
    }

    #[test]
    fn reality_straight_line_is_exactly_zero() {
        let t = tape();
        let pred: Vec<f64> = (0..20).flat_map(|i| [0.3 * i as f64 + 0.05, -0.7 * i as f64]).collect();
        let players = ArrayD::from_elem(IxDyn(&[20, 3, 2]), 10.0);
        let loss = reality_loss(&t, t.constant(arr(&[20, 2], pred)), &players).unwrap();
        assert_eq!(t.scalar(loss), 0.0);
    }

    #[test]
    fn reality_right_angle_matches_trig_oracle() {
        let t = tape();
        let pred = arr(&[3, 2], vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        // single player 5 m from the turning point (1, 0)
        let mut players = ArrayD::zeros(IxDyn(&[3, 1, 2]));
        for i in 0..3 {
            players[[i, 0, 0]] = 4.0;
            players[[i, 0, 1]] = 4.0;
        }
        let loss = t.scalar(reality_loss(&t, t.constant(pred.clone()), &players).unwrap());
        let expected = (std::f64::consts::FRAC_PI_2).tanh() * 5.0;
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
        assert!((loss - reality_oracle(&pred, &players)).abs() < 1e-12);
    }

    #[test]
    fn reality_zero_when_player_sits_on_the_turn() {
        let t = tape();
        let pred = arr(&[3, 2], vec![0.0, 0.0, 1.0, 0.0, 1.0, 1.0]);
        let mut players = ArrayD::zeros(IxDyn(&[3, 1, 2]));
        players[[1, 0, 0]] = 1.0; // at the ball on the turn frame
        let loss = t.scalar(reality_loss(&t, t.constant(pred), &players).unwrap());
        assert!(loss.abs() < 1e-12);
    }

    #[test]
    fn reality_matches_naive_loop_on_random_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        // random walk with O(1) steps so angles are generic
        let t_len = 40;
        let mut pos = vec![0.0f64; 2];
        let mut data = Vec::new();
        for _ in 0..t_len {
            pos[0] += rng.random_range(-1.0..1.0);
            pos[1] += rng.random_range(-1.0..1.0);
            data.extend_from_slice(&pos);
        }
        let pred = arr(&[t_len, 2], data);
        let players = randn(&mut rng, &[t_len, 5, 2]).mapv(|v| v * 20.0);
        let t = tape();
        let got = t.scalar(reality_loss(&t, t.constant(pred.clone()), &players).unwrap());
        let want = reality_oracle(&pred, &players);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!(got >= 0.0);
    }

    #[test]
    fn reality_invariant_under_translation_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t_len = 25;
        let mut data = Vec::new();
        let mut pos = [0.0f64, 0.0];
        for _ in 0..t_len {
            pos[0] += rng.random_range(-1.0..1.0);
            pos[1] += rng.random_range(-1.0..1.0);
            data.extend_from_slice(&pos);
        }
        let pred = arr(&[t_len, 2], data);
        let players = randn(&mut rng, &[t_len, 4, 2]).mapv(|v| v * 15.0);
        let t = tape();
        let base = t.scalar(reality_loss(&t, t.constant(pred.clone()), &players).unwrap());

        let (dx, dy) = (13.7, -4.2);
        let shift = |a: &ArrayD<f64>| {
            let mut out = a.clone();
            for mut lane in out.lanes_mut(ndarray::Axis(a.ndim() - 1)) {
                lane[0] += dx;
                lane[1] += dy;
            }
            out
        };
        let shifted = t.scalar(reality_loss(&t, t.constant(shift(&pred)), &shift(&players)).unwrap());
        assert!((base - shifted).abs() < 1e-9);

        let ang: f64 = 0.83;
        let rot = |a: &ArrayD<f64>| {
            let mut out = a.clone();
            for mut lane in out.lanes_mut(ndarray::Axis(a.ndim() - 1)) {
                let (x, y) = (lane[0], lane[1]);
                lane[0] = ang.cos() * x - ang.sin() * y;
                lane[1] = ang.sin() * x + ang.cos() * y;
            }
            out
        };
        let rotated = t.scalar(reality_loss(&t, t.constant(rot(&pred)), &rot(&players)).unwrap());
        assert!((base - rotated).abs() < 1e-9);
    }

    #[test]
    fn reality_needs_three_frames() {
        let t = tape();
        let pred = t.constant(arr(&[2, 2], vec![0.0; 4]));
        let players = ArrayD::zeros(IxDyn(&[2, 1, 2]));
        assert!(matches!(
            reality_loss(&t, pred, &players),
            Err(crate::error::Error::InsufficientData(_))
        ));
    }

    #[test]
    fn ce_matches_examples_and_oracle() {
        let t = tape();
        // one-hot correct prediction -> 0
        let mut onehot = ArrayD::zeros(IxDyn(&[4, 5]));
        let labels_v = [1usize, 0, 3, 2];
        for (i, &q) in labels_v.iter().enumerate() {
            onehot[[i, q]] = 1.0;
        }
        let labels = ArrayD::from_shape_vec(IxDyn(&[4]), labels_v.to_vec()).unwrap();
        let zero = t.scalar(ce_loss(&t, t.constant(onehot), &labels).unwrap());
        assert!(zero.abs() < 1e-12);

        // uniform over 26 classes -> ln 26
        let uniform = ArrayD::from_elem(IxDyn(&[10, 26]), 1.0 / 26.0);
        let labels26 = ArrayD::from_shape_vec(IxDyn(&[10]), (0..10).collect()).unwrap();
        let got = t.scalar(ce_loss(&t, t.constant(uniform), &labels26).unwrap());
        assert!((got - 26.0f64.ln()).abs() < 1e-9, "{got}");

        // random probabilities vs naive loop
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut probs = ArrayD::from_shape_simple_fn(IxDyn(&[12, 7]), || rng.random_range(0.01..1.0));
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let labels7 =
            ArrayD::from_shape_vec(IxDyn(&[12]), (0..12).map(|i| i % 7).collect()).unwrap();
        let got = t.scalar(ce_loss(&t, t.constant(probs.clone()), &labels7).unwrap());
        let mut want = 0.0;
        for i in 0..12 {
            want -= probs[[i, i % 7]].ln();
        }
        want /= 12.0;
        assert!((got - want).abs() < 1e-9);
    }

    #[test]
    fn ce_from_scores_agrees_with_probability_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let scores = randn(&mut rng, &[6, 9]).mapv(|v| v * 3.0);
        let labels =
            ArrayD::from_shape_vec(IxDyn(&[6]), (0..6).map(|i| (i * 2) % 9).collect()).unwrap();
        let t = tape();
        let s = t.constant(scores);
        let via_scores = t.scalar(ce_from_scores(&t, s, &labels).unwrap());
        let probs = t.softmax_last(s);
        let via_probs = t.scalar(ce_loss(&t, probs, &labels).unwrap());
        assert!((via_scores - via_probs).abs() < 1e-9);
    }

    #[test]
    fn ce_rejects_out_of_range_labels() {
        let t = tape();
        let probs = t.constant(ArrayD::from_elem(IxDyn(&[2, 3]), 1.0 / 3.0));
        let labels = ArrayD::from_shape_vec(IxDyn(&[2]), vec![0usize, 3]).unwrap();
        assert!(matches!(
            ce_loss(&t, probs, &labels),
            Err(crate::error::Error::Label(_))
        ));
    }

    #[test]
    fn total_loss_combines_parts() {
        let t = tape();
        let one = t.constant(ArrayD::from_elem(IxDyn(&[1]), 1.0));
        let zeroed = total_loss(
            &t,
            one,
            one,
            one,
            LossWeights {
                lambda_real: 0.0,
                lambda_ce: 0.0,
            },
        );
        assert!((t.scalar(zeroed) - 1.0).abs() < 1e-12);
        let defaults = total_loss(&t, one, one, one, LossWeights::default());
        assert!((t.scalar(defaults) - 22.0).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        use crate::autodiff::gradcheck::max_rel_error_inputs;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t_len = 8;
        let mut data = Vec::new();
        let mut pos = [0.0f64, 0.0];
        for _ in 0..t_len {
            pos[0] += rng.random_range(-1.0..1.0);
            pos[1] += rng.random_range(-1.0..1.0);
            data.extend_from_slice(&pos);
        }
        let pred = arr(&[t_len, 2], data);
        let truth = randn(&mut rng, &[t_len, 2]);
        let players = randn(&mut rng, &[t_len, 3, 2]).mapv(|v| v * 10.0);
        let err = max_rel_error_inputs(
            |tape, vars| {
                let mse = mse_loss(tape, vars[0], tape.constant(truth.clone())).unwrap();
                let real = reality_loss(tape, vars[0], &players).unwrap();
                tape.add(mse, real)
            },
            &[pred],
            1e-6,
        );
        assert!(err < 1e-6, "loss gradient mismatch {err}");
    }
}
