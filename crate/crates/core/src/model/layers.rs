//! Graph builders for each stage of the network. Every function appends to
//! the given tape and returns the output variables.

use rand::RngCore;

use super::params::{AspectIds, FmIds, HighwayIds, LstmIds};
use super::Bound;
use crate::autograd::{apply_dropout, AutogradError, Mode, Real, Tape, Tensor, Var};

type Res<V = Var> = Result<V, AutogradError>;

/// Stochastic dropout on the classifier input.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

/// `E' = relu(E W_f + b_f) * g + E * (1 - g)` with `g = sigmoid(E W_g + b_g)`.
pub fn highway<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, ids: &HighwayIds, e: Var) -> Res {
    let f = tape.matmul(e, p.get(ids.w_f))?;
    let f = tape.add_row(f, p.get(ids.b_f))?;
    let f = tape.relu(f)?;
    let g = tape.matmul(e, p.get(ids.w_g))?;
    let g = tape.add_row(g, p.get(ids.b_g))?;
    let g = tape.sigmoid(g)?;
    let carry = tape.affine(g, -1.0, 1.0)?;
    let transformed = tape.mul(f, g)?;
    let kept = tape.mul(e, carry)?;
    tape.add(transformed, kept)
}

/// One direction of a recurrent layer over the `T x d` input `x`. Returns
/// the `T x h` states in input order.
pub fn lstm<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, ids: &LstmIds, x: Var, reverse: bool) -> Res {
    let steps = tape.shape(x)[0];
    let h_dim = tape.shape(p.get(ids.w_hh))[0];
    let xw = tape.matmul(x, p.get(ids.w_ih))?;
    let xw = tape.add_row(xw, p.get(ids.bias))?;
    let mut states: Vec<Option<Var>> = vec![None; steps];
    let mut prev: Option<(Var, Var)> = None;
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let mut pre = tape.slice_rows(xw, t, 1)?;
        if let Some((h, _)) = prev {
            let rec = tape.matmul(h, p.get(ids.w_hh))?;
            pre = tape.add(pre, rec)?;
        }
        let sig_if = tape.slice_cols(pre, 0, 2 * h_dim)?;
        let sig_if = tape.sigmoid(sig_if)?;
        let i = tape.slice_cols(sig_if, 0, h_dim)?;
        let f = tape.slice_cols(sig_if, h_dim, h_dim)?;
        let g = tape.slice_cols(pre, 2 * h_dim, h_dim)?;
        let g = tape.tanh(g)?;
        let o = tape.slice_cols(pre, 3 * h_dim, h_dim)?;
        let o = tape.sigmoid(o)?;
        let mut c = tape.mul(i, g)?;
        if let Some((_, c_prev)) = prev {
            let kept = tape.mul(f, c_prev)?;
            c = tape.add(c, kept)?;
        }
        let tc = tape.tanh(c)?;
        let h = tape.mul(o, tc)?;
        states[t] = Some(h);
        prev = Some((h, c));
    }
    let states: Vec<Var> = states.into_iter().map(|s| s.expect("every step visited")).collect();
    tape.concat_rows(&states)
}

/// Stacked bidirectional encoder. Returns the final layer's forward and
/// backward states, each `T x d_hidden`.
pub fn encode<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, layers: &[[LstmIds; 2]], x: Var) -> Res<(Var, Var)> {
    if tape.shape(x)[0] == 0 {
        return Err(AutogradError::Contract("empty sequence".into()));
    }
    let mut input = x;
    let mut out = None;
    for (l, [fwd, bwd]) in layers.iter().enumerate() {
        let hf = lstm(tape, p, fwd, input, false)?;
        let hb = lstm(tape, p, bwd, input, true)?;
        if l + 1 < layers.len() {
            input = tape.concat_cols(&[hf, hb])?;
        }
        out = Some((hf, hb));
    }
    out.ok_or_else(|| AutogradError::Contract("encoder has no layers".into()))
}

/// Factorization-machine value of every row of `h`, as a `T x 1` column.
pub fn factorize_rows<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, ids: &FmIds, h: Var) -> Res {
    let linear = tape.matmul(h, p.get(ids.w))?;
    let linear = tape.add_row(linear, p.get(ids.w0))?;
    let v = p.get(ids.v);
    let hv = tape.matmul(h, v)?;
    let hv2 = tape.mul(hv, hv)?;
    let sq_of_sum = tape.sum_rows(hv2)?;
    let h2 = tape.mul(h, h)?;
    let v2 = tape.mul(v, v)?;
    let h2v2 = tape.matmul(h2, v2)?;
    let sum_of_sq = tape.sum_rows(h2v2)?;
    let pair = tape.sub(sq_of_sum, sum_of_sq)?;
    let pair = tape.scale(pair, 0.5)?;
    tape.add(linear, pair)
}

/// Appends per-row max, mean and factorization value to `h`.
pub fn enrich<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, ids: &FmIds, h: Var) -> Res {
    let width = tape.shape(h)[1];
    let max = tape.max_rows(h)?;
    let sum = tape.sum_rows(h)?;
    let mean = tape.scale(sum, 1.0 / width as f64)?;
    let fm = factorize_rows(tape, p, ids, h)?;
    tape.concat_cols(&[h, max, mean, fm])
}

/// Attention weights `[1, T]` and the pooled representation `[1, |h|]`.
#[derive(Clone, Copy, Debug)]
pub struct Attended {
    pub alpha: Var,
    pub pooled: Var,
}

fn attend<T: Real>(tape: &mut Tape<'_, T>, query: Var, keys: Var, h: Var) -> Res<Attended> {
    let scores = tape.matmul_t(query, keys)?;
    let alpha = tape.softmax_rows(scores)?;
    let pooled = tape.matmul(alpha, h)?;
    Ok(Attended { alpha, pooled })
}

/// `u_t = v_G . tanh(W_G h_t + b_G)`, softmax over t, weighted sum of states.
pub fn global_attention<T: Real>(tape: &mut Tape<'_, T>, p: &Bound, ids: &AspectIds, h: Var) -> Res<Attended> {
    let keys = tape.matmul(h, p.get(ids.w_g))?;
    let keys = tape.add_row(keys, p.get(ids.b_g))?;
    let keys = tape.tanh(keys)?;
    attend(tape, p.get(ids.v_g), keys, h)
}

/// Second pass with the global summary `s_g` as the query.
pub fn deliberate_attention<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &Bound,
    (w_d, b_d): (super::ParamId, super::ParamId),
    h: Var,
    s_g: Var,
) -> Res<Attended> {
    let keys = tape.matmul(h, p.get(w_d))?;
    let keys = tape.add_row(keys, p.get(b_d))?;
    let keys = tape.tanh(keys)?;
    attend(tape, s_g, keys, h)
}

/// Classifier logits and probabilities, each `[1, N]`.
#[derive(Clone, Copy, Debug)]
pub struct Classified {
    pub logits: Var,
    pub probs: Var,
}

pub fn classify<T: Real>(
    tape: &mut Tape<'_, T>,
    p: &Bound,
    ids: &AspectIds,
    input: Var,
    dropout: Option<&mut Dropout<'_>>,
) -> Res<Classified> {
    let input = match dropout {
        Some(d) => apply_dropout(tape, input, d.rate, Mode::Train, &mut *d.rng)?,
        None => input,
    };
    let hidden = tape.matmul(input, p.get(ids.w_out))?;
    let hidden = tape.add_row(hidden, p.get(ids.b_out))?;
    let hidden = tape.relu(hidden)?;
    let logits = tape.matmul(hidden, p.get(ids.w_pred))?;
    let logits = tape.add_row(logits, p.get(ids.b_pred))?;
    let probs = tape.softmax_rows(logits)?;
    Ok(Classified { logits, probs })
}

/// Factorization-machine value of `z` through the `O(n F)` identity.
pub fn factorize(w0: f64, w: &[f64], v: &Tensor<f64>, z: &[f64]) -> f64 {
    assert_eq!(w.len(), z.len(), "linear weights and input differ in length");
    assert_eq!(v.rows(), z.len(), "factor rows and input differ in length");
    let linear: f64 = w.iter().zip(z).map(|(a, b)| a * b).sum();
    let pair: f64 = (0..v.cols())
        .map(|f| {
            let (mut s, mut sq) = (0.0, 0.0);
            for (i, &zi) in z.iter().enumerate() {
                let x = v.get(i, f) * zi;
                s += x;
                sq += x * x;
            }
            s * s - sq
        })
        .sum();
    w0 + linear + 0.5 * pair
}
