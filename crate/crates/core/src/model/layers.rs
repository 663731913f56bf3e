//! Building blocks shared by the model graph and the standalone array-level
//! entry points used for testing and inspection.

use ndarray::Array2;
use rand::{Rng, RngCore};

use super::Mode;
use crate::autograd::{sigmoid, softmax, Graph, Var};
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;
/// Norms below this are treated as zero by the cosine classifier.
pub const MIN_NORM: f64 = 1e-12;

/// Stochastic state threaded through a forward pass.
pub(crate) struct Ctx<'a> {
    pub mode: Mode,
    pub dropout: f64,
    pub rng: &'a mut dyn RngCore,
}

/// Logistic noise `g₁ − g₂` with `g = −log(−log u)`.
pub(crate) fn gumbel_difference(n: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let mut gumbel = || {
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        -(-u.ln()).ln()
    };
    (0..n).map(|_| gumbel() - gumbel()).collect()
}

/// Relaxed Bernoulli gate. Train mode perturbs the logits with the
/// difference of two Gumbel samples before `σ(·/τ)`; eval mode is `σ(x/τ)`.
pub fn gumbel_sigmoid(logits: &[f64], tau: f64, mode: Mode, rng: &mut dyn RngCore) -> Vec<f64> {
    assert!(tau > 0.0, "gumbel_sigmoid: tau must be positive");
    match mode {
        Mode::Eval => logits.iter().map(|&x| sigmoid(x / tau)).collect(),
        Mode::Train => {
            let noise = gumbel_difference(logits.len(), rng);
            logits.iter().zip(noise).map(|(&x, e)| sigmoid((x + e) / tau)).collect()
        }
    }
}

/// Fixed sinusoidal position table: even columns `sin`, odd columns `cos`.
pub fn sinusoidal_table(n: usize, d: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, d), |(pos, i)| {
        let pair = (i / 2) as f64 * 2.0;
        let angle = pos as f64 / 10000f64.powf(pair / d as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub(crate) fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Var {
    let y = g.matmul_t(x, w);
    g.add_row(y, b)
}

pub(crate) fn dropout(g: &mut Graph, x: Var, ctx: &mut Ctx<'_>) -> Var {
    if ctx.mode == Mode::Eval || ctx.dropout <= 0.0 {
        return x;
    }
    let keep = 1.0 - ctx.dropout;
    let dim = g.value(x).dim();
    let mask = Array2::from_shape_simple_fn(dim, || {
        if ctx.rng.random::<f64>() < keep {
            1.0 / keep
        } else {
            0.0
        }
    });
    g.mul_const(x, mask)
}

fn affine_layer_norm(g: &mut Graph, x: Var, gain: Var, bias: Var) -> Var {
    let n = g.layer_norm(x, LN_EPS);
    let s = g.mul_row(n, gain);
    g.add_row(s, bias)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct IntraVars {
    pub ln_g: Var,
    pub ln_b: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// `MLP(LN(z))` applied independently to each row with shared weights.
pub(crate) fn intra_graph(g: &mut Graph, z: Var, w: &IntraVars, ctx: &mut Ctx<'_>) -> Var {
    let h = affine_layer_norm(g, z, w.ln_g, w.ln_b);
    let h = linear(g, h, w.fc1_w, w.fc1_b);
    let h = g.gelu(h);
    let h = linear(g, h, w.fc2_w, w.fc2_b);
    dropout(g, h, ctx)
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct MhsaVars {
    pub ln_g: Var,
    pub ln_b: Var,
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
}

/// Scaled dot-product attention on explicit Q, K, V nodes. Scores are
/// divided by `√scale_dim`.
pub(crate) fn attention_graph(g: &mut Graph, q: Var, k: Var, v: Var, scale_dim: usize) -> (Var, Var) {
    let scores = g.matmul_t(q, k);
    let scores = g.scale(scores, 1.0 / (scale_dim as f64).sqrt());
    let attn = g.softmax_rows(scores);
    (g.matmul(attn, v), attn)
}

/// `Concat(SA_1..SA_H)·W_MHSAᵀ` on `LN(z)`, each head using a `d/H` slice of
/// the projections and the full width `d` for score scaling.
pub(crate) fn mhsa_graph(
    g: &mut Graph,
    z: Var,
    w: &MhsaVars,
    n_heads: usize,
    ctx: &mut Ctx<'_>,
) -> (Var, Vec<Var>) {
    let d = g.value(z).ncols();
    let width = d / n_heads;
    let h = affine_layer_norm(g, z, w.ln_g, w.ln_b);
    let q = linear(g, h, w.wq, w.bq);
    let k = linear(g, h, w.wk, w.bk);
    let v = linear(g, h, w.wv, w.bv);
    let mut heads = Vec::with_capacity(n_heads);
    let mut maps = Vec::with_capacity(n_heads);
    for head in 0..n_heads {
        let (lo, hi) = (head * width, (head + 1) * width);
        let qh = g.slice_cols(q, lo, hi);
        let kh = g.slice_cols(k, lo, hi);
        let vh = g.slice_cols(v, lo, hi);
        let (out, attn) = attention_graph(g, qh, kh, vh, d);
        heads.push(out);
        maps.push(attn);
    }
    let cat = if n_heads == 1 { heads[0] } else { g.concat_cols(&heads) };
    let out = g.matmul_t(cat, w.wo);
    (dropout(g, out, ctx), maps)
}

/// Cosine similarities of a 1×d row to each prototype row, checked for
/// degenerate norms.
pub(crate) fn cosine_graph(g: &mut Graph, z: Var, prototypes: Var) -> Result<Var> {
    let zn = norm(g.value(z).iter());
    if zn < MIN_NORM {
        return Err(Error::DegenerateVector(zn));
    }
    for row in g.value(prototypes).rows() {
        let pn = norm(row.iter());
        if pn < MIN_NORM {
            return Err(Error::DegenerateVector(pn));
        }
    }
    Ok(g.cosine(z, prototypes))
}

pub(crate) fn norm<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

/// Weights of one multi-head self-attention sub-layer (pre-norm).
#[derive(Debug, Clone, PartialEq)]
pub struct MhsaWeights {
    pub ln_g: Array2<f64>,
    pub ln_b: Array2<f64>,
    pub wq: Array2<f64>,
    pub bq: Array2<f64>,
    pub wk: Array2<f64>,
    pub bk: Array2<f64>,
    pub wv: Array2<f64>,
    pub bv: Array2<f64>,
    pub wo: Array2<f64>,
}

/// Weights of one row-wise intra-network MLP (pre-norm).
#[derive(Debug, Clone, PartialEq)]
pub struct IntraWeights {
    pub ln_g: Array2<f64>,
    pub ln_b: Array2<f64>,
    pub fc1_w: Array2<f64>,
    pub fc1_b: Array2<f64>,
    pub fc2_w: Array2<f64>,
    pub fc2_b: Array2<f64>,
}

struct NoRng;

impl RngCore for NoRng {
    fn next_u32(&mut self) -> u32 {
        unreachable!("eval-mode forward drew a random number")
    }
    fn next_u64(&mut self) -> u64 {
        unreachable!("eval-mode forward drew a random number")
    }
    fn fill_bytes(&mut self, _: &mut [u8]) {
        unreachable!("eval-mode forward drew a random number")
    }
}

/// Random source for eval-mode passes; panics if anything draws from it.
pub(crate) fn no_rng() -> impl RngCore {
    NoRng
}

/// `softmax(QKᵀ/√scale_dim)·V` together with the attention matrix.
pub fn self_attention(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    scale_dim: usize,
) -> (Array2<f64>, Array2<f64>) {
    let mut g = Graph::new();
    let (q, k, v) = (g.constant(q.clone()), g.constant(k.clone()), g.constant(v.clone()));
    let (out, attn) = attention_graph(&mut g, q, k, v, scale_dim);
    (g.value(out).clone(), g.value(attn).clone())
}

/// Eval-mode multi-head self-attention; returns the projected output and
/// each head's attention matrix.
pub fn multi_head_self_attention(
    z: &Array2<f64>,
    w: &MhsaWeights,
    n_heads: usize,
) -> Result<(Array2<f64>, Vec<Array2<f64>>)> {
    let d = z.ncols();
    if n_heads == 0 || d % n_heads != 0 {
        return Err(Error::Config(format!("feature dim {d} is not divisible by {n_heads} heads")));
    }
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let vars = MhsaVars {
        ln_g: g.constant(w.ln_g.clone()),
        ln_b: g.constant(w.ln_b.clone()),
        wq: g.constant(w.wq.clone()),
        bq: g.constant(w.bq.clone()),
        wk: g.constant(w.wk.clone()),
        bk: g.constant(w.bk.clone()),
        wv: g.constant(w.wv.clone()),
        bv: g.constant(w.bv.clone()),
        wo: g.constant(w.wo.clone()),
    };
    let mut rng = no_rng();
    let mut ctx = Ctx { mode: Mode::Eval, dropout: 0.0, rng: &mut rng };
    let (out, maps) = mhsa_graph(&mut g, zv, &vars, n_heads, &mut ctx);
    Ok((g.value(out).clone(), maps.into_iter().map(|m| g.value(m).clone()).collect()))
}

/// Eval-mode intra-network encoder `MLP(LN(z))` on every row.
pub fn intra_network_encoder(z: &Array2<f64>, w: &IntraWeights) -> Array2<f64> {
    let mut g = Graph::new();
    let zv = g.constant(z.clone());
    let vars = IntraVars {
        ln_g: g.constant(w.ln_g.clone()),
        ln_b: g.constant(w.ln_b.clone()),
        fc1_w: g.constant(w.fc1_w.clone()),
        fc1_b: g.constant(w.fc1_b.clone()),
        fc2_w: g.constant(w.fc2_w.clone()),
        fc2_b: g.constant(w.fc2_b.clone()),
    };
    let mut rng = no_rng();
    let mut ctx = Ctx { mode: Mode::Eval, dropout: 0.0, rng: &mut rng };
    let out = intra_graph(&mut g, zv, &vars, &mut ctx);
    g.value(out).clone()
}

/// Cosine-similarity class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub similarities: Vec<f64>,
    pub probs: Vec<f64>,
    /// Index of the most similar prototype.
    pub predicted: usize,
}

/// Softmax over `cos(z, p_c) / temp`.
pub fn prototype_classify(z: &[f64], prototypes: &Array2<f64>, temp: f64) -> Result<ClassScores> {
    let zn = norm(z.iter());
    if zn < MIN_NORM {
        return Err(Error::DegenerateVector(zn));
    }
    let mut similarities = Vec::with_capacity(prototypes.nrows());
    for row in prototypes.rows() {
        let pn = norm(row.iter());
        if pn < MIN_NORM {
            return Err(Error::DegenerateVector(pn));
        }
        let dot: f64 = row.iter().zip(z).map(|(a, b)| a * b).sum();
        similarities.push(dot / (zn * pn));
    }
    let probs = softmax(similarities.iter().map(|s| s / temp));
    let predicted = argmax(&similarities);
    Ok(ClassScores { similarities, probs, predicted })
}

pub(crate) fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) })
        .0
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s, Axis};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-1.0..1.0))
    }

    fn random_mhsa(d: usize, rng: &mut ChaCha8Rng) -> MhsaWeights {
        MhsaWeights {
            ln_g: random(1, d, rng),
            ln_b: random(1, d, rng),
            wq: random(d, d, rng),
            bq: random(1, d, rng),
            wk: random(d, d, rng),
            bk: random(1, d, rng),
            wv: random(d, d, rng),
            bv: random(1, d, rng),
            wo: random(d, d, rng),
        }
    }

    #[test]
    fn gumbel_eval_at_zero_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for tau in [0.1, 1.0, 5.0] {
            assert_eq!(gumbel_sigmoid(&[0.0; 4], tau, Mode::Eval, &mut rng), vec![0.5; 4]);
        }
    }

    #[test]
    fn gumbel_low_temperature_is_nearly_binary() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let out = gumbel_sigmoid(&[0.0; 1000], 0.01, Mode::Train, &mut rng);
        let near = out.iter().filter(|&&v| v < 1e-3 || v > 1.0 - 1e-3).count();
        // |g1 - g2| < 0.07 happens with probability ~1.7%
        assert!(near >= 960, "{near} of 1000 saturated");
    }

    #[test]
    fn gumbel_train_mean_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = gumbel_sigmoid(&vec![0.0; 100_000], 5.0, Mode::Train, &mut rng);
        let mean = out.iter().sum::<f64>() / out.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn zero_queries_give_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random(5, 3, &mut rng);
        let zeros = Array2::zeros((5, 3));
        let (out, attn) = self_attention(&zeros, &zeros, &v, 3);
        let col_mean = v.mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            for (a, b) in row.iter().zip(&col_mean) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(attn.iter().all(|&a| (a - 0.2).abs() < 1e-12));
    }

    #[test]
    fn self_attention_matches_loop_oracle() {
        let q = array![[0.2, -0.5], [1.0, 0.3], [-0.7, 0.8]];
        let k = array![[0.4, 0.1], [-0.3, 0.9], [0.6, -0.2]];
        let v = array![[1.0, 2.0], [-1.0, 0.5], [0.3, -0.4]];
        let (out, _) = self_attention(&q, &k, &v, 2);
        for i in 0..3 {
            let scores: Vec<f64> = (0..3)
                .map(|j| (q[[i, 0]] * k[[j, 0]] + q[[i, 1]] * k[[j, 1]]) / 2f64.sqrt())
                .collect();
            let z: f64 = scores.iter().map(|s| s.exp()).sum();
            for c in 0..2 {
                let expect: f64 = (0..3).map(|j| scores[j].exp() / z * v[[j, c]]).sum();
                assert!((out[[i, c]] - expect).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn attention_rows_normalised() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let z = random(6, 8, &mut rng) * 3.0;
            let (_, maps) = multi_head_self_attention(&z, &random_mhsa(8, &mut rng), 2).unwrap();
            for m in maps {
                for row in m.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn single_head_equals_self_attention_before_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let z = random(4, 6, &mut rng);
        let mut w = random_mhsa(6, &mut rng);
        w.wo = Array2::eye(6);
        let (out, _) = multi_head_self_attention(&z, &w, 1).unwrap();

        let mut g = Graph::new();
        let zv = g.constant(z.clone());
        let n = g.layer_norm(zv, LN_EPS);
        let h = g.value(n) * &w.ln_g + &w.ln_b;
        let q = h.dot(&w.wq.t()) + &w.bq;
        let k = h.dot(&w.wk.t()) + &w.bk;
        let v = h.dot(&w.wv.t()) + &w.bv;
        let (sa, _) = self_attention(&q, &k, &v, 6);
        assert!((&out - &sa).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn heads_bad_divisor_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let z = random(3, 8, &mut rng);
        let w = random_mhsa(8, &mut rng);
        assert!(matches!(multi_head_self_attention(&z, &w, 3), Err(Error::Config(_))));
    }

    fn random_intra(d: usize, hidden: usize, rng: &mut ChaCha8Rng) -> IntraWeights {
        IntraWeights {
            ln_g: random(1, d, rng),
            ln_b: random(1, d, rng),
            fc1_w: random(hidden, d, rng),
            fc1_b: random(1, hidden, rng),
            fc2_w: random(d, hidden, rng),
            fc2_b: random(1, d, rng),
        }
    }

    #[test]
    fn intra_encoder_row_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let z = random(5, 6, &mut rng);
        let w = random_intra(6, 9, &mut rng);
        let out = intra_network_encoder(&z, &w);
        assert_eq!(out.dim(), (5, 6));
        let perm = [3, 0, 4, 1, 2];
        let zp = z.select(Axis(0), &perm);
        let outp = intra_network_encoder(&zp, &w);
        for (new_row, &old_row) in perm.iter().enumerate() {
            let d = &outp.slice(s![new_row, ..]) - &out.slice(s![old_row, ..]);
            assert!(d.iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn layer_norm_rows_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut g = Graph::new();
        let z = g.constant(random(7, 12, &mut rng) * 4.0 + 1.0);
        let n = g.layer_norm(z, 0.0);
        for row in g.value(n).rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn prototype_classifier_cases() {
        let protos = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        let tie = prototype_classify(&[1.0, 1.0, 0.0], &protos, 0.5).unwrap();
        assert!((tie.probs[0] - 0.5).abs() < 1e-12);

        let patient_first = array![[0.0, 1.0, 0.0], [1.0, 0.0, 0.0]];
        let s = prototype_classify(&[0.0, 0.0, 0.0], &patient_first, 0.5);
        assert!(matches!(s, Err(Error::DegenerateVector(_))));
        // z ∥ p_patient, ⊥ p_control: softmax([2, 0])
        let s = prototype_classify(&[3.0, 0.0, 0.0], &patient_first, 0.5).unwrap();
        assert!((s.probs[1] - 0.8808).abs() < 1e-4);
        assert!((s.probs[0] - 0.1192).abs() < 1e-4);
        assert_eq!(s.predicted, 1);

        let z = [0.3, -1.2, 0.4];
        let a = prototype_classify(&z, &protos, 0.5).unwrap();
        let b = prototype_classify(&z.map(|v| v * 7.5), &protos, 0.5).unwrap();
        assert!(a.probs.iter().zip(&b.probs).all(|(x, y)| (x - y).abs() < 1e-12));
    }

    #[test]
    fn sinusoidal_first_rows() {
        let e = sinusoidal_table(3, 4);
        assert_eq!(e.row(0).to_vec(), vec![0.0, 1.0, 0.0, 1.0]);
        assert!((e[[1, 0]] - 1f64.sin()).abs() < 1e-15);
        assert!((e[[1, 3]] - (1.0 / 100.0f64).cos()).abs() < 1e-15);
    }
}
