use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AutodiffError, Graph, ModelParams, ParamId, Tensor, Var};

/// Default negative slope of hidden-layer activations.
pub const DEFAULT_SLOPE: f64 = 0.01;

/// `x·W + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let w = params.add_xavier(format!("{name}.w"), inputs, outputs, rng)?;
        let b = params.add_zeros(format!("{name}.b"), 1, outputs)?;
        Ok(Self { w, b, inputs, outputs })
    }

    pub fn forward(&self, g: &mut Graph, params: &ModelParams, x: Var) -> Result<Var, AutodiffError> {
        let w = g.param(params, self.w);
        let b = g.param(params, self.b);
        let xw = g.matmul(x, w)?;
        g.add_row(xw, b)
    }
}

/// Row-wise layer normalization with learnable gain and bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(params: &mut ModelParams, name: &str, width: usize) -> Result<Self, AutodiffError> {
        let gain = params.add_filled(format!("{name}.gain"), 1, width, 1.0)?;
        let bias = params.add_zeros(format!("{name}.bias"), 1, width)?;
        Ok(Self { gain, bias })
    }

    pub fn forward(&self, g: &mut Graph, params: &ModelParams, x: Var) -> Result<Var, AutodiffError> {
        let n = g.layer_norm_rows(x);
        let gain = g.param(params, self.gain);
        let bias = g.param(params, self.bias);
        let scaled = g.mul_row(n, gain)?;
        g.add_row(scaled, bias)
    }
}

/// Stack of linear layers with LeakyReLU between them. The last layer is
/// left linear; callers pick the output activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub layers: Vec<Linear>,
    pub slope: f64,
}

impl FeedForward {
    /// `widths` lists every layer boundary, input first: `[in, h1, …, out]`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        widths: &[usize],
        slope: f64,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(params, &format!("{name}.{i}"), w[0], w[1], rng))
            .collect::<Result<_, _>>()?;
        Ok(Self { layers, slope })
    }

    pub fn forward(&self, g: &mut Graph, params: &ModelParams, x: Var) -> Result<Var, AutodiffError> {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, params, h)?;
            if i + 1 < self.layers.len() {
                h = g.leaky_relu(h, self.slope);
            }
        }
        Ok(h)
    }
}

/// `softmax(Q·Kᵀ / √m)·V` with `m` the key width.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var) -> Result<Var, AutodiffError> {
    let m = g.shape(k).1;
    let kt = g.transpose(k);
    let scores = g.matmul(q, kt)?;
    let scaled = g.scale(scores, 1.0 / libm::sqrt(m.max(1) as f64));
    let weights = g.softmax_rows(scaled, None)?;
    g.matmul(weights, v)
}

/// `h` parallel projected attentions, concatenated and projected back to
/// the model width.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub width: usize,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        width: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        if heads == 0 || !width.is_multiple_of(heads) {
            return Err(AutodiffError::Heads { width, heads });
        }
        Ok(Self {
            heads,
            width,
            q: Linear::new(params, &format!("{name}.q"), width, width, rng)?,
            k: Linear::new(params, &format!("{name}.k"), width, width, rng)?,
            v: Linear::new(params, &format!("{name}.v"), width, width, rng)?,
            out: Linear::new(params, &format!("{name}.out"), width, width, rng)?,
        })
    }

    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        q: Var,
        k: Var,
        v: Var,
    ) -> Result<Var, AutodiffError> {
        let q = self.q.forward(g, params, q)?;
        let k = self.k.forward(g, params, k)?;
        let v = self.v.forward(g, params, v)?;
        let d = self.width / self.heads;
        let mut parts = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_cols(q, h * d, d)?;
            let kh = g.slice_cols(k, h * d, d)?;
            let vh = g.slice_cols(v, h * d, d)?;
            parts.push(scaled_dot_attention(g, qh, kh, vh)?);
        }
        let cat = g.concat_cols(&parts)?;
        self.out.forward(g, params, cat)
    }
}

/// Sinusoidal encoding: `sin(p / 10000^(2i/d))` on even channels and the
/// matching cosine on odd ones.
pub fn positional_encoding(seq_len: usize, width: usize) -> Tensor {
    Tensor::from_fn(seq_len, width, |p, c| {
        let i = (c / 2) as f64;
        let angle = p as f64 / libm::pow(10000.0, 2.0 * i / width as f64);
        if c % 2 == 0 {
            libm::sin(angle)
        } else {
            libm::cos(angle)
        }
    })
}

/// Post-norm transformer encoder block:
/// `E¹ = LN(E + MHA(E, E, E))`, `out = LN(E¹ + FFN(E¹))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderBlock {
    pub attention: MultiHeadAttention,
    pub norm1: LayerNorm,
    pub ffn: FeedForward,
    pub norm2: LayerNorm,
}

impl EncoderBlock {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        width: usize,
        heads: usize,
        hidden: &[usize],
        slope: f64,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(width);
        widths.extend_from_slice(hidden);
        widths.push(width);
        Ok(Self {
            attention: MultiHeadAttention::new(params, &format!("{name}.mha"), width, heads, rng)?,
            norm1: LayerNorm::new(params, &format!("{name}.ln1"), width)?,
            ffn: FeedForward::new(params, &format!("{name}.ffn"), &widths, slope, rng)?,
            norm2: LayerNorm::new(params, &format!("{name}.ln2"), width)?,
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ModelParams, x: Var) -> Result<Var, AutodiffError> {
        let att = self.attention.forward(g, params, x, x, x)?;
        let res = g.add(x, att)?;
        let e1 = self.norm1.forward(g, params, res)?;
        let ff = self.ffn.forward(g, params, e1)?;
        let res = g.add(e1, ff)?;
        self.norm2.forward(g, params, res)
    }
}

/// Graph attention convolution over an adjacency mask.
///
/// Neighbor `k` of node `n` gets score `LeakyReLU(e_k·W⁰ + b⁰)`; scores
/// are softmax-normalized over `n`'s neighbors, and
/// `e'_n = σ(Σ_k α_nk·(e_k·W¹ + b¹))`. A node without neighbors maps to
/// `σ(0) = 0.5` in every channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphAttention {
    pub score: Linear,
    pub transform: Linear,
    pub slope: f64,
}

impl GraphAttention {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ModelParams,
        name: &str,
        inputs: usize,
        outputs: usize,
        slope: f64,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        Ok(Self {
            score: Linear::new(params, &format!("{name}.score"), inputs, 1, rng)?,
            transform: Linear::new(params, &format!("{name}.transform"), inputs, outputs, rng)?,
            slope,
        })
    }

    /// `x` is `N × inputs`; `adjacency[n·N + k]` marks `k ∈ 𝒮_n`.
    pub fn forward(
        &self,
        g: &mut Graph,
        params: &ModelParams,
        x: Var,
        adjacency: &[bool],
    ) -> Result<Var, AutodiffError> {
        let n = g.shape(x).0;
        let s = self.score.forward(g, params, x)?;
        let s = g.leaky_relu(s, self.slope);
        let st = g.transpose(s);
        let grid = g.repeat_rows(st, n)?;
        let alpha = g.softmax_rows(grid, Some(adjacency))?;
        let t = self.transform.forward(g, params, x)?;
        let mixed = g.matmul(alpha, t)?;
        Ok(g.sigmoid(mixed))
    }

    /// Attention weights alone, for inspection.
    pub fn weights(&self, params: &ModelParams, x: &Tensor, adjacency: &[bool]) -> Result<Tensor, AutodiffError> {
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let s = self.score.forward(&mut g, params, xv)?;
        let s = g.leaky_relu(s, self.slope);
        let st = g.transpose(s);
        let grid = g.repeat_rows(st, x.rows())?;
        let alpha = g.softmax_rows(grid, Some(adjacency))?;
        Ok(g.value(alpha).clone())
    }
}

/// Names of every parameter in `params`, in registration order.
pub fn param_names(params: &ModelParams) -> Vec<String> {
    params.iter().map(|(_, p)| p.name.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    fn eval(f: impl FnOnce(&mut Graph) -> Var) -> Tensor {
        let mut g = Graph::new();
        let v = f(&mut g);
        g.value(v).clone()
    }

    #[test]
    fn single_key_returns_its_value() {
        let out = eval(|g| {
            let q = g.constant(t(1, 2, &[0.3, -1.0]));
            let k = g.constant(t(1, 2, &[2.0, 5.0]));
            let v = g.constant(t(1, 3, &[7.0, 8.0, 9.0]));
            scaled_dot_attention(g, q, k, v).unwrap()
        });
        assert_eq!(out.data(), &[7.0, 8.0, 9.0]);
        let unit = eval(|g| {
            let one = g.constant(t(1, 1, &[1.0]));
            scaled_dot_attention(g, one, one, one).unwrap()
        });
        assert_eq!(unit.data(), &[1.0]);
    }

    #[test]
    fn large_aligned_query_selects_its_row() {
        let out = eval(|g| {
            let q = g.constant(t(1, 3, &[0.0, 60.0, 0.0]));
            let k = g.constant(Tensor::identity(3));
            let v = g.constant(t(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
            scaled_dot_attention(g, q, k, v).unwrap()
        });
        assert!((out.get(0, 0) - 3.0).abs() < 1e-9);
        assert!((out.get(0, 1) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn attention_output_is_convex_combination() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let q = Tensor::from_fn(4, 3, |_, _| rng.random_range(-2.0..2.0));
        let k = Tensor::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
        let v = Tensor::from_fn(5, 2, |_, _| rng.random_range(-2.0..2.0));
        let out = eval(|g| {
            let (q, k, v) = (g.constant(q), g.constant(k), g.constant(v.clone()));
            scaled_dot_attention(g, q, k, v).unwrap()
        });
        for j in 0..2 {
            let lo = (0..5).map(|i| v.get(i, j)).fold(f64::INFINITY, f64::min);
            let hi = (0..5).map(|i| v.get(i, j)).fold(f64::NEG_INFINITY, f64::max);
            for i in 0..4 {
                assert!(out.get(i, j) >= lo - 1e-12 && out.get(i, j) <= hi + 1e-12);
            }
        }
    }

    #[test]
    fn one_head_is_projected_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut params = ModelParams::new();
        let mha = MultiHeadAttention::new(&mut params, "mha", 4, 1, &mut rng).unwrap();
        let x = Tensor::from_fn(3, 4, |i, j| (i * 4 + j) as f64 * 0.1 - 0.5);
        let a = eval(|g| {
            let x = g.constant(x.clone());
            mha.forward(g, &params, x, x, x).unwrap()
        });
        let b = eval(|g| {
            let x = g.constant(x.clone());
            let q = mha.q.forward(g, &params, x).unwrap();
            let k = mha.k.forward(g, &params, x).unwrap();
            let v = mha.v.forward(g, &params, x).unwrap();
            let att = scaled_dot_attention(g, q, k, v).unwrap();
            mha.out.forward(g, &params, att).unwrap()
        });
        assert_eq!(a, b);
        assert_eq!(a.shape(), (3, 4));
    }

    #[test]
    fn heads_must_divide_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = ModelParams::new();
        assert_eq!(
            MultiHeadAttention::new(&mut params, "m", 6, 4, &mut rng).unwrap_err(),
            AutodiffError::Heads { width: 6, heads: 4 }
        );
    }

    #[test]
    fn mha_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut params = ModelParams::new();
        let mha = MultiHeadAttention::new(&mut params, "mha", 8, 4, &mut rng).unwrap();
        let x = Tensor::from_fn(5, 8, |_, _| rng.random_range(-1.0..1.0));
        let perm = [3usize, 0, 4, 1, 2];
        let xp = Tensor::from_fn(5, 8, |i, j| x.get(perm[i], j));
        let run = |x: &Tensor| {
            eval(|g| {
                let x = g.constant(x.clone());
                mha.forward(g, &params, x, x, x).unwrap()
            })
        };
        let (y, yp) = (run(&x), run(&xp));
        for i in 0..5 {
            for j in 0..8 {
                assert!((yp.get(i, j) - y.get(perm[i], j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positional_encoding_properties() {
        let pe = positional_encoding(5, 64);
        assert_eq!(pe, positional_encoding(5, 64));
        for c in (0..64).step_by(2) {
            assert_eq!(pe.get(0, c), 0.0);
        }
        assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn gat_isolated_node_is_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = ModelParams::new();
        let gat = GraphAttention::new(&mut params, "gat", 3, 4, 0.25, &mut rng).unwrap();
        let x = t(3, 3, &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
        // Node 2 has no neighbors; nodes 0 and 1 are linked.
        let adj = [false, true, false, true, false, false, false, false, false];
        let out = eval(|g| {
            let x = g.constant(x.clone());
            gat.forward(g, &params, x, &adj).unwrap()
        });
        assert_eq!(out.row(2), &[0.5; 4]);
        let w = gat.weights(&params, &x, &adj).unwrap();
        assert_eq!(w.get(0, 1), 1.0);
        assert_eq!(w.get(1, 0), 1.0);
    }
}
