//! Building blocks: linear maps with optional low-rank adapters, layer norm,
//! multi-head attention and pre-norm Transformer blocks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Component, ParamId, ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Low-rank update `x A B * (alpha / rank)`; `B` starts at zero.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Lora {
    pub a: ParamId,
    pub b: ParamId,
    pub scale: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
    pub lora: Option<Lora>,
    pub d_in: usize,
    pub d_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        component: Component,
        d_in: usize,
        d_out: usize,
        init_std: f64,
        rng: &mut R,
    ) -> Self {
        let w = store.add(
            format!("{name}.weight"),
            component,
            Tensor::randn(d_in, d_out, init_std, rng),
        );
        let b = store.add(format!("{name}.bias"), component, Tensor::zeros(1, d_out));
        Self {
            w,
            b: Some(b),
            lora: None,
            d_in,
            d_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.w);
        let mut y = tape.matmul(x, w);
        if let Some(b) = self.b {
            let b = tape.param(b);
            y = tape.add_row(y, b);
        }
        if let Some(lora) = &self.lora {
            let a = tape.param(lora.a);
            let b = tape.param(lora.b);
            let down = tape.matmul(x, a);
            let up = tape.matmul(down, b);
            let up = tape.scale(up, lora.scale);
            y = tape.add(y, up);
        }
        y
    }

    /// Attaches a zero-initialised adapter; the layer's output is unchanged
    /// until the adapter trains.
    pub fn inject_lora<R: Rng + ?Sized>(
        &mut self,
        store: &mut ParamStore,
        name: &str,
        rank: usize,
        alpha: f64,
        rng: &mut R,
    ) {
        let a = store.add(
            format!("{name}.lora_a"),
            Component::Adapter,
            Tensor::randn(self.d_in, rank, 1.0 / (self.d_in as f64).sqrt(), rng),
        );
        let b = store.add(format!("{name}.lora_b"), Component::Adapter, Tensor::zeros(rank, self.d_out));
        self.lora = Some(Lora {
            a,
            b,
            scale: alpha / rank as f64,
        });
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, component: Component, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), component, Tensor::filled(1, dim, 1.0)),
            bias: store.add(format!("{name}.bias"), component, Tensor::zeros(1, dim)),
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let g = tape.param(self.gain);
        let b = tape.param(self.bias);
        tape.layer_norm(x, g, b)
    }
}

/// Which attention/feed-forward projection of a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
    FfnIn,
    FfnOut,
}

impl Projection {
    pub const ATTENTION: [Projection; 4] = [
        Projection::Query,
        Projection::Key,
        Projection::Value,
        Projection::Output,
    ];

    pub fn short(self) -> &'static str {
        match self {
            Projection::Query => "q",
            Projection::Key => "k",
            Projection::Value => "v",
            Projection::Output => "o",
            Projection::FfnIn => "ffn_in",
            Projection::FfnOut => "ffn_out",
        }
    }
}

impl std::str::FromStr for Projection {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "q" | "query" => Projection::Query,
            "k" | "key" => Projection::Key,
            "v" | "value" => Projection::Value,
            "o" | "output" => Projection::Output,
            "ffn_in" => Projection::FfnIn,
            "ffn_out" => Projection::FfnOut,
            other => return Err(format!("unknown projection `{other}`")),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub causal: bool,
}

impl Attention {
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let q = self.q.forward(tape, x);
        let k = self.k.forward(tape, x);
        let v = self.v.forward(tape, x);
        let dim = tape.shape(q).1;
        let head = dim / self.n_heads;
        let scale = 1.0 / (head as f64).sqrt();
        let mut outs = Vec::with_capacity(self.n_heads);
        for h in 0..self.n_heads {
            let (lo, hi) = (h * head, (h + 1) * head);
            let (qh, kh, vh) = if self.n_heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, lo, hi),
                    tape.slice_cols(k, lo, hi),
                    tape.slice_cols(v, lo, hi),
                )
            };
            let scores = tape.matmul_t(qh, kh);
            let scores = tape.scale(scores, scale);
            let probs = tape.softmax(scores, self.causal);
            outs.push(tape.matmul(probs, vh));
        }
        let merged = if outs.len() == 1 {
            outs[0]
        } else {
            tape.concat_cols(&outs)
        };
        self.o.forward(tape, merged)
    }
}

/// Dimensions shared by every Transformer stack in the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformerDims {
    pub n_layers: usize,
    pub hidden: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_pos: usize,
}

impl TransformerDims {
    pub fn validate(&self) -> Result<(), String> {
        if self.n_heads == 0 || self.hidden % self.n_heads != 0 {
            return Err(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.n_heads
            ));
        }
        if self.max_pos == 0 {
            return Err("max_pos must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Block {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
}

impl Block {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        component: Component,
        dims: &TransformerDims,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        let d = dims.hidden;
        let std = 1.0 / (d as f64).sqrt();
        let resid_std = std / (2.0 * dims.n_layers as f64).sqrt();
        let mut lin = |suffix: &str, i: usize, o: usize, s: f64| {
            Linear::new(store, &format!("{name}.{suffix}"), component, i, o, s, rng)
        };
        let q = lin("attn.q", d, d, std);
        let k = lin("attn.k", d, d, std);
        let v = lin("attn.v", d, d, std);
        let o = lin("attn.o", d, d, resid_std);
        let ffn_in = lin("ffn_in", d, dims.ffn_dim, std);
        let ffn_out = lin(
            "ffn_out",
            dims.ffn_dim,
            d,
            1.0 / (dims.ffn_dim as f64).sqrt() / (2.0 * dims.n_layers as f64).sqrt(),
        );
        Self {
            ln1: LayerNorm::new(store, &format!("{name}.ln1"), component, d),
            attn: Attention {
                q,
                k,
                v,
                o,
                n_heads: dims.n_heads,
                causal,
            },
            ln2: LayerNorm::new(store, &format!("{name}.ln2"), component, d),
            ffn_in,
            ffn_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.ln1.forward(tape, x);
        let h = self.attn.forward(tape, h);
        let x = tape.add(x, h);
        let h = self.ln2.forward(tape, x);
        let h = self.ffn_in.forward(tape, h);
        let h = tape.gelu(h);
        let h = self.ffn_out.forward(tape, h);
        tape.add(x, h)
    }

    pub fn projection_mut(&mut self, p: Projection) -> &mut Linear {
        match p {
            Projection::Query => &mut self.attn.q,
            Projection::Key => &mut self.attn.k,
            Projection::Value => &mut self.attn.v,
            Projection::Output => &mut self.attn.o,
            Projection::FfnIn => &mut self.ffn_in,
            Projection::FfnOut => &mut self.ffn_out,
        }
    }
}

/// Pre-norm Transformer stack with a final layer norm.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Stack {
    pub blocks: Vec<Block>,
    pub ln_final: LayerNorm,
    pub dims: TransformerDims,
}

impl Stack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        component: Component,
        dims: TransformerDims,
        causal: bool,
        rng: &mut R,
    ) -> Self {
        let blocks = (0..dims.n_layers)
            .map(|i| Block::new(store, &format!("{name}.block{i}"), component, &dims, causal, rng))
            .collect();
        Self {
            blocks,
            ln_final: LayerNorm::new(store, &format!("{name}.ln_final"), component, dims.hidden),
            dims,
        }
    }

    pub fn forward(&self, tape: &mut Tape, mut x: Var) -> Var {
        for b in &self.blocks {
            x = b.forward(tape, x);
        }
        self.ln_final.forward(tape, x)
    }
}

/// Fixed sinusoidal position table, `max_pos x dim`.
pub fn sinusoidal_table(max_pos: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(max_pos, dim);
    for pos in 0..max_pos {
        let row = t.row_mut(pos);
        for i in 0..dim {
            let pair = (i / 2) as f64;
            let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sinusoid_first_rows() {
        let t = sinusoidal_table(4, 4);
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((t.get(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((t.get(1, 2) - (1.0 / 100.0f64).sin()).abs() < 1e-15);
    }

    #[test]
    fn projection_names_parse() {
        assert_eq!("q".parse::<Projection>().unwrap(), Projection::Query);
        assert!("gate".parse::<Projection>().is_err());
    }
}
