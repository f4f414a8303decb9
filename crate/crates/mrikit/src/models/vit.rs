//! Two-stage slice-sequence transformer.
//!
//! Stage one (image encoder) embeds each slice independently: a patch
//! convolution, learned positional embeddings, four pre-norm transformer
//! blocks, and mean pooling over patch tokens. Stage two (sequence encoder)
//! prepends a learned classification token to the per-slice embeddings and
//! runs `transformer_depth` blocks with `transformer_heads` heads; the
//! classification token's output feeds a linear layer and a sigmoid.
//!
//! Slice counts vary per volume; the sequence is built at its true length,
//! so no padding token ever enters attention.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Model, ModelSpec, VIT_IMAGE_DEPTH, VIT_IMAGE_HEADS, VIT_PATCH, VIT_WIDTH};
use crate::nn::{Conv2dLayer, LayerNormLayer, Linear, ParamSet, Phase, TransformerBlock};
use crate::tensor::{GradGraph, ReduceKind, Value};
use crate::{Result, Tensor};

pub(crate) struct VitTwoStage {
    patch: Conv2dLayer,
    pos_embed: usize,
    img_blocks: Vec<TransformerBlock>,
    img_ln: LayerNormLayer,
    cls: usize,
    seq_blocks: Vec<TransformerBlock>,
    seq_ln: LayerNormLayer,
    head: Linear,
    tokens_per_slice: usize,
}

impl VitTwoStage {
    pub fn build(spec: &ModelSpec, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let d = VIT_WIDTH;
        let grid = spec.input_edge / VIT_PATCH;
        let tokens = grid * grid;
        let patch = Conv2dLayer::new(params, "image_encoder.patch", 1, d, VIT_PATCH, VIT_PATCH, 0, rng);
        let pos_embed = params.add("image_encoder.pos_embed", Tensor::randn(&[tokens, d], 0.02, rng));
        let img_blocks = (0..VIT_IMAGE_DEPTH)
            .map(|i| {
                TransformerBlock::new(params, &format!("image_encoder.block{i}"), d, VIT_IMAGE_HEADS, 3, rng)
            })
            .collect();
        let img_ln = LayerNormLayer::new(params, "image_encoder.ln", d);
        let cls = params.add("sequence.cls", Tensor::randn(&[1, d], 0.02, rng));
        let seq_blocks = (0..spec.transformer_depth)
            .map(|i| {
                TransformerBlock::new(params, &format!("sequence.block{i}"), d, spec.transformer_heads, 3, rng)
            })
            .collect();
        let seq_ln = LayerNormLayer::new(params, "sequence.ln", d);
        let head = Linear::new_head(params, "head", d, 1, rng);
        VitTwoStage {
            patch,
            pos_embed,
            img_blocks,
            img_ln,
            cls,
            seq_blocks,
            seq_ln,
            head,
            tokens_per_slice: tokens,
        }
    }

    pub fn layer_names(&self) -> Vec<String> {
        vec![
            "input".into(),
            "image_encoder.patch_conv".into(),
            "sequence.tokens".into(),
            "sequence.out".into(),
            "logit".into(),
            "prob".into(),
        ]
    }

    pub fn forward(
        &self,
        _model: &Model,
        g: &mut GradGraph,
        bound: &[Value],
        input: Value,
        _phase: Phase,
        _rng: &mut ChaCha8Rng,
    ) -> Result<(Option<Value>, Option<Value>, Option<Value>)> {
        let [s, _, h, w] = *g.shape(input) else { unreachable!("input is 4-d") };
        let d = VIT_WIDTH;

        let mut embeddings = Vec::with_capacity(s);
        for k in 0..s {
            let slice = g.narrow(input, 0, k, 1)?;
            let fmap = self.patch.forward(g, bound, slice)?;
            g.set_name(fmap, &format!("image_encoder.patch_conv.s{k}"));
            let (gh, gw) = (h / VIT_PATCH, w / VIT_PATCH);
            debug_assert_eq!(gh * gw, self.tokens_per_slice);
            let flat = g.reshape(fmap, &[d, gh * gw])?;
            let mut tokens = g.transpose2d(flat)?;
            tokens = g.add(tokens, bound[self.pos_embed])?;
            for block in &self.img_blocks {
                tokens = block.forward(g, bound, tokens)?;
            }
            tokens = self.img_ln.forward(g, bound, tokens)?;
            let pooled = g.reduce_rows(tokens, ReduceKind::Mean)?;
            let row = g.reshape(pooled, &[1, d])?;
            g.set_name(row, &format!("image_encoder.out.s{k}"));
            embeddings.push(row);
        }

        let seq = g.concat(&embeddings, 0)?;
        let mut tokens = g.concat(&[bound[self.cls], seq], 0)?;
        g.set_name(tokens, "sequence.tokens");
        debug_assert_eq!(g.shape(tokens), &[s + 1, d]);
        for block in &self.seq_blocks {
            tokens = block.forward(g, bound, tokens)?;
        }
        tokens = self.seq_ln.forward(g, bound, tokens)?;
        g.set_name(tokens, "sequence.out");

        let cls_out = g.narrow(tokens, 0, 0, 1)?;
        let logit2 = self.head.forward(g, bound, cls_out)?;
        let logit = g.reshape(logit2, &[1])?;
        g.set_name(logit, "logit");
        let prob = g.sigmoid(logit);
        g.set_name(prob, "prob");
        Ok((Some(logit), Some(prob), None))
    }
}
