//! Inception-style CNN classifier, desk scale: three parallel-branch blocks
//! (1x1, 3x3, and stacked-3x3 paths concatenated) with dropout between
//! blocks, ending in global average pooling and a sigmoid-activated linear
//! layer. Regularization comes from decoupled weight decay (`reg_coeff`).

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{activate, classifier_head, Model, ModelSpec};
use crate::nn::{BatchNorm2d, Conv2dLayer, Dropout, Linear, ParamSet, Phase};
use crate::tensor::{GradGraph, Value};
use crate::Result;

const STEM: usize = 8;
const BLOCKS: [usize; 3] = [16, 32, 32];
const POOL_AFTER: [bool; 3] = [true, true, false];
const BLOCK_DROPOUT: f32 = 0.1;

/// One inception block: branch outputs concatenate to `c_out`
/// (c_out/4 + c_out/2 + c_out/4).
struct InceptionBlock {
    b1: Conv2dLayer,
    b1_bn: BatchNorm2d,
    b3: Conv2dLayer,
    b3_bn: BatchNorm2d,
    b5a: Conv2dLayer,
    b5b: Conv2dLayer,
    b5_bn: BatchNorm2d,
}

impl InceptionBlock {
    fn new(params: &mut ParamSet, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let q = c_out / 4;
        InceptionBlock {
            b1: Conv2dLayer::new(params, &format!("{name}.b1"), c_in, q, 1, 1, 0, rng),
            b1_bn: BatchNorm2d::new(params, &format!("{name}.b1_bn"), q),
            b3: Conv2dLayer::new(params, &format!("{name}.b3"), c_in, c_out / 2, 3, 1, 1, rng),
            b3_bn: BatchNorm2d::new(params, &format!("{name}.b3_bn"), c_out / 2),
            b5a: Conv2dLayer::new(params, &format!("{name}.b5a"), c_in, q, 3, 1, 1, rng),
            b5b: Conv2dLayer::new(params, &format!("{name}.b5b"), q, q, 3, 1, 1, rng),
            b5_bn: BatchNorm2d::new(params, &format!("{name}.b5_bn"), q),
        }
    }
}

pub(crate) struct InceptionTiny {
    stem: Conv2dLayer,
    stem_bn: BatchNorm2d,
    blocks: Vec<InceptionBlock>,
    dropout: Dropout,
    head: Linear,
}

impl InceptionTiny {
    pub fn build(_spec: &ModelSpec, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let stem = Conv2dLayer::new(params, "stem.conv", 1, STEM, 3, 1, 1, rng);
        let stem_bn = BatchNorm2d::new(params, "stem.bn", STEM);
        let mut blocks = Vec::new();
        let mut c_in = STEM;
        for (i, &c_out) in BLOCKS.iter().enumerate() {
            blocks.push(InceptionBlock::new(params, &format!("block{}", i + 1), c_in, c_out, rng));
            c_in = c_out;
        }
        let head = Linear::new_head(params, "head", c_in, 1, rng);
        InceptionTiny { stem, stem_bn, blocks, dropout: Dropout { rate: BLOCK_DROPOUT }, head }
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec!["input".into(), "stem.out".into()];
        for i in 1..=self.blocks.len() {
            names.push(format!("block{i}.out"));
        }
        names.extend([
            "backbone.out".into(),
            "gap.out".into(),
            "features.pooled".into(),
            "logit".into(),
            "prob".into(),
        ]);
        names
    }

    pub fn batch_norms(&self) -> Vec<(String, &BatchNorm2d)> {
        let mut out = vec![("stem.bn".to_string(), &self.stem_bn)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{}.b1_bn", i + 1), &b.b1_bn));
            out.push((format!("block{}.b3_bn", i + 1), &b.b3_bn));
            out.push((format!("block{}.b5_bn", i + 1), &b.b5_bn));
        }
        out
    }

    pub fn forward(
        &self,
        model: &Model,
        g: &mut GradGraph,
        bound: &[Value],
        input: Value,
        phase: Phase,
        rng: &mut ChaCha8Rng,
    ) -> Result<(Option<Value>, Option<Value>, Option<Value>)> {
        let act = model.spec.activation;
        let mut x = self.stem.forward(g, bound, input)?;
        x = self.stem_bn.forward(g, bound, x, phase)?;
        x = activate(g, x, act);
        g.set_name(x, "stem.out");
        x = g.max_pool2d(x, 2)?;

        for (i, block) in self.blocks.iter().enumerate() {
            let mut p1 = block.b1.forward(g, bound, x)?;
            p1 = block.b1_bn.forward(g, bound, p1, phase)?;
            p1 = activate(g, p1, act);

            let mut p3 = block.b3.forward(g, bound, x)?;
            p3 = block.b3_bn.forward(g, bound, p3, phase)?;
            p3 = activate(g, p3, act);

            let mut p5 = block.b5a.forward(g, bound, x)?;
            p5 = activate(g, p5, act);
            p5 = block.b5b.forward(g, bound, p5)?;
            p5 = block.b5_bn.forward(g, bound, p5, phase)?;
            p5 = activate(g, p5, act);

            x = g.concat(&[p1, p3, p5], 1)?;
            g.set_name(x, &format!("block{}.out", i + 1));
            if POOL_AFTER[i] {
                x = g.max_pool2d(x, 2)?;
            }
            if i + 1 < self.blocks.len() {
                x = self.dropout.forward(g, x, phase, rng)?;
            }
        }
        g.set_name(x, "backbone.out");

        let feats = g.global_avg_pool(x)?;
        g.set_name(feats, "gap.out");
        let (logit, prob) =
            classifier_head(g, bound, feats, model.spec.slice_pool, &self.head)?;
        Ok((Some(logit), Some(prob), None))
    }
}
