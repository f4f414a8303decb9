//! Residual CNN classifier, desk scale: a small stem plus four residual
//! blocks with batch norm, global average pooling, dropout and a
//! sigmoid-activated linear head. Slices run as one batch; per-slice
//! features are pooled across slices before the head.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{activate, classifier_head, Model, ModelSpec};
use crate::nn::{BatchNorm2d, Conv2dLayer, Dropout, Linear, ParamSet, Phase};
use crate::tensor::{GradGraph, Value};
use crate::Result;

/// Channel plan: stem, then one entry per residual block.
const STEM: usize = 8;
const BLOCKS: [usize; 4] = [16, 32, 32, 32];
/// Blocks followed by 2x max pooling.
const POOL_AFTER: [bool; 4] = [true, true, true, false];

struct ResBlock {
    conv1: Conv2dLayer,
    bn1: BatchNorm2d,
    conv2: Conv2dLayer,
    bn2: BatchNorm2d,
    skip: Option<Conv2dLayer>,
}

pub(crate) struct ResnetTiny {
    stem: Conv2dLayer,
    stem_bn: BatchNorm2d,
    blocks: Vec<ResBlock>,
    dropout: Dropout,
    head: Linear,
}

impl ResnetTiny {
    pub fn build(spec: &ModelSpec, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let stem = Conv2dLayer::new(params, "stem.conv", 1, STEM, 3, 1, 1, rng);
        let stem_bn = BatchNorm2d::new(params, "stem.bn", STEM);
        let mut blocks = Vec::new();
        let mut c_in = STEM;
        for (i, &c_out) in BLOCKS.iter().enumerate() {
            let p = format!("block{}", i + 1);
            blocks.push(ResBlock {
                conv1: Conv2dLayer::new(params, &format!("{p}.conv1"), c_in, c_out, 3, 1, 1, rng),
                bn1: BatchNorm2d::new(params, &format!("{p}.bn1"), c_out),
                conv2: Conv2dLayer::new(params, &format!("{p}.conv2"), c_out, c_out, 3, 1, 1, rng),
                bn2: BatchNorm2d::new(params, &format!("{p}.bn2"), c_out),
                skip: (c_in != c_out)
                    .then(|| Conv2dLayer::new(params, &format!("{p}.skip"), c_in, c_out, 1, 1, 0, rng)),
            });
            c_in = c_out;
        }
        let dropout = Dropout { rate: spec.dropout_ratio };
        let head = Linear::new_head(params, "head", c_in, 1, rng);
        ResnetTiny { stem, stem_bn, blocks, dropout, head }
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec!["input".into(), "stem.out".into()];
        for i in 1..=self.blocks.len() {
            names.push(format!("block{i}.out"));
        }
        names.extend(["backbone.out".into(), "gap.out".into(), "features.pooled".into()]);
        names.extend(["logit".into(), "prob".into()]);
        names
    }

    pub fn batch_norms(&self) -> Vec<(String, &BatchNorm2d)> {
        let mut out = vec![("stem.bn".to_string(), &self.stem_bn)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{}.bn1", i + 1), &b.bn1));
            out.push((format!("block{}.bn2", i + 1), &b.bn2));
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
            let mut h = block.conv1.forward(g, bound, x)?;
            h = block.bn1.forward(g, bound, h, phase)?;
            h = activate(g, h, act);
            h = block.conv2.forward(g, bound, h)?;
            h = block.bn2.forward(g, bound, h, phase)?;
            let shortcut = match &block.skip {
                Some(skip) => skip.forward(g, bound, x)?,
                None => x,
            };
            x = g.add(h, shortcut)?;
            x = activate(g, x, act);
            g.set_name(x, &format!("block{}.out", i + 1));
            if POOL_AFTER[i] {
                x = g.max_pool2d(x, 2)?;
            }
        }
        g.set_name(x, "backbone.out");

        let feats = g.global_avg_pool(x)?;
        g.set_name(feats, "gap.out");
        let feats = self.dropout.forward(g, feats, phase, rng)?;
        let (logit, prob) =
            classifier_head(g, bound, feats, model.spec.slice_pool, &self.head)?;
        Ok((Some(logit), Some(prob), None))
    }
}
