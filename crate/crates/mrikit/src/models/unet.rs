//! Configurable U-Net autoencoder and the U-Net+MLP dual-task hybrid.
//!
//! The encoder stacks double-conv blocks (instance norm + activation) with
//! 2x max pooling between them; the decoder mirrors it with either bilinear
//! upsampling (plus a 1x1 channel-reduction conv) or a stride-2 transposed
//! convolution, concatenating skip connections before each double conv. The
//! final 1x1 convolution is linear; reconstruction values are unconstrained
//! until metric clamping.
//!
//! The hybrid attaches a two-layer perceptron to the globally pooled
//! bottleneck; its output is the volume-level tear probability.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{activate, Architecture, Model, ModelSpec, Upsampling};
use crate::nn::{Conv2dLayer, ConvTranspose2dLayer, Dropout, InstanceNorm2d, Linear, ParamSet, Phase};
use crate::tensor::{GradGraph, ReduceKind, Value};
use crate::{Error, Result};

struct DoubleConv {
    conv1: Conv2dLayer,
    norm1: InstanceNorm2d,
    conv2: Conv2dLayer,
    norm2: InstanceNorm2d,
}

impl DoubleConv {
    fn new(params: &mut ParamSet, name: &str, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        DoubleConv {
            conv1: Conv2dLayer::new(params, &format!("{name}.conv1"), c_in, c_out, 3, 1, 1, rng),
            norm1: InstanceNorm2d::new(params, &format!("{name}.norm1"), c_out),
            conv2: Conv2dLayer::new(params, &format!("{name}.conv2"), c_out, c_out, 3, 1, 1, rng),
            norm2: InstanceNorm2d::new(params, &format!("{name}.norm2"), c_out),
        }
    }

    fn forward(
        &self,
        g: &mut GradGraph,
        bound: &[Value],
        x: Value,
        act: super::Activation,
    ) -> Result<Value> {
        let mut h = self.conv1.forward(g, bound, x)?;
        h = self.norm1.forward(g, bound, h)?;
        h = activate(g, h, act);
        h = self.conv2.forward(g, bound, h)?;
        h = self.norm2.forward(g, bound, h)?;
        Ok(activate(g, h, act))
    }
}

enum UpPath {
    Transposed(ConvTranspose2dLayer),
    Bilinear(Conv2dLayer),
}

struct UpStage {
    up: UpPath,
    block: DoubleConv,
}

struct MlpHead {
    fc1: Linear,
    fc2: Linear,
    dropout: Dropout,
}

pub(crate) struct UnetNet {
    enc: Vec<DoubleConv>,
    ups: Vec<UpStage>,
    final_conv: Conv2dLayer,
    head: Option<MlpHead>,
}

impl UnetNet {
    pub fn build(spec: &ModelSpec, params: &mut ParamSet, rng: &mut impl Rng) -> Self {
        let chans = &spec.base_channels;
        let mut enc = Vec::new();
        let mut c_in = 1;
        for (i, &c) in chans.iter().enumerate() {
            enc.push(DoubleConv::new(params, &format!("enc{}", i + 1), c_in, c, rng));
            c_in = c;
        }
        let mut ups = Vec::new();
        for i in (0..chans.len() - 1).rev() {
            let (c_hi, c_lo) = (chans[i + 1], chans[i]);
            let name = format!("dec{}", chans.len() - 1 - i);
            let up = match spec.upsampling {
                Upsampling::TransposedConv => UpPath::Transposed(ConvTranspose2dLayer::new(
                    params,
                    &format!("{name}.up"),
                    c_hi,
                    c_lo,
                    2,
                    2,
                    0,
                    rng,
                )),
                Upsampling::Bilinear => UpPath::Bilinear(Conv2dLayer::new(
                    params,
                    &format!("{name}.up"),
                    c_hi,
                    c_lo,
                    1,
                    1,
                    0,
                    rng,
                )),
            };
            ups.push(UpStage { up, block: DoubleConv::new(params, &name, 2 * c_lo, c_lo, rng) });
        }
        let final_conv = Conv2dLayer::new(params, "final", chans[0], 1, 1, 1, 0, rng);
        let head = matches!(spec.architecture, Architecture::UnetMlp).then(|| {
            let c_top = *chans.last().expect("validated non-empty");
            MlpHead {
                fc1: Linear::new(params, "mlp.fc1", c_top, c_top / 2, rng),
                fc2: Linear::new_head(params, "mlp.fc2", c_top / 2, 1, rng),
                dropout: Dropout { rate: spec.dropout_ratio },
            }
        });
        UnetNet { enc, ups, final_conv, head }
    }

    pub fn layer_names(&self) -> Vec<String> {
        let mut names = vec!["input".to_string()];
        for i in 1..=self.enc.len() {
            names.push(format!("enc{i}.out"));
        }
        names.push("encoder.out".into());
        for i in 1..=self.ups.len() {
            names.push(format!("dec{i}.out"));
        }
        names.push("recon".into());
        if self.head.is_some() {
            names.extend(["latent.pooled".into(), "features.pooled".into()]);
            names.extend(["logit".into(), "prob".into()]);
        }
        names
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
        let [_, _, h, w] = *g.shape(input) else { unreachable!("input is 4-d") };
        let divisor = model.spec.unet_divisor();
        if h % divisor != 0 || w % divisor != 0 {
            return Err(Error::Indivisible { extent: h.min(w), required: divisor });
        }

        let mut skips = Vec::new();
        let mut x = input;
        for (i, block) in self.enc.iter().enumerate() {
            x = block.forward(g, bound, x, act)?;
            g.set_name(x, &format!("enc{}.out", i + 1));
            if i + 1 < self.enc.len() {
                skips.push(x);
                x = g.max_pool2d(x, 2)?;
            }
        }
        g.set_name(x, "encoder.out");
        let bottleneck = x;

        for (i, stage) in self.ups.iter().enumerate() {
            x = match &stage.up {
                UpPath::Transposed(t) => t.forward(g, bound, x)?,
                UpPath::Bilinear(reduce) => {
                    let up = g.upsample_bilinear(x, 2)?;
                    reduce.forward(g, bound, up)?
                }
            };
            let skip = skips.pop().expect("one skip per decoder stage");
            x = g.concat(&[skip, x], 1)?;
            x = stage.block.forward(g, bound, x, act)?;
            g.set_name(x, &format!("dec{}.out", i + 1));
        }
        let recon = self.final_conv.forward(g, bound, x)?;
        g.set_name(recon, "recon");

        let (logit, prob) = match &self.head {
            None => (None, None),
            Some(head) => {
                let pooled = g.global_avg_pool(bottleneck)?;
                g.set_name(pooled, "latent.pooled");
                let reduce = match model.spec.slice_pool {
                    super::SlicePool::Max => ReduceKind::Max,
                    super::SlicePool::Mean => ReduceKind::Mean,
                };
                let feats = g.reduce_rows(pooled, reduce)?;
                g.set_name(feats, "features.pooled");
                let c = g.shape(feats)[0];
                let row = g.reshape(feats, &[1, c])?;
                let mut hdn = head.fc1.forward(g, bound, row)?;
                hdn = activate(g, hdn, act);
                hdn = head.dropout.forward(g, hdn, phase, rng)?;
                let logit2 = head.fc2.forward(g, bound, hdn)?;
                let logit = g.reshape(logit2, &[1])?;
                g.set_name(logit, "logit");
                let prob = g.sigmoid(logit);
                g.set_name(prob, "prob");
                (Some(logit), Some(prob))
            }
        };
        Ok((logit, prob, Some(recon)))
    }
}
