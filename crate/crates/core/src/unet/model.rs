//! Two-stage 3D U-Net: enc1 -> pool -> enc2 -> pool -> bottleneck ->
//! up + skip -> dec2 -> up + skip -> dec1 -> 1x1x1 head -> softmax.

use rand::Rng;

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// Width of the first encoder stage; the second stage doubles it.
    pub base_channels: usize,
    pub bottleneck_channels: usize,
    pub in_channels: usize,
    pub classes: usize,
    pub kernel: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 16,
            bottleneck_channels: 64,
            in_channels: 1,
            classes: 2,
            kernel: 3,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0 || self.bottleneck_channels == 0 || self.in_channels == 0 {
            return Err(Error::config("model", "channel counts must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config("model.classes", "need at least 2 classes"));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::config("model.kernel", "kernel size must be odd"));
        }
        Ok(())
    }

    /// `(name, shape, fan_in)` of every parameter in forward order.
    pub fn layout(&self) -> Vec<(String, [usize; 5], usize)> {
        fn conv(out: &mut Vec<(String, [usize; 5], usize)>, name: &str, ci: usize, co: usize, k: usize) {
            let fan_in = ci * k * k * k;
            out.push((format!("{name}.weight"), [co, ci, k, k, k], fan_in));
            out.push((format!("{name}.bias"), [co, 1, 1, 1, 1], fan_in));
        }
        // each upconv output voxel sees one tap per input channel
        fn up(out: &mut Vec<(String, [usize; 5], usize)>, name: &str, ci: usize, co: usize) {
            out.push((format!("{name}.weight"), [ci, co, 2, 2, 2], ci));
            out.push((format!("{name}.bias"), [co, 1, 1, 1, 1], ci));
        }
        let k = self.kernel;
        let (c1, c2, cb) = (self.base_channels, 2 * self.base_channels, self.bottleneck_channels);
        let mut out = Vec::new();
        conv(&mut out, "enc1.conv1", self.in_channels, c1, k);
        conv(&mut out, "enc1.conv2", c1, c1, k);
        conv(&mut out, "enc2.conv1", c1, c2, k);
        conv(&mut out, "enc2.conv2", c2, c2, k);
        conv(&mut out, "bottleneck.conv1", c2, cb, k);
        conv(&mut out, "bottleneck.conv2", cb, cb, k);
        up(&mut out, "dec2.up", cb, c2);
        conv(&mut out, "dec2.conv1", 2 * c2, c2, k);
        conv(&mut out, "dec2.conv2", c2, c2, k);
        up(&mut out, "dec1.up", c2, c1);
        conv(&mut out, "dec1.conv1", 2 * c1, c1, k);
        conv(&mut out, "dec1.conv2", c1, c1, k);
        conv(&mut out, "head", c1, self.classes, 1);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetParams {
    pub config: UNetConfig,
    pub tensors: Vec<NamedTensor>,
    pub seed: u64,
}

impl UNetParams {
    /// He-uniform weights (`U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`), zero biases.
    pub fn init(config: UNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream(seed, "unet-init");
        let tensors = config
            .layout()
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let mut t = Tensor::zeros(shape);
                if name.ends_with(".weight") {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    for v in t.data.iter_mut() {
                        *v = rng.random_range(-bound..bound);
                    }
                }
                NamedTensor { name, tensor: t }
            })
            .collect();
        Ok(Self { config, tensors, seed })
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.tensor.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name).map(|t| &t.tensor)
    }
}

/// Tape handles for one forward pass.
pub struct Forward {
    pub params: Vec<Var>,
    pub logits: Var,
    pub probs: Var,
}

fn check_input(config: &UNetConfig, x: &Tensor) -> Result<()> {
    if x.channels() != config.in_channels {
        return Err(Error::Shape {
            op: "unet_forward",
            axis: "channels",
            expected: config.in_channels,
            found: x.channels(),
        });
    }
    for (axis, name) in [(2, "H"), (3, "D"), (4, "W")] {
        let n = x.shape[axis];
        if n % 4 != 0 || n == 0 {
            return Err(Error::Shape {
                op: "unet_forward",
                axis: name,
                expected: n.div_ceil(4).max(1) * 4,
                found: n,
            });
        }
    }
    Ok(())
}

/// Records the network on `tape`. Parameters are leaves that take gradients
/// when `trainable` is set.
pub fn unet_forward_on(tape: &mut Tape, params: &UNetParams, x: &Tensor, trainable: bool) -> Result<Forward> {
    check_input(&params.config, x)?;
    let vars: Vec<Var> = params
        .tensors
        .iter()
        .map(|t| {
            if trainable {
                tape.param(t.tensor.clone())
            } else {
                tape.constant(t.tensor.clone())
            }
        })
        .collect();
    let mut next = vars.iter().copied();
    let mut take = || next.next().expect("parameter layout");
    let input = tape.constant(x.clone());

    let block = |tape: &mut Tape, h: Var, take: &mut dyn FnMut() -> Var| -> Result<Var> {
        let (w1, b1) = (take(), take());
        let h = tape.conv3d(h, w1, b1)?;
        let h = tape.relu(h);
        let (w2, b2) = (take(), take());
        let h = tape.conv3d(h, w2, b2)?;
        Ok(tape.relu(h))
    };

    let s1 = block(tape, input, &mut take)?;
    let p1 = tape.maxpool2(s1)?;
    let s2 = block(tape, p1, &mut take)?;
    let p2 = tape.maxpool2(s2)?;
    let bott = block(tape, p2, &mut take)?;
    let (uw, ub) = (take(), take());
    let u2 = tape.upconv2(bott, uw, ub)?;
    let c2 = tape.concat_channels(u2, s2)?;
    let d2 = block(tape, c2, &mut take)?;
    let (uw, ub) = (take(), take());
    let u1 = tape.upconv2(d2, uw, ub)?;
    let c1 = tape.concat_channels(u1, s1)?;
    let d1 = block(tape, c1, &mut take)?;
    let (hw, hb) = (take(), take());
    let logits = tape.conv3d(d1, hw, hb)?;
    let probs = tape.softmax_channels(logits)?;
    Ok(Forward {
        params: vars,
        logits,
        probs,
    })
}

/// Class probabilities `[N, classes, H, D, W]`.
pub fn unet_forward(params: &UNetParams, x: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let f = unet_forward_on(&mut tape, params, x, false)?;
    Ok(tape.value(f.probs).clone())
}
