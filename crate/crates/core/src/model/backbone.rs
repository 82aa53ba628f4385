use super::ModelConfig;
use crate::attention::FeatureMap;
use crate::error::{Error, Result};
use crate::tensor::{rng, BoundParams, ParamStore, Real, Tensor, Var};

const STEM_KERNEL: usize = 7;

fn init_conv<T: Real>(
    store: &mut ParamStore<T>,
    name: &str,
    c_out: usize,
    c_in: usize,
    kernel: usize,
    gain: f64,
    seed: u64,
) -> Result<()> {
    let fan_in = c_in * kernel * kernel;
    let std = gain * (2.0 / fan_in as f64).sqrt();
    let weight = rng::normal(&mut rng::stream(seed, name), [c_out, c_in, kernel, kernel], std);
    store.insert(format!("{name}.weight"), weight)?;
    store.insert(format!("{name}.bias"), Tensor::zeros([c_out]))
}

fn block_name(stage: usize, block: usize) -> String {
    format!("backbone.stage{stage}.block{block}")
}

/// Registers the stem, the residual stages and the projection to `D`.
///
/// There is no batch normalization, so the last convolution of every
/// residual branch starts scaled down by `1/√(total blocks)` to keep the
/// activation scale bounded as blocks are stacked.
pub(crate) fn init_backbone<T: Real>(store: &mut ParamStore<T>, cfg: &ModelConfig, seed: u64) -> Result<()> {
    let total_blocks: usize = cfg.stage_blocks.iter().sum();
    let branch_gain = 1.0 / (total_blocks as f64).sqrt();
    init_conv(store, "backbone.stem", cfg.stage_widths[0], cfg.in_channels, STEM_KERNEL, 1.0, seed)?;
    let mut c_in = cfg.stage_widths[0];
    for (s, (&width, &blocks)) in cfg.stage_widths.iter().zip(&cfg.stage_blocks).enumerate() {
        for b in 0..blocks {
            let name = block_name(s, b);
            let block_in = if b == 0 { c_in } else { width };
            init_conv(store, &format!("{name}.conv1"), width, block_in, 3, 1.0, seed)?;
            init_conv(store, &format!("{name}.conv2"), width, width, 3, branch_gain, seed)?;
            if b == 0 {
                init_conv(store, &format!("{name}.down"), width, block_in, 1, 1.0, seed)?;
            }
        }
        c_in = width;
    }
    init_conv(store, "backbone.proj", cfg.embed_dim, c_in, 1, 1.0, seed)
}

fn conv<'t, T: Real>(
    x: Var<'t, T>,
    params: &BoundParams<'t, T>,
    name: &str,
    stride: usize,
    padding: usize,
) -> Result<Var<'t, T>> {
    let weight = params.get(&format!("{name}.weight"))?;
    let bias = params.get(&format!("{name}.bias"))?;
    x.conv2d(weight, Some(bias), stride, padding)
}

/// Feature map `D × H/32 × W/32` of one `C_in×H×W` image.
pub fn backbone_forward<'t, T: Real>(
    image: Var<'t, T>,
    params: &BoundParams<'t, T>,
    cfg: &ModelConfig,
) -> Result<FeatureMap<'t, T>> {
    let expected = [cfg.in_channels, cfg.image_height, cfg.image_width];
    if image.shape() != expected {
        return Err(Error::shape(format!(
            "image of shape {:?}, model expects {expected:?}",
            image.shape()
        )));
    }
    let mut x = conv(image, params, "backbone.stem", 2, STEM_KERNEL / 2)?.relu();
    for (s, &blocks) in cfg.stage_blocks.iter().enumerate() {
        for b in 0..blocks {
            let name = block_name(s, b);
            let stride = if b == 0 { 2 } else { 1 };
            let h = conv(x, params, &format!("{name}.conv1"), stride, 1)?.relu();
            let h = conv(h, params, &format!("{name}.conv2"), 1, 1)?;
            let shortcut = if b == 0 {
                conv(x, params, &format!("{name}.down"), 2, 0)?
            } else {
                x
            };
            x = h.add(shortcut)?.relu();
        }
    }
    FeatureMap::new(conv(x, params, "backbone.proj", 1, 0)?)
}
