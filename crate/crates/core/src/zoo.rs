//! Builders for the two benchmark architectures and their narrow variants.
//!
//! Both networks put the activation after every convolution. NIN's 3×3/2
//! pools use padding 1 so 32×32 maps halve exactly (32→16→8). In the plankton
//! network the first pool uses padding 1 (70→35) and the later two use none
//! (35→17→8).

use crate::error::{Error, Result};
use crate::graph::{LayerDef, ModelSpec};
use crate::rectifier::ActivationConfig;
use crate::tensor::Shape;

/// Which base architecture a reduced model narrows.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Architecture {
    /// Network-in-Network for 32×32 RGB images.
    Nin { num_classes: usize },
    /// Plankton classifier for 70×70 grayscale images, 121 classes.
    Ndsb,
}

pub const NDSB_CLASSES: usize = 121;
pub const NDSB_SPP_LEVELS: [usize; 3] = [1, 2, 4];

fn conv_act(layers: &mut Vec<LayerDef>, k: usize, c: usize) {
    layers.push(LayerDef::conv(k, c));
    layers.push(LayerDef::Activation);
}

fn nin_layers(num_classes: usize, width: impl Fn(usize) -> usize) -> Vec<LayerDef> {
    let mut l = Vec::new();
    conv_act(&mut l, 5, width(192));
    conv_act(&mut l, 1, width(160));
    conv_act(&mut l, 1, width(96));
    l.push(LayerDef::max_pool(3, 2, 1));
    l.push(LayerDef::Dropout(0.5));
    conv_act(&mut l, 5, width(192));
    conv_act(&mut l, 1, width(192));
    conv_act(&mut l, 1, width(192));
    l.push(LayerDef::avg_pool(3, 2, 1));
    l.push(LayerDef::Dropout(0.5));
    conv_act(&mut l, 3, width(192));
    conv_act(&mut l, 1, width(192));
    conv_act(&mut l, 1, num_classes);
    l.push(LayerDef::avg_pool(8, 1, 0));
    l.push(LayerDef::Flatten);
    l
}

fn ndsb_layers(width: impl Fn(usize) -> usize) -> Vec<LayerDef> {
    let mut l = Vec::new();
    conv_act(&mut l, 3, width(32));
    conv_act(&mut l, 3, width(32));
    l.push(LayerDef::max_pool(3, 2, 1));
    for _ in 0..3 {
        conv_act(&mut l, 3, width(64));
    }
    l.push(LayerDef::max_pool(3, 2, 0));
    let branch = |depth: usize| {
        let mut b = Vec::new();
        for _ in 0..depth {
            conv_act(&mut b, 3, width(96));
        }
        b
    };
    l.push(LayerDef::Branch(vec![branch(4), branch(3)]));
    l.push(LayerDef::max_pool(3, 2, 0));
    for _ in 0..5 {
        conv_act(&mut l, 3, width(256));
    }
    l.push(LayerDef::Spp(NDSB_SPP_LEVELS.to_vec()));
    l.push(LayerDef::Flatten);
    for _ in 0..2 {
        l.push(LayerDef::Dense { out: width(1024) });
        l.push(LayerDef::Activation);
    }
    l.push(LayerDef::Dense { out: NDSB_CLASSES });
    l
}

pub fn build_nin(num_classes: usize, activation: ActivationConfig) -> Result<ModelSpec> {
    if num_classes != 10 && num_classes != 100 {
        return Err(Error::InvalidParam(format!(
            "NIN is defined for 10 or 100 classes, got {num_classes}"
        )));
    }
    activation.validate()?;
    Ok(ModelSpec {
        name: "nin".into(),
        layers: nin_layers(num_classes, |c| c),
        num_classes,
        activation,
        input_shape: Shape::new(vec![3, 32, 32])?,
    })
}

pub fn build_ndsb(activation: ActivationConfig) -> Result<ModelSpec> {
    activation.validate()?;
    Ok(ModelSpec {
        name: "ndsb".into(),
        layers: ndsb_layers(|c| c),
        num_classes: NDSB_CLASSES,
        activation,
        input_shape: Shape::new(vec![1, 70, 70])?,
    })
}

/// Same topology as the base network with every hidden width multiplied by
/// `width_factor` (rounded, at least 8). Class counts are not scaled, and a
/// reduced NIN accepts any class count from 2 up.
pub fn build_reduced(base: Architecture, width_factor: f64, activation: ActivationConfig) -> Result<ModelSpec> {
    if !(width_factor > 0.0 && width_factor <= 1.0) {
        return Err(Error::InvalidParam(format!(
            "width factor must be in (0, 1], got {width_factor}"
        )));
    }
    activation.validate()?;
    let width = move |c: usize| ((c as f64 * width_factor).round() as usize).max(8);
    let spec = match base {
        Architecture::Nin { num_classes } => {
            if num_classes < 2 {
                return Err(Error::InvalidParam(format!(
                    "a classifier needs at least 2 classes, got {num_classes}"
                )));
            }
            ModelSpec {
                name: "nin-reduced".into(),
                layers: nin_layers(num_classes, width),
                num_classes,
                activation,
                input_shape: Shape::new(vec![3, 32, 32])?,
            }
        }
        Architecture::Ndsb => ModelSpec {
            name: "ndsb-reduced".into(),
            layers: ndsb_layers(width),
            num_classes: NDSB_CLASSES,
            activation,
            input_shape: Shape::new(vec![1, 70, 70])?,
        },
    };
    Ok(spec)
}
