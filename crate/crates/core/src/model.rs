//! Layer sequences, the texture-benchmark model builders, and the
//! serializable model description used by checkpoints.

use crate::error::{Error, Result};
use crate::hoconv::HoConvLayer;
use crate::layers::{ActKind, BatchNorm2d, Cache, Conv2d, Dropout, Layer, Linear, MaxPool2d, Mode};
use crate::rng::RngState;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Cnn,
    Hocnn2,
    Hocnn3,
    Hocnn4,
}

impl ModelKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "cnn" => Ok(ModelKind::Cnn),
            "hocnn2" => Ok(ModelKind::Hocnn2),
            "hocnn3" => Ok(ModelKind::Hocnn3),
            "hocnn4" => Ok(ModelKind::Hocnn4),
            other => Err(Error::Param(format!("unknown model kind '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Cnn => "cnn",
            ModelKind::Hocnn2 => "hocnn2",
            ModelKind::Hocnn3 => "hocnn3",
            ModelKind::Hocnn4 => "hocnn4",
        }
    }

    pub fn all() -> [ModelKind; 4] {
        [ModelKind::Cnn, ModelKind::Hocnn2, ModelKind::Hocnn3, ModelKind::Hocnn4]
    }
}

/// Serializable constructor arguments for each layer; weights are stored
/// separately as flat arrays in the same layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        out_channels: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        stride: usize,
    },
    HoConv {
        out_channels: usize,
        max_order: usize,
        kh: usize,
        kw: usize,
        c_in: usize,
        stride: usize,
    },
    BatchNorm2d {
        channels: usize,
    },
    Activation {
        act: ActKind,
    },
    MaxPool2d {
        k: usize,
        stride: usize,
        pad_br: usize,
    },
    Flatten,
    Linear {
        in_features: usize,
        out_features: usize,
    },
    Dropout {
        p: f64,
    },
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
}

impl Model {
    pub fn forward(&mut self, input: &Tensor, mode: Mode, rng: &mut RngState) -> Result<Tensor> {
        let mut x = input.clone();
        for layer in &mut self.layers {
            let (y, _) = layer.forward(&x, mode, rng)?;
            x = y;
        }
        Ok(x)
    }

    /// Forward keeping per-layer caches for a following `backward`.
    pub fn forward_cached(
        &mut self,
        input: &Tensor,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Tensor, Vec<Cache>)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, cache) = layer.forward(&x, mode, rng)?;
            caches.push(cache);
            x = y;
        }
        Ok((x, caches))
    }

    /// Forward returning the output of every layer, for analysis taps.
    pub fn forward_traced(
        &mut self,
        input: &Tensor,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<Vec<Tensor>> {
        let mut x = input.clone();
        let mut outs = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, _) = layer.forward(&x, mode, rng)?;
            outs.push(y.clone());
            x = y;
        }
        Ok(outs)
    }

    /// Backpropagates `grad_out`, returning per-layer parameter gradients
    /// aligned with `param_vecs` of each layer. The input gradient of layer 0
    /// is skipped unless `need_input_grad`.
    pub fn backward(
        &self,
        caches: &[Cache],
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Vec<Vec<f64>>>)> {
        let mut grads: Vec<Vec<Vec<f64>>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        let mut input_grad = None;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need = i > 0 || need_input_grad;
            let (gi, pg) = layer.backward(&caches[i], &g, need)?;
            grads[i] = pg;
            if i == 0 {
                input_grad = gi;
            } else {
                g = gi.ok_or_else(|| Error::Shape("missing input gradient".into()))?;
            }
        }
        Ok((input_grad, grads))
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_slices())
            .map(|s| s.len())
            .sum()
    }

    /// Copy of all learnable parameters, used for best-epoch snapshots.
    pub fn snapshot(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for s in layer.param_slices() {
                out.push(s.to_vec());
            }
            for s in layer.buffer_slices() {
                out.push(s.to_vec());
            }
        }
        out
    }

    pub fn restore(&mut self, snapshot: &[Vec<f64>]) -> Result<()> {
        let mut i = 0;
        for layer in &mut self.layers {
            for p in layer.param_vecs() {
                let src = snapshot
                    .get(i)
                    .ok_or_else(|| Error::Shape("snapshot too short".into()))?;
                if src.len() != p.len() {
                    return Err(Error::Shape("snapshot length mismatch".into()));
                }
                p.copy_from_slice(src);
                i += 1;
            }
            for b in layer.buffer_vecs() {
                let src = snapshot
                    .get(i)
                    .ok_or_else(|| Error::Shape("snapshot too short".into()))?;
                b.copy_from_slice(src);
                i += 1;
            }
        }
        Ok(())
    }

    pub fn describe(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => LayerSpec::Conv2d {
                    out_channels: c.out_channels,
                    c_in: c.c_in,
                    kh: c.kh,
                    kw: c.kw,
                    stride: c.stride,
                },
                Layer::HoConv(hc) => LayerSpec::HoConv {
                    out_channels: hc.out_channels,
                    max_order: hc.max_order,
                    kh: hc.kh(),
                    kw: hc.kw(),
                    c_in: hc.c_in(),
                    stride: hc.stride,
                },
                Layer::BatchNorm2d(bn) => LayerSpec::BatchNorm2d {
                    channels: bn.channels,
                },
                Layer::Activation(a) => LayerSpec::Activation { act: *a },
                Layer::MaxPool2d(mp) => LayerSpec::MaxPool2d {
                    k: mp.k,
                    stride: mp.stride,
                    pad_br: mp.pad_br,
                },
                Layer::Flatten => LayerSpec::Flatten,
                Layer::Linear(lin) => LayerSpec::Linear {
                    in_features: lin.in_features,
                    out_features: lin.out_features,
                },
                Layer::Dropout(d) => LayerSpec::Dropout { p: d.p },
            })
            .collect()
    }

    /// Rebuild a model skeleton from its description; parameters are
    /// zero-initialized and expected to be overwritten by checkpoint data.
    pub fn from_specs(specs: &[LayerSpec]) -> Result<Model> {
        let mut rng = RngState::seeded(0);
        let layers = specs
            .iter()
            .map(|s| -> Result<Layer> {
                Ok(match s {
                    LayerSpec::Conv2d {
                        out_channels,
                        c_in,
                        kh,
                        kw,
                        stride,
                    } => {
                        let mut c = Conv2d::new(*out_channels, *c_in, *kh, *kw, *stride, &mut rng);
                        c.weights.iter_mut().for_each(|w| *w = 0.0);
                        c.bias.iter_mut().for_each(|b| *b = 0.0);
                        Layer::Conv2d(c)
                    }
                    LayerSpec::HoConv {
                        out_channels,
                        max_order,
                        kh,
                        kw,
                        c_in,
                        stride,
                    } => {
                        let mut hc = HoConvLayer::new(
                            *out_channels,
                            *max_order,
                            *kh,
                            *kw,
                            *c_in,
                            *stride,
                            &mut rng,
                        )?;
                        for per in &mut hc.kernels {
                            for k in per {
                                k.weights.iter_mut().for_each(|w| *w = 0.0);
                            }
                        }
                        hc.bias.iter_mut().for_each(|b| *b = 0.0);
                        Layer::HoConv(hc)
                    }
                    LayerSpec::BatchNorm2d { channels } => {
                        Layer::BatchNorm2d(BatchNorm2d::new(*channels))
                    }
                    LayerSpec::Activation { act } => Layer::Activation(*act),
                    LayerSpec::MaxPool2d { k, stride, pad_br } => Layer::MaxPool2d(MaxPool2d {
                        k: *k,
                        stride: *stride,
                        pad_br: *pad_br,
                    }),
                    LayerSpec::Flatten => Layer::Flatten,
                    LayerSpec::Linear {
                        in_features,
                        out_features,
                    } => {
                        let mut lin = Linear::new(*in_features, *out_features, &mut rng);
                        lin.weights.iter_mut().for_each(|w| *w = 0.0);
                        lin.bias.iter_mut().for_each(|b| *b = 0.0);
                        Layer::Linear(lin)
                    }
                    LayerSpec::Dropout { p } => Layer::Dropout(Dropout::new(*p)?),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Model { layers })
    }
}

pub const TEXTURE_IMAGE_SIDE: usize = 32;
pub const TEXTURE_CLASS_COUNT: usize = 10;

/// Baseline texture classifier: Conv(10, 2x2) and Conv(2, 8x2) blocks, each
/// BatchNorm + ReLU + MaxPool, then a fully connected readout. The 2x2
/// stride-2 pool after block one and the 4x4 stride-4 pool after block two
/// squeeze the map to 2 x 2 x 3 = 12 features, the readout width whose
/// parameter count lines up with the reference architecture.
pub fn build_texture_cnn(rng: &mut RngState) -> Model {
    build_texture_cnn_with_activation(ActKind::Relu, rng)
}

pub fn build_texture_cnn_with_activation(act: ActKind, rng: &mut RngState) -> Model {
    let layers = vec![
        Layer::Conv2d(Conv2d::new(10, 1, 2, 2, 1, rng)),
        Layer::BatchNorm2d(BatchNorm2d::new(10)),
        Layer::Activation(act),
        Layer::MaxPool2d(MaxPool2d {
            k: 2,
            stride: 2,
            pad_br: 0,
        }),
        Layer::Conv2d(Conv2d::new(2, 10, 8, 2, 1, rng)),
        Layer::BatchNorm2d(BatchNorm2d::new(2)),
        Layer::Activation(act),
        Layer::MaxPool2d(MaxPool2d {
            k: 4,
            stride: 4,
            pad_br: 0,
        }),
        Layer::Flatten,
        Layer::Linear(Linear::new(2 * 2 * 3, TEXTURE_CLASS_COUNT, rng)),
    ];
    Model { layers }
}

/// Higher-order texture classifier: the first block swaps the ten standard
/// kernels for two 2x2 kernels carrying orders 1..=max_order; the rest
/// mirrors the baseline.
pub fn build_texture_hocnn(max_order: usize, rng: &mut RngState) -> Result<Model> {
    build_texture_hocnn_with_activation(max_order, ActKind::Relu, rng)
}

pub fn build_texture_hocnn_with_activation(
    max_order: usize,
    act: ActKind,
    rng: &mut RngState,
) -> Result<Model> {
    if !(1..=4).contains(&max_order) {
        return Err(Error::Param(format!(
            "hocnn expansion order {max_order} outside 1..=4"
        )));
    }
    let layers = vec![
        Layer::HoConv(HoConvLayer::new(2, max_order, 2, 2, 1, 1, rng)?),
        Layer::BatchNorm2d(BatchNorm2d::new(2)),
        Layer::Activation(act),
        Layer::MaxPool2d(MaxPool2d {
            k: 2,
            stride: 2,
            pad_br: 0,
        }),
        Layer::Conv2d(Conv2d::new(2, 2, 8, 2, 1, rng)),
        Layer::BatchNorm2d(BatchNorm2d::new(2)),
        Layer::Activation(act),
        Layer::MaxPool2d(MaxPool2d {
            k: 4,
            stride: 4,
            pad_br: 0,
        }),
        Layer::Flatten,
        Layer::Linear(Linear::new(2 * 2 * 3, TEXTURE_CLASS_COUNT, rng)),
    ];
    Ok(Model { layers })
}

pub fn build_texture_model(kind: ModelKind, rng: &mut RngState) -> Result<Model> {
    build_texture_model_with_activation(kind, ActKind::Relu, rng)
}

pub fn build_texture_model_with_activation(
    kind: ModelKind,
    act: ActKind,
    rng: &mut RngState,
) -> Result<Model> {
    match kind {
        ModelKind::Cnn => Ok(build_texture_cnn_with_activation(act, rng)),
        ModelKind::Hocnn2 => build_texture_hocnn_with_activation(2, act, rng),
        ModelKind::Hocnn3 => build_texture_hocnn_with_activation(3, act, rng),
        ModelKind::Hocnn4 => build_texture_hocnn_with_activation(4, act, rng),
    }
}

/// Index of the layer ending each block (activations are tapped after these).
/// Both texture architectures share the structure: block1 pool at 3,
/// block2 pool at 7, readout at 9.
pub fn texture_block_taps() -> Vec<(String, usize)> {
    vec![
        ("block1".to_string(), 3),
        ("block2".to_string(), 7),
        ("fc".to_string(), 9),
    ]
}

/// Layer count of the first block up to and including the nonlinearity.
/// The across-initialization PCA taps here, where the map is still 31x31
/// (10x31x31 = 9610 units for the baseline, 2x31x31 = 1922 for the
/// higher-order nets).
pub const FIRST_BLOCK_PREPOOL_LEN: usize = 3;
