//! Standard network layers with explicit forward caches and hand-derived
//! backward passes. Everything runs in f64 with fixed reduction order so the
//! same seed always reproduces the same bits.

use crate::error::{Error, Result};
use crate::hoconv::HoConvLayer;
use crate::rng::RngState;
use crate::tensor::{patch_extract, patch_scatter_add, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActKind {
    Relu,
    LeakyRelu,
    Gelu,
    Sigmoid,
    Mish,
}

impl ActKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "relu" => Ok(ActKind::Relu),
            "leaky_relu" => Ok(ActKind::LeakyRelu),
            "gelu" => Ok(ActKind::Gelu),
            "sigmoid" => Ok(ActKind::Sigmoid),
            "mish" => Ok(ActKind::Mish),
            other => Err(Error::Param(format!("unknown nonlinearity '{other}'"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActKind::Relu => "relu",
            ActKind::LeakyRelu => "leaky_relu",
            ActKind::Gelu => "gelu",
            ActKind::Sigmoid => "sigmoid",
            ActKind::Mish => "mish",
        }
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            ActKind::Relu => x.max(0.0),
            ActKind::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    0.01 * x
                }
            }
            // tanh-form gelu; the derivative below differentiates exactly
            // this expression
            ActKind::Gelu => {
                let u = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            ActKind::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            ActKind::Mish => {
                let sp = softplus(x);
                x * sp.tanh()
            }
        }
    }

    fn derivative(&self, x: f64) -> f64 {
        match self {
            ActKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            ActKind::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.01
                }
            }
            ActKind::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                let u = c * (x + 0.044715 * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * c * (1.0 + 3.0 * 0.044715 * x * x)
            }
            ActKind::Sigmoid => {
                let s = 1.0 / (1.0 + (-x).exp());
                s * (1.0 - s)
            }
            ActKind::Mish => {
                let sp = softplus(x);
                let t = sp.tanh();
                let sig = 1.0 / (1.0 + (-x).exp());
                t + x * (1.0 - t * t) * sig
            }
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub out_channels: usize,
    pub c_in: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    /// weights[oc * n + k], k over (c_in, kh, kw) flattened channel-major
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv2d {
    pub fn new(
        out_channels: usize,
        c_in: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        rng: &mut RngState,
    ) -> Self {
        let n = c_in * kh * kw;
        let bound = 1.0 / (n as f64).sqrt();
        let weights = (0..out_channels * n)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        let bias = (0..out_channels).map(|_| rng.uniform_in(-bound, bound)).collect();
        Conv2d {
            out_channels,
            c_in,
            kh,
            kw,
            stride,
            weights,
            bias,
        }
    }

    fn support(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kh > h || self.kw > w {
            return Err(Error::Shape(format!(
                "input {h}x{w} smaller than kernel {}x{}",
                self.kh, self.kw
            )));
        }
        Ok(((h - self.kh) / self.stride + 1, (w - self.kw) / self.stride + 1))
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let [batch, c, h, w] = nchw(input)?;
        if c != self.c_in {
            return Err(Error::Shape(format!(
                "conv input channels {c} != {}",
                self.c_in
            )));
        }
        let (oh, ow) = self.out_spatial(h, w)?;
        let windows = oh * ow;
        let n = self.support();
        let mut out = vec![0.0; batch * self.out_channels * windows];
        for s in 0..batch {
            let image = Tensor::new(vec![c, h, w], sample(input, s).to_vec())?;
            let patches = patch_extract(&image, self.kh, self.kw, self.stride)?;
            for oc in 0..self.out_channels {
                let wrow = &self.weights[oc * n..(oc + 1) * n];
                let orow =
                    &mut out[(s * self.out_channels + oc) * windows..][..windows];
                for (wi, orow_v) in orow.iter_mut().enumerate() {
                    let x = &patches.data()[wi * n..(wi + 1) * n];
                    let mut dot = 0.0;
                    for (wv, xv) in wrow.iter().zip(x) {
                        dot += wv * xv;
                    }
                    *orow_v = self.bias[oc] + dot;
                }
            }
        }
        Tensor::new(vec![batch, self.out_channels, oh, ow], out)
    }

    fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Vec<f64>>)> {
        let [batch, c, h, w] = nchw(input)?;
        let (oh, ow) = self.out_spatial(h, w)?;
        let windows = oh * ow;
        let n = self.support();
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.bias.len()];
        let mut gi = if need_input_grad {
            Some(Vec::with_capacity(batch * c * h * w))
        } else {
            None
        };
        for s in 0..batch {
            let image = Tensor::new(vec![c, h, w], sample(input, s).to_vec())?;
            let patches = patch_extract(&image, self.kh, self.kw, self.stride)?;
            let mut gpatch = vec![0.0; windows * n];
            for oc in 0..self.out_channels {
                let wrow = &self.weights[oc * n..(oc + 1) * n];
                let grow = &grad_out.data()[(s * self.out_channels + oc) * windows..][..windows];
                for (wi, &g) in grow.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    gb[oc] += g;
                    let x = &patches.data()[wi * n..(wi + 1) * n];
                    let gwrow = &mut gw[oc * n..(oc + 1) * n];
                    for k in 0..n {
                        gwrow[k] += g * x[k];
                    }
                    if need_input_grad {
                        let gp = &mut gpatch[wi * n..(wi + 1) * n];
                        for k in 0..n {
                            gp[k] += g * wrow[k];
                        }
                    }
                }
            }
            if let Some(acc) = gi.as_mut() {
                let gp = Tensor::new(vec![windows, n], gpatch)?;
                let img_grad =
                    patch_scatter_add(&gp, c, h, w, self.kh, self.kw, self.stride)?;
                acc.extend(img_grad.into_data());
            }
        }
        let gi = match gi {
            Some(data) => Some(Tensor::new(vec![batch, c, h, w], data)?),
            None => None,
        };
        Ok((gi, vec![gw, gb]))
    }
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    fn forward(&mut self, input: &Tensor, mode: Mode) -> Result<(Tensor, Cache)> {
        let [batch, c, h, w] = nchw(input)?;
        if c != self.channels {
            return Err(Error::Shape(format!("batchnorm channels {c} != {}", self.channels)));
        }
        let plane = h * w;
        let ns = batch * plane;
        let mut out = vec![0.0; input.len()];
        match mode {
            Mode::Train => {
                let mut xhat = vec![0.0; input.len()];
                let mut inv_std = vec![0.0; c];
                for ch in 0..c {
                    let mut mean = 0.0;
                    for s in 0..batch {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            mean += input.data()[base + i];
                        }
                    }
                    mean /= ns as f64;
                    let mut var = 0.0;
                    for s in 0..batch {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            let d = input.data()[base + i] - mean;
                            var += d * d;
                        }
                    }
                    var /= ns as f64;
                    let istd = 1.0 / (var + self.eps).sqrt();
                    inv_std[ch] = istd;
                    for s in 0..batch {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            let xh = (input.data()[base + i] - mean) * istd;
                            xhat[base + i] = xh;
                            out[base + i] = self.gamma[ch] * xh + self.beta[ch];
                        }
                    }
                    // running stats track the unbiased variance
                    let unbiased = if ns > 1 {
                        var * ns as f64 / (ns - 1) as f64
                    } else {
                        var
                    };
                    self.running_mean[ch] =
                        (1.0 - self.momentum) * self.running_mean[ch] + self.momentum * mean;
                    self.running_var[ch] =
                        (1.0 - self.momentum) * self.running_var[ch] + self.momentum * unbiased;
                }
                let out = Tensor::new(vec![batch, c, h, w], out)?;
                Ok((
                    out,
                    Cache::BatchNorm {
                        xhat,
                        inv_std,
                        train: true,
                        shape: vec![batch, c, h, w],
                    },
                ))
            }
            Mode::Eval => {
                let mut inv_std = vec![0.0; c];
                for ch in 0..c {
                    let istd = 1.0 / (self.running_var[ch] + self.eps).sqrt();
                    inv_std[ch] = istd;
                    for s in 0..batch {
                        let base = (s * c + ch) * plane;
                        for i in 0..plane {
                            let xh = (input.data()[base + i] - self.running_mean[ch]) * istd;
                            out[base + i] = self.gamma[ch] * xh + self.beta[ch];
                        }
                    }
                }
                let out = Tensor::new(vec![batch, c, h, w], out)?;
                Ok((
                    out,
                    Cache::BatchNorm {
                        xhat: Vec::new(),
                        inv_std,
                        train: false,
                        shape: vec![batch, c, h, w],
                    },
                ))
            }
        }
    }

    fn backward(
        &self,
        cache: &Cache,
        grad_out: &Tensor,
    ) -> Result<(Option<Tensor>, Vec<Vec<f64>>)> {
        let Cache::BatchNorm {
            xhat,
            inv_std,
            train,
            shape,
        } = cache
        else {
            return Err(Error::Shape("batchnorm backward without cache".into()));
        };
        let (batch, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let plane = h * w;
        let ns = (batch * plane) as f64;
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        let mut gi = vec![0.0; grad_out.len()];
        for ch in 0..c {
            if *train {
                let mut sum_dy = 0.0;
                let mut sum_dy_xhat = 0.0;
                for s in 0..batch {
                    let base = (s * c + ch) * plane;
                    for i in 0..plane {
                        let dy = grad_out.data()[base + i];
                        sum_dy += dy;
                        sum_dy_xhat += dy * xhat[base + i];
                    }
                }
                ggamma[ch] = sum_dy_xhat;
                gbeta[ch] = sum_dy;
                let k = self.gamma[ch] * inv_std[ch];
                for s in 0..batch {
                    let base = (s * c + ch) * plane;
                    for i in 0..plane {
                        let dy = grad_out.data()[base + i];
                        gi[base + i] =
                            k * (dy - sum_dy / ns - xhat[base + i] * sum_dy_xhat / ns);
                    }
                }
            } else {
                // frozen statistics: plain affine map
                let k = self.gamma[ch] * inv_std[ch];
                for s in 0..batch {
                    let base = (s * c + ch) * plane;
                    for i in 0..plane {
                        let dy = grad_out.data()[base + i];
                        gbeta[ch] += dy;
                        gi[base + i] = k * dy;
                    }
                }
            }
        }
        Ok((
            Some(Tensor::new(shape.clone(), gi)?),
            vec![ggamma, gbeta],
        ))
    }
}

/// Max pooling with optional zero-or-negative-infinity padding on the bottom
/// and right edges only, which is how the texture models keep 31x31 maps
/// through a stride-1 pool.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub k: usize,
    pub stride: usize,
    pub pad_br: usize,
}

impl MaxPool2d {
    pub fn out_spatial(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + self.pad_br - self.k) / self.stride + 1,
            (w + self.pad_br - self.k) / self.stride + 1,
        )
    }

    fn forward(&self, input: &Tensor) -> Result<(Tensor, Cache)> {
        let [batch, c, h, w] = nchw(input)?;
        if self.k > h + self.pad_br || self.k > w + self.pad_br {
            return Err(Error::Shape(format!(
                "pool kernel {} larger than padded input {}x{}",
                self.k,
                h + self.pad_br,
                w + self.pad_br
            )));
        }
        let (oh, ow) = self.out_spatial(h, w);
        let mut out = vec![0.0; batch * c * oh * ow];
        let mut argmax = vec![0usize; out.len()];
        for s in 0..batch {
            for ch in 0..c {
                let base = (s * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = usize::MAX;
                        for dy in 0..self.k {
                            let y = oy * self.stride + dy;
                            if y >= h {
                                continue; // bottom padding never wins
                            }
                            for dx in 0..self.k {
                                let x = ox * self.stride + dx;
                                if x >= w {
                                    continue;
                                }
                                let v = input.data()[base + y * w + x];
                                if v > best {
                                    best = v;
                                    best_idx = base + y * w + x;
                                }
                            }
                        }
                        let o = ((s * c + ch) * oh + oy) * ow + ox;
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
        Ok((
            Tensor::new(vec![batch, c, oh, ow], out)?,
            Cache::MaxPool {
                argmax,
                in_shape: vec![batch, c, h, w],
            },
        ))
    }

    fn backward(&self, cache: &Cache, grad_out: &Tensor) -> Result<Option<Tensor>> {
        let Cache::MaxPool { argmax, in_shape } = cache else {
            return Err(Error::Shape("maxpool backward without cache".into()));
        };
        let mut gi = vec![0.0; in_shape.iter().product()];
        for (o, &idx) in argmax.iter().enumerate() {
            gi[idx] += grad_out.data()[o];
        }
        Ok(Some(Tensor::new(in_shape.clone(), gi)?))
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// weights[o * in + k]
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(in_features: usize, out_features: usize, rng: &mut RngState) -> Self {
        let bound = 1.0 / (in_features as f64).sqrt();
        let weights = (0..out_features * in_features)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        let bias = (0..out_features).map(|_| rng.uniform_in(-bound, bound)).collect();
        Linear {
            in_features,
            out_features,
            weights,
            bias,
        }
    }

    fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, d) = match input.shape() {
            [b, d] => (*b, *d),
            s => return Err(Error::Shape(format!("linear wants 2-D input, got {s:?}"))),
        };
        if d != self.in_features {
            return Err(Error::Shape(format!(
                "linear input dim {d} != {}",
                self.in_features
            )));
        }
        let mut out = vec![0.0; batch * self.out_features];
        for s in 0..batch {
            let x = &input.data()[s * d..(s + 1) * d];
            for o in 0..self.out_features {
                let wrow = &self.weights[o * d..(o + 1) * d];
                let mut dot = 0.0;
                for (wv, xv) in wrow.iter().zip(x) {
                    dot += wv * xv;
                }
                out[s * self.out_features + o] = self.bias[o] + dot;
            }
        }
        Tensor::new(vec![batch, self.out_features], out)
    }

    fn backward(
        &self,
        input: &Tensor,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Vec<f64>>)> {
        let (batch, d) = (input.shape()[0], input.shape()[1]);
        let mut gw = vec![0.0; self.weights.len()];
        let mut gb = vec![0.0; self.bias.len()];
        let mut gi = vec![0.0; input.len()];
        for s in 0..batch {
            let x = &input.data()[s * d..(s + 1) * d];
            let gy = &grad_out.data()[s * self.out_features..(s + 1) * self.out_features];
            for (o, &g) in gy.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let gwrow = &mut gw[o * d..(o + 1) * d];
                for k in 0..d {
                    gwrow[k] += g * x[k];
                }
                if need_input_grad {
                    let wrow = &self.weights[o * d..(o + 1) * d];
                    let gx = &mut gi[s * d..(s + 1) * d];
                    for k in 0..d {
                        gx[k] += g * wrow[k];
                    }
                }
            }
        }
        let gi = if need_input_grad {
            Some(Tensor::new(input.shape().to_vec(), gi)?)
        } else {
            None
        };
        Ok((gi, vec![gw, gb]))
    }
}

#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
}

impl Dropout {
    pub fn new(p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Param(format!("dropout p={p} outside [0,1)")));
        }
        Ok(Dropout { p })
    }
}

/// Per-layer state saved by forward for the matching backward call.
#[derive(Debug, Clone)]
pub enum Cache {
    Input(Tensor),
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
        shape: Vec<usize>,
    },
    MaxPool {
        argmax: Vec<usize>,
        in_shape: Vec<usize>,
    },
    Flatten {
        in_shape: Vec<usize>,
    },
    Dropout {
        mask: Vec<f64>,
    },
    None,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv2d(Conv2d),
    HoConv(HoConvLayer),
    BatchNorm2d(BatchNorm2d),
    Activation(ActKind),
    MaxPool2d(MaxPool2d),
    Flatten,
    Linear(Linear),
    Dropout(Dropout),
}

impl Layer {
    pub fn relu() -> Layer {
        Layer::Activation(ActKind::Relu)
    }

    pub fn forward(
        &mut self,
        input: &Tensor,
        mode: Mode,
        rng: &mut RngState,
    ) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Conv2d(c) => {
                let out = c.forward(input)?;
                Ok((out, Cache::Input(input.clone())))
            }
            Layer::HoConv(hc) => {
                let out = hc.forward(input)?;
                Ok((out, Cache::Input(input.clone())))
            }
            Layer::BatchNorm2d(bn) => bn.forward(input, mode),
            Layer::Activation(a) => {
                let data = input.data().iter().map(|&x| a.apply(x)).collect();
                let out = Tensor::new(input.shape().to_vec(), data)?;
                Ok((out, Cache::Input(input.clone())))
            }
            Layer::MaxPool2d(mp) => mp.forward(input),
            Layer::Flatten => {
                let shape = input.shape().to_vec();
                let batch = shape[0];
                let rest: usize = shape[1..].iter().product();
                let out = input.reshape(vec![batch, rest])?;
                Ok((out, Cache::Flatten { in_shape: shape }))
            }
            Layer::Linear(l) => {
                let out = l.forward(input)?;
                Ok((out, Cache::Input(input.clone())))
            }
            Layer::Dropout(d) => match mode {
                Mode::Eval => Ok((input.clone(), Cache::None)),
                Mode::Train => {
                    let keep = 1.0 - d.p;
                    let mask: Vec<f64> = (0..input.len())
                        .map(|_| {
                            if rng.uniform() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
                    let out = Tensor::new(input.shape().to_vec(), data)?;
                    Ok((out, Cache::Dropout { mask }))
                }
            },
        }
    }

    /// Returns gradient wrt input (unless suppressed) and gradients aligned
    /// with `param_vecs`.
    pub fn backward(
        &self,
        cache: &Cache,
        grad_out: &Tensor,
        need_input_grad: bool,
    ) -> Result<(Option<Tensor>, Vec<Vec<f64>>)> {
        match (self, cache) {
            (Layer::Conv2d(c), Cache::Input(x)) => c.backward(x, grad_out, need_input_grad),
            (Layer::HoConv(hc), Cache::Input(x)) => {
                let grads = hc.backward(x, grad_out)?;
                let mut flat = Vec::new();
                for per_order in &grads.weights {
                    for g in per_order {
                        flat.push(g.clone());
                    }
                }
                flat.push(grads.bias.clone());
                let gi = if need_input_grad { Some(grads.input) } else { None };
                Ok((gi, flat))
            }
            (Layer::BatchNorm2d(bn), cache @ Cache::BatchNorm { .. }) => {
                bn.backward(cache, grad_out)
            }
            (Layer::Activation(a), Cache::Input(x)) => {
                let data = x
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(&xv, &g)| g * a.derivative(xv))
                    .collect();
                Ok((Some(Tensor::new(x.shape().to_vec(), data)?), vec![]))
            }
            (Layer::MaxPool2d(mp), cache @ Cache::MaxPool { .. }) => {
                Ok((mp.backward(cache, grad_out)?, vec![]))
            }
            (Layer::Flatten, Cache::Flatten { in_shape }) => {
                Ok((Some(grad_out.reshape(in_shape.clone())?), vec![]))
            }
            (Layer::Linear(l), Cache::Input(x)) => l.backward(x, grad_out, need_input_grad),
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                let data = grad_out
                    .data()
                    .iter()
                    .zip(mask)
                    .map(|(&g, &m)| g * m)
                    .collect();
                Ok((
                    Some(Tensor::new(grad_out.shape().to_vec(), data)?),
                    vec![],
                ))
            }
            (Layer::Dropout(_), Cache::None) => Ok((Some(grad_out.clone()), vec![])),
            _ => Err(Error::Shape("backward cache does not match layer".into())),
        }
    }

    /// Learnable parameter vectors, in the fixed order used everywhere
    /// (optimizer state, gradients, checkpoints).
    pub fn param_vecs(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weights, &mut c.bias],
            Layer::HoConv(hc) => {
                let mut v: Vec<&mut Vec<f64>> = Vec::new();
                for per_order in &mut hc.kernels {
                    for k in per_order {
                        v.push(&mut k.weights);
                    }
                }
                v.push(&mut hc.bias);
                v
            }
            Layer::BatchNorm2d(bn) => vec![&mut bn.gamma, &mut bn.beta],
            Layer::Linear(l) => vec![&mut l.weights, &mut l.bias],
            _ => vec![],
        }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        match self {
            Layer::Conv2d(c) => vec![&c.weights, &c.bias],
            Layer::HoConv(hc) => {
                let mut v: Vec<&[f64]> = Vec::new();
                for per_order in &hc.kernels {
                    for k in per_order {
                        v.push(&k.weights);
                    }
                }
                v.push(&hc.bias);
                v
            }
            Layer::BatchNorm2d(bn) => vec![&bn.gamma, &bn.beta],
            Layer::Linear(l) => vec![&l.weights, &l.bias],
            _ => vec![],
        }
    }

    /// Non-learnable state that still belongs in checkpoints.
    pub fn buffer_vecs(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::BatchNorm2d(bn) => vec![&mut bn.running_mean, &mut bn.running_var],
            _ => vec![],
        }
    }

    pub fn buffer_slices(&self) -> Vec<&[f64]> {
        match self {
            Layer::BatchNorm2d(bn) => vec![&bn.running_mean, &bn.running_var],
            _ => vec![],
        }
    }
}

fn nchw(t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        s => Err(Error::Shape(format!("expected NCHW, got {s:?}"))),
    }
}

fn sample(t: &Tensor, s: usize) -> &[f64] {
    let per = t.len() / t.shape()[0];
    &t.data()[s * per..(s + 1) * per]
}
