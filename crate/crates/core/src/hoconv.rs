//! Higher-order convolution: each output adds polynomial terms over the
//! flattened input window, one learnable weight per non-decreasing index
//! tuple (permutation symmetry makes the other orderings redundant).
//!
//! Order-p monomial products are evaluated incrementally in lexicographic
//! order: every p-tuple extends its (p-1)-prefix by one multiply. Stored
//! weights multiply their monomial exactly once; the multiplicity of a tuple
//! (its number of distinct orderings) is absorbed into the learned weight.
//! `expand_to_full_tensor` defines the correspondence with dense symmetric
//! tensors and serves as the test oracle.

use crate::error::{Error, Result};
use crate::rng::RngState;
use crate::tensor::{patch_extract, patch_scatter_add, Tensor};
use rayon::prelude::*;

pub const MAX_ORDER: usize = 8;

/// Binomial coefficient with overflow detection.
pub fn binomial(n: u64, k: u64) -> Result<u64> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or_else(|| Error::Overflow(format!("binomial({n},{k})")))?;
        acc /= (i + 1) as u128;
    }
    u64::try_from(acc).map_err(|_| Error::Overflow(format!("binomial({n},{k})")))
}

/// Number of unique order-p weights over a support of size n: C(n+p-1, p),
/// the count of non-decreasing p-tuples.
pub fn unique_count(n: usize, p: usize) -> Result<u64> {
    check_np(n, p)?;
    binomial((n + p - 1) as u64, p as u64)
}

/// Count of all monomials of degree <= p including the constant:
/// sum_{q=0..p} C(n+q-1, q) = C(n+p, p).
pub fn cumulative_count(n: usize, p: usize) -> Result<u64> {
    check_np(n, p)?;
    binomial((n + p) as u64, p as u64)
}

fn check_np(n: usize, p: usize) -> Result<()> {
    if n == 0 {
        return Err(Error::Param("support size n must be >= 1".into()));
    }
    if p == 0 || p > MAX_ORDER {
        return Err(Error::Param(format!("order p={p} outside 1..={MAX_ORDER}")));
    }
    Ok(())
}

/// A symmetric index: a non-decreasing tuple over [0, n), plus the number of
/// distinct orderings it stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MonomialIndex {
    pub indices: Vec<u16>,
    pub multiplicity: u64,
}

fn tuple_multiplicity(tuple: &[u16]) -> u64 {
    // p! / prod(count_i!) with p <= MAX_ORDER, exact in u64.
    let p = tuple.len() as u64;
    let mut fact = 1u64;
    for i in 2..=p {
        fact *= i;
    }
    let mut denom = 1u64;
    let mut run = 1u64;
    for w in tuple.windows(2) {
        if w[0] == w[1] {
            run += 1;
            denom *= run;
        } else {
            run = 1;
        }
    }
    fact / denom
}

/// All non-decreasing p-tuples over [0, n) in lexicographic order.
pub fn enumerate_monomials(n: usize, p: usize) -> Result<Vec<MonomialIndex>> {
    check_np(n, p)?;
    let mut out = Vec::new();
    let mut tuple = vec![0u16; p];
    loop {
        out.push(MonomialIndex {
            indices: tuple.clone(),
            multiplicity: tuple_multiplicity(&tuple),
        });
        // advance to the next non-decreasing tuple
        let mut pos = p;
        loop {
            if pos == 0 {
                return Ok(out);
            }
            pos -= 1;
            if (tuple[pos] as usize) < n - 1 {
                let v = tuple[pos] + 1;
                for t in &mut tuple[pos..] {
                    *t = v;
                }
                break;
            }
        }
    }
}

/// Flat per-order enumeration with prefix links for incremental evaluation.
#[derive(Debug, Clone)]
pub struct MonomialTable {
    pub order: usize,
    pub count: usize,
    /// tuples, flattened with stride `order`
    pub tuples: Vec<u16>,
    /// index of the (order-1)-prefix in the previous table (unused at order 1)
    pub prefix: Vec<u32>,
    /// last element of each tuple
    pub last: Vec<u16>,
    pub multiplicity: Vec<u64>,
}

/// Tables for orders 1..=max_order over a fixed support size.
#[derive(Debug, Clone)]
pub struct MonomialTables {
    pub n: usize,
    pub orders: Vec<MonomialTable>,
}

impl MonomialTables {
    pub fn build(n: usize, max_order: usize) -> Result<Self> {
        check_np(n, max_order)?;
        let mut orders: Vec<MonomialTable> = Vec::with_capacity(max_order);
        for p in 1..=max_order {
            let monos = enumerate_monomials(n, p)?;
            let count = monos.len();
            let mut tuples = Vec::with_capacity(count * p);
            let mut prefix = Vec::with_capacity(count);
            let mut last = Vec::with_capacity(count);
            let mut multiplicity = Vec::with_capacity(count);
            // lexicographic order over equal-length tuples sorts by prefix
            // first, so prefix indices advance monotonically
            let mut cursor = 0u32;
            for m in &monos {
                tuples.extend_from_slice(&m.indices);
                last.push(*m.indices.last().unwrap());
                multiplicity.push(m.multiplicity);
                if p == 1 {
                    prefix.push(0);
                } else {
                    let pre = &m.indices[..p - 1];
                    let prev = &orders[p - 2];
                    while prev.tuple_at(cursor as usize) != pre {
                        cursor += 1;
                    }
                    prefix.push(cursor);
                }
            }
            orders.push(MonomialTable {
                order: p,
                count,
                tuples,
                prefix,
                last,
                multiplicity,
            });
            // reset not needed: next order restarts its own cursor
        }
        Ok(MonomialTables { n, orders })
    }

    /// Fills `prods[p-1][m]` with the monomial products of `x` for all orders.
    pub fn products(&self, x: &[f64], prods: &mut [Vec<f64>]) {
        debug_assert_eq!(x.len(), self.n);
        for (pi, table) in self.orders.iter().enumerate() {
            if pi == 0 {
                prods[0].clear();
                prods[0].extend_from_slice(x);
            } else {
                let (lower, upper) = prods.split_at_mut(pi);
                let prev = &lower[pi - 1];
                let cur = &mut upper[0];
                cur.clear();
                cur.extend(
                    table
                        .prefix
                        .iter()
                        .zip(&table.last)
                        .map(|(&pf, &l)| prev[pf as usize] * x[l as usize]),
                );
            }
        }
    }
}

impl MonomialTable {
    #[inline]
    fn tuple_at(&self, i: usize) -> &[u16] {
        &self.tuples[i * self.order..(i + 1) * self.order]
    }
}

/// Weights of one order for one output channel.
#[derive(Debug, Clone)]
pub struct HoKernel {
    pub order: usize,
    pub kh: usize,
    pub kw: usize,
    pub c_in: usize,
    pub weights: Vec<f64>,
    /// 1 at order 1, 1/sqrt(unique weight count) above; applied at
    /// evaluation time, tempering higher-order contributions.
    pub scale: f64,
}

impl HoKernel {
    pub fn support(&self) -> usize {
        self.kh * self.kw * self.c_in
    }

    pub fn order_scale(n: usize, p: usize) -> Result<f64> {
        Ok(if p == 1 {
            1.0
        } else {
            1.0 / (unique_count(n, p)? as f64).sqrt()
        })
    }

    pub fn zeroed(order: usize, kh: usize, kw: usize, c_in: usize) -> Result<Self> {
        let n = kh * kw * c_in;
        let count = unique_count(n, order)? as usize;
        Ok(HoKernel {
            order,
            kh,
            kw,
            c_in,
            weights: vec![0.0; count],
            scale: Self::order_scale(n, order)?,
        })
    }

    /// Uniform(-1/sqrt(n), 1/sqrt(n)) init for every order; the evaluation
    /// scale keeps higher orders from dominating at start.
    pub fn init(order: usize, kh: usize, kw: usize, c_in: usize, rng: &mut RngState) -> Result<Self> {
        let mut k = Self::zeroed(order, kh, kw, c_in)?;
        let bound = 1.0 / (k.support() as f64).sqrt();
        for w in &mut k.weights {
            *w = rng.uniform_in(-bound, bound);
        }
        Ok(k)
    }
}

/// Convolution layer with per-order symmetric kernels summed into one output
/// feature map per channel. Order 1 alone is arithmetically a standard
/// convolution.
#[derive(Debug, Clone)]
pub struct HoConvLayer {
    pub out_channels: usize,
    pub max_order: usize,
    /// kernels[channel][order-1]
    pub kernels: Vec<Vec<HoKernel>>,
    pub bias: Vec<f64>,
    pub stride: usize,
    tables: MonomialTables,
}

/// Per-order weight gradients plus bias and input gradients.
pub struct HoConvGrads {
    /// weight_grads[channel][order-1][weight index]
    pub weights: Vec<Vec<Vec<f64>>>,
    pub bias: Vec<f64>,
    pub input: Tensor,
}

impl HoConvLayer {
    pub fn new(
        out_channels: usize,
        max_order: usize,
        kh: usize,
        kw: usize,
        c_in: usize,
        stride: usize,
        rng: &mut RngState,
    ) -> Result<Self> {
        if !(1..=4).contains(&max_order) {
            return Err(Error::Param(format!("max order {max_order} outside 1..=4")));
        }
        let n = kh * kw * c_in;
        let tables = MonomialTables::build(n, max_order)?;
        let mut kernels = Vec::with_capacity(out_channels);
        for _ in 0..out_channels {
            let per_order: Result<Vec<HoKernel>> = (1..=max_order)
                .map(|p| HoKernel::init(p, kh, kw, c_in, rng))
                .collect();
            kernels.push(per_order?);
        }
        let bound = 1.0 / (n as f64).sqrt();
        let bias = (0..out_channels).map(|_| rng.uniform_in(-bound, bound)).collect();
        Ok(HoConvLayer {
            out_channels,
            max_order,
            kernels,
            bias,
            stride,
            tables,
        })
    }

    pub fn kh(&self) -> usize {
        self.kernels[0][0].kh
    }
    pub fn kw(&self) -> usize {
        self.kernels[0][0].kw
    }
    pub fn c_in(&self) -> usize {
        self.kernels[0][0].c_in
    }
    pub fn support(&self) -> usize {
        self.kernels[0][0].support()
    }
    pub fn tables(&self) -> &MonomialTables {
        &self.tables
    }

    pub fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kh() > h || self.kw() > w {
            return Err(Error::Shape(format!(
                "input {h}x{w} smaller than kernel {}x{}",
                self.kh(),
                self.kw()
            )));
        }
        Ok(((h - self.kh()) / self.stride + 1, (w - self.kw()) / self.stride + 1))
    }

    /// Forward pass on an NCHW batch.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let [batch, c, h, w] = nchw(input)?;
        if c != self.c_in() {
            return Err(Error::Shape(format!(
                "input channels {c} != layer c_in {}",
                self.c_in()
            )));
        }
        let (oh, ow) = self.out_spatial(h, w)?;
        let per_sample: Vec<Vec<f64>> = (0..batch)
            .into_par_iter()
            .map(|s| self.forward_sample(sample_view(input, s), c, h, w, oh, ow))
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(batch * self.out_channels * oh * ow);
        for sample in per_sample {
            data.extend(sample);
        }
        Tensor::new(vec![batch, self.out_channels, oh, ow], data)
    }

    fn forward_sample(
        &self,
        chw: &[f64],
        c: usize,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    ) -> Result<Vec<f64>> {
        let image = Tensor::new(vec![c, h, w], chw.to_vec())?;
        let patches = patch_extract(&image, self.kh(), self.kw(), self.stride)?;
        let windows = oh * ow;
        let n = self.support();
        let mut prods: Vec<Vec<f64>> = (0..self.max_order).map(|_| Vec::new()).collect();
        let mut out = vec![0.0; self.out_channels * windows];
        for wi in 0..windows {
            let x = &patches.data()[wi * n..(wi + 1) * n];
            self.tables.products(x, &mut prods);
            for oc in 0..self.out_channels {
                let mut acc = self.bias[oc];
                for (pi, kernel) in self.kernels[oc].iter().enumerate() {
                    let mut dot = 0.0;
                    for (wv, pv) in kernel.weights.iter().zip(&prods[pi]) {
                        dot += wv * pv;
                    }
                    acc += kernel.scale * dot;
                }
                out[oc * windows + wi] = acc;
            }
        }
        Ok(out)
    }

    /// Backward pass: gradients of a scalar loss wrt weights, bias, input.
    /// grad_out has the forward output shape; weight/bias grads sum over the
    /// batch, merged in sample order.
    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<HoConvGrads> {
        let [batch, c, h, w] = nchw(input)?;
        let (oh, ow) = self.out_spatial(h, w)?;
        if grad_out.shape() != [batch, self.out_channels, oh, ow] {
            return Err(Error::Shape(format!(
                "grad_out shape {:?}, expected {:?}",
                grad_out.shape(),
                [batch, self.out_channels, oh, ow]
            )));
        }
        let windows = oh * ow;
        let per_sample: Vec<(Vec<Vec<Vec<f64>>>, Vec<f64>, Vec<f64>)> = (0..batch)
            .into_par_iter()
            .map(|s| {
                let go = &grad_out.data()
                    [s * self.out_channels * windows..(s + 1) * self.out_channels * windows];
                self.backward_sample(sample_view(input, s), go, c, h, w, oh, ow)
            })
            .collect::<Result<_>>()?;
        let mut weights: Vec<Vec<Vec<f64>>> = self
            .kernels
            .iter()
            .map(|per| per.iter().map(|k| vec![0.0; k.weights.len()]).collect())
            .collect();
        let mut bias = vec![0.0; self.out_channels];
        let mut input_grad = Vec::with_capacity(batch * c * h * w);
        for (wg, bg, ig) in per_sample {
            for (oc, per_order) in wg.into_iter().enumerate() {
                for (pi, g) in per_order.into_iter().enumerate() {
                    for (acc, v) in weights[oc][pi].iter_mut().zip(g) {
                        *acc += v;
                    }
                }
            }
            for (acc, v) in bias.iter_mut().zip(bg) {
                *acc += v;
            }
            input_grad.extend(ig);
        }
        Ok(HoConvGrads {
            weights,
            bias,
            input: Tensor::new(vec![batch, c, h, w], input_grad)?,
        })
    }

    #[allow(clippy::type_complexity)]
    fn backward_sample(
        &self,
        chw: &[f64],
        grad_out: &[f64],
        c: usize,
        h: usize,
        w: usize,
        oh: usize,
        ow: usize,
    ) -> Result<(Vec<Vec<Vec<f64>>>, Vec<f64>, Vec<f64>)> {
        let image = Tensor::new(vec![c, h, w], chw.to_vec())?;
        let patches = patch_extract(&image, self.kh(), self.kw(), self.stride)?;
        let windows = oh * ow;
        let n = self.support();
        let mut prods: Vec<Vec<f64>> = (0..self.max_order).map(|_| Vec::new()).collect();
        let mut wgrads: Vec<Vec<Vec<f64>>> = self
            .kernels
            .iter()
            .map(|per| per.iter().map(|k| vec![0.0; k.weights.len()]).collect())
            .collect();
        let mut bgrads = vec![0.0; self.out_channels];
        let mut patch_grads = vec![0.0; windows * n];
        let mut pre = [0.0f64; MAX_ORDER + 1];
        let mut suf = [0.0f64; MAX_ORDER + 1];
        for wi in 0..windows {
            let x = &patches.data()[wi * n..(wi + 1) * n];
            self.tables.products(x, &mut prods);
            let xg = &mut patch_grads[wi * n..(wi + 1) * n];
            for oc in 0..self.out_channels {
                let g = grad_out[oc * windows + wi];
                if g == 0.0 {
                    continue;
                }
                bgrads[oc] += g;
                for (pi, kernel) in self.kernels[oc].iter().enumerate() {
                    let table = &self.tables.orders[pi];
                    let gs = g * kernel.scale;
                    let wg = &mut wgrads[oc][pi];
                    if pi == 0 {
                        // linear term: dw = g*s*x, dx += g*s*w
                        for j in 0..n {
                            wg[j] += gs * x[j];
                            xg[j] += gs * kernel.weights[j];
                        }
                        continue;
                    }
                    let p = table.order;
                    for m in 0..table.count {
                        wg[m] += gs * prods[pi][m];
                        let coeff = gs * kernel.weights[m];
                        if coeff == 0.0 {
                            continue;
                        }
                        let tuple = table.tuple_at(m);
                        // leave-one-out products via prefix/suffix scans
                        pre[0] = 1.0;
                        for (q, &t) in tuple.iter().enumerate() {
                            pre[q + 1] = pre[q] * x[t as usize];
                        }
                        suf[p] = 1.0;
                        for q in (0..p).rev() {
                            suf[q] = suf[q + 1] * x[tuple[q] as usize];
                        }
                        for (q, &t) in tuple.iter().enumerate() {
                            xg[t as usize] += coeff * pre[q] * suf[q + 1];
                        }
                    }
                }
            }
        }
        let pg = Tensor::new(vec![windows, n], patch_grads)?;
        let gi = patch_scatter_add(&pg, c, h, w, self.kh(), self.kw(), self.stride)?;
        Ok((wgrads, bgrads, gi.into_data()))
    }
}

fn nchw(t: &Tensor) -> Result<[usize; 4]> {
    match t.shape() {
        [n, c, h, w] => Ok([*n, *c, *h, *w]),
        s => Err(Error::Shape(format!("expected NCHW, got {s:?}"))),
    }
}

fn sample_view(t: &Tensor, s: usize) -> &[f64] {
    let per = t.len() / t.shape()[0];
    &t.data()[s * per..(s + 1) * per]
}

/// Dense order-p tensor T over n^p entries with
/// T[i1..ip] = w[sorted(i1..ip)] / multiplicity, so that the full contraction
/// sum_tuples T * prod(x) equals the symmetric evaluation sum_m w[m] * prod(x).
pub fn expand_to_full_tensor(kernel: &HoKernel) -> Result<Vec<f64>> {
    let n = kernel.support();
    let p = kernel.order;
    let size = (n as u128).checked_pow(p as u32).ok_or_else(|| {
        Error::Overflow(format!("full tensor n={n} p={p}"))
    })?;
    if size > 1_000_000 {
        return Err(Error::SizeLimit(format!("full tensor would have {size} entries")));
    }
    let size = size as usize;
    let monos = enumerate_monomials(n, p)?;
    // map sorted tuple -> (weight/multiplicity) via linear index of the tuple
    let mut by_tuple = std::collections::HashMap::with_capacity(monos.len());
    for (i, m) in monos.iter().enumerate() {
        by_tuple.insert(m.indices.clone(), kernel.weights[i] / m.multiplicity as f64);
    }
    let mut out = vec![0.0; size];
    let mut idx = vec![0u16; p];
    for (flat, slot) in out.iter_mut().enumerate() {
        let mut rem = flat;
        for q in (0..p).rev() {
            idx[q] = (rem % n) as u16;
            rem /= n;
        }
        let mut sorted = idx.clone();
        sorted.sort_unstable();
        *slot = by_tuple[&sorted];
    }
    Ok(out)
}

/// Contraction of a dense order-p tensor against x, used as the oracle side
/// of equivalence checks.
pub fn full_tensor_contract(full: &[f64], x: &[f64], p: usize) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for (flat, &t) in full.iter().enumerate() {
        if t == 0.0 {
            continue;
        }
        let mut rem = flat;
        let mut prod = 1.0;
        for _ in 0..p {
            prod *= x[rem % n];
            rem /= n;
        }
        acc += t * prod;
    }
    acc
}

/// Parameter counts per order (summed over output channels) plus bias.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct ParamCounts {
    pub per_order: Vec<usize>,
    pub bias: usize,
    pub total: usize,
}

pub fn param_count(layer: &HoConvLayer) -> ParamCounts {
    let per_order: Vec<usize> = (0..layer.max_order)
        .map(|pi| layer.kernels.iter().map(|per| per[pi].weights.len()).sum())
        .collect();
    let bias = layer.bias.len();
    let total = per_order.iter().sum::<usize>() + bias;
    ParamCounts {
        per_order,
        bias,
        total,
    }
}

/// Analytic FLOP model. Per output element and order p, each of the
/// C(n+p-1,p) monomials costs one product-extension multiply plus a
/// two-flop multiply-accumulate against its weight; orders above 1 add one
/// multiply for the evaluation scale. Bias adds count separately.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct FlopReport {
    pub positions: usize,
    pub per_order_per_position: Vec<u64>,
    pub per_order_total: Vec<u64>,
    /// order-p cost over order-1 cost, position-independent
    pub ratios: Vec<f64>,
    pub bias_total: u64,
    pub total: u64,
}

pub fn flop_count(layer: &HoConvLayer, h: usize, w: usize) -> Result<FlopReport> {
    let (oh, ow) = layer.out_spatial(h, w)?;
    let positions = oh * ow;
    let n = layer.support();
    let mut per_pos = Vec::with_capacity(layer.max_order);
    for p in 1..=layer.max_order {
        let monos = unique_count(n, p)?;
        let scale_mul = if p > 1 { 1 } else { 0 };
        per_pos.push(3 * monos + scale_mul);
    }
    let per_order_total: Vec<u64> = per_pos
        .iter()
        .map(|&c| c * positions as u64 * layer.out_channels as u64)
        .collect();
    let ratios: Vec<f64> = per_pos.iter().map(|&c| c as f64 / per_pos[0] as f64).collect();
    let bias_total = (positions * layer.out_channels) as u64;
    let total = per_order_total.iter().sum::<u64>() + bias_total;
    Ok(FlopReport {
        positions,
        per_order_per_position: per_pos,
        per_order_total,
        ratios,
        bias_total,
        total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer_with(
        out_channels: usize,
        max_order: usize,
        kh: usize,
        kw: usize,
        c_in: usize,
        seed: u64,
    ) -> HoConvLayer {
        let mut rng = RngState::seeded(seed);
        HoConvLayer::new(out_channels, max_order, kh, kw, c_in, 1, &mut rng).unwrap()
    }

    #[test]
    fn enumerate_counts_match_appendix_figures() {
        assert_eq!(enumerate_monomials(9, 2).unwrap().len(), 45);
        assert_eq!(enumerate_monomials(9, 3).unwrap().len(), 165);
    }

    #[test]
    fn enumerate_small_case_by_hand() {
        let m = enumerate_monomials(2, 2).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].indices, vec![0, 0]);
        assert_eq!(m[0].multiplicity, 1);
        assert_eq!(m[1].indices, vec![0, 1]);
        assert_eq!(m[1].multiplicity, 2);
        assert_eq!(m[2].indices, vec![1, 1]);
        assert_eq!(m[2].multiplicity, 1);
    }

    #[test]
    fn counts_formulae() {
        assert_eq!(unique_count(4, 4).unwrap(), 35);
        assert_eq!(cumulative_count(9, 3).unwrap(), 220);
        // cumulative equals the sum over orders plus the constant term
        let total: u64 = 1 + (1..=3).map(|p| unique_count(9, p).unwrap()).sum::<u64>();
        assert_eq!(total, 220);
        for n in 1..10 {
            assert_eq!(unique_count(n, 1).unwrap(), n as u64);
        }
        assert!(binomial(200, 100).is_err()); // u64 overflow detected
    }

    #[test]
    fn enumeration_is_lexicographic_with_multinomial_multiplicities() {
        for n in [2usize, 3, 5, 9] {
            for p in 1..=4usize {
                let m = enumerate_monomials(n, p).unwrap();
                assert_eq!(m.len() as u64, unique_count(n, p).unwrap());
                for pair in m.windows(2) {
                    assert!(pair[0].indices < pair[1].indices);
                }
                let perm_total: u64 = m.iter().map(|mi| mi.multiplicity).sum();
                assert_eq!(perm_total, (n as u64).pow(p as u32));
            }
        }
    }

    #[test]
    fn forward_delta_filter_selects_pixel() {
        let mut layer = layer_with(1, 1, 2, 2, 1, 1);
        layer.bias[0] = 0.0;
        layer.kernels[0][0].weights = vec![1.0, 0.0, 0.0, 0.0];
        let img = Tensor::new(
            vec![1, 1, 3, 3],
            vec![0., 1., 2., 3., 4., 5., 6., 7., 8.],
        )
        .unwrap();
        let out = layer.forward(&img).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[0., 1., 3., 4.]);
    }

    #[test]
    fn forward_quadratic_hand_case() {
        // window (1,2), order-2 weights all ones, s=1/sqrt(3):
        // (1 + 2 + 4)/sqrt(3)
        let mut layer = layer_with(1, 2, 1, 2, 1, 2);
        layer.bias[0] = 0.0;
        layer.kernels[0][0].weights = vec![0.0, 0.0];
        layer.kernels[0][1].weights = vec![1.0, 1.0, 1.0];
        assert!((layer.kernels[0][1].scale - 1.0 / 3f64.sqrt()).abs() < 1e-15);
        let img = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let out = layer.forward(&img).unwrap();
        assert!((out.data()[0] - 7.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((out.data()[0] - 4.0414518843273806).abs() < 1e-12);
    }

    #[test]
    fn backward_quadratic_hand_case() {
        // y = x0^2 + x0 x1 + x1^2 at (1,2): dy/dx0 = 2+2 = 4, dy/dx1 = 1+4 = 5
        let mut layer = layer_with(1, 2, 1, 2, 1, 3);
        layer.bias[0] = 0.0;
        layer.kernels[0][0].weights = vec![0.0, 0.0];
        layer.kernels[0][1].weights = vec![1.0, 1.0, 1.0];
        layer.kernels[0][1].scale = 1.0; // s=1 for the hand case
        let img = Tensor::new(vec![1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let go = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let grads = layer.backward(&img, &go).unwrap();
        assert!((grads.input.data()[0] - 4.0).abs() < 1e-12);
        assert!((grads.input.data()[1] - 5.0).abs() < 1e-12);
        // dw = products (s=1): [x0^2, x0x1, x1^2] = [1, 2, 4]
        assert_eq!(grads.weights[0][1], vec![1.0, 2.0, 4.0]);
        assert_eq!(grads.bias, vec![1.0]);
    }

    #[test]
    fn full_tensor_hand_case() {
        let mut k = HoKernel::zeroed(2, 1, 2, 1).unwrap();
        k.weights = vec![1.0, 1.0, 1.0];
        let full = expand_to_full_tensor(&k).unwrap();
        assert_eq!(full, vec![1.0, 0.5, 0.5, 1.0]);
    }

    #[test]
    fn full_tensor_order1_is_identity() {
        let mut k = HoKernel::zeroed(1, 2, 2, 1).unwrap();
        k.weights = vec![1.0, -2.0, 3.0, -4.0];
        assert_eq!(expand_to_full_tensor(&k).unwrap(), k.weights);
    }

    #[test]
    fn full_tensor_size_limit() {
        let k = HoKernel::zeroed(4, 4, 4, 4).unwrap(); // 64^4 > 1e6
        assert!(matches!(expand_to_full_tensor(&k), Err(Error::SizeLimit(_))));
    }

    #[test]
    fn symmetric_eval_matches_full_tensor_oracle() {
        let mut rng = RngState::seeded(99);
        for &(n, p) in &[(2usize, 2usize), (3, 3), (4, 4), (9, 2), (16, 2), (6, 3)] {
            let mut k = HoKernel::zeroed(p, 1, n, 1).unwrap();
            for w in &mut k.weights {
                *w = rng.uniform_in(-1.0, 1.0);
            }
            let full = expand_to_full_tensor(&k).unwrap();
            for _ in 0..20 {
                let x: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
                let tables = MonomialTables::build(n, p).unwrap();
                let mut prods: Vec<Vec<f64>> = (0..p).map(|_| Vec::new()).collect();
                tables.products(&x, &mut prods);
                let sym: f64 = k
                    .weights
                    .iter()
                    .zip(&prods[p - 1])
                    .map(|(w, pr)| w * pr)
                    .sum();
                let dense = full_tensor_contract(&full, &x, p);
                assert!(
                    (sym - dense).abs() <= 1e-10 * (1.0 + dense.abs()),
                    "n={n} p={p}: {sym} vs {dense}"
                );
            }
        }
    }

    #[test]
    fn zero_higher_orders_reduce_to_linear() {
        let mut layer = layer_with(2, 3, 2, 2, 1, 5);
        for per in &mut layer.kernels {
            for k in per.iter_mut().skip(1) {
                k.weights.iter_mut().for_each(|w| *w = 0.0);
            }
        }
        let mut linear = layer_with(2, 1, 2, 2, 1, 5);
        for oc in 0..2 {
            linear.kernels[oc][0].weights = layer.kernels[oc][0].weights.clone();
        }
        linear.bias = layer.bias.clone();
        let mut rng = RngState::seeded(6);
        let img = Tensor::new(
            vec![2, 1, 4, 4],
            (0..32).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let a = layer.forward(&img).unwrap();
        let b = linear.forward(&img).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-15);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = RngState::seeded(17);
        let layer = layer_with(2, 3, 2, 2, 1, 18);
        let img = Tensor::new(
            vec![1, 1, 3, 3],
            (0..9).map(|_| rng.uniform_in(0.2, 1.0)).collect(),
        )
        .unwrap();
        // scalar objective: weighted sum of outputs
        let (oh, ow) = layer.out_spatial(3, 3).unwrap();
        let gw: Vec<f64> = (0..2 * oh * ow).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let go = Tensor::new(vec![1, 2, oh, ow], gw.clone()).unwrap();
        let objective = |l: &HoConvLayer, x: &Tensor| -> f64 {
            l.forward(x)
                .unwrap()
                .data()
                .iter()
                .zip(&gw)
                .map(|(o, g)| o * g)
                .sum()
        };
        let grads = layer.backward(&img, &go).unwrap();
        let h = 1e-5;
        // input gradient
        for i in 0..9 {
            let mut xp = img.clone();
            xp.data_mut()[i] += h;
            let mut xm = img.clone();
            xm.data_mut()[i] -= h;
            let fd = (objective(&layer, &xp) - objective(&layer, &xm)) / (2.0 * h);
            let an = grads.input.data()[i];
            let denom = an.abs().max(fd.abs()).max(1e-4);
            assert!(
                ((an - fd) / denom).abs() <= 1e-6,
                "input grad {i}: {an} vs {fd}"
            );
        }
        // weight gradients, every order
        for oc in 0..2 {
            for pi in 0..3 {
                for m in 0..layer.kernels[oc][pi].weights.len() {
                    let mut lp = layer.clone();
                    lp.kernels[oc][pi].weights[m] += h;
                    let mut lm = layer.clone();
                    lm.kernels[oc][pi].weights[m] -= h;
                    let fd = (objective(&lp, &img) - objective(&lm, &img)) / (2.0 * h);
                    let an = grads.weights[oc][pi][m];
                    let denom = an.abs().max(fd.abs()).max(1e-4);
                    assert!(
                        ((an - fd) / denom).abs() <= 1e-6,
                        "w grad oc={oc} p={pi} m={m}: {an} vs {fd}"
                    );
                }
            }
        }
    }

    #[test]
    fn param_count_examples() {
        let layer = layer_with(2, 2, 2, 2, 1, 7);
        let pc = param_count(&layer);
        assert_eq!(pc.per_order, vec![8, 20]);
        assert_eq!(pc.bias, 2);
        assert_eq!(pc.total, 30);

        let layer = layer_with(1, 3, 3, 3, 1, 8);
        let pc = param_count(&layer);
        assert_eq!(pc.per_order, vec![9, 45, 165]);
        assert_eq!(pc.total, 220);
    }

    #[test]
    fn flop_ratios_match_reported_costs() {
        let layer = layer_with(1, 3, 3, 3, 1, 9);
        let report = flop_count(&layer, 32, 32).unwrap();
        assert_eq!(report.ratios[0], 1.0);
        assert!(
            (report.ratios[1] - 5.04).abs() / 5.04 < 0.10,
            "order-2 ratio {}",
            report.ratios[1]
        );
        assert!(
            (report.ratios[2] - 18.62).abs() / 18.62 < 0.10,
            "order-3 ratio {}",
            report.ratios[2]
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn enumeration_count_formula(n in 1usize..=12, p in 1usize..=4) {
            let m = enumerate_monomials(n, p).unwrap();
            prop_assert_eq!(m.len() as u64, unique_count(n, p).unwrap());
        }

        #[test]
        fn evaluation_order_independence(seed in 0u64..1000) {
            // shuffling the window and permuting each tuple accordingly
            // leaves the evaluation unchanged (products commute)
            let mut rng = RngState::seeded(seed);
            let n = 5usize;
            let p = 3usize;
            let x: Vec<f64> = (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let monos = enumerate_monomials(n, p).unwrap();
            let w: Vec<f64> = (0..monos.len()).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
            let direct: f64 = monos.iter().zip(&w).map(|(m, wv)| {
                wv * m.indices.iter().map(|&i| x[i as usize]).product::<f64>()
            }).sum();
            let reversed: f64 = monos.iter().zip(&w).map(|(m, wv)| {
                wv * m.indices.iter().rev().map(|&i| x[i as usize]).product::<f64>()
            }).sum();
            prop_assert!((direct - reversed).abs() <= 1e-12 * (1.0 + direct.abs()));
        }
    }
}
