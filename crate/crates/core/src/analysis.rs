//! Representation analyses: explained-variance PCA over random
//! initializations, representational dissimilarity matrices, their
//! comparisons, and pairwise-distance summaries.

use crate::error::{Error, Result};
use crate::layers::{ActKind, Mode};
use crate::model::{build_texture_model_with_activation, Model, ModelKind};
use crate::rng::RngState;
use crate::tensor::Tensor;
use crate::textures::{generate_texture, GLIDER_CLASSES};
use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;

/// Observations-by-units activation matrix with provenance tags.
#[derive(Debug, Clone)]
pub struct ActivationMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
    pub model_tag: String,
    pub layer_tag: String,
}

impl ActivationMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::Shape(format!(
                "activation matrix {rows}x{cols} vs {} values",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Param("activation matrix contains NaN/Inf".into()));
        }
        Ok(ActivationMatrix {
            rows,
            cols,
            data,
            model_tag: String::new(),
            layer_tag: String::new(),
        })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }
}

/// Descending explained-variance fractions. `zero_variance` marks the
/// degenerate all-identical-rows case where the fractions are all zero.
#[derive(Debug, Clone)]
pub struct PcaResult {
    pub fractions: Vec<f64>,
    pub zero_variance: bool,
}

/// Explained-variance fractions from the squared singular values of the
/// column-centered matrix. The spectrum comes from the smaller of the two
/// Gram forms (rows x rows or cols x cols), which carries exactly the
/// nonzero singular values; a hand-rolled Jacobi eigensolver cross-checks
/// this route in the tests.
pub fn pca_explained_variance(m: &ActivationMatrix) -> Result<PcaResult> {
    if m.rows < 2 {
        return Err(Error::Param("pca needs at least 2 observations".into()));
    }
    let (r, c) = (m.rows, m.cols);
    // center columns
    let mut centered = m.data.clone();
    for j in 0..c {
        let mut mean = 0.0;
        for i in 0..r {
            mean += centered[i * c + j];
        }
        mean /= r as f64;
        for i in 0..r {
            centered[i * c + j] -= mean;
        }
    }
    let k = r.min(c);
    let gram: DMatrix<f64> = if r <= c {
        // rows x rows Gram
        let mut g = vec![0.0; r * r];
        let rows: Vec<&[f64]> = (0..r).map(|i| &centered[i * c..(i + 1) * c]).collect();
        let entries: Vec<(usize, Vec<f64>)> = (0..r)
            .into_par_iter()
            .map(|i| {
                let mut rowvals = vec![0.0; r - i];
                for j in i..r {
                    let mut dot = 0.0;
                    for (a, b) in rows[i].iter().zip(rows[j]) {
                        dot += a * b;
                    }
                    rowvals[j - i] = dot;
                }
                (i, rowvals)
            })
            .collect();
        for (i, rowvals) in entries {
            for (off, v) in rowvals.into_iter().enumerate() {
                let j = i + off;
                g[i * r + j] = v;
                g[j * r + i] = v;
            }
        }
        DMatrix::from_row_slice(r, r, &g)
    } else {
        // cols x cols scatter
        let mut g = vec![0.0; c * c];
        for i in 0..r {
            let row = &centered[i * c..(i + 1) * c];
            for a in 0..c {
                if row[a] == 0.0 {
                    continue;
                }
                for b in a..c {
                    g[a * c + b] += row[a] * row[b];
                }
            }
        }
        for a in 0..c {
            for b in 0..a {
                g[a * c + b] = g[b * c + a];
            }
        }
        DMatrix::from_row_slice(c, c, &g)
    };
    let eig = SymmetricEigen::new(gram);
    let mut lambdas: Vec<f64> = eig.eigenvalues.iter().map(|&l| l.max(0.0)).collect();
    lambdas.sort_by(|a, b| b.partial_cmp(a).unwrap());
    lambdas.truncate(k);
    let total: f64 = lambdas.iter().sum();
    let scale: f64 = centered.iter().map(|v| v * v).sum();
    if total <= 1e-12 * scale.max(1.0) || scale == 0.0 {
        return Ok(PcaResult {
            fractions: vec![0.0; k],
            zero_variance: true,
        });
    }
    let fractions = lambdas.iter().map(|&l| l / total).collect();
    Ok(PcaResult {
        fractions,
        zero_variance: false,
    })
}

/// Smallest k whose cumulative fraction reaches `t`. The zero-variance
/// degenerate case reports 1: with no variance at all, a single component
/// trivially accounts for everything.
pub fn pc_count_for_threshold(fractions: &[f64], t: f64) -> usize {
    let total: f64 = fractions.iter().sum();
    if total == 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, &f) in fractions.iter().enumerate() {
        acc += f;
        if acc >= t - 1e-12 {
            return i + 1;
        }
    }
    fractions.len()
}

/// The fixed 32x32 analysis input: a 2x5 grid of tiles, one texture class
/// per tile at full correlation, deterministic in the seed.
pub fn make_composite_image(seed: u64) -> Result<Tensor> {
    let side = 32;
    let col_widths = [7usize, 6, 6, 6, 7];
    let tile_h = 16;
    let mut data = vec![0.0; side * side];
    for (ci, class) in GLIDER_CLASSES.iter().enumerate() {
        let grid_r = ci / 5;
        let grid_c = ci % 5;
        let w = col_widths[grid_c];
        let col0: usize = col_widths[..grid_c].iter().sum();
        let row0 = grid_r * tile_h;
        let mut rng = RngState::substream(seed, &[ci as u64]);
        let tile = generate_texture(*class, tile_h, w, 1.0, &mut rng)?;
        for r in 0..tile_h {
            for c in 0..w {
                data[(row0 + r) * side + (col0 + c)] = tile.at2(r, c);
            }
        }
    }
    Tensor::new(vec![1, 1, side, side], data)
}

#[derive(Debug, Clone)]
pub struct TiedWeightResult {
    pub model: ModelKind,
    pub activation: ActKind,
    pub n_inits: usize,
    /// flattened first-block activation dimensionality
    pub dim: usize,
    pub k95: usize,
    /// k95 / dim
    pub pc_fraction: f64,
    pub fractions: Vec<f64>,
    pub zero_variance: bool,
    /// true when n_inits < dim, i.e. the spectrum is sampling-limited
    pub underdetermined: bool,
}

/// Re-initializes the architecture `n_inits` times, runs the first block
/// through its nonlinearity (train-mode batch statistics, pre-pool, so the
/// map is still 31x31) on one fixed image, and measures how many principal
/// components of the stacked activations reach 95% explained variance.
pub fn tied_weight_experiment(
    kind: ModelKind,
    activation: ActKind,
    n_inits: usize,
    fixed_input: &Tensor,
    base_seed: u64,
) -> Result<TiedWeightResult> {
    if n_inits < 2 {
        return Err(Error::Param("need at least 2 initializations".into()));
    }
    let rows: Vec<Vec<f64>> = (0..n_inits)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let mut rng = RngState::substream(base_seed, &[i as u64]);
            let model = build_texture_model_with_activation(kind, activation, &mut rng)?;
            let mut block = Model {
                layers: model.layers[..crate::model::FIRST_BLOCK_PREPOOL_LEN].to_vec(),
            };
            let out = block.forward(fixed_input, Mode::Train, &mut rng)?;
            Ok(out.into_data())
        })
        .collect::<Result<_>>()?;
    let dim = rows[0].len();
    let mut data = Vec::with_capacity(n_inits * dim);
    for r in &rows {
        data.extend_from_slice(r);
    }
    let mut acts = ActivationMatrix::new(n_inits, dim, data)?;
    acts.model_tag = kind.name().to_string();
    acts.layer_tag = "block1".to_string();
    let pca = pca_explained_variance(&acts)?;
    let k95 = pc_count_for_threshold(&pca.fractions, 0.95);
    Ok(TiedWeightResult {
        model: kind,
        activation,
        n_inits,
        dim,
        k95,
        pc_fraction: k95 as f64 / dim as f64,
        fractions: pca.fractions,
        zero_variance: pca.zero_variance,
        underdetermined: n_inits < dim,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RdmMetric {
    /// 1 - Pearson, in [0, 2]
    Corr,
    /// (1 - Pearson)/2, in [0, 1]; the scale Hellinger comparisons expect
    Corr01,
}

/// Square symmetric dissimilarity matrix over a stimulus set.
#[derive(Debug, Clone, PartialEq)]
pub struct Rdm {
    pub size: usize,
    pub metric: RdmMetric,
    /// row-major size x size, zero diagonal
    pub data: Vec<f64>,
    /// stimuli whose activation vector was constant (dissimilarity pinned)
    pub constant_rows: Vec<usize>,
}

impl Rdm {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.size + j]
    }

    pub fn upper_triangle(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size * (self.size - 1) / 2);
        for i in 0..self.size {
            for j in (i + 1)..self.size {
                out.push(self.at(i, j));
            }
        }
        out
    }

    pub fn mean_dissimilarity(&self) -> f64 {
        let ut = self.upper_triangle();
        ut.iter().sum::<f64>() / ut.len() as f64
    }
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let dx = x - ma;
        let dy = y - mb;
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return None;
    }
    Some(cov / (va.sqrt() * vb.sqrt()))
}

/// Correlation-distance RDM over the rows of an activation matrix. Constant
/// rows get the metric's chance dissimilarity (1 for corr, 0.5 for corr01)
/// and are listed in `constant_rows`.
pub fn compute_rdm(acts: &ActivationMatrix, metric: RdmMetric) -> Result<Rdm> {
    let s = acts.rows;
    if s < 2 {
        return Err(Error::Param("rdm needs at least 2 stimuli".into()));
    }
    let mut data = vec![0.0; s * s];
    let mut constant = Vec::new();
    for i in 0..s {
        let row = acts.row(i);
        let mean = row.iter().sum::<f64>() / row.len() as f64;
        if row.iter().all(|&v| v == mean) {
            constant.push(i);
        }
    }
    for i in 0..s {
        for j in (i + 1)..s {
            let d = match pearson(acts.row(i), acts.row(j)) {
                Some(rho) => match metric {
                    RdmMetric::Corr => 1.0 - rho,
                    RdmMetric::Corr01 => (1.0 - rho) / 2.0,
                },
                None => match metric {
                    RdmMetric::Corr => 1.0,
                    RdmMetric::Corr01 => 0.5,
                },
            };
            data[i * s + j] = d;
            data[j * s + i] = d;
        }
    }
    Ok(Rdm {
        size: s,
        metric,
        data,
        constant_rows: constant,
    })
}

/// Elementwise average of same-shape RDMs (seed averaging).
pub fn average_rdms(rdms: &[Rdm]) -> Result<Rdm> {
    let first = rdms.first().ok_or(Error::EmptyDataset)?;
    let mut data = vec![0.0; first.data.len()];
    for r in rdms {
        if r.size != first.size || r.metric != first.metric {
            return Err(Error::Shape("averaging RDMs of different shape or metric".into()));
        }
        for (acc, v) in data.iter_mut().zip(&r.data) {
            *acc += v;
        }
    }
    let k = rdms.len() as f64;
    data.iter_mut().for_each(|v| *v /= k);
    Ok(Rdm {
        size: first.size,
        metric: first.metric,
        data,
        constant_rows: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdmCompareMode {
    /// elementwise ln((a+eps)/(b+eps)), eps = 1e-8
    LogRatio,
    /// elementwise |sqrt(a) - sqrt(b)| / sqrt(2); both RDMs must be corr01
    Hellinger,
    /// elementwise |a - b|
    AbsDiff,
    /// Spearman rank correlation of the upper triangles
    Spearman,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RdmComparison {
    Map(Vec<f64>),
    Scalar(f64),
}

pub fn rdm_compare(a: &Rdm, b: &Rdm, mode: RdmCompareMode) -> Result<RdmComparison> {
    if a.size != b.size {
        return Err(Error::Shape(format!(
            "rdm sizes differ: {} vs {}",
            a.size, b.size
        )));
    }
    match mode {
        RdmCompareMode::LogRatio => {
            const EPS: f64 = 1e-8;
            let map = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| ((x + EPS) / (y + EPS)).ln())
                .collect();
            Ok(RdmComparison::Map(map))
        }
        RdmCompareMode::Hellinger => {
            if a.metric != RdmMetric::Corr01 || b.metric != RdmMetric::Corr01 {
                return Err(Error::Param(
                    "hellinger comparison needs corr01-scaled RDMs".into(),
                ));
            }
            let map = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| (x.sqrt() - y.sqrt()).abs() / 2f64.sqrt())
                .collect();
            Ok(RdmComparison::Map(map))
        }
        RdmCompareMode::AbsDiff => {
            let map = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| (x - y).abs())
                .collect();
            Ok(RdmComparison::Map(map))
        }
        RdmCompareMode::Spearman => {
            let ua = a.upper_triangle();
            let ub = b.upper_triangle();
            Ok(RdmComparison::Scalar(spearman(&ua, &ub)?))
        }
    }
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].partial_cmp(&values[j]).unwrap());
    let mut r = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // average rank over the tie run, 1-based
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            r[idx] = avg;
        }
        i = j + 1;
    }
    r
}

pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::Shape("spearman needs two equal-length series".into()));
    }
    let ra = ranks(a);
    let rb = ranks(b);
    pearson(&ra, &rb).ok_or_else(|| Error::Param("constant ranks in spearman".into()))
}

/// Histogram of the upper-triangle dissimilarities over equal-width bins
/// spanning [min, max], with the mean and population variance of the entries.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct DistanceDistribution {
    pub counts: Vec<usize>,
    pub lo: f64,
    pub hi: f64,
    pub mean: f64,
    pub variance: f64,
}

pub fn distance_distribution(rdm: &Rdm, n_bins: usize) -> Result<DistanceDistribution> {
    if n_bins == 0 {
        return Err(Error::Param("need at least one bin".into()));
    }
    let entries = rdm.upper_triangle();
    let lo = entries.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = entries.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = entries.iter().sum::<f64>() / entries.len() as f64;
    let variance = entries.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / entries.len() as f64;
    let mut counts = vec![0usize; n_bins];
    let width = (hi - lo) / n_bins as f64;
    for &v in &entries {
        let bin = if width == 0.0 {
            0
        } else {
            (((v - lo) / width) as usize).min(n_bins - 1)
        };
        counts[bin] += 1;
    }
    Ok(DistanceDistribution {
        counts,
        lo,
        hi,
        mean,
        variance,
    })
}

/// Flattened per-layer activations for a stimulus batch, tapped after the
/// given layer indices.
pub fn block_activations(
    model: &mut Model,
    stimuli: &Tensor,
    taps: &[(String, usize)],
    model_tag: &str,
) -> Result<Vec<ActivationMatrix>> {
    let mut rng = RngState::seeded(0);
    let traced = model.forward_traced(stimuli, Mode::Eval, &mut rng)?;
    let n = stimuli.shape()[0];
    taps.iter()
        .map(|(tag, idx)| {
            let t = traced
                .get(*idx)
                .ok_or_else(|| Error::MissingLayer(tag.clone()))?;
            let cols = t.len() / n;
            let mut m = ActivationMatrix::new(n, cols, t.data().to_vec())?;
            m.model_tag = model_tag.to_string();
            m.layer_tag = tag.clone();
            Ok(m)
        })
        .collect()
}

/// Spearman correlation between seed-averaged RDMs of matching layers of two
/// model families, reported in tap order.
pub fn cross_layer_rdm_correlation(
    models_a: &mut [Model],
    models_b: &mut [Model],
    stimuli: &Tensor,
    taps: &[(String, usize)],
) -> Result<Vec<(String, f64)>> {
    if models_a.is_empty() || models_b.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let avg_for = |models: &mut [Model], tag_prefix: &str| -> Result<Vec<Rdm>> {
        let mut per_layer: Vec<Vec<Rdm>> = vec![Vec::new(); taps.len()];
        for model in models.iter_mut() {
            let acts = block_activations(model, stimuli, taps, tag_prefix)?;
            for (li, a) in acts.iter().enumerate() {
                per_layer[li].push(compute_rdm(a, RdmMetric::Corr)?);
            }
        }
        per_layer.iter().map(|rs| average_rdms(rs)).collect()
    };
    let rdms_a = avg_for(models_a, "a")?;
    let rdms_b = avg_for(models_b, "b")?;
    taps.iter()
        .zip(rdms_a.iter().zip(&rdms_b))
        .map(|((tag, _), (ra, rb))| {
            let RdmComparison::Scalar(rho) = rdm_compare(ra, rb, RdmCompareMode::Spearman)? else {
                unreachable!("spearman returns a scalar");
            };
            Ok((tag.clone(), rho))
        })
        .collect()
}
