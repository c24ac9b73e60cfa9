//! The seven experiment subcommands.

use crate::config::*;
use crate::outputs::{fmt_f64, matrix_csv, write_json, CsvWriter};
use hoconv_core::analysis::{
    average_rdms, block_activations, compute_rdm, distance_distribution, make_composite_image,
    rdm_compare, tied_weight_experiment, RdmCompareMode, RdmMetric, Rdm,
};
use hoconv_core::formats::{read_checkpoint, read_hotx, write_checkpoint, write_hotx};
use hoconv_core::hoconv::{flop_count, param_count, HoConvLayer};
use hoconv_core::layers::ActKind;
use hoconv_core::model::{build_texture_model, texture_block_taps, Model, ModelKind};
use hoconv_core::rng::RngState;
use hoconv_core::tensor::Tensor;
use hoconv_core::textures::{
    generate_dataset, generate_texture, mix_perturbation, TextureDataset, GLIDER_CLASSES,
};
use hoconv_core::train::{evaluate, train, TrainConfig, TrainHistory};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

fn class_labels() -> Vec<String> {
    GLIDER_CLASSES.iter().map(|c| c.name().to_string()).collect()
}

// ---------------------------------------------------------------- gen

#[derive(Serialize)]
struct GenManifest {
    seed: u64,
    level: f64,
    height: usize,
    width: usize,
    sizes: (usize, usize, usize),
    files: Vec<String>,
    per_class_counts: BTreeMap<String, Vec<usize>>,
}

pub fn cmd_gen(config: &GenConfig, hash: &str) -> CliResult<()> {
    let seed = config.effective_seed();
    let [train_set, val_set, test_set] = generate_dataset(
        config.sizes,
        config.height,
        config.width,
        config.level,
        seed,
    )?;
    std::fs::create_dir_all(&config.out)?;
    let mut per_class = BTreeMap::new();
    let mut files = Vec::new();
    for set in [&train_set, &val_set, &test_set] {
        let file = format!("{}.hotx", set.split);
        write_hotx(&config.out.join(&file), set)?;
        per_class.insert(set.split.clone(), set.class_counts().to_vec());
        files.push(file);
    }
    write_json(
        &config.out.join("manifest.json"),
        hash,
        GenManifest {
            seed,
            level: config.level,
            height: config.height,
            width: config.width,
            sizes: config.sizes,
            files,
            per_class_counts: per_class,
        },
    )?;
    println!(
        "gen: wrote {}/{}/{} images to {}",
        train_set.len(),
        val_set.len(),
        test_set.len(),
        config.out.display()
    );
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Serialize)]
struct SeedOutcome {
    seed: u64,
    status: String,
    test_accuracy: Option<f64>,
    val_accuracy: Option<f64>,
    epochs: Option<usize>,
    best_epoch: Option<usize>,
}

#[derive(Serialize)]
struct TrainSummary {
    model: String,
    params: usize,
    seeds: Vec<u64>,
    outcomes: Vec<SeedOutcome>,
    mean_test_accuracy: Option<f64>,
    std_test_accuracy: Option<f64>,
    diverged_seeds: Vec<u64>,
}

pub struct TrainedRun {
    pub seed: u64,
    pub model: Model,
    pub history: TrainHistory,
    pub test_accuracy: f64,
}

/// Trains one seed end to end; shared by the command and the test suites.
pub fn train_one_seed(
    kind: ModelKind,
    seed: u64,
    train_set: &TextureDataset,
    val_set: &TextureDataset,
    test_set: &TextureDataset,
    base: &TrainConfig,
) -> hoconv_core::Result<TrainedRun> {
    let mut rng = RngState::substream(seed, &[0x696e6974]);
    let mut model = build_texture_model(kind, &mut rng)?;
    let config = TrainConfig { seed, ..base.clone() };
    let history = train(&mut model, train_set, val_set, &config)?;
    let result = evaluate(&mut model, test_set, 10)?;
    Ok(TrainedRun {
        seed,
        model,
        history,
        test_accuracy: result.accuracy,
    })
}

pub fn cmd_train(config: &TrainCmdConfig, hash: &str) -> CliResult<()> {
    let kind = ModelKind::parse(&config.model)?;
    let seeds = config.expand_seeds()?;
    let train_set = read_hotx(&config.dataset_dir.join("train.hotx"))?;
    let val_set = read_hotx(&config.dataset_dir.join("val.hotx"))?;
    let test_set = read_hotx(&config.dataset_dir.join("test.hotx"))?;
    std::fs::create_dir_all(&config.out)?;

    let runs: Vec<(u64, hoconv_core::Result<TrainedRun>)> = seeds
        .par_iter()
        .map(|&seed| {
            (
                seed,
                train_one_seed(kind, seed, &train_set, &val_set, &test_set, &config.train),
            )
        })
        .collect();

    let mut outcomes = Vec::new();
    let mut accs = Vec::new();
    let mut diverged = Vec::new();
    for (seed, run) in &runs {
        match run {
            Ok(r) => {
                let stem = format!("{}_seed{}", kind.name(), seed);
                write_checkpoint(
                    &config.out.join(format!("model_{stem}.hock")),
                    &r.model,
                    kind.name(),
                    *seed,
                    hash,
                    TOOL_VERSION,
                )?;
                let mut w = CsvWriter::new(hash, "epoch,train_loss,val_loss,val_acc,lr");
                for e in 0..r.history.epochs() {
                    w.row(&[
                        e.to_string(),
                        format!("{}", r.history.train_loss[e]),
                        format!("{}", r.history.val_loss[e]),
                        format!("{}", r.history.val_accuracy[e]),
                        format!("{}", r.history.lr[e]),
                    ]);
                }
                w.write(&config.out.join(format!("history_{stem}.csv")))?;
                let best = r.history.best_epoch;
                accs.push(r.test_accuracy);
                outcomes.push(SeedOutcome {
                    seed: *seed,
                    status: "ok".into(),
                    test_accuracy: Some(r.test_accuracy),
                    val_accuracy: r.history.val_accuracy.get(best).copied(),
                    epochs: Some(r.history.epochs()),
                    best_epoch: Some(best),
                });
                println!(
                    "train {} seed {}: test accuracy {:.2}% ({} epochs)",
                    kind.name(),
                    seed,
                     r.test_accuracy * 100.0,
                    r.history.epochs()
                );
            }
            Err(hoconv_core::Error::Diverged { epoch }) => {
                diverged.push(*seed);
                outcomes.push(SeedOutcome {
                    seed: *seed,
                    status: format!("diverged at epoch {epoch}"),
                    test_accuracy: None,
                    val_accuracy: None,
                    epochs: None,
                    best_epoch: None,
                });
                eprintln!("train seed {seed}: diverged at epoch {epoch}, continuing");
            }
            Err(e) => return Err(CliError::from(clone_core_error(e))),
        }
    }
    let (mean, std) = mean_std(&accs);
    let params = {
        let mut rng = RngState::seeded(0);
        build_texture_model(kind, &mut rng)?.num_params()
    };
    write_json(
        &config.out.join(format!("summary_{}.json", kind.name())),
        hash,
        TrainSummary {
            model: kind.name().into(),
            params,
            seeds: seeds.clone(),
            outcomes,
            mean_test_accuracy: mean,
            std_test_accuracy: std,
            diverged_seeds: diverged.clone(),
        },
    )?;
    if !diverged.is_empty() && accs.is_empty() {
        return Err(CliError::Divergence("every seed diverged".into()));
    }
    Ok(())
}

fn clone_core_error(e: &hoconv_core::Error) -> hoconv_core::Error {
    // errors other than Io carry plain data; Io is stringified
    match e {
        hoconv_core::Error::Io(err) => {
            hoconv_core::Error::Format(format!("io: {err}"))
        }
        hoconv_core::Error::Diverged { epoch } => hoconv_core::Error::Diverged { epoch: *epoch },
        other => hoconv_core::Error::Param(other.to_string()),
    }
}

/// Sample mean and sample standard deviation (n-1).
pub fn mean_std(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    if xs.len() == 1 {
        return (Some(mean), Some(0.0));
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
    (Some(mean), Some(var.sqrt()))
}

// ---------------------------------------------------------------- eval

#[derive(Serialize)]
struct EvalSummary {
    checkpoint: String,
    dataset: String,
    accuracy: f64,
}

pub fn cmd_eval(config: &EvalConfig, hash: &str) -> CliResult<()> {
    let (mut model, manifest) = read_checkpoint(&config.checkpoint)?;
    let set = read_hotx(&config.dataset)?;
    let result = evaluate(&mut model, &set, 10)?;
    std::fs::create_dir_all(&config.out)?;
    let labels = class_labels();
    let stem = config
        .checkpoint
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "checkpoint".into());
    let mut w = CsvWriter::new(hash, &format!("true\\pred,{}", labels.join(",")));
    for (i, row) in result.confusion.iter().enumerate() {
        let mut cells = vec![labels[i].clone()];
        cells.extend(row.iter().map(|c| c.to_string()));
        w.row(&cells);
    }
    w.raw_line(&format!("accuracy,{}", result.accuracy));
    w.write(&config.out.join(format!("confusion_{stem}.csv")))?;
    write_json(
        &config.out.join(format!("eval_{stem}.json")),
        hash,
        EvalSummary {
            checkpoint: manifest.model_kind,
            dataset: set.split.clone(),
            accuracy: result.accuracy,
        },
    )?;
    println!("eval {}: accuracy {:.2}%", stem, result.accuracy * 100.0);
    Ok(())
}

// ---------------------------------------------------------------- pca-tied

#[derive(Serialize)]
struct PcaEntry {
    model: String,
    nonlinearity: String,
    n_inits: usize,
    dim: usize,
    k95: usize,
    pc_fraction: f64,
    underdetermined: bool,
}

#[derive(Serialize)]
struct PcaSummary {
    composite_seed: u64,
    entries: Vec<PcaEntry>,
}

pub fn cmd_pca_tied(config: &PcaTiedConfig, hash: &str) -> CliResult<()> {
    let seed = config.effective_seed();
    let input = make_composite_image(config.composite_seed)?;
    std::fs::create_dir_all(&config.out)?;
    let mut entries = Vec::new();
    for act_name in &config.nonlinearities {
        let act = ActKind::parse(act_name)?;
        for model_name in &config.models {
            let kind = ModelKind::parse(model_name)?;
            let r = tied_weight_experiment(kind, act, config.n_inits, &input, seed)?;
            let mut w = CsvWriter::new(hash, "component,fraction,cumulative");
            let mut acc = 0.0;
            for (i, f) in r.fractions.iter().enumerate() {
                acc += f;
                w.row(&[(i + 1).to_string(), format!("{f}"), format!("{acc}")]);
            }
            w.write(
                &config
                    .out
                    .join(format!("pca_curve_{}_{}.csv", kind.name(), act.name())),
            )?;
            println!(
                "pca-tied {} ({}): {} of {} components at 95% ({:.2}%)",
                kind.name(),
                act.name(),
                r.k95,
                r.dim,
                r.pc_fraction * 100.0
            );
            entries.push(PcaEntry {
                model: kind.name().into(),
                nonlinearity: act.name().into(),
                n_inits: r.n_inits,
                dim: r.dim,
                k95: r.k95,
                pc_fraction: r.pc_fraction,
                underdetermined: r.underdetermined,
            });
        }
    }
    write_json(
        &config.out.join("pca_summary.json"),
        hash,
        PcaSummary {
            composite_seed: config.composite_seed,
            entries,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------- rsa

fn load_models(paths: &[PathBuf]) -> CliResult<Vec<Model>> {
    if paths.is_empty() {
        return Err(CliError::Config("no checkpoints given".into()));
    }
    paths
        .iter()
        .map(|p| Ok(read_checkpoint(p)?.0))
        .collect()
}

/// First `per_class` test images of each class, in class order.
pub fn pick_stimuli(set: &TextureDataset, per_class: usize) -> CliResult<Tensor> {
    let mut chosen = Vec::new();
    for class in 0..10u8 {
        let mut found = 0;
        for (i, &l) in set.labels.iter().enumerate() {
            if l == class {
                chosen.push(i);
                found += 1;
                if found == per_class {
                    break;
                }
            }
        }
        if found < per_class {
            return Err(CliError::Config(format!(
                "dataset has only {found} images of class {class}, need {per_class}"
            )));
        }
    }
    let (batch, _) = set.batch(&chosen)?;
    Ok(batch)
}

fn seed_averaged_rdms(
    models: &mut [Model],
    stimuli: &Tensor,
    taps: &[(String, usize)],
    label: &str,
    metric: RdmMetric,
) -> CliResult<Vec<Rdm>> {
    let mut per_layer: Vec<Vec<Rdm>> = vec![Vec::new(); taps.len()];
    for model in models.iter_mut() {
        let acts = block_activations(model, stimuli, taps, label)?;
        for (li, a) in acts.iter().enumerate() {
            per_layer[li].push(compute_rdm(a, metric)?);
        }
    }
    Ok(per_layer
        .iter()
        .map(|rs| average_rdms(rs))
        .collect::<hoconv_core::Result<Vec<_>>>()?)
}

#[derive(Serialize)]
struct RsaSummary {
    labels: (String, String),
    stimuli: usize,
    mean_dissimilarity: BTreeMap<String, f64>,
    cross_layer_spearman: BTreeMap<String, f64>,
}

pub fn cmd_rsa(config: &RsaConfig, hash: &str) -> CliResult<()> {
    let mut models_a = load_models(&config.checkpoints_a)?;
    let mut models_b = load_models(&config.checkpoints_b)?;
    let set = read_hotx(&config.dataset)?;
    let stimuli = pick_stimuli(&set, config.stimuli_per_class)?;
    let taps = texture_block_taps();
    std::fs::create_dir_all(&config.out)?;

    let stim_labels: Vec<String> = (0..10)
        .flat_map(|c| {
            (0..config.stimuli_per_class)
                .map(move |i| format!("{}_{i}", GLIDER_CLASSES[c].name()))
        })
        .collect();

    let mut mean_diss = BTreeMap::new();
    let mut rdms = BTreeMap::new();
    for (label, models) in [
        (&config.label_a, &mut models_a),
        (&config.label_b, &mut models_b),
    ] {
        let avg = seed_averaged_rdms(models, &stimuli, &taps, label, RdmMetric::Corr)?;
        let avg01 = seed_averaged_rdms(models, &stimuli, &taps, label, RdmMetric::Corr01)?;
        for ((tag, _), (rdm, rdm01)) in taps.iter().zip(avg.iter().zip(&avg01)) {
            matrix_csv(
                &config.out.join(format!("rdm_{label}_{tag}.csv")),
                hash,
                &stim_labels,
                &rdm.data,
            )?;
            let hist = distance_distribution(rdm, config.n_bins)?;
            let mut w = CsvWriter::new(hash, "bin_lo,bin_hi,count");
            let width = (hist.hi - hist.lo) / config.n_bins as f64;
            for (b, &count) in hist.counts.iter().enumerate() {
                w.row(&[
                    format!("{}", hist.lo + width * b as f64),
                    format!("{}", hist.lo + width * (b + 1) as f64),
                    count.to_string(),
                ]);
            }
            w.raw_line(&format!("# mean={} variance={}", hist.mean, hist.variance));
            w.write(&config.out.join(format!("hist_{label}_{tag}.csv")))?;
            mean_diss.insert(format!("{label}_{tag}"), rdm.mean_dissimilarity());
            rdms.insert((label.clone(), tag.clone()), (rdm.clone(), rdm01.clone()));
        }
    }

    // pairwise comparison maps per tap
    for (tag, _) in &taps {
        let (ra, ra01) = &rdms[&(config.label_a.clone(), tag.clone())];
        let (rb, rb01) = &rdms[&(config.label_b.clone(), tag.clone())];
        if let hoconv_core::analysis::RdmComparison::Map(m) =
            rdm_compare(ra, rb, RdmCompareMode::LogRatio)?
        {
            matrix_csv(
                &config.out.join(format!("log_ratio_{tag}.csv")),
                hash,
                &stim_labels,
                &m,
            )?;
        }
        if let hoconv_core::analysis::RdmComparison::Map(m) =
            rdm_compare(ra01, rb01, RdmCompareMode::Hellinger)?
        {
            matrix_csv(
                &config.out.join(format!("hellinger_{tag}.csv")),
                hash,
                &stim_labels,
                &m,
            )?;
        }
    }

    let rho = hoconv_core::analysis::cross_layer_rdm_correlation(
        &mut models_a,
        &mut models_b,
        &stimuli,
        &taps,
    )?;
    let mut w = CsvWriter::new(hash, "layer,spearman");
    let mut rho_map = BTreeMap::new();
    for (tag, r) in &rho {
        w.row(&[tag.clone(), format!("{r}")]);
        rho_map.insert(tag.clone(), *r);
    }
    w.write(&config.out.join("cross_layer_spearman.csv"))?;

    write_json(
        &config.out.join("rsa_summary.json"),
        hash,
        RsaSummary {
            labels: (config.label_a.clone(), config.label_b.clone()),
            stimuli: stimuli.shape()[0],
            mean_dissimilarity: mean_diss.clone(),
            cross_layer_spearman: rho_map,
        },
    )?;
    for (k, v) in &mean_diss {
        println!("rsa mean dissimilarity {k}: {v:.4}");
    }
    Ok(())
}

// ---------------------------------------------------------------- perturb

#[derive(Serialize)]
struct PerturbSummary {
    checkpoints: usize,
    images: usize,
    unperturbed_accuracy: f64,
    monotone_soft_check: bool,
}

pub fn cmd_perturb(config: &PerturbConfig, hash: &str) -> CliResult<()> {
    let seed = config.effective_seed();
    let mut models: Vec<Model> = load_models(&config.checkpoints)?;
    let set = read_hotx(&config.dataset)?;
    let n = set.len().min(config.max_images);
    let indices: Vec<usize> = (0..n).collect();
    let (images, labels) = set.batch(&indices)?;
    std::fs::create_dir_all(&config.out)?;

    // accuracy of the checkpoint ensemble on a prepared batch
    let acc_of = |models: &mut Vec<Model>, batch: &Tensor, labels: &[usize]| -> CliResult<f64> {
        let mut rng = RngState::seeded(0);
        let mut total = 0.0;
        for model in models.iter_mut() {
            let mut correct = 0usize;
            let bs = 256;
            let mut i = 0;
            while i < labels.len() {
                let hi = (i + bs).min(labels.len());
                let sub = slice_batch(batch, i, hi)?;
                let logits = model.forward(&sub, hoconv_core::layers::Mode::Eval, &mut rng)?;
                for (s, &label) in labels[i..hi].iter().enumerate() {
                    let k = logits.shape()[1];
                    let row = &logits.data()[s * k..(s + 1) * k];
                    let mut best = 0;
                    for (j, &v) in row.iter().enumerate() {
                        if v > row[best] {
                            best = j;
                        }
                    }
                    if best == label {
                        correct += 1;
                    }
                }
                i = hi;
            }
            total += correct as f64 / labels.len() as f64;
        }
        Ok(total / models.len() as f64)
    };

    let base_acc = acc_of(&mut models, &images, &labels)?;
    let mut w = CsvWriter::new(hash, "intensity,class,raw_accuracy,normalized_accuracy");
    let mut per_intensity_mean: BTreeMap<String, f64> = BTreeMap::new();
    let (h, wd) = (set.height, set.width);
    for class in GLIDER_CLASSES {
        // one perturbation texture per evaluated image, reused across
        // intensities via identical substreams
        let textures: Vec<Tensor> = (0..n)
            .map(|i| {
                let mut rng =
                    RngState::substream(seed, &[class.index() as u64, i as u64]);
                generate_texture(class, h, wd, config.texture_level, &mut rng)
            })
            .collect::<hoconv_core::Result<_>>()?;
        for &intensity in &config.intensities {
            let mut mixed_data = Vec::with_capacity(images.len());
            for i in 0..n {
                let img = Tensor::new(
                    vec![set.channels, h, wd],
                    set.image(i).iter().map(|&p| f64::from(p)).collect(),
                )?;
                let mixed = mix_perturbation(&img, &textures[i], intensity)?;
                mixed_data.extend(mixed.into_data());
            }
            let batch = Tensor::new(vec![n, set.channels, h, wd], mixed_data)?;
            let acc = acc_of(&mut models, &batch, &labels)?;
            w.row(&[
                fmt_f64(intensity),
                class.name().into(),
                format!("{acc}"),
                format!("{}", acc / base_acc),
            ]);
            *per_intensity_mean
                .entry(format!("{intensity}"))
                .or_insert(0.0) += acc / GLIDER_CLASSES.len() as f64;
        }
        println!("perturb {}: done", class.name());
    }
    w.write(&config.out.join("perturb.csv"))?;

    // soft monotonicity check: class-averaged accuracy should not rise by
    // more than 2 points as intensity grows
    let mut sorted: Vec<(f64, f64)> = config
        .intensities
        .iter()
        .map(|i| (*i, per_intensity_mean[&format!("{i}")]))
        .collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut monotone = true;
    for pair in sorted.windows(2) {
        if pair[1].1 > pair[0].1 + 0.02 {
            monotone = false;
        }
    }
    if !monotone {
        eprintln!("perturb: warning: class-averaged accuracy not non-increasing in intensity");
    }
    write_json(
        &config.out.join("perturb_summary.json"),
        hash,
        PerturbSummary {
            checkpoints: models.len(),
            images: n,
            unperturbed_accuracy: base_acc,
            monotone_soft_check: monotone,
        },
    )?;
    Ok(())
}

fn slice_batch(batch: &Tensor, lo: usize, hi: usize) -> hoconv_core::Result<Tensor> {
    let shape = batch.shape();
    let per: usize = shape[1..].iter().product();
    let mut sub_shape = shape.to_vec();
    sub_shape[0] = hi - lo;
    Tensor::new(sub_shape, batch.data()[lo * per..hi * per].to_vec())
}

// ---------------------------------------------------------------- flops

#[derive(Serialize)]
struct FlopsSummary {
    support: usize,
    positions: usize,
    per_order_params: Vec<usize>,
    per_order_flops: Vec<u64>,
    ratios: Vec<f64>,
    total_flops: u64,
}

pub fn cmd_flops(config: &FlopsConfig, hash: &str) -> CliResult<()> {
    let mut rng = RngState::seeded(0);
    let layer = HoConvLayer::new(
        config.out_channels,
        config.max_order,
        config.kh,
        config.kw,
        config.c_in,
        config.stride,
        &mut rng,
    )?;
    let report = flop_count(&layer, config.input_h, config.input_w)?;
    let params = param_count(&layer);
    std::fs::create_dir_all(&config.out)?;
    let mut w = CsvWriter::new(hash, "order,params,flops_per_position,flops_total,ratio_to_order1");
    for (i, ratio) in report.ratios.iter().enumerate() {
        w.row(&[
            (i + 1).to_string(),
            params.per_order[i].to_string(),
            report.per_order_per_position[i].to_string(),
            report.per_order_total[i].to_string(),
            format!("{ratio}"),
        ]);
        println!(
            "flops order {}: {} params, {} flops/position, {:.3}x order 1",
            i + 1,
            params.per_order[i],
            report.per_order_per_position[i],
            ratio
        );
    }
    w.write(&config.out.join("flops.csv"))?;
    write_json(
        &config.out.join("flops.json"),
        hash,
        FlopsSummary {
            support: layer.support(),
            positions: report.positions,
            per_order_params: params.per_order.clone(),
            per_order_flops: report.per_order_total.clone(),
            ratios: report.ratios.clone(),
            total_flops: report.total,
        },
    )?;
    Ok(())
}

// ---------------------------------------------------------------- shared helpers for tests

/// Mean upper-triangle dissimilarity of the first-block RDM averaged over
/// trained models; the quantity the representation-dispersion comparison uses.
pub fn block1_mean_dissimilarity(
    models: &mut [Model],
    stimuli: &Tensor,
) -> CliResult<f64> {
    let taps = vec![texture_block_taps()[0].clone()];
    let rdms = seed_averaged_rdms(models, stimuli, &taps, "m", RdmMetric::Corr)?;
    Ok(rdms[0].mean_dissimilarity())
}
