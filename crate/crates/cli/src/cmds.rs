//! The eight subcommand implementations.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::PathBuf;

use anyhow::{bail, ensure, Context, Result};
use become_net::animation::{builtin_expressions, ExpressionSpec};
use become_net::betagraph::{bgc_loss, screen_edges, EdgeScreen, NodeMatrix, NodeRole, ScreeningConfig};
use become_net::datapipe::halfface::split_half;
use become_net::datapipe::synth::{generate, unilateral_map, SynthConfig, AU_CATALOG};
use become_net::datapipe::{save_dataset, Dataset, Sample, Side};
use become_net::diffcomp::{grad_check, Probes, Tape, Tensor, Var};
use become_net::losses::{self, LabelWeights};
use become_net::network::{BeCoMENetParams, NetworkConfig, ParamVars};
use become_net::rngstream;
use become_net::trainer::{self, identity_table, MetricsReport};
use become_net::validity::{
    detections_by_construct, load_detections_csv, load_gaze_csv, mimicry_validity, pct_face,
    recognition_validity, report_csv, report_markdown, ValidityResult,
};
use serde::Serialize;

use crate::support::{self, RunDir};
use crate::{
    AnimateArgs, CrossvalArgs, EvalArgs, GradcheckArgs, GraphArgs, SynthArgs, TrainArgs,
    ValidityArgs, Variant,
};

/// Samples evaluated per tape when extracting features or predictions.
const EVAL_CHUNK: usize = 32;

pub fn synth(args: SynthArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'static str,
        variant: &'a str,
        seed: u64,
        subjects: usize,
        samples_per_subject: usize,
        aus: usize,
        exprs: usize,
        size: usize,
        threads: usize,
    }
    run.write_config(&Echo {
        command: "synth",
        variant: args.variant.as_str(),
        seed: args.seed,
        subjects: args.subjects,
        samples_per_subject: args.samples_per_subject,
        aus: args.aus,
        exprs: args.exprs,
        size: args.size,
        threads: args.out.threads,
    })?;

    let cfg = SynthConfig {
        seed: args.seed,
        n_subjects: args.subjects,
        samples_per_subject: args.samples_per_subject,
        au_count: args.aus,
        expr_count: args.exprs,
        image_size: args.size,
    };
    if args.variant == Variant::H {
        ensure!(
            args.aus == AU_CATALOG.len(),
            "--variant h needs the full catalog of {} AUs to assign unilateral labels, got --aus {}",
            AU_CATALOG.len(),
            args.aus
        );
    }
    let full = generate::<f64>(&cfg)?;
    run.note(&format!(
        "generated {} samples ({} AU-labeled, {} expression-labeled) for {} subjects",
        full.samples.len(),
        full.au_samples().len(),
        full.expr_samples().len(),
        args.subjects
    ))?;

    match args.variant {
        Variant::F => {
            let manifest = save_dataset(&full, &run.path("dataset"))?;
            run.note("wrote dataset/manifest.csv")?;
            println!("{}", manifest.display());
        }
        Variant::H => {
            let map = unilateral_map();
            let mut left_samples = Vec::with_capacity(full.samples.len());
            let mut right_samples = Vec::with_capacity(full.samples.len());
            for sample in &full.samples {
                let (left, right) = split_half(sample, &map)?;
                left_samples.push(left);
                right_samples.push(right);
            }
            let pick = |keep: &[usize]| -> Vec<String> {
                keep.iter().map(|&i| full.au_names[i].clone()).collect()
            };
            let left = Dataset {
                au_names: pick(&map.left),
                expr_count: full.expr_count,
                side: Side::Left,
                samples: left_samples,
            };
            let right = Dataset {
                au_names: pick(&map.right),
                expr_count: full.expr_count,
                side: Side::Right,
                samples: right_samples,
            };
            let left_manifest = save_dataset(&left, &run.path("dataset-left"))?;
            let right_manifest = save_dataset(&right, &run.path("dataset-right"))?;
            run.note("wrote dataset-left/manifest.csv and dataset-right/manifest.csv")?;
            println!("{}", left_manifest.display());
            println!("{}", right_manifest.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    command: &'static str,
    data: Vec<String>,
    side: &'a str,
    network: &'a NetworkConfig,
    train: &'a trainer::TrainConfig,
    threads: usize,
}

fn describe_pool(run: &mut RunDir, data: &Dataset<f64>) -> Result<()> {
    run.note(&format!(
        "{} samples ({} AU-labeled, {} expression-labeled) from {} subjects, {} faces",
        data.samples.len(),
        data.au_samples().len(),
        data.expr_samples().len(),
        data.subjects().len(),
        data.side.as_str()
    ))
}

pub fn train(args: TrainArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;
    let file = support::load_config_file(args.flags.config.as_deref())?;
    let data = support::load_merged(&args.data)?;
    let resolved = support::resolve(&data, &file, &args.flags)?;
    run.write_config(&TrainEcho {
        command: "train",
        data: support::path_strings(&args.data),
        side: data.side.as_str(),
        network: &resolved.network,
        train: &resolved.train,
        threads: args.out.threads,
    })?;
    describe_pool(&mut run, &data)?;

    let fitted = trainer::fit(&resolved.network, &data, &resolved.train)?;
    for rec in &fitted.history {
        run.note(&format!(
            "epoch {:>3}: {} steps, loss {:.6}, val mean F1 {:.4}, lr {:.6}",
            rec.epoch, rec.steps, rec.mean_loss.total, rec.val_mean_f1, rec.lr_last
        ))?;
    }
    run.note(&format!(
        "best epoch {} with validation mean F1 {:.4}",
        fitted.best_epoch, fitted.best_val_f1
    ))?;

    fitted.params.save_path(run.path("checkpoint.bin"))?;
    #[derive(Serialize)]
    struct History<'a> {
        best_epoch: usize,
        best_val_f1: f64,
        history: &'a [trainer::EpochRecord],
    }
    run.write_json(
        "history.json",
        &History {
            best_epoch: fitted.best_epoch,
            best_val_f1: fitted.best_val_f1,
            history: &fitted.history,
        },
    )?;
    println!(
        "best epoch {} val mean F1 {:.4} -> checkpoint.bin",
        fitted.best_epoch, fitted.best_val_f1
    );
    Ok(())
}

fn write_metrics(run: &RunDir, report: &MetricsReport) -> Result<()> {
    let mut json = report.to_json()?;
    json.push('\n');
    run.write_text("metrics.json", &json)?;
    run.write_text("metrics.csv", &report.to_csv())
}

pub fn crossval(args: CrossvalArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;
    let file = support::load_config_file(args.flags.config.as_deref())?;
    let data = support::load_merged(&args.data)?;
    let resolved = support::resolve(&data, &file, &args.flags)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'static str,
        data: Vec<String>,
        folds: usize,
        side: &'a str,
        network: &'a NetworkConfig,
        train: &'a trainer::TrainConfig,
        threads: usize,
    }
    run.write_config(&Echo {
        command: "crossval",
        data: support::path_strings(&args.data),
        folds: args.folds,
        side: data.side.as_str(),
        network: &resolved.network,
        train: &resolved.train,
        threads: args.out.threads,
    })?;
    describe_pool(&mut run, &data)?;

    let result = trainer::crossval(&resolved.network, &data, args.folds, &resolved.train)?;
    for fold in &result.folds {
        run.note(&format!(
            "fold {}: test subjects {}, mean F1 {:.4}",
            fold.fold,
            fold.test_subjects.join(" "),
            fold.report.mean_f1
        ))?;
    }
    run.note(&format!(
        "pooled mean F1 {:.4} over {} AU predictions",
        result.pooled.mean_f1, result.pooled.au_samples
    ))?;

    write_metrics(&run, &result.pooled)?;
    run.write_json("crossval.json", &result)?;
    println!("pooled mean F1 {:.4}", result.pooled.mean_f1);
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;
    let params = BeCoMENetParams::<f64>::load_path(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let data = support::load_merged(&args.data)?;

    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'static str,
        model: String,
        data: Vec<String>,
        threshold: f64,
        network: &'a NetworkConfig,
        threads: usize,
    }
    run.write_config(&Echo {
        command: "eval",
        model: args.model.display().to_string(),
        data: support::path_strings(&args.data),
        threshold: args.threshold,
        network: params.config(),
        threads: args.out.threads,
    })?;
    describe_pool(&mut run, &data)?;

    let report = trainer::evaluate(&params, &data, args.threshold)?;
    for au in &report.per_au {
        run.note(&format!(
            "{}: precision {:.4}, recall {:.4}, F1 {:.4}{}",
            au.name,
            au.precision,
            au.recall,
            au.f1,
            if au.degenerate { " (degenerate)" } else { "" }
        ))?;
    }
    run.note(&format!("mean F1 {:.4} over {} AU predictions", report.mean_f1, report.au_samples))?;
    if let Some(acc) = report.expr_accuracy {
        run.note(&format!(
            "expression accuracy {:.4} over {} predictions",
            acc, report.expr_samples
        ))?;
    }
    write_metrics(&run, &report)?;
    println!("mean F1 {:.4}", report.mean_f1);
    Ok(())
}

/// Learned feature vectors for a set of samples, one row per sample,
/// computed in evaluation mode.
fn extract_features(
    params: &BeCoMENetParams<f64>,
    samples: &[&Sample<f64>],
    seed: u64,
) -> Result<Tensor<f64>> {
    let width = 2 * params.config().fc_units;
    let mut flat = vec![0.0f64; samples.len() * width];
    for (chunk_idx, chunk) in samples.chunks(EVAL_CHUNK).enumerate() {
        let mut tape = Tape::<f64>::new();
        let net = params.register(&mut tape);
        let mut rng = rngstream::stream(seed, "inference");
        for (offset, sample) in chunk.iter().enumerate() {
            let z = net.forward_features(&mut tape, &sample.image, &sample.landmarks, false, &mut rng)?;
            let row = chunk_idx * EVAL_CHUNK + offset;
            flat[row * width..(row + 1) * width].copy_from_slice(tape.value(z).data());
        }
    }
    Ok(Tensor::new(vec![samples.len(), width], flat)?)
}

fn to_dot(screen: &EdgeScreen) -> String {
    let role_str = |role: &NodeRole| match role {
        NodeRole::Feature => "feature",
        NodeRole::Label => "label",
        NodeRole::Identity => "identity",
    };
    let mut out = String::from("graph correlation_screen {\n");
    for node in &screen.nodes {
        out.push_str(&format!("  \"{}\" [class=\"{}\"];\n", node.name, role_str(&node.role)));
    }
    for edge in &screen.edges {
        out.push_str(&format!(
            "  \"{}\" -- \"{}\" [label=\"{:.6}\"];\n",
            screen.nodes[edge.i].name, screen.nodes[edge.j].name, edge.lambda
        ));
    }
    out.push_str("}\n");
    out
}

pub fn graph(args: GraphArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;
    let params = BeCoMENetParams::<f64>::load_path(&args.model)
        .with_context(|| format!("loading {}", args.model.display()))?;
    let data = support::load_merged(&args.data)?;
    let cfg = params.config();
    let sample = data.samples.first().context("dataset has no samples")?;
    ensure!(
        sample.image.shape() == [cfg.image_h, cfg.image_w]
            && sample.landmarks.shape()[0] == cfg.landmarks,
        "checkpoint expects {}x{} images with {} landmarks but the dataset has {:?} images with {} landmarks",
        cfg.image_h,
        cfg.image_w,
        cfg.landmarks,
        sample.image.shape(),
        sample.landmarks.shape()[0]
    );

    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'static str,
        model: String,
        data: Vec<String>,
        alpha: f64,
        seed: u64,
        max_samples: usize,
        network: &'a NetworkConfig,
        threads: usize,
    }
    run.write_config(&Echo {
        command: "graph",
        model: args.model.display().to_string(),
        data: support::path_strings(&args.data),
        alpha: args.alpha,
        seed: args.seed,
        max_samples: args.max_samples,
        network: cfg,
        threads: args.out.threads,
    })?;

    let mut samples = data.au_samples();
    if args.max_samples > 0 && samples.len() > args.max_samples {
        samples.truncate(args.max_samples);
    }
    ensure!(
        samples.len() >= 4,
        "edge screening needs at least 4 AU-labeled samples, got {}",
        samples.len()
    );
    let subjects: Vec<String> = {
        let set: BTreeSet<&str> = samples.iter().map(|s| s.subject_id.as_str()).collect();
        set.into_iter().map(str::to_owned).collect()
    };
    let table = identity_table::<f64>(&subjects, args.seed);
    let identity: Vec<f64> = samples.iter().map(|s| table[&s.subject_id]).collect();

    let features = extract_features(&params, &samples, args.seed)?;
    let c = data.au_count();
    let labels = Tensor::from_fn(&[samples.len(), c], |i| {
        let labels = samples[i / c].au_labels.as_ref().expect("AU sample");
        labels[i % c] as f64
    });
    let nodes = NodeMatrix::new(&features, &labels, &identity)?;
    let screen = screen_edges(&nodes, args.alpha)?;

    run.note(&format!(
        "screened {} nodes over a batch of {}: {} edges at alpha {}",
        screen.w,
        samples.len(),
        screen.edges.len(),
        screen.alpha
    ))?;
    if let (Some(eta), Some(q)) = (screen.eta, screen.q_eta) {
        run.note(&format!("per-test level {eta:.3e}, squared-sine quantile {q:.6}"))?;
    }
    run.write_json("graph.json", &screen)?;
    run.write_text("graph.dot", &to_dot(&screen))?;
    println!("{} edges", screen.edges.len());
    Ok(())
}

pub fn animate(args: AnimateArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;
    let builtins = builtin_expressions();
    let selected: Vec<ExpressionSpec> = if args.expressions.is_empty() {
        builtins
    } else {
        let known: Vec<&str> = builtins.iter().map(|s| s.name.as_str()).collect();
        args.expressions
            .iter()
            .map(|name| {
                builtins
                    .iter()
                    .find(|s| &s.name == name)
                    .cloned()
                    .with_context(|| {
                        format!("unknown expression {name:?}; available: {}", known.join(", "))
                    })
            })
            .collect::<Result<_>>()?
    };
    let remap: Option<BTreeMap<String, String>> = match &args.remap {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            Some(serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
    };

    #[derive(Serialize)]
    struct Echo {
        command: &'static str,
        expressions: Vec<String>,
        remap: Option<String>,
        threads: usize,
    }
    run.write_config(&Echo {
        command: "animate",
        expressions: selected.iter().map(|s| s.name.clone()).collect(),
        remap: args.remap.as_ref().map(|p| p.display().to_string()),
        threads: args.out.threads,
    })?;

    for spec in &selected {
        let mut clip = become_net::animation::make_clip(spec)?;
        if let Some(map) = &remap {
            clip = clip.remap(map)?;
        }
        let mut json = clip.to_json()?;
        json.push('\n');
        run.write_text(&format!("{}.json", spec.name), &json)?;
        run.note(&format!(
            "{}: {} channels, {} frames, {} ms",
            clip.name,
            clip.channels.len(),
            clip.frames.len(),
            clip.duration_ms()
        ))?;
    }
    println!("{} clips written", selected.len());
    Ok(())
}

pub fn validity(args: ValidityArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;
    ensure!(
        args.detections.is_some() || args.gaze_dir.is_some(),
        "nothing to analyze: provide --detections and/or --gaze-dir"
    );
    if args.gaze_dir.is_some() && args.aoi.is_none() {
        bail!("--aoi is required with --gaze-dir");
    }

    #[derive(Serialize)]
    struct Echo {
        command: &'static str,
        detections: Option<String>,
        gaze_dir: Option<String>,
        aoi: Option<become_net::validity::AoiRect>,
        face_fraction: f64,
        alpha: f64,
        threads: usize,
    }
    run.write_config(&Echo {
        command: "validity",
        detections: args.detections.as_ref().map(|p| p.display().to_string()),
        gaze_dir: args.gaze_dir.as_ref().map(|p| p.display().to_string()),
        aoi: args.aoi,
        face_fraction: args.face_fraction,
        alpha: args.alpha,
        threads: args.out.threads,
    })?;

    let mut results: Vec<ValidityResult> = Vec::new();
    if let Some(dir) = &args.gaze_dir {
        let aoi = args.aoi.expect("checked above");
        let mut files: Vec<PathBuf> = fs::read_dir(dir)
            .with_context(|| format!("reading {}", dir.display()))?
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .map(|entry| entry.path())
            .filter(|p| p.extension().is_some_and(|e| e == "csv"))
            .collect();
        files.sort();
        ensure!(!files.is_empty(), "no .csv gaze recordings in {}", dir.display());
        let mut fractions = Vec::with_capacity(files.len());
        for file in &files {
            let gaze = load_gaze_csv(file).with_context(|| format!("loading {}", file.display()))?;
            let fraction = pct_face(&gaze, &aoi)
                .with_context(|| format!("analyzing {}", file.display()))?;
            let who = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            run.note(&format!("{who}: {:.1}% of on-screen gaze inside the face AOI", fraction * 100.0))?;
            fractions.push(fraction);
        }
        results.push(recognition_validity(&fractions, args.face_fraction, args.alpha)?);
    }
    if let Some(path) = &args.detections {
        let rows = load_detections_csv(path).with_context(|| format!("loading {}", path.display()))?;
        let grouped = detections_by_construct(&rows);
        ensure!(!grouped.is_empty(), "no detection rows in {}", path.display());
        for (construct, detections) in &grouped {
            let mut result = mimicry_validity(detections, args.alpha)?;
            result.construct = construct.clone();
            run.note(&format!(
                "{construct}: {}/{} participants detected, valid: {}",
                detections.iter().map(|&d| d as usize).sum::<usize>(),
                detections.len(),
                if result.valid { "yes" } else { "no" }
            ))?;
            results.push(result);
        }
    }

    run.write_text("validity.csv", &report_csv(&results))?;
    run.write_text("validity.md", &report_markdown(&results))?;
    run.write_json("validity.json", &results)?;
    println!("{} constructs assessed", results.len());
    Ok(())
}

pub fn gradcheck(args: GradcheckArgs) -> Result<()> {
    support::init_threads(args.out.threads)?;
    let mut run = RunDir::create(&args.out.out)?;
    ensure!(args.batch >= 2, "the probed objective needs a batch of at least 2, got {}", args.batch);
    ensure!(args.probes > 0, "need at least one probe");

    let mut network = NetworkConfig::with_dims(args.size, args.size, args.landmarks, args.aus, args.exprs);
    network.conv_channels = [4, 8, 8];
    network.landmark_channels = 4;
    network.fc_units = 32;
    network.validate()?;

    #[derive(Serialize)]
    struct Echo<'a> {
        command: &'static str,
        seed: u64,
        batch: usize,
        probes: usize,
        eps: f64,
        tolerance: f64,
        network: &'a NetworkConfig,
        threads: usize,
    }
    run.write_config(&Echo {
        command: "gradcheck",
        seed: args.seed,
        batch: args.batch,
        probes: args.probes,
        eps: args.eps,
        tolerance: args.tolerance,
        network: &network,
        threads: args.out.threads,
    })?;

    let batch = args.batch;
    let (c, k) = (network.au_count, network.expr_count);
    // Deterministic, kink-free fixtures: smooth pixel/landmark waves, labels
    // alternating so every column carries both polarities, and an identity
    // covariate alternating between two subjects.
    let wave_image = |phase: usize| {
        Tensor::from_fn(&[network.image_h, network.image_w], |i| {
            0.5 + 0.45 * ((i as f64 * 0.37) + phase as f64 * 1.1).sin()
        })
    };
    let wave_landmarks = |phase: usize| {
        Tensor::from_fn(&[network.landmarks, 2], |i| {
            0.4 + 0.2 * ((i + 3 * phase) as f64 * 0.61).cos()
        })
    };
    let au_images: Vec<Tensor<f64>> = (0..batch).map(wave_image).collect();
    let au_landmarks: Vec<Tensor<f64>> = (0..batch).map(wave_landmarks).collect();
    let expr_images: Vec<Tensor<f64>> = (batch..2 * batch).map(wave_image).collect();
    let expr_landmarks: Vec<Tensor<f64>> = (batch..2 * batch).map(wave_landmarks).collect();
    let au_targets = Tensor::from_fn(&[batch, c], |i| ((i / c + i % c) % 2) as f64);
    let expr_onehot = Tensor::from_fn(&[batch, k], |i| if i / k % k == i % k { 1.0 } else { 0.0 });
    let identity: Vec<f64> = (0..batch).map(|i| 0.9 - 1.3 * (i % 2) as f64).collect();
    let weights = LabelWeights::<f64>::uniform(c, k);
    let screening = ScreeningConfig::default();

    let params = BeCoMENetParams::<f64>::build(network.clone(), args.seed)?;
    let inputs: Vec<Tensor<f64>> = params.tensors().to_vec();
    let net_cfg = network.clone();
    let build = move |tape: &mut Tape<f64>, vars: &[Var]| {
        let net = ParamVars::from_vars(net_cfg.clone(), vars.to_vec())?;
        let forward = |tape: &mut Tape<f64>,
                       images: &[Tensor<f64>],
                       landmarks: &[Tensor<f64>]|
         -> become_net::Result<Var> {
            let mut rows = Vec::with_capacity(images.len());
            let mut rng = rngstream::stream(0, "eval-mode-unused");
            for (image, lm) in images.iter().zip(landmarks) {
                rows.push(net.forward_features(tape, image, lm, false, &mut rng)?);
            }
            tape.stack_rows(&rows)
        };
        let z_au = forward(tape, &au_images, &au_landmarks)?;
        let z_expr = forward(tape, &expr_images, &expr_landmarks)?;
        let au_probs = net.forward_au(tape, z_au)?;
        let expr_probs = net.forward_expr(tape, z_expr)?;
        let bgc_au = bgc_loss(tape, z_au, &au_targets, &identity, &screening)?;
        let bgc_expr = bgc_loss(tape, z_expr, &expr_onehot, &identity, &screening)?;
        losses::total_loss(
            tape,
            au_probs,
            &au_targets,
            expr_probs,
            &expr_onehot,
            Some(bgc_au),
            Some(bgc_expr),
            &weights,
        )
    };

    let report = grad_check(
        &build,
        &inputs,
        args.eps,
        Probes::Sampled { count: args.probes, seed: args.seed },
    )?;

    #[derive(Serialize)]
    struct WorstJson {
        input: usize,
        index: usize,
        analytic: f64,
        numeric: f64,
    }
    #[derive(Serialize)]
    struct ReportJson {
        probes: usize,
        skipped_nonsmooth: usize,
        max_rel_err: f64,
        tolerance: f64,
        worst: Option<WorstJson>,
    }
    run.write_json(
        "gradcheck.json",
        &ReportJson {
            probes: report.probes,
            skipped_nonsmooth: report.skipped_nonsmooth,
            max_rel_err: report.max_rel_err,
            tolerance: args.tolerance,
            worst: report.worst.map(|w| WorstJson {
                input: w.input,
                index: w.index,
                analytic: w.analytic,
                numeric: w.numeric,
            }),
        },
    )?;
    run.note(&format!("{report}"))?;

    let clean = report.probes - report.skipped_nonsmooth;
    ensure!(
        2 * clean >= report.probes,
        "too many probes crossed non-smooth boundaries: only {clean} of {} usable",
        report.probes
    );
    ensure!(
        report.max_rel_err <= args.tolerance,
        "gradient check failed: max relative error {:.3e} exceeds tolerance {:.1e}",
        report.max_rel_err,
        args.tolerance
    );
    println!(
        "max relative error {:.3e} within tolerance {:.1e} ({} probes)",
        report.max_rel_err, args.tolerance, clean
    );
    Ok(())
}
