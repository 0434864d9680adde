use std::io::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use vidrep::classify::{
    cross_validate_kernel, cross_validate_linear, fit_kernel_svm, train_linear_svm, KernelSvmModel, LinearClassifier,
    LinearSvmParams,
};
use vidrep::codebook::{fit_gmm, fit_kmeans, Codebook, GmmModel, GmmParams, KMeansParams};
use vidrep::encode::{EncoderKind, FisherParams, VladParams};
use vidrep::eval::{average_precision, late_fuse, mean_ap, simstats_grouped, write_histogram, ApMode, ExemplarGroup, FusionNorm};
use vidrep::experiment::{run_on, ExperimentConfig, ExperimentReport};
use vidrep::io::{
    atomic_write, read_codes, read_descriptors, read_labels, read_model, read_pool5, read_scores, write_codes,
    write_descriptors, write_model, write_scores, CodeFile, DescriptorSet, LabelFile, ModelKind, PackedCodes, ScoreFile,
};
use vidrep::lcd::{lcd_video, SppConfig};
use vidrep::pq::{build_lut, fit_pq, pq_encode_set, score_batch, PqModel, PqParams};
use vidrep::preprocess::{fit_pca, l2_normalize_rows, prepare_frames, PcaModel};
use vidrep::{par, synth};

use crate::config::{Kernel, PipelineConfig};
use crate::{Cli, Command, UsageError};

const EXT: &str = "vdsc";

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::FitPca(_) => "fit-pca",
        Command::FitKmeans(_) => "fit-kmeans",
        Command::FitGmm(_) => "fit-gmm",
        Command::Lcd(_) => "lcd",
        Command::Encode(_) => "encode",
        Command::FitPq(_) => "fit-pq",
        Command::PqEncode(_) => "pq-encode",
        Command::Train(_) => "train",
        Command::Cv(_) => "cv",
        Command::Predict(_) => "predict",
        Command::PredictPq(_) => "predict-pq",
        Command::Eval(_) => "eval",
        Command::Fuse(_) => "fuse",
        Command::Simstats(_) => "simstats",
        Command::Synth(_) => "synth",
        Command::Ablate(_) => "ablate",
    }
}

fn set<T>(slot: &mut T, flag: Option<T>) {
    if let Some(v) = flag {
        *slot = v;
    }
}

/// Folds command-line flags into the configuration.
fn apply_flags(cfg: &mut PipelineConfig, cmd: &Command) {
    match cmd {
        Command::FitPca(a) => {
            set(&mut cfg.pca.dim, a.dim);
            set(&mut cfg.pca.eps, a.eps);
            set(&mut cfg.pca.max_frames, a.max_frames);
            cfg.pca.whiten |= a.whiten;
        }
        Command::FitKmeans(a) | Command::FitGmm(a) => {
            let c = if matches!(cmd, Command::FitKmeans(_)) { &mut cfg.kmeans } else { &mut cfg.gmm };
            set(&mut c.k, a.k);
            set(&mut c.max_iter, a.max_iter);
            set(&mut c.max_frames, a.max_frames);
        }
        Command::Lcd(a) => {
            set(&mut cfg.spp.levels, a.levels.clone());
            if a.no_spp {
                cfg.spp.enabled = false;
            }
        }
        Command::Encode(a) => {
            set(&mut cfg.encode.method, a.method);
            set(&mut cfg.encode.knn, a.knn);
            set(&mut cfg.encode.norm_order, a.norm_order);
            cfg.encode.ssr &= !a.no_ssr;
            cfg.encode.intra &= !a.no_intra;
            cfg.encode.l2 &= !a.no_l2;
        }
        Command::FitPq(a) => {
            set(&mut cfg.pq.b, a.b);
            set(&mut cfg.pq.m, a.m);
            set(&mut cfg.pq.max_iter, a.max_iter);
        }
        Command::Train(a) => {
            set(&mut cfg.svm.kernel, a.kernel);
            set(&mut cfg.svm.c, a.c);
            set(&mut cfg.svm.sigma, a.sigma);
        }
        Command::Cv(a) => {
            set(&mut cfg.svm.kernel, a.kernel);
            set(&mut cfg.svm.c_grid, a.c_grid.clone());
            set(&mut cfg.svm.sigma_grid, a.sigma_grid.clone());
            set(&mut cfg.svm.folds, a.folds);
        }
        Command::Eval(a) => cfg.eval.interpolated |= a.interpolated,
        Command::Fuse(a) => {
            if a.raw {
                cfg.fusion.norm = FusionNorm::Raw;
            }
        }
        Command::Simstats(a) => {
            set(&mut cfg.simstats.bins, a.bins);
            set(&mut cfg.simstats.grouping, a.grouping);
        }
        Command::Synth(a) => {
            set(&mut cfg.synth.events, a.events);
            set(&mut cfg.synth.train_pos, a.pos);
            set(&mut cfg.synth.train_neg, a.neg);
            set(&mut cfg.synth.test_pos, a.test_pos);
            set(&mut cfg.synth.test_neg, a.test_neg);
            set(&mut cfg.synth.dim, a.dim);
        }
        Command::Ablate(a) => {
            set(&mut cfg.ablate.pca_dims, a.pca_dims.clone());
            set(&mut cfg.ablate.ks, a.ks.clone());
            set(&mut cfg.ablate.knns, a.knns.clone());
            set(&mut cfg.ablate.ssr, a.ssr.clone());
            set(&mut cfg.ablate.intra, a.intra.clone());
            set(&mut cfg.ablate.base.synth.dim, a.synth_dim);
        }
        Command::PqEncode(_) | Command::Predict(_) | Command::PredictPq(_) => {}
    }
    // one seed drives every randomized step
    cfg.synth.seed = cfg.seed;
    cfg.ablate.base.seed = cfg.seed;
    cfg.ablate.base.synth.seed = cfg.seed;
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    set(&mut cfg.seed, cli.seed);
    set(&mut cfg.threads, cli.threads);
    apply_flags(&mut cfg, &cli.command);
    cfg.validate()?;
    if cfg.threads > 0 && !par::set_threads(cfg.threads) {
        log::warn!("thread pool already initialized; ignoring --threads {}", cfg.threads);
    }
    log::info!(
        "command={} seed={} threads={} parallel={}",
        command_name(&cli.command),
        cfg.seed,
        cfg.threads,
        par::is_parallel()
    );
    log::info!("resolved config: {}", serde_json::to_string(&cfg)?);
    match &cli.command {
        Command::FitPca(a) => fit_pca_cmd(&cfg, &a.inputs, &a.out),
        Command::FitKmeans(a) => fit_cluster_cmd(&cfg, ModelKind::Kmeans, a.pca.as_deref(), &a.inputs, &a.out),
        Command::FitGmm(a) => fit_cluster_cmd(&cfg, ModelKind::Gmm, a.pca.as_deref(), &a.inputs, &a.out),
        Command::Lcd(a) => lcd_cmd(&cfg, &a.input, &a.output),
        Command::Encode(a) => encode_cmd(&cfg, a.codebook.as_deref(), a.pca.as_deref(), &a.input, &a.output),
        Command::FitPq(a) => fit_pq_cmd(&cfg, &a.inputs, &a.out),
        Command::PqEncode(a) => pq_encode_cmd(&a.pq, &a.inputs, &a.out),
        Command::Train(a) => train_cmd(&cfg, &a.features, &a.labels, &a.out),
        Command::Cv(a) => cv_cmd(&cfg, &a.features, &a.labels, a.out.as_deref(), a.model_out.as_deref()),
        Command::Predict(a) => predict_cmd(&a.model, &a.features, a.ids.as_deref(), &a.out),
        Command::PredictPq(a) => predict_pq_cmd(&a.model, &a.pq, &a.codes, a.ids.as_deref(), &a.out),
        Command::Eval(a) => eval_cmd(&cfg, &a.scores, &a.labels),
        Command::Fuse(a) => fuse_cmd(&cfg, &a.inputs, &a.out),
        Command::Simstats(a) => simstats_cmd(&cfg, &a.features, &a.labels, a.out.as_deref()),
        Command::Synth(a) => synth_cmd(&cfg, &a.out),
        Command::Ablate(a) => ablate_cmd(&cfg, a.out.as_deref()),
    }
}

/// Files as given, directories expanded to their descriptor files in name order.
fn expand(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("listing {}", p.display()))?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<Vec<_>>>()
                .with_context(|| format!("listing {}", p.display()))?
                .into_iter()
                .filter(|f| f.extension().is_some_and(|x| x == EXT))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(UsageError("no descriptor files found in the inputs".into()).into());
    }
    Ok(out)
}

fn stem(path: &Path) -> Result<String> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(str::to_string)
        .ok_or_else(|| UsageError(format!("cannot derive a video id from {}", path.display())).into())
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<DescriptorSet>> {
    Ok(par::map(paths, |p| read_descriptors(p)).into_iter().collect::<vidrep::Result<Vec<_>>>()?)
}

/// Row sample of at most `limit` rows (0 = all), in original order.
fn sample_rows(set: DescriptorSet, limit: usize, seed: u64) -> DescriptorSet {
    if limit == 0 || set.n_items() <= limit {
        return set;
    }
    let mut idx: Vec<usize> = (0..set.n_items()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(limit);
    idx.sort_unstable();
    set.select(&idx)
}

fn load_rows(inputs: &[PathBuf], limit: usize, seed: u64) -> Result<DescriptorSet> {
    let sets = read_all(&expand(inputs)?)?;
    let all = DescriptorSet::concat(&sets)?;
    log::info!("loaded {} rows of dim {}", all.n_items(), all.dim());
    Ok(sample_rows(all, limit, seed))
}

fn single_row(set: DescriptorSet, path: &Path) -> Result<Vec<f32>> {
    if set.n_items() != 1 {
        return Err(vidrep::Error::Shape(format!("{} holds {} rows, expected one video vector", path.display(), set.n_items())).into());
    }
    Ok(set.into_vec())
}

/// Stacks `<dir>/<id>.vdsc` for each id.
fn load_by_ids(dir: &Path, ids: &[String]) -> Result<DescriptorSet> {
    let paths: Vec<PathBuf> = ids.iter().map(|id| dir.join(format!("{id}.{EXT}"))).collect();
    let rows = read_all(&paths)?
        .into_iter()
        .zip(&paths)
        .map(|(s, p)| single_row(s, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(DescriptorSet::from_rows(&rows)?)
}

fn load_pca(path: Option<&Path>) -> Result<Option<PcaModel>> {
    path.map(|p| Ok(PcaModel::from_model_file(read_model(p)?)?)).transpose()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let bytes = serde_json::to_vec_pretty(value)?;
    atomic_write(path, |w| w.write_all(&bytes))?;
    Ok(())
}

fn fit_pca_cmd(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let frames = l2_normalize_rows(&load_rows(inputs, cfg.pca.max_frames, cfg.seed)?);
    let model = fit_pca(&frames, cfg.pca.dim, cfg.pca.whiten, cfg.pca.eps)?;
    write_model(out, &model.to_model_file())?;
    log::info!("wrote pca {} -> {} to {}", model.input_dim(), model.output_dim(), out.display());
    Ok(())
}

fn fit_cluster_cmd(cfg: &PipelineConfig, kind: ModelKind, pca: Option<&Path>, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let c = if kind == ModelKind::Kmeans { &cfg.kmeans } else { &cfg.gmm };
    let pca = load_pca(pca)?;
    let frames = prepare_frames(&load_rows(inputs, c.max_frames, cfg.seed)?, pca.as_ref())?;
    let model = if kind == ModelKind::Kmeans {
        let params = KMeansParams {
            max_iter: c.max_iter,
            tol: c.tol,
            ..KMeansParams::new(c.k, cfg.seed)
        };
        fit_kmeans(&frames, &params)?.to_model_file()
    } else {
        let params = GmmParams {
            max_iter: c.max_iter,
            tol: c.tol,
            ..GmmParams::new(c.k, cfg.seed)
        };
        fit_gmm(&frames, &params)?.to_model_file()
    };
    write_model(out, &model)?;
    log::info!("wrote {} with K={} to {}", kind.as_str(), c.k, out.display());
    Ok(())
}

fn lcd_cmd(cfg: &PipelineConfig, input: &Path, output: &Path) -> Result<()> {
    let tensor = read_pool5(input)?;
    let spp = cfg.spp.enabled.then(|| SppConfig::new(cfg.spp.levels.clone()));
    let lcd = lcd_video(&tensor, spp.as_ref())?;
    write_descriptors(output, &lcd)?;
    log::info!("wrote {} latent concept descriptors of dim {}", lcd.n_items(), lcd.dim());
    Ok(())
}

enum Trained {
    Average,
    Fisher(GmmModel, FisherParams),
    Vlad(Codebook, VladParams),
}

impl Trained {
    fn encoder(&self) -> vidrep::encode::Encoder<'_> {
        use vidrep::encode::Encoder;
        match self {
            Trained::Average => Encoder::Average,
            Trained::Fisher(g, p) => Encoder::Fisher(g, *p),
            Trained::Vlad(c, p) => Encoder::Vlad(c, *p),
        }
    }
}

fn encode_cmd(cfg: &PipelineConfig, codebook: Option<&Path>, pca: Option<&Path>, input: &Path, output: &Path) -> Result<()> {
    let e = &cfg.encode;
    let need_codebook = || -> Result<vidrep::io::ModelFile> {
        let path = codebook.ok_or_else(|| UsageError(format!("--codebook is required for method {}", e.method.as_str())))?;
        Ok(read_model(path)?)
    };
    let trained = match e.method {
        EncoderKind::Avg => Trained::Average,
        EncoderKind::Fv => Trained::Fisher(GmmModel::from_model_file(need_codebook()?)?, FisherParams { ssr: e.ssr, l2: e.l2 }),
        EncoderKind::Vlad => Trained::Vlad(
            Codebook::from_model_file(need_codebook()?)?,
            VladParams {
                knn: e.knn,
                intra: e.intra,
                ssr: e.ssr,
                l2: e.l2,
                order: e.norm_order,
            },
        ),
    };
    let pca = load_pca(pca)?;
    let encoder = trained.encoder();
    let prepare = |frames: DescriptorSet| -> vidrep::Result<DescriptorSet> {
        match (e.method, pca.as_ref()) {
            (EncoderKind::Avg, None) => Ok(frames),
            (_, p) => prepare_frames(&frames, p),
        }
    };
    let encode_one = |src: &Path, dst: &Path| -> vidrep::Result<usize> {
        let rep = encoder.encode(&prepare(read_descriptors(src)?)?)?;
        write_descriptors(dst, &rep.to_descriptor_set()?)?;
        Ok(rep.dim())
    };
    if input.is_dir() {
        std::fs::create_dir_all(output).with_context(|| format!("creating {}", output.display()))?;
        let files = expand(&[input.to_path_buf()])?;
        let targets: Vec<PathBuf> = files
            .iter()
            .map(|f| output.join(f.file_name().expect("listed files have names")))
            .collect();
        let dims = par::map_range(files.len(), |i| encode_one(&files[i], &targets[i]))
            .into_iter()
            .collect::<vidrep::Result<Vec<_>>>()?;
        log::info!("encoded {} videos into {} dims", dims.len(), dims[0]);
    } else {
        let dim = encode_one(input, output)?;
        log::info!("encoded {} into {dim} dims", input.display());
    }
    Ok(())
}

fn fit_pq_cmd(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let x = load_rows(inputs, 0, cfg.seed)?;
    let params = PqParams {
        max_iter: cfg.pq.max_iter,
        ..PqParams::new(cfg.pq.b, cfg.pq.m, cfg.seed)
    };
    let model = fit_pq(&x, &params)?;
    write_model(out, &model.to_model_file())?;
    log::info!(
        "wrote pq with {} subspaces of {} centers, compression {}x",
        model.n_sub(),
        model.n_centers(),
        model.compression_ratio()
    );
    Ok(())
}

fn pq_encode_cmd(pq: &Path, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let model = PqModel::from_model_file(read_model(pq)?)?;
    let files = expand(inputs)?;
    let ids = files.iter().map(|f| stem(f)).collect::<Result<Vec<_>>>()?;
    let rows = read_all(&files)?
        .into_iter()
        .zip(&files)
        .map(|(s, p)| single_row(s, p))
        .collect::<Result<Vec<_>>>()?;
    let codes = pq_encode_set(&model, &DescriptorSet::from_rows(&rows)?)?;
    write_codes(out, &CodeFile { ids, codes })?;
    log::info!("wrote {} codes of {} bytes", rows.len(), model.empty_codes().bytes_per_code());
    Ok(())
}

fn labelled(features: &Path, labels: &Path) -> Result<(DescriptorSet, Vec<bool>)> {
    let labels = read_labels(labels)?;
    let ids: Vec<String> = labels.entries.iter().map(|(id, _)| id.clone()).collect();
    let y = labels.entries.iter().map(|(_, l)| *l).collect();
    Ok((load_by_ids(features, &ids)?, y))
}

fn train_model(cfg: &PipelineConfig, kernel: Kernel, c: f64, sigma: f64, x: &DescriptorSet, y: &[bool]) -> Result<vidrep::io::ModelFile> {
    Ok(match kernel.kind() {
        None => {
            let params = LinearSvmParams {
                gap_tol: cfg.svm.gap_tol,
                ..LinearSvmParams::new(c, cfg.seed)
            };
            train_linear_svm(x, y, &params)?.to_model_file()
        }
        Some(kind) => fit_kernel_svm(x, y, kind, sigma, c)?.to_model_file(),
    })
}

fn train_cmd(cfg: &PipelineConfig, features: &Path, labels: &Path, out: &Path) -> Result<()> {
    let (x, y) = labelled(features, labels)?;
    let model = train_model(cfg, cfg.svm.kernel, cfg.svm.c, cfg.svm.sigma, &x, &y)?;
    write_model(out, &model)?;
    log::info!("trained {} on {} videos, wrote {}", model.kind.as_str(), x.n_items(), out.display());
    Ok(())
}

fn cv_cmd(cfg: &PipelineConfig, features: &Path, labels: &Path, out: Option<&Path>, model_out: Option<&Path>) -> Result<()> {
    let (x, y) = labelled(features, labels)?;
    let s = &cfg.svm;
    let result = match s.kernel.kind() {
        None => cross_validate_linear(&x, &y, &s.c_grid, s.folds, cfg.seed)?,
        Some(kind) => cross_validate_kernel(&x, &y, kind, &s.c_grid, &s.sigma_grid, s.folds, cfg.seed)?,
    };
    println!("{}", serde_json::to_string(&result)?);
    if let Some(path) = out {
        write_json(path, &result)?;
    }
    if let Some(path) = model_out {
        let model = train_model(cfg, s.kernel, result.best.c, result.best.sigma.unwrap_or(s.sigma), &x, &y)?;
        write_model(path, &model)?;
    }
    Ok(())
}

/// A trained detector of either family.
enum Detector {
    Linear(LinearClassifier),
    Kernel(KernelSvmModel),
}

fn load_detector(path: &Path) -> Result<Detector> {
    let m = read_model(path)?;
    match m.kind {
        ModelKind::Linsvm => Ok(Detector::Linear(LinearClassifier::from_model_file(m)?)),
        ModelKind::Ksvm => Ok(Detector::Kernel(KernelSvmModel::from_model_file(m)?)),
        other => Err(UsageError(format!("{} is a {} model, not a classifier", path.display(), other.as_str())).into()),
    }
}

fn list_ids(dir: &Path) -> Result<Vec<String>> {
    expand(&[dir.to_path_buf()])?.iter().map(|p| stem(p)).collect()
}

fn to_score_file(ids: Vec<String>, scores: &[f64]) -> Result<ScoreFile> {
    Ok(ScoreFile::new(ids.into_iter().zip(scores).map(|(id, &s)| (id, s as f32)).collect())?)
}

fn predict_cmd(model: &Path, features: &Path, ids: Option<&Path>, out: &Path) -> Result<()> {
    let detector = load_detector(model)?;
    let ids = match ids {
        Some(p) => read_labels(p)?.entries.into_iter().map(|(id, _)| id).collect(),
        None => list_ids(features)?,
    };
    let x = load_by_ids(features, &ids)?;
    let scores = match &detector {
        Detector::Linear(m) => m.predict_set(&x)?,
        Detector::Kernel(m) => m.predict_set(&x)?,
    };
    write_scores(out, &to_score_file(ids, &scores)?)?;
    log::info!("scored {} videos", x.n_items());
    Ok(())
}

fn predict_pq_cmd(model: &Path, pq: &Path, codes: &Path, ids: Option<&Path>, out: &Path) -> Result<()> {
    let Detector::Linear(clf) = load_detector(model)? else {
        return Err(UsageError("compressed prediction needs a linear model".into()).into());
    };
    let pq = PqModel::from_model_file(read_model(pq)?)?;
    let mut file = read_codes(codes)?;
    if let Some(p) = ids {
        file = select_codes(file, &read_labels(p)?)?;
    }
    let lut = build_lut(&pq, clf.w(), clf.bias())?;
    let scores = score_batch(&lut, &file.codes)?;
    write_scores(out, &to_score_file(file.ids, &scores)?)?;
    log::info!("scored {} compressed videos", scores.len());
    Ok(())
}

/// Codes of the labelled videos, in label-file order.
fn select_codes(file: CodeFile, labels: &LabelFile) -> Result<CodeFile> {
    let index: std::collections::HashMap<&str, usize> = file.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut codes = PackedCodes::new(file.codes.n_sub(), file.codes.bits())?;
    let mut ids = Vec::with_capacity(labels.entries.len());
    for (id, _) in &labels.entries {
        let &i = index
            .get(id.as_str())
            .ok_or_else(|| vidrep::Error::Shape(format!("no code for video {id:?}")))?;
        codes.push(&file.codes.get(i))?;
        ids.push(id.clone());
    }
    Ok(CodeFile { ids, codes })
}

fn eval_cmd(cfg: &PipelineConfig, scores: &[PathBuf], labels: &[PathBuf]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(UsageError(format!("{} score files but {} label files", scores.len(), labels.len())).into());
    }
    let mode = if cfg.eval.interpolated { ApMode::Interpolated11 } else { ApMode::NonInterpolated };
    let mut rows = Vec::new();
    let mut aps = Vec::new();
    for (s, l) in scores.iter().zip(labels) {
        let ap = average_precision(&read_scores(s)?, &read_labels(l)?, mode)?;
        rows.push(serde_json::json!({"scores": s, "labels": l, "ap": ap}));
        aps.push(ap);
    }
    let summary = serde_json::json!({"events": rows, "map": mean_ap(&aps)?});
    println!("{summary}");
    Ok(())
}

fn fuse_cmd(cfg: &PipelineConfig, inputs: &[PathBuf], out: &Path) -> Result<()> {
    let files = inputs.iter().map(read_scores).collect::<vidrep::Result<Vec<_>>>()?;
    let fused = late_fuse(&files, cfg.fusion.norm)?;
    write_scores(out, &fused)?;
    log::info!("fused {} score files over {} videos", files.len(), fused.entries.len());
    Ok(())
}

fn split_labels(labels: &LabelFile) -> (Vec<String>, Vec<String>) {
    let pos = labels.entries.iter().filter(|(_, l)| *l).map(|(id, _)| id.clone()).collect();
    let neg = labels.entries.iter().filter(|(_, l)| !*l).map(|(id, _)| id.clone()).collect();
    (pos, neg)
}

fn simstats_cmd(cfg: &PipelineConfig, features: &Path, labels: &[PathBuf], out: Option<&Path>) -> Result<()> {
    let mut sets = Vec::new();
    for l in labels {
        let (pos, neg) = split_labels(&read_labels(l)?);
        sets.push((load_by_ids(features, &pos)?, load_by_ids(features, &neg)?));
    }
    let groups: Vec<ExemplarGroup<'_>> = sets
        .iter()
        .map(|(p, n)| ExemplarGroup { positives: p, negatives: n })
        .collect();
    let h = simstats_grouped(&groups, cfg.simstats.grouping, cfg.simstats.bins)?;
    if let Some(path) = out {
        write_histogram(path, &h)?;
    }
    let summary = serde_json::json!({
        "pos_pos_mean": h.pos_pos_mean,
        "pos_neg_mean": h.pos_neg_mean,
        "pos_pos_pairs": h.pos_pos_pairs,
        "pos_neg_pairs": h.pos_neg_pairs,
    });
    println!("{summary}");
    Ok(())
}

fn synth_cmd(cfg: &PipelineConfig, out: &Path) -> Result<()> {
    let corpus = synth::generate(&cfg.synth)?;
    corpus.write(out)?;
    log::info!("wrote {} videos and {} events to {}", corpus.videos.len(), corpus.events(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct AblationRun {
    axis: &'static str,
    value: String,
    report: ExperimentReport,
}

fn ablate_cmd(cfg: &PipelineConfig, out: Option<&Path>) -> Result<()> {
    let a = &cfg.ablate;
    let base = &a.base;
    let mut plan: Vec<(&'static str, String, ExperimentConfig)> = vec![("base", "-".into(), base.clone())];
    for &d in &a.pca_dims {
        plan.push(("pca_dim", d.to_string(), ExperimentConfig { pca_dim: Some(d), ..base.clone() }));
    }
    for &k in &a.ks {
        plan.push(("k", k.to_string(), ExperimentConfig { k, ..base.clone() }));
    }
    for &knn in &a.knns {
        plan.push(("knn", knn.to_string(), ExperimentConfig { knn, ..base.clone() }));
    }
    for &ssr in &a.ssr {
        plan.push(("ssr", ssr.to_string(), ExperimentConfig { ssr, ..base.clone() }));
    }
    for &intra in &a.intra {
        plan.push(("intra", intra.to_string(), ExperimentConfig { intra, ..base.clone() }));
    }
    for (_, _, c) in &plan {
        c.validate().map_err(|e| UsageError(format!("ablation setting: {e}")))?;
    }
    let corpus = synth::generate(&base.synth)?;
    let mut runs = Vec::with_capacity(plan.len());
    for (axis, value, c) in plan {
        let report = run_on(&c, &corpus)?;
        for e in &report.encoders {
            println!(
                "{axis}={value} encoder={} dim={} map={:.4} pos_pos={:.4} pos_neg={:.4}",
                e.encoder.as_str(),
                e.dim,
                e.map,
                e.pos_pos_mean,
                e.pos_neg_mean
            );
        }
        runs.push(AblationRun { axis, value, report });
    }
    if let Some(path) = out {
        write_json(path, &runs)?;
    }
    Ok(())
}
