use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use fgdata_core::analyze::{
    bilinear_resize, compare_distributions, grad_cam, heatmap_overlay, image_tensor, scatter_image,
    write_points_csv, CompareConfig, MetricSpace, TinyConvNet, TINY_LAYERS,
};
use fgdata_core::bench::{
    default_backbones, infer_pairs, make_cross_protocol, published_cross_eval, render_bar_chart_svg, run_experiment,
    summarize_claims, DataLoader, ManifestLoader, ReferenceClaims, ResultTable, ResultsStore, SyntheticFeatures,
    SyntheticLoader, TrainerRegistry,
};
use fgdata_core::config::{RejectedPolicy, RunConfig};
use fgdata_core::expand::{extract_contours, foreground_histogram, replace_background};
use fgdata_core::export::export_release;
use fgdata_core::fixtures::{write_corpus, FixtureCorpus, FixtureSpec};
use fgdata_core::manifest::{load_source_dataset, IngestOptions};
use fgdata_core::models::BackendRegistry;
use fgdata_core::pipeline::{load_rgb, DatasetRoots};
use fgdata_core::qa::{serve, ReviewContext, ReviewSession, ServerState};
use fgdata_core::{load_manifest, save_manifest, DatasetKind, DatasetManifest, Pipeline, Split};
use ndarray::Array2;

use crate::{
    AnalyzeCommand, BenchCommand, BenchReportArgs, BenchRunArgs, CamArgs, Cli, Command, ConfigArgs, ExpandArgs,
    ExportArgs, FixturesArgs, IngestArgs, ProcessArgs, RejectedArg, ReviewArgs, SessionArgs, SplitArg, TsneArgs,
};

/// Largest side fed to the demonstration CAM network; it is evaluated naively.
const CAM_MAX_SIDE: u32 = 96;

pub fn run(cli: Cli) -> Result<()> {
    let Cli {
        config,
        overrides,
        command,
    } = cli;
    let resolve = |kind: DatasetKind| -> Result<RunConfig> {
        let run = RunConfig::resolve(RunConfig::for_kind(kind), config.as_deref(), &overrides)?;
        println!("config-digest: {}", run.digest());
        Ok(run)
    };
    match command {
        Command::Ingest(a) => {
            let kind: DatasetKind = a.kind.parse().map_err(anyhow::Error::msg)?;
            ingest(resolve(kind)?, kind, a)
        }
        Command::Process(a) => {
            let manifest = load_manifest(&a.manifest).with_context(|| a.manifest.display().to_string())?;
            process(resolve(manifest.kind)?, manifest, a)
        }
        Command::ReviewServe(a) => {
            let manifest = load_manifest(&a.session.manifest)?;
            review_serve(resolve(manifest.kind)?, manifest, a)
        }
        Command::Export(a) => {
            let manifest = load_manifest(&a.session.manifest)?;
            export(resolve(manifest.kind)?, manifest, a)
        }
        Command::Expand(a) => {
            resolve(DatasetKind::Generic)?;
            expand(a)
        }
        Command::Bench(BenchCommand::Run(a)) => bench_run(resolve(DatasetKind::Generic)?, a),
        Command::Bench(BenchCommand::Report(a)) => bench_report(a),
        Command::Analyze(AnalyzeCommand::Tsne(a)) => tsne(resolve(DatasetKind::Generic)?, a),
        Command::Analyze(AnalyzeCommand::Cam(a)) => cam(a),
        Command::Fixtures(a) => fixtures(a),
        Command::Config(ConfigArgs { kind }) => {
            let kind: DatasetKind = kind.parse().map_err(anyhow::Error::msg)?;
            print!("{}", resolve(kind)?.to_toml());
            Ok(())
        }
    }
}

fn ingest(run: RunConfig, kind: DatasetKind, a: IngestArgs) -> Result<()> {
    let opts = IngestOptions {
        verify_images: !a.no_verify,
        name: a.name,
    };
    let report = load_source_dataset(&a.root, kind, &opts)?;
    for issue in &report.issues {
        eprintln!("skipped {}: {}", issue.path, issue.message);
    }
    let mut manifest = report.manifest;
    manifest.provenance.config_digest = Some(run.digest());
    save_manifest(&manifest, &a.out)?;
    println!(
        "{}: {} records, {} classes, {} skipped -> {}",
        manifest.name,
        manifest.records.len(),
        manifest.classes.len(),
        report.issues.len(),
        a.out.display()
    );
    Ok(())
}

fn process(mut run: RunConfig, manifest: DatasetManifest, a: ProcessArgs) -> Result<()> {
    if let Some(id) = a.detector {
        run.detector.backend_id = id;
    }
    if let Some(id) = a.segmenter {
        run.segmenter.backend_id = id;
    }
    let workers = a.workers.unwrap_or(run.workers).max(1);
    let pipeline = Pipeline::new(&BackendRegistry::default(), run.pipeline())?.with_digest(run.digest());
    let roots = DatasetRoots::new(&a.source_root, &a.out_root);
    let (out, stats) = pipeline.process_dataset(&manifest, &roots, workers)?;
    let path = a.out.unwrap_or_else(|| a.out_root.join("manifest.jsonl"));
    save_manifest(&out, &path)?;
    println!("{}", serde_json::to_string_pretty(&stats)?);
    println!("wrote {} ({} records)", path.display(), out.records.len());
    Ok(())
}

fn open_session(run: &RunConfig, manifest: DatasetManifest, s: &SessionArgs) -> Result<ReviewSession> {
    let cfg = run.pipeline();
    let segmenter = BackendRegistry::default().segmenter(&cfg.segmenter)?;
    let ctx = ReviewContext {
        segmenter,
        vocabulary: cfg.detector.vocabulary,
        composite: cfg.composite,
        thresholds: cfg.thresholds,
        roots: DatasetRoots::new(&s.source_root, &s.out_root),
    };
    let log = s.log.clone().unwrap_or_else(|| default_log(&s.manifest));
    Ok(ReviewSession::open(manifest, ctx, Some(log))?)
}

fn default_log(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().unwrap_or_default().to_os_string();
    name.push(".review.jsonl");
    manifest.with_file_name(name)
}

fn review_serve(run: RunConfig, manifest: DatasetManifest, a: ReviewArgs) -> Result<()> {
    let session = open_session(&run, manifest, &a.session)?;
    let stats = session.stats();
    let mut state = ServerState::new(session);
    if let Some(dir) = a.ui_dir {
        state = state.with_ui_dir(dir);
    }
    if let Some(path) = a.state {
        state = state.with_state_path(path);
    }
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async {
        let listener = tokio::net::TcpListener::bind(&a.addr)
            .await
            .with_context(|| format!("bind {}", a.addr))?;
        println!(
            "review server on http://{} ({} records, {} awaiting review)",
            listener.local_addr()?,
            stats.processed,
            stats.queue_depth
        );
        serve(listener, Arc::new(state)).await?;
        Ok(())
    })
}

fn export(run: RunConfig, manifest: DatasetManifest, a: ExportArgs) -> Result<()> {
    let policy = match a.rejected {
        Some(RejectedArg::Drop) => RejectedPolicy::Drop,
        Some(RejectedArg::KeepSource) => RejectedPolicy::KeepSource,
        None => run.export.rejected,
    };
    let session = open_session(&run, manifest, &a.session)?;
    let roots = session.context().roots.clone();
    let (release, report) = export_release(session.manifest(), &roots, &a.dest, policy)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    println!("released {} records of {} to {}", release.records.len(), release.name, a.dest.display());
    Ok(())
}

fn expand(a: ExpandArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    fs::create_dir_all(&a.out)?;
    let background = a.background.as_deref().map(load_rgb).transpose()?;
    let mut contours = BufWriter::new(fs::File::create(a.out.join("contours.jsonl"))?);
    let mut histograms = BufWriter::new(fs::File::create(a.out.join("histograms.jsonl"))?);
    let (mut done, mut skipped) = (0usize, 0usize);
    for r in &manifest.records {
        let Some(mask) = r.mask.as_ref().filter(|_| r.fg_path.is_some()) else {
            skipped += 1;
            continue;
        };
        let mask = mask.decode()?;
        let image = load_rgb(&a.source_root.join(&r.source_path))?;
        let c = extract_contours(&mask)?;
        writeln!(contours, "{}", serde_json::json!({"record_id": r.record_id, "contours": c}))?;
        let h = foreground_histogram(&image, &mask, a.bins)?;
        writeln!(histograms, "{}", serde_json::json!({"record_id": r.record_id, "histogram": h}))?;
        if let Some(bg) = &background {
            let (w, hgt) = image.dimensions();
            let bg = image::imageops::resize(bg, w, hgt, image::imageops::FilterType::Triangle);
            let out = replace_background(&image, &mask, &bg)?;
            let path = a.out.join("replaced").join(Path::new(&r.source_path).with_extension("png"));
            fs::create_dir_all(path.parent().expect("joined path has a parent"))?;
            out.save(&path).with_context(|| path.display().to_string())?;
        }
        done += 1;
    }
    contours.flush()?;
    histograms.flush()?;
    println!("expanded {done} records, skipped {skipped} without a usable mask -> {}", a.out.display());
    Ok(())
}

fn parse_dataset(raw: &str) -> Result<(PathBuf, PathBuf)> {
    let (m, root) = raw
        .split_once('=')
        .with_context(|| format!("`--dataset {raw}` must look like MANIFEST=ROOT"))?;
    Ok((m.into(), root.into()))
}

fn bench_run(run: RunConfig, a: BenchRunArgs) -> Result<()> {
    let seed = a.seed.unwrap_or(run.bench.seed);
    let backbones = if a.backbones.is_empty() { run.bench.backbones.clone() } else { a.backbones };
    let (loader, pairs): (Box<dyn DataLoader>, Vec<(String, String)>) = match (&a.synthetic, a.datasets.is_empty()) {
        (Some(name), _) => {
            let l = SyntheticLoader::new(name, run.bench.synthetic.clone(), seed);
            let pair = (l.name.clone(), l.fg_name());
            (Box::new(l), vec![pair])
        }
        (None, true) => bail!("give --synthetic NAME or at least one --dataset MANIFEST=ROOT"),
        (None, false) => {
            let extractor = BackendRegistry::default().extractor(&run.extractor)?;
            let mut l = ManifestLoader::new(extractor, run.extractor.clone());
            for raw in &a.datasets {
                let (m, root) = parse_dataset(raw)?;
                l.add(load_manifest(&m).with_context(|| m.display().to_string())?, root);
            }
            let pairs = infer_pairs(&l.names());
            if pairs.is_empty() {
                bail!("no X / X_FG manifest pair among {:?}", l.names());
            }
            (Box::new(l), pairs)
        }
    };
    let ids: Vec<&str> = backbones.iter().map(String::as_str).collect();
    let mut specs = Vec::new();
    for (s, f) in &pairs {
        for mut spec in make_cross_protocol(s, f, &ids, seed)? {
            spec.hyperparams = run.bench.hyperparams.clone();
            specs.push(spec);
        }
    }
    let mut store = ResultsStore::open(&a.results)?;
    let trainers = TrainerRegistry::default();
    if a.workers.is_some_and(|w| w > 1) {
        eprintln!("note: experiments run sequentially; --workers is accepted for external trainers only");
    }
    let total = specs.len();
    for (i, spec) in specs.iter().enumerate() {
        let r = run_experiment(spec, &trainers, loader.as_ref(), Some(&mut store))?;
        println!(
            "[{}/{total}] {} train={} test={} top1={:.2} (n={})",
            i + 1,
            spec.backbone,
            spec.train,
            spec.test,
            r.top1,
            r.n_test
        );
    }
    let table = ResultTable::from_results(&store.results());
    println!("{}", table.render_text(&pairs, &backbones));
    println!("results in {}", store.dir().display());
    Ok(())
}

fn bench_report(a: BenchReportArgs) -> Result<()> {
    let table = match (&a.results, a.published) {
        (_, true) => published_cross_eval(),
        (Some(dir), false) => ResultTable::from_results(&ResultsStore::open(dir)?.results()),
        (None, false) => bail!("give --results DIR or --published"),
    };
    let pairs = infer_pairs(&table.manifest_names());
    if pairs.is_empty() {
        bail!("no X / X_FG manifest pairs in the results");
    }
    let backbones = default_backbones(&table);
    println!("{}", table.render_text(&pairs, &backbones));
    match summarize_claims(&table, &pairs) {
        Ok(summary) => println!("{}", summary.render(&ReferenceClaims::default())),
        Err(e) => eprintln!("claim summary unavailable: {e}"),
    }
    if let Some(path) = &a.csv {
        fs::write(path, table.render_csv(&pairs, &backbones))?;
    }
    if let Some(dir) = &a.charts {
        fs::create_dir_all(dir)?;
        for pair in &pairs {
            fs::write(dir.join(format!("{}.svg", pair.0)), render_bar_chart_svg(&table, pair, &backbones))?;
        }
    }
    Ok(())
}

fn tsne(run: RunConfig, a: TsneArgs) -> Result<()> {
    let split = match a.split {
        Some(SplitArg::Train) => Split::Train,
        _ => Split::Test,
    };
    let (source, fg) = match (a.synthetic, &a.source, &a.fg) {
        (Some(per_class), _, _) => {
            let s = SyntheticFeatures::generate(&run.bench.synthetic, per_class, run.bench.seed, run.bench.seed + 1);
            ((s.source, s.labels.clone()), (s.fg, s.labels))
        }
        (None, Some(src), Some(fg)) => {
            let extractor = BackendRegistry::default().extractor(&run.extractor)?;
            let mut l = ManifestLoader::new(extractor, run.extractor.clone());
            let sm = load_manifest(src)?;
            let fm = load_manifest(fg)?;
            let (sn, fname) = (sm.name.clone(), fm.name.clone());
            l.add(sm, a.source_root.clone().expect("clap requires source_root"));
            l.add(fm, a.fg_root.clone().expect("clap requires fg_root"));
            let s = l.load(&sn, split)?;
            let f = l.load(&fname, split)?;
            ((s.features, s.labels), (f.features, f.labels))
        }
        _ => bail!("give --synthetic N or both --source/--source-root and --fg/--fg-root"),
    };
    let cfg = CompareConfig {
        tsne: run.tsne.clone(),
        metric_space: MetricSpace::Embedding,
    };
    let cmp = compare_distributions((&source.0, &source.1), (&fg.0, &fg.1), &cfg)?;
    fs::create_dir_all(&a.out)?;
    for (name, pts, labels) in [("source", &cmp.source_2d, &source.1), ("fg", &cmp.fg_2d, &fg.1)] {
        write_scatter(&a.out, name, pts, labels)?;
    }
    let report = serde_json::json!({
        "tsne": cfg.tsne,
        "metric_space": cfg.metric_space,
        "source": cmp.source,
        "fg": cmp.fg,
    });
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn write_scatter(dir: &Path, name: &str, pts: &Array2<f64>, labels: &[usize]) -> Result<()> {
    scatter_image(pts, labels, 512)?.save(dir.join(format!("{name}.png")))?;
    write_points_csv(&dir.join(format!("{name}.csv")), pts, labels)?;
    Ok(())
}

fn cam(a: CamArgs) -> Result<()> {
    if !TINY_LAYERS.contains(&a.layer.as_str()) {
        bail!("layer `{}` is not one of {:?}", a.layer, TINY_LAYERS);
    }
    let image = load_rgb(&a.image)?;
    let (w, h) = image.dimensions();
    let scale = (CAM_MAX_SIDE as f64 / w.max(h) as f64).min(1.0);
    let (sw, sh) = (((w as f64 * scale).round() as u32).max(1), ((h as f64 * scale).round() as u32).max(1));
    let small = image::imageops::resize(&image, sw, sh, image::imageops::FilterType::Triangle);
    let net = TinyConvNet::random(3, 8, 16, a.target.max(1) + 1, a.seed);
    let cam = grad_cam(&net, &image_tensor(&small), a.target, &a.layer)?;
    let heatmap = bilinear_resize(&cam.heatmap, h as usize, w as usize);
    let overlay = heatmap_overlay(&image, &heatmap, a.alpha)?;
    overlay.save(&a.out).with_context(|| a.out.display().to_string())?;
    println!(
        "{} layer={} target={} degenerate={} -> {}",
        a.image.display(),
        a.layer,
        a.target,
        cam.degenerate,
        a.out.display()
    );
    Ok(())
}

fn fixtures(a: FixturesArgs) -> Result<()> {
    let spec = FixtureSpec {
        clean: a.clean,
        seed: a.seed,
        ..FixtureSpec::default()
    };
    let corpus = write_corpus(&a.out, &spec)?;
    let manifest = a.out.join("source.jsonl");
    save_manifest(&corpus.manifest, &manifest)?;
    let cfg = FixtureCorpus::pipeline_config();
    let run = RunConfig {
        detector: cfg.detector,
        segmenter: cfg.segmenter,
        composite: cfg.composite,
        thresholds: cfg.thresholds,
        ..RunConfig::for_kind(DatasetKind::Generic)
    };
    fs::write(a.out.join("fixture.toml"), run.to_toml())?;
    println!(
        "wrote {} images ({} expected flags) to {}; manifest {}, config {}",
        corpus.manifest.records.len(),
        corpus.expected.len(),
        a.out.display(),
        manifest.display(),
        a.out.join("fixture.toml").display()
    );
    Ok(())
}
