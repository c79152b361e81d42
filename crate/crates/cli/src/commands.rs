use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Serialize;
use serde_json::{json, Value};

use irof::backend::Classifier;
use irof::baselines::{random_relevance, sobel_relevance};
use irof::dataset::{load_heatmaps, segment_dataset, Dataset};
use irof::engine::{curves_csv, evaluate, DegradationCurve, IrofResult, Method};
use irof::imagery::save_relevance;
use irof::plot::{curves_svg, mean_curve, pvalues_svg};
use irof::rng::image_seed;
use irof::segmentation::SegmentMap;
use irof::stats::sensitivity_report;

use crate::settings::{ConfigError, MethodSpec, Resolved};

/// Points on the x grid of the mean-curve plot.
const PLOT_POINTS: usize = 101;

pub fn config_echo(r: &Resolved) -> Value {
    serde_json::to_value(r).expect("settings serialize")
}

fn write(path: &Path, contents: &str) -> anyhow::Result<()> {
    fs::write(path, contents).map_err(|e| irof::Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| irof::Error::Io {
        path: dir.to_owned(),
        source: e,
    })?;
    Ok(())
}

fn with_comment(config: &Value, csv: String) -> String {
    format!("# config: {config}\n{csv}")
}

/// Inserts the config as `<metadata>` right after the opening `<svg>` tag.
fn with_metadata(config: &Value, svg: String) -> String {
    let cdata = config.to_string().replace("]]>", "]]]]><![CDATA[>");
    match svg.find("<svg").and_then(|s| svg[s..].find('>').map(|e| s + e + 1)) {
        Some(at) => format!(
            "{}\n<metadata><![CDATA[{cdata}]]></metadata>{}",
            &svg[..at],
            &svg[at..]
        ),
        None => svg,
    }
}

fn load_dataset(r: &Resolved) -> anyhow::Result<Dataset> {
    if !r.images.is_dir() {
        bail!(irof::Error::MissingInput(format!(
            "image directory {} does not exist",
            r.images.display()
        )));
    }
    let dataset = Dataset::load_dir(&r.images, r.value_range)?;
    log::info!("loaded {} images from {}", dataset.len(), r.images.display());
    Ok(dataset)
}

fn segments(r: &Resolved, dataset: &Dataset) -> anyhow::Result<Vec<SegmentMap>> {
    let seg = segment_dataset(dataset, &r.slic, r.segment_cache.as_deref())?;
    log::info!("segmented {} images ({} from cache)", seg.maps.len(), seg.reused);
    Ok(seg.maps)
}

fn connect(r: &Resolved, dataset: &Dataset) -> anyhow::Result<Classifier> {
    let mut config = r.backend()?.clone();
    config.pool_size = match r.engine.workers {
        0 => std::thread::available_parallelism().map_or(1, |n| n.get()),
        n => n,
    };
    let classifier = Classifier::connect(&config)?;
    let first = &dataset.samples()[0];
    classifier
        .self_test(&first.id, &first.image)
        .with_context(|| format!("backend self-test on {}", first.id))?;
    log::info!("connected to {}", classifier.describe());
    Ok(classifier)
}

fn methods(r: &Resolved, dataset: &Dataset) -> anyhow::Result<Vec<Method>> {
    if r.methods.is_empty() {
        bail!(ConfigError("at least one --heatmaps METHOD=DIR is required".into()));
    }
    r.methods
        .iter()
        .map(|m| {
            Ok(match m {
                MethodSpec::Heatmaps { id, dir } => {
                    Method::heatmaps(id.clone(), load_heatmaps(dir, dataset, id)?)
                }
                MethodSpec::Random { id, seed } => Method::random(id.clone(), *seed),
            })
        })
        .collect()
}

/// Engine settings with the frame dump rooted in the output directory.
fn engine_config(r: &Resolved) -> irof::engine::EngineConfig {
    let mut engine = r.engine.clone();
    if let Some(dump) = engine.dump.as_mut() {
        dump.dir = r.out_dir.join(&dump.dir);
    }
    engine
}

fn write_frame_config(r: &Resolved, config: &Value) -> anyhow::Result<()> {
    if let Some(dump) = &r.engine.dump {
        let dir = r.out_dir.join(&dump.dir);
        create_dir(&dir)?;
        write(&dir.join("config.json"), &serde_json::to_string_pretty(config)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct EvaluateReport<'a> {
    config: &'a Value,
    results: Vec<&'a IrofResult>,
}

/// `score ± se` with one decimal, the precision scores are reported at.
pub fn display_score(result: &IrofResult) -> String {
    match result.se {
        Some(se) => format!("{:.1} ± {:.1}", result.irof_score, se),
        None => format!("{:.1}", result.irof_score),
    }
}

pub fn run_evaluate(r: &Resolved) -> anyhow::Result<()> {
    let dataset = load_dataset(r)?;
    let methods = methods(r, &dataset)?;
    let classifier = connect(r, &dataset)?;
    let segs = if r.engine.scheme.needs_segments() {
        Some(segments(r, &dataset)?)
    } else {
        None
    };
    let config = config_echo(r);
    create_dir(&r.out_dir)?;
    write_frame_config(r, &config)?;
    let engine = engine_config(r);

    let mut evaluations = Vec::new();
    for method in &methods {
        let ev = evaluate(&dataset, segs.as_deref(), method, &classifier, &engine)
            .with_context(|| format!("evaluating {}", method.id))?;
        println!(
            "{}\t{}\t{}\tn={}\tskipped={}",
            ev.result.method_id,
            ev.result.scheme,
            display_score(&ev.result),
            ev.result.n_images,
            ev.result.n_skipped
        );
        evaluations.push(ev);
    }

    let report = EvaluateReport {
        config: &config,
        results: evaluations.iter().map(|e| &e.result).collect(),
    };
    write(
        &r.out_dir.join("results.json"),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    write(
        &r.out_dir.join("curves.csv"),
        &with_comment(&config, curves_csv(evaluations.iter().flat_map(|e| &e.curves))),
    )?;
    let series: Vec<(String, Vec<(f64, f64)>)> = evaluations
        .iter()
        .map(|e| {
            let curves: Vec<&DegradationCurve> = e.curves.iter().collect();
            (
                format!("{} ({})", e.result.method_id, display_score(&e.result)),
                mean_curve(&curves, PLOT_POINTS),
            )
        })
        .collect();
    let title = format!("Mean degradation curves, {}", r.engine.scheme);
    write(
        &r.out_dir.join("curves.svg"),
        &with_metadata(&config, curves_svg(&title, &series)),
    )?;
    Ok(())
}

pub fn run_sensitivity(r: &Resolved) -> anyhow::Result<()> {
    let dataset = load_dataset(r)?;
    let methods = methods(r, &dataset)?;
    let classifier = connect(r, &dataset)?;
    let segs = if r.sensitivity.evaluators.iter().any(|e| e.needs_segments()) {
        Some(segments(r, &dataset)?)
    } else {
        None
    };
    let config = config_echo(r);
    create_dir(&r.out_dir)?;
    write_frame_config(r, &config)?;
    let engine = engine_config(r);

    let mut report = sensitivity_report(
        &dataset,
        segs.as_deref(),
        &methods,
        &classifier,
        &engine,
        &r.sensitivity,
    )?;
    report.config = config.clone();

    for c in &report.cells {
        match (&c.error, c.t, c.p) {
            (None, Some(t), Some(p)) => {
                println!("{}\t{}\tt={t:.3}\tp={p:.3e}\tn={}", c.method, c.evaluator, c.n)
            }
            (err, ..) => eprintln!(
                "{}\t{}\tfailed: {}",
                c.method,
                c.evaluator,
                err.as_deref().unwrap_or("undefined statistic")
            ),
        }
    }
    write(&r.out_dir.join("sensitivity.json"), &(report.to_json() + "\n"))?;
    write(
        &r.out_dir.join("sensitivity.csv"),
        &with_comment(&config, report.to_csv()),
    )?;
    write(
        &r.out_dir.join("sensitivity_plot.csv"),
        &with_comment(&config, report.plot_csv()),
    )?;
    let title = format!("Sensitivity against random ({})", r.sensitivity.statistic.as_str());
    write(
        &r.out_dir.join("sensitivity.svg"),
        &with_metadata(&config, pvalues_svg(&title, &report)),
    )?;
    if !report.cells.is_empty() && report.cells.iter().all(|c| c.error.is_some()) {
        bail!(irof::Error::Statistics("every sensitivity cell failed".into()));
    }
    Ok(())
}

pub fn run_segment(r: &Resolved) -> anyhow::Result<()> {
    let dataset = load_dataset(r)?;
    let cache = r
        .segment_cache
        .clone()
        .unwrap_or_else(|| r.out_dir.join("segments"));
    let seg = segment_dataset(&dataset, &r.slic, Some(&cache))?;
    let counts: Vec<usize> = seg.maps.iter().map(SegmentMap::segment_count).collect();
    println!(
        "{} images, {} computed, {} reused, segments per image {}..{}, cache {}",
        seg.maps.len(),
        seg.maps.len() - seg.reused,
        seg.reused,
        counts.iter().min().unwrap_or(&0),
        counts.iter().max().unwrap_or(&0),
        cache.display()
    );
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum BaselineKind {
    Sobel,
    Random,
}

impl BaselineKind {
    fn as_str(self) -> &'static str {
        match self {
            BaselineKind::Sobel => "sobel",
            BaselineKind::Random => "random",
        }
    }
}

/// Writes one heatmap per image to `<out-dir>/<kind>/`.
pub fn run_baseline(r: &Resolved, kind: BaselineKind) -> anyhow::Result<PathBuf> {
    let dataset = load_dataset(r)?;
    let dir = r.out_dir.join(kind.as_str());
    create_dir(&dir)?;
    let mut config = json!({
        "baseline": kind.as_str(),
        "images": r.images,
        "value_range": r.value_range,
    });
    let segs = match kind {
        BaselineKind::Random => {
            config["seed"] = json!(r.seed);
            config["per_image_seed"] = json!("seed XOR image index");
            config["slic"] = json!(r.slic);
            Some(segments(r, &dataset)?)
        }
        BaselineKind::Sobel => None,
    };
    for (i, sample) in dataset.samples().iter().enumerate() {
        let map = match &segs {
            Some(maps) => random_relevance(&maps[i], image_seed(r.seed, i)),
            None => sobel_relevance(&sample.image),
        };
        save_relevance(&dir.join(format!("{}.f32", sample.id)), &map, Some(config.clone()))?;
    }
    println!("{} {} heatmaps in {}", dataset.len(), kind.as_str(), dir.display());
    Ok(dir)
}
