//! Command implementations. Every artifact-producing command records its
//! resolved arguments and outputs in `run.json`.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{self, BufWriter};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use gridscout_core::environment::{Episode, EpisodeConfig, StartPose};
use gridscout_core::evaluation::{
    exposure_curves, load_maps, reduction_report, run_episode, run_on_maps, write_csv, write_csv_with_header,
    ReportRow, ResultRow, SkippedMap, CURVES_HEADER, RESULTS_HEADER,
};
use gridscout_core::floorplan::{
    export_raster, generate_floorplan, import_raster, mean_std, DatasetManifest, DatasetStats, MANIFEST_FILE,
};
use gridscout_core::grid::{GroundTruthMap, ObservationGrid};
use gridscout_core::predictor::{f1_score, predict, serve_predictor_stream, threshold, PredictorKind, ThresholdConfig};
use gridscout_core::seed::derive_seed;
use gridscout_core::server::{serve_listener, serve_stream, ServerContext};

use crate::args::{EvalArgs, ExploreArgs, GenArgs, ServeArgs, ServePredictorArgs, SweepArgs};
use crate::manifest::{RecordedCommand, RunManifest};
use crate::{pgm, Outcome};

pub const STATS_JSON: &str = "stats.json";
pub const STATS_TEXT: &str = "stats.txt";
pub const TRACE_FILE: &str = "trace.csv";
pub const PATH_IMAGE: &str = "path.pgm";
pub const RESULT_FILE: &str = "result.csv";
pub const RESULTS_FILE: &str = "results.csv";
pub const REPORT_FILE: &str = "report.csv";
pub const SKIPPED_FILE: &str = "skipped.csv";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const TRACE_HEADER: [&str; 9] = [
    "step",
    "action",
    "x",
    "y",
    "reward",
    "coverage",
    "collided",
    "newly_exposed",
    "success",
];
pub const SWEEP_HEADER: [&str; 5] = ["delta_free", "delta_obstacle", "f1", "mean_steps", "success_rate"];

/// Collects artifacts written into one output directory.
struct Output {
    dir: PathBuf,
    written: Vec<String>,
}

impl Output {
    fn create(dir: &Path) -> anyhow::Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> anyhow::Result<()> {
        let path = self.path(name);
        fs::write(&path, data).with_context(|| format!("writing {}", path.display()))
    }

    fn csv<T: Serialize>(&mut self, name: &str, rows: &[T], header: &[&str]) -> anyhow::Result<()> {
        let path = self.path(name);
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        write_csv_with_header(rows, header, BufWriter::new(file))?;
        Ok(())
    }

    fn finish(self, mut manifest: RunManifest) -> anyhow::Result<()> {
        manifest.artifacts = self.written;
        manifest.write(&self.dir)
    }
}

fn canonical(path: &Path) -> anyhow::Result<PathBuf> {
    path.canonicalize()
        .with_context(|| format!("resolving {}", path.display()))
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> anyhow::Result<T> {
    if jobs == 0 {
        Ok(f())
    } else {
        Ok(rayon::ThreadPoolBuilder::new().num_threads(jobs).build()?.install(f))
    }
}

pub fn stats_line(s: &DatasetStats) -> String {
    format!(
        "maps {} | interior area {:.1} ({:.1}) | wall fraction {:.2}% ({:.2}%) | contour {}",
        s.maps,
        s.area_mean,
        s.area_std,
        s.wall_fraction_mean * 100.0,
        s.wall_fraction_std * 100.0,
        s.contour()
    )
}

pub fn gen(a: &GenArgs) -> anyhow::Result<Outcome> {
    a.generator(a.seed).validate()?;
    let mut out = Output::create(&a.out)?;
    let maps = with_pool(a.jobs, || {
        (0..a.count)
            .into_par_iter()
            .map(|i| generate_floorplan(&a.generator(derive_seed(a.seed, i as u64))))
            .collect::<Result<Vec<_>, _>>()
    })??;
    let mut paths = Vec::with_capacity(maps.len());
    for (i, m) in maps.iter().enumerate() {
        let name = format!("{}_{:04}.map", a.prefix, i + 1);
        export_raster(m, &out.path(&name))?;
        paths.push(PathBuf::from(name));
    }
    DatasetManifest::new(&a.out, paths).write()?;
    out.written.push(MANIFEST_FILE.to_string());
    let stats = DatasetStats::from_maps(maps.iter());
    let line = stats_line(&stats);
    out.bytes(
        STATS_JSON,
        format!("{}\n", serde_json::to_string_pretty(&stats)?).as_bytes(),
    )?;
    out.bytes(STATS_TEXT, format!("{line}\n").as_bytes())?;
    println!("{line}");
    out.finish(RunManifest::new(RecordedCommand::Gen(a.clone())))?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    action: &'static str,
    x: usize,
    y: usize,
    reward: f64,
    coverage: f64,
    collided: bool,
    newly_exposed: usize,
    success: bool,
}

fn map_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "map".to_string())
}

pub fn explore(a: &ExploreArgs) -> anyhow::Result<Outcome> {
    let mut recorded = a.clone();
    recorded.map = canonical(&a.map)?;
    let agent = a.frontier.agent(&a.planner)?;
    let cfg = a.episode.config(a.predictor.clone())?;
    let gt = Arc::new(import_raster(&recorded.map)?.map);
    let id = map_id(&recorded.map);
    let rec = run_episode(&id, gt.clone(), &agent, &cfg)?;

    let mut out = Output::create(&a.out)?;
    let last = rec.steps.len();
    let trace: Vec<TraceRow> = rec
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| TraceRow {
            step: i + 1,
            action: s.action.name(),
            x: s.pose.x,
            y: s.pose.y,
            reward: s.reward,
            coverage: s.coverage,
            collided: s.collided,
            newly_exposed: s.newly_exposed,
            success: rec.success && i + 1 == last,
        })
        .collect();
    out.csv(TRACE_FILE, &trace, &TRACE_HEADER)?;
    let path: Vec<_> = std::iter::once(rec.start)
        .chain(rec.steps.iter().map(|s| s.pose))
        .collect();
    let image = pgm::path_image(&ObservationGrid::from_ground_truth(&gt), &path);
    out.bytes(PATH_IMAGE, &image)?;
    out.csv(RESULT_FILE, &[rec.row()], &RESULTS_HEADER)?;

    println!(
        "{id}: {} in {} steps, coverage {:.2}% ({})",
        if rec.success { "success" } else { "failure" },
        rec.steps_used(),
        rec.final_coverage * 100.0,
        rec.row().label()
    );
    let mut manifest = RunManifest::new(RecordedCommand::Explore(recorded));
    manifest.resolved = Some(json!({ "agent": agent, "episode": cfg, "start": rec.start }));
    out.finish(manifest)?;
    Ok(if rec.success {
        Outcome::Success
    } else {
        Outcome::Failed(format!("episode ended with {:?}", rec.failure_class))
    })
}

type Maps = Vec<(String, Arc<GroundTruthMap>)>;

fn load_dataset(dir: &Path) -> anyhow::Result<(Maps, Vec<SkippedMap>)> {
    let manifest = DatasetManifest::load(dir)?;
    let (maps, skipped) = load_maps(&manifest);
    if maps.is_empty() {
        bail!("no usable maps in {}", dir.display());
    }
    Ok((maps, skipped))
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".to_string())
}

pub fn eval(a: &EvalArgs) -> anyhow::Result<Outcome> {
    if a.configs.is_empty() {
        bail!("at least one configuration is required");
    }
    let mut recorded = a.clone();
    recorded.dataset = canonical(&a.dataset)?;
    let (maps, skipped) = load_dataset(&recorded.dataset)?;
    let areas: HashMap<String, usize> = maps.iter().map(|(id, m)| (id.clone(), m.interior_area())).collect();

    let mut resolved = Vec::new();
    let mut runs = Vec::new();
    for c in &a.configs {
        let agent = a.frontier.agent(&c.planner)?;
        let cfg = a.episode.config(c.predictor.clone())?;
        log::info!("running {} over {} episodes", c.label(), a.episodes);
        let records = run_on_maps(&maps, &agent, &cfg, a.episodes, a.jobs)?;
        resolved.push(json!({ "label": c.label(), "agent": agent, "episode": cfg }));
        runs.push(records);
    }

    let mut out = Output::create(&a.out)?;
    let rows: Vec<Vec<ResultRow>> = runs.iter().map(|r| r.iter().map(|e| e.row()).collect()).collect();
    let all: Vec<ResultRow> = rows.iter().flatten().cloned().collect();
    out.csv(RESULTS_FILE, &all, &RESULTS_HEADER)?;
    let mut report = Vec::new();
    for (c, (records, r)) in a.configs.iter().zip(runs.iter().zip(&rows)) {
        let curves = exposure_curves(records, a.episode.max_steps);
        out.csv(&format!("curves_{}.csv", c.slug()), &curves, &CURVES_HEADER)?;
        let mut row = ReportRow::from_report(&reduction_report(&rows[0], r, Some(&areas))?);
        // episode-less configurations still carry their label
        row.configuration = c.label();
        row.baseline = a.configs[0].label();
        report.push(row);
    }
    let path = out.path(REPORT_FILE);
    write_csv(&report, BufWriter::new(File::create(&path)?))?;
    if !skipped.is_empty() {
        let path = out.path(SKIPPED_FILE);
        write_csv(&skipped, BufWriter::new(File::create(&path)?))?;
    }

    println!("configuration\tsuccesses\tsteps\treduction %");
    for r in &report {
        println!(
            "{}\t{}/{}\t{} ({})\t{} ({})",
            r.configuration,
            r.successes,
            r.episodes,
            fmt_opt(r.steps_mean),
            fmt_opt(r.steps_std),
            fmt_opt(r.reduction_pct_mean),
            fmt_opt(r.reduction_pct_std)
        );
    }
    let mut manifest = RunManifest::new(RecordedCommand::Eval(recorded));
    manifest.resolved = Some(json!({ "configs": resolved }));
    out.finish(manifest)?;

    let empty: Vec<&str> = report
        .iter()
        .filter(|r| r.successes == 0)
        .map(|r| r.configuration.as_str())
        .collect();
    Ok(if empty.is_empty() {
        Outcome::Success
    } else {
        Outcome::Failed(format!("no successful episodes for {}", empty.join(", ")))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SweepRow {
    pub delta_free: f64,
    pub delta_obstacle: f64,
    /// Mean over episodes of the thresholded step-0 prediction's F1.
    pub f1: f64,
    /// Over all episodes, failures included.
    pub mean_steps: f64,
    pub success_rate: f64,
}

pub fn sweep(a: &SweepArgs) -> anyhow::Result<Outcome> {
    if a.delta_free_grid.is_empty() || a.delta_obstacle_grid.is_empty() {
        bail!("both confidence grids need at least one value");
    }
    let grid = a
        .delta_free_grid
        .iter()
        .flat_map(|df| {
            a.delta_obstacle_grid
                .iter()
                .map(move |dob| ThresholdConfig::new(*df, *dob))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut recorded = a.clone();
    recorded.dataset = canonical(&a.dataset)?;
    let (maps, _) = load_dataset(&recorded.dataset)?;
    let agent = a.frontier.agent(&a.planner)?;
    let base = EpisodeConfig {
        coverage_target: a.coverage_target,
        max_steps: a.max_steps,
        predictor: a.predictor.clone(),
        seed: a.seed,
        ..EpisodeConfig::default()
    };
    base.validate()?;

    // step-0 predictions do not depend on the thresholds
    let initial = (0..a.episodes)
        .map(|i| {
            let (_, gt) = &maps[i % maps.len()];
            let cfg = EpisodeConfig {
                seed: derive_seed(a.seed, i as u64),
                ..base.clone()
            };
            let (ep, _) = Episode::reset(gt.clone(), cfg, StartPose::Random)?;
            let p = predict(&a.predictor, &ep.state().observed, Some(gt.clone()))?;
            Ok((p, gt.clone()))
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(grid.len());
    for th in grid {
        let f1s = initial
            .iter()
            .map(|(p, gt)| f1_score(&threshold(p, &th), gt).map(|f| f.score))
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = EpisodeConfig {
            thresholds: th,
            ..base.clone()
        };
        let records = run_on_maps(&maps, &agent, &cfg, a.episodes, a.jobs)?;
        let steps: Vec<f64> = records.iter().map(|r| r.steps_used() as f64).collect();
        let successes = records.iter().filter(|r| r.success).count();
        let row = SweepRow {
            delta_free: th.delta_free(),
            delta_obstacle: th.delta_obstacle(),
            f1: mean_std(&f1s).0,
            mean_steps: mean_std(&steps).0,
            success_rate: if records.is_empty() {
                0.0
            } else {
                successes as f64 / records.len() as f64
            },
        };
        println!(
            "delta_free {:.3} delta_obstacle {:.3}: f1 {:.4}, mean steps {:.1}, success {:.0}%",
            row.delta_free,
            row.delta_obstacle,
            row.f1,
            row.mean_steps,
            row.success_rate * 100.0
        );
        rows.push(row);
    }
    let mut out = Output::create(&a.out)?;
    out.csv(SWEEP_FILE, &rows, &SWEEP_HEADER)?;
    let mut manifest = RunManifest::new(RecordedCommand::SweepThresholds(recorded));
    manifest.resolved = Some(json!({ "agent": agent, "episode": base }));
    out.finish(manifest)?;
    Ok(Outcome::Success)
}

pub fn serve(a: &ServeArgs) -> anyhow::Result<Outcome> {
    let manifest = DatasetManifest::load(&a.dataset)?;
    let defaults = a.episode.config(a.predictor.clone())?;
    let ctx = ServerContext::from_manifest(&manifest, defaults)?;
    if ctx.map_count() == 0 {
        bail!("no usable maps in {}", a.dataset.display());
    }
    if a.stdio {
        serve_stream(ctx, io::stdin().lock(), io::stdout().lock())?;
    } else {
        let listener = TcpListener::bind((a.host.as_str(), a.port))?;
        eprintln!("serving {} maps on {}", ctx.map_count(), listener.local_addr()?);
        serve_listener(listener, ctx)?;
    }
    Ok(Outcome::Success)
}

pub fn serve_predictor(a: &ServePredictorArgs) -> anyhow::Result<Outcome> {
    if matches!(a.predictor, PredictorKind::NoisyOracle { .. }) {
        bail!("the oracle predictor needs a ground-truth map and cannot be served");
    }
    if a.stdio {
        let mut p = a.predictor.build(None)?;
        let stdout = io::stdout().lock();
        serve_predictor_stream(io::stdin().lock(), stdout, p.as_mut())?;
        return Ok(Outcome::Success);
    }
    let listener = TcpListener::bind((a.host.as_str(), a.port))?;
    eprintln!("serving predictor {} on {}", a.predictor, listener.local_addr()?);
    for stream in listener.incoming() {
        let stream = match stream {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let mut p = a.predictor.build(None)?;
        thread::spawn(move || {
            let result = stream
                .try_clone()
                .and_then(|r| serve_predictor_stream(io::BufReader::new(r), &stream, p.as_mut()));
            if let Err(e) = result {
                log::warn!("predictor session ended with error: {e}");
            }
        });
    }
    Ok(Outcome::Success)
}
