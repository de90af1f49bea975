use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};

use gridscout::commands::{stats_line, SweepRow, PATH_IMAGE, RESULTS_FILE, SWEEP_FILE, TRACE_FILE};
use gridscout::{main_with_args, pgm, RunManifest, EXIT_ERROR, EXIT_FAILED, EXIT_SUCCESS, RUN_MANIFEST_FILE};
use gridscout_core::evaluation::{read_csv, ResultRow};
use gridscout_core::floorplan::{import_raster, DatasetManifest, DatasetStats};
use gridscout_core::server::{decode_observation, Reply};
use tempfile::TempDir;

fn run(args: &[&str]) -> i32 {
    main_with_args(std::iter::once("gridscout").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen_dataset(dir: &Path, count: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("d{seed}_{count}"));
    let code = run(&[
        "gen",
        "--count",
        &count.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_SUCCESS);
    out
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn results(dir: &Path, file: &str) -> Vec<ResultRow> {
    read_csv(fs::File::open(dir.join(file)).unwrap()).unwrap()
}

#[test]
fn gen_is_byte_identical_on_rerun() {
    let tmp = TempDir::new().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        assert_eq!(
            run(&["gen", "--count", "12", "--seed", "1", "--jobs", "2", "--out", s(out)]),
            EXIT_SUCCESS
        );
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert_eq!(ta, tb);
    // 12 maps, the dataset manifest, two stats files and the run manifest
    assert_eq!(ta.len(), 16);
    let m = DatasetManifest::load(&a).unwrap();
    assert_eq!(m.len(), 12);
    assert_eq!(m.entries[0].id, "map_0001");
    let other = tmp.path().join("c");
    assert_eq!(
        run(&["gen", "--count", "12", "--seed", "2", "--out", s(&other)]),
        EXIT_SUCCESS
    );
    assert_ne!(tree(&other)["map_0001.map"], ta["map_0001.map"]);
}

#[test]
fn gen_zero_maps_writes_an_empty_manifest() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("empty");
    assert_eq!(run(&["gen", "--count", "0", "--out", s(&out)]), EXIT_SUCCESS);
    assert!(DatasetManifest::load(&out).unwrap().is_empty());
    assert!(out.join(RUN_MANIFEST_FILE).exists());
}

#[test]
fn gen_stats_line_reports_the_wall_fraction_band() {
    let tmp = TempDir::new().unwrap();
    let out = gen_dataset(tmp.path(), 60, 3);
    let stats: DatasetStats = serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats.maps, 60);
    assert_eq!(stats.area_mean, 3720.0);
    assert_eq!(stats.area_std, 0.0);
    assert!(
        (0.069..=0.077).contains(&stats.wall_fraction_mean),
        "{}",
        stats.wall_fraction_mean
    );
    let line = fs::read_to_string(out.join("stats.txt")).unwrap();
    assert_eq!(line.trim_end(), stats_line(&stats));
    assert!(line.contains("interior area 3720.0 (0.0)"), "{line}");
}

#[test]
fn gen_rejects_bad_overrides() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("bad");
    assert_eq!(
        run(&[
            "gen",
            "--count",
            "1",
            "--min-door-width",
            "4",
            "--max-door-width",
            "2",
            "--out",
            s(&out)
        ]),
        EXIT_ERROR
    );
}

#[test]
fn explore_writes_trace_image_and_result() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 2, 5);
    let map = data.join("map_0001.map");
    let out = tmp.path().join("run");
    let code = run(&["explore", "--map", s(&map), "--seed", "7", "--out", s(&out)]);
    let rows = results(&out, "result.csv");
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(code, if r.success { EXIT_SUCCESS } else { EXIT_FAILED });
    assert!(r.success, "{r:?}");
    assert!(r.steps <= 400);

    let trace = fs::read_to_string(out.join(TRACE_FILE)).unwrap();
    let mut lines = trace.lines();
    assert_eq!(
        lines.next().unwrap(),
        "step,action,x,y,reward,coverage,collided,newly_exposed,success"
    );
    assert_eq!(lines.count(), r.steps);

    let gt = import_raster(&map).unwrap().map;
    let (w, h, px) = pgm::decode(&fs::read(out.join(PATH_IMAGE)).unwrap()).unwrap();
    assert_eq!((w, h), (gt.width(), gt.height()));
    let marked = px.iter().filter(|&&p| p == pgm::PATH).count();
    assert!(marked > 1 && marked <= r.steps + 1, "{marked}");
    for (i, p) in px.iter().enumerate() {
        if *p == pgm::PATH {
            assert!(gt.is_free(gridscout_core::grid::Pose::new(i % w, i / w)));
        }
    }
}

#[test]
fn explore_with_the_oracle_takes_fewer_steps() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 1, 8);
    let map = data.join("map_0001.map");
    let steps = |predictor: &str| {
        let out = tmp.path().join(predictor.replace(':', "_"));
        run(&[
            "explore",
            "--map",
            s(&map),
            "--predictor",
            predictor,
            "--seed",
            "4",
            "--out",
            s(&out),
        ]);
        results(&out, "result.csv")[0].clone()
    };
    let null = steps("none");
    let oracle = steps("oracle");
    assert!(null.success && oracle.success);
    assert!(oracle.steps < null.steps, "{} vs {}", oracle.steps, null.steps);
}

#[test]
fn explore_with_zero_target_succeeds_immediately() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 1, 9);
    let out = tmp.path().join("zero");
    let code = run(&[
        "explore",
        "--map",
        s(&data.join("map_0001.map")),
        "--target",
        "0",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_SUCCESS);
    let r = &results(&out, "result.csv")[0];
    assert!(r.success);
    assert_eq!(r.steps, 0);
    assert_eq!(fs::read_to_string(out.join(TRACE_FILE)).unwrap().lines().count(), 1);
}

#[test]
fn explore_budget_failure_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 1, 10);
    let out = tmp.path().join("short");
    let code = run(&[
        "explore",
        "--map",
        s(&data.join("map_0001.map")),
        "--max-steps",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_FAILED);
    let r = &results(&out, "result.csv")[0];
    assert_eq!(r.steps, 5);
}

#[test]
fn usage_and_config_errors_exit_with_one() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("x");
    assert_eq!(run(&["explore", "--out", s(&out)]), EXIT_ERROR);
    assert_eq!(run(&["no-such-command"]), EXIT_ERROR);
    assert_eq!(
        run(&["explore", "--map", "/nonexistent.map", "--out", s(&out)]),
        EXIT_ERROR
    );
    let data = gen_dataset(tmp.path(), 1, 11);
    let map = data.join("map_0001.map");
    assert_eq!(
        run(&[
            "explore",
            "--map",
            s(&map),
            "--predictor",
            "crystal-ball",
            "--out",
            s(&out)
        ]),
        EXIT_ERROR
    );
    assert_eq!(
        run(&["explore", "--map", s(&map), "--planner", "teleport", "--out", s(&out)]),
        EXIT_ERROR
    );
    assert_eq!(
        run(&["explore", "--map", s(&map), "--delta-free", "1.5", "--out", s(&out)]),
        EXIT_ERROR
    );
    assert_eq!(
        run(&["eval", "--dataset", s(&data), "--configs", "frontier", "--out", s(&out)]),
        EXIT_ERROR
    );
    assert_eq!(run(&["--help"]), EXIT_SUCCESS);
}

#[test]
fn eval_writes_reports_and_replays_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 4, 12);
    let out = tmp.path().join("eval");
    let code = run(&[
        "eval",
        "--dataset",
        s(&data),
        "--configs",
        "frontier+none,frontier+oracle",
        "--episodes",
        "6",
        "--seed",
        "3",
        "--jobs",
        "2",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_SUCCESS);
    let rows = results(&out, RESULTS_FILE);
    assert_eq!(rows.len(), 12);
    assert!(rows[..6].iter().all(|r| r.predictor == "none"));
    assert!(rows[6..].iter().all(|r| r.predictor == "oracle"));
    let curves = fs::read_to_string(out.join("curves_frontier_oracle.csv")).unwrap();
    assert_eq!(curves.lines().next().unwrap(), "step,mean_coverage,std_coverage");
    assert_eq!(curves.lines().count(), 402);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report.lines().count(), 3);

    let manifest = RunManifest::load(&out.join(RUN_MANIFEST_FILE)).unwrap();
    assert_eq!(manifest.artifacts.len(), 4);
    let again = tmp.path().join("again");
    let m = out.join(RUN_MANIFEST_FILE);
    assert_eq!(
        run(&["replay", "--manifest", s(&m), "--out", s(&again), "--jobs", "1"]),
        EXIT_SUCCESS
    );
    assert_eq!(tree(&out), tree(&again));
}

#[test]
fn eval_with_a_hopeless_configuration_exits_with_two() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 2, 13);
    let out = tmp.path().join("eval");
    let code = run(&[
        "eval",
        "--dataset",
        s(&data),
        "--configs",
        "frontier+oracle,random+none",
        "--episodes",
        "2",
        "--max-steps",
        "20",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_FAILED);
    assert!(out.join("report.csv").exists());
}

#[test]
fn eval_skips_unreadable_maps() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 3, 14);
    fs::write(data.join("map_0002.map"), "garbage\n").unwrap();
    let out = tmp.path().join("eval");
    let code = run(&[
        "eval",
        "--dataset",
        s(&data),
        "--configs",
        "frontier+oracle",
        "--episodes",
        "4",
        "--out",
        s(&out),
    ]);
    assert_eq!(code, EXIT_SUCCESS);
    let skipped = fs::read_to_string(out.join("skipped.csv")).unwrap();
    assert!(skipped.contains("map_0002"), "{skipped}");
    assert!(results(&out, RESULTS_FILE).iter().all(|r| r.map_id != "map_0002"));
}

fn sweep_rows(dir: &Path) -> Vec<SweepRow> {
    read_csv(fs::File::open(dir.join(SWEEP_FILE)).unwrap()).unwrap()
}

#[test]
fn sweep_with_full_confidence_matches_the_null_baseline() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 3, 15);
    let sweep = tmp.path().join("sweep");
    let code = run(&[
        "sweep-thresholds",
        "--dataset",
        s(&data),
        "--predictor",
        "oracle:0.1",
        "--delta-free-grid",
        "1",
        "--delta-obstacle-grid",
        "1",
        "--episodes",
        "3",
        "--out",
        s(&sweep),
    ]);
    assert_eq!(code, EXIT_SUCCESS);
    let rows = sweep_rows(&sweep);
    assert_eq!(rows.len(), 1);

    let eval = tmp.path().join("eval");
    run(&[
        "eval",
        "--dataset",
        s(&data),
        "--configs",
        "frontier+none",
        "--episodes",
        "3",
        "--out",
        s(&eval),
    ]);
    let base = results(&eval, RESULTS_FILE);
    let mean = base.iter().map(|r| r.steps as f64).sum::<f64>() / base.len() as f64;
    assert_eq!(rows[0].mean_steps, mean);
    // nothing is decided, so F1 is vacuous
    assert_eq!(rows[0].f1, 1.0);
}

#[test]
fn sweep_with_the_noiseless_oracle_scores_perfectly() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 2, 16);
    let sweep = tmp.path().join("sweep");
    let code = run(&[
        "sweep-thresholds",
        "--dataset",
        s(&data),
        "--predictor",
        "oracle",
        "--delta-free-grid",
        "0,0.5,0.93,0.999",
        "--delta-obstacle-grid",
        "0,0.5,0.95,0.999",
        "--episodes",
        "2",
        "--out",
        s(&sweep),
    ]);
    assert_eq!(code, EXIT_SUCCESS);
    let rows = sweep_rows(&sweep);
    assert_eq!(rows.len(), 16);
    assert!(rows.iter().all(|r| r.f1 == 1.0), "{rows:?}");
}

fn sweep_grid(dir: &Path, predictor: &str, free: &str, obstacle: &str) -> Vec<SweepRow> {
    let data = gen_dataset(dir, 3, 17);
    let sweep = dir.join(format!("sweep_{}", predictor.replace(':', "_")));
    let code = run(&[
        "sweep-thresholds",
        "--dataset",
        s(&data),
        "--predictor",
        predictor,
        "--delta-free-grid",
        free,
        "--delta-obstacle-grid",
        obstacle,
        "--episodes",
        "3",
        "--max-steps",
        "40",
        "--out",
        s(&sweep),
    ]);
    assert_eq!(code, EXIT_SUCCESS);
    sweep_rows(&sweep)
}

#[test]
fn sweep_f1_is_non_decreasing_in_obstacle_confidence_for_the_noisy_oracle() {
    let tmp = TempDir::new().unwrap();
    let rows = sweep_grid(tmp.path(), "oracle:0.1", "0,0.5,0.8,0.93", "0,0.2,0.5,0.7,0.8,0.95,1");
    assert_eq!(rows.len(), 28);
    for chunk in rows.chunks(7) {
        assert!(chunk.iter().all(|r| r.delta_free == chunk[0].delta_free));
        for pair in chunk.windows(2) {
            assert!(pair[1].f1 >= pair[0].f1, "{pair:?}");
        }
    }
}

#[test]
fn sweep_f1_can_fall_as_obstacle_confidence_rises() {
    // dropping a correct obstacle decision while wrong free decisions stay
    let tmp = TempDir::new().unwrap();
    let rows = sweep_grid(tmp.path(), "heuristic", "0.5", "0,0.2");
    assert!(rows[1].f1 < rows[0].f1, "{rows:?}");
}

#[test]
fn sweep_and_explore_replay_byte_for_byte() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 2, 18);
    let sweep = tmp.path().join("sweep");
    run(&[
        "sweep-thresholds",
        "--dataset",
        s(&data),
        "--delta-free-grid",
        "0.9",
        "--delta-obstacle-grid",
        "0.9,0.99",
        "--episodes",
        "2",
        "--max-steps",
        "30",
        "--out",
        s(&sweep),
    ]);
    let explore = tmp.path().join("explore");
    run(&[
        "explore",
        "--map",
        s(&data.join("map_0002.map")),
        "--max-steps",
        "50",
        "--out",
        s(&explore),
    ]);
    for dir in [&sweep, &explore, &data] {
        let again = tmp.path().join("again").join(dir.file_name().unwrap());
        let m = dir.join(RUN_MANIFEST_FILE);
        run(&["replay", "--manifest", s(&m), "--out", s(&again)]);
        assert_eq!(tree(dir), tree(&again), "{}", dir.display());
    }
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridscout"))
}

#[test]
fn binary_exit_codes() {
    let status = bin().arg("--bogus").stderr(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_ERROR));
    let status = bin().arg("--version").stdout(Stdio::null()).status().unwrap();
    assert_eq!(status.code(), Some(EXIT_SUCCESS));
}

#[test]
fn serve_stdio_session() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 2, 19);
    let mut child = bin()
        .args(["serve", "--stdio", "--dataset", s(&data)])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    let input = concat!(
        "{\"cmd\":\"reset\",\"map_id\":\"map_0001\",\"seed\":3}\n",
        "{\"cmd\":\"step\",\"action\":2}\n",
        "{\"cmd\":\"step\",\"action\":9}\n",
        "{\"cmd\":\"close\"}\n"
    );
    stdin.write_all(input.as_bytes()).unwrap();
    drop(stdin);
    let replies: Vec<Reply> = BufReader::new(child.stdout.take().unwrap())
        .lines()
        .map(|l| serde_json::from_str(&l.unwrap()).unwrap())
        .collect();
    assert!(child.wait().unwrap().success());
    assert_eq!(replies.len(), 4);
    let Reply::Observation(first) = &replies[0] else {
        panic!("{:?}", replies[0])
    };
    let img = decode_observation(&first.observation, first.shape).unwrap();
    assert_eq!((img.height, img.width), (62, 64));
    let Reply::Observation(step) = &replies[1] else {
        panic!("{:?}", replies[1])
    };
    assert_eq!(step.step, 1);
    assert!(step.reward.is_some());
    assert!(matches!(replies[2], Reply::Error { .. }));
    assert_eq!(replies[3], Reply::Closed);
}

#[test]
fn served_predictor_drives_a_remote_episode() {
    let tmp = TempDir::new().unwrap();
    let data = gen_dataset(tmp.path(), 1, 20);
    let map = data.join("map_0001.map");
    let exe = env!("CARGO_BIN_EXE_gridscout");
    let remote = format!("remote:exec:{exe} serve-predictor --stdio --predictor heuristic");
    let local = tmp.path().join("local");
    let far = tmp.path().join("remote");
    let args = |p: &str, out: &Path| {
        run(&[
            "explore",
            "--map",
            s(&map),
            "--predictor",
            p,
            "--max-steps",
            "60",
            "--delta-free",
            "0.5",
            "--delta-obstacle",
            "0.5",
            "--out",
            s(out),
        ])
    };
    args("heuristic", &local);
    args(&remote, &far);
    let trace = |d: &Path| fs::read_to_string(d.join(TRACE_FILE)).unwrap();
    assert_eq!(trace(&local), trace(&far));
    let r = &results(&far, "result.csv")[0];
    assert!(r.predictor.starts_with("remote:"));
}

#[test]
fn oracle_cannot_be_served() {
    let status = bin()
        .args(["serve-predictor", "--stdio", "--predictor", "oracle"])
        .stdin(Stdio::null())
        .stderr(Stdio::null())
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(EXIT_ERROR));
}
