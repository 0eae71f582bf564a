use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use card_core::exec::rng_from_seed;
use card_core::simulation::{generate_observational, ScenarioConfig, SigmaMode};
use card_core::{write_csv, CsvSchema};
use tempfile::TempDir;

fn card(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_card"))
        .args(args)
        .current_dir(dir)
        .env_remove("CARD_SEED")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Writes an observational cohort with `y`, `t`, `e` and covariates `x1..x4`.
fn cohort(dir: &Path, n: usize) {
    let cfg = ScenarioConfig {
        scenario: card_core::Scenario::Observational,
        ..ScenarioConfig::rct(n, 4, 0.0, SigmaMode::Heteroscedastic, 1)
    };
    let (d, _) = generate_observational(&cfg, &mut rng_from_seed(11));
    let schema = CsvSchema {
        propensity: Some("e".into()),
        ..CsvSchema::default()
    };
    let mut buf = Vec::new();
    write_csv(&d, &mut buf, &schema).unwrap();
    fs::write(dir.join("cohort.csv"), &buf).unwrap();
    let stripped = CsvSchema::default();
    let mut buf = Vec::new();
    write_csv(&d, &mut buf, &stripped).unwrap();
    fs::write(dir.join("no_e.csv"), &buf).unwrap();
}

fn data_rows(report: &str) -> Vec<&str> {
    report.lines().filter(|l| !l.starts_with('#')).skip(1).collect()
}

#[test]
fn analyze_writes_one_row_per_treated_subject() {
    let tmp = TempDir::new().unwrap();
    cohort(tmp.path(), 300);
    let args = [
        "analyze", "--data", "no_e.csv", "--response", "y", "--treatment", "t", "--alpha", "0.1", "--method", "card",
        "--propensity", "logistic", "--seed", "7", "--trees", "20",
    ];
    let out = card(tmp.path(), &args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report = fs::read_to_string(tmp.path().join("report.csv")).unwrap();
    let input = fs::read_to_string(tmp.path().join("no_e.csv")).unwrap();
    let t_col = input.lines().next().unwrap().split(',').position(|c| c == "t").unwrap();
    let treated = input
        .lines()
        .skip(1)
        .filter(|l| l.split(',').nth(t_col).unwrap() == "1")
        .count();
    assert_eq!(data_rows(&report).len(), treated);
    assert!(report.starts_with("# schema: card-report/1\n# seed: 7\n# config: {"));

    let summary: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("report.json")).unwrap()).unwrap();
    assert_eq!(summary["seed"], 7);
    assert_eq!(summary["method"], "card_logistic");
    assert_eq!(summary["alpha"], 0.1);
    assert_eq!(summary["treated"], treated);
    let flagged = data_rows(&report).iter().filter(|l| l.ends_with(",1")).count();
    assert_eq!(summary["rejections"], flagged);

    let again = card(tmp.path(), &[&args[..], &["--out", "again.csv"]].concat());
    assert_eq!(code(&again), 0);
    assert_eq!(report, fs::read_to_string(tmp.path().join("again.csv")).unwrap());
}

#[test]
fn analyze_baselines_and_oracle_mode() {
    let tmp = TempDir::new().unwrap();
    cohort(tmp.path(), 300);
    for method in ["global", "cqr", "adadetect_rf"] {
        let out = card(
            tmp.path(),
            &["analyze", "--data", "no_e.csv", "--method", method, "--trees", "10", "--out", &format!("{method}.csv")],
        );
        assert_eq!(code(&out), 0, "{method}: {}", String::from_utf8_lossy(&out.stderr));
        let report = fs::read_to_string(tmp.path().join(format!("{method}.csv"))).unwrap();
        assert!(!data_rows(&report).is_empty());
    }
    let out = card(
        tmp.path(),
        &[
            "analyze", "--data", "cohort.csv", "--propensity-column", "e", "--propensity", "oracle", "--trees", "10",
            "--dump-forest", "forest.json",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let forest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("forest.json")).unwrap()).unwrap();
    assert_eq!(forest["trees"].as_array().unwrap().len(), 10);
}

#[test]
fn analyze_error_exit_codes() {
    let tmp = TempDir::new().unwrap();
    cohort(tmp.path(), 200);
    let oracle = card(tmp.path(), &["analyze", "--data", "no_e.csv", "--propensity", "oracle"]);
    assert_eq!(code(&oracle), 2);
    assert!(String::from_utf8_lossy(&oracle.stderr).contains("error"));
    assert!(!tmp.path().join("report.csv").exists());

    let bad_alpha = card(tmp.path(), &["analyze", "--data", "no_e.csv", "--alpha", "1.5"]);
    assert_eq!(code(&bad_alpha), 2);
    let bad_mode = card(tmp.path(), &["analyze", "--data", "no_e.csv", "--propensity", "magic"]);
    assert_eq!(code(&bad_mode), 2);

    fs::write(tmp.path().join("broken.csv"), "y,t,x1\n1.0,1,0.5\nabc,0,0.2\n").unwrap();
    let parse = card(tmp.path(), &["analyze", "--data", "broken.csv"]);
    assert_eq!(code(&parse), 3);
    fs::write(tmp.path().join("no_t.csv"), "y,x1\n1.0,0.5\n").unwrap();
    let schema = card(tmp.path(), &["analyze", "--data", "no_t.csv"]);
    assert_eq!(code(&schema), 3);
    let missing = card(tmp.path(), &["analyze", "--data", "nowhere.csv"]);
    assert_eq!(code(&missing), 3);
}

#[test]
fn simulate_and_plot_round_trip() {
    let tmp = TempDir::new().unwrap();
    let sim = [
        "simulate", "--preset", "rct-p10", "--n", "200,300", "--reps", "2", "--methods", "card,global", "--trees", "5",
        "--seed", "3",
    ];
    let one = card(tmp.path(), &[&sim[..], &["--workers", "1", "--out", "w1.csv"]].concat());
    assert_eq!(code(&one), 0, "{}", String::from_utf8_lossy(&one.stderr));
    let eight = card(tmp.path(), &[&sim[..], &["--workers", "8", "--out", "w8.csv"]].concat());
    assert_eq!(code(&eight), 0);
    let w1 = fs::read_to_string(tmp.path().join("w1.csv")).unwrap();
    assert_eq!(w1, fs::read_to_string(tmp.path().join("w8.csv")).unwrap());
    assert!(w1.starts_with("# schema: card-metrics/1\n# seed: 3\n"));
    // 4 sigma/sign groups x 2 sizes x 2 methods.
    assert_eq!(data_rows(&w1).len(), 16);
    assert!(tmp.path().join("w1.json").exists());

    let plot = card(tmp.path(), &["plot", "--metrics", "w1.csv", "--out-dir", "plots"]);
    assert_eq!(code(&plot), 0, "{}", String::from_utf8_lossy(&plot.stderr));
    let mut names: Vec<String> = fs::read_dir(tmp.path().join("plots"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names.len(), 8);
    let first = fs::read_to_string(tmp.path().join("plots").join(&names[0])).unwrap();
    assert_eq!(first.matches("<polyline").count(), 2);
    assert!(first.contains(">200</text>") && first.contains(">300</text>"));

    let again = card(tmp.path(), &["plot", "--metrics", "w1.csv", "--out-dir", "plots2"]);
    assert_eq!(code(&again), 0);
    for name in &names {
        assert_eq!(
            fs::read(tmp.path().join("plots").join(name)).unwrap(),
            fs::read(tmp.path().join("plots2").join(name)).unwrap()
        );
    }
}

#[test]
fn plot_with_four_sizes_has_four_ticks() {
    let tmp = TempDir::new().unwrap();
    let out = card(
        tmp.path(),
        &[
            "simulate", "--preset", "appendix-c", "--n", "200,300,400,500", "--reps", "1", "--trees", "5", "--out",
            "m.csv",
        ],
    );
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let plot = card(tmp.path(), &["plot", "--metrics", "m.csv"]);
    assert_eq!(code(&plot), 0);
    let svg = fs::read_to_string(tmp.path().join("plots/appendix_c_p1_rho0_homoscedastic_pos_power.svg")).unwrap();
    for n in ["200", "300", "400", "500"] {
        assert!(svg.contains(&format!(">{n}</text>")));
    }
    assert_eq!(svg.matches("<circle").count(), 8);
}

#[test]
fn simulate_rejects_bad_grids() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&card(tmp.path(), &["simulate", "--reps", "0"])), 2);
    assert_eq!(code(&card(tmp.path(), &["simulate", "--preset", "nope"])), 2);
    assert_eq!(code(&card(tmp.path(), &["simulate", "--preset", "full"])), 2);
    assert_eq!(code(&card(tmp.path(), &["simulate", "--preset", "appendix-a", "--n", "50"])), 2);
    assert_eq!(code(&card(tmp.path(), &["simulate", "--methods", "card,magic"])), 2);
    assert!(!tmp.path().join("metrics.csv").exists());
}

#[test]
fn plot_rejects_bad_metrics() {
    let tmp = TempDir::new().unwrap();
    fs::write(tmp.path().join("empty.csv"), "").unwrap();
    assert_eq!(code(&card(tmp.path(), &["plot", "--metrics", "empty.csv"])), 3);
    fs::write(tmp.path().join("old.csv"), "# schema: card-metrics/0\nscenario\nrct\n").unwrap();
    assert_eq!(code(&card(tmp.path(), &["plot", "--metrics", "old.csv"])), 3);
    fs::write(
        tmp.path().join("header_only.csv"),
        format!("# schema: card-metrics/1\n{}\n", card_core::simulation::METRICS_COLUMNS.join(",")),
    )
    .unwrap();
    assert_eq!(code(&card(tmp.path(), &["plot", "--metrics", "header_only.csv"])), 3);
}
