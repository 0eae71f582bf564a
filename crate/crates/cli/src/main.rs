mod plot;

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use card_core::baselines::{adadetect_generic, cqr_report, global_report, CqrConfig};
use card_core::conformal::card_fit;
use card_core::simulation::{
    metrics_json, preset, read_metrics_csv, run_experiment, write_metrics_csv, Method, MethodSettings, RunHeader,
};
use card_core::trees::ForestParams;
use card_core::{load_csv, with_workers, CardConfig, CardError, CsvSchema, PropensityMode, ResponderForestParams};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "card", version, about = "Conformal detection of treatment responders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test every treated subject of a CSV cohort and write a p-value report.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo grid and write FDR/power metrics.
    Simulate(SimulateArgs),
    /// Render SVG line charts from a metrics CSV.
    Plot(PlotArgs),
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Input CSV; every column other than response, treatment and
    /// propensity is a covariate.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "y")]
    response: String,
    #[arg(long, default_value = "t")]
    treatment: String,
    /// Column holding known propensities (needed for `--propensity oracle`).
    #[arg(long)]
    propensity_column: Option<String>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// card, global, cqr or adadetect_rf.
    #[arg(long, default_value = "card")]
    method: String,
    /// none, oracle, logistic or forest (card only).
    #[arg(long, default_value = "none")]
    propensity: String,
    #[arg(long, default_value_t = 0.2)]
    knockoff_fraction: f64,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, default_value_t = 10)]
    folds: usize,
    #[arg(long, env = "CARD_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "report.csv")]
    out: PathBuf,
    /// JSON summary; defaults to the report path with a .json extension.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also write the fitted responder forest as JSON (card only).
    #[arg(long)]
    dump_forest: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// rct-p10, obs, appendix-a, appendix-c, global-null, rct-p100 or full.
    #[arg(long, default_value = "rct-p10")]
    preset: String,
    /// Comma-separated sample sizes replacing the preset's.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma-separated methods replacing the preset's.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, default_value_t = 100)]
    trees: usize,
    #[arg(long, env = "CARD_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Allow the large p = 100 and rho = 0.9 grids.
    #[arg(long)]
    full_scale: bool,
    #[arg(long, default_value = "metrics.csv")]
    out: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    metrics: PathBuf,
    #[arg(long, default_value = "plots")]
    out_dir: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Simulate(s) => simulate(s),
        Command::Plot(p) => plot_cmd(p),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn json_path(out: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| out.with_extension("json"))
}

fn create(path: &Path) -> card_core::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn analyze(a: AnalyzeArgs) -> card_core::Result<()> {
    let propensity: PropensityMode = a.propensity.parse()?;
    let schema = CsvSchema {
        response: a.response.clone(),
        treatment: a.treatment.clone(),
        propensity: a.propensity_column.clone(),
    };
    let d = load_csv(&a.data, &schema)?;
    let method = Method::parse(&a.method)?;
    if method != Method::Card && propensity != PropensityMode::None {
        return Err(CardError::Config(format!(
            "--propensity applies to the card method only, not `{}`",
            a.method
        )));
    }
    let card = CardConfig {
        alpha: a.alpha,
        knockoff_fraction: a.knockoff_fraction,
        propensity,
        folds: a.folds,
        scorer: ResponderForestParams {
            n_trees: a.trees,
            ..Default::default()
        },
        seed: a.seed,
    };
    let cqr = CqrConfig::default();
    let forest = ForestParams {
        n_trees: a.trees,
        ..ForestParams::adadetect()
    };
    let (report, fitted) = with_workers(a.workers, |exec| -> card_core::Result<_> {
        Ok(match method {
            Method::Card => {
                let fit = card_fit(&d, &card, exec)?;
                (fit.report.clone(), Some(fit))
            }
            Method::Global => (global_report(&d, a.alpha)?, None),
            Method::Cqr => (cqr_report(&d, &cqr, a.alpha, a.seed)?, None),
            Method::AdadetectRf => (adadetect_generic(&d, a.knockoff_fraction, &forest, a.alpha, a.seed, exec)?, None),
            other => {
                return Err(CardError::Config(format!(
                    "`{}` is a simulation label; use --method card with --propensity",
                    other.name()
                )))
            }
        })
    })?;

    let config = json!({
        "data": a.data,
        "response": a.response,
        "treatment": a.treatment,
        "propensity_column": a.propensity_column,
        "method": a.method,
        "propensity": propensity.name(),
        "alpha": a.alpha,
        "knockoff_fraction": a.knockoff_fraction,
        "trees": a.trees,
        "folds": a.folds,
        "seed": a.seed,
        "scorer": card.scorer,
        "cqr": cqr,
    });
    let mut out = create(&a.out)?;
    writeln!(out, "# schema: card-report/1")?;
    writeln!(out, "# seed: {}", a.seed)?;
    writeln!(out, "# config: {config}")?;
    report.write_csv(&mut out)?;
    out.flush()?;

    let summary = json!({
        "schema": "card-report/1",
        "method": report.method,
        "alpha": report.alpha,
        "seed": a.seed,
        "treated": report.entries.len(),
        "knockoffs": report.k,
        "rejections": report.n_rejected(),
        "config": config,
        "report": report,
    });
    let mut js = create(&json_path(&a.out, a.json))?;
    serde_json::to_writer_pretty(&mut js, &summary)?;
    writeln!(js)?;
    js.flush()?;

    if let Some(path) = a.dump_forest {
        let fit = fitted.ok_or_else(|| CardError::Config("--dump-forest needs --method card".into()))?;
        let mut f = create(&path)?;
        f.write_all(fit.forest.to_json()?.as_bytes())?;
        f.flush()?;
    }
    eprintln!(
        "{}: {} of {} treated subjects rejected at alpha = {}",
        report.method,
        report.n_rejected(),
        report.entries.len(),
        report.alpha
    );
    Ok(())
}

fn simulate(s: SimulateArgs) -> card_core::Result<()> {
    let p = preset(&s.preset, s.full_scale)?;
    let methods = match &s.methods {
        Some(names) => names.iter().map(|m| Method::parse(m)).collect::<card_core::Result<Vec<_>>>()?,
        None => p.methods.clone(),
    };
    let mut grid = Vec::new();
    for cell in &p.grid {
        let sizes = s.n.clone().unwrap_or_else(|| vec![cell.n]);
        for n in sizes {
            let c = card_core::ScenarioConfig {
                n,
                reps: s.reps.unwrap_or(cell.reps),
                alpha: s.alpha.unwrap_or(cell.alpha),
                seed: s.seed,
                ..*cell
            };
            if !grid.contains(&c) {
                grid.push(c);
            }
        }
    }
    let settings = MethodSettings {
        scorer: ResponderForestParams {
            n_trees: s.trees,
            ..Default::default()
        },
        adadetect: ForestParams {
            n_trees: s.trees,
            ..ForestParams::adadetect()
        },
        ..Default::default()
    };
    let metrics = with_workers(s.workers, |exec| run_experiment(&grid, &methods, &settings, exec))?;
    let header = RunHeader {
        seed: s.seed,
        grid,
        methods,
        settings,
    };
    let mut out = create(&s.out)?;
    write_metrics_csv(&mut out, &header, &metrics)?;
    out.flush()?;
    let mut js = create(&json_path(&s.out, s.json))?;
    js.write_all(metrics_json(&header, &metrics)?.as_bytes())?;
    writeln!(js)?;
    js.flush()?;
    for m in &metrics {
        let fmt = |v: Option<f64>| v.map_or_else(|| "NA".into(), |x| format!("{x:.3}"));
        eprintln!(
            "{:<12} n={:<5} p={:<3} rho={:<3} {:<15} r={:+} {:<13} fdr={} (se {}) power={} (se {}){}",
            m.cell.scenario.name(),
            m.cell.n,
            m.cell.p,
            m.cell.rho,
            m.cell.sigma.name(),
            m.cell.signal,
            m.method.name(),
            fmt(m.fdr.mean),
            fmt(m.fdr.se),
            fmt(m.power.mean),
            fmt(m.power.se),
            if m.is_partial() { format!(" [{} failed reps]", m.errors) } else { String::new() }
        );
    }
    Ok(())
}

fn plot_cmd(p: PlotArgs) -> card_core::Result<()> {
    let metrics = read_metrics_csv(BufReader::new(File::open(&p.metrics)?))?;
    fs::create_dir_all(&p.out_dir)?;
    for (name, svg) in plot::render_all(&metrics) {
        fs::write(p.out_dir.join(&name), svg)?;
        eprintln!("wrote {}", p.out_dir.join(name).display());
    }
    Ok(())
}
