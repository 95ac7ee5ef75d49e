use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use serde_json::json;
use sodkit::eval::{map_at, map_range, range_thresholds, EvalError, EvalReport, Interpolation};
use sodkit::io::{load_neck_config, read_detections, read_ground_truth_dir, CategoryMap};
use sodkit::losses::{grad_check, LossId, LossParams};
use sodkit::neck::{neck_report, NeckGraph, NeckGraphSpec, PRESETS};
use sodkit::sim::{detect_enlargement, simulate, trajectory_csv, Objective, SimConfig};

const DEFAULT_SEED: u64 = 20240601;

/// Small-object detection toolkit.
///
/// Exit status: 0 on success, 1 when a check or validation fails, 2 on a
/// usage or input error.
#[derive(Parser)]
#[command(name = "sodkit", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compare analytic loss gradients with central finite differences.
    GradCheck(GradCheckArgs),
    /// Regress an anchor box onto a target by gradient descent.
    SimRegress(SimArgs),
    /// Print the node table, gradient distance and channel validation of a neck.
    NeckReport(NeckArgs),
    /// Score detections against ground-truth annotations.
    Eval(EvalArgs),
}

fn parse_loss(s: &str) -> Result<LossId, String> {
    s.parse().map_err(|_| {
        format!(
            "unknown loss '{s}' (expected one of {})",
            LossId::names().join(", ")
        )
    })
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("expected a positive number, got '{s}'")),
    }
}

fn parse_unit(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1), got '{s}'")),
    }
}

#[derive(Args)]
struct GradCheckArgs {
    #[arg(long, value_parser = parse_loss)]
    loss: LossId,
    /// Number of box pairs to check.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    pairs: u64,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    tol: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long, default_value = "piou", value_parser = parse_loss)]
    loss: LossId,
    /// For piou, descend on the corner-edge penalty term alone.
    #[arg(long)]
    no_attention: bool,
    #[arg(long, default_value_t = sodkit::sim::DEFAULT_LEARNING_RATE, value_parser = parse_positive)]
    lr: f64,
    #[arg(long, default_value_t = sodkit::sim::DEFAULT_STEPS as u64, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    /// Write the trajectory CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Area ratio that counts as enlargement.
    #[arg(long, default_value_t = 1.05, value_parser = parse_positive)]
    threshold: f64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
#[group(required = true, multiple = false, id = "source")]
struct NeckSource {
    /// TOML neck config.
    #[arg(long, group = "source")]
    config: Option<PathBuf>,
    /// Built-in neck.
    #[arg(long, group = "source", value_parser = clap::builder::PossibleValuesParser::new(PRESETS))]
    preset: Option<String>,
}

#[derive(Args)]
struct NeckArgs {
    #[command(flatten)]
    source: NeckSource,
    /// Base channel width for presets.
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    base: u64,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Directory of annotation files, one `<image_id>.txt` per image.
    #[arg(long)]
    gt: PathBuf,
    /// Detection CSV.
    #[arg(long)]
    det: PathBuf,
    #[arg(long, default_value_t = 0.5, value_parser = parse_unit, conflicts_with = "range")]
    iou: f64,
    /// Also report mAP averaged over IoU 0.50:0.05:0.95.
    #[arg(long)]
    range: bool,
    /// Use 101-point interpolated AP instead of all-point AP.
    #[arg(long)]
    points101: bool,
    /// TOML category table replacing the built-in VisDrone one.
    #[arg(long)]
    categories: Option<PathBuf>,
    /// Write each class's precision/recall curve as CSV here.
    #[arg(long)]
    pr_out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

/// Error with its exit status.
enum Failure {
    Check(String),
    Usage(String),
}

type Outcome = Result<(String, bool), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn json_text(v: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn cmd_grad_check(a: &GradCheckArgs) -> Outcome {
    let r = grad_check(
        a.loss,
        a.pairs as usize,
        a.seed,
        a.tol,
        &LossParams::default(),
    )
    .map_err(|e| Failure::Usage(e.to_string()))?;
    let passed = r.passed();
    if a.json {
        let worst = r.worst.as_ref().map(|w| {
            json!({
                "index": w.index,
                "anchor": w.anchor.to_array(),
                "target": w.target.to_array(),
                "analytic": w.analytic,
                "numeric": w.numeric,
                "rel_error": w.rel_error,
            })
        });
        let v = json!({
            "loss": r.loss.name(),
            "pairs": r.pairs_checked,
            "skipped_near_boundary": r.skipped_near_boundary,
            "seed": a.seed,
            "tolerance": r.tolerance,
            "max_rel_error": r.max_rel_error,
            "passed": passed,
            "worst": worst,
        });
        return Ok((json_text(&v), passed));
    }
    let mut s = String::new();
    writeln!(s, "loss: {}", r.loss).unwrap();
    writeln!(s, "pairs: {}", r.pairs_checked).unwrap();
    writeln!(s, "skipped near boundary: {}", r.skipped_near_boundary).unwrap();
    writeln!(s, "seed: {}", a.seed).unwrap();
    writeln!(s, "tolerance: {:e}", r.tolerance).unwrap();
    writeln!(s, "max relative error: {:.3e}", r.max_rel_error).unwrap();
    if let Some(w) = &r.worst {
        let arr = |v: [f64; 4]| v.map(|x| format!("{x:.6}")).join(", ");
        writeln!(s, "worst pair: #{}", w.index).unwrap();
        writeln!(s, "  anchor:   ({})", arr(w.anchor.to_array())).unwrap();
        writeln!(s, "  target:   ({})", arr(w.target.to_array())).unwrap();
        writeln!(s, "  analytic: ({})", arr(w.analytic)).unwrap();
        writeln!(s, "  numeric:  ({})", arr(w.numeric)).unwrap();
    }
    writeln!(s, "result: {}", if passed { "pass" } else { "FAIL" }).unwrap();
    Ok((s, passed))
}

fn cmd_sim(a: &SimArgs) -> Outcome {
    let cfg = SimConfig {
        loss: a.loss,
        attention_enabled: !a.no_attention,
        learning_rate: a.lr,
        steps: a.steps as usize,
        ..SimConfig::default()
    };
    let t = simulate(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    if let Some(out) = &a.out {
        write(out, &trajectory_csv(&t))?;
    }
    let e = detect_enlargement(&t, a.threshold);
    let objective = match cfg.objective() {
        Objective::PiouPenalty => "piou penalty term".to_string(),
        Objective::Loss(id) => id.name().to_string(),
    };
    let passed = t.truncated.is_none();
    if a.json {
        let v = json!({
            "loss": a.loss.name(),
            "objective": objective,
            "learning_rate": a.lr,
            "steps": a.steps,
            "final_iou": t.final_iou(),
            "max_area_ratio": e.max_area_ratio,
            "max_ratio_step": e.max_ratio_step,
            "first_exceed_step": e.first_exceed_step,
            "threshold": a.threshold,
            "truncated": t.truncated.as_ref().map(|tr| json!({"step": tr.step, "reason": tr.reason})),
        });
        return Ok((json_text(&v), passed));
    }
    let mut s = String::new();
    writeln!(s, "loss: {}", a.loss).unwrap();
    writeln!(s, "objective: {objective}").unwrap();
    writeln!(s, "learning rate: {}", a.lr).unwrap();
    writeln!(s, "steps: {}", a.steps).unwrap();
    writeln!(s, "final IoU: {:.6}", t.final_iou()).unwrap();
    writeln!(
        s,
        "max area ratio: {:.6} (step {})",
        e.max_area_ratio, e.max_ratio_step
    )
    .unwrap();
    match e.first_exceed_step {
        Some(k) => writeln!(s, "area ratio first exceeds {}: step {k}", a.threshold).unwrap(),
        None => writeln!(s, "area ratio never exceeds {}", a.threshold).unwrap(),
    }
    if let Some(tr) = &t.truncated {
        writeln!(s, "truncated at step {}: {}", tr.step, tr.reason).unwrap();
    }
    Ok((s, passed))
}

fn cmd_neck(a: &NeckArgs) -> Outcome {
    let mut notices = Vec::new();
    let spec = match (&a.source.config, &a.source.preset) {
        (Some(path), _) => {
            let loaded = load_neck_config(&read(path)?)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            notices = loaded.notices;
            loaded.spec
        }
        (None, Some(name)) => NeckGraphSpec::preset(name, a.base as usize)
            .map_err(|e| Failure::Usage(e.to_string()))?,
        (None, None) => unreachable!("clap requires a source"),
    };
    for n in &notices {
        eprintln!("notice: {n}");
    }
    let graph = NeckGraph::resolve(&spec).map_err(|e| Failure::Check(e.to_string()))?;
    let report = neck_report(&graph);
    let passed = report.passed();
    let text = if a.json {
        json_text(&json!({ "report": report, "notices": notices }))
    } else {
        report.to_string()
    };
    Ok((text, passed))
}

fn pr_csv(report: &EvalReport) -> String {
    let mut s = String::from("class_id,rank,recall,precision\n");
    for c in &report.classes {
        for (k, (r, p)) in c.pr_curve.iter().enumerate() {
            writeln!(s, "{},{},{r:.6},{p:.6}", c.class_id, k + 1).unwrap();
        }
    }
    s
}

fn cmd_eval(a: &EvalArgs) -> Outcome {
    let categories = match &a.categories {
        Some(p) => CategoryMap::from_toml(&read(p)?).map_err(|e| Failure::Usage(e.to_string()))?,
        None => CategoryMap::visdrone(),
    };
    let (gts, gt_diags) =
        read_ground_truth_dir(&a.gt, &categories).map_err(|e| Failure::Usage(e.to_string()))?;
    for (file, d) in &gt_diags {
        eprintln!("warning: {file}: {d}");
    }
    let det_file = read_detections(&read(&a.det)?)
        .map_err(|e| Failure::Usage(format!("{}: {e}", a.det.display())))?;
    for d in &det_file.diagnostics {
        eprintln!("warning: {}: {d}", a.det.display());
    }
    let dets = det_file.detections;
    let mode = if a.points101 {
        Interpolation::Points101
    } else {
        Interpolation::AllPoint
    };
    let fail = |e: EvalError| match e {
        EvalError::EmptyGroundTruth | EvalError::NoPositives => Failure::Check(e.to_string()),
        other => Failure::Usage(other.to_string()),
    };
    let threshold = if a.range { 0.5 } else { a.iou };
    let report = map_at(&dets, &gts, threshold, mode).map_err(fail)?;
    let range = if a.range {
        let per: Vec<(f64, f64)> = range_thresholds()
            .into_iter()
            .map(|t| map_at(&dets, &gts, t, mode).map(|r| (t, r.map)))
            .collect::<Result<_, _>>()
            .map_err(fail)?;
        Some((map_range(&dets, &gts, mode).map_err(fail)?, per))
    } else {
        None
    };
    if let Some(p) = &a.pr_out {
        write(p, &pr_csv(&report))?;
    }
    if a.json {
        let v = json!({
            "report": report,
            "map_50_95": range.as_ref().map(|r| r.0),
            "map_per_threshold": range.as_ref().map(|r| &r.1),
        });
        return Ok((json_text(&v), true));
    }
    let mut s = String::new();
    writeln!(s, "iou threshold: {threshold:.2}").unwrap();
    writeln!(s, "images: {}", {
        let mut ids: Vec<&str> = gts.iter().map(|g| g.image_id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    })
    .unwrap();
    writeln!(
        s,
        "{:>5} {:<16} {:>6} {:>6} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}",
        "class", "name", "gt", "det", "tp", "fp", "fn", "precision", "recall", "ap"
    )
    .unwrap();
    for c in &report.classes {
        writeln!(
            s,
            "{:>5} {:<16} {:>6} {:>6} {:>6} {:>6} {:>6} {:>9.6} {:>9.6} {:>9.6}",
            c.class_id,
            categories.name(c.class_id).unwrap_or("-"),
            c.num_gt,
            c.num_det,
            c.tp,
            c.fp,
            c.fn_,
            c.precision,
            c.recall,
            c.ap
        )
        .unwrap();
    }
    writeln!(s, "precision: {:.6}", report.precision).unwrap();
    writeln!(s, "recall: {:.6}", report.recall).unwrap();
    writeln!(s, "mAP@{threshold:.2}: {:.6}", report.map).unwrap();
    if let Some((m, per)) = &range {
        for (t, v) in per {
            writeln!(s, "  mAP@{t:.2}: {v:.6}").unwrap();
        }
        writeln!(s, "mAP@0.50:0.95: {m:.6}").unwrap();
    }
    Ok((s, true))
}

/// Parses the command line. Every parse error ends with the usage line of
/// the subcommand involved and exit status 2.
fn parse_cli() -> Result<Cli, ExitCode> {
    let err = match Cli::try_parse() {
        Ok(cli) => return Ok(cli),
        Err(e) => e,
    };
    if matches!(
        err.kind(),
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion
    ) {
        err.exit();
    }
    let message = err.render().to_string();
    let message = message
        .split("\n\nFor more information")
        .next()
        .unwrap_or(&message);
    eprintln!("{}", message.trim_end());
    let mut cmd = Cli::command();
    cmd.build();
    let sub = std::env::args()
        .nth(1)
        .and_then(|name| cmd.find_subcommand_mut(&name).map(|c| c.render_usage()));
    let usage = sub.unwrap_or_else(|| cmd.render_usage());
    if !message.contains("Usage:") {
        eprintln!("\n{usage}");
    }
    eprintln!("\nFor more information, try '--help'.");
    Err(ExitCode::from(2))
}

fn main() -> ExitCode {
    let cli = match parse_cli() {
        Ok(cli) => cli,
        Err(code) => return code,
    };
    let outcome = match &cli.command {
        Command::GradCheck(a) => cmd_grad_check(a),
        Command::SimRegress(a) => cmd_sim(a),
        Command::NeckReport(a) => cmd_neck(a),
        Command::Eval(a) => cmd_eval(a),
    };
    match outcome {
        Ok((text, passed)) => {
            print!("{text}");
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(Failure::Check(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
