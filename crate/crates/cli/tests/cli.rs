use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn sodkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sodkit"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).expect("valid JSON on stdout")
}

fn field(text: &str, key: &str) -> f64 {
    let line = text
        .lines()
        .find(|l| l.starts_with(key))
        .unwrap_or_else(|| panic!("no '{key}' in:\n{text}"));
    line[key.len()..]
        .split_whitespace()
        .next()
        .unwrap()
        .parse()
        .unwrap()
}

#[test]
fn grad_check_piou_passes() {
    let o = sodkit(&[
        "grad-check",
        "--loss",
        "piou",
        "--pairs",
        "1000",
        "--tol",
        "1e-4",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("worst pair"));
    assert!(stdout(&o).ends_with("result: pass\n"));
}

#[test]
fn grad_check_failure_exits_one() {
    let o = sodkit(&[
        "grad-check",
        "--loss",
        "ciou",
        "--pairs",
        "50",
        "--tol",
        "1e-15",
    ]);
    assert_eq!(code(&o), 1);
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn grad_check_usage_errors() {
    let o = sodkit(&["grad-check", "--loss", "unknown"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
    assert_eq!(
        code(&sodkit(&["grad-check", "--loss", "iou", "--pairs", "0"])),
        2
    );
    assert_eq!(
        code(&sodkit(&["grad-check", "--loss", "iou", "--bogus"])),
        2
    );
    assert_eq!(code(&sodkit(&[])), 2);
}

#[test]
fn grad_check_is_seeded() {
    let args = [
        "grad-check",
        "--loss",
        "wiou-v3",
        "--pairs",
        "200",
        "--json",
    ];
    let (a, b) = (json(&sodkit(&args)), json(&sodkit(&args)));
    assert_eq!(a, b);
    assert_eq!(a["pairs"], 200);
    assert_eq!(a["passed"], true);
    let mut other = args.to_vec();
    other.extend(["--seed", "9"]);
    assert_ne!(json(&sodkit(&other))["worst"], a["worst"]);
}

#[test]
fn sim_penalty_only_converges() {
    let o = sodkit(&["sim-regress", "--loss", "piou", "--no-attention"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(field(&text, "final IoU:") >= 0.99, "{text}");
    assert!(field(&text, "max area ratio:") <= 1.05, "{text}");
}

#[test]
fn sim_ciou_enlarges() {
    let o = sodkit(&["sim-regress", "--loss", "ciou"]);
    assert_eq!(code(&o), 0);
    assert!(field(&stdout(&o), "max area ratio:") > 1.05);
}

#[test]
fn sim_writes_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("traj.csv");
    let o = sodkit(&[
        "sim-regress",
        "--loss",
        "eiou",
        "--steps",
        "40",
        "--out",
        out.to_str().unwrap(),
        "--json",
    ]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    let t = sodkit::sim::parse_trajectory_csv(&std::fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(t.points.len(), 41);
    assert!((t.final_iou() - v["final_iou"].as_f64().unwrap()).abs() < 1e-8);
}

#[test]
fn sim_usage_errors() {
    assert_eq!(code(&sodkit(&["sim-regress", "--steps", "0"])), 2);
    assert_eq!(code(&sodkit(&["sim-regress", "--lr", "-1"])), 2);
    let o = sodkit(&["sim-regress", "--out", "/nonexistent-dir/x.csv"]);
    assert_eq!(code(&o), 2);
}

fn distance(report: &str) -> usize {
    field(report, "gradient distance:") as usize
}

#[test]
fn neck_report_gfpn_preset() {
    let o = sodkit(&["neck-report", "--preset", "gfpn"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    assert!(text.contains("validation: ok"));
    for row in text.lines().skip(1).take(12) {
        let cols: Vec<&str> = row.split_whitespace().collect();
        assert!(
            cols[7].parse::<usize>().is_ok(),
            "distance missing in '{row}'"
        );
    }
}

#[test]
fn dense_chain_is_one_hop() {
    let plain = stdout(&sodkit(&["neck-report", "--preset", "chain"]));
    let dense = stdout(&sodkit(&["neck-report", "--preset", "dense-chain"]));
    assert_eq!(distance(&plain), 7);
    assert_eq!(distance(&dense), 1);
}

const SHIPPED: &str = include_str!("../../core/presets/gfpn.toml");

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("neck.toml");
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn neck_report_config_matches_preset() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SHIPPED);
    let from_file = sodkit(&["neck-report", "--config", &cfg, "--json"]);
    let preset = sodkit(&["neck-report", "--preset", "gfpn", "--json"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(json(&from_file), json(&preset));
}

#[test]
fn corrupted_config_names_the_node() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SHIPPED.replace("in_channels = 112", "in_channels = 100");
    let o = sodkit(&["neck-report", "--config", &write_config(dir.path(), &bad)]);
    assert_eq!(code(&o), 1);
    let text = stdout(&o);
    assert!(text.contains("validation: failed"));
    assert!(
        text.lines()
            .any(|l| l.contains("P3_1") && l.contains("112")),
        "{text}"
    );
}

#[test]
fn config_parse_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SHIPPED.replace("\"log2n\"", "\"hexfusion\"");
    let o = sodkit(&["neck-report", "--config", &write_config(dir.path(), &bad)]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hexfusion"));
    let o = sodkit(&[
        "neck-report",
        "--config",
        &write_config(dir.path(), "depth = ["),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 1"));
    assert_eq!(
        code(&sodkit(&[
            "neck-report",
            "--preset",
            "gfpn",
            "--config",
            "x"
        ])),
        2
    );
}

#[test]
fn defaulted_strides_print_a_notice() {
    let dir = tempfile::tempdir().unwrap();
    let text: String = SHIPPED
        .lines()
        .filter(|l| !l.starts_with("stride"))
        .map(|l| format!("{l}\n"))
        .collect();
    let o = sodkit(&["neck-report", "--config", &write_config(dir.path(), &text)]);
    assert_eq!(code(&o), 0);
    assert!(stderr(&o).contains("notice:"));
}

struct Fixture {
    _dir: tempfile::TempDir,
    gt: String,
    det: String,
}

fn fixture(annotations: &[(&str, &str)], detections: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt");
    std::fs::create_dir(&gt).unwrap();
    for (image, text) in annotations {
        std::fs::write(gt.join(format!("{image}.txt")), text).unwrap();
    }
    let det = dir.path().join("det.csv");
    std::fs::write(
        &det,
        format!("image_id,class_id,x1,y1,x2,y2,score\n{detections}"),
    )
    .unwrap();
    Fixture {
        gt: gt.to_str().unwrap().into(),
        det: det.to_str().unwrap().into(),
        _dir: dir,
    }
}

#[test]
fn eval_perfect_fixture() {
    let f = fixture(
        &[
            ("a", "0,0,10,10,1,1,0,0\n20,20,5,5,1,4,0,0\n"),
            ("b", "3,3,8,8,1,9,0,0\n"),
        ],
        "a,1,0,0,10,10,0.9\na,4,20,20,25,25,0.8\nb,9,3,3,11,11,0.7\n",
    );
    let o = sodkit(&["eval", "--gt", &f.gt, "--det", &f.det]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(field(&text, "mAP@0.50:"), 1.0);
    assert!(text.contains("pedestrian") && text.contains("bus"));
}

// Two ground truths and three ranked detections: TP, FP, TP at IoU 0.5,
// with the second TP at IoU 10/11 so it drops out above that.
fn five_box() -> Fixture {
    fixture(
        &[("img", "0,0,10,10,1,1,0,0\n20,20,10,10,1,1,0,0\n")],
        "img,1,0,0,10,10,0.9\nimg,1,100,100,110,110,0.8\nimg,1,20,20,30,31,0.7\n",
    )
}

/// Best precision at or beyond each recall step, by definition.
fn direct_ap(labels: &[bool], total_gt: usize) -> f64 {
    let tp_at = |j: usize| labels[..=j].iter().filter(|&&t| t).count();
    let hits = labels.iter().filter(|&&t| t).count();
    let mut sum = 0.0;
    for k in 1..=hits {
        sum += (0..labels.len())
            .filter(|&j| tp_at(j) >= k)
            .map(|j| tp_at(j) as f64 / (j + 1) as f64)
            .fold(0.0, f64::max);
    }
    sum / total_gt as f64
}

#[test]
fn eval_five_box_fixture_matches_direct_ap() {
    let f = five_box();
    let v = json(&sodkit(&["eval", "--gt", &f.gt, "--det", &f.det, "--json"]));
    let map = v["report"]["map"].as_f64().unwrap();
    assert_eq!(map, direct_ap(&[true, false, true], 2));
    assert!((map - 5.0 / 6.0).abs() < 1e-12);
}

#[test]
fn eval_range_fixture() {
    let f = five_box();
    let o = sodkit(&["eval", "--gt", &f.gt, "--det", &f.det, "--range", "--json"]);
    assert_eq!(code(&o), 0);
    let v = json(&o);
    let mut sum = 0.0;
    for i in 0..10 {
        let t = (50 + 5 * i) as f64 / 100.0;
        let second_hit = 10.0 / 11.0 >= t;
        sum += direct_ap(&[true, false, second_hit], 2);
    }
    assert!((v["map_50_95"].as_f64().unwrap() - sum / 10.0).abs() < 1e-12);
    assert_eq!(v["map_per_threshold"].as_array().unwrap().len(), 10);
}

#[test]
fn eval_pr_curve_dump() {
    let f = five_box();
    let out = Path::new(&f.det).with_file_name("pr.csv");
    let o = sodkit(&[
        "eval",
        "--gt",
        &f.gt,
        "--det",
        &f.det,
        "--pr-out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        std::fs::read_to_string(out).unwrap(),
        "class_id,rank,recall,precision\n1,1,0.500000,1.000000\n1,2,0.500000,0.500000\n1,3,1.000000,0.666667\n"
    );
}

#[test]
fn eval_empty_ground_truth_exits_one() {
    let f = fixture(&[("a", "")], "a,1,0,0,1,1,0.5\n");
    let o = sodkit(&["eval", "--gt", &f.gt, "--det", &f.det]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn eval_usage_errors() {
    let f = five_box();
    assert_eq!(code(&sodkit(&["eval", "--det", &f.det])), 2);
    assert_eq!(
        code(&sodkit(&[
            "eval", "--gt", &f.gt, "--det", &f.det, "--iou", "1.5"
        ])),
        2
    );
    assert_eq!(
        code(&sodkit(&[
            "eval",
            "--gt",
            &f.gt,
            "--det",
            "/nonexistent.csv"
        ])),
        2
    );
    let shuffled = Path::new(&f.det).with_file_name("shuffled.csv");
    std::fs::write(&shuffled, "class_id,image_id,x1,y1,x2,y2,score\n").unwrap();
    let o = sodkit(&["eval", "--gt", &f.gt, "--det", shuffled.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("column 1"));
}

#[test]
fn eval_reports_bad_rows_and_continues() {
    let f = fixture(
        &[("a", "0,0,10,10,1,1,0,0\n0,0,0,5,1,1,0,0\n")],
        "a,1,0,0,10,10,0.9\na,1,0,0,10,10,1.5\n",
    );
    let o = sodkit(&["eval", "--gt", &f.gt, "--det", &f.det]);
    assert_eq!(code(&o), 0);
    let err = stderr(&o);
    assert!(err.contains("a.txt: line 2"), "{err}");
    assert!(err.contains("det.csv: line 3"), "{err}");
    assert_eq!(field(&stdout(&o), "mAP@0.50:"), 1.0);
}
