//! End-to-end runs of the `lfalloc` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lfalloc::allocator::{allocate, SolverOptions};
use lfalloc::formats::{
    read_models, read_rates, read_trace, sibling_path, write_models, write_rates, write_trace_rows, AllocationDiagnostics,
    MetricsReport, ProblemFile, TraceSummary,
};

const TABLE1: [(f64, f64); 3] = [(4.46e7, -0.261), (1.96e8, -0.383), (6.93e7, -0.284)];

struct Sandbox {
    dir: tempfile::TempDir,
}

impl Sandbox {
    fn new() -> Self {
        Self { dir: tempfile::tempdir().unwrap() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn file(&self, name: &str, text: &str) -> String {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p.to_string_lossy().into_owned()
    }

    fn out(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }
}

fn lfalloc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lfalloc"))
        .args(args)
        .env("LFALLOC_LOG", "off")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn read(p: impl AsRef<Path>) -> String {
    fs::read_to_string(p).unwrap()
}

fn samples_csv(rows: &[(&str, f64, f64)]) -> String {
    let mut s = String::from("frame_index,qp,rate_bits,sse\n");
    for &(label, a, b) in rows {
        for (i, r) in [1e5f64, 2e5, 4e5, 8e5, 1.6e6].iter().enumerate() {
            s += &format!("{label},{},{r},{}\n", 34 - i, a * r.powf(b));
        }
    }
    s
}

fn problem_toml(params: &[(f64, f64)], weights: &[f64], width: usize, budget: f64, lambda: f64) -> String {
    let mut s = format!("width = {width}\nheight = {}\nbudget = {budget:e}\nlambda = {lambda:?}\n", params.len() / width);
    for (i, (&(a, b), w)) in params.iter().zip(weights).enumerate() {
        s += &format!("\n[[frame]]\nu = {}\nv = {}\nweight = {w:?}\nalpha = {a:e}\nbeta = {b:?}\n", i % width, i / width);
    }
    s
}

#[test]
fn fit_recovers_table_parameters() {
    let sb = Sandbox::new();
    let input = sb.file("s.csv", &samples_csv(&[("a", TABLE1[0].0, TABLE1[0].1), ("b", TABLE1[1].0, TABLE1[1].1)]));
    let out = sb.out("m.csv");
    assert_eq!(code(&lfalloc(&["fit", &input, "--output", &out])), 0);
    let text = read(&out);
    let rows = read_models(&text).unwrap();
    assert_eq!(rows[0].0, "a");
    assert!(((rows[0].1 - 4.46e7) / 4.46e7).abs() < 1e-6);
    assert!(((rows[0].2 + 0.261) / 0.261).abs() < 1e-6);
    assert!((rows[0].3 - 1.0).abs() < 1e-6);
    assert_eq!(write_models(&rows), text);
}

#[test]
fn fit_error_codes() {
    let sb = Sandbox::new();
    let empty = sb.file("empty.csv", "");
    let res = lfalloc(&["fit", &empty]);
    assert_eq!(code(&res), 2);
    let garbled = sb.file("bad.csv", "a,30,1e5,2e6\na,thirty,1e5,2e6\n");
    let res = lfalloc(&["fit", &garbled]);
    assert_eq!(code(&res), 2);
    assert!(String::from_utf8_lossy(&res.stderr).contains("line 2"));
    let single = sb.file("one.csv", "a,30,1e5,2e6\na,31,9e4,2.1e6\nb,30,1e5,2e6\n");
    let res = lfalloc(&["fit", &single]);
    assert_eq!(code(&res), 3);
    assert!(String::from_utf8_lossy(&res.stderr).contains("frame b"));
    let rising = sb.file("up.csv", "a,30,1e5,2e6\na,31,9e4,1.9e6\na,32,8e4,1.8e6\n");
    assert_eq!(code(&lfalloc(&["fit", &rising])), 3);
}

#[test]
fn allocate_uniform_toy_problem() {
    let sb = Sandbox::new();
    let p = sb.file("p.toml", &problem_toml(&[TABLE1[0]; 4], &[1.0; 4], 2, 4e6, 5.0));
    let out = sb.out("r.csv");
    assert_eq!(code(&lfalloc(&["allocate", &p, "--output", &out])), 0);
    let rates = read_rates(&read(&out)).unwrap();
    assert_eq!(rates.len(), 4);
    for (_, r) in &rates {
        assert!((r - 1e6).abs() / 1e6 < 1e-6, "{r}");
    }
    let diag = AllocationDiagnostics::parse(&read(sibling_path(Path::new(&out), "diagnostics.toml"))).unwrap();
    assert!(diag.converged);
    assert!((diag.budget_used - 4e6).abs() / 4e6 < 1e-9);
}

#[test]
fn lambda_zero_matches_step1_only() {
    let sb = Sandbox::new();
    let p = sb.file("p.toml", &problem_toml(&TABLE1, &[1.0, 0.7, 0.4], 3, 3e6, 5.0));
    let (a, b) = (sb.out("a.csv"), sb.out("b.csv"));
    assert_eq!(code(&lfalloc(&["allocate", &p, "--lambda", "0", "--output", &a])), 0);
    assert_eq!(code(&lfalloc(&["allocate", &p, "--step1-only", "--output", &b])), 0);
    assert_eq!(read(&a), read(&b));
    let diag = |x: &str| read(sibling_path(Path::new(x), "diagnostics.toml"));
    assert_eq!(diag(&a), diag(&b));
}

#[test]
fn allocate_matches_library() {
    let sb = Sandbox::new();
    let text = problem_toml(&TABLE1, &[1.0, 1.0, 1.0], 3, 3e6, 5.0);
    let p = sb.file("p.toml", &text);
    let out = sb.out("r.csv");
    assert_eq!(code(&lfalloc(&["allocate", &p, "--output", &out])), 0);
    let problem = ProblemFile::parse(&text).unwrap().to_problem().unwrap().unwrap();
    let lib = allocate(&problem, &SolverOptions::default()).unwrap();
    assert_eq!(read(&out), write_rates(&lib));
}

#[test]
fn allocate_error_codes() {
    let sb = Sandbox::new();
    let p = sb.file("p.toml", &problem_toml(&TABLE1, &[1.0; 3], 3, 3e6, 5.0));
    assert_eq!(code(&lfalloc(&["allocate", &p, "--min-rate", "2e6"])), 4);
    let bad = sb.file("bad.toml", "width = 2\n");
    assert_eq!(code(&lfalloc(&["allocate", &bad])), 2);
    let positive_beta = sb.file("pb.toml", &problem_toml(&[(1e8, 0.2), TABLE1[0]], &[1.0; 2], 2, 2e6, 5.0));
    assert_eq!(code(&lfalloc(&["allocate", &positive_beta])), 3);
    assert_eq!(code(&lfalloc(&["allocate", &sb.out("missing.toml")])), 1);
}

#[test]
fn simulate_decoupled_converges() {
    let sb = Sandbox::new();
    let out = sb.out("trace.csv");
    let res = lfalloc(&["simulate", "--synthetic", "4x3", "--gamma", "0", "--seed", "3", "--output", &out]);
    assert_eq!(code(&res), 0);
    let summary = TraceSummary::parse(&read(sibling_path(Path::new(&out), "summary.toml"))).unwrap();
    assert!(summary.converged);
    assert!(summary.iterations <= 3);
    let text = read(&out);
    let rows = read_trace(&text).unwrap();
    assert_eq!(rows.len(), 12 * summary.iterations);
    assert_eq!(write_trace_rows(&rows), text);
    // the generated scene replays to the same trace
    let scene = sibling_path(Path::new(&out), "scene.toml");
    let replay = sb.out("replay.csv");
    assert_eq!(code(&lfalloc(&["simulate", scene.to_str().unwrap(), "--output", &replay])), 0);
    assert_eq!(read(&replay), text);
}

#[test]
fn simulate_single_pass_is_not_converged() {
    let sb = Sandbox::new();
    let out = sb.out("trace.csv");
    assert_eq!(code(&lfalloc(&["simulate", "--synthetic", "3x3", "--max-iters", "1", "--output", &out])), 0);
    let summary = TraceSummary::parse(&read(sibling_path(Path::new(&out), "summary.toml"))).unwrap();
    assert!(!summary.converged);
    assert_eq!(summary.iterations, 1);
    assert_eq!(code(&lfalloc(&["simulate", "--synthetic", "3by3"])), 2);
}

#[test]
fn metrics_examples() {
    let sb = Sandbox::new();
    let run = |name: &str, csv: &str, extra: &[&str]| {
        let input = sb.file(name, csv);
        let out = sb.out(&format!("{name}.toml"));
        let mut args = vec!["metrics", &input, "--output", &out];
        args.extend_from_slice(extra);
        let res = lfalloc(&args);
        (code(&res), fs::read_to_string(&out).ok().map(|t| MetricsReport::parse(&t).unwrap()))
    };
    let (c, r) = run("uniform.csv", "u,v,weight,sse\n0,0,1,50\n1,0,0.5,50\n0,1,0.2,50\n1,1,1,50\n", &["--lambda", "5"]);
    assert_eq!(c, 0);
    assert_eq!(r.unwrap().discontinuity, 0.0);

    let (c, r) = run("pair.csv", "0,0,1,1\n1,0,1,3\n", &["--lambda", "5", "--frame-pixels", "1"]);
    assert_eq!(c, 0);
    let r = r.unwrap();
    assert_eq!((r.discontinuity, r.weighted_distortion, r.total, r.pixel_count), (16.0, 4.0, 24.0, 2));

    // T = n with a single frame of weight 1
    let (c, r) = run("anchor.csv", "0,0,1,1000\n", &["--frame-pixels", "1000"]);
    assert_eq!(c, 0);
    assert!((r.unwrap().wpsnr_db - 48.1308).abs() < 1e-3);

    let (c, _) = run("gap.csv", "0,0,1,5\n1,1,1,5\n", &[]);
    assert_eq!(c, 2);
    let (c, _) = run("neg.csv", "0,0,1,5\n", &["--lambda=-1"]);
    assert_eq!(c, 5);
}

#[test]
fn bdrate_examples() {
    let sb = Sandbox::new();
    let anchor = "rate_bits,quality_db\n1e5,30.1\n2.1e5,32.4\n4.3e5,34.9\n9e5,37.2\n1.8e6,39\n";
    let a = sb.file("a.csv", anchor);
    let shifted: String = std::iter::once("rate_bits,quality_db\n".to_string())
        .chain(anchor.lines().skip(1).map(|l| {
            let (r, q) = l.split_once(',').unwrap();
            format!("{},{q}\n", r.parse::<f64>().unwrap() * 1.1)
        }))
        .collect();
    let t = sb.file("t.csv", &shifted);
    let same = lfalloc(&["bdrate", &a, &a]);
    assert_eq!(code(&same), 0);
    assert_eq!(String::from_utf8_lossy(&same.stdout), "0.00%\n");
    let up = lfalloc(&["bdrate", &a, &t]);
    assert_eq!(String::from_utf8_lossy(&up.stdout), "10.00%\n");
    let short = sb.file("s.csv", "1e5,30\n2e5,32\n4e5,34\n");
    assert_eq!(code(&lfalloc(&["bdrate", &a, &short])), 5);
    let apart = sb.file("far.csv", "1e5,50\n2e5,52\n4e5,54\n8e5,56\n");
    assert_eq!(code(&lfalloc(&["bdrate", &a, &apart])), 5);
}

#[test]
fn spiral_grid_text() {
    let res = lfalloc(&["spiral", "--width", "3", "--height", "3"]);
    assert_eq!(code(&res), 0);
    let grid = lfalloc::FrameGrid::from_text(&String::from_utf8_lossy(&res.stdout)).unwrap();
    assert_eq!(grid.coding_order()[0], lfalloc::FrameCoord::new(1, 1));
    assert_eq!(grid.len(), 9);
    assert_eq!(code(&lfalloc(&["spiral", "--width", "0", "--height", "3"])), 2);
}

#[test]
fn unknown_flags_are_usage_errors() {
    assert_eq!(code(&lfalloc(&["allocate"])), 2);
    assert_eq!(code(&lfalloc(&["nonsense"])), 2);
}
