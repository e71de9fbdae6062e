//! Run results and their on-disk form: three CSV logs (trajectory, parameter
//! bounds, commits) plus a JSON summary.  Every emitted byte is a pure
//! function of the configuration and seed, so identical runs produce
//! identical files; wall time is therefore reported in memory only.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::Error;

/// One commit decision, as logged to `commits.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommitRecord {
    /// Decision time.
    pub t_k: f64,
    /// `informative`, `conservative`, or `terminal`.
    pub kind: String,
    /// 1-based horizon index of the committed informative candidate; 0 when
    /// the commit was not informative.
    pub i_star: usize,
    /// Committed duration.
    pub horizon: f64,
    pub score: f64,
    pub delta_w: f64,
    pub delta_j: f64,
    /// Executed cost at decision time.
    pub j_exec: f64,
    /// Backup cost-to-go at decision time.
    pub j_back: f64,
    pub budget: f64,
}

/// One executed step, as logged to `trajectory.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pos: [f64; 3],
    pub vel: [f64; 3],
    pub input: [f64; 3],
    /// Kind of the committed trajectory being tracked.
    pub kind: &'static str,
}

/// Parameter box after one identification update, as logged to `bounds.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundsRecord {
    pub t_k: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Planned-versus-realized identification check for one committed segment
/// and one parameter axis: `actual <= predicted` up to tracking-induced
/// regressor mismatch (and exactly, within solver tolerance, when the
/// planned trajectory is replayed as the executed one).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthCheck {
    pub t_k: f64,
    pub horizon: f64,
    pub axis: usize,
    pub predicted: f64,
    pub actual: f64,
    /// `predicted - actual`; negative slack means the prediction was beaten.
    pub slack: f64,
}

/// Everything a closed-loop run reports.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    /// `baseline` or `dual`.
    pub mode: String,
    pub seed: u64,
    /// Whether measurements were generated from planned rather than executed
    /// states.
    pub strict_prop1: bool,
    /// Realized mission cost.
    pub total_cost: f64,
    /// Same-seed baseline cost defining 100 %.
    pub baseline_cost: f64,
    /// `100 * total_cost / baseline_cost`.
    pub cost_percent: f64,
    /// Absolute cost budget.
    pub budget: f64,
    pub budget_fraction: f64,
    pub initial_widths: Vec<f64>,
    pub final_widths: Vec<f64>,
    /// `100 * (initial - final) / initial` per parameter axis.
    pub width_reduction_percent: Vec<f64>,
    /// Free-space violations observed while executing; zero on success (a
    /// violation aborts the run with an error instead of a report).
    pub safety_violations: usize,
    pub commits: Vec<CommitRecord>,
    /// Smallest `predicted - actual` width slack over all checked segments
    /// and axes; absent when nothing was checked.
    pub prop1_min_slack: Option<f64>,
    /// Number of committed segments with a width-prediction check.
    pub prop1_segments: usize,
    /// Per-segment, per-axis width checks.
    pub width_checks: Vec<WidthCheck>,
    /// Excluded from serialized output to keep files deterministic.
    #[serde(skip)]
    pub wall_time_s: f64,
    #[serde(skip)]
    pub trajectory: Vec<TrajectorySample>,
    #[serde(skip)]
    pub bounds: Vec<BoundsRecord>,
}

impl RunReport {
    /// The width-reduction percentages the headline claims quote.
    pub fn reduction_percent(initial: &[f64], fin: &[f64]) -> Vec<f64> {
        initial
            .iter()
            .zip(fin)
            .map(|(i, f)| if *i > 0.0 { 100.0 * (i - f) / i } else { 0.0 })
            .collect()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

/// Write `trajectory.csv`, `bounds.csv`, `commits.csv`, and `summary.json`
/// into `out_dir` (created if missing).
pub fn emit_reports(report: &RunReport, out_dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(out_dir).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", out_dir.display()),
        ))
    })?;

    let mut trajectory = String::from("t,px,py,pz,vx,vy,vz,ux,uy,uz,kind\n");
    for s in &report.trajectory {
        writeln!(
            trajectory,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.t,
            s.pos[0],
            s.pos[1],
            s.pos[2],
            s.vel[0],
            s.vel[1],
            s.vel[2],
            s.input[0],
            s.input[1],
            s.input[2],
            s.kind
        )
        .expect("string write");
    }
    write_file(&out_dir.join("trajectory.csv"), &trajectory)?;

    let p = report.initial_widths.len();
    let mut bounds = String::from("t_k");
    for i in 0..p {
        write!(bounds, ",lower{i},upper{i}").expect("string write");
    }
    bounds.push('\n');
    for b in &report.bounds {
        write!(bounds, "{}", b.t_k).expect("string write");
        for i in 0..p {
            write!(bounds, ",{},{}", b.lower[i], b.upper[i]).expect("string write");
        }
        bounds.push('\n');
    }
    write_file(&out_dir.join("bounds.csv"), &bounds)?;

    let mut commits =
        String::from("t_k,kind,i_star,horizon,score,delta_w,delta_j,j_exec,j_back,budget\n");
    for c in &report.commits {
        writeln!(
            commits,
            "{},{},{},{},{},{},{},{},{},{}",
            c.t_k,
            c.kind,
            c.i_star,
            c.horizon,
            c.score,
            c.delta_w,
            c.delta_j,
            c.j_exec,
            c.j_back,
            c.budget
        )
        .expect("string write");
    }
    write_file(&out_dir.join("commits.csv"), &commits)?;

    let summary =
        serde_json::to_string_pretty(report).map_err(|e| Error::Config(e.to_string()))?;
    write_file(&out_dir.join("summary.json"), &summary)?;
    Ok(())
}
