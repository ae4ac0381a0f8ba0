//! CSV and SVG summaries of one or more metrics files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{read_metrics, MetricsRecord};
use crate::error::{Error, Result};

/// What `plot` produced.
#[derive(Clone, Debug, Default)]
pub struct PlotOutput {
    pub run_csvs: Vec<PathBuf>,
    pub aggregate_csv: PathBuf,
    pub svgs: Vec<PathBuf>,
    /// Malformed lines skipped across all inputs.
    pub skipped_lines: usize,
}

const RUN_HEADER: &str = "step,cost_mean,cost_std,safety_rate,nu,beta,loss_policy,loss_vl,loss_vh,frac_violating";

fn run_row(r: &MetricsRecord) -> String {
    let m = &r.report;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        m.step, m.cost_mean, m.cost_std, m.safety_rate, m.nu, m.beta, m.loss_policy, m.loss_vl, m.loss_vh, m.frac_violating
    )
}

/// One aggregated step: `(step, runs, cost mean, cost std, safety mean, safety std)`.
type AggRow = (u64, usize, f64, f64, f64, f64);

/// Mean and population std across runs at every step present in any run.
fn aggregate(runs: &[Vec<MetricsRecord>]) -> Vec<AggRow> {
    let mut steps: Vec<u64> = runs.iter().flatten().map(|r| r.report.step).collect();
    steps.sort_unstable();
    steps.dedup();
    steps
        .into_iter()
        .map(|s| {
            let at: Vec<_> = runs.iter().filter_map(|run| run.iter().find(|r| r.report.step == s)).collect();
            let cost: Vec<f64> = at.iter().map(|r| r.report.cost_mean).collect();
            let safe: Vec<f64> = at.iter().map(|r| r.report.safety_rate).collect();
            let (cm, cs) = mean_std(&cost);
            let (sm, ss) = mean_std(&safe);
            (s, at.len(), cm, cs, sm, ss)
        })
        .collect()
}

/// Mean and population std, computed around the first sample so that
/// identical inputs reproduce their value exactly.
fn mean_std(x: &[f64]) -> (f64, f64) {
    let Some(&x0) = x.first() else { return (0.0, 0.0) };
    let n = x.len() as f64;
    let shift = x.iter().map(|v| v - x0).sum::<f64>() / n;
    let var = x.iter().map(|v| (v - x0 - shift).powi(2)).sum::<f64>() / n;
    (x0 + shift, var.sqrt())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// File-name stem for input `i`.
fn run_name(i: usize, path: &Path) -> String {
    let stem: String = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("run")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    format!("run{i}_{stem}")
}

pub fn plot(inputs: &[PathBuf], out: &Path) -> Result<PlotOutput> {
    if inputs.is_empty() {
        return Err(Error::Invalid("plot needs at least one metrics file".into()));
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut result = PlotOutput::default();
    let mut runs = Vec::with_capacity(inputs.len());
    for (i, path) in inputs.iter().enumerate() {
        let m = read_metrics(path)?;
        result.skipped_lines += m.skipped;
        let mut csv = String::from(RUN_HEADER);
        csv.push('\n');
        for r in &m.records {
            csv.push_str(&run_row(r));
            csv.push('\n');
        }
        let p = out.join(format!("{}.csv", run_name(i, path)));
        write(&p, &csv)?;
        result.run_csvs.push(p);
        runs.push(m.records);
    }

    let agg = aggregate(&runs);
    let mut csv = String::from("step,runs,cost_mean,cost_std,safety_rate_mean,safety_rate_std\n");
    for (s, n, cm, cs, sm, ss) in &agg {
        writeln!(csv, "{s},{n},{cm},{cs},{sm},{ss}").unwrap();
    }
    result.aggregate_csv = out.join("aggregate.csv");
    write(&result.aggregate_csv, &csv)?;

    for (name, title, pick) in [
        ("cost.svg", "cost", 0usize),
        ("safety_rate.svg", "safety rate", 1usize),
    ] {
        let series: Vec<Vec<(f64, f64)>> = runs
            .iter()
            .map(|run| {
                run.iter()
                    .map(|r| {
                        let y = if pick == 0 { r.report.cost_mean } else { r.report.safety_rate };
                        (r.report.step as f64, y)
                    })
                    .collect()
            })
            .collect();
        let band: Vec<(f64, f64, f64)> = agg
            .iter()
            .map(|&(s, _, cm, cs, sm, ss)| if pick == 0 { (s as f64, cm, cs) } else { (s as f64, sm, ss) })
            .collect();
        let p = out.join(name);
        write(&p, &line_chart(title, &series, &band))?;
        result.svgs.push(p);
    }
    Ok(result)
}

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

/// Per-run lines in light colors plus the mean with a ±1 std band.
fn line_chart(title: &str, series: &[Vec<(f64, f64)>], band: &[(f64, f64, f64)]) -> String {
    let xs = band.iter().map(|b| b.0);
    let ys = series.iter().flatten().map(|p| p.1).chain(band.iter().flat_map(|b| [b.1 - b.2, b.1 + b.2]));
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(ys);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#, W / 2.0).unwrap();
    writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    )
    .unwrap();
    for (v, x, y, anchor) in [
        (y0, PAD - 6.0, H - PAD, "end"),
        (y1, PAD - 6.0, PAD + 4.0, "end"),
        (x0, PAD, H - PAD + 16.0, "middle"),
        (x1, W - PAD, H - PAD + 16.0, "middle"),
    ] {
        writeln!(
            s,
            r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-family="sans-serif" font-size="11">{}</text>"#,
            tick(v)
        )
        .unwrap();
    }
    if !band.is_empty() {
        let mut d = String::new();
        for (i, &(x, m, sd)) in band.iter().enumerate() {
            write!(d, "{}{:.2} {:.2} ", if i == 0 { "M" } else { "L" }, sx(x), sy(m + sd)).unwrap();
        }
        for &(x, m, sd) in band.iter().rev() {
            write!(d, "L{:.2} {:.2} ", sx(x), sy(m - sd)).unwrap();
        }
        writeln!(s, r##"<path d="{d}Z" fill="#000000" fill-opacity="0.12" stroke="none"/>"##).unwrap();
    }
    for (i, run) in series.iter().enumerate() {
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-opacity="0.5" stroke-width="1"/>"#,
            points(run.iter().map(|&(x, y)| (sx(x), sy(y)))),
            COLORS[i % COLORS.len()]
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
        points(band.iter().map(|&(x, m, _)| (sx(x), sy(m))))
    )
    .unwrap();
    s.push_str("</svg>\n");
    s
}

fn points(it: impl Iterator<Item = (f64, f64)>) -> String {
    it.map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 || v == v.trunc() {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

/// Finite range, widened when degenerate.
fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = it
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
