//! Static plots of a run (or sweep) directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::svg::{Axis, Chart, Style, PALETTE};

pub struct Table {
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn read(path: &Path) -> Option<Table> {
        let mut r = csv::Reader::from_path(path).ok()?;
        let headers = r.headers().ok()?.iter().map(str::to_string).collect();
        let rows = r.records().collect::<Result<Vec<_>, _>>().ok()?;
        Some(Table { headers, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn numbers(&self, name: &str) -> Option<Vec<f64>> {
        let c = self.col(name)?;
        Some(self.rows.iter().map(|r| r.get(c).and_then(|v| v.parse().ok()).unwrap_or(f64::NAN)).collect())
    }

    fn strings(&self, name: &str) -> Option<Vec<String>> {
        let c = self.col(name)?;
        Some(self.rows.iter().map(|r| r.get(c).unwrap_or("").to_string()).collect())
    }
}

#[derive(Debug, Default)]
pub struct Report {
    pub written: Vec<PathBuf>,
    pub skipped: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn agent_dirs(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("agent_")))
        .collect();
    v.sort_by_key(|p| {
        p.file_name()
            .and_then(|n| n.to_string_lossy().strip_prefix("agent_").and_then(|s| s.parse::<usize>().ok()))
            .unwrap_or(usize::MAX)
    });
    v
}

/// Per agent and checkpoint, the mean of `metric` over tests.
fn per_checkpoint(t: &Table, metric: &str) -> Option<BTreeMap<String, BTreeMap<u64, f64>>> {
    let agents = t.strings("agent")?;
    let steps = t.numbers("checkpoint")?;
    let values = t.numbers(metric)?;
    let mut acc: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for i in 0..agents.len() {
        let v = if values[i].is_finite() { values[i] } else { 0.0 };
        let e = acc.entry(agents[i].clone()).or_default().entry(steps[i] as u64).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    }
    Some(acc.into_iter().map(|(a, m)| (a, m.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect())).collect())
}

fn learning_curves(dir: &Path, out: &Path, report: &mut Report) {
    let Some(t) = Table::read(&dir.join("evaluations.csv")) else {
        report.skipped.push("learning curves: evaluations.csv missing or unreadable".into());
        return;
    };
    for (metric, file, label) in [
        ("sharpe", "learning_curve_sharpe.svg", "annualized Sharpe ratio"),
        ("cum_net_pnl", "learning_curve_pnl.svg", "cumulative net PnL"),
    ] {
        let Some(mut by_agent) = per_checkpoint(&t, metric) else {
            report.skipped.push(format!("learning curve: column {metric} missing"));
            continue;
        };
        let bench = by_agent.remove("benchmark").unwrap_or_default();
        if by_agent.is_empty() && bench.is_empty() {
            report.skipped.push(format!("learning curve {metric}: no rows"));
            continue;
        }
        let relative = metric == "cum_net_pnl" && !bench.is_empty() && bench.values().all(|&b| b > 0.0);
        let scale = |step: u64, v: f64| if relative { 100.0 * v / bench[&step] } else { v };
        let mut dots = Vec::new();
        let mut by_step: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
        for m in by_agent.values() {
            for (&k, &v) in m {
                let v = scale(k, v);
                dots.push((k as f64, v));
                by_step.entry(k).or_default().push(v);
            }
        }
        let avg: Vec<(f64, f64)> = by_step.iter().map(|(&k, v)| (k as f64, mean(v))).collect();
        let bench_line: Vec<(f64, f64)> = bench.iter().map(|(&k, &v)| (k as f64, scale(k, v))).collect();
        let y_label = if relative { "cumulative net PnL, % of benchmark".to_string() } else { label.to_string() };
        let mut c = Chart::new(&format!("Out-of-sample {label}"), "training progress", &y_label);
        c.add("agents", PALETTE[0], Style::Dots, Axis::Left, dots)
            .add("average", PALETTE[0], Style::Solid, Axis::Left, avg)
            .add("benchmark", PALETTE[1], Style::Dashed, Axis::Left, bench_line);
        write(out, file, &c, report);
    }
}

fn slices(dir: &Path, out: &Path, report: &mut Report) {
    let tables: Vec<Table> = agent_dirs(dir).iter().filter_map(|a| Table::read(&a.join("policy_slice.csv"))).collect();
    if tables.is_empty() {
        report.skipped.push("policy and value slices: no policy_slice.csv found".into());
        return;
    }
    let y = tables[0].numbers("y").unwrap_or_default();
    let actions: Vec<Vec<f64>> = tables.iter().filter_map(|t| t.numbers("action")).collect();
    let at = |i: usize| actions.iter().map(|a| a[i]).collect::<Vec<_>>();
    let avg: Vec<(f64, f64)> = (0..y.len()).map(|i| (y[i], mean(&at(i)))).collect();
    let lo: Vec<(f64, f64)> = (0..y.len()).map(|i| (y[i], at(i).into_iter().fold(f64::INFINITY, f64::min))).collect();
    let hi: Vec<(f64, f64)> = (0..y.len()).map(|i| (y[i], at(i).into_iter().fold(f64::NEG_INFINITY, f64::max))).collect();
    let mut c = Chart::new("Greedy policy at zero holding", "return y", "action");
    c.band(PALETTE[0], Axis::Left, lo, hi).add("mean over agents", PALETTE[0], Style::Solid, Axis::Left, avg);
    write(out, "policy_slice.svg", &c, report);

    let q_cols: Vec<String> = tables[0].headers.iter().filter(|h| h.starts_with('q')).cloned().collect();
    if q_cols.is_empty() {
        report.skipped.push("value slice: agents have no Q-values".into());
        return;
    }
    let mut c = Chart::new("Q-values at zero holding", "return y", "Q");
    for (j, col) in q_cols.iter().enumerate() {
        let cols: Vec<Vec<f64>> = tables.iter().filter_map(|t| t.numbers(col)).collect();
        let pts = (0..y.len()).map(|i| (y[i], mean(&cols.iter().map(|q| q[i]).collect::<Vec<_>>()))).collect();
        c.add(&format!("action {j}"), PALETTE[j % PALETTE.len()], Style::Solid, Axis::Left, pts);
    }
    write(out, "q_slice.svg", &c, report);
}

fn holdings(dir: &Path, out: &Path, window: usize, report: &mut Report) {
    let agent = agent_dirs(dir).into_iter().map(|a| a.join("final_test_0.csv")).find(|p| p.exists());
    let (Some(agent), Some(bench)) = (
        agent.and_then(|p| Table::read(&p)),
        Table::read(&dir.join("benchmark/final_test_0.csv")),
    ) else {
        report.skipped.push("holdings: final test series missing".into());
        return;
    };
    let (Some(ha), Some(hb)) = (agent.numbers("h"), bench.numbers("h")) else {
        report.skipped.push("holdings: column h missing".into());
        return;
    };
    let n = window.min(ha.len()).min(hb.len());
    let pts = |h: &[f64]| (0..n).map(|t| (t as f64, h[t])).collect::<Vec<_>>();
    let peak = |h: &[f64]| h[..n].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (pa, pb) = (peak(&ha), peak(&hb));
    let separate = pa > 0.0 && pb > 0.0 && (pa / pb > 5.0 || pb / pa > 5.0);
    let mut c = Chart::new(&format!("Holdings, first {n} steps of an out-of-sample test"), "step", "agent holding");
    c.add("agent", PALETTE[0], Style::Solid, Axis::Left, pts(&ha));
    if separate {
        c.right_axis("benchmark holding");
        c.add("benchmark (right axis)", PALETTE[1], Style::Solid, Axis::Right, pts(&hb));
    } else {
        c.add("benchmark", PALETTE[1], Style::Solid, Axis::Left, pts(&hb));
    }
    write(out, "holdings.svg", &c, report);
}

fn sweep(dir: &Path, out: &Path, report: &mut Report) {
    let Some(t) = Table::read(&dir.join("sweep.csv")) else {
        return;
    };
    let labels = t.strings("value").unwrap_or_default();
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse().ok()).collect();
    let xs = numeric.unwrap_or_else(|| (0..labels.len()).map(|i| i as f64).collect());
    let mut c = Chart::new("Sensitivity of the Sharpe ratio", "swept value", "annualized Sharpe ratio");
    for (prefix, color, name) in [("agent", PALETTE[0], "agents"), ("bench", PALETTE[1], "benchmark")] {
        let (Some(m), Some(s)) = (t.numbers(&format!("{prefix}_sharpe")), t.numbers(&format!("{prefix}_sharpe_std"))) else {
            continue;
        };
        let band = |sign: f64| xs.iter().zip(m.iter().zip(&s)).map(|(&x, (&m, &s))| (x, m + sign * s)).collect();
        c.band(color, Axis::Left, band(-1.0), band(1.0));
        c.add(name, color, Style::Solid, Axis::Left, xs.iter().copied().zip(m.iter().copied()).collect());
    }
    write(out, "sweep.svg", &c, report);
}

fn write(out: &Path, name: &str, chart: &Chart, report: &mut Report) {
    let path = out.join(name);
    match std::fs::create_dir_all(out).and_then(|_| std::fs::write(&path, chart.render())) {
        Ok(()) => report.written.push(path),
        Err(e) => report.skipped.push(format!("{name}: {e}")),
    }
}

/// Writes every panel the artifacts support into `out`; panels lacking data
/// are listed in the report instead.
pub fn emit_plots(dir: &Path, out: &Path, window: usize) -> Report {
    let mut report = Report::default();
    if dir.join("sweep.csv").exists() {
        sweep(dir, out, &mut report);
        return report;
    }
    learning_curves(dir, out, &mut report);
    slices(dir, out, &mut report);
    holdings(dir, out, window, &mut report);
    report
}
