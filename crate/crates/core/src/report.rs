//! Aggregated tables, CSV emission and SVG line plots of simulation sweeps.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::simulation::{run_sweep, run_sweep_with_threads, EffectsMode, Estimator, ScenarioConfig, SweepResult};

/// One `(π, estimator)` cell of a sweep summary. Means are over converged
/// replications only.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub pi: f64,
    pub estimator: Estimator,
    pub mean_se: Option<f64>,
    pub empirical_sd: Option<f64>,
    pub mean_tau_hat: Option<f64>,
    /// LRT rejection frequency at the 5% level; reported on MLM2 rows.
    pub rejection_freq: Option<f64>,
    pub mean_sigma_alpha_sq: Option<f64>,
    pub n_converged: usize,
    pub n_reps: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

const TABLE_HEADER: [&str; 9] = [
    "pi",
    "estimator",
    "mean_se",
    "empirical_sd",
    "mean_tau_hat",
    "rejection_freq",
    "mean_sigma_alpha_sq",
    "n_converged",
    "n_reps",
];

const RAW_HEADER: [&str; 16] = [
    "pi",
    "grid_index",
    "rep_id",
    "estimator",
    "tau_hat",
    "se",
    "converged",
    "sigma_alpha_sq",
    "sigma_tau_sq",
    "sigma_eps_sq",
    "loglik",
    "lrt_stat",
    "lrt_p_naive",
    "lrt_p_mixture",
    "lrt_rejected",
    "mean_abs_size_diff",
];

fn cell(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => String::new(),
    }
}

fn parse_cell(s: &str, line: u64) -> Result<Option<f64>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse().map(Some).map_err(|_| Error::Parse { line, message: format!("bad number `{s}`") })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn sample_sd(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    (values.len() >= 2).then(|| {
        let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
        (ss / (values.len() - 1) as f64).sqrt()
    })
}

impl ReportTable {
    pub fn row(&self, pi: f64, estimator: Estimator) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.pi == pi && r.estimator == estimator)
    }

    /// Rows for one estimator, in grid order.
    pub fn series(&self, estimator: Estimator) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.estimator == estimator).collect()
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(TABLE_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.pi.to_string(),
                r.estimator.to_string(),
                cell(r.mean_se),
                cell(r.empirical_sd),
                cell(r.mean_tau_hat),
                cell(r.rejection_freq),
                cell(r.mean_sigma_alpha_sq),
                r.n_converged.to_string(),
                r.n_reps.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header != TABLE_HEADER {
            return Err(Error::Config(format!("unexpected report header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = i as u64 + 2;
            let count = |s: &str| s.parse::<usize>().map_err(|_| Error::Parse { line, message: format!("bad count `{s}`") });
            rows.push(ReportRow {
                pi: parse_cell(&rec[0], line)?.ok_or(Error::Parse { line, message: "missing pi".into() })?,
                estimator: rec[1].parse()?,
                mean_se: parse_cell(&rec[2], line)?,
                empirical_sd: parse_cell(&rec[3], line)?,
                mean_tau_hat: parse_cell(&rec[4], line)?,
                rejection_freq: parse_cell(&rec[5], line)?,
                mean_sigma_alpha_sq: parse_cell(&rec[6], line)?,
                n_converged: count(&rec[7])?,
                n_reps: count(&rec[8])?,
            });
        }
        Ok(ReportTable { rows })
    }
}

/// Aggregates a sweep into one row per `(grid point, estimator)`.
pub fn summarize_sweep(sweep: &SweepResult) -> Result<ReportTable> {
    if sweep.points.is_empty() {
        return Err(Error::Config("cannot summarize an empty sweep".into()));
    }
    let estimators = sweep.estimators();
    let mut rows = Vec::new();
    for point in &sweep.points {
        for &est in &estimators {
            let records: Vec<_> = point
                .replications
                .iter()
                .filter_map(|r| r.estimate(est))
                .filter(|e| e.converged && e.se.is_finite() && e.tau_hat.is_finite())
                .collect();
            let se: Vec<f64> = records.iter().map(|e| e.se).collect();
            let tau: Vec<f64> = records.iter().map(|e| e.tau_hat).collect();
            let sig: Vec<f64> = records.iter().filter_map(|e| e.sigma_alpha_sq).collect();
            let rejection_freq = (est == Estimator::Mlm2)
                .then(|| {
                    let tests: Vec<f64> = point
                        .replications
                        .iter()
                        .filter_map(|r| r.lrt)
                        .map(|t| if t.rejected_05 { 1.0 } else { 0.0 })
                        .collect();
                    mean(&tests)
                })
                .flatten();
            rows.push(ReportRow {
                pi: point.pi,
                estimator: est,
                mean_se: mean(&se),
                empirical_sd: sample_sd(&tau),
                mean_tau_hat: mean(&tau),
                rejection_freq,
                mean_sigma_alpha_sq: mean(&sig),
                n_converged: records.len(),
                n_reps: point.replications.len(),
            });
        }
    }
    Ok(ReportTable { rows })
}

/// Writes every replication's estimates, one row per estimator.
pub fn write_raw_csv<W: Write>(sweep: &SweepResult, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(RAW_HEADER)?;
    for point in &sweep.points {
        for rep in &point.replications {
            for e in &rep.estimates {
                let lrt = rep.lrt;
                w.write_record([
                    point.pi.to_string(),
                    point.grid_index.to_string(),
                    rep.rep_id.to_string(),
                    e.estimator.to_string(),
                    cell(Some(e.tau_hat)),
                    cell(Some(e.se)),
                    u8::from(e.converged).to_string(),
                    cell(e.sigma_alpha_sq),
                    cell(e.sigma_tau_sq),
                    cell(e.sigma_eps_sq),
                    cell(e.loglik),
                    cell(lrt.map(|t| t.stat)),
                    cell(lrt.map(|t| t.p_naive)),
                    cell(lrt.map(|t| t.p_mixture)),
                    lrt.map(|t| u8::from(t.rejected_05).to_string()).unwrap_or_default(),
                    cell(Some(rep.mean_abs_size_diff())),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn color(est: Estimator) -> (&'static str, f64, &'static str) {
    match est {
        Estimator::Mlm1 => ("#1f77b4", 2.0, ""),
        Estimator::Mlm2 => ("#d62728", 2.0, ""),
        Estimator::Mlm3 => ("#999999", 5.0, ""),
        Estimator::Ikn => ("#2ca02c", 2.0, " stroke-dasharray=\"8 4\""),
    }
}

/// Line plot of mean standard error against `π`, one polyline per estimator,
/// in a fixed 800×600 viewport.
pub fn render_svg(table: &ReportTable, title: &str, estimators: &[Estimator]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const LEFT: f64 = 80.0;
    const RIGHT: f64 = 30.0;
    const TOP: f64 = 50.0;
    const BOTTOM: f64 = 70.0;

    let mut grid: Vec<f64> = table.rows.iter().map(|r| r.pi).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let x_min = grid.first().copied().unwrap_or(0.0);
    let x_max = grid.last().copied().unwrap_or(1.0).max(x_min + 1e-9);
    let values: Vec<f64> = table
        .rows
        .iter()
        .filter(|r| estimators.contains(&r.estimator))
        .filter_map(|r| r.mean_se)
        .collect();
    let y_max = values.iter().copied().fold(0.0, f64::max).max(1e-9) * 1.1;
    let sx = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * (W - LEFT - RIGHT);
    let sy = |y: f64| H - BOTTOM - y / y_max * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"800\" height=\"600\" viewBox=\"0 0 800 600\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect x=\"0\" y=\"0\" width=\"800\" height=\"600\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"400\" y=\"28\" text-anchor=\"middle\" font-size=\"16\">{}</text>", escape(title));
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(s, "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y0:.2}\" stroke=\"black\"/>");
    let _ = writeln!(s, "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x0:.2}\" y2=\"{y1:.2}\" stroke=\"black\"/>");
    for &g in &grid {
        let x = sx(g);
        let _ = writeln!(s, "<line x1=\"{x:.2}\" y1=\"{y0:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"black\"/>", y0 + 5.0);
        let _ = writeln!(s, "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{g:.2}</text>", y0 + 20.0);
    }
    for i in 0..=5 {
        let v = y_max * f64::from(i) / 5.0;
        let y = sy(v);
        let _ = writeln!(s, "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{x0:.2}\" y2=\"{y:.2}\" stroke=\"black\"/>", x0 - 5.0);
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.3}</text>", x0 - 8.0, y + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">match quality \u{3c0}</text>", (x0 + x1) / 2.0, H - 25.0);
    let _ = writeln!(
        s,
        "<text x=\"20\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 20 {:.2})\">standard error</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    for (i, &est) in estimators.iter().enumerate() {
        let (stroke, width, dash) = color(est);
        let points: Vec<String> = table
            .series(est)
            .iter()
            .filter_map(|r| r.mean_se.map(|v| format!("{:.2},{:.2}", sx(r.pi), sy(v))))
            .collect();
        if !points.is_empty() {
            let _ = writeln!(
                s,
                "<polyline fill=\"none\" stroke=\"{stroke}\" stroke-width=\"{width}\"{dash} points=\"{}\"/>",
                points.join(" ")
            );
        }
        let ly = TOP + 15.0 + 20.0 * i as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{:.2}\" y1=\"{ly:.2}\" x2=\"{:.2}\" y2=\"{ly:.2}\" stroke=\"{stroke}\" stroke-width=\"{width}\"{dash}/>",
            LEFT + 15.0,
            LEFT + 45.0
        );
        let _ = writeln!(s, "<text x=\"{:.2}\" y=\"{:.2}\">{}</text>", LEFT + 52.0, ly + 4.0, est.name());
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Tables and files produced by [`figure1`].
#[derive(Debug, Clone)]
pub struct Figure1Output {
    /// Constant treatment effects.
    pub panel_a: ReportTable,
    /// Heterogeneous treatment effects.
    pub panel_b: ReportTable,
    pub panel_a_sweep: SweepResult,
    pub panel_b_sweep: SweepResult,
    pub files: Vec<PathBuf>,
}

/// Runs the constant-effect and heterogeneous-effect scenarios over the grid
/// of `config` (covariate always generated, so MLM3 is included) and writes
/// `panelA.csv`, `panelB.csv`, `panelA.svg`, `panelB.svg` and the raw
/// per-replication files `panelA_raw.csv`, `panelB_raw.csv` into `out_dir`.
///
/// `threads` selects a dedicated pool size; `None` uses the global pool.
pub fn figure1(config: &ScenarioConfig, out_dir: &Path, threads: Option<usize>) -> Result<Figure1Output> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let grid = config.grid();
    let sweep = |effects_mode| {
        let cfg = ScenarioConfig { effects_mode, covariate: true, ..config.clone() };
        match threads {
            Some(n) => run_sweep_with_threads(&cfg, &grid, n),
            None => run_sweep(&cfg, &grid),
        }
    };
    let panel_a_sweep = sweep(EffectsMode::Constant)?;
    let panel_b_sweep = sweep(EffectsMode::Heterogeneous)?;
    let panel_a = summarize_sweep(&panel_a_sweep)?;
    let panel_b = summarize_sweep(&panel_b_sweep)?;

    let mut files = Vec::new();
    let mut emit = |name: &str, bytes: &[u8]| -> Result<()> {
        let path = out_dir.join(name);
        std::fs::write(&path, bytes)?;
        files.push(path);
        Ok(())
    };
    let all = [Estimator::Mlm1, Estimator::Mlm2, Estimator::Mlm3, Estimator::Ikn];
    let without_mlm1 = [Estimator::Mlm2, Estimator::Mlm3, Estimator::Ikn];
    emit("panelA.csv", panel_a.to_csv_string().as_bytes())?;
    emit("panelB.csv", panel_b.to_csv_string().as_bytes())?;
    emit("panelA.svg", render_svg(&panel_a, "A: constant treatment effects", &all).as_bytes())?;
    emit("panelB.svg", render_svg(&panel_b, "B: heterogeneous treatment effects", &without_mlm1).as_bytes())?;
    for (name, sweep) in [("panelA_raw.csv", &panel_a_sweep), ("panelB_raw.csv", &panel_b_sweep)] {
        let mut buf = Vec::new();
        write_raw_csv(sweep, &mut buf)?;
        emit(name, &buf)?;
    }
    Ok(Figure1Output { panel_a, panel_b, panel_a_sweep, panel_b_sweep, files })
}
