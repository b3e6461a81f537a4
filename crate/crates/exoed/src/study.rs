//! Table reproduction, Monte Carlo robustness and plot data.

use std::path::{Path, PathBuf};
use std::time::Instant;

use exoed_core::design::{finish, initial_designs, run_from_start, Criterion, DesignProblem, DesignResult, Method};
use exoed_core::estimation::{least_squares_fit, ConfidenceRegion, Dataset, Ellipsoid, FitSettings};
use exoed_core::geometry::{
    anchor_points_with, boundary_trace, bounding_orthotope, ellipsoid_scalings_with, farthest_pair_with,
    GeometrySettings, RegionContext,
};
use exoed_core::nlp::Bounds;
use exoed_core::stats::{gaussian_draws, NoiseStream};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{applicable, RunConfig};
use crate::error::{ExoedError, Result};
use crate::io;

/// One design solve with the restarts fanned out over the thread pool.
/// Candidates are reduced in start order, so the result does not depend on
/// scheduling.
pub fn solve(problem: &DesignProblem, timing: bool) -> Result<DesignResult> {
    let t = Instant::now();
    let starts = initial_designs(problem)?;
    let candidates: Vec<_> = starts.par_iter().map(|s| run_from_start(problem, s)).collect();
    let mut r = finish(problem, candidates)?;
    r.runtime_s = if timing { t.elapsed().as_secs_f64() } else { 0.0 };
    Ok(r)
}

/// `design_<name>_<criterion>_<method>_N<n>.json`.
pub fn design_file_name(name: &str, method: Method, criterion: Criterion, n: usize) -> String {
    format!("design_{name}_{}_{}_N{n}.json", criterion.name(), method.name())
}

#[derive(Debug, Clone)]
pub struct TableRow {
    pub method: Method,
    pub criterion: Criterion,
    pub n: usize,
    pub outcome: std::result::Result<DesignResult, RowFailure>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowFailure {
    pub message: String,
    pub exit_code: i32,
}

impl From<ExoedError> for RowFailure {
    fn from(e: ExoedError) -> Self {
        Self {
            exit_code: e.exit_code(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CaseStudy {
    pub name: String,
    pub n_u: usize,
    pub rows: Vec<TableRow>,
}

impl CaseStudy {
    /// Worst exit code over the rows, 0 when every row solved.
    pub fn exit_code(&self) -> i32 {
        self.rows
            .iter()
            .filter_map(|r| r.outcome.as_ref().err().map(|f| f.exit_code))
            .max()
            .unwrap_or(0)
    }

    pub fn find(&self, method: Method, criterion: Criterion, n: usize) -> Option<&DesignResult> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.criterion == criterion && r.n == n)
            .and_then(|r| r.outcome.as_ref().ok())
    }
}

/// Solves every configured row. `objective_exact` of each result is the exact
/// criterion at `U*` on the same region construction the robustness study
/// uses, so classical designs are scored like the others. Failures stay in
/// their row.
pub fn run_case_study(cfg: &RunConfig) -> Result<CaseStudy> {
    let n_u = cfg.model()?.num_inputs();
    let rows = cfg
        .rows()
        .into_par_iter()
        .map(|(method, criterion, n)| {
            let outcome = cfg
                .problem(criterion, method, n)
                .and_then(|p| solve(&p, cfg.timing))
                .map_err(RowFailure::from);
            TableRow {
                method,
                criterion,
                n,
                outcome,
            }
        })
        .collect();
    Ok(CaseStudy {
        name: cfg.name.clone(),
        n_u,
        rows,
    })
}

/// `table.csv` (family, criterion, N, u columns, phi_exact, status) and one
/// JSON file per solved row.
pub fn write_case_study(study: &CaseStudy, dir: &Path) -> Result<Vec<PathBuf>> {
    io::create_dir(dir)?;
    let width = study.rows.iter().map(|r| r.n).max().unwrap_or(0);
    let mut header: Vec<String> = ["family", "criterion", "N"].map(String::from).to_vec();
    for t in 1..=width {
        if study.n_u == 1 {
            header.push(format!("u_{t}"));
        } else {
            header.extend((1..=study.n_u).map(|i| format!("u_{t}_{i}")));
        }
    }
    header.push("phi_exact".into());
    header.push("status".into());
    let mut rows = Vec::new();
    let mut written = Vec::new();
    for r in &study.rows {
        let mut row = vec![
            r.method.name().to_string(),
            r.criterion.name().to_string(),
            r.n.to_string(),
        ];
        let (u, phi, status) = match &r.outcome {
            Ok(d) => (d.flat(), Some(d.objective_exact), "ok".to_string()),
            Err(f) => (Vec::new(), None, f.message.clone()),
        };
        for k in 0..width * study.n_u {
            row.push(io::cell(u.get(k).copied()));
        }
        row.push(io::cell(phi));
        row.push(status);
        rows.push(row);
        if let Ok(d) = &r.outcome {
            let path = dir.join(design_file_name(&study.name, r.method, r.criterion, r.n));
            io::write_json(&path, d)?;
            written.push(path);
        }
    }
    let table = dir.join("table.csv");
    io::write_csv(&table, &header, &rows)?;
    written.insert(0, table);
    Ok(written)
}

/// A design compared in the robustness study.
#[derive(Debug, Clone, PartialEq)]
pub struct RobustDesign {
    pub method: Method,
    pub criterion: Criterion,
    /// Flat, sample-major.
    pub u_star: Vec<f64>,
}

impl RobustDesign {
    pub fn from_result(r: &DesignResult) -> Self {
        Self {
            method: r.method,
            criterion: r.criterion,
            u_star: r.flat(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignStats {
    pub method: Method,
    pub criterion: Criterion,
    #[serde(rename = "U_star")]
    pub u_star: Vec<f64>,
    /// Criterion for noise-free data.
    pub nominal: f64,
    pub mean: f64,
    /// Unbiased sample variance.
    pub variance: f64,
    /// Largest value over completed trials.
    pub worst: f64,
    pub completed: usize,
    /// Trials whose lower levels failed; excluded from the statistics.
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub name: String,
    pub trials: usize,
    pub seed: u64,
    pub sigma: Vec<f64>,
    pub designs: Vec<DesignStats>,
}

/// Per-trial values, `values[trial][design]`; `None` marks a failed trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialValues {
    pub designs: Vec<RobustDesign>,
    pub values: Vec<Vec<Option<f64>>>,
}

/// Mean, unbiased variance, maximum and count of the finite entries.
pub fn summarize(values: impl Iterator<Item = Option<f64>>) -> (f64, f64, f64, usize, usize) {
    let mut ok = Vec::new();
    let mut failed = 0;
    for v in values {
        match v {
            Some(x) if x.is_finite() => ok.push(x),
            _ => failed += 1,
        }
    }
    let n = ok.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, f64::NAN, 0, failed);
    }
    let mean = ok.iter().sum::<f64>() / n as f64;
    let variance = if n > 1 {
        ok.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    let worst = ok.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, variance, worst, n, failed)
}

/// Simulated experiments `y = y(p_hat, U*) + e`. Every trial draws one error
/// vector from its own substream and applies it to all designs (common random
/// numbers). The regions keep the nominal `p_hat` and the design-time
/// threshold; only the data and hence `J(p_hat)` change.
pub fn robustness_study(
    cfg: &RunConfig,
    designs: &[RobustDesign],
    trials: usize,
    seed: u64,
    sigma: &[f64],
) -> Result<(RobustnessReport, TrialValues)> {
    let model = cfg.model()?;
    let n_u = model.num_inputs();
    let n_y = model.num_outputs();
    let problems = designs
        .iter()
        .map(|d| {
            if d.u_star.is_empty() || d.u_star.len() % n_u != 0 {
                return Err(ExoedError::Config("design has the wrong number of inputs".into()));
            }
            cfg.problem(d.criterion, Method::Classical, d.u_star.len() / n_u)
        })
        .collect::<Result<Vec<_>>>()?;
    let stream = NoiseStream::new(seed, sigma.to_vec())?;
    let max_len = problems.iter().map(|p| p.n_samples * n_y).max().unwrap_or(0);
    let values: Vec<Vec<Option<f64>>> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let e = gaussian_draws(&stream.substream(t as u64), max_len);
            designs
                .iter()
                .zip(&problems)
                .map(|(d, p)| {
                    p.score(&d.u_star, d.criterion, Some(&e[..p.n_samples * n_y]))
                        .ok()
                        .map(|s| s.value)
                })
                .collect()
        })
        .collect();
    let stats = designs
        .iter()
        .zip(&problems)
        .enumerate()
        .map(|(k, (d, p))| {
            let nominal = p.score(&d.u_star, d.criterion, None)?.value;
            let (mean, variance, worst, completed, failed) = summarize(values.iter().map(|row| row[k]));
            Ok(DesignStats {
                method: d.method,
                criterion: d.criterion,
                u_star: d.u_star.clone(),
                nominal,
                mean,
                variance,
                worst,
                completed,
                failed,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        RobustnessReport {
            name: cfg.name.clone(),
            trials,
            seed,
            sigma: sigma.to_vec(),
            designs: stats,
        },
        TrialValues {
            designs: designs.to_vec(),
            values,
        },
    ))
}

const PHI_COLUMNS: [(Criterion, &str); 3] = [
    (Criterion::A, "phi_A"),
    (Criterion::D, "phi_D"),
    (Criterion::E, "phi_E"),
];

/// `robustness.csv`: one row per trial and method with `phi_A, phi_D, phi_E`
/// of that method's designs. Empty cells: the method has no such design;
/// `NaN`: the trial failed.
pub fn write_trials(path: &Path, trials: &TrialValues) -> Result<()> {
    let mut methods: Vec<Method> = Vec::new();
    for d in &trials.designs {
        if !methods.contains(&d.method) {
            methods.push(d.method);
        }
    }
    let mut header: Vec<String> = vec!["trial".into(), "method".into()];
    header.extend(PHI_COLUMNS.iter().map(|c| c.1.to_string()));
    let mut rows = Vec::new();
    for (t, row) in trials.values.iter().enumerate() {
        for &m in &methods {
            let mut r = vec![t.to_string(), m.name().to_string()];
            for (c, _) in PHI_COLUMNS {
                let cell = trials
                    .designs
                    .iter()
                    .position(|d| d.method == m && d.criterion == c)
                    .map(|k| io::cell(Some(row[k].unwrap_or(f64::NAN))))
                    .unwrap_or_default();
                r.push(cell);
            }
            rows.push(r);
        }
    }
    io::write_csv(path, &header, &rows)
}

/// Trial values of one design, `None` for failed trials.
pub type DesignTrials = (Method, Criterion, Vec<Option<f64>>);

/// Per-design values read back from `robustness.csv`, in the order methods
/// and criteria first appear.
pub fn read_trials(path: &Path) -> Result<Vec<DesignTrials>> {
    let (header, rows) = io::read_csv(path)?;
    if header.len() != 5 || header[0] != "trial" || header[1] != "method" {
        return Err(ExoedError::parse(
            path,
            "expected columns trial,method,phi_A,phi_D,phi_E",
        ));
    }
    let mut out: Vec<DesignTrials> = Vec::new();
    for r in &rows {
        let m: Method = r[1].parse().map_err(|e| ExoedError::parse(path, e))?;
        for (j, (c, _)) in PHI_COLUMNS.iter().enumerate() {
            let Some(v) = io::parse_cell(path, &r[2 + j])? else {
                continue;
            };
            let v = v.is_finite().then_some(v);
            match out.iter_mut().find(|(mm, cc, _)| *mm == m && cc == c) {
                Some(entry) => entry.2.push(v),
                None => out.push((m, *c, vec![v])),
            }
        }
    }
    Ok(out)
}

/// The designs compared in the robustness study: loaded from `from` when
/// given (files named by [`design_file_name`]), solved otherwise.
pub fn robustness_designs(cfg: &RunConfig, from: Option<&Path>) -> Result<Vec<(RobustDesign, DesignResult)>> {
    let n = cfg.trial_n()?;
    let mut pairs = Vec::new();
    for &m in &cfg.robustness.methods {
        for &c in &cfg.robustness.criteria {
            if applicable(m, c) {
                pairs.push((m, c));
            }
        }
    }
    pairs
        .into_par_iter()
        .map(|(m, c)| {
            let r = match from {
                Some(dir) => io::read_json::<DesignResult>(&dir.join(design_file_name(&cfg.name, m, c, n)))?,
                None => solve(&cfg.problem(c, m, n)?, cfg.timing)?,
            };
            Ok((RobustDesign::from_result(&r), r))
        })
        .collect()
}

/// Files written by the plot exporters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlotFiles {
    pub exact: PathBuf,
    pub linearized: PathBuf,
    pub scaled: PathBuf,
    pub points: PathBuf,
}

fn ellipse_polyline(e: &Ellipsoid, samples: usize) -> Vec<[f64; 2]> {
    (0..=samples)
        .map(|k| {
            let t = 2.0 * std::f64::consts::PI * k as f64 / samples as f64;
            let p = e.boundary_point(&[t.cos(), t.sin()]);
            [p[0], p[1]]
        })
        .collect()
}

/// Plot data of one two-parameter region:
///
/// * `<tag>_exact.csv`: boundary polylines (`id, x, y`), closed curves repeat
///   their first vertex;
/// * `<tag>_linearized.csv`: the Fisher ellipse;
/// * `<tag>_scaled.csv`: the ellipses `q(p) = k_in` (id 0) and `k_out` (id 1);
/// * `<tag>_points.csv`: `kind, index, x, y` for `p_hat`, anchors, orthotope
///   corners and the farthest pair.
pub fn export_region(cr: &ConfidenceRegion, geometry: &GeometrySettings, dir: &Path, tag: &str) -> Result<PlotFiles> {
    if cr.num_params() != 2 {
        return Err(ExoedError::Config("plot data needs a two-parameter model".into()));
    }
    io::create_dir(dir)?;
    let ctx = RegionContext::new(cr, geometry)?;
    let anchors = anchor_points_with(cr, &ctx, geometry, None)?;
    let pair = farthest_pair_with(cr, &ctx, Some(&anchors), geometry, None)?;
    let fim = cr.fisher();
    let sc = ellipsoid_scalings_with(cr, &fim, &ctx, geometry, None)?;
    let orth = bounding_orthotope(&anchors);

    let sb = cr.search_box();
    let mut lo = orth.lower.clone();
    let mut hi = orth.upper.clone();
    for j in 0..2 {
        let pad = 0.1 * (hi[j] - lo[j]);
        lo[j] = (lo[j] - pad).max(sb.lower[j]);
        hi[j] = (hi[j] + pad).min(sb.upper[j]);
    }
    let traced = boundary_trace(cr, &Bounds::new(lo, hi), 241)?;
    let exact: Vec<(usize, Vec<[f64; 2]>)> = traced
        .into_iter()
        .map(|l| {
            let mut pts = l.points;
            if l.closed && !pts.is_empty() {
                pts.push(pts[0]);
            }
            (l.id, pts)
        })
        .collect();

    let files = PlotFiles {
        exact: dir.join(format!("{tag}_exact.csv")),
        linearized: dir.join(format!("{tag}_linearized.csv")),
        scaled: dir.join(format!("{tag}_scaled.csv")),
        points: dir.join(format!("{tag}_points.csv")),
    };
    io::write_polylines(&files.exact, &exact)?;
    let lin = cr.linearized()?;
    io::write_polylines(&files.linearized, &[(0, ellipse_polyline(&lin, 360))])?;
    let center = cr.p_hat().to_vec();
    let inner = Ellipsoid::new(center.clone(), fim.clone(), sc.k_in)?;
    let outer = Ellipsoid::new(center, fim, sc.k_out)?;
    io::write_polylines(
        &files.scaled,
        &[(0, ellipse_polyline(&inner, 360)), (1, ellipse_polyline(&outer, 360))],
    )?;

    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut point = |kind: &str, i: usize, p: &[f64]| {
        rows.push(vec![
            kind.to_string(),
            i.to_string(),
            p[0].to_string(),
            p[1].to_string(),
        ]);
    };
    point("p_hat", 0, cr.p_hat());
    for (i, p) in anchors.points.iter().enumerate() {
        point("anchor", i, p);
    }
    let corners = [
        [orth.lower[0], orth.lower[1]],
        [orth.upper[0], orth.lower[1]],
        [orth.upper[0], orth.upper[1]],
        [orth.lower[0], orth.upper[1]],
    ];
    for (i, c) in corners.iter().enumerate() {
        point("orthotope", i, c);
    }
    point("pair", 0, &pair.phi1);
    point("pair", 1, &pair.phi2);
    io::write_csv(&files.points, &["kind", "index", "x", "y"].map(String::from), &rows)?;
    Ok(files)
}

/// Plot data of the noise-free region at a design `u` (flat).
pub fn export_region_plots(cfg: &RunConfig, problem: &DesignProblem, u: &[f64], dir: &Path) -> Result<PlotFiles> {
    let cr = problem.region(u)?;
    let tag = format!(
        "{}_{}_{}_N{}",
        cfg.name,
        problem.criterion.name(),
        problem.method.name(),
        problem.n_samples
    );
    export_region(&cr, &problem.settings.geometry, dir, &tag)
}

/// Plot data of the region of measured data around its least-squares fit.
/// With an unknown variance the threshold uses the residual estimate `s^2`.
pub fn export_dataset_plots(cfg: &RunConfig, dataset: Dataset, dir: &Path) -> Result<(Vec<f64>, PlotFiles)> {
    let model = cfg.model()?;
    let fit_settings = FitSettings {
        seed: cfg.seed,
        search_box: cfg.search_box.as_ref().map(Bounds::from),
        ..FitSettings::default()
    };
    let fit = least_squares_fit(model.as_ref(), &dataset, &cfg.p_hat, &fit_settings)?;
    let mut cr = ConfidenceRegion::new(model, dataset, &fit.p_hat, cfg.alpha, None)?;
    if let Some(b) = &cfg.search_box {
        cr = cr.with_search_box(b.into())?;
    }
    let files = export_region(&cr, &cfg.settings().geometry, dir, &format!("{}_data", cfg.name))?;
    Ok((fit.p_hat, files))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_skips_failures() {
        let (mean, var, worst, n, failed) = summarize([Some(1.0), None, Some(3.0), Some(f64::NAN)].into_iter());
        assert_eq!((mean, var, worst, n, failed), (2.0, 2.0, 3.0, 2, 2));
        let (m, _, _, n, f) = summarize([None].into_iter());
        assert!(m.is_nan());
        assert_eq!((n, f), (0, 1));
    }

    #[test]
    fn file_names() {
        assert_eq!(
            design_file_name("case1", Method::Exact, Criterion::A, 4),
            "design_case1_A_exact_N4.json"
        );
    }
}
