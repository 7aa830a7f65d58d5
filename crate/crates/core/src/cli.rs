//! Commands behind the `optipur` binary.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use rayon::prelude::*;

use crate::analysis::{estimate, trial_seed, Estimates};
use crate::config::{check_estimate, Config, Point, SchemeSpec};
use crate::error::{Error, Result};
use crate::linkmodel::LinkKind;
use crate::protocols::{EventLog, Protocol, Simulator};

pub const SWEEP_HEADER: [&str; 12] = [
    "protocol",
    "f0",
    "t2_s",
    "mu_hz",
    "d_km",
    "n_steps",
    "fidelity",
    "fidelity_ci",
    "rate",
    "rate_ci",
    "skr",
    "n_trials",
];

pub const HEATMAP_HEADER: [&str; 8] = [
    "f0",
    "t2_s",
    "best_protocol",
    "best_skr",
    "skr_nop",
    "skr_base",
    "skr_hopt",
    "skr_opt",
];

/// Command-line settings that take precedence over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials_min: Option<usize>,
    pub ci_target: Option<f64>,
    pub max_trials: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut Config) -> Result<()> {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(n) = self.trials_min {
            cfg.estimate.n_min = n;
            cfg.estimate.max_trials = cfg.estimate.max_trials.max(n);
        }
        if let Some(c) = self.ci_target {
            cfg.estimate.ci_target = c;
        }
        if let Some(m) = self.max_trials {
            cfg.estimate.max_trials = m;
        }
        check_estimate(&cfg.estimate)
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub protocol: Protocol,
    pub point: Point,
    pub est: Estimates,
}

#[derive(Debug, Clone)]
pub struct HeatmapCell {
    pub f0: f64,
    pub t2_s: f64,
    /// Best key rate over the searched depths, per protocol in `Protocol::ALL` order.
    pub skr: [Option<f64>; 4],
}

impl HeatmapCell {
    /// Highest key rate and its protocol; earlier protocols win ties and
    /// `None` means no protocol reaches a positive rate.
    pub fn best(&self) -> (Option<Protocol>, f64) {
        let mut best: (Option<Protocol>, f64) = (None, 0.0);
        for (p, s) in Protocol::ALL.into_iter().zip(self.skr) {
            if let Some(s) = s {
                if s > best.1 {
                    best = (Some(p), s);
                }
            }
        }
        best
    }
}

fn estimate_at(cfg: &Config, protocol: Protocol, mbc: bool, point: &Point) -> Result<Estimates> {
    let setup = cfg.setup(protocol, mbc, point)?;
    estimate(&setup, &cfg.estimate, cfg.point_seed(point, mbc))
}

fn describe(cfg: &Config) -> String {
    let link = match cfg.link.kind {
        LinkKind::Ground => format!("ground link d={} km", cfg.link.d),
        LinkKind::Satellite => format!("satellite link d={} km h={} km", cfg.link.d, cfg.link.h),
    };
    let scheme = match &cfg.scheme {
        SchemeSpec::Pumping(n) => format!("pumping({n})"),
        SchemeSpec::Circuit { path, .. } => format!("circuit({})", path.display()),
    };
    format!(
        "{link}, mu={} Hz, f0={}, t1={} s, t2={} s, p_g={}, p_m={}, scheme={scheme}, measure_before_confirm={}, seed={}",
        cfg.link.mu, cfg.f0, cfg.np.t1, cfg.np.t2, cfg.np.p_g, cfg.np.p_m, cfg.measure_before_confirm, cfg.seed
    )
}

/// Estimates every configured protocol at the base point and renders a table.
/// With `events_log`, the event log of each protocol's first trial is written there.
pub fn simulate(cfg: &Config, events_log: Option<&Path>) -> Result<String> {
    let point = cfg.base_point();
    let mbc = cfg.measure_before_confirm;
    let results: Vec<Estimates> = cfg
        .protocols
        .par_iter()
        .map(|&p| estimate_at(cfg, p, mbc, &point))
        .collect::<Result<_>>()?;

    let mut out = String::new();
    let _ = writeln!(out, "# {}", describe(cfg));
    let _ = writeln!(
        out,
        "{:<8} {:>10} {:>10} {:>14} {:>12} {:>8} {:>14} {:>8} {:>9}",
        "protocol", "fidelity", "±95%", "rate_1/s", "±95%", "skf", "skr_bit/s", "trials", "converged"
    );
    for (p, e) in cfg.protocols.iter().zip(&results) {
        let _ = writeln!(
            out,
            "{:<8} {:>10.6} {:>10.6} {:>14.4} {:>12.4} {:>8.5} {:>14.4} {:>8} {:>9}",
            p.name(),
            e.mean_fidelity,
            e.ci_halfwidth_fidelity,
            e.rate,
            e.ci_halfwidth_rate,
            e.skf,
            e.skr,
            e.n_trials,
            e.converged
        );
    }

    if let Some(path) = events_log {
        let mut text = String::new();
        let seed = cfg.point_seed(&point, mbc);
        for &p in &cfg.protocols {
            let mut sim = Simulator::new(&cfg.setup(p, mbc, &point)?)?;
            let mut log = EventLog::default();
            sim.run_seeded(trial_seed(seed, 0), Some(&mut log))?;
            let _ = writeln!(text, "# protocol {} trial 0", p.name());
            text.push_str(&log.to_text());
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(out)
}

/// One row per grid point and protocol, grid points in lexicographic order.
pub fn sweep_rows(cfg: &Config) -> Result<Vec<SweepRow>> {
    let mbc = cfg.measure_before_confirm;
    let jobs: Vec<(Point, Protocol)> = cfg
        .sweep_points()
        .into_iter()
        .flat_map(|pt| cfg.protocols.iter().map(move |&p| (pt, p)))
        .collect();
    jobs.par_iter()
        .map(|&(point, protocol)| {
            Ok(SweepRow {
                protocol,
                point,
                est: estimate_at(cfg, protocol, mbc, &point)?,
            })
        })
        .collect()
}

/// Best key rate per protocol on the `(f0, t2_s)` grid, f0 outermost.
pub fn heatmap_cells(cfg: &Config) -> Result<Vec<HeatmapCell>> {
    let hm = cfg
        .heatmap
        .as_ref()
        .ok_or_else(|| Error::config("heatmap", "missing `[heatmap]` table"))?;
    let mbc = hm.measure_before_confirm;
    let steps: Vec<usize> = match cfg.scheme {
        SchemeSpec::Pumping(_) => hm.steps.clone(),
        SchemeSpec::Circuit { .. } => vec![0],
    };
    let mut jobs: Vec<(usize, usize, Protocol, Point)> = Vec::new();
    for (i, &f0) in hm.f0.iter().enumerate() {
        for (j, &t2) in hm.t2_s.iter().enumerate() {
            for &p in &cfg.protocols {
                let depths: &[usize] = if p == Protocol::Nop { &[0] } else { &steps };
                for &n in depths {
                    let point = Point {
                        f0,
                        t2_s: t2,
                        n_steps: n,
                        ..cfg.base_point()
                    };
                    jobs.push((i, j, p, point));
                }
            }
        }
    }
    let skrs: Vec<f64> = jobs
        .par_iter()
        .map(|(_, _, p, point)| estimate_at(cfg, *p, mbc, point).map(|e| e.skr))
        .collect::<Result<_>>()?;

    let mut cells: Vec<HeatmapCell> = Vec::new();
    for &f0 in &hm.f0 {
        for &t2_s in &hm.t2_s {
            cells.push(HeatmapCell {
                f0,
                t2_s,
                skr: [None; 4],
            });
        }
    }
    for ((i, j, p, _), skr) in jobs.iter().zip(skrs) {
        let cell = &mut cells[i * hm.t2_s.len() + j];
        let k = Protocol::ALL.iter().position(|q| q == p).expect("known protocol");
        cell.skr[k] = Some(cell.skr[k].map_or(skr, |s: f64| s.max(skr)));
    }
    Ok(cells)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.protocol.name().to_string(),
            r.point.f0.to_string(),
            r.point.t2_s.to_string(),
            r.point.mu_hz.to_string(),
            r.point.d_km.to_string(),
            r.point.n_steps.to_string(),
            r.est.mean_fidelity.to_string(),
            r.est.ci_halfwidth_fidelity.to_string(),
            r.est.rate.to_string(),
            r.est.ci_halfwidth_rate.to_string(),
            r.est.skr.to_string(),
            r.est.n_trials.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_heatmap_csv(cells: &[HeatmapCell], path: &Path) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(HEATMAP_HEADER)?;
    for c in cells {
        let (best, best_skr) = c.best();
        let mut rec = vec![
            c.f0.to_string(),
            c.t2_s.to_string(),
            best.map_or("N/A".to_string(), |p| p.name().to_string()),
            best_skr.to_string(),
        ];
        rec.extend(c.skr.iter().map(|s| s.map_or(String::new(), |v| v.to_string())));
        w.write_record(rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn sweep(cfg: &Config, out: &Path) -> Result<()> {
    write_sweep_csv(&sweep_rows(cfg)?, out)
}

pub fn heatmap(cfg: &Config, out: &Path) -> Result<()> {
    write_heatmap_csv(&heatmap_cells(cfg)?, out)
}

/// Process exit code for an error: 2 for invalid input, 3 for failures while running.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Domain(_) | Error::Circuit(_) | Error::Parse { .. } | Error::Config { .. } | Error::Validation(_) => 2,
        Error::ImpossibleOutcome(_) | Error::Io { .. } | Error::Csv(_) => 3,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn best_protocol_ties_and_zero() {
        let cell = |skr| HeatmapCell {
            f0: 0.9,
            t2_s: 1.0,
            skr,
        };
        assert_eq!(cell([Some(0.0), Some(0.0), None, Some(0.0)]).best(), (None, 0.0));
        assert_eq!(
            cell([Some(1.0), Some(1.0), Some(0.5), Some(1.0)]).best(),
            (Some(Protocol::Nop), 1.0)
        );
        assert_eq!(
            cell([Some(1.0), Some(2.0), Some(0.5), Some(3.0)]).best(),
            (Some(Protocol::Opt), 3.0)
        );
    }
}
