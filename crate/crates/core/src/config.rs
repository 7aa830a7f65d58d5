//! Experiment configuration files.
//!
//! A config is a TOML document. Top-level keys describe the link, the noise
//! and the estimation budget; `[[sweep.axis]]` tables and a `[heatmap]` table
//! describe parameter grids. See the README for the full key list.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use toml::{Table, Value};

use crate::analysis::{EstimateOptions, SkfMode};
use crate::channels::{NoiseParams, SatelliteHardware};
use crate::error::{Error, Result};
use crate::linkmodel::{LinkConfig, LinkKind};
use crate::protocols::{Protocol, ProtocolKind, Scheme, Setup};
use crate::purify::PurificationCircuit;

const TOP_KEYS: &[&str] = &[
    "kind",
    "d_km",
    "mu_hz",
    "f0",
    "t2_s",
    "t1_s",
    "p_g",
    "p_m",
    "h_km",
    "alpha_f_db_per_km",
    "alpha_a_per_km",
    "atmosphere_ceiling_km",
    "c_fiber_km_s",
    "c_vacuum_km_s",
    "gate_time_s",
    "meas_time_s",
    "seed",
    "protocols",
    "n_steps",
    "circuit",
    "measure_before_confirm",
    "trials_min",
    "ci_target",
    "max_trials",
    "skf_mode",
    "hardware",
    "sweep",
    "heatmap",
];

/// A parameter that a grid may vary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    F0,
    T2,
    Mu,
    D,
    NSteps,
}

impl Param {
    pub fn key(self) -> &'static str {
        match self {
            Param::F0 => "f0",
            Param::T2 => "t2_s",
            Param::Mu => "mu_hz",
            Param::D => "d_km",
            Param::NSteps => "n_steps",
        }
    }

    fn from_key(key: &str) -> Option<Self> {
        [Param::F0, Param::T2, Param::Mu, Param::D, Param::NSteps]
            .into_iter()
            .find(|p| p.key() == key)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub param: Param,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSpec {
    pub f0: Vec<f64>,
    pub t2_s: Vec<f64>,
    /// Pumping depths searched for each purifying protocol.
    pub steps: Vec<usize>,
    pub measure_before_confirm: bool,
}

#[derive(Debug, Clone)]
pub enum SchemeSpec {
    Pumping(usize),
    Circuit {
        path: PathBuf,
        circuit: Arc<PurificationCircuit>,
    },
}

/// One point of a grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub f0: f64,
    pub t2_s: f64,
    pub mu_hz: f64,
    pub d_km: f64,
    pub n_steps: usize,
}

impl Point {
    fn set(&mut self, param: Param, v: f64) {
        match param {
            Param::F0 => self.f0 = v,
            Param::T2 => self.t2_s = v,
            Param::Mu => self.mu_hz = v,
            Param::D => self.d_km = v,
            Param::NSteps => self.n_steps = v as usize,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub link: LinkConfig,
    pub np: NoiseParams,
    pub f0: f64,
    pub gate_time: f64,
    pub meas_time: f64,
    pub seed: u64,
    pub protocols: Vec<Protocol>,
    pub scheme: SchemeSpec,
    pub measure_before_confirm: bool,
    pub estimate: EstimateOptions,
    pub sweep: Vec<Axis>,
    pub heatmap: Option<HeatmapSpec>,
}

impl Config {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent())
    }

    /// Parses config text; relative circuit paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let table: Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Validation(format!("config is not valid TOML: {e}")))?;
        for key in table.keys() {
            if !TOP_KEYS.contains(&key.as_str()) {
                return Err(Error::config(key, "unknown key"));
            }
        }
        let t = Fields(&table, "");

        let kind = match t.req_str("kind")?.as_str() {
            "ground" => LinkKind::Ground,
            "satellite" => LinkKind::Satellite,
            other => {
                return Err(Error::config(
                    "kind",
                    format!("expected `ground` or `satellite`, got `{other}`"),
                ))
            }
        };
        let d = t.req_f64("d_km")?;
        let mu = t.req_f64("mu_hz")?;
        let f0 = t.req_f64("f0")?;
        let t2 = t.req_f64("t2_s")?;

        let mut link = LinkConfig::ground(d, mu);
        link.kind = kind;
        link.h = t.opt_f64("h_km")?.unwrap_or(link.h);
        link.alpha_f = t.opt_f64("alpha_f_db_per_km")?.unwrap_or(link.alpha_f);
        link.alpha_a = t.opt_f64("alpha_a_per_km")?.unwrap_or(link.alpha_a);
        link.atmosphere_ceiling = t.opt_f64("atmosphere_ceiling_km")?.unwrap_or(link.atmosphere_ceiling);
        link.c_fiber = t.opt_f64("c_fiber_km_s")?.unwrap_or(link.c_fiber);
        link.c_vacuum = t.opt_f64("c_vacuum_km_s")?.unwrap_or(link.c_vacuum);
        if let Some(hw) = t.opt_table("hardware")? {
            let h = Fields(hw, "hardware.");
            h.only(&["d_s_m", "d_g_m", "lambda_m"])?;
            let def = SatelliteHardware::default();
            link.hw = SatelliteHardware {
                d_s: h.opt_f64("d_s_m")?.unwrap_or(def.d_s),
                d_g: h.opt_f64("d_g_m")?.unwrap_or(def.d_g),
                lambda: h.opt_f64("lambda_m")?.unwrap_or(def.lambda),
            };
        }
        link.validate()?;

        let np = NoiseParams::new(
            t.opt_f64("p_g")?.unwrap_or(0.99),
            t.opt_f64("p_m")?.unwrap_or(0.99),
            t.opt_f64("t1_s")?.unwrap_or(360.0),
            t2,
        )?;
        check_f0("f0", f0)?;

        let gate_time = t.opt_f64("gate_time_s")?.unwrap_or(0.0);
        let meas_time = t.opt_f64("meas_time_s")?.unwrap_or(0.0);
        for (key, v) in [("gate_time_s", gate_time), ("meas_time_s", meas_time)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(key, format!("must be non-negative, got {v}")));
            }
        }

        let seed = t.opt_u64("seed")?.unwrap_or(1);
        let protocols = match t.get("protocols") {
            None => Protocol::ALL.to_vec(),
            Some(v) => {
                let arr = v
                    .as_array()
                    .ok_or_else(|| Error::config("protocols", "expected an array of protocol names"))?;
                let mut out = Vec::new();
                for item in arr {
                    let name = item
                        .as_str()
                        .ok_or_else(|| Error::config("protocols", "expected an array of protocol names"))?;
                    let p: Protocol = name
                        .parse()
                        .map_err(|_| Error::config("protocols", format!("unknown protocol `{name}`")))?;
                    if out.contains(&p) {
                        return Err(Error::config("protocols", format!("`{name}` listed twice")));
                    }
                    out.push(p);
                }
                if out.is_empty() {
                    return Err(Error::config("protocols", "must not be empty"));
                }
                out
            }
        };

        let scheme = match (t.get("n_steps"), t.get("circuit")) {
            (Some(_), Some(_)) => return Err(Error::config("circuit", "give either `n_steps` or `circuit`, not both")),
            (_, Some(_)) => {
                let rel = PathBuf::from(t.req_str("circuit")?);
                let path = match base_dir {
                    Some(dir) if rel.is_relative() => dir.join(&rel),
                    _ => rel,
                };
                let circuit = PurificationCircuit::from_file(&path)?;
                SchemeSpec::Circuit {
                    path,
                    circuit: Arc::new(circuit),
                }
            }
            _ => {
                let n = t.opt_u64("n_steps")?.unwrap_or(1) as usize;
                check_steps("n_steps", n as f64)?;
                SchemeSpec::Pumping(n)
            }
        };

        let defaults = EstimateOptions::default();
        let skf_mode = match t.opt_str("skf_mode")?.as_deref() {
            None | Some("qber") => SkfMode::Qber,
            Some("raw_theta") => SkfMode::RawTheta,
            Some(other) => {
                return Err(Error::config(
                    "skf_mode",
                    format!("expected `qber` or `raw_theta`, got `{other}`"),
                ))
            }
        };
        let estimate = EstimateOptions {
            n_min: t.opt_u64("trials_min")?.map_or(defaults.n_min, |v| v as usize),
            ci_target: t.opt_f64("ci_target")?.unwrap_or(defaults.ci_target),
            max_trials: t.opt_u64("max_trials")?.map_or(defaults.max_trials, |v| v as usize),
            skf_mode,
        };
        check_estimate(&estimate)?;

        let sweep = match t.opt_table("sweep")? {
            None => Vec::new(),
            Some(sw) => parse_sweep(sw)?,
        };
        let heatmap = match t.opt_table("heatmap")? {
            None => None,
            Some(hm) => Some(parse_heatmap(hm)?),
        };
        if matches!(scheme, SchemeSpec::Circuit { .. }) && sweep.iter().any(|a| a.param == Param::NSteps) {
            return Err(Error::config("sweep.axis", "an `n_steps` axis needs a pumping scheme"));
        }

        Ok(Self {
            link,
            np,
            f0,
            gate_time,
            meas_time,
            seed,
            protocols,
            scheme,
            measure_before_confirm: t.opt_bool("measure_before_confirm")?.unwrap_or(false),
            estimate,
            sweep,
            heatmap,
        })
    }

    /// The point described by the top-level keys alone.
    pub fn base_point(&self) -> Point {
        Point {
            f0: self.f0,
            t2_s: self.np.t2,
            mu_hz: self.link.mu,
            d_km: self.link.d,
            n_steps: match self.scheme {
                SchemeSpec::Pumping(n) => n,
                SchemeSpec::Circuit { .. } => 0,
            },
        }
    }

    /// Sweep grid in lexicographic order, first axis outermost.
    pub fn sweep_points(&self) -> Vec<Point> {
        let mut points = vec![self.base_point()];
        for axis in &self.sweep {
            points = points
                .into_iter()
                .flat_map(|p| {
                    axis.values.iter().map(move |&v| {
                        let mut q = p;
                        q.set(axis.param, v);
                        q
                    })
                })
                .collect();
        }
        points
    }

    pub fn scheme_at(&self, point: &Point) -> Scheme {
        match &self.scheme {
            SchemeSpec::Pumping(_) => Scheme::Pumping(point.n_steps),
            SchemeSpec::Circuit { circuit, .. } => Scheme::Circuit(circuit.clone()),
        }
    }

    pub fn setup(&self, protocol: Protocol, mbc: bool, point: &Point) -> Result<Setup> {
        let mut link = self.link.clone();
        link.d = point.d_km;
        link.mu = point.mu_hz;
        link.validate()?;
        let np = NoiseParams::new(self.np.p_g, self.np.p_m, self.np.t1, point.t2_s)?;
        check_f0("f0", point.f0)?;
        let scheme = if protocol == Protocol::Nop {
            Scheme::Pumping(0)
        } else {
            self.scheme_at(point)
        };
        let mut setup = Setup::new(
            ProtocolKind {
                protocol,
                measure_before_confirm: mbc,
            },
            scheme,
            link,
            np,
            point.f0,
        );
        setup.gate_time = self.gate_time;
        setup.meas_time = self.meas_time;
        Ok(setup)
    }

    /// Seed of the estimate at `point`; independent of the protocol.
    pub fn point_seed(&self, point: &Point, mbc: bool) -> u64 {
        let words = [
            point.f0.to_bits(),
            point.t2_s.to_bits(),
            point.mu_hz.to_bits(),
            point.d_km.to_bits(),
            point.n_steps as u64,
            mbc as u64,
        ];
        words.iter().fold(self.seed, |h, &w| {
            let mut rng = ChaCha8Rng::seed_from_u64(h);
            rng.next_u64() ^ w.rotate_left(17)
        })
    }
}

fn check_f0(key: &str, f0: f64) -> Result<()> {
    if (0.25..=1.0).contains(&f0) {
        Ok(())
    } else {
        Err(Error::config(key, format!("must lie in [0.25, 1], got {f0}")))
    }
}

fn check_steps(key: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.fract() == 0.0 && v <= crate::protocols::MAX_PUMPING_STEPS as f64 {
        Ok(())
    } else {
        Err(Error::config(
            key,
            format!(
                "pumping steps must be an integer in 0..={}, got {v}",
                crate::protocols::MAX_PUMPING_STEPS
            ),
        ))
    }
}

pub(crate) fn check_estimate(o: &EstimateOptions) -> Result<()> {
    if o.n_min < 100 {
        return Err(Error::config(
            "trials_min",
            format!("must be at least 100, got {}", o.n_min),
        ));
    }
    if !(o.ci_target.is_finite() && o.ci_target > 0.0) {
        return Err(Error::config(
            "ci_target",
            format!("must be positive, got {}", o.ci_target),
        ));
    }
    if o.max_trials < o.n_min {
        return Err(Error::config("max_trials", "must not be below trials_min"));
    }
    Ok(())
}

fn parse_sweep(sw: &Table) -> Result<Vec<Axis>> {
    let f = Fields(sw, "sweep.");
    f.only(&["axis"])?;
    let Some(v) = f.get("axis") else {
        return Ok(Vec::new());
    };
    let arr = v
        .as_array()
        .ok_or_else(|| Error::config("sweep.axis", "expected `[[sweep.axis]]` tables"))?;
    let mut axes: Vec<Axis> = Vec::new();
    for item in arr {
        let tab = item
            .as_table()
            .ok_or_else(|| Error::config("sweep.axis", "expected `[[sweep.axis]]` tables"))?;
        let a = Fields(tab, "sweep.axis.");
        a.only(&["name", "values"])?;
        let name = a.req_str("name")?;
        let param = Param::from_key(&name).ok_or_else(|| {
            Error::config(
                "sweep.axis.name",
                format!("`{name}` is not one of f0, t2_s, mu_hz, d_km, n_steps"),
            )
        })?;
        if axes.iter().any(|x| x.param == param) {
            return Err(Error::config("sweep.axis.name", format!("`{name}` appears twice")));
        }
        let key = format!("sweep.axis.{name}");
        let values = a.req_f64_list("values", &key)?;
        for &v in &values {
            match param {
                Param::F0 => check_f0(&key, v)?,
                Param::NSteps => check_steps(&key, v)?,
                _ if !(v.is_finite() && v >= 0.0) || (v == 0.0 && param != Param::D) => {
                    return Err(Error::config(&key, format!("invalid value {v}")));
                }
                _ => {}
            }
        }
        axes.push(Axis { param, values });
    }
    Ok(axes)
}

fn parse_heatmap(hm: &Table) -> Result<HeatmapSpec> {
    let f = Fields(hm, "heatmap.");
    f.only(&["f0", "t2_s", "steps", "measure_before_confirm"])?;
    let f0 = f.req_f64_list("f0", "heatmap.f0")?;
    for &v in &f0 {
        check_f0("heatmap.f0", v)?;
    }
    let t2_s = f.req_f64_list("t2_s", "heatmap.t2_s")?;
    for &v in &t2_s {
        if !(v > 0.0) {
            return Err(Error::config("heatmap.t2_s", format!("must be positive, got {v}")));
        }
    }
    let steps = match f.get("steps") {
        None => (1..=crate::protocols::MAX_PUMPING_STEPS).collect(),
        Some(_) => {
            let vals = f.req_f64_list("steps", "heatmap.steps")?;
            for &v in &vals {
                check_steps("heatmap.steps", v)?;
            }
            vals.into_iter().map(|v| v as usize).collect()
        }
    };
    Ok(HeatmapSpec {
        f0,
        t2_s,
        steps,
        measure_before_confirm: f.opt_bool("measure_before_confirm")?.unwrap_or(true),
    })
}

/// Typed access to one table, with `prefix` prepended to reported keys.
struct Fields<'a>(&'a Table, &'a str);

impl Fields<'_> {
    fn key(&self, k: &str) -> String {
        format!("{}{k}", self.1)
    }

    fn err(&self, k: &str, msg: impl Into<String>) -> Error {
        Error::config(&self.key(k), msg)
    }

    fn get(&self, k: &str) -> Option<&Value> {
        self.0.get(k)
    }

    fn only(&self, allowed: &[&str]) -> Result<()> {
        match self.0.keys().find(|k| !allowed.contains(&k.as_str())) {
            Some(k) => Err(self.err(k, "unknown key")),
            None => Ok(()),
        }
    }

    fn missing(&self, k: &str) -> Error {
        self.err(k, "missing required key")
    }

    fn opt_f64(&self, k: &str) -> Result<Option<f64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Float(x)) => Ok(Some(*x)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.err(k, "expected a number")),
        }
    }

    fn req_f64(&self, k: &str) -> Result<f64> {
        self.opt_f64(k)?.ok_or_else(|| self.missing(k))
    }

    fn opt_u64(&self, k: &str) -> Result<Option<u64>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.err(k, "expected a non-negative integer")),
        }
    }

    fn opt_bool(&self, k: &str) -> Result<Option<bool>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Boolean(b)) => Ok(Some(*b)),
            Some(_) => Err(self.err(k, "expected true or false")),
        }
    }

    fn opt_str(&self, k: &str) -> Result<Option<String>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s.clone())),
            Some(_) => Err(self.err(k, "expected a string")),
        }
    }

    fn req_str(&self, k: &str) -> Result<String> {
        self.opt_str(k)?.ok_or_else(|| self.missing(k))
    }

    fn opt_table(&self, k: &str) -> Result<Option<&Table>> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(t)),
            Some(_) => Err(self.err(k, "expected a table")),
        }
    }

    /// Non-empty, strictly monotone list of numbers.
    fn req_f64_list(&self, k: &str, report: &str) -> Result<Vec<f64>> {
        let arr = self
            .get(k)
            .ok_or_else(|| self.missing(k))?
            .as_array()
            .ok_or_else(|| Error::config(report, "expected an array of numbers"))?;
        let mut out = Vec::with_capacity(arr.len());
        for v in arr {
            out.push(match v {
                Value::Float(x) => *x,
                Value::Integer(i) => *i as f64,
                _ => return Err(Error::config(report, "expected an array of numbers")),
            });
        }
        if out.is_empty() {
            return Err(Error::config(report, "must not be empty"));
        }
        let up = out.windows(2).all(|w| w[1] > w[0]);
        let down = out.windows(2).all(|w| w[1] < w[0]);
        if !(up || down) {
            return Err(Error::config(report, "values must be strictly monotone"));
        }
        Ok(out)
    }
}
