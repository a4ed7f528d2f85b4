//! Seeded SNR sweeps comparing instantaneous and pathwise CSIT designs.
//!
//! A sweep draws `slow_fading_draws` geometries, and for every
//! `(geometry, SNR, algorithm)` cell produces one [`SweepRow`]. Instantaneous
//! CSIT designs are optimized per channel realization and their WSR averaged
//! over `trials` realizations; the pathwise design is optimized once per
//! geometry and its expected rate estimated by Monte Carlo over the same
//! realizations. SNR is the per-BS power budget in dB over unit-variance noise.
//!
//! Config files are UTF-8 `key = value` lines with `#` comments:
//!
//! | key | type | default |
//! |---|---|---|
//! | `scenario_file` | path | (or the five inline keys below) |
//! | `cells`, `users_per_cell`, `paths`, `nt`, `nr` | integer | required without `scenario_file` |
//! | `streams` | integer | 1 |
//! | `snr_db` | `start:step:stop` or comma list | required |
//! | `algorithms` | comma list of `wsmse`, `minorize_icsit`, `minorize_pwcsit` | required |
//! | `trials` | integer | required |
//! | `master_seed` | integer | required |
//! | `slow_fading_draws` | integer | required |
//! | `tol` | float | 1e-6 |
//! | `max_iter` | integer | 500 |
//! | `init` | `matched` or `random` | `matched` |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::channel::{
    derive_seed, make_link, random_scenario, sample_realization, trial_rng, Scenario,
};
use crate::optim::{init_beamformers, kkt_residual, optimize, Algorithm, InitStrategy, OptimizeOptions};
use crate::rate::{monte_carlo_ewsr, objective, realization_seed, wsr, BeamformerSet, Csit, McEstimate};
use crate::{Error, Result};

/// Default convergence tolerance of sweep runs.
pub const SWEEP_TOL: f64 = 1e-6;
/// Default iteration cap of sweep runs.
pub const SWEEP_MAX_ITER: usize = 500;

/// CSV column names, in output order.
pub const CSV_COLUMNS: [&str; 10] = [
    "snr_db",
    "algorithm",
    "geometry_draw",
    "objective_nats",
    "objective_bits",
    "ewsr_mc_mean",
    "ewsr_mc_stderr",
    "iterations",
    "kkt_residual",
    "converged",
];

const SNR_CONVENTION: &str = "snr_db = 10 log10(P_c), unit-variance noise, unit per-link average energy";

/// Parameters of randomly drawn geometries, see [`random_scenario`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScenarioParams {
    pub cells: usize,
    pub users_per_cell: usize,
    pub paths: usize,
    pub nt: usize,
    pub nr: usize,
    pub streams: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    /// A fresh geometry per draw.
    Inline(ScenarioParams),
    /// A fixed geometry read from a scenario file; draws then differ only in
    /// their realization seeds.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub scenario: ScenarioSource,
    pub snr_db: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub master_seed: u64,
    pub slow_fading_draws: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub init: InitStrategy,
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() {
            return Err(Error::Config("at least one algorithm is required".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.snr_db.is_empty() {
            return Err(Error::Config("snr_db must list at least one point".into()));
        }
        if let Some(s) = self.snr_db.iter().find(|s| !s.is_finite()) {
            return Err(Error::Config(format!("snr_db point {s} is not finite")));
        }
        if self.slow_fading_draws == 0 {
            return Err(Error::Config("slow_fading_draws must be at least 1".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Config("tol must be positive".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        if let ScenarioSource::Inline(p) = &self.scenario {
            let counts = [
                ("cells", p.cells),
                ("users_per_cell", p.users_per_cell),
                ("paths", p.paths),
                ("nt", p.nt),
                ("nr", p.nr),
                ("streams", p.streams),
            ];
            if let Some((k, _)) = counts.iter().find(|(_, v)| *v == 0) {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        Ok(())
    }

    /// Canonical `key = value` rendering; parses back to an equal config.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        match &self.scenario {
            ScenarioSource::Inline(p) => {
                for (k, v) in [
                    ("cells", p.cells),
                    ("users_per_cell", p.users_per_cell),
                    ("paths", p.paths),
                    ("nt", p.nt),
                    ("nr", p.nr),
                    ("streams", p.streams),
                ] {
                    let _ = writeln!(s, "{k} = {v}");
                }
            }
            ScenarioSource::File(path) => {
                let _ = writeln!(s, "scenario_file = {}", path.display());
            }
        }
        let snr: Vec<String> = self.snr_db.iter().map(|x| format!("{x:?}")).collect();
        let algos: Vec<&str> = self.algorithms.iter().map(|a| a.name()).collect();
        let _ = writeln!(s, "snr_db = {}", snr.join(","));
        let _ = writeln!(s, "algorithms = {}", algos.join(","));
        let _ = writeln!(s, "trials = {}", self.trials);
        let _ = writeln!(s, "master_seed = {}", self.master_seed);
        let _ = writeln!(s, "slow_fading_draws = {}", self.slow_fading_draws);
        let _ = writeln!(s, "tol = {:?}", self.tol);
        let _ = writeln!(s, "max_iter = {}", self.max_iter);
        let init = match self.init {
            InitStrategy::Matched => "matched",
            InitStrategy::Random => "random",
        };
        let _ = writeln!(s, "init = {init}");
        s
    }

    /// Hex SHA-256 of [`SweepConfig::to_kv`].
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_kv().as_bytes())
            .iter()
            .fold(String::new(), |mut s, b| {
                let _ = write!(s, "{b:02x}");
                s
            })
    }
}

/// Built-in figure configurations: two cells with two users each, three
/// paths per link, 50 geometries of 500 realizations, 0 to 30 dB, WSMSE for
/// the instantaneous CSIT curve and at most 100 iterations per design.
pub fn preset(name: &str) -> Result<SweepConfig> {
    let (nt, nr) = match name {
        "fig2" => (3, 3),
        "fig3" => (4, 4),
        "fig4" => (10, 4),
        _ => return Err(Error::Config(format!("unknown preset `{name}` (expected fig2, fig3 or fig4)"))),
    };
    parse_config_str(&format!(
        "cells = 2\nusers_per_cell = 2\npaths = 3\nnt = {nt}\nnr = {nr}\nstreams = 1\n\
         snr_db = 0:5:30\nalgorithms = wsmse, minorize_pwcsit\n\
         trials = 500\nmaster_seed = 1\nslow_fading_draws = 50\nmax_iter = 100\n"
    ))
}

pub fn parse_config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

/// Splits `key = value` lines, dropping `#` comments and blank lines.
fn kv_lines(text: &str) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(key: &str, v: &str, ty: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("key `{key}`: expected {ty}, got `{v}`")))
}

/// `start:step:stop` (inclusive) or a comma list.
pub fn parse_snr(v: &str) -> Result<Vec<f64>> {
    if v.contains(':') {
        let parts: Vec<&str> = v.split(':').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(Error::Config(format!("snr range `{v}`: expected start:step:stop")));
        }
        let start: f64 = parse_value("snr_db", parts[0], "a number")?;
        let step: f64 = parse_value("snr_db", parts[1], "a number")?;
        let stop: f64 = parse_value("snr_db", parts[2], "a number")?;
        if !(step > 0.0) || stop < start {
            return Err(Error::Config(format!("snr range `{v}`: need step > 0 and stop >= start")));
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| start + i as f64 * step).collect())
    } else {
        v.split(',')
            .map(|s| parse_value("snr_db", s.trim(), "a number"))
            .collect()
    }
}

pub fn parse_algorithms(v: &str) -> Result<Vec<Algorithm>> {
    let mut out: Vec<Algorithm> = Vec::new();
    for s in v.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let a: Algorithm = s.parse()?;
        if !out.contains(&a) {
            out.push(a);
        }
    }
    Ok(out)
}

pub fn parse_config_str(text: &str) -> Result<SweepConfig> {
    const KNOWN: [&str; 15] = [
        "scenario_file",
        "cells",
        "users_per_cell",
        "paths",
        "nt",
        "nr",
        "streams",
        "snr_db",
        "algorithms",
        "trials",
        "master_seed",
        "slow_fading_draws",
        "tol",
        "max_iter",
        "init",
    ];
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    for (line, k, v) in kv_lines(text)? {
        if !KNOWN.contains(&k.as_str()) {
            return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
        }
        if map.insert(k.clone(), v).is_some() {
            return Err(Error::Config(format!("line {line}: duplicate key `{k}`")));
        }
    }
    let required = |k: &str| -> Result<&str> {
        map.get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing required key `{k}`")))
    };
    let usize_key = |k: &str| -> Result<usize> { parse_value(k, required(k)?, "a non-negative integer") };

    let scenario = match map.get("scenario_file") {
        Some(p) => {
            if let Some(k) = ["cells", "users_per_cell", "paths", "nt", "nr"]
                .iter()
                .find(|k| map.contains_key(**k))
            {
                return Err(Error::Config(format!("key `{k}` conflicts with `scenario_file`")));
            }
            ScenarioSource::File(PathBuf::from(p))
        }
        None => ScenarioSource::Inline(ScenarioParams {
            cells: usize_key("cells")?,
            users_per_cell: usize_key("users_per_cell")?,
            paths: usize_key("paths")?,
            nt: usize_key("nt")?,
            nr: usize_key("nr")?,
            streams: match map.get("streams") {
                Some(v) => parse_value("streams", v, "a non-negative integer")?,
                None => 1,
            },
        }),
    };
    let cfg = SweepConfig {
        scenario,
        snr_db: parse_snr(required("snr_db")?)?,
        algorithms: parse_algorithms(required("algorithms")?)?,
        trials: usize_key("trials")?,
        master_seed: parse_value("master_seed", required("master_seed")?, "a non-negative integer")?,
        slow_fading_draws: usize_key("slow_fading_draws")?,
        tol: match map.get("tol") {
            Some(v) => parse_value("tol", v, "a number")?,
            None => SWEEP_TOL,
        },
        max_iter: match map.get("max_iter") {
            Some(v) => parse_value("max_iter", v, "a non-negative integer")?,
            None => SWEEP_MAX_ITER,
        },
        init: match map.get("init").map(String::as_str) {
            None | Some("matched") => InitStrategy::Matched,
            Some("random") => InitStrategy::Random,
            Some(v) => return Err(Error::Config(format!("key `init`: expected matched or random, got `{v}`"))),
        },
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Scenario file text. Header keys `nt`, `nr`, `serving`, `weights`,
/// `streams` hold comma lists; each `link <user> <bs> = a θ φ; a θ φ; ...`
/// line lists the paths as amplitude, AoD and AoA in radians. Power budgets
/// are not stored; sweeps set them from the SNR axis.
pub fn scenario_to_string(sc: &Scenario) -> String {
    fn list<T: std::fmt::Debug>(xs: &[T]) -> String {
        xs.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",")
    }
    let mut s = String::new();
    let _ = writeln!(s, "nt = {}", list(&sc.nt));
    let _ = writeln!(s, "nr = {}", list(&sc.nr));
    let _ = writeln!(s, "serving = {}", list(&sc.serving));
    let _ = writeln!(s, "weights = {}", list(&sc.weights));
    let _ = writeln!(s, "streams = {}", list(&sc.streams));
    for (k, row) in sc.links.iter().enumerate() {
        for (j, link) in row.iter().enumerate() {
            let paths: Vec<String> = (0..link.num_paths())
                .map(|i| format!("{:?} {:?} {:?}", link.amplitudes[i], link.aod[i], link.aoa[i]))
                .collect();
            let _ = writeln!(s, "link {k} {j} = {}", paths.join("; "));
        }
    }
    s
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario> {
    fn list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
        v.split(',').map(|x| parse_value(key, x.trim(), "a number")).collect()
    }
    let mut header: BTreeMap<String, String> = BTreeMap::new();
    let mut paths: BTreeMap<(usize, usize), (Vec<f64>, Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (line, k, v) in kv_lines(text)? {
        if let Some(rest) = k.strip_prefix("link") {
            let idx: Vec<&str> = rest.split_whitespace().collect();
            if idx.len() != 2 {
                return Err(Error::Config(format!("line {line}: expected `link <user> <bs>`")));
            }
            let user: usize = parse_value("link", idx[0], "a user index")?;
            let bs: usize = parse_value("link", idx[1], "a BS index")?;
            let mut entry = (Vec::new(), Vec::new(), Vec::new());
            for p in v.split(';') {
                let nums: Vec<f64> = p
                    .split_whitespace()
                    .map(|x| parse_value("link", x, "a number"))
                    .collect::<Result<_>>()?;
                if nums.len() != 3 {
                    return Err(Error::Config(format!("line {line}: each path needs amplitude, AoD and AoA")));
                }
                entry.0.push(nums[0]);
                entry.1.push(nums[1]);
                entry.2.push(nums[2]);
            }
            if paths.insert((user, bs), entry).is_some() {
                return Err(Error::Config(format!("line {line}: duplicate link {user} {bs}")));
            }
        } else if ["nt", "nr", "serving", "weights", "streams"].contains(&k.as_str()) {
            if header.insert(k.clone(), v).is_some() {
                return Err(Error::Config(format!("line {line}: duplicate key `{k}`")));
            }
        } else {
            return Err(Error::Config(format!("line {line}: unknown key `{k}`")));
        }
    }
    let required = |k: &str| -> Result<&str> {
        header
            .get(k)
            .map(String::as_str)
            .ok_or_else(|| Error::Config(format!("missing required key `{k}`")))
    };
    let nt: Vec<usize> = list("nt", required("nt")?)?;
    let nr: Vec<usize> = list("nr", required("nr")?)?;
    let serving: Vec<usize> = list("serving", required("serving")?)?;
    let weights: Vec<f64> = list("weights", required("weights")?)?;
    let streams: Vec<usize> = list("streams", required("streams")?)?;
    let (users, cells) = (serving.len(), nt.len());
    if nr.len() != users {
        return Err(Error::Config(format!("`nr` lists {} users, `serving` lists {users}", nr.len())));
    }
    let mut links = Vec::with_capacity(users);
    for k in 0..users {
        let mut row = Vec::with_capacity(cells);
        for j in 0..cells {
            let (a, aod, aoa) = paths
                .get(&(k, j))
                .ok_or_else(|| Error::Config(format!("missing link {k} {j}")))?;
            row.push(make_link(a, aod, aoa, nt[j], nr[k]).map_err(|e| Error::Config(format!("link {k} {j}: {e}")))?);
        }
        links.push(row);
    }
    if let Some((k, j)) = paths.keys().find(|(k, j)| *k >= users || *j >= cells) {
        return Err(Error::Config(format!("link {k} {j} is outside the {users}x{cells} layout")));
    }
    Scenario::new(serving, nt, nr, vec![1.0; cells], weights, streams, links)
        .map_err(|e| Error::Config(format!("scenario: {e}")))
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_scenario_str(&text)
}

pub fn write_scenario(sc: &Scenario, path: &Path) -> Result<()> {
    fs::write(path, scenario_to_string(sc)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// One `(geometry, SNR, algorithm)` cell of a sweep. Instantaneous CSIT rows
/// report per-realization means: `objective_nats` and `ewsr_mc_mean` are
/// both the average optimized WSR, `iterations` the mean iteration count,
/// `kkt_residual` the worst residual and `converged` whether every trial
/// converged. Pathwise rows report the Massive EWSR objective of the single
/// design and its Monte-Carlo rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub snr_db: f64,
    pub algorithm: Algorithm,
    pub geometry_draw: usize,
    pub objective_nats: f64,
    pub objective_bits: f64,
    pub ewsr_mc_mean: f64,
    pub ewsr_mc_stderr: f64,
    pub iterations: f64,
    pub kkt_residual: f64,
    pub converged: bool,
}

/// Per-BS power budget of an SNR point.
pub fn snr_to_power(snr_db: f64) -> f64 {
    10f64.powf(snr_db / 10.0)
}

/// Geometry of draw `g`.
pub fn draw_geometry(cfg: &SweepConfig, g: usize) -> Result<Scenario> {
    match &cfg.scenario {
        ScenarioSource::Inline(p) => {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.master_seed, g as u64, 0x6E0]));
            Ok(random_scenario(p.cells, p.users_per_cell, p.paths, p.nt, p.nr, 1.0, &mut rng)?.with_streams(p.streams))
        }
        ScenarioSource::File(path) => read_scenario(path),
    }
}

/// Seed of cell `(g, snr_idx, algo)`, used for random initializations.
pub fn cell_seed(master: u64, g: usize, snr_idx: usize, algo: Algorithm) -> u64 {
    derive_seed(&[master, g as u64, snr_idx as u64, algo.id()])
}

/// Runs the full grid on all available cores.
pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    run_sweep_with_threads(cfg, threads)
}

/// Runs the full grid on `threads` workers. The output does not depend on
/// `threads`.
pub fn run_sweep_with_threads(cfg: &SweepConfig, threads: usize) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let geometries = (0..cfg.slow_fading_draws)
        .map(|g| draw_geometry(cfg, g))
        .collect::<Result<Vec<_>>>()?;
    let mut cells = Vec::new();
    for g in 0..geometries.len() {
        for s in 0..cfg.snr_db.len() {
            for &a in &cfg.algorithms {
                cells.push((g, s, a));
            }
        }
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<SweepRow>>> = Mutex::new(Vec::with_capacity(cells.len()));
    std::thread::scope(|scope| {
        for _ in 0..threads.clamp(1, cells.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(g, s, a)) = cells.get(i) else { break };
                let row = run_cell(cfg, &geometries[g], g, s, a);
                results.lock().expect("result lock").push(row);
            });
        }
    });
    let mut rows = results
        .into_inner()
        .expect("result lock")
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    sort_rows(&mut rows);
    Ok(rows)
}

/// `(geometry, snr, algorithm)` order.
pub fn sort_rows(rows: &mut [SweepRow]) {
    rows.sort_by(|a, b| {
        a.geometry_draw
            .cmp(&b.geometry_draw)
            .then(a.snr_db.total_cmp(&b.snr_db))
            .then(a.algorithm.id().cmp(&b.algorithm.id()))
    });
}

/// Evaluates a single grid cell.
pub fn run_cell(cfg: &SweepConfig, geometry: &Scenario, g: usize, snr_idx: usize, algo: Algorithm) -> Result<SweepRow> {
    let snr_db = cfg.snr_db[snr_idx];
    let sc = geometry.with_power(snr_to_power(snr_db));
    let opts = OptimizeOptions {
        tol: cfg.tol,
        max_iter: cfg.max_iter,
    };
    let seed = cell_seed(cfg.master_seed, g, snr_idx, algo);
    let rseed = realization_seed(cfg.master_seed, g as u64);
    let (objective_nats, mc, iterations, kkt, converged) = if algo.uses_icsit() {
        let mut rates = Vec::with_capacity(cfg.trials);
        let (mut iters, mut worst_kkt, mut all_converged) = (0.0, 0.0f64, true);
        for t in 0..cfg.trials {
            let h = sample_realization(&sc, &mut trial_rng(rseed, t as u64));
            let init = init_beamformers(&sc, cfg.init, Csit::Instantaneous(&h), &mut trial_rng(seed, t as u64))?;
            let (rate, it, k, conv) = match optimize(algo, &sc, Some(&h), init.clone(), opts) {
                Ok(r) => (r.objective, r.iterations as f64, r.kkt_residual, r.converged),
                Err(_) => fallback(&sc, Csit::Instantaneous(&h), &init)?,
            };
            rates.push(rate);
            iters += it;
            worst_kkt = worst_kkt.max(k);
            all_converged &= conv;
        }
        let mc = McEstimate::from_samples(&rates);
        (mc.mean, mc, iters / cfg.trials as f64, worst_kkt, all_converged)
    } else {
        let init = init_beamformers(&sc, cfg.init, Csit::Pathwise, &mut ChaCha8Rng::seed_from_u64(seed))?;
        let (obj, beams, it, k, conv) = match optimize(algo, &sc, None, init.clone(), opts) {
            Ok(r) => (r.objective, r.beams, r.iterations as f64, r.kkt_residual, r.converged),
            Err(_) => {
                let (obj, it, k, conv) = fallback(&sc, Csit::Pathwise, &init)?;
                (obj, init, it, k, conv)
            }
        };
        let mc = monte_carlo_ewsr(&sc, &beams, cfg.trials, rseed)?;
        (obj, mc, it, k, conv)
    };
    let row = SweepRow {
        snr_db,
        algorithm: algo,
        geometry_draw: g,
        objective_nats,
        objective_bits: objective_nats / std::f64::consts::LN_2,
        ewsr_mc_mean: mc.mean,
        ewsr_mc_stderr: mc.stderr,
        iterations,
        kkt_residual: kkt,
        converged,
    };
    if [row.objective_nats, row.ewsr_mc_mean, row.ewsr_mc_stderr, row.kkt_residual]
        .iter()
        .any(|x| !x.is_finite())
    {
        return Err(Error::Numeric(format!("non-finite result at geometry {g}, {snr_db} dB, {algo}")));
    }
    Ok(row)
}

/// Scores the initial design of a failed optimization.
fn fallback(sc: &Scenario, csit: Csit<'_>, init: &BeamformerSet) -> Result<(f64, f64, f64, bool)> {
    let obj = match csit {
        Csit::Instantaneous(h) => wsr(sc, h, init)?,
        Csit::Pathwise => objective(sc, csit, init)?,
    };
    Ok((obj, 0.0, kkt_residual(sc, csit, init)?, false))
}

/// Decimal rendering with 12 significant digits.
pub fn format_sig(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x:.11}");
    }
    let decimals = (11 - x.abs().log10().floor() as i64).clamp(0, 40) as usize;
    format!("{x:.decimals$}")
}

/// `#`-prefixed metadata line: config hash, seed, version and SNR convention.
pub fn metadata_line(cfg: &SweepConfig) -> String {
    format!(
        "# pathbf {} config_sha256={} master_seed={} {}",
        env!("CARGO_PKG_VERSION"),
        cfg.hash(),
        cfg.master_seed,
        SNR_CONVENTION
    )
}

/// Writes the header and rows in `(geometry, snr, algorithm)` order, preceded
/// by `meta` when given.
pub fn write_csv<W: Write>(rows: &[SweepRow], meta: Option<&str>, out: &mut W) -> std::io::Result<()> {
    let mut sorted = rows.to_vec();
    sort_rows(&mut sorted);
    if let Some(m) = meta {
        writeln!(out, "{m}")?;
    }
    writeln!(out, "{}", CSV_COLUMNS.join(","))?;
    for r in &sorted {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            format_sig(r.snr_db),
            r.algorithm.name(),
            r.geometry_draw,
            format_sig(r.objective_nats),
            format_sig(r.objective_bits),
            format_sig(r.ewsr_mc_mean),
            format_sig(r.ewsr_mc_stderr),
            format_sig(r.iterations),
            format_sig(r.kkt_residual),
            r.converged
        )?;
    }
    Ok(())
}

pub fn emit_csv(rows: &[SweepRow], meta: Option<&str>, path: &Path) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::new();
    write_csv(rows, meta, &mut buf).map_err(io)?;
    fs::write(path, buf).map_err(io)
}

/// Per-SNR average over geometries of `ewsr_mc_mean` for one algorithm, with
/// the standard error across geometries.
pub fn summarize(rows: &[SweepRow], algo: Algorithm) -> Vec<(f64, McEstimate)> {
    let mut by_snr: BTreeMap<u64, (f64, Vec<f64>)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.algorithm == algo) {
        by_snr
            .entry(r.snr_db.to_bits() ^ (1 << 63))
            .or_insert_with(|| (r.snr_db, Vec::new()))
            .1
            .push(r.ewsr_mc_mean);
    }
    let mut out: Vec<(f64, McEstimate)> = by_snr
        .into_values()
        .map(|(snr, xs)| (snr, McEstimate::from_samples(&xs)))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    out
}
