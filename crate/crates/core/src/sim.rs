//! Monte-Carlo scenarios: presets, configuration files, parallel execution
//! and CSV output.

use std::io::{self, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::channel::{generate_channel, realization_seed, ChannelParams};
use crate::error::Error;
use crate::evaluation::{noise_var_from_snr_db, spectral_efficiency};
use crate::model::{validate_config, SystemConfig};
use crate::partial::{gap_report, GapReport};
use crate::pipeline::{build_from_targets, digital_targets, partial_mapping, Algorithm, AlgorithmTag};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

impl SimError {
    /// 2 configuration, 3 infeasible scenario, 4 numerical failure, 1 output i/o.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            SimError::Io { .. } => 1,
            SimError::Core(e) => match e.root() {
                Error::InvalidConfig(_)
                | Error::UnknownAlgorithm(_)
                | Error::NonSquareArray(_) => 2,
                Error::InfeasibleDimensions(_)
                | Error::InsufficientNullSpace { .. }
                | Error::RankDeficient(_)
                | Error::InvalidMapping(_) => 3,
                _ => 4,
            },
        }
    }
}

pub type SimResult<T> = std::result::Result<T, SimError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub system: SystemConfig,
    #[serde(default)]
    pub channel: ChannelParams,
    pub algorithms: Vec<String>,
    pub realizations: usize,
    #[serde(default)]
    pub seed: u64,
}

pub const PRESETS: [&str; 8] = [
    "fig2", "fig2-desk", "fig3", "fig3-desk", "fig4", "fig4-desk", "fig5", "fig5-desk",
];

fn default_snr_grid() -> Vec<f64> {
    (-2..=4).map(|i| 5.0 * i as f64).collect()
}

fn base(name: &str, n_tx: usize, n_rx: usize, k: usize, ns: usize, algorithms: Vec<String>) -> Scenario {
    Scenario {
        name: name.to_string(),
        system: SystemConfig {
            n_tx,
            n_rx,
            n_users: k,
            n_subcarriers: 128,
            n_streams: ns,
            n_rf_tx: k * ns,
            n_rf_rx: ns,
            noise_var: 1.0,
            snr_grid_db: default_snr_grid(),
        },
        channel: ChannelParams::default(),
        algorithms,
        realizations: 1000,
        seed: 0,
    }
}

fn tags(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

/// Built-in scenarios. `-desk` variants use 64 transmit and 8 receive
/// antennas, 16 subcarriers and 50 realizations.
pub fn preset(name: &str) -> SimResult<Scenario> {
    let (stem, desk) = match name.strip_suffix("-desk") {
        Some(s) => (s, true),
        None => (name, false),
    };
    let mut s = match stem {
        "fig2" => base(
            stem,
            64,
            9,
            5,
            2,
            tags(&["fully-digital", "rf-only", "rf-only+bd", "dps-full+bd"]),
        ),
        "fig3" => base(
            stem,
            256,
            16,
            3,
            3,
            tags(&[
                "fully-digital",
                "dps-full",
                "dps-full+bd",
                "sps-heuristic",
                "sps-heuristic+bd",
            ]),
        ),
        "fig4" => {
            let mut algorithms = vec!["fully-digital".to_string()];
            for n in 9..=14 {
                algorithms.push(format!("dps-full+bd@nrf={n}"));
                algorithms.push(format!("sps-heuristic+bd@nrf={n}"));
            }
            let mut s = base(stem, 256, 16, 3, 3, algorithms);
            s.system.snr_grid_db = vec![5.0];
            s
        }
        "fig5" => base(
            stem,
            256,
            16,
            4,
            2,
            tags(&[
                "fully-digital",
                "dps-full+bd",
                "partial-fixed+bd",
                "partial-greedy+bd",
                "partial-kmeans+bd",
            ]),
        ),
        _ => return Err(SimError::Config(format!("unknown preset `{name}`"))),
    };
    if desk {
        s.name = name.to_string();
        s.system.n_tx = 64;
        s.system.n_rx = 8;
        s.system.n_subcarriers = 16;
        s.realizations = 50;
    }
    Ok(s)
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

/// Parses a JSON scenario. A `"preset"` key selects a built-in scenario
/// that the remaining keys override field by field.
pub fn parse_config(text: &str) -> SimResult<Scenario> {
    let mut patch: Value =
        serde_json::from_str(text).map_err(|e| SimError::Config(format!("config: {e}")))?;
    let preset_name = match patch.as_object_mut().and_then(|o| o.remove("preset")) {
        Some(Value::String(p)) => Some(p),
        Some(other) => {
            return Err(SimError::Config(format!("config: preset must be a string, got {other}")))
        }
        None => None,
    };
    let mut value = match preset_name {
        Some(p) => serde_json::to_value(preset(&p)?).expect("scenario serializes"),
        None => Value::Object(Default::default()),
    };
    merge(&mut value, patch);
    serde_json::from_value(value).map_err(|e| SimError::Config(format!("config: {e}")))
}

pub fn load_config(path: &Path) -> SimResult<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Parsed tags, each checked against the configuration with its own RF
/// chain count.
pub fn validate_scenario(s: &Scenario) -> SimResult<Vec<AlgorithmTag>> {
    s.channel
        .validate()
        .map_err(|e| SimError::Config(format!("channel parameters: {e}")))?;
    if s.realizations == 0 {
        return Err(SimError::Config("realizations must be positive".into()));
    }
    if s.algorithms.is_empty() {
        return Err(SimError::Config("no algorithms selected".into()));
    }
    if s.system.snr_grid_db.is_empty() {
        return Err(SimError::Config("empty SNR grid".into()));
    }
    validate_config(s.system.clone(), false)?;
    let mut out = Vec::new();
    for a in &s.algorithms {
        let tag: AlgorithmTag = a.parse()?;
        let cfg = s.system.with_n_rf_tx(tag.n_rf_tx(&s.system));
        validate_config(cfg, tag.algorithm == Algorithm::PartialFixed)?;
        out.push(tag);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRow {
    pub algorithm: String,
    pub snr_db: f64,
    pub realization: usize,
    pub sum_rate: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct GapRow {
    pub realization: usize,
    pub report: GapReport,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    /// Sorted by algorithm (scenario order), SNR (grid order), realization.
    pub samples: Vec<SampleRow>,
    pub gaps: Option<Vec<GapRow>>,
}

/// Tag whose mapping the gap report uses: the first partial algorithm.
/// Requires a `dps-full` variant in the scenario as well.
pub fn gap_tag(tags: &[AlgorithmTag]) -> SimResult<AlgorithmTag> {
    if !tags.iter().any(|t| t.algorithm == Algorithm::DpsFull) {
        return Err(SimError::Config("gap report needs a dps-full algorithm".into()));
    }
    tags.iter()
        .copied()
        .find(|t| t.algorithm.is_partial())
        .ok_or_else(|| SimError::Config("gap report needs a partial-* algorithm".into()))
}

struct RealizationOutput {
    samples: Vec<(usize, usize, f64)>,
    gap: Option<GapReport>,
}

fn simulate_realization(
    s: &Scenario,
    tags: &[AlgorithmTag],
    gap: Option<AlgorithmTag>,
    r: usize,
) -> SimResult<RealizationOutput> {
    let cfg = &s.system;
    let chan = generate_channel(cfg, &s.channel, realization_seed(s.seed, r as u64))?;
    let targets = digital_targets(&chan, cfg)?;
    let mut samples = Vec::with_capacity(tags.len() * cfg.snr_grid_db.len());
    for (a, tag) in tags.iter().enumerate() {
        let bundle = build_from_targets(tag, &chan, cfg, &targets)?;
        for (i, &snr) in cfg.snr_grid_db.iter().enumerate() {
            let se = spectral_efficiency(&chan, &bundle, noise_var_from_snr_db(snr))
                .map_err(|e| e.at("evaluation"))?;
            samples.push((a, i, se));
        }
    }
    let gap = match gap {
        Some(tag) => {
            let f_opt = targets.f_opt.concat();
            let mapping = partial_mapping(tag.algorithm, &f_opt, tag.n_rf_tx(cfg))?;
            Some(gap_report(&f_opt, &mapping)?)
        }
        None => None,
    };
    Ok(RealizationOutput { samples, gap })
}

/// Runs the scenario on `threads` worker threads (0: rayon default).
/// Output does not depend on the thread count.
pub fn run(s: &Scenario, threads: usize, with_gap: bool) -> SimResult<RunOutput> {
    let tags = validate_scenario(s)?;
    let gap = if with_gap { Some(gap_tag(&tags)?) } else { None };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
    let per_real: Vec<RealizationOutput> = pool.install(|| {
        (0..s.realizations)
            .into_par_iter()
            .map(|r| simulate_realization(s, &tags, gap, r))
            .collect::<SimResult<Vec<_>>>()
    })?;
    let mut keyed: Vec<(usize, usize, usize, f64)> = Vec::new();
    for (r, out) in per_real.iter().enumerate() {
        for &(a, i, se) in &out.samples {
            keyed.push((a, i, r, se));
        }
    }
    keyed.sort_by_key(|&(a, i, r, _)| (a, i, r));
    let samples = keyed
        .into_iter()
        .map(|(a, i, r, se)| SampleRow {
            algorithm: s.algorithms[a].clone(),
            snr_db: s.system.snr_grid_db[i],
            realization: r,
            sum_rate: se,
        })
        .collect();
    let gaps = with_gap.then(|| {
        per_real
            .iter()
            .enumerate()
            .map(|(r, o)| GapRow {
                realization: r,
                report: o.gap.expect("gap requested"),
            })
            .collect()
    });
    Ok(RunOutput { samples, gaps })
}

/// 12 significant digits.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.11e}")
}

pub const SAMPLES_HEADER: &str = "scenario,algorithm,snr_db,realization,sum_rate_bps_hz";

pub fn write_samples(mut w: impl Write, scenario: &str, rows: &[SampleRow]) -> io::Result<()> {
    writeln!(w, "{SAMPLES_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{scenario},{},{},{},{}",
            r.algorithm,
            fmt_float(r.snr_db),
            r.realization,
            fmt_float(r.sum_rate)
        )?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algorithm: String,
    pub snr_db: f64,
    pub n: usize,
    pub mean: f64,
    /// `1.96 s / sqrt(n)` with the unbiased sample deviation `s`.
    pub ci95: f64,
    /// 1 for the highest mean at this SNR; ties keep scenario order.
    pub rank: usize,
    /// For partial tags, whether kmeans >= greedy >= fixed holds at this
    /// SNR among partial tags sharing this tag's options.
    pub partial_order_ok: Option<bool>,
}

pub fn summarize(algorithms: &[String], snr_grid: &[f64], rows: &[SampleRow]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &snr in snr_grid {
        let mut at_snr: Vec<SummaryRow> = algorithms
            .iter()
            .map(|alg| {
                let v: Vec<f64> = rows
                    .iter()
                    .filter(|r| &r.algorithm == alg && r.snr_db == snr)
                    .map(|r| r.sum_rate)
                    .collect();
                let n = v.len();
                let mean = if n > 0 { v.iter().sum::<f64>() / n as f64 } else { 0.0 };
                let ci95 = if n > 1 {
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                    1.96 * (var / n as f64).sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    algorithm: alg.clone(),
                    snr_db: snr,
                    n,
                    mean,
                    ci95,
                    rank: 0,
                    partial_order_ok: None,
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..at_snr.len()).collect();
        order.sort_by(|&a, &b| at_snr[b].mean.total_cmp(&at_snr[a].mean).then(a.cmp(&b)));
        for (rank, &i) in order.iter().enumerate() {
            at_snr[i].rank = rank + 1;
        }
        let parsed: Vec<Option<AlgorithmTag>> =
            algorithms.iter().map(|a| a.parse().ok()).collect();
        for i in 0..at_snr.len() {
            let Some(tag) = parsed[i].filter(|t| t.algorithm.is_partial()) else {
                continue;
            };
            let mean_of = |alg: Algorithm| {
                let want = AlgorithmTag { algorithm: alg, ..tag };
                parsed
                    .iter()
                    .position(|p| *p == Some(want))
                    .map(|j| at_snr[j].mean)
            };
            if let (Some(k), Some(g), Some(f)) = (
                mean_of(Algorithm::PartialKmeans),
                mean_of(Algorithm::PartialGreedy),
                mean_of(Algorithm::PartialFixed),
            ) {
                at_snr[i].partial_order_ok = Some(k >= g && g >= f);
            }
        }
        out.extend(at_snr);
    }
    out
}

pub const SUMMARY_HEADER: &str =
    "scenario,algorithm,snr_db,n,mean_bps_hz,ci95_half_width,rank,partial_order_ok";

pub fn write_summary(mut w: impl Write, scenario: &str, rows: &[SummaryRow]) -> io::Result<()> {
    writeln!(w, "{SUMMARY_HEADER}")?;
    for r in rows {
        let flag = r.partial_order_ok.map_or(String::new(), |b| b.to_string());
        writeln!(
            w,
            "{scenario},{},{},{},{},{},{},{flag}",
            r.algorithm,
            fmt_float(r.snr_db),
            r.n,
            fmt_float(r.mean),
            fmt_float(r.ci95),
            r.rank
        )?;
    }
    Ok(())
}

pub const GAP_HEADER: &str = "realization,f_star_full,f_star_partial,delta,delta_formula";

pub fn write_gap_report(mut w: impl Write, rows: &[GapRow]) -> io::Result<()> {
    writeln!(w, "{GAP_HEADER}")?;
    for g in rows {
        let r = &g.report;
        writeln!(
            w,
            "{},{},{},{},{}",
            g.realization,
            fmt_float(r.f_star_full),
            fmt_float(r.f_star_partial),
            fmt_float(r.delta),
            fmt_float(r.delta_formula)
        )?;
    }
    Ok(())
}

/// Writes `contents` through a buffered file at `path`.
pub fn write_file(path: &Path, f: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> SimResult<()> {
    let io_err = |source| SimError::Io {
        path: path.display().to_string(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let mut w = io::BufWriter::new(file);
    f(&mut w).map_err(io_err)?;
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Scenario {
        let mut s = preset("fig5-desk").unwrap();
        s.system.n_tx = 16;
        s.system.n_rx = 4;
        s.system.n_users = 2;
        s.system.n_subcarriers = 2;
        s.system.n_rf_tx = 4;
        s.system.snr_grid_db = vec![0.0, 10.0];
        s.realizations = 4;
        s.seed = 9;
        s
    }

    #[test]
    fn presets_are_valid() {
        for p in PRESETS {
            let s = preset(p).unwrap();
            validate_scenario(&s).unwrap_or_else(|e| panic!("{p}: {e}"));
        }
        assert!(matches!(preset("fig9"), Err(SimError::Config(_))));
    }

    #[test]
    fn desk_variants_shrink() {
        let s = preset("fig3-desk").unwrap();
        assert_eq!((s.system.n_tx, s.system.n_rx, s.system.n_subcarriers), (64, 8, 16));
        assert_eq!(s.realizations, 50);
        assert_eq!((s.system.n_users, s.system.n_streams), (3, 3));
    }

    #[test]
    fn config_overrides_preset_fields() {
        let s = parse_config(
            r#"{"preset": "fig3-desk", "seed": 5, "system": {"n_users": 2}, "channel": {"n_rays": 4}}"#,
        )
        .unwrap();
        assert_eq!(s.seed, 5);
        assert_eq!(s.system.n_users, 2);
        assert_eq!(s.system.n_tx, 64);
        assert_eq!(s.channel.n_rays, 4);
        assert_eq!(s.channel.n_clusters, 3);
        assert!(parse_config("{").is_err());
        assert!(parse_config(r#"{"preset": "nope"}"#).is_err());
        assert!(parse_config(r#"{"name": "x"}"#).is_err());
    }

    #[test]
    fn full_config_round_trips() {
        let s = tiny();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(parse_config(&text).unwrap(), s);
    }

    #[test]
    fn error_classes_have_distinct_codes() {
        let mut s = tiny();
        s.system.n_rf_tx = 1;
        assert_eq!(validate_scenario(&s).unwrap_err().exit_code(), 2);
        let mut s = tiny();
        s.algorithms = vec!["nonsense".into()];
        assert_eq!(validate_scenario(&s).unwrap_err().exit_code(), 2);
        // Three 9-antenna users leave no null space on 16 antennas.
        let mut s = tiny();
        s.system.n_rx = 9;
        s.system.n_users = 3;
        s.system.n_rf_tx = 6;
        s.algorithms = tags(&["dps-full"]);
        assert_eq!(run(&s, 1, false).unwrap_err().exit_code(), 3);
        let e = SimError::Core(Error::SingularInterference { user: 0, subcarrier: 0 });
        assert_eq!(e.exit_code(), 4);
    }

    #[test]
    fn run_is_thread_count_independent() {
        let s = tiny();
        let a = run(&s, 1, true).unwrap();
        let b = run(&s, 3, true).unwrap();
        assert_eq!(a.samples, b.samples);
        let mut x = Vec::new();
        let mut y = Vec::new();
        write_samples(&mut x, &s.name, &a.samples).unwrap();
        write_samples(&mut y, &s.name, &b.samples).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.samples.len(), 5 * 2 * 4);
    }

    #[test]
    fn gap_rows_are_consistent() {
        let out = run(&tiny(), 2, true).unwrap();
        for g in out.gaps.unwrap() {
            let r = g.report;
            assert!((r.delta - r.delta_formula).abs() < 1e-9);
            assert!(r.delta >= -1e-9);
        }
    }

    #[test]
    fn gap_requires_tags() {
        let mut s = tiny();
        s.algorithms = tags(&["fully-digital", "dps-full"]);
        assert!(matches!(run(&s, 1, true), Err(SimError::Config(_))));
    }

    #[test]
    fn summary_ranks_and_flags() {
        let algs = tags(&["partial-fixed", "partial-greedy", "partial-kmeans", "dps-full"]);
        let mut rows = Vec::new();
        for (a, v) in [(0, 1.0), (1, 2.0), (2, 3.0), (3, 4.0)] {
            for r in 0..3 {
                rows.push(SampleRow {
                    algorithm: algs[a].clone(),
                    snr_db: 5.0,
                    realization: r,
                    sum_rate: v + r as f64 * 0.1,
                });
            }
        }
        let sum = summarize(&algs, &[5.0], &rows);
        assert_eq!(sum.iter().map(|s| s.rank).collect::<Vec<_>>(), vec![4, 3, 2, 1]);
        assert_eq!(sum[0].partial_order_ok, Some(true));
        assert_eq!(sum[3].partial_order_ok, None);
        assert!((sum[0].mean - 1.1).abs() < 1e-12);
        // s = 0.1, n = 3
        assert!((sum[0].ci95 - 1.96 * 0.1 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn float_format_has_twelve_digits() {
        assert_eq!(fmt_float(1.5), "1.50000000000e0");
        assert_eq!(fmt_float(-10.0), "-1.00000000000e1");
    }
}
