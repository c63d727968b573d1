//! Dataset ingestion, chain configuration files, trace persistence and
//! posterior summaries.

use crate::dist::Parameterization;
use crate::gibbs::{ChainConfig, HyperMode, ParamMode, PriorRecord, Trace, TraceRecord, Variant};
use crate::process::solve_prob_for_expected_m;
use crate::special::StirlingTriangle;
use crate::{dist, process, Error, ModelParams, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

/// A list of fixed-dimension real observation vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub name: String,
    pub units: String,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, Vec::len)
    }
}

fn parse_dataset(text: &str, name: &str) -> Result<Dataset> {
    let mut points: Vec<Vec<f64>> = Vec::new();
    let mut dim: Option<usize> = None;
    let mut header_allowed = true;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parsed: std::result::Result<Vec<f64>, _> =
            fields.iter().map(|f| f64::from_str(f)).collect();
        match parsed {
            Ok(row) => {
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Parse {
                        line: idx + 1,
                        msg: "non-finite value".into(),
                    });
                }
                match dim {
                    None => dim = Some(row.len()),
                    Some(d) if d != row.len() => {
                        return Err(Error::Parse {
                            line: idx + 1,
                            msg: format!("expected {d} columns, found {}", row.len()),
                        })
                    }
                    _ => {}
                }
                points.push(row);
                header_allowed = false;
            }
            Err(e) => {
                // one non-numeric line before any data row is a header
                if header_allowed {
                    header_allowed = false;
                    continue;
                }
                return Err(Error::Parse {
                    line: idx + 1,
                    msg: e.to_string(),
                });
            }
        }
    }
    if points.is_empty() {
        return Err(Error::Data(format!("{name}: no observations")));
    }
    Ok(Dataset {
        points,
        name: name.to_string(),
        units: String::new(),
    })
}

/// Loads a CSV dataset: one row per observation, columns are dimensions,
/// `#` comment lines and an optional header are skipped.
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    parse_dataset(&text, &name)
}

/// The bundled galaxy velocities (82 observations, units of 1000 km/s).
pub fn galaxy() -> Dataset {
    let mut ds = parse_dataset(include_str!("../data/galaxy.csv"), "galaxy")
        .expect("bundled dataset parses");
    ds.units = "1000 km/s".into();
    ds
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TraceLine {
    Preamble {
        config: ChainConfig,
        dim: usize,
        sample_size: usize,
        density_grid: Option<Vec<f64>>,
    },
    Record(TraceRecord),
    Density {
        values: Vec<f64>,
    },
}

/// Writes a trace as JSON lines: a preamble with the full configuration,
/// one record per iteration, then the averaged predictive density if any.
pub fn write_trace<P: AsRef<Path>>(trace: &Trace, path: P) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    let preamble = TraceLine::Preamble {
        config: trace.config.clone(),
        dim: trace.dim,
        sample_size: trace.sample_size,
        density_grid: trace.density_grid.clone(),
    };
    writeln!(out, "{}", serde_json::to_string(&preamble)?)?;
    for record in &trace.records {
        writeln!(out, "{}", serde_json::to_string(&TraceLine::Record(record.clone()))?)?;
    }
    if let Some(values) = &trace.predictive_density {
        let line = TraceLine::Density {
            values: values.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&line)?)?;
    }
    Ok(())
}

/// Reads a trace back from its JSON-lines form.
pub fn read_trace<P: AsRef<Path>>(path: P) -> Result<Trace> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut header: Option<(ChainConfig, usize, usize, Option<Vec<f64>>)> = None;
    let mut records = Vec::new();
    let mut density = None;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<TraceLine>(&line)? {
            TraceLine::Preamble {
                config,
                dim,
                sample_size,
                density_grid,
            } => header = Some((config, dim, sample_size, density_grid)),
            TraceLine::Record(r) => records.push(r),
            TraceLine::Density { values } => density = Some(values),
        }
    }
    let (config, dim, sample_size, density_grid) =
        header.ok_or_else(|| Error::Data("trace file has no preamble".into()))?;
    Ok(Trace {
        config,
        dim,
        sample_size,
        records,
        density_grid,
        predictive_density: density,
    })
}

/// Normalized histogram of a continuous parameter over equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub mass: Vec<f64>,
}

impl Histogram {
    fn from_values(values: &[f64], bins: usize) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut mass = vec![0.0; bins];
        if max > min {
            let width = (max - min) / bins as f64;
            for &v in values {
                let idx = (((v - min) / width) as usize).min(bins - 1);
                mass[idx] += 1.0;
            }
        } else {
            mass[0] = values.len() as f64;
        }
        let total: f64 = mass.iter().sum();
        for v in &mut mass {
            *v /= total;
        }
        Some(Self { min, max, mass })
    }
}

/// Label-invariant posterior summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub records: usize,
    pub sample_size: usize,
    pub posterior_mean_l: f64,
    /// Mean over iterations of (#unit-size clusters)/l.
    pub unit_size_ratio: f64,
    /// Mean over iterations of m/l.
    pub mean_cluster_size: f64,
    /// Mean over iterations of the number of clusters with n_k > 1.
    pub non_unit_clusters: f64,
    /// Normalized over pooled iterations.
    pub l_histogram: Vec<(usize, f64)>,
    /// Normalized over all (cluster, iteration) pairs.
    pub size_histogram: Vec<(usize, f64)>,
    pub discount_posterior: Option<Histogram>,
    pub prob_posterior: Option<Histogram>,
    pub mass_posterior: Option<Histogram>,
}

const PARAM_HISTOGRAM_BINS: usize = 50;

fn summarize_partitions<'a, I>(per_iter: I) -> Result<Summary>
where
    I: Iterator<Item = &'a [usize]> + Clone,
{
    let mut records = 0usize;
    let mut sample_size = 0usize;
    let mut mean_l = 0.0;
    let mut unit_ratio = 0.0;
    let mut mean_size = 0.0;
    let mut non_unit = 0.0;
    let mut l_counts: Vec<f64> = Vec::new();
    let mut size_counts: Vec<f64> = Vec::new();
    let mut clusters_total = 0.0;
    for sizes in per_iter {
        let l = sizes.len();
        let m: usize = sizes.iter().sum();
        if l == 0 {
            return Err(Error::Data("empty partition in trace".into()));
        }
        records += 1;
        sample_size = m;
        let units = sizes.iter().filter(|&&n| n == 1).count();
        mean_l += l as f64;
        unit_ratio += units as f64 / l as f64;
        mean_size += m as f64 / l as f64;
        non_unit += (l - units) as f64;
        if l_counts.len() <= l {
            l_counts.resize(l + 1, 0.0);
        }
        l_counts[l] += 1.0;
        for &n in sizes {
            if size_counts.len() <= n {
                size_counts.resize(n + 1, 0.0);
            }
            size_counts[n] += 1.0;
            clusters_total += 1.0;
        }
    }
    if records == 0 {
        return Err(Error::EmptyTrace);
    }
    let n = records as f64;
    let normalize = |counts: Vec<f64>, total: f64| -> Vec<(usize, f64)> {
        counts
            .into_iter()
            .enumerate()
            .filter(|(_, c)| *c > 0.0)
            .map(|(v, c)| (v, c / total))
            .collect()
    };
    Ok(Summary {
        records,
        sample_size,
        posterior_mean_l: mean_l / n,
        unit_size_ratio: unit_ratio / n,
        mean_cluster_size: mean_size / n,
        non_unit_clusters: non_unit / n,
        l_histogram: normalize(l_counts, n),
        size_histogram: normalize(size_counts, clusters_total),
        discount_posterior: None,
        prob_posterior: None,
        mass_posterior: None,
    })
}

/// Summarizes a mixture-chain trace.
pub fn summarize(trace: &Trace) -> Result<Summary> {
    let mut summary = summarize_partitions(trace.records.iter().map(|r| r.sizes.as_slice()))?;
    let pull = |f: fn(&TraceRecord) -> f64| -> Vec<f64> { trace.records.iter().map(f).collect() };
    summary.discount_posterior =
        Histogram::from_values(&pull(|r| r.discount), PARAM_HISTOGRAM_BINS);
    summary.prob_posterior = Histogram::from_values(&pull(|r| r.prob), PARAM_HISTOGRAM_BINS);
    summary.mass_posterior = Histogram::from_values(&pull(|r| r.mass), PARAM_HISTOGRAM_BINS);
    Ok(summary)
}

/// Summarizes prior-partition chain records.
pub fn summarize_prior(records: &[PriorRecord]) -> Result<Summary> {
    summarize_partitions(records.iter().map(|r| r.sizes.as_slice()))
}

pub fn write_summary<P: AsRef<Path>>(summary: &Summary, path: P) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", serde_json::to_string_pretty(summary)?)?;
    Ok(())
}

/// Writes a CSV table; an empty row set produces a header-only file.
pub fn write_table<P: AsRef<Path>>(path: P, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{}", header.join(","))?;
    for row in rows {
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Cluster-number PMF table at fixed sample size: one column per discount,
/// probability parameters solved from the expected sample size.
pub fn cluster_number_pmf_table(
    mass: f64,
    m: usize,
    discounts: &[f64],
    expected_m: f64,
    parameterization: Parameterization,
) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut header = vec!["l".to_string()];
    let mut columns = Vec::new();
    for &a in discounts {
        let probe = ModelParams::new(mass, a, 0.5, parameterization)?;
        let p = solve_prob_for_expected_m(expected_m, &probe)?;
        let params = ModelParams::new(mass, a, p, parameterization)?;
        let triangle = StirlingTriangle::build(m, a)?;
        columns.push(process::cluster_number_pmf(m, &params, &triangle)?);
        header.push(format!("pmf_a_{a}"));
    }
    let rows = (0..=m)
        .map(|l| {
            let mut row = vec![l.to_string()];
            row.extend(columns.iter().map(|c| format!("{:.12e}", c[l])));
            row
        })
        .collect();
    Ok((header, rows))
}

/// Cluster-size (TNB) PMF table: one column per discount, probability
/// parameters solved from the expected sample size.
pub fn tnb_pmf_table(
    mass: f64,
    discounts: &[f64],
    expected_m: f64,
    max_size: u64,
    parameterization: Parameterization,
) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut header = vec!["n".to_string()];
    let mut columns = Vec::new();
    for &a in discounts {
        let probe = ModelParams::new(mass, a, 0.5, parameterization)?;
        let p = solve_prob_for_expected_m(expected_m, &probe)?;
        let pmf: Vec<f64> = (1..=max_size)
            .map(|n| dist::tnb_log_pmf(n, a, p).map(f64::exp))
            .collect::<Result<_>>()?;
        columns.push(pmf);
        header.push(format!("pmf_a_{a}"));
    }
    let rows = (1..=max_size as usize)
        .map(|n| {
            let mut row = vec![n.to_string()];
            row.extend(columns.iter().map(|c| format!("{:.12e}", c[n - 1])));
            row
        })
        .collect();
    Ok((header, rows))
}

/// Rows for prior cluster-structure draws.
pub fn prior_draw_rows(draws: &[crate::ClusterStructure]) -> Vec<Vec<String>> {
    draws
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let sizes: Vec<String> = d.sizes.iter().map(u64::to_string).collect();
            vec![
                i.to_string(),
                d.cluster_count().to_string(),
                d.sample_size().to_string(),
                sizes.join("|"),
            ]
        })
        .collect()
}

/// Rows for prior-partition chain records.
pub fn prior_record_rows(records: &[PriorRecord]) -> Vec<Vec<String>> {
    records
        .iter()
        .map(|r| {
            let sizes: Vec<String> = r.sizes.iter().map(usize::to_string).collect();
            vec![
                r.sweep.to_string(),
                r.cluster_count.to_string(),
                r.subsample_count.map_or(String::new(), |v| v.to_string()),
                sizes.join("|"),
            ]
        })
        .collect()
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gnbp" => Ok(Variant::Gnbp),
            "reparam" | "reparam-gnbp" => Ok(Variant::ReparamGnbp),
            "nrmi-aux" | "nrmi" => Ok(Variant::NrmiAux),
            other => Err(Error::InvalidParameter(format!(
                "unknown variant '{other}' (expected gnbp, reparam or nrmi-aux)"
            ))),
        }
    }
}

fn parse_param_mode(value: &str, line: usize) -> Result<ParamMode> {
    if value.eq_ignore_ascii_case("learn") {
        return Ok(ParamMode::Learn);
    }
    value
        .parse::<f64>()
        .map(ParamMode::Fixed)
        .map_err(|e| Error::Parse {
            line,
            msg: format!("expected 'learn' or a number: {e}"),
        })
}

/// Parses a flat key = value configuration. Every key is optional; the
/// defaults are the experiment protocol's. Keys: iterations, burn_in,
/// seed, grid_points, variant, mass, discount, prob, precision,
/// base_mean, base_precision.
pub fn parse_chain_config(text: &str) -> Result<ChainConfig> {
    let mut config = ChainConfig::default();
    let mut precision: Option<f64> = None;
    let mut base_mean: Option<Vec<f64>> = None;
    let mut base_precision: Option<f64> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            msg: "expected 'key = value'".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        let bad_num = |e: std::num::ParseFloatError| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        };
        let bad_int = |e: std::num::ParseIntError| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        };
        match key {
            "iterations" => config.iterations = value.parse().map_err(bad_int)?,
            "burn_in" => config.burn_in = value.parse().map_err(bad_int)?,
            "seed" => config.seed = value.parse().map_err(bad_int)?,
            "grid_points" => config.grid_points = value.parse().map_err(bad_int)?,
            "variant" => config.variant = value.parse()?,
            "mass" => config.mass = parse_param_mode(value, line_no)?,
            "discount" => config.discount = parse_param_mode(value, line_no)?,
            "prob" => config.prob = parse_param_mode(value, line_no)?,
            "precision" => precision = Some(value.parse().map_err(bad_num)?),
            "base_precision" => base_precision = Some(value.parse().map_err(bad_num)?),
            "base_mean" => {
                let parsed: std::result::Result<Vec<f64>, _> =
                    value.split(',').map(|v| v.trim().parse::<f64>()).collect();
                base_mean = Some(parsed.map_err(bad_num)?);
            }
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("unknown key '{other}'"),
                })
            }
        }
    }
    match (precision, base_mean, base_precision) {
        (None, None, None) => {}
        (Some(precision), Some(base_mean), Some(base_precision)) => {
            config.hypers = HyperMode::Fixed {
                precision,
                base_mean,
                base_precision,
            };
        }
        _ => {
            return Err(Error::Data(
                "fixing hyperparameters requires precision, base_mean and base_precision".into(),
            ))
        }
    }
    Ok(config)
}
