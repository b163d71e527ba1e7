//! Aggregation of run tables into medians, plot-ready series and pass/fail
//! flags for the headline properties.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{AblationRow, GuidanceRow, SdeditRow};

pub const FLAG_PASS: &str = "pass";
pub const FLAG_FAIL: &str = "fail";
pub const FLAG_INSUFFICIENT: &str = "insufficient-data";

/// One plot-ready point: `x` along the sweep axis, `y` the group median.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub x: f64,
    pub y: f64,
    pub group: String,
}

/// Aggregated medians and property flags computed from the run tables.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    /// Property name to `pass` / `fail` / `insufficient-data`.
    pub flags: BTreeMap<String, String>,
    /// Median reconstruction PSNR per (iteration count, variant).
    pub ablation_psnr: Vec<SeriesPoint>,
    /// Median terminal-latent log-likelihood per guidance scale.
    pub guidance_loglik: Vec<SeriesPoint>,
    /// Median round-trip PSNR per guidance scale.
    pub guidance_psnr: Vec<SeriesPoint>,
    /// Median distance to the source per (noise strength, mode).
    pub sdedit_mse: Vec<SeriesPoint>,
}

/// Median of the finite values; `None` when nothing finite remains.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return None;
    }
    finite.sort_by(f64::total_cmp);
    let n = finite.len();
    Some(if n % 2 == 1 {
        finite[n / 2]
    } else {
        0.5 * (finite[n / 2 - 1] + finite[n / 2])
    })
}

fn flag(pass: bool) -> String {
    if pass { FLAG_PASS } else { FLAG_FAIL }.to_string()
}

struct AblationSummary {
    series: Vec<SeriesPoint>,
    ordering_flag: String,
    win_fraction_flag: String,
}

fn summarize_ablation(rows: &[AblationRow]) -> AblationSummary {
    let mut groups: BTreeMap<(usize, String), Vec<f64>> = BTreeMap::new();
    for row in rows {
        if row.status == "ok" {
            groups
                .entry((row.n, row.variant.clone()))
                .or_default()
                .push(row.psnr);
        }
    }
    let mut series = Vec::new();
    for ((n, variant), values) in &groups {
        if let Some(m) = median(values) {
            series.push(SeriesPoint {
                x: *n as f64,
                y: m,
                group: variant.clone(),
            });
        }
    }

    // Flags are evaluated at the largest iteration count present.
    let Some(&n_max) = groups.keys().map(|(n, _)| n).max() else {
        return AblationSummary {
            series,
            ordering_flag: FLAG_INSUFFICIENT.into(),
            win_fraction_flag: FLAG_INSUFFICIENT.into(),
        };
    };
    let med = |variant: &str| -> Option<f64> {
        groups
            .get(&(n_max, variant.to_string()))
            .and_then(|v| median(v))
    };
    let ordering_flag = match (
        med("null-pivotal"),
        med("null-global"),
        med("text-stochastic"),
        med("null-stochastic"),
        med("ddim-baseline"),
    ) {
        (Some(pivotal), Some(global), Some(text), Some(null_stoch), Some(baseline)) => {
            flag(pivotal > global && global > text && null_stoch <= baseline)
        }
        _ => FLAG_INSUFFICIENT.into(),
    };

    // Per-seed wins of the pivotal variant over the plain guided baseline.
    let mut by_seed: BTreeMap<u64, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for row in rows {
        if row.n != n_max || row.status != "ok" || !row.psnr.is_finite() {
            continue;
        }
        let entry = by_seed.entry(row.seed).or_default();
        match row.variant.as_str() {
            "null-pivotal" => entry.0 = Some(row.psnr),
            "ddim-baseline" => entry.1 = Some(row.psnr),
            _ => {}
        }
    }
    let pairs: Vec<(f64, f64)> = by_seed
        .values()
        .filter_map(|(a, b)| a.zip(*b))
        .collect();
    let win_fraction_flag = if pairs.is_empty() {
        FLAG_INSUFFICIENT.into()
    } else {
        let wins = pairs.iter().filter(|(a, b)| a > b).count();
        flag(wins as f64 / pairs.len() as f64 >= 0.8)
    };

    AblationSummary {
        series,
        ordering_flag,
        win_fraction_flag,
    }
}

fn summarize_guidance(rows: &[GuidanceRow]) -> (Vec<SeriesPoint>, Vec<SeriesPoint>, String, String) {
    let mut loglik: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    let mut psnr: BTreeMap<u64, Vec<f64>> = BTreeMap::new();
    for row in rows {
        loglik.entry(row.w.to_bits()).or_default().push(row.loglik);
        psnr.entry(row.w.to_bits()).or_default().push(row.psnr);
    }
    let mut ws: Vec<f64> = loglik.keys().map(|b| f64::from_bits(*b)).collect();
    ws.sort_by(f64::total_cmp);

    let mut loglik_series = Vec::new();
    let mut psnr_series = Vec::new();
    let mut loglik_medians = Vec::new();
    let mut psnr_medians = Vec::new();
    for &w in &ws {
        let ll = median(&loglik[&w.to_bits()]);
        let ps = median(&psnr[&w.to_bits()]);
        if let Some(v) = ll {
            loglik_series.push(SeriesPoint {
                x: w,
                y: v,
                group: "loglik".into(),
            });
            loglik_medians.push(v);
        }
        if let Some(v) = ps {
            psnr_series.push(SeriesPoint {
                x: w,
                y: v,
                group: "psnr".into(),
            });
            psnr_medians.push(v);
        }
    }

    let monotone_flag = if loglik_medians.len() < 2 {
        FLAG_INSUFFICIENT.to_string()
    } else {
        flag(loglik_medians.windows(2).all(|p| p[1] <= p[0]))
    };
    let endpoint_flag = if psnr_medians.len() < 2 {
        FLAG_INSUFFICIENT.to_string()
    } else {
        flag(psnr_medians[0] >= psnr_medians[psnr_medians.len() - 1])
    };
    (loglik_series, psnr_series, monotone_flag, endpoint_flag)
}

fn summarize_sdedit(rows: &[SdeditRow]) -> (Vec<SeriesPoint>, String) {
    let mut groups: BTreeMap<(u64, String), Vec<f64>> = BTreeMap::new();
    for row in rows {
        groups
            .entry((row.t0.to_bits(), row.mode.clone()))
            .or_default()
            .push(row.mse_source);
    }
    let mut series = Vec::new();
    let mut t0s: Vec<f64> = groups.keys().map(|(b, _)| f64::from_bits(*b)).collect();
    t0s.sort_by(f64::total_cmp);
    t0s.dedup();

    let mut improvement = Some(true);
    for &t0 in &t0s {
        let plain = groups
            .get(&(t0.to_bits(), "plain".to_string()))
            .and_then(|v| median(v));
        let inverted = groups
            .get(&(t0.to_bits(), "inverted".to_string()))
            .and_then(|v| median(v));
        for (mode, value) in [("plain", plain), ("inverted", inverted)] {
            if let Some(v) = value {
                series.push(SeriesPoint {
                    x: t0,
                    y: v,
                    group: mode.into(),
                });
            }
        }
        match (plain, inverted) {
            (Some(p), Some(i)) => {
                improvement = improvement.map(|ok| ok && i < p);
            }
            _ => improvement = None,
        }
    }
    let flag_value = match improvement {
        Some(ok) if !t0s.is_empty() => flag(ok),
        _ => FLAG_INSUFFICIENT.to_string(),
    };
    (series, flag_value)
}

/// Aggregates the three run tables into medians, series and pass/fail flags.
/// Every table must be present.
pub fn emit_report(
    ablation: Option<&[AblationRow]>,
    guidance: Option<&[GuidanceRow]>,
    sdedit: Option<&[SdeditRow]>,
) -> Result<Report> {
    let ablation = ablation.ok_or_else(|| Error::Report("missing ablation table".into()))?;
    let guidance = guidance.ok_or_else(|| Error::Report("missing guidance table".into()))?;
    let sdedit = sdedit.ok_or_else(|| Error::Report("missing sdedit table".into()))?;

    let ab = summarize_ablation(ablation);
    let (loglik_series, psnr_series, monotone_flag, endpoint_flag) = summarize_guidance(guidance);
    let (sdedit_series, sdedit_flag) = summarize_sdedit(sdedit);

    let mut flags = BTreeMap::new();
    flags.insert("ablation_psnr_ordering".into(), ab.ordering_flag);
    flags.insert("ablation_per_seed_wins".into(), ab.win_fraction_flag);
    flags.insert("guidance_loglik_monotone".into(), monotone_flag);
    flags.insert("guidance_psnr_endpoints".into(), endpoint_flag);
    flags.insert("sdedit_fidelity".into(), sdedit_flag);

    Ok(Report {
        flags,
        ablation_psnr: ab.series,
        guidance_loglik: loglik_series,
        guidance_psnr: psnr_series,
        sdedit_mse: sdedit_series,
    })
}

impl Report {
    /// Plot-ready `(x, y, group)` CSV for one series.
    pub fn series_csv(points: &[SeriesPoint]) -> String {
        let mut out = String::from("x,y,group\n");
        for p in points {
            out.push_str(&format!("{},{},{}\n", super::fmt_f64(p.x), super::fmt_f64(p.y), p.group));
        }
        out
    }

    pub fn to_json_string(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }
}
