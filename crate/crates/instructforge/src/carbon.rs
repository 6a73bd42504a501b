//! Energy (kWh) and emission (gCO2e) estimates for training runs and
//! API-based generation.
//!
//! The reference calibration constants are back-solved from published totals
//! once and shipped as named presets; see [`intensity_preset`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CarbonError {
    #[error("input {name} must be positive, got {value}")]
    NonPositiveInput { name: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateMethod {
    GpuTime,
    TokenBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarbonEstimate {
    pub kwh: f64,
    pub gco2e: f64,
    pub method: EstimateMethod,
    /// Inputs echoed for the report.
    pub params: BTreeMap<String, String>,
}

/// Reference totals of the calibrated generation run.
pub const CALIBRATION_TOKENS: u64 = 16_901_684;
pub const CALIBRATION_KWH: f64 = 65.7;
pub const CALIBRATION_GCO2E: f64 = 1_890.0;

/// Energy per generated token, back-solved from the calibration totals
/// (~3.887e-6 kWh/token).
pub const GENERATION_KWH_PER_TOKEN: f64 = CALIBRATION_KWH / CALIBRATION_TOKENS as f64;

/// Generation-side carbon intensity, back-solved from the calibration totals
/// (~28.8 gCO2e/kWh; the generation servers sit on a low-carbon grid).
pub const GENERATION_INTENSITY: f64 = CALIBRATION_GCO2E / CALIBRATION_KWH;

/// Training-side carbon intensity, back-solved once from the reference run
/// (385 gCO2e / 7.5 kWh ≈ 51.3 gCO2e/kWh, a France-like grid).
pub const TRAINING_INTENSITY: f64 = 385.0 / 7.5;

/// Named intensity presets: "paper-fr-training" and "paper-no-generation".
pub fn intensity_preset(name: &str) -> Option<f64> {
    match name {
        "paper-fr-training" => Some(TRAINING_INTENSITY),
        "paper-no-generation" => Some(GENERATION_INTENSITY),
        _ => None,
    }
}

/// kWh = gpu_hours × gpu_power_watts / 1000 × pue;
/// gCO2e = kWh × carbon_intensity.
pub fn estimate_training(
    gpu_hours: f64,
    gpu_power_watts: f64,
    pue: f64,
    carbon_intensity_g_per_kwh: f64,
) -> Result<CarbonEstimate, CarbonError> {
    for (name, value) in [
        ("gpu_hours", gpu_hours),
        ("gpu_power_watts", gpu_power_watts),
        ("pue", pue),
        ("carbon_intensity_g_per_kwh", carbon_intensity_g_per_kwh),
    ] {
        if !(value > 0.0) {
            return Err(CarbonError::NonPositiveInput { name, value });
        }
    }
    let kwh = gpu_hours * gpu_power_watts / 1000.0 * pue;
    let gco2e = kwh * carbon_intensity_g_per_kwh;
    Ok(CarbonEstimate {
        kwh,
        gco2e,
        method: EstimateMethod::GpuTime,
        params: BTreeMap::from([
            ("gpu_hours".into(), gpu_hours.to_string()),
            ("gpu_power_watts".into(), gpu_power_watts.to_string()),
            ("pue".into(), pue.to_string()),
            ("carbon_intensity_g_per_kwh".into(), carbon_intensity_g_per_kwh.to_string()),
        ]),
    })
}

/// Training estimate from a known energy figure instead of GPU time.
pub fn estimate_training_from_kwh(kwh: f64, carbon_intensity_g_per_kwh: f64) -> CarbonEstimate {
    CarbonEstimate {
        kwh,
        gco2e: kwh * carbon_intensity_g_per_kwh,
        method: EstimateMethod::GpuTime,
        params: BTreeMap::from([
            ("kwh".into(), kwh.to_string()),
            ("carbon_intensity_g_per_kwh".into(), carbon_intensity_g_per_kwh.to_string()),
        ]),
    }
}

/// kWh = tokens × kwh_per_token; gCO2e = kWh × intensity.
pub fn estimate_generation(
    tokens: u64,
    kwh_per_token: f64,
    carbon_intensity_g_per_kwh: f64,
) -> CarbonEstimate {
    let kwh = tokens as f64 * kwh_per_token;
    CarbonEstimate {
        kwh,
        gco2e: kwh * carbon_intensity_g_per_kwh,
        method: EstimateMethod::TokenBased,
        params: BTreeMap::from([
            ("tokens".into(), tokens.to_string()),
            ("kwh_per_token".into(), kwh_per_token.to_string()),
            ("carbon_intensity_g_per_kwh".into(), carbon_intensity_g_per_kwh.to_string()),
        ]),
    }
}

/// [`estimate_generation`] with the calibrated defaults.
pub fn estimate_generation_default(tokens: u64) -> CarbonEstimate {
    estimate_generation(tokens, GENERATION_KWH_PER_TOKEN, GENERATION_INTENSITY)
}

/// One run row of the cost report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRow {
    pub run: String,
    /// Absent when the run had no continued pre-training (reported as "0").
    pub cpt: Option<CarbonEstimate>,
    pub ift: CarbonEstimate,
    pub generation: Option<CarbonEstimate>,
}

fn cell(estimate: Option<&CarbonEstimate>) -> String {
    match estimate {
        Some(e) => format!("{:.0} ({:.1})", e.gco2e, e.kwh),
        None => "0".to_string(),
    }
}

/// Render the per-run cost table with gCO2e and parenthesized kWh per stage
/// plus a totals column.
pub fn run_report(rows: &[RunRow]) -> String {
    let mut lines = Vec::with_capacity(rows.len() + 1);
    lines.push(format!(
        "{:<16} | {:>14} | {:>14} | {:>18} | {:>16}",
        "run", "cpt", "ift", "gen_instructions", "total"
    ));
    for row in rows {
        let total_g: f64 = row.cpt.as_ref().map_or(0.0, |e| e.gco2e)
            + row.ift.gco2e
            + row.generation.as_ref().map_or(0.0, |e| e.gco2e);
        let total_kwh: f64 = row.cpt.as_ref().map_or(0.0, |e| e.kwh)
            + row.ift.kwh
            + row.generation.as_ref().map_or(0.0, |e| e.kwh);
        lines.push(format!(
            "{:<16} | {:>14} | {:>14} | {:>18} | {:>16}",
            row.run,
            cell(row.cpt.as_ref()),
            cell(Some(&row.ift)),
            cell(row.generation.as_ref()),
            format!("{total_g:.0} ({total_kwh:.1})"),
        ));
    }
    let mut out = lines.join("\n");
    out.push('\n');
    out
}
