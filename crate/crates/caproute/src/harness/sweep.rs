use std::fmt;
use std::io;
use std::str::FromStr;

use caproute_core::{ConfigOverrides, Router, RoutingConfig};
use serde::{Deserialize, Serialize};

use super::{replay, HarnessError, Policy, TestCase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    Tau,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Tau => "tau",
        }
    }

    fn overrides(self, value: f64) -> ConfigOverrides {
        match self {
            SweepParam::Lambda => ConfigOverrides { lambda_: Some(value), ..Default::default() },
            SweepParam::Tau => ConfigOverrides { tau: Some(value), ..Default::default() },
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "lambda" | "lambda_" => Ok(SweepParam::Lambda),
            "tau" => Ok(SweepParam::Tau),
            _ => Err(format!("unknown sweep parameter `{s}` (expected lambda or tau)")),
        }
    }
}

/// One grid point of a DecoR sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub mean_perf: f64,
    pub mean_cost: f64,
    /// Mean cost over the cheapest row's mean cost.
    pub norm_cost: Option<f64>,
    pub ood_rate: f64,
}

/// `start:stop:step` (inclusive, snapped to 1e-9) or `a,b,c`.
pub fn parse_grid(text: &str) -> Result<Vec<f64>, HarnessError> {
    let bad = || HarnessError::InvalidGrid(text.to_string());
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let [start, stop, step] = [parts[0], parts[1], parts[2]].map(|p| p.trim().parse::<f64>());
        let (start, stop, step) = (start.map_err(|_| bad())?, stop.map_err(|_| bad())?, step.map_err(|_| bad())?);
        if ![start, stop, step].iter().all(|x| x.is_finite()) || step <= 0.0 || stop < start {
            return Err(bad());
        }
        let n = ((stop - start) / step + 1e-9).floor() as usize;
        return Ok((0..=n).map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9).collect());
    }
    if parts.len() == 1 {
        let values = text.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<Vec<_>, _>>()?;
        if !values.is_empty() {
            return Ok(values);
        }
    }
    Err(bad())
}

/// Replays DecoR once per grid value with `param` overridden.
pub fn sweep(
    param: SweepParam,
    grid: &[f64],
    cases: &[TestCase],
    router: &Router,
    cfg: &RoutingConfig,
) -> Result<Vec<SweepRow>, HarnessError> {
    let configs = grid
        .iter()
        .map(|&v| {
            cfg.with_overrides(&param.overrides(v))
                .map_err(|_| HarnessError::InvalidGridValue { param: param.name(), value: v })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::with_capacity(grid.len());
    for (value, c) in grid.iter().zip(&configs) {
        let report = replay(cases, &[Policy::Decor], router, c)?;
        let s = &report.policies[0];
        rows.push(SweepRow { value: *value, mean_perf: s.mean_perf, mean_cost: s.mean_cost, norm_cost: None, ood_rate: s.ood_rate });
    }
    let min = rows.iter().map(|r| r.mean_cost).fold(f64::INFINITY, f64::min);
    for r in &mut rows {
        r.norm_cost = if r.mean_cost == min {
            Some(1.0)
        } else if min > 0.0 {
            Some(r.mean_cost / min)
        } else {
            None
        };
    }
    Ok(rows)
}

/// Columns: `value,mean_perf,mean_cost,norm_cost,ood_rate`; an undefined
/// `norm_cost` is an empty field.
pub fn write_sweep_csv<W: io::Write>(rows: &[SweepRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_sweep_csv<R: io::Read>(input: R) -> Result<Vec<SweepRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<Result<Vec<SweepRow>, _>>()?)
}
