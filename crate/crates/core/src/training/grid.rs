use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::train::{train, TrainConfig, TrainRow, ValPair};
use crate::error::{Error, Result};
use crate::model::{Conditioning, Generator, ModelConfig};

/// Accuracy margin within which a smaller model is preferred.
pub const NEAR_TIE: f64 = 0.005;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpace {
    pub noise_dim: Vec<usize>,
    pub filters: Vec<usize>,
    pub kernel: Vec<usize>,
    pub res_blocks: Vec<usize>,
    pub conditioning: Vec<Conditioning>,
}

impl GridSpace {
    /// Every combination, noise dimension varying slowest.
    pub fn configs(&self, output_size: usize) -> Result<Vec<ModelConfig>> {
        for (name, len) in [
            ("noise_dim", self.noise_dim.len()),
            ("filters", self.filters.len()),
            ("kernel", self.kernel.len()),
            ("res_blocks", self.res_blocks.len()),
            ("conditioning", self.conditioning.len()),
        ] {
            if len == 0 {
                return Err(Error::config(format!("grid.{name}"), "must list at least one value"));
            }
        }
        let mut out = Vec::new();
        for &nd in &self.noise_dim {
            for &f in &self.filters {
                for &k in &self.kernel {
                    for &r in &self.res_blocks {
                        for &c in &self.conditioning {
                            out.push(ModelConfig::new(nd, f, k, r, c, output_size));
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridResult {
    pub config: ModelConfig,
    pub val_accuracy: Option<f64>,
    pub best_epoch: Option<usize>,
    pub param_count: usize,
    /// Wall-clock time; kept out of the report so reports are reproducible.
    #[serde(skip)]
    pub seconds: f64,
    pub error: Option<String>,
}

/// Orders results best first. Repeatedly takes the most accurate remaining
/// run and, among runs within [`NEAR_TIE`] of it, picks the one with the
/// fewest parameters. Failed runs go last in their original order.
pub fn rank(results: &mut Vec<GridResult>) {
    let (mut ok, failed): (Vec<_>, Vec<_>) = results.drain(..).partition(|r| r.val_accuracy.is_some());
    let mut ranked = Vec::with_capacity(ok.len() + failed.len());
    while !ok.is_empty() {
        let top = ok.iter().map(|r| r.val_accuracy.unwrap()).fold(f64::NEG_INFINITY, f64::max);
        let pick = ok
            .iter()
            .enumerate()
            .filter(|(_, r)| top - r.val_accuracy.unwrap() <= NEAR_TIE + 1e-12)
            .min_by(|a, b| {
                a.1.param_count
                    .cmp(&b.1.param_count)
                    .then(b.1.val_accuracy.unwrap().total_cmp(&a.1.val_accuracy.unwrap()))
                    .then(a.0.cmp(&b.0))
            })
            .map(|(i, _)| i)
            .unwrap();
        ranked.push(ok.remove(pick));
    }
    ranked.extend(failed);
    *results = ranked;
}

/// Trains every cell of `space` on the same data and returns the ranked
/// results. Each finished cell is also handed to `on_result`, which is how
/// callers stream a report. A failing cell is recorded, not fatal.
pub fn grid_search(
    space: &GridSpace,
    output_size: usize,
    rows: &[TrainRow],
    val: &[ValPair],
    cfg: &TrainConfig,
    mut on_result: impl FnMut(&GridResult, &Generator) -> Result<()>,
) -> Result<Vec<GridResult>> {
    let mut results = Vec::new();
    for config in space.configs(output_size)? {
        let start = Instant::now();
        let param_count = config.param_count();
        let outcome = Generator::build(config.clone(), cfg.seed).and_then(|mut m| {
            let report = train(&mut m, rows, val, cfg)?;
            Ok((m, report))
        });
        let (result, model) = match outcome {
            Ok((m, report)) => (
                GridResult {
                    config,
                    val_accuracy: Some(report.best_val_accuracy),
                    best_epoch: Some(report.best_epoch),
                    param_count,
                    seconds: start.elapsed().as_secs_f64(),
                    error: None,
                },
                Some(m),
            ),
            Err(e) => (
                GridResult {
                    config,
                    val_accuracy: None,
                    best_epoch: None,
                    param_count,
                    seconds: start.elapsed().as_secs_f64(),
                    error: Some(e.to_string()),
                },
                None,
            ),
        };
        if let Some(m) = &model {
            on_result(&result, m)?;
        }
        results.push(result);
    }
    rank(&mut results);
    Ok(results)
}

/// Wall-clock seconds per cell, one `{"config", "seconds"}` object per line.
pub fn timing_lines(results: &[GridResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        let rec = serde_json::json!({ "config": r.config, "seconds": r.seconds });
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
    }
    Ok(out)
}

/// One JSON object per line.
pub fn report_lines(results: &[GridResult]) -> Result<String> {
    let mut out = String::new();
    for r in results {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(acc: Option<f64>, params: usize, filters: usize) -> GridResult {
        GridResult {
            config: ModelConfig::new(0, filters, 1, 1, Conditioning::Standard, 4),
            val_accuracy: acc,
            best_epoch: acc.map(|_| 0),
            param_count: params,
            seconds: 0.0,
            error: acc.is_none().then(|| "boom".into()),
        }
    }

    #[test]
    fn near_ties_prefer_smaller_models() {
        let mut r = vec![
            result(Some(0.850), 1000, 1),
            result(Some(0.854), 5000, 2),
            result(None, 10, 3),
            result(Some(0.700), 10, 4),
            result(Some(0.849), 800, 5),
        ];
        rank(&mut r);
        let order: Vec<usize> = r.iter().map(|x| x.config.filters).collect();
        // 0.849 is within 0.005 of 0.854 and is the smallest of the three.
        assert_eq!(order, vec![5, 1, 2, 4, 3]);
    }

    #[test]
    fn clear_winner_beats_smaller_models() {
        let mut r = vec![result(Some(0.80), 10, 1), result(Some(0.90), 1000, 2)];
        rank(&mut r);
        assert_eq!(r[0].config.filters, 2);
    }

    #[test]
    fn empty_axis_is_a_config_error() {
        let space = GridSpace {
            noise_dim: vec![5],
            filters: vec![],
            kernel: vec![3],
            res_blocks: vec![1],
            conditioning: vec![Conditioning::Standard],
        };
        assert!(space.configs(8).unwrap_err().to_string().contains("grid.filters"));
    }

    #[test]
    fn report_is_one_line_per_cell() {
        let text = report_lines(&[result(Some(0.5), 1, 1), result(None, 1, 2)]).unwrap();
        assert_eq!(text.lines().count(), 2);
        for line in text.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("param_count").is_some() && v.get("config").is_some());
            assert!(v.get("seconds").is_none());
        }
        let timings = timing_lines(&[result(Some(0.5), 1, 1)]).unwrap();
        assert!(timings.contains("\"seconds\":0.0"));
    }
}
