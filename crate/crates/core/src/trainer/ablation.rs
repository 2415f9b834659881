//! Four-axis ablation: query count, learnable queries, mixer variant and
//! mixing loss, each cell trained with several seeds and reduced to medians.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{evaluate_partition, train, TrainConfig};
use crate::data::Partition;
use crate::error::Result;
use crate::model::MixerVariant;

pub const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

/// Mixing-loss weight used for the "on" cell when the base config has none.
const DEFAULT_LAMBDA: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub axis: &'static str,
    pub setting: String,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub axis: &'static str,
    pub setting: String,
    pub miou: f64,
    pub fscore: f64,
    /// `(seed, miou, fscore)` per run, in seed order.
    pub runs: Vec<(u64, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

/// The ten cells, each a copy of `base` with one axis changed.
pub fn ablation_cells(base: &TrainConfig) -> Vec<AblationCell> {
    let mut cells = Vec::new();
    let mut cell = |axis, setting: String, edit: &dyn Fn(&mut TrainConfig)| {
        let mut config = base.clone();
        config.checkpoint_path = None;
        config.log_path = None;
        edit(&mut config);
        cells.push(AblationCell {
            axis,
            setting,
            config,
        });
    };
    for n in [1, 4, 8] {
        cell("n_query", n.to_string(), &|c| c.model.n_query = n);
    }
    for on in [true, false] {
        cell("learnable_queries", on_off(on), &|c| {
            c.model.use_learnable_queries = on
        });
    }
    for m in [MixerVariant::None, MixerVariant::Cra, MixerVariant::Cha] {
        cell("mixer", m.to_string(), &|c| c.model.mixer = m);
    }
    let lambda = if base.model.lambda_mix > 0.0 {
        base.model.lambda_mix
    } else {
        DEFAULT_LAMBDA
    };
    for on in [true, false] {
        cell("mixing_loss", on_off(on), &|c| {
            c.model.lambda_mix = if on { lambda } else { 0.0 }
        });
    }
    cells
}

fn on_off(on: bool) -> String {
    if on { "on" } else { "off" }.to_string()
}

/// Trains every cell once per seed and scores it on the test partition.
/// Cells whose config coincides (the base setting recurs on each axis) are
/// trained once and shared. `progress` receives `(cell, seed, miou, fscore)`.
pub fn ablate(
    base: &TrainConfig,
    seeds: &[u64],
    mut progress: impl FnMut(&AblationCell, u64, f64, f64),
) -> Result<AblationTable> {
    base.validate()?;
    let mut cache: HashMap<String, (f64, f64)> = HashMap::new();
    let mut rows = Vec::new();
    for cell in ablation_cells(base) {
        let mut runs = Vec::new();
        for &seed in seeds {
            let mut config = cell.config.clone();
            config.seed = seed;
            let key = config.render();
            let (miou, fscore) = match cache.get(&key) {
                Some(&r) => r,
                None => {
                    let out = train(&config)?;
                    let m = evaluate_partition(&out.model, &config, Partition::Test)?;
                    cache.insert(key, (m.miou, m.fscore));
                    (m.miou, m.fscore)
                }
            };
            progress(&cell, seed, miou, fscore);
            runs.push((seed, miou, fscore));
        }
        rows.push(AblationRow {
            axis: cell.axis,
            setting: cell.setting.clone(),
            miou: median(runs.iter().map(|r| r.1).collect()),
            fscore: median(runs.iter().map(|r| r.2).collect()),
            runs,
        });
    }
    Ok(AblationTable { rows })
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl AblationTable {
    pub fn row(&self, axis: &str, setting: &str) -> Option<&AblationRow> {
        self.rows
            .iter()
            .find(|r| r.axis == axis && r.setting == setting)
    }

    /// `(CHA miou >= NONE miou, mixing on miou >= off miou)`.
    pub fn directional(&self) -> (Option<bool>, Option<bool>) {
        let ge = |a: Option<&AblationRow>, b: Option<&AblationRow>| Some(a?.miou >= b?.miou);
        (
            ge(self.row("mixer", "cha"), self.row("mixer", "none")),
            ge(
                self.row("mixing_loss", "on"),
                self.row("mixing_loss", "off"),
            ),
        )
    }

    /// One row per cell with median metrics and the per-seed values
    /// (`;`-separated), followed by `#` comment lines with the directional checks.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("axis,setting,miou,fscore,miou_runs,fscore_runs\n");
        let join = |v: Vec<f64>| v.iter().map(f64::to_string).collect::<Vec<_>>().join(";");
        for r in &self.rows {
            writeln!(
                s,
                "{},{},{},{},{},{}",
                r.axis,
                r.setting,
                r.miou,
                r.fscore,
                join(r.runs.iter().map(|x| x.1).collect()),
                join(r.runs.iter().map(|x| x.2).collect()),
            )
            .expect("write to String");
        }
        let (cha, mix) = self.directional();
        let show = |b: Option<bool>| b.map_or("n/a".to_string(), |b| b.to_string());
        writeln!(s, "# cha_ge_none={}", show(cha)).expect("write to String");
        writeln!(s, "# mixing_on_ge_off={}", show(mix)).expect("write to String");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Task;

    #[test]
    fn ten_cells_over_four_axes() {
        let cells = ablation_cells(&TrainConfig::toy(Task::S4));
        let names: Vec<String> = cells
            .iter()
            .map(|c| format!("{}={}", c.axis, c.setting))
            .collect();
        assert_eq!(
            names,
            [
                "n_query=1",
                "n_query=4",
                "n_query=8",
                "learnable_queries=on",
                "learnable_queries=off",
                "mixer=none",
                "mixer=cra",
                "mixer=cha",
                "mixing_loss=on",
                "mixing_loss=off",
            ]
        );
        assert_eq!(cells[9].config.model.lambda_mix, 0.0);
        assert_eq!(cells[8].config.model.lambda_mix, 0.1);
    }

    #[test]
    fn medians() {
        assert_eq!(median(vec![0.3, 0.1, 0.2]), 0.2);
        assert_eq!(median(vec![0.4, 0.2]), 0.30000000000000004);
    }
}
