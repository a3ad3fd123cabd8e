use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, LabeledSet, RunRecord, TrainConfig};
use crate::dataset::Patch;
use crate::error::{Error, Result};

/// One combination of the four imbalance techniques. `model` numbers rows
/// within the default grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: usize,
    pub oversampling: bool,
    pub aux_head: bool,
    pub separate_heads: bool,
    pub sigmoid: bool,
}

impl AblationRow {
    pub fn is_baseline(&self) -> bool {
        !(self.oversampling || self.aux_head || self.separate_heads || self.sigmoid)
    }

    pub fn is_full(&self) -> bool {
        self.oversampling && self.aux_head && self.separate_heads && self.sigmoid
    }

    /// Short name such as `over+aux+sig`, or `baseline`.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.oversampling, "over"),
            (self.aux_head, "aux"),
            (self.separate_heads, "sep"),
            (self.sigmoid, "sig"),
        ]
        .iter()
        .filter(|(on, _)| *on)
        .map(|(_, n)| *n)
        .collect();
        if parts.is_empty() {
            "baseline".into()
        } else {
            parts.join("+")
        }
    }

    pub fn apply(&self, shared: &TrainConfig) -> TrainConfig {
        let mut c = shared.clone();
        c.oversampling = self.oversampling;
        c.network.use_aux_head = self.aux_head;
        c.network.use_separate_heads = self.separate_heads;
        c.network.use_sigmoid = self.sigmoid;
        c
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub rows: Vec<AblationRow>,
}

impl Default for AblationGrid {
    /// The eleven studied combinations, baseline first and the full model
    /// last.
    fn default() -> Self {
        // (oversampling, aux, separate, sigmoid)
        let flags = [
            (false, false, false, false),
            (false, true, false, false),
            (false, false, false, true),
            (false, true, true, true),
            (false, false, true, true),
            (true, false, false, true),
            (true, false, false, false),
            (true, true, false, true),
            (true, true, false, false),
            (true, false, true, true),
            (true, true, true, true),
        ];
        let rows = flags
            .iter()
            .enumerate()
            .map(|(model, &(o, a, s, g))| AblationRow {
                model,
                oversampling: o,
                aux_head: a,
                separate_heads: s,
                sigmoid: g,
            })
            .collect();
        Self { rows }
    }
}

impl AblationGrid {
    /// The default rows with the given model numbers, in the given order.
    pub fn select(models: &[usize]) -> Result<Self> {
        let all = Self::default();
        let rows = models
            .iter()
            .map(|&m| {
                all.rows
                    .get(m)
                    .copied()
                    .ok_or_else(|| Error::Config(format!("no model #{m} in the default grid")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub micro_f1: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

impl SeedOutcome {
    fn from_record(seed: u64, r: &RunRecord) -> Self {
        Self {
            seed,
            micro_f1: r.report.micro_f1(),
            macro_f1: r.report.macro_f1(),
            per_class_f1: r.report.f1.per_class.clone(),
            best_epoch: r.best_epoch,
            best_val_loss: r.best_val_loss(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationResult {
    pub row: AblationRow,
    /// One entry per seed; failures keep their error message.
    pub outcomes: Vec<std::result::Result<SeedOutcome, String>>,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

impl AblationResult {
    fn successes(&self) -> impl Iterator<Item = &SeedOutcome> {
        self.outcomes.iter().filter_map(|o| o.as_ref().ok())
    }

    pub fn median_micro(&self) -> f64 {
        median(self.successes().map(|o| o.micro_f1).collect())
    }

    pub fn median_macro(&self) -> f64 {
        median(self.successes().map(|o| o.macro_f1).collect())
    }

    pub fn median_class(&self, class: usize) -> f64 {
        median(self.successes().map(|o| o.per_class_f1[class - 1]).collect())
    }

    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.is_err()).count()
    }
}

/// Trains every row once per seed of `seeds`; rows run in parallel and a
/// failing run does not stop the others. Results come back in display
/// order (see [`order_rows`]).
pub fn run_ablation(
    grid: &AblationGrid,
    shared: &TrainConfig,
    train_data: &LabeledSet,
    val_data: &LabeledSet,
    seeds: &[u64],
) -> Result<Vec<AblationResult>> {
    run_ablation_with_progress(grid, shared, train_data, val_data, seeds, &|_, _| {})
}

/// [`run_ablation`] with a callback invoked as each run finishes.
pub fn run_ablation_with_progress(
    grid: &AblationGrid,
    shared: &TrainConfig,
    train_data: &LabeledSet,
    val_data: &LabeledSet,
    seeds: &[u64],
    progress: &(dyn Fn(&AblationRow, &std::result::Result<SeedOutcome, String>) + Sync),
) -> Result<Vec<AblationResult>> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    for row in &grid.rows {
        row.apply(shared).validate()?;
    }
    let jobs: Vec<(usize, u64)> = (0..grid.rows.len())
        .flat_map(|r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let runs: Vec<std::result::Result<SeedOutcome, String>> = jobs
        .par_iter()
        .map(|&(r, seed)| {
            let mut cfg = grid.rows[r].apply(shared);
            cfg.seed = seed;
            let out = train(&cfg, train_data, val_data)
                .map(|rec| SeedOutcome::from_record(seed, &rec))
                .map_err(|e| e.to_string());
            progress(&grid.rows[r], &out);
            out
        })
        .collect();
    let mut runs = runs.into_iter();
    let results = grid
        .rows
        .iter()
        .map(|&row| AblationResult {
            row,
            outcomes: runs.by_ref().take(seeds.len()).collect(),
        })
        .collect();
    Ok(order_rows(results))
}

/// Baseline first, full model last, everything else by ascending median
/// macro F1 (rows without any successful run go after the scored ones).
pub fn order_rows(mut results: Vec<AblationResult>) -> Vec<AblationResult> {
    let rank = |r: &AblationResult| {
        if r.row.is_baseline() {
            0
        } else if r.row.is_full() {
            2
        } else {
            1
        }
    };
    results.sort_by(|a, b| {
        rank(a).cmp(&rank(b)).then_with(|| {
            let (x, y) = (a.median_macro(), b.median_macro());
            match (x.is_nan(), y.is_nan()) {
                (false, false) => x.total_cmp(&y),
                (a_nan, b_nan) => a_nan.cmp(&b_nan),
            }
            .then(a.row.model.cmp(&b.row.model))
        })
    });
    results
}

fn mark(on: bool) -> &'static str {
    if on {
        "x"
    } else {
        ""
    }
}

fn num(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.2}")
    }
}

/// One line per row: technique checkmarks, median micro/macro F1 and median
/// per-class F1 over the successful seeds.
pub fn ablation_csv(results: &[AblationResult], classes: usize) -> String {
    let mut out = String::from("model,oversampling,aux_head,separate_heads,sigmoid,micro_f1,macro_f1");
    for c in 1..=classes {
        let _ = write!(out, ",f1_class_{c}");
    }
    out.push_str(",runs,failed\n");
    for r in results {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            r.row.model,
            mark(r.row.oversampling),
            mark(r.row.aux_head),
            mark(r.row.separate_heads),
            mark(r.row.sigmoid),
            num(r.median_micro()),
            num(r.median_macro())
        );
        for c in 1..=classes {
            let _ = write!(out, ",{}", num(r.median_class(c)));
        }
        let _ = writeln!(out, ",{},{}", r.outcomes.len(), r.failures());
    }
    out
}

/// Every individual run of an ablation, including failures.
pub fn ablation_runs_csv(results: &[AblationResult], classes: usize) -> String {
    let mut out = String::from("model,seed,status,best_epoch,best_val_loss,micro_f1,macro_f1");
    for c in 1..=classes {
        let _ = write!(out, ",f1_class_{c}");
    }
    out.push('\n');
    for r in results {
        for o in &r.outcomes {
            match o {
                Ok(s) => {
                    let _ = write!(
                        out,
                        "{},{},ok,{},{:.6},{:.2},{:.2}",
                        r.row.model, s.seed, s.best_epoch, s.best_val_loss, s.micro_f1, s.macro_f1
                    );
                    for v in &s.per_class_f1 {
                        let _ = write!(out, ",{v:.2}");
                    }
                    out.push('\n');
                }
                Err(e) => {
                    let msg = e.replace([',', '\n'], " ");
                    let _ = writeln!(out, "{},,failed: {msg},,,,{}", r.row.model, ",".repeat(classes.saturating_sub(1)));
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct SingleClassOutcome {
    pub class_id: usize,
    pub with_aux: bool,
    pub seed: u64,
    /// Binary F1 (percent) of the selected weights on validation data.
    pub f1: f64,
    pub record: RunRecord,
}

/// Trains a sigmoid network on `class_id` alone; with `with_aux` an
/// auxiliary head learns the union of all classes during training.
pub fn run_single_class(
    class_id: usize,
    with_aux: bool,
    shared: &TrainConfig,
    train_patches: &[Patch],
    val_patches: &[Patch],
    classes: usize,
) -> Result<SingleClassOutcome> {
    let train_data = LabeledSet::single_class(train_patches, classes, class_id)?;
    let val_data = LabeledSet::single_class(val_patches, classes, class_id)?;
    let mut cfg = shared.clone();
    cfg.network.classes = 1;
    cfg.network.use_sigmoid = true;
    cfg.network.use_aux_head = with_aux;
    cfg.network.use_separate_heads = false;
    let record = train(&cfg, &train_data, &val_data)?;
    Ok(SingleClassOutcome {
        class_id,
        with_aux,
        seed: cfg.seed,
        f1: record.report.f1.per_class[0],
        record,
    })
}

/// Per-run rows followed by one `median` row per mode.
pub fn single_class_csv(outcomes: &[SingleClassOutcome]) -> String {
    let mut out = String::from("class_id,aux_head,seed,best_epoch,f1\n");
    for o in outcomes {
        let _ = writeln!(
            out,
            "{},{},{},{},{:.2}",
            o.class_id,
            mark(o.with_aux),
            o.seed,
            o.record.best_epoch,
            o.f1
        );
    }
    for aux in [false, true] {
        let sel: Vec<&SingleClassOutcome> = outcomes.iter().filter(|o| o.with_aux == aux).collect();
        if let Some(first) = sel.first() {
            let m = median(sel.iter().map(|o| o.f1).collect());
            let _ = writeln!(out, "{},{},median,,{}", first.class_id, mark(aux), num(m));
        }
    }
    out
}
