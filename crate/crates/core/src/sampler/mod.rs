//! Oversampling batch scheduler: plans an epoch so that every batch holds at
//! least one sample of each foreground class, every sample appears at least
//! once, and the number of batches is minimal.
//!
//! Each batch reserves one slot per foreground class, filled by a distinct
//! sample of that class; the remaining `B - C` slots take background-only
//! samples. A batch count `T` is feasible iff there is a bipartite multigraph
//! between classes and foreground samples in which each class has degree
//! exactly `T` and each sample a degree in `1..=T`; such a multigraph splits
//! into `T` class-saturating matchings by edge coloring.

mod coloring;
mod flow;

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClassIndex;
use crate::error::{Error, Result};
use flow::BoundedFlow;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub batch_size: usize,
    pub classes: usize,
    pub seed: u64,
}

impl SchedulerConfig {
    pub fn new(batch_size: usize, classes: usize, seed: u64) -> Self {
        Self {
            batch_size,
            classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(Error::Config("scheduler needs at least one foreground class".into()));
        }
        if self.batch_size <= self.classes {
            return Err(Error::Config(format!(
                "batch size {} must exceed the foreground class count {}",
                self.batch_size, self.classes
            )));
        }
        Ok(())
    }

    fn fillers(&self) -> usize {
        self.batch_size - self.classes
    }
}

/// One position of a batch; `class` is set for foreground slots.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Slot {
    pub id: u32,
    pub class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BatchPlan {
    pub batches: Vec<Vec<Slot>>,
    /// True when the dataset had no background-only samples and filler
    /// slots were taken from foreground samples instead.
    pub foreground_fillers: bool,
}

impl BatchPlan {
    pub fn len(&self) -> usize {
        self.batches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    pub fn batch_ids(&self, batch: usize) -> Vec<u32> {
        self.batches[batch].iter().map(|s| s.id).collect()
    }

    /// One batch per line, slots written as `id:class` or `id:-`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for batch in &self.batches {
            let line: Vec<String> = batch
                .iter()
                .map(|s| match s.class {
                    Some(c) => format!("{}:{c}", s.id),
                    None => format!("{}:-", s.id),
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut batches = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let bad = || Error::invalid("plan text", format!("line {}: malformed slot", n + 1));
            let batch = line
                .split_whitespace()
                .map(|tok| {
                    let (id, class) = tok.split_once(':').ok_or_else(bad)?;
                    let id = id.parse().map_err(|_| bad())?;
                    let class = match class {
                        "-" => None,
                        c => Some(c.parse().map_err(|_| bad())?),
                    };
                    Ok(Slot { id, class })
                })
                .collect::<Result<Vec<_>>>()?;
            batches.push(batch);
        }
        Ok(Self {
            batches,
            foreground_fillers: false,
        })
    }
}

/// Foreground samples and their class memberships in compact form.
struct Instance {
    ids: Vec<u32>,
    /// `(class, sample position)` pairs.
    members: Vec<(usize, usize)>,
}

impl Instance {
    fn new(index: &ClassIndex, config: &SchedulerConfig) -> Result<Self> {
        config.validate()?;
        if index.classes() != config.classes {
            return Err(Error::Config(format!(
                "index has {} classes, scheduler configured for {}",
                index.classes(),
                config.classes
            )));
        }
        for c in 1..=config.classes {
            if index.set(c).is_empty() {
                return Err(Error::EmptyClass { class: c });
            }
        }
        let ids = index.foreground_ids();
        let mut members = Vec::new();
        for c in 1..=config.classes {
            for id in index.set(c) {
                let pos = ids.binary_search(id).expect("set member is a foreground id");
                members.push((c, pos));
            }
        }
        Ok(Self { ids, members })
    }

    /// Slot multiplicities per membership for `t` batches, each sample used
    /// between 1 and `cap` times, or `None` if infeasible.
    fn solve(&self, classes: usize, t: usize, cap: usize) -> Option<Vec<i64>> {
        let f = self.ids.len();
        let (source, sink) = (0, classes + f + 1);
        let mut g = BoundedFlow::new(classes + f + 2);
        for c in 1..=classes {
            g.add_edge(source, c, t as i64, t as i64);
        }
        let first = classes;
        for &(c, pos) in &self.members {
            g.add_edge(c, classes + 1 + pos, 0, cap as i64);
        }
        for pos in 0..f {
            g.add_edge(classes + 1 + pos, sink, 1, cap as i64);
        }
        g.solve(source, sink)
            .map(|flows| flows[first..first + self.members.len()].to_vec())
    }

    fn filler_bound(background: usize, config: &SchedulerConfig) -> usize {
        background.div_ceil(config.fillers())
    }
}

/// Smallest number of batches for which a plan satisfying every coverage
/// constraint exists.
pub fn min_batch_count(index: &ClassIndex, config: &SchedulerConfig) -> Result<usize> {
    let inst = Instance::new(index, config)?;
    min_batch_count_for(&inst, index.background().len(), config)
}

fn min_batch_count_for(inst: &Instance, background: usize, config: &SchedulerConfig) -> Result<usize> {
    let c = config.classes;
    let lo_bound = Instance::filler_bound(background, config).max(1);
    let hi_bound = lo_bound.max(inst.ids.len());
    let feasible = |t: usize| inst.solve(c, t, t).is_some();
    if !feasible(hi_bound) {
        return Err(Error::Infeasible);
    }
    let (mut lo, mut hi) = (lo_bound, hi_bound);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    Ok(lo)
}

/// Builds one epoch of `min_batch_count` batches with shuffled batch and
/// slot order.
pub fn build_plan(index: &ClassIndex, config: &SchedulerConfig) -> Result<BatchPlan> {
    let mut inst = Instance::new(index, config)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let c = config.classes;
    let background = index.background();
    let t = min_batch_count_for(&inst, background.len(), config)?;

    // The membership order steers which flow the solver finds; shuffling it
    // spreads repeats across samples instead of favouring low ids.
    inst.members.shuffle(&mut rng);
    let mut lo = 1;
    let mut hi = t;
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if inst.solve(c, t, mid).is_some() {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let flows = inst.solve(c, t, lo).ok_or(Error::Infeasible)?;

    let mut edges = Vec::new();
    for (&(class, pos), &m) in inst.members.iter().zip(&flows) {
        for _ in 0..m {
            edges.push((class - 1, pos));
        }
    }
    let colors = coloring::color_bipartite(c, inst.ids.len(), &edges, t);
    let mut batches: Vec<Vec<Slot>> = vec![Vec::with_capacity(config.batch_size); t];
    for (&(class, pos), &k) in edges.iter().zip(&colors) {
        batches[k].push(Slot {
            id: inst.ids[pos],
            class: Some(class + 1),
        });
    }
    for b in &mut batches {
        b.sort_by_key(|s| s.class);
    }

    let foreground_fillers = background.is_empty();
    let pool: Vec<u32> = if foreground_fillers {
        inst.ids.clone()
    } else {
        background.to_vec()
    };
    let mut order = pool.clone();
    order.shuffle(&mut rng);
    let n = order.len();
    let mut cursor = 0usize;
    for batch in &mut batches {
        for _ in 0..config.fillers() {
            // Prefer an id not yet in this batch; give up after one lap.
            let mut pick = order[cursor % n];
            for step in 0..n {
                let cand = order[(cursor + step) % n];
                if batch.iter().all(|s| s.id != cand) {
                    pick = cand;
                    order.swap(cursor % n, (cursor + step) % n);
                    break;
                }
            }
            cursor += 1;
            batch.push(Slot { id: pick, class: None });
        }
    }

    batches.shuffle(&mut rng);
    for b in &mut batches {
        b.shuffle(&mut rng);
    }
    Ok(BatchPlan {
        batches,
        foreground_fillers,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    BatchSize { batch: usize, len: usize, expected: usize },
    MissingClass { batch: usize, class: usize },
    Unseen { id: u32 },
    SlotClass { batch: usize, id: u32, class: usize },
    DuplicateSlotSample { batch: usize, id: u32 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::BatchSize { batch, len, expected } => {
                write!(f, "batch {batch} has {len} ids, expected {expected}")
            }
            Violation::MissingClass { batch, class } => write!(f, "batch {batch} has no sample of class {class}"),
            Violation::Unseen { id } => write!(f, "sample {id} never appears"),
            Violation::SlotClass { batch, id, class } => {
                write!(f, "batch {batch}: sample {id} fills a class {class} slot without that class")
            }
            Violation::DuplicateSlotSample { batch, id } => {
                write!(f, "batch {batch}: sample {id} fills more than one class slot")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlanReport {
    pub violations: Vec<Violation>,
    /// Appearance count of every id in the index.
    pub appearances: BTreeMap<u32, usize>,
    /// For each class `1..=C` (index `c - 1`): appearances of members of
    /// `S_c` divided by `|S_c|`.
    pub oversampling: Vec<f64>,
}

impl PlanReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks a plan against the coverage rules; violations are collected, not
/// raised.
pub fn verify_plan(plan: &BatchPlan, index: &ClassIndex, config: &SchedulerConfig) -> PlanReport {
    let mut violations = Vec::new();
    let mut appearances: BTreeMap<u32, usize> = index.all_ids().into_iter().map(|id| (id, 0)).collect();
    let classes = index.classes();
    for (b, batch) in plan.batches.iter().enumerate() {
        if batch.len() != config.batch_size {
            violations.push(Violation::BatchSize {
                batch: b,
                len: batch.len(),
                expected: config.batch_size,
            });
        }
        for s in batch {
            *appearances.entry(s.id).or_insert(0) += 1;
        }
        for c in 1..=classes {
            if !batch.iter().any(|s| index.set(c).binary_search(&s.id).is_ok()) {
                violations.push(Violation::MissingClass { batch: b, class: c });
            }
        }
        let mut slot_ids = Vec::new();
        for s in batch {
            let Some(c) = s.class else { continue };
            if c == 0 || c > classes || index.set(c).binary_search(&s.id).is_err() {
                violations.push(Violation::SlotClass {
                    batch: b,
                    id: s.id,
                    class: c,
                });
            }
            if slot_ids.contains(&s.id) {
                violations.push(Violation::DuplicateSlotSample { batch: b, id: s.id });
            }
            slot_ids.push(s.id);
        }
    }
    for (&id, &n) in &appearances {
        if n == 0 {
            violations.push(Violation::Unseen { id });
        }
    }
    let oversampling = (1..=classes)
        .map(|c| {
            let set = index.set(c);
            let seen: usize = set.iter().map(|id| appearances.get(id).copied().unwrap_or(0)).sum();
            if set.is_empty() {
                0.0
            } else {
                seen as f64 / set.len() as f64
            }
        })
        .collect();
    PlanReport {
        violations,
        appearances,
        oversampling,
    }
}
