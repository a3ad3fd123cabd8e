//! Brute-force references for the scheduler and the metrics.

use rand::Rng;
use roofseg::dataset::ClassIndex;
use roofseg::sampler::SchedulerConfig;

/// Minimal batch count by exhaustive search: enumerate every way of filling
/// the class slots of one batch with distinct samples, then find the fewest
/// such batches whose union covers the foreground.
pub fn brute_force_min(index: &ClassIndex, config: &SchedulerConfig) -> Option<usize> {
    let fg = index.foreground_ids();
    let pos = |id: u32| fg.iter().position(|&x| x == id).unwrap();
    let c = config.classes;
    let mut masks = Vec::new();
    fn rec(c: usize, class: usize, index: &ClassIndex, used: u32, pos: &dyn Fn(u32) -> usize, out: &mut Vec<u32>) {
        if class > c {
            out.push(used);
            return;
        }
        for &id in index.set(class) {
            let bit = 1u32 << pos(id);
            if used & bit == 0 {
                rec(c, class + 1, index, used | bit, pos, out);
            }
        }
    }
    rec(c, 1, index, 0, &pos, &mut masks);
    masks.sort_unstable();
    masks.dedup();
    if masks.is_empty() {
        return None;
    }
    let full = if fg.is_empty() { 0 } else { (1u32 << fg.len()) - 1 };
    // Breadth-first search over covered-sample masks.
    let mut dist = vec![usize::MAX; 1 << fg.len()];
    let mut frontier = vec![0u32];
    dist[0] = 0;
    let mut cover = None;
    while !frontier.is_empty() {
        let mut next = Vec::new();
        for m in frontier {
            if m == full {
                cover = Some(dist[m as usize]);
                break;
            }
            for &b in &masks {
                let n = m | b;
                if dist[n as usize] == usize::MAX {
                    dist[n as usize] = dist[m as usize] + 1;
                    next.push(n);
                }
            }
        }
        if cover.is_some() {
            break;
        }
        frontier = next;
    }
    let cover = cover?.max(1);
    let fillers = index.background().len().div_ceil(config.batch_size - c);
    Some(cover.max(fillers))
}

pub fn random_instance(rng: &mut impl Rng) -> (ClassIndex, SchedulerConfig) {
    let n = rng.gen_range(1..=12u32);
    let c = rng.gen_range(1..=3usize);
    let b = rng.gen_range(c + 1..=6);
    let mut sets = vec![Vec::new(); c + 1];
    for id in 0..n {
        let mut any = false;
        // Background-only with probability about one third.
        if rng.gen_bool(0.66) {
            for set in sets.iter_mut().skip(1) {
                if rng.gen_bool(0.45) {
                    set.push(id);
                    any = true;
                }
            }
        }
        if !any {
            sets[0].push(id);
        }
    }
    // Make sure every class is non-empty.
    for class in 1..=c {
        if sets[class].is_empty() {
            let id = rng.gen_range(0..n);
            sets[0].retain(|&x| x != id);
            sets[class].push(id);
        }
    }
    (ClassIndex::from_sets(sets), SchedulerConfig::new(b, c, rng.gen()))
}

/// F1 per class by walking the pixels directly.
pub fn oracle_f1(pred: &[u8], truth: &[u8], class: u8) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p == class, t == class) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    if tp + fp + fn_ == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

pub fn oracle_micro(pred: &[u8], truth: &[u8], classes: u8) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
    for c in 1..=classes {
        for (&p, &t) in pred.iter().zip(truth) {
            match (p == c, t == c) {
                (true, true) => tp += 1.0,
                (true, false) => fp += 1.0,
                (false, true) => fn_ += 1.0,
                _ => {}
            }
        }
    }
    if tp + fp + fn_ == 0.0 {
        0.0
    } else {
        100.0 * 2.0 * tp / (2.0 * tp + fp + fn_)
    }
}

pub fn random_pair(rng: &mut impl Rng) -> (Vec<u8>, Vec<u8>, usize) {
    let classes = rng.gen_range(1..=5usize);
    let n = rng.gen_range(1..200);
    let truth = (0..n).map(|_| rng.gen_range(0..=classes as u8)).collect();
    let pred = (0..n).map(|_| rng.gen_range(0..=classes as u8)).collect();
    (pred, truth, classes)
}

