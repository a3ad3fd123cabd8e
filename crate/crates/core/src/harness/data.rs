use std::collections::{HashMap, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::TrainConfig;
use crate::dataset::{build_class_index, ClassIndex, Patch};
use crate::error::{Error, Result};
use crate::sampler::{build_plan, verify_plan, SchedulerConfig};

/// Patches with their class count and the target of the auxiliary head.
#[derive(Clone, Debug)]
pub struct LabeledSet {
    pub patches: Vec<Patch>,
    pub classes: usize,
    /// Explicit auxiliary targets; when absent the union of all foreground
    /// labels is used.
    aux: Option<Vec<Vec<bool>>>,
}

impl LabeledSet {
    pub fn new(patches: Vec<Patch>, classes: usize) -> Result<Self> {
        for p in &patches {
            let m = p.max_label();
            if m as usize > classes {
                return Err(Error::LabelOutOfRange {
                    id: p.id,
                    value: m,
                    classes,
                });
            }
        }
        Ok(Self {
            patches,
            classes,
            aux: None,
        })
    }

    /// Binary task for `class_id`: its pixels become class 1, all other
    /// labels background. The auxiliary target stays the union of every
    /// foreground class of the original labels.
    pub fn single_class(patches: &[Patch], classes: usize, class_id: usize) -> Result<Self> {
        if class_id == 0 || class_id > classes {
            return Err(Error::Config(format!("class id must lie in 1..={classes}, got {class_id}")));
        }
        let mut out = Vec::with_capacity(patches.len());
        let mut aux = Vec::with_capacity(patches.len());
        for p in patches {
            if p.max_label() as usize > classes {
                return Err(Error::LabelOutOfRange {
                    id: p.id,
                    value: p.max_label(),
                    classes,
                });
            }
            aux.push(p.labels.iter().map(|&l| l > 0).collect());
            let mut q = p.clone();
            for l in &mut q.labels {
                *l = u8::from(*l as usize == class_id);
            }
            out.push(q);
        }
        Ok(Self {
            patches: out,
            classes: 1,
            aux: Some(aux),
        })
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    pub fn aux_mask(&self, i: usize) -> Vec<bool> {
        match &self.aux {
            Some(masks) => masks[i].clone(),
            None => self.patches[i].labels.iter().map(|&l| l > 0).collect(),
        }
    }

    pub fn class_index(&self) -> Result<ClassIndex> {
        build_class_index(&self.patches, self.classes)
    }
}

enum Source {
    Plan {
        index: ClassIndex,
        position: HashMap<u32, usize>,
        config: SchedulerConfig,
        round: u64,
        first_len: usize,
    },
    Shuffled {
        count: usize,
        rng: ChaCha8Rng,
        pending: VecDeque<usize>,
    },
}

/// Endless sequence of training batches (as positions into a
/// [`LabeledSet`]).
///
/// With oversampling, successive scheduler plans are concatenated, each
/// built with a fresh seed and checked for coverage. Otherwise the data is
/// reshuffled on every pass and cut into consecutive batches.
pub struct BatchStream {
    source: Source,
    batch_size: usize,
    queue: VecDeque<Vec<usize>>,
}

fn round_seed(seed: u64, round: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ round.wrapping_add(1).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

impl BatchStream {
    pub fn new(data: &LabeledSet, config: &TrainConfig) -> Result<Self> {
        let source = if config.oversampling {
            let index = data.class_index()?;
            let position = data.patches.iter().enumerate().map(|(i, p)| (p.id, i)).collect::<HashMap<_, _>>();
            if position.len() != data.len() {
                return Err(Error::Dataset("patch ids must be unique".into()));
            }
            let config = SchedulerConfig::new(config.batch_size, data.classes, config.seed);
            Source::Plan {
                index,
                position,
                config,
                round: 0,
                first_len: 0,
            }
        } else {
            Source::Shuffled {
                count: data.len(),
                rng: ChaCha8Rng::seed_from_u64(round_seed(config.seed, u64::MAX)),
                pending: VecDeque::new(),
            }
        };
        let mut s = Self {
            source,
            batch_size: config.batch_size,
            queue: VecDeque::new(),
        };
        s.refill()?;
        Ok(s)
    }

    /// Batches in one pass over the data.
    pub fn pass_length(&self) -> usize {
        match &self.source {
            Source::Plan { first_len, .. } => *first_len,
            Source::Shuffled { count, .. } => count.div_ceil(self.batch_size),
        }
    }

    fn refill(&mut self) -> Result<()> {
        match &mut self.source {
            Source::Plan {
                index,
                position,
                config,
                round,
                first_len,
            } => {
                let cfg = SchedulerConfig {
                    seed: round_seed(config.seed, *round),
                    ..*config
                };
                let plan = build_plan(index, &cfg)?;
                let report = verify_plan(&plan, index, &cfg);
                if let Some(v) = report.violations.first() {
                    return Err(Error::Dataset(format!("scheduler produced an invalid plan: {v}")));
                }
                if *round == 0 {
                    *first_len = plan.len();
                }
                *round += 1;
                for b in plan.batches {
                    self.queue.push_back(b.iter().map(|s| position[&s.id]).collect());
                }
            }
            Source::Shuffled { count, rng, pending } => {
                while pending.len() < self.batch_size {
                    let mut order: Vec<usize> = (0..*count).collect();
                    order.shuffle(rng);
                    pending.extend(order);
                }
                while pending.len() >= self.batch_size {
                    self.queue.push_back(pending.drain(..self.batch_size).collect());
                }
            }
        }
        Ok(())
    }

    pub fn next_batch(&mut self) -> Result<Vec<usize>> {
        if self.queue.is_empty() {
            self.refill()?;
        }
        Ok(self.queue.pop_front().expect("refill produced batches"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    fn patch(id: u32, label: u8) -> Patch {
        Patch::new(id, 2, vec![0.0; 12], vec![label, 0, 0, 0]).unwrap()
    }

    fn set() -> LabeledSet {
        let ps = (0..10).map(|i| patch(i, (i % 3) as u8)).collect();
        LabeledSet::new(ps, 2).unwrap()
    }

    #[test]
    fn shuffled_pass_covers_everything() {
        let mut cfg = TrainConfig::desk(NetworkConfig::desk(2));
        cfg.batch_size = 5;
        let mut s = BatchStream::new(&set(), &cfg).unwrap();
        assert_eq!(s.pass_length(), 2);
        let mut seen: Vec<usize> = (0..2).flat_map(|_| s.next_batch().unwrap()).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn oversampled_batches_cover_classes() {
        let mut cfg = TrainConfig::desk(NetworkConfig::desk(2));
        cfg.batch_size = 4;
        cfg.oversampling = true;
        let data = set();
        let mut s = BatchStream::new(&data, &cfg).unwrap();
        for _ in 0..20 {
            let b = s.next_batch().unwrap();
            assert_eq!(b.len(), 4);
            for c in 1..=2u8 {
                assert!(b.iter().any(|&i| data.patches[i].labels.contains(&c)));
            }
        }
    }

    #[test]
    fn single_class_keeps_union_as_aux() {
        let data = LabeledSet::single_class(&set().patches, 2, 2).unwrap();
        assert_eq!(data.classes, 1);
        assert_eq!(data.patches[1].labels[0], 0);
        assert_eq!(data.patches[2].labels[0], 1);
        assert!(data.aux_mask(1)[0]);
        assert!(LabeledSet::single_class(&set().patches, 2, 3).is_err());
    }
}
