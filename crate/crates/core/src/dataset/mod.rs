//! Patches, per-class sample sets, dihedral augmentation, and the synthetic
//! imbalanced generator.

mod io;
mod synthetic;

pub use io::{load_dataset, save_dataset, MANIFEST_FILE};
pub use synthetic::{generate_synthetic, pixel_counts, GeneratedData, ImbalanceProfile, SyntheticStyle};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Shape4, Tensor4};
use crate::error::{Error, Result};

/// One square sample: an RGB raster in `[0, 1]` and a label map with values
/// in `0..=C` (0 is background).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub id: u32,
    pub size: usize,
    /// `size * size * 3` values, row-major, channels last.
    pub image: Vec<f32>,
    pub labels: Vec<u8>,
}

impl Patch {
    pub fn new(id: u32, size: usize, image: Vec<f32>, labels: Vec<u8>) -> Result<Self> {
        if image.len() != size * size * 3 || labels.len() != size * size {
            return Err(Error::Dataset(format!(
                "patch {id}: expected {size}x{size} image and labels, got {} values and {} labels",
                image.len(),
                labels.len()
            )));
        }
        Ok(Self {
            id,
            size,
            image,
            labels,
        })
    }

    pub fn pixels(&self) -> usize {
        self.size * self.size
    }

    /// Pixel count per label value `0..=classes`.
    pub fn histogram(&self, classes: usize) -> Vec<u64> {
        let mut h = vec![0u64; classes + 1];
        for &l in &self.labels {
            if let Some(slot) = h.get_mut(l as usize) {
                *slot += 1;
            }
        }
        h
    }

    pub fn max_label(&self) -> u8 {
        self.labels.iter().copied().max().unwrap_or(0)
    }
}

/// Stacks patches of one size into an NHWC batch and the flattened labels.
pub fn stack_batch(patches: &[&Patch]) -> Result<(Tensor4<f32>, Vec<u8>)> {
    let first = patches
        .first()
        .ok_or_else(|| Error::Dataset("cannot stack an empty batch".into()))?;
    let size = first.size;
    let mut image = Vec::with_capacity(patches.len() * size * size * 3);
    let mut labels = Vec::with_capacity(patches.len() * size * size);
    for p in patches {
        if p.size != size {
            return Err(Error::Dataset(format!(
                "patch {} is {}x{}, batch is {size}x{size}",
                p.id, p.size, p.size
            )));
        }
        image.extend_from_slice(&p.image);
        labels.extend_from_slice(&p.labels);
    }
    let x = Tensor4::from_vec(Shape4::new(patches.len(), size, size, 3), image)?;
    Ok((x, labels))
}

/// The sample sets `S_0..S_C`: `S_0` holds background-only patches and
/// `S_c` every patch with at least one pixel of class `c`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClassIndex {
    sets: Vec<Vec<u32>>,
}

impl ClassIndex {
    /// Builds the index from raw sets, sorting each one. Intended for tests
    /// and hand-made instances.
    pub fn from_sets(mut sets: Vec<Vec<u32>>) -> Self {
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        if sets.is_empty() {
            sets.push(Vec::new());
        }
        Self { sets }
    }

    pub fn classes(&self) -> usize {
        self.sets.len() - 1
    }

    pub fn set(&self, class: usize) -> &[u32] {
        &self.sets[class]
    }

    pub fn background(&self) -> &[u32] {
        &self.sets[0]
    }

    pub fn sets(&self) -> &[Vec<u32>] {
        &self.sets
    }

    /// Every id present in any set, ascending.
    pub fn all_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.sets.iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Foreground ids (members of some `S_c`, `c >= 1`), ascending.
    pub fn foreground_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.sets[1..].iter().flatten().copied().collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// Classes `c >= 1` whose set contains `id`.
    pub fn classes_of(&self, id: u32) -> Vec<usize> {
        (1..self.sets.len())
            .filter(|&c| self.sets[c].binary_search(&id).is_ok())
            .collect()
    }
}

pub fn build_class_index(patches: &[Patch], classes: usize) -> Result<ClassIndex> {
    let mut sets = vec![Vec::new(); classes + 1];
    let mut order: Vec<&Patch> = patches.iter().collect();
    order.sort_by_key(|p| p.id);
    for p in order {
        let mut present = vec![false; classes + 1];
        for &l in &p.labels {
            if l as usize > classes {
                return Err(Error::LabelOutOfRange {
                    id: p.id,
                    value: l,
                    classes,
                });
            }
            present[l as usize] = true;
        }
        let mut any = false;
        for c in 1..=classes {
            if present[c] {
                sets[c].push(p.id);
                any = true;
            }
        }
        if !any {
            sets[0].push(p.id);
        }
    }
    Ok(ClassIndex { sets })
}

/// Number of elements of the dihedral group of the square.
pub const D4_ORDER: usize = 8;

/// Destination index of every source pixel under dihedral element
/// `element` of a `size x size` grid: elements `0..4` rotate clockwise by
/// `element * 90` degrees, `4..8` flip horizontally first.
pub fn d4_permutation(size: usize, element: usize) -> Result<Vec<usize>> {
    if element >= D4_ORDER {
        return Err(Error::invalid("augment", format!("group element {element} out of range")));
    }
    let s = size;
    let flip = element >= 4;
    let turns = element % 4;
    let mut dst = Vec::with_capacity(s * s);
    for y in 0..s {
        for x in 0..s {
            let (mut ty, mut tx) = (y, if flip { s - 1 - x } else { x });
            for _ in 0..turns {
                (ty, tx) = (tx, s - 1 - ty);
            }
            dst.push(ty * s + tx);
        }
    }
    Ok(dst)
}

/// Moves `values` (`channels` per pixel) along a permutation from
/// [`d4_permutation`].
pub fn permute_pixels<V: Copy + Default>(values: &[V], channels: usize, perm: &[usize]) -> Vec<V> {
    let mut out = vec![V::default(); values.len()];
    for (src, &dst) in perm.iter().enumerate() {
        out[channels * dst..channels * dst + channels]
            .copy_from_slice(&values[channels * src..channels * src + channels]);
    }
    out
}

/// Applies dihedral element `element` (`0` is the identity) to image and
/// labels alike.
pub fn apply_d4(patch: &Patch, element: usize) -> Result<Patch> {
    let s = patch.size;
    if patch.labels.len() != s * s || patch.image.len() != s * s * 3 {
        return Err(Error::invalid("augment", format!("patch {} is not square", patch.id)));
    }
    let perm = d4_permutation(s, element)?;
    Ok(Patch {
        id: patch.id,
        size: s,
        image: permute_pixels(&patch.image, 3, &perm),
        labels: permute_pixels(&patch.labels, 1, &perm),
    })
}

/// Applies a dihedral element drawn uniformly from `seed`.
pub fn augment(patch: &Patch, seed: u64) -> Result<Patch> {
    let element = ChaCha8Rng::seed_from_u64(seed).gen_range(0..D4_ORDER);
    apply_d4(patch, element)
}
