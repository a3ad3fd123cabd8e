//! On-disk layout: `manifest.txt` plus one raw little-endian `f32` image file
//! and one `u8` label file per patch.

use std::fs;
use std::path::Path;

use super::Patch;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
const HEADER: &str = "# roofseg dataset v1";

/// Writes `patches` into `dir` (created if needed).
pub fn save_dataset(dir: &Path, patches: &[Patch], classes: usize) -> Result<()> {
    let size = patches.first().map_or(0, |p| p.size);
    fs::create_dir_all(dir)?;
    let mut manifest = format!("{HEADER}\nsize {size} classes {classes}\n");
    manifest.push_str("# id image labels pixel_counts...\n");
    for p in patches {
        if p.size != size {
            return Err(Error::Dataset(format!("patch {} has size {}, expected {size}", p.id, p.size)));
        }
        if p.max_label() as usize > classes {
            return Err(Error::LabelOutOfRange {
                id: p.id,
                value: p.max_label(),
                classes,
            });
        }
        let image_file = format!("{:06}.img", p.id);
        let label_file = format!("{:06}.lbl", p.id);
        let bytes: Vec<u8> = p.image.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(dir.join(&image_file), bytes)?;
        fs::write(dir.join(&label_file), &p.labels)?;
        let counts: Vec<String> = p.histogram(classes).iter().map(|n| n.to_string()).collect();
        manifest.push_str(&format!("{} {image_file} {label_file} {}\n", p.id, counts.join(" ")));
    }
    fs::write(dir.join(MANIFEST_FILE), manifest)?;
    Ok(())
}

/// Reads a dataset written by [`save_dataset`]; returns the patches and the
/// class count. Recorded pixel counts are checked against the label files.
pub fn load_dataset(dir: &Path) -> Result<(Vec<Patch>, usize)> {
    let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let bad = |line: usize, what: &str| Error::Dataset(format!("manifest line {line}: {what}"));

    let (lineno, header) = lines.next().ok_or_else(|| bad(1, "missing size/classes header"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (size, classes) = match fields.as_slice() {
        ["size", s, "classes", c] => (
            s.parse::<usize>().map_err(|_| bad(lineno, "malformed size"))?,
            c.parse::<usize>().map_err(|_| bad(lineno, "malformed class count"))?,
        ),
        _ => return Err(bad(lineno, "expected `size <S> classes <C>`")),
    };

    let mut patches = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 + classes + 1 {
            return Err(bad(lineno, "expected `id image labels` and one count per label value"));
        }
        let id: u32 = fields[0].parse().map_err(|_| bad(lineno, "malformed id"))?;
        let raw = fs::read(dir.join(fields[1]))?;
        if raw.len() != size * size * 3 * 4 {
            return Err(bad(lineno, "image file has the wrong length"));
        }
        let image = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        let labels = fs::read(dir.join(fields[2]))?;
        let patch = Patch::new(id, size, image, labels)?;
        if let Some(&value) = patch.labels.iter().find(|&&l| l as usize > classes) {
            return Err(Error::LabelOutOfRange { id, value, classes });
        }
        let recorded = fields[3..]
            .iter()
            .map(|f| f.parse::<u64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(lineno, "malformed pixel count"))?;
        if recorded != patch.histogram(classes) {
            return Err(bad(lineno, "pixel counts do not match the label file"));
        }
        patches.push(patch);
    }
    Ok((patches, classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = Patch::new(3, 2, vec![0.0, 0.25, 0.5, 0.75, 1.0, 0.125, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5], vec![0, 1, 2, 0])
            .unwrap();
        save_dataset(dir.path(), std::slice::from_ref(&p), 2).unwrap();
        let manifest = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        assert!(manifest.contains("3 000003.img 000003.lbl 2 1 1\n"));
        let (loaded, classes) = load_dataset(dir.path()).unwrap();
        assert_eq!(classes, 2);
        assert_eq!(loaded, vec![p]);
    }

    #[test]
    fn tampered_labels_detected() {
        let dir = tempfile::tempdir().unwrap();
        let p = Patch::new(0, 2, vec![0.0; 12], vec![0, 1, 0, 0]).unwrap();
        save_dataset(dir.path(), &[p], 1).unwrap();
        fs::write(dir.path().join("000000.lbl"), [1u8, 1, 0, 0]).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }
}
