//! Image-retrieval localization against a database of posed descriptor sets.

use std::fs;
use std::path::Path;

use geoloss_core::pose::Pose;
use serde::{Deserialize, Serialize};

use crate::sift::{Descriptor, DESCRIPTOR_LEN};
use crate::FeatureError;

pub const DEFAULT_RATIO: f64 = 0.8;
pub const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, PartialEq)]
pub struct DbEntry {
    pub name: String,
    pub descriptors: Vec<Descriptor>,
    pub pose: Pose,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PoseDatabase {
    pub entries: Vec<DbEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct IndexEntry {
    name: String,
    descriptors: String,
    pose: Pose,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Index {
    entries: Vec<IndexEntry>,
}

/// `u32` count, `u32` dimension, then `count·dim` `f32`, all little-endian.
pub fn descriptors_to_bytes(ds: &[Descriptor]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + ds.len() * DESCRIPTOR_LEN * 4);
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    out.extend_from_slice(&(DESCRIPTOR_LEN as u32).to_le_bytes());
    for d in ds {
        for v in &d.0 {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn descriptors_from_bytes(bytes: &[u8]) -> Result<Vec<Descriptor>, FeatureError> {
    let word = |i: usize| -> Result<u32, FeatureError> {
        bytes
            .get(i..i + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
            .ok_or_else(|| FeatureError::Format("truncated descriptor header".into()))
    };
    let (count, dim) = (word(0)? as usize, word(4)? as usize);
    if dim != DESCRIPTOR_LEN {
        return Err(FeatureError::Format(format!("descriptor dimension {dim}, expected {DESCRIPTOR_LEN}")));
    }
    let body = &bytes[8..];
    if body.len() != count * dim * 4 {
        return Err(FeatureError::Format(format!("expected {} payload bytes, found {}", count * dim * 4, body.len())));
    }
    Ok(body
        .chunks_exact(dim * 4)
        .map(|c| Descriptor(c.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().expect("four bytes"))).collect()))
        .collect())
}

/// Nearest and second-nearest distances from `q` into `set`, with the index
/// of the nearest. Ties keep the lower index.
pub fn nearest_two(q: &Descriptor, set: &[Descriptor]) -> Option<(usize, f64, f64)> {
    let mut best: Option<(usize, f64)> = None;
    let mut second = f64::INFINITY;
    for (i, d) in set.iter().enumerate() {
        let dist = q.distance(d);
        match best {
            Some((_, b)) if dist >= b => second = second.min(dist),
            Some((_, b)) => {
                second = b;
                best = Some((i, dist));
            }
            None => best = Some((i, dist)),
        }
    }
    best.map(|(i, d)| (i, d, second))
}

/// Query descriptors passing the ratio test against `set`. With a single
/// candidate there is no runner-up and the match is accepted.
pub fn count_matches(query: &[Descriptor], set: &[Descriptor], ratio: f64) -> usize {
    query
        .iter()
        .filter(|q| matches!(nearest_two(q, set), Some((_, d1, d2)) if d1 < ratio * d2))
        .count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub index: usize,
    pub pose: Pose,
    pub matches: usize,
}

/// Pose of the database image with the most ratio-test matches; ties go to
/// the lowest index.
pub fn localize_by_matching(query: &[Descriptor], db: &PoseDatabase, ratio: f64) -> Result<Localization, FeatureError> {
    if db.entries.is_empty() {
        return Err(FeatureError::EmptyDatabase);
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(FeatureError::InvalidArgument(format!("ratio must lie in (0, 1], got {ratio}")));
    }
    let mut best: Option<(usize, usize)> = None;
    for (i, e) in db.entries.iter().enumerate() {
        let m = count_matches(query, &e.descriptors, ratio);
        if m > 0 && best.is_none_or(|(_, bm)| m > bm) {
            best = Some((i, m));
        }
    }
    let (index, matches) = best.ok_or(FeatureError::NoMatch)?;
    Ok(Localization {
        index,
        pose: db.entries[index].pose,
        matches,
    })
}

impl PoseDatabase {
    pub fn push(&mut self, name: impl Into<String>, descriptors: Vec<Descriptor>, pose: Pose) {
        self.entries.push(DbEntry {
            name: name.into(),
            descriptors,
            pose,
        });
    }

    /// Writes `index.json` plus one `<name>.desc` per entry into `dir`.
    pub fn save(&self, dir: &Path) -> Result<(), FeatureError> {
        fs::create_dir_all(dir)?;
        let mut index = Index { entries: Vec::new() };
        for e in &self.entries {
            let file = format!("{}.desc", e.name);
            fs::write(dir.join(&file), descriptors_to_bytes(&e.descriptors))?;
            index.entries.push(IndexEntry {
                name: e.name.clone(),
                descriptors: file,
                pose: e.pose,
            });
        }
        fs::write(dir.join(INDEX_FILE), serde_json::to_string_pretty(&index)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<PoseDatabase, FeatureError> {
        let index: Index = serde_json::from_str(&fs::read_to_string(dir.join(INDEX_FILE))?)?;
        let mut db = PoseDatabase::default();
        for e in index.entries {
            let ds = descriptors_from_bytes(&fs::read(dir.join(&e.descriptors))?)?;
            db.push(e.name, ds, e.pose);
        }
        Ok(db)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(i: usize) -> Descriptor {
        let mut raw = vec![0.0; DESCRIPTOR_LEN];
        raw[i % DESCRIPTOR_LEN] = 1.0;
        Descriptor::from_raw(&raw).unwrap()
    }

    #[test]
    fn binary_round_trip() {
        let ds = vec![unit(0), unit(5)];
        let bytes = descriptors_to_bytes(&ds);
        assert_eq!(bytes.len(), 8 + 2 * 128 * 4);
        assert_eq!(descriptors_from_bytes(&bytes).unwrap(), ds);
        assert!(descriptors_from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn empty_database_is_an_error() {
        assert!(matches!(localize_by_matching(&[unit(0)], &PoseDatabase::default(), 0.8), Err(FeatureError::EmptyDatabase)));
    }

    #[test]
    fn ties_go_to_the_lowest_index() {
        let mut db = PoseDatabase::default();
        db.push("a", vec![unit(1), unit(2)], Pose::identity());
        db.push("b", vec![unit(1), unit(2)], Pose::identity());
        let l = localize_by_matching(&[unit(1)], &db, 0.8).unwrap();
        assert_eq!((l.index, l.matches), (0, 1));
    }
}
