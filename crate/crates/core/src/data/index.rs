//! Directory indexing for `root/<subject>/<condition>-<seq>/<view>/<frame>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preprocess::{frame_files, load_sequence};
use super::protocol::{Protocol, Split, SubjectRole};
use crate::error::{GaitError, Result};
use crate::model::{SequenceMeta, SilhouetteSequence};
use crate::parallel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub meta: SequenceMeta,
    pub path: PathBuf,
    pub split: Split,
}

/// Problems found while indexing; the affected directories are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexIssue {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub protocol: Protocol,
    pub entries: Vec<IndexEntry>,
    pub issues: Vec<IndexIssue>,
}

fn sorted_dirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let read = std::fs::read_dir(dir).map_err(|e| GaitError::io(dir, e))?;
    let mut out = Vec::new();
    for item in read {
        let item = item.map_err(|e| GaitError::io(dir, e))?;
        let path = item.path();
        if path.is_dir() {
            out.push((item.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

fn parse_condition_seq(name: &str) -> Option<(String, u32)> {
    let (cond, seq) = name.rsplit_once('-')?;
    if cond.is_empty() {
        return None;
    }
    Some((cond.to_ascii_lowercase(), seq.parse().ok()?))
}

/// Walks the dataset tree and assigns every sequence a split.
pub fn index_dataset(root: &Path, protocol: &Protocol) -> Result<DatasetIndex> {
    protocol.validate()?;
    if !root.is_dir() {
        return Err(GaitError::Dataset {
            path: root.to_path_buf(),
            reason: "not a directory".into(),
        });
    }
    let mut issues = Vec::new();
    let subjects = sorted_dirs(root)?;
    if subjects.is_empty() {
        return Err(GaitError::Dataset {
            path: root.to_path_buf(),
            reason: "no subject directories".into(),
        });
    }
    let mut entries = Vec::new();
    let mut seen: BTreeMap<SequenceMeta, PathBuf> = BTreeMap::new();
    for (rank, (subject, subject_dir)) in subjects.iter().enumerate() {
        let role = protocol.role_of_rank(rank);
        for (name, seq_dir) in sorted_dirs(subject_dir)? {
            let Some((condition, seq)) = parse_condition_seq(&name) else {
                issues.push(IndexIssue {
                    path: seq_dir,
                    reason: "expected <condition>-<seq>".into(),
                });
                continue;
            };
            for (view_name, view_dir) in sorted_dirs(&seq_dir)? {
                let Ok(view) = view_name.parse::<u32>() else {
                    issues.push(IndexIssue {
                        path: view_dir,
                        reason: "view directory is not a number".into(),
                    });
                    continue;
                };
                match frame_files(&view_dir) {
                    Ok(files) if !files.is_empty() => {}
                    Ok(_) => {
                        issues.push(IndexIssue {
                            path: view_dir,
                            reason: "no frame files".into(),
                        });
                        continue;
                    }
                    Err(e) => {
                        issues.push(IndexIssue {
                            path: view_dir,
                            reason: e.to_string(),
                        });
                        continue;
                    }
                }
                let meta = SequenceMeta::labeled(subject, &condition, seq, view);
                if let Some(prev) = seen.insert(meta.clone(), view_dir.clone()) {
                    issues.push(IndexIssue {
                        path: view_dir,
                        reason: format!("duplicate of {}", prev.display()),
                    });
                    continue;
                }
                let split = protocol.split_of(role, &meta);
                entries.push(IndexEntry {
                    meta,
                    path: view_dir,
                    split,
                });
            }
        }
    }
    for issue in &issues {
        log::warn!("skipping {}: {}", issue.path.display(), issue.reason);
    }
    let index = DatasetIndex {
        root: root.to_path_buf(),
        protocol: protocol.clone(),
        entries,
        issues,
    };
    index.check_splits()?;
    Ok(index)
}

impl DatasetIndex {
    fn check_splits(&self) -> Result<()> {
        let empty = |what: String| {
            Err(GaitError::Dataset {
                path: self.root.clone(),
                reason: format!("the {what} split is empty"),
            })
        };
        if self.protocol.has_role(SubjectRole::Train) && self.select(&Split::Train).is_empty() {
            return empty("train".into());
        }
        if self.protocol.has_role(SubjectRole::Test) {
            if self.select(&Split::Gallery).is_empty() {
                return empty("gallery".into());
            }
            for p in &self.protocol.probes {
                if self.select(&Split::Probe(p.name.clone())).is_empty() {
                    return empty(format!("probe:{}", p.name));
                }
            }
        }
        Ok(())
    }

    pub fn select(&self, split: &Split) -> Vec<&IndexEntry> {
        self.entries.iter().filter(|e| &e.split == split).collect()
    }

    /// Every gallery and probe entry (the held-out test sequences).
    pub fn test_entries(&self) -> Vec<&IndexEntry> {
        self.entries
            .iter()
            .filter(|e| matches!(e.split, Split::Gallery | Split::Probe(_)))
            .collect()
    }

    pub fn subjects_with(&self, split: &Split) -> Vec<String> {
        let mut s: Vec<String> = self
            .select(split)
            .iter()
            .filter_map(|e| e.meta.subject.clone())
            .collect();
        s.dedup();
        s
    }
}

/// Loads the listed entries in order; labels of unlabeled entries are kept
/// in their metadata but carry no meaning downstream.
pub fn load_entries(entries: &[&IndexEntry]) -> Result<Vec<SilhouetteSequence>> {
    parallel::try_map(entries, |e| load_sequence(e))
}
