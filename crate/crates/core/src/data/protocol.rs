//! Split protocols: which subjects train, which are held out, and how the
//! held-out sequences divide into gallery and probe sets.

use serde::{Deserialize, Serialize};

use crate::error::{GaitError, Result};
use crate::model::SequenceMeta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubjectRole {
    Train,
    Test,
    /// Labels ignored; used only as adjustment data.
    Unlabeled,
}

/// A run of consecutive subjects (in sorted id order) sharing a role.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectGroup {
    pub role: SubjectRole,
    pub count: usize,
}

/// Sequences of one condition with the listed sequence numbers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeqSelector {
    pub condition: String,
    pub seqs: Vec<u32>,
}

impl SeqSelector {
    pub fn new(condition: &str, seqs: &[u32]) -> Self {
        SeqSelector {
            condition: condition.to_string(),
            seqs: seqs.to_vec(),
        }
    }

    pub fn matches(&self, meta: &SequenceMeta) -> bool {
        meta.condition
            .as_deref()
            .is_some_and(|c| c.eq_ignore_ascii_case(&self.condition))
            && meta.seq.is_some_and(|s| self.seqs.contains(&s))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    pub name: String,
    pub select: Vec<SeqSelector>,
}

/// How the gallery is restricted for each evaluation cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GalleryViews {
    /// One cell per (probe view, gallery view) pair.
    PerView,
    /// A single cell per probe view holding every gallery view except the
    /// probe's own.
    AllOther,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub name: String,
    pub subjects: Vec<SubjectGroup>,
    pub gallery: Vec<SeqSelector>,
    pub probes: Vec<ProbeSet>,
    pub gallery_views: GalleryViews,
}

/// Role of one indexed sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Gallery,
    Probe(String),
    Unlabeled,
    /// Held-out sequence matching neither gallery nor any probe set, or a
    /// subject beyond the protocol's groups.
    Unused,
}

impl Split {
    /// Parses `train`, `gallery`, `probe:<name>` or `unlabeled`.
    pub fn parse(s: &str) -> Result<Split> {
        match s {
            "train" => Ok(Split::Train),
            "gallery" => Ok(Split::Gallery),
            "unlabeled" => Ok(Split::Unlabeled),
            "unused" => Ok(Split::Unused),
            _ => match s.strip_prefix("probe:") {
                Some(name) if !name.is_empty() => Ok(Split::Probe(name.to_string())),
                _ => Err(GaitError::Config(format!(
                    "unknown split `{s}` (expected train, gallery, probe:<name> or unlabeled)"
                ))),
            },
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Gallery => write!(f, "gallery"),
            Split::Probe(n) => write!(f, "probe:{n}"),
            Split::Unlabeled => write!(f, "unlabeled"),
            Split::Unused => write!(f, "unused"),
        }
    }
}

fn casia_like(name: &str, subjects: Vec<SubjectGroup>) -> Protocol {
    Protocol {
        name: name.to_string(),
        subjects,
        gallery: vec![SeqSelector::new("nm", &[1, 2, 3, 4])],
        probes: vec![
            ProbeSet {
                name: "nm".into(),
                select: vec![SeqSelector::new("nm", &[5, 6])],
            },
            ProbeSet {
                name: "bg".into(),
                select: vec![SeqSelector::new("bg", &[1, 2])],
            },
            ProbeSet {
                name: "cl".into(),
                select: vec![SeqSelector::new("cl", &[1, 2])],
            },
        ],
        gallery_views: GalleryViews::PerView,
    }
}

fn group(role: SubjectRole, count: usize) -> SubjectGroup {
    SubjectGroup { role, count }
}

impl Protocol {
    /// 74 training subjects, 50 test subjects; NM#1-4 gallery, probes
    /// NM#5-6, BG#1-2, CL#1-2, view-to-view evaluation.
    pub fn casia_b() -> Self {
        casia_like(
            "casia-b",
            vec![group(SubjectRole::Train, 74), group(SubjectRole::Test, 50)],
        )
    }

    /// 350 training subjects, 150 test subjects, sequence 01 gallery and 00
    /// probe, gallery drawn from all other views. Sequences are stored as
    /// condition `nm`.
    pub fn mini_oumvlp() -> Self {
        Protocol {
            name: "mini-oumvlp".into(),
            subjects: vec![
                group(SubjectRole::Train, 350),
                group(SubjectRole::Test, 150),
            ],
            gallery: vec![SeqSelector::new("nm", &[1])],
            probes: vec![ProbeSet {
                name: "nm".into(),
                select: vec![SeqSelector::new("nm", &[0])],
            }],
            gallery_views: GalleryViews::AllOther,
        }
    }

    /// Cross-dataset variant: the first 350 subjects serve as unlabeled
    /// adjustment data for a model trained elsewhere.
    pub fn mini_oumvlp_cross() -> Self {
        Protocol {
            name: "mini-oumvlp-cross".into(),
            subjects: vec![
                group(SubjectRole::Unlabeled, 350),
                group(SubjectRole::Test, 150),
            ],
            ..Protocol::mini_oumvlp()
        }
    }

    /// CASIA-B style splits over a synthetic population: `train` then `test`
    /// subjects, the remainder unlabeled.
    pub fn synthetic(train: usize, test: usize, unlabeled: usize) -> Self {
        let mut groups = vec![
            group(SubjectRole::Train, train),
            group(SubjectRole::Test, test),
        ];
        if unlabeled > 0 {
            groups.push(group(SubjectRole::Unlabeled, unlabeled));
        }
        casia_like("synthetic", groups)
    }

    pub fn preset(name: &str) -> Option<Protocol> {
        match name {
            "casia-b" => Some(Protocol::casia_b()),
            "mini-oumvlp" => Some(Protocol::mini_oumvlp()),
            "mini-oumvlp-cross" => Some(Protocol::mini_oumvlp_cross()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.subjects.iter().all(|g| g.count == 0) {
            return Err(GaitError::Config(format!(
                "protocol `{}` assigns no subjects",
                self.name
            )));
        }
        let mut names: Vec<&str> = self.probes.iter().map(|p| p.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(GaitError::Config(format!(
                "protocol `{}` repeats a probe set name",
                self.name
            )));
        }
        Ok(())
    }

    pub fn has_role(&self, role: SubjectRole) -> bool {
        self.subjects.iter().any(|g| g.role == role && g.count > 0)
    }

    /// Role of the subject at position `rank` in sorted order.
    pub fn role_of_rank(&self, rank: usize) -> Option<SubjectRole> {
        let mut start = 0;
        for g in &self.subjects {
            if rank < start + g.count {
                return Some(g.role);
            }
            start += g.count;
        }
        None
    }

    /// Split of a sequence given its subject's role.
    pub fn split_of(&self, role: Option<SubjectRole>, meta: &SequenceMeta) -> Split {
        match role {
            Some(SubjectRole::Train) => Split::Train,
            Some(SubjectRole::Unlabeled) => Split::Unlabeled,
            None => Split::Unused,
            Some(SubjectRole::Test) => {
                if self.gallery.iter().any(|s| s.matches(meta)) {
                    Split::Gallery
                } else if let Some(p) = self
                    .probes
                    .iter()
                    .find(|p| p.select.iter().any(|s| s.matches(meta)))
                {
                    Split::Probe(p.name.clone())
                } else {
                    Split::Unused
                }
            }
        }
    }
}
