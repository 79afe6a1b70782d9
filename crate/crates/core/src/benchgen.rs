//! Similarity-controlled labeled/unlabeled splits from a class hierarchy, and
//! synthetic Gaussian class mixtures.
//!
//! Split layout: the first half of the superclasses feeds `l1`/`u1`, the
//! second half `l2`/`u2`. Within each superclass the first
//! `labeled_per_super` subclasses (after a seeded shuffle, or in file order
//! when canonical) become labeled and the next `unlabeled_per_super`
//! unlabeled. `l15` takes half of `l1` and half of `l2`, filled with whole
//! superclass groups first; when a side has an odd number of groups the
//! remainder comes from one more group, cut at the first subclasses.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataio::{EmbeddingMatrix, LabelVector, LabeledDataset};
use crate::error::{Result, TflowError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hierarchy {
    superclasses: Vec<String>,
    children: Vec<Vec<String>>,
}

impl Hierarchy {
    pub const MIN_SUBCLASSES: usize = 3;

    pub fn new(groups: Vec<(String, Vec<String>)>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (name, subs) in &groups {
            if subs.len() < Self::MIN_SUBCLASSES {
                return Err(TflowError::TooFewSubclasses {
                    name: name.clone(),
                    found: subs.len(),
                    required: Self::MIN_SUBCLASSES,
                });
            }
            for s in subs {
                if !seen.insert(s.as_str()) {
                    return Err(TflowError::DuplicateSubclass(s.clone()));
                }
            }
        }
        let (superclasses, children) = groups.into_iter().unzip();
        Ok(Self {
            superclasses,
            children,
        })
    }

    pub fn superclasses(&self) -> &[String] {
        &self.superclasses
    }

    pub fn children(&self, index: usize) -> &[String] {
        &self.children[index]
    }

    pub fn len(&self) -> usize {
        self.superclasses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.superclasses.is_empty()
    }
}

/// Parses `superclass<TAB>subclass` lines. Superclasses keep first-appearance
/// order; subclasses keep file order.
pub fn read_hierarchy<R: Read>(reader: R) -> Result<Hierarchy> {
    let mut groups: Vec<(String, Vec<String>)> = Vec::new();
    for (n, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 2 || fields.iter().any(|f| f.trim().is_empty()) {
            return Err(TflowError::MalformedRow {
                line: n + 1,
                expected: 2,
                found: fields.len(),
            });
        }
        let (sup, sub) = (fields[0].trim(), fields[1].trim());
        match groups.iter_mut().find(|(name, _)| name == sup) {
            Some((_, subs)) => subs.push(sub.to_owned()),
            None => groups.push((sup.to_owned(), vec![sub.to_owned()])),
        }
    }
    if groups.is_empty() {
        return Err(TflowError::EmptyFile);
    }
    Hierarchy::new(groups)
}

pub fn load_hierarchy(path: impl AsRef<Path>) -> Result<Hierarchy> {
    read_hierarchy(File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub l1: Vec<String>,
    pub l2: Vec<String>,
    pub l15: Vec<String>,
    pub u1: Vec<String>,
    pub u2: Vec<String>,
    pub per_super_labeled: usize,
    pub per_super_unlabeled: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SplitOptions {
    pub seed: u64,
    /// Take subclasses and `l15` groups in hierarchy order instead of shuffling.
    pub canonical: bool,
}

pub fn generate_split(
    h: &Hierarchy,
    labeled_per_super: usize,
    unlabeled_per_super: usize,
    options: SplitOptions,
) -> Result<SplitPlan> {
    if labeled_per_super == 0 || unlabeled_per_super == 0 {
        return Err(TflowError::InvalidConfig(
            "need at least one labeled and one unlabeled subclass per superclass".into(),
        ));
    }
    if h.is_empty() || h.len() % 2 != 0 {
        return Err(TflowError::OddSuperclassCount(h.len()));
    }
    let required = labeled_per_super + unlabeled_per_super;
    for (i, name) in h.superclasses.iter().enumerate() {
        if h.children[i].len() < required {
            return Err(TflowError::TooFewSubclasses {
                name: name.clone(),
                found: h.children[i].len(),
                required,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let half = h.len() / 2;
    // Labeled groups per side, one entry per superclass.
    let mut labeled_groups: [Vec<Vec<String>>; 2] = [Vec::new(), Vec::new()];
    let mut unlabeled: [Vec<String>; 2] = [Vec::new(), Vec::new()];
    for (i, subs) in h.children.iter().enumerate() {
        let side = usize::from(i >= half);
        let mut order = subs.clone();
        if !options.canonical {
            order.shuffle(&mut rng);
        }
        unlabeled[side].extend_from_slice(&order[labeled_per_super..required]);
        order.truncate(labeled_per_super);
        labeled_groups[side].push(order);
    }

    let per_side = half * labeled_per_super / 2;
    let mut l15 = Vec::new();
    for groups in &labeled_groups {
        let mut picks: Vec<usize> = (0..groups.len()).collect();
        if !options.canonical {
            picks.shuffle(&mut rng);
        }
        let mut taken = 0;
        for g in picks {
            if taken == per_side {
                break;
            }
            let n = groups[g].len().min(per_side - taken);
            l15.extend_from_slice(&groups[g][..n]);
            taken += n;
        }
    }

    let [g1, g2] = labeled_groups;
    let [u1, u2] = unlabeled;
    Ok(SplitPlan {
        l1: g1.concat(),
        l2: g2.concat(),
        l15,
        u1,
        u2,
        per_super_labeled: labeled_per_super,
        per_super_unlabeled: unlabeled_per_super,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    L1,
    L2,
    L15,
    U1,
    U2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Similarity {
    High,
    Medium,
    Low,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pairing {
    pub labeled: Role,
    pub unlabeled: Role,
    pub similarity: Similarity,
}

/// The six labeled/unlabeled pairings: same side is high, opposite side is
/// low, the mixed `l15` set is medium.
pub fn pairings(_plan: &SplitPlan) -> Vec<Pairing> {
    use Role::*;
    use Similarity::*;
    [
        (L1, U1, High),
        (L2, U2, High),
        (L15, U1, Medium),
        (L15, U2, Medium),
        (L2, U1, Low),
        (L1, U2, Low),
    ]
    .into_iter()
    .map(|(labeled, unlabeled, similarity)| Pairing {
        labeled,
        unlabeled,
        similarity,
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Centers {
    /// Regular simplex with edge length `separation`, vertex 0 at the origin.
    Simplex { separation: f64 },
    /// One row per class.
    Explicit(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub classes: usize,
    pub dim: usize,
    pub per_class: usize,
    pub centers: Centers,
    pub variance: f64,
    pub seed: u64,
}

/// Vertices of a regular simplex with the given edge length, built one
/// vertex at a time above the centroid of the previous ones.
pub fn simplex_centers(classes: usize, dim: usize, separation: f64) -> Result<Vec<Vec<f64>>> {
    if classes > dim + 1 {
        return Err(TflowError::InvalidConfig(format!(
            "{classes} simplex centers need dimension >= {}",
            classes - 1
        )));
    }
    let mut centers = vec![vec![0.0; dim]];
    for i in 1..classes {
        let n = i as f64;
        let mut v = vec![0.0; dim];
        for c in &centers {
            v.iter_mut().zip(c).for_each(|(a, b)| *a += b / n);
        }
        v[i - 1] = separation * ((n + 1.0) / (2.0 * n)).sqrt();
        centers.push(v);
    }
    Ok(centers)
}

/// Isotropic Gaussian classes, rows grouped by class, deterministic per seed.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<LabeledDataset> {
    if spec.classes == 0 || spec.dim == 0 {
        return Err(TflowError::InvalidConfig("classes and dim must be positive".into()));
    }
    if spec.per_class < 2 {
        return Err(TflowError::InvalidConfig("per_class must be at least 2".into()));
    }
    if !(spec.variance.is_finite() && spec.variance > 0.0) {
        return Err(TflowError::InvalidConfig("variance must be positive".into()));
    }
    let centers = match &spec.centers {
        Centers::Simplex { separation } => simplex_centers(spec.classes, spec.dim, *separation)?,
        Centers::Explicit(rows) => {
            if rows.len() != spec.classes || rows.iter().any(|r| r.len() != spec.dim) {
                return Err(TflowError::ShapeMismatch {
                    left: (rows.len(), rows.first().map_or(0, Vec::len)),
                    right: (spec.classes, spec.dim),
                });
            }
            rows.clone()
        }
    };
    let sd = spec.variance.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let m = spec.classes * spec.per_class;
    let mut data = Vec::with_capacity(m * spec.dim);
    let mut labels = Vec::with_capacity(m);
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.per_class {
            for mu in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push(mu + sd * z);
            }
            labels.push(c);
        }
    }
    LabeledDataset::with_numeric_names(
        EmbeddingMatrix::new(m, spec.dim, data)?,
        LabelVector::new(labels)?,
    )
}
