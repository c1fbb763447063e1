//! Condition embeddings with named index groups, and selective perturbation.
//!
//! A condition is a flat vector. Semantic roles are carried by disjoint
//! index sets: `content` (where things are), `motion` (how they move) and
//! `count` (which slots are present). Perturbation adds Gaussian noise only
//! on the selected groups and leaves every other coordinate bit-identical.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Domain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    Content,
    Motion,
    Count,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::Content, Group::Motion, Group::Count];

    pub fn name(self) -> &'static str {
        match self {
            Group::Content => "content",
            Group::Motion => "motion",
            Group::Count => "count",
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "content" => Ok(Group::Content),
            "motion" => Ok(Group::Motion),
            "count" => Ok(Group::Count),
            other => Err(Error::UnknownGroup(other.to_string())),
        }
    }
}

/// Validated group map: sorted, deduplicated, pairwise disjoint, in range.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IndexGroups {
    dim: usize,
    sets: BTreeMap<Group, Vec<usize>>,
}

impl IndexGroups {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, group: Group) -> Option<&[usize]> {
        self.sets.get(&group).map(Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Group, &[usize])> {
        self.sets.iter().map(|(g, v)| (*g, v.as_slice()))
    }

    /// Standard layout for `slots` objects: `[0, 2M)` positions,
    /// `[2M, 4M)` velocities, `[4M, 5M)` presence.
    pub fn slot_layout(slots: usize) -> Self {
        let m = slots;
        let sets = BTreeMap::from([
            (Group::Content, (0..2 * m).collect()),
            (Group::Motion, (2 * m..4 * m).collect()),
            (Group::Count, (4 * m..5 * m).collect()),
        ]);
        Self { dim: 5 * m, sets }
    }
}

/// Validate manifest-declared index groups against an embedding dimension.
pub fn tag_indices(manifest_groups: &BTreeMap<String, Vec<usize>>, dim: usize) -> Result<IndexGroups> {
    let mut owner: BTreeMap<usize, Group> = BTreeMap::new();
    let mut sets = BTreeMap::new();
    for (name, indices) in manifest_groups {
        let group: Group = name.parse()?;
        let mut sorted = indices.clone();
        sorted.sort_unstable();
        sorted.dedup();
        for &index in &sorted {
            if index >= dim {
                return Err(Error::IndexOutOfRange {
                    group: name.clone(),
                    index,
                    dim,
                });
            }
            if let Some(prev) = owner.insert(index, group) {
                return Err(Error::OverlappingGroups {
                    index,
                    first: prev.to_string(),
                    second: group.to_string(),
                });
            }
        }
        sets.insert(group, sorted);
    }
    Ok(IndexGroups { dim, sets })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    values: Vec<f64>,
    groups: IndexGroups,
}

impl ConditionEmbedding {
    pub fn new(values: Vec<f64>, groups: IndexGroups) -> Result<Self> {
        if values.len() != groups.dim() {
            return Err(Error::DimensionMismatch {
                expected: groups.dim(),
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("condition embedding"));
        }
        Ok(Self { values, groups })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn groups(&self) -> &IndexGroups {
        &self.groups
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.groups.clone())
    }

    /// Copy with one group's coordinates set to zero. With the motion group
    /// this is the "at rest" description used as a negative prompt.
    pub fn with_group_zeroed(&self, group: Group) -> Result<Self> {
        let idx = self
            .groups
            .get(group)
            .ok_or_else(|| Error::UnknownGroup(group.to_string()))?;
        let mut values = self.values.clone();
        for &i in idx {
            values[i] = 0.0;
        }
        Ok(Self {
            values,
            groups: self.groups.clone(),
        })
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSpec {
    pub targets: Vec<Group>,
    pub sigma_c: f64,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(target: Group, sigma_c: f64, seed: u64) -> Self {
        Self {
            targets: vec![target],
            sigma_c,
            seed,
        }
    }
}

/// Add `sigma_c * n` on the target groups, `n ~ N(0, I)` drawn at
/// `(spec.seed, step_nonce)`. All other coordinates are copied untouched.
pub fn perturb(c: &ConditionEmbedding, spec: &PerturbationSpec, step_nonce: u64) -> Result<ConditionEmbedding> {
    if !(spec.sigma_c >= 0.0 && spec.sigma_c.is_finite()) {
        return Err(Error::InvalidRange {
            what: "sigma_c",
            detail: format!("must be finite and >= 0, got {}", spec.sigma_c),
        });
    }
    let mut targets = Vec::new();
    for &g in &spec.targets {
        let idx = c.groups.get(g).ok_or_else(|| Error::UnknownGroup(g.to_string()))?;
        targets.extend_from_slice(idx);
    }
    // One draw per embedding coordinate, so the noise at index i is fixed by
    // the address alone and not by which groups are targeted.
    let noise = rng::normal_vec(spec.seed, Domain::Perturbation, step_nonce, c.len());
    let mut values = c.values.clone();
    for i in targets {
        values[i] += spec.sigma_c * noise[i];
    }
    Ok(ConditionEmbedding {
        values,
        groups: c.groups.clone(),
    })
}
