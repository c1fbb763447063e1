//! Scenario manifests: JSON schema, defaults, validation and overrides.
//!
//! Schema (version 1). Every field except `policies` and `seeds` is
//! optional.
//!
//! ```json
//! {
//!   "schema_version": 1,
//!   "name": "motion",
//!   "schedule": { "steps": 50, "beta_start": 1e-4, "beta_end": 0.02 },
//!   "world": { "slots": 3, "frames": 8, "sigma_data": 0.05,
//!              "prototypes": { "seed": 0, "static_count": 8, "dynamic_count": 2,
//!                              "static_velocity_std": 0.05, "dynamic_velocity_std": 1.0 } },
//!   "groups": { "content": [0, 1, 2, 3, 4, 5], "motion": [6, 7, 8, 9, 10, 11], "count": [12, 13, 14] },
//!   "conditions": [ { "positions": [-1, 0.5, 0, -0.5, 1, 0.5], "velocities": [0, 0, 0, 0, 0, 0],
//!                     "presence": [1, 1, 1] },
//!                   { "values": [ ... 15 numbers ... ] } ],
//!   "threshold": 0.5,
//!   "policies": [
//!     { "kind": "NegPromptCFG", "id": "Baseline", "omega_std": 6 },
//!     { "kind": "MotionCFG", "omega": 6, "tau": [0.1, 0.2], "sigma_c": [0.1, 0.5],
//!       "targets": ["motion"], "rule": "anchored", "anchor": "negative" }
//!   ],
//!   "seeds": { "count": 200, "base": 0 },
//!   "outputs": { "dir": "out", "formats": ["csv", "svg"], "charts": [ { "x": "tau", "y": "flow" } ] }
//! }
//! ```
//!
//! `omega`, `omega_std`, `tau` and `sigma_c` accept a number or a list; a
//! policy expands to the cartesian product of its lists. Seed `i` uses
//! condition `i % conditions.len()`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embedding::{tag_indices, ConditionEmbedding, Group, IndexGroups};
use crate::error::{Error, Result};
use crate::guidance::{Anchor, CadsParams, GuidanceKind, GuidancePolicy, MotionRule};
use crate::metrics::DEFAULT_THRESHOLD;
use crate::schedule::{NoiseSchedule, ScheduleParams};
use crate::toymodel::{WorldModel, WorldParams};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_OMEGA_STD: f64 = 6.0;
pub const DEFAULT_OMEGA: f64 = 6.0;
pub const DEFAULT_TAU: f64 = 0.2;
pub const DEFAULT_SIGMA_C: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Axis {
    One(f64),
    Many(Vec<f64>),
}

impl Axis {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Axis::One(v) => vec![*v],
            Axis::Many(v) => v.clone(),
        }
    }
}

/// Which embedding a policy's guidance pushes away from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorSpec {
    /// Unconditional prediction.
    Null,
    /// The run's condition with its motion block zeroed.
    Negative,
    /// An explicit embedding.
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub kind: GuidanceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega_std: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<Axis>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_c: Option<Axis>,
    #[serde(default)]
    pub delay_steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interval: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cads: Option<CadsParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anchor: Option<AnchorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<Vec<Group>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<MotionRule>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positions: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocities: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub presence: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedSpec {
    pub count: usize,
    #[serde(default)]
    pub base: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChartSpec {
    pub x: String,
    pub y: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
    /// Empty means one flow chart and one alignment chart per swept axis.
    #[serde(default)]
    pub charts: Vec<ChartSpec>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Csv, Format::Svg]
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            dir: None,
            formats: default_formats(),
            charts: Vec::new(),
        }
    }
}

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioManifest {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub world: WorldParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<BTreeMap<String, Vec<usize>>>,
    #[serde(default)]
    pub conditions: Vec<ConditionSpec>,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    pub policies: Vec<PolicySpec>,
    pub seeds: SeedSpec,
    #[serde(default)]
    pub outputs: OutputSpec,
}

/// One point of a policy's hyperparameter grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPoint {
    /// Policy with `anchor` left as [`Anchor::Null`]; see `anchor`.
    pub policy: GuidancePolicy,
    pub anchor: AnchorSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrid {
    pub id: String,
    pub points: Vec<GridPoint>,
}

/// A validated manifest turned into model objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub schedule: NoiseSchedule,
    pub world: WorldModel,
    pub groups: IndexGroups,
    pub conditions: Vec<ConditionEmbedding>,
    pub policies: Vec<PolicyGrid>,
    pub seeds: Vec<u64>,
    pub threshold: f64,
}

impl Scenario {
    pub fn condition_for(&self, seed_index: usize) -> &ConditionEmbedding {
        &self.conditions[seed_index % self.conditions.len()]
    }

    pub fn resolve_anchor(&self, spec: &AnchorSpec, condition: &ConditionEmbedding) -> Result<Anchor> {
        Ok(match spec {
            AnchorSpec::Null => Anchor::Null,
            AnchorSpec::Negative => Anchor::Negative(condition.with_group_zeroed(Group::Motion)?),
            AnchorSpec::Values(v) => Anchor::Negative(condition.with_values(v.clone())?),
        })
    }
}

/// The built-in condition: slots spread along x, alternating in y, at rest
/// and all present.
pub fn default_condition(slots: usize) -> Vec<f64> {
    let mut c = vec![0.0; 5 * slots];
    for s in 0..slots {
        c[2 * s] = s as f64 - (slots as f64 - 1.0) / 2.0;
        c[2 * s + 1] = if s % 2 == 0 { 0.5 } else { -0.5 };
        c[4 * slots + s] = 1.0;
    }
    c
}

fn classify(err: serde_json::Error, path: String, source: &str) -> Error {
    use serde_json::error::Category;
    match err.classify() {
        Category::Data => Error::validation(
            if path.is_empty() || path == "." {
                "<root>".into()
            } else {
                path
            },
            err.to_string(),
        ),
        _ => Error::Parse {
            path: source.to_string(),
            message: err.to_string(),
        },
    }
}

impl ScenarioManifest {
    /// Deserializes, fills defaults and validates.
    pub fn from_value(value: Value) -> Result<Self> {
        let mut m: ScenarioManifest = serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            classify(e.into_inner(), path, "<manifest>")
        })?;
        m.fill_defaults();
        m.resolve()?;
        Ok(m)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_json_with_overrides(text, &[])
    }

    pub fn from_json_with_overrides(text: &str, overrides: &[String]) -> Result<Self> {
        let mut value: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<manifest>".into(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        Self::from_value(value)
    }

    fn fill_defaults(&mut self) {
        let m = self.world.slots;
        if self.groups.is_none() {
            let layout = IndexGroups::slot_layout(m);
            self.groups = Some(layout.iter().map(|(g, ix)| (g.to_string(), ix.to_vec())).collect());
        }
        if self.conditions.is_empty() {
            self.conditions.push(ConditionSpec {
                values: Some(default_condition(m)),
                ..Default::default()
            });
        }
        let steps = self.schedule.steps;
        for p in &mut self.policies {
            if p.id.is_none() {
                p.id = Some(p.kind.name().to_string());
            }
            if p.omega_std.is_none() {
                p.omega_std = Some(Axis::One(DEFAULT_OMEGA_STD));
            }
            match p.kind {
                GuidanceKind::MotionCfg => {
                    p.omega.get_or_insert(Axis::One(DEFAULT_OMEGA));
                    p.tau.get_or_insert(Axis::One(DEFAULT_TAU));
                    p.sigma_c.get_or_insert(Axis::One(DEFAULT_SIGMA_C));
                    p.targets.get_or_insert_with(|| vec![Group::Motion]);
                    p.rule.get_or_insert(MotionRule::Anchored);
                    p.anchor.get_or_insert(AnchorSpec::Negative);
                }
                GuidanceKind::NegPromptCfg => {
                    p.anchor.get_or_insert(AnchorSpec::Negative);
                }
                GuidanceKind::IntervalGuidance => {
                    p.interval
                        .get_or_insert((steps.div_ceil(5).max(1), (4 * steps / 5).max(1)));
                    p.anchor.get_or_insert(AnchorSpec::Null);
                }
                GuidanceKind::Cads => {
                    p.cads.get_or_insert_with(CadsParams::default);
                    p.anchor.get_or_insert(AnchorSpec::Null);
                }
                GuidanceKind::StandardCfg => {
                    p.anchor.get_or_insert(AnchorSpec::Null);
                }
            }
        }
    }

    /// Builds model objects; every failure names the offending field.
    pub fn resolve(&self) -> Result<Scenario> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::validation(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            ));
        }
        let schedule = self
            .schedule
            .build()
            .map_err(|e| Error::validation("schedule", e.to_string()))?;
        let world = WorldModel::new(&self.world).map_err(|e| Error::validation("world", e.to_string()))?;
        let dim = world.embedding_dim();
        let groups = match &self.groups {
            Some(g) => tag_indices(g, dim).map_err(|e| Error::validation("groups", e.to_string()))?,
            None => IndexGroups::slot_layout(self.world.slots),
        };
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::validation(
                "threshold",
                format!("must lie in (0, 1), got {}", self.threshold),
            ));
        }
        if self.seeds.count < 1 {
            return Err(Error::validation("seeds.count", "must be at least 1"));
        }
        let conditions = self.resolve_conditions(&groups)?;
        if self.policies.is_empty() {
            return Err(Error::validation("policies", "at least one policy is required"));
        }
        let mut seen = BTreeSet::new();
        let mut policies = Vec::with_capacity(self.policies.len());
        for (i, spec) in self.policies.iter().enumerate() {
            let grid = resolve_policy(spec, i, schedule.steps(), &groups, dim)?;
            if !seen.insert(grid.id.clone()) {
                return Err(Error::validation(
                    format!("policies[{i}].id"),
                    format!("duplicate policy id `{}`", grid.id),
                ));
            }
            policies.push(grid);
        }
        for (k, f) in self.outputs.charts.iter().enumerate() {
            super::output::ChartX::parse(&f.x)
                .map_err(|e| Error::validation(format!("outputs.charts[{k}].x"), e.to_string()))?;
            super::output::ChartY::parse(&f.y)
                .map_err(|e| Error::validation(format!("outputs.charts[{k}].y"), e.to_string()))?;
        }
        let seeds = (0..self.seeds.count as u64)
            .map(|i| self.seeds.base.wrapping_add(i))
            .collect();
        Ok(Scenario {
            schedule,
            world,
            groups,
            conditions,
            policies,
            seeds,
            threshold: self.threshold,
        })
    }

    fn resolve_conditions(&self, groups: &IndexGroups) -> Result<Vec<ConditionEmbedding>> {
        let m = self.world.slots;
        let mut out = Vec::with_capacity(self.conditions.len());
        for (i, spec) in self.conditions.iter().enumerate() {
            let path = |field: &str| format!("conditions[{i}].{field}");
            let check = |field: &str, v: &Vec<f64>, len: usize| -> Result<()> {
                if v.len() != len {
                    return Err(Error::validation(
                        path(field),
                        format!("expected {len} values, got {}", v.len()),
                    ));
                }
                Ok(())
            };
            let values = match spec {
                ConditionSpec {
                    values: Some(v),
                    positions: None,
                    velocities: None,
                    presence: None,
                } => {
                    check("values", v, 5 * m)?;
                    v.clone()
                }
                ConditionSpec { values: Some(_), .. } => {
                    return Err(Error::validation(
                        path("values"),
                        "`values` excludes the per-block fields",
                    ));
                }
                ConditionSpec {
                    positions,
                    velocities,
                    presence,
                    ..
                } => {
                    let mut c = default_condition(m);
                    if let Some(p) = positions {
                        check("positions", p, 2 * m)?;
                        c[..2 * m].copy_from_slice(p);
                    }
                    if let Some(v) = velocities {
                        check("velocities", v, 2 * m)?;
                        c[2 * m..4 * m].copy_from_slice(v);
                    }
                    if let Some(p) = presence {
                        check("presence", p, m)?;
                        c[4 * m..].copy_from_slice(p);
                    }
                    c
                }
            };
            let emb = ConditionEmbedding::new(values, groups.clone())
                .map_err(|e| Error::validation(format!("conditions[{i}]"), e.to_string()))?;
            out.push(emb);
        }
        Ok(out)
    }
}

fn resolve_policy(spec: &PolicySpec, i: usize, steps: usize, groups: &IndexGroups, dim: usize) -> Result<PolicyGrid> {
    let path = |field: &str| format!("policies[{i}].{field}");
    let id = spec.id.clone().unwrap_or_else(|| spec.kind.name().to_string());
    if id.is_empty() {
        return Err(Error::validation(path("id"), "must not be empty"));
    }
    let motion = spec.kind == GuidanceKind::MotionCfg;
    let only_motion = [
        ("omega", spec.omega.is_some()),
        ("tau", spec.tau.is_some()),
        ("sigma_c", spec.sigma_c.is_some()),
        ("targets", spec.targets.is_some()),
        ("rule", spec.rule.is_some()),
    ];
    for (field, present) in only_motion {
        if present && !motion {
            return Err(Error::validation(
                path(field),
                format!("only valid for MotionCFG, not {}", spec.kind.name()),
            ));
        }
    }
    if spec.interval.is_some() && spec.kind != GuidanceKind::IntervalGuidance {
        return Err(Error::validation(path("interval"), "only valid for IntervalGuidance"));
    }
    if spec.cads.is_some() && spec.kind != GuidanceKind::Cads {
        return Err(Error::validation(path("cads"), "only valid for CADS"));
    }
    let axis = |field: &str, a: &Option<Axis>, default: f64| -> Result<Vec<f64>> {
        let v = a.as_ref().map_or(vec![default], Axis::values);
        if v.is_empty() {
            return Err(Error::validation(path(field), "sweep axis must not be empty"));
        }
        Ok(v)
    };
    let omega_std = axis("omega_std", &spec.omega_std, DEFAULT_OMEGA_STD)?;
    let (omega, tau, sigma_c) = if motion {
        (
            axis("omega", &spec.omega, DEFAULT_OMEGA)?,
            axis("tau", &spec.tau, DEFAULT_TAU)?,
            axis("sigma_c", &spec.sigma_c, DEFAULT_SIGMA_C)?,
        )
    } else {
        (vec![0.0], vec![0.0], vec![0.0])
    };
    let targets = spec.targets.clone().unwrap_or_else(|| vec![Group::Motion]);
    if targets.is_empty() {
        return Err(Error::validation(path("targets"), "must name at least one group"));
    }
    for (k, g) in targets.iter().enumerate() {
        if groups.get(*g).is_none() {
            return Err(Error::validation(
                format!("policies[{i}].targets[{k}]"),
                format!("group `{g}` is not defined"),
            ));
        }
    }
    let anchor = spec.anchor.clone().unwrap_or(AnchorSpec::Null);
    match (&anchor, spec.kind) {
        (AnchorSpec::Null, GuidanceKind::NegPromptCfg) => {
            return Err(Error::validation(
                path("anchor"),
                "negative prompting needs a non-null anchor",
            ));
        }
        (AnchorSpec::Values(v), _) if v.len() != dim => {
            return Err(Error::validation(
                path("anchor"),
                format!("expected {dim} values, got {}", v.len()),
            ));
        }
        (AnchorSpec::Values(v), _) if v.iter().any(|x| !x.is_finite()) => {
            return Err(Error::validation(path("anchor"), "values must be finite"));
        }
        (AnchorSpec::Negative, _) if groups.get(Group::Motion).is_none() => {
            return Err(Error::validation(path("anchor"), "`negative` needs a motion group"));
        }
        _ => {}
    }

    let mut points = Vec::new();
    for &ws in &omega_std {
        for &w in &omega {
            for &ta in &tau {
                for &sc in &sigma_c {
                    let policy = GuidancePolicy {
                        kind: spec.kind,
                        omega_std: ws,
                        omega: w,
                        tau: ta,
                        sigma_c: sc,
                        delay_steps: spec.delay_steps,
                        interval: spec.interval,
                        cads: spec.cads,
                        anchor: Anchor::Null,
                        targets: targets.clone(),
                        rule: spec.rule.unwrap_or_default(),
                    };
                    // The anchor is checked above; validate the rest here.
                    let check = GuidancePolicy {
                        kind: if spec.kind == GuidanceKind::NegPromptCfg {
                            GuidanceKind::StandardCfg
                        } else {
                            spec.kind
                        },
                        ..policy.clone()
                    };
                    check.validate(steps).map_err(|e| match e {
                        Error::InvalidRange { what, detail } => Error::validation(path(what), detail),
                        other => Error::validation(format!("policies[{i}]"), other.to_string()),
                    })?;
                    points.push(GridPoint {
                        policy,
                        anchor: anchor.clone(),
                    });
                }
            }
        }
    }
    Ok(PolicyGrid { id, points })
}

/// Reads, overrides, fills defaults and validates a manifest file.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<ScenarioManifest> {
    load_manifest_with_overrides(path, &[])
}

pub fn load_manifest_with_overrides(path: impl AsRef<Path>, overrides: &[String]) -> Result<ScenarioManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut value: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    ScenarioManifest::from_value(value)
}

/// Applies `key.path=value` to a raw manifest. The value is read as JSON
/// when it parses, otherwise as a string. Numeric segments index arrays.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::validation(assignment, "override must look like key=value"))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::validation(key, "override key has an empty segment"));
    }
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let segments: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (depth, seg) in segments.iter().enumerate() {
        let last = depth + 1 == segments.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(seg.to_string(), value);
                    return Ok(());
                }
                map.entry(seg.to_string())
                    .or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = seg
                    .parse()
                    .map_err(|_| Error::validation(key, format!("`{seg}` is not an array index")))?;
                let len = items.len();
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::validation(key, format!("index {idx} out of range for length {len}")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => {
                let prefix = segments[..depth].join(".");
                return Err(Error::validation(key, format!("`{prefix}` is not an object or array")));
            }
        };
    }
    unreachable!("loop returns on the last segment")
}
