//! Declarative task files.
//!
//! A task file is TOML with top-level `id`, `goal`, `start`, and arrays of
//! `[[locations]]`, `[[objects]]`, `[[milestones]]`, `[[script]]` and
//! `[[variations]]`. Every string outside `[[variations]]` may contain
//! `{name}` placeholders; each variation table supplies the values. A variation
//! is the whole file with its placeholders filled in.
//!
//! ```toml
//! id = "find"
//! goal = "Find the {animal} and focus on it."
//! start = "hallway"
//!
//! [[locations]]
//! name = "hallway"
//! exits = ["greenhouse"]
//!
//! [[objects]]
//! name = "{animal}"
//! at = "basket"                 # a location, another object, or "agent"
//! properties = ["portable"]
//!
//! [[milestones]]
//! weight = 100
//! predicate = { kind = "focused", object = "{animal}" }
//!
//! [[script]]
//! actions = ["go to greenhouse", "open basket", "focus on {animal}"]
//!
//! [[variations]]
//! animal = "frog"
//! ```

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::WorldError;
use crate::kb::normalize_text;

pub const AGENT: &str = "agent";
const AMBIENT_TEMPERATURE: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    Portable,
    Container,
    Surface,
    Openable,
    Device,
    HeatSource,
    Thermometer,
    Substance,
    Readable,
    Circuit,
    Bulb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    Holding { object: String },
    Inside { object: String, container: String },
    Active { object: String },
    AgentAt { location: String },
    TemperatureAtLeast { object: String, value: f64 },
    Focused { object: String },
    IsOpen { object: String },
}

impl Predicate {
    /// Short imperative description, used to name expert sub-goals.
    pub fn describe(&self) -> String {
        match self {
            Self::Holding { object } => format!("pick up the {object}"),
            Self::Inside { object, container } => format!("get the {object} into the {container}"),
            Self::Active { object } => format!("turn on the {object}"),
            Self::AgentAt { location } => format!("go to the {location}"),
            Self::TemperatureAtLeast { object, value } => {
                format!("heat the {object} to {value} degrees")
            }
            Self::Focused { object } => format!("focus on the {object}"),
            Self::IsOpen { object } => format!("open the {object}"),
        }
    }

    fn names(&self) -> Vec<&str> {
        match self {
            Self::Holding { object }
            | Self::Active { object }
            | Self::TemperatureAtLeast { object, .. }
            | Self::Focused { object }
            | Self::IsOpen { object } => vec![object],
            Self::Inside { object, container } => vec![object, container],
            Self::AgentAt { location } => vec![location],
        }
    }

    fn normalized(self) -> Self {
        let n = |s: String| normalize_text(&s);
        match self {
            Self::Holding { object } => Self::Holding { object: n(object) },
            Self::Inside { object, container } => Self::Inside {
                object: n(object),
                container: n(container),
            },
            Self::Active { object } => Self::Active { object: n(object) },
            Self::AgentAt { location } => Self::AgentAt { location: n(location) },
            Self::TemperatureAtLeast { object, value } => Self::TemperatureAtLeast {
                object: n(object),
                value,
            },
            Self::Focused { object } => Self::Focused { object: n(object) },
            Self::IsOpen { object } => Self::IsOpen { object: n(object) },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationDef {
    pub name: String,
    #[serde(default)]
    pub exits: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectDef {
    pub name: String,
    pub at: String,
    #[serde(default)]
    pub properties: BTreeSet<Property>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub open: bool,
    #[serde(default)]
    pub active: bool,
    #[serde(default)]
    pub text: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    /// `"yes"` or `"no"`; a string so variations can set it.
    #[serde(default)]
    pub conductive: Option<String>,
}

impl ObjectDef {
    pub fn initial_temperature(&self) -> f64 {
        self.temperature.unwrap_or(AMBIENT_TEMPERATURE)
    }

    pub fn is_conductive(&self) -> bool {
        self.conductive.as_deref() == Some("yes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Milestone {
    pub weight: f64,
    pub predicate: Predicate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptSegment {
    pub actions: Vec<String>,
}

/// One fully instantiated task variation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub id: String,
    #[serde(default)]
    pub variation: u32,
    pub goal: String,
    pub start: String,
    pub locations: Vec<LocationDef>,
    pub objects: Vec<ObjectDef>,
    pub milestones: Vec<Milestone>,
    pub script: Vec<ScriptSegment>,
}

impl TaskSpec {
    /// Identifier of this variation, used as the provenance of emitted facts.
    pub fn instance_id(&self) -> String {
        format!("{}:{}", self.id, self.variation)
    }

    pub fn location(&self, name: &str) -> Option<&LocationDef> {
        self.locations.iter().find(|l| l.name == name)
    }

    pub fn is_location(&self, name: &str) -> bool {
        self.location(name).is_some()
    }

    pub fn object(&self, name: &str) -> Option<&ObjectDef> {
        self.objects.iter().find(|o| o.name == name)
    }

    fn normalize(&mut self) {
        let n = |s: &mut String| *s = normalize_text(s);
        n(&mut self.start);
        for l in &mut self.locations {
            n(&mut l.name);
            l.exits.iter_mut().for_each(n);
        }
        for o in &mut self.objects {
            n(&mut o.name);
            n(&mut o.at);
        }
        for m in &mut self.milestones {
            m.predicate = m.predicate.clone().normalized();
        }
    }

    fn validate(&self) -> Result<(), WorldError> {
        let bad = |msg: String| WorldError::InvalidTask {
            task: self.id.clone(),
            message: msg,
        };
        if self.locations.len() < 4 {
            return Err(bad("at least 4 locations are required".into()));
        }
        let mut names = BTreeSet::new();
        for l in &self.locations {
            if l.name.is_empty() || l.name == AGENT || !names.insert(l.name.as_str()) {
                return Err(bad(format!("bad or duplicate location `{}`", l.name)));
            }
        }
        for l in &self.locations {
            for e in &l.exits {
                if !self.is_location(e) {
                    return Err(bad(format!("exit `{e}` of `{}` is not a location", l.name)));
                }
            }
        }
        if !self.is_location(&self.start) {
            return Err(bad(format!("start `{}` is not a location", self.start)));
        }
        let mut seen = BTreeSet::from([self.start.as_str()]);
        let mut queue = VecDeque::from([self.start.as_str()]);
        while let Some(cur) = queue.pop_front() {
            for e in &self.location(cur).unwrap().exits {
                if seen.insert(e) {
                    queue.push_back(e);
                }
            }
        }
        if seen.len() != self.locations.len() {
            return Err(bad("locations are not all reachable from the start".into()));
        }
        for o in &self.objects {
            if o.name.is_empty() || o.name == AGENT || !names.insert(o.name.as_str()) {
                return Err(bad(format!("bad or duplicate object `{}`", o.name)));
            }
            if !o.initial_temperature().is_finite() {
                return Err(bad(format!("object `{}` has a non-finite temperature", o.name)));
            }
            if let Some(c) = &o.conductive {
                if c != "yes" && c != "no" {
                    return Err(bad(format!("conductive must be yes or no, got `{c}`")));
                }
            }
        }
        for o in &self.objects {
            let mut cur = o.at.as_str();
            let mut hops = 0;
            while cur != AGENT && !self.is_location(cur) {
                let parent = self
                    .object(cur)
                    .ok_or_else(|| bad(format!("`{}` is placed in unknown `{cur}`", o.name)))?;
                cur = parent.at.as_str();
                hops += 1;
                if hops > self.objects.len() {
                    return Err(bad(format!("containment cycle through `{}`", o.name)));
                }
            }
        }
        if self.milestones.is_empty() {
            return Err(bad("no milestones".into()));
        }
        let total: f64 = self.milestones.iter().map(|m| m.weight).sum();
        if self.milestones.iter().any(|m| !(m.weight > 0.0)) || (total - 100.0).abs() > 1e-9 {
            return Err(bad(format!("milestone weights must be positive and sum to 100, got {total}")));
        }
        for m in &self.milestones {
            for n in m.predicate.names() {
                if !names.contains(n) {
                    return Err(bad(format!("milestone names unknown `{n}`")));
                }
            }
        }
        if self.script.len() != self.milestones.len() {
            return Err(bad(format!(
                "{} script segments for {} milestones",
                self.script.len(),
                self.milestones.len()
            )));
        }
        if self.script.iter().any(|s| s.actions.is_empty()) {
            return Err(bad("empty script segment".into()));
        }
        Ok(())
    }
}

fn substitute(text: &str, vars: &BTreeMap<String, String>) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let close = after
            .find('}')
            .ok_or_else(|| format!("unclosed placeholder in `{text}`"))?;
        let key = &after[..close];
        let value = vars
            .get(key)
            .ok_or_else(|| format!("no value for `{{{key}}}`"))?;
        out.push_str(value);
        rest = &after[close + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

fn substitute_value(v: &mut toml::Value, vars: &BTreeMap<String, String>) -> Result<(), String> {
    match v {
        toml::Value::String(s) => *s = substitute(s, vars)?,
        toml::Value::Array(items) => {
            for item in items {
                substitute_value(item, vars)?;
            }
        }
        toml::Value::Table(t) => {
            for (_, item) in t.iter_mut() {
                substitute_value(item, vars)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// A parsed task file with its variation tables.
#[derive(Debug, Clone)]
pub struct TaskTemplate {
    pub id: String,
    body: toml::Table,
    variations: Vec<BTreeMap<String, String>>,
}

impl TaskTemplate {
    /// Parses a task file and checks that every variation instantiates.
    pub fn parse(src: &str) -> Result<Self, WorldError> {
        let mut body: toml::Table = toml::from_str(src).map_err(|e| WorldError::InvalidTask {
            task: "<unparsed>".into(),
            message: e.to_string(),
        })?;
        let id = body
            .get("id")
            .and_then(|v| v.as_str())
            .map(str::to_string)
            .ok_or_else(|| WorldError::InvalidTask {
                task: "<unparsed>".into(),
                message: "missing string `id`".into(),
            })?;
        let bad = |message: String| WorldError::InvalidTask {
            task: id.clone(),
            message,
        };
        let variations = match body.remove("variations") {
            None => vec![BTreeMap::new()],
            Some(v) => v
                .try_into::<Vec<BTreeMap<String, String>>>()
                .map_err(|e| bad(format!("variations: {e}")))?,
        };
        if variations.is_empty() {
            return Err(bad("empty variation list".into()));
        }
        let template = Self {
            id,
            body,
            variations,
        };
        for v in 0..template.variation_count() {
            template.instantiate(v as u32)?;
        }
        Ok(template)
    }

    pub fn variation_count(&self) -> usize {
        self.variations.len()
    }

    pub fn instantiate(&self, variation: u32) -> Result<TaskSpec, WorldError> {
        let vars = self
            .variations
            .get(variation as usize)
            .ok_or_else(|| WorldError::UnknownVariation {
                task: self.id.clone(),
                variation,
                count: self.variations.len(),
            })?;
        let bad = |message: String| WorldError::InvalidTask {
            task: format!("{}:{variation}", self.id),
            message,
        };
        let mut body = toml::Value::Table(self.body.clone());
        substitute_value(&mut body, vars).map_err(bad)?;
        if let toml::Value::Table(t) = &mut body {
            t.insert("variation".into(), toml::Value::Integer(variation.into()));
        }
        let mut spec: TaskSpec = body.try_into().map_err(|e| bad(e.to_string()))?;
        spec.normalize();
        spec.validate()?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINI: &str = r#"
id = "mini"
goal = "Pick up the {thing}."
start = "a"

[[locations]]
name = "a"
exits = ["b"]
[[locations]]
name = "b"
exits = ["a", "c"]
[[locations]]
name = "c"
exits = ["b", "d"]
[[locations]]
name = "d"
exits = ["c"]

[[objects]]
name = "{thing}"
at = "{spot}"
properties = ["portable"]

[[milestones]]
weight = 100
predicate = { kind = "holding", object = "{thing}" }

[[script]]
actions = ["go to {spot}", "take {thing}"]

[[variations]]
thing = "Red Ball"
spot = "b"

[[variations]]
thing = "cube"
spot = "c"
"#;

    #[test]
    fn substitutes_per_variation() {
        let t = TaskTemplate::parse(MINI).unwrap();
        assert_eq!(t.variation_count(), 2);
        let v0 = t.instantiate(0).unwrap();
        assert_eq!(v0.objects[0].name, "red ball");
        assert_eq!(v0.objects[0].at, "b");
        assert_eq!(v0.goal, "Pick up the Red Ball.");
        assert_eq!(v0.script[0].actions, ["go to b", "take Red Ball"]);
        let v1 = t.instantiate(1).unwrap();
        assert_eq!(v1.objects[0].at, "c");
        assert_eq!(v1.instance_id(), "mini:1");
        assert!(matches!(
            t.instantiate(2),
            Err(WorldError::UnknownVariation { count: 2, .. })
        ));
    }

    #[test]
    fn substitute_reports_missing_and_unclosed() {
        let vars = BTreeMap::from([("a".to_string(), "x".to_string())]);
        assert_eq!(substitute("{a}-{a}", &vars).unwrap(), "x-x");
        assert!(substitute("{b}", &vars).is_err());
        assert!(substitute("{a", &vars).is_err());
    }

    #[test]
    fn rejects_bad_weights() {
        let src = MINI.replace("weight = 100", "weight = 90");
        assert!(matches!(
            TaskTemplate::parse(&src),
            Err(WorldError::InvalidTask { .. })
        ));
    }

    #[test]
    fn rejects_disconnected_and_unknown_placement() {
        let src = MINI.replace("exits = [\"c\"]", "exits = []").replace(
            "exits = [\"b\", \"d\"]",
            "exits = [\"b\"]",
        );
        assert!(TaskTemplate::parse(&src).is_err());
        let src = MINI.replace("spot = \"c\"", "spot = \"nowhere\"");
        assert!(TaskTemplate::parse(&src).is_err());
    }

    #[test]
    fn rejects_segment_count_mismatch() {
        let src = MINI.replace(
            "[[script]]\nactions = [\"go to {spot}\", \"take {thing}\"]",
            "[[script]]\nactions = [\"go to {spot}\"]\n[[script]]\nactions = [\"take {thing}\"]",
        );
        assert!(TaskTemplate::parse(&src).is_err());
    }
}
