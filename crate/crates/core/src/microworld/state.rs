use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use super::action::Action;
use super::taskfile::{Predicate, Property, TaskSpec, AGENT};
use super::WorldError;
use crate::kb::{EntityId, RelationRegistry, Triple, TripleValue};

const HEAT_PER_TICK: f64 = 10.0;
const BOILING: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Parent {
    Location(String),
    Object(String),
    Agent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Object {
    pub parent: Parent,
    pub properties: BTreeSet<Property>,
    pub temperature: f64,
    pub open: bool,
    pub active: bool,
    pub text: Option<String>,
    pub description: Option<String>,
    pub conductive: bool,
}

impl Object {
    pub fn has(&self, p: Property) -> bool {
        self.properties.contains(&p)
    }

    fn see_through(&self) -> bool {
        !self.has(Property::Openable) || self.open
    }

    fn accepts_items(&self) -> bool {
        self.has(Property::Container) || self.has(Property::Surface)
    }
}

/// Outcome of one transition.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionResult {
    pub observation: String,
    pub facts: Vec<Triple>,
    pub milestone_hits: Vec<usize>,
    pub terminal: bool,
    /// False when the world refused a well-formed action.
    pub accepted: bool,
}

/// Complete world state. Cloning is cheap enough to treat it as a value.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    task: Arc<TaskSpec>,
    registry: Arc<RelationRegistry>,
    objects: BTreeMap<String, Object>,
    agent_at: String,
    focused: Option<String>,
    step: u64,
    hits: BTreeSet<usize>,
}

type Percepts = BTreeMap<(String, &'static str), TripleValue>;

fn fmt_temp(t: f64) -> String {
    format!("{t}")
}

fn refuse(reason: &str) -> Result<Vec<Feedback>, String> {
    Err(reason.to_string())
}

/// Action feedback fact, emitted in addition to state deltas.
struct Feedback {
    subject: String,
    relation: &'static str,
    value: TripleValue,
}

impl WorldState {
    pub(crate) fn initial(
        task: Arc<TaskSpec>,
        registry: Arc<RelationRegistry>,
    ) -> (Self, ActionResult) {
        let objects = task
            .objects
            .iter()
            .map(|d| {
                let parent = if d.at == AGENT {
                    Parent::Agent
                } else if task.is_location(&d.at) {
                    Parent::Location(d.at.clone())
                } else {
                    Parent::Object(d.at.clone())
                };
                let obj = Object {
                    parent,
                    properties: d.properties.clone(),
                    temperature: d.initial_temperature(),
                    open: d.open,
                    active: d.active,
                    text: d.text.clone(),
                    description: d.description.clone(),
                    conductive: d.is_conductive(),
                };
                (d.name.clone(), obj)
            })
            .collect();
        let mut state = Self {
            agent_at: task.start.clone(),
            task,
            registry,
            objects,
            focused: None,
            step: 0,
            hits: BTreeSet::new(),
        };
        let milestone_hits = state.update_milestones();
        let percepts = state.percepts();
        let facts = state.to_triples(percepts, Vec::new());
        let result = ActionResult {
            observation: render_observation(&facts, "You look around."),
            terminal: state.is_complete(),
            facts,
            milestone_hits,
            accepted: true,
        };
        (state, result)
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn task_arc(&self) -> Arc<TaskSpec> {
        Arc::clone(&self.task)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn agent_location(&self) -> &str {
        &self.agent_at
    }

    pub fn object(&self, name: &str) -> Option<&Object> {
        self.objects.get(name)
    }

    pub fn objects(&self) -> impl Iterator<Item = (&String, &Object)> {
        self.objects.iter()
    }

    pub fn inventory(&self) -> Vec<&str> {
        self.objects
            .iter()
            .filter(|(_, o)| o.parent == Parent::Agent)
            .map(|(n, _)| n.as_str())
            .collect()
    }

    pub fn focused(&self) -> Option<&str> {
        self.focused.as_deref()
    }

    pub fn milestones_hit(&self) -> &BTreeSet<usize> {
        &self.hits
    }

    /// Sum of the weights of milestones reached so far.
    pub fn score(&self) -> f64 {
        self.hits
            .iter()
            .map(|&i| self.task.milestones[i].weight)
            .sum::<f64>()
            .clamp(0.0, 100.0)
    }

    pub fn is_complete(&self) -> bool {
        self.hits.len() == self.task.milestones.len()
    }

    pub fn is_visible(&self, name: &str) -> bool {
        let Some(mut obj) = self.objects.get(name) else {
            return false;
        };
        loop {
            match &obj.parent {
                Parent::Agent => return true,
                Parent::Location(l) => return *l == self.agent_at,
                Parent::Object(p) => {
                    let parent = &self.objects[p];
                    if !parent.see_through() {
                        return false;
                    }
                    obj = parent;
                }
            }
        }
    }

    pub fn visible_objects(&self) -> Vec<&str> {
        self.objects
            .keys()
            .filter(|n| self.is_visible(n))
            .map(String::as_str)
            .collect()
    }

    fn is_inside(&self, name: &str, ancestor: &str) -> bool {
        let mut cur = &self.objects[name].parent;
        while let Parent::Object(p) = cur {
            if p == ancestor {
                return true;
            }
            cur = &self.objects[p].parent;
        }
        false
    }

    fn bulb_lit(&self, bulb: &str) -> bool {
        let Parent::Object(circuit) = &self.objects[bulb].parent else {
            return false;
        };
        let c = &self.objects[circuit];
        c.has(Property::Circuit)
            && c.active
            && self.objects.iter().any(|(n, o)| {
                n != bulb && o.conductive && o.parent == Parent::Object(circuit.clone())
            })
    }

    fn thermometer_reading(&self, name: &str) -> f64 {
        self.objects[name].temperature
    }

    /// Actions that only observe, useful as harmless filler.
    pub fn observation_actions(&self) -> Vec<String> {
        let mut out = vec!["look around".to_string(), "wait".to_string()];
        for n in self.visible_objects() {
            out.push(format!("examine {n}"));
            if self.objects[n].has(Property::Readable) {
                out.push(format!("read {n}"));
            }
        }
        out
    }

    fn holds(&self, p: &Predicate) -> bool {
        let obj = |n: &str| self.objects.get(n);
        match p {
            Predicate::Holding { object } => obj(object).is_some_and(|o| o.parent == Parent::Agent),
            Predicate::Inside { object, container } => {
                obj(object).is_some_and(|o| o.parent == Parent::Object(container.clone()))
            }
            Predicate::Active { object } => obj(object).is_some_and(|o| o.active),
            Predicate::AgentAt { location } => self.agent_at == *location,
            Predicate::TemperatureAtLeast { object, value } => {
                obj(object).is_some_and(|o| o.temperature >= *value)
            }
            Predicate::Focused { object } => self.focused.as_deref() == Some(object),
            Predicate::IsOpen { object } => obj(object).is_some_and(|o| o.open),
        }
    }

    fn update_milestones(&mut self) -> Vec<usize> {
        let newly: Vec<usize> = (0..self.task.milestones.len())
            .filter(|i| !self.hits.contains(i) && self.holds(&self.task.milestones[*i].predicate))
            .collect();
        self.hits.extend(&newly);
        newly
    }

    fn state_text(&self, name: &str, o: &Object) -> Option<String> {
        let mut parts = Vec::new();
        if o.has(Property::Openable) {
            parts.push(if o.open { "open" } else { "closed" });
        }
        if o.has(Property::Device) {
            parts.push(if o.active { "on" } else { "off" });
        }
        if o.has(Property::Bulb) {
            parts.push(if self.bulb_lit(name) { "lit" } else { "dark" });
        }
        (!parts.is_empty()).then(|| parts.join(", "))
    }

    /// Everything the agent currently perceives, keyed like the env store.
    fn percepts(&self) -> Percepts {
        let mut p = Percepts::new();
        p.insert(
            (AGENT.to_string(), "located_in"),
            TripleValue::Entity(EntityId::new(&self.agent_at).unwrap()),
        );
        let exits = &self.task.location(&self.agent_at).unwrap().exits;
        p.insert(
            (self.agent_at.clone(), "exits"),
            TripleValue::attribute(exits.join(", ")),
        );
        for name in self.visible_objects() {
            let o = &self.objects[name];
            let parent = match &o.parent {
                Parent::Agent => AGENT,
                Parent::Location(l) | Parent::Object(l) => l.as_str(),
            };
            p.insert(
                (name.to_string(), "located_in"),
                TripleValue::Entity(EntityId::new(parent).unwrap()),
            );
            if let Some(s) = self.state_text(name, o) {
                p.insert((name.to_string(), "state"), TripleValue::attribute(s));
            }
            if o.has(Property::Substance) {
                p.insert(
                    (name.to_string(), "temperature"),
                    TripleValue::measured(fmt_temp(o.temperature), "°C"),
                );
                let phase = if o.temperature >= BOILING { "boiling" } else { "liquid" };
                p.insert((name.to_string(), "phase"), TripleValue::attribute(phase));
            }
        }
        p
    }

    fn to_triples(&self, percepts: Percepts, feedback: Vec<Feedback>) -> Vec<Triple> {
        let task_id = self.task.instance_id();
        let mut facts: BTreeMap<(String, &'static str), TripleValue> = percepts;
        for f in feedback {
            facts.insert((f.subject, f.relation), f.value);
        }
        facts
            .into_iter()
            .map(|((subject, relation), value)| {
                Triple::new(
                    EntityId::new(&subject).unwrap(),
                    self.registry
                        .relation(relation)
                        .expect("microworld relation is registered"),
                    value,
                    self.step,
                    task_id.clone(),
                )
            })
            .collect()
    }

    fn need_visible(&self, name: &str) -> Result<&Object, String> {
        if self.is_visible(name) {
            Ok(&self.objects[name])
        } else {
            Err("there is nothing like that here".into())
        }
    }

    fn apply(&mut self, action: &Action) -> Result<Vec<Feedback>, String> {
        match action {
            Action::Wait | Action::Look => Ok(Vec::new()),
            Action::Go(dest) => {
                let here = self.task.location(&self.agent_at).unwrap();
                if !here.exits.contains(dest) {
                    return refuse("you cannot go there from here");
                }
                self.agent_at = dest.clone();
                Ok(Vec::new())
            }
            Action::Open(x) | Action::Close(x) => {
                let want_open = matches!(action, Action::Open(_));
                let o = self.need_visible(x)?;
                if !o.has(Property::Openable) {
                    return refuse("that cannot be opened or closed");
                }
                if o.open == want_open {
                    return refuse("it is already that way");
                }
                self.objects.get_mut(x).unwrap().open = want_open;
                Ok(Vec::new())
            }
            Action::Activate(x) | Action::Deactivate(x) => {
                let want_on = matches!(action, Action::Activate(_));
                let o = self.need_visible(x)?;
                if !o.has(Property::Device) {
                    return refuse("that is not a device");
                }
                if o.active == want_on {
                    return refuse("it is already that way");
                }
                self.objects.get_mut(x).unwrap().active = want_on;
                Ok(Vec::new())
            }
            Action::Take(x) => {
                let o = self.need_visible(x)?;
                if !o.has(Property::Portable) {
                    return refuse("that cannot be carried");
                }
                if o.parent == Parent::Agent {
                    return refuse("you already have it");
                }
                self.objects.get_mut(x).unwrap().parent = Parent::Agent;
                Ok(Vec::new())
            }
            Action::Put { object, target, .. } => {
                let o = self.need_visible(object)?;
                if !o.has(Property::Portable) {
                    return refuse("that cannot be moved");
                }
                let t = self.need_visible(target)?;
                if object == target || self.is_inside(target, object) {
                    return refuse("that would put something inside itself");
                }
                if !t.accepts_items() || !t.see_through() {
                    return refuse("nothing can be put there");
                }
                let dest = Parent::Object(target.clone());
                if self.objects[object].parent == dest {
                    return refuse("it is already there");
                }
                self.objects.get_mut(object).unwrap().parent = dest;
                Ok(Vec::new())
            }
            Action::Pour { source, target } => {
                self.need_visible(source)?;
                let t = self.need_visible(target)?;
                if source == target {
                    return refuse("you cannot pour something into itself");
                }
                if !t.has(Property::Container) || !t.see_through() {
                    return refuse("nothing can be poured there");
                }
                let src = Parent::Object(source.clone());
                let liquids: Vec<String> = self
                    .objects
                    .iter()
                    .filter(|(_, o)| o.parent == src && o.has(Property::Substance))
                    .map(|(n, _)| n.clone())
                    .collect();
                if liquids.is_empty() {
                    return refuse("there is nothing to pour");
                }
                for n in liquids {
                    self.objects.get_mut(&n).unwrap().parent = Parent::Object(target.clone());
                }
                Ok(Vec::new())
            }
            Action::Examine(x) => {
                let o = self.need_visible(x)?;
                let value = if o.has(Property::Thermometer) {
                    TripleValue::measured(fmt_temp(self.thermometer_reading(x)), "°C")
                } else if let Some(d) = &o.description {
                    TripleValue::attribute(d.clone())
                } else if let Some(s) = self.state_text(x, o) {
                    TripleValue::attribute(s)
                } else {
                    let inside: Vec<&str> = self
                        .objects
                        .iter()
                        .filter(|(_, c)| c.parent == Parent::Object(x.clone()))
                        .map(|(n, _)| n.as_str())
                        .collect();
                    if inside.is_empty() || !o.see_through() {
                        TripleValue::attribute("nothing unusual")
                    } else {
                        TripleValue::attribute(format!("contains {}", inside.join(", ")))
                    }
                };
                Ok(vec![Feedback {
                    subject: x.clone(),
                    relation: "act:examine",
                    value,
                }])
            }
            Action::Read(x) => {
                let o = self.need_visible(x)?;
                match (&o.text, o.has(Property::Readable)) {
                    (Some(text), true) => Ok(vec![Feedback {
                        subject: x.clone(),
                        relation: "act:read",
                        value: TripleValue::attribute(text.clone()),
                    }]),
                    _ => refuse("there is nothing to read"),
                }
            }
            Action::Focus(x) => {
                self.need_visible(x)?;
                self.focused = Some(x.clone());
                Ok(vec![Feedback {
                    subject: x.clone(),
                    relation: "act:focus",
                    value: TripleValue::attribute("focused"),
                }])
            }
        }
    }

    /// One unit of time: active heat sources warm everything they hold.
    fn tick(&mut self) {
        let sources: Vec<String> = self
            .objects
            .iter()
            .filter(|(_, o)| o.has(Property::HeatSource) && o.active)
            .map(|(n, _)| n.clone())
            .collect();
        let heated: BTreeSet<String> = self
            .objects
            .keys()
            .filter(|n| sources.iter().any(|s| self.is_inside(n, s)))
            .cloned()
            .collect();
        for n in &heated {
            let o = self.objects.get_mut(n).unwrap();
            o.temperature = (o.temperature + HEAT_PER_TICK).min(BOILING);
        }
        // A thermometer sitting in a liquid takes on its temperature.
        let readings: Vec<(String, f64)> = self
            .objects
            .iter()
            .filter(|(_, o)| o.has(Property::Thermometer))
            .filter_map(|(n, o)| {
                let Parent::Object(holder) = &o.parent else {
                    return None;
                };
                self.objects
                    .values()
                    .filter(|s| {
                        s.has(Property::Substance) && s.parent == Parent::Object(holder.clone())
                    })
                    .map(|s| s.temperature)
                    .reduce(f64::max)
                    .map(|t| (n.clone(), t))
            })
            .collect();
        for (n, t) in readings {
            self.objects.get_mut(&n).unwrap().temperature = t;
        }
    }

    /// Pure transition. Unparseable text is an error; a refused action leaves
    /// the state untouched and reports `accepted == false`.
    pub fn step(&self, action_text: &str) -> Result<(WorldState, ActionResult), WorldError> {
        let action = Action::parse(action_text)?;
        let before = self.percepts();
        let mut next = self.clone();
        let feedback = match next.apply(&action) {
            Ok(f) => f,
            Err(reason) => {
                let result = ActionResult {
                    observation: format!("You can't do that: {reason}."),
                    facts: Vec::new(),
                    milestone_hits: Vec::new(),
                    terminal: self.is_complete(),
                    accepted: false,
                };
                return Ok((self.clone(), result));
            }
        };
        next.step += 1;
        next.tick();
        let milestone_hits = next.update_milestones();
        let after = next.percepts();
        let shown: Percepts = if action == Action::Look {
            after
        } else {
            after
                .into_iter()
                .filter(|(k, v)| before.get(k) != Some(v))
                .collect()
        };
        let facts = next.to_triples(shown, feedback);
        let fallback = if action == Action::Wait { "Time passes." } else { "Nothing else changes." };
        let result = ActionResult {
            observation: render_observation(&facts, fallback),
            terminal: next.is_complete(),
            facts,
            milestone_hits,
            accepted: true,
        };
        Ok((next, result))
    }
}

fn render_fact(t: &Triple) -> String {
    let s = t.subject.as_str();
    let v = &t.value;
    match t.relation.name.as_str() {
        "located_in" if s == AGENT => format!("You are in the {v}."),
        "located_in" if v.entity().is_some_and(|e| e.as_str() == AGENT) => {
            format!("You are carrying the {s}.")
        }
        "located_in" => format!("The {s} is in the {v}."),
        "exits" => format!("From the {s} you can go to: {v}."),
        "state" => format!("The {s} is {v}."),
        "temperature" => format!("The {s} is at {v}."),
        "phase" => format!("The {s} is {v}."),
        "act:examine" => format!("You examine the {s}: {v}."),
        "act:read" => format!("The {s} reads: \"{v}\"."),
        "act:focus" => format!("You focus on the {s}."),
        other => format!("The {s} {other} {v}."),
    }
}

/// Text rendering of a fact list; the facts are the single source.
pub fn render_observation(facts: &[Triple], empty: &str) -> String {
    if facts.is_empty() {
        return empty.to_string();
    }
    facts.iter().map(render_fact).collect::<Vec<_>>().join(" ")
}
