//! Line templates for the two context channels and their inverses.
//!
//! The observation channel is symbolic: `t=3 | Mary | grab | beer | fridge`.
//! The text channel is templated English: `[t=3] Mary grabs the beer from
//! the fridge.` Both render from and parse back to the same step values.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mind::Utterance;
use crate::world::{display_name, AgentId, Apartment, Pose, PrimitiveAction, WalkTarget};

pub const PLACEHOLDER: &str = "some object";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("observation channel does not name an apartment")]
    MissingScene,
}

/// Scene header carried at the top of the observation channel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub apartment: String,
    pub names: BTreeMap<AgentId, String>,
    pub starts: BTreeMap<AgentId, Pose>,
    pub container_open: BTreeMap<String, bool>,
}

impl Scene {
    pub fn render(&self) -> Vec<String> {
        let mut out = vec![format!("scene | apartment | {}", self.apartment)];
        for (agent, name) in &self.names {
            let pose = &self.starts[agent];
            out.push(format!("scene | agent | {} | {} | {}", agent.0, name, pose.room));
        }
        for (c, open) in &self.container_open {
            out.push(format!("scene | {} | {}", if *open { "open" } else { "closed" }, c));
        }
        out
    }

    pub fn agent_named(&self, name: &str) -> Option<AgentId> {
        self.names.iter().find(|(_, n)| *n == name).map(|(a, _)| *a)
    }

    pub fn name(&self, agent: AgentId) -> &str {
        self.names.get(&agent).map(String::as_str).unwrap_or("someone")
    }
}

/// Action whose object may be hidden behind a placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParsedAction {
    Known(PrimitiveAction),
    /// Grab or Put whose object was not recognized.
    Placeholder { verb: PlaceholderVerb, furniture: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaceholderVerb {
    Grab,
    Put,
}

impl ParsedAction {
    pub fn with_object(&self, object: &str) -> PrimitiveAction {
        match self {
            ParsedAction::Known(a) => a.clone(),
            ParsedAction::Placeholder { verb, furniture } => match verb {
                PlaceholderVerb::Grab => PrimitiveAction::grab(object, furniture.clone()),
                PlaceholderVerb::Put => PrimitiveAction::put(object, furniture.clone()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChannelLine {
    Scene,
    Action { tick: u32, agent: AgentId, action: ParsedAction },
    Utterance { tick: u32, agent: AgentId, utterance: Utterance },
}

pub fn observation_line(tick: u32, name: &str, action: &PrimitiveAction) -> String {
    let body = match action {
        PrimitiveAction::WalkTowards { target } => match target {
            WalkTarget::Furniture(f) => format!("walk_towards | {f}"),
            WalkTarget::Room(r) => format!("walk_into | {r}"),
        },
        PrimitiveAction::Open { container } => format!("open | {container}"),
        PrimitiveAction::Close { container } => format!("close | {container}"),
        PrimitiveAction::Grab { object, from } => format!("grab | {object} | {from}"),
        PrimitiveAction::Put { object, to } => format!("put | {object} | {to}"),
        PrimitiveAction::Noop => "noop".to_string(),
    };
    format!("t={tick} | {name} | {body}")
}

fn prep(apt: &Apartment, furniture: &str) -> &'static str {
    if apt.is_container(furniture) {
        "inside"
    } else {
        "on"
    }
}

pub fn text_action_line(apt: &Apartment, tick: u32, name: &str, action: &PrimitiveAction) -> String {
    let d = display_name;
    let body = match action {
        PrimitiveAction::WalkTowards { target } => match target {
            WalkTarget::Furniture(f) => format!("{name} walks towards the {}.", d(f)),
            WalkTarget::Room(r) => format!("{name} walks into the {}.", d(r)),
        },
        PrimitiveAction::Open { container } => format!("{name} opens the {}.", d(container)),
        PrimitiveAction::Close { container } => format!("{name} closes the {}.", d(container)),
        PrimitiveAction::Grab { object, from } => {
            format!("{name} grabs the {} from the {}.", d(object), d(from))
        }
        PrimitiveAction::Put { object, to } => {
            format!("{name} puts the {} {} the {}.", d(object), prep(apt, to), d(to))
        }
        PrimitiveAction::Noop => format!("{name} waits."),
    };
    format!("[t={tick}] {body}")
}

/// Location phrase such as `inside the fridge in the kitchen`.
pub fn location_phrase(apt: &Apartment, furniture: &str) -> String {
    format!(
        "{} the {} in the {}",
        prep(apt, furniture),
        display_name(furniture),
        display_name(apt.room_of(furniture).unwrap_or("house"))
    )
}

pub fn utterance_line(apt: &Apartment, tick: u32, name: &str, u: &Utterance) -> Option<String> {
    let body = match u {
        Utterance::Silence => return None,
        Utterance::Inquiry { objects } => {
            let things: Vec<String> = objects.iter().map(|o| format!("the {}", display_name(o))).collect();
            let verb = if objects.len() == 1 { "is" } else { "are" };
            format!("Where {verb} {}?", things.join(" and "))
        }
        Utterance::Inform { facts } => facts
            .iter()
            .map(|(o, l)| format!("The {} is {}.", display_name(o), location_phrase(apt, l)))
            .collect::<Vec<_>>()
            .join(" "),
    };
    Some(format!("[t={tick}] {name}: {body}"))
}

/// Display-name lookup for one apartment.
pub struct Lexicon {
    furniture: BTreeMap<String, String>,
    rooms: BTreeMap<String, String>,
    objects: BTreeMap<String, String>,
}

impl Lexicon {
    pub fn new(apt: &Apartment) -> Self {
        let by_display = |ids: Vec<String>| ids.into_iter().map(|i| (display_name(&i), i)).collect();
        Lexicon {
            furniture: by_display(apt.furniture_ids()),
            rooms: by_display(apt.rooms.clone()),
            objects: by_display(apt.object_vocabulary.clone()),
        }
    }

    pub fn furniture(&self, display: &str) -> Option<&str> {
        self.furniture.get(display).map(String::as_str)
    }

    pub fn room(&self, display: &str) -> Option<&str> {
        self.rooms.get(display).map(String::as_str)
    }

    pub fn object(&self, display: &str) -> Option<&str> {
        self.objects.get(display).map(String::as_str)
    }

    /// Object kinds whose display name occurs in `text`.
    pub fn objects_in(&self, text: &str) -> Vec<String> {
        self.objects
            .iter()
            .filter(|(d, _)| contains_word(text, d))
            .map(|(_, id)| id.clone())
            .collect()
    }
}

fn contains_word(text: &str, phrase: &str) -> bool {
    text.match_indices(phrase).any(|(i, _)| {
        let before = text[..i].chars().next_back();
        let after = text[i + phrase.len()..].chars().next();
        !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
    })
}

fn err(line: usize, reason: impl Into<String>) -> ChannelError {
    ChannelError::Parse {
        line,
        reason: reason.into(),
    }
}

/// Parse the scene header out of an observation channel.
pub fn parse_scene(lines: &[String], apartments: &[Apartment]) -> Result<(Scene, Apartment), ChannelError> {
    let mut apartment = None;
    let mut names = BTreeMap::new();
    let mut starts = BTreeMap::new();
    let mut container_open = BTreeMap::new();
    for (i, line) in lines.iter().enumerate() {
        let parts: Vec<&str> = line.split(" | ").collect();
        if parts.first() != Some(&"scene") {
            continue;
        }
        match parts.get(1..) {
            Some(["apartment", id]) => apartment = Some(id.to_string()),
            Some(["agent", n, name, room]) => {
                let agent = AgentId(n.parse().map_err(|_| err(i, "bad agent index"))?);
                names.insert(agent, name.to_string());
                starts.insert(agent, Pose::in_room(*room));
            }
            Some(["open", c]) => {
                container_open.insert(c.to_string(), true);
            }
            Some(["closed", c]) => {
                container_open.insert(c.to_string(), false);
            }
            _ => return Err(err(i, "unrecognized scene line")),
        }
    }
    let id = apartment.ok_or(ChannelError::MissingScene)?;
    let apt = apartments
        .iter()
        .find(|a| a.id == id)
        .cloned()
        .ok_or_else(|| err(0, format!("unknown apartment {id}")))?;
    Ok((
        Scene {
            apartment: id,
            names,
            starts,
            container_open,
        },
        apt,
    ))
}

fn parse_tick(s: &str, prefix: &str, suffix: &str) -> Option<u32> {
    s.strip_prefix(prefix)?.strip_suffix(suffix)?.parse().ok()
}

pub fn parse_observation_line(
    scene: &Scene,
    index: usize,
    line: &str,
) -> Result<ChannelLine, ChannelError> {
    let parts: Vec<&str> = line.split(" | ").collect();
    if parts.first() == Some(&"scene") {
        return Ok(ChannelLine::Scene);
    }
    if parts.len() < 3 {
        return Err(err(index, "too few fields"));
    }
    let tick = parse_tick(parts[0], "t=", "").ok_or_else(|| err(index, "bad tick"))?;
    let agent = scene
        .agent_named(parts[1])
        .ok_or_else(|| err(index, format!("unknown agent {}", parts[1])))?;
    let object = |o: &str, f: &str, verb: PlaceholderVerb| -> ParsedAction {
        if o == PLACEHOLDER {
            ParsedAction::Placeholder {
                verb,
                furniture: f.to_string(),
            }
        } else {
            ParsedAction::Known(match verb {
                PlaceholderVerb::Grab => PrimitiveAction::grab(o, f),
                PlaceholderVerb::Put => PrimitiveAction::put(o, f),
            })
        }
    };
    let action = match &parts[2..] {
        ["walk_towards", f] => ParsedAction::Known(PrimitiveAction::walk_to(*f)),
        ["walk_into", r] => ParsedAction::Known(PrimitiveAction::walk_to_room(*r)),
        ["open", c] => ParsedAction::Known(PrimitiveAction::open(*c)),
        ["close", c] => ParsedAction::Known(PrimitiveAction::close(*c)),
        ["grab", o, f] => object(o, f, PlaceholderVerb::Grab),
        ["put", o, f] => object(o, f, PlaceholderVerb::Put),
        ["noop"] => ParsedAction::Known(PrimitiveAction::Noop),
        _ => return Err(err(index, "unrecognized action")),
    };
    Ok(ChannelLine::Action { tick, agent, action })
}

fn strip_location(lex: &Lexicon, s: &str) -> Option<String> {
    let s = s.strip_prefix("inside the ").or_else(|| s.strip_prefix("on the "))?;
    let (furniture, room) = s.rsplit_once(" in the ")?;
    let id = lex.furniture(furniture)?;
    lex.room(room)?;
    Some(id.to_string())
}

pub fn parse_text_line(
    scene: &Scene,
    lex: &Lexicon,
    index: usize,
    line: &str,
) -> Result<ChannelLine, ChannelError> {
    let (head, rest) = line
        .split_once("] ")
        .ok_or_else(|| err(index, "missing tick prefix"))?;
    let tick = parse_tick(head, "[t=", "").ok_or_else(|| err(index, "bad tick"))?;
    if let Some((name, said)) = rest.split_once(": ") {
        if let Some(agent) = scene.agent_named(name) {
            let utterance = parse_utterance(lex, said).ok_or_else(|| err(index, "unrecognized utterance"))?;
            return Ok(ChannelLine::Utterance { tick, agent, utterance });
        }
    }
    let (name, body) = rest
        .split_once(' ')
        .ok_or_else(|| err(index, "missing subject"))?;
    let agent = scene
        .agent_named(name)
        .ok_or_else(|| err(index, format!("unknown agent {name}")))?;
    let body = body
        .strip_suffix('.')
        .ok_or_else(|| err(index, "missing period"))?;
    let bad = || err(index, format!("unrecognized action sentence: {body}"));
    let furniture = |s: &str| lex.furniture(s).map(str::to_string).ok_or_else(bad);
    let action = if body == "waits" {
        PrimitiveAction::Noop
    } else if let Some(f) = body.strip_prefix("walks towards the ") {
        PrimitiveAction::walk_to(furniture(f)?)
    } else if let Some(r) = body.strip_prefix("walks into the ") {
        PrimitiveAction::walk_to_room(lex.room(r).ok_or_else(bad)?)
    } else if let Some(c) = body.strip_prefix("opens the ") {
        PrimitiveAction::open(furniture(c)?)
    } else if let Some(c) = body.strip_prefix("closes the ") {
        PrimitiveAction::close(furniture(c)?)
    } else if let Some(x) = body.strip_prefix("grabs the ") {
        let (o, f) = x.split_once(" from the ").ok_or_else(bad)?;
        PrimitiveAction::grab(lex.object(o).ok_or_else(bad)?, furniture(f)?)
    } else if let Some(x) = body.strip_prefix("puts the ") {
        let (o, f) = x
            .split_once(" inside the ")
            .or_else(|| x.split_once(" on the "))
            .ok_or_else(bad)?;
        PrimitiveAction::put(lex.object(o).ok_or_else(bad)?, furniture(f)?)
    } else {
        return Err(bad());
    };
    Ok(ChannelLine::Action {
        tick,
        agent,
        action: ParsedAction::Known(action),
    })
}

fn parse_utterance(lex: &Lexicon, said: &str) -> Option<Utterance> {
    if let Some(q) = said.strip_prefix("Where is ").or_else(|| said.strip_prefix("Where are ")) {
        let q = q.strip_suffix('?')?;
        let objects = q
            .split(" and ")
            .map(|t| t.strip_prefix("the ").and_then(|o| lex.object(o)).map(str::to_string))
            .collect::<Option<Vec<_>>>()?;
        return Some(Utterance::Inquiry { objects });
    }
    let mut facts = Vec::new();
    for sentence in said.split_inclusive(". ") {
        let s = sentence.trim_end().strip_suffix('.')?;
        let s = s.strip_prefix("The ")?;
        let (o, loc) = s.split_once(" is ")?;
        facts.push((lex.object(o)?.to_string(), strip_location(lex, loc)?));
    }
    (!facts.is_empty()).then_some(Utterance::Inform { facts })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> (Scene, Apartment) {
        let apt = Apartment::template("flat_a").unwrap();
        let names = [(AgentId(0), "Mary".to_string()), (AgentId(1), "John".to_string())]
            .into_iter()
            .collect();
        let starts = [(AgentId(0), Pose::in_room("kitchen")), (AgentId(1), Pose::in_room("kitchen"))]
            .into_iter()
            .collect();
        let container_open = apt.containers().map(|c| (c.id.clone(), false)).collect();
        (
            Scene {
                apartment: apt.id.clone(),
                names,
                starts,
                container_open,
            },
            apt,
        )
    }

    #[test]
    fn actions_round_trip_through_both_channels() {
        let (scene, apt) = scene();
        let lex = Lexicon::new(&apt);
        let actions = [
            PrimitiveAction::walk_to("coffee_table"),
            PrimitiveAction::walk_to_room("living_room"),
            PrimitiveAction::open("fridge"),
            PrimitiveAction::close("kitchen_cabinet"),
            PrimitiveAction::grab("remote_control", "sofa"),
            PrimitiveAction::put("beer", "fridge"),
            PrimitiveAction::put("beer", "kitchen_table"),
            PrimitiveAction::Noop,
        ];
        for a in actions {
            let obs = observation_line(4, "John", &a);
            let txt = text_action_line(&apt, 4, "John", &a);
            let expect = ChannelLine::Action {
                tick: 4,
                agent: AgentId(1),
                action: ParsedAction::Known(a.clone()),
            };
            assert_eq!(parse_observation_line(&scene, 0, &obs).unwrap(), expect, "{obs}");
            assert_eq!(parse_text_line(&scene, &lex, 0, &txt).unwrap(), expect, "{txt}");
        }
    }

    #[test]
    fn utterances_round_trip() {
        let (scene, apt) = scene();
        let lex = Lexicon::new(&apt);
        for u in [
            Utterance::inquiry("beer"),
            Utterance::Inquiry {
                objects: vec!["beer".into(), "remote_control".into()],
            },
            Utterance::inform("beer", "coffee_table"),
            Utterance::Inform {
                facts: vec![("beer".into(), "fridge".into()), ("juice".into(), "sofa".into())],
            },
        ] {
            let line = utterance_line(&apt, 0, "Mary", &u).unwrap();
            let back = parse_text_line(&scene, &lex, 0, &line).unwrap();
            assert_eq!(
                back,
                ChannelLine::Utterance {
                    tick: 0,
                    agent: AgentId(0),
                    utterance: u
                },
                "{line}"
            );
        }
        assert_eq!(
            utterance_line(&apt, 0, "Mary", &Utterance::inform("beer", "coffee_table")).unwrap(),
            "[t=0] Mary: The beer is on the coffee table in the living room."
        );
    }

    #[test]
    fn scene_round_trip() {
        let (scene, apt) = scene();
        let (back, a) = parse_scene(&scene.render(), std::slice::from_ref(&apt)).unwrap();
        assert_eq!(back, scene);
        assert_eq!(a, apt);
    }

    #[test]
    fn placeholder_is_recognized() {
        let (scene, _) = scene();
        let line = "t=2 | Mary | grab | some object | fridge";
        match parse_observation_line(&scene, 0, line).unwrap() {
            ChannelLine::Action { action: ParsedAction::Placeholder { verb, furniture }, .. } => {
                assert_eq!(verb, PlaceholderVerb::Grab);
                assert_eq!(furniture, "fridge");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn mentions_match_whole_words() {
        let apt = Apartment::template("flat_a").unwrap();
        let lex = Lexicon::new(&apt);
        assert_eq!(lex.objects_in("Where is the beer?"), vec!["beer".to_string()]);
        assert!(lex.objects_in("beers everywhere").is_empty());
    }
}
