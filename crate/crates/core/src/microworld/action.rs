use std::fmt;

use super::WorldError;
use crate::kb::normalize_text;

/// Closed action grammar.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Action {
    Go(String),
    Open(String),
    Close(String),
    Take(String),
    Put {
        object: String,
        target: String,
        on: bool,
    },
    Pour { source: String, target: String },
    Activate(String),
    Deactivate(String),
    Examine(String),
    Read(String),
    Focus(String),
    Wait,
    Look,
}

fn split_pair<'a>(rest: &'a str, seps: &[&str]) -> Option<(&'a str, &'a str)> {
    seps.iter().find_map(|sep| {
        rest.split_once(sep)
            .map(|(a, b)| (a.trim(), b.trim()))
            .filter(|(a, b)| !a.is_empty() && !b.is_empty())
    })
}

/// Drops a leading filler word, including when it is the whole text.
fn strip_word<'a>(text: &'a str, word: &str) -> &'a str {
    match text.strip_prefix(word) {
        Some(rest) if rest.is_empty() || rest.starts_with(' ') => rest.trim(),
        _ => text,
    }
}

impl Action {
    pub fn parse(raw: &str) -> Result<Self, WorldError> {
        let text = normalize_text(raw);
        let bad = || WorldError::UnparseableAction(raw.to_string());
        let (verb, rest) = text.split_once(' ').unwrap_or((text.as_str(), ""));
        let rest = rest.trim();
        let arg = || {
            if rest.is_empty() {
                Err(bad())
            } else {
                Ok(rest.to_string())
            }
        };
        match verb {
            "wait" if rest.is_empty() => Ok(Self::Wait),
            "look" if rest.is_empty() || rest == "around" => Ok(Self::Look),
            "go" => {
                let dest = strip_word(rest, "to");
                if dest.is_empty() {
                    Err(bad())
                } else {
                    Ok(Self::Go(dest.to_string()))
                }
            }
            "open" => arg().map(Self::Open),
            "close" => arg().map(Self::Close),
            "take" => arg().map(Self::Take),
            "activate" => arg().map(Self::Activate),
            "deactivate" => arg().map(Self::Deactivate),
            "examine" => arg().map(Self::Examine),
            "read" => arg().map(Self::Read),
            "focus" => {
                let obj = strip_word(rest, "on");
                if obj.is_empty() {
                    Err(bad())
                } else {
                    Ok(Self::Focus(obj.to_string()))
                }
            }
            "put" => {
                let on = split_pair(rest, &[" on "]);
                let (pair, on) = match split_pair(rest, &[" into ", " in "]) {
                    Some(p) => (Some(p), false),
                    None => (on, true),
                };
                pair.map(|(o, t)| Self::Put {
                    object: o.into(),
                    target: t.into(),
                    on,
                })
                .ok_or_else(bad)
            }
            "pour" => split_pair(rest, &[" into ", " in "])
                .map(|(s, t)| Self::Pour {
                    source: s.into(),
                    target: t.into(),
                })
                .ok_or_else(bad),
            _ => Err(bad()),
        }
    }

    pub fn verb(&self) -> &'static str {
        match self {
            Self::Go(_) => "go",
            Self::Open(_) => "open",
            Self::Close(_) => "close",
            Self::Take(_) => "take",
            Self::Put { .. } => "put",
            Self::Pour { .. } => "pour",
            Self::Activate(_) => "activate",
            Self::Deactivate(_) => "deactivate",
            Self::Examine(_) => "examine",
            Self::Read(_) => "read",
            Self::Focus(_) => "focus",
            Self::Wait => "wait",
            Self::Look => "look",
        }
    }

    /// Object and location names the action refers to, in argument order.
    pub fn arguments(&self) -> Vec<&str> {
        match self {
            Self::Go(x)
            | Self::Open(x)
            | Self::Close(x)
            | Self::Take(x)
            | Self::Activate(x)
            | Self::Deactivate(x)
            | Self::Examine(x)
            | Self::Read(x)
            | Self::Focus(x) => vec![x],
            Self::Put { object, target, .. } => vec![object, target],
            Self::Pour { source, target } => vec![source, target],
            Self::Wait | Self::Look => vec![],
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Go(x) => write!(f, "go to {x}"),
            Self::Put { object, target, on } => {
                write!(f, "put {object} {} {target}", if *on { "on" } else { "in" })
            }
            Self::Pour { source, target } => write!(f, "pour {source} into {target}"),
            Self::Focus(x) => write!(f, "focus on {x}"),
            Self::Wait => f.write_str("wait"),
            Self::Look => f.write_str("look around"),
            other => write!(f, "{} {}", other.verb(), other.arguments()[0]),
        }
    }
}
