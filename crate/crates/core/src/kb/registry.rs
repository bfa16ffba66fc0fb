use std::collections::BTreeMap;
use std::path::Path;

use serde::Deserialize;

use super::{normalize_text, Channel, KbError, Relation};

/// Relation name → acquisition channel, fixed for the lifetime of a store.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RelationRegistry {
    relations: BTreeMap<String, Channel>,
}

#[derive(Deserialize)]
struct RegistryFile {
    relations: BTreeMap<String, Channel>,
}

impl RelationRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Relations emitted by the bundled microworld.
    pub fn microworld_default() -> Self {
        let mut reg = Self::new();
        for name in ["located_in", "exits", "state", "temperature", "phase"] {
            reg.register(Relation::new(name, Channel::Observation).unwrap())
                .unwrap();
        }
        for name in ["act:examine", "act:read", "act:focus"] {
            reg.register(Relation::new(name, Channel::ActionFeedback).unwrap())
                .unwrap();
        }
        reg
    }

    /// Registers a relation; re-registering with the same channel is a no-op.
    pub fn register(&mut self, relation: Relation) -> Result<(), KbError> {
        match self.relations.get(&relation.name) {
            Some(&registered) if registered != relation.channel => Err(KbError::ChannelConflict {
                name: relation.name,
                registered,
                requested: relation.channel,
            }),
            Some(_) => Ok(()),
            None => {
                self.relations.insert(relation.name, relation.channel);
                Ok(())
            }
        }
    }

    pub fn channel(&self, name: &str) -> Option<Channel> {
        self.relations.get(name).copied()
    }

    /// Resolves a registered relation by (un-normalized) name.
    pub fn relation(&self, name: &str) -> Result<Relation, KbError> {
        let name = normalize_text(name);
        let channel = self
            .channel(&name)
            .ok_or_else(|| KbError::UnregisteredRelation(name.clone()))?;
        Ok(Relation { name, channel })
    }

    /// Fails unless `relation` is registered under the same channel.
    pub fn check(&self, relation: &Relation) -> Result<(), KbError> {
        match self.channel(&relation.name) {
            None => Err(KbError::UnregisteredRelation(relation.name.clone())),
            Some(c) if c != relation.channel => Err(KbError::ChannelConflict {
                name: relation.name.clone(),
                registered: c,
                requested: relation.channel,
            }),
            Some(_) => Ok(()),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = Relation> + '_ {
        self.relations.iter().map(|(name, &channel)| Relation {
            name: name.clone(),
            channel,
        })
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    /// Parses a TOML registry:
    ///
    /// ```toml
    /// [relations]
    /// located_in = "observation"
    /// "act:examine" = "action_feedback"
    /// ```
    pub fn from_toml_str(src: &str) -> Result<Self, KbError> {
        let file: RegistryFile =
            toml::from_str(src).map_err(|e| KbError::Registry(e.to_string()))?;
        let mut reg = Self::new();
        for (name, channel) in file.relations {
            reg.register(Relation::new(&name, channel)?)?;
        }
        Ok(reg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conflicting_channel_is_rejected() {
        let mut reg = RelationRegistry::new();
        reg.register(Relation::new("contains", Channel::Observation).unwrap())
            .unwrap();
        reg.register(Relation::new("Contains", Channel::Observation).unwrap())
            .unwrap();
        assert_eq!(reg.len(), 1);
        let err = reg
            .register(Relation::new("contains", Channel::ActionFeedback).unwrap())
            .unwrap_err();
        assert!(matches!(err, KbError::ChannelConflict { .. }));
    }

    #[test]
    fn toml_registry() {
        let reg = RelationRegistry::from_toml_str(
            "[relations]\nlocated_in = \"observation\"\n\"act:examine\" = \"action_feedback\"\n",
        )
        .unwrap();
        assert_eq!(reg.channel("act:examine"), Some(Channel::ActionFeedback));
        assert_eq!(reg.channel("located_in"), Some(Channel::Observation));
        assert!(RelationRegistry::from_toml_str("[relations]\nx = \"telepathy\"\n").is_err());
    }
}
