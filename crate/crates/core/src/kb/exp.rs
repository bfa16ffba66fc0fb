use super::{KbError, SubGoalUnit};

/// Append-only experiential store; ids are insertion positions.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpKnowledgeBase {
    units: Vec<SubGoalUnit>,
}

impl ExpKnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn store(&mut self, unit: SubGoalUnit) -> Result<usize, KbError> {
        unit.validate()?;
        self.units.push(unit);
        Ok(self.units.len() - 1)
    }

    pub fn get(&self, id: usize) -> Option<&SubGoalUnit> {
        self.units.get(id)
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &SubGoalUnit)> {
        self.units.iter().enumerate()
    }
}
