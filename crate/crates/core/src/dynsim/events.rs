use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    FaultCleared,
    LineTrip,
    GeneratorTrip,
    /// Stage number, starting at 1.
    UflsStage(u8),
    IslandCollapse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub device: String,
    pub kind: EventKind,
    /// Which function operated, e.g. `zone2@C1`, `frt`, `ufls`.
    pub cause: String,
}

impl Event {
    pub fn key(&self) -> (&str, EventKind) {
        (&self.device, self.kind)
    }
}

/// Time-ordered events of one simulation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EventSequence(pub Vec<Event>);

impl EventSequence {
    pub fn push(&mut self, e: Event) {
        debug_assert!(self.0.last().is_none_or(|l| l.time <= e.time + 1e-12));
        self.0.push(e);
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Event> {
        self.0.iter()
    }

    pub fn contains(&self, device: &str, kind: EventKind) -> bool {
        self.0.iter().any(|e| e.device == device && e.kind == kind)
    }

    pub fn time_of(&self, device: &str, kind: EventKind) -> Option<f64> {
        self.0.iter().find(|e| e.device == device && e.kind == kind).map(|e| e.time)
    }

    /// Stable sort by time; events recorded out of order (shadow sets) are
    /// normalised through this.
    pub fn sorted(mut self) -> Self {
        self.0.sort_by(|a, b| a.time.total_cmp(&b.time));
        self
    }
}
