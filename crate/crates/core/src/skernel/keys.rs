use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Key {
    Home,
    Back,
    Power,
    Volume,
}

impl Key {
    pub const ALL: [Key; 4] = [Key::Home, Key::Back, Key::Power, Key::Volume];

    pub fn name(self) -> &'static str {
        match self {
            Key::Home => "home",
            Key::Back => "back",
            Key::Power => "power",
            Key::Volume => "volume",
        }
    }

    pub fn from_name(s: &str) -> Option<Key> {
        Key::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// Each key event advances the secure UI clock by this much.
pub const UI_TICK_MS: u64 = 1000;
pub const HOLD_THRESHOLD_MS: u64 = 2000;

/// Detects Power+Back held together. The hold is timed from the press of
/// the first key of the chord and checked when the chord breaks.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySequence {
    power_down: Option<u64>,
    back_down: Option<u64>,
}

impl KeySequence {
    /// Observes an event; returns true when the sequence completes.
    pub fn observe(&mut self, key: Key, pressed: bool, now_ms: u64) -> bool {
        let slot = match key {
            Key::Power => &mut self.power_down,
            Key::Back => &mut self.back_down,
            _ => return false,
        };
        if pressed {
            slot.get_or_insert(now_ms);
            return false;
        }
        let fired = match (self.power_down, self.back_down) {
            (Some(p), Some(b)) => now_ms.saturating_sub(p.min(b)) >= HOLD_THRESHOLD_MS,
            _ => false,
        };
        match key {
            Key::Power => self.power_down = None,
            _ => self.back_down = None,
        }
        fired
    }
}
