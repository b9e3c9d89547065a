//! Cooperative decision making: the per-vehicle pipeline (action selection,
//! conflict detection, priority arbitration) and the centralized functions
//! run on aggregated V2B reports.

mod large_scale;
mod small_scale;

pub use large_scale::*;
pub use small_scale::*;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ActionFootprint, AtmAction, BehaviorMode, OvertakePhase, TurnDirection, VehicleId};

/// What an action intends to do, with the parameters needed to execute it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ActionKind {
    /// Corridor claimed by an emergency vehicle in service.
    EmergencyCorridor,
    /// Pull over for an emergency vehicle; `target_lane` is set while a
    /// lane change is still needed.
    EmergencyAvoidance { target_lane: Option<u8> },
    Brake,
    /// Evade a hazard ahead, laterally if a lane is given.
    Avoidance { target_lane: Option<u8> },
    CarFollowing,
    LaneKeeping,
    FreeDriving,
    Turning { turn: TurnDirection },
    IntersectionQueuing,
    Platooning,
    LaneChanging { target_lane: u8 },
    Overtaking { phase: OvertakePhase, target_lane: Option<u8> },
    PlatoonJoin,
}

/// Rows of the priority table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionClass {
    EmergencyAvoidance,
    Brake,
    Avoidance,
    CarFollowing,
    LaneKeeping,
    FreeDriving,
    Turning,
    IntersectionQueuing,
    Platooning,
    LaneChanging,
    Overtaking,
    PlatoonJoin,
}

impl ActionClass {
    pub const ALL: [ActionClass; 12] = [
        ActionClass::EmergencyAvoidance,
        ActionClass::Brake,
        ActionClass::Avoidance,
        ActionClass::CarFollowing,
        ActionClass::LaneKeeping,
        ActionClass::FreeDriving,
        ActionClass::Turning,
        ActionClass::IntersectionQueuing,
        ActionClass::Platooning,
        ActionClass::LaneChanging,
        ActionClass::Overtaking,
        ActionClass::PlatoonJoin,
    ];

    pub fn is_safety(self) -> bool {
        matches!(
            self,
            ActionClass::EmergencyAvoidance | ActionClass::Brake | ActionClass::Avoidance
        )
    }
}

impl ActionKind {
    pub fn class(&self) -> ActionClass {
        match self {
            ActionKind::EmergencyCorridor | ActionKind::EmergencyAvoidance { .. } => {
                ActionClass::EmergencyAvoidance
            }
            ActionKind::Brake => ActionClass::Brake,
            ActionKind::Avoidance { .. } => ActionClass::Avoidance,
            ActionKind::CarFollowing => ActionClass::CarFollowing,
            ActionKind::LaneKeeping => ActionClass::LaneKeeping,
            ActionKind::FreeDriving => ActionClass::FreeDriving,
            ActionKind::Turning { .. } => ActionClass::Turning,
            ActionKind::IntersectionQueuing => ActionClass::IntersectionQueuing,
            ActionKind::Platooning => ActionClass::Platooning,
            ActionKind::LaneChanging { .. } => ActionClass::LaneChanging,
            ActionKind::Overtaking { .. } => ActionClass::Overtaking,
            ActionKind::PlatoonJoin => ActionClass::PlatoonJoin,
        }
    }

    /// Behavior mode a vehicle is in while executing this action.
    pub fn behavior(&self) -> BehaviorMode {
        match *self {
            ActionKind::EmergencyCorridor => BehaviorMode::FreeDriving,
            ActionKind::EmergencyAvoidance { .. } => BehaviorMode::EmergencyAvoidance,
            ActionKind::Brake | ActionKind::CarFollowing => BehaviorMode::CarFollowing,
            ActionKind::Avoidance { .. } => BehaviorMode::Avoidance,
            ActionKind::LaneKeeping => BehaviorMode::LaneKeeping,
            ActionKind::FreeDriving => BehaviorMode::FreeDriving,
            ActionKind::Turning { turn } => BehaviorMode::Turning(turn),
            ActionKind::IntersectionQueuing => BehaviorMode::IntersectionQueuing,
            ActionKind::Platooning | ActionKind::PlatoonJoin => BehaviorMode::Platooning,
            ActionKind::LaneChanging { .. } => BehaviorMode::LaneChanging,
            ActionKind::Overtaking { phase, .. } => BehaviorMode::Overtaking(phase),
        }
    }

    /// Lane the action moves into, if it changes lanes.
    pub fn target_lane(&self) -> Option<u8> {
        match *self {
            ActionKind::EmergencyAvoidance { target_lane }
            | ActionKind::Avoidance { target_lane }
            | ActionKind::Overtaking { target_lane, .. } => target_lane,
            ActionKind::LaneChanging { target_lane } => Some(target_lane),
            _ => None,
        }
    }

    /// Actions that claim space beyond the vehicle's own lane ahead and
    /// therefore go through conflict detection.
    pub fn claims_space(&self) -> bool {
        self.target_lane().is_some()
            || matches!(self, ActionKind::Turning { .. } | ActionKind::PlatoonJoin)
    }

    /// ATM tag announcing this action, if it is announced at all.
    pub fn atm_action(&self) -> Option<AtmAction> {
        match self {
            ActionKind::EmergencyCorridor => Some(AtmAction::EmergencyVehicleAvoidance),
            ActionKind::LaneChanging { .. } => Some(AtmAction::ChangeLanes),
            ActionKind::Overtaking {
                phase: OvertakePhase::One,
                target_lane: Some(_),
            } => Some(AtmAction::Overtake),
            ActionKind::Overtaking {
                phase: OvertakePhase::Two,
                target_lane: Some(_),
            } => Some(AtmAction::ChangeLanes),
            ActionKind::EmergencyAvoidance {
                target_lane: Some(_),
            }
            | ActionKind::Avoidance {
                target_lane: Some(_),
            } => Some(AtmAction::ChangeLanes),
            ActionKind::Brake => Some(AtmAction::Brake),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub kind: ActionKind,
    pub footprint: ActionFootprint,
    pub priority: u8,
    pub issuer: VehicleId,
}

impl Action {
    pub fn new(
        kind: ActionKind,
        footprint: ActionFootprint,
        issuer: VehicleId,
        table: &PriorityTable,
    ) -> Self {
        Self {
            kind,
            footprint,
            priority: table.rank(kind.class()),
            issuer,
        }
    }

    pub fn class(&self) -> ActionClass {
        self.kind.class()
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PriorityTableError {
    #[error("priority table lists {0:?} more than once")]
    Duplicate(ActionClass),
    #[error("priority table is missing {0:?}")]
    Missing(ActionClass),
    #[error("emergency avoidance must be the sole top priority")]
    EmergencyNotMaximal,
}

/// Ordered levels, highest priority first. Classes in one level tie and are
/// separated by the later tie-break rules.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<ActionClass>>", into = "Vec<Vec<ActionClass>>")]
pub struct PriorityTable {
    levels: Vec<Vec<ActionClass>>,
}

impl Default for PriorityTable {
    fn default() -> Self {
        use ActionClass::*;
        Self {
            levels: vec![
                vec![EmergencyAvoidance],
                vec![Brake, Avoidance],
                vec![CarFollowing],
                vec![LaneKeeping, FreeDriving, Turning, IntersectionQueuing, Platooning],
                vec![LaneChanging],
                vec![Overtaking],
                vec![PlatoonJoin],
            ],
        }
    }
}

impl TryFrom<Vec<Vec<ActionClass>>> for PriorityTable {
    type Error = PriorityTableError;
    fn try_from(levels: Vec<Vec<ActionClass>>) -> Result<Self, Self::Error> {
        PriorityTable::new(levels)
    }
}

impl From<PriorityTable> for Vec<Vec<ActionClass>> {
    fn from(t: PriorityTable) -> Self {
        t.levels
    }
}

impl PriorityTable {
    pub fn new(levels: Vec<Vec<ActionClass>>) -> Result<Self, PriorityTableError> {
        let mut seen = std::collections::BTreeSet::new();
        for class in levels.iter().flatten() {
            if !seen.insert(*class) {
                return Err(PriorityTableError::Duplicate(*class));
            }
        }
        if let Some(missing) = ActionClass::ALL.iter().find(|c| !seen.contains(c)) {
            return Err(PriorityTableError::Missing(*missing));
        }
        if levels.first().map(Vec::as_slice) != Some(&[ActionClass::EmergencyAvoidance][..]) {
            return Err(PriorityTableError::EmergencyNotMaximal);
        }
        // Safety classes must outrank everything else so they can never be
        // demoted by arbitration.
        let safety_floor = levels
            .iter()
            .rposition(|l| l.iter().any(|c| c.is_safety()))
            .unwrap_or(0);
        if levels[..safety_floor]
            .iter()
            .flatten()
            .any(|c| !c.is_safety())
            || levels[safety_floor].iter().any(|c| !c.is_safety())
        {
            return Err(PriorityTableError::EmergencyNotMaximal);
        }
        Ok(Self { levels })
    }

    /// Larger is more important.
    pub fn rank(&self, class: ActionClass) -> u8 {
        let idx = self
            .levels
            .iter()
            .position(|l| l.contains(&class))
            .expect("table lists every class");
        (self.levels.len() - idx) as u8
    }

    pub fn levels(&self) -> &[Vec<ActionClass>] {
        &self.levels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_table_order() {
        let t = PriorityTable::default();
        let r = |c| t.rank(c);
        use ActionClass::*;
        assert!(r(EmergencyAvoidance) > r(Brake));
        assert_eq!(r(Brake), r(Avoidance));
        assert!(r(Avoidance) > r(CarFollowing));
        assert!(r(CarFollowing) > r(LaneKeeping));
        assert_eq!(r(LaneKeeping), r(FreeDriving));
        assert!(r(FreeDriving) > r(LaneChanging));
        assert!(r(LaneChanging) > r(Overtaking));
        assert!(r(Overtaking) > r(PlatoonJoin));
        assert!(ActionClass::ALL.iter().all(|c| r(*c) <= r(EmergencyAvoidance)));
    }

    #[test]
    fn table_rejects_bad_orders() {
        use ActionClass::*;
        let mut levels = PriorityTable::default().levels;
        levels.swap(0, 1);
        assert_eq!(
            PriorityTable::new(levels),
            Err(PriorityTableError::EmergencyNotMaximal)
        );

        let mut levels = PriorityTable::default().levels;
        levels.pop();
        assert_eq!(
            PriorityTable::new(levels),
            Err(PriorityTableError::Missing(PlatoonJoin))
        );

        let mut levels = PriorityTable::default().levels;
        levels[2].push(Brake);
        assert_eq!(
            PriorityTable::new(levels),
            Err(PriorityTableError::Duplicate(Brake))
        );

        let mut levels = PriorityTable::default().levels;
        levels[1].push(CarFollowing);
        levels.remove(2);
        assert!(PriorityTable::new(levels).is_err());
    }

    #[test]
    fn table_round_trips_through_serde() {
        let t = PriorityTable::default();
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.starts_with("[[\"emergency_avoidance\"]"));
        let back: PriorityTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
    }
}
