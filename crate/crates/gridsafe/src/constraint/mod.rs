//! Constraint semantics: typed constraint expressions, per-step cost
//! functions, ground-truth cost masks over observations, and the running
//! budget mask fed to the policy.
//!
//! Three constraint families are supported, all over the walkable cost
//! entities (lava, water, grass):
//! - budgetary: entering the entity's cells is tolerated up to a count
//!   threshold; every entry beyond it is a violation,
//! - relational: being within a Manhattan radius of the entity is a
//!   violation on every step spent inside the radius,
//! - sequential: the forbidden entity is harmless until the trigger entity
//!   has been visited, after which entering it is a violation.

pub mod meter;
mod parser;
mod templates;

pub use parser::{parse_dsl, ParseError};
pub use templates::{Template, TemplateBank, TemplateError, Variant};

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::grid::{Action, EntityKind, EpisodeState, Observation, WINDOW};

/// Maximum violation threshold expressible by a constraint.
pub const MAX_THRESHOLD: u32 = 5;

/// Errors from constraint construction and mask algebra.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConstraintError {
    #[error("constraint entity must be a cost entity (lava, water, grass), got {0}")]
    NotACostEntity(EntityKind),
    #[error("threshold {0} exceeds the maximum of {MAX_THRESHOLD}")]
    ThresholdTooLarge(u32),
    #[error("relational distance must be at least 1")]
    ZeroDistance,
    #[error("cannot merge an empty list of masks")]
    EmptyMaskList,
}

/// A typed safety constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConstraintSpec {
    /// At most `threshold` entries onto `entity` cells.
    Budgetary { entity: EntityKind, threshold: u32 },
    /// Staying within `distance` (Manhattan) of `entity` is a violation;
    /// at most `threshold` violation steps are tolerated.
    Relational {
        entity: EntityKind,
        distance: u32,
        threshold: u32,
    },
    /// Entering `forbidden` after `trigger` has been visited is a violation;
    /// at most `threshold` such entries are tolerated.
    Sequential {
        trigger: EntityKind,
        forbidden: EntityKind,
        threshold: u32,
    },
}

impl ConstraintSpec {
    pub fn budgetary(entity: EntityKind, threshold: u32) -> Result<Self, ConstraintError> {
        let spec = ConstraintSpec::Budgetary { entity, threshold };
        spec.validate()?;
        Ok(spec)
    }

    pub fn relational(
        entity: EntityKind,
        distance: u32,
        threshold: u32,
    ) -> Result<Self, ConstraintError> {
        let spec = ConstraintSpec::Relational {
            entity,
            distance,
            threshold,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn sequential(
        trigger: EntityKind,
        forbidden: EntityKind,
        threshold: u32,
    ) -> Result<Self, ConstraintError> {
        let spec = ConstraintSpec::Sequential {
            trigger,
            forbidden,
            threshold,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        match *self {
            ConstraintSpec::Budgetary { entity, threshold } => {
                if !entity.is_cost() {
                    return Err(ConstraintError::NotACostEntity(entity));
                }
                if threshold > MAX_THRESHOLD {
                    return Err(ConstraintError::ThresholdTooLarge(threshold));
                }
            }
            ConstraintSpec::Relational {
                entity,
                distance,
                threshold,
            } => {
                if !entity.is_cost() {
                    return Err(ConstraintError::NotACostEntity(entity));
                }
                if distance == 0 {
                    return Err(ConstraintError::ZeroDistance);
                }
                if threshold > MAX_THRESHOLD {
                    return Err(ConstraintError::ThresholdTooLarge(threshold));
                }
            }
            ConstraintSpec::Sequential {
                trigger,
                forbidden,
                threshold,
            } => {
                if !trigger.is_cost() {
                    return Err(ConstraintError::NotACostEntity(trigger));
                }
                if !forbidden.is_cost() {
                    return Err(ConstraintError::NotACostEntity(forbidden));
                }
                if threshold > MAX_THRESHOLD {
                    return Err(ConstraintError::ThresholdTooLarge(threshold));
                }
            }
        }
        Ok(())
    }

    /// Violation threshold of the constraint.
    pub fn threshold(&self) -> u32 {
        match *self {
            ConstraintSpec::Budgetary { threshold, .. }
            | ConstraintSpec::Relational { threshold, .. }
            | ConstraintSpec::Sequential { threshold, .. } => threshold,
        }
    }

    pub fn variant(&self) -> Variant {
        match self {
            ConstraintSpec::Budgetary { .. } => Variant::Budgetary,
            ConstraintSpec::Relational { .. } => Variant::Relational,
            ConstraintSpec::Sequential { .. } => Variant::Sequential,
        }
    }

    /// Canonical expression form, e.g. `budget(entity=lava, max=5)`.
    /// Relational and sequential forms omit `max` when it is 0.
    pub fn to_dsl(&self) -> String {
        match *self {
            ConstraintSpec::Budgetary { entity, threshold } => {
                format!("budget(entity={}, max={})", entity.name(), threshold)
            }
            ConstraintSpec::Relational {
                entity,
                distance,
                threshold,
            } => {
                if threshold == 0 {
                    format!("relation(entity={}, distance={})", entity.name(), distance)
                } else {
                    format!(
                        "relation(entity={}, distance={}, max={})",
                        entity.name(),
                        distance,
                        threshold
                    )
                }
            }
            ConstraintSpec::Sequential {
                trigger,
                forbidden,
                threshold,
            } => {
                if threshold == 0 {
                    format!(
                        "sequence(trigger={}, forbidden={})",
                        trigger.name(),
                        forbidden.name()
                    )
                } else {
                    format!(
                        "sequence(trigger={}, forbidden={}, max={})",
                        trigger.name(),
                        forbidden.name(),
                        threshold
                    )
                }
            }
        }
    }

    /// The default constraint pool used by dataset generation: budgetary
    /// constraints over every cost entity and threshold 0..=5, relational
    /// constraints at distances 1 and 2 (threshold 0), and every ordered pair
    /// of distinct cost entities as a sequential constraint (threshold 0).
    pub fn default_pool() -> Vec<ConstraintSpec> {
        let mut pool = Vec::new();
        for &entity in &EntityKind::COSTS {
            for threshold in 0..=MAX_THRESHOLD {
                pool.push(ConstraintSpec::Budgetary { entity, threshold });
            }
        }
        for &entity in &EntityKind::COSTS {
            for distance in 1..=2 {
                pool.push(ConstraintSpec::Relational {
                    entity,
                    distance,
                    threshold: 0,
                });
            }
        }
        for &trigger in &EntityKind::COSTS {
            for &forbidden in &EntityKind::COSTS {
                if trigger != forbidden {
                    pool.push(ConstraintSpec::Sequential {
                        trigger,
                        forbidden,
                        threshold: 0,
                    });
                }
            }
        }
        pool
    }
}

impl fmt::Display for ConstraintSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_dsl())
    }
}

/// Per-step cost of the transition `prev_state --action--> new_state`.
///
/// Budgetary and sequential costs are entry costs: they are charged when the
/// agent's cell changes onto the offending entity, so a wall-blocked move
/// while standing on the entity charges nothing. Relational costs are charged
/// on every step that ends within the radius, wall-blocked moves included.
pub fn step_cost(
    spec: &ConstraintSpec,
    prev_state: &EpisodeState,
    _action: Action,
    new_state: &EpisodeState,
) -> f64 {
    meter::note_oracle_read();
    let new_pos = new_state.agent_pos();
    let moved = prev_state.agent_pos() != new_pos;
    let cell = new_state.map().get(new_pos);
    match *spec {
        ConstraintSpec::Budgetary { entity, .. } => {
            if moved && cell == entity {
                1.0
            } else {
                0.0
            }
        }
        ConstraintSpec::Relational {
            entity, distance, ..
        } => {
            let within = new_state.map().positions_of(entity).iter().any(|&(r, c)| {
                let d = r.abs_diff(new_pos.0) + c.abs_diff(new_pos.1);
                d as u32 <= distance
            });
            if within {
                1.0
            } else {
                0.0
            }
        }
        ConstraintSpec::Sequential {
            trigger, forbidden, ..
        } => {
            if moved && cell == forbidden && prev_state.visited_kinds().contains(&trigger) {
                1.0
            } else {
                0.0
            }
        }
    }
}

/// Binary 7x7 mask over the observation window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Mask {
    cells: [bool; WINDOW * WINDOW],
}

impl Mask {
    pub fn zero() -> Mask {
        Mask {
            cells: [false; WINDOW * WINDOW],
        }
    }

    pub fn from_cells(cells: [bool; WINDOW * WINDOW]) -> Mask {
        Mask { cells }
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * WINDOW + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.cells[row * WINDOW + col] = value;
    }

    pub fn get_flat(&self, i: usize) -> bool {
        self.cells[i]
    }

    /// Number of marked cells.
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Flattened row-major 0/1 values.
    pub fn to_flat_f64(&self) -> [f64; WINDOW * WINDOW] {
        let mut out = [0.0; WINDOW * WINDOW];
        for (o, &b) in out.iter_mut().zip(self.cells.iter()) {
            *o = if b { 1.0 } else { 0.0 };
        }
        out
    }

    /// Flattened row-major 0/1 characters, for compact serialization.
    pub fn to_bit_string(&self) -> String {
        self.cells.iter().map(|&b| if b { '1' } else { '0' }).collect()
    }

    pub fn from_bit_string(s: &str) -> Option<Mask> {
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != WINDOW * WINDOW {
            return None;
        }
        let mut cells = [false; WINDOW * WINDOW];
        for (cell, c) in cells.iter_mut().zip(chars) {
            *cell = match c {
                '0' => false,
                '1' => true,
                _ => return None,
            };
        }
        Some(Mask { cells })
    }
}

/// Union of several constraint masks. Adding binary masks and clamping to
/// {0, 1} is an elementwise OR, which is how multiple simultaneous
/// constraints combine. Errors on an empty list.
pub fn merge_masks(masks: &[Mask]) -> Result<Mask, ConstraintError> {
    if masks.is_empty() {
        return Err(ConstraintError::EmptyMaskList);
    }
    let mut out = Mask::zero();
    for mask in masks {
        for i in 0..WINDOW * WINDOW {
            out.cells[i] |= mask.cells[i];
        }
    }
    Ok(out)
}

/// Ground-truth cost mask for an observation: marks every visible cell whose
/// entry (or occupancy, for relational constraints) would violate the
/// constraint given the kinds visited so far.
pub fn ground_truth_mask(
    obs: &Observation,
    spec: &ConstraintSpec,
    visited: &BTreeSet<EntityKind>,
) -> Mask {
    meter::note_oracle_read();
    let mut mask = Mask::zero();
    match *spec {
        ConstraintSpec::Budgetary { entity, .. } => {
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    if obs.get(r, c) == entity {
                        mask.set(r, c, true);
                    }
                }
            }
        }
        ConstraintSpec::Relational {
            entity, distance, ..
        } => {
            let mut sources = Vec::new();
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    if obs.get(r, c) == entity {
                        sources.push((r, c));
                    }
                }
            }
            for r in 0..WINDOW {
                for c in 0..WINDOW {
                    let near = sources.iter().any(|&(sr, sc)| {
                        (sr.abs_diff(r) + sc.abs_diff(c)) as u32 <= distance
                    });
                    if near {
                        mask.set(r, c, true);
                    }
                }
            }
        }
        ConstraintSpec::Sequential {
            trigger, forbidden, ..
        } => {
            if visited.contains(&trigger) {
                for r in 0..WINDOW {
                    for c in 0..WINDOW {
                        if obs.get(r, c) == forbidden {
                            mask.set(r, c, true);
                        }
                    }
                }
            }
        }
    }
    mask
}

/// Real-valued 7x7 budget mask: how far the running cost has progressed past
/// the tolerated threshold, painted onto the masked cells.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BudgetMask {
    cells: [f64; WINDOW * WINDOW],
}

impl BudgetMask {
    pub fn zero() -> BudgetMask {
        BudgetMask {
            cells: [0.0; WINDOW * WINDOW],
        }
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.cells[row * WINDOW + col]
    }

    pub fn cells(&self) -> &[f64; WINDOW * WINDOW] {
        &self.cells
    }
}

/// Builds the budget mask: `cumulative_cost - threshold` on every masked
/// cell, zero elsewhere. The value is signed — negative while budget remains,
/// positive once the threshold has been exceeded.
pub fn budget_mask(mask: &Mask, cumulative_cost: f64, threshold: f64) -> BudgetMask {
    let mut out = BudgetMask::zero();
    let slack = cumulative_cost - threshold;
    for i in 0..WINDOW * WINDOW {
        if mask.cells[i] {
            out.cells[i] = slack;
        }
    }
    out
}

/// Per-step cost record for one episode.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTrace {
    steps: Vec<f64>,
    cumulative: f64,
}

impl CostTrace {
    pub fn new() -> CostTrace {
        CostTrace::default()
    }

    pub fn push(&mut self, cost: f64) {
        self.steps.push(cost);
        self.cumulative += cost;
    }

    pub fn steps(&self) -> &[f64] {
        &self.steps
    }

    pub fn cumulative(&self) -> f64 {
        self.cumulative
    }

    /// Violations beyond the threshold: max(0, total - threshold).
    pub fn excess(&self, threshold: f64) -> f64 {
        (self.cumulative - threshold).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{GridMap, RewardTable};

    fn state_from(text: &str) -> EpisodeState {
        EpisodeState::new(GridMap::parse(text).unwrap())
    }

    #[test]
    fn validation_rejects_bad_specs() {
        assert_eq!(
            ConstraintSpec::budgetary(EntityKind::Ball, 1).unwrap_err(),
            ConstraintError::NotACostEntity(EntityKind::Ball)
        );
        assert_eq!(
            ConstraintSpec::budgetary(EntityKind::Lava, 6).unwrap_err(),
            ConstraintError::ThresholdTooLarge(6)
        );
        assert_eq!(
            ConstraintSpec::relational(EntityKind::Lava, 0, 0).unwrap_err(),
            ConstraintError::ZeroDistance
        );
        assert!(ConstraintSpec::sequential(EntityKind::Grass, EntityKind::Water, 0).is_ok());
    }

    #[test]
    fn budgetary_cost_charges_on_entry_only() {
        let spec = ConstraintSpec::budgetary(EntityKind::Lava, 5).unwrap();
        let rewards = RewardTable::train(50);
        // Agent left of a lava cell with a wall beyond it.
        let mut state = state_from("WWWWW\nWAL.W\nW..BW\nWWWWW");
        let prev = state.clone();
        state.step(Action::Right, &rewards).unwrap();
        assert_eq!(step_cost(&spec, &prev, Action::Right, &state), 1.0);

        // Standing on lava and bumping into the wall: no re-entry charge.
        let prev = state.clone();
        state.step(Action::Up, &rewards).unwrap();
        assert_eq!(state.agent_pos(), prev.agent_pos());
        assert_eq!(step_cost(&spec, &prev, Action::Up, &state), 0.0);

        // Leaving and re-entering charges again.
        let prev = state.clone();
        state.step(Action::Right, &rewards).unwrap();
        assert_eq!(step_cost(&spec, &prev, Action::Right, &state), 0.0);
        let prev = state.clone();
        state.step(Action::Left, &rewards).unwrap();
        assert_eq!(step_cost(&spec, &prev, Action::Left, &state), 1.0);
    }

    #[test]
    fn relational_cost_charges_every_step_in_radius() {
        let spec = ConstraintSpec::relational(EntityKind::Water, 2, 0).unwrap();
        let rewards = RewardTable::train(50);
        // Agent two cells left of water: inside radius 2 from the start.
        let mut state = state_from("WWWWWW\nWA.~.W\nW...BW\nWWWWWW");
        let prev = state.clone();
        state.step(Action::Up, &rewards).unwrap(); // wall-blocked, stays at distance 2
        assert_eq!(step_cost(&spec, &prev, Action::Up, &state), 1.0);

        let prev = state.clone();
        state.step(Action::Right, &rewards).unwrap(); // distance 1
        assert_eq!(step_cost(&spec, &prev, Action::Right, &state), 1.0);

        let prev = state.clone();
        state.step(Action::Down, &rewards).unwrap(); // (2,2): distance 1+1=2
        assert_eq!(step_cost(&spec, &prev, Action::Down, &state), 1.0);

        let prev = state.clone();
        state.step(Action::Left, &rewards).unwrap(); // (2,1): distance 2+1=3
        assert_eq!(step_cost(&spec, &prev, Action::Left, &state), 0.0);
    }

    #[test]
    fn sequential_cost_requires_trigger_first() {
        let spec = ConstraintSpec::sequential(EntityKind::Grass, EntityKind::Water, 0).unwrap();
        let rewards = RewardTable::train(50);
        // Layout: water left of agent, grass right of agent.
        let mut state = state_from("WWWWWW\nW~AG.W\nW...BW\nWWWWWW");

        // Entering water before grass: free.
        let prev = state.clone();
        state.step(Action::Left, &rewards).unwrap();
        assert_eq!(step_cost(&spec, &prev, Action::Left, &state), 0.0);

        // Walk to grass (trigger), then back onto water: charged.
        let prev = state.clone();
        state.step(Action::Right, &rewards).unwrap();
        assert_eq!(step_cost(&spec, &prev, Action::Right, &state), 0.0);
        let prev = state.clone();
        state.step(Action::Right, &rewards).unwrap(); // onto grass
        assert_eq!(step_cost(&spec, &prev, Action::Right, &state), 0.0);
        let prev = state.clone();
        state.step(Action::Left, &rewards).unwrap();
        assert_eq!(step_cost(&spec, &prev, Action::Left, &state), 0.0); // empty cell
        let prev = state.clone();
        state.step(Action::Left, &rewards).unwrap(); // onto water, trigger visited
        assert_eq!(step_cost(&spec, &prev, Action::Left, &state), 1.0);
    }

    #[test]
    fn budgetary_mask_marks_entity_cells() {
        let state = state_from("WWWWW\nWAL.W\nW.LBW\nWWWWW");
        let obs = state.observe();
        let spec = ConstraintSpec::budgetary(EntityKind::Lava, 0).unwrap();
        let mask = ground_truth_mask(&obs, &spec, state.visited_kinds());
        assert_eq!(mask.count(), 2);
        // Agent at (1,1); lava at (1,2) -> window (3,4); lava at (2,2) -> (4,4).
        assert!(mask.get(3, 4));
        assert!(mask.get(4, 4));
    }

    #[test]
    fn relational_mask_covers_the_radius() {
        let state = state_from("WWWWWWW\nWA....W\nW..~..W\nW....BW\nWWWWWWW");
        let obs = state.observe();
        let spec = ConstraintSpec::relational(EntityKind::Water, 1, 0).unwrap();
        let mask = ground_truth_mask(&obs, &spec, state.visited_kinds());
        // Water at map (2,3); agent at (1,1) so water sits at window (4,5).
        assert!(mask.get(4, 5));
        assert!(mask.get(3, 5));
        assert!(mask.get(5, 5));
        assert!(mask.get(4, 4));
        assert!(mask.get(4, 6));
        assert_eq!(mask.count(), 5);
    }

    #[test]
    fn sequential_mask_gates_on_visited_trigger() {
        let state = state_from("WWWWWW\nW~AG.W\nW...BW\nWWWWWW");
        let obs = state.observe();
        let spec = ConstraintSpec::sequential(EntityKind::Grass, EntityKind::Water, 0).unwrap();
        let before = ground_truth_mask(&obs, &spec, state.visited_kinds());
        assert_eq!(before.count(), 0);

        let mut visited = state.visited_kinds().clone();
        visited.insert(EntityKind::Grass);
        let after = ground_truth_mask(&obs, &spec, &visited);
        assert_eq!(after.count(), 1);
        assert!(after.get(3, 2));
    }

    #[test]
    fn merge_masks_is_elementwise_or() {
        let mut a = Mask::zero();
        a.set(0, 0, true);
        a.set(1, 1, true);
        let mut b = Mask::zero();
        b.set(1, 1, true);
        b.set(2, 2, true);
        let merged = merge_masks(&[a, b]).unwrap();
        assert_eq!(merged.count(), 3);
        assert!(merged.get(0, 0) && merged.get(1, 1) && merged.get(2, 2));
        assert_eq!(merge_masks(&[]).unwrap_err(), ConstraintError::EmptyMaskList);
    }

    #[test]
    fn budget_mask_paints_signed_slack_on_masked_cells() {
        let mut mask = Mask::zero();
        mask.set(2, 3, true);
        mask.set(4, 4, true);
        let under = budget_mask(&mask, 1.0, 3.0);
        assert_eq!(under.get(2, 3), -2.0);
        assert_eq!(under.get(4, 4), -2.0);
        assert_eq!(under.get(0, 0), 0.0);
        let over = budget_mask(&mask, 5.0, 3.0);
        assert_eq!(over.get(2, 3), 2.0);
    }

    #[test]
    fn cost_trace_tracks_cumulative_and_excess() {
        let mut trace = CostTrace::new();
        for cost in [0.0, 1.0, 1.0, 0.0, 1.0] {
            trace.push(cost);
        }
        assert_eq!(trace.cumulative(), 3.0);
        assert_eq!(trace.excess(2.0), 1.0);
        assert_eq!(trace.excess(5.0), 0.0);
    }

    #[test]
    fn dsl_printing_is_canonical() {
        assert_eq!(
            ConstraintSpec::budgetary(EntityKind::Lava, 5).unwrap().to_dsl(),
            "budget(entity=lava, max=5)"
        );
        assert_eq!(
            ConstraintSpec::relational(EntityKind::Water, 2, 0).unwrap().to_dsl(),
            "relation(entity=water, distance=2)"
        );
        assert_eq!(
            ConstraintSpec::sequential(EntityKind::Grass, EntityKind::Water, 0)
                .unwrap()
                .to_dsl(),
            "sequence(trigger=grass, forbidden=water)"
        );
        assert_eq!(
            ConstraintSpec::sequential(EntityKind::Grass, EntityKind::Water, 2)
                .unwrap()
                .to_dsl(),
            "sequence(trigger=grass, forbidden=water, max=2)"
        );
    }

    #[test]
    fn default_pool_has_expected_composition() {
        let pool = ConstraintSpec::default_pool();
        assert_eq!(pool.len(), 30);
        let budgetary = pool.iter().filter(|s| s.variant() == Variant::Budgetary).count();
        let relational = pool.iter().filter(|s| s.variant() == Variant::Relational).count();
        let sequential = pool.iter().filter(|s| s.variant() == Variant::Sequential).count();
        assert_eq!((budgetary, relational, sequential), (18, 6, 6));
        for spec in &pool {
            spec.validate().unwrap();
        }
    }
}
