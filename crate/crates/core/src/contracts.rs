//! Functional Design-by-Contract primitives.
//!
//! Contracts never abort a block: a failed predicate becomes a
//! [`ContractViolation`] record that the kernel queues for slack-time logging.
//! Real-time kinds share the same record type but carry a measured/bound pair.

use std::any::Any;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every contract kind the framework can evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ContractKind {
    Precondition,
    Postcondition,
    ClassInvariant,
    LoopInvariant,
    LoopVariant,
    ExecTime,
    CycleTime,
    Jitter,
    Completion,
}

impl ContractKind {
    pub const ALL: [ContractKind; 9] = [
        ContractKind::Precondition,
        ContractKind::Postcondition,
        ContractKind::ClassInvariant,
        ContractKind::LoopInvariant,
        ContractKind::LoopVariant,
        ContractKind::ExecTime,
        ContractKind::CycleTime,
        ContractKind::Jitter,
        ContractKind::Completion,
    ];

    /// Real-time kinds carry a measured/bound pair; functional kinds do not.
    pub fn is_real_time(self) -> bool {
        matches!(
            self,
            ContractKind::ExecTime
                | ContractKind::CycleTime
                | ContractKind::Jitter
                | ContractKind::Completion
        )
    }

    pub fn is_functional(self) -> bool {
        !self.is_real_time()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ContractKind::Precondition => "Precondition",
            ContractKind::Postcondition => "Postcondition",
            ContractKind::ClassInvariant => "ClassInvariant",
            ContractKind::LoopInvariant => "LoopInvariant",
            ContractKind::LoopVariant => "LoopVariant",
            ContractKind::ExecTime => "ExecTime",
            ContractKind::CycleTime => "CycleTime",
            ContractKind::Jitter => "Jitter",
            ContractKind::Completion => "Completion",
        }
    }

    pub(crate) fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

impl fmt::Display for ContractKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ContractKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ContractKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown contract kind `{s}`"))
    }
}

/// Measured value and bound of a failed real-time contract, both in ns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtMeasure {
    pub measured_ns: f64,
    pub bound_ns: f64,
}

/// A failed contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractViolation {
    pub kind: ContractKind,
    pub block: String,
    pub cycle: u64,
    pub label: String,
    pub message: String,
    pub measure: Option<RtMeasure>,
    /// Clock reading at the phase the contract was evaluated in.
    pub at_ns: u64,
}

impl ContractViolation {
    pub fn functional(kind: ContractKind, label: &str, message: String, ctx: CheckContext<'_>) -> Self {
        debug_assert!(kind.is_functional());
        ContractViolation {
            kind,
            block: ctx.block.to_owned(),
            cycle: ctx.cycle,
            label: label.to_owned(),
            message,
            measure: None,
            at_ns: ctx.at_ns,
        }
    }

    pub fn real_time(
        kind: ContractKind,
        label: &str,
        message: String,
        measure: RtMeasure,
        ctx: CheckContext<'_>,
    ) -> Self {
        debug_assert!(kind.is_real_time());
        ContractViolation {
            kind,
            block: ctx.block.to_owned(),
            cycle: ctx.cycle,
            label: label.to_owned(),
            message,
            measure: Some(measure),
            at_ns: ctx.at_ns,
        }
    }
}

/// Where and when a contract is evaluated.
#[derive(Debug, Clone, Copy)]
pub struct CheckContext<'a> {
    pub block: &'a str,
    pub cycle: u64,
    pub at_ns: u64,
}

/// Turns a functional predicate result into an optional violation.
pub fn check(kind: ContractKind, label: &str, holds: bool, ctx: CheckContext<'_>) -> Option<ContractViolation> {
    if holds {
        return None;
    }
    Some(ContractViolation::functional(
        kind,
        label,
        format!("{kind} `{label}` failed"),
        ctx,
    ))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OldStoreError {
    #[error("label `{0}` already captured this cycle")]
    DuplicateLabel(String),
    #[error("label `{0}` was not captured this cycle")]
    UnknownLabel(String),
    #[error("label `{label}` holds a `{stored}`, not the requested type")]
    TypeMismatch { label: String, stored: &'static str },
}

struct Captured {
    value: Box<dyn Any + Send>,
    type_name: &'static str,
}

/// Per-block storage for values captured at step entry and read back in
/// postconditions. Cleared at the end of every cycle.
#[derive(Default)]
pub struct OldStore {
    slots: HashMap<String, Captured>,
}

impl OldStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stores an owned copy of `value` under `label`.
    pub fn capture<T: Clone + Send + 'static>(&mut self, label: &str, value: &T) -> Result<(), OldStoreError> {
        if self.slots.contains_key(label) {
            return Err(OldStoreError::DuplicateLabel(label.to_owned()));
        }
        self.slots.insert(
            label.to_owned(),
            Captured {
                value: Box::new(value.clone()),
                type_name: std::any::type_name::<T>(),
            },
        );
        Ok(())
    }

    pub fn get<T: Clone + 'static>(&self, label: &str) -> Result<T, OldStoreError> {
        let slot = self
            .slots
            .get(label)
            .ok_or_else(|| OldStoreError::UnknownLabel(label.to_owned()))?;
        slot.value
            .downcast_ref::<T>()
            .cloned()
            .ok_or_else(|| OldStoreError::TypeMismatch {
                label: label.to_owned(),
                stored: slot.type_name,
            })
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    /// Ends the capture scope.
    pub fn clear(&mut self) {
        self.slots.clear();
    }
}

impl fmt::Debug for OldStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.slots.keys()).finish()
    }
}

/// Tracks the previous variant value of one loop execution.
#[derive(Debug, Clone)]
pub struct LoopMonitor {
    label: &'static str,
    prev_variant: Option<i64>,
}

impl LoopMonitor {
    pub fn new(label: &'static str) -> Self {
        LoopMonitor { label, prev_variant: None }
    }

    pub fn label(&self) -> &'static str {
        self.label
    }

    pub fn prev_variant(&self) -> Option<i64> {
        self.prev_variant
    }

    /// Checks one iteration. The invariant and the variant are reported
    /// separately so each failure carries its own kind.
    pub fn check(&mut self, invariant: bool, variant: i64, ctx: CheckContext<'_>) -> LoopVerdict {
        let verdict = loop_check(self.label, invariant, variant, self.prev_variant, ctx);
        self.prev_variant = Some(variant);
        verdict
    }
}

/// Outcome of one loop iteration check.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LoopVerdict {
    pub invariant: Option<ContractViolation>,
    pub variant: Option<ContractViolation>,
}

impl LoopVerdict {
    pub fn is_clean(&self) -> bool {
        self.invariant.is_none() && self.variant.is_none()
    }

    pub fn into_iter(self) -> impl Iterator<Item = ContractViolation> {
        self.invariant.into_iter().chain(self.variant)
    }
}

/// A variant must stay nonnegative and strictly decrease between iterations.
pub fn loop_check(
    label: &str,
    invariant: bool,
    variant: i64,
    prev_variant: Option<i64>,
    ctx: CheckContext<'_>,
) -> LoopVerdict {
    let invariant = (!invariant).then(|| {
        ContractViolation::functional(
            ContractKind::LoopInvariant,
            label,
            format!("loop invariant `{label}` failed"),
            ctx,
        )
    });
    let variant = if variant < 0 {
        Some(format!("loop variant `{label}` is negative ({variant})"))
    } else {
        match prev_variant {
            Some(prev) if variant >= prev => {
                Some(format!("loop variant `{label}` did not decrease ({prev} -> {variant})"))
            }
            _ => None,
        }
    }
    .map(|message| ContractViolation::functional(ContractKind::LoopVariant, label, message, ctx));
    LoopVerdict { invariant, variant }
}
