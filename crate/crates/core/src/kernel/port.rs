use serde::{Deserialize, Serialize};

use super::app::BlockId;
use super::clock::{ClockDomain, Timestamp};

/// Payload types a port can carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueType {
    Int,
    Float,
    IntArray,
    Stamped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Int(i64),
    Float(f64),
    IntArray(Vec<i64>),
    /// An integer together with the time its producer started its step.
    Stamped { value: i64, stamp: Timestamp },
}

impl Value {
    pub fn ty(&self) -> ValueType {
        match self {
            Value::Int(_) => ValueType::Int,
            Value::Float(_) => ValueType::Float,
            Value::IntArray(_) => ValueType::IntArray,
            Value::Stamped { .. } => ValueType::Stamped,
        }
    }

    pub fn default_for(ty: ValueType) -> Value {
        match ty {
            ValueType::Int => Value::Int(0),
            ValueType::Float => Value::Float(0.0),
            ValueType::IntArray => Value::IntArray(Vec::new()),
            ValueType::Stamped => Value::Stamped {
                value: 0,
                stamp: Timestamp { ns: 0, domain: ClockDomain::HostMonotonic },
            },
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match *self {
            Value::Int(v) | Value::Stamped { value: v, .. } => Some(v),
            _ => None,
        }
    }

    pub fn as_float(&self) -> Option<f64> {
        match *self {
            Value::Float(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[i64]> {
        match self {
            Value::IntArray(v) => Some(v),
            _ => None,
        }
    }

    pub fn stamp(&self) -> Option<Timestamp> {
        match *self {
            Value::Stamped { stamp, .. } => Some(stamp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Input,
    Output,
}

/// Port declaration made by a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PortSpec {
    pub name: &'static str,
    pub direction: Direction,
    pub ty: ValueType,
}

impl PortSpec {
    pub const fn input(name: &'static str, ty: ValueType) -> Self {
        PortSpec { name, direction: Direction::Input, ty }
    }

    pub const fn output(name: &'static str, ty: ValueType) -> Self {
        PortSpec { name, direction: Direction::Output, ty }
    }
}

/// Latest value seen at a port. Unwritten ports hold the type's default.
#[derive(Debug, Clone, PartialEq)]
pub struct PortValue {
    pub value: Value,
    pub written_cycle: Option<u64>,
}

impl PortValue {
    fn unset(ty: ValueType) -> Self {
        PortValue { value: Value::default_for(ty), written_cycle: None }
    }

    pub fn is_set(&self) -> bool {
        self.written_cycle.is_some()
    }

    pub fn is_fresh(&self, cycle: u64) -> bool {
        self.written_cycle == Some(cycle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PortId(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) struct PortSlot {
    pub owner: BlockId,
    pub spec: PortSpec,
    pub value: PortValue,
    /// Inputs: the output feeding this port.
    pub source: Option<PortId>,
    /// Outputs: number of channels leaving this port.
    pub fanout: usize,
}

/// Storage for every port of an application.
#[derive(Debug, Clone, Default)]
pub(crate) struct PortTable {
    slots: Vec<PortSlot>,
}

impl PortTable {
    pub fn add(&mut self, owner: BlockId, spec: PortSpec) -> PortId {
        self.slots.push(PortSlot {
            owner,
            spec,
            value: PortValue::unset(spec.ty),
            source: None,
            fanout: 0,
        });
        PortId(self.slots.len() - 1)
    }

    pub fn slot(&self, id: PortId) -> &PortSlot {
        &self.slots[id.0]
    }

    pub fn slot_mut(&mut self, id: PortId) -> &mut PortSlot {
        &mut self.slots[id.0]
    }

    pub fn is_connected(&self, id: PortId) -> bool {
        let slot = self.slot(id);
        match slot.spec.direction {
            Direction::Input => slot.source.is_some(),
            Direction::Output => slot.fanout > 0,
        }
    }

    /// Reads through the channel for inputs; outputs read their own slot.
    pub fn read(&self, id: PortId) -> &PortValue {
        let slot = self.slot(id);
        match slot.source {
            Some(src) => &self.slot(src).value,
            None => &slot.value,
        }
    }

    pub fn write(&mut self, id: PortId, value: Value, cycle: u64) {
        self.slot_mut(id).value = PortValue { value, written_cycle: Some(cycle) };
    }
}
