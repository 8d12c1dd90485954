use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribute_space::AttributeSpace;
use crate::error::{CoindError, Result};

/// Per-attribute condition: a value index or the null token (`None`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ConditionVector(pub Vec<Option<usize>>);

impl ConditionVector {
    pub fn null(n: usize) -> Self {
        Self(vec![None; n])
    }

    pub fn full(c: &[usize]) -> Self {
        Self(c.iter().map(|&v| Some(v)).collect())
    }

    /// Only attribute `i` set, everything else null.
    pub fn only(n: usize, i: usize, v: usize) -> Self {
        let mut out = Self::null(n);
        out.0[i] = Some(v);
        out
    }

    /// Keeps the listed attributes of a full composition, nulls the rest.
    pub fn keep(c: &[usize], keep: &[usize]) -> Self {
        Self(
            c.iter()
                .enumerate()
                .map(|(k, &v)| keep.contains(&k).then_some(v))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_null(&self) -> bool {
        self.0.iter().all(Option::is_none)
    }

    pub fn set_attributes(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter_map(|(k, v)| v.map(|_| k))
            .collect()
    }

    pub fn validate(&self, space: &AttributeSpace) -> Result<()> {
        if self.len() != space.n_attributes() {
            return Err(CoindError::Shape(format!(
                "condition has {} slots, space has {} attributes",
                self.len(),
                space.n_attributes()
            )));
        }
        for (i, v) in self.0.iter().enumerate() {
            if let Some(v) = v {
                if *v >= space.cardinality(i) {
                    return Err(CoindError::Shape(format!(
                        "condition value {v} for attribute {i} outside 0..{}",
                        space.cardinality(i)
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether a full composition agrees with every set slot.
    pub fn matches(&self, c: &[usize]) -> bool {
        self.0.iter().zip(c).all(|(s, &v)| s.is_none_or(|s| s == v))
    }

    pub fn to_conditioning(&self) -> Conditioning {
        Conditioning(
            self.0
                .iter()
                .map(|v| match v {
                    Some(v) => Slot::Value(*v),
                    None => Slot::Null,
                })
                .collect(),
        )
    }
}

impl fmt::Display for ConditionVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .0
            .iter()
            .map(|v| v.map_or_else(|| "∅".to_string(), |v| v.to_string()))
            .collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Independently replaces each slot by null with probability `p_uncond`.
pub fn mask_condition<R: Rng + ?Sized>(
    cond: &ConditionVector,
    p_uncond: f64,
    rng: &mut R,
) -> ConditionVector {
    ConditionVector(
        cond.0
            .iter()
            .map(|&v| if rng.gen::<f64>() < p_uncond { None } else { v })
            .collect(),
    )
}

/// What the network sees for one attribute slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Slot {
    Null,
    Value(usize),
    /// `(1 - alpha) emb(from) + alpha emb(to)`.
    Blend { from: usize, to: usize, alpha: f64 },
}

/// Conditioning handle consumed by noise predictors.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning(pub Vec<Slot>);

impl From<&ConditionVector> for Conditioning {
    fn from(c: &ConditionVector) -> Self {
        c.to_conditioning()
    }
}

impl From<ConditionVector> for Conditioning {
    fn from(c: ConditionVector) -> Self {
        c.to_conditioning()
    }
}

/// Handle that linearly interpolates one attribute between two values.
pub fn interpolate_condition(
    cond_a: &ConditionVector,
    cond_b: &ConditionVector,
    alpha: f64,
) -> Result<Conditioning> {
    if cond_a.len() != cond_b.len() {
        return Err(CoindError::Shape("conditions differ in length".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CoindError::InvalidParam(format!("alpha {alpha} outside [0, 1]")));
    }
    let differing: Vec<usize> = (0..cond_a.len()).filter(|&k| cond_a.0[k] != cond_b.0[k]).collect();
    let [k] = differing.as_slice() else {
        return Err(CoindError::InvalidParam(format!(
            "conditions must differ in exactly one attribute, differ in {}",
            differing.len()
        )));
    };
    let (Some(from), Some(to)) = (cond_a.0[*k], cond_b.0[*k]) else {
        return Err(CoindError::InvalidParam(
            "interpolated attribute must be set in both conditions".into(),
        ));
    };
    let mut slots = cond_a.to_conditioning();
    slots.0[*k] = Slot::Blend { from, to, alpha };
    Ok(slots)
}
