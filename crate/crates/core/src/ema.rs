//! Online parameters and their slow-moving average.
//!
//! The online vector is what the optimizer trains. The average vector follows
//! it as `average <- m * average + (1 - m) * online` once per iteration and is
//! only ever used to encode features that go into the memory bank; nothing
//! in the crate computes gradients for it.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::all_finite;

/// Flat concatenation of all trainable encoder parameters. The order is fixed
/// by [`crate::model::Encoder`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParameterVector(Vec<f64>);

impl ParameterVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !all_finite(&values) {
            return Err(Error::NonFinite("parameter vector"));
        }
        Ok(ParameterVector(values))
    }

    pub fn zeros(len: usize) -> Self {
        ParameterVector(alloc::vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// FNV-1a over the bit patterns; used to assert that a vector did not change.
    pub fn checksum(&self) -> u64 {
        self.0.iter().fold(0xcbf2_9ce4_8422_2325, |h, v| {
            v.to_bits().to_le_bytes().iter().fold(h, |h, b| {
                (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
            })
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualEncoderState {
    online: ParameterVector,
    average: ParameterVector,
    momentum: f64,
}

impl DualEncoderState {
    /// The average starts as an exact copy of `online`.
    pub fn new(online: ParameterVector, momentum: f64) -> Result<Self> {
        check_momentum(momentum)?;
        Ok(DualEncoderState {
            average: online.clone(),
            online,
            momentum,
        })
    }

    /// Rebuilds a state from stored vectors (e.g. a checkpoint).
    pub fn from_parts(
        online: ParameterVector,
        average: ParameterVector,
        momentum: f64,
    ) -> Result<Self> {
        check_momentum(momentum)?;
        if online.len() != average.len() {
            return Err(Error::LengthMismatch {
                expected: online.len(),
                found: average.len(),
            });
        }
        Ok(DualEncoderState {
            online,
            average,
            momentum,
        })
    }

    pub fn online(&self) -> &ParameterVector {
        &self.online
    }

    pub fn average(&self) -> &ParameterVector {
        &self.average
    }

    pub fn momentum(&self) -> f64 {
        self.momentum
    }

    /// Mutable access for the optimizer. The average is untouched until
    /// [`advance_average`](Self::advance_average) runs.
    pub fn online_mut(&mut self) -> &mut ParameterVector {
        &mut self.online
    }

    /// Replaces the online parameters with `new_online` and moves the average
    /// toward them.
    pub fn update(&mut self, new_online: &[f64]) -> Result<()> {
        if new_online.len() != self.online.len() {
            return Err(Error::LengthMismatch {
                expected: self.online.len(),
                found: new_online.len(),
            });
        }
        if !all_finite(new_online) {
            return Err(Error::NonFinite("online parameters"));
        }
        self.online.0.copy_from_slice(new_online);
        self.blend();
        Ok(())
    }

    /// Moves the average toward the current online parameters, after they
    /// were modified in place through [`online_mut`](Self::online_mut).
    pub fn advance_average(&mut self) -> Result<()> {
        if !all_finite(&self.online.0) {
            return Err(Error::NonFinite("online parameters"));
        }
        self.blend();
        Ok(())
    }

    fn blend(&mut self) {
        let m = self.momentum;
        for (avg, theta) in self.average.0.iter_mut().zip(&self.online.0) {
            *avg = m * *avg + (1.0 - m) * theta;
        }
    }
}

fn check_momentum(m: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::invalid("momentum", "must lie in [0, 1]"));
    }
    Ok(())
}
