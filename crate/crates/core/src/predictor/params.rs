//! Flat parameter storage with a named slot map.

use rand::Rng;

use crate::autograd::Tensor;
use crate::error::{shape, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    /// `U(−bound, bound)`.
    Uniform(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSlot {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
    pub init: Init,
}

impl ParamSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

/// Ordered list of parameter slots packed back to back.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    slots: Vec<ParamSlot>,
    total: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a slot and returns its index.
    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, init: Init) -> usize {
        let slot = ParamSlot { name: name.into(), offset: self.total, rows, cols, init };
        self.total += slot.len();
        self.slots.push(slot);
        self.slots.len() - 1
    }

    pub fn slots(&self) -> &[ParamSlot] {
        &self.slots
    }

    pub fn slot(&self, idx: usize) -> &ParamSlot {
        &self.slots[idx]
    }

    /// Total scalar parameter count.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Draws initial values according to each slot's [`Init`].
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> PredictorParams {
        let mut values = vec![0.0; self.total];
        for slot in &self.slots {
            let dst = &mut values[slot.range()];
            match slot.init {
                Init::Zeros => {}
                Init::Ones => dst.iter_mut().for_each(|v| *v = 1.0),
                Init::Uniform(b) => dst.iter_mut().for_each(|v| *v = rng.gen_range(-b..=b)),
            }
        }
        PredictorParams { values }
    }
}

/// Every learnable weight of the predictor, flattened in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    values: Vec<f64>,
}

impl PredictorParams {
    pub fn from_values(layout: &ParamLayout, values: Vec<f64>) -> Result<Self> {
        if values.len() != layout.total() {
            return Err(shape(format!(
                "parameter vector has {} values, layout needs {}",
                values.len(),
                layout.total()
            )));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn tensor(&self, slot: &ParamSlot) -> Tensor {
        Tensor::new(slot.rows, slot.cols, self.values[slot.range()].to_vec())
    }

    pub fn slice(&self, slot: &ParamSlot) -> &[f64] {
        &self.values[slot.range()]
    }

    pub fn slice_mut(&mut self, slot: &ParamSlot) -> &mut [f64] {
        &mut self.values[slot.range()]
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn slots_pack_contiguously() {
        let mut layout = ParamLayout::new();
        let a = layout.add("a", 2, 3, Init::Ones);
        let b = layout.add("b", 4, 1, Init::Zeros);
        let c = layout.add("c", 1, 5, Init::Uniform(0.1));
        assert_eq!(layout.slot(b).offset, 6);
        assert_eq!(layout.slot(c).offset, 10);
        assert_eq!(layout.total(), 15);
        let p = layout.init(&mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(p.slice(layout.slot(a)), &[1.0; 6]);
        assert_eq!(p.slice(layout.slot(b)), &[0.0; 4]);
        assert!(p.slice(layout.slot(c)).iter().all(|v| v.abs() <= 0.1));
        assert!(PredictorParams::from_values(&layout, vec![0.0; 3]).is_err());
    }
}
