use crate::interpolation::InterpolationOutcome;
use crate::transition::FlatVector;

/// A training batch ready for the learner.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingBatch {
    pub flats: Vec<FlatVector>,
    pub dones: Vec<bool>,
    /// All 1 except under prioritized replay.
    pub importance_weights: Vec<f64>,
    /// Slot each item was sampled from; prioritized replay feeds TD errors back here.
    pub source_slots: Vec<usize>,
    pub partner_slots: Vec<Option<usize>>,
    pub interpolated: Vec<bool>,
    pub lambdas: Vec<f64>,
}

impl TrainingBatch {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            flats: Vec::with_capacity(n),
            dones: Vec::with_capacity(n),
            importance_weights: Vec::with_capacity(n),
            source_slots: Vec::with_capacity(n),
            partner_slots: Vec::with_capacity(n),
            interpolated: Vec::with_capacity(n),
            lambdas: Vec::with_capacity(n),
        }
    }

    pub fn from_outcomes(outcomes: Vec<InterpolationOutcome>) -> Self {
        let mut batch = Self::with_capacity(outcomes.len());
        for o in outcomes {
            batch.push(o, 1.0);
        }
        batch
    }

    pub fn push(&mut self, o: InterpolationOutcome, weight: f64) {
        self.flats.push(o.flat);
        self.dones.push(o.done);
        self.importance_weights.push(weight);
        self.source_slots.push(o.sample_slot);
        self.partner_slots.push(o.partner_slot);
        self.interpolated.push(o.was_interpolated);
        self.lambdas.push(o.lambda_used);
    }

    pub fn len(&self) -> usize {
        self.flats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flats.is_empty()
    }

    /// Contiguous row-major copy of all flat rows.
    pub fn flat_matrix(&self) -> Vec<f64> {
        self.flats.iter().flat_map(|f| f.as_slice().iter().copied()).collect()
    }
}
