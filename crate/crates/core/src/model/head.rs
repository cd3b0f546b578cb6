//! Expandable softmax classifier head.
//!
//! One weight row and bias per registered class, in registration order.
//! Expansion appends freshly initialized rows; removal drops rows without
//! touching the survivors, so expand-then-remove is an exact identity.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::corpus::RelId;
use crate::seeding::{self, ns};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierHead {
    pub input_dim: usize,
    classes: Vec<RelId>,
    weights: Vec<Vec<f64>>,
    biases: Vec<f64>,
}

impl ClassifierHead {
    pub fn new(input_dim: usize) -> Self {
        ClassifierHead {
            input_dim,
            classes: Vec::new(),
            weights: Vec::new(),
            biases: Vec::new(),
        }
    }

    /// Registered class ids in registration order.
    pub fn classes(&self) -> &[RelId] {
        &self.classes
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn contains(&self, id: RelId) -> bool {
        self.classes.contains(&id)
    }

    pub fn position(&self, id: RelId) -> Option<usize> {
        self.classes.iter().position(|c| *c == id)
    }

    pub fn row(&self, pos: usize) -> (&[f64], f64) {
        (&self.weights[pos], self.biases[pos])
    }

    pub fn logits(&self, rep: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .map(|(w, b)| w.iter().zip(rep).map(|(wi, ri)| wi * ri).sum::<f64>() + b)
            .collect()
    }

    pub(crate) fn apply_grads(&mut self, grad_w: &[Vec<f64>], grad_b: &[f64], lr: f64) {
        for ((w, gw), (b, gb)) in self
            .weights
            .iter_mut()
            .zip(grad_w)
            .zip(self.biases.iter_mut().zip(grad_b))
        {
            for (wi, gi) in w.iter_mut().zip(gw) {
                *wi -= lr * gi;
            }
            *b -= lr * gb;
        }
    }
}

/// Append rows for `new_ids` with seeded uniform(-init_scale, init_scale)
/// values. Existing rows are untouched.
pub fn expand_classes(
    head: &ClassifierHead,
    new_ids: &[RelId],
    init_scale: f64,
    seed: u64,
) -> Result<ClassifierHead, ModelError> {
    let mut out = head.clone();
    let mut rng = seeding::rng(seed, &[ns::HEAD_INIT]);
    for &id in new_ids {
        if out.contains(id) {
            return Err(ModelError::DuplicateClass(id));
        }
        let row: Vec<f64> = (0..head.input_dim)
            .map(|_| {
                if init_scale == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-init_scale..init_scale)
                }
            })
            .collect();
        out.classes.push(id);
        out.weights.push(row);
        out.biases.push(0.0);
    }
    Ok(out)
}

/// Drop the rows of `ids`; surviving rows keep their exact values and order.
pub fn remove_classes(head: &ClassifierHead, ids: &[RelId]) -> Result<ClassifierHead, ModelError> {
    for &id in ids {
        if !head.contains(id) {
            return Err(ModelError::UnknownClass(id));
        }
    }
    let mut out = ClassifierHead::new(head.input_dim);
    for (pos, &class) in head.classes.iter().enumerate() {
        if !ids.contains(&class) {
            out.classes.push(class);
            out.weights.push(head.weights[pos].clone());
            out.biases.push(head.biases[pos]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(head: &ClassifierHead) -> Vec<Vec<u64>> {
        head.weights
            .iter()
            .map(|row| row.iter().map(|v| v.to_bits()).collect())
            .collect()
    }

    #[test]
    fn expand_appends_without_touching_existing_rows() {
        let head = expand_classes(&ClassifierHead::new(4), &[0, 1, 2, 3, 4], 0.1, 9).unwrap();
        let before = bits(&head);
        let grown = expand_classes(&head, &[5, 6], 0.1, 10).unwrap();
        assert_eq!(grown.len(), 7);
        assert_eq!(&bits(&grown)[..5], &before[..]);
    }

    #[test]
    fn expand_by_nothing_is_identity() {
        let head = expand_classes(&ClassifierHead::new(4), &[0, 1], 0.1, 9).unwrap();
        let same = expand_classes(&head, &[], 0.1, 99).unwrap();
        assert_eq!(head, same);
    }

    #[test]
    fn zero_init_scale_gives_zero_rows() {
        let head = expand_classes(&ClassifierHead::new(3), &[7], 0.0, 1).unwrap();
        assert_eq!(head.row(0).0, &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn duplicate_and_unknown_ids_error() {
        let head = expand_classes(&ClassifierHead::new(2), &[1], 0.1, 1).unwrap();
        assert!(matches!(
            expand_classes(&head, &[1], 0.1, 2),
            Err(ModelError::DuplicateClass(1))
        ));
        assert!(matches!(
            remove_classes(&head, &[9]),
            Err(ModelError::UnknownClass(9))
        ));
    }

    #[test]
    fn expand_then_remove_is_bitwise_identity() {
        let head = expand_classes(&ClassifierHead::new(8), &[0, 1, 2], 0.1, 5).unwrap();
        let grown = expand_classes(&head, &[10, 11, 12], 0.1, 6).unwrap();
        let back = remove_classes(&grown, &[10, 11, 12]).unwrap();
        assert_eq!(head.classes(), back.classes());
        assert_eq!(bits(&head), bits(&back));
        assert_eq!(head.biases, back.biases);
    }

    #[test]
    fn remove_empty_list_is_identity() {
        let head = expand_classes(&ClassifierHead::new(2), &[3, 4], 0.1, 5).unwrap();
        assert_eq!(remove_classes(&head, &[]).unwrap(), head);
    }
}
