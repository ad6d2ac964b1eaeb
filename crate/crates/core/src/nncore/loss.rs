use super::network::PROB_EPS;
use crate::error::{Error, Result};

/// Masked binary cross-entropy.
#[derive(Clone, Debug, PartialEq)]
pub struct BceOutput {
    /// Mean negative log-likelihood over selected entries, 0 when none are selected.
    pub loss: f64,
    /// Gradient with respect to the pre-logistic value of each entry.
    pub grad: Vec<f64>,
    pub selected: usize,
}

impl BceOutput {
    pub fn is_empty(&self) -> bool {
        self.selected == 0
    }
}

/// Mean binary cross-entropy over entries with `mask[i] == true`.
///
/// Probabilities are clamped to `[1e-7, 1 - 1e-7]` before taking logs. The
/// returned gradient is `(p - y) / n_selected`, the derivative with respect to
/// the logit, and is zero on masked-out entries.
pub fn bce_loss(probabilities: &[f64], labels: &[u8], mask: &[bool]) -> Result<BceOutput> {
    let n = probabilities.len();
    if labels.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "bce inputs have lengths {}, {}, {}",
            n,
            labels.len(),
            mask.len()
        )));
    }
    let selected = mask.iter().filter(|&&m| m).count();
    let mut grad = vec![0.0; n];
    if selected == 0 {
        return Ok(BceOutput {
            loss: 0.0,
            grad,
            selected,
        });
    }
    let scale = 1.0 / selected as f64;
    let mut total = 0.0;
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let p = probabilities[i].clamp(PROB_EPS, 1.0 - PROB_EPS);
        let y = match labels[i] {
            0 => 0.0,
            1 => 1.0,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "label {other} at position {i} is not binary"
                )))
            }
        };
        total -= if y == 1.0 { p.ln() } else { (1.0 - p).ln() };
        grad[i] = (p - y) * scale;
    }
    Ok(BceOutput {
        loss: total * scale,
        grad,
        selected,
    })
}
