use ndarray::Array2;

use super::{cast, NnError, Scalar};
use crate::tok::ModelInput;

fn check<T: Scalar>(logits: &Array2<T>, input: &ModelInput) -> Result<Vec<usize>, NnError> {
    if logits.nrows() != input.len() || input.answer_mask.len() != input.len() {
        return Err(NnError::ShapeMismatch(format!("{} logit rows for {} tokens", logits.nrows(), input.len())));
    }
    let targets: Vec<usize> = (1..input.len()).filter(|&t| input.answer_mask[t]).collect();
    if targets.is_empty() {
        return Err(NnError::EmptyAnswerMask);
    }
    Ok(targets)
}

/// `-log softmax(row)[target]` and the softmax itself.
fn nll_row<T: Scalar>(logits: &Array2<T>, row: usize, target: usize) -> (T, Vec<T>) {
    let r = logits.row(row);
    let m = r.fold(T::neg_infinity(), |a, &b| a.max(b));
    let exps: Vec<T> = r.iter().map(|&v| (v - m).exp()).collect();
    let z = exps.iter().fold(T::zero(), |a, &b| a + b);
    let nll = z.ln() + m - r[target];
    (nll, exps.into_iter().map(|e| e / z).collect())
}

/// Mean next-token cross-entropy over the answer positions: token `t` is
/// predicted from the logits at `t - 1`.
pub fn loss<T: Scalar>(logits: &Array2<T>, input: &ModelInput) -> Result<T, NnError> {
    let targets = check(logits, input)?;
    let n: T = cast(targets.len() as f64);
    let total = targets.iter().fold(T::zero(), |acc, &t| acc + nll_row(logits, t - 1, input.token_ids[t]).0);
    Ok(total / n)
}

/// The loss and its gradient with respect to the logits.
pub fn loss_and_grad<T: Scalar>(logits: &Array2<T>, input: &ModelInput) -> Result<(T, Array2<T>), NnError> {
    let targets = check(logits, input)?;
    let n: T = cast(targets.len() as f64);
    let mut total = T::zero();
    let mut d = Array2::zeros(logits.dim());
    for &t in &targets {
        let target = input.token_ids[t];
        let (nll, probs) = nll_row(logits, t - 1, target);
        total += nll;
        let mut row = d.row_mut(t - 1);
        for (o, p) in row.iter_mut().zip(probs) {
            *o += p / n;
        }
        row[target] -= T::one() / n;
    }
    Ok((total / n, d))
}
