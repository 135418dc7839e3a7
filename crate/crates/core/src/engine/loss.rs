use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Debug)]
pub struct SoftmaxXent<F = f32> {
    /// Mean cross-entropy over the batch.
    pub loss: F,
    /// `(n, classes)` row-wise softmax probabilities.
    pub probs: Tensor<F>,
}

pub fn softmax_xent<F: Scalar>(logits: &Tensor<F>, labels: &[usize]) -> Result<SoftmaxXent<F>> {
    let (n, k) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_xent",
            format!("{n} logit rows, {} labels", labels.len()),
        ));
    }
    let mut probs = Vec::with_capacity(n * k);
    let mut total = F::zero();
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {k} classes"
            )));
        }
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let sum = row.iter().fold(F::zero(), |acc, &v| acc + (v - max).exp());
        let log_sum = sum.ln();
        total = total + (log_sum - (row[label] - max));
        probs.extend(row.iter().map(|&v| (v - max).exp() / sum));
    }
    Ok(SoftmaxXent {
        loss: total / F::from_f64(n as f64),
        probs: Tensor::new(vec![n, k], probs)?,
    })
}

/// Gradient of the mean loss with respect to the logits.
pub fn softmax_xent_backward<F: Scalar>(probs: &Tensor<F>, labels: &[usize]) -> Result<Tensor<F>> {
    let (n, k) = probs.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(
            "softmax_xent_backward",
            format!("{n} rows, {} labels", labels.len()),
        ));
    }
    let scale = F::one() / F::from_f64(n as f64);
    let mut g = probs.data().to_vec();
    for (row, &label) in g.chunks_mut(k).zip(labels) {
        row[label] = row[label] - F::one();
        for v in row.iter_mut() {
            *v = *v * scale;
        }
    }
    Tensor::new(vec![n, k], g)
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_rows<F: Scalar>(logits: &Tensor<F>) -> Result<Vec<usize>> {
    let (_, k) = logits.dims2()?;
    Ok(logits
        .data()
        .chunks(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
        })
        .collect())
}
