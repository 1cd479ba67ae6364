use crate::{Error, Result, Tensor};

/// Row-wise softmax of `(n, classes)` logits.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (_, c) = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let mut z = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(Tensor::from_parts(logits.shape().to_vec(), out))
}

/// Mean cross-entropy of softmax(logits) against class labels, with its
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Shape(format!("{n} logit rows but {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Index(format!("label {bad} with {c} classes")));
    }
    if !logits.is_finite() {
        return Err(Error::InvalidValue("non-finite logits".into()));
    }
    let mut grad = logits.data().to_vec();
    let mut total = 0.0;
    for (row, &label) in grad.chunks_mut(c).zip(labels) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[label];
        for v in row.iter_mut() {
            *v = (*v - lse).exp() / n as f64;
        }
        row[label] -= 1.0 / n as f64;
    }
    Ok((total / n as f64, Tensor::from_parts(vec![n, c], grad)))
}
