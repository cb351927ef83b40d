use crate::autodiff::{Graph, Tensor};
use crate::error::{Error, Result};

/// Mean of `-ln p[target]` over labeled rows of `probs` (`[rows, k]`).
/// With no labeled row the loss is 0 and every upstream gradient is 0.
pub fn nll_loss(g: &mut Graph, probs: Tensor, targets: &[Option<usize>], k: usize) -> Result<Tensor> {
    let shape = g.shape(probs).to_vec();
    if shape.len() != 2 || shape[1] != k {
        return Err(Error::Shape(format!(
            "nll_loss: probabilities {shape:?} do not have {k} classes"
        )));
    }
    if shape[0] != targets.len() {
        return Err(Error::Shape(format!(
            "nll_loss: {} probability rows for {} targets",
            shape[0],
            targets.len()
        )));
    }
    if let Some(bad) = targets.iter().flatten().find(|&&t| t >= k) {
        return Err(Error::config(format!("target class {bad} outside 0..{k}")));
    }
    let (rows, cols): (Vec<usize>, Vec<usize>) = targets
        .iter()
        .enumerate()
        .filter_map(|(i, t)| t.map(|t| (i, t)))
        .unzip();
    if rows.is_empty() {
        let s = g.sum_all(probs);
        return Ok(g.scale(s, 0.0));
    }
    let labeled = g.gather(probs, &rows)?;
    let picked = g.pick(labeled, &cols)?;
    let logp = g.log(picked);
    let mean = g.mean_all(logp)?;
    Ok(g.scale(mean, -1.0))
}

/// Mean squared error over all entries and steps, with the per-step means.
/// The total is the mean of the per-step values.
pub fn mse_loss(g: &mut Graph, predicted: &[Tensor], target: &[Tensor]) -> Result<(Tensor, Vec<Tensor>)> {
    if predicted.len() != target.len() || predicted.is_empty() {
        return Err(Error::Shape(format!(
            "mse_loss: {} predicted steps for {} target steps",
            predicted.len(),
            target.len()
        )));
    }
    let shape = g.shape(predicted[0]).to_vec();
    let mut steps = Vec::with_capacity(predicted.len());
    for (&p, &t) in predicted.iter().zip(target) {
        if g.shape(p) != shape.as_slice() || g.shape(t) != shape.as_slice() {
            return Err(Error::Shape(format!(
                "mse_loss: step shapes {:?} and {:?}, expected {shape:?}",
                g.shape(p),
                g.shape(t)
            )));
        }
        let d = g.sub(p, t)?;
        let sq = g.mul(d, d)?;
        steps.push(g.mean_all(sq)?);
    }
    let mut total = steps[0];
    for &s in &steps[1..] {
        total = g.add(total, s)?;
    }
    let total = g.scale(total, 1.0 / steps.len() as f64);
    Ok((total, steps))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::array;

    #[test]
    fn nll_examples() {
        let mut g = Graph::new();
        let p = g.constant(array(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let l = nll_loss(&mut g, p, &[Some(0), Some(1)], 2).unwrap();
        assert!(g.scalar(l) <= 1e-9);

        let u = g.constant(array(&[3, 4], vec![0.25; 12]));
        let l = nll_loss(&mut g, u, &[Some(0), Some(3), Some(2)], 4).unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);
        assert!(nll_loss(&mut g, u, &[Some(0), None, None], 3).is_err());
    }

    #[test]
    fn all_unknown_gives_zero_loss_and_gradient() {
        let mut g = Graph::new();
        let logits = g.leaf(array(&[3, 2], vec![0.3, -1.0, 2.0, 0.1, 0.0, 0.0]), true);
        let p = g.softmax(logits, 1, 1.0).unwrap();
        let l = nll_loss(&mut g, p, &[None, None, None], 2).unwrap();
        assert_eq!(g.scalar(l), 0.0);
        g.backward(l).unwrap();
        assert!(g.grad(logits).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_examples() {
        let mut g = Graph::new();
        let a: Vec<Tensor> = (0..3).map(|i| g.constant(array(&[2, 2], vec![i as f64; 4]))).collect();
        let b: Vec<Tensor> = (0..3).map(|i| g.constant(array(&[2, 2], vec![i as f64 + 0.1; 4]))).collect();
        let (same, _) = mse_loss(&mut g, &a, &a).unwrap();
        assert_eq!(g.scalar(same), 0.0);
        let (off, steps) = mse_loss(&mut g, &a, &b).unwrap();
        assert!((g.scalar(off) - 0.01).abs() < 1e-12);
        let avg = steps.iter().map(|&s| g.scalar(s)).sum::<f64>() / 3.0;
        assert!((avg - g.scalar(off)).abs() < 1e-12);
        let c = g.constant(array(&[4], vec![0.0; 4]));
        assert!(mse_loss(&mut g, &a[..1], &[c]).is_err());
    }
}
