use super::model::ModelSpec;
use super::Logits;
use crate::dataio::Dataset;
use crate::error::{Error, Result};
use crate::par;

/// Anything that maps one image to class scores.
pub trait Classifier: Sync {
    fn classify(&self, x: &[f64]) -> Result<Logits>;
}

impl Classifier for ModelSpec {
    fn classify(&self, x: &[f64]) -> Result<Logits> {
        self.forward_float(x)
    }
}

/// Top-1 predictions, in input order.
pub fn predictions<C: Classifier + ?Sized>(model: &C, images: &[Vec<f64>]) -> Result<Vec<usize>> {
    par::map_indexed(images.len(), |i| model.classify(&images[i]).map(|l| l.predicted()))
        .into_iter()
        .collect()
}

/// Fraction of correct top-1 predictions over the first `n` examples.
pub fn accuracy<C: Classifier + ?Sized>(model: &C, data: &Dataset, n: usize) -> Result<f64> {
    let n = n.min(data.len());
    if n == 0 {
        return Err(Error::EmptySubset);
    }
    let hits = par::map_indexed(n, |i| {
        model
            .classify(&data.image(i))
            .map(|l| (l.predicted() == data.label(i)) as usize)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    Ok(hits.iter().sum::<usize>() as f64 / n as f64)
}
