use crate::data::{eval_view, stack_images, PairAugmentation, PairedDataset};
use crate::error::{Error, Result};
use crate::model::{MViTacModel, Modality};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalReport {
    pub accuracy: f64,
    pub k: usize,
    pub n: usize,
}

/// Fraction of visual rows whose own tactile row is among the `k` highest
/// dot products. A partner tied with others counts as ranked first among them.
pub fn topk_retrieval(visual: &Tensor<f32>, tactile: &Tensor<f32>, k: usize) -> Result<RetrievalReport> {
    if visual.shape() != tactile.shape() || visual.shape().len() != 2 {
        return Err(Error::conform("retrieval", visual.shape(), tactile.shape()));
    }
    let n = visual.shape()[0];
    if k == 0 || k >= n {
        return Err(Error::Config(format!("retrieval k must be in 1..{n}, got {k}")));
    }
    let dot = |a: &[f32], b: &[f32]| a.iter().zip(b).map(|(x, y)| (x * y) as f64).sum::<f64>();
    let hits = (0..n)
        .filter(|&i| {
            let q = visual.row(i);
            let own = dot(q, tactile.row(i));
            let above = (0..n).filter(|&j| j != i && dot(q, tactile.row(j)) > own).count();
            above < k
        })
        .count();
    Ok(RetrievalReport {
        accuracy: hits as f64 / n as f64,
        k,
        n,
    })
}

/// Inter-modal query embeddings of every sample under the evaluation view.
pub fn inter_embeddings(
    model: &MViTacModel<f32>,
    dataset: &PairedDataset,
    preprocess: &PairAugmentation,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let embed = |modality: Modality| -> Result<Tensor<f32>> {
        let cfg = preprocess.for_modality(modality);
        let views = dataset
            .samples
            .iter()
            .map(|s| match modality {
                Modality::Visual => eval_view(&s.visual, cfg),
                Modality::Tactile => eval_view(&s.tactile, cfg),
            })
            .collect::<Result<Vec<_>>>()?;
        model.embed_inter(modality, &stack_images(&views.iter().collect::<Vec<_>>())?)
    };
    Ok((embed(Modality::Visual)?, embed(Modality::Tactile)?))
}

/// Visual-to-tactile top-`k` retrieval over the pairs of `dataset`.
pub fn retrieval_eval(
    model: &MViTacModel<f32>,
    dataset: &PairedDataset,
    preprocess: &PairAugmentation,
    k: usize,
) -> Result<RetrievalReport> {
    if k >= dataset.len() {
        return Err(Error::Config(format!("retrieval k={k} needs more than {} pairs", dataset.len())));
    }
    let (v, t) = inter_embeddings(model, dataset, preprocess)?;
    topk_retrieval(&v, &t, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn self_retrieval_is_perfect() {
        let z = Tensor::from_vec(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        assert_eq!(topk_retrieval(&z, &z, 1).unwrap().accuracy, 1.0);
        assert!(topk_retrieval(&z, &z, 3).is_err());
    }

    #[test]
    fn swapped_partners_miss_at_k1_hit_at_k2() {
        let v = Tensor::from_vec(vec![3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        let t = Tensor::from_vec(vec![3, 2], vec![0.0, 1.0, 1.0, 0.0, -1.0, 0.0]).unwrap();
        assert!((topk_retrieval(&v, &t, 1).unwrap().accuracy - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(topk_retrieval(&v, &t, 2).unwrap().accuracy, 1.0);
    }
}
