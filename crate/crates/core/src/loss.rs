//! InfoNCE with in-batch negatives and the weighted four-way objective.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EmbeddingSet;
use crate::tensor::{Real, Tape, Tensor, Var};

/// Allowed deviation of an input row norm from 1.
pub const UNIT_NORM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub tau: f64,
    pub lambda_inter: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            tau: 0.07,
            lambda_inter: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::Range {
                what: "tau",
                value: self.tau,
                range: "(0, inf)",
            });
        }
        if !(self.lambda_inter >= 0.0) || !self.lambda_inter.is_finite() {
            return Err(Error::Range {
                what: "lambda_inter",
                value: self.lambda_inter,
                range: "[0, inf)",
            });
        }
        Ok(())
    }
}

/// Scalar values of the four directed losses and their weighted sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_vv: f64,
    pub l_tt: f64,
    pub l_vt: f64,
    pub l_tv: f64,
    pub l_mm: f64,
}

impl LossBreakdown {
    pub fn from_components(l_vv: f64, l_tt: f64, l_vt: f64, l_tv: f64, lambda_inter: f64) -> Self {
        Self {
            l_vv,
            l_tt,
            l_vt,
            l_tv,
            l_mm: l_vv + l_tt + lambda_inter * (l_vt + l_tv),
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_vv, self.l_tt, self.l_vt, self.l_tv, self.l_mm].iter().all(|v| v.is_finite())
    }
}

fn check_unit_rows<F: Real>(t: &Tensor<F>) -> Result<()> {
    let d = t.shape()[1];
    for (row, chunk) in t.data().chunks(d).enumerate() {
        let norm = chunk.iter().map(|v| v.as_f64().powi(2)).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > UNIT_NORM_TOL || !norm.is_finite() {
            return Err(Error::NormalizationContract { row, norm });
        }
    }
    Ok(())
}

/// `−(1/N) Σ_i log softmax_i(q_i·K^T/τ)[i]`: row `i` of `keys` is the
/// positive of query `i`, every other row is a negative.
pub fn info_nce<F: Real>(tape: &mut Tape<F>, queries: Var, keys: Var, tau: f64) -> Result<Var> {
    let (qs, ks) = (tape.shape(queries).to_vec(), tape.shape(keys).to_vec());
    if qs.len() != 2 || qs != ks {
        return Err(Error::conform("info_nce", &qs, &ks));
    }
    if qs[0] < 2 {
        return Err(Error::InsufficientNegatives(qs[0]));
    }
    if !(tau > 0.0) {
        return Err(Error::Range {
            what: "tau",
            value: tau,
            range: "(0, inf)",
        });
    }
    check_unit_rows(tape.value(queries))?;
    check_unit_rows(tape.value(keys))?;
    let kt = tape.transpose(keys)?;
    let sim = tape.matmul(queries, kt)?;
    let logits = tape.scale(sim, 1.0 / tau)?;
    tape.cross_entropy(logits, (0..qs[0]).collect())
}

/// Untracked [`info_nce`] on plain tensors.
pub fn info_nce_value<F: Real>(queries: &Tensor<F>, keys: &Tensor<F>, tau: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let q = tape.constant(queries);
    let k = tape.constant(keys);
    let loss = info_nce(&mut tape, q, k, tau)?;
    Ok(tape.value(loss).item().as_f64())
}

/// `l_mm = l_vv + l_tt + λ·(l_vt + l_tv)`; returns the differentiable
/// `l_mm` together with the component values.
pub fn combined_loss<F: Real>(
    tape: &mut Tape<F>,
    z: &EmbeddingSet,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    weights.validate()?;
    let l_vv = info_nce(tape, z.vv_q, z.vv_k, weights.tau)?;
    let l_tt = info_nce(tape, z.tt_q, z.tt_k, weights.tau)?;
    let l_vt = info_nce(tape, z.vt_q, z.vt_k, weights.tau)?;
    let l_tv = info_nce(tape, z.tv_q, z.tv_k, weights.tau)?;
    let intra = tape.add(l_vv, l_tt)?;
    let inter = tape.add(l_vt, l_tv)?;
    let inter = tape.scale(inter, weights.lambda_inter)?;
    let l_mm = tape.add(intra, inter)?;
    let v = |var: Var| tape.value(var).item().as_f64();
    let breakdown = LossBreakdown::from_components(v(l_vv), v(l_tt), v(l_vt), v(l_tv), weights.lambda_inter);
    Ok((l_mm, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn orthonormal(n: usize, d: usize) -> Tensor<f64> {
        let mut data = vec![0.0; n * d];
        for i in 0..n {
            data[i * d + i] = 1.0;
        }
        Tensor::from_vec(vec![n, d], data).unwrap()
    }

    fn constant_rows(n: usize, d: usize) -> Tensor<f64> {
        Tensor::from_vec(vec![n, d], vec![1.0 / (d as f64).sqrt(); n * d]).unwrap()
    }

    #[test]
    fn uniform_similarity_gives_ln_n() {
        let z = constant_rows(8, 4);
        let l = info_nce_value(&z, &z, 0.07).unwrap();
        assert!((l - 8f64.ln()).abs() < 1e-4, "{l}");
        assert!((l - 2.0794).abs() < 1e-4);
    }

    #[test]
    fn orthonormal_closed_forms() {
        let z = orthonormal(8, 8);
        let at_one = info_nce_value(&z, &z, 1.0).unwrap();
        let e = std::f64::consts::E;
        assert!((at_one - ((e + 7.0).ln() - 1.0)).abs() < 1e-4, "{at_one}");
        assert!((at_one - 1.2741).abs() < 1e-4);
        let sharp = info_nce_value(&z, &z, 0.07).unwrap();
        let expected = (1.0 + 7.0 * (-1.0f64 / 0.07).exp()).ln();
        assert!(sharp < 1e-5 && sharp > 0.0, "{sharp}");
        assert!((sharp - expected).abs() < 1e-9);
    }

    #[test]
    fn contract_errors() {
        let one = constant_rows(1, 4);
        assert!(matches!(info_nce_value(&one, &one, 0.1), Err(Error::InsufficientNegatives(1))));
        let bad = Tensor::from_vec(vec![2, 2], vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        assert!(matches!(
            info_nce_value(&bad, &bad, 0.1),
            Err(Error::NormalizationContract { row: 1, .. })
        ));
        let z = orthonormal(2, 2);
        assert!(info_nce_value(&z, &orthonormal(3, 3), 0.1).is_err());
        assert!(info_nce_value(&z, &z, 0.0).is_err());
    }

    fn set(tape: &mut Tape<f64>, t: &[Tensor<f64>; 8]) -> EmbeddingSet {
        let v: Vec<Var> = t.iter().map(|x| tape.param(x)).collect();
        EmbeddingSet {
            vv_q: v[0],
            vv_k: v[1],
            tt_q: v[2],
            tt_k: v[3],
            vt_q: v[4],
            vt_k: v[5],
            tv_q: v[6],
            tv_k: v[7],
        }
    }

    #[test]
    fn combined_uniform_closed_form() {
        let z = constant_rows(8, 16);
        let all = [(); 8].map(|_| z.clone());
        let mut tape = Tape::new();
        let emb = set(&mut tape, &all);
        let w = LossWeights {
            tau: 0.07,
            lambda_inter: 0.5,
        };
        let (l, b) = combined_loss(&mut tape, &emb, &w).unwrap();
        let expected = 3.0 * 8f64.ln();
        assert!((b.l_mm - expected).abs() < 1e-3);
        assert!((b.l_mm - 6.2383).abs() < 1e-3);
        assert!((tape.value(l).item() - b.l_mm).abs() < 1e-12);
    }

    #[test]
    fn combined_arithmetic() {
        let b = LossBreakdown::from_components(0.3, 0.2, 5.0, 7.0, 0.0);
        assert_eq!(b.l_mm, 0.3 + 0.2);
        let c = LossBreakdown::from_components(1.25, 1.25, 1.25, 1.25, 1.0);
        assert_eq!(c.l_mm, 5.0);
        assert!(LossWeights { tau: -1.0, lambda_inter: 1.0 }.validate().is_err());
        assert!(LossWeights { tau: 0.1, lambda_inter: -1.0 }.validate().is_err());
    }

    #[test]
    fn gradient_of_uniform_case_is_finite() {
        let z = constant_rows(4, 4);
        let mut tape = Tape::new();
        let q = tape.param(&z);
        let k = tape.constant(&z);
        let l = info_nce(&mut tape, q, k, 0.07).unwrap();
        tape.backward(l).unwrap();
        assert!(tape.grad(q).unwrap().iter().all(|g| g.is_finite()));
        assert!(tape.grad(k).is_none());
    }
}
