//! Binary linear SVM trained by primal stochastic subgradient descent
//! (Pegasos schedule, step 1/(lambda t)). The trained weight vector is the
//! product the rest of the pipeline consumes: one weight per feature,
//! compared between adjacent windows by the chi-squared statistic.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::corpus::Month;
use crate::error::{Error, Result};
use crate::features::{EngineKind, FeatureVector};

#[derive(Debug, Clone, Serialize)]
pub struct SvmParams {
    /// L2 regularization strength.
    pub lambda: f64,
    pub epochs: usize,
    pub rng_seed: u64,
    /// Reweight hinge terms by inverse class frequency so a month-sized
    /// class is not drowned by a year-sized one.
    pub class_balance: bool,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams { lambda: 0.01, epochs: 50, rng_seed: 0, class_balance: true }
    }
}

/// Default regularization per feature engine. Embedding features live on
/// smaller scales than frequency vectors, which moves the point where the
/// regularizer starts flattening low-signal windows to zero.
pub fn default_lambda(kind: EngineKind) -> f64 {
    match kind {
        EngineKind::Raw | EngineKind::Ngram => 0.01,
        EngineKind::Word2Vec => 0.03,
        EngineKind::Hmm2Vec => 0.002,
    }
}

/// Trained weights for one window.
#[derive(Debug, Clone, Serialize)]
pub struct WeightVector {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub window_id: Month,
    pub engine: EngineKind,
    /// Regularized objective of the raw iterate at each epoch end.
    pub objective_trace: Vec<f64>,
    /// Objective of the returned (tail-averaged) weights.
    pub final_objective: f64,
}

impl WeightVector {
    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let score: f64 = self.weights.iter().zip(x).map(|(w, v)| w * v).sum();
        score + self.bias
    }
}

/// Regularized, optionally class-balanced hinge objective.
fn objective(weights: &[f64], bias: f64, data: &[(&FeatureVector, f64, f64)], lambda: f64) -> f64 {
    let norm_sq: f64 = weights.iter().map(|w| w * w).sum();
    let hinge: f64 = data
        .iter()
        .map(|(x, y, c)| {
            let margin = y * (weights.iter().zip(&x.values).map(|(w, v)| w * v).sum::<f64>() + bias);
            c * (1.0 - margin).max(0.0)
        })
        .sum();
    0.5 * lambda * norm_sq + hinge / data.len() as f64
}

/// Trains on two labeled sets of feature vectors. An empty class is a
/// window-skipped signal, not a pipeline failure.
pub fn train_linear_svm(
    positives: &[FeatureVector],
    negatives: &[FeatureVector],
    params: &SvmParams,
    window_id: Month,
) -> Result<WeightVector> {
    if positives.is_empty() {
        return Err(Error::EmptyClass { window: window_id.to_string(), class: "+1" });
    }
    if negatives.is_empty() {
        return Err(Error::EmptyClass { window: window_id.to_string(), class: "-1" });
    }
    let dim = positives[0].dim();
    let engine = positives[0].engine;
    for x in positives.iter().chain(negatives) {
        if x.dim() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: x.dim() });
        }
        if x.engine != engine {
            return Err(Error::InvalidConfig(format!("mixed feature engines: {} vs {}", engine, x.engine)));
        }
    }

    let n = positives.len() + negatives.len();
    let (c_pos, c_neg) = if params.class_balance {
        (n as f64 / (2.0 * positives.len() as f64), n as f64 / (2.0 * negatives.len() as f64))
    } else {
        (1.0, 1.0)
    };
    let data: Vec<(&FeatureVector, f64, f64)> = positives
        .iter()
        .map(|x| (x, 1.0, c_pos))
        .chain(negatives.iter().map(|x| (x, -1.0, c_neg)))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut weights = vec![0.0; dim];
    let mut bias = 0.0;
    let mut objective_trace = Vec::with_capacity(params.epochs);

    // Suffix averaging: the returned vector is the mean iterate over the
    // back half of training. Final iterates of subgradient descent jitter
    // around the optimum, and that jitter would masquerade as drift when
    // adjacent windows' weights are compared.
    let total_steps = (params.epochs * n) as u64;
    let tail_start = total_steps / 2;
    let mut tail_sum_w = vec![0.0; dim];
    let mut tail_sum_b = 0.0;
    let mut tail_count = 0u64;
    let mut t = 0u64;

    for _ in 0..params.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            // Offset schedule 1/(lambda t + 1): asymptotically the Pegasos
            // step 1/(lambda t), but the first step is bounded by 1 instead
            // of 1/lambda, which the unregularized bias could never recover
            // from.
            let eta = 1.0 / (params.lambda * t as f64 + 1.0);
            let (x, y, c) = data[i];
            let margin = y * (weights.iter().zip(&x.values).map(|(w, v)| w * v).sum::<f64>() + bias);
            let shrink = 1.0 - eta * params.lambda;
            if margin < 1.0 {
                for (w, v) in weights.iter_mut().zip(&x.values) {
                    *w = *w * shrink + eta * c * y * v;
                }
                bias += eta * c * y;
            } else {
                for w in weights.iter_mut() {
                    *w *= shrink;
                }
            }
            if t > tail_start {
                for (s, w) in tail_sum_w.iter_mut().zip(&weights) {
                    *s += w;
                }
                tail_sum_b += bias;
                tail_count += 1;
            }
        }
        objective_trace.push(objective(&weights, bias, &data, params.lambda));
    }

    let weights: Vec<f64> = tail_sum_w.iter().map(|s| s / tail_count as f64).collect();
    let bias = tail_sum_b / tail_count as f64;
    if weights.iter().any(|w| !w.is_finite()) || !bias.is_finite() {
        return Err(Error::InvalidConfig("SVM training diverged to non-finite weights".into()));
    }
    let final_objective = objective(&weights, bias, &data, params.lambda);
    Ok(WeightVector { weights, bias, window_id, engine, objective_trace, final_objective })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn month() -> Month {
        Month::new(2015, 6)
    }

    fn fv(values: Vec<f64>) -> FeatureVector {
        FeatureVector { values, engine: EngineKind::Raw }
    }

    #[test]
    fn separable_one_dimensional_data_gets_positive_weight() {
        let w = train_linear_svm(&[fv(vec![1.0])], &[fv(vec![-1.0])], &SvmParams::default(), month()).unwrap();
        assert!(w.weights[0] > 0.0, "weight {}", w.weights[0]);
        assert!(w.predict(&[1.0]) > 0.0);
        assert!(w.predict(&[-1.0]) < 0.0);
    }

    #[test]
    fn identical_point_in_both_classes_leaves_no_separating_weight() {
        // Converged regime for two samples: lambda large enough that the
        // 1/(lambda t) schedule settles within the epoch budget.
        let params = SvmParams { lambda: 1.0, epochs: 500, ..Default::default() };
        let w = train_linear_svm(&[fv(vec![1.0])], &[fv(vec![1.0])], &params, month()).unwrap();
        // No separating direction exists; the regularizer owns the
        // objective and the weight collapses.
        assert!(w.weights[0].abs() <= 1e-3, "weight {}", w.weights[0]);
        let pos_correct = w.predict(&[1.0]) > 0.0;
        let neg_correct = w.predict(&[1.0]) < 0.0;
        assert!(!pos_correct || !neg_correct);
    }

    #[test]
    fn same_seed_gives_identical_weights() {
        let pos = vec![fv(vec![1.0, 0.3]), fv(vec![0.8, 0.1])];
        let neg = vec![fv(vec![-1.0, -0.2])];
        let params = SvmParams { rng_seed: 7, ..Default::default() };
        let a = train_linear_svm(&pos, &neg, &params, month()).unwrap();
        let b = train_linear_svm(&pos, &neg, &params, month()).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.bias, b.bias);
    }

    #[test]
    fn empty_class_is_a_skip_signal() {
        let err = train_linear_svm(&[], &[fv(vec![1.0])], &SvmParams::default(), month());
        assert!(matches!(err, Err(Error::EmptyClass { class: "+1", .. })));
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let err = train_linear_svm(&[fv(vec![1.0, 2.0])], &[fv(vec![1.0])], &SvmParams::default(), month());
        assert!(matches!(err, Err(Error::DimensionMismatch { expected: 2, got: 1 })));
    }

    fn blobs(seed: u64, n_per_class: usize) -> (Vec<FeatureVector>, Vec<FeatureVector>) {
        // Two 2-d clusters centered at (+2, +2) and (-2, -2) with radius
        // well under the margin.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = |rng: &mut ChaCha8Rng| rng.random_range(-0.5..0.5);
        let pos = (0..n_per_class).map(|_| fv(vec![2.0 + noise(&mut rng), 2.0 + noise(&mut rng)])).collect();
        let neg = (0..n_per_class).map(|_| fv(vec![-2.0 + noise(&mut rng), -2.0 + noise(&mut rng)])).collect();
        (pos, neg)
    }

    fn converged_params() -> SvmParams {
        SvmParams { lambda: 0.01, epochs: 200, ..Default::default() }
    }

    #[test]
    fn separable_blobs_reach_full_training_accuracy() {
        let (pos, neg) = blobs(3, 40);
        let w = train_linear_svm(&pos, &neg, &converged_params(), month()).unwrap();
        assert!(pos.iter().all(|x| w.predict(&x.values) > 0.0));
        assert!(neg.iter().all(|x| w.predict(&x.values) < 0.0));
    }

    /// Exhaustive oracle over candidate separators: unit directions on an
    /// angle grid, scaled over a magnitude grid, with a bias grid.
    fn grid_search_objective(data: &[(&FeatureVector, f64, f64)], lambda: f64) -> f64 {
        let mut best = f64::INFINITY;
        for angle_step in 0..180 {
            let theta = angle_step as f64 * std::f64::consts::PI / 180.0;
            let dir = [theta.cos(), theta.sin()];
            for scale_step in 1..=60 {
                let s = scale_step as f64 * 0.05;
                let w = [dir[0] * s, dir[1] * s];
                for bias_step in -20..=20 {
                    let b = bias_step as f64 * 0.1;
                    let norm_sq = w[0] * w[0] + w[1] * w[1];
                    let hinge: f64 = data
                        .iter()
                        .map(|(x, y, c)| {
                            let margin = y * (w[0] * x.values[0] + w[1] * x.values[1] + b);
                            c * (1.0 - margin).max(0.0)
                        })
                        .sum::<f64>()
                        / data.len() as f64;
                    best = best.min(0.5 * lambda * norm_sq + hinge);
                }
            }
        }
        best
    }

    #[test]
    fn objective_is_near_the_grid_search_oracle() {
        let (pos, neg) = blobs(11, 30);
        let params = converged_params();
        let w = train_linear_svm(&pos, &neg, &params, month()).unwrap();
        let data: Vec<(&FeatureVector, f64, f64)> =
            pos.iter().map(|x| (x, 1.0, 1.0)).chain(neg.iter().map(|x| (x, -1.0, 1.0))).collect();

        let achieved = objective(&w.weights, w.bias, &data, params.lambda);
        let zero = objective(&[0.0, 0.0], 0.0, &data, params.lambda);
        assert!(achieved <= zero, "achieved {achieved} vs zero-vector {zero}");

        let oracle = grid_search_objective(&data, params.lambda);
        assert!(achieved <= oracle * 1.05, "achieved {achieved} vs oracle {oracle}");
    }

    #[test]
    fn objective_trend_is_mostly_non_increasing() {
        // A configuration still descending at the last epoch; at the noise
        // floor there is no trend left to measure.
        let (pos, neg) = blobs(11, 30);
        let params = SvmParams { lambda: 1e-3, epochs: 50, rng_seed: 0, ..Default::default() };
        let w = train_linear_svm(&pos, &neg, &params, month()).unwrap();
        let trace = &w.objective_trace;
        let non_increasing =
            trace.windows(2).filter(|p| p[1] <= p[0] + 1e-12).count();
        assert!(
            non_increasing as f64 >= 0.9 * (trace.len() - 1) as f64,
            "only {non_increasing}/{} pairs non-increasing: {trace:?}",
            trace.len() - 1
        );
    }

    #[test]
    fn input_scaling_preserves_weight_signs_on_separable_data() {
        let (pos, neg) = blobs(31, 30);
        let scale = 3.5;
        let scale_all = |xs: &[FeatureVector]| -> Vec<FeatureVector> {
            xs.iter().map(|x| fv(x.values.iter().map(|v| v * scale).collect())).collect()
        };
        let params = converged_params();
        let w1 = train_linear_svm(&pos, &neg, &params, month()).unwrap();
        let w2 = train_linear_svm(&scale_all(&pos), &scale_all(&neg), &params, month()).unwrap();
        for (a, b) in w1.weights.iter().zip(&w2.weights) {
            assert_eq!(a.signum(), b.signum());
        }
    }
}
