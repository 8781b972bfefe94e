//! Full-batch gradient descent on a synthetic matching problem.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::grad::{problem_loss_and_grad, HeadGrads};
use super::heads::{Activation, AlignmentHeads};
use super::loss::LossKind;
use super::{match_frames, MatchError, MatchProblem};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyConfig {
    pub frames: usize,
    pub dim: usize,
    pub noise: f64,
    pub steps: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub problems: usize,
    pub hidden: usize,
    pub out: usize,
    pub alpha: f64,
    pub activation: Activation,
    pub loss: LossKind,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            frames: 32,
            dim: 16,
            noise: 0.05,
            steps: 500,
            learning_rate: 5.0,
            seed: 0,
            problems: 64,
            hidden: 32,
            out: 32,
            alpha: 10.0,
            activation: Activation::Gelu,
            loss: LossKind::Softmax,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStep {
    pub step: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainTrace {
    pub steps: Vec<TrainStep>,
    /// Argmax accuracy after the last update.
    pub final_accuracy: f64,
    pub final_loss: f64,
}

impl TrainTrace {
    /// Mean loss over consecutive non-overlapping windows.
    pub fn window_means(&self, window: usize) -> Vec<f64> {
        self.steps
            .chunks(window.max(1))
            .filter(|c| c.len() == window.max(1))
            .map(|c| c.iter().map(|s| s.loss).sum::<f64>() / c.len() as f64)
            .collect()
    }

    pub fn windows_strictly_decrease(&self, window: usize) -> bool {
        self.window_means(window).windows(2).all(|w| w[1] < w[0])
    }
}

/// Frames are standard normal; the `<vid>` state is the target frame plus
/// Gaussian noise of std `noise`.
fn make_problems(cfg: &ToyConfig, rng: &mut ChaCha8Rng) -> Result<Vec<MatchProblem>, MatchError> {
    (0..cfg.problems)
        .map(|_| {
            let h_frm = Array2::from_shape_fn((cfg.frames, cfg.dim), |_| {
                rng.sample::<f64, _>(StandardNormal)
            });
            let t_gt = rng.gen_range(0..cfg.frames);
            let h_vid = Array2::from_shape_fn((1, cfg.dim), |(_, j)| {
                h_frm[[t_gt, j]] + cfg.noise * rng.sample::<f64, _>(StandardNormal)
            });
            MatchProblem::new(h_vid, h_frm, t_gt, cfg.alpha, 1.0)
        })
        .collect()
}

fn accuracy(heads: &AlignmentHeads, problems: &[MatchProblem]) -> Result<f64, MatchError> {
    let mut hits = 0;
    for p in problems {
        let gv = heads.vid.forward(p.h_vid.view())?;
        let gf = heads.frm.forward(p.h_frm.view())?;
        if match_frames(gv.view(), gf.view())?.1 == p.t_gt {
            hits += 1;
        }
    }
    Ok(hits as f64 / problems.len() as f64)
}

/// Trains independently initialized heads to align `<vid>` with its frame.
pub fn toy_train(cfg: &ToyConfig) -> Result<TrainTrace, MatchError> {
    if cfg.frames == 0 || cfg.dim == 0 || cfg.problems == 0 {
        return Err(MatchError::BadProblem("empty toy problem".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let problems = make_problems(cfg, &mut rng)?;
    let mut heads = AlignmentHeads::random(cfg.dim, cfg.hidden, cfg.out, cfg.activation, rng.gen());
    let n = problems.len() as f64;
    let mut steps = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut total = HeadGrads::zeros_like(&heads);
        let mut loss = 0.0;
        let mut hits = 0;
        for p in &problems {
            let (l, g) = problem_loss_and_grad(&heads, p, cfg.loss)?;
            loss += l / n;
            total.add_scaled(&g.heads, 1.0 / n);
            hits += usize::from(g.t_match == p.t_gt);
        }
        steps.push(TrainStep {
            step,
            loss,
            accuracy: hits as f64 / n,
        });
        for (layer, g) in heads
            .vid
            .layers
            .iter_mut()
            .chain(heads.frm.layers.iter_mut())
            .zip(total.vid.iter().chain(total.frm.iter()))
        {
            layer.w.scaled_add(-cfg.learning_rate, &g.w);
            layer.b.scaled_add(-cfg.learning_rate, &g.b);
        }
    }
    let final_accuracy = accuracy(&heads, &problems)?;
    let final_loss = problems
        .iter()
        .map(|p| super::grad::problem_loss(&heads, p, cfg.loss))
        .sum::<Result<f64, _>>()?
        / n;
    Ok(TrainTrace {
        steps,
        final_accuracy,
        final_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ToyConfig {
        ToyConfig {
            frames: 8,
            dim: 6,
            steps: 30,
            problems: 8,
            hidden: 8,
            out: 8,
            ..Default::default()
        }
    }

    #[test]
    fn zero_learning_rate_keeps_loss_constant() {
        let trace = toy_train(&ToyConfig {
            learning_rate: 0.0,
            ..small()
        })
        .unwrap();
        let first = trace.steps[0].loss;
        assert!(trace.steps.iter().all(|s| s.loss == first));
        assert_eq!(trace.final_loss, first);
    }

    #[test]
    fn same_seed_same_trace() {
        assert_eq!(toy_train(&small()).unwrap(), toy_train(&small()).unwrap());
        let other = toy_train(&ToyConfig { seed: 1, ..small() }).unwrap();
        assert_ne!(toy_train(&small()).unwrap(), other);
    }

    #[test]
    fn short_run_reduces_loss() {
        let trace = toy_train(&small()).unwrap();
        assert!(trace.final_loss < trace.steps[0].loss);
    }

    #[test]
    fn window_means() {
        let trace = TrainTrace {
            steps: (0..5)
                .map(|i| TrainStep {
                    step: i,
                    loss: 10.0 - i as f64,
                    accuracy: 0.0,
                })
                .collect(),
            final_accuracy: 0.0,
            final_loss: 0.0,
        };
        assert_eq!(trace.window_means(2), vec![9.5, 7.5]);
        assert!(trace.windows_strictly_decrease(2));
    }
}
