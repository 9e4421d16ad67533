use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::VideoSample;
use crate::error::{Error, Result};
use crate::localizer::model::Net;
use crate::localizer::Localizer;
use crate::numerics::{Adam, Graph};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            steps: 300,
            batch_size: 8,
            lr: 1e-3,
            seed: 0,
        }
    }
}

/// Loss terms of one optimisation step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub step: usize,
    pub l_a: f64,
    pub l_intra: f64,
    pub l_inter: f64,
    pub total: f64,
    pub skipped: usize,
}

impl LossBreakdown {
    /// Tab-separated `step, L_a, L_intra, L_inter, total`.
    pub fn log_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.step, self.l_a, self.l_intra, self.l_inter, self.total
        )
    }
}

pub struct Trainer {
    pub model: Localizer,
    pub optimizer: Adam,
    rng: ChaCha8Rng,
    step: usize,
    order: Vec<usize>,
    cursor: usize,
}

impl Trainer {
    pub fn new(model: Localizer, lr: f64, seed: u64) -> Self {
        Trainer {
            model,
            optimizer: Adam::new(lr),
            rng: ChaCha8Rng::seed_from_u64(seed ^ 0x005e_ed0f_7a1e),
            step: 0,
            order: Vec::new(),
            cursor: 0,
        }
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    /// Forward, loss, backward and one Adam update on `batch`.
    pub fn train_step(&mut self, batch: &[VideoSample]) -> Result<LossBreakdown> {
        if batch.is_empty() {
            return Err(Error::Argument("empty training batch".into()));
        }
        let mut g = Graph::new();
        let bp = self.model.params.bind(&mut g);
        let net = Net::new(&self.model.config, &bp);
        let loss = net.batch_loss(&mut g, batch, &mut self.rng)?;
        let value = |id| g.value(id).data()[0];
        let out = LossBreakdown {
            step: self.step,
            l_a: value(loss.l_a),
            l_intra: value(loss.l_intra),
            l_inter: value(loss.l_inter),
            total: value(loss.total),
            skipped: loss.skipped,
        };
        for (term, v) in [
            ("L_a", out.l_a),
            ("L_intra", out.l_intra),
            ("L_inter", out.l_inter),
            ("total", out.total),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss { term, step: self.step });
            }
        }
        let grads = g.backward(loss.total)?;
        let grads = bp.collect(&grads);
        self.optimizer.update(&mut self.model.params, &grads)?;
        self.step += 1;
        Ok(out)
    }

    fn next_batch(&mut self, n: usize, batch_size: usize) -> Vec<usize> {
        let mut picked = Vec::with_capacity(batch_size);
        while picked.len() < batch_size.min(n) {
            if self.cursor == self.order.len() {
                self.order = (0..n).collect();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            picked.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        picked
    }

    /// Runs `steps` updates over shuffled mini-batches, writing one log line per step.
    pub fn fit(
        &mut self,
        data: &[VideoSample],
        steps: usize,
        batch_size: usize,
        mut log: Option<&mut dyn Write>,
    ) -> Result<Vec<LossBreakdown>> {
        if data.is_empty() {
            return Err(Error::Argument("empty training set".into()));
        }
        let mut trace = Vec::with_capacity(steps);
        for _ in 0..steps {
            let idx = self.next_batch(data.len(), batch_size.max(1));
            let batch: Vec<VideoSample> = idx.iter().map(|&i| data[i].clone()).collect();
            let out = self.train_step(&batch)?;
            if let Some(w) = log.as_deref_mut() {
                writeln!(w, "{}", out.log_line()).map_err(|e| Error::io("<training log>", e))?;
            }
            if out.step % 50 == 0 {
                log::info!("step {} total {:.5}", out.step, out.total);
            }
            trace.push(out);
        }
        Ok(trace)
    }
}

/// Trains a fresh model from `seed`.
pub fn train(
    model: Localizer,
    data: &[VideoSample],
    opts: &TrainOptions,
    log: Option<&mut dyn Write>,
) -> Result<(Localizer, Vec<LossBreakdown>)> {
    let mut trainer = Trainer::new(model, opts.lr, opts.seed);
    let trace = trainer.fit(data, opts.steps, opts.batch_size, log)?;
    Ok((trainer.model, trace))
}
