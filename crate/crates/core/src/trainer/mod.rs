//! Alternating critic / generator+regressor optimization with hallucinated
//! class descriptions, checkpointing and checkpoint selection.

mod checkpoint;
mod config;
mod log;
mod select;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use checkpoint::{checkpoint_file_name, Checkpoint, FINAL_CHECKPOINT};
pub use config::{TrainConfig, ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON};
pub use log::{LogRow, SplitMetrics, TrainLog, TRAIN_LOG_HEADER};
pub use select::{select_model, DualProtocolReport, MetricTable, ProtocolRow, SelectionMetric, SelectionMode, Split};

use crate::dataio::text::create_dir;
use crate::dataio::{Dataset, Phase};
use crate::diffcore::{AdamConfig, AdamState, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::hallucinate::sample_hallucinated_batch;
use crate::losses::{
    adversarial_d_loss, adversarial_g_loss, classification_loss, gradient_penalty, sr_loss, visual_pivot_loss,
    SrBatch, SrTerm, GP_COEFFICIENT,
};
use crate::networks::{discriminator_forward, generator_forward, init_params, NetConfig, NetworkParams, Parameters};
use crate::zsleval::{evaluate, EvalTarget, Task};

const TRAIN_STREAM: u64 = 4;
const EVAL_STREAM_BASE: u64 = 1 << 32;

/// Scalar losses of one `train_step`; critic values are averaged over the
/// critic updates of the step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub critic: f64,
    pub critic_cls: f64,
    pub gradient_penalty: f64,
    pub generator: f64,
    pub generator_cls: f64,
    pub sr: f64,
    pub pivot: f64,
}

/// Annotates numeric failures with the loss term that produced them.
fn in_term<T>(term: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite(m) => Error::NonFinite(format!("{m} (loss term '{term}')")),
        Error::ZeroNorm { row } => Error::NonFinite(format!("zero-norm row {row} under cosine (loss term '{term}')")),
        other => other,
    })
}

fn scalar(tape: &Tape, v: Var) -> Result<f64> {
    tape.value(v)?.item()
}

fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

fn adam_update(state: &mut AdamState, params: &mut dyn Parameters, vars: &[Var], grads: &Gradients) -> Result<()> {
    let mut tensors = params.tensors_mut();
    let g: Vec<Tensor> = vars.iter().zip(&tensors).map(|(&v, t)| grads.get_or_zeros(v, t)).collect();
    state.step(&mut tensors, &g)
}

struct Batch {
    x: Tensor,
    reps: Tensor,
    /// Indices into the training-class list.
    local: Vec<usize>,
}

/// Training state bound to a dataset. Every data read goes through the
/// dataset's audited accessors and touches training classes only.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    config: TrainConfig,
    config_hash: String,
    train_classes: Vec<usize>,
    train_idx: Vec<usize>,
    centroids: Tensor,
    params: NetworkParams,
    opt_d: AdamState,
    opt_g: AdamState,
    opt_sr: AdamState,
    rng: ChaCha8Rng,
    iteration: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let splits = dataset.splits();
        let train_classes = splits.train_classes();
        if train_classes.len() < 2 {
            return Err(Error::Dataset(format!(
                "training needs at least 2 seen classes, found {}",
                train_classes.len()
            )));
        }
        let train_idx = splits.train.clone();

        let centroids = {
            let _phase = dataset.enter_phase(Phase::Training);
            let mut sums = Tensor::zeros(train_classes.len(), dataset.feat_dim());
            let mut counts = vec![0usize; train_classes.len()];
            for &i in &train_idx {
                let k = local_index(&train_classes, dataset.label(i))?;
                counts[k] += 1;
                for (s, v) in sums.row_mut(k).iter_mut().zip(dataset.feature(i)) {
                    *s += v;
                }
            }
            for (k, &c) in counts.iter().enumerate() {
                if c == 0 {
                    return Err(Error::Dataset(format!("training class {} has no samples", train_classes[k])));
                }
                sums.row_mut(k).iter_mut().for_each(|v| *v /= c as f64);
            }
            sums
        };

        let net = NetConfig::new(dataset.rep_dim(), config.noise_dim, dataset.feat_dim(), train_classes.len())
            .with_hidden(config.gen_hidden.clone(), config.disc_hidden.clone(), config.sr_hidden.clone());
        let params = init_params(&net, config.seed)?;
        let adam = AdamConfig {
            lr: config.lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        rng.set_stream(TRAIN_STREAM);
        Ok(Trainer {
            dataset,
            config_hash: config.hash(),
            train_classes,
            train_idx,
            centroids,
            opt_d: AdamState::new(adam, params.discriminator.tensors()),
            opt_g: AdamState::new(adam, params.generator.tensors()),
            opt_sr: AdamState::new(adam, params.regressor.tensors()),
            params,
            rng,
            iteration: 0,
            config,
        })
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Seen classes the critic's class head is defined over, in head order.
    pub fn train_classes(&self) -> &[usize] {
        &self.train_classes
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            iteration: self.iteration,
            config_hash: self.config_hash.clone(),
            noise_dim: self.config.noise_dim,
            params: self.params.clone(),
            rng: self.rng.clone(),
        }
    }

    fn sample_batch(&mut self) -> Result<Batch> {
        let b = self.config.batch_size;
        let idx: Vec<usize> = (0..b)
            .map(|_| self.train_idx[self.rng.random_range(0..self.train_idx.len())])
            .collect();
        let x = self.dataset.features_of(&idx);
        let classes: Vec<usize> = idx.iter().map(|&i| self.dataset.label(i)).collect();
        let reps = self.dataset.reps_of(&classes);
        let local = classes
            .iter()
            .map(|&c| local_index(&self.train_classes, c))
            .collect::<Result<_>>()?;
        Ok(Batch { x, reps, local })
    }

    /// Hallucinated representations and their noise; empty when disabled.
    fn sample_hallucinated(&mut self) -> Result<(Tensor, Tensor)> {
        let reps = if self.config.hallucination.enabled {
            self.dataset.reps_of(&self.train_classes)
        } else {
            Tensor::zeros(0, self.dataset.rep_dim())
        };
        let h = sample_hallucinated_batch(&reps, self.config.batch_size, &self.config.hallucination, &mut self.rng)?;
        let z = normal(h.rows(), self.config.noise_dim, &mut self.rng);
        Ok((h, z))
    }

    fn critic_step(&mut self) -> Result<(f64, f64, f64)> {
        let batch = self.sample_batch()?;
        let z = normal(batch.x.rows(), self.config.noise_dim, &mut self.rng);
        let g = &self.params.generator;
        let fake_seen = in_term("generator", g.forward(&batch.reps, &z))?;
        let (hal, hal_z) = self.sample_hallucinated()?;
        let fakes = if hal.rows() > 0 {
            let fake_hal = in_term("generator", self.params.generator.forward(&hal, &hal_z))?;
            Tensor::vstack(&[&fake_seen, &fake_hal])?
        } else {
            fake_seen.clone()
        };
        let eps: Vec<f64> = (0..batch.x.rows()).map(|_| self.rng.random::<f64>()).collect();
        let interpolated = Tensor::from_fn(batch.x.rows(), batch.x.cols(), |i, j| {
            eps[i] * batch.x.get(i, j) + (1.0 - eps[i]) * fake_seen.get(i, j)
        });

        let mut tape = Tape::new();
        let d = self.params.discriminator.bind(&mut tape, true);
        let real_x = tape.constant(batch.x);
        let fake_x = tape.constant(fakes);
        let (real_logits, class_logits) = in_term("critic", discriminator_forward(&mut tape, &d, real_x))?;
        let (fake_logits, _) = in_term("critic", discriminator_forward(&mut tape, &d, fake_x))?;
        let adv = in_term("critic adversarial", adversarial_d_loss(&mut tape, real_logits, fake_logits))?;
        let gp = in_term(
            "gradient penalty",
            gradient_penalty(&mut tape, &d, &self.params.discriminator, &interpolated, GP_COEFFICIENT),
        )?;
        let mut total = tape.add(adv, gp)?;
        let mut cls_value = 0.0;
        if self.config.weights.lambda_cls > 0.0 {
            let cls = in_term("critic classification", classification_loss(&mut tape, class_logits, &batch.local))?;
            cls_value = scalar(&tape, cls)?;
            let w = tape.scale(cls, self.config.weights.lambda_cls)?;
            total = in_term("critic total", tape.add(total, w))?;
        }
        let grads = tape.backward(total)?;
        adam_update(&mut self.opt_d, &mut self.params.discriminator, &d.vars(), &grads)?;
        Ok((scalar(&tape, adv)?, cls_value, scalar(&tape, gp)?))
    }

    fn generator_step(&mut self, out: &mut StepLosses) -> Result<()> {
        let w = self.config.weights;
        let batch = self.sample_batch()?;
        let z = normal(batch.x.rows(), self.config.noise_dim, &mut self.rng);
        let (hal, hal_z) = self.sample_hallucinated()?;

        let mut tape = Tape::new();
        let g = self.params.generator.bind(&mut tape, true);
        let d = self.params.discriminator.bind(&mut tape, false);
        let reps = tape.constant(batch.reps);
        let zv = tape.constant(z);
        let fake_seen = in_term("generator", generator_forward(&mut tape, &g, reps, zv))?;
        let (mut fake_logits, class_logits) = in_term("critic", discriminator_forward(&mut tape, &d, fake_seen))?;
        let mut hal_term = None;
        if hal.rows() > 0 {
            let hv = tape.constant(hal);
            let hz = tape.constant(hal_z);
            let fake_hal = in_term("generator", generator_forward(&mut tape, &g, hv, hz))?;
            let (hal_logits, _) = in_term("critic", discriminator_forward(&mut tape, &d, fake_hal))?;
            fake_logits = tape.concat_rows(fake_logits, hal_logits)?;
            hal_term = Some(SrTerm {
                features: fake_hal,
                reps: hv,
            });
        }
        let adv = in_term("generator adversarial", adversarial_g_loss(&mut tape, fake_logits))?;
        out.generator = scalar(&tape, adv)?;
        let mut total = adv;

        if w.lambda_cls > 0.0 {
            let cls = in_term(
                "generator classification",
                classification_loss(&mut tape, class_logits, &batch.local),
            )?;
            out.generator_cls = scalar(&tape, cls)?;
            let s = tape.scale(cls, w.lambda_cls)?;
            total = tape.add(total, s)?;
        }

        let sr = if w.lambda_sr > 0.0 {
            let sr = self.params.regressor.bind(&mut tape, true);
            let real_x = tape.constant(batch.x);
            let terms = SrBatch {
                real: Some(SrTerm {
                    features: real_x,
                    reps,
                }),
                generated_seen: Some(SrTerm {
                    features: fake_seen,
                    reps,
                }),
                generated_hallucinated: hal_term,
            };
            let l = in_term("sr", sr_loss(&mut tape, &terms, &sr, self.config.similarity))?;
            out.sr = scalar(&tape, l)?;
            let s = tape.scale(l, w.lambda_sr)?;
            total = tape.add(total, s)?;
            Some(sr)
        } else {
            None
        };

        if w.lambda_pivot > 0.0 {
            let mut present = batch.local.clone();
            present.sort_unstable();
            present.dedup();
            let p = in_term(
                "visual pivot",
                visual_pivot_loss(&mut tape, fake_seen, &batch.local, &present, &self.centroids),
            )?;
            out.pivot = scalar(&tape, p)?;
            let s = tape.scale(p, w.lambda_pivot)?;
            total = tape.add(total, s)?;
        }

        let total = in_term("generator total", Ok(total))?;
        let grads = tape.backward(total)?;
        adam_update(&mut self.opt_g, &mut self.params.generator, &g.vars(), &grads)?;
        if let Some(sr) = sr {
            adam_update(&mut self.opt_sr, &mut self.params.regressor, &sr.vars(), &grads)?;
        }
        Ok(())
    }

    /// `d_steps_per_g_step` critic updates followed by one joint update of the
    /// generator and the regressor.
    pub fn train_step(&mut self) -> Result<StepLosses> {
        let _phase = self.dataset.enter_phase(Phase::Training);
        let mut out = StepLosses::default();
        let n = self.config.d_steps_per_g_step;
        for _ in 0..n {
            let (adv, cls, gp) = self.critic_step()?;
            out.critic += adv / n as f64;
            out.critic_cls += cls / n as f64;
            out.gradient_penalty += gp / n as f64;
        }
        self.generator_step(&mut out)?;
        self.iteration += 1;
        Ok(out)
    }

    /// Validation (if the dataset defines pseudo-unseen classes) and test
    /// metrics of the current generator.
    pub fn evaluate_checkpoint(&self) -> Result<(Option<SplitMetrics>, SplitMetrics)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(EVAL_STREAM_BASE + self.iteration as u64);
        let run = |target, rng: &mut ChaCha8Rng| -> Result<SplitMetrics> {
            let r = evaluate(
                &self.params.generator,
                self.config.noise_dim,
                self.dataset,
                target,
                &self.config.eval,
                rng,
            )?;
            Ok(SplitMetrics {
                top1: r.top1_unseen,
                h: r.h,
                auc: r.auc,
            })
        };
        let val = if self.dataset.splits().val_pseudo_unseen.is_empty() {
            None
        } else {
            Some(run(EvalTarget::Validation, &mut rng)?)
        };
        let test = run(EvalTarget::Test, &mut rng)?;
        Ok((val, test))
    }
}

fn local_index(classes: &[usize], c: usize) -> Result<usize> {
    classes
        .iter()
        .position(|&k| k == c)
        .ok_or_else(|| Error::Dataset(format!("class {c} is not a training class")))
}

/// Selection metric implied by the evaluation task.
pub fn selection_metric(task: Task) -> SelectionMetric {
    match task {
        Task::Zsl => SelectionMetric::Top1,
        Task::Gzsl => SelectionMetric::H,
    }
}

/// Everything a training run produces.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub log: TrainLog,
    /// One checkpoint per log row, in the same order.
    pub checkpoints: Vec<Checkpoint>,
    /// Row selected under the configured protocol.
    pub selected: usize,
}

impl TrainOutcome {
    pub fn final_checkpoint(&self) -> &Checkpoint {
        self.checkpoints.last().expect("training yields at least one checkpoint")
    }

    /// Writes every checkpoint, the `final.txt` alias and `trainlog.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(dir)?;
        for c in &self.checkpoints {
            c.save(&dir.join(checkpoint_file_name(c.iteration)))?;
        }
        self.final_checkpoint().save(&dir.join(FINAL_CHECKPOINT))?;
        self.log.write_csv(&dir.join("trainlog.csv"))
    }
}

/// Runs `config.iterations` training steps, checkpointing and evaluating
/// after every `checkpoint_every` steps and after the last one.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(dataset, config.clone())?;
    let mut log = TrainLog::default();
    let mut checkpoints = Vec::new();
    let mut window = Vec::new();
    for it in 1..=config.iterations {
        window.push(trainer.train_step()?);
        if it % config.checkpoint_every == 0 || it == config.iterations {
            let (val, test) = trainer.evaluate_checkpoint()?;
            let avg = |f: fn(&StepLosses) -> f64| window.iter().map(f).sum::<f64>() / window.len() as f64;
            log.push(LogRow {
                iteration: it,
                loss_d: avg(|l| l.critic),
                loss_g: avg(|l| l.generator),
                loss_cls: avg(|l| l.generator_cls),
                loss_sr: avg(|l| l.sr),
                val,
                test: Some(test),
            })?;
            checkpoints.push(trainer.checkpoint());
            window.clear();
        }
    }
    let metric = selection_metric(config.eval.task);
    let selected = select_model(&log, config.selection_mode, metric)?;
    Ok(TrainOutcome {
        log,
        checkpoints,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{generate_synthetic, SynthConfig};
    use crate::hallucinate::HallucinationConfig;
    use crate::losses::LossWeights;
    use crate::zsleval::EvalConfig;

    fn data() -> Dataset {
        generate_synthetic(&SynthConfig {
            samples_per_class: 12,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn tiny() -> TrainConfig {
        TrainConfig {
            iterations: 4,
            batch_size: 8,
            d_steps_per_g_step: 2,
            lr: 1e-3,
            noise_dim: 3,
            checkpoint_every: 2,
            gen_hidden: vec![16],
            disc_hidden: vec![16],
            sr_hidden: vec![8, 8],
            eval: EvalConfig {
                n_synthetic_per_class: 10,
                ..EvalConfig::default()
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn same_seed_same_losses() {
        let d = data();
        let run = || {
            let mut t = Trainer::new(&d, tiny()).unwrap();
            (0..3).map(|_| t.train_step().unwrap()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn regressor_is_inert_without_its_weight() {
        let d = data();
        let base = TrainConfig {
            weights: LossWeights {
                lambda_sr: 0.0,
                ..LossWeights::default()
            },
            hallucination: HallucinationConfig::disabled(),
            ..tiny()
        };
        let other = TrainConfig {
            sr_hidden: vec![5, 3],
            ..base.clone()
        };
        let mut a = Trainer::new(&d, base).unwrap();
        let mut b = Trainer::new(&d, other).unwrap();
        for _ in 0..3 {
            let (la, lb) = (a.train_step().unwrap(), b.train_step().unwrap());
            assert_eq!(la, lb);
            assert_eq!(la.sr, 0.0);
        }
        assert_eq!(a.params().generator, b.params().generator);
        assert_eq!(a.params().discriminator, b.params().discriminator);
    }

    #[test]
    fn sr_weight_changes_the_generator() {
        let d = data();
        let off = TrainConfig {
            weights: LossWeights {
                lambda_sr: 0.0,
                ..LossWeights::default()
            },
            ..tiny()
        };
        let mut a = Trainer::new(&d, off).unwrap();
        let mut b = Trainer::new(&d, tiny()).unwrap();
        a.train_step().unwrap();
        let l = b.train_step().unwrap();
        assert!(l.sr < 0.0);
        assert_ne!(a.params().generator, b.params().generator);
    }

    #[test]
    fn checkpoints_and_log_rows() {
        let d = data();
        let cfg = TrainConfig {
            iterations: 5,
            ..tiny()
        };
        let out = train(&d, &cfg).unwrap();
        let iters: Vec<usize> = out.log.rows.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![2, 4, 5]);
        assert_eq!(out.checkpoints.len(), 3);
        assert!(out.log.rows.iter().all(|r| r.val.is_some() && r.test.is_some()));
        assert!(out.log.rows.iter().all(|r| r.loss_d.is_finite() && r.loss_sr <= 0.0));
        assert_eq!(out.final_checkpoint().iteration, 5);
        assert_eq!(out.final_checkpoint().config_hash, cfg.hash());

        let dir = tempfile::tempdir().unwrap();
        out.write(dir.path()).unwrap();
        let mut names: Vec<String> = std::fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        names.sort();
        assert_eq!(
            names,
            ["ckpt_000002.txt", "ckpt_000004.txt", "ckpt_000005.txt", "final.txt", "trainlog.csv"]
        );
        let reloaded = Checkpoint::load(&dir.path().join(FINAL_CHECKPOINT)).unwrap();
        assert_eq!(&reloaded, out.final_checkpoint());
    }

    #[test]
    fn empty_unseen_set_fails_at_evaluation() {
        let d = data();
        let mut s = d.splits().clone();
        let unseen = std::mem::take(&mut s.unseen);
        s.test.retain(|&i| !unseen.contains(&d.label(i)));
        let d = d.with_splits(s).unwrap();
        let mut t = Trainer::new(&d, tiny()).unwrap();
        t.train_step().unwrap();
        assert!(matches!(t.evaluate_checkpoint(), Err(Error::Dataset(_))));
    }

    #[test]
    fn training_reads_only_training_classes() {
        let mut d = data();
        let audit = d.instrument();
        let mut t = Trainer::new(&d, tiny()).unwrap();
        for _ in 0..3 {
            t.train_step().unwrap();
        }
        assert!(audit.training_reads() > 0);
        assert_eq!(audit.unseen_violations(), 0);
        assert_eq!(audit.pseudo_unseen_reads(), 0);
        let before = audit.training_reads();
        t.evaluate_checkpoint().unwrap();
        assert_eq!(audit.training_reads(), before);
    }

    #[test]
    fn term_names_in_numeric_errors() {
        let e = in_term::<()>("sr", Err(Error::NonFinite("cosine_sim".into()))).unwrap_err();
        assert!(e.to_string().contains("'sr'"));
        let e = in_term::<()>("sr", Err(Error::ZeroNorm { row: 2 })).unwrap_err();
        assert!(e.is_numeric() && e.to_string().contains("'sr'"));
    }
}
