//! ZSL / GZSL evaluation: synthesize features for the target classes, fit a
//! classifier, and score it with per-class Top-1, the calibrated-stacking
//! seen/unseen curve with its AUC, and the harmonic mean.

mod classifier;
mod metrics;
mod report;

use rand::Rng;
use rand_distr::StandardNormal;

pub use classifier::{train_classifier, Classifier, ClassifierKind, SoftmaxTraining};
pub use metrics::{
    curve_auc, exact_gamma_grid, harmonic_mean, seen_unseen_curve, sorted_polyline, top1_per_class_accuracy,
    uniform_gamma_grid, CurvePoint, ScoredSet, SeenUnseenCurve,
};
pub use report::{read_curve_csv, write_curve_csv, write_predictions_csv, write_summary_csv, Prediction};

use crate::dataio::{Dataset, Phase};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::networks::Generator;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Task {
    Zsl,
    #[default]
    Gzsl,
}

impl std::str::FromStr for Task {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zsl" => Ok(Task::Zsl),
            "gzsl" => Ok(Task::Gzsl),
            other => Err(Error::invalid(format!("unknown task '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum GammaGrid {
    /// `points` values on `[-S, S]`, `S` the largest absolute score on the
    /// validation split, plus `-inf` and `+inf`.
    Uniform { points: usize },
    /// Every distinct operating point of the scored set.
    Exact,
    /// A caller-supplied ascending grid.
    Explicit(Vec<f64>),
}

impl Default for GammaGrid {
    fn default() -> Self {
        GammaGrid::Uniform { points: 200 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub n_synthetic_per_class: usize,
    pub task: Task,
    pub gamma_grid: GammaGrid,
    pub classifier: ClassifierKind,
    pub softmax: SoftmaxTraining,
    /// Workers for the gamma sweep.
    pub threads: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n_synthetic_per_class: 300,
            task: Task::Gzsl,
            gamma_grid: GammaGrid::default(),
            classifier: ClassifierKind::Softmax,
            softmax: SoftmaxTraining::default(),
            threads: 1,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_synthetic_per_class < 1 {
            return Err(Error::invalid("n_synthetic_per_class must be at least 1"));
        }
        match &self.gamma_grid {
            GammaGrid::Uniform { points: 0 } => Err(Error::invalid("uniform gamma grid needs points")),
            GammaGrid::Explicit(g) if g.is_empty() => Err(Error::invalid("empty gamma grid")),
            GammaGrid::Explicit(g) if g.windows(2).any(|w| w[0] > w[1]) => {
                Err(Error::invalid("gamma grid must be sorted ascending"))
            }
            _ => Ok(()),
        }
    }
}

/// Which split plays the role of the evaluation set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalTarget {
    /// Pseudo-unseen classes and validation samples; never reads test data.
    Validation,
    /// True unseen classes and the test split.
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub top1_unseen: f64,
    pub auc: Option<f64>,
    pub h: Option<f64>,
    /// Seen / unseen per-class accuracy at `gamma = 0`.
    pub acc_seen: Option<f64>,
    pub acc_unseen: Option<f64>,
    pub curve: Vec<CurvePoint>,
    pub zsl_predictions: Vec<Prediction>,
}

/// Draws `n_per_class` features `G(r_c, z)`, `z ~ N(0, I)`, for every class
/// in `classes`, whose representations are the rows of `class_reps`.
pub fn synthesize_features<R: Rng + ?Sized>(
    generator: &Generator,
    class_reps: &Tensor,
    classes: &[usize],
    n_per_class: usize,
    noise_dim: usize,
    rng: &mut R,
) -> Result<(Tensor, Vec<usize>)> {
    if classes.is_empty() {
        return Err(Error::invalid("no target classes to synthesize"));
    }
    if class_reps.rows() != classes.len() {
        return Err(Error::shape(
            "synthesize_features",
            format!("{} representation rows for {} classes", class_reps.rows(), classes.len()),
        ));
    }
    if class_reps.cols() + noise_dim != generator.input_dim() {
        return Err(Error::shape(
            "synthesize_features",
            format!(
                "rep ({}) + noise ({noise_dim}) columns, generator expects {}",
                class_reps.cols(),
                generator.input_dim()
            ),
        ));
    }
    let total = classes.len() * n_per_class;
    let mut reps = Tensor::zeros(total, class_reps.cols());
    let mut labels = Vec::with_capacity(total);
    for (k, &c) in classes.iter().enumerate() {
        for s in 0..n_per_class {
            reps.row_mut(k * n_per_class + s).copy_from_slice(class_reps.row(k));
            labels.push(c);
        }
    }
    let z = Tensor::from_fn(total, noise_dim, |_, _| rng.sample(StandardNormal));
    Ok((generator.forward(&reps, &z)?, labels))
}

struct Roles {
    seen: Vec<usize>,
    unseen: Vec<usize>,
    eval_samples: Vec<usize>,
    seen_train_samples: Vec<usize>,
}

fn roles(dataset: &Dataset, target: EvalTarget) -> Result<Roles> {
    let s = dataset.splits();
    let r = match target {
        EvalTarget::Test => {
            let mut pool = s.train.clone();
            pool.extend(&s.val);
            pool.sort_unstable();
            Roles {
                seen: s.seen.clone(),
                unseen: s.unseen.clone(),
                eval_samples: s.test.clone(),
                seen_train_samples: dataset.samples_of_classes(&pool, &s.seen),
            }
        }
        EvalTarget::Validation => Roles {
            seen: s.train_classes(),
            unseen: s.val_pseudo_unseen.clone(),
            eval_samples: s.val.clone(),
            seen_train_samples: s.train.clone(),
        },
    };
    if r.unseen.is_empty() {
        return Err(Error::Dataset(match target {
            EvalTarget::Test => "dataset has no unseen classes to evaluate".into(),
            EvalTarget::Validation => "dataset has no pseudo-unseen validation classes".into(),
        }));
    }
    Ok(r)
}

/// Full evaluation of a generator on `dataset`.
pub fn evaluate<R: Rng + ?Sized>(
    generator: &Generator,
    noise_dim: usize,
    dataset: &Dataset,
    target: EvalTarget,
    cfg: &EvalConfig,
    rng: &mut R,
) -> Result<MetricsReport> {
    cfg.validate()?;
    let _phase = dataset.enter_phase(Phase::Evaluation);
    let roles = roles(dataset, target)?;

    let reps = dataset.reps_of(&roles.unseen);
    let (syn_x, syn_y) =
        synthesize_features(generator, &reps, &roles.unseen, cfg.n_synthetic_per_class, noise_dim, rng)?;

    // ZSL: unseen label space, synthesized features only.
    let zsl_samples = dataset.samples_of_classes(&roles.eval_samples, &roles.unseen);
    if zsl_samples.is_empty() {
        return Err(Error::Dataset("evaluation split has no samples of the unseen classes".into()));
    }
    let zsl = train_classifier(&syn_x, &syn_y, &roles.unseen, cfg.classifier, &cfg.softmax)?;
    let zsl_truth: Vec<usize> = zsl_samples.iter().map(|&i| dataset.label(i)).collect();
    let zsl_pred = zsl.predict(&dataset.features_of(&zsl_samples))?;
    let top1_unseen = top1_per_class_accuracy(&zsl_pred, &zsl_truth, &roles.unseen)?;
    let zsl_predictions = zsl_samples
        .iter()
        .zip(&zsl_truth)
        .zip(&zsl_pred)
        .map(|((&sample, &truth), &predicted)| Prediction {
            sample,
            truth,
            predicted,
        })
        .collect();

    let mut report = MetricsReport {
        top1_unseen,
        auc: None,
        h: None,
        acc_seen: None,
        acc_unseen: None,
        curve: Vec::new(),
        zsl_predictions,
    };
    if cfg.task == Task::Zsl {
        return Ok(report);
    }

    // GZSL: seen + unseen label space; real seen features plus synthesized unseen.
    let real_x = dataset.features_of(&roles.seen_train_samples);
    let real_y: Vec<usize> = roles.seen_train_samples.iter().map(|&i| dataset.label(i)).collect();
    let train_x = Tensor::vstack(&[&real_x, &syn_x])?;
    let mut train_y = real_y;
    train_y.extend(&syn_y);
    let mut label_space: Vec<usize> = roles.seen.iter().chain(&roles.unseen).copied().collect();
    label_space.sort_unstable();
    let gzsl = train_classifier(&train_x, &train_y, &label_space, cfg.classifier, &cfg.softmax)?;

    let eval_x = dataset.features_of(&roles.eval_samples);
    let truth: Vec<usize> = roles.eval_samples.iter().map(|&i| dataset.label(i)).collect();
    let scores = gzsl.scores(&eval_x)?;
    let set = ScoredSet {
        scores: &scores,
        label_space: &label_space,
        truth: &truth,
        seen: &roles.seen,
        unseen: &roles.unseen,
    };
    let grid = match &cfg.gamma_grid {
        GammaGrid::Uniform { points } => {
            let val = &dataset.splits().val;
            let span = if val.is_empty() {
                scores.max_abs()
            } else {
                gzsl.scores(&dataset.features_of(val))?.max_abs()
            };
            uniform_gamma_grid(span, *points)
        }
        GammaGrid::Exact => exact_gamma_grid(&set)?,
        GammaGrid::Explicit(g) => g.clone(),
    };
    let curve = seen_unseen_curve(&set, &grid, cfg.threads)?;
    let at_zero = seen_unseen_curve(&set, &[0.0], 1)?.points[0];

    report.auc = Some(curve.auc);
    report.h = Some(harmonic_mean(at_zero.acc_seen, at_zero.acc_unseen));
    report.acc_seen = Some(at_zero.acc_seen);
    report.acc_unseen = Some(at_zero.acc_unseen);
    report.curve = curve.points;
    Ok(report)
}
