use std::collections::BTreeMap;
use std::path::Path;

use super::select::SelectionMode;
use crate::dataio::text::{fmt_f64, parse_f64, parse_usize, require, sha256_hex};
use crate::error::{Error, Result};
use crate::hallucinate::HallucinationConfig;
use crate::losses::{LossWeights, SimilarityFn};
use crate::zsleval::{ClassifierKind, EvalConfig, GammaGrid, SoftmaxTraining, Task};

pub const ADAM_BETA1: f64 = 0.5;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Generator updates; each is preceded by `d_steps_per_g_step` critic updates.
    pub iterations: usize,
    pub batch_size: usize,
    pub d_steps_per_g_step: usize,
    pub lr: f64,
    pub noise_dim: usize,
    pub weights: LossWeights,
    pub similarity: SimilarityFn,
    pub hallucination: HallucinationConfig,
    pub checkpoint_every: usize,
    pub seed: u64,
    pub selection_mode: SelectionMode,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    pub sr_hidden: Vec<usize>,
    pub eval: EvalConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 2000,
            batch_size: 64,
            d_steps_per_g_step: 5,
            lr: 1e-4,
            noise_dim: 10,
            weights: LossWeights::default(),
            similarity: SimilarityFn::Cosine,
            hallucination: HallucinationConfig::default(),
            checkpoint_every: 200,
            seed: 0,
            selection_mode: SelectionMode::Validation,
            gen_hidden: vec![1024],
            disc_hidden: vec![1024],
            sr_hidden: vec![256, 256],
            eval: EvalConfig::default(),
        }
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn split_usizes(path: &Path, s: &str) -> Result<Vec<usize>> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|t| parse_usize(path, t)).collect()
}

fn parse_bool(path: &Path, s: &str) -> Result<bool> {
    match s {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::Parse {
            path: path.to_path_buf(),
            detail: format!("expected true or false, got '{other}'"),
        }),
    }
}

fn grid_text(g: &GammaGrid) -> String {
    match g {
        GammaGrid::Uniform { points } => format!("uniform:{points}"),
        GammaGrid::Exact => "exact".into(),
        GammaGrid::Explicit(v) => {
            let vals: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
            format!("explicit:{}", vals.join(","))
        }
    }
}

fn parse_grid(path: &Path, s: &str) -> Result<GammaGrid> {
    if s == "exact" {
        return Ok(GammaGrid::Exact);
    }
    if let Some(n) = s.strip_prefix("uniform:") {
        return Ok(GammaGrid::Uniform {
            points: parse_usize(path, n)?,
        });
    }
    if let Some(v) = s.strip_prefix("explicit:") {
        let vals = v.split(',').map(|t| parse_f64(path, t)).collect::<Result<_>>()?;
        return Ok(GammaGrid::Explicit(vals));
    }
    Err(Error::Parse {
        path: path.to_path_buf(),
        detail: format!("unknown gamma grid '{s}'"),
    })
}

fn parse_with<T: std::str::FromStr<Err = Error>>(path: &Path, s: &str) -> Result<T> {
    s.parse().map_err(|e: Error| Error::Parse {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("iterations", self.iterations),
            ("batch_size", self.batch_size),
            ("d_steps_per_g_step", self.d_steps_per_g_step),
            ("noise_dim", self.noise_dim),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, c) in counts {
            if c < 1 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid(format!("lr must be positive and finite, got {}", self.lr)));
        }
        self.weights.validate()?;
        self.hallucination.validate()?;
        self.eval.validate()
    }

    /// Canonical `key=value` rendering. Float fields round-trip exactly.
    pub fn to_key_values(&self) -> Vec<(&'static str, String)> {
        let e = &self.eval;
        vec![
            ("iterations", self.iterations.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("d_steps_per_g_step", self.d_steps_per_g_step.to_string()),
            ("lr", fmt_f64(self.lr)),
            ("noise_dim", self.noise_dim.to_string()),
            ("lambda_sr", fmt_f64(self.weights.lambda_sr)),
            ("lambda_cls", fmt_f64(self.weights.lambda_cls)),
            ("lambda_pivot", fmt_f64(self.weights.lambda_pivot)),
            ("similarity", self.similarity.name().into()),
            ("hallucination", self.hallucination.enabled.to_string()),
            ("alpha_low", fmt_f64(self.hallucination.alpha_low)),
            ("alpha_high", fmt_f64(self.hallucination.alpha_high)),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("seed", self.seed.to_string()),
            ("selection_mode", self.selection_mode.name().into()),
            ("gen_hidden", join(&self.gen_hidden)),
            ("disc_hidden", join(&self.disc_hidden)),
            ("sr_hidden", join(&self.sr_hidden)),
            ("eval_n_per_class", e.n_synthetic_per_class.to_string()),
            ("eval_task", task_name(e.task).into()),
            ("eval_gamma_grid", grid_text(&e.gamma_grid)),
            ("eval_classifier", classifier_name(e.classifier).into()),
            ("eval_max_iters", e.softmax.max_iters.to_string()),
            ("eval_tolerance", fmt_f64(e.softmax.tolerance)),
            ("eval_weight_decay", fmt_f64(e.softmax.weight_decay)),
        ]
    }

    /// Inverse of [`TrainConfig::to_key_values`]; `path` is used in errors.
    /// Evaluation threads are not part of the rendering and default to 1.
    pub fn from_key_values(path: &Path, map: &BTreeMap<String, String>) -> Result<Self> {
        let get = |k: &str| require(path, map, k);
        let cfg = TrainConfig {
            iterations: parse_usize(path, get("iterations")?)?,
            batch_size: parse_usize(path, get("batch_size")?)?,
            d_steps_per_g_step: parse_usize(path, get("d_steps_per_g_step")?)?,
            lr: parse_f64(path, get("lr")?)?,
            noise_dim: parse_usize(path, get("noise_dim")?)?,
            weights: LossWeights {
                lambda_sr: parse_f64(path, get("lambda_sr")?)?,
                lambda_cls: parse_f64(path, get("lambda_cls")?)?,
                lambda_pivot: parse_f64(path, get("lambda_pivot")?)?,
            },
            similarity: parse_with(path, get("similarity")?)?,
            hallucination: HallucinationConfig {
                enabled: parse_bool(path, get("hallucination")?)?,
                alpha_low: parse_f64(path, get("alpha_low")?)?,
                alpha_high: parse_f64(path, get("alpha_high")?)?,
            },
            checkpoint_every: parse_usize(path, get("checkpoint_every")?)?,
            seed: get("seed")?.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                detail: "seed is not an unsigned integer".into(),
            })?,
            selection_mode: parse_with(path, get("selection_mode")?)?,
            gen_hidden: split_usizes(path, get("gen_hidden")?)?,
            disc_hidden: split_usizes(path, get("disc_hidden")?)?,
            sr_hidden: split_usizes(path, get("sr_hidden")?)?,
            eval: EvalConfig {
                n_synthetic_per_class: parse_usize(path, get("eval_n_per_class")?)?,
                task: parse_with(path, get("eval_task")?)?,
                gamma_grid: parse_grid(path, get("eval_gamma_grid")?)?,
                classifier: parse_with::<ClassifierKind>(path, get("eval_classifier")?)?,
                softmax: SoftmaxTraining {
                    max_iters: parse_usize(path, get("eval_max_iters")?)?,
                    tolerance: parse_f64(path, get("eval_tolerance")?)?,
                    weight_decay: parse_f64(path, get("eval_weight_decay")?)?,
                },
                threads: 1,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// SHA-256 of the canonical rendering.
    pub fn hash(&self) -> String {
        let text: String = self
            .to_key_values()
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        sha256_hex(text.as_bytes())
    }
}

pub(crate) fn task_name(t: Task) -> &'static str {
    match t {
        Task::Zsl => "zsl",
        Task::Gzsl => "gzsl",
    }
}

fn classifier_name(k: ClassifierKind) -> &'static str {
    match k {
        ClassifierKind::Softmax => "softmax",
        ClassifierKind::NearestCentroid => "centroid",
    }
}
