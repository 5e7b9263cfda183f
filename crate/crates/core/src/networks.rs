//! Generator, two-headed critic and semantic-representation regressor.
//!
//! Weights are stored `fan_in x fan_out` so a batch `x` (rows are samples)
//! maps through a layer as `x . W + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffcore::{Tape, Tensor, Var, DEFAULT_LEAKY_SLOPE};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct NetConfig {
    pub rep_dim: usize,
    pub noise_dim: usize,
    pub feat_dim: usize,
    pub n_seen_classes: usize,
    pub gen_hidden: Vec<usize>,
    pub disc_hidden: Vec<usize>,
    /// Widths of the two hidden layers of the three-layer SR regressor.
    pub sr_hidden: Vec<usize>,
}

impl NetConfig {
    pub fn new(rep_dim: usize, noise_dim: usize, feat_dim: usize, n_seen_classes: usize) -> Self {
        NetConfig {
            rep_dim,
            noise_dim,
            feat_dim,
            n_seen_classes,
            gen_hidden: vec![1024],
            disc_hidden: vec![1024],
            sr_hidden: vec![256, 256],
        }
    }

    pub fn with_hidden(mut self, gen: Vec<usize>, disc: Vec<usize>, sr: Vec<usize>) -> Self {
        self.gen_hidden = gen;
        self.disc_hidden = disc;
        self.sr_hidden = sr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("rep_dim", self.rep_dim),
            ("noise_dim", self.noise_dim),
            ("feat_dim", self.feat_dim),
            ("n_seen_classes", self.n_seen_classes),
        ];
        for (name, d) in dims {
            if d == 0 {
                return Err(Error::invalid(format!("{name} must be at least 1")));
            }
        }
        if self.disc_hidden.is_empty() {
            return Err(Error::invalid("critic needs at least one hidden layer"));
        }
        if self.sr_hidden.len() != 2 {
            return Err(Error::invalid(format!(
                "SR regressor has exactly 3 layers (2 hidden widths), got {} hidden widths",
                self.sr_hidden.len()
            )));
        }
        let all = self
            .gen_hidden
            .iter()
            .chain(&self.disc_hidden)
            .chain(&self.sr_hidden);
        if all.clone().any(|&w| w == 0) {
            return Err(Error::invalid("zero-sized hidden layer"));
        }
        Ok(())
    }
}

/// Fully connected layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Dense {
            weight: Tensor::zeros(fan_in, fan_out),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        Dense {
            weight: Tensor::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..=a)),
            bias: Tensor::zeros(1, fan_out),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.cols()
    }

    fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDense {
        let put = |tape: &mut Tape, t: &Tensor| {
            if trainable {
                tape.leaf(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        BoundDense {
            weight: put(tape, &self.weight),
            bias: put(tape, &self.bias),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
}

impl BoundDense {
    fn apply(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = tape.matmul(x, self.weight)?;
        tape.add(h, self.bias)
    }
}

/// Ordered access to every parameter tensor of a network.
pub trait Parameters {
    fn named_tensors(&self) -> Vec<(String, &Tensor)>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    fn tensors(&self) -> Vec<&Tensor> {
        self.named_tensors().into_iter().map(|(_, t)| t).collect()
    }

    fn zero_all(&mut self) {
        for t in self.tensors_mut() {
            t.data_mut().fill(0.0);
        }
    }
}

fn dense_names<'a>(prefix: &str, layers: &'a [Dense]) -> Vec<(String, &'a Tensor)> {
    layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                (format!("{prefix}.{i}.weight"), &l.weight),
                (format!("{prefix}.{i}.bias"), &l.bias),
            ]
        })
        .collect()
}

fn dense_mut(layers: &mut [Dense]) -> Vec<&mut Tensor> {
    layers
        .iter_mut()
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
}

fn bound_vars(layers: &[BoundDense]) -> Vec<Var> {
    layers.iter().flat_map(|l| [l.weight, l.bias]).collect()
}

fn chain(widths: &[usize], rng: &mut impl Rng) -> Vec<Dense> {
    widths
        .windows(2)
        .map(|w| Dense::glorot(w[0], w[1], rng))
        .collect()
}

fn check_cols(op: &'static str, t: &Tensor, expected: usize) -> Result<()> {
    if t.cols() != expected {
        return Err(Error::shape(
            op,
            format!("input has {} columns, network expects {expected}", t.cols()),
        ));
    }
    Ok(())
}

/// G: `[r, z] -> FC/leaky ... -> FC/relu`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug)]
pub struct BoundGenerator {
    pub layers: Vec<BoundDense>,
}

impl BoundGenerator {
    pub fn vars(&self) -> Vec<Var> {
        bound_vars(&self.layers)
    }
}

impl Generator {
    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::fan_out)
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundGenerator {
        BoundGenerator {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }

    /// Evaluates G on plain tensors.
    pub fn forward(&self, r: &Tensor, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let g = self.bind(&mut tape, false);
        let r = tape.constant(r.clone());
        let z = tape.constant(z.clone());
        let out = generator_forward(&mut tape, &g, r, z)?;
        Ok(tape.value(out)?.clone())
    }
}

impl Parameters for Generator {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        dense_names("g", &self.layers)
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        dense_mut(&mut self.layers)
    }
}

pub fn generator_forward(tape: &mut Tape, g: &BoundGenerator, r: Var, z: Var) -> Result<Var> {
    let (rv, zv) = (tape.value(r)?, tape.value(z)?);
    if rv.rows() != zv.rows() {
        return Err(Error::shape(
            "generator_forward",
            format!("{} rep rows vs {} noise rows", rv.rows(), zv.rows()),
        ));
    }
    let input_dim = tape.value(g.layers[0].weight)?.rows();
    if rv.cols() + zv.cols() != input_dim {
        return Err(Error::shape(
            "generator_forward",
            format!(
                "rep ({}) + noise ({}) columns, generator expects {input_dim}",
                rv.cols(),
                zv.cols()
            ),
        ));
    }
    let mut h = tape.concat_cols(r, z)?;
    let last = g.layers.len() - 1;
    for (i, layer) in g.layers.iter().enumerate() {
        h = layer.apply(tape, h)?;
        h = if i == last {
            tape.relu(h)?
        } else {
            tape.leaky_relu(h, DEFAULT_LEAKY_SLOPE)?
        };
    }
    Ok(h)
}

/// Critic with a shared leaky-relu trunk and two linear heads: a single
/// real/fake score and per-seen-class logits.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub trunk: Vec<Dense>,
    pub real_head: Dense,
    pub class_head: Dense,
}

#[derive(Clone, Debug)]
pub struct BoundDiscriminator {
    pub trunk: Vec<BoundDense>,
    pub real_head: BoundDense,
    pub class_head: BoundDense,
}

impl BoundDiscriminator {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = bound_vars(&self.trunk);
        v.extend([self.real_head.weight, self.real_head.bias]);
        v.extend([self.class_head.weight, self.class_head.bias]);
        v
    }
}

impl Discriminator {
    pub fn input_dim(&self) -> usize {
        self.trunk[0].fan_in()
    }

    pub fn n_classes(&self) -> usize {
        self.class_head.fan_out()
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundDiscriminator {
        BoundDiscriminator {
            trunk: self.trunk.iter().map(|l| l.bind(tape, trainable)).collect(),
            real_head: self.real_head.bind(tape, trainable),
            class_head: self.class_head.bind(tape, trainable),
        }
    }

    /// Evaluates both heads on plain tensors.
    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let mut tape = Tape::new();
        let d = self.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let (real, class) = discriminator_forward(&mut tape, &d, x)?;
        Ok((tape.value(real)?.clone(), tape.value(class)?.clone()))
    }

    /// Leaky-relu derivative masks (1 or slope) of every trunk layer at `x`.
    fn trunk_masks(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        check_cols("critic_input_gradient", x, self.input_dim())?;
        let mut masks = Vec::with_capacity(self.trunk.len());
        let mut h = x.clone();
        for layer in &self.trunk {
            let mut pre = h.matmul(&layer.weight)?;
            for i in 0..pre.rows() {
                for (v, b) in pre.row_mut(i).iter_mut().zip(layer.bias.data()) {
                    *v += b;
                }
            }
            masks.push(pre.map(|v| if v > 0.0 { 1.0 } else { DEFAULT_LEAKY_SLOPE }));
            h = pre.map(|v| if v > 0.0 { v } else { DEFAULT_LEAKY_SLOPE * v });
        }
        Ok(masks)
    }
}

impl Parameters for Discriminator {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = dense_names("d.trunk", &self.trunk);
        v.push(("d.real.weight".into(), &self.real_head.weight));
        v.push(("d.real.bias".into(), &self.real_head.bias));
        v.push(("d.class.weight".into(), &self.class_head.weight));
        v.push(("d.class.bias".into(), &self.class_head.bias));
        v
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = dense_mut(&mut self.trunk);
        v.extend([&mut self.real_head.weight, &mut self.real_head.bias]);
        v.extend([&mut self.class_head.weight, &mut self.class_head.bias]);
        v
    }
}

/// Returns `(real_logits: n x 1, class_logits: n x K)`, both unsquashed.
pub fn discriminator_forward(
    tape: &mut Tape,
    d: &BoundDiscriminator,
    x: Var,
) -> Result<(Var, Var)> {
    let expected = tape.value(d.trunk[0].weight)?.rows();
    check_cols("discriminator_forward", tape.value(x)?, expected)?;
    let mut h = x;
    for layer in &d.trunk {
        h = layer.apply(tape, h)?;
        h = tape.leaky_relu(h, DEFAULT_LEAKY_SLOPE)?;
    }
    let real = d.real_head.apply(tape, h)?;
    let class = d.class_head.apply(tape, h)?;
    Ok((real, class))
}

/// Gradient of the real/fake score w.r.t. the critic input, one row per
/// sample of `x`, as a differentiable function of the bound critic weights.
///
/// The trunk is piecewise linear, so for fixed activation pattern the input
/// gradient is `w_real^T . diag(m_L) . W_L^T ... diag(m_1) . W_1^T`. The
/// activation masks are constant almost everywhere, which makes this the
/// exact first-order gradient of any penalty built on it.
pub fn critic_input_gradient(
    tape: &mut Tape,
    d: &BoundDiscriminator,
    params: &Discriminator,
    x: &Tensor,
) -> Result<Var> {
    let masks = params.trunk_masks(x)?;
    let head = tape.transpose(d.real_head.weight)?;
    let mut g: Option<Var> = None;
    for (layer, mask) in d.trunk.iter().zip(masks).rev() {
        let m = tape.constant(mask);
        let gated = match g {
            None => tape.mul(m, head)?,
            Some(prev) => tape.mul(prev, m)?,
        };
        let wt = tape.transpose(layer.weight)?;
        g = Some(tape.matmul(gated, wt)?);
    }
    Ok(g.expect("critic trunk is nonempty"))
}

/// SR: three fully connected layers, relu after the first two, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct SemanticRegressor {
    pub layers: Vec<Dense>,
}

#[derive(Clone, Debug)]
pub struct BoundRegressor {
    pub layers: Vec<BoundDense>,
}

impl BoundRegressor {
    pub fn vars(&self) -> Vec<Var> {
        bound_vars(&self.layers)
    }
}

impl SemanticRegressor {
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundRegressor {
        BoundRegressor {
            layers: self.layers.iter().map(|l| l.bind(tape, trainable)).collect(),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let s = self.bind(&mut tape, false);
        let x = tape.constant(x.clone());
        let out = sr_forward(&mut tape, &s, x)?;
        Ok(tape.value(out)?.clone())
    }
}

impl Parameters for SemanticRegressor {
    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        dense_names("sr", &self.layers)
    }
    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        dense_mut(&mut self.layers)
    }
}

pub fn sr_forward(tape: &mut Tape, s: &BoundRegressor, x: Var) -> Result<Var> {
    let expected = tape.value(s.layers[0].weight)?.rows();
    check_cols("sr_forward", tape.value(x)?, expected)?;
    let mut h = x;
    let last = s.layers.len() - 1;
    for (i, layer) in s.layers.iter().enumerate() {
        h = layer.apply(tape, h)?;
        if i != last {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// All trainable state of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub regressor: SemanticRegressor,
}

impl NetworkParams {
    /// Named tensors of all three networks in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = self.generator.named_tensors();
        v.extend(self.discriminator.named_tensors());
        v.extend(self.regressor.named_tensors());
        v
    }

    pub fn zero_all(&mut self) {
        self.generator.zero_all();
        self.discriminator.zero_all();
        self.regressor.zero_all();
    }

    /// Rebuilds the networks from `(name, tensor)` pairs as produced by
    /// [`NetworkParams::named_tensors`], checking that layer shapes chain.
    pub fn from_named(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (name, t) in tensors {
            if map.insert(name.clone(), t).is_some() {
                return Err(Error::invalid(format!("duplicate tensor '{name}'")));
            }
        }
        let mut take = |name: String| {
            map.remove(&name)
                .ok_or_else(|| Error::invalid(format!("missing tensor '{name}'")))
        };
        let layer = |take: &mut dyn FnMut(String) -> Result<Tensor>, prefix: &str| -> Result<Dense> {
            let weight = take(format!("{prefix}.weight"))?;
            let bias = take(format!("{prefix}.bias"))?;
            if bias.shape() != (1, weight.cols()) {
                return Err(Error::shape(
                    "from_named",
                    format!("{prefix}.bias is {:?}, weight is {:?}", bias.shape(), weight.shape()),
                ));
            }
            Ok(Dense { weight, bias })
        };
        let stack = |take: &mut dyn FnMut(String) -> Result<Tensor>, prefix: &str| -> Result<Vec<Dense>> {
            let mut layers: Vec<Dense> = Vec::new();
            while let Ok(l) = layer(take, &format!("{prefix}.{}", layers.len())) {
                if let Some(prev) = layers.last() {
                    if prev.fan_out() != l.fan_in() {
                        return Err(Error::shape(
                            "from_named",
                            format!("{prefix}.{} does not chain with its predecessor", layers.len()),
                        ));
                    }
                }
                layers.push(l);
            }
            if layers.is_empty() {
                return Err(Error::invalid(format!("no layers under '{prefix}'")));
            }
            Ok(layers)
        };
        let generator = Generator {
            layers: stack(&mut take, "g")?,
        };
        let trunk = stack(&mut take, "d.trunk")?;
        let real_head = layer(&mut take, "d.real")?;
        let class_head = layer(&mut take, "d.class")?;
        let top = trunk.last().expect("nonempty").fan_out();
        if real_head.fan_in() != top || real_head.fan_out() != 1 || class_head.fan_in() != top {
            return Err(Error::shape("from_named", "critic heads do not match the trunk"));
        }
        let regressor = SemanticRegressor {
            layers: stack(&mut take, "sr")?,
        };
        if regressor.layers.len() != 3 {
            return Err(Error::invalid("SR regressor must have 3 layers"));
        }
        if let Some(extra) = map.keys().next() {
            return Err(Error::invalid(format!("unexpected tensor '{extra}'")));
        }
        let params = NetworkParams {
            generator,
            discriminator: Discriminator {
                trunk,
                real_head,
                class_head,
            },
            regressor,
        };
        if params.discriminator.input_dim() != params.generator.output_dim()
            || params.regressor.layers[0].fan_in() != params.generator.output_dim()
        {
            return Err(Error::shape("from_named", "feature widths disagree across networks"));
        }
        Ok(params)
    }

    /// Recovers the architecture implied by the stored tensor shapes.
    pub fn infer_config(&self, noise_dim: usize) -> Result<NetConfig> {
        let g_in = self.generator.input_dim();
        if g_in <= noise_dim {
            return Err(Error::invalid(format!(
                "noise_dim {noise_dim} leaves no room for the representation in a {g_in}-wide input"
            )));
        }
        let hidden = |layers: &[Dense]| -> Vec<usize> {
            layers[..layers.len() - 1].iter().map(Dense::fan_out).collect()
        };
        Ok(NetConfig {
            rep_dim: g_in - noise_dim,
            noise_dim,
            feat_dim: self.generator.output_dim(),
            n_seen_classes: self.discriminator.n_classes(),
            gen_hidden: hidden(&self.generator.layers),
            disc_hidden: self.discriminator.trunk.iter().map(Dense::fan_out).collect(),
            sr_hidden: hidden(&self.regressor.layers),
        })
    }
}

/// Glorot-uniform initialization, deterministic in `seed`. Each network draws
/// from its own stream, so changing one network's widths leaves the others'
/// initial weights unchanged.
pub fn init_params(config: &NetConfig, seed: u64) -> Result<NetworkParams> {
    config.validate()?;
    let stream = |s: u64| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(s);
        rng
    };

    let mut widths = vec![config.rep_dim + config.noise_dim];
    widths.extend(&config.gen_hidden);
    widths.push(config.feat_dim);
    let generator = Generator {
        layers: chain(&widths, &mut stream(1)),
    };

    let mut rng = stream(2);
    let mut widths = vec![config.feat_dim];
    widths.extend(&config.disc_hidden);
    let trunk = chain(&widths, &mut rng);
    let top = *widths.last().expect("nonempty");
    let discriminator = Discriminator {
        trunk,
        real_head: Dense::glorot(top, 1, &mut rng),
        class_head: Dense::glorot(top, config.n_seen_classes, &mut rng),
    };

    let mut widths = vec![config.feat_dim];
    widths.extend(&config.sr_hidden);
    widths.push(config.rep_dim);
    let regressor = SemanticRegressor {
        layers: chain(&widths, &mut stream(3)),
    };

    Ok(NetworkParams {
        generator,
        discriminator,
        regressor,
    })
}
