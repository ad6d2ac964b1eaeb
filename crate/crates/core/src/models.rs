//! Two-model uplift architectures behind one interface: every model maps
//! features to a treated-arm and a control-arm response probability, and the
//! uplift is their difference.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::nncore::{
    adam_step, bce_loss, logistic, Activation, AdamConfig, AdamState, ForwardCache, Matrix,
    Network, NetworkGrads,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    /// One network with two output nodes.
    Tm,
    /// Shared representation, one head per arm.
    Tarnet,
    /// Treatment network reads the control network's prediction.
    Ddr,
    /// Shared logit plus a private logit per arm.
    Sdr,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::Tm,
        ModelKind::Tarnet,
        ModelKind::Ddr,
        ModelKind::Sdr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tm => "tm",
            ModelKind::Tarnet => "tarnet",
            ModelKind::Ddr => "ddr",
            ModelKind::Sdr => "sdr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tm" => Ok(ModelKind::Tm),
            "tarnet" => Ok(ModelKind::Tarnet),
            "ddr" => Ok(ModelKind::Ddr),
            "sdr" => Ok(ModelKind::Sdr),
            other => Err(Error::InvalidConfig(format!(
                "unknown model kind `{other}`"
            ))),
        }
    }
}

/// Per-row arm probabilities and their difference.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub p_t: Vec<f64>,
    pub p_c: Vec<f64>,
    pub uplift: Vec<f64>,
}

impl Prediction {
    fn from_arms(p_t: Vec<f64>, p_c: Vec<f64>) -> Self {
        let uplift = p_t.iter().zip(&p_c).map(|(t, c)| t - c).collect();
        Prediction { p_t, p_c, uplift }
    }
}

/// Everything needed to backpropagate logit gradients through a model.
#[derive(Clone, Debug)]
pub struct ModelForward {
    pub z_t: Vec<f64>,
    pub z_c: Vec<f64>,
    pub p_t: Vec<f64>,
    pub p_c: Vec<f64>,
    caches: Vec<ForwardCache>,
}

impl ModelForward {
    pub fn uplift(&self) -> Vec<f64> {
        self.p_t.iter().zip(&self.p_c).map(|(t, c)| t - c).collect()
    }

    pub fn len(&self) -> usize {
        self.p_t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_t.is_empty()
    }
}

/// Gradients for each network of a model, in the model's network order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGrads {
    pub nets: Vec<NetworkGrads>,
}

impl ModelGrads {
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.nets.iter().flat_map(NetworkGrads::values)
    }
}

/// Factual-arm loss of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseLoss {
    pub total: f64,
    pub treated: f64,
    pub control: f64,
    /// Set when the batch has no treated or no control rows.
    pub missing_arm: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct UpliftModel {
    kind: ModelKind,
    input_dim: usize,
    hidden_sizes: Vec<usize>,
    seed: u64,
    nets: Vec<Network>,
    scaler: Option<Standardizer>,
}

fn chain(first: usize, middle: &[usize], last: usize) -> Vec<usize> {
    std::iter::once(first)
        .chain(middle.iter().copied())
        .chain(std::iter::once(last))
        .collect()
}

fn column(values: &[f64]) -> Matrix {
    Matrix::from_vec(values.len(), 1, values.to_vec()).expect("finite logits")
}

fn add_into(acc: &mut Matrix, other: &Matrix) {
    for (a, b) in acc.as_mut_slice().iter_mut().zip(other.as_slice()) {
        *a += b;
    }
}

impl UpliftModel {
    /// Wires the networks for `kind`.
    ///
    /// * TM: `input → hidden… → 2` logits (control, treated).
    /// * TARNET: trunk `input → hidden…`, then per-arm heads `h → h → 1`
    ///   with `h` the last hidden width.
    /// * DDR: control network `input → hidden… → 1`, treatment network
    ///   `input+1 → hidden… → 1` fed the control probability.
    /// * SDR: trunk as TARNET, a linear shared logit `h → 1` and per-arm
    ///   private heads `h → h → 1`; each arm's logit is shared + private.
    pub fn build(
        kind: ModelKind,
        input_dim: usize,
        hidden_sizes: &[usize],
        seed: u64,
    ) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::InvalidConfig(
                "input dimension must be at least 1".into(),
            ));
        }
        if hidden_sizes.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "hidden sizes must be positive, got {hidden_sizes:?}"
            )));
        }
        if matches!(kind, ModelKind::Tarnet | ModelKind::Sdr) && hidden_sizes.is_empty() {
            return Err(Error::InvalidConfig(format!(
                "{kind} needs at least one hidden layer for its shared trunk"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (relu, id) = (Activation::Relu, Activation::Identity);
        let nets = match kind {
            ModelKind::Tm => vec![Network::init(
                &chain(input_dim, hidden_sizes, 2),
                relu,
                id,
                &mut rng,
            )?],
            ModelKind::Ddr => vec![
                Network::init(&chain(input_dim, hidden_sizes, 1), relu, id, &mut rng)?,
                Network::init(&chain(input_dim + 1, hidden_sizes, 1), relu, id, &mut rng)?,
            ],
            ModelKind::Tarnet | ModelKind::Sdr => {
                let trunk_sizes: Vec<usize> = std::iter::once(input_dim)
                    .chain(hidden_sizes.iter().copied())
                    .collect();
                let h = *hidden_sizes.last().expect("checked non-empty");
                let mut nets = vec![Network::init(&trunk_sizes, relu, relu, &mut rng)?];
                if kind == ModelKind::Sdr {
                    nets.push(Network::init(&[h, 1], relu, id, &mut rng)?);
                }
                nets.push(Network::init(&[h, h, 1], relu, id, &mut rng)?);
                nets.push(Network::init(&[h, h, 1], relu, id, &mut rng)?);
                nets
            }
        };
        Ok(UpliftModel {
            kind,
            input_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            seed,
            nets,
            scaler: None,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        &self.hidden_sizes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Networks in a fixed per-kind order (see [`UpliftModel::build`]).
    pub fn networks(&self) -> &[Network] {
        &self.nets
    }

    pub fn networks_mut(&mut self) -> &mut [Network] {
        &mut self.nets
    }

    pub fn scaler(&self) -> Option<&Standardizer> {
        self.scaler.as_ref()
    }

    pub fn set_scaler(&mut self, scaler: Option<Standardizer>) -> Result<()> {
        if let Some(s) = &scaler {
            if s.mean.len() != self.input_dim {
                return Err(Error::Shape(format!(
                    "scaler has {} columns, model expects {}",
                    s.mean.len(),
                    self.input_dim
                )));
            }
        }
        self.scaler = scaler;
        Ok(())
    }

    /// Applies the attached standardization, if any.
    pub fn prepare_inputs(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        match &self.scaler {
            Some(s) => s.transform(x),
            None => Ok(x.clone()),
        }
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Predicts on raw features (standardization is applied internally).
    pub fn predict(&self, x: &Matrix) -> Result<Prediction> {
        let fwd = self.forward(&self.prepare_inputs(x)?)?;
        Ok(Prediction::from_arms(fwd.p_t, fwd.p_c))
    }

    /// Forward pass on prepared inputs.
    pub fn forward(&self, x: &Matrix) -> Result<ModelForward> {
        self.forward_with_feed(x, None)
    }

    /// Forward pass where, for DDR, the treatment network is fed `feed`
    /// instead of the control network's own prediction. Other kinds ignore it.
    pub fn forward_with_feed(&self, x: &Matrix, feed: Option<&[f64]>) -> Result<ModelForward> {
        self.check_input(x)?;
        let (z_t, z_c, caches) = match self.kind {
            ModelKind::Tm => {
                let (out, cache) = self.nets[0].forward(x)?;
                (out.column(1), out.column(0), vec![cache])
            }
            ModelKind::Ddr => {
                let (out_c, cache_c) = self.nets[0].forward(x)?;
                let z_c = out_c.column(0);
                let own: Vec<f64>;
                let fed = match feed {
                    Some(f) => {
                        if f.len() != x.rows() {
                            return Err(Error::Shape("feed length differs from batch".into()));
                        }
                        f
                    }
                    None => {
                        own = z_c.iter().map(|&z| logistic(z)).collect();
                        &own
                    }
                };
                let (out_t, cache_t) = self.nets[1].forward(&x.with_appended_column(fed)?)?;
                (out_t.column(0), z_c, vec![cache_c, cache_t])
            }
            ModelKind::Tarnet => {
                let (h, trunk) = self.nets[0].forward(x)?;
                let (out_c, cache_c) = self.nets[1].forward(&h)?;
                let (out_t, cache_t) = self.nets[2].forward(&h)?;
                (
                    out_t.column(0),
                    out_c.column(0),
                    vec![trunk, cache_c, cache_t],
                )
            }
            ModelKind::Sdr => {
                let (h, trunk) = self.nets[0].forward(x)?;
                let (shared, cache_s) = self.nets[1].forward(&h)?;
                let (priv_c, cache_c) = self.nets[2].forward(&h)?;
                let (priv_t, cache_t) = self.nets[3].forward(&h)?;
                let s = shared.as_slice();
                let z_c = s
                    .iter()
                    .zip(priv_c.as_slice())
                    .map(|(a, b)| a + b)
                    .collect();
                let z_t = s
                    .iter()
                    .zip(priv_t.as_slice())
                    .map(|(a, b)| a + b)
                    .collect();
                (z_t, z_c, vec![trunk, cache_s, cache_c, cache_t])
            }
        };
        let p_t = z_t.iter().map(|&z| logistic(z)).collect();
        let p_c = z_c.iter().map(|&z| logistic(z)).collect();
        Ok(ModelForward {
            z_t,
            z_c,
            p_t,
            p_c,
            caches,
        })
    }

    /// Parameter gradients given `∂loss/∂z_t` and `∂loss/∂z_c` per row.
    ///
    /// DDR's fed-in control probability is a constant here: the control
    /// network only receives `dz_c`.
    pub fn backward(&self, fwd: &ModelForward, dz_t: &[f64], dz_c: &[f64]) -> Result<ModelGrads> {
        let n = fwd.len();
        if dz_t.len() != n || dz_c.len() != n {
            return Err(Error::Shape(format!(
                "logit gradients have lengths {} and {}, batch has {n} rows",
                dz_t.len(),
                dz_c.len()
            )));
        }
        let c = &fwd.caches;
        if c.len() != self.nets.len() {
            return Err(Error::Shape(
                "forward pass came from a different model".into(),
            ));
        }
        let nets = match self.kind {
            ModelKind::Tm => {
                let mut delta = Matrix::zeros(n, 2);
                for i in 0..n {
                    delta.set(i, 0, dz_c[i]);
                    delta.set(i, 1, dz_t[i]);
                }
                vec![
                    self.nets[0]
                        .backward_from_pre_activation(&c[0], &delta, false)?
                        .0,
                ]
            }
            ModelKind::Ddr => vec![
                self.nets[0]
                    .backward_from_pre_activation(&c[0], &column(dz_c), false)?
                    .0,
                self.nets[1]
                    .backward_from_pre_activation(&c[1], &column(dz_t), false)?
                    .0,
            ],
            ModelKind::Tarnet => {
                let (g_c, dh_c) =
                    self.nets[1].backward_from_pre_activation(&c[1], &column(dz_c), true)?;
                let (g_t, dh_t) =
                    self.nets[2].backward_from_pre_activation(&c[2], &column(dz_t), true)?;
                let mut dh = dh_c.expect("requested");
                add_into(&mut dh, &dh_t.expect("requested"));
                let g_trunk = self.nets[0].backward(&c[0], &dh)?;
                vec![g_trunk, g_c, g_t]
            }
            ModelKind::Sdr => {
                let dz_s: Vec<f64> = dz_t.iter().zip(dz_c).map(|(a, b)| a + b).collect();
                let (g_s, dh_s) =
                    self.nets[1].backward_from_pre_activation(&c[1], &column(&dz_s), true)?;
                let (g_c, dh_c) =
                    self.nets[2].backward_from_pre_activation(&c[2], &column(dz_c), true)?;
                let (g_t, dh_t) =
                    self.nets[3].backward_from_pre_activation(&c[3], &column(dz_t), true)?;
                let mut dh = dh_s.expect("requested");
                add_into(&mut dh, &dh_c.expect("requested"));
                add_into(&mut dh, &dh_t.expect("requested"));
                let g_trunk = self.nets[0].backward(&c[0], &dh)?;
                vec![g_trunk, g_s, g_c, g_t]
            }
        };
        Ok(ModelGrads { nets })
    }

    /// Swaps the treated and control roles of the parameters, negating the
    /// uplift. DDR is asymmetric by construction and is rejected.
    pub fn swap_arms(&mut self) -> Result<()> {
        match self.kind {
            ModelKind::Tm => {
                let last = self.nets[0].layers_mut().last_mut().expect("non-empty");
                for r in 0..last.weights.rows() {
                    let row = last.weights.row_mut(r);
                    row.swap(0, 1);
                }
                last.bias.swap(0, 1);
            }
            ModelKind::Tarnet => self.nets.swap(1, 2),
            ModelKind::Sdr => self.nets.swap(2, 3),
            ModelKind::Ddr => {
                return Err(Error::InvalidConfig(
                    "DDR arms are not interchangeable".into(),
                ))
            }
        }
        Ok(())
    }
}

/// Factual-arm logit gradients: BCE of `p_t` over treated rows plus BCE of
/// `p_c` over control rows, each averaged within its arm.
pub fn base_logit_grads(
    fwd: &ModelForward,
    treatment: &[u8],
    outcome: &[u8],
) -> Result<(BaseLoss, Vec<f64>, Vec<f64>)> {
    if treatment.len() != fwd.len() || outcome.len() != fwd.len() {
        return Err(Error::Shape(
            "labels and predictions differ in length".into(),
        ));
    }
    if fwd.is_empty() {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    let treated: Vec<bool> = treatment.iter().map(|&t| t == 1).collect();
    let control: Vec<bool> = treated.iter().map(|&t| !t).collect();
    let t = bce_loss(&fwd.p_t, outcome, &treated)?;
    let c = bce_loss(&fwd.p_c, outcome, &control)?;
    let missing_arm = t.is_empty() || c.is_empty();
    if missing_arm {
        log::debug!("batch has a single arm; the absent arm contributes no loss");
    }
    let loss = BaseLoss {
        total: t.loss + c.loss,
        treated: t.loss,
        control: c.loss,
        missing_arm,
    };
    Ok((loss, t.grad, c.grad))
}

/// Factual-arm base loss and its parameter gradients on prepared inputs.
pub fn base_loss_and_grads(
    model: &UpliftModel,
    x: &Matrix,
    treatment: &[u8],
    outcome: &[u8],
) -> Result<(BaseLoss, ModelGrads)> {
    let fwd = model.forward(x)?;
    let (loss, dz_t, dz_c) = base_logit_grads(&fwd, treatment, outcome)?;
    let grads = model.backward(&fwd, &dz_t, &dz_c)?;
    Ok((loss, grads))
}

/// One Adam state per network of a model.
#[derive(Clone, Debug)]
pub struct ModelOptimizer {
    states: Vec<AdamState>,
}

impl ModelOptimizer {
    pub fn new(model: &UpliftModel, config: AdamConfig) -> Result<Self> {
        let states = model
            .nets
            .iter()
            .map(|n| AdamState::new(n, config))
            .collect::<Result<_>>()?;
        Ok(ModelOptimizer { states })
    }

    pub fn step(&mut self, model: &mut UpliftModel, grads: &ModelGrads) -> Result<()> {
        if grads.nets.len() != model.nets.len() {
            return Err(Error::Shape(
                "gradient network count differs from model".into(),
            ));
        }
        for ((net, g), state) in model.nets.iter_mut().zip(&grads.nets).zip(&mut self.states) {
            adam_step(net, g, state)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

pub const CHECKPOINT_FORMAT: &str = "milift-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    kind: ModelKind,
    input_dim: usize,
    hidden_sizes: Vec<usize>,
    seed: u64,
    scaler: Option<Standardizer>,
    networks: Vec<Network>,
}

impl UpliftModel {
    pub fn to_json(&self) -> Result<String> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            kind: self.kind,
            input_dim: self.input_dim,
            hidden_sizes: self.hidden_sizes.clone(),
            seed: self.seed,
            scaler: self.scaler.clone(),
            networks: self.nets.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ckpt: Checkpoint = serde_json::from_str(text)?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        // Rebuild to learn the expected wiring, then check every network against it.
        let mut model =
            UpliftModel::build(ckpt.kind, ckpt.input_dim, &ckpt.hidden_sizes, ckpt.seed)?;
        if ckpt.networks.len() != model.nets.len() {
            return Err(Error::Checkpoint(format!(
                "{} expects {} networks, checkpoint has {}",
                ckpt.kind,
                model.nets.len(),
                ckpt.networks.len()
            )));
        }
        for (k, (loaded, expected)) in ckpt
            .networks
            .into_iter()
            .zip(model.nets.iter_mut())
            .enumerate()
        {
            let loaded = Network::from_layers(loaded.layers().to_vec())?;
            let activations =
                |n: &Network| n.layers().iter().map(|l| l.activation).collect::<Vec<_>>();
            if loaded.sizes() != expected.sizes() || activations(&loaded) != activations(expected) {
                return Err(Error::Checkpoint(format!(
                    "network {k} does not match {}",
                    ckpt.kind
                )));
            }
            for l in loaded.layers() {
                Matrix::from_vec(
                    l.weights.rows(),
                    l.weights.cols(),
                    l.weights.as_slice().to_vec(),
                )
                .map_err(|e| Error::Checkpoint(format!("network {k}: {e}")))?;
            }
            *expected = loaded;
        }
        model.set_scaler(ckpt.scaler)?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
