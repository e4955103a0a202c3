//! Client and server roles of encrypted inference.
//!
//! The client holds the secret key, encrypts latents and finalizes logits.
//! The server holds public material only and runs the planned graph,
//! handing intermediate tensors to a [`RefreshOracle`] at refresh points.

use std::sync::Arc;
use std::time::Instant;

use latent_ckks::{
    keygen, keygen_mock, params_id, Backend, Ciphertext, CkksContext, CkksParams, Decryptor, Encryptor, Evaluator,
    KeySet, PublicKeySet,
};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{InputShape, LayerKind, ModelGraph, Shortcut};
use crate::latent::LatentTensor;
use crate::packed::{self, PackedTensor};
use crate::plan::{plan_levels, predict_levels, LevelStep};

/// An encrypted latent on its way to the server.
#[derive(Debug, Clone, PartialEq)]
pub struct InferRequest {
    pub fingerprint: u64,
    pub tensor: PackedTensor,
}

/// Per-layer timing and level record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub name: String,
    pub kind: String,
    pub level_in: usize,
    pub level_out: usize,
    pub micros: u64,
    pub refreshed: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InferenceTrace {
    pub layers: Vec<LayerTrace>,
    pub refresh_count: usize,
    pub bytes_transferred: u64,
    pub total_micros: u64,
}

impl InferenceTrace {
    /// Whether the recorded levels equal a planner prediction.
    pub fn matches(&self, predicted: &[LevelStep]) -> bool {
        self.layers.len() == predicted.len()
            && self.layers.iter().zip(predicted).all(|(t, p)| {
                t.level_in == p.level_in && t.level_out == p.level_out && t.refreshed == p.refreshed
            })
    }
}

/// Brings an intermediate tensor back to the top of the chain.
///
/// In deployment this is a round trip to the client; locally it is a
/// decrypt-re-encrypt with the client's keys.
pub trait RefreshOracle {
    fn refresh(&mut self, tensor: PackedTensor) -> Result<PackedTensor>;
}

/// Key material and helpers owned by the data holder.
pub struct ClientContext {
    pub keys: KeySet,
    pub input: InputShape,
    context: Arc<CkksContext>,
    encryptor: Encryptor,
    decryptor: Decryptor,
}

impl ClientContext {
    pub fn new(keys: KeySet, input: InputShape) -> Result<Self> {
        let context = Arc::new(CkksContext::new(keys.params())?);
        Ok(Self {
            encryptor: Encryptor::new(context.clone(), keys.public_keys())?,
            decryptor: Decryptor::new(context.clone(), &keys)?,
            context,
            keys,
            input,
        })
    }

    /// Generates keys (real or mock) with the rotations `graph` needs.
    pub fn generate(params: &CkksParams, graph: &ModelGraph, backend: Backend, seed: u64) -> Result<Self> {
        let steps = graph.rotation_steps(params.slot_count())?;
        let keys = match backend {
            Backend::Real => keygen(&CkksContext::new(params)?, &steps, seed)?,
            Backend::Mock => keygen_mock(params, &steps)?,
        };
        Self::new(keys, graph.input)
    }

    pub fn params(&self) -> &CkksParams {
        self.keys.params()
    }

    pub fn fingerprint(&self) -> u64 {
        params_id(self.params())
    }

    pub fn public_keys(&self) -> &PublicKeySet {
        self.keys.public_keys()
    }

    pub fn context(&self) -> &Arc<CkksContext> {
        &self.context
    }

    pub fn encrypt<R: Rng + ?Sized>(&self, latent: &LatentTensor, rng: &mut R) -> Result<InferRequest> {
        if latent.geometry() != (self.input.height, self.input.width, self.input.channels) {
            return Err(Error::Shape(format!(
                "latent is {}x{}x{}, model expects {}x{}x{}",
                latent.height, latent.width, latent.channels, self.input.height, self.input.width, self.input.channels
            )));
        }
        Ok(InferRequest {
            fingerprint: self.fingerprint(),
            tensor: packed::pack(&self.encryptor, latent, rng)?,
        })
    }

    pub fn decrypt_logits(&self, logits: &Ciphertext, num_classes: usize) -> Result<Vec<f64>> {
        let mut v = self.decryptor.decrypt(logits)?;
        v.truncate(num_classes);
        Ok(v)
    }

    /// Decrypts the logits and applies the exact logistic function per class.
    pub fn finalize(&self, logits: &Ciphertext, num_classes: usize) -> Result<Vec<f64>> {
        Ok(self.decrypt_logits(logits, num_classes)?.into_iter().map(sigmoid).collect())
    }

    pub fn unpack(&self, tensor: &PackedTensor) -> Result<Vec<Vec<f64>>> {
        packed::unpack(&self.decryptor, tensor)
    }

    /// Decrypts and re-encrypts every channel at the top level, keeping all
    /// slots so that replicated values survive.
    pub fn refresh<R: Rng + ?Sized>(&self, tensor: &PackedTensor, rng: &mut R) -> Result<PackedTensor> {
        let channels = tensor
            .channels
            .iter()
            .map(|ct| Ok(self.encryptor.encrypt(&self.decryptor.decrypt(ct)?, rng)?))
            .collect::<Result<_>>()?;
        Ok(PackedTensor {
            channels,
            layout: tensor.layout,
        })
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Refresh by local decrypt-re-encrypt.
pub struct LocalRefresh<'a, R: Rng> {
    pub client: &'a ClientContext,
    pub rng: R,
}

impl<R: Rng> RefreshOracle for LocalRefresh<'_, R> {
    fn refresh(&mut self, tensor: PackedTensor) -> Result<PackedTensor> {
        self.client.refresh(&tensor, &mut self.rng)
    }
}

/// Oracle for graphs planned without refresh points.
pub struct NoRefresh;

impl RefreshOracle for NoRefresh {
    fn refresh(&mut self, _: PackedTensor) -> Result<PackedTensor> {
        Err(Error::Protocol("this session cannot refresh ciphertexts".into()))
    }
}

/// Public evaluation material plus the folded, planned graph.
pub struct ServerContext {
    pub graph: ModelGraph,
    evaluator: Evaluator,
}

impl ServerContext {
    /// Folds batch norms and plans refresh points for the key set's chain.
    pub fn new(graph: &ModelGraph, keys: PublicKeySet) -> Result<Self> {
        let folded = if graph.has_unfolded_batch_norm() {
            graph.fold_batch_norm()?
        } else {
            graph.clone()
        };
        let planned = plan_levels(&folded, keys.params().max_level())?;
        Self::with_plan(planned, keys)
    }

    /// Uses `graph` and its refresh points as given.
    pub fn with_plan(graph: ModelGraph, keys: PublicKeySet) -> Result<Self> {
        graph.shapes()?;
        let context = Arc::new(CkksContext::new(keys.params())?);
        Ok(Self {
            evaluator: Evaluator::new(context, Arc::new(keys))?,
            graph,
        })
    }

    pub fn params(&self) -> &CkksParams {
        self.evaluator.params()
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn fingerprint(&self) -> u64 {
        params_id(self.params())
    }

    pub fn predicted_levels(&self) -> Result<Vec<LevelStep>> {
        predict_levels(&self.graph, self.evaluator.max_level())
    }

    fn check_request(&self, req: &InferRequest) -> Result<()> {
        if req.fingerprint != self.fingerprint() {
            return Err(Error::Protocol(format!(
                "request fingerprint {:016x} does not match server parameters {:016x}",
                req.fingerprint,
                self.fingerprint()
            )));
        }
        let InputShape {
            height,
            width,
            channels,
        } = self.graph.input;
        let t = &req.tensor;
        if (t.height(), t.width(), t.channel_count(), t.stride_phase()) != (height, width, channels, 1) {
            return Err(Error::Shape(format!(
                "request is {}x{}x{}, model expects {height}x{width}x{channels}",
                t.height(),
                t.width(),
                t.channel_count()
            )));
        }
        for ct in &t.channels {
            self.evaluator.validate(ct)?;
        }
        if t.channels.windows(2).any(|w| w[0].level() != w[1].level()) {
            return Err(Error::Shape("request channels differ in level".into()));
        }
        Ok(())
    }

    /// Runs the graph on an encrypted latent.
    pub fn infer(&self, req: &InferRequest, oracle: &mut dyn RefreshOracle) -> Result<(Ciphertext, InferenceTrace)> {
        self.check_request(req)?;
        let eval = &self.evaluator;
        let start = Instant::now();
        let mut trace = InferenceTrace::default();
        let mut x = req.tensor.clone();
        let mut skip: Option<(PackedTensor, &Option<Shortcut>)> = None;
        for (i, layer) in self.graph.layers.iter().enumerate() {
            let refreshed = self.graph.refresh_points.contains(&i);
            if refreshed {
                let size = tensor_wire_len(&x);
                x = oracle.refresh(x)?;
                for ct in &x.channels {
                    eval.validate(ct)?;
                }
                trace.refresh_count += 1;
                trace.bytes_transferred += size + tensor_wire_len(&x);
            }
            let t0 = Instant::now();
            let level_in = x.level();
            let at = |e: Error| Error::at_layer(&layer.name, e);
            let record = |level_out: usize, trace: &mut InferenceTrace| {
                trace.layers.push(LayerTrace {
                    name: layer.name.clone(),
                    kind: layer.kind.tag().into(),
                    level_in,
                    level_out,
                    micros: t0.elapsed().as_micros() as u64,
                    refreshed,
                });
            };
            x = match &layer.kind {
                LayerKind::Conv(w) => packed::conv2d(eval, &x, w).map_err(at)?,
                LayerKind::BatchNorm(_) => {
                    return Err(Error::Plan(format!("batch norm {} was not folded", layer.name)))
                }
                LayerKind::Polyact(k) => packed::polyact(eval, &x, k).map_err(at)?,
                LayerKind::ApproxSigmoid(k) => packed::approx_sigmoid(eval, &x, k).map_err(at)?,
                LayerKind::GlobalAvgPool => {
                    let span = self.graph.pool_broadcast_span(i, eval.slot_count());
                    packed::global_avg_pool_span(eval, &x, span).map_err(at)?
                }
                LayerKind::Se(se) => packed::se_block(eval, &x, se).map_err(at)?,
                LayerKind::Linear(lw) => {
                    let logits = packed::linear(eval, &x, lw).map_err(at)?;
                    record(logits.level(), &mut trace);
                    trace.total_micros = start.elapsed().as_micros() as u64;
                    return Ok((logits, trace));
                }
                LayerKind::ResidualBegin { shortcut } => {
                    skip = Some((x.clone(), shortcut));
                    x
                }
                LayerKind::ResidualEnd => {
                    let (s, shortcut) = skip
                        .take()
                        .ok_or_else(|| Error::Shape(format!("{} closes no residual block", layer.name)))?;
                    let s = match shortcut {
                        Some(sc) => packed::conv2d(eval, &s, &sc.conv).map_err(at)?,
                        None => s,
                    };
                    packed::residual_add(eval, &x, &s).map_err(at)?
                }
            };
            record(x.level(), &mut trace);
        }
        Err(Error::Shape("graph has no linear head".into()))
    }
}

/// Framed size of a tensor message.
pub fn tensor_wire_len(t: &PackedTensor) -> u64 {
    5 + crate::protocol::encode_tensor(0, t).len() as u64
}
