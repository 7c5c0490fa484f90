//! The Soft TPR autoencoder.
//!
//! `x → encoder → z → (unbind, quantize, compose) → ψ* → decoder → x̂`.
//! The decoder sees `ψ*` in the forward pass while gradients reach `z`
//! through a straight-through node. Encoder and decoder are ReLU MLPs.

use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{adam_step, backward, AdamConfig, NodeId, ParamId, ParamStore, Tape};
use crate::dataset::{sample_pair, Dataset, MatchPair, Renderer};
use crate::error::{invalid, Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::rng::SeededRng;
use crate::soft::{quantize_greedy, QuantizationResult, SoftTpr};
use crate::tpr::{compose, BindingSet, FillerCodebook, RoleMode, RoleSpace};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct ModelConfig {
    pub d_f: usize,
    pub d_r: usize,
    pub n_f: usize,
    pub n_r: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Commitment coefficient of the VQ term.
    pub beta: f64,
    /// Weight of the swapped-filler reconstruction term.
    pub lambda1: f64,
    /// Weight of the cross-entropy term on quantized filler distances.
    pub lambda2: f64,
    /// Multiplier on `‖z − ψ*‖²`; raised for the rigid-form ablation.
    pub form_penalty_weight: f64,
    pub role_mode: RoleMode,
    /// Standard deviation of the initial codebook entries.
    pub codebook_init_scale: f64,
    #[cfg_attr(feature = "serde", serde(skip))]
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_f: 8,
            d_r: 4,
            n_f: 16,
            n_r: 3,
            encoder_widths: vec![64, 64],
            decoder_widths: vec![64, 64],
            beta: 0.5,
            lambda1: 0.001,
            lambda2: 3.0,
            form_penalty_weight: 1.0,
            role_mode: RoleMode::SemiOrthogonal,
            codebook_init_scale: 0.01,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if [self.d_f, self.d_r, self.n_f, self.n_r].contains(&0) {
            return Err(invalid("d_f, d_r, n_f and n_r must be positive"));
        }
        match self.role_mode {
            RoleMode::SemiOrthogonal if self.d_r < self.n_r => {
                return Err(invalid("semi-orthogonal roles need d_r >= n_r"))
            }
            RoleMode::Identity if self.d_r != self.n_r => {
                return Err(invalid("identity roles need d_r == n_r"))
            }
            RoleMode::General => return Err(invalid("role_mode must be semi-orthogonal or identity")),
            _ => {}
        }
        if self.encoder_widths.iter().chain(&self.decoder_widths).any(|&w| w == 0) {
            return Err(invalid("layer widths must be positive"));
        }
        let nonneg = [self.beta, self.lambda1, self.lambda2, self.codebook_init_scale];
        if nonneg.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(invalid("beta, lambda1, lambda2 and init scale must be non-negative"));
        }
        if !(self.form_penalty_weight.is_finite() && self.form_penalty_weight > 0.0) {
            return Err(invalid("form_penalty_weight must be positive"));
        }
        Ok(())
    }

    pub fn tpr_dim(&self) -> usize {
        self.d_f * self.d_r
    }
}

/// Weight and bias parameter ids of a ReLU MLP (no activation on the output).
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<(ParamId, ParamId)>,
}

impl Mlp {
    /// He-normal weights on hidden layers, `1/fan_in` variance on the last;
    /// zero biases.
    pub fn new(
        store: &mut ParamStore,
        prefix: &str,
        input: usize,
        hidden: &[usize],
        output: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (fan_in, fan_out) = (dims[l], dims[l + 1]);
                let gain = if l + 1 == n { 1.0 } else { 2.0 };
                let sd = libm::sqrt(gain / fan_in as f64);
                let w = DenseMatrix::new(
                    fan_in,
                    fan_out,
                    (0..fan_in * fan_out).map(|_| sd * rng.normal()).collect(),
                )
                .expect("positive layer dims");
                let wid = store.add(alloc::format!("{prefix}.{l}.weight"), w);
                let bid = store.add(alloc::format!("{prefix}.{l}.bias"), DenseMatrix::zeros(1, fan_out));
                (wid, bid)
            })
            .collect();
        Self { layers }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> NodeId {
        let mut h = x;
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let wn = tape.param(store, w);
            let bn = tape.param(store, b);
            h = tape.matmul(h, wn);
            h = tape.add_row(h, bn);
            if l + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        h
    }
}

/// Everything about the model except its trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub config: ModelConfig,
    pub obs_dim: usize,
    pub roles: RoleSpace,
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub codebook: ParamId,
    /// `Z · unbind_matrix` stacks the soft fillers `f̃_i` of every row.
    unbind_matrix: DenseMatrix,
    /// `F · compose_matrix` binds stacked fillers to their roles.
    compose_matrix: DenseMatrix,
}

fn unbind_matrix(roles: &RoleSpace, d_f: usize) -> DenseMatrix {
    let (d_r, n_r) = (roles.d_r(), roles.n_r());
    let mut k = DenseMatrix::zeros(d_f * d_r, n_r * d_f);
    for c in 0..d_r {
        for i in 0..n_r {
            let u = roles.unbinders()[(c, i)];
            for a in 0..d_f {
                k[(c * d_f + a, i * d_f + a)] = u;
            }
        }
    }
    k
}

fn compose_matrix(roles: &RoleSpace, d_f: usize) -> DenseMatrix {
    let (d_r, n_r) = (roles.d_r(), roles.n_r());
    let mut m = DenseMatrix::zeros(n_r * d_f, d_f * d_r);
    for c in 0..d_r {
        for i in 0..n_r {
            let r = roles.embeddings()[(c, i)];
            for a in 0..d_f {
                m[(i * d_f + a, c * d_f + a)] = r;
            }
        }
    }
    m
}

impl Architecture {
    pub fn new(
        config: ModelConfig,
        obs_dim: usize,
        roles: RoleSpace,
        encoder: Mlp,
        decoder: Mlp,
        codebook: ParamId,
    ) -> Self {
        let unbind_matrix = unbind_matrix(&roles, config.d_f);
        let compose_matrix = compose_matrix(&roles, config.d_f);
        Self {
            config,
            obs_dim,
            roles,
            encoder,
            decoder,
            codebook,
            unbind_matrix,
            compose_matrix,
        }
    }

    pub fn codebook(&self, store: &ParamStore) -> Result<FillerCodebook> {
        let value = store.value(self.codebook);
        if value.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(non_finite());
        }
        FillerCodebook::new(value.clone())
    }
}

/// A batch of match pairs laid out row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct PairBatch {
    pub x: DenseMatrix,
    pub x_prime: DenseMatrix,
    pub differing: Vec<usize>,
}

impl PairBatch {
    pub fn from_pairs(pairs: &[MatchPair]) -> Result<Self> {
        let rows = |f: &dyn Fn(&MatchPair) -> &DenseVector| -> Result<DenseMatrix> {
            let d = pairs.first().map_or(0, |p| f(p).len());
            let data = pairs.iter().flat_map(|p| f(p).as_slice().iter().copied()).collect();
            DenseMatrix::new(pairs.len(), d, data)
        };
        Ok(Self {
            x: rows(&|p| &p.x)?,
            x_prime: rows(&|p| &p.x_prime)?,
            differing: pairs.iter().map(|p| p.differing).collect(),
        })
    }
}

fn rows_of(vs: &[DenseVector]) -> Result<DenseMatrix> {
    let d = vs.first().map_or(0, |v| v.len());
    if vs.iter().any(|v| v.len() != d) {
        return Err(invalid("observations differ in length"));
    }
    DenseMatrix::new(vs.len(), d, vs.iter().flat_map(|v| v.as_slice().iter().copied()).collect())
}

/// Per-step loss values. `form_penalty` already includes
/// `form_penalty_weight`; `form_distance` is the raw batch mean of
/// `‖z − ψ*‖²`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainStepOutput {
    pub total: f64,
    pub form_penalty: f64,
    pub form_distance: f64,
    pub recon: f64,
    pub vq: f64,
    pub swap_recon: f64,
    pub ce_dq: f64,
    pub matchings: Vec<BindingSet>,
}

impl TrainStepOutput {
    /// `L_u + λ₁·swap + λ₂·CE` recomputed from the components.
    pub fn weighted_sum(&self, config: &ModelConfig) -> f64 {
        self.form_penalty
            + self.recon
            + self.vq
            + config.lambda1 * self.swap_recon
            + config.lambda2 * self.ce_dq
    }
}

/// Tape nodes of an assembled objective.
#[derive(Clone, Debug)]
pub struct Objective {
    pub total: NodeId,
    form: NodeId,
    form_distance: NodeId,
    recon: NodeId,
    vq: NodeId,
    swap: Option<NodeId>,
    ce: Option<NodeId>,
    matchings: Vec<BindingSet>,
}

impl Objective {
    pub fn output(&self, tape: &Tape) -> TrainStepOutput {
        TrainStepOutput {
            total: tape.scalar(self.total),
            form_penalty: tape.scalar(self.form),
            form_distance: tape.scalar(self.form_distance),
            recon: tape.scalar(self.recon),
            vq: tape.scalar(self.vq),
            swap_recon: self.swap.map_or(0.0, |n| tape.scalar(n)),
            ce_dq: self.ce.map_or(0.0, |n| tape.scalar(n)),
            matchings: self.matchings.clone(),
        }
    }
}

/// Placeholder location; callers that know the iteration fill it in.
fn non_finite() -> Error {
    Error::NonFinite {
        iteration: 0,
        batch_seed: 0,
    }
}

/// Intermediate nodes for one encoded batch.
struct Encoded {
    x: NodeId,
    z: NodeId,
    soft_fillers: NodeId,
    indices: Vec<usize>,
    psi_star: DenseMatrix,
}

impl Architecture {
    fn encode(&self, tape: &mut Tape, store: &ParamStore, x: &DenseMatrix) -> Result<Encoded> {
        let codebook = self.codebook(store)?;
        let xn = tape.constant(x.clone());
        let z = self.encoder.forward(tape, store, xn);
        let k = tape.constant(self.unbind_matrix.clone());
        let soft_fillers = tape.matmul(z, k);
        let d_f = self.config.d_f;
        let live = tape
            .value(soft_fillers)
            .as_slice()
            .chunks(d_f)
            .map(|f| Ok(codebook.nearest(&DenseVector::from_slice(f).map_err(|_| non_finite())?)))
            .collect::<Result<Vec<usize>>>()?;
        let indices = tape.freeze_indices(live);
        let psi_star = self.compose_rows(&codebook, &indices)?;
        Ok(Encoded {
            x: xn,
            z,
            soft_fillers,
            indices,
            psi_star,
        })
    }

    fn compose_rows(&self, codebook: &FillerCodebook, indices: &[usize]) -> Result<DenseMatrix> {
        let n_r = self.config.n_r;
        let rows = indices.len() / n_r;
        let mut out = DenseMatrix::zeros(rows, self.config.tpr_dim());
        for (b, m) in indices.chunks(n_r).enumerate() {
            let t = compose(&self.roles, codebook, &BindingSet::new(m.to_vec()))?;
            out.row_mut(b).copy_from_slice(t.vector.as_slice());
        }
        Ok(out)
    }

    /// Form penalty, reconstruction and VQ terms of one encoded batch.
    fn unsupervised_terms(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        enc: &Encoded,
    ) -> (NodeId, NodeId, NodeId, NodeId) {
        let cfg = &self.config;
        let batch = tape.value(enc.x).rows() as f64;

        let psi = tape.constant(enc.psi_star.clone());
        let psi_target = tape.stop_grad(psi);
        let diff = tape.sub(enc.z, psi_target);
        let sq = tape.sum_squares(diff);
        let form_distance = tape.scale(sq, 1.0 / batch);
        let form = tape.scale(sq, cfg.form_penalty_weight / batch);

        let st = tape.straight_through(psi, enc.z);
        let x_hat = self.decoder.forward(tape, store, st);
        let err = tape.sub(x_hat, enc.x);
        let sq = tape.sum_squares(err);
        let recon = tape.scale(sq, 1.0 / batch);

        let cb = tape.param(store, self.codebook);
        let e = tape.gather_columns(cb, enc.indices.clone(), cfg.n_r);
        let e_stopped = tape.stop_grad(e);
        let f_stopped = tape.stop_grad(enc.soft_fillers);
        let codebook_pull = tape.sub(e_stopped, enc.soft_fillers);
        let codebook_pull = tape.sum_squares(codebook_pull);
        let commitment = tape.sub(e, f_stopped);
        let commitment = tape.sum_squares(commitment);
        let commitment = tape.scale(commitment, cfg.beta);
        let vq = tape.add(codebook_pull, commitment);
        let vq = tape.scale(vq, 1.0 / (cfg.n_r as f64 * batch));

        (form, form_distance, recon, vq)
    }

    /// `L_u` on `x` alone.
    pub fn unsupervised_objective(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: &DenseMatrix,
    ) -> Result<Objective> {
        let enc = self.encode(tape, store, x)?;
        let (form, form_distance, recon, vq) = self.unsupervised_terms(tape, store, &enc);
        let total = tape.add(form, recon);
        let total = tape.add(total, vq);
        Ok(Objective {
            total,
            form,
            form_distance,
            recon,
            vq,
            swap: None,
            ce: None,
            matchings: self.matchings(&enc.indices),
        })
    }

    /// `L_u(x) + λ₁(½L_r(x, D(ψ_s(x'))) + ½L_r(x', D(ψ_s(x)))) + λ₂ CE(Δq, l)`.
    ///
    /// The swapped TPRs reach the decoder through straight-through nodes
    /// whose inputs are the encoder outputs with the soft fillers of the
    /// differing role exchanged. `Δq` is built from straight-through
    /// quantized fillers, so its gradient reaches the encoder.
    pub fn weakly_supervised_objective(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &PairBatch,
    ) -> Result<Objective> {
        let cfg = &self.config;
        if batch.differing.iter().any(|&i| i >= cfg.n_r) {
            return Err(invalid("differing role index out of range"));
        }
        let rows = batch.x.rows();
        if batch.x_prime.shape() != batch.x.shape() || batch.differing.len() != rows {
            return Err(invalid("pair batch shapes disagree"));
        }
        let codebook = self.codebook(store)?;
        let enc = self.encode(tape, store, &batch.x)?;
        let (form, form_distance, recon, vq) = self.unsupervised_terms(tape, store, &enc);
        let enc_p = self.encode(tape, store, &batch.x_prime)?;
        let d_f = cfg.d_f;
        let n_r = cfg.n_r;

        // Swap the differing role's fillers between the two sides.
        let mut mask = DenseMatrix::zeros(rows, n_r * d_f);
        let mut swapped = enc.indices.clone();
        let mut swapped_p = enc_p.indices.clone();
        for (b, &i) in batch.differing.iter().enumerate() {
            for a in 0..d_f {
                mask[(b, i * d_f + a)] = 1.0;
            }
            swapped[b * n_r + i] = enc_p.indices[b * n_r + i];
            swapped_p[b * n_r + i] = enc.indices[b * n_r + i];
        }
        let mask = tape.constant(mask);
        let delta = tape.sub(enc_p.soft_fillers, enc.soft_fillers);
        let delta = tape.mul(delta, mask);
        let cm = tape.constant(self.compose_matrix.clone());
        let delta = tape.matmul(delta, cm);
        let z_s = tape.add(enc.z, delta);
        let z_s_p = tape.sub(enc_p.z, delta);
        let psi_s = tape.constant(self.compose_rows(&codebook, &swapped)?);
        let psi_s_p = tape.constant(self.compose_rows(&codebook, &swapped_p)?);
        let st = tape.straight_through(psi_s, z_s);
        let st_p = tape.straight_through(psi_s_p, z_s_p);
        // ψ_s(x) carries x's bindings with x''s filler on the differing
        // role, i.e. the bindings of x'.
        let x_hat_from_s = self.decoder.forward(tape, store, st);
        let x_hat_from_s_p = self.decoder.forward(tape, store, st_p);
        let xp = tape.constant(batch.x_prime.clone());
        let e1 = tape.sub(x_hat_from_s_p, enc.x);
        let e1 = tape.sum_squares(e1);
        let e2 = tape.sub(x_hat_from_s, xp);
        let e2 = tape.sum_squares(e2);
        let swap = tape.add(e1, e2);
        let swap = tape.scale(swap, 0.5 / rows as f64);

        // Δq_k = ‖q_k − q'_k‖ over quantized fillers.
        let gathered = |indices: &[usize]| -> DenseMatrix {
            let mut g = DenseMatrix::zeros(rows, n_r * d_f);
            for (k, &j) in indices.iter().enumerate() {
                let (b, i) = (k / n_r, k % n_r);
                for a in 0..d_f {
                    g[(b, i * d_f + a)] = codebook.embeddings()[(a, j)];
                }
            }
            g
        };
        let e = tape.constant(gathered(&enc.indices));
        let e_p = tape.constant(gathered(&enc_p.indices));
        let q = tape.straight_through(e, enc.soft_fillers);
        let q_p = tape.straight_through(e_p, enc_p.soft_fillers);
        let dq = tape.sub(q, q_p);
        let logits = tape.block_norms(dq, d_f);
        let ce = tape.softmax_cross_entropy(logits, batch.differing.clone());

        let total = tape.add(form, recon);
        let total = tape.add(total, vq);
        let weighted_swap = tape.scale(swap, cfg.lambda1);
        let total = tape.add(total, weighted_swap);
        let weighted_ce = tape.scale(ce, cfg.lambda2);
        let total = tape.add(total, weighted_ce);
        Ok(Objective {
            total,
            form,
            form_distance,
            recon,
            vq,
            swap: Some(swap),
            ce: Some(ce),
            matchings: self.matchings(&enc.indices),
        })
    }

    fn matchings(&self, indices: &[usize]) -> Vec<BindingSet> {
        indices
            .chunks(self.config.n_r)
            .map(|m| BindingSet::new(m.to_vec()))
            .collect()
    }
}

/// Output of a single-observation forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub z: SoftTpr,
    pub q: QuantizationResult,
    pub x_hat: DenseVector,
}

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Iteration counts at which a checkpoint is emitted (0 = initialization).
    pub checkpoint_schedule: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch_size: 32,
            adam: AdamConfig::default(),
            checkpoint_schedule: vec![100, 1000, 5000],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoftTprAutoencoder {
    pub arch: Architecture,
    pub params: ParamStore,
    /// Completed optimizer steps.
    pub iteration: usize,
    /// Stream that seeds training batches.
    pub rng: SeededRng,
}

impl SoftTprAutoencoder {
    pub fn new(config: ModelConfig, obs_dim: usize) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 {
            return Err(invalid("obs_dim must be positive"));
        }
        let mut rng = SeededRng::new(config.seed);
        let mut init = rng.fork();
        let roles = match config.role_mode {
            RoleMode::Identity => RoleSpace::identity(config.n_r)?,
            _ => RoleSpace::semi_orthogonal(config.d_r, config.n_r, &mut init)?,
        };
        let mut params = ParamStore::new();
        let encoder = Mlp::new(&mut params, "encoder", obs_dim, &config.encoder_widths, config.tpr_dim(), &mut init);
        let decoder = Mlp::new(&mut params, "decoder", config.tpr_dim(), &config.decoder_widths, obs_dim, &mut init);
        let codebook = FillerCodebook::random(config.d_f, config.n_f, config.codebook_init_scale, &mut init)?;
        let codebook = params.add("codebook", codebook.embeddings().clone());
        let arch = Architecture::new(config, obs_dim, roles, encoder, decoder, codebook);
        Ok(Self {
            arch,
            params,
            iteration: 0,
            rng,
        })
    }

    /// Rebuild a model from stored state. The parameter list must match the
    /// names and shapes that `config` and `obs_dim` produce.
    pub fn from_parts(
        config: ModelConfig,
        obs_dim: usize,
        roles: RoleSpace,
        params: ParamStore,
        iteration: usize,
        rng: SeededRng,
    ) -> Result<Self> {
        let fresh = Self::new(config, obs_dim)?;
        if roles.n_r() != fresh.arch.config.n_r || roles.d_r() != fresh.arch.config.d_r {
            return Err(invalid("stored roles do not match the config"));
        }
        let layout_matches = params.len() == fresh.params.len()
            && params
                .iter()
                .zip(fresh.params.iter())
                .all(|(a, b)| a.name == b.name && a.value.shape() == b.value.shape());
        if !layout_matches {
            return Err(invalid("stored parameters do not match the config"));
        }
        let a = fresh.arch;
        let arch = Architecture::new(a.config, obs_dim, roles, a.encoder, a.decoder, a.codebook);
        Ok(Self {
            arch,
            params,
            iteration,
            rng,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.arch.config
    }

    pub fn roles(&self) -> &RoleSpace {
        &self.arch.roles
    }

    pub fn codebook(&self) -> Result<FillerCodebook> {
        self.arch.codebook(&self.params)
    }

    /// Encoder outputs for a set of observations.
    pub fn encode(&self, xs: &[DenseVector]) -> Result<Vec<SoftTpr>> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        self.check_obs(xs)?;
        let mut tape = Tape::new();
        let x = tape.constant(rows_of(xs)?);
        let z = self.arch.encoder.forward(&mut tape, &self.params, x);
        let z = tape.value(z);
        (0..z.rows())
            .map(|b| Ok(SoftTpr(DenseVector::from_slice(z.row(b))?)))
            .collect()
    }

    /// Greedy quantization of each encoded observation.
    pub fn quantize(&self, xs: &[DenseVector]) -> Result<Vec<QuantizationResult>> {
        let codebook = self.codebook()?;
        self.encode(xs)?
            .iter()
            .map(|z| quantize_greedy(&self.arch.roles, &codebook, z))
            .collect()
    }

    pub fn decode(&self, psi: &[DenseVector]) -> Result<Vec<DenseVector>> {
        if psi.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let p = tape.constant(rows_of(psi)?);
        let out = self.arch.decoder.forward(&mut tape, &self.params, p);
        let out = tape.value(out);
        (0..out.rows())
            .map(|b| DenseVector::from_slice(out.row(b)))
            .collect()
    }

    pub fn forward(&self, x: &DenseVector) -> Result<ForwardOutput> {
        let z = self
            .encode(core::slice::from_ref(x))?
            .pop()
            .expect("one row in, one row out");
        let q = quantize_greedy(&self.arch.roles, &self.codebook()?, &z)?;
        let x_hat = self
            .decode(core::slice::from_ref(&q.tpr.vector))?
            .pop()
            .expect("one row in, one row out");
        Ok(ForwardOutput { z, q, x_hat })
    }

    fn check_obs(&self, xs: &[DenseVector]) -> Result<()> {
        if xs.iter().any(|x| x.len() != self.arch.obs_dim) {
            return Err(invalid("observation dimension differs from the model's"));
        }
        Ok(())
    }

    /// `L_u` evaluated on a batch of observations.
    pub fn loss_unsupervised(&self, xs: &[DenseVector]) -> Result<TrainStepOutput> {
        self.check_obs(xs)?;
        let mut tape = Tape::new();
        let obj = self.arch.unsupervised_objective(&mut tape, &self.params, &rows_of(xs)?)?;
        Ok(obj.output(&tape))
    }

    /// The full objective on a batch of match pairs.
    pub fn loss_weakly_supervised(&self, pairs: &[MatchPair]) -> Result<TrainStepOutput> {
        let batch = PairBatch::from_pairs(pairs)?;
        let mut tape = Tape::new();
        let obj = self.arch.weakly_supervised_objective(&mut tape, &self.params, &batch)?;
        Ok(obj.output(&tape))
    }

    /// One Adam step on the full objective.
    pub fn step(&mut self, batch: &PairBatch, adam: &AdamConfig) -> Result<TrainStepOutput> {
        let iteration = self.iteration;
        let at_iteration = |e: Error| match e {
            Error::NonFinite { batch_seed, .. } => Error::NonFinite {
                iteration,
                batch_seed,
            },
            other => other,
        };
        let mut tape = Tape::new();
        let obj = self
            .arch
            .weakly_supervised_objective(&mut tape, &self.params, batch)
            .map_err(at_iteration)?;
        let out = obj.output(&tape);
        if !out.total.is_finite() {
            return Err(at_iteration(non_finite()));
        }
        backward(&tape, obj.total, &mut self.params)?;
        adam_step(&mut self.params, adam);
        self.iteration += 1;
        Ok(out)
    }

    /// Mean squared reconstruction error per coordinate over a dataset.
    pub fn reconstruction_mse(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let outs: Vec<_> = self.quantize(&data.observations)?;
        let psi: Vec<_> = outs.into_iter().map(|q| q.tpr.vector).collect();
        let x_hat = self.decode(&psi)?;
        let total: f64 = x_hat
            .iter()
            .zip(&data.observations)
            .map(|(a, b)| crate::linalg::sq_distance(a.as_slice(), b.as_slice()))
            .sum();
        Ok(total / (data.len() * self.arch.obs_dim) as f64)
    }

    /// Mean of `‖z − ψ*‖²` over a dataset.
    pub fn mean_form_distance(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let q = self.quantize(&data.observations)?;
        Ok(q.iter().map(|r| r.residual * r.residual).sum::<f64>() / q.len() as f64)
    }
}

/// A model snapshot emitted during training.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainCheckpoint {
    pub iteration: usize,
    pub model: SoftTprAutoencoder,
}

/// Train on freshly sampled match pairs, emitting snapshots at the
/// scheduled iterations. `on_step` sees every step's losses.
///
/// Each batch is drawn from its own seed (taken from the model's stream),
/// which is reported if the loss turns non-finite.
pub fn train(
    model: &mut SoftTprAutoencoder,
    renderer: &Renderer,
    cfg: &TrainConfig,
    mut on_step: impl FnMut(usize, &TrainStepOutput),
) -> Result<Vec<TrainCheckpoint>> {
    if renderer.spec().obs_dim != model.arch.obs_dim {
        return Err(invalid("dataset obs_dim differs from the model's"));
    }
    if renderer.spec().n_r() != model.config().n_r {
        return Err(invalid("dataset factor count differs from the model's n_r"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid("batch_size must be positive"));
    }
    let mut checkpoints = Vec::new();
    let target = model.iteration + cfg.iterations;
    let emit = |model: &SoftTprAutoencoder, out: &mut Vec<TrainCheckpoint>| {
        if cfg.checkpoint_schedule.contains(&model.iteration) {
            out.push(TrainCheckpoint {
                iteration: model.iteration,
                model: model.clone(),
            });
        }
    };
    emit(model, &mut checkpoints);
    while model.iteration < target {
        let batch_seed = model.rng.next_u64();
        let mut batch_rng = SeededRng::new(batch_seed);
        let pairs: Vec<_> = (0..cfg.batch_size)
            .map(|_| sample_pair(renderer, &mut batch_rng))
            .collect();
        let batch = PairBatch::from_pairs(&pairs)?;
        let out = model.step(&batch, &cfg.adam).map_err(|e| match e {
            Error::NonFinite { iteration, .. } => Error::NonFinite {
                iteration,
                batch_seed,
            },
            other => other,
        })?;
        on_step(model.iteration, &out);
        emit(model, &mut checkpoints);
    }
    Ok(checkpoints)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, GradcheckConfig};
    use crate::dataset::FactorSpec;

    fn small_config() -> ModelConfig {
        ModelConfig {
            d_f: 3,
            d_r: 3,
            n_f: 5,
            n_r: 2,
            encoder_widths: vec![6],
            decoder_widths: vec![6],
            lambda1: 0.7,
            lambda2: 1.3,
            seed: 3,
            ..ModelConfig::default()
        }
    }

    fn small_renderer() -> Renderer {
        Renderer::new(&FactorSpec {
            values_per_factor: vec![3, 3],
            obs_dim: 7,
            render_seed: 1,
        })
        .unwrap()
    }

    fn pairs(n: usize, seed: u64) -> Vec<MatchPair> {
        let r = small_renderer();
        let mut rng = SeededRng::new(seed);
        (0..n).map(|_| sample_pair(&r, &mut rng)).collect()
    }

    #[test]
    fn full_objective_gradients_match_finite_differences() {
        let mut model = SoftTprAutoencoder::new(small_config(), 7).unwrap();
        let batch = PairBatch::from_pairs(&pairs(4, 9)).unwrap();
        let arch = model.arch.clone();
        let report = gradcheck(
            |tape, store| Ok(arch.weakly_supervised_objective(tape, store, &batch)?.total),
            &mut model.params,
            &GradcheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.worst);
        assert!(report.checked > 50);
    }

    #[test]
    fn zero_lambdas_reduce_to_unsupervised_loss() {
        let cfg = ModelConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..small_config()
        };
        let model = SoftTprAutoencoder::new(cfg, 7).unwrap();
        let ps = pairs(6, 2);
        let weak = model.loss_weakly_supervised(&ps).unwrap();
        let xs: Vec<_> = ps.iter().map(|p| p.x.clone()).collect();
        let unsup = model.loss_unsupervised(&xs).unwrap();
        assert_eq!(weak.total, unsup.total);
        assert_eq!(weak.matchings, unsup.matchings);
    }

    #[test]
    fn total_is_weighted_sum_of_components() {
        let model = SoftTprAutoencoder::new(small_config(), 7).unwrap();
        let out = model.loss_weakly_supervised(&pairs(5, 4)).unwrap();
        assert!((out.total - out.weighted_sum(model.config())).abs() < 1e-9);
        assert!(out.swap_recon > 0.0 && out.ce_dq > 0.0);
    }

    #[test]
    fn cross_entropy_is_log_n_r_when_distances_tie() {
        // A single codebook entry makes every quantized distance zero.
        let cfg = ModelConfig {
            n_f: 1,
            ..small_config()
        };
        let model = SoftTprAutoencoder::new(cfg, 7).unwrap();
        let out = model.loss_weakly_supervised(&pairs(5, 4)).unwrap();
        assert!((out.ce_dq - libm::log(2.0)).abs() < 1e-12);
    }

    #[test]
    fn form_penalty_is_linear_in_its_weight() {
        let ps = pairs(5, 6);
        let base = SoftTprAutoencoder::new(small_config(), 7).unwrap();
        let mut doubled = base.clone();
        doubled.arch.config.form_penalty_weight *= 2.0;
        let a = base.loss_weakly_supervised(&ps).unwrap();
        let b = doubled.loss_weakly_supervised(&ps).unwrap();
        assert_eq!(b.form_penalty, 2.0 * a.form_penalty);
        assert_eq!(a.form_distance, b.form_distance);
        assert_eq!(a.recon, b.recon);
    }

    #[test]
    fn form_penalty_matches_residual_of_greedy_quantization() {
        let model = SoftTprAutoencoder::new(small_config(), 7).unwrap();
        let ps = pairs(3, 1);
        let xs: Vec<_> = ps.iter().map(|p| p.x.clone()).collect();
        let out = model.loss_unsupervised(&xs).unwrap();
        let q = model.quantize(&xs).unwrap();
        let expected = q.iter().map(|r| r.residual * r.residual).sum::<f64>() / 3.0;
        assert!((out.form_distance - expected).abs() < 1e-9);
        for (m, r) in out.matchings.iter().zip(&q) {
            assert_eq!(m, &r.tpr.matching);
        }
    }

    #[test]
    fn identity_decoder_returns_the_quantized_tpr() {
        let cfg = ModelConfig {
            decoder_widths: vec![],
            ..small_config()
        };
        let d = cfg.tpr_dim();
        let mut model = SoftTprAutoencoder::new(cfg, d).unwrap();
        let (w, b) = model.arch.decoder.layers[0];
        model.params.get_mut(w).value = DenseMatrix::identity(d);
        model.params.get_mut(b).value = DenseMatrix::zeros(1, d);
        let mut rng = SeededRng::new(5);
        let x = DenseVector::new((0..d).map(|_| rng.normal()).collect()).unwrap();
        let out = model.forward(&x).unwrap();
        assert_eq!(out.x_hat, out.q.tpr.vector);
    }

    #[test]
    fn overfits_a_single_sample() {
        // Without the pair terms nothing competes with reconstructing x.
        let cfg = ModelConfig {
            lambda1: 0.0,
            lambda2: 0.0,
            ..small_config()
        };
        let mut model = SoftTprAutoencoder::new(cfg, 7).unwrap();
        let p = pairs(1, 8);
        let batch = PairBatch::from_pairs(&p).unwrap();
        let adam = AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        };
        let first = model.step(&batch, &adam).unwrap().recon;
        let mut last = first;
        for _ in 0..1000 {
            last = model.step(&batch, &adam).unwrap().recon;
        }
        assert!(last < 0.01 * first, "{first} -> {last}");
    }

    #[test]
    fn training_is_deterministic_and_checkpoints_follow_schedule() {
        let r = small_renderer();
        let cfg = TrainConfig {
            iterations: 12,
            batch_size: 4,
            adam: AdamConfig::default(),
            checkpoint_schedule: vec![0, 5, 12, 40],
        };
        let init = SoftTprAutoencoder::new(small_config(), 7).unwrap();
        let mut a = init.clone();
        let mut b = init.clone();
        let mut losses = Vec::new();
        let ca = train(&mut a, &r, &cfg, |_, o| losses.push(o.total)).unwrap();
        let cb = train(&mut b, &r, &cfg, |_, _| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(ca, cb);
        assert_eq!(losses.len(), 12);
        let its: Vec<_> = ca.iter().map(|c| c.iteration).collect();
        assert_eq!(its, vec![0, 5, 12]);
        assert_eq!(ca[0].model, init);
        assert_eq!(ca[2].model, a);
        assert_ne!(a.params, init.params);
    }

    #[test]
    fn zero_iterations_leave_the_model_untouched() {
        let r = small_renderer();
        let cfg = TrainConfig {
            iterations: 0,
            checkpoint_schedule: vec![0],
            ..TrainConfig::default()
        };
        let init = SoftTprAutoencoder::new(small_config(), 7).unwrap();
        let mut m = init.clone();
        let c = train(&mut m, &r, &cfg, |_, _| {}).unwrap();
        assert_eq!(m, init);
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].model, init);
    }

    #[test]
    fn non_finite_loss_reports_iteration_and_batch_seed() {
        let r = small_renderer();
        let mut m = SoftTprAutoencoder::new(small_config(), 7).unwrap();
        let expected_seed = m.rng.clone().next_u64();
        let (w, _) = m.arch.encoder.layers[0];
        m.params.get_mut(w).value.as_mut_slice()[0] = f64::NAN;
        let cfg = TrainConfig {
            iterations: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        match train(&mut m, &r, &cfg, |_, _| {}) {
            Err(Error::NonFinite {
                iteration,
                batch_seed,
            }) => {
                assert_eq!(iteration, 0);
                assert_eq!(batch_seed, expected_seed);
            }
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = ModelConfig {
            d_r: 1,
            ..small_config()
        };
        assert!(SoftTprAutoencoder::new(bad, 7).is_err());
        let identity = ModelConfig {
            role_mode: RoleMode::Identity,
            d_r: 2,
            ..small_config()
        };
        let m = SoftTprAutoencoder::new(identity, 7).unwrap();
        assert_eq!(m.roles().embeddings(), &DenseMatrix::identity(2));
        assert!(SoftTprAutoencoder::new(small_config(), 0).is_err());
    }
}
