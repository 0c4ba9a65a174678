//! The four-network goal-conditioned model: a state-feature autoencoder
//! (encoder phi / decoder), a goal-weight network w(g), and a shared trunk
//! forked into a successor-feature head psi(s, g) and a policy head pi(s, g).
//! Values compose as V(s, g) = psi(s, g) . w(g).

use crate::env::Observation;
use crate::nn::{dot, softmax, LayerSpec, Net, NnError};
use crate::derive_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("unknown parameter block: {0}")]
    UnknownBlock(String),
    #[error("block {name} expects {expected} values, got {got}")]
    BlockSize { name: String, expected: usize, got: usize },
}

/// d-dimensional state features phi(s).
#[derive(Debug, Clone, PartialEq)]
pub struct StateFeatures {
    pub phi: Vec<f64>,
}

/// Goal-specific reward weights w(g).
#[derive(Debug, Clone, PartialEq)]
pub struct GoalWeights {
    pub w: Vec<f64>,
}

/// Joint output of the shared-trunk forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct UsrOutput {
    pub psi: Vec<f64>,
    pub policy_logits: Vec<f64>,
    pub policy: Vec<f64>,
}

/// Which feature pathway the model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelArch {
    /// Learned autoencoder features of dimension d.
    Standard,
    /// Frozen identity features phi(s) = s, the exactly factorizable case.
    IdentityPhi,
}

/// Parameter bundle for the whole model. The encoder/decoder pair is phase-1
/// property; `phi_frozen` must be set before any phase-2 update touches the
/// trunk or heads.
#[derive(Debug, Clone, PartialEq)]
pub struct UsrModel {
    pub(crate) encoder: Net,
    pub(crate) decoder: Net,
    pub(crate) trunk: Net,
    pub(crate) psi_head: Net,
    pub(crate) policy_head: Net,
    pub(crate) w_net: Net,
    obs_dim: usize,
    d: usize,
    hidden: usize,
    arch: ModelArch,
    phi_frozen: bool,
}

pub const NUM_ACTIONS: usize = 4;

impl UsrModel {
    /// Standard architecture: tanh autoencoder (obs -> hidden -> d), a
    /// two-layer relu trunk over the concatenated (s, g) images, one affine
    /// layer per head, and a single affine goal-weight net.
    pub fn new(obs_dim: usize, d: usize, hidden: usize, seed: u64) -> Self {
        let mut enc_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "encoder"));
        let mut dec_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "decoder"));
        let encoder = Net::new(
            obs_dim,
            &[
                LayerSpec::Affine { inputs: obs_dim, outputs: hidden },
                LayerSpec::Tanh,
                LayerSpec::Affine { inputs: hidden, outputs: d },
            ],
            &mut enc_rng,
        )
        .expect("encoder shape is valid");
        let decoder = Net::new(
            d,
            &[
                LayerSpec::Affine { inputs: d, outputs: hidden },
                LayerSpec::Tanh,
                LayerSpec::Affine { inputs: hidden, outputs: obs_dim },
            ],
            &mut dec_rng,
        )
        .expect("decoder shape is valid");
        Self::assemble(encoder, decoder, obs_dim, d, hidden, ModelArch::Standard, false, seed)
    }

    /// Identity-feature variant: phi(s) = s with d = obs_dim, frozen from the
    /// start. Used where the reward factorization is exactly realizable.
    pub fn with_identity_features(obs_dim: usize, hidden: usize, seed: u64) -> Self {
        let encoder = Net::identity(obs_dim);
        let decoder = Net::identity(obs_dim);
        Self::assemble(encoder, decoder, obs_dim, obs_dim, hidden, ModelArch::IdentityPhi, true, seed)
    }

    fn assemble(
        encoder: Net,
        decoder: Net,
        obs_dim: usize,
        d: usize,
        hidden: usize,
        arch: ModelArch,
        phi_frozen: bool,
        seed: u64,
    ) -> Self {
        let mut trunk_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "trunk"));
        let mut psi_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "psi_head"));
        let mut pi_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "policy_head"));
        let mut w_rng = ChaCha12Rng::seed_from_u64(derive_seed(seed, "w_net"));
        let trunk = Net::new(
            2 * obs_dim,
            &[
                LayerSpec::Affine { inputs: 2 * obs_dim, outputs: hidden },
                LayerSpec::Relu,
                LayerSpec::Affine { inputs: hidden, outputs: hidden },
                LayerSpec::Relu,
            ],
            &mut trunk_rng,
        )
        .expect("trunk shape is valid");
        let psi_head = Net::new(hidden, &[LayerSpec::Affine { inputs: hidden, outputs: d }], &mut psi_rng)
            .expect("psi head shape is valid");
        let policy_head =
            Net::new(hidden, &[LayerSpec::Affine { inputs: hidden, outputs: NUM_ACTIONS }], &mut pi_rng)
                .expect("policy head shape is valid");
        let w_net = Net::new(obs_dim, &[LayerSpec::Affine { inputs: obs_dim, outputs: d }], &mut w_rng)
            .expect("w net shape is valid");
        UsrModel { encoder, decoder, trunk, psi_head, policy_head, w_net, obs_dim, d, hidden, arch, phi_frozen }
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn arch(&self) -> ModelArch {
        self.arch
    }

    pub fn phi_frozen(&self) -> bool {
        self.phi_frozen
    }

    pub fn freeze_phi(&mut self) {
        self.phi_frozen = true;
    }

    /// State features phi(s).
    pub fn encode_phi(&self, s: &Observation) -> Result<StateFeatures, ModelError> {
        Ok(StateFeatures { phi: self.encoder.forward(s.pixels())? })
    }

    /// Autoencoder round trip and its mean-squared reconstruction error.
    pub fn reconstruct(&self, s: &Observation) -> Result<(Vec<f64>, f64), ModelError> {
        let phi = self.encoder.forward(s.pixels())?;
        let recon = self.decoder.forward(&phi)?;
        let mse = recon
            .iter()
            .zip(s.pixels())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / recon.len() as f64;
        Ok((recon, mse))
    }

    /// Shared-trunk forward pass over the concatenated (s, g) images.
    pub fn usr_forward(&self, s: &Observation, g: &Observation) -> Result<UsrOutput, ModelError> {
        let input = concat_obs(s, g);
        let h = self.trunk.forward(&input)?;
        let psi = self.psi_head.forward(&h)?;
        let policy_logits = self.policy_head.forward(&h)?;
        let policy = softmax(&policy_logits);
        Ok(UsrOutput { psi, policy_logits, policy })
    }

    /// Goal-specific reward weights w(g).
    pub fn goal_weights(&self, g: &Observation) -> Result<GoalWeights, ModelError> {
        Ok(GoalWeights { w: self.w_net.forward(g.pixels())? })
    }

    /// Policy distribution only; skips the psi head.
    pub(crate) fn policy_of(&self, s: &Observation, g: &Observation) -> Result<Vec<f64>, ModelError> {
        let h = self.trunk.forward(&concat_obs(s, g))?;
        Ok(softmax(&self.policy_head.forward(&h)?))
    }

    /// Successor features only; skips the policy head.
    pub(crate) fn psi_of(&self, s: &Observation, g: &Observation) -> Result<Vec<f64>, ModelError> {
        let h = self.trunk.forward(&concat_obs(s, g))?;
        Ok(self.psi_head.forward(&h)?)
    }

    /// V(s, g) = psi(s, g) . w(g).
    pub fn value(&self, s: &Observation, g: &Observation) -> Result<f64, ModelError> {
        let out = self.usr_forward(s, g)?;
        let w = self.goal_weights(g)?;
        Ok(dot(&out.psi, &w.w))
    }

    /// All parameter blocks, namespaced per sub-network, in a fixed order.
    pub fn param_blocks(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (prefix, net) in self.named_nets() {
            for spec in net.params().blocks() {
                let values = net.params().block(&spec.name).expect("block exists").to_vec();
                out.push((format!("{prefix}.{}", spec.name), spec.dims.clone(), values));
            }
        }
        out
    }

    /// Overwrites one namespaced parameter block.
    pub fn load_param_block(&mut self, name: &str, values: &[f64]) -> Result<(), ModelError> {
        let (prefix, rest) = name.split_once('.').ok_or_else(|| ModelError::UnknownBlock(name.to_string()))?;
        let net = self.named_net_mut(prefix).ok_or_else(|| ModelError::UnknownBlock(name.to_string()))?;
        let slot = net
            .params_mut()
            .block_mut(rest)
            .ok_or_else(|| ModelError::UnknownBlock(name.to_string()))?;
        if slot.len() != values.len() {
            return Err(ModelError::BlockSize { name: name.to_string(), expected: slot.len(), got: values.len() });
        }
        slot.copy_from_slice(values);
        Ok(())
    }

    fn named_nets(&self) -> [(&'static str, &Net); 6] {
        [
            ("encoder", &self.encoder),
            ("decoder", &self.decoder),
            ("trunk", &self.trunk),
            ("psi_head", &self.psi_head),
            ("policy_head", &self.policy_head),
            ("w_net", &self.w_net),
        ]
    }

    fn named_net_mut(&mut self, prefix: &str) -> Option<&mut Net> {
        match prefix {
            "encoder" => Some(&mut self.encoder),
            "decoder" => Some(&mut self.decoder),
            "trunk" => Some(&mut self.trunk),
            "psi_head" => Some(&mut self.psi_head),
            "policy_head" => Some(&mut self.policy_head),
            "w_net" => Some(&mut self.w_net),
            _ => None,
        }
    }

    /// Concatenated phi-pathway parameters, for freeze-contract checks.
    pub fn phi_params(&self) -> Vec<f64> {
        let mut v = self.encoder.params().values().to_vec();
        v.extend_from_slice(self.decoder.params().values());
        v
    }
}

pub(crate) fn concat_obs(s: &Observation, g: &Observation) -> Vec<f64> {
    let mut input = Vec::with_capacity(s.len() + g.len());
    input.extend_from_slice(s.pixels());
    input.extend_from_slice(g.pixels());
    input
}
