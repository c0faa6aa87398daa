//! Recurrent transformer that predicts per-pixel filter coefficients.
//!
//! The backbone is a three-scale encoder/decoder of RT blocks fed by two
//! input branches: a feature branch and a hidden-state branch. Each block
//! runs recurrent-optimization attention (ROA): queries, keys, and values
//! are formed from both branches, attention happens across channels
//! (`C x C`, cheap at any resolution), and the logits are tempered by a
//! learnable positive `alpha`. Encoder blocks emit updated short-term
//! hidden states that chain down the scales and skip across to the
//! decoder blocks at matching resolution. In temporal mode the decoder
//! blocks additionally maintain long-term hidden states that carry across
//! time steps along a propagation direction.
//!
//! A final head maps the full-resolution decoder output to `N` unconstrained
//! atom weights and `R` softmax-normalized scale weights. The head starts
//! out biased to the delta kernel so an untrained model passes its input
//! through the downstream filter almost unchanged.

use candle_core::Tensor;
use candle_nn::ops::softmax;

use crate::error::{contract, validation, Result};
use crate::filtering::CoefficientField;
use crate::nn::{ChannelLayerNorm, Conv2d, ConvTranspose2d};
use crate::param::ParamStore;

/// Hidden expansion factor of the gated feed-forward network.
const FFN_EXPANSION: usize = 2;

/// Initial logit pushing the scale softmax onto the delta scale.
const MU_DELTA_LOGIT: f64 = 12.0;

/// Head weights start near zero so the delta bias dominates at init while
/// every parameter still receives a nonzero gradient.
const HEAD_WEIGHT_BOUND: f64 = 1e-6;

/// Recurrent-optimization attention across channels.
#[derive(Debug)]
pub struct RoaAttention {
    qkv_feature: Conv2d,
    qkv_hidden: Option<Conv2d>,
    out_proj: Conv2d,
    alpha: Tensor,
}

impl RoaAttention {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        hidden_branch: bool,
    ) -> Result<Self> {
        let qkv_feature = Conv2d::new(
            store,
            &format!("{name}.qkv_feature"),
            channels,
            3 * channels,
            3,
            1,
            1,
            1,
            false,
        )?;
        let qkv_hidden = if hidden_branch {
            Some(Conv2d::new(
                store,
                &format!("{name}.qkv_hidden"),
                channels,
                3 * channels,
                3,
                1,
                1,
                1,
                false,
            )?)
        } else {
            None
        };
        let out_proj = Conv2d::new(
            store,
            &format!("{name}.out_proj"),
            channels,
            channels,
            1,
            1,
            0,
            channels,
            false,
        )?;
        let alpha = store.constant(&format!("{name}.alpha"), &[1], 1.0)?;
        Ok(RoaAttention { qkv_feature, qkv_hidden, out_proj, alpha })
    }

    /// Assemble from explicit tensors (tests).
    pub fn from_parts(
        qkv_feature_weight: Tensor,
        qkv_hidden_weight: Option<Tensor>,
        out_proj_weight: Tensor,
        alpha: Tensor,
        channels: usize,
    ) -> Self {
        RoaAttention {
            qkv_feature: Conv2d::fixed(qkv_feature_weight, None, 1, 1, 1),
            qkv_hidden: qkv_hidden_weight.map(|w| Conv2d::fixed(w, None, 1, 1, 1)),
            out_proj: Conv2d::fixed(out_proj_weight, None, 1, 0, channels),
            alpha,
        }
    }

    /// `feature` and (optionally) `hidden` are `(1, C, H, W)`.
    pub fn forward(&self, feature: &Tensor, hidden: Option<&Tensor>) -> Result<Tensor> {
        let (b, c, h, w) = feature
            .dims4()
            .map_err(|_| validation("attention input must be (1, C, H, W)"))?;
        if b != 1 {
            return Err(validation(format!("attention expects batch 1, got {b}")));
        }
        if let Some(hid) = hidden {
            if self.qkv_hidden.is_none() {
                return Err(contract(
                    "hidden input passed to attention without a hidden branch".to_string(),
                ));
            }
            if hid.dims() != feature.dims() {
                return Err(validation(format!(
                    "hidden state {:?} does not match feature {:?}",
                    hid.dims(),
                    feature.dims()
                )));
            }
        }
        let mut qkv = self.qkv_feature.forward(feature)?;
        if let (Some(hid), Some(proj)) = (hidden, &self.qkv_hidden) {
            qkv = (qkv + proj.forward(hid)?)?;
        }
        let parts = qkv.chunk(3, 1)?;
        let hw = h * w;
        let as_mat = |t: &Tensor| -> Result<Tensor> { Ok(t.reshape((c, hw))?) };
        let q = as_mat(&parts[0])?.t()?.contiguous()?; // (HW, C)
        let k = as_mat(&parts[1])?; // (C, HW)
        let v = as_mat(&parts[2])?.t()?.contiguous()?; // (HW, C)
        let scores = k.matmul(&q)?; // (C, C): scores[c_in, c_out]
        let tempered = scores.broadcast_div(&self.alpha.reshape((1, 1))?)?;
        // Softmax over input channels: each output channel is a convex
        // combination of value channels.
        let attn = softmax(&tempered, 0)?;
        let mixed = v.matmul(&attn)?; // (HW, C)
        let out = mixed.t()?.contiguous()?.reshape((1, c, h, w))?;
        self.out_proj.forward(&out)
    }
}

/// Where a block sits in the backbone, which decides its hidden plumbing:
/// encoder blocks emit updated short-term states for the blocks downstream,
/// the bottleneck only consumes one, and decoder blocks mix in (and, in
/// temporal mode, update) a long-term state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockRole {
    Encoder,
    Bottleneck,
    Decoder { temporal: bool },
}

/// Output of one RT block.
#[derive(Debug)]
pub struct RtBlockOutput {
    pub feature: Tensor,
    pub short_hidden: Option<Tensor>,
    pub long_hidden: Option<Tensor>,
}

/// One transformer block: ROA with residual, then a gated FFN with residual,
/// plus the hidden-state updates appropriate for the block's role.
#[derive(Debug)]
pub struct RtBlock {
    norm_feature: ChannelLayerNorm,
    norm_hidden: Option<ChannelLayerNorm>,
    roa: RoaAttention,
    norm_ffn: ChannelLayerNorm,
    ffn: GatedFfn,
    short_update: Option<Conv2d>,
    long_gate: Option<Conv2d>,
    role: BlockRole,
}

impl RtBlock {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        role: BlockRole,
        hidden_branch: bool,
    ) -> Result<Self> {
        let norm_feature = ChannelLayerNorm::new(store, &format!("{name}.norm_feature"), channels)?;
        let roa = RoaAttention::new(store, &format!("{name}.roa"), channels, hidden_branch)?;
        let norm_ffn = ChannelLayerNorm::new(store, &format!("{name}.norm_ffn"), channels)?;
        let ffn = GatedFfn::new(store, &format!("{name}.ffn"), channels)?;
        let norm_hidden = if hidden_branch {
            Some(ChannelLayerNorm::new(store, &format!("{name}.norm_hidden"), channels)?)
        } else {
            None
        };
        // Only states someone downstream consumes get an update conv: the
        // encoder states feed the next scale and the decoder skip, and the
        // temporal decoder states feed the long-term gate.
        let emits_short = hidden_branch
            && matches!(role, BlockRole::Encoder | BlockRole::Decoder { temporal: true });
        let short_update = if emits_short {
            Some(Conv2d::new(
                store,
                &format!("{name}.short_update"),
                channels,
                channels,
                3,
                1,
                1,
                1,
                true,
            )?)
        } else {
            None
        };
        let long_gate = if hidden_branch && role == (BlockRole::Decoder { temporal: true }) {
            Some(Conv2d::new(
                store,
                &format!("{name}.long_gate"),
                2 * channels,
                channels,
                1,
                1,
                0,
                1,
                true,
            )?)
        } else {
            None
        };
        Ok(RtBlock {
            norm_feature,
            norm_hidden,
            roa,
            norm_ffn,
            ffn,
            short_update,
            long_gate,
            role,
        })
    }

    pub fn forward(
        &self,
        feature: &Tensor,
        short_hidden: Option<&Tensor>,
        long_hidden: Option<&Tensor>,
    ) -> Result<RtBlockOutput> {
        if long_hidden.is_some() && !matches!(self.role, BlockRole::Decoder { .. }) {
            return Err(contract(
                "long-term hidden state passed to an encoder block".to_string(),
            ));
        }
        if long_hidden.is_some() && self.long_gate.is_none() {
            return Err(contract(
                "long-term hidden state passed to a non-temporal block".to_string(),
            ));
        }
        if (short_hidden.is_some() || long_hidden.is_some()) && self.norm_hidden.is_none() {
            return Err(contract(
                "hidden state passed to a block without a hidden branch".to_string(),
            ));
        }
        let mix = match (short_hidden, long_hidden) {
            (Some(s), Some(l)) => Some((s + l)?),
            (Some(s), None) => Some(s.clone()),
            (None, Some(l)) => Some(l.clone()),
            (None, None) => None,
        };
        let normed_hidden = match (&mix, &self.norm_hidden) {
            (Some(m), Some(norm)) => Some(norm.forward(m)?),
            _ => None,
        };
        let attn = self
            .roa
            .forward(&self.norm_feature.forward(feature)?, normed_hidden.as_ref())?;
        let z = (feature + &attn)?;
        let out = (&z + self.ffn.forward(&self.norm_ffn.forward(&z)?)?)?;
        let short_out = match &self.short_update {
            Some(conv) => Some(conv.forward(&attn)?),
            None => None,
        };
        let long_out = match (&self.long_gate, &short_out) {
            (Some(gate), Some(short)) => {
                let prev = match long_hidden {
                    Some(l) => l.clone(),
                    None => short.zeros_like()?,
                };
                Some(gate.forward(&Tensor::cat(&[&prev, short], 1)?)?)
            }
            _ => None,
        };
        Ok(RtBlockOutput {
            feature: out,
            short_hidden: short_out,
            long_hidden: long_out,
        })
    }
}

/// Gated feed-forward: 1x1 expansion, 3x3 depthwise, gate, 1x1 projection.
#[derive(Debug)]
pub struct GatedFfn {
    expand: Conv2d,
    depthwise: Conv2d,
    project: Conv2d,
}

impl GatedFfn {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Result<Self> {
        let inner = FFN_EXPANSION * channels;
        let expand = Conv2d::new(store, &format!("{name}.expand"), channels, 2 * inner, 1, 1, 0, 1, true)?;
        let depthwise = Conv2d::new(
            store,
            &format!("{name}.depthwise"),
            2 * inner,
            2 * inner,
            3,
            1,
            1,
            2 * inner,
            true,
        )?;
        let project = Conv2d::new(store, &format!("{name}.project"), inner, channels, 1, 1, 0, 1, true)?;
        Ok(GatedFfn { expand, depthwise, project })
    }

    pub fn forward(&self, xs: &Tensor) -> Result<Tensor> {
        let expanded = self.depthwise.forward(&self.expand.forward(xs)?)?;
        let halves = expanded.chunk(2, 1)?;
        let gated = (halves[0].gelu()? * &halves[1])?;
        self.project.forward(&gated)
    }
}

/// Long-term hidden states carried across time steps, one per decoder block.
#[derive(Debug)]
pub struct RtState {
    dec2_long: Tensor,
    dec1_long: Tensor,
}

/// Coefficients plus the state to feed into the next time step.
#[derive(Debug)]
pub struct RtOutput {
    pub coeff: CoefficientField,
    pub state: Option<RtState>,
}

/// Three-scale recurrent transformer with a coefficient head.
#[derive(Debug)]
pub struct RecurrentTransformer {
    channels: usize,
    n_atoms: usize,
    n_scales: usize,
    hidden_branch: bool,
    temporal: bool,
    enc1_conv: Conv2d,
    hid1_conv: Option<Conv2d>,
    enc1: RtBlock,
    down2: Conv2d,
    hdown2: Option<Conv2d>,
    enc2: RtBlock,
    down3: Conv2d,
    hdown3: Option<Conv2d>,
    enc3: RtBlock,
    up2: ConvTranspose2d,
    dec2: RtBlock,
    up1: ConvTranspose2d,
    dec1: RtBlock,
    head: Conv2d,
}

impl RecurrentTransformer {
    /// `hidden_branch` enables the second input stream and all short-term
    /// hidden machinery; `temporal` additionally carries long-term decoder
    /// states across calls. Temporal mode requires the hidden branch.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        n_atoms: usize,
        n_scales: usize,
        hidden_branch: bool,
        temporal: bool,
    ) -> Result<Self> {
        if channels == 0 || n_atoms == 0 || n_scales == 0 {
            return Err(validation("transformer dimensions must be positive"));
        }
        if temporal && !hidden_branch {
            return Err(validation(
                "temporal state requires the hidden-state branch",
            ));
        }
        let enc1_conv = Conv2d::new(store, &format!("{name}.enc1_conv"), channels, channels, 3, 1, 1, 1, true)?;
        let hid1_conv = if hidden_branch {
            Some(Conv2d::new(store, &format!("{name}.hid1_conv"), channels, channels, 3, 1, 1, 1, true)?)
        } else {
            None
        };
        // The hidden stream gets its own projection and stride convolutions,
        // mirroring the feature stream scale for scale.
        let hconv = |store: &mut ParamStore, n: String, stride: usize| -> Result<Option<Conv2d>> {
            if hidden_branch {
                Ok(Some(Conv2d::new(store, &n, channels, channels, 3, stride, 1, 1, true)?))
            } else {
                Ok(None)
            }
        };
        let enc1 = RtBlock::new(store, &format!("{name}.enc1"), channels, BlockRole::Encoder, hidden_branch)?;
        let down2 = Conv2d::new(store, &format!("{name}.down2"), channels, channels, 3, 2, 1, 1, true)?;
        let hdown2 = hconv(store, format!("{name}.hdown2"), 2)?;
        let enc2 = RtBlock::new(store, &format!("{name}.enc2"), channels, BlockRole::Encoder, hidden_branch)?;
        let down3 = Conv2d::new(store, &format!("{name}.down3"), channels, channels, 3, 2, 1, 1, true)?;
        let hdown3 = hconv(store, format!("{name}.hdown3"), 2)?;
        let enc3 = RtBlock::new(store, &format!("{name}.enc3"), channels, BlockRole::Bottleneck, hidden_branch)?;
        let up2 = ConvTranspose2d::new(store, &format!("{name}.up2"), channels, channels, 2, 2)?;
        let dec2 = RtBlock::new(store, &format!("{name}.dec2"), channels, BlockRole::Decoder { temporal }, hidden_branch)?;
        let up1 = ConvTranspose2d::new(store, &format!("{name}.up1"), channels, channels, 2, 2)?;
        let dec1 = RtBlock::new(store, &format!("{name}.dec1"), channels, BlockRole::Decoder { temporal }, hidden_branch)?;

        // Coefficient head: near-zero weights plus a bias that selects the
        // delta kernel (omega one-hot on atom 0, mu softmax pinned to the
        // 1x1 scale), so a fresh model leaves filtered images untouched.
        let out_ch = n_atoms + n_scales;
        let weight = store.uniform(
            &format!("{name}.head.weight"),
            &[out_ch, channels, 3, 3],
            -HEAD_WEIGHT_BOUND,
            HEAD_WEIGHT_BOUND,
        )?;
        let mut bias = vec![0.0f64; out_ch];
        bias[0] = 1.0;
        bias[n_atoms] = MU_DELTA_LOGIT;
        let bias = store.from_values(&format!("{name}.head.bias"), &[out_ch], bias)?;
        let head = Conv2d::fixed(weight, Some(bias), 1, 1, 1);

        Ok(RecurrentTransformer {
            channels,
            n_atoms,
            n_scales,
            hidden_branch,
            temporal,
            enc1_conv,
            hid1_conv,
            enc1,
            down2,
            hdown2,
            enc2,
            down3,
            hdown3,
            enc3,
            up2,
            dec2,
            up1,
            dec1,
            head,
        })
    }

    pub fn is_temporal(&self) -> bool {
        self.temporal
    }

    fn check_state(&self, state: Option<&RtState>, h: usize, w: usize) -> Result<()> {
        let Some(state) = state else { return Ok(()) };
        if !self.temporal {
            return Err(contract(
                "long-term state supplied to a non-temporal transformer".to_string(),
            ));
        }
        let expect = [(&state.dec2_long, h / 2, w / 2), (&state.dec1_long, h, w)];
        for (tensor, eh, ew) in expect {
            if tensor.dims() != [1, self.channels, eh, ew] {
                return Err(contract(format!(
                    "carried long-term state has shape {:?}, expected {:?}",
                    tensor.dims(),
                    [1, self.channels, eh, ew]
                )));
            }
        }
        Ok(())
    }

    /// Run one time step. `feature` (and `hidden`, when the branch exists)
    /// are `(1, C, H, W)` with `H`, `W` divisible by 4; `state` is the
    /// previous step's long-term output state, if any.
    pub fn forward(
        &self,
        feature: &Tensor,
        hidden: Option<&Tensor>,
        state: Option<&RtState>,
    ) -> Result<RtOutput> {
        let (b, c, h, w) = feature
            .dims4()
            .map_err(|_| validation("transformer input must be (1, C, H, W)"))?;
        if b != 1 || c != self.channels {
            return Err(validation(format!(
                "transformer input {:?} does not match channels {}",
                feature.dims(),
                self.channels
            )));
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(validation(format!(
                "transformer input {h}x{w} must have sides divisible by 4"
            )));
        }
        match (hidden, self.hidden_branch) {
            (Some(hid), true) => {
                if hid.dims() != feature.dims() {
                    return Err(validation(format!(
                        "hidden-branch input {:?} does not match feature {:?}",
                        hid.dims(),
                        feature.dims()
                    )));
                }
            }
            (None, true) => {
                return Err(validation(
                    "transformer with a hidden branch needs a hidden input",
                ));
            }
            (Some(_), false) => {
                return Err(contract(
                    "hidden input supplied to a transformer without a hidden branch".to_string(),
                ));
            }
            (None, false) => {}
        }
        self.check_state(state, h, w)?;

        // Encoder: feature and hidden streams walk down the scales together;
        // each block refines the feature and re-emits the hidden state.
        let f1 = self.enc1_conv.forward(feature)?;
        let h1 = match (&self.hid1_conv, hidden) {
            (Some(conv), Some(hid)) => Some(conv.forward(hid)?),
            _ => None,
        };
        let o1 = self.enc1.forward(&f1, h1.as_ref(), None)?;
        let f2 = self.down2.forward(&o1.feature)?;
        let h2 = down_hidden(&self.hdown2, o1.short_hidden.as_ref())?;
        let o2 = self.enc2.forward(&f2, h2.as_ref(), None)?;
        let f3 = self.down3.forward(&o2.feature)?;
        let h3 = down_hidden(&self.hdown3, o2.short_hidden.as_ref())?;
        let o3 = self.enc3.forward(&f3, h3.as_ref(), None)?;

        // Decoder: encoder hidden states skip across at matching scales and
        // mix with the incoming long-term states; encoder features are added
        // onto each refined output.
        let u2 = self.up2.forward(&o3.feature)?;
        let d2 = self
            .dec2
            .forward(&u2, o2.short_hidden.as_ref(), state.map(|s| &s.dec2_long))?;
        let s2 = (&d2.feature + &o2.feature)?;
        let u1 = self.up1.forward(&s2)?;
        let d1 = self
            .dec1
            .forward(&u1, o1.short_hidden.as_ref(), state.map(|s| &s.dec1_long))?;
        let s1 = (&d1.feature + &o1.feature)?;

        let maps = self.head.forward(&s1)?.squeeze(0)?; // (N + R, H, W)
        let omega = maps.narrow(0, 0, self.n_atoms)?;
        let mu_logits = maps.narrow(0, self.n_atoms, self.n_scales)?;
        let mu = softmax(&mu_logits, 0)?;
        let coeff = CoefficientField::new(omega.contiguous()?, mu.contiguous()?)?;

        let state = if self.temporal {
            let take = |t: Option<Tensor>| t.expect("temporal decoder block emits long state");
            Some(RtState {
                dec2_long: take(d2.long_hidden),
                dec1_long: take(d1.long_hidden),
            })
        } else {
            None
        };
        Ok(RtOutput { coeff, state })
    }
}

fn down_hidden(conv: &Option<Conv2d>, hidden: Option<&Tensor>) -> Result<Option<Tensor>> {
    match (conv, hidden) {
        (Some(conv), Some(h)) => Ok(Some(conv.forward(h)?)),
        _ => Ok(None),
    }
}
