//! The full restoration network: per-frame kernel correction, feature
//! extraction, bidirectional temporal alignment, and the upsampling head.
//!
//! A clip flows through four stages. The correction module predicts a
//! spatially-varying kernel field per frame and filters the frame with it.
//! A residual stack lifts each corrected frame into feature space. Two
//! alignment modules then propagate features through time — forward first,
//! then backward over the forward-aligned stream — warping the carried
//! features by optical flow and filtering them, again with predicted
//! per-pixel kernels. Finally the upsampler reconstructs each frame at 4x
//! resolution on top of a bicubic base.

use candle_core::Tensor;
use ndarray::Array2;

use crate::dictionary::{build_dictionary, init_atoms, InrAtom, MultiScaleDictionary};
use crate::error::{validation, IkError, Result};
use crate::filtering::{filter, CoefficientField};
use crate::flow::{FlowEstimator, FlowField};
use crate::metrics::luma_bt601;
use crate::nn::{pixel_shuffle, Conv2d, ResBlock};
use crate::param::ParamStore;
use crate::resize::BicubicUp4;
use crate::sequence::tensor_to_frame;
use crate::transformer::{RecurrentTransformer, RtState};
use crate::warp::warp;

/// Super-resolution scale factor.
pub const UPSCALE: usize = 4;

/// Frequency range the dictionary atoms are initialized from.
pub const ATOM_FREQ_RANGE: (f64, f64) = (2.0, 16.0);

/// Structural widths of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    /// Feature channel width.
    pub channels: usize,
    /// Number of dictionary scales.
    pub n_scales: usize,
    /// Number of atoms per scale.
    pub n_atoms: usize,
    /// Residual blocks in the feature extractor.
    pub n1_blocks: usize,
    /// Residual blocks in the upsampler.
    pub n2_blocks: usize,
}

impl ModelDims {
    pub fn validate(&self) -> Result<()> {
        if self.channels == 0
            || self.n_scales == 0
            || self.n_atoms == 0
            || self.n1_blocks == 0
            || self.n2_blocks == 0
        {
            return Err(validation("model dimensions must all be positive"));
        }
        Ok(())
    }
}

/// Component switches for the ablation variants. `no_lc` only affects the
/// training loss; the network itself ignores it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AblationFlags {
    pub no_isc: bool,
    pub no_ita: bool,
    pub no_rec: bool,
    pub no_bidir: bool,
    pub no_lc: bool,
}

/// Frame correction: predict a coefficient field from the frame itself and
/// filter the frame with the resulting kernels.
#[derive(Debug)]
pub struct IscModule {
    proj: Conv2d,
    srt: RecurrentTransformer,
    hidden_branch: bool,
}

impl IscModule {
    fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &ModelDims,
        hidden_branch: bool,
    ) -> Result<Self> {
        let proj = Conv2d::new(store, &format!("{name}.proj"), 3, dims.channels, 3, 1, 1, 1, true)?;
        let srt = RecurrentTransformer::new(
            store,
            &format!("{name}.srt"),
            dims.channels,
            dims.n_atoms,
            dims.n_scales,
            hidden_branch,
            false,
        )?;
        Ok(IscModule { proj, srt, hidden_branch })
    }

    /// Correct one `(1, 3, H, W)` frame; also returns the coefficient field
    /// for inspection.
    pub fn correct(
        &self,
        frame: &Tensor,
        dict: &MultiScaleDictionary,
    ) -> Result<(Tensor, CoefficientField)> {
        let projected = self.proj.forward(frame)?;
        let hidden = if self.hidden_branch { Some(&projected) } else { None };
        let out = self.srt.forward(&projected, hidden, None)?;
        let corrected = filter(&frame.squeeze(0)?, dict, &out.coeff)?.unsqueeze(0)?;
        Ok((corrected, out.coeff))
    }
}

/// Initial convolution plus a residual stack.
#[derive(Debug)]
pub struct FeatureExtractor {
    head: Conv2d,
    blocks: Vec<ResBlock>,
}

impl FeatureExtractor {
    fn new(store: &mut ParamStore, name: &str, dims: &ModelDims) -> Result<Self> {
        let head = Conv2d::new(store, &format!("{name}.head"), 3, dims.channels, 3, 1, 1, 1, true)?;
        let blocks = (0..dims.n1_blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), dims.channels))
            .collect::<Result<Vec<_>>>()?;
        Ok(FeatureExtractor { head, blocks })
    }

    pub fn forward(&self, frame: &Tensor) -> Result<Tensor> {
        let mut x = self.head.forward(frame)?;
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        Ok(x)
    }
}

/// Temporal alignment: warp the carried feature by flow, filter it with
/// kernels predicted from (warped, current), and fuse with the current
/// feature.
#[derive(Debug)]
pub struct ItaModule {
    trt: RecurrentTransformer,
    fusion: Conv2d,
    hidden_branch: bool,
}

impl ItaModule {
    fn new(
        store: &mut ParamStore,
        name: &str,
        dims: &ModelDims,
        hidden_branch: bool,
    ) -> Result<Self> {
        let trt = RecurrentTransformer::new(
            store,
            &format!("{name}.trt"),
            dims.channels,
            dims.n_atoms,
            dims.n_scales,
            hidden_branch,
            hidden_branch,
        )?;
        let fusion = Conv2d::new(
            store,
            &format!("{name}.fusion"),
            2 * dims.channels,
            dims.channels,
            3,
            1,
            1,
            1,
            true,
        )?;
        Ok(ItaModule { trt, fusion, hidden_branch })
    }

    /// Align `prev_aligned` onto the current frame. All features are
    /// `(1, C, H, W)`; `flow` is `(2, H, W)`.
    pub fn align(
        &self,
        prev_aligned: &Tensor,
        cur_feature: &Tensor,
        flow: &Tensor,
        dict: &MultiScaleDictionary,
        state: Option<&RtState>,
    ) -> Result<(Tensor, Option<RtState>)> {
        let warped = warp(&prev_aligned.squeeze(0)?, flow)?.unsqueeze(0)?;
        let hidden = if self.hidden_branch { Some(cur_feature) } else { None };
        let out = self.trt.forward(&warped, hidden, state)?;
        let filtered = filter(&warped.squeeze(0)?, dict, &out.coeff)?.unsqueeze(0)?;
        let fused = self
            .fusion
            .forward(&Tensor::cat(&[&filtered, cur_feature], 1)?)?;
        Ok((fused, out.state))
    }
}

/// Reconstruction head: residual stack, two 2x sub-pixel stages, and a
/// bicubic 4x base of the corrected frame.
#[derive(Debug)]
pub struct Upsampler {
    blocks: Vec<ResBlock>,
    expand1: Conv2d,
    expand2: Conv2d,
    to_rgb: Conv2d,
    bicubic: BicubicUp4,
}

impl Upsampler {
    fn new(store: &mut ParamStore, name: &str, dims: &ModelDims) -> Result<Self> {
        let c = dims.channels;
        let blocks = (0..dims.n2_blocks)
            .map(|i| ResBlock::new(store, &format!("{name}.res{i}"), c))
            .collect::<Result<Vec<_>>>()?;
        let expand1 = Conv2d::new(store, &format!("{name}.expand1"), c, 4 * c, 3, 1, 1, 1, true)?;
        let expand2 = Conv2d::new(store, &format!("{name}.expand2"), c, 4 * c, 3, 1, 1, 1, true)?;
        let to_rgb = Conv2d::new(store, &format!("{name}.to_rgb"), c, 3, 3, 1, 1, 1, true)?;
        let bicubic = BicubicUp4::new(3, store.dtype(), store.device())?;
        Ok(Upsampler { blocks, expand1, expand2, to_rgb, bicubic })
    }

    /// `aligned` is `(1, C, H, W)`, `corrected` is `(1, 3, H, W)`; the
    /// output is `(1, 3, 4H, 4W)` clamped to `[0, 1]`.
    pub fn forward(&self, aligned: &Tensor, corrected: &Tensor) -> Result<Tensor> {
        let mut x = aligned.clone();
        for block in &self.blocks {
            x = block.forward(&x)?;
        }
        x = pixel_shuffle(&self.expand1.forward(&x)?, 2)?;
        x = pixel_shuffle(&self.expand2.forward(&x)?, 2)?;
        let detail = self.to_rgb.forward(&x)?;
        let base = self.bicubic.forward(corrected)?;
        Ok((detail + base)?.clamp(0.0, 1.0)?)
    }
}

/// Everything the forward pass produces, per frame.
#[derive(Debug)]
pub struct ClipOutput {
    /// Restored frames, `(1, 3, 4H, 4W)` each, clamped to `[0, 1]`.
    pub sr: Vec<Tensor>,
    /// Corrected low-resolution frames, `(1, 3, H, W)` each.
    pub corrected: Vec<Tensor>,
    /// The aligned features fed into the upsampler, `(1, C, H, W)` each.
    pub aligned: Vec<Tensor>,
}

/// The assembled network.
#[derive(Debug)]
pub struct VsrModel {
    dims: ModelDims,
    flags: AblationFlags,
    atoms: Vec<InrAtom>,
    isc: Option<IscModule>,
    extractor: FeatureExtractor,
    ita_forward: Option<ItaModule>,
    ita_backward: Option<ItaModule>,
    up: Upsampler,
}

impl VsrModel {
    /// Build the network, registering every trainable parameter in `store`.
    /// Ablated components are not constructed at all, so every registered
    /// parameter participates in the forward pass.
    pub fn new(store: &mut ParamStore, dims: ModelDims, flags: AblationFlags) -> Result<Self> {
        dims.validate()?;
        let hidden_branch = !flags.no_rec;
        let needs_dict = !(flags.no_isc && flags.no_ita);
        let atoms = if needs_dict {
            init_atoms(store, dims.n_atoms, ATOM_FREQ_RANGE.0, ATOM_FREQ_RANGE.1)?
        } else {
            Vec::new()
        };
        let isc = if flags.no_isc {
            None
        } else {
            Some(IscModule::new(store, "isc", &dims, hidden_branch)?)
        };
        let extractor = FeatureExtractor::new(store, "extract", &dims)?;
        let (ita_forward, ita_backward) = if flags.no_ita {
            (None, None)
        } else {
            let fwd = Some(ItaModule::new(store, "ita_fwd", &dims, hidden_branch)?);
            let bwd = if flags.no_bidir {
                None
            } else {
                Some(ItaModule::new(store, "ita_bwd", &dims, hidden_branch)?)
            };
            (fwd, bwd)
        };
        let up = Upsampler::new(store, "up", &dims)?;
        Ok(VsrModel {
            dims,
            flags,
            atoms,
            isc,
            extractor,
            ita_forward,
            ita_backward,
            up,
        })
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn flags(&self) -> &AblationFlags {
        &self.flags
    }

    fn check_clip(&self, frames: &[Tensor]) -> Result<(usize, usize)> {
        let first = frames
            .first()
            .ok_or_else(|| validation("clip must contain at least one frame"))?;
        let (b, c, h, w) = first
            .dims4()
            .map_err(|_| validation("clip frames must be (1, 3, H, W) tensors"))?;
        if b != 1 || c != 3 {
            return Err(validation(format!(
                "clip frames must be (1, 3, H, W), got {:?}",
                first.dims()
            )));
        }
        if h % UPSCALE != 0 || w % UPSCALE != 0 {
            return Err(validation(format!(
                "frame size {h}x{w} must be divisible by {UPSCALE}"
            )));
        }
        for (t, frame) in frames.iter().enumerate().skip(1) {
            if frame.dims() != first.dims() {
                return Err(validation(format!(
                    "frame {t} has shape {:?}, frame 0 has {:?}",
                    frame.dims(),
                    first.dims()
                )));
            }
        }
        Ok((h, w))
    }

    /// One propagation sweep in stream order. `flows[t]` carries step
    /// `t - 1`'s output onto step `t`; `flows[0]` is the zero boundary
    /// flow. Without an alignment module the carried feature is only
    /// warped. Long-term state lives and dies inside the sweep.
    fn propagate(
        &self,
        stream: &[Tensor],
        flows: &[Tensor],
        module: Option<&ItaModule>,
        dict: Option<&MultiScaleDictionary>,
    ) -> Result<Vec<Tensor>> {
        let mut out: Vec<Tensor> = Vec::with_capacity(stream.len());
        let mut state: Option<RtState> = None;
        for (t, cur) in stream.iter().enumerate() {
            let prev = if t == 0 { cur } else { &out[t - 1] };
            let (aligned, next_state) = match (module, dict) {
                (Some(module), Some(dict)) => {
                    module.align(prev, cur, &flows[t], dict, state.as_ref())?
                }
                _ => (warp(&prev.squeeze(0)?, &flows[t])?.unsqueeze(0)?, None),
            };
            state = next_state;
            out.push(aligned);
        }
        Ok(out)
    }

    /// Estimate the flows that align each step's carried feature onto the
    /// current frame, in stream order; entry 0 is the zero boundary flow.
    fn stream_flows(
        &self,
        lumas: &[Array2<f32>],
        order: &[usize],
        estimator: &dyn FlowEstimator,
        device: &candle_core::Device,
    ) -> Result<Vec<Tensor>> {
        let (h, w) = lumas[0].dim();
        let mut flows = Vec::with_capacity(order.len());
        flows.push(FlowField::zeros(h, w).to_tensor(device)?);
        for pair in order.windows(2) {
            let (from, to) = (pair[1], pair[0]);
            let field = estimator.estimate(&lumas[from], &lumas[to]).map_err(|e| {
                IkError::Data(format!("flow between frames {to} and {from}: {e}"))
            })?;
            flows.push(field.to_tensor(device)?);
        }
        Ok(flows)
    }

    /// Run the network over a clip of `(1, 3, H, W)` frames.
    pub fn forward_clip(
        &self,
        frames: &[Tensor],
        estimator: &dyn FlowEstimator,
    ) -> Result<ClipOutput> {
        self.check_clip(frames)?;
        let dict = if self.atoms.is_empty() {
            None
        } else {
            Some(build_dictionary(&self.atoms, self.dims.n_scales)?)
        };

        let mut corrected = Vec::with_capacity(frames.len());
        for frame in frames {
            match (&self.isc, &dict) {
                (Some(isc), Some(dict)) => corrected.push(isc.correct(frame, dict)?.0),
                _ => corrected.push(frame.clone()),
            }
        }

        let features = corrected
            .iter()
            .map(|f| self.extractor.forward(f))
            .collect::<Result<Vec<_>>>()?;

        // Flows are estimated between corrected frames on the CPU; they
        // enter the graph as constants.
        let lumas = corrected
            .iter()
            .map(|t| luma_bt601(&tensor_to_frame(&t.squeeze(0)?)?))
            .collect::<Result<Vec<_>>>()?;

        let device = frames[0].device();
        let forward_order: Vec<usize> = (0..frames.len()).collect();
        let fwd_flows = self.stream_flows(&lumas, &forward_order, estimator, device)?;
        let aligned_fwd =
            self.propagate(&features, &fwd_flows, self.ita_forward.as_ref(), dict.as_ref())?;

        let aligned = if self.flags.no_bidir {
            aligned_fwd
        } else {
            let backward_order: Vec<usize> = forward_order.iter().rev().copied().collect();
            let bwd_flows = self.stream_flows(&lumas, &backward_order, estimator, device)?;
            let rev_stream: Vec<Tensor> = aligned_fwd.iter().rev().cloned().collect();
            let mut aligned_bwd = self.propagate(
                &rev_stream,
                &bwd_flows,
                self.ita_backward.as_ref(),
                dict.as_ref(),
            )?;
            aligned_bwd.reverse();
            aligned_bwd
        };

        let sr = aligned
            .iter()
            .zip(&corrected)
            .map(|(feat, frame)| self.up.forward(feat, frame))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClipOutput { sr, corrected, aligned })
    }
}
