//! Latent concept descriptors: every spatial location of a pool5 frame
//! yields one `M`-dimensional descriptor, optionally after multi-level
//! spatial-pyramid max pooling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{DescriptorSet, Pool5Frame, Pool5Tensor};
use crate::par;

/// Spatial pyramid: one `n × n` max-pooling output per level.
///
/// For grid side `a`, level `n` pools windows of `ceil(a/n)` cells with
/// stride `floor(a/n)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SppConfig {
    pub levels: Vec<usize>,
}

impl Default for SppConfig {
    fn default() -> Self {
        SppConfig {
            levels: vec![6, 3, 2, 1],
        }
    }
}

impl SppConfig {
    pub fn new(levels: Vec<usize>) -> Self {
        SppConfig { levels }
    }

    /// `(window, stride)` for level `n` on a side-`a` grid.
    pub fn window(a: usize, n: usize) -> (usize, usize) {
        (a.div_ceil(n), a / n)
    }

    pub fn validate(&self, a: usize) -> Result<()> {
        if self.levels.is_empty() {
            return Err(Error::Parameter("spp needs at least one level".into()));
        }
        for &n in &self.levels {
            if n == 0 || n > a {
                return Err(Error::Parameter(format!("spp level {n} must be in 1..={a}")));
            }
            let (win, stride) = Self::window(a, n);
            if stride * (n - 1) + win > a {
                return Err(Error::Parameter(format!("spp level {n} window leaves the {a}x{a} grid")));
            }
        }
        Ok(())
    }

    /// Descriptors produced per frame.
    pub fn locations(&self) -> usize {
        self.levels.iter().map(|n| n * n).sum()
    }
}

/// One descriptor per location, row-major over (row, col).
pub fn extract_lcd(frame: &Pool5Frame<'_>) -> DescriptorSet {
    let a = frame.side();
    DescriptorSet::from_raw(a * a, frame.channels(), frame.as_slice().to_vec())
}

/// Spatial-pyramid max pooling: levels in config order, windows row-major
/// within each level.
pub fn spp_lcd(frame: &Pool5Frame<'_>, cfg: &SppConfig) -> Result<DescriptorSet> {
    let a = frame.side();
    let m = frame.channels();
    cfg.validate(a)?;
    let mut data = Vec::with_capacity(cfg.locations() * m);
    for &n in &cfg.levels {
        let (win, stride) = SppConfig::window(a, n);
        for wr in 0..n {
            for wc in 0..n {
                let start = data.len();
                data.extend_from_slice(frame.cell(wr * stride, wc * stride));
                let out = &mut data[start..];
                for r in wr * stride..wr * stride + win {
                    for c in wc * stride..wc * stride + win {
                        for (o, &v) in out.iter_mut().zip(frame.cell(r, c)) {
                            if v > *o {
                                *o = v;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(DescriptorSet::from_raw(cfg.locations(), m, data))
}

/// All descriptors of a video, frames in order.
pub fn lcd_video(tensor: &Pool5Tensor, cfg: Option<&SppConfig>) -> Result<DescriptorSet> {
    if tensor.n_frames() == 0 {
        return Err(Error::EmptyInput("pool5 file has no frames".into()));
    }
    if let Some(c) = cfg {
        c.validate(tensor.side())?;
    }
    let per_frame = par::map_range(tensor.n_frames(), |i| {
        let f = tensor.frame(i);
        match cfg {
            Some(c) => spp_lcd(&f, c),
            None => Ok(extract_lcd(&f)),
        }
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    DescriptorSet::concat(&per_frame)
}
