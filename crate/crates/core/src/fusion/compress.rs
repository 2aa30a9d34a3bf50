use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::ShapeError;
use crate::grid::{lerp, pairwise_sum, GridShape, VoxelFeature};
use crate::par;

/// Named voxel compression strategies for the shared voxel prior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyTag {
    /// Asymmetric: 4x in-plane, 2x vertical.
    M1,
    /// Aggressive: 4x on every axis.
    M2,
    /// Mild: 2x on every axis.
    M3,
    /// Any other factor triple.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompressionStrategy {
    pub tag: StrategyTag,
    pub fh: usize,
    pub fw: usize,
    pub fl: usize,
}

impl CompressionStrategy {
    pub const M1: CompressionStrategy = CompressionStrategy { tag: StrategyTag::M1, fh: 4, fw: 4, fl: 2 };
    pub const M2: CompressionStrategy = CompressionStrategy { tag: StrategyTag::M2, fh: 4, fw: 4, fl: 4 };
    pub const M3: CompressionStrategy = CompressionStrategy { tag: StrategyTag::M3, fh: 2, fw: 2, fl: 2 };

    pub fn custom(fh: usize, fw: usize, fl: usize) -> Result<Self, ShapeError> {
        for f in [fh, fw, fl] {
            if ![1, 2, 4].contains(&f) {
                return Err(ShapeError::InvalidShape(format!(
                    "compression factors must be 1, 2 or 4, got {f}"
                )));
            }
        }
        Ok(CompressionStrategy { tag: StrategyTag::Custom, fh, fw, fl })
    }

    pub fn ratio(&self) -> usize {
        self.fh * self.fw * self.fl
    }

    pub fn compressed_shape(&self, s: &GridShape) -> Result<GridShape, ShapeError> {
        if !s.h_cells.is_multiple_of(self.fh) || !s.w_cells.is_multiple_of(self.fw) || !s.l_bins.is_multiple_of(self.fl) {
            return Err(ShapeError::mismatch(
                "grid divisible by compression factors",
                format!("multiples of {}x{}x{}", self.fh, self.fw, self.fl),
                format!("{}x{}x{}", s.h_cells, s.w_cells, s.l_bins),
            ));
        }
        Ok(GridShape {
            h_cells: s.h_cells / self.fh,
            w_cells: s.w_cells / self.fw,
            l_bins: s.l_bins / self.fl,
            channels: s.channels,
            cell_size_m: s.cell_size_m * self.fh as f32,
            z_size_m: s.z_size_m * self.fl as f32,
        })
    }
}

/// `mix_voxel.strategy` setting; `Off` disables the voxel prior entirely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum MixVoxelMode {
    Off,
    On(CompressionStrategy),
}

impl FromStr for MixVoxelMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "off" => Ok(MixVoxelMode::Off),
            "m1" => Ok(MixVoxelMode::On(CompressionStrategy::M1)),
            "m2" => Ok(MixVoxelMode::On(CompressionStrategy::M2)),
            "m3" => Ok(MixVoxelMode::On(CompressionStrategy::M3)),
            other => {
                let f: Vec<usize> = other.split('x').map(str::parse).collect::<Result<_, _>>().map_err(|_| {
                    format!("unknown strategy `{other}` (expected m1, m2, m3, off or FHxFWxFL)")
                })?;
                match f[..] {
                    [fh, fw, fl] => CompressionStrategy::custom(fh, fw, fl).map(MixVoxelMode::On).map_err(|e| e.to_string()),
                    _ => Err(format!("unknown strategy `{other}` (expected m1, m2, m3, off or FHxFWxFL)")),
                }
            }
        }
    }
}

impl TryFrom<String> for MixVoxelMode {
    type Error = String;
    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

impl From<MixVoxelMode> for String {
    fn from(m: MixVoxelMode) -> String {
        m.to_string()
    }
}

impl fmt::Display for MixVoxelMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MixVoxelMode::Off => write!(f, "off"),
            MixVoxelMode::On(s) => match s.tag {
                StrategyTag::M1 => write!(f, "m1"),
                StrategyTag::M2 => write!(f, "m2"),
                StrategyTag::M3 => write!(f, "m3"),
                StrategyTag::Custom => write!(f, "{}x{}x{}", s.fh, s.fw, s.fl),
            },
        }
    }
}

/// Mean-pool each axis by the strategy's factors.
pub fn compress_voxel(v: &VoxelFeature, s: &CompressionStrategy) -> Result<VoxelFeature, ShapeError> {
    let src = *v.shape();
    let dst = s.compressed_shape(&src)?;
    let c = src.channels;
    let n = s.ratio();
    let mut out = VoxelFeature::zeros(dst, v.frame());
    par::for_each_chunk(out.data_mut(), dst.w_cells * dst.l_bins * c, |h, chunk| {
        let mut buf = vec![0.0f32; n];
        for w in 0..dst.w_cells {
            for l in 0..dst.l_bins {
                for ch in 0..c {
                    let mut k = 0;
                    for dh in 0..s.fh {
                        for dw in 0..s.fw {
                            for dl in 0..s.fl {
                                buf[k] = v.get(h * s.fh + dh, w * s.fw + dw, l * s.fl + dl, ch);
                                k += 1;
                            }
                        }
                    }
                    chunk[(w * dst.l_bins + l) * c + ch] = pairwise_sum(&mut buf) / n as f32;
                }
            }
        }
    });
    Ok(out)
}

fn up_coord(i: usize, f: usize, n: usize) -> (usize, usize, f32) {
    let src = ((i as f64 + 0.5) / f as f64 - 0.5).clamp(0.0, (n - 1) as f64);
    let i0 = src.floor() as usize;
    (i0, (i0 + 1).min(n - 1), (src - i0 as f64) as f32)
}

/// Trilinear upsampling back to the pre-compression grid (edge clamped).
pub fn decompress_voxel(v: &VoxelFeature, s: &CompressionStrategy, target: GridShape) -> Result<VoxelFeature, ShapeError> {
    let src = *v.shape();
    let expect = s.compressed_shape(&target.with_channels(src.channels))?;
    if (expect.h_cells, expect.w_cells, expect.l_bins) != (src.h_cells, src.w_cells, src.l_bins) {
        return Err(ShapeError::mismatch(
            "compressed voxel dims",
            format!("{}x{}x{}", expect.h_cells, expect.w_cells, expect.l_bins),
            format!("{}x{}x{}", src.h_cells, src.w_cells, src.l_bins),
        ));
    }
    let dst = target.with_channels(src.channels);
    let c = src.channels;
    let mut out = VoxelFeature::zeros(dst, v.frame());
    par::for_each_chunk(out.data_mut(), dst.w_cells * dst.l_bins * c, |h, chunk| {
        let (h0, h1, th) = up_coord(h, s.fh, src.h_cells);
        for w in 0..dst.w_cells {
            let (w0, w1, tw) = up_coord(w, s.fw, src.w_cells);
            for l in 0..dst.l_bins {
                let (l0, l1, tl) = up_coord(l, s.fl, src.l_bins);
                for ch in 0..c {
                    let g = |a, b, d| v.get(a, b, d, ch);
                    let x00 = lerp(g(h0, w0, l0), g(h0, w0, l1), tl);
                    let x01 = lerp(g(h0, w1, l0), g(h0, w1, l1), tl);
                    let x10 = lerp(g(h1, w0, l0), g(h1, w0, l1), tl);
                    let x11 = lerp(g(h1, w1, l0), g(h1, w1, l1), tl);
                    chunk[(w * dst.l_bins + l) * c + ch] = lerp(lerp(x00, x01, tw), lerp(x10, x11, tw), th);
                }
            }
        }
    });
    Ok(out)
}
