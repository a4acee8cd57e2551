//! Visual anchors: image-space feature neighborhoods around projected body points.

use std::collections::HashMap;

use nalgebra::Vector3;

use super::TokenAnchors;
use crate::body_model::NUM_BODY_JOINTS;
use crate::error::{GraftError, Result};
use crate::io::container::{TensorContainer, TensorData};
use crate::network::config::{NEIGHBORHOOD, NUM_LEVELS, NUM_STREAMS, NUM_TOKENS};
use crate::network::{apply_linear, GraftWeights};
use crate::scene::CameraIntrinsics;

pub const STREAM_NAMES: [&str; NUM_STREAMS] = ["s", "h"];

/// One `[rows, cols, channels]` feature map, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Multi-level feature maps of the scene stream and the interaction stream.
#[derive(Clone, Debug, PartialEq)]
pub struct VisualFeatureGrids {
    pub rows: usize,
    pub cols: usize,
    /// Pixels per grid cell.
    pub patch_size: f64,
    pub intrinsics: CameraIntrinsics,
    pub streams: [[FeatureGrid; NUM_LEVELS]; NUM_STREAMS],
}

impl VisualFeatureGrids {
    pub fn new(
        rows: usize,
        cols: usize,
        patch_size: f64,
        intrinsics: CameraIntrinsics,
        streams: [[FeatureGrid; NUM_LEVELS]; NUM_STREAMS],
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || !(patch_size > 0.0) {
            return Err(GraftError::GridShapeMismatch(
                "grid needs positive rows, cols and patch size".into(),
            ));
        }
        for (s, levels) in streams.iter().enumerate() {
            for (l, g) in levels.iter().enumerate() {
                if g.channels == 0 || g.data.len() != rows * cols * g.channels {
                    return Err(GraftError::GridShapeMismatch(format!(
                        "stream {} level {l}: {} values for a {rows}x{cols}x{} grid",
                        STREAM_NAMES[s],
                        g.data.len(),
                        g.channels
                    )));
                }
                if g.channels != streams[0][l].channels {
                    return Err(GraftError::GridShapeMismatch(format!(
                        "level {l} channel count differs between streams"
                    )));
                }
            }
        }
        intrinsics.validate()?;
        Ok(Self {
            rows,
            cols,
            patch_size,
            intrinsics,
            streams,
        })
    }

    pub fn level_channels(&self) -> [usize; NUM_LEVELS] {
        std::array::from_fn(|l| self.streams[0][l].channels)
    }

    fn cell(&self, stream: usize, level: usize, row: usize, col: usize) -> &[f64] {
        let g = &self.streams[stream][level];
        let start = (row * self.cols + col) * g.channels;
        &g.data[start..start + g.channels]
    }

    /// Tensors `stream{s,h}_level{0..3}` (`[rows, cols, C]`), `patch_size`
    /// and `intrinsics` (`fx, fy, cx, cy, width, height`).
    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let scalar = |name: &str| -> Result<Vec<f64>> {
            c.get(name)
                .ok_or_else(|| GraftError::GridShapeMismatch(format!("missing tensor {name}")))?
                .data
                .to_f64()
        };
        let patch = scalar("patch_size")?;
        let k = scalar("intrinsics")?;
        if patch.len() != 1 || k.len() != 6 {
            return Err(GraftError::GridShapeMismatch("patch_size needs 1 value, intrinsics 6".into()));
        }
        let intrinsics = CameraIntrinsics::new(k[0], k[1], k[2], k[3], k[4] as u32, k[5] as u32)?;
        let mut dims0: Option<(usize, usize)> = None;
        let mut grid = |s: usize, l: usize| -> Result<FeatureGrid> {
            let name = format!("stream{}_level{l}", STREAM_NAMES[s]);
            let t = c
                .get(&name)
                .ok_or_else(|| GraftError::GridShapeMismatch(format!("missing tensor {name}")))?;
            if t.dims.len() != 3 {
                return Err(GraftError::GridShapeMismatch(format!("{name} must be rank 3")));
            }
            let (r, cc) = (t.dims[0] as usize, t.dims[1] as usize);
            match dims0 {
                None => dims0 = Some((r, cc)),
                Some(d) if d != (r, cc) => {
                    return Err(GraftError::GridShapeMismatch(format!(
                        "{name} is {r}x{cc}, expected {}x{}",
                        d.0, d.1
                    )))
                }
                _ => {}
            }
            Ok(FeatureGrid {
                channels: t.dims[2] as usize,
                data: t.data.to_f64()?,
            })
        };
        let mut streams: Vec<[FeatureGrid; NUM_LEVELS]> = Vec::new();
        for s in 0..NUM_STREAMS {
            let levels = (0..NUM_LEVELS).map(|l| grid(s, l)).collect::<Result<Vec<_>>>()?;
            streams.push(levels.try_into().expect("four levels"));
        }
        let (rows, cols) = dims0.expect("at least one grid");
        let streams: [[FeatureGrid; NUM_LEVELS]; NUM_STREAMS] = streams.try_into().expect("two streams");
        Self::new(rows, cols, patch[0], intrinsics, streams)
    }

    pub fn to_container(&self) -> TensorContainer {
        let mut c = TensorContainer::new();
        for (s, levels) in self.streams.iter().enumerate() {
            for (l, g) in levels.iter().enumerate() {
                c.insert(
                    format!("stream{}_level{l}", STREAM_NAMES[s]),
                    vec![self.rows as u64, self.cols as u64, g.channels as u64],
                    TensorData::F32(g.data.iter().map(|&x| x as f32).collect()),
                )
                .expect("unique names");
            }
        }
        c.insert("patch_size", vec![1], TensorData::F64(vec![self.patch_size])).expect("unique");
        let k = &self.intrinsics;
        c.insert(
            "intrinsics",
            vec![6],
            TensorData::F64(vec![k.fx, k.fy, k.cx, k.cy, k.width as f64, k.height as f64]),
        )
        .expect("unique");
        c
    }
}

/// Context vectors of every token (`n_k x width`, row-major) and the pixel
/// each anchor projected to (`None` when behind the camera or off-image).
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorContext {
    pub features: Vec<Vec<f64>>,
    pub pixels: Vec<Vec<Option<(f64, f64)>>>,
}

/// Number of context vectors each token attends to.
pub fn context_len(token: usize) -> usize {
    if token < NUM_TOKENS - 1 {
        NUM_STREAMS * NEIGHBORHOOD * NEIGHBORHOOD
    } else {
        NUM_STREAMS * crate::body_model::NUM_SURFACE_PROBES
    }
}

struct CellEncoder<'a> {
    grids: &'a VisualFeatureGrids,
    w: &'a GraftWeights,
    cache: HashMap<(usize, usize, usize), Vec<f64>>,
}

impl CellEncoder<'_> {
    fn encode(&mut self, stream: usize, row: usize, col: usize) -> Vec<f64> {
        if let Some(v) = self.cache.get(&(stream, row, col)) {
            return v.clone();
        }
        let l = self.w.layout();
        let mut levels = Vec::with_capacity(NUM_LEVELS * self.w.config().level_dim);
        for (lvl, proj) in l.level_proj.iter().enumerate() {
            levels.extend(apply_linear(self.w, proj, self.grids.cell(stream, lvl, row, col)));
        }
        let mut out = apply_linear(self.w, &l.fuse, &levels);
        let d = self.w.config().width;
        for (o, e) in out.iter_mut().zip(self.w.slice(l.stream_embed + stream * d, d)) {
            *o += e;
        }
        self.cache.insert((stream, row, col), out.clone());
        out
    }

    /// `side x side` cells centered on the anchor's cell, in row-major order.
    fn neighborhood(&mut self, stream: usize, pixel: Option<(f64, f64)>, side: usize, out: &mut Vec<f64>) {
        let d = self.w.config().width;
        let half = (side / 2) as isize;
        let base = pixel.map(|(u, v)| {
            let p = self.grids.patch_size;
            ((v / p).floor() as isize, (u / p).floor() as isize)
        });
        for dr in -half..=half {
            for dc in -half..=half {
                let cell = base.and_then(|(r, c)| {
                    let (r, c) = (r + dr, c + dc);
                    (r >= 0 && c >= 0 && (r as usize) < self.grids.rows && (c as usize) < self.grids.cols)
                        .then_some((r as usize, c as usize))
                });
                match cell {
                    Some((r, c)) => out.extend(self.encode(stream, r, c)),
                    None => out.extend(std::iter::repeat_n(0.0, d)),
                }
            }
        }
    }
}

/// Samples context vectors for all 24 tokens. Joint and hand tokens get a
/// 3x3 cell neighborhood per stream; the full-body token gets one cell per
/// surface anchor per stream.
pub fn sample_anchor_features(
    grids: &VisualFeatureGrids,
    anchors: &TokenAnchors,
    w: &GraftWeights,
) -> Result<AnchorContext> {
    if grids.level_channels() != w.config().level_channels {
        return Err(GraftError::GridShapeMismatch(format!(
            "grid channels {:?} do not match the network's {:?}",
            grids.level_channels(),
            w.config().level_channels
        )));
    }
    let k = &grids.intrinsics;
    let pixel = |p: &Vector3<f64>| k.project(p).pixel().filter(|&(u, v)| k.contains(u, v));
    let mut enc = CellEncoder {
        grids,
        w,
        cache: HashMap::new(),
    };
    let mut features = Vec::with_capacity(NUM_TOKENS);
    let mut pixels = Vec::with_capacity(NUM_TOKENS);
    let joint_like = anchors
        .body
        .iter()
        .copied()
        .chain([anchors.hand_center(0), anchors.hand_center(1)]);
    for (t, a) in joint_like.enumerate() {
        debug_assert!(t < NUM_BODY_JOINTS + 2);
        let px = pixel(&a);
        let mut f = Vec::with_capacity(context_len(t) * w.config().width);
        for s in 0..NUM_STREAMS {
            enc.neighborhood(s, px, NEIGHBORHOOD, &mut f);
        }
        features.push(f);
        pixels.push(vec![px]);
    }
    let surface_px: Vec<_> = anchors.surface.iter().map(pixel).collect();
    let mut f = Vec::with_capacity(context_len(NUM_TOKENS - 1) * w.config().width);
    for s in 0..NUM_STREAMS {
        for px in &surface_px {
            enc.neighborhood(s, *px, 1, &mut f);
        }
    }
    features.push(f);
    pixels.push(surface_px);
    Ok(AnchorContext { features, pixels })
}
