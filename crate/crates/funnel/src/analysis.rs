//! Pixel-wise modeling-capacity analysis.
//!
//! Symbolically: after n funnel layers with k x k windows, each pixel's set
//! of reachable spatial extents is {1, 1+r, ..., 1+nr} with r = k-1, because
//! every layer's max lets the pixel either keep its current extent or grow
//! it by one window. Empirically: this module measures which input pixels
//! actually influence a chosen output and scores how well the available
//! extent sizes cover concrete layouts. The analysis isolates the funnel
//! layers themselves (no interleaved convolutions, no normalization), so the
//! window-plus-max mechanics are the only thing being measured.

use crate::activations::{frelu_forward, ConditionKind, FunnelConfig, FunnelParams, Fusion, WindowSpec};
use crate::error::{Error, Result};
use crate::ops::{Mode, NormKind};
use crate::rng::Rng;
use crate::shapes::{self, Raster};
use crate::tensor::Tensor;

/// Perturbation used by the influence probe.
pub const PROBE_DELTA: f64 = 1e-3;
/// An output change above this counts as influence.
pub const INFLUENCE_TOL: f64 = 1e-9;
/// Random (parameters, input) draws unioned per empirical mask.
pub const PROBE_DRAWS: usize = 8;

/// The symbolic set of spatial extents available after n layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActivateFieldSet {
    pub n_layers: usize,
    pub k: usize,
    /// Window growth per layer, k - 1.
    pub r: usize,
    /// Sorted, deduplicated extent sizes {1 + i*r}.
    pub sizes: Vec<usize>,
}

impl ActivateFieldSet {
    pub fn csv(&self) -> String {
        self.sizes.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(",")
    }
}

/// {1, 1+r, 1+2r, ..., 1+nr} with r = k-1; collapses to {1} for k = 1.
pub fn activate_field(n_layers: usize, k: usize) -> Result<ActivateFieldSet> {
    if n_layers < 1 {
        return Err(Error::InvalidArgument("need at least one layer".into()));
    }
    if k % 2 == 0 || k == 0 {
        return Err(Error::Config(format!("window size must be odd, got {k}")));
    }
    let r = k - 1;
    let mut sizes: Vec<usize> = (0..=n_layers).map(|i| 1 + i * r).collect();
    sizes.dedup();
    Ok(ActivateFieldSet { n_layers, k, r, sizes })
}

/// A stack of funnel layers over one channel group, with no normalization:
/// the minimal network the capacity argument reasons about.
#[derive(Debug, Clone)]
pub struct FreluStack {
    pub cfg: FunnelConfig,
    pub layers: Vec<FunnelParams>,
}

impl FreluStack {
    fn cfg_for(k: usize, init_std: f64) -> FunnelConfig {
        FunnelConfig {
            window: WindowSpec::Square(k),
            fusion: Fusion::Max,
            condition_kind: ConditionKind::Parametric,
            norm_kind: NormKind::None,
            init_std,
            ..FunnelConfig::default()
        }
    }

    /// Independent gaussian windows per layer.
    pub fn random(n_layers: usize, k: usize, channels: usize, init_std: f64, rng: &mut Rng) -> Result<FreluStack> {
        let cfg = Self::cfg_for(k, init_std);
        let layers = (0..n_layers)
            .map(|_| FunnelParams::init(&cfg, channels, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(FreluStack { cfg, layers })
    }

    /// The extent-maximizing construction: every window weight is positive
    /// and the window sum is a contraction, so on a uniform negative input
    /// the condition beats the identity at every pixel of every layer and
    /// the influence cone grows by the full window radius per layer.
    pub fn worst_case(n_layers: usize, k: usize, channels: usize) -> Result<FreluStack> {
        let cfg = Self::cfg_for(k, 0.0);
        let w0 = 0.9 / (k * k) as f64;
        let mut rng = Rng::new(0);
        let layers = (0..n_layers)
            .map(|_| {
                let mut p = FunnelParams::init(&cfg, channels, &mut rng)?;
                for v in p.branches[0].window.weights.data_mut() {
                    *v = w0;
                }
                Ok(p)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(FreluStack { cfg, layers })
    }

    /// Input paired with `worst_case`: a uniform negative field, sized so
    /// border effects never reach the influence cone of the grid center.
    pub fn worst_case_input(n_layers: usize, k: usize, channels: usize) -> Result<Tensor> {
        let side = 1 + 2 * n_layers * (k - 1) + 2;
        Tensor::filled(1, channels, side, side, -1.0)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut cur = x.clone();
        for p in &self.layers {
            cur = frelu_forward(&cur, &self.cfg, p, Mode::Train)?.0;
        }
        Ok(cur)
    }
}

/// Which input pixels influence one output coordinate.
#[derive(Debug, Clone)]
pub struct ReceptiveMask {
    /// (channel, row, col) of the probed output.
    pub target: (usize, usize, usize),
    pub mask: Raster,
    /// Bounding-box height and width of the influencing pixels.
    pub extent: (usize, usize),
}

impl ReceptiveMask {
    fn from_raster(target: (usize, usize, usize), mask: Raster) -> ReceptiveMask {
        let mut rows = (usize::MAX, 0usize);
        let mut cols = (usize::MAX, 0usize);
        let mut any = false;
        for i in 0..mask.h {
            for j in 0..mask.w {
                if mask.at(i, j) {
                    any = true;
                    rows = (rows.0.min(i), rows.1.max(i));
                    cols = (cols.0.min(j), cols.1.max(j));
                }
            }
        }
        let extent = if any { (rows.1 - rows.0 + 1, cols.1 - cols.0 + 1) } else { (0, 0) };
        ReceptiveMask { target, mask, extent }
    }

    /// 0/1 pixel grid as CSV rows.
    pub fn csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.mask.h {
            let row: Vec<&str> =
                (0..self.mask.w).map(|j| if self.mask.at(i, j) { "1" } else { "0" }).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

/// Single-draw influence probe: perturb each input pixel of the target's
/// channel by `PROBE_DELTA` and mark those that move the target output by
/// more than `INFLUENCE_TOL`.
pub fn receptive_mask(stack: &FreluStack, input: &Tensor, target: (usize, usize, usize)) -> Result<ReceptiveMask> {
    let xs = input.shape();
    let (tc, ti, tj) = target;
    if tc >= xs.c || ti >= xs.h || tj >= xs.w {
        return Err(Error::Index(format!(
            "target ({tc},{ti},{tj}) outside ({},{},{})",
            xs.c, xs.h, xs.w
        )));
    }
    let base = stack.forward(input)?.at(0, tc, ti, tj);
    let mut mask = Raster::empty(xs.h, xs.w);
    let mut probe = input.clone();
    for i in 0..xs.h {
        for j in 0..xs.w {
            let idx = xs.index(0, tc, i, j);
            let orig = probe.data()[idx];
            probe.data_mut()[idx] = orig + PROBE_DELTA;
            let out = stack.forward(&probe)?.at(0, tc, ti, tj);
            probe.data_mut()[idx] = orig;
            if (out - base).abs() > INFLUENCE_TOL {
                mask.set(i, j);
            }
        }
    }
    Ok(ReceptiveMask::from_raster(target, mask))
}

/// Influence mask maximized over `PROBE_DRAWS` random parameter draws (and
/// random inputs, unless a probe input is fixed).
pub fn empirical_receptive_field(
    n_layers: usize,
    k: usize,
    grid: (usize, usize),
    target: (usize, usize, usize),
    probe_input: Option<&Tensor>,
    rng: &mut Rng,
) -> Result<ReceptiveMask> {
    let (h, w) = grid;
    let mut union = Raster::empty(h, w);
    for _ in 0..PROBE_DRAWS {
        let stack = FreluStack::random(n_layers, k, 1, 0.3, rng)?;
        let input = match probe_input {
            Some(t) => t.clone(),
            None => Tensor::gaussian(1, 1, h, w, 0.0, 1.0, rng)?,
        };
        let m = receptive_mask(&stack, &input, target)?;
        for (u, v) in union.cells.iter_mut().zip(&m.mask.cells) {
            *u |= v;
        }
    }
    Ok(ReceptiveMask::from_raster(target, union))
}

/// Layout shapes the coverage probe understands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayoutShape {
    ObliqueLine,
    Arc,
    AxisRect,
}

impl LayoutShape {
    pub fn parse(s: &str) -> Option<LayoutShape> {
        match s {
            "oblique_line" => Some(LayoutShape::ObliqueLine),
            "arc" => Some(LayoutShape::Arc),
            "axis_rect" => Some(LayoutShape::AxisRect),
            _ => None,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            LayoutShape::ObliqueLine => "oblique_line",
            LayoutShape::Arc => "arc",
            LayoutShape::AxisRect => "axis_rect",
        }
    }

    fn render(&self, size: usize, rng: &mut Rng) -> Raster {
        match self {
            // thickness ranges chosen so axis rectangles need only small
            // extents while oblique/arc instances demand several sizes
            LayoutShape::AxisRect => shapes::random_bar(size, size, (3, 5), rng),
            LayoutShape::ObliqueLine => shapes::random_oblique(size, size, (2.5, 6.0), rng),
            LayoutShape::Arc => shapes::random_arc(size, size, (4.0, 9.0), rng),
        }
    }
}

/// Probe grid side.
pub const PROBE_SIZE: usize = 32;

/// Fraction of layout pixels whose locally required extent (the inscribed
/// square of the shape at that pixel) is within r of an available
/// activate-field size; averaged over random instances. A desk-scale
/// quantification of the claim that many extent sizes approximate oblique
/// and curved layouts; with zero layers the only available size is 1.
pub fn layout_probe(shape: LayoutShape, n_layers: usize, k: usize, trials: usize, rng: &mut Rng) -> Result<f64> {
    if trials < 1 {
        return Err(Error::InvalidArgument("trials must be >= 1".into()));
    }
    if k % 2 == 0 || k == 0 {
        return Err(Error::Config(format!("window size must be odd, got {k}")));
    }
    let r = k - 1;
    let sizes: Vec<usize> = {
        let mut v: Vec<usize> = (0..=n_layers).map(|i| 1 + i * r).collect();
        v.dedup();
        v
    };
    let mut total = 0.0;
    for _ in 0..trials {
        let raster = shape.render(PROBE_SIZE, rng);
        let mut on = 0usize;
        let mut covered = 0usize;
        for i in 0..raster.h {
            for j in 0..raster.w {
                if !raster.at(i, j) {
                    continue;
                }
                on += 1;
                let need = raster.inscribed_square(i, j);
                if sizes.iter().any(|&s| s.abs_diff(need) <= r) {
                    covered += 1;
                }
            }
        }
        total += if on == 0 { 1.0 } else { covered as f64 / on as f64 };
    }
    Ok(total / trials as f64)
}
