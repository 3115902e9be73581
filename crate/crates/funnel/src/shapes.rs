//! Rasterized layout shapes: axis-aligned bars, oblique lines, arcs, and
//! blobs. The analysis probe uses them as boolean masks; the synthetic
//! dataset renders them with intensity and noise.

use crate::rng::Rng;

/// Boolean pixel grid, row-major.
#[derive(Debug, Clone)]
pub struct Raster {
    pub h: usize,
    pub w: usize,
    pub cells: Vec<bool>,
}

impl Raster {
    pub fn empty(h: usize, w: usize) -> Raster {
        Raster { h, w, cells: vec![false; h * w] }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.cells[i * self.w + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize) {
        self.cells[i * self.w + j] = true;
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// Largest odd side s such that the s x s square centered at (i, j) lies
    /// entirely inside the shape. Zero for background pixels.
    pub fn inscribed_square(&self, i: usize, j: usize) -> usize {
        if !self.at(i, j) {
            return 0;
        }
        let mut s = 1usize;
        loop {
            let r = (s + 2 - 1) / 2;
            if i < r || j < r || i + r >= self.h || j + r >= self.w {
                return s;
            }
            let mut fits = true;
            'scan: for ii in (i - r)..=(i + r) {
                for jj in (j - r)..=(j + r) {
                    if !self.at(ii, jj) {
                        fits = false;
                        break 'scan;
                    }
                }
            }
            if !fits {
                return s;
            }
            s += 2;
        }
    }
}

fn fill_if(r: &mut Raster, pred: impl Fn(f64, f64) -> bool) {
    for i in 0..r.h {
        for j in 0..r.w {
            if pred(i as f64, j as f64) {
                r.set(i, j);
            }
        }
    }
}

/// Horizontal or vertical bar of the given thickness.
pub fn bar(h: usize, w: usize, horizontal: bool, thickness: usize, offset: usize, start: usize, len: usize) -> Raster {
    let mut r = Raster::empty(h, w);
    for t in 0..thickness {
        for l in 0..len {
            let (i, j) = if horizontal { (offset + t, start + l) } else { (start + l, offset + t) };
            if i < h && j < w {
                r.set(i, j);
            }
        }
    }
    r
}

/// All pixels within `radius` of the segment (x0,y0)-(x1,y1); oblique lines
/// are this with a non-axis-aligned direction.
pub fn thick_segment(h: usize, w: usize, p0: (f64, f64), p1: (f64, f64), radius: f64) -> Raster {
    let mut r = Raster::empty(h, w);
    let (dx, dy) = (p1.0 - p0.0, p1.1 - p0.1);
    let len2 = (dx * dx + dy * dy).max(1e-12);
    fill_if(&mut r, |i, j| {
        let t = ((i - p0.0) * dx + (j - p0.1) * dy) / len2;
        let t = t.clamp(0.0, 1.0);
        let (cx, cy) = (p0.0 + t * dx, p0.1 + t * dy);
        let d2 = (i - cx) * (i - cx) + (j - cy) * (j - cy);
        d2 <= radius * radius
    });
    r
}

/// Pixels within `thickness/2` of a circle of radius `radius`, restricted to
/// the angular span `[ang0, ang1]` (radians).
pub fn arc(h: usize, w: usize, center: (f64, f64), radius: f64, thickness: f64, ang0: f64, ang1: f64) -> Raster {
    let mut r = Raster::empty(h, w);
    let half = thickness / 2.0;
    fill_if(&mut r, |i, j| {
        let (di, dj) = (i - center.0, j - center.1);
        let d = (di * di + dj * dj).sqrt();
        if (d - radius).abs() > half {
            return false;
        }
        let mut a = dj.atan2(di);
        if a < ang0 {
            a += std::f64::consts::TAU;
        }
        a >= ang0 && a <= ang1
    });
    r
}

/// Filled ellipse.
pub fn ellipse(h: usize, w: usize, center: (f64, f64), radii: (f64, f64)) -> Raster {
    let mut r = Raster::empty(h, w);
    fill_if(&mut r, |i, j| {
        let u = (i - center.0) / radii.0.max(1e-9);
        let v = (j - center.1) / radii.1.max(1e-9);
        u * u + v * v <= 1.0
    });
    r
}

/// Random oblique line instance: angle kept away from the axes.
pub fn random_oblique(h: usize, w: usize, radius_range: (f64, f64), rng: &mut Rng) -> Raster {
    let radius = rng.range_f64(radius_range.0, radius_range.1);
    let quarter = std::f64::consts::FRAC_PI_4;
    // 20-70 degrees, randomly mirrored
    let ang = rng.range_f64(quarter * 0.45, quarter * 1.55);
    let ang = if rng.next_f64() < 0.5 { ang } else { -ang };
    let (ci, cj) = (
        rng.range_f64(h as f64 * 0.3, h as f64 * 0.7),
        rng.range_f64(w as f64 * 0.3, w as f64 * 0.7),
    );
    let half_len = rng.range_f64(0.3, 0.48) * (h.min(w) as f64);
    let (di, dj) = (ang.cos() * half_len, ang.sin() * half_len);
    thick_segment(h, w, (ci - di, cj - dj), (ci + di, cj + dj), radius)
}

/// Random axis-aligned bar.
pub fn random_bar(h: usize, w: usize, thickness_range: (usize, usize), rng: &mut Rng) -> Raster {
    let t = thickness_range.0 + rng.next_below(thickness_range.1 - thickness_range.0 + 1);
    let horizontal = rng.next_f64() < 0.5;
    let span = if horizontal { w } else { h };
    let cross = if horizontal { h } else { w };
    let len = span * 4 / 10 + rng.next_below(span / 2);
    let start = rng.next_below(span.saturating_sub(len).max(1));
    let offset = rng.next_below(cross.saturating_sub(t).max(1));
    bar(h, w, horizontal, t, offset, start, len)
}

/// Random arc instance.
pub fn random_arc(h: usize, w: usize, thickness_range: (f64, f64), rng: &mut Rng) -> Raster {
    let thickness = rng.range_f64(thickness_range.0, thickness_range.1);
    let radius = rng.range_f64(h.min(w) as f64 * 0.18, h.min(w) as f64 * 0.38);
    let (ci, cj) = (
        rng.range_f64(h as f64 * 0.3, h as f64 * 0.7),
        rng.range_f64(w as f64 * 0.3, w as f64 * 0.7),
    );
    let ang0 = rng.range_f64(0.0, std::f64::consts::TAU);
    let span = rng.range_f64(std::f64::consts::PI * 0.5, std::f64::consts::PI * 1.6);
    arc(h, w, (ci, cj), radius, thickness, ang0, ang0 + span)
}

/// Random blob (filled ellipse).
pub fn random_blob(h: usize, w: usize, radius_range: (f64, f64), rng: &mut Rng) -> Raster {
    let a = rng.range_f64(radius_range.0, radius_range.1);
    let b = rng.range_f64(radius_range.0, radius_range.1);
    let (ci, cj) = (
        rng.range_f64(h as f64 * 0.25, h as f64 * 0.75),
        rng.range_f64(w as f64 * 0.25, w as f64 * 0.75),
    );
    ellipse(h, w, (ci, cj), (a, b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bar_counts_match_geometry() {
        let r = bar(16, 16, true, 3, 5, 2, 10);
        assert_eq!(r.count(), 30);
    }

    #[test]
    fn inscribed_square_of_thick_bar() {
        let r = bar(16, 16, true, 5, 5, 0, 16);
        // middle row of a 5-thick bar admits a 5x5 square
        assert_eq!(r.inscribed_square(7, 8), 5);
        // edge row only fits itself
        assert_eq!(r.inscribed_square(5, 8), 1);
        assert_eq!(r.inscribed_square(0, 0), 0);
    }

    #[test]
    fn random_shapes_are_nonempty() {
        let mut rng = Rng::new(1);
        for _ in 0..50 {
            assert!(random_bar(32, 32, (2, 4), &mut rng).count() > 0);
            assert!(random_oblique(32, 32, (1.0, 2.0), &mut rng).count() > 0);
            assert!(random_arc(32, 32, (1.0, 2.0), &mut rng).count() > 0);
            assert!(random_blob(32, 32, (3.0, 6.0), &mut rng).count() > 0);
        }
    }
}
