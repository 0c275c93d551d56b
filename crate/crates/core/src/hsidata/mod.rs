//! Hyperspectral cubes, label maps, patches and splits.

mod io;
mod split;
mod synth;

pub use io::{decode_hsc, encode_hsc, read_cube, write_cube, HSC_MAGIC};
pub use split::{split_pixels, Split, SplitSpec};
pub use synth::{synth_cube, SynthSpec};

use crate::error::{Error, Result};

/// `H x W x C` cube stored row-major as (row, col, band).
#[derive(Clone, Debug, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    values: Vec<f32>,
    band_range: Option<Vec<(f64, f64)>>,
}

impl HsiCube {
    pub fn new(height: usize, width: usize, bands: usize, values: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::invalid(format!(
                "cube extents must be positive, got {height}x{width}x{bands}"
            )));
        }
        if values.len() != height * width * bands {
            return Err(Error::shape(
                "cube",
                format!(
                    "{height}x{width}x{bands} needs {} values, got {}",
                    height * width * bands,
                    values.len()
                ),
            ));
        }
        Ok(Self {
            height,
            width,
            bands,
            values,
            band_range: None,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f32] {
        &mut self.values
    }

    /// Per-band `(min, max)` seen by [`normalize`], if it has run.
    pub fn band_range(&self) -> Option<&[(f64, f64)]> {
        self.band_range.as_deref()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        (row * self.width + col) * self.bands + band
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, band: usize) -> f32 {
        self.values[self.index(row, col, band)]
    }

    pub fn spectrum(&self, row: usize, col: usize) -> &[f32] {
        let i = self.index(row, col, 0);
        &self.values[i..i + self.bands]
    }

    /// Copy of one band as an `H x W` row-major plane.
    pub fn band_plane(&self, band: usize) -> Vec<f64> {
        self.values
            .iter()
            .skip(band)
            .step_by(self.bands)
            .map(|&v| v as f64)
            .collect()
    }

    pub fn set_band_plane(&mut self, band: usize, plane: &[f64]) {
        debug_assert_eq!(plane.len(), self.height * self.width);
        for (i, &v) in plane.iter().enumerate() {
            self.values[i * self.bands + band] = v as f32;
        }
    }
}

/// Per-pixel class labels; 0 means unlabeled, classes are `1..=n_classes`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u16>,
    n_classes: usize,
}

impl LabelMap {
    /// Every class in `1..=max(label)` must own at least one pixel.
    pub fn new(height: usize, width: usize, labels: Vec<u16>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::shape(
                "label map",
                format!("{height}x{width} needs {} labels, got {}", height * width, labels.len()),
            ));
        }
        let n_classes = labels.iter().copied().max().unwrap_or(0) as usize;
        let mut seen = vec![false; n_classes + 1];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = (1..=n_classes).find(|&c| !seen[c]) {
            return Err(Error::invalid(format!("class {missing} has no labeled pixel")));
        }
        Ok(Self {
            height,
            width,
            labels,
            n_classes,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.labels[row * self.width + col]
    }

    pub fn matches(&self, cube: &HsiCube) -> bool {
        self.height == cube.height && self.width == cube.width
    }

    /// Coordinates of all labeled pixels, row-major.
    pub fn labeled(&self) -> Vec<(usize, usize)> {
        (0..self.height)
            .flat_map(|r| (0..self.width).map(move |c| (r, c)))
            .filter(|&(r, c)| self.get(r, c) != 0)
            .collect()
    }
}

/// `P x P x C` window around a center pixel, row-major (row, col, band).
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    pub size: usize,
    pub bands: usize,
    pub values: Vec<f64>,
    /// Class of the center pixel, 0 if unlabeled.
    pub label: u16,
}

impl Patch {
    /// The patch as a standalone `P x P x C` cube.
    pub fn to_cube(&self) -> HsiCube {
        let values = self.values.iter().map(|&v| v as f32).collect();
        HsiCube::new(self.size, self.size, self.bands, values).expect("patch extents are positive")
    }

    pub fn center_spectrum(&self) -> &[f64] {
        let h = self.size / 2;
        let i = (h * self.size + h) * self.bands;
        &self.values[i..i + self.bands]
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`).
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - m) as usize
    }
}

/// Per-band min-max scaling to `[0, 1]`. Constant bands map to 0.
pub fn normalize(cube: &HsiCube) -> Result<HsiCube> {
    if let Some(i) = cube.values.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite cube value at flat index {i}")));
    }
    let c = cube.bands;
    let mut range = vec![(f64::INFINITY, f64::NEG_INFINITY); c];
    for px in cube.values.chunks(c) {
        for (b, &v) in px.iter().enumerate() {
            let v = v as f64;
            range[b].0 = range[b].0.min(v);
            range[b].1 = range[b].1.max(v);
        }
    }
    let mut out = cube.clone();
    for px in out.values.chunks_mut(c) {
        for (b, v) in px.iter_mut().enumerate() {
            let (lo, hi) = range[b];
            *v = if hi > lo {
                (((*v as f64) - lo) / (hi - lo)) as f32
            } else {
                0.0
            };
        }
    }
    out.band_range = Some(range);
    Ok(out)
}

/// Window of odd size `p` centered at (`row`, `col`), mirror-reflected at the
/// cube borders.
pub fn extract_patch(cube: &HsiCube, row: usize, col: usize, p: usize) -> Result<Patch> {
    if p % 2 == 0 {
        return Err(Error::invalid(format!("patch size must be odd, got {p}")));
    }
    if row >= cube.height || col >= cube.width {
        return Err(Error::invalid(format!(
            "center ({row}, {col}) outside {}x{} cube",
            cube.height, cube.width
        )));
    }
    let half = (p / 2) as isize;
    let c = cube.bands;
    let mut values = Vec::with_capacity(p * p * c);
    for dr in -half..=half {
        let r = reflect_index(row as isize + dr, cube.height);
        for dc in -half..=half {
            let cc = reflect_index(col as isize + dc, cube.width);
            values.extend(cube.spectrum(r, cc).iter().map(|&v| v as f64));
        }
    }
    Ok(Patch {
        center: (row, col),
        size: p,
        bands: c,
        values,
        label: 0,
    })
}

/// Patches at `coords` with their labels attached.
pub fn extract_patches(
    cube: &HsiCube,
    labels: &LabelMap,
    coords: &[(usize, usize)],
    p: usize,
) -> Result<Vec<Patch>> {
    coords
        .iter()
        .map(|&(r, c)| {
            let mut patch = extract_patch(cube, r, c, p)?;
            patch.label = labels.get(r, c);
            Ok(patch)
        })
        .collect()
}
