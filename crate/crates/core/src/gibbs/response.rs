//! A response matrix seen by the bilinear mean: the probit latents on the
//! categorical side, the real values on the other. Both are grouped into
//! attribute blocks with their own noise precision.

use crate::data::{ChoiceLayout, RelationalDataset};
use crate::latent::{ModelState, NoiseCov};
use crate::linalg;

pub struct Response<'a> {
    pub layout: ChoiceLayout,
    /// N × width, row-major.
    pub target: &'a [f64],
    /// N × attributes, `true` where the cell is missing.
    pub missing: &'a [bool],
    /// Row-major precision of each attribute block.
    pub precision: Vec<Vec<f64>>,
    pub n_rows: usize,
}

impl<'a> Response<'a> {
    pub fn categorical(state: &'a ModelState, ds: &'a RelationalDataset) -> Self {
        Response {
            layout: state.layout.clone(),
            target: &state.beta,
            missing: ds.cat_missing_mask(),
            precision: state.noise.iter().map(|s| s.precision().to_vec()).collect(),
            n_rows: state.n_rows,
        }
    }

    /// Categorical response built from parts, so the regression can be
    /// borrowed mutably next to it.
    pub fn categorical_parts(
        layout: &ChoiceLayout,
        beta: &'a [f64],
        noise: &[NoiseCov],
        ds: &'a RelationalDataset,
    ) -> Self {
        Response {
            layout: layout.clone(),
            target: beta,
            missing: ds.cat_missing_mask(),
            precision: noise.iter().map(|s| s.precision().to_vec()).collect(),
            n_rows: ds.n_rows(),
        }
    }

    pub fn real(ds: &'a RelationalDataset, sigma_y2: f64) -> Self {
        Response {
            layout: ChoiceLayout::scalar(ds.n_real()),
            target: ds.real_values(),
            missing: ds.real_missing_mask(),
            precision: vec![vec![1.0 / sigma_y2]; ds.n_real()],
            n_rows: ds.n_rows(),
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.layout.width()
    }

    #[inline]
    pub fn n_attributes(&self) -> usize {
        self.layout.n_attributes()
    }

    #[inline]
    pub fn observed(&self, i: usize, j: usize) -> bool {
        !self.missing[i * self.n_attributes() + j]
    }

    #[inline]
    pub fn target_row(&self, i: usize) -> &[f64] {
        let w = self.width();
        &self.target[i * w..(i + 1) * w]
    }

    /// `−½ Σ_j eᵀ Λ_j e` over the observed cells of row `i` with mean `mean`.
    pub fn row_loglik(&self, i: usize, mean: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let t = self.target_row(i);
        let mut s = 0.0;
        for j in 0..self.n_attributes() {
            if !self.observed(i, j) {
                continue;
            }
            let range = self.layout.range(j);
            scratch.clear();
            scratch.extend(range.clone().map(|f| t[f] - mean[f]));
            s += linalg::quad_form(&self.precision[j], range.len(), scratch);
        }
        -0.5 * s
    }
}
