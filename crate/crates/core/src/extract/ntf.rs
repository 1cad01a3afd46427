//! Nonnegative tensor factorization of a bar-synchronous song tensor.
//!
//! The song tensor `V[bar, frame, bin]` is modelled as a mixture of loops.
//! Loop `l` plays in bar `k` with activation `A[l, k]`; its spectrogram is a
//! recipe-weighted sum of rank-one templates,
//!
//! ```text
//! Y_l[t, f] = sum_j C[l, j] H[j, t] W[j, f]
//! V^[k, t, f] = sum_l A[l, k] Y_l[t, f]
//! ```
//!
//! with sound templates `W`, rhythm templates `H` and recipes `C`. Factors are
//! fitted by multiplicative updates on the generalized KL divergence, one
//! factor at a time, which never increases the objective.

use ndarray::{Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::SongTensor;
use crate::error::{Error, Result};

pub const DEFAULT_ITERATIONS: usize = 200;
const MAX_DEFAULT_RANK: usize = 8;

/// Default number of loop templates for a song with `bars` bars.
pub fn default_rank(bars: usize) -> usize {
    (bars / 2).clamp(1, MAX_DEFAULT_RANK)
}

/// Activation of every loop in every bar, loops × bars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopLayout {
    pub activations: Array2<f64>,
}

impl LoopLayout {
    pub fn loops(&self) -> usize {
        self.activations.nrows()
    }

    pub fn bars(&self) -> usize {
        self.activations.ncols()
    }

    pub fn row_total(&self, l: usize) -> f64 {
        self.activations.row(l).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NtfModel {
    /// R × mel bins, each row sums to one.
    pub sound_templates: Array2<f64>,
    /// R × frames per bar, each row peaks at one.
    pub rhythm_templates: Array2<f64>,
    /// loops × R mixing weights.
    pub recipes: Array2<f64>,
    /// Rows rescaled to peak at one; the scale lives in `recipes`.
    pub layout: LoopLayout,
    /// KL divergence at initialization and after every iteration.
    pub objective_history: Vec<f64>,
}

impl NtfModel {
    pub fn rank(&self) -> usize {
        self.recipes.nrows()
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().unwrap_or(&0.0)
    }

    /// Component weights per bar: `P[j, k] = sum_l C[l, j] A[l, k]`.
    fn bar_weights(&self) -> Array2<f64> {
        self.recipes.t().dot(&self.layout.activations)
    }

    /// Full reconstruction `V^`.
    pub fn reconstruct(&self) -> Array3<f64> {
        model_tensor(
            &self.bar_weights(),
            &self.rhythm_templates,
            &self.sound_templates,
        )
    }

    /// Spectrogram of one loop, frames per bar × mel bins.
    pub fn loop_spectrogram(&self, loop_index: usize) -> Result<Array2<f64>> {
        if loop_index >= self.rank() {
            return Err(Error::invalid(format!(
                "loop index {loop_index} out of range for {} loops",
                self.rank()
            )));
        }
        let recipe = self.recipes.row(loop_index);
        let weighted = &self.rhythm_templates * &recipe.insert_axis(Axis(1));
        Ok(weighted.t().dot(&self.sound_templates))
    }

    /// Layout scaled by each loop's spectral mass, `sum_{t,m} Y_l[t, m] g[m]`
    /// with per-bin gains `g`, so activations of different loops compare
    /// within a bar.
    pub fn weighted_layout(&self, bin_gains: &[f64]) -> Result<LoopLayout> {
        if bin_gains.len() != self.sound_templates.ncols() {
            return Err(Error::invalid(format!(
                "{} gains for {} mel bins",
                bin_gains.len(),
                self.sound_templates.ncols()
            )));
        }
        let gains = ndarray::ArrayView1::from(bin_gains);
        let mass = self.rhythm_templates.sum_axis(Axis(1)) * self.sound_templates.dot(&gains);
        let energy = self.recipes.dot(&mass);
        let mut activations = self.layout.activations.clone();
        for (mut row, &e) in activations.rows_mut().into_iter().zip(energy.iter()) {
            row.mapv_inplace(|a| a * e);
        }
        Ok(LoopLayout { activations })
    }
}

/// Relative Frobenius reconstruction error; zero when both tensors are zero.
pub fn relative_error(target: &Array3<f64>, approx: &Array3<f64>) -> f64 {
    let norm: f64 = target.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: f64 = target
        .iter()
        .zip(approx.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

fn model_tensor(p: &Array2<f64>, h: &Array2<f64>, w: &Array2<f64>) -> Array3<f64> {
    let (rank, bars) = p.dim();
    let (frames, bins) = (h.ncols(), w.ncols());
    let mut out = Array3::zeros((bars, frames, bins));
    for k in 0..bars {
        // H^T diag(P[:, k]) W
        let mut scaled = w.clone();
        for j in 0..rank {
            scaled.row_mut(j).mapv_inplace(|v| v * p[[j, k]]);
        }
        out.index_axis_mut(Axis(0), k).assign(&h.t().dot(&scaled));
    }
    out
}

/// Generalized KL divergence `sum V ln(V / V^) - V + V^`, with `0 ln 0 = 0`.
pub fn kl_divergence(target: &Array3<f64>, approx: &Array3<f64>) -> f64 {
    target
        .iter()
        .zip(approx.iter())
        .map(|(&v, &a)| {
            if v > 0.0 {
                v * (v / a.max(f64::MIN_POSITIVE)).ln() - v + a
            } else {
                a
            }
        })
        .sum()
}

fn ratio(target: &Array3<f64>, approx: &Array3<f64>) -> Array3<f64> {
    let mut q = target.clone();
    q.zip_mut_with(approx, |v, &a| {
        *v = if *v > 0.0 { *v / a.max(f64::MIN_POSITIVE) } else { 0.0 };
    });
    q
}

// theta <- theta * num / den, keeping theta where the denominator vanishes.
fn apply_update(theta: &mut Array2<f64>, num: &Array2<f64>, den: &Array2<f64>) {
    ndarray::Zip::from(theta)
        .and(num)
        .and(den)
        .for_each(|t, &n, &d| {
            if d > 0.0 {
                *t *= n / d;
            }
        });
}

struct Factors {
    w: Array2<f64>,
    h: Array2<f64>,
    c: Array2<f64>,
    a: Array2<f64>,
}

impl Factors {
    fn bar_weights(&self) -> Array2<f64> {
        self.c.t().dot(&self.a)
    }

    fn model(&self) -> Array3<f64> {
        model_tensor(&self.bar_weights(), &self.h, &self.w)
    }

    /// `G[j, k] = sum_{t,f} Q[k,t,f] H[j,t] W[j,f]`
    fn projections(&self, q: &Array3<f64>) -> Array2<f64> {
        let rank = self.w.nrows();
        let bars = q.dim().0;
        let mut g = Array2::zeros((rank, bars));
        for k in 0..bars {
            let qw = q.index_axis(Axis(0), k).dot(&self.w.t()); // T × R
            for j in 0..rank {
                g[[j, k]] = self.h.row(j).dot(&qw.column(j));
            }
        }
        g
    }

    fn update_sound(&mut self, v: &Array3<f64>) {
        let q = ratio(v, &self.model());
        let p = self.bar_weights();
        let (rank, bins) = self.w.dim();
        let mut num = Array2::zeros((rank, bins));
        for k in 0..q.dim().0 {
            let hq = self.h.dot(&q.index_axis(Axis(0), k)); // R × F
            for j in 0..rank {
                num.row_mut(j).scaled_add(p[[j, k]], &hq.row(j));
            }
        }
        let h_sum = self.h.sum_axis(Axis(1));
        let p_sum = p.sum_axis(Axis(1));
        let den = Array2::from_shape_fn((rank, bins), |(j, _)| p_sum[j] * h_sum[j]);
        apply_update(&mut self.w, &num, &den);
    }

    fn update_rhythm(&mut self, v: &Array3<f64>) {
        let q = ratio(v, &self.model());
        let p = self.bar_weights();
        let (rank, frames) = self.h.dim();
        let mut num = Array2::zeros((rank, frames));
        for k in 0..q.dim().0 {
            let qw = q.index_axis(Axis(0), k).dot(&self.w.t()); // T × R
            for j in 0..rank {
                num.row_mut(j).scaled_add(p[[j, k]], &qw.column(j));
            }
        }
        let w_sum = self.w.sum_axis(Axis(1));
        let p_sum = p.sum_axis(Axis(1));
        let den = Array2::from_shape_fn((rank, frames), |(j, _)| p_sum[j] * w_sum[j]);
        apply_update(&mut self.h, &num, &den);
    }

    fn template_mass(&self) -> ndarray::Array1<f64> {
        self.h.sum_axis(Axis(1)) * self.w.sum_axis(Axis(1))
    }

    fn update_recipes(&mut self, v: &Array3<f64>) {
        let q = ratio(v, &self.model());
        let g = self.projections(&q);
        let num = self.a.dot(&g.t()); // L × R
        let a_sum = self.a.sum_axis(Axis(1));
        let mass = self.template_mass();
        let den = Array2::from_shape_fn(self.c.dim(), |(l, j)| a_sum[l] * mass[j]);
        apply_update(&mut self.c, &num, &den);
    }

    fn update_layout(&mut self, v: &Array3<f64>) {
        let q = ratio(v, &self.model());
        let g = self.projections(&q);
        let num = self.c.dot(&g); // L × K
        let cm = self.c.dot(&self.template_mass()); // L
        let den = Array2::from_shape_fn(self.a.dim(), |(l, _)| cm[l]);
        apply_update(&mut self.a, &num, &den);
    }

    /// Moves all scale into the recipes: sound rows sum to 1, rhythm rows and
    /// layout rows peak at 1. Leaves the reconstruction unchanged.
    fn normalize(&mut self) {
        for j in 0..self.w.nrows() {
            let ws = self.w.row(j).sum();
            let hs = self.h.row(j).fold(0.0f64, |m, &x| m.max(x));
            if ws > 0.0 && hs > 0.0 {
                self.w.row_mut(j).mapv_inplace(|x| x / ws);
                self.h.row_mut(j).mapv_inplace(|x| x / hs);
                self.c.column_mut(j).mapv_inplace(|x| x * ws * hs);
            }
        }
        for l in 0..self.a.nrows() {
            let peak = self.a.row(l).fold(0.0f64, |m, &x| m.max(x));
            if peak > 0.0 {
                self.a.row_mut(l).mapv_inplace(|x| x / peak);
                self.c.row_mut(l).mapv_inplace(|x| x * peak);
            }
        }
    }
}

/// Fits `rank` loops to the song tensor with `iterations` rounds of
/// multiplicative updates. Factors start uniform in (0, 1] from `seed`.
pub fn ntf_factorize(tensor: &SongTensor, rank: usize, iterations: usize, seed: u64) -> Result<NtfModel> {
    if rank < 1 {
        return Err(Error::invalid("rank must be at least 1"));
    }
    let v = &tensor.values;
    if v.iter().any(|x| x.is_nan()) {
        return Err(Error::invalid("tensor contains NaN"));
    }
    let (bars, frames, bins) = v.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut init = |rows: usize, cols: usize| {
        Array2::from_shape_simple_fn((rows, cols), || 1.0 - rng.gen::<f64>())
    };
    let mut f = Factors {
        w: init(rank, bins),
        h: init(rank, frames),
        c: init(rank, rank),
        a: init(rank, bars),
    };

    let mut history = Vec::with_capacity(iterations + 1);
    history.push(kl_divergence(v, &f.model()));
    for _ in 0..iterations {
        f.update_sound(v);
        f.update_rhythm(v);
        f.update_recipes(v);
        f.update_layout(v);
        history.push(kl_divergence(v, &f.model()));
    }
    f.normalize();
    Ok(NtfModel {
        sound_templates: f.w,
        rhythm_templates: f.h,
        recipes: f.c,
        layout: LoopLayout { activations: f.a },
        objective_history: history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rank_one(bars: usize, frames: usize, bins: usize, seed: u64) -> (SongTensor, Array2<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = (0..bars).map(|_| 0.2 + rng.gen::<f64>()).collect();
        let h: Vec<f64> = (0..frames).map(|_| 0.1 + rng.gen::<f64>()).collect();
        let w: Vec<f64> = (0..bins).map(|_| 0.1 + rng.gen::<f64>()).collect();
        let v = Array3::from_shape_fn((bars, frames, bins), |(k, t, f)| a[k] * h[t] * w[f]);
        let best = a
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .unwrap()
            .0;
        let bar = v.index_axis(Axis(0), best).to_owned();
        (SongTensor::new(v).unwrap(), bar, a)
    }

    #[test]
    fn recovers_rank_one_tensor() {
        let (t, _, _) = rank_one(8, 16, 12, 3);
        let model = ntf_factorize(&t, 1, 200, 11).unwrap();
        assert!(relative_error(&t.values, &model.reconstruct()) < 1e-3);
    }

    #[test]
    fn rank_one_loop_matches_loudest_bar() {
        let (t, bar, _) = rank_one(6, 10, 8, 5);
        let model = ntf_factorize(&t, 1, 200, 1).unwrap();
        let y = model.loop_spectrogram(0).unwrap();
        let norm = bar.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = (&y - &bar).iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-3);
    }

    #[test]
    fn zero_tensor_converges_to_zero_error() {
        let t = SongTensor::new(Array3::zeros((4, 8, 6))).unwrap();
        let model = ntf_factorize(&t, 2, 5, 0).unwrap();
        assert_eq!(model.final_objective(), 0.0);
        assert_eq!(relative_error(&t.values, &model.reconstruct()), 0.0);
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let v = Array3::from_shape_simple_fn((5, 8, 7), || rng.gen::<f64>());
        let model = ntf_factorize(&SongTensor::new(v).unwrap(), 3, 60, 4).unwrap();
        for w in model.objective_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-9 * w[0].abs().max(1.0));
        }
    }

    #[test]
    fn factors_stay_nonnegative_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = Array3::from_shape_simple_fn((4, 6, 5), || rng.gen::<f64>());
        let t = SongTensor::new(v).unwrap();
        let a = ntf_factorize(&t, 2, 30, 8).unwrap();
        let b = ntf_factorize(&t, 2, 30, 8).unwrap();
        assert_eq!(a, b);
        for m in [&a.sound_templates, &a.rhythm_templates, &a.recipes, &a.layout.activations] {
            assert!(m.iter().all(|&x| x >= 0.0));
        }
    }

    #[test]
    fn invalid_arguments_are_rejected() {
        let t = SongTensor::new(Array3::zeros((4, 2, 2))).unwrap();
        assert!(ntf_factorize(&t, 0, 1, 0).is_err());
        assert!(matches!(
            SongTensor::new(Array3::from_elem((1, 1, 1), f64::NAN)),
            Err(Error::InvalidInput(_))
        ));
        let model = ntf_factorize(&t, 2, 1, 0).unwrap();
        assert!(model.loop_spectrogram(2).is_err());
    }

    #[test]
    fn default_rank_caps_at_eight() {
        assert_eq!(default_rank(4), 2);
        assert_eq!(default_rank(16), 8);
        assert_eq!(default_rank(100), 8);
        assert_eq!(default_rank(1), 1);
    }

    #[test]
    fn weighted_loop_sum_rebuilds_each_bar() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let v = Array3::from_shape_simple_fn((4, 6, 5), || rng.gen::<f64>());
        let model = ntf_factorize(&SongTensor::new(v.clone()).unwrap(), 3, 40, 2).unwrap();
        let full = model.reconstruct();
        let mut summed = Array3::<f64>::zeros(full.dim());
        for l in 0..3 {
            let y = model.loop_spectrogram(l).unwrap();
            for k in 0..4 {
                summed
                    .index_axis_mut(Axis(0), k)
                    .scaled_add(model.layout.activations[[l, k]], &y);
            }
        }
        assert!(relative_error(&full, &summed) < 1e-12);
        // what the loops leave unexplained is exactly the fit residual
        assert!((relative_error(&v, &summed) - relative_error(&v, &full)).abs() < 1e-12);
        assert!((kl_divergence(&v, &summed) - model.final_objective()).abs() < 1e-9 * model.final_objective().max(1.0));
    }

    #[test]
    fn zero_templates_give_zero_spectrogram() {
        let mut model = ntf_factorize(&SongTensor::new(Array3::from_elem((4, 3, 2), 1.0)).unwrap(), 2, 3, 0).unwrap();
        model.sound_templates.fill(0.0);
        assert!(model.loop_spectrogram(1).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn weighted_layout_scales_rows_by_loop_mass() {
        let (t, _, _) = rank_one(4, 5, 3, 8);
        let model = ntf_factorize(&t, 1, 50, 0).unwrap();
        let gains = [1.0, 2.0, 0.5];
        let weighted = model.weighted_layout(&gains).unwrap();
        let y = model.loop_spectrogram(0).unwrap();
        let mass: f64 = y
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(&gains).map(|(a, g)| a * g).sum::<f64>())
            .sum();
        for k in 0..4 {
            let expected = model.layout.activations[[0, k]] * mass;
            assert!((weighted.activations[[0, k]] - expected).abs() < 1e-9 * expected);
        }
        assert!(model.weighted_layout(&[1.0]).is_err());
    }
}
