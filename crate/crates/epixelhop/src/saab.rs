//! Single-unit operations: neighborhood construction, the channel-wise Saab
//! transform (constant kernel plus PCA of patch-mean-removed residuals), and
//! max-pooling.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::linalg::{constant_complement_basis, fix_sign, sym_eigen};

/// Max-pooling geometry applied after a hop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolConfig {
    pub window: usize,
    pub stride: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            window: 3,
            stride: 2,
        }
    }
}

/// Geometry and energy policy for one hop.
#[derive(Debug, Clone, PartialEq)]
pub struct HopConfig {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    /// Zero padding added on every side.
    pub padding: usize,
    pub pool_after: Option<PoolConfig>,
    /// TH1: channels at or above this energy are forwarded to the next hop.
    pub energy_th_intermediate: f64,
    /// TH2: channels below this energy are discarded outright.
    pub energy_th_discard: f64,
    /// Cap on emitted channels; the exact count in fixed-K selection.
    pub max_channels: Option<usize>,
}

impl HopConfig {
    pub fn new(window: usize, padding: usize, pool_after: Option<PoolConfig>) -> Self {
        HopConfig {
            window: (window, window),
            stride: (1, 1),
            padding,
            pool_after,
            energy_th_intermediate: 1e-12,
            energy_th_discard: 1e-12,
            max_channels: None,
        }
    }

    pub fn patch_len(&self) -> usize {
        self.window.0 * self.window.1
    }

    /// Output side for an S x S input, or an error when the padded map is
    /// smaller than the window.
    pub fn out_side(&self, side: usize) -> Result<usize> {
        let padded = side + 2 * self.padding;
        if padded < self.window.0 || padded < self.window.1 {
            return Err(Error::WindowTooLarge {
                window: self.window.0.max(self.window.1),
                padded,
            });
        }
        Ok((padded - self.window.0) / self.stride.0 + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let th1 = self.energy_th_intermediate;
        let th2 = self.energy_th_discard;
        if !(th1 > 0.0 && th1 <= 1.0) {
            return Err(Error::Config(format!("th1 must lie in (0,1], got {th1}")));
        }
        if !(th2 > 0.0 && th2 <= th1) {
            return Err(Error::Config(format!(
                "th2 ({th2}) must lie in (0, th1 = {th1}]"
            )));
        }
        Ok(())
    }
}

/// Visit every window of the zero-padded map in row-major output order,
/// handing the patch values (window rows concatenated) to `f`.
pub(crate) fn for_each_patch(map: &Array2<f64>, cfg: &HopConfig, mut f: impl FnMut(&[f64])) {
    let side = map.nrows();
    let (wh, ww) = cfg.window;
    let (sh, sw) = cfg.stride;
    let pad = cfg.padding as isize;
    let out_h = (side + 2 * cfg.padding - wh) / sh + 1;
    let out_w = (side + 2 * cfg.padding - ww) / sw + 1;
    let mut buf = vec![0.0f64; wh * ww];
    for or in 0..out_h {
        for oc in 0..out_w {
            let r0 = (or * sh) as isize - pad;
            let c0 = (oc * sw) as isize - pad;
            let mut idx = 0;
            for dr in 0..wh {
                let r = r0 + dr as isize;
                for dc in 0..ww {
                    let c = c0 + dc as isize;
                    buf[idx] = if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
                        0.0
                    } else {
                        map[[r as usize, c as usize]]
                    };
                    idx += 1;
                }
            }
            f(&buf);
        }
    }
}

/// Materialize all neighborhoods of a single-channel map as an
/// (S' * S') x N matrix, patches in row-major output order.
pub fn extract_neighborhoods(map: &Array2<f64>, cfg: &HopConfig) -> Result<Array2<f64>> {
    let out = cfg.out_side(map.nrows())?;
    let n = cfg.patch_len();
    let mut mat = Array2::<f64>::zeros((out * out, n));
    let mut row = 0;
    for_each_patch(map, cfg, |patch| {
        mat.row_mut(row)
            .as_slice_mut()
            .unwrap()
            .copy_from_slice(patch);
        row += 1;
    });
    Ok(mat)
}

/// Whether a fitted channel is forwarded, emitted only, or dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelRole {
    Intermediate,
    Leaf,
    Discarded,
}

/// One fitted transform node: the constant kernel plus the PCA kernels of the
/// patch-mean-removed residuals, with the energy bookkeeping that drives
/// channel routing.
#[derive(Debug, Clone, PartialEq)]
pub struct SaabNode {
    /// Constant kernel, (1/sqrt(N)) * 1.
    pub dc_kernel: Array1<f64>,
    /// Residual PCA kernels as rows, descending eigenvalue order.
    pub ac_kernels: Array2<f64>,
    /// Residual covariance eigenvalues matching `ac_kernels`.
    pub eigenvalues: Array1<f64>,
    /// Energy of the input channel this node transforms.
    pub parent_energy: f64,
    /// Energy of each child channel, DC first, then AC channels.
    pub child_energies: Array1<f64>,
    /// Role of each child channel, same order as `child_energies`.
    pub child_roles: Vec<ChannelRole>,
}

impl SaabNode {
    pub fn patch_len(&self) -> usize {
        self.dc_kernel.len()
    }

    pub fn child_count(&self) -> usize {
        1 + self.ac_kernels.nrows()
    }

    /// Kernel for child `idx` (0 = DC).
    pub fn kernel(&self, idx: usize) -> ndarray::ArrayView1<'_, f64> {
        if idx == 0 {
            self.dc_kernel.view()
        } else {
            self.ac_kernels.row(idx - 1)
        }
    }

    #[inline]
    pub(crate) fn project_child(&self, patch: &[f64], idx: usize) -> f64 {
        let k = self.kernel(idx);
        let ks = k.as_slice().unwrap();
        patch.iter().zip(ks).map(|(a, b)| a * b).sum()
    }
}

/// Streaming first-pass moments for a Saab fit: residual-coordinate and DC
/// sums. Chunks are merged in a fixed order, so fits are thread-count
/// independent.
#[derive(Debug, Clone)]
pub(crate) struct SaabPass1 {
    pub rho_sum: Array1<f64>,
    pub dc_sum: f64,
    pub count: usize,
}

impl SaabPass1 {
    pub fn new(n: usize) -> Self {
        SaabPass1 {
            rho_sum: Array1::zeros(n - 1),
            dc_sum: 0.0,
            count: 0,
        }
    }

    pub fn add(&mut self, patch: &[f64], basis: &Array2<f64>, inv_sqrt_n: f64) {
        let m = patch.len();
        let mut dc = 0.0;
        for &v in patch {
            dc += v;
        }
        self.dc_sum += dc * inv_sqrt_n;
        for r in 0..m - 1 {
            let row = basis.row(r);
            let rs = row.as_slice().unwrap();
            let mut acc = 0.0;
            for k in 0..m {
                acc += rs[k] * patch[k];
            }
            self.rho_sum[r] += acc;
        }
        self.count += 1;
    }

    pub fn merge(&mut self, other: &SaabPass1) {
        self.rho_sum += &other.rho_sum;
        self.dc_sum += other.dc_sum;
        self.count += other.count;
    }
}

/// Second pass: centered residual covariance and DC variance.
#[derive(Debug, Clone)]
pub(crate) struct SaabPass2 {
    pub cov_sum: Array2<f64>,
    pub dc_sq_sum: f64,
}

impl SaabPass2 {
    pub fn new(n: usize) -> Self {
        SaabPass2 {
            cov_sum: Array2::zeros((n - 1, n - 1)),
            dc_sq_sum: 0.0,
        }
    }

    #[allow(clippy::needless_range_loop)]
    pub fn add(
        &mut self,
        patch: &[f64],
        basis: &Array2<f64>,
        inv_sqrt_n: f64,
        rho_mean: &[f64],
        dc_mean: f64,
        scratch: &mut [f64],
    ) {
        let m = patch.len();
        let mut dc = 0.0;
        for &v in patch {
            dc += v;
        }
        let dd = dc * inv_sqrt_n - dc_mean;
        self.dc_sq_sum += dd * dd;
        for (r, slot) in scratch.iter_mut().enumerate().take(m - 1) {
            let row = basis.row(r);
            let rs = row.as_slice().unwrap();
            let mut acc = 0.0;
            for k in 0..m {
                acc += rs[k] * patch[k];
            }
            *slot = acc - rho_mean[r];
        }
        for i in 0..m - 1 {
            let si = scratch[i];
            for j in i..m - 1 {
                self.cov_sum[[i, j]] += si * scratch[j];
            }
        }
    }

    pub fn merge(&mut self, other: &SaabPass2) {
        self.cov_sum += &other.cov_sum;
        self.dc_sq_sum += other.dc_sq_sum;
    }
}

/// Assemble a node from completed two-pass moments.
pub(crate) fn node_from_moments(
    pass1: &SaabPass1,
    pass2: &SaabPass2,
    basis: &Array2<f64>,
    n: usize,
    max_kernels: usize,
    parent_energy: f64,
) -> SaabNode {
    let m = pass1.count as f64;
    let mut cov = pass2.cov_sum.clone();
    for i in 0..n - 1 {
        for j in 0..i {
            cov[[i, j]] = cov[[j, i]];
        }
    }
    cov.mapv_inplace(|v| v / m);
    let dc_var = pass2.dc_sq_sum / m;

    let eig = sym_eigen(&cov);
    let keep = max_kernels.min(n - 1);

    // Map eigenvectors from complement coordinates back to patch space.
    let mut ac = Array2::<f64>::zeros((keep, n));
    for r in 0..keep {
        for k in 0..n {
            let mut acc = 0.0;
            for c in 0..n - 1 {
                acc += eig.vectors[[r, c]] * basis[[c, k]];
            }
            ac[[r, k]] = acc;
        }
        fix_sign(ac.row_mut(r).as_slice_mut().unwrap());
    }

    let total: f64 = dc_var + eig.values.sum();
    let mut energies = Array1::<f64>::zeros(keep + 1);
    if total > 1e-300 {
        energies[0] = parent_energy * dc_var / total;
        for j in 0..keep {
            energies[j + 1] = parent_energy * eig.values[j] / total;
        }
    } else {
        energies[0] = parent_energy;
    }

    SaabNode {
        dc_kernel: Array1::from_elem(n, 1.0 / (n as f64).sqrt()),
        ac_kernels: ac,
        eigenvalues: eig.values.slice(ndarray::s![..keep]).to_owned(),
        parent_energy,
        child_energies: energies,
        child_roles: vec![ChannelRole::Leaf; keep + 1],
    }
}

/// Fit one Saab node from a materialized M x N patch matrix with up to
/// `max_kernels` AC kernels, parent energy 1.
pub fn fit_saab(patches: &Array2<f64>, max_kernels: usize) -> Result<SaabNode> {
    let (m, n) = patches.dim();
    if m < n {
        return Err(Error::InsufficientSamples { got: m, need: n });
    }
    let basis = constant_complement_basis(n);
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();

    let mut p1 = SaabPass1::new(n);
    for row in patches.rows() {
        p1.add(row.as_slice().unwrap(), &basis, inv_sqrt_n);
    }
    let rho_mean: Vec<f64> = p1.rho_sum.iter().map(|v| v / m as f64).collect();
    let dc_mean = p1.dc_sum / m as f64;

    let mut p2 = SaabPass2::new(n);
    let mut scratch = vec![0.0; n - 1];
    for row in patches.rows() {
        p2.add(
            row.as_slice().unwrap(),
            &basis,
            inv_sqrt_n,
            &rho_mean,
            dc_mean,
            &mut scratch,
        );
    }
    Ok(node_from_moments(&p1, &p2, &basis, n, max_kernels, 1.0))
}

/// Project patches onto all of a node's kernels: per row, 1 DC coefficient
/// followed by the AC coefficients.
pub fn apply_saab(patches: &Array2<f64>, node: &SaabNode) -> Result<Array2<f64>> {
    let (m, n) = patches.dim();
    if n != node.patch_len() {
        return Err(Error::DimensionMismatch {
            context: "apply_saab patch length".into(),
            expected: node.patch_len(),
            got: n,
        });
    }
    let k = node.child_count();
    let mut out = Array2::<f64>::zeros((m, k));
    for (i, row) in patches.rows().into_iter().enumerate() {
        let rs = row.as_slice().unwrap();
        for c in 0..k {
            out[[i, c]] = node.project_child(rs, c);
        }
    }
    Ok(out)
}

/// Per-channel max pooling. 32x32 -> 15x15 and 15x15 -> 7x7 under the
/// default 3x3 / stride-2 geometry.
pub fn max_pool(map: &Array3<f64>, pool: PoolConfig) -> Result<Array3<f64>> {
    let (s, s2, k) = map.dim();
    debug_assert_eq!(s, s2);
    if s < pool.window {
        return Err(Error::WindowTooLarge {
            window: pool.window,
            padded: s,
        });
    }
    let out = (s - pool.window) / pool.stride + 1;
    let mut pooled = Array3::<f64>::zeros((out, out, k));
    for or in 0..out {
        for oc in 0..out {
            for ch in 0..k {
                let mut best = f64::NEG_INFINITY;
                for dr in 0..pool.window {
                    for dc in 0..pool.window {
                        let v = map[[or * pool.stride + dr, oc * pool.stride + dc, ch]];
                        if v > best {
                            best = v;
                        }
                    }
                }
                pooled[[or, oc, ch]] = best;
            }
        }
    }
    Ok(pooled)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn random_map(side: usize, seed: u64) -> Array2<f64> {
        let mut rng = DetRng::new(seed, 0);
        Array2::from_shape_fn((side, side), |_| rng.next_f64() - 0.5)
    }

    #[test]
    fn neighborhoods_padded_32() {
        let cfg = HopConfig::new(5, 2, None);
        let map = random_map(32, 1);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        assert_eq!(patches.dim(), (32 * 32, 25));
    }

    #[test]
    fn neighborhoods_7_to_5() {
        let cfg = HopConfig::new(3, 0, None);
        let map = random_map(7, 2);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        assert_eq!(patches.dim(), (5 * 5, 9));
    }

    #[test]
    fn neighborhood_single_constant_patch() {
        let cfg = HopConfig::new(3, 0, None);
        let map = Array2::from_elem((3, 3), 0.7);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        assert_eq!(patches.dim(), (1, 9));
        assert!(patches.iter().all(|&v| v == 0.7));
    }

    #[test]
    fn neighborhood_zero_padding_and_order() {
        // 3x3 map, 3x3 window, pad 1 -> 3x3 outputs; the top-left patch sees
        // zeros along its first row and column.
        let cfg = HopConfig::new(3, 1, None);
        let mut map = Array2::<f64>::zeros((3, 3));
        for r in 0..3 {
            for c in 0..3 {
                map[[r, c]] = (r * 3 + c) as f64 + 1.0;
            }
        }
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        assert_eq!(patches.dim(), (9, 9));
        let first = patches.row(0);
        assert_eq!(
            first.to_vec(),
            vec![0.0, 0.0, 0.0, 0.0, 1.0, 2.0, 0.0, 4.0, 5.0]
        );
    }

    #[test]
    fn window_too_large_rejected() {
        let cfg = HopConfig::new(5, 0, None);
        let map = random_map(3, 3);
        assert!(matches!(
            extract_neighborhoods(&map, &cfg),
            Err(Error::WindowTooLarge { .. })
        ));
    }

    #[test]
    fn fit_constant_patches() {
        // x = c * 1 with varying c: every eigenvalue is 0 and the DC
        // coefficient of a patch with value c is c * sqrt(N).
        let n = 9;
        let mut patches = Array2::<f64>::zeros((20, n));
        for (i, mut row) in patches.rows_mut().into_iter().enumerate() {
            row.fill(i as f64 * 0.1);
        }
        let node = fit_saab(&patches, n - 1).unwrap();
        assert!(node.eigenvalues.iter().all(|&l| l.abs() < 1e-12));
        let coeffs = apply_saab(&patches, &node).unwrap();
        for i in 0..20 {
            let c = i as f64 * 0.1;
            assert!((coeffs[[i, 0]] - c * 3.0).abs() < 1e-12);
            for j in 1..n {
                assert!(coeffs[[i, j]].abs() < 1e-9);
            }
        }
        // All energy lands on the DC channel.
        assert!((node.child_energies[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fit_rank_one_ac_structure() {
        // x = c*1 + a*u with u unit and orthogonal to 1: the residual
        // covariance is rank one, so exactly one eigenvalue is nonzero and
        // the leading kernel is u up to sign.
        let n = 4;
        let u = [0.5, -0.5, 0.5, -0.5];
        let mut rng = DetRng::new(5, 0);
        let mut patches = Array2::<f64>::zeros((64, n));
        for mut row in patches.rows_mut() {
            let c = rng.next_f64() * 2.0 - 1.0;
            let a = rng.next_f64() * 2.0 - 1.0;
            for k in 0..n {
                row[k] = c + a * u[k];
            }
        }
        let node = fit_saab(&patches, n - 1).unwrap();
        assert!(node.eigenvalues[0] > 1e-6);
        for j in 1..n - 1 {
            assert!(node.eigenvalues[j].abs() < 1e-12, "extra eigenvalue");
        }
        let lead = node.ac_kernels.row(0);
        let dot: f64 = (0..n).map(|k| lead[k] * u[k]).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-9, "kernel not aligned with u");
    }

    #[test]
    fn kernels_orthonormal_and_dc_orthogonal() {
        let cfg = HopConfig::new(5, 2, None);
        let map = random_map(32, 7);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        let node = fit_saab(&patches, 24).unwrap();
        let n = node.patch_len();
        for i in 0..node.ac_kernels.nrows() {
            let ri = node.ac_kernels.row(i);
            let dc_dot: f64 = (0..n).map(|k| ri[k] * node.dc_kernel[k]).sum();
            assert!(dc_dot.abs() < 1e-6, "AC kernel {i} not orthogonal to DC");
            for j in 0..node.ac_kernels.nrows() {
                let rj = node.ac_kernels.row(j);
                let dot: f64 = (0..n).map(|k| ri[k] * rj[k]).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn full_kernel_parseval() {
        // With all N-1 AC kernels kept, {dc, ac...} is an orthonormal basis,
        // so coefficient energy equals patch energy.
        let cfg = HopConfig::new(3, 0, None);
        let map = random_map(12, 11);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        let node = fit_saab(&patches, 8).unwrap();
        let coeffs = apply_saab(&patches, &node).unwrap();
        for (prow, crow) in patches.rows().into_iter().zip(coeffs.rows()) {
            let px: f64 = prow.iter().map(|v| v * v).sum();
            let cx: f64 = crow.iter().map(|v| v * v).sum();
            assert!((px - cx).abs() <= 1e-6 * px.max(1e-12), "{px} vs {cx}");
        }
    }

    #[test]
    fn apply_matches_naive_dot_products() {
        let cfg = HopConfig::new(3, 0, None);
        let map = random_map(10, 13);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        let node = fit_saab(&patches, 5).unwrap();
        let coeffs = apply_saab(&patches, &node).unwrap();
        for (i, prow) in patches.rows().into_iter().enumerate() {
            for c in 0..node.child_count() {
                let kern = node.kernel(c);
                let want: f64 = prow.iter().zip(kern.iter()).map(|(a, b)| a * b).sum();
                assert!((coeffs[[i, c]] - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn apply_dc_kernel_patch() {
        let cfg = HopConfig::new(3, 0, None);
        let map = random_map(10, 17);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        let node = fit_saab(&patches, 8).unwrap();
        let mut probe = Array2::<f64>::zeros((1, 9));
        probe.row_mut(0).assign(&node.dc_kernel);
        let coeffs = apply_saab(&probe, &node).unwrap();
        assert!((coeffs[[0, 0]] - 1.0).abs() < 1e-9);
        for j in 1..node.child_count() {
            assert!(coeffs[[0, j]].abs() < 1e-9);
        }
    }

    #[test]
    fn apply_rejects_length_mismatch() {
        let cfg = HopConfig::new(3, 0, None);
        let map = random_map(10, 19);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        let node = fit_saab(&patches, 4).unwrap();
        let bad = Array2::<f64>::zeros((2, 25));
        assert!(matches!(
            apply_saab(&bad, &node),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn fit_rejects_underdetermined() {
        let patches = Array2::<f64>::zeros((5, 9));
        assert!(matches!(
            fit_saab(&patches, 8),
            Err(Error::InsufficientSamples { got: 5, need: 9 })
        ));
    }

    #[test]
    fn energies_monotone_and_bounded() {
        let cfg = HopConfig::new(5, 2, None);
        let map = random_map(32, 23);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        let node = fit_saab(&patches, 24).unwrap();
        for j in 2..node.child_energies.len() {
            assert!(node.child_energies[j - 1] >= node.child_energies[j] - 1e-15);
        }
        let sum: f64 = node.child_energies.sum();
        assert!(sum <= node.parent_energy + 1e-9);
    }

    #[test]
    fn pooling_shapes_and_constant() {
        let pool = PoolConfig::default();
        let m32 = Array3::from_elem((32, 32, 2), 0.3);
        let p = max_pool(&m32, pool).unwrap();
        assert_eq!(p.dim(), (15, 15, 2));
        assert!(p.iter().all(|&v| v == 0.3));
        let m15 = Array3::from_elem((15, 15, 1), 1.5);
        assert_eq!(max_pool(&m15, pool).unwrap().dim(), (7, 7, 1));
        let tiny = Array3::from_elem((2, 2, 1), 0.0);
        assert!(max_pool(&tiny, pool).is_err());
    }

    #[test]
    fn pooling_takes_window_max() {
        let pool = PoolConfig::default();
        let mut m = Array3::<f64>::zeros((5, 5, 1));
        m[[1, 1, 0]] = 2.0;
        m[[4, 4, 0]] = 3.0;
        let p = max_pool(&m, pool).unwrap();
        assert_eq!(p.dim(), (2, 2, 1));
        assert_eq!(p[[0, 0, 0]], 2.0);
        assert_eq!(p[[1, 1, 0]], 3.0);
    }

    #[test]
    fn fit_deterministic() {
        let cfg = HopConfig::new(5, 2, None);
        let map = random_map(32, 29);
        let patches = extract_neighborhoods(&map, &cfg).unwrap();
        let a = fit_saab(&patches, 24).unwrap();
        let b = fit_saab(&patches, 24).unwrap();
        assert_eq!(a.ac_kernels, b.ac_kernels);
        assert_eq!(a.eigenvalues, b.eigenvalues);
    }
}
