//! Radial kernel evaluation and precomputed kernel tables.
//!
//! The nonlocal operator reduces under radial symmetry to a 1-D principal
//! value integral against
//!
//! ```text
//! J(r, ρ) = ρ^{N-1} ∫_{S^{N-1}} |r e₁ - ρ ω|^{-σ} dω,     σ = N + sp,
//! ```
//!
//! with the closed form `|r-ρ|^{-σ} + (r+ρ)^{-σ}` in dimension 1 and a
//! one-dimensional angular integral (evaluated adaptively) for `N >= 2`.
//! `J(r,ρ)/ρ^{N-1}` is symmetric in `(r,ρ)`, and near the diagonal
//! `J(r, r±t) ≈ c_loc · t^{-1-sp}` with a Beta-function constant.
//!
//! A [`KernelTable`] freezes, for one grid and one exponent σ:
//! node-pair kernel values outside the principal-value window, Gauss points
//! for the window-edge slivers, and clipped Gauss points with kernel values
//! for the inner `[0, r₁]` and outer `[r_max, ∞)` tail regions. Tables are
//! persistable; set `FPLE_CACHE_DIR` to enable the disk cache.

use crate::grid::RadialGrid;
use crate::par;
use crate::quad;
use sha2::{Digest, Sha256};
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

/// Number of dyadic blocks used for each tail region.
pub const TAIL_BLOCKS: usize = 20;
/// Gauss points per tail block.
pub const TAIL_PTS_PER_BLOCK: usize = 16;
/// Full grid segments on each side of the PV window that are integrated by
/// Gauss points instead of the trapezoid rule. The integrand varies like
/// `t^{-1-sp+...}` near the window, where trapezoid bias scales as
/// `(h/t)³`; Gauss handling of the nearest segments removes it.
pub const NEAR_SEGS: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("kernel exponent sigma = {0} must exceed the dimension N = {1}")]
    BadSigma(f64, u32),
    #[error("angular quadrature failed at (r, rho) = ({r}, {rho}): {detail}")]
    AngularQuadrature { r: f64, rho: f64, detail: String },
}

/// Pointwise kernel `J(r, ρ)` for exponent `sigma`, dimension `dim`.
/// `quad_tol` controls the adaptive angular integral (`N >= 2`).
pub fn kernel_value(dim: u32, sigma: f64, quad_tol: f64, r: f64, rho: f64) -> Result<f64, KernelError> {
    if rho == 0.0 {
        return Ok(0.0); // ρ^{N-1} weight; the N = 1 case is handled below
    }
    if dim == 1 {
        let near = (r - rho).abs();
        let far = r + rho;
        return Ok(near.powf(-sigma) + far.powf(-sigma));
    }
    if r == 0.0 {
        // |0 - ρω| = ρ on the whole sphere
        return Ok(quad::unit_sphere_area(dim) * rho.powf(dim as f64 - 1.0 - sigma));
    }
    let sub_area = quad::sub_sphere_area(dim);
    let npow = dim as f64 - 2.0;
    let diff2 = (r - rho) * (r - rho);
    let prod4 = 4.0 * r * rho;
    let integrand = move |theta: f64| {
        let s = (0.5 * theta).sin();
        let d2 = diff2 + prod4 * s * s; // stable |r e₁ - ρ ω|²
        let mut v = d2.powf(-0.5 * sigma);
        if npow != 0.0 {
            v *= theta.sin().powf(npow);
        }
        v
    };
    let angular = quad::adaptive(integrand, 0.0, std::f64::consts::PI, quad_tol).map_err(|e| {
        KernelError::AngularQuadrature {
            r,
            rho,
            detail: e.to_string(),
        }
    })?;
    Ok(rho.powf(dim as f64 - 1.0) * sub_area * angular)
}

/// Near-diagonal kernel constant: `J(r, r±t) ~ c_loc · t^{-1-sp}` with
/// `sp = σ - N`. Closed form `|S^{N-2}| · B((N-1)/2, (1+sp)/2) / 2`
/// (equal to 1 in dimension 1).
pub fn local_kernel_constant(dim: u32, sigma: f64) -> f64 {
    if dim == 1 {
        return 1.0;
    }
    let n = dim as f64;
    let sp = sigma - n;
    0.5 * quad::sub_sphere_area(dim) * quad::beta_fn(0.5 * (n - 1.0), 0.5 * (1.0 + sp))
}

/// One Gauss point of a window-edge sliver: the integration point lies in
/// grid segment `seg` at fraction `t`, with combined weight·kernel `wj`.
#[derive(Debug, Clone, Copy)]
pub struct EdgePoint {
    pub seg: u32,
    pub t: f64,
    pub wj: f64,
}

/// One Gauss point of a tail region: radius `rho`, combined weight·kernel
/// `wj` (zero when the point falls inside the row's PV window).
#[derive(Debug, Clone, Copy)]
pub struct TailPoint {
    pub rho: f64,
    pub wj: f64,
}

/// Precomputed kernel data for one `(grid, σ)` pair.
pub struct KernelTable {
    grid: Arc<RadialGrid>,
    sigma: f64,
    quad_tol: f64,
    c_loc: f64,
    /// Row-major `(m+1)²` kernel values; zero inside each row's PV window.
    entries: Vec<f64>,
    /// Per row: segments intersecting the PV window (inclusive range).
    blocked: Vec<(u32, u32)>,
    /// Per row: the wider Gauss zone (window segments plus [`NEAR_SEGS`]
    /// full segments each side) covered by `edge_pts` instead of the
    /// trapezoid rule.
    gauss_blocked: Vec<(u32, u32)>,
    /// Gauss points of the window-edge slivers and near-window segments,
    /// rows concatenated.
    edge_pts: Vec<EdgePoint>,
    edge_offsets: Vec<u32>,
    /// Inner tail points, `(m+1) × TAIL_BLOCKS·TAIL_PTS_PER_BLOCK`.
    inner_pts: Vec<TailPoint>,
    /// Outer tail points, same shape.
    outer_pts: Vec<TailPoint>,
}

impl KernelTable {
    pub fn grid(&self) -> &Arc<RadialGrid> {
        &self.grid
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Effective smoothness order `σ - N` (equals `sp` for the evolution
    /// operator, `2s'` for the maximal-function mode).
    pub fn order(&self) -> f64 {
        self.sigma - self.grid.dim() as f64
    }

    pub fn quad_tol(&self) -> f64 {
        self.quad_tol
    }

    pub fn local_constant(&self) -> f64 {
        self.c_loc
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.grid.nodes().len() + j]
    }

    pub fn blocked_segments(&self, i: usize) -> (usize, usize) {
        let (a, b) = self.blocked[i];
        (a as usize, b as usize)
    }

    /// Segment range covered by Gauss points in row `i` (superset of the
    /// blocked range); the trapezoid part of an operator application must
    /// skip these segments.
    pub fn gauss_segments(&self, i: usize) -> (usize, usize) {
        let (a, b) = self.gauss_blocked[i];
        (a as usize, b as usize)
    }

    pub fn edge_points(&self, i: usize) -> &[EdgePoint] {
        &self.edge_pts[self.edge_offsets[i] as usize..self.edge_offsets[i + 1] as usize]
    }

    pub fn inner_points(&self, i: usize) -> &[TailPoint] {
        let n = TAIL_BLOCKS * TAIL_PTS_PER_BLOCK;
        &self.inner_pts[i * n..(i + 1) * n]
    }

    pub fn outer_points(&self, i: usize) -> &[TailPoint] {
        let n = TAIL_BLOCKS * TAIL_PTS_PER_BLOCK;
        &self.outer_pts[i * n..(i + 1) * n]
    }

    /// Trapezoid quadrature weight of source node `j` in row `i`, counting
    /// only segments fully outside the PV window. Segment 0 (`[0, r₁]`)
    /// never counts: that region belongs to the inner-tail points. Used by
    /// the implicit energy to build symmetric pair weights.
    pub fn quadrature_weight(&self, i: usize, j: usize) -> f64 {
        let nodes = self.grid.nodes();
        let m = self.grid.m();
        let (blo, bhi) = self.blocked_segments(i);
        let mut w = 0.0;
        // node j is the right endpoint of segment j-1 and left of segment j
        if j >= 2 {
            let k = j - 1;
            if k < blo || k > bhi {
                w += 0.5 * (nodes[j] - nodes[j - 1]);
            }
        }
        if j >= 1 && j < m {
            let k = j;
            if k < blo || k > bhi {
                w += 0.5 * (nodes[j + 1] - nodes[j]);
            }
        }
        w
    }

    /// Hex SHA-256 digest of the serialized table contents (the byte
    /// stream used by the disk cache). Run manifests record it so that
    /// outputs can be traced to the exact quadrature data that produced
    /// them.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(table_bytes(self));
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Build a table. `sigma` must lie in `(N, N+2)`.
    pub fn build(
        grid: Arc<RadialGrid>,
        sigma: f64,
        quad_tol: f64,
    ) -> Result<KernelTable, KernelError> {
        let n = grid.dim() as f64;
        if !(sigma > n && sigma < n + 2.0) {
            return Err(KernelError::BadSigma(sigma, grid.dim()));
        }
        if let Some(table) = cache_load(&grid, sigma, quad_tol) {
            return Ok(table);
        }
        let table = Self::build_with(grid, sigma, quad_tol, true)?;
        cache_store(&table);
        Ok(table)
    }

    /// Sequential reference build (bench suite and determinism checks).
    pub fn build_sequential(
        grid: Arc<RadialGrid>,
        sigma: f64,
        quad_tol: f64,
    ) -> Result<KernelTable, KernelError> {
        let n = grid.dim() as f64;
        if !(sigma > n && sigma < n + 2.0) {
            return Err(KernelError::BadSigma(sigma, grid.dim()));
        }
        Self::build_with(grid, sigma, quad_tol, false)
    }

    fn build_with(
        grid: Arc<RadialGrid>,
        sigma: f64,
        quad_tol: f64,
        parallel: bool,
    ) -> Result<KernelTable, KernelError> {
        let nodes = grid.nodes().to_vec();
        let m = grid.m();
        let dim = grid.dim();
        let grid_for_rows = grid.clone();
        let row_fn = move |i: usize| -> Result<RowData, KernelError> {
            build_row(&nodes, dim, sigma, quad_tol, &grid_for_rows, i)
        };
        let rows = if parallel {
            par::map_indexed(m + 1, row_fn)
        } else {
            par::map_indexed_seq(m + 1, row_fn)
        };
        let mut entries = Vec::with_capacity((m + 1) * (m + 1));
        let mut blocked = Vec::with_capacity(m + 1);
        let mut gauss_blocked = Vec::with_capacity(m + 1);
        let mut edge_pts = Vec::new();
        let mut edge_offsets = Vec::with_capacity(m + 2);
        edge_offsets.push(0u32);
        let tail_n = TAIL_BLOCKS * TAIL_PTS_PER_BLOCK;
        let mut inner_pts = Vec::with_capacity((m + 1) * tail_n);
        let mut outer_pts = Vec::with_capacity((m + 1) * tail_n);
        for row in rows {
            let row = row?;
            entries.extend_from_slice(&row.entries);
            blocked.push(row.blocked);
            gauss_blocked.push(row.gauss_blocked);
            edge_pts.extend_from_slice(&row.edge);
            edge_offsets.push(edge_pts.len() as u32);
            inner_pts.extend_from_slice(&row.inner);
            outer_pts.extend_from_slice(&row.outer);
        }
        Ok(KernelTable {
            grid,
            sigma,
            quad_tol,
            c_loc: local_kernel_constant(dim, sigma),
            entries,
            blocked,
            gauss_blocked,
            edge_pts,
            edge_offsets,
            inner_pts,
            outer_pts,
        })
    }
}

struct RowData {
    entries: Vec<f64>,
    blocked: (u32, u32),
    gauss_blocked: (u32, u32),
    edge: Vec<EdgePoint>,
    inner: Vec<TailPoint>,
    outer: Vec<TailPoint>,
}

fn build_row(
    nodes: &[f64],
    dim: u32,
    sigma: f64,
    quad_tol: f64,
    grid: &RadialGrid,
    i: usize,
) -> Result<RowData, KernelError> {
    let m = nodes.len() - 1;
    let r1 = nodes[1];
    let r_max = nodes[m];
    let r = nodes[i];
    let delta = grid.pv_halfwidth(i);
    let win_lo = r - delta;
    let win_hi = r + delta;

    // node-pair entries outside the window
    let mut entries = vec![0.0; m + 1];
    for (j, &rho) in nodes.iter().enumerate() {
        if (rho - r).abs() >= delta {
            entries[j] = kernel_value(dim, sigma, quad_tol, r, rho)?;
        }
    }

    // segments [r_k, r_{k+1}] intersecting the open window; segment 0 is
    // never integrated as a trapezoid segment (the inner-region points own
    // [0, r1]), but it still participates in the blocked range.
    let mut blo = u32::MAX;
    let mut bhi = 0u32;
    for k in 0..m {
        if nodes[k + 1] > win_lo && nodes[k] < win_hi {
            if blo == u32::MAX {
                blo = k as u32;
            }
            bhi = k as u32;
        }
    }
    if blo == u32::MAX {
        blo = 0;
        bhi = 0;
    }

    // Gauss zone: the blocked segments plus NEAR_SEGS full segments on
    // each side, where the trapezoid bias against the near-singular kernel
    // would dominate. Segment 0 and anything beyond r_max belong to the
    // tail machinery, which clips against the window itself.
    let glo = (blo as usize).saturating_sub(NEAR_SEGS).max(1).min(blo as usize);
    let ghi = (bhi as usize + NEAR_SEGS).min(m - 1);
    let mut edge = Vec::new();
    {
        let mut add_sliver = |a: f64, b: f64| -> Result<(), KernelError> {
            if b <= a * (1.0 + 1e-14) {
                return Ok(());
            }
            // the sliver lies inside one grid segment by construction
            let k = nodes
                .partition_point(|&x| x <= a * (1.0 + 1e-14))
                .saturating_sub(1)
                .min(m - 1);
            for (rho, w) in quad::gauss8_points(a, b) {
                let t = ((rho - nodes[k]) / (nodes[k + 1] - nodes[k])).clamp(0.0, 1.0);
                let jv = kernel_value(dim, sigma, quad_tol, r, rho)?;
                edge.push(EdgePoint {
                    seg: k as u32,
                    t,
                    wj: w * jv,
                });
            }
            Ok(())
        };
        for k in glo..blo as usize {
            add_sliver(nodes[k].max(r1), nodes[k + 1])?;
        }
        let left_floor = nodes[blo as usize].max(r1);
        if win_lo > left_floor {
            add_sliver(left_floor, win_lo)?;
        }
        let right_ceil = nodes[(bhi as usize + 1).min(m)].min(r_max);
        if win_hi < right_ceil {
            add_sliver(win_hi.max(r1), right_ceil)?;
        }
        for k in (bhi as usize + 1)..=ghi {
            add_sliver(nodes[k], nodes[k + 1])?;
        }
    }

    // inner tail points on [0, r1]: dyadic blocks downward, clipped by the
    // window (only relevant for the innermost rows)
    let mut inner = Vec::with_capacity(TAIL_BLOCKS * TAIL_PTS_PER_BLOCK);
    for k in 0..TAIL_BLOCKS {
        let hi = r1 * 0.5f64.powi(k as i32);
        let lo = 0.5 * hi;
        for (rho, w) in gauss_block(lo, hi) {
            let inside = rho > win_lo && rho < win_hi;
            let wj = if inside {
                0.0
            } else {
                w * kernel_value(dim, sigma, quad_tol, r, rho)?
            };
            inner.push(TailPoint { rho, wj });
        }
    }

    // outer tail points on [r_max, 2^20 r_max]: dyadic blocks upward
    let mut outer = Vec::with_capacity(TAIL_BLOCKS * TAIL_PTS_PER_BLOCK);
    for k in 0..TAIL_BLOCKS {
        let lo = r_max * 2f64.powi(k as i32);
        let hi = 2.0 * lo;
        for (rho, w) in gauss_block(lo, hi) {
            let inside = rho > win_lo && rho < win_hi;
            let wj = if inside {
                0.0
            } else {
                w * kernel_value(dim, sigma, quad_tol, r, rho)?
            };
            outer.push(TailPoint { rho, wj });
        }
    }

    Ok(RowData {
        entries,
        blocked: (blo, bhi),
        gauss_blocked: (glo.min(blo as usize) as u32, ghi as u32),
        edge,
        inner,
        outer,
    })
}

/// 16 Gauss points on a block (two 8-point panels for robustness on the
/// doubling blocks).
fn gauss_block(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mid = (lo * hi).sqrt();
    let mut pts = quad::gauss8_points(lo, mid);
    pts.extend(quad::gauss8_points(mid, hi));
    pts
}

// ---------------------------------------------------------------------------
// Disk cache (enabled when FPLE_CACHE_DIR is set)
// ---------------------------------------------------------------------------

const CACHE_MAGIC: &[u8; 8] = b"FPLEKTB3";

fn cache_key(grid: &RadialGrid, sigma: f64, quad_tol: f64) -> String {
    let mut h = Sha256::new();
    h.update(CACHE_MAGIC);
    h.update((grid.dim() as u64).to_le_bytes());
    for &x in grid.nodes() {
        h.update(x.to_bits().to_le_bytes());
    }
    h.update(sigma.to_bits().to_le_bytes());
    h.update(quad_tol.to_bits().to_le_bytes());
    let digest = h.finalize();
    digest[..12].iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_path(grid: &RadialGrid, sigma: f64, quad_tol: f64) -> Option<PathBuf> {
    let dir = std::env::var_os("FPLE_CACHE_DIR")?;
    let dir = PathBuf::from(dir);
    Some(dir.join(format!("kernel-{}.bin", cache_key(grid, sigma, quad_tol))))
}

fn table_bytes(table: &KernelTable) -> Vec<u8> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CACHE_MAGIC);
    let push_u64 = |buf: &mut Vec<u8>, v: u64| buf.extend_from_slice(&v.to_le_bytes());
    let push_f64s = |buf: &mut Vec<u8>, xs: &[f64]| {
        for x in xs {
            buf.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    };
    push_u64(&mut buf, table.entries.len() as u64);
    push_f64s(&mut buf, &table.entries);
    push_u64(&mut buf, table.blocked.len() as u64);
    for &(a, b) in &table.blocked {
        buf.extend_from_slice(&a.to_le_bytes());
        buf.extend_from_slice(&b.to_le_bytes());
    }
    push_u64(&mut buf, table.gauss_blocked.len() as u64);
    for &(a, b) in &table.gauss_blocked {
        buf.extend_from_slice(&a.to_le_bytes());
        buf.extend_from_slice(&b.to_le_bytes());
    }
    push_u64(&mut buf, table.edge_pts.len() as u64);
    for e in &table.edge_pts {
        buf.extend_from_slice(&e.seg.to_le_bytes());
        buf.extend_from_slice(&e.t.to_bits().to_le_bytes());
        buf.extend_from_slice(&e.wj.to_bits().to_le_bytes());
    }
    push_u64(&mut buf, table.edge_offsets.len() as u64);
    for &o in &table.edge_offsets {
        buf.extend_from_slice(&o.to_le_bytes());
    }
    let push_tail = |buf: &mut Vec<u8>, pts: &[TailPoint]| {
        for p in pts {
            buf.extend_from_slice(&p.rho.to_bits().to_le_bytes());
            buf.extend_from_slice(&p.wj.to_bits().to_le_bytes());
        }
    };
    push_u64(&mut buf, table.inner_pts.len() as u64);
    push_tail(&mut buf, &table.inner_pts);
    push_u64(&mut buf, table.outer_pts.len() as u64);
    push_tail(&mut buf, &table.outer_pts);
    buf
}

fn cache_store(table: &KernelTable) {
    let Some(path) = cache_path(&table.grid, table.sigma, table.quad_tol) else {
        return;
    };
    if let Some(parent) = path.parent() {
        let _ = std::fs::create_dir_all(parent);
    }
    let buf = table_bytes(table);
    // atomic-ish: write temp then rename
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    if std::fs::write(&tmp, &buf).is_ok() {
        let _ = std::fs::rename(&tmp, &path);
    }
}

fn cache_load(grid: &Arc<RadialGrid>, sigma: f64, quad_tol: f64) -> Option<KernelTable> {
    let path = cache_path(grid, sigma, quad_tol)?;
    let buf = std::fs::read(&path).ok()?;
    let mut pos = 0usize;
    fn take<'a>(pos: &mut usize, n: usize, buf: &'a [u8]) -> Option<&'a [u8]> {
        if *pos + n > buf.len() {
            return None;
        }
        let s = &buf[*pos..*pos + n];
        *pos += n;
        Some(s)
    }
    if take(&mut pos, 8, &buf)? != CACHE_MAGIC {
        return None;
    }
    let read_u64 = |pos: &mut usize, buf: &[u8]| -> Option<u64> {
        let s = take(pos, 8, buf)?;
        Some(u64::from_le_bytes(s.try_into().ok()?))
    };
    let read_f64s = |pos: &mut usize, n: usize, buf: &[u8]| -> Option<Vec<f64>> {
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let s = take(pos, 8, buf)?;
            v.push(f64::from_bits(u64::from_le_bytes(s.try_into().ok()?)));
        }
        Some(v)
    };
    let ne = read_u64(&mut pos, &buf)? as usize;
    if ne != grid.nodes().len() * grid.nodes().len() {
        return None;
    }
    let entries = read_f64s(&mut pos, ne, &buf)?;
    let nb = read_u64(&mut pos, &buf)? as usize;
    if nb != grid.nodes().len() {
        return None;
    }
    let mut blocked = Vec::with_capacity(nb);
    for _ in 0..nb {
        let a = u32::from_le_bytes(take(&mut pos, 4, &buf)?.try_into().ok()?);
        let b = u32::from_le_bytes(take(&mut pos, 4, &buf)?.try_into().ok()?);
        blocked.push((a, b));
    }
    let ng = read_u64(&mut pos, &buf)? as usize;
    if ng != grid.nodes().len() {
        return None;
    }
    let mut gauss_blocked = Vec::with_capacity(ng);
    for _ in 0..ng {
        let a = u32::from_le_bytes(take(&mut pos, 4, &buf)?.try_into().ok()?);
        let b = u32::from_le_bytes(take(&mut pos, 4, &buf)?.try_into().ok()?);
        gauss_blocked.push((a, b));
    }
    let nedge = read_u64(&mut pos, &buf)? as usize;
    let mut edge_pts = Vec::with_capacity(nedge);
    for _ in 0..nedge {
        let seg = u32::from_le_bytes(take(&mut pos, 4, &buf)?.try_into().ok()?);
        let t = f64::from_bits(u64::from_le_bytes(take(&mut pos, 8, &buf)?.try_into().ok()?));
        let wj = f64::from_bits(u64::from_le_bytes(take(&mut pos, 8, &buf)?.try_into().ok()?));
        edge_pts.push(EdgePoint { seg, t, wj });
    }
    let noff = read_u64(&mut pos, &buf)? as usize;
    if noff != grid.nodes().len() + 1 {
        return None;
    }
    let mut edge_offsets = Vec::with_capacity(noff);
    for _ in 0..noff {
        edge_offsets.push(u32::from_le_bytes(take(&mut pos, 4, &buf)?.try_into().ok()?));
    }
    let read_tail = |pos: &mut usize, buf: &[u8]| -> Option<Vec<TailPoint>> {
        let n = read_u64(pos, buf)? as usize;
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            let rho = f64::from_bits(u64::from_le_bytes(take(pos, 8, buf)?.try_into().ok()?));
            let wj = f64::from_bits(u64::from_le_bytes(take(pos, 8, buf)?.try_into().ok()?));
            v.push(TailPoint { rho, wj });
        }
        Some(v)
    };
    let inner_pts = read_tail(&mut pos, &buf)?;
    let outer_pts = read_tail(&mut pos, &buf)?;
    let expected = grid.nodes().len() * TAIL_BLOCKS * TAIL_PTS_PER_BLOCK;
    if inner_pts.len() != expected || outer_pts.len() != expected {
        return None;
    }
    Some(KernelTable {
        grid: grid.clone(),
        sigma,
        quad_tol,
        c_loc: local_kernel_constant(grid.dim(), sigma),
        entries,
        blocked,
        gauss_blocked,
        edge_pts,
        edge_offsets,
        inner_pts,
        outer_pts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn dimension_one_closed_form() {
        let sigma = 1.75;
        let j = kernel_value(1, sigma, 1e-8, 2.0, 0.5).unwrap();
        let exact = 1.5f64.powf(-sigma) + 2.5f64.powf(-sigma);
        assert_relative_eq!(j, exact, max_relative = 1e-15);
    }

    #[test]
    fn kernel_symmetry_in_higher_dimensions() {
        for &(dim, sigma) in &[(2u32, 2.6), (3u32, 3.9)] {
            for &(r, rho) in &[(1.0, 3.0), (0.2, 5.0), (4.0, 4.5)] {
                let a = kernel_value(dim, sigma, 1e-10, r, rho).unwrap()
                    / rho.powf(dim as f64 - 1.0);
                let b = kernel_value(dim, sigma, 1e-10, rho, r).unwrap()
                    / r.powf(dim as f64 - 1.0);
                assert_relative_eq!(a, b, max_relative = 1e-8);
            }
        }
    }

    #[test]
    fn far_field_asymptote() {
        // J(r,ρ)/ρ^{N-1} -> |S^{N-1}| max(r,ρ)^{-σ} at large separation
        for &(dim, sigma) in &[(2u32, 2.7), (3u32, 3.6)] {
            let r = 1.0;
            let rho = 1e-3;
            let j = kernel_value(dim, sigma, 1e-10, r, rho).unwrap();
            let lead = quad::unit_sphere_area(dim) * rho.powf(dim as f64 - 1.0) * r.powf(-sigma);
            assert_relative_eq!(j, lead, max_relative = 1e-5);
        }
    }

    #[test]
    fn near_diagonal_constant_matches_beta_closed_form() {
        // J(r, r+t)·t^{1+sp} -> c_loc as t -> 0
        for &(dim, sigma) in &[(2u32, 2.75), (3u32, 3.45)] {
            let c = local_kernel_constant(dim, sigma);
            let r = 1.0;
            let sp = sigma - dim as f64;
            let mut prev_err = f64::INFINITY;
            for &t in &[1e-2, 1e-3, 1e-4] {
                let j = kernel_value(dim, sigma, 1e-10, r, r + t).unwrap();
                let scaled = j * t.powf(1.0 + sp);
                let err = (scaled - c).abs() / c;
                assert!(err < prev_err * 1.5 + 1e-12, "asymptote not improving");
                prev_err = err;
            }
            let j = kernel_value(dim, sigma, 1e-10, r, r + 1e-4).unwrap();
            assert_relative_eq!(j * 1e-4f64.powf(1.0 + sp), c, max_relative = 2e-3);
        }
    }

    #[test]
    fn table_build_and_cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        std::env::set_var("FPLE_CACHE_DIR", dir.path());
        let grid = RadialGrid::geometric(24, 10.0, None, 1).unwrap();
        let t1 = KernelTable::build(grid.clone(), 1.75, 1e-8).unwrap();
        // second build must hit the cache and agree bitwise
        let t2 = KernelTable::build(grid.clone(), 1.75, 1e-8).unwrap();
        std::env::remove_var("FPLE_CACHE_DIR");
        assert_eq!(t1.entries.len(), t2.entries.len());
        for (a, b) in t1.entries.iter().zip(t2.entries.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in t1.outer_pts.iter().zip(t2.outer_pts.iter()) {
            assert_eq!(a.wj.to_bits(), b.wj.to_bits());
        }
        // diagonal band excluded
        for i in 1..grid.m() {
            assert_eq!(t1.entry(i, i), 0.0);
        }
    }

    #[test]
    fn parallel_and_sequential_builds_agree_bitwise() {
        let grid = RadialGrid::geometric(20, 5.0, None, 2).unwrap();
        let a = KernelTable::build_with(grid.clone(), 2.8, 1e-7, true).unwrap();
        let b = KernelTable::build_sequential(grid, 2.8, 1e-7).unwrap();
        for (x, y) in a.entries.iter().zip(b.entries.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
