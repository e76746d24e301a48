//! Brute-force reference computations shared by the integration tests.
//! Nothing here calls the library's numerical code.
#![allow(dead_code)]

use std::collections::BTreeMap;

use iivw::panel::{GridSpec, PanelDataset, SubjectPath};

/// One at-risk grid cell of one subject.
#[derive(Debug, Clone)]
pub struct Cell {
    pub subject: usize,
    pub cell: u32,
    pub gap: u32,
    pub treatment: f64,
    pub z: Vec<f64>,
    pub event: bool,
}

fn on_grid(t: f64, dt: f64) -> u32 {
    (t / dt).round() as u32
}

/// Walk every subject cell by cell, carrying the gap and the covariates of
/// the latest visit forward.
pub fn cells_of(subject: usize, s: &SubjectPath, grid: &GridSpec) -> Vec<Cell> {
    let visit_cells: Vec<u32> = s.visits.iter().map(|v| on_grid(v.time, grid.dt)).collect();
    let n = grid.n_cells();
    let mut out = Vec::new();
    let mut gap = 0u32;
    let mut z = s.visits[0].covariates.clone();
    for k in 1..=n {
        if (k as f64) * grid.dt > s.censor_time + 1e-9 * grid.dt {
            break;
        }
        gap += 1;
        let hit = visit_cells.iter().position(|&c| c == k);
        out.push(Cell {
            subject,
            cell: k,
            gap,
            treatment: if s.treatment { 1.0 } else { 0.0 },
            z: z.clone(),
            event: hit.is_some(),
        });
        if let Some(i) = hit {
            z = s.visits[i].covariates.clone();
            gap = 0;
        }
    }
    out
}

pub fn all_cells(ds: &PanelDataset) -> Vec<Cell> {
    ds.subjects()
        .iter()
        .enumerate()
        .flat_map(|(i, s)| cells_of(i, s, ds.grid()))
        .collect()
}

/// Design row `[I, z...]` restricted to the first `p` entries.
pub fn design(c: &Cell, p: usize) -> Vec<f64> {
    let mut x = vec![c.treatment];
    x.extend(c.z.iter().copied());
    x.truncate(p);
    x
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Breslow log partial likelihood with risk sets grouped by `key`.
pub fn loglik_by<F: Fn(&Cell) -> u32>(cells: &[Cell], gamma: &[f64], key: F) -> f64 {
    let p = gamma.len();
    let mut groups: BTreeMap<u32, (f64, u32, f64)> = BTreeMap::new();
    for c in cells {
        let eta = dot(&design(c, p), gamma);
        let g = groups.entry(key(c)).or_insert((0.0, 0, 0.0));
        g.0 += eta.exp();
        if c.event {
            g.1 += 1;
            g.2 += eta;
        }
    }
    groups
        .values()
        .filter(|g| g.1 > 0)
        .map(|&(s0, d, sum_eta)| sum_eta - d as f64 * s0.ln())
        .sum()
}

pub fn gap_loglik(cells: &[Cell], gamma: &[f64]) -> f64 {
    loglik_by(cells, gamma, |c| c.gap)
}

pub fn entry_loglik(cells: &[Cell], gamma: &[f64]) -> f64 {
    loglik_by(cells, gamma, |c| c.cell)
}

/// Events over summed relative risk of at-risk cells, per gap.
pub fn risk_set_baseline(cells: &[Cell], gamma: &[f64]) -> BTreeMap<u32, f64> {
    let p = gamma.len();
    let mut acc: BTreeMap<u32, (f64, u32)> = BTreeMap::new();
    for c in cells {
        let e = acc.entry(c.gap).or_insert((0.0, 0));
        e.0 += dot(&design(c, p), gamma).exp();
        e.1 += c.event as u32;
    }
    acc.into_iter()
        .filter(|(_, (_, d))| *d > 0)
        .map(|(b, (s, d))| (b, d as f64 / s))
        .collect()
}

/// Events over summed relative risk of the event cells, per gap.
pub fn literal_baseline(cells: &[Cell], gamma: &[f64]) -> BTreeMap<u32, f64> {
    let p = gamma.len();
    let mut acc: BTreeMap<u32, (f64, u32)> = BTreeMap::new();
    for c in cells.iter().filter(|c| c.event) {
        let e = acc.entry(c.gap).or_insert((0.0, 0));
        e.0 += dot(&design(c, p), gamma).exp();
        e.1 += 1;
    }
    acc.into_iter().map(|(b, (s, d))| (b, d as f64 / s)).collect()
}

/// Coordinate-wise grid search of `f` over `[lo, hi]` with step `h`.
pub fn grid_argmax_1d<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, h: f64) -> f64 {
    let n = ((hi - lo) / h).round() as usize;
    let mut best = (f64::NEG_INFINITY, lo);
    for i in 0..=n {
        let x = lo + i as f64 * h;
        let v = f(x);
        if v > best.0 {
            best = (v, x);
        }
    }
    best.1
}

/// Ordinary solve of a small dense system by Gaussian elimination with
/// partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for r in col + 1..n {
            let f = a[r][col] / a[col][col];
            for c in col..n {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Weighted least squares via the normal equations `X'WX b = X'Wy`.
pub fn normal_equations(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Vec<f64> {
    let p = x[0].len();
    let mut a = vec![vec![0.0; p]; p];
    let mut b = vec![0.0; p];
    for ((row, &yi), &wi) in x.iter().zip(y).zip(w) {
        for i in 0..p {
            b[i] += wi * row[i] * yi;
            for j in 0..p {
                a[i][j] += wi * row[i] * row[j];
            }
        }
    }
    gauss_solve(a, b)
}
