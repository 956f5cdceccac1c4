//! Moment-matching fusion of ensemble members.
//!
//! Members are reduced in a fixed order (sorted by seed), so fusion is
//! bitwise permutation invariant. Means are accumulated relative to the
//! first member, which makes M identical copies fuse to exactly that member.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagery::{ensure_same_dims, read_pfm, write_pfm, DepthMap, Dims, UncKind, UncMap};

/// One member prediction: depth and aleatoric scale (std or variance).
#[derive(Debug, Clone, PartialEq)]
pub struct Member {
    pub seed: u64,
    pub depth: DepthMap,
    pub sigma: UncMap,
}

impl Member {
    pub fn new(seed: u64, depth: DepthMap, sigma: UncMap) -> Result<Self> {
        ensure_same_dims(&depth, &sigma)?;
        Ok(Self { seed, depth, sigma })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub d_hat: DepthMap,
    pub var_a: UncMap,
    pub var_e: UncMap,
    pub var_t: UncMap,
    /// Member seeds in reduction order.
    pub seeds: Vec<u64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    members: usize,
    seeds: Vec<u64>,
}

fn cmp_members(a: &Member, b: &Member) -> Ordering {
    a.seed.cmp(&b.seed).then_with(|| {
        let da = a.depth.data().iter().chain(a.sigma.data());
        let db = b.depth.data().iter().chain(b.sigma.data());
        da.zip(db)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

/// `x0 + sum(x_m - x0) / M`, exact when every `x_m` equals `x0`.
fn shifted_mean(cols: &[&[f64]], j: usize) -> f64 {
    let x0 = cols[0][j];
    let acc: f64 = cols[1..].iter().map(|c| c[j] - x0).sum();
    x0 + acc / cols.len() as f64
}

fn fuse_sorted(members: &[&Member], with_aleatoric: bool) -> Result<EnsembleOutput> {
    let first = members.first().ok_or(Error::Empty("ensemble members"))?;
    let (w, h) = (first.depth.width(), first.depth.height());
    for m in members {
        ensure_same_dims(&first.depth, &m.depth)?;
        ensure_same_dims(&first.depth, &m.sigma)?;
    }
    let depths: Vec<&[f64]> = members.iter().map(|m| m.depth.data()).collect();
    let vars: Vec<Vec<f64>> = members
        .iter()
        .map(|m| m.sigma.to_variance().data().to_vec())
        .collect();
    let vars: Vec<&[f64]> = vars.iter().map(Vec::as_slice).collect();
    let n = w * h;
    let big_m = members.len() as f64;
    let mut d_hat = Vec::with_capacity(n);
    let mut var_a = Vec::with_capacity(n);
    let mut var_e = Vec::with_capacity(n);
    let mut var_t = Vec::with_capacity(n);
    for j in 0..n {
        let mean = shifted_mean(&depths, j);
        let a = if with_aleatoric {
            shifted_mean(&vars, j)
        } else {
            0.0
        };
        let e = depths.iter().map(|c| (mean - c[j]).powi(2)).sum::<f64>() / big_m;
        d_hat.push(mean);
        var_a.push(a);
        var_e.push(e);
        var_t.push(a + e);
    }
    Ok(EnsembleOutput {
        d_hat: DepthMap::new(w, h, d_hat)?,
        var_a: UncMap::new(w, h, UncKind::Variance, var_a)?,
        var_e: UncMap::new(w, h, UncKind::Variance, var_e)?,
        var_t: UncMap::new(w, h, UncKind::Variance, var_t)?,
        seeds: members.iter().map(|m| m.seed).collect(),
    })
}

fn sorted(members: &[Member]) -> Vec<&Member> {
    let mut v: Vec<&Member> = members.iter().collect();
    v.sort_by(|a, b| cmp_members(a, b));
    v
}

/// Fused mean depth, mean aleatoric variance, population variance of the
/// member depths, and their sum.
pub fn fuse(members: &[Member]) -> Result<EnsembleOutput> {
    fuse_sorted(&sorted(members), true)
}

/// Fusion with the aleatoric part ignored: `var_t = var_e`.
pub fn selfsup_fuse(members: &[Member]) -> Result<EnsembleOutput> {
    fuse_sorted(&sorted(members), false)
}

impl EnsembleOutput {
    pub fn members(&self) -> usize {
        self.seeds.len()
    }

    /// Writes `mean.pfm`, `var_a.pfm`, `var_e.pfm`, `var_t.pfm` and
    /// `ensemble.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_pfm(&self.d_hat, dir.join("mean.pfm"))?;
        write_pfm(&self.var_a, dir.join("var_a.pfm"))?;
        write_pfm(&self.var_e, dir.join("var_e.pfm"))?;
        write_pfm(&self.var_t, dir.join("var_t.pfm"))?;
        let side = Sidecar {
            members: self.members(),
            seeds: self.seeds.clone(),
        };
        let p = dir.join("ensemble.json");
        std::fs::write(&p, serde_json::to_string_pretty(&side)?).map_err(|e| Error::io(&p, e))
    }

    /// Reads maps written by [`EnsembleOutput::save`]. Values come back at
    /// single precision.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let p = dir.join("ensemble.json");
        let s = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let side: Sidecar = serde_json::from_str(&s)?;
        if side.members != side.seeds.len() {
            return Err(Error::InvalidParameter(format!(
                "sidecar lists {} seeds for {} members",
                side.seeds.len(),
                side.members
            )));
        }
        let d_hat = read_pfm(dir.join("mean.pfm"))?.into_depth()?;
        let var = |name: &str| -> Result<UncMap> {
            let m = read_pfm(dir.join(name))?.into_unc(UncKind::Variance)?;
            ensure_same_dims(&d_hat, &m)?;
            Ok(m)
        };
        Ok(Self {
            var_a: var("var_a.pfm")?,
            var_e: var("var_e.pfm")?,
            var_t: var("var_t.pfm")?,
            d_hat,
            seeds: side.seeds,
        })
    }
}
