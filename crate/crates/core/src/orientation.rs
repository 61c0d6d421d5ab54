//! Inside/outside labeling of a regular grid of cells tiling `Ω`.
//!
//! Cells touched by the cloud (closed-cell test) are interfacial; a
//! 6-connected flood fill from the grid boundary marks the outside; whatever
//! remains is inside.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::{Error, Result, Vec3, DOMAIN_HALF_EXTENT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellLabel {
    Interfacial,
    Outside,
    Inside,
}

impl CellLabel {
    fn code(self) -> char {
        match self {
            CellLabel::Interfacial => 'S',
            CellLabel::Outside => 'O',
            CellLabel::Inside => 'I',
        }
    }

    fn from_code(c: &str) -> Option<Self> {
        match c {
            "S" => Some(CellLabel::Interfacial),
            "O" => Some(CellLabel::Outside),
            "I" => Some(CellLabel::Inside),
            _ => None,
        }
    }
}

/// Cell labels on a `dims[0] × dims[1] × dims[2]` grid. Cell `(i, j, k)`
/// covers `origin + h·[i, i+1] × [j, j+1] × [k, k+1]` and is stored at
/// index `(i·dims[1] + j)·dims[2] + k`, so storage order is lexicographic.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask {
    pub grid_origin: Vec3,
    pub h: f64,
    pub dims: [usize; 3],
    pub labels: Vec<CellLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LabelCounts {
    pub inside: usize,
    pub interfacial: usize,
    pub outside: usize,
}

impl RegionMask {
    /// Labels a grid given which cells are interfacial.
    pub fn from_occupancy(grid_origin: Vec3, h: f64, dims: [usize; 3], interfacial: &[bool]) -> Result<Self> {
        let total = dims[0] * dims[1] * dims[2];
        if interfacial.len() != total {
            return Err(Error::ShapeMismatch {
                expected: total,
                found: interfacial.len(),
            });
        }
        let mut labels: Vec<Option<CellLabel>> = interfacial
            .iter()
            .map(|&s| s.then_some(CellLabel::Interfacial))
            .collect();
        let mut queue = VecDeque::new();
        for idx in 0..total {
            let c = unflatten(idx, dims);
            let on_boundary = (0..3).any(|a| c[a] == 0 || c[a] + 1 == dims[a]);
            if on_boundary && labels[idx].is_none() {
                labels[idx] = Some(CellLabel::Outside);
                queue.push_back(idx);
            }
        }
        if queue.is_empty() {
            return Err(Error::NoOutsideSeed);
        }
        while let Some(idx) = queue.pop_front() {
            let c = unflatten(idx, dims);
            for a in 0..3 {
                for step in [-1i64, 1] {
                    let v = c[a] as i64 + step;
                    if v < 0 || v >= dims[a] as i64 {
                        continue;
                    }
                    let mut n = c;
                    n[a] = v as usize;
                    let j = flatten(n, dims);
                    if labels[j].is_none() {
                        labels[j] = Some(CellLabel::Outside);
                        queue.push_back(j);
                    }
                }
            }
        }
        let labels = labels.into_iter().map(|l| l.unwrap_or(CellLabel::Inside)).collect();
        Ok(Self {
            grid_origin,
            h,
            dims,
            labels,
        })
    }

    pub fn label(&self, cell: [usize; 3]) -> CellLabel {
        self.labels[flatten(cell, self.dims)]
    }

    pub fn center(&self, cell: [usize; 3]) -> Vec3 {
        self.grid_origin + Vec3::new(cell[0] as f64 + 0.5, cell[1] as f64 + 0.5, cell[2] as f64 + 0.5) * self.h
    }

    /// Centers of all cells with `label`, in lexicographic cell order.
    pub fn cells_of(&self, label: CellLabel) -> Vec<Vec3> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| **l == label)
            .map(|(i, _)| self.center(unflatten(i, self.dims)))
            .collect()
    }

    pub fn counts(&self) -> LabelCounts {
        let mut c = LabelCounts::default();
        for l in &self.labels {
            match l {
                CellLabel::Inside => c.inside += 1,
                CellLabel::Interfacial => c.interfacial += 1,
                CellLabel::Outside => c.outside += 1,
            }
        }
        c
    }

    /// Run-length text dump: a header followed by one `<label> <run>` line
    /// per run, cells in lexicographic order; labels are `S` (interfacial),
    /// `O` and `I`.
    pub fn to_rle(&self) -> String {
        let mut s = String::from("heatsdf-mask 1\n");
        let _ = writeln!(s, "dims {} {} {}", self.dims[0], self.dims[1], self.dims[2]);
        let _ = writeln!(s, "h {:?}", self.h);
        let o = self.grid_origin;
        let _ = writeln!(s, "origin {:?} {:?} {:?}", o.x, o.y, o.z);
        let mut i = 0;
        while i < self.labels.len() {
            let l = self.labels[i];
            let mut j = i;
            while j < self.labels.len() && self.labels[j] == l {
                j += 1;
            }
            let _ = writeln!(s, "{} {}", l.code(), j - i);
            i = j;
        }
        s
    }

    pub fn from_rle(text: &str) -> Result<Self> {
        let bad = |line: usize, message: &str| Error::Parse {
            path: "<mask>".into(),
            line,
            message: message.to_string(),
        };
        let mut lines = text.lines().enumerate();
        let mut next = |what: &str| {
            lines
                .next()
                .map(|(n, l)| (n + 1, l.split_whitespace().collect::<Vec<_>>()))
                .ok_or_else(|| bad(0, &format!("missing {what}")))
        };
        let (n, magic) = next("header")?;
        if magic != ["heatsdf-mask", "1"] {
            return Err(bad(n, "not a mask file"));
        }
        let num = |n: usize, s: &str| s.parse::<f64>().map_err(|_| bad(n, "bad number"));
        let (n, d) = next("dims")?;
        if d.len() != 4 || d[0] != "dims" {
            return Err(bad(n, "expected dims"));
        }
        let mut dims = [0usize; 3];
        for a in 0..3 {
            dims[a] = d[a + 1].parse().map_err(|_| bad(n, "bad dims"))?;
        }
        let (n, hl) = next("h")?;
        if hl.len() != 2 || hl[0] != "h" {
            return Err(bad(n, "expected h"));
        }
        let h = num(n, hl[1])?;
        let (n, ol) = next("origin")?;
        if ol.len() != 4 || ol[0] != "origin" {
            return Err(bad(n, "expected origin"));
        }
        let origin = Vec3::new(num(n, ol[1])?, num(n, ol[2])?, num(n, ol[3])?);
        let mut labels = Vec::with_capacity(dims.iter().product());
        for (n, l) in lines {
            let parts: Vec<&str> = l.split_whitespace().collect();
            if parts.is_empty() {
                continue;
            }
            let (Some(label), Some(run)) = (
                parts.first().and_then(|c| CellLabel::from_code(c)),
                parts.get(1).and_then(|r| r.parse::<usize>().ok()),
            ) else {
                return Err(bad(n + 1, "expected '<S|O|I> <run>'"));
            };
            labels.extend(std::iter::repeat_n(label, run));
        }
        if labels.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch {
                expected: dims.iter().product(),
                found: labels.len(),
            });
        }
        Ok(Self {
            grid_origin: origin,
            h,
            dims,
            labels,
        })
    }

    pub fn write_rle(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_rle())?;
        Ok(())
    }
}

fn flatten(c: [usize; 3], dims: [usize; 3]) -> usize {
    (c[0] * dims[1] + c[1]) * dims[2] + c[2]
}

fn unflatten(idx: usize, dims: [usize; 3]) -> [usize; 3] {
    [idx / (dims[1] * dims[2]), (idx / dims[2]) % dims[1], idx % dims[2]]
}

/// Cell edge length of a `dims³` grid tiling `Ω`.
pub fn cell_size(dims: usize) -> f64 {
    2.0 * DOMAIN_HALF_EXTENT / dims as f64
}

/// Centers of all cells of a `dims³` grid tiling `Ω`, lexicographic order.
pub fn grid_cell_centers(dims: usize) -> Vec<Vec3> {
    let h = cell_size(dims);
    let mut out = Vec::with_capacity(dims * dims * dims);
    for i in 0..dims {
        for j in 0..dims {
            for k in 0..dims {
                out.push(Vec3::new(
                    -DOMAIN_HALF_EXTENT + (i as f64 + 0.5) * h,
                    -DOMAIN_HALF_EXTENT + (j as f64 + 0.5) * h,
                    -DOMAIN_HALF_EXTENT + (k as f64 + 0.5) * h,
                ));
            }
        }
    }
    out
}

/// Marks every cell of a `dims³` grid over `Ω` whose closed cell contains a
/// point, then flood-fills.
pub fn build_region_mask(points: &[Vec3], dims: usize) -> Result<RegionMask> {
    if dims == 0 {
        return Err(Error::InvalidArgument("grid needs at least one cell".into()));
    }
    let h = cell_size(dims);
    let origin = Vec3::repeat(-DOMAIN_HALF_EXTENT);
    let d3 = [dims; 3];
    let mut occupied = vec![false; dims * dims * dims];
    let lower = |i: i64| -DOMAIN_HALF_EXTENT + i as f64 * h;
    for p in points {
        let mut ranges = [(0i64, 0i64); 3];
        for a in 0..3 {
            let guess = ((p[a] + DOMAIN_HALF_EXTENT) / h).floor() as i64;
            let cands: Vec<i64> = (guess - 1..=guess + 1)
                .filter(|&i| i >= 0 && i < dims as i64 && lower(i) <= p[a] && p[a] <= lower(i + 1))
                .collect();
            match (cands.first(), cands.last()) {
                (Some(&a0), Some(&a1)) => ranges[a] = (a0, a1),
                _ => {
                    ranges[a] = (1, 0);
                }
            }
        }
        for i in ranges[0].0..=ranges[0].1 {
            for j in ranges[1].0..=ranges[1].1 {
                for k in ranges[2].0..=ranges[2].1 {
                    occupied[flatten([i as usize, j as usize, k as usize], d3)] = true;
                }
            }
        }
    }
    let mask = RegionMask::from_occupancy(origin, h, d3, &occupied)?;
    if mask.counts().inside == 0 {
        log::warn!("region mask on {dims}³ cells has no inside cells");
    }
    Ok(mask)
}

/// Result of [`build_region_mask_adaptive`].
#[derive(Debug, Clone)]
pub struct MaskBuild {
    pub mask: RegionMask,
    /// How many times the cell size was doubled.
    pub doublings: usize,
}

/// Builds the mask, doubling the cell size (up to three times) while the
/// interior is empty or the cloud is sparser than the cells.
pub fn build_region_mask_adaptive(pc: &PointCloud, dims: usize) -> Result<MaskBuild> {
    let spacing = pc.median_spacing();
    let mut d = dims;
    let mut doublings = 0;
    loop {
        let mask = build_region_mask(&pc.points, d)?;
        let sparse = spacing > mask.h;
        let empty = mask.counts().inside == 0;
        if !(sparse || empty) || doublings == 3 || d < 2 {
            if doublings > 0 {
                log::info!("orientation grid coarsened {doublings}× to h = {}", mask.h);
            }
            return Ok(MaskBuild { mask, doublings });
        }
        log::info!(
            "orientation grid h = {} rejected (median spacing {spacing:.4}, inside empty: {empty}); doubling",
            mask.h
        );
        d /= 2;
        doublings += 1;
    }
}
