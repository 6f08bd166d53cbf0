//! Supra-threshold connected components of a t-map.
//!
//! Labeling is a single raster pass of union-find over the already-visited
//! half of the neighborhood, followed by a pass that resolves roots and
//! accumulates extents and peaks.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::stats::TMap;
use crate::volume::{Dims, Mask};

/// Voxel neighborhood used to connect supra-threshold voxels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Connectivity {
    /// Shared faces.
    Faces6,
    /// Shared faces or edges.
    Edges18,
    /// Shared faces, edges, or corners.
    #[default]
    Corners26,
}

impl Connectivity {
    pub const ALL: [Connectivity; 3] = [
        Connectivity::Faces6,
        Connectivity::Edges18,
        Connectivity::Corners26,
    ];

    pub fn neighbor_count(self) -> usize {
        match self {
            Connectivity::Faces6 => 6,
            Connectivity::Edges18 => 18,
            Connectivity::Corners26 => 26,
        }
    }

    /// All neighbor offsets, ordered by (dz, dy, dx).
    pub fn offsets(self) -> Vec<[i64; 3]> {
        let max_nonzero = match self {
            Connectivity::Faces6 => 1,
            Connectivity::Edges18 => 2,
            Connectivity::Corners26 => 3,
        };
        let mut out = Vec::with_capacity(self.neighbor_count());
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nz = (dx != 0) as usize + (dy != 0) as usize + (dz != 0) as usize;
                    if nz >= 1 && nz <= max_nonzero {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }

    /// Offsets that point to voxels with a smaller linear index.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        self.offsets()
            .into_iter()
            .filter(|&[dx, dy, dz]| dz < 0 || (dz == 0 && (dy < 0 || (dy == 0 && dx < 0))))
            .collect()
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.neighbor_count())
    }
}

impl FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "6" | "faces6" => Ok(Connectivity::Faces6),
            "18" | "edges18" => Ok(Connectivity::Edges18),
            "26" | "corners26" => Ok(Connectivity::Corners26),
            other => Err(Error::InvalidArgument(format!(
                "connectivity must be 6, 18 or 26, got `{other}`"
            ))),
        }
    }
}

impl TryFrom<u64> for Connectivity {
    type Error = Error;

    fn try_from(n: u64) -> Result<Self> {
        n.to_string().parse()
    }
}

impl Serialize for Connectivity {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u64(self.neighbor_count() as u64)
    }
}

impl<'de> Deserialize<'de> for Connectivity {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let n = u64::deserialize(d)?;
        Connectivity::try_from(n).map_err(serde::de::Error::custom)
    }
}

/// A connected supra-threshold component.
#[derive(Debug, Clone, PartialEq)]
pub struct Cluster {
    /// 1-based rank by descending extent, ties by ascending peak index.
    pub id: usize,
    pub extent: usize,
    pub peak_t: f64,
    pub peak_xyz: (usize, usize, usize),
    pub peak_index: usize,
    pub p_uncorrected: Option<f64>,
    pub q_value: Option<f64>,
    pub significant_fdr: Option<bool>,
}

fn find(parent: &mut [u32], mut v: u32) -> u32 {
    while parent[v as usize] != v {
        let grand = parent[parent[v as usize] as usize];
        parent[v as usize] = grand;
        v = grand;
    }
    v
}

fn union(parent: &mut [u32], a: u32, b: u32) {
    let ra = find(parent, a);
    let rb = find(parent, b);
    if ra != rb {
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi as usize] = lo;
    }
}

/// Connected components of `{v in mask : t[v] > t_threshold}`.
pub fn extract_clusters(
    tmap: &TMap,
    mask: &Mask,
    t_threshold: f64,
    conn: Connectivity,
) -> Result<Vec<Cluster>> {
    let dims = tmap.volume.dims();
    dims.ensure_eq(&mask.dims())?;
    if !t_threshold.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "cluster-forming threshold {t_threshold} is not finite"
        )));
    }
    Ok(label_components(
        dims,
        tmap.volume.data(),
        mask.inside(),
        t_threshold,
        conn,
    ))
}

pub(crate) fn label_components(
    dims: Dims,
    t: &[f64],
    inside: &[bool],
    t_threshold: f64,
    conn: Connectivity,
) -> Vec<Cluster> {
    const NONE: u32 = u32::MAX;
    let n = dims.len();
    let supra = |v: usize| inside[v] && t[v] > t_threshold;
    let backward = conn.backward_offsets();
    let (nx, ny, nz) = (dims.nx as i64, dims.ny as i64, dims.nz as i64);

    let mut parent = vec![NONE; n];
    let mut any = false;
    for v in 0..n {
        if !supra(v) {
            continue;
        }
        any = true;
        parent[v] = v as u32;
        let (x, y, z) = dims.coords(v);
        let (x, y, z) = (x as i64, y as i64, z as i64);
        for &[dx, dy, dz] in &backward {
            let (qx, qy, qz) = (x + dx, y + dy, z + dz);
            if qx < 0 || qy < 0 || qz < 0 || qx >= nx || qy >= ny || qz >= nz {
                continue;
            }
            let q = (qx + nx * (qy + ny * qz)) as usize;
            if parent[q] != NONE {
                union(&mut parent, v as u32, q as u32);
            }
        }
    }
    if !any {
        return Vec::new();
    }

    // Roots are the smallest index in each component, so components are
    // discovered in ascending order of their first voxel.
    let mut slot_of_root = vec![NONE; n];
    let mut clusters: Vec<Cluster> = Vec::new();
    for v in 0..n {
        if parent[v] == NONE {
            continue;
        }
        let root = find(&mut parent, v as u32) as usize;
        let slot = if slot_of_root[root] == NONE {
            slot_of_root[root] = clusters.len() as u32;
            clusters.push(Cluster {
                id: 0,
                extent: 0,
                peak_t: f64::NEG_INFINITY,
                peak_xyz: (0, 0, 0),
                peak_index: v,
                p_uncorrected: None,
                q_value: None,
                significant_fdr: None,
            });
            clusters.len() - 1
        } else {
            slot_of_root[root] as usize
        };
        let c = &mut clusters[slot];
        c.extent += 1;
        if t[v] > c.peak_t {
            c.peak_t = t[v];
            c.peak_index = v;
        }
    }
    clusters.sort_by(|a, b| {
        b.extent
            .cmp(&a.extent)
            .then(a.peak_index.cmp(&b.peak_index))
    });
    for (i, c) in clusters.iter_mut().enumerate() {
        c.id = i + 1;
        c.peak_xyz = dims.coords(c.peak_index);
    }
    clusters
}

/// Number of clusters of each extent.
pub fn extent_histogram(clusters: &[Cluster]) -> BTreeMap<usize, usize> {
    let mut h = BTreeMap::new();
    for c in clusters {
        *h.entry(c.extent).or_insert(0) += 1;
    }
    h
}
