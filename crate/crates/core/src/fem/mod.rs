//! Linear tetrahedral finite elements: mesh type, stiffness assembly,
//! Dirichlet solves and element gradients.

mod assembly;
pub mod meshgen;
mod sparse;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{tet_signed_volume, Vec3};

pub use assembly::{assemble_stiffness, element_gradient, element_gradients, element_matrix, shape_gradients};
pub use sparse::{conjugate_gradient, solve_dirichlet, solve_dirichlet_report, CgReport, CsrMatrix};

/// Elements with |volume| below this are degenerate.
pub const DEGENERATE_VOLUME_MM3: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Region {
    LvMyo,
    RvMyo,
    AorticValve,
    TricuspidValve,
    PulmonaryValve,
    MitralValve,
}

impl Region {
    pub const ALL: [Region; 6] = [
        Region::LvMyo,
        Region::RvMyo,
        Region::AorticValve,
        Region::TricuspidValve,
        Region::PulmonaryValve,
        Region::MitralValve,
    ];

    /// Integer tag used in element files.
    pub fn tag(self) -> u8 {
        match self {
            Region::LvMyo => 1,
            Region::RvMyo => 2,
            Region::AorticValve => 3,
            Region::TricuspidValve => 4,
            Region::PulmonaryValve => 5,
            Region::MitralValve => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Region::LvMyo => "LV_MYO",
            Region::RvMyo => "RV_MYO",
            Region::AorticValve => "AORTIC_VALVE",
            Region::TricuspidValve => "TRICUSPID_VALVE",
            Region::PulmonaryValve => "PULMONARY_VALVE",
            Region::MitralValve => "MITRAL_VALVE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NodeSet {
    LvEndo,
    RvEndo,
    Epi,
    Base,
    ApexNode,
    MvRing,
    TvRing,
    AvRing,
    PvRing,
}

impl NodeSet {
    pub const ALL: [NodeSet; 9] = [
        NodeSet::LvEndo,
        NodeSet::RvEndo,
        NodeSet::Epi,
        NodeSet::Base,
        NodeSet::ApexNode,
        NodeSet::MvRing,
        NodeSet::TvRing,
        NodeSet::AvRing,
        NodeSet::PvRing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NodeSet::LvEndo => "LV_ENDO",
            NodeSet::RvEndo => "RV_ENDO",
            NodeSet::Epi => "EPI",
            NodeSet::Base => "BASE",
            NodeSet::ApexNode => "APEX_NODE",
            NodeSet::MvRing => "MV_RING",
            NodeSet::TvRing => "TV_RING",
            NodeSet::AvRing => "AV_RING",
            NodeSet::PvRing => "PV_RING",
        }
    }
}

impl fmt::Display for NodeSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NodeSet {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        NodeSet::ALL
            .into_iter()
            .find(|n| n.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown node set {s:?}")))
    }
}

/// Orthonormal fiber (f), sheet (s) and sheet-normal (n) directions of one
/// element.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElementFrame {
    pub f: Vec3,
    pub s: Vec3,
    pub n: Vec3,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetMesh {
    pub nodes: Vec<Vec3>,
    pub tets: Vec<[usize; 4]>,
    pub region: Vec<Region>,
    pub surface_tags: BTreeMap<NodeSet, Vec<usize>>,
    #[serde(default)]
    pub fibers: Option<Vec<ElementFrame>>,
}

/// Scalar field with one value per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodalField {
    pub name: String,
    pub values: Vec<f64>,
}

impl NodalField {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        NodalField {
            name: name.into(),
            values,
        }
    }
}

impl TetMesh {
    /// Mesh with every element in `region` and no node sets.
    pub fn new(nodes: Vec<Vec3>, tets: Vec<[usize; 4]>, region: Region) -> Self {
        let n = tets.len();
        TetMesh {
            nodes,
            tets,
            region: vec![region; n],
            surface_tags: BTreeMap::new(),
            fibers: None,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.tets.len()
    }

    pub fn signed_volume(&self, e: usize) -> f64 {
        let [a, b, c, d] = self.tets[e];
        tet_signed_volume(&self.nodes[a], &self.nodes[b], &self.nodes[c], &self.nodes[d])
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|e| self.signed_volume(e)).sum()
    }

    pub fn centroid(&self, e: usize) -> Vec3 {
        self.tets[e].iter().map(|&i| self.nodes[i]).sum::<Vec3>() / 4.0
    }

    /// Number of elements with non-positive signed volume.
    pub fn count_inverted(&self) -> usize {
        (0..self.tets.len()).filter(|&e| self.signed_volume(e) <= 0.0).count()
    }

    /// Swaps two nodes of every negatively oriented element.
    pub fn orient_positive(&mut self) {
        for e in 0..self.tets.len() {
            if self.signed_volume(e) < 0.0 {
                self.tets[e].swap(2, 3);
            }
        }
    }

    /// Boundary faces (appearing in exactly one element), each oriented
    /// outward, in element order.
    pub fn boundary_faces(&self) -> Vec<[usize; 3]> {
        // faces of a positive tet (a,b,c,d) with outward normals
        const FACES: [[usize; 3]; 4] = [[1, 2, 3], [0, 3, 2], [0, 1, 3], [0, 2, 1]];
        let mut count: HashMap<[usize; 3], usize> = HashMap::new();
        for t in &self.tets {
            for f in FACES {
                let mut key = [t[f[0]], t[f[1]], t[f[2]]];
                key.sort_unstable();
                *count.entry(key).or_insert(0) += 1;
            }
        }
        let mut out = Vec::new();
        for t in &self.tets {
            for f in FACES {
                let face = [t[f[0]], t[f[1]], t[f[2]]];
                let mut key = face;
                key.sort_unstable();
                if count[&key] == 1 {
                    out.push(face);
                }
            }
        }
        out
    }

    pub fn boundary_nodes(&self) -> BTreeSet<usize> {
        self.boundary_faces().into_iter().flatten().collect()
    }

    pub fn node_set(&self, s: NodeSet) -> &[usize] {
        self.surface_tags.get(&s).map_or(&[], |v| v.as_slice())
    }

    /// Structural checks: indices in range, positive volumes, region and
    /// fiber lengths, node sets on the boundary.
    pub fn validate(&self) -> Result<()> {
        let n = self.nodes.len();
        if self.region.len() != self.tets.len() {
            return Err(Error::Format(format!(
                "{} region tags for {} elements",
                self.region.len(),
                self.tets.len()
            )));
        }
        for (e, t) in self.tets.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(Error::Format(format!("element {e} references a missing node")));
            }
            let v = self.signed_volume(e);
            if v.abs() < DEGENERATE_VOLUME_MM3 {
                return Err(Error::DegenerateElement { element: e, volume: v });
            }
        }
        let inverted = self.count_inverted();
        if inverted > 0 {
            return Err(Error::InvertedElements(inverted));
        }
        if let Some(f) = &self.fibers {
            if f.len() != self.tets.len() {
                return Err(Error::Format("fiber count differs from element count".into()));
            }
        }
        if !self.surface_tags.is_empty() {
            let boundary = self.boundary_nodes();
            for (s, nodes) in &self.surface_tags {
                if let Some(i) = nodes.iter().find(|i| !boundary.contains(i)) {
                    return Err(Error::Format(format!("{s} node {i} is not on the boundary")));
                }
            }
        }
        Ok(())
    }

    /// Submesh of the elements whose region is in `regions`. Returns the mesh
    /// and, for each new node, its index in `self`.
    pub fn submesh(&self, regions: &[Region]) -> (TetMesh, Vec<usize>) {
        let mut map = vec![usize::MAX; self.nodes.len()];
        let mut back = Vec::new();
        let mut tets = Vec::new();
        let mut region = Vec::new();
        for (t, r) in self.tets.iter().zip(&self.region) {
            if !regions.contains(r) {
                continue;
            }
            let mut nt = [0; 4];
            for (k, &i) in t.iter().enumerate() {
                if map[i] == usize::MAX {
                    map[i] = back.len();
                    back.push(i);
                }
                nt[k] = map[i];
            }
            tets.push(nt);
            region.push(*r);
        }
        let mut surface_tags = BTreeMap::new();
        for (s, nodes) in &self.surface_tags {
            let v: Vec<usize> = nodes.iter().filter(|&&i| map[i] != usize::MAX).map(|&i| map[i]).collect();
            surface_tags.insert(*s, v);
        }
        let mesh = TetMesh {
            nodes: back.iter().map(|&i| self.nodes[i]).collect(),
            tets,
            region,
            surface_tags,
            fibers: None,
        };
        (mesh, back)
    }

    /// Number of connected components of the element graph (shared nodes).
    pub fn connected_components(&self) -> usize {
        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for t in &self.tets {
            for k in 1..4 {
                let (a, b) = (find(&mut parent, t[0]), find(&mut parent, t[k]));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let used: BTreeSet<usize> = self.tets.iter().flatten().copied().collect();
        used.iter().map(|&i| find(&mut parent, i)).collect::<BTreeSet<_>>().len()
    }

    /// Copy of the mesh with every node mapped through `f`.
    pub fn transformed(&self, f: impl Fn(&Vec3) -> Vec3) -> TetMesh {
        let mut m = self.clone();
        m.nodes = self.nodes.iter().map(f).collect();
        m
    }
}
