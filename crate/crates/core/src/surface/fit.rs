use std::collections::BTreeMap;

use nalgebra::{Matrix3, SVD};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contours::{ContourKind, ContourSet, LandmarkName};
use crate::error::{Error, Result};
use crate::fem::conjugate_gradient;
use crate::geometry::{BucketGrid, Similarity, Vec3};

use super::{vertex_normals, Patch, SurfaceMesh};

/// Landmarks needed to fix a similarity transform.
pub const MIN_LANDMARKS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Weight of the Laplacian smoothness term.
    pub lambda_smooth: f64,
    /// Small pull toward the initial shape; keeps the system definite.
    pub anchor: f64,
    pub landmark_weight: f64,
    pub max_iters: usize,
    /// Stop once no vertex moves further than this in one iteration.
    pub tol_mm: f64,
    pub cg_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            lambda_smooth: 1.0,
            anchor: 1e-3,
            landmark_weight: 10.0,
            max_iters: 20,
            tol_mm: 0.05,
            cg_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub mesh: SurfaceMesh,
    pub iterations: usize,
    pub converged: bool,
    /// Total objective at the initial shape and after every iteration.
    pub objective: Vec<f64>,
    /// Mean distance from contour points to their nearest vertex, same
    /// sampling as `objective`.
    pub mean_distance: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Least-squares similarity (or rigid, without scale) transform taking
/// `src` onto `dst`.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Similarity> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::Landmark("point sets differ in size or are empty".into()));
    }
    let n = src.len() as f64;
    let ms = src.iter().sum::<Vec3>() / n;
    let md = dst.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (s, d) in src.iter().zip(dst) {
        cov += (d - md) * (s - ms).transpose();
        var += (s - ms).norm_squared();
    }
    cov /= n;
    var /= n;
    let svd = SVD::new(cov, true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sign = Matrix3::identity();
    if u.determinant() * vt.determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * vt;
    let scale = if with_scale {
        if var <= 0.0 {
            return Err(Error::Landmark("source points coincide".into()));
        }
        (svd.singular_values[0] + svd.singular_values[1] + sign[(2, 2)] * svd.singular_values[2]) / var
    } else {
        1.0
    };
    Ok(Similarity {
        rotation,
        translation: md - rotation * ms * scale,
        scale,
    })
}

fn collect_landmarks(template: &SurfaceMesh, contours: &[ContourSet]) -> Vec<(LandmarkName, usize, Vec3)> {
    let mut seen = BTreeMap::new();
    for set in contours {
        for (name, p) in &set.landmarks {
            if let Some(&v) = template.landmarks.get(name) {
                seen.entry(*name).or_insert((v, *p));
            }
        }
    }
    seen.into_iter().map(|(n, (v, p))| (n, v, p)).collect()
}

/// Places the template on the landmarks with a similarity transform.
pub fn rigid_init(template: &SurfaceMesh, contours: &[ContourSet]) -> Result<(SurfaceMesh, Similarity)> {
    let lm = collect_landmarks(template, contours);
    if lm.len() < MIN_LANDMARKS {
        return Err(Error::Landmark(format!(
            "{} landmarks matched the template, need {MIN_LANDMARKS}",
            lm.len()
        )));
    }
    let dst: Vec<Vec3> = lm.iter().map(|l| l.2).collect();
    let c = dst.iter().sum::<Vec3>() / dst.len() as f64;
    let mut spread = Matrix3::zeros();
    for p in &dst {
        spread += (p - c) * (p - c).transpose();
    }
    let sv = spread.symmetric_eigenvalues();
    let (lo, hi) = (sv.min(), sv.max());
    if hi <= 0.0 || lo / hi < 1e-6 {
        return Err(Error::Landmark("landmarks are coplanar".into()));
    }
    let src: Vec<Vec3> = lm.iter().map(|l| template.vertices[l.1]).collect();
    let t = umeyama(&src, &dst, true)?;
    Ok((template.map_vertices(|p| t.apply(p)), t))
}

/// Template vertices a contour kind is matched against.
pub fn kind_patches(kind: ContourKind) -> &'static [Patch] {
    match kind {
        ContourKind::LvEndo => &[Patch::LvEndo],
        ContourKind::LvEpi => &[Patch::LvEpi, Patch::RvSeptal],
        ContourKind::RvSeptum => &[Patch::RvSeptal],
        ContourKind::RvFreewall => &[Patch::RvFreewall],
    }
}

/// Uniform graph Laplacian `(Lx)_i = x_i − mean of neighbours`.
struct Laplacian {
    adj: Vec<Vec<usize>>,
}

impl Laplacian {
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, n) in self.adj.iter().enumerate() {
            y[i] = if n.is_empty() {
                0.0
            } else {
                x[i] - n.iter().map(|&j| x[j]).sum::<f64>() / n.len() as f64
            };
        }
    }

    fn apply_t(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
        for (i, n) in self.adj.iter().enumerate() {
            if n.is_empty() {
                out[i] -= y[i];
                continue;
            }
            let w = y[i] / n.len() as f64;
            for &j in n {
                out[j] -= w;
            }
        }
    }

    fn normal_diag(&self) -> Vec<f64> {
        let mut d: Vec<f64> = self.adj.iter().map(|n| if n.is_empty() { 0.0 } else { 1.0 }).collect();
        for n in &self.adj {
            for &j in n {
                d[j] += 1.0 / (n.len() * n.len()) as f64;
            }
        }
        d
    }

    /// `(LᵀL + μI) x`
    fn regulariser(&self, x: &[f64], mu: f64, out: &mut [f64]) {
        let mut lx = vec![0.0; x.len()];
        self.apply(x, &mut lx);
        self.apply_t(&lx, out);
        for (o, v) in out.iter_mut().zip(x) {
            *o += mu * v;
        }
    }
}

/// Target points and weights gathered per vertex.
struct Matches {
    /// (vertex, target, weight)
    pairs: Vec<(usize, Vec3, f64)>,
    /// Leading pairs that come from contour points, not landmarks.
    n_data: usize,
}

impl Matches {
    fn find(mesh: &SurfaceMesh, x: &[Vec3], contours: &[ContourSet], w_landmark: f64) -> Result<Self> {
        let mut pairs = Vec::new();
        let kinds = [ContourKind::LvEndo, ContourKind::LvEpi, ContourKind::RvSeptum, ContourKind::RvFreewall];
        for kind in kinds {
            let pts: Vec<Vec3> = contours
                .iter()
                .flat_map(|s| s.of_kind(kind))
                .flat_map(|c| c.points.iter().copied())
                .collect();
            if pts.is_empty() {
                continue;
            }
            let verts = mesh.patch_vertices(kind_patches(kind));
            if verts.is_empty() {
                return Err(Error::Fit(format!("template has no vertices for {kind:?} contours")));
            }
            let grid = BucketGrid::new(verts.iter().map(|&v| (v, x[v])).collect());
            let found: Vec<(usize, Vec3, f64)> = pts
                .par_iter()
                .map(|p| (grid.nearest(p).expect("non-empty grid").0, *p, 1.0))
                .collect();
            pairs.extend(found);
        }
        if pairs.is_empty() {
            return Err(Error::Fit("no contour points to fit".into()));
        }
        let n_data = pairs.len();
        for (_, v, p) in collect_landmarks(mesh, contours) {
            pairs.push((v, p, w_landmark));
        }
        Ok(Matches { pairs, n_data })
    }

    fn data_energy(&self, x: &[Vec3]) -> f64 {
        self.pairs.iter().map(|(v, p, w)| w * (x[*v] - p).norm_squared()).sum()
    }

    fn mean_distance(&self, x: &[Vec3]) -> f64 {
        let data = &self.pairs[..self.n_data];
        data.iter().map(|(v, p, _)| (x[*v] - p).norm()).sum::<f64>() / self.n_data as f64
    }
}

fn objective(lap: &Laplacian, m: &Matches, x: &[Vec3], xr: &[Vec3], cfg: &FitConfig) -> f64 {
    let n = x.len();
    let mut reg = 0.0;
    let mut out = vec![0.0; n];
    for a in 0..3 {
        let d: Vec<f64> = (0..n).map(|i| x[i][a] - xr[i][a]).collect();
        lap.regulariser(&d, cfg.anchor, &mut out);
        reg += d.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>();
    }
    m.data_energy(x) + cfg.lambda_smooth * reg
}

/// Deforms an initially placed template onto the contours by alternating
/// nearest-vertex matching with a smoothness-regularised least-squares
/// solve. The objective is non-increasing across iterations.
pub fn fit_surface(template: &SurfaceMesh, contours: &[ContourSet], cfg: &FitConfig) -> Result<FitReport> {
    if !(cfg.lambda_smooth >= 0.0 && cfg.anchor > 0.0 && cfg.landmark_weight >= 0.0) {
        return Err(Error::Config("fit weights must be non-negative with a positive anchor".into()));
    }
    let n = template.vertices.len();
    let lap = Laplacian {
        adj: template.adjacency(),
    };
    let xr = template.vertices.clone();
    let ldiag = lap.normal_diag();
    let mut x = xr.clone();
    let mut matches = Matches::find(template, &x, contours, cfg.landmark_weight)?;
    let mut report = FitReport {
        mesh: template.clone(),
        iterations: 0,
        converged: false,
        objective: vec![objective(&lap, &matches, &x, &xr, cfg)],
        mean_distance: vec![matches.mean_distance(&x)],
        warnings: Vec::new(),
    };
    let lam = cfg.lambda_smooth;
    let mut reg_r = vec![vec![0.0; n]; 3];
    for (a, r) in reg_r.iter_mut().enumerate() {
        let xa: Vec<f64> = xr.iter().map(|p| p[a]).collect();
        lap.regulariser(&xa, cfg.anchor, r);
    }
    for it in 1..=cfg.max_iters {
        let mut dw = vec![0.0; n];
        let mut b = vec![Vec3::zeros(); n];
        for (v, p, w) in &matches.pairs {
            dw[*v] += w;
            b[*v] += p * *w;
        }
        let diag: Vec<f64> = (0..n).map(|i| dw[i] + lam * (ldiag[i] + cfg.anchor)).collect();
        let mut next = x.clone();
        for a in 0..3 {
            let apply = |u: &[f64], y: &mut [f64]| {
                lap.regulariser(u, cfg.anchor, y);
                for i in 0..n {
                    y[i] = dw[i] * u[i] + lam * y[i];
                }
            };
            // solve for the update so the tolerance does not depend on where
            // the heart sits in patient space
            let xa: Vec<f64> = x.iter().map(|p| p[a]).collect();
            let mut ax = vec![0.0; n];
            apply(&xa, &mut ax);
            let rhs: Vec<f64> = (0..n).map(|i| b[i][a] + lam * reg_r[a][i] - ax[i]).collect();
            let mut dx = vec![0.0; n];
            conjugate_gradient(apply, &diag, &rhs, &mut dx, cfg.cg_tol, 20 * n)?;
            for i in 0..n {
                next[i][a] = xa[i] + dx[i];
            }
        }
        let step = x.iter().zip(&next).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        x = next;
        matches = Matches::find(template, &x, contours, cfg.landmark_weight)?;
        report.objective.push(objective(&lap, &matches, &x, &xr, cfg));
        report.mean_distance.push(matches.mean_distance(&x));
        report.iterations = it;
        if step < cfg.tol_mm {
            report.converged = true;
            break;
        }
    }
    if x.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
        return Err(Error::Fit("fit produced non-finite vertices".into()));
    }
    report.mesh = template.with_vertices(x);
    let crossings = septal_crossings(&report.mesh);
    if crossings > 0 {
        report
            .warnings
            .push(format!("{crossings} RV free-wall vertices lie behind the septal surface"));
    }
    Ok(report)
}

/// Free-wall vertices on the wrong side of the septum.
pub fn septal_crossings(mesh: &SurfaceMesh) -> usize {
    let septal = mesh.patch_vertices(&[Patch::RvSeptal]);
    if septal.is_empty() {
        return 0;
    }
    let tri: Vec<[usize; 3]> = mesh.triangles_in(&[Patch::RvSeptal]).copied().collect();
    let normals = vertex_normals(&mesh.vertices, &tri);
    let grid = BucketGrid::new(septal.iter().map(|&v| (v, mesh.vertices[v])).collect());
    mesh.patch_vertices(&[Patch::RvFreewall])
        .into_iter()
        .filter(|v| septal.binary_search(v).is_err())
        .filter(|&v| {
            let p = mesh.vertices[v];
            let (s, _) = grid.nearest(&p).expect("non-empty");
            // septal normals point out of the RV cavity, into the septum
            (p - mesh.vertices[s]).dot(&normals[s]) > 0.0
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::axis_angle;

    #[test]
    fn umeyama_recovers_similarity() {
        let src: Vec<Vec3> = (0..9)
            .map(|i| {
                let f = i as f64;
                Vec3::new(f.sin() * 10.0, (1.7 * f).cos() * 7.0, f * 1.3 - 4.0)
            })
            .collect();
        let truth = Similarity {
            rotation: axis_angle(&Vec3::new(0.3, -1.0, 0.5), 1.1),
            translation: Vec3::new(4.0, -2.0, 9.0),
            scale: 1.35,
        };
        let dst: Vec<Vec3> = src.iter().map(|p| truth.apply(p)).collect();
        let t = umeyama(&src, &dst, true).unwrap();
        assert!((t.rotation - truth.rotation).abs().max() < 1e-9);
        assert!((t.translation - truth.translation).norm() < 1e-9);
        assert!((t.scale - truth.scale).abs() < 1e-9);
        let rigid = umeyama(&src, &src.iter().map(|p| truth.rotation * p).collect::<Vec<_>>(), false).unwrap();
        assert!((rigid.rotation - truth.rotation).abs().max() < 1e-9);
        assert_eq!(rigid.scale, 1.0);
    }

    #[test]
    fn laplacian_transpose_is_adjoint() {
        let lap = Laplacian {
            adj: vec![vec![1, 2], vec![0], vec![0, 1, 3], vec![2]],
        };
        let x = [1.0, -2.0, 0.5, 3.0];
        let y = [0.3, 0.1, -1.0, 2.0];
        let (mut lx, mut lty) = ([0.0; 4], [0.0; 4]);
        lap.apply(&x, &mut lx);
        lap.apply_t(&y, &mut lty);
        let a: f64 = lx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let b: f64 = x.iter().zip(&lty).map(|(a, b)| a * b).sum();
        assert!((a - b).abs() < 1e-14);
        // diagonal of LᵀL against the explicit product
        let d = lap.normal_diag();
        for i in 0..4 {
            let mut e = [0.0; 4];
            e[i] = 1.0;
            let (mut le, mut ltle) = ([0.0; 4], [0.0; 4]);
            lap.apply(&e, &mut le);
            lap.apply_t(&le, &mut ltle);
            assert!((ltle[i] - d[i]).abs() < 1e-14);
        }
    }
}
