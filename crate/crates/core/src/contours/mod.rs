//! Labelled contours and valve/apex landmarks extracted from label volumes.

pub mod march;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::labelgrid::{LabelVolume, Structure, View};
use march::{largest_component, loop_area, trace_loops, EdgePoint};

/// Polylines shorter than this are dropped.
pub const MIN_POLYLINE_POINTS: usize = 8;
/// SAX slices with fewer LV-cavity pixels are skipped.
pub const MIN_SAX_CAVITY_PIXELS: usize = 8;
/// Minimum number of shared pixel edges for a resolvable valve.
pub const MIN_VALVE_EDGES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ContourKind {
    LvEndo,
    LvEpi,
    RvSeptum,
    RvFreewall,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LandmarkName {
    #[serde(rename = "MV_2CH_A")]
    Mv2chA,
    #[serde(rename = "MV_2CH_B")]
    Mv2chB,
    #[serde(rename = "MV_3CH_A")]
    Mv3chA,
    #[serde(rename = "MV_3CH_B")]
    Mv3chB,
    #[serde(rename = "MV_4CH_A")]
    Mv4chA,
    #[serde(rename = "MV_4CH_B")]
    Mv4chB,
    #[serde(rename = "TV_4CH_A")]
    Tv4chA,
    #[serde(rename = "TV_4CH_B")]
    Tv4chB,
    #[serde(rename = "AO_LV_A")]
    AoLvA,
    #[serde(rename = "AO_LV_B")]
    AoLvB,
    #[serde(rename = "APEX_2CH")]
    Apex2ch,
}

impl LandmarkName {
    pub const ALL: [LandmarkName; 11] = [
        LandmarkName::Mv2chA,
        LandmarkName::Mv2chB,
        LandmarkName::Mv3chA,
        LandmarkName::Mv3chB,
        LandmarkName::Mv4chA,
        LandmarkName::Mv4chB,
        LandmarkName::Tv4chA,
        LandmarkName::Tv4chB,
        LandmarkName::AoLvA,
        LandmarkName::AoLvB,
        LandmarkName::Apex2ch,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LandmarkName::Mv2chA => "MV_2CH_A",
            LandmarkName::Mv2chB => "MV_2CH_B",
            LandmarkName::Mv3chA => "MV_3CH_A",
            LandmarkName::Mv3chB => "MV_3CH_B",
            LandmarkName::Mv4chA => "MV_4CH_A",
            LandmarkName::Mv4chB => "MV_4CH_B",
            LandmarkName::Tv4chA => "TV_4CH_A",
            LandmarkName::Tv4chB => "TV_4CH_B",
            LandmarkName::AoLvA => "AO_LV_A",
            LandmarkName::AoLvB => "AO_LV_B",
            LandmarkName::Apex2ch => "APEX_2CH",
        }
    }
}

impl fmt::Display for LandmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LandmarkName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        LandmarkName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Landmark(format!("unknown landmark {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub kind: ContourKind,
    /// SAX slice index; absent for long-axis views.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slice: Option<usize>,
    pub points: Vec<Vec3>,
}

/// Contours and landmarks of one view at one frame, in patient millimetres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContourSet {
    pub view: View,
    pub frame: usize,
    pub contours: Vec<Contour>,
    pub landmarks: BTreeMap<LandmarkName, Vec3>,
}

impl ContourSet {
    pub fn of_kind(&self, kind: ContourKind) -> impl Iterator<Item = &Contour> {
        self.contours.iter().filter(move |c| c.kind == kind)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// One 2D slice of a label volume with code lookups.
struct Slice<'a> {
    vol: &'a LabelVolume,
    k: usize,
    data: &'a [i32],
    nx: usize,
    ny: usize,
}

impl<'a> Slice<'a> {
    fn new(vol: &'a LabelVolume, k: usize, frame: usize) -> Self {
        Slice {
            vol,
            k,
            data: vol.slice(k, frame),
            nx: vol.nx(),
            ny: vol.ny(),
        }
    }

    fn label(&self, (i, j): (usize, usize)) -> i32 {
        self.data[i + self.nx * j]
    }

    fn is(&self, px: (usize, usize), s: Structure) -> bool {
        self.vol.code(s).is_some_and(|c| self.label(px) == c)
    }

    fn mask(&self, structures: &[Structure]) -> Vec<bool> {
        let codes: Vec<i32> = structures.iter().filter_map(|s| self.vol.code(*s)).collect();
        self.data.iter().map(|v| *v != 0 && codes.contains(v)).collect()
    }

    fn count(&self, s: Structure) -> usize {
        self.vol
            .code(s)
            .map_or(0, |c| self.data.iter().filter(|v| **v == c).count())
    }

    fn to_patient(&self, pos: [f64; 2]) -> Vec3 {
        self.vol.index_to_patient([pos[0], pos[1], self.k as f64])
    }

    fn near(&self, (i, j): (usize, usize), s: Structure) -> bool {
        for dj in -1i64..=1 {
            for di in -1i64..=1 {
                let (a, b) = (i as i64 + di, j as i64 + dj);
                if a >= 0 && b >= 0 && (a as usize) < self.nx && (b as usize) < self.ny && self.is((a as usize, b as usize), s) {
                    return true;
                }
            }
        }
        false
    }

    /// Largest-component mask of `structures` and its outer loop.
    fn outer_loop(&self, structures: &[Structure]) -> Option<(Vec<EdgePoint>, usize)> {
        let mut m = self.mask(structures);
        largest_component(&mut m, self.nx, self.ny);
        let loops = trace_loops(&m, self.nx, self.ny);
        let n = loops.len();
        loops
            .into_iter()
            .max_by(|a, b| loop_area(a).partial_cmp(&loop_area(b)).unwrap())
            .map(|l| (l, n))
    }
}

/// Splits a closed loop into maximal runs of equal classification. A loop
/// classified uniformly is returned whole.
fn split_runs<T: Copy>(points: &[(T, Option<ContourKind>)]) -> Vec<(ContourKind, Vec<T>)> {
    let n = points.len();
    if n == 0 {
        return Vec::new();
    }
    let start = (0..n).find(|&i| points[i].1 != points[(i + n - 1) % n].1);
    let Some(start) = start else {
        return match points[0].1 {
            Some(k) => vec![(k, points.iter().map(|p| p.0).collect())],
            None => Vec::new(),
        };
    };
    let mut runs: Vec<(Option<ContourKind>, Vec<T>)> = Vec::new();
    for s in 0..n {
        let (p, k) = points[(start + s) % n];
        match runs.last_mut() {
            Some((rk, pts)) if *rk == k => pts.push(p),
            _ => runs.push((k, vec![p])),
        }
    }
    runs.into_iter()
        .filter_map(|(k, pts)| k.map(|k| (k, pts)))
        .collect()
}

fn emit(slice: &Slice, sax: bool, tagged: Vec<(EdgePoint, Option<ContourKind>)>, out: &mut Vec<Contour>) {
    for (kind, pts) in split_runs(&tagged) {
        if pts.len() < MIN_POLYLINE_POINTS {
            continue;
        }
        out.push(Contour {
            kind,
            slice: sax.then_some(slice.k),
            points: pts.iter().map(|p| slice.to_patient(p.pos)).collect(),
        });
    }
}

fn slice_contours(slice: &Slice, with_rv: bool, out: &mut Vec<Contour>) -> Result<()> {
    let sax = slice.vol.view == View::Sax;
    let (endo, n_loops) = slice
        .outer_loop(&[Structure::LvCavity])
        .ok_or_else(|| Error::Contour("empty LV cavity".into()))?;
    if n_loops > 1 {
        return Err(Error::Contour(format!(
            "{} LV cavity is not simply connected",
            slice.vol.view
        )));
    }
    let tagged = endo
        .into_iter()
        .map(|p| {
            let kind = p
                .outside
                .filter(|q| slice.is(*q, Structure::LvMyocardium))
                .map(|_| ContourKind::LvEndo);
            (p, kind)
        })
        .collect();
    emit(slice, sax, tagged, out);

    let (epi, _) = slice
        .outer_loop(&[Structure::LvCavity, Structure::LvMyocardium])
        .ok_or_else(|| Error::Contour("empty LV myocardium".into()))?;
    let tagged = epi
        .into_iter()
        .map(|p| {
            let kind = slice.is(p.inside, Structure::LvMyocardium).then_some(ContourKind::LvEpi);
            (p, kind)
        })
        .collect();
    emit(slice, sax, tagged, out);

    if with_rv {
        let (rv, _) = slice
            .outer_loop(&[Structure::RvCavity])
            .ok_or_else(|| Error::Contour("empty RV cavity".into()))?;
        let valve = [Structure::LaCavity, Structure::RaCavity, Structure::Aorta];
        let tagged = rv
            .into_iter()
            .map(|p| {
                let kind = match p.outside {
                    Some(q) if valve.iter().any(|s| slice.is(q, *s)) => None,
                    Some(q) if slice.is(q, Structure::LvMyocardium) => Some(ContourKind::RvSeptum),
                    _ if slice.near(p.inside, Structure::LvMyocardium) => Some(ContourKind::RvSeptum),
                    _ => Some(ContourKind::RvFreewall),
                };
                (p, kind)
            })
            .collect();
        emit(slice, sax, tagged, out);
    }
    Ok(())
}

fn require(vol: &LabelVolume, s: Structure, frame: usize) -> Result<i32> {
    let code = vol
        .code(s)
        .ok_or_else(|| Error::Contour(format!("{} label map lacks {s:?}", vol.view)))?;
    if vol.count_label(frame, code, None)? == 0 {
        return Err(Error::Contour(format!(
            "missing required label {s:?} in {} frame {frame}",
            vol.view
        )));
    }
    Ok(code)
}

/// Traces LV endocardium, LV epicardium and the RV septal / free-wall
/// boundaries of one view. SAX volumes are processed slice by slice.
pub fn extract_view_contours(vol: &LabelVolume, frame: usize) -> Result<ContourSet> {
    if frame >= vol.nt() {
        return Err(Error::OutOfBounds(format!("frame {frame} >= nt {}", vol.nt())));
    }
    require(vol, Structure::LvCavity, frame)?;
    require(vol, Structure::LvMyocardium, frame)?;
    let mut contours = Vec::new();
    match vol.view {
        View::Sax => {
            for k in 0..vol.nz() {
                let slice = Slice::new(vol, k, frame);
                if slice.count(Structure::LvCavity) < MIN_SAX_CAVITY_PIXELS
                    || slice.count(Structure::LvMyocardium) == 0
                {
                    continue;
                }
                let with_rv = slice.count(Structure::RvCavity) >= MIN_POLYLINE_POINTS;
                slice_contours(&slice, with_rv, &mut contours)?;
            }
        }
        view => {
            let with_rv = view != View::Lax2ch;
            if with_rv {
                require(vol, Structure::RvCavity, frame)?;
            }
            slice_contours(&Slice::new(vol, 0, frame), with_rv, &mut contours)?;
        }
    }
    if !contours.iter().any(|c| c.kind == ContourKind::LvEndo) {
        return Err(Error::Contour(format!("no LV endocardial contour in {}", vol.view)));
    }
    Ok(ContourSet {
        view: vol.view,
        frame,
        contours,
        landmarks: BTreeMap::new(),
    })
}

/// Midpoints of pixel edges shared by structures `a` and `b`, in patient mm.
pub fn interface_points(vol: &LabelVolume, frame: usize, a: Structure, b: Structure) -> Vec<Vec3> {
    let (Some(ca), Some(cb)) = (vol.code(a), vol.code(b)) else {
        return Vec::new();
    };
    let slice = Slice::new(vol, 0, frame);
    let mut out = Vec::new();
    for j in 0..slice.ny {
        for i in 0..slice.nx {
            let v = slice.label((i, j));
            if v != ca && v != cb {
                continue;
            }
            let want = if v == ca { cb } else { ca };
            if i + 1 < slice.nx && slice.label((i + 1, j)) == want {
                out.push(slice.to_patient([i as f64 + 0.5, j as f64]));
            }
            if j + 1 < slice.ny && slice.label((i, j + 1)) == want {
                out.push(slice.to_patient([i as f64, j as f64 + 0.5]));
            }
        }
    }
    out
}

/// The two points of `pts` at maximal mutual distance (first pair on ties).
pub fn diameter_pair(pts: &[Vec3]) -> Option<(Vec3, Vec3)> {
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = (pts[i] - pts[j]).norm_squared();
            if best.is_none_or(|b| d > b.2) {
                best = Some((i, j, d));
            }
        }
    }
    best.map(|(i, j, _)| (pts[i], pts[j]))
}

fn valve(vol: &LabelVolume, frame: usize, a: Structure, b: Structure) -> Result<(Vec3, Vec3)> {
    let pts = interface_points(vol, frame, a, b);
    if pts.len() < MIN_VALVE_EDGES {
        return Err(Error::Landmark(format!(
            "{a:?}/{b:?} interface in {} has {} pixel edges, valve not resolvable",
            vol.view,
            pts.len()
        )));
    }
    Ok(diameter_pair(&pts).expect("at least two points"))
}

fn centroid(vol: &LabelVolume, frame: usize, s: Structure) -> Result<Vec3> {
    let code = vol
        .code(s)
        .ok_or_else(|| Error::Landmark(format!("{} label map lacks {s:?}", vol.view)))?;
    let slice = Slice::new(vol, 0, frame);
    let mut acc = [0.0; 2];
    let mut n = 0usize;
    for j in 0..slice.ny {
        for i in 0..slice.nx {
            if slice.label((i, j)) == code {
                acc[0] += i as f64;
                acc[1] += j as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(Error::Landmark(format!("no {s:?} pixels in {}", vol.view)));
    }
    Ok(slice.to_patient([acc[0] / n as f64, acc[1] / n as f64]))
}

/// Orders `(p, q)` so that the first element minimises `key`.
fn order_by(p: Vec3, q: Vec3, key: impl Fn(&Vec3) -> f64) -> (Vec3, Vec3) {
    if key(&q) < key(&p) {
        (q, p)
    } else {
        (p, q)
    }
}

/// Adds the view's valve and apex landmarks to `contours`.
pub fn extract_landmarks(vol: &LabelVolume, contours: &ContourSet, frame: usize) -> Result<ContourSet> {
    use LandmarkName::*;
    use Structure::*;
    let mut out = contours.clone();
    let lm = &mut out.landmarks;
    match vol.view {
        View::Lax2ch => {
            let (p, q) = valve(vol, frame, LvCavity, LaCavity)?;
            // A is the anterior endpoint
            let (a, b) = order_by(p, q, |x| -x.y);
            let mid = (a + b) / 2.0;
            let apex = contours
                .of_kind(ContourKind::LvEpi)
                .flat_map(|c| c.points.iter())
                .fold(None::<(Vec3, f64)>, |best, p| {
                    let d = (p - mid).norm_squared();
                    match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((*p, d)),
                    }
                })
                .ok_or_else(|| Error::Landmark("no LV epicardial contour for the apex".into()))?;
            lm.insert(Mv2chA, a);
            lm.insert(Mv2chB, b);
            lm.insert(Apex2ch, apex.0);
        }
        View::Lax3ch => {
            let la = centroid(vol, frame, LaCavity)?;
            let ao = centroid(vol, frame, Aorta)?;
            let (p, q) = valve(vol, frame, LvCavity, Aorta)?;
            let (a, b) = order_by(p, q, |x| -(x - la).norm());
            lm.insert(AoLvA, a);
            lm.insert(AoLvB, b);
            let (p, q) = valve(vol, frame, LvCavity, LaCavity)?;
            let (a, b) = order_by(p, q, |x| -(x - ao).norm());
            lm.insert(Mv3chA, a);
            lm.insert(Mv3chB, b);
        }
        View::Lax4ch => {
            let rv = centroid(vol, frame, RvCavity)?;
            let lv = centroid(vol, frame, LvCavity)?;
            let (p, q) = valve(vol, frame, LvCavity, LaCavity)?;
            let (a, b) = order_by(p, q, |x| (x - rv).norm());
            lm.insert(Mv4chA, a);
            lm.insert(Mv4chB, b);
            let (p, q) = valve(vol, frame, RvCavity, RaCavity)?;
            let (a, b) = order_by(p, q, |x| (x - lv).norm());
            lm.insert(Tv4chA, a);
            lm.insert(Tv4chB, b);
        }
        View::Sax => {}
    }
    Ok(out)
}

/// Contours plus landmarks for one view.
pub fn extract_all(vol: &LabelVolume, frame: usize) -> Result<ContourSet> {
    let c = extract_view_contours(vol, frame)?;
    extract_landmarks(vol, &c, frame)
}
