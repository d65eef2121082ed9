//! End-diastolic and end-systolic frame selection from LV-cavity voxel counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelgrid::{LabelVolume, Structure, View, ViewSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdPolicy {
    #[default]
    FirstFrame,
    MaxLv,
}

/// The five SAX mid-slices `floor(nz/2) ± 2`, clipped to the volume.
pub fn sax_mid_slices(nz: usize) -> std::ops::Range<usize> {
    let m = nz / 2;
    m.saturating_sub(2)..(m + 3).min(nz)
}

fn view_counts(vol: &LabelVolume) -> Result<Option<Vec<f64>>> {
    let Some(code) = vol.code(Structure::LvCavity) else {
        return Ok(None);
    };
    let slices = if vol.view == View::Sax {
        Some(sax_mid_slices(vol.nz()))
    } else {
        None
    };
    (0..vol.nt())
        .map(|t| vol.count_label(t, code, slices.clone()).map(|c| c as f64))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

/// Per-frame LV-cavity counts summed over all views. With `normalize`, each
/// view's transient is divided by its own maximum before summing.
pub fn lv_transient(views: &ViewSet, normalize: bool) -> Result<Vec<f64>> {
    let nt = views
        .nt()
        .ok_or_else(|| Error::FrameSelection("no views present".into()))?;
    let mut total = vec![0.0; nt];
    for vol in views.volumes.values() {
        let Some(mut counts) = view_counts(vol)? else {
            continue;
        };
        if normalize {
            let max = counts.iter().cloned().fold(0.0, f64::max);
            if max == 0.0 {
                continue;
            }
            counts.iter_mut().for_each(|c| *c /= max);
        }
        for (t, c) in counts.into_iter().enumerate() {
            total[t] += c;
        }
    }
    Ok(total)
}

fn arg_extreme(values: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (t, v) in values.iter().enumerate().skip(1) {
        if better(*v, values[best]) {
            best = t;
        }
    }
    best
}

pub fn select_ed(views: &ViewSet, policy: EdPolicy) -> Result<usize> {
    let counts = lv_transient(views, false)?;
    match policy {
        EdPolicy::FirstFrame => Ok(0),
        EdPolicy::MaxLv => {
            if counts.iter().all(|c| *c == 0.0) {
                return Err(Error::FrameSelection("no LV-cavity label in any view".into()));
            }
            Ok(arg_extreme(&counts, |a, b| a > b))
        }
    }
}

/// Frame minimising the summed LV-cavity counts; ties resolve to the
/// smallest frame index.
pub fn select_es(views: &ViewSet) -> Result<usize> {
    select_es_with(views, false)
}

pub fn select_es_with(views: &ViewSet, normalize: bool) -> Result<usize> {
    let counts = lv_transient(views, normalize)?;
    if counts.iter().all(|c| *c == 0.0) {
        return Err(Error::FrameSelection(
            "LV-cavity counts are zero in every frame".into(),
        ));
    }
    Ok(arg_extreme(&counts, |a, b| a < b))
}
