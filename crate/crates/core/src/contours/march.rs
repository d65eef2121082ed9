//! Marching squares on binary indicator images and 8-connected components.

use std::collections::BTreeMap;

/// A contour vertex at the midpoint of the grid edge between an inside and an
/// outside pixel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgePoint {
    /// Fractional pixel index (i, j).
    pub pos: [f64; 2],
    /// Inside pixel; always within the image.
    pub inside: (usize, usize),
    /// Outside pixel, `None` when it lies beyond the image border.
    pub outside: Option<(usize, usize)>,
}

/// Keeps only the largest 8-connected component of `mask` (ties go to the
/// component met first in scan order). Returns the pixel count kept.
pub fn largest_component(mask: &mut [bool], nx: usize, ny: usize) -> usize {
    let mut label = vec![0u32; mask.len()];
    let mut best = (0u32, 0usize);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start] != 0 {
            continue;
        }
        next += 1;
        label[start] = next;
        stack.push(start);
        let mut size = 0;
        while let Some(p) = stack.pop() {
            size += 1;
            let (i, j) = ((p % nx) as i64, (p / nx) as i64);
            for dj in -1..=1 {
                for di in -1..=1 {
                    let (a, b) = (i + di, j + dj);
                    if a < 0 || b < 0 || a >= nx as i64 || b >= ny as i64 {
                        continue;
                    }
                    let q = a as usize + nx * b as usize;
                    if mask[q] && label[q] == 0 {
                        label[q] = next;
                        stack.push(q);
                    }
                }
            }
        }
        if size > best.1 {
            best = (next, size);
        }
    }
    for (m, l) in mask.iter_mut().zip(&label) {
        *m = *m && *l == best.0;
    }
    best.1
}

// Grid edge ids in padded coordinates: horizontal edges join (x,y)-(x+1,y),
// vertical edges join (x,y)-(x,y+1).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum GridEdge {
    H(usize, usize),
    V(usize, usize),
}

/// Traces the 0.5 iso-contours of a binary image. Foreground is treated as
/// 8-connected, so saddle cells join their diagonal foreground corners.
/// Loops are oriented counter-clockwise around the foreground in (i, j)
/// space: outer boundaries have positive area, holes negative.
pub fn trace_loops(mask: &[bool], nx: usize, ny: usize) -> Vec<Vec<EdgePoint>> {
    let (px, py) = (nx + 2, ny + 2);
    let at = |x: usize, y: usize| -> bool {
        if x == 0 || y == 0 || x > nx || y > ny {
            false
        } else {
            mask[(x - 1) + nx * (y - 1)]
        }
    };
    let mut next: BTreeMap<GridEdge, GridEdge> = BTreeMap::new();
    for y in 0..py - 1 {
        for x in 0..px - 1 {
            let c = [at(x, y), at(x + 1, y), at(x + 1, y + 1), at(x, y + 1)];
            let e = [
                GridEdge::H(x, y),
                GridEdge::V(x + 1, y),
                GridEdge::H(x, y + 1),
                GridEdge::V(x, y),
            ];
            let case = c.iter().enumerate().fold(0u8, |acc, (k, v)| acc | ((*v as u8) << k));
            let segs: &[(usize, usize)] = match case {
                0 | 15 => &[],
                1 => &[(0, 3)],
                2 => &[(1, 0)],
                4 => &[(2, 1)],
                8 => &[(3, 2)],
                14 => &[(3, 0)],
                13 => &[(0, 1)],
                11 => &[(1, 2)],
                7 => &[(2, 3)],
                3 => &[(1, 3)],
                6 => &[(2, 0)],
                12 => &[(3, 1)],
                9 => &[(0, 2)],
                5 => &[(0, 1), (2, 3)],
                10 => &[(3, 0), (1, 2)],
                _ => unreachable!(),
            };
            for &(a, b) in segs {
                next.insert(e[a], e[b]);
            }
        }
    }

    let point = |edge: GridEdge| -> EdgePoint {
        let (p, q, pos) = match edge {
            GridEdge::H(x, y) => ((x, y), (x + 1, y), [x as f64 + 0.5, y as f64]),
            GridEdge::V(x, y) => ((x, y), (x, y + 1), [x as f64, y as f64 + 0.5]),
        };
        let (inside, outside) = if at(p.0, p.1) { (p, q) } else { (q, p) };
        let unpad = |(x, y): (usize, usize)| -> Option<(usize, usize)> {
            if x == 0 || y == 0 || x > nx || y > ny {
                None
            } else {
                Some((x - 1, y - 1))
            }
        };
        EdgePoint {
            pos: [pos[0] - 1.0, pos[1] - 1.0],
            inside: unpad(inside).expect("inside pixel within the image"),
            outside: unpad(outside),
        }
    };

    let mut loops = Vec::new();
    while let Some((&start, _)) = next.iter().next() {
        let mut lp = Vec::new();
        let mut cur = start;
        while let Some(n) = next.remove(&cur) {
            lp.push(point(cur));
            cur = n;
        }
        loops.push(lp);
    }
    loops
}

pub fn loop_area(lp: &[EdgePoint]) -> f64 {
    let pts: Vec<[f64; 2]> = lp.iter().map(|p| p.pos).collect();
    crate::geometry::polygon_area_2d(&pts)
}
