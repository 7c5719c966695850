//! Tile binning and per-pixel front-to-back compositing.

use rayon::prelude::*;

use super::project::{Projected, ScreenGrad};
use super::{footprint, RenderAux, ALPHA_CAP, TILE_SIZE};
use crate::frame::ImageFrame;
use crate::math::Intrinsics;

struct Tile {
    x0: u32,
    y0: u32,
    x1: u32,
    y1: u32,
    /// Indices into the depth-sorted splat list.
    splats: Vec<usize>,
}

fn bin(visible: &[Projected], intr: &Intrinsics) -> Vec<Tile> {
    let tiles_x = intr.width.div_ceil(TILE_SIZE);
    let tiles_y = intr.height.div_ceil(TILE_SIZE);
    let mut tiles: Vec<Tile> = (0..tiles_y)
        .flat_map(|ty| (0..tiles_x).map(move |tx| (tx, ty)))
        .map(|(tx, ty)| Tile {
            x0: tx * TILE_SIZE,
            y0: ty * TILE_SIZE,
            x1: ((tx + 1) * TILE_SIZE).min(intr.width),
            y1: ((ty + 1) * TILE_SIZE).min(intr.height),
            splats: Vec::new(),
        })
        .collect();
    for (k, p) in visible.iter().enumerate() {
        for ty in p.y0 / TILE_SIZE..=p.y1 / TILE_SIZE {
            for tx in p.x0 / TILE_SIZE..=p.x1 / TILE_SIZE {
                tiles[(ty * tiles_x + tx) as usize].splats.push(k);
            }
        }
    }
    tiles
}

struct Hit {
    slot: usize,
    alpha: f64,
    /// Transmittance before this splat.
    trans: f64,
    w: f64,
    dw: f64,
    dx: f64,
    dy: f64,
}

#[inline]
fn hit(p: &Projected, px: f64, py: f64) -> Option<(f64, f64, f64, f64, f64, bool)> {
    let dx = px - p.mean.x;
    let dy = py - p.mean.y;
    let [a, b, c] = p.conic;
    let d2 = a * dx * dx + 2.0 * b * dx * dy + c * dy * dy;
    let (w, dw) = footprint(d2);
    if w <= 0.0 {
        return None;
    }
    let raw = p.opacity * w;
    let capped = raw >= ALPHA_CAP;
    Some((raw.min(ALPHA_CAP), w, dw, dx, dy, capped))
}

pub(super) fn forward(visible: &[Projected], intr: &Intrinsics, bg: [f64; 3]) -> (ImageFrame, RenderAux) {
    let tiles = bin(visible, intr);
    let shaded: Vec<Vec<([f64; 3], f64, f64)>> = tiles
        .par_iter()
        .map(|tile| {
            let mut out = Vec::with_capacity(((tile.x1 - tile.x0) * (tile.y1 - tile.y0)) as usize);
            for y in tile.y0..tile.y1 {
                for x in tile.x0..tile.x1 {
                    let mut trans = 1.0;
                    let mut rgb = [0.0; 3];
                    let mut depth = 0.0;
                    for &k in &tile.splats {
                        let p = &visible[k];
                        let Some((alpha, ..)) = hit(p, x as f64, y as f64) else { continue };
                        let wgt = alpha * trans;
                        for ch in 0..3 {
                            rgb[ch] += p.color[ch] * wgt;
                        }
                        depth += p.depth * wgt;
                        trans *= 1.0 - alpha;
                    }
                    for ch in 0..3 {
                        rgb[ch] = (rgb[ch] + bg[ch] * trans).clamp(0.0, 1.0);
                    }
                    let acc = 1.0 - trans;
                    let depth = if acc > 0.0 { depth / acc } else { f64::INFINITY };
                    out.push((rgb, acc, depth));
                }
            }
            out
        })
        .collect();

    let (w, h) = (intr.width, intr.height);
    let mut frame = ImageFrame::filled(w, h, [0.0; 3]);
    let mut aux = RenderAux {
        width: w,
        height: h,
        alpha: vec![0.0; (w * h) as usize],
        depth: vec![f64::INFINITY; (w * h) as usize],
    };
    for (tile, px) in tiles.iter().zip(shaded) {
        let mut it = px.into_iter();
        for y in tile.y0..tile.y1 {
            for x in tile.x0..tile.x1 {
                let (rgb, a, d) = it.next().expect("one value per pixel");
                frame.set_pixel(x, y, rgb);
                aux.alpha[(y * w + x) as usize] = a;
                aux.depth[(y * w + x) as usize] = d;
            }
        }
    }
    (frame, aux)
}

pub(super) fn backward(visible: &[Projected], intr: &Intrinsics, bg: [f64; 3], grad: &ImageFrame) -> Vec<ScreenGrad> {
    let tiles = bin(visible, intr);
    let partials: Vec<Vec<ScreenGrad>> = tiles
        .par_iter()
        .map(|tile| {
            let mut local = vec![ScreenGrad::default(); tile.splats.len()];
            let mut hits: Vec<Hit> = Vec::new();
            for y in tile.y0..tile.y1 {
                for x in tile.x0..tile.x1 {
                    let g = grad.pixel(x, y);
                    if g == [0.0; 3] {
                        continue;
                    }
                    hits.clear();
                    let mut trans = 1.0;
                    let mut rgb = [0.0; 3];
                    for (slot, &k) in tile.splats.iter().enumerate() {
                        let p = &visible[k];
                        let Some((alpha, w, dw, dx, dy, capped)) = hit(p, x as f64, y as f64) else {
                            continue;
                        };
                        for ch in 0..3 {
                            rgb[ch] += p.color[ch] * alpha * trans;
                        }
                        // A capped alpha no longer depends on the footprint or opacity.
                        let (w, dw) = if capped { (0.0, 0.0) } else { (w, dw) };
                        hits.push(Hit { slot, alpha, trans, w, dw, dx, dy });
                        trans *= 1.0 - alpha;
                    }
                    // The output clamp passes gradient only where it is inactive.
                    let g: [f64; 3] = std::array::from_fn(|ch| {
                        let c = rgb[ch] + bg[ch] * trans;
                        if (0.0..=1.0).contains(&c) {
                            g[ch]
                        } else {
                            0.0
                        }
                    });

                    let mut behind = bg.map(|b| b * trans);
                    for h in hits.iter().rev() {
                        let p = &visible[tile.splats[h.slot]];
                        let sg = &mut local[h.slot];
                        let mut g_alpha = 0.0;
                        for ch in 0..3 {
                            sg.color[ch] += g[ch] * h.alpha * h.trans;
                            g_alpha += g[ch] * (p.color[ch] * h.trans - behind[ch] / (1.0 - h.alpha));
                            behind[ch] += p.color[ch] * h.alpha * h.trans;
                        }
                        if h.w == 0.0 {
                            continue;
                        }
                        sg.opacity_logit += g_alpha * h.w * p.opacity * (1.0 - p.opacity);
                        let g_d2 = g_alpha * p.opacity * h.dw;
                        let [a, b, c] = p.conic;
                        sg.mean[0] -= g_d2 * 2.0 * (a * h.dx + b * h.dy);
                        sg.mean[1] -= g_d2 * 2.0 * (b * h.dx + c * h.dy);
                        sg.conic[0] += g_d2 * h.dx * h.dx;
                        sg.conic[1] += g_d2 * 2.0 * h.dx * h.dy;
                        sg.conic[2] += g_d2 * h.dy * h.dy;
                    }
                }
            }
            local
        })
        .collect();

    let mut out = vec![ScreenGrad::default(); visible.len()];
    for (tile, local) in tiles.iter().zip(&partials) {
        for (&k, sg) in tile.splats.iter().zip(local) {
            out[k].add(sg);
        }
    }
    out
}
