//! Raster output: class maps, marked aerial views and trajectory plots.
//!
//! Images put +y up, so pixel row 0 is the top edge of the map.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::global::MarkedAerialImage;
use crate::harness::MethodVariant;
use crate::world::{Point, ScenarioConfig, TerrainClass, WorldGrid};

const OBSTACLE: Rgb<u8> = Rgb([20, 20, 20]);

/// One block of `px × px` pixels per cell, coloured by class appearance.
pub fn class_raster(grid: &WorldGrid, classes: &[TerrainClass], px: u32) -> RgbImage {
    let (w, h) = (grid.width as u32 * px, grid.height as u32 * px);
    RgbImage::from_fn(w, h, |x, y| {
        let col = (x / px) as usize;
        let row = grid.height - 1 - (y / px) as usize;
        let i = grid.index(col, row);
        if grid.obstacles[i] {
            OBSTACLE
        } else {
            Rgb(classes[grid.cells[i]].appearance)
        }
    })
}

struct Canvas<'a> {
    img: &'a mut RgbImage,
    scale: f64,
}

impl Canvas<'_> {
    fn to_px(&self, p: Point) -> (f64, f64) {
        (p.x * self.scale, self.img.height() as f64 - p.y * self.scale)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        if x >= 0 && y >= 0 && (x as u32) < self.img.width() && (y as u32) < self.img.height() {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn disc(&mut self, cx: f64, cy: f64, r: f64, c: Rgb<u8>) {
        let ri = r.ceil() as i64;
        for dy in -ri..=ri {
            for dx in -ri..=ri {
                if ((dx * dx + dy * dy) as f64) <= r * r {
                    self.put(cx as i64 + dx, cy as i64 + dy, c);
                }
            }
        }
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), width: f64, c: Rgb<u8>) {
        let n = ((b.0 - a.0).abs().max((b.1 - a.1).abs()).ceil() as usize).max(1);
        for k in 0..=n {
            let f = k as f64 / n as f64;
            self.disc(a.0 + (b.0 - a.0) * f, a.1 + (b.1 - a.1) * f, width / 2.0, c);
        }
    }

    fn star(&mut self, cx: f64, cy: f64, r: f64, c: Rgb<u8>) {
        let verts: Vec<(f64, f64)> = (0..10)
            .map(|k| {
                let a = -std::f64::consts::FRAC_PI_2 + k as f64 * std::f64::consts::PI / 5.0;
                let rr = if k % 2 == 0 { r } else { r * 0.45 };
                (cx + rr * a.cos(), cy + rr * a.sin())
            })
            .collect();
        let ri = r.ceil() as i64;
        for y in (cy as i64 - ri)..=(cy as i64 + ri) {
            for x in (cx as i64 - ri)..=(cx as i64 + ri) {
                if inside(&verts, x as f64 + 0.5, y as f64 + 0.5) {
                    self.put(x, y, c);
                }
            }
        }
    }

    fn text(&mut self, s: &str, cx: f64, cy: f64, dot: i64, c: Rgb<u8>) {
        let w = s.len() as i64 * 4 * dot - dot;
        let x0 = cx as i64 - w / 2;
        let y0 = cy as i64 - 5 * dot / 2;
        for (k, ch) in s.chars().enumerate() {
            let Some(d) = ch.to_digit(10) else { continue };
            for (row, bits) in DIGITS[d as usize].iter().enumerate() {
                for col in 0..3 {
                    if bits & (0b100 >> col) != 0 {
                        for yy in 0..dot {
                            for xx in 0..dot {
                                self.put(
                                    x0 + (k as i64 * 4 + col) * dot + xx,
                                    y0 + row as i64 * dot + yy,
                                    c,
                                );
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Even-odd point-in-polygon test.
fn inside(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut hit = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            hit = !hit;
        }
        j = i;
    }
    hit
}

/// 3×5 bitmap digits, one row per entry, MSB on the left.
const DIGITS: [[u8; 5]; 10] = [
    [0b111, 0b101, 0b101, 0b101, 0b111],
    [0b010, 0b110, 0b010, 0b010, 0b111],
    [0b111, 0b001, 0b111, 0b100, 0b111],
    [0b111, 0b001, 0b111, 0b001, 0b111],
    [0b101, 0b101, 0b111, 0b001, 0b001],
    [0b111, 0b100, 0b111, 0b001, 0b111],
    [0b111, 0b100, 0b111, 0b101, 0b111],
    [0b111, 0b001, 0b010, 0b010, 0b010],
    [0b111, 0b101, 0b111, 0b101, 0b111],
    [0b111, 0b101, 0b111, 0b001, 0b111],
];

pub fn variant_color(v: MethodVariant) -> Rgb<u8> {
    match v {
        MethodVariant::Full => Rgb([220, 30, 30]),
        MethodVariant::NoGp => Rgb([30, 90, 220]),
        MethodVariant::NoIcl => Rgb([240, 160, 0]),
        MethodVariant::Dwa => Rgb([150, 0, 170]),
    }
}

const START: Rgb<u8> = Rgb([0, 200, 60]);
const GOAL: Rgb<u8> = Rgb([255, 215, 0]);

/// Class map with numbered waypoint markers; start and goal markers are
/// tinted.
pub fn marked_aerial(grid: &WorldGrid, classes: &[TerrainClass], marked: &MarkedAerialImage, px: u32) -> RgbImage {
    let mut img = class_raster(grid, classes, px);
    let scale = px as f64 / grid.resolution;
    let mut cv = Canvas { img: &mut img, scale };
    let dot = ((px as i64) / 4).max(1);
    for id in marked.graph.ids() {
        let (x, y) = cv.to_px(marked.graph.position(id));
        let digits = id.to_string().len() as f64;
        let r = (digits * 4.0 * dot as f64) / 2.0 + 2.0 * dot as f64;
        let fill = if id == marked.start_id {
            START
        } else if id == marked.goal_id {
            GOAL
        } else {
            Rgb([255, 255, 255])
        };
        cv.disc(x, y, r + 1.0, Rgb([0, 0, 0]));
        cv.disc(x, y, r, fill);
        cv.text(&id.to_string(), x, y, dot, Rgb([0, 0, 0]));
    }
    img
}

/// Class map with one polyline per variant and star markers at start (green)
/// and goal (gold).
pub fn trajectory_plot(scenario: &ScenarioConfig, paths: &[(MethodVariant, &[Point])], px: u32) -> RgbImage {
    let mut img = class_raster(&scenario.grid, &scenario.classes, px);
    let scale = px as f64 / scenario.grid.resolution;
    let mut cv = Canvas { img: &mut img, scale };
    let width = (px as f64 / 3.0).max(1.5);
    for (v, pts) in paths {
        let c = variant_color(*v);
        for w in pts.windows(2) {
            let (a, b) = (cv.to_px(w[0]), cv.to_px(w[1]));
            cv.line(a, b, width, c);
        }
    }
    let r = px as f64 * 2.0;
    for (p, c) in [(scenario.start, START), (scenario.goal, GOAL)] {
        let (x, y) = cv.to_px(p);
        cv.star(x, y, r + 2.0, Rgb([0, 0, 0]));
        cv.star(x, y, r, c);
    }
    img
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn save_png(img: &RgbImage, path: &Path) -> Result<()> {
    let bytes = encode_png(img)?;
    std::fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}
