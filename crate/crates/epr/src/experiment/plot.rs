//! Dependency-free chart rendering: a small RGB canvas with Bresenham lines
//! and a 5x7 bitmap font, plus the four standard figures built from run
//! directories (accuracy vs. budget, accuracy vs. packing factor, buffer
//! informativeness, training time).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::{Error, Result};

use super::{read_run_dirs, RunArtifacts};

pub(crate) type Color = [u8; 3];

const BLACK: Color = [20, 20, 20];
const GRID: Color = [210, 210, 210];
const WHITE: Color = [255, 255, 255];

pub(crate) const PALETTE: [Color; 8] = [
    [214, 69, 65],
    [31, 119, 180],
    [44, 160, 44],
    [255, 127, 14],
    [148, 103, 189],
    [23, 190, 207],
    [140, 86, 75],
    [127, 127, 127],
];

/// Row bitmaps (5 bits wide, 7 rows) for the characters the charts use.
/// Lowercase input is uppercased before lookup.
const FONT: &[(char, [u8; 7])] = &[
    ('A', [0b01110, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('B', [0b11110, 0b10001, 0b10001, 0b11110, 0b10001, 0b10001, 0b11110]),
    ('C', [0b01110, 0b10001, 0b10000, 0b10000, 0b10000, 0b10001, 0b01110]),
    ('D', [0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b11110]),
    ('E', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b11111]),
    ('F', [0b11111, 0b10000, 0b10000, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('G', [0b01110, 0b10001, 0b10000, 0b10111, 0b10001, 0b10001, 0b01111]),
    ('H', [0b10001, 0b10001, 0b10001, 0b11111, 0b10001, 0b10001, 0b10001]),
    ('I', [0b01110, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('J', [0b00111, 0b00010, 0b00010, 0b00010, 0b00010, 0b10010, 0b01100]),
    ('K', [0b10001, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b10001]),
    ('L', [0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b10000, 0b11111]),
    ('M', [0b10001, 0b11011, 0b10101, 0b10101, 0b10001, 0b10001, 0b10001]),
    ('N', [0b10001, 0b11001, 0b10101, 0b10011, 0b10001, 0b10001, 0b10001]),
    ('O', [0b01110, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('P', [0b11110, 0b10001, 0b10001, 0b11110, 0b10000, 0b10000, 0b10000]),
    ('Q', [0b01110, 0b10001, 0b10001, 0b10001, 0b10101, 0b10010, 0b01101]),
    ('R', [0b11110, 0b10001, 0b10001, 0b11110, 0b10100, 0b10010, 0b10001]),
    ('S', [0b01111, 0b10000, 0b10000, 0b01110, 0b00001, 0b00001, 0b11110]),
    ('T', [0b11111, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('U', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01110]),
    ('V', [0b10001, 0b10001, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100]),
    ('W', [0b10001, 0b10001, 0b10001, 0b10101, 0b10101, 0b11011, 0b10001]),
    ('X', [0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b01010, 0b10001]),
    ('Y', [0b10001, 0b10001, 0b01010, 0b00100, 0b00100, 0b00100, 0b00100]),
    ('Z', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b10000, 0b11111]),
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b10001, 0b01110]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110]),
    ('2', [0b01110, 0b10001, 0b00001, 0b00110, 0b01000, 0b10000, 0b11111]),
    ('3', [0b11111, 0b00010, 0b00100, 0b00110, 0b00001, 0b10001, 0b01110]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00010]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b00001, 0b10001, 0b01110]),
    ('6', [0b00110, 0b01000, 0b10000, 0b11110, 0b10001, 0b10001, 0b01110]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b01000]),
    ('8', [0b01110, 0b10001, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00001, 0b00010, 0b01100]),
    ('.', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b01100]),
    ('-', [0b00000, 0b00000, 0b00000, 0b11111, 0b00000, 0b00000, 0b00000]),
    (':', [0b00000, 0b01100, 0b01100, 0b00000, 0b01100, 0b01100, 0b00000]),
    ('/', [0b00001, 0b00010, 0b00100, 0b00100, 0b00100, 0b01000, 0b10000]),
    ('%', [0b11001, 0b11010, 0b00010, 0b00100, 0b01000, 0b01011, 0b10011]),
    ('+', [0b00000, 0b00100, 0b00100, 0b11111, 0b00100, 0b00100, 0b00000]),
    ('=', [0b00000, 0b00000, 0b11111, 0b00000, 0b11111, 0b00000, 0b00000]),
    (',', [0b00000, 0b00000, 0b00000, 0b00000, 0b01100, 0b00100, 0b01000]),
    ('(', [0b00010, 0b00100, 0b01000, 0b01000, 0b01000, 0b00100, 0b00010]),
    (')', [0b01000, 0b00100, 0b00010, 0b00010, 0b00010, 0b00100, 0b01000]),
];

fn glyph(ch: char) -> Option<&'static [u8; 7]> {
    let upper = ch.to_ascii_uppercase();
    FONT.iter().find(|(c, _)| *c == upper).map(|(_, rows)| rows)
}

pub(crate) struct Canvas {
    pub w: usize,
    pub h: usize,
    px: Vec<Color>,
}

impl Canvas {
    pub fn new(w: usize, h: usize) -> Self {
        Canvas {
            w,
            h,
            px: vec![WHITE; w * h],
        }
    }

    pub fn set(&mut self, x: i64, y: i64, color: Color) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = color;
        }
    }

    pub fn line(&mut self, x0: i64, y0: i64, x1: i64, y1: i64, color: Color) {
        let (mut x, mut y) = (x0, y0);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let sx = if x0 < x1 { 1 } else { -1 };
        let sy = if y0 < y1 { 1 } else { -1 };
        let mut err = dx + dy;
        loop {
            self.set(x, y, color);
            if x == x1 && y == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x += sx;
            }
            if e2 <= dx {
                err += dx;
                y += sy;
            }
        }
    }

    pub fn fill_rect(&mut self, x: i64, y: i64, w: i64, h: i64, color: Color) {
        for yy in y..y + h {
            for xx in x..x + w {
                self.set(xx, yy, color);
            }
        }
    }

    pub fn marker(&mut self, x: i64, y: i64, color: Color) {
        self.fill_rect(x - 2, y - 2, 5, 5, color);
    }

    /// Draw ASCII text with the 5x7 font (6px advance); returns end x.
    pub fn text(&mut self, x: i64, y: i64, s: &str, color: Color) -> i64 {
        let mut cx = x;
        for ch in s.chars() {
            if ch != ' ' {
                if let Some(rows) = glyph(ch) {
                    for (ry, bits) in rows.iter().enumerate() {
                        for rx in 0..5 {
                            if bits & (1 << (4 - rx)) != 0 {
                                self.set(cx + rx as i64, y + ry as i64, color);
                            }
                        }
                    }
                }
            }
            cx += 6;
        }
        cx
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut img = image::RgbImage::new(self.w as u32, self.h as u32);
        for y in 0..self.h {
            for x in 0..self.w {
                img.put_pixel(x as u32, y as u32, image::Rgb(self.px[y * self.w + x]));
            }
        }
        img.save(path).map_err(Error::Image)
    }
}

fn text_width(s: &str) -> i64 {
    s.chars().count() as i64 * 6
}

struct Frame {
    left: i64,
    right: i64,
    top: i64,
    bottom: i64,
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> i64 {
        let span = (self.x_max - self.x_min).max(f64::MIN_POSITIVE);
        self.left + ((v - self.x_min) / span * (self.right - self.left) as f64).round() as i64
    }

    fn y(&self, v: f64) -> i64 {
        let span = (self.y_max - self.y_min).max(f64::MIN_POSITIVE);
        self.bottom - ((v - self.y_min) / span * (self.bottom - self.top) as f64).round() as i64
    }
}

fn pad_range(min: f64, max: f64) -> (f64, f64) {
    if min == max {
        (min - 0.5, max + 0.5)
    } else {
        let pad = (max - min) * 0.08;
        (min - pad, max + pad)
    }
}

fn draw_frame(canvas: &mut Canvas, frame: &Frame, title: &str, x_label: &str, y_label: &str) {
    canvas.text(
        (canvas.w as i64 - text_width(title)) / 2,
        8,
        title,
        BLACK,
    );
    canvas.line(frame.left, frame.top, frame.left, frame.bottom, BLACK);
    canvas.line(frame.left, frame.bottom, frame.right, frame.bottom, BLACK);
    canvas.text(
        (frame.left + frame.right - text_width(x_label)) / 2,
        frame.bottom + 24,
        x_label,
        BLACK,
    );
    canvas.text(4, frame.top - 14, y_label, BLACK);
    for i in 0..=4 {
        let v = frame.y_min + (frame.y_max - frame.y_min) * i as f64 / 4.0;
        let y = frame.y(v);
        canvas.line(frame.left + 1, y, frame.right, y, GRID);
        canvas.line(frame.left - 3, y, frame.left, y, BLACK);
        let label = format!("{v:.2}");
        canvas.text(frame.left - 6 - text_width(&label), y - 3, &label, BLACK);
    }
}

/// Mean accuracy per (method, x-value), where x comes from the run config.
fn series_by<F>(runs: &[RunArtifacts], x_of: F) -> BTreeMap<String, Vec<(f64, f64)>>
where
    F: Fn(&RunArtifacts) -> f64,
{
    let mut grouped: BTreeMap<String, BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
    for run in runs {
        let x = x_of(run);
        let slot = grouped
            .entry(run.record.method.clone())
            .or_default()
            .entry(x.to_bits())
            .or_insert((0.0, 0));
        slot.0 += run.record.acc;
        slot.1 += 1;
    }
    grouped
        .into_iter()
        .map(|(method, points)| {
            let mut series: Vec<(f64, f64)> = points
                .into_iter()
                .map(|(bits, (sum, n))| (f64::from_bits(bits), sum / n as f64))
                .collect();
            series.sort_by(|a, b| a.0.total_cmp(&b.0));
            (method, series)
        })
        .collect()
}

fn line_chart(
    series: &BTreeMap<String, Vec<(f64, f64)>>,
    title: &str,
    x_label: &str,
    path: &Path,
) -> Result<()> {
    let points: Vec<(f64, f64)> = series.values().flatten().copied().collect();
    if points.is_empty() {
        return Err(Error::Empty(format!("no data for {title}")));
    }
    let (x_min, x_max) = pad_range(
        points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_min, y_max) = pad_range(
        points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
    );
    let mut canvas = Canvas::new(640, 420);
    let frame = Frame {
        left: 70,
        right: 620,
        top: 40,
        bottom: 360,
        x_min,
        x_max,
        y_min,
        y_max,
    };
    draw_frame(&mut canvas, &frame, title, x_label, "acc");
    // X ticks at every distinct data x.
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    for &v in &xs {
        let x = frame.x(v);
        canvas.line(x, frame.bottom, x, frame.bottom + 3, BLACK);
        let label = format!("{v}");
        canvas.text(x - text_width(&label) / 2, frame.bottom + 8, &label, BLACK);
    }
    let mut legend_y = frame.top + 4;
    for (idx, (method, pts)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        for pair in pts.windows(2) {
            canvas.line(
                frame.x(pair[0].0),
                frame.y(pair[0].1),
                frame.x(pair[1].0),
                frame.y(pair[1].1),
                color,
            );
        }
        for &(x, y) in pts {
            canvas.marker(frame.x(x), frame.y(y), color);
        }
        canvas.fill_rect(frame.left + 12, legend_y, 10, 10, color);
        canvas.text(frame.left + 28, legend_y + 1, method, BLACK);
        legend_y += 14;
    }
    canvas.save(path)
}

fn bar_chart(values: &BTreeMap<String, f64>, title: &str, y_label: &str, path: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Empty(format!("no data for {title}")));
    }
    let max = values.values().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut canvas = Canvas::new(640, 420);
    let frame = Frame {
        left: 70,
        right: 620,
        top: 40,
        bottom: 340,
        x_min: 0.0,
        x_max: 1.0,
        y_min: 0.0,
        y_max: if max <= 0.0 { 1.0 } else { max * 1.1 },
    };
    draw_frame(&mut canvas, &frame, title, "", y_label);
    let n = values.len() as i64;
    let span = frame.right - frame.left;
    let slot = span / n;
    let bar_w = (slot * 3 / 5).max(4);
    for (idx, (method, &value)) in values.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let x0 = frame.left + slot * idx as i64 + (slot - bar_w) / 2;
        let y = frame.y(value.max(0.0));
        canvas.fill_rect(x0, y, bar_w, frame.bottom - y, color);
        let value_label = format!("{value:.3}");
        canvas.text(
            x0 + (bar_w - text_width(&value_label)) / 2,
            y - 12,
            &value_label,
            BLACK,
        );
        let center = x0 + bar_w / 2;
        canvas.text(
            center - text_width(method) / 2,
            frame.bottom + 8 + (idx as i64 % 2) * 12,
            method,
            BLACK,
        );
    }
    canvas.save(path)
}

/// Render the standard figures from finished run directories into
/// `out_dir`: accuracy against the per-class budget and against the packing
/// factor, buffer-informativeness bars (when probed), and per-method
/// training-time bars. Returns the paths written.
pub fn emit_plots(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let runs = read_run_dirs(run_dirs)?;
    if runs.is_empty() {
        return Err(Error::Empty("run set".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    let by_nsc = series_by(&runs, |r| r.config.n_sc);
    let path = out_dir.join("acc_vs_memory.png");
    line_chart(&by_nsc, "accuracy vs memory slots per class", "n", &path)?;
    written.push(path);

    let packing: Vec<RunArtifacts> = runs
        .iter()
        .filter(|r| {
            r.record
                .method
                .parse::<crate::trainer::Method>()
                .map(|m| m.packs_patches())
                .unwrap_or(false)
        })
        .cloned()
        .collect();
    if !packing.is_empty() {
        let by_epf = series_by(&packing, |r| r.config.epf as f64);
        let path = out_dir.join("acc_vs_epf.png");
        line_chart(&by_epf, "accuracy vs patches per slot", "epf", &path)?;
        written.push(path);
    }

    let mut probe: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for run in &runs {
        if let Some(v) = run.record.buffer_informativeness {
            let slot = probe.entry(run.record.method.clone()).or_insert((0.0, 0));
            slot.0 += v;
            slot.1 += 1;
        }
    }
    if !probe.is_empty() {
        let means: BTreeMap<String, f64> = probe
            .into_iter()
            .map(|(m, (sum, n))| (m, sum / n as f64))
            .collect();
        let path = out_dir.join("informativeness.png");
        bar_chart(&means, "buffer informativeness", "acc", &path)?;
        written.push(path);
    }

    let mut timing: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for run in &runs {
        let slot = timing.entry(run.record.method.clone()).or_insert((0.0, 0));
        slot.0 += run.record.wall_clock;
        slot.1 += 1;
    }
    let means: BTreeMap<String, f64> = timing
        .into_iter()
        .map(|(m, (sum, n))| (m, sum / n as f64))
        .collect();
    let path = out_dir.join("timing.png");
    bar_chart(&means, "training wall-clock", "seconds", &path)?;
    written.push(path);

    Ok(written)
}
