use std::path::Path;

use image::{Rgb, RgbImage};

// 5x7 bitmap glyphs; each row is a 5-bit pattern, MSB leftmost.
const GLYPHS: &[(char, [u8; 7])] = &[
    ('a', [0b00000, 0b01110, 0b00001, 0b01111, 0b10001, 0b01111, 0b00000]),
    ('b', [0b10000, 0b10000, 0b11110, 0b10001, 0b10001, 0b11110, 0b00000]),
    ('c', [0b00000, 0b01110, 0b10000, 0b10000, 0b10000, 0b01110, 0b00000]),
    ('d', [0b00001, 0b00001, 0b01111, 0b10001, 0b10001, 0b01111, 0b00000]),
    ('e', [0b00000, 0b01110, 0b10001, 0b11111, 0b10000, 0b01110, 0b00000]),
    ('f', [0b00110, 0b01000, 0b11110, 0b01000, 0b01000, 0b01000, 0b00000]),
    ('g', [0b00000, 0b01111, 0b10001, 0b01111, 0b00001, 0b01110, 0b00000]),
    ('h', [0b10000, 0b10000, 0b11110, 0b10001, 0b10001, 0b10001, 0b00000]),
    ('i', [0b00100, 0b00000, 0b01100, 0b00100, 0b00100, 0b01110, 0b00000]),
    ('j', [0b00010, 0b00000, 0b00110, 0b00010, 0b10010, 0b01100, 0b00000]),
    ('k', [0b10000, 0b10010, 0b10100, 0b11000, 0b10100, 0b10010, 0b00000]),
    ('l', [0b01100, 0b00100, 0b00100, 0b00100, 0b00100, 0b01110, 0b00000]),
    ('m', [0b00000, 0b11010, 0b10101, 0b10101, 0b10101, 0b10101, 0b00000]),
    ('n', [0b00000, 0b11110, 0b10001, 0b10001, 0b10001, 0b10001, 0b00000]),
    ('o', [0b00000, 0b01110, 0b10001, 0b10001, 0b10001, 0b01110, 0b00000]),
    ('p', [0b00000, 0b11110, 0b10001, 0b11110, 0b10000, 0b10000, 0b00000]),
    ('q', [0b00000, 0b01111, 0b10001, 0b01111, 0b00001, 0b00001, 0b00000]),
    ('r', [0b00000, 0b10110, 0b11000, 0b10000, 0b10000, 0b10000, 0b00000]),
    ('s', [0b00000, 0b01111, 0b10000, 0b01110, 0b00001, 0b11110, 0b00000]),
    ('t', [0b01000, 0b11110, 0b01000, 0b01000, 0b01001, 0b00110, 0b00000]),
    ('u', [0b00000, 0b10001, 0b10001, 0b10001, 0b10011, 0b01101, 0b00000]),
    ('v', [0b00000, 0b10001, 0b10001, 0b10001, 0b01010, 0b00100, 0b00000]),
    ('w', [0b00000, 0b10101, 0b10101, 0b10101, 0b10101, 0b01010, 0b00000]),
    ('x', [0b00000, 0b10001, 0b01010, 0b00100, 0b01010, 0b10001, 0b00000]),
    ('y', [0b00000, 0b10001, 0b01010, 0b00100, 0b01000, 0b10000, 0b00000]),
    ('z', [0b00000, 0b11111, 0b00010, 0b00100, 0b01000, 0b11111, 0b00000]),
    ('0', [0b01110, 0b10001, 0b10011, 0b10101, 0b11001, 0b01110, 0b00000]),
    ('1', [0b00100, 0b01100, 0b00100, 0b00100, 0b00100, 0b01110, 0b00000]),
    ('2', [0b01110, 0b10001, 0b00010, 0b00100, 0b01000, 0b11111, 0b00000]),
    ('3', [0b11110, 0b00001, 0b00110, 0b00001, 0b10001, 0b01110, 0b00000]),
    ('4', [0b00010, 0b00110, 0b01010, 0b10010, 0b11111, 0b00010, 0b00000]),
    ('5', [0b11111, 0b10000, 0b11110, 0b00001, 0b10001, 0b01110, 0b00000]),
    ('6', [0b00110, 0b01000, 0b11110, 0b10001, 0b10001, 0b01110, 0b00000]),
    ('7', [0b11111, 0b00001, 0b00010, 0b00100, 0b01000, 0b01000, 0b00000]),
    ('8', [0b01110, 0b10001, 0b01110, 0b10001, 0b10001, 0b01110, 0b00000]),
    ('9', [0b01110, 0b10001, 0b10001, 0b01111, 0b00010, 0b01100, 0b00000]),
    ('.', [0b00000, 0b00000, 0b00000, 0b00000, 0b00000, 0b00100, 0b00000]),
    ('-', [0b00000, 0b00000, 0b00000, 0b01110, 0b00000, 0b00000, 0b00000]),
    (' ', [0b00000; 7]),
];

fn glyph(c: char) -> [u8; 7] {
    GLYPHS
        .iter()
        .find(|(g, _)| *g == c)
        .map(|(_, rows)| *rows)
        .unwrap_or([0b11111; 7])
}

fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for ch in text.chars() {
        let rows = glyph(ch.to_ascii_lowercase());
        for (ri, row) in rows.iter().enumerate() {
            for bit in 0..5 {
                if row & (1 << (4 - bit)) != 0 {
                    put(img, cx + bit, y + ri as i32, color);
                }
            }
        }
        cx += 6;
    }
}

fn put(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

fn draw_line(img: &mut RgbImage, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb<u8>) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
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

fn marker(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>) {
    for dy in -2..=2 {
        for dx in -2..=2 {
            put(img, x + dx, y + dy, color);
        }
    }
}

const SERIES_COLORS: [Rgb<u8>; 4] = [
    Rgb([214, 69, 65]),   // iou
    Rgb([31, 119, 180]),  // dice
    Rgb([44, 160, 44]),   // recall
    Rgb([255, 127, 14]),  // precision
];

/// Renders metric-vs-ratio polylines (values in [0,1]) with tick labels and
/// a legend, and writes a PNG. Self-contained rasterizer: no font or GUI
/// dependencies, identical bytes for identical inputs.
pub fn render_metric_lines(
    path: &Path,
    title: &str,
    x_labels: &[String],
    series: &[(&str, Vec<f64>)],
) -> Result<(), std::io::Error> {
    let (width, height) = (640u32, 480u32);
    let (left, right, top, bottom) = (60i32, 150i32, 40i32, 50i32);
    let plot_w = width as i32 - left - right;
    let plot_h = height as i32 - top - bottom;
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let axis = Rgb([40, 40, 40]);
    let grid = Rgb([225, 225, 225]);

    let n = x_labels.len().max(1);
    let x_of = |i: usize| -> i32 {
        if n == 1 {
            left + plot_w / 2
        } else {
            left + (i as f64 / (n - 1) as f64 * plot_w as f64) as i32
        }
    };
    let y_of = |v: f64| -> i32 { top + ((1.0 - v.clamp(0.0, 1.0)) * plot_h as f64) as i32 };

    // horizontal grid + y tick labels at 0.0 .. 1.0
    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y_of(v);
        draw_line(&mut img, left, y, left + plot_w, y, grid);
        draw_text(&mut img, left - 30, y - 3, &format!("{v:.1}"), axis);
    }
    // axes
    draw_line(&mut img, left, top, left, top + plot_h, axis);
    draw_line(&mut img, left, top + plot_h, left + plot_w, top + plot_h, axis);
    // x tick labels
    for (i, label) in x_labels.iter().enumerate() {
        let x = x_of(i);
        draw_line(&mut img, x, top + plot_h, x, top + plot_h + 4, axis);
        let tw = (label.len() as i32) * 6;
        draw_text(&mut img, x - tw / 2, top + plot_h + 10, label, axis);
    }
    draw_text(&mut img, left, 15, title, axis);

    for (si, (name, values)) in series.iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let pts: Vec<(i32, i32)> = values
            .iter()
            .enumerate()
            .map(|(i, v)| (x_of(i), y_of(*v)))
            .collect();
        for pair in pts.windows(2) {
            draw_line(&mut img, pair[0].0, pair[0].1, pair[1].0, pair[1].1, color);
        }
        for &(x, y) in &pts {
            marker(&mut img, x, y, color);
        }
        // legend
        let ly = top + 12 * si as i32;
        let lx = left + plot_w + 14;
        for dy in 0..7 {
            draw_line(&mut img, lx, ly + dy, lx + 8, ly + dy, color);
        }
        draw_text(&mut img, lx + 12, ly, name, axis);
    }

    img.save(path)
        .map_err(|e| std::io::Error::other(format!("png encode failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_a_decodable_png() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("plot.png");
        let labels = vec!["0.1".to_string(), "0.3".to_string(), "0.8".to_string()];
        let series = [
            ("iou", vec![0.4, 0.6, 0.7]),
            ("dice", vec![0.5, 0.7, 0.8]),
        ];
        render_metric_lines(&path, "sweep labeled", &labels, &series).unwrap();
        let img = image::open(&path).unwrap();
        assert_eq!(img.width(), 640);
        assert_eq!(img.height(), 480);
        // identical inputs render identical bytes
        let path2 = tmp.path().join("plot2.png");
        render_metric_lines(&path2, "sweep labeled", &labels, &series).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }
}
