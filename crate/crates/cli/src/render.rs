//! Raster output: feature-map PNGs, contact sheets, DET plots on
//! normal-deviate axes and LOO summary bar charts.

use image::{DynamicImage, GrayImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use smad_core::metrics::DetCurve;
use smad_core::protocol::Summary;
use smad_core::FeatureMap;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::font::{draw_text, text_width, GLYPH_H};

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);
const GRID: Rgb<u8> = Rgb([215, 215, 215]);

/// Distinct line and bar colours.
pub const PALETTE: [Rgb<u8>; 14] = [
    Rgb([31, 119, 180]),
    Rgb([255, 127, 14]),
    Rgb([44, 160, 44]),
    Rgb([214, 39, 40]),
    Rgb([148, 103, 189]),
    Rgb([140, 86, 75]),
    Rgb([227, 119, 194]),
    Rgb([127, 127, 127]),
    Rgb([188, 189, 34]),
    Rgb([23, 190, 207]),
    Rgb([0, 0, 128]),
    Rgb([128, 0, 0]),
    Rgb([0, 100, 0]),
    Rgb([255, 215, 0]),
];

/// Display metadata written next to each rendered map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub id: String,
    pub method: String,
    pub width: u32,
    pub height: u32,
    pub channels: u32,
    pub display_range: (f64, f64),
}

/// 8-bit rendering of a map: grayscale, or RGB for 3-channel maps.
pub fn map_image(map: &FeatureMap) -> DynamicImage {
    if map.channels == 3 {
        let planes: Vec<Vec<u8>> = (0..3).map(|c| map.to_u8(c)).collect();
        let img = RgbImage::from_fn(map.width, map.height, |x, y| {
            let i = (y * map.width + x) as usize;
            Rgb([planes[0][i], planes[1][i], planes[2][i]])
        });
        DynamicImage::ImageRgb8(img)
    } else {
        let img = GrayImage::from_raw(map.width, map.height, map.to_u8(0))
            .expect("map buffer matches its dimensions");
        DynamicImage::ImageLuma8(img)
    }
}

pub fn encode_png(img: &DynamicImage) -> image::ImageResult<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, image::ImageFormat::Png)?;
    Ok(buf.into_inner())
}

/// Grid geometry of a contact sheet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SheetLayout {
    pub columns: u32,
    pub rows: u32,
    pub tile_width: u32,
    pub tile_height: u32,
    pub label_height: u32,
    pub padding: u32,
}

impl SheetLayout {
    pub fn for_tiles(sizes: &[(u32, u32)], max_columns: u32) -> Self {
        let n = sizes.len().max(1) as u32;
        let columns = n.min(max_columns.max(1));
        Self {
            columns,
            rows: n.div_ceil(columns),
            tile_width: sizes.iter().map(|s| s.0).max().unwrap_or(1),
            tile_height: sizes.iter().map(|s| s.1).max().unwrap_or(1),
            label_height: GLYPH_H + 6,
            padding: 4,
        }
    }

    pub fn dimensions(&self) -> (u32, u32) {
        let cell_w = self.tile_width + self.padding;
        let cell_h = self.tile_height + self.label_height + self.padding;
        (
            self.columns * cell_w + self.padding,
            self.rows * cell_h + self.padding,
        )
    }

    fn origin(&self, index: u32) -> (u32, u32) {
        let (c, r) = (index % self.columns, index / self.columns);
        (
            self.padding + c * (self.tile_width + self.padding),
            self.padding + r * (self.tile_height + self.label_height + self.padding),
        )
    }
}

/// Tiles in the given order, row-major, each labelled underneath.
pub fn contact_sheet(
    tiles: &[(String, DynamicImage)],
    max_columns: u32,
) -> (RgbImage, SheetLayout) {
    let sizes: Vec<(u32, u32)> = tiles.iter().map(|t| (t.1.width(), t.1.height())).collect();
    let layout = SheetLayout::for_tiles(&sizes, max_columns);
    let (w, h) = layout.dimensions();
    let mut sheet = RgbImage::from_pixel(w, h, WHITE);
    for (i, (label, tile)) in tiles.iter().enumerate() {
        let (ox, oy) = layout.origin(i as u32);
        let rgb = tile.to_rgb8();
        image::imageops::replace(&mut sheet, &rgb, ox as i64, oy as i64);
        draw_text(
            &mut sheet,
            ox as i64,
            (oy + layout.tile_height + 3) as i64,
            label,
            BLACK,
            1,
        );
    }
    (sheet, layout)
}

fn line(
    img: &mut RgbImage,
    (x0, y0): (f64, f64),
    (x1, y1): (f64, f64),
    color: Rgb<u8>,
    width: i64,
) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        for dy in 0..width {
            for dx in 0..width {
                let (px, py) = (
                    x.round() as i64 + dx - width / 2,
                    y.round() as i64 + dy - width / 2,
                );
                if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    }
}

fn fill_rect(img: &mut RgbImage, x0: i64, y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    for y in y0.max(0)..y1.min(img.height() as i64) {
        for x in x0.max(0)..x1.min(img.width() as i64) {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// One DET curve with its legend label.
pub struct DetSeries<'a> {
    pub label: String,
    pub curve: &'a DetCurve,
    pub eer: f64,
}

/// Legend text in the "label (EER%)" convention.
pub fn det_legend(label: &str, eer: f64) -> String {
    format!("{label} ({:.2}%)", eer * 100.0)
}

const DET_MIN: f64 = 0.0005;
const DET_MAX: f64 = 0.95;
const DET_TICKS: [f64; 10] = [0.001, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4, 0.6, 0.8];

/// DET plot, APCER on x and BPCER on y, both on a normal-deviate scale.
pub fn det_plot(title: &str, series: &[DetSeries<'_>]) -> RgbImage {
    let (w, h) = (640u32, 560u32);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 60.0);
    let mut img = RgbImage::from_pixel(w, h, WHITE);
    let normal = Normal::standard();
    let probit = |p: f64| normal.inverse_cdf(p.clamp(DET_MIN, DET_MAX));
    let (lo, hi) = (probit(DET_MIN), probit(DET_MAX));
    let pw = w as f64 - left - right;
    let ph = h as f64 - top - bottom;
    let sx = |p: f64| left + (probit(p) - lo) / (hi - lo) * pw;
    let sy = |p: f64| top + ph - (probit(p) - lo) / (hi - lo) * ph;

    for &t in &DET_TICKS {
        line(&mut img, (sx(t), top), (sx(t), top + ph), GRID, 1);
        line(&mut img, (left, sy(t)), (left + pw, sy(t)), GRID, 1);
        let label = tick_label(t);
        let tw = text_width(&label, 1) as f64;
        draw_text(
            &mut img,
            (sx(t) - tw / 2.0) as i64,
            (top + ph + 6.0) as i64,
            &label,
            BLACK,
            1,
        );
        draw_text(
            &mut img,
            (left - tw - 6.0) as i64,
            (sy(t) - 3.0) as i64,
            &label,
            BLACK,
            1,
        );
    }
    line(&mut img, (left, top), (left, top + ph), BLACK, 1);
    line(&mut img, (left, top + ph), (left + pw, top + ph), BLACK, 1);
    line(&mut img, (left + pw, top), (left + pw, top + ph), BLACK, 1);
    line(&mut img, (left, top), (left + pw, top), BLACK, 1);
    // APCER = BPCER diagonal
    line(
        &mut img,
        (sx(DET_MIN), sy(DET_MIN)),
        (sx(DET_MAX), sy(DET_MAX)),
        GRID,
        1,
    );

    let xl = "APCER (%)";
    draw_text(
        &mut img,
        (left + pw / 2.0) as i64 - text_width(xl, 1) as i64 / 2,
        h as i64 - 22,
        xl,
        BLACK,
        1,
    );
    draw_text(&mut img, 6, (top - 14.0) as i64, "BPCER (%)", BLACK, 1);
    draw_text(
        &mut img,
        (w as i64 - text_width(title, 2) as i64) / 2,
        8,
        title,
        BLACK,
        2,
    );

    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<(f64, f64)> = s
            .curve
            .points
            .iter()
            .map(|p| (sx(p.apcer), sy(p.bpcer)))
            .collect();
        for seg in pts.windows(2) {
            line(&mut img, seg[0], seg[1], color, 2);
        }
        let ly = top as i64 + 10 + i as i64 * 14;
        let lx = (left + pw) as i64 - 200;
        fill_rect(&mut img, lx, ly, lx + 12, ly + 7, color);
        draw_text(
            &mut img,
            lx + 18,
            ly,
            &det_legend(&s.label, s.eer),
            BLACK,
            1,
        );
    }
    img
}

fn tick_label(p: f64) -> String {
    let pct = p * 100.0;
    if pct < 1.0 {
        format!("{pct:.1}")
    } else {
        format!("{pct:.0}")
    }
}

/// Grouped bars: one group per round, one bar per feature and a dotted
/// line at the round average.
pub fn summary_chart(summary: &Summary, features: &[String], rounds: &[String]) -> RgbImage {
    let bars_per_group = features.len().max(1) as f64;
    let bar_w = 10.0;
    let widest = rounds.iter().map(|r| text_width(r, 1)).max().unwrap_or(0) as f64;
    let group_w = (bars_per_group * bar_w).max(widest) + 20.0;
    let (left, top, bottom) = (60.0, 40.0, 50.0);
    let legend_w = 150.0;
    let pw = group_w * rounds.len().max(1) as f64;
    let (w, h) = ((left + pw + legend_w + 20.0) as u32, 420u32);
    let ph = h as f64 - top - bottom;
    let mut img = RgbImage::from_pixel(w, h, WHITE);

    let max_eer = summary
        .bars
        .iter()
        .map(|b| b.mean_eer)
        .fold(0.0f64, f64::max)
        .max(0.01);
    let y_max = (max_eer * 100.0 / 5.0).ceil() * 5.0 / 100.0;
    let sy = |v: f64| top + ph - v / y_max * ph;

    for k in 0..=5 {
        let v = y_max * k as f64 / 5.0;
        line(&mut img, (left, sy(v)), (left + pw, sy(v)), GRID, 1);
        let label = format!("{:.1}", v * 100.0);
        draw_text(
            &mut img,
            left as i64 - text_width(&label, 1) as i64 - 6,
            sy(v) as i64 - 3,
            &label,
            BLACK,
            1,
        );
    }
    line(&mut img, (left, top), (left, top + ph), BLACK, 1);
    line(&mut img, (left, top + ph), (left + pw, top + ph), BLACK, 1);
    draw_text(&mut img, 6, (top - 16.0) as i64, "EER (%)", BLACK, 1);
    draw_text(&mut img, left as i64, 8, "LOO SUMMARY", BLACK, 2);

    for (g, round) in rounds.iter().enumerate() {
        let gx = left + g as f64 * group_w + (group_w - bars_per_group * bar_w) / 2.0;
        for (i, f) in features.iter().enumerate() {
            let Some(bar) = summary
                .bars
                .iter()
                .find(|b| b.round.as_str() == round && &b.feature.to_string() == f)
            else {
                continue;
            };
            let x0 = gx + i as f64 * bar_w;
            fill_rect(
                &mut img,
                x0 as i64,
                sy(bar.mean_eer) as i64,
                (x0 + bar_w - 1.0) as i64,
                (top + ph) as i64,
                PALETTE[i % PALETTE.len()],
            );
        }
        if let Some(avg) = summary
            .average_lines
            .iter()
            .find(|a| a.round.as_str() == round)
            .and_then(|a| a.mean_eer)
        {
            let y = sy(avg);
            let mut x = gx - 4.0;
            while x < gx + bars_per_group * bar_w + 4.0 {
                line(&mut img, (x, y), (x + 3.0, y), BLACK, 2);
                x += 7.0;
            }
        }
        let tw = text_width(round, 1) as f64;
        draw_text(
            &mut img,
            (gx + bars_per_group * bar_w / 2.0 - tw / 2.0) as i64,
            (top + ph + 8.0) as i64,
            round,
            BLACK,
            1,
        );
    }

    let lx = (left + pw + 20.0) as i64;
    for (i, f) in features.iter().enumerate() {
        let ly = top as i64 + i as i64 * 14;
        fill_rect(
            &mut img,
            lx,
            ly,
            lx + 10,
            ly + 7,
            PALETTE[i % PALETTE.len()],
        );
        draw_text(&mut img, lx + 16, ly, f, BLACK, 1);
    }
    let ly = top as i64 + features.len() as i64 * 14 + 6;
    line(
        &mut img,
        (lx as f64, ly as f64 + 3.0),
        (lx as f64 + 10.0, ly as f64 + 3.0),
        BLACK,
        2,
    );
    draw_text(&mut img, lx + 16, ly, "ROUND AVG", BLACK, 1);
    img
}

#[cfg(test)]
mod tests {
    use super::*;
    use smad_core::metrics::det_curve;
    use smad_core::ScoreSet;

    #[test]
    fn map_png_matches_map_size() {
        let gray = FeatureMap::new(7, 5, 1, (0..35).map(|v| v as f64).collect());
        let img = map_image(&gray);
        assert_eq!((img.width(), img.height()), (7, 5));
        let rgb = FeatureMap::new(4, 3, 3, vec![0.0; 36]);
        assert!(matches!(map_image(&rgb), DynamicImage::ImageRgb8(_)));
    }

    #[test]
    fn sheet_layout_is_declared() {
        let tiles: Vec<(String, DynamicImage)> = (0..7)
            .map(|i| (format!("M{i}"), DynamicImage::new_luma8(30 + i, 20)))
            .collect();
        let (sheet, layout) = contact_sheet(&tiles, 5);
        assert_eq!((layout.columns, layout.rows), (5, 2));
        assert_eq!(layout.tile_width, 36);
        assert_eq!(sheet.dimensions(), layout.dimensions());
    }

    #[test]
    fn det_plot_draws_series() {
        let curve = det_curve(&ScoreSet::new(vec![0.1, 0.4, 0.35], vec![0.3, 0.8, 0.9])).unwrap();
        let img = det_plot(
            "DCT2",
            &[DetSeries {
                label: "opencv".into(),
                curve: &curve,
                eer: 0.0141,
            }],
        );
        assert!(img.pixels().any(|p| *p == PALETTE[0]));
        assert_eq!(det_legend("opencv", 0.0141), "opencv (1.41%)");
    }
}
