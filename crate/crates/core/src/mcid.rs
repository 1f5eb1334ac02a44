//! Multi-component composites.
//!
//! A composite tiles one source image per prompt component into rows. Every
//! image in a row is scaled to the same height; among all row counts the one
//! whose canvas aspect ratio is closest to 1 (in log space) wins, smaller row
//! counts winning ties. Rows are filled in prompt order and short rows are
//! padded with black on the right.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{Rgb, RgbImage};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::promptgen::PromptSpec;
use crate::rng;
use crate::vocabulary::Vocabulary;

pub const DEFAULT_ROW_HEIGHT: u32 = 256;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Placement {
    pub source: usize,
    pub x: u32,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Row {
    pub y: u32,
    pub height: u32,
    pub items: Vec<Placement>,
}

impl Row {
    pub fn width(&self) -> u32 {
        self.items.iter().map(|p| p.width).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub rows: Vec<Row>,
    pub canvas_w: u32,
    pub canvas_h: u32,
}

impl Layout {
    /// |ln(W / H)| of the canvas.
    pub fn log_aspect(&self) -> f64 {
        (f64::from(self.canvas_w) / f64::from(self.canvas_h)).ln().abs()
    }

    pub fn placements(&self) -> impl Iterator<Item = (u32, &Placement)> {
        self.rows
            .iter()
            .flat_map(|r| r.items.iter().map(move |p| (r.y, p)))
    }
}

/// Sizes of `k` items split in order into `rows` rows; the first `k % rows`
/// rows take one extra item.
pub fn row_sizes(k: usize, rows: usize) -> Vec<usize> {
    (0..rows)
        .map(|r| k / rows + usize::from(r < k % rows))
        .collect()
}

fn scaled_width(w: u32, h: u32, row_height: u32) -> u32 {
    let width = (f64::from(row_height) * f64::from(w) / f64::from(h)).round() as u32;
    width.max(1)
}

fn layout_for_rows(sizes: &[(u32, u32)], rows: usize, row_height: u32) -> Layout {
    let mut next = 0;
    let mut out = Vec::with_capacity(rows);
    for (r, count) in row_sizes(sizes.len(), rows).into_iter().enumerate() {
        let mut x = 0;
        let items = (next..next + count)
            .map(|source| {
                let (w, h) = sizes[source];
                let width = scaled_width(w, h, row_height);
                let p = Placement {
                    source,
                    x,
                    width,
                    height: row_height,
                };
                x += width;
                p
            })
            .collect();
        next += count;
        out.push(Row {
            y: r as u32 * row_height,
            height: row_height,
            items,
        });
    }
    let canvas_w = out.iter().map(Row::width).max().unwrap_or(0);
    Layout {
        canvas_w,
        canvas_h: rows as u32 * row_height,
        rows: out,
    }
}

pub fn plan_layout(source_sizes: &[(u32, u32)], target_row_height: u32) -> Result<Layout> {
    if source_sizes.is_empty() {
        return Err(Error::InvalidParameter("no source images to lay out".into()));
    }
    if target_row_height == 0 {
        return Err(Error::InvalidParameter("row height must be positive".into()));
    }
    if let Some(index) = source_sizes.iter().position(|&(w, h)| w == 0 || h == 0) {
        return Err(Error::InvalidSize { index });
    }
    let mut best = layout_for_rows(source_sizes, 1, target_row_height);
    for rows in 2..=source_sizes.len() {
        let candidate = layout_for_rows(source_sizes, rows, target_row_height);
        if candidate.log_aspect() < best.log_aspect() {
            best = candidate;
        }
    }
    Ok(best)
}

/// Draws `sources` into the planned rectangles (bilinear resampling) on a
/// black canvas.
pub fn compose(sources: &[RgbImage], layout: &Layout) -> Result<RgbImage> {
    let planned = layout.placements().count();
    if planned != sources.len() {
        return Err(Error::DimensionMismatch {
            expected: planned,
            actual: sources.len(),
        });
    }
    let mut canvas = RgbImage::from_pixel(layout.canvas_w, layout.canvas_h, Rgb([0, 0, 0]));
    for (y, p) in layout.placements() {
        let src = &sources[p.source];
        let tile = if src.dimensions() == (p.width, p.height) {
            src.clone()
        } else {
            imageops::resize(src, p.width, p.height, FilterType::Triangle)
        };
        imageops::replace(&mut canvas, &tile, i64::from(p.x), i64::from(y));
    }
    Ok(canvas)
}

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    image::open(path)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::ImageLoadError {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
}

/// Source images per vocabulary label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIndex {
    pub root: PathBuf,
    pub images: BTreeMap<usize, Vec<PathBuf>>,
}

impl CorpusIndex {
    /// Scans `<root>/<class_dir>/*` using a class map of
    /// `<class_dir>\t<vocabulary name>` lines. Files are sorted by name.
    pub fn scan(root: &Path, class_map: &Path, vocab: &Vocabulary) -> Result<Self> {
        let text = fs::read_to_string(class_map)
            .map_err(|e| Error::io(format!("reading class map {}", class_map.display()), e))?;
        let mut images = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (dir, name) = line.split_once('\t').ok_or_else(|| Error::Parse {
                path: class_map.to_path_buf(),
                line: i + 1,
                reason: "expected <class_dir>\\t<name>".into(),
            })?;
            let label = vocab
                .by_name(name)
                .ok_or_else(|| Error::UnknownLabel(name.to_string()))?;
            let dir_path = root.join(dir.trim());
            let mut files = Vec::new();
            if dir_path.is_dir() {
                for entry in fs::read_dir(&dir_path)
                    .map_err(|e| Error::io(format!("listing {}", dir_path.display()), e))?
                {
                    let path = entry.map_err(|e| Error::io("reading corpus entry", e))?.path();
                    let is_image = path
                        .extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
                    if is_image {
                        files.push(path);
                    }
                }
            }
            files.sort();
            images
                .entry(label.index)
                .or_insert_with(Vec::new)
                .extend(files);
        }
        Ok(CorpusIndex {
            root: root.to_path_buf(),
            images,
        })
    }

    pub fn images_for(&self, label: usize) -> &[PathBuf] {
        self.images.get(&label).map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSummary {
    pub rows: Vec<usize>,
    pub canvas_w: u32,
    pub canvas_h: u32,
}

/// One composite in the dataset manifest. Paths are relative to the
/// manifest's directory (composites) or as given by the corpus (sources).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompositeEntry {
    pub composite_path: String,
    pub prompt_id: u64,
    pub k: usize,
    pub component_indices: Vec<usize>,
    pub source_paths: Vec<String>,
    pub layout: LayoutSummary,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BuildOptions {
    pub images_per_prompt: usize,
    pub seed: u64,
    pub row_height: u32,
}

/// Builds composites for every prompt and writes `manifest.jsonl` into
/// `out_dir`. All labels are checked before anything is written.
pub fn build_dataset(
    corpus: &CorpusIndex,
    prompts: &[PromptSpec],
    options: BuildOptions,
    out_dir: &Path,
) -> Result<Vec<CompositeEntry>> {
    if options.images_per_prompt == 0 {
        return Err(Error::InvalidParameter("images per prompt must be positive".into()));
    }
    for p in prompts {
        for c in p.components() {
            if corpus.images_for(c.index).is_empty() {
                return Err(Error::MissingClassImages(c.name.clone()));
            }
        }
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let jobs: Vec<(&PromptSpec, usize)> = prompts
        .iter()
        .flat_map(|p| (0..options.images_per_prompt).map(move |i| (p, i)))
        .collect();
    let entries: Vec<CompositeEntry> = jobs
        .par_iter()
        .map(|&(prompt, i)| build_one(corpus, prompt, i, options, out_dir))
        .collect::<Result<_>>()?;
    let mut manifest = String::new();
    for e in &entries {
        manifest.push_str(&serde_json::to_string(e)?);
        manifest.push('\n');
    }
    let path = out_dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    Ok(entries)
}

fn build_one(
    corpus: &CorpusIndex,
    prompt: &PromptSpec,
    index: usize,
    options: BuildOptions,
    out_dir: &Path,
) -> Result<CompositeEntry> {
    let mut rng = rng::child(options.seed, &[prompt.prompt_id(), index as u64]);
    let sources: Vec<&PathBuf> = prompt
        .components()
        .iter()
        .map(|c| {
            let pool = corpus.images_for(c.index);
            &pool[rng.random_range(0..pool.len())]
        })
        .collect();
    let images: Vec<RgbImage> = sources.iter().map(|p| load_rgb(p)).collect::<Result<_>>()?;
    let sizes: Vec<(u32, u32)> = images.iter().map(RgbImage::dimensions).collect();
    let layout = plan_layout(&sizes, options.row_height)?;
    let composite = compose(&images, &layout)?;
    let file_name = format!("p{:06}_{:03}.png", prompt.prompt_id(), index);
    let path = out_dir.join(&file_name);
    composite.save(&path).map_err(|e| Error::ImageLoadError {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    Ok(CompositeEntry {
        composite_path: file_name,
        prompt_id: prompt.prompt_id(),
        k: prompt.k(),
        component_indices: prompt.component_indices(),
        source_paths: sources.iter().map(|p| p.display().to_string()).collect(),
        layout: LayoutSummary {
            rows: layout.rows.iter().map(|r| r.items.len()).collect(),
            canvas_w: layout.canvas_w,
            canvas_h: layout.canvas_h,
        },
        seed: options.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn four_squares_make_a_square() {
        let l = plan_layout(&[(100, 100); 4], 256).unwrap();
        assert_eq!(l.rows.len(), 2);
        assert_eq!((l.canvas_w, l.canvas_h), (512, 512));
        assert_eq!(l.log_aspect(), 0.0);
    }

    #[test]
    fn single_source_is_scaled_to_row_height() {
        let l = plan_layout(&[(400, 300)], 256).unwrap();
        assert_eq!(l.rows.len(), 1);
        assert_eq!((l.canvas_w, l.canvas_h), (341, 256));
    }

    #[test]
    fn uneven_rows_put_extras_first() {
        assert_eq!(row_sizes(5, 2), [3, 2]);
        assert_eq!(row_sizes(7, 3), [3, 2, 2]);
        assert_eq!(row_sizes(8, 8), [1; 8]);
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            plan_layout(&[(10, 10), (0, 5)], 256),
            Err(Error::InvalidSize { index: 1 })
        ));
        assert!(plan_layout(&[], 256).is_err());
    }

    #[test]
    fn quadrants_keep_their_colors() {
        let colors = [[255, 0, 0], [0, 255, 0], [0, 0, 255], [255, 255, 255]];
        let sources: Vec<RgbImage> = colors
            .iter()
            .map(|&c| RgbImage::from_pixel(64, 64, Rgb(c)))
            .collect();
        let layout = plan_layout(&[(64, 64); 4], 128).unwrap();
        let img = compose(&sources, &layout).unwrap();
        assert_eq!(img.dimensions(), (256, 256));
        assert_eq!(img.get_pixel(64, 64).0, colors[0]);
        assert_eq!(img.get_pixel(192, 64).0, colors[1]);
        assert_eq!(img.get_pixel(64, 192).0, colors[2]);
        assert_eq!(img.get_pixel(192, 192).0, colors[3]);
    }

    #[test]
    fn short_rows_are_padded_black() {
        // Three squares: two rows of [2, 1]; the second row is half width.
        let sources = vec![RgbImage::from_pixel(10, 10, Rgb([200, 200, 200])); 3];
        let layout = plan_layout(&[(10, 10); 3], 20).unwrap();
        assert_eq!(layout.rows.len(), 2);
        let img = compose(&sources, &layout).unwrap();
        assert_eq!(img.get_pixel(30, 30).0, [0, 0, 0]);
        assert_eq!(img.get_pixel(10, 30).0, [200, 200, 200]);
    }

    #[test]
    fn single_source_passthrough() {
        let src = RgbImage::from_fn(30, 20, |x, y| Rgb([x as u8 * 8, y as u8 * 12, 7]));
        let layout = plan_layout(&[(30, 20)], 20).unwrap();
        let img = compose(&[src.clone()], &layout).unwrap();
        assert_eq!(img, src);
    }

    proptest! {
        #[test]
        fn composite_matches_canvas(sizes in proptest::collection::vec((1u32..60, 1u32..60), 1..6), h in 4u32..40) {
            let layout = plan_layout(&sizes, h).unwrap();
            let sources: Vec<RgbImage> = sizes.iter().map(|&(w, hh)| RgbImage::new(w, hh)).collect();
            let img = compose(&sources, &layout).unwrap();
            prop_assert_eq!(img.dimensions(), (layout.canvas_w, layout.canvas_h));
            let mut seen: Vec<usize> = layout.placements().map(|(_, p)| p.source).collect();
            seen.sort();
            prop_assert_eq!(seen, (0..sizes.len()).collect::<Vec<_>>());
            for (_, p) in layout.placements() {
                let (w, hh) = sizes[p.source];
                let exact = f64::from(h) * f64::from(w) / f64::from(hh);
                prop_assert!((f64::from(p.width) - exact).abs() <= 1.0);
            }
            prop_assert_eq!(layout.canvas_h, layout.rows.len() as u32 * h);
            prop_assert_eq!(layout.canvas_w, layout.rows.iter().map(Row::width).max().unwrap());
        }
    }
}
