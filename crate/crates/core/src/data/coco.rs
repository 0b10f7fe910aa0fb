//! COCO-panoptic annotations: a JSON index plus one RGB PNG per image whose
//! pixels encode a segment id as `R + 256 * G + 256^2 * B` (0 = void).

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use super::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::panoptic::{LabelSpace, PanopticLabelMap, VOID_CLASS};

/// Largest segment id representable in an RGB pixel.
pub const MAX_SEGMENT_ID: u32 = (1 << 24) - 1;

pub fn encode_id(id: u32) -> [u8; 3] {
    debug_assert!(id <= MAX_SEGMENT_ID);
    [(id & 0xff) as u8, ((id >> 8) & 0xff) as u8, ((id >> 16) & 0xff) as u8]
}

pub fn decode_id(rgb: [u8; 3]) -> u32 {
    rgb[0] as u32 + 256 * rgb[1] as u32 + 256 * 256 * rgb[2] as u32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u32,
    pub name: String,
    pub isthing: u8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    pub file_name: String,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SegmentInfo {
    pub id: u64,
    pub category_id: u32,
    #[serde(default)]
    pub iscrowd: u8,
    /// Instance id within its class; written by this crate, optional on input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub image_id: u64,
    pub file_name: String,
    pub segments_info: Vec<SegmentInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CocoPanopticJson {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

/// Class ids follow category order: things first, then stuff.
pub fn label_space_from_categories(categories: &[CocoCategory]) -> (LabelSpace, HashMap<u32, u16>) {
    let things: Vec<_> = categories.iter().filter(|c| c.isthing != 0).collect();
    let stuff: Vec<_> = categories.iter().filter(|c| c.isthing == 0).collect();
    let mut map = HashMap::new();
    for (i, c) in things.iter().chain(stuff.iter()).enumerate() {
        map.insert(c.id, i as u16);
    }
    let labels = LabelSpace::new(
        things.iter().map(|c| c.name.clone()).collect(),
        stuff.iter().map(|c| c.name.clone()).collect(),
    );
    (labels, map)
}

/// Categories for a label space: id `class + 1`.
pub fn categories_for(labels: &LabelSpace) -> Vec<CocoCategory> {
    (0..labels.num_classes())
        .map(|c| CocoCategory {
            id: c as u32 + 1,
            name: labels.name(c as u16).to_string(),
            isthing: labels.is_thing(c as u16) as u8,
        })
        .collect()
}

/// Segment-id image and segment list for a label map, ids assigned 1.. in
/// `(class, instance)` order.
pub fn encode_label_map(map: &PanopticLabelMap) -> Result<(Vec<u32>, Vec<SegmentInfo>)> {
    let mut ids: BTreeMap<(u16, u32, bool), u32> = BTreeMap::new();
    for i in 0..map.len() {
        if map.class[i] != VOID_CLASS {
            ids.entry((map.class[i], map.instance[i], map.crowd[i])).or_insert(0);
        }
    }
    if ids.len() as u64 > MAX_SEGMENT_ID as u64 {
        return Err(Error::Dataset {
            image: "<label map>".into(),
            message: "too many segments for 24-bit ids".into(),
        });
    }
    let mut segments = Vec::with_capacity(ids.len());
    for (next, (&(class, instance, crowd), id)) in ids.iter_mut().enumerate() {
        *id = next as u32 + 1;
        segments.push(SegmentInfo {
            id: *id as u64,
            category_id: class as u32 + 1,
            iscrowd: crowd as u8,
            instance_id: Some(instance),
        });
    }
    let pixels = (0..map.len())
        .map(|i| {
            if map.class[i] == VOID_CLASS {
                0
            } else {
                ids[&(map.class[i], map.instance[i], map.crowd[i])]
            }
        })
        .collect();
    Ok((pixels, segments))
}

/// Inverse of [`encode_label_map`]. Things without an explicit
/// `instance_id` use their segment id.
pub fn decode_label_map(
    image: &str,
    pixels: &[u32],
    height: usize,
    width: usize,
    segments: &[SegmentInfo],
    categories: &HashMap<u32, u16>,
    labels: &LabelSpace,
) -> Result<PanopticLabelMap> {
    let fail = |message: String| Error::Dataset {
        image: image.to_string(),
        message,
    };
    let mut by_id: HashMap<u32, (u16, u32, bool)> = HashMap::new();
    for s in segments {
        if s.id == 0 || s.id > MAX_SEGMENT_ID as u64 {
            return Err(fail(format!("segment id {} outside 1..=2^24-1", s.id)));
        }
        let class = *categories
            .get(&s.category_id)
            .ok_or_else(|| fail(format!("unknown category {}", s.category_id)))?;
        let instance = if labels.is_thing(class) {
            s.instance_id.unwrap_or(s.id as u32)
        } else {
            0
        };
        by_id.insert(s.id as u32, (class, instance, s.iscrowd != 0));
    }
    let mut map = PanopticLabelMap::void(height, width);
    for (i, &id) in pixels.iter().enumerate() {
        if id == 0 {
            continue;
        }
        let &(class, instance, crowd) = by_id
            .get(&id)
            .ok_or_else(|| fail(format!("segment id {id} in PNG is missing from segments_info")))?;
        map.class[i] = class;
        map.instance[i] = instance;
        map.crowd[i] = crowd;
    }
    Ok(map)
}

pub fn read_id_png(path: &Path) -> Result<(Vec<u32>, usize, usize)> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let ids = img.pixels().map(|p| decode_id(p.0)).collect();
    Ok((ids, h as usize, w as usize))
}

pub fn write_id_png(path: &Path, ids: &[u32], height: usize, width: usize) -> Result<()> {
    let img = image::RgbImage::from_fn(width as u32, height as u32, |x, y| {
        image::Rgb(encode_id(ids[y as usize * width + x as usize]))
    });
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// A COCO-panoptic split on disk.
#[derive(Clone, Debug)]
pub struct CocoDataset {
    pub index: CocoPanopticJson,
    pub png_dir: PathBuf,
    pub image_dir: Option<PathBuf>,
    labels: LabelSpace,
    categories: HashMap<u32, u16>,
    annotations: HashMap<u64, usize>,
}

/// Open a COCO-panoptic split. `image_dir` holds the RGB inputs; without it
/// samples carry black images (enough for evaluating stored predictions).
pub fn load_coco_panoptic(json_path: &Path, png_dir: &Path, image_dir: Option<&Path>) -> Result<CocoDataset> {
    let text = std::fs::read_to_string(json_path).map_err(|e| Error::io(json_path, e))?;
    let index: CocoPanopticJson = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: json_path.to_path_buf(),
        source,
    })?;
    let (labels, categories) = label_space_from_categories(&index.categories);
    let annotations = index
        .annotations
        .iter()
        .enumerate()
        .map(|(i, a)| (a.image_id, i))
        .collect();
    Ok(CocoDataset {
        index,
        png_dir: png_dir.to_path_buf(),
        image_dir: image_dir.map(Path::to_path_buf),
        labels,
        categories,
        annotations,
    })
}

impl CocoDataset {
    pub fn label_map(&self, index: usize) -> Result<PanopticLabelMap> {
        let info = &self.index.images[index];
        let ann = self
            .annotations
            .get(&info.id)
            .map(|&i| &self.index.annotations[i])
            .ok_or_else(|| Error::Dataset {
                image: info.file_name.clone(),
                message: "no annotation entry".into(),
            })?;
        let png = self.png_dir.join(&ann.file_name);
        if !png.exists() {
            return Err(Error::Dataset {
                image: info.file_name.clone(),
                message: format!("missing PNG {}", png.display()),
            });
        }
        let (ids, h, w) = read_id_png(&png)?;
        decode_label_map(&info.file_name, &ids, h, w, &ann.segments_info, &self.categories, &self.labels)
    }
}

impl Dataset for CocoDataset {
    fn len(&self) -> usize {
        self.index.images.len()
    }

    fn get(&self, index: usize) -> Result<Sample> {
        let info = &self.index.images[index];
        let map = self.label_map(index)?;
        let image = match &self.image_dir {
            Some(dir) => {
                let path = dir.join(&info.file_name);
                let rgb = image::open(&path)
                    .map_err(|source| Error::Image { path, source })?
                    .to_rgb8();
                let (w, h) = rgb.dimensions();
                if (h as usize, w as usize) != (map.height, map.width) {
                    return Err(Error::Dataset {
                        image: info.file_name.clone(),
                        message: "image and annotation sizes differ".into(),
                    });
                }
                Array3::from_shape_fn((h as usize, w as usize, 3), |(y, x, c)| {
                    rgb.get_pixel(x as u32, y as u32).0[c] as f32 / 255.0
                })
            }
            None => Array3::zeros((map.height, map.width, 3)),
        };
        Ok(Sample::new(info.file_name.clone(), image, map, &self.labels))
    }

    fn labels(&self) -> &LabelSpace {
        &self.labels
    }
}

/// One entry to export: name (without extension), label map, optional RGB image.
pub struct ExportEntry<'a> {
    pub name: String,
    pub map: &'a PanopticLabelMap,
    pub image: Option<&'a Array3<f32>>,
}

/// Write `panoptic.json`, `panoptic/<name>.png` and, when given,
/// `images/<name>.png` under `out_dir`.
pub fn write_coco_panoptic(out_dir: &Path, labels: &LabelSpace, entries: &[ExportEntry<'_>]) -> Result<PathBuf> {
    let png_dir = out_dir.join("panoptic");
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&png_dir).map_err(|e| Error::io(&png_dir, e))?;
    let mut index = CocoPanopticJson {
        images: Vec::new(),
        annotations: Vec::new(),
        categories: categories_for(labels),
    };
    for (i, e) in entries.iter().enumerate() {
        let file_name = format!("{}.png", e.name);
        let (ids, segments) = encode_label_map(e.map)?;
        write_id_png(&png_dir.join(&file_name), &ids, e.map.height, e.map.width)?;
        if let Some(im) = e.image {
            std::fs::create_dir_all(&img_dir).map_err(|err| Error::io(&img_dir, err))?;
            let (h, w, _) = im.dim();
            let rgb = image::RgbImage::from_fn(w as u32, h as u32, |x, y| {
                image::Rgb([0, 1, 2].map(|c| (im[[y as usize, x as usize, c]] * 255.0).round().clamp(0.0, 255.0) as u8))
            });
            let path = img_dir.join(&file_name);
            rgb.save(&path).map_err(|source| Error::Image { path, source })?;
        }
        index.images.push(CocoImage {
            id: i as u64,
            file_name: file_name.clone(),
            height: e.map.height,
            width: e.map.width,
        });
        index.annotations.push(CocoAnnotation {
            image_id: i as u64,
            file_name,
            segments_info: segments,
        });
    }
    let json_path = out_dir.join("panoptic.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    std::fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;
    Ok(json_path)
}
