//! Panoptic label maps, the label space they live in, and ground-truth instances.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mask_hull, BoxXywh};

/// Reserved class id for void / unlabeled pixels.
pub const VOID_CLASS: u16 = u16::MAX;

/// Class ids `0..things.len()` are things; the next `stuff.len()` ids are stuff.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSpace {
    pub things: Vec<String>,
    pub stuff: Vec<String>,
}

impl LabelSpace {
    pub fn new(things: Vec<String>, stuff: Vec<String>) -> Self {
        Self { things, stuff }
    }

    /// Three shape classes and two background classes of the synthetic world.
    pub fn shapes_world() -> Self {
        Self::new(
            vec!["circle".into(), "triangle".into(), "square".into()],
            vec!["sky".into(), "ground".into()],
        )
    }

    /// Placeholder names `thing_0..`, `stuff_0..` when only counts are known.
    pub fn generic(num_things: usize, num_stuff: usize) -> Self {
        Self::new(
            (0..num_things).map(|i| format!("thing_{i}")).collect(),
            (0..num_stuff).map(|i| format!("stuff_{i}")).collect(),
        )
    }

    pub fn num_things(&self) -> usize {
        self.things.len()
    }

    pub fn num_stuff(&self) -> usize {
        self.stuff.len()
    }

    pub fn num_classes(&self) -> usize {
        self.things.len() + self.stuff.len()
    }

    pub fn is_thing(&self, class: u16) -> bool {
        (class as usize) < self.things.len()
    }

    pub fn is_stuff(&self, class: u16) -> bool {
        class != VOID_CLASS && (class as usize) >= self.things.len() && (class as usize) < self.num_classes()
    }

    /// Index of a stuff class within the stuff list.
    pub fn stuff_index(&self, class: u16) -> Option<usize> {
        self.is_stuff(class).then(|| class as usize - self.things.len())
    }

    pub fn stuff_class(&self, index: usize) -> u16 {
        (self.things.len() + index) as u16
    }

    pub fn name(&self, class: u16) -> &str {
        let c = class as usize;
        if class == VOID_CLASS {
            "void"
        } else if c < self.things.len() {
            &self.things[c]
        } else {
            self.stuff.get(c - self.things.len()).map(String::as_str).unwrap_or("?")
        }
    }
}

/// Per-pixel `(class_id, instance_id)`, row-major. Stuff and void carry
/// instance id 0. `crowd` marks ground-truth crowd regions, which evaluation
/// ignores and training treats as void.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PanopticLabelMap {
    pub height: usize,
    pub width: usize,
    pub class: Vec<u16>,
    pub instance: Vec<u32>,
    pub crowd: Vec<bool>,
}

impl PanopticLabelMap {
    pub fn void(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            class: vec![VOID_CLASS; n],
            instance: vec![0; n],
            crowd: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (u16, u32) {
        let i = y * self.width + x;
        (self.class[i], self.instance[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, class: u16, instance: u32) {
        let i = y * self.width + x;
        self.class[i] = class;
        self.instance[i] = instance;
    }

    /// Pixel count per `(class, instance)` segment, void excluded.
    pub fn segments(&self) -> BTreeMap<(u16, u32), usize> {
        let mut out = BTreeMap::new();
        for (&c, &i) in self.class.iter().zip(&self.instance) {
            if c != VOID_CLASS {
                *out.entry((c, i)).or_insert(0) += 1;
            }
        }
        out
    }

    /// Same map with crowd regions turned into void.
    pub fn without_crowd(&self) -> Self {
        let mut out = self.clone();
        for i in 0..out.len() {
            if out.crowd[i] {
                out.class[i] = VOID_CLASS;
                out.instance[i] = 0;
                out.crowd[i] = false;
            }
        }
        out
    }

    /// Check every class id against the label space.
    pub fn validate(&self, labels: &LabelSpace) -> Result<()> {
        for (i, (&c, &inst)) in self.class.iter().zip(&self.instance).enumerate() {
            if c == VOID_CLASS {
                continue;
            }
            if !labels.is_thing(c) && !labels.is_stuff(c) {
                return Err(Error::GroundTruth(format!(
                    "pixel {} carries unknown class id {c}",
                    i
                )));
            }
            if labels.is_stuff(c) && inst != 0 {
                return Err(Error::GroundTruth(format!(
                    "stuff pixel {i} carries instance id {inst}"
                )));
            }
        }
        Ok(())
    }

    /// Nearest-neighbour sample at the centre of each `stride x stride` cell.
    pub fn downsample_nearest(&self, stride: usize) -> Self {
        let h = self.height.div_ceil(stride);
        let w = self.width.div_ceil(stride);
        let mut out = Self::void(h, w);
        for y in 0..h {
            let sy = (y * stride + stride / 2).min(self.height - 1);
            for x in 0..w {
                let sx = (x * stride + stride / 2).min(self.width - 1);
                let si = sy * self.width + sx;
                let di = y * w + x;
                out.class[di] = self.class[si];
                out.instance[di] = self.instance[si];
                out.crowd[di] = self.crowd[si];
            }
        }
        out
    }

    /// Extend with void pixels on the right and bottom.
    pub fn pad_to(&self, height: usize, width: usize) -> Self {
        assert!(height >= self.height && width >= self.width);
        let mut out = Self::void(height, width);
        for y in 0..self.height {
            for x in 0..self.width {
                let s = y * self.width + x;
                let d = y * width + x;
                out.class[d] = self.class[s];
                out.instance[d] = self.instance[s];
                out.crowd[d] = self.crowd[s];
            }
        }
        out
    }

    /// Ground-truth things instances, ordered by `(class, instance)`.
    pub fn instances(&self, labels: &LabelSpace) -> Vec<GroundTruthInstance> {
        let mut masks: BTreeMap<(u16, u32), Vec<bool>> = BTreeMap::new();
        for i in 0..self.len() {
            let c = self.class[i];
            if labels.is_thing(c) && !self.crowd[i] {
                masks
                    .entry((c, self.instance[i]))
                    .or_insert_with(|| vec![false; self.len()])[i] = true;
            }
        }
        masks
            .into_iter()
            .filter_map(|((class_id, instance_id), mask)| {
                let bbox = mask_hull(&mask, self.width)?;
                Some(GroundTruthInstance {
                    class_id,
                    instance_id,
                    mask,
                    bbox,
                })
            })
            .collect()
    }
}

/// One things instance of the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthInstance {
    pub class_id: u16,
    pub instance_id: u32,
    /// Row-major binary mask at the map's resolution.
    pub mask: Vec<bool>,
    /// Tight hull of `mask`.
    pub bbox: BoxXywh,
}

impl GroundTruthInstance {
    pub fn area(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}
