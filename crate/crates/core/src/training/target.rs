use crate::error::{Error, Result};
use crate::maskgen::AttentionStack;
use crate::model::ModelConfig;
use crate::panoptic::{GroundTruthInstance, LabelSpace, PanopticLabelMap, VOID_CLASS};

use super::matching::MatchAssignment;

/// Per-pixel channel index into the head's output layout, at feature resolution.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TargetMap {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<usize>,
}

impl TargetMap {
    #[inline]
    pub fn get(&self, x: usize, y: usize) -> usize {
        self.channels[y * self.width + x]
    }
}

/// Build the order-preserving target: matched instances go to their
/// (post-shuffle) slot, stuff to `n_att + stuff index`, unmatched things to
/// `n_out - 2` and void/crowd to `n_out - 1`.
///
/// `gt_panoptic` must already be at feature resolution; `gt` indexes the
/// instances referenced by `assignment`.
pub fn build_target(
    assignment: &MatchAssignment,
    gt_panoptic: &PanopticLabelMap,
    gt: &[GroundTruthInstance],
    stack: &AttentionStack,
    labels: &LabelSpace,
    config: &ModelConfig,
) -> Result<TargetMap> {
    if stack.n_att() != config.n_att {
        return Err(Error::Shape(format!(
            "stack has {} slots, config n_att = {}",
            stack.n_att(),
            config.n_att
        )));
    }
    if labels.num_stuff() != config.n_stuff {
        return Err(Error::Config(format!(
            "label space has {} stuff classes, model expects {}",
            labels.num_stuff(),
            config.n_stuff
        )));
    }
    let slot_of = |class: u16, instance: u32| -> Option<usize> {
        assignment
            .pairs
            .iter()
            .find(|&&(_, g, _)| gt[g].class_id == class && gt[g].instance_id == instance)
            .map(|p| p.0)
    };
    let mut channels = Vec::with_capacity(gt_panoptic.len());
    for i in 0..gt_panoptic.len() {
        let c = gt_panoptic.class[i];
        let ch = if c == VOID_CLASS || gt_panoptic.crowd[i] {
            config.unlabeled_channel()
        } else if let Some(k) = labels.stuff_index(c) {
            config.n_att + k
        } else if labels.is_thing(c) {
            slot_of(c, gt_panoptic.instance[i]).unwrap_or(config.unmatched_channel())
        } else {
            return Err(Error::GroundTruth(format!(
                "pixel {i} has class {c}, which is neither stuff, things nor void"
            )));
        };
        channels.push(ch);
    }
    Ok(TargetMap {
        height: gt_panoptic.height,
        width: gt_panoptic.width,
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BoxXywh;
    use crate::maskgen::{generate_masks, Detection};
    use crate::training::matching::match_masks;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_att: 8,
            n_stuff: 2,
            n_things: 3,
            shuffle: false,
            ..Default::default()
        }
    }

    #[test]
    fn all_void_targets_last_channel() {
        let labels = LabelSpace::shapes_world();
        let c = cfg();
        let st = generate_masks(&[], 4, 4, &c);
        let t = build_target(
            &MatchAssignment::default(),
            &PanopticLabelMap::void(4, 4),
            &[],
            &st,
            &labels,
            &c,
        )
        .unwrap();
        assert!(t.channels.iter().all(|&ch| ch == c.n_out() - 1));
    }

    #[test]
    fn matched_instance_goes_to_its_slot() {
        let labels = LabelSpace::shapes_world();
        let c = cfg();
        let mut m = PanopticLabelMap::void(4, 4);
        for i in 0..16 {
            m.class[i] = 3;
        }
        m.set(1, 1, 2, 9);
        m.set(2, 1, 2, 9);
        m.set(3, 3, 4, 0);
        let gt = m.instances(&labels);
        let mut st = generate_masks(&[], 4, 4, &c);
        st.slot_detections[7] = Some(Detection {
            class_id: 2,
            score: 1.0,
            bbox: BoxXywh::from_corners(1.0, 1.0, 3.0, 2.0),
        });
        let a = match_masks(&st, &gt);
        let t = build_target(&a, &m, &gt, &st, &labels, &c).unwrap();
        assert_eq!(t.get(1, 1), 7);
        assert_eq!(t.get(2, 1), 7);
        assert_eq!(t.get(0, 0), 8);
        assert_eq!(t.get(3, 3), 9);
    }

    #[test]
    fn unmatched_instance_goes_to_second_to_last() {
        let labels = LabelSpace::shapes_world();
        let c = cfg();
        let mut m = PanopticLabelMap::void(4, 4);
        m.set(0, 0, 1, 1);
        let gt = m.instances(&labels);
        let st = generate_masks(&[], 4, 4, &c);
        let a = match_masks(&st, &gt);
        let t = build_target(&a, &m, &gt, &st, &labels, &c).unwrap();
        assert_eq!(t.get(0, 0), c.n_out() - 2);
    }

    #[test]
    fn unknown_class_is_an_error() {
        let labels = LabelSpace::shapes_world();
        let c = cfg();
        let mut m = PanopticLabelMap::void(2, 2);
        m.set(0, 0, 17, 0);
        let st = generate_masks(&[], 2, 2, &c);
        let r = build_target(&MatchAssignment::default(), &m, &[], &st, &labels, &c);
        assert!(matches!(r, Err(Error::GroundTruth(_))));
    }
}
