//! Confidence-gated segmentation selection: which frames are trusted, which
//! one is the registration reference, and the extended fit mask.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{Mask, Raster};

/// Segmentation of one frame together with the segmenter's confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct SegFrame {
    pub myo: Mask,
    pub lv: Mask,
    pub conf: Raster,
}

impl SegFrame {
    pub fn new(myo: Mask, lv: Mask, conf: Raster) -> Result<Self> {
        if !myo.same_shape(&lv) || myo.height() != conf.height() || myo.width() != conf.width() {
            return Err(Error::GridMismatch(
                "segmentation masks and confidence map differ in size".into(),
            ));
        }
        if let Some(index) = conf
            .data()
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
        {
            return Err(Error::InvalidInput(format!(
                "confidence {} at index {index} is outside [0, 1]",
                conf.data()[index]
            )));
        }
        Ok(Self { myo, lv, conf })
    }
}

/// Outcome of the gating step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSelection {
    /// Frames whose segmentation passed the gate, ascending.
    pub members: Vec<usize>,
    /// Registration reference frame.
    pub reference: usize,
    /// Union of member myocardium masks (all ones when nothing passed).
    #[serde(skip)]
    pub extended_mask: Option<Mask>,
    /// Mean confidence inside each frame's myocardium mask (0 for empty masks).
    pub mean_conf: Vec<f64>,
    /// Set when fewer than two frames passed; segmentation losses are off.
    pub fallback: bool,
}

impl ConfidenceSelection {
    /// Segmentation losses need a reference plus at least one other member.
    pub fn segmentation_active(&self) -> bool {
        !self.fallback
    }

    pub fn mask(&self) -> &Mask {
        self.extended_mask.as_ref().expect("selection carries a mask")
    }
}

/// Number of 4-connected components of a mask.
pub fn component_count(mask: &Mask) -> usize {
    let (h, w) = (mask.height(), mask.width());
    let mut seen = vec![false; h * w];
    let mut stack = Vec::new();
    let mut count = 0;
    for start in 0..h * w {
        if !mask.data()[start] || seen[start] {
            continue;
        }
        count += 1;
        seen[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data()[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
    }
    count
}

/// Fraction of myocardium pixels whose confidence exceeds `alpha`, or `None`
/// for an empty mask.
pub fn confident_fraction(seg: &SegFrame, alpha: f64) -> Option<f64> {
    let size = seg.myo.count();
    if size == 0 {
        return None;
    }
    let passing = seg
        .myo
        .data()
        .iter()
        .zip(seg.conf.data())
        .filter(|(&m, &c)| m && c > alpha)
        .count();
    Some(passing as f64 / size as f64)
}

/// Whether a frame's segmentation is trusted: nonempty, one 4-connected
/// myocardium component, and at least a `gamma` fraction of it above `alpha`.
pub fn passes_gate(seg: &SegFrame, alpha: f64, gamma: f64) -> bool {
    match confident_fraction(seg, alpha) {
        Some(frac) => frac >= gamma && component_count(&seg.myo) == 1,
        None => false,
    }
}

fn mean_conf(seg: &SegFrame) -> f64 {
    let size = seg.myo.count();
    if size == 0 {
        return 0.0;
    }
    let s: f64 = seg
        .myo
        .data()
        .iter()
        .zip(seg.conf.data())
        .filter(|(&m, _)| m)
        .map(|(_, &c)| c)
        .sum();
    s / size as f64
}

/// Gates the segmentations and picks the reference frame and extended mask.
///
/// With two or more members the reference is the member with the highest
/// mean confidence (lowest index on ties) and the mask is the union of member
/// myocardium masks. With exactly one member that frame is the reference and
/// its mask is used, but segmentation losses are switched off. With no
/// members the last frame is the reference and the mask covers everything.
pub fn select(segs: &[SegFrame], alpha: f64, gamma: f64) -> Result<ConfidenceSelection> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::InvalidInput(format!("gamma {gamma} must lie in (0, 1]")));
    }
    let first = segs
        .first()
        .ok_or_else(|| Error::InvalidInput("no segmentations supplied".into()))?;
    if segs.iter().any(|s| !s.myo.same_shape(&first.myo)) {
        return Err(Error::GridMismatch("segmentations differ in size".into()));
    }

    let mean_conf: Vec<f64> = segs.iter().map(mean_conf).collect();
    let members: Vec<usize> = (0..segs.len())
        .filter(|&i| passes_gate(&segs[i], alpha, gamma))
        .collect();

    let (h, w) = (first.myo.height(), first.myo.width());
    let (reference, mask) = match members.as_slice() {
        [] => {
            log::warn!("no segmentation passed the confidence gate; using the last frame");
            (segs.len() - 1, Mask::full(h, w))
        }
        _ => {
            let mut best = members[0];
            for &i in &members[1..] {
                if mean_conf[i] > mean_conf[best] {
                    best = i;
                }
            }
            let mut k = Mask::empty(h, w);
            for &i in &members {
                k = k.union(&segs[i].myo);
            }
            (best, k)
        }
    };
    if members.len() == 1 {
        log::warn!("only frame {reference} passed the confidence gate; segmentation losses disabled");
    }
    Ok(ConfidenceSelection {
        fallback: members.len() < 2,
        members,
        reference,
        extended_mask: Some(mask),
        mean_conf,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(h: usize, w: usize, cx: f64, cy: f64, r_in: f64, r_out: f64) -> Mask {
        Mask::from_fn(h, w, |x, y| {
            let r = (x as f64 - cx).hypot(y as f64 - cy);
            r >= r_in && r <= r_out
        })
    }

    fn seg_with_conf(myo: Mask, conf: f64) -> SegFrame {
        let (h, w) = (myo.height(), myo.width());
        SegFrame::new(myo, Mask::empty(h, w), Raster::filled(h, w, conf)).unwrap()
    }

    #[test]
    fn confident_single_component_is_retained() {
        let s = seg_with_conf(ring(20, 20, 10.0, 10.0, 4.0, 7.0), 0.95);
        assert_eq!(component_count(&s.myo), 1);
        assert!(passes_gate(&s, 0.9, 0.99));
    }

    #[test]
    fn two_components_are_rejected() {
        let m = Mask::from_fn(12, 12, |x, y| (2..5).contains(&y) && (x < 4 || x > 7));
        assert_eq!(component_count(&m), 2);
        let s = seg_with_conf(m, 1.0);
        assert!(!passes_gate(&s, 0.9, 0.99));
        // diagonal contact does not join components under 4-connectivity
        let diag = Mask::from_fn(8, 8, |x, y| (x, y) == (2, 2) || (x, y) == (3, 3));
        assert_eq!(component_count(&diag), 2);
    }

    #[test]
    fn exact_gamma_fraction_is_retained() {
        // 100 pixels, 99 above alpha: fraction equals gamma exactly
        let myo = Mask::from_fn(20, 20, |_, y| y < 5);
        let mut conf = Raster::filled(20, 20, 0.95);
        conf.set(0, 0, 0.9); // not strictly above alpha
        let s = SegFrame::new(myo.clone(), Mask::empty(20, 20), conf.clone()).unwrap();
        assert_eq!(confident_fraction(&s, 0.9), Some(0.99));
        assert!(passes_gate(&s, 0.9, 0.99));
        conf.set(1, 0, 0.5);
        let s = SegFrame::new(myo, Mask::empty(20, 20), conf).unwrap();
        assert!(!passes_gate(&s, 0.9, 0.99));
    }

    #[test]
    fn empty_mask_is_excluded() {
        let s = seg_with_conf(Mask::empty(10, 10), 1.0);
        assert!(!passes_gate(&s, 0.9, 0.99));
    }

    #[test]
    fn reference_is_argmax_with_lowest_index_ties() {
        let m = ring(20, 20, 10.0, 10.0, 4.0, 7.0);
        let bad = Mask::from_fn(20, 20, |x, y| y == 1 && (x < 3 || x > 6));
        let segs = vec![
            seg_with_conf(bad.clone(), 1.0),
            seg_with_conf(bad.clone(), 1.0),
            seg_with_conf(m.clone(), 0.95),
            seg_with_conf(bad.clone(), 1.0),
            seg_with_conf(bad, 1.0),
            seg_with_conf(m.clone(), 0.99),
        ];
        let sel = select(&segs, 0.9, 0.99).unwrap();
        assert_eq!(sel.members, vec![2, 5]);
        assert_eq!(sel.reference, 5);
        assert!(!sel.fallback);

        let tied = vec![
            seg_with_conf(m.clone(), 0.97),
            seg_with_conf(m.clone(), 0.99),
            seg_with_conf(m.clone(), 0.99),
        ];
        assert_eq!(select(&tied, 0.9, 0.99).unwrap().reference, 1);
    }

    #[test]
    fn extended_mask_is_union_of_members() {
        let a = ring(20, 20, 9.0, 10.0, 4.0, 7.0);
        let b = ring(20, 20, 11.0, 10.0, 4.0, 7.0);
        let segs = vec![seg_with_conf(a.clone(), 1.0), seg_with_conf(b.clone(), 1.0)];
        let sel = select(&segs, 0.9, 0.99).unwrap();
        assert_eq!(sel.mask(), &a.union(&b));
    }

    #[test]
    fn fallbacks() {
        let m = ring(20, 20, 10.0, 10.0, 4.0, 7.0);
        let none = vec![seg_with_conf(m.clone(), 0.5), seg_with_conf(m.clone(), 0.5), seg_with_conf(m.clone(), 0.5)];
        let sel = select(&none, 0.9, 0.99).unwrap();
        assert!(sel.members.is_empty() && sel.fallback);
        assert_eq!(sel.reference, 2);
        assert_eq!(sel.mask().count(), 400);

        let one = vec![seg_with_conf(m.clone(), 0.5), seg_with_conf(m.clone(), 0.95), seg_with_conf(m.clone(), 0.5)];
        let sel = select(&one, 0.9, 0.99).unwrap();
        assert_eq!(sel.members, vec![1]);
        assert_eq!(sel.reference, 1);
        assert_eq!(sel.mask(), &m);
        assert!(sel.fallback && !sel.segmentation_active());
    }

    #[test]
    fn argument_validation() {
        let segs = vec![seg_with_conf(Mask::full(8, 8), 1.0)];
        assert!(select(&segs, 0.0, 0.5).is_err());
        assert!(select(&segs, 0.5, 0.0).is_err());
        assert!(select(&segs, 0.5, 1.1).is_err());
        assert!(select(&[], 0.5, 0.5).is_err());
        assert!(SegFrame::new(Mask::full(8, 8), Mask::full(8, 8), Raster::filled(8, 8, 1.5)).is_err());
        assert!(SegFrame::new(Mask::full(8, 8), Mask::full(8, 9), Raster::filled(8, 8, 0.5)).is_err());
    }

    #[test]
    fn perfect_confidence_keeps_every_single_component_frame() {
        let segs: Vec<SegFrame> = (0..6)
            .map(|i| seg_with_conf(ring(24, 24, 10.0 + i as f64 * 0.5, 12.0, 4.0, 7.0), 1.0))
            .collect();
        let sel = select(&segs, 0.9, 0.99).unwrap();
        assert_eq!(sel.members, (0..6).collect::<Vec<_>>());
    }
}
