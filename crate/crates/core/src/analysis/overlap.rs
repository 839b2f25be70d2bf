use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsify::{Subnetwork, TensorMask};
use crate::task::Subroutine;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerIou {
    pub name: String,
    pub iou: f64,
    pub intersection: usize,
    pub union: usize,
}

fn check_pair(a: &TensorMask, b: &TensorMask) -> Result<()> {
    if a.name != b.name || a.shape != b.shape || a.bits.len() != b.bits.len() {
        return Err(Error::shape(
            "iou",
            format!("{} {:?} vs {} {:?}", a.name, a.shape, b.name, b.shape),
        ));
    }
    Ok(())
}

/// `|A & B| / |A | B|` per masked tensor; an empty union counts as 1.
pub fn iou_per_layer(a: &[TensorMask], b: &[TensorMask]) -> Result<Vec<LayerIou>> {
    if a.len() != b.len() {
        return Err(Error::shape("iou", format!("{} vs {} masked tensors", a.len(), b.len())));
    }
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            check_pair(x, y)?;
            let intersection = x.bits.iter().zip(&y.bits).filter(|(p, q)| **p && **q).count();
            let union = x.bits.iter().zip(&y.bits).filter(|(p, q)| **p || **q).count();
            Ok(LayerIou {
                name: x.name.clone(),
                iou: if union == 0 { 1.0 } else { intersection as f64 / union as f64 },
                intersection,
                union,
            })
        })
        .collect()
}

/// Elementwise AND of masks with identical layouts.
pub fn intersect_masks(masks: &[&[TensorMask]]) -> Result<Vec<TensorMask>> {
    let (first, rest) = masks
        .split_first()
        .ok_or_else(|| Error::Config("intersection of no masks".into()))?;
    let mut out = first.to_vec();
    for other in rest {
        if other.len() != out.len() {
            return Err(Error::shape("intersect", format!("{} vs {} masked tensors", other.len(), out.len())));
        }
        for (acc, m) in out.iter_mut().zip(other.iter()) {
            check_pair(acc, m)?;
            for (a, &b) in acc.bits.iter_mut().zip(&m.bits) {
                *a &= b;
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverlapReport {
    /// Layers masked by every subnetwork compared.
    pub layers: Vec<String>,
    /// Mean pairwise IoU among repeats, per subroutine, per shared layer.
    pub within: Vec<(Subroutine, Vec<f64>)>,
    /// IoU between the per-subroutine intersections, per shared layer.
    pub between: Vec<f64>,
    /// Within-subroutine IoU averaged over subroutines exceeds the between
    /// IoU on every shared layer.
    pub ordering_holds: bool,
    /// Layers where some union was empty.
    pub empty_unions: Vec<String>,
}

fn restrict<'a>(subnet: &'a Subnetwork, layers: &[String]) -> Vec<TensorMask> {
    layers
        .iter()
        .filter_map(|l| subnet.masks.iter().find(|m| &m.name == l).cloned())
        .collect()
}

/// Within- and between-subroutine overlap for subnetworks of one base model.
/// Each group needs at least two repeats.
pub fn overlap_report(groups: &[(Subroutine, Vec<Subnetwork>)]) -> Result<OverlapReport> {
    if groups.len() < 2 || groups.iter().any(|(_, s)| s.len() < 2) {
        return Err(Error::Config(
            "overlap needs two or more subroutines with two or more repeats each".into(),
        ));
    }
    let mut layers: Vec<String> = groups[0].1[0].masks.iter().map(|m| m.name.clone()).collect();
    layers.retain(|l| groups.iter().all(|(_, subs)| subs.iter().all(|s| s.masks.iter().any(|m| &m.name == l))));
    if layers.is_empty() {
        return Err(Error::Config("subnetworks share no masked layer".into()));
    }
    let mut empty_unions = Vec::new();
    let mut note_empty = |ious: &[LayerIou]| {
        for l in ious.iter().filter(|l| l.union == 0) {
            if !empty_unions.contains(&l.name) {
                empty_unions.push(l.name.clone());
            }
        }
    };
    let mut within = Vec::new();
    let mut intersections = Vec::new();
    for (sr, subs) in groups {
        let masks: Vec<Vec<TensorMask>> = subs.iter().map(|s| restrict(s, &layers)).collect();
        let mut sums = vec![0.0; layers.len()];
        let mut pairs = 0;
        for i in 0..masks.len() {
            for j in i + 1..masks.len() {
                let ious = iou_per_layer(&masks[i], &masks[j])?;
                note_empty(&ious);
                for (s, l) in sums.iter_mut().zip(&ious) {
                    *s += l.iou;
                }
                pairs += 1;
            }
        }
        within.push((*sr, sums.iter().map(|s| s / pairs as f64).collect::<Vec<_>>()));
        let refs: Vec<&[TensorMask]> = masks.iter().map(Vec::as_slice).collect();
        intersections.push(intersect_masks(&refs)?);
    }
    let mut between = vec![0.0; layers.len()];
    let mut pairs = 0;
    for i in 0..intersections.len() {
        for j in i + 1..intersections.len() {
            let ious = iou_per_layer(&intersections[i], &intersections[j])?;
            note_empty(&ious);
            for (b, l) in between.iter_mut().zip(&ious) {
                *b += l.iou;
            }
            pairs += 1;
        }
    }
    for b in &mut between {
        *b /= pairs as f64;
    }
    let ordering_holds = (0..layers.len()).all(|l| {
        let mean_within = within.iter().map(|(_, w)| w[l]).sum::<f64>() / within.len() as f64;
        mean_within > between[l]
    });
    Ok(OverlapReport {
        layers,
        within,
        between,
        ordering_holds,
        empty_unions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask(bits: &[u8]) -> Vec<TensorMask> {
        vec![TensorMask {
            param: 0,
            name: "w".into(),
            shape: vec![bits.len()],
            bits: bits.iter().map(|&b| b == 1).collect(),
        }]
    }

    #[test]
    fn iou_cases() {
        let a = mask(&[1, 1, 0, 0]);
        assert_eq!(iou_per_layer(&a, &a).unwrap()[0].iou, 1.0);
        assert_eq!(iou_per_layer(&a, &mask(&[0, 0, 1, 1])).unwrap()[0].iou, 0.0);
        assert_eq!(iou_per_layer(&mask(&[1, 1, 1, 0]), &mask(&[1, 0, 0, 1])).unwrap()[0].iou, 0.25);
        assert_eq!(iou_per_layer(&mask(&[0, 0]), &mask(&[0, 0])).unwrap()[0].iou, 1.0);
    }

    #[test]
    fn intersection_cases() {
        let a = mask(&[1, 0, 1, 1]);
        assert_eq!(intersect_masks(&[&a, &a]).unwrap(), a);
        let z = mask(&[0, 0, 0, 0]);
        assert_eq!(intersect_masks(&[&a, &z]).unwrap(), z);
        assert!(intersect_masks(&[&a, &mask(&[1, 0])]).is_err());
    }
}
