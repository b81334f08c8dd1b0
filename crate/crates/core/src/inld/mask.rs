use ndarray::Array2;

use super::LabelMap;
use crate::error::{Error, Result};
use crate::geometry::Point;
use crate::rbox::Quad;

/// Rasterizes labelled quads into an `H × W` label map whose cell `(i, j)`
/// samples the image point `((j + 0.5)·stride, (i + 0.5)·stride)`.
///
/// Where boxes overlap the smaller one wins; equal areas go to the lower
/// index. Uncovered cells are 0.
pub fn rasterize_masks(quads: &[Quad], labels: &[u32], canvas: (usize, usize), stride: f64) -> Result<LabelMap> {
    let (h, w) = canvas;
    if h == 0 || w == 0 {
        return Err(Error::argument("empty canvas"));
    }
    if !(stride > 0.0 && stride.is_finite()) {
        return Err(Error::argument("stride must be positive"));
    }
    if quads.len() != labels.len() {
        return Err(Error::argument(format!("{} boxes but {} labels", quads.len(), labels.len())));
    }
    if labels.contains(&0) {
        return Err(Error::argument("box labels start at 1"));
    }

    // paint large to small so the smallest box ends up on top
    let mut order: Vec<usize> = (0..quads.len()).collect();
    order.sort_by(|&a, &b| quads[b].area().total_cmp(&quads[a].area()).then(b.cmp(&a)));

    let mut out = Array2::<u32>::zeros((h, w));
    for k in order {
        let q = &quads[k];
        let Ok(bounds) = q.to_hbox() else { continue };
        // cell index range whose centers can fall inside the bounds
        let lo = |v: f64| ((v / stride - 0.5).ceil().max(0.0)) as usize;
        let hi = |v: f64, n: usize| (((v / stride - 0.5).floor() + 1.0).max(0.0) as usize).min(n);
        for i in lo(bounds.ymin)..hi(bounds.ymax, h) {
            let y = (i as f64 + 0.5) * stride;
            for j in lo(bounds.xmin)..hi(bounds.xmax, w) {
                let x = (j as f64 + 0.5) * stride;
                if q.contains(Point::new(x, y)) {
                    out[[i, j]] = labels[k];
                }
            }
        }
    }
    Ok(LabelMap::new(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rbox::HBox;

    #[test]
    fn empty_inputs() {
        let m = rasterize_masks(&[], &[], (4, 6), 8.0).unwrap();
        assert!(m.labels().iter().all(|&l| l == 0));
        assert!(rasterize_masks(&[], &[], (0, 6), 8.0).is_err());
    }

    #[test]
    fn left_half() {
        // 4x8 cells at stride 2 -> image 8x16; the box covers x in [0, 8]
        let q = HBox::new(0.0, 0.0, 8.0, 8.0).unwrap().to_quad();
        let m = rasterize_masks(&[q], &[3], (4, 8), 2.0).unwrap();
        for i in 0..4 {
            for j in 0..8 {
                assert_eq!(m.get(i, j), if j < 4 { 3 } else { 0 }, "cell {i},{j}");
            }
        }
    }

    #[test]
    fn smaller_box_wins() {
        let outer = HBox::new(0.0, 0.0, 10.0, 10.0).unwrap().to_quad();
        let inner = HBox::new(3.0, 3.0, 7.0, 7.0).unwrap().to_quad();
        for (quads, labels) in [([outer, inner], [1, 2]), ([inner, outer], [2, 1])] {
            let m = rasterize_masks(&quads, &labels, (10, 10), 1.0).unwrap();
            assert_eq!(m.get(5, 5), 2);
            assert_eq!(m.get(1, 1), 1);
            assert_eq!(m.present().into_iter().collect::<Vec<_>>(), vec![1, 2]);
        }
    }

    #[test]
    fn rejects_label_zero_and_mismatch() {
        let q = HBox::new(0.0, 0.0, 1.0, 1.0).unwrap().to_quad();
        assert!(rasterize_masks(&[q], &[0], (2, 2), 1.0).is_err());
        assert!(rasterize_masks(&[q], &[1, 2], (2, 2), 1.0).is_err());
    }
}
