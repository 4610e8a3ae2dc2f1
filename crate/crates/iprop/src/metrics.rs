//! Interpretability metrics over attribution maps: pointing game, ROC-AUC,
//! insertion/deletion curves with the Deletion-Insertion Ratio, and the
//! Spearman sanity-check correlation.

use crate::attribution::AttributionMap;
use crate::error::{Error, Result};
use crate::imaging::RgbImage;
use crate::predictor::Predictor;

/// Boolean annotation raster; true = inside the human annotation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationMask {
    height: usize,
    width: usize,
    inside: Vec<bool>,
}

impl AnnotationMask {
    pub fn new(height: usize, width: usize, inside: Vec<bool>) -> Result<Self> {
        if inside.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask payload holds {} cells, expected {}x{}",
                inside.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            inside,
        })
    }

    /// Decode a mask image; any pixel with a nonzero channel is inside.
    pub fn from_image_bytes(bytes: &[u8]) -> Result<Self> {
        let decoded =
            image::load_from_memory(bytes).map_err(|e| Error::Decode(e.to_string()))?;
        let rgb = decoded.to_rgb8();
        let inside = rgb.pixels().map(|p| p.0 != [0, 0, 0]).collect();
        Self::new(rgb.height() as usize, rgb.width() as usize, inside)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        self.inside[row * self.width + col]
    }

    pub fn cells(&self) -> &[bool] {
        &self.inside
    }

    pub fn positive_count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }
}

/// One perturbation curve: (fraction of pixels, predictor score) points and
/// its trapezoidal AUC.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricCurve {
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl MetricCurve {
    fn from_points(points: Vec<(f64, f64)>) -> Self {
        let auc = trapezoid(&points);
        Self { points, auc }
    }
}

fn trapezoid(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (w[0].1 + w[1].1))
        .sum()
}

fn check_dims(am: &AttributionMap, mask: &AnnotationMask) -> Result<()> {
    if (am.height(), am.width()) != (mask.height(), mask.width()) {
        return Err(Error::Argument(format!(
            "map is {}x{} but mask is {}x{}",
            am.height(),
            am.width(),
            mask.height(),
            mask.width()
        )));
    }
    Ok(())
}

/// True iff the map's argmax pixel (row-major tie-break) lies inside the
/// annotation.
pub fn pointing_game(am: &AttributionMap, mask: &AnnotationMask) -> Result<bool> {
    check_dims(am, mask)?;
    if mask.positive_count() == 0 {
        return Err(Error::Argument("annotation mask is empty".into()));
    }
    let idx = am.argmax();
    Ok(mask.cells()[idx])
}

/// Probability that a random inside pixel outranks a random outside pixel,
/// ties counted half (the Mann–Whitney formulation), via rank sums.
pub fn roc_auc(am: &AttributionMap, mask: &AnnotationMask) -> Result<f64> {
    check_dims(am, mask)?;
    let pos = mask.positive_count();
    let neg = am.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Argument(
            "mask must contain both inside and outside pixels".into(),
        ));
    }
    let mut order: Vec<usize> = (0..am.len()).collect();
    order.sort_by(|&a, &b| am.values()[a].partial_cmp(&am.values()[b]).unwrap());
    // average ranks over tie groups, ranks 1-based
    let mut rank_sum_pos = 0.0f64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && am.values()[order[j + 1]] == am.values()[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            if mask.cells()[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    let q = neg as f64;
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Pixel indices ranked by attribution descending, row-major among ties.
fn descending_rank(am: &AttributionMap) -> Vec<usize> {
    let mut order: Vec<usize> = (0..am.len()).collect();
    order.sort_by(|&a, &b| {
        am.values()[b]
            .partial_cmp(&am.values()[a])
            .unwrap()
            .then(a.cmp(&b))
    });
    order
}

fn curve_fractions(steps: usize) -> Vec<f64> {
    (0..steps)
        .map(|i| i as f64 / (steps - 1) as f64)
        .collect()
}

fn perturbation_curve(
    image: &RgbImage,
    am: &AttributionMap,
    predictor: &mut dyn Predictor,
    class_index: u32,
    steps: usize,
    insertion: bool,
) -> Result<MetricCurve> {
    if (am.height(), am.width()) != (image.height(), image.width()) {
        return Err(Error::Argument(format!(
            "map is {}x{} but image is {}x{}",
            am.height(),
            am.width(),
            image.height(),
            image.width()
        )));
    }
    if steps < 2 {
        return Err(Error::Argument("steps must be at least 2".into()));
    }
    let n = am.len();
    let ranked = descending_rank(am);
    // O(1) membership for the perturbation: precompute rank position per pixel
    let mut rank_of = vec![0usize; n];
    for (pos, &idx) in ranked.iter().enumerate() {
        rank_of[idx] = pos;
    }
    let mut points = Vec::with_capacity(steps);
    for fraction in curve_fractions(steps) {
        let revealed = (fraction * n as f64).round() as usize;
        let w = image.width();
        let query = RgbImage::from_fn(image.height(), w, |r, c| {
            let top = rank_of[r * w + c] < revealed;
            match (insertion, top) {
                (true, true) => image.pixel(r, c),
                (true, false) => [0, 0, 0],
                (false, true) => [0, 0, 0],
                (false, false) => image.pixel(r, c),
            }
        })
        .expect("dimensions inherited from a valid image");
        let score = predictor.predict_image(&query, class_index)?;
        points.push((fraction, score));
    }
    Ok(MetricCurve::from_points(points))
}

/// Reveal pixels from highest to lowest attribution onto an all-black
/// canvas and score each step.
pub fn insertion_curve(
    image: &RgbImage,
    am: &AttributionMap,
    predictor: &mut dyn Predictor,
    class_index: u32,
    steps: usize,
) -> Result<MetricCurve> {
    perturbation_curve(image, am, predictor, class_index, steps, true)
}

/// Zero pixels from highest to lowest attribution out of the original image
/// and score each step.
pub fn deletion_curve(
    image: &RgbImage,
    am: &AttributionMap,
    predictor: &mut dyn Predictor,
    class_index: u32,
    steps: usize,
) -> Result<MetricCurve> {
    perturbation_curve(image, am, predictor, class_index, steps, false)
}

/// Deletion-Insertion Ratio; lower is better.
pub fn dir(insertion_auc: f64, deletion_auc: f64) -> Result<f64> {
    if insertion_auc == 0.0 {
        return Err(Error::Argument(
            "insertion AUC is zero; the ratio is undefined".into(),
        ));
    }
    Ok(deletion_auc / insertion_auc)
}

/// Spearman rank correlation of |am1| vs |am2|, average ranks for ties,
/// computed as the Pearson correlation of the rank vectors.
pub fn spearman_abs(am1: &AttributionMap, am2: &AttributionMap) -> Result<f64> {
    if (am1.height(), am1.width()) != (am2.height(), am2.width()) {
        return Err(Error::Argument(format!(
            "maps are {}x{} and {}x{}",
            am1.height(),
            am1.width(),
            am2.height(),
            am2.width()
        )));
    }
    if am1.len() < 2 {
        return Err(Error::Argument("need at least 2 pixels".into()));
    }
    let r1 = average_ranks_abs(am1.values());
    let r2 = average_ranks_abs(am2.values());
    pearson(&r1, &r2)
}

fn average_ranks_abs(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].abs().partial_cmp(&values[b].abs()).unwrap());
    let mut ranks = vec![0.0f64; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]].abs() == values[order[i]].abs() {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Argument(
            "rank variance is zero; correlation is undefined".into(),
        ));
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{SyntheticMode, SyntheticPredictor};

    fn mask_at(h: usize, w: usize, cells: &[(usize, usize)]) -> AnnotationMask {
        let mut inside = vec![false; h * w];
        for &(r, c) in cells {
            inside[r * w + c] = true;
        }
        AnnotationMask::new(h, w, inside).unwrap()
    }

    #[test]
    fn pointing_examples() {
        let mut values = vec![0.0; 16];
        values[3 * 4 + 3] = 9.0;
        let am = AttributionMap::new(4, 4, values).unwrap();
        assert!(pointing_game(&am, &mask_at(4, 4, &[(3, 3)])).unwrap());
        assert!(!pointing_game(&am, &mask_at(4, 4, &[(0, 1), (1, 1)])).unwrap());

        // constant map: row-major tie rule picks (0,0)
        let flat = AttributionMap::constant(4, 4, 1.0).unwrap();
        assert!(pointing_game(&flat, &mask_at(4, 4, &[(0, 0)])).unwrap());

        let empty = AnnotationMask::new(4, 4, vec![false; 16]).unwrap();
        assert!(pointing_game(&flat, &empty).is_err());
    }

    #[test]
    fn pointing_scale_invariant() {
        let am = AttributionMap::new(2, 2, vec![0.1, 0.9, 0.3, 0.2]).unwrap();
        let scaled_values: Vec<f64> = am.values().iter().map(|v| 17.0 * v).collect();
        let scaled = AttributionMap::new(2, 2, scaled_values).unwrap();
        let mask = mask_at(2, 2, &[(0, 1)]);
        assert_eq!(
            pointing_game(&am, &mask).unwrap(),
            pointing_game(&scaled, &mask).unwrap()
        );
    }

    #[test]
    fn roc_auc_examples() {
        // perfect separation
        let am = AttributionMap::new(2, 2, vec![0.9, 0.8, 0.1, 0.2]).unwrap();
        let mask = mask_at(2, 2, &[(0, 0), (0, 1)]);
        assert_eq!(roc_auc(&am, &mask).unwrap(), 1.0);

        // all ties
        let flat = AttributionMap::constant(2, 2, 0.3).unwrap();
        assert_eq!(roc_auc(&flat, &mask).unwrap(), 0.5);

        // positives (0.9, 0.1) vs negatives (0.8, 0.2): 2 wins of 4 pairs
        let am = AttributionMap::new(2, 2, vec![0.9, 0.8, 0.1, 0.2]).unwrap();
        let mask = mask_at(2, 2, &[(0, 0), (1, 0)]);
        assert_eq!(roc_auc(&am, &mask).unwrap(), 0.5);

        // single-class masks rejected
        let all = AnnotationMask::new(2, 2, vec![true; 4]).unwrap();
        assert!(roc_auc(&am, &all).is_err());
    }

    #[test]
    fn roc_auc_complement_sums_to_one_without_ties() {
        let am = AttributionMap::new(2, 3, vec![0.9, 0.1, 0.5, 0.3, 0.8, 0.2]).unwrap();
        let negated_values: Vec<f64> = am.values().iter().map(|v| -v).collect();
        let neg = AttributionMap::new(2, 3, negated_values).unwrap();
        let mask = mask_at(2, 3, &[(0, 0), (1, 1)]);
        let total = roc_auc(&am, &mask).unwrap() + roc_auc(&neg, &mask).unwrap();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_predictor_gives_flat_curves() {
        let image = RgbImage::from_fn(3, 3, |r, c| [(r * 80) as u8, (c * 80) as u8, 10]).unwrap();
        let am = AttributionMap::new(3, 3, (0..9).map(|v| v as f64).collect()).unwrap();
        let mut pred = SyntheticPredictor::new(SyntheticMode::Constant(0.7));
        let ins = insertion_curve(&image, &am, &mut pred, 0, 11).unwrap();
        let del = deletion_curve(&image, &am, &mut pred, 0, 11).unwrap();
        assert!((ins.auc - 0.7).abs() < 1e-12);
        assert!((del.auc - 0.7).abs() < 1e-12);
        assert_eq!(dir(ins.auc, del.auc).unwrap(), 1.0);
    }

    #[test]
    fn curve_endpoints_are_model_determined() {
        // region-mean predictor over the full image: insertion endpoint at
        // fraction 1 scores the original, deletion at fraction 0 likewise.
        let image = RgbImage::from_fn(2, 2, |r, c| {
            let v = (r * 2 + c) as u8 * 60;
            [v, v, v]
        })
        .unwrap();
        let region = AnnotationMask::new(2, 2, vec![true; 4]).unwrap();
        let mut pred = SyntheticPredictor::new(SyntheticMode::RegionMean(region));
        let am = AttributionMap::new(2, 2, vec![3.0, 2.0, 1.0, 0.0]).unwrap();
        let full_score = (0.0 + 60.0 + 120.0 + 180.0) / 4.0 / 255.0;
        let ins = insertion_curve(&image, &am, &mut pred, 0, 5).unwrap();
        assert!((ins.points[0].1 - 0.0).abs() < 1e-12); // black canvas
        assert!((ins.points.last().unwrap().1 - full_score).abs() < 1e-12);
        let del = deletion_curve(&image, &am, &mut pred, 0, 5).unwrap();
        assert!((del.points[0].1 - full_score).abs() < 1e-12);
        assert!((del.points.last().unwrap().1 - 0.0).abs() < 1e-12);
    }

    #[test]
    fn indicator_map_saturates_curves_at_region_area() {
        // 4x4 image, bright 2x2 region; AM = region indicator.
        let region_cells = [(1, 1), (1, 2), (2, 1), (2, 2)];
        let image = RgbImage::from_fn(4, 4, |r, c| {
            if region_cells.contains(&(r, c)) {
                [255, 255, 255]
            } else {
                [40, 40, 40]
            }
        })
        .unwrap();
        let region = mask_at(4, 4, &region_cells);
        let mut values = vec![0.0; 16];
        for &(r, c) in &region_cells {
            values[r * 4 + c] = 1.0;
        }
        let am = AttributionMap::new(4, 4, values).unwrap();
        let mut pred = SyntheticPredictor::new(SyntheticMode::RegionMean(region));
        let steps = 17; // fractions in 1/16 increments
        let ins = insertion_curve(&image, &am, &mut pred, 0, steps).unwrap();
        // maximum reached at fraction = |region|/N = 4/16 and held
        for (fraction, score) in &ins.points {
            if *fraction >= 4.0 / 16.0 {
                assert!((score - 1.0).abs() < 1e-12, "fraction {fraction}");
            } else {
                assert!(*score < 1.0);
            }
        }
        let del = deletion_curve(&image, &am, &mut pred, 0, steps).unwrap();
        for (fraction, score) in &del.points {
            if *fraction >= 4.0 / 16.0 {
                assert!((score - 0.0).abs() < 1e-12, "fraction {fraction}");
            }
        }
    }

    #[test]
    fn dir_examples() {
        assert_eq!(dir(0.5, 0.5).unwrap(), 1.0);
        assert_eq!(dir(0.8, 0.2).unwrap(), 0.25);
        assert!(dir(0.0, 0.1).is_err());
        // scale-free
        assert_eq!(dir(0.4, 0.1).unwrap(), dir(0.8, 0.2).unwrap());
    }

    #[test]
    fn spearman_examples() {
        let a = AttributionMap::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((spearman_abs(&a, &a).unwrap() - 1.0).abs() < 1e-12);

        let rev = AttributionMap::new(2, 2, vec![4.0, 3.0, 2.0, 1.0]).unwrap();
        assert!((spearman_abs(&a, &rev).unwrap() + 1.0).abs() < 1e-12);

        // ranks (1,2,3,4) vs (2,1,3,4): 1 - 6*2/60 = 0.8
        let b = AttributionMap::new(2, 2, vec![2.0, 1.0, 3.0, 4.0]).unwrap();
        assert!((spearman_abs(&a, &b).unwrap() - 0.8).abs() < 1e-12);

        // symmetry
        assert_eq!(
            spearman_abs(&a, &b).unwrap(),
            spearman_abs(&b, &a).unwrap()
        );

        // invariant to strictly monotone transforms of absolute values
        let cubed_values: Vec<f64> = b.values().iter().map(|v| v.powi(3)).collect();
        let cubed = AttributionMap::new(2, 2, cubed_values).unwrap();
        assert!((spearman_abs(&a, &cubed).unwrap() - 0.8).abs() < 1e-12);

        // degenerate input
        let flat = AttributionMap::constant(2, 2, 5.0).unwrap();
        assert!(spearman_abs(&a, &flat).is_err());
    }

    #[test]
    fn mask_from_png_nonzero_rule() {
        let mut img = image::RgbImage::new(2, 2);
        img.put_pixel(1, 0, image::Rgb([0, 0, 7]));
        let mut bytes = Vec::new();
        image::DynamicImage::ImageRgb8(img)
            .write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
            .unwrap();
        let mask = AnnotationMask::from_image_bytes(&bytes).unwrap();
        assert_eq!(mask.positive_count(), 1);
        assert!(mask.contains(0, 1));
    }
}
