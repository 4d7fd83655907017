use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in pixel coordinates. `x_min < x_max` and
/// `y_min < y_max` for any box that takes part in feature computation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn is_valid(&self) -> bool {
        self.x_min.is_finite()
            && self.y_min.is_finite()
            && self.x_max.is_finite()
            && self.y_max.is_finite()
            && self.x_min < self.x_max
            && self.y_min < self.y_max
    }

    pub fn centroid(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    pub fn centroid_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.centroid();
        let (bx, by) = other.centroid();
        (ax - bx).hypot(ay - by)
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Intersection over union. Zero when the union has no area.
    pub fn iou(&self, other: &BBox) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union <= 0.0 {
            0.0
        } else {
            inter / union
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // Counts unit pixels on the integer grid, as an arithmetic-free check of
    // the closed-form intersection/union used above.
    fn pixel_iou(a: &BBox, b: &BBox) -> f64 {
        let covers = |r: &BBox, x: i64, y: i64| {
            (x as f64) >= r.x_min
                && ((x + 1) as f64) <= r.x_max
                && (y as f64) >= r.y_min
                && ((y + 1) as f64) <= r.y_max
        };
        let x0 = a.x_min.min(b.x_min) as i64;
        let x1 = a.x_max.max(b.x_max).ceil() as i64;
        let y0 = a.y_min.min(b.y_min) as i64;
        let y1 = a.y_max.max(b.y_max).ceil() as i64;
        let (mut inter, mut union) = (0u64, 0u64);
        for x in x0..x1 {
            for y in y0..y1 {
                let (ia, ib) = (covers(a, x, y), covers(b, x, y));
                if ia && ib {
                    inter += 1;
                }
                if ia || ib {
                    union += 1;
                }
            }
        }
        inter as f64 / union as f64
    }

    #[test]
    fn iou_of_known_boxes() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        let expected = 50.0 / 150.0;
        assert!((a.iou(&b) - expected).abs() < 1e-12);
        assert!((pixel_iou(&a, &b) - expected).abs() < 1e-12);
    }

    #[test]
    fn iou_matches_pixel_count_on_integer_boxes() {
        let cases = [
            (BBox::new(0.0, 0.0, 4.0, 4.0), BBox::new(2.0, 2.0, 6.0, 6.0)),
            (BBox::new(0.0, 0.0, 4.0, 4.0), BBox::new(4.0, 4.0, 8.0, 8.0)),
            (BBox::new(1.0, 1.0, 9.0, 5.0), BBox::new(2.0, 0.0, 6.0, 7.0)),
            (BBox::new(0.0, 0.0, 3.0, 3.0), BBox::new(0.0, 0.0, 3.0, 3.0)),
        ];
        for (a, b) in cases {
            assert!((a.iou(&b) - pixel_iou(&a, &b)).abs() < 1e-12, "{a:?} {b:?}");
        }
    }

    #[test]
    fn centroid_distance_of_known_boxes() {
        let a = BBox::new(0.0, 0.0, 10.0, 10.0);
        let b = BBox::new(5.0, 0.0, 15.0, 10.0);
        assert!((a.centroid_distance(&b) - 5.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_boxes_have_zero_iou() {
        let a = BBox::new(0.0, 0.0, 1.0, 1.0);
        let b = BBox::new(5.0, 5.0, 6.0, 6.0);
        assert_eq!(a.iou(&b), 0.0);
    }
}
