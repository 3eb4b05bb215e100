use crate::error::{Result, VisionError};

/// Grid of range readings in meters, row-major, from a forward depth camera.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    height: usize,
    width: usize,
    max_range: f64,
    data: Vec<f64>,
}

impl DepthImage {
    /// Validates shape, power-of-two dimensions and the `[0, max_range]` range.
    pub fn new(height: usize, width: usize, max_range: f64, data: Vec<f64>) -> Result<Self> {
        if !(max_range.is_finite() && max_range > 0.0) {
            return Err(VisionError::Image(format!("max_range {max_range} must be positive")));
        }
        if !height.is_power_of_two() || !width.is_power_of_two() {
            return Err(VisionError::Config(format!(
                "image dimensions {height}x{width} must be powers of two"
            )));
        }
        if data.len() != height * width {
            return Err(VisionError::Image(format!(
                "{} values for a {height}x{width} image",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=max_range).contains(*v)) {
            return Err(VisionError::Image(format!(
                "reading {bad} outside [0, {max_range}]"
            )));
        }
        Ok(DepthImage {
            height,
            width,
            max_range,
            data,
        })
    }

    /// Builds an image by clamping arbitrary values into range (NaN maps to 0).
    pub fn from_clamped(height: usize, width: usize, max_range: f64, raw: &[f64]) -> Result<Self> {
        let data = raw
            .iter()
            .map(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, max_range) })
            .collect();
        Self::new(height, width, max_range, data)
    }

    pub fn filled(height: usize, width: usize, max_range: f64, value: f64) -> Result<Self> {
        Self::new(height, width, max_range, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn max_range(&self) -> f64 {
        self.max_range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Readings divided by `max_range`, each in `[0, 1]`.
    pub fn normalize(&self) -> Vec<f64> {
        self.data.iter().map(|d| d / self.max_range).collect()
    }

    pub fn same_geometry(&self, other: &DepthImage) -> bool {
        self.height == other.height && self.width == other.width && self.max_range == other.max_range
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_maps_range_to_unit_interval() {
        let img = DepthImage::new(1, 4, 20.0, vec![20.0, 0.0, 10.0, 5.0]).unwrap();
        assert_eq!(img.normalize(), vec![1.0, 0.0, 0.5, 0.25]);
    }

    #[test]
    fn rejects_out_of_range_and_bad_sizes() {
        assert!(DepthImage::new(2, 2, 10.0, vec![0.0, 1.0, 11.0, 2.0]).is_err());
        assert!(DepthImage::new(2, 2, 10.0, vec![0.0, -0.1, 1.0, 2.0]).is_err());
        assert!(matches!(
            DepthImage::new(3, 2, 10.0, vec![0.0; 6]),
            Err(VisionError::Config(_))
        ));
        assert!(DepthImage::new(2, 2, 10.0, vec![0.0; 3]).is_err());
    }
}
