use super::GeomError;

/// A channel-major grid of confidence values with a spatial stride.
///
/// `stride` is the number of input-crop pixels per grid cell; grids that do
/// not live in the input-crop frame (RoI patches, head outputs over a box)
/// carry a stride of 1 and leave the mapping to their consumer.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    channels: usize,
    height: usize,
    width: usize,
    stride: f64,
    data: Vec<f32>,
}

impl Heatmap {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: f64) -> Heatmap {
        Heatmap { channels, height, width, stride, data: vec![0.0; channels * height * width] }
    }

    pub fn from_data(
        channels: usize,
        height: usize,
        width: usize,
        stride: f64,
        data: Vec<f32>,
    ) -> Result<Heatmap, GeomError> {
        if data.len() != channels * height * width {
            return Err(GeomError::BadShape(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Heatmap { channels, height, width, stride, data })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(height, width)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn stride(&self) -> f64 {
        self.stride
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[(c * self.height + row) * self.width + col]
    }

    pub fn set(&mut self, c: usize, row: usize, col: usize, v: f32) {
        self.data[(c * self.height + row) * self.width + col] = v;
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let plane = self.height * self.width;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f32] {
        let plane = self.height * self.width;
        &mut self.data[c * plane..(c + 1) * plane]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Serialize as a flat little-endian blob: header `channels`, `height`,
    /// `width` (u32) and `stride` (f32), then the values.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.data.len() * 4);
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.stride as f32).to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Heatmap, GeomError> {
        if bytes.len() < 16 {
            return Err(GeomError::Blob(format!("{} bytes is too short for the header", bytes.len())));
        }
        let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let channels = u32_at(0) as usize;
        let height = u32_at(4) as usize;
        let width = u32_at(8) as usize;
        let stride = f32::from_le_bytes(bytes[12..16].try_into().unwrap()) as f64;
        let expected = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| GeomError::Blob("header dimensions overflow".into()))?;
        if bytes.len() - 16 != expected {
            return Err(GeomError::Blob(format!(
                "payload is {} bytes, header {channels}x{height}x{width} requires {expected}",
                bytes.len() - 16
            )));
        }
        let data = bytes[16..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Heatmap { channels, height, width, stride, data })
    }
}
