use thiserror::Error;

use crate::genome::{BinaryMask, MIN_IMAGE_SIDE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error(
        "image of {height}x{width} is smaller than the {MIN_IMAGE_SIDE}x{MIN_IMAGE_SIDE} minimum"
    )]
    TooSmall { height: usize, width: usize },
    #[error("unsupported channel count {0} (expected 1 or 3)")]
    Channels(usize),
    #[error("data length {got} does not match {height}x{width}x{channels}")]
    Length {
        height: usize,
        width: usize,
        channels: usize,
        got: usize,
    },
    #[error("pixel value {value} at index {index} is outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
}

/// H x W x C image with values in `[0, 1]`, row-major and channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
    ) -> Result<Self, TensorError> {
        if height < MIN_IMAGE_SIDE || width < MIN_IMAGE_SIDE {
            return Err(TensorError::TooSmall { height, width });
        }
        if channels != 1 && channels != 3 {
            return Err(TensorError::Channels(channels));
        }
        if data.len() != height * width * channels {
            return Err(TensorError::Length {
                height,
                width,
                channels,
                got: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(TensorError::OutOfRange { index, value });
        }
        Ok(ImageTensor {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(
        height: usize,
        width: usize,
        channels: usize,
        value: f64,
    ) -> Result<Self, TensorError> {
        Self::new(
            height,
            width,
            channels,
            vec![value; height * width * channels],
        )
    }

    /// Build a single-channel image from a per-pixel function of (row, col).
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, TensorError> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::new(height, width, 1, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// All channels of pixel `p` (row-major pixel index).
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.channels..(p + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, p: usize) -> &mut [f64] {
        let c = self.channels;
        &mut self.data[p * c..(p + 1) * c]
    }

    /// Channel sum of pixel `p`.
    pub fn brightness(&self, p: usize) -> f64 {
        self.pixel(p).iter().sum()
    }

    /// `X ⊙ M`: zero every channel of each eliminated pixel.
    pub fn masked(&self, mask: &BinaryMask) -> ImageTensor {
        assert_eq!(
            (mask.height(), mask.width()),
            (self.height, self.width),
            "mask and image shapes differ"
        );
        let mut out = self.clone();
        for (p, &keep) in mask.bits().iter().enumerate() {
            if !keep {
                out.pixel_mut(p).fill(0.0);
            }
        }
        out
    }
}
