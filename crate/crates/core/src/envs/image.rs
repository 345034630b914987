use std::io::{self, Write};

/// Channel-major 8-bit image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: u8) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn set_rgb(&mut self, y: usize, x: usize, rgb: [u8; 3]) {
        for (c, v) in rgb.into_iter().enumerate().take(self.channels) {
            self.set(c, y, x, v);
        }
    }

    /// Binary PGM for one channel, PPM for three.
    pub fn write_pnm<W: Write>(&self, mut out: W) -> io::Result<()> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            n => {
                return Err(io::Error::new(
                    io::ErrorKind::InvalidInput,
                    format!("cannot write {n}-channel image"),
                ))
            }
        };
        write!(out, "{magic}\n{} {}\n255\n", self.width, self.height)?;
        let plane = self.width * self.height;
        let mut buf = Vec::with_capacity(self.data.len());
        for i in 0..plane {
            for c in 0..self.channels {
                buf.push(self.data[c * plane + i]);
            }
        }
        out.write_all(&buf)
    }
}
