//! 8-bit RGB rasters with PNG and binary PPM (P6) codecs.

use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub type Rgb = [u8; 3];

pub const WHITE: Rgb = [255, 255, 255];
pub const BLACK: Rgb = [0, 0, 0];

#[derive(Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl std::fmt::Debug for RgbImage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "RgbImage({}x{})", self.width, self.height)
    }
}

impl RgbImage {
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&color);
        }
        Self { width, height, data }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{}x{} RGB needs {} bytes, got {}",
                width,
                height,
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn put(&mut self, x: usize, y: usize, c: Rgb) {
        if x < self.width && y < self.height {
            let i = (y * self.width + x) * 3;
            self.data[i..i + 3].copy_from_slice(&c);
        }
    }

    /// Nearest-neighbor resize, sampling source pixel `floor((dst + 0.5) * src / dst)`.
    pub fn resize_nearest(&self, width: usize, height: usize) -> Self {
        let mut out = Self::filled(width, height, WHITE);
        if self.width == 0 || self.height == 0 {
            return out;
        }
        for y in 0..height {
            let sy = (((2 * y + 1) * self.height) / (2 * height)).min(self.height - 1);
            for x in 0..width {
                let sx = (((2 * x + 1) * self.width) / (2 * width)).min(self.width - 1);
                out.put(x, y, self.pixel(sx, sy));
            }
        }
        out
    }

    pub fn blit(&mut self, src: &RgbImage, x0: usize, y0: usize) {
        for y in 0..src.height {
            for x in 0..src.width {
                self.put(x0 + x, y0 + y, src.pixel(x, y));
            }
        }
    }

    /// Copies the pixel rectangle `[x0, x1) x [y0, y1)`, clipped to the image.
    pub fn crop(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let x1 = x1.min(self.width);
        let y1 = y1.min(self.height);
        let w = x1.saturating_sub(x0);
        let h = y1.saturating_sub(y0);
        let mut data = Vec::with_capacity(w * h * 3);
        for y in y0..y0 + h {
            let start = (y * self.width + x0) * 3;
            data.extend_from_slice(&self.data[start..start + w * 3]);
        }
        Self { width: w, height: h, data }
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.data)
    }

    pub fn read_ppm<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header = Vec::new();
        let mut fields = Vec::new();
        // magic, width, height, maxval separated by whitespace, '#' comments allowed
        while fields.len() < 4 {
            let mut byte = [0u8; 1];
            if r.read(&mut byte).map_err(|e| Error::Image(e.to_string()))? == 0 {
                return Err(Error::Image("truncated PPM header".into()));
            }
            match byte[0] {
                b'#' => {
                    let mut skip = Vec::new();
                    r.read_until(b'\n', &mut skip).map_err(|e| Error::Image(e.to_string()))?;
                }
                b if b.is_ascii_whitespace() => {
                    if !header.is_empty() {
                        fields.push(String::from_utf8_lossy(&header).into_owned());
                        header.clear();
                    }
                }
                b => header.push(b),
            }
        }
        if fields[0] != "P6" {
            return Err(Error::Image(format!("unsupported PPM magic {}", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Image(format!("bad PPM field {s}")));
        let (width, height, maxval) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported PPM maxval {maxval}")));
        }
        let mut data = vec![0u8; width * height * 3];
        r.read_exact(&mut data).map_err(|_| Error::Image("truncated PPM payload".into()))?;
        Self::from_raw(width, height, data)
    }

    pub fn write_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Image(e.to_string()))?;
        writer.write_image_data(&self.data).map_err(|e| Error::Image(e.to_string()))?;
        writer.finish().map_err(|e| Error::Image(e.to_string()))
    }

    pub fn read_png<R: BufRead + std::io::Seek>(r: R) -> Result<Self> {
        let mut decoder = png::Decoder::new(r);
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(|e| Error::Image(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::Image("PNG too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf).map_err(|e| Error::Image(e.to_string()))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let buf = &buf[..info.buffer_size()];
        let data = match info.color_type {
            png::ColorType::Rgb => buf.to_vec(),
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            png::ColorType::Indexed => return Err(Error::Image("indexed PNG not expanded".into())),
        };
        Self::from_raw(w, h, data)
    }

    /// Decodes a PNG or PPM file, chosen by its leading bytes.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.starts_with(b"\x89PNG") {
            Self::read_png(std::io::Cursor::new(bytes))
        } else if bytes.starts_with(b"P6") {
            Self::read_ppm(bytes)
        } else {
            Err(Error::Image("neither PNG nor PPM".into()))
        }
    }

    /// Writes PNG for `.png` paths and PPM otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            self.write_png(&mut w)?;
        } else {
            self.write_ppm(&mut w).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Binary PGM (P5) for grayscale heatmaps.
pub fn write_pgm<W: Write>(width: usize, height: usize, values: &[u8], mut w: W) -> std::io::Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker() -> RgbImage {
        let mut img = RgbImage::filled(3, 2, WHITE);
        img.put(0, 0, [10, 20, 30]);
        img.put(2, 1, [200, 100, 0]);
        img
    }

    #[test]
    fn ppm_round_trip() {
        let img = checker();
        let mut buf = Vec::new();
        img.write_ppm(&mut buf).unwrap();
        assert!(buf.starts_with(b"P6\n3 2\n255\n"));
        assert_eq!(RgbImage::decode(&buf).unwrap(), img);
    }

    #[test]
    fn ppm_comments_are_skipped() {
        let mut buf = b"P6 # made by hand\n1 1\n255\n".to_vec();
        buf.extend_from_slice(&[1, 2, 3]);
        assert_eq!(RgbImage::decode(&buf).unwrap().pixel(0, 0), [1, 2, 3]);
    }

    #[test]
    fn png_round_trip() {
        let img = checker();
        let mut buf = Vec::new();
        img.write_png(&mut buf).unwrap();
        assert_eq!(RgbImage::decode(&buf).unwrap(), img);
    }

    #[test]
    fn garbage_is_not_an_image() {
        assert!(RgbImage::decode(b"hello").is_err());
        assert!(RgbImage::decode(b"\x89PNG broken").is_err());
    }

    #[test]
    fn nearest_resize_of_constant_is_constant() {
        let img = RgbImage::filled(7, 3, [9, 8, 7]);
        let r = img.resize_nearest(200, 165);
        assert_eq!((r.width(), r.height()), (200, 165));
        assert!(r.as_bytes().chunks(3).all(|p| p == [9, 8, 7]));
    }

    #[test]
    fn crop_clips() {
        let img = checker();
        let c = img.crop(1, 0, 10, 10);
        assert_eq!((c.width(), c.height()), (2, 2));
        assert_eq!(c.pixel(1, 1), [200, 100, 0]);
    }
}
