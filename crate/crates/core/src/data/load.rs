use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use trivessel_tensor::Tensor;

use super::FundusSample;
use crate::{Error, Result};

const IMAGE_EXTENSIONS: [&str; 6] = ["png", "tif", "tiff", "jpg", "jpeg", "gif"];

/// On-disk dataset organisation. `Synthetic` uses the DRIVE layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Drive,
    Iostar,
    Synthetic,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Drive => "drive",
            Layout::Iostar => "iostar",
            Layout::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "drive" => Ok(Layout::Drive),
            "iostar" => Ok(Layout::Iostar),
            "synthetic" => Ok(Layout::Synthetic),
            _ => Err(Error::Config(format!("unknown layout {s:?}; expected drive, iostar or synthetic"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Vec<FundusSample>,
    pub test: Vec<FundusSample>,
}

/// Number of IOSTAR images used for training and validation.
pub const IOSTAR_TRAIN: usize = 20;

/// Loads a dataset root.
///
/// DRIVE: `training/{images,1st_manual,mask}` and `test/{images,1st_manual,mask}`.
/// IOSTAR: `image`, `GT`, `mask`; images sorted by number, the first 20
/// form the training split and the rest the test split.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<DatasetSplit> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("dataset root {} is not a directory", root.display())));
    }
    match layout {
        Layout::Drive | Layout::Synthetic => Ok(DatasetSplit {
            train: load_triplets(&root.join("training"), "images", "1st_manual", "mask")?,
            test: load_triplets(&root.join("test"), "images", "1st_manual", "mask")?,
        }),
        Layout::Iostar => {
            let mut all = load_triplets(root, "image", "GT", "mask")?;
            if all.len() <= IOSTAR_TRAIN {
                return Err(Error::Dataset(format!(
                    "{}: IOSTAR layout needs more than {IOSTAR_TRAIN} images, found {}",
                    root.display(),
                    all.len()
                )));
            }
            let test = all.split_off(IOSTAR_TRAIN);
            Ok(DatasetSplit { train: all, test })
        }
    }
}

/// Identifier shared by an image and its annotations: the first run of
/// digits in the file stem, or the whole stem if it has none.
fn match_key(path: &Path) -> String {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
    let digits: String = stem
        .chars()
        .skip_while(|c| !c.is_ascii_digit())
        .take_while(|c| c.is_ascii_digit())
        .collect();
    if digits.is_empty() {
        stem.to_string()
    } else {
        digits.trim_start_matches('0').to_string()
    }
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            files.push(path);
        }
    }
    Ok(files)
}

fn sort_key(path: &Path) -> (u64, String) {
    let key = match_key(path);
    (key.parse().unwrap_or(u64::MAX), key)
}

fn load_triplets(root: &Path, images: &str, vessels: &str, fovs: &str) -> Result<Vec<FundusSample>> {
    let mut image_files = list_images(&root.join(images))?;
    if image_files.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", root.join(images).display())));
    }
    image_files.sort_by_key(|p| sort_key(p));
    let vessel_files = list_images(&root.join(vessels))?;
    let fov_files = list_images(&root.join(fovs))?;
    let companion = |files: &[PathBuf], key: &str, what: &str, image: &Path| -> Result<PathBuf> {
        let mut hits = files.iter().filter(|p| match_key(p) == key);
        match (hits.next(), hits.next()) {
            (Some(p), None) => Ok(p.clone()),
            (None, _) => Err(Error::Dataset(format!("no {what} for {}", image.display()))),
            (Some(_), Some(_)) => Err(Error::Dataset(format!("several {what} files match {}", image.display()))),
        }
    };
    let triplets = image_files
        .iter()
        .map(|img| {
            let key = match_key(img);
            Ok((
                img.clone(),
                companion(&vessel_files, &key, "vessel annotation", img)?,
                companion(&fov_files, &key, "FOV mask", img)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    triplets
        .par_iter()
        .map(|(img, vessel, fov)| load_sample(img, vessel, fov))
        .collect()
}

/// Reads an RGB image and two grayscale masks (nonzero is foreground).
pub fn load_sample(image: &Path, vessel: &Path, fov: &Path) -> Result<FundusSample> {
    let id = image
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .to_string();
    let rgb = read_rgb(image)?;
    let v = read_mask(vessel)?;
    let f = read_mask(fov)?;
    for (m, path) in [(&v, vessel), (&f, fov)] {
        if m.shape().h != rgb.shape().h || m.shape().w != rgb.shape().w {
            return Err(Error::Dataset(format!(
                "{} is {}x{} but {} is {}x{}",
                path.display(),
                m.shape().w,
                m.shape().h,
                image.display(),
                rgb.shape().w,
                rgb.shape().h
            )));
        }
    }
    FundusSample::new(id, rgb, v, f)
}

/// `(1, 3, h, w)` in `[0, 1]`.
pub fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0f32; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f32 / 255.0;
        }
    }
    Ok(Tensor::from_vec([1, 3, h, w], data)?)
}

/// `(1, 1, h, w)` with 1 where the pixel is nonzero.
pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| Error::image(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.pixels().map(|p| if p[0] > 0 { 1.0 } else { 0.0 }).collect();
    Ok(Tensor::from_vec([1, 1, h, w], data)?)
}
