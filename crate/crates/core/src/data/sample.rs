use trivessel_tensor::Tensor;

use crate::{Error, Result};

/// One fundus image with its vessel annotation and field-of-view mask.
///
/// `image` is `(1, 3, h, w)` in `[0, 1]` (or mean-subtracted after
/// normalization); both masks are `(1, 1, h, w)` holding only 0 and 1.
#[derive(Debug, Clone, PartialEq)]
pub struct FundusSample {
    pub id: String,
    pub image: Tensor<f32>,
    pub vessel: Tensor<f32>,
    pub fov: Tensor<f32>,
}

impl FundusSample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, vessel: Tensor<f32>, fov: Tensor<f32>) -> Result<Self> {
        let s = FundusSample {
            id: id.into(),
            image,
            vessel,
            fov,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }

    pub fn validate(&self) -> Result<()> {
        let (i, v, f) = (self.image.shape(), self.vessel.shape(), self.fov.shape());
        if i.n != 1 || i.c != 3 {
            return Err(Error::Dataset(format!("{}: image must be (1,3,h,w), got {i}", self.id)));
        }
        for (name, m) in [("vessel mask", v), ("fov mask", f)] {
            if m.n != 1 || m.c != 1 || m.h != i.h || m.w != i.w {
                return Err(Error::Dataset(format!(
                    "{}: {name} is {m} but image is {}x{}",
                    self.id, i.h, i.w
                )));
            }
        }
        for (name, m) in [("vessel mask", &self.vessel), ("fov mask", &self.fov)] {
            if m.data().iter().any(|&x| x != 0.0 && x != 1.0) {
                return Err(Error::Dataset(format!("{}: {name} is not binary", self.id)));
            }
        }
        Ok(())
    }
}
