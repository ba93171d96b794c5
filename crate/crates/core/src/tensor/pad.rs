use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boundary extension used when a convolution reads outside the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PadMode {
    Reflect,
    Replicate,
    Zero,
}

/// Source index for every position of a padded axis (`None` reads as zero).
#[derive(Clone, Debug)]
pub(crate) struct PadMap {
    src: Vec<Option<usize>>,
}

impl PadMap {
    pub(crate) fn new(len: usize, pad: usize, mode: PadMode) -> Result<Self> {
        if len == 0 {
            return Err(Error::dim("cannot pad an empty axis"));
        }
        if mode == PadMode::Reflect && pad >= len {
            return Err(Error::invalid(format!(
                "reflect padding {pad} needs an axis longer than {pad}, got {len}"
            )));
        }
        let n = len as isize;
        let src = (0..len + 2 * pad)
            .map(|i| {
                let idx = i as isize - pad as isize;
                match mode {
                    _ if (0..n).contains(&idx) => Some(idx as usize),
                    PadMode::Zero => None,
                    PadMode::Replicate => Some(idx.clamp(0, n - 1) as usize),
                    PadMode::Reflect => {
                        let r = if idx < 0 { -idx } else { 2 * (n - 1) - idx };
                        Some(r as usize)
                    }
                }
            })
            .collect();
        Ok(PadMap { src })
    }

    #[inline]
    pub(crate) fn get(&self, padded: usize) -> Option<usize> {
        self.src[padded]
    }
}
