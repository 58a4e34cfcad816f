//! Restore requests as they arrive from the CLI or HTTP, and their validation.

use std::fmt;

use textir::degradations::{Mask, SR_FACTORS};
use textir::{ImageTensor, Task};

/// A malformed request, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestError {
    pub field: &'static str,
    pub reason: String,
}

impl RequestError {
    pub fn new(field: &'static str, reason: impl Into<String>) -> Self {
        Self {
            field,
            reason: reason.into(),
        }
    }
}

impl fmt::Display for RequestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

impl std::error::Error for RequestError {}

/// Undecoded request fields, exactly as received.
#[derive(Debug, Clone, Default)]
pub struct RawRequest {
    pub task: Option<String>,
    pub image: Option<Vec<u8>>,
    pub mask: Option<Vec<u8>>,
    pub prompt: Option<String>,
    pub beta: Option<String>,
    pub sr_factor: Option<String>,
    pub seed: Option<String>,
    /// Sweep only: comma-separated or a JSON array.
    pub betas: Option<String>,
}

#[derive(Debug, Clone)]
pub struct RestoreRequest {
    pub task: Task,
    /// The uploaded image, RGB in `[0, 1]`.
    pub image: ImageTensor,
    /// Inpainting only; 255 = keep.
    pub mask: Option<Mask>,
    pub prompt: Option<String>,
    /// Weight of the text embedding against the image embedding.
    pub beta: f64,
    pub sr_factor: Option<u32>,
    /// Echoed in the response. Inference itself is deterministic.
    pub seed: u64,
}

pub const MAX_SWEEP: usize = 9;

fn parse_num<T: std::str::FromStr>(field: &'static str, raw: &str) -> Result<T, RequestError> {
    raw.trim()
        .parse()
        .map_err(|_| RequestError::new(field, format!("`{raw}` is not a valid number")))
}

fn parse_beta(field: &'static str, raw: &str) -> Result<f64, RequestError> {
    let beta: f64 = parse_num(field, raw)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(RequestError::new(field, format!("{beta} is outside [0, 1]")));
    }
    Ok(beta)
}

impl RestoreRequest {
    pub fn parse(raw: &RawRequest) -> Result<Self, RequestError> {
        let task: Task = raw
            .task
            .as_deref()
            .ok_or_else(|| RequestError::new("task", "missing"))?
            .parse()
            .map_err(|e: textir::Error| RequestError::new("task", e.to_string()))?;
        let image_bytes = raw.image.as_deref().ok_or_else(|| RequestError::new("image", "missing"))?;
        let image = ImageTensor::from_encoded(image_bytes)
            .map_err(|e| RequestError::new("image", format!("cannot decode: {e}")))?;
        let mask = raw
            .mask
            .as_deref()
            .map(|b| Mask::from_png_bytes(b).map_err(|e| RequestError::new("mask", format!("cannot decode: {e}"))))
            .transpose()?;
        let beta = match raw.beta.as_deref() {
            Some(b) => parse_beta("beta", b)?,
            None => 1.0,
        };
        let sr_factor = raw.sr_factor.as_deref().map(|f| parse_num("sr_factor", f)).transpose()?;
        let seed = raw.seed.as_deref().map(|s| parse_num("seed", s)).transpose()?.unwrap_or(0);
        let req = Self {
            task,
            image,
            mask,
            prompt: raw.prompt.clone(),
            beta,
            sr_factor,
            seed,
        };
        req.validate()?;
        Ok(req)
    }

    /// The task-independent preconditions.
    pub fn validate(&self) -> Result<(), RequestError> {
        check_prompt(self.prompt.as_deref(), self.beta)?;
        match (self.task, &self.mask) {
            (Task::Inpaint, None) => return Err(RequestError::new("mask", "required for inpainting")),
            (Task::Inpaint, Some(m)) => {
                if (m.height(), m.width()) != (self.image.height(), self.image.width()) {
                    return Err(RequestError::new(
                        "mask",
                        format!(
                            "mask is {}x{} but image is {}x{}",
                            m.height(),
                            m.width(),
                            self.image.height(),
                            self.image.width()
                        ),
                    ));
                }
            }
            (_, Some(_)) => return Err(RequestError::new("mask", "only inpainting takes a mask")),
            _ => {}
        }
        match (self.task, self.sr_factor) {
            (Task::SuperResolution, None) => {
                return Err(RequestError::new("sr_factor", "required for super-resolution"))
            }
            (Task::SuperResolution, Some(f)) if !SR_FACTORS.contains(&f) => {
                return Err(RequestError::new("sr_factor", format!("{f} is not one of {SR_FACTORS:?}")))
            }
            (Task::SuperResolution, Some(_)) => {}
            (_, Some(_)) => return Err(RequestError::new("sr_factor", "only super-resolution takes a factor")),
            _ => {}
        }
        Ok(())
    }
}

fn check_prompt(prompt: Option<&str>, beta: f64) -> Result<(), RequestError> {
    if beta > 0.0 && prompt.map_or(true, |p| p.trim().is_empty()) {
        return Err(RequestError::new("prompt", format!("required when beta > 0 (beta = {beta})")));
    }
    Ok(())
}

/// Parses a β list for a sweep: 1 to 9 values, strictly ascending.
pub fn parse_betas(raw: &str, prompt: Option<&str>) -> Result<Vec<f64>, RequestError> {
    let trimmed = raw.trim();
    let parts: Vec<String> = if trimmed.starts_with('[') {
        serde_json::from_str::<Vec<f64>>(trimmed)
            .map_err(|e| RequestError::new("betas", format!("not a JSON number array: {e}")))?
            .iter()
            .map(|v| v.to_string())
            .collect()
    } else {
        trimmed.split(',').map(|s| s.to_string()).collect()
    };
    let betas = parts
        .iter()
        .map(|p| parse_beta("betas", p))
        .collect::<Result<Vec<_>, _>>()?;
    if betas.is_empty() || betas.len() > MAX_SWEEP {
        return Err(RequestError::new(
            "betas",
            format!("expected 1 to {MAX_SWEEP} values, got {}", betas.len()),
        ));
    }
    if betas.windows(2).any(|w| w[1] <= w[0]) {
        return Err(RequestError::new("betas", "values must be strictly ascending"));
    }
    check_prompt(prompt, *betas.last().expect("non-empty"))?;
    Ok(betas)
}

#[cfg(test)]
mod tests {
    use super::*;
    use textir::ColorSpace;

    fn png(side: usize) -> Vec<u8> {
        ImageTensor::filled(3, side, side, ColorSpace::Rgb, 0.5).to_png_bytes().unwrap()
    }

    fn raw(task: &str) -> RawRequest {
        RawRequest {
            task: Some(task.into()),
            image: Some(png(8)),
            prompt: Some("a cat".into()),
            ..Default::default()
        }
    }

    #[test]
    fn every_field_is_named_on_failure() {
        let field = |r: RawRequest| RestoreRequest::parse(&r).unwrap_err().field;
        assert_eq!(field(RawRequest::default()), "task");
        assert_eq!(field(RawRequest { task: Some("deblur".into()), ..raw("sr") }), "task");
        assert_eq!(field(RawRequest { image: None, ..raw("sr") }), "image");
        assert_eq!(field(RawRequest { image: Some(b"xx".to_vec()), ..raw("sr") }), "image");
        assert_eq!(field(raw("inpaint")), "mask");
        assert_eq!(field(raw("sr")), "sr_factor");
        assert_eq!(field(RawRequest { sr_factor: Some("3".into()), ..raw("sr") }), "sr_factor");
        assert_eq!(field(RawRequest { sr_factor: Some("x".into()), ..raw("sr") }), "sr_factor");
        assert_eq!(field(RawRequest { sr_factor: Some("4".into()), ..raw("colorize") }), "sr_factor");
        assert_eq!(field(RawRequest { beta: Some("1.5".into()), ..raw("colorize") }), "beta");
        assert_eq!(field(RawRequest { prompt: None, ..raw("colorize") }), "prompt");
        assert_eq!(field(RawRequest { seed: Some("-1".into()), ..raw("colorize") }), "seed");
        assert_eq!(field(RawRequest { mask: Some(b"xx".to_vec()), ..raw("inpaint") }), "mask");
    }

    #[test]
    fn beta_zero_needs_no_prompt() {
        let r = RestoreRequest::parse(&RawRequest {
            prompt: None,
            beta: Some("0".into()),
            ..raw("colorize")
        })
        .unwrap();
        assert_eq!(r.beta, 0.0);
        assert_eq!(r.seed, 0);
    }

    #[test]
    fn sweep_lists() {
        assert_eq!(parse_betas("0, 0.5,1", Some("x")).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(parse_betas("[0.3]", Some("x")).unwrap(), vec![0.3]);
        assert_eq!(parse_betas("0", None).unwrap(), vec![0.0]);
        assert!(parse_betas("", Some("x")).is_err());
        assert!(parse_betas("0.5,0.2", Some("x")).is_err());
        assert!(parse_betas("0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9", Some("x")).is_err());
        assert_eq!(parse_betas("0,1", None).unwrap_err().field, "prompt");
    }
}
