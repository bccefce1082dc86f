//! HTTP backend speaking the OpenAI-style chat-completions protocol.
//!
//! The API key comes from `GRONAV_VLM_KEY`. Endpoint and model default to a
//! public service and can be overridden per scenario.

use std::time::Duration;

use base64::Engine;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::global::{MarkedAerialImage, NavigationObjective};
use crate::reasoning::{parse_label_reply, parse_tau_reply, parse_waypoints_reply, BackendKind, EstimateRequest, VlmBackend};
use crate::render;
use crate::world::{BackendParams, PatchDescriptor, TerrainClass, WorldGrid};

pub const KEY_VAR: &str = "GRONAV_VLM_KEY";
pub const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
pub const DEFAULT_MODEL: &str = "gpt-4o";

#[derive(Clone)]
pub struct RemoteBackend {
    agent: ureq::Agent,
    endpoint: String,
    model: String,
    key: String,
    grid: WorldGrid,
    classes: Vec<TerrainClass>,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(params: &BackendParams, key: String, grid: &WorldGrid, classes: &[TerrainClass]) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(params.timeout_s)))
            .build()
            .into();
        Self {
            agent,
            endpoint: params.endpoint.clone().unwrap_or_else(|| DEFAULT_ENDPOINT.into()),
            model: params.model.clone().unwrap_or_else(|| DEFAULT_MODEL.into()),
            key,
            grid: grid.clone(),
            classes: classes.to_vec(),
        }
    }

    pub fn from_env(params: &BackendParams, grid: &WorldGrid, classes: &[TerrainClass]) -> Result<Self> {
        let key = std::env::var(KEY_VAR)
            .map_err(|_| Error::Backend(format!("remote backend needs the {KEY_VAR} environment variable")))?;
        Ok(Self::new(params, key, grid, classes))
    }

    fn chat(&self, text: &str, png: Option<&[u8]>) -> Result<String> {
        let mut content = vec![json!({"type": "text", "text": text})];
        if let Some(bytes) = png {
            let b64 = base64::engine::general_purpose::STANDARD.encode(bytes);
            content.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        let body = json!({
            "model": self.model,
            "temperature": 0,
            "messages": [{"role": "user", "content": content}],
        });
        let mut resp = self
            .agent
            .post(&self.endpoint)
            .header("Authorization", &format!("Bearer {}", self.key))
            .send_json(&body)
            .map_err(|e| Error::Backend(format!("request failed: {e}")))?;
        let v: Value = resp
            .body_mut()
            .read_json()
            .map_err(|e| Error::Backend(format!("unreadable response: {e}")))?;
        v.pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| Error::Backend("response has no message content".into()))
    }
}

/// Solid swatch of the patch's mean colour, the visual cue sent for
/// zero-shot classification.
fn swatch(patch: &PatchDescriptor) -> Result<Vec<u8>> {
    let c = patch.mean_appearance.map(|v| v.round().clamp(0.0, 255.0) as u8);
    render::encode_png(&image::RgbImage::from_pixel(32, 32, image::Rgb(c)))
}

impl VlmBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn classify(&mut self, patch: &PatchDescriptor, classes: &[TerrainClass]) -> Result<String> {
        let names: Vec<&str> = classes.iter().map(|c| c.label.as_str()).collect();
        let text = format!(
            "The image shows a ground patch seen by a robot. Which terrain type is it? \
             Choose one of: {}. Reply with a fenced JSON object {{\"label\": \"...\"}}.",
            names.join(", ")
        );
        parse_label_reply(&self.chat(&text, Some(&swatch(patch)?))?)
    }

    fn estimate(&mut self, req: &EstimateRequest<'_>) -> Result<f64> {
        let text = req.prompt.render(req.pool, req.query, req.classes)?;
        parse_tau_reply(&self.chat(&text, None)?)
    }

    fn select_waypoints(&mut self, marked: &MarkedAerialImage, objective: &NavigationObjective) -> Result<Vec<usize>> {
        let png = render::encode_png(&render::marked_aerial(&self.grid, &self.classes, marked, 8))?;
        parse_waypoints_reply(&self.chat(&marked.describe(objective), Some(&png))?)
    }
}
