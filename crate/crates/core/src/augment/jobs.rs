//! Remote fine-tuning through the OpenAI-compatible files and jobs endpoints.

use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::modelgate::{
    Body, GatewayError, HttpClient, HttpRequest, HttpTransport, Method, RetryPolicy, Transport,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", content = "detail", rename_all = "snake_case")]
pub enum JobStatus {
    Queued,
    Running,
    Succeeded(String),
    Failed(String),
}

pub struct FinetuneClient {
    endpoint: String,
    http: HttpClient,
}

impl FinetuneClient {
    pub fn new(
        endpoint: impl Into<String>,
        auth_ref: Option<String>,
    ) -> Result<Self, GatewayError> {
        let transport =
            HttpTransport::new(Duration::from_secs(300)).map_err(|e| GatewayError::Config(e.0))?;
        Ok(Self::with_transport(
            endpoint,
            auth_ref,
            Arc::new(transport),
            RetryPolicy::default(),
        ))
    }

    pub fn with_transport(
        endpoint: impl Into<String>,
        auth_ref: Option<String>,
        transport: Arc<dyn Transport>,
        retry: RetryPolicy,
    ) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            http: HttpClient::new(transport, retry, 1, auth_ref),
        }
    }

    /// Uploads `training_file` and creates a job; returns the job id.
    pub fn submit(&self, training_file: &Path, model_name: &str) -> Result<String, GatewayError> {
        let bytes = std::fs::read(training_file)?;
        let file_name = training_file
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "train.jsonl".into());
        let upload = self.http.send(HttpRequest {
            method: Method::Post,
            url: format!("{}/files", self.endpoint),
            bearer: None,
            body: Body::Multipart {
                fields: vec![("purpose".into(), "fine-tune".into())],
                file_field: "file".into(),
                file_name,
                file: bytes,
            },
        })?;
        let file_id = string_field(&parse(&upload.body)?, "id")?;

        let created = self.http.send(HttpRequest {
            method: Method::Post,
            url: format!("{}/fine_tuning/jobs", self.endpoint),
            bearer: None,
            body: Body::Json(json!({"training_file": file_id, "model": model_name})),
        })?;
        string_field(&parse(&created.body)?, "id")
    }

    pub fn poll(&self, job_id: &str) -> Result<JobStatus, GatewayError> {
        let response = self.http.send(HttpRequest {
            method: Method::Get,
            url: format!("{}/fine_tuning/jobs/{job_id}", self.endpoint),
            bearer: None,
            body: Body::Empty,
        });
        let job = match response {
            Ok(r) => parse(&r.body)?,
            Err(GatewayError::Http { status: 404, .. }) => {
                return Ok(JobStatus::Failed("not_found".into()))
            }
            Err(e) => return Err(e),
        };
        let status = string_field(&job, "status")?;
        Ok(match status.as_str() {
            "validating_files" | "queued" | "pending" => JobStatus::Queued,
            "running" => JobStatus::Running,
            "succeeded" => JobStatus::Succeeded(
                job.get("fine_tuned_model")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string(),
            ),
            _ => JobStatus::Failed(
                job.pointer("/error/message")
                    .and_then(Value::as_str)
                    .unwrap_or(&status)
                    .to_string(),
            ),
        })
    }
}

fn parse(body: &[u8]) -> Result<Value, GatewayError> {
    serde_json::from_slice(body).map_err(|e| GatewayError::Protocol(e.to_string()))
}

fn string_field(v: &Value, key: &str) -> Result<String, GatewayError> {
    v.get(key)
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| GatewayError::Protocol(format!("response has no string {key:?}")))
}
