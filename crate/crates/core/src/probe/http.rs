use std::future::Future;
use std::time::Duration;

use reqwest::{redirect, Client};

use super::{Transport, TransportError};
use crate::reservoir::StreamCandidate;

/// Probes a candidate's locator with a `HEAD` request. Any 2xx or 3xx status
/// counts as viable; redirects are not followed and nothing is retried.
#[derive(Debug, Clone)]
pub struct HttpTransport {
    client: Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self, TransportError> {
        let client = Client::builder()
            .redirect(redirect::Policy::none())
            .timeout(timeout)
            .build()
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn probe(&self, candidate: &StreamCandidate) -> impl Future<Output = Result<bool, TransportError>> + Send {
        let request = self.client.head(&candidate.locator);
        async move {
            let response = request.send().await.map_err(|e| TransportError(e.to_string()))?;
            let status = response.status();
            Ok(status.is_success() || status.is_redirection())
        }
    }
}
