//! Blocking JSON-over-HTTP plumbing shared by the remote providers.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::de::DeserializeOwned;
use serde::Serialize;

/// Counting semaphore bounding in-flight requests.
pub(crate) struct InFlight {
    permits: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct Permit<'a>(&'a InFlight);

impl InFlight {
    pub(crate) fn new(limit: usize) -> Self {
        Self {
            permits: Mutex::new(limit.max(1)),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> Permit<'_> {
        let mut n = self.permits.lock().unwrap_or_else(|e| e.into_inner());
        while *n == 0 {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.permits.lock().unwrap_or_else(|e| e.into_inner());
        *n += 1;
        self.0.freed.notify_one();
    }
}

/// Spaces calls at least `1 / rps` seconds apart.
pub(crate) struct RateLimiter {
    interval: Duration,
    next: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub(crate) fn per_second(rps: f64) -> Self {
        let interval = if rps > 0.0 && rps.is_finite() {
            Duration::from_secs_f64(1.0 / rps)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            next: Mutex::new(None),
        }
    }

    pub(crate) fn wait(&self) {
        if self.interval.is_zero() {
            return;
        }
        let sleep_until = {
            let mut next = self.next.lock().unwrap_or_else(|e| e.into_inner());
            let now = Instant::now();
            let slot = next.map_or(now, |t| t.max(now));
            *next = Some(slot + self.interval);
            slot
        };
        let now = Instant::now();
        if sleep_until > now {
            thread::sleep(sleep_until - now);
        }
    }
}

#[derive(Debug)]
pub(crate) enum CallError {
    /// Connection failure, timeout, or non-2xx status.
    Transport(String),
    /// 2xx response whose body did not decode.
    Body(String),
}

pub(crate) struct JsonClient {
    agent: ureq::Agent,
    max_retries: usize,
    in_flight: InFlight,
}

impl JsonClient {
    pub(crate) fn new(timeout: Duration, max_retries: usize, max_in_flight: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        Self {
            agent,
            max_retries,
            in_flight: InFlight::new(max_in_flight),
        }
    }

    /// POSTs `body` and decodes the reply, retrying transport failures.
    pub(crate) fn post<B: Serialize, R: DeserializeOwned>(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &B,
    ) -> Result<R, CallError> {
        let mut last = CallError::Transport("no attempt made".into());
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                thread::sleep(Duration::from_millis(50 * (1 << attempt.min(6)) as u64));
            }
            let _permit = self.in_flight.acquire();
            let mut req = self.agent.post(url);
            if let Some(key) = bearer {
                req = req.header("Authorization", &format!("Bearer {key}"));
            }
            match req.send_json(body) {
                Ok(mut resp) => {
                    return resp
                        .body_mut()
                        .read_json::<R>()
                        .map_err(|e| CallError::Body(e.to_string()));
                }
                Err(e) => {
                    log::warn!("POST {url} attempt {} failed: {e}", attempt + 1);
                    last = CallError::Transport(e.to_string());
                }
            }
        }
        Err(last)
    }
}
