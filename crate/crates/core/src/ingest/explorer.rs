//! Opportunistic verified-source fetch from an explorer-style API, with a
//! client-side rate limit. Nothing here ever fails a batch: every problem
//! degrades to "no source" with a warning.

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde_json::Value;

use crate::model::Address;

/// Injectable time source so rate-limit behavior is testable without real
/// waiting. `now` is monotonic time since an arbitrary origin.
pub trait Clock: Send + Sync {
    fn now(&self) -> Duration;
    fn sleep(&self, duration: Duration);
}

pub struct SystemClock {
    base: Instant,
}

impl Default for SystemClock {
    fn default() -> Self {
        SystemClock {
            base: Instant::now(),
        }
    }
}

impl Clock for SystemClock {
    fn now(&self) -> Duration {
        self.base.elapsed()
    }

    fn sleep(&self, duration: Duration) {
        std::thread::sleep(duration);
    }
}

const WINDOW: Duration = Duration::from_secs(1);

/// Sliding-window limiter: at most ⌈rate⌉ grants in any one-second window.
pub struct RateLimiter {
    capacity: usize,
    grants: Mutex<Vec<Duration>>,
    clock: Arc<dyn Clock>,
}

impl RateLimiter {
    pub fn new(rate: f64) -> Self {
        RateLimiter::with_clock(rate, Arc::new(SystemClock::default()))
    }

    pub fn with_clock(rate: f64, clock: Arc<dyn Clock>) -> Self {
        RateLimiter {
            capacity: rate.ceil().max(1.0) as usize,
            grants: Mutex::new(Vec::new()),
            clock,
        }
    }

    /// Blocks until issuing one more request keeps the window within
    /// capacity.
    pub fn acquire(&self) {
        loop {
            let now = self.clock.now();
            let wait = {
                let mut grants = self.grants.lock().unwrap();
                grants.retain(|&t| t + WINDOW > now);
                if grants.len() < self.capacity {
                    grants.push(now);
                    return;
                }
                let oldest = grants.iter().min().copied().unwrap_or(now);
                (oldest + WINDOW).saturating_sub(now)
            };
            self.clock.sleep(wait.max(Duration::from_millis(1)));
        }
    }
}

pub struct ExplorerClient {
    api_base: String,
    api_key: String,
    limiter: RateLimiter,
    clock: Arc<dyn Clock>,
    attempts: usize,
    backoff: Duration,
    http_timeout: Duration,
}

impl ExplorerClient {
    pub fn new(api_base: &str, api_key: &str, rate: f64) -> Self {
        let clock: Arc<dyn Clock> = Arc::new(SystemClock::default());
        ExplorerClient {
            api_base: api_base.to_string(),
            api_key: api_key.to_string(),
            limiter: RateLimiter::with_clock(rate, Arc::clone(&clock)),
            clock,
            attempts: 3,
            backoff: Duration::from_secs(1),
            http_timeout: Duration::from_secs(30),
        }
    }

    /// Test hook: swap the time source (limiter included) and shrink the
    /// retry backoff.
    pub fn with_clock(mut self, clock: Arc<dyn Clock>, backoff: Duration) -> Self {
        self.limiter = RateLimiter::with_clock(self.limiter.capacity as f64, Arc::clone(&clock));
        self.clock = clock;
        self.backoff = backoff;
        self
    }

    /// Best-effort verified source. Retries transport-level trouble with
    /// exponential backoff; a definitive "not verified" answer is final.
    pub fn fetch_source(&self, address: Address) -> Option<String> {
        for attempt in 0..self.attempts {
            if attempt > 0 {
                self.clock.sleep(self.backoff * (1 << (attempt - 1)));
            }
            self.limiter.acquire();
            match self.try_fetch(address) {
                Ok(verdict) => return verdict,
                Err(problem) => {
                    log::warn!(
                        "source fetch for {} attempt {}/{}: {problem}",
                        address.to_text(),
                        attempt + 1,
                        self.attempts
                    );
                }
            }
        }
        None
    }

    fn try_fetch(&self, address: Address) -> Result<Option<String>, String> {
        let url = format!(
            "{}?module=contract&action=getsourcecode&address={}&apikey={}",
            self.api_base,
            address.to_text(),
            self.api_key
        );
        let client = reqwest::blocking::Client::builder()
            .timeout(self.http_timeout)
            .build()
            .map_err(|e| e.to_string())?;
        let response = client.get(&url).send().map_err(|e| e.to_string())?;
        let status = response.status();
        if !status.is_success() {
            return Err(format!("HTTP {status}"));
        }
        let body: Value = response.json().map_err(|e| format!("bad JSON: {e}"))?;
        let source = body
            .get("result")
            .and_then(|r| r.as_array())
            .and_then(|items| items.first())
            .and_then(|item| item.get("SourceCode"))
            .and_then(|s| s.as_str())
            .unwrap_or("");
        Ok((!source.trim().is_empty()).then(|| source.to_string()))
    }
}
