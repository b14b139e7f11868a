use std::sync::Arc;
use std::thread;
use std::time::Duration;

use rand::Rng;

use super::{BackendError, ChatBackend, ChatMessage, GenerationParams};

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    /// Total attempts including the first; at least 1.
    pub max_attempts: u32,
    pub base_delay: Duration,
    pub max_delay: Duration,
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay: Duration::from_millis(500),
            max_delay: Duration::from_secs(8),
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Delay before attempt `attempt + 1`, where `attempt` counts from 1.
    pub fn delay(&self, attempt: u32) -> Duration {
        let exp = self
            .base_delay
            .saturating_mul(1u32.checked_shl(attempt.saturating_sub(1)).unwrap_or(u32::MAX));
        let capped = exp.min(self.max_delay);
        if self.jitter && !capped.is_zero() {
            // Equal jitter: half fixed, half random.
            let half = capped / 2;
            half + rand::rng().random_range(Duration::ZERO..=half)
        } else {
            capped
        }
    }
}

type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Retries transient failures of an inner backend with exponential backoff.
pub struct Retrying<B> {
    inner: B,
    policy: RetryPolicy,
    sleep: Sleeper,
}

impl<B: ChatBackend> Retrying<B> {
    pub fn new(inner: B, policy: RetryPolicy) -> Self {
        Self::with_sleeper(inner, policy, Arc::new(thread::sleep))
    }

    pub fn with_sleeper(inner: B, policy: RetryPolicy, sleep: Sleeper) -> Self {
        Self {
            inner,
            policy: RetryPolicy {
                max_attempts: policy.max_attempts.max(1),
                ..policy
            },
            sleep,
        }
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for Retrying<B> {
    fn complete(
        &self,
        messages: &[ChatMessage],
        params: &GenerationParams,
    ) -> Result<String, BackendError> {
        let mut attempt = 1;
        loop {
            match self.inner.complete(messages, params) {
                Err(e) if e.is_transient() && attempt < self.policy.max_attempts => {
                    (self.sleep)(self.policy.delay(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::MockBackend;
    use std::sync::Mutex;

    fn msgs() -> Vec<ChatMessage> {
        vec![ChatMessage::system("sys"), ChatMessage::other("hello")]
    }

    fn recording(policy: RetryPolicy, mock: MockBackend) -> (Retrying<MockBackend>, Arc<Mutex<Vec<Duration>>>) {
        let slept = Arc::new(Mutex::new(Vec::new()));
        let log = slept.clone();
        let r = Retrying::with_sleeper(mock, policy, Arc::new(move |d| log.lock().unwrap().push(d)));
        (r, slept)
    }

    #[test]
    fn recovers_after_transient_failures() {
        let mock = MockBackend::with_outcomes([
            Err(BackendError::Transport("reset".into())),
            Err(BackendError::Status { status: 502, body: String::new() }),
            Ok("fine".into()),
        ]);
        let (r, slept) = recording(RetryPolicy::default(), mock);
        assert_eq!(r.complete(&msgs(), &GenerationParams::default()).unwrap(), "fine");
        assert_eq!(r.inner().calls().len(), 3);
        assert_eq!(slept.lock().unwrap().len(), 2);
    }

    #[test]
    fn malformed_request_is_not_retried() {
        let mock = MockBackend::with_outcomes([
            Err(BackendError::Status { status: 400, body: "bad".into() }),
            Ok("unused".into()),
        ]);
        let (r, slept) = recording(RetryPolicy::default(), mock);
        assert!(matches!(
            r.complete(&msgs(), &GenerationParams::default()),
            Err(BackendError::Status { status: 400, .. })
        ));
        assert_eq!(r.inner().calls().len(), 1);
        assert!(slept.lock().unwrap().is_empty());
    }

    #[test]
    fn gives_up_after_max_attempts() {
        let mock = MockBackend::with_outcomes((0..5).map(|_| Err(BackendError::RateLimited)));
        let (r, _) = recording(RetryPolicy::default(), mock);
        assert_eq!(
            r.complete(&msgs(), &GenerationParams::default()),
            Err(BackendError::RateLimited)
        );
        assert_eq!(r.inner().calls().len(), 3);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let p = RetryPolicy {
            jitter: false,
            ..Default::default()
        };
        assert_eq!(p.delay(1), Duration::from_millis(500));
        assert_eq!(p.delay(2), Duration::from_millis(1000));
        assert_eq!(p.delay(5), Duration::from_secs(8));
        assert_eq!(p.delay(64), Duration::from_secs(8));
        let j = RetryPolicy::default();
        for attempt in 1..6 {
            let d = j.delay(attempt);
            let cap = p.delay(attempt);
            assert!(d >= cap / 2 && d <= cap, "{d:?} vs {cap:?}");
        }
    }
}
