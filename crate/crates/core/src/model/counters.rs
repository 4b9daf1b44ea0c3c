use std::sync::atomic::{AtomicU64, Ordering};

/// Forward-pass counters used to check decoding cost independently of
/// wall-clock time. Cloning a model starts a fresh set of counters.
#[derive(Debug, Default)]
pub struct CallCounters {
    encoder: AtomicU64,
    decoder: AtomicU64,
}

impl Clone for CallCounters {
    fn clone(&self) -> Self {
        Self::default()
    }
}

impl CallCounters {
    pub(crate) fn bump_encoder(&self) {
        self.encoder.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn bump_decoder(&self) {
        self.decoder.fetch_add(1, Ordering::Relaxed);
    }

    pub fn encoder_calls(&self) -> u64 {
        self.encoder.load(Ordering::Relaxed)
    }

    pub fn decoder_calls(&self) -> u64 {
        self.decoder.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.encoder.store(0, Ordering::Relaxed);
        self.decoder.store(0, Ordering::Relaxed);
    }
}
