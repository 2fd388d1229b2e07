use thiserror::Error;

/// Failure of a single translation request. The request text is kept so the
/// caller can report or retry it.
#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("engine {engine} failed on {request:?}: {message}")]
    Failed {
        engine: String,
        request: String,
        message: String,
    },
    #[error("no cached translation from {engine} for {request:?}")]
    CacheMiss { engine: String, request: String },
}

impl EngineError {
    pub fn request(&self) -> &str {
        match self {
            EngineError::Failed { request, .. } | EngineError::CacheMiss { request, .. } => request,
        }
    }
}

/// A machine-translation backend. `translate` must be a pure function of
/// its input for a given instance, so results can be cached.
pub trait TranslationEngine: Send + Sync {
    fn id(&self) -> &str;

    /// `(source language, target language)`.
    fn languages(&self) -> (&str, &str);

    fn translate(&self, text: &str) -> Result<String, EngineError>;
}

impl<E: TranslationEngine + ?Sized> TranslationEngine for Box<E> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn languages(&self) -> (&str, &str) {
        (**self).languages()
    }

    fn translate(&self, text: &str) -> Result<String, EngineError> {
        (**self).translate(text)
    }
}

impl<E: TranslationEngine + ?Sized> TranslationEngine for std::sync::Arc<E> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn languages(&self) -> (&str, &str) {
        (**self).languages()
    }

    fn translate(&self, text: &str) -> Result<String, EngineError> {
        (**self).translate(text)
    }
}
