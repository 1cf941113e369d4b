//! Historical data: LOBSTER files, normalization and conditioning windows.

pub mod boxcox;
pub mod features;
pub mod lobster;
pub mod scaler;

pub use boxcox::{boxcox, fit_boxcox, inverse_boxcox, BoxCoxError, BoxCoxParam};
pub use features::{
    annotate_session, build_feature_window, reconstruct_orders, AnnotatedOrder, BookFeatures, FeatureError,
    FeatureWindow, QuoteTracker, HISTORY_LEN,
};
pub use lobster::{parse_lobster, LobsterBookRow, LobsterError, LobsterMessage, LobsterSession, MessageType};
pub use scaler::{FeatureScaler, FeatureScalers, MinMaxScaler, ScalerError, FEATURE_NAMES, NUM_FEATURES};
