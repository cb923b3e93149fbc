//! Appearance and shape discriminators and the training losses.

pub mod discriminator;
pub mod extractor;
pub mod loss;

pub use discriminator::{count_disc, DiscConfig, Discriminator, Discriminators};
pub use extractor::{FeatureExtractor, IdentityExtractor, RandomConvExtractor};
pub use loss::{combined_score, full_loss, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, GanMode, LossWeights};
