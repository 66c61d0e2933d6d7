//! Preprocessing, label encoding, and dataset persistence.

mod encoded;
mod image;
mod labels;
mod preprocess;
mod store;

pub use encoded::EncodedSet;
pub use image::{ColorImage, GrayImage};
pub use labels::{argmax, decode_prediction, encode_label, LabelEncoding};
pub use preprocess::{denoise_median3, normalize, resize_bilinear, to_grayscale, Preprocess};
pub use store::{
    image_file_name, load_dataset, save_dataset, Dataset, MANIFEST_FILE, MANIFEST_HEADER,
    SIDECAR_FILE,
};
